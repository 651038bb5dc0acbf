//! Penalized least-squares solvers.
//!
//! The main entry point `fit` minimizes
//! `(1/n) |y - X b|_2^2 + lambda |b|_1 + mu b'J'Jb`
//! by folding the quadratic penalty into the Gram matrix (the augmented-data
//! identity) and running accelerated proximal gradient (FISTA) with adaptive
//! restart. Convergence is certified by the subgradient (KKT) residual; exact
//! zeros come from the shrinkage step, never from post-hoc rounding.
//!
//! Convention: the squared loss carries the `1/n` factor, so the stationarity
//! threshold for a zero coefficient is `lambda/2` against `X'(y - Xb)/n`.
//! Software that drops the `1/n` or halves the penalty will disagree by
//! factors of `2` or `n`.
//!
//! Independent checks live alongside: `kkt_oracle_fit` enumerates all
//! `3^p` sign patterns for small `p`, and `tv_prox` gives the exact proximal
//! operator of the l1-fusion penalty used by the fused-lasso comparator.

use crate::error::{Error, Result};
use crate::numkernel::{dot, matvec_into, spectral_upper, DenseMatrix, DenseVector};
use crate::structure::{quad_penalty, StructureKind, StructureMatrix};

/// Penalty weights plus the structure family they refer to.
#[derive(Debug, Clone)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub mu: f64,
    pub structure: StructureKind,
}

impl PenaltyConfig {
    pub fn new(lambda: f64, mu: f64, structure: StructureKind) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::arg(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::arg(format!("mu must be finite and >= 0, got {mu}")));
        }
        Ok(PenaltyConfig { lambda, mu, structure })
    }
}

/// Iteration budget and convergence tolerance for the proximal solvers.
#[derive(Debug, Clone)]
pub struct SolverSettings {
    pub max_iter: usize,
    pub kkt_tol: f64,
    pub restart: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iter: 50_000,
            kkt_tol: 1e-8,
            restart: true,
        }
    }
}

impl SolverSettings {
    fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::arg("max_iter must be >= 1"));
        }
        if !(self.kkt_tol > 0.0) {
            return Err(Error::arg("kkt_tol must be > 0"));
        }
        Ok(())
    }
}

/// A converged (or best-effort) fit with its certificates.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta: DenseVector,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    /// Indices of the exactly non-zero coefficients, sorted.
    pub active_set: Vec<usize>,
    /// Objective value after every iteration (first entry is the start).
    pub objective_trace: Vec<f64>,
}

/// Scalar shrinkage `sign(z) * max(|z| - t, 0)`.
#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Penalized objective `(1/n)|y - X b|^2 + lambda |b|_1 + mu b'J'Jb`,
/// evaluated directly from the raw data.
pub fn objective(
    beta: &DenseVector,
    x: &DenseMatrix,
    y: &DenseVector,
    cfg: &PenaltyConfig,
    s: &StructureMatrix,
) -> Result<f64> {
    if x.cols() != beta.len() {
        return Err(Error::dims("objective(beta length)", x.cols(), beta.len()));
    }
    if x.rows() != y.len() {
        return Err(Error::dims("objective(response length)", x.rows(), y.len()));
    }
    let n = x.rows() as f64;
    let mut rss = 0.0;
    for i in 0..x.rows() {
        let r = y.get(i) - dot(x.row(i), beta.as_slice());
        rss += r * r;
    }
    let mut val = rss / n + cfg.lambda * beta.norm_l1();
    if cfg.mu != 0.0 {
        val += cfg.mu * quad_penalty(beta, s)?;
    }
    Ok(val)
}

/// The problem reduced to its Gram form: minimizing
/// `y_sq - 2 c'b + b'Kb + penalty(b)` with `K = X'X/n + mu J'J` and
/// `c = X'y/n`. Equals the augmented-data least-squares criterion exactly.
#[derive(Debug, Clone)]
pub(crate) struct GramProblem {
    pub p: usize,
    pub k: Vec<f64>,
    pub c: Vec<f64>,
    pub y_sq_n: f64,
    /// `2 * lambda_max(K)`, slightly inflated: a valid gradient Lipschitz
    /// constant for the smooth part.
    pub lipschitz: f64,
}

impl GramProblem {
    pub fn new(x: &DenseMatrix, y: &DenseVector, mu: f64, jtilde: Option<&DenseMatrix>) -> Result<Self> {
        let n = x.rows();
        let p = x.cols();
        if y.len() != n {
            return Err(Error::dims("GramProblem(response length)", n, y.len()));
        }
        let nf = n as f64;
        let mut k = x.gram_scaled(nf).entries().to_vec();
        if mu != 0.0 {
            let jt = jtilde.ok_or_else(|| Error::arg("mu > 0 requires a structure matrix"))?;
            if jt.rows() != p || jt.cols() != p {
                return Err(Error::dims("GramProblem(structure size)", format!("{p}x{p}"), format!("{}x{}", jt.rows(), jt.cols())));
            }
            for (kv, jv) in k.iter_mut().zip(jt.entries()) {
                *kv += mu * jv;
            }
        }
        let mut c = vec![0.0; p];
        for i in 0..n {
            let yi = y.get(i);
            if yi == 0.0 {
                continue;
            }
            for (cj, xij) in c.iter_mut().zip(x.row(i)) {
                *cj += yi * xij;
            }
        }
        for cj in c.iter_mut() {
            *cj /= nf;
        }
        let y_sq_n = y.dot(y) / nf;
        let lipschitz = 2.0 * spectral_upper(&k, p) * (1.0 + 1e-7);
        Ok(GramProblem { p, k, c, y_sq_n, lipschitz })
    }

    #[inline]
    fn smooth_value(&self, b: &[f64], kb: &[f64]) -> f64 {
        self.y_sq_n - 2.0 * dot(&self.c, b) + dot(b, kb)
    }
}

/// Proximal step and optimality residual of the non-smooth part.
pub(crate) trait ProxPenalty {
    /// In-place proximal map of `step * penalty` at `v`.
    fn apply(&self, v: &mut [f64], step: f64);
    /// Penalty value at `b`.
    fn value(&self, b: &[f64]) -> f64;
    /// Optimality residual at `b` given the smooth gradient `g` and `step`.
    fn residual(&self, b: &[f64], g: &[f64], step: f64) -> f64;
}

pub(crate) struct L1Prox {
    pub lambda: f64,
}

impl ProxPenalty for L1Prox {
    fn apply(&self, v: &mut [f64], step: f64) {
        let t = step * self.lambda;
        for x in v.iter_mut() {
            *x = soft_threshold(*x, t);
        }
    }

    fn value(&self, b: &[f64]) -> f64 {
        self.lambda * b.iter().map(|x| x.abs()).sum::<f64>()
    }

    /// Subgradient violation: `|g_j + lambda*sign(b_j)|` on the active set,
    /// `max(|g_j| - lambda, 0)` off it.
    fn residual(&self, b: &[f64], g: &[f64], _step: f64) -> f64 {
        let mut worst = 0.0_f64;
        for (bj, gj) in b.iter().zip(g) {
            let r = if *bj != 0.0 {
                (gj + self.lambda * bj.signum()).abs()
            } else {
                (gj.abs() - self.lambda).max(0.0)
            };
            worst = worst.max(r);
        }
        worst
    }
}

/// l1 plus l1-fusion penalty; the proximal map is the exact composition
/// "total-variation prox, then soft threshold".
pub(crate) struct FusedProx {
    pub lambda: f64,
    pub gamma: f64,
}

impl ProxPenalty for FusedProx {
    fn apply(&self, v: &mut [f64], step: f64) {
        if self.gamma > 0.0 {
            let tv = tv_prox_slice(v, step * self.gamma);
            v.copy_from_slice(&tv);
        }
        let t = step * self.lambda;
        for x in v.iter_mut() {
            *x = soft_threshold(*x, t);
        }
    }

    fn value(&self, b: &[f64]) -> f64 {
        let l1: f64 = b.iter().map(|x| x.abs()).sum();
        let tv: f64 = b.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        self.lambda * l1 + self.gamma * tv
    }

    /// Norm of the proximal-gradient fixed-point mapping
    /// `(b - prox(b - step*g)) / step`.
    fn residual(&self, b: &[f64], g: &[f64], step: f64) -> f64 {
        let mut v: Vec<f64> = b.iter().zip(g).map(|(bj, gj)| bj - step * gj).collect();
        self.apply(&mut v, step);
        b.iter()
            .zip(&v)
            .fold(0.0_f64, |m, (bj, tj)| m.max((bj - tj).abs() / step))
    }
}

pub(crate) struct FistaOutcome {
    pub beta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    pub trace: Vec<f64>,
}

/// FISTA with a fixed `1/L` step and restart-on-increase: when the
/// accelerated step raises the objective, the iterate is recomputed as a
/// plain proximal step from the previous point (which cannot increase it)
/// and the momentum is reset. The recorded trace is therefore non-increasing
/// whenever `restart` is on.
pub(crate) fn fista(
    gram: &GramProblem,
    prox: &dyn ProxPenalty,
    settings: &SolverSettings,
    init: Option<&[f64]>,
    collect_trace: bool,
) -> FistaOutcome {
    let p = gram.p;

    // Degenerate smooth part (K = 0 implies c = 0): the zero vector is a
    // minimizer of the remaining penalty.
    if gram.lipschitz <= f64::MIN_POSITIVE {
        let x = vec![0.0; p];
        let g = vec![0.0; p];
        let kkt = prox.residual(&x, &g, 1.0);
        let obj = gram.y_sq_n + prox.value(&x);
        return FistaOutcome {
            beta: x,
            iterations: 0,
            converged: kkt <= settings.kkt_tol,
            kkt_residual: kkt,
            trace: vec![obj],
        };
    }

    let mut x: Vec<f64> = match init {
        Some(b) => b.to_vec(),
        None => vec![0.0; p],
    };

    let step = 1.0 / gram.lipschitz;
    let mut kx = vec![0.0; p];
    matvec_into(&gram.k, p, p, &x, &mut kx);
    let mut obj_x = gram.smooth_value(&x, &kx) + prox.value(&x);

    let mut g = vec![0.0; p];
    for j in 0..p {
        g[j] = 2.0 * (kx[j] - gram.c[j]);
    }
    let mut kkt = prox.residual(&x, &g, step);

    let mut trace = Vec::new();
    if collect_trace {
        trace.push(obj_x);
    }
    if kkt <= settings.kkt_tol {
        return FistaOutcome {
            beta: x,
            iterations: 0,
            converged: true,
            kkt_residual: kkt,
            trace,
        };
    }

    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut best_obj = obj_x;
    let mut best_x = x.clone();
    let mut converged = false;
    let mut iterations = 0;

    let mut ky = vec![0.0; p];
    let mut xn = vec![0.0; p];

    for iter in 1..=settings.max_iter {
        iterations = iter;
        matvec_into(&gram.k, p, p, &y, &mut ky);
        for j in 0..p {
            xn[j] = y[j] - step * 2.0 * (ky[j] - gram.c[j]);
        }
        prox.apply(&mut xn, step);
        matvec_into(&gram.k, p, p, &xn, &mut kx);
        let mut obj_n = gram.smooth_value(&xn, &kx) + prox.value(&xn);

        if settings.restart && obj_n > obj_x + 1e-12 * obj_x.abs().max(1.0) {
            // momentum overshoot: plain prox step from x, reset momentum
            matvec_into(&gram.k, p, p, &x, &mut ky);
            for j in 0..p {
                xn[j] = x[j] - step * 2.0 * (ky[j] - gram.c[j]);
            }
            prox.apply(&mut xn, step);
            matvec_into(&gram.k, p, p, &xn, &mut kx);
            obj_n = gram.smooth_value(&xn, &kx) + prox.value(&xn);
            t = 1.0;
        }

        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_new;
        for j in 0..p {
            y[j] = xn[j] + momentum * (xn[j] - x[j]);
        }
        x.copy_from_slice(&xn);
        obj_x = obj_n;
        t = t_new;
        if collect_trace {
            trace.push(obj_x);
        }
        if obj_x < best_obj {
            best_obj = obj_x;
            best_x.copy_from_slice(&x);
        }

        for j in 0..p {
            g[j] = 2.0 * (kx[j] - gram.c[j]);
        }
        kkt = prox.residual(&x, &g, step);
        if kkt <= settings.kkt_tol {
            converged = true;
            break;
        }
    }

    if !converged && best_obj < obj_x {
        // report the best iterate seen, with its own residual
        matvec_into(&gram.k, p, p, &best_x, &mut kx);
        for j in 0..p {
            g[j] = 2.0 * (kx[j] - gram.c[j]);
        }
        kkt = prox.residual(&best_x, &g, step);
        x = best_x;
    }

    FistaOutcome {
        beta: x,
        iterations,
        converged,
        kkt_residual: kkt,
        trace,
    }
}

fn active_set_of(beta: &[f64]) -> Vec<usize> {
    beta.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Fits the quadratic-penalized l1 estimator.
pub fn fit(
    x: &DenseMatrix,
    y: &DenseVector,
    cfg: &PenaltyConfig,
    s: &StructureMatrix,
    settings: &SolverSettings,
) -> Result<FitResult> {
    fit_warm(x, y, cfg, s, settings, None)
}

/// `fit` with an explicit starting point (used for warm starts along grids).
pub fn fit_warm(
    x: &DenseMatrix,
    y: &DenseVector,
    cfg: &PenaltyConfig,
    s: &StructureMatrix,
    settings: &SolverSettings,
    init: Option<&DenseVector>,
) -> Result<FitResult> {
    settings.validate()?;
    if x.cols() != s.p() {
        return Err(Error::dims("fit(design columns)", s.p(), x.cols()));
    }
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::arg("fit needs n >= 1 and p >= 1"));
    }
    if cfg.structure.name() != s.kind.name() {
        return Err(Error::arg(format!(
            "penalty config structure ({}) does not match the built structure ({})",
            cfg.structure.name(),
            s.kind.name()
        )));
    }
    let gram = GramProblem::new(x, y, cfg.mu, Some(&s.jtilde))?;
    let prox = L1Prox { lambda: cfg.lambda };
    let out = fista(&gram, &prox, settings, init.map(|v| v.as_slice()), true);
    let beta = DenseVector::new(out.beta)?;
    let objective_value = objective(&beta, x, y, cfg, s)?;
    Ok(FitResult {
        active_set: active_set_of(beta.as_slice()),
        beta,
        objective: objective_value,
        iterations: out.iterations,
        converged: out.converged,
        kkt_residual: out.kkt_residual,
        objective_trace: out.trace,
    })
}

/// An enumeration-certified optimum for small `p`.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub beta: DenseVector,
    /// More than one sign pattern certified an optimum (non-unique minimizer);
    /// the returned vector is the certified solution with smallest l1 norm.
    pub non_unique: bool,
}

/// Independent solver: enumerates every sign pattern in `{-1,0,+1}^p`,
/// solves the stationarity system on the corresponding support, and keeps the
/// patterns whose solution is sign-consistent and satisfies the off-support
/// subgradient bound. Exponential in `p`; capped at `p <= 12`.
pub fn kkt_oracle_fit(
    x: &DenseMatrix,
    y: &DenseVector,
    cfg: &PenaltyConfig,
    s: &StructureMatrix,
) -> Result<OracleSolution> {
    let p = x.cols();
    if p > 12 {
        return Err(Error::arg(format!("kkt_oracle_fit is limited to p <= 12, got {p}")));
    }
    if x.cols() != s.p() {
        return Err(Error::dims("kkt_oracle_fit(design columns)", s.p(), x.cols()));
    }
    let gram = GramProblem::new(x, y, cfg.mu, Some(&s.jtilde))?;
    let lambda = cfg.lambda;
    let half = lambda / 2.0;
    let scale = gram
        .c
        .iter()
        .fold(lambda.max(1.0), |m, v| m.max(2.0 * v.abs()));
    let tol = 1e-9 * scale;

    let mut verified: Vec<(Vec<f64>, f64)> = Vec::new();
    let patterns = 3usize.pow(p as u32);
    let mut kb = vec![0.0; p];
    for code in 0..patterns {
        let mut signs = vec![0i8; p];
        let mut rem = code;
        for sj in signs.iter_mut() {
            *sj = match rem % 3 {
                0 => 0,
                1 => 1,
                _ => -1,
            };
            rem /= 3;
        }
        let support: Vec<usize> = (0..p).filter(|&j| signs[j] != 0).collect();
        let mut beta = vec![0.0; p];
        if !support.is_empty() {
            let k_sub = DenseMatrix::from_fn(support.len(), support.len(), |a, b| {
                gram.k[support[a] * p + support[b]]
            })?;
            let rhs = DenseVector::new(
                support
                    .iter()
                    .map(|&j| gram.c[j] - half * f64::from(signs[j]))
                    .collect(),
            )?;
            let sol = match crate::numkernel::solve_spd(&k_sub, &rhs) {
                Ok(sol) => sol,
                Err(_) => continue, // singular restriction: cannot certify
            };
            let mut ok = true;
            for (idx, &j) in support.iter().enumerate() {
                let b = sol.get(idx);
                if !(b * f64::from(signs[j]) > 0.0) {
                    ok = false;
                    break;
                }
                beta[j] = b;
            }
            if !ok {
                continue;
            }
        }
        // off-support subgradient bound |2 (K b - c)_k| <= lambda
        matvec_into(&gram.k, p, p, &beta, &mut kb);
        let mut ok = true;
        for j in 0..p {
            if signs[j] == 0 {
                let g = 2.0 * (kb[j] - gram.c[j]);
                if g.abs() > lambda + tol {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            let l1: f64 = beta.iter().map(|v| v.abs()).sum();
            verified.push((beta, l1));
        }
    }

    if verified.is_empty() {
        return Err(Error::Degenerate);
    }
    verified.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite norms"));
    let best = verified[0].0.clone();
    let mut distinct = 1;
    for (other, _) in verified.iter().skip(1) {
        let diff = best
            .iter()
            .zip(other)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        if diff > 1e-8 * scale {
            distinct += 1;
        }
    }
    Ok(OracleSolution {
        beta: DenseVector::new(best)?,
        non_unique: distinct > 1,
    })
}

/// Exact proximal operator of `gamma * sum_j |v_j - v_{j-1}|`:
/// the taut-string solution computed by Condat's direct sweep.
pub fn tv_prox(v: &DenseVector, gamma: f64) -> Result<DenseVector> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::arg(format!("tv_prox weight must be finite and >= 0, got {gamma}")));
    }
    if gamma == 0.0 || v.len() <= 1 {
        return Ok(v.clone());
    }
    DenseVector::new(tv_prox_slice(v.as_slice(), gamma))
}

fn tv_prox_slice(input: &[f64], gamma: f64) -> Vec<f64> {
    let width = input.len();
    let mut output = vec![0.0; width];
    if width == 0 {
        return output;
    }
    if width == 1 || gamma == 0.0 {
        output.copy_from_slice(input);
        return output;
    }

    let lambda = gamma;
    let minlambda = -lambda;
    let twolambda = 2.0 * lambda;

    let mut k: usize = 0;
    let mut k0: usize = 0;
    let mut kminus: usize = 0;
    let mut kplus: usize = 0;
    let mut umin = lambda;
    let mut umax = minlambda;
    let mut vmin = input[0] - lambda;
    let mut vmax = input[0] + lambda;

    loop {
        while k == width - 1 {
            if umin < 0.0 {
                loop {
                    output[k0] = vmin;
                    k0 += 1;
                    if k0 > kminus {
                        break;
                    }
                }
                if k0 == width {
                    return output;
                }
                k = k0;
                kminus = k;
                vmin = input[k];
                umin = lambda;
                umax = vmin + lambda - vmax;
            } else if umax > 0.0 {
                loop {
                    output[k0] = vmax;
                    k0 += 1;
                    if k0 > kplus {
                        break;
                    }
                }
                if k0 == width {
                    return output;
                }
                k = k0;
                kplus = k;
                vmax = input[k];
                umax = minlambda;
                umin = vmax + minlambda - vmin;
            } else {
                vmin += umin / ((k - k0 + 1) as f64);
                loop {
                    output[k0] = vmin;
                    k0 += 1;
                    if k0 > k {
                        break;
                    }
                }
                return output;
            }
        }

        umin += input[k + 1] - vmin;
        if umin < minlambda {
            loop {
                output[k0] = vmin;
                k0 += 1;
                if k0 > kminus {
                    break;
                }
            }
            k = k0;
            kminus = k;
            kplus = k;
            vmin = input[k];
            vmax = vmin + twolambda;
            umin = lambda;
            umax = minlambda;
        } else {
            umax += input[k + 1] - vmax;
            if umax > lambda {
                loop {
                    output[k0] = vmax;
                    k0 += 1;
                    if k0 > kplus {
                        break;
                    }
                }
                k = k0;
                kminus = k;
                kplus = k;
                vmax = input[k];
                vmin = vmax - twolambda;
                umin = lambda;
                umax = minlambda;
            } else {
                k += 1;
                if umin >= lambda {
                    kminus = k;
                    vmin += (umin - lambda) / ((kminus - k0 + 1) as f64);
                    umin = lambda;
                }
                if umax <= minlambda {
                    kplus = k;
                    vmax += (umax + lambda) / ((kplus - k0 + 1) as f64);
                    umax = minlambda;
                }
            }
        }
    }
}

/// Fused-lasso comparator: minimizes
/// `(1/n)|y - Xb|^2 + lambda |b|_1 + mu_fuse * sum_j |b_j - b_{j-1}|`
/// by proximal gradient with the exact composed prox (TV then shrinkage).
/// The reported `kkt_residual` is the sup-norm of the proximal-gradient
/// fixed-point mapping.
pub fn fused_lasso_fit(
    x: &DenseMatrix,
    y: &DenseVector,
    lambda: f64,
    mu_fuse: f64,
    settings: &SolverSettings,
) -> Result<FitResult> {
    settings.validate()?;
    if !(lambda >= 0.0) || !(mu_fuse >= 0.0) {
        return Err(Error::arg("fused_lasso_fit needs lambda >= 0 and mu_fuse >= 0"));
    }
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::arg("fused_lasso_fit needs n >= 1 and p >= 1"));
    }
    let gram = GramProblem::new(x, y, 0.0, None)?;
    let prox = FusedProx { lambda, gamma: mu_fuse };
    let out = fista(&gram, &prox, settings, None, true);
    let beta = DenseVector::new(out.beta)?;
    let n = x.rows() as f64;
    let mut rss = 0.0;
    for i in 0..x.rows() {
        let r = y.get(i) - dot(x.row(i), beta.as_slice());
        rss += r * r;
    }
    let objective_value = rss / n + prox.value(beta.as_slice());
    Ok(FitResult {
        active_set: active_set_of(beta.as_slice()),
        beta,
        objective: objective_value,
        iterations: out.iterations,
        converged: out.converged,
        kkt_residual: out.kkt_residual,
        objective_trace: out.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::build_structure;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn v(xs: &[f64]) -> DenseVector {
        DenseVector::new(xs.to_vec()).unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DenseMatrix {
        DenseMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal)).unwrap()
    }

    fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DenseVector {
        DenseVector::new((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(1.0, 1.0), 0.0);
    }

    #[test]
    fn objective_at_zero_is_mean_square() {
        let x = DenseMatrix::identity(3);
        let y = v(&[1.0, 2.0, 2.0]);
        let s = build_structure(StructureKind::Lasso, 3).unwrap();
        let cfg = PenaltyConfig::new(0.7, 0.0, StructureKind::Lasso).unwrap();
        let val = objective(&DenseVector::zeros(3), &x, &y, &cfg, &s).unwrap();
        assert!((val - 3.0).abs() < 1e-15);
    }

    #[test]
    fn objective_zero_residual_at_exact_solution() {
        // invertible square design, lambda = mu = 0
        let x = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let beta = v(&[0.5, -1.0]);
        let y = crate::numkernel::matvec(&x, &beta).unwrap();
        let s = build_structure(StructureKind::Lasso, 2).unwrap();
        let cfg = PenaltyConfig::new(0.0, 0.0, StructureKind::Lasso).unwrap();
        let val = objective(&beta, &x, &y, &cfg, &s).unwrap();
        assert!(val.abs() < 1e-24);
    }

    #[test]
    fn null_solution_for_large_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_matrix(&mut rng, 12, 5);
        let y = random_vector(&mut rng, 12);
        // null-solution threshold: lambda/2 >= max |X_j'y| / n
        let n = 12.0;
        let mut lam_max = 0.0_f64;
        for j in 0..5 {
            let mut acc = 0.0;
            for i in 0..12 {
                acc += x.get(i, j) * y.get(i);
            }
            lam_max = lam_max.max(2.0 * acc.abs() / n);
        }
        let s = build_structure(StructureKind::SmoothLasso, 5).unwrap();
        let cfg = PenaltyConfig::new(lam_max * 1.01, 0.3, StructureKind::SmoothLasso).unwrap();
        let fitres = fit(&x, &y, &cfg, &s, &SolverSettings::default()).unwrap();
        assert!(fitres.converged);
        assert!(fitres.active_set.is_empty());
        assert!(fitres.beta.as_slice().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn mu_zero_matches_plain_lasso() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let x = random_matrix(&mut rng, 15, 6);
            let y = random_vector(&mut rng, 15);
            let sl = build_structure(StructureKind::SmoothLasso, 6).unwrap();
            let la = build_structure(StructureKind::Lasso, 6).unwrap();
            let cfg_sl = PenaltyConfig::new(0.3, 0.0, StructureKind::SmoothLasso).unwrap();
            let cfg_la = PenaltyConfig::new(0.3, 0.0, StructureKind::Lasso).unwrap();
            let st = SolverSettings::default();
            let a = fit(&x, &y, &cfg_sl, &sl, &st).unwrap();
            let b = fit(&x, &y, &cfg_la, &la, &st).unwrap();
            for (p, q) in a.beta.as_slice().iter().zip(b.beta.as_slice()) {
                assert!((p - q).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 20, 8);
        let y = random_vector(&mut rng, 20);
        let s = build_structure(StructureKind::ElasticNet, 8).unwrap();
        let cfg = PenaltyConfig::new(0.2, 0.1, StructureKind::ElasticNet).unwrap();
        let st = SolverSettings::default();
        let a = fit(&x, &y, &cfg, &s, &st).unwrap();
        let b = fit(&x, &y, &cfg, &s, &st).unwrap();
        assert_eq!(a.beta.as_slice(), b.beta.as_slice());
        assert_eq!(a.iterations, b.iterations);
        assert!(a.objective.to_bits() == b.objective.to_bits());
    }

    #[test]
    fn descent_trace_is_monotone_with_restart() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let x = random_matrix(&mut rng, 10, 12);
            let y = random_vector(&mut rng, 10);
            let s = build_structure(StructureKind::SmoothLasso, 12).unwrap();
            let cfg = PenaltyConfig::new(0.05, 0.02, StructureKind::SmoothLasso).unwrap();
            let f = fit(&x, &y, &cfg, &s, &SolverSettings::default()).unwrap();
            for w in f.objective_trace.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0),
                    "objective increased: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn converged_kkt_holds_when_recomputed_from_augmented_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let x = random_matrix(&mut rng, 9, 5);
        let y = random_vector(&mut rng, 9);
        let s = build_structure(StructureKind::SmoothLasso, 5).unwrap();
        let cfg = PenaltyConfig::new(0.15, 0.4, StructureKind::SmoothLasso).unwrap();
        let st = SolverSettings::default();
        let f = fit(&x, &y, &cfg, &s, &st).unwrap();
        assert!(f.converged);

        let aug = crate::structure::augment(&x, &y, &s, cfg.mu).unwrap();
        let n = aug.n_original as f64;
        let xb = crate::numkernel::matvec(&aug.xaug, &f.beta).unwrap();
        let p = 5;
        let mut g = vec![0.0; p];
        for j in 0..p {
            let mut acc = 0.0;
            for i in 0..aug.xaug.rows() {
                acc += aug.xaug.get(i, j) * (xb.get(i) - aug.yaug.get(i));
            }
            g[j] = 2.0 * acc / n;
        }
        let mut worst = 0.0_f64;
        for j in 0..p {
            let b = f.beta.get(j);
            let r = if b != 0.0 {
                (g[j] + cfg.lambda * b.signum()).abs()
            } else {
                (g[j].abs() - cfg.lambda).max(0.0)
            };
            worst = worst.max(r);
        }
        assert!(worst <= st.kkt_tol + 1e-12, "recomputed residual {worst}");
    }

    #[test]
    fn gram_lipschitz_dominates_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        for _ in 0..20 {
            let n = 4 + rng.random_range(0..10);
            let p = 2 + rng.random_range(0..8);
            let x = random_matrix(&mut rng, n, p);
            let y = random_vector(&mut rng, n);
            let mu = rng.random::<f64>();
            let s = build_structure(StructureKind::SmoothLasso, p).unwrap();
            let gram = GramProblem::new(&x, &y, mu, Some(&s.jtilde)).unwrap();
            let k = DenseMatrix::new(p, p, gram.k.clone()).unwrap();
            let top = crate::numkernel::sym_eigvals(&k).unwrap().get(p - 1);
            // the 1/L step is valid: L >= 2 * lambda_max(K)
            assert!(gram.lipschitz >= 2.0 * top * (1.0 - 1e-9), "{} < {}", gram.lipschitz, 2.0 * top);
            assert!(gram.lipschitz <= 2.0 * top * 1.01 + 1e-12);
        }
    }

    #[test]
    fn oracle_scalar_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let x = random_matrix(&mut rng, 8, 1);
            let y = random_vector(&mut rng, 8);
            let lambda = 0.3;
            let mu = 0.2;
            let s = build_structure(StructureKind::ElasticNet, 1).unwrap();
            let cfg = PenaltyConfig::new(lambda, mu, StructureKind::ElasticNet).unwrap();
            let sol = kkt_oracle_fit(&x, &y, &cfg, &s).unwrap();
            let n = 8.0;
            let xy: f64 = (0..8).map(|i| x.get(i, 0) * y.get(i)).sum::<f64>() / n;
            let xx: f64 = (0..8).map(|i| x.get(i, 0) * x.get(i, 0)).sum::<f64>() / n;
            let expected = soft_threshold(xy, lambda / 2.0) / (xx + mu);
            assert!((sol.beta.get(0) - expected).abs() <= 1e-10 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn oracle_zero_for_huge_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let x = random_matrix(&mut rng, 10, 3);
        let y = random_vector(&mut rng, 10);
        let s = build_structure(StructureKind::Lasso, 3).unwrap();
        let cfg = PenaltyConfig::new(1e6, 0.0, StructureKind::Lasso).unwrap();
        let sol = kkt_oracle_fit(&x, &y, &cfg, &s).unwrap();
        assert!(sol.beta.as_slice().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn oracle_flags_non_unique_solutions() {
        // duplicated column: the minimizer splits arbitrarily between them
        let x = DenseMatrix::from_rows(&[
            vec![1.0, 1.0],
            vec![-0.5, -0.5],
            vec![2.0, 2.0],
            vec![0.3, 0.3],
        ])
        .unwrap();
        let beta = v(&[1.0, 0.0]);
        let y = crate::numkernel::matvec(&x, &beta).unwrap();
        let s = build_structure(StructureKind::Lasso, 2).unwrap();
        let cfg = PenaltyConfig::new(0.2, 0.0, StructureKind::Lasso).unwrap();
        let sol = kkt_oracle_fit(&x, &y, &cfg, &s).unwrap();
        assert!(sol.non_unique);
    }

    #[test]
    fn oracle_rejects_large_p() {
        let x = DenseMatrix::zeros(3, 13);
        let y = v(&[0.0, 0.0, 0.0]);
        let s = build_structure(StructureKind::Lasso, 13).unwrap();
        let cfg = PenaltyConfig::new(1.0, 0.0, StructureKind::Lasso).unwrap();
        assert!(kkt_oracle_fit(&x, &y, &cfg, &s).is_err());
    }

    #[test]
    fn fit_agrees_with_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let st = SolverSettings {
            kkt_tol: 1e-10,
            ..Default::default()
        };
        for trial in 0..40 {
            let p = 2 + (trial % 5);
            let n = 6 + (trial % 7);
            let x = random_matrix(&mut rng, n, p);
            let y = random_vector(&mut rng, n);
            let lambda = 0.05 + rng.random::<f64>();
            let mu = if trial % 3 == 0 { 0.0 } else { 0.3 * rng.random::<f64>() };
            let s = build_structure(StructureKind::SmoothLasso, p).unwrap();
            let cfg = PenaltyConfig::new(lambda, mu, StructureKind::SmoothLasso).unwrap();
            let f = fit(&x, &y, &cfg, &s, &st).unwrap();
            let o = kkt_oracle_fit(&x, &y, &cfg, &s).unwrap();
            for (a, b) in f.beta.as_slice().iter().zip(o.beta.as_slice()) {
                assert!((a - b).abs() <= 1e-6, "trial {trial}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn tv_prox_identity_when_weight_zero() {
        let x = v(&[1.0, -2.0, 3.0]);
        let out = tv_prox(&x, 0.0).unwrap();
        assert_eq!(out.as_slice(), x.as_slice());
    }

    #[test]
    fn tv_prox_two_point_closed_form() {
        let out = tv_prox(&v(&[0.0, 2.0]), 0.5).unwrap();
        assert!((out.get(0) - 0.5).abs() < 1e-12);
        assert!((out.get(1) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn tv_prox_flattens_to_mean_for_huge_weight() {
        let data = v(&[1.0, 4.0, -2.0, 0.5, 7.0]);
        let mean = data.as_slice().iter().sum::<f64>() / 5.0;
        let out = tv_prox(&data, 1e6).unwrap();
        for &o in out.as_slice() {
            assert!((o - mean).abs() < 1e-9, "{o} vs {mean}");
        }
    }

    #[test]
    fn fused_fit_mu_zero_is_plain_lasso() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let x = random_matrix(&mut rng, 14, 5);
        let y = random_vector(&mut rng, 14);
        let st = SolverSettings {
            kkt_tol: 1e-10,
            ..Default::default()
        };
        let f = fused_lasso_fit(&x, &y, 0.25, 0.0, &st).unwrap();
        let s = build_structure(StructureKind::Lasso, 5).unwrap();
        let cfg = PenaltyConfig::new(0.25, 0.0, StructureKind::Lasso).unwrap();
        let g = fit(&x, &y, &cfg, &s, &st).unwrap();
        for (a, b) in f.beta.as_slice().iter().zip(g.beta.as_slice()) {
            assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn fused_fit_on_scaled_identity_is_tv_prox() {
        // X = c*I with lambda = 0: minimizing (c^2/n)|y/c - b|^2 + mu*TV(b)
        // matches tv_prox(y/c, gamma) with gamma = mu*n/(2 c^2).
        let c = 2.0;
        let n = 6;
        let x = DenseMatrix::from_fn(n, n, |i, j| if i == j { c } else { 0.0 }).unwrap();
        let y = v(&[1.0, 1.2, -0.3, -0.1, 2.0, 1.9]);
        let mu = 0.8;
        let st = SolverSettings {
            kkt_tol: 1e-12,
            ..Default::default()
        };
        let f = fused_lasso_fit(&x, &y, 0.0, mu, &st).unwrap();
        let target = DenseVector::new(y.as_slice().iter().map(|v| v / c).collect()).unwrap();
        let gamma = mu * (n as f64) / (2.0 * c * c);
        let expect = tv_prox(&target, gamma).unwrap();
        for (a, b) in f.beta.as_slice().iter().zip(expect.as_slice()) {
            assert!((a - b).abs() <= 1e-7, "{a} vs {b}");
        }
    }
}
