//! Synthetic experiment generators and the replicated comparison harness.
//!
//! Six named scenarios cover an unstructured sparse truth, grouped
//! correlated covariates, two smooth truths, and two high-dimensional
//! "bump" signals at gene-expression shapes. Designs are drawn row-wise
//! from `N(0, Psi)` and column-standardized; methods are compared under
//! theoretical, cross-validated, and error-minimizing tuning with paired
//! data across methods inside each replication.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, StudentT};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numkernel::{cholesky, matvec, DenseMatrix, DenseVector};
use crate::seeding::derive_seed;
use crate::solver::{
    fista, fused_lasso_fit, fit, FitResult, FusedProx, GramProblem, L1Prox, PenaltyConfig,
    SolverSettings,
};
use crate::structure::{build_structure, smoothness, StructureKind, StructureMatrix};
use crate::tuning::{
    cross_validate, cross_validate_fused, lambda_max, log_grid, theoretical_lambda, theoretical_mu,
    LambdaRule, MuRule,
};

/// The named synthetic scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Example {
    /// p = 8, n = 20; three spikes (3, 1.5 at the front, 2 at position 5);
    /// geometric design correlation `rho^|j-k|`.
    A,
    /// Fifteen coefficients equal to 3 in three tightly correlated groups of
    /// five (within-group correlation `1/1.01`), the rest independent noise
    /// covariates.
    B,
    /// Smooth decaying truth `(3 - j/5)^2` on the first 15 coordinates;
    /// design correlation `exp(-|j-k|)`.
    C,
    /// Smooth increasing truth `(4 + j/10)^2` on the first 40 coordinates;
    /// design correlation as in C.
    D,
    /// p = 1023 bump signal on the first 250 coordinates (surrogate for the
    /// gene-expression design: correlation `0.5^|j-k|`).
    PseudoReal1,
    /// p = 300 bump signal on the first 50 coordinates, same surrogate design.
    PseudoReal2,
}

impl Example {
    pub fn parse(name: &str) -> Result<Example> {
        match name.to_ascii_lowercase().as_str() {
            "a" => Ok(Example::A),
            "b" => Ok(Example::B),
            "c" => Ok(Example::C),
            "d" => Ok(Example::D),
            "pseudo_real_1" | "pseudoreal1" => Ok(Example::PseudoReal1),
            "pseudo_real_2" | "pseudoreal2" => Ok(Example::PseudoReal2),
            other => Err(Error::arg(format!("unknown example {other:?}"))),
        }
    }
}

/// A fully specified scenario instance.
#[derive(Debug, Clone)]
pub struct ExampleSpec {
    pub example: Example,
    pub p: usize,
    pub n: usize,
    pub sigma: f64,
    /// Design correlation decay, used by scenario A only.
    pub rho: Option<f64>,
    pub seed: u64,
}

impl ExampleSpec {
    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::arg("sigma must be > 0"));
        }
        if self.n < 1 {
            return Err(Error::arg("n must be >= 1"));
        }
        match self.example {
            Example::A => {
                if self.p != 8 || self.n != 20 {
                    return Err(Error::arg("scenario A fixes p = 8 and n = 20"));
                }
                match self.rho {
                    Some(r) if r > 0.0 && r < 1.0 => {}
                    _ => return Err(Error::arg("scenario A needs rho in (0,1)")),
                }
            }
            Example::B | Example::C => {
                if self.p < 15 {
                    return Err(Error::arg("scenarios B and C need p >= 15"));
                }
            }
            Example::D => {
                if self.p < 40 {
                    return Err(Error::arg("scenario D needs p >= 40"));
                }
            }
            Example::PseudoReal1 => {
                if self.p != 1023 {
                    return Err(Error::arg("pseudo-real scenario 1 fixes p = 1023"));
                }
            }
            Example::PseudoReal2 => {
                if self.p != 300 {
                    return Err(Error::arg("pseudo-real scenario 2 fixes p = 300"));
                }
            }
        }
        Ok(())
    }
}

/// The ground truth of a scenario: coefficients, support, population design
/// correlation, and the smoothness of the truth.
#[derive(Debug, Clone)]
pub struct TruthInstance {
    pub beta_star: DenseVector,
    pub astar: Vec<usize>,
    pub psi_true: DenseMatrix,
    pub alpha: f64,
}

fn bump(j: usize, center: f64, scale: f64) -> f64 {
    let t = (j as f64 - center) / scale;
    let denom = 1.0 - t * t;
    if denom <= 0.0 {
        0.0
    } else {
        10.0 * (-1.0 / denom).exp()
    }
}

/// Builds the exact truth of a scenario.
pub fn make_truth(spec: &ExampleSpec) -> Result<TruthInstance> {
    spec.validate()?;
    let p = spec.p;
    let mut beta = vec![0.0; p];
    let psi = match spec.example {
        Example::A => {
            beta[0] = 3.0;
            beta[1] = 1.5;
            beta[4] = 2.0;
            let rho = spec.rho.expect("validated");
            DenseMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()))?
        }
        Example::B => {
            for b in beta.iter_mut().take(15) {
                *b = 3.0;
            }
            // three groups of five with within-group correlation 1/1.01
            let w = 1.0 / 1.01;
            DenseMatrix::from_fn(p, p, |i, j| {
                if i == j {
                    1.0
                } else if i < 15 && j < 15 && i / 5 == j / 5 {
                    w
                } else {
                    0.0
                }
            })?
        }
        Example::C => {
            for (idx, b) in beta.iter_mut().take(15).enumerate() {
                let j = (idx + 1) as f64;
                let v = 3.0 - j / 5.0;
                *b = v * v;
            }
            DenseMatrix::from_fn(p, p, |i, j| (-((i as f64) - (j as f64)).abs()).exp())?
        }
        Example::D => {
            for (idx, b) in beta.iter_mut().take(40).enumerate() {
                let j = (idx + 1) as f64;
                let v = 4.0 + j / 10.0;
                *b = v * v;
            }
            DenseMatrix::from_fn(p, p, |i, j| (-((i as f64) - (j as f64)).abs()).exp())?
        }
        Example::PseudoReal1 => {
            for (idx, b) in beta.iter_mut().take(250).enumerate() {
                *b = bump(idx + 1, 125.0, 125.1);
            }
            DenseMatrix::from_fn(p, p, |i, j| 0.5_f64.powi((i as i32 - j as i32).abs()))?
        }
        Example::PseudoReal2 => {
            for (idx, b) in beta.iter_mut().take(50).enumerate() {
                *b = bump(idx + 1, 25.0, 25.1);
            }
            DenseMatrix::from_fn(p, p, |i, j| 0.5_f64.powi((i as i32 - j as i32).abs()))?
        }
    };
    let beta_star = DenseVector::new(beta)?;
    let astar: Vec<usize> = (0..p).filter(|&j| beta_star.get(j) != 0.0).collect();
    let alpha = smoothness(&beta_star)?;
    Ok(TruthInstance {
        beta_star,
        astar,
        psi_true: psi,
        alpha,
    })
}

/// The plateau-then-ramp profile used by the worked example: for `n`
/// divisible by 4 the vector has `n/4` ones followed by a linear descent in
/// steps of `4/n` down to `4/n` (length `n/2 - 1`). Its closed forms are
/// `|b|_2^2 = n/3 - 1/2 + 2/(3n)` and `|Jb|_2^2 = 4/n - 16/n^2`.
pub fn linear_ramp(n: usize) -> Result<DenseVector> {
    if n < 8 || n % 4 != 0 {
        return Err(Error::arg(format!("linear_ramp needs n >= 8 divisible by 4, got {n}")));
    }
    let m = n / 4;
    let mut v = vec![1.0; m];
    for k in 1..m {
        v.push(1.0 - (k as f64) / (m as f64));
    }
    DenseVector::new(v)
}

/// Draws an `n x p` design with rows i.i.d. `N(0, Psi)` and columns rescaled
/// to unit empirical second moment (`|X_j|_n^2 = 1`).
pub fn sample_design(truth: &TruthInstance, n: usize, seed: u64) -> Result<DenseMatrix> {
    let p = truth.psi_true.rows();
    let l = cholesky(&truth.psi_true).map_err(|e| match e {
        Error::NotPositiveDefinite { .. } => Error::arg("design correlation matrix is not PD"),
        other => other,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DenseMatrix::zeros(n, p);
    let mut z = vec![0.0; p];
    for i in 0..n {
        for zj in z.iter_mut() {
            *zj = rng.sample::<f64, _>(StandardNormal);
        }
        let row = &mut x.entries_mut()[i * p..(i + 1) * p];
        for j in 0..p {
            // x_j = sum_{k<=j} L_jk z_k
            let mut acc = 0.0;
            for k in 0..=j {
                acc += l.get(j, k) * z[k];
            }
            row[j] = acc;
        }
    }
    // standardize columns to |X_j|_n = 1
    let nf = n as f64;
    for j in 0..p {
        let mut ss = 0.0;
        for i in 0..n {
            let v = x.get(i, j);
            ss += v * v;
        }
        let norm = (ss / nf).sqrt();
        if norm <= 0.0 {
            return Err(Error::arg(format!("degenerate column {j} in sampled design")));
        }
        for i in 0..n {
            x.entries_mut()[i * p + j] /= norm;
        }
    }
    Ok(x)
}

/// Noise families: Gaussian, and a heavy-tailed finite-variance exemplar
/// (Student t with 3 degrees of freedom scaled to variance `sigma^2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NoiseKind {
    Gaussian,
    StudentT3,
}

pub fn sample_noise(n: usize, sigma: f64, kind: NoiseKind, seed: u64) -> DenseVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out: Vec<f64> = match kind {
        NoiseKind::Gaussian => (0..n)
            .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
            .collect(),
        NoiseKind::StudentT3 => {
            let t = StudentT::new(3.0).expect("valid dof");
            let scale = sigma / 3.0_f64.sqrt();
            (0..n).map(|_| scale * rng.sample::<f64, _>(t)).collect()
        }
    };
    DenseVector::new(out).expect("finite noise")
}

/// Estimators compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    Lasso,
    SLasso,
    ElasticNet,
    FusedLasso,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Lasso => "lasso",
            Method::SLasso => "slasso",
            Method::ElasticNet => "elastic_net",
            Method::FusedLasso => "fused_lasso",
        }
    }

    pub fn parse(name: &str) -> Result<Method> {
        match name.to_ascii_lowercase().as_str() {
            "lasso" => Ok(Method::Lasso),
            "slasso" | "smooth_lasso" => Ok(Method::SLasso),
            "en" | "elastic_net" => Ok(Method::ElasticNet),
            "fused" | "fused_lasso" => Ok(Method::FusedLasso),
            other => Err(Error::arg(format!("unknown method {other:?}"))),
        }
    }
}

/// How the weights are chosen for each fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TuningMode {
    /// Closed-form calibration from the known truth.
    Th,
    /// 2-D K-fold cross-validation.
    Cv,
    /// Grid minimizer of the l2 estimation error against the known truth.
    Est,
}

impl TuningMode {
    pub fn tag(self) -> &'static str {
        match self {
            TuningMode::Th => "th",
            TuningMode::Cv => "cv",
            TuningMode::Est => "est",
        }
    }

    pub fn parse(name: &str) -> Result<TuningMode> {
        match name.to_ascii_lowercase().as_str() {
            "th" => Ok(TuningMode::Th),
            "cv" => Ok(TuningMode::Cv),
            "est" => Ok(TuningMode::Est),
            other => Err(Error::arg(format!("unknown tuning mode {other:?}"))),
        }
    }
}

/// One fitted method under one tuning inside one replication.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub replication: usize,
    pub method: Method,
    pub tuning: TuningMode,
    pub lambda: f64,
    pub mu: f64,
    pub pred_err: f64,
    pub l2_err: f64,
    pub l1_err: f64,
    pub sup_err: f64,
    pub seminorm_err: f64,
    pub j_norm_fit: f64,
    pub support_size: usize,
    pub sign_match: bool,
    pub seconds: f64,
    pub converged: bool,
}

/// Harness knobs beyond the scenario itself.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub methods: Vec<Method>,
    pub tunings: Vec<TuningMode>,
    pub replications: usize,
    pub folds: usize,
    pub lambda_points: usize,
    pub lambda_min_ratio: f64,
    pub mu_points: usize,
    pub mu_min: f64,
    pub mu_max: f64,
    pub mu_include_zero: bool,
    /// Record wall-clock seconds per fit. Off by default so that outputs are
    /// byte-reproducible under a fixed seed.
    pub include_timing: bool,
    pub solver: SolverSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            methods: vec![Method::Lasso, Method::SLasso, Method::ElasticNet, Method::FusedLasso],
            tunings: vec![TuningMode::Cv],
            replications: 10,
            folds: 10,
            lambda_points: 50,
            lambda_min_ratio: 1e-3,
            mu_points: 20,
            mu_min: 1e-4,
            mu_max: 10.0,
            mu_include_zero: true,
            include_timing: false,
            solver: SolverSettings::default(),
        }
    }
}

/// All records of a run plus the scenario metadata needed to interpret them.
#[derive(Debug, Clone)]
pub struct ReplicationReport {
    pub records: Vec<RunRecord>,
    pub replications: usize,
}

const CSV_HEADER: &str = "replication,method,tuning,lambda,mu,pred_err,l2_err,l1_err,sup_err,seminorm_err,j_norm_fit,support_size,sign_match,seconds,converged";

/// Formats a float with 17 significant digits (lossless round trip).
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

impl ReplicationReport {
    /// Tidy CSV: one row per (replication, method, tuning), fixed column
    /// order, floats with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(128 * (self.records.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.replication,
                r.method.tag(),
                r.tuning.tag(),
                format_float(r.lambda),
                format_float(r.mu),
                format_float(r.pred_err),
                format_float(r.l2_err),
                format_float(r.l1_err),
                format_float(r.sup_err),
                format_float(r.seminorm_err),
                format_float(r.j_norm_fit),
                r.support_size,
                r.sign_match,
                format_float(r.seconds),
                r.converged,
            ));
        }
        out
    }

    /// Median and quartiles per (method, tuning) and metric, in the order the
    /// pairs first appear in the records.
    pub fn summary(&self) -> Vec<SummaryEntry> {
        let mut order: Vec<(Method, TuningMode)> = Vec::new();
        for r in &self.records {
            if !order.contains(&(r.method, r.tuning)) {
                order.push((r.method, r.tuning));
            }
        }
        order
            .into_iter()
            .map(|(m, t)| {
                let rows: Vec<&RunRecord> = self
                    .records
                    .iter()
                    .filter(|r| r.method == m && r.tuning == t)
                    .collect();
                let grab = |f: &dyn Fn(&RunRecord) -> f64| -> Quartiles {
                    quartiles(&rows.iter().map(|r| f(r)).collect::<Vec<_>>())
                };
                SummaryEntry {
                    method: m.tag().to_string(),
                    tuning: t.tag().to_string(),
                    count: rows.len(),
                    pred_err: grab(&|r| r.pred_err),
                    l2_err: grab(&|r| r.l2_err),
                    l1_err: grab(&|r| r.l1_err),
                    sup_err: grab(&|r| r.sup_err),
                    seminorm_err: grab(&|r| r.seminorm_err),
                    j_norm_fit: grab(&|r| r.j_norm_fit),
                    support_size: grab(&|r| r.support_size as f64),
                    lambda: grab(&|r| r.lambda),
                    mu: grab(&|r| r.mu),
                    converged_fraction: rows.iter().filter(|r| r.converged).count() as f64
                        / rows.len().max(1) as f64,
                }
            })
            .collect()
    }
}

/// First quartile, median, third quartile with linear interpolation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty() && (0.0..=1.0).contains(&q));
    let mut xs = values.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite metric"));
    let pos = q * ((xs.len() - 1) as f64);
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < xs.len() {
        xs[lo] * (1.0 - frac) + xs[lo + 1] * frac
    } else {
        xs[lo]
    }
}

pub fn quartiles(values: &[f64]) -> Quartiles {
    Quartiles {
        q1: quantile(values, 0.25),
        median: quantile(values, 0.5),
        q3: quantile(values, 0.75),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryEntry {
    pub method: String,
    pub tuning: String,
    pub count: usize,
    pub pred_err: Quartiles,
    pub l2_err: Quartiles,
    pub l1_err: Quartiles,
    pub sup_err: Quartiles,
    pub seminorm_err: Quartiles,
    pub j_norm_fit: Quartiles,
    pub support_size: Quartiles,
    pub lambda: Quartiles,
    pub mu: Quartiles,
    pub converged_fraction: f64,
}

/// The theoretical `(lambda, mu)` pair used by the simulation study: the
/// confidence-free l1 weight and the balanced quadratic weight computed from
/// the known truth. The fused comparator borrows the smooth variant's pair.
pub fn th_tuning(
    method: Method,
    truth: &TruthInstance,
    sigma: f64,
    n: usize,
    p: usize,
) -> Result<(f64, f64)> {
    let lambda = theoretical_lambda(sigma, n, p, 0.5, LambdaRule::Experimental)?;
    let s_count = truth.astar.len();
    let mu = match method {
        Method::Lasso => 0.0,
        Method::ElasticNet => {
            let s = build_structure(StructureKind::ElasticNet, p)?;
            let jb = matvec(&s.jtilde, &truth.beta_star)?;
            theoretical_mu(lambda, s_count, jb.norm_l2(), MuRule::Balanced)?
        }
        Method::SLasso | Method::FusedLasso => {
            let s = build_structure(StructureKind::SmoothLasso, p)?;
            let jb = matvec(&s.jtilde, &truth.beta_star)?;
            theoretical_mu(lambda, s_count, jb.norm_l2(), MuRule::Balanced)?
        }
    };
    Ok((lambda, mu))
}

struct PreparedStructures {
    lasso: StructureMatrix,
    slasso: Option<StructureMatrix>,
    en: StructureMatrix,
    /// First-difference structure used for the smoothness metrics of every
    /// method (so the columns are comparable across methods).
    metric: Option<StructureMatrix>,
}

fn prepare_structures(p: usize) -> Result<PreparedStructures> {
    let slasso = if p >= 2 {
        Some(build_structure(StructureKind::SmoothLasso, p)?)
    } else {
        None
    };
    Ok(PreparedStructures {
        lasso: build_structure(StructureKind::Lasso, p)?,
        en: build_structure(StructureKind::ElasticNet, p)?,
        metric: slasso.clone(),
        slasso,
    })
}

fn mu_grid_for(cfg: &RunConfig) -> Result<Vec<f64>> {
    let mut g = Vec::new();
    if cfg.mu_include_zero {
        g.push(0.0);
    }
    g.extend(log_grid(cfg.mu_min, cfg.mu_max, cfg.mu_points)?);
    Ok(g)
}

/// Grid minimizer of the l2 estimation error against the known truth,
/// searched over the same grid as cross-validation (warm-started descending
/// lambda paths). Ties go to more regularization.
fn est_tuning(
    x: &DenseMatrix,
    y: &DenseVector,
    beta_star: &DenseVector,
    method: Method,
    structures: &PreparedStructures,
    lambda_grid: &[f64],
    mu_grid: &[f64],
) -> Result<(f64, f64)> {
    let settings = SolverSettings {
        max_iter: 4_000,
        kkt_tol: 1e-6,
        restart: true,
    };
    let mut lam_desc: Vec<f64> = lambda_grid.to_vec();
    lam_desc.sort_by(|a, b| b.partial_cmp(a).expect("finite lambda"));
    let mus: Vec<f64> = match method {
        Method::Lasso => vec![0.0],
        _ => mu_grid.to_vec(),
    };
    let mut best = (f64::INFINITY, 0.0_f64, 0.0_f64);
    for &mu in &mus {
        let gram = match method {
            Method::FusedLasso => GramProblem::new(x, y, 0.0, None)?,
            Method::Lasso => GramProblem::new(x, y, 0.0, None)?,
            Method::SLasso => {
                let s = structures
                    .slasso
                    .as_ref()
                    .ok_or_else(|| Error::arg("smooth structure needs p >= 2"))?;
                GramProblem::new(x, y, mu, Some(&s.jtilde))?
            }
            Method::ElasticNet => GramProblem::new(x, y, mu, Some(&structures.en.jtilde))?,
        };
        let mut warm: Option<Vec<f64>> = None;
        for &lam in &lam_desc {
            let out = match method {
                Method::FusedLasso => fista(
                    &gram,
                    &FusedProx { lambda: lam, gamma: mu },
                    &settings,
                    warm.as_deref(),
                    false,
                ),
                _ => fista(&gram, &L1Prox { lambda: lam }, &settings, warm.as_deref(), false),
            };
            let mut err = 0.0;
            for (b, t) in out.beta.iter().zip(beta_star.as_slice()) {
                err += (b - t) * (b - t);
            }
            let err = err.sqrt();
            let better = err < best.0
                || (err == best.0 && (lam > best.1 || (lam == best.1 && mu > best.2)));
            if better {
                best = (err, lam, mu);
            }
            warm = Some(out.beta);
        }
    }
    Ok((best.1, best.2))
}

#[allow(clippy::too_many_arguments)]
fn fit_method(
    method: Method,
    x: &DenseMatrix,
    y: &DenseVector,
    lambda: f64,
    mu: f64,
    structures: &PreparedStructures,
    settings: &SolverSettings,
) -> Result<FitResult> {
    match method {
        Method::Lasso => {
            let cfg = PenaltyConfig::new(lambda, 0.0, StructureKind::Lasso)?;
            fit(x, y, &cfg, &structures.lasso, settings)
        }
        Method::SLasso => {
            let s = structures
                .slasso
                .as_ref()
                .ok_or_else(|| Error::arg("smooth structure needs p >= 2"))?;
            let cfg = PenaltyConfig::new(lambda, mu, StructureKind::SmoothLasso)?;
            fit(x, y, &cfg, s, settings)
        }
        Method::ElasticNet => {
            let cfg = PenaltyConfig::new(lambda, mu, StructureKind::ElasticNet)?;
            fit(x, y, &cfg, &structures.en, settings)
        }
        Method::FusedLasso => fused_lasso_fit(x, y, lambda, mu, settings),
    }
}

fn prediction_error(x: &DenseMatrix, y: &DenseVector, beta: &DenseVector) -> f64 {
    let mut rss = 0.0;
    for i in 0..x.rows() {
        let r = y.get(i) - crate::numkernel::dot(x.row(i), beta.as_slice());
        rss += r * r;
    }
    rss / (x.rows() as f64)
}

/// Runs the replicated comparison. Data is paired: within a replication all
/// methods and tunings see the same training and test draws; seeds derive
/// from the master seed by replication index, so results do not depend on
/// execution order.
pub fn run_replications(spec: &ExampleSpec, cfg: &RunConfig) -> Result<ReplicationReport> {
    if cfg.replications < 1 {
        return Err(Error::arg("replications must be >= 1"));
    }
    if cfg.methods.is_empty() || cfg.tunings.is_empty() {
        return Err(Error::arg("methods and tunings must be non-empty"));
    }
    let truth = make_truth(spec)?;
    let p = spec.p;
    let n = spec.n;
    let structures = prepare_structures(p)?;
    let mu_grid = mu_grid_for(cfg)?;

    let th_pairs: Vec<Option<(f64, f64)>> = cfg
        .methods
        .iter()
        .map(|&m| {
            if cfg.tunings.contains(&TuningMode::Th) {
                th_tuning(m, &truth, spec.sigma, n, p).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;

    let records: Vec<Vec<RunRecord>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| -> Result<Vec<RunRecord>> {
            let master = spec.seed;
            let x = sample_design(&truth, n, derive_seed(master, 1, rep as u64))?;
            let eps = sample_noise(n, spec.sigma, NoiseKind::Gaussian, derive_seed(master, 2, rep as u64));
            let signal = matvec(&x, &truth.beta_star)?;
            let y = DenseVector::new(
                signal
                    .as_slice()
                    .iter()
                    .zip(eps.as_slice())
                    .map(|(s, e)| s + e)
                    .collect(),
            )?;
            let x_test = sample_design(&truth, n, derive_seed(master, 3, rep as u64))?;
            let eps_test =
                sample_noise(n, spec.sigma, NoiseKind::Gaussian, derive_seed(master, 4, rep as u64));
            let signal_test = matvec(&x_test, &truth.beta_star)?;
            let y_test = DenseVector::new(
                signal_test
                    .as_slice()
                    .iter()
                    .zip(eps_test.as_slice())
                    .map(|(s, e)| s + e)
                    .collect(),
            )?;

            let lmax = lambda_max(&x, &y)?.max(1e-12);
            let lambda_grid = log_grid(cfg.lambda_min_ratio * lmax, lmax, cfg.lambda_points)?;

            let mut recs = Vec::new();
            for (mi, &method) in cfg.methods.iter().enumerate() {
                for &tuning in &cfg.tunings {
                    let (lambda, mu) = match tuning {
                        TuningMode::Th => th_pairs[mi].expect("prepared above"),
                        TuningMode::Cv => {
                            let seed = derive_seed(master, 0x100 + mi as u64, rep as u64);
                            match method {
                                Method::Lasso => {
                                    let r = cross_validate(
                                        &x,
                                        &y,
                                        &structures.lasso,
                                        &lambda_grid,
                                        &[0.0],
                                        cfg.folds,
                                        seed,
                                    )?;
                                    (r.best_lambda, r.best_mu)
                                }
                                Method::SLasso => {
                                    let s = structures
                                        .slasso
                                        .as_ref()
                                        .ok_or_else(|| Error::arg("smooth structure needs p >= 2"))?;
                                    let r = cross_validate(
                                        &x, &y, s, &lambda_grid, &mu_grid, cfg.folds, seed,
                                    )?;
                                    (r.best_lambda, r.best_mu)
                                }
                                Method::ElasticNet => {
                                    let r = cross_validate(
                                        &x,
                                        &y,
                                        &structures.en,
                                        &lambda_grid,
                                        &mu_grid,
                                        cfg.folds,
                                        seed,
                                    )?;
                                    (r.best_lambda, r.best_mu)
                                }
                                Method::FusedLasso => {
                                    let r = cross_validate_fused(
                                        &x, &y, &lambda_grid, &mu_grid, cfg.folds, seed,
                                    )?;
                                    (r.best_lambda, r.best_mu)
                                }
                            }
                        }
                        TuningMode::Est => est_tuning(
                            &x,
                            &y,
                            &truth.beta_star,
                            method,
                            &structures,
                            &lambda_grid,
                            &mu_grid,
                        )?,
                    };

                    let started = Instant::now();
                    let fitres = fit_method(method, &x, &y, lambda, mu, &structures, &cfg.solver)?;
                    let seconds = if cfg.include_timing {
                        started.elapsed().as_secs_f64()
                    } else {
                        0.0
                    };

                    let diff = DenseVector::new(
                        fitres
                            .beta
                            .as_slice()
                            .iter()
                            .zip(truth.beta_star.as_slice())
                            .map(|(b, t)| b - t)
                            .collect(),
                    )?;
                    let (seminorm_err, j_norm_fit) = match &structures.metric {
                        Some(s) => {
                            let jd = matvec(&s.j, &diff)?;
                            let jb = matvec(&s.j, &fitres.beta)?;
                            (jd.dot(&jd), jb.norm_l2())
                        }
                        None => (0.0, 0.0),
                    };
                    let sign =
                        crate::diagnostics::sign_consistency(&fitres.beta, &truth.beta_star)?;

                    recs.push(RunRecord {
                        replication: rep,
                        method,
                        tuning,
                        lambda,
                        mu,
                        pred_err: prediction_error(&x_test, &y_test, &fitres.beta),
                        l2_err: diff.norm_l2(),
                        l1_err: diff.norm_l1(),
                        sup_err: diff.norm_linf(),
                        seminorm_err,
                        j_norm_fit,
                        support_size: fitres.active_set.len(),
                        sign_match: sign.full_match,
                        seconds,
                        converged: fitres.converged,
                    });
                }
            }
            Ok(recs)
        })
        .collect::<Result<_>>()?;

    Ok(ReplicationReport {
        records: records.into_iter().flatten().collect(),
        replications: cfg.replications,
    })
}
