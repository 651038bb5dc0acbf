//! Numerical audits of the conditions behind the risk and selection
//! guarantees: restricted-eigenvalue constants over cones, cross-block
//! coherence, the row-max second-moment statistic, evaluated bound
//! right-hand sides, the hard-thresholding selector, sign-consistency
//! checks, and Monte-Carlo rates for the noise concentration event.
//!
//! The restricted constant `phi` is an infimum over a nonconvex cone, so it
//! is never computed exactly. Two numbers are reported instead and never
//! conflated: a sampled-and-refined *upper estimate* (some feasible direction
//! attains it) and a certified *lower bound* `max(lambda_min(K), 0)`. Every
//! bound evaluation uses the lower bound.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numkernel::{matvec_into, sym_eigvals, DenseMatrix, DenseVector};
use crate::seeding::derive_seed;
use crate::simulate::{sample_noise, NoiseKind};
use crate::solver::FitResult;
use crate::structure::StructureMatrix;

/// The design Gram matrix and its expansion by the weighted structure Gram.
#[derive(Debug, Clone)]
pub struct GramPair {
    /// `X'X / n`.
    pub psi: DenseMatrix,
    /// `psi + mu * J'J`.
    pub kn: DenseMatrix,
    pub mu: f64,
}

pub fn build_gram(x: &DenseMatrix, s: &StructureMatrix, mu: f64) -> Result<GramPair> {
    if x.cols() != s.p() {
        return Err(Error::dims("build_gram", s.p(), x.cols()));
    }
    if mu < 0.0 || !mu.is_finite() {
        return Err(Error::arg(format!("mu must be finite and >= 0, got {mu}")));
    }
    let p = x.cols();
    let psi = x.gram_scaled(x.rows() as f64);
    let mut kn = psi.clone();
    if mu != 0.0 {
        for (kv, jv) in kn.entries_mut().iter_mut().zip(s.jtilde.entries()) {
            *kv += mu * jv;
        }
    }
    debug_assert_eq!(kn.rows(), p);
    Ok(GramPair { psi, kn, mu })
}

/// Which family of admissible directions the restricted constant ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    /// `|d_off|_1 <= rho * sqrt(sum_{j in theta} d_j^2)`.
    Quadratic,
    /// `|d_off|_1 <= 4 |d_theta|_1`.
    Linear,
}

/// The cone of directions and the index set its Rayleigh denominator runs
/// over (`ratio_set` can be larger than `theta`).
#[derive(Debug, Clone)]
pub struct ConeSpec {
    pub theta: Vec<usize>,
    pub rho_n: f64,
    pub kind: ConeKind,
    pub ratio_set: Vec<usize>,
}

impl ConeSpec {
    /// Cone with denominator over `theta` itself.
    pub fn new(theta: Vec<usize>, rho_n: f64, kind: ConeKind) -> Self {
        let ratio_set = theta.clone();
        ConeSpec { theta, rho_n, kind, ratio_set }
    }

    fn validate(&self, p: usize) -> Result<()> {
        if self.theta.is_empty() {
            return Err(Error::arg("cone index set must be non-empty"));
        }
        for &j in self.theta.iter().chain(&self.ratio_set) {
            if j >= p {
                return Err(Error::arg(format!("cone index {j} out of range for p = {p}")));
            }
        }
        for &j in &self.theta {
            if !self.ratio_set.contains(&j) {
                return Err(Error::arg("ratio_set must contain the cone set"));
            }
        }
        if self.kind == ConeKind::Quadratic && !(self.rho_n >= 0.0) {
            return Err(Error::arg("quadratic cone radius must be >= 0"));
        }
        Ok(())
    }
}

/// Upper estimate and certified lower bound for the restricted constant.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PhiEstimate {
    /// Minimum Rayleigh ratio over sampled and refined feasible directions;
    /// an upper bound on the true infimum.
    pub upper_estimate: f64,
    /// `max(lambda_min(Kn), 0)`: a valid lower bound since the denominator
    /// never exceeds the full squared norm.
    pub lower_bound: f64,
}

fn rayleigh(kn: &DenseMatrix, d: &[f64], ratio: &[usize], buf: &mut [f64]) -> f64 {
    let p = kn.rows();
    matvec_into(kn.entries(), p, p, d, buf);
    let num = crate::numkernel::dot(d, buf);
    let den: f64 = ratio.iter().map(|&j| d[j] * d[j]).sum();
    if den <= 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Scales the off-`theta` part of `d` onto the cone boundary (or inside it).
fn project_cone(d: &mut [f64], cone: &ConeSpec, on_theta: &[bool]) {
    let tail_l1: f64 = d
        .iter()
        .enumerate()
        .filter(|(j, _)| !on_theta[*j])
        .map(|(_, v)| v.abs())
        .sum();
    let cap = match cone.kind {
        ConeKind::Quadratic => {
            let l2: f64 = cone.theta.iter().map(|&j| d[j] * d[j]).sum::<f64>().sqrt();
            cone.rho_n * l2
        }
        ConeKind::Linear => {
            let l1: f64 = cone.theta.iter().map(|&j| d[j].abs()).sum();
            4.0 * l1
        }
    };
    if tail_l1 > cap {
        let shrink = if tail_l1 > 0.0 { cap / tail_l1 } else { 0.0 };
        for (j, v) in d.iter_mut().enumerate() {
            if !on_theta[j] {
                *v *= shrink;
            }
        }
    }
}

/// Estimates the restricted constant over the cone: random boundary
/// directions plus deterministic seeds, each refined by projected gradient
/// descent on the Rayleigh ratio. Any feasible direction upper-bounds the
/// infimum, so refinement quality only sharpens the estimate.
pub fn estimate_phi(g: &GramPair, cone: &ConeSpec, samples: usize, seed: u64) -> Result<PhiEstimate> {
    let p = g.kn.rows();
    cone.validate(p)?;
    if samples < 1 {
        return Err(Error::arg("estimate_phi needs samples >= 1"));
    }

    let eig = sym_eigvals(&g.kn)?;
    let lower_bound = eig.get(0).max(0.0);

    let mut on_theta = vec![false; p];
    for &j in &cone.theta {
        on_theta[j] = true;
    }

    let mut buf = vec![0.0; p];
    let mut best = f64::INFINITY;

    // Deterministic seeds: coordinate axes of theta and the restricted
    // minimum eigendirection (both have empty tails, hence always feasible).
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    for &j in &cone.theta {
        let mut d = vec![0.0; p];
        d[j] = 1.0;
        candidates.push(d);
    }
    {
        let t = cone.theta.len();
        let k_sub = DenseMatrix::from_fn(t, t, |a, b| g.kn.get(cone.theta[a], cone.theta[b]))?;
        // Minimum eigenvector of the restriction by inverse-free approach:
        // shift-and-invert is overkill; use the eigenvalues to shift and a few
        // power steps on (c*I - K_sub).
        let sub_eig = sym_eigvals(&k_sub)?;
        let shift = sub_eig.get(t - 1) + 1.0;
        let mut v: Vec<f64> = (0..t).map(|i| 1.0 + 0.01 * i as f64).collect();
        let mut w = vec![0.0; t];
        for _ in 0..200 {
            for a in 0..t {
                let mut acc = shift * v[a];
                for b in 0..t {
                    acc -= k_sub.get(a, b) * v[b];
                }
                w[a] = acc;
            }
            let norm = crate::numkernel::dot(&w, &w).sqrt();
            if norm <= f64::MIN_POSITIVE {
                break;
            }
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / norm;
            }
        }
        let mut d = vec![0.0; p];
        for (a, &j) in cone.theta.iter().enumerate() {
            d[j] = v[a];
        }
        candidates.push(d);
    }

    // Random cone-boundary directions: dense on theta, sparse heavy-tailed
    // off theta, tails scaled onto the boundary.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x7068_6920, 0));
    let off: Vec<usize> = (0..p).filter(|j| !on_theta[*j]).collect();
    for _ in 0..samples {
        let mut d = vec![0.0; p];
        for &j in &cone.theta {
            d[j] = rng.sample::<f64, _>(StandardNormal);
        }
        if !off.is_empty() {
            let k = 1 + rng.random_range(0..off.len().min(4));
            for _ in 0..k {
                let j = off[rng.random_range(0..off.len())];
                // Laplace tail magnitudes
                let u: f64 = rng.random::<f64>() - 0.5;
                d[j] = -u.signum() * (1.0 - 2.0 * u.abs()).ln();
            }
            // scale tail exactly onto the boundary
            let tail_l1: f64 = off.iter().map(|&j| d[j].abs()).sum();
            if tail_l1 > 0.0 {
                let cap = match cone.kind {
                    ConeKind::Quadratic => {
                        let l2: f64 = cone.theta.iter().map(|&j| d[j] * d[j]).sum::<f64>().sqrt();
                        cone.rho_n * l2
                    }
                    ConeKind::Linear => 4.0 * cone.theta.iter().map(|&j| d[j].abs()).sum::<f64>(),
                };
                let sc = cap / tail_l1;
                for &j in &off {
                    d[j] *= sc;
                }
            }
        }
        candidates.push(d);
    }

    let p_sq = g.kn.entries();
    for mut d in candidates {
        // normalize for numerical comfort
        let norm = crate::numkernel::dot(&d, &d).sqrt();
        if norm <= 0.0 {
            continue;
        }
        d.iter_mut().for_each(|v| *v /= norm);
        let mut val = rayleigh(&g.kn, &d, &cone.ratio_set, &mut buf);
        // projected gradient refinement
        let mut step = 0.1;
        let mut grad = vec![0.0; p];
        for _ in 0..60 {
            matvec_into(p_sq, p, p, &d, &mut buf);
            let den: f64 = cone.ratio_set.iter().map(|&j| d[j] * d[j]).sum();
            if den <= 1e-300 {
                break;
            }
            let num = crate::numkernel::dot(&d, &buf);
            let r = num / den;
            for j in 0..p {
                grad[j] = 2.0 * buf[j] / den;
            }
            for &j in &cone.ratio_set {
                grad[j] -= 2.0 * r * d[j] / den;
            }
            let gnorm = crate::numkernel::dot(&grad, &grad).sqrt();
            if gnorm <= 1e-14 {
                break;
            }
            let mut trial: Vec<f64> = d.iter().zip(&grad).map(|(v, g)| v - step * g / gnorm).collect();
            project_cone(&mut trial, cone, &on_theta);
            let tnorm = crate::numkernel::dot(&trial, &trial).sqrt();
            if tnorm <= 1e-300 {
                break;
            }
            trial.iter_mut().for_each(|v| *v /= tnorm);
            let tval = rayleigh(&g.kn, &trial, &cone.ratio_set, &mut buf);
            if tval < val {
                d = trial;
                val = tval;
                step *= 1.4;
            } else {
                step *= 0.5;
                if step < 1e-12 {
                    break;
                }
            }
        }
        if val < best {
            best = val;
        }
    }

    Ok(PhiEstimate {
        upper_estimate: best,
        lower_bound,
    })
}

/// Cross-block coherence statistic and its comparison against the certified
/// restricted constant.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CoherenceReport {
    /// `|A| * max_{j in A, k not in A} |Kn_jk|`.
    pub t: f64,
    /// `t <= phi/64` with `phi` the certified lower bound.
    pub passes: bool,
    /// The `phi` used for the comparison.
    pub phi_for_threshold: f64,
    /// Full mutual coherence: `|A| * max_{j in A, k != j} |Kn_jk|`.
    pub mutual_t: f64,
}

pub fn coherence_check(g: &GramPair, astar: &[usize]) -> Result<CoherenceReport> {
    let p = g.kn.rows();
    if astar.is_empty() || astar.len() >= p {
        return Err(Error::arg(format!(
            "coherence needs a non-empty proper subset, got |A| = {} of p = {p}",
            astar.len()
        )));
    }
    let mut inside = vec![false; p];
    for &j in astar {
        if j >= p {
            return Err(Error::arg(format!("index {j} out of range for p = {p}")));
        }
        inside[j] = true;
    }
    let mut cross = 0.0_f64;
    let mut full = 0.0_f64;
    for &j in astar {
        for k in 0..p {
            if k == j {
                continue;
            }
            let v = g.kn.get(j, k).abs();
            full = full.max(v);
            if !inside[k] {
                cross = cross.max(v);
            }
        }
    }
    let a = astar.len() as f64;
    let eig = sym_eigvals(&g.kn)?;
    let phi = eig.get(0).max(0.0);
    let t = a * cross;
    Ok(CoherenceReport {
        t,
        passes: t <= phi / 64.0,
        phi_for_threshold: phi,
        mutual_t: a * full,
    })
}

/// Row-max second-moment statistic `n^{-1} sum_i max_j x_ij^2`.
pub fn assumption_l(x: &DenseMatrix) -> f64 {
    if x.rows() == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..x.rows() {
        let m = x.row(i).iter().fold(0.0_f64, |m, v| m.max(v * v));
        acc += m;
    }
    acc / (x.rows() as f64)
}

/// Which closed-form bound family to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundVariant {
    /// General right-hand sides `phi^{-1} (2 lambda sqrt(s) + 2 mu |J~b*|_2)^2`
    /// and companions.
    SparseRisk,
    /// The same bounds specialized to the balanced mu rule
    /// (`9 lambda^2 s / phi` etc.).
    BalancedRisk,
    /// `4 phi^{-1} lambda^2 s` and companions for a general structure matrix.
    GeneralRisk,
}

/// Evaluated right-hand sides. A missing field means the bound is undefined
/// for the given weights (for example the seminorm bound at `mu = 0`).
#[derive(Debug, Clone, Serialize)]
pub struct BoundRecord {
    pub variant: BoundVariant,
    pub prediction: Option<f64>,
    pub seminorm: Option<f64>,
    pub l1: Option<f64>,
    /// l2 (and hence sup-norm) bound `c~ (lambda sqrt(s) + mu |J~b*|_2)`.
    pub l2_sup: Option<f64>,
    /// Cone radius `4 sqrt(s) + (4 mu / lambda) |J~b*|_2`.
    pub rho_n: Option<f64>,
    /// `2 phi^{-1} (1 + rho_n / sqrt(m))`.
    pub c_tilde: Option<f64>,
    /// The hard-threshold level (equal to `l2_sup`).
    pub threshold: Option<f64>,
    /// Set when `lambda = mu = 0`: every bound collapses to zero.
    pub degenerate: bool,
    /// Size of the enlarged support set used for `m`.
    pub b_size: usize,
    pub m: usize,
}

/// The enlarged support: the truth's support plus every index its structure
/// Gram row touches. For the identity structure this is the support itself;
/// for the first-difference structure it adds the two neighbors of each
/// support point.
pub fn enlarged_support(beta_star: &DenseVector, s: &StructureMatrix) -> Vec<usize> {
    let p = beta_star.len();
    let mut in_b = vec![false; p];
    let support: Vec<usize> = (0..p).filter(|&j| beta_star.get(j) != 0.0).collect();
    for &j in &support {
        in_b[j] = true;
        for k in 0..p {
            if s.jtilde.get(k, j) != 0.0 {
                in_b[k] = true;
            }
        }
    }
    (0..p).filter(|&j| in_b[j]).collect()
}

/// The `m` largest-magnitude components of a residual vector outside `b`.
pub fn largest_outside(residual: &DenseVector, b: &[usize], m: usize) -> Vec<usize> {
    let p = residual.len();
    let mut in_b = vec![false; p];
    for &j in b {
        in_b[j] = true;
    }
    let mut rest: Vec<usize> = (0..p).filter(|&j| !in_b[j]).collect();
    rest.sort_by(|&a, &c| {
        residual
            .get(c)
            .abs()
            .partial_cmp(&residual.get(a).abs())
            .expect("finite residual")
            .then(a.cmp(&c))
    });
    rest.truncate(m);
    rest.sort_unstable();
    rest
}

/// The cone for the sup-norm guarantee: directions constrained through the
/// enlarged support `B`, with the Rayleigh denominator running over `B` plus
/// the `m` largest components of a fitted residual vector outside `B`.
/// `m` defaults to `|B|` and is clipped so that `m + |B| < p`.
pub fn sup_norm_cone(
    beta_star: &DenseVector,
    residual: &DenseVector,
    s: &StructureMatrix,
    rho_n: f64,
    m: Option<usize>,
) -> Result<ConeSpec> {
    if beta_star.len() != s.p() || residual.len() != s.p() {
        return Err(Error::dims("sup_norm_cone", s.p(), beta_star.len().max(residual.len())));
    }
    let b = enlarged_support(beta_star, s);
    if b.is_empty() {
        return Err(Error::arg("sup_norm_cone needs a non-empty support"));
    }
    let p = beta_star.len();
    let mut m = m.unwrap_or(b.len()).max(1);
    if m + b.len() >= p {
        m = p
            .saturating_sub(b.len() + 1)
            .max(if b.len() + 1 < p { 1 } else { 0 });
    }
    let c = largest_outside(residual, &b, m);
    let mut ratio_set = b.clone();
    ratio_set.extend(c);
    ratio_set.sort_unstable();
    Ok(ConeSpec {
        theta: b,
        rho_n,
        kind: ConeKind::Quadratic,
        ratio_set,
    })
}

/// Evaluates the bound right-hand sides for a known truth at the given
/// weights and certified `phi`.
pub fn evaluate_bounds(
    beta_star: &DenseVector,
    s: &StructureMatrix,
    lambda: f64,
    mu: f64,
    phi: f64,
    variant: BoundVariant,
) -> Result<BoundRecord> {
    if beta_star.len() != s.p() {
        return Err(Error::dims("evaluate_bounds", s.p(), beta_star.len()));
    }
    if !(phi > 0.0) {
        return Err(Error::arg(format!(
            "phi must be > 0 to evaluate bounds (assumption fails), got {phi}"
        )));
    }
    if lambda < 0.0 || mu < 0.0 {
        return Err(Error::arg("lambda and mu must be >= 0"));
    }
    let p = s.p();
    let jb = crate::numkernel::matvec(&s.jtilde, beta_star)?;
    let jb2 = jb.norm_l2();
    let jbinf = jb.norm_linf();
    let sparsity = beta_star.as_slice().iter().filter(|v| **v != 0.0).count();
    let s_sqrt = (sparsity as f64).sqrt();

    let degenerate = lambda == 0.0 && mu == 0.0;

    let (prediction, seminorm, l1) = match variant {
        BoundVariant::SparseRisk => {
            let r = 2.0 * lambda * s_sqrt + 2.0 * mu * jb2;
            let pred = r * r / phi;
            let semi = if mu > 0.0 { Some(pred / mu) } else { None };
            let l1 = if lambda > 0.0 { Some(2.0 * pred / lambda) } else { None };
            (Some(pred), semi, l1)
        }
        BoundVariant::BalancedRisk => {
            // closed forms under mu = lambda sqrt(s) / (2 |J~b*|_2)
            let pred = 9.0 * lambda * lambda * (sparsity as f64) / phi;
            let l1 = if lambda > 0.0 {
                Some(18.0 * lambda * (sparsity as f64) / phi)
            } else {
                None
            };
            let semi = if mu > 0.0 {
                Some(pred / mu)
            } else {
                None
            };
            (Some(pred), semi, l1)
        }
        BoundVariant::GeneralRisk => {
            let pred = 4.0 * lambda * lambda * (sparsity as f64) / phi;
            let semi = Some(4.0 * jbinf * lambda * (sparsity as f64) / phi);
            let l1 = Some(8.0 * lambda * (sparsity as f64) / phi);
            (Some(pred), semi, l1)
        }
    };

    let rho_n = if lambda > 0.0 {
        Some(4.0 * s_sqrt + 4.0 * mu * jb2 / lambda)
    } else {
        None
    };

    let b = enlarged_support(beta_star, s);
    let b_size = b.len();
    // m defaults to |B|, clipped so m + |B| < p
    let mut m = b_size;
    if m + b_size >= p {
        m = p.saturating_sub(b_size + 1);
    }
    let (c_tilde, l2_sup) = match (rho_n, m) {
        (Some(rho), m) if m >= 1 => {
            let c = 2.0 / phi * (1.0 + rho / (m as f64).sqrt());
            (Some(c), Some(c * (lambda * s_sqrt + mu * jb2)))
        }
        _ => (None, None),
    };

    Ok(BoundRecord {
        variant,
        prediction,
        seminorm,
        l1,
        l2_sup,
        rho_n,
        c_tilde,
        threshold: l2_sup,
        degenerate,
        b_size,
        m,
    })
}

/// Hard-thresholds a fit: components of magnitude below
/// `c_tilde * (lambda sqrt(s) + mu * structure_norm)` become exactly zero.
pub fn threshold_select(
    fit: &FitResult,
    c_tilde: f64,
    lambda: f64,
    mu: f64,
    sparsity: usize,
    structure_norm: f64,
) -> Result<(DenseVector, Vec<usize>)> {
    if !(c_tilde >= 0.0) || !(lambda >= 0.0) || !(mu >= 0.0) || !(structure_norm >= 0.0) {
        return Err(Error::arg("threshold inputs must be >= 0"));
    }
    let level = c_tilde * (lambda * (sparsity as f64).sqrt() + mu * structure_norm);
    let mut out = fit.beta.as_slice().to_vec();
    for v in out.iter_mut() {
        if v.abs() < level {
            *v = 0.0;
        }
    }
    let selected: Vec<usize> = out
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, _)| i)
        .collect();
    Ok((DenseVector::new(out)?, selected))
}

/// Componentwise sign comparison of an estimate against the truth
/// (`sign(0) = 0`, exact comparisons).
#[derive(Debug, Clone, Serialize)]
pub struct SignReport {
    /// Exact sign match on every component.
    pub full_match: bool,
    /// Indices where the signs differ.
    pub mismatched: Vec<usize>,
    /// Sign match restricted to the truth's support.
    pub match_on_support: bool,
    /// The estimate's support is contained in the truth's.
    pub subset_of_support: bool,
}

pub fn sign_consistency(beta_hat: &DenseVector, beta_star: &DenseVector) -> Result<SignReport> {
    if beta_hat.len() != beta_star.len() {
        return Err(Error::dims("sign_consistency", beta_star.len(), beta_hat.len()));
    }
    let sgn = |v: f64| -> i8 {
        if v > 0.0 {
            1
        } else if v < 0.0 {
            -1
        } else {
            0
        }
    };
    let mut mismatched = Vec::new();
    let mut match_on_support = true;
    let mut subset = true;
    for j in 0..beta_hat.len() {
        let sh = sgn(beta_hat.get(j));
        let st = sgn(beta_star.get(j));
        if sh != st {
            mismatched.push(j);
            if st != 0 {
                match_on_support = false;
            }
        }
        if sh != 0 && st == 0 {
            subset = false;
        }
    }
    Ok(SignReport {
        full_match: mismatched.is_empty(),
        mismatched,
        match_on_support,
        subset_of_support: subset,
    })
}

/// Monte-Carlo frequency of the concentration event
/// `max_j 2 |X_j' e / n| <= tau * lambda` over fresh noise draws.
pub fn concentration_event_rate(
    x: &DenseMatrix,
    sigma: f64,
    lambda: f64,
    tau: f64,
    noise: NoiseKind,
    replications: usize,
    seed: u64,
) -> Result<f64> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::arg(format!("tau must lie in (0, 1], got {tau}")));
    }
    if replications == 0 {
        return Err(Error::arg("replications must be >= 1"));
    }
    if !(sigma >= 0.0) {
        return Err(Error::arg("sigma must be >= 0"));
    }
    let n = x.rows();
    let p = x.cols();
    let nf = n as f64;
    let hits: usize = (0..replications)
        .into_par_iter()
        .map(|r| {
            let eps = sample_noise(n, sigma, noise, derive_seed(seed, 0x636f_6e63, r as u64));
            let mut worst = 0.0_f64;
            for j in 0..p {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += x.get(i, j) * eps.get(i);
                }
                worst = worst.max(2.0 * (acc / nf).abs());
            }
            usize::from(worst <= tau * lambda)
        })
        .sum();
    Ok(hits as f64 / replications as f64)
}

/// All the audited quantities in one serializable record.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_estimate: Option<f64>,
    pub phi_lower_bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coherence_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coherence_passes: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mutual_coherence_t: Option<f64>,
    pub l_statistic: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_nem: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Spectrum endpoints of the plain Gram matrix.
    pub psi_eig_range: [f64; 2],
    /// Spectrum endpoints of the expanded Gram matrix.
    pub kn_eig_range: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{build_structure, StructureKind};

    fn v(xs: &[f64]) -> DenseVector {
        DenseVector::new(xs.to_vec()).unwrap()
    }

    fn fit_like(beta: &[f64]) -> FitResult {
        FitResult {
            beta: v(beta),
            objective: 0.0,
            iterations: 0,
            converged: true,
            kkt_residual: 0.0,
            active_set: beta
                .iter()
                .enumerate()
                .filter(|(_, b)| **b != 0.0)
                .map(|(i, _)| i)
                .collect(),
            objective_trace: vec![],
        }
    }

    #[test]
    fn build_gram_mu_zero() {
        let x = DenseMatrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 2.0], vec![1.0, 1.0]]).unwrap();
        let s = build_structure(StructureKind::ElasticNet, 2).unwrap();
        let g = build_gram(&x, &s, 0.0).unwrap();
        assert_eq!(g.psi.entries(), g.kn.entries());
    }

    #[test]
    fn build_gram_scaled_identity() {
        // X = sqrt(n) I, elastic net, mu = 1: Kn = 2 I
        let n = 3;
        let x = DenseMatrix::from_fn(n, n, |i, j| if i == j { (n as f64).sqrt() } else { 0.0 }).unwrap();
        let s = build_structure(StructureKind::ElasticNet, n).unwrap();
        let g = build_gram(&x, &s, 1.0).unwrap();
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 2.0 } else { 0.0 };
                assert!((g.kn.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn first_difference_keeps_tridiagonal_pattern() {
        // tridiagonal Psi stays tridiagonal after adding mu * J'J
        let p = 6;
        let eps = 0.3;
        let psi = DenseMatrix::from_fn(p, p, |i, j| {
            if i == j {
                1.0
            } else if i.abs_diff(j) == 1 {
                eps
            } else {
                0.0
            }
        })
        .unwrap();
        // manufacture X with X'X/n = psi via cholesky rows * sqrt(n)
        let l = crate::numkernel::cholesky(&psi).unwrap();
        let n = p;
        let x = DenseMatrix::from_fn(n, p, |i, j| l.get(j, i) * (n as f64).sqrt()).unwrap();
        let s = build_structure(StructureKind::SmoothLasso, p).unwrap();
        let g = build_gram(&x, &s, 0.2).unwrap();
        for i in 0..p {
            for j in 0..p {
                if i.abs_diff(j) > 1 {
                    assert!(g.kn.get(i, j).abs() < 1e-12, "fill-in at ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn phi_identity_gram() {
        let g = GramPair {
            psi: DenseMatrix::identity(4),
            kn: DenseMatrix::identity(4),
            mu: 0.0,
        };
        let cone = ConeSpec::new(vec![0, 1], 3.0, ConeKind::Quadratic);
        let est = estimate_phi(&g, &cone, 50, 1).unwrap();
        assert!((est.lower_bound - 1.0).abs() < 1e-10);
        assert!((est.upper_estimate - 1.0).abs() < 1e-9, "{}", est.upper_estimate);
        assert!(est.lower_bound <= est.upper_estimate + 1e-8);
    }

    #[test]
    fn phi_collapsed_cone_hits_axis_value() {
        let kn = DenseMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let g = GramPair {
            psi: kn.clone(),
            kn,
            mu: 0.0,
        };
        let cone = ConeSpec::new(vec![0], 0.0, ConeKind::Quadratic);
        let est = estimate_phi(&g, &cone, 20, 2).unwrap();
        assert!((est.upper_estimate - 2.0).abs() < 1e-9, "{}", est.upper_estimate);
    }

    #[test]
    fn phi_lower_bound_monotone_in_mu() {
        let x = DenseMatrix::from_fn(8, 5, |i, j| ((i * 5 + j * 3) % 7) as f64 / 3.0 - 1.0).unwrap();
        let s = build_structure(StructureKind::SmoothLasso, 5).unwrap();
        let g1 = build_gram(&x, &s, 0.1).unwrap();
        let g2 = build_gram(&x, &s, 0.5).unwrap();
        let e1 = sym_eigvals(&g1.kn).unwrap().get(0);
        let e2 = sym_eigvals(&g2.kn).unwrap().get(0);
        assert!(e2 >= e1 - 1e-12);
    }

    #[test]
    fn phi_ordering_on_random_instances() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        for trial in 0..15 {
            let p = 4 + rng.random_range(0..6);
            let n = 6 + rng.random_range(0..10);
            let x = DenseMatrix::from_fn(n, p, |_, _| {
                rng.sample::<f64, _>(rand_distr::StandardNormal)
            })
            .unwrap();
            let s = build_structure(StructureKind::SmoothLasso, p).unwrap();
            let g = build_gram(&x, &s, 0.3).unwrap();
            let theta: Vec<usize> = (0..2 + trial % 3).collect();
            let cone = ConeSpec::new(theta, 2.5, ConeKind::Quadratic);
            let est = estimate_phi(&g, &cone, 60, trial as u64).unwrap();
            assert!(
                est.lower_bound <= est.upper_estimate + 1e-8,
                "lower {} above upper {}",
                est.lower_bound,
                est.upper_estimate
            );
        }
    }

    #[test]
    fn banded_design_certified_lower_bound() {
        // tridiagonal Gram with diag 1, off-diag eps; expanded by mu times the
        // first-difference Gram: lambda_min >= 1 + mu - 2|eps - mu|
        let p = 20;
        for (eps, mu) in [(0.1, 0.3), (0.4, 0.05), (0.25, 0.25)] {
            let psi = DenseMatrix::from_fn(p, p, |i, j| {
                if i == j {
                    1.0
                } else if i.abs_diff(j) == 1 {
                    eps
                } else {
                    0.0
                }
            })
            .unwrap();
            let s = build_structure(StructureKind::SmoothLasso, p).unwrap();
            let kn =
                DenseMatrix::from_fn(p, p, |i, j| psi.get(i, j) + mu * s.jtilde.get(i, j)).unwrap();
            let g = GramPair { psi, kn, mu };
            let cone = ConeSpec::new(vec![0, 1, 2], 3.0, ConeKind::Quadratic);
            let est = estimate_phi(&g, &cone, 40, 5).unwrap();
            let stated: f64 = 1.0 + mu - 2.0 * (eps - mu).abs();
            if stated > 0.0 {
                assert!(
                    est.lower_bound >= stated - 1e-8,
                    "eps={eps} mu={mu}: {} < {stated}",
                    est.lower_bound
                );
            }
        }
    }

    #[test]
    fn smooth_truth_bound_right_hand_side() {
        // decaying-square truth at p = 100: evaluate the prediction bound and
        // check it against the formula assembled from first principles
        let spec = crate::simulate::ExampleSpec {
            example: crate::simulate::Example::C,
            p: 100,
            n: 30,
            sigma: 3.0,
            rho: None,
            seed: 0,
        };
        let truth = crate::simulate::make_truth(&spec).unwrap();
        let s = build_structure(StructureKind::SmoothLasso, 100).unwrap();
        let lambda = crate::tuning::theoretical_lambda(3.0, 30, 100, 0.1, crate::tuning::LambdaRule::SparseRisk).unwrap();
        let jb = crate::numkernel::matvec(&s.jtilde, &truth.beta_star).unwrap();
        let mu = crate::tuning::theoretical_mu(lambda, truth.astar.len(), jb.norm_l2(), crate::tuning::MuRule::Balanced).unwrap();
        let phi = 0.37;
        let rec = evaluate_bounds(&truth.beta_star, &s, lambda, mu, phi, BoundVariant::SparseRisk).unwrap();
        let mut jb2 = 0.0;
        for k in 0..100 {
            let mut acc = 0.0;
            for j in 0..100 {
                acc += s.jtilde.get(k, j) * truth.beta_star.get(j);
            }
            jb2 += acc * acc;
        }
        let jb2 = jb2.sqrt();
        let r = 2.0 * lambda * (truth.astar.len() as f64).sqrt() + 2.0 * mu * jb2;
        let expect = r * r / phi;
        let got = rec.prediction.unwrap();
        assert!((got - expect).abs() <= 1e-12 * expect, "{got} vs {expect}");
        // under the balanced mu rule the two penalty contributions are equal,
        // so the bound collapses to 9 lambda^2 s / phi
        let collapsed = 9.0 * lambda * lambda * truth.astar.len() as f64 / phi;
        assert!((got - collapsed).abs() <= 1e-10 * collapsed);
    }

    #[test]
    fn coherence_cases() {
        let g = GramPair {
            psi: DenseMatrix::identity(4),
            kn: DenseMatrix::identity(4),
            mu: 0.0,
        };
        let r = coherence_check(&g, &[0, 1]).unwrap();
        assert_eq!(r.t, 0.0);
        assert!(r.passes);

        // single cross-block entry of 0.5 with |A| = 2 gives t = 1
        let mut kn = DenseMatrix::identity(4);
        kn.entries_mut()[0 * 4 + 2] = 0.5;
        kn.entries_mut()[2 * 4 + 0] = 0.5;
        let g = GramPair {
            psi: kn.clone(),
            kn,
            mu: 0.0,
        };
        let r = coherence_check(&g, &[0, 1]).unwrap();
        assert!((r.t - 1.0).abs() < 1e-15);

        // block-diagonal: within-block correlation does not affect t
        let mut kn = DenseMatrix::identity(4);
        kn.entries_mut()[0 * 4 + 1] = 0.9;
        kn.entries_mut()[1 * 4 + 0] = 0.9;
        let g = GramPair {
            psi: kn.clone(),
            kn,
            mu: 0.0,
        };
        let r = coherence_check(&g, &[0, 1]).unwrap();
        assert_eq!(r.t, 0.0);
        assert!(r.mutual_t > 0.0);
    }

    #[test]
    fn l_statistic_values() {
        let x = DenseMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        assert_eq!(assumption_l(&x), 1.0);
        assert_eq!(assumption_l(&DenseMatrix::zeros(3, 2)), 0.0);
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap();
        assert!((assumption_l(&x) - 6.5).abs() < 1e-15);
    }

    #[test]
    fn balanced_mu_gives_rho_six_sqrt_s() {
        let s = build_structure(StructureKind::SmoothLasso, 8).unwrap();
        let beta = v(&[3.0, 1.5, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0]);
        let jb = crate::numkernel::matvec(&s.jtilde, &beta).unwrap();
        let lambda = 0.9;
        let mu = crate::tuning::theoretical_mu(lambda, 3, jb.norm_l2(), crate::tuning::MuRule::Balanced).unwrap();
        let rec = evaluate_bounds(&beta, &s, lambda, mu, 0.5, BoundVariant::SparseRisk).unwrap();
        let rho = rec.rho_n.unwrap();
        assert!((rho - 6.0 * 3.0_f64.sqrt()).abs() < 1e-10, "{rho}");
        // balanced closed forms match the general forms at the balanced mu
        let bal = evaluate_bounds(&beta, &s, lambda, mu, 0.5, BoundVariant::BalancedRisk).unwrap();
        let a = rec.prediction.unwrap();
        let b = bal.prediction.unwrap();
        assert!((a - b).abs() <= 1e-10 * a.max(1.0));
    }

    #[test]
    fn degenerate_bounds_at_zero_weights() {
        let s = build_structure(StructureKind::ElasticNet, 3).unwrap();
        let beta = v(&[1.0, 0.0, -1.0]);
        let rec = evaluate_bounds(&beta, &s, 0.0, 0.0, 1.0, BoundVariant::SparseRisk).unwrap();
        assert!(rec.degenerate);
        assert_eq!(rec.prediction, Some(0.0));
        assert_eq!(rec.l1, None);
    }

    #[test]
    fn enlarged_support_shapes() {
        let sl = build_structure(StructureKind::SmoothLasso, 10).unwrap();
        let beta = v(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -2.0, 0.0, 0.0, 0.0]);
        let b = enlarged_support(&beta, &sl);
        assert_eq!(b, vec![1, 2, 3, 5, 6, 7]);
        assert!(b.len() <= 3 * 2);

        let en = build_structure(StructureKind::ElasticNet, 10).unwrap();
        let b = enlarged_support(&beta, &en);
        assert_eq!(b, vec![2, 6]);
    }

    #[test]
    fn sup_norm_cone_picks_largest_residuals() {
        let s = build_structure(StructureKind::SmoothLasso, 12).unwrap();
        let beta = v(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        // B = {2, 3, 4}; largest residuals outside: indices 9 and 0
        let residual = v(&[0.5, 0.1, 9.0, 9.0, 9.0, 0.2, 0.0, 0.1, 0.05, 0.9, 0.3, 0.0]);
        let cone = sup_norm_cone(&beta, &residual, &s, 4.0, Some(2)).unwrap();
        assert_eq!(cone.theta, vec![2, 3, 4]);
        assert_eq!(cone.ratio_set, vec![0, 2, 3, 4, 9]);
        assert_eq!(cone.kind, ConeKind::Quadratic);

        // m defaults to |B| and stays below p - |B|
        let cone = sup_norm_cone(&beta, &residual, &s, 4.0, None).unwrap();
        assert_eq!(cone.ratio_set.len(), 6);
    }

    #[test]
    fn threshold_select_cases() {
        let f = fit_like(&[3.0, 0.1, -2.0]);
        // explicit threshold 0.5: c~ = 0.5, lambda = 1, s = 1, mu = 0
        let (b, sel) = threshold_select(&f, 0.5, 1.0, 0.0, 1, 1.0).unwrap();
        assert_eq!(b.as_slice(), &[3.0, 0.0, -2.0]);
        assert_eq!(sel, vec![0, 2]);

        let (b, _) = threshold_select(&f, 0.0, 1.0, 0.0, 1, 1.0).unwrap();
        assert_eq!(b.as_slice(), &[3.0, 0.1, -2.0]);

        let (b, sel) = threshold_select(&f, 10.0, 1.0, 0.0, 1, 1.0).unwrap();
        assert!(b.as_slice().iter().all(|&x| x == 0.0));
        assert!(sel.is_empty());
    }

    #[test]
    fn sign_consistency_cases() {
        let r = sign_consistency(&v(&[1.0, 0.0]), &v(&[2.0, 0.0])).unwrap();
        assert!(r.full_match);
        let r = sign_consistency(&v(&[1.0, -1.0]), &v(&[1.0, 1.0])).unwrap();
        assert!(!r.full_match);
        assert_eq!(r.mismatched, vec![1]);
        let r = sign_consistency(&v(&[1.0, 0.5]), &v(&[1.0, 0.0])).unwrap();
        assert!(!r.subset_of_support);
        assert!(r.match_on_support);
    }

    #[test]
    fn concentration_trivial_cases() {
        let x = DenseMatrix::identity(4);
        // sigma = 0: event always holds
        let r = concentration_event_rate(&x, 0.0, 0.5, 0.5, NoiseKind::Gaussian, 50, 1).unwrap();
        assert_eq!(r, 1.0);
        // halving lambda cannot raise the rate on the same seed stream
        let hi = concentration_event_rate(&x, 1.0, 2.0, 0.5, NoiseKind::Gaussian, 400, 2).unwrap();
        let lo = concentration_event_rate(&x, 1.0, 1.0, 0.5, NoiseKind::Gaussian, 400, 2).unwrap();
        assert!(lo <= hi);
    }
}
