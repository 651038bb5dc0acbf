//! Tuning-parameter calibration: closed-form rules for the l1 weight and the
//! quadratic weight at a given confidence level, the Nemirovski constant used
//! under finite-variance (non-Gaussian) noise, default grids, and 2-D K-fold
//! cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numkernel::{DenseMatrix, DenseVector};
use crate::seeding::derive_seed;
use crate::solver::{fista, FusedProx, GramProblem, L1Prox, SolverSettings};
use crate::structure::StructureMatrix;

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Closed-form calibration rules for the l1 weight. The constant in front of
/// `sigma * sqrt(log(p/eta)/n)` differs by the guarantee each rule backs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaRule {
    /// `4*sqrt(2)*sigma*sqrt(log(p/eta)/n)`; risk bounds with a sparse
    /// structure Gram.
    SparseRisk,
    /// Same weight as `SparseRisk`, paired with the balanced mu rule.
    BalancedRisk,
    /// `8*sqrt(2)*sigma*sqrt(log(p/eta)/n)`; risk bounds for a general
    /// structure matrix.
    GeneralRisk,
    /// `2*sqrt(2)*sigma*sqrt(log(p/eta)/n)`; sup-norm/l2 estimation bound and
    /// the hard-threshold level.
    SupNorm,
    /// `16*sigma*sqrt(log(p/sqrt(eta*p/(1+p)))/n)`; exact support recovery.
    SupportRecovery,
    /// Finite-variance noise; has no closed form in `eta` alone, use
    /// [`nongaussian_lambda`].
    FiniteVariance,
    /// `2*sqrt(2)*sigma*sqrt(log(p)/n)`; the confidence-free variant used by
    /// the simulation study.
    Experimental,
}

/// Calibration rules for the quadratic weight given the l1 weight, the
/// sparsity index and the structure norm of the truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MuRule {
    /// `lambda * sqrt(s) / (2 |J~ b*|_2)`: balances the two penalty terms in
    /// the risk bound.
    Balanced,
    /// `lambda / (8 |J~ b*|_inf)`: general structure matrices.
    SupEighth,
    /// `lambda / (4 |J~ b*|_inf)`: support-recovery calibration.
    SupQuarter,
}

/// A fully resolved theoretical tuning pair.
#[derive(Debug, Clone, Copy)]
pub struct TheoreticalTuning {
    pub lambda: f64,
    pub mu: f64,
    pub eta: f64,
    pub rule: LambdaRule,
}

impl TheoreticalTuning {
    /// Resolves both weights for Gaussian noise: the l1 weight from the
    /// lambda rule, the quadratic weight from the mu rule applied to the
    /// truth statistics (`sparsity`, `structure_norm`).
    pub fn gaussian(
        sigma: f64,
        n: usize,
        p: usize,
        eta: f64,
        rule: LambdaRule,
        mu_rule: MuRule,
        sparsity: usize,
        structure_norm: f64,
    ) -> Result<Self> {
        let lambda = theoretical_lambda(sigma, n, p, eta, rule)?;
        let mu = theoretical_mu(lambda, sparsity, structure_norm, mu_rule)?;
        Ok(TheoreticalTuning { lambda, mu, eta, rule })
    }
}

fn validate_lambda_inputs(sigma: f64, n: usize, p: usize, eta: f64, needs_eta: bool) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::arg(format!("sigma must be finite and > 0, got {sigma}")));
    }
    if n < 1 {
        return Err(Error::arg("n must be >= 1"));
    }
    if p < 2 {
        return Err(Error::arg(format!("p must be >= 2, got {p}")));
    }
    if needs_eta && !(eta > 0.0 && eta < 1.0) {
        return Err(Error::arg(format!("eta must lie in (0,1), got {eta}")));
    }
    Ok(())
}

/// The calibrated l1 weight for Gaussian noise under the chosen rule.
pub fn theoretical_lambda(sigma: f64, n: usize, p: usize, eta: f64, rule: LambdaRule) -> Result<f64> {
    validate_lambda_inputs(sigma, n, p, eta, rule != LambdaRule::Experimental)?;
    let nf = n as f64;
    let pf = p as f64;
    let value = match rule {
        LambdaRule::SparseRisk | LambdaRule::BalancedRisk => {
            4.0 * SQRT2 * sigma * ((pf / eta).ln() / nf).sqrt()
        }
        LambdaRule::GeneralRisk => 8.0 * SQRT2 * sigma * ((pf / eta).ln() / nf).sqrt(),
        LambdaRule::SupNorm => 2.0 * SQRT2 * sigma * ((pf / eta).ln() / nf).sqrt(),
        LambdaRule::SupportRecovery => {
            let inner = pf / (eta * pf / (1.0 + pf)).sqrt();
            16.0 * sigma * (inner.ln() / nf).sqrt()
        }
        LambdaRule::Experimental => 2.0 * SQRT2 * sigma * (pf.ln() / nf).sqrt(),
        LambdaRule::FiniteVariance => {
            return Err(Error::arg(
                "the finite-variance rule needs the design statistic L; call nongaussian_lambda",
            ))
        }
    };
    Ok(value)
}

/// The calibrated l1 weight for zero-mean finite-variance noise:
/// `4*sigma*sqrt(K_nem(p) * L / (n*eta))` with `L` the row-max second-moment
/// statistic of the design.
pub fn nongaussian_lambda(sigma: f64, n: usize, p: usize, eta: f64, l_bound: f64) -> Result<f64> {
    validate_lambda_inputs(sigma, n, p, eta, true)?;
    if !(l_bound > 0.0) || !l_bound.is_finite() {
        return Err(Error::arg(format!("L must be finite and > 0, got {l_bound}")));
    }
    let k = k_nem(p)?;
    Ok(4.0 * sigma * (k * l_bound / ((n as f64) * eta)).sqrt())
}

/// The calibrated quadratic weight. `structure_norm` is `|J~ b*|_2` for the
/// balanced rule and `|J~ b*|_inf` for the sup rules.
pub fn theoretical_mu(lambda: f64, sparsity: usize, structure_norm: f64, rule: MuRule) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::arg(format!("lambda must be finite and > 0, got {lambda}")));
    }
    if structure_norm == 0.0 {
        return Err(Error::UnpenalizedStructure);
    }
    if !(structure_norm > 0.0) || !structure_norm.is_finite() {
        return Err(Error::arg(format!("structure norm must be finite and >= 0, got {structure_norm}")));
    }
    match rule {
        MuRule::Balanced => {
            if sparsity < 1 {
                return Err(Error::arg("the balanced mu rule needs sparsity >= 1"));
            }
            Ok(lambda * (sparsity as f64).sqrt() / (2.0 * structure_norm))
        }
        MuRule::SupEighth => Ok(lambda / (8.0 * structure_norm)),
        MuRule::SupQuarter => Ok(lambda / (4.0 * structure_norm)),
    }
}

/// The Nemirovski constant `inf_{q >= 2} (q-1) p^(2/q)` together with the
/// minimizing `q`. The stationarity condition reduces to
/// `q^2 - a q + a = 0` with `a = 2 ln p`; the boundary `q = 2` competes.
pub fn k_nem_argmin(p: usize) -> Result<(f64, f64)> {
    if p < 2 {
        return Err(Error::arg(format!("k_nem needs p >= 2, got {p}")));
    }
    let pf = p as f64;
    let lnp = pf.ln();
    let f = |q: f64| (q - 1.0) * pf.powf(2.0 / q);
    let a = 2.0 * lnp;
    let mut best_q = 2.0;
    let mut best_f = f(2.0);
    if a * a >= 4.0 * a {
        let q_star = 0.5 * (a + (a * a - 4.0 * a).sqrt());
        if q_star >= 2.0 {
            let v = f(q_star);
            if v < best_f {
                best_f = v;
                best_q = q_star;
            }
        }
    }
    Ok((best_f, best_q))
}

/// The Nemirovski constant `inf_{q >= 2} (q-1) p^(2/q)`.
pub fn k_nem(p: usize) -> Result<f64> {
    k_nem_argmin(p).map(|(v, _)| v)
}

/// Null-solution threshold: the smallest l1 weight that forces the all-zero
/// fit, `2 max_j |X_j' y| / n`.
pub fn lambda_max(x: &DenseMatrix, y: &DenseVector) -> Result<f64> {
    if x.rows() != y.len() {
        return Err(Error::dims("lambda_max", x.rows(), y.len()));
    }
    let n = x.rows() as f64;
    let mut worst = 0.0_f64;
    for j in 0..x.cols() {
        let mut acc = 0.0;
        for i in 0..x.rows() {
            acc += x.get(i, j) * y.get(i);
        }
        worst = worst.max(acc.abs());
    }
    Ok(2.0 * worst / n)
}

/// Log-spaced grid from `lo` to `hi` inclusive, ascending.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || points == 0 {
        return Err(Error::arg("log_grid needs 0 < lo <= hi and points >= 1"));
    }
    if points == 1 {
        return Ok(vec![hi]);
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    Ok((0..points)
        .map(|i| (llo + (lhi - llo) * (i as f64) / ((points - 1) as f64)).exp())
        .collect())
}

/// Default l1 grid: 50 log-spaced points on `[1e-3 * lambda_max, lambda_max]`.
pub fn default_lambda_grid(x: &DenseMatrix, y: &DenseVector) -> Result<Vec<f64>> {
    let lmax = lambda_max(x, y)?.max(1e-12);
    log_grid(1e-3 * lmax, lmax, 50)
}

/// Default quadratic-weight grid: `{0}` plus 20 log-spaced points on
/// `[1e-4, 10]`.
pub fn default_mu_grid() -> Vec<f64> {
    let mut g = vec![0.0];
    g.extend(log_grid(1e-4, 10.0, 20).expect("static grid"));
    g
}

/// One cell of the cross-validation surface.
#[derive(Debug, Clone)]
pub struct CvCell {
    pub lambda: f64,
    pub mu: f64,
    pub mean_error: f64,
    pub std_error: f64,
}

/// Cross-validation outcome: the chosen pair and the full error surface.
#[derive(Debug, Clone)]
pub struct CVResult {
    pub best_lambda: f64,
    pub best_mu: f64,
    /// Cells ordered lambda-major, mu-minor, following the input grids.
    pub surface: Vec<CvCell>,
    /// Per-cell validation errors, one entry per fold, parallel to `surface`.
    pub fold_errors: Vec<Vec<f64>>,
    pub folds: usize,
}

enum CvObjective<'a> {
    Quad(&'a StructureMatrix),
    Fused,
}

// Inner fits during model selection run at a looser tolerance than final
// fits; warm starts along the descending-lambda path keep them short.
fn cv_settings() -> SolverSettings {
    SolverSettings {
        max_iter: 4_000,
        kkt_tol: 1e-6,
        restart: true,
    }
}

/// Deterministic fold assignment: a seeded shuffle striped modulo `folds`.
fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x666f_6c64, 0));
    order.shuffle(&mut rng);
    let mut fold_of = vec![0; n];
    for (pos, &idx) in order.iter().enumerate() {
        fold_of[idx] = pos % folds;
    }
    fold_of
}

fn submatrix_by_rows(x: &DenseMatrix, keep: &[usize]) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(keep.len(), x.cols());
    for (r, &i) in keep.iter().enumerate() {
        let dst = r * x.cols();
        out.entries_mut()[dst..dst + x.cols()].copy_from_slice(x.row(i));
    }
    out
}

fn subvector(y: &DenseVector, keep: &[usize]) -> DenseVector {
    DenseVector::new(keep.iter().map(|&i| y.get(i)).collect()).expect("finite subset")
}

fn validation_error(xv: &DenseMatrix, yv: &DenseVector, beta: &[f64]) -> f64 {
    let mut rss = 0.0;
    for i in 0..xv.rows() {
        let r = yv.get(i) - crate::numkernel::dot(xv.row(i), beta);
        rss += r * r;
    }
    rss / (xv.rows() as f64)
}

fn cross_validate_impl(
    x: &DenseMatrix,
    y: &DenseVector,
    objective: CvObjective<'_>,
    lambda_grid: &[f64],
    mu_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<CVResult> {
    let n = x.rows();
    if folds < 2 {
        return Err(Error::arg("cross-validation needs folds >= 2"));
    }
    if folds > n {
        return Err(Error::arg(format!(
            "cannot split n = {n} rows into {folds} non-empty folds"
        )));
    }
    if lambda_grid.is_empty() || mu_grid.is_empty() {
        return Err(Error::arg("cross-validation grids must be non-empty"));
    }
    for &l in lambda_grid {
        if !(l >= 0.0) || !l.is_finite() {
            return Err(Error::arg(format!("invalid lambda grid value {l}")));
        }
    }
    for &m in mu_grid {
        if !(m >= 0.0) || !m.is_finite() {
            return Err(Error::arg(format!("invalid mu grid value {m}")));
        }
    }
    if let CvObjective::Quad(s) = &objective {
        if s.p() != x.cols() {
            return Err(Error::dims("cross_validate(structure)", x.cols(), s.p()));
        }
    }

    let fold_of = fold_assignment(n, folds, seed);
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|i| fold_of[*i] != f).collect();
            let val: Vec<usize> = (0..n).filter(|i| fold_of[*i] == f).collect();
            (train, val)
        })
        .collect();

    // Descending-lambda order for warm starts; results are re-indexed after.
    let mut lam_desc: Vec<(usize, f64)> = lambda_grid.iter().copied().enumerate().collect();
    lam_desc.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite lambda"));
    let settings = cv_settings();

    // One task per (mu index, fold): runs the whole lambda path.
    let tasks: Vec<(usize, usize)> = (0..mu_grid.len())
        .flat_map(|mi| (0..folds).map(move |f| (mi, f)))
        .collect();

    let results: Vec<((usize, usize), Vec<f64>)> = tasks
        .par_iter()
        .map(|&(mi, f)| {
            let (train, val) = &splits[f];
            let xt = submatrix_by_rows(x, train);
            let yt = subvector(y, train);
            let xv = submatrix_by_rows(x, val);
            let yv = subvector(y, val);
            let mu = mu_grid[mi];
            let gram = match &objective {
                CvObjective::Quad(s) => GramProblem::new(&xt, &yt, mu, Some(&s.jtilde)),
                CvObjective::Fused => GramProblem::new(&xt, &yt, 0.0, None),
            }
            .expect("validated dimensions");
            let mut errs = vec![0.0; lambda_grid.len()];
            let mut warm: Option<Vec<f64>> = None;
            for &(li, lam) in &lam_desc {
                let out = match &objective {
                    CvObjective::Quad(_) => {
                        fista(&gram, &L1Prox { lambda: lam }, &settings, warm.as_deref(), false)
                    }
                    CvObjective::Fused => fista(
                        &gram,
                        &FusedProx { lambda: lam, gamma: mu },
                        &settings,
                        warm.as_deref(),
                        false,
                    ),
                };
                errs[li] = validation_error(&xv, &yv, &out.beta);
                warm = Some(out.beta);
            }
            ((mi, f), errs)
        })
        .collect();

    // cell index = li * |mu| + mi
    let cells = lambda_grid.len() * mu_grid.len();
    let mut fold_errors = vec![vec![0.0; folds]; cells];
    for ((mi, f), errs) in results {
        for (li, e) in errs.iter().enumerate() {
            fold_errors[li * mu_grid.len() + mi][f] = *e;
        }
    }

    let mut surface = Vec::with_capacity(cells);
    for (li, &lam) in lambda_grid.iter().enumerate() {
        for (mi, &mu) in mu_grid.iter().enumerate() {
            let errs = &fold_errors[li * mu_grid.len() + mi];
            let mean = errs.iter().sum::<f64>() / (folds as f64);
            let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / ((folds - 1) as f64);
            surface.push(CvCell {
                lambda: lam,
                mu,
                mean_error: mean,
                std_error: var.sqrt(),
            });
        }
    }

    // Minimum mean error; ties resolved toward more regularization
    // (larger lambda, then larger mu).
    let mut best = 0;
    for i in 1..surface.len() {
        let (a, b) = (&surface[i], &surface[best]);
        let better = a.mean_error < b.mean_error
            || (a.mean_error == b.mean_error
                && (a.lambda > b.lambda || (a.lambda == b.lambda && a.mu > b.mu)));
        if better {
            best = i;
        }
    }

    Ok(CVResult {
        best_lambda: surface[best].lambda,
        best_mu: surface[best].mu,
        surface,
        fold_errors,
        folds,
    })
}

/// 2-D K-fold cross-validation of the quadratic-penalized estimator over a
/// `(lambda, mu)` grid. Fold assignment is a deterministic function of the
/// seed; the selected cell attains the minimum mean validation error, ties
/// broken toward larger `lambda` then larger `mu`.
pub fn cross_validate(
    x: &DenseMatrix,
    y: &DenseVector,
    s: &StructureMatrix,
    lambda_grid: &[f64],
    mu_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<CVResult> {
    cross_validate_impl(x, y, CvObjective::Quad(s), lambda_grid, mu_grid, folds, seed)
}

/// The same machinery for the fused-lasso comparator, where `mu` weights the
/// l1-fusion penalty.
pub fn cross_validate_fused(
    x: &DenseMatrix,
    y: &DenseVector,
    lambda_grid: &[f64],
    mu_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<CVResult> {
    cross_validate_impl(x, y, CvObjective::Fused, lambda_grid, mu_grid, folds, seed)
}
