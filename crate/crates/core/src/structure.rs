//! Penalty structure matrices.
//!
//! Each penalty family is described by an `m x p` matrix `J`; the quadratic
//! penalty on a coefficient vector is `|J b|_2^2 = b' J'J b`. The module
//! builds `J` and its Gram form for the supported families, evaluates the
//! penalty, and performs the data augmentation that folds the quadratic term
//! into extra least-squares rows.

use crate::error::{Error, Result};
use crate::numkernel::{matvec, DenseMatrix, DenseVector};

/// The supported quadratic penalty families.
#[derive(Debug, Clone, PartialEq)]
pub enum StructureKind {
    /// No quadratic penalty: `J = 0` (square, `m = p`).
    Lasso,
    /// Ridge-style penalty: `J` is the identity.
    ElasticNet,
    /// Squared first differences: row 0 of `J` is zero and row `j >= 1`
    /// carries `+1` at column `j-1` and `-1` at column `j`.
    SmoothLasso,
    /// Correlation-driven fusion: `J` is symmetric `p x p` with
    /// `J_kk = w_kk` and `J_jk = -s_jk * w_jk` off the diagonal, where
    /// `s_jk` is the sign of the sample correlation between predictors
    /// `j` and `k` and `w_jk >= 0` are weights.
    WeightedFusion {
        weights: DenseMatrix,
        signs: DenseMatrix,
    },
    /// Explicit user matrix with `p` columns.
    Custom(DenseMatrix),
}

impl StructureKind {
    pub fn name(&self) -> &'static str {
        match self {
            StructureKind::Lasso => "lasso",
            StructureKind::ElasticNet => "elastic-net",
            StructureKind::SmoothLasso => "smooth-lasso",
            StructureKind::WeightedFusion { .. } => "weighted-fusion",
            StructureKind::Custom(_) => "custom",
        }
    }
}

/// A structure matrix together with its Gram form `J'J`.
#[derive(Debug, Clone)]
pub struct StructureMatrix {
    pub kind: StructureKind,
    pub j: DenseMatrix,
    pub jtilde: DenseMatrix,
}

impl StructureMatrix {
    pub fn p(&self) -> usize {
        self.j.cols()
    }

    pub fn m(&self) -> usize {
        self.j.rows()
    }

    /// `J b` as a vector.
    pub fn apply(&self, beta: &DenseVector) -> Result<DenseVector> {
        matvec(&self.j, beta)
    }
}

/// Builds the structure matrix for a penalty family at dimension `p`.
pub fn build_structure(kind: StructureKind, p: usize) -> Result<StructureMatrix> {
    let min_p = match kind {
        StructureKind::SmoothLasso | StructureKind::WeightedFusion { .. } => 2,
        _ => 1,
    };
    if p < min_p {
        return Err(Error::arg(format!(
            "{} structure needs p >= {min_p}, got {p}",
            kind.name()
        )));
    }
    let j = match &kind {
        StructureKind::Lasso => DenseMatrix::zeros(p, p),
        StructureKind::ElasticNet => DenseMatrix::identity(p),
        StructureKind::SmoothLasso => first_difference_matrix(p),
        StructureKind::WeightedFusion { weights, signs } => {
            if weights.rows() != p || weights.cols() != p {
                return Err(Error::dims(
                    "build_structure(weighted-fusion weights)",
                    format!("{p}x{p}"),
                    format!("{}x{}", weights.rows(), weights.cols()),
                ));
            }
            if signs.rows() != p || signs.cols() != p {
                return Err(Error::dims(
                    "build_structure(weighted-fusion signs)",
                    format!("{p}x{p}"),
                    format!("{}x{}", signs.rows(), signs.cols()),
                ));
            }
            for i in 0..p {
                for k in 0..p {
                    let w = weights.get(i, k);
                    if w < 0.0 {
                        return Err(Error::arg(format!("weighted-fusion weight w[{i},{k}] = {w} < 0")));
                    }
                    if (w - weights.get(k, i)).abs() > 1e-12 * w.abs().max(1.0) {
                        return Err(Error::arg(format!("weighted-fusion weights not symmetric at ({i},{k})")));
                    }
                }
            }
            // sign(0) = 0, unlike f64::signum
            let sgn = |v: f64| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            };
            DenseMatrix::from_fn(p, p, |i, k| {
                if i == k {
                    weights.get(i, i)
                } else {
                    -sgn(signs.get(i, k)) * weights.get(i, k)
                }
            })?
        }
        StructureKind::Custom(m) => {
            if m.cols() != p {
                return Err(Error::dims("build_structure(custom)", format!("{p} columns"), m.cols()));
            }
            m.clone()
        }
    };
    let jtilde = j.gram_scaled(1.0);
    Ok(StructureMatrix { kind, j, jtilde })
}

fn first_difference_matrix(p: usize) -> DenseMatrix {
    let mut j = DenseMatrix::zeros(p, p);
    for r in 1..p {
        j.entries_mut()[r * p + r - 1] = 1.0;
        j.entries_mut()[r * p + r] = -1.0;
    }
    j
}

/// Builds a weighted-fusion kind from a design matrix: signs are the signs of
/// the sample correlations `X_j' X_k / n`, and the default weights are their
/// magnitudes. User weights, when given, must be symmetric and non-negative.
pub fn weighted_fusion_from_design(x: &DenseMatrix, weights: Option<DenseMatrix>) -> Result<StructureKind> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::arg("weighted fusion needs a non-empty design"));
    }
    let corr = x.gram_scaled(n as f64);
    let p = corr.rows();
    let signs = corr.clone();
    let weights = match weights {
        Some(w) => w,
        None => DenseMatrix::from_fn(p, p, |i, k| corr.get(i, k).abs())?,
    };
    Ok(StructureKind::WeightedFusion { weights, signs })
}

/// Loads a custom structure kind from headerless CSV text (m rows of p
/// comma-separated floats).
pub fn custom_from_csv_str(text: &str) -> Result<StructureKind> {
    Ok(StructureKind::Custom(DenseMatrix::from_csv_str(text)?))
}

/// Quadratic penalty value `|J b|_2^2` (without any multiplier).
pub fn quad_penalty(beta: &DenseVector, s: &StructureMatrix) -> Result<f64> {
    if beta.len() != s.p() {
        return Err(Error::dims("quad_penalty", s.p(), beta.len()));
    }
    let jb = s.apply(beta)?;
    Ok(jb.dot(&jb))
}

/// Sum of squared successive differences of a vector. Under the
/// first-difference structure this equals `quad_penalty`.
pub fn smoothness(beta: &DenseVector) -> Result<f64> {
    if beta.len() < 2 {
        return Err(Error::arg(format!("smoothness needs length >= 2, got {}", beta.len())));
    }
    let b = beta.as_slice();
    Ok(b.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum())
}

/// The expanded least-squares problem whose plain l1-penalized criterion
/// matches the quadratic-penalized one: `X` gains `m` rows `sqrt(n*mu) J`
/// and `y` gains `m` zeros.
#[derive(Debug, Clone)]
pub struct AugmentedProblem {
    pub xaug: DenseMatrix,
    pub yaug: DenseVector,
    pub n_original: usize,
    pub mu: f64,
}

pub fn augment(x: &DenseMatrix, y: &DenseVector, s: &StructureMatrix, mu: f64) -> Result<AugmentedProblem> {
    if x.cols() != s.p() {
        return Err(Error::dims("augment(design columns)", s.p(), x.cols()));
    }
    if y.len() != x.rows() {
        return Err(Error::dims("augment(response length)", x.rows(), y.len()));
    }
    if mu < 0.0 || !mu.is_finite() {
        return Err(Error::arg(format!("mu must be finite and >= 0, got {mu}")));
    }
    let n = x.rows();
    let m = s.m();
    let p = s.p();
    let scale = ((n as f64) * mu).sqrt();
    let mut xaug = DenseMatrix::zeros(n + m, p);
    xaug.entries_mut()[..n * p].copy_from_slice(x.entries());
    for r in 0..m {
        let src = s.j.row(r);
        let dst = &mut xaug.entries_mut()[(n + r) * p..(n + r + 1) * p];
        for (d, v) in dst.iter_mut().zip(src) {
            *d = scale * v;
        }
    }
    let mut yv = y.as_slice().to_vec();
    yv.extend(std::iter::repeat(0.0).take(m));
    Ok(AugmentedProblem {
        xaug,
        yaug: DenseVector::new(yv)?,
        n_original: n,
        mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DenseVector {
        DenseVector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn smooth_lasso_layout() {
        let s = build_structure(StructureKind::SmoothLasso, 3).unwrap();
        assert_eq!(
            s.j.entries(),
            &[0.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 1.0, -1.0]
        );
        // Gram form by hand: [[1,-1,0],[-1,2,-1],[0,-1,1]]
        assert_eq!(
            s.jtilde.entries(),
            &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]
        );
    }

    #[test]
    fn elastic_net_is_identity() {
        let s = build_structure(StructureKind::ElasticNet, 4).unwrap();
        assert_eq!(s.j, DenseMatrix::identity(4));
        assert_eq!(s.jtilde, DenseMatrix::identity(4));
    }

    #[test]
    fn lasso_is_zero_square() {
        let s = build_structure(StructureKind::Lasso, 3).unwrap();
        assert_eq!(s.m(), 3);
        assert!(s.j.entries().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn rejects_too_small_p() {
        assert!(build_structure(StructureKind::SmoothLasso, 1).is_err());
        assert!(build_structure(StructureKind::Lasso, 1).is_ok());
    }

    #[test]
    fn quad_penalty_values() {
        let s = build_structure(StructureKind::SmoothLasso, 3).unwrap();
        assert_eq!(quad_penalty(&v(&[1.0, 1.0, 1.0]), &s).unwrap(), 0.0);
        assert_eq!(quad_penalty(&v(&[1.0, 0.0, 1.0]), &s).unwrap(), 2.0);
        let en = build_structure(StructureKind::ElasticNet, 2).unwrap();
        let val = quad_penalty(&v(&[3.0, -2.0]), &en).unwrap();
        assert!((val - 13.0).abs() < 1e-14);
    }

    #[test]
    fn quad_penalty_rejects_bad_len() {
        let s = build_structure(StructureKind::SmoothLasso, 3).unwrap();
        assert!(quad_penalty(&v(&[1.0, 2.0]), &s).is_err());
    }

    #[test]
    fn smoothness_values() {
        assert_eq!(smoothness(&v(&[5.0, 5.0, 5.0, 5.0])).unwrap(), 0.0);
        assert_eq!(smoothness(&v(&[0.0, 1.0, 0.0, 1.0])).unwrap(), 3.0);
        assert!(smoothness(&v(&[1.0])).is_err());
    }

    #[test]
    fn smoothness_matches_quad_penalty_under_first_difference() {
        let s = build_structure(StructureKind::SmoothLasso, 5).unwrap();
        let b = v(&[0.3, -1.2, 0.0, 2.5, 2.5]);
        let a = smoothness(&b).unwrap();
        let q = quad_penalty(&b, &s).unwrap();
        assert!((a - q).abs() <= 1e-14 * a.max(1.0));
    }

    #[test]
    fn augment_shapes_and_zero_block() {
        let x = DenseMatrix::from_fn(10, 4, |i, j| (i * 4 + j) as f64 / 7.0).unwrap();
        let y = DenseVector::new((0..10).map(|i| i as f64).collect()).unwrap();
        let s = build_structure(StructureKind::SmoothLasso, 4).unwrap();
        let aug = augment(&x, &y, &s, 0.7).unwrap();
        assert_eq!(aug.xaug.rows(), 14);
        assert_eq!(aug.xaug.cols(), 4);
        assert_eq!(aug.yaug.len(), 14);
        assert!(aug.yaug.as_slice()[10..].iter().all(|&v| v == 0.0));

        let aug0 = augment(&x, &y, &s, 0.0).unwrap();
        assert!(aug0.xaug.entries()[40..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn augment_elastic_net_unit_block() {
        // n = 2, mu = 0.5: sqrt(n*mu) = 1, bottom block is the identity
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let y = v(&[1.0, -1.0]);
        let s = build_structure(StructureKind::ElasticNet, 2).unwrap();
        let aug = augment(&x, &y, &s, 0.5).unwrap();
        assert_eq!(&aug.xaug.entries()[4..], &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn augment_rejects_negative_mu() {
        let x = DenseMatrix::identity(2);
        let y = v(&[1.0, 2.0]);
        let s = build_structure(StructureKind::ElasticNet, 2).unwrap();
        assert!(augment(&x, &y, &s, -0.1).is_err());
    }

    #[test]
    fn weighted_fusion_sign_layout() {
        // two perfectly anti-correlated columns
        let x = DenseMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0], vec![2.0, -2.0]]).unwrap();
        let kind = weighted_fusion_from_design(&x, None).unwrap();
        let s = build_structure(kind, 2).unwrap();
        // negative correlation: off-diagonal of J is +w
        assert!(s.j.get(0, 1) > 0.0);
        assert!(s.j.get(0, 0) > 0.0);
        assert!((s.j.get(0, 1) - s.j.get(1, 0)).abs() < 1e-15);
    }

    #[test]
    fn weighted_fusion_zero_correlation_gives_zero_coupling() {
        // orthogonal columns with user-supplied unit weights: the off-diagonal
        // coupling vanishes because the sample correlation sign is zero
        let x = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let weights = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let kind = weighted_fusion_from_design(&x, Some(weights)).unwrap();
        let s = build_structure(kind, 2).unwrap();
        assert_eq!(s.j.get(0, 1), 0.0);
        assert_eq!(s.j.get(0, 0), 1.0);
    }

    #[test]
    fn weighted_fusion_rejects_bad_weights() {
        let signs = DenseMatrix::identity(2);
        let asym = DenseMatrix::from_rows(&[vec![1.0, 0.5], vec![0.2, 1.0]]).unwrap();
        assert!(build_structure(
            StructureKind::WeightedFusion { weights: asym, signs: signs.clone() },
            2
        )
        .is_err());
        let negative = DenseMatrix::from_rows(&[vec![1.0, -0.5], vec![-0.5, 1.0]]).unwrap();
        assert!(build_structure(StructureKind::WeightedFusion { weights: negative, signs }, 2).is_err());
    }

    #[test]
    fn custom_from_csv() {
        let kind = custom_from_csv_str("1,0,0\n0,2,0\n").unwrap();
        let s = build_structure(kind, 3).unwrap();
        assert_eq!(s.m(), 2);
        assert_eq!(s.jtilde.get(1, 1), 4.0);
    }
}
