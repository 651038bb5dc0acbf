//! Minimal dense linear-algebra kernel.
//!
//! Row-major `f64` storage, matrix/vector products, an unpivoted Cholesky
//! factorization and a cyclic Jacobi symmetric eigensolver. Everything is
//! immutable after construction and every constructor rejects NaN/Inf, so the
//! rest of the crate can assume finite data throughout.

use crate::error::{Error, Result};

/// Dense row-major matrix of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major entries, rejecting wrong lengths and
    /// non-finite values.
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::dims(
                "DenseMatrix::new",
                format!("{} entries ({rows}x{cols})", rows * cols),
                entries.len(),
            ));
        }
        if let Some(idx) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: idx });
        }
        Ok(DenseMatrix { rows, cols, entries })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.entries[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix by evaluating `f(i, j)`; the values must be finite.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push(f(i, j));
            }
        }
        Self::new(rows, cols, entries)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::dims("DenseMatrix::from_rows", c, format!("{} in row {i}", row.len())));
            }
        }
        Self::new(r, c, rows.concat())
    }

    /// Parses a headerless CSV matrix: one row per line, comma-separated floats.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut width: Option<usize> = None;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut row = Vec::new();
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| Error::CsvParse {
                    line: lineno + 1,
                    message: format!("cannot parse float from {:?}", field.trim()),
                })?;
                if !v.is_finite() {
                    return Err(Error::CsvParse {
                        line: lineno + 1,
                        message: "non-finite value".to_string(),
                    });
                }
                row.push(v);
            }
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(Error::CsvParse {
                        line: lineno + 1,
                        message: format!("expected {w} fields, got {}", row.len()),
                    })
                }
                _ => {}
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::CsvParse {
                line: 1,
                message: "empty matrix".to_string(),
            });
        }
        Self::from_rows(&rows)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.entries[j * self.rows + i] = self.entries[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::dims(
                "matmul",
                format!("lhs cols == rhs rows ({})", self.cols),
                other.rows,
            ));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let lrow = self.row(i);
            let orow = &mut out.entries[i * other.cols..(i + 1) * other.cols];
            for (k, &lik) in lrow.iter().enumerate() {
                if lik == 0.0 {
                    continue;
                }
                let rrow = other.row(k);
                for j in 0..other.cols {
                    orow[j] += lik * rrow[j];
                }
            }
        }
        Ok(out)
    }

    /// Gram form `A' A / scale` computed without materializing the transpose.
    pub fn gram_scaled(&self, scale: f64) -> DenseMatrix {
        let p = self.cols;
        let mut out = DenseMatrix::zeros(p, p);
        for r in 0..self.rows {
            let row = self.row(r);
            for i in 0..p {
                let xi = row[i];
                if xi == 0.0 {
                    continue;
                }
                let dst = &mut out.entries[i * p..(i + 1) * p];
                for j in i..p {
                    dst[j] += xi * row[j];
                }
            }
        }
        for i in 0..p {
            for j in i..p {
                let v = out.entries[i * p + j] / scale;
                out.entries[i * p + j] = v;
                out.entries[j * p + i] = v;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    fn require_symmetric(&self, context: &'static str) -> Result<()> {
        if self.rows != self.cols {
            return Err(Error::dims(context, "square matrix", format!("{}x{}", self.rows, self.cols)));
        }
        let asym = self.max_asymmetry();
        let tol = 1e-12 * self.max_abs().max(1.0);
        if asym > tol {
            return Err(Error::NotSymmetric { max_asym: asym });
        }
        Ok(())
    }
}

/// Dense vector of 64-bit floats; finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector {
    entries: Vec<f64>,
}

impl DenseVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if let Some(idx) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: idx });
        }
        Ok(DenseVector { entries })
    }

    pub fn zeros(n: usize) -> Self {
        DenseVector { entries: vec![0.0; n] }
    }

    /// Parses a CSV vector: one value per line (a single comma-separated line
    /// is also accepted).
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let non_empty: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .collect();
        let mut out = Vec::new();
        for (lineno, line) in &non_empty {
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| Error::CsvParse {
                    line: lineno + 1,
                    message: format!("cannot parse float from {:?}", field.trim()),
                })?;
                if !v.is_finite() {
                    return Err(Error::CsvParse {
                        line: lineno + 1,
                        message: "non-finite value".to_string(),
                    });
                }
                out.push(v);
            }
        }
        if out.is_empty() {
            return Err(Error::CsvParse {
                line: 1,
                message: "empty vector".to_string(),
            });
        }
        DenseVector::new(out)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.entries[i]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn dot(&self, other: &DenseVector) -> f64 {
        dot(&self.entries, &other.entries)
    }

    pub fn norm_l1(&self) -> f64 {
        self.entries.iter().map(|v| v.abs()).sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_linf(&self) -> f64 {
        self.entries.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Matrix-vector product `A v`.
pub fn matvec(a: &DenseMatrix, v: &DenseVector) -> Result<DenseVector> {
    if a.cols() != v.len() {
        return Err(Error::dims(
            "matvec",
            format!("vector of length {}", a.cols()),
            v.len(),
        ));
    }
    let mut out = vec![0.0; a.rows()];
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(a.row(i), v.as_slice());
    }
    DenseVector::new(out)
}

/// In-place product `out = A v` over raw slices; used by the solver hot loop.
#[inline]
pub(crate) fn matvec_into(a: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(v.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for i in 0..rows {
        out[i] = dot(&a[i * cols..(i + 1) * cols], v);
    }
}

/// Unpivoted Cholesky factorization `A = L L'` of a symmetric positive
/// definite matrix; returns the lower triangle `L`.
pub fn cholesky(a: &DenseMatrix) -> Result<DenseMatrix> {
    a.require_symmetric("cholesky")?;
    let n = a.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a.get(j, j);
        for k in 0..j {
            let ljk = l.get(j, k);
            diag -= ljk * ljk;
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite { index: j, pivot: diag });
        }
        let ljj = diag.sqrt();
        l.entries_mut()[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut v = a.get(i, j);
            for k in 0..j {
                v -= l.get(i, k) * l.get(j, k);
            }
            l.entries_mut()[i * n + j] = v / ljj;
        }
    }
    Ok(l)
}

/// Solves `A x = b` for symmetric positive definite `A` through its Cholesky
/// factor (forward then backward substitution).
pub fn solve_spd(a: &DenseMatrix, b: &DenseVector) -> Result<DenseVector> {
    let l = cholesky(a)?;
    let n = l.rows();
    if b.len() != n {
        return Err(Error::dims("solve_spd", n, b.len()));
    }
    // L z = b
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut v = b.get(i);
        for k in 0..i {
            v -= l.get(i, k) * z[k];
        }
        z[i] = v / l.get(i, i);
    }
    // L' x = z
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = z[i];
        for k in (i + 1)..n {
            v -= l.get(k, i) * x[k];
        }
        x[i] = v / l.get(i, i);
    }
    DenseVector::new(x)
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method, sorted
/// ascending.
pub fn sym_eigvals(a: &DenseMatrix) -> Result<DenseVector> {
    a.require_symmetric("sym_eigvals")?;
    let n = a.rows();
    if n == 0 {
        return Ok(DenseVector::zeros(0));
    }
    let mut m = a.entries().to_vec();
    let frob = a.frobenius_norm().max(f64::MIN_POSITIVE);
    let tol = 1e-15 * frob;

    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = m[i * n + j];
                s += 2.0 * v * v;
            }
        }
        s.sqrt()
    };

    for _sweep in 0..100 {
        if off(&m) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q.
                m[p * n + p] = app - t * apq;
                m[q * n + q] = aqq + t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    let new_kp = c * akp - s * akq;
                    let new_kq = s * akp + c * akq;
                    m[k * n + p] = new_kp;
                    m[p * n + k] = new_kp;
                    m[k * n + q] = new_kq;
                    m[q * n + k] = new_kq;
                }
            }
        }
    }

    let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    DenseVector::new(eig)
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration with a
/// deterministic start; slight underestimation is possible, callers add their
/// own safety margin.
pub(crate) fn spectral_upper(m: &[f64], p: usize) -> f64 {
    if p == 0 {
        return 0.0;
    }
    // deterministic, not orthogonal to anything in practice
    let mut v: Vec<f64> = (0..p).map(|i| 1.0 + (i as f64) * 1e-3).collect();
    let norm = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mut w = vec![0.0; p];
    let mut lam = 0.0_f64;
    for _ in 0..500 {
        matvec_into(m, p, p, &v, &mut w);
        let new_lam = dot(&v, &w);
        let wn = dot(&w, &w).sqrt();
        if wn <= f64::MIN_POSITIVE {
            return 0.0;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / wn;
        }
        if (new_lam - lam).abs() <= 1e-13 * new_lam.abs().max(1e-300) {
            lam = new_lam;
            break;
        }
        lam = new_lam;
    }
    lam.max(0.0)
}
