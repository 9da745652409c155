//! Minimal dense real linear algebra: SVD, pseudo-inverse, symmetric
//! eigendecomposition, Haar-random orthogonal matrices and ridge solves.
//!
//! Everything here targets small dense matrices (at most a few hundred rows
//! on the decomposition paths). The SVD is one-sided Jacobi, chosen for
//! accuracy at these sizes.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix contains a non-finite entry")]
    NonFinite,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semi-definite (eigenvalue {0:.3e})")]
    NotPsd(f64),
}

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Matrix::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// self^T * other, scaled by `s`. Used for empirical moment matrices.
    pub fn t_matmul_scaled(&self, other: &Matrix, s: f64) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_matmul dimension mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a = self.row(k);
            let b = other.row(k);
            for i in 0..self.cols {
                let ai = a[i];
                if ai == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += ai * b[j];
                }
            }
        }
        out.scale(s)
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Thin SVD: `left * diag(singular) * right_t` reconstructs the input.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// Column-orthonormal, rows x min-dim-extended (thin: rows x n for rows >= n).
    pub left: Matrix,
    /// Nonnegative, nonincreasing.
    pub singular: Vec<f64>,
    /// Row-orthonormal.
    pub right_t: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let k = self.singular.len();
        let mut scaled = self.left.clone();
        for j in 0..k {
            for i in 0..scaled.rows() {
                let v = scaled.get(i, j) * self.singular[j];
                scaled.set(i, j, v);
            }
        }
        scaled.matmul(&self.right_t)
    }
}

const JACOBI_SWEEPS: usize = 100;

/// One-sided Jacobi SVD. Singular values below `1e-13 * sigma_max` are
/// flushed to exact zero and the corresponding left columns completed to an
/// orthonormal set.
pub fn svd(m: &Matrix) -> Result<SvdResult, LinalgError> {
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    if m.rows >= m.cols {
        svd_tall(m)
    } else {
        let r = svd_tall(&m.transpose())?;
        // A^T = U S V^T  =>  A = V S U^T
        Ok(SvdResult {
            left: r.right_t.transpose(),
            singular: r.singular,
            right_t: r.left.transpose(),
        })
    }
}

fn svd_tall(m: &Matrix) -> Result<SvdResult, LinalgError> {
    let (rows, n) = (m.rows, m.cols);
    let mut a = m.clone();
    let mut v = Matrix::identity(n);

    for _ in 0..JACOBI_SWEEPS {
        let mut converged = true;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..rows {
                    let ap = a.get(i, p);
                    let aq = a.get(i, q);
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                let denom = (alpha * beta).sqrt();
                if denom == 0.0 || gamma.abs() <= 1e-15 * denom {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let ap = a.get(i, p);
                    let aq = a.get(i, q);
                    a.set(i, p, c * ap - s * aq);
                    a.set(i, q, s * ap + c * aq);
                }
                for i in 0..n {
                    let vp = v.get(i, p);
                    let vq = v.get(i, q);
                    v.set(i, p, c * vp - s * vq);
                    v.set(i, q, s * vp + c * vq);
                }
            }
        }
        if converged {
            break;
        }
    }

    let mut norms: Vec<f64> = (0..n)
        .map(|j| (0..rows).map(|i| a.get(i, j).powi(2)).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let sigma_max = order.first().map_or(0.0, |&j| norms[j]);
    let zero_tol = 1e-13 * sigma_max;
    for s in norms.iter_mut() {
        if *s <= zero_tol {
            *s = 0.0;
        }
    }

    let mut left = Matrix::zeros(rows, n);
    let mut right_t = Matrix::zeros(n, n);
    let mut filled: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (out_j, &j) in order.iter().enumerate() {
        let col: Vec<f64> = if norms[j] > 0.0 {
            (0..rows).map(|i| a.get(i, j) / norms[j]).collect()
        } else {
            orthonormal_completion(rows, &filled)
        };
        for i in 0..rows {
            left.set(i, out_j, col[i]);
        }
        filled.push(col);
        for i in 0..n {
            right_t.set(out_j, i, v.get(i, j));
        }
    }
    let singular: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    Ok(SvdResult { left, singular, right_t })
}

/// Gram-Schmidt a canonical vector against `existing` columns.
fn orthonormal_completion(rows: usize, existing: &[Vec<f64>]) -> Vec<f64> {
    for k in 0..rows {
        let mut cand = vec![0.0; rows];
        cand[k] = 1.0;
        for _ in 0..2 {
            for col in existing {
                let dot: f64 = cand.iter().zip(col).map(|(a, b)| a * b).sum();
                for (c, e) in cand.iter_mut().zip(col) {
                    *c -= dot * e;
                }
            }
        }
        let norm: f64 = cand.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for c in cand.iter_mut() {
                *c /= norm;
            }
            return cand;
        }
    }
    panic!("orthonormal completion failed");
}

/// Moore-Penrose pseudo-inverse. Singular values below `tol * sigma_max` are
/// treated as zero.
pub fn pinv(m: &Matrix, tol: f64) -> Result<Matrix, LinalgError> {
    assert!(tol >= 0.0, "pinv tolerance must be nonnegative");
    let d = svd(m)?;
    let cutoff = tol * d.singular.first().copied().unwrap_or(0.0);
    let k = d.singular.len();
    // V * S^+ * U^T
    let mut vs = d.right_t.transpose();
    for j in 0..k {
        let inv = if d.singular[j] > cutoff && d.singular[j] > 0.0 {
            1.0 / d.singular[j]
        } else {
            0.0
        };
        for i in 0..vs.rows() {
            let val = vs.get(i, j) * inv;
            vs.set(i, j, val);
        }
    }
    Ok(vs.matmul(&d.left.transpose()))
}

/// Default relative cutoff for pseudo-inverses.
pub const PINV_TOL: f64 = 1e-10;

/// Symmetric eigendecomposition via cyclic Jacobi.
/// Returns eigenvalues in nonincreasing order and eigenvectors as columns.
pub fn eig_sym(m: &Matrix) -> Result<(Vec<f64>, Matrix), LinalgError> {
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    if m.rows != m.cols {
        return Err(LinalgError::DimensionMismatch(format!(
            "eig_sym needs a square matrix, got {}x{}",
            m.rows, m.cols
        )));
    }
    let n = m.rows;
    let scale = m.max_abs().max(1.0);
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((m.get(i, j) - m.get(j, i)).abs());
        }
    }
    if asym > 1e-10 * scale {
        return Err(LinalgError::NotSymmetric(asym));
    }

    let mut a = m.clone();
    // symmetrize exactly so rotations stay consistent
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a.get(i, j) + a.get(j, i));
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    let mut v = Matrix::identity(n);
    for _ in 0..JACOBI_SWEEPS {
        let mut off: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(a.get(i, j).abs());
            }
        }
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= 1e-18 * scale {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let aip = a.get(i, p);
                    let aiq = a.get(i, q);
                    a.set(i, p, c * aip - s * aiq);
                    a.set(i, q, s * aip + c * aiq);
                }
                for j in 0..n {
                    let apj = a.get(p, j);
                    let aqj = a.get(q, j);
                    a.set(p, j, c * apj - s * aqj);
                    a.set(q, j, s * apj + c * aqj);
                }
                for i in 0..n {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, c * vip - s * viq);
                    v.set(i, q, s * vip + c * viq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).partial_cmp(&a.get(i, i)).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&j| a.get(j, j)).collect();
    let eigenvectors = Matrix::from_fn(n, n, |i, j| v.get(i, order[j]));
    Ok((eigenvalues, eigenvectors))
}

/// Haar-distributed random orthogonal matrix: modified Gram-Schmidt QR of a
/// standard Gaussian matrix. MGS yields R with positive diagonal, which is
/// exactly the sign convention that makes Q Haar.
pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> Matrix {
    assert!(n >= 1);
    let g = Matrix::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| g.col(j)).collect();
    for j in 0..n {
        // two MGS passes for orthogonality well below 1e-12
        for _ in 0..2 {
            for k in 0..j {
                let kcol = cols[k].clone();
                let dot: f64 = cols[j].iter().zip(&kcol).map(|(a, b)| a * b).sum();
                for (cj, ck) in cols[j].iter_mut().zip(&kcol) {
                    *cj -= dot * ck;
                }
            }
        }
        let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for c in cols[j].iter_mut() {
            *c /= norm;
        }
    }
    Matrix::from_fn(n, n, |i, j| cols[j][i])
}

/// Solve `(g + lambda I) x = b` for symmetric PSD `g`; pseudo-inverse path at
/// `lambda = 0`.
pub fn ridge_solve(g: &Matrix, b: &[f64], lambda: f64) -> Result<Vec<f64>, LinalgError> {
    assert!(lambda >= 0.0);
    if g.rows() != b.len() {
        return Err(LinalgError::DimensionMismatch(format!(
            "ridge_solve: matrix is {}x{}, rhs has length {}",
            g.rows(),
            g.cols(),
            b.len()
        )));
    }
    let (w, v) = eig_sym(g)?;
    if let Some(&min) = w.last() {
        if min < -1e-8 {
            return Err(LinalgError::NotPsd(min));
        }
    }
    let wmax = w.first().copied().unwrap_or(0.0).max(0.0);
    let vt_b = v.transpose().matvec(b);
    let scaled: Vec<f64> = w
        .iter()
        .zip(&vt_b)
        .map(|(&wi, &c)| {
            let wi = wi.max(0.0);
            if lambda > 0.0 {
                c / (wi + lambda)
            } else if wi > PINV_TOL * wmax && wi > 0.0 {
                c / wi
            } else {
                0.0
            }
        })
        .collect();
    Ok(v.matvec(&scaled))
}
