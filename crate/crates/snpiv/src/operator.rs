//! Conditional expectation operator with exactly known SVD over
//! X = Z = [0, 2pi] with uniform marginals.
//!
//! The operator is `1 (x) 1 + sum_i sigma_i u_i (x) v_i` where the
//! nonconstant singular functions are orthogonal rotations of the
//! orthonormal family `sqrt(2) sin(k t)`, k = 1..r. Everything downstream
//! (sampling, feature learning, 2SLS, diagnostics) is evaluated against this
//! ground truth.

use crate::features::FeatureMap;
use crate::linalg::{svd, Matrix};
use crate::par;
use std::f64::consts::PI;
use std::fmt::Write as _;
use thiserror::Error;

pub const DOMAIN: f64 = 2.0 * PI;

/// Extra rotated-sine tail functions appended to the singular basis when
/// representing finite-rank operators as matrices.
pub const TAIL_FUNCTIONS: usize = 20;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("singular values must lie in [0,1] and be nonincreasing")]
    InvalidSigma,
    #[error("rotation matrix is not orthogonal (max deviation {0:.3e})")]
    NotOrthogonal(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("point {0} outside [0, 2pi]")]
    OutOfDomain(f64),
    #[error("truncation index {k} falls on a tie (sigma_{k} = sigma_{next})", next = k + 1)]
    TruncationTie { k: usize },
    #[error("grid resolution {0} too low, need at least {1}")]
    GridTooCoarse(usize, usize),
    #[error("malformed operator file: {0}")]
    Parse(String),
}

/// Uniform probability quadrature on [0, 2pi]: nodes `2pi j / n`, weight `1/n`.
/// Exact for trigonometric polynomials of degree below n.
#[derive(Debug, Clone)]
pub struct Grid {
    nodes: Vec<f64>,
    weight: f64,
}

impl Grid {
    pub fn new(n_points: usize) -> Self {
        assert!(n_points >= 1);
        let nodes = (0..n_points).map(|j| DOMAIN * j as f64 / n_points as f64).collect();
        Grid { nodes, weight: 1.0 / n_points as f64 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Quadrature integral of `f` against the uniform probability measure.
    pub fn integrate(&self, f: impl Fn(f64) -> f64 + Sync) -> f64 {
        self.weight * par::sum_indexed(self.nodes.len(), |i| f(self.nodes[i]))
    }
}

/// Coefficients on the singular basis: a constant component plus `r`
/// components on `v_i` (X side) or `u_i` (Z side).
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffVector {
    pub constant: f64,
    pub coeffs: Vec<f64>,
}

impl CoeffVector {
    pub fn zeros(r: usize) -> Self {
        CoeffVector { constant: 0.0, coeffs: vec![0.0; r] }
    }
}

/// A conditional expectation operator represented by its exact SVD.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOperator {
    r: usize,
    sigma: Vec<f64>,
    rot_x: Matrix,
    rot_z: Matrix,
    /// Rescale applied to `sigma` at construction to keep the density
    /// nonnegative; 1.0 when none was needed.
    scale: f64,
    seed: u64,
}

/// Resolution of the density scan used for the nonnegativity check and the
/// rejection-sampling envelope.
pub const DENSITY_SCAN: usize = 512;

impl SpectralOperator {
    /// Builds an operator from a raw singular-value profile and two rotation
    /// matrices. If the implied density dips below zero on a 512x512 grid,
    /// the whole sigma vector is rescaled by the largest factor restoring
    /// nonnegativity; the factor is recorded in `scale`.
    pub fn new(
        sigma: Vec<f64>,
        rot_x: Matrix,
        rot_z: Matrix,
        seed: u64,
    ) -> Result<Self, OperatorError> {
        let r = sigma.len();
        if sigma.iter().any(|&s| !(0.0..=1.0 + 1e-12).contains(&s))
            || sigma.windows(2).any(|w| w[0] < w[1])
        {
            return Err(OperatorError::InvalidSigma);
        }
        for (name, m) in [("rot_x", &rot_x), ("rot_z", &rot_z)] {
            if m.rows() != r || m.cols() != r {
                return Err(OperatorError::DimensionMismatch(format!(
                    "{name} must be {r}x{r}, got {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
            let dev = m.transpose().matmul(m).sub(&Matrix::identity(r)).max_abs();
            if dev > 1e-12 {
                return Err(OperatorError::NotOrthogonal(dev));
            }
        }
        let mut op = SpectralOperator { r, sigma, rot_x, rot_z, scale: 1.0, seed };
        if r > 0 {
            let grid = Grid::new(DENSITY_SCAN);
            let min = op.density_min_on(&grid);
            if min < 0.0 {
                // density = 1 + s(x,z); min of s is (min - 1) here
                let s_min = min - 1.0;
                let factor = -1.0 / s_min;
                debug_assert!(factor < 1.0);
                for s in op.sigma.iter_mut() {
                    *s *= factor;
                }
                op.scale = factor;
            }
        }
        Ok(op)
    }

    fn density_min_on(&self, grid: &Grid) -> f64 {
        let n = grid.len();
        let rights: Vec<Vec<f64>> =
            par::map_indexed(n, |i| self.eval_right(grid.nodes()[i]).unwrap());
        let lefts: Vec<Vec<f64>> =
            par::map_indexed(n, |i| self.eval_left(grid.nodes()[i]).unwrap());
        let mins = par::map_indexed(n, |zi| {
            let u = &lefts[zi];
            let mut m = f64::INFINITY;
            for v in &rights {
                let mut p = 1.0;
                for k in 0..self.r {
                    p += self.sigma[k] * u[k] * v[k];
                }
                m = m.min(p);
            }
            m
        });
        mins.into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Grid maximum of the density, used for the rejection envelope.
    pub fn density_max(&self) -> f64 {
        let grid = Grid::new(DENSITY_SCAN);
        let n = grid.len();
        let rights: Vec<Vec<f64>> =
            par::map_indexed(n, |i| self.eval_right(grid.nodes()[i]).unwrap());
        let lefts: Vec<Vec<f64>> =
            par::map_indexed(n, |i| self.eval_left(grid.nodes()[i]).unwrap());
        let maxs = par::map_indexed(n, |zi| {
            let u = &lefts[zi];
            let mut m = f64::NEG_INFINITY;
            for v in &rights {
                let mut p = 1.0;
                for k in 0..self.r {
                    p += self.sigma[k] * u[k] * v[k];
                }
                m = m.max(p);
            }
            m
        });
        maxs.into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rot_x(&self) -> &Matrix {
        &self.rot_x
    }

    pub fn rot_z(&self) -> &Matrix {
        &self.rot_z
    }

    /// Right singular functions (X side): `rot_x * (sqrt(2) sin(k x))_k`.
    /// The sqrt(2) factor makes the family orthonormal under the uniform
    /// probability measure, so `sigma` are true singular values.
    pub fn eval_right(&self, x: f64) -> Result<Vec<f64>, OperatorError> {
        check_domain(x)?;
        Ok(self.rot_x.matvec(&sine_family(x, self.r)))
    }

    /// Left singular functions (Z side): `rot_z * (sqrt(2) sin(k z))_k`.
    pub fn eval_left(&self, z: f64) -> Result<Vec<f64>, OperatorError> {
        check_domain(z)?;
        Ok(self.rot_z.matvec(&sine_family(z, self.r)))
    }

    /// Joint density w.r.t. the product of uniform marginals:
    /// `1 + sum_i sigma_i u_i(z) v_i(x)`.
    pub fn density(&self, x: f64, z: f64) -> Result<f64, OperatorError> {
        let v = self.eval_right(x)?;
        let u = self.eval_left(z)?;
        let mut p = 1.0;
        for k in 0..self.r {
            p += self.sigma[k] * u[k] * v[k];
        }
        Ok(p)
    }

    /// Applies the operator to coefficients in the v-basis, producing
    /// coefficients in the u-basis: the constant passes through, component i
    /// is scaled by `sigma_i`.
    pub fn apply(&self, h: &CoeffVector) -> Result<CoeffVector, OperatorError> {
        if h.coeffs.len() != self.r {
            return Err(OperatorError::DimensionMismatch(format!(
                "coefficient vector has length {}, operator rank is {}",
                h.coeffs.len(),
                self.r
            )));
        }
        Ok(CoeffVector {
            constant: h.constant,
            coeffs: h.coeffs.iter().zip(&self.sigma).map(|(c, s)| c * s).collect(),
        })
    }

    pub fn hs_norm(&self) -> f64 {
        (1.0 + self.sigma.iter().map(|s| s * s).sum::<f64>()).sqrt()
    }

    /// Zeroes singular values beyond index `k` (k nonconstant triplets kept).
    /// Rejects cuts that fall on a tie, where the truncation is not unique.
    pub fn truncate(&self, k: usize) -> Result<SpectralOperator, OperatorError> {
        if k > self.r {
            return Err(OperatorError::DimensionMismatch(format!(
                "truncation index {k} exceeds rank {}",
                self.r
            )));
        }
        if k < self.r {
            let kept = if k == 0 { 1.0 } else { self.sigma[k - 1] };
            if kept == self.sigma[k] {
                return Err(OperatorError::TruncationTie { k });
            }
        }
        let mut out = self.clone();
        for s in out.sigma[k..].iter_mut() {
            *s = 0.0;
        }
        Ok(out)
    }

    /// Number of reference basis functions per side: constant + r singular
    /// directions + the tail.
    pub fn basis_len(&self) -> usize {
        1 + self.r + TAIL_FUNCTIONS
    }

    /// Reference basis on the X side: `1, v_1..v_r, sqrt(2) sin((r+j) x)`.
    pub fn basis_x(&self, i: usize, x: f64) -> f64 {
        if i == 0 {
            1.0
        } else if i <= self.r {
            // single row of rot_x applied to the sine family
            let f = sine_family(x, self.r);
            self.rot_x.row(i - 1).iter().zip(&f).map(|(a, b)| a * b).sum()
        } else {
            std::f64::consts::SQRT_2 * ((i as f64) * x).sin()
        }
    }

    pub fn basis_z(&self, i: usize, z: f64) -> f64 {
        if i == 0 {
            1.0
        } else if i <= self.r {
            let f = sine_family(z, self.r);
            self.rot_z.row(i - 1).iter().zip(&f).map(|(a, b)| a * b).sum()
        } else {
            std::f64::consts::SQRT_2 * ((i as f64) * z).sin()
        }
    }

    /// Quadrature coefficients of every component of an X-side feature map on
    /// the reference basis. Returns a `basis_len x dim` matrix.
    pub fn project_x(&self, phi: &dyn FeatureMap, grid: &Grid) -> Matrix {
        self.project(phi, grid, true)
    }

    pub fn project_z(&self, psi: &dyn FeatureMap, grid: &Grid) -> Matrix {
        self.project(psi, grid, false)
    }

    fn project(&self, map: &dyn FeatureMap, grid: &Grid, x_side: bool) -> Matrix {
        let nb = self.basis_len();
        let d = map.dim();
        let n = grid.len();
        let rows: Vec<Vec<f64>> = par::map_indexed(n, |ni| {
            let t = grid.nodes()[ni];
            let feats = map.eval(t);
            let mut row = Vec::with_capacity(nb * d);
            for b in 0..nb {
                let bv = if x_side { self.basis_x(b, t) } else { self.basis_z(b, t) };
                for f in &feats {
                    row.push(bv * f);
                }
            }
            row
        });
        let mut out = vec![0.0; nb * d];
        for row in &rows {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let w = grid.weight();
        Matrix::from_vec(nb, d, out.into_iter().map(|v| v * w).collect())
    }

    /// Matrix of the finite-rank operator `sum_k psi_k (x) phi_k` in the
    /// reference basis (Z basis rows, X basis columns). All functions in play
    /// are trigonometric polynomials within the basis span, so the
    /// representation is exact up to quadrature.
    pub fn feature_operator_matrix(
        &self,
        phi: &dyn FeatureMap,
        psi: &dyn FeatureMap,
        grid: &Grid,
    ) -> Result<Matrix, OperatorError> {
        if grid.len() < 512 {
            return Err(OperatorError::GridTooCoarse(grid.len(), 512));
        }
        if phi.dim() != psi.dim() {
            return Err(OperatorError::DimensionMismatch(format!(
                "feature maps have dims {} and {}",
                phi.dim(),
                psi.dim()
            )));
        }
        let cx = self.project_x(phi, grid); // nb x d
        let cz = self.project_z(psi, grid); // nb x d
        Ok(cz.matmul(&cx.transpose()))
    }

    /// Matrix of this operator itself (or a truncation of it) in the
    /// reference basis: `diag(1, sigma_1..sigma_r, 0, ..)`.
    pub fn reference_matrix(&self) -> Matrix {
        let nb = self.basis_len();
        let mut d = vec![0.0; nb];
        d[0] = 1.0;
        d[1..=self.r].copy_from_slice(&self.sigma);
        Matrix::from_diag(&d)
    }

    /// Largest singular value of a reference-basis matrix.
    pub fn operator_norm(m: &Matrix) -> f64 {
        svd(m).expect("finite matrix").singular.first().copied().unwrap_or(0.0)
    }

    // -- serialization -------------------------------------------------------

    /// Plain-text key-value serialization. f64 values are written in Rust's
    /// shortest round-trip decimal form, so parsing restores them bit-exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "r={}", self.r);
        let _ = writeln!(s, "sigma={}", join_f64(&self.sigma));
        let _ = writeln!(s, "rotx={}", join_f64(self.rot_x.data()));
        let _ = writeln!(s, "rotz={}", join_f64(self.rot_z.data()));
        let _ = writeln!(s, "scale={}", self.scale);
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }

    pub fn from_text(text: &str) -> Result<Self, OperatorError> {
        let mut fields = std::collections::HashMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| OperatorError::Parse(format!("missing '=' in line: {line}")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .ok_or_else(|| OperatorError::Parse(format!("missing field {k}")))
        };
        let r: usize = get("r")?
            .parse()
            .map_err(|e| OperatorError::Parse(format!("r: {e}")))?;
        let sigma = parse_f64_list(get("sigma")?)?;
        let rotx = parse_f64_list(get("rotx")?)?;
        let rotz = parse_f64_list(get("rotz")?)?;
        let scale: f64 = get("scale")?
            .parse()
            .map_err(|e| OperatorError::Parse(format!("scale: {e}")))?;
        let seed: u64 = get("seed")?
            .parse()
            .map_err(|e| OperatorError::Parse(format!("seed: {e}")))?;
        if sigma.len() != r || rotx.len() != r * r || rotz.len() != r * r {
            return Err(OperatorError::Parse("field length mismatch".into()));
        }
        Ok(SpectralOperator {
            r,
            sigma,
            rot_x: Matrix::from_vec(r, r, rotx),
            rot_z: Matrix::from_vec(r, r, rotz),
            scale,
            seed,
        })
    }
}

fn join_f64(vals: &[f64]) -> String {
    vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, OperatorError> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| OperatorError::Parse(format!("bad float '{t}': {e}")))
        })
        .collect()
}

fn check_domain(t: f64) -> Result<(), OperatorError> {
    if !(0.0..=DOMAIN).contains(&t) {
        return Err(OperatorError::OutOfDomain(t));
    }
    Ok(())
}

/// The orthonormal sine family `sqrt(2) sin(k t)`, k = 1..r.
pub fn sine_family(t: f64, r: usize) -> Vec<f64> {
    (1..=r)
        .map(|k| std::f64::consts::SQRT_2 * ((k as f64) * t).sin())
        .collect()
}
