//! Diagnostics the theory is phrased in: the sieve ill-posedness measure tau,
//! the target's out-of-span tail, the feature-space operator error, the
//! whitened feature-norm constant zeta, the tau sandwich bound, and the
//! good/bad/ugly regime classifier.

use crate::features::FeatureMap;
use crate::linalg::{eig_sym, LinalgError, Matrix};
use crate::operator::{Grid, OperatorError, SpectralOperator};
use crate::par;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("feature span is rank deficient (smallest Gram eigenvalue {0:.3e})")]
    RankDeficient(f64),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Good,
    Bad,
    Ugly,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Good => "good",
            Regime::Bad => "bad",
            Regime::Ugly => "ugly",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SandwichOutcome {
    Pass,
    Fail,
    /// The perturbation is too large for the bound's precondition.
    Indeterminate,
}

/// Default regime thresholds: tail above the first value is "ugly", otherwise
/// a spectrum cut below the second is "bad". Artifact policy, echoed in every
/// report.
pub const DEFAULT_THRESHOLDS: (f64, f64) = (0.3, 0.2);

#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    pub tau: f64,
    pub tail_norm: f64,
    pub epsilon_hat: Option<f64>,
    pub zeta: f64,
    pub sigma_cut: f64,
    pub regime: Regime,
    pub thresholds: (f64, f64),
}

const GRAM_FLOOR: f64 = 1e-10;

fn quadrature_gram(map: &dyn FeatureMap, grid: &Grid) -> Matrix {
    let d = map.dim();
    let n = grid.len();
    let rows = par::map_indexed(n, |i| map.eval(grid.nodes()[i]));
    let acc = par::fold_indexed(
        n,
        || vec![0.0; d * d],
        |mut acc, i| {
            let r = &rows[i];
            for a in 0..d {
                for b in 0..d {
                    acc[a * d + b] += r[a] * r[b];
                }
            }
            acc
        },
        |mut a, b| {
            for (x, y) in a.iter_mut().zip(&b) {
                *x += y;
            }
            a
        },
    );
    Matrix::from_vec(d, d, acc).scale(grid.weight())
}

/// Inverse square root of a symmetric positive definite matrix; errors if the
/// smallest eigenvalue is at or below the floor.
fn inv_sqrt(g: &Matrix) -> Result<Matrix, DiagnosticsError> {
    let (w, v) = eig_sym(g)?;
    let min = w.last().copied().unwrap_or(0.0);
    if min <= GRAM_FLOOR {
        return Err(DiagnosticsError::RankDeficient(min));
    }
    let scaled = Matrix::from_fn(v.rows(), v.cols(), |i, j| v.get(i, j) / w[j].sqrt());
    Ok(scaled.matmul(&v.transpose()))
}

/// Sieve measure of ill-posedness of a span on the X side: the reciprocal of
/// the smallest value of |T h| over unit-norm h in the span. Computed by
/// whitening the span against its quadrature Gram and taking the smallest
/// eigenvalue of the Gram of the transported functions.
pub fn tau_sieve(
    span: &dyn FeatureMap,
    op: &SpectralOperator,
    grid: &Grid,
) -> Result<f64, DiagnosticsError> {
    let d = span.dim();
    let gram = quadrature_gram(span, grid);
    let white = inv_sqrt(&gram)?;
    // coefficients of each span component on {1, v_1..v_r}; T acts there as
    // diag(1, sigma) and annihilates the orthogonal complement
    let coeffs = op.project_x(span, grid); // basis_len x d
    let r = op.r();
    let k = Matrix::from_fn(d, d, |a, b| {
        let mut s = coeffs.get(0, a) * coeffs.get(0, b);
        for j in 0..r {
            s += op.sigma()[j].powi(2) * coeffs.get(j + 1, a) * coeffs.get(j + 1, b);
        }
        s
    });
    let whitened = white.transpose().matmul(&k).matmul(&white);
    let (w, _) = eig_sym(&whitened)?;
    let min = w.last().copied().unwrap_or(0.0).max(0.0);
    Ok(1.0 / min.sqrt())
}

/// Norm of the target coefficients beyond the first k directions.
pub fn tail_norm(alpha: &[f64], k: usize) -> f64 {
    assert!(k <= alpha.len());
    // + 0.0 canonicalizes the -0.0 an empty sum can produce
    (alpha[k..].iter().map(|a| a * a).sum::<f64>() + 0.0).sqrt()
}

/// Operator-norm distance between the feature-pair operator and the k-cut
/// truncation of the reference operator, both expressed in the shared
/// reference basis.
pub fn epsilon_hat(
    phi: &dyn FeatureMap,
    psi: &dyn FeatureMap,
    op: &SpectralOperator,
    k: usize,
    grid: &Grid,
) -> Result<f64, DiagnosticsError> {
    let truncated = op.truncate(k)?;
    let learned = op.feature_operator_matrix(phi, psi, grid)?;
    let diff = learned.sub(&truncated.reference_matrix());
    Ok(SpectralOperator::operator_norm(&diff))
}

/// Supremum of the whitened feature norm over the grid, maximum of the two
/// sides. Invariant under invertible linear reparameterizations of either map.
pub fn zeta(
    phi: &dyn FeatureMap,
    psi: &dyn FeatureMap,
    grid: &Grid,
) -> Result<f64, DiagnosticsError> {
    let mut best = 0.0f64;
    for map in [phi, psi] {
        let gram = quadrature_gram(map, grid);
        let white = inv_sqrt(&gram)?;
        let n = grid.len();
        let sups = par::map_indexed(n, |i| {
            let f = map.eval(grid.nodes()[i]);
            let w = white.matvec(&f);
            w.iter().map(|v| v * v).sum::<f64>()
        });
        let sup = sups.into_iter().fold(0.0f64, f64::max).sqrt();
        best = best.max(sup);
    }
    Ok(best)
}

/// Two-sided bound on tau at spectrum cut sigma_k under feature error eps.
/// Outside the bound's validity region the result is indeterminate rather
/// than a failure.
pub fn sandwich_check(tau: f64, sigma_k: f64, eps: f64) -> SandwichOutcome {
    let margin = (1.0 - 1.0 / std::f64::consts::SQRT_2) * sigma_k;
    if eps >= margin {
        return SandwichOutcome::Indeterminate;
    }
    let lower = (1.0 - 1e-6) / sigma_k;
    let upper = (1.0 + 1e-6) / (sigma_k - 2.0 * eps);
    if tau >= lower && tau <= upper {
        SandwichOutcome::Pass
    } else {
        SandwichOutcome::Fail
    }
}

/// Good/bad/ugly taxonomy: misalignment (tail) dominates; otherwise a weak
/// spectrum cut marks the "bad" regime.
pub fn classify_regime(tail: f64, sigma_cut: f64, thresholds: (f64, f64)) -> Regime {
    let (t_align, t_decay) = thresholds;
    assert!((0.0..1.0).contains(&t_align) && (0.0..1.0).contains(&t_decay));
    if tail > t_align {
        Regime::Ugly
    } else if sigma_cut < t_decay {
        Regime::Bad
    } else {
        Regime::Good
    }
}
