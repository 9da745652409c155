//! Sieve two-stage least squares: regress treatment features on instrument
//! features, then regress the outcome on the predicted features. Includes the
//! ridge variants, the equivalent saddle-point closed form, and population
//! (quadrature-moment) fits used as oracles.

use crate::features::FeatureMap;
use crate::linalg::{pinv, ridge_solve, LinalgError, Matrix, PINV_TOL};
use crate::operator::{Grid, SpectralOperator};
use crate::par;
use crate::synthetic::{LabeledSample, StructuralFunction};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TwoStageError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy)]
pub struct TwoStageConfig {
    /// Stage-1 ridge on the instrument Gram.
    pub eta: f64,
    /// Stage-2 ridge on the predicted-feature Gram.
    pub lambda: f64,
    pub pinv_tol: f64,
}

impl Default for TwoStageConfig {
    fn default() -> Self {
        TwoStageConfig { eta: 0.0, lambda: 0.0, pinv_tol: PINV_TOL }
    }
}

/// A fitted estimator: the stage-1 map from instrument features to predicted
/// treatment features, and the stage-2 coefficients on the treatment features.
pub struct TwoStageFit {
    pub a: Matrix,
    pub theta: Vec<f64>,
    pub phi: Arc<dyn FeatureMap>,
    pub psi: Arc<dyn FeatureMap>,
}

impl TwoStageFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.theta.iter().zip(self.phi.eval(x)).map(|(t, f)| t * f).sum()
    }

    /// Root mean squared deviation from the target under the uniform measure.
    pub fn l2_error(
        &self,
        op: &SpectralOperator,
        h0: &StructuralFunction,
        grid: &Grid,
    ) -> f64 {
        assert!(grid.len() >= 1024, "l2 error needs >= 1024 quadrature nodes");
        grid.integrate(|x| {
            let e = self.predict(x) - h0.eval(op, x).unwrap();
            e * e
        })
        .sqrt()
    }
}

fn check_rows(name: &str, m: &Matrix, n: usize) -> Result<(), TwoStageError> {
    if m.rows() != n {
        return Err(TwoStageError::DimensionMismatch(format!(
            "{name} has {} rows, expected {n}",
            m.rows()
        )));
    }
    Ok(())
}

/// Stage 1 on raw sample matrices (rows are samples).
pub fn stage1(
    phi_x: &Matrix,
    psi_z: &Matrix,
    eta: f64,
    tol: f64,
) -> Result<Matrix, TwoStageError> {
    let n = phi_x.rows();
    check_rows("psi_z", psi_z, n)?;
    if n == 0 {
        return Err(TwoStageError::DimensionMismatch("no samples".into()));
    }
    let scale = 1.0 / n as f64;
    let c = phi_x.t_matmul_scaled(psi_z, scale); // E[phi psi^T]
    let g = psi_z.t_matmul_scaled(psi_z, scale); // E[psi psi^T]
    stage1_from_moments(&c, &g, eta, tol)
}

/// Stage 1 from moment matrices: A = C (G + eta I)^-1, pseudo-inverse at
/// eta = 0.
pub fn stage1_from_moments(
    c: &Matrix,
    g: &Matrix,
    eta: f64,
    tol: f64,
) -> Result<Matrix, TwoStageError> {
    let d = g.rows();
    if c.cols() != d {
        return Err(TwoStageError::DimensionMismatch(format!(
            "cross moment is {}x{}, instrument Gram is {d}x{d}",
            c.rows(),
            c.cols()
        )));
    }
    let mut reg = g.clone();
    if eta > 0.0 {
        reg = reg.add(&Matrix::identity(d).scale(eta));
    }
    let ginv = pinv(&reg, tol)?;
    Ok(c.matmul(&ginv))
}

/// Stage 2 on raw sample matrices: coefficients of the outcome on the
/// predicted features A psi(z).
pub fn stage2(
    a: &Matrix,
    psi_z: &Matrix,
    y: &[f64],
    lambda: f64,
    tol: f64,
) -> Result<Vec<f64>, TwoStageError> {
    let n = psi_z.rows();
    if y.len() != n {
        return Err(TwoStageError::DimensionMismatch(format!(
            "{} outcomes for {n} samples",
            y.len()
        )));
    }
    let scale = 1.0 / n as f64;
    let g = psi_z.t_matmul_scaled(psi_z, scale);
    let d = psi_z.cols();
    let mut b = vec![0.0; d];
    for i in 0..n {
        let row = psi_z.row(i);
        for (bk, &p) in b.iter_mut().zip(row) {
            *bk += p * y[i] * scale;
        }
    }
    stage2_from_moments(a, &g, &b, lambda, tol)
}

/// Stage 2 from moments: solve (A G A^T + lambda I) theta = A b, with the
/// minimum-norm pseudo-inverse solution at lambda = 0.
pub fn stage2_from_moments(
    a: &Matrix,
    g: &Matrix,
    b: &[f64],
    lambda: f64,
    tol: f64,
) -> Result<Vec<f64>, TwoStageError> {
    let d = a.rows();
    if a.cols() != g.rows() || g.cols() != b.len() {
        return Err(TwoStageError::DimensionMismatch(format!(
            "A is {}x{}, G is {}x{}, b has length {}",
            a.rows(),
            a.cols(),
            g.rows(),
            g.cols(),
            b.len()
        )));
    }
    let gram_f = a.matmul(g).matmul(&a.transpose()); // E[F F^T]
    let rhs = a.matvec(b); // E[F y]
    let _ = (d, tol);
    Ok(ridge_solve(&gram_f, &rhs, lambda)?)
}

/// Closed-form saddle-point estimator: theta = (B^T G^+ B + 2 lambda I)^-1
/// B^T G^+ b with B = E[psi phi^T]. Agrees with stage1 + stage2 under the
/// ridge correspondence lambda_2 = 2 lambda_saddle.
pub fn saddle_solve(
    phi_x: &Matrix,
    psi_z: &Matrix,
    y: &[f64],
    lambda_saddle: f64,
    tol: f64,
) -> Result<Vec<f64>, TwoStageError> {
    let n = phi_x.rows();
    check_rows("psi_z", psi_z, n)?;
    if y.len() != n {
        return Err(TwoStageError::DimensionMismatch(format!(
            "{} outcomes for {n} samples",
            y.len()
        )));
    }
    let scale = 1.0 / n as f64;
    let g = psi_z.t_matmul_scaled(psi_z, scale);
    let bmat = psi_z.t_matmul_scaled(phi_x, scale); // E[psi phi^T]
    let d = psi_z.cols();
    let mut b = vec![0.0; d];
    for i in 0..n {
        let row = psi_z.row(i);
        for (bk, &p) in b.iter_mut().zip(row) {
            *bk += p * y[i] * scale;
        }
    }
    let ginv = pinv(&g, tol)?;
    let btg = bmat.transpose().matmul(&ginv);
    let lhs = btg.matmul(&bmat);
    let rhs = btg.matvec(&b);
    Ok(ridge_solve(&lhs, &rhs, 2.0 * lambda_saddle)?)
}

/// Builds the sample feature matrices and runs both stages.
pub fn fit(
    phi: Arc<dyn FeatureMap>,
    psi: Arc<dyn FeatureMap>,
    data: &[LabeledSample],
    config: &TwoStageConfig,
) -> Result<TwoStageFit, TwoStageError> {
    if phi.dim() != psi.dim() {
        return Err(TwoStageError::DimensionMismatch(format!(
            "feature dims {} vs {}",
            phi.dim(),
            psi.dim()
        )));
    }
    let n = data.len();
    let d = phi.dim();
    let phi_rows = par::map_indexed(n, |i| phi.eval(data[i].x));
    let psi_rows = par::map_indexed(n, |i| psi.eval(data[i].z));
    let phi_x = Matrix::from_rows(&phi_rows);
    let psi_z = Matrix::from_rows(&psi_rows);
    let y: Vec<f64> = data.iter().map(|s| s.y).collect();
    let a = stage1(&phi_x, &psi_z, config.eta, config.pinv_tol)?;
    let theta = stage2(&a, &psi_z, &y, config.lambda, config.pinv_tol)?;
    debug_assert_eq!(theta.len(), d);
    Ok(TwoStageFit { a, theta, phi, psi })
}

/// Exact population moments for a feature pair under the operator's joint
/// law, with outcomes from the structural target (noise does not enter the
/// moments). Used for population-limit fits and oracles.
pub struct PopulationMoments {
    /// E[phi(X) psi(Z)^T]
    pub cross: Matrix,
    /// E[psi(Z) psi(Z)^T]
    pub instrument_gram: Matrix,
    /// E[psi(Z) Y] = E[psi(Z) (T h0)(Z)]
    pub outcome: Vec<f64>,
}

pub fn population_moments(
    phi: &dyn FeatureMap,
    psi: &dyn FeatureMap,
    op: &SpectralOperator,
    h0: &StructuralFunction,
    grid: &Grid,
) -> PopulationMoments {
    assert!(grid.len() >= 512);
    let d = phi.dim();
    assert_eq!(d, psi.dim());
    let n = grid.len();
    let r = op.r();
    let phis = par::map_indexed(n, |i| phi.eval(grid.nodes()[i]));
    let psis = par::map_indexed(n, |i| psi.eval(grid.nodes()[i]));
    let w = grid.weight();

    // per-component integrals against {1, singular family}
    let proj = |rows: &[Vec<f64>], x_side: bool| -> Matrix {
        let acc = par::fold_indexed(
            n,
            || vec![0.0; (r + 1) * d],
            |mut acc, i| {
                let t = grid.nodes()[i];
                let f = if x_side { op.eval_right(t) } else { op.eval_left(t) }.unwrap();
                for k in 0..d {
                    let v = rows[i][k];
                    acc[k] += v;
                    for j in 0..r {
                        acc[(j + 1) * d + k] += v * f[j];
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
        Matrix::from_vec(r + 1, d, acc).scale(w)
    };
    let px = proj(&phis, true);
    let pz = proj(&psis, false);

    // cross moment via the factored density
    let cross = Matrix::from_fn(d, d, |a, b| {
        let mut v = px.get(0, a) * pz.get(0, b);
        for j in 0..r {
            v += op.sigma()[j] * px.get(j + 1, a) * pz.get(j + 1, b);
        }
        v
    });
    let instrument_gram = Matrix::from_rows(&psis).t_matmul_scaled(&Matrix::from_rows(&psis), w);
    // E[psi Y]: Y has conditional mean (T h0)(z) = sum sigma_i alpha_i u_i(z)
    let th = op.apply(&h0.coeffs()).expect("target matches operator rank");
    let outcome: Vec<f64> = (0..d)
        .map(|k| {
            let mut v = th.constant * pz.get(0, k);
            for j in 0..r {
                v += th.coeffs[j] * pz.get(j + 1, k);
            }
            v
        })
        .collect();
    PopulationMoments { cross, instrument_gram, outcome }
}

/// Population-limit 2SLS fit from quadrature moments.
pub fn fit_population(
    phi: Arc<dyn FeatureMap>,
    psi: Arc<dyn FeatureMap>,
    op: &SpectralOperator,
    h0: &StructuralFunction,
    grid: &Grid,
    config: &TwoStageConfig,
) -> Result<TwoStageFit, TwoStageError> {
    let m = population_moments(phi.as_ref(), psi.as_ref(), op, h0, grid);
    let a = stage1_from_moments(&m.cross, &m.instrument_gram, config.eta, config.pinv_tol)?;
    let theta =
        stage2_from_moments(&a, &m.instrument_gram, &m.outcome, config.lambda, config.pinv_tol)?;
    Ok(TwoStageFit { a, theta, phi, psi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FnFeatures, OracleFeatures, Side};
    use crate::linalg::random_orthogonal;
    use crate::operator::sine_family;
    use crate::synthetic::{build_scenario, Scenario};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
        Matrix::from_fn(n, d, |_, _| rng.gen::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn stage1_perfect_prediction_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_matrix(&mut rng, 40, 4);
        let a = stage1(&m, &m, 0.0, PINV_TOL).unwrap();
        assert!(a.sub(&Matrix::identity(4)).max_abs() < 1e-8);
    }

    #[test]
    fn stage1_independent_features_are_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let d = 3;
        // mean-zero orthonormal features of independent x and z
        let phi = Matrix::from_fn(n, d, |i, k| {
            let _ = i;
            let x = rng.gen::<f64>() * std::f64::consts::TAU;
            std::f64::consts::SQRT_2 * ((k + 1) as f64 * x).sin()
        });
        let psi = Matrix::from_fn(n, d, |_, k| {
            let z = rng.gen::<f64>() * std::f64::consts::TAU;
            std::f64::consts::SQRT_2 * ((k + 1) as f64 * z).sin()
        });
        let a = stage1(&phi, &psi, 0.0, PINV_TOL).unwrap();
        // each cross-moment entry has SE ~ 1/sqrt(n); Gram ~ identity
        let bound = 4.0 * d as f64 / (n as f64).sqrt();
        assert!(a.frob_norm() <= bound, "|A|_F = {} > {bound}", a.frob_norm());
    }

    #[test]
    fn stage1_large_ridge_shrinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi = random_matrix(&mut rng, 50, 3);
        let psi = random_matrix(&mut rng, 50, 3);
        let a = stage1(&phi, &psi, 1e6, PINV_TOL).unwrap();
        let c = phi.t_matmul_scaled(&psi, 1.0 / 50.0);
        assert!(a.frob_norm() <= 1e-3 * c.frob_norm());
        assert!(stage1(&phi, &random_matrix(&mut rng, 49, 3), 0.0, PINV_TOL).is_err());
    }

    #[test]
    fn stage2_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let psi = random_matrix(&mut rng, 30, 3);
        let a = Matrix::identity(3);
        let theta = stage2(&a, &psi, &vec![0.0; 30], 0.0, PINV_TOL).unwrap();
        assert!(theta.iter().all(|&t| t.abs() < 1e-12));
        let y: Vec<f64> = (0..30).map(|_| rng.gen::<f64>()).collect();
        let theta = stage2(&a, &psi, &y, 1e9, PINV_TOL).unwrap();
        assert!(theta.iter().all(|&t| t.abs() < 1e-6));
        assert!(stage2(&a, &psi, &y[..10], 0.0, PINV_TOL).is_err());
    }

    fn good_scenario() -> Scenario {
        Scenario {
            d: 6,
            c_sigma: 0.5,
            c_alpha: 0.5,
            sigma_head: 1.0,
            noise_var: 0.1,
            seed_op: 5,
            seed_data: 6,
        }
    }

    #[test]
    fn population_limit_recovers_target() {
        let (op, h0) = build_scenario(&good_scenario()).unwrap();
        let op = Arc::new(op);
        let grid = Grid::new(2048);
        let phi = Arc::new(OracleFeatures::new(Arc::clone(&op), Side::X, op.r()));
        let psi = Arc::new(OracleFeatures::new(Arc::clone(&op), Side::Z, op.r()));
        let fit =
            fit_population(phi, psi, &op, &h0, &grid, &TwoStageConfig::default()).unwrap();
        // stage 1 is diag(1, sigma) in this basis
        let mut expect_a = vec![1.0];
        expect_a.extend_from_slice(op.sigma());
        assert!(fit.a.sub(&Matrix::from_diag(&expect_a)).max_abs() < 1e-8);
        // theta = (0, alpha)
        assert!(fit.theta[0].abs() < 1e-10);
        for (t, a) in fit.theta[1..].iter().zip(h0.alpha()) {
            assert_abs_diff_eq!(t, a, epsilon = 1e-10);
        }
        // predictions match the target everywhere
        let grid = Grid::new(1024);
        for &x in grid.nodes().iter().step_by(37) {
            assert_abs_diff_eq!(fit.predict(x), h0.eval(&op, x).unwrap(), epsilon = 1e-8);
        }
        assert!(fit.l2_error(&op, &h0, &grid) < 1e-8);
    }

    #[test]
    fn saddle_equivalence_over_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut max_diff = 0.0f64;
        for trial in 0..100 {
            let n = [5, 50, 500][trial % 3];
            let d = 2 + trial % 4;
            let phi = random_matrix(&mut rng, n, d);
            let psi = random_matrix(&mut rng, n, d);
            let y: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let ls = 0.01 + rng.gen::<f64>();
            let via_saddle = saddle_solve(&phi, &psi, &y, ls, PINV_TOL).unwrap();
            let a = stage1(&phi, &psi, 0.0, PINV_TOL).unwrap();
            let via_stages = stage2(&a, &psi, &y, 2.0 * ls, PINV_TOL).unwrap();
            for (s, t) in via_saddle.iter().zip(&via_stages) {
                max_diff = max_diff.max((s - t).abs());
            }
        }
        assert!(max_diff <= 1e-8, "max coefficient discrepancy {max_diff}");
    }

    #[test]
    fn saddle_equivalence_degenerate_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let phi = random_matrix(&mut rng, 1, 3);
        let psi = random_matrix(&mut rng, 1, 3);
        let y = vec![0.7];
        let ls = 0.5;
        let a = saddle_solve(&phi, &psi, &y, ls, PINV_TOL).unwrap();
        let b = stage2(&stage1(&phi, &psi, 0.0, PINV_TOL).unwrap(), &psi, &y, 2.0 * ls, PINV_TOL)
            .unwrap();
        for (s, t) in a.iter().zip(&b) {
            assert!((s - t).abs() <= 1e-8);
        }
        // y = 0 -> zero coefficients
        let z = saddle_solve(&phi, &psi, &[0.0], ls, PINV_TOL).unwrap();
        assert!(z.iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn scale_equivariance_in_y() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let phi = random_matrix(&mut rng, 60, 4);
        let psi = random_matrix(&mut rng, 60, 4);
        let y: Vec<f64> = (0..60).map(|_| rng.gen::<f64>()).collect();
        let y2: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        for lambda in [0.0, 0.3] {
            let a = stage1(&phi, &psi, 0.0, PINV_TOL).unwrap();
            let t1 = stage2(&a, &psi, &y, lambda, PINV_TOL).unwrap();
            let t2 = stage2(&a, &psi, &y2, lambda, PINV_TOL).unwrap();
            for (u, v) in t1.iter().zip(&t2) {
                assert_abs_diff_eq!(2.0 * u, *v, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn predict_trivial_cases() {
        let phi: Arc<dyn FeatureMap> = Arc::new(FnFeatures::new(2, Side::X, |x| vec![1.0, x.sin()]));
        let psi: Arc<dyn FeatureMap> = Arc::new(FnFeatures::new(2, Side::Z, |z| vec![1.0, z.cos()]));
        let fit = TwoStageFit {
            a: Matrix::identity(2),
            theta: vec![0.0, 0.0],
            phi: Arc::clone(&phi),
            psi: Arc::clone(&psi),
        };
        assert_eq!(fit.predict(1.3), 0.0);
        let fit = TwoStageFit { a: Matrix::identity(2), theta: vec![1.0, 0.0], phi, psi };
        assert_eq!(fit.predict(0.4), 1.0);
        assert_eq!(fit.predict(5.0), 1.0);
    }

    #[test]
    fn l2_error_parseval() {
        let (op, h0) = build_scenario(&good_scenario()).unwrap();
        let op = Arc::new(op);
        let grid = Grid::new(2048);
        // exact fit: theta = (0, alpha) on the oracle span
        let phi: Arc<dyn FeatureMap> =
            Arc::new(OracleFeatures::new(Arc::clone(&op), Side::X, op.r()));
        let psi: Arc<dyn FeatureMap> =
            Arc::new(OracleFeatures::new(Arc::clone(&op), Side::Z, op.r()));
        let mut theta = vec![0.0];
        theta.extend_from_slice(h0.alpha());
        let fit = TwoStageFit {
            a: Matrix::identity(op.r() + 1),
            theta: theta.clone(),
            phi: Arc::clone(&phi),
            psi: Arc::clone(&psi),
        };
        assert!(fit.l2_error(&op, &h0, &grid) < 1e-10);
        // constant offset c -> error |c|
        theta[0] = 0.25;
        let fit = TwoStageFit {
            a: Matrix::identity(op.r() + 1),
            theta,
            phi: Arc::clone(&phi),
            psi: Arc::clone(&psi),
        };
        assert_abs_diff_eq!(fit.l2_error(&op, &h0, &grid), 0.25, epsilon = 1e-8);
        // known coefficient error vector delta -> l2 error = |delta|
        let delta = [0.1, -0.2, 0.05, 0.0, 0.3];
        let mut theta = vec![0.0];
        theta.extend(h0.alpha().iter().zip(&delta).map(|(a, d)| a + d));
        let fit = TwoStageFit { a: Matrix::identity(op.r() + 1), theta, phi, psi };
        let expect = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        assert_abs_diff_eq!(fit.l2_error(&op, &h0, &grid), expect, epsilon = 1e-8);
    }

    #[test]
    fn sample_fit_approaches_population() {
        use crate::synthetic::{rejection_sample, sample_outcomes};
        let (op, h0) = build_scenario(&good_scenario()).unwrap();
        let op = Arc::new(op);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pairs = rejection_sample(&op, 20_000, &mut rng).unwrap();
        let data = sample_outcomes(&op, &h0, &pairs, 0.1, &mut rng).unwrap();
        let phi: Arc<dyn FeatureMap> =
            Arc::new(OracleFeatures::new(Arc::clone(&op), Side::X, op.r()));
        let psi: Arc<dyn FeatureMap> =
            Arc::new(OracleFeatures::new(Arc::clone(&op), Side::Z, op.r()));
        let f = fit(phi, psi, &data, &TwoStageConfig::default()).unwrap();
        let grid = Grid::new(1024);
        let err = f.l2_error(&op, &h0, &grid);
        assert!(err < 0.2, "sample fit error {err} too large");
    }

    #[test]
    fn population_moments_match_closed_form() {
        // for features inside the singular span the moments are explicit
        let (op, h0) = build_scenario(&good_scenario()).unwrap();
        let op = Arc::new(op);
        let grid = Grid::new(2048);
        let o1 = Arc::clone(&op);
        let o2 = Arc::clone(&op);
        let phi = FnFeatures::new(2, Side::X, move |x| {
            let v = o1.eval_right(x).unwrap();
            vec![1.0, v[0] + 0.5 * v[2]]
        });
        let psi = FnFeatures::new(2, Side::Z, move |z| {
            let u = o2.eval_left(z).unwrap();
            vec![1.0, u[0] - u[1]]
        });
        let m = population_moments(&phi, &psi, &op, &h0, &grid);
        // E[phi_2 psi_2] = sigma_1 * 1 * 1 (only matched v_1 u_1 term)
        assert_abs_diff_eq!(m.cross.get(1, 1), op.sigma()[0], epsilon = 1e-8);
        assert_abs_diff_eq!(m.cross.get(0, 0), 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(m.cross.get(0, 1), 0.0, epsilon = 1e-8);
        // Gram of psi: diag(1, |(1,-1)|^2) = diag(1, 2)
        assert_abs_diff_eq!(m.instrument_gram.get(1, 1), 2.0, epsilon = 1e-8);
        // E[psi_2 Y] = sigma_1 alpha_1 - sigma_2 alpha_2
        let expect = op.sigma()[0] * h0.alpha()[0] - op.sigma()[1] * h0.alpha()[1];
        assert_abs_diff_eq!(m.outcome[1], expect, epsilon = 1e-8);
        let _ = sine_family(0.3, 2);
        let _ = random_orthogonal(2, &mut ChaCha8Rng::seed_from_u64(0));
    }
}
