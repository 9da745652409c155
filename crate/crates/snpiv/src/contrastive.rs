//! Spectral contrastive loss: the population objective evaluated by
//! quadrature, its unbiased (up to a constant) pairwise sample estimate, the
//! collinearity regularizer, and the minibatch training loop for MLP feature
//! pairs.

use crate::features::{adam_step, AdamState, FeatureMap, MlpFeatures, Side};
use crate::linalg::Matrix;
use crate::operator::{Grid, SpectralOperator};
use crate::par;
use crate::synthetic::UnlabeledSample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ContrastiveError {
    #[error("batch must contain at least {0} samples, got {1}")]
    BatchTooSmall(usize, usize),
    #[error("dataset of {0} samples is smaller than batch size {1}")]
    DatasetTooSmall(usize, usize),
    #[error("feature dims differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("training diverged (non-finite loss) at epoch {0}")]
    Diverged(usize),
}

#[derive(Debug, Clone)]
pub struct ContrastiveConfig {
    /// Trainable output dimension of each net (excludes the hard-coded
    /// constant).
    pub feature_dim: usize,
    pub hidden_width: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight on the collinearity regularizer.
    pub reg_weight: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            feature_dim: 50,
            hidden_width: 50,
            batch_size: 1024,
            epochs: 50,
            reg_weight: 0.05,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossReport {
    pub epoch: usize,
    pub empirical_loss: f64,
    pub regularizer: f64,
}

/// Pairwise contrastive estimate over a batch: all ordered pairs i != j of
/// squared pairings, minus twice the matched-pair mean. Differs from the
/// population objective by the constant squared norm of the target operator.
///
/// Evaluated through d x d Gram matrices, never the m x m pairing matrix.
pub fn empirical_loss(
    phi: &dyn FeatureMap,
    psi: &dyn FeatureMap,
    batch: &[UnlabeledSample],
) -> Result<f64, ContrastiveError> {
    let (phis, psis) = eval_batch(phi, psi, batch)?;
    empirical_loss_rows(&phis, &psis)
}

fn eval_batch(
    phi: &dyn FeatureMap,
    psi: &dyn FeatureMap,
    batch: &[UnlabeledSample],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), ContrastiveError> {
    if phi.dim() != psi.dim() {
        return Err(ContrastiveError::DimMismatch(phi.dim(), psi.dim()));
    }
    let phis = par::map_indexed(batch.len(), |i| phi.eval(batch[i].x));
    let psis = par::map_indexed(batch.len(), |i| psi.eval(batch[i].z));
    Ok((phis, psis))
}

/// Same estimate on precomputed feature rows.
pub fn empirical_loss_rows(
    phis: &[Vec<f64>],
    psis: &[Vec<f64>],
) -> Result<f64, ContrastiveError> {
    let m = phis.len();
    if m < 2 {
        return Err(ContrastiveError::BatchTooSmall(2, m));
    }
    let d = phis[0].len();
    let gram_phi = rows_gram(phis, d);
    let gram_psi = rows_gram(psis, d);
    // sum over all ordered pairs of (phi_i' psi_j)^2 = <Gram_phi, Gram_psi>
    let all_pairs: f64 = gram_phi
        .data()
        .iter()
        .zip(gram_psi.data())
        .map(|(a, b)| a * b)
        .sum();
    let diag_sq = par::sum_indexed(m, |i| dot(&phis[i], &psis[i]).powi(2));
    let matched = par::sum_indexed(m, |i| dot(&phis[i], &psis[i]));
    let mf = m as f64;
    Ok((all_pairs - diag_sq) / (mf * (mf - 1.0)) - 2.0 * matched / mf)
}

fn rows_gram(rows: &[Vec<f64>], d: usize) -> Matrix {
    let g = par::fold_indexed(
        rows.len(),
        || vec![0.0; d * d],
        |mut acc, i| {
            let r = &rows[i];
            for a in 0..d {
                let ra = r[a];
                for b in 0..d {
                    acc[a * d + b] += ra * r[b];
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
    Matrix::from_vec(d, d, g)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Population contrastive objective by quadrature: product-measure second
/// moment of the pairing, minus twice its joint-measure mean, plus the
/// squared norm of the target operator. Zero exactly when the feature pairing
/// reproduces the operator.
pub fn population_loss_quadrature(
    phi: &dyn FeatureMap,
    psi: &dyn FeatureMap,
    op: &SpectralOperator,
    grid: &Grid,
) -> f64 {
    assert!(grid.len() >= 512, "population quadrature needs >= 512 nodes");
    assert_eq!(phi.dim(), psi.dim());
    let d = phi.dim();
    let n = grid.len();
    let phis = par::map_indexed(n, |i| phi.eval(grid.nodes()[i]));
    let psis = par::map_indexed(n, |i| psi.eval(grid.nodes()[i]));
    let w = grid.weight();
    let gram_x = rows_gram(&phis, d).scale(w);
    let gram_z = rows_gram(&psis, d).scale(w);
    let term_product: f64 = gram_x
        .data()
        .iter()
        .zip(gram_z.data())
        .map(|(a, b)| a * b)
        .sum();

    // joint-measure mean of the pairing, via the operator's factored density:
    // E_XZ[phi_k psi_k] = (int phi_k)(int psi_k) + sum_i sigma_i (int phi_k v_i)(int psi_k u_i)
    let r = op.r();
    let proj = |rows: &[Vec<f64>], x_side: bool| -> Matrix {
        // (r+1) x d: row 0 means, rows 1..=r projections on the singular family
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
    let mut term_joint = 0.0;
    for k in 0..d {
        term_joint += px.get(0, k) * pz.get(0, k);
        for j in 0..r {
            term_joint += op.sigma()[j] * px.get(j + 1, k) * pz.get(j + 1, k);
        }
    }
    term_product - 2.0 * term_joint + op.hs_norm().powi(2)
}

/// Collinearity/scale regularizer, averaged over the batch. Per sample and
/// side this is the squared Frobenius distance of the feature outer product
/// from the identity plus twice the squared feature norm, which collapses to
/// |f|^4 + dim.
pub fn regularizer(
    phi: &dyn FeatureMap,
    psi: &dyn FeatureMap,
    batch: &[UnlabeledSample],
) -> Result<f64, ContrastiveError> {
    if batch.is_empty() {
        return Err(ContrastiveError::BatchTooSmall(1, 0));
    }
    let (phis, psis) = eval_batch(phi, psi, batch)?;
    Ok(regularizer_rows(&phis, &psis))
}

pub fn regularizer_rows(phis: &[Vec<f64>], psis: &[Vec<f64>]) -> f64 {
    let m = phis.len();
    let d = phis[0].len() as f64;
    let total = par::sum_indexed(m, |i| {
        let np = dot(&phis[i], &phis[i]);
        let nq = dot(&psis[i], &psis[i]);
        np * np + nq * nq + 2.0 * d
    });
    total / m as f64
}

/// Minibatch training of an MLP feature pair. The nets are re-centered on the
/// full dataset at the start of every epoch and after the final one, so the
/// loss always sees (approximately) mean-zero trainable outputs. Deterministic
/// given the seed.
pub fn train(
    config: &ContrastiveConfig,
    unlabeled: &[UnlabeledSample],
) -> Result<(MlpFeatures, MlpFeatures, Vec<LossReport>), ContrastiveError> {
    let m = unlabeled.len();
    if m < config.batch_size {
        return Err(ContrastiveError::DatasetTooSmall(m, config.batch_size));
    }
    assert!(config.batch_size >= 2, "pairwise loss needs batch_size >= 2");
    let widths = [1, config.hidden_width, config.hidden_width, config.feature_dim];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut phi = MlpFeatures::init(&widths, Side::X, &mut rng);
    let mut psi = MlpFeatures::init(&widths, Side::Z, &mut rng);
    let xs: Vec<f64> = unlabeled.iter().map(|s| s.x).collect();
    let zs: Vec<f64> = unlabeled.iter().map(|s| s.z).collect();
    phi.center(&xs).expect("nonempty dataset");
    psi.center(&zs).expect("nonempty dataset");

    let mut adam_phi = AdamState::new(phi.param_count(), config.learning_rate);
    let mut adam_psi = AdamState::new(psi.param_count(), config.learning_rate);
    let mut params_phi = phi.params_flat();
    let mut params_psi = psi.params_flat();
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..m).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks_exact(config.batch_size) {
            let bx: Vec<f64> = chunk.iter().map(|&i| xs[i]).collect();
            let bz: Vec<f64> = chunk.iter().map(|&i| zs[i]).collect();
            let phis = par::map_indexed(bx.len(), |i| phi.trainable_eval(bx[i]));
            let psis = par::map_indexed(bz.len(), |i| psi.trainable_eval(bz[i]));
            let (g_phi, g_psi) = pair_gradients(&phis, &psis, config.reg_weight);
            let grad_phi = phi.backward_batch(&bx, &g_phi).expect("shapes fixed");
            let grad_psi = psi.backward_batch(&bz, &g_psi).expect("shapes fixed");
            adam_step(&mut adam_phi, &mut params_phi, &grad_phi).expect("shapes fixed");
            adam_step(&mut adam_psi, &mut params_psi, &grad_psi).expect("shapes fixed");
            phi.set_params_flat(&params_phi).expect("shapes fixed");
            psi.set_params_flat(&params_psi).expect("shapes fixed");
        }
        phi.center(&xs).expect("nonempty dataset");
        psi.center(&zs).expect("nonempty dataset");
        let phis = par::map_indexed(m, |i| phi.trainable_eval(xs[i]));
        let psis = par::map_indexed(m, |i| psi.trainable_eval(zs[i]));
        let emp = empirical_loss_rows(&phis, &psis)?;
        let reg = regularizer_rows(&phis, &psis);
        if !emp.is_finite() || !reg.is_finite() {
            return Err(ContrastiveError::Diverged(epoch));
        }
        history.push(LossReport { epoch, empirical_loss: emp, regularizer: reg });
    }
    Ok((phi, psi, history))
}

/// Per-sample gradients of the batch objective (pairwise loss plus weighted
/// regularizer mean) with respect to the feature rows.
fn pair_gradients(
    phis: &[Vec<f64>],
    psis: &[Vec<f64>],
    reg_weight: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let m = phis.len();
    let d = phis[0].len();
    let mf = m as f64;
    let gram_phi = rows_gram(phis, d);
    let gram_psi = rows_gram(psis, d);
    let pair_scale = 2.0 / (mf * (mf - 1.0));
    let grad_side = |own: &[Vec<f64>], other: &[Vec<f64>], other_gram: &Matrix| {
        par::map_indexed(m, |i| {
            let s = dot(&own[i], &other[i]);
            let mut g = vec![0.0; d];
            // pairwise term: (own Gram_other)_i minus the i=j diagonal
            for a in 0..d {
                let mut acc = 0.0;
                for b in 0..d {
                    acc += own[i][b] * other_gram.get(b, a);
                }
                g[a] = pair_scale * (acc - s * other[i][a]) - (2.0 / mf) * other[i][a];
            }
            // regularizer: d/d own of |own|^4 / m
            let n2 = dot(&own[i], &own[i]);
            for a in 0..d {
                g[a] += reg_weight * 4.0 * n2 * own[i][a] / mf;
            }
            g
        })
    };
    let g_phi = grad_side(phis, psis, &gram_psi);
    let g_psi = grad_side(psis, phis, &gram_phi);
    (g_phi, g_psi)
}

pub fn write_loss_history_csv(path: &Path, history: &[LossReport]) -> std::io::Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,empirical_loss,regularizer")?;
    for h in history {
        writeln!(w, "{},{:.16e},{:.16e}", h.epoch, h.empirical_loss, h.regularizer)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{oracle_factorization, FnFeatures};
    use crate::linalg::random_orthogonal;
    use crate::operator::sine_family;
    use crate::synthetic::{build_scenario, rejection_sample, Scenario};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use std::sync::Arc;

    fn test_op(sigma: Vec<f64>, seed: u64) -> Arc<SpectralOperator> {
        let r = sigma.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rx = random_orthogonal(r, &mut rng);
        let rz = random_orthogonal(r, &mut rng);
        Arc::new(SpectralOperator::new(sigma, rx, rz, seed).unwrap())
    }

    #[test]
    fn empirical_loss_zero_maps() {
        let phi = FnFeatures::new(2, Side::X, |_| vec![0.0, 0.0]);
        let psi = FnFeatures::new(2, Side::Z, |_| vec![0.0, 0.0]);
        let batch = vec![UnlabeledSample { z: 0.1, x: 0.2 }, UnlabeledSample { z: 1.0, x: 2.0 }];
        assert_eq!(empirical_loss(&phi, &psi, &batch).unwrap(), 0.0);
    }

    #[test]
    fn empirical_loss_two_sample_hand_oracle() {
        // scalar features encoded by lookup on the sample points
        let phi = FnFeatures::new(1, Side::X, |x| vec![if x < 1.0 { 2.0 } else { -1.0 }]);
        let psi = FnFeatures::new(1, Side::Z, |z| vec![if z < 1.0 { 0.5 } else { 3.0 }]);
        let batch = vec![UnlabeledSample { z: 0.5, x: 0.5 }, UnlabeledSample { z: 2.0, x: 2.0 }];
        // phi = (2, -1), psi = (0.5, 3)
        // cross: (2*3)^2 + (-1*0.5)^2 = 36.25, /(2*1) = 18.125
        // matched: 2*0.5 + (-1)*3 = -2, term = -2*(-2)/2 = 2
        let expect = 36.25 / 2.0 + 2.0;
        assert_abs_diff_eq!(empirical_loss(&phi, &psi, &batch).unwrap(), expect, epsilon = 1e-14);
        assert!(empirical_loss(&phi, &psi, &batch[..1]).is_err());
    }

    #[test]
    fn empirical_loss_batch_order_invariant() {
        let op = test_op(vec![0.4, 0.2], 3);
        let (phi, psi) = oracle_factorization(&op, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut batch = rejection_sample(&op, 64, &mut rng).unwrap();
        let a = empirical_loss(&phi, &psi, &batch).unwrap();
        batch.reverse();
        batch.swap(3, 40);
        let b = empirical_loss(&phi, &psi, &batch).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn empirical_loss_unbiased_up_to_constant() {
        // batch means over disjoint batches track the population objective
        // minus the constant operator-norm term
        let s = Scenario {
            d: 6,
            c_sigma: 0.5,
            c_alpha: 1.0,
            sigma_head: 1.0,
            noise_var: 0.1,
            seed_op: 2,
            seed_data: 9,
        };
        let (op, _) = build_scenario(&s).unwrap();
        let op = Arc::new(op);
        let (phi, psi) = oracle_factorization(&op, op.r());
        let grid = Grid::new(1024);
        let pop = population_loss_quadrature(&phi, &psi, &op, &grid);
        let hs2 = op.hs_norm().powi(2);
        let n_batches = 200;
        let bs = 512;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed_data);
        let all = rejection_sample(&op, n_batches * bs, &mut rng).unwrap();
        let losses: Vec<f64> = all
            .chunks_exact(bs)
            .map(|b| empirical_loss(&phi, &psi, b).unwrap() + hs2)
            .collect();
        let mean = losses.iter().sum::<f64>() / n_batches as f64;
        let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n_batches as f64;
        let se = (var / n_batches as f64).sqrt();
        assert!(
            (mean - pop).abs() <= 3.0 * se,
            "batch mean {mean} vs population {pop}, se {se}"
        );
    }

    #[test]
    fn population_loss_zero_maps_is_hs_norm() {
        let op = test_op(vec![0.3, 0.1], 1);
        let phi = FnFeatures::new(1, Side::X, |_| vec![0.0]);
        let psi = FnFeatures::new(1, Side::Z, |_| vec![0.0]);
        let grid = Grid::new(512);
        let l = population_loss_quadrature(&phi, &psi, &op, &grid);
        assert_abs_diff_eq!(l, op.hs_norm().powi(2), epsilon = 1e-10);
    }

    #[test]
    fn population_loss_oracle_factorization_leaves_tail() {
        let op = test_op(vec![0.5, 0.3, 0.2, 0.1], 7);
        let grid = Grid::new(1024);
        for k in 0..=op.r() {
            let (phi, psi) = oracle_factorization(&op, k);
            let l = population_loss_quadrature(&phi, &psi, &op, &grid);
            let tail: f64 = op.sigma()[k..].iter().map(|s| s * s).sum();
            assert_abs_diff_eq!(l, tail, epsilon = 1e-6);
        }
    }

    #[test]
    fn population_loss_matches_reference_basis_norm() {
        // arbitrary smooth maps inside the reference span: the loss equals
        // the squared Frobenius distance between operator matrices
        let op = test_op(vec![0.4, 0.25, 0.1], 11);
        let grid = Grid::new(2048);
        let o1 = Arc::clone(&op);
        let o2 = Arc::clone(&op);
        let phi = FnFeatures::new(3, Side::X, move |x| {
            let s = sine_family(x, o1.r() + 3);
            vec![1.0 + 0.3 * s[0], 0.5 * s[1] - 0.2 * s[4], 0.7 * s[2] + 0.1 * s[5]]
        });
        let psi = FnFeatures::new(3, Side::Z, move |z| {
            let s = sine_family(z, o2.r() + 3);
            vec![0.8 - 0.1 * s[2], 0.4 * s[0] + 0.3 * s[3], 0.6 * s[1]]
        });
        let l = population_loss_quadrature(&phi, &psi, &op, &grid);
        let m = op.feature_operator_matrix(&phi, &psi, &grid).unwrap();
        let diff = m.sub(&op.reference_matrix());
        assert_abs_diff_eq!(l, diff.frob_norm().powi(2), epsilon = 1e-6);
    }

    #[test]
    fn population_loss_lower_bound() {
        // any feature pair of dim d leaves at least the rank-d tail
        let op = test_op(vec![0.6, 0.4, 0.3, 0.2, 0.1], 13);
        let grid = Grid::new(1024);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..5 {
            let d = 2 + trial % 3;
            let coeffs: Vec<Vec<f64>> = (0..2 * d)
                .map(|_| (0..8).map(|_| rng.gen::<f64>() - 0.5).collect())
                .collect();
            let cphi = coeffs[..d].to_vec();
            let cpsi = coeffs[d..].to_vec();
            let phi = FnFeatures::new(d, Side::X, move |x| {
                let s = sine_family(x, 7);
                cphi.iter().map(|c| c[0] + dot(&c[1..], &s)).collect()
            });
            let psi = FnFeatures::new(d, Side::Z, move |z| {
                let s = sine_family(z, 7);
                cpsi.iter().map(|c| c[0] + dot(&c[1..], &s)).collect()
            });
            let l = population_loss_quadrature(&phi, &psi, &op, &grid);
            // best rank-d approximation keeps the constant and d-1 top sigmas
            let tail: f64 = op.sigma()[d - 1..].iter().map(|s| s * s).sum();
            assert!(l >= tail - 1e-6, "loss {l} below tail bound {tail} at d={d}");
        }
    }

    #[test]
    fn regularizer_oracles() {
        let batch = vec![UnlabeledSample { z: 0.5, x: 0.5 }];
        let d = 3;
        let zero_x = FnFeatures::new(d, Side::X, move |_| vec![0.0; d]);
        let zero_z = FnFeatures::new(d, Side::Z, move |_| vec![0.0; d]);
        assert_abs_diff_eq!(
            regularizer(&zero_x, &zero_z, &batch).unwrap(),
            2.0 * d as f64,
            epsilon = 1e-14
        );
        let phi = FnFeatures::new(1, Side::X, |_| vec![2.0]);
        let psi = FnFeatures::new(1, Side::Z, |_| vec![0.0]);
        // (4-1)^2 + 1 + 2*4 + 0 = 18
        assert_abs_diff_eq!(regularizer(&phi, &psi, &batch).unwrap(), 18.0, epsilon = 1e-14);
        assert!(regularizer(&phi, &psi, &[]).is_err());
    }

    #[test]
    fn regularizer_matches_literal_formula() {
        // check the |f|^4 + d shortcut against the matrix expression
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = 4;
        let rows: Vec<Vec<f64>> =
            (0..6).map(|_| (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()).collect();
        let phis = rows[..3].to_vec();
        let psis = rows[3..].to_vec();
        let literal = |rows: &[Vec<f64>]| -> f64 {
            rows.iter()
                .map(|f| {
                    let mut frob = 0.0;
                    for a in 0..d {
                        for b in 0..d {
                            let e = f[a] * f[b] - if a == b { 1.0 } else { 0.0 };
                            frob += e * e;
                        }
                    }
                    frob + 2.0 * dot(f, f)
                })
                .sum::<f64>()
                / rows.len() as f64
        };
        let expect = literal(&phis) + literal(&psis);
        assert_abs_diff_eq!(regularizer_rows(&phis, &psis), expect, epsilon = 1e-12);
        assert!(regularizer_rows(&phis, &psis) >= 0.0);
    }

    #[test]
    fn train_zero_epochs_returns_centered_init() {
        let op = test_op(vec![0.3], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = rejection_sample(&op, 256, &mut rng).unwrap();
        let config = ContrastiveConfig {
            feature_dim: 3,
            hidden_width: 8,
            batch_size: 64,
            epochs: 0,
            ..Default::default()
        };
        let (phi, psi, history) = train(&config, &data).unwrap();
        assert!(history.is_empty());
        // centering applied: empirical mean of trainable outputs ~ 0
        for (net, pick) in [(&phi, true), (&psi, false)] {
            let mut means = vec![0.0; config.feature_dim];
            for s in &data {
                let t = if pick { s.x } else { s.z };
                for (m, v) in means.iter_mut().zip(net.trainable_eval(t)) {
                    *m += v;
                }
            }
            assert!(means.iter().all(|m| (m / data.len() as f64).abs() < 1e-10));
        }
        assert!(train(&config, &data[..10]).is_err());
    }

    #[test]
    fn train_determinism_and_descent() {
        let op = test_op(vec![0.5, 0.0], 6);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = rejection_sample(&op, 2048, &mut rng).unwrap();
        let config = ContrastiveConfig {
            feature_dim: 3,
            hidden_width: 16,
            batch_size: 256,
            epochs: 5,
            seed: 12,
            ..Default::default()
        };
        let (p1, q1, h1) = train(&config, &data).unwrap();
        let (p2, q2, h2) = train(&config, &data).unwrap();
        assert_eq!(p1.params_flat(), p2.params_flat());
        assert_eq!(q1.params_flat(), q2.params_flat());
        for (a, b) in h1.iter().zip(&h2) {
            assert_eq!(a.empirical_loss.to_bits(), b.empirical_loss.to_bits());
        }
        // loss trends down over the first epochs
        let obj: Vec<f64> = h1
            .iter()
            .map(|h| h.empirical_loss + config.reg_weight * h.regularizer)
            .collect();
        assert!(
            obj.last().unwrap() < obj.first().unwrap(),
            "objective did not decrease: {obj:?}"
        );
    }

    #[test]
    fn gradient_matches_finite_difference_on_rows() {
        // check pair_gradients against numeric differentiation of the scalar
        // batch objective
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let m = 5;
        let d = 3;
        let gamma = 0.07;
        let mk = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..m).map(|_| (0..d).map(|_| rng.gen::<f64>() - 0.5).collect()).collect()
        };
        let phis = mk(&mut rng);
        let psis = mk(&mut rng);
        let obj = |phis: &[Vec<f64>], psis: &[Vec<f64>]| -> f64 {
            empirical_loss_rows(phis, psis).unwrap() + gamma * regularizer_rows(phis, psis)
        };
        let (g_phi, g_psi) = pair_gradients(&phis, &psis, gamma);
        let h = 1e-6;
        for i in 0..m {
            for a in 0..d {
                let mut up = phis.clone();
                up[i][a] += h;
                let mut down = phis.clone();
                down[i][a] -= h;
                let fd = (obj(&up, &psis) - obj(&down, &psis)) / (2.0 * h);
                assert_abs_diff_eq!(g_phi[i][a], fd, epsilon = 1e-6);

                let mut up = psis.clone();
                up[i][a] += h;
                let mut down = psis.clone();
                down[i][a] -= h;
                let fd = (obj(&phis, &up) - obj(&phis, &down)) / (2.0 * h);
                assert_abs_diff_eq!(g_psi[i][a], fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn loss_history_csv_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let history = vec![
            LossReport { epoch: 0, empirical_loss: -0.5, regularizer: 2.0 },
            LossReport { epoch: 1, empirical_loss: -0.75, regularizer: 1.5 },
        ];
        write_loss_history_csv(&path, &history).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "epoch,empirical_loss,regularizer");
        assert!(lines.next().unwrap().starts_with("0,-5.0000000000000000e-1"));
    }
}
