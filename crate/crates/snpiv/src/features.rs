//! Feature maps: the abstraction shared by the estimator, plus the two
//! concrete families — exact singular-function features read off the operator,
//! and a small trainable MLP with hand-rolled backprop and Adam.

use crate::linalg::Matrix;
use crate::operator::SpectralOperator;
use crate::par;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use statrs::function::erf::erf;
use std::io::{Read, Write};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    X,
    Z,
}

/// A map from a point of [0, 2pi] to a feature vector. Implementations must
/// be pure so evaluation can run concurrently.
pub trait FeatureMap: Send + Sync {
    fn dim(&self) -> usize;
    fn side(&self) -> Side;
    fn eval(&self, t: f64) -> Vec<f64>;
}

/// Exact singular-function features: constant plus the top-k right (X side)
/// or left (Z side) singular functions of the operator.
pub struct OracleFeatures {
    op: Arc<SpectralOperator>,
    side: Side,
    k: usize,
}

impl OracleFeatures {
    pub fn new(op: Arc<SpectralOperator>, side: Side, k: usize) -> Self {
        assert!(k <= op.r(), "requested {k} singular functions, operator has {}", op.r());
        OracleFeatures { op, side, k }
    }
}

impl FeatureMap for OracleFeatures {
    fn dim(&self) -> usize {
        self.k + 1
    }

    fn side(&self) -> Side {
        self.side
    }

    fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.k + 1);
        out.push(1.0);
        let f = match self.side {
            Side::X => self.op.eval_right(t),
            Side::Z => self.op.eval_left(t),
        }
        .expect("oracle features evaluated outside [0, 2pi]");
        out.extend(f.into_iter().take(self.k));
        out
    }
}

/// Feature map backed by an arbitrary closure; used by tests and for
/// hand-built factorizations.
pub struct FnFeatures {
    dim: usize,
    side: Side,
    f: Box<dyn Fn(f64) -> Vec<f64> + Send + Sync>,
}

impl FnFeatures {
    pub fn new(dim: usize, side: Side, f: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        FnFeatures { dim, side, f: Box::new(f) }
    }
}

impl FeatureMap for FnFeatures {
    fn dim(&self) -> usize {
        self.dim
    }

    fn side(&self) -> Side {
        self.side
    }

    fn eval(&self, t: f64) -> Vec<f64> {
        let out = (self.f)(t);
        debug_assert_eq!(out.len(), self.dim);
        out
    }
}

/// The canonical exact factorization of a k-truncated operator:
/// phi = (1, v_1..v_k), psi = (1, sigma_1 u_1 .. sigma_k u_k). The pairing
/// sum phi_i psi_i then reproduces the truncated kernel exactly.
pub fn oracle_factorization(
    op: &Arc<SpectralOperator>,
    k: usize,
) -> (FnFeatures, FnFeatures) {
    assert!(k <= op.r());
    let ox = Arc::clone(op);
    let oz = Arc::clone(op);
    let phi = FnFeatures::new(k + 1, Side::X, move |x| {
        let mut out = vec![1.0];
        out.extend(ox.eval_right(x).unwrap().into_iter().take(k));
        out
    });
    let psi = FnFeatures::new(k + 1, Side::Z, move |z| {
        let mut out = vec![1.0];
        let u = oz.eval_left(z).unwrap();
        out.extend((0..k).map(|i| oz.sigma()[i] * u[i]));
        out
    });
    (phi, psi)
}

// ---------------------------------------------------------------------------
// MLP

/// Exact-erf GELU. The erf form keeps finite-difference gradient checks clean.
fn gelu(t: f64) -> f64 {
    0.5 * t * (1.0 + erf(t / std::f64::consts::SQRT_2))
}

fn gelu_prime(t: f64) -> f64 {
    let cdf = 0.5 * (1.0 + erf(t / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + t * pdf
}

/// First-layer activation t + sin^2(t); periodic part lets a scalar input
/// spread across phases.
fn act0(t: f64) -> f64 {
    t + t.sin().powi(2)
}

fn act0_prime(t: f64) -> f64 {
    1.0 + (2.0 * t).sin()
}

/// A fixed-depth MLP from the scalar point to `widths.last()` trainable
/// features. The constant feature, when enabled, is prepended outside the
/// trainable part, and `centering` (an empirical output mean) is subtracted
/// from the trainable outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpFeatures {
    widths: Vec<usize>,
    /// weights[l] has shape widths[l+1] x widths[l]
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    centering: Vec<f64>,
    constant_augmented: bool,
    side: Side,
}

pub const DEFAULT_WIDTHS: [usize; 4] = [1, 50, 50, 50];

const CHECKPOINT_MAGIC: &[u8; 6] = b"SNPIV1";

impl MlpFeatures {
    /// Random initialization: first layer uniform in [-2, 2], hidden layers
    /// Gaussian with fan-in scaling, output layer Gaussian with 1/fan_in
    /// variance.
    pub fn init(widths: &[usize], side: Side, rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2 && widths[0] == 1);
        let uni = Uniform::new_inclusive(-2.0, 2.0);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..widths.len() - 1 {
            let (rows, cols) = (widths[l + 1], widths[l]);
            let mut w = Vec::with_capacity(rows * cols);
            let mut b = Vec::with_capacity(rows);
            if l == 0 {
                for _ in 0..rows * cols {
                    w.push(uni.sample(rng));
                }
                for _ in 0..rows {
                    b.push(uni.sample(rng));
                }
            } else {
                let last = l == widths.len() - 2;
                let std = if last { 1.0 / (cols as f64).sqrt() } else { (2.0 / cols as f64).sqrt() };
                let normal = Normal::new(0.0, std).unwrap();
                for _ in 0..rows * cols {
                    w.push(normal.sample(rng));
                }
                b.extend(std::iter::repeat(0.0).take(rows));
            }
            weights.push(Matrix::from_vec(rows, cols, w));
            biases.push(b);
        }
        let out = *widths.last().unwrap();
        MlpFeatures {
            widths: widths.to_vec(),
            weights,
            biases,
            centering: vec![0.0; out],
            constant_augmented: true,
            side,
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn trainable_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn constant_augmented(&self) -> bool {
        self.constant_augmented
    }

    pub fn set_constant_augmented(&mut self, on: bool) {
        self.constant_augmented = on;
    }

    fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Raw trainable outputs before centering.
    pub fn forward_raw(&self, t: f64) -> Vec<f64> {
        self.forward_trace(t).post.pop_unchecked()
    }

    fn forward_trace(&self, t: f64) -> Trace {
        let nl = self.layers();
        let mut pre = Vec::with_capacity(nl);
        let mut post = Vec::with_capacity(nl + 1);
        post.push(vec![t]);
        for l in 0..nl {
            let mut z = self.weights[l].matvec(post.last().unwrap());
            for (zi, bi) in z.iter_mut().zip(&self.biases[l]) {
                *zi += bi;
            }
            let a = if l == 0 {
                z.iter().map(|&v| act0(v)).collect()
            } else if l < nl - 1 {
                z.iter().map(|&v| gelu(v)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(a);
        }
        Trace { pre, post }
    }

    /// Centered trainable outputs (no constant).
    pub fn trainable_eval(&self, t: f64) -> Vec<f64> {
        let mut out = self.forward_raw(t);
        for (o, c) in out.iter_mut().zip(&self.centering) {
            *o -= c;
        }
        out
    }

    /// Accumulated parameter gradients over a batch, given per-sample
    /// gradients of some scalar objective w.r.t. the trainable outputs.
    /// Returns the flat gradient (same layout as [`params_flat`]); the sum is
    /// over samples, chunked so parallel and sequential runs agree bitwise.
    ///
    /// [`params_flat`]: MlpFeatures::params_flat
    pub fn backward_batch(
        &self,
        points: &[f64],
        upstream: &[Vec<f64>],
    ) -> Result<Vec<f64>, FeatureError> {
        if points.len() != upstream.len() {
            return Err(FeatureError::ShapeMismatch(format!(
                "{} points vs {} upstream gradients",
                points.len(),
                upstream.len()
            )));
        }
        let out_dim = self.trainable_dim();
        if let Some(bad) = upstream.iter().find(|g| g.len() != out_dim) {
            return Err(FeatureError::ShapeMismatch(format!(
                "upstream gradient has length {}, output dim is {out_dim}",
                bad.len()
            )));
        }
        let np = self.param_count();
        let grad = par::fold_indexed(
            points.len(),
            || vec![0.0; np],
            |mut acc, i| {
                self.backward_one(points[i], &upstream[i], &mut acc);
                acc
            },
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                a
            },
        );
        Ok(grad)
    }

    fn backward_one(&self, t: f64, upstream: &[f64], acc: &mut [f64]) {
        let trace = self.forward_trace(t);
        let nl = self.layers();
        // delta = dL/d(pre-activation of current layer)
        let mut delta = upstream.to_vec();
        let mut offset = self.param_count();
        for l in (0..nl).rev() {
            if l < nl - 1 {
                // delta currently holds dL/d(post-activation l); fold in the
                // activation derivative
                let pre = &trace.pre[l];
                for (d, &z) in delta.iter_mut().zip(pre) {
                    *d *= if l == 0 { act0_prime(z) } else { gelu_prime(z) };
                }
            }
            let input = &trace.post[l];
            let (rows, cols) = (self.widths[l + 1], self.widths[l]);
            offset -= rows * cols + rows;
            let wslice = &mut acc[offset..offset + rows * cols];
            for r in 0..rows {
                let d = delta[r];
                for c in 0..cols {
                    wslice[r * cols + c] += d * input[c];
                }
            }
            let bslice = &mut acc[offset + rows * cols..offset + rows * cols + rows];
            for (b, d) in bslice.iter_mut().zip(&delta) {
                *b += d;
            }
            if l > 0 {
                // propagate to the previous post-activation
                let mut prev = vec![0.0; cols];
                for r in 0..rows {
                    let d = delta[r];
                    let row = self.weights[l].row(r);
                    for c in 0..cols {
                        prev[c] += d * row[c];
                    }
                }
                delta = prev;
            }
        }
        debug_assert_eq!(offset, 0);
    }

    pub fn param_count(&self) -> usize {
        (0..self.layers())
            .map(|l| self.widths[l + 1] * self.widths[l] + self.widths[l + 1])
            .sum()
    }

    /// Parameters flattened layer by layer: weights row-major, then biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in 0..self.layers() {
            out.extend_from_slice(self.weights[l].data());
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<(), FeatureError> {
        if params.len() != self.param_count() {
            return Err(FeatureError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut off = 0;
        for l in 0..self.layers() {
            let (rows, cols) = (self.widths[l + 1], self.widths[l]);
            self.weights[l] =
                Matrix::from_vec(rows, cols, params[off..off + rows * cols].to_vec());
            off += rows * cols;
            self.biases[l].copy_from_slice(&params[off..off + rows]);
            off += rows;
        }
        Ok(())
    }

    /// Sets `centering` to the empirical mean of the raw outputs over the
    /// calibration points, so centered outputs have mean ~0.
    pub fn center(&mut self, calibration: &[f64]) -> Result<(), FeatureError> {
        if calibration.is_empty() {
            return Err(FeatureError::EmptyCalibration);
        }
        let d = self.trainable_dim();
        let n = calibration.len();
        let sums = par::fold_indexed(
            n,
            || vec![0.0; d],
            |mut acc, i| {
                for (a, v) in acc.iter_mut().zip(self.forward_raw(calibration[i])) {
                    *a += v;
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
        self.centering = sums.into_iter().map(|s| s / n as f64).collect();
        Ok(())
    }

    pub fn centering(&self) -> &[f64] {
        &self.centering
    }

    // -- checkpoint ----------------------------------------------------------

    pub fn save(&self, w: &mut impl Write) -> Result<(), FeatureError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&[match self.side {
            Side::X => 0u8,
            Side::Z => 1,
        }])?;
        w.write_all(&[self.constant_augmented as u8])?;
        w.write_all(&(self.widths.len() as u64).to_le_bytes())?;
        for &width in &self.widths {
            w.write_all(&(width as u64).to_le_bytes())?;
        }
        for v in self.params_flat() {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.centering {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(r: &mut impl Read) -> Result<Self, FeatureError> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(FeatureError::BadCheckpoint("wrong magic bytes".into()));
        }
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)?;
        let side = match byte[0] {
            0 => Side::X,
            1 => Side::Z,
            b => return Err(FeatureError::BadCheckpoint(format!("bad side tag {b}"))),
        };
        r.read_exact(&mut byte)?;
        let constant_augmented = match byte[0] {
            0 => false,
            1 => true,
            b => return Err(FeatureError::BadCheckpoint(format!("bad flag {b}"))),
        };
        let mut u = [0u8; 8];
        r.read_exact(&mut u)?;
        let nw = u64::from_le_bytes(u) as usize;
        if !(2..=16).contains(&nw) {
            return Err(FeatureError::BadCheckpoint(format!("implausible depth {nw}")));
        }
        let mut widths = Vec::with_capacity(nw);
        for _ in 0..nw {
            r.read_exact(&mut u)?;
            widths.push(u64::from_le_bytes(u) as usize);
        }
        if widths[0] != 1 || widths.iter().any(|&w| w == 0 || w > 1 << 20) {
            return Err(FeatureError::BadCheckpoint("implausible widths".into()));
        }
        let mut net = MlpFeatures {
            weights: (0..nw - 1)
                .map(|l| Matrix::zeros(widths[l + 1], widths[l]))
                .collect(),
            biases: (0..nw - 1).map(|l| vec![0.0; widths[l + 1]]).collect(),
            centering: vec![0.0; widths[nw - 1]],
            widths,
            constant_augmented,
            side,
        };
        let mut params = vec![0.0; net.param_count()];
        for p in params.iter_mut() {
            r.read_exact(&mut u)?;
            *p = f64::from_le_bytes(u);
        }
        net.set_params_flat(&params)?;
        for c in net.centering.iter_mut() {
            r.read_exact(&mut u)?;
            *c = f64::from_le_bytes(u);
        }
        Ok(net)
    }
}

impl FeatureMap for MlpFeatures {
    fn dim(&self) -> usize {
        self.trainable_dim() + self.constant_augmented as usize
    }

    fn side(&self) -> Side {
        self.side
    }

    fn eval(&self, t: f64) -> Vec<f64> {
        let centered = self.trainable_eval(t);
        if self.constant_augmented {
            let mut out = Vec::with_capacity(centered.len() + 1);
            out.push(1.0);
            out.extend(centered);
            out
        } else {
            centered
        }
    }
}

struct Trace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

trait PopUnchecked<T> {
    fn pop_unchecked(self) -> T;
}

impl<T> PopUnchecked<T> for Vec<T> {
    fn pop_unchecked(mut self) -> T {
        self.pop().expect("nonempty")
    }
}

// ---------------------------------------------------------------------------
// Adam

#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step, in place.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grads: &[f64],
) -> Result<(), FeatureError> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(FeatureError::ShapeMismatch(format!(
            "adam holds {} accumulators, got {} params / {} grads",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= state.lr * mhat / (vhat.sqrt() + state.eps);
    }
    Ok(())
}
