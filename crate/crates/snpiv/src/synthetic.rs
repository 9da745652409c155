//! Scenario construction and data synthesis: linear decay profiles, the
//! structural function on the singular basis, exact joint sampling of (X, Z)
//! by rejection, and outcome generation with exogenous noise.

use crate::linalg::random_orthogonal;
use crate::operator::{CoeffVector, OperatorError, SpectralOperator, DOMAIN};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("rejection sampling acceptance rate {0:.4} below 1% after {1} proposals")]
    LowAcceptance(f64, u64),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Full description of one synthetic problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Total dimension; the operator carries d-1 nonconstant triplets.
    pub d: usize,
    pub c_sigma: f64,
    pub c_alpha: f64,
    /// Leading singular value before the nonnegativity rescale.
    pub sigma_head: f64,
    pub noise_var: f64,
    pub seed_op: u64,
    pub seed_data: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        if self.d < 2 {
            return Err(SyntheticError::InvalidScenario(format!("d = {} < 2", self.d)));
        }
        for (name, v) in [("c_sigma", self.c_sigma), ("c_alpha", self.c_alpha)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SyntheticError::InvalidScenario(format!("{name} = {v} outside [0,1]")));
            }
        }
        if !(self.noise_var >= 0.0) {
            return Err(SyntheticError::InvalidScenario(format!(
                "noise_var = {} negative",
                self.noise_var
            )));
        }
        if !(self.sigma_head > 0.0 && self.sigma_head <= 1.0) {
            return Err(SyntheticError::InvalidScenario(format!(
                "sigma_head = {} outside (0,1]",
                self.sigma_head
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "d={}\nc_sigma={}\nc_alpha={}\nsigma_head={}\nnoise_var={}\nseed_op={}\nseed_data={}\n",
            self.d, self.c_sigma, self.c_alpha, self.sigma_head, self.noise_var, self.seed_op,
            self.seed_data
        )
    }

    pub fn from_text(text: &str) -> Result<Self, SyntheticError> {
        let mut s = Scenario {
            d: 0,
            c_sigma: f64::NAN,
            c_alpha: f64::NAN,
            sigma_head: 1.0,
            noise_var: 0.1,
            seed_op: 0,
            seed_data: 0,
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| SyntheticError::Parse {
                line: i + 1,
                msg: format!("missing '=' in '{line}'"),
            })?;
            let perr = |e: &dyn std::fmt::Display| SyntheticError::Parse {
                line: i + 1,
                msg: format!("{k}: {e}"),
            };
            match k.trim() {
                "d" => s.d = v.trim().parse().map_err(|e| perr(&e))?,
                "c_sigma" => s.c_sigma = v.trim().parse().map_err(|e| perr(&e))?,
                "c_alpha" => s.c_alpha = v.trim().parse().map_err(|e| perr(&e))?,
                "sigma_head" => s.sigma_head = v.trim().parse().map_err(|e| perr(&e))?,
                "noise_var" => s.noise_var = v.trim().parse().map_err(|e| perr(&e))?,
                "seed_op" => s.seed_op = v.trim().parse().map_err(|e| perr(&e))?,
                "seed_data" => s.seed_data = v.trim().parse().map_err(|e| perr(&e))?,
                other => {
                    return Err(SyntheticError::Parse {
                        line: i + 1,
                        msg: format!("unknown key '{other}'"),
                    })
                }
            }
        }
        if s.d == 0 || s.c_sigma.is_nan() || s.c_alpha.is_nan() {
            return Err(SyntheticError::InvalidScenario(
                "scenario file must set d, c_sigma and c_alpha".into(),
            ));
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, SyntheticError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnlabeledSample {
    pub z: f64,
    pub x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSample {
    pub z: f64,
    pub x: f64,
    pub y: f64,
}

/// The target function expressed on the right singular basis:
/// h0(x) = sum_i alpha_i v_i(x), with unit l2-norm coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralFunction {
    alpha: Vec<f64>,
}

impl StructuralFunction {
    pub fn new(alpha: Vec<f64>) -> Result<Self, SyntheticError> {
        let norm = alpha.iter().map(|a| a * a).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(SyntheticError::InvalidScenario(format!(
                "structural coefficients have norm {norm}, expected 1"
            )));
        }
        Ok(StructuralFunction { alpha })
    }

    /// Bypasses the unit-norm check; for tests exercising degenerate targets.
    pub fn from_raw(alpha: Vec<f64>) -> Self {
        StructuralFunction { alpha }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn coeffs(&self) -> CoeffVector {
        CoeffVector { constant: 0.0, coeffs: self.alpha.clone() }
    }

    pub fn eval(&self, op: &SpectralOperator, x: f64) -> Result<f64, OperatorError> {
        let v = op.eval_right(x)?;
        Ok(self.alpha.iter().zip(&v).map(|(a, b)| a * b).sum())
    }

    /// T h0 evaluated at z: sum_i sigma_i alpha_i u_i(z).
    pub fn conditional_mean(&self, op: &SpectralOperator, z: f64) -> Result<f64, OperatorError> {
        let th = op.apply(&self.coeffs())?;
        let u = op.eval_left(z)?;
        Ok(th.constant + th.coeffs.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>())
    }
}

/// Linear decay from `head` down to `c * head` over r entries, endpoints
/// inclusive.
pub fn make_decay(head: f64, c: f64, r: usize) -> Vec<f64> {
    assert!(r >= 1);
    if r == 1 {
        return vec![head];
    }
    (0..r)
        .map(|i| head * (1.0 - (1.0 - c) * i as f64 / (r - 1) as f64))
        .collect()
}

/// Instantiates the operator (Haar-random singular directions, linear sigma
/// decay with the nonnegativity rescale) and the unit-norm target.
pub fn build_scenario(
    s: &Scenario,
) -> Result<(SpectralOperator, StructuralFunction), SyntheticError> {
    s.validate()?;
    let r = s.d - 1;
    let sigma = make_decay(s.sigma_head, s.c_sigma, r);
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed_op);
    let rot_x = random_orthogonal(r, &mut rng);
    let rot_z = random_orthogonal(r, &mut rng);
    let op = SpectralOperator::new(sigma, rot_x, rot_z, s.seed_op)?;
    let mut alpha = make_decay(1.0, s.c_alpha, r);
    let norm = alpha.iter().map(|a| a * a).sum::<f64>().sqrt();
    for a in alpha.iter_mut() {
        *a /= norm;
    }
    let h0 = StructuralFunction::new(alpha)?;
    Ok((op, h0))
}

/// Exact joint samples of (X, Z) via rejection against the uniform product
/// proposal. Envelope: 1.05 times the 512x512 grid maximum of the density;
/// the in-loop assertion catches any density value above it.
pub fn rejection_sample(
    op: &SpectralOperator,
    m: usize,
    rng: &mut impl Rng,
) -> Result<Vec<UnlabeledSample>, SyntheticError> {
    let envelope = 1.05 * op.density_max();
    let mut out = Vec::with_capacity(m);
    let mut proposals: u64 = 0;
    while out.len() < m {
        let x = rng.gen::<f64>() * DOMAIN;
        let z = rng.gen::<f64>() * DOMAIN;
        let u: f64 = rng.gen::<f64>() * envelope;
        proposals += 1;
        let p = op.density(x, z)?;
        assert!(
            p <= envelope,
            "density {p} exceeds rejection envelope {envelope} at ({x}, {z})"
        );
        if u < p {
            out.push(UnlabeledSample { z, x });
        }
        if proposals >= 10_000 {
            let rate = out.len() as f64 / proposals as f64;
            if rate < 0.01 {
                return Err(SyntheticError::LowAcceptance(rate, proposals));
            }
        }
    }
    Ok(out)
}

/// Outcomes per the sampling construction: y = (T h0)(z) + v with
/// v ~ Normal(0, noise_var). Equivalently y = h0(x) + u with E[u | z] = 0.
pub fn sample_outcomes(
    op: &SpectralOperator,
    h0: &StructuralFunction,
    pairs: &[UnlabeledSample],
    noise_var: f64,
    rng: &mut impl Rng,
) -> Result<Vec<LabeledSample>, SyntheticError> {
    let noise = Normal::new(0.0, noise_var.sqrt())
        .map_err(|e| SyntheticError::InvalidScenario(format!("noise_var: {e}")))?;
    let mut out = Vec::with_capacity(pairs.len());
    for s in pairs {
        let mean = h0.conditional_mean(op, s.z)?;
        let y = mean + if noise_var > 0.0 { noise.sample(rng) } else { 0.0 };
        out.push(LabeledSample { z: s.z, x: s.x, y });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// CSV serialization: 17 significant digits, enough to round-trip every f64.

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_unlabeled_csv(path: &Path, samples: &[UnlabeledSample]) -> Result<(), SyntheticError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "z,x")?;
    for s in samples {
        writeln!(w, "{},{}", fmt(s.z), fmt(s.x))?;
    }
    Ok(())
}

pub fn write_labeled_csv(path: &Path, samples: &[LabeledSample]) -> Result<(), SyntheticError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "z,x,y")?;
    for s in samples {
        writeln!(w, "{},{},{}", fmt(s.z), fmt(s.x), fmt(s.y))?;
    }
    Ok(())
}

fn parse_row(line: &str, n: usize, fields: usize) -> Result<Vec<f64>, SyntheticError> {
    let vals: Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|e| SyntheticError::Parse { line: n, msg: e.to_string() })?;
    if vals.len() != fields {
        return Err(SyntheticError::Parse {
            line: n,
            msg: format!("expected {fields} fields, got {}", vals.len()),
        });
    }
    Ok(vals)
}

pub fn read_unlabeled_csv(path: &Path) -> Result<Vec<UnlabeledSample>, SyntheticError> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "z,x" {
                return Err(SyntheticError::Parse { line: 1, msg: "expected header 'z,x'".into() });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_row(&line, i + 1, 2)?;
        out.push(UnlabeledSample { z: v[0], x: v[1] });
    }
    Ok(out)
}

pub fn read_labeled_csv(path: &Path) -> Result<Vec<LabeledSample>, SyntheticError> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "z,x,y" {
                return Err(SyntheticError::Parse {
                    line: 1,
                    msg: "expected header 'z,x,y'".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_row(&line, i + 1, 3)?;
        out.push(LabeledSample { z: v[0], x: v[1], y: v[2] });
    }
    Ok(out)
}
