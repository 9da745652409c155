//! Experiment orchestration: the (c_alpha, c_sigma) MSE grid in oracle and
//! learned modes, the flat-spectrum sweep, single-scenario fits, and CSV/SVG
//! emission. Everything is a pure function of the config and master seed.

use crate::contrastive::{self, ContrastiveConfig};
use crate::diagnostics::{epsilon_hat, tail_norm, tau_sieve};
use crate::features::{FeatureMap, OracleFeatures, Side};
use crate::operator::Grid;
use crate::synthetic::{
    build_scenario, rejection_sample, sample_outcomes, Scenario, StructuralFunction,
    SyntheticError,
};
use crate::twostage::{self, TwoStageConfig};
use crate::{contrastive::ContrastiveError, par, twostage::TwoStageError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid grid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error(transparent)]
    TwoStage(#[from] TwoStageError),
    #[error(transparent)]
    Contrastive(#[from] ContrastiveError),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Oracle,
    Learned,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Oracle => "oracle",
            Mode::Learned => "learned",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "oracle" => Ok(Mode::Oracle),
            "learned" => Ok(Mode::Learned),
            other => Err(format!("unknown mode '{other}' (expected oracle or learned)")),
        }
    }
}

/// Quadrature resolution for error evaluation and diagnostics.
pub const GRID_NODES: usize = 1024;

/// Small ridge on both stages, purely for conditioning.
pub const DEFAULT_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GridConfig {
    pub d: usize,
    pub c_alpha: Vec<f64>,
    pub c_sigma: Vec<f64>,
    pub reps: usize,
    pub n_labeled: usize,
    pub m_unlabeled: usize,
    pub mode: Mode,
    /// Nonconstant feature directions (the constant is always prepended).
    pub feature_dim: usize,
    pub master_seed: u64,
    pub noise_var: f64,
    pub sigma_head: f64,
    /// Retrain features for every rep instead of once per cell.
    pub features_per_rep: bool,
    pub train_epochs: usize,
    pub train_batch: usize,
    pub reg_weight: f64,
    pub learning_rate: f64,
    /// Second-stage ridge; learned features need a real penalty because the
    /// directions they fail to capture otherwise get inverted as noise.
    pub stage_lambda: f64,
}

impl GridConfig {
    /// Desk-scale defaults: a 3x3 grid with modest sample sizes.
    pub fn desk(mode: Mode) -> Self {
        GridConfig {
            d: 11,
            c_alpha: vec![0.1, 0.5, 1.0],
            c_sigma: vec![0.1, 0.5, 1.0],
            reps: 50,
            n_labeled: 2000,
            m_unlabeled: 20_000,
            mode,
            feature_dim: 10,
            master_seed: 0,
            noise_var: 0.1,
            sigma_head: 1.0,
            features_per_rep: false,
            train_epochs: 120,
            train_batch: 1024,
            reg_weight: 0.05,
            learning_rate: 1e-3,
            stage_lambda: match mode {
                Mode::Oracle => DEFAULT_RIDGE,
                Mode::Learned => 1e-3,
            },
        }
    }

    /// Full-size settings matching the reference experiments.
    pub fn apply_paper_scale(&mut self) {
        self.reps = 500;
        self.n_labeled = 10_000;
        self.m_unlabeled = 100_000;
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.c_alpha.is_empty() || self.c_sigma.is_empty() {
            return Err(HarnessError::InvalidConfig("empty c_alpha or c_sigma list".into()));
        }
        if self.reps == 0 {
            return Err(HarnessError::InvalidConfig("reps must be >= 1".into()));
        }
        if self.d < 2 {
            return Err(HarnessError::InvalidConfig(format!("d = {} < 2", self.d)));
        }
        if self.feature_dim == 0 {
            return Err(HarnessError::InvalidConfig("feature_dim must be >= 1".into()));
        }
        Ok(())
    }
}

pub const CSV_HEADER: &str =
    "c_alpha,c_sigma,rep,mode,mse,tau,tail_norm,epsilon_hat,sigma_scale,wall_time_s";

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub c_alpha: f64,
    pub c_sigma: f64,
    pub rep: usize,
    pub mode: Mode,
    pub mse: f64,
    pub tau: f64,
    pub tail_norm: f64,
    /// Learned mode only; empty column otherwise.
    pub epsilon_hat: Option<f64>,
    pub sigma_scale: f64,
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.c_alpha,
            self.c_sigma,
            self.rep,
            self.mode.as_str(),
            self.mse,
            self.tau,
            self.tail_norm,
            self.epsilon_hat.map(|e| e.to_string()).unwrap_or_default(),
            self.sigma_scale,
            self.wall_time_s
        )
    }

    pub fn parse(line: &str, line_no: usize) -> Result<Self, HarnessError> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(HarnessError::Parse {
                line: line_no,
                msg: format!("expected 10 fields, got {}", fields.len()),
            });
        }
        let num = |i: usize| -> Result<f64, HarnessError> {
            fields[i].trim().parse::<f64>().map_err(|e| HarnessError::Parse {
                line: line_no,
                msg: format!("field {}: {e}", i + 1),
            })
        };
        let mode: Mode = fields[3].trim().parse().map_err(|e| HarnessError::Parse {
            line: line_no,
            msg: e,
        })?;
        Ok(RunRecord {
            c_alpha: num(0)?,
            c_sigma: num(1)?,
            rep: fields[2].trim().parse().map_err(|e| HarnessError::Parse {
                line: line_no,
                msg: format!("rep: {e}"),
            })?,
            mode,
            mse: num(4)?,
            tau: num(5)?,
            tail_norm: num(6)?,
            epsilon_hat: if fields[7].trim().is_empty() { None } else { Some(num(7)?) },
            sigma_scale: num(8)?,
            wall_time_s: num(9)?,
        })
    }
}

// ---------------------------------------------------------------------------
// Seeding: all stream seeds derive from the master seed through a splitmix64
// chain, so each (cell, rep) owns an independent stream and adding reps or
// cells never shifts existing ones.

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn hash_seed(parts: &[u64]) -> u64 {
    let mut h = 0x51_7C_C1_B7_27_22_0A_95u64;
    for &p in parts {
        h = splitmix64(h ^ splitmix64(p));
    }
    h
}

const TAG_OPERATOR: u64 = 1;
const TAG_DATA: u64 = 2;
const TAG_TRAIN: u64 = 3;

fn rep_seed(master: u64, c_alpha: f64, c_sigma: f64, rep: usize) -> u64 {
    hash_seed(&[master, TAG_DATA, c_alpha.to_bits(), c_sigma.to_bits(), rep as u64])
}

fn train_seed(master: u64, c_alpha: f64, c_sigma: f64, rep: Option<usize>) -> u64 {
    let r = rep.map(|r| r as u64 + 1).unwrap_or(0);
    hash_seed(&[master, TAG_TRAIN, c_alpha.to_bits(), c_sigma.to_bits(), r])
}

/// Operator rotations depend only on the master seed, so every grid cell sees
/// the same singular directions and only the decay profiles vary.
fn operator_seed(master: u64) -> u64 {
    hash_seed(&[master, TAG_OPERATOR])
}

// ---------------------------------------------------------------------------
// Grid execution

struct CellFeatures {
    phi: Arc<dyn FeatureMap>,
    psi: Arc<dyn FeatureMap>,
    tau: f64,
    epsilon_hat: Option<f64>,
}

fn make_cell_scenario(cfg: &GridConfig, c_alpha: f64, c_sigma: f64) -> Scenario {
    Scenario {
        d: cfg.d,
        c_sigma,
        c_alpha,
        sigma_head: cfg.sigma_head,
        noise_var: cfg.noise_var,
        seed_op: operator_seed(cfg.master_seed),
        seed_data: 0,
    }
}

fn build_features(
    cfg: &GridConfig,
    op: &Arc<crate::operator::SpectralOperator>,
    seed: u64,
    grid: &Grid,
) -> Result<CellFeatures, HarnessError> {
    let k = cfg.feature_dim.min(op.r());
    let (phi, psi): (Arc<dyn FeatureMap>, Arc<dyn FeatureMap>) = match cfg.mode {
        Mode::Oracle => (
            Arc::new(OracleFeatures::new(Arc::clone(op), Side::X, k)),
            Arc::new(OracleFeatures::new(Arc::clone(op), Side::Z, k)),
        ),
        Mode::Learned => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let unlabeled = rejection_sample(op, cfg.m_unlabeled, &mut rng)?;
            let train_cfg = ContrastiveConfig {
                feature_dim: k,
                hidden_width: 50,
                batch_size: cfg.train_batch.min(cfg.m_unlabeled),
                epochs: cfg.train_epochs,
                reg_weight: cfg.reg_weight,
                learning_rate: cfg.learning_rate,
                seed,
            };
            let (phi, psi, _history) = contrastive::train(&train_cfg, &unlabeled)?;
            (Arc::new(phi), Arc::new(psi))
        }
    };
    let tau = tau_sieve(phi.as_ref(), op, grid).unwrap_or(f64::NAN);
    let eps = match cfg.mode {
        Mode::Oracle => None,
        Mode::Learned => Some(
            epsilon_hat(phi.as_ref(), psi.as_ref(), op, k, grid).unwrap_or(f64::NAN),
        ),
    };
    Ok(CellFeatures { phi, psi, tau, epsilon_hat: eps })
}

/// One estimator fit on a fresh labeled dataset; diagnostics are copied from
/// the feature set in use.
#[allow(clippy::too_many_arguments)]
fn run_rep(
    cfg: &GridConfig,
    op: &Arc<crate::operator::SpectralOperator>,
    h0: &StructuralFunction,
    feats: &CellFeatures,
    c_alpha: f64,
    c_sigma: f64,
    rep: usize,
    grid: &Grid,
) -> Result<RunRecord, HarnessError> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed(cfg.master_seed, c_alpha, c_sigma, rep));
    let pairs = rejection_sample(op, cfg.n_labeled, &mut rng)?;
    let data = sample_outcomes(op, h0, &pairs, cfg.noise_var, &mut rng)?;
    let ts = TwoStageConfig { eta: DEFAULT_RIDGE, lambda: cfg.stage_lambda, ..Default::default() };
    let fit = twostage::fit(Arc::clone(&feats.phi), Arc::clone(&feats.psi), &data, &ts)?;
    let err = fit.l2_error(op, h0, grid);
    let k = cfg.feature_dim.min(op.r());
    Ok(RunRecord {
        c_alpha,
        c_sigma,
        rep,
        mode: cfg.mode,
        mse: err * err,
        tau: feats.tau,
        tail_norm: tail_norm(h0.alpha(), k),
        epsilon_hat: feats.epsilon_hat,
        sigma_scale: op.scale(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn flagged_record(cfg: &GridConfig, c_alpha: f64, c_sigma: f64, rep: usize) -> RunRecord {
    RunRecord {
        c_alpha,
        c_sigma,
        rep,
        mode: cfg.mode,
        mse: f64::NAN,
        tau: f64::NAN,
        tail_norm: f64::NAN,
        epsilon_hat: None,
        sigma_scale: f64::NAN,
        wall_time_s: 0.0,
    }
}

/// All reps of one (c_alpha, c_sigma) cell. Feature training failures mark
/// the whole cell's rows as NaN instead of aborting the grid.
pub fn run_cell(
    cfg: &GridConfig,
    c_alpha: f64,
    c_sigma: f64,
) -> Result<Vec<RunRecord>, HarnessError> {
    let scenario = make_cell_scenario(cfg, c_alpha, c_sigma);
    let (op, h0) = build_scenario(&scenario)?;
    let op = Arc::new(op);
    let grid = Grid::new(GRID_NODES);
    let shared = if cfg.features_per_rep {
        None
    } else {
        match build_features(cfg, &op, train_seed(cfg.master_seed, c_alpha, c_sigma, None), &grid)
        {
            Ok(f) => Some(f),
            Err(HarnessError::Contrastive(_)) => {
                return Ok((0..cfg.reps)
                    .map(|rep| flagged_record(cfg, c_alpha, c_sigma, rep))
                    .collect());
            }
            Err(e) => return Err(e),
        }
    };
    let records: Vec<Result<RunRecord, HarnessError>> = par::map_indexed(cfg.reps, |rep| {
        let feats = match &shared {
            Some(_) => None,
            None => Some(build_features(
                cfg,
                &op,
                train_seed(cfg.master_seed, c_alpha, c_sigma, Some(rep)),
                &grid,
            )),
        };
        let feats_ref = match (&shared, &feats) {
            (Some(f), _) => f,
            (None, Some(Ok(f))) => f,
            (None, Some(Err(HarnessError::Contrastive(_)))) => {
                return Ok(flagged_record(cfg, c_alpha, c_sigma, rep));
            }
            (None, Some(Err(_))) => {
                return Ok(flagged_record(cfg, c_alpha, c_sigma, rep));
            }
            (None, None) => unreachable!(),
        };
        run_rep(cfg, &op, &h0, feats_ref, c_alpha, c_sigma, rep, &grid)
    });
    records.into_iter().collect()
}

fn partial_path(out: &Path) -> PathBuf {
    PathBuf::from(format!("{}.partial", out.display()))
}

fn metadata_path(out: &Path) -> PathBuf {
    PathBuf::from(format!("{}.meta", out.display()))
}

/// Runs every cell (concurrently), streaming finished cells to a `.partial`
/// file so an interrupted run leaves usable output, then writes the sorted
/// final CSV plus a `.meta` sidecar echoing the configuration.
pub fn run_grid(cfg: &GridConfig, out: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    cfg.validate()?;
    let cells: Vec<(f64, f64)> = cfg
        .c_alpha
        .iter()
        .flat_map(|&ca| cfg.c_sigma.iter().map(move |&cs| (ca, cs)))
        .collect();
    let partial = partial_path(out);
    {
        let mut w = BufWriter::new(std::fs::File::create(&partial)?);
        writeln!(w, "{CSV_HEADER}")?;
        w.flush()?;
    }
    let sink = Mutex::new(
        std::fs::OpenOptions::new().append(true).open(&partial)?,
    );
    let results: Vec<Result<Vec<RunRecord>, HarnessError>> =
        par::map_indexed(cells.len(), |i| {
            let (ca, cs) = cells[i];
            let rows = run_cell(cfg, ca, cs)?;
            let mut text = String::new();
            for r in &rows {
                text.push_str(&r.csv_row());
                text.push('\n');
            }
            let mut f = sink.lock().expect("partial-file lock");
            f.write_all(text.as_bytes())?;
            f.flush()?;
            Ok(rows)
        });
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    records.sort_by(|a, b| {
        (a.c_alpha, a.c_sigma, a.rep)
            .partial_cmp(&(b.c_alpha, b.c_sigma, b.rep))
            .expect("finite sort keys")
    });
    let mut w = BufWriter::new(std::fs::File::create(out)?);
    writeln!(w, "{CSV_HEADER}")?;
    for r in &records {
        writeln!(w, "{}", r.csv_row())?;
    }
    w.flush()?;
    std::fs::remove_file(&partial)?;

    let mut meta = BufWriter::new(std::fs::File::create(metadata_path(out))?);
    writeln!(meta, "mode={}", cfg.mode.as_str())?;
    writeln!(meta, "d={}", cfg.d)?;
    writeln!(meta, "c_alpha={:?}", cfg.c_alpha)?;
    writeln!(meta, "c_sigma={:?}", cfg.c_sigma)?;
    writeln!(meta, "reps={}", cfg.reps)?;
    writeln!(meta, "n_labeled={}", cfg.n_labeled)?;
    writeln!(meta, "m_unlabeled={}", cfg.m_unlabeled)?;
    writeln!(meta, "feature_dim={}", cfg.feature_dim)?;
    writeln!(meta, "master_seed={}", cfg.master_seed)?;
    writeln!(meta, "noise_var={}", cfg.noise_var)?;
    writeln!(meta, "sigma_head={}", cfg.sigma_head)?;
    writeln!(meta, "features_per_rep={}", cfg.features_per_rep)?;
    writeln!(meta, "train_epochs={}", cfg.train_epochs)?;
    writeln!(meta, "train_batch={}", cfg.train_batch)?;
    writeln!(meta, "reg_weight={}", cfg.reg_weight)?;
    writeln!(meta, "learning_rate={}", cfg.learning_rate)?;
    writeln!(meta, "stage_eta={DEFAULT_RIDGE}")?;
    writeln!(meta, "stage_lambda={}", cfg.stage_lambda)?;
    Ok(records)
}

// ---------------------------------------------------------------------------
// Flat-spectrum ("ugly") sweep

#[derive(Debug, Clone, Copy)]
pub struct UglyRecord {
    pub k: usize,
    pub floor: f64,
    pub population_residual: f64,
    pub sample_residual: f64,
}

pub const UGLY_HEADER: &str = "k,floor,population_residual,sample_residual";

/// Sample fits in the flat-spectrum sweep need a real ridge: the zero-sigma
/// directions otherwise get inverted from pure sampling noise.
pub const UGLY_SAMPLE_RIDGE: f64 = 2e-3;

/// The sweep's operator for one k: k equal singular values c, zero tail,
/// rotations drawn from the sweep seed (shared across k).
pub fn ugly_operator(
    d: usize,
    c: f64,
    k: usize,
    seed: u64,
) -> Result<crate::operator::SpectralOperator, HarnessError> {
    let r = d - 1;
    let mut sigma = vec![0.0; r];
    sigma[..k].fill(c);
    let mut rng = ChaCha8Rng::seed_from_u64(hash_seed(&[seed, TAG_OPERATOR]));
    let rot_x = crate::linalg::random_orthogonal(r, &mut rng);
    let rot_z = crate::linalg::random_orthogonal(r, &mut rng);
    Ok(crate::operator::SpectralOperator::new(sigma, rot_x, rot_z, seed)
        .map_err(SyntheticError::Operator)?)
}

/// For each k: an operator with k equal singular values and a flat tail of
/// zeros, a target spread uniformly over all directions, and both the
/// population-limit and finite-sample residuals against the analytic floor
/// sqrt(1 - k/(d-1)).
pub fn run_ugly_sweep(
    d: usize,
    c: f64,
    k_list: &[usize],
    seed: u64,
    n_sample: usize,
    out: &Path,
) -> Result<Vec<UglyRecord>, HarnessError> {
    if d < 2 {
        return Err(HarnessError::InvalidConfig(format!("d = {d} < 2")));
    }
    let r = d - 1;
    if let Some(&bad) = k_list.iter().find(|&&k| k > r) {
        return Err(HarnessError::InvalidConfig(format!("k = {bad} exceeds d-1 = {r}")));
    }
    let grid = Grid::new(2048);
    let eval_grid = Grid::new(GRID_NODES);
    let alpha = vec![1.0 / (r as f64).sqrt(); r];
    let records: Vec<Result<UglyRecord, HarnessError>> = par::map_indexed(k_list.len(), |i| {
        let k = k_list[i];
        let op = Arc::new(ugly_operator(d, c, k, seed)?);
        let h0 = StructuralFunction::new(alpha.clone()).expect("unit norm by construction");
        let phi: Arc<dyn FeatureMap> = Arc::new(OracleFeatures::new(Arc::clone(&op), Side::X, r));
        let psi: Arc<dyn FeatureMap> = Arc::new(OracleFeatures::new(Arc::clone(&op), Side::Z, r));
        let pop_fit = twostage::fit_population(
            Arc::clone(&phi),
            Arc::clone(&psi),
            &op,
            &h0,
            &grid,
            &TwoStageConfig::default(),
        )?;
        let population_residual = pop_fit.l2_error(&op, &h0, &eval_grid);

        let mut rng = ChaCha8Rng::seed_from_u64(hash_seed(&[seed, TAG_DATA, k as u64]));
        let pairs = rejection_sample(&op, n_sample, &mut rng)?;
        let data = sample_outcomes(&op, &h0, &pairs, 0.1, &mut rng)?;
        let ts =
            TwoStageConfig { eta: DEFAULT_RIDGE, lambda: UGLY_SAMPLE_RIDGE, ..Default::default() };
        let fit = twostage::fit(phi, psi, &data, &ts)?;
        let sample_residual = fit.l2_error(&op, &h0, &eval_grid);
        Ok(UglyRecord {
            k,
            floor: (1.0 - k as f64 / r as f64).sqrt(),
            population_residual,
            sample_residual,
        })
    });
    let records: Vec<UglyRecord> = records.into_iter().collect::<Result<_, _>>()?;
    let mut w = BufWriter::new(std::fs::File::create(out)?);
    writeln!(w, "{UGLY_HEADER}")?;
    for rec in &records {
        writeln!(
            w,
            "{},{},{},{}",
            rec.k, rec.floor, rec.population_residual, rec.sample_residual
        )?;
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Single-scenario fit

/// Fits one scenario and writes the target and estimate on the evaluation
/// grid as CSV `x,h0,h_hat`.
pub fn run_fit(
    scenario: &Scenario,
    mode: Mode,
    cfg: &GridConfig,
    out: &Path,
) -> Result<(), HarnessError> {
    let (op, h0) = build_scenario(scenario)?;
    let op = Arc::new(op);
    let grid = Grid::new(GRID_NODES);
    let mut fit_cfg = cfg.clone();
    fit_cfg.mode = mode;
    fit_cfg.d = scenario.d;
    let feats = build_features(
        &fit_cfg,
        &op,
        hash_seed(&[scenario.seed_data, TAG_TRAIN]),
        &grid,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed_data);
    let pairs = rejection_sample(&op, fit_cfg.n_labeled, &mut rng)?;
    let data = sample_outcomes(&op, &h0, &pairs, scenario.noise_var, &mut rng)?;
    let ts = TwoStageConfig { eta: DEFAULT_RIDGE, lambda: fit_cfg.stage_lambda, ..Default::default() };
    let fit = twostage::fit(feats.phi, feats.psi, &data, &ts)?;
    let mut w = BufWriter::new(std::fs::File::create(out)?);
    writeln!(w, "x,h0,h_hat")?;
    for &x in grid.nodes() {
        writeln!(
            w,
            "{x:.16e},{:.16e},{:.16e}",
            h0.eval(&op, x).expect("grid point in domain"),
            fit.predict(x)
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Heatmap

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stat {
    Mean,
    Median,
}

impl std::str::FromStr for Stat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mean" => Ok(Stat::Mean),
            "median" => Ok(Stat::Median),
            other => Err(format!("unknown statistic '{other}' (expected mean or median)")),
        }
    }
}

pub fn parse_run_csv(path: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != CSV_HEADER {
                return Err(HarnessError::Parse {
                    line: 1,
                    msg: format!("expected header '{CSV_HEADER}'"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        out.push(RunRecord::parse(&line, i + 1)?);
    }
    Ok(out)
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-cell aggregate of the MSE column, sorted by (c_alpha, c_sigma).
/// NaN rows (flagged failures) are excluded.
pub fn aggregate(records: &[RunRecord], stat: Stat) -> Vec<(f64, f64, f64)> {
    let mut cells: Vec<((u64, u64), (f64, f64), Vec<f64>)> = Vec::new();
    for r in records {
        if r.mse.is_nan() {
            continue;
        }
        let key = (r.c_alpha.to_bits(), r.c_sigma.to_bits());
        match cells.iter_mut().find(|(k, _, _)| *k == key) {
            Some((_, _, v)) => v.push(r.mse),
            None => cells.push((key, (r.c_alpha, r.c_sigma), vec![r.mse])),
        }
    }
    let mut out: Vec<(f64, f64, f64)> = cells
        .into_iter()
        .map(|(_, (ca, cs), mut v)| {
            let value = match stat {
                Stat::Mean => v.iter().sum::<f64>() / v.len() as f64,
                Stat::Median => median(&mut v),
            };
            (ca, cs, value)
        })
        .collect();
    out.sort_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).expect("finite"));
    out
}

fn heat_color(t: f64) -> String {
    // light for low values, saturated blue for high; strictly monotone
    let shade = 255 - (220.0 * t).round() as u32;
    format!("#{shade:02x}{shade:02x}ff")
}

/// Renders the per-cell aggregate as a labeled SVG grid. Output bytes are a
/// pure function of the input CSV and statistic.
pub fn emit_heatmap(input: &Path, stat: Stat, out: &Path) -> Result<(), HarnessError> {
    let records = parse_run_csv(input)?;
    if records.is_empty() {
        return Err(HarnessError::Parse { line: 1, msg: "no data rows".into() });
    }
    let cells = aggregate(&records, stat);
    let mut cas: Vec<f64> = cells.iter().map(|c| c.0).collect();
    cas.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    cas.dedup();
    let mut css: Vec<f64> = cells.iter().map(|c| c.1).collect();
    css.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    css.dedup();
    let lo = cells.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
    let hi = cells.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;

    let (cw, ch) = (96, 64);
    let (ml, mt) = (70, 30);
    let width = ml + cw * cas.len() + 30;
    let height = mt + ch * css.len() + 70;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         font-family=\"monospace\" font-size=\"11\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{ml}\" y=\"18\">mse {} by (c_alpha, c_sigma)</text>\n",
        match stat {
            Stat::Mean => "mean",
            Stat::Median => "median",
        }
    ));
    for (ci, &ca) in cas.iter().enumerate() {
        for (ri, &cs) in css.iter().enumerate() {
            let value = cells
                .iter()
                .find(|c| c.0 == ca && c.1 == cs)
                .map(|c| c.2);
            let x = ml + ci * cw;
            let y = mt + ri * ch;
            match value {
                Some(v) => {
                    let t = if span > 0.0 { (v - lo) / span } else { 0.0 };
                    svg.push_str(&format!(
                        "<rect x=\"{x}\" y=\"{y}\" width=\"{cw}\" height=\"{ch}\" \
                         fill=\"{}\" stroke=\"#444\"/>\n",
                        heat_color(t)
                    ));
                    svg.push_str(&format!(
                        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{v:.3e}</text>\n",
                        x + cw / 2,
                        y + ch / 2 + 4
                    ));
                }
                None => {
                    svg.push_str(&format!(
                        "<rect x=\"{x}\" y=\"{y}\" width=\"{cw}\" height=\"{ch}\" \
                         fill=\"#ffffff\" stroke=\"#444\"/>\n"
                    ));
                }
            }
        }
    }
    for (ci, &ca) in cas.iter().enumerate() {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">ca={ca}</text>\n",
            ml + ci * cw + cw / 2,
            mt + ch * css.len() + 18
        ));
    }
    for (ri, &cs) in css.iter().enumerate() {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">cs={cs}</text>\n",
            ml - 6,
            mt + ri * ch + ch / 2 + 4
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{ml}\" y=\"{}\">min={lo:.6e} max={hi:.6e}</text>\n",
        mt + ch * css.len() + 44
    ));
    svg.push_str("</svg>\n");
    std::fs::write(out, svg)?;
    Ok(())
}
