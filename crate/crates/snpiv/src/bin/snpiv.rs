use clap::{Parser, Subcommand};
use snpiv::harness::{self, GridConfig, Mode, Stat};
use snpiv::synthetic::Scenario;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "snpiv", about = "Spectral-feature NPIV experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the (c_alpha, c_sigma) MSE grid and write one CSV row per rep.
    Grid {
        #[arg(long)]
        mode: Mode,
        #[arg(long, default_value_t = 11)]
        d: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.5, 1.0])]
        c_alpha: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.5, 1.0])]
        c_sigma: Vec<f64>,
        #[arg(long, default_value_t = 50)]
        reps: usize,
        #[arg(long, default_value_t = 2000)]
        n_labeled: usize,
        #[arg(long, default_value_t = 20_000)]
        m_unlabeled: usize,
        #[arg(long, default_value_t = 10)]
        feature_dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Full-size run: 500 reps, n = 10^4, m = 10^5.
        #[arg(long)]
        paper_scale: bool,
        /// Retrain learned features for every rep instead of once per cell.
        #[arg(long)]
        features_per_rep: bool,
    },
    /// Flat-spectrum sweep: k leading singular values, zero tail.
    Ugly {
        #[arg(long, default_value_t = 11)]
        d: usize,
        #[arg(long)]
        c: f64,
        #[arg(long, value_delimiter = ',')]
        k_list: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one scenario file and write the target/estimate curves.
    Fit {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        mode: Mode,
        #[arg(long, default_value_t = 2000)]
        n_labeled: usize,
        #[arg(long, default_value_t = 20_000)]
        m_unlabeled: usize,
        #[arg(long, default_value_t = 10)]
        feature_dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a grid CSV as an SVG heatmap of per-cell MSE.
    Heatmap {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        stat: Stat,
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads() {
    if let Ok(v) = std::env::var("SNPIV_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n >= 1 => {
                #[cfg(feature = "parallel")]
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .expect("thread pool already initialized");
                if n == 1 {
                    snpiv::par::force_sequential(true);
                }
            }
            _ => {
                eprintln!("SNPIV_THREADS must be a positive integer, got '{v}'");
                std::process::exit(2);
            }
        }
    }
}

fn run() -> Result<(), Box<dyn std::error::Error>> {
    let cli = Cli::parse();
    configure_threads();
    match cli.command {
        Command::Grid {
            mode,
            d,
            c_alpha,
            c_sigma,
            reps,
            n_labeled,
            m_unlabeled,
            feature_dim,
            seed,
            out,
            paper_scale,
            features_per_rep,
        } => {
            let mut cfg = GridConfig::desk(mode);
            cfg.d = d;
            cfg.c_alpha = c_alpha;
            cfg.c_sigma = c_sigma;
            cfg.reps = reps;
            cfg.n_labeled = n_labeled;
            cfg.m_unlabeled = m_unlabeled;
            cfg.feature_dim = feature_dim;
            cfg.master_seed = seed;
            cfg.features_per_rep = features_per_rep;
            if paper_scale {
                cfg.apply_paper_scale();
            }
            let records = harness::run_grid(&cfg, &out)?;
            eprintln!("wrote {} rows to {}", records.len(), out.display());
        }
        Command::Ugly { d, c, k_list, seed, n, out } => {
            let records = harness::run_ugly_sweep(d, c, &k_list, seed, n, &out)?;
            eprintln!("wrote {} rows to {}", records.len(), out.display());
        }
        Command::Fit { scenario, mode, n_labeled, m_unlabeled, feature_dim, out } => {
            let scenario = Scenario::load(&scenario)?;
            let mut cfg = GridConfig::desk(mode);
            cfg.n_labeled = n_labeled;
            cfg.m_unlabeled = m_unlabeled;
            cfg.feature_dim = feature_dim;
            harness::run_fit(&scenario, mode, &cfg, &out)?;
            eprintln!("wrote fit curves to {}", out.display());
        }
        Command::Heatmap { input, stat, out } => {
            harness::emit_heatmap(&input, stat, &out)?;
            eprintln!("wrote heatmap to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
