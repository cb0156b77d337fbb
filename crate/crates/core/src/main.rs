use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use maxent::harness::{self, ExperimentConfig, InitMethod};
use maxent::{image, initial, io, recovery, sequential, Error, Mask, MeasurementRecord, Result};

/// Declares a group of `--key value` flags named exactly like config keys.
macro_rules! key_flags {
    ($name:ident { $($field:ident => $key:literal : $help:literal,)* }) => {
        #[derive(Args, Debug, Default)]
        struct $name {
            $(
                #[arg(long = $key, value_name = "VALUE", help = $help)]
                $field: Option<String>,
            )*
        }

        impl $name {
            fn pairs(&self) -> Vec<(String, String)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push(($key.to_string(), v.clone()));
                    }
                )*
                out
            }
        }
    };
}

key_flags!(RecoveryFlags {
    lambda => "lambda": "regularization weight, or auto for lambda_scale * sqrt(eta2 * n)",
    lambda_scale => "lambda_scale": "multiplier for the automatic lambda",
    alpha => "alpha": "elastic-net mix in (0, 1]; 1 is pure nuclear norm",
    max_iters => "max_iters": "iteration cap per solve",
    rel_tol => "rel_tol": "relative step tolerance",
    rank_threshold => "rank_threshold": "singular-value cutoff for subspace estimation",
    continuation => "continuation": "halve lambda while the residual improves (true/false)",
    continuation_gain => "continuation_gain": "minimum relative residual gain per halving",
    continuation_steps => "continuation_steps": "maximum number of halvings",
});

key_flags!(ExperimentFlags {
    m1 => "m1": "rows of the ground truth",
    m2 => "m2": "columns of the ground truth",
    rank => "rank": "rank of simulated ground truths",
    sigma2 => "sigma2": "signal variance",
    eta2 => "eta2": "noise variance",
    n_ini => "n_ini": "initial sample size",
    n_seq => "n_seq": "sequential sample size",
    r_ini => "r_ini": "rank of the initial masks",
    init_method => "init_method": "flip, kk or random",
    trials => "trials": "number of trials",
    seed => "seed": "master seed",
    batch_size => "batch_size": "masks designed per sequential step",
    random_fraction => "random_fraction": "share of each batch filled with random masks",
    saturation => "saturation": "grow the subspace estimate while the best objective is below this (0 = off)",
    eval_stride => "eval_stride": "sample-size stride for error recording (0 = automatic)",
    pca_oracle => "pca_oracle": "also run the PCA oracle (true/false)",
    estimate_sigma2 => "estimate_sigma2": "estimate sigma2 from the data (true/false)",
});

#[derive(Parser, Debug)]
#[command(name = "maxent", version, about = "Maximum-entropy mask design and low-rank matrix recovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write initial masks, one per line (row-major).
    DesignInitial {
        #[arg(long, default_value = "flip")]
        method: InitMethod,
        #[arg(long)]
        m1: usize,
        #[arg(long)]
        m2: usize,
        #[arg(long)]
        n: usize,
        #[arg(long = "r_ini", default_value_t = 1)]
        r_ini: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover from masks and observations, then write the next mask(s).
    DesignNext {
        #[command(flatten)]
        data: DataArgs,
        /// Signal variance; estimated from the data when omitted.
        #[arg(long)]
        sigma2: Option<f64>,
        #[arg(long = "batch_size", default_value_t = 1)]
        batch_size: usize,
        /// Grow the subspace estimate while the best objective is below this.
        #[arg(long, default_value_t = 0.0)]
        saturation: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        recovery: RecoveryFlags,
    },
    /// Recover a matrix from masks and observations.
    Recover {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        recovery: RecoveryFlags,
    },
    /// Replicated comparison of MaxEnt against random masks.
    Experiment {
        /// key = value configuration file; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fixed ground-truth matrix (CSV) instead of simulated ones.
        #[arg(long, conflicts_with = "image")]
        truth: Option<PathBuf>,
        /// Fixed ground truth from a PGM image, patched into 8x8 blocks.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        summary: PathBuf,
        #[command(flatten)]
        keys: ExperimentFlags,
        #[command(flatten)]
        recovery: RecoveryFlags,
    },
    /// PGM image to patch matrix (CSV).
    Patch {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Patch matrix (CSV) back to a PGM image.
    Unpatch {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Masks, one per line (row-major).
    #[arg(long)]
    masks: PathBuf,
    /// Observations as (mask_index, y) rows.
    #[arg(long)]
    obs: PathBuf,
    #[arg(long)]
    m1: usize,
    #[arg(long)]
    m2: usize,
    #[arg(long, default_value_t = 0.0)]
    eta2: f64,
}

impl DataArgs {
    fn record(&self) -> Result<MeasurementRecord> {
        let masks = io::read_masks(&self.masks, self.m1, self.m2)?;
        let mut rec = MeasurementRecord::default();
        for (i, y) in io::read_observations(&self.obs)? {
            let m = masks.get(i).ok_or_else(|| {
                Error::InvalidArgument(format!("observation refers to mask {i}, only {} masks", masks.len()))
            })?;
            rec.push(m.clone(), y)?;
        }
        Ok(rec)
    }
}

fn recovery_options(flags: &RecoveryFlags) -> Result<recovery::RecoveryOptions> {
    let cfg = ExperimentConfig::from_text("", &flags.pairs())?;
    cfg.recovery.validate()?;
    Ok(cfg.recovery)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::DesignInitial { method, m1, m2, n, r_ini, seed, out } => {
            let masks = match method {
                InitMethod::Flip => initial::ini_flip(m1, m2, n, r_ini, seed)?,
                InitMethod::Kk => initial::ini_kk(m1, m2, n, r_ini, seed)?,
                InitMethod::Random => {
                    let mut rng = maxent::linalg::rng(seed);
                    (0..n).map(|_| Mask::random_unit(&mut rng, m1, m2)).collect()
                }
            };
            io::write_masks(&out, &masks)
        }
        Command::DesignNext { data, sigma2, batch_size, saturation, out, recovery: flags } => {
            let opts = recovery_options(&flags)?;
            let rec = data.record()?;
            let fit = recovery::recover(&rec, data.eta2, &opts)?;
            if !fit.converged {
                eprintln!("warning: recovery stopped at max_iters without converging");
            }
            let est = recovery::estimate_subspaces(&fit.x, opts.rank_threshold)?;
            let sigma2 = match sigma2 {
                Some(s) => s,
                None => sequential::estimate_sigma2(&est, rec.masks(), rec.y(), data.eta2)?,
            };
            if !(0.0..=1.0).contains(&saturation) {
                return Err(Error::InvalidArgument(format!("saturation must lie in [0, 1], got {saturation}")));
            }
            let gamma2 = (data.eta2 / sigma2).max(1e-12);
            let next = sequential::next_mask_growing(&fit.x, est.rank(), rec.masks(), gamma2, batch_size, saturation)?;
            eprintln!("estimated rank {}, sigma2 {sigma2}", est.rank());
            io::write_masks(&out, &next.masks)
        }
        Command::Recover { data, out, recovery: flags } => {
            let opts = recovery_options(&flags)?;
            let fit = recovery::recover(&data.record()?, data.eta2, &opts)?;
            if !fit.converged {
                eprintln!("warning: recovery stopped at max_iters without converging");
            }
            io::write_matrix(&out, &fit.x)
        }
        Command::Experiment { config, truth, image: img, traces, summary, keys, recovery: flags } => {
            let overrides: Vec<_> = keys.pairs().into_iter().chain(flags.pairs()).collect();
            let mut cfg = match &config {
                Some(p) => ExperimentConfig::load(p, &overrides)?,
                None => ExperimentConfig::from_text("", &overrides)?,
            };
            let fixed: Option<DMatrix<f64>> = match (truth, img) {
                (Some(p), _) => Some(io::read_matrix(&p)?),
                (None, Some(p)) => Some(image::patch_image(&io::read_pgm(&p)?, image::PATCH)?),
                (None, None) => None,
            };
            let result = match &fixed {
                Some(x) => {
                    (cfg.m1, cfg.m2) = x.shape();
                    harness::run_experiment_fixed(&cfg, x)?
                }
                None => harness::run_experiment(&cfg)?,
            };
            io::write_traces(&traces, &result.traces)?;
            io::write_summary(&summary, &result.summary)
        }
        Command::Patch { input, out } => io::write_matrix(&out, &image::patch_image(&io::read_pgm(&input)?, image::PATCH)?),
        Command::Unpatch { input, height, width, out } => {
            io::write_pgm(&out, &image::unpatch_image(&io::read_matrix(&input)?, image::PATCH, height, width)?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
