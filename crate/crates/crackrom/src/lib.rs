//! Command-line driver: study configuration, command implementations and CSV output.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use crackrom_core::Error as CoreError;

use crate::config::{ConfigError, StudyConfig};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_COMPUTE: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "crackrom",
    version,
    about = "Localized reduced-basis models for parameterized crack problems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// Study configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads, overriding `workers`.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Sets sampling, clustering and training seeds; the test set uses seed + 1.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl StudyArgs {
    pub fn load(&self) -> Result<StudyConfig> {
        let mut cfg = StudyConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(s) = self.seed {
            cfg.override_seed(s);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the full-order problem at one parameter and write the field.
    FomSolve {
        #[command(flatten)]
        study: StudyArgs,
        /// Parameter vector, `v1,v2[,v3]`.
        #[arg(long, allow_hyphen_values = true)]
        mu: String,
    },
    /// Build snapshots and train the reduced model bundle.
    Offline {
        #[command(flatten)]
        study: StudyArgs,
    },
    /// Evaluate a trained bundle at one parameter.
    Online {
        /// Bundle directory; defaults to `<output_dir>/bundle` of `--config`.
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        mu: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spectra, error curves and timings for every configured cluster count.
    Bench {
        #[command(flatten)]
        study: StudyArgs,
    },
}

/// Runs one command and prints a short report to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::FomSolve { study, mu } => {
            let cfg = study.load()?;
            let mu = cfg.parse_mu(&mu)?;
            let o = commands::fom_solve(&cfg, &mu)?;
            println!("compliance {}", output::num(o.compliance));
            println!("wrote {} ({} rows)", o.field_csv.display(), o.rows);
            println!("wrote {}", o.coefficients_csv.display());
        }
        Command::Offline { study } => {
            let o = commands::offline(&study.load()?)?;
            println!("cluster sizes {:?}", o.cluster_sizes);
            println!("basis sizes {:?}", o.basis_sizes);
            println!("wrote {} in {:.1} s", o.bundle.display(), o.seconds);
        }
        Command::Online {
            bundle,
            config,
            mu,
            out,
        } => {
            let cfg = config.as_deref().map(StudyConfig::load).transpose()?;
            let root = cfg.as_ref().map(|c| c.output_dir.clone());
            let bundle = match (bundle, &root) {
                (Some(b), _) => b,
                (None, Some(r)) => r.join(commands::BUNDLE_DIR),
                (None, None) => {
                    return Err(ConfigError("online needs --bundle or --config".into()).into())
                }
            };
            let out = out
                .or(root)
                .unwrap_or_else(|| bundle.parent().map(PathBuf::from).unwrap_or_default());
            let o = commands::online(&bundle, &mu, &out)?;
            println!("cluster {} evaluated in {:.3e} s", o.cluster, o.seconds);
            println!("wrote {} ({} rows)", o.field_csv.display(), o.rows);
        }
        Command::Bench { study } => {
            let cfg = study.load()?;
            let rows = commands::bench(&cfg)?;
            println!("clusters  min_n  max_n  max_error  mean_error  offline_s  online_s  fom_s  speedup");
            for r in rows {
                println!(
                    "{:>8}  {:>5}  {:>5}  {:>9.3e}  {:>10.3e}  {:>9.1}  {:>8.2e}  {:>5.3}  {:>7.0}",
                    r.clusters,
                    r.min_n,
                    r.max_n,
                    r.max_error,
                    r.mean_error,
                    r.offline_seconds,
                    r.online_median,
                    r.fom_median,
                    r.speedup
                );
            }
            println!("wrote CSV files to {}", cfg.output_dir.display());
        }
    }
    Ok(())
}

/// Exit code for a failure: configuration, computation or input/output.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Config(_) | CoreError::Parameter(_) => EXIT_CONFIG,
                CoreError::Io(_) | CoreError::Format(_) | CoreError::Incompatible(_) => EXIT_IO,
                _ => EXIT_COMPUTE,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<csv::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_COMPUTE
}
