//! The four commands. Each returns a summary of what it produced.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use crackrom_core::fom::{compliance, solve_fom};
use crackrom_core::rom::{
    cap_sweep, error_report, measure_speedup, spectra, test_snapshots, train_from_snapshots,
    RomModel,
};
use crackrom_core::snapshot::{
    build_snapshot_matrix, map_solution, SnapshotLayout, SnapshotMatrix,
};
use crackrom_core::store::{load_bundle, load_snapshots, save_bundle, save_snapshots};
use crackrom_core::Error;
use log::{info, warn};

use crate::config::{ConfigError, StudyConfig};
use crate::output::{
    num, write_csv, write_error_report, write_field, write_partition, write_samples, write_spectra,
    write_training_log,
};

pub const BUNDLE_DIR: &str = "bundle";
pub const SNAPSHOT_FILE: &str = "snapshots.bin";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn names(cfg: &StudyConfig) -> Vec<String> {
    cfg.parameters.iter().map(|p| p.name.clone()).collect()
}

#[derive(Clone, Debug)]
pub struct FomSolveOutput {
    pub field_csv: PathBuf,
    pub coefficients_csv: PathBuf,
    pub rows: usize,
    pub compliance: f64,
}

/// Single full-order solve; writes the field on the lattice and the DOF vector.
pub fn fom_solve(cfg: &StudyConfig, mu: &[f64]) -> Result<FomSolveOutput> {
    let problem = cfg.problem()?;
    let layout = SnapshotLayout::for_problem(&problem)?;
    let t = Instant::now();
    let sol = solve_fom(&problem, mu)?;
    info!(
        "full-order solve with {} dofs in {:.3} s",
        sol.coeffs.len(),
        t.elapsed().as_secs_f64()
    );
    let values = map_solution(&sol, &problem, &layout, mu)?;
    let c = compliance(&problem, &sol)?;
    create_dir(&cfg.output_dir)?;
    let field_csv = cfg.output_dir.join("fom_field.csv");
    let rows = write_field(&field_csv, &problem, &layout, mu, &values)?;
    let coefficients_csv = cfg.output_dir.join("fom_coefficients.csv");
    write_csv(
        &coefficients_csv,
        &["dof".to_owned(), "value".to_owned()],
        sol.coeffs
            .iter()
            .enumerate()
            .map(|(i, &v)| vec![i.to_string(), num(v)]),
    )?;
    Ok(FomSolveOutput {
        field_csv,
        coefficients_csv,
        rows,
        compliance: c,
    })
}

/// Training snapshots, reused from the store in `dir` when it was built from the same inputs.
fn training_snapshots(cfg: &StudyConfig, dir: &Path) -> Result<(SnapshotMatrix, f64)> {
    let problem = cfg.problem()?;
    let layout = SnapshotLayout::for_problem(&problem)?;
    let samples = cfg.train_samples()?;
    let digest = cfg.snapshot_digest();
    let path = dir.join(SNAPSHOT_FILE);
    if path.exists() {
        match load_snapshots(&path, &digest) {
            Ok((snaps, set)) if set == samples && snaps.nrows() == layout.dim() => {
                info!(
                    "reusing {} snapshots from {}",
                    snaps.ncols(),
                    path.display()
                );
                return Ok((snaps, 0.0));
            }
            Ok(_) | Err(Error::Incompatible(_)) => {
                info!("snapshot store {} is stale; rebuilding", path.display())
            }
            Err(e) => warn!("ignoring unreadable snapshot store {}: {e}", path.display()),
        }
    }
    let t = Instant::now();
    let snaps = build_snapshot_matrix(&samples, &problem, &layout, cfg.workers)
        .map_err(|e| e.at_stage("snapshots"))?;
    let secs = t.elapsed().as_secs_f64();
    info!("{} snapshots in {secs:.1} s", snaps.ncols());
    save_snapshots(&path, &snaps, &samples, &digest)?;
    Ok((snaps, secs))
}

/// Configuration text stored in bundles, without fields that do not affect the model.
fn attachment(cfg: &StudyConfig) -> String {
    let mut c = cfg.clone();
    c.output_dir = PathBuf::new();
    c.workers = 1;
    c.to_toml()
}

#[derive(Clone, Debug)]
pub struct OfflineOutput {
    pub bundle: PathBuf,
    pub basis_sizes: Vec<usize>,
    pub cluster_sizes: Vec<usize>,
    pub seconds: f64,
}

/// Full offline phase; writes the bundle, sample and partition CSVs and training logs.
pub fn offline(cfg: &StudyConfig) -> Result<OfflineOutput> {
    let t = Instant::now();
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let problem = cfg.problem()?;
    let layout = SnapshotLayout::for_problem(&problem)?;
    let samples = cfg.train_samples()?;
    let names = names(cfg);
    write_samples(&dir.join("train_samples.csv"), &names, &samples.parameters)?;
    let (snaps, _) = training_snapshots(cfg, dir)?;
    let (model, art) =
        train_from_snapshots(&problem, &layout, &samples, snaps, &cfg.offline_config())?;
    let bundle = dir.join(BUNDLE_DIR);
    save_bundle(&bundle, &model, &attachment(cfg))?;
    write_partition(
        &dir.join("partition.csv"),
        &names,
        &samples.parameters,
        &art.partition,
    )?;
    for (k, log) in art.training_logs.iter().enumerate() {
        if let Some(log) = log {
            write_training_log(&dir.join(format!("training_log_cluster{k}.csv")), log)?;
        }
    }
    Ok(OfflineOutput {
        bundle,
        basis_sizes: model.basis_sizes(),
        cluster_sizes: art.partition.sizes(),
        seconds: t.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug)]
pub struct OnlineOutput {
    pub field_csv: PathBuf,
    pub cluster: usize,
    pub rows: usize,
    pub seconds: f64,
}

/// Loads a bundle and evaluates it at `mu`, writing the field CSV into `out`.
pub fn online(bundle: &Path, mu_text: &str, out: &Path) -> Result<OnlineOutput> {
    let (model, _) =
        load_bundle(bundle).with_context(|| format!("cannot load bundle {}", bundle.display()))?;
    let mu = parse_model_mu(&model, mu_text)?;
    let t = Instant::now();
    let result = model.evaluate(&mu)?;
    let seconds = t.elapsed().as_secs_f64();
    create_dir(out)?;
    let field_csv = out.join("online_field.csv");
    let rows = write_field(
        &field_csv,
        &model.problem,
        &model.layout,
        &mu,
        result.values.as_slice(),
    )?;
    Ok(OnlineOutput {
        field_csv,
        cluster: result.cluster,
        rows,
        seconds,
    })
}

fn parse_model_mu(model: &RomModel, text: &str) -> Result<Vec<f64>> {
    let mu: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| ConfigError(format!("--mu `{text}`: {e}")))?;
    model
        .problem
        .parameters
        .check(&mu)
        .map_err(|e| ConfigError(format!("--mu: {e}")))?;
    Ok(mu)
}

/// One line of the benchmark summary.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub clusters: usize,
    pub min_n: usize,
    pub max_n: usize,
    pub max_error: f64,
    pub mean_error: f64,
    pub offline_seconds: f64,
    pub online_median: f64,
    pub fom_median: f64,
    pub speedup: f64,
}

/// Trains one model per cluster count and writes spectra, error curves, per-sample
/// errors and the summary table. Timing columns come last in `summary.csv`.
pub fn bench(cfg: &StudyConfig) -> Result<Vec<BenchRow>> {
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let problem = cfg.problem()?;
    let layout = SnapshotLayout::for_problem(&problem)?;
    let samples = cfg.train_samples()?;
    let test = cfg.test_samples()?;
    let names = names(cfg);
    write_samples(&dir.join("train_samples.csv"), &names, &samples.parameters)?;
    write_samples(&dir.join("test_samples.csv"), &names, &test.parameters)?;

    let t = Instant::now();
    let snaps = build_snapshot_matrix(&samples, &problem, &layout, cfg.workers)
        .map_err(|e| e.at_stage("snapshots"))?;
    let snapshot_secs = t.elapsed().as_secs_f64();
    let (mus, fom, skipped) = test_snapshots(&problem, &layout, &test, cfg.workers)?;
    if !skipped.is_empty() {
        warn!("{} test solves failed and are excluded", skipped.len());
    }
    info!(
        "{} training and {} test snapshots ready",
        snaps.ncols(),
        mus.len()
    );

    let mut curve = Vec::new();
    let mut rows = Vec::new();
    for &nc in &cfg.bench.cluster_counts {
        let mut oc = cfg.offline_config();
        oc.clustering.clusters = nc;
        let (model, art) = train_from_snapshots(&problem, &layout, &samples, snaps.clone(), &oc)?;
        let sizes = model.basis_sizes();
        let report = error_report(&model, &mus, &fom)?;
        info!(
            "N_c = {nc}: basis sizes {sizes:?}, max error {:.3e}, mean {:.3e}",
            report.max_error, report.mean_error
        );
        write_error_report(&dir.join(format!("errors_nc{nc}.csv")), &names, &report)?;
        write_partition(
            &dir.join(format!("partition_nc{nc}.csv")),
            &names,
            &samples.parameters,
            &art.partition,
        )?;
        let (global, local) = spectra(&snaps.data, &art.partition)?;
        write_spectra(&dir.join(format!("spectra_nc{nc}.csv")), &global, &local)?;

        let max_n = *sizes.iter().max().expect("at least one cluster");
        let caps: Vec<usize> = if cfg.bench.caps.is_empty() {
            (1..=max_n).collect()
        } else {
            cfg.bench
                .caps
                .iter()
                .copied()
                .filter(|&c| c <= max_n)
                .collect()
        };
        for (cap, r) in cap_sweep(&model, &art, &oc, &caps, &mus, &fom)? {
            curve.push(vec![
                nc.to_string(),
                cap.to_string(),
                r.basis_sizes.iter().max().copied().unwrap_or(0).to_string(),
                num(r.max_error),
                num(r.mean_error),
            ]);
        }

        let speed = measure_speedup(&model, &mus, cfg.bench.speedup_reps)?;
        rows.push(BenchRow {
            clusters: nc,
            min_n: *sizes.iter().min().expect("at least one cluster"),
            max_n,
            max_error: report.max_error,
            mean_error: report.mean_error,
            offline_seconds: snapshot_secs + art.timings.total(),
            online_median: speed.rom_median,
            fom_median: speed.fom_median,
            speedup: speed.ratio,
        });
    }
    write_csv(
        &dir.join("error_vs_n.csv"),
        &["clusters", "cap", "max_n", "max_error", "mean_error"].map(String::from),
        curve,
    )?;
    write_csv(
        &dir.join("summary.csv"),
        &[
            "clusters",
            "min_n",
            "max_n",
            "max_error",
            "mean_error",
            "offline_time",
            "online_median",
            "fom_median",
            "speedup",
        ]
        .map(String::from),
        rows.iter().map(|r| {
            vec![
                r.clusters.to_string(),
                r.min_n.to_string(),
                r.max_n.to_string(),
                num(r.max_error),
                num(r.mean_error),
                num(r.offline_seconds),
                num(r.online_median),
                num(r.fom_median),
                num(r.speedup),
            ]
        }),
    )?;
    Ok(rows)
}
