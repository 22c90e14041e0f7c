//! CSV writers: comma separated, '.' decimal point, one header row.

use std::path::Path;

use anyhow::{Context, Result};
use crackrom_core::clustering::Partition;
use crackrom_core::fom::Problem;
use crackrom_core::regression::TrainingLog;
use crackrom_core::rom::ErrorReport;
use crackrom_core::snapshot::SnapshotLayout;

/// Shortest round-trip text; exponent form outside a readable range.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e7).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn write_csv<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|&c| c.to_owned()).collect()
}

fn param_header(names: &[String], rest: &[&str]) -> Vec<String> {
    names
        .iter()
        .cloned()
        .chain(rest.iter().map(|&c| c.to_owned()))
        .collect()
}

/// One row per slot pair of a mapped vector: physical point, then both components.
/// Returns the row count.
pub fn write_field(
    path: &Path,
    problem: &Problem,
    layout: &SnapshotLayout,
    mu: &[f64],
    values: &[f64],
) -> Result<usize> {
    let points = layout.slot_points(problem, mu);
    let rows = points.iter().enumerate().map(|(s, p)| {
        vec![
            num(p[0]),
            num(p[1]),
            num(values[2 * s]),
            num(values[2 * s + 1]),
        ]
    });
    write_csv(path, &header(&["x", "y", "ux", "uy"]), rows)?;
    Ok(points.len())
}

pub fn write_samples(path: &Path, names: &[String], mus: &[Vec<f64>]) -> Result<()> {
    write_csv(
        path,
        names,
        mus.iter().map(|mu| mu.iter().map(|&v| num(v)).collect()),
    )
}

pub fn write_partition(
    path: &Path,
    names: &[String],
    mus: &[Vec<f64>],
    partition: &Partition,
) -> Result<()> {
    let rows = mus.iter().zip(&partition.labels).map(|(mu, &l)| {
        let mut r: Vec<String> = mu.iter().map(|&v| num(v)).collect();
        r.push(l.to_string());
        r
    });
    write_csv(path, &param_header(names, &["label"]), rows)
}

pub fn write_training_log(path: &Path, log: &TrainingLog) -> Result<()> {
    let rows = log.epochs.iter().map(|e| {
        vec![
            e.epoch.to_string(),
            num(e.train_mse),
            num(e.val_mse),
            num(e.lm_mu),
        ]
    });
    write_csv(
        path,
        &header(&["epoch", "train_mse", "val_mse", "lm_mu"]),
        rows,
    )
}

/// Index column, the global spectrum, then one column per cluster; short spectra
/// leave trailing cells empty.
pub fn write_spectra(path: &Path, global: &[f64], local: &[Vec<f64>]) -> Result<()> {
    let mut head = header(&["index", "global"]);
    head.extend((0..local.len()).map(|k| format!("cluster_{k}")));
    let n = local
        .iter()
        .map(Vec::len)
        .chain([global.len()])
        .max()
        .unwrap_or(0);
    let cell = |v: &[f64], i: usize| v.get(i).map_or_else(String::new, |&s| num(s));
    let rows = (0..n).map(|i| {
        let mut r = vec![(i + 1).to_string(), cell(global, i)];
        r.extend(local.iter().map(|l| cell(l, i)));
        r
    });
    write_csv(path, &head, rows)
}

pub fn write_error_report(path: &Path, names: &[String], report: &ErrorReport) -> Result<()> {
    let rows = report.samples.iter().map(|s| {
        let mut r: Vec<String> = s.mu.iter().map(|&v| num(v)).collect();
        r.extend([
            s.cluster.to_string(),
            num(s.rom_error),
            num(s.projection_error),
            num(s.rom_l2),
            num(s.projection_l2),
        ]);
        r
    });
    write_csv(
        path,
        &param_header(
            names,
            &[
                "cluster",
                "rom_error",
                "projection_error",
                "rom_l2",
                "projection_l2",
            ],
        ),
        rows,
    )
}
