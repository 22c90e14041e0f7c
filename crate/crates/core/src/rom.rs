//! Offline assembly of the localized reduced model, online evaluation, and the
//! accuracy and speedup analysis.

use std::time::{Duration, Instant};

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::KnnClassifier;
use crate::clustering::{cluster_snapshots, FcmConfig, FcmModel, Partition};
use crate::error::{Error, Result};
use crate::fom::{solve_fom, Problem};
use crate::pod::{build_local_bases, pod_truncate, PodBasis};
use crate::regression::{Backend, RbfConfig, Regressor, TrainConfig, TrainingLog};
use crate::snapshot::{
    build_snapshot_matrix, mapped_snapshot, reconstruct, SampleSet, SnapshotLayout, SnapshotMatrix,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineConfig {
    pub clustering: FcmConfig,
    /// Cluster on the coefficients of this many leading global POD modes instead of
    /// the full vectors.
    pub pre_project: Option<usize>,
    pub eps_pod: f64,
    pub backend: Backend,
    pub mlp: TrainConfig,
    pub rbf: RbfConfig,
    pub knn_k: usize,
    pub knn_p: f64,
    /// Worker threads for snapshots and per-cluster training; does not affect results.
    pub workers: usize,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self {
            clustering: FcmConfig::default(),
            pre_project: None,
            eps_pod: 1e-5,
            backend: Backend::Rbf,
            mlp: TrainConfig::default(),
            rbf: RbfConfig::default(),
            knn_k: 1,
            knn_p: 2.0,
            workers: 1,
        }
    }
}

impl OfflineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_pod > 0.0 && self.eps_pod < 1.0) {
            return Err(Error::Config(format!(
                "pod.eps must lie in (0, 1), got {}",
                self.eps_pod
            )));
        }
        if self.clustering.clusters == 0 {
            return Err(Error::Config("clustering.clusters must be positive".into()));
        }
        if !(self.clustering.exponent > 1.0) {
            return Err(Error::Config(format!(
                "clustering.exponent must exceed 1, got {}",
                self.clustering.exponent
            )));
        }
        if self.pre_project == Some(0) {
            return Err(Error::Config(
                "clustering.pre_project must be positive when set".into(),
            ));
        }
        if self.knn_k == 0 {
            return Err(Error::Config("classifier.k must be positive".into()));
        }
        self.mlp.validate()
    }
}

/// What a model was built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 over the problem, layout, samples and offline settings.
    pub digest: String,
    pub sampling_seed: u64,
    pub clustering_seed: u64,
    pub training_seed: u64,
    pub n_samples: usize,
    pub n_clusters: usize,
    pub eps_pod: f64,
}

/// Deployable reduced model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RomModel {
    pub problem: Problem,
    pub layout: SnapshotLayout,
    pub classifier: KnnClassifier,
    pub bases: Vec<PodBasis>,
    pub regressors: Vec<Regressor>,
    pub provenance: Provenance,
}

/// Intermediate products of the offline phase that are not part of the model.
#[derive(Clone, Debug)]
pub struct OfflineArtifacts {
    pub snapshots: SnapshotMatrix,
    pub fcm: FcmModel,
    pub partition: Partition,
    pub training_logs: Vec<Option<TrainingLog>>,
    pub timings: StageTimings,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub snapshots: f64,
    pub clustering: f64,
    pub pod: f64,
    pub regression: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.snapshots + self.clustering + self.pod + self.regression
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Debug formatting of floats is the shortest exact representation, so this is a
/// stable fingerprint of every input that influences the model.
pub fn provenance_digest(
    problem: &Problem,
    layout: &SnapshotLayout,
    samples: &SampleSet,
    cfg: &OfflineConfig,
) -> String {
    let cfg = OfflineConfig {
        workers: 0,
        ..cfg.clone()
    };
    let text = format!(
        "{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}",
        problem,
        layout.kind,
        layout.corridor,
        samples.scheme,
        samples.seed,
        samples.parameters,
        cfg
    );
    hex(&Sha256::digest(text.as_bytes()))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Full offline phase: snapshots, then everything in [`train_from_snapshots`].
pub fn train_offline(
    problem: &Problem,
    layout: &SnapshotLayout,
    samples: &SampleSet,
    cfg: &OfflineConfig,
) -> Result<(RomModel, OfflineArtifacts)> {
    cfg.validate()?;
    let t = Instant::now();
    let snapshots = build_snapshot_matrix(samples, problem, layout, cfg.workers)
        .map_err(|e| e.at_stage("snapshots"))?;
    let snap_time = secs(t.elapsed());
    info!(
        "{} snapshots of length {} in {snap_time:.1} s",
        snapshots.ncols(),
        snapshots.nrows()
    );
    let (model, mut art) = train_from_snapshots(problem, layout, samples, snapshots, cfg)?;
    art.timings.snapshots = snap_time;
    Ok((model, art))
}

/// Offline phase on precomputed snapshots: clustering, classifier, local bases and
/// per-cluster regressors.
pub fn train_from_snapshots(
    problem: &Problem,
    layout: &SnapshotLayout,
    samples: &SampleSet,
    snapshots: SnapshotMatrix,
    cfg: &OfflineConfig,
) -> Result<(RomModel, OfflineArtifacts)> {
    cfg.validate()?;
    if snapshots.ncols() != samples.len() || snapshots.nrows() != layout.dim() {
        return Err(Error::Shape(format!(
            "snapshot matrix {}x{} does not match {} samples of length {}",
            snapshots.nrows(),
            snapshots.ncols(),
            samples.len(),
            layout.dim()
        )));
    }
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let (fcm, partition) = {
        let reduced;
        let data = match cfg.pre_project {
            Some(n) => {
                let global = pod_truncate(&snapshots.data, 1e-300)
                    .map_err(|e| e.at_stage("clustering"))?
                    .truncated(n);
                reduced = global.v.transpose() * &snapshots.data;
                &reduced
            }
            None => &snapshots.data,
        };
        cluster_snapshots(data, &cfg.clustering).map_err(|e| e.at_stage("clustering"))?
    };
    timings.clustering = secs(t.elapsed());
    info!("cluster sizes {:?}", partition.sizes());

    let classifier = KnnClassifier::fit(
        &samples.parameters,
        &partition.labels,
        &problem.parameters.bounds,
        cfg.knn_k,
        cfg.knn_p,
    )
    .map_err(|e| e.at_stage("classifier"))?;

    let t = Instant::now();
    let bases = build_local_bases(&snapshots.data, &partition.clusters, cfg.eps_pod)
        .map_err(|e| e.at_stage("pod"))?;
    timings.pod = secs(t.elapsed());
    info!(
        "local basis sizes {:?}",
        bases.iter().map(PodBasis::dim).collect::<Vec<_>>()
    );

    let t = Instant::now();
    let regressors = train_regressors(&snapshots, &partition, &bases, cfg)
        .map_err(|e| e.at_stage("regression"))?;
    timings.regression = secs(t.elapsed());

    let provenance = Provenance {
        digest: provenance_digest(problem, layout, samples, cfg),
        sampling_seed: samples.seed,
        clustering_seed: cfg.clustering.seed,
        training_seed: cfg.mlp.seed,
        n_samples: samples.len(),
        n_clusters: partition.n_clusters(),
        eps_pod: cfg.eps_pod,
    };
    let training_logs = regressors
        .iter()
        .map(|r| match r {
            Regressor::Mlp(m) => Some(m.log.clone()),
            Regressor::Rbf(_) => None,
        })
        .collect();
    let model = RomModel {
        problem: problem.clone(),
        layout: layout.clone(),
        classifier,
        bases,
        regressors,
        provenance,
    };
    Ok((
        model,
        OfflineArtifacts {
            snapshots,
            fcm,
            partition,
            training_logs,
            timings,
        },
    ))
}

/// One regressor per cluster on the projected snapshots; clusters train concurrently
/// with per-cluster seeds, so results do not depend on the worker count.
fn train_regressors(
    snapshots: &SnapshotMatrix,
    partition: &Partition,
    bases: &[PodBasis],
    cfg: &OfflineConfig,
) -> Result<Vec<Regressor>> {
    let jobs: Vec<usize> = (0..bases.len()).collect();
    pool(cfg.workers)?.install(|| {
        jobs.par_iter()
            .map(|&k| {
                let cols = &partition.clusters[k];
                let x: Vec<Vec<f64>> = cols
                    .iter()
                    .map(|&j| snapshots.parameters[j].clone())
                    .collect();
                let coeffs = bases[k].v.transpose() * snapshots.data.select_columns(cols);
                let y: Vec<Vec<f64>> = (0..cols.len())
                    .map(|j| coeffs.column(j).iter().copied().collect())
                    .collect();
                let mlp = TrainConfig {
                    seed: cfg.mlp.seed.wrapping_add(k as u64),
                    ..cfg.mlp.clone()
                };
                Regressor::train(cfg.backend, &x, &y, &mlp, &cfg.rbf)
            })
            .collect()
    })
}

/// Rebuilds the model with every local basis capped at `cap` modes and regressors
/// retrained on the capped coefficients.
pub fn retrain_with_cap(
    model: &RomModel,
    art: &OfflineArtifacts,
    cap: usize,
    cfg: &OfflineConfig,
) -> Result<RomModel> {
    let bases: Vec<PodBasis> = model.bases.iter().map(|b| b.truncated(cap)).collect();
    let regressors = train_regressors(&art.snapshots, &art.partition, &bases, cfg)
        .map_err(|e| e.at_stage("regression"))?;
    Ok(RomModel {
        bases,
        regressors,
        ..model.clone()
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OnlineResult {
    pub cluster: usize,
    pub coefficients: Vec<f64>,
    /// Mapped solution vector.
    pub values: DVector<f64>,
}

impl RomModel {
    pub fn n_clusters(&self) -> usize {
        self.bases.len()
    }

    pub fn basis_sizes(&self) -> Vec<usize> {
        self.bases.iter().map(PodBasis::dim).collect()
    }

    /// Checks that classifier, bases and regressors agree on clusters and sizes.
    pub fn check_consistency(&self) -> Result<()> {
        let nc = self.bases.len();
        if self.regressors.len() != nc || self.classifier.labels.iter().any(|&l| l >= nc) {
            return Err(Error::Shape(
                "cluster count differs across model parts".into(),
            ));
        }
        for (k, (b, r)) in self.bases.iter().zip(&self.regressors).enumerate() {
            if b.dim() != r.outputs() {
                return Err(Error::Shape(format!(
                    "cluster {k}: basis has {} modes, regressor {} outputs",
                    b.dim(),
                    r.outputs()
                )));
            }
            if b.v.nrows() != self.layout.dim() {
                return Err(Error::Shape(format!(
                    "cluster {k}: basis rows differ from the layout"
                )));
            }
        }
        Ok(())
    }

    /// Classify, regress, expand.
    pub fn evaluate(&self, mu: &[f64]) -> Result<OnlineResult> {
        self.problem.parameters.check(mu)?;
        let cluster = self.classifier.predict(mu);
        let coefficients = self.regressors[cluster].predict(mu);
        let values = self.bases[cluster].expand(&coefficients)?;
        Ok(OnlineResult {
            cluster,
            coefficients,
            values,
        })
    }

    /// Displacement at a physical point from the reduced solution.
    pub fn displacement(
        &self,
        result: &OnlineResult,
        mu: &[f64],
        x: [f64; 2],
        side_hint: f64,
    ) -> Result<[f64; 2]> {
        reconstruct(
            &self.problem,
            &self.layout,
            result.values.as_slice(),
            mu,
            x,
            side_hint,
        )
    }
}

pub fn relative_linf(approx: &[f64], exact: &[f64]) -> f64 {
    let den = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let num = approx
        .iter()
        .zip(exact)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub mu: Vec<f64>,
    pub cluster: usize,
    pub rom_error: f64,
    /// Error of the orthogonal projection of the FOM vector on the selected basis.
    pub projection_error: f64,
    /// Relative L2 errors of the same two approximations.
    pub rom_l2: f64,
    pub projection_l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub samples: Vec<SampleError>,
    /// Test parameters whose FOM solve failed.
    pub skipped: Vec<Vec<f64>>,
    pub max_error: f64,
    pub mean_error: f64,
    pub basis_sizes: Vec<usize>,
}

/// Relative L-infinity errors of the model against given FOM vectors.
pub fn error_report(model: &RomModel, mus: &[Vec<f64>], fom: &[Vec<f64>]) -> Result<ErrorReport> {
    if mus.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let mut samples = Vec::with_capacity(mus.len());
    for (mu, u) in mus.iter().zip(fom) {
        let r = model.evaluate(mu)?;
        let basis = &model.bases[r.cluster];
        let proj = basis.expand(basis.project(u)?.as_slice())?;
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        let l2 = |a: &DVector<f64>| {
            a.iter()
                .zip(u)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
                / norm
        };
        samples.push(SampleError {
            mu: mu.clone(),
            cluster: r.cluster,
            rom_error: relative_linf(r.values.as_slice(), u),
            projection_error: relative_linf(proj.as_slice(), u),
            rom_l2: l2(&r.values),
            projection_l2: l2(&proj),
        });
    }
    let max_error = samples.iter().map(|s| s.rom_error).fold(0.0, f64::max);
    let mean_error = samples.iter().map(|s| s.rom_error).sum::<f64>() / samples.len() as f64;
    Ok(ErrorReport {
        samples,
        skipped: Vec::new(),
        max_error,
        mean_error,
        basis_sizes: model.basis_sizes(),
    })
}

/// Mapped FOM vectors for test parameters; failed solves are dropped with a warning.
pub fn test_snapshots(
    problem: &Problem,
    layout: &SnapshotLayout,
    test: &SampleSet,
    workers: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let results: Vec<Result<Vec<f64>>> = pool(workers)?.install(|| {
        test.parameters
            .par_iter()
            .map(|mu| mapped_snapshot(problem, layout, mu))
            .collect()
    });
    let (mut mus, mut vecs, mut skipped) = (Vec::new(), Vec::new(), Vec::new());
    for (mu, r) in test.parameters.iter().zip(results) {
        match r {
            Ok(v) => {
                mus.push(mu.clone());
                vecs.push(v);
            }
            Err(e) => {
                warn!("test solve at {mu:?} failed, skipping: {e}");
                skipped.push(mu.clone());
            }
        }
    }
    Ok((mus, vecs, skipped))
}

/// Solves the test set and reports the model's errors on it.
pub fn error_analysis(model: &RomModel, test: &SampleSet, workers: usize) -> Result<ErrorReport> {
    let (mus, vecs, skipped) = test_snapshots(&model.problem, &model.layout, test, workers)?;
    let mut report = error_report(model, &mus, &vecs)?;
    report.skipped = skipped;
    Ok(report)
}

/// Error report for each basis-size cap, retraining regressors per cap.
pub fn cap_sweep(
    model: &RomModel,
    art: &OfflineArtifacts,
    cfg: &OfflineConfig,
    caps: &[usize],
    mus: &[Vec<f64>],
    fom: &[Vec<f64>],
) -> Result<Vec<(usize, ErrorReport)>> {
    caps.iter()
        .map(|&cap| {
            let capped = retrain_with_cap(model, art, cap, cfg)?;
            Ok((cap, error_report(&capped, mus, fom)?))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub reps: usize,
    pub fom_median: f64,
    pub rom_median: f64,
    pub ratio: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall-clock time of a full-order solve against a full online evaluation
/// (classifier, regressor and expansion), cycling through the test parameters.
pub fn measure_speedup(model: &RomModel, mus: &[Vec<f64>], reps: usize) -> Result<SpeedupReport> {
    if mus.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if reps < 5 {
        return Err(Error::Config(format!(
            "speedup needs at least 5 repetitions, got {reps}"
        )));
    }
    let mut fom = Vec::with_capacity(reps);
    let mut rom = Vec::with_capacity(reps);
    for r in 0..reps {
        let mu = &mus[r % mus.len()];
        let t = Instant::now();
        std::hint::black_box(solve_fom(&model.problem, mu)?);
        fom.push(secs(t.elapsed()));
        let t = Instant::now();
        std::hint::black_box(model.evaluate(mu)?);
        rom.push(secs(t.elapsed()));
    }
    let (fom_median, rom_median) = (median(fom), median(rom));
    Ok(SpeedupReport {
        reps,
        fom_median,
        rom_median,
        ratio: fom_median / rom_median,
    })
}

/// Singular values of the global block and of every cluster block.
pub fn spectra(
    snapshots: &DMatrix<f64>,
    partition: &Partition,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let global = pod_truncate(snapshots, 1e-300)?.singular_values;
    let local = partition
        .clusters
        .iter()
        .map(|cols| Ok(pod_truncate(&snapshots.select_columns(cols), 1e-300)?.singular_values))
        .collect::<Result<Vec<_>>>()?;
    Ok((global, local))
}
