//! Fuzzy c-means clustering of snapshot columns and the induced hard partition.

use log::{debug, warn};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcmConfig {
    pub clusters: usize,
    pub exponent: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for FcmConfig {
    fn default() -> Self {
        Self {
            clusters: 8,
            exponent: 1.5,
            tol: 1e-6,
            max_iter: 300,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcmModel {
    /// One centroid per column.
    pub centroids: DMatrix<f64>,
    /// `clusters x samples`; every column sums to one.
    pub memberships: DMatrix<f64>,
    pub exponent: f64,
    /// Objective after each iteration.
    pub objective_log: Vec<f64>,
    pub converged: bool,
}

impl FcmModel {
    pub fn clusters(&self) -> usize {
        self.centroids.ncols()
    }
}

/// Hard assignment of samples to clusters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub labels: Vec<usize>,
    /// Sample indices per cluster, ascending.
    pub clusters: Vec<Vec<usize>>,
}

impl Partition {
    pub fn from_labels(labels: Vec<usize>, n_clusters: usize) -> Self {
        let mut clusters = vec![Vec::new(); n_clusters];
        for (j, &l) in labels.iter().enumerate() {
            clusters[l].push(j);
        }
        Self { labels, clusters }
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Vec::len).collect()
    }
}

fn sq_dist(data: &DMatrix<f64>, j: usize, centroids: &DMatrix<f64>, k: usize) -> f64 {
    data.column(j)
        .iter()
        .zip(centroids.column(k).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// k-means++ seeding: first centroid uniform, then proportional to squared distance.
pub fn kmeans_pp_init(data: &DMatrix<f64>, clusters: usize, seed: u64) -> DMatrix<f64> {
    let n = data.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|j| {
            data.column(j)
                .iter()
                .zip(data.column(chosen[0]).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })
        .collect();
    while chosen.len() < clusters {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut t = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (j, &d) in d2.iter().enumerate() {
                if t < d {
                    pick = j;
                    break;
                }
                t -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        chosen.push(next);
        for (j, d) in d2.iter_mut().enumerate() {
            let e: f64 = data
                .column(j)
                .iter()
                .zip(data.column(next).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            *d = d.min(e);
        }
    }
    data.select_columns(&chosen)
}

/// Membership update for fixed centroids, with the zero-distance rule.
pub fn update_memberships(
    data: &DMatrix<f64>,
    centroids: &DMatrix<f64>,
    exponent: f64,
) -> DMatrix<f64> {
    let c = centroids.ncols();
    let n = data.ncols();
    let power = 1.0 / (exponent - 1.0);
    let mut w = DMatrix::zeros(c, n);
    let mut d2 = vec![0.0; c];
    for j in 0..n {
        for (k, d) in d2.iter_mut().enumerate() {
            *d = sq_dist(data, j, centroids, k);
        }
        if let Some(z) = d2.iter().position(|&d| d == 0.0) {
            w[(z, j)] = 1.0;
            continue;
        }
        let dmin = d2.iter().copied().fold(f64::INFINITY, f64::min);
        let r: Vec<f64> = d2.iter().map(|&d| (dmin / d).powf(power)).collect();
        let s: f64 = r.iter().sum();
        for k in 0..c {
            w[(k, j)] = r[k] / s;
        }
    }
    w
}

/// Centroids as means weighted by memberships raised to the fuzzy exponent.
pub fn update_centroids(
    data: &DMatrix<f64>,
    memberships: &DMatrix<f64>,
    exponent: f64,
) -> DMatrix<f64> {
    let wm = memberships.map(|v| v.powf(exponent));
    let mut c = data * wm.transpose();
    for k in 0..c.ncols() {
        let s: f64 = wm.row(k).sum();
        if s > 0.0 {
            c.column_mut(k).scale_mut(1.0 / s);
        }
    }
    c
}

/// `sum_k sum_j w_kj^m |x_j - c_k|^2`.
pub fn fcm_objective(
    data: &DMatrix<f64>,
    centroids: &DMatrix<f64>,
    memberships: &DMatrix<f64>,
    exponent: f64,
) -> f64 {
    let mut j_total = 0.0;
    for j in 0..data.ncols() {
        for k in 0..centroids.ncols() {
            let w = memberships[(k, j)];
            if w > 0.0 {
                j_total += w.powf(exponent) * sq_dist(data, j, centroids, k);
            }
        }
    }
    j_total
}

pub fn fcm_fit(data: &DMatrix<f64>, cfg: &FcmConfig) -> Result<FcmModel> {
    check(data, cfg)?;
    let init = kmeans_pp_init(data, cfg.clusters, cfg.seed);
    fcm_fit_with_init(data, init, cfg)
}

fn check(data: &DMatrix<f64>, cfg: &FcmConfig) -> Result<()> {
    if cfg.clusters == 0 || cfg.clusters > data.ncols() {
        return Err(Error::Config(format!(
            "clustering.clusters must lie in [1, {}], got {}",
            data.ncols(),
            cfg.clusters
        )));
    }
    if !(cfg.exponent > 1.0) {
        return Err(Error::Config(format!(
            "clustering.exponent must exceed 1, got {}",
            cfg.exponent
        )));
    }
    Ok(())
}

/// Alternating updates from given initial centroids.
pub fn fcm_fit_with_init(
    data: &DMatrix<f64>,
    init: DMatrix<f64>,
    cfg: &FcmConfig,
) -> Result<FcmModel> {
    check(data, cfg)?;
    let m = cfg.exponent;
    let mut centroids = init;
    let mut w = update_memberships(data, &centroids, m);
    let mut log = Vec::new();
    let mut converged = false;
    for it in 0..cfg.max_iter {
        centroids = update_centroids(data, &w, m);
        let next = update_memberships(data, &centroids, m);
        let change = (&next - &w).amax();
        w = next;
        log.push(fcm_objective(data, &centroids, &w, m));
        if change < cfg.tol {
            debug!("fuzzy c-means converged after {} iterations", it + 1);
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("fuzzy c-means stopped at max_iter = {}", cfg.max_iter);
    }
    Ok(FcmModel {
        centroids,
        memberships: w,
        exponent: m,
        objective_log: log,
        converged,
    })
}

/// Argmax labels with ties to the lowest cluster index.
pub fn argmax_labels(memberships: &DMatrix<f64>) -> Vec<usize> {
    (0..memberships.ncols())
        .map(|j| {
            let col = memberships.column(j);
            let mut best = 0;
            for k in 1..col.len() {
                if col[k] > col[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Hard partition of a fitted model; fails if a cluster receives no sample.
pub fn hard_partition(model: &FcmModel) -> Result<Partition> {
    let p = Partition::from_labels(argmax_labels(&model.memberships), model.clusters());
    if let Some(k) = p.clusters.iter().position(Vec::is_empty) {
        return Err(Error::Clustering(format!(
            "cluster {k} is empty after hard assignment"
        )));
    }
    Ok(p)
}

/// Fits and partitions, reseeding up to five times when a cluster comes out empty.
pub fn cluster_snapshots(data: &DMatrix<f64>, cfg: &FcmConfig) -> Result<(FcmModel, Partition)> {
    let mut last = None;
    for restart in 0..=5u64 {
        let seeded = FcmConfig {
            seed: cfg.seed.wrapping_add(restart),
            ..*cfg
        };
        let model = fcm_fit(data, &seeded)?;
        match hard_partition(&model) {
            Ok(p) => return Ok((model, p)),
            Err(e) => {
                warn!("{e}; reseeding (restart {})", restart + 1);
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_to_the_lowest_index() {
        let w = DMatrix::from_row_slice(2, 3, &[0.7, 0.5, 0.2, 0.3, 0.5, 0.8]);
        assert_eq!(argmax_labels(&w), vec![0, 0, 1]);
    }

    #[test]
    fn coincident_point_gets_full_membership() {
        let data = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 3.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let w = update_memberships(&data, &c, 1.5);
        assert_eq!(w[(0, 1)], 1.0);
        assert_eq!(w[(1, 1)], 0.0);
        // standard formula elsewhere: d = (1, 2) gives (1/1)^4 : (1/2)^4
        assert!((w[(0, 0)] - 16.0 / 17.0).abs() < 1e-15);
    }
}
