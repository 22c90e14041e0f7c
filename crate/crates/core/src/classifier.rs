//! Nearest-neighbour map from parameters to cluster labels.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnClassifier {
    /// Training points scaled to the unit box.
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub k: usize,
    pub minkowski_p: f64,
    pub bounds: Vec<[f64; 2]>,
}

impl KnnClassifier {
    /// Stores scaled points; `bounds` defines the unit-box scaling.
    pub fn fit(
        parameters: &[Vec<f64>],
        labels: &[usize],
        bounds: &[[f64; 2]],
        k: usize,
        minkowski_p: f64,
    ) -> Result<Self> {
        if parameters.len() != labels.len() {
            return Err(Error::Shape("classifier needs one label per sample".into()));
        }
        if k == 0 || k > parameters.len() {
            return Err(Error::Config(format!(
                "classifier.k must lie in [1, {}], got {k}",
                parameters.len()
            )));
        }
        if !(minkowski_p >= 1.0) {
            return Err(Error::Config(format!(
                "classifier.minkowski_p must be at least 1, got {minkowski_p}"
            )));
        }
        let mut c = Self {
            points: Vec::new(),
            labels: labels.to_vec(),
            k,
            minkowski_p,
            bounds: bounds.to_vec(),
        };
        c.points = parameters.iter().map(|mu| c.scale(mu)).collect();
        Ok(c)
    }

    fn scale(&self, mu: &[f64]) -> Vec<f64> {
        mu.iter()
            .zip(&self.bounds)
            .map(|(v, b)| {
                let w = b[1] - b[0];
                if w > 0.0 {
                    (v - b[0]) / w
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let p = self.minkowski_p;
        if p == 2.0 {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        } else {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs().powf(p))
                .sum::<f64>()
                .powf(1.0 / p)
        }
    }

    /// Majority label among the `k` nearest training points; ties go to the
    /// label of the nearest point, equal distances to the lower sample index.
    pub fn predict(&self, mu: &[f64]) -> usize {
        let mut q = mu.to_vec();
        for (v, b) in q.iter_mut().zip(&self.bounds) {
            if *v < b[0] || *v > b[1] {
                warn!("classifier query {mu:?} outside the parameter bounds; clamping");
                *v = v.clamp(b[0], b[1]);
            }
        }
        let q = self.scale(&q);
        let mut order: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (self.distance(p, &q), i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let near = &order[..self.k];
        let n_labels = self.labels.iter().max().map_or(0, |m| m + 1);
        let mut votes = vec![0usize; n_labels];
        for &(_, i) in near {
            votes[self.labels[i]] += 1;
        }
        let top = *votes.iter().max().expect("k >= 1");
        let first = self.labels[near[0].1];
        if votes[first] == top {
            return first;
        }
        // highest vote count; among equals the label whose nearest member comes first
        near.iter()
            .map(|&(_, i)| self.labels[i])
            .find(|&l| votes[l] == top)
            .expect("some label has the top vote")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_nearest_neighbour_reproduces_training_labels() {
        let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 19.0]).collect();
        let labels: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        let c = KnnClassifier::fit(&pts, &labels, &[[0.0, 1.0]], 1, 2.0).unwrap();
        for (p, &l) in pts.iter().zip(&labels) {
            assert_eq!(c.predict(p), l);
        }
        assert_eq!(c.predict(&[0.49]), 0);
        assert_eq!(c.predict(&[7.0]), 1);
        assert!(KnnClassifier::fit(&pts, &labels, &[[0.0, 1.0]], 21, 2.0).is_err());
    }

    #[test]
    fn vote_ties_fall_back_to_the_nearest_neighbour() {
        let pts = vec![vec![0.0], vec![0.3], vec![0.5], vec![1.0]];
        let c = KnnClassifier::fit(&pts, &[0, 1, 1, 0], &[[0.0, 1.0]], 2, 2.0).unwrap();
        assert_eq!(c.predict(&[0.1]), 0);
        assert_eq!(c.predict(&[0.45]), 1);
    }
}
