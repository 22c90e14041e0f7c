//! Truncated proper orthogonal decomposition of snapshot blocks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orthonormal reduced basis with the spectrum it was cut from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PodBasis {
    /// `rows x n` orthonormal columns.
    pub v: DMatrix<f64>,
    /// All singular values of the block, nonincreasing.
    pub singular_values: Vec<f64>,
    pub eps: f64,
}

impl PodBasis {
    pub fn dim(&self) -> usize {
        self.v.ncols()
    }

    /// Basis restricted to its first `n` modes.
    pub fn truncated(&self, n: usize) -> PodBasis {
        let n = n.clamp(1, self.dim());
        PodBasis {
            v: self.v.columns(0, n).into_owned(),
            singular_values: self.singular_values.clone(),
            eps: self.eps,
        }
    }

    pub fn project(&self, u: &[f64]) -> Result<DVector<f64>> {
        if u.len() != self.v.nrows() {
            return Err(Error::Shape(format!(
                "vector of length {} projected on a basis of {} rows",
                u.len(),
                self.v.nrows()
            )));
        }
        Ok(self.v.tr_mul(&DVector::from_column_slice(u)))
    }

    pub fn expand(&self, coeffs: &[f64]) -> Result<DVector<f64>> {
        if coeffs.len() != self.dim() {
            return Err(Error::Shape(format!(
                "{} coefficients for a basis of dimension {}",
                coeffs.len(),
                self.dim()
            )));
        }
        Ok(&self.v * DVector::from_column_slice(coeffs))
    }
}

/// Smallest `n` whose neglected energy share is at most `eps^2`.
pub fn energy_dimension(singular_values: &[f64], eps: f64) -> usize {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    // tails summed from the small end to avoid cancellation at tight tolerances
    let mut tails = vec![0.0; singular_values.len() + 1];
    for i in (0..singular_values.len()).rev() {
        tails[i] = tails[i + 1] + singular_values[i] * singular_values[i];
    }
    (1..=singular_values.len())
        .find(|&n| tails[n] <= eps * eps * total)
        .unwrap_or(singular_values.len())
}

/// Thin SVD `S = U diag(s) W^T` through a QR factorization of the tall side.
pub fn thin_svd(s: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let (u, sv) = if s.nrows() >= s.ncols() {
        let qr = s.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let svd = r.svd(true, false);
        let u = q * svd.u.expect("left vectors requested");
        (u, svd.singular_values)
    } else {
        let svd = s.clone().svd(true, false);
        (svd.u.expect("left vectors requested"), svd.singular_values)
    };
    // nalgebra does not guarantee ordering; sort descending
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let mut out = DMatrix::zeros(u.nrows(), order.len());
    for (j, &k) in order.iter().enumerate() {
        let mut col = u.column(k).into_owned();
        // deterministic sign: largest entry positive
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        out.set_column(j, &col);
    }
    (out, order.iter().map(|&k| sv[k]).collect())
}

pub fn pod_truncate(block: &DMatrix<f64>, eps: f64) -> Result<PodBasis> {
    if block.ncols() == 0 || block.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate(
            "POD of an all-zero snapshot block".into(),
        ));
    }
    let (u, sv) = thin_svd(block);
    let n = energy_dimension(&sv, eps).max(1);
    Ok(PodBasis {
        v: u.columns(0, n).into_owned(),
        singular_values: sv,
        eps,
    })
}

/// One basis per cluster from the columns listed in `clusters`.
pub fn build_local_bases(
    snapshots: &DMatrix<f64>,
    clusters: &[Vec<usize>],
    eps: f64,
) -> Result<Vec<PodBasis>> {
    clusters
        .iter()
        .enumerate()
        .map(|(k, cols)| {
            if cols.is_empty() {
                return Err(Error::Degenerate(format!("cluster {k} has no snapshots")));
            }
            pod_truncate(&snapshots.select_columns(cols), eps)
        })
        .collect()
}

/// Largest entry of `|V^T V - I|`.
pub fn orthonormality_defect(v: &DMatrix<f64>) -> f64 {
    let g = v.transpose() * v;
    let mut m: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let e = if i == j { 1.0 } else { 0.0 };
            m = m.max((g[(i, j)] - e).abs());
        }
    }
    m
}

/// `sum_j |u_j - V V^T u_j|^2 / sum_j |u_j|^2` over the columns of `block`.
pub fn projection_energy_error(v: &DMatrix<f64>, block: &DMatrix<f64>) -> f64 {
    let coeffs = v.transpose() * block;
    let residual = block - v * coeffs;
    residual.norm_squared() / block.norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_rule_on_a_diagonal_block() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 1.0, 0.01]));
        let b = pod_truncate(&s, 1e-1).unwrap();
        assert_eq!(b.dim(), 1);
        assert_eq!(pod_truncate(&s, 1e-3).unwrap().dim(), 2);
        assert_eq!(pod_truncate(&s, 1e-9).unwrap().dim(), 3);
    }

    #[test]
    fn repeated_column_is_rank_one() {
        let c = DVector::from_fn(30, |i, _| (i as f64 * 0.3).sin());
        let s = DMatrix::from_columns(&[c.clone(), c.clone(), c]);
        assert_eq!(pod_truncate(&s, 1e-12).unwrap().dim(), 1);
        assert!(pod_truncate(&DMatrix::zeros(4, 3), 1e-3).is_err());
    }
}
