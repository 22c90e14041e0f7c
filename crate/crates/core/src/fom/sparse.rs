//! Symmetric profile (skyline) storage with an in-place Cholesky factorization,
//! and a coordinate-format accumulator for inspection.

use crate::error::{Error, Result};

/// Destination for element matrix entries.
pub trait Accumulator {
    fn add(&mut self, row: usize, col: usize, value: f64);
}

/// Lower-triangular profile storage of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SkylineMatrix {
    n: usize,
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineMatrix {
    /// Allocates a zero matrix; `first[i]` is the first stored column of row `i`.
    pub fn with_profile(first: Vec<usize>) -> Self {
        let n = first.len();
        let mut start = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for (i, &f) in first.iter().enumerate() {
            debug_assert!(f <= i);
            start.push(acc);
            acc += i - f + 1;
        }
        start.push(acc);
        Self {
            n,
            first,
            start,
            data: vec![0.0; acc],
        }
    }

    /// Profile from the DOF lists of all coupling groups (elements).
    pub fn profile_from_groups<'a>(
        n: usize,
        groups: impl Iterator<Item = &'a [usize]>,
    ) -> Vec<usize> {
        let mut first: Vec<usize> = (0..n).collect();
        for g in groups {
            if let Some(&m) = g.iter().min() {
                for &i in g {
                    if m < first[i] {
                        first[i] = m;
                    }
                }
            }
        }
        first
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn stored_entries(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if j < self.first[i] {
            0.0
        } else {
            self.data[self.start[i] + j - self.first[i]]
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let f = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            let mut s = 0.0;
            for (k, &a) in row.iter().enumerate() {
                let j = f + k;
                s += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
            y[i] += s;
        }
        y
    }

    /// Principal submatrix on `keep` (sorted ascending).
    pub fn submatrix(&self, keep: &[usize]) -> SkylineMatrix {
        let mut map = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let first: Vec<usize> = keep
            .iter()
            .enumerate()
            .map(|(new, &old)| {
                (self.first[old]..=old)
                    .find(|&c| map[c] != usize::MAX)
                    .map_or(new, |c| map[c])
            })
            .collect();
        let mut out = SkylineMatrix::with_profile(first);
        for (new, &old) in keep.iter().enumerate() {
            for c in self.first[old]..=old {
                if map[c] != usize::MAX {
                    let v = self.data[self.start[old] + c - self.first[old]];
                    out.add(new, map[c], v);
                }
            }
        }
        out
    }

    /// In-place Cholesky `A = L L^T`; fails on a nonpositive pivot.
    pub fn factor(mut self) -> Result<CholeskyFactor> {
        for i in 0..self.n {
            let fi = self.first[i];
            let si = self.start[i];
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let k0 = fi.max(fj);
                let len = j - k0;
                let (head, tail) = self.data.split_at_mut(si);
                let li = &tail[k0 - fi..k0 - fi + len];
                let lj = &head[sj + k0 - fj..sj + k0 - fj + len];
                let dot: f64 = li.iter().zip(lj).map(|(a, b)| a * b).sum();
                let djj = head[sj + j - fj];
                let v = &mut tail[j - fi];
                *v = (*v - dot) / djj;
            }
            let row = &mut self.data[si..si + i - fi + 1];
            let (off, diag) = row.split_at_mut(i - fi);
            let d = diag[0] - off.iter().map(|v| v * v).sum::<f64>();
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::RankDeficient {
                    constrained: 0,
                    pivot: i,
                });
            }
            diag[0] = d.sqrt();
        }
        Ok(CholeskyFactor { l: self })
    }
}

impl Accumulator for SkylineMatrix {
    /// Only the lower triangle is stored; upper entries are dropped.
    fn add(&mut self, row: usize, col: usize, value: f64) {
        if col > row {
            return;
        }
        debug_assert!(col >= self.first[row], "entry outside the profile");
        self.data[self.start[row] + col - self.first[row]] += value;
    }
}

pub struct CholeskyFactor {
    l: SkylineMatrix,
}

impl CholeskyFactor {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let l = &self.l;
        let mut y = b.to_vec();
        for i in 0..l.n {
            let f = l.first[i];
            let row = &l.data[l.start[i]..l.start[i + 1]];
            let s: f64 = row[..i - f].iter().zip(&y[f..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - s) / row[i - f];
        }
        for i in (0..l.n).rev() {
            let f = l.first[i];
            let row = &l.data[l.start[i]..l.start[i + 1]];
            y[i] /= row[i - f];
            let yi = y[i];
            for (k, &a) in row[..i - f].iter().enumerate() {
                y[f + k] -= a * yi;
            }
        }
        y
    }
}

/// Coordinate-format accumulation of every entry, used for inspection and dumps.
#[derive(Clone, Debug, Default)]
pub struct TripletMatrix {
    pub n: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl TripletMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    /// Sums duplicates and sorts by (row, col).
    pub fn compressed(&self) -> Vec<(usize, usize, f64)> {
        let mut e = self.entries.clone();
        e.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(e.len());
        for (r, c, v) in e {
            match out.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => out.push((r, c, v)),
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n]; self.n];
        for &(r, c, v) in &self.entries {
            a[r][c] += v;
        }
        a
    }
}

impl Accumulator for TripletMatrix {
    fn add(&mut self, row: usize, col: usize, value: f64) {
        self.entries.push((row, col, value));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spd(n: usize) -> Vec<Vec<f64>> {
        // banded SPD matrix with one dense trailing row/column
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = 4.0 + i as f64 * 0.1;
            if i + 1 < n {
                a[i][i + 1] = -1.0;
                a[i + 1][i] = -1.0;
            }
        }
        for j in 0..n - 1 {
            a[n - 1][j] += 0.05;
            a[j][n - 1] += 0.05;
        }
        a
    }

    #[test]
    fn factor_and_solve_matches_dense() {
        let n = 12;
        let a = spd(n);
        let first: Vec<usize> = (0..n)
            .map(|i| (0..=i).find(|&j| a[i][j] != 0.0).unwrap())
            .collect();
        let mut s = SkylineMatrix::with_profile(first);
        for i in 0..n {
            for j in 0..=i {
                if a[i][j] != 0.0 {
                    s.add(i, j, a[i][j]);
                }
            }
        }
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b = s.mul_vec(&x_true);
        for i in 0..n {
            let dense: f64 = (0..n).map(|j| a[i][j] * x_true[j]).sum();
            assert_abs_diff_eq!(b[i], dense, epsilon = 1e-13);
        }
        let sub = s.submatrix(&[0, 2, 3, 11]);
        assert_abs_diff_eq!(sub.get(3, 0), a[11][0], epsilon = 1e-15);
        assert_abs_diff_eq!(sub.get(1, 0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sub.get(2, 1), -1.0, epsilon = 1e-15);
        let x = s.factor().unwrap().solve(&b);
        for i in 0..n {
            assert_abs_diff_eq!(x[i], x_true[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_is_reported() {
        let mut s = SkylineMatrix::with_profile(vec![0, 0]);
        s.add(0, 0, 1.0);
        s.add(1, 0, 2.0);
        s.add(1, 1, 1.0);
        assert!(matches!(
            s.factor(),
            Err(Error::RankDeficient { pivot: 1, .. })
        ));
    }
}
