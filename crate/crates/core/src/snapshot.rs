//! Parameter sampling, the fixed-length mapping of FOM solutions onto a common
//! lattice, and the snapshot matrix.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fom::{
    compute_level_sets, evaluate_solution, heaviside, solve_fom, CrackTemplate, FomSolution,
    ParamExpr, Problem,
};
use crate::spline::Lattice;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingScheme {
    LatinHypercube,
    UniformRandom,
    TensorGrid,
}

impl SamplingScheme {
    pub fn code(self) -> u32 {
        match self {
            SamplingScheme::LatinHypercube => 0,
            SamplingScheme::UniformRandom => 1,
            SamplingScheme::TensorGrid => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(SamplingScheme::LatinHypercube),
            1 => Some(SamplingScheme::UniformRandom),
            2 => Some(SamplingScheme::TensorGrid),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub parameters: Vec<Vec<f64>>,
    pub seed: u64,
    pub scheme: SamplingScheme,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.parameters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parameters.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.parameters.first().map_or(0, Vec::len)
    }
}

/// Draws `n` parameter vectors in the box `bounds`.
///
/// A tensor grid needs `n = m^d`; `m = 1` places the point at the box center.
pub fn sample_parameters(
    bounds: &[[f64; 2]],
    n: usize,
    scheme: SamplingScheme,
    seed: u64,
) -> Result<SampleSet> {
    if bounds.is_empty() {
        return Err(Error::Config(
            "sampling needs at least one parameter".into(),
        ));
    }
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    for (i, b) in bounds.iter().enumerate() {
        if !(b[1] >= b[0]) || !b[0].is_finite() || !b[1].is_finite() {
            return Err(Error::Config(format!(
                "parameter {i} has empty bounds {b:?}"
            )));
        }
    }
    let d = bounds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit: Vec<Vec<f64>> = match scheme {
        SamplingScheme::LatinHypercube => {
            let strata: Vec<Vec<usize>> = (0..d)
                .map(|_| {
                    let mut p: Vec<usize> = (0..n).collect();
                    p.shuffle(&mut rng);
                    p
                })
                .collect();
            (0..n)
                .map(|i| {
                    (0..d)
                        .map(|k| (strata[k][i] as f64 + rng.gen::<f64>()) / n as f64)
                        .collect()
                })
                .collect()
        }
        SamplingScheme::UniformRandom => (0..n)
            .map(|_| (0..d).map(|_| rng.gen::<f64>()).collect())
            .collect(),
        SamplingScheme::TensorGrid => {
            let m = (n as f64).powf(1.0 / d as f64).round() as usize;
            if m.pow(d as u32) != n {
                return Err(Error::Config(format!(
                    "tensor-grid sampling needs a perfect {d}-th power, got {n}"
                )));
            }
            let coord = |i: usize| {
                if m == 1 {
                    0.5
                } else {
                    i as f64 / (m - 1) as f64
                }
            };
            (0..n)
                .map(|mut idx| {
                    (0..d)
                        .map(|_| {
                            let c = coord(idx % m);
                            idx /= m;
                            c
                        })
                        .collect()
                })
                .collect()
        }
    };
    let parameters = unit
        .into_iter()
        .map(|u| {
            u.iter()
                .zip(bounds)
                .map(|(t, b)| (b[0] + t * (b[1] - b[0])).min(b[1]))
                .collect()
        })
        .collect();
    Ok(SampleSet {
        parameters,
        seed,
        scheme,
    })
}

/// How physical solutions are pulled back onto the lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MappingKind {
    /// Lattice points are used as physical points.
    Identity,
    /// Piecewise-linear stretch per axis that carries a reference edge-crack tip
    /// onto the current tip, so the crack always lies on one lattice row.
    EdgeTransport {
        lo: [f64; 2],
        hi: [f64; 2],
        reference_tip: [f64; 2],
    },
}

/// Fixed-length layout of mapped snapshots.
///
/// The first `2 L` entries hold both components at every lattice point (crack side +1
/// on the corridor), followed by `2 C` entries for the side -1 value at corridor points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotLayout {
    pub lattice: Lattice,
    pub kind: MappingKind,
    /// Lattice indices of corridor points, ascending.
    pub corridor: Vec<usize>,
    corridor_slot: Vec<u32>,
}

const NO_SLOT: u32 = u32::MAX;

impl SnapshotLayout {
    /// Chooses the mapping for a problem: transport for horizontal edge cracks on
    /// axis-aligned rectangles, the identity lattice otherwise.
    pub fn for_problem(problem: &Problem) -> Result<Self> {
        let lattice = problem.geometry.knot_image_lattice();
        let Some(template) = problem.crack else {
            return Ok(Self::with_corridor(
                lattice,
                MappingKind::Identity,
                Vec::new(),
            ));
        };
        if let (CrackTemplate::Edge { y, length }, Some((xs, ys))) =
            (template, tensor_axes(&lattice))
        {
            let lo = [xs[0], ys[0]];
            let hi = [*xs.last().expect("lattice"), *ys.last().expect("lattice")];
            let mid = |e: ParamExpr| {
                let r = expr_range(e, &problem.parameters.bounds);
                0.5 * (r[0] + r[1])
            };
            let col = nearest(&xs, lo[0] + mid(length));
            let row = nearest(&ys, mid(y));
            if col > 0 && col + 1 < xs.len() && row > 0 && row + 1 < ys.len() {
                let corridor = (0..=col).map(|i| lattice.index(i, row)).collect();
                let kind = MappingKind::EdgeTransport {
                    lo,
                    hi,
                    reference_tip: [xs[col], ys[row]],
                };
                return Ok(Self::with_corridor(lattice, kind, corridor));
            }
        }
        let (blo, bhi) = swept_band(problem);
        let tol = 1e-10;
        let corridor = (0..lattice.len())
            .filter(|&i| {
                let p = lattice.points[i];
                (0..2).all(|d| p[d] >= blo[d] - tol && p[d] <= bhi[d] + tol)
            })
            .collect();
        Ok(Self::with_corridor(
            lattice,
            MappingKind::Identity,
            corridor,
        ))
    }

    pub fn with_corridor(lattice: Lattice, kind: MappingKind, corridor: Vec<usize>) -> Self {
        let mut corridor_slot = vec![NO_SLOT; lattice.len()];
        for (c, &i) in corridor.iter().enumerate() {
            corridor_slot[i] = c as u32;
        }
        Self {
            lattice,
            kind,
            corridor,
            corridor_slot,
        }
    }

    /// Length of a mapped snapshot.
    pub fn dim(&self) -> usize {
        2 * (self.lattice.len() + self.corridor.len())
    }

    /// Entry of component `d` at lattice point `i` on crack side `side`.
    pub fn slot(&self, i: usize, d: usize, side: f64) -> usize {
        match self.corridor_slot[i] {
            c if c != NO_SLOT && side < 0.0 => 2 * self.lattice.len() + 2 * c as usize + d,
            _ => 2 * i + d,
        }
    }

    pub fn corridor_index(&self, i: usize) -> Option<usize> {
        let c = self.corridor_slot[i];
        (c != NO_SLOT).then_some(c as usize)
    }

    /// Physical location of a reference point for the crack at `mu`.
    pub fn forward(&self, problem: &Problem, mu: &[f64], p: [f64; 2]) -> [f64; 2] {
        match (&self.kind, problem.crack_at(mu)) {
            (
                MappingKind::EdgeTransport {
                    lo,
                    hi,
                    reference_tip,
                },
                Some(crack),
            ) => {
                let (_, tip) = crack.segment();
                [
                    stretch(p[0], lo[0], reference_tip[0], hi[0], tip[0]),
                    stretch(p[1], lo[1], reference_tip[1], hi[1], tip[1]),
                ]
            }
            _ => p,
        }
    }

    /// Reference location of a physical point for the crack at `mu`.
    pub fn backward(&self, problem: &Problem, mu: &[f64], x: [f64; 2]) -> [f64; 2] {
        match (&self.kind, problem.crack_at(mu)) {
            (
                MappingKind::EdgeTransport {
                    lo,
                    hi,
                    reference_tip,
                },
                Some(crack),
            ) => {
                let (_, tip) = crack.segment();
                [
                    stretch(x[0], lo[0], tip[0], hi[0], reference_tip[0]),
                    stretch(x[1], lo[1], tip[1], hi[1], reference_tip[1]),
                ]
            }
            _ => x,
        }
    }

    /// Physical points of every slot pair in storage order: lattice points, then corridor points.
    pub fn slot_points(&self, problem: &Problem, mu: &[f64]) -> Vec<[f64; 2]> {
        let main = self
            .lattice
            .points
            .iter()
            .map(|&p| self.forward(problem, mu, p));
        let extra = self
            .corridor
            .iter()
            .map(|&i| self.forward(problem, mu, self.lattice.points[i]));
        main.chain(extra).collect()
    }
}

/// Piecewise-linear map of `[lo, hi]` sending `from` to `to`.
fn stretch(t: f64, lo: f64, from: f64, hi: f64, to: f64) -> f64 {
    if (t - from).abs() <= 1e-12 * (hi - lo) {
        to
    } else if t < from {
        lo + (t - lo) * (to - lo) / (from - lo)
    } else {
        to + (t - from) * (hi - to) / (hi - from)
    }
}

fn nearest(grid: &[f64], v: f64) -> usize {
    (0..grid.len())
        .min_by(|&a, &b| (grid[a] - v).abs().total_cmp(&(grid[b] - v).abs()))
        .expect("nonempty grid")
}

fn expr_range(e: ParamExpr, bounds: &[[f64; 2]]) -> [f64; 2] {
    match e {
        ParamExpr::Value(v) => [v, v],
        ParamExpr::Param {
            index,
            scale,
            offset,
        } => {
            let a = scale * bounds[index][0] + offset;
            let b = scale * bounds[index][1] + offset;
            [a.min(b), a.max(b)]
        }
    }
}

/// Physical axes when the lattice is an axis-aligned tensor grid.
fn tensor_axes(lattice: &Lattice) -> Option<(Vec<f64>, Vec<f64>)> {
    let [n0, n1] = lattice.shape();
    let xs: Vec<f64> = (0..n0)
        .map(|i| lattice.points[lattice.index(i, 0)][0])
        .collect();
    let ys: Vec<f64> = (0..n1)
        .map(|j| lattice.points[lattice.index(0, j)][1])
        .collect();
    let tol = 1e-12 * (xs[n0 - 1] - xs[0]).abs().max((ys[n1 - 1] - ys[0]).abs());
    for j in 0..n1 {
        for i in 0..n0 {
            let p = lattice.points[lattice.index(i, j)];
            if (p[0] - xs[i]).abs() > tol || (p[1] - ys[j]).abs() > tol {
                return None;
            }
        }
    }
    Some((xs, ys))
}

/// Bounding box of all crack positions over the parameter box.
fn swept_band(problem: &Problem) -> ([f64; 2], [f64; 2]) {
    let bounds = &problem.parameters.bounds;
    let d = bounds.len();
    let m = 9usize;
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for mut idx in 0..m.pow(d as u32) {
        let mu: Vec<f64> = bounds
            .iter()
            .map(|b| {
                let t = (idx % m) as f64 / (m - 1) as f64;
                idx /= m;
                b[0] + t * (b[1] - b[0])
            })
            .collect();
        if let Some(c) = problem.crack_at(&mu) {
            let (a, b) = c.segment();
            for p in [a, b] {
                for k in 0..2 {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
        }
    }
    (lo, hi)
}

/// Pulls a solved field back onto the layout.
pub fn map_solution(
    sol: &FomSolution,
    problem: &Problem,
    layout: &SnapshotLayout,
    mu: &[f64],
) -> Result<Vec<f64>> {
    if layout.lattice.len() != problem.geometry.knot_image_lattice().len() {
        return Err(Error::Shape(
            "snapshot lattice does not belong to this geometry".into(),
        ));
    }
    let mut out = vec![0.0; layout.dim()];
    for (i, &p) in layout.lattice.points.iter().enumerate() {
        let x = layout.forward(problem, mu, p);
        let up = evaluate_solution(sol, x, 1.0)?;
        out[2 * i] = up[0];
        out[2 * i + 1] = up[1];
        if layout.corridor_index(i).is_some() {
            let down = evaluate_solution(sol, x, -1.0)?;
            out[layout.slot(i, 0, -1.0)] = down[0];
            out[layout.slot(i, 1, -1.0)] = down[1];
        }
    }
    Ok(out)
}

/// Solves and maps one parameter vector.
pub fn mapped_snapshot(problem: &Problem, layout: &SnapshotLayout, mu: &[f64]) -> Result<Vec<f64>> {
    let sol = solve_fom(problem, mu)?;
    map_solution(&sol, problem, layout, mu)
}

/// Snapshot matrix with one mapped solution per column, in sample order.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotMatrix {
    pub data: DMatrix<f64>,
    pub parameters: Vec<Vec<f64>>,
}

impl SnapshotMatrix {
    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    /// Sub-matrix of selected columns.
    pub fn columns(&self, idx: &[usize]) -> SnapshotMatrix {
        SnapshotMatrix {
            data: self.data.select_columns(idx),
            parameters: idx.iter().map(|&i| self.parameters[i].clone()).collect(),
        }
    }
}

/// Solves every sample, in parallel on `workers` threads, and gathers the columns.
pub fn build_snapshot_matrix(
    samples: &SampleSet,
    problem: &Problem,
    layout: &SnapshotLayout,
    workers: usize,
) -> Result<SnapshotMatrix> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let columns: Vec<Vec<f64>> = pool.install(|| {
        samples
            .parameters
            .par_iter()
            .map(|mu| {
                mapped_snapshot(problem, layout, mu).map_err(|e| Error::Snapshot {
                    mu: mu.clone(),
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let n = layout.dim();
    let mut data = DMatrix::zeros(n, columns.len());
    for (j, c) in columns.iter().enumerate() {
        data.column_mut(j).copy_from_slice(c);
    }
    Ok(SnapshotMatrix {
        data,
        parameters: samples.parameters.clone(),
    })
}

/// Displacement at a physical point from a mapped vector: bilinear interpolation in
/// the lattice cell, taking corridor values from the side of the crack the point is on.
pub fn reconstruct(
    problem: &Problem,
    layout: &SnapshotLayout,
    values: &[f64],
    mu: &[f64],
    x: [f64; 2],
    side_hint: f64,
) -> Result<[f64; 2]> {
    if values.len() != layout.dim() {
        return Err(Error::Shape(format!(
            "mapped vector has length {}, layout expects {}",
            values.len(),
            layout.dim()
        )));
    }
    let side = match problem.crack_at(mu) {
        Some(c) => {
            let ls = compute_level_sets(&c, x)?;
            if ls.phi.abs() < crate::fom::ON_CRACK_TOL {
                side_hint.signum()
            } else {
                heaviside(&ls)
            }
        }
        None => 1.0,
    };
    let xr = layout.backward(problem, mu, x);
    let xi = problem.geometry.inverse_map(xr)?;
    let cell = |g: &[f64], t: f64| {
        let k = g.partition_point(|&v| v <= t).clamp(1, g.len() - 1) - 1;
        let w = (t - g[k]) / (g[k + 1] - g[k]);
        (k, w)
    };
    let (i, wx) = cell(&layout.lattice.params[0], xi[0]);
    let (j, wy) = cell(&layout.lattice.params[1], xi[1]);
    let mut u = [0.0; 2];
    for (di, dj, w) in [
        (0, 0, (1.0 - wx) * (1.0 - wy)),
        (1, 0, wx * (1.0 - wy)),
        (0, 1, (1.0 - wx) * wy),
        (1, 1, wx * wy),
    ] {
        let node = layout.lattice.index(i + di, j + dj);
        for d in 0..2 {
            u[d] += w * values[layout.slot(node, d, side)];
        }
    }
    Ok(u)
}
