//! Selection of enriched basis functions and the enriched DOF numbering.

use serde::{Deserialize, Serialize};

use super::crack::CrackSpec;
use super::quadrature::{
    box_rule, clip_segment, fan, inside_closed, split_convex, strictly_inside, triangle_rule,
};
use crate::error::Result;
use crate::spline::{GeometryMap, TensorSpace};

/// Tolerance in parametric units for crack/box incidence tests.
pub(crate) const PARAM_TOL: f64 = 1e-12;

/// Jump enrichment is dropped for functions whose support lies almost entirely on
/// one side of the crack: below this share of `integral B` on the minor side the
/// enriched function is numerically indistinguishable from the standard one.
pub const MIN_SIDE_FRACTION: f64 = 1e-4;

const NONE: u32 = u32::MAX;

/// Crack segment expressed in parametric coordinates, exact for affine geometry maps.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCrack {
    pub a: [f64; 2],
    pub b: [f64; 2],
    /// Parametric tip locations with the tip index in `CrackSpec::tips` order.
    pub tips: Vec<[f64; 2]>,
}

impl ParamCrack {
    pub fn new(crack: &CrackSpec, geometry: &GeometryMap) -> Result<Self> {
        let (a, b) = crack.segment();
        let a = geometry.inverse_map(a)?;
        let b = geometry.inverse_map(b)?;
        let tips = match crack {
            CrackSpec::Edge { .. } => vec![b],
            CrackSpec::Center { .. } => vec![a, b],
        };
        Ok(Self { a, b, tips })
    }

    /// Portion of the crack strictly crossing the open box, as a parameter interval.
    pub fn chord_in(&self, lo: [f64; 2], hi: [f64; 2]) -> Option<(f64, f64)> {
        let (t0, t1) = clip_segment(self.a, self.b, lo, hi)?;
        let len = (self.b[0] - self.a[0]).hypot(self.b[1] - self.a[1]);
        if (t1 - t0) * len <= PARAM_TOL {
            return None;
        }
        let mid = self.point(0.5 * (t0 + t1));
        strictly_inside(mid, lo, hi, PARAM_TOL).then_some((t0, t1))
    }

    pub fn point(&self, t: f64) -> [f64; 2] {
        [
            self.a[0] + t * (self.b[0] - self.a[0]),
            self.a[1] + t * (self.b[1] - self.a[1]),
        ]
    }

    /// Tip indices located in the closed box.
    pub fn tips_in(&self, lo: [f64; 2], hi: [f64; 2]) -> Vec<usize> {
        self.tips
            .iter()
            .enumerate()
            .filter(|(_, t)| inside_closed(**t, lo, hi, PARAM_TOL))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Enriched solution space: standard, Heaviside and tip function sets with DOF numbering.
///
/// DOFs are numbered as the standard block `2 i + d`, then the Heaviside block,
/// then the tip block with four branch functions per enriched function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnrichedSpace {
    n_basis: usize,
    heaviside: Vec<usize>,
    /// (function index, tip index)
    tip: Vec<(usize, usize)>,
    h_pos: Vec<u32>,
    t_pos: Vec<u32>,
}

impl EnrichedSpace {
    pub fn standard(n_basis: usize) -> Self {
        Self::from_sets(n_basis, Vec::new(), Vec::new())
    }

    pub fn from_sets(n_basis: usize, heaviside: Vec<usize>, tip: Vec<(usize, usize)>) -> Self {
        let mut h_pos = vec![NONE; n_basis];
        let mut t_pos = vec![NONE; n_basis];
        for (k, &f) in heaviside.iter().enumerate() {
            h_pos[f] = k as u32;
        }
        for (k, &(f, _)) in tip.iter().enumerate() {
            t_pos[f] = k as u32;
        }
        Self {
            n_basis,
            heaviside,
            tip,
            h_pos,
            t_pos,
        }
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn heaviside_set(&self) -> &[usize] {
        &self.heaviside
    }

    pub fn tip_set(&self) -> &[(usize, usize)] {
        &self.tip
    }

    pub fn n_dofs(&self) -> usize {
        2 * (self.n_basis + self.heaviside.len() + 4 * self.tip.len())
    }

    pub fn std_dof(&self, f: usize, d: usize) -> usize {
        2 * f + d
    }

    pub fn heaviside_index(&self, f: usize) -> Option<usize> {
        let k = self.h_pos[f];
        (k != NONE).then_some(k as usize)
    }

    /// Position in the tip set and the associated tip.
    pub fn tip_index(&self, f: usize) -> Option<(usize, usize)> {
        let k = self.t_pos[f];
        (k != NONE).then(|| (k as usize, self.tip[k as usize].1))
    }

    pub fn heaviside_dof(&self, k: usize, d: usize) -> usize {
        2 * self.n_basis + 2 * k + d
    }

    pub fn tip_dof(&self, k: usize, branch: usize, d: usize) -> usize {
        2 * self.n_basis + 2 * self.heaviside.len() + 8 * k + 2 * branch + d
    }

    pub fn is_enriched(&self, f: usize) -> bool {
        self.h_pos[f] != NONE || self.t_pos[f] != NONE
    }

    /// All DOFs attached to basis function `f`.
    pub fn dofs_of(&self, f: usize) -> Vec<usize> {
        let mut out = vec![self.std_dof(f, 0), self.std_dof(f, 1)];
        if let Some(k) = self.heaviside_index(f) {
            out.extend([self.heaviside_dof(k, 0), self.heaviside_dof(k, 1)]);
        }
        if let Some((k, _)) = self.tip_index(f) {
            for j in 0..4 {
                out.extend([self.tip_dof(k, j, 0), self.tip_dof(k, j, 1)]);
            }
        }
        out
    }
}

/// Topological enrichment: tip functions for supports containing a tip, jump
/// functions for supports crossed by the crack.
pub fn classify_and_enrich(
    space: &TensorSpace,
    geometry: &GeometryMap,
    crack: Option<&CrackSpec>,
) -> Result<EnrichedSpace> {
    let n = space.len();
    let Some(crack) = crack else {
        return Ok(EnrichedSpace::standard(n));
    };
    crack.validate(geometry)?;
    let pc = ParamCrack::new(crack, geometry)?;
    let mut heaviside = Vec::new();
    let mut tip = Vec::new();
    for f in 0..n {
        let (lo, hi) = space.support(f);
        if let Some(&t) = pc.tips_in(lo, hi).first() {
            tip.push((f, t));
        } else if pc.chord_in(lo, hi).is_some()
            && minor_side_fraction(space, &pc, f) >= MIN_SIDE_FRACTION
        {
            heaviside.push(f);
        }
    }
    Ok(EnrichedSpace::from_sets(n, heaviside, tip))
}

/// Share of the integral of basis function `f` on the smaller side of the crack line.
fn minor_side_fraction(space: &TensorSpace, pc: &ParamCrack, f: usize) -> f64 {
    let (lo, hi) = space.support(f);
    let n = [pc.a[1] - pc.b[1], pc.b[0] - pc.a[0]];
    let side = |q: [f64; 2]| (q[0] - pc.a[0]) * n[0] + (q[1] - pc.a[1]) * n[1];
    let order = space.degree() + 1;
    let value = |spans: [usize; 2], xi: [f64; 2]| {
        let ev = space.eval_on_span(spans, xi);
        ev.functions
            .iter()
            .position(|&g| g == f)
            .map_or(0.0, |k| ev.values[k])
    };
    let mut sums = [0.0; 2];
    for e in space.elements() {
        if (0..2).any(|d| e.lo[d] < lo[d] - PARAM_TOL || e.hi[d] > hi[d] + PARAM_TOL) {
            continue;
        }
        if pc.chord_in(e.lo, e.hi).is_some() {
            let square = [e.lo, [e.hi[0], e.lo[1]], e.hi, [e.lo[0], e.hi[1]]];
            let (pos, neg) = split_convex(&square, pc.a, n);
            for (k, piece) in [pos, neg].into_iter().enumerate() {
                if piece.len() < 3 {
                    continue;
                }
                for tri in fan(piece[0], &piece, 0.0) {
                    for q in triangle_rule(tri, order) {
                        sums[k] += q.weight * value(e.spans, q.xi);
                    }
                }
            }
        } else {
            let c = [0.5 * (e.lo[0] + e.hi[0]), 0.5 * (e.lo[1] + e.hi[1])];
            let k = usize::from(side(c) < 0.0);
            for q in box_rule(e.lo, e.hi, order) {
                sums[k] += q.weight * value(e.spans, q.xi);
            }
        }
    }
    let total = sums[0] + sums[1];
    if total > 0.0 {
        sums[0].min(sums[1]) / total
    } else {
        0.0
    }
}
