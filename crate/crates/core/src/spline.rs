//! Univariate and tensor-product B-spline bases and the spline geometry map.
//!
//! Knot vectors are open (clamped) on `[0, 1]`. Basis evaluation follows the
//! usual triangular Cox-de Boor scheme restricted to the `p + 1` functions
//! that are active on a knot span; derivatives use the knot-difference
//! formula rather than differencing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest polynomial degree supported by the fixed-size evaluation buffers.
pub const MAX_DEGREE: usize = 5;

const KNOT_TOL: f64 = 1e-14;

/// Values and derivatives (rows: order 0, 1, 2) of the active functions on a span.
pub type BasisDerivs = [[f64; MAX_DEGREE + 1]; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
}

impl KnotVector {
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::KnotVector(format!(
                "degree {degree} exceeds the supported maximum {MAX_DEGREE}"
            )));
        }
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::KnotVector(format!(
                "{} knots cannot hold an open vector of degree {degree}",
                knots.len()
            )));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::KnotVector("knots must be nondecreasing".into()));
        }
        if knots.iter().any(|k| !(0.0..=1.0).contains(k)) {
            return Err(Error::KnotVector("knots must lie in [0, 1]".into()));
        }
        let first = knots[0];
        let last = knots[knots.len() - 1];
        let lead = knots.iter().take_while(|&&k| k == first).count();
        let trail = knots.iter().rev().take_while(|&&k| k == last).count();
        if lead != degree + 1 || trail != degree + 1 || first != 0.0 || last != 1.0 {
            return Err(Error::KnotVector(format!(
                "end knots must be 0 and 1 repeated exactly {} times",
                degree + 1
            )));
        }
        Ok(Self { knots, degree })
    }

    /// Open knot vector with `spans` equal interior spans.
    pub fn open_uniform(degree: usize, spans: usize) -> Result<Self> {
        if spans == 0 {
            return Err(Error::KnotVector("at least one span is required".into()));
        }
        let mut knots = vec![0.0; degree + 1];
        knots.extend((1..spans).map(|i| i as f64 / spans as f64));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Self::new(knots, degree)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of basis functions.
    pub fn len(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Distinct knot values in increasing order.
    pub fn unique_knots(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &k in &self.knots {
            if out.last().is_none_or(|&l| k - l > KNOT_TOL) {
                out.push(k);
            }
        }
        out
    }

    /// Indices `i` of the nonempty spans `[knots[i], knots[i+1])`.
    pub fn nonempty_spans(&self) -> Vec<usize> {
        (self.degree..self.len())
            .filter(|&i| self.knots[i + 1] - self.knots[i] > KNOT_TOL)
            .collect()
    }

    /// Greville abscissae, one per basis function.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        (0..self.len())
            .map(|i| {
                if p == 0 {
                    0.5 * (self.knots[i] + self.knots[i + 1])
                } else {
                    self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64
                }
            })
            .collect()
    }

    /// Parametric support `[knots[i], knots[i+p+1]]` of basis function `i`.
    pub fn support(&self, i: usize) -> (f64, f64) {
        (self.knots[i], self.knots[i + self.degree + 1])
    }

    pub fn find_span(&self, xi: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&xi) || xi.is_nan() {
            return Err(Error::Domain(xi));
        }
        let n = self.len();
        let p = self.degree;
        if xi >= self.knots[n] {
            // closed evaluation: xi = 1 belongs to the last nonempty span
            let mut s = n - 1;
            while s > p && self.knots[s + 1] - self.knots[s] <= KNOT_TOL {
                s -= 1;
            }
            return Ok(s);
        }
        let (mut lo, mut hi) = (p, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if xi < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(lo)
    }

    /// Span index and the `p + 1` basis values active there.
    pub fn eval_basis(&self, xi: f64) -> Result<(usize, Vec<f64>)> {
        let span = self.find_span(xi)?;
        let mut out = [[0.0; MAX_DEGREE + 1]; 3];
        self.derivs_on_span(span, xi, 0, &mut out);
        Ok((span, out[0][..=self.degree].to_vec()))
    }

    /// Span index plus values and derivatives up to `order` (at most 2).
    pub fn eval_basis_derivs(&self, xi: f64, order: usize) -> Result<(usize, BasisDerivs)> {
        if order > 2 || order > self.degree {
            return Err(Error::UnsupportedDerivative {
                order,
                degree: self.degree,
            });
        }
        let span = self.find_span(xi)?;
        let mut out = [[0.0; MAX_DEGREE + 1]; 3];
        self.derivs_on_span(span, xi, order, &mut out);
        Ok((span, out))
    }

    /// Non-allocating evaluation on a known span. Rows above `order` are left as zero.
    pub fn derivs_on_span(&self, span: usize, xi: f64, order: usize, out: &mut BasisDerivs) {
        let p = self.degree;
        let u = &self.knots;
        let mut ndu = [[0.0; MAX_DEGREE + 1]; MAX_DEGREE + 1];
        let mut left = [0.0; MAX_DEGREE + 1];
        let mut right = [0.0; MAX_DEGREE + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = xi - u[span + 1 - j];
            right[j] = u[span + j] - xi;
            let mut saved = 0.0;
            for r in 0..j {
                // lower triangle holds knot differences
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        for row in out.iter_mut() {
            row.fill(0.0);
        }
        for j in 0..=p {
            out[0][j] = ndu[j][p];
        }
        let order = order.min(p).min(2);
        if order == 0 {
            return;
        }
        let mut a = [[0.0; MAX_DEGREE + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0].fill(0.0);
            a[1].fill(0.0);
            a[0][0] = 1.0;
            for k in 1..=order {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize {
                    k - 1
                } else {
                    p - r
                };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r as isize <= pk as isize {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                out[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=order {
            for v in out[k].iter_mut().take(p + 1) {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
    }
}

/// Tensor product of two univariate bases with a common degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorSpace {
    dirs: [KnotVector; 2],
}

/// A nonempty tensor-product knot span (an element) in parametric coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Element {
    pub spans: [usize; 2],
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl TensorSpace {
    pub fn new(u: KnotVector, v: KnotVector) -> Result<Self> {
        if u.degree() != v.degree() {
            return Err(Error::KnotVector(
                "both directions must share the same degree".into(),
            ));
        }
        Ok(Self { dirs: [u, v] })
    }

    pub fn dir(&self, d: usize) -> &KnotVector {
        &self.dirs[d]
    }

    pub fn degree(&self) -> usize {
        self.dirs[0].degree()
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.dirs[0].len(), self.dirs[1].len()]
    }

    /// Total number of tensor-product basis functions.
    pub fn len(&self) -> usize {
        self.dirs[0].len() * self.dirs[1].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major flat index of the multi-index `(i, j)`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.dirs[0].len() + i
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        let n1 = self.dirs[0].len();
        [idx % n1, idx / n1]
    }

    /// Parametric support box of a basis function.
    pub fn support(&self, idx: usize) -> ([f64; 2], [f64; 2]) {
        let [i, j] = self.multi_index(idx);
        let (a0, b0) = self.dirs[0].support(i);
        let (a1, b1) = self.dirs[1].support(j);
        ([a0, a1], [b0, b1])
    }

    pub fn elements(&self) -> Vec<Element> {
        let su = self.dirs[0].nonempty_spans();
        let sv = self.dirs[1].nonempty_spans();
        let ku = self.dirs[0].knots();
        let kv = self.dirs[1].knots();
        let mut out = Vec::with_capacity(su.len() * sv.len());
        for &j in &sv {
            for &i in &su {
                out.push(Element {
                    spans: [i, j],
                    lo: [ku[i], kv[j]],
                    hi: [ku[i + 1], kv[j + 1]],
                });
            }
        }
        out
    }

    /// Flat indices of the functions active on an element, ordered with `i` fastest.
    pub fn active_functions(&self, spans: [usize; 2]) -> Vec<usize> {
        let p = self.degree();
        let mut out = Vec::with_capacity((p + 1) * (p + 1));
        for b in 0..=p {
            for a in 0..=p {
                out.push(self.index(spans[0] - p + a, spans[1] - p + b));
            }
        }
        out
    }

    /// Values and parametric gradients of all active functions at `xi`.
    pub fn eval(&self, xi: [f64; 2]) -> Result<TensorEval> {
        let s0 = self.dirs[0].find_span(xi[0])?;
        let s1 = self.dirs[1].find_span(xi[1])?;
        Ok(self.eval_on_span([s0, s1], xi))
    }

    pub fn eval_on_span(&self, spans: [usize; 2], xi: [f64; 2]) -> TensorEval {
        let p = self.degree();
        let order = if p >= 1 { 1 } else { 0 };
        let mut bu = [[0.0; MAX_DEGREE + 1]; 3];
        let mut bv = [[0.0; MAX_DEGREE + 1]; 3];
        self.dirs[0].derivs_on_span(spans[0], xi[0], order, &mut bu);
        self.dirs[1].derivs_on_span(spans[1], xi[1], order, &mut bv);
        let m = (p + 1) * (p + 1);
        let mut values = Vec::with_capacity(m);
        let mut grads = Vec::with_capacity(m);
        for b in 0..=p {
            for a in 0..=p {
                values.push(bu[0][a] * bv[0][b]);
                grads.push([bu[1][a] * bv[0][b], bu[0][a] * bv[1][b]]);
            }
        }
        TensorEval {
            spans,
            functions: self.active_functions(spans),
            values,
            grads,
        }
    }
}

/// Active tensor functions at a point: flat indices, values, parametric gradients.
#[derive(Clone, Debug)]
pub struct TensorEval {
    pub spans: [usize; 2],
    pub functions: Vec<usize>,
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 2]>,
}

/// Image of a parametric point together with the Jacobian of the map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MappedPoint {
    pub x: [f64; 2],
    /// `jac[r][c] = dx_r / dxi_c`
    pub jac: [[f64; 2]; 2],
    pub det: f64,
}

impl MappedPoint {
    /// Inverse Jacobian `dxi_r / dx_c`.
    pub fn inv_jac(&self) -> [[f64; 2]; 2] {
        let j = &self.jac;
        let d = self.det;
        [[j[1][1] / d, -j[0][1] / d], [-j[1][0] / d, j[0][0] / d]]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryMap {
    space: TensorSpace,
    control_points: Vec<[f64; 2]>,
}

impl GeometryMap {
    pub fn new(space: TensorSpace, control_points: Vec<[f64; 2]>) -> Result<Self> {
        if control_points.len() != space.len() {
            return Err(Error::Geometry(format!(
                "{} control points for {} basis functions",
                control_points.len(),
                space.len()
            )));
        }
        Ok(Self {
            space,
            control_points,
        })
    }

    /// Axis-aligned rectangle `[x0, x0+width] x [y0, y0+height]` with Greville control points.
    pub fn rectangle(
        space: TensorSpace,
        origin: [f64; 2],
        width: f64,
        height: f64,
    ) -> Result<Self> {
        if width <= 0.0 || height <= 0.0 {
            return Err(Error::Geometry("rectangle sides must be positive".into()));
        }
        let gu = space.dir(0).greville();
        let gv = space.dir(1).greville();
        let mut cps = Vec::with_capacity(space.len());
        for &v in &gv {
            for &u in &gu {
                cps.push([origin[0] + width * u, origin[1] + height * v]);
            }
        }
        Self::new(space, cps)
    }

    pub fn space(&self) -> &TensorSpace {
        &self.space
    }

    pub fn control_points(&self) -> &[[f64; 2]] {
        &self.control_points
    }

    pub fn map_point(&self, xi: [f64; 2]) -> Result<MappedPoint> {
        let ev = self.space.eval(xi)?;
        self.map_with(&ev)
    }

    pub fn map_with(&self, ev: &TensorEval) -> Result<MappedPoint> {
        let mut x = [0.0; 2];
        let mut jac = [[0.0; 2]; 2];
        for ((&f, &b), g) in ev.functions.iter().zip(&ev.values).zip(&ev.grads) {
            let cp = self.control_points[f];
            for r in 0..2 {
                x[r] += b * cp[r];
                jac[r][0] += g[0] * cp[r];
                jac[r][1] += g[1] * cp[r];
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det <= 0.0 || !det.is_finite() {
            return Err(Error::Geometry(format!(
                "nonpositive Jacobian determinant {det:e} at xi = {:?}",
                ev.spans
            )));
        }
        Ok(MappedPoint { x, jac, det })
    }

    /// Axis-aligned bounding box of the control net, which contains the whole patch.
    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for cp in &self.control_points {
            for d in 0..2 {
                lo[d] = lo[d].min(cp[d]);
                hi[d] = hi[d].max(cp[d]);
            }
        }
        (lo, hi)
    }

    /// Parametric preimage of a physical point by damped Newton iteration.
    pub fn inverse_map(&self, x: [f64; 2]) -> Result<[f64; 2]> {
        let (lo, hi) = self.bounding_box();
        let scale = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let tol = 1e-13 * scale;
        let mut xi = [
            ((x[0] - lo[0]) / (hi[0] - lo[0])).clamp(0.0, 1.0),
            ((x[1] - lo[1]) / (hi[1] - lo[1])).clamp(0.0, 1.0),
        ];
        for _ in 0..50 {
            let mp = self.map_point(xi)?;
            let r = [x[0] - mp.x[0], x[1] - mp.x[1]];
            if r[0].abs() <= tol && r[1].abs() <= tol {
                return Ok(xi);
            }
            let ij = mp.inv_jac();
            let step = [
                ij[0][0] * r[0] + ij[0][1] * r[1],
                ij[1][0] * r[0] + ij[1][1] * r[1],
            ];
            let next = [
                (xi[0] + step[0]).clamp(0.0, 1.0),
                (xi[1] + step[1]).clamp(0.0, 1.0),
            ];
            if next == xi {
                break;
            }
            xi = next;
        }
        let mp = self.map_point(xi)?;
        if (x[0] - mp.x[0]).abs() <= 1e-10 * scale && (x[1] - mp.x[1]).abs() <= 1e-10 * scale {
            Ok(xi)
        } else {
            Err(Error::OutsideDomain(x[0], x[1]))
        }
    }

    /// Knot images plus span midpoints, ordered with the first direction fastest.
    pub fn knot_image_lattice(&self) -> Lattice {
        let grid = |kv: &KnotVector| {
            let uk = kv.unique_knots();
            let mut g = Vec::with_capacity(2 * uk.len());
            for w in uk.windows(2) {
                g.push(w[0]);
                g.push(0.5 * (w[0] + w[1]));
            }
            g.push(*uk.last().expect("open knot vector has knots"));
            g
        };
        let params = [grid(self.space.dir(0)), grid(self.space.dir(1))];
        let mut points = Vec::with_capacity(params[0].len() * params[1].len());
        for &v in &params[1] {
            for &u in &params[0] {
                let mp = self
                    .map_point([u, v])
                    .expect("valid geometry maps every parametric point");
                points.push(mp.x);
            }
        }
        Lattice { params, points }
    }
}

/// Fixed sampling set used to express every solution on a common layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    /// Parametric grid coordinates per direction.
    pub params: [Vec<f64>; 2],
    /// Physical points, first direction fastest.
    pub points: Vec<[f64; 2]>,
}

impl Lattice {
    pub fn shape(&self) -> [usize; 2] {
        [self.params[0].len(), self.params[1].len()]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.params[0].len() + i
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Direct recursive Cox-de Boor definition, independent of the triangular scheme.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64, n: usize) -> f64 {
        if p == 0 {
            let last = knots[i + 1] == 1.0 && x == 1.0 && i + 1 == n;
            return if (knots[i] <= x && x < knots[i + 1]) || last {
                1.0
            } else {
                0.0
            };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x, n);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x, n);
        }
        v
    }

    #[test]
    fn span_lookup_at_boundaries_and_interior() {
        let kv = KnotVector::open_uniform(3, 4).unwrap();
        assert_eq!(kv.find_span(0.0).unwrap(), 3);
        assert_eq!(kv.find_span(1.0).unwrap(), 6);
        let s = kv.find_span(0.3).unwrap();
        let scan = (0..kv.knots().len() - 1)
            .find(|&i| kv.knots()[i] <= 0.3 && 0.3 < kv.knots()[i + 1])
            .unwrap();
        assert_eq!(s, scan);
        assert!(matches!(kv.find_span(1.2), Err(Error::Domain(_))));
        assert!(matches!(kv.find_span(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn rejects_malformed_knots() {
        assert!(KnotVector::new(vec![0.0, 0.0, 1.0, 1.0, 1.0], 2).is_err());
        assert!(KnotVector::new(vec![0.0, 0.0, 0.6, 0.4, 1.0, 1.0], 1).is_err());
        assert!(KnotVector::new(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2).is_ok());
    }

    #[test]
    fn linear_basis_is_interpolatory_at_knots() {
        let kv = KnotVector::open_uniform(1, 4).unwrap();
        let (span, vals) = kv.eval_basis(0.5).unwrap();
        assert_eq!(span, 3);
        assert_abs_diff_eq!(vals[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(vals[1], 0.0, epsilon = 1e-15);
        let (_, d) = kv.eval_basis_derivs(0.1, 1).unwrap();
        assert_abs_diff_eq!(d[1][0].abs(), 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d[1][1].abs(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn quadratic_basis_matches_recursive_definition() {
        let knots = vec![0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0];
        let kv = KnotVector::new(knots.clone(), 2).unwrap();
        let (span, vals) = kv.eval_basis(0.25).unwrap();
        for (a, v) in vals.iter().enumerate() {
            let oracle = cox_de_boor(&knots, span - 2 + a, 2, 0.25, kv.len());
            assert_abs_diff_eq!(*v, oracle, epsilon = 1e-15);
        }
        // frozen from the recursive oracle: (0.25, 0.625, 0.125)
        assert_abs_diff_eq!(vals[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(vals[1], 0.625, epsilon = 1e-15);
        assert_abs_diff_eq!(vals[2], 0.125, epsilon = 1e-15);
    }

    #[test]
    fn derivative_order_above_degree_is_rejected() {
        let kv = KnotVector::open_uniform(1, 3).unwrap();
        assert!(matches!(
            kv.eval_basis_derivs(0.2, 2),
            Err(Error::UnsupportedDerivative { .. })
        ));
    }

    #[test]
    fn cubic_derivatives_match_finite_differences() {
        let kv = KnotVector::new(
            vec![
                0.0, 0.0, 0.0, 0.0, 0.13, 0.4, 0.41, 0.77, 1.0, 1.0, 1.0, 1.0,
            ],
            3,
        )
        .unwrap();
        let h = 1e-6;
        for &x in &[0.05, 0.2, 0.405, 0.6, 0.9] {
            let (span, d) = kv.eval_basis_derivs(x, 2).unwrap();
            let mut plus = [[0.0; MAX_DEGREE + 1]; 3];
            let mut minus = [[0.0; MAX_DEGREE + 1]; 3];
            kv.derivs_on_span(span, x + h, 1, &mut plus);
            kv.derivs_on_span(span, x - h, 1, &mut minus);
            for a in 0..=3 {
                let fd = (plus[0][a] - minus[0][a]) / (2.0 * h);
                assert_abs_diff_eq!(d[1][a], fd, epsilon = 1e-6);
                let fd2 = (plus[1][a] - minus[1][a]) / (2.0 * h);
                assert_abs_diff_eq!(d[2][a], fd2, epsilon = 1e-4);
            }
        }
    }

    #[test]
    fn greville_rectangle_is_affine() {
        let space = TensorSpace::new(
            KnotVector::open_uniform(3, 4).unwrap(),
            KnotVector::open_uniform(3, 5).unwrap(),
        )
        .unwrap();
        let g = GeometryMap::rectangle(space, [0.0, 0.0], 1.0, 2.0).unwrap();
        for &xi in &[[0.0, 0.0], [0.3, 0.8], [1.0, 1.0], [0.55, 0.01]] {
            let mp = g.map_point(xi).unwrap();
            assert_abs_diff_eq!(mp.x[0], xi[0], epsilon = 1e-14);
            assert_abs_diff_eq!(mp.x[1], 2.0 * xi[1], epsilon = 1e-14);
            assert_abs_diff_eq!(mp.det, 2.0, epsilon = 1e-12);
        }
        assert_eq!(g.map_point([0.0, 0.0]).unwrap().x, g.control_points()[0]);
        let back = g.inverse_map([0.37, 1.21]).unwrap();
        assert_abs_diff_eq!(back[0], 0.37, epsilon = 1e-12);
        assert_abs_diff_eq!(back[1], 0.605, epsilon = 1e-12);
        assert!(g.inverse_map([1.5, 0.2]).is_err());
    }

    #[test]
    fn random_quadratic_net_matches_full_sum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let kv = KnotVector::new(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2).unwrap();
        let space = TensorSpace::new(kv.clone(), kv.clone()).unwrap();
        let mut cps = Vec::new();
        for j in 0..3 {
            for i in 0..3 {
                cps.push([
                    i as f64 + rng.gen_range(-0.2..0.2),
                    j as f64 + rng.gen_range(-0.2..0.2),
                ]);
            }
        }
        let g = GeometryMap::new(space, cps.clone()).unwrap();
        let xi = [0.4, 0.7];
        let mut oracle = [0.0; 2];
        for j in 0..3 {
            for i in 0..3 {
                let b = cox_de_boor(kv.knots(), i, 2, xi[0], 3)
                    * cox_de_boor(kv.knots(), j, 2, xi[1], 3);
                oracle[0] += b * cps[j * 3 + i][0];
                oracle[1] += b * cps[j * 3 + i][1];
            }
        }
        let x = g.map_point(xi).unwrap().x;
        assert_abs_diff_eq!(x[0], oracle[0], epsilon = 1e-13);
        assert_abs_diff_eq!(x[1], oracle[1], epsilon = 1e-13);
    }

    #[test]
    fn folded_geometry_is_rejected() {
        let kv = KnotVector::open_uniform(1, 1).unwrap();
        let space = TensorSpace::new(kv.clone(), kv).unwrap();
        let g = GeometryMap::new(
            space,
            vec![[0.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [-1.0, 1.0]],
        )
        .unwrap();
        assert!(matches!(g.map_point([0.5, 0.5]), Err(Error::Geometry(_))));
    }

    #[test]
    fn lattice_counts_and_bounds() {
        let space = TensorSpace::new(
            KnotVector::open_uniform(3, 3).unwrap(),
            KnotVector::open_uniform(3, 3).unwrap(),
        )
        .unwrap();
        let g = GeometryMap::rectangle(space, [0.0, 0.0], 1.0, 2.0).unwrap();
        let lat = g.knot_image_lattice();
        assert_eq!(lat.shape(), [7, 7]);
        assert_eq!(lat.len(), 49);
        for p in &lat.points {
            assert!((-1e-14..=1.0 + 1e-14).contains(&p[0]));
            assert!((-1e-14..=2.0 + 1e-14).contains(&p[1]));
        }
        assert_eq!(lat.points[lat.index(6, 0)], [1.0, 0.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn knot_vector() -> impl Strategy<Value = KnotVector> {
            (1usize..=3, prop::collection::vec(0.01f64..0.99, 0..6)).prop_map(|(p, mut inner)| {
                inner.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut knots = vec![0.0; p + 1];
                knots.extend(inner);
                knots.extend(std::iter::repeat_n(1.0, p + 1));
                KnotVector::new(knots, p).unwrap()
            })
        }

        proptest! {
            #[test]
            fn partition_of_unity(kv in knot_vector(), xs in prop::collection::vec(0.0f64..=1.0, 50)) {
                for x in xs {
                    let (_, d) = kv.eval_basis_derivs(x, 1).unwrap();
                    let s: f64 = d[0][..=kv.degree()].iter().sum();
                    let ds: f64 = d[1][..=kv.degree()].iter().sum();
                    prop_assert!((s - 1.0).abs() < 1e-12);
                    prop_assert!(ds.abs() < 1e-8 * (1.0 + d[1].iter().map(|v| v.abs()).sum::<f64>()));
                    prop_assert!(d[0].iter().all(|&v| v >= -1e-15));
                }
            }

            #[test]
            fn local_support(kv in knot_vector(), x in 0.0f64..=1.0) {
                let (span, vals) = kv.eval_basis(x).unwrap();
                for (a, v) in vals.iter().enumerate() {
                    let (lo, hi) = kv.support(span - kv.degree() + a);
                    if *v > 0.0 {
                        prop_assert!(lo <= x && x <= hi);
                    }
                }
            }

            #[test]
            fn derivative_consistency(kv in knot_vector(), x in 0.02f64..0.98) {
                let h = 1e-6;
                let (span, d) = kv.eval_basis_derivs(x, 1).unwrap();
                let mut plus = [[0.0; MAX_DEGREE + 1]; 3];
                let mut minus = [[0.0; MAX_DEGREE + 1]; 3];
                kv.derivs_on_span(span, x + h, 0, &mut plus);
                kv.derivs_on_span(span, x - h, 0, &mut minus);
                // spans are polynomial pieces, so differencing on the same span is exact up to rounding
                for a in 0..=kv.degree() {
                    let fd = (plus[0][a] - minus[0][a]) / (2.0 * h);
                    prop_assert!((d[1][a] - fd).abs() < 1e-6 * (1.0 + d[1][a].abs()));
                }
            }
        }
    }
}
