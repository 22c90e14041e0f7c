//! Quadrature rules and the sub-triangulation of elements cut by a crack.

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Newton iteration on P_n from the Chebyshev-like initial guess
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * wi;
        w[n - 1 - i] = 0.5 * wi;
    }
    (x, w)
}

/// Quadrature point in the parametric plane: location and weight (parametric measure).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadPoint {
    pub xi: [f64; 2],
    pub weight: f64,
}

/// Tensor Gauss rule on a parametric box.
pub fn box_rule(lo: [f64; 2], hi: [f64; 2], n: usize) -> Vec<QuadPoint> {
    let (x, w) = gauss_legendre(n);
    let (h0, h1) = (hi[0] - lo[0], hi[1] - lo[1]);
    let mut out = Vec::with_capacity(n * n);
    for b in 0..n {
        for a in 0..n {
            out.push(QuadPoint {
                xi: [lo[0] + h0 * x[a], lo[1] + h1 * x[b]],
                weight: w[a] * w[b] * h0 * h1,
            });
        }
    }
    out
}

/// Collapsed (Duffy) Gauss rule on a triangle whose first vertex is the collapsed one.
///
/// The radial Jacobian factor cancels `1/r` singularities located at `v[0]`.
pub fn triangle_rule(v: [[f64; 2]; 3], n: usize) -> Vec<QuadPoint> {
    let (x, w) = gauss_legendre(n);
    let e1 = [v[1][0] - v[0][0], v[1][1] - v[0][1]];
    let e2 = [v[2][0] - v[0][0], v[2][1] - v[0][1]];
    let area2 = (e1[0] * e2[1] - e1[1] * e2[0]).abs();
    let mut out = Vec::with_capacity(n * n);
    for (a, &u) in x.iter().enumerate() {
        for (b, &s) in x.iter().enumerate() {
            let d = [(1.0 - s) * e1[0] + s * e2[0], (1.0 - s) * e1[1] + s * e2[1]];
            out.push(QuadPoint {
                xi: [v[0][0] + u * d[0], v[0][1] + u * d[1]],
                weight: w[a] * w[b] * u * area2,
            });
        }
    }
    out
}

pub fn triangle_area(v: &[[f64; 2]; 3]) -> f64 {
    0.5 * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[1][1] - v[0][1]) * (v[2][0] - v[0][0]))
}

/// Fan triangulation of a polygon from `apex`, skipping degenerate triangles.
pub fn fan(apex: [f64; 2], polygon: &[[f64; 2]], min_area: f64) -> Vec<[[f64; 2]; 3]> {
    let n = polygon.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = [apex, polygon[i], polygon[(i + 1) % n]];
        if triangle_area(&t).abs() > min_area {
            out.push(t);
        }
    }
    out
}

/// Splits a convex polygon by the line through `p` with normal `n`.
/// Returns the nonnegative side first.
pub fn split_convex(
    polygon: &[[f64; 2]],
    p: [f64; 2],
    n: [f64; 2],
) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let side = |q: [f64; 2]| (q[0] - p[0]) * n[0] + (q[1] - p[1]) * n[1];
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let m = polygon.len();
    for i in 0..m {
        let a = polygon[i];
        let b = polygon[(i + 1) % m];
        let (sa, sb) = (side(a), side(b));
        if sa >= 0.0 {
            pos.push(a);
        }
        if sa <= 0.0 {
            neg.push(a);
        }
        if (sa > 0.0 && sb < 0.0) || (sa < 0.0 && sb > 0.0) {
            let t = sa / (sa - sb);
            let q = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            pos.push(q);
            neg.push(q);
        }
    }
    (pos, neg)
}

/// Parameter interval of the segment `a + t (b - a)`, `t in [0, 1]`, inside a closed box.
pub fn clip_segment(a: [f64; 2], b: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> Option<(f64, f64)> {
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for d in 0..2 {
        let delta = b[d] - a[d];
        if delta.abs() < 1e-300 {
            if a[d] < lo[d] || a[d] > hi[d] {
                return None;
            }
            continue;
        }
        let mut ta = (lo[d] - a[d]) / delta;
        let mut tb = (hi[d] - a[d]) / delta;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

pub fn strictly_inside(q: [f64; 2], lo: [f64; 2], hi: [f64; 2], tol: f64) -> bool {
    (0..2).all(|d| q[d] > lo[d] + tol && q[d] < hi[d] - tol)
}

pub fn inside_closed(q: [f64; 2], lo: [f64; 2], hi: [f64; 2], tol: f64) -> bool {
    (0..2).all(|d| q[d] >= lo[d] - tol && q[d] <= hi[d] + tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gauss_rules_integrate_polynomials_exactly() {
        for n in 1..=10 {
            let (x, w) = gauss_legendre(n);
            for k in 0..2 * n {
                let q: f64 = x
                    .iter()
                    .zip(&w)
                    .map(|(xi, wi)| wi * xi.powi(k as i32))
                    .sum();
                assert_abs_diff_eq!(q, 1.0 / (k as f64 + 1.0), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn triangle_rule_integrates_monomials() {
        let tri = [[0.2, 0.1], [1.0, 0.3], [0.4, 0.9]];
        let rule = triangle_rule(tri, 4);
        let area: f64 = rule.iter().map(|q| q.weight).sum();
        assert_abs_diff_eq!(area, triangle_area(&tri).abs(), epsilon = 1e-14);
        // integral of x over a triangle = area * centroid_x
        let ix: f64 = rule.iter().map(|q| q.weight * q.xi[0]).sum();
        assert_abs_diff_eq!(ix, area * (0.2 + 1.0 + 0.4) / 3.0, epsilon = 1e-14);
        // integral of 1/r about the collapsed vertex is finite and resolved
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let f = |n| -> f64 {
            triangle_rule(tri, n)
                .iter()
                .map(|q| q.weight / q.xi[0].hypot(q.xi[1]))
                .sum()
        };
        // exact value: sqrt(2) * asinh(1)
        let exact = 2f64.sqrt() * 1f64.asinh();
        assert_abs_diff_eq!(f(8), exact, epsilon = 1e-6);
    }

    #[test]
    fn split_square_by_horizontal_line() {
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let (pos, neg) = split_convex(&sq, [0.0, 0.25], [0.0, 1.0]);
        let area = |p: &[[f64; 2]]| {
            let tris = fan(p[0], p, 0.0);
            tris.iter().map(|t| triangle_area(t).abs()).sum::<f64>()
        };
        assert_abs_diff_eq!(area(&pos), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(area(&neg), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn clip_segment_cases() {
        let r = clip_segment([-1.0, 0.5], [2.0, 0.5], [0.0, 0.0], [1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(r.0, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.1, 2.0 / 3.0, epsilon = 1e-15);
        assert!(clip_segment([-1.0, 1.5], [2.0, 1.5], [0.0, 0.0], [1.0, 1.0]).is_none());
    }
}
