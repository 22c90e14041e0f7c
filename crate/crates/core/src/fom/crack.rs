//! Crack geometry, level sets and enrichment functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spline::GeometryMap;

/// Straight crack in the physical plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CrackSpec {
    /// Crack running from a point on the boundary to an interior tip.
    Edge { entry: [f64; 2], tip: [f64; 2] },
    /// Interior crack with two tips.
    Center {
        center: [f64; 2],
        half_length: f64,
        angle: f64,
    },
}

/// Signed normal (`phi`) and tangential (`psi`) distances of a point to the crack.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelSets {
    pub phi: f64,
    pub psi: f64,
}

impl LevelSets {
    pub fn on_crack(&self, tol: f64) -> bool {
        self.phi.abs() <= tol && self.psi <= 0.0
    }
}

/// A crack tip with its local frame: `dir` points in the propagation direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tip {
    pub point: [f64; 2],
    pub dir: [f64; 2],
}

impl Tip {
    /// Coordinates of `x` in the tip frame (along `dir`, along its left normal).
    pub fn local(&self, x: [f64; 2]) -> [f64; 2] {
        let d = [x[0] - self.point[0], x[1] - self.point[1]];
        let n = [-self.dir[1], self.dir[0]];
        [
            d[0] * self.dir[0] + d[1] * self.dir[1],
            d[0] * n[0] + d[1] * n[1],
        ]
    }

    /// Rotates a local-frame vector back to global coordinates.
    pub fn to_global(&self, v: [f64; 2]) -> [f64; 2] {
        let n = [-self.dir[1], self.dir[0]];
        [
            v[0] * self.dir[0] + v[1] * n[0],
            v[0] * self.dir[1] + v[1] * n[1],
        ]
    }
}

impl CrackSpec {
    /// Segment end points `(a, b)`; the crack runs from `a` to `b`.
    pub fn segment(&self) -> ([f64; 2], [f64; 2]) {
        match *self {
            CrackSpec::Edge { entry, tip } => (entry, tip),
            CrackSpec::Center {
                center,
                half_length,
                angle,
            } => {
                let (s, c) = angle.sin_cos();
                (
                    [center[0] - half_length * c, center[1] - half_length * s],
                    [center[0] + half_length * c, center[1] + half_length * s],
                )
            }
        }
    }

    pub fn length(&self) -> f64 {
        let (a, b) = self.segment();
        (b[0] - a[0]).hypot(b[1] - a[1])
    }

    /// Unit vector from `a` to `b`.
    pub fn direction(&self) -> Result<[f64; 2]> {
        let (a, b) = self.segment();
        let len = self.length();
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::Crack("crack has zero length".into()));
        }
        Ok([(b[0] - a[0]) / len, (b[1] - a[1]) / len])
    }

    pub fn tips(&self) -> Result<Vec<Tip>> {
        let t = self.direction()?;
        let (a, b) = self.segment();
        Ok(match self {
            CrackSpec::Edge { .. } => vec![Tip { point: b, dir: t }],
            CrackSpec::Center { .. } => vec![
                Tip {
                    point: a,
                    dir: [-t[0], -t[1]],
                },
                Tip { point: b, dir: t },
            ],
        })
    }

    /// Checks the crack against the domain: tips strictly inside, edge entry on the boundary.
    pub fn validate(&self, geometry: &GeometryMap) -> Result<()> {
        self.direction()?;
        const TOL: f64 = 1e-9;
        let interior = |x: [f64; 2], what: &str| -> Result<()> {
            let xi = geometry
                .inverse_map(x)
                .map_err(|_| Error::Crack(format!("{what} {x:?} lies outside the domain")))?;
            if xi.iter().any(|&c| c <= TOL || c >= 1.0 - TOL) {
                return Err(Error::Crack(format!(
                    "{what} {x:?} is not strictly inside the domain"
                )));
            }
            Ok(())
        };
        match *self {
            CrackSpec::Edge { entry, tip } => {
                interior(tip, "tip")?;
                let xi = geometry.inverse_map(entry).map_err(|_| {
                    Error::Crack(format!("entry {entry:?} lies outside the domain"))
                })?;
                if !xi.iter().any(|&c| c <= TOL || c >= 1.0 - TOL) {
                    return Err(Error::Crack(format!(
                        "entry {entry:?} is not on the boundary"
                    )));
                }
            }
            CrackSpec::Center { .. } => {
                let (a, b) = self.segment();
                interior(a, "tip")?;
                interior(b, "tip")?;
            }
        }
        Ok(())
    }
}

pub fn compute_level_sets(crack: &CrackSpec, x: [f64; 2]) -> Result<LevelSets> {
    let t = crack.direction()?;
    let n = [-t[1], t[0]];
    let (a, b) = crack.segment();
    let phi = (x[0] - a[0]) * n[0] + (x[1] - a[1]) * n[1];
    let ahead_b = (x[0] - b[0]) * t[0] + (x[1] - b[1]) * t[1];
    let psi = match crack {
        CrackSpec::Edge { .. } => ahead_b,
        CrackSpec::Center { .. } => {
            let ahead_a = -((x[0] - a[0]) * t[0] + (x[1] - a[1]) * t[1]);
            let da = (x[0] - a[0]).hypot(x[1] - a[1]);
            let db = (x[0] - b[0]).hypot(x[1] - b[1]);
            if da < db {
                ahead_a
            } else {
                ahead_b
            }
        }
    };
    Ok(LevelSets { phi, psi })
}

/// Jump function: `+1` on the nonnegative side of the crack line.
pub fn heaviside(ls: &LevelSets) -> f64 {
    if ls.phi >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// The four near-tip branch functions with gradients in the tip frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TipBranch {
    pub values: [f64; 4],
    /// `grads[j] = (dF_j/dx1, dF_j/dx2)` with `x1` along the crack direction.
    pub grads: [[f64; 2]; 4],
}

pub fn tip_functions(r: f64, theta: f64) -> Result<TipBranch> {
    if !(r > 0.0) {
        return Err(Error::Singular(format!(
            "branch functions evaluated at r = {r}"
        )));
    }
    let sr = r.sqrt();
    let (sh, ch) = (0.5 * theta).sin_cos();
    let (st, ct) = theta.sin_cos();
    let values = [sr * sh, sr * ch, sr * sh * st, sr * ch * st];
    let dr = [
        sh / (2.0 * sr),
        ch / (2.0 * sr),
        sh * st / (2.0 * sr),
        ch * st / (2.0 * sr),
    ];
    let dt = [
        0.5 * sr * ch,
        -0.5 * sr * sh,
        sr * (0.5 * ch * st + sh * ct),
        sr * (-0.5 * sh * st + ch * ct),
    ];
    let mut grads = [[0.0; 2]; 4];
    for j in 0..4 {
        grads[j] = [dr[j] * ct - dt[j] * st / r, dr[j] * st + dt[j] * ct / r];
    }
    Ok(TipBranch { values, grads })
}

/// Branch function values only; the limit at the tip itself is zero.
pub fn tip_values(r: f64, theta: f64) -> [f64; 4] {
    if r <= 0.0 {
        return [0.0; 4];
    }
    let sr = r.sqrt();
    let (sh, ch) = (0.5 * theta).sin_cos();
    let st = theta.sin();
    [sr * sh, sr * ch, sr * sh * st, sr * ch * st]
}

/// Polar coordinates of a point in a tip frame. On the crack faces
/// (`|x2| <= tol`, behind the tip) `side` selects `theta = +pi` or `-pi`.
pub fn tip_polar(tip: &Tip, x: [f64; 2], side: Option<f64>, tol: f64) -> (f64, f64) {
    let [x1, x2] = tip.local(x);
    let r = x1.hypot(x2);
    let theta = match side {
        Some(s) if x2.abs() <= tol && x1 < 0.0 => s.signum() * std::f64::consts::PI,
        _ => x2.atan2(x1),
    };
    (r, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn edge(a: f64, c: f64) -> CrackSpec {
        CrackSpec::Edge {
            entry: [0.0, c],
            tip: [a, c],
        }
    }

    #[test]
    fn level_sets_on_crack_and_at_tip() {
        let crack = edge(0.4, 1.0);
        let ls = compute_level_sets(&crack, [0.1, 1.0]).unwrap();
        assert_eq!(ls.phi, 0.0);
        assert!(ls.psi < 0.0);
        let ls = compute_level_sets(&crack, [0.4, 1.0]).unwrap();
        assert_eq!(ls.phi, 0.0);
        assert_eq!(ls.psi, 0.0);
        let ls = compute_level_sets(&crack, [0.7, 1.3]).unwrap();
        assert_abs_diff_eq!(ls.phi, 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(ls.psi, 0.3, epsilon = 1e-15);
    }

    #[test]
    fn zero_length_crack_is_rejected() {
        let crack = edge(0.0, 1.0);
        assert!(matches!(
            compute_level_sets(&crack, [0.1, 0.1]),
            Err(Error::Crack(_))
        ));
    }

    #[test]
    fn rotated_center_crack_matches_rotated_axis_aligned_formula() {
        let angle = PI / 6.0;
        let center = [0.5, 0.45];
        let crack = CrackSpec::Center {
            center,
            half_length: 0.1,
            angle,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            // rotate into the crack frame, then use the axis-aligned crack along x1
            let d = [x[0] - center[0], x[1] - center[1]];
            let (s, c) = angle.sin_cos();
            let x1 = c * d[0] + s * d[1];
            let x2 = -s * d[0] + c * d[1];
            let psi = if (x1 + 0.1).hypot(x2) < (x1 - 0.1).hypot(x2) {
                -(x1 + 0.1)
            } else {
                x1 - 0.1
            };
            let ls = compute_level_sets(&crack, x).unwrap();
            assert_abs_diff_eq!(ls.phi, x2, epsilon = 1e-14);
            assert_abs_diff_eq!(ls.psi, psi, epsilon = 1e-14);
        }
    }

    #[test]
    fn heaviside_signs() {
        let h = |phi| heaviside(&LevelSets { phi, psi: -1.0 });
        assert_eq!(h(0.0), 1.0);
        assert_eq!(h(-1e-9), -1.0);
        assert_eq!(h(3.2), 1.0);
    }

    #[test]
    fn branch_function_values() {
        let b = tip_functions(1.0, 0.0).unwrap();
        assert_eq!(b.values, [0.0, 1.0, 0.0, 0.0]);
        let b = tip_functions(4.0, PI).unwrap();
        assert_abs_diff_eq!(b.values[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b.values[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b.values[2], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b.values[3], 0.0, epsilon = 1e-15);
        assert!(matches!(tip_functions(0.0, 0.3), Err(Error::Singular(_))));
    }

    #[test]
    fn branch_gradients_match_finite_differences() {
        let (r, theta) = (0.37, 1.1);
        let b = tip_functions(r, theta).unwrap();
        let (x1, x2) = (r * theta.cos(), r * theta.sin());
        let f = |a: f64, c: f64| tip_values(a.hypot(c), c.atan2(a));
        let h = 1e-6;
        for j in 0..4 {
            let d1 = (f(x1 + h, x2)[j] - f(x1 - h, x2)[j]) / (2.0 * h);
            let d2 = (f(x1, x2 + h)[j] - f(x1, x2 - h)[j]) / (2.0 * h);
            assert_abs_diff_eq!(b.grads[j][0], d1, epsilon = 1e-6);
            assert_abs_diff_eq!(b.grads[j][1], d2, epsilon = 1e-6);
        }
    }

    #[test]
    fn tip_polar_selects_face() {
        let tip = Tip {
            point: [0.4, 1.0],
            dir: [1.0, 0.0],
        };
        let (r, t) = tip_polar(&tip, [0.2, 1.0], Some(1.0), 1e-12);
        assert_abs_diff_eq!(r, 0.2, epsilon = 1e-15);
        assert_eq!(t, PI);
        let (_, t) = tip_polar(&tip, [0.2, 1.0], Some(-1.0), 1e-12);
        assert_eq!(t, -PI);
        let (_, t) = tip_polar(&tip, [0.6, 1.0], Some(-1.0), 1e-12);
        assert_eq!(t, 0.0);
    }
}
