//! Element quadrature and assembly of the enriched stiffness matrix and load vector.

use log::warn;

use super::crack::{compute_level_sets, heaviside, tip_functions, CrackSpec, Tip};
use super::enrich::{EnrichedSpace, ParamCrack, PARAM_TOL};
use super::quadrature::{
    box_rule, fan, gauss_legendre, split_convex, strictly_inside, triangle_rule,
};
use super::sparse::{Accumulator, SkylineMatrix};
use super::{BoundaryConditions, Edge, MaterialModel};
use crate::error::Result;
use crate::spline::{Element, GeometryMap, TensorEval};

/// Assembled stiffness matrix (all DOFs, before constraint elimination) and load vector.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub matrix: SkylineMatrix,
    pub rhs: Vec<f64>,
}

/// Quadrature point with the jump-function value of the sub-cell it belongs to.
#[derive(Clone, Copy, Debug)]
struct CellPoint {
    xi: [f64; 2],
    weight: f64,
    hsign: Option<f64>,
}

/// Enriched shape function sampled at a point: first DOF (x), value, physical gradient.
#[derive(Clone, Copy, Debug)]
struct Shape {
    dof: usize,
    value: f64,
    grad: [f64; 2],
}

struct Context<'a> {
    es: &'a EnrichedSpace,
    geometry: &'a GeometryMap,
    crack: Option<&'a CrackSpec>,
    pc: Option<ParamCrack>,
    tips: Vec<Tip>,
    degree: usize,
}

impl<'a> Context<'a> {
    fn new(
        es: &'a EnrichedSpace,
        geometry: &'a GeometryMap,
        crack: Option<&'a CrackSpec>,
    ) -> Result<Self> {
        let (pc, tips) = match crack {
            Some(c) => (Some(ParamCrack::new(c, geometry)?), c.tips()?),
            None => (None, Vec::new()),
        };
        Ok(Self {
            es,
            geometry,
            crack,
            pc,
            tips,
            degree: geometry.space().degree(),
        })
    }

    fn hsign_at(&self, x: [f64; 2]) -> Result<f64> {
        Ok(match self.crack {
            Some(c) => heaviside(&compute_level_sets(c, x)?),
            None => 1.0,
        })
    }

    /// Dofs of all shape functions active on an element, in `shapes` order.
    fn element_dofs(&self, elem: &Element) -> Vec<usize> {
        let mut out = Vec::new();
        for f in self.geometry.space().active_functions(elem.spans) {
            out.push(self.es.std_dof(f, 0));
            if let Some(k) = self.es.heaviside_index(f) {
                out.push(self.es.heaviside_dof(k, 0));
            }
            if let Some((k, _)) = self.es.tip_index(f) {
                for j in 0..4 {
                    out.push(self.es.tip_dof(k, j, 0));
                }
            }
        }
        out
    }

    /// Quadrature for one element, subdivided along the crack where needed.
    fn element_rule(&self, elem: &Element) -> Result<Vec<CellPoint>> {
        let p = self.degree;
        let funcs = self.geometry.space().active_functions(elem.spans);
        let enriched = funcs.iter().any(|&f| self.es.is_enriched(f));
        let has_tip = funcs.iter().any(|&f| self.es.tip_index(f).is_some());
        let plain = |n| {
            box_rule(elem.lo, elem.hi, n)
                .into_iter()
                .map(|q| CellPoint {
                    xi: q.xi,
                    weight: q.weight,
                    hsign: None,
                })
                .collect()
        };
        let Some(pc) = self.pc.as_ref().filter(|_| enriched) else {
            return Ok(plain(p + 1));
        };
        let regular_order = if has_tip { p + 3 } else { p + 1 };
        let mut out = Vec::new();
        self.cut_rule(pc, elem.lo, elem.hi, regular_order, 0, &mut out)?;
        Ok(out)
    }

    fn cut_rule(
        &self,
        pc: &ParamCrack,
        lo: [f64; 2],
        hi: [f64; 2],
        regular_order: usize,
        depth: usize,
        out: &mut Vec<CellPoint>,
    ) -> Result<()> {
        let p = self.degree;
        let interior_tips: Vec<usize> = pc
            .tips
            .iter()
            .enumerate()
            .filter(|(_, t)| strictly_inside(**t, lo, hi, PARAM_TOL))
            .map(|(i, _)| i)
            .collect();
        if interior_tips.len() > 1 && depth < 4 {
            let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
            for (a, b) in [
                (lo, mid),
                ([mid[0], lo[1]], [hi[0], mid[1]]),
                (mid, hi),
                ([lo[0], mid[1]], [mid[0], hi[1]]),
            ] {
                self.cut_rule(pc, a, b, regular_order, depth + 1, out)?;
            }
            return Ok(());
        }
        let tips_here = pc.tips_in(lo, hi);
        let chord = pc.chord_in(lo, hi);
        if chord.is_none() && tips_here.is_empty() {
            for q in box_rule(lo, hi, regular_order) {
                let x = self.geometry.map_point(q.xi)?.x;
                out.push(CellPoint {
                    xi: q.xi,
                    weight: q.weight,
                    hsign: Some(self.hsign_at(x)?),
                });
            }
            return Ok(());
        }
        let square = vec![lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]];
        let area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
        let min_area = 1e-12 * area;
        let n_cut = p + 3;
        let n_tip = 2 * p + 2;
        let mut triangles: Vec<([[f64; 2]; 3], usize)> = Vec::new();
        match chord {
            None => {
                let apex = pc.tips[tips_here[0]];
                triangles.extend(fan(apex, &square, min_area).into_iter().map(|t| (t, n_tip)));
            }
            Some((t0, t1)) => {
                let q0 = pc.point(t0);
                let q1 = pc.point(t1);
                let inner_tip = interior_tips.first().map(|&i| pc.tips[i]);
                if let Some(apex) = inner_tip {
                    // slit: the crack enters at the far chord end and stops at the tip
                    let entry = if dist(apex, q1) < dist(apex, q0) {
                        q0
                    } else {
                        q1
                    };
                    let poly = insert_on_boundary(&square, entry);
                    triangles.extend(fan(apex, &poly, min_area).into_iter().map(|t| (t, n_tip)));
                } else {
                    let d = [q1[0] - q0[0], q1[1] - q0[1]];
                    let (pos, neg) = split_convex(&square, q0, [-d[1], d[0]]);
                    for piece in [pos, neg] {
                        if piece.len() < 3 {
                            continue;
                        }
                        let tip_vertex = tips_here.iter().map(|&i| pc.tips[i]).find(|t| {
                            piece.iter().any(|v| dist(*v, *t) <= PARAM_TOL)
                                || on_polygon(&piece, *t)
                        });
                        match tip_vertex {
                            Some(apex) => triangles.extend(
                                fan(apex, &piece, min_area).into_iter().map(|t| (t, n_tip)),
                            ),
                            None => triangles.extend(
                                fan(piece[0], &piece, min_area)
                                    .into_iter()
                                    .map(|t| (t, n_cut)),
                            ),
                        }
                    }
                }
            }
        }
        for (tri, n) in triangles {
            let c = [
                (tri[0][0] + tri[1][0] + tri[2][0]) / 3.0,
                (tri[0][1] + tri[1][1] + tri[2][1]) / 3.0,
            ];
            let hs = self.hsign_at(self.geometry.map_point(c)?.x)?;
            for q in triangle_rule(tri, n) {
                out.push(CellPoint {
                    xi: q.xi,
                    weight: q.weight,
                    hsign: Some(hs),
                });
            }
        }
        Ok(())
    }

    /// Shape functions at a point given the tensor evaluation with physical gradients.
    fn shapes(
        &self,
        ev: &TensorEval,
        phys_grads: &[[f64; 2]],
        x: [f64; 2],
        hsign: f64,
        h: f64,
        out: &mut Vec<Shape>,
    ) -> Result<()> {
        out.clear();
        let mut branch: [Option<([f64; 4], [[f64; 2]; 4])>; 2] = [None, None];
        for (a, &f) in ev.functions.iter().enumerate() {
            let b = ev.values[a];
            let g = phys_grads[a];
            out.push(Shape {
                dof: self.es.std_dof(f, 0),
                value: b,
                grad: g,
            });
            if let Some(k) = self.es.heaviside_index(f) {
                out.push(Shape {
                    dof: self.es.heaviside_dof(k, 0),
                    value: hsign * b,
                    grad: [hsign * g[0], hsign * g[1]],
                });
            }
            if let Some((k, t)) = self.es.tip_index(f) {
                if branch[t].is_none() {
                    branch[t] = Some(self.branch_at(t, x, h)?);
                }
                let (vals, grads) = branch[t].expect("just filled");
                for j in 0..4 {
                    out.push(Shape {
                        dof: self.es.tip_dof(k, j, 0),
                        value: b * vals[j],
                        grad: [
                            g[0] * vals[j] + b * grads[j][0],
                            g[1] * vals[j] + b * grads[j][1],
                        ],
                    });
                }
            }
        }
        Ok(())
    }

    fn branch_at(&self, t: usize, x: [f64; 2], h: f64) -> Result<([f64; 4], [[f64; 2]; 4])> {
        let tip = &self.tips[t];
        let [mut x1, x2] = tip.local(x);
        let mut r = x1.hypot(x2);
        if r < 1e-12 * h {
            warn!("quadrature point at a crack tip; perturbing by 1e-12 h");
            x1 += 1e-12 * h;
            r = x1.hypot(x2);
        }
        let b = tip_functions(r, x2.atan2(x1))?;
        let mut grads = [[0.0; 2]; 4];
        for j in 0..4 {
            grads[j] = tip.to_global(b.grads[j]);
        }
        Ok((b.values, grads))
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn on_segment(a: [f64; 2], b: [f64; 2], q: [f64; 2]) -> bool {
    let l = dist(a, b);
    (dist(a, q) + dist(q, b) - l).abs() <= PARAM_TOL
}

fn on_polygon(poly: &[[f64; 2]], q: [f64; 2]) -> bool {
    (0..poly.len()).any(|i| on_segment(poly[i], poly[(i + 1) % poly.len()], q))
}

/// Inserts a boundary point as a polygon vertex (no-op when it coincides with one).
fn insert_on_boundary(poly: &[[f64; 2]], q: [f64; 2]) -> Vec<[f64; 2]> {
    if poly.iter().any(|v| dist(*v, q) <= PARAM_TOL) {
        return poly.to_vec();
    }
    let mut out = Vec::with_capacity(poly.len() + 1);
    let mut done = false;
    for i in 0..poly.len() {
        out.push(poly[i]);
        if !done && on_segment(poly[i], poly[(i + 1) % poly.len()], q) {
            out.push(q);
            done = true;
        }
    }
    out
}

/// Assembles the full enriched system without applying Dirichlet constraints.
pub fn assemble(
    es: &EnrichedSpace,
    geometry: &GeometryMap,
    material: &MaterialModel,
    bc: &BoundaryConditions,
    crack: Option<&CrackSpec>,
) -> Result<LinearSystem> {
    let ctx = Context::new(es, geometry, crack)?;
    let elements = geometry.space().elements();
    let groups: Vec<Vec<usize>> = elements
        .iter()
        .map(|e| {
            ctx.element_dofs(e)
                .into_iter()
                .flat_map(|d| [d, d + 1])
                .collect()
        })
        .collect();
    let first =
        SkylineMatrix::profile_from_groups(es.n_dofs(), groups.iter().map(|g| g.as_slice()));
    let mut matrix = SkylineMatrix::with_profile(first);
    let rhs = assemble_into(es, geometry, material, bc, crack, &mut matrix)?;
    Ok(LinearSystem { matrix, rhs })
}

/// Assembles into any accumulator and returns the load vector.
pub fn assemble_into(
    es: &EnrichedSpace,
    geometry: &GeometryMap,
    material: &MaterialModel,
    bc: &BoundaryConditions,
    crack: Option<&CrackSpec>,
    acc: &mut impl Accumulator,
) -> Result<Vec<f64>> {
    bc.validate()?;
    let ctx = Context::new(es, geometry, crack)?;
    let dmat = material.plane_strain();
    let space = geometry.space();
    let mut rhs = vec![0.0; es.n_dofs()];
    let mut shapes = Vec::new();
    let mut local: Vec<f64> = Vec::new();
    let mut phys = Vec::new();
    for elem in space.elements() {
        let dofs = ctx.element_dofs(&elem);
        let m = dofs.len();
        local.clear();
        local.resize(4 * m * m, 0.0);
        let h = {
            let a = geometry.map_point(elem.lo)?.x;
            let b = geometry.map_point(elem.hi)?.x;
            dist(a, b)
        };
        for cp in ctx.element_rule(&elem)? {
            let ev = space.eval_on_span(elem.spans, cp.xi);
            let mp = geometry.map_with(&ev)?;
            let ij = mp.inv_jac();
            phys.clear();
            phys.extend(ev.grads.iter().map(|g| {
                [
                    g[0] * ij[0][0] + g[1] * ij[1][0],
                    g[0] * ij[0][1] + g[1] * ij[1][1],
                ]
            }));
            let hs = match cp.hsign {
                Some(s) => s,
                None => ctx.hsign_at(mp.x)?,
            };
            ctx.shapes(&ev, &phys, mp.x, hs, h, &mut shapes)?;
            let w = cp.weight * mp.det;
            // shape order matches element_dofs, so local row = 2 * shape index + component
            debug_assert_eq!(shapes.len(), m);
            for (s, sa) in shapes.iter().enumerate() {
                let (ax, ay) = (sa.grad[0], sa.grad[1]);
                for (t, sb) in shapes.iter().enumerate() {
                    let (bx, by) = (sb.grad[0], sb.grad[1]);
                    let kxx = ax * dmat[0][0] * bx + ay * dmat[2][2] * by;
                    let kxy = ax * dmat[0][1] * by + ay * dmat[2][2] * bx;
                    let kyx = ay * dmat[1][0] * bx + ax * dmat[2][2] * by;
                    let kyy = ay * dmat[1][1] * by + ax * dmat[2][2] * bx;
                    let r0 = 2 * s;
                    let c0 = 2 * t;
                    let row = 2 * m;
                    local[r0 * row + c0] += w * kxx;
                    local[r0 * row + c0 + 1] += w * kxy;
                    local[(r0 + 1) * row + c0] += w * kyx;
                    local[(r0 + 1) * row + c0 + 1] += w * kyy;
                }
                for d in 0..2 {
                    let bf = bc.body_force[d];
                    if bf != 0.0 {
                        rhs[sa.dof + d] += w * sa.value * bf;
                    }
                }
            }
        }
        let row = 2 * m;
        for s in 0..m {
            for a in 0..2 {
                for t in 0..m {
                    for b in 0..2 {
                        let v = local[(2 * s + a) * row + 2 * t + b];
                        if v != 0.0 {
                            acc.add(dofs[s] + a, dofs[t] + b, v);
                        }
                    }
                }
            }
        }
    }
    for &(edge, traction) in &bc.tractions {
        apply_traction(&ctx, edge, traction, &mut rhs, &mut shapes)?;
    }
    Ok(rhs)
}

fn apply_traction(
    ctx: &Context<'_>,
    edge: Edge,
    g: [f64; 2],
    rhs: &mut [f64],
    shapes: &mut Vec<Shape>,
) -> Result<()> {
    let geometry = ctx.geometry;
    let space = geometry.space();
    let (fixed_dir, fixed_val) = match edge {
        Edge::Bottom => (1, 0.0),
        Edge::Top => (1, 1.0),
        Edge::Left => (0, 0.0),
        Edge::Right => (0, 1.0),
    };
    let along = 1 - fixed_dir;
    let n = ctx.degree + 2;
    let (gx, gw) = gauss_legendre(n);
    let kv = space.dir(along);
    let fixed_span = space.dir(fixed_dir).find_span(fixed_val)?;
    let mut phys = Vec::new();
    for s in kv.nonempty_spans() {
        let (a, b) = (kv.knots()[s], kv.knots()[s + 1]);
        for (x, w) in gx.iter().zip(&gw) {
            let t = a + (b - a) * x;
            let mut xi = [0.0; 2];
            xi[along] = t;
            xi[fixed_dir] = fixed_val;
            let mut spans = [0; 2];
            spans[along] = s;
            spans[fixed_dir] = fixed_span;
            let ev = space.eval_on_span(spans, xi);
            let mp = geometry.map_with(&ev)?;
            let ij = mp.inv_jac();
            let tangent = [mp.jac[0][along], mp.jac[1][along]];
            let dgamma = tangent[0].hypot(tangent[1]) * (b - a) * w;
            phys.clear();
            phys.extend(ev.grads.iter().map(|g| {
                [
                    g[0] * ij[0][0] + g[1] * ij[1][0],
                    g[0] * ij[0][1] + g[1] * ij[1][1],
                ]
            }));
            let hs = ctx.hsign_at(mp.x)?;
            ctx.shapes(&ev, &phys, mp.x, hs, 1.0, shapes)?;
            for sh in shapes.iter() {
                for d in 0..2 {
                    rhs[sh.dof + d] += dgamma * sh.value * g[d];
                }
            }
        }
    }
    Ok(())
}
