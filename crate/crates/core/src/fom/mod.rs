//! Full-order extended isogeometric solver for plane-strain linear elasticity
//! with a straight, traction-free crack.

pub mod assembly;
pub mod crack;
pub mod enrich;
pub mod quadrature;
pub mod sparse;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use assembly::{assemble, assemble_into, LinearSystem};
pub use crack::{
    compute_level_sets, heaviside, tip_functions, CrackSpec, LevelSets, Tip, TipBranch,
};
pub use enrich::{classify_and_enrich, EnrichedSpace};

use crate::error::{Error, Result};
use crate::spline::{GeometryMap, KnotVector, TensorSpace};

/// Isotropic material under plane strain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
}

impl MaterialModel {
    pub fn new(youngs_modulus: f64, poisson_ratio: f64) -> Result<Self> {
        if !(youngs_modulus > 0.0) {
            return Err(Error::Config(format!(
                "material.youngs_modulus must be positive, got {youngs_modulus}"
            )));
        }
        if !(0.0..0.5).contains(&poisson_ratio) {
            return Err(Error::Config(format!(
                "material.poisson_ratio must lie in [0, 0.5), got {poisson_ratio}"
            )));
        }
        Ok(Self {
            youngs_modulus,
            poisson_ratio,
        })
    }

    /// Plane-strain elasticity matrix in Voigt notation (xx, yy, xy).
    pub fn plane_strain(&self) -> [[f64; 3]; 3] {
        let (e, nu) = (self.youngs_modulus, self.poisson_ratio);
        let c = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
        [
            [c * (1.0 - nu), c * nu, 0.0],
            [c * nu, c * (1.0 - nu), 0.0],
            [0.0, 0.0, c * (1.0 - 2.0 * nu) / 2.0],
        ]
    }
}

/// Boundary edge of the parametric square.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Bottom,
    Right,
    Top,
    Left,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Corner {
    BottomLeft,
    BottomRight,
    TopRight,
    TopLeft,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Support {
    Edge(Edge),
    Corner(Corner),
}

/// Homogeneous constraint on selected displacement components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirichletConstraint {
    pub on: Support,
    /// `[x, y]` components fixed to zero.
    pub components: [bool; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    pub dirichlet: Vec<DirichletConstraint>,
    /// Constant tractions on loaded edges.
    pub tractions: Vec<(Edge, [f64; 2])>,
    pub body_force: [f64; 2],
}

impl BoundaryConditions {
    pub fn validate(&self) -> Result<()> {
        for c in &self.dirichlet {
            if let Support::Edge(e) = c.on {
                if self.tractions.iter().any(|(t, _)| *t == e) {
                    return Err(Error::Config(format!(
                        "edge {e:?} carries both a Dirichlet constraint and a traction"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Scalar crack attribute: a constant or an affine function of one parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ParamExpr {
    Value(f64),
    Param {
        index: usize,
        scale: f64,
        offset: f64,
    },
}

impl ParamExpr {
    pub fn eval(&self, mu: &[f64]) -> f64 {
        match *self {
            ParamExpr::Value(v) => v,
            ParamExpr::Param {
                index,
                scale,
                offset,
            } => scale * mu[index] + offset,
        }
    }

    pub fn depends_on(&self) -> Option<usize> {
        match *self {
            ParamExpr::Value(_) => None,
            ParamExpr::Param { index, .. } => Some(index),
        }
    }
}

/// How a parameter vector places the crack.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CrackTemplate {
    /// Horizontal crack entering from the left side of the domain.
    Edge { y: ParamExpr, length: ParamExpr },
    Center {
        x: ParamExpr,
        y: ParamExpr,
        half_length: ParamExpr,
        angle: ParamExpr,
    },
}

impl CrackTemplate {
    pub fn instantiate(&self, geometry: &GeometryMap, mu: &[f64]) -> CrackSpec {
        match *self {
            CrackTemplate::Edge { y, length } => {
                let (lo, _) = geometry.bounding_box();
                let y = y.eval(mu);
                CrackSpec::Edge {
                    entry: [lo[0], y],
                    tip: [lo[0] + length.eval(mu), y],
                }
            }
            CrackTemplate::Center {
                x,
                y,
                half_length,
                angle,
            } => CrackSpec::Center {
                center: [x.eval(mu), y.eval(mu)],
                half_length: half_length.eval(mu),
                angle: angle.eval(mu),
            },
        }
    }
}

/// Named parameters with box bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    pub names: Vec<String>,
    pub bounds: Vec<[f64; 2]>,
}

impl ParameterSpace {
    pub fn new(names: Vec<String>, bounds: Vec<[f64; 2]>) -> Result<Self> {
        if names.len() != bounds.len() {
            return Err(Error::Config(
                "parameter names and bounds differ in length".into(),
            ));
        }
        for (n, b) in names.iter().zip(&bounds) {
            if !(b[1] >= b[0]) {
                return Err(Error::Config(format!(
                    "parameter `{n}` has empty bounds {b:?}"
                )));
            }
        }
        Ok(Self { names, bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn check(&self, mu: &[f64]) -> Result<()> {
        if mu.len() != self.dim() {
            return Err(Error::Parameter(format!(
                "expected {} components, got {}",
                self.dim(),
                mu.len()
            )));
        }
        for ((v, b), n) in mu.iter().zip(&self.bounds).zip(&self.names) {
            if !(b[0] - 1e-12..=b[1] + 1e-12).contains(v) {
                return Err(Error::Parameter(format!(
                    "{n} = {v} outside [{}, {}]",
                    b[0], b[1]
                )));
            }
        }
        Ok(())
    }

    pub fn clamp(&self, mu: &[f64]) -> Vec<f64> {
        mu.iter()
            .zip(&self.bounds)
            .map(|(v, b)| v.clamp(b[0], b[1]))
            .collect()
    }
}

/// Everything needed to solve the full-order model for a parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub geometry: Arc<GeometryMap>,
    pub material: MaterialModel,
    pub bc: BoundaryConditions,
    pub crack: Option<CrackTemplate>,
    pub parameters: ParameterSpace,
    /// Multiplier on all applied loads.
    pub load_factor: ParamExpr,
}

impl Problem {
    /// Rectangular plate under uniform tension on its top edge, constrained
    /// vertically along the bottom and horizontally at the bottom-left corner.
    #[allow(clippy::too_many_arguments)]
    pub fn plate_in_tension(
        degree: usize,
        spans: [usize; 2],
        size: [f64; 2],
        material: MaterialModel,
        traction: f64,
        crack: Option<CrackTemplate>,
        parameters: ParameterSpace,
    ) -> Result<Self> {
        let space = TensorSpace::new(
            KnotVector::open_uniform(degree, spans[0])?,
            KnotVector::open_uniform(degree, spans[1])?,
        )?;
        let geometry = GeometryMap::rectangle(space, [0.0, 0.0], size[0], size[1])?;
        Ok(Self {
            geometry: Arc::new(geometry),
            material,
            bc: BoundaryConditions {
                dirichlet: vec![
                    DirichletConstraint {
                        on: Support::Edge(Edge::Bottom),
                        components: [false, true],
                    },
                    DirichletConstraint {
                        on: Support::Corner(Corner::BottomLeft),
                        components: [true, false],
                    },
                ],
                tractions: vec![(Edge::Top, [0.0, traction])],
                body_force: [0.0; 2],
            },
            crack,
            parameters,
            load_factor: ParamExpr::Value(1.0),
        })
    }

    pub fn crack_at(&self, mu: &[f64]) -> Option<CrackSpec> {
        self.crack
            .as_ref()
            .map(|t| t.instantiate(&self.geometry, mu))
    }
}

/// Solved enriched field.
#[derive(Clone, Debug)]
pub struct FomSolution {
    pub geometry: Arc<GeometryMap>,
    pub space: EnrichedSpace,
    pub crack: Option<CrackSpec>,
    pub tips: Vec<Tip>,
    /// Full DOF vector; constrained entries are zero.
    pub coeffs: Vec<f64>,
    pub n_constrained: usize,
}

/// Below this normal distance an evaluation point counts as lying on the crack faces.
pub const ON_CRACK_TOL: f64 = 1e-12;

/// Indices of the DOFs fixed by homogeneous Dirichlet constraints.
pub fn constrained_dofs(
    es: &EnrichedSpace,
    geometry: &GeometryMap,
    bc: &BoundaryConditions,
) -> Vec<usize> {
    let [n1, n2] = geometry.space().shape();
    let space = geometry.space();
    let mut fixed = vec![false; es.n_dofs()];
    for c in &bc.dirichlet {
        let funcs: Vec<usize> = match c.on {
            Support::Edge(Edge::Bottom) => (0..n1).map(|i| space.index(i, 0)).collect(),
            Support::Edge(Edge::Top) => (0..n1).map(|i| space.index(i, n2 - 1)).collect(),
            Support::Edge(Edge::Left) => (0..n2).map(|j| space.index(0, j)).collect(),
            Support::Edge(Edge::Right) => (0..n2).map(|j| space.index(n1 - 1, j)).collect(),
            Support::Corner(Corner::BottomLeft) => vec![space.index(0, 0)],
            Support::Corner(Corner::BottomRight) => vec![space.index(n1 - 1, 0)],
            Support::Corner(Corner::TopRight) => vec![space.index(n1 - 1, n2 - 1)],
            Support::Corner(Corner::TopLeft) => vec![space.index(0, n2 - 1)],
        };
        for f in funcs {
            let dofs = es.dofs_of(f);
            for dof in dofs {
                // every DOF block stores x at even offsets and y at odd offsets
                if c.components[dof % 2] {
                    fixed[dof] = true;
                }
            }
        }
    }
    (0..fixed.len()).filter(|&i| fixed[i]).collect()
}

pub fn solve_fom(problem: &Problem, mu: &[f64]) -> Result<FomSolution> {
    problem.parameters.check(mu)?;
    let crack = problem.crack_at(mu);
    let geometry = &problem.geometry;
    let es = classify_and_enrich(geometry.space(), geometry, crack.as_ref())?;
    let system = assemble(
        &es,
        geometry,
        &problem.material,
        &problem.bc,
        crack.as_ref(),
    )?;
    let fixed = constrained_dofs(&es, geometry, &problem.bc);
    let mut is_fixed = vec![false; es.n_dofs()];
    for &d in &fixed {
        is_fixed[d] = true;
    }
    let free: Vec<usize> = (0..es.n_dofs()).filter(|&d| !is_fixed[d]).collect();
    let reduced = system.matrix.submatrix(&free);
    let factor = reduced.factor().map_err(|e| match e {
        Error::RankDeficient { pivot, .. } => Error::RankDeficient {
            constrained: fixed.len(),
            pivot,
        },
        other => other,
    })?;
    let scale = problem.load_factor.eval(mu);
    let rhs: Vec<f64> = free.iter().map(|&d| scale * system.rhs[d]).collect();
    let x = factor.solve(&rhs);
    let mut coeffs = vec![0.0; es.n_dofs()];
    for (&d, v) in free.iter().zip(x) {
        coeffs[d] = v;
    }
    let tips = match &crack {
        Some(c) => c.tips()?,
        None => Vec::new(),
    };
    Ok(FomSolution {
        geometry: Arc::clone(geometry),
        space: es,
        crack,
        tips,
        coeffs,
        n_constrained: fixed.len(),
    })
}

/// Displacement at a physical point. `side` picks the crack face for points on the crack.
pub fn evaluate_solution(sol: &FomSolution, x: [f64; 2], side: f64) -> Result<[f64; 2]> {
    let xi = sol.geometry.inverse_map(x)?;
    evaluate_at_param(sol, xi, x, side)
}

pub(crate) fn evaluate_at_param(
    sol: &FomSolution,
    xi: [f64; 2],
    x: [f64; 2],
    side: f64,
) -> Result<[f64; 2]> {
    let ev = sol.geometry.space().eval(xi)?;
    let es = &sol.space;
    let hsign = match &sol.crack {
        Some(c) => {
            let ls = compute_level_sets(c, x)?;
            if ls.phi.abs() < ON_CRACK_TOL {
                side.signum()
            } else {
                heaviside(&ls)
            }
        }
        None => 1.0,
    };
    let mut branch: Vec<Option<[f64; 4]>> = vec![None; sol.tips.len()];
    let mut u = [0.0; 2];
    let c = &sol.coeffs;
    for (&f, &b) in ev.functions.iter().zip(&ev.values) {
        for d in 0..2 {
            u[d] += b * c[es.std_dof(f, d)];
        }
        if let Some(k) = es.heaviside_index(f) {
            for d in 0..2 {
                u[d] += hsign * b * c[es.heaviside_dof(k, d)];
            }
        }
        if let Some((k, t)) = es.tip_index(f) {
            let vals = *branch[t].get_or_insert_with(|| {
                let (r, theta) = crack::tip_polar(&sol.tips[t], x, Some(side), ON_CRACK_TOL);
                crack::tip_values(r, theta)
            });
            for (j, fj) in vals.iter().enumerate() {
                for d in 0..2 {
                    u[d] += b * fj * c[es.tip_dof(k, j, d)];
                }
            }
        }
    }
    Ok(u)
}

/// Strain energy `f . u` of a solution under its own load, for convergence checks.
/// Work of the unscaled applied load on the solution.
pub fn compliance(problem: &Problem, sol: &FomSolution) -> Result<f64> {
    let system = assemble(
        &sol.space,
        &problem.geometry,
        &problem.material,
        &problem.bc,
        sol.crack.as_ref(),
    )?;
    Ok(system.rhs.iter().zip(&sol.coeffs).map(|(f, u)| f * u).sum())
}
