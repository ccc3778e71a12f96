//! The homogenized problem on `Ω = (0,1)^2`.
//!
//! Solves `-div(A^h ∇u) = |Y1| f1 + α̂ f2` with `u = 0` on `∂Ω` and reports
//! the weak limit `U = u + G`, `G = (∫_{Y2} α) f2`, pointwise.

use crate::cell::HomogenizedData;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fem::coefficient::min_eigenvalue;
use crate::fem::{
    apply_constraints, assemble_load, assemble_stiffness, solve_spd, CoefficientField, Constraints,
    FieldSolution, Mat2, SolverOptions, SparseSystem,
};
use crate::geometry::{CellGeometry, Point};
use crate::mesh::{build_unit_cell_mesh, Mesh, Region};

#[derive(Clone, Debug)]
pub struct MacroProblem {
    pub a_h: Mat2,
    pub f1: Expr,
    pub f2: Expr,
    pub y1_volume: f64,
    pub alpha_hat: f64,
    pub alpha_bulk: f64,
}

impl MacroProblem {
    pub fn from_homogenized(data: &HomogenizedData, f1: Expr, f2: Expr) -> Self {
        MacroProblem {
            a_h: data.a_h,
            f1,
            f2,
            y1_volume: data.y1_volume,
            alpha_hat: data.alpha_hat,
            alpha_bulk: data.alpha_bulk,
        }
    }

    /// `F*(x) = |Y1| f1(x) + α̂ f2(x)`.
    pub fn effective_source(&self, x: Point) -> f64 {
        self.y1_volume * self.f1.eval(x) + self.alpha_hat * self.f2.eval(x)
    }

    /// `G(x) = (∫_{Y2} α) f2(x)`.
    pub fn lift(&self, x: Point) -> f64 {
        self.alpha_bulk * self.f2.eval(x)
    }

    fn check(&self) -> Result<()> {
        let a = &self.a_h;
        if a.iter().flatten().any(|v| !v.is_finite()) || !(min_eigenvalue(a) > 0.0) {
            return Err(Error::Coefficient(format!("homogenized tensor {a:?} is not SPD")));
        }
        Ok(())
    }
}

/// Uniform union-jack triangulation of `Ω` with `n` squares per side.
pub fn build_macro_mesh(n: usize) -> Result<Mesh> {
    build_unit_cell_mesh(&CellGeometry::empty(n))
}

/// P1 solution of the homogeneous Dirichlet problem for `u`.
pub fn solve_macro(problem: &MacroProblem, mesh: &Mesh, opts: &SolverOptions) -> Result<FieldSolution> {
    problem.check()?;
    let a = CoefficientField::ConstantMatrix { value: problem.a_h };
    let mut system = SparseSystem::new(mesh.num_nodes());
    assemble_stiffness(&mut system, mesh, &a, Region::All, 1.0);
    assemble_load(&mut system, mesh, Region::All, |x| problem.effective_source(x));
    let constraints = Constraints {
        dirichlet: boundary_values(mesh, |_| 0.0),
        ..Default::default()
    };
    solve_spd(&apply_constraints(&system, &constraints)?, opts)
}

pub(crate) fn boundary_values(mesh: &Mesh, g: impl Fn(Point) -> f64) -> Vec<(usize, f64)> {
    mesh.boundary_node_mask()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(k, _)| (k, g(mesh.nodes[k])))
        .collect()
}

/// `U = u + G` at the mesh nodes.
pub fn compose_limit_pressure(u: &FieldSolution, problem: &MacroProblem, mesh: &Mesh) -> FieldSolution {
    let values = u
        .values
        .iter()
        .zip(&mesh.nodes)
        .map(|(&u, &x)| u + problem.lift(x))
        .collect();
    FieldSolution::from_values(values)
}

/// Point evaluation of a P1 field on a mesh from [`build_macro_mesh`].
pub struct MacroField<'a> {
    mesh: &'a Mesh,
    values: &'a [f64],
    n: usize,
}

impl<'a> MacroField<'a> {
    pub fn new(mesh: &'a Mesh, values: &'a [f64]) -> Result<Self> {
        let n = ((mesh.triangles.len() / 2) as f64).sqrt().round() as usize;
        if n == 0 || 2 * n * n != mesh.triangles.len() || (n + 1) * (n + 1) != mesh.num_nodes() {
            return Err(Error::Argument("field is not on a structured macro mesh".into()));
        }
        if values.len() != mesh.num_nodes() {
            return Err(Error::Argument("field length does not match the mesh".into()));
        }
        Ok(MacroField { mesh, values, n })
    }

    pub fn eval(&self, x: Point) -> f64 {
        let n = self.n as f64;
        let i = ((x[0] * n).floor().max(0.0) as usize).min(self.n - 1);
        let j = ((x[1] * n).floor().max(0.0) as usize).min(self.n - 1);
        let base = 2 * (j * self.n + i);
        let mut best = (f64::NEG_INFINITY, 0.0);
        for t in base..base + 2 {
            let l = barycentric(&self.mesh.vertices(t), x);
            let worst = l.iter().copied().fold(f64::INFINITY, f64::min);
            if worst > best.0 {
                let tri = self.mesh.triangles[t].nodes;
                let v = l[0] * self.values[tri[0]] + l[1] * self.values[tri[1]] + l[2] * self.values[tri[2]];
                best = (worst, v);
            }
        }
        best.1
    }
}

fn barycentric(v: &[Point; 3], x: Point) -> [f64; 3] {
    let det = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]);
    let l1 = ((x[0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (x[1] - v[0][1])) / det;
    let l2 = ((v[1][0] - v[0][0]) * (x[1] - v[0][1]) - (x[0] - v[0][0]) * (v[1][1] - v[0][1])) / det;
    [1.0 - l1 - l2, l1, l2]
}
