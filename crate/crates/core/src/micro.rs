//! The ε-resolved coupled problem on the tiled mesh.
//!
//! Find `(u, v)` with `u = 0` on `∂Ω` such that for all `(φ, ψ)`
//!
//! ```text
//! ∫_{Ω1} A(x/ε)∇u·∇φ + ε² ∫_{Ω2} B(x/ε)∇v·∇ψ + ε ∫_Γ h(x/ε)(u - v)(φ - ψ)
//!     = ∫_{Ω1} f1 φ + ∫_{Ω2} f2 ψ.
//! ```
//!
//! Both fields live on one node array: matrix nodes carry `u`, block nodes
//! carry `v`, and interface nodes are duplicated so each side has its own
//! trace.

use crate::cell::CellCoefficients;
use crate::error::Result;
use crate::expr::Expr;
use crate::fem::{
    apply_constraints, assemble_interface_mass, assemble_load, assemble_stiffness, grad_sq,
    solve_spd, Constraints, FieldSolution, InterfaceCoupling, SolveStats, SolverOptions,
    SparseSystem,
};
use crate::geometry::CellGeometry;
use crate::mesh::{build_epsilon_mesh, dist, extract_interface_pairing, Mesh, Region, Subdomain};
use crate::macroscale::boundary_values;

#[derive(Clone, Debug)]
pub struct MicroProblem {
    pub mesh: Mesh,
    pub coefficients: CellCoefficients,
    pub f1: Expr,
    pub f2: Expr,
}

impl MicroProblem {
    pub fn new(geometry: &CellGeometry, eps: f64, coefficients: CellCoefficients, f1: Expr, f2: Expr) -> Result<Self> {
        Ok(MicroProblem {
            mesh: build_epsilon_mesh(geometry, eps)?,
            coefficients,
            f1,
            f2,
        })
    }

    pub fn eps(&self) -> f64 {
        self.mesh.eps()
    }
}

/// Assembled (unconstrained) system plus the Dirichlet rows for `∂Ω`.
#[derive(Clone, Debug)]
pub struct MicroSystem {
    pub system: SparseSystem,
    pub constraints: Constraints,
}

pub fn assemble_micro(problem: &MicroProblem) -> Result<MicroSystem> {
    let mesh = &problem.mesh;
    let c = &problem.coefficients;
    let eps = problem.eps();
    let matrix = Region::Only(Subdomain::Matrix);
    let block = Region::Only(Subdomain::Block);
    c.a.check_ellipticity(mesh, matrix)?;
    if mesh.has_block() {
        c.b.check_ellipticity(mesh, block)?;
        c.h.check_positive(mesh)?;
    }

    let mut system = SparseSystem::new(mesh.num_nodes());
    assemble_stiffness(&mut system, mesh, &c.a, matrix, 1.0);
    assemble_stiffness(&mut system, mesh, &c.b, block, eps * eps);
    let pairs = extract_interface_pairing(mesh)?;
    assemble_interface_mass(&mut system, mesh, &c.h, &pairs, InterfaceCoupling::Jump, eps)?;
    assemble_load(&mut system, mesh, matrix, |x| problem.f1.eval(x));
    assemble_load(&mut system, mesh, block, |x| problem.f2.eval(x));
    let constraints = Constraints {
        dirichlet: boundary_values(mesh, |_| 0.0),
        ..Default::default()
    };
    Ok(MicroSystem { system, constraints })
}

/// `u_eps` and `v_eps` are stored over all mesh nodes; `u_eps` vanishes on
/// block nodes and `v_eps` on matrix nodes.
#[derive(Clone, Debug)]
pub struct MicroSolution {
    pub eps: f64,
    pub m: usize,
    pub u_eps: FieldSolution,
    pub v_eps: FieldSolution,
    pub stats: Option<SolveStats>,
}

pub fn solve_micro(problem: &MicroProblem, opts: &SolverOptions) -> Result<MicroSolution> {
    let assembled = assemble_micro(problem)?;
    let reduced = apply_constraints(&assembled.system, &assembled.constraints)?;
    let solution = solve_spd(&reduced, opts)?;
    Ok(split_solution(problem, solution))
}

fn split_solution(problem: &MicroProblem, solution: FieldSolution) -> MicroSolution {
    let mask = problem.mesh.node_mask(Region::Only(Subdomain::Block));
    let mut u = solution.values.clone();
    let mut v = solution.values;
    for (k, &in_block) in mask.iter().enumerate() {
        if in_block {
            u[k] = 0.0;
        } else {
            v[k] = 0.0;
        }
    }
    MicroSolution {
        eps: problem.eps(),
        m: problem.mesh.cells_per_side,
        u_eps: FieldSolution::from_values(u),
        v_eps: FieldSolution::from_values(v),
        stats: solution.stats,
    }
}

/// `w = χ1 u + χ2 v`, one value per node (interface nodes keep their side's
/// value).
pub fn combined_pressure(sol: &MicroSolution) -> FieldSolution {
    FieldSolution::from_values(sol.u_eps.values.iter().zip(&sol.v_eps.values).map(|(u, v)| u + v).collect())
}

/// `w` with each interface pair replaced by the average of its two copies,
/// weighted by the area of the triangles each copy touches. For display.
pub fn resolved_pressure(sol: &MicroSolution, mesh: &Mesh) -> Result<Vec<f64>> {
    let mut w = combined_pressure(sol).values;
    let mut touched = vec![0.0; mesh.num_nodes()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        for &k in &tri.nodes {
            touched[k] += mesh.area(t);
        }
    }
    for (a, b) in extract_interface_pairing(mesh)? {
        let avg = (touched[a] * w[a] + touched[b] * w[b]) / (touched[a] + touched[b]);
        w[a] = avg;
        w[b] = avg;
    }
    Ok(w)
}

/// Components of the `H^ε` norm of `(u, v)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyReport {
    /// `∫_{Ω1} |∇u|²`.
    pub grad_u_sq: f64,
    /// `ε² ∫_{Ω2} |∇v|²`.
    pub eps2_grad_v_sq: f64,
    /// `ε ∫_Γ (u - v)²`.
    pub jump_sq: f64,
    pub h_eps_norm: f64,
}

pub fn energy_report(sol: &MicroSolution, mesh: &Mesh) -> EnergyReport {
    let eps = mesh.eps();
    let grad_u_sq = grad_sq(mesh, &sol.u_eps.values, Region::Only(Subdomain::Matrix));
    let eps2_grad_v_sq = eps * eps * grad_sq(mesh, &sol.v_eps.values, Region::Only(Subdomain::Block));
    let jump_sq = eps * interface_jump_sq(sol, mesh);
    EnergyReport {
        grad_u_sq,
        eps2_grad_v_sq,
        jump_sq,
        h_eps_norm: (grad_u_sq + eps2_grad_v_sq + jump_sq).sqrt(),
    }
}

/// `∫_Γ (u - v)²`, exact for piecewise linear traces.
fn interface_jump_sq(sol: &MicroSolution, mesh: &Mesh) -> f64 {
    mesh.interface_edges
        .iter()
        .map(|e| {
            let d: [f64; 2] =
                std::array::from_fn(|s| sol.u_eps.values[e.matrix_nodes[s]] - sol.v_eps.values[e.block_nodes[s]]);
            let len = dist(mesh.nodes[e.block_nodes[0]], mesh.nodes[e.block_nodes[1]]);
            len / 3.0 * (d[0] * d[0] + d[0] * d[1] + d[1] * d[1])
        })
        .sum()
}

/// Largest `|u - v|` over interface pairs.
pub fn max_interface_jump(sol: &MicroSolution, mesh: &Mesh) -> Result<f64> {
    Ok(extract_interface_pairing(mesh)?
        .iter()
        .map(|&(a, b)| (sol.u_eps.values[a] - sol.v_eps.values[b]).abs())
        .fold(0.0, f64::max))
}

/// Bilinear form and load evaluated at the solution itself:
/// `(a((u,v),(u,v)), ∫f1 u + ∫f2 v)`.
pub fn energy_balance(sol: &MicroSolution, assembled: &MicroSystem) -> (f64, f64) {
    let w = combined_pressure(sol).values;
    let matrix = assembled.system.matrix();
    let form = matrix.quad_form(&w);
    let work = assembled.system.rhs.iter().zip(&w).map(|(b, x)| b * x).sum();
    (form, work)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Variables;
    use crate::fem::{integrate_field, CoefficientField};
    use crate::mesh::geometry_fingerprint;

    fn expr(s: &str) -> Expr {
        Expr::parse(s, Variables::Macro).unwrap()
    }

    fn disk(n: usize) -> CellGeometry {
        CellGeometry::disk([0.5, 0.5], 0.25, n)
    }

    fn opts() -> SolverOptions {
        SolverOptions {
            rel_tol: 1e-12,
            ..Default::default()
        }
    }

    fn standard(eps: f64, n: usize) -> MicroProblem {
        MicroProblem::new(&disk(n), eps, CellCoefficients::default(), expr("1"), expr("1")).unwrap()
    }

    #[test]
    fn zero_sources_give_zero_solution() {
        let p = MicroProblem::new(&disk(8), 0.5, CellCoefficients::default(), expr("0"), expr("0")).unwrap();
        let sol = solve_micro(&p, &opts()).unwrap();
        assert!(combined_pressure(&sol).values.iter().all(|&v| v == 0.0));
        let e = energy_report(&sol, &p.mesh);
        assert_eq!((e.grad_u_sq, e.eps2_grad_v_sq, e.jump_sq, e.h_eps_norm), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn energy_identity_holds() {
        let p = standard(0.25, 8);
        let assembled = assemble_micro(&p).unwrap();
        let k = assembled.system.matrix();
        assert!(k.max_asymmetry() <= 1e-15 * k.max_abs());
        let sol = solve_micro(&p, &opts()).unwrap();
        let (form, work) = energy_balance(&sol, &assembled);
        assert!((form - work).abs() <= 1e-8 * work.abs(), "{form} vs {work}");
        // with h = 1 the form is exactly the squared H^ε norm
        let e = energy_report(&sol, &p.mesh);
        assert!((e.h_eps_norm.powi(2) - form).abs() < 1e-10 * form);
    }

    #[test]
    fn boundary_and_field_supports() {
        let p = standard(0.25, 8);
        let sol = solve_micro(&p, &opts()).unwrap();
        let boundary = p.mesh.boundary_node_mask();
        let block = p.mesh.node_mask(Region::Only(Subdomain::Block));
        for k in 0..p.mesh.num_nodes() {
            if boundary[k] {
                assert_eq!(sol.u_eps.values[k], 0.0);
            }
            if block[k] {
                assert_eq!(sol.u_eps.values[k], 0.0);
            } else {
                assert_eq!(sol.v_eps.values[k], 0.0);
            }
        }
        let w = combined_pressure(&sol);
        let total = integrate_field(&p.mesh, &w.values, Region::All);
        let split = integrate_field(&p.mesh, &sol.u_eps.values, Region::Only(Subdomain::Matrix))
            + integrate_field(&p.mesh, &sol.v_eps.values, Region::Only(Subdomain::Block));
        assert!((total - split).abs() < 1e-15);
    }

    #[test]
    fn blocks_couple_to_fissures_only_through_their_interface() {
        let p = standard(0.25, 8);
        let mesh = &p.mesh;
        let matrix = assemble_micro(&p).unwrap().system.matrix();
        let block = mesh.node_mask(Region::Only(Subdomain::Block));
        let mut node_cell = vec![usize::MAX; mesh.num_nodes()];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            if tri.tag == Subdomain::Block {
                for &k in &tri.nodes {
                    node_cell[k] = mesh.triangle_cell[t];
                }
            }
        }
        let pairs = extract_interface_pairing(mesh).unwrap();
        let on_gamma: std::collections::HashSet<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        for i in 0..mesh.num_nodes() {
            if !block[i] {
                continue;
            }
            for (j, _) in matrix.row(i) {
                if block[j] {
                    assert_eq!(node_cell[i], node_cell[j], "blocks of different cells coupled");
                } else {
                    assert!(on_gamma.contains(&i) && on_gamma.contains(&j));
                    assert!(dist(mesh.nodes[i], mesh.nodes[j]) < 0.25 / 8.0 * 2.0);
                }
            }
        }
    }

    #[test]
    fn scalings_enter_once() {
        let eps = 0.25;
        let p = standard(eps, 8);
        let mesh = &p.mesh;
        let matrix = assemble_micro(&p).unwrap().system.matrix();
        let block = mesh.node_mask(Region::Only(Subdomain::Block));
        // constant on every block: only the interface term sees it
        let ones: Vec<f64> = block.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let gamma = mesh.interface_length();
        assert!((matrix.quad_form(&ones) - eps * gamma).abs() < 1e-12 * gamma);
        // a field vanishing on Γ: only the ε²-scaled block stiffness sees it
        let mut on_gamma = vec![false; mesh.num_nodes()];
        for e in &mesh.interface_edges {
            on_gamma[e.block_nodes[0]] = true;
            on_gamma[e.block_nodes[1]] = true;
        }
        let bump: Vec<f64> = (0..mesh.num_nodes())
            .map(|k| if block[k] && !on_gamma[k] { (7 * k % 5) as f64 } else { 0.0 })
            .collect();
        let unscaled = grad_sq(mesh, &bump, Region::Only(Subdomain::Block));
        assert!(unscaled > 0.0);
        assert!((matrix.quad_form(&bump) - eps * eps * unscaled).abs() < 1e-12 * unscaled);
    }

    #[test]
    fn stiff_interface_closes_the_jump() {
        let coeffs = CellCoefficients {
            h: CoefficientField::scalar(1e6),
            ..Default::default()
        };
        let p = MicroProblem::new(&disk(8), 0.25, coeffs, expr("1"), expr("0")).unwrap();
        // the penalty term puts the attainable residual near 1e-11
        let sol = solve_micro(&p, &SolverOptions::default()).unwrap();
        let scale = sol.u_eps.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(max_interface_jump(&sol, &p.mesh).unwrap() < 1e-4 * scale);
        let resolved = resolved_pressure(&sol, &p.mesh).unwrap();
        for (a, b) in extract_interface_pairing(&p.mesh).unwrap() {
            assert_eq!(resolved[a], resolved[b]);
        }
    }

    #[test]
    fn single_cell_pressure_is_positive_inside() {
        let p = MicroProblem::new(&disk(8), 0.5, CellCoefficients::default(), expr("1"), expr("0")).unwrap();
        let sol = solve_micro(&p, &opts()).unwrap();
        let boundary = p.mesh.boundary_node_mask();
        let w = combined_pressure(&sol);
        for k in 0..p.mesh.num_nodes() {
            if !boundary[k] {
                assert!(w.values[k] > 0.0, "node {k} at {:?}", p.mesh.nodes[k]);
            }
        }
    }

    #[test]
    fn energy_is_linear_and_bounded_across_eps() {
        let norms: Vec<f64> = [0.25, 0.125]
            .iter()
            .map(|&eps| {
                let p = standard(eps, 8);
                energy_report(&solve_micro(&p, &opts()).unwrap(), &p.mesh).h_eps_norm
            })
            .collect();
        assert!(norms[1] / norms[0] < 2.0 && norms[0] / norms[1] < 2.0, "{norms:?}");
        let p2 = MicroProblem::new(&disk(8), 0.25, CellCoefficients::default(), expr("2"), expr("2")).unwrap();
        let doubled = energy_report(&solve_micro(&p2, &opts()).unwrap(), &p2.mesh).h_eps_norm;
        assert!((doubled - 2.0 * norms[0]).abs() < 1e-9 * doubled);
    }

    #[test]
    fn total_pressure_regression() {
        // ∫_Ω w for the standard configuration at eps = 1/8, cell resolution 16;
        // a cell resolution 64 run gives 0.0775408
        const AT_16: f64 = 0.076_739_203_9;
        const AT_64: f64 = 0.077_540_800_0;
        let p = standard(0.125, 16);
        let sol = solve_micro(&p, &opts()).unwrap();
        let total = integrate_field(&p.mesh, &combined_pressure(&sol).values, Region::All);
        assert!((total - AT_16).abs() < 1e-9, "{total:.10}");
        assert!((total - AT_64).abs() < 0.015 * AT_64);
    }

    #[test]
    fn mesh_carries_the_cell_fingerprint() {
        let p = standard(0.5, 8);
        assert_eq!(p.mesh.geometry_fingerprint, geometry_fingerprint(&disk(8)));
    }
}
