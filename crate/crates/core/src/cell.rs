//! Unit-cell problems and the homogenized coefficients.
//!
//! Two independent problems are solved on the same unit-cell mesh:
//!
//! * the correctors `ω_j ∈ H¹_#(Y1)/ℝ`, periodic on `∂Y`, with the natural
//!   (no-flux) condition on the interface, which build the effective
//!   permeability `a_ij = ∫_{Y1} A(∇ω_i + e_i)·(∇ω_j + e_j)`;
//! * the block response `α` solving `-div(B∇α) = 1` in `Y2` with
//!   `B∇α·ν = hα` on `Γ`. Since `ν` points out of `Y1`, i.e. into `Y2`, the
//!   outward flux of the block is `-hα` and the weak form picks up
//!   `+∫_Γ hαζ`, which makes the block problem coercive on its own.
//!
//! `α` yields the extra source weight `α̂ = ∫_Γ α ds` and the boundary lift
//! weight `∫_{Y2} α`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fem::{
    apply_constraints, assemble_interface_mass, assemble_load, assemble_stiffness, integrate_field,
    integrate_interface, nodal_weights, solve_spd, CoefficientField, Constraints, FieldSolution,
    InterfaceCoupling, InterfaceSide, Mat2, SolverOptions, SparseSystem,
};
use crate::geometry::CellGeometry;
use crate::mesh::{
    build_periodic_map, build_unit_cell_mesh, extract_interface_pairing, Mesh, PeriodicMap, Region,
    Subdomain,
};

/// Permeabilities of the two systems and of the interfacial layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellCoefficients {
    /// Fissure permeability `A`.
    #[serde(rename = "A", default = "CoefficientField::identity")]
    pub a: CoefficientField,
    /// Block permeability `B` (before the ε² scaling).
    #[serde(rename = "B", default = "CoefficientField::identity")]
    pub b: CoefficientField,
    /// Interface exchange coefficient `h` (before the ε scaling).
    #[serde(default = "unit_scalar")]
    pub h: CoefficientField,
}

fn unit_scalar() -> CoefficientField {
    CoefficientField::scalar(1.0)
}

impl Default for CellCoefficients {
    fn default() -> Self {
        CellCoefficients {
            a: CoefficientField::identity(),
            b: CoefficientField::identity(),
            h: unit_scalar(),
        }
    }
}

/// Unit-cell mesh together with its periodic identification.
#[derive(Clone, Debug)]
pub struct UnitCell {
    pub geometry: CellGeometry,
    pub mesh: Mesh,
    pub periodic: PeriodicMap,
}

impl UnitCell {
    pub fn new(geometry: &CellGeometry) -> Result<Self> {
        let mesh = build_unit_cell_mesh(geometry)?;
        let periodic = build_periodic_map(&mesh)?;
        Ok(UnitCell {
            geometry: geometry.clone(),
            mesh,
            periodic,
        })
    }
}

/// Identifies the (geometry, coefficients, resolution) triple that produced
/// a set of cell data.
pub fn provenance_fingerprint(geometry: &CellGeometry, coeffs: &CellCoefficients) -> String {
    let json = serde_json::to_string(&(geometry, coeffs)).expect("cell data serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Corrector `ω_j` for direction `j ∈ {0, 1}`: periodic, zero mean on `Y1`.
pub fn solve_corrector(
    j: usize,
    cell: &UnitCell,
    a: &CoefficientField,
    opts: &SolverOptions,
) -> Result<FieldSolution> {
    if j > 1 {
        return Err(Error::Argument(format!("direction index {j} out of range")));
    }
    let mesh = &cell.mesh;
    let matrix = Region::Only(Subdomain::Matrix);
    a.check_ellipticity(mesh, matrix)?;

    let mut system = SparseSystem::new(mesh.num_nodes());
    assemble_stiffness(&mut system, mesh, a, matrix, 1.0);
    // right-hand side -∫ A e_j · ∇ζ
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if tri.tag != Subdomain::Matrix {
            continue;
        }
        let k = a.matrix_at(mesh.cell_coordinate(mesh.centroid(t)));
        let flux = [k[0][j], k[1][j]];
        let (g, area) = mesh.gradients(t);
        for v in 0..3 {
            system.rhs[tri.nodes[v]] -= area * (flux[0] * g[v][0] + flux[1] * g[v][1]);
        }
    }
    let constraints = Constraints {
        active: Some(mesh.node_mask(matrix)),
        mean_zero: Some(nodal_weights(mesh, matrix)),
        ..Default::default()
    }
    .with_periodic(&cell.periodic);
    solve_spd(&apply_constraints(&system, &constraints)?, opts)
}

fn check_omegas(omegas: &[FieldSolution; 2], mesh: &Mesh) -> Result<()> {
    if omegas.iter().any(|w| w.len() != mesh.num_nodes()) {
        return Err(Error::Argument(
            "corrector fields were not computed on this mesh".into(),
        ));
    }
    Ok(())
}

fn corrected_gradients(omegas: &[FieldSolution; 2], mesh: &Mesh, t: usize) -> ([f64; 2], [[f64; 2]; 2]) {
    let (g, area) = mesh.gradients(t);
    let nodes = mesh.triangles[t].nodes;
    let mut out = [[0.0; 2]; 2];
    for (i, w) in omegas.iter().enumerate() {
        out[i][i] = 1.0;
        for v in 0..3 {
            out[i][0] += w.values[nodes[v]] * g[v][0];
            out[i][1] += w.values[nodes[v]] * g[v][1];
        }
    }
    ([area, 0.0], out)
}

/// Energy form `a_ij = ∫_{Y1} A(∇ω_i + e_i)·(∇ω_j + e_j)`, evaluated as a
/// bilinear form (no symmetrization).
pub fn homogenized_tensor(omegas: &[FieldSolution; 2], mesh: &Mesh, a: &CoefficientField) -> Result<Mat2> {
    check_omegas(omegas, mesh)?;
    let mut out = [[0.0; 2]; 2];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if tri.tag != Subdomain::Matrix {
            continue;
        }
        let k = a.matrix_at(mesh.cell_coordinate(mesh.centroid(t)));
        let ([area, _], d) = corrected_gradients(omegas, mesh, t);
        for i in 0..2 {
            for j in 0..2 {
                let kd = [
                    k[0][0] * d[j][0] + k[0][1] * d[j][1],
                    k[1][0] * d[j][0] + k[1][1] * d[j][1],
                ];
                out[i][j] += area * (d[i][0] * kd[0] + d[i][1] * kd[1]);
            }
        }
    }
    Ok(out)
}

/// Flux form `∫_{Y1} A(∇ω_j + e_j)·e_i`; equals the energy form when the
/// correctors solve the cell problem.
pub fn flux_tensor(omegas: &[FieldSolution; 2], mesh: &Mesh, a: &CoefficientField) -> Result<Mat2> {
    check_omegas(omegas, mesh)?;
    let mut out = [[0.0; 2]; 2];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if tri.tag != Subdomain::Matrix {
            continue;
        }
        let k = a.matrix_at(mesh.cell_coordinate(mesh.centroid(t)));
        let ([area, _], d) = corrected_gradients(omegas, mesh, t);
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] += area * (k[i][0] * d[j][0] + k[i][1] * d[j][1]);
            }
        }
    }
    Ok(out)
}

/// Block response `α` (Robin problem on `Y2`).
pub fn solve_alpha(
    cell: &UnitCell,
    b: &CoefficientField,
    h: &CoefficientField,
    opts: &SolverOptions,
) -> Result<FieldSolution> {
    let mesh = &cell.mesh;
    if !mesh.has_block() {
        return Err(Error::Geometry("the cell has no block; α is undefined".into()));
    }
    let block = Region::Only(Subdomain::Block);
    b.check_ellipticity(mesh, block)?;
    h.check_positive(mesh)?;

    let pairs = extract_interface_pairing(mesh)?;
    let mut system = SparseSystem::new(mesh.num_nodes());
    assemble_stiffness(&mut system, mesh, b, block, 1.0);
    assemble_interface_mass(&mut system, mesh, h, &pairs, InterfaceCoupling::BlockTrace, 1.0)?;
    assemble_load(&mut system, mesh, block, |_| 1.0);
    let constraints = Constraints {
        active: Some(mesh.node_mask(block)),
        ..Default::default()
    };
    solve_spd(&apply_constraints(&system, &constraints)?, opts)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaFunctionals {
    /// `∫_Γ α ds`.
    pub alpha_hat: f64,
    /// `∫_{Y2} α`.
    pub alpha_bulk: f64,
    /// `|Y1|`.
    pub y1_volume: f64,
}

pub fn alpha_functionals(alpha: &FieldSolution, mesh: &Mesh) -> AlphaFunctionals {
    AlphaFunctionals {
        alpha_hat: integrate_interface(mesh, &alpha.values, InterfaceSide::Block),
        alpha_bulk: integrate_field(mesh, &alpha.values, Region::Only(Subdomain::Block)),
        y1_volume: mesh.subdomain_area(Region::Only(Subdomain::Matrix)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub fingerprint: String,
    pub geometry_fingerprint: String,
    pub geometry: CellGeometry,
    pub coefficients: CellCoefficients,
}

/// Everything the macroscopic problem needs from the cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomogenizedData {
    pub a_h: Mat2,
    pub alpha_hat: f64,
    pub alpha_bulk: f64,
    pub y1_volume: f64,
    pub provenance: Provenance,
}

impl HomogenizedData {
    /// Structural checks: symmetric positive definite tensor, non-negative
    /// α functionals (positive when a block is present), and a consistent
    /// fingerprint.
    pub fn validate(&self) -> Result<()> {
        let a = &self.a_h;
        let scale = a.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
        if a.iter().flatten().any(|v| !v.is_finite()) || scale == 0.0 {
            return Err(Error::validation("a_h", "entries must be finite and not all zero"));
        }
        if (a[0][1] - a[1][0]).abs() > 1e-10 * scale {
            return Err(Error::validation("a_h", "tensor is not symmetric"));
        }
        if !(crate::fem::coefficient::min_eigenvalue(a) > 0.0) {
            return Err(Error::validation("a_h", "tensor is not positive definite"));
        }
        let has_block = self.provenance.geometry.block.is_some();
        for (name, v) in [("alpha_hat", self.alpha_hat), ("alpha_bulk", self.alpha_bulk)] {
            if !v.is_finite() || v < 0.0 || (has_block && v == 0.0) {
                return Err(Error::validation(name, format!("invalid value {v}")));
            }
        }
        if !(self.y1_volume > 0.0 && self.y1_volume <= 1.0) {
            return Err(Error::validation("y1_volume", format!("must lie in (0, 1], got {}", self.y1_volume)));
        }
        let expected = provenance_fingerprint(&self.provenance.geometry, &self.provenance.coefficients);
        if expected != self.provenance.fingerprint {
            return Err(Error::validation("provenance.fingerprint", "does not match geometry and coefficients"));
        }
        Ok(())
    }
}

/// Solved cell fields; `alpha` is absent when the cell has no block.
#[derive(Clone, Debug)]
pub struct CellSolution {
    pub omega: [FieldSolution; 2],
    pub alpha: Option<FieldSolution>,
    pub geometry_fingerprint: String,
}

/// Solves both correctors and the α problem (concurrently) and assembles
/// the homogenized data.
pub fn solve_cell_problems(
    geometry: &CellGeometry,
    coeffs: &CellCoefficients,
    opts: &SolverOptions,
) -> Result<(UnitCell, CellSolution, HomogenizedData)> {
    let cell = UnitCell::new(geometry)?;
    let ((w0, w1), alpha) = rayon::join(
        || {
            rayon::join(
                || solve_corrector(0, &cell, &coeffs.a, opts),
                || solve_corrector(1, &cell, &coeffs.a, opts),
            )
        },
        || {
            if cell.mesh.has_block() {
                solve_alpha(&cell, &coeffs.b, &coeffs.h, opts).map(Some)
            } else {
                Ok(None)
            }
        },
    );
    let omega = [w0?, w1?];
    let alpha = alpha?;
    let a_h = homogenized_tensor(&omega, &cell.mesh, &coeffs.a)?;
    let functionals = match &alpha {
        Some(al) => alpha_functionals(al, &cell.mesh),
        None => AlphaFunctionals {
            alpha_hat: 0.0,
            alpha_bulk: 0.0,
            y1_volume: cell.mesh.subdomain_area(Region::Only(Subdomain::Matrix)),
        },
    };
    let data = HomogenizedData {
        a_h,
        alpha_hat: functionals.alpha_hat,
        alpha_bulk: functionals.alpha_bulk,
        y1_volume: functionals.y1_volume,
        provenance: Provenance {
            fingerprint: provenance_fingerprint(geometry, coeffs),
            geometry_fingerprint: cell.mesh.geometry_fingerprint.clone(),
            geometry: geometry.clone(),
            coefficients: coeffs.clone(),
        },
    };
    let solution = CellSolution {
        omega,
        alpha,
        geometry_fingerprint: cell.mesh.geometry_fingerprint.clone(),
    };
    Ok((cell, solution, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::dist;

    const R: f64 = 0.25;

    fn opts() -> SolverOptions {
        SolverOptions {
            rel_tol: 1e-12,
            ..Default::default()
        }
    }

    fn radial_alpha(r: f64, h: f64) -> f64 {
        R / (2.0 * h) + (R * R - r * r) / 4.0
    }

    #[test]
    fn empty_cell_has_identity_tensor() {
        let cell = UnitCell::new(&CellGeometry::empty(8)).unwrap();
        let a = CoefficientField::identity();
        let w0 = solve_corrector(0, &cell, &a, &opts()).unwrap();
        assert!(w0.values.iter().all(|v| v.abs() < 1e-12));
        let w1 = solve_corrector(1, &cell, &a, &opts()).unwrap();
        let ah = homogenized_tensor(&[w0, w1], &cell.mesh, &a).unwrap();
        assert!((ah[0][0] - 1.0).abs() < 1e-12 && (ah[1][1] - 1.0).abs() < 1e-12);
        assert!(ah[0][1].abs() < 1e-12);
    }

    #[test]
    fn layered_corrector_depends_on_y1_only() {
        let cell = UnitCell::new(&CellGeometry::empty(16)).unwrap();
        let a = CoefficientField::layered(vec![1.0, 4.0], 0);
        let w = solve_corrector(0, &cell, &a, &opts()).unwrap();
        // closed form: piecewise linear with flux a(ω' + 1) = harmonic mean 1.6
        let omega = |y: f64| if y <= 0.5 { 0.6 * y } else { 0.3 - 0.6 * (y - 0.5) };
        let mean = 0.15; // ∫ omega over the cell before the mean shift
        for (k, p) in cell.mesh.nodes.iter().enumerate() {
            assert!((w.values[k] - (omega(p[0]) - mean)).abs() < 1e-9, "node {p:?}");
        }
        let w1 = solve_corrector(1, &cell, &a, &opts()).unwrap();
        assert!(w1.values.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn disk_corrector_is_odd_about_midplane() {
        let cell = UnitCell::new(&CellGeometry::disk([0.5, 0.5], R, 16)).unwrap();
        let w = solve_corrector(0, &cell, &CoefficientField::identity(), &opts()).unwrap();
        let mask = cell.mesh.node_mask(Region::Only(Subdomain::Matrix));
        let mut checked = 0;
        for (k, p) in cell.mesh.nodes.iter().enumerate() {
            if !mask[k] {
                continue;
            }
            let mirror = [1.0 - p[0], p[1]];
            let q = (0..cell.mesh.num_nodes())
                .find(|&q| mask[q] && dist(cell.mesh.nodes[q], mirror) < 1e-12)
                .expect("mesh is mirror symmetric");
            // the periodic faces x = 0 and x = 1 carry the same value, which must vanish
            assert!((w.values[k] + w.values[q]).abs() < 1e-8, "{p:?}");
            checked += 1;
        }
        assert!(checked > 100);
    }

    #[test]
    fn alpha_matches_radial_solution() {
        let cell = UnitCell::new(&CellGeometry::disk([0.5, 0.5], R, 32)).unwrap();
        let alpha = solve_alpha(&cell, &CoefficientField::identity(), &CoefficientField::scalar(1.0), &opts()).unwrap();
        let mask = cell.mesh.node_mask(Region::Only(Subdomain::Block));
        let mut worst = 0.0_f64;
        for (k, p) in cell.mesh.nodes.iter().enumerate() {
            if mask[k] {
                let r = (p[0] - 0.5).hypot(p[1] - 0.5);
                worst = worst.max((alpha.values[k] - radial_alpha(r, 1.0)).abs());
            }
        }
        assert!(worst < 5e-3, "max nodal error {worst:e}");
        let f = alpha_functionals(&alpha, &cell.mesh);
        assert!((f.alpha_hat - 0.196_350).abs() < 2e-3);
        assert!((f.alpha_bulk - 0.026_077_7).abs() < 3e-4);
        assert!((f.y1_volume - 0.803_65).abs() < 5e-3);
    }

    #[test]
    fn alpha_scaling_and_stiff_limit() {
        let cell = UnitCell::new(&CellGeometry::disk([0.5, 0.5], R, 16)).unwrap();
        let base = solve_alpha(&cell, &CoefficientField::identity(), &CoefficientField::scalar(1.0), &opts()).unwrap();
        let half = solve_alpha(&cell, &CoefficientField::scalar(2.0), &CoefficientField::scalar(2.0), &opts()).unwrap();
        for (a, b) in base.values.iter().zip(&half.values) {
            assert!((a - 2.0 * b).abs() < 1e-10);
        }
        let stiff = solve_alpha(&cell, &CoefficientField::identity(), &CoefficientField::scalar(1e6), &opts()).unwrap();
        for e in &cell.mesh.interface_edges {
            assert!(stiff.values[e.block_nodes[0]].abs() < 1e-5);
        }
        // h = 2: α̂ = πR²/h
        let h2 = solve_alpha(&cell, &CoefficientField::identity(), &CoefficientField::scalar(2.0), &opts()).unwrap();
        let f = alpha_functionals(&h2, &cell.mesh);
        assert!((f.alpha_hat - 0.098_175).abs() < 2e-3);
        assert!(base.values.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn alpha_needs_a_block() {
        let cell = UnitCell::new(&CellGeometry::empty(8)).unwrap();
        let err = solve_alpha(&cell, &CoefficientField::identity(), &CoefficientField::scalar(1.0), &opts());
        assert!(matches!(err, Err(Error::Geometry(_))));
    }

    #[test]
    fn zero_alpha_functionals() {
        let cell = UnitCell::new(&CellGeometry::disk([0.5, 0.5], R, 16)).unwrap();
        let f = alpha_functionals(&FieldSolution::zeros(cell.mesh.num_nodes()), &cell.mesh);
        assert_eq!(f.alpha_hat, 0.0);
        assert_eq!(f.alpha_bulk, 0.0);
        assert_eq!(f.y1_volume, cell.mesh.subdomain_area(Region::Only(Subdomain::Matrix)));
    }

    #[test]
    fn mismatched_corrector_fields_are_rejected() {
        let cell = UnitCell::new(&CellGeometry::empty(8)).unwrap();
        let bad = [FieldSolution::zeros(3), FieldSolution::zeros(3)];
        assert!(matches!(
            homogenized_tensor(&bad, &cell.mesh, &CoefficientField::identity()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn homogenized_data_validation() {
        let geom = CellGeometry::disk([0.5, 0.5], R, 16);
        let (_, _, data) = solve_cell_problems(&geom, &CellCoefficients::default(), &opts()).unwrap();
        data.validate().unwrap();
        let mut bad = data.clone();
        bad.a_h[0][1] += 1e-3;
        assert!(bad.validate().is_err());
        let mut bad = data.clone();
        bad.alpha_hat = -1.0;
        assert!(bad.validate().is_err());
        let mut bad = data;
        bad.provenance.coefficients.h = CoefficientField::scalar(2.0);
        assert!(bad.validate().is_err());
    }
}
