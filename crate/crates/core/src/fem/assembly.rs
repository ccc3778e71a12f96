//! P1 element assembly into a global triplet system.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::fem::coefficient::CoefficientField;
use crate::fem::sparse::CsrMatrix;
use crate::geometry::Point;
use crate::mesh::{dist, Mesh, Region};

/// Global linear system under construction: summed triplets plus a
/// right-hand side, both indexed by mesh node.
#[derive(Clone, Debug, Default)]
pub struct SparseSystem {
    pub n: usize,
    pub triplets: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
}

impl SparseSystem {
    pub fn new(n: usize) -> Self {
        SparseSystem {
            n,
            triplets: Vec::new(),
            rhs: vec![0.0; n],
        }
    }

    pub fn matrix(&self) -> CsrMatrix {
        CsrMatrix::from_triplets(self.n, &self.triplets)
    }

    pub fn extend(&mut self, other: SparseSystem) {
        assert_eq!(self.n, other.n, "systems of different size");
        self.triplets.extend(other.triplets);
        for (a, b) in self.rhs.iter_mut().zip(other.rhs) {
            *a += b;
        }
    }
}

/// Adds `scale · ∫_region K ∇φ_i · ∇φ_j` with `K` evaluated once per
/// triangle at its centroid (pulled back to cell coordinates).
pub fn assemble_stiffness(
    system: &mut SparseSystem,
    mesh: &Mesh,
    coeff: &CoefficientField,
    region: Region,
    scale: f64,
) {
    system.triplets.reserve(9 * mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if !region.contains(tri.tag) {
            continue;
        }
        let k = coeff.matrix_at(mesh.cell_coordinate(mesh.centroid(t)));
        let (g, area) = mesh.gradients(t);
        for a in 0..3 {
            let kg = [
                k[0][0] * g[a][0] + k[0][1] * g[a][1],
                k[1][0] * g[a][0] + k[1][1] * g[a][1],
            ];
            for b in 0..3 {
                let v = scale * area * (kg[0] * g[b][0] + kg[1] * g[b][1]);
                system.triplets.push((tri.nodes[b], tri.nodes[a], v));
            }
        }
    }
}

/// Which traces the interface term couples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterfaceCoupling {
    /// `∫_Γ h (u - v)(φ - ψ) ds` between matrix and block copies.
    Jump,
    /// `∫_Γ h v ψ ds` on the block side only (Robin term).
    BlockTrace,
}

const GAUSS2: [(f64, f64); 2] = [
    (0.211_324_865_405_187_1, 0.5),
    (0.788_675_134_594_812_9, 0.5),
];

/// Adds `scale · ∫_Γ h (·)(·) ds` with two-point Gauss quadrature per edge.
/// Every interface node must appear in `pairs` (from
/// [`crate::mesh::extract_interface_pairing`]).
pub fn assemble_interface_mass(
    system: &mut SparseSystem,
    mesh: &Mesh,
    h: &CoefficientField,
    pairs: &[(usize, usize)],
    coupling: InterfaceCoupling,
    scale: f64,
) -> Result<()> {
    let known: HashSet<(usize, usize)> = pairs.iter().copied().collect();
    for e in &mesh.interface_edges {
        for s in 0..2 {
            if !known.contains(&(e.matrix_nodes[s], e.block_nodes[s])) {
                return Err(Error::Topology(format!(
                    "interface edge node ({}, {}) has no pairing",
                    e.matrix_nodes[s], e.block_nodes[s]
                )));
            }
        }
        let (a, b) = (mesh.nodes[e.block_nodes[0]], mesh.nodes[e.block_nodes[1]]);
        let len = dist(a, b);
        let mut mass = [[0.0; 2]; 2];
        for (t, w) in GAUSS2 {
            let x = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            let hv = h.scalar_at(mesh.cell_coordinate(x));
            let phi = [1.0 - t, t];
            for i in 0..2 {
                for j in 0..2 {
                    mass[i][j] += w * len * hv * phi[i] * phi[j];
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let m = scale * mass[i][j];
                let (ui, uj) = (e.matrix_nodes[i], e.matrix_nodes[j]);
                let (vi, vj) = (e.block_nodes[i], e.block_nodes[j]);
                match coupling {
                    InterfaceCoupling::Jump => {
                        system.triplets.push((ui, uj, m));
                        system.triplets.push((vi, vj, m));
                        system.triplets.push((ui, vj, -m));
                        system.triplets.push((vi, uj, -m));
                    }
                    InterfaceCoupling::BlockTrace => system.triplets.push((vi, vj, m)),
                }
            }
        }
    }
    Ok(())
}

/// Adds `∫_region f φ_i` to the right-hand side using the edge-midpoint
/// rule (exact for quadratics).
pub fn assemble_load(
    system: &mut SparseSystem,
    mesh: &Mesh,
    region: Region,
    f: impl Fn(Point) -> f64,
) {
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if !region.contains(tri.tag) {
            continue;
        }
        let v = mesh.vertices(t);
        let area = mesh.area(t);
        let mid = |i: usize, j: usize| f([(v[i][0] + v[j][0]) / 2.0, (v[i][1] + v[j][1]) / 2.0]);
        let (f01, f12, f20) = (mid(0, 1), mid(1, 2), mid(2, 0));
        let w = area / 6.0;
        system.rhs[tri.nodes[0]] += w * (f01 + f20);
        system.rhs[tri.nodes[1]] += w * (f01 + f12);
        system.rhs[tri.nodes[2]] += w * (f12 + f20);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CellGeometry;
    use crate::mesh::{build_epsilon_mesh, build_unit_cell_mesh, extract_interface_pairing, Subdomain};
    use rand::{Rng, SeedableRng};

    fn square(n: usize) -> Mesh {
        build_unit_cell_mesh(&CellGeometry::empty(n)).unwrap()
    }

    #[test]
    fn constants_are_in_the_kernel() {
        let mesh = square(6);
        let mut sys = SparseSystem::new(mesh.num_nodes());
        assemble_stiffness(&mut sys, &mesh, &CoefficientField::identity(), Region::All, 1.0);
        let k = sys.matrix();
        for r in k.mul_vec(&vec![1.0; mesh.num_nodes()]) {
            assert!(r.abs() < 1e-13);
        }
    }

    #[test]
    fn linear_in_coefficient_and_scale() {
        let mesh = build_unit_cell_mesh(&CellGeometry::disk([0.5, 0.5], 0.25, 8)).unwrap();
        let build = |c: &CoefficientField, s: f64| {
            let mut sys = SparseSystem::new(mesh.num_nodes());
            assemble_stiffness(&mut sys, &mesh, c, Region::Only(Subdomain::Matrix), s);
            sys.matrix()
        };
        let one = build(&CoefficientField::identity(), 1.0);
        let two = build(&CoefficientField::scalar(2.0), 1.0);
        let scaled = build(&CoefficientField::identity(), 2.0);
        assert_eq!(two, one.scaled(2.0));
        assert_eq!(scaled, one.scaled(2.0));
    }

    #[test]
    fn stiffness_is_symmetric_psd() {
        let mesh = build_unit_cell_mesh(&CellGeometry::disk([0.5, 0.5], 0.25, 12)).unwrap();
        let a = CoefficientField::ConstantMatrix {
            value: [[2.0, 0.3], [0.3, 1.0]],
        };
        let mut sys = SparseSystem::new(mesh.num_nodes());
        assemble_stiffness(&mut sys, &mesh, &a, Region::All, 1.0);
        let k = sys.matrix();
        assert!(k.max_asymmetry() <= 1e-15 * k.max_abs());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x: Vec<f64> = (0..mesh.num_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert!(k.quad_form(&x) >= -1e-12);
        }
    }

    #[test]
    fn interface_jump_energy_is_perimeter() {
        let geom = CellGeometry::disk([0.5, 0.5], 0.25, 16);
        let mesh = build_epsilon_mesh(&geom, 0.5).unwrap();
        let pairs = extract_interface_pairing(&mesh).unwrap();
        let build = |h: f64| {
            let mut sys = SparseSystem::new(mesh.num_nodes());
            assemble_interface_mass(&mut sys, &mesh, &CoefficientField::scalar(h), &pairs, InterfaceCoupling::Jump, 1.0)
                .unwrap();
            sys.matrix()
        };
        let k = build(1.0);
        let matrix_side = mesh.node_mask(Region::Only(Subdomain::Matrix));
        let x: Vec<f64> = matrix_side.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        assert!((k.quad_form(&x) - mesh.interface_length()).abs() < 1e-13);
        // equal traces annihilate the term
        let r = k.mul_vec(&vec![1.0; mesh.num_nodes()]);
        assert!(r.iter().all(|v| v.abs() < 1e-15));
        assert_eq!(build(2.0), k.scaled(2.0));
    }

    #[test]
    fn missing_pair_is_a_topology_error() {
        let geom = CellGeometry::disk([0.5, 0.5], 0.25, 16);
        let mesh = build_epsilon_mesh(&geom, 0.5).unwrap();
        let mut pairs = extract_interface_pairing(&mesh).unwrap();
        pairs.pop();
        let mut sys = SparseSystem::new(mesh.num_nodes());
        let err = assemble_interface_mass(&mut sys, &mesh, &CoefficientField::scalar(1.0), &pairs, InterfaceCoupling::Jump, 1.0);
        assert!(matches!(err, Err(Error::Topology(_))));
    }

    #[test]
    fn load_integrates_quadratics_exactly() {
        let mesh = square(5);
        let mut sys = SparseSystem::new(mesh.num_nodes());
        assemble_load(&mut sys, &mesh, Region::All, |p| p[0] * p[0]);
        let total: f64 = sys.rhs.iter().sum();
        assert!((total - 1.0 / 3.0).abs() < 1e-14);
    }
}
