//! Integrals and norms of P1 fields and analytic functions.

use crate::geometry::Point;
use crate::mesh::{dist, Mesh, Region};

/// Degree-4 six-point rule on triangles: barycentric point and weight
/// (weights sum to one).
pub const TRI_DEG4: [([f64; 3], f64); 6] = {
    const A: f64 = 0.445_948_490_915_965;
    const B: f64 = 0.091_576_213_509_771;
    const WA: f64 = 0.223_381_589_678_011;
    const WB: f64 = 0.109_951_743_655_322;
    [
        ([A, A, 1.0 - 2.0 * A], WA),
        ([A, 1.0 - 2.0 * A, A], WA),
        ([1.0 - 2.0 * A, A, A], WA),
        ([B, B, 1.0 - 2.0 * B], WB),
        ([B, 1.0 - 2.0 * B, B], WB),
        ([1.0 - 2.0 * B, B, B], WB),
    ]
};

#[inline]
pub fn barycentric_point(v: &[Point; 3], l: [f64; 3]) -> Point {
    [
        l[0] * v[0][0] + l[1] * v[1][0] + l[2] * v[2][0],
        l[0] * v[0][1] + l[1] * v[1][1] + l[2] * v[2][1],
    ]
}

/// Which copy of the interface trace to read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterfaceSide {
    Matrix,
    Block,
}

/// `∫_region u` for a nodal P1 field (exact).
pub fn integrate_field(mesh: &Mesh, values: &[f64], region: Region) -> f64 {
    mesh.triangles
        .iter()
        .enumerate()
        .filter(|(_, tri)| region.contains(tri.tag))
        .map(|(t, tri)| {
            let [a, b, c] = tri.nodes;
            mesh.area(t) * (values[a] + values[b] + values[c]) / 3.0
        })
        .sum()
}

/// `∫_Γ u ds` for a nodal P1 field (trapezoid rule, exact).
pub fn integrate_interface(mesh: &Mesh, values: &[f64], side: InterfaceSide) -> f64 {
    mesh.interface_edges
        .iter()
        .map(|e| {
            let [a, b] = match side {
                InterfaceSide::Matrix => e.matrix_nodes,
                InterfaceSide::Block => e.block_nodes,
            };
            0.5 * dist(mesh.nodes[a], mesh.nodes[b]) * (values[a] + values[b])
        })
        .sum()
}

/// `∫_region f` by the degree-4 rule.
pub fn integrate_fn(mesh: &Mesh, region: Region, f: impl Fn(Point) -> f64) -> f64 {
    let mut total = 0.0;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if !region.contains(tri.tag) {
            continue;
        }
        let v = mesh.vertices(t);
        let area = mesh.area(t);
        total += area
            * TRI_DEG4
                .iter()
                .map(|&(l, w)| w * f(barycentric_point(&v, l)))
                .sum::<f64>();
    }
    total
}

/// `‖u‖_{L²(region)}` for a nodal P1 field (exact).
pub fn l2_norm(mesh: &Mesh, values: &[f64], region: Region) -> f64 {
    let mut total = 0.0;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if !region.contains(tri.tag) {
            continue;
        }
        let [a, b, c] = tri.nodes.map(|k| values[k]);
        total += mesh.area(t) / 6.0 * (a * a + b * b + c * c + a * b + b * c + c * a);
    }
    total.sqrt()
}

/// `‖u_h - u‖_{L²(region)}` against an analytic `u`, degree-4 rule.
pub fn l2_error(mesh: &Mesh, values: &[f64], region: Region, exact: impl Fn(Point) -> f64) -> f64 {
    let mut total = 0.0;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if !region.contains(tri.tag) {
            continue;
        }
        let v = mesh.vertices(t);
        let nodal = tri.nodes.map(|k| values[k]);
        let area = mesh.area(t);
        for &(l, w) in &TRI_DEG4 {
            let uh = l[0] * nodal[0] + l[1] * nodal[1] + l[2] * nodal[2];
            let d = uh - exact(barycentric_point(&v, l));
            total += area * w * d * d;
        }
    }
    total.sqrt()
}

/// `∫_region |∇u|²` for a nodal P1 field.
pub fn grad_sq(mesh: &Mesh, values: &[f64], region: Region) -> f64 {
    let mut total = 0.0;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if !region.contains(tri.tag) {
            continue;
        }
        let (g, area) = mesh.gradients(t);
        let mut grad = [0.0; 2];
        for a in 0..3 {
            grad[0] += values[tri.nodes[a]] * g[a][0];
            grad[1] += values[tri.nodes[a]] * g[a][1];
        }
        total += area * (grad[0] * grad[0] + grad[1] * grad[1]);
    }
    total
}

/// Lumped nodal weights `w_i = Σ_{T ∋ i} |T|/3` over `region`, so that
/// `Σ w_i u_i = ∫_region u` for P1 fields.
pub fn nodal_weights(mesh: &Mesh, region: Region) -> Vec<f64> {
    let mut w = vec![0.0; mesh.num_nodes()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if region.contains(tri.tag) {
            let a = mesh.area(t) / 3.0;
            for &k in &tri.nodes {
                w[k] += a;
            }
        }
    }
    w
}
