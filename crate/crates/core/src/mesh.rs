//! Conforming P1 triangulations of the unit cell and of the ε-tiled domain.
//!
//! The unit-cell mesher starts from a symmetric "union-jack" background grid
//! (so the mesh inherits the square's mirror symmetries), snaps grid nodes
//! that lie close to the block boundary onto it, and splits the remaining
//! cut triangles at the exact boundary crossings. Nodes on `∂Y` are never
//! moved, so opposite faces match bit for bit.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{BlockShape, CellGeometry, Point};

/// Nodes closer than this fraction of the grid spacing to the block
/// boundary are projected onto it. Below `1/(2√2)` snapping cannot invert a
/// background triangle.
const SNAP_FRACTION: f64 = 0.3;

/// Coordinate tolerance for periodic face matching.
pub const FACE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subdomain {
    /// Fissure system `Y1` / `Ω1^ε`.
    Matrix = 1,
    /// Porous blocks `Y2` / `Ω2^ε`.
    Block = 2,
}

impl TryFrom<u8> for Subdomain {
    type Error = Error;

    fn try_from(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(Subdomain::Matrix),
            2 => Ok(Subdomain::Block),
            t => Err(Error::Argument(format!("unknown subdomain tag {t}"))),
        }
    }
}

/// Integration region for assembly and quadrature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    All,
    Only(Subdomain),
}

impl Region {
    #[inline]
    pub fn contains(self, tag: Subdomain) -> bool {
        match self {
            Region::All => true,
            Region::Only(s) => s == tag,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triangle {
    pub nodes: [usize; 3],
    pub tag: Subdomain,
}

/// One edge of the matrix/block interface.
///
/// `matrix_nodes` and `block_nodes` are the same points; on the unit-cell
/// mesh they are the same node ids, on the ε-mesh the block side carries its
/// own duplicated copies. `normal` points out of the matrix into the block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterfaceEdge {
    pub matrix_nodes: [usize; 2],
    pub block_nodes: [usize; 2],
    pub matrix_triangle: usize,
    pub block_triangle: usize,
    pub normal: Point,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub nodes: Vec<Point>,
    pub triangles: Vec<Triangle>,
    pub interface_edges: Vec<InterfaceEdge>,
    pub boundary_edges: Vec<[usize; 2]>,
    /// Number of ε-cells per side (1 for the unit cell and macro meshes).
    pub cells_per_side: usize,
    /// Unit-cell node each node was copied from (identity on the unit cell).
    pub node_origin: Vec<usize>,
    /// Row-major ε-cell index of each triangle.
    pub triangle_cell: Vec<usize>,
    /// Hash of the generating `CellGeometry`.
    pub geometry_fingerprint: String,
}

impl Mesh {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn eps(&self) -> f64 {
        1.0 / self.cells_per_side as f64
    }

    #[inline]
    pub fn vertices(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t].nodes;
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    /// Signed area (positive for counter-clockwise triangles).
    #[inline]
    pub fn signed_area(&self, t: usize) -> f64 {
        signed_area(self.vertices(t))
    }

    #[inline]
    pub fn area(&self, t: usize) -> f64 {
        self.signed_area(t).abs()
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.vertices(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Gradients of the three P1 hat functions on triangle `t` and its area.
    pub fn gradients(&self, t: usize) -> ([Point; 3], f64) {
        let [a, b, c] = self.vertices(t);
        let twice = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let inv = 1.0 / twice;
        let g = [
            [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv],
            [(c[1] - a[1]) * inv, (a[0] - c[0]) * inv],
            [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv],
        ];
        (g, 0.5 * twice.abs())
    }

    /// Cell coordinate `y = frac(x/ε)` used for periodic coefficient pullback.
    #[inline]
    pub fn cell_coordinate(&self, x: Point) -> Point {
        let m = self.cells_per_side as f64;
        let f = |v: f64| {
            let s = v * m;
            s - s.floor()
        };
        [f(x[0]), f(x[1])]
    }

    /// Nodes touched by at least one triangle of `region`.
    pub fn node_mask(&self, region: Region) -> Vec<bool> {
        let mut mask = vec![false; self.nodes.len()];
        for tri in &self.triangles {
            if region.contains(tri.tag) {
                for &n in &tri.nodes {
                    mask[n] = true;
                }
            }
        }
        mask
    }

    pub fn subdomain_area(&self, region: Region) -> f64 {
        (0..self.triangles.len())
            .filter(|&t| region.contains(self.triangles[t].tag))
            .map(|t| self.area(t))
            .sum()
    }

    pub fn interface_length(&self) -> f64 {
        self.interface_edges
            .iter()
            .map(|e| dist(self.nodes[e.matrix_nodes[0]], self.nodes[e.matrix_nodes[1]]))
            .sum()
    }

    pub fn has_block(&self) -> bool {
        self.triangles.iter().any(|t| t.tag == Subdomain::Block)
    }

    /// Nodes on the outer boundary (`∂Y` or `∂Ω`).
    pub fn boundary_node_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.nodes.len()];
        for e in &self.boundary_edges {
            mask[e[0]] = true;
            mask[e[1]] = true;
        }
        mask
    }

    /// Every interface node has exactly two interface edges, i.e. the
    /// interface is a union of closed simple polylines.
    pub fn check_interface_closed(&self) -> Result<()> {
        let mut degree: HashMap<usize, usize> = HashMap::new();
        for e in &self.interface_edges {
            *degree.entry(e.matrix_nodes[0]).or_default() += 1;
            *degree.entry(e.matrix_nodes[1]).or_default() += 1;
        }
        match degree.iter().find(|(_, &d)| d != 2) {
            Some((node, d)) => Err(Error::Topology(format!(
                "interface node {node} has {d} interface edges, expected 2"
            ))),
            None => Ok(()),
        }
    }
}

#[inline]
pub fn signed_area(v: [Point; 3]) -> f64 {
    let [a, b, c] = v;
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn geometry_fingerprint(geom: &CellGeometry) -> String {
    let json = serde_json::to_string(geom).expect("geometry serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Conforming triangulation of `Y = (0,1)^2` with the block recovered by
/// node snapping and edge splitting.
pub fn build_unit_cell_mesh(geom: &CellGeometry) -> Result<Mesh> {
    geom.validate()?;
    let n = geom.resolution;
    let spacing = 1.0 / n as f64;
    let grid = |i: usize, j: usize| j * (n + 1) + i;

    let mut nodes: Vec<Point> = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            nodes.push([i as f64 / n as f64, j as f64 / n as f64]);
        }
    }
    let mut background: Vec<[usize; 3]> = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (p00, p10, p01, p11) = (grid(i, j), grid(i + 1, j), grid(i, j + 1), grid(i + 1, j + 1));
            if (i + j) % 2 == 0 {
                background.push([p00, p10, p11]);
                background.push([p00, p11, p01]);
            } else {
                background.push([p00, p10, p01]);
                background.push([p10, p11, p01]);
            }
        }
    }

    let triangles = match &geom.block {
        None => background
            .into_iter()
            .map(|nodes| Triangle {
                nodes,
                tag: Subdomain::Matrix,
            })
            .collect(),
        Some(block) => recover_block(block, spacing, &mut nodes, &background),
    };

    let mut mesh = Mesh {
        node_origin: (0..nodes.len()).collect(),
        triangle_cell: vec![0; triangles.len()],
        nodes,
        triangles,
        interface_edges: Vec::new(),
        boundary_edges: Vec::new(),
        cells_per_side: 1,
        geometry_fingerprint: geometry_fingerprint(geom),
    };
    classify_edges(&mut mesh)?;
    validate_mesh(&mesh)?;
    Ok(mesh)
}

fn sign(v: f64) -> i8 {
    if v == 0.0 {
        0
    } else if v < 0.0 {
        -1
    } else {
        1
    }
}

fn recover_block(
    block: &BlockShape,
    spacing: f64,
    nodes: &mut Vec<Point>,
    background: &[[usize; 3]],
) -> Vec<Triangle> {
    let mut level: Vec<f64> = nodes.iter().map(|&p| block.level(p)).collect();
    for (p, phi) in nodes.iter_mut().zip(level.iter_mut()) {
        if phi.abs() < SNAP_FRACTION * spacing {
            *p = block.project(*p);
            *phi = 0.0;
        }
    }
    let mut signs: Vec<i8> = level.iter().map(|&v| sign(v)).collect();
    let mut cut_nodes: HashMap<(usize, usize), usize> = HashMap::new();
    let mut out = Vec::with_capacity(background.len() + background.len() / 4);

    for tri in background {
        let s = tri.map(|k| signs[k]);
        let crossed = (0..3).any(|e| s[e] * s[(e + 1) % 3] < 0);
        if !crossed {
            let tag = if s.iter().any(|&v| v < 0) {
                Subdomain::Block
            } else if s.iter().any(|&v| v > 0) {
                Subdomain::Matrix
            } else {
                let c = centroid(tri.map(|k| nodes[k]));
                if block.level(c) < 0.0 {
                    Subdomain::Block
                } else {
                    Subdomain::Matrix
                }
            };
            out.push(Triangle { nodes: *tri, tag });
            continue;
        }

        // walk the boundary, inserting crossing nodes on cut edges
        let mut polygon: Vec<usize> = Vec::with_capacity(5);
        for e in 0..3 {
            let (p, q) = (tri[e], tri[(e + 1) % 3]);
            polygon.push(p);
            if signs[p] * signs[q] < 0 {
                let key = (p.min(q), p.max(q));
                let id = *cut_nodes.entry(key).or_insert_with(|| {
                    nodes.push(block.crossing(nodes[key.0], nodes[key.1]));
                    signs.push(0);
                    nodes.len() - 1
                });
                polygon.push(id);
            }
        }
        for (want, tag) in [(-1_i8, Subdomain::Block), (1, Subdomain::Matrix)] {
            let piece: Vec<usize> = polygon
                .iter()
                .copied()
                .filter(|&k| signs[k] == 0 || signs[k] == want)
                .collect();
            match piece.len() {
                3 => out.push(Triangle {
                    nodes: [piece[0], piece[1], piece[2]],
                    tag,
                }),
                4 => {
                    let d02 = dist(nodes[piece[0]], nodes[piece[2]]);
                    let d13 = dist(nodes[piece[1]], nodes[piece[3]]);
                    let (a, b) = if d02 <= d13 {
                        ([piece[0], piece[1], piece[2]], [piece[0], piece[2], piece[3]])
                    } else {
                        ([piece[1], piece[2], piece[3]], [piece[1], piece[3], piece[0]])
                    };
                    out.push(Triangle { nodes: a, tag });
                    out.push(Triangle { nodes: b, tag });
                }
                _ => unreachable!("a line cuts a triangle into a triangle and a quadrilateral"),
            }
        }
    }
    out
}

fn centroid(v: [Point; 3]) -> Point {
    [(v[0][0] + v[1][0] + v[2][0]) / 3.0, (v[0][1] + v[1][1] + v[2][1]) / 3.0]
}

/// Fills `interface_edges` and `boundary_edges` from triangle adjacency.
/// Only meaningful for meshes without duplicated interface nodes.
fn classify_edges(mesh: &mut Mesh) -> Result<()> {
    let mut edges: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        for e in 0..3 {
            let (a, b) = (tri.nodes[e], tri.nodes[(e + 1) % 3]);
            edges.entry((a.min(b), a.max(b))).or_default().push(t);
        }
    }
    let mut keys: Vec<_> = edges.keys().copied().collect();
    keys.sort_unstable();
    for key in keys {
        let tris = &edges[&key];
        match tris.as_slice() {
            [_] => mesh.boundary_edges.push([key.0, key.1]),
            [t0, t1] => {
                let (g0, g1) = (mesh.triangles[*t0].tag, mesh.triangles[*t1].tag);
                if g0 == g1 {
                    continue;
                }
                let (mt, bt) = if g0 == Subdomain::Matrix { (*t0, *t1) } else { (*t1, *t0) };
                let (a, b) = (mesh.nodes[key.0], mesh.nodes[key.1]);
                let len = dist(a, b);
                let mut normal = [(b[1] - a[1]) / len, -(b[0] - a[0]) / len];
                let opposite = mesh.triangles[bt]
                    .nodes
                    .iter()
                    .copied()
                    .find(|&k| k != key.0 && k != key.1)
                    .expect("triangle has a third vertex");
                let to_opp = [mesh.nodes[opposite][0] - a[0], mesh.nodes[opposite][1] - a[1]];
                if normal[0] * to_opp[0] + normal[1] * to_opp[1] < 0.0 {
                    normal = [-normal[0], -normal[1]];
                }
                mesh.interface_edges.push(InterfaceEdge {
                    matrix_nodes: [key.0, key.1],
                    block_nodes: [key.0, key.1],
                    matrix_triangle: mt,
                    block_triangle: bt,
                    normal,
                });
            }
            more => {
                return Err(Error::Mesh(format!(
                    "edge {key:?} shared by {} triangles",
                    more.len()
                )))
            }
        }
    }
    Ok(())
}

fn validate_mesh(mesh: &Mesh) -> Result<()> {
    for t in 0..mesh.triangles.len() {
        let a = mesh.signed_area(t);
        if !(a > 0.0) {
            return Err(Error::Mesh(format!(
                "triangle {t} has non-positive signed area {a:e}"
            )));
        }
    }
    if mesh.has_block() {
        mesh.check_interface_closed()
            .map_err(|e| Error::Mesh(format!("interface is not a closed polyline: {e}")))?;
    }
    // the boundary must lie in the matrix and the matrix must be connected
    for e in &mesh.boundary_edges {
        for &k in e {
            let p = mesh.nodes[k];
            let on_face = p[0].abs() < FACE_TOL
                || (p[0] - 1.0).abs() < FACE_TOL
                || p[1].abs() < FACE_TOL
                || (p[1] - 1.0).abs() < FACE_TOL;
            if !on_face {
                return Err(Error::Mesh(format!("boundary node {k} at {p:?} is not on ∂Y")));
            }
        }
    }
    if !matrix_connected(mesh) {
        return Err(Error::Geometry("matrix part Y1 is not connected".into()));
    }
    Ok(())
}

fn matrix_connected(mesh: &Mesh) -> bool {
    let mut parent: Vec<usize> = (0..mesh.nodes.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for tri in mesh.triangles.iter().filter(|t| t.tag == Subdomain::Matrix) {
        let [a, b, c] = tri.nodes;
        for (p, q) in [(a, b), (b, c)] {
            let (rp, rq) = (find(&mut parent, p), find(&mut parent, q));
            parent[rp] = rq;
        }
    }
    let mask = mesh.node_mask(Region::Only(Subdomain::Matrix));
    let mut root = None;
    for k in (0..mesh.nodes.len()).filter(|&k| mask[k]) {
        let r = find(&mut parent, k);
        match root {
            None => root = Some(r),
            Some(r0) if r0 != r => return false,
            _ => {}
        }
    }
    true
}

/// Identification of opposite faces of `∂Y`.
///
/// Masters live on the faces `y1 = 0` and `y2 = 0`; `pairs` maps each
/// non-corner node of the faces `y1 = 1` / `y2 = 1` to its master. The four
/// corners form one group whose first entry (the origin) is the master.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicMap {
    pub pairs: Vec<(usize, usize)>,
    pub corners: [usize; 4],
}

impl PeriodicMap {
    /// All (slave, master) identifications, corners included.
    pub fn identifications(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let [c0, c1, c2, c3] = self.corners;
        self.pairs
            .iter()
            .copied()
            .chain([(c1, c0), (c2, c0), (c3, c0)])
    }
}

/// Pairs nodes on opposite faces of the unit cell.
pub fn build_periodic_map(mesh: &Mesh) -> Result<PeriodicMap> {
    let boundary = mesh.boundary_node_mask();
    let near = |v: f64, target: f64| (v - target).abs() < FACE_TOL;
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut bottom = Vec::new();
    let mut top = Vec::new();
    let mut corners: [Option<usize>; 4] = [None; 4];
    for k in (0..mesh.nodes.len()).filter(|&k| boundary[k]) {
        let [x, y] = mesh.nodes[k];
        let (l, r, b, t) = (near(x, 0.0), near(x, 1.0), near(y, 0.0), near(y, 1.0));
        match (l, r, b, t) {
            (true, _, true, _) => corners[0] = Some(k),
            (_, true, true, _) => corners[1] = Some(k),
            (true, _, _, true) => corners[2] = Some(k),
            (_, true, _, true) => corners[3] = Some(k),
            (true, ..) => left.push(k),
            (_, true, ..) => right.push(k),
            (_, _, true, _) => bottom.push(k),
            (_, _, _, true) => top.push(k),
            _ => {
                return Err(Error::Pairing(format!(
                    "boundary node {k} at ({x}, {y}) is not on a face of ∂Y"
                )))
            }
        }
    }
    let corners = [0, 1, 2, 3].map(|i| corners[i]);
    let corners = match corners {
        [Some(a), Some(b), Some(c), Some(d)] => [a, b, c, d],
        _ => return Err(Error::Pairing("missing corner node".into())),
    };

    let mut pairs = Vec::with_capacity(right.len() + top.len());
    match_faces(mesh, &left, &right, 1, &mut pairs)?;
    match_faces(mesh, &bottom, &top, 0, &mut pairs)?;
    Ok(PeriodicMap { pairs, corners })
}

fn match_faces(
    mesh: &Mesh,
    masters: &[usize],
    slaves: &[usize],
    along: usize,
    out: &mut Vec<(usize, usize)>,
) -> Result<()> {
    if masters.len() != slaves.len() {
        return Err(Error::Pairing(format!(
            "opposite faces carry {} and {} nodes",
            masters.len(),
            slaves.len()
        )));
    }
    let mut sorted: Vec<usize> = masters.to_vec();
    sorted.sort_by(|&a, &b| mesh.nodes[a][along].total_cmp(&mesh.nodes[b][along]));
    let mut used = vec![false; sorted.len()];
    for &s in slaves {
        let c = mesh.nodes[s][along];
        let idx = sorted.partition_point(|&m| mesh.nodes[m][along] < c - FACE_TOL);
        match sorted.get(idx) {
            Some(&m) if (mesh.nodes[m][along] - c).abs() < FACE_TOL && !used[idx] => {
                used[idx] = true;
                out.push((s, m));
            }
            _ => {
                return Err(Error::Pairing(format!(
                    "node {s} at {:?} has no partner on the opposite face",
                    mesh.nodes[s]
                )))
            }
        }
    }
    Ok(())
}

/// Canonical representative of every unit-cell node under periodicity:
/// `(master, shift)` with `x_node = x_master + shift`.
fn periodic_masters(mesh: &Mesh, map: &PeriodicMap) -> Vec<(usize, [usize; 2])> {
    let mut out: Vec<(usize, [usize; 2])> = (0..mesh.nodes.len()).map(|k| (k, [0, 0])).collect();
    for (s, m) in map.identifications() {
        let ds = mesh.nodes[s];
        let dm = mesh.nodes[m];
        out[s] = (m, [(ds[0] - dm[0]).round() as usize, (ds[1] - dm[1]).round() as usize]);
    }
    out
}

/// Parses `eps` as `1/m` with integer `m >= 2`.
pub fn reciprocal_integer(eps: f64) -> Result<usize> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Argument(format!("eps = {eps} must be positive")));
    }
    let inv = 1.0 / eps;
    let m = inv.round();
    if (inv - m).abs() > 1e-9 * m.max(1.0) {
        return Err(Error::Argument(format!("eps = {eps} is not the reciprocal of an integer")));
    }
    if m < 2.0 {
        return Err(Error::Argument(format!("eps = {eps}: need eps = 1/m with m >= 2")));
    }
    Ok(m as usize)
}

/// The micro mesh of `Ω = (0,1)^2`: the unit-cell mesh scaled by `eps` and
/// tiled `m × m`, with matrix nodes merged across cell faces and interface
/// nodes duplicated (one matrix copy, one block copy).
pub fn build_epsilon_mesh(geom: &CellGeometry, eps: f64) -> Result<Mesh> {
    let m = reciprocal_integer(eps)?;
    let unit = build_unit_cell_mesh(geom)?;
    let periodic = build_periodic_map(&unit)?;
    tile_unit_cell(&unit, &periodic, m)
}

pub fn tile_unit_cell(unit: &Mesh, periodic: &PeriodicMap, m: usize) -> Result<Mesh> {
    if m < 2 {
        return Err(Error::Argument(format!("tiling needs m >= 2, got {m}")));
    }
    let masters = periodic_masters(unit, periodic);
    let in_matrix = unit.node_mask(Region::Only(Subdomain::Matrix));
    let in_block = unit.node_mask(Region::Only(Subdomain::Block));
    let scale = 1.0 / m as f64;

    let mut nodes: Vec<Point> = Vec::new();
    let mut node_origin: Vec<usize> = Vec::new();
    let mut merged: HashMap<(usize, usize, usize), usize> = HashMap::new();
    let mut matrix_id = vec![usize::MAX; unit.nodes.len()];
    let mut block_id = vec![usize::MAX; unit.nodes.len()];
    let mut triangles = Vec::with_capacity(unit.triangles.len() * m * m);
    let mut triangle_cell = Vec::with_capacity(unit.triangles.len() * m * m);
    let mut interface_edges = Vec::with_capacity(unit.interface_edges.len() * m * m);

    for cj in 0..m {
        for ci in 0..m {
            let cell = cj * m + ci;
            for k in 0..unit.nodes.len() {
                let p = unit.nodes[k];
                let pos = [(ci as f64 + p[0]) * scale, (cj as f64 + p[1]) * scale];
                if in_matrix[k] {
                    let (master, shift) = masters[k];
                    let key = (ci + shift[0], cj + shift[1], master);
                    matrix_id[k] = *merged.entry(key).or_insert_with(|| {
                        nodes.push(pos);
                        node_origin.push(k);
                        nodes.len() - 1
                    });
                }
                if in_block[k] {
                    nodes.push(pos);
                    node_origin.push(k);
                    block_id[k] = nodes.len() - 1;
                }
            }
            let tri_offset = triangles.len();
            for tri in &unit.triangles {
                let ids = match tri.tag {
                    Subdomain::Matrix => &matrix_id,
                    Subdomain::Block => &block_id,
                };
                triangles.push(Triangle {
                    nodes: tri.nodes.map(|k| ids[k]),
                    tag: tri.tag,
                });
                triangle_cell.push(cell);
            }
            for e in &unit.interface_edges {
                interface_edges.push(InterfaceEdge {
                    matrix_nodes: e.matrix_nodes.map(|k| matrix_id[k]),
                    block_nodes: e.block_nodes.map(|k| block_id[k]),
                    matrix_triangle: tri_offset + e.matrix_triangle,
                    block_triangle: tri_offset + e.block_triangle,
                    normal: e.normal,
                });
            }
        }
    }

    // outer boundary: single-triangle edges that are not interface edges
    let mut count: HashMap<(usize, usize), u32> = HashMap::new();
    for tri in &triangles {
        for e in 0..3 {
            let (a, b) = (tri.nodes[e], tri.nodes[(e + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    for e in &interface_edges {
        for [a, b] in [e.matrix_nodes, e.block_nodes] {
            count.remove(&(a.min(b), a.max(b)));
        }
    }
    let mut boundary_edges: Vec<[usize; 2]> = count
        .into_iter()
        .filter(|&(_, c)| c == 1)
        .map(|((a, b), _)| [a, b])
        .collect();
    boundary_edges.sort_unstable();

    let mesh = Mesh {
        nodes,
        triangles,
        interface_edges,
        boundary_edges,
        cells_per_side: m,
        node_origin,
        triangle_cell,
        geometry_fingerprint: unit.geometry_fingerprint.clone(),
    };
    for e in &mesh.boundary_edges {
        for &k in e {
            let p = mesh.nodes[k];
            if !(p[0].abs() < FACE_TOL
                || (p[0] - 1.0).abs() < FACE_TOL
                || p[1].abs() < FACE_TOL
                || (p[1] - 1.0).abs() < FACE_TOL)
            {
                return Err(Error::Mesh(format!(
                    "tiling left an open edge at {p:?}; periodic faces do not match"
                )));
            }
        }
    }
    Ok(mesh)
}

/// Matched `(matrix copy, block copy)` node pairs, one per interface node.
/// On the unit-cell mesh both entries are the same node.
pub fn extract_interface_pairing(mesh: &Mesh) -> Result<Vec<(usize, usize)>> {
    let mut partner: HashMap<usize, usize> = HashMap::new();
    let mut reverse: HashMap<usize, usize> = HashMap::new();
    for e in &mesh.interface_edges {
        for s in 0..2 {
            let (u, v) = (e.matrix_nodes[s], e.block_nodes[s]);
            if *partner.entry(u).or_insert(v) != v || *reverse.entry(v).or_insert(u) != u {
                return Err(Error::Topology(format!(
                    "interface node {u} has more than one block-side copy"
                )));
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = partner.into_iter().collect();
    pairs.sort_unstable();
    for &(u, v) in &pairs {
        if u >= mesh.nodes.len() || v >= mesh.nodes.len() {
            return Err(Error::Topology(format!("orphan interface copy ({u}, {v})")));
        }
        if dist(mesh.nodes[u], mesh.nodes[v]) > FACE_TOL {
            return Err(Error::Topology(format!(
                "interface copies {u} and {v} are not coincident"
            )));
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn block_area(mesh: &Mesh) -> f64 {
        mesh.subdomain_area(Region::Only(Subdomain::Block))
    }

    #[test]
    fn square_block_meshes_exactly() {
        let mesh = build_unit_cell_mesh(&CellGeometry::square([0.5, 0.5], 0.25, 16)).unwrap();
        assert!((block_area(&mesh) - 0.25).abs() < 1e-14);
        assert!((mesh.subdomain_area(Region::All) - 1.0).abs() < 1e-14);
        assert!((mesh.interface_length() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn disk_block_area() {
        let mesh = build_unit_cell_mesh(&CellGeometry::disk([0.5, 0.5], 0.25, 32)).unwrap();
        assert!((block_area(&mesh) - PI / 16.0).abs() < 5e-3);
        assert!((mesh.subdomain_area(Region::All) - 1.0).abs() < 1e-13);
        mesh.check_interface_closed().unwrap();
        for e in &mesh.interface_edges {
            for &k in &e.matrix_nodes {
                let p = mesh.nodes[k];
                assert!(((p[0] - 0.5).hypot(p[1] - 0.5) - 0.25).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn disk_area_converges_second_order() {
        let err = |n| {
            let mesh = build_unit_cell_mesh(&CellGeometry::disk([0.5, 0.5], 0.25, n)).unwrap();
            (block_area(&mesh) - PI / 16.0).abs()
        };
        for n in [8, 16, 32] {
            let (coarse, fine) = (err(n), err(2 * n));
            assert!(coarse / fine >= 3.0, "n = {n}: {coarse:e} -> {fine:e}");
        }
    }

    #[test]
    fn many_disks_mesh_cleanly() {
        for n in [8, 12, 16, 20, 24, 32, 48] {
            for r in [0.1, 0.17, 0.2, 0.23, 0.25, 0.3] {
                for c in [[0.5, 0.5], [0.47, 0.52]] {
                    let g = CellGeometry::disk(c, r, n);
                    if g.validate().is_err() {
                        continue;
                    }
                    let mesh = build_unit_cell_mesh(&g).unwrap();
                    mesh.check_interface_closed().unwrap();
                    build_periodic_map(&mesh).unwrap();
                }
            }
        }
    }

    #[test]
    fn normals_point_into_block() {
        let mesh = build_unit_cell_mesh(&CellGeometry::disk([0.5, 0.5], 0.25, 16)).unwrap();
        for e in &mesh.interface_edges {
            let (a, b) = (mesh.nodes[e.matrix_nodes[0]], mesh.nodes[e.matrix_nodes[1]]);
            let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            let to_center = [0.5 - mid[0], 0.5 - mid[1]];
            assert!(e.normal[0] * to_center[0] + e.normal[1] * to_center[1] > 0.0);
            assert!((e.normal[0].hypot(e.normal[1]) - 1.0).abs() < 1e-14);
            assert_eq!(mesh.triangles[e.matrix_triangle].tag, Subdomain::Matrix);
            assert_eq!(mesh.triangles[e.block_triangle].tag, Subdomain::Block);
        }
    }

    #[test]
    fn structured_periodic_counts() {
        let mesh = build_unit_cell_mesh(&CellGeometry::empty(4)).unwrap();
        let map = build_periodic_map(&mesh).unwrap();
        // 3 interior nodes per face, faces paired two by two
        assert_eq!(map.pairs.len(), 6);
        let boundary = mesh.boundary_node_mask().iter().filter(|&&b| b).count();
        assert_eq!(boundary, 16);
        assert_eq!(map.pairs.len(), (boundary - 4) / 2);
    }

    #[test]
    fn perturbed_boundary_node_fails_pairing() {
        let mut mesh = build_unit_cell_mesh(&CellGeometry::empty(4)).unwrap();
        let k = mesh
            .nodes
            .iter()
            .position(|p| p[0] == 1.0 && p[1] == 0.5)
            .unwrap();
        mesh.nodes[k][1] += 1e-9;
        assert!(matches!(build_periodic_map(&mesh), Err(Error::Pairing(_))));
    }

    #[test]
    fn disk_periodic_map_is_exhaustive() {
        let mesh = build_unit_cell_mesh(&CellGeometry::disk([0.5, 0.5], 0.25, 32)).unwrap();
        let map = build_periodic_map(&mesh).unwrap();
        let boundary = mesh.boundary_node_mask();
        let mut seen = vec![0usize; mesh.nodes.len()];
        for &(s, m) in &map.pairs {
            seen[s] += 1;
            seen[m] += 1;
            let (ps, pm) = (mesh.nodes[s], mesh.nodes[m]);
            let d = [ps[0] - pm[0], ps[1] - pm[1]];
            let lattice = ((d[0] - 1.0).abs() < 1e-12 && d[1].abs() < 1e-12)
                || ((d[1] - 1.0).abs() < 1e-12 && d[0].abs() < 1e-12);
            assert!(lattice, "{ps:?} vs {pm:?}");
        }
        for &c in &map.corners {
            seen[c] += 1;
        }
        for k in 0..mesh.nodes.len() {
            assert_eq!(seen[k], usize::from(boundary[k]), "node {k}");
        }
    }

    #[test]
    fn epsilon_mesh_tiles_exactly() {
        let geom = CellGeometry::disk([0.5, 0.5], 0.25, 16);
        let unit = build_unit_cell_mesh(&geom).unwrap();
        let mesh = build_epsilon_mesh(&geom, 0.5).unwrap();
        assert_eq!(mesh.triangles.len(), 4 * unit.triangles.len());
        assert!((block_area(&mesh) - PI / 16.0).abs() < 5e-3);
        assert!((block_area(&mesh) - block_area(&unit)).abs() < 1e-14);
        assert!((mesh.subdomain_area(Region::All) - 1.0).abs() < 1e-13);
        for t in 0..mesh.triangles.len() {
            assert!(mesh.signed_area(t) > 0.0);
        }
        // blocks are strictly interior
        let boundary = mesh.boundary_node_mask();
        let in_block = mesh.node_mask(Region::Only(Subdomain::Block));
        assert!((0..mesh.nodes.len()).all(|k| !(boundary[k] && in_block[k])));
        let unit_pairs = extract_interface_pairing(&unit).unwrap();
        let pairs = extract_interface_pairing(&mesh).unwrap();
        assert_eq!(pairs.len(), 4 * unit_pairs.len());
        assert!(pairs.iter().all(|&(u, v)| u != v && mesh.nodes[u] == mesh.nodes[v]));
        // boundary of Ω = 4 faces of m * n edges each
        assert_eq!(mesh.boundary_edges.len(), 4 * 2 * 16);
    }

    #[test]
    fn epsilon_rejects_bad_values() {
        let geom = CellGeometry::disk([0.5, 0.5], 0.25, 16);
        assert!(matches!(build_epsilon_mesh(&geom, 1.0), Err(Error::Argument(_))));
        assert!(matches!(build_epsilon_mesh(&geom, 0.3), Err(Error::Argument(_))));
        assert!(matches!(build_epsilon_mesh(&geom, -0.5), Err(Error::Argument(_))));
    }

    #[test]
    fn unit_cell_pairing_counts() {
        let mesh = build_unit_cell_mesh(&CellGeometry::disk([0.5, 0.5], 0.25, 32)).unwrap();
        let pairs = extract_interface_pairing(&mesh).unwrap();
        let polyline: std::collections::BTreeSet<usize> =
            mesh.interface_edges.iter().flat_map(|e| e.matrix_nodes).collect();
        assert_eq!(pairs.len(), polyline.len());
        // closed polyline: as many nodes as edges
        assert_eq!(pairs.len(), mesh.interface_edges.len());
        assert!(pairs.iter().all(|&(u, v)| u == v));
    }

    #[test]
    fn mirror_symmetric_mesh() {
        let mesh = build_unit_cell_mesh(&CellGeometry::disk([0.5, 0.5], 0.25, 16)).unwrap();
        for p in &mesh.nodes {
            let mirrored = [1.0 - p[0], p[1]];
            assert!(mesh.nodes.iter().any(|q| dist(*q, mirrored) < 1e-12), "{p:?}");
        }
    }
}
