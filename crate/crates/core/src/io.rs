//! File formats: legacy ASCII VTK for fields, JSON for homogenized data,
//! CSV for scalars.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::cell::HomogenizedData;
use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Legacy VTK unstructured grid of the triangles, with nodal arrays and a
/// `subdomain` cell array (1 = fissures, 2 = blocks).
pub fn vtk_string(mesh: &Mesh, title: &str, point_data: &[(&str, &[f64])]) -> Result<String> {
    for (name, values) in point_data {
        if values.len() != mesh.num_nodes() {
            return Err(Error::Argument(format!(
                "array `{name}` has {} values for {} nodes",
                values.len(),
                mesh.num_nodes()
            )));
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "# vtk DataFile Version 3.0");
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "ASCII");
    let _ = writeln!(out, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(out, "POINTS {} double", mesh.num_nodes());
    for p in &mesh.nodes {
        let _ = writeln!(out, "{:e} {:e} 0", p[0], p[1]);
    }
    let nt = mesh.triangles.len();
    let _ = writeln!(out, "CELLS {nt} {}", 4 * nt);
    for t in &mesh.triangles {
        let _ = writeln!(out, "3 {} {} {}", t.nodes[0], t.nodes[1], t.nodes[2]);
    }
    let _ = writeln!(out, "CELL_TYPES {nt}");
    for _ in 0..nt {
        let _ = writeln!(out, "5");
    }
    let _ = writeln!(out, "CELL_DATA {nt}");
    let _ = writeln!(out, "SCALARS subdomain int 1");
    let _ = writeln!(out, "LOOKUP_TABLE default");
    for t in &mesh.triangles {
        let _ = writeln!(out, "{}", t.tag as u8);
    }
    if !point_data.is_empty() {
        let _ = writeln!(out, "POINT_DATA {}", mesh.num_nodes());
        for (name, values) in point_data {
            let _ = writeln!(out, "SCALARS {name} double 1");
            let _ = writeln!(out, "LOOKUP_TABLE default");
            for v in *values {
                let _ = writeln!(out, "{v:e}");
            }
        }
    }
    Ok(out)
}

pub fn write_vtk(path: impl AsRef<Path>, mesh: &Mesh, title: &str, point_data: &[(&str, &[f64])]) -> Result<()> {
    write_text(path, &vtk_string(mesh, title, point_data)?)
}

/// Writes `content`, creating parent directories as needed.
pub fn write_text(path: impl AsRef<Path>, content: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

pub fn homogenized_to_json(data: &HomogenizedData) -> String {
    let mut s = serde_json::to_string_pretty(data).expect("homogenized data serializes");
    s.push('\n');
    s
}

pub fn homogenized_from_json(text: &str) -> Result<HomogenizedData> {
    let data: HomogenizedData = serde_json::from_str(text).map_err(|e| Error::Validation {
        field: "homogenized data".into(),
        message: e.to_string(),
    })?;
    data.validate()?;
    Ok(data)
}

pub fn write_homogenized(path: impl AsRef<Path>, data: &HomogenizedData) -> Result<()> {
    write_text(path, &homogenized_to_json(data))
}

/// Reads and validates homogenized data; a missing file is a dependency
/// error.
pub fn read_homogenized(path: impl AsRef<Path>) -> Result<HomogenizedData> {
    let path = path.as_ref();
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::Dependency(path.display().to_string()))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    homogenized_from_json(&text)
}

/// Inserts or replaces the row whose first field equals `row`'s first
/// field, keeping rows ordered by that key (numerically). A header that
/// differs from `header` discards the old content.
pub fn upsert_csv_row(path: impl AsRef<Path>, header: &str, row: &str) -> Result<()> {
    let path = path.as_ref();
    let key = |line: &str| line.split(',').next().unwrap_or("").to_string();
    let mut rows: Vec<String> = match fs::read_to_string(path) {
        Ok(text) if text.lines().next() == Some(header) => text.lines().skip(1).map(str::to_string).collect(),
        Ok(_) => Vec::new(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(Error::io(path, e)),
    };
    rows.retain(|r| key(r) != key(row));
    rows.push(row.to_string());
    rows.sort_by(|a, b| {
        let (x, y) = (key(a).parse::<f64>(), key(b).parse::<f64>());
        match (x, y) {
            (Ok(x), Ok(y)) => x.total_cmp(&y),
            _ => key(a).cmp(&key(b)),
        }
    });
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    write_text(path, &out)
}
