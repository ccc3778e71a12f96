//! Run configuration (strict JSON).
//!
//! ```json
//! {
//!   "geometry": {"shape": "disk", "center": [0.5, 0.5], "radius": 0.25},
//!   "coefficients": {"A": {"kind": "constant_matrix", "value": [[1, 0], [0, 1]]},
//!                    "h": {"kind": "scalar_times_identity", "expr": "1"}},
//!   "sources": {"f1": "1", "f2": "1"},
//!   "cell_resolution": 16,
//!   "macro_resolution": 64,
//!   "eps_list": [0.25, 0.125, 0.0625],
//!   "output_dir": "out",
//!   "solver": {"rel_tol": 1e-10, "max_iter_factor": 20}
//! }
//! ```
//!
//! Only `geometry` is required. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cell::CellCoefficients;
use crate::error::{Error, Result};
use crate::expr::{macro_vars, Expr};
use crate::fem::SolverOptions;
use crate::geometry::{BlockShape, CellGeometry, Point};
use crate::mesh::reciprocal_integer;

pub const DEFAULT_CELL_RESOLUTION: usize = 16;
pub const DEFAULT_MACRO_RESOLUTION: usize = 64;
pub const DEFAULT_EPS_LIST: [f64; 3] = [0.25, 0.125, 0.0625];
pub const MIN_RESOLUTION: usize = 8;
pub const MAX_REL_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometrySpec {
    None,
    Disk { center: Point, radius: f64 },
    Square { center: Point, half_width: f64 },
}

impl GeometrySpec {
    fn block(&self) -> Option<BlockShape> {
        match *self {
            GeometrySpec::None => None,
            GeometrySpec::Disk { center, radius } => Some(BlockShape::Disk { center, radius }),
            GeometrySpec::Square { center, half_width } => Some(BlockShape::Square { center, half_width }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sources {
    #[serde(with = "macro_vars", default = "unit_source")]
    pub f1: Expr,
    #[serde(with = "macro_vars", default = "unit_source")]
    pub f2: Expr,
}

fn unit_source() -> Expr {
    Expr::constant(1.0)
}

impl Default for Sources {
    fn default() -> Self {
        Sources {
            f1: unit_source(),
            f2: unit_source(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    geometry: GeometrySpec,
    #[serde(default)]
    coefficients: CellCoefficients,
    #[serde(default)]
    sources: Sources,
    #[serde(default = "default_cell_resolution")]
    cell_resolution: usize,
    #[serde(default = "default_macro_resolution")]
    macro_resolution: usize,
    #[serde(default = "default_eps_list")]
    eps_list: Vec<f64>,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default)]
    solver: SolverOptions,
}

fn default_cell_resolution() -> usize {
    DEFAULT_CELL_RESOLUTION
}

fn default_macro_resolution() -> usize {
    DEFAULT_MACRO_RESOLUTION
}

fn default_eps_list() -> Vec<f64> {
    DEFAULT_EPS_LIST.to_vec()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A validated configuration. `eps_list` is sorted by decreasing `eps`
/// without duplicates.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub geometry: CellGeometry,
    pub coefficients: CellCoefficients,
    pub sources: Sources,
    pub macro_resolution: usize,
    pub eps_list: Vec<f64>,
    pub output_dir: PathBuf,
    pub solver: SolverOptions,
}

impl RunConfig {
    /// Disk of radius 1/4, unit coefficients and sources, default
    /// resolutions and eps list.
    pub fn standard() -> Self {
        RunConfig {
            geometry: CellGeometry::disk([0.5, 0.5], 0.25, DEFAULT_CELL_RESOLUTION),
            coefficients: CellCoefficients::default(),
            sources: Sources::default(),
            macro_resolution: DEFAULT_MACRO_RESOLUTION,
            eps_list: default_eps_list(),
            output_dir: default_output_dir(),
            solver: SolverOptions::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text).map_err(describe_json_error)?;
        let config = RunConfig {
            geometry: CellGeometry {
                block: raw.geometry.block(),
                resolution: raw.cell_resolution,
            },
            coefficients: raw.coefficients,
            sources: raw.sources,
            macro_resolution: raw.macro_resolution,
            eps_list: raw.eps_list,
            output_dir: raw.output_dir,
            solver: raw.solver,
        };
        config.validated()
    }

    /// Checks every field and normalizes the eps list.
    pub fn validated(mut self) -> Result<Self> {
        if self.geometry.resolution < MIN_RESOLUTION {
            return Err(Error::validation(
                "cell_resolution",
                format!("must be at least {MIN_RESOLUTION}, got {}", self.geometry.resolution),
            ));
        }
        if self.macro_resolution < MIN_RESOLUTION {
            return Err(Error::validation(
                "macro_resolution",
                format!("must be at least {MIN_RESOLUTION}, got {}", self.macro_resolution),
            ));
        }
        self.geometry
            .validate()
            .map_err(|e| Error::validation("geometry", e.to_string()))?;
        for (name, field) in [
            ("coefficients.A", &self.coefficients.a),
            ("coefficients.B", &self.coefficients.b),
            ("coefficients.h", &self.coefficients.h),
        ] {
            field.validate().map_err(|e| Error::validation(name, e.to_string()))?;
        }
        let tol = self.solver.rel_tol;
        if !(tol > 0.0 && tol <= MAX_REL_TOL) {
            return Err(Error::validation("solver.rel_tol", format!("must lie in (0, {MAX_REL_TOL:e}], got {tol:e}")));
        }
        if self.solver.max_iter_factor == 0 {
            return Err(Error::validation("solver.max_iter_factor", "must be positive"));
        }
        if self.eps_list.is_empty() {
            return Err(Error::validation("eps_list", "must not be empty"));
        }
        let mut ms = Vec::with_capacity(self.eps_list.len());
        for &eps in &self.eps_list {
            ms.push(reciprocal_integer(eps).map_err(|e| Error::validation("eps_list", e.to_string()))?);
        }
        ms.sort_unstable();
        ms.dedup();
        self.eps_list = ms.iter().map(|&m| 1.0 / m as f64).collect();
        Ok(self)
    }

    /// The `1/eps` values, in list order.
    pub fn cells_per_side(&self) -> Vec<usize> {
        self.eps_list.iter().map(|&e| (1.0 / e).round() as usize).collect()
    }
}

fn describe_json_error(e: serde_json::Error) -> Error {
    use serde_json::error::Category;
    let at = format!("line {} column {}", e.line(), e.column());
    match e.classify() {
        Category::Syntax | Category::Eof => Error::Config(format!("syntax error at {at}: {e}")),
        Category::Io => Error::Config(e.to_string()),
        Category::Data => {
            let msg = e.to_string();
            if msg.contains("unknown field") || msg.contains("unknown variant") {
                Error::Config(format!("unknown key at {at}: {msg}"))
            } else {
                Error::Config(format!("invalid value at {at}: {msg}"))
            }
        }
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_json(&text)
}
