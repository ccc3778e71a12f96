use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{cell_vars, Expr};
use crate::geometry::Point;
use crate::mesh::{Mesh, Region};

pub type Mat2 = [[f64; 2]; 2];

pub const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

/// A Y-periodic coefficient, evaluated in cell coordinates `y ∈ [0,1)^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientField {
    ConstantMatrix {
        value: Mat2,
    },
    ScalarTimesIdentity {
        #[serde(with = "cell_vars")]
        expr: Expr,
    },
    /// Equal-width layers stacked along `direction` (0 = y1, 1 = y2).
    PiecewiseLayered {
        values: Vec<f64>,
        direction: usize,
    },
}

impl CoefficientField {
    pub fn identity() -> Self {
        CoefficientField::ConstantMatrix { value: IDENTITY }
    }

    pub fn scalar(value: f64) -> Self {
        CoefficientField::ScalarTimesIdentity {
            expr: Expr::constant(value),
        }
    }

    pub fn layered(values: Vec<f64>, direction: usize) -> Self {
        CoefficientField::PiecewiseLayered { values, direction }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CoefficientField::ConstantMatrix { value } => {
                if value.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::Coefficient("non-finite matrix entry".into()));
                }
                if (value[0][1] - value[1][0]).abs() > 1e-14 * max_abs(value).max(1.0) {
                    return Err(Error::Coefficient(format!("matrix {value:?} is not symmetric")));
                }
            }
            CoefficientField::ScalarTimesIdentity { .. } => {}
            CoefficientField::PiecewiseLayered { values, direction } => {
                if values.is_empty() {
                    return Err(Error::Coefficient("layered field needs at least one value".into()));
                }
                if *direction > 1 {
                    return Err(Error::Coefficient(format!(
                        "layer direction must be 0 or 1, got {direction}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Matrix value at cell coordinate `y`.
    #[inline]
    pub fn matrix_at(&self, y: Point) -> Mat2 {
        match self {
            CoefficientField::ConstantMatrix { value } => *value,
            _ => {
                let s = self.scalar_at(y);
                [[s, 0.0], [0.0, s]]
            }
        }
    }

    /// Scalar value at `y`; for a matrix field, its (1,1) entry (only
    /// meaningful for isotropic matrices, see [`Self::check_positive`]).
    #[inline]
    pub fn scalar_at(&self, y: Point) -> f64 {
        match self {
            CoefficientField::ConstantMatrix { value } => value[0][0],
            CoefficientField::ScalarTimesIdentity { expr } => expr.eval(y),
            CoefficientField::PiecewiseLayered { values, direction } => {
                let t = y[*direction];
                let k = ((t - t.floor()) * values.len() as f64) as usize;
                values[k.min(values.len() - 1)]
            }
        }
    }

    /// Smallest eigenvalue over all triangle centroids of `region`; errors
    /// unless the field is symmetric and uniformly positive definite there.
    pub fn check_ellipticity(&self, mesh: &Mesh, region: Region) -> Result<f64> {
        self.validate()?;
        let mut min_eig = f64::INFINITY;
        for t in (0..mesh.triangles.len()).filter(|&t| region.contains(mesh.triangles[t].tag)) {
            let a = self.matrix_at(mesh.cell_coordinate(mesh.centroid(t)));
            min_eig = min_eig.min(min_eigenvalue(&a));
        }
        if !(min_eig > 0.0) {
            return Err(Error::Coefficient(format!(
                "ellipticity violated: smallest sampled eigenvalue {min_eig:e}"
            )));
        }
        Ok(min_eig)
    }

    /// Lower bound `h0` of a scalar field sampled at interface quadrature
    /// points and centroids.
    pub fn check_positive(&self, mesh: &Mesh) -> Result<f64> {
        self.validate()?;
        if let CoefficientField::ConstantMatrix { value } = self {
            if value[0][1] != 0.0 || value[0][0] != value[1][1] {
                return Err(Error::Coefficient("scalar field given as anisotropic matrix".into()));
            }
        }
        let mut h0 = f64::INFINITY;
        for e in &mesh.interface_edges {
            let (a, b) = (mesh.nodes[e.matrix_nodes[0]], mesh.nodes[e.matrix_nodes[1]]);
            for t in [0.0, 0.5, 1.0] {
                let x = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                h0 = h0.min(self.scalar_at(mesh.cell_coordinate(x)));
            }
        }
        for t in 0..mesh.triangles.len() {
            h0 = h0.min(self.scalar_at(mesh.cell_coordinate(mesh.centroid(t))));
        }
        if !(h0 > 0.0) {
            return Err(Error::Coefficient(format!(
                "scalar field not bounded below by a positive constant (min {h0:e})"
            )));
        }
        Ok(h0)
    }
}

fn max_abs(m: &Mat2) -> f64 {
    m.iter().flatten().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Smallest eigenvalue of a symmetric 2×2 matrix; NaN-free only for
/// symmetric input, asymmetric input returns -inf.
pub fn min_eigenvalue(a: &Mat2) -> f64 {
    if (a[0][1] - a[1][0]).abs() > 1e-12 * max_abs(a).max(1e-300) {
        return f64::NEG_INFINITY;
    }
    let tr = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    0.5 * tr - disc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Variables;
    use crate::geometry::CellGeometry;
    use crate::mesh::build_unit_cell_mesh;

    #[test]
    fn layered_lookup() {
        let f = CoefficientField::layered(vec![1.0, 4.0], 0);
        assert_eq!(f.scalar_at([0.2, 0.9]), 1.0);
        assert_eq!(f.scalar_at([0.7, 0.1]), 4.0);
        assert_eq!(f.matrix_at([0.7, 0.1]), [[4.0, 0.0], [0.0, 4.0]]);
        let g = CoefficientField::layered(vec![1.0, 2.0, 3.0], 1);
        assert_eq!(g.scalar_at([0.0, 0.5]), 2.0);
    }

    #[test]
    fn ellipticity_checks() {
        let mesh = build_unit_cell_mesh(&CellGeometry::empty(8)).unwrap();
        assert_eq!(
            CoefficientField::identity().check_ellipticity(&mesh, Region::All).unwrap(),
            1.0
        );
        let bad = CoefficientField::ConstantMatrix {
            value: [[1.0, 2.0], [2.0, 1.0]],
        };
        assert!(bad.check_ellipticity(&mesh, Region::All).is_err());
        let skew = CoefficientField::ConstantMatrix {
            value: [[1.0, 0.5], [0.0, 1.0]],
        };
        assert!(skew.validate().is_err());
        let expr = Expr::parse("1 + 0.5*sin(2*pi*y1)", Variables::Cell).unwrap();
        let f = CoefficientField::ScalarTimesIdentity { expr };
        let c = f.check_ellipticity(&mesh, Region::All).unwrap();
        assert!(c >= 0.5 && c < 1.0);
        let neg = CoefficientField::ScalarTimesIdentity {
            expr: Expr::parse("sin(2*pi*y1)", Variables::Cell).unwrap(),
        };
        assert!(neg.check_positive(&mesh).is_err());
    }

    #[test]
    fn min_eigenvalue_matches_closed_form() {
        let a = [[2.0, 1.0], [1.0, 2.0]];
        assert!((min_eigenvalue(&a) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn serde_shape() {
        let json = r#"{"kind":"scalar_times_identity","expr":"1 + y1"}"#;
        let f: CoefficientField = serde_json::from_str(json).unwrap();
        assert_eq!(f.scalar_at([0.5, 0.0]), 1.5);
        let back = serde_json::to_string(&f).unwrap();
        assert_eq!(back, json);
        assert!(serde_json::from_str::<CoefficientField>(
            r#"{"kind":"constant_matrix","value":[[1,0],[0,1]],"extra":1}"#
        )
        .is_err());
    }
}
