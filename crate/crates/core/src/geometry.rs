//! Unit-cell geometry: the periodicity cell `Y = (0,1)^2` with an optional
//! inclusion (the porous block `Y2`) strictly inside it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Shape of the block occupying `Y2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum BlockShape {
    Disk { center: Point, radius: f64 },
    Square { center: Point, half_width: f64 },
}

impl BlockShape {
    /// Signed distance-like level function, negative inside the block.
    pub fn level(&self, p: Point) -> f64 {
        match *self {
            BlockShape::Disk { center, radius } => {
                ((p[0] - center[0]).hypot(p[1] - center[1])) - radius
            }
            BlockShape::Square { center, half_width } => {
                (p[0] - center[0]).abs().max((p[1] - center[1]).abs()) - half_width
            }
        }
    }

    /// Closest point on the block boundary.
    pub fn project(&self, p: Point) -> Point {
        match *self {
            BlockShape::Disk { center, radius } => {
                let d = [p[0] - center[0], p[1] - center[1]];
                let r = d[0].hypot(d[1]);
                if r == 0.0 {
                    return [center[0] + radius, center[1]];
                }
                [center[0] + radius * d[0] / r, center[1] + radius * d[1] / r]
            }
            BlockShape::Square { center, half_width } => {
                let d = [p[0] - center[0], p[1] - center[1]];
                let inside = d[0].abs() <= half_width && d[1].abs() <= half_width;
                if inside {
                    // push onto the nearest face
                    if half_width - d[0].abs() <= half_width - d[1].abs() {
                        [center[0] + half_width.copysign(d[0]), p[1]]
                    } else {
                        [p[0], center[1] + half_width.copysign(d[1])]
                    }
                } else {
                    [
                        center[0] + d[0].clamp(-half_width, half_width),
                        center[1] + d[1].clamp(-half_width, half_width),
                    ]
                }
            }
        }
    }

    /// Point where the segment `a -> b` crosses the block boundary. The
    /// level function must change sign between the endpoints.
    pub fn crossing(&self, a: Point, b: Point) -> Point {
        match *self {
            BlockShape::Disk { center, radius } => {
                // |a + t(b-a) - c|^2 = R^2
                let d = [b[0] - a[0], b[1] - a[1]];
                let f = [a[0] - center[0], a[1] - center[1]];
                let qa = d[0] * d[0] + d[1] * d[1];
                let qb = 2.0 * (f[0] * d[0] + f[1] * d[1]);
                let qc = f[0] * f[0] + f[1] * f[1] - radius * radius;
                let disc = (qb * qb - 4.0 * qa * qc).max(0.0).sqrt();
                let t1 = (-qb - disc) / (2.0 * qa);
                let t2 = (-qb + disc) / (2.0 * qa);
                let t = if (0.0..=1.0).contains(&t1) { t1 } else { t2 };
                let t = t.clamp(0.0, 1.0);
                [a[0] + t * d[0], a[1] + t * d[1]]
            }
            BlockShape::Square { .. } => {
                // the level function is piecewise linear along the segment
                let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
                let at = |t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                let neg_at_lo = self.level(a) < 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if (self.level(at(mid)) < 0.0) == neg_at_lo {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo < 1e-16 {
                        break;
                    }
                }
                at(0.5 * (lo + hi))
            }
        }
    }

    pub fn center(&self) -> Point {
        match *self {
            BlockShape::Disk { center, .. } | BlockShape::Square { center, .. } => center,
        }
    }

    pub fn exact_area(&self) -> f64 {
        match *self {
            BlockShape::Disk { radius, .. } => PI * radius * radius,
            BlockShape::Square { half_width, .. } => 4.0 * half_width * half_width,
        }
    }

    pub fn exact_perimeter(&self) -> f64 {
        match *self {
            BlockShape::Disk { radius, .. } => 2.0 * PI * radius,
            BlockShape::Square { half_width, .. } => 8.0 * half_width,
        }
    }

    /// Distance from the block boundary to the cell boundary `∂Y`.
    fn margin(&self) -> f64 {
        let (c, extent) = match *self {
            BlockShape::Disk { center, radius } => (center, radius),
            BlockShape::Square { center, half_width } => (center, half_width),
        };
        (c[0] - extent)
            .min(1.0 - c[0] - extent)
            .min(c[1] - extent)
            .min(1.0 - c[1] - extent)
    }

    fn extent(&self) -> f64 {
        match *self {
            BlockShape::Disk { radius, .. } => radius,
            BlockShape::Square { half_width, .. } => half_width,
        }
    }
}

/// The periodicity cell with its block and target mesh resolution
/// (edges per unit length).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellGeometry {
    pub block: Option<BlockShape>,
    pub resolution: usize,
}

impl CellGeometry {
    pub fn disk(center: Point, radius: f64, resolution: usize) -> Self {
        CellGeometry {
            block: Some(BlockShape::Disk { center, radius }),
            resolution,
        }
    }

    pub fn square(center: Point, half_width: f64, resolution: usize) -> Self {
        CellGeometry {
            block: Some(BlockShape::Square { center, half_width }),
            resolution,
        }
    }

    /// Cell without a block (`Y2 = ∅`).
    pub fn empty(resolution: usize) -> Self {
        CellGeometry {
            block: None,
            resolution,
        }
    }

    pub fn with_resolution(&self, resolution: usize) -> Self {
        CellGeometry {
            block: self.block.clone(),
            resolution,
        }
    }

    /// Checks the compact-containment margin `dist(∂Y2, ∂Y) >= 2/n`. With a
    /// single convex block strictly inside `Y`, `Y1` and its periodic
    /// extension are connected; the mesher verifies that on the result.
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 {
            return Err(Error::Geometry("resolution must be positive".into()));
        }
        let Some(block) = &self.block else {
            return Ok(());
        };
        let c = block.center();
        if !(c[0].is_finite() && c[1].is_finite() && block.extent().is_finite()) {
            return Err(Error::Geometry("non-finite block parameters".into()));
        }
        if block.extent() <= 0.0 {
            return Err(Error::Geometry("block size must be positive".into()));
        }
        let required = 2.0 / self.resolution as f64;
        let margin = block.margin();
        if margin < required - 1e-12 {
            return Err(Error::Geometry(format!(
                "block is not compactly contained in Y: margin {margin:.6} < 2/n = {required:.6}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margin_rule() {
        assert!(CellGeometry::disk([0.5, 0.5], 0.25, 32).validate().is_ok());
        assert!(matches!(
            CellGeometry::disk([0.5, 0.5], 0.49, 8).validate(),
            Err(Error::Geometry(_))
        ));
        assert!(CellGeometry::disk([0.5, 0.5], -0.1, 8).validate().is_err());
        assert!(CellGeometry::square([0.5, 0.5], 0.25, 8).validate().is_ok());
        assert!(CellGeometry::square([0.3, 0.5], 0.25, 8).validate().is_err());
        assert!(CellGeometry::empty(4).validate().is_ok());
    }

    #[test]
    fn disk_crossing_lands_on_circle() {
        let disk = BlockShape::Disk {
            center: [0.5, 0.5],
            radius: 0.25,
        };
        let p = disk.crossing([0.5, 0.5], [0.9, 0.7]);
        assert!(disk.level(p).abs() < 1e-15);
        let q = disk.crossing([0.95, 0.1], [0.6, 0.55]);
        assert!(disk.level(q).abs() < 1e-15);
    }

    #[test]
    fn square_crossing_and_projection() {
        let sq = BlockShape::Square {
            center: [0.5, 0.5],
            half_width: 0.2,
        };
        let p = sq.crossing([0.5, 0.5], [0.9, 0.6]);
        assert!(sq.level(p).abs() < 1e-14);
        assert_eq!(sq.project([0.75, 0.5]), [0.7, 0.5]);
        assert_eq!(sq.project([0.65, 0.5]), [0.7, 0.5]);
        let corner = sq.project([0.8, 0.8]);
        assert!((corner[0] - 0.7).abs() < 1e-15 && (corner[1] - 0.7).abs() < 1e-15);
    }
}
