//! Points and the cubic domain that encloses them.

use serde::{Deserialize, Serialize};

use crate::error::{FmmError, Result};

/// Side length used when all points coincide.
pub const SMALL_SIDE_FLOOR: f64 = 1.0;

/// Default relative margin added to the domain so points on the upper faces stay inside.
pub const DEFAULT_MARGIN: f64 = 1e-6;

/// A point in three dimensions.
#[derive(Copy, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Self::from_array(a)
    }
}

/// Axis aligned cube given by its minimal corner and side length.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingCube {
    pub origin: Point3,
    pub side: f64,
}

impl BoundingCube {
    pub fn new(origin: Point3, side: f64) -> Result<Self> {
        if !(side > 0.0 && side.is_finite()) || !origin.is_finite() {
            return Err(FmmError::InvalidConfig(format!("invalid cube side {side}")));
        }
        Ok(Self { origin, side })
    }

    /// The unit cube `[0, 1]^3`.
    pub fn unit() -> Self {
        Self {
            origin: Point3::new(0.0, 0.0, 0.0),
            side: 1.0,
        }
    }

    pub fn contains(&self, p: &Point3) -> bool {
        let o = self.origin.to_array();
        p.to_array()
            .iter()
            .zip(o)
            .all(|(&c, lo)| c >= lo && c <= lo + self.side)
    }

    pub fn center(&self) -> Point3 {
        let h = 0.5 * self.side;
        Point3::new(self.origin.x + h, self.origin.y + h, self.origin.z + h)
    }
}

/// Smallest cube anchored at the minimal corner of `points` that encloses them,
/// grown by `margin` relative to the largest axis extent.
pub fn fit_domain(points: &[Point3], margin: f64) -> Result<BoundingCube> {
    if points.is_empty() {
        return Err(FmmError::NoPoints);
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (index, p) in points.iter().enumerate() {
        if !p.is_finite() {
            return Err(FmmError::NonFinite { index });
        }
        for (axis, c) in p.to_array().into_iter().enumerate() {
            lo[axis] = lo[axis].min(c);
            hi[axis] = hi[axis].max(c);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    let side = if extent > 0.0 {
        extent * (1.0 + margin.max(0.0))
    } else {
        SMALL_SIDE_FLOOR
    };
    BoundingCube::new(Point3::from_array(lo), side)
}
