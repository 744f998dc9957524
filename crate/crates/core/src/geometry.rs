//! Euclidean primitives: domain boxes, closed balls, intersection tests and
//! Minkowski-difference volumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    #[default]
    Bounded,
    /// Flat torus: opposite faces are identified.
    Periodic,
}

/// Axis-aligned box `[lower, upper]` in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    topology: Topology,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, topology: Topology) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidDomain("dimension must be positive".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (axis, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
                return Err(Error::InvalidDomain(format!(
                    "axis {axis}: upper {hi} must exceed lower {lo}"
                )));
            }
        }
        Ok(Self {
            lower,
            upper,
            topology,
        })
    }

    /// The cube `[0, side]^dimension`.
    pub fn cube(dimension: usize, side: f64, topology: Topology) -> Result<Self> {
        Self::new(vec![0.0; dimension], vec![side; dimension], topology)
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dimension()).map(|a| self.side(a)).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dimension()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Displacement `x - y` along one axis, wrapped to the nearest image on a torus.
    pub fn axis_delta(&self, axis: usize, x: f64, y: f64) -> f64 {
        let d = x - y;
        match self.topology {
            Topology::Bounded => d,
            Topology::Periodic => {
                let side = self.side(axis);
                d - side * (d / side).round()
            }
        }
    }

    pub fn distance_squared(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dimension(x.len())?;
        self.check_dimension(y.len())?;
        Ok((0..x.len())
            .map(|a| {
                let d = self.axis_delta(a, x[a], y[a]);
                d * d
            })
            .sum())
    }

    pub(crate) fn check_dimension(&self, got: usize) -> Result<()> {
        if got != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                got,
            });
        }
        Ok(())
    }
}

/// Closed ball `B(center, radius)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ball radius must be finite and nonnegative, got {radius}"
            )));
        }
        Ok(Self { center, radius })
    }

    pub fn dimension(&self) -> usize {
        self.center.len()
    }
}

/// Closed-ball intersection: tangent balls intersect.
pub fn ball_intersects(b1: &Ball, b2: &Ball, dom: &Domain) -> Result<bool> {
    let reach = b1.radius + b2.radius;
    Ok(dom.distance_squared(&b1.center, &b2.center)? <= reach * reach)
}

/// Volume of the unit ball in `R^d`.
pub fn unit_ball_volume(dimension: usize) -> f64 {
    // V_0 = 1, V_1 = 2, V_d = V_{d-2} * 2 pi / d
    let mut even = 1.0;
    let mut odd = 2.0;
    for d in 2..=dimension {
        if d % 2 == 0 {
            even *= 2.0 * std::f64::consts::PI / d as f64;
        } else {
            odd *= 2.0 * std::f64::consts::PI / d as f64;
        }
    }
    if dimension.is_multiple_of(2) {
        even
    } else {
        odd
    }
}

pub fn ball_volume(dimension: usize, radius: f64) -> f64 {
    unit_ball_volume(dimension) * radius.powi(dimension as i32)
}

/// Volume of `{z1 - z2 : z1 in b1, z2 in b2}`, which is a ball of radius
/// `r1 + r2` wherever the centers sit.
pub fn minkowski_diff_volume(b1: &Ball, b2: &Ball) -> f64 {
    ball_volume(b1.dimension().max(b2.dimension()), b1.radius + b2.radius)
}
