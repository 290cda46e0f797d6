use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// K ego-frame waypoints (x forward, y left, metres). Index 0 is the point
/// nearest the goal; the last index is nearest the ego vehicle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaypointPlan {
    points: Vec<Vec2>,
}

impl WaypointPlan {
    pub fn new(points: Vec<Vec2>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("empty waypoint plan"));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::invalid("non-finite waypoint"));
        }
        Ok(WaypointPlan { points })
    }

    /// Builds a plan from points listed ego-outward (nearest first).
    pub fn from_ego_outward(mut points: Vec<Vec2>) -> Result<Self> {
        points.reverse();
        Self::new(points)
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `[x0, y0, x1, y1, ...]` in plan order.
    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if !values.len().is_multiple_of(2) {
            return Err(Error::invalid("odd waypoint coordinate count"));
        }
        Self::new(values.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])).collect())
    }
}

/// The next sparse route key point, expressed in the ego frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalPoint(pub Vec2);
