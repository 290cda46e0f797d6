use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::Command;
use crate::geometry::{Polyline, Pose, Projection, Vec2};
use crate::planner::GoalPoint;

/// Command active over an arc-length interval of the route.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandSpan {
    pub start: f64,
    pub end: f64,
    pub command: Command,
}

/// A dense reference path (the lane centerline to follow) plus the sparse
/// key points an agent is given as goals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    path: Polyline,
    key_points: Vec<Vec2>,
    key_arc: Vec<f64>,
    commands: Vec<CommandSpan>,
    /// Episode time budget in seconds.
    pub time_budget: f64,
}

/// Goals closer than this are skipped in favour of the following key point.
const MIN_GOAL_AHEAD: f64 = 4.0;

impl Route {
    pub fn new(path: Polyline, key_spacing: f64, commands: Vec<CommandSpan>, time_budget: f64) -> Result<Self> {
        let path = path.resampled(1.0);
        let len = path.length();
        if len < 1.0 || key_spacing <= 0.0 {
            return Err(Error::invalid("route too short"));
        }
        let n = (len / key_spacing).ceil().max(1.0) as usize;
        let key_arc: Vec<f64> = (1..=n).map(|i| (i as f64 * key_spacing).min(len)).collect();
        let mut key_points: Vec<Vec2> = vec![path.point_at(0.0)];
        key_points.extend(key_arc.iter().map(|&s| path.point_at(s)));
        let mut key_arc_all = vec![0.0];
        key_arc_all.extend(key_arc);
        Ok(Route {
            path,
            key_points,
            key_arc: key_arc_all,
            commands,
            time_budget,
        })
    }

    pub fn path(&self) -> &Polyline {
        &self.path
    }

    pub fn key_points(&self) -> &[Vec2] {
        &self.key_points
    }

    pub fn length(&self) -> f64 {
        self.path.length()
    }

    pub fn commands(&self) -> &[CommandSpan] {
        &self.commands
    }

    pub fn command_at(&self, s: f64) -> Command {
        self.commands
            .iter()
            .find(|c| s >= c.start && s < c.end)
            .map(|c| c.command)
            .unwrap_or(Command::FollowLane)
    }

    /// Projects onto the path near a previous arc-length estimate.
    pub fn project_near(&self, p: Vec2, s_hint: f64) -> Projection {
        self.project_window(p, s_hint, 8.0, 20.0)
    }

    /// Projection restricted to arc lengths `[s - behind, s + ahead]`.
    pub fn project_window(&self, p: Vec2, s: f64, behind: f64, ahead: f64) -> Projection {
        let lo = (s - behind).max(0.0).floor() as usize;
        let hi = (s + ahead).ceil() as usize;
        self.path.project_within(p, lo, hi)
    }

    /// Next key point at least a few metres ahead of `progress`, in the ego frame.
    pub fn goal(&self, progress: f64, ego: &Pose) -> GoalPoint {
        let idx = self
            .key_arc
            .iter()
            .position(|&s| s > progress + MIN_GOAL_AHEAD)
            .unwrap_or(self.key_points.len() - 1);
        GoalPoint(ego.to_local(self.key_points[idx]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight() -> Route {
        let path = Polyline::new(vec![Vec2::ZERO, Vec2::new(100.0, 0.0)]);
        Route::new(
            path,
            15.0,
            vec![CommandSpan {
                start: 40.0,
                end: 60.0,
                command: Command::ChangeLeft,
            }],
            100.0,
        )
        .unwrap()
    }

    #[test]
    fn key_points_are_sparse_and_end_at_goal() {
        let r = straight();
        assert!(r.key_points().len() >= 2);
        assert_eq!(*r.key_points().last().unwrap(), Vec2::new(100.0, 0.0));
    }

    #[test]
    fn goal_is_ahead_in_ego_frame() {
        let r = straight();
        let g = r.goal(14.0, &Pose::new(14.0, 0.0, 0.0));
        assert_eq!(g.0, Vec2::new(16.0, 0.0));
        let g = r.goal(99.0, &Pose::new(99.0, 0.0, 0.0));
        assert_eq!(g.0, Vec2::new(1.0, 0.0));
    }

    #[test]
    fn commands_by_arc_length() {
        let r = straight();
        assert_eq!(r.command_at(10.0), Command::FollowLane);
        assert_eq!(r.command_at(45.0), Command::ChangeLeft);
    }
}
