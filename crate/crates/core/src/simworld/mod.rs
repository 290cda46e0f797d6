//! Deterministic 2D driving world.
//!
//! The ego vehicle follows a kinematic bicycle model; other actors replay
//! fixed scripts. Everything is a plain value: stepping maps one
//! [`WorldState`] to the next without hidden state, so an episode is fully
//! determined by its scenario, its agent and `dt`.

mod actor;
pub mod episode;
pub mod expert;
pub mod infraction;
pub mod render;
mod road;
mod route;
pub mod scenario;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::control::ControlAction;
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec2};

pub use actor::{Actor, ActorKind, Script, SpeedPhase, Trigger};
pub use episode::{
    read_trace, run_episode, run_episode_observed, write_trace, Agent, AgentStep, EndReason, EpisodeConfig, EpisodeOutcome,
    TraceRecord,
};
pub use expert::{corridor_hazard, expert_plan, ExpertAgent, ExpertConfig, ExpertDecision};
pub use infraction::{detect_infractions, InfractionEvent, InfractionKind};
pub use render::{actor_class, render_front_view, Camera, Image};
pub use road::{offset_polyline, Area, Lane, PathBuilder, Road, Surface};
pub use route::{CommandSpan, Route};
pub use scenario::{make_scenario, ScenarioKind, ScenarioSpec, CRUISE_SPEED};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub wheelbase: f64,
    /// Road-wheel angle at |steer| = 1, radians.
    pub max_steer: f64,
    /// Acceleration per unit of positive throttle before the cap, m/s².
    pub throttle_accel: f64,
    /// Hard cap on forward acceleration, m/s².
    pub accel_cap: f64,
    /// Deceleration at full brake (throttle = −1), m/s².
    pub brake_decel: f64,
    pub length: f64,
    pub width: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            wheelbase: 2.5,
            max_steer: 35f64.to_radians(),
            throttle_accel: 2.0,
            accel_cap: 0.2,
            brake_decel: 5.0,
            length: 4.5,
            width: 1.9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub pose: Pose,
    pub speed: f64,
    /// Continuous time spent below the blocked-speed threshold.
    pub stopped_for: f64,
}

/// Speed below which the ego counts as stationary.
pub const STOPPED_SPEED: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub time: f64,
    pub ego: EgoState,
    pub actors: Vec<Actor>,
    pub route: Arc<Route>,
    pub road: Arc<Road>,
    pub vehicle: VehicleParams,
    /// Furthest arc length reached along the route.
    pub progress: f64,
    /// Current distance from the ego centre to the route path.
    pub route_offset: f64,
}

impl WorldState {
    pub fn new(ego: EgoState, actors: Vec<Actor>, route: Arc<Route>, road: Arc<Road>, vehicle: VehicleParams) -> Result<Self> {
        if route.key_points().len() < 2 {
            return Err(Error::invalid("route needs at least two key points"));
        }
        if ego.speed < 0.0 || actors.iter().any(|a| a.speed < 0.0) {
            return Err(Error::invalid("speeds must be non-negative"));
        }
        let proj = route.path().project(ego.pose.position);
        Ok(WorldState {
            time: 0.0,
            ego,
            actors,
            progress: proj.arc_length,
            route_offset: proj.distance,
            route,
            road,
            vehicle,
        })
    }

    pub fn completion(&self) -> f64 {
        (100.0 * self.progress / self.route.length()).clamp(0.0, 100.0)
    }

    pub fn command(&self) -> crate::fusion::Command {
        self.route.command_at(self.progress)
    }

    pub fn goal(&self) -> crate::planner::GoalPoint {
        self.route.goal(self.progress, &self.ego.pose)
    }

    /// Centres of the circles that approximate the ego footprint.
    pub fn ego_circles(&self) -> ([Vec2; 3], f64) {
        let half = self.vehicle.length / 2.0 - self.vehicle.width / 2.0;
        let f = self.ego.pose.forward();
        let c = self.ego.pose.position;
        ([c - f * half, c, c + f * half], self.vehicle.width / 2.0 + 0.05)
    }
}

/// Advances the world by `dt` seconds under `action`.
pub fn step_world(w: &WorldState, action: ControlAction, dt: f64) -> Result<WorldState> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(Error::invalid(format!("dt must lie in (0, 0.1], got {dt}")));
    }
    if !action.steer.is_finite() || !action.throttle.is_finite() {
        return Err(Error::invalid("non-finite control action"));
    }
    let vp = &w.vehicle;
    let steer = action.steer.clamp(-1.0, 1.0);
    let throttle = action.throttle.clamp(-1.0, 1.0);
    let accel = if throttle > 0.0 {
        (throttle * vp.throttle_accel).min(vp.accel_cap)
    } else {
        throttle * vp.brake_decel
    };
    let v0 = w.ego.speed;
    let v1 = (v0 + accel * dt).max(0.0);
    let ds = 0.5 * (v0 + v1) * dt;

    // Positive steer turns right, i.e. clockwise in the world frame.
    let curvature = -(steer * vp.max_steer).tan() / vp.wheelbase;
    let Pose { position: p, heading: th } = w.ego.pose;
    let pose = if (curvature * ds).abs() < 1e-12 {
        Pose {
            position: p + Vec2::from_angle(th) * ds,
            heading: th,
        }
    } else {
        let th1 = th + curvature * ds;
        Pose {
            position: Vec2::new(
                p.x + (th1.sin() - th.sin()) / curvature,
                p.y + (th.cos() - th1.cos()) / curvature,
            ),
            heading: th1,
        }
    };

    let mut next = w.clone();
    for actor in &mut next.actors {
        actor.advance(w.time, dt, Some(p));
    }
    next.time = w.time + dt;
    next.ego = EgoState {
        pose,
        speed: v1,
        stopped_for: if v1 < STOPPED_SPEED { w.ego.stopped_for + dt } else { 0.0 },
    };
    let proj = w.route.project_near(pose.position, w.progress);
    next.progress = w.progress.max(proj.arc_length);
    next.route_offset = proj.distance;
    Ok(next)
}
