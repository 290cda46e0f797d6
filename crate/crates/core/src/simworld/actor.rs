use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{Polyline, Pose, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActorKind {
    Vehicle,
    Pedestrian,
    Obstacle,
}

impl ActorKind {
    /// (length, width, height) in metres.
    pub fn dimensions(self) -> (f64, f64, f64) {
        match self {
            ActorKind::Vehicle => (4.4, 1.8, 1.5),
            ActorKind::Pedestrian => (0.6, 0.6, 1.8),
            ActorKind::Obstacle => (1.2, 1.2, 1.0),
        }
    }
}

/// When a script starts running its speed phases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Trigger {
    Immediate,
    AtTime(f64),
    /// Fires once the ego centre comes within `distance` of `point`.
    EgoWithin { point: Vec2, distance: f64 },
}

/// From `after` seconds past the trigger, approach `target` speed at `accel` m/s².
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeedPhase {
    pub after: f64,
    pub target: f64,
    pub accel: f64,
}

/// Deterministic motion along a fixed path.
#[derive(Clone, Debug, PartialEq)]
pub struct Script {
    pub path: Arc<Polyline>,
    pub arc: f64,
    pub trigger: Trigger,
    pub triggered_at: Option<f64>,
    pub phases: Vec<SpeedPhase>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Actor {
    pub id: u32,
    pub kind: ActorKind,
    pub pose: Pose,
    pub speed: f64,
    pub script: Option<Script>,
}

impl Actor {
    pub fn stationary(id: u32, kind: ActorKind, pose: Pose) -> Self {
        Actor {
            id,
            kind,
            pose,
            speed: 0.0,
            script: None,
        }
    }

    /// Actor placed at arc length `arc` of `path`, moving with `speed` until its phases say otherwise.
    pub fn on_path(id: u32, kind: ActorKind, path: Arc<Polyline>, arc: f64, speed: f64, trigger: Trigger, phases: Vec<SpeedPhase>) -> Self {
        let pose = Pose {
            position: path.point_at(arc),
            heading: path.heading_at(arc),
        };
        Actor {
            id,
            kind,
            pose,
            speed,
            script: Some(Script {
                path,
                arc,
                trigger,
                triggered_at: None,
                phases,
            }),
        }
    }

    pub fn dimensions(&self) -> (f64, f64, f64) {
        self.kind.dimensions()
    }

    /// Footprint corners in world coordinates.
    pub fn corners(&self) -> [Vec2; 4] {
        let (l, w, _) = self.dimensions();
        let (hl, hw) = (l / 2.0, w / 2.0);
        [
            Vec2::new(hl, hw),
            Vec2::new(hl, -hw),
            Vec2::new(-hl, -hw),
            Vec2::new(-hl, hw),
        ]
        .map(|c| self.pose.to_world(c))
    }

    /// Advances the script by `dt`; `ego` is used only for proximity triggers.
    pub fn advance(&mut self, now: f64, dt: f64, ego: Option<Vec2>) {
        let Some(script) = self.script.as_mut() else { return };
        if script.triggered_at.is_none() {
            let fire = match script.trigger {
                Trigger::Immediate => true,
                Trigger::AtTime(t) => now >= t,
                Trigger::EgoWithin { point, distance } => ego.is_some_and(|e| e.distance(point) <= distance),
            };
            if fire {
                script.triggered_at = Some(now);
            }
        }
        if let Some(t0) = script.triggered_at {
            let elapsed = now - t0;
            if let Some(phase) = script.phases.iter().rev().find(|p| elapsed >= p.after) {
                let dv = phase.accel * dt;
                self.speed = if self.speed < phase.target {
                    (self.speed + dv).min(phase.target)
                } else {
                    (self.speed - dv).max(phase.target)
                };
            }
        }
        let len = script.path.length();
        script.arc = (script.arc + self.speed * dt).min(len);
        if script.arc >= len {
            self.speed = 0.0;
        }
        self.pose = Pose {
            position: script.path.point_at(script.arc),
            heading: script.path.heading_at(script.arc),
        };
    }

    /// Positions after each of `steps` increments of `dt`, assuming untriggered
    /// proximity scripts stay dormant.
    pub fn predict(&self, now: f64, dt: f64, steps: usize) -> Vec<Pose> {
        let mut ghost = self.clone();
        (0..steps)
            .map(|i| {
                ghost.advance(now + i as f64 * dt, dt, None);
                ghost.pose
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn braking_phase_stops_and_resumes() {
        let path = Arc::new(Polyline::new(vec![Vec2::ZERO, Vec2::new(500.0, 0.0)]));
        let mut a = Actor::on_path(
            1,
            ActorKind::Vehicle,
            path,
            0.0,
            5.0,
            Trigger::AtTime(1.0),
            vec![
                SpeedPhase { after: 0.0, target: 0.0, accel: 5.0 },
                SpeedPhase { after: 3.0, target: 5.0, accel: 1.0 },
            ],
        );
        let dt = 0.05;
        let mut t = 0.0;
        for _ in 0..20 {
            a.advance(t, dt, None);
            t += dt;
        }
        assert_eq!(a.speed, 5.0);
        for _ in 0..40 {
            a.advance(t, dt, None);
            t += dt;
        }
        assert_eq!(a.speed, 0.0);
        for _ in 0..60 {
            a.advance(t, dt, None);
            t += dt;
        }
        assert!(a.speed > 0.0);
    }

    #[test]
    fn proximity_trigger_waits_for_ego() {
        let path = Arc::new(Polyline::new(vec![Vec2::new(10.0, -5.0), Vec2::new(10.0, 5.0)]));
        let mut p = Actor::on_path(
            2,
            ActorKind::Pedestrian,
            path,
            0.0,
            0.0,
            Trigger::EgoWithin { point: Vec2::new(10.0, 0.0), distance: 5.0 },
            vec![SpeedPhase { after: 0.0, target: 1.5, accel: 10.0 }],
        );
        p.advance(0.0, 0.1, Some(Vec2::new(0.0, 0.0)));
        assert_eq!(p.speed, 0.0);
        p.advance(0.1, 0.1, Some(Vec2::new(6.0, 0.0)));
        assert!(p.speed > 0.0);
        assert!(p.predict(0.2, 0.5, 3)[2].position.y > p.pose.position.y);
    }
}
