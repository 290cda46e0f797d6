//! Seeded scenario construction.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::Command;
use crate::geometry::{Polyline, Pose, Vec2};

use super::{
    offset_polyline, Actor, ActorKind, Area, CommandSpan, EgoState, Lane, PathBuilder, Road, Route, SpeedPhase, Trigger,
    VehicleParams, WorldState,
};

pub const LANE_WIDTH: f64 = 3.5;
pub const CRUISE_SPEED: f64 = 6.0;
pub const KEY_SPACING: f64 = 15.0;
/// Lane geometry continues this far past the route end.
const RUNOUT: f64 = 40.0;
const JUNCTION_HALF: f64 = 7.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Follow,
    LeadVehicleStop,
    PedestrianCrossing,
    IntersectionTurn,
    LaneChange,
    DenseTraffic,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::Follow,
        ScenarioKind::LeadVehicleStop,
        ScenarioKind::PedestrianCrossing,
        ScenarioKind::IntersectionTurn,
        ScenarioKind::LaneChange,
        ScenarioKind::DenseTraffic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Follow => "follow",
            ScenarioKind::LeadVehicleStop => "lead-vehicle-stop",
            ScenarioKind::PedestrianCrossing => "pedestrian-crossing",
            ScenarioKind::IntersectionTurn => "intersection-turn",
            ScenarioKind::LaneChange => "lane-change",
            ScenarioKind::DenseTraffic => "dense-traffic",
        }
    }

    fn salt(self) -> u64 {
        0x9e37_79b9_7f4a_7c15u64.wrapping_mul(self as u64 + 1)
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scenario kind `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub seed: u64,
    /// Multiplier on the number of background actors.
    #[serde(default = "default_density")]
    pub density: f64,
}

fn default_density() -> f64 {
    1.0
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        ScenarioSpec { kind, seed, density: 1.0 }
    }

    /// Parses `kind` or `kind:seed`.
    pub fn parse(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((k, seed)) => {
                let seed = seed.parse().map_err(|_| Error::invalid(format!("bad seed in `{s}`")))?;
                Ok(ScenarioSpec::new(k.parse()?, seed))
            }
            None => Ok(ScenarioSpec::new(s.parse()?, 0)),
        }
    }
}

/// Samples `line` every metre between arc lengths `s0` and `s1`.
fn sub_path(line: &Polyline, s0: f64, s1: f64) -> Polyline {
    let n = ((s1 - s0).ceil() as usize).max(1);
    Polyline::new((0..=n).map(|i| line.point_at(s0 + (s1 - s0) * i as f64 / n as f64)).collect())
}

fn reversed(line: &Polyline) -> Polyline {
    Polyline::new(line.points().iter().rev().copied().collect())
}

fn lane(centerline: Polyline) -> Lane {
    Lane {
        centerline,
        width: LANE_WIDTH,
        marked: true,
    }
}

fn time_budget(length: f64) -> f64 {
    (2.0 * length / CRUISE_SPEED + 45.0).round()
}

struct Builder {
    rng: ChaCha8Rng,
    actors: Vec<Actor>,
}

impl Builder {
    fn next_id(&self) -> u32 {
        self.actors.len() as u32 + 1
    }

    fn cruising(&mut self, kind: ActorKind, path: &Arc<Polyline>, arc: f64, speed: f64) {
        let id = self.next_id();
        self.actors.push(Actor::on_path(id, kind, path.clone(), arc, speed, Trigger::Immediate, vec![]));
    }

    /// Lead vehicle that brakes to a halt at `brake_at`, waits, then resumes.
    fn braking_lead(&mut self, path: &Arc<Polyline>, arc: f64, brake_at: f64) {
        let decel = self.rng.gen_range(3.0..5.0);
        let hold = self.rng.gen_range(3.0..6.0);
        let id = self.next_id();
        self.actors.push(Actor::on_path(
            id,
            ActorKind::Vehicle,
            path.clone(),
            arc,
            CRUISE_SPEED,
            Trigger::AtTime(brake_at),
            vec![
                SpeedPhase { after: 0.0, target: 0.0, accel: decel },
                SpeedPhase { after: CRUISE_SPEED / decel + hold, target: CRUISE_SPEED, accel: 1.0 },
            ],
        ));
    }

    /// Pedestrian crossing `base` at arc `s` from lateral `from` to `to`, released by ego proximity.
    fn crossing_pedestrian(&mut self, base: &Polyline, s: f64, from: f64, to: f64) {
        let centre = base.point_at(s);
        let normal = base.tangent_at(s).perp();
        let path = Arc::new(Polyline::new(vec![centre + normal * from, centre + normal * to]));
        let speed = self.rng.gen_range(1.2..1.6);
        let trigger = Trigger::EgoWithin {
            point: centre,
            distance: self.rng.gen_range(20.0..26.0),
        };
        let id = self.next_id();
        self.actors.push(Actor::on_path(
            id,
            ActorKind::Pedestrian,
            path,
            0.0,
            0.0,
            trigger,
            vec![SpeedPhase { after: 0.0, target: speed, accel: 3.0 }],
        ));
    }

    /// Gently curving base road of at least `length` metres plus run-out.
    fn base_road(&mut self, length: f64) -> Polyline {
        let a = self.rng.gen_range(15.0..30.0);
        let radius = self.rng.gen_range(40.0..90.0);
        let turn: f64 = self.rng.gen_range(0.2..0.6) * if self.rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let arc_len = radius * turn.abs();
        let rest = (length - a - arc_len).max(10.0) + RUNOUT;
        PathBuilder::new(Vec2::ZERO, 0.0).straight(a).arc(radius, turn).straight(rest).build()
    }
}

fn finish(b: Builder, route_path: Polyline, commands: Vec<CommandSpan>, lanes: Vec<Lane>, areas: Vec<Area>) -> Result<WorldState> {
    let mut route = Route::new(route_path, KEY_SPACING, commands, 0.0)?;
    route.time_budget = time_budget(route.length());
    let start = route.path().point_at(0.0);
    let ego = EgoState {
        pose: Pose {
            position: start,
            heading: route.path().heading_at(0.0),
        },
        speed: CRUISE_SPEED,
        stopped_for: 0.0,
    };
    WorldState::new(ego, b.actors, Arc::new(route), Arc::new(Road::new(lanes, areas)), VehicleParams::default())
}

/// Builds the initial world for `spec`; identical specs give identical worlds.
pub fn make_scenario(spec: &ScenarioSpec) -> Result<WorldState> {
    if !(spec.density >= 0.0 && spec.density.is_finite()) {
        return Err(Error::invalid(format!("density must be non-negative, got {}", spec.density)));
    }
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(spec.seed ^ spec.kind.salt()),
        actors: Vec::new(),
    };
    match spec.kind {
        ScenarioKind::Follow => follow(b, spec.density),
        ScenarioKind::LeadVehicleStop => {
            let length = b.rng.gen_range(120.0..150.0);
            let base = b.base_road(length);
            let path = Arc::new(base.clone());
            let gap = b.rng.gen_range(22.0..28.0);
            let brake_at = b.rng.gen_range(4.0..8.0);
            b.braking_lead(&path, gap, brake_at);
            let oncoming = offset_polyline(&base, LANE_WIDTH);
            let lanes = vec![lane(base.clone()), lane(oncoming)];
            finish(b, sub_path(&base, 0.0, length), vec![], lanes, vec![])
        }
        ScenarioKind::PedestrianCrossing => {
            let length = b.rng.gen_range(120.0..150.0);
            let base = b.base_road(length);
            let s = b.rng.gen_range(45.0..75.0);
            let (near, far) = (-LANE_WIDTH / 2.0 - 2.5, LANE_WIDTH * 1.5 + 2.5);
            if b.rng.gen_bool(0.5) {
                b.crossing_pedestrian(&base, s, near, far);
            } else {
                b.crossing_pedestrian(&base, s, far, near);
            }
            let oncoming = offset_polyline(&base, LANE_WIDTH);
            let lanes = vec![lane(base.clone()), lane(oncoming)];
            finish(b, sub_path(&base, 0.0, length), vec![], lanes, vec![])
        }
        ScenarioKind::IntersectionTurn => intersection(b),
        ScenarioKind::LaneChange => lane_change(b),
        ScenarioKind::DenseTraffic => dense(b, spec.density),
    }
}

fn follow(mut b: Builder, density: f64) -> Result<WorldState> {
    let sign = |r: &mut ChaCha8Rng| if r.gen_bool(0.5) { 1.0 } else { -1.0 };
    let a = b.rng.gen_range(20.0..35.0);
    let (r1, t1) = (b.rng.gen_range(25.0..60.0), b.rng.gen_range(0.3..0.9) * sign(&mut b.rng));
    let mid = b.rng.gen_range(15.0..30.0);
    let (r2, t2) = (b.rng.gen_range(25.0..60.0), b.rng.gen_range(0.3..0.9) * sign(&mut b.rng));
    let tail = b.rng.gen_range(15.0..30.0);
    let base = PathBuilder::new(Vec2::ZERO, 0.0)
        .straight(a)
        .arc(r1, t1)
        .straight(mid)
        .arc(r2, t2)
        .straight(tail + RUNOUT)
        .build();
    let length = a + r1 * t1.abs() + mid + r2 * t2.abs() + tail;
    let oncoming = reversed(&offset_polyline(&base, LANE_WIDTH));
    let on_path = Arc::new(oncoming.clone());
    let count = (b.rng.gen_range(0..=2) as f64 * density).round() as usize;
    for _ in 0..count {
        let arc = b.rng.gen_range(0.0..oncoming.length() * 0.7);
        let speed = b.rng.gen_range(4.0..7.0);
        b.cruising(ActorKind::Vehicle, &on_path, arc, speed);
    }
    let lanes = vec![lane(base.clone()), lane(oncoming)];
    finish(b, sub_path(&base, 0.0, length), vec![], lanes, vec![])
}

fn intersection(mut b: Builder) -> Result<WorldState> {
    let j = JUNCTION_HALF;
    let half = LANE_WIDTH / 2.0;
    let arm = 90.0;
    let approach = b.rng.gen_range(55.0..70.0);
    let exit = b.rng.gen_range(55.0..70.0);

    let mut lanes = Vec::new();
    for k in 0..4 {
        let d = Vec2::from_angle(k as f64 * FRAC_PI_2);
        let right = Vec2::new(d.y, -d.x);
        let (near, far) = (d * j, d * (j + arm));
        lanes.push(lane(Polyline::new(vec![near + right * half, far + right * half])));
        lanes.push(lane(Polyline::new(vec![far - right * half, near - right * half])));
    }
    let areas = vec![Area {
        min: Vec2::new(-j, -j),
        max: Vec2::new(j, j),
    }];

    let choice = b.rng.gen_range(0..3);
    let builder = PathBuilder::new(Vec2::new(-j - approach, -half), 0.0).straight(approach);
    let (builder, command) = match choice {
        0 => (builder.straight(2.0 * j), Command::Straight),
        1 => (builder.arc(j - half, -FRAC_PI_2), Command::TurnRight),
        _ => (builder.arc(j + half, FRAC_PI_2), Command::TurnLeft),
    };
    let through = match choice {
        0 => 2.0 * j,
        1 => (j - half) * FRAC_PI_2,
        _ => (j + half) * FRAC_PI_2,
    };
    let route_path = builder.straight(exit).build();
    let commands = vec![CommandSpan {
        start: approach - 15.0,
        end: approach + through,
        command,
    }];

    // Vehicles waiting at the side arms.
    for (pos, heading) in [(Vec2::new(half, -j - 3.0), FRAC_PI_2), (Vec2::new(-half, j + 3.0), -FRAC_PI_2)] {
        if b.rng.gen_bool(0.7) {
            let id = b.next_id();
            b.actors.push(Actor::stationary(id, ActorKind::Vehicle, Pose { position: pos, heading }));
        }
    }
    // Oncoming traffic that clears the junction before the ego arrives.
    if b.rng.gen_bool(0.6) {
        let start = (approach - 2.0 * j - 25.0 - b.rng.gen_range(0.0..10.0)).max(5.0);
        let path = Arc::new(Polyline::new(vec![Vec2::new(j + start, half), Vec2::new(-j - arm, half)]));
        b.cruising(ActorKind::Vehicle, &path, 0.0, CRUISE_SPEED);
    }
    finish(b, route_path, commands, lanes, areas)
}

fn lane_change(mut b: Builder) -> Result<WorldState> {
    let length = b.rng.gen_range(120.0..150.0);
    let base = b.base_road(length);
    let side = if b.rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let obstacle_at = b.rng.gen_range(60.0..80.0);
    let shift_len = 25.0;
    let shift_start = obstacle_at - 35.0;
    let offset = |s: f64| {
        let u = ((s - shift_start) / shift_len).clamp(0.0, 1.0);
        side * LANE_WIDTH * (1.0 - (PI * u).cos()) / 2.0
    };
    let n = length.ceil() as usize;
    let route_path = Polyline::new(
        (0..=n)
            .map(|i| {
                let s = length * i as f64 / n as f64;
                base.point_at(s) + base.tangent_at(s).perp() * offset(s)
            })
            .collect(),
    );
    let id = b.next_id();
    b.actors.push(Actor::stationary(
        id,
        ActorKind::Obstacle,
        Pose {
            position: base.point_at(obstacle_at),
            heading: base.heading_at(obstacle_at),
        },
    ));
    let target = offset_polyline(&base, side * LANE_WIDTH);
    if b.rng.gen_bool(0.5) {
        // Traffic well ahead in the target lane.
        let path = Arc::new(target.clone());
        let arc = b.rng.gen_range(obstacle_at + 15.0..obstacle_at + 30.0);
        b.cruising(ActorKind::Vehicle, &path, arc, CRUISE_SPEED);
    }
    let command = if side > 0.0 { Command::ChangeLeft } else { Command::ChangeRight };
    let commands = vec![CommandSpan {
        start: shift_start - 10.0,
        end: shift_start + shift_len,
        command,
    }];
    let lanes = vec![lane(base.clone()), lane(target)];
    finish(b, route_path, commands, lanes, vec![])
}

fn dense(mut b: Builder, density: f64) -> Result<WorldState> {
    let length = b.rng.gen_range(130.0..160.0);
    let base = b.base_road(length);
    let adjacent = offset_polyline(&base, LANE_WIDTH);
    let oncoming = reversed(&offset_polyline(&base, 2.0 * LANE_WIDTH));
    let own = Arc::new(base.clone());
    let adj = Arc::new(adjacent.clone());
    let onc = Arc::new(oncoming.clone());

    let lead_gap = b.rng.gen_range(20.0..28.0);
    if b.rng.gen_bool(0.7) {
        let brake_at = b.rng.gen_range(3.0..12.0);
        b.braking_lead(&own, lead_gap, brake_at);
    } else {
        b.cruising(ActorKind::Vehicle, &own, lead_gap, CRUISE_SPEED);
    }

    let n_adj = ((3.0 * density).round() as usize).max(1);
    let spacing = 50.0 / n_adj as f64;
    for i in 0..n_adj {
        let arc = -5.0 + spacing * i as f64 + b.rng.gen_range(0.0..spacing * 0.5);
        let speed = b.rng.gen_range(4.5..7.0);
        b.cruising(ActorKind::Vehicle, &adj, arc.max(0.0), speed);
    }
    // Oncoming arc measured from the far end back toward the ego.
    let n_onc = ((2.0 * density).round() as usize).max(1);
    let far_end = oncoming.length();
    for i in 0..n_onc {
        let ahead = 12.0 + 36.0 * i as f64 / n_onc as f64 + b.rng.gen_range(0.0..8.0);
        let speed = b.rng.gen_range(4.0..7.0);
        b.cruising(ActorKind::Vehicle, &onc, far_end - ahead, speed);
    }
    if b.rng.gen_bool(0.5) {
        let s = b.rng.gen_range(60.0..100.0);
        b.crossing_pedestrian(&base, s, -LANE_WIDTH / 2.0 - 2.5, LANE_WIDTH * 2.5 + 2.5);
    }
    let lanes = vec![lane(base.clone()), lane(adjacent), lane(oncoming)];
    finish(b, sub_path(&base, 0.0, length), vec![], lanes, vec![])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_specs_identical_worlds() {
        for kind in ScenarioKind::ALL {
            for seed in [0, 7] {
                let a = make_scenario(&ScenarioSpec::new(kind, seed)).unwrap();
                let b = make_scenario(&ScenarioSpec::new(kind, seed)).unwrap();
                assert_eq!(a, b, "{kind}");
            }
        }
    }

    #[test]
    fn dense_traffic_is_dense() {
        for seed in 0..20 {
            let w = make_scenario(&ScenarioSpec::new(ScenarioKind::DenseTraffic, seed)).unwrap();
            let near = w
                .actors
                .iter()
                .filter(|a| a.pose.position.distance(w.ego.pose.position) <= 50.0)
                .count();
            assert!(near >= 6, "seed {seed}: {near}");
        }
    }

    #[test]
    fn pedestrian_crosses_ego_lane() {
        for seed in 0..10 {
            let w = make_scenario(&ScenarioSpec::new(ScenarioKind::PedestrianCrossing, seed)).unwrap();
            let ped = w.actors.iter().find(|a| a.kind == ActorKind::Pedestrian).unwrap();
            let path = &ped.script.as_ref().unwrap().path;
            let ends = path.points();
            let lat = |p: Vec2| w.route.path().project(p).lateral;
            assert!(lat(ends[0]).signum() != lat(*ends.last().unwrap()).signum());
        }
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!("roundabout".parse::<ScenarioKind>().is_err());
        assert_eq!(ScenarioSpec::parse("lane-change:4").unwrap(), ScenarioSpec::new(ScenarioKind::LaneChange, 4));
        for k in ScenarioKind::ALL {
            assert_eq!(k.name().parse::<ScenarioKind>().unwrap(), k);
        }
    }

    #[test]
    fn ego_starts_on_road_at_cruise() {
        for kind in ScenarioKind::ALL {
            let w = make_scenario(&ScenarioSpec::new(kind, 1)).unwrap();
            assert!(w.road.is_drivable(w.ego.pose.position), "{kind}");
            assert_eq!(w.ego.speed, CRUISE_SPEED);
            assert!(w.route.time_budget > w.route.length() / CRUISE_SPEED);
        }
    }
}
