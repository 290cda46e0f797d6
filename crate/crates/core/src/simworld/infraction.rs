use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

use super::{Actor, ActorKind, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfractionKind {
    CollisionPedestrian,
    CollisionVehicle,
    CollisionLayout,
    OffRoad,
    RouteDeviation,
    Blocked,
    Timeout,
}

impl InfractionKind {
    pub const ALL: [InfractionKind; 7] = [
        InfractionKind::CollisionPedestrian,
        InfractionKind::CollisionVehicle,
        InfractionKind::CollisionLayout,
        InfractionKind::OffRoad,
        InfractionKind::RouteDeviation,
        InfractionKind::Blocked,
        InfractionKind::Timeout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InfractionKind::CollisionPedestrian => "collision-pedestrian",
            InfractionKind::CollisionVehicle => "collision-vehicle",
            InfractionKind::CollisionLayout => "collision-layout",
            InfractionKind::OffRoad => "off-road",
            InfractionKind::RouteDeviation => "route-deviation",
            InfractionKind::Blocked => "blocked",
            InfractionKind::Timeout => "timeout",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown infraction kind `{s}`")))
    }

    pub fn is_collision(self) -> bool {
        matches!(
            self,
            InfractionKind::CollisionPedestrian | InfractionKind::CollisionVehicle | InfractionKind::CollisionLayout
        )
    }

    fn for_actor(kind: ActorKind) -> Self {
        match kind {
            ActorKind::Vehicle => InfractionKind::CollisionVehicle,
            ActorKind::Pedestrian => InfractionKind::CollisionPedestrian,
            ActorKind::Obstacle => InfractionKind::CollisionLayout,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfractionEvent {
    pub kind: InfractionKind,
    pub time: f64,
    pub position: Vec2,
    /// Actor involved, for collisions.
    pub actor: Option<u32>,
}

pub const ROUTE_DEVIATION_DISTANCE: f64 = 30.0;
pub const BLOCKED_AFTER: f64 = 90.0;

fn circle_hits_box(c: Vec2, r: f64, actor: &Actor) -> bool {
    let local = actor.pose.to_local(c);
    let (l, w, _) = actor.dimensions();
    let dx = (local.x.abs() - l / 2.0).max(0.0);
    let dy = (local.y.abs() - w / 2.0).max(0.0);
    dx * dx + dy * dy <= r * r
}

pub fn ego_touches(w: &WorldState, actor: &Actor) -> bool {
    let (centres, r) = w.ego_circles();
    centres.iter().any(|&c| circle_hits_box(c, r, actor))
}

/// Violations that begin between `prev` and `next`; a condition that persists
/// produces no further events until it has cleared.
pub fn detect_infractions(prev: &WorldState, next: &WorldState) -> Vec<InfractionEvent> {
    let at = next.ego.pose.position;
    let event = |kind, actor| InfractionEvent {
        kind,
        time: next.time,
        position: at,
        actor,
    };
    let mut events = Vec::new();
    for actor in &next.actors {
        if !ego_touches(next, actor) {
            continue;
        }
        let before = prev.actors.iter().find(|a| a.id == actor.id).is_some_and(|a| ego_touches(prev, a));
        if !before {
            events.push(event(InfractionKind::for_actor(actor.kind), Some(actor.id)));
        }
    }
    if !next.road.is_drivable(at) && prev.road.is_drivable(prev.ego.pose.position) {
        events.push(event(InfractionKind::OffRoad, None));
    }
    if next.route_offset > ROUTE_DEVIATION_DISTANCE && prev.route_offset <= ROUTE_DEVIATION_DISTANCE {
        events.push(event(InfractionKind::RouteDeviation, None));
    }
    if next.ego.stopped_for >= BLOCKED_AFTER && prev.ego.stopped_for < BLOCKED_AFTER {
        events.push(event(InfractionKind::Blocked, None));
    }
    let budget = next.route.time_budget;
    if next.time >= budget && prev.time < budget {
        events.push(event(InfractionKind::Timeout, None));
    }
    events
}
