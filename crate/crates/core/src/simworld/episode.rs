use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::ControlAction;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::planner::WaypointPlan;

use super::infraction::{detect_infractions, InfractionEvent, InfractionKind};
use super::{step_world, WorldState};

/// What an agent does for one control period.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentStep {
    pub action: ControlAction,
    pub plan: Option<WaypointPlan>,
}

pub trait Agent {
    fn name(&self) -> &str;
    /// Clears controller memory before a new episode.
    fn reset(&mut self);
    fn act(&mut self, w: &WorldState) -> Result<AgentStep>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub dt: f64,
    /// Remaining arc length at which the route counts as finished.
    pub goal_tolerance: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            dt: 0.05,
            goal_tolerance: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndReason {
    Completed,
    Timeout,
    Blocked,
    RouteDeviation,
    /// The agent returned an error; the trace up to that point is kept.
    AgentFailed(String),
}

/// One line of the episode trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub steer: f64,
    pub throttle: f64,
    pub events: Vec<InfractionKind>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub agent: String,
    pub trace: Vec<TraceRecord>,
    pub events: Vec<InfractionEvent>,
    /// Percentage of route length covered.
    pub completion: f64,
    pub duration: f64,
    pub distance: f64,
    pub end: EndReason,
    pub route: Vec<Vec2>,
}

impl EpisodeOutcome {
    pub fn collisions(&self) -> usize {
        self.events.iter().filter(|e| e.kind.is_collision()).count()
    }

    pub fn ego_path(&self) -> Vec<Vec2> {
        self.trace.iter().map(|r| Vec2::new(r.x, r.y)).collect()
    }
}

/// Runs `agent` from `world` until the route ends, times out, blocks or deviates.
pub fn run_episode(world: WorldState, agent: &mut dyn Agent, cfg: &EpisodeConfig) -> EpisodeOutcome {
    run_episode_observed(world, agent, cfg, &mut |_, _, _| {})
}

/// As [`run_episode`], calling `observe(step, state, agent_step)` before each world step.
pub fn run_episode_observed(
    mut world: WorldState,
    agent: &mut dyn Agent,
    cfg: &EpisodeConfig,
    observe: &mut dyn FnMut(usize, &WorldState, &AgentStep),
) -> EpisodeOutcome {
    agent.reset();
    let route_len = world.route.length();
    let mut trace = Vec::new();
    let mut events = Vec::new();
    let mut distance = 0.0;
    let mut step = 0usize;
    let end = loop {
        let decision = match agent.act(&world) {
            Ok(d) => d,
            Err(e) => break EndReason::AgentFailed(e.to_string()),
        };
        observe(step, &world, &decision);
        let mut next = match step_world(&world, decision.action, cfg.dt) {
            Ok(n) => n,
            Err(e) => break EndReason::AgentFailed(e.to_string()),
        };
        if route_len - next.progress <= cfg.goal_tolerance {
            next.progress = route_len;
        }
        let new_events = detect_infractions(&world, &next);
        distance += next.ego.pose.position.distance(world.ego.pose.position);
        trace.push(TraceRecord {
            t: next.time,
            x: next.ego.pose.position.x,
            y: next.ego.pose.position.y,
            heading: next.ego.pose.heading,
            speed: next.ego.speed,
            steer: decision.action.steer,
            throttle: decision.action.throttle,
            events: new_events.iter().map(|e| e.kind).collect(),
        });
        let finished = next.progress >= route_len;
        let stop = new_events.iter().find_map(|e| match e.kind {
            InfractionKind::Timeout => Some(EndReason::Timeout),
            InfractionKind::Blocked => Some(EndReason::Blocked),
            InfractionKind::RouteDeviation => Some(EndReason::RouteDeviation),
            _ => None,
        });
        events.extend(new_events);
        world = next;
        step += 1;
        if finished {
            break EndReason::Completed;
        }
        if let Some(reason) = stop {
            break reason;
        }
    };
    EpisodeOutcome {
        agent: agent.name().to_string(),
        trace,
        events,
        completion: world.completion(),
        duration: world.time,
        distance,
        end,
        route: world.route.path().points().to_vec(),
    }
}

pub fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in trace {
        let line = serde_json::to_string(r).map_err(|e| Error::format("trace record", e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .map(|line| {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| Error::format("trace record", e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::{make_scenario, ExpertAgent, ScenarioKind, ScenarioSpec};
    use super::*;

    struct Coast;

    impl Agent for Coast {
        fn name(&self) -> &str {
            "coast"
        }
        fn reset(&mut self) {}
        fn act(&mut self, _: &WorldState) -> Result<AgentStep> {
            Ok(AgentStep {
                action: ControlAction::BRAKE,
                plan: None,
            })
        }
    }

    #[test]
    fn braking_agent_gets_blocked() {
        let mut w = make_scenario(&ScenarioSpec::new(ScenarioKind::Follow, 0)).unwrap();
        let mut route = (*w.route).clone();
        route.time_budget = 1000.0;
        w.route = std::sync::Arc::new(route);
        let out = run_episode(w, &mut Coast, &EpisodeConfig::default());
        assert_eq!(out.end, EndReason::Blocked);
        assert!(out.completion < 20.0);
        assert_eq!(out.events.iter().filter(|e| e.kind == InfractionKind::Blocked).count(), 1);
    }

    #[test]
    fn expert_episode_is_deterministic_and_traceable() {
        let spec = ScenarioSpec::new(ScenarioKind::PedestrianCrossing, 2);
        let a = run_episode(make_scenario(&spec).unwrap(), &mut ExpertAgent::default(), &EpisodeConfig::default());
        let b = run_episode(make_scenario(&spec).unwrap(), &mut ExpertAgent::default(), &EpisodeConfig::default());
        assert_eq!(a, b);
        assert_eq!(a.end, EndReason::Completed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        write_trace(&path, &a.trace).unwrap();
        assert_eq!(read_trace(&path).unwrap(), a.trace);
    }
}
