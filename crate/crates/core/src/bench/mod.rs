//! Leaderboard-style route scoring, benchmark reports and the paired
//! detection-versus-classification ablation.

mod ablation;
mod report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::simworld::{make_scenario, run_episode, Agent, EndReason, EpisodeConfig, EpisodeOutcome, InfractionEvent, InfractionKind, ScenarioSpec};

pub use ablation::{read_ablation, run_ablation, write_ablation, AblationReport, PairedRow};
pub use report::{emit_report, plot_name, read_events, read_table, route_svg, EventLine, ReportFiles, EVENTS_FILE, PLOT_DIR, TABLE_FILE};

/// Multiplicative penalty per infraction kind.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    pub pedestrian: f64,
    pub vehicle: f64,
    pub layout: f64,
    pub off_road: f64,
    pub route_deviation: f64,
    pub blocked: f64,
    pub timeout: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            pedestrian: 0.5,
            vehicle: 0.6,
            layout: 0.65,
            off_road: 1.0,
            route_deviation: 1.0,
            blocked: 1.0,
            timeout: 1.0,
        }
    }
}

impl PenaltyConfig {
    pub fn penalty(&self, kind: InfractionKind) -> f64 {
        match kind {
            InfractionKind::CollisionPedestrian => self.pedestrian,
            InfractionKind::CollisionVehicle => self.vehicle,
            InfractionKind::CollisionLayout => self.layout,
            InfractionKind::OffRoad => self.off_road,
            InfractionKind::RouteDeviation => self.route_deviation,
            InfractionKind::Blocked => self.blocked,
            InfractionKind::Timeout => self.timeout,
        }
    }

    /// Penalty for a kind given by name; unknown names are rejected.
    pub fn penalty_for(&self, name: &str) -> Result<f64> {
        Ok(self.penalty(InfractionKind::parse(name)?))
    }

    pub fn validate(&self) -> Result<()> {
        for kind in InfractionKind::ALL {
            let p = self.penalty(kind);
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config {
                    field: format!("penalties.{}", kind.name()),
                    message: format!("coefficient must lie in (0, 1], got {p}"),
                });
            }
        }
        Ok(())
    }

    /// Π over events of penalty(kind), computed per kind as `p^count` so the
    /// result does not depend on event order.
    pub fn infraction_penalty(&self, events: &[InfractionKind]) -> f64 {
        InfractionKind::ALL
            .iter()
            .map(|&k| self.penalty(k).powi(events.iter().filter(|&&e| e == k).count() as i32))
            .product()
    }
}

/// Outcome of one route, as scored by the benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteResult {
    pub scenario: ScenarioSpec,
    /// Percentage of route distance covered.
    pub completion: f64,
    pub events: Vec<InfractionEvent>,
    /// Seconds.
    pub duration: f64,
    pub km: f64,
    pub route: Vec<Vec2>,
    pub ego_path: Vec<Vec2>,
}

impl RouteResult {
    pub fn from_outcome(scenario: ScenarioSpec, outcome: &EpisodeOutcome) -> Self {
        RouteResult {
            scenario,
            completion: outcome.completion.clamp(0.0, 100.0),
            events: outcome.events.clone(),
            duration: outcome.duration,
            km: outcome.distance / 1000.0,
            route: outcome.route.clone(),
            ego_path: outcome.ego_path(),
        }
    }

    /// `kind:seed`.
    pub fn id(&self) -> String {
        format!("{}:{}", self.scenario.kind, self.scenario.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.completion) {
            return Err(Error::invalid(format!("{}: completion {} outside [0, 100]", self.id(), self.completion)));
        }
        if !(self.km >= 0.0 && self.km.is_finite() && self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::invalid(format!("{}: distance and duration must be finite and non-negative", self.id())));
        }
        Ok(())
    }

    pub fn count(&self, kind: InfractionKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn collisions(&self) -> usize {
        self.events.iter().filter(|e| e.kind.is_collision()).count()
    }

    fn kinds(&self) -> Vec<InfractionKind> {
        self.events.iter().map(|e| e.kind).collect()
    }
}

/// Driving score `completion × Π penalty(kind)`.
pub fn score_route(r: &RouteResult, penalties: &PenaltyConfig) -> Result<f64> {
    r.validate()?;
    Ok(r.completion * penalties.infraction_penalty(&r.kinds()))
}

/// Distances below one metre count as one metre when turning counts into rates.
pub const MIN_RATE_KM: f64 = 1e-3;

fn rate(count: usize, km: f64) -> f64 {
    count as f64 / km.max(MIN_RATE_KM)
}

/// One line of the metrics table. Infraction columns are rates per km.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    #[serde(rename = "Route")]
    pub route: String,
    #[serde(rename = "Driving score")]
    pub driving_score: f64,
    #[serde(rename = "Route completion")]
    pub route_completion: f64,
    #[serde(rename = "Infraction penalty")]
    pub infraction_penalty: f64,
    #[serde(rename = "Collisions pedestrians [per km]")]
    pub collisions_pedestrians: f64,
    #[serde(rename = "Collisions vehicles [per km]")]
    pub collisions_vehicles: f64,
    #[serde(rename = "Collisions layout [per km]")]
    pub collisions_layout: f64,
    #[serde(rename = "Red light infractions [per km]")]
    pub red_light: f64,
    #[serde(rename = "Stop sign infractions [per km]")]
    pub stop_sign: f64,
    #[serde(rename = "Off-road infractions [per km]")]
    pub off_road: f64,
    #[serde(rename = "Route deviations [per km]")]
    pub route_deviations: f64,
    #[serde(rename = "Route timeouts [per km]")]
    pub route_timeouts: f64,
    #[serde(rename = "Agent blocked [per km]")]
    pub agent_blocked: f64,
    #[serde(rename = "Distance [km]")]
    pub km: f64,
    #[serde(rename = "Duration [s]")]
    pub duration: f64,
}

/// Name of the aggregate line in [`BenchmarkReport::table`].
pub const AGGREGATE_ROW: &str = "aggregate";

/// Column headers in table order.
pub const TABLE_COLUMNS: [&str; 15] = [
    "Route",
    "Driving score",
    "Route completion",
    "Infraction penalty",
    "Collisions pedestrians [per km]",
    "Collisions vehicles [per km]",
    "Collisions layout [per km]",
    "Red light infractions [per km]",
    "Stop sign infractions [per km]",
    "Off-road infractions [per km]",
    "Route deviations [per km]",
    "Route timeouts [per km]",
    "Agent blocked [per km]",
    "Distance [km]",
    "Duration [s]",
];

fn rates_row(route: String, ds: f64, rc: f64, ip: f64, count: &dyn Fn(InfractionKind) -> usize, km: f64, duration: f64) -> MetricsRow {
    MetricsRow {
        route,
        driving_score: ds,
        route_completion: rc,
        infraction_penalty: ip,
        collisions_pedestrians: rate(count(InfractionKind::CollisionPedestrian), km),
        collisions_vehicles: rate(count(InfractionKind::CollisionVehicle), km),
        collisions_layout: rate(count(InfractionKind::CollisionLayout), km),
        red_light: 0.0,
        stop_sign: 0.0,
        off_road: rate(count(InfractionKind::OffRoad), km),
        route_deviations: rate(count(InfractionKind::RouteDeviation), km),
        route_timeouts: rate(count(InfractionKind::Timeout), km),
        agent_blocked: rate(count(InfractionKind::Blocked), km),
        km,
        duration,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub agent: String,
    pub penalties: PenaltyConfig,
    pub routes: Vec<RouteResult>,
}

impl BenchmarkReport {
    pub fn new(agent: impl Into<String>, penalties: PenaltyConfig, routes: Vec<RouteResult>) -> Result<Self> {
        if routes.is_empty() {
            return Err(Error::Rejected("a benchmark report needs at least one route".into()));
        }
        penalties.validate()?;
        for r in &routes {
            r.validate()?;
        }
        Ok(BenchmarkReport { agent: agent.into(), penalties, routes })
    }

    pub fn route_row(&self, r: &RouteResult) -> Result<MetricsRow> {
        let ip = self.penalties.infraction_penalty(&r.kinds());
        Ok(rates_row(r.id(), score_route(r, &self.penalties)?, r.completion, ip, &|k| r.count(k), r.km, r.duration))
    }

    /// Mean per-route driving score, completion and penalty; rates are total
    /// events over total distance.
    pub fn aggregate(&self) -> Result<MetricsRow> {
        let rows = self.routes.iter().map(|r| self.route_row(r)).collect::<Result<Vec<_>>>()?;
        let n = rows.len() as f64;
        let mean = |f: fn(&MetricsRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let km: f64 = self.routes.iter().map(|r| r.km).sum();
        let duration: f64 = self.routes.iter().map(|r| r.duration).sum();
        Ok(rates_row(
            AGGREGATE_ROW.into(),
            mean(|r| r.driving_score),
            mean(|r| r.route_completion),
            mean(|r| r.infraction_penalty),
            &|k| self.routes.iter().map(|r| r.count(k)).sum(),
            km,
            duration,
        ))
    }

    /// Per-route rows followed by the aggregate row.
    pub fn table(&self) -> Result<Vec<MetricsRow>> {
        let mut rows = self.routes.iter().map(|r| self.route_row(r)).collect::<Result<Vec<_>>>()?;
        rows.push(self.aggregate()?);
        Ok(rows)
    }

    pub fn collisions(&self) -> usize {
        self.routes.iter().map(|r| r.collisions()).sum()
    }
}

/// Runs every scenario of `suite` with its own seed. An agent that errors
/// aborts the benchmark.
pub fn run_benchmark(
    agent: &mut dyn Agent,
    suite: &[ScenarioSpec],
    episode: &EpisodeConfig,
    penalties: &PenaltyConfig,
) -> Result<BenchmarkReport> {
    if suite.is_empty() {
        return Err(Error::Rejected("benchmark suite is empty".into()));
    }
    penalties.validate()?;
    let mut routes = Vec::with_capacity(suite.len());
    for spec in suite {
        let outcome = run_episode(make_scenario(spec)?, agent, episode);
        if let EndReason::AgentFailed(msg) = &outcome.end {
            return Err(Error::Rejected(format!("agent `{}` failed on {}:{}: {msg}", agent.name(), spec.kind, spec.seed)));
        }
        routes.push(RouteResult::from_outcome(*spec, &outcome));
    }
    BenchmarkReport::new(agent.name(), *penalties, routes)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::simworld::{ExpertAgent, ScenarioKind};

    pub(crate) fn result(completion: f64, kinds: &[InfractionKind], km: f64) -> RouteResult {
        RouteResult {
            scenario: ScenarioSpec::new(ScenarioKind::Follow, 0),
            completion,
            events: kinds
                .iter()
                .enumerate()
                .map(|(i, &kind)| InfractionEvent {
                    kind,
                    time: i as f64,
                    position: Vec2::new(i as f64, 0.5),
                    actor: kind.is_collision().then_some(i as u32),
                })
                .collect(),
            duration: 30.0,
            km,
            route: vec![Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)],
            ego_path: vec![Vec2::new(0.0, 0.0), Vec2::new(50.0, 0.2)],
        }
    }

    #[test]
    fn scoring_examples() {
        let p = PenaltyConfig::default();
        assert_eq!(score_route(&result(100.0, &[], 0.1), &p).unwrap(), 100.0);
        assert_eq!(score_route(&result(50.0, &[InfractionKind::CollisionVehicle], 0.1), &p).unwrap(), 30.0);
        let two = [InfractionKind::CollisionPedestrian; 2];
        assert_eq!(score_route(&result(100.0, &two, 0.1), &p).unwrap(), 25.0);
        assert!(score_route(&result(101.0, &[], 0.1), &p).is_err());
        assert!(p.penalty_for("collision-cyclist").is_err());
        assert_eq!(p.penalty_for("collision-layout").unwrap(), 0.65);
    }

    #[test]
    fn penalties_validated() {
        let mut p = PenaltyConfig::default();
        p.blocked = 0.0;
        assert!(p.validate().is_err());
        p.blocked = 1.2;
        assert!(p.validate().is_err());
    }

    #[test]
    fn aggregate_is_mean_of_routes() {
        let routes = vec![
            result(100.0, &[], 0.2),
            result(50.0, &[InfractionKind::CollisionVehicle, InfractionKind::OffRoad], 0.1),
        ];
        let rep = BenchmarkReport::new("a", PenaltyConfig::default(), routes).unwrap();
        let agg = rep.aggregate().unwrap();
        assert_eq!(agg.driving_score, 65.0);
        assert_eq!(agg.route_completion, 75.0);
        assert_eq!(agg.infraction_penalty, 0.8);
        assert!((agg.collisions_vehicles - 1.0 / 0.3).abs() < 1e-12);
        assert!((agg.off_road - 1.0 / 0.3).abs() < 1e-12);
        assert_eq!((agg.red_light, agg.stop_sign), (0.0, 0.0));
        let table = rep.table().unwrap();
        assert_eq!(table.len(), 3);
        assert_eq!(table[1].collisions_vehicles, 10.0);
        assert_eq!(table[2].route, AGGREGATE_ROW);
    }

    #[test]
    fn empty_suite_rejected() {
        let e = run_benchmark(&mut ExpertAgent::default(), &[], &EpisodeConfig::default(), &PenaltyConfig::default());
        assert!(matches!(e, Err(Error::Rejected(_))));
        assert!(BenchmarkReport::new("a", PenaltyConfig::default(), vec![]).is_err());
    }

    #[test]
    fn expert_benchmark_is_clean_and_repeatable() {
        let suite = [
            ScenarioSpec::new(ScenarioKind::LeadVehicleStop, 4),
            ScenarioSpec::new(ScenarioKind::PedestrianCrossing, 2),
        ];
        let run = || run_benchmark(&mut ExpertAgent::default(), &suite, &EpisodeConfig::default(), &PenaltyConfig::default()).unwrap();
        let a = run();
        assert_eq!(a.collisions(), 0);
        let agg = a.aggregate().unwrap();
        assert_eq!(agg.collisions_pedestrians + agg.collisions_vehicles + agg.collisions_layout, 0.0);
        assert_eq!(a, run());
    }
}
