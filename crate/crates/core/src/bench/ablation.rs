use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simworld::{Agent, EpisodeConfig, ScenarioSpec};

use super::{run_benchmark, score_route, BenchmarkReport, PenaltyConfig};

/// One scenario driven by both agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub route: String,
    pub detection_collisions: usize,
    pub classification_collisions: usize,
    pub detection_completion: f64,
    pub classification_completion: f64,
    pub detection_score: f64,
    pub classification_score: f64,
    /// Detection collisions ≤ classification collisions.
    pub detection_not_worse: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub detection: BenchmarkReport,
    pub classification: BenchmarkReport,
    pub rows: Vec<PairedRow>,
}

impl AblationReport {
    pub fn pair(detection: BenchmarkReport, classification: BenchmarkReport) -> Result<Self> {
        if detection.routes.len() != classification.routes.len() {
            return Err(Error::invalid("paired reports cover different suites"));
        }
        let mut rows = Vec::with_capacity(detection.routes.len());
        for (d, c) in detection.routes.iter().zip(&classification.routes) {
            if d.scenario != c.scenario {
                return Err(Error::invalid(format!("unpaired routes {} and {}", d.id(), c.id())));
            }
            rows.push(PairedRow {
                route: d.id(),
                detection_collisions: d.collisions(),
                classification_collisions: c.collisions(),
                detection_completion: d.completion,
                classification_completion: c.completion,
                detection_score: score_route(d, &detection.penalties)?,
                classification_score: score_route(c, &classification.penalties)?,
                detection_not_worse: d.collisions() <= c.collisions(),
            });
        }
        Ok(AblationReport { detection, classification, rows })
    }

    /// Share of pairs where the detection agent collided no more often.
    pub fn fraction_not_worse(&self) -> f64 {
        self.rows.iter().filter(|r| r.detection_not_worse).count() as f64 / self.rows.len().max(1) as f64
    }
}

/// Drives both agents over the same seeded suite.
pub fn run_ablation(
    detection: &mut dyn Agent,
    classification: &mut dyn Agent,
    suite: &[ScenarioSpec],
    episode: &EpisodeConfig,
    penalties: &PenaltyConfig,
) -> Result<AblationReport> {
    let d = run_benchmark(detection, suite, episode, penalties)?;
    let c = run_benchmark(classification, suite, episode, penalties)?;
    AblationReport::pair(d, c)
}

pub fn write_ablation(rows: &[PairedRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let fail = |e: csv::Error| Error::format("ablation table", format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    for r in rows {
        w.serialize(r).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ablation(path: impl AsRef<Path>) -> Result<Vec<PairedRow>> {
    let path = path.as_ref();
    let fail = |e: csv::Error| Error::format("ablation table", format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(fail)?;
    r.deserialize().map(|row| row.map_err(fail)).collect()
}
