use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simworld::{
    render_front_view, run_episode_observed, Agent, Camera, EndReason, EpisodeConfig, EpisodeOutcome, ExpertAgent,
    ExpertConfig, WorldState,
};

use super::dataset::{Provenance, SampleRecord};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    pub sample_hz: f64,
    pub episode: EpisodeConfig,
    pub expert: ExpertConfig,
    pub camera: Camera,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            sample_hz: 2.0,
            episode: EpisodeConfig::default(),
            expert: ExpertConfig::default(),
            camera: Camera::default(),
        }
    }
}

impl CollectConfig {
    /// Simulation steps between samples; the sample period must be a whole number of steps.
    pub fn sample_interval(&self) -> Result<usize> {
        let ratio = 1.0 / (self.sample_hz * self.episode.dt);
        let steps = ratio.round();
        if !(self.sample_hz > 0.0) || steps < 1.0 || (ratio - steps).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "sample rate {} Hz does not divide the simulation rate {} Hz",
                self.sample_hz,
                1.0 / self.episode.dt
            )));
        }
        Ok(steps as usize)
    }
}

#[derive(Clone, Debug)]
pub struct Collection {
    pub records: Vec<SampleRecord>,
    pub outcome: EpisodeOutcome,
}

/// Drives `world` with `driver` and records, at every sample instant, the
/// camera frame and measurements together with the expert's plan and action
/// for that state. The expert runs in the shadow at every step so its
/// controller state follows the driven trajectory.
pub fn collect_episode(
    driver: &mut dyn Agent,
    world: WorldState,
    cfg: &CollectConfig,
    provenance: Provenance,
) -> Result<Collection> {
    let every = cfg.sample_interval()?;
    let mut expert = ExpertAgent::new(cfg.expert);
    expert.reset();
    let mut records = Vec::new();
    let mut failure = None;
    let outcome = run_episode_observed(world, driver, &cfg.episode, &mut |step, w, _| {
        if failure.is_some() {
            return;
        }
        let decision = match expert.decide(w) {
            Ok(d) => d,
            Err(e) => {
                failure = Some(e);
                return;
            }
        };
        if step % every == 0 {
            let (image, _) = render_front_view(w, &cfg.camera);
            records.push(SampleRecord {
                image,
                speed: w.ego.speed,
                command: w.command(),
                goal: w.goal(),
                expert_waypoints: decision.plan,
                expert_action: decision.action,
                provenance,
                flagged: false,
            });
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if matches!(outcome.end, EndReason::AgentFailed(_)) {
        for r in &mut records {
            r.flagged = true;
        }
    }
    Ok(Collection { records, outcome })
}
