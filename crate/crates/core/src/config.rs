//! Run configuration: one TOML file, every field validated, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::PolicyConfig;
use crate::bench::PenaltyConfig;
use crate::control::ControllerConfig;
use crate::error::{Error, Result};
use crate::learning::{CollectConfig, TrainConfig};
use crate::perception::{DetectorConfig, LossConfig, PretrainConfig};
use crate::simworld::{Camera, EpisodeConfig, ExpertConfig, ScenarioKind, ScenarioSpec};

fn bad(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    /// Synthetic frames rendered for perception pretraining.
    pub frames: usize,
    /// Frames held out for evaluation.
    pub holdout_frames: usize,
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub loss: LossConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub goal_tolerance: f64,
    pub sample_hz: f64,
    pub camera: Camera,
    pub expert: ExpertConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DaggerSection {
    pub rounds: u32,
    /// Training epochs on the mixed set of each round.
    pub epochs: usize,
}

/// `count` consecutive seeds from `start` for every listed kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSpec {
    pub kinds: Vec<ScenarioKind>,
    pub start: u64,
    pub count: u64,
    #[serde(default = "one")]
    pub density: f64,
}

fn one() -> f64 {
    1.0
}

impl SuiteSpec {
    pub fn scenarios(&self) -> Vec<ScenarioSpec> {
        self.kinds
            .iter()
            .flat_map(|&kind| {
                (self.start..self.start + self.count).map(move |seed| ScenarioSpec {
                    kind,
                    seed,
                    density: self.density,
                })
            })
            .collect()
    }

    fn validate(&self, field: &str) -> Result<()> {
        if self.kinds.is_empty() || self.count == 0 {
            return Err(bad(field, "suite must list at least one kind and one seed"));
        }
        if !(self.density >= 0.0 && self.density.is_finite()) {
            return Err(bad(field, format!("density must be non-negative, got {}", self.density)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSection {
    /// Expert episodes of the offline dataset; also driven by the student in DAgger rounds.
    pub collect: SuiteSpec,
    /// Expert episodes whose records form the held-out loss set.
    pub holdout: SuiteSpec,
    /// Student evaluation after training.
    pub evaluate: SuiteSpec,
    pub bench: SuiteSpec,
    pub ablation: SuiteSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory, relative paths resolved against the working directory.
    pub out: PathBuf,
    pub detector: DetectorConfig,
    pub pretrain: PretrainSection,
    pub policy: PolicyConfig,
    pub controller: ControllerConfig,
    pub sim: SimSection,
    pub train: TrainSection,
    pub dagger: DaggerSection,
    pub suite: SuiteSection,
    pub penalties: PenaltyConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| format!("bytes {}..{}", s.start, s.end)).unwrap_or_else(|| "config".into());
            bad(&field, e.message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config { field, message } => Error::Config {
                field: format!("{}: {field}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("run config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.policy.validate()?;
        self.penalties.validate()?;
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(bad(field, format!("must be positive, got {v}")))
            }
        };
        let nonzero = |field: &str, v: usize| if v > 0 { Ok(()) } else { Err(bad(field, "must be positive")) };
        nonzero("pretrain.frames", self.pretrain.frames)?;
        nonzero("pretrain.holdout_frames", self.pretrain.holdout_frames)?;
        nonzero("pretrain.batch", self.pretrain.batch)?;
        positive("pretrain.learning_rate", self.pretrain.learning_rate)?;
        nonzero("train.epochs", self.train.epochs)?;
        nonzero("train.batch", self.train.batch)?;
        positive("train.learning_rate", self.train.learning_rate)?;
        nonzero("dagger.epochs", self.dagger.epochs)?;
        positive("sim.dt", self.sim.dt)?;
        positive("sim.goal_tolerance", self.sim.goal_tolerance)?;
        positive("controller.max_throttle", self.controller.max_throttle)?;
        if self.controller.max_throttle > 1.0 {
            return Err(bad("controller.max_throttle", "must not exceed 1"));
        }
        let cam = &self.sim.camera;
        if cam.width != self.detector.image_size || cam.height != self.detector.image_size {
            return Err(bad(
                "sim.camera",
                format!("{}x{} frames do not match detector.image_size {}", cam.width, cam.height, self.detector.image_size),
            ));
        }
        if self.sim.expert.waypoints != self.policy.waypoints {
            return Err(bad("sim.expert.waypoints", "must equal policy.waypoints"));
        }
        self.collect_config()
            .sample_interval()
            .map_err(|e| bad("sim.sample_hz", e.to_string()))?;
        self.suite.collect.validate("suite.collect")?;
        self.suite.holdout.validate("suite.holdout")?;
        self.suite.evaluate.validate("suite.evaluate")?;
        self.suite.bench.validate("suite.bench")?;
        self.suite.ablation.validate("suite.ablation")?;
        Ok(())
    }

    pub fn episode(&self) -> EpisodeConfig {
        EpisodeConfig {
            dt: self.sim.dt,
            goal_tolerance: self.sim.goal_tolerance,
        }
    }

    pub fn collect_config(&self) -> CollectConfig {
        CollectConfig {
            sample_hz: self.sim.sample_hz,
            episode: self.episode(),
            expert: self.sim.expert,
            camera: self.sim.camera,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            steps: self.pretrain.steps,
            batch: self.pretrain.batch,
            learning_rate: self.pretrain.learning_rate,
            seed: self.seed,
            loss: self.pretrain.loss,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch: self.train.batch,
            learning_rate: self.train.learning_rate,
            seed: self.seed,
        }
    }

    pub fn dagger_train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.dagger.epochs,
            ..self.train_config()
        }
    }
}

/// Desk-scale preset, identical to `configs/desk.cfg`.
pub const DESK_PRESET: &str = include_str!("../../../configs/desk.cfg");
/// Full-scale preset, identical to `configs/full.cfg`.
pub const FULL_PRESET: &str = include_str!("../../../configs/full.cfg");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        let desk = RunConfig::parse(DESK_PRESET).unwrap();
        assert_eq!((desk.train.epochs, desk.train.batch, desk.dagger.rounds), (50, 32, 3));
        let full = RunConfig::parse(FULL_PRESET).unwrap();
        assert_eq!((full.train.epochs, full.train.batch, full.dagger.rounds), (501, 128, 12));
        assert_eq!(full.train.learning_rate, 1e-4);
        assert_eq!(full.detector.queries, 100);
        assert_eq!(full.controller.max_throttle, 0.75);
        assert_eq!(full.controller.lateral.kp, 1.25);
    }

    #[test]
    fn round_trips_through_toml() {
        let desk = RunConfig::parse(DESK_PRESET).unwrap();
        assert_eq!(RunConfig::parse(&desk.to_toml().unwrap()).unwrap(), desk);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = DESK_PRESET.replace("[train]", "[train]\nmomentum = 0.9");
        assert!(matches!(RunConfig::parse(&text), Err(Error::Config { .. })));
        let text = format!("colour = \"red\"\n{DESK_PRESET}");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn invalid_values_name_the_field() {
        let mut cfg = RunConfig::parse(DESK_PRESET).unwrap();
        cfg.train.learning_rate = -1.0;
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "train.learning_rate"),
            other => panic!("{other:?}"),
        }
        let mut cfg = RunConfig::parse(DESK_PRESET).unwrap();
        cfg.sim.sample_hz = 3.0;
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "sim.sample_hz"));
        let mut cfg = RunConfig::parse(DESK_PRESET).unwrap();
        cfg.sim.camera.width = 32;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn suites_expand_in_kind_then_seed_order() {
        let s = SuiteSpec {
            kinds: vec![ScenarioKind::Follow, ScenarioKind::DenseTraffic],
            start: 7,
            count: 2,
            density: 1.0,
        };
        let v: Vec<_> = s.scenarios().iter().map(|s| (s.kind, s.seed)).collect();
        assert_eq!(
            v,
            [
                (ScenarioKind::Follow, 7),
                (ScenarioKind::Follow, 8),
                (ScenarioKind::DenseTraffic, 7),
                (ScenarioKind::DenseTraffic, 8)
            ]
        );
    }
}
