//! Camera-driven agents: frozen perception, trainable fusion + planner, PID control.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::{ControllerConfig, VehicleController};
use crate::error::{Error, Result};
use crate::fusion::{measurement_rows, Command, FusionConfig, FusionNet};
use crate::geometry::Vec2;
use crate::numerics::{ParamSet, Tape, Tensor, Var};
use crate::perception::{Classifier, Detector, ObjectClass};
use crate::planner::{GruPlanner, PlannerConfig, WaypointPlan};
use crate::simworld::{render_front_view, Agent, AgentStep, Camera, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerceptionKind {
    Detection,
    Classification,
}

impl PerceptionKind {
    pub fn name(self) -> &'static str {
        match self {
            PerceptionKind::Detection => "detection",
            PerceptionKind::Classification => "classification",
        }
    }
}

#[derive(Clone, Debug)]
pub enum PerceptionModel {
    Detector(Detector),
    Classifier(Classifier),
}

/// Frozen perception network with its parameters.
#[derive(Clone, Debug)]
pub struct PerceptionStack {
    pub model: PerceptionModel,
    pub params: ParamSet,
    pub camera: Camera,
}

/// What the policy sees of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptionFeatures {
    /// Globally pooled backbone feature, width c.
    pub pooled: Vec<f64>,
    /// Detection slots (5·N) or class distribution (5).
    pub scene: Vec<f64>,
}

impl PerceptionStack {
    pub fn kind(&self) -> PerceptionKind {
        match self.model {
            PerceptionModel::Detector(_) => PerceptionKind::Detection,
            PerceptionModel::Classifier(_) => PerceptionKind::Classification,
        }
    }

    pub fn scene_width(&self) -> usize {
        match &self.model {
            PerceptionModel::Detector(d) => 5 * d.config.queries,
            PerceptionModel::Classifier(_) => ObjectClass::COUNT,
        }
    }

    pub fn residual_width(&self) -> usize {
        match &self.model {
            PerceptionModel::Detector(d) => d.backbone.channels(),
            PerceptionModel::Classifier(c) => c.backbone.channels(),
        }
    }

    pub fn features(&self, image: &Tensor) -> Result<PerceptionFeatures> {
        match &self.model {
            PerceptionModel::Detector(d) => {
                let p = d.detect(&self.params, image)?;
                Ok(PerceptionFeatures {
                    scene: p.detections.scene_block(),
                    pooled: p.pooled,
                })
            }
            PerceptionModel::Classifier(c) => {
                let out = c.classify(&self.params, image)?;
                Ok(PerceptionFeatures {
                    scene: out.probs,
                    pooled: out.pooled,
                })
            }
        }
    }

    /// Renders the ego camera and runs perception on it.
    pub fn observe(&self, w: &WorldState) -> Result<PerceptionFeatures> {
        let (img, _) = render_front_view(w, &self.camera);
        self.features(&img.to_tensor())
    }
}

/// Fixed input and output scales keeping gate pre-activations near unit range.
pub const SPEED_SCALE: f64 = 5.0;
pub const GOAL_SCALE: f64 = 10.0;
pub const WAYPOINT_SCALE: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    /// Common branch width d inside the fusion network.
    pub width: usize,
    /// Fused vector width c_f.
    pub fused_width: usize,
    pub hidden: usize,
    pub waypoints: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            width: 32,
            fused_width: 64,
            hidden: 64,
            waypoints: 4,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| Error::Config {
            field: format!("policy.{field}"),
            message: message.into(),
        };
        if self.width == 0 || self.fused_width == 0 || self.hidden == 0 {
            return Err(bad("width", "widths must be positive"));
        }
        if self.waypoints < 2 {
            return Err(bad("waypoints", "needs at least two waypoints"));
        }
        Ok(())
    }
}

/// One policy input: cached perception plus measurements and goal.
#[derive(Clone, Copy, Debug)]
pub struct PolicyInput<'a> {
    pub features: &'a PerceptionFeatures,
    pub speed: f64,
    pub command: Command,
    pub goal: Vec2,
}

/// Fusion network followed by the GRU planner.
#[derive(Clone, Debug)]
pub struct Policy {
    pub config: PolicyConfig,
    pub fusion: FusionNet,
    pub planner: GruPlanner,
}

impl Policy {
    pub fn new(params: &mut ParamSet, config: PolicyConfig, scene_width: usize, residual_width: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let fusion = FusionNet::new(
            params,
            FusionConfig {
                scene_width,
                residual_width,
                width: config.width,
                fused_width: config.fused_width,
            },
            rng,
        );
        let planner = GruPlanner::new(
            params,
            PlannerConfig {
                input_width: config.fused_width,
                hidden: config.hidden,
                waypoints: config.waypoints,
            },
            rng,
        );
        Ok(Policy { config, fusion, planner })
    }

    pub fn for_perception(params: &mut ParamSet, config: PolicyConfig, perception: &PerceptionStack, rng: &mut impl Rng) -> Result<Self> {
        Self::new(params, config, perception.scene_width(), perception.residual_width(), rng)
    }

    /// Batched prediction, `[b, 2K]` in plan order.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, batch: &[PolicyInput]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::invalid("empty policy batch"));
        }
        let rows = |f: &dyn for<'b> Fn(&'b PolicyInput<'_>) -> &'b [f64]| {
            Tensor::from_rows(&batch.iter().map(|b| f(b).to_vec()).collect::<Vec<_>>())
        };
        let pooled = tape.constant(rows(&|b| &b.features.pooled)?);
        let scene = tape.constant(rows(&|b| &b.features.scene)?);
        let meas = measurement_rows(&batch.iter().map(|b| (b.speed / SPEED_SCALE, b.command)).collect::<Vec<_>>())?;
        let meas = tape.constant(meas);
        let goal = tape.constant(Tensor::from_rows(
            &batch
                .iter()
                .map(|b| vec![b.goal.x / GOAL_SCALE, b.goal.y / GOAL_SCALE])
                .collect::<Vec<_>>(),
        )?);
        let p = self.fusion.fuse_perception(tape, params, pooled, scene)?;
        let m = self.fusion.encode_measurements(tape, params, meas)?;
        let fused = self.fusion.fuse_all(tape, params, p, m)?;
        let out = self.planner.rollout(tape, params, fused, goal)?;
        Ok(tape.scale(out, WAYPOINT_SCALE))
    }

    pub fn plan(&self, params: &ParamSet, input: &PolicyInput) -> Result<WaypointPlan> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, params, std::slice::from_ref(input))?;
        WaypointPlan::from_flat(tape.value(out).data())
    }
}

/// Simulator agent built from a perception stack and a trained policy.
#[derive(Clone, Debug)]
pub struct LearnedAgent {
    name: String,
    pub perception: Arc<PerceptionStack>,
    pub policy: Arc<Policy>,
    pub params: Arc<ParamSet>,
    controller: VehicleController,
}

impl LearnedAgent {
    pub fn new(
        name: impl Into<String>,
        perception: Arc<PerceptionStack>,
        policy: Arc<Policy>,
        params: Arc<ParamSet>,
        controller: ControllerConfig,
    ) -> Self {
        LearnedAgent {
            name: name.into(),
            perception,
            policy,
            params,
            controller: VehicleController::new(controller),
        }
    }
}

impl Agent for LearnedAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn reset(&mut self) {
        self.controller.reset();
    }

    fn act(&mut self, w: &WorldState) -> Result<AgentStep> {
        let features = self.perception.observe(w)?;
        let input = PolicyInput {
            features: &features,
            speed: w.ego.speed,
            command: w.command(),
            goal: w.goal().0,
        };
        let plan = self.policy.plan(&self.params, &input)?;
        let out = self.controller.act(&plan, w.ego.speed)?;
        Ok(AgentStep {
            action: out.action,
            plan: Some(plan),
        })
    }
}
