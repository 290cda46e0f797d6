//! GRU waypoint decoder.
//!
//! The hidden state starts from an embedding of the ego position (the origin
//! in its own frame), and each step consumes `fused ⊕ goal`. The affine head
//! turns every hidden state into one waypoint, so the K outputs come out in
//! goal→ego order.

mod plan;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Linear, ParamSet, Tape, Tensor, Var};

pub use plan::{GoalPoint, WaypointPlan};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub input_width: usize,
    pub hidden: usize,
    pub waypoints: usize,
}

/// One GRU cell: update gate z, reset gate r, candidate ĥ.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub update: Linear,
    pub reset: Linear,
    pub candidate: Linear,
    pub hidden: usize,
    pub input: usize,
}

impl GruCell {
    pub fn new(params: &mut ParamSet, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w = hidden + input;
        GruCell {
            update: Linear::new(params, &format!("{name}.z"), w, hidden, rng),
            reset: Linear::new(params, &format!("{name}.r"), w, hidden, rng),
            candidate: Linear::new(params, &format!("{name}.h"), w, hidden, rng),
            hidden,
            input,
        }
    }

    /// `h[b, hidden]`, `x[b, input]` → next hidden state.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, h: Var, x: Var) -> Result<Var> {
        let (hs, xs) = (tape.value(h).shape().to_vec(), tape.value(x).shape().to_vec());
        if hs.len() != 2 || xs.len() != 2 || hs[1] != self.hidden || xs[1] != self.input || hs[0] != xs[0] {
            return Err(Error::shape("gru_cell", &hs, &xs));
        }
        let hx = tape.concat_cols(&[h, x])?;
        let z = self.update.forward(tape, params, hx)?;
        let z = tape.sigmoid(z);
        let r = self.reset.forward(tape, params, hx)?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h)?;
        let rhx = tape.concat_cols(&[rh, x])?;
        let cand = self.candidate.forward(tape, params, rhx)?;
        let cand = tape.tanh(cand);
        let keep = tape.mul(z, h)?;
        let one_minus_z = tape.one_minus(z);
        let fresh = tape.mul(one_minus_z, cand)?;
        tape.add(fresh, keep)
    }
}

#[derive(Clone, Debug)]
pub struct GruPlanner {
    pub config: PlannerConfig,
    pub origin_embed: Linear,
    pub cell: GruCell,
    pub head: Linear,
}

impl GruPlanner {
    pub fn new(params: &mut ParamSet, config: PlannerConfig, rng: &mut impl Rng) -> Self {
        assert!(config.waypoints >= 2, "planner needs at least two waypoints");
        GruPlanner {
            origin_embed: Linear::new(params, "planner.h0", 2, config.hidden, rng),
            cell: GruCell::new(params, "planner.gru", config.input_width + 2, config.hidden, rng),
            head: Linear::new(params, "planner.out", config.hidden, 2, rng),
            config,
        }
    }

    /// `fused[b, input_width]`, `goal[b, 2]` → `[b, 2K]` laid out `[x0, y0, x1, y1, ...]`.
    pub fn rollout(&self, tape: &mut Tape, params: &ParamSet, fused: Var, goal: Var) -> Result<Var> {
        let b = tape.value(fused).rows();
        let ego = tape.constant(Tensor::zeros(&[b, 2]));
        let mut h = self.origin_embed.forward(tape, params, ego)?;
        let x = tape.concat_cols(&[fused, goal])?;
        let mut outs = Vec::with_capacity(self.config.waypoints);
        for _ in 0..self.config.waypoints {
            h = self.cell.forward(tape, params, h, x)?;
            outs.push(self.head.forward(tape, params, h)?);
        }
        tape.concat_cols(&outs)
    }
}
