//! Feature fusion: perception block + pooled backbone residual, and
//! speed + navigation command, merged into one fused vector per sample.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Activation, Linear, Mlp, ParamSet, Tape, Tensor, Var};

/// Navigation command issued by the route planner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    FollowLane,
    ChangeLeft,
    ChangeRight,
    TurnLeft,
    TurnRight,
    Straight,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::FollowLane,
        Command::ChangeLeft,
        Command::ChangeRight,
        Command::TurnLeft,
        Command::TurnRight,
        Command::Straight,
    ];

    pub fn index(self) -> usize {
        Command::ALL.iter().position(|c| *c == self).unwrap()
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Command::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::invalid(format!("command index {i} out of range")))
    }

    pub fn one_hot(self) -> [f64; 6] {
        let mut v = [0.0; 6];
        v[self.index()] = 1.0;
        v
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::FollowLane => "follow-lane",
            Command::ChangeLeft => "change-left",
            Command::ChangeRight => "change-right",
            Command::TurnLeft => "turn-left",
            Command::TurnRight => "turn-right",
            Command::Straight => "straight",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Width of the flattened perception block (5·N for detections).
    pub scene_width: usize,
    /// Backbone channel count (pooled residual input width).
    pub residual_width: usize,
    /// Common width d of both branches.
    pub width: usize,
    /// Output width c_f.
    pub fused_width: usize,
}

/// Weights of the fusion network; the parameters live in a caller-owned [`ParamSet`].
#[derive(Clone, Debug)]
pub struct FusionNet {
    pub config: FusionConfig,
    residual: Mlp,
    perception: Linear,
    measurement: Mlp,
    head: Mlp,
}

impl FusionNet {
    pub fn new(params: &mut ParamSet, config: FusionConfig, rng: &mut impl Rng) -> Self {
        let d = config.width;
        let residual = Mlp::new(
            params,
            "fusion.residual",
            &[config.residual_width, d],
            Activation::Relu,
            true,
            rng,
        );
        let perception = Linear::new(params, "fusion.perception", config.scene_width + d, d, rng);
        let measurement = Mlp::new(params, "fusion.measurement", &[7, d, d], Activation::Relu, true, rng);
        let head = Mlp::new(
            params,
            "fusion.head",
            &[d, config.fused_width, config.fused_width, config.fused_width],
            Activation::Relu,
            false,
            rng,
        );
        FusionNet {
            config,
            residual,
            perception,
            measurement,
            head,
        }
    }

    /// `pooled[b, c]`, `scene[b, scene_width]` → `[b, d]`. The residual MLP output is
    /// concatenated after the scene block has been flattened.
    pub fn fuse_perception(&self, tape: &mut Tape, params: &ParamSet, pooled: Var, scene: Var) -> Result<Var> {
        let s = tape.value(scene).shape().to_vec();
        if s.len() != 2 || s[1] != self.config.scene_width {
            return Err(Error::shape("fuse_perception", &s, &[s[0], self.config.scene_width]));
        }
        let r = self.residual.forward(tape, params, pooled)?;
        let cat = tape.concat_cols(&[scene, r])?;
        let y = self.perception.forward(tape, params, cat)?;
        Ok(tape.relu(y))
    }

    /// `measurements[b, 7]` (one-hot command ⊕ speed) → `[b, d]`.
    pub fn encode_measurements(&self, tape: &mut Tape, params: &ParamSet, measurements: Var) -> Result<Var> {
        self.measurement.forward(tape, params, measurements)
    }

    /// Elementwise sum of both branches followed by the three-layer head.
    pub fn fuse_all(&self, tape: &mut Tape, params: &ParamSet, p: Var, m: Var) -> Result<Var> {
        let sum = tape.add(p, m)?;
        self.head.forward(tape, params, sum)
    }
}

/// `[one_hot(cmd), speed]` rows for a batch.
pub fn measurement_rows(items: &[(f64, Command)]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(items.len() * 7);
    for &(speed, cmd) in items {
        if !(speed >= 0.0) {
            return Err(Error::invalid(format!("speed must be non-negative, got {speed}")));
        }
        data.extend_from_slice(&cmd.one_hot());
        data.push(speed);
    }
    Tensor::matrix(items.len(), 7, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(n: usize) -> (FusionNet, ParamSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::new();
        let cfg = FusionConfig {
            scene_width: 5 * n,
            residual_width: 8,
            width: 16,
            fused_width: 12,
        };
        (FusionNet::new(&mut ps, cfg, &mut rng), ps)
    }

    #[test]
    fn one_hot_commands() {
        assert_eq!(Command::from_index(2).unwrap().one_hot(), [0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        for c in Command::ALL {
            assert_eq!(c.one_hot().iter().sum::<f64>(), 1.0);
        }
        assert!(Command::from_index(6).is_err());
    }

    #[test]
    fn negative_speed_rejected() {
        assert!(measurement_rows(&[(-0.1, Command::FollowLane)]).is_err());
        assert!(measurement_rows(&[(f64::NAN, Command::FollowLane)]).is_err());
    }

    #[test]
    fn shape_chain() {
        let (f, ps) = net(16);
        let mut t = Tape::new();
        let pooled = t.constant(Tensor::zeros(&[3, 8]));
        let scene = t.constant(Tensor::zeros(&[3, 80]));
        let p = f.fuse_perception(&mut t, &ps, pooled, scene).unwrap();
        assert_eq!(t.value(p).shape(), &[3, 16]);
        let m = t.constant(measurement_rows(&[(0.0, Command::TurnLeft); 3]).unwrap());
        let m = f.encode_measurements(&mut t, &ps, m).unwrap();
        assert_eq!(t.value(m).shape(), &[3, 16]);
        let out = f.fuse_all(&mut t, &ps, p, m).unwrap();
        assert_eq!(t.value(out).shape(), &[3, 12]);
        assert!(t.value(out).all_finite());

        let bad = t.constant(Tensor::zeros(&[3, 79]));
        assert!(f.fuse_perception(&mut t, &ps, pooled, bad).is_err());
        let narrow = t.constant(Tensor::zeros(&[3, 15]));
        assert!(f.fuse_all(&mut t, &ps, p, narrow).is_err());
    }

    #[test]
    fn full_scale_flatten_width() {
        let (f, _) = net(100);
        assert_eq!(f.config.scene_width, 500);
    }

    #[test]
    fn sum_stage_commutes() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![0.1, -2.0, 3.5]));
        let z = t.constant(Tensor::zeros(&[3]));
        let a = t.add(x, z).unwrap();
        let b = t.add(z, x).unwrap();
        assert_eq!(t.value(a), t.value(b));
    }
}
