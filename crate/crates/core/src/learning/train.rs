use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{PerceptionFeatures, PerceptionStack, Policy, PolicyInput};
use crate::error::{Error, Result};
use crate::fusion::Command;
use crate::geometry::Vec2;
use crate::numerics::{AdamState, ParamSet, Tape, Tensor, Var};
use crate::planner::WaypointPlan;

use super::dataset::Dataset;

/// `Σ_k |x̂_k − x_k| + |ŷ_k − y_k|`.
pub fn waypoint_loss(pred: &WaypointPlan, truth: &WaypointPlan) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::invalid(format!("plans have {} and {} waypoints", pred.len(), truth.len())));
    }
    Ok(pred
        .points()
        .iter()
        .zip(truth.points())
        .map(|(a, b)| (a.x - b.x).abs() + (a.y - b.y).abs())
        .sum())
}

/// Batch mean of the per-sample waypoint loss; `pred` and `truth` are `[b, 2K]`.
pub fn waypoint_loss_var(tape: &mut Tape, pred: Var, truth: &Tensor) -> Result<Var> {
    let target = tape.constant(truth.clone());
    let diff = tape.sub(pred, target)?;
    let abs = tape.abs(diff);
    let total = tape.sum(abs);
    Ok(tape.scale(total, 1.0 / truth.rows() as f64))
}

/// A record reduced to what the trainable policy consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: PerceptionFeatures,
    pub speed: f64,
    pub command: Command,
    pub goal: Vec2,
    pub target: Vec<f64>,
}

impl Example {
    pub fn input(&self) -> PolicyInput<'_> {
        PolicyInput {
            features: &self.features,
            speed: self.speed,
            command: self.command,
            goal: self.goal,
        }
    }
}

/// Runs the frozen perception once over every record.
pub fn examples(perception: &PerceptionStack, ds: &Dataset) -> Result<Vec<Example>> {
    ds.records
        .iter()
        .map(|r| {
            Ok(Example {
                features: perception.features(&r.image.to_tensor())?,
                speed: r.speed,
                command: r.command,
                goal: r.goal.0,
                target: r.expert_waypoints.flatten(),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

fn batch_loss(policy: &Policy, params: &ParamSet, tape: &mut Tape, batch: &[&Example]) -> Result<Var> {
    let inputs: Vec<PolicyInput> = batch.iter().map(|e| e.input()).collect();
    let pred = policy.forward(tape, params, &inputs)?;
    let truth = Tensor::from_rows(&batch.iter().map(|e| e.target.clone()).collect::<Vec<_>>())?;
    waypoint_loss_var(tape, pred, &truth)
}

/// Adam on the waypoint loss over `data`, reshuffled each epoch with the
/// configured seed. Only `params` (fusion + planner) change. Returns the
/// sample-weighted mean training loss of each epoch.
pub fn train_offline(
    policy: &Policy,
    params: &mut ParamSet,
    data: &[Example],
    cfg: &TrainConfig,
    observe: &mut dyn FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if cfg.batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
            let mut tape = Tape::new();
            let loss = batch_loss(policy, params, &mut tape, &batch)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Rejected(format!("training loss diverged in epoch {epoch}")));
            }
            total += value * batch.len() as f64;
            let grads = tape.backward(loss)?.for_params(params);
            adam.step(params, &grads, cfg.learning_rate)?;
        }
        let mean = total / data.len() as f64;
        observe(epoch, mean);
        curve.push(mean);
    }
    Ok(curve)
}

/// Mean per-sample waypoint loss of the policy on `data`.
pub fn evaluate_loss(policy: &Policy, params: &ParamSet, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let mut total = 0.0;
    for chunk in data.chunks(256) {
        let batch: Vec<&Example> = chunk.iter().collect();
        let mut tape = Tape::new();
        let loss = batch_loss(policy, params, &mut tape, &batch)?;
        total += tape.value(loss).item() * batch.len() as f64;
    }
    Ok(total / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::PolicyConfig;
    use proptest::prelude::*;
    use rand::Rng;

    fn plan(points: &[(f64, f64)]) -> WaypointPlan {
        WaypointPlan::new(points.iter().map(|&(x, y)| Vec2::new(x, y)).collect()).unwrap()
    }

    #[test]
    fn loss_examples() {
        let a = plan(&[(4.0, 0.0), (3.0, 0.5), (2.0, 0.2), (1.0, 0.0)]);
        assert_eq!(waypoint_loss(&a, &a).unwrap(), 0.0);
        let b = plan(&[(5.0, 1.0), (4.0, 1.5), (3.0, 1.2), (2.0, 1.0)]);
        assert_eq!(waypoint_loss(&a, &b).unwrap(), 8.0);
        assert!(waypoint_loss(&a, &plan(&[(0.0, 0.0)])).is_err());
    }

    proptest! {
        #[test]
        fn loss_is_symmetric_and_matches_direct_sum(
            xs in proptest::collection::vec(-50.0f64..50.0, 8),
            ys in proptest::collection::vec(-50.0f64..50.0, 8),
        ) {
            let a = WaypointPlan::from_flat(&xs).unwrap();
            let b = WaypointPlan::from_flat(&ys).unwrap();
            let mut direct = 0.0;
            for i in 0..8 {
                direct += (xs[i] - ys[i]).abs();
            }
            let l = waypoint_loss(&a, &b).unwrap();
            prop_assert!((l - direct).abs() < 1e-9);
            prop_assert_eq!(l, waypoint_loss(&b, &a).unwrap());
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, xs == ys);
        }
    }

    fn synthetic(n: usize, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let speed = rng.gen_range(0.0..6.0);
                let goal = Vec2::new(rng.gen_range(5.0..20.0), rng.gen_range(-5.0..5.0));
                let target = (0..4)
                    .flat_map(|k| {
                        let s = (4 - k) as f64;
                        [s * (1.0 + speed * 0.5), s * goal.y * 0.05]
                    })
                    .collect();
                Example {
                    features: PerceptionFeatures {
                        pooled: (0..8).map(|_| rng.gen()).collect(),
                        scene: (0..10).map(|_| rng.gen()).collect(),
                    },
                    speed,
                    command: Command::ALL[rng.gen_range(0..6)],
                    goal,
                    target,
                }
            })
            .collect()
    }

    fn policy() -> (Policy, ParamSet) {
        let mut ps = ParamSet::new();
        let cfg = PolicyConfig {
            width: 16,
            fused_width: 16,
            hidden: 16,
            waypoints: 4,
        };
        let p = Policy::new(&mut ps, cfg, 10, 8, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        (p, ps)
    }

    #[test]
    fn fifty_epochs_reduce_loss_deterministically() {
        let data = synthetic(64, 1);
        let cfg = TrainConfig {
            epochs: 50,
            batch: 16,
            learning_rate: 3e-3,
            seed: 5,
        };
        let (p, mut ps) = policy();
        let initial = evaluate_loss(&p, &ps, &data).unwrap();
        let curve = train_offline(&p, &mut ps, &data, &cfg, &mut |_, _| {}).unwrap();
        assert!(evaluate_loss(&p, &ps, &data).unwrap() < initial);
        assert!(curve[49] < curve[0]);
        let (p2, mut ps2) = policy();
        let curve2 = train_offline(&p2, &mut ps2, &data, &cfg, &mut |_, _| {}).unwrap();
        assert_eq!(curve, curve2);
        assert_eq!(ps.checksum(), ps2.checksum());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = synthetic(20, 2);
        let (p, mut ps) = policy();
        let before = ps.checksum();
        let cfg = TrainConfig {
            epochs: 3,
            batch: 8,
            learning_rate: 0.0,
            seed: 0,
        };
        train_offline(&p, &mut ps, &data, &cfg, &mut |_, _| {}).unwrap();
        assert_eq!(ps.checksum(), before);
    }

    #[test]
    fn empty_data_rejected() {
        let (p, mut ps) = policy();
        assert!(train_offline(&p, &mut ps, &[], &TrainConfig::default(), &mut |_, _| {}).is_err());
    }
}
