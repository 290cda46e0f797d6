use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{LearnedAgent, PerceptionStack, Policy};
use crate::control::ControllerConfig;
use crate::error::{Error, Result};
use crate::numerics::ParamSet;
use crate::simworld::{make_scenario, Agent, EpisodeOutcome, ExpertAgent, ScenarioSpec};

use super::collect::{collect_episode, CollectConfig};
use super::dataset::{Dataset, Provenance};
use super::train::{examples, train_offline, Example, TrainConfig};

/// Indices kept from an old and a new set so that both contribute equally:
/// the larger side is subsampled uniformly without replacement.
pub fn mix_half_and_half(old: usize, new: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n = old.min(new);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |len: usize| {
        let mut idx = if len > n { sample(&mut rng, len, n).into_vec() } else { (0..len).collect() };
        idx.sort_unstable();
        idx
    };
    let o = pick(old);
    let w = pick(new);
    (o, w)
}

/// Everything needed to build students and collect data around one perception stack.
#[derive(Clone, Debug)]
pub struct Learner {
    pub perception: Arc<PerceptionStack>,
    pub policy: Arc<Policy>,
    pub controller: ControllerConfig,
    pub collect: CollectConfig,
}

#[derive(Clone, Debug)]
pub struct Collected {
    pub dataset: Dataset,
    pub outcomes: Vec<EpisodeOutcome>,
}

impl Collected {
    pub fn mean_completion(&self) -> f64 {
        self.outcomes.iter().map(|o| o.completion).sum::<f64>() / self.outcomes.len().max(1) as f64
    }
}

impl Learner {
    pub fn student(&self, params: &ParamSet) -> LearnedAgent {
        LearnedAgent::new(
            format!("student-{}", self.perception.kind().name()),
            Arc::clone(&self.perception),
            Arc::clone(&self.policy),
            Arc::new(params.clone()),
            self.controller,
        )
    }

    fn collect_with(
        &self,
        driver: &mut dyn Agent,
        specs: &[ScenarioSpec],
        provenance: Provenance,
        seed: u64,
    ) -> Result<Collected> {
        let mut dataset = Dataset::new(seed);
        let mut outcomes = Vec::with_capacity(specs.len());
        for spec in specs {
            let c = collect_episode(driver, make_scenario(spec)?, &self.collect, provenance)?;
            dataset.records.extend(c.records);
            outcomes.push(c.outcome);
        }
        Ok(Collected { dataset, outcomes })
    }

    /// Expert-driven episodes.
    pub fn collect_expert(&self, specs: &[ScenarioSpec], provenance: Provenance, seed: u64) -> Result<Collected> {
        let mut expert = ExpertAgent::new(self.collect.expert);
        self.collect_with(&mut expert, specs, provenance, seed)
    }

    /// Student-driven episodes with expert labels.
    pub fn collect_student(&self, params: &ParamSet, specs: &[ScenarioSpec], provenance: Provenance, seed: u64) -> Result<Collected> {
        let mut student = self.student(params);
        self.collect_with(&mut student, specs, provenance, seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaggerReport {
    pub round: u32,
    pub collected: usize,
    pub kept_old: usize,
    pub kept_new: usize,
    /// Mean route completion of the student while collecting.
    pub student_completion: f64,
    pub epoch_losses: Vec<f64>,
}

/// One aggregation round: the student drives every scenario, the expert
/// labels the visited states, old and new records are mixed half and half,
/// and training continues from the current parameters on the mix.
#[allow(clippy::too_many_arguments)]
pub fn dagger_round(
    learner: &Learner,
    round: u32,
    params: &mut ParamSet,
    scenarios: &[ScenarioSpec],
    old: &Dataset,
    old_examples: &[Example],
    train: &TrainConfig,
    observe: &mut dyn FnMut(usize, f64),
) -> Result<(Dataset, Vec<Example>, DaggerReport)> {
    if old.len() != old_examples.len() {
        return Err(Error::invalid("dataset and cached examples differ in length"));
    }
    let round_seed = old.seed.wrapping_add(u64::from(round).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let fresh = learner.collect_student(params, scenarios, Provenance::Dagger(round), round_seed)?;
    if fresh.dataset.is_empty() {
        return Err(Error::Rejected(format!("round {round}: the student produced no samples")));
    }
    let fresh_examples = examples(&learner.perception, &fresh.dataset)?;
    let (keep_old, keep_new) = mix_half_and_half(old.len(), fresh.dataset.len(), round_seed);
    let mut mixed = old.subset(&keep_old);
    mixed.records.extend(fresh.dataset.subset(&keep_new).records);
    let mut mixed_examples: Vec<Example> = keep_old.iter().map(|&i| old_examples[i].clone()).collect();
    mixed_examples.extend(keep_new.iter().map(|&i| fresh_examples[i].clone()));
    let cfg = TrainConfig {
        seed: train.seed.wrapping_add(u64::from(round)),
        ..*train
    };
    let epoch_losses = train_offline(&learner.policy, params, &mixed_examples, &cfg, observe)?;
    let report = DaggerReport {
        round,
        collected: fresh.dataset.len(),
        kept_old: keep_old.len(),
        kept_new: keep_new.len(),
        student_completion: fresh.mean_completion(),
        epoch_losses,
    };
    Ok((mixed, mixed_examples, report))
}
