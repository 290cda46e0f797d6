//! Imitation learning: 2 Hz sample collection, L1 waypoint loss, offline
//! training and dataset-aggregation rounds. Perception stays frozen; only the
//! fusion and planner parameters are optimized.

mod collect;
mod dagger;
mod dataset;
mod train;

pub use collect::{collect_episode, CollectConfig, Collection};
pub use dagger::{dagger_round, mix_half_and_half, Collected, DaggerReport, Learner};
pub use dataset::{Dataset, Provenance, SampleRecord, MANIFEST_FILE, PAYLOAD_FILE};
pub use train::{evaluate_loss, examples, train_offline, waypoint_loss, waypoint_loss_var, Example, TrainConfig};
