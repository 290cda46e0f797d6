pub mod agent;
pub mod bench;
pub mod config;
pub mod control;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod learning;
pub mod numerics;
pub mod perception;
pub mod pipeline;
pub mod planner;
pub mod simworld;

pub use error::{Error, Result};
