//! Reinforcement learning for negotiation policies.
//!
//! [`rollout`] plays learner-vs-baseline episodes, [`gae`] turns them into
//! advantages, [`ppo`] updates the network and [`train`] ties the three into
//! a resumable run. [`eval`] plays tournaments between trained checkpoints
//! and baseline opponents and [`stats`] aggregates them across seeds.

pub mod agent;
pub mod config;
pub mod error;
pub mod eval;
pub mod gae;
pub mod ppo;
pub mod rollout;
pub mod stats;
pub mod train;

pub use agent::PolicyAgent;
pub use config::{annealed_lr, ProblemSource, TrainerConfig};
pub use error::{Result, RlError};
pub use eval::{run_tournament, Contestant, EvalConfig, EvalResults, ProblemSet, Tournament};
pub use gae::compute_gae;
pub use ppo::{ppo_update, Adam, PpoSettings, UpdateMetrics};
pub use rollout::{Collector, TrajectoryBatch, Transition};
pub use stats::aggregate_ci;
pub use train::{train, MetricsRow, Trainer};
