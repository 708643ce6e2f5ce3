//! Actor-critic networks for learned negotiation agents.
//!
//! [`gnn`] holds the graph-attention policy that works on any domain;
//! [`flat`] a fixed-width baseline tied to one domain. Both map an
//! observation to a [`dist::ActionDistribution`] and a state value, and can
//! be saved to and restored from [`checkpoint`] files.

pub mod checkpoint;
pub mod dist;
pub mod error;
pub mod flat;
pub mod gat;
pub mod gnn;
pub mod init;
pub mod linalg;
pub mod model;
pub mod params;

pub use checkpoint::{load, save, Checkpoint, PolicyConfig};
pub use dist::{ActionDistribution, LogProbMode, SampledAction};
pub use error::{PolicyError, Result};
pub use flat::{FlatConfig, FlatObservation, FlatPolicy};
pub use gnn::{GatConfig, GnnPolicy};
pub use model::{
    ActorCritic, LossFn, Observation, ObservationContext, OutputGrad, PolicyKind, PolicyOutput,
};
