//! Bilateral negotiation engine.
//!
//! Problem model and additive utilities ([`domain`], [`problem`]), random
//! problem generation ([`generator`]), the alternating offers protocol
//! ([`protocol`]), baseline agents ([`opponents`]) and the observation
//! graph encoding used by learned policies ([`graph`]).

pub mod domain;
pub mod error;
pub mod generator;
pub mod graph;
pub mod opponents;
pub mod problem;
pub mod protocol;
pub mod rng;

pub use domain::{enumerate_outcomes, utility, Domain, Outcome, UtilityFunction};
pub use error::{Error, Result};
pub use generator::{generate_domain, generate_problem, generate_utility, GeneratorConfig};
pub use graph::{build_graph, update_stats, GraphTopology, HistoryStats, ObservationGraph, Side};
pub use opponents::{play_session, target_utility, BaselineAgent, Negotiator, OpponentKind, OpponentSpec};
pub use problem::NegotiationProblem;
pub use protocol::{step, Action, AgentId, EpisodeResult, SessionState, Status};
