//! The actor-critic interface shared by the graph and flat policies.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use nego_core::{Domain, GraphTopology, HistoryStats, ObservationGraph, UtilityFunction};

use crate::dist::ActionDistribution;
use crate::error::Result;
use crate::flat::FlatObservation;
use crate::params::ParamLayout;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    #[default]
    Gnn,
    Flat,
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PolicyKind::Gnn => "gnn",
            PolicyKind::Flat => "flat",
        })
    }
}

/// Everything an agent knows when it is about to act.
#[derive(Debug, Clone, Copy)]
pub struct ObservationContext<'a> {
    pub domain: &'a Domain,
    pub topology: &'a Arc<GraphTopology>,
    pub utility: &'a UtilityFunction,
    pub stats: &'a HistoryStats,
    pub round: usize,
    pub deadline: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Graph(ObservationGraph),
    Flat(FlatObservation),
}

impl Observation {
    pub fn objective_sizes(&self) -> &[usize] {
        match self {
            Observation::Graph(g) => g.topology.objective_sizes(),
            Observation::Flat(f) => f.objective_sizes(),
        }
    }
}

/// Raw network outputs for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    /// `[reject, accept]`.
    pub accept_logits: [f64; 2],
    /// One logit per value, objective by objective.
    pub offer_logits: Vec<f64>,
    pub objective_sizes: Vec<usize>,
    pub state_value: f64,
}

impl PolicyOutput {
    pub fn distribution(&self, accept_allowed: bool) -> Result<ActionDistribution> {
        ActionDistribution::from_logits(
            self.accept_logits,
            &self.offer_logits,
            &self.objective_sizes,
            accept_allowed,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.state_value.is_finite()
            && self.accept_logits.iter().all(|x| x.is_finite())
            && self.offer_logits.iter().all(|x| x.is_finite())
    }
}

/// Gradient of a scalar loss with respect to one [`PolicyOutput`].
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrad {
    pub accept_logits: [f64; 2],
    pub offer_logits: Vec<f64>,
    pub state_value: f64,
}

impl OutputGrad {
    pub fn zeros(num_values: usize) -> Self {
        Self {
            accept_logits: [0.0; 2],
            offer_logits: vec![0.0; num_values],
            state_value: 0.0,
        }
    }
}

/// Loss callback for [`ActorCritic::forward_backward`]: receives the batch
/// outputs and returns one gradient per output.
pub type LossFn<'a> = dyn FnMut(&[PolicyOutput]) -> Result<Vec<OutputGrad>> + 'a;

/// A policy/value network with flat parameters.
pub trait ActorCritic: Send + Sync {
    fn kind(&self) -> PolicyKind;

    /// Serializable description sufficient to rebuild an identically shaped network.
    fn architecture(&self) -> serde_json::Value;

    fn layout(&self) -> &ParamLayout;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    fn num_params(&self) -> usize {
        self.params().len()
    }

    fn observe(&self, ctx: &ObservationContext<'_>) -> Result<Observation>;

    fn forward(&self, batch: &[&Observation]) -> Result<Vec<PolicyOutput>>;

    /// Runs the batch forward, asks `loss` for the output gradients and
    /// accumulates the parameter gradient into `grad`.
    fn forward_backward(
        &self,
        batch: &[&Observation],
        loss: &mut LossFn<'_>,
        grad: &mut [f64],
    ) -> Result<()>;

    fn box_clone(&self) -> Box<dyn ActorCritic>;
}

impl Clone for Box<dyn ActorCritic> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}
