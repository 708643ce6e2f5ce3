//! Learned policies at the negotiation table.

use std::sync::Arc;

use nego_core::rng::{substream, StreamRng};
use nego_core::{
    Action, AgentId, Domain, Error as CoreError, GraphTopology, HistoryStats, Negotiator,
    SessionState, Side, UtilityFunction,
};
use nego_policy::{
    ActionDistribution, ActorCritic, LogProbMode, Observation, ObservationContext, PolicyOutput,
};

use crate::error::Result;

/// One seat's running view of a session: the topology of its observation
/// graph and offer statistics synced from the session history.
#[derive(Debug, Clone)]
pub struct LearnerView {
    pub me: AgentId,
    pub topology: Arc<GraphTopology>,
    pub stats: HistoryStats,
    seen: usize,
}

impl LearnerView {
    pub fn new(me: AgentId, domain: &Domain) -> Self {
        Self {
            me,
            topology: Arc::new(GraphTopology::new(domain)),
            stats: HistoryStats::new(domain),
            seen: 0,
        }
    }

    /// Folds any offers made since the last call into the statistics.
    pub fn sync(&mut self, session: &SessionState) -> nego_core::Result<()> {
        for (agent, offer) in &session.history()[self.seen..] {
            let side = if *agent == self.me { Side::Own } else { Side::Opponent };
            self.stats.update(offer, side)?;
        }
        self.seen = session.history().len();
        Ok(())
    }

    pub fn observe(
        &self,
        policy: &dyn ActorCritic,
        domain: &Domain,
        utility: &UtilityFunction,
        session: &SessionState,
    ) -> nego_policy::Result<Observation> {
        policy.observe(&ObservationContext {
            domain,
            topology: &self.topology,
            utility,
            stats: &self.stats,
            round: session.round(),
            deadline: session.deadline(),
        })
    }
}

/// Turns one network output into a distribution, masking Accept when there
/// is nothing to accept.
pub fn distribution(out: &PolicyOutput, session: &SessionState, me: AgentId) -> Result<ActionDistribution> {
    Ok(out.distribution(session.standing_offer_for(me).is_some())?)
}

/// A trained policy behind the [`Negotiator`] interface.
pub struct PolicyAgent {
    policy: Arc<dyn ActorCritic>,
    greedy: bool,
    mode: LogProbMode,
    state: Option<(LearnerView, Domain, UtilityFunction, StreamRng)>,
}

impl PolicyAgent {
    pub fn new(policy: Arc<dyn ActorCritic>, greedy: bool) -> Self {
        Self {
            policy,
            greedy,
            mode: LogProbMode::default(),
            state: None,
        }
    }
}

impl Negotiator for PolicyAgent {
    fn name(&self) -> String {
        format!("policy-{}", self.policy.kind())
    }

    fn reset(&mut self, me: AgentId, domain: &Domain, utility: &UtilityFunction, seed: u64) -> nego_core::Result<()> {
        utility.check_domain(domain)?;
        self.state = Some((
            LearnerView::new(me, domain),
            domain.clone(),
            utility.clone(),
            substream(seed, &[]),
        ));
        Ok(())
    }

    fn act(&mut self, session: &SessionState) -> nego_core::Result<Action> {
        let (view, domain, utility, rng) = self
            .state
            .as_mut()
            .ok_or_else(|| CoreError::ProtocolViolation("agent used before reset".into()))?;
        if session.turn() != view.me || !session.is_running() {
            return Err(CoreError::ProtocolViolation("policy asked to act out of turn".into()));
        }
        view.sync(session)?;
        let failed = |e: nego_policy::PolicyError| CoreError::InvalidInput(e.to_string());
        let obs = view.observe(self.policy.as_ref(), domain, utility, session).map_err(failed)?;
        let out = self.policy.forward(&[&obs]).map_err(failed)?;
        let dist = out[0]
            .distribution(session.standing_offer_for(view.me).is_some())
            .map_err(failed)?;
        let action = if self.greedy {
            dist.greedy(self.mode)
        } else {
            dist.sample(rng, self.mode)
        };
        Ok(action.to_action())
    }
}
