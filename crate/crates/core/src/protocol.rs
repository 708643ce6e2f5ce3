//! Alternating Offers Protocol state machine.
//!
//! Agents are identified by seat `0` or `1`. Each turn the acting agent
//! either makes a (counter) offer or accepts the standing offer of the
//! other agent. Every offer advances the round counter; once the counter
//! reaches the deadline without an agreement the session fails and both
//! agents receive zero.

use serde::{Deserialize, Serialize};

use crate::domain::{Domain, Outcome, UtilityFunction};
use crate::error::{invalid, Error, Result};

/// Default deadline: 40 offers in total across both agents.
pub const DEFAULT_DEADLINE: usize = 40;

pub type AgentId = usize;

/// The seat opposite to `agent`.
pub fn other(agent: AgentId) -> AgentId {
    1 - agent
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Accept,
    Offer(Outcome),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Running,
    Agreement(Outcome),
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub agreement: Option<Outcome>,
    /// Payoff per seat.
    pub utilities: [f64; 2],
    pub rounds_used: usize,
}

impl EpisodeResult {
    pub fn agreed(&self) -> bool {
        self.agreement.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    round: usize,
    deadline: usize,
    turn: AgentId,
    history: Vec<(AgentId, Outcome)>,
    status: Status,
}

impl SessionState {
    pub fn new(deadline: usize, first_mover: AgentId) -> Result<Self> {
        if deadline == 0 {
            return Err(invalid("deadline must be at least one round"));
        }
        if first_mover > 1 {
            return Err(invalid(format!("agent id {first_mover} is not 0 or 1")));
        }
        Ok(Self {
            round: 0,
            deadline,
            turn: first_mover,
            history: Vec::new(),
            status: Status::Running,
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn deadline(&self) -> usize {
        self.deadline
    }

    /// Fraction of the deadline consumed, in `[0, 1]`.
    pub fn progress(&self) -> f64 {
        self.round as f64 / self.deadline as f64
    }

    pub fn turn(&self) -> AgentId {
        self.turn
    }

    pub fn history(&self) -> &[(AgentId, Outcome)] {
        &self.history
    }

    pub fn status(&self) -> &Status {
        &self.status
    }

    pub fn is_running(&self) -> bool {
        self.status == Status::Running
    }

    /// The most recent offer made by the agent other than `agent`.
    pub fn standing_offer_for(&self, agent: AgentId) -> Option<&Outcome> {
        self.history
            .last()
            .filter(|(who, _)| *who != agent)
            .map(|(_, o)| o)
    }

    /// Applies `action` for the agent whose turn it is, in place.
    ///
    /// Returns the episode result when the action ends the session.
    pub fn apply(
        &mut self,
        action: &Action,
        domain: &Domain,
        utilities: [&UtilityFunction; 2],
    ) -> Result<Option<EpisodeResult>> {
        if !self.is_running() {
            return Err(Error::ProtocolViolation(
                "the session has already terminated".into(),
            ));
        }
        match action {
            Action::Accept => {
                let offer = self
                    .standing_offer_for(self.turn)
                    .cloned()
                    .ok_or_else(|| {
                        Error::ProtocolViolation("there is no offer to accept".into())
                    })?;
                let payoff = [
                    utilities[0].utility(domain, &offer)?,
                    utilities[1].utility(domain, &offer)?,
                ];
                self.status = Status::Agreement(offer.clone());
                Ok(Some(EpisodeResult {
                    agreement: Some(offer),
                    utilities: payoff,
                    rounds_used: self.round,
                }))
            }
            Action::Offer(outcome) => {
                domain.validate_outcome(outcome)?;
                self.history.push((self.turn, outcome.clone()));
                self.round += 1;
                self.turn = other(self.turn);
                if self.round >= self.deadline {
                    self.status = Status::Failed;
                    return Ok(Some(EpisodeResult {
                        agreement: None,
                        utilities: [0.0, 0.0],
                        rounds_used: self.round,
                    }));
                }
                Ok(None)
            }
        }
    }
}

/// Pure transition: returns the successor state and, if the session ended,
/// its result. `state` itself is left untouched.
pub fn step(
    state: &SessionState,
    action: &Action,
    domain: &Domain,
    utilities: [&UtilityFunction; 2],
) -> Result<(SessionState, Option<EpisodeResult>)> {
    let mut next = state.clone();
    let result = next.apply(action, domain, utilities)?;
    Ok((next, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::enumerate_outcomes;
    use proptest::prelude::*;

    fn setup() -> (Domain, UtilityFunction, UtilityFunction) {
        let domain = Domain::new(vec![2, 3]).unwrap();
        let u0 = UtilityFunction::new(vec![0.6, 0.4], vec![vec![1.0, 0.0], vec![1.0, 0.5, 0.0]])
            .unwrap();
        let u1 = UtilityFunction::new(vec![0.3, 0.7], vec![vec![0.0, 1.0], vec![0.0, 0.5, 1.0]])
            .unwrap();
        (domain, u0, u1)
    }

    fn offer(v: &[usize]) -> Action {
        Action::Offer(Outcome::new(v.to_vec()))
    }

    #[test]
    fn offer_advances_round_and_turn() {
        let (d, u0, u1) = setup();
        let mut s = SessionState::new(40, 0).unwrap();
        for i in 0..5 {
            s.apply(&offer(&[i % 2, 0]), &d, [&u0, &u1]).unwrap();
        }
        assert_eq!(s.round(), 5);
        let (next, res) = step(&s, &offer(&[0, 1]), &d, [&u0, &u1]).unwrap();
        assert!(res.is_none());
        assert_eq!(next.round(), 6);
        assert_eq!(next.turn(), other(s.turn()));
        assert_eq!(next.history().len(), 6);
        assert_eq!(s.round(), 5, "step must not mutate its input");
    }

    #[test]
    fn deadline_fails_with_zero_payoff() {
        let (d, u0, u1) = setup();
        let mut s = SessionState::new(40, 1).unwrap();
        for _ in 0..39 {
            assert!(s.apply(&offer(&[0, 0]), &d, [&u0, &u1]).unwrap().is_none());
        }
        assert_eq!(s.round(), 39);
        let res = s.apply(&offer(&[0, 0]), &d, [&u0, &u1]).unwrap().unwrap();
        assert_eq!(res.agreement, None);
        assert_eq!(res.utilities, [0.0, 0.0]);
        assert_eq!(res.rounds_used, 40);
        assert_eq!(s.status(), &Status::Failed);
        assert!(matches!(
            s.apply(&offer(&[0, 0]), &d, [&u0, &u1]),
            Err(Error::ProtocolViolation(_))
        ));
    }

    #[test]
    fn accept_pays_both_utilities_of_standing_offer() {
        // ⟨0,1⟩: u0 = 0.6 + 0.4 * 0.5 = 0.8, u1 = 0.0 + 0.7 * 0.5 = 0.35
        let (d, u0, u1) = setup();
        let mut s = SessionState::new(40, 1).unwrap();
        s.apply(&offer(&[0, 1]), &d, [&u0, &u1]).unwrap();
        let res = s.apply(&Action::Accept, &d, [&u0, &u1]).unwrap().unwrap();
        let w = Outcome::new(vec![0, 1]);
        assert_eq!(res.agreement, Some(w.clone()));
        assert!((res.utilities[0] - 0.8).abs() < 1e-12);
        assert!((res.utilities[1] - 0.35).abs() < 1e-12);
        assert_eq!(s.status(), &Status::Agreement(w));
    }

    #[test]
    fn accept_with_empty_history_is_a_violation() {
        let (d, u0, u1) = setup();
        let s = SessionState::new(40, 0).unwrap();
        assert!(matches!(
            step(&s, &Action::Accept, &d, [&u0, &u1]),
            Err(Error::ProtocolViolation(_))
        ));
    }

    #[test]
    fn invalid_offer_rejected_without_state_change() {
        let (d, u0, u1) = setup();
        let mut s = SessionState::new(40, 0).unwrap();
        assert!(s.apply(&offer(&[2, 0]), &d, [&u0, &u1]).is_err());
        assert_eq!(s.round(), 0);
        assert!(s.history().is_empty());
    }

    proptest! {
        #[test]
        fn random_sessions_terminate_within_deadline(
            first in 0usize..2,
            deadline in 1usize..60,
            moves in proptest::collection::vec((any::<bool>(), 0usize..6), 0..80),
        ) {
            let (d, u0, u1) = setup();
            let outcomes = enumerate_outcomes(&d).unwrap();
            let mut s = SessionState::new(deadline, first).unwrap();
            let mut result = None;
            let mut moves = moves.into_iter();
            while s.is_running() {
                let (accept, idx) = moves.next().unwrap_or((false, 0));
                let action = if accept && !s.history().is_empty() {
                    Action::Accept
                } else {
                    Action::Offer(outcomes[idx].clone())
                };
                let (next, r) = step(&s, &action, &d, [&u0, &u1]).unwrap();
                // determinism
                let (again, r2) = step(&s, &action, &d, [&u0, &u1]).unwrap();
                prop_assert_eq!(&next, &again);
                prop_assert_eq!(&r, &r2);
                s = next;
                prop_assert!(s.round() <= deadline);
                prop_assert_eq!(s.history().len(), s.round());
                result = r;
            }
            let result = result.unwrap();
            prop_assert!(result.rounds_used <= deadline);
            prop_assert_eq!(result.agreement.is_none(), result.utilities == [0.0, 0.0] && s.status() == &Status::Failed);
        }
    }
}
