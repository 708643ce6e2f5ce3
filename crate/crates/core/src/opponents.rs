//! Baseline negotiation strategies and the agent interface shared with the
//! trainer and the evaluation harness.
//!
//! Time-dependent agents (Boulware, Linear, Conceder) follow the target
//! `1 - (1 - reservation) * progress^(1/e)`: concave for `e < 1`, linear for
//! `e = 1`, convex for `e > 1`. They accept any standing offer that meets the
//! current target and otherwise offer the outcome with the smallest own
//! utility that still meets it. The random agent offers uniformly at random
//! and accepts anything strictly above its threshold.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{enumerate_outcomes, Domain, Outcome, UtilityFunction};
use crate::error::{invalid, Error, Result};
use crate::problem::NegotiationProblem;
use crate::protocol::{Action, AgentId, EpisodeResult, SessionState};
use crate::rng::{substream, StreamRng};

/// Anything that can sit at a negotiation table.
pub trait Negotiator: Send {
    fn name(&self) -> String;

    /// Prepares for a new session in seat `me` with private preferences `utility`.
    fn reset(&mut self, me: AgentId, domain: &Domain, utility: &UtilityFunction, seed: u64)
        -> Result<()>;

    /// Chooses an action; only valid while the session runs and it is this agent's turn.
    fn act(&mut self, session: &SessionState) -> Result<Action>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpponentKind {
    Boulware,
    Conceder,
    Linear,
    Random,
}

impl OpponentKind {
    pub const ALL: [OpponentKind; 4] = [
        OpponentKind::Boulware,
        OpponentKind::Conceder,
        OpponentKind::Linear,
        OpponentKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpponentKind::Boulware => "boulware",
            OpponentKind::Conceder => "conceder",
            OpponentKind::Linear => "linear",
            OpponentKind::Random => "random",
        }
    }
}

impl fmt::Display for OpponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpponentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "boulware" => Ok(OpponentKind::Boulware),
            "conceder" => Ok(OpponentKind::Conceder),
            "linear" => Ok(OpponentKind::Linear),
            "random" => Ok(OpponentKind::Random),
            other => Err(invalid(format!(
                "unknown opponent '{other}' (expected boulware, conceder, linear or random)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpponentSpec {
    pub kind: OpponentKind,
    pub concession_exponent: f64,
    pub reservation: f64,
    /// Used by the random agent only.
    pub accept_threshold: f64,
}

impl OpponentSpec {
    pub fn new(kind: OpponentKind) -> Self {
        let concession_exponent = match kind {
            OpponentKind::Boulware => 0.2,
            OpponentKind::Conceder => 2.0,
            OpponentKind::Linear | OpponentKind::Random => 1.0,
        };
        Self {
            kind,
            concession_exponent,
            reservation: 0.0,
            accept_threshold: 0.6,
        }
    }

    pub fn boulware() -> Self {
        Self::new(OpponentKind::Boulware)
    }

    pub fn conceder() -> Self {
        Self::new(OpponentKind::Conceder)
    }

    pub fn linear() -> Self {
        Self::new(OpponentKind::Linear)
    }

    pub fn random() -> Self {
        Self::new(OpponentKind::Random)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.concession_exponent > 0.0 && self.concession_exponent.is_finite()) {
            return Err(invalid("concession exponent must be positive"));
        }
        if !(0.0..1.0).contains(&self.reservation) {
            return Err(invalid("reservation utility must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.accept_threshold) {
            return Err(invalid("accept threshold must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn is_time_dependent(&self) -> bool {
        self.kind != OpponentKind::Random
    }
}

/// Utility the agent aims for after consuming `progress` of the deadline.
pub fn target_utility(spec: &OpponentSpec, progress: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(invalid(format!("progress {progress} outside [0, 1]")));
    }
    let concession = progress.powf(1.0 / spec.concession_exponent);
    Ok(1.0 - (1.0 - spec.reservation) * concession)
}

/// Per-session state of a baseline agent.
#[derive(Debug, Clone)]
pub struct OpponentState {
    me: AgentId,
    /// Every outcome with its own utility, ascending by utility then by
    /// lexicographic index.
    sorted_outcomes: Vec<(Outcome, f64)>,
    utility: UtilityFunction,
    rng: StreamRng,
}

impl OpponentState {
    pub fn new(me: AgentId, domain: &Domain, utility: &UtilityFunction, seed: u64) -> Result<Self> {
        utility.check_domain(domain)?;
        let mut sorted_outcomes: Vec<(Outcome, f64)> = enumerate_outcomes(domain)?
            .into_iter()
            .map(|o| {
                let u = utility.utility_unchecked(&o);
                (o, u)
            })
            .collect();
        // enumeration is already lexicographic, so a stable sort keeps ties in index order
        sorted_outcomes.sort_by(|a, b| a.1.total_cmp(&b.1));
        Ok(Self {
            me,
            sorted_outcomes,
            utility: utility.clone(),
            rng: substream(seed, &[]),
        })
    }

    pub fn sorted_outcomes(&self) -> &[(Outcome, f64)] {
        &self.sorted_outcomes
    }

    /// Lowest-utility outcome with utility ≥ `target`; the best outcome when
    /// nothing qualifies. Ties resolve to the lowest lexicographic index.
    pub fn closest_above(&self, target: f64) -> &(Outcome, f64) {
        let idx = self.sorted_outcomes.partition_point(|(_, u)| *u < target);
        if idx < self.sorted_outcomes.len() {
            &self.sorted_outcomes[idx]
        } else {
            let best = self.sorted_outcomes.last().expect("non-empty outcome space").1;
            let first_best = self.sorted_outcomes.partition_point(|(_, u)| *u < best);
            &self.sorted_outcomes[first_best]
        }
    }
}

/// Decision rule of the baseline agents, independent of any session bookkeeping.
pub fn act(spec: &OpponentSpec, state: &mut OpponentState, session: &SessionState) -> Result<Action> {
    if !session.is_running() {
        return Err(Error::ProtocolViolation("session already terminated".into()));
    }
    if session.turn() != state.me {
        return Err(Error::ProtocolViolation(format!(
            "agent {} asked to act on agent {}'s turn",
            state.me,
            session.turn()
        )));
    }
    let standing = session
        .standing_offer_for(state.me)
        .map(|o| state.utility.utility_unchecked(o));
    if spec.is_time_dependent() {
        let target = target_utility(spec, session.progress())?;
        if standing.is_some_and(|u| u >= target) {
            return Ok(Action::Accept);
        }
        Ok(Action::Offer(state.closest_above(target).0.clone()))
    } else {
        if standing.is_some_and(|u| u > spec.accept_threshold) {
            return Ok(Action::Accept);
        }
        let idx = state.rng.random_range(0..state.sorted_outcomes.len());
        Ok(Action::Offer(state.sorted_outcomes[idx].0.clone()))
    }
}

/// A baseline agent behind the [`Negotiator`] interface.
#[derive(Debug, Clone)]
pub struct BaselineAgent {
    spec: OpponentSpec,
    state: Option<OpponentState>,
}

impl BaselineAgent {
    pub fn new(spec: OpponentSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, state: None })
    }

    pub fn spec(&self) -> &OpponentSpec {
        &self.spec
    }
}

impl Negotiator for BaselineAgent {
    fn name(&self) -> String {
        self.spec.kind.name().to_string()
    }

    fn reset(&mut self, me: AgentId, domain: &Domain, utility: &UtilityFunction, seed: u64) -> Result<()> {
        if me > 1 {
            return Err(invalid(format!("seat {me} is not 0 or 1")));
        }
        self.state = Some(OpponentState::new(me, domain, utility, seed)?);
        Ok(())
    }

    fn act(&mut self, session: &SessionState) -> Result<Action> {
        let state = self
            .state
            .as_mut()
            .ok_or_else(|| Error::ProtocolViolation("agent used before reset".into()))?;
        act(&self.spec, state, session)
    }
}

/// Plays one complete session between two agents, resetting both first.
/// Agent `i` sits in seat `i` with `problem.utilities[i]`.
pub fn play_session(
    problem: &NegotiationProblem,
    agents: [&mut dyn Negotiator; 2],
    first_mover: AgentId,
    deadline: usize,
    seeds: [u64; 2],
) -> Result<EpisodeResult> {
    let [a, b] = agents;
    a.reset(0, &problem.domain, &problem.utilities[0], seeds[0])?;
    b.reset(1, &problem.domain, &problem.utilities[1], seeds[1])?;
    let mut session = SessionState::new(deadline, first_mover)?;
    loop {
        let action = if session.turn() == 0 {
            a.act(&session)?
        } else {
            b.act(&session)?
        };
        if let Some(result) = session.apply(&action, &problem.domain, problem.utility_refs())? {
            return Ok(result);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generate_problem, GeneratorConfig};
    use crate::protocol::other;

    #[test]
    fn target_endpoints_and_values() {
        for spec in [OpponentSpec::boulware(), OpponentSpec::linear(), OpponentSpec::conceder()] {
            assert_eq!(target_utility(&spec, 0.0).unwrap(), 1.0);
            assert_eq!(target_utility(&spec, 1.0).unwrap(), 0.0);
        }
        assert_eq!(target_utility(&OpponentSpec::linear(), 0.5).unwrap(), 0.5);
        let b = target_utility(&OpponentSpec::boulware(), 0.5).unwrap();
        assert!((b - 0.96875).abs() < 1e-12);
        let mut with_reservation = OpponentSpec::linear();
        with_reservation.reservation = 0.4;
        assert!((target_utility(&with_reservation, 1.0).unwrap() - 0.4).abs() < 1e-12);
        assert!(target_utility(&OpponentSpec::linear(), 1.5).is_err());
        assert!(target_utility(&OpponentSpec::linear(), -0.1).is_err());
    }

    #[test]
    fn target_ordering_and_monotonicity() {
        let (b, l, c) = (OpponentSpec::boulware(), OpponentSpec::linear(), OpponentSpec::conceder());
        let mut prev = [f64::INFINITY; 3];
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            let t = [
                target_utility(&b, p).unwrap(),
                target_utility(&l, p).unwrap(),
                target_utility(&c, p).unwrap(),
            ];
            assert!(t[0] >= t[1] && t[1] >= t[2], "p={p}: {t:?}");
            for k in 0..3 {
                assert!(t[k] <= prev[k]);
            }
            prev = t;
        }
    }

    fn two_issue() -> (Domain, UtilityFunction) {
        let d = Domain::new(vec![2, 3]).unwrap();
        let u = UtilityFunction::new(vec![0.6, 0.4], vec![vec![1.0, 0.0], vec![1.0, 0.5, 0.0]])
            .unwrap();
        (d, u)
    }

    /// A session in which the other seat's last offer is `offer`, at round `round`.
    fn session_with_offer(me: AgentId, round: usize, deadline: usize, offer: &Outcome) -> SessionState {
        let (d, u) = two_issue();
        let mut s = SessionState::new(deadline, if round % 2 == 0 { me } else { other(me) }).unwrap();
        for r in 0..round {
            let o = if r + 1 == round { offer.clone() } else { Outcome::new(vec![1, 2]) };
            s.apply(&Action::Offer(o), &d, [&u, &u]).unwrap();
        }
        assert_eq!(s.turn(), me);
        s
    }

    #[test]
    fn random_agent_threshold_is_strict() {
        // one objective, weights chosen so the offered value is worth exactly 0.61 / 0.60
        let d = Domain::new(vec![3]).unwrap();
        for (w, expect_accept) in [(0.61, true), (0.60, false)] {
            let u = UtilityFunction::new(vec![1.0], vec![vec![1.0, w, 0.0]]).unwrap();
            let mut agent = BaselineAgent::new(OpponentSpec::random()).unwrap();
            agent.reset(1, &d, &u, 3).unwrap();
            let mut s = SessionState::new(40, 0).unwrap();
            s.apply(&Action::Offer(Outcome::new(vec![1])), &d, [&u, &u]).unwrap();
            let a = agent.act(&s).unwrap();
            assert_eq!(a == Action::Accept, expect_accept, "w={w}");
        }
    }

    #[test]
    fn boulware_counter_offers_above_target() {
        let (d, u) = two_issue();
        // ⟨0,1⟩ is worth 0.8 < 0.96875; ⟨0,0⟩ is the only outcome above the target
        let offer = Outcome::new(vec![0, 1]);
        let s = session_with_offer(0, 20, 40, &offer);
        let mut agent = BaselineAgent::new(OpponentSpec::boulware()).unwrap();
        agent.reset(0, &d, &u, 0).unwrap();
        match agent.act(&s).unwrap() {
            Action::Offer(o) => {
                let v = u.utility(&d, &o).unwrap();
                assert!((0.96875..=1.0).contains(&v), "{v}");
            }
            Action::Accept => panic!("Boulware should not accept 0.8 at half time"),
        }
    }

    #[test]
    fn time_dependent_accepts_at_target() {
        let (d, u) = two_issue();
        let offer = Outcome::new(vec![0, 1]); // 0.8
        let s = session_with_offer(0, 20, 40, &offer);
        let mut linear = BaselineAgent::new(OpponentSpec::linear()).unwrap();
        linear.reset(0, &d, &u, 0).unwrap();
        assert_eq!(linear.act(&s).unwrap(), Action::Accept);
    }

    #[test]
    fn out_of_turn_is_rejected() {
        let (d, u) = two_issue();
        let mut agent = BaselineAgent::new(OpponentSpec::conceder()).unwrap();
        agent.reset(1, &d, &u, 0).unwrap();
        let s = SessionState::new(40, 0).unwrap();
        assert!(matches!(agent.act(&s), Err(Error::ProtocolViolation(_))));
        let mut fresh = BaselineAgent::new(OpponentSpec::conceder()).unwrap();
        assert!(fresh.act(&s).is_err());
    }

    #[test]
    fn closest_above_ties_and_fallback() {
        // every value of the second objective is worth the same
        let d = Domain::new(vec![2, 2]).unwrap();
        let u = UtilityFunction::new(vec![1.0, 0.0], vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let st = OpponentState::new(0, &d, &u, 0).unwrap();
        assert_eq!(st.closest_above(0.5).0.choices(), &[1, 0]);
        assert_eq!(st.closest_above(0.0).0.choices(), &[0, 0]);
        assert_eq!(st.closest_above(1.5).0.choices(), &[1, 0]);
        let utils: Vec<f64> = st.sorted_outcomes().iter().map(|x| x.1).collect();
        assert!(utils.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(st.sorted_outcomes().len(), 4);
    }

    fn play(
        problem: &crate::problem::NegotiationProblem,
        agents: &mut [BaselineAgent; 2],
        first: AgentId,
        deadline: usize,
    ) -> crate::protocol::EpisodeResult {
        let mut s = SessionState::new(deadline, first).unwrap();
        loop {
            let a = agents[s.turn()].act(&s).unwrap();
            if let Some(r) = s.apply(&a, &problem.domain, problem.utility_refs()).unwrap() {
                return r;
            }
        }
    }

    #[test]
    fn offers_meet_target_whenever_possible() {
        let config = GeneratorConfig::default();
        let mut rng = substream(4, &[]);
        for i in 0..50 {
            let p = generate_problem(&config, &mut rng).unwrap();
            for spec in [OpponentSpec::boulware(), OpponentSpec::linear(), OpponentSpec::conceder()] {
                let mut me = BaselineAgent::new(spec).unwrap();
                me.reset(0, &p.domain, &p.utilities[0], i).unwrap();
                let best = me.state.as_ref().unwrap().sorted_outcomes().last().unwrap().1;
                let mut s = SessionState::new(40, 0).unwrap();
                while s.is_running() {
                    if s.turn() == 0 {
                        let target = target_utility(&spec, s.progress()).unwrap();
                        let a = me.act(&s).unwrap();
                        if let Action::Offer(o) = &a {
                            let v = p.utilities[0].utility_unchecked(o);
                            if best >= target {
                                assert!(v >= target);
                            }
                        }
                        s.apply(&a, &p.domain, p.utility_refs()).unwrap();
                    } else {
                        // a stubborn partner that only ever offers its own best outcome
                        let worst = p.utilities[0]
                            .value_weights()
                            .iter()
                            .map(|w| w.iter().position(|&x| x == 0.0).unwrap())
                            .collect();
                        s.apply(&Action::Offer(Outcome::new(worst)), &p.domain, p.utility_refs())
                            .unwrap();
                    }
                }
            }
        }
    }

    #[test]
    fn two_conceders_always_agree() {
        let config = GeneratorConfig::default();
        let mut rng = substream(21, &[]);
        for i in 0..500u64 {
            let p = generate_problem(&config, &mut rng).unwrap();
            let mut agents = [
                BaselineAgent::new(OpponentSpec::conceder()).unwrap(),
                BaselineAgent::new(OpponentSpec::conceder()).unwrap(),
            ];
            for (seat, a) in agents.iter_mut().enumerate() {
                a.reset(seat, &p.domain, &p.utilities[seat], i).unwrap();
            }
            let r = play(&p, &mut agents, (i % 2) as usize, 40);
            assert!(r.agreed(), "problem {i} ended without agreement");
        }
    }
}
