//! Experience collection against baseline opponents.
//!
//! Episodes run in lockstep waves so that every learner decision in a wave
//! shares one batched forward pass. Episode `i` draws all of its randomness
//! (opponent, problem, first mover, opponent seed, action sampling) from
//! substreams keyed by `i`, so results do not depend on wave composition
//! beyond floating-point batching, which is itself fixed by the config.

use std::sync::Arc;

use log::warn;
use rand::{Rng, RngCore};

use nego_core::rng::{substream, StreamRng};
use nego_core::{
    generate_problem, BaselineAgent, GeneratorConfig, NegotiationProblem, Negotiator, OpponentKind,
    OpponentSpec, SessionState,
};
use nego_policy::{ActorCritic, LogProbMode, Observation, SampledAction};

use crate::agent::{distribution, LearnerView};
use crate::error::Result;

/// The learner always occupies seat 0; the opponent seat 1.
pub const LEARNER: usize = 0;
const OPPONENT: usize = 1;

/// Purpose tags for substream paths.
pub mod tags {
    pub const TRAIN: u64 = 0x0074_7261_696e;
    pub const EVAL: u64 = 0x6576_616c;
    pub const PROBLEM: u64 = 1;
    pub const EPISODE: u64 = 2;
    pub const SAMPLING: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
}

/// The `episode`-th problem of the training stream for `seed`.
pub fn training_problem(generator: &GeneratorConfig, seed: u64, episode: u64) -> Result<NegotiationProblem> {
    let mut rng = substream(seed, &[tags::TRAIN, tags::PROBLEM, episode]);
    Ok(generate_problem(generator, &mut rng)?)
}

/// One learner decision.
#[derive(Debug, Clone)]
pub struct Transition {
    pub observation: Observation,
    pub action: SampledAction,
    pub accept_allowed: bool,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
    pub episode: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub episode: u64,
    pub opponent: OpponentKind,
    /// `[learner, opponent]`.
    pub utilities: [f64; 2],
    pub agreed: bool,
    pub rounds: usize,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub summary: EpisodeSummary,
    pub transitions: Vec<Transition>,
}

/// Complete episodes laid out contiguously, plus advantages once computed.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryBatch {
    pub transitions: Vec<Transition>,
    pub episodes: Vec<EpisodeSummary>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn from_episodes(episodes: Vec<Episode>) -> Self {
        let mut batch = TrajectoryBatch::default();
        for e in episodes {
            batch.episodes.push(e.summary);
            batch.transitions.extend(e.transitions);
        }
        batch
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn mean_return(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.utilities[LEARNER]))
    }

    pub fn agreement_rate(&self) -> f64 {
        mean(self.episodes.iter().map(|e| if e.agreed { 1.0 } else { 0.0 }))
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Problems and opponents the rollout draws from.
#[derive(Debug, Clone)]
pub struct RolloutSpec {
    pub seed: u64,
    pub deadline: usize,
    /// Drawn uniformly per episode.
    pub opponents: Vec<OpponentSpec>,
    pub generator: GeneratorConfig,
    /// `Some` in fixed-problem mode.
    pub fixed: Option<Arc<NegotiationProblem>>,
    pub num_envs: usize,
    pub log_prob_mode: LogProbMode,
}

struct Env {
    episode: u64,
    opponent_kind: OpponentKind,
    problem: Arc<NegotiationProblem>,
    opponent: BaselineAgent,
    session: SessionState,
    view: LearnerView,
    rng: StreamRng,
    transitions: Vec<Transition>,
}

enum Progress {
    LearnerTurn,
    Done(Episode),
    Aborted,
}

impl Env {
    fn start(spec: &RolloutSpec, episode: u64, fixed_topology: Option<&LearnerView>) -> Result<Self> {
        let mut rng = substream(spec.seed, &[tags::TRAIN, tags::EPISODE, episode]);
        let opponent_spec = spec.opponents[rng.random_range(0..spec.opponents.len())];
        let opponent_kind = opponent_spec.kind;
        let problem = match &spec.fixed {
            Some(p) => Arc::clone(p),
            None => Arc::new(training_problem(&spec.generator, spec.seed, episode)?),
        };
        let first_mover = rng.random_range(0..2);
        let mut opponent = BaselineAgent::new(opponent_spec)?;
        opponent.reset(OPPONENT, &problem.domain, &problem.utilities[OPPONENT], rng.next_u64())?;
        let view = match fixed_topology {
            Some(v) => v.clone(),
            None => LearnerView::new(LEARNER, &problem.domain),
        };
        Ok(Self {
            episode,
            opponent_kind,
            session: SessionState::new(spec.deadline, first_mover)?,
            problem,
            opponent,
            view,
            rng: substream(spec.seed, &[tags::TRAIN, tags::SAMPLING, episode]),
            transitions: Vec::new(),
        })
    }

    /// Lets the opponent move until the learner must act or the session ends.
    fn advance(&mut self, outcome: Option<nego_core::EpisodeResult>) -> Progress {
        let mut result = outcome;
        while result.is_none() && self.session.turn() == OPPONENT {
            let applied = self.opponent.act(&self.session).and_then(|a| {
                self.session
                    .apply(&a, &self.problem.domain, self.problem.utility_refs())
            });
            match applied {
                Ok(r) => result = r,
                Err(e) => {
                    warn!("episode {} aborted: opponent {}: {e}", self.episode, self.opponent_kind);
                    return Progress::Aborted;
                }
            }
        }
        match result {
            None => Progress::LearnerTurn,
            Some(r) => {
                if let Some(last) = self.transitions.last_mut() {
                    last.reward = r.utilities[LEARNER];
                    last.done = true;
                }
                Progress::Done(Episode {
                    summary: EpisodeSummary {
                        episode: self.episode,
                        opponent: self.opponent_kind,
                        utilities: r.utilities,
                        agreed: r.agreed(),
                        rounds: r.rounds_used,
                    },
                    transitions: std::mem::take(&mut self.transitions),
                })
            }
        }
    }
}

/// Stateful episode source; `next_episode` persists across batches.
#[derive(Debug, Clone)]
pub struct Collector {
    pub spec: RolloutSpec,
    pub next_episode: u64,
    /// Completed episodes that overflowed the previous batch.
    pub carry: Vec<Episode>,
    pub aborted: u64,
}

impl Collector {
    pub fn new(spec: RolloutSpec) -> Self {
        Self {
            spec,
            next_episode: 0,
            carry: Vec::new(),
            aborted: 0,
        }
    }

    /// Collects at least `batch_size` learner steps of complete episodes.
    /// Episodes finishing beyond that are kept for the next call.
    pub fn collect(&mut self, policy: &dyn ActorCritic, batch_size: usize) -> Result<TrajectoryBatch> {
        let template = self
            .spec
            .fixed
            .as_ref()
            .map(|p| LearnerView::new(LEARNER, &p.domain));
        let mut done: Vec<Episode> = std::mem::take(&mut self.carry);
        let mut collected: usize = done.iter().map(|e| e.transitions.len()).sum();
        let mut active: Vec<Env> = Vec::with_capacity(self.spec.num_envs);

        loop {
            let in_flight: usize = active.iter().map(|e| e.transitions.len()).sum();
            while active.len() < self.spec.num_envs && collected + in_flight < batch_size {
                let mut env = Env::start(&self.spec, self.next_episode, template.as_ref())?;
                self.next_episode += 1;
                match env.advance(None) {
                    Progress::LearnerTurn => active.push(env),
                    Progress::Done(ep) => {
                        if !ep.transitions.is_empty() {
                            collected += ep.transitions.len();
                            done.push(ep);
                        }
                    }
                    Progress::Aborted => self.aborted += 1,
                }
            }
            if active.is_empty() {
                break;
            }

            let mut observations = Vec::with_capacity(active.len());
            for env in active.iter_mut() {
                env.view.sync(&env.session)?;
                observations.push(env.view.observe(
                    policy,
                    &env.problem.domain,
                    &env.problem.utilities[LEARNER],
                    &env.session,
                )?);
            }
            let refs: Vec<&Observation> = observations.iter().collect();
            let outputs = policy.forward(&refs)?;

            let mut still = Vec::with_capacity(active.len());
            for ((mut env, obs), out) in active.into_iter().zip(observations).zip(outputs) {
                let dist = distribution(&out, &env.session, LEARNER)?;
                let action = dist.sample(&mut env.rng, self.spec.log_prob_mode);
                let applied = env.session.apply(
                    &action.to_action(),
                    &env.problem.domain,
                    env.problem.utility_refs(),
                )?;
                env.transitions.push(Transition {
                    observation: obs,
                    log_prob: action.log_prob,
                    action,
                    accept_allowed: dist.accept_allowed(),
                    value: out.state_value,
                    reward: 0.0,
                    done: false,
                    episode: env.episode,
                });
                match env.advance(applied) {
                    Progress::LearnerTurn => still.push(env),
                    Progress::Done(ep) => {
                        collected += ep.transitions.len();
                        done.push(ep);
                    }
                    Progress::Aborted => self.aborted += 1,
                }
            }
            active = still;
        }

        done.sort_by_key(|e| e.summary.episode);
        let mut taken = 0;
        let mut split = done.len();
        for (i, e) in done.iter().enumerate() {
            if taken >= batch_size {
                split = i;
                break;
            }
            taken += e.transitions.len();
        }
        self.carry = done.split_off(split);
        Ok(TrajectoryBatch::from_episodes(done))
    }
}
