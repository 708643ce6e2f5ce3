//! Tournament evaluation of trained policies against baseline opponents.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use nego_core::rng::substream;
use nego_core::{
    generate_problem, play_session, BaselineAgent, EpisodeResult, GeneratorConfig,
    NegotiationProblem, Negotiator, OpponentKind, OpponentSpec,
};
use nego_policy::{ActorCritic, PolicyKind};

use crate::agent::PolicyAgent;
use crate::config::ProblemSource;
use crate::error::{config, io, Result, RlError};
use crate::rollout::{tags, training_problem, LEARNER};
use crate::stats::aggregate_ci;

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CI_LEVEL: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// One checkpoint per training seed.
    pub checkpoints: Vec<PathBuf>,
    pub opponents: Vec<OpponentKind>,
    pub games: usize,
    pub problems: ProblemSource,
    pub generator: GeneratorConfig,
    pub seed: u64,
    /// Act by argmax instead of sampling.
    pub greedy: bool,
    pub deadline: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            checkpoints: Vec::new(),
            opponents: OpponentKind::ALL.to_vec(),
            games: 1000,
            problems: ProblemSource::Random,
            generator: GeneratorConfig::default(),
            seed: 0x5eed_e7a1,
            greedy: false,
            deadline: nego_core::protocol::DEFAULT_DEADLINE,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.checkpoints.is_empty() {
            return Err(config("evaluation needs at least one checkpoint"));
        }
        if self.games == 0 {
            return Err(config("games must be at least 1"));
        }
        if self.opponents.is_empty() {
            return Err(config("the opponent set is empty"));
        }
        if self.deadline == 0 {
            return Err(config("deadline must be positive"));
        }
        self.generator
            .validate()
            .map_err(|e| config(format!("generator: {e}")))
    }
}

/// Problems played in game order.
#[derive(Debug, Clone)]
pub enum ProblemSet {
    Fixed(Arc<NegotiationProblem>),
    /// Evaluation stream: disjoint from every training stream by its tag.
    Unseen { generator: GeneratorConfig, seed: u64 },
    /// Problems `first_episode..` of a training stream.
    TrainingStream {
        generator: GeneratorConfig,
        seed: u64,
        first_episode: u64,
    },
}

impl ProblemSet {
    pub fn problem(&self, game: u64) -> Result<Arc<NegotiationProblem>> {
        Ok(match self {
            ProblemSet::Fixed(p) => Arc::clone(p),
            ProblemSet::Unseen { generator, seed } => {
                let mut rng = substream(*seed, &[tags::EVAL, tags::PROBLEM, game]);
                Arc::new(generate_problem(generator, &mut rng)?)
            }
            ProblemSet::TrainingStream {
                generator,
                seed,
                first_episode,
            } => Arc::new(training_problem(generator, *seed, first_episode + game)?),
        })
    }

    fn is_random(&self) -> bool {
        !matches!(self, ProblemSet::Fixed(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameRecord {
    pub utility_self: f64,
    pub utility_opp: f64,
    pub agreed: bool,
    pub rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub opponent: OpponentKind,
    pub checkpoint_seed: u64,
    pub mean_utility_self: f64,
    pub mean_utility_opp: f64,
    pub agreement_rate: f64,
    pub mean_rounds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpponentSummary {
    pub opponent: OpponentKind,
    pub mean_self: f64,
    pub ci99_self: f64,
    pub mean_opp: f64,
    pub ci99_opp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResults {
    pub pairs: Vec<PairResult>,
    pub summary: Vec<OpponentSummary>,
}

impl EvalResults {
    /// Mean learner utility over all opponents for contestant `seed`.
    pub fn overall_self(&self, seed: u64) -> f64 {
        let rows: Vec<f64> = self
            .pairs
            .iter()
            .filter(|p| p.checkpoint_seed == seed)
            .map(|p| p.mean_utility_self)
            .collect();
        rows.iter().sum::<f64>() / rows.len() as f64
    }

    pub fn pair(&self, seed: u64, opponent: OpponentKind) -> Option<&PairResult> {
        self.pairs
            .iter()
            .find(|p| p.checkpoint_seed == seed && p.opponent == opponent)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut w = csv::Writer::from_path(dir.join(RESULTS_FILE))?;
        for p in &self.pairs {
            w.serialize(p)?;
        }
        w.flush().map_err(io(dir.join(RESULTS_FILE)))?;
        let mut w = csv::Writer::from_path(dir.join(SUMMARY_FILE))?;
        for s in &self.summary {
            w.serialize(s)?;
        }
        w.flush().map_err(io(dir.join(SUMMARY_FILE)))?;
        Ok(())
    }
}

/// A policy under evaluation, labelled by the seed it was trained with.
#[derive(Clone)]
pub struct Contestant {
    pub seed: u64,
    pub policy: Arc<dyn ActorCritic>,
}

/// Oracle payoff: the weighted sum written out directly.
fn oracle_utility(problem: &NegotiationProblem, agent: usize, result: &EpisodeResult) -> f64 {
    let Some(outcome) = &result.agreement else {
        return 0.0;
    };
    let u = &problem.utilities[agent];
    outcome
        .choices()
        .iter()
        .enumerate()
        .map(|(b, &v)| u.objective_weights()[b] * u.value_weights()[b][v])
        .sum()
}

#[derive(Debug, Clone)]
pub struct Tournament {
    pub opponents: Vec<OpponentKind>,
    pub games: usize,
    pub problems: ProblemSet,
    pub seed: u64,
    pub greedy: bool,
    pub deadline: usize,
}

impl Tournament {
    /// Plays every game of one opponent with a learner built by `make`.
    pub fn play<F>(&self, opponent: usize, make: &F) -> Result<Vec<GameRecord>>
    where
        F: Fn() -> Box<dyn Negotiator> + Sync,
    {
        let kind = self.opponents[opponent];
        (0..self.games as u64)
            .into_par_iter()
            .map(|game| {
                let problem = self.problems.problem(game)?;
                let mut rng = substream(self.seed, &[tags::EVAL, tags::EPISODE, opponent as u64, game]);
                let first_mover = rng.random_range(0..2);
                let seeds = [rng.next_u64(), rng.next_u64()];
                let mut learner = make();
                let mut baseline = BaselineAgent::new(OpponentSpec::new(kind))?;
                let result = play_session(
                    &problem,
                    [learner.as_mut(), &mut baseline],
                    first_mover,
                    self.deadline,
                    seeds,
                )?;
                for agent in 0..2 {
                    let expected = oracle_utility(&problem, agent, &result);
                    if (expected - result.utilities[agent]).abs() > 1e-12 {
                        return Err(RlError::Run(format!(
                            "game {game}: engine utility {} disagrees with oracle {expected}",
                            result.utilities[agent]
                        )));
                    }
                }
                Ok(GameRecord {
                    utility_self: result.utilities[LEARNER],
                    utility_opp: result.utilities[1 - LEARNER],
                    agreed: result.agreed(),
                    rounds: result.rounds_used,
                })
            })
            .collect()
    }

    pub fn summarize(opponent: OpponentKind, seed: u64, games: &[GameRecord]) -> PairResult {
        let n = games.len() as f64;
        let mean = |f: &dyn Fn(&GameRecord) -> f64| games.iter().map(f).sum::<f64>() / n;
        PairResult {
            opponent,
            checkpoint_seed: seed,
            mean_utility_self: mean(&|g| g.utility_self),
            mean_utility_opp: mean(&|g| g.utility_opp),
            agreement_rate: mean(&|g| if g.agreed { 1.0 } else { 0.0 }),
            mean_rounds: mean(&|g| g.rounds as f64),
        }
    }

    pub fn run(&self, contestants: &[Contestant]) -> Result<EvalResults> {
        if contestants.is_empty() || self.games == 0 || self.opponents.is_empty() {
            return Err(config("a tournament needs contestants, opponents and games"));
        }
        for c in contestants {
            if c.policy.kind() == PolicyKind::Flat && self.problems.is_random() {
                return Err(config(
                    "a flat policy only fits its training domain; evaluate it on a fixed problem",
                ));
            }
        }
        let mut pairs = Vec::new();
        for c in contestants {
            for o in 0..self.opponents.len() {
                let policy = Arc::clone(&c.policy);
                let greedy = self.greedy;
                let make = move || -> Box<dyn Negotiator> {
                    Box::new(PolicyAgent::new(Arc::clone(&policy), greedy))
                };
                let games = self.play(o, &make)?;
                pairs.push(Self::summarize(self.opponents[o], c.seed, &games));
            }
        }
        let summary = self
            .opponents
            .iter()
            .map(|&opponent| {
                let rows: Vec<&PairResult> = pairs.iter().filter(|p| p.opponent == opponent).collect();
                let ci = |xs: Vec<f64>| {
                    aggregate_ci(&xs, CI_LEVEL)
                        .unwrap_or_else(|_| (xs.iter().sum::<f64>() / xs.len() as f64, f64::NAN))
                };
                let (mean_self, ci99_self) = ci(rows.iter().map(|p| p.mean_utility_self).collect());
                let (mean_opp, ci99_opp) = ci(rows.iter().map(|p| p.mean_utility_opp).collect());
                OpponentSummary {
                    opponent,
                    mean_self,
                    ci99_self,
                    mean_opp,
                    ci99_opp,
                }
            })
            .collect();
        Ok(EvalResults { pairs, summary })
    }
}

/// Loads the checkpoints named in `config` and plays the tournament.
pub fn run_tournament(config: &EvalConfig) -> Result<EvalResults> {
    config.validate()?;
    let problems = match &config.problems {
        ProblemSource::Random => ProblemSet::Unseen {
            generator: config.generator.clone(),
            seed: config.seed,
        },
        ProblemSource::Fixed(path) => ProblemSet::Fixed(Arc::new(
            NegotiationProblem::read_from(path)
                .map_err(|e| crate::error::config(format!("cannot load fixed problem: {e}")))?,
        )),
    };
    let mut contestants = Vec::with_capacity(config.checkpoints.len());
    for path in &config.checkpoints {
        let ck = nego_policy::load(path)
            .map_err(|e| crate::error::config(format!("{}: {e}", path.display())))?;
        let seed = ck.metadata["training_seed"].as_u64().unwrap_or(0);
        if problems.is_random() && seed == config.seed {
            return Err(crate::error::config(format!(
                "evaluation seed {} equals the training seed of {}",
                config.seed,
                path.display()
            )));
        }
        contestants.push(Contestant {
            seed,
            policy: Arc::from(ck.policy),
        });
    }
    Tournament {
        opponents: config.opponents.clone(),
        games: config.games,
        problems,
        seed: config.seed,
        greedy: config.greedy,
        deadline: config.deadline,
    }
    .run(&contestants)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nego_core::{Action, AgentId, Domain, SessionState, UtilityFunction};
    use nego_policy::{GatConfig, GnnPolicy};

    /// Always demands its own best outcome, never accepts.
    struct Hardliner {
        best: Option<nego_core::Outcome>,
    }

    impl Negotiator for Hardliner {
        fn name(&self) -> String {
            "hardliner".into()
        }
        fn reset(&mut self, _me: AgentId, domain: &Domain, utility: &UtilityFunction, _seed: u64) -> nego_core::Result<()> {
            let outcomes = nego_core::enumerate_outcomes(domain)?;
            self.best = outcomes
                .into_iter()
                .max_by(|a, b| utility.utility_unchecked(a).total_cmp(&utility.utility_unchecked(b)));
            Ok(())
        }
        fn act(&mut self, _s: &SessionState) -> nego_core::Result<Action> {
            Ok(Action::Offer(self.best.clone().unwrap()))
        }
    }

    fn tournament(opponents: Vec<OpponentKind>, games: usize) -> Tournament {
        Tournament {
            opponents,
            games,
            problems: ProblemSet::Unseen {
                generator: GeneratorConfig::default(),
                seed: 77,
            },
            seed: 77,
            greedy: false,
            deadline: 40,
        }
    }

    #[test]
    fn hardliner_beats_conceder() {
        let t = tournament(vec![OpponentKind::Conceder], 100);
        let make = || -> Box<dyn Negotiator> { Box::new(Hardliner { best: None }) };
        let games = t.play(0, &make).unwrap();
        let r = Tournament::summarize(OpponentKind::Conceder, 0, &games);
        assert_eq!(r.agreement_rate, 1.0);
        assert!((r.mean_utility_self - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_agents_reach_agreements() {
        let t = tournament(vec![OpponentKind::Random], 1000);
        let make = || -> Box<dyn Negotiator> { Box::new(BaselineAgent::new(OpponentSpec::random()).unwrap()) };
        let games = t.play(0, &make).unwrap();
        let r = Tournament::summarize(OpponentKind::Random, 0, &games);
        assert!(r.agreement_rate > 0.0);
        assert!(games.iter().all(|g| (0.0..=1.0).contains(&g.utility_self)));
    }

    #[test]
    fn identical_checkpoints_have_zero_spread_and_runs_repeat() {
        let policy: Arc<dyn ActorCritic> =
            Arc::new(GnnPolicy::new(GatConfig { layers: 1, hidden: 8, heads: 2 }, 3).unwrap());
        let contestants: Vec<Contestant> = (0..3)
            .map(|_| Contestant { seed: 1, policy: Arc::clone(&policy) })
            .collect();
        let t = tournament(vec![OpponentKind::Linear, OpponentKind::Boulware], 20);
        let a = t.run(&contestants).unwrap();
        for s in &a.summary {
            assert_eq!(s.ci99_self, 0.0);
            assert_eq!(s.ci99_opp, 0.0);
        }
        assert_eq!(a, t.run(&contestants).unwrap());
        let dir = tempfile::tempdir().unwrap();
        a.write(dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
        assert!(text.starts_with(
            "opponent,checkpoint_seed,mean_utility_self,mean_utility_opp,agreement_rate,mean_rounds\n"
        ));
        let text = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        assert!(text.starts_with("opponent,mean_self,ci99_self,mean_opp,ci99_opp\n"));
    }

    #[test]
    fn unseen_and_training_streams_differ() {
        let g = GeneratorConfig::default();
        let unseen = ProblemSet::Unseen { generator: g.clone(), seed: 9 };
        let train = ProblemSet::TrainingStream { generator: g, seed: 9, first_episode: 0 };
        for game in 0..20 {
            assert_ne!(unseen.problem(game).unwrap(), train.problem(game).unwrap());
        }
    }
}
