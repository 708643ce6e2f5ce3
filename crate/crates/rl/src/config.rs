//! Trainer configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use nego_core::{GeneratorConfig, OpponentKind};
use nego_policy::{LogProbMode, PolicyConfig, PolicyKind};

use crate::error::{config, Result, RlError};

/// Where negotiation problems come from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ProblemSource {
    /// A fresh problem from the generator for every episode.
    #[default]
    Random,
    /// The same problem file for every episode.
    Fixed(PathBuf),
}

impl FromStr for ProblemSource {
    type Err = RlError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "random" {
            Ok(ProblemSource::Random)
        } else if let Some(path) = s.strip_prefix("fixed:") {
            if path.is_empty() {
                return Err(config("fixed problem source needs a path, as in fixed:<file>"));
            }
            Ok(ProblemSource::Fixed(PathBuf::from(path)))
        } else {
            Err(config(format!(
                "problem source '{s}' is neither 'random' nor 'fixed:<file>'"
            )))
        }
    }
}

impl TryFrom<String> for ProblemSource {
    type Error = RlError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ProblemSource> for String {
    fn from(p: ProblemSource) -> String {
        p.to_string()
    }
}

impl fmt::Display for ProblemSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemSource::Random => f.write_str("random"),
            ProblemSource::Fixed(p) => write!(f, "fixed:{}", p.display()),
        }
    }
}

/// PPO hyperparameters plus everything that defines the training task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub total_timesteps: u64,
    pub batch_size: usize,
    pub minibatch_size: usize,
    pub update_epochs: usize,
    pub learning_rate: f64,
    pub anneal_lr: bool,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub clip_vloss: bool,
    pub norm_adv: bool,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub seed: u64,
    pub deadline: usize,
    pub opponents: Vec<OpponentKind>,
    pub problems: ProblemSource,
    pub log_prob_mode: LogProbMode,
    /// Episodes advanced in lockstep during rollouts.
    pub num_envs: usize,
    /// Batches between checkpoints.
    pub checkpoint_every: usize,
    pub generator: GeneratorConfig,
    pub policy: PolicyConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            total_timesteps: 2_000_000,
            batch_size: 6000,
            minibatch_size: 300,
            update_epochs: 30,
            learning_rate: 3e-4,
            anneal_lr: true,
            gamma: 1.0,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            clip_vloss: false,
            norm_adv: true,
            entropy_coef: 0.001,
            value_coef: 1.0,
            max_grad_norm: 0.5,
            seed: 1,
            deadline: nego_core::protocol::DEFAULT_DEADLINE,
            opponents: OpponentKind::ALL.to_vec(),
            problems: ProblemSource::Random,
            log_prob_mode: LogProbMode::Composite,
            num_envs: 32,
            checkpoint_every: 10,
            generator: GeneratorConfig::default(),
            policy: PolicyConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.minibatch_size == 0 {
            return Err(config("batch_size and minibatch_size must be positive"));
        }
        if !self.batch_size.is_multiple_of(self.minibatch_size) {
            return Err(config(format!(
                "batch_size {} is not divisible by minibatch_size {}",
                self.batch_size, self.minibatch_size
            )));
        }
        if self.num_iterations() == 0 {
            return Err(config(format!(
                "total_timesteps {} is smaller than one batch of {}",
                self.total_timesteps, self.batch_size
            )));
        }
        if self.update_epochs == 0 || self.num_envs == 0 || self.checkpoint_every == 0 {
            return Err(config("update_epochs, num_envs and checkpoint_every must be positive"));
        }
        let coefficients = [
            ("learning_rate", self.learning_rate),
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda),
            ("clip_epsilon", self.clip_epsilon),
            ("entropy_coef", self.entropy_coef),
            ("value_coef", self.value_coef),
            ("max_grad_norm", self.max_grad_norm),
        ];
        for (name, value) in coefficients {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(config(format!("{name} must be a non-negative number, got {value}")));
            }
        }
        if self.gamma > 1.0 || self.gae_lambda > 1.0 {
            return Err(config("gamma and gae_lambda must not exceed 1"));
        }
        if self.deadline == 0 {
            return Err(config("deadline must be positive"));
        }
        if self.opponents.is_empty() {
            return Err(config("the opponent set is empty"));
        }
        if self.policy.policy == PolicyKind::Flat && self.problems == ProblemSource::Random {
            return Err(config(
                "the flat policy is tied to one domain and needs problems = \"fixed:<file>\"",
            ));
        }
        self.generator
            .validate()
            .map_err(|e| config(format!("generator: {e}")))?;
        self.policy
            .validate()
            .map_err(|e| config(format!("policy: {e}")))?;
        Ok(())
    }

    pub fn num_iterations(&self) -> u64 {
        if self.batch_size == 0 {
            0
        } else {
            self.total_timesteps / self.batch_size as u64
        }
    }

    pub fn num_minibatches(&self) -> usize {
        self.batch_size / self.minibatch_size
    }
}

/// Linearly annealed learning rate for 1-based `iteration`.
pub fn annealed_lr(base: f64, iteration: u64, num_iterations: u64) -> f64 {
    let done = (iteration.saturating_sub(1)) as f64 / num_iterations.max(1) as f64;
    base * (1.0 - done)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_table() {
        let c = TrainerConfig::default();
        c.validate().unwrap();
        assert_eq!(c.batch_size, 6000);
        assert_eq!(c.minibatch_size, 300);
        assert_eq!(c.update_epochs * c.num_minibatches(), 600);
        assert_eq!(c.gamma, 1.0);
        assert_eq!(c.gae_lambda, 0.95);
        assert_eq!(c.entropy_coef, 0.001);
        assert_eq!(c.value_coef, 1.0);
        assert_eq!(c.deadline, 40);
        assert_eq!(c.num_iterations(), 333);
    }

    #[test]
    fn iteration_count_and_annealing() {
        let c = TrainerConfig {
            total_timesteps: 12_000,
            ..Default::default()
        };
        assert_eq!(c.num_iterations(), 2);
        assert!((annealed_lr(3e-4, 51, 100) - 1.5e-4).abs() < 1e-18);
        assert_eq!(annealed_lr(3e-4, 1, 100), 3e-4);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            TrainerConfig { minibatch_size: 7, ..Default::default() },
            TrainerConfig { entropy_coef: -1.0, ..Default::default() },
            TrainerConfig { total_timesteps: 10, ..Default::default() },
            TrainerConfig { opponents: vec![], ..Default::default() },
            TrainerConfig {
                policy: PolicyConfig { policy: PolicyKind::Flat, ..Default::default() },
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().unwrap_err().is_config());
        }
    }

    #[test]
    fn problem_source_strings() {
        assert_eq!("random".parse::<ProblemSource>().unwrap(), ProblemSource::Random);
        assert_eq!(
            "fixed:p/problem_0".parse::<ProblemSource>().unwrap(),
            ProblemSource::Fixed("p/problem_0".into())
        );
        assert!("fixed:".parse::<ProblemSource>().is_err());
        assert!("other".parse::<ProblemSource>().is_err());
        let c = TrainerConfig {
            problems: ProblemSource::Fixed("x.json".into()),
            ..Default::default()
        };
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<TrainerConfig>(&text).unwrap(), c);
    }
}
