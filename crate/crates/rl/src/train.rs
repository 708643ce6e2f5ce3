//! The rollout, advantage and update loop, with run-directory bookkeeping.
//!
//! Layout of a run directory:
//!
//! ```text
//! config.toml                   effective trainer configuration
//! metrics.csv                   one row per batch
//! checkpoints/step_<N>/         policy.bin, optimizer.bin, state.json
//! policy.bin                    final policy
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use nego_core::rng::derive_seed;
use nego_core::{NegotiationProblem, OpponentSpec};
use nego_policy::ActorCritic;

use crate::config::{annealed_lr, ProblemSource, TrainerConfig};
use crate::error::{config as config_error, io, Result, RlError};
use crate::gae::compute_gae;
use crate::ppo::{ppo_update, Adam, PpoSettings, UpdateMetrics};
use crate::rollout::{tags, Collector, RolloutSpec, TrajectoryBatch};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const POLICY_FILE: &str = "policy.bin";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub episodic_return_mean: f64,
    pub agreement_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainerState {
    iteration: u64,
    global_step: u64,
    next_episode: u64,
    aborted: u64,
    adam_step: u64,
}

pub struct Trainer {
    config: TrainerConfig,
    policy: Box<dyn ActorCritic>,
    adam: Adam,
    collector: Collector,
    iteration: u64,
    global_step: u64,
    run_dir: Option<PathBuf>,
    metrics: Vec<MetricsRow>,
    last_batch: Option<TrajectoryBatch>,
}

fn load_fixed(source: &ProblemSource) -> Result<Option<Arc<NegotiationProblem>>> {
    match source {
        ProblemSource::Random => Ok(None),
        ProblemSource::Fixed(path) => NegotiationProblem::read_from(path)
            .map(|p| Some(Arc::new(p)))
            .map_err(|e| config_error(format!("cannot load fixed problem: {e}"))),
    }
}

impl Trainer {
    /// A trainer without a run directory (nothing is written to disk).
    pub fn new(config: TrainerConfig) -> Result<Self> {
        config.validate()?;
        let fixed = load_fixed(&config.problems)?;
        let sizes = fixed.as_ref().map(|p| p.domain.sizes().to_vec());
        let policy = config
            .policy
            .build(sizes.as_deref(), derive_seed(config.seed, &[tags::INIT]))
            .map_err(|e| config_error(format!("policy: {e}")))?;
        let collector = Collector::new(RolloutSpec {
            seed: config.seed,
            deadline: config.deadline,
            opponents: config.opponents.iter().map(|&k| OpponentSpec::new(k)).collect(),
            generator: config.generator.clone(),
            fixed,
            num_envs: config.num_envs,
            log_prob_mode: config.log_prob_mode,
        });
        Ok(Self {
            adam: Adam::new(policy.num_params()),
            policy,
            collector,
            config,
            iteration: 0,
            global_step: 0,
            run_dir: None,
            metrics: Vec::new(),
            last_batch: None,
        })
    }

    /// Starts a fresh run in `run_dir`, which must not already hold one.
    pub fn create(config: TrainerConfig, run_dir: &Path) -> Result<Self> {
        let mut trainer = Self::new(config)?;
        if run_dir.join(METRICS_FILE).exists() {
            return Err(config_error(format!(
                "{} already contains a run; resume it or choose another directory",
                run_dir.display()
            )));
        }
        fs::create_dir_all(run_dir.join(CHECKPOINT_DIR)).map_err(io(run_dir))?;
        let text = toml::to_string(&trainer.config)
            .map_err(|e| RlError::Run(format!("cannot serialize config: {e}")))?;
        let config_path = run_dir.join(CONFIG_FILE);
        fs::write(&config_path, text).map_err(io(&config_path))?;
        let mut writer = csv::Writer::from_path(run_dir.join(METRICS_FILE))?;
        writer.write_record([
            "step",
            "episodic_return_mean",
            "agreement_rate",
            "policy_loss",
            "value_loss",
            "entropy",
            "clip_frac",
            "lr",
        ])?;
        writer.flush().map_err(io(run_dir.join(METRICS_FILE)))?;
        trainer.run_dir = Some(run_dir.to_path_buf());
        Ok(trainer)
    }

    /// Continues a run from its latest checkpoint. Metrics rows written
    /// after that checkpoint are discarded and regenerated.
    pub fn resume(run_dir: &Path) -> Result<Self> {
        let config_path = run_dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&config_path).map_err(io(&config_path))?;
        let config: TrainerConfig =
            toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", config_path.display())))?;
        let mut trainer = Self::new(config)?;
        trainer.run_dir = Some(run_dir.to_path_buf());
        let metrics_path = run_dir.join(METRICS_FILE);
        let mut rows: Vec<MetricsRow> = csv::Reader::from_path(&metrics_path)?
            .deserialize()
            .collect::<std::result::Result<_, _>>()?;

        let Some((step, dir)) = latest_checkpoint(run_dir)? else {
            // nothing to resume from: start over in place
            rows.clear();
            trainer.rewrite_metrics(&rows)?;
            return Ok(trainer);
        };
        let state_path = dir.join("state.json");
        let state: TrainerState = serde_json::from_str(
            &fs::read_to_string(&state_path).map_err(io(&state_path))?,
        )
        .map_err(|e| RlError::Run(format!("{}: {e}", state_path.display())))?;
        let loaded = nego_policy::load(&dir.join(POLICY_FILE))?;
        if loaded.policy.layout() != trainer.policy.layout() || loaded.policy.kind() != trainer.policy.kind() {
            return Err(config_error("checkpoint does not match the run configuration"));
        }
        trainer.policy = loaded.policy;
        let opt_path = dir.join("optimizer.bin");
        let bytes = fs::read(&opt_path).map_err(io(&opt_path))?;
        let n = trainer.policy.num_params();
        if bytes.len() != 16 * n {
            return Err(RlError::Run(format!("{} has the wrong size", opt_path.display())));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        trainer.adam.m = values[..n].to_vec();
        trainer.adam.v = values[n..].to_vec();
        trainer.adam.step = state.adam_step;
        trainer.iteration = state.iteration;
        trainer.global_step = state.global_step;
        trainer.collector.next_episode = state.next_episode;
        trainer.collector.aborted = state.aborted;
        debug_assert_eq!(step, state.global_step);
        rows.retain(|r| r.step <= state.global_step);
        trainer.rewrite_metrics(&rows)?;
        trainer.metrics = rows;
        info!("resumed {} at step {}", run_dir.display(), state.global_step);
        Ok(trainer)
    }

    fn rewrite_metrics(&self, rows: &[MetricsRow]) -> Result<()> {
        let path = self.run_dir.as_ref().expect("run dir").join(METRICS_FILE);
        let mut writer = csv::Writer::from_path(&path)?;
        if rows.is_empty() {
            writer.write_record([
                "step",
                "episodic_return_mean",
                "agreement_rate",
                "policy_loss",
                "value_loss",
                "entropy",
                "clip_frac",
                "lr",
            ])?;
        }
        for row in rows {
            writer.serialize(row)?;
        }
        writer.flush().map_err(io(&path))?;
        Ok(())
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn policy(&self) -> &dyn ActorCritic {
        self.policy.as_ref()
    }

    pub fn into_policy(self) -> Box<dyn ActorCritic> {
        self.policy
    }

    pub fn metrics(&self) -> &[MetricsRow] {
        &self.metrics
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.config.num_iterations()
    }

    /// The most recent batch, with advantages.
    pub fn last_batch(&self) -> Option<&TrajectoryBatch> {
        self.last_batch.as_ref()
    }

    fn settings(&self) -> PpoSettings {
        let c = &self.config;
        PpoSettings {
            update_epochs: c.update_epochs,
            num_minibatches: c.num_minibatches(),
            clip_epsilon: c.clip_epsilon,
            clip_vloss: c.clip_vloss,
            norm_adv: c.norm_adv,
            entropy_coef: c.entropy_coef,
            value_coef: c.value_coef,
            max_grad_norm: c.max_grad_norm,
            log_prob_mode: c.log_prob_mode,
        }
    }

    /// One rollout and update phase; `None` once all iterations are done.
    pub fn step(&mut self) -> Result<Option<MetricsRow>> {
        if self.is_finished() {
            return Ok(None);
        }
        let iteration = self.iteration + 1;
        let total = self.config.num_iterations();
        let lr = if self.config.anneal_lr {
            annealed_lr(self.config.learning_rate, iteration, total)
        } else {
            self.config.learning_rate
        };

        let mut batch = self.collector.collect(self.policy.as_ref(), self.config.batch_size)?;
        let checkpoint_due = iteration.is_multiple_of(self.config.checkpoint_every as u64) || iteration == total;
        if checkpoint_due {
            // checkpoints hold no pending episodes, so resuming replays exactly
            self.collector.carry.clear();
        }
        let rewards: Vec<f64> = batch.transitions.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = batch.transitions.iter().map(|t| t.value).collect();
        let dones: Vec<bool> = batch.transitions.iter().map(|t| t.done).collect();
        let (advantages, returns) =
            compute_gae(&rewards, &values, &dones, self.config.gamma, self.config.gae_lambda);
        batch.advantages = advantages;
        batch.returns = returns;

        let settings = self.settings();
        let m: UpdateMetrics = ppo_update(
            self.policy.as_mut(),
            &mut self.adam,
            &batch,
            &settings,
            lr,
            derive_seed(self.config.seed, &[tags::SHUFFLE, iteration]),
        )?;
        self.global_step += batch.len() as u64;
        self.iteration = iteration;
        let row = MetricsRow {
            step: self.global_step,
            episodic_return_mean: batch.mean_return(),
            agreement_rate: batch.agreement_rate(),
            policy_loss: m.policy_loss,
            value_loss: m.value_loss,
            entropy: m.entropy,
            clip_frac: m.clip_frac,
            lr,
        };
        info!(
            "iter {iteration}/{total} step {} return {:.4} agree {:.3} kl {:.5}",
            row.step, row.episodic_return_mean, row.agreement_rate, m.approx_kl
        );
        self.metrics.push(row);
        self.last_batch = Some(batch);
        if let Some(dir) = self.run_dir.clone() {
            self.append_metrics(&dir, &row)?;
            if checkpoint_due {
                self.save_checkpoint(&dir)?;
            }
            if iteration == total {
                self.save_policy(&dir.join(POLICY_FILE))?;
            }
        }
        Ok(Some(row))
    }

    /// Trains until all iterations are done.
    pub fn run(&mut self) -> Result<&[MetricsRow]> {
        while self.step()?.is_some() {}
        Ok(&self.metrics)
    }

    fn metadata(&self) -> serde_json::Value {
        json!({
            "training_seed": self.config.seed,
            "step": self.global_step,
            "iteration": self.iteration,
            "problems": self.config.problems.to_string(),
            "policy": self.policy.kind(),
        })
    }

    pub fn save_policy(&self, path: &Path) -> Result<()> {
        nego_policy::save(self.policy.as_ref(), self.metadata(), path)?;
        Ok(())
    }

    fn append_metrics(&self, dir: &Path, row: &MetricsRow) -> Result<()> {
        let path = dir.join(METRICS_FILE);
        let file = fs::OpenOptions::new().append(true).open(&path).map_err(io(&path))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        writer.serialize(row)?;
        writer.flush().map_err(io(&path))?;
        Ok(())
    }

    fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        let ck = dir.join(CHECKPOINT_DIR).join(format!("step_{}", self.global_step));
        fs::create_dir_all(&ck).map_err(io(&ck))?;
        self.save_policy(&ck.join(POLICY_FILE))?;
        let mut bytes = Vec::with_capacity(16 * self.adam.m.len());
        for x in self.adam.m.iter().chain(&self.adam.v) {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        let opt = ck.join("optimizer.bin");
        fs::File::create(&opt)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(io(&opt))?;
        let state = TrainerState {
            iteration: self.iteration,
            global_step: self.global_step,
            next_episode: self.collector.next_episode,
            aborted: self.collector.aborted,
            adam_step: self.adam.step,
        };
        // written last: its presence marks the checkpoint complete
        let state_path = ck.join("state.json");
        fs::write(&state_path, serde_json::to_string_pretty(&state).expect("plain struct"))
            .map_err(io(&state_path))?;
        Ok(())
    }
}

fn latest_checkpoint(run_dir: &Path) -> Result<Option<(u64, PathBuf)>> {
    let root = run_dir.join(CHECKPOINT_DIR);
    if !root.exists() {
        return Ok(None);
    }
    let mut best = None;
    for entry in fs::read_dir(&root).map_err(io(&root))? {
        let entry = entry.map_err(io(&root))?;
        let name = entry.file_name();
        let Some(step) = name
            .to_str()
            .and_then(|n| n.strip_prefix("step_"))
            .and_then(|n| n.parse::<u64>().ok())
        else {
            continue;
        };
        if entry.path().join("state.json").exists() && best.as_ref().is_none_or(|(s, _)| step > *s) {
            best = Some((step, entry.path()));
        }
    }
    Ok(best)
}

/// Trains to completion, optionally recording into `run_dir`.
pub fn train(config: TrainerConfig, run_dir: Option<&Path>) -> Result<Trainer> {
    let mut trainer = match run_dir {
        Some(dir) => Trainer::create(config, dir)?,
        None => Trainer::new(config)?,
    };
    trainer.run()?;
    Ok(trainer)
}
