//! The declarative run configuration and its command-line overrides.
//!
//! ```toml
//! run_dir = "baseline"            # relative paths resolve against $NEGO_RUN_ROOT
//! policy = "gnn"                  # or "flat"
//!
//! [gnn]                           # layers, hidden, heads
//! [flat]                          # hidden, layers
//! [generator]                     # shared by gen-problems, train and evaluate
//! [trainer]                       # PPO hyperparameters, opponents, problems, seed
//! [eval]                          # checkpoints, games, problems, seed, greedy
//! [gen_problems]                  # count, out_dir
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use nego_core::GeneratorConfig;
use nego_policy::{FlatConfig, GatConfig, PolicyConfig, PolicyKind};
use nego_rl::{EvalConfig, TrainerConfig};

pub const RUN_ROOT_ENV: &str = "NEGO_RUN_ROOT";
pub const DEFAULT_RUN_ROOT: &str = "runs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenProblemsConfig {
    pub count: usize,
    pub out_dir: PathBuf,
}

impl Default for GenProblemsConfig {
    fn default() -> Self {
        Self {
            count: 10,
            out_dir: PathBuf::from("problems"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_dir: Option<PathBuf>,
    pub policy: PolicyKind,
    pub gnn: GatConfig,
    pub flat: FlatConfig,
    pub generator: GeneratorConfig,
    pub trainer: TrainerConfig,
    pub eval: EvalConfig,
    pub gen_problems: GenProblemsConfig,
}

/// Sections that exist once at the top level and must not be repeated
/// inside `[trainer]` or `[eval]`.
const SHARED: [(&str, &str); 3] = [
    ("trainer", "generator"),
    ("trainer", "policy"),
    ("eval", "generator"),
];

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let raw: toml::Table = toml::from_str(text)?;
        for (section, key) in SHARED {
            if raw
                .get(section)
                .and_then(|s| s.as_table())
                .is_some_and(|t| t.contains_key(key))
            {
                bail!("`{section}.{key}` is not allowed; use the top-level `{key}` setting");
            }
        }
        let mut config: RunConfig = toml::from_str(text)?;
        config.sync();
        Ok(config)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Propagates the shared top-level sections into the trainer and eval sections.
    pub fn sync(&mut self) {
        self.trainer.generator = self.generator.clone();
        self.trainer.policy = PolicyConfig {
            policy: self.policy,
            gnn: self.gnn,
            flat: self.flat.clone(),
        };
        self.eval.generator = self.generator.clone();
    }

    pub fn to_toml(&self) -> String {
        let mut shown = self.clone();
        // the shared sections are written once, at the top level
        shown.trainer.generator = GeneratorConfig::default();
        shown.trainer.policy = PolicyConfig::default();
        shown.eval.generator = GeneratorConfig::default();
        let mut table = toml::Table::try_from(&shown).expect("config serializes");
        for (section, key) in SHARED {
            if let Some(t) = table.get_mut(section).and_then(|s| s.as_table_mut()) {
                t.remove(key);
            }
        }
        toml::to_string(&table).expect("table serializes")
    }

    /// Absolute or root-relative run directory for training.
    pub fn resolved_run_dir(&self) -> PathBuf {
        let dir = self.run_dir.clone().unwrap_or_else(|| {
            PathBuf::from(format!("{}_seed{}", self.policy, self.trainer.seed))
        });
        resolve_run_path(&dir)
    }
}

/// Resolves a relative run path against `$NEGO_RUN_ROOT` (default `runs`).
pub fn resolve_run_path(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    let root = std::env::var_os(RUN_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_RUN_ROOT));
    root.join(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.trainer.batch_size, 6000);
        assert_eq!(c.trainer.update_epochs, 30);
        assert_eq!(c.gnn, GatConfig { layers: 4, hidden: 256, heads: 4 });
        assert_eq!(c.eval.games, 1000);
        let again = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn shared_sections_propagate() {
        let c = RunConfig::from_toml(
            "policy = \"flat\"\n[generator]\nmax_objectives = 5\n[flat]\nhidden = 64\n[trainer]\nseed = 3\n",
        )
        .unwrap();
        assert_eq!(c.trainer.generator.max_objectives, 5);
        assert_eq!(c.eval.generator.max_objectives, 5);
        assert_eq!(c.trainer.policy.policy, PolicyKind::Flat);
        assert_eq!(c.trainer.policy.flat.hidden, 64);
    }

    #[test]
    fn rejects_unknown_and_misplaced_keys() {
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("[trainer]\nbogus = 1").is_err());
        assert!(RunConfig::from_toml("[trainer.generator]\nseed = 1").is_err());
        assert!(RunConfig::from_toml("[eval]\ngames = \"many\"").is_err());
    }
}
