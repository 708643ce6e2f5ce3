//! Subcommand definitions and their implementations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use nego_core::rng::substream;
use nego_core::{build_graph, generate_problem, HistoryStats, NegotiationProblem, OpponentKind};
use nego_policy::PolicyKind;
use nego_rl::eval::{RESULTS_FILE, SUMMARY_FILE};
use nego_rl::train::{METRICS_FILE, POLICY_FILE};
use nego_rl::{run_tournament, ProblemSource, Trainer};

use crate::config::{resolve_run_path, RunConfig};
use crate::plot;
use crate::usage;

/// Substream tag for `gen-problems`, distinct from the training and evaluation tags.
pub const GEN_PROBLEMS_TAG: u64 = 0x0067_656e;
pub const RUN_SNAPSHOT: &str = "run.toml";
pub const EVAL_SNAPSHOT: &str = "eval.toml";
pub const EVAL_DIR: &str = "eval";

#[derive(Debug, Parser)]
#[command(name = "nego", version, about = "Train and evaluate negotiation policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write random negotiation problems to disk.
    GenProblems(GenProblemsArgs),
    /// Train a policy with PPO against baseline opponents.
    Train(TrainArgs),
    /// Play trained checkpoints against baseline opponents.
    Evaluate(EvalArgs),
    /// Render learning curves and evaluation summaries to SVG.
    Plot(PlotArgs),
    /// Print the observation graph one agent sees.
    InspectGraph(InspectArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// TOML run configuration; flags override its values.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> anyhow::Result<RunConfig> {
        match &self.config {
            Some(path) => RunConfig::load(path).map_err(|e| usage(format!("{e:#}"))),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Debug, Args)]
pub struct GenProblemsArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// `gen_problems.count`
    #[arg(long)]
    pub count: Option<usize>,
    /// `gen_problems.out_dir`
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// `generator.seed`
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// `run_dir`, relative to $NEGO_RUN_ROOT
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// `policy`
    #[arg(long, value_parser = parse_policy)]
    pub policy: Option<PolicyKind>,
    /// `trainer.opponents`, comma separated
    #[arg(long, value_delimiter = ',')]
    pub opponents: Option<Vec<OpponentKind>>,
    /// `trainer.problems`: `random` or `fixed:<file>`
    #[arg(long)]
    pub problems: Option<ProblemSource>,
    /// `trainer.seed`
    #[arg(long)]
    pub seed: Option<u64>,
    /// `trainer.total_timesteps`
    #[arg(long)]
    pub total_timesteps: Option<u64>,
    /// `trainer.batch_size`
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// `trainer.minibatch_size`
    #[arg(long)]
    pub minibatch_size: Option<usize>,
    /// `trainer.update_epochs`
    #[arg(long)]
    pub update_epochs: Option<usize>,
    /// `trainer.learning_rate`
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// `trainer.num_envs`
    #[arg(long)]
    pub num_envs: Option<usize>,
    /// Continue the run in `run_dir` from its latest checkpoint.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// `eval.checkpoints`, comma separated; a run directory stands for its final policy
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Option<Vec<PathBuf>>,
    /// `eval.opponents`, comma separated
    #[arg(long, value_delimiter = ',')]
    pub opponents: Option<Vec<OpponentKind>>,
    /// `eval.games` per checkpoint and opponent
    #[arg(long)]
    pub games: Option<usize>,
    /// `eval.problems`: `random` or `fixed:<file>`
    #[arg(long)]
    pub problems: Option<ProblemSource>,
    /// `eval.seed`
    #[arg(long)]
    pub seed: Option<u64>,
    /// `eval.greedy`: act by argmax instead of sampling
    #[arg(long)]
    pub greedy: bool,
    /// Output directory (default `<run_dir>/eval`)
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// `run_dir`, used for the default checkpoint and output directory
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Run directory holding metrics.csv, relative to $NEGO_RUN_ROOT.
    pub run_dir: PathBuf,
    /// Directory holding summary.csv (default `<run_dir>/eval`).
    #[arg(long)]
    pub eval_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Problem file.
    #[arg(long)]
    pub problem: PathBuf,
    /// Seat whose preferences the graph encodes.
    #[arg(long, default_value_t = 0)]
    pub agent: usize,
    /// Round number, at most the deadline.
    #[arg(long, default_value_t = 0)]
    pub round: usize,
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    match s {
        "gnn" => Ok(PolicyKind::Gnn),
        "flat" => Ok(PolicyKind::Flat),
        other => Err(format!("unknown policy '{other}' (expected gnn or flat)")),
    }
}

impl Cli {
    pub fn run(self) -> anyhow::Result<()> {
        match self.command {
            Command::GenProblems(a) => gen_problems(&a),
            Command::Train(a) => train(&a),
            Command::Evaluate(a) => evaluate(&a),
            Command::Plot(a) => plot_run(&a),
            Command::InspectGraph(a) => inspect_graph(&a),
        }
    }
}

/// Accepts `problem_0` for `problem_0.json` and makes the path absolute, so
/// a run directory stays usable from any working directory.
fn locate_problem(path: &Path) -> anyhow::Result<PathBuf> {
    let candidates = [path.to_path_buf(), path.with_extension("json")];
    let found = candidates
        .iter()
        .find(|p| p.is_file())
        .ok_or_else(|| usage(format!("problem file {} not found", path.display())))?;
    fs::canonicalize(found).with_context(|| format!("cannot resolve {}", found.display()))
}

fn locate_source(source: ProblemSource) -> anyhow::Result<ProblemSource> {
    Ok(match source {
        ProblemSource::Fixed(path) => ProblemSource::Fixed(locate_problem(&path)?),
        random => random,
    })
}

fn snapshot(config: &RunConfig, path: &Path) -> anyhow::Result<()> {
    fs::write(path, config.to_toml()).with_context(|| format!("cannot write {}", path.display()))
}

pub fn gen_problems(args: &GenProblemsArgs) -> anyhow::Result<()> {
    let mut config = args.config.load()?;
    if let Some(n) = args.count {
        config.gen_problems.count = n;
    }
    if let Some(dir) = &args.out_dir {
        config.gen_problems.out_dir = dir.clone();
    }
    if let Some(seed) = args.seed {
        config.generator.seed = seed;
    }
    config.generator.validate().map_err(|e| usage(format!("generator: {e}")))?;
    let out = &config.gen_problems.out_dir;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    for i in 0..config.gen_problems.count {
        let mut rng = substream(config.generator.seed, &[GEN_PROBLEMS_TAG, i as u64]);
        let problem = generate_problem(&config.generator, &mut rng)?;
        let path = out.join(format!("problem_{i}.json"));
        problem
            .write_to(&path)
            .with_context(|| format!("cannot write {}", path.display()))?;
        println!("{}\t|Ω| = {}", path.display(), problem.domain.outcome_space_size());
    }
    Ok(())
}

/// The effective configuration of a `train` invocation.
pub fn train_config(args: &TrainArgs) -> anyhow::Result<RunConfig> {
    let mut config = args.config.load()?;
    if let Some(dir) = &args.run_dir {
        config.run_dir = Some(dir.clone());
    }
    if let Some(p) = args.policy {
        config.policy = p;
    }
    let t = &mut config.trainer;
    if let Some(o) = &args.opponents {
        t.opponents = o.clone();
    }
    if let Some(p) = &args.problems {
        t.problems = p.clone();
    }
    if let Some(s) = args.seed {
        t.seed = s;
    }
    if let Some(n) = args.total_timesteps {
        t.total_timesteps = n;
    }
    if let Some(n) = args.batch_size {
        t.batch_size = n;
    }
    if let Some(n) = args.minibatch_size {
        t.minibatch_size = n;
    }
    if let Some(n) = args.update_epochs {
        t.update_epochs = n;
    }
    if let Some(lr) = args.learning_rate {
        t.learning_rate = lr;
    }
    if let Some(n) = args.num_envs {
        t.num_envs = n;
    }
    t.problems = locate_source(t.problems.clone())?;
    config.sync();
    config.trainer.validate()?;
    Ok(config)
}

pub fn train(args: &TrainArgs) -> anyhow::Result<()> {
    let config = train_config(args)?;
    let dir = config.resolved_run_dir();
    let mut trainer = if args.resume {
        if !dir.join(METRICS_FILE).exists() {
            return Err(usage(format!("{} holds no run to resume", dir.display())));
        }
        Trainer::resume(&dir)?
    } else {
        let trainer = Trainer::create(config.trainer.clone(), &dir)?;
        snapshot(&config, &dir.join(RUN_SNAPSHOT))?;
        trainer
    };
    info!("training into {}", dir.display());
    let rows = trainer.run()?;
    if let Some(last) = rows.last() {
        println!(
            "{}: {} steps, final return {:.4}, agreement {:.3}",
            dir.display(),
            last.step,
            last.episodic_return_mean,
            last.agreement_rate
        );
    }
    Ok(())
}

/// A checkpoint argument may name a file or a run directory.
fn locate_checkpoint(path: &Path) -> PathBuf {
    let path = if path.exists() {
        path.to_path_buf()
    } else {
        resolve_run_path(path)
    };
    if path.is_dir() {
        path.join(POLICY_FILE)
    } else {
        path
    }
}

/// The effective configuration and output directory of an `evaluate` invocation.
pub fn eval_config(args: &EvalArgs) -> anyhow::Result<(RunConfig, PathBuf)> {
    let mut config = args.config.load()?;
    if let Some(dir) = &args.run_dir {
        config.run_dir = Some(dir.clone());
    }
    let e = &mut config.eval;
    if let Some(c) = &args.checkpoints {
        e.checkpoints = c.clone();
    }
    if e.checkpoints.is_empty() {
        if let Some(dir) = &config.run_dir {
            e.checkpoints = vec![dir.clone()];
        }
    }
    e.checkpoints = e.checkpoints.iter().map(|p| locate_checkpoint(p)).collect();
    if let Some(missing) = e.checkpoints.iter().find(|p| !p.is_file()) {
        return Err(usage(format!("checkpoint {} not found", missing.display())));
    }
    if let Some(o) = &args.opponents {
        e.opponents = o.clone();
    }
    if let Some(g) = args.games {
        e.games = g;
    }
    if let Some(p) = &args.problems {
        e.problems = p.clone();
    }
    if let Some(s) = args.seed {
        e.seed = s;
    }
    if args.greedy {
        e.greedy = true;
    }
    e.problems = locate_source(e.problems.clone())?;
    config.sync();
    config.eval.validate()?;
    let out = match &args.out_dir {
        Some(d) => d.clone(),
        None => config.resolved_run_dir().join(EVAL_DIR),
    };
    Ok((config, out))
}

pub fn evaluate(args: &EvalArgs) -> anyhow::Result<()> {
    let (config, out) = eval_config(args)?;
    let results = run_tournament(&config.eval)?;
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    results.write(&out)?;
    snapshot(&config, &out.join(EVAL_SNAPSHOT))?;
    for s in &results.summary {
        println!(
            "{:<9} self {:.4} ± {:.4}  opponent {:.4} ± {:.4}",
            s.opponent, s.mean_self, s.ci99_self, s.mean_opp, s.ci99_opp
        );
    }
    println!("wrote {} and {} to {}", RESULTS_FILE, SUMMARY_FILE, out.display());
    Ok(())
}

pub fn plot_run(args: &PlotArgs) -> anyhow::Result<()> {
    let dir = resolve_run_path(&args.run_dir);
    let metrics = dir.join(METRICS_FILE);
    if !metrics.is_file() {
        return Err(usage(format!("{} not found; train a run first", metrics.display())));
    }
    let curve = dir.join(plot::LEARNING_CURVE_FILE);
    plot::learning_curve(&metrics, &curve)?;
    println!("wrote {}", curve.display());
    let eval_dir = args.eval_dir.clone().unwrap_or_else(|| dir.join(EVAL_DIR));
    let summary = eval_dir.join(SUMMARY_FILE);
    if summary.is_file() {
        let out = dir.join(plot::SUMMARY_PLOT_FILE);
        plot::summary(&summary, &out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

pub fn inspect_graph(args: &InspectArgs) -> anyhow::Result<()> {
    let config = args.config.load()?;
    let path = locate_problem(&args.problem)?;
    let problem = NegotiationProblem::read_from(&path)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if args.agent > 1 {
        return Err(usage("agent must be 0 or 1"));
    }
    let stats = HistoryStats::new(&problem.domain);
    let graph = build_graph(
        &problem.domain,
        &problem.utilities[args.agent],
        &stats,
        args.round,
        config.trainer.deadline,
    )
    .map_err(usage)?;
    let text = serde_json::to_string_pretty(&graph.to_json())?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        // a closed pipe (`| head`) is the reader's choice, not a failure
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}
