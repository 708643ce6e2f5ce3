use std::fs;

use nego_policy::{GatConfig, PolicyConfig};
use nego_rl::train::{CHECKPOINT_DIR, METRICS_FILE, POLICY_FILE};
use nego_rl::{Trainer, TrainerConfig};

fn tiny(total: u64) -> TrainerConfig {
    TrainerConfig {
        total_timesteps: total,
        batch_size: 400,
        minibatch_size: 100,
        update_epochs: 2,
        num_envs: 8,
        checkpoint_every: 2,
        seed: 13,
        policy: PolicyConfig {
            gnn: GatConfig { layers: 2, hidden: 8, heads: 2 },
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let (full, cut) = (dir.path().join("full"), dir.path().join("cut"));
    let mut a = Trainer::create(tiny(2000), &full).unwrap();
    a.run().unwrap();

    let mut b = Trainer::create(tiny(2000), &cut).unwrap();
    for _ in 0..3 {
        b.step().unwrap();
    }
    drop(b);
    // iteration 3 was after the last checkpoint and must be regenerated
    let mut b = Trainer::resume(&cut).unwrap();
    assert_eq!(b.metrics().len(), 2);
    b.run().unwrap();

    assert_eq!(
        fs::read(full.join(METRICS_FILE)).unwrap(),
        fs::read(cut.join(METRICS_FILE)).unwrap()
    );
    assert_eq!(a.policy().params(), b.policy().params());
    let loaded = nego_policy::load(&cut.join(POLICY_FILE)).unwrap();
    assert_eq!(loaded.policy.params(), b.policy().params());
    assert_eq!(loaded.metadata["training_seed"], 13);
    assert!(cut.join(CHECKPOINT_DIR).join(format!("step_{}", b.global_step())).is_dir());
}

#[test]
fn every_batch_holds_complete_episodes() {
    let mut t = Trainer::new(tiny(1200)).unwrap();
    while let Some(row) = t.step().unwrap() {
        let batch = t.last_batch().unwrap();
        assert!(batch.len() >= 400);
        assert!(batch.transitions.last().unwrap().done);
        let done = batch.transitions.iter().filter(|x| x.done).count();
        assert_eq!(done, batch.episodes.len());
        assert!((0.0..=1.0).contains(&row.agreement_rate));
        assert!(row.lr > 0.0);
    }
    assert!(t.is_finished());
}

#[test]
fn existing_run_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    Trainer::create(tiny(400), dir.path()).unwrap();
    let err = Trainer::create(tiny(400), dir.path()).err().unwrap();
    assert!(err.is_config());
}

#[test]
fn bandit_negotiation_learns_to_ask_for_its_best_value() {
    use std::sync::Arc;

    use nego_core::{build_graph, Domain, GeneratorConfig, HistoryStats, NegotiationProblem, OpponentKind, OpponentSpec, UtilityFunction};
    use nego_policy::{ActorCritic, GnnPolicy, LogProbMode, Observation};
    use nego_rl::ppo::{ppo_update, Adam, PpoSettings};
    use nego_rl::rollout::RolloutSpec;
    use nego_rl::{compute_gae, Collector};

    // one objective with two values; the opponent accepts any offer worth
    // more than zero to it, which here is exactly the learner's best value.
    // With two rounds a rejected opening offer ends the session without
    // agreement, so the opening offer is a one-step bandit.
    let domain = Domain::new(vec![2]).unwrap();
    let u = UtilityFunction::new(vec![1.0], vec![vec![0.0, 1.0]]).unwrap();
    let problem = Arc::new(NegotiationProblem::new(domain.clone(), [u.clone(), u.clone()]).unwrap());
    let opponent = OpponentSpec { accept_threshold: 0.0, ..OpponentSpec::new(OpponentKind::Random) };
    let mut collector = Collector::new(RolloutSpec {
        seed: 3,
        deadline: 2,
        opponents: vec![opponent],
        generator: GeneratorConfig::default(),
        fixed: Some(problem),
        num_envs: 16,
        log_prob_mode: LogProbMode::Composite,
    });
    let mut policy = GnnPolicy::new(GatConfig { layers: 2, hidden: 16, heads: 2 }, 1).unwrap();
    let mut adam = Adam::new(policy.num_params());
    let settings = PpoSettings {
        update_epochs: 4,
        num_minibatches: 4,
        clip_epsilon: 0.2,
        clip_vloss: false,
        norm_adv: true,
        entropy_coef: 0.001,
        value_coef: 1.0,
        max_grad_norm: 0.5,
        log_prob_mode: LogProbMode::Composite,
    };
    let mut steps = 0;
    let mut iteration = 0;
    while steps < 50_000 {
        let mut batch = collector.collect(&policy, 1000).unwrap();
        let rewards: Vec<f64> = batch.transitions.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = batch.transitions.iter().map(|t| t.value).collect();
        let dones: Vec<bool> = batch.transitions.iter().map(|t| t.done).collect();
        (batch.advantages, batch.returns) = compute_gae(&rewards, &values, &dones, 1.0, 0.95);
        ppo_update(&mut policy, &mut adam, &batch, &settings, 1e-3, iteration).unwrap();
        steps += batch.len();
        iteration += 1;
    }
    let obs = Observation::Graph(build_graph(&domain, &u, &HistoryStats::new(&domain), 0, 2).unwrap());
    let dist = policy.forward(&[&obs]).unwrap()[0].distribution(false).unwrap();
    let p_best = dist.offer_probabilities(0)[1];
    assert!(p_best > 0.95, "P(best value) = {p_best}");
}
