use nego_core::rng::substream;
use nego_core::{
    build_graph, generate_problem, Domain, GeneratorConfig, HistoryStats, Outcome, Side,
    UtilityFunction,
};
use nego_policy::{
    ActorCritic, GatConfig, GnnPolicy, LogProbMode, Observation, OutputGrad, PolicyOutput,
    SampledAction,
};

fn graph_obs(domain: &Domain, utility: &UtilityFunction, stats: &HistoryStats, round: usize) -> Observation {
    Observation::Graph(build_graph(domain, utility, stats, round, 40).unwrap())
}

fn tiny() -> GnnPolicy {
    let mut policy = GnnPolicy::new(GatConfig { layers: 2, hidden: 8, heads: 1 }, 11).unwrap();
    for (i, p) in policy.params_mut().iter_mut().enumerate() {
        *p += 0.03 * ((i * 7) as f64).cos();
    }
    policy
}

#[test]
fn whole_network_gradient_matches_finite_differences() {
    let policy = tiny();
    let mut rng = substream(21, &[]);
    let gen = GeneratorConfig::default();
    let mut observations = Vec::new();
    let mut actions = Vec::new();
    for round in [3, 9] {
        let problem = generate_problem(&gen, &mut rng).unwrap();
        let mut stats = HistoryStats::new(&problem.domain);
        let first = Outcome::new(vec![1; problem.domain.num_objectives()]);
        stats.update(&first, Side::Opponent).unwrap();
        stats.update(&Outcome::new(vec![0; problem.domain.num_objectives()]), Side::Own).unwrap();
        observations.push(graph_obs(&problem.domain, &problem.utilities[0], &stats, round));
        actions.push(SampledAction {
            accept: round == 3,
            offer: first,
            log_prob: 0.0,
        });
    }
    let refs: Vec<&Observation> = observations.iter().collect();
    let mode = LogProbMode::Composite;

    let scalar = |outs: &[PolicyOutput]| -> f64 {
        outs.iter()
            .zip(&actions)
            .map(|(o, a)| {
                let d = o.distribution(true).unwrap();
                d.log_prob(a, mode).unwrap() + 0.5 * o.state_value.powi(2) + 0.1 * d.entropy()
            })
            .sum()
    };

    let mut grad = vec![0.0; policy.num_params()];
    policy
        .forward_backward(
            &refs,
            &mut |outs: &[PolicyOutput]| {
                Ok(outs
                    .iter()
                    .zip(&actions)
                    .map(|(o, a)| {
                        let d = o.distribution(true).unwrap();
                        let lp = d.grad_log_prob(a, mode).unwrap();
                        let ent = d.grad_entropy();
                        OutputGrad {
                            accept_logits: [
                                lp.accept[0] + 0.1 * ent.accept[0],
                                lp.accept[1] + 0.1 * ent.accept[1],
                            ],
                            offer_logits: lp.offer.iter().zip(&ent.offer).map(|(x, y)| x + 0.1 * y).collect(),
                            state_value: o.state_value,
                        }
                    })
                    .collect())
            },
            &mut grad,
        )
        .unwrap();

    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..policy.num_params() {
        let mut p = policy.clone();
        p.params_mut()[i] += eps;
        let up = scalar(&p.forward(&refs).unwrap());
        p.params_mut()[i] -= 2.0 * eps;
        let down = scalar(&p.forward(&refs).unwrap());
        let numeric = (up - down) / (2.0 * eps);
        // some gradients are exactly zero (self-attention term cancels in the
        // softmax, offer bias is shift invariant), so floor the denominator
        // above the finite-difference round-off
        let err = (numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs()).max(1e-5);
        worst = worst.max(err);
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn same_parameters_serve_domains_of_any_size() {
    let config = GatConfig { layers: 2, hidden: 16, heads: 4 };
    let policy = GnnPolicy::new(config, 3).unwrap();
    let before = policy.params().to_vec();
    let gen = GeneratorConfig { min_objectives: 1, max_objectives: 9, ..Default::default() };
    let mut rng = substream(4, &[]);
    for _ in 0..50 {
        let problem = generate_problem(&gen, &mut rng).unwrap();
        let obs = graph_obs(&problem.domain, &problem.utilities[1], &HistoryStats::new(&problem.domain), 0);
        let out = &policy.forward(&[&obs]).unwrap()[0];
        assert!(out.is_finite());
        assert_eq!(out.offer_logits.len(), problem.domain.num_values());
        let dist = out.distribution(false).unwrap();
        assert!(dist.is_normalized(1e-6));
        assert_eq!(dist.num_objectives(), problem.domain.num_objectives());
        assert_eq!(policy.num_params(), GnnPolicy::count_params(&config));
    }
    assert_eq!(policy.params(), before.as_slice());
}

#[test]
fn identical_value_nodes_get_identical_logits() {
    let policy = GnnPolicy::new(GatConfig { layers: 3, hidden: 8, heads: 2 }, 5).unwrap();
    let domain = Domain::new(vec![4, 2]).unwrap();
    // values 1 and 2 of the first objective share weight and history
    let utility = UtilityFunction::new(vec![0.6, 0.4], vec![vec![0.0, 0.5, 0.5, 1.0], vec![1.0, 0.0]]).unwrap();
    let mut stats = HistoryStats::new(&domain);
    stats.update(&Outcome::new(vec![3, 0]), Side::Opponent).unwrap();
    let out = &policy.forward(&[&graph_obs(&domain, &utility, &stats, 1)]).unwrap()[0];
    assert_eq!(out.offer_logits[1], out.offer_logits[2]);
    assert_ne!(out.offer_logits[0], out.offer_logits[3]);
}

#[test]
fn relabeling_values_permutes_probabilities() {
    let policy = GnnPolicy::new(GatConfig { layers: 2, hidden: 12, heads: 3 }, 8).unwrap();
    let domain = Domain::new(vec![3, 4]).unwrap();
    let weights = vec![vec![0.0, 1.0, 0.3], vec![0.2, 1.0, 0.0, 0.7]];
    let sigma = [2, 0, 3, 1];
    let mut permuted = weights.clone();
    for (v, &s) in sigma.iter().enumerate() {
        permuted[1][s] = weights[1][v];
    }
    let offers = [(vec![0, 1], Side::Opponent), (vec![2, 3], Side::Own), (vec![1, 1], Side::Opponent)];
    let mut stats = HistoryStats::new(&domain);
    let mut stats_p = HistoryStats::new(&domain);
    for (o, side) in &offers {
        stats.update(&Outcome::new(o.clone()), *side).unwrap();
        stats_p.update(&Outcome::new(vec![o[0], sigma[o[1]]]), *side).unwrap();
    }
    let u = UtilityFunction::new(vec![0.5, 0.5], weights).unwrap();
    let u_p = UtilityFunction::new(vec![0.5, 0.5], permuted).unwrap();
    let a = policy.forward(&[&graph_obs(&domain, &u, &stats, 3)]).unwrap()[0].distribution(true).unwrap();
    let b = policy.forward(&[&graph_obs(&domain, &u_p, &stats_p, 3)]).unwrap()[0].distribution(true).unwrap();
    let (pa, pb) = (a.offer_probabilities(1), b.offer_probabilities(1));
    for (v, &s) in sigma.iter().enumerate() {
        assert!((pa[v] - pb[s]).abs() < 1e-12);
    }
    for (x, y) in a.offer_probabilities(0).iter().zip(b.offer_probabilities(0)) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!((a.accept_probability() - b.accept_probability()).abs() < 1e-12);
}
