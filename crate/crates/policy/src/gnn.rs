//! Graph-attention actor-critic.
//!
//! A stack of attention layers embeds every node of the observation graph.
//! The head node embedding feeds a linear state-value head and a linear
//! two-logit accept head; every value node embedding goes through one
//! shared linear layer that yields that value's offer logit. No parameter
//! depends on the number of objectives or values.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use nego_core::graph::{build_graph_on, FEATURE_WIDTH};
use nego_core::rng::substream;

use crate::error::{invalid, PolicyError, Result};
use crate::gat::{gat_backward, gat_forward, Adjacency, GatCache, GatGrads, GatParams, GatShape};
use crate::init::orthogonal;
use crate::linalg::{axpy, dot};
use crate::model::{
    ActorCritic, LossFn, Observation, ObservationContext, PolicyKind, PolicyOutput,
};
use crate::params::ParamLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
}

impl Default for GatConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            hidden: 256,
            heads: 4,
        }
    }
}

impl GatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 {
            return Err(invalid("layers, hidden width and heads must all be positive"));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(invalid(format!(
                "hidden width {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }

    fn layer_shape(&self, layer: usize) -> GatShape {
        GatShape {
            input: if layer == 0 { FEATURE_WIDTH } else { self.hidden },
            width: self.hidden,
            heads: self.heads,
        }
    }
}

#[derive(Debug, Clone)]
struct Ranges {
    layers: Vec<Range<usize>>,
    value_weight: Range<usize>,
    value_bias: Range<usize>,
    accept_weight: Range<usize>,
    accept_bias: Range<usize>,
    offer_weight: Range<usize>,
    offer_bias: Range<usize>,
}

fn build_layout(config: &GatConfig) -> (ParamLayout, Ranges) {
    let mut layout = ParamLayout::new();
    let (w, k) = (config.hidden, config.heads);
    let mut layers = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let input = config.layer_shape(l).input;
        let start = layout.total();
        layout.push(format!("gat{l}.psi.weight"), &[input, w]);
        layout.push(format!("gat{l}.psi.bias"), &[w]);
        layout.push(format!("gat{l}.att_self"), &[k, w / k]);
        layout.push(format!("gat{l}.att_neighbor"), &[k, w / k]);
        layout.push(format!("gat{l}.phi.weight"), &[input + w, w]);
        layout.push(format!("gat{l}.phi.bias"), &[w]);
        layers.push(start..layout.total());
    }
    let ranges = Ranges {
        layers,
        value_weight: layout.push("value.weight", &[w]),
        value_bias: layout.push("value.bias", &[1]),
        accept_weight: layout.push("accept.weight", &[w, 2]),
        accept_bias: layout.push("accept.bias", &[2]),
        offer_weight: layout.push("offer.weight", &[w]),
        offer_bias: layout.push("offer.bias", &[1]),
    };
    (layout, ranges)
}

#[derive(Debug, Clone)]
pub struct GnnPolicy {
    config: GatConfig,
    layout: ParamLayout,
    ranges: Ranges,
    params: Vec<f64>,
}

/// Disjoint union of a batch of observation graphs.
struct GraphBatch {
    adjacency: Adjacency,
    features: Vec<f64>,
    slots: Vec<Slot>,
}

struct Slot {
    head: usize,
    first_value: usize,
    num_values: usize,
    sizes: Vec<usize>,
}

impl GraphBatch {
    fn assemble(batch: &[&Observation]) -> Result<Self> {
        let mut nodes = 0;
        let mut edges = 0;
        for obs in batch {
            match obs {
                Observation::Graph(g) => {
                    nodes += g.num_nodes();
                    edges += 2 * g.topology.edges().len();
                }
                Observation::Flat(_) => {
                    return Err(invalid("the graph policy cannot consume flat observations"))
                }
            }
        }
        let mut adjacency = Adjacency::with_capacity(nodes, edges);
        let mut features = Vec::with_capacity(nodes * FEATURE_WIDTH);
        let mut slots = Vec::with_capacity(batch.len());
        let mut offset = 0;
        for obs in batch {
            let Observation::Graph(g) = obs else { unreachable!() };
            let t = &g.topology;
            if g.features.len() != t.num_nodes() * FEATURE_WIDTH {
                return Err(invalid("graph feature matrix has the wrong shape"));
            }
            for node in 0..t.num_nodes() {
                adjacency.push_node(t.neighbors(node), offset);
            }
            features.extend_from_slice(&g.features);
            slots.push(Slot {
                head: offset + t.head_node(),
                first_value: offset + t.first_value_node(),
                num_values: t.num_values(),
                sizes: t.objective_sizes().to_vec(),
            });
            offset += t.num_nodes();
        }
        Ok(Self {
            adjacency,
            features,
            slots,
        })
    }
}

impl GnnPolicy {
    pub fn new(config: GatConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, ranges) = build_layout(&config);
        let mut params = vec![0.0; layout.total()];
        let mut rng = substream(seed, &[0x6e6e]);
        let hidden_gain = std::f64::consts::SQRT_2;
        for (l, range) in ranges.layers.iter().enumerate() {
            let shape = config.layer_shape(l);
            let [psi_w, _, att_s, att_n, phi_w, _] = shape.section_lengths();
            let block = &mut params[range.clone()];
            let (psi, rest) = block.split_at_mut(psi_w);
            orthogonal(shape.input, shape.width, hidden_gain, &mut rng, psi);
            let (_, rest) = rest.split_at_mut(shape.width);
            let (att, rest) = rest.split_at_mut(att_s + att_n);
            let dh = shape.head_width();
            orthogonal(2 * shape.heads, dh, (1.0 / dh as f64).sqrt(), &mut rng, att);
            let (phi, _) = rest.split_at_mut(phi_w);
            orthogonal(shape.input + shape.width, shape.width, hidden_gain, &mut rng, phi);
        }
        let w = config.hidden;
        orthogonal(w, 1, 1.0, &mut rng, &mut params[ranges.value_weight.clone()]);
        orthogonal(w, 2, 0.01, &mut rng, &mut params[ranges.accept_weight.clone()]);
        orthogonal(w, 1, 0.01, &mut rng, &mut params[ranges.offer_weight.clone()]);
        Ok(Self {
            config,
            layout,
            ranges,
            params,
        })
    }

    pub fn from_params(config: GatConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (layout, ranges) = build_layout(&config);
        if params.len() != layout.total() {
            return Err(invalid(format!(
                "expected {} parameters, got {}",
                layout.total(),
                params.len()
            )));
        }
        Ok(Self {
            config,
            layout,
            ranges,
            params,
        })
    }

    pub fn config(&self) -> &GatConfig {
        &self.config
    }

    /// Parameter count as a function of the architecture alone.
    pub fn count_params(config: &GatConfig) -> usize {
        let per_layer: usize = (0..config.layers)
            .map(|l| config.layer_shape(l).num_params())
            .sum();
        per_layer + (config.hidden + 1) + (2 * config.hidden + 2) + (config.hidden + 1)
    }

    fn layer_params(&self, layer: usize) -> GatParams<'_> {
        GatParams::from_slice(
            self.config.layer_shape(layer),
            &self.params[self.ranges.layers[layer].clone()],
        )
    }

    /// Embeds all nodes; returns the last layer's output and the per-layer caches.
    fn trunk(&self, batch: &GraphBatch, keep: bool) -> Result<(Vec<f64>, Vec<GatCache>)> {
        let mut h = batch.features.clone();
        let mut caches = Vec::with_capacity(if keep { self.config.layers } else { 0 });
        for l in 0..self.config.layers {
            let last = l + 1 == self.config.layers;
            let (out, cache) = gat_forward(
                self.config.layer_shape(l),
                &self.layer_params(l),
                &batch.adjacency,
                &h,
                !last,
            );
            if !out.iter().all(|x| x.is_finite()) {
                return Err(PolicyError::Numeric {
                    layer: l,
                    stage: "attention layer",
                });
            }
            if keep {
                caches.push(cache);
            }
            h = out;
        }
        Ok((h, caches))
    }

    fn heads(&self, batch: &GraphBatch, h: &[f64]) -> Result<Vec<PolicyOutput>> {
        let w = self.config.hidden;
        let p = &self.params;
        let r = &self.ranges;
        let value_w = &p[r.value_weight.clone()];
        let accept_w = &p[r.accept_weight.clone()];
        let offer_w = &p[r.offer_weight.clone()];
        let (value_b, offer_b) = (p[r.value_bias.start], p[r.offer_bias.start]);
        let accept_b = &p[r.accept_bias.clone()];
        let outputs: Vec<PolicyOutput> = batch
            .slots
            .iter()
            .map(|slot| {
                let head = &h[slot.head * w..(slot.head + 1) * w];
                let mut accept_logits = [accept_b[0], accept_b[1]];
                for (i, x) in head.iter().enumerate() {
                    accept_logits[0] += x * accept_w[2 * i];
                    accept_logits[1] += x * accept_w[2 * i + 1];
                }
                let offer_logits = (slot.first_value..slot.first_value + slot.num_values)
                    .map(|node| offer_b + dot(&h[node * w..(node + 1) * w], offer_w))
                    .collect();
                PolicyOutput {
                    accept_logits,
                    offer_logits,
                    objective_sizes: slot.sizes.clone(),
                    state_value: value_b + dot(head, value_w),
                }
            })
            .collect();
        if outputs.iter().all(PolicyOutput::is_finite) {
            Ok(outputs)
        } else {
            Err(PolicyError::Numeric {
                layer: self.config.layers,
                stage: "output heads",
            })
        }
    }
}

impl ActorCritic for GnnPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Gnn
    }

    fn architecture(&self) -> serde_json::Value {
        serde_json::to_value(self.config).expect("plain struct")
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn observe(&self, ctx: &ObservationContext<'_>) -> Result<Observation> {
        Ok(Observation::Graph(build_graph_on(
            ctx.topology,
            ctx.utility,
            ctx.stats,
            ctx.round,
            ctx.deadline,
        )?))
    }

    fn forward(&self, batch: &[&Observation]) -> Result<Vec<PolicyOutput>> {
        let graphs = GraphBatch::assemble(batch)?;
        let (h, _) = self.trunk(&graphs, false)?;
        self.heads(&graphs, &h)
    }

    fn forward_backward(
        &self,
        batch: &[&Observation],
        loss: &mut LossFn<'_>,
        grad: &mut [f64],
    ) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(invalid("gradient buffer has the wrong length"));
        }
        let graphs = GraphBatch::assemble(batch)?;
        let (h, caches) = self.trunk(&graphs, true)?;
        let outputs = self.heads(&graphs, &h)?;
        let d_outputs = loss(&outputs)?;
        if d_outputs.len() != outputs.len() {
            return Err(invalid("loss returned the wrong number of output gradients"));
        }

        let w = self.config.hidden;
        let r = &self.ranges;
        let p = &self.params;
        let value_w = &p[r.value_weight.clone()];
        let accept_w = &p[r.accept_weight.clone()];
        let offer_w = &p[r.offer_weight.clone()];
        let mut d_h = vec![0.0; h.len()];
        let mut g_value_w = vec![0.0; w];
        let mut g_accept_w = vec![0.0; 2 * w];
        let mut g_offer_w = vec![0.0; w];
        let (mut g_value_b, mut g_accept_b, mut g_offer_b) = (0.0, [0.0; 2], 0.0);
        for (slot, d) in graphs.slots.iter().zip(&d_outputs) {
            if d.offer_logits.len() != slot.num_values {
                return Err(invalid("offer-logit gradient has the wrong length"));
            }
            let head = slot.head * w..(slot.head + 1) * w;
            axpy(d.state_value, &h[head.clone()], &mut g_value_w);
            g_value_b += d.state_value;
            for i in 0..w {
                let x = h[head.start + i];
                g_accept_w[2 * i] += x * d.accept_logits[0];
                g_accept_w[2 * i + 1] += x * d.accept_logits[1];
                d_h[head.start + i] += d.state_value * value_w[i]
                    + d.accept_logits[0] * accept_w[2 * i]
                    + d.accept_logits[1] * accept_w[2 * i + 1];
            }
            g_accept_b[0] += d.accept_logits[0];
            g_accept_b[1] += d.accept_logits[1];
            for (j, &dl) in d.offer_logits.iter().enumerate() {
                let node = slot.first_value + j;
                let rows = node * w..(node + 1) * w;
                axpy(dl, &h[rows.clone()], &mut g_offer_w);
                axpy(dl, offer_w, &mut d_h[rows]);
                g_offer_b += dl;
            }
        }
        axpy(1.0, &g_value_w, &mut grad[r.value_weight.clone()]);
        grad[r.value_bias.start] += g_value_b;
        axpy(1.0, &g_accept_w, &mut grad[r.accept_weight.clone()]);
        grad[r.accept_bias.start] += g_accept_b[0];
        grad[r.accept_bias.start + 1] += g_accept_b[1];
        axpy(1.0, &g_offer_w, &mut grad[r.offer_weight.clone()]);
        grad[r.offer_bias.start] += g_offer_b;

        for l in (0..self.config.layers).rev() {
            let shape = self.config.layer_shape(l);
            let mut grads = GatGrads::from_slice(shape, &mut grad[r.layers[l].clone()]);
            d_h = gat_backward(
                shape,
                &self.layer_params(l),
                &graphs.adjacency,
                &caches[l],
                &d_h,
                &mut grads,
            );
        }
        Ok(())
    }

    fn box_clone(&self) -> Box<dyn ActorCritic> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nego_core::{generate_problem, GeneratorConfig, GraphTopology, HistoryStats, Outcome, Side};
    use std::sync::Arc;

    fn observe(p: &GnnPolicy, problem: &nego_core::NegotiationProblem, stats: &HistoryStats, round: usize) -> Observation {
        let topology = Arc::new(GraphTopology::new(&problem.domain));
        p.observe(&ObservationContext {
            domain: &problem.domain,
            topology: &topology,
            utility: &problem.utilities[0],
            stats,
            round,
            deadline: 40,
        })
        .unwrap()
    }

    #[test]
    fn parameter_count_is_size_independent() {
        let config = GatConfig::default();
        let policy = GnnPolicy::new(config, 0).unwrap();
        assert_eq!(policy.num_params(), GnnPolicy::count_params(&config));
        assert_eq!(policy.layout().total(), policy.num_params());
        let small = GatConfig { layers: 2, hidden: 8, heads: 2 };
        let policy = GnnPolicy::new(small, 0).unwrap();
        let mut rng = substream(3, &[]);
        let gen = GeneratorConfig::default();
        for _ in 0..10 {
            let problem = generate_problem(&gen, &mut rng).unwrap();
            let obs = observe(&policy, &problem, &HistoryStats::new(&problem.domain), 0);
            let out = policy.forward(&[&obs]).unwrap();
            assert_eq!(out[0].offer_logits.len(), problem.domain.num_values());
            assert_eq!(policy.num_params(), GnnPolicy::count_params(&small));
        }
    }

    #[test]
    fn zero_offer_layer_gives_uniform_categoricals() {
        let mut policy = GnnPolicy::new(GatConfig { layers: 2, hidden: 8, heads: 2 }, 1).unwrap();
        let range = policy.ranges.offer_weight.clone();
        policy.params_mut()[range].iter_mut().for_each(|x| *x = 0.0);
        let problem = generate_problem(&GeneratorConfig::default(), &mut substream(2, &[])).unwrap();
        let mut stats = HistoryStats::new(&problem.domain);
        stats.update(&Outcome::new(vec![0; problem.domain.num_objectives()]), Side::Opponent).unwrap();
        let obs = observe(&policy, &problem, &stats, 3);
        let out = &policy.forward(&[&obs]).unwrap()[0];
        let dist = out.distribution(true).unwrap();
        for (b, &n) in problem.domain.sizes().iter().enumerate() {
            for p in dist.offer_probabilities(b) {
                assert!((p - 1.0 / n as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batching_matches_single_evaluation() {
        let policy = GnnPolicy::new(GatConfig { layers: 3, hidden: 12, heads: 3 }, 4).unwrap();
        let mut rng = substream(5, &[]);
        let gen = GeneratorConfig::default();
        let obs: Vec<Observation> = (0..4)
            .map(|i| {
                let problem = generate_problem(&gen, &mut rng).unwrap();
                observe(&policy, &problem, &HistoryStats::new(&problem.domain), i)
            })
            .collect();
        let refs: Vec<&Observation> = obs.iter().collect();
        let batched = policy.forward(&refs).unwrap();
        for (o, b) in obs.iter().zip(&batched) {
            let single = &policy.forward(&[o]).unwrap()[0];
            assert!((single.state_value - b.state_value).abs() < 1e-12);
            for (x, y) in single.offer_logits.iter().zip(&b.offer_logits) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_flat_observations_and_bad_config() {
        assert!(GatConfig { layers: 2, hidden: 10, heads: 3 }.validate().is_err());
        assert!(GnnPolicy::from_params(GatConfig::default(), vec![0.0; 3]).is_err());
        let policy = GnnPolicy::new(GatConfig { layers: 1, hidden: 4, heads: 1 }, 0).unwrap();
        let flat = Observation::Flat(crate::flat::FlatObservation::new(vec![2], vec![0.0; 9]).unwrap());
        assert!(policy.forward(&[&flat]).is_err());
    }
}
