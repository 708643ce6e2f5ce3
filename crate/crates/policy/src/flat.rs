//! Fixed-width baseline policy for a single negotiation problem.
//!
//! The observation is a plain vector: four history features per value
//! followed by deadline progress. A rectifier MLP feeds the same accept,
//! offer and value heads as the graph policy, so both networks are
//! interchangeable for training and evaluation on the domain the flat
//! network was built for.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use nego_core::rng::substream;

use crate::error::{invalid, PolicyError, Result};
use crate::init::orthogonal;
use crate::linalg::{add_column_sums, affine, gemm};
use crate::model::{
    ActorCritic, LossFn, Observation, ObservationContext, OutputGrad, PolicyKind, PolicyOutput,
};
use crate::params::ParamLayout;

pub const FEATURES_PER_VALUE: usize = 4;

pub fn flat_width(sizes: &[usize]) -> usize {
    FEATURES_PER_VALUE * sizes.iter().sum::<usize>() + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatObservation {
    sizes: Vec<usize>,
    features: Vec<f64>,
}

impl FlatObservation {
    pub fn new(sizes: Vec<usize>, features: Vec<f64>) -> Result<Self> {
        if features.len() != flat_width(&sizes) {
            return Err(invalid(format!(
                "flat observation width {} does not match {} expected for sizes {:?}",
                features.len(),
                flat_width(&sizes),
                sizes
            )));
        }
        Ok(Self { sizes, features })
    }

    pub fn objective_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlatConfig {
    pub hidden: usize,
    pub layers: usize,
}

impl Default for FlatConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            layers: 2,
        }
    }
}

impl FlatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 {
            return Err(invalid("flat policy needs at least one non-empty hidden layer"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Architecture {
    #[serde(flatten)]
    config: FlatConfig,
    sizes: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Ranges {
    /// `(weight, bias)` per hidden layer.
    layers: Vec<(Range<usize>, Range<usize>)>,
    /// Combined head: columns are reject, accept, value, then one per value.
    head_weight: Range<usize>,
    head_bias: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct FlatPolicy {
    config: FlatConfig,
    sizes: Vec<usize>,
    layout: ParamLayout,
    ranges: Ranges,
    params: Vec<f64>,
}

fn build_layout(config: &FlatConfig, sizes: &[usize]) -> (ParamLayout, Ranges) {
    let mut layout = ParamLayout::new();
    let mut input = flat_width(sizes);
    let mut layers = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let w = layout.push(format!("mlp{l}.weight"), &[input, config.hidden]);
        let b = layout.push(format!("mlp{l}.bias"), &[config.hidden]);
        layers.push((w, b));
        input = config.hidden;
    }
    let outputs = 3 + sizes.iter().sum::<usize>();
    let ranges = Ranges {
        layers,
        head_weight: layout.push("heads.weight", &[config.hidden, outputs]),
        head_bias: layout.push("heads.bias", &[outputs]),
    };
    (layout, ranges)
}

impl FlatPolicy {
    pub fn new(config: FlatConfig, sizes: Vec<usize>, seed: u64) -> Result<Self> {
        let mut policy = Self::from_params_unchecked(config, sizes)?;
        let mut rng = substream(seed, &[0xf1a7]);
        let mut input = flat_width(&policy.sizes);
        let h = policy.config.hidden;
        for (w, _) in &policy.ranges.layers {
            orthogonal(input, h, std::f64::consts::SQRT_2, &mut rng, &mut policy.params[w.clone()]);
            input = h;
        }
        // head columns get their own gains, so initialize them one by one
        let outputs = policy.num_outputs();
        let mut column = vec![0.0; h];
        let head = policy.ranges.head_weight.start;
        for c in 0..outputs {
            let gain = if c == 2 { 1.0 } else { 0.01 };
            orthogonal(h, 1, gain, &mut rng, &mut column);
            for (r, x) in column.iter().enumerate() {
                policy.params[head + r * outputs + c] = *x;
            }
        }
        Ok(policy)
    }

    fn from_params_unchecked(config: FlatConfig, sizes: Vec<usize>) -> Result<Self> {
        config.validate()?;
        if sizes.is_empty() || sizes.iter().any(|&s| s < 2) {
            return Err(invalid("flat policy needs a domain with objectives of at least two values"));
        }
        let (layout, ranges) = build_layout(&config, &sizes);
        let params = vec![0.0; layout.total()];
        Ok(Self {
            config,
            sizes,
            layout,
            ranges,
            params,
        })
    }

    pub fn from_params(config: FlatConfig, sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        let mut policy = Self::from_params_unchecked(config, sizes)?;
        if params.len() != policy.params.len() {
            return Err(invalid(format!(
                "expected {} parameters, got {}",
                policy.params.len(),
                params.len()
            )));
        }
        policy.params = params;
        Ok(policy)
    }

    /// Rebuilds a policy from the value returned by [`ActorCritic::architecture`].
    pub fn from_architecture(arch: &serde_json::Value, params: Vec<f64>) -> Result<Self> {
        let arch: Architecture = serde_json::from_value(arch.clone())
            .map_err(|e| PolicyError::Checkpoint(format!("bad flat architecture: {e}")))?;
        Self::from_params(arch.config, arch.sizes, params)
    }

    pub fn config(&self) -> &FlatConfig {
        &self.config
    }

    pub fn objective_sizes(&self) -> &[usize] {
        &self.sizes
    }

    fn num_outputs(&self) -> usize {
        3 + self.sizes.iter().sum::<usize>()
    }

    fn inputs(&self, batch: &[&Observation]) -> Result<Vec<f64>> {
        let width = flat_width(&self.sizes);
        let mut x = Vec::with_capacity(batch.len() * width);
        for obs in batch {
            match obs {
                Observation::Flat(f) if f.sizes == self.sizes => x.extend_from_slice(&f.features),
                Observation::Flat(f) => {
                    return Err(invalid(format!(
                        "flat policy built for sizes {:?} got an observation for {:?}",
                        self.sizes, f.sizes
                    )))
                }
                Observation::Graph(_) => {
                    return Err(invalid("the flat policy cannot consume graph observations"))
                }
            }
        }
        Ok(x)
    }

    /// Returns every layer's post-activation output, last entry = heads.
    fn run(&self, rows: usize, x: Vec<f64>) -> Result<Vec<Vec<f64>>> {
        let h = self.config.hidden;
        let mut acts = vec![x];
        let mut input = flat_width(&self.sizes);
        for (l, (w, b)) in self.ranges.layers.iter().enumerate() {
            let mut z = affine(rows, input, h, acts.last().unwrap(), &self.params[w.clone()], &self.params[b.clone()]);
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            if !z.iter().all(|v| v.is_finite()) {
                return Err(PolicyError::Numeric { layer: l, stage: "hidden layer" });
            }
            acts.push(z);
            input = h;
        }
        let out = affine(
            rows,
            h,
            self.num_outputs(),
            acts.last().unwrap(),
            &self.params[self.ranges.head_weight.clone()],
            &self.params[self.ranges.head_bias.clone()],
        );
        if !out.iter().all(|v| v.is_finite()) {
            return Err(PolicyError::Numeric {
                layer: self.config.layers,
                stage: "output heads",
            });
        }
        acts.push(out);
        Ok(acts)
    }

    fn split(&self, out: &[f64]) -> Vec<PolicyOutput> {
        out.chunks(self.num_outputs())
            .map(|row| PolicyOutput {
                accept_logits: [row[0], row[1]],
                offer_logits: row[3..].to_vec(),
                objective_sizes: self.sizes.clone(),
                state_value: row[2],
            })
            .collect()
    }
}

impl ActorCritic for FlatPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Flat
    }

    fn architecture(&self) -> serde_json::Value {
        serde_json::to_value(Architecture {
            config: self.config.clone(),
            sizes: self.sizes.clone(),
        })
        .expect("plain struct")
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
        if ctx.domain.sizes() != self.sizes.as_slice() {
            return Err(invalid(format!(
                "flat policy built for sizes {:?} cannot observe a domain with sizes {:?}",
                self.sizes,
                ctx.domain.sizes()
            )));
        }
        if ctx.round > ctx.deadline || ctx.deadline == 0 {
            return Err(invalid("round lies past the deadline"));
        }
        let n = ctx.stats.num_values();
        let mut features = Vec::with_capacity(flat_width(&self.sizes));
        for i in 0..n {
            features.extend_from_slice(&ctx.stats.value_features(i));
        }
        features.push(ctx.round as f64 / ctx.deadline as f64);
        Ok(Observation::Flat(FlatObservation::new(self.sizes.clone(), features)?))
    }

    fn forward(&self, batch: &[&Observation]) -> Result<Vec<PolicyOutput>> {
        let x = self.inputs(batch)?;
        let mut acts = self.run(batch.len(), x)?;
        Ok(self.split(&acts.pop().unwrap()))
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
        let rows = batch.len();
        let x = self.inputs(batch)?;
        let acts = self.run(rows, x)?;
        let outputs = self.split(acts.last().unwrap());
        let d_outputs: Vec<OutputGrad> = loss(&outputs)?;
        if d_outputs.len() != rows {
            return Err(invalid("loss returned the wrong number of output gradients"));
        }
        let o = self.num_outputs();
        let mut d = Vec::with_capacity(rows * o);
        for g in &d_outputs {
            if g.offer_logits.len() != o - 3 {
                return Err(invalid("offer-logit gradient has the wrong length"));
            }
            d.extend_from_slice(&g.accept_logits);
            d.push(g.state_value);
            d.extend_from_slice(&g.offer_logits);
        }

        let h = self.config.hidden;
        let r = &self.ranges;
        let mut fan_out = o;
        let mut weight = r.head_weight.clone();
        let mut bias = r.head_bias.clone();
        // walk back from the heads; acts[l] is the input of layer l
        for l in (0..=self.config.layers).rev() {
            let fan_in = if l == 0 { flat_width(&self.sizes) } else { h };
            let input = &acts[l];
            gemm(fan_in, rows, fan_out, input, true, &d, false, 1.0, &mut grad[weight.clone()]);
            add_column_sums(rows, fan_out, &d, &mut grad[bias.clone()]);
            if l == 0 {
                break;
            }
            let mut d_in = vec![0.0; rows * fan_in];
            gemm(rows, fan_out, fan_in, &d, false, &self.params[weight.clone()], true, 0.0, &mut d_in);
            // rectifier mask of layer l-1's output
            for (g, a) in d_in.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            d = d_in;
            fan_out = h;
            (weight, bias) = r.layers[l - 1].clone();
        }
        Ok(())
    }

    fn box_clone(&self) -> Box<dyn ActorCritic> {
        Box::new(self.clone())
    }
}
