//! Clipped-surrogate policy optimization.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use nego_core::rng::substream;
use nego_policy::{ActorCritic, LogProbMode, Observation, OutputGrad, PolicyError, PolicyOutput};

use crate::error::{Result, RlError};
use crate::rollout::{tags, TrajectoryBatch};

/// Hyperparameters consumed by [`ppo_update`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoSettings {
    pub update_epochs: usize,
    pub num_minibatches: usize,
    pub clip_epsilon: f64,
    pub clip_vloss: bool,
    pub norm_adv: bool,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub log_prob_mode: LogProbMode,
}

/// First and second moment estimates with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let step_size = lr / c1;
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= step_size * self.m[i] / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Scales `grad` so its global norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / (norm + 1e-6);
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// Per-sample data of one minibatch.
pub struct Minibatch<'a> {
    pub observations: Vec<&'a Observation>,
    pub actions: Vec<&'a nego_policy::SampledAction>,
    pub accept_allowed: Vec<bool>,
    pub old_log_probs: Vec<f64>,
    pub old_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl<'a> Minibatch<'a> {
    pub fn gather(batch: &'a TrajectoryBatch, indices: &[usize]) -> Self {
        let t = &batch.transitions;
        Self {
            observations: indices.iter().map(|&i| &t[i].observation).collect(),
            actions: indices.iter().map(|&i| &t[i].action).collect(),
            accept_allowed: indices.iter().map(|&i| t[i].accept_allowed).collect(),
            old_log_probs: indices.iter().map(|&i| t[i].log_prob).collect(),
            old_values: indices.iter().map(|&i| t[i].value).collect(),
            advantages: indices.iter().map(|&i| batch.advantages[i]).collect(),
            returns: indices.iter().map(|&i| batch.returns[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Minibatch loss terms (means over samples).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
}

impl LossTerms {
    pub fn total(&self, s: &PpoSettings) -> f64 {
        self.policy_loss - s.entropy_coef * self.entropy + s.value_coef * self.value_loss
    }
}

fn normalized(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    // unbiased estimate; a single sample has no spread to normalize
    let var = if adv.len() > 1 {
        adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    adv.iter().map(|a| (a - mean) / (var.sqrt() + 1e-8)).collect()
}

/// Loss and its gradient with respect to each network output.
pub fn loss_and_output_grads(
    mb: &Minibatch<'_>,
    outputs: &[PolicyOutput],
    s: &PpoSettings,
) -> nego_policy::Result<(LossTerms, Vec<OutputGrad>)> {
    let n = mb.len() as f64;
    let advantages = if s.norm_adv {
        normalized(&mb.advantages)
    } else {
        mb.advantages.clone()
    };
    let mut terms = LossTerms::default();
    let mut grads = Vec::with_capacity(mb.len());
    for (i, out) in outputs.iter().enumerate() {
        let dist = out.distribution(mb.accept_allowed[i])?;
        let new_lp = dist.log_prob(mb.actions[i], s.log_prob_mode)?;
        let log_ratio = new_lp - mb.old_log_probs[i];
        let ratio = log_ratio.exp();
        let a = advantages[i];
        let unclipped = -a * ratio;
        let clipped = -a * ratio.clamp(1.0 - s.clip_epsilon, 1.0 + s.clip_epsilon);
        terms.policy_loss += unclipped.max(clipped) / n;
        terms.approx_kl += ((ratio - 1.0) - log_ratio) / n;
        if (ratio - 1.0).abs() > s.clip_epsilon {
            terms.clip_frac += 1.0 / n;
        }
        let d_log_prob = if unclipped >= clipped { -a * ratio / n } else { 0.0 };

        let v = out.state_value;
        let r = mb.returns[i];
        let d_value = if s.clip_vloss {
            let old = mb.old_values[i];
            let delta = (v - old).clamp(-s.clip_epsilon, s.clip_epsilon);
            let v_clipped = old + delta;
            let (lu, lc) = ((v - r).powi(2), (v_clipped - r).powi(2));
            terms.value_loss += 0.5 * lu.max(lc) / n;
            if lu >= lc {
                (v - r) / n
            } else if (v - old).abs() < s.clip_epsilon {
                (v_clipped - r) / n
            } else {
                0.0
            }
        } else {
            terms.value_loss += 0.5 * (v - r).powi(2) / n;
            (v - r) / n
        };

        let entropy = dist.entropy();
        terms.entropy += entropy / n;

        let lp_grad = dist.grad_log_prob(mb.actions[i], s.log_prob_mode)?;
        let ent_grad = dist.grad_entropy();
        let e = -s.entropy_coef / n;
        grads.push(OutputGrad {
            accept_logits: [
                d_log_prob * lp_grad.accept[0] + e * ent_grad.accept[0],
                d_log_prob * lp_grad.accept[1] + e * ent_grad.accept[1],
            ],
            offer_logits: lp_grad
                .offer
                .iter()
                .zip(&ent_grad.offer)
                .map(|(l, h)| d_log_prob * l + e * h)
                .collect(),
            state_value: s.value_coef * d_value,
        });
    }
    Ok((terms, grads))
}

/// Loss terms plus the parameter gradient of the total loss.
pub fn minibatch_gradient(
    policy: &dyn ActorCritic,
    mb: &Minibatch<'_>,
    s: &PpoSettings,
    grad: &mut [f64],
) -> nego_policy::Result<LossTerms> {
    let mut terms = LossTerms::default();
    policy.forward_backward(
        &mb.observations,
        &mut |outputs: &[PolicyOutput]| {
            let (t, g) = loss_and_output_grads(mb, outputs, s)?;
            terms = t;
            Ok(g)
        },
        grad,
    )?;
    Ok(terms)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateMetrics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    pub gradient_steps: usize,
}

/// Runs all epochs of minibatch updates on one batch. On a non-finite loss
/// or gradient the parameters and optimizer state are restored and an
/// error is returned.
pub fn ppo_update(
    policy: &mut dyn ActorCritic,
    adam: &mut Adam,
    batch: &TrajectoryBatch,
    s: &PpoSettings,
    lr: f64,
    shuffle_seed: u64,
) -> Result<UpdateMetrics> {
    if batch.advantages.len() != batch.len() || batch.is_empty() {
        return Err(RlError::Run("batch has no computed advantages".into()));
    }
    if s.num_minibatches == 0 || s.num_minibatches > batch.len() {
        return Err(RlError::Run(format!(
            "cannot split {} samples into {} minibatches",
            batch.len(),
            s.num_minibatches
        )));
    }
    let saved_params = policy.params().to_vec();
    let saved_adam = adam.clone();
    let restore = |policy: &mut dyn ActorCritic, adam: &mut Adam, what: String| {
        policy.params_mut().copy_from_slice(&saved_params);
        *adam = saved_adam.clone();
        RlError::NonFinite(what)
    };

    let n = batch.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; policy.num_params()];
    let mut metrics = UpdateMetrics::default();
    for epoch in 0..s.update_epochs {
        let mut rng = substream(shuffle_seed, &[tags::SHUFFLE, epoch as u64]);
        indices.shuffle(&mut rng);
        for k in 0..s.num_minibatches {
            // near-equal chunks so that any overshoot is spread evenly
            let chunk = &indices[k * n / s.num_minibatches..(k + 1) * n / s.num_minibatches];
            let mb = Minibatch::gather(batch, chunk);
            grad.iter_mut().for_each(|g| *g = 0.0);
            let terms = match minibatch_gradient(&*policy, &mb, s, &mut grad) {
                Ok(t) => t,
                Err(PolicyError::Numeric { layer, stage }) => {
                    return Err(restore(policy, adam, format!("{stage} output at layer {layer}")))
                }
                Err(e) => return Err(e.into()),
            };
            if !terms.total(s).is_finite() {
                return Err(restore(policy, adam, "loss".into()));
            }
            let norm = clip_grad_norm(&mut grad, s.max_grad_norm);
            if !norm.is_finite() {
                return Err(restore(policy, adam, "gradient".into()));
            }
            adam.apply(policy.params_mut(), &grad, lr);
            metrics.policy_loss += terms.policy_loss;
            metrics.value_loss += terms.value_loss;
            metrics.entropy += terms.entropy;
            metrics.approx_kl += terms.approx_kl;
            metrics.clip_frac += terms.clip_frac;
            metrics.gradient_steps += 1;
        }
    }
    if !policy.params().iter().all(|p| p.is_finite()) {
        return Err(restore(policy, adam, "parameters".into()));
    }
    let steps = metrics.gradient_steps as f64;
    metrics.policy_loss /= steps;
    metrics.value_loss /= steps;
    metrics.entropy /= steps;
    metrics.approx_kl /= steps;
    metrics.clip_frac /= steps;
    Ok(metrics)
}
