//! Composite negotiation action distribution.
//!
//! An action is a binary accept decision plus one categorical choice per
//! objective. The log-probability of a sampled action sums the accept term
//! and, depending on [`LogProbMode`], every offer term. On the first move of
//! a session accepting is illegal; the accept component is then masked to a
//! certain reject and contributes neither log-probability nor entropy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use nego_core::{Action, Outcome};

use crate::error::{invalid, Result};

/// How offer components enter the log-probability when the sampled action
/// is an accept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogProbMode {
    /// Offer terms are always included.
    #[default]
    Composite,
    /// Offer terms are dropped whenever the action accepts.
    DropOfferOnAccept,
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

fn categorical_entropy(log_probs: &[f64]) -> f64 {
    -log_probs
        .iter()
        .map(|&lp| if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() * lp })
        .sum::<f64>()
}

fn sample_index(log_probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver of mass above the last cumulative sum
    log_probs
        .iter()
        .rposition(|lp| *lp > f64::NEG_INFINITY)
        .unwrap_or(log_probs.len() - 1)
}

fn argmax(log_probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, lp) in log_probs.iter().enumerate() {
        if *lp > log_probs[best] {
            best = i;
        }
    }
    best
}

/// An action drawn from the policy, with every component kept so its
/// log-probability can be re-evaluated later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledAction {
    pub accept: bool,
    pub offer: Outcome,
    pub log_prob: f64,
}

impl SampledAction {
    pub fn to_action(&self) -> Action {
        if self.accept {
            Action::Accept
        } else {
            Action::Offer(self.offer.clone())
        }
    }
}

/// Gradient of a scalar with respect to the distribution's logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGrad {
    pub accept: [f64; 2],
    pub offer: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    /// `[reject, accept]`.
    accept_log_probs: [f64; 2],
    accept_allowed: bool,
    offer_log_probs: Vec<Vec<f64>>,
}

impl ActionDistribution {
    /// `offer_logits` lists one logit per value, objective by objective.
    pub fn from_logits(
        accept_logits: [f64; 2],
        offer_logits: &[f64],
        sizes: &[usize],
        accept_allowed: bool,
    ) -> Result<Self> {
        if sizes.iter().sum::<usize>() != offer_logits.len() {
            return Err(invalid("offer logits do not match the objective sizes"));
        }
        let accept_log_probs = if accept_allowed {
            let lp = log_softmax(&accept_logits);
            [lp[0], lp[1]]
        } else {
            [0.0, f64::NEG_INFINITY]
        };
        let mut offer_log_probs = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &n in sizes {
            offer_log_probs.push(log_softmax(&offer_logits[start..start + n]));
            start += n;
        }
        Ok(Self {
            accept_log_probs,
            accept_allowed,
            offer_log_probs,
        })
    }

    pub fn accept_allowed(&self) -> bool {
        self.accept_allowed
    }

    pub fn accept_probability(&self) -> f64 {
        self.accept_log_probs[1].exp()
    }

    pub fn num_objectives(&self) -> usize {
        self.offer_log_probs.len()
    }

    pub fn offer_probabilities(&self, objective: usize) -> Vec<f64> {
        self.offer_log_probs[objective].iter().map(|lp| lp.exp()).collect()
    }

    pub fn offer_log_probs(&self, objective: usize) -> &[f64] {
        &self.offer_log_probs[objective]
    }

    /// Checks the normalization of every component within `tol`.
    pub fn is_normalized(&self, tol: f64) -> bool {
        let sums_to_one = |lps: &[f64]| (lps.iter().map(|lp| lp.exp()).sum::<f64>() - 1.0).abs() <= tol;
        sums_to_one(&self.accept_log_probs) && self.offer_log_probs.iter().all(|c| sums_to_one(c))
    }

    pub fn sample(&self, rng: &mut impl Rng, mode: LogProbMode) -> SampledAction {
        let accept = self.accept_allowed && sample_index(&self.accept_log_probs, rng) == 1;
        let offer = Outcome::new(
            self.offer_log_probs
                .iter()
                .map(|lps| sample_index(lps, rng))
                .collect(),
        );
        self.finish(accept, offer, mode)
    }

    /// Most likely value of every component.
    pub fn greedy(&self, mode: LogProbMode) -> SampledAction {
        let accept = self.accept_allowed && self.accept_log_probs[1] > self.accept_log_probs[0];
        let offer = Outcome::new(self.offer_log_probs.iter().map(|lps| argmax(lps)).collect());
        self.finish(accept, offer, mode)
    }

    fn finish(&self, accept: bool, offer: Outcome, mode: LogProbMode) -> SampledAction {
        let log_prob = self.log_prob_unchecked(accept, &offer, mode);
        SampledAction {
            accept,
            offer,
            log_prob,
        }
    }

    fn includes_offer(accept: bool, mode: LogProbMode) -> bool {
        !(accept && mode == LogProbMode::DropOfferOnAccept)
    }

    fn log_prob_unchecked(&self, accept: bool, offer: &Outcome, mode: LogProbMode) -> f64 {
        let mut lp = self.accept_log_probs[usize::from(accept)];
        if Self::includes_offer(accept, mode) {
            lp += offer
                .choices()
                .iter()
                .zip(&self.offer_log_probs)
                .map(|(&v, lps)| lps[v])
                .sum::<f64>();
        }
        lp
    }

    fn check_action(&self, accept: bool, offer: &Outcome) -> Result<()> {
        if accept && !self.accept_allowed {
            return Err(invalid("accept is not available on the first move"));
        }
        if offer.choices().len() != self.offer_log_probs.len() {
            return Err(invalid("action has the wrong number of objectives"));
        }
        if offer
            .choices()
            .iter()
            .zip(&self.offer_log_probs)
            .any(|(&v, lps)| v >= lps.len())
        {
            return Err(invalid("offer value index out of range"));
        }
        Ok(())
    }

    pub fn log_prob(&self, action: &SampledAction, mode: LogProbMode) -> Result<f64> {
        self.check_action(action.accept, &action.offer)?;
        Ok(self.log_prob_unchecked(action.accept, &action.offer, mode))
    }

    /// Sum of the component entropies.
    pub fn entropy(&self) -> f64 {
        let accept = if self.accept_allowed {
            categorical_entropy(&self.accept_log_probs)
        } else {
            0.0
        };
        accept + self.offer_log_probs.iter().map(|c| categorical_entropy(c)).sum::<f64>()
    }

    /// d log π(action) / d logits.
    pub fn grad_log_prob(&self, action: &SampledAction, mode: LogProbMode) -> Result<LogitGrad> {
        self.check_action(action.accept, &action.offer)?;
        let mut accept = [0.0; 2];
        if self.accept_allowed {
            let chosen = usize::from(action.accept);
            for (i, g) in accept.iter_mut().enumerate() {
                *g = f64::from(u8::from(i == chosen)) - self.accept_log_probs[i].exp();
            }
        }
        let mut offer = Vec::with_capacity(self.offer_log_probs.iter().map(Vec::len).sum());
        let include = Self::includes_offer(action.accept, mode);
        for (&v, lps) in action.offer.choices().iter().zip(&self.offer_log_probs) {
            for (i, lp) in lps.iter().enumerate() {
                offer.push(if include {
                    f64::from(u8::from(i == v)) - lp.exp()
                } else {
                    0.0
                });
            }
        }
        Ok(LogitGrad { accept, offer })
    }

    /// d entropy / d logits.
    pub fn grad_entropy(&self) -> LogitGrad {
        fn component(lps: &[f64], out: &mut Vec<f64>) {
            let h = categorical_entropy(lps);
            out.extend(lps.iter().map(|&lp| -lp.exp() * (lp + h)));
        }
        let mut accept = [0.0; 2];
        if self.accept_allowed {
            let mut tmp = Vec::with_capacity(2);
            component(&self.accept_log_probs, &mut tmp);
            accept = [tmp[0], tmp[1]];
        }
        let mut offer = Vec::new();
        for lps in &self.offer_log_probs {
            component(lps, &mut offer);
        }
        LogitGrad { accept, offer }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nego_core::rng::substream;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn uniform_23(accept_logits: [f64; 2], allowed: bool) -> ActionDistribution {
        ActionDistribution::from_logits(accept_logits, &[0.0; 5], &[2, 3], allowed).unwrap()
    }

    #[test]
    fn uniform_offer_log_prob() {
        // reject with certainty: accept logits far apart
        let d = uniform_23([50.0, -50.0], true);
        let a = SampledAction {
            accept: false,
            offer: Outcome::new(vec![1, 2]),
            log_prob: 0.0,
        };
        let lp = d.log_prob(&a, LogProbMode::Composite).unwrap();
        assert!((lp + 6f64.ln()).abs() < 1e-12, "{lp}");
    }

    #[test]
    fn certain_accept() {
        let d = uniform_23([-800.0, 800.0], true);
        let mut rng = substream(0, &[]);
        let a = d.sample(&mut rng, LogProbMode::Composite);
        assert!(a.accept);
        assert_eq!(a.to_action(), Action::Accept);
        assert!((a.log_prob + 6f64.ln()).abs() < 1e-12);
        let dropped = d.sample(&mut rng, LogProbMode::DropOfferOnAccept);
        assert_eq!(dropped.log_prob, 0.0);
    }

    #[test]
    fn first_move_never_accepts() {
        let d = uniform_23([-800.0, 800.0], false);
        let mut rng = substream(1, &[]);
        for _ in 0..200 {
            let a = d.sample(&mut rng, LogProbMode::Composite);
            assert!(!a.accept);
            assert!((a.log_prob + 6f64.ln()).abs() < 1e-12);
        }
        assert!(!d.greedy(LogProbMode::Composite).accept);
        let illegal = SampledAction {
            accept: true,
            offer: Outcome::new(vec![0, 0]),
            log_prob: 0.0,
        };
        assert!(d.log_prob(&illegal, LogProbMode::Composite).is_err());
        assert!((d.entropy() - (LN2 + 3f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn entropy_of_components() {
        let d = uniform_23([0.0, 0.0], true);
        assert!((d.entropy() - (LN2 + LN2 + 3f64.ln())).abs() < 1e-12);
        let det = ActionDistribution::from_logits([900.0, -900.0], &[900.0, -900.0], &[2], true).unwrap();
        assert!(det.entropy().abs() < 1e-12);
    }

    #[test]
    fn rejects_malformed_actions() {
        let d = uniform_23([0.0, 0.0], true);
        let bad = SampledAction {
            accept: false,
            offer: Outcome::new(vec![0, 3]),
            log_prob: 0.0,
        };
        assert!(d.log_prob(&bad, LogProbMode::Composite).is_err());
        let short = SampledAction {
            accept: false,
            offer: Outcome::new(vec![0]),
            log_prob: 0.0,
        };
        assert!(d.log_prob(&short, LogProbMode::Composite).is_err());
        assert!(ActionDistribution::from_logits([0.0; 2], &[0.0; 4], &[2, 3], true).is_err());
    }

    fn numeric_grad(f: impl Fn(&[f64; 2], &[f64]) -> f64, acc: [f64; 2], off: &[f64]) -> ([f64; 2], Vec<f64>) {
        let h = 1e-6;
        let mut ga = [0.0; 2];
        for i in 0..2 {
            let (mut p, mut m) = (acc, acc);
            p[i] += h;
            m[i] -= h;
            ga[i] = (f(&p, off) - f(&m, off)) / (2.0 * h);
        }
        let mut go = vec![0.0; off.len()];
        for i in 0..off.len() {
            let (mut p, mut m) = (off.to_vec(), off.to_vec());
            p[i] += h;
            m[i] -= h;
            go[i] = (f(&acc, &p) - f(&acc, &m)) / (2.0 * h);
        }
        (ga, go)
    }

    proptest! {
        #[test]
        fn sample_log_prob_is_self_consistent(
            logits in proptest::collection::vec(-4.0f64..4.0, 7),
            seed in any::<u64>(),
            allowed in any::<bool>(),
        ) {
            let d = ActionDistribution::from_logits([logits[0], logits[1]], &logits[2..], &[2, 3], allowed).unwrap();
            prop_assert!(d.is_normalized(1e-12));
            let mut rng = substream(seed, &[]);
            for mode in [LogProbMode::Composite, LogProbMode::DropOfferOnAccept] {
                let a = d.sample(&mut rng, mode);
                prop_assert_eq!(d.log_prob(&a, mode).unwrap(), a.log_prob);
            }
        }

        #[test]
        fn analytic_logit_gradients(
            logits in proptest::collection::vec(-3.0f64..3.0, 7),
            accept in any::<bool>(),
            v0 in 0usize..2,
            v1 in 0usize..5,
        ) {
            let sizes = [2, 5];
            let acc = [logits[0], logits[1]];
            let mut off = logits[2..].to_vec();
            off.extend([0.3, -0.7]);
            let action = SampledAction { accept, offer: Outcome::new(vec![v0, v1]), log_prob: 0.0 };
            for mode in [LogProbMode::Composite, LogProbMode::DropOfferOnAccept] {
                let d = ActionDistribution::from_logits(acc, &off, &sizes, true).unwrap();
                let g = d.grad_log_prob(&action, mode).unwrap();
                let (na, no) = numeric_grad(|a, o| {
                    ActionDistribution::from_logits(*a, o, &sizes, true).unwrap().log_prob(&action, mode).unwrap()
                }, acc, &off);
                for i in 0..2 { prop_assert!((g.accept[i] - na[i]).abs() < 1e-7); }
                for i in 0..off.len() { prop_assert!((g.offer[i] - no[i]).abs() < 1e-7); }
            }
            let d = ActionDistribution::from_logits(acc, &off, &sizes, true).unwrap();
            let g = d.grad_entropy();
            let (na, no) = numeric_grad(|a, o| ActionDistribution::from_logits(*a, o, &sizes, true).unwrap().entropy(), acc, &off);
            for i in 0..2 { prop_assert!((g.accept[i] - na[i]).abs() < 1e-7); }
            for i in 0..off.len() { prop_assert!((g.offer[i] - no[i]).abs() < 1e-7); }
        }
    }
}
