//! Negotiation domains, outcomes and additive utility functions.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Tolerance used by every weight-normalization check.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

/// Default limit on the number of outcomes [`enumerate_outcomes`] will produce.
pub const DEFAULT_ENUMERATION_CAP: usize = 10_000;

/// The set of objectives and the size of each objective's value set.
///
/// Values are identified by their index `0..size`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Domain {
    sizes: Vec<usize>,
}

impl Domain {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(invalid("a domain needs at least one objective"));
        }
        if let Some((b, &n)) = sizes.iter().enumerate().find(|(_, &n)| n < 2) {
            return Err(invalid(format!(
                "objective {b} has {n} values; every objective needs at least 2"
            )));
        }
        Ok(Self { sizes })
    }

    pub fn num_objectives(&self) -> usize {
        self.sizes.len()
    }

    /// Value-set size per objective.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Total number of values across all objectives.
    pub fn num_values(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn max_values(&self) -> usize {
        self.sizes.iter().copied().max().unwrap_or(0)
    }

    /// |Ω|, saturating at `u128::MAX`.
    pub fn outcome_space_size(&self) -> u128 {
        self.sizes
            .iter()
            .try_fold(1u128, |acc, &n| acc.checked_mul(n as u128))
            .unwrap_or(u128::MAX)
    }

    pub fn validate_outcome(&self, outcome: &Outcome) -> Result<()> {
        let choices = outcome.choices();
        if choices.len() != self.sizes.len() {
            return Err(invalid(format!(
                "outcome has {} choices but the domain has {} objectives",
                choices.len(),
                self.sizes.len()
            )));
        }
        for (b, (&v, &n)) in choices.iter().zip(&self.sizes).enumerate() {
            if v >= n {
                return Err(invalid(format!(
                    "value index {v} out of range for objective {b} with {n} values"
                )));
            }
        }
        Ok(())
    }
}

/// One value index per objective.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Outcome(Vec<usize>);

impl Outcome {
    pub fn new(choices: Vec<usize>) -> Self {
        Self(choices)
    }

    pub fn choices(&self) -> &[usize] {
        &self.0
    }

    pub fn into_choices(self) -> Vec<usize> {
        self.0
    }
}

impl From<Vec<usize>> for Outcome {
    fn from(choices: Vec<usize>) -> Self {
        Self(choices)
    }
}

/// Additive preference model: `u(ω) = Σ_b w(b) · w_b(v_b)`.
///
/// Objective weights sum to one; within each objective the best value has
/// weight one and the worst has weight zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityFunction {
    objective_weights: Vec<f64>,
    value_weights: Vec<Vec<f64>>,
}

impl UtilityFunction {
    pub fn new(objective_weights: Vec<f64>, value_weights: Vec<Vec<f64>>) -> Result<Self> {
        if objective_weights.is_empty() || objective_weights.len() != value_weights.len() {
            return Err(invalid(format!(
                "{} objective weights for {} value-weight tables",
                objective_weights.len(),
                value_weights.len()
            )));
        }
        let in_unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        if !objective_weights.iter().all(|&w| in_unit(w)) {
            return Err(invalid("objective weights must lie in [0, 1]"));
        }
        let total: f64 = objective_weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(invalid(format!("objective weights sum to {total}, not 1")));
        }
        for (b, weights) in value_weights.iter().enumerate() {
            if weights.len() < 2 || !weights.iter().all(|&w| in_unit(w)) {
                return Err(invalid(format!(
                    "objective {b}: value weights must be at least two numbers in [0, 1]"
                )));
            }
            let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = weights.iter().copied().fold(f64::INFINITY, f64::min);
            if (max - 1.0).abs() > WEIGHT_TOLERANCE || min.abs() > WEIGHT_TOLERANCE {
                return Err(invalid(format!(
                    "objective {b}: value weights span [{min}, {max}], expected [0, 1]"
                )));
            }
        }
        Ok(Self {
            objective_weights,
            value_weights,
        })
    }

    pub fn objective_weights(&self) -> &[f64] {
        &self.objective_weights
    }

    pub fn value_weights(&self) -> &[Vec<f64>] {
        &self.value_weights
    }

    pub fn objective_weight(&self, objective: usize) -> f64 {
        self.objective_weights[objective]
    }

    pub fn value_weight(&self, objective: usize, value: usize) -> f64 {
        self.value_weights[objective][value]
    }

    /// Checks that this function's tables have the shape of `domain`.
    pub fn check_domain(&self, domain: &Domain) -> Result<()> {
        let shape_matches = self.value_weights.len() == domain.num_objectives()
            && self
                .value_weights
                .iter()
                .zip(domain.sizes())
                .all(|(w, &n)| w.len() == n);
        if shape_matches {
            Ok(())
        } else {
            Err(invalid("utility function shape does not match the domain"))
        }
    }

    pub fn utility(&self, domain: &Domain, outcome: &Outcome) -> Result<f64> {
        self.check_domain(domain)?;
        domain.validate_outcome(outcome)?;
        Ok(self.utility_unchecked(outcome))
    }

    /// Evaluates the utility without validating shapes.
    ///
    /// Panics if `outcome` indexes outside the tables.
    pub fn utility_unchecked(&self, outcome: &Outcome) -> f64 {
        outcome
            .choices()
            .iter()
            .enumerate()
            .map(|(b, &v)| self.objective_weights[b] * self.value_weights[b][v])
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }
}

/// Additive utility of `outcome` under `u_fn`.
pub fn utility(u_fn: &UtilityFunction, domain: &Domain, outcome: &Outcome) -> Result<f64> {
    u_fn.utility(domain, outcome)
}

/// All outcomes of `domain` in lexicographic index order, capped at
/// [`DEFAULT_ENUMERATION_CAP`].
pub fn enumerate_outcomes(domain: &Domain) -> Result<Vec<Outcome>> {
    enumerate_outcomes_capped(domain, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_outcomes_capped(domain: &Domain, cap: usize) -> Result<Vec<Outcome>> {
    let size = domain.outcome_space_size();
    if size > cap as u128 {
        return Err(Error::Capacity { size, cap });
    }
    let sizes = domain.sizes();
    let mut out = Vec::with_capacity(size as usize);
    let mut current = vec![0usize; sizes.len()];
    loop {
        out.push(Outcome(current.clone()));
        // odometer increment, last objective fastest
        let mut b = sizes.len();
        loop {
            if b == 0 {
                return Ok(out);
            }
            b -= 1;
            current[b] += 1;
            if current[b] < sizes[b] {
                break;
            }
            current[b] = 0;
        }
    }
}
