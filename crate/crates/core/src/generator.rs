//! Seeded random negotiation problems.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Domain, UtilityFunction};
use crate::error::{invalid, Error, Result};
use crate::problem::NegotiationProblem;
use crate::rng::{substream, StreamRng};

/// Rejection-sampling budget for [`generate_domain`].
pub const MAX_DOMAIN_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub min_outcomes: u64,
    pub max_outcomes: u64,
    pub min_objectives: usize,
    pub max_objectives: usize,
    pub min_values: usize,
    pub max_values: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            min_outcomes: 200,
            max_outcomes: 1000,
            min_objectives: 3,
            max_objectives: 7,
            min_values: 2,
            max_values: 12,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_objectives < 1 || self.min_objectives > self.max_objectives {
            return Err(invalid(format!(
                "objective range [{}, {}] is empty",
                self.min_objectives, self.max_objectives
            )));
        }
        if self.min_outcomes < 2 || self.min_outcomes > self.max_outcomes {
            return Err(invalid(format!(
                "outcome range [{}, {}] must satisfy 1 < min <= max",
                self.min_outcomes, self.max_outcomes
            )));
        }
        if self.min_values < 2 || self.min_values > self.max_values {
            return Err(invalid(format!(
                "value-set range [{}, {}] must satisfy 2 <= min <= max",
                self.min_values, self.max_values
            )));
        }
        Ok(())
    }
}

/// Samples the number of objectives and each value-set size uniformly,
/// rejecting until |Ω| lands inside the configured band.
pub fn generate_domain(config: &GeneratorConfig, rng: &mut impl Rng) -> Result<Domain> {
    config.validate()?;
    for _ in 0..MAX_DOMAIN_ATTEMPTS {
        let m = rng.random_range(config.min_objectives..=config.max_objectives);
        let sizes: Vec<usize> = (0..m)
            .map(|_| rng.random_range(config.min_values..=config.max_values))
            .collect();
        let size: u128 = sizes.iter().map(|&n| n as u128).product();
        if (config.min_outcomes as u128..=config.max_outcomes as u128).contains(&size) {
            return Domain::new(sizes);
        }
    }
    Err(Error::Generation(format!(
        "no domain with {}..={} outcomes found in {MAX_DOMAIN_ATTEMPTS} attempts",
        config.min_outcomes, config.max_outcomes
    )))
}

/// Random additive utility function satisfying the normalization
/// constraints exactly: objective weights sum to one, each objective's
/// value weights are rescaled to span exactly `[0, 1]`.
pub fn generate_utility(domain: &Domain, rng: &mut impl Rng) -> Result<UtilityFunction> {
    // (0, 1]
    let raw: Vec<f64> = (0..domain.num_objectives())
        .map(|_| 1.0 - rng.random::<f64>())
        .collect();
    let total: f64 = raw.iter().sum();
    let objective_weights = raw.iter().map(|w| w / total).collect();

    let value_weights = domain
        .sizes()
        .iter()
        .map(|&n| loop {
            let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
            let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max > min {
                break raw.iter().map(|x| (x - min) / (max - min)).collect();
            }
        })
        .collect();
    UtilityFunction::new(objective_weights, value_weights)
}

/// A domain plus one utility function per seat, each agent's preferences
/// drawn from its own substream.
pub fn generate_problem(config: &GeneratorConfig, rng: &mut impl Rng) -> Result<NegotiationProblem> {
    let domain = generate_domain(config, rng)?;
    let key = rng.next_u64();
    let mut first: StreamRng = substream(key, &[0]);
    let mut second: StreamRng = substream(key, &[1]);
    let utilities = [
        generate_utility(&domain, &mut first)?,
        generate_utility(&domain, &mut second)?,
    ];
    NegotiationProblem::new(domain, utilities)
}
