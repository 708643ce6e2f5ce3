//! A negotiation problem and its on-disk text format.
//!
//! The format is a JSON document tagged `"format": 1` with a shared domain
//! block and one utility block per agent:
//!
//! ```text
//! {
//!   "format": 1,
//!   "domain": { "sizes": [3, 4] },
//!   "agents": [
//!     { "objectives": [ { "size": 3, "weight": ..., "value_weights": [...] }, ... ] },
//!     { "objectives": [ ... ] }
//!   ]
//! }
//! ```
//!
//! Reals are always written with 17 significant digits, so a
//! write → read → write cycle reproduces the original bytes exactly.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::domain::{Domain, Outcome, UtilityFunction};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NegotiationProblem {
    pub domain: Domain,
    /// Private preferences, indexed by seat.
    pub utilities: [UtilityFunction; 2],
}

impl NegotiationProblem {
    pub fn new(domain: Domain, utilities: [UtilityFunction; 2]) -> Result<Self> {
        for u in &utilities {
            u.check_domain(&domain)?;
        }
        Ok(Self { domain, utilities })
    }

    pub fn utility_refs(&self) -> [&UtilityFunction; 2] {
        [&self.utilities[0], &self.utilities[1]]
    }

    /// Utility of `outcome` for both seats.
    pub fn payoffs(&self, outcome: &Outcome) -> Result<[f64; 2]> {
        Ok([
            self.utilities[0].utility(&self.domain, outcome)?,
            self.utilities[1].utility(&self.domain, outcome)?,
        ])
    }

    pub fn to_text(&self) -> String {
        let doc = ProblemDoc {
            format: FORMAT_VERSION,
            domain: DomainDoc {
                sizes: self.domain.sizes().to_vec(),
            },
            agents: self
                .utilities
                .iter()
                .map(|u| AgentDoc {
                    objectives: u
                        .objective_weights()
                        .iter()
                        .zip(u.value_weights())
                        .map(|(&weight, values)| ObjectiveDoc {
                            size: values.len(),
                            weight,
                            value_weights: values.clone(),
                        })
                        .collect(),
                })
                .collect(),
        };
        let mut buf = Vec::new();
        let mut ser =
            serde_json::Serializer::with_formatter(&mut buf, FixedDigits(PrettyFormatter::new()));
        doc.serialize(&mut ser)
            .expect("serializing into memory cannot fail");
        buf.push(b'\n');
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc: ProblemDoc =
            serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if doc.format != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                doc.format
            )));
        }
        let domain = Domain::new(doc.domain.sizes)?;
        if doc.agents.len() != 2 {
            return Err(Error::Format(format!(
                "expected 2 agent blocks, found {}",
                doc.agents.len()
            )));
        }
        let mut utilities = Vec::with_capacity(2);
        for (i, agent) in doc.agents.into_iter().enumerate() {
            let sizes: Vec<usize> = agent.objectives.iter().map(|o| o.size).collect();
            if sizes != domain.sizes() {
                return Err(Error::Format(format!(
                    "agent {i} objective sizes {sizes:?} disagree with the domain {:?}",
                    domain.sizes()
                )));
            }
            if let Some(o) = agent.objectives.iter().find(|o| o.value_weights.len() != o.size) {
                return Err(Error::Format(format!(
                    "agent {i}: objective of size {} lists {} value weights",
                    o.size,
                    o.value_weights.len()
                )));
            }
            let (weights, values) = agent
                .objectives
                .into_iter()
                .map(|o| (o.weight, o.value_weights))
                .unzip();
            utilities.push(UtilityFunction::new(weights, values)?);
        }
        let second = utilities.pop().expect("two agents");
        let first = utilities.pop().expect("two agents");
        Self::new(domain, [first, second])
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| with_path(e, path))
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| with_path(e, path))?;
        Self::from_text(&text)
    }
}

fn with_path(e: io::Error, path: &Path) -> Error {
    Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemDoc {
    format: u32,
    domain: DomainDoc,
    agents: Vec<AgentDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainDoc {
    sizes: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentDoc {
    objectives: Vec<ObjectiveDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectiveDoc {
    size: usize,
    weight: f64,
    value_weights: Vec<f64>,
}

/// Pretty JSON with every `f64` written as 17 significant digits.
struct FixedDigits(PrettyFormatter<'static>);

impl Formatter for FixedDigits {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}
