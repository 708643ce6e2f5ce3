//! Observation graph: the problem structure plus summary statistics of the
//! offer history, seen from one agent's perspective.
//!
//! Node order is fixed: the head node first, then one node per objective,
//! then the value nodes objective by objective. Every row of the feature
//! matrix has [`FEATURE_WIDTH`] columns: a one-hot role tag in columns
//! 0..3 followed by the role's features, left-aligned and zero padded.
//!
//! | role      | features (columns 3..)                                                 |
//! |-----------|------------------------------------------------------------------------|
//! | head      | number of objectives, progress t/H                                     |
//! | objective | number of values, objective weight                                     |
//! | value     | value weight, opp. last offer, own last offer, opp. fraction, own fraction |

use std::sync::Arc;

use serde::Serialize;

use crate::domain::{Domain, Outcome, UtilityFunction};
use crate::error::{invalid, Result};

pub const FEATURE_WIDTH: usize = 8;
const TAG_HEAD: usize = 0;
const TAG_OBJECTIVE: usize = 1;
const TAG_VALUE: usize = 2;
const FIRST_FEATURE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Own,
    Opponent,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct SideStats {
    /// Flattened per value: is this value part of the side's latest offer.
    last: Vec<bool>,
    counts: Vec<u32>,
    offers: u32,
}

/// Offer-history summary for both sides, flattened per value in node order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryStats {
    offsets: Arc<[usize]>,
    own: SideStats,
    opponent: SideStats,
}

impl HistoryStats {
    pub fn new(domain: &Domain) -> Self {
        let mut offsets = Vec::with_capacity(domain.num_objectives() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &n in domain.sizes() {
            acc += n;
            offsets.push(acc);
        }
        let side = SideStats {
            last: vec![false; acc],
            counts: vec![0; acc],
            offers: 0,
        };
        Self {
            offsets: offsets.into(),
            own: side.clone(),
            opponent: side,
        }
    }

    fn side(&self, side: Side) -> &SideStats {
        match side {
            Side::Own => &self.own,
            Side::Opponent => &self.opponent,
        }
    }

    pub fn num_values(&self) -> usize {
        *self.offsets.last().expect("offsets start with 0")
    }

    pub fn offer_count(&self, side: Side) -> u32 {
        self.side(side).offers
    }

    /// Flat index of value `v` of objective `b`.
    pub fn value_index(&self, objective: usize, value: usize) -> usize {
        self.offsets[objective] + value
    }

    pub fn last_offer_flag(&self, side: Side, objective: usize, value: usize) -> f64 {
        f64::from(u8::from(self.side(side).last[self.value_index(objective, value)]))
    }

    pub fn offer_fraction(&self, side: Side, objective: usize, value: usize) -> f64 {
        let s = self.side(side);
        if s.offers == 0 {
            0.0
        } else {
            f64::from(s.counts[self.value_index(objective, value)]) / f64::from(s.offers)
        }
    }

    /// `[opp-last, own-last, opp-fraction, own-fraction]` for flat value index `i`.
    pub fn value_features(&self, i: usize) -> [f64; 4] {
        let frac = |s: &SideStats| {
            if s.offers == 0 {
                0.0
            } else {
                f64::from(s.counts[i]) / f64::from(s.offers)
            }
        };
        [
            f64::from(u8::from(self.opponent.last[i])),
            f64::from(u8::from(self.own.last[i])),
            frac(&self.opponent),
            frac(&self.own),
        ]
    }

    /// Records an offer made by `side`.
    pub fn update(&mut self, offer: &Outcome, side: Side) -> Result<()> {
        let m = self.offsets.len() - 1;
        if offer.choices().len() != m {
            return Err(invalid("offer does not match the tracked domain"));
        }
        for (b, &v) in offer.choices().iter().enumerate() {
            if v >= self.offsets[b + 1] - self.offsets[b] {
                return Err(invalid(format!("value {v} out of range for objective {b}")));
            }
        }
        let offsets = Arc::clone(&self.offsets);
        let s = match side {
            Side::Own => &mut self.own,
            Side::Opponent => &mut self.opponent,
        };
        s.last.iter_mut().for_each(|f| *f = false);
        for (b, &v) in offer.choices().iter().enumerate() {
            let i = offsets[b] + v;
            s.last[i] = true;
            s.counts[i] += 1;
        }
        s.offers += 1;
        Ok(())
    }
}

/// Functional form of [`HistoryStats::update`].
pub fn update_stats(mut stats: HistoryStats, offer: &Outcome, side: Side) -> Result<HistoryStats> {
    stats.update(offer, side)?;
    Ok(stats)
}

/// Graph structure of a domain, shared by every observation on it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphTopology {
    sizes: Vec<usize>,
    value_offsets: Vec<usize>,
    edges: Vec<(usize, usize)>,
    neighbor_offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl GraphTopology {
    pub fn new(domain: &Domain) -> Self {
        let m = domain.num_objectives();
        let sizes = domain.sizes().to_vec();
        let mut value_offsets = Vec::with_capacity(m + 1);
        let mut next = 1 + m;
        for &n in &sizes {
            value_offsets.push(next);
            next += n;
        }
        value_offsets.push(next);
        let num_nodes = next;

        let mut edges = Vec::with_capacity(num_nodes - 1);
        for b in 0..m {
            edges.push((0, 1 + b));
        }
        for b in 0..m {
            for node in value_offsets[b]..value_offsets[b + 1] {
                edges.push((1 + b, node));
            }
        }

        let mut adjacency = vec![Vec::new(); num_nodes];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        let mut neighbor_offsets = Vec::with_capacity(num_nodes + 1);
        let mut neighbors = Vec::with_capacity(2 * edges.len());
        neighbor_offsets.push(0);
        for mut list in adjacency {
            list.sort_unstable();
            neighbors.extend(list);
            neighbor_offsets.push(neighbors.len());
        }
        Self {
            sizes,
            value_offsets,
            edges,
            neighbor_offsets,
            neighbors,
        }
    }

    pub fn num_nodes(&self) -> usize {
        *self.value_offsets.last().expect("at least one objective")
    }

    pub fn num_objectives(&self) -> usize {
        self.sizes.len()
    }

    pub fn objective_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_values(&self) -> usize {
        self.num_nodes() - 1 - self.num_objectives()
    }

    pub fn head_node(&self) -> usize {
        0
    }

    pub fn objective_node(&self, objective: usize) -> usize {
        1 + objective
    }

    pub fn value_node(&self, objective: usize, value: usize) -> usize {
        self.value_offsets[objective] + value
    }

    /// Node index of the first value node; value nodes are contiguous.
    pub fn first_value_node(&self) -> usize {
        1 + self.num_objectives()
    }

    /// Undirected edges, each listed once.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[self.neighbor_offsets[node]..self.neighbor_offsets[node + 1]]
    }

    pub fn role(&self, node: usize) -> NodeRole {
        if node == 0 {
            NodeRole::Head
        } else if node <= self.num_objectives() {
            NodeRole::Objective { objective: node - 1 }
        } else {
            let b = self.value_offsets.partition_point(|&off| off <= node) - 1;
            NodeRole::Value {
                objective: b,
                value: node - self.value_offsets[b],
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "role", rename_all = "lowercase")]
pub enum NodeRole {
    Head,
    Objective { objective: usize },
    Value { objective: usize, value: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationGraph {
    pub topology: Arc<GraphTopology>,
    /// Row-major `[num_nodes × FEATURE_WIDTH]`.
    pub features: Vec<f64>,
}

impl ObservationGraph {
    pub fn num_nodes(&self) -> usize {
        self.topology.num_nodes()
    }

    pub fn row(&self, node: usize) -> &[f64] {
        &self.features[node * FEATURE_WIDTH..(node + 1) * FEATURE_WIDTH]
    }

    /// Structured dump of nodes (role + features) and edges.
    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Node<'a> {
            id: usize,
            #[serde(flatten)]
            role: NodeRole,
            features: &'a [f64],
        }
        let nodes: Vec<Node<'_>> = (0..self.num_nodes())
            .map(|id| Node {
                id,
                role: self.topology.role(id),
                features: self.row(id),
            })
            .collect();
        serde_json::json!({
            "feature_width": FEATURE_WIDTH,
            "nodes": nodes,
            "edges": self.topology.edges(),
        })
    }
}

/// Builds the observation on a precomputed topology.
pub fn build_graph_on(
    topology: &Arc<GraphTopology>,
    utility: &UtilityFunction,
    stats: &HistoryStats,
    round: usize,
    deadline: usize,
) -> Result<ObservationGraph> {
    if deadline == 0 || round > deadline {
        return Err(invalid(format!("round {round} beyond deadline {deadline}")));
    }
    let m = topology.num_objectives();
    if utility.objective_weights().len() != m || stats.num_values() != topology.num_values() {
        return Err(invalid("utility or history does not match the graph topology"));
    }
    let mut features = vec![0.0; topology.num_nodes() * FEATURE_WIDTH];
    let row = |features: &mut Vec<f64>, node: usize, tag: usize, values: &[f64]| {
        let r = &mut features[node * FEATURE_WIDTH..(node + 1) * FEATURE_WIDTH];
        r[tag] = 1.0;
        r[FIRST_FEATURE..FIRST_FEATURE + values.len()].copy_from_slice(values);
    };
    row(
        &mut features,
        topology.head_node(),
        TAG_HEAD,
        &[m as f64, round as f64 / deadline as f64],
    );
    let mut flat = 0;
    for (b, &n) in topology.objective_sizes().iter().enumerate() {
        row(
            &mut features,
            topology.objective_node(b),
            TAG_OBJECTIVE,
            &[n as f64, utility.objective_weight(b)],
        );
        for v in 0..n {
            let [opp_last, own_last, opp_frac, own_frac] = stats.value_features(flat);
            row(
                &mut features,
                topology.value_node(b, v),
                TAG_VALUE,
                &[utility.value_weight(b, v), opp_last, own_last, opp_frac, own_frac],
            );
            flat += 1;
        }
    }
    Ok(ObservationGraph {
        topology: Arc::clone(topology),
        features,
    })
}

pub fn build_graph(
    domain: &Domain,
    utility: &UtilityFunction,
    stats: &HistoryStats,
    round: usize,
    deadline: usize,
) -> Result<ObservationGraph> {
    utility.check_domain(domain)?;
    build_graph_on(&Arc::new(GraphTopology::new(domain)), utility, stats, round, deadline)
}
