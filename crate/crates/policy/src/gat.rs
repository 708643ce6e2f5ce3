//! Graph attention layer with a hand-written backward pass.
//!
//! For node `u` with neighbours `N(u)`:
//!
//! ```text
//! p_v      = ψ(x_v) = x_v · W_ψ + b_ψ                      (split into K heads)
//! e_uv^k   = leaky_relu(a_self^k · p_u^k + a_nbr^k · p_v^k)
//! α_uv^k   = softmax_{v ∈ N(u)} e_uv^k
//! m_u      = ‖_k Σ_{v ∈ N(u)} α_uv^k p_v^k
//! h_u      = φ(x_u ‖ m_u) = x_u · W_φx + m_u · W_φm + b_φ
//! ```
//!
//! followed by an optional rectifier. A node without neighbours aggregates
//! the zero vector.

use crate::linalg::{add_column_sums, dot, gemm};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Directed neighbour lists in CSR form.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Adjacency {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Adjacency {
    /// Builds neighbour lists from undirected edges; each edge is used in
    /// both directions.
    pub fn from_undirected(num_nodes: usize, edges: &[(usize, usize)]) -> Self {
        let mut lists = vec![Vec::new(); num_nodes];
        for &(a, b) in edges {
            lists[a].push(b);
            lists[b].push(a);
        }
        Self::from_lists(lists)
    }

    pub fn from_lists(lists: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for list in lists {
            neighbors.extend(list);
            offsets.push(neighbors.len());
        }
        Self { offsets, neighbors }
    }

    pub(crate) fn with_capacity(nodes: usize, edges: usize) -> Self {
        let mut offsets = Vec::with_capacity(nodes + 1);
        offsets.push(0);
        Self {
            offsets,
            neighbors: Vec::with_capacity(edges),
        }
    }

    /// Appends a node whose neighbours are `list` shifted by `shift`.
    pub(crate) fn push_node(&mut self, list: &[usize], shift: usize) {
        self.neighbors.extend(list.iter().map(|&v| v + shift));
        self.offsets.push(self.neighbors.len());
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_directed_edges(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    fn edge_range(&self, node: usize) -> std::ops::Range<usize> {
        self.offsets[node]..self.offsets[node + 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatShape {
    pub input: usize,
    pub width: usize,
    pub heads: usize,
}

impl GatShape {
    pub fn head_width(&self) -> usize {
        self.width / self.heads
    }

    /// Section lengths in storage order: ψ weight, ψ bias, self attention,
    /// neighbour attention, φ weight, φ bias.
    pub fn section_lengths(&self) -> [usize; 6] {
        [
            self.input * self.width,
            self.width,
            self.width,
            self.width,
            (self.input + self.width) * self.width,
            self.width,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.section_lengths().iter().sum()
    }
}

/// Borrowed view of one layer's parameters (storage order of
/// [`GatShape::section_lengths`]).
#[derive(Debug, Clone, Copy)]
pub struct GatParams<'a> {
    pub psi_weight: &'a [f64],
    pub psi_bias: &'a [f64],
    pub att_self: &'a [f64],
    pub att_neighbor: &'a [f64],
    pub phi_weight: &'a [f64],
    pub phi_bias: &'a [f64],
}

impl<'a> GatParams<'a> {
    pub fn from_slice(shape: GatShape, flat: &'a [f64]) -> Self {
        let [a, b, c, d, e, f] = shape.section_lengths();
        assert_eq!(flat.len(), shape.num_params());
        let (psi_weight, rest) = flat.split_at(a);
        let (psi_bias, rest) = rest.split_at(b);
        let (att_self, rest) = rest.split_at(c);
        let (att_neighbor, rest) = rest.split_at(d);
        let (phi_weight, phi_bias) = rest.split_at(e);
        debug_assert_eq!(phi_bias.len(), f);
        Self {
            psi_weight,
            psi_bias,
            att_self,
            att_neighbor,
            phi_weight,
            phi_bias,
        }
    }
}

pub struct GatGrads<'a> {
    pub psi_weight: &'a mut [f64],
    pub psi_bias: &'a mut [f64],
    pub att_self: &'a mut [f64],
    pub att_neighbor: &'a mut [f64],
    pub phi_weight: &'a mut [f64],
    pub phi_bias: &'a mut [f64],
}

impl<'a> GatGrads<'a> {
    pub fn from_slice(shape: GatShape, flat: &'a mut [f64]) -> Self {
        let [a, b, c, d, e, _] = shape.section_lengths();
        assert_eq!(flat.len(), shape.num_params());
        let (psi_weight, rest) = flat.split_at_mut(a);
        let (psi_bias, rest) = rest.split_at_mut(b);
        let (att_self, rest) = rest.split_at_mut(c);
        let (att_neighbor, rest) = rest.split_at_mut(d);
        let (phi_weight, phi_bias) = rest.split_at_mut(e);
        Self {
            psi_weight,
            psi_bias,
            att_self,
            att_neighbor,
            phi_weight,
            phi_bias,
        }
    }
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GatCache {
    input: Vec<f64>,
    psi: Vec<f64>,
    /// Per directed edge and head, pre-activation attention score.
    score: Vec<f64>,
    /// Per directed edge and head, attention coefficient.
    alpha: Vec<f64>,
    aggregate: Vec<f64>,
    /// φ output before the rectifier.
    pre_activation: Vec<f64>,
    activation: bool,
}

impl GatCache {
    /// Attention coefficients, `[directed edge × head]` in CSR edge order.
    pub fn attention(&self) -> &[f64] {
        &self.alpha
    }
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

/// Applies one attention layer to `x` (`num_nodes × shape.input`).
pub fn gat_forward(
    shape: GatShape,
    params: &GatParams<'_>,
    adjacency: &Adjacency,
    x: &[f64],
    activation: bool,
) -> (Vec<f64>, GatCache) {
    let n = adjacency.num_nodes();
    let (w, k, dh) = (shape.width, shape.heads, shape.head_width());
    assert_eq!(x.len(), n * shape.input, "feature width mismatch");
    assert_eq!(k * dh, w, "width must be divisible by the head count");

    let psi = crate::linalg::affine(n, shape.input, w, x, params.psi_weight, params.psi_bias);

    let mut s_self = vec![0.0; n * k];
    let mut s_nbr = vec![0.0; n * k];
    for u in 0..n {
        for h in 0..k {
            let p = &psi[u * w + h * dh..u * w + (h + 1) * dh];
            s_self[u * k + h] = dot(p, &params.att_self[h * dh..(h + 1) * dh]);
            s_nbr[u * k + h] = dot(p, &params.att_neighbor[h * dh..(h + 1) * dh]);
        }
    }

    let edges = adjacency.num_directed_edges();
    let mut score = vec![0.0; edges * k];
    let mut alpha = vec![0.0; edges * k];
    let mut aggregate = vec![0.0; n * w];
    for u in 0..n {
        let range = adjacency.edge_range(u);
        if range.is_empty() {
            continue;
        }
        for h in 0..k {
            let mut max = f64::NEG_INFINITY;
            for e in range.clone() {
                let v = adjacency.neighbors[e];
                let z = s_self[u * k + h] + s_nbr[v * k + h];
                score[e * k + h] = z;
                max = max.max(leaky(z));
            }
            let mut total = 0.0;
            for e in range.clone() {
                let a = (leaky(score[e * k + h]) - max).exp();
                alpha[e * k + h] = a;
                total += a;
            }
            let out = &mut aggregate[u * w + h * dh..u * w + (h + 1) * dh];
            for e in range.clone() {
                let a = alpha[e * k + h] / total;
                alpha[e * k + h] = a;
                let v = adjacency.neighbors[e];
                let p = &psi[v * w + h * dh..v * w + (h + 1) * dh];
                for (o, pv) in out.iter_mut().zip(p) {
                    *o += a * pv;
                }
            }
        }
    }

    let (phi_x, phi_m) = params.phi_weight.split_at(shape.input * w);
    let mut pre = crate::linalg::affine(n, shape.input, w, x, phi_x, params.phi_bias);
    gemm(n, w, w, &aggregate, false, phi_m, false, 1.0, &mut pre);
    let out = if activation {
        pre.iter().map(|&z| z.max(0.0)).collect()
    } else {
        pre.clone()
    };
    let cache = GatCache {
        input: x.to_vec(),
        psi,
        score,
        alpha,
        aggregate,
        pre_activation: pre,
        activation,
    };
    (out, cache)
}

/// Back-propagates `d_out` through the layer, accumulating parameter
/// gradients into `grads` and returning the gradient with respect to the
/// layer input.
pub fn gat_backward(
    shape: GatShape,
    params: &GatParams<'_>,
    adjacency: &Adjacency,
    cache: &GatCache,
    d_out: &[f64],
    grads: &mut GatGrads<'_>,
) -> Vec<f64> {
    let n = adjacency.num_nodes();
    let (input, w, k, dh) = (shape.input, shape.width, shape.heads, shape.head_width());
    assert_eq!(d_out.len(), n * w);

    let d_pre: Vec<f64> = if cache.activation {
        d_out
            .iter()
            .zip(&cache.pre_activation)
            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
            .collect()
    } else {
        d_out.to_vec()
    };

    let (phi_x, phi_m) = params.phi_weight.split_at(input * w);
    let (g_phi_x, g_phi_m) = grads.phi_weight.split_at_mut(input * w);
    gemm(input, n, w, &cache.input, true, &d_pre, false, 1.0, g_phi_x);
    gemm(w, n, w, &cache.aggregate, true, &d_pre, false, 1.0, g_phi_m);
    add_column_sums(n, w, &d_pre, grads.phi_bias);

    let mut d_x = vec![0.0; n * input];
    gemm(n, w, input, &d_pre, false, phi_x, true, 0.0, &mut d_x);
    let mut d_agg = vec![0.0; n * w];
    gemm(n, w, w, &d_pre, false, phi_m, true, 0.0, &mut d_agg);

    let psi = &cache.psi;
    let mut d_psi = vec![0.0; n * w];
    let mut ds_self = vec![0.0; n * k];
    let mut ds_nbr = vec![0.0; n * k];
    let mut d_alpha = Vec::new();
    for u in 0..n {
        let range = adjacency.edge_range(u);
        if range.is_empty() {
            continue;
        }
        for h in 0..k {
            let g = &d_agg[u * w + h * dh..u * w + (h + 1) * dh];
            d_alpha.clear();
            let mut weighted = 0.0;
            for e in range.clone() {
                let v = adjacency.neighbors[e];
                let a = cache.alpha[e * k + h];
                let p = &psi[v * w + h * dh..v * w + (h + 1) * dh];
                let da = dot(g, p);
                d_alpha.push(da);
                weighted += a * da;
                let dp = &mut d_psi[v * w + h * dh..v * w + (h + 1) * dh];
                for (d, gi) in dp.iter_mut().zip(g) {
                    *d += a * gi;
                }
            }
            for (i, e) in range.clone().enumerate() {
                let v = adjacency.neighbors[e];
                let a = cache.alpha[e * k + h];
                let slope = if cache.score[e * k + h] > 0.0 { 1.0 } else { LEAKY_SLOPE };
                let dz = a * (d_alpha[i] - weighted) * slope;
                ds_self[u * k + h] += dz;
                ds_nbr[v * k + h] += dz;
            }
        }
    }
    for u in 0..n {
        for h in 0..k {
            let cols = u * w + h * dh..u * w + (h + 1) * dh;
            let heads = h * dh..(h + 1) * dh;
            let (gs, gn) = (ds_self[u * k + h], ds_nbr[u * k + h]);
            for ((dp, &a_s), &a_n) in d_psi[cols.clone()]
                .iter_mut()
                .zip(&params.att_self[heads.clone()])
                .zip(&params.att_neighbor[heads.clone()])
            {
                *dp += gs * a_s + gn * a_n;
            }
            for ((g_s, g_n), &p) in grads.att_self[heads.clone()]
                .iter_mut()
                .zip(grads.att_neighbor[heads].iter_mut())
                .zip(&psi[cols])
            {
                *g_s += gs * p;
                *g_n += gn * p;
            }
        }
    }

    gemm(input, n, w, &cache.input, true, &d_psi, false, 1.0, grads.psi_weight);
    add_column_sums(n, w, &d_psi, grads.psi_bias);
    gemm(n, w, input, &d_psi, false, params.psi_weight, true, 1.0, &mut d_x);
    d_x
}
