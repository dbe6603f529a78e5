//! Fixed-node Gauss–Legendre rules mapped onto arbitrary intervals.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NODES: usize = 15;

/// Gauss–Legendre nodes and weights on the reference interval [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Quadrature {
    pub fn new(n_nodes: usize) -> Result<Self> {
        let degree = NonZeroUsize::new(n_nodes)
            .ok_or_else(|| Error::Config("quadrature needs at least one node".into()))?;
        let rule = GaussLegendre::new(degree);
        let (nodes, weights) = rule.as_node_weight_pairs().iter().copied().unzip();
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights for [lo, hi]; the weights already carry the half-length factor.
    pub fn mapped(&self, lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, w * half))
    }

    pub fn integrate(&self, lo: f64, hi: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.mapped(lo, hi).map(|(u, w)| w * f(u)).sum()
    }
}

/// Running integrals at the nodes of a Gauss–Legendre rule: given `f` at the
/// nodes of `[lo, hi]`, returns `∫_lo^{u_j} f` for every node `u_j`, by
/// integrating the interpolating polynomial. Exact for polynomials of degree
/// below the node count.
#[derive(Debug, Clone)]
pub struct RunningIntegral {
    quad: Quadrature,
    /// `matrix[j][m] = ∫_{-1}^{x_j} ℓ_m`, with `ℓ_m` the Lagrange basis.
    matrix: Vec<Vec<f64>>,
}

impl RunningIntegral {
    pub fn new(quad: Quadrature) -> Self {
        let x = &quad.nodes;
        let n = x.len();
        let lagrange = |m: usize, y: f64| -> f64 {
            (0..n).filter(|&r| r != m).map(|r| (y - x[r]) / (x[m] - x[r])).product()
        };
        let matrix = x
            .iter()
            .map(|&xj| (0..n).map(|m| quad.integrate(-1.0, xj, |y| lagrange(m, y))).collect())
            .collect();
        Self { quad, matrix }
    }

    pub fn quadrature(&self) -> &Quadrature {
        &self.quad
    }

    /// `out[j] = ∫_lo^{u_j} f` from `values[m] = f(u_m)`.
    pub fn apply(&self, lo: f64, hi: f64, values: &[f64], out: &mut [f64]) {
        let half = 0.5 * (hi - lo);
        for (o, row) in out.iter_mut().zip(&self.matrix) {
            *o = half * row.iter().zip(values).map(|(q, v)| q * v).sum::<f64>();
        }
    }
}

impl Default for Quadrature {
    fn default() -> Self {
        Self::new(DEFAULT_NODES).expect("non-zero node count")
    }
}
