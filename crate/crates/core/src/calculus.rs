//! Gradient, divergence and Laplacian on a weighted graph.
//!
//! Functions on ordered node pairs are only stored on graph edges. For edge
//! `e = (i, j)` with `i < j`, `forward[e]` is the value at `(i, j)` and
//! `backward[e]` the value at `(j, i)`.

use crate::error::{shape_err, Result};
use crate::graph::Graph;

/// Function on ordered pairs of adjacent nodes, not necessarily skew-symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFunction {
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
}

impl EdgeFunction {
    pub fn zeros(num_edges: usize) -> Self {
        Self {
            forward: vec![0.0; num_edges],
            backward: vec![0.0; num_edges],
        }
    }

    /// Symmetric function carrying `value[e]` in both directions.
    pub fn symmetric(values: Vec<f64>) -> Self {
        Self {
            backward: values.clone(),
            forward: values,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.forward.len()
    }

    pub fn is_skew(&self, tol: f64) -> bool {
        self.forward
            .iter()
            .zip(&self.backward)
            .all(|(f, b)| (f + b).abs() <= tol)
    }

    /// `(v(x,y) + v(y,x)) / 2` in both directions.
    pub fn symmetrized(&self) -> Self {
        let avg: Vec<f64> = self
            .forward
            .iter()
            .zip(&self.backward)
            .map(|(f, b)| 0.5 * (f + b))
            .collect();
        Self::symmetric(avg)
    }
}

/// Skew-symmetric edge function, stored by its `(i, j)`, `i < j` value.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField(pub Vec<f64>);

impl VectorField {
    pub fn at(&self, e: usize) -> (f64, f64) {
        (self.0[e], -self.0[e])
    }

    pub fn to_edge_function(&self) -> EdgeFunction {
        EdgeFunction {
            forward: self.0.clone(),
            backward: self.0.iter().map(|v| -v).collect(),
        }
    }
}

fn check_nodes(g: &Graph, u: &[f64]) -> Result<()> {
    if u.len() != g.n() {
        return Err(shape_err(format!("{} node values", g.n()), u.len()));
    }
    Ok(())
}

fn check_edges(g: &Graph, len: usize) -> Result<()> {
    if len != g.num_edges() {
        return Err(shape_err(format!("{} edge values", g.num_edges()), len));
    }
    Ok(())
}

/// `grad u(x, y) = u(x) - u(y)` on every edge.
pub fn graph_gradient(g: &Graph, u: &[f64]) -> Result<VectorField> {
    check_nodes(g, u)?;
    Ok(VectorField(
        g.pattern().edges().iter().map(|&(i, j)| u[i] - u[j]).collect(),
    ))
}

/// `div v(x) = 1/2 sum_y w_xy (v(x, y) - v(y, x))`.
pub fn graph_divergence(g: &Graph, v: &EdgeFunction) -> Result<Vec<f64>> {
    check_edges(g, v.forward.len())?;
    check_edges(g, v.backward.len())?;
    let mut div = vec![0.0; g.n()];
    for (e, (i, j, w)) in g.weights().iter().enumerate() {
        let half = 0.5 * w * (v.forward[e] - v.backward[e]);
        div[i] += half;
        div[j] -= half;
    }
    Ok(div)
}

/// Divergence of a vector field, `div v(x) = sum_y w_xy v(x, y)`.
pub fn field_divergence(g: &Graph, v: &VectorField) -> Result<Vec<f64>> {
    check_edges(g, v.0.len())?;
    let mut div = vec![0.0; g.n()];
    for (e, (i, j, w)) in g.weights().iter().enumerate() {
        div[i] += w * v.0[e];
        div[j] -= w * v.0[e];
    }
    Ok(div)
}

/// `(Delta + tau I) u` with `Delta u(x) = sum_y w_xy (u(x) - u(y))`.
pub fn laplacian_apply(g: &Graph, u: &[f64], tau: f64) -> Result<Vec<f64>> {
    g.weights().laplacian_apply(u, tau)
}

/// `<u, v>` over nodes.
pub fn node_inner(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `1/2 sum_{x,y} w_xy a(x,y) b(x,y)` over ordered pairs.
pub fn edge_inner(g: &Graph, a: &EdgeFunction, b: &EdgeFunction) -> Result<f64> {
    check_edges(g, a.num_edges())?;
    check_edges(g, b.num_edges())?;
    Ok(g.weights()
        .values()
        .iter()
        .enumerate()
        .map(|(e, w)| 0.5 * w * (a.forward[e] * b.forward[e] + a.backward[e] * b.backward[e]))
        .sum())
}

/// Dirichlet energy `1/2 sum_{x,y} w_xy (u(x) - u(y))^2`.
pub fn dirichlet_energy(g: &Graph, u: &[f64]) -> Result<f64> {
    check_nodes(g, u)?;
    Ok(g.weights().iter().map(|(i, j, w)| w * (u[i] - u[j]).powi(2)).sum())
}
