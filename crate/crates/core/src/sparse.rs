//! Symmetric sparse matrices stored as an undirected edge list.
//!
//! Every off-diagonal pair is kept once as `(i, j)` with `i < j`; the
//! `(j, i)` entry is implied. Several matrices over the same graph (adjacency,
//! weights, gradient workspaces) share one [`EdgePattern`] through an `Arc`.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};

use crate::error::{shape_err, GllError, Result};

/// Sorted undirected edge set with per-node incidence lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgePattern {
    n: usize,
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    // (neighbor, edge id), sorted by neighbor inside each node's slice
    incidence: Vec<(usize, usize)>,
}

impl EdgePattern {
    /// Builds a pattern from unordered pairs. Pairs are normalized to
    /// `i < j`; self-loops, out-of-range indices and duplicates are rejected.
    pub fn new(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for (i, j) in pairs {
            if i >= n || j >= n {
                return Err(GllError::InvalidArgument(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if i == j {
                return Err(GllError::InvalidArgument(format!("self-loop at node {i}")));
            }
            edges.push((i.min(j), i.max(j)));
        }
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(GllError::InvalidArgument(format!(
                "duplicate edge ({}, {})",
                w[0].0, w[0].1
            )));
        }
        Ok(Self::from_sorted_unique(n, edges))
    }

    /// Builds a pattern from the union of possibly repeated pairs.
    pub(crate) fn union(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut edges: Vec<(usize, usize)> =
            pairs.into_iter().map(|(i, j)| (i.min(j), i.max(j))).collect();
        edges.sort_unstable();
        edges.dedup();
        Self::from_sorted_unique(n, edges)
    }

    fn from_sorted_unique(n: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(i, j) in &edges {
            counts[i + 1] += 1;
            counts[j + 1] += 1;
        }
        for x in 0..n {
            counts[x + 1] += counts[x];
        }
        let offsets = counts;
        let mut fill = offsets.clone();
        let mut incidence = vec![(0usize, 0usize); 2 * edges.len()];
        for (e, &(i, j)) in edges.iter().enumerate() {
            incidence[fill[i]] = (j, e);
            fill[i] += 1;
            incidence[fill[j]] = (i, e);
            fill[j] += 1;
        }
        for x in 0..n {
            incidence[offsets[x]..offsets[x + 1]].sort_unstable();
        }
        Self {
            n,
            edges,
            offsets,
            incidence,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// `(neighbor, edge id)` pairs of node `x`, ascending by neighbor.
    pub fn neighbors(&self, x: usize) -> &[(usize, usize)] {
        &self.incidence[self.offsets[x]..self.offsets[x + 1]]
    }

    pub fn edge_id(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.n || j >= self.n {
            return None;
        }
        let row = self.neighbors(i);
        row.binary_search_by_key(&j, |&(y, _)| y)
            .ok()
            .map(|pos| row[pos].1)
    }
}

/// Symmetric matrix with zero diagonal and values on an [`EdgePattern`].
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    pattern: Arc<EdgePattern>,
    values: Vec<f64>,
}

impl SparseSymMatrix {
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let pattern = EdgePattern::new(n, triplets.iter().map(|&(i, j, _)| (i, j)))?;
        let mut values = vec![0.0; pattern.num_edges()];
        for &(i, j, v) in triplets {
            if !v.is_finite() {
                return Err(GllError::InvalidData(format!(
                    "non-finite value at ({i}, {j})"
                )));
            }
            // pattern construction already validated the pair
            let e = pattern.edge_id(i, j).expect("edge present");
            values[e] = v;
        }
        Ok(Self {
            pattern: Arc::new(pattern),
            values,
        })
    }

    pub fn on_pattern(pattern: Arc<EdgePattern>, values: Vec<f64>) -> Result<Self> {
        if values.len() != pattern.num_edges() {
            return Err(shape_err(
                format!("{} edge values", pattern.num_edges()),
                values.len(),
            ));
        }
        Ok(Self { pattern, values })
    }

    pub fn zeros(pattern: Arc<EdgePattern>) -> Self {
        let values = vec![0.0; pattern.num_edges()];
        Self { pattern, values }
    }

    pub fn pattern(&self) -> &Arc<EdgePattern> {
        &self.pattern
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn num_edges(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Iterates stored entries as `(i, j, value)` with `i < j`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.pattern
            .edges
            .iter()
            .zip(&self.values)
            .map(|(&(i, j), &v)| (i, j, v))
    }

    /// Entry `(i, j)`; symmetric, zero off the pattern and on the diagonal.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern
            .edge_id(i, j)
            .map_or(0.0, |e| self.values[e])
    }

    /// Row sums.
    pub fn degrees(&self) -> Vec<f64> {
        let mut deg = vec![0.0; self.n()];
        for (i, j, v) in self.iter() {
            deg[i] += v;
            deg[j] += v;
        }
        deg
    }

    pub fn same_pattern(&self, other: &SparseSymMatrix) -> bool {
        Arc::ptr_eq(&self.pattern, &other.pattern) || self.pattern == other.pattern
    }

    /// `(L_S + tau I) u` where `L_S = diag(S 1) - S`.
    pub fn laplacian_apply(&self, u: &[f64], tau: f64) -> Result<Vec<f64>> {
        if u.len() != self.n() {
            return Err(shape_err(self.n(), u.len()));
        }
        let mut out: Vec<f64> = u.iter().map(|&x| tau * x).collect();
        for (i, j, w) in self.iter() {
            let d = w * (u[i] - u[j]);
            out[i] += d;
            out[j] -= d;
        }
        Ok(out)
    }

    /// `L_S X` applied column-wise to an `n x d` matrix.
    pub fn laplacian_apply_rows(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.n() {
            return Err(shape_err(format!("{} rows", self.n()), x.nrows()));
        }
        let mut out = Array2::zeros(x.raw_dim());
        for (i, j, s) in self.iter() {
            if s == 0.0 {
                continue;
            }
            for c in 0..x.ncols() {
                let d = s * (x[[i, c]] - x[[j, c]]);
                out[[i, c]] += d;
                out[[j, c]] -= d;
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut dense = Array2::zeros((self.n(), self.n()));
        for (i, j, v) in self.iter() {
            dense[[i, j]] = v;
            dense[[j, i]] = v;
        }
        dense
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_normalizes_and_rejects_duplicates() {
        let p = EdgePattern::new(3, [(1, 0), (2, 1)]).unwrap();
        assert_eq!(p.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(p.neighbors(1), &[(0, 0), (2, 1)]);
        assert!(EdgePattern::new(3, [(0, 1), (1, 0)]).is_err());
        assert!(EdgePattern::new(3, [(1, 1)]).is_err());
        assert!(EdgePattern::new(3, [(0, 3)]).is_err());
    }

    #[test]
    fn symmetric_access() {
        let m = SparseSymMatrix::from_triplets(3, &[(2, 0, 0.5), (0, 1, 2.0)]).unwrap();
        assert_eq!(m.get(0, 2), 0.5);
        assert_eq!(m.get(2, 0), 0.5);
        assert_eq!(m.get(1, 2), 0.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.degrees(), vec![2.5, 2.0, 0.5]);
    }

    #[test]
    fn laplacian_of_path() {
        let m = SparseSymMatrix::from_triplets(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        assert_eq!(m.laplacian_apply(&[0.0, 1.0, 0.0], 0.0).unwrap(), vec![-1.0, 2.0, -1.0]);
        assert_eq!(m.laplacian_apply(&[3.0, 3.0, 3.0], 0.0).unwrap(), vec![0.0; 3]);
        assert!(m.laplacian_apply(&[1.0], 0.0).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(SparseSymMatrix::from_triplets(2, &[(0, 1, f64::NAN)]).is_err());
    }
}
