//! Self-tuning k-nearest-neighbor similarity graphs.

use std::fmt::Write as _;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{shape_err, GllError, Result};
use crate::sparse::{EdgePattern, SparseSymMatrix};

/// Dense `n x d` matrix whose rows are feature vectors. All entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(Array2<f64>);

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(GllError::InvalidArgument(format!(
                "feature matrix must be non-empty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if let Some((idx, _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(GllError::InvalidData(format!(
                "non-finite feature at row {}, column {}",
                idx.0, idx.1
            )));
        }
        Ok(Self(data))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(GllError::InvalidArgument("ragged feature rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let data = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| GllError::InvalidArgument(e.to_string()))?;
        Self::new(data)
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn d(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Squared Euclidean distance between rows `i` and `j`.
    pub fn sq_dist(&self, i: usize, j: usize) -> f64 {
        self.0
            .row(i)
            .iter()
            .zip(self.0.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Radial profile `eta` applied to the scaled squared distance, with its derivative.
#[derive(Debug, Clone, Copy)]
pub enum WeightKernel {
    /// `eta(z) = exp(-rate * z)`; the default uses `rate = 4`.
    Exponential { rate: f64 },
    Custom {
        tag: &'static str,
        eta: fn(f64) -> f64,
        eta_prime: fn(f64) -> f64,
    },
}

impl Default for WeightKernel {
    fn default() -> Self {
        WeightKernel::Exponential { rate: 4.0 }
    }
}

impl WeightKernel {
    pub fn eta(&self, z: f64) -> f64 {
        match *self {
            WeightKernel::Exponential { rate } => (-rate * z).exp(),
            WeightKernel::Custom { eta, .. } => eta(z),
        }
    }

    pub fn eta_prime(&self, z: f64) -> f64 {
        match *self {
            WeightKernel::Exponential { rate } => -rate * (-rate * z).exp(),
            WeightKernel::Custom { eta_prime, .. } => eta_prime(z),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            WeightKernel::Exponential { .. } => "exponential",
            WeightKernel::Custom { tag, .. } => tag,
        }
    }
}

/// How the per-node bandwidths `eps_i` are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthMode {
    /// `eps_i` is the distance from `x_i` to its k-th nearest neighbor.
    SelfTuning,
    /// Every `eps_i` equals the given positive constant.
    Constant(f64),
}

/// One entry of a k-NN list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist: f64,
}

/// Exact k-nearest neighbors of every row, excluding the row itself.
///
/// Lists are sorted by ascending distance; ties go to the lower index.
pub fn knn_search(x: &FeatureMatrix, k: usize) -> Result<Vec<Vec<Neighbor>>> {
    let n = x.n();
    if k == 0 || k >= n {
        return Err(GllError::InvalidArgument(format!(
            "k must satisfy 1 <= k < n, got k={k}, n={n}"
        )));
    }
    let lists = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (x.sq_dist(i, j), j))
                .collect();
            let by_dist_then_index =
                |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, by_dist_then_index);
                cand.truncate(k);
            }
            cand.sort_unstable_by(by_dist_then_index);
            cand.into_iter()
                .map(|(d2, j)| Neighbor {
                    index: j,
                    dist: d2.sqrt(),
                })
                .collect()
        })
        .collect();
    Ok(lists)
}

/// Symmetric weighted similarity graph.
///
/// `adjacency` and `weights` share one edge pattern. `eps` and `kth` hold
/// the bandwidths and k-th-neighbor indices used at construction; `kth` is
/// empty for graphs assembled directly from weighted edges.
#[derive(Debug, Clone)]
pub struct Graph {
    k: usize,
    adjacency: SparseSymMatrix,
    weights: SparseSymMatrix,
    eps: Vec<f64>,
    kth: Vec<usize>,
    kernel: WeightKernel,
    bandwidth: BandwidthMode,
}

/// Builds the symmetrized k-NN graph with `w_ij = eta(|x_i - x_j|^2 / (2 eps_i eps_j))`.
pub fn build_graph(
    x: &FeatureMatrix,
    k: usize,
    kernel: WeightKernel,
    bandwidth: BandwidthMode,
) -> Result<Graph> {
    if let BandwidthMode::Constant(c) = bandwidth {
        if !(c > 0.0 && c.is_finite()) {
            return Err(GllError::InvalidArgument(format!(
                "constant bandwidth must be positive, got {c}"
            )));
        }
    }
    let lists = knn_search(x, k)?;
    let n = x.n();
    let kth: Vec<usize> = lists.iter().map(|l| l[k - 1].index).collect();
    let eps: Vec<f64> = match bandwidth {
        BandwidthMode::SelfTuning => {
            let eps: Vec<f64> = lists.iter().map(|l| l[k - 1].dist).collect();
            if let Some(node) = eps.iter().position(|&e| e <= 0.0) {
                return Err(GllError::DegenerateBandwidth { node });
            }
            eps
        }
        BandwidthMode::Constant(c) => vec![c; n],
    };
    let pattern = EdgePattern::union(
        n,
        lists
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.iter().map(move |nb| (i, nb.index))),
    );
    let pattern = Arc::new(pattern);
    let weights: Vec<f64> = pattern
        .edges()
        .iter()
        .map(|&(i, j)| kernel.eta(x.sq_dist(i, j) / (2.0 * eps[i] * eps[j])))
        .collect();
    let ones = vec![1.0; pattern.num_edges()];
    Ok(Graph {
        k,
        adjacency: SparseSymMatrix::on_pattern(pattern.clone(), ones)?,
        weights: SparseSymMatrix::on_pattern(pattern, weights)?,
        eps,
        kth,
        kernel,
        bandwidth,
    })
}

impl Graph {
    /// Graph with explicitly given positive edge weights (no feature origin).
    pub fn from_weighted_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if n == 0 {
            return Err(GllError::InvalidArgument("graph needs at least one node".into()));
        }
        if let Some(&(i, j, w)) = edges.iter().find(|e| !(e.2 >= 0.0)) {
            return Err(GllError::InvalidData(format!(
                "edge ({i}, {j}) has invalid weight {w}"
            )));
        }
        let weights = SparseSymMatrix::from_triplets(n, edges)?;
        let ones = vec![1.0; weights.num_edges()];
        Ok(Self {
            k: 0,
            adjacency: SparseSymMatrix::on_pattern(weights.pattern().clone(), ones)?,
            weights,
            eps: vec![1.0; n],
            kth: Vec::new(),
            kernel: WeightKernel::default(),
            bandwidth: BandwidthMode::Constant(1.0),
        })
    }

    /// Same topology and bandwidths, new edge weights (used by finite-difference checks).
    pub fn with_weights(&self, values: Vec<f64>) -> Result<Self> {
        let weights = SparseSymMatrix::on_pattern(self.pattern().clone(), values)?;
        Ok(Self {
            weights,
            ..self.clone()
        })
    }

    /// Recomputes the weights from moved features while keeping adjacency and
    /// k-th-neighbor indices fixed; bandwidths follow the frozen `kth`.
    pub fn reweighted(&self, x: &FeatureMatrix) -> Result<Self> {
        if x.n() != self.n() {
            return Err(shape_err(format!("{} feature rows", self.n()), x.n()));
        }
        let eps: Vec<f64> = match self.bandwidth {
            BandwidthMode::SelfTuning => {
                if self.kth.len() != self.n() {
                    return Err(GllError::InvalidArgument(
                        "self-tuning graph lacks k-th neighbor indices".into(),
                    ));
                }
                let eps: Vec<f64> = (0..self.n())
                    .map(|i| x.sq_dist(i, self.kth[i]).sqrt())
                    .collect();
                if let Some(node) = eps.iter().position(|&e| e <= 0.0) {
                    return Err(GllError::DegenerateBandwidth { node });
                }
                eps
            }
            BandwidthMode::Constant(_) => self.eps.clone(),
        };
        let values: Vec<f64> = self
            .pattern()
            .edges()
            .iter()
            .map(|&(i, j)| self.kernel.eta(x.sq_dist(i, j) / (2.0 * eps[i] * eps[j])))
            .collect();
        Ok(Self {
            weights: SparseSymMatrix::on_pattern(self.pattern().clone(), values)?,
            eps,
            ..self.clone()
        })
    }

    pub fn n(&self) -> usize {
        self.weights.n()
    }

    /// The `k` used for construction (0 for hand-built graphs).
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn pattern(&self) -> &Arc<EdgePattern> {
        self.weights.pattern()
    }

    pub fn adjacency(&self) -> &SparseSymMatrix {
        &self.adjacency
    }

    pub fn weights(&self) -> &SparseSymMatrix {
        &self.weights
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn kth_neighbor(&self) -> &[usize] {
        &self.kth
    }

    pub fn kernel(&self) -> WeightKernel {
        self.kernel
    }

    pub fn bandwidth(&self) -> BandwidthMode {
        self.bandwidth
    }

    pub fn num_edges(&self) -> usize {
        self.weights.num_edges()
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.weights.degrees()
    }

    /// Writes the text form: `n k`, one `i j a w` line per stored edge, then
    /// `eps ...` and `kth ...` lines. Doubles carry 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.n(), self.k);
        for ((i, j, a), w) in self.adjacency.iter().zip(self.weights.values()) {
            let _ = writeln!(s, "{i} {j} {} {:.16e}", a as u8, w);
        }
        s.push_str("eps");
        for e in &self.eps {
            let _ = write!(s, " {e:.16e}");
        }
        s.push_str("\nkth");
        for k in &self.kth {
            let _ = write!(s, " {k}");
        }
        s.push('\n');
        s
    }

    /// Parses [`Graph::to_text`] output. The kernel and bandwidth mode are
    /// construction parameters and are not part of the file.
    pub fn from_text(text: &str, kernel: WeightKernel, bandwidth: BandwidthMode) -> Result<Self> {
        let mut offset = 0usize;
        let mut lines = text.split_inclusive('\n').map(|l| {
            let start = offset;
            offset += l.len();
            (start, l.trim_end())
        });
        let perr = |off: usize, msg: &str| GllError::Parse {
            offset: off,
            message: msg.to_string(),
        };
        let (off, header) = lines.next().ok_or_else(|| perr(0, "empty input"))?;
        let mut h = header.split_whitespace();
        let n: usize = h
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| perr(off, "bad node count"))?;
        let k: usize = h
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| perr(off, "bad k"))?;
        let mut triplets = Vec::new();
        let mut eps = Vec::new();
        let mut kth = Vec::new();
        for (off, line) in lines {
            let mut tok = line.split_whitespace();
            match tok.next() {
                None => continue,
                Some("eps") => {
                    eps = tok
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| perr(off, "bad eps value"))?;
                }
                Some("kth") => {
                    kth = tok
                        .map(|t| t.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| perr(off, "bad kth value"))?;
                }
                Some(first) => {
                    let i: usize = first.parse().map_err(|_| perr(off, "bad edge line"))?;
                    let rest: Vec<&str> = tok.collect();
                    if rest.len() != 3 {
                        return Err(perr(off, "edge line needs `i j a w`"));
                    }
                    let j: usize = rest[0].parse().map_err(|_| perr(off, "bad edge index"))?;
                    let a: u8 = rest[1].parse().map_err(|_| perr(off, "bad adjacency flag"))?;
                    let w: f64 = rest[2].parse().map_err(|_| perr(off, "bad weight"))?;
                    if a != 1 {
                        return Err(perr(off, "stored edges must have a = 1"));
                    }
                    triplets.push((i, j, w));
                }
            }
        }
        if eps.len() != n {
            return Err(perr(offset, "eps vector length differs from n"));
        }
        if !kth.is_empty() && kth.len() != n {
            return Err(perr(offset, "kth vector length differs from n"));
        }
        let mut g = Graph::from_weighted_edges(n, &triplets)?;
        g.k = k;
        g.eps = eps;
        g.kth = kth;
        g.kernel = kernel;
        g.bandwidth = bandwidth;
        Ok(g)
    }
}

/// Connected components of the adjacency pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub labels: Vec<usize>,
    pub count: usize,
}

impl Components {
    /// Smallest node index of each component.
    pub fn representatives(&self) -> Vec<usize> {
        let mut rep = vec![usize::MAX; self.count];
        for (x, &c) in self.labels.iter().enumerate() {
            rep[c] = rep[c].min(x);
        }
        rep
    }
}

pub fn connected_components(g: &Graph) -> Components {
    components_of_pattern(g.pattern(), |_| true)
}

/// Components of the subgraph keeping only edges for which `keep(edge id)` holds.
/// Components are numbered in order of their smallest node.
pub(crate) fn components_of_pattern(
    pattern: &EdgePattern,
    keep: impl Fn(usize) -> bool,
) -> Components {
    let n = pattern.n();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (e, &(i, j)) in pattern.edges().iter().enumerate() {
        if !keep(e) {
            continue;
        }
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri.max(rj)] = ri.min(rj);
        }
    }
    let mut id = vec![usize::MAX; n];
    let mut labels = vec![0; n];
    let mut count = 0;
    for x in 0..n {
        let r = find(&mut parent, x);
        if id[r] == usize::MAX {
            id[r] = count;
            count += 1;
        }
        labels[x] = id[r];
    }
    Components { labels, count }
}
