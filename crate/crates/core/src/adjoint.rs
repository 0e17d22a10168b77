//! Exact backward pass of the graph learning layer.
//!
//! Given the forward solution `u` and the upstream gradient `dJ/du`, one
//! linear adjoint solve per class yields the gradients with respect to the
//! edge weights, the source term, the boundary values and, through the
//! k-NN weight construction, the feature vectors.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::calculus::EdgeFunction;
use crate::error::{shape_err, GllError, Result};
use crate::graph::{BandwidthMode, FeatureMatrix, Graph};
use crate::linalg::ReducedSystem;
use crate::solvers::{check_solvable, coefficient_components, LabelData, PhiSpec, SolverConfig};
use crate::sparse::SparseSymMatrix;

/// Lower bound applied to nonlinear adjoint edge coefficients.
pub const ADJOINT_COEFF_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSolution {
    /// `n x C`, exactly zero on labeled nodes.
    pub v: Array2<f64>,
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    /// Number of (class, edge) coefficients raised to [`ADJOINT_COEFF_FLOOR`].
    pub floored_coefficients: usize,
}

impl AdjointSolution {
    pub fn has_floor_warning(&self) -> bool {
        self.floored_coefficients > 0
    }
}

fn check_node_matrix(name: &str, m: ArrayView2<f64>, n: usize, c: usize) -> Result<()> {
    if m.dim() != (n, c) {
        return Err(shape_err(
            format!("{name} of shape {n}x{c}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

/// Edge coefficients `1/2 w (phi_q(grad u(x,y)) + phi_q(grad u(y,x)))` of one class.
fn adjoint_coefficients(g: &Graph, phi: &PhiSpec, u: &[f64]) -> Vec<f64> {
    g.weights()
        .iter()
        .map(|(i, j, w)| phi.linearized_coeff(w, u[i] - u[j], i, j))
        .collect()
}

/// Solves `tau v + div(phi_q(grad u) grad v) = dJ/du` off `L`, `v = 0` on `L`.
pub fn solve_adjoint(
    g: &Graph,
    labels: &LabelData,
    u: ArrayView2<f64>,
    upstream: ArrayView2<f64>,
    phi: &PhiSpec,
    tau: f64,
    cfg: &SolverConfig,
) -> Result<AdjointSolution> {
    let n = g.n();
    let classes = labels.num_classes();
    check_node_matrix("solution", u, n, classes)?;
    check_node_matrix("upstream gradient", upstream, n, classes)?;
    if let Some(((x, c), _)) = upstream.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(GllError::InvalidData(format!(
            "non-finite upstream gradient at node {x}, class {c}"
        )));
    }
    let fixed = labels.mask(n)?;
    let cap = cfg.iteration_cap(n);
    let zeros = vec![0.0; n];
    let diag = vec![tau; n];

    if phi.is_linear() {
        check_solvable(g, labels, tau).map_err(|e| GllError::AdjointSingular(e.to_string()))?;
        let sys = ReducedSystem::new(g.pattern(), g.weights().values(), &diag, &fixed);
        let cols = (0..classes)
            .into_par_iter()
            .map(|c| {
                let rhs = upstream.column(c).to_vec();
                let out = sys.solve(&sys.rhs(Some(&rhs), &zeros), None, cfg.tol, cap)?;
                Ok((sys.expand(&out.x, &zeros), out.rel_residual, out.iterations, 0))
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(collect_adjoint(cols, n));
    }

    let cols = (0..classes)
        .into_par_iter()
        .map(|c| {
            let uc = u.column(c).to_vec();
            let mut coeffs = adjoint_coefficients(g, phi, &uc);
            if let Some(e) = coeffs.iter().position(|k| !k.is_finite()) {
                let (i, j) = g.pattern().edges()[e];
                return Err(GllError::AdjointSingular(format!(
                    "phi_q is unbounded on edge ({i}, {j}) of class {c}"
                )));
            }
            if tau <= 0.0 {
                let comps = coefficient_components(g, &coeffs, 0.0);
                let mut has_label = vec![false; comps.count];
                for (x, &k) in comps.labels.iter().enumerate() {
                    has_label[k] |= fixed[x];
                }
                if let Some(k) = has_label.iter().position(|&h| !h) {
                    let node = comps.representatives()[k];
                    return Err(GllError::AdjointSingular(format!(
                        "class {c}: nodes around {node} are decoupled from the labeled set (vanishing phi_q, tau = 0)"
                    )));
                }
            }
            let mut floored = 0;
            for k in coeffs.iter_mut() {
                if *k < ADJOINT_COEFF_FLOOR {
                    *k = ADJOINT_COEFF_FLOOR;
                    floored += 1;
                }
            }
            let sys = ReducedSystem::new(g.pattern(), &coeffs, &diag, &fixed);
            let rhs = upstream.column(c).to_vec();
            let out = sys.solve(&sys.rhs(Some(&rhs), &zeros), None, cfg.tol, cap)?;
            Ok((sys.expand(&out.x, &zeros), out.rel_residual, out.iterations, floored))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(collect_adjoint(cols, n))
}

fn collect_adjoint(cols: Vec<(Vec<f64>, f64, usize, usize)>, n: usize) -> AdjointSolution {
    let mut v = Array2::zeros((n, cols.len()));
    let mut residuals = Vec::new();
    let mut iterations = Vec::new();
    let mut floored_coefficients = 0;
    for (c, (col, res, it, fl)) in cols.into_iter().enumerate() {
        for (x, val) in col.into_iter().enumerate() {
            v[[x, c]] = val;
        }
        residuals.push(res);
        iterations.push(it);
        floored_coefficients += fl;
    }
    AdjointSolution {
        v,
        residuals,
        iterations,
        floored_coefficients,
    }
}

fn check_pair(g: &Graph, u: ArrayView2<f64>, v: ArrayView2<f64>) -> Result<()> {
    if u.nrows() != g.n() || u.dim() != v.dim() {
        return Err(shape_err(
            format!("u and v of shape {}x{}", g.n(), u.ncols()),
            format!("{}x{} and {}x{}", u.nrows(), u.ncols(), v.nrows(), v.ncols()),
        ));
    }
    Ok(())
}

/// Derivative of `J` with respect to each undirected edge weight, i.e. with
/// `w_xy` and `w_yx` moved together:
/// `-1/2 sum_c (phi(grad u(x,y)) - phi(grad u(y,x))) grad v(x,y)`.
/// For `p = 2` this is `-sum_c grad u_c(x,y) grad v_c(x,y)`.
pub fn grad_w(g: &Graph, u: ArrayView2<f64>, v: ArrayView2<f64>, phi: &PhiSpec) -> Result<SparseSymMatrix> {
    check_pair(g, u, v)?;
    let values = g
        .pattern()
        .edges()
        .iter()
        .map(|&(i, j)| {
            (0..u.ncols())
                .map(|c| {
                    let du = u[[i, c]] - u[[j, c]];
                    let flux = phi.phi(du, i, j) - phi.phi(-du, j, i);
                    -0.5 * flux * (v[[i, c]] - v[[j, c]])
                })
                .sum()
        })
        .collect();
    SparseSymMatrix::on_pattern(g.pattern().clone(), values)
}

/// Unsymmetrized per-direction partials `dJ/dw_xy` with `w_xy` varied alone:
/// `-1/2 (phi(grad u(x,y)) - phi(grad u(y,x))) v(x)`, summed over classes.
pub fn grad_w_directed(g: &Graph, u: ArrayView2<f64>, v: ArrayView2<f64>, phi: &PhiSpec) -> Result<EdgeFunction> {
    check_pair(g, u, v)?;
    let mut out = EdgeFunction::zeros(g.num_edges());
    for (e, &(i, j)) in g.pattern().edges().iter().enumerate() {
        for c in 0..u.ncols() {
            let du = u[[i, c]] - u[[j, c]];
            let flux = phi.phi(du, i, j) - phi.phi(-du, j, i);
            out.forward[e] -= 0.5 * flux * v[[i, c]];
            out.backward[e] += 0.5 * flux * v[[j, c]];
        }
    }
    Ok(out)
}

/// Splits undirected-edge derivatives into equal per-direction partials.
pub fn partials_from_edge_derivative(pair: &SparseSymMatrix) -> EdgeFunction {
    EdgeFunction::symmetric(pair.values().iter().map(|p| 0.5 * p).collect())
}

/// `dJ/df` at unlabeled nodes (ascending index), one column per class.
pub fn grad_f(v: ArrayView2<f64>, labels: &LabelData) -> Array2<f64> {
    let free = labels.unlabeled(v.nrows());
    v.select(ndarray::Axis(0), &free)
}

/// `dJ/dg(x) = dJ/du(x) - tau v(x) - div(phi_q(grad u) grad v)(x)` at labeled nodes.
pub fn grad_g(
    g: &Graph,
    labels: &LabelData,
    u: ArrayView2<f64>,
    v: ArrayView2<f64>,
    upstream: ArrayView2<f64>,
    phi: &PhiSpec,
    tau: f64,
) -> Result<Array2<f64>> {
    check_pair(g, u, v)?;
    check_node_matrix("upstream gradient", upstream, g.n(), u.ncols())?;
    let classes = u.ncols();
    let mut div = Array2::<f64>::zeros((g.n(), classes));
    for (i, j, w) in g.weights().iter() {
        for c in 0..classes {
            let k = phi.linearized_coeff(w, u[[i, c]] - u[[j, c]], i, j);
            let flux = k * (v[[i, c]] - v[[j, c]]);
            div[[i, c]] += flux;
            div[[j, c]] -= flux;
        }
    }
    let mut out = Array2::zeros((labels.len(), classes));
    for (r, &x) in labels.indices().iter().enumerate() {
        for c in 0..classes {
            out[[r, c]] = upstream[[x, c]] - tau * v[[x, c]] - div[[x, c]];
        }
    }
    Ok(out)
}

/// Intermediate matrices of the feature gradient `grad_X J = L_{H - M} X`.
#[derive(Debug, Clone)]
pub struct GradWorkspace {
    /// `g_xy + g_yx` per edge.
    pub g_tilde: Vec<f64>,
    /// `eta'` at each edge's kernel argument.
    pub kernel_slope: Vec<f64>,
    /// Bandwidth sensitivities; all zero for constant bandwidths.
    pub b: Vec<f64>,
    pub h: SparseSymMatrix,
    pub m: SparseSymMatrix,
}

impl GradWorkspace {
    pub fn new(g: &Graph, x: &FeatureMatrix, partials: &EdgeFunction) -> Result<Self> {
        let n = g.n();
        if x.n() != n {
            return Err(shape_err(format!("{n} feature rows"), x.n()));
        }
        if partials.num_edges() != g.num_edges() || partials.backward.len() != g.num_edges() {
            return Err(shape_err(
                format!("{} edge partials", g.num_edges()),
                partials.num_edges(),
            ));
        }
        let eps = g.eps();
        if let Some(node) = eps.iter().position(|&e| !(e > 0.0)) {
            return Err(GllError::DegenerateBandwidth { node });
        }
        let self_tuning = g.bandwidth() == BandwidthMode::SelfTuning;
        if self_tuning && g.kth_neighbor().len() != n {
            return Err(GllError::InvalidArgument(
                "self-tuning feature gradient needs k-th neighbor indices".into(),
            ));
        }
        let kernel = g.kernel();
        let edges = g.pattern().edges();
        let adjacency = g.adjacency().values();
        let mut g_tilde = Vec::with_capacity(edges.len());
        let mut kernel_slope = Vec::with_capacity(edges.len());
        let mut h = Vec::with_capacity(edges.len());
        let mut b = vec![0.0; n];
        for (e, &(i, j)) in edges.iter().enumerate() {
            let gt = partials.forward[e] + partials.backward[e];
            let d2 = x.sq_dist(i, j);
            let ee = eps[i] * eps[j];
            let slope = kernel.eta_prime(d2 / (2.0 * ee));
            let coupling = gt * adjacency[e] * slope;
            h.push(coupling / ee);
            if self_tuning {
                b[i] += coupling * d2 / (2.0 * eps[i].powi(3) * eps[j]);
                b[j] += coupling * d2 / (2.0 * eps[j].powi(3) * eps[i]);
            }
            g_tilde.push(gt);
            kernel_slope.push(slope);
        }
        let mut m = vec![0.0; edges.len()];
        if self_tuning {
            let kth = g.kth_neighbor();
            for (jn, &kj) in kth.iter().enumerate() {
                let e = g.pattern().edge_id(jn, kj).ok_or_else(|| {
                    GllError::InvalidArgument(format!(
                        "k-th neighbor {kj} of node {jn} is not adjacent"
                    ))
                })?;
                m[e] += b[jn];
            }
        }
        Ok(Self {
            g_tilde,
            kernel_slope,
            b,
            h: SparseSymMatrix::on_pattern(g.pattern().clone(), h)?,
            m: SparseSymMatrix::on_pattern(g.pattern().clone(), m)?,
        })
    }

    /// `L_{H - M} X`.
    pub fn apply(&self, x: &FeatureMatrix) -> Result<Array2<f64>> {
        let diff: Vec<f64> = self
            .h
            .values()
            .iter()
            .zip(self.m.values())
            .map(|(h, m)| h - m)
            .collect();
        let s = SparseSymMatrix::on_pattern(self.h.pattern().clone(), diff)?;
        s.laplacian_apply_rows(x.view())
    }
}

/// Backpropagates per-direction weight partials `g_xy = dJ/dw_xy` to the features.
pub fn grad_features(g: &Graph, x: &FeatureMatrix, partials: &EdgeFunction) -> Result<Array2<f64>> {
    GradWorkspace::new(g, x, partials)?.apply(x)
}

/// Every gradient the layer exposes.
#[derive(Debug, Clone)]
pub struct GradBundle {
    /// Undirected-edge derivative (see [`grad_w`]).
    pub grad_w: SparseSymMatrix,
    pub grad_f: Array2<f64>,
    pub grad_g: Array2<f64>,
    pub grad_x: Array2<f64>,
    pub adjoint: AdjointSolution,
}

/// Full backward pass from `dJ/du` to every layer input.
#[allow(clippy::too_many_arguments)]
pub fn gll_backward(
    g: &Graph,
    x: &FeatureMatrix,
    labels: &LabelData,
    u: ArrayView2<f64>,
    upstream: ArrayView2<f64>,
    phi: &PhiSpec,
    tau: f64,
    cfg: &SolverConfig,
) -> Result<GradBundle> {
    let adjoint = solve_adjoint(g, labels, u, upstream, phi, tau, cfg)?;
    let v = adjoint.v.view();
    let gw = grad_w(g, u, v, phi)?;
    let grad_x = grad_features(g, x, &partials_from_edge_derivative(&gw))?;
    Ok(GradBundle {
        grad_f: grad_f(v, labels),
        grad_g: grad_g(g, labels, u, v, upstream, phi, tau)?,
        grad_w: gw,
        grad_x,
        adjoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn path3() -> Graph {
        Graph::from_weighted_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap()
    }

    #[test]
    fn adjoint_on_path() {
        let g = path3();
        let l = LabelData::new(vec![0, 2], array![[0.0], [1.0]]).unwrap();
        let u = array![[0.0], [0.5], [1.0]];
        let up = array![[0.0], [1.0], [0.0]];
        let cfg = SolverConfig::default();
        let adj = solve_adjoint(&g, &l, u.view(), up.view(), &PhiSpec::default(), 0.0, &cfg).unwrap();
        assert_eq!(adj.v[[0, 0]], 0.0);
        assert!((adj.v[[1, 0]] - 0.5).abs() < 1e-14);
        assert_eq!(adj.v[[2, 0]], 0.0);
        let gf = grad_f(adj.v.view(), &l);
        assert_eq!(gf.dim(), (1, 1));
        assert!((gf[[0, 0]] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn zero_upstream_is_annihilated() {
        let g = path3();
        let l = LabelData::new(vec![0, 2], array![[0.0], [1.0]]).unwrap();
        let u = array![[0.0], [0.5], [1.0]];
        let up = Array2::zeros((3, 1));
        let cfg = SolverConfig::default();
        let adj = solve_adjoint(&g, &l, u.view(), up.view(), &PhiSpec::default(), 0.0, &cfg).unwrap();
        assert!(adj.v.iter().all(|&v| v == 0.0));
        let gw = grad_w(&g, u.view(), adj.v.view(), &PhiSpec::default()).unwrap();
        assert!(gw.values().iter().all(|&v| v == 0.0));
        let gg = grad_g(&g, &l, u.view(), adj.v.view(), up.view(), &PhiSpec::default(), 0.0).unwrap();
        assert!(gg.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_u_gives_zero_weight_gradient() {
        let g = path3();
        let u = array![[2.0], [2.0], [2.0]];
        let v = array![[0.0], [0.3], [0.0]];
        let gw = grad_w(&g, u.view(), v.view(), &PhiSpec::default()).unwrap();
        assert!(gw.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn flat_plaplace_adjoint_is_singular() {
        let g = path3();
        let l = LabelData::new(vec![0], array![[1.0]]).unwrap();
        let u = array![[1.0], [1.0], [1.0]];
        let up = array![[0.0], [1.0], [1.0]];
        let cfg = SolverConfig::default();
        let err = solve_adjoint(&g, &l, u.view(), up.view(), &PhiSpec::PLaplace(4.0), 0.0, &cfg).unwrap_err();
        assert!(matches!(err, GllError::AdjointSingular(_)));
        // tau > 0 restores solvability, with floored coefficients flagged
        let adj = solve_adjoint(&g, &l, u.view(), up.view(), &PhiSpec::PLaplace(4.0), 0.5, &cfg).unwrap();
        assert!(adj.has_floor_warning());
        assert!((adj.v[[1, 0]] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn directed_partials_sum_to_edge_derivative() {
        let g = Graph::from_weighted_edges(4, &[(0, 1, 0.4), (1, 2, 1.3), (2, 3, 0.9), (0, 2, 0.2)]).unwrap();
        let u = array![[0.0, 1.0], [0.2, 0.7], [0.9, 0.1], [1.0, 0.0]];
        let v = array![[0.0, 0.0], [0.3, -0.2], [0.1, 0.4], [0.0, 0.0]];
        for phi in [PhiSpec::default(), PhiSpec::PLaplace(3.0)] {
            let pair = grad_w(&g, u.view(), v.view(), &phi).unwrap();
            let dir = grad_w_directed(&g, u.view(), v.view(), &phi).unwrap();
            for e in 0..g.num_edges() {
                let s = dir.forward[e] + dir.backward[e];
                assert!((s - pair.values()[e]).abs() < 1e-15);
            }
        }
    }
}
