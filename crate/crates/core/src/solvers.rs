//! Forward label propagation: Laplace learning (hard and soft constraints,
//! optional diagonal perturbation `tau`), p-Laplace learning, Poisson learning
//! and general elliptic equations `tau u + div phi(grad u) = f` off the labeled set.
//!
//! Multi-class problems are solved one class channel at a time.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{shape_err, GllError, Result};
use crate::graph::{components_of_pattern, connected_components, Graph};
use crate::linalg::ReducedSystem;

/// Labeled nodes and their boundary values, one row per labeled node.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelData {
    indices: Vec<usize>,
    values: Array2<f64>,
}

impl LabelData {
    /// Rows of `values` belong to `indices` in the given order; both are
    /// re-sorted by node index.
    pub fn new(indices: Vec<usize>, values: Array2<f64>) -> Result<Self> {
        if indices.len() != values.nrows() {
            return Err(shape_err(
                format!("{} boundary rows", indices.len()),
                values.nrows(),
            ));
        }
        if values.ncols() == 0 {
            return Err(GllError::InvalidArgument("need at least one class".into()));
        }
        let mut order: Vec<usize> = (0..indices.len()).collect();
        order.sort_by_key(|&r| indices[r]);
        let sorted: Vec<usize> = order.iter().map(|&r| indices[r]).collect();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(GllError::InvalidArgument(format!(
                "labeled node {} listed twice",
                w[0]
            )));
        }
        let values = values.select(Axis(0), &order);
        Ok(Self {
            indices: sorted,
            values,
        })
    }

    /// One-hot boundary values from integer class labels.
    pub fn from_classes(indices: &[usize], classes: &[usize], num_classes: usize) -> Result<Self> {
        if indices.len() != classes.len() {
            return Err(shape_err(indices.len(), classes.len()));
        }
        let mut values = Array2::zeros((indices.len(), num_classes));
        for (r, &c) in classes.iter().enumerate() {
            if c >= num_classes {
                return Err(GllError::InvalidArgument(format!(
                    "class {c} out of range for {num_classes} classes"
                )));
            }
            values[[r, c]] = 1.0;
        }
        Self::new(indices.to_vec(), values)
    }

    pub fn empty(num_classes: usize) -> Self {
        Self {
            indices: Vec::new(),
            values: Array2::zeros((0, num_classes)),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn num_classes(&self) -> usize {
        self.values.ncols()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Indicator of the labeled set; validates indices against `n`.
    pub fn mask(&self, n: usize) -> Result<Vec<bool>> {
        let mut mask = vec![false; n];
        for &i in &self.indices {
            if i >= n {
                return Err(GllError::InvalidArgument(format!(
                    "labeled node {i} out of range for {n} nodes"
                )));
            }
            mask[i] = true;
        }
        Ok(mask)
    }

    /// Boundary values of class `c` scattered into a length-`n` vector.
    pub(crate) fn boundary(&self, n: usize, c: usize) -> Vec<f64> {
        let mut g = vec![0.0; n];
        for (r, &i) in self.indices.iter().enumerate() {
            g[i] = self.values[[r, c]];
        }
        g
    }

    /// Unlabeled node indices, ascending.
    pub fn unlabeled(&self, n: usize) -> Vec<usize> {
        let mut mask = vec![false; n];
        for &i in &self.indices {
            if i < n {
                mask[i] = true;
            }
        }
        (0..n).filter(|&x| !mask[x]).collect()
    }
}

/// User-supplied edge flux `phi(q, x, y)` with its `q`-derivative.
pub trait CustomPhi: Send + Sync {
    fn phi(&self, q: f64, x: usize, y: usize) -> f64;
    fn phi_q(&self, q: f64, x: usize, y: usize) -> f64;
    /// Whether `phi(-q, x, y) = -phi(q, y, x)`.
    fn preserves_vector_fields(&self) -> bool;
}

#[derive(Clone)]
pub enum PhiSpec {
    /// `phi(q) = |q|^(p-2) q`; `p = 2` is Laplace learning.
    PLaplace(f64),
    Custom(Arc<dyn CustomPhi>),
}

impl fmt::Debug for PhiSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhiSpec::PLaplace(p) => write!(f, "PLaplace({p})"),
            PhiSpec::Custom(c) => write!(
                f,
                "Custom(preserves_vector_fields={})",
                c.preserves_vector_fields()
            ),
        }
    }
}

impl Default for PhiSpec {
    fn default() -> Self {
        PhiSpec::PLaplace(2.0)
    }
}

impl PhiSpec {
    pub fn phi(&self, q: f64, x: usize, y: usize) -> f64 {
        match self {
            PhiSpec::PLaplace(p) => {
                if q == 0.0 {
                    0.0
                } else {
                    q.abs().powf(p - 2.0) * q
                }
            }
            PhiSpec::Custom(c) => c.phi(q, x, y),
        }
    }

    pub fn phi_q(&self, q: f64, x: usize, y: usize) -> f64 {
        match self {
            PhiSpec::PLaplace(p) if *p == 2.0 => 1.0,
            PhiSpec::PLaplace(p) => (p - 1.0) * q.abs().powf(p - 2.0),
            PhiSpec::Custom(c) => c.phi_q(q, x, y),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, PhiSpec::PLaplace(p) if *p == 2.0)
    }

    pub fn preserves_vector_fields(&self) -> bool {
        match self {
            PhiSpec::PLaplace(_) => true,
            PhiSpec::Custom(c) => c.preserves_vector_fields(),
        }
    }

    /// Symmetric linearization coefficient of edge `(i, j)`:
    /// `1/2 w (phi_q(grad u(i,j), i, j) + phi_q(grad u(j,i), j, i))`.
    pub(crate) fn linearized_coeff(&self, w: f64, du: f64, i: usize, j: usize) -> f64 {
        if self.is_linear() {
            return w;
        }
        0.5 * w * (self.phi_q(du, i, j) + self.phi_q(-du, j, i))
    }
}

/// Tolerances and iteration limits shared by the solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Relative residual target of each linear solve.
    pub tol: f64,
    /// Linear iteration cap; `None` means `10 n`.
    pub max_iter: Option<usize>,
    /// Stopping threshold of nonlinear outer iterations (max-norm).
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Damping of the p-Laplace reweighting update.
    pub damping: f64,
    /// Floor on `|grad u|` inside p-Laplace edge weights.
    pub grad_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
            outer_tol: 1e-10,
            max_outer: 5000,
            damping: 0.5,
            grad_floor: 1e-10,
        }
    }
}

impl SolverConfig {
    pub(crate) fn iteration_cap(&self, n: usize) -> usize {
        self.max_iter.unwrap_or(10 * n.max(1))
    }
}

/// `n x C` node values plus per-class solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub u: Array2<f64>,
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
}

/// Full description of `tau u + div phi(grad u) = f` off `L`, `u = g` on `L`.
#[derive(Debug, Clone)]
pub struct EllipticProblem {
    pub phi: PhiSpec,
    pub tau: f64,
    /// `n x C` source; rows on labeled nodes are ignored for hard constraints.
    pub source: Option<Array2<f64>>,
    pub labels: LabelData,
    /// Replaces hard constraints with the penalty `lambda sum_L |u - g|^2`.
    pub soft_lambda: Option<f64>,
}

impl EllipticProblem {
    pub fn laplace(labels: LabelData, tau: f64) -> Self {
        Self {
            phi: PhiSpec::default(),
            tau,
            source: None,
            labels,
            soft_lambda: None,
        }
    }
}

/// Fails when some connected component can never be pinned down: no labeled
/// node there and no diagonal perturbation.
pub fn check_solvable(g: &Graph, labels: &LabelData, tau: f64) -> Result<()> {
    if tau > 0.0 {
        return Ok(());
    }
    let mask = labels.mask(g.n())?;
    let comps = connected_components(g);
    let mut has_label = vec![false; comps.count];
    for (x, &c) in comps.labels.iter().enumerate() {
        has_label[c] |= mask[x];
    }
    if let Some(component) = has_label.iter().position(|&h| !h) {
        let node = comps.representatives()[component];
        return Err(GllError::Unsolvable { component, node });
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(GllError::InvalidArgument(format!("tau must be >= 0, got {tau}")));
    }
    Ok(())
}

fn check_source(g: &Graph, labels: &LabelData, source: Option<&Array2<f64>>) -> Result<()> {
    if let Some(f) = source {
        if f.dim() != (g.n(), labels.num_classes()) {
            return Err(shape_err(
                format!("{}x{} source", g.n(), labels.num_classes()),
                format!("{}x{}", f.nrows(), f.ncols()),
            ));
        }
    }
    Ok(())
}

fn assemble(columns: Vec<(Vec<f64>, f64, usize)>, n: usize) -> Solution {
    let c = columns.len();
    let mut u = Array2::zeros((n, c));
    let mut residuals = Vec::with_capacity(c);
    let mut iterations = Vec::with_capacity(c);
    for (k, (col, res, it)) in columns.into_iter().enumerate() {
        u.column_mut(k).assign(&ndarray::Array1::from(col));
        residuals.push(res);
        iterations.push(it);
    }
    Solution {
        u,
        residuals,
        iterations,
    }
}

fn source_column(source: Option<&Array2<f64>>, c: usize) -> Option<Vec<f64>> {
    source.map(|f| f.column(c).to_vec())
}

/// Hard-constrained Laplace learning with `Delta_tau = Delta + tau I`.
pub fn solve_laplace(g: &Graph, labels: &LabelData, tau: f64, cfg: &SolverConfig) -> Result<Solution> {
    solve_laplace_with_source(g, labels, tau, None, cfg)
}

/// `(Delta + tau I) u = f` off `L`, `u = g` on `L`.
pub fn solve_laplace_with_source(
    g: &Graph,
    labels: &LabelData,
    tau: f64,
    source: Option<&Array2<f64>>,
    cfg: &SolverConfig,
) -> Result<Solution> {
    check_tau(tau)?;
    check_source(g, labels, source)?;
    check_solvable(g, labels, tau)?;
    let n = g.n();
    let fixed = labels.mask(n)?;
    let sys = ReducedSystem::new(g.pattern(), g.weights().values(), &vec![tau; n], &fixed);
    let cap = cfg.iteration_cap(n);
    let columns = (0..labels.num_classes())
        .into_par_iter()
        .map(|c| {
            let bnd = labels.boundary(n, c);
            let f = source_column(source, c);
            let b = sys.rhs(f.as_deref(), &bnd);
            let out = sys.solve(&b, None, cfg.tol, cap)?;
            Ok((sys.expand(&out.x, &bnd), out.rel_residual, out.iterations))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(columns, n))
}

/// Soft-constrained Laplace learning: `(Delta + tau I + lambda xi) u = lambda xi g`.
pub fn solve_laplace_soft(
    g: &Graph,
    labels: &LabelData,
    lambda: f64,
    tau: f64,
    cfg: &SolverConfig,
) -> Result<Solution> {
    solve_soft_with_source(g, labels, lambda, tau, None, cfg)
}

fn solve_soft_with_source(
    g: &Graph,
    labels: &LabelData,
    lambda: f64,
    tau: f64,
    source: Option<&Array2<f64>>,
    cfg: &SolverConfig,
) -> Result<Solution> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(GllError::InvalidArgument(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    check_tau(tau)?;
    check_source(g, labels, source)?;
    check_solvable(g, labels, tau)?;
    let n = g.n();
    let mask = labels.mask(n)?;
    let extra: Vec<f64> = mask
        .iter()
        .map(|&l| tau + if l { lambda } else { 0.0 })
        .collect();
    let sys = ReducedSystem::new(g.pattern(), g.weights().values(), &extra, &vec![false; n]);
    let cap = cfg.iteration_cap(n);
    let columns = (0..labels.num_classes())
        .into_par_iter()
        .map(|c| {
            let mut rhs: Vec<f64> = labels.boundary(n, c).iter().map(|v| lambda * v).collect();
            if let Some(f) = source {
                for (r, fv) in rhs.iter_mut().zip(f.column(c)) {
                    *r += fv;
                }
            }
            let b = sys.rhs(Some(&rhs), &[]);
            let out = sys.solve(&b, None, cfg.tol, cap)?;
            Ok((out.x, out.rel_residual, out.iterations))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(columns, n))
}

/// p-Laplace learning by damped iteratively reweighted linear solves.
pub fn solve_plaplace(g: &Graph, labels: &LabelData, p: f64, tau: f64, cfg: &SolverConfig) -> Result<Solution> {
    solve_plaplace_with_source(g, labels, p, tau, None, cfg)
}

fn solve_plaplace_with_source(
    g: &Graph,
    labels: &LabelData,
    p: f64,
    tau: f64,
    source: Option<&Array2<f64>>,
    cfg: &SolverConfig,
) -> Result<Solution> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(GllError::InvalidArgument(format!("p must exceed 1, got {p}")));
    }
    if labels.is_empty() {
        return Err(GllError::InvalidArgument(
            "p-Laplace learning needs at least one labeled node".into(),
        ));
    }
    let start = solve_laplace_with_source(g, labels, tau, source, cfg)?;
    let n = g.n();
    let fixed = labels.mask(n)?;
    let cap = cfg.iteration_cap(n);
    let edges = g.pattern().edges();
    let w = g.weights().values();
    let columns = (0..labels.num_classes())
        .into_par_iter()
        .map(|c| {
            let bnd = labels.boundary(n, c);
            let f = source_column(source, c);
            let mut u = start.u.column(c).to_vec();
            let mut last_change = f64::INFINITY;
            let mut last_res = 0.0;
            for outer in 1..=cfg.max_outer {
                let coeffs: Vec<f64> = edges
                    .iter()
                    .zip(w)
                    .map(|(&(i, j), &we)| we * (u[i] - u[j]).abs().max(cfg.grad_floor).powf(p - 2.0))
                    .collect();
                let sys = ReducedSystem::new(g.pattern(), &coeffs, &vec![tau; n], &fixed);
                let b = sys.rhs(f.as_deref(), &bnd);
                let x0: Vec<f64> = sys.free().iter().map(|&x| u[x]).collect();
                let out = sys.solve(&b, Some(&x0), cfg.tol, cap)?;
                last_res = out.rel_residual;
                let target = sys.expand(&out.x, &bnd);
                let mut change: f64 = 0.0;
                for (ux, tx) in u.iter_mut().zip(&target) {
                    let next = (1.0 - cfg.damping) * *ux + cfg.damping * tx;
                    change = change.max((next - *ux).abs());
                    *ux = next;
                }
                last_change = change;
                if change <= cfg.outer_tol {
                    return Ok((u, last_res, outer));
                }
            }
            let _ = last_res;
            Err(GllError::NoConvergence {
                solver: "p-Laplace reweighting",
                iterations: cfg.max_outer,
                residual: last_change,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(columns, n))
}

/// Poisson learning: `Delta u = sum_L (g - mean g) delta_x`, normalized to
/// zero degree-weighted mean.
pub fn solve_poisson(g: &Graph, labels: &LabelData, cfg: &SolverConfig) -> Result<Solution> {
    if labels.is_empty() {
        return Err(GllError::InvalidArgument(
            "Poisson learning needs at least one labeled node".into(),
        ));
    }
    let n = g.n();
    labels.mask(n)?;
    let comps = connected_components(g);
    if comps.count > 1 {
        return Err(GllError::Unsolvable {
            component: 1,
            node: comps.representatives()[1],
        });
    }
    let deg = g.degrees();
    let deg_total: f64 = deg.iter().sum();
    let sys = ReducedSystem::new(g.pattern(), g.weights().values(), &vec![0.0; n], &vec![false; n]);
    let cap = cfg.iteration_cap(n);
    let m = labels.len() as f64;
    let columns = (0..labels.num_classes())
        .into_par_iter()
        .map(|c| {
            let vals = labels.values();
            let mean = vals.column(c).sum() / m;
            let mut src = vec![0.0; n];
            for (r, &i) in labels.indices().iter().enumerate() {
                src[i] = vals[[r, c]] - mean;
            }
            let b = sys.rhs(Some(&src), &[]);
            let out = sys.solve(&b, None, cfg.tol, cap)?;
            let mut u = out.x;
            if deg_total > 0.0 {
                let shift = node_weighted_mean(&u, &deg, deg_total);
                u.iter_mut().for_each(|x| *x -= shift);
            }
            Ok((u, out.rel_residual, out.iterations))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(columns, n))
}

fn node_weighted_mean(u: &[f64], deg: &[f64], total: f64) -> f64 {
    u.iter().zip(deg).map(|(a, d)| a * d).sum::<f64>() / total
}

/// Solves a general [`EllipticProblem`]. Linear problems go straight to CG,
/// p-Laplace problems to reweighting, custom `phi` to damped Newton.
pub fn solve_elliptic(g: &Graph, problem: &EllipticProblem, cfg: &SolverConfig) -> Result<Solution> {
    let src = problem.source.as_ref();
    if let Some(lambda) = problem.soft_lambda {
        if !problem.phi.is_linear() {
            return Err(GllError::InvalidArgument(
                "soft constraints are only supported for linear Laplace learning".into(),
            ));
        }
        return solve_soft_with_source(g, &problem.labels, lambda, problem.tau, src, cfg);
    }
    match &problem.phi {
        PhiSpec::PLaplace(p) if *p == 2.0 => {
            solve_laplace_with_source(g, &problem.labels, problem.tau, src, cfg)
        }
        PhiSpec::PLaplace(p) => solve_plaplace_with_source(g, &problem.labels, *p, problem.tau, src, cfg),
        PhiSpec::Custom(_) => solve_newton(g, problem, cfg),
    }
}

/// Residual `tau u + div phi(grad u) - f` at every node (zero rows are not
/// forced on `L`; callers restrict as needed).
pub fn elliptic_residual(g: &Graph, phi: &PhiSpec, tau: f64, u: &[f64], f: Option<&[f64]>) -> Result<Vec<f64>> {
    if u.len() != g.n() {
        return Err(shape_err(g.n(), u.len()));
    }
    let mut r: Vec<f64> = u.iter().enumerate().map(|(x, &ux)| tau * ux - f.map_or(0.0, |f| f[x])).collect();
    for (i, j, w) in g.weights().iter() {
        let du = u[i] - u[j];
        let flux = 0.5 * w * (phi.phi(du, i, j) - phi.phi(-du, j, i));
        r[i] += flux;
        r[j] -= flux;
    }
    Ok(r)
}

fn solve_newton(g: &Graph, problem: &EllipticProblem, cfg: &SolverConfig) -> Result<Solution> {
    let labels = &problem.labels;
    let tau = problem.tau;
    check_tau(tau)?;
    check_source(g, labels, problem.source.as_ref())?;
    check_solvable(g, labels, tau)?;
    let n = g.n();
    let fixed = labels.mask(n)?;
    let cap = cfg.iteration_cap(n);
    let start = solve_laplace_with_source(g, labels, tau, problem.source.as_ref(), cfg)?;
    let phi = &problem.phi;
    let edges = g.pattern().edges();
    let w = g.weights().values();
    let free_norm = |r: &[f64]| -> f64 {
        r.iter()
            .zip(&fixed)
            .filter(|(_, &l)| !l)
            .map(|(v, _)| v.abs())
            .fold(0.0, f64::max)
    };
    let columns = (0..labels.num_classes())
        .into_par_iter()
        .map(|c| {
            let f = source_column(problem.source.as_ref(), c);
            let mut u = start.u.column(c).to_vec();
            let mut res = elliptic_residual(g, phi, tau, &u, f.as_deref())?;
            let mut norm = free_norm(&res);
            for outer in 0..cfg.max_outer {
                if norm <= cfg.outer_tol {
                    return Ok((u, norm, outer));
                }
                let coeffs: Vec<f64> = edges
                    .iter()
                    .zip(w)
                    .map(|(&(i, j), &we)| phi.linearized_coeff(we, u[i] - u[j], i, j))
                    .collect();
                let sys = ReducedSystem::new(g.pattern(), &coeffs, &vec![tau; n], &fixed);
                let neg: Vec<f64> = res.iter().map(|r| -r).collect();
                let b = sys.rhs(Some(&neg), &vec![0.0; n]);
                let step = sys.solve(&b, None, cfg.tol, cap)?;
                let delta = sys.expand(&step.x, &vec![0.0; n]);
                let mut t = 1.0;
                loop {
                    let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + t * d).collect();
                    let trial_res = elliptic_residual(g, phi, tau, &trial, f.as_deref())?;
                    let trial_norm = free_norm(&trial_res);
                    if trial_norm < norm || t < 1e-8 {
                        u = trial;
                        res = trial_res;
                        norm = trial_norm;
                        break;
                    }
                    t *= 0.5;
                }
            }
            if norm <= cfg.outer_tol {
                Ok((u, norm, cfg.max_outer))
            } else {
                Err(GllError::NoConvergence {
                    solver: "Newton",
                    iterations: cfg.max_outer,
                    residual: norm,
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(columns, n))
}

/// Per-node argmax over class channels; ties go to the lowest class.
pub fn predict(u: ArrayView2<f64>) -> Vec<usize> {
    u.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Components of the subgraph whose edge coefficients exceed `threshold`.
pub(crate) fn coefficient_components(g: &Graph, coeffs: &[f64], threshold: f64) -> crate::graph::Components {
    components_of_pattern(g.pattern(), |e| coeffs[e] > threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn path3() -> Graph {
        Graph::from_weighted_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap()
    }

    fn ends() -> LabelData {
        LabelData::new(vec![2, 0], array![[1.0], [0.0]]).unwrap()
    }

    #[test]
    fn label_data_sorts_and_validates() {
        let l = ends();
        assert_eq!(l.indices(), &[0, 2]);
        assert_eq!(l.values(), array![[0.0], [1.0]]);
        assert!(LabelData::new(vec![1, 1], array![[0.0], [1.0]]).is_err());
        assert!(l.mask(2).is_err());
        let oh = LabelData::from_classes(&[3, 1], &[0, 1], 2).unwrap();
        assert_eq!(oh.values(), array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn harmonic_midpoint() {
        let s = solve_laplace(&path3(), &ends(), 0.0, &SolverConfig::default()).unwrap();
        assert_eq!(s.u[[0, 0]], 0.0);
        assert!((s.u[[1, 0]] - 0.5).abs() < 1e-14);
        assert_eq!(s.u[[2, 0]], 1.0);
    }

    #[test]
    fn constant_boundary_propagates() {
        let g = Graph::from_weighted_edges(4, &[(0, 1, 0.3), (1, 2, 2.0), (2, 3, 0.7), (0, 3, 1.1)]).unwrap();
        let l = LabelData::new(vec![0, 2], array![[0.25], [0.25]]).unwrap();
        let s = solve_laplace(&g, &l, 0.0, &SolverConfig::default()).unwrap();
        for v in s.u.iter() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn unlabeled_component_is_rejected_without_tau() {
        let g = Graph::from_weighted_edges(4, &[(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        let l = LabelData::new(vec![0], array![[1.0]]).unwrap();
        let err = solve_laplace(&g, &l, 0.0, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, GllError::Unsolvable { component: 1, node: 2 }));
        let s = solve_laplace(&g, &l, 0.1, &SolverConfig::default()).unwrap();
        assert_eq!(s.u[[2, 0]], 0.0);
    }

    #[test]
    fn soft_limit_and_zero_boundary() {
        let cfg = SolverConfig::default();
        let s = solve_laplace_soft(&path3(), &ends(), 1e8, 0.0, &cfg).unwrap();
        assert!((s.u[[1, 0]] - 0.5).abs() < 1e-6);
        let zero = LabelData::new(vec![0, 2], array![[0.0], [0.0]]).unwrap();
        let s = solve_laplace_soft(&path3(), &zero, 1.0, 0.0, &cfg).unwrap();
        assert!(s.u.iter().all(|&v| v == 0.0));
        assert!(solve_laplace_soft(&path3(), &ends(), 0.0, 0.0, &cfg).is_err());
    }

    #[test]
    fn plaplace_symmetric_midpoint() {
        for p in [1.5, 3.0, 4.0] {
            let s = solve_plaplace(&path3(), &ends(), p, 0.0, &SolverConfig::default()).unwrap();
            assert!((s.u[[1, 0]] - 0.5).abs() < 1e-9, "p = {p}");
        }
        assert!(solve_plaplace(&path3(), &ends(), 1.0, 0.0, &SolverConfig::default()).is_err());
    }

    #[test]
    fn poisson_identical_labels_is_zero() {
        let g = path3();
        let l = LabelData::new(vec![0, 2], array![[1.0], [1.0]]).unwrap();
        let s = solve_poisson(&g, &l, &SolverConfig::default()).unwrap();
        assert!(s.u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn poisson_antisymmetric_on_path() {
        let g = Graph::from_weighted_edges(5, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 4, 1.0)]).unwrap();
        let l = LabelData::from_classes(&[0, 4], &[0, 1], 2).unwrap();
        let s = solve_poisson(&g, &l, &SolverConfig::default()).unwrap();
        for c in 0..2 {
            for x in 0..5 {
                assert!((s.u[[x, c]] + s.u[[4 - x, c]]).abs() < 1e-10);
            }
        }
        let disconnected = Graph::from_weighted_edges(4, &[(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        let l = LabelData::from_classes(&[0, 2], &[0, 1], 2).unwrap();
        assert!(matches!(
            solve_poisson(&disconnected, &l, &SolverConfig::default()),
            Err(GllError::Unsolvable { component: 1, node: 2 })
        ));
    }

    #[test]
    fn predict_ties_go_low() {
        let u = array![[0.0, 1.0, 0.0], [0.5, 0.5, 0.0], [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]];
        assert_eq!(predict(u.view()), vec![1, 0, 0]);
    }

    struct Cubic;
    impl CustomPhi for Cubic {
        fn phi(&self, q: f64, _: usize, _: usize) -> f64 {
            q + q * q * q
        }
        fn phi_q(&self, q: f64, _: usize, _: usize) -> f64 {
            1.0 + 3.0 * q * q
        }
        fn preserves_vector_fields(&self) -> bool {
            true
        }
    }

    #[test]
    fn newton_solves_custom_phi() {
        let g = Graph::from_weighted_edges(4, &[(0, 1, 1.0), (1, 2, 0.5), (2, 3, 2.0), (1, 3, 0.3)]).unwrap();
        let l = LabelData::new(vec![0, 3], array![[0.0], [2.0]]).unwrap();
        let problem = EllipticProblem {
            phi: PhiSpec::Custom(Arc::new(Cubic)),
            tau: 0.1,
            source: None,
            labels: l,
            soft_lambda: None,
        };
        let s = solve_elliptic(&g, &problem, &SolverConfig::default()).unwrap();
        let r = elliptic_residual(&g, &problem.phi, 0.1, &s.u.column(0).to_vec(), None).unwrap();
        assert!(r[1].abs() < 1e-10 && r[2].abs() < 1e-10);
        assert_eq!(s.u[[3, 0]], 2.0);
    }
}
