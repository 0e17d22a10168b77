//! Central finite-difference checks of the backward pass on random graphs.
//!
//! The loss is softmax cross-entropy of `u` on the unlabeled nodes. Feature
//! perturbations keep the neighbor pattern fixed and only recompute weights.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::adjoint::gll_backward;
use crate::error::{GllError, Result};
use crate::graph::{build_graph, connected_components, BandwidthMode, FeatureMatrix, Graph, WeightKernel};
use crate::nn::loss::cross_entropy;
use crate::solvers::{solve_elliptic, EllipticProblem, LabelData, PhiSpec, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckCase {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub classes: usize,
    pub tau: f64,
    pub p: f64,
    pub seed: u64,
}

/// `count` cases cycling through `n in {15, 30}`, `d in {2, 5}`,
/// `k in {3, 5}`, `C in {2, 3}` and `tau in {0, 0.1}`.
pub fn gradcheck_cases(count: usize, seed: u64, p: f64) -> Vec<GradcheckCase> {
    (0..count)
        .map(|i| GradcheckCase {
            n: [15, 30][i % 2],
            d: [2, 5][(i / 2) % 2],
            k: [3, 5][(i / 4) % 2],
            classes: [2, 3][(i / 8) % 2],
            tau: [0.0, 0.1][(i / 16 + i) % 2],
            p,
            seed: seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckEntry {
    /// `X[node,dim]`, `f[node,class]` or `g[label,class]`.
    pub parameter: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradcheckEntry {
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }

    /// Relative tolerance, or absolute tolerance when `|analytic| < 1e-3`.
    pub fn passes(&self, rel_tol: f64, abs_tol: f64) -> bool {
        if self.analytic.abs() < 1e-3 {
            (self.analytic - self.numeric).abs() <= abs_tol
        } else {
            self.relative_error() <= rel_tol
        }
    }
}

struct Instance {
    x: FeatureMatrix,
    graph: Graph,
    labels: LabelData,
    truth: Vec<usize>,
    free: Vec<usize>,
    phi: PhiSpec,
    tau: f64,
}

impl Instance {
    fn new(case: &GradcheckCase) -> Result<Self> {
        if case.classes == 0 || case.n <= case.k {
            return Err(GllError::InvalidArgument(format!("invalid gradient check case {case:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
        let x = FeatureMatrix::new(Array2::from_shape_fn((case.n, case.d), |_| rng.sample(StandardNormal)))?;
        let graph = build_graph(&x, case.k, WeightKernel::default(), BandwidthMode::SelfTuning)?;
        let mut base = connected_components(&graph).representatives();
        while base.len() < 2 * case.classes {
            let r = rng.random_range(0..case.n);
            if !base.contains(&r) {
                base.push(r);
            }
        }
        let classes: Vec<usize> = (0..base.len()).map(|i| i % case.classes).collect();
        let labels = LabelData::from_classes(&base, &classes, case.classes)?;
        let truth = (0..case.n).map(|_| rng.random_range(0..case.classes)).collect();
        Ok(Self {
            free: labels.unlabeled(case.n),
            x,
            graph,
            labels,
            truth,
            phi: PhiSpec::PLaplace(case.p),
            tau: case.tau,
        })
    }

    fn solve(&self, g: &Graph, labels: &LabelData, source: Option<Array2<f64>>, cfg: &SolverConfig) -> Result<Array2<f64>> {
        let problem = EllipticProblem {
            phi: self.phi.clone(),
            source,
            ..EllipticProblem::laplace(labels.clone(), self.tau)
        };
        Ok(solve_elliptic(g, &problem, cfg)?.u)
    }

    fn loss(&self, u: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        cross_entropy(u.view(), &self.truth, &self.free)
    }
}

/// Analytic gradients with respect to features, source and boundary values
/// against central differences with step `h`.
pub fn run_gradcheck(case: &GradcheckCase, h: f64, cfg: &SolverConfig) -> Result<Vec<GradcheckEntry>> {
    let inst = Instance::new(case)?;
    let (n, classes) = (case.n, case.classes);
    let u = inst.solve(&inst.graph, &inst.labels, None, cfg)?;
    let (_, upstream) = inst.loss(&u)?;
    let bundle = gll_backward(
        &inst.graph,
        &inst.x,
        &inst.labels,
        u.view(),
        upstream.view(),
        &inst.phi,
        inst.tau,
        cfg,
    )?;
    let central = |eval: &dyn Fn(f64) -> Result<f64>| -> Result<f64> { Ok((eval(h)? - eval(-h)?) / (2.0 * h)) };
    let mut out = Vec::new();

    for a in 0..n {
        for d in 0..case.d {
            let numeric = central(&|s| {
                let mut xm = inst.x.view().to_owned();
                xm[[a, d]] += s;
                let g = inst.graph.reweighted(&FeatureMatrix::new(xm)?)?;
                Ok(inst.loss(&inst.solve(&g, &inst.labels, None, cfg)?)?.0)
            })?;
            out.push(GradcheckEntry {
                parameter: format!("X[{a},{d}]"),
                analytic: bundle.grad_x[[a, d]],
                numeric,
            });
        }
    }
    for (r, &node) in inst.free.iter().enumerate() {
        for c in 0..classes {
            let numeric = central(&|s| {
                let mut f = Array2::zeros((n, classes));
                f[[node, c]] = s;
                Ok(inst.loss(&inst.solve(&inst.graph, &inst.labels, Some(f), cfg)?)?.0)
            })?;
            out.push(GradcheckEntry {
                parameter: format!("f[{node},{c}]"),
                analytic: bundle.grad_f[[r, c]],
                numeric,
            });
        }
    }
    for r in 0..inst.labels.len() {
        for c in 0..classes {
            let numeric = central(&|s| {
                let mut vals = inst.labels.values().to_owned();
                vals[[r, c]] += s;
                let moved = LabelData::new(inst.labels.indices().to_vec(), vals)?;
                Ok(inst.loss(&inst.solve(&inst.graph, &moved, None, cfg)?)?.0)
            })?;
            out.push(GradcheckEntry {
                parameter: format!("g[{},{c}]", inst.labels.indices()[r]),
                analytic: bundle.grad_g[[r, c]],
                numeric,
            });
        }
    }
    Ok(out)
}
