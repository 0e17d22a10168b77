use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use super::loss::softmax;
use super::mlp::{Mlp, MlpGrads};
use crate::adjoint::gll_backward;
use crate::error::{shape_err, GllError, Result};
use crate::graph::{build_graph, connected_components, BandwidthMode, FeatureMatrix, Graph, WeightKernel};
use crate::solvers::{predict, solve_laplace, LabelData, PhiSpec, SolverConfig};

/// Graph and solver settings of the graph learning head.
#[derive(Debug, Clone)]
pub struct GllHeadConfig {
    pub k: usize,
    pub tau: f64,
    pub kernel: WeightKernel,
    pub bandwidth: BandwidthMode,
    pub solver: SolverConfig,
}

impl Default for GllHeadConfig {
    fn default() -> Self {
        Self {
            k: 10,
            tau: 0.0,
            kernel: WeightKernel::default(),
            bandwidth: BandwidthMode::SelfTuning,
            solver: SolverConfig::default(),
        }
    }
}

/// Everything the backward pass of the head needs.
#[derive(Debug, Clone)]
pub struct GllForward {
    pub features: FeatureMatrix,
    pub graph: Graph,
    pub labels: LabelData,
    pub u: Array2<f64>,
}

impl GllForward {
    pub fn probabilities(&self) -> Array2<f64> {
        softmax(self.u.view())
    }

    pub fn predictions(&self) -> Vec<usize> {
        predict(self.u.view())
    }

    /// Gradient with respect to the features given `dJ/du`.
    pub fn backward(&self, grad_u: ArrayView2<f64>, cfg: &GllHeadConfig) -> Result<Array2<f64>> {
        let bundle = gll_backward(
            &self.graph,
            &self.features,
            &self.labels,
            self.u.view(),
            grad_u,
            &PhiSpec::PLaplace(2.0),
            cfg.tau,
            &cfg.solver,
        )?;
        Ok(bundle.grad_x)
    }
}

/// Labeled rows of a graph head batch.
#[derive(Debug, Clone, Copy)]
pub enum BaseSpec<'a> {
    /// Exactly these rows with these labels.
    Given { rows: &'a [usize], labels: &'a [usize] },
    /// These rows, plus the lowest-index row of every connected component
    /// left without one when `tau = 0`; `all_labels` labels every batch row.
    Covering { rows: &'a [usize], all_labels: &'a [usize] },
}

fn check_classes(labels: &[usize], num_classes: usize) -> Result<()> {
    let mut present = vec![false; num_classes];
    for &c in labels {
        if c < num_classes {
            present[c] = true;
        }
    }
    if num_classes > 1 && present.iter().any(|p| !p) {
        return Err(GllError::InvalidArgument("base set must contain every class".into()));
    }
    Ok(())
}

/// Builds the k-NN graph on `features` and solves Laplace learning with the
/// `base` rows as labeled nodes.
pub fn gll_head_forward(
    features: ArrayView2<f64>,
    base: &[usize],
    base_labels: &[usize],
    num_classes: usize,
    cfg: &GllHeadConfig,
) -> Result<GllForward> {
    gll_head_forward_with(
        features,
        BaseSpec::Given {
            rows: base,
            labels: base_labels,
        },
        num_classes,
        cfg,
    )
}

pub fn gll_head_forward_with(
    features: ArrayView2<f64>,
    base: BaseSpec<'_>,
    num_classes: usize,
    cfg: &GllHeadConfig,
) -> Result<GllForward> {
    let n = features.nrows();
    if n < 2 {
        return Err(GllError::InvalidArgument(format!(
            "graph learning head needs at least two rows, got {n}"
        )));
    }
    let features = FeatureMatrix::new(features.to_owned())?;
    let graph = build_graph(&features, cfg.k.min(n - 1), cfg.kernel, cfg.bandwidth)?;
    let (rows, labels) = match base {
        BaseSpec::Given { rows, labels } => (rows.to_vec(), labels.to_vec()),
        BaseSpec::Covering { rows, all_labels } => {
            if all_labels.len() != n {
                return Err(shape_err(format!("{n} row labels"), all_labels.len()));
            }
            let mut rows = rows.to_vec();
            if cfg.tau == 0.0 {
                let comps = connected_components(&graph);
                let mut covered = vec![false; comps.count];
                for &r in &rows {
                    covered[comps.labels[r]] = true;
                }
                for (c, rep) in comps.representatives().into_iter().enumerate() {
                    if !covered[c] {
                        rows.push(rep);
                    }
                }
            }
            let labels = rows.iter().map(|&r| all_labels[r]).collect();
            (rows, labels)
        }
    };
    check_classes(&labels, num_classes)?;
    let labels = LabelData::from_classes(&rows, &labels, num_classes)?;
    let u = solve_laplace(&graph, &labels, cfg.tau, &cfg.solver)?.u;
    Ok(GllForward {
        features,
        graph,
        labels,
        u,
    })
}

/// Encoder plus a linear classifier. The classifier is only used by the
/// softmax head; the graph head consumes encoder features directly.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: Mlp,
    pub classifier: Mlp,
    /// Inputs are mapped to `(x - input_mean) / input_std` before the encoder.
    pub input_mean: f64,
    pub input_std: f64,
}

/// Result of one forward/backward pass through a model.
#[derive(Debug, Clone)]
pub struct Pass {
    /// Classifier logits or graph head `u`, one row per input row.
    pub logits: Array2<f64>,
    pub value: f64,
    pub encoder: MlpGrads,
    pub classifier: Option<MlpGrads>,
    pub grad_input: Array2<f64>,
    /// Labeled rows actually used by the graph head (empty for softmax).
    pub base: Vec<usize>,
}

impl Model {
    pub fn new<R: Rng>(encoder_sizes: &[usize], num_classes: usize, rng: &mut R) -> Result<Self> {
        let encoder = Mlp::new(encoder_sizes, rng)?;
        let classifier = Mlp::new(&[encoder.output_dim(), num_classes], rng)?;
        Ok(Self {
            encoder,
            classifier,
            input_mean: 0.0,
            input_std: 1.0,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.output_dim()
    }

    fn normalize(&self, x: ArrayView2<f64>) -> Array2<f64> {
        if self.input_mean == 0.0 && self.input_std == 1.0 {
            return x.to_owned();
        }
        x.mapv(|v| (v - self.input_mean) / self.input_std)
    }

    pub fn embed(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.encoder.predict(self.normalize(x).view())
    }

    pub fn softmax_logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.classifier.predict(self.embed(x)?.view())
    }

    /// Softmax head: `objective` maps logits to a value and its gradient.
    pub fn softmax_pass<F>(&self, x: ArrayView2<f64>, objective: F) -> Result<Pass>
    where
        F: FnOnce(ArrayView2<f64>) -> Result<(f64, Array2<f64>)>,
    {
        let (feat, enc_cache) = self.encoder.forward(self.normalize(x).view())?;
        let (logits, cls_cache) = self.classifier.forward(feat.view())?;
        let (value, grad) = objective(logits.view())?;
        let (cls_grads, grad_feat) = self.classifier.backward(&cls_cache, grad.view())?;
        let (enc_grads, grad_in) = self.encoder.backward(&enc_cache, grad_feat.view())?;
        Ok(Pass {
            base: Vec::new(),
            logits,
            value,
            encoder: enc_grads,
            classifier: Some(cls_grads),
            grad_input: grad_in / self.input_std,
        })
    }

    pub fn gll_forward(&self, x: ArrayView2<f64>, base: BaseSpec<'_>, cfg: &GllHeadConfig) -> Result<GllForward> {
        gll_head_forward_with(self.embed(x)?.view(), base, self.num_classes(), cfg)
    }

    /// Graph head on the batch `x`. The objective also receives the final
    /// labeled rows.
    pub fn gll_pass<F>(&self, x: ArrayView2<f64>, base: BaseSpec<'_>, cfg: &GllHeadConfig, objective: F) -> Result<Pass>
    where
        F: FnOnce(ArrayView2<f64>, &[usize]) -> Result<(f64, Array2<f64>)>,
    {
        let (feat, enc_cache) = self.encoder.forward(self.normalize(x).view())?;
        let fwd = gll_head_forward_with(feat.view(), base, self.num_classes(), cfg)?;
        let (value, grad_u) = objective(fwd.u.view(), fwd.labels.indices())?;
        if grad_u.dim() != fwd.u.dim() {
            return Err(shape_err(
                format!("{}x{} gradient", fwd.u.nrows(), fwd.u.ncols()),
                format!("{}x{}", grad_u.nrows(), grad_u.ncols()),
            ));
        }
        let grad_feat = fwd.backward(grad_u.view(), cfg)?;
        let (enc_grads, grad_in) = self.encoder.backward(&enc_cache, grad_feat.view())?;
        Ok(Pass {
            base: fwd.labels.indices().to_vec(),
            logits: fwd.u,
            value,
            encoder: enc_grads,
            classifier: None,
            grad_input: grad_in / self.input_std,
        })
    }
}

/// Stacks labeled anchor rows on top of query rows. Returns the joint input
/// and the row range holding the queries.
pub fn with_anchors(anchors: ArrayView2<f64>, queries: ArrayView2<f64>) -> Result<(Array2<f64>, std::ops::Range<usize>)> {
    if anchors.ncols() != queries.ncols() {
        return Err(shape_err(anchors.ncols(), queries.ncols()));
    }
    let m = anchors.nrows();
    let mut joint = Array2::zeros((m + queries.nrows(), queries.ncols()));
    joint.slice_mut(s![..m, ..]).assign(&anchors);
    joint.slice_mut(s![m.., ..]).assign(&queries);
    Ok((joint, m..m + queries.nrows()))
}
