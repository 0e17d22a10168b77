//! Adversarial examples against either head: FGSM, IFGSM, Carlini-Wagner
//! (l2, probability based) and the randomly started iterates used for PGD
//! training.

use ndarray::{s, Array2, ArrayView2, Zip};
use rand::Rng;

use crate::error::{shape_err, GllError, Result};
use crate::nn::head::{with_anchors, BaseSpec, GllHeadConfig, Model};
use crate::nn::loss::{cross_entropy, softmax};
use crate::solvers::predict;

/// Valid input box, applied coordinate-wise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRange {
    pub lo: f64,
    pub hi: f64,
}

impl Default for PixelRange {
    fn default() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }
}

impl PixelRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(GllError::InvalidArgument(format!("invalid pixel range [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackKind {
    Fgsm { eps: f64 },
    Ifgsm { eps: f64, alpha: f64, iters: usize },
    Cw { c: f64, iters: usize, lr: f64 },
}

impl AttackKind {
    /// IFGSM with the default iteration count `ceil(5 eps / alpha)`.
    pub fn ifgsm(eps: f64, alpha: f64) -> Self {
        AttackKind::Ifgsm {
            eps,
            alpha,
            iters: ((5.0 * eps / alpha - 1e-9).ceil() as usize).max(1),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::Fgsm { .. } => "fgsm",
            AttackKind::Ifgsm { .. } => "ifgsm",
            AttackKind::Cw { .. } => "cw",
        }
    }

    /// The swept parameter: `eps` for gradient-sign attacks, `c` for CW.
    pub fn param(&self) -> f64 {
        match *self {
            AttackKind::Fgsm { eps } | AttackKind::Ifgsm { eps, .. } => eps,
            AttackKind::Cw { c, .. } => c,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            AttackKind::Fgsm { eps } => eps >= 0.0,
            AttackKind::Ifgsm { eps, alpha, iters } => eps >= 0.0 && alpha > 0.0 && iters >= 1,
            AttackKind::Cw { c, lr, .. } => c >= 0.0 && lr > 0.0,
        };
        if !ok {
            return Err(GllError::InvalidArgument(format!("invalid attack parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub adversarial: Array2<f64>,
    /// Misclassification for FGSM/IFGSM; reaching the target class for CW.
    pub success: Vec<bool>,
    pub linf: Vec<f64>,
    pub l2: Vec<f64>,
    pub clean_pred: Vec<usize>,
    pub adv_pred: Vec<usize>,
    /// CW target classes.
    pub target: Option<Vec<usize>>,
}

impl AttackResult {
    pub fn accuracy(&self, y: &[usize]) -> f64 {
        let hits = self.adv_pred.iter().zip(y).filter(|(p, t)| p == t).count();
        hits as f64 / y.len().max(1) as f64
    }

    pub fn mean_l2_sq(&self) -> f64 {
        self.l2.iter().map(|d| d * d).sum::<f64>() / self.l2.len().max(1) as f64
    }
}

/// Scalar objective of the classifier outputs, with its gradient.
pub type Objective<'o> = dyn FnMut(ArrayView2<f64>) -> Result<(f64, Array2<f64>)> + 'o;

/// A classifier as seen by an attacker: logits (or graph head values) per
/// input row and the input gradient of any objective of them.
pub trait AttackTarget {
    fn num_classes(&self) -> usize;
    fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>>;
    /// Returns `(logits, objective value, d objective / d x)`.
    fn pullback(&self, x: ArrayView2<f64>, objective: &mut Objective<'_>) -> Result<(Array2<f64>, f64, Array2<f64>)>;
}

/// Encoder plus linear classifier.
pub struct SoftmaxTarget<'a> {
    pub model: &'a Model,
}

impl AttackTarget for SoftmaxTarget<'_> {
    fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.model.softmax_logits(x)
    }

    fn pullback(&self, x: ArrayView2<f64>, objective: &mut Objective<'_>) -> Result<(Array2<f64>, f64, Array2<f64>)> {
        let pass = self.model.softmax_pass(x, objective)?;
        Ok((pass.logits, pass.value, pass.grad_input))
    }
}

/// Encoder plus graph head; the attacked rows share one graph with fixed
/// labeled anchor rows, rebuilt on every evaluation.
pub struct GllTarget<'a> {
    pub model: &'a Model,
    pub anchors: ArrayView2<'a, f64>,
    pub anchor_labels: &'a [usize],
    pub cfg: &'a GllHeadConfig,
}

impl GllTarget<'_> {
    fn base(&self) -> Vec<usize> {
        (0..self.anchors.nrows()).collect()
    }

    fn spec<'b>(&'b self, rows: &'b [usize]) -> BaseSpec<'b> {
        BaseSpec::Given {
            rows,
            labels: self.anchor_labels,
        }
    }
}

impl AttackTarget for GllTarget<'_> {
    fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (joint, rows) = with_anchors(self.anchors, x)?;
        let base = self.base();
        let fwd = self.model.gll_forward(joint.view(), self.spec(&base), self.cfg)?;
        Ok(fwd.u.slice(s![rows, ..]).to_owned())
    }

    fn pullback(&self, x: ArrayView2<f64>, objective: &mut Objective<'_>) -> Result<(Array2<f64>, f64, Array2<f64>)> {
        let (joint, rows) = with_anchors(self.anchors, x)?;
        let r = rows.clone();
        let inner = |u: ArrayView2<f64>, _: &[usize]| -> Result<(f64, Array2<f64>)> {
            let (value, g) = objective(u.slice(s![r.clone(), ..]))?;
            let mut full = Array2::zeros(u.dim());
            full.slice_mut(s![r.clone(), ..]).assign(&g);
            Ok((value, full))
        };
        let base = self.base();
        let pass = self.model.gll_pass(joint.view(), self.spec(&base), self.cfg, inner)?;
        Ok((
            pass.logits.slice(s![rows.clone(), ..]).to_owned(),
            pass.value,
            pass.grad_input.slice(s![rows, ..]).to_owned(),
        ))
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `clip_{x, eps}(z) = min(hi, x + eps, max(lo, x - eps, z))`.
pub fn project(z: &mut Array2<f64>, x: ArrayView2<f64>, eps: f64, range: PixelRange) {
    Zip::from(z).and(x).for_each(|zi, &xi| {
        *zi = range.hi.min(xi + eps).min(range.lo.max(xi - eps).max(*zi));
    });
}

/// Signed-gradient ascent iterations from `start`, each followed by the
/// projection onto the eps-ball around `x` and the pixel box.
pub fn signed_steps<G>(
    x: ArrayView2<f64>,
    start: Array2<f64>,
    eps: f64,
    alpha: f64,
    iters: usize,
    range: PixelRange,
    mut grad: G,
) -> Result<Array2<f64>>
where
    G: FnMut(ArrayView2<f64>) -> Result<Array2<f64>>,
{
    let mut z = start;
    for _ in 0..iters {
        let g = grad(z.view())?;
        Zip::from(&mut z).and(&g).for_each(|zi, &gi| *zi += alpha * sign(gi));
        project(&mut z, x, eps, range);
    }
    Ok(z)
}

/// Uniform start inside the eps-box (clipped to the pixel range) followed by
/// `iters` signed-gradient steps: the inner maximization of PGD training.
pub fn pgd_perturb<R, G>(
    x: ArrayView2<f64>,
    eps: f64,
    alpha: f64,
    iters: usize,
    range: PixelRange,
    rng: &mut R,
    grad: G,
) -> Result<Array2<f64>>
where
    R: Rng,
    G: FnMut(ArrayView2<f64>) -> Result<Array2<f64>>,
{
    let mut start = x.to_owned();
    if eps > 0.0 {
        start.mapv_inplace(|v| v + rng.random_range(-eps..=eps));
    }
    project(&mut start, x, eps, range);
    signed_steps(x, start, eps, alpha, iters, range, grad)
}

fn check_batch(target: &dyn AttackTarget, x: ArrayView2<f64>, y: &[usize]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(shape_err(format!("{} labels", x.nrows()), y.len()));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= target.num_classes()) {
        return Err(GllError::InvalidData(format!("label {bad} out of range")));
    }
    Ok(())
}

fn loss_gradient(target: &dyn AttackTarget, z: ArrayView2<f64>, y: &[usize]) -> Result<Array2<f64>> {
    let rows: Vec<usize> = (0..y.len()).collect();
    let mut obj = |logits: ArrayView2<f64>| cross_entropy(logits, y, &rows);
    Ok(target.pullback(z, &mut obj)?.2)
}

fn finish(
    target: &dyn AttackTarget,
    x: ArrayView2<f64>,
    adversarial: Array2<f64>,
    clean_pred: Vec<usize>,
    y: &[usize],
) -> Result<AttackResult> {
    let adv_pred = predict(target.logits(adversarial.view())?.view());
    let (linf, l2) = norms(x, adversarial.view());
    Ok(AttackResult {
        success: adv_pred.iter().zip(y).map(|(p, t)| p != t).collect(),
        adversarial,
        linf,
        l2,
        clean_pred,
        adv_pred,
        target: None,
    })
}

fn norms(x: ArrayView2<f64>, adv: ArrayView2<f64>) -> (Vec<f64>, Vec<f64>) {
    x.rows()
        .into_iter()
        .zip(adv.rows())
        .map(|(a, b)| {
            let mut inf: f64 = 0.0;
            let mut sq = 0.0;
            for (p, q) in a.iter().zip(b) {
                inf = inf.max((p - q).abs());
                sq += (p - q) * (p - q);
            }
            (inf, sq.sqrt())
        })
        .unzip()
}

/// `x' = clip(x + eps sign(grad_x J(x, y)))`.
pub fn fgsm(target: &dyn AttackTarget, x: ArrayView2<f64>, y: &[usize], eps: f64, range: PixelRange) -> Result<AttackResult> {
    AttackKind::Fgsm { eps }.validate()?;
    check_batch(target, x, y)?;
    let clean = predict(target.logits(x)?.view());
    let adv = signed_steps(x, x.to_owned(), eps, eps, 1, range, |z| loss_gradient(target, z, y))?;
    finish(target, x, adv, clean, y)
}

/// Iterated FGSM with per-step projection `clip_{x, eps}`.
pub fn ifgsm(
    target: &dyn AttackTarget,
    x: ArrayView2<f64>,
    y: &[usize],
    eps: f64,
    alpha: f64,
    iters: usize,
    range: PixelRange,
) -> Result<AttackResult> {
    AttackKind::Ifgsm { eps, alpha, iters }.validate()?;
    check_batch(target, x, y)?;
    let clean = predict(target.logits(x)?.view());
    let adv = signed_steps(x, x.to_owned(), eps, alpha, iters, range, |z| loss_gradient(target, z, y))?;
    finish(target, x, adv, clean, y)
}

const CW_KAPPA: f64 = 1e-6;

/// `(max_{i != t} F_i - F_t)^+` per row with its gradient with respect to
/// the logits behind `F = softmax(logits)`.
fn cw_margin(logits: ArrayView2<f64>, targets: &[usize]) -> (Vec<f64>, Array2<f64>) {
    let p = softmax(logits);
    let mut grad = Array2::zeros(p.dim());
    let margins = p
        .rows()
        .into_iter()
        .zip(targets)
        .enumerate()
        .map(|(r, (row, &t))| {
            let j = (0..row.len())
                .filter(|&i| i != t)
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if row[b] >= row[i] => Some(b),
                    _ => Some(i),
                })
                .unwrap_or(t);
            let g = row[j] - row[t];
            if g > 0.0 {
                for k in 0..row.len() {
                    let dj = if k == j { row[j] } else { 0.0 } - row[j] * row[k];
                    let dt = if k == t { row[t] } else { 0.0 } - row[t] * row[k];
                    grad[[r, k]] = dj - dt;
                }
            }
            g.max(0.0)
        })
        .collect();
    (margins, grad)
}

/// Carlini-Wagner l2 attack on probabilities toward the second most likely
/// class, optimized with Adam in `tanh` coordinates. Keeps the iterate with
/// the lowest objective per example.
pub fn cw_attack(
    target: &dyn AttackTarget,
    x: ArrayView2<f64>,
    c: f64,
    iters: usize,
    lr: f64,
    range: PixelRange,
) -> Result<AttackResult> {
    AttackKind::Cw { c, iters, lr }.validate()?;
    let (n, d) = x.dim();
    let clean_logits = target.logits(x)?;
    let clean = predict(clean_logits.view());
    let probs = softmax(clean_logits.view());
    let targets: Vec<usize> = probs
        .rows()
        .into_iter()
        .zip(&clean)
        .map(|(row, &own)| {
            (0..row.len())
                .filter(|&i| i != own)
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if row[b] >= row[i] => Some(b),
                    _ => Some(i),
                })
                .unwrap_or(own)
        })
        .collect();

    let half = 0.5 * (range.hi - range.lo);
    let to_input = |w: &Array2<f64>| w.mapv(|v| range.lo + half * (v.tanh() + 1.0));
    let mut w = x.mapv(|v| {
        let unit = ((v - range.lo) / (range.hi - range.lo)).clamp(CW_KAPPA, 1.0 - CW_KAPPA);
        (2.0 * unit - 1.0).atanh()
    });
    let (mut m, mut s2) = (Array2::<f64>::zeros((n, d)), Array2::<f64>::zeros((n, d)));
    let (b1, b2, eps_adam) = (0.9, 0.999, 1e-8);
    let mut best = x.to_owned();
    let mut best_obj = vec![f64::INFINITY; n];

    for step in 0..=iters {
        let xp = to_input(&w);
        let mut margins = Vec::new();
        let mut obj = |logits: ArrayView2<f64>| -> Result<(f64, Array2<f64>)> {
            let (g, grad) = cw_margin(logits, &targets);
            let total = c * g.iter().sum::<f64>();
            margins = g;
            Ok((total, grad * c))
        };
        let (_, _, grad_margin) = target.pullback(xp.view(), &mut obj)?;
        for r in 0..n {
            let dist: f64 = (0..d).map(|k| (xp[[r, k]] - x[[r, k]]).powi(2)).sum();
            let value = dist + c * margins[r];
            if value < best_obj[r] {
                best_obj[r] = value;
                best.row_mut(r).assign(&xp.row(r));
            }
        }
        if step == iters {
            break;
        }
        let t = (step + 1) as f64;
        Zip::from(&mut w)
            .and(&mut m)
            .and(&mut s2)
            .and(&xp)
            .and(x)
            .and(&grad_margin)
            .for_each(|wi, mi, vi, &xpi, &xi, &gi| {
                let dx_dw = half * (1.0 - wi.tanh().powi(2));
                let g = (2.0 * (xpi - xi) + gi) * dx_dw;
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                *wi -= lr * (*mi / (1.0 - b1.powf(t))) / ((*vi / (1.0 - b2.powf(t))).sqrt() + eps_adam);
            });
    }

    let adv_pred = predict(target.logits(best.view())?.view());
    let (linf, l2) = norms(x, best.view());
    Ok(AttackResult {
        success: adv_pred.iter().zip(&targets).map(|(p, t)| p == t).collect(),
        adversarial: best,
        linf,
        l2,
        clean_pred: clean,
        adv_pred,
        target: Some(targets),
    })
}

pub fn run_attack(
    target: &dyn AttackTarget,
    kind: AttackKind,
    x: ArrayView2<f64>,
    y: &[usize],
    range: PixelRange,
) -> Result<AttackResult> {
    match kind {
        AttackKind::Fgsm { eps } => fgsm(target, x, y, eps, range),
        AttackKind::Ifgsm { eps, alpha, iters } => ifgsm(target, x, y, eps, alpha, iters, range),
        AttackKind::Cw { c, iters, lr } => {
            check_batch(target, x, y)?;
            cw_attack(target, x, c, iters, lr, range)
        }
    }
}

/// One row of an accuracy-vs-strength curve.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub attack: &'static str,
    pub param: f64,
    pub accuracy: f64,
    pub mean_l2_sq_distance: f64,
}

pub fn attack_sweep(
    target: &dyn AttackTarget,
    x: ArrayView2<f64>,
    y: &[usize],
    grid: &[AttackKind],
    range: PixelRange,
) -> Result<Vec<(SweepRow, AttackResult)>> {
    grid.iter()
        .map(|&kind| {
            let res = run_attack(target, kind, x, y, range)?;
            Ok((
                SweepRow {
                    attack: kind.name(),
                    param: kind.param(),
                    accuracy: res.accuracy(y),
                    mean_l2_sq_distance: res.mean_l2_sq(),
                },
                res,
            ))
        })
        .collect()
}
