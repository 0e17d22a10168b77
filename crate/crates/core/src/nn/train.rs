use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::head::{with_anchors, BaseSpec, GllHeadConfig, Model, Pass};
use super::loss::{accuracy, base_scores, cross_entropy, ScoreKind};
use super::optim::{LrSchedule, OptimizerKind, OptimizerState};
use crate::attacks::{pgd_perturb, PixelRange};
use crate::datasets::Dataset;
use crate::error::{GllError, Result};
use crate::solvers::predict;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Gll,
    Softmax,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Gll => "gll",
            HeadKind::Softmax => "softmax",
        }
    }
}

/// How the labeled base rows of each batch are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseSelection {
    /// Uniformly at random, with at least one row per class.
    Random,
    /// The batch rows with the smallest dataset indices.
    First,
    /// The most uncertain rows under a Laplace solve from a random pilot base.
    Scored(ScoreKind),
}

/// Randomly started IFGSM perturbation of every training batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdConfig {
    pub eps: f64,
    pub alpha: f64,
    pub iters: usize,
    pub range: PixelRange,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub encoder_sizes: Vec<usize>,
    pub epochs: usize,
    /// Rows per batch; 0 means one full batch in dataset order.
    pub batch_size: usize,
    pub base_per_batch: usize,
    pub head: HeadKind,
    /// Train the softmax head up to this epoch, the graph head afterwards.
    pub switch_epoch: Option<usize>,
    pub gll: GllHeadConfig,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub base_selection: BaseSelection,
    /// Metrics are recorded every this many epochs and at the last one.
    pub eval_every: usize,
    /// Labeled training rows per test row when evaluating the graph head.
    pub anchor_ratio: f64,
    pub adversarial: Option<PgdConfig>,
    /// With the softmax head, also log graph head metrics on the embedding.
    pub monitor_gll: bool,
    pub input_mean: f64,
    pub input_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            encoder_sizes: vec![2, 64, 64, 2],
            epochs: 100,
            batch_size: 0,
            base_per_batch: 10,
            head: HeadKind::Gll,
            switch_epoch: None,
            gll: GllHeadConfig::default(),
            optimizer: OptimizerKind::adam(),
            lr: 1e-3,
            schedule: LrSchedule::Constant,
            seed: 0,
            base_selection: BaseSelection::Random,
            eval_every: 1,
            anchor_ratio: 1.0,
            adversarial: None,
            monitor_gll: true,
            input_mean: 0.0,
            input_std: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn head_at(&self, epoch: usize) -> HeadKind {
        match self.switch_epoch {
            Some(e) if epoch > e => HeadKind::Gll,
            Some(_) => HeadKind::Softmax,
            None => self.head,
        }
    }

    fn validate(&self, num_classes: usize) -> Result<()> {
        if self.base_per_batch < num_classes {
            return Err(GllError::InvalidArgument(format!(
                "base points per batch ({}) must be at least the class count ({num_classes})",
                self.base_per_batch
            )));
        }
        if !(self.lr >= 0.0) || !(self.input_std > 0.0) || !(self.anchor_ratio > 0.0) {
            return Err(GllError::InvalidArgument(
                "learning rate, input scale and anchor ratio must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub head: HeadKind,
    pub train_loss: f64,
    pub train_acc: f64,
    /// `NaN` without a test set.
    pub test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<EpochMetrics>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Picks `count` rows out of `rows` covering every class, uniformly otherwise.
pub fn class_covering_sample<R: Rng>(
    rows: &[usize],
    labels: &[usize],
    num_classes: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut pool = rows.to_vec();
    pool.shuffle(rng);
    let mut chosen = Vec::with_capacity(count);
    for c in 0..num_classes {
        let at = pool.iter().position(|&r| labels[r] == c).ok_or_else(|| {
            GllError::InvalidArgument(format!("batch has no example of class {c}; increase the batch size"))
        })?;
        chosen.push(pool.remove(at));
    }
    chosen.extend(pool.into_iter().take(count.saturating_sub(num_classes)));
    Ok(chosen)
}

fn select_base<R: Rng>(
    cfg: &TrainConfig,
    model: &Model,
    x: ArrayView2<f64>,
    y: &[usize],
    num_classes: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let rows: Vec<usize> = (0..y.len()).collect();
    let count = cfg.base_per_batch.min(y.len());
    match cfg.base_selection {
        BaseSelection::Random => class_covering_sample(&rows, y, num_classes, count, rng),
        BaseSelection::First => {
            let first: Vec<usize> = rows[..count].to_vec();
            for c in 0..num_classes {
                if !first.iter().any(|&r| y[r] == c) {
                    return Err(GllError::InvalidArgument(format!(
                        "the first {count} rows contain no example of class {c}"
                    )));
                }
            }
            Ok(first)
        }
        BaseSelection::Scored(kind) => {
            let pilot = class_covering_sample(&rows, y, num_classes, count, rng)?;
            let labels: Vec<usize> = pilot.iter().map(|&r| y[r]).collect();
            let fwd = model.gll_forward(x, BaseSpec::Given { rows: &pilot, labels: &labels }, &cfg.gll)?;
            let scores = base_scores(fwd.u.view(), kind);
            let mut order: Vec<usize> = rows.iter().copied().filter(|r| !pilot.contains(r)).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            let mut chosen: Vec<usize> = order.into_iter().take(count).collect();
            // keep every class represented by swapping in pilot rows
            for c in 0..num_classes {
                if !chosen.iter().any(|&r| y[r] == c) {
                    let donor = *pilot.iter().find(|&&r| y[r] == c).expect("pilot covers classes");
                    let slot = (0..chosen.len())
                        .rev()
                        .find(|&i| chosen.iter().filter(|&&r| y[r] == y[chosen[i]]).count() > 1)
                        .unwrap_or(chosen.len() - 1);
                    chosen[slot] = donor;
                }
            }
            Ok(chosen)
        }
    }
}

fn non_base(n: usize, base: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &b in base {
        mask[b] = false;
    }
    (0..n).filter(|&r| mask[r]).collect()
}

/// Loss and gradients of one batch under the given head.
pub fn batch_pass(
    model: &Model,
    head: HeadKind,
    x: ArrayView2<f64>,
    y: &[usize],
    base: &[usize],
    gll: &GllHeadConfig,
) -> Result<Pass> {
    match head {
        HeadKind::Softmax => {
            let rows: Vec<usize> = (0..y.len()).collect();
            model.softmax_pass(x, |logits| cross_entropy(logits, y, &rows))
        }
        HeadKind::Gll => {
            let spec = BaseSpec::Covering { rows: base, all_labels: y };
            model.gll_pass(x, spec, gll, |u, used| cross_entropy(u, y, &non_base(y.len(), used)))
        }
    }
}

/// Gradients on a PGD-perturbed copy of the batch.
#[allow(clippy::too_many_arguments)]
pub fn pgd_train_step<R: Rng>(
    model: &Model,
    head: HeadKind,
    x: ArrayView2<f64>,
    y: &[usize],
    base: &[usize],
    gll: &GllHeadConfig,
    pgd: &PgdConfig,
    rng: &mut R,
) -> Result<Pass> {
    let adv = pgd_perturb(x, pgd.eps, pgd.alpha, pgd.iters, pgd.range, rng, |z| {
        Ok(batch_pass(model, head, z, y, base, gll)?.grad_input)
    })?;
    batch_pass(model, head, adv.view(), y, base, gll)
}

/// Accuracy of the graph head on `test`, with `anchors` rows of the
/// training set as labeled nodes.
pub fn gll_test_accuracy(
    model: &Model,
    train: &Dataset,
    anchors: &[usize],
    test: &Dataset,
    gll: &GllHeadConfig,
) -> Result<f64> {
    if test.is_empty() {
        return Ok(f64::NAN);
    }
    let ax = train.x.select(Axis(0), anchors);
    let ay: Vec<usize> = anchors.iter().map(|&r| train.y[r]).collect();
    let (joint, rows) = with_anchors(ax.view(), test.x.view())?;
    let base: Vec<usize> = (0..anchors.len()).collect();
    let fwd = model.gll_forward(joint.view(), BaseSpec::Given { rows: &base, labels: &ay }, gll)?;
    let pred = predict(fwd.u.view());
    let hits = rows.clone().filter(|&r| pred[r] == test.y[r - rows.start]).count();
    Ok(hits as f64 / test.len() as f64)
}

pub fn softmax_test_accuracy(model: &Model, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Ok(f64::NAN);
    }
    let pred = predict(model.softmax_logits(test.x.view())?.view());
    let all: Vec<usize> = (0..test.len()).collect();
    Ok(accuracy(&pred, &test.y, &all))
}

/// Training rows that serve as labeled nodes when the graph head is evaluated.
pub fn evaluation_anchors(cfg: &TrainConfig, train: &Dataset, test_len: usize) -> Result<Vec<usize>> {
    let want = ((cfg.anchor_ratio * test_len as f64).ceil() as usize)
        .max(train.num_classes)
        .min(train.len());
    let rows: Vec<usize> = (0..train.len()).collect();
    let mut rng = stream(cfg.seed, 2);
    class_covering_sample(&rows, &train.y, train.num_classes, want, &mut rng)
}

/// Epoch hook: called with epoch 0 before training and after every epoch,
/// together with the dataset rows labeled in the latest graph head batch.
pub type Observer<'a> = dyn FnMut(usize, &Model, &[usize]) -> Result<()> + 'a;

pub fn train(cfg: &TrainConfig, train_set: &Dataset, test_set: &Dataset) -> Result<TrainOutcome> {
    train_observed(cfg, train_set, test_set, &mut |_, _, _| Ok(()))
}

#[derive(Default)]
struct Running {
    loss: f64,
    hits: usize,
    count: usize,
    batches: usize,
}

impl Running {
    fn add(&mut self, loss: f64, pred: &[usize], y: &[usize], rows: &[usize]) {
        self.loss += loss;
        self.batches += 1;
        self.hits += rows.iter().filter(|&&r| pred[r] == y[r]).count();
        self.count += rows.len();
    }

    fn loss(&self) -> f64 {
        self.loss / self.batches.max(1) as f64
    }

    fn acc(&self) -> f64 {
        self.hits as f64 / self.count.max(1) as f64
    }
}

pub fn train_observed(
    cfg: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    observer: &mut Observer<'_>,
) -> Result<TrainOutcome> {
    let classes = train_set.num_classes;
    cfg.validate(classes)?;
    if train_set.is_empty() || cfg.encoder_sizes.first() != Some(&train_set.dim()) {
        return Err(GllError::InvalidArgument(format!(
            "encoder input width {:?} does not match data dimension {}",
            cfg.encoder_sizes.first(),
            train_set.dim()
        )));
    }
    let mut model = Model::new(&cfg.encoder_sizes, classes, &mut stream(cfg.seed, 0))?;
    model.input_mean = cfg.input_mean;
    model.input_std = cfg.input_std;
    let mut enc_opt = OptimizerState::new(cfg.optimizer, &model.encoder);
    let mut cls_opt = OptimizerState::new(cfg.optimizer, &model.classifier);
    let mut batch_rng = stream(cfg.seed, 1);
    let mut pgd_rng = stream(cfg.seed, 3);
    let anchors = evaluation_anchors(cfg, train_set, test_set.len())?;
    let n = train_set.len();
    let batch = if cfg.batch_size == 0 { n } else { cfg.batch_size.min(n) };
    let mut metrics = Vec::new();
    let mut last_base: Vec<usize> = match cfg.base_selection {
        BaseSelection::First if cfg.head_at(1) == HeadKind::Gll => (0..cfg.base_per_batch.min(batch)).collect(),
        _ => Vec::new(),
    };
    observer(0, &model, &last_base)?;

    for epoch in 1..=cfg.epochs {
        let head = cfg.head_at(epoch);
        let log = epoch % cfg.eval_every.max(1) == 0 || epoch == cfg.epochs;
        let monitor_gll = cfg.monitor_gll && log && head == HeadKind::Softmax;
        let lr = cfg.schedule.rate(cfg.lr, epoch - 1);
        let mut order: Vec<usize> = (0..n).collect();
        if batch < n {
            order.shuffle(&mut batch_rng);
        }
        let mut run = Running::default();
        let mut gll_run = Running::default();
        for (b, chunk) in order.chunks(batch).enumerate() {
            let mut idx = chunk.to_vec();
            idx.sort_unstable();
            let x = train_set.x.select(Axis(0), &idx);
            let y: Vec<usize> = idx.iter().map(|&r| train_set.y[r]).collect();
            let base = if head == HeadKind::Gll || monitor_gll {
                select_base(cfg, &model, x.view(), &y, classes, &mut batch_rng)?
            } else {
                Vec::new()
            };
            if monitor_gll {
                let p = batch_pass(&model, HeadKind::Gll, x.view(), &y, &base, &cfg.gll)?;
                gll_run.add(p.value, &predict(p.logits.view()), &y, &non_base(y.len(), &p.base));
            }
            let pass = match &cfg.adversarial {
                Some(pgd) => pgd_train_step(&model, head, x.view(), &y, &base, &cfg.gll, pgd, &mut pgd_rng)?,
                None => batch_pass(&model, head, x.view(), &y, &base, &cfg.gll)?,
            };
            if !pass.value.is_finite() || !pass.encoder.is_finite() {
                return Err(GllError::Diverged {
                    epoch,
                    detail: format!("non-finite loss or gradient in batch {b} (loss {})", pass.value),
                });
            }
            let scored: Vec<usize> = match head {
                HeadKind::Gll => non_base(y.len(), &pass.base),
                HeadKind::Softmax => (0..y.len()).collect(),
            };
            run.add(pass.value, &predict(pass.logits.view()), &y, &scored);
            if head == HeadKind::Gll {
                last_base = pass.base.iter().map(|&r| idx[r]).collect();
                last_base.sort_unstable();
            }
            enc_opt.step(&mut model.encoder, &pass.encoder, lr)?;
            if let Some(g) = &pass.classifier {
                cls_opt.step(&mut model.classifier, g, lr)?;
            }
            if !model.encoder.is_finite() || !model.classifier.is_finite() {
                return Err(GllError::Diverged {
                    epoch,
                    detail: format!("non-finite parameters after batch {b}"),
                });
            }
        }
        if log {
            let test_acc = match head {
                HeadKind::Gll => gll_test_accuracy(&model, train_set, &anchors, test_set, &cfg.gll)?,
                HeadKind::Softmax => softmax_test_accuracy(&model, test_set)?,
            };
            metrics.push(EpochMetrics {
                epoch,
                head,
                train_loss: run.loss(),
                train_acc: run.acc(),
                test_acc,
            });
            if monitor_gll {
                metrics.push(EpochMetrics {
                    epoch,
                    head: HeadKind::Gll,
                    train_loss: gll_run.loss(),
                    train_acc: gll_run.acc(),
                    test_acc: gll_test_accuracy(&model, train_set, &anchors, test_set, &cfg.gll)?,
                });
            }
        }
        observer(epoch, &model, &last_base)?;
    }
    Ok(TrainOutcome { model, metrics })
}

/// Mean pairwise distance between embeddings of the same class, averaged over classes.
pub fn intra_class_spread(embedding: ArrayView2<f64>, labels: &[usize], num_classes: usize) -> f64 {
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..num_classes {
        let rows: Vec<usize> = (0..labels.len()).filter(|&r| labels[r] == c).collect();
        if rows.len() < 2 {
            continue;
        }
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for (a, &i) in rows.iter().enumerate() {
            for &j in &rows[a + 1..] {
                let d: f64 = embedding
                    .row(i)
                    .iter()
                    .zip(embedding.row(j))
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum();
                sum += d.sqrt();
                pairs += 1;
            }
        }
        total += sum / pairs as f64;
        used += 1;
    }
    total / used.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn covering_sample_has_every_class() {
        let labels = [0, 0, 0, 1, 0, 2, 0];
        let rows: Vec<usize> = (0..7).collect();
        let mut rng = stream(3, 0);
        let s = class_covering_sample(&rows, &labels, 3, 4, &mut rng).unwrap();
        assert_eq!(s.len(), 4);
        for c in 0..3 {
            assert!(s.iter().any(|&r| labels[r] == c));
        }
        assert!(class_covering_sample(&rows, &labels, 4, 4, &mut rng).is_err());
    }

    #[test]
    fn spread_of_two_points() {
        let e = array![[0.0, 0.0], [3.0, 4.0], [10.0, 10.0]];
        assert_eq!(intra_class_spread(e.view(), &[0, 0, 1], 2), 5.0);
    }

    #[test]
    fn switch_epoch_changes_head() {
        let cfg = TrainConfig {
            head: HeadKind::Softmax,
            switch_epoch: Some(50),
            ..TrainConfig::default()
        };
        assert_eq!(cfg.head_at(50), HeadKind::Softmax);
        assert_eq!(cfg.head_at(51), HeadKind::Gll);
    }
}
