use std::fs;

use anyhow::{bail, Context, Result};
use gll_core::nn::{
    evaluation_anchors, intra_class_spread, load_model, save_model, train, train_observed, EpochMetrics, HeadKind,
    Model, TrainConfig,
};
use gll_core::{
    attack_sweep, gradcheck_cases, load_idx, run_gradcheck, two_moons, Dataset, GllTarget, GradcheckEntry,
    SoftmaxTarget, SolverConfig, SweepRow, TwoMoonsSpec,
};
use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::config::{DatasetKind, RunConfig};
use crate::output::{num, scatter_svg, write_matrix, CsvOut, OutputDir};

fn say(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        eprintln!("{}", msg.as_ref());
    }
}

fn empty_like(d: &Dataset) -> Result<Dataset> {
    Ok(Dataset::new(Array2::zeros((0, d.dim())), Vec::new(), d.num_classes)?)
}

/// Training and test sets described by the config.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.dataset;
    match d.kind {
        DatasetKind::TwoMoons => {
            let seed = d.seed.unwrap_or(cfg.seed);
            let train_set = two_moons(&TwoMoonsSpec {
                n: d.n,
                noise: d.noise,
                seed,
            })?;
            let test_set = if d.test_n == 0 {
                empty_like(&train_set)?
            } else {
                two_moons(&TwoMoonsSpec {
                    n: d.test_n,
                    noise: d.noise,
                    seed: seed.wrapping_add(1),
                })?
            };
            Ok((train_set, test_set))
        }
        DatasetKind::Idx => {
            let first = |set: Dataset, limit: Option<usize>| match limit {
                Some(m) if m < set.len() => set.split_at(m).0,
                _ => set,
            };
            let (Some(img), Some(lbl)) = (&d.train_images, &d.train_labels) else {
                bail!("idx datasets need dataset.train_images and dataset.train_labels");
            };
            let mut train_set = first(load_idx(img, lbl)?.to_dataset()?, d.train_limit);
            let mut test_set = match (&d.test_images, &d.test_labels) {
                (Some(img), Some(lbl)) => first(load_idx(img, lbl)?.to_dataset()?, d.test_limit),
                _ => empty_like(&train_set)?,
            };
            let classes = train_set.num_classes.max(test_set.num_classes);
            train_set.num_classes = classes;
            test_set.num_classes = classes;
            Ok((train_set, test_set))
        }
    }
}

fn write_points(out: &OutputDir, name: &str, data: &Dataset) -> Result<()> {
    let mut header = vec!["node".to_string()];
    header.extend((0..data.dim()).map(|j| format!("x{j}")));
    header.push("label".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = CsvOut::create(&out.path(name), &header)?;
    for (i, row) in data.x.rows().into_iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|&v| num(v)));
        rec.push(data.y[i].to_string());
        csv.row(rec)?;
    }
    csv.finish()
}

pub fn gen_data(cfg: &RunConfig, out: &OutputDir, quiet: bool) -> Result<()> {
    let (train_set, test_set) = load_data(cfg)?;
    write_points(out, "train.csv", &train_set)?;
    write_points(out, "test.csv", &test_set)?;
    say(quiet, format!("wrote {} training and {} test points to {}", train_set.len(), test_set.len(), out.root().display()));
    Ok(())
}

const METRICS_HEADER: [&str; 5] = ["epoch", "head", "train_loss", "train_acc", "test_acc"];

fn metrics_record(m: &EpochMetrics) -> Vec<String> {
    vec![
        m.epoch.to_string(),
        m.head.as_str().to_string(),
        num(m.train_loss),
        num(m.train_acc),
        num(m.test_acc),
    ]
}

fn write_metrics(out: &OutputDir, metrics: &[EpochMetrics]) -> Result<()> {
    let mut csv = CsvOut::create(&out.path("metrics.csv"), &METRICS_HEADER)?;
    for m in metrics {
        csv.row(metrics_record(m))?;
    }
    csv.finish()
}

fn describe(m: &EpochMetrics) -> String {
    format!(
        "epoch {} [{}] loss {:.4} train acc {:.4} test acc {:.4}",
        m.epoch,
        m.head.as_str(),
        m.train_loss,
        m.train_acc,
        m.test_acc
    )
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub model: Model,
    pub metrics: Vec<EpochMetrics>,
}

/// Trains per config; writes `metrics.csv` and `model.bin`.
pub fn train_cmd(cfg: &RunConfig, out: &OutputDir, quiet: bool) -> Result<TrainSummary> {
    let (train_set, test_set) = load_data(cfg)?;
    say(quiet, format!("training {} head on {} points for {} epochs", cfg.train.head.as_str(), train_set.len(), cfg.train.epochs));
    let outcome = train(&cfg.train, &train_set, &test_set)?;
    write_metrics(out, &outcome.metrics)?;
    save_model(&outcome.model, &out.path("model.bin"))?;
    for m in outcome.metrics.iter().rev().take(2).rev() {
        say(quiet, describe(m));
    }
    Ok(TrainSummary {
        model: outcome.model,
        metrics: outcome.metrics,
    })
}

struct Snapshot {
    epoch: usize,
    embedding: Array2<f64>,
    base: Vec<usize>,
}

struct AblationRun {
    tau: Option<f64>,
    snapshots: Vec<Snapshot>,
    metrics: Vec<EpochMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauResult {
    pub tau: f64,
    pub final_spread: f64,
    pub final_train_acc: f64,
    /// First logged epoch with training accuracy of at least 99%.
    pub reached_99: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSummary {
    pub taus: Vec<TauResult>,
    pub softmax_spread: f64,
}

fn snapshot_run(train_cfg: &TrainConfig, train_set: &Dataset, test_set: &Dataset, epochs: &[usize]) -> Result<(Vec<Snapshot>, Vec<EpochMetrics>)> {
    let mut snaps = Vec::new();
    let last = train_cfg.epochs;
    let outcome = train_observed(train_cfg, train_set, test_set, &mut |epoch, model, base| {
        if epochs.contains(&epoch) || epoch == last {
            snaps.push(Snapshot {
                epoch,
                embedding: model.embed(train_set.x.view())?,
                base: base.to_vec(),
            });
        }
        Ok(())
    })?;
    Ok((snaps, outcome.metrics))
}

/// Trains one graph head model per tau plus a softmax baseline and dumps
/// the training set embedding at the configured epochs.
pub fn tau_ablation(cfg: &RunConfig, out: &OutputDir, quiet: bool) -> Result<AblationSummary> {
    if cfg.train.encoder_sizes.last() != Some(&2) {
        bail!("tau ablation needs a 2-D encoder output (model.encoder must end in 2)");
    }
    if cfg.taus.is_empty() {
        bail!("solver.taus is empty");
    }
    let (train_set, test_set) = load_data(cfg)?;
    let mut jobs: Vec<Option<f64>> = cfg.taus.iter().map(|&t| Some(t)).collect();
    jobs.push(None);
    say(quiet, format!("tau ablation over {:?} plus softmax baseline, {} epochs", cfg.taus, cfg.train.epochs));
    let runs: Vec<AblationRun> = jobs
        .par_iter()
        .map(|&tau| {
            let mut t = cfg.train.clone();
            t.switch_epoch = None;
            match tau {
                Some(tau) => {
                    t.head = HeadKind::Gll;
                    t.gll.tau = tau;
                }
                None => {
                    t.head = HeadKind::Softmax;
                    t.monitor_gll = false;
                }
            }
            let (snapshots, metrics) = snapshot_run(&t, &train_set, &test_set, &cfg.snapshots)
                .with_context(|| match tau {
                    Some(tau) => format!("tau = {tau}"),
                    None => "softmax baseline".to_string(),
                })?;
            Ok(AblationRun { tau, snapshots, metrics })
        })
        .collect::<Result<_>>()?;

    let mut emb = CsvOut::create(&out.path("embeddings.csv"), &["epoch", "tau", "node", "x0", "x1", "label", "is_base"])?;
    let mut baseline = CsvOut::create(&out.path("softmax_embeddings.csv"), &["epoch", "node", "x0", "x1", "label"])?;
    let mut spread = CsvOut::create(&out.path("spread.csv"), &["head", "tau", "epoch", "intra_class_distance"])?;
    let mut metrics = CsvOut::create(
        &out.path("metrics.csv"),
        &["tau", "epoch", "head", "train_loss", "train_acc", "test_acc"],
    )?;
    let mut summary = AblationSummary {
        taus: Vec::new(),
        softmax_spread: f64::NAN,
    };
    let classes = train_set.num_classes;
    for run in &runs {
        let tau_field = run.tau.map(|t| t.to_string()).unwrap_or_default();
        let head = if run.tau.is_some() { "gll" } else { "softmax" };
        for m in &run.metrics {
            let mut rec = vec![tau_field.clone()];
            rec.extend(metrics_record(m));
            metrics.row(rec)?;
        }
        for s in &run.snapshots {
            let mut is_base = vec![false; train_set.len()];
            for &b in &s.base {
                is_base[b] = true;
            }
            for (i, row) in s.embedding.rows().into_iter().enumerate() {
                let (x0, x1, label) = (num(row[0]), num(row[1]), train_set.y[i].to_string());
                match run.tau {
                    Some(_) => emb.row([
                        s.epoch.to_string(),
                        tau_field.clone(),
                        i.to_string(),
                        x0,
                        x1,
                        label,
                        u8::from(is_base[i]).to_string(),
                    ])?,
                    None => baseline.row([s.epoch.to_string(), i.to_string(), x0, x1, label])?,
                }
            }
            let d = intra_class_spread(s.embedding.view(), &train_set.y, classes);
            spread.row([head.to_string(), tau_field.clone(), s.epoch.to_string(), num(d)])?;
            if cfg.svg {
                let (name, title) = match run.tau {
                    Some(t) => (format!("embedding_tau{t}_epoch{}.svg", s.epoch), format!("tau = {t}, epoch {}", s.epoch)),
                    None => (format!("embedding_softmax_epoch{}.svg", s.epoch), format!("softmax head, epoch {}", s.epoch)),
                };
                fs::write(out.path(&name), scatter_svg(&title, s.embedding.view(), &train_set.y, &is_base))?;
            }
        }
        let last = run.snapshots.last().expect("final epoch is always captured");
        let final_spread = intra_class_spread(last.embedding.view(), &train_set.y, classes);
        match run.tau {
            Some(tau) => {
                let gll_rows: Vec<&EpochMetrics> = run.metrics.iter().filter(|m| m.head == HeadKind::Gll).collect();
                let res = TauResult {
                    tau,
                    final_spread,
                    final_train_acc: gll_rows.last().map_or(f64::NAN, |m| m.train_acc),
                    reached_99: gll_rows.iter().find(|m| m.train_acc >= 0.99).map(|m| m.epoch),
                };
                say(
                    quiet,
                    format!(
                        "tau {tau}: final intra-class distance {final_spread:.4}, train acc {:.4}",
                        res.final_train_acc
                    ),
                );
                summary.taus.push(res);
            }
            None => {
                say(quiet, format!("softmax baseline: final intra-class distance {final_spread:.4}"));
                summary.softmax_spread = final_spread;
            }
        }
    }
    emb.finish()?;
    baseline.finish()?;
    spread.finish()?;
    metrics.finish()?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct GradcheckSummary {
    pub entries: usize,
    pub max_relative_error: f64,
    pub max_small_abs_error: f64,
    /// `case:parameter` of every failing entry.
    pub failures: Vec<String>,
}

/// Finite-difference checks of the backward pass on random instances.
pub fn gradcheck(cfg: &RunConfig, out: &OutputDir, quiet: bool) -> Result<GradcheckSummary> {
    let g = &cfg.gradcheck;
    let solver = SolverConfig {
        tol: cfg.solver_tol.unwrap_or(1e-13),
        max_iter: cfg.train.gll.solver.max_iter,
        outer_tol: 1e-13,
        max_outer: 20_000,
        ..SolverConfig::default()
    };
    let cases = gradcheck_cases(g.instances, cfg.seed, cfg.p);
    say(quiet, format!("checking {} random instances with h = {}", cases.len(), g.h));
    let results: Vec<Vec<GradcheckEntry>> = cases
        .par_iter()
        .map(|case| run_gradcheck(case, g.h, &solver).with_context(|| format!("instance {case:?}")))
        .collect::<Result<_>>()?;

    let mut csv = CsvOut::create(&out.path("gradcheck.csv"), &["parameter", "analytic", "numeric", "relative_error"])?;
    let mut summary = GradcheckSummary {
        entries: 0,
        max_relative_error: 0.0,
        max_small_abs_error: 0.0,
        failures: Vec::new(),
    };
    for (i, entries) in results.iter().enumerate() {
        for e in entries {
            let name = format!("case{i}:{}", e.parameter);
            csv.row([
                name.clone(),
                num(e.analytic),
                num(e.numeric),
                num(e.relative_error()),
            ])?;
            summary.entries += 1;
            if e.analytic.abs() < 1e-3 {
                summary.max_small_abs_error = summary.max_small_abs_error.max((e.analytic - e.numeric).abs());
            } else {
                summary.max_relative_error = summary.max_relative_error.max(e.relative_error());
            }
            if !e.passes(g.rel_tol, g.abs_tol) {
                summary.failures.push(name);
            }
        }
    }
    csv.finish()?;
    say(
        quiet,
        format!(
            "{} entries: max relative error {:.3e}, max absolute error on small gradients {:.3e}, {} failures",
            summary.entries,
            summary.max_relative_error,
            summary.max_small_abs_error,
            summary.failures.len()
        ),
    );
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct AttackSummary {
    pub head: HeadKind,
    pub rows: Vec<SweepRow>,
}

/// Attacks the test set of a trained (or loaded) model with every attack
/// in the configured grid.
pub fn attack(cfg: &RunConfig, out: &OutputDir, quiet: bool) -> Result<AttackSummary> {
    let (train_set, test_set) = load_data(cfg)?;
    if test_set.is_empty() {
        bail!("attacks need a test set");
    }
    let model = match &cfg.checkpoint {
        Some(path) => {
            say(quiet, format!("loading {}", path.display()));
            load_model(path)?
        }
        None => train_cmd(cfg, out, quiet)?.model,
    };
    let head = cfg.train.head_at(cfg.train.epochs);
    let rows = match cfg.attack.limit {
        Some(m) if m < test_set.len() => m,
        _ => test_set.len(),
    };
    let victims = test_set.split_at(rows).0;
    let anchors = evaluation_anchors(&cfg.train, &train_set, victims.len())?;
    let anchor_x = train_set.x.select(Axis(0), &anchors);
    let anchor_y: Vec<usize> = anchors.iter().map(|&r| train_set.y[r]).collect();
    let gll_target = GllTarget {
        model: &model,
        anchors: anchor_x.view(),
        anchor_labels: &anchor_y,
        cfg: &cfg.train.gll,
    };
    let softmax_target = SoftmaxTarget { model: &model };
    let target: &dyn gll_core::AttackTarget = match head {
        HeadKind::Gll => &gll_target,
        HeadKind::Softmax => &softmax_target,
    };
    let grid = cfg.attack_grid();
    say(quiet, format!("running {} attacks on {} test points against the {} head", grid.len(), victims.len(), head.as_str()));
    let results = attack_sweep(target, victims.x.view(), &victims.y, &grid, cfg.attack.range)?;

    let mut csv = CsvOut::create(&out.path("sweep.csv"), &["attack", "param", "accuracy", "mean_l2_sq_distance"])?;
    let mut summary = AttackSummary { head, rows: Vec::new() };
    for (row, res) in results {
        csv.row([
            row.attack.to_string(),
            num(row.param),
            num(row.accuracy),
            num(row.mean_l2_sq_distance),
        ])?;
        say(quiet, format!("{} {}: accuracy {:.4}, mean squared l2 {:.4e}", row.attack, row.param, row.accuracy, row.mean_l2_sq_distance));
        if cfg.attack.dump {
            let meta = serde_json::json!({
                "attack": row.attack,
                "param": row.param,
                "head": head.as_str(),
                "labels": victims.y,
                "adv_pred": res.adv_pred,
                "success": res.success,
            });
            write_matrix(&out.path(&format!("adv_{}_{}.bin", row.attack, row.param)), res.adversarial.view(), meta)?;
        }
        summary.rows.push(row);
    }
    csv.finish()?;
    Ok(summary)
}
