//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use gll_core::nn::{BaseSelection, GllHeadConfig, HeadKind, LrSchedule, OptimizerKind, PgdConfig, ScoreKind, TrainConfig};
use gll_core::{AttackKind, BandwidthMode, PixelRange, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    TwoMoons,
    Idx,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub n: usize,
    pub test_n: usize,
    pub noise: f64,
    /// Defaults to the run seed; the test set uses `seed + 1`.
    pub seed: Option<u64>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub kinds: Vec<String>,
    pub eps: Vec<f64>,
    pub alpha: f64,
    /// 0 picks `ceil(5 eps / alpha)`.
    pub iters: usize,
    pub c: Vec<f64>,
    pub cw_iters: usize,
    pub cw_lr: f64,
    pub range: PixelRange,
    pub limit: Option<usize>,
    pub dump: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub h: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub snapshots: Vec<usize>,
    pub svg: bool,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    /// Checkpoint attacked instead of training a fresh model.
    pub checkpoint: Option<PathBuf>,
    /// Explicit linear solver tolerance; commands pick their own otherwise.
    pub solver_tol: Option<f64>,
    pub p: f64,
    pub taus: Vec<f64>,
    pub attack: AttackConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            snapshots: vec![0, 100, 500, 2000],
            svg: true,
            dataset: DatasetConfig {
                kind: DatasetKind::TwoMoons,
                n: 200,
                test_n: 200,
                noise: 0.1,
                seed: None,
                train_images: None,
                train_labels: None,
                test_images: None,
                test_labels: None,
                train_limit: None,
                test_limit: None,
            },
            train: TrainConfig::default(),
            checkpoint: None,
            solver_tol: None,
            p: 2.0,
            taus: vec![0.0, 0.01, 0.5],
            attack: AttackConfig {
                kinds: vec!["fgsm".into(), "ifgsm".into()],
                eps: vec![0.0, 0.1, 0.2, 0.3],
                alpha: 0.05,
                iters: 0,
                c: vec![0.1, 1.0, 10.0],
                cw_iters: 100,
                cw_lr: 0.01,
                range: PixelRange::default(),
                limit: None,
                dump: false,
            },
            gradcheck: GradcheckConfig {
                instances: 20,
                h: 1e-5,
                rel_tol: 1e-4,
                abs_tol: 1e-7,
            },
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| anyhow!("{key}: cannot parse {raw:?}: {e}"))
}

fn list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| value(key, s))
        .collect()
}

fn flag(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => bail!("{key}: expected true or false, got {raw:?}"),
    }
}

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, val) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected `key = value`", no + 1))?;
        let key = key.trim().to_string();
        if out.insert(key.clone(), (no + 1, val.trim().to_string())).is_some() {
            bail!("line {}: duplicate key {key}", no + 1);
        }
    }
    Ok(out)
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let resolve = |raw: &str| -> PathBuf {
            let p = PathBuf::from(raw);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };
        let mut bandwidth = None;
        let mut head_k = None;
        let (mut pgd_eps, mut pgd_alpha, mut pgd_iters) = (None, 0.01, 5);
        let (mut step_every, mut step_factor) = (100, 0.1);
        let mut schedule = "constant".to_string();
        let mut momentum = 0.9;
        let mut optimizer = "adam".to_string();
        let mut max_iter = None;
        let mut tau = 0.0;

        for (key, (line, raw)) in parse_pairs(text)? {
            let raw = raw.as_str();
            let k = key.as_str();
            let t = &mut cfg.train;
            let r: Result<()> = (|| {
                match k {
                    "seed" => cfg.seed = value(k, raw)?,
                    "output.dir" => cfg.out_dir = resolve(raw),
                    "output.snapshots" => cfg.snapshots = list(k, raw)?,
                    "output.svg" => cfg.svg = flag(k, raw)?,
                    "dataset.kind" => {
                        cfg.dataset.kind = match raw {
                            "two_moons" => DatasetKind::TwoMoons,
                            "idx" => DatasetKind::Idx,
                            _ => bail!("{k}: expected two_moons or idx"),
                        }
                    }
                    "dataset.n" => cfg.dataset.n = value(k, raw)?,
                    "dataset.test_n" => cfg.dataset.test_n = value(k, raw)?,
                    "dataset.noise" => cfg.dataset.noise = value(k, raw)?,
                    "dataset.seed" => cfg.dataset.seed = Some(value(k, raw)?),
                    "dataset.train_images" => cfg.dataset.train_images = Some(resolve(raw)),
                    "dataset.train_labels" => cfg.dataset.train_labels = Some(resolve(raw)),
                    "dataset.test_images" => cfg.dataset.test_images = Some(resolve(raw)),
                    "dataset.test_labels" => cfg.dataset.test_labels = Some(resolve(raw)),
                    "dataset.train_limit" => cfg.dataset.train_limit = Some(value(k, raw)?),
                    "dataset.test_limit" => cfg.dataset.test_limit = Some(value(k, raw)?),
                    "model.encoder" => t.encoder_sizes = list(k, raw)?,
                    "model.head" => {
                        t.head = match raw {
                            "gll" => HeadKind::Gll,
                            "softmax" => HeadKind::Softmax,
                            _ => bail!("{k}: expected gll or softmax"),
                        }
                    }
                    "model.switch_epoch" => t.switch_epoch = Some(value(k, raw)?),
                    "model.epochs" => t.epochs = value(k, raw)?,
                    "model.batch_size" => t.batch_size = value(k, raw)?,
                    "model.base" => t.base_per_batch = value(k, raw)?,
                    "model.base_selection" => {
                        t.base_selection = match raw {
                            "random" => BaseSelection::Random,
                            "first" => BaseSelection::First,
                            "entropy" => BaseSelection::Scored(ScoreKind::Entropy),
                            "l2" => BaseSelection::Scored(ScoreKind::L2),
                            _ => bail!("{k}: expected random, first, entropy or l2"),
                        }
                    }
                    "model.k" => head_k = Some(value(k, raw)?),
                    "model.bandwidth" => {
                        bandwidth = Some(match raw {
                            "self_tuning" => BandwidthMode::SelfTuning,
                            _ => BandwidthMode::Constant(value(k, raw)?),
                        })
                    }
                    "model.optimizer" => optimizer = raw.to_string(),
                    "model.momentum" => momentum = value(k, raw)?,
                    "model.lr" => t.lr = value(k, raw)?,
                    "model.schedule" => schedule = raw.to_string(),
                    "model.step_every" => step_every = value(k, raw)?,
                    "model.step_factor" => step_factor = value(k, raw)?,
                    "model.eval_every" => t.eval_every = value(k, raw)?,
                    "model.anchor_ratio" => t.anchor_ratio = value(k, raw)?,
                    "model.monitor_gll" => t.monitor_gll = flag(k, raw)?,
                    "model.input_mean" => t.input_mean = value(k, raw)?,
                    "model.input_std" => t.input_std = value(k, raw)?,
                    "model.pgd_eps" => pgd_eps = Some(value(k, raw)?),
                    "model.pgd_alpha" => pgd_alpha = value(k, raw)?,
                    "model.pgd_iters" => pgd_iters = value(k, raw)?,
                    "model.checkpoint" => cfg.checkpoint = Some(resolve(raw)),
                    "solver.tol" => cfg.solver_tol = Some(value(k, raw)?),
                    "solver.max_iter" => max_iter = Some(value(k, raw)?),
                    "solver.tau" => tau = value(k, raw)?,
                    "solver.taus" => cfg.taus = list(k, raw)?,
                    "solver.p" => cfg.p = value(k, raw)?,
                    "attack.kinds" => cfg.attack.kinds = list(k, raw)?,
                    "attack.eps" => cfg.attack.eps = list(k, raw)?,
                    "attack.alpha" => cfg.attack.alpha = value(k, raw)?,
                    "attack.iters" => cfg.attack.iters = value(k, raw)?,
                    "attack.c" => cfg.attack.c = list(k, raw)?,
                    "attack.cw_iters" => cfg.attack.cw_iters = value(k, raw)?,
                    "attack.cw_lr" => cfg.attack.cw_lr = value(k, raw)?,
                    "attack.range" => {
                        let v: Vec<f64> = list(k, raw)?;
                        if v.len() != 2 {
                            bail!("{k}: expected `lo, hi`");
                        }
                        cfg.attack.range = PixelRange::new(v[0], v[1])?;
                    }
                    "attack.limit" => cfg.attack.limit = Some(value(k, raw)?),
                    "attack.dump" => cfg.attack.dump = flag(k, raw)?,
                    "gradcheck.instances" => cfg.gradcheck.instances = value(k, raw)?,
                    "gradcheck.h" => cfg.gradcheck.h = value(k, raw)?,
                    "gradcheck.rel_tol" => cfg.gradcheck.rel_tol = value(k, raw)?,
                    "gradcheck.abs_tol" => cfg.gradcheck.abs_tol = value(k, raw)?,
                    _ => bail!("unknown key {k}"),
                }
                Ok(())
            })();
            r.with_context(|| format!("line {line}"))?;
        }

        let t = &mut cfg.train;
        t.seed = cfg.seed;
        t.optimizer = match optimizer.as_str() {
            "adam" => OptimizerKind::adam(),
            "sgd" => OptimizerKind::Sgd { momentum },
            other => bail!("model.optimizer: expected adam or sgd, got {other:?}"),
        };
        t.schedule = match schedule.as_str() {
            "constant" => LrSchedule::Constant,
            "cosine" => LrSchedule::Cosine { total: t.epochs },
            "step" => LrSchedule::Step {
                every: step_every,
                factor: step_factor,
            },
            other => bail!("model.schedule: expected constant, cosine or step, got {other:?}"),
        };
        t.gll = GllHeadConfig {
            k: head_k.unwrap_or(t.gll.k),
            tau,
            bandwidth: bandwidth.unwrap_or(BandwidthMode::SelfTuning),
            solver: SolverConfig {
                tol: cfg.solver_tol.unwrap_or(SolverConfig::default().tol),
                max_iter,
                ..SolverConfig::default()
            },
            ..GllHeadConfig::default()
        };
        t.adversarial = pgd_eps.map(|eps| PgdConfig {
            eps,
            alpha: pgd_alpha,
            iters: pgd_iters,
            range: cfg.attack.range,
        });
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.dataset.kind == DatasetKind::Idx {
            for (name, p) in [
                ("dataset.train_images", &self.dataset.train_images),
                ("dataset.train_labels", &self.dataset.train_labels),
            ] {
                match p {
                    None => bail!("{name} is required for idx datasets"),
                    Some(p) if !p.is_file() => bail!("{name}: {} does not exist", p.display()),
                    _ => {}
                }
            }
            for (name, p) in [
                ("dataset.test_images", &self.dataset.test_images),
                ("dataset.test_labels", &self.dataset.test_labels),
            ] {
                if let Some(p) = p {
                    if !p.is_file() {
                        bail!("{name}: {} does not exist", p.display());
                    }
                }
            }
        }
        if let Some(p) = &self.checkpoint {
            if !p.is_file() {
                bail!("model.checkpoint: {} does not exist", p.display());
            }
        }
        if !(self.p >= 1.0) {
            bail!("solver.p must be at least 1");
        }
        for kind in &self.attack.kinds {
            if !matches!(kind.as_str(), "fgsm" | "ifgsm" | "cw") {
                bail!("attack.kinds: unknown attack {kind:?}");
            }
        }
        Ok(())
    }

    /// The attacks to sweep, in config order.
    pub fn attack_grid(&self) -> Vec<AttackKind> {
        let a = &self.attack;
        let mut grid = Vec::new();
        for kind in &a.kinds {
            match kind.as_str() {
                "fgsm" => grid.extend(a.eps.iter().map(|&eps| AttackKind::Fgsm { eps })),
                "ifgsm" => grid.extend(a.eps.iter().map(|&eps| {
                    if a.iters == 0 {
                        AttackKind::ifgsm(eps, a.alpha)
                    } else {
                        AttackKind::Ifgsm {
                            eps,
                            alpha: a.alpha,
                            iters: a.iters,
                        }
                    }
                })),
                _ => grid.extend(a.c.iter().map(|&c| AttackKind::Cw {
                    c,
                    iters: a.cw_iters,
                    lr: a.cw_lr,
                })),
            }
        }
        grid
    }
}
