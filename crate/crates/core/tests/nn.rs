mod common;

use common::{grad_close, random_matrix, rng, softmax_ce};
use gll_core::nn::{
    batch_pass, cross_entropy, load_model, save_model, softmax, train, train_observed, Activation, BaseSpec,
    GllHeadConfig, HeadKind, Layer, LrSchedule, Mlp, Model, OptimizerKind, OptimizerState, TrainConfig,
};
use gll_core::{two_moons, Dataset, SolverConfig, TwoMoonsSpec};
use ndarray::{array, Array2};
use proptest::prelude::*;

fn tight_gll() -> GllHeadConfig {
    GllHeadConfig {
        k: 5,
        solver: SolverConfig {
            tol: 1e-13,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn weighted_sum(out: &Array2<f64>, r: &Array2<f64>) -> f64 {
    (out * r).sum()
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let mut mlp = Mlp::new(&[3, 7, 5, 2], &mut rng(1)).unwrap();
    let x = random_matrix(6, 3, 2);
    let r = random_matrix(6, 2, 3);
    let (_, cache) = mlp.forward(x.view()).unwrap();
    let (grads, grad_x) = mlp.backward(&cache, r.view()).unwrap();
    let h = 1e-6;
    let f = |m: &Mlp, x: &Array2<f64>| weighted_sum(&m.predict(x.view()).unwrap(), &r);

    for l in 0..3 {
        let (rows, cols) = mlp.layers()[l].weight.dim();
        for (i, j) in [(0, 0), (rows - 1, cols - 1), (rows / 2, cols / 2)] {
            let orig = mlp.layers()[l].weight[[i, j]];
            mlp.layers_mut()[l].weight[[i, j]] = orig + h;
            let up = f(&mlp, &x);
            mlp.layers_mut()[l].weight[[i, j]] = orig - h;
            let down = f(&mlp, &x);
            mlp.layers_mut()[l].weight[[i, j]] = orig;
            let num = (up - down) / (2.0 * h);
            assert!(grad_close(grads.weights[l][[i, j]], num, 1e-6, 1e-8), "W{l}[{i},{j}]");
        }
        let orig = mlp.layers()[l].bias[0];
        mlp.layers_mut()[l].bias[0] = orig + h;
        let up = f(&mlp, &x);
        mlp.layers_mut()[l].bias[0] = orig - h;
        let down = f(&mlp, &x);
        mlp.layers_mut()[l].bias[0] = orig;
        assert!(grad_close(grads.biases[l][0], (up - down) / (2.0 * h), 1e-6, 1e-8), "b{l}");
    }
    for i in 0..6 {
        for j in 0..3 {
            let mut xp = x.clone();
            xp[[i, j]] += h;
            let mut xm = x.clone();
            xm[[i, j]] -= h;
            let num = (f(&mlp, &xp) - f(&mlp, &xm)) / (2.0 * h);
            assert!(grad_close(grad_x[[i, j]], num, 1e-6, 1e-8), "x[{i},{j}]");
        }
    }
}

#[test]
fn cross_entropy_matches_oracle_and_finite_differences() {
    let u = random_matrix(8, 3, 4);
    let labels = [0, 1, 2, 0, 1, 2, 0, 1];
    let rows = [1, 2, 4, 5, 6];
    let (loss, grad) = cross_entropy(u.view(), &labels, &rows).unwrap();
    let (want, want_grad) = softmax_ce(&u, &labels, &[0, 3, 7]);
    assert!((loss - want).abs() < 1e-14);
    assert!((&grad - &want_grad).iter().all(|d| d.abs() < 1e-15));
    let h = 1e-6;
    for i in 0..8 {
        for c in 0..3 {
            let mut up = u.clone();
            up[[i, c]] += h;
            let mut dn = u.clone();
            dn[[i, c]] -= h;
            let num = (cross_entropy(up.view(), &labels, &rows).unwrap().0
                - cross_entropy(dn.view(), &labels, &rows).unwrap().0)
                / (2.0 * h);
            assert!((grad[[i, c]] - num).abs() < 1e-8);
        }
    }
}

#[test]
fn encoder_and_graph_head_gradient_matches_finite_differences() {
    let mut model = Model::new(&[2, 8, 2], 2, &mut rng(5)).unwrap();
    let x = random_matrix(20, 2, 6);
    let y: Vec<usize> = (0..20).map(|i| i % 2).collect();
    let base = [0, 1, 2, 3];
    let base_labels: Vec<usize> = base.iter().map(|&r| y[r]).collect();
    let rows: Vec<usize> = (4..20).collect();
    let cfg = tight_gll();
    let spec = BaseSpec::Given {
        rows: &base,
        labels: &base_labels,
    };
    let loss = |m: &Model, x: &Array2<f64>| {
        let fwd = m.gll_forward(x.view(), spec, &cfg).unwrap();
        cross_entropy(fwd.u.view(), &y, &rows).unwrap().0
    };
    let pass = model
        .gll_pass(x.view(), spec, &cfg, |u, _| cross_entropy(u, &y, &rows))
        .unwrap();
    assert!((pass.value - loss(&model, &x)).abs() < 1e-14);

    let h = 1e-6;
    for l in 0..2 {
        for (i, j) in [(0, 0), (1, 1), (1, 0)] {
            let orig = model.encoder.layers()[l].weight[[i, j]];
            model.encoder.layers_mut()[l].weight[[i, j]] = orig + h;
            let up = loss(&model, &x);
            model.encoder.layers_mut()[l].weight[[i, j]] = orig - h;
            let down = loss(&model, &x);
            model.encoder.layers_mut()[l].weight[[i, j]] = orig;
            let num = (up - down) / (2.0 * h);
            assert!(grad_close(pass.encoder.weights[l][[i, j]], num, 1e-4, 1e-7), "W{l}[{i},{j}]");
        }
    }
    for i in [0, 5, 11, 19] {
        for j in 0..2 {
            let mut xp = x.clone();
            xp[[i, j]] += h;
            let mut xm = x.clone();
            xm[[i, j]] -= h;
            let num = (loss(&model, &xp) - loss(&model, &xm)) / (2.0 * h);
            assert!(grad_close(pass.grad_input[[i, j]], num, 1e-4, 1e-7), "x[{i},{j}]");
        }
    }
}

#[test]
fn graph_head_loss_skips_base_rows() {
    let model = Model::new(&[2, 8, 2], 2, &mut rng(7)).unwrap();
    let x = random_matrix(16, 2, 8);
    let y: Vec<usize> = (0..16).map(|i| (i / 2) % 2).collect();
    let base = [0, 2, 5];
    let pass = batch_pass(&model, HeadKind::Gll, x.view(), &y, &base, &tight_gll()).unwrap();
    for &b in &pass.base {
        for c in 0..2 {
            assert_eq!(pass.logits[[b, c]], if c == y[b] { 1.0 } else { 0.0 });
        }
    }
    let (want, _) = softmax_ce(&pass.logits, &y, &pass.base);
    assert!((pass.value - want).abs() < 1e-14);
}

fn blobs(n: usize, seed: u64) -> Dataset {
    let noise = random_matrix(n, 2, seed);
    let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = Array2::from_shape_fn((n, 2), |(i, j)| 0.3 * noise[[i, j]] + if y[i] == 0 { -2.0 } else { 2.0 });
    Dataset::new(x, y, 2).unwrap()
}

#[test]
fn softmax_head_separates_blobs() {
    let data = blobs(60, 9);
    let cfg = TrainConfig {
        encoder_sizes: vec![2, 16, 2],
        epochs: 60,
        lr: 1e-2,
        head: HeadKind::Softmax,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &data, &data).unwrap();
    let last = out.metrics.last().unwrap();
    assert_eq!(last.train_acc, 1.0);
    assert_eq!(last.test_acc, 1.0);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let data = blobs(20, 10);
    let cfg = TrainConfig {
        encoder_sizes: vec![2, 6, 2],
        epochs: 3,
        lr: 0.0,
        ..TrainConfig::default()
    };
    let mut initial = None;
    let out = train_observed(&cfg, &data, &data, &mut |epoch, m: &Model, _: &[usize]| {
        if epoch == 0 {
            initial = Some(m.clone());
        }
        Ok(())
    })
    .unwrap();
    assert_eq!(Some(out.model), initial);
}

#[test]
fn training_is_deterministic() {
    let train_set = two_moons(&TwoMoonsSpec { n: 40, noise: 0.1, seed: 0 }).unwrap();
    let test_set = two_moons(&TwoMoonsSpec { n: 20, noise: 0.1, seed: 1 }).unwrap();
    let cfg = TrainConfig {
        encoder_sizes: vec![2, 8, 2],
        epochs: 5,
        batch_size: 16,
        base_per_batch: 4,
        ..TrainConfig::default()
    };
    let a = train(&cfg, &train_set, &test_set).unwrap();
    let b = train(&cfg, &train_set, &test_set).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.model, b.model);
    let c = train(&TrainConfig { seed: 1, ..cfg }, &train_set, &test_set).unwrap();
    assert_ne!(a.model, c.model);
}

#[test]
fn head_switch_continues_from_softmax_run() {
    let data = two_moons(&TwoMoonsSpec { n: 30, noise: 0.1, seed: 3 }).unwrap();
    let base = TrainConfig {
        encoder_sizes: vec![2, 8, 2],
        epochs: 6,
        head: HeadKind::Softmax,
        eval_every: 100,
        base_per_batch: 4,
        ..TrainConfig::default()
    };
    let mut at_switch = None;
    let switched = train_observed(
        &TrainConfig {
            switch_epoch: Some(3),
            ..base.clone()
        },
        &data,
        &data,
        &mut |epoch, m: &Model, _: &[usize]| {
            if epoch == 3 {
                at_switch = Some(m.clone());
            }
            Ok(())
        },
    )
    .unwrap();
    let softmax_only = train(&TrainConfig { epochs: 3, ..base }, &data, &data).unwrap();
    assert_eq!(at_switch, Some(softmax_only.model));
    assert_eq!(switched.metrics.len(), 1);
    assert_eq!(switched.metrics[0].head, HeadKind::Gll);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let mut model = Model::new(&[2, 5, 3], 2, &mut rng(11)).unwrap();
    model.input_mean = 0.25;
    model.input_std = 2.0;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, model);
    let x = random_matrix(4, 2, 12);
    assert_eq!(back.softmax_logits(x.view()).unwrap(), model.softmax_logits(x.view()).unwrap());
}

#[test]
fn identity_network_has_identity_gradient() {
    let layer = Layer {
        weight: array![[1.0, 0.0], [0.0, 1.0]],
        bias: array![0.0, 0.0],
        activation: Activation::Identity,
    };
    let mlp = Mlp::from_layers(vec![layer]).unwrap();
    let g = random_matrix(3, 2, 13);
    let (_, cache) = mlp.forward(random_matrix(3, 2, 14).view()).unwrap();
    assert_eq!(mlp.backward(&cache, g.view()).unwrap().1, g);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn softmax_rows_are_distributions(seed in 0u64..1000, scale in 0.1f64..50.0) {
        let p = softmax((random_matrix(5, 4, seed) * scale).view());
        for row in p.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn cross_entropy_gradient_rows_sum_to_zero(seed in 0u64..1000) {
        let u = random_matrix(6, 3, seed);
        let labels = [2, 0, 1, 1, 0, 2];
        let (loss, g) = cross_entropy(u.view(), &labels, &[0, 1, 2, 3, 4, 5]).unwrap();
        prop_assert!(loss >= 0.0);
        for row in g.rows() {
            prop_assert!(row.sum().abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_steps_leave_parameters(seed in 0u64..100, lr in 0.0f64..1.0) {
        let mut mlp = Mlp::new(&[2, 4, 2], &mut rng(seed)).unwrap();
        let before = mlp.clone();
        let zero = gll_core::nn::MlpGrads::zeros_like(&mlp);
        for kind in [OptimizerKind::Sgd { momentum: 0.9 }, OptimizerKind::adam()] {
            let mut opt = OptimizerState::new(kind, &mlp);
            opt.step(&mut mlp, &zero, lr).unwrap();
        }
        prop_assert_eq!(mlp, before);
    }

    #[test]
    fn cosine_schedule_is_monotone(total in 1usize..500, base in 1e-5f64..1.0) {
        let s = LrSchedule::Cosine { total };
        for e in 0..total {
            prop_assert!(s.rate(base, e + 1) <= s.rate(base, e));
        }
    }
}
