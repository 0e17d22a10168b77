#![allow(dead_code)]

use gll_core::{build_graph, BandwidthMode, FeatureMatrix, Graph, LabelData, WeightKernel};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_features(n: usize, d: usize, seed: u64) -> FeatureMatrix {
    let mut r = rng(seed);
    FeatureMatrix::new(Array2::from_shape_fn((n, d), |_| r.sample(StandardNormal))).unwrap()
}

pub fn random_graph(n: usize, d: usize, k: usize, seed: u64) -> (FeatureMatrix, Graph) {
    let x = random_features(n, d, seed);
    let g = build_graph(&x, k, WeightKernel::default(), BandwidthMode::SelfTuning).unwrap();
    (x, g)
}

/// Random labels with every class present and every connected component labeled.
pub fn random_labels(g: &Graph, m: usize, classes: usize, seed: u64) -> LabelData {
    let mut r = rng(seed ^ 0x9e37_79b9);
    let comps = gll_core::connected_components(g);
    let mut chosen: Vec<usize> = comps.representatives();
    while chosen.len() < m.max(classes) {
        let x = r.random_range(0..g.n());
        if !chosen.contains(&x) {
            chosen.push(x);
        }
    }
    let cls: Vec<usize> = (0..chosen.len()).map(|i| i % classes).collect();
    LabelData::from_classes(&chosen, &cls, classes).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((rows, cols), |_| r.sample(StandardNormal))
}

/// Dense `D - W + diag(extra)`.
pub fn dense_operator(g: &Graph, extra: &[f64]) -> DMatrix<f64> {
    let n = g.n();
    let mut a = DMatrix::zeros(n, n);
    for (i, j, w) in g.weights().iter() {
        a[(i, j)] -= w;
        a[(j, i)] -= w;
        a[(i, i)] += w;
        a[(j, j)] += w;
    }
    for x in 0..n {
        a[(x, x)] += extra[x];
    }
    a
}

/// Dense solve of `A u = rhs` on free nodes with `u = bnd` on fixed ones.
pub fn dense_dirichlet_solve(a: &DMatrix<f64>, fixed: &[bool], bnd: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = fixed.len();
    let free: Vec<usize> = (0..n).filter(|&x| !fixed[x]).collect();
    let m = free.len();
    let mut sub = DMatrix::zeros(m, m);
    let mut b = DVector::zeros(m);
    for (r, &x) in free.iter().enumerate() {
        b[r] = rhs[x];
        for y in 0..n {
            if fixed[y] {
                b[r] -= a[(x, y)] * bnd[y];
            }
        }
        for (c, &y) in free.iter().enumerate() {
            sub[(r, c)] = a[(x, y)];
        }
    }
    let sol = sub.lu().solve(&b).expect("nonsingular");
    let mut u = bnd.to_vec();
    for (r, &x) in free.iter().enumerate() {
        u[x] = sol[r];
    }
    u
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Mean cross-entropy of `softmax(u)` over rows not in `exclude`, with its gradient.
pub fn softmax_ce(u: &Array2<f64>, labels: &[usize], exclude: &[usize]) -> (f64, Array2<f64>) {
    let rows: Vec<usize> = (0..u.nrows()).filter(|r| !exclude.contains(r)).collect();
    let cnt = rows.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(u.dim());
    for &r in &rows {
        let mx = u.row(r).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let z: f64 = u.row(r).iter().map(|v| (v - mx).exp()).sum();
        loss -= u[[r, labels[r]]] - mx - z.ln();
        for c in 0..u.ncols() {
            let p = (u[[r, c]] - mx).exp() / z;
            grad[[r, c]] = (p - if c == labels[r] { 1.0 } else { 0.0 }) / cnt;
        }
    }
    (loss / cnt, grad)
}

/// Relative error check with an absolute floor for tiny gradients.
pub fn grad_close(analytic: f64, numeric: f64, rel_tol: f64, abs_tol: f64) -> bool {
    if analytic.abs() < 1e-3 {
        return (analytic - numeric).abs() <= abs_tol
            || (analytic - numeric).abs() <= rel_tol * analytic.abs().max(numeric.abs());
    }
    (analytic - numeric).abs() <= rel_tol * analytic.abs().max(numeric.abs())
}
