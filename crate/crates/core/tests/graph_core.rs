mod common;

use std::collections::VecDeque;

use common::*;
use gll_core::*;
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn knn_matches_all_pairs_sort() {
    let x = random_features(50, 2, 11);
    let lists = knn_search(&x, 5).unwrap();
    for i in 0..50 {
        let mut all: Vec<(f64, usize)> = (0..50)
            .filter(|&j| j != i)
            .map(|j| {
                let d: f64 = (0..2).map(|c| (x.row(i)[c] - x.row(j)[c]).powi(2)).sum();
                (d.sqrt(), j)
            })
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let got: Vec<usize> = lists[i].iter().map(|nb| nb.index).collect();
        let want: Vec<usize> = all[..5].iter().map(|p| p.1).collect();
        assert_eq!(got, want, "row {i}");
        for (nb, p) in lists[i].iter().zip(&all) {
            assert!((nb.dist - p.0).abs() < 1e-15);
        }
    }
}

#[test]
fn k1_eps_is_nearest_distance() {
    let x = random_features(20, 3, 5);
    let g = build_graph(&x, 1, WeightKernel::default(), BandwidthMode::SelfTuning).unwrap();
    for i in 0..20 {
        let min = (0..20)
            .filter(|&j| j != i)
            .map(|j| x.sq_dist(i, j).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(g.eps()[i], min);
        assert_eq!(x.sq_dist(i, g.kth_neighbor()[i]).sqrt(), min);
    }
}

#[test]
fn weights_match_dense_construction() {
    let x = random_features(30, 5, 3);
    let k = 4;
    let g = build_graph(&x, k, WeightKernel::default(), BandwidthMode::SelfTuning).unwrap();
    // dense oracle: sort every row, symmetrize the k-NN relation
    let n = 30;
    let mut knn = vec![vec![false; n]; n];
    let mut eps = vec![0.0; n];
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (x.sq_dist(i, j), j)).collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        eps[i] = d[k - 1].0.sqrt();
        for p in &d[..k] {
            knn[i][p.1] = true;
        }
    }
    for i in 0..n {
        assert_eq!(g.weights().get(i, i), 0.0);
        for j in 0..n {
            let adj = knn[i][j] || knn[j][i];
            let want = if adj {
                (-4.0 * x.sq_dist(i, j) / (2.0 * eps[i] * eps[j])).exp()
            } else {
                0.0
            };
            let got = g.weights().get(i, j);
            assert!((got - want).abs() <= 1e-14, "({i},{j}) {got} vs {want}");
            assert_eq!(g.adjacency().get(i, j), if adj { 1.0 } else { 0.0 });
            if adj {
                assert!(got > 0.0 && got <= 1.0);
            }
        }
    }
}

#[test]
fn construction_is_rigid_motion_invariant() {
    let x = random_features(25, 3, 8);
    let g = build_graph(&x, 5, WeightKernel::default(), BandwidthMode::SelfTuning).unwrap();
    // rotation about the z axis followed by a shift
    let (s, c) = 0.7f64.sin_cos();
    let rot = ndarray::array![[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
    let moved = x.view().dot(&rot) + &ndarray::array![3.0, -1.0, 0.5];
    let g2 = build_graph(&FeatureMatrix::new(moved).unwrap(), 5, WeightKernel::default(), BandwidthMode::SelfTuning)
        .unwrap();
    assert_eq!(g.pattern().edges(), g2.pattern().edges());
    assert!(max_abs_diff(g.weights().values(), g2.weights().values()) <= 1e-12);
}

#[test]
fn adjoint_and_energy_identities() {
    for seed in 0..20u64 {
        let (_, g) = random_graph(25, 3, 4, seed);
        let mut r = rng(seed + 100);
        let u: Vec<f64> = (0..g.n()).map(|_| r.random_range(-1.0..1.0)).collect();
        let v = EdgeFunction {
            forward: (0..g.num_edges()).map(|_| r.random_range(-1.0..1.0)).collect(),
            backward: (0..g.num_edges()).map(|_| r.random_range(-1.0..1.0)).collect(),
        };
        let grad = graph_gradient(&g, &u).unwrap().to_edge_function();
        let lhs = edge_inner(&g, &grad, &v).unwrap();
        let rhs = node_inner(&u, &graph_divergence(&g, &v).unwrap());
        assert!((lhs - rhs).abs() <= 1e-12, "seed {seed}: {lhs} vs {rhs}");

        let lap = laplacian_apply(&g, &u, 0.0).unwrap();
        let energy = dirichlet_energy(&g, &u).unwrap();
        // direct double sum over ordered pairs
        let mut direct = 0.0;
        for i in 0..g.n() {
            for j in 0..g.n() {
                direct += 0.5 * g.weights().get(i, j) * (u[i] - u[j]).powi(2);
            }
        }
        assert!((node_inner(&lap, &u) - direct).abs() <= 1e-12 * direct.max(1.0));
        assert!((energy - direct).abs() <= 1e-12 * direct.max(1.0));
        assert!((edge_inner(&g, &grad, &grad).unwrap() - direct).abs() <= 1e-12 * direct.max(1.0));
    }
}

fn bfs_components(g: &Graph) -> usize {
    let mut seen = vec![false; g.n()];
    let mut count = 0;
    for s in 0..g.n() {
        if seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        let mut q = VecDeque::from([s]);
        while let Some(x) = q.pop_front() {
            for &(y, _) in g.pattern().neighbors(x) {
                if !seen[y] {
                    seen[y] = true;
                    q.push_back(y);
                }
            }
        }
    }
    count
}

fn random_sparse_graph(n: usize, edges: usize, seed: u64) -> Graph {
    let mut r = rng(seed);
    let mut list: Vec<(usize, usize, f64)> = Vec::new();
    while list.len() < edges {
        let (i, j) = (r.random_range(0..n), r.random_range(0..n));
        if i != j && !list.iter().any(|&(a, b, _)| (a, b) == (i.min(j), i.max(j))) {
            list.push((i.min(j), i.max(j), r.random_range(0.1..2.0)));
        }
    }
    Graph::from_weighted_edges(n, &list).unwrap()
}

#[test]
fn components_agree_with_bfs_and_spectrum() {
    for seed in 0..15u64 {
        let g = random_sparse_graph(40, 25 + seed as usize, seed);
        let comps = connected_components(&g);
        assert_eq!(comps.count, bfs_components(&g));
        let d = g.weights().to_dense();
        let n = g.n();
        let deg = g.degrees();
        let lap = DMatrix::from_fn(n, n, |i, j| if i == j { deg[i] } else { -d[[i, j]] });
        let eig = SymmetricEigen::new(lap);
        let zeros = eig.eigenvalues.iter().filter(|v| v.abs() < 1e-8).count();
        assert_eq!(zeros, comps.count, "seed {seed}");
    }
}

proptest! {
    #[test]
    fn text_round_trip_is_exact(seed in 0u64..1000, n in 6usize..20, k in 1usize..5) {
        let x = random_features(n, 2, seed);
        let g = build_graph(&x, k, WeightKernel::default(), BandwidthMode::SelfTuning).unwrap();
        let back = Graph::from_text(&g.to_text(), WeightKernel::default(), BandwidthMode::SelfTuning).unwrap();
        prop_assert_eq!(back.pattern().edges(), g.pattern().edges());
        prop_assert_eq!(back.weights().values(), g.weights().values());
        prop_assert_eq!(back.eps(), g.eps());
        prop_assert_eq!(back.kth_neighbor(), g.kth_neighbor());
        prop_assert_eq!(back.k(), k);
    }

    #[test]
    fn gradient_is_skew_and_laplacian_kills_constants(seed in 0u64..500, c in -5.0f64..5.0) {
        let (_, g) = random_graph(15, 2, 3, seed);
        let u = random_matrix(15, 1, seed + 1).column(0).to_vec();
        prop_assert!(graph_gradient(&g, &u).unwrap().to_edge_function().is_skew(0.0));
        let lap = laplacian_apply(&g, &vec![c; 15], 0.0).unwrap();
        prop_assert!(lap.iter().all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn graph_is_shareable_across_threads() {
    let (_, g) = random_graph(30, 2, 4, 1);
    let u: Vec<f64> = (0..30).map(|i| i as f64).collect();
    let reference = laplacian_apply(&g, &u, 0.1).unwrap();
    std::thread::scope(|s| {
        for _ in 0..4 {
            s.spawn(|| assert_eq!(laplacian_apply(&g, &u, 0.1).unwrap(), reference));
        }
    });
    let _ = Array2::<f64>::zeros((1, 1));
}
