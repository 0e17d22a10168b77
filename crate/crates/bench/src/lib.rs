//! Shared fixtures for the benchmarks.

use gll_core::{build_graph, two_moons, BandwidthMode, FeatureMatrix, Graph, LabelData, TwoMoonsSpec, WeightKernel};

pub struct Fixture {
    pub x: FeatureMatrix,
    pub graph: Graph,
    pub labels: LabelData,
}

/// Two moons with `n` points, a 10-NN self-tuning graph and 10 labeled nodes
/// plus one per stray component.
pub fn fixture(n: usize) -> Fixture {
    let data = two_moons(&TwoMoonsSpec { n, noise: 0.1, seed: 7 }).expect("two moons");
    let x = FeatureMatrix::new(data.x).expect("finite features");
    let graph = build_graph(&x, 10, WeightKernel::default(), BandwidthMode::SelfTuning).expect("graph");
    let mut rows: Vec<usize> = (0..10).map(|i| i * n / 10).collect();
    for r in gll_core::connected_components(&graph).representatives() {
        if !rows.contains(&r) {
            rows.push(r);
        }
    }
    let classes: Vec<usize> = rows.iter().map(|&r| data.y[r]).collect();
    let labels = LabelData::from_classes(&rows, &classes, 2).expect("labels");
    Fixture { x, graph, labels }
}
