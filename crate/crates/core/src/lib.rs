//! Differentiable graph learning layer.
//!
//! Forward pass: build a k-NN similarity graph on a batch of features and
//! propagate labels by solving a graph Laplace-type equation. Backward pass:
//! one adjoint solve per class turns the upstream gradient into gradients
//! with respect to edge weights, source, boundary values and features.

pub mod adjoint;
pub mod attacks;
pub mod calculus;
pub mod datasets;
pub mod error;
pub mod gradcheck;
pub mod graph;
mod linalg;
pub mod nn;
pub mod solvers;
pub mod sparse;

pub use adjoint::{
    gll_backward, grad_f, grad_features, grad_g, grad_w, grad_w_directed, partials_from_edge_derivative,
    solve_adjoint, AdjointSolution, GradBundle, GradWorkspace,
};
pub use attacks::{
    attack_sweep, cw_attack, fgsm, ifgsm, pgd_perturb, run_attack, AttackKind, AttackResult, AttackTarget, GllTarget,
    PixelRange, SoftmaxTarget, SweepRow,
};
pub use calculus::{
    dirichlet_energy, edge_inner, field_divergence, graph_divergence, graph_gradient, laplacian_apply, node_inner,
    EdgeFunction, VectorField,
};
pub use datasets::{load_idx, two_moons, Dataset, IdxDataset, TwoMoonsSpec};
pub use error::{GllError, Result};
pub use gradcheck::{gradcheck_cases, run_gradcheck, GradcheckCase, GradcheckEntry};
pub use graph::{
    build_graph, connected_components, knn_search, BandwidthMode, Components, FeatureMatrix, Graph, Neighbor,
    WeightKernel,
};
pub use linalg::CgOutcome;
pub use solvers::{
    check_solvable, elliptic_residual, predict, solve_elliptic, solve_laplace, solve_laplace_soft,
    solve_laplace_with_source, solve_plaplace, solve_poisson, CustomPhi, EllipticProblem, LabelData, PhiSpec,
    Solution, SolverConfig,
};
pub use sparse::{EdgePattern, SparseSymMatrix};
