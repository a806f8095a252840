//! Fixtures shared by the benchmarks.

use nalgebra::DVector;
use robust_lspi::envs::{build_chain, slip_vertex_sets, ChainSpec};
use robust_lspi::{FeatureMap, TabularRmdp};

/// The default chain with two-vertex slip sets of size `delta`.
pub fn robust_chain(delta: f64) -> TabularRmdp {
    let spec = ChainSpec::default();
    let model = build_chain(&spec).expect("default chain");
    model
        .with_sets(slip_vertex_sets(&spec, delta).expect("valid delta"))
        .expect("sets fit the chain")
}

/// Quadratic state features stacked over the chain's two actions.
pub fn chain_features() -> FeatureMap {
    FeatureMap::stacked(FeatureMap::polynomial_1d(2, 0.0, 9.0), 2)
}

/// Deterministic test vector `x_i = sin(i + 1)`.
pub fn wavy(n: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| ((i + 1) as f64).sin())
}
