//! Fixtures shared by the benchmarks.

use dpd_core::simharness::{default_scenario, generate_dataset, Scenario, SimHypothesis};
use dpd_core::Dataset;

/// Clean normal regression data with an intercept and `p − 1` covariates.
pub fn normal_data(n: usize, p: usize, seed: u64) -> Dataset {
    let s = Scenario {
        n,
        beta: vec![1.0; p],
        hypothesis: SimHypothesis::Simple { beta0: vec![1.0; p] },
        base_seed: seed,
        ..default_scenario()
    };
    generate_dataset(&s, 0).expect("valid scenario")
}
