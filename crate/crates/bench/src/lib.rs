//! Shared fixtures for the criterion benchmarks.

use vpflow::integrators::SolverConfig;
use vpflow::problems::{benchmark, Benchmark};
use vpflow::tableau::{gauss_legendre, ButcherTableau};

pub fn gauss2() -> ButcherTableau {
    gauss_legendre(2).expect("2-stage Gauss tableau")
}

pub fn duffing() -> Benchmark {
    benchmark("duffing").expect("duffing benchmark")
}

pub fn divfree3d() -> Benchmark {
    benchmark("divfree3d").expect("divfree3d benchmark")
}

pub fn charged_particle() -> Benchmark {
    benchmark("charged-particle").expect("charged-particle benchmark")
}

pub fn config(h: f64) -> SolverConfig {
    SolverConfig::new(h)
}
