//! Shared fixtures for the benchmarks.

use gmed_core::simulation::{generate, DgpSpec, Process};
use gmed_core::{Dataset, TargetParams};

/// Correctly specified process-A data with `β = (1, 1, 1)`.
pub fn fixture(n: usize) -> Dataset {
    generate(&DgpSpec::new(Process::A, TargetParams::new(1.0, 1.0, 1.0), n, 17)).expect("valid design")
}
