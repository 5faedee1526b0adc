//! End-to-end scenarios: synthetic experiments with reference trains, run averaging,
//! fitting and reproducible artifacts.
//!
//! Every random draw is seeded from the scenario seed through [`derive_seed`], keyed by
//! scenario, data point, run and train, so reruns are bit-identical regardless of
//! thread scheduling.

mod report;
mod run;
mod scenario;

pub use report::*;
pub use run::{
    correct_for_depumping, depump_correction, derive_seed, run_scenario, run_scenario_with_line,
};
pub use scenario::*;
