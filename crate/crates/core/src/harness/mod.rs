//! Experiment specs, runs, sweeps and reports.

pub mod files;
pub mod report;
pub mod run;
pub mod spec;
pub mod sweep;

pub use files::{sha256_hex, verify_inventory, FileEntry};
pub use report::timing_table;
pub use run::{execute_experiment, run_experiment, ExperimentOutput, RunManifest, RunRecord};
pub use spec::{load_experiment_spec, parse_experiment_spec, ExperimentSpec, ReferenceSpec};
pub use sweep::{run_sweep, SweepAxis, SweepManifest};
