//! Conditional optimal transport: the potential `f`, the map `T`, the
//! empirical max-min objective, its training loop and the slack diagnostic.

pub mod enkf_block;
pub mod gap;
pub mod maps;
pub mod objective;
pub mod training;

pub use enkf_block::EnKFBlock;
pub use gap::{estimate_optimality_gap, GapDiagnostic, InnerSolverConfig};
pub use maps::{MapTape, Potential, ScalarField, TransportMap};
pub use objective::{empirical_objective, ObjectiveParts, TrainingBatch};
pub use training::{apply_map, fit_conditional_map, ConditionalOt, TraceRow, TrainConfig};
