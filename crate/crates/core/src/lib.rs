//! Ensemble Kalman, particle and optimal-transport filters for state-space
//! models, with reference posteriors and an experiment harness.

pub mod ensemble;
pub mod error;
pub mod filters;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod models;
pub mod nn;
pub mod oracle;
pub mod rng;
pub mod transport;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/filters.md")]
    mod filters {}
    #[doc = include_str!("../../../book/src/transport.md")]
    mod transport {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
