//! A small dense-network engine: residual MLPs, reverse-mode gradients and Adam.

mod adam;
mod dense;
pub mod params;

pub use adam::{AdamConfig, AdamState};
pub use dense::{DenseNet, Gradient, Layer, Linear, NetLayout, ResidualBlock, Tape};
