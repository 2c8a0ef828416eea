//! Low-rank structural prior blocks for convolutional backbones.
//!
//! The crate bundles a small reverse-mode differentiation engine
//! ([`numerics`]), B-spline activations ([`spline`]), dynamic snake
//! convolution ([`snake`]), the plug-in block family and its ablation
//! baselines ([`blocks`]), analytic cost accounting ([`accounting`]), a
//! synthetic multi-domain training harness ([`harness`]) and prior-map
//! rendering ([`viz`]).

pub mod accounting;
pub mod blocks;
pub mod cli;
pub mod error;
pub mod harness;
pub mod module;
pub mod numerics;
pub mod rng;
pub mod snake;
pub mod spline;
pub mod viz;

pub use error::{Error, Result};
