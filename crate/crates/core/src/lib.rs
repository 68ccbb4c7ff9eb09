//! Rank-disagreement importance sampling for label-noise-robust training.
//!
//! The crate holds the algorithmic core and has no IO: synthetic data and
//! label-corruption injection ([`data`]), small differentiable learners with
//! per-example statistics ([`learners`]), per-example scores including the
//! cross-proxy rank variance ([`scores`]), static and online samplers
//! ([`sampler`]) and the closed-form separation certificates together with
//! their Monte-Carlo verifiers ([`certify`]).
//!
//! The crate is `no_std` and needs only `alloc`. File formats, experiment
//! orchestration and the command line live in the `dris` crate.
#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod certify;
pub mod data;
pub mod error;
pub mod learners;
pub mod math;
pub mod matrix;
pub mod rng;
pub mod sampler;
pub mod scores;
pub mod stats;

pub use error::{Error, Result};
pub use matrix::Matrix;
