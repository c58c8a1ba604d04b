// SPDX-License-Identifier: MIT OR Apache-2.0

//! Numerical core for locating party-promoting MLP value vectors in a
//! transformer and for measuring how persona prompts spread over parties.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. File formats,
//! the CLI and parallel drivers live in the `partylens` crate.
//!
//! Pipeline, in module order:
//!
//! - [`tensor`]: dense `f32` tensors, `f64`-accumulated kernels, named stores.
//! - [`model`]: reference decoder-only transformer with residual recording,
//!   MLP sub-update decomposition, and planted toy models.
//! - [`probe`]: weighted-BCE linear probes on mean residual streams.
//! - [`extract`]: cosine alignment of probe weights with value vectors.
//! - [`persona`]: persona grids, prompt templates, survey weights.
//! - [`scaling`]: per-persona scaling factors over the selected vectors.
//! - [`analytics`]: party distributions, entropy, Wasserstein sensitivity, OLS.
//! - [`corpus`]: synthetic party statement corpora.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod analytics;
pub mod corpus;
pub mod error;
pub mod extract;
pub mod model;
pub mod persona;
pub mod probe;
pub mod scaling;
pub mod tensor;

pub use error::{Error, Result};
