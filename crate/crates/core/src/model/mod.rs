// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reference decoder-only transformer, its tokenizer, and planted toy models.

pub mod config;
pub mod toy;
pub mod transformer;
pub mod vocab;

pub use config::{Activation, ModelConfig};
pub use toy::{gen_toy_model, PlantManifest, PlantSlot, PlantSpec};
pub use transformer::{Block, ForwardOutput, Model, ResidualTrace, SubUpdate};
pub use vocab::Vocab;
