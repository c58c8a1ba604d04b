// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::format;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// MLP nonlinearity `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x / core::f64::consts::SQRT_2)),
        }
    }
}

/// Shape of a decoder-only reference model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_mlp: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub activation: Activation,
    pub max_seq: usize,
}

impl ModelConfig {
    /// Checks structural invariants. `n_parties` is the number of party
    /// tokens the vocabulary must hold next to the two reserved ids.
    pub fn validate(&self, n_parties: usize) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::InvalidConfig("n_layers must be >= 1".into()));
        }
        if self.d_mlp == 0 || self.d_model == 0 || self.max_seq == 0 {
            return Err(Error::InvalidConfig("d_model, d_mlp and max_seq must be >= 1".into()));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < n_parties + 2 {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} < {} party tokens + 2 reserved",
                self.vocab_size, n_parties
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
