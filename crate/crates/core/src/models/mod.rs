//! Neural allocators mapping a lookback window to long-only weights.

mod init;
pub mod lstm;
pub mod transformer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use init::{glorot_uniform, orthogonal};
pub use lstm::LstmAllocatorConfig;
pub use transformer::{TransformerAllocatorConfig, TransformerTrace};

use crate::autodiff::{Graph, Mode, ParameterSet, TensorError, Var};
use crate::rng::StreamRng;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input shape {got:?} does not match expected {expected:?} (batch first)")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Either neural architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Lstm(LstmAllocatorConfig),
    Transformer(TransformerAllocatorConfig),
}

impl ModelConfig {
    pub fn check(&self) -> Result<(), ModelError> {
        match self {
            Self::Lstm(c) => c.check(),
            Self::Transformer(c) => c.check(),
        }
    }

    pub fn lookback(&self) -> usize {
        match self {
            Self::Lstm(c) => c.lookback,
            Self::Transformer(c) => c.lookback,
        }
    }

    pub fn input_features(&self) -> usize {
        match self {
            Self::Lstm(c) => c.input_features,
            Self::Transformer(c) => c.input_features,
        }
    }

    pub fn n_assets(&self) -> usize {
        match self {
            Self::Lstm(c) => c.n_assets,
            Self::Transformer(c) => c.n_assets,
        }
    }

    pub fn init(&self, seed: u64) -> Result<ParameterSet, ModelError> {
        match self {
            Self::Lstm(c) => c.init(seed),
            Self::Transformer(c) => c.init(seed),
        }
    }

    /// `batch x assets` softmax weights for a `batch x lookback x features`
    /// input. `rng` feeds dropout and is untouched in eval mode.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &ParameterSet,
        x: Var,
        mode: Mode,
        rng: &mut StreamRng,
    ) -> Result<Var, ModelError> {
        match self {
            Self::Lstm(c) => c.forward(g, params, x),
            Self::Transformer(c) => c.forward(g, params, x, mode, rng),
        }
    }
}
