// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the core crate.

use alloc::string::String;
use alloc::vec::Vec;

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    // tensors
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("cosine of a zero-norm vector")]
    ZeroNormVector,
    #[error("tensor `{0}` already present")]
    DuplicateTensor(String),
    #[error("tensor `{0}` missing")]
    MissingTensor(String),

    // model
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("token id {token} out of vocabulary of size {vocab}")]
    TokenOutOfVocab { token: usize, vocab: usize },
    #[error("sequence of length {len} exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("layer {layer} outside [1, {n_layers}]")]
    LayerOutOfRange { layer: usize, n_layers: usize },
    #[error("plant spec needs {requested} slots but only {capacity} are free")]
    PlantCollision { requested: usize, capacity: usize },
    #[error("unknown token `{0}`")]
    UnknownToken(String),

    // probe
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("labels contain a single class")]
    DegenerateLabels,
    #[error("non-finite loss at epoch {0}")]
    NonFiniteLoss(usize),

    // extraction
    #[error("k = {k} exceeds the {available} available candidates")]
    KTooLarge { k: usize, available: usize },

    // persona
    #[error("variable `{0}` has no values")]
    EmptyVariable(String),
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("placeholder `{{{0}}}` is not a grid variable")]
    UnboundPlaceholder(String),
    #[error("malformed template: {0}")]
    MalformedTemplate(String),
    #[error("value `{value}` is not a level of `{variable}`")]
    UnknownValue { variable: String, value: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("negative weight {weight} in row {row}")]
    NegativeWeight { row: usize, weight: f64 },

    // scaling
    #[error("value vector set for party {0} is empty")]
    EmptyValueSet(usize),
    #[error("selected vector ({layer}, {index}) has non-positive cosine {cos}")]
    NonPositiveCosineInSet { layer: usize, index: usize, cos: f64 },
    #[error("cube is incomplete: missing cell (persona {persona}, variant {variant}, party {party})")]
    IncompleteCube {
        persona: usize,
        variant: usize,
        party: usize,
    },
    #[error("duplicate cell (persona {persona}, variant {variant}, party {party})")]
    DuplicateCell {
        persona: usize,
        variant: usize,
        party: usize,
    },

    // analytics
    #[error("group selects no records")]
    EmptyGroup,
    #[error("all aggregated components are non-positive")]
    AllNonPositive,
    #[error("empty list of distributions")]
    EmptyList,
    #[error("distributions are defined over different party axes")]
    AxisMismatch,
    #[error("no valid (variant, group) cells")]
    NoValidCells,
    #[error("design matrix is rank deficient (column {0})")]
    RankDeficient(usize),
    #[error("need more observations ({n}) than columns ({cols})")]
    InsufficientData { n: usize, cols: usize },
    #[error("unknown party `{0}`")]
    UnknownParty(String),

    // corpus
    #[error("corpus size {size} below minimum {min}")]
    SizeTooSmall { size: usize, min: usize },
}
