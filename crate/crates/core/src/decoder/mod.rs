//! Transformer decoder over image, article, entity and commonsense memory,
//! with gated mixing of generation and the two pointer distributions.

mod generate;
mod mix;
mod model;

pub use generate::{generate, DecodeMode, GeneratedSymbol, Generation};
pub use mix::{baseline_distribution, compute_switches, mix_distributions, SwitchGates};
pub use model::{
    forward, init_params, row_of, sequence_nll, ForwardOutput, Model, ModelConfig, EMBEDDING, GATE_X, GATE_Y,
    OUTPUT_BIAS, OUTPUT_WEIGHT,
};
