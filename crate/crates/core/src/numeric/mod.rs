//! Dense tensors, reverse-mode differentiation and the kernels the captioning
//! model is built from.

mod attention;
mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use attention::{attention_weights, multi_head, multi_head_attention, AttentionParams, AttentionVars};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use params::ParamSet;
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::{Scalar, Tensor};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error)]
pub enum NumericError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("softmax row {row} has every position masked")]
    AllMasked { row: usize },
    #[error("model dimension {dim} is not divisible by {heads} heads")]
    HeadSplit { dim: usize, heads: usize },
    #[error("sinusoidal encoding needs an even dimension, got {0}")]
    OddDimension(usize),
    #[error("unknown parameter {0}")]
    MissingParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Softmax of one logit vector. `keep[j] == false` masks position `j` to
/// exactly zero.
pub fn softmax(logits: &[f32], keep: Option<&[bool]>) -> Result<Vec<f32>, NumericError> {
    let empty = ParamSet::new();
    let mut tape = Tape::<f32>::new(&empty);
    let x = tape.leaf(Tensor::row_vector(logits.to_vec()));
    let y = tape.softmax(x, keep)?;
    Ok(tape.value(y).data().to_vec())
}

/// Transformer sinusoid for one position:
/// `z[2i] = sin(n / 10000^(2i/d))`, `z[2i+1] = cos(n / 10000^(2i/d))`.
pub fn sinusoidal_encoding(position: usize, dim: usize) -> Result<Vec<f64>, NumericError> {
    if !dim.is_multiple_of(2) {
        return Err(NumericError::OddDimension(dim));
    }
    let n = position as f64;
    let mut z = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let angle = n / 10000f64.powf(2.0 * i as f64 / dim as f64);
        z.push(angle.sin());
        z.push(angle.cos());
    }
    Ok(z)
}

/// Rows `start..start+count` of the sinusoid table as a tensor.
pub fn sinusoid_table<T: Scalar>(start: usize, count: usize, dim: usize) -> Result<Tensor<T>, NumericError> {
    let mut data = Vec::with_capacity(count * dim);
    for n in start..start + count {
        data.extend(sinusoidal_encoding(n, dim)?.into_iter().map(T::of));
    }
    Tensor::from_vec(count, dim, data)
}

/// Layer normalisation of one vector (`eps = 1e-5`) followed by `gain`/`bias`.
pub fn layer_norm(input: &[f32], gain: &[f32], bias: &[f32]) -> Result<Vec<f32>, NumericError> {
    if input.len() < 2 {
        return Err(NumericError::Shape("layer_norm needs at least two features".into()));
    }
    let empty = ParamSet::new();
    let mut tape = Tape::<f32>::new(&empty);
    let x = tape.leaf(Tensor::row_vector(input.to_vec()));
    let g = tape.leaf(Tensor::row_vector(gain.to_vec()));
    let b = tape.leaf(Tensor::row_vector(bias.to_vec()));
    let y = tape.layer_norm(x, g, b)?;
    Ok(tape.value(y).data().to_vec())
}

/// Inverted dropout: keeps each entry with probability `1 - rate` and
/// rescales survivors. `rate == 0` returns `x` untouched.
pub fn dropout<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, rate: f64, rng: &mut ChaCha8Rng) -> Result<Var, NumericError> {
    if rate <= 0.0 {
        return Ok(x);
    }
    let [m, n] = tape.shape(x);
    let keep = T::of(1.0 / (1.0 - rate));
    let mask = (0..m * n).map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep }).collect();
    let mask = tape.leaf(Tensor::from_vec(m, n, mask)?);
    tape.mul(x, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0], None).unwrap(), vec![0.5, 0.5]);
        for p in softmax(&[1.0, 1.0, 1.0], None).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-7);
        }
        // e^2 / (e^2 + 1)
        let p = softmax(&[2.0, 0.0], None).unwrap();
        assert!((p[0] - 0.880797).abs() < 1e-5 && (p[1] - 0.119203).abs() < 1e-5);
    }

    #[test]
    fn softmax_mask_zeroes_and_rejects_all_masked() {
        let p = softmax(&[5.0, 1.0, 3.0], Some(&[true, false, true])).unwrap();
        assert_eq!(p[1], 0.0);
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!(matches!(softmax(&[1.0, 2.0], Some(&[false, false])), Err(NumericError::AllMasked { .. })));
    }

    #[test]
    fn sinusoid_examples() {
        let z = sinusoidal_encoding(0, 6).unwrap();
        assert_eq!(z, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let z = sinusoidal_encoding(1, 2).unwrap();
        assert!((z[0] - 0.841471).abs() < 1e-6 && (z[1] - 0.540302).abs() < 1e-6);
        for n in [0, 3, 17, 500] {
            let z = sinusoidal_encoding(n, 8).unwrap();
            for pair in z.chunks(2) {
                assert!((pair[0] * pair[0] + pair[1] * pair[1] - 1.0).abs() < 1e-12);
            }
        }
        assert!(matches!(sinusoidal_encoding(1, 3), Err(NumericError::OddDimension(3))));
    }

    #[test]
    fn layer_norm_examples() {
        let y = layer_norm(&[3.0; 5], &[1.0; 5], &[0.0; 5]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        let y = layer_norm(&[1.0, -1.0], &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y[0] as f64 - expect).abs() < 1e-6 && (y[1] as f64 + expect).abs() < 1e-6);
    }

    #[test]
    fn dropout_is_seeded_and_identity_at_zero() {
        use rand::SeedableRng;
        let empty = ParamSet::new();
        let mut tape = Tape::<f32>::new(&empty);
        let x = tape.leaf(Tensor::filled(4, 8, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(dropout(&mut tape, x, 0.0, &mut rng).unwrap(), x);
        let a = dropout(&mut tape, x, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = dropout(&mut tape, x, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
        assert!(tape.value(a).data().iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
