use rand_chacha::ChaCha8Rng;

use super::{dropout, NumericError, ParamSet, Scalar, Tape, Tensor, Var};

/// Projection matrices of one multi-head attention block, bound on a tape.
/// `value`/`output` are absent for blocks whose weights alone are consumed.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub query: Var,
    pub key: Var,
    pub value: Option<Var>,
    pub output: Option<Var>,
}

impl AttentionVars {
    /// Binds `{prefix}.q`, `{prefix}.k` and, when `full`, `{prefix}.v`,
    /// `{prefix}.o`.
    pub fn bind<T: Scalar>(tape: &mut Tape<'_, T>, prefix: &str, full: bool) -> Result<Self, NumericError> {
        let query = tape.param(&format!("{prefix}.q"))?;
        let key = tape.param(&format!("{prefix}.k"))?;
        let (value, output) = if full {
            (Some(tape.param(&format!("{prefix}.v"))?), Some(tape.param(&format!("{prefix}.o"))?))
        } else {
            (None, None)
        };
        Ok(Self { query, key, value, output })
    }
}

fn head_width(dim: usize, heads: usize) -> Result<usize, NumericError> {
    if heads == 0 || !dim.is_multiple_of(heads) {
        return Err(NumericError::HeadSplit { dim, heads });
    }
    Ok(dim / heads)
}

fn project_heads<T: Scalar>(
    tape: &mut Tape<'_, T>,
    query: Var,
    keys: Var,
    w: &AttentionVars,
    heads: usize,
    keep: Option<&[bool]>,
) -> Result<(Vec<Var>, usize), NumericError> {
    let q = tape.matmul(query, w.query)?;
    let k = tape.matmul(keys, w.key)?;
    let dim = tape.shape(q)[1];
    let dh = head_width(dim, heads)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, (h + 1) * dh)?;
        let kh = tape.slice_cols(k, h * dh, (h + 1) * dh)?;
        let scores = tape.matmul_t(qh, kh)?;
        let scores = tape.scale(scores, scale);
        weights.push(tape.softmax(scores, keep)?);
    }
    Ok((weights, dh))
}

fn head_average<T: Scalar>(tape: &mut Tape<'_, T>, weights: &[Var]) -> Result<Var, NumericError> {
    let mut total = weights[0];
    for &w in &weights[1..] {
        total = tape.add(total, w)?;
    }
    Ok(if weights.len() == 1 { total } else { tape.scale(total, 1.0 / weights.len() as f64) })
}

/// Head-averaged scaled dot-product attention weights `[Tq, Tk]` of `query`
/// rows over `keys` rows. Every row is stochastic.
pub fn attention_weights<T: Scalar>(
    tape: &mut Tape<'_, T>,
    query: Var,
    keys: Var,
    w: &AttentionVars,
    heads: usize,
    keep: Option<&[bool]>,
) -> Result<Var, NumericError> {
    let (weights, _) = project_heads(tape, query, keys, w, heads, keep)?;
    head_average(tape, &weights)
}

/// Full multi-head attention. Returns the projected output `[Tq, d]` and the
/// head-averaged weights `[Tq, Tk]`. `keep` is a row-major `[Tq, Tk]` mask.
#[allow(clippy::too_many_arguments)]
pub fn multi_head<T: Scalar>(
    tape: &mut Tape<'_, T>,
    query: Var,
    keys: Var,
    values: Var,
    w: &AttentionVars,
    heads: usize,
    keep: Option<&[bool]>,
    attn_dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<(Var, Var), NumericError> {
    let (wv, wo) = match (w.value, w.output) {
        (Some(v), Some(o)) => (v, o),
        _ => return Err(NumericError::Shape("multi_head needs value and output projections".into())),
    };
    let (weights, dh) = project_heads(tape, query, keys, w, heads, keep)?;
    let v = tape.matmul(values, wv)?;
    let mut outs = Vec::with_capacity(heads);
    let mut drop = attn_dropout;
    for (h, &a) in weights.iter().enumerate() {
        let a = match drop.as_mut() {
            Some((rate, rng)) => dropout(tape, a, *rate, rng)?,
            None => a,
        };
        let vh = tape.slice_cols(v, h * dh, (h + 1) * dh)?;
        outs.push(tape.matmul(a, vh)?);
    }
    let cat = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let out = tape.matmul(cat, wo)?;
    let avg = head_average(tape, &weights)?;
    Ok((out, avg))
}

/// Owned projection matrices for the standalone [`multi_head_attention`].
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub query: Tensor<f32>,
    pub key: Tensor<f32>,
    pub value: Tensor<f32>,
    pub output: Tensor<f32>,
}

/// Evaluates multi-head attention outside any training graph.
pub fn multi_head_attention(
    query: &Tensor<f32>,
    keys: &Tensor<f32>,
    values: &Tensor<f32>,
    heads: usize,
    params: &AttentionParams,
) -> Result<(Tensor<f32>, Tensor<f32>), NumericError> {
    head_width(params.query.cols(), heads)?;
    let mut set = ParamSet::new();
    set.insert("mha.q", params.query.clone());
    set.insert("mha.k", params.key.clone());
    set.insert("mha.v", params.value.clone());
    set.insert("mha.o", params.output.clone());
    let mut tape = Tape::new(&set);
    let w = AttentionVars::bind(&mut tape, "mha", true)?;
    let q = tape.leaf(query.clone());
    let k = tape.leaf(keys.clone());
    let v = tape.leaf(values.clone());
    let (out, weights) = multi_head(&mut tape, q, k, v, &w, heads, None, None)?;
    Ok((tape.value(out).clone(), tape.value(weights).clone()))
}
