//! Entity-commonsense sequences refined by node degree, position and
//! cross-entity irrelevance, pooled into the entity matrix, plus the
//! per-step entity pointer distribution.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numeric::{attention_weights, sinusoid_table, AttentionVars, NumericError, ParamSet, Scalar, Tape, Tensor, Var};

pub const DEGREE_TABLE: &str = "distinguish.degree";
pub const ATTENTION: &str = "distinguish";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistinguishConfig {
    /// Degrees above this share the last bucket.
    pub max_degree: usize,
    /// Floor on the summed similarity before taking its reciprocal.
    pub epsilon: f64,
}

impl Default for DistinguishConfig {
    fn default() -> Self {
        Self { max_degree: 16, epsilon: 1e-3 }
    }
}

pub fn init_params(params: &mut ParamSet<f32>, d: usize, cfg: &DistinguishConfig, rng: &mut ChaCha8Rng) {
    params.init_normal(DEGREE_TABLE, cfg.max_degree + 1, d, 0.02, rng);
    params.init_xavier(&format!("{ATTENTION}.q"), d, d, rng);
    params.init_xavier(&format!("{ATTENTION}.k"), d, d, rng);
}

pub fn degree_bucket(degree: usize, max_degree: usize) -> usize {
    degree.min(max_degree)
}

/// Permutation putting concepts in descending weight order; equal weights
/// keep their input order.
pub fn concept_order(weights: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    idx
}

/// Intermediate and final values of one distinguish pass.
#[derive(Clone, Copy, Debug)]
pub struct DistinguishOutput {
    /// Features plus degree rows.
    pub with_degree: Var,
    /// ... plus sinusoidal positions.
    pub with_position: Var,
    /// `[rows, 1]` irrelevance factors; 1 for entity rows.
    pub factors: Var,
    /// Positioned rows scaled by their factors.
    pub refined: Var,
    /// `[K, d]` mean of each entity's refined rows.
    pub entity_matrix: Var,
}

/// Runs the distinguish refinements over a flat feature matrix.
///
/// `raw` holds one row per entity and per explanatory concept. Each entry of
/// `sequences` lists one entity's rows: its own row first, then its concept
/// rows in descending-weight order. `degrees` gives the graph degree of every
/// row.
pub fn distinguish<T: Scalar>(
    tape: &mut Tape<'_, T>,
    raw: Var,
    degrees: &[usize],
    sequences: &[Vec<usize>],
    cfg: &DistinguishConfig,
) -> Result<DistinguishOutput, NumericError> {
    let [rows, d] = tape.shape(raw);
    if degrees.len() != rows {
        return Err(NumericError::Shape(format!("{} degrees for {rows} rows", degrees.len())));
    }
    let mut owner = vec![usize::MAX; rows];
    let mut position = vec![0usize; rows];
    for (k, seq) in sequences.iter().enumerate() {
        for (n, &r) in seq.iter().enumerate() {
            if r >= rows || owner[r] != usize::MAX {
                return Err(NumericError::Shape(format!("sequence row {r} out of range or reused")));
            }
            owner[r] = k;
            position[r] = n;
        }
    }
    if owner.contains(&usize::MAX) {
        return Err(NumericError::Shape("every feature row must belong to one sequence".into()));
    }

    let table = tape.param(DEGREE_TABLE)?;
    let buckets: Vec<usize> = degrees.iter().map(|&g| degree_bucket(g, cfg.max_degree)).collect();
    let deg = tape.gather_rows(table, &buckets)?;
    let with_degree = tape.add(raw, deg)?;

    let max_pos = position.iter().copied().max().unwrap_or(0);
    let sin: Tensor<T> = sinusoid_table(0, max_pos + 1, d)?;
    let mut pos = Vec::with_capacity(rows * d);
    for &p in &position {
        pos.extend_from_slice(sin.row(p));
    }
    let pos = tape.leaf(Tensor::from_vec(rows, d, pos)?);
    let with_position = tape.add(with_degree, pos)?;

    // Similarity between concept rows of different entities, on the
    // degree-refined features.
    let is_concept: Vec<bool> = position.iter().map(|&p| p > 0).collect();
    let mut mask = Tensor::<T>::zeros(rows, rows);
    let mut no_comparison = Tensor::<T>::zeros(rows, 1);
    for r in 0..rows {
        let mut any = false;
        for c in 0..rows {
            if is_concept[r] && is_concept[c] && owner[r] != owner[c] {
                mask.set(r, c, T::one());
                any = true;
            }
        }
        if !any {
            no_comparison.set(r, 0, T::one());
        }
    }
    let unit = tape.row_normalize(with_degree);
    let cos = tape.matmul_t(unit, unit)?;
    let shifted = tape.add_scalar(cos, 1.0);
    let sim = tape.scale(shifted, 0.5);
    let mask = tape.leaf(mask);
    let masked = tape.mul(sim, mask)?;
    let summed = tape.sum_cols(masked);
    let no_comparison = tape.leaf(no_comparison);
    let summed = tape.add(summed, no_comparison)?;
    let clamped = tape.clamp_min(summed, cfg.epsilon);
    let factors = tape.recip(clamped);

    let refined = tape.row_scale(with_position, factors)?;
    let entity_matrix = tape.gather_mean(refined, sequences)?;
    Ok(DistinguishOutput { with_degree, with_position, factors, refined, entity_matrix })
}

/// Head-averaged attention of each context row over the entity matrix:
/// `[T, K]`, row-stochastic.
pub fn entity_attention<T: Scalar>(
    tape: &mut Tape<'_, T>,
    context: Var,
    entity_matrix: Var,
    heads: usize,
) -> Result<Var, NumericError> {
    let w = AttentionVars::bind(tape, ATTENTION, false)?;
    attention_weights(tape, context, entity_matrix, &w, heads, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn params(d: usize) -> ParamSet<f64> {
        let mut p = ParamSet::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        init_params(&mut p, d, &DistinguishConfig::default(), &mut rng);
        p.insert(DEGREE_TABLE, Tensor::from_vec(17, d, (0..17 * d).map(|i| (i / d) as f32).collect()).unwrap());
        p.cast()
    }

    #[test]
    fn degree_buckets() {
        assert_eq!(degree_bucket(5, 16), 5);
        assert_eq!(degree_bucket(0, 16), 0);
        assert_eq!(degree_bucket(100, 16), 16);
    }

    #[test]
    fn order_is_stable_descending() {
        assert_eq!(concept_order(&[0.2, 0.9, 0.5]), vec![1, 2, 0]);
        assert_eq!(concept_order(&[1.0, 1.0, 1.0]), vec![0, 1, 2]);
    }

    #[test]
    fn degree_rows_are_added() {
        let p = params(4);
        let mut tape = Tape::new(&p);
        let raw = tape.leaf(Tensor::zeros(3, 4));
        let out = distinguish(&mut tape, raw, &[5, 0, 100], &[vec![0, 1, 2]], &DistinguishConfig::default()).unwrap();
        let v = tape.value(out.with_degree);
        assert_eq!(v.row(0), &[5.0; 4]);
        assert_eq!(v.row(1), &[0.0; 4]);
        assert_eq!(v.row(2), &[16.0; 4]);
    }

    #[test]
    fn position_zero_adds_alternating_pattern() {
        let p = params(6);
        let mut tape = Tape::new(&p);
        let raw = tape.leaf(Tensor::zeros(1, 6));
        let out = distinguish(&mut tape, raw, &[0], &[vec![0]], &DistinguishConfig::default()).unwrap();
        assert_eq!(tape.value(out.with_position).row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn single_entity_factors_are_one() {
        let p = params(4);
        let mut tape = Tape::new(&p);
        let raw = tape.leaf(Tensor::from_vec(3, 4, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap());
        let out = distinguish(&mut tape, raw, &[1, 2, 3], &[vec![0, 1, 2]], &DistinguishConfig::default()).unwrap();
        assert!(tape.value(out.factors).data().iter().all(|&f| f == 1.0));
        assert_eq!(tape.value(out.refined), tape.value(out.with_position));
    }

    #[test]
    fn identical_concepts_give_uniform_sum() {
        // Entity 0 with one concept, entity 1 with four; every concept
        // feature identical, so each pairwise similarity is 1.
        let p = params(4);
        let mut tape = Tape::new(&p);
        let mut raw = Tensor::filled(7, 4, 0.5);
        raw.row_mut(0).copy_from_slice(&[1.0, -1.0, 0.0, 2.0]);
        raw.row_mut(2).copy_from_slice(&[3.0, 0.0, 1.0, 1.0]);
        let raw = tape.leaf(raw);
        let seqs = vec![vec![0, 1], vec![2, 3, 4, 5, 6]];
        let out = distinguish(&mut tape, raw, &[0; 7], &seqs, &DistinguishConfig::default()).unwrap();
        let f = tape.value(out.factors).data().to_vec();
        assert_eq!(f[0], 1.0);
        assert!((f[1] - 0.25).abs() < 1e-12);
        assert_eq!(f[2], 1.0);
        for &x in &f[3..] {
            assert!((x - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn opposite_concepts_contribute_nothing() {
        let p = params(2);
        let mut tape = Tape::new(&p);
        let raw = tape.leaf(Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![-1.0, -1.0]]).unwrap());
        let out = distinguish(&mut tape, raw, &[0; 4], &[vec![0, 1], vec![2, 3]], &DistinguishConfig::default()).unwrap();
        let f = tape.value(out.factors).data();
        assert!((f[1] - 1e3).abs() < 1e-6, "{f:?}");
    }

    #[test]
    fn entity_without_concepts_keeps_its_row() {
        let p = params(4);
        let mut tape = Tape::new(&p);
        let raw = tape.leaf(Tensor::from_vec(3, 4, (0..12).map(|i| i as f64).collect()).unwrap());
        let out = distinguish(&mut tape, raw, &[0; 3], &[vec![0], vec![1, 2]], &DistinguishConfig::default()).unwrap();
        assert_eq!(tape.value(out.entity_matrix).row(0), tape.value(out.refined).row(0));
        let ctx = tape.leaf(Tensor::filled(2, 4, 0.3));
        let a = entity_attention(&mut tape, ctx, out.entity_matrix, 2).unwrap();
        for r in 0..2 {
            assert!((tape.value(a).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_entity_attention_is_one() {
        let p = params(4);
        let mut tape = Tape::new(&p);
        let xe = tape.leaf(Tensor::filled(1, 4, 0.7));
        let ctx = tape.leaf(Tensor::filled(3, 4, -0.2));
        let a = entity_attention(&mut tape, ctx, xe, 2).unwrap();
        assert_eq!(tape.value(a).data(), &[1.0, 1.0, 1.0]);
    }
}
