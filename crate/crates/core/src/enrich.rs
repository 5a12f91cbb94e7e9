//! Concept-entity pair sequences from the relevant subgraphs, refined by
//! self-attention, plus the per-step concept pointer distribution.

use rand_chacha::ChaCha8Rng;

use crate::kg::SubgraphPair;
use crate::numeric::{attention_weights, multi_head, AttentionVars, NumericError, ParamSet, Scalar, Tape, Var};

pub const PAIR_WEIGHT: &str = "enrich.pair.w";
pub const PAIR_BIAS: &str = "enrich.pair.b";
pub const SELF_ATTENTION: &str = "enrich.self";
pub const ATTENTION: &str = "enrich.attn";

pub fn init_params(params: &mut ParamSet<f32>, d: usize, rng: &mut ChaCha8Rng) {
    params.init_xavier(PAIR_WEIGHT, 2 * d, d, rng);
    params.init_const(PAIR_BIAS, 1, d, 0.0);
    for p in ["q", "k", "v", "o"] {
        params.init_xavier(&format!("{SELF_ATTENTION}.{p}"), d, d, rng);
    }
    params.init_xavier(&format!("{ATTENTION}.q"), d, d, rng);
    params.init_xavier(&format!("{ATTENTION}.k"), d, d, rng);
}

/// `(concept, entity)` surfaces, entity-major with concepts in descending
/// weight order (ties keep input order).
pub fn build_concept_entity_sequence(pairs: &[SubgraphPair]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for p in pairs {
        let weights: Vec<f64> = p.relevant.iter().map(|c| c.weight).collect();
        for i in crate::distinguish::concept_order(&weights) {
            out.push((p.relevant[i].concept.clone(), p.entity.clone()));
        }
    }
    out
}

/// Projects each `[concept; entity]` pair to the model width and applies
/// multi-head self-attention. `concepts` and `entities` are `[P, d]`.
pub fn refine_pairs<T: Scalar>(
    tape: &mut Tape<'_, T>,
    concepts: Var,
    entities: Var,
    heads: usize,
) -> Result<Var, NumericError> {
    let stacked = tape.concat_cols(&[concepts, entities])?;
    let w = tape.param(PAIR_WEIGHT)?;
    let b = tape.param(PAIR_BIAS)?;
    let proj = tape.matmul(stacked, w)?;
    let proj = tape.add_row(proj, b)?;
    let attn = AttentionVars::bind(tape, SELF_ATTENTION, true)?;
    let (out, _) = multi_head(tape, proj, proj, proj, &attn, heads, None, None)?;
    Ok(out)
}

/// Head-averaged attention of each context row over the refined pairs:
/// `[T, P]`, row-stochastic.
pub fn concept_attention<T: Scalar>(
    tape: &mut Tape<'_, T>,
    context: Var,
    refined: Var,
    heads: usize,
) -> Result<Var, NumericError> {
    let w = AttentionVars::bind(tape, ATTENTION, false)?;
    attention_weights(tape, context, refined, &w, heads, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::ConceptWeight;
    use crate::numeric::Tensor;
    use rand::SeedableRng;

    fn params(d: usize) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        init_params(&mut p, d, &mut ChaCha8Rng::seed_from_u64(5));
        p.cast()
    }

    fn pair(entity: &str, concepts: &[(&str, f64)]) -> SubgraphPair {
        SubgraphPair {
            entity: entity.into(),
            explanatory: vec![],
            relevant: concepts.iter().map(|(c, w)| ConceptWeight { concept: c.to_string(), weight: *w }).collect(),
        }
    }

    #[test]
    fn sequence_is_entity_major() {
        let seq = build_concept_entity_sequence(&[pair("e1", &[("a", 1.0), ("b", 2.0)]), pair("e2", &[("c", 1.0), ("d", 1.0)])]);
        let expect = [("b", "e1"), ("a", "e1"), ("c", "e2"), ("d", "e2")];
        assert_eq!(seq, expect.map(|(c, e)| (c.to_string(), e.to_string())));
        assert!(build_concept_entity_sequence(&[pair("e1", &[])]).is_empty());
    }

    #[test]
    fn pairs_are_twice_model_width() {
        let p = params(16);
        let mut tape = Tape::new(&p);
        let c = tape.leaf(Tensor::filled(3, 16, 0.1));
        let e = tape.leaf(Tensor::filled(3, 16, 0.2));
        let cat = tape.concat_cols(&[c, e]).unwrap();
        assert_eq!(tape.shape(cat), [3, 32]);
        let xr = refine_pairs(&mut tape, c, e, 4).unwrap();
        assert_eq!(tape.shape(xr), [3, 16]);
    }

    #[test]
    fn single_pair_gets_all_mass() {
        let p = params(8);
        let mut tape = Tape::new(&p);
        let c = tape.leaf(Tensor::filled(1, 8, 0.1));
        let e = tape.leaf(Tensor::filled(1, 8, -0.4));
        let xr = refine_pairs(&mut tape, c, e, 2).unwrap();
        let ctx = tape.leaf(Tensor::filled(2, 8, 1.0));
        let a = concept_attention(&mut tape, ctx, xr, 2).unwrap();
        assert_eq!(tape.value(a).data(), &[1.0, 1.0]);
    }

    #[test]
    fn self_attention_is_permutation_equivariant() {
        let p = params(8);
        let rows: Vec<Vec<f64>> = (0..4).map(|i| (0..8).map(|j| ((i * 8 + j) as f64 * 0.37).sin()).collect()).collect();
        let ent: Vec<Vec<f64>> = (0..4).map(|i| (0..8).map(|j| ((i + j) as f64 * 0.11).cos()).collect()).collect();
        let perm = [2, 0, 3, 1];
        let run = |order: &[usize]| {
            let mut tape = Tape::new(&p);
            let c = tape.leaf(Tensor::from_rows(&order.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>()).unwrap());
            let e = tape.leaf(Tensor::from_rows(&order.iter().map(|&i| ent[i].clone()).collect::<Vec<_>>()).unwrap());
            let xr = refine_pairs(&mut tape, c, e, 2).unwrap();
            tape.value(xr).clone()
        };
        let base = run(&[0, 1, 2, 3]);
        let permuted = run(&perm);
        for (r, &src) in perm.iter().enumerate() {
            for (a, b) in permuted.row(r).iter().zip(base.row(src)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
