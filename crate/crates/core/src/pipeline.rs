//! End-to-end helpers shared by the command line and the test suites:
//! batch preparation, captioning, scoring and the K-sweep.

use std::collections::HashSet;
use std::path::Path;

use crate::decoder::{generate, DecodeMode, Generation, Model};
use crate::error::Result;
use crate::eval::{entity_counts, evaluate, normalize_sweep, EvalItem, EvalReport, Prf, SweepRow};
use crate::features::{Record, Vocabulary};
use crate::kg::concept_tokens;
use crate::sample::{prepare, KnowledgeBase, Sample, Variant};

pub fn prepare_all(
    records: &[Record],
    kb: &KnowledgeBase,
    model: &Model,
    variant: &Variant,
    base_dir: Option<&Path>,
) -> Result<Vec<Sample>> {
    records.iter().map(|r| prepare(r, kb, &model.vocab, &model.config, variant, base_dir)).collect()
}

pub fn caption_all(model: &Model, samples: &[Sample], mode: DecodeMode) -> Result<Vec<Generation>> {
    samples.iter().map(|s| generate(model, s, mode, model.config.max_caption)).collect()
}

/// Pairs each generation with its record's gold caption and entities.
pub fn eval_items(records: &[Record], generations: &[Generation]) -> Vec<EvalItem> {
    records
        .iter()
        .zip(generations)
        .map(|(r, g)| EvalItem {
            id: r.id.clone(),
            candidate: g.tokens(),
            references: vec![r.caption_tokens()],
            predicted_entities: g.entities(),
            gold_entities: r.caption_entities(),
            article: r.article.clone(),
        })
        .collect()
}

/// Adds the tokens of every concept in `kb` so commonsense words have their
/// own embeddings.
pub fn add_knowledge_tokens(vocab: &mut Vocabulary, kb: &KnowledgeBase) {
    for e in kb.entries() {
        for c in e.explanatory.iter().chain(&e.relevant).chain(&e.undivided) {
            for t in concept_tokens(&c.concept) {
                vocab.add(&t);
            }
        }
    }
}

/// Lowercased vocabulary tokens, the reference set for rare nouns.
pub fn vocabulary_tokens(vocab: &Vocabulary) -> HashSet<String> {
    (0..vocab.len()).map(|i| vocab.token(i).to_lowercase()).collect()
}

pub fn caption_and_evaluate(
    model: &Model,
    records: &[Record],
    kb: &KnowledgeBase,
    variant: &Variant,
    mode: DecodeMode,
    base_dir: Option<&Path>,
) -> Result<(Vec<Generation>, EvalReport)> {
    let samples = prepare_all(records, kb, model, variant, base_dir)?;
    let gens = caption_all(model, &samples, mode)?;
    let report = evaluate(&eval_items(records, &gens), &vocabulary_tokens(&model.vocab));
    Ok((gens, report))
}

/// Corpus entity P/R/F1 for each number of commonsense-bearing entities in
/// `grid`, raw and normalized.
pub fn sweep_k(
    model: &Model,
    records: &[Record],
    kb: &KnowledgeBase,
    variant: &Variant,
    grid: &[usize],
    mode: DecodeMode,
    base_dir: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    let mut raw = Vec::with_capacity(grid.len());
    for &k in grid {
        let v = Variant { commonsense_entities: k, ..*variant };
        let samples = prepare_all(records, kb, model, &v, base_dir)?;
        let gens = caption_all(model, &samples, mode)?;
        let (mut m, mut p, mut g) = (0, 0, 0);
        for (r, gen) in records.iter().zip(&gens) {
            let c = entity_counts(&gen.entities(), &r.caption_entities());
            m += c.0;
            p += c.1;
            g += c.2;
        }
        let prf = Prf::from_counts(m, p, g);
        log::info!("K={k}: entity P {:.4} R {:.4} F1 {:.4}", prf.precision, prf.recall, prf.f1);
        raw.push((k, prf));
    }
    normalize_sweep(&raw)
}
