#![allow(dead_code)]

use sensecap::decoder::{Model, ModelConfig};
use sensecap::error::Error;
use sensecap::features::{build_vocabulary, CaptionItem, ImageConfig, ImageSpec, Record};
use sensecap::kg::{EntityKnowledge, EntityMention, KnownConcept};
use sensecap::numeric::NumericError;
use sensecap::pipeline::add_knowledge_tokens;
use sensecap::sample::{prepare, KnowledgeBase, Sample, Variant};

pub fn toy_config(d_model: usize, heads: usize, layers: usize) -> ModelConfig {
    let image = ImageConfig { patches: 3, faces: 2, objects: 3, patch_width: 4, face_width: 4, object_width: 4 };
    ModelConfig { d_model, heads, layers, dropout: 0.0, image, ..ModelConfig::desk() }
}

fn concept(name: &str, weight: f64, degree: usize) -> KnownConcept {
    KnownConcept { concept: name.into(), weight, degree }
}

/// Two entities, each with two explanatory and two relevant concepts.
pub fn toy_record() -> (Record, KnowledgeBase) {
    let record = Record {
        id: "toy".into(),
        article: "Ada Lovelace and Alan Turing met in London".split(' ').map(String::from).collect(),
        entities: Some(vec![
            EntityMention { surface: "Ada Lovelace".into(), first_token_index: 0 },
            EntityMention { surface: "Alan Turing".into(), first_token_index: 3 },
        ]),
        caption: vec![
            CaptionItem::Entity { entity: "Ada Lovelace".into() },
            CaptionItem::Word("met".into()),
            CaptionItem::Entity { entity: "Alan Turing".into() },
            CaptionItem::Word("near".into()),
            CaptionItem::Concept { concept: "analytical_engine".into() },
        ],
        image: ImageSpec::Seed { seed: 4, faces: Some(1), objects: Some(2) },
    };
    let kb = KnowledgeBase::from_entries([
        EntityKnowledge {
            entity: "Ada Lovelace".into(),
            degree: 4,
            explanatory: vec![concept("mathematician", 2.0, 3), concept("writer", 1.0, 5)],
            relevant: vec![concept("analytical_engine", 2.0, 1), concept("poetry", 1.0, 2)],
            undivided: vec![],
        },
        EntityKnowledge {
            entity: "Alan Turing".into(),
            degree: 4,
            explanatory: vec![concept("logician", 1.5, 2), concept("mathematician", 1.0, 3)],
            relevant: vec![concept("enigma_machine", 2.0, 1), concept("computer", 1.0, 6)],
            undivided: vec![],
        },
    ]);
    (record, kb)
}

pub fn toy_model(cfg: ModelConfig, seed: u64) -> (Model, KnowledgeBase, Record) {
    let (record, kb) = toy_record();
    let mut vocab = build_vocabulary(std::slice::from_ref(&record));
    add_knowledge_tokens(&mut vocab, &kb);
    (Model::new(cfg, vocab, seed).unwrap(), kb, record)
}

pub fn toy_sample(model: &Model, kb: &KnowledgeBase, record: &Record, variant: Variant) -> Sample {
    prepare(record, kb, &model.vocab, &model.config, &variant, None).unwrap()
}

pub fn to_numeric(e: Error) -> NumericError {
    match e {
        Error::Numeric(n) => n,
        other => NumericError::Shape(other.to_string()),
    }
}
