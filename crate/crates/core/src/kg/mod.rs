//! Commonsense knowledge store: triple ingestion, one-hop retrieval, TransE
//! pruning and relation-based division.

mod entities;
mod filter;
mod graph;
mod taxonomy;
mod transe;

pub use entities::{fallback_tagger, select_entities, EntityMention};
pub use filter::{
    divide, filter_entity, prune, route, top_k, undivided, ConceptWeight, EntityKnowledge, FilterConfig, FilterStats,
    KnownConcept, Routing, SubgraphPair,
};
pub use graph::{concept_key, concept_tokens, Degree, KnowledgeGraph, Triplet};
pub use taxonomy::{Category, RelationTaxonomy, DEFAULT_PRESET, DIVISION_STAR_PRESET};
pub use transe::{calibrate_threshold, train_transe, transe_score, TranseConfig, TranseTable, TranseTraining};
