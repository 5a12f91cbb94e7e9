//! Turns a dataset record plus filtered commonsense into model-ready index
//! structures: article ids, entity and concept rows, the per-record extended
//! symbol table and teacher-forcing targets.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::ModelConfig;
use crate::error::{Error, Result};
use crate::features::{load_image_features, read_jsonl, write_jsonl, CaptionItem, ImageFeatures, Record, Vocabulary, BOS, EOS, UNK};
use crate::kg::{
    concept_key, concept_tokens, fallback_tagger, filter_entity, select_entities, EntityKnowledge, EntityMention,
    FilterConfig, FilterStats, KnowledgeGraph, KnownConcept, RelationTaxonomy, TranseTable,
};

/// Filtered commonsense per entity, keyed by [`concept_key`].
#[derive(Clone, Debug, Default)]
pub struct KnowledgeBase {
    entries: HashMap<String, EntityKnowledge>,
    order: Vec<String>,
}

impl KnowledgeBase {
    pub fn from_entries(entries: impl IntoIterator<Item = EntityKnowledge>) -> Self {
        let mut kb = Self::default();
        for e in entries {
            let key = concept_key(&e.entity);
            if !kb.entries.contains_key(&key) {
                kb.order.push(key.clone());
            }
            kb.entries.insert(key, e);
        }
        kb
    }

    /// Runs the filter for every entity selected from `records`, each
    /// entity once, in first-seen order.
    pub fn build(
        records: &[Record],
        graph: &KnowledgeGraph,
        taxonomy: &RelationTaxonomy,
        table: Option<&TranseTable>,
        cfg: &ModelConfig,
        filter: &FilterConfig,
    ) -> Result<(Self, FilterStats)> {
        let mut stats = FilterStats::default();
        let mut kb = Self::default();
        for r in records {
            for e in record_entities(r, cfg)? {
                let key = concept_key(&e);
                if kb.entries.contains_key(&key) {
                    continue;
                }
                let k = filter_entity(graph, taxonomy, table, &e, filter, &mut stats);
                kb.order.push(key.clone());
                kb.entries.insert(key, k);
            }
        }
        Ok((kb, stats))
    }

    pub fn get(&self, entity: &str) -> Option<&EntityKnowledge> {
        self.entries.get(&concept_key(entity))
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &EntityKnowledge> {
        self.order.iter().map(|k| &self.entries[k])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.entries().collect::<Vec<_>>())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_entries(read_jsonl::<EntityKnowledge>(path)?))
    }
}

/// Ablation switches plus how many entities receive commonsense.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    /// Drop every commonsense pathway: generation only.
    pub non_commonsense: bool,
    /// Drop the distinguish module and the entity pointer.
    pub non_distinguish: bool,
    /// Drop the enrich module and the concept pointer.
    pub non_enrich: bool,
    /// Feed the undivided top-k concepts to both modules.
    pub non_division: bool,
    /// Only the first this-many entities get commonsense concepts.
    pub commonsense_entities: usize,
}

impl Default for Variant {
    fn default() -> Self {
        Self { non_commonsense: false, non_distinguish: false, non_enrich: false, non_division: false, commonsense_entities: 40 }
    }
}

impl Variant {
    pub fn uses_entities(&self) -> bool {
        !self.non_commonsense && !self.non_distinguish
    }

    pub fn uses_concepts(&self) -> bool {
        !self.non_commonsense && !self.non_enrich
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymbolKind {
    Word,
    Entity,
    Concept,
}

/// Extended vocabulary of one record: base words, then one symbol per
/// selected entity, then concept symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolTable {
    pub base: usize,
    pub entities: Vec<String>,
    pub concepts: Vec<String>,
}

impl SymbolTable {
    pub fn len(&self) -> usize {
        self.base + self.entities.len() + self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entity_symbol(&self, k: usize) -> usize {
        self.base + k
    }

    pub fn concept_symbol(&self, i: usize) -> usize {
        self.base + self.entities.len() + i
    }

    pub fn describe(&self, id: usize, vocab: &Vocabulary) -> (SymbolKind, String) {
        if id < self.base {
            (SymbolKind::Word, vocab.token(id).to_string())
        } else if id < self.base + self.entities.len() {
            (SymbolKind::Entity, self.entities[id - self.base].clone())
        } else {
            (SymbolKind::Concept, concept_tokens(&self.concepts[id - self.base - self.entities.len()]).join(" "))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleConcept {
    pub surface: String,
    pub tokens: Vec<usize>,
    pub degree: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleEntity {
    pub surface: String,
    pub tokens: Vec<usize>,
    pub degree: usize,
    /// Explanatory concepts, descending weight.
    pub explanatory: Vec<SampleConcept>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub entity: usize,
    pub concept: SampleConcept,
    /// Extended-vocabulary id receiving this pair's pointer mass.
    pub symbol: usize,
}

/// Model-ready view of one record under one [`Variant`].
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub variant: Variant,
    pub article: Vec<usize>,
    pub image: ImageFeatures,
    pub entities: Vec<SampleEntity>,
    pub pairs: Vec<SamplePair>,
    pub symbols: SymbolTable,
    /// EOS-terminated extended-vocabulary targets (empty without a caption).
    pub targets: Vec<usize>,
}

impl Sample {
    pub fn uses_entity_pointer(&self) -> bool {
        self.variant.uses_entities() && !self.entities.is_empty()
    }

    pub fn uses_concept_pointer(&self) -> bool {
        self.variant.uses_concepts() && !self.pairs.is_empty()
    }

    /// Token ids whose mean embeds symbol `id` as decoder input.
    pub fn input_tokens(&self, id: usize) -> Vec<usize> {
        let s = &self.symbols;
        if id < s.base {
            vec![id]
        } else if id < s.base + s.entities.len() {
            self.entities[id - s.base].tokens.clone()
        } else {
            self.pairs.iter().find(|p| p.symbol == id).map_or_else(|| vec![UNK], |p| p.concept.tokens.clone())
        }
    }

    /// Decoder inputs for teacher forcing: BOS then every target but the last.
    pub fn teacher_inputs(&self) -> Vec<usize> {
        let mut v = vec![BOS];
        v.extend_from_slice(&self.targets[..self.targets.len().saturating_sub(1)]);
        v
    }
}

/// Entity mentions of a record: its annotations, or the fallback tagger when
/// enabled.
pub fn record_mentions(record: &Record, cfg: &ModelConfig) -> Result<Vec<EntityMention>> {
    match &record.entities {
        Some(a) => Ok(a.clone()),
        None if cfg.fallback_tagger => Ok(fallback_tagger(&record.article)),
        None => Err(Error::Dataset { record: record.id.clone(), message: "no entity annotations".into() }),
    }
}

pub fn record_entities(record: &Record, cfg: &ModelConfig) -> Result<Vec<String>> {
    let mentions = record_mentions(record, cfg)?;
    select_entities(&record.article, Some(&mentions), cfg.max_entities, false)
}

fn sample_concept(c: &KnownConcept, vocab: &Vocabulary) -> SampleConcept {
    SampleConcept { surface: c.concept.clone(), tokens: vocab.ids(&concept_tokens(&c.concept)), degree: c.degree, weight: c.weight }
}

fn sorted(mut items: Vec<SampleConcept>) -> Vec<SampleConcept> {
    let w: Vec<f64> = items.iter().map(|c| c.weight).collect();
    let order = crate::distinguish::concept_order(&w);
    let mut out = Vec::with_capacity(items.len());
    let mut slots: Vec<Option<SampleConcept>> = items.drain(..).map(Some).collect();
    for i in order {
        out.push(slots[i].take().expect("permutation"));
    }
    out
}

/// Builds the model view of `record`.
pub fn prepare(
    record: &Record,
    kb: &KnowledgeBase,
    vocab: &Vocabulary,
    cfg: &ModelConfig,
    variant: &Variant,
    base_dir: Option<&Path>,
) -> Result<Sample> {
    let mentions = record_mentions(record, cfg)?;
    let selected = select_entities(&record.article, Some(&mentions), cfg.max_entities, false)?;
    let image = load_image_features(record, &cfg.image, base_dir)?;
    let article = vocab.ids(&record.article[..record.article.len().min(cfg.max_article)]);

    let with_entities = variant.uses_entities();
    let with_concepts = variant.uses_concepts();
    let mut entities = Vec::new();
    let mut relevant: Vec<(usize, SampleConcept)> = Vec::new();
    for (k, surface) in selected.iter().enumerate() {
        let know = kb.get(surface);
        let commonsense = k < variant.commonsense_entities;
        let pick = |divided: fn(&EntityKnowledge) -> &Vec<KnownConcept>| -> Vec<SampleConcept> {
            match know {
                Some(kn) if commonsense => {
                    let list = if variant.non_division { &kn.undivided } else { divided(kn) };
                    sorted(list.iter().take(cfg.top_k).map(|c| sample_concept(c, vocab)).collect())
                }
                _ => vec![],
            }
        };
        if with_concepts {
            relevant.extend(pick(|k| &k.relevant).into_iter().map(|c| (k, c)));
        }
        entities.push(SampleEntity {
            surface: surface.clone(),
            tokens: vocab.ids(&surface.split_whitespace().collect::<Vec<_>>()),
            degree: know.map_or(0, |k| k.degree),
            explanatory: if with_entities { pick(|k| &k.explanatory) } else { vec![] },
        });
    }
    if !with_entities {
        entities.clear();
    }

    let mut symbols = SymbolTable { base: vocab.len(), entities: entities.iter().map(|e| e.surface.clone()).collect(), concepts: vec![] };
    let mut concept_ids: HashMap<String, usize> = HashMap::new();
    let mut pairs = Vec::with_capacity(relevant.len());
    for (entity, concept) in relevant {
        let toks = concept_tokens(&concept.surface);
        let symbol = match toks.as_slice() {
            [single] if vocab.contains(single) => vocab.id(single),
            _ => {
                let key = concept_key(&concept.surface);
                let next = symbols.concepts.len();
                let i = *concept_ids.entry(key).or_insert_with(|| {
                    symbols.concepts.push(concept.surface.clone());
                    next
                });
                symbols.concept_symbol(i)
            }
        };
        pairs.push(SamplePair { entity, concept, symbol });
    }

    let mention_keys: Vec<String> = mentions.iter().map(|m| m.surface.clone()).collect();
    let mut targets = Vec::new();
    if !record.caption.is_empty() {
        let own_concept = |key: &str| pairs.iter().find(|p| p.symbol >= symbols.base && concept_key(&p.concept.surface) == key);
        for item in &record.caption {
            match item {
                CaptionItem::Word(w) => targets.push(match vocab.get(w) {
                    Some(id) => id,
                    None => own_concept(&concept_key(w)).map_or(UNK, |p| p.symbol),
                }),
                CaptionItem::Entity { entity } => {
                    if !mention_keys.contains(entity) {
                        return Err(Error::Dataset {
                            record: record.id.clone(),
                            message: format!("caption entity {entity:?} is not among the article's entities"),
                        });
                    }
                    match symbols.entities.iter().position(|e| e == entity) {
                        Some(k) => targets.push(symbols.entity_symbol(k)),
                        None => targets.extend(entity.split_whitespace().map(|t| vocab.id(t))),
                    }
                }
                CaptionItem::Concept { concept } => {
                    let key = concept_key(concept);
                    match pairs.iter().find(|p| concept_key(&p.concept.surface) == key) {
                        Some(p) => targets.push(p.symbol),
                        None => targets.extend(concept_tokens(concept).iter().map(|t| vocab.id(t))),
                    }
                }
            }
        }
        targets.push(EOS);
    }

    Ok(Sample { id: record.id.clone(), variant: *variant, article, image, entities, pairs, symbols, targets })
}
