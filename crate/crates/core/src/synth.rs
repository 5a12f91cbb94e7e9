//! Planted synthetic corpora and graphs with known answers.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::{write_jsonl, CaptionItem, ImageSpec, Record, Vocabulary};
use crate::kg::{EntityMention, KnowledgeGraph, Triplet};

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 6] = ["", "n", "r", "l", "s", "x"];

/// Roles with the article topic that calls for them.
pub const ROLES: [(&str, &str); 4] =
    [("athlete", "match"), ("politician", "election"), ("musician", "concert"), ("chef", "banquet")];

const PLACES: [&str; 8] = ["harbor", "museum", "stadium", "library", "market", "station", "garden", "theater"];
const VERBS: [&str; 4] = ["greets", "joins", "thanks", "meets"];
const DAYS: [&str; 5] = ["monday", "tuesday", "wednesday", "thursday", "friday"];
const TRAIN_ADJ: [&str; 6] = ["red", "golden", "wooden", "ancient", "tiny", "broken"];
const TRAIN_NOUN: [&str; 6] = ["trophy", "banner", "lantern", "compass", "drum", "kettle"];
const TEST_ADJ: [&str; 4] = ["violet", "crystal", "velvet", "copper"];
const TEST_NOUN: [&str; 4] = ["chalice", "sextant", "tambourine", "scepter"];

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

fn syllable_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut w = String::new();
    for i in 0..syllables {
        w.push_str(ONSETS.choose(rng).expect("non-empty"));
        w.push_str(VOWELS.choose(rng).expect("non-empty"));
        if i + 1 == syllables {
            w.push_str(CODAS.choose(rng).expect("non-empty"));
        }
    }
    capitalize(&w)
}

/// `n` distinct two-token person names, none of which is in `avoid`.
pub fn names(n: usize, rng: &mut ChaCha8Rng, avoid: &HashSet<String>) -> Vec<String> {
    let mut seen = avoid.clone();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let name = format!("{} {}", syllable_word(rng, 2), syllable_word(rng, 2));
        if seen.insert(name.clone()) {
            out.push(name);
        }
    }
    out
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// Article tokens with entity annotations: `{0}`, `{1}`, ... in `template`
/// are replaced by the entity names.
fn fill(template: &str, entities: &[&str]) -> (Vec<String>, Vec<EntityMention>) {
    let mut tokens = Vec::new();
    let mut mentions = Vec::new();
    for piece in template.split_whitespace() {
        match piece.strip_prefix('{').and_then(|p| p.strip_suffix('}')).and_then(|i| i.parse::<usize>().ok()) {
            Some(i) => {
                mentions.push(EntityMention { surface: entities[i].to_string(), first_token_index: tokens.len() });
                tokens.extend(words(entities[i]));
            }
            None => tokens.push(piece.to_string()),
        }
    }
    (tokens, mentions)
}

fn caption(items: &[&str], entities: &[&str]) -> Vec<CaptionItem> {
    items
        .iter()
        .map(|p| {
            if let Some(i) = p.strip_prefix('{').and_then(|p| p.strip_suffix('}')).and_then(|i| i.parse::<usize>().ok())
            {
                CaptionItem::Entity { entity: entities[i].to_string() }
            } else if let Some(c) = p.strip_prefix('@') {
                CaptionItem::Concept { concept: c.to_string() }
            } else {
                CaptionItem::Word(p.to_string())
            }
        })
        .collect()
}

fn image(rng: &mut ChaCha8Rng) -> ImageSpec {
    ImageSpec::Seed { seed: rng.gen(), faces: Some(rng.gen_range(0..=2)), objects: Some(rng.gen_range(1..=4)) }
}

/// Records with their knowledge graph.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Corpus {
    pub train: Vec<Record>,
    pub test: Vec<Record>,
    pub triples: Vec<Triplet>,
}

impl Corpus {
    pub fn graph(&self) -> KnowledgeGraph {
        KnowledgeGraph::from_triples(self.triples.clone())
    }

    /// Writes `train.jsonl`, `test.jsonl` and `graph.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_jsonl(&dir.join("train.jsonl"), &self.train)?;
        write_jsonl(&dir.join("test.jsonl"), &self.test)?;
        std::fs::write(dir.join("graph.tsv"), graph_tsv(&self.triples))?;
        Ok(())
    }
}

pub fn graph_tsv(triples: &[Triplet]) -> String {
    let mut s = String::new();
    for t in triples {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", t.head, t.relation, t.tail, t.weight);
    }
    s
}

/// Vocabulary of every token in `records` except entity-name tokens, so that
/// names reach the model only through the entity pathway.
pub fn vocabulary_without_names(records: &[Record]) -> Vocabulary {
    let mut names = HashSet::new();
    for r in records {
        for m in r.entities.iter().flatten() {
            names.extend(words(&m.surface));
        }
    }
    let mut v = Vocabulary::new();
    for r in records {
        for t in r.article.iter().cloned().chain(r.caption_tokens()) {
            if !names.contains(&t) {
                v.add(&t);
            }
        }
    }
    v
}

/// Small corpus for memorization: two entities per record, each with a role
/// and a related place. Train and test are the same records.
pub fn memorization_corpus(n: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = names(12, &mut rng, &HashSet::new());
    let mut triples = Vec::new();
    for (i, name) in pool.iter().enumerate() {
        triples.push(Triplet::new(name, "IsA", ROLES[i % ROLES.len()].0, 1.0 + (i % 3) as f64));
        triples.push(Triplet::new(name, "RelatedTo", PLACES[i % PLACES.len()], 1.0));
    }
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let pair: Vec<&str> = pool.choose_multiple(&mut rng, 2).map(String::as_str).collect();
        let place = PLACES.choose(&mut rng).expect("non-empty");
        let verb = VERBS.choose(&mut rng).expect("non-empty");
        let day = DAYS.choose(&mut rng).expect("non-empty");
        let (article, mentions) = fill(&format!("{{0}} visited the {place} with {{1}} on {day} afternoon"), &pair);
        records.push(Record {
            id: format!("mem-{i:03}"),
            article,
            entities: Some(mentions),
            caption: caption(&["{0}", verb, "{1}", "at", "the", place], &pair),
            image: image(&mut rng),
        });
    }
    Corpus { train: records.clone(), test: records, triples }
}

/// Two entities with different roles share every article; the topic word
/// calls for one role and the caption names the entity holding it. Test
/// entities never occur in training.
pub fn distinguish_corpus(n_train: usize, n_test: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train_pool = names(32, &mut rng, &HashSet::new());
    let test_pool = names(32, &mut rng, &train_pool.iter().cloned().collect());
    let mut triples = Vec::new();
    for pool in [&train_pool, &test_pool] {
        for (i, name) in pool.iter().enumerate() {
            triples.push(Triplet::new(name, "IsA", ROLES[i % ROLES.len()].0, 1.0));
        }
    }
    let make = |pool: &[String], n: usize, prefix: &str, rng: &mut ChaCha8Rng| -> Vec<Record> {
        (0..n)
            .map(|i| {
                let (a, b) = loop {
                    let a = rng.gen_range(0..pool.len());
                    let b = rng.gen_range(0..pool.len());
                    if a % ROLES.len() != b % ROLES.len() {
                        break (a, b);
                    }
                };
                let target = if rng.gen_bool(0.5) { a } else { b };
                let topic = ROLES[target % ROLES.len()].1;
                let pair = [pool[a].as_str(), pool[b].as_str()];
                let slot = if target == a { "{0}" } else { "{1}" };
                let (article, mentions) = fill(&format!("{{0}} and {{1}} were both seen at the {topic} today"), &pair);
                Record {
                    id: format!("{prefix}-{i:03}"),
                    article,
                    entities: Some(mentions),
                    caption: caption(&[slot, "at", "the", topic], &pair),
                    image: image(rng),
                }
            })
            .collect()
    };
    let train = make(&train_pool, n_train, "dist-train", &mut rng);
    let test = make(&test_pool, n_test, "dist-test", &mut rng);
    Corpus { train, test, triples }
}

/// Name of the entity a distinguish-corpus caption refers to, and the other one.
pub fn gold_and_distractor(record: &Record) -> Option<(String, String)> {
    let gold = record.caption_entities().into_iter().next()?;
    let other = record.entities.iter().flatten().map(|m| m.surface.clone()).find(|s| *s != gold)?;
    Some((gold, other))
}

/// One entity per record with one related two-word object that the caption
/// mentions but the article does not. Test objects use unseen words.
pub fn enrich_corpus(n_train: usize, n_test: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = names(n_train + n_test, &mut rng, &HashSet::new());
    let mut triples = Vec::new();
    let mut records = Vec::with_capacity(pool.len());
    for (i, name) in pool.iter().enumerate() {
        let (adj, noun): (&[&str], &[&str]) =
            if i < n_train { (&TRAIN_ADJ, &TRAIN_NOUN) } else { (&TEST_ADJ, &TEST_NOUN) };
        let object = format!("{}_{}", adj.choose(&mut rng).expect("non-empty"), noun.choose(&mut rng).expect("non-empty"));
        triples.push(Triplet::new(name, "IsA", ROLES[i % ROLES.len()].0, 1.0));
        triples.push(Triplet::new(name, "RelatedTo", &object, 1.0));
        let day = DAYS.choose(&mut rng).expect("non-empty");
        let (article, mentions) = fill(&format!("{{0}} spoke to reporters on {day}"), &[name]);
        records.push(Record {
            id: format!("enrich-{i:03}"),
            article,
            entities: Some(mentions),
            caption: caption(&["{0}", "holds", "the", &format!("@{object}")], &[name]),
            image: image(&mut rng),
        });
    }
    let test = records.split_off(n_train);
    Corpus { train: records, test, triples }
}

/// Concept words a caption mentions through concept items.
pub fn planted_concept_words(record: &Record) -> Vec<String> {
    record
        .caption
        .iter()
        .filter(|c| matches!(c, CaptionItem::Concept { .. }))
        .flat_map(CaptionItem::tokens)
        .collect()
}

/// Up to `count` distinct triples over entities `e0..e{entities}` laid out
/// on a line, where relation `r{j}` links `e{i}` to `e{i + j + 1}`.
pub fn planted_graph(count: usize, entities: usize, relations: usize, seed: u64) -> Vec<Triplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = Vec::new();
    for j in 0..relations {
        for h in 0..entities.saturating_sub(j + 1) {
            all.push(Triplet::new(&format!("e{h}"), &format!("r{j}"), &format!("e{}", h + j + 1), 1.0));
        }
    }
    all.shuffle(&mut rng);
    all.truncate(count);
    all
}

/// Random graph with up to `max_triples` triples over a small concept pool,
/// four relations and non-negative weights.
pub fn random_graph(rng: &mut ChaCha8Rng, max_triples: usize) -> Vec<Triplet> {
    const RELATIONS: [&str; 4] = ["IsA", "RelatedTo", "CreatedBy", "AtLocation"];
    let concepts = rng.gen_range(2..=40);
    let n = rng.gen_range(0..=max_triples);
    (0..n)
        .map(|_| {
            let h = rng.gen_range(0..concepts);
            let t = rng.gen_range(0..concepts);
            let r = RELATIONS[rng.gen_range(0..RELATIONS.len())];
            Triplet::new(&format!("n{h}"), r, &format!("n{t}"), rng.gen_range(0.0..5.0))
        })
        .collect()
}
