use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One weighted `<head, relation, tail>` fact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub weight: f64,
}

impl Triplet {
    pub fn new(head: &str, relation: &str, tail: &str, weight: f64) -> Self {
        Self { head: head.into(), relation: relation.into(), tail: tail.into(), weight }
    }
}

/// Lookup key for a concept: trimmed, lower-cased, inner whitespace and
/// underscores collapsed to single underscores. "Bill Gates" and
/// "bill_gates" address the same node.
pub fn concept_key(s: &str) -> String {
    s.split(|c: char| c.is_whitespace() || c == '_')
        .filter(|p| !p.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("_")
}

/// Surface tokens of a concept string ("united_states" -> ["united", "states"]).
pub fn concept_tokens(s: &str) -> Vec<String> {
    s.split(|c: char| c.is_whitespace() || c == '_')
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Degree {
    pub indegree: usize,
    pub outdegree: usize,
}

impl Degree {
    pub fn total(self) -> usize {
        self.indegree + self.outdegree
    }
}

/// Indexed triple store.
#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    triples: Vec<Triplet>,
    head_index: HashMap<String, Vec<usize>>,
    tail_index: HashMap<String, Vec<usize>>,
    degrees: HashMap<String, Degree>,
    concepts: Vec<String>,
    relations: Vec<String>,
    duplicates: usize,
}

impl KnowledgeGraph {
    /// Builds the store from triples in order. A triple repeating an earlier
    /// `(head, relation, tail)` is dropped and counted.
    pub fn from_triples(triples: impl IntoIterator<Item = Triplet>) -> Self {
        let mut g = Self::default();
        let mut seen: HashSet<(String, String, String)> = HashSet::new();
        let mut known_concepts: HashSet<String> = HashSet::new();
        let mut known_relations: HashSet<String> = HashSet::new();
        for t in triples {
            let hk = concept_key(&t.head);
            let tk = concept_key(&t.tail);
            if !seen.insert((hk.clone(), t.relation.clone(), tk.clone())) {
                g.duplicates += 1;
                continue;
            }
            let id = g.triples.len();
            g.head_index.entry(hk.clone()).or_default().push(id);
            g.tail_index.entry(tk.clone()).or_default().push(id);
            g.degrees.entry(hk.clone()).or_default().outdegree += 1;
            g.degrees.entry(tk.clone()).or_default().indegree += 1;
            if known_concepts.insert(hk) {
                g.concepts.push(t.head.clone());
            }
            if known_concepts.insert(tk) {
                g.concepts.push(t.tail.clone());
            }
            if known_relations.insert(t.relation.clone()) {
                g.relations.push(t.relation.clone());
            }
            g.triples.push(t);
        }
        g
    }

    /// Reads a tab-separated triple file (`head \t relation \t tail \t weight`).
    /// Blank lines and lines starting with `#` are skipped.
    pub fn ingest(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut triples = Vec::new();
        for (i, line) in text.split('\n').enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse { path: path.to_path_buf(), line: i + 1, message };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(err(format!("expected 4 tab-separated fields, found {}", fields.len())));
            }
            let (head, relation, tail) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
            if head.is_empty() || tail.is_empty() || relation.is_empty() {
                return Err(err("empty head, relation or tail".into()));
            }
            let weight: f64 = fields[3].trim().parse().map_err(|_| err(format!("bad weight {:?}", fields[3])))?;
            if !weight.is_finite() || weight < 0.0 {
                return Err(err(format!("weight must be finite and non-negative, got {weight}")));
            }
            triples.push(Triplet::new(head, relation, tail, weight));
        }
        Ok(Self::from_triples(triples))
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[Triplet] {
        &self.triples
    }

    /// Identical triples dropped during construction.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    /// Concept strings in order of first appearance.
    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    /// Relation inventory in order of first appearance.
    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn degree_of(&self, concept: &str) -> Degree {
        self.degrees.get(&concept_key(concept)).copied().unwrap_or_default()
    }

    /// Indegree plus outdegree; 0 for unknown concepts.
    pub fn degree(&self, concept: &str) -> usize {
        self.degree_of(concept).total()
    }

    fn ids(&self, index: &HashMap<String, Vec<usize>>, entity: &str) -> Vec<usize> {
        index.get(&concept_key(entity)).cloned().unwrap_or_default()
    }

    /// Tail concepts of triples headed by `entity`.
    pub fn head_neighbours(&self, entity: &str) -> Vec<&str> {
        self.ids(&self.head_index, entity).into_iter().map(|i| self.triples[i].tail.as_str()).collect()
    }

    /// Head concepts of triples whose tail is `entity`.
    pub fn tail_neighbours(&self, entity: &str) -> Vec<&str> {
        self.ids(&self.tail_index, entity).into_iter().map(|i| self.triples[i].head.as_str()).collect()
    }

    /// Every triple in which `entity` is head or tail, once each, in
    /// ingestion order.
    pub fn one_hop_subgraph(&self, entity: &str) -> Vec<Triplet> {
        let mut ids = self.ids(&self.head_index, entity);
        ids.extend(self.ids(&self.tail_index, entity));
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter().map(|i| self.triples[i].clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<KnowledgeGraph> {
        KnowledgeGraph::parse(text, Path::new("mem.tsv"))
    }

    #[test]
    fn empty_file_gives_empty_graph() {
        let g = parse("").unwrap();
        assert!(g.is_empty());
        assert!(g.one_hop_subgraph("A").is_empty());
        assert_eq!(g.degree("A"), 0);
    }

    #[test]
    fn degrees_follow_in_plus_out() {
        let g = parse("A\tIsA\tB\t1.0\nC\tRelatedTo\tA\t0.5\n").unwrap();
        assert_eq!(g.degree("A"), 2);
        assert_eq!(g.degree("B"), 1);
        assert_eq!(g.degree_of("A"), Degree { indegree: 1, outdegree: 1 });
    }

    #[test]
    fn missing_fields_name_the_line() {
        let err = parse("A\tIsA").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = parse("# comment\nA\tIsA\tB\t1\nA\tIsA\tC\tnope\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(parse("A\tIsA\tB\t-1\n").is_err());
    }

    #[test]
    fn duplicates_keep_first() {
        let g = parse("A\tIsA\tB\t1.0\nA\tIsA\tB\t3.0\n").unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.duplicates(), 1);
        assert_eq!(g.triples()[0].weight, 1.0);
    }

    #[test]
    fn one_hop_examples() {
        let g = parse("A\tIsA\tB\t1\nC\tRelatedTo\tA\t1\nD\tIsA\tE\t1\n").unwrap();
        let sub = g.one_hop_subgraph("A");
        assert_eq!(sub.len(), 2);
        assert_eq!(g.head_neighbours("A"), vec!["B"]);
        assert_eq!(g.tail_neighbours("A"), vec!["C"]);
        assert!(g.one_hop_subgraph("Z").is_empty());

        let g = parse("A\tr\tA\t1\n").unwrap();
        assert_eq!(g.one_hop_subgraph("A").len(), 1);
    }

    #[test]
    fn keys_ignore_case_and_separators() {
        assert_eq!(concept_key(" Bill  Gates "), "bill_gates");
        assert_eq!(concept_key("bill_gates"), "bill_gates");
        let g = parse("Bill Gates\tIsA\tbusinessman\t2\n").unwrap();
        assert_eq!(g.one_hop_subgraph("bill_gates").len(), 1);
        assert_eq!(concept_tokens("united_states"), vec!["united", "states"]);
    }
}
