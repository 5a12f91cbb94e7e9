use serde::{Deserialize, Serialize};

use super::graph::{concept_key, KnowledgeGraph, Triplet};
use super::taxonomy::{Category, RelationTaxonomy};
use super::transe::TranseTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptWeight {
    pub concept: String,
    pub weight: f64,
}

/// Explanatory and relevant concept lists for one entity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgraphPair {
    pub entity: String,
    pub explanatory: Vec<ConceptWeight>,
    pub relevant: Vec<ConceptWeight>,
}

/// Untruncated routing of a subgraph, in ingestion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Routing {
    pub explanatory: Vec<ConceptWeight>,
    pub relevant: Vec<ConceptWeight>,
    pub ignored: Vec<ConceptWeight>,
    /// Triples whose relation the taxonomy does not know.
    pub unknown_relations: usize,
}

/// Triples scoring at least `threshold`, order preserved.
pub fn prune(subgraph: &[Triplet], table: &TranseTable, threshold: f64) -> Vec<Triplet> {
    subgraph.iter().filter(|t| table.score(t) >= threshold).cloned().collect()
}

/// The endpoint of `t` that is not `entity` (the entity itself for a
/// self-loop).
fn other_end<'a>(t: &'a Triplet, entity_key: &str) -> &'a str {
    if concept_key(&t.head) == entity_key {
        &t.tail
    } else {
        &t.head
    }
}

pub fn route(subgraph: &[Triplet], taxonomy: &RelationTaxonomy, entity: &str) -> Routing {
    let key = concept_key(entity);
    let mut out = Routing::default();
    for t in subgraph {
        let item = ConceptWeight { concept: other_end(t, &key).to_string(), weight: t.weight };
        match taxonomy.category(&t.relation) {
            Some(Category::Explanatory) => out.explanatory.push(item),
            Some(Category::Relevant) => out.relevant.push(item),
            Some(Category::Ignored) => out.ignored.push(item),
            None => {
                out.unknown_relations += 1;
                out.ignored.push(item);
            }
        }
    }
    if out.unknown_relations > 0 {
        log::warn!("{}: {} triple(s) with relations outside the taxonomy ignored", entity, out.unknown_relations);
    }
    out
}

/// Highest-weight `k` distinct concepts, weight descending, ties in input
/// order.
pub fn top_k(mut items: Vec<ConceptWeight>, k: usize) -> Vec<ConceptWeight> {
    items.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    let mut seen = std::collections::HashSet::new();
    items.retain(|c| seen.insert(concept_key(&c.concept)));
    items.truncate(k);
    items
}

pub fn divide(subgraph: &[Triplet], taxonomy: &RelationTaxonomy, entity: &str, k: usize) -> SubgraphPair {
    let r = route(subgraph, taxonomy, entity);
    SubgraphPair { entity: entity.to_string(), explanatory: top_k(r.explanatory, k), relevant: top_k(r.relevant, k) }
}

/// Top-`k` over every retrieved concept regardless of relation type.
pub fn undivided(subgraph: &[Triplet], entity: &str, k: usize) -> Vec<ConceptWeight> {
    let key = concept_key(entity);
    top_k(
        subgraph.iter().map(|t| ConceptWeight { concept: other_end(t, &key).to_string(), weight: t.weight }).collect(),
        k,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnownConcept {
    pub concept: String,
    pub weight: f64,
    pub degree: usize,
}

/// Everything downstream modules need about one entity's commonsense.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityKnowledge {
    pub entity: String,
    pub degree: usize,
    pub explanatory: Vec<KnownConcept>,
    pub relevant: Vec<KnownConcept>,
    /// Same pruned subgraph without the relation division.
    pub undivided: Vec<KnownConcept>,
}

impl EntityKnowledge {
    pub fn empty(entity: &str) -> Self {
        Self { entity: entity.into(), degree: 0, explanatory: vec![], relevant: vec![], undivided: vec![] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub top_k: usize,
    /// Overrides the table's calibrated threshold.
    pub threshold: Option<f64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { top_k: 5, threshold: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub entities: usize,
    pub retrieved: usize,
    pub kept: usize,
    pub unknown_relations: usize,
}

/// one-hop retrieval, optional pruning, division and top-k.
pub fn filter_entity(
    graph: &KnowledgeGraph,
    taxonomy: &RelationTaxonomy,
    table: Option<&TranseTable>,
    entity: &str,
    cfg: &FilterConfig,
    stats: &mut FilterStats,
) -> EntityKnowledge {
    let sub = graph.one_hop_subgraph(entity);
    stats.entities += 1;
    stats.retrieved += sub.len();
    let sub = match table {
        Some(t) => prune(&sub, t, cfg.threshold.unwrap_or(t.threshold)),
        None => sub,
    };
    stats.kept += sub.len();
    let routing = route(&sub, taxonomy, entity);
    stats.unknown_relations += routing.unknown_relations;
    let known = |items: Vec<ConceptWeight>| -> Vec<KnownConcept> {
        items
            .into_iter()
            .map(|c| KnownConcept { degree: graph.degree(&c.concept), concept: c.concept, weight: c.weight })
            .collect()
    };
    EntityKnowledge {
        entity: entity.to_string(),
        degree: graph.degree(entity),
        explanatory: known(top_k(routing.explanatory, cfg.top_k)),
        relevant: known(top_k(routing.relevant, cfg.top_k)),
        undivided: known(undivided(&sub, entity, cfg.top_k)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prune_threshold_examples() {
        // h + r sits at the origin; tails at distance 0.1, 1.0, 2.0.
        let table = TranseTable::from_vectors(
            1,
            vec![
                ("h".into(), vec![0.0]),
                ("a".into(), vec![0.1]),
                ("b".into(), vec![1.0]),
                ("c".into(), vec![-2.0]),
            ],
            vec![("r".into(), vec![0.0])],
            0.0,
        )
        .unwrap();
        let sub = vec![Triplet::new("h", "r", "a", 1.0), Triplet::new("h", "r", "b", 1.0), Triplet::new("h", "r", "c", 1.0)];
        let scores: Vec<f64> = sub.iter().map(|t| table.score(t)).collect();
        assert_eq!(scores, vec![-0.1, -1.0, -2.0]);
        assert_eq!(prune(&sub, &table, -0.5), vec![sub[0].clone()]);
        assert_eq!(prune(&sub, &table, f64::NEG_INFINITY), sub);
        assert!(prune(&sub, &table, f64::INFINITY).is_empty());
    }

    #[test]
    fn divide_routes_by_relation() {
        let tax = RelationTaxonomy::default();
        let sub = vec![
            Triplet::new("Bill Gates", "IsA", "businessman", 2.0),
            Triplet::new("Microsoft", "CreatedBy", "Bill Gates", 1.5),
            Triplet::new("Bill Gates", "Desires", "money", 1.0),
        ];
        let pair = divide(&sub, &tax, "Bill Gates", 5);
        assert_eq!(pair.explanatory, vec![ConceptWeight { concept: "businessman".into(), weight: 2.0 }]);
        assert_eq!(pair.relevant, vec![ConceptWeight { concept: "Microsoft".into(), weight: 1.5 }]);
        let r = route(&sub, &tax, "Bill Gates");
        assert_eq!(r.unknown_relations, 1);
        assert_eq!(r.ignored.len(), 1);
    }

    #[test]
    fn top_five_of_seven() {
        let sub: Vec<Triplet> = (0..7).map(|i| Triplet::new("e", "RelatedTo", &format!("c{i}"), [3., 1., 4., 1., 5., 9., 2.][i])).collect();
        let pair = divide(&sub, &RelationTaxonomy::default(), "e", 5);
        let names: Vec<&str> = pair.relevant.iter().map(|c| c.concept.as_str()).collect();
        assert_eq!(names, vec!["c5", "c4", "c2", "c0", "c6"]);
    }

    #[test]
    fn ties_follow_ingestion_order_and_duplicates_collapse() {
        let items = vec![
            ConceptWeight { concept: "x".into(), weight: 1.0 },
            ConceptWeight { concept: "y".into(), weight: 1.0 },
            ConceptWeight { concept: "X".into(), weight: 2.0 },
            ConceptWeight { concept: "z".into(), weight: 0.0 },
        ];
        let kept: Vec<String> = top_k(items, 10).into_iter().map(|c| c.concept).collect();
        assert_eq!(kept, vec!["X", "y", "z"]);
    }

    #[test]
    fn filter_entity_collects_degrees() {
        let g = KnowledgeGraph::from_triples(vec![
            Triplet::new("A", "IsA", "B", 1.0),
            Triplet::new("C", "RelatedTo", "A", 0.5),
            Triplet::new("B", "IsA", "D", 0.5),
        ]);
        let mut stats = FilterStats::default();
        let k = filter_entity(&g, &RelationTaxonomy::default(), None, "A", &FilterConfig::default(), &mut stats);
        assert_eq!(k.degree, 2);
        assert_eq!(k.explanatory[0].concept, "B");
        assert_eq!(k.explanatory[0].degree, 2);
        assert_eq!(k.relevant[0].concept, "C");
        assert_eq!(k.undivided.len(), 2);
        assert_eq!(stats.retrieved, 2);
    }
}
