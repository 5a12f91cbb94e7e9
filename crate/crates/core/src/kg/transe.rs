use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{concept_key, KnowledgeGraph, Triplet};
use crate::error::{Error, Result};
use crate::numeric::NumericError;

/// `-‖h + r - t‖₂`; higher means more plausible.
pub fn transe_score(h: &[f64], r: &[f64], t: &[f64]) -> Result<f64> {
    if h.len() != r.len() || r.len() != t.len() {
        return Err(NumericError::Shape(format!(
            "transe_score dimensions differ: {} / {} / {}",
            h.len(),
            r.len(),
            t.len()
        ))
        .into());
    }
    Ok(-h.iter().zip(r).zip(t).map(|((h, r), t)| (h + r - t).powi(2)).sum::<f64>().sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranseConfig {
    pub dim: usize,
    pub margin: f64,
    pub epochs: usize,
    /// Corrupted triples drawn per training triple.
    pub negatives: usize,
    pub learning_rate: f64,
    /// Share of triples held out for threshold calibration.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for TranseConfig {
    fn default() -> Self {
        Self { dim: 50, margin: 1.0, epochs: 200, negatives: 1, learning_rate: 0.1, holdout_fraction: 0.1, seed: 0 }
    }
}

/// Entity and relation embeddings plus the pruning threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranseTable {
    dim: usize,
    entities: Vec<String>,
    entity_vectors: Vec<Vec<f64>>,
    relations: Vec<String>,
    relation_vectors: Vec<Vec<f64>>,
    pub threshold: f64,
    #[serde(skip)]
    entity_index: HashMap<String, usize>,
    #[serde(skip)]
    relation_index: HashMap<String, usize>,
}

impl TranseTable {
    /// Builds a table from explicit vectors. Entity names are looked up by
    /// [`concept_key`].
    pub fn from_vectors(
        dim: usize,
        entities: Vec<(String, Vec<f64>)>,
        relations: Vec<(String, Vec<f64>)>,
        threshold: f64,
    ) -> Result<Self> {
        if let Some((name, v)) = entities.iter().chain(&relations).find(|(_, v)| v.len() != dim) {
            return Err(NumericError::Shape(format!("vector for {name} has dimension {}, expected {dim}", v.len())).into());
        }
        let (entities, entity_vectors) = entities.into_iter().map(|(n, v)| (concept_key(&n), v)).unzip();
        let (relations, relation_vectors) = relations.into_iter().unzip();
        let mut table = Self {
            dim,
            entities,
            entity_vectors,
            relations,
            relation_vectors,
            threshold,
            entity_index: HashMap::new(),
            relation_index: HashMap::new(),
        };
        table.reindex();
        Ok(table)
    }

    fn reindex(&mut self) {
        self.entity_index = self.entities.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        self.relation_index = self.relations.iter().enumerate().map(|(i, r)| (r.clone(), i)).collect();
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entity(&self, concept: &str) -> Option<&[f64]> {
        self.entity_index.get(&concept_key(concept)).map(|&i| self.entity_vectors[i].as_slice())
    }

    pub fn relation(&self, relation: &str) -> Option<&[f64]> {
        self.relation_index.get(relation).map(|&i| self.relation_vectors[i].as_slice())
    }

    /// Score of a triple; `-inf` when any part is missing from the table.
    pub fn score(&self, t: &Triplet) -> f64 {
        match (self.entity(&t.head), self.relation(&t.relation), self.entity(&t.tail)) {
            (Some(h), Some(r), Some(tl)) => transe_score(h, r, tl).unwrap_or(f64::NEG_INFINITY),
            _ => f64::NEG_INFINITY,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut table: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        table.reindex();
        Ok(table)
    }
}

#[derive(Clone, Debug)]
pub struct TranseTraining {
    pub table: TranseTable,
    /// Mean margin loss on the training triples: initial value, then one
    /// entry per epoch.
    pub loss_trace: Vec<f64>,
    /// Triple-classification accuracy at the chosen threshold.
    pub calibration_accuracy: f64,
    pub training_triples: usize,
    pub holdout_triples: usize,
}

type Ids = (usize, usize, usize);

struct Embeddings {
    dim: usize,
    ent: Vec<f64>,
    rel: Vec<f64>,
}

impl Embeddings {
    fn e(&self, i: usize) -> &[f64] {
        &self.ent[i * self.dim..(i + 1) * self.dim]
    }

    fn r(&self, i: usize) -> &[f64] {
        &self.rel[i * self.dim..(i + 1) * self.dim]
    }

    fn distance(&self, (h, r, t): Ids) -> f64 {
        -transe_score(self.e(h), self.r(r), self.e(t)).expect("same dim")
    }

    fn normalize_entities(&mut self) {
        for row in self.ent.chunks_mut(self.dim) {
            normalize(row);
        }
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn margin_loss(emb: &Embeddings, pairs: &[(Ids, Ids)], margin: f64) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|&(p, n)| (margin + emb.distance(p) - emb.distance(n)).max(0.0)).sum::<f64>() / pairs.len() as f64
}

fn margin_grad(emb: &Embeddings, pairs: &[(Ids, Ids)], margin: f64) -> (Vec<f64>, Vec<f64>) {
    let d = emb.dim;
    let mut ge = vec![0.0; emb.ent.len()];
    let mut gr = vec![0.0; emb.rel.len()];
    let scale = 1.0 / pairs.len().max(1) as f64;
    for &(p, n) in pairs {
        if margin + emb.distance(p) - emb.distance(n) <= 0.0 {
            continue;
        }
        for ((h, r, t), sign) in [(p, scale), (n, -scale)] {
            let diff: Vec<f64> = (0..d).map(|j| emb.e(h)[j] + emb.r(r)[j] - emb.e(t)[j]).collect();
            let norm = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            for j in 0..d {
                let u = sign * diff[j] / norm;
                ge[h * d + j] += u;
                gr[r * d + j] += u;
                ge[t * d + j] -= u;
            }
        }
    }
    (ge, gr)
}

fn corrupt(rng: &mut ChaCha8Rng, (h, r, t): Ids, n_ent: usize, positives: &HashSet<Ids>) -> Option<Ids> {
    if n_ent < 2 {
        return None;
    }
    for _ in 0..20 {
        let e = rng.gen_range(0..n_ent);
        let cand = if rng.gen_bool(0.5) { (e, r, t) } else { (h, r, e) };
        if !positives.contains(&cand) {
            return Some(cand);
        }
    }
    None
}

/// Margin-ranking TransE with fixed seeded negatives and full-batch
/// gradient steps. Each epoch starts its step search at twice the last
/// accepted learning rate and halves it until the loss does not rise, so the
/// loss trace never increases.
pub fn train_transe(graph: &KnowledgeGraph, cfg: &TranseConfig) -> Result<TranseTraining> {
    if graph.is_empty() {
        return Err(Error::EmptyGraph);
    }
    if cfg.dim == 0 {
        return Err(Error::Config("TransE dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let entities: Vec<String> = graph.concepts().iter().map(|c| concept_key(c)).collect();
    let ent_idx: HashMap<&str, usize> = entities.iter().enumerate().map(|(i, e)| (e.as_str(), i)).collect();
    let relations = graph.relations().to_vec();
    let rel_idx: HashMap<&str, usize> = relations.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();
    let ids: Vec<Ids> = graph
        .triples()
        .iter()
        .map(|t| (ent_idx[concept_key(&t.head).as_str()], rel_idx[t.relation.as_str()], ent_idx[concept_key(&t.tail).as_str()]))
        .collect();
    let positives: HashSet<Ids> = ids.iter().copied().collect();

    let d = cfg.dim;
    let bound = 6.0 / (d as f64).sqrt();
    let mut emb = Embeddings {
        dim: d,
        ent: (0..entities.len() * d).map(|_| rng.gen_range(-bound..bound)).collect(),
        rel: (0..relations.len() * d).map(|_| rng.gen_range(-bound..bound)).collect(),
    };
    for row in emb.rel.chunks_mut(d) {
        normalize(row);
    }
    emb.normalize_entities();

    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut rng);
    let mut n_hold = (cfg.holdout_fraction.clamp(0.0, 1.0) * ids.len() as f64).floor() as usize;
    if n_hold >= ids.len() {
        n_hold = 0;
    }
    let (hold, train) = order.split_at(n_hold);
    let mut train: Vec<usize> = train.to_vec();
    train.sort_unstable();

    let mut pairs = Vec::new();
    for &i in &train {
        for _ in 0..cfg.negatives {
            if let Some(n) = corrupt(&mut rng, ids[i], entities.len(), &positives) {
                pairs.push((ids[i], n));
            }
        }
    }

    let mut lr = cfg.learning_rate;
    let mut loss = margin_loss(&emb, &pairs, cfg.margin);
    let mut trace = vec![loss];
    for _ in 0..cfg.epochs {
        if loss > 0.0 {
            let (ge, gr) = margin_grad(&emb, &pairs, cfg.margin);
            lr = (2.0 * lr).max(cfg.learning_rate);
            for _ in 0..40 {
                let mut trial = Embeddings {
                    dim: d,
                    ent: emb.ent.iter().zip(&ge).map(|(w, g)| w - lr * g).collect(),
                    rel: emb.rel.iter().zip(&gr).map(|(w, g)| w - lr * g).collect(),
                };
                trial.normalize_entities();
                let trial_loss = margin_loss(&trial, &pairs, cfg.margin);
                if trial_loss <= loss {
                    emb = trial;
                    loss = trial_loss;
                    break;
                }
                lr *= 0.5;
            }
        }
        trace.push(loss);
    }

    let calib: Vec<Ids> = if hold.is_empty() { train.iter().map(|&i| ids[i]).collect() } else { hold.iter().map(|&i| ids[i]).collect() };
    let mut calib_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let pos: Vec<f64> = calib.iter().map(|&p| -emb.distance(p)).collect();
    let neg: Vec<f64> = calib
        .iter()
        .filter_map(|&p| corrupt(&mut calib_rng, p, entities.len(), &positives))
        .map(|n| -emb.distance(n))
        .collect();
    let (threshold, calibration_accuracy) = calibrate_threshold(&pos, &neg);

    let table = TranseTable::from_vectors(
        d,
        entities.into_iter().enumerate().map(|(i, e)| (e, emb.e(i).to_vec())).collect(),
        relations.into_iter().enumerate().map(|(i, r)| (r, emb.r(i).to_vec())).collect(),
        threshold,
    )?;
    Ok(TranseTraining {
        table,
        loss_trace: trace,
        calibration_accuracy,
        training_triples: train.len(),
        holdout_triples: hold.len(),
    })
}

/// Threshold maximizing the accuracy of "score ≥ threshold ⇔ positive".
/// Ties go to the lowest threshold; the returned value sits midway between
/// adjacent observed scores.
pub fn calibrate_threshold(pos: &[f64], neg: &[f64]) -> (f64, f64) {
    let mut scores: Vec<f64> = pos.iter().chain(neg).copied().filter(|s| s.is_finite()).collect();
    if scores.is_empty() {
        return (f64::NEG_INFINITY, 0.0);
    }
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    let total = (pos.len() + neg.len()) as f64;
    let accuracy = |th: f64| {
        (pos.iter().filter(|&&s| s >= th).count() + neg.iter().filter(|&&s| s < th).count()) as f64 / total
    };
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..=scores.len() {
        let th = scores.get(i).copied().unwrap_or(f64::INFINITY);
        let acc = accuracy(th);
        if acc > best.1 {
            best = (i, acc);
        }
    }
    let i = best.0;
    let th = if i == scores.len() {
        scores[i - 1] + 1.0
    } else if i == 0 {
        scores[0] - 1.0
    } else {
        0.5 * (scores[i - 1] + scores[i])
    };
    (th, best.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_examples() {
        assert_eq!(transe_score(&[1.0, 2.0], &[0.5, 0.5], &[1.5, 2.5]).unwrap(), 0.0);
        assert_eq!(transe_score(&[0.0; 3], &[0.0; 3], &[0.0; 3]).unwrap(), 0.0);
        let s = transe_score(&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!((s + std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!(transe_score(&[1.0], &[1.0, 2.0], &[1.0]).is_err());
    }

    fn chain_graph() -> KnowledgeGraph {
        // 21 nodes on a line joined by one relation: h + r = t is satisfiable.
        KnowledgeGraph::from_triples((0..20).map(|i| Triplet::new(&format!("n{i}"), "next", &format!("n{}", i + 1), 1.0)))
    }

    #[test]
    fn empty_graph_is_rejected() {
        assert!(matches!(train_transe(&KnowledgeGraph::default(), &TranseConfig::default()), Err(Error::EmptyGraph)));
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let g = chain_graph();
        let cfg = TranseConfig { epochs: 0, seed: 9, ..TranseConfig::default() };
        let a = train_transe(&g, &cfg).unwrap();
        let b = train_transe(&g, &TranseConfig { epochs: 0, ..cfg.clone() }).unwrap();
        assert_eq!(a.table, b.table);
        assert_eq!(a.loss_trace.len(), 1);
        for c in g.concepts() {
            let n: f64 = a.table.entity(c).unwrap().iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-9);
        }
        let trained = train_transe(&g, &TranseConfig { epochs: 5, ..cfg }).unwrap();
        assert_ne!(trained.table.entity("n0"), a.table.entity("n0"));
    }

    #[test]
    fn loss_never_increases_and_is_deterministic() {
        let g = chain_graph();
        let cfg = TranseConfig { dim: 16, epochs: 60, seed: 3, ..TranseConfig::default() };
        let run = train_transe(&g, &cfg).unwrap();
        for w in run.loss_trace.windows(2) {
            assert!(w[1] <= w[0], "{:?}", run.loss_trace);
        }
        assert!(run.loss_trace.last().unwrap() < &run.loss_trace[0]);
        assert_eq!(run.table, train_transe(&g, &cfg).unwrap().table);
    }

    #[test]
    fn threshold_separates_clean_scores() {
        let (th, acc) = calibrate_threshold(&[-0.1, -0.2], &[-2.0, -3.0]);
        assert_eq!(acc, 1.0);
        assert!(th > -2.0 && th <= -0.2);
        let (th, _) = calibrate_threshold(&[], &[]);
        assert_eq!(th, f64::NEG_INFINITY);
    }

    #[test]
    fn table_roundtrip_and_missing_scores() {
        let t = TranseTable::from_vectors(
            2,
            vec![("A".into(), vec![1.0, 0.0]), ("B".into(), vec![0.0, 0.0])],
            vec![("r".into(), vec![0.0, 1.0])],
            -0.5,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        t.save(&path).unwrap();
        let back = TranseTable::load(&path).unwrap();
        assert_eq!(back, t);
        assert!((back.score(&Triplet::new("a", "r", "B", 1.0)) + 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(back.score(&Triplet::new("A", "r", "Z", 1.0)), f64::NEG_INFINITY);
        assert!(TranseTable::from_vectors(3, vec![("A".into(), vec![1.0])], vec![], 0.0).is_err());
    }
}
