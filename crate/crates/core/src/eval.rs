//! Caption metrics: BLEU, entity and rare-noun precision/recall/F1, article
//! coverage and the normalized K-sweep statistic.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and candidate n-gram total for one order.
fn clipped(candidate: &[String], references: &[Vec<String>], n: usize) -> (usize, usize) {
    let cand = ngrams(candidate, n);
    let mut max_ref: HashMap<&[String], usize> = HashMap::new();
    for r in references {
        for (g, c) in ngrams(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matched = cand.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

/// Reference length closest to `c`, shorter on ties.
fn closest_ref_len(c: usize, references: &[Vec<String>]) -> usize {
    references.iter().map(Vec::len).min_by_key(|&r| (r.abs_diff(c), r)).unwrap_or(0)
}

fn combine(matched: &[usize], totals: &[usize], c: usize, r: usize) -> f64 {
    if c == 0 || matched.iter().zip(totals).any(|(&m, &t)| m == 0 || t == 0) {
        return 0.0;
    }
    let n = matched.len() as f64;
    let log_p: f64 = matched.iter().zip(totals).map(|(&m, &t)| (m as f64 / t as f64).ln()).sum::<f64>() / n;
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * log_p.exp()
}

/// Sentence BLEU with uniform weights over orders `1..=n`, clipped counts and
/// the brevity penalty against the closest reference length.
pub fn bleu(candidate: &[String], references: &[Vec<String>], n: usize) -> f64 {
    assert!(n >= 1, "BLEU order must be at least 1");
    let (matched, totals): (Vec<usize>, Vec<usize>) = (1..=n).map(|k| clipped(candidate, references, k)).unzip();
    combine(&matched, &totals, candidate.len(), closest_ref_len(candidate.len(), references))
}

/// Corpus BLEU: clipped counts, candidate totals and lengths are summed over
/// all pairs before combining.
pub fn corpus_bleu(pairs: &[(Vec<String>, Vec<Vec<String>>)], n: usize) -> f64 {
    assert!(n >= 1, "BLEU order must be at least 1");
    let mut matched = vec![0; n];
    let mut totals = vec![0; n];
    let (mut c, mut r) = (0, 0);
    for (cand, refs) in pairs {
        for k in 1..=n {
            let (m, t) = clipped(cand, refs, k);
            matched[k - 1] += m;
            totals[k - 1] += t;
        }
        c += cand.len();
        r += closest_ref_len(cand.len(), refs);
    }
    combine(&matched, &totals, c, r)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(matched: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (p, r) = (ratio(matched, predicted), ratio(matched, gold));
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Self { precision: p, recall: r, f1 }
    }
}

pub fn normalize_surface(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn multiset(items: &[String]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for i in items {
        *m.entry(normalize_surface(i)).or_insert(0) += 1;
    }
    m
}

fn intersection(a: &BTreeMap<String, usize>, b: &BTreeMap<String, usize>) -> usize {
    a.iter().map(|(k, &c)| c.min(b.get(k).copied().unwrap_or(0))).sum()
}

/// Matched, predicted and gold counts under multiset intersection of
/// case-normalized surfaces.
pub fn entity_counts(predicted: &[String], gold: &[String]) -> (usize, usize, usize) {
    let (p, g) = (multiset(predicted), multiset(gold));
    (intersection(&p, &g), predicted.len(), gold.len())
}

pub fn entity_prf(predicted: &[String], gold: &[String]) -> Prf {
    let (m, p, g) = entity_counts(predicted, gold);
    Prf::from_counts(m, p, g)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RareNounScore {
    pub prf: Prf,
    /// The gold side has no rare noun; the scores are zero by convention.
    pub empty: bool,
}

/// A noun is rare when none of its tokens, lowercased, is in the training
/// vocabulary.
pub fn is_rare(noun: &str, train_vocab: &HashSet<String>) -> bool {
    noun.split_whitespace().all(|t| !train_vocab.contains(&t.to_lowercase()))
}

fn rare_only(items: &[String], train_vocab: &HashSet<String>) -> Vec<String> {
    items.iter().filter(|n| is_rare(n, train_vocab)).cloned().collect()
}

pub fn rare_noun_counts(predicted: &[String], gold: &[String], train_vocab: &HashSet<String>) -> (usize, usize, usize) {
    entity_counts(&rare_only(predicted, train_vocab), &rare_only(gold, train_vocab))
}

/// Entity P/R/F1 restricted to nouns absent from the training vocabulary.
/// `train_vocab` holds lowercased tokens.
pub fn rare_noun_prf(predicted: &[String], gold: &[String], train_vocab: &HashSet<String>) -> RareNounScore {
    let (m, p, g) = rare_noun_counts(predicted, gold, train_vocab);
    if g == 0 {
        return RareNounScore { prf: Prf::default(), empty: true };
    }
    RareNounScore { prf: Prf::from_counts(m, p, g), empty: false }
}

/// Micro-averaged share of caption tokens that occur in the paired article.
pub fn coverage_ratio(pairs: &[(Vec<String>, Vec<String>)]) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for (caption, article) in pairs {
        let words: HashSet<String> = article.iter().map(|w| w.to_lowercase()).collect();
        hit += caption.iter().filter(|w| words.contains(&w.to_lowercase())).count();
        total += caption.len();
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// `(v - min) / min` for each value.
pub fn normalize_scores(values: &[f64]) -> Result<Vec<f64>> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if values.is_empty() {
        return Err(Error::Config("no values to normalize".into()));
    }
    if min <= 0.0 || min.is_nan() {
        return Err(Error::NonPositiveMinimum(min));
    }
    Ok(values.iter().map(|v| (v - min) / min).collect())
}

/// Everything needed to score one generated caption.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
    pub predicted_entities: Vec<String>,
    pub gold_entities: Vec<String>,
    pub article: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordScore {
    pub id: String,
    pub bleu: [f64; 4],
    pub entity: Prf,
    pub rare_noun: RareNounScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Corpus BLEU@1..4.
    pub bleu: [f64; 4],
    pub entity: Prf,
    pub rare_noun: RareNounScore,
    /// Article coverage of the generated captions.
    pub coverage: f64,
    pub records: Vec<RecordScore>,
}

/// Corpus-level scores use summed counts over all records.
pub fn evaluate(items: &[EvalItem], train_vocab: &HashSet<String>) -> EvalReport {
    let pairs: Vec<(Vec<String>, Vec<Vec<String>>)> =
        items.iter().map(|i| (i.candidate.clone(), i.references.clone())).collect();
    let corpus = [1, 2, 3, 4].map(|n| corpus_bleu(&pairs, n));
    let (mut e, mut r) = ([0; 3], [0; 3]);
    let mut records = Vec::with_capacity(items.len());
    for i in items {
        let ec = entity_counts(&i.predicted_entities, &i.gold_entities);
        let rc = rare_noun_counts(&i.predicted_entities, &i.gold_entities, train_vocab);
        for (acc, c) in [(&mut e, ec), (&mut r, rc)] {
            acc[0] += c.0;
            acc[1] += c.1;
            acc[2] += c.2;
        }
        records.push(RecordScore {
            id: i.id.clone(),
            bleu: [1, 2, 3, 4].map(|n| bleu(&i.candidate, &i.references, n)),
            entity: Prf::from_counts(ec.0, ec.1, ec.2),
            rare_noun: rare_noun_prf(&i.predicted_entities, &i.gold_entities, train_vocab),
        });
    }
    let rare_noun = if r[2] == 0 {
        RareNounScore { prf: Prf::default(), empty: true }
    } else {
        RareNounScore { prf: Prf::from_counts(r[0], r[1], r[2]), empty: false }
    };
    let coverage = coverage_ratio(&items.iter().map(|i| (i.candidate.clone(), i.article.clone())).collect::<Vec<_>>());
    EvalReport { bleu: corpus, entity: Prf::from_counts(e[0], e[1], e[2]), rare_noun, coverage, records }
}

impl EvalReport {
    /// Aligned plain-text summary.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, String)> = (0..4).map(|i| (format!("BLEU@{}", i + 1), fmt(self.bleu[i]))).collect();
        for (name, p) in [("entity", self.entity), ("rare noun", self.rare_noun.prf)] {
            rows.push((format!("{name} P"), fmt(p.precision)));
            rows.push((format!("{name} R"), fmt(p.recall)));
            rows.push((format!("{name} F1"), fmt(p.f1)));
        }
        if self.rare_noun.empty {
            rows.push(("rare noun".into(), "empty".into()));
        }
        rows.push(("coverage".into(), fmt(self.coverage)));
        rows.push(("records".into(), self.records.len().to_string()));
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v:>8}");
        }
        out
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

/// One row of a K-sweep: raw entity scores and their normalized values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub entity: Prf,
    pub normalized: Prf,
}

/// Normalizes each of P, R and F1 across the sweep. A metric whose minimum is
/// not positive cannot be normalized and is reported as an error.
pub fn normalize_sweep(raw: &[(usize, Prf)]) -> Result<Vec<SweepRow>> {
    let col = |f: fn(&Prf) -> f64| normalize_scores(&raw.iter().map(|(_, p)| f(p)).collect::<Vec<_>>());
    let p = col(|p| p.precision)?;
    let r = col(|p| p.recall)?;
    let f = col(|p| p.f1)?;
    Ok(raw
        .iter()
        .enumerate()
        .map(|(i, &(k, entity))| SweepRow { k, entity, normalized: Prf { precision: p[i], recall: r[i], f1: f[i] } })
        .collect())
}
