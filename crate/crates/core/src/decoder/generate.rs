use serde::{Deserialize, Serialize};

use super::model::{forward, Model};
use crate::error::Result;
use crate::features::{BOS, EOS, PAD};
use crate::numeric::Tape;
use crate::sample::{Sample, SymbolKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[derive(Default)]
pub enum DecodeMode {
    #[default]
    Greedy,
    Beam(usize),
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSymbol {
    pub kind: SymbolKind,
    pub surface: String,
    pub prob: f64,
}

/// One generated caption, with the symbols behind it and the switch values
/// at every emitted step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub id: String,
    pub caption_text: String,
    pub symbols: Vec<GeneratedSymbol>,
    pub gates_trace: Vec<(f64, f64)>,
}

impl Generation {
    pub fn entities(&self) -> Vec<String> {
        self.symbols.iter().filter(|s| s.kind == SymbolKind::Entity).map(|s| s.surface.clone()).collect()
    }

    pub fn tokens(&self) -> Vec<String> {
        self.caption_text.split_whitespace().map(String::from).collect()
    }
}

struct Step {
    probs: Vec<f64>,
    gates: (f64, f64),
}

fn step(model: &Model, sample: &Sample, inputs: &[usize]) -> Result<Step> {
    let mut tape = Tape::new(&model.params);
    let out = forward(&mut tape, &model.config, sample, inputs, None)?;
    let last = inputs.len() - 1;
    let probs = tape.value(out.probs).row(last).iter().map(|&p| p as f64).collect();
    let gate = |g: Option<crate::numeric::Var>| g.map_or(0.0, |v| tape.value(v).get(last, 0) as f64);
    Ok(Step { probs, gates: (gate(out.gate_x), gate(out.gate_y)) })
}

fn allowed(id: usize) -> bool {
    id != PAD && id != BOS
}

/// Autoregressive decoding until EOS or `max_len` symbols.
pub fn generate(model: &Model, sample: &Sample, mode: DecodeMode, max_len: usize) -> Result<Generation> {
    let (chosen, probs, gates) = match mode {
        DecodeMode::Greedy => greedy(model, sample, max_len)?,
        DecodeMode::Beam(width) => beam(model, sample, width.max(1), max_len)?,
    };
    let symbols: Vec<GeneratedSymbol> = chosen
        .iter()
        .zip(&probs)
        .map(|(&id, &prob)| {
            let (kind, surface) = sample.symbols.describe(id, &model.vocab);
            GeneratedSymbol { kind, surface, prob }
        })
        .collect();
    let caption_text = symbols.iter().map(|s| s.surface.as_str()).collect::<Vec<_>>().join(" ");
    Ok(Generation { id: sample.id.clone(), caption_text, symbols, gates_trace: gates })
}

type Decoded = (Vec<usize>, Vec<f64>, Vec<(f64, f64)>);

fn greedy(model: &Model, sample: &Sample, max_len: usize) -> Result<Decoded> {
    let mut inputs = vec![BOS];
    let (mut chosen, mut probs, mut gates) = (Vec::new(), Vec::new(), Vec::new());
    while chosen.len() < max_len {
        let s = step(model, sample, &inputs)?;
        let (best, p) = s
            .probs
            .iter()
            .enumerate()
            .filter(|(i, _)| allowed(*i))
            .fold((EOS, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
        if best == EOS {
            break;
        }
        chosen.push(best);
        probs.push(p);
        gates.push(s.gates);
        inputs.push(best);
    }
    Ok((chosen, probs, gates))
}

#[derive(Clone)]
struct Hypothesis {
    symbols: Vec<usize>,
    probs: Vec<f64>,
    gates: Vec<(f64, f64)>,
    log_prob: f64,
    done: bool,
}

impl Hypothesis {
    fn score(&self) -> f64 {
        self.log_prob / (self.symbols.len() + usize::from(self.done)).max(1) as f64
    }
}

fn beam(model: &Model, sample: &Sample, width: usize, max_len: usize) -> Result<Decoded> {
    let mut beams = vec![Hypothesis { symbols: vec![], probs: vec![], gates: vec![], log_prob: 0.0, done: false }];
    for _ in 0..max_len {
        if beams.iter().all(|h| h.done) {
            break;
        }
        let mut next = Vec::new();
        for h in &beams {
            if h.done {
                next.push(h.clone());
                continue;
            }
            let mut inputs = vec![BOS];
            inputs.extend(&h.symbols);
            let s = step(model, sample, &inputs)?;
            let mut ranked: Vec<(usize, f64)> = s.probs.iter().copied().enumerate().filter(|(i, _)| allowed(*i)).collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for &(id, p) in ranked.iter().take(width) {
                let mut c = h.clone();
                c.log_prob += p.max(1e-300).ln();
                if id == EOS {
                    c.done = true;
                } else {
                    c.symbols.push(id);
                    c.probs.push(p);
                    c.gates.push(s.gates);
                }
                next.push(c);
            }
        }
        next.sort_by(|a, b| b.score().total_cmp(&a.score()));
        next.truncate(width);
        beams = next;
    }
    let best = beams
        .into_iter()
        .max_by(|a, b| a.score().total_cmp(&b.score()).then(b.symbols.len().cmp(&a.symbols.len())))
        .expect("at least one hypothesis");
    Ok((best.symbols, best.probs, best.gates))
}
