//! Teacher-forced maximum-likelihood training with warmup then linear decay.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{sequence_nll, Model};
use crate::error::{Error, Result};
use crate::numeric::{adam_step, AdamConfig, AdamState, ParamSet, Tape, Tensor};
use crate::sample::{Sample, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dropout: f64,
    pub variant: Variant,
    /// Model dimension preset: `desk` or `paper`.
    pub preset: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-5,
            warmup_steps: 500,
            epochs: 10,
            batch_size: 16,
            seed: 0,
            dropout: 0.1,
            variant: Variant::default(),
            preset: "desk".into(),
        }
    }
}

fn parse_value<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value.trim().parse().map_err(|_| Error::Config(format!("invalid value for {key}: {value:?}")))
}

impl TrainConfig {
    /// Sets one field from its `key=value` spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = &mut self.variant;
        match key.trim() {
            "lr" => self.lr = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "warmup_steps" => self.warmup_steps = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "preset" => self.preset = value.trim().to_string(),
            "non_commonsense" => v.non_commonsense = parse_value(key, value)?,
            "non_distinguish" => v.non_distinguish = parse_value(key, value)?,
            "non_enrich" => v.non_enrich = parse_value(key, value)?,
            "non_division" => v.non_division = parse_value(key, value)?,
            "commonsense_entities" => v.commonsense_entities = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown training key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    /// Returns the keys that were set.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<Vec<String>> {
        let mut keys = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.into(),
                line: i + 1,
                message: "expected key=value".into(),
            })?;
            self.set(k, v).map_err(|e| Error::Parse { path: origin.into(), line: i + 1, message: e.to_string() })?;
            keys.push(k.trim().to_string());
        }
        Ok(keys)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&std::fs::read_to_string(path)?, &path.display().to_string())?;
        Ok(cfg)
    }

    /// `key=value` lines that `apply_text` reads back unchanged.
    pub fn to_text(&self) -> String {
        let v = &self.variant;
        format!(
            "lr={}\nweight_decay={}\nwarmup_steps={}\nepochs={}\nbatch_size={}\nseed={}\ndropout={}\npreset={}\n\
             non_commonsense={}\nnon_distinguish={}\nnon_enrich={}\nnon_division={}\ncommonsense_entities={}\n",
            self.lr,
            self.weight_decay,
            self.warmup_steps,
            self.epochs,
            self.batch_size,
            self.seed,
            self.dropout,
            self.preset,
            v.non_commonsense,
            v.non_distinguish,
            v.non_enrich,
            v.non_division,
            v.commonsense_entities
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.preset != "desk" && self.preset != "paper" {
            return Err(Error::Config(format!("unknown preset {:?}", self.preset)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    /// Learning rate for 0-based optimizer step `step` out of `total`:
    /// linear ramp over the warmup, then linear decay to zero.
    pub fn learning_rate(&self, step: usize, total: usize) -> f64 {
        if step < self.warmup_steps {
            self.lr * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            let rest = total.saturating_sub(self.warmup_steps).max(1);
            self.lr * total.saturating_sub(step) as f64 / rest as f64
        }
    }
}

/// Mean NLL over the batch's scored positions and its gradients (already
/// divided by the position count). Evaluation mode when `rng` is `None`.
pub fn compute_loss(
    model: &Model,
    batch: &[&Sample],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, BTreeMap<String, Tensor<f32>>, usize)> {
    let mut total = 0.0;
    let mut count = 0;
    let mut grads: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
    for s in batch {
        let mut tape = Tape::new(&model.params);
        let (nll, n, out) = sequence_nll(&mut tape, &model.config, s, rng.as_deref_mut())?;
        let value = tape.value(nll).data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::Diverged(diagnose(&tape, s, &out, value)));
        }
        total += value;
        count += n;
        for (name, g) in tape.backward(nll).params(&tape) {
            match grads.get_mut(&name) {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    grads.insert(name, g);
                }
            }
        }
    }
    let scale = 1.0 / count.max(1) as f32;
    for g in grads.values_mut() {
        g.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    Ok((total / count.max(1) as f64, grads, count))
}

fn diagnose(tape: &Tape<'_, f32>, s: &Sample, out: &crate::decoder::ForwardOutput, loss: f64) -> String {
    let mean = |v: Option<crate::numeric::Var>| {
        v.map(|v| {
            let d = tape.value(v).data();
            d.iter().map(|&x| x as f64).sum::<f64>() / d.len().max(1) as f64
        })
    };
    let row_sums = |v: Option<crate::numeric::Var>| {
        v.map(|v| {
            let t = tape.value(v);
            (0..t.rows()).map(|r| t.row(r).iter().map(|&x| x as f64).sum::<f64>()).collect::<Vec<_>>()
        })
    };
    format!(
        "record {}: loss {loss}; mean gate x {:?}, y {:?}; entity attention row sums {:?}; concept attention row sums {:?}",
        s.id,
        mean(out.gate_x),
        mean(out.gate_y),
        row_sums(out.entity_weights),
        row_sums(out.concept_weights),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub best_loss: f64,
    pub steps: usize,
}

/// Trains `model` in place. The best-loss parameters end up in `model` and,
/// when `checkpoint` is given, on disk.
pub fn fit(model: &mut Model, samples: &[Sample], cfg: &TrainConfig, checkpoint: Option<&Path>) -> Result<FitReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    model.config.dropout = cfg.dropout;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batches_per_epoch = samples.len().div_ceil(cfg.batch_size);
    let total = batches_per_epoch * cfg.epochs;
    let mut state = AdamState::new();
    let adam = AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamConfig::default() };
    let mut report = FitReport { epoch_losses: vec![], best_epoch: None, best_loss: f64::INFINITY, steps: 0 };
    let mut best: Option<ParamSet<f32>> = None;
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, grads, n) = compute_loss(model, &batch, Some(&mut rng))?;
            sum += loss * n as f64;
            count += n;
            let step_cfg = AdamConfig { lr: cfg.learning_rate(report.steps, total), ..adam };
            adam_step(&mut model.params, &grads, &mut state, &step_cfg)?;
            report.steps += 1;
        }
        let epoch_loss = sum / count.max(1) as f64;
        log::info!("epoch {}: loss {epoch_loss:.5}", epoch + 1);
        report.epoch_losses.push(epoch_loss);
        if epoch_loss < report.best_loss {
            report.best_loss = epoch_loss;
            report.best_epoch = Some(epoch);
            best = Some(model.params.clone());
        }
    }
    if let Some(p) = best {
        model.params = p;
    }
    if let Some(dir) = checkpoint {
        model.save(dir)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_ramps_then_decays() {
        let cfg = TrainConfig { lr: 1.0, warmup_steps: 4, ..TrainConfig::default() };
        let lrs: Vec<f64> = (0..12).map(|s| cfg.learning_rate(s, 12)).collect();
        assert_eq!(&lrs[..4], &[0.25, 0.5, 0.75, 1.0]);
        assert_eq!(lrs[4], 1.0);
        assert!(lrs[4..].windows(2).all(|w| w[1] < w[0]));
        assert!(lrs[11] > 0.0 && lrs[11] <= 0.125 + 1e-12);
    }

    #[test]
    fn key_value_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.apply_text("# comment\nlr = 0.003\nepochs=7\nnon_enrich=true\n\npreset=paper\n", "inline").unwrap();
        assert_eq!(cfg.lr, 0.003);
        assert_eq!(cfg.epochs, 7);
        assert!(cfg.variant.non_enrich);
        assert_eq!(cfg.preset, "paper");
        let mut back = TrainConfig::default();
        back.apply_text(&cfg.to_text(), "inline").unwrap();
        assert_eq!(back, cfg);
        let err = TrainConfig::default().apply_text("lr=1\nbogus=2\n", "f.cfg").unwrap_err();
        assert!(err.to_string().contains('2'), "{err}");
        assert!(TrainConfig::default().apply_text("lr\n", "f.cfg").is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(TrainConfig { lr: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
