use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distinguish::{self, entity_attention, DistinguishConfig};
use crate::enrich::{self, concept_attention, refine_pairs};
use crate::error::{Error, Result};
use crate::features::{ImageConfig, ImageGroup, Vocabulary, PAD};
use crate::numeric::{dropout, multi_head, sinusoid_table, AttentionVars, NumericError, ParamSet, Scalar, Tape, Var};
use crate::sample::Sample;

pub const EMBEDDING: &str = "embed.tokens";
pub const OUTPUT_WEIGHT: &str = "output.w";
pub const OUTPUT_BIAS: &str = "output.b";
pub const GATE_X: &str = "gate.x";
pub const GATE_Y: &str = "gate.y";

/// Floor applied to target probabilities before the log.
const PROB_FLOOR: f64 = 1e-30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
    pub image: ImageConfig,
    pub max_article: usize,
    pub max_entities: usize,
    /// Concepts kept per subgraph.
    pub top_k: usize,
    pub distinguish: DistinguishConfig,
    /// Tag capitalized runs when a record has no entity annotations.
    pub fallback_tagger: bool,
    pub max_caption: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            layers: 2,
            dropout: 0.1,
            image: ImageConfig::default(),
            max_article: 512,
            max_entities: 40,
            top_k: 5,
            distinguish: DistinguishConfig::default(),
            fallback_tagger: true,
            max_caption: 32,
        }
    }

    pub fn paper() -> Self {
        Self {
            d_model: 1024,
            heads: 16,
            layers: 24,
            image: ImageConfig { patch_width: 2048, face_width: 512, object_width: 2048, ..ImageConfig::default() },
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected desk or paper)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || !self.d_model.is_multiple_of(2) {
            return Err(Error::Config(format!("d_model must be even and positive, got {}", self.d_model)));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(NumericError::HeadSplit { dim: self.d_model, heads: self.heads }.into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

fn layer(l: usize, part: &str) -> String {
    format!("decoder.{l}.{part}")
}

fn image_param(g: ImageGroup, part: &str) -> String {
    format!("image.{}.{part}", g.name())
}

/// Seeded initial parameters for `vocab_size` words.
pub fn init_params(cfg: &ModelConfig, vocab_size: usize, seed: u64) -> ParamSet<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.d_model;
    let mut p = ParamSet::new();
    p.init_normal(EMBEDDING, vocab_size, d, 0.3, &mut rng);
    for g in ImageGroup::ALL {
        p.init_xavier(&image_param(g, "w"), cfg.image.width(g), d, &mut rng);
        p.init_const(&image_param(g, "b"), 1, d, 0.0);
    }
    distinguish::init_params(&mut p, d, &cfg.distinguish, &mut rng);
    enrich::init_params(&mut p, d, &mut rng);
    for l in 0..cfg.layers {
        for block in ["self", "cross"] {
            for w in ["q", "k", "v", "o"] {
                p.init_xavier(&layer(l, &format!("{block}.{w}")), d, d, &mut rng);
            }
        }
        for ln in ["ln1", "ln2"] {
            p.init_const(&layer(l, &format!("{ln}.g")), 1, d, 1.0);
            p.init_const(&layer(l, &format!("{ln}.b")), 1, d, 0.0);
        }
    }
    p.init_xavier(OUTPUT_WEIGHT, d, vocab_size, &mut rng);
    p.init_const(OUTPUT_BIAS, 1, vocab_size, 0.0);
    for g in [GATE_X, GATE_Y] {
        p.init_xavier(&format!("{g}.w"), 2 * d, 1, &mut rng);
        p.init_const(&format!("{g}.b"), 1, 1, 0.0);
    }
    p
}

/// Configuration, vocabulary and weights.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamSet<f32>,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, vocab.len(), seed);
        Ok(Self { config, vocab, params })
    }

    /// Writes `config.json`, `vocab.txt` and the tensor files into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.json"), serde_json::to_vec_pretty(&self.config)?)?;
        self.vocab.save(&dir.join("vocab.txt"))?;
        self.params.save(dir)?;
        Ok(())
    }

    /// Loads a checkpoint, rejecting missing or misshapen tensors.
    pub fn load(dir: &Path) -> Result<Self> {
        let config: ModelConfig = serde_json::from_slice(&std::fs::read(dir.join("config.json"))?)?;
        config.validate()?;
        let vocab = Vocabulary::load(&dir.join("vocab.txt"))?;
        let params = ParamSet::load(dir)?;
        params.check_compatible(&init_params(&config, vocab.len(), 0))?;
        Ok(Self { config, vocab, params })
    }
}

/// Everything one forward pass exposes.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[T, V_ext]` final mixed distribution.
    pub probs: Var,
    /// `[T, V]` generation-only distribution.
    pub base: Var,
    /// First-layer input rows.
    pub input: Var,
    /// Last-layer output rows.
    pub context: Var,
    pub gate_x: Option<Var>,
    pub gate_y: Option<Var>,
    /// Effective (entity, concept, generation) coefficients, each `[T, 1]`;
    /// `None` means the pathway carries no mass (generation: all mass).
    pub coefficients: [Option<Var>; 3],
    pub entity_weights: Option<Var>,
    pub concept_weights: Option<Var>,
    /// Self-attention weights per layer.
    pub self_weights: Vec<Var>,
    /// Rows of the encoder-side memory.
    pub memory_rows: usize,
}

fn maybe_dropout<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, rate: f64, rng: &mut Option<&mut ChaCha8Rng>) -> Result<Var, NumericError> {
    match rng {
        Some(r) => dropout(tape, x, rate, r),
        None => Ok(x),
    }
}

/// Runs the model over decoder `inputs` (extended-vocabulary ids, first
/// one BOS). `rng` switches on training-mode dropout.
pub fn forward<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    sample: &Sample,
    inputs: &[usize],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardOutput> {
    if inputs.is_empty() {
        return Err(Error::Config("forward needs at least one decoder input".into()));
    }
    let d = cfg.d_model;
    let embed = tape.param(EMBEDDING)?;
    let mut memory = Vec::new();
    let mut keep = Vec::new();

    for g in ImageGroup::ALL {
        let (feats, present) = sample.image.group(g);
        if feats.rows() == 0 {
            continue;
        }
        let x = tape.leaf(feats.cast());
        let w = tape.param(&image_param(g, "w"))?;
        let b = tape.param(&image_param(g, "b"))?;
        let proj = tape.matmul(x, w)?;
        memory.push(tape.add_row(proj, b)?);
        keep.extend((0..feats.rows()).map(|r| r < present));
    }

    if !sample.article.is_empty() {
        let tok = tape.gather_rows(embed, &sample.article)?;
        let pos = tape.leaf(sinusoid_table(0, sample.article.len(), d)?);
        memory.push(tape.add(tok, pos)?);
        keep.extend(std::iter::repeat_n(true, sample.article.len()));
    }

    let mut entity_matrix = None;
    if sample.variant.uses_entities() && !sample.entities.is_empty() {
        let mut groups = Vec::new();
        let mut degrees = Vec::new();
        let mut sequences = Vec::new();
        for e in &sample.entities {
            let mut seq = vec![groups.len()];
            groups.push(e.tokens.clone());
            degrees.push(e.degree);
            for c in &e.explanatory {
                seq.push(groups.len());
                groups.push(c.tokens.clone());
                degrees.push(c.degree);
            }
            sequences.push(seq);
        }
        let raw = tape.gather_mean(embed, &groups)?;
        let out = distinguish::distinguish(tape, raw, &degrees, &sequences, &cfg.distinguish)?;
        memory.push(out.entity_matrix);
        keep.extend(std::iter::repeat_n(true, sample.entities.len()));
        entity_matrix = Some(out.entity_matrix);
    }

    let mut pair_matrix = None;
    if sample.variant.uses_concepts() && !sample.pairs.is_empty() {
        let concept_groups: Vec<Vec<usize>> = sample.pairs.iter().map(|p| p.concept.tokens.clone()).collect();
        let entity_groups: Vec<Vec<usize>> = sample
            .pairs
            .iter()
            .map(|p| sample.entities.get(p.entity).map_or_else(Vec::new, |e| e.tokens.clone()))
            .collect();
        let c = tape.gather_mean(embed, &concept_groups)?;
        let e = tape.gather_mean(embed, &entity_groups)?;
        let xr = refine_pairs(tape, c, e, cfg.heads)?;
        memory.push(xr);
        keep.extend(std::iter::repeat_n(true, sample.pairs.len()));
        pair_matrix = Some(xr);
    }

    let memory_rows = keep.len();
    let memory = tape.concat_rows(&memory)?;

    let t = inputs.len();
    let groups: Vec<Vec<usize>> = inputs.iter().map(|&i| sample.input_tokens(i)).collect();
    let tok = tape.gather_mean(embed, &groups)?;
    let pos = tape.leaf(sinusoid_table(0, t, d)?);
    let input = tape.add(tok, pos)?;
    let input = maybe_dropout(tape, input, cfg.dropout, &mut rng)?;

    let causal: Vec<bool> = (0..t * t).map(|i| i % t <= i / t).collect();
    let cross_keep: Vec<bool> = (0..t).flat_map(|_| keep.iter().copied()).collect();
    let mut h = input;
    let mut self_weights = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let sa = AttentionVars::bind(tape, &layer(l, "self"), true)?;
        let (a, w) = multi_head(tape, h, h, h, &sa, cfg.heads, Some(&causal), None)?;
        self_weights.push(w);
        let a = maybe_dropout(tape, a, cfg.dropout, &mut rng)?;
        let res = tape.add(h, a)?;
        let (g, b) = (tape.param(&layer(l, "ln1.g"))?, tape.param(&layer(l, "ln1.b"))?);
        h = tape.layer_norm(res, g, b)?;

        let ca = AttentionVars::bind(tape, &layer(l, "cross"), true)?;
        let (c, _) = multi_head(tape, h, memory, memory, &ca, cfg.heads, Some(&cross_keep), None)?;
        let c = maybe_dropout(tape, c, cfg.dropout, &mut rng)?;
        let res = tape.add(h, c)?;
        let (g, b) = (tape.param(&layer(l, "ln2.g"))?, tape.param(&layer(l, "ln2.b"))?);
        h = tape.layer_norm(res, g, b)?;
    }
    let context = h;

    let w = tape.param(OUTPUT_WEIGHT)?;
    let b = tape.param(OUTPUT_BIAS)?;
    let logits = tape.matmul(context, w)?;
    let logits = tape.add_row(logits, b)?;
    let base = tape.softmax(logits, None)?;

    let gate_in = tape.concat_cols(&[input, context])?;
    let gate = |tape: &mut Tape<'_, T>, name: &str| -> Result<Var> {
        let w = tape.param(&format!("{name}.w"))?;
        let b = tape.param(&format!("{name}.b"))?;
        let z = tape.matmul(gate_in, w)?;
        let z = tape.add_row(z, b)?;
        Ok(tape.sigmoid(z))
    };
    let gate_x = if sample.variant.uses_entities() { Some(gate(tape, GATE_X)?) } else { None };
    let gate_y = if sample.variant.uses_concepts() { Some(gate(tape, GATE_Y)?) } else { None };

    let (mut cx, mut cy, mut cg) = match (gate_x, gate_y) {
        (Some(x), Some(y)) => {
            let nx = tape.one_minus(x);
            let ny = tape.one_minus(y);
            (Some(x), Some(tape.mul(nx, y)?), Some(tape.mul(nx, ny)?))
        }
        (Some(x), None) => (Some(x), None, Some(tape.one_minus(x))),
        (None, Some(y)) => (None, Some(y), Some(tape.one_minus(y))),
        (None, None) => (None, None, None),
    };
    // An empty pointer set hands its share to generation.
    if entity_matrix.is_none() {
        if let (Some(x), Some(g)) = (cx.take(), cg) {
            cg = Some(tape.add(g, x)?);
        }
    }
    if pair_matrix.is_none() {
        if let (Some(y), Some(g)) = (cy.take(), cg) {
            cg = Some(tape.add(g, y)?);
        }
    }

    let width = sample.symbols.len();
    let vocab = tape.shape(base)[1];
    let generation = match cg {
        Some(g) => tape.row_scale(base, g)?,
        None => base,
    };
    let identity: Vec<usize> = (0..vocab).collect();
    let mut probs = tape.scatter_cols(generation, &identity, width)?;

    let mut entity_weights = None;
    if let (Some(xe), Some(x)) = (entity_matrix, cx) {
        let a = entity_attention(tape, context, xe, cfg.heads)?;
        entity_weights = Some(a);
        let scaled = tape.row_scale(a, x)?;
        let idx: Vec<usize> = (0..sample.entities.len()).map(|k| sample.symbols.entity_symbol(k)).collect();
        let spread = tape.scatter_cols(scaled, &idx, width)?;
        probs = tape.add(probs, spread)?;
    }
    let mut concept_weights = None;
    if let (Some(xr), Some(y)) = (pair_matrix, cy) {
        let a = concept_attention(tape, context, xr, cfg.heads)?;
        concept_weights = Some(a);
        let scaled = tape.row_scale(a, y)?;
        let idx: Vec<usize> = sample.pairs.iter().map(|p| p.symbol).collect();
        let spread = tape.scatter_cols(scaled, &idx, width)?;
        probs = tape.add(probs, spread)?;
    }

    Ok(ForwardOutput {
        probs,
        base,
        input,
        context,
        gate_x,
        gate_y,
        coefficients: [cx, cy, cg],
        entity_weights,
        concept_weights,
        self_weights,
        memory_rows,
    })
}

/// Summed negative log-likelihood of the sample's targets under teacher
/// forcing, and the number of scored (non-pad) positions.
pub fn sequence_nll<T: Scalar>(
    tape: &mut Tape<'_, T>,
    cfg: &ModelConfig,
    sample: &Sample,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(Var, usize, ForwardOutput)> {
    if sample.targets.is_empty() {
        return Err(Error::Dataset { record: sample.id.clone(), message: "no caption to train on".into() });
    }
    let out = forward(tape, cfg, sample, &sample.teacher_inputs(), rng)?;
    let rows: Vec<usize> = (0..sample.targets.len()).filter(|&i| sample.targets[i] != PAD).collect();
    let tg: Vec<usize> = rows.iter().map(|&i| sample.targets[i]).collect();
    let kept = tape.gather_rows(out.probs, &rows)?;
    let picked = tape.pick_each(kept, &tg)?;
    let floored = tape.clamp_min(picked, PROB_FLOOR);
    let logs = tape.log(floored);
    let total = tape.sum(logs);
    Ok((tape.scale(total, -1.0), rows.len(), out))
}

/// Copies out one row of a tape value as `f64`.
pub fn row_of<T: Scalar>(tape: &Tape<'_, T>, v: Var, r: usize) -> Vec<f64> {
    tape.value(v).row(r).iter().map(|x| x.as_f64()).collect()
}
