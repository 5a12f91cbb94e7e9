mod manifest;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, ColorChoice, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sensecap::decoder::{DecodeMode, Generation, Model, ModelConfig};
use sensecap::eval::{evaluate, EvalItem};
use sensecap::features::{build_vocabulary, read_jsonl, read_records, write_jsonl, Record, Vocabulary};
use sensecap::kg::{train_transe, FilterConfig, KnowledgeGraph, RelationTaxonomy, TranseConfig, TranseTable};
use sensecap::pipeline::{add_knowledge_tokens, caption_all, prepare_all, sweep_k, vocabulary_tokens};
use sensecap::sample::KnowledgeBase;
use sensecap::synth;
use sensecap::train::{fit, TrainConfig};

use manifest::RunManifest;

const TRAIN_CONFIG_FILE: &str = "train.cfg";
const KNOWLEDGE_FILE: &str = "knowledge.jsonl";

#[derive(Parser, Debug)]
#[command(name = "sensecap", version, about = "Commonsense-aware named-entity news image captioning")]
struct Cli {
    /// key=value training/ablation settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for initialization, shuffling, dropout and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Relation taxonomy: `default`, `division-star` or a file path.
    #[arg(long, global = true, default_value = "default")]
    taxonomy: String,
    #[command(flatten)]
    ablation: Ablation,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
struct Ablation {
    /// Generation only: no entity or concept pathway.
    #[arg(long, global = true)]
    non_commonsense: bool,
    /// Drop the distinguish module and the entity pointer.
    #[arg(long, global = true)]
    non_distinguish: bool,
    /// Drop the enrich module and the concept pointer.
    #[arg(long, global = true)]
    non_enrich: bool,
    /// Use undivided top-k concepts for both modules.
    #[arg(long, global = true)]
    non_division: bool,
    /// Number of leading entities that receive commonsense.
    #[arg(long, global = true)]
    commonsense_entities: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct KnowledgeArgs {
    /// Pre-filtered knowledge (output of `filter`).
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Knowledge graph to filter on the fly.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// TransE table for pruning.
    #[arg(long)]
    transe: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Pruning threshold; defaults to the table's calibrated one.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum SynthKind {
    Memorization,
    Distinguish,
    Enrich,
    Transe,
}

#[derive(Subcommand, Debug, Serialize)]
enum Command {
    /// Parse a triple file and summarize it.
    Ingest {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train TransE embeddings and calibrate the pruning threshold.
    TrainTranse {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Retrieve, prune and divide commonsense for every record entity.
    Filter {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        transe: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a captioning model.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        knowledge: KnowledgeArgs,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        warmup_steps: Option<usize>,
        #[arg(long)]
        dropout: Option<f64>,
        /// Model dimensions: `desk` or `paper`.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Caption every record of a dataset.
    Caption {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        knowledge: KnowledgeArgs,
        /// Beam width; greedy when absent.
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score generated captions against a dataset.
    Eval {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        captions: PathBuf,
        /// Training vocabulary (a checkpoint's vocab.txt) for rare nouns.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Entity scores as a function of how many entities get commonsense.
    SweepK {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        knowledge: KnowledgeArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,10,20,30,40,50")]
        grid: Vec<usize>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a planted synthetic corpus.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        /// Training records (test records for split corpora).
        #[arg(long)]
        records: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Ingest { .. } => "ingest",
            Self::TrainTranse { .. } => "train-transe",
            Self::Filter { .. } => "filter",
            Self::Train { .. } => "train",
            Self::Caption { .. } => "caption",
            Self::Eval { .. } => "eval",
            Self::SweepK { .. } => "sweep-k",
            Self::Synth { .. } => "synth",
        }
    }

    fn out(&self) -> &Path {
        match self {
            Self::Ingest { out, .. }
            | Self::TrainTranse { out, .. }
            | Self::Filter { out, .. }
            | Self::Train { out, .. }
            | Self::Caption { out, .. }
            | Self::Eval { out, .. }
            | Self::SweepK { out, .. }
            | Self::Synth { out, .. } => out,
        }
    }

    fn inputs(&self) -> Vec<PathBuf> {
        let k = |k: &'_ KnowledgeArgs| -> Vec<PathBuf> { [&k.kb, &k.graph, &k.transe].into_iter().flatten().cloned().collect() };
        let mut v: Vec<PathBuf> = match self {
            Self::Ingest { graph, .. } | Self::TrainTranse { graph, .. } => vec![graph.clone()],
            Self::Filter { graph, input, transe, .. } => {
                [Some(graph), Some(input), transe.as_ref()].into_iter().flatten().cloned().collect()
            }
            Self::Train { input, knowledge, .. } => [vec![input.clone()], k(knowledge)].concat(),
            Self::Caption { model, input, knowledge, .. } | Self::SweepK { model, input, knowledge, .. } => {
                [vec![model.clone(), input.clone()], k(knowledge)].concat()
            }
            Self::Eval { input, captions, vocab, .. } => {
                [Some(input), Some(captions), vocab.as_ref()].into_iter().flatten().cloned().collect()
            }
            Self::Synth { .. } => vec![],
        };
        v.dedup();
        v
    }
}

/// Training settings after applying defaults, an optional checkpoint's saved
/// settings, the config file and flags, in increasing precedence.
struct Settings {
    train: TrainConfig,
    sources: BTreeMap<String, &'static str>,
}

impl Settings {
    fn resolve(cli: &Cli, checkpoint: Option<&Path>) -> Result<Self> {
        let mut train = TrainConfig::default();
        let mut sources: BTreeMap<String, &'static str> = train
            .to_text()
            .lines()
            .filter_map(|l| l.split_once('=').map(|(k, _)| (k.to_string(), "default")))
            .collect();
        let mut layer = |train: &mut TrainConfig, path: &Path, label: &'static str| -> Result<()> {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            for key in train.apply_text(&text, &path.display().to_string())? {
                sources.insert(key, label);
            }
            Ok(())
        };
        if let Some(dir) = checkpoint {
            let saved = dir.join(TRAIN_CONFIG_FILE);
            if saved.exists() {
                layer(&mut train, &saved, "checkpoint")?;
            }
        }
        if let Some(path) = &cli.config {
            layer(&mut train, path, "file")?;
        }
        let mut flag = |key: &str, value: String| -> Result<()> {
            train.set(key, &value)?;
            sources.insert(key.to_string(), "flag");
            Ok(())
        };
        if let Some(s) = cli.seed {
            flag("seed", s.to_string())?;
        }
        let a = &cli.ablation;
        for (key, on) in [
            ("non_commonsense", a.non_commonsense),
            ("non_distinguish", a.non_distinguish),
            ("non_enrich", a.non_enrich),
            ("non_division", a.non_division),
        ] {
            if on {
                flag(key, "true".into())?;
            }
        }
        if let Some(k) = a.commonsense_entities {
            flag("commonsense_entities", k.to_string())?;
        }
        if let Command::Train { lr, epochs, batch_size, warmup_steps, dropout, preset, .. } = &cli.command {
            let pairs = [
                ("lr", lr.map(|v| v.to_string())),
                ("epochs", epochs.map(|v| v.to_string())),
                ("batch_size", batch_size.map(|v| v.to_string())),
                ("warmup_steps", warmup_steps.map(|v| v.to_string())),
                ("dropout", dropout.map(|v| v.to_string())),
                ("preset", preset.clone()),
            ];
            for (key, value) in pairs {
                if let Some(v) = value {
                    flag(key, v)?;
                }
            }
        }
        train.validate()?;
        Ok(Self { train, sources })
    }

    fn sources_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.sources).expect("plain map")
    }

    fn record(&self, manifest: &mut RunManifest, config: serde_json::Value) -> Result<()> {
        manifest.seed = self.train.seed;
        manifest.set_config(config, self.sources_json())
    }
}

fn knowledge(
    args: &KnowledgeArgs,
    records: &[Record],
    taxonomy: &str,
    cfg: &ModelConfig,
    checkpoint: Option<&Path>,
) -> Result<KnowledgeBase> {
    if let Some(kb) = &args.kb {
        return KnowledgeBase::load(kb).with_context(|| format!("reading {}", kb.display()));
    }
    if let Some(graph) = &args.graph {
        let graph = KnowledgeGraph::ingest(graph).with_context(|| format!("reading {}", graph.display()))?;
        let table = match &args.transe {
            Some(p) => Some(TranseTable::load(p).with_context(|| format!("reading {}", p.display()))?),
            None => None,
        };
        let taxonomy = RelationTaxonomy::resolve(taxonomy)?;
        let filter = FilterConfig { top_k: args.top_k, threshold: args.threshold };
        let (kb, stats) = KnowledgeBase::build(records, &graph, &taxonomy, table.as_ref(), cfg, &filter)?;
        log::info!("filtered {} entities: {} of {} triples kept", stats.entities, stats.kept, stats.retrieved);
        return Ok(kb);
    }
    if let Some(saved) = checkpoint.map(|d| d.join(KNOWLEDGE_FILE)).filter(|p| p.exists()) {
        log::warn!("no --kb or --graph given; using the knowledge saved with the checkpoint");
        return Ok(KnowledgeBase::load(&saved)?);
    }
    bail!("commonsense knowledge needed: pass --kb or --graph")
}

fn load_model(dir: &Path) -> Result<Model> {
    Model::load(dir).with_context(|| format!("loading model from {}", dir.display()))
}

fn load_records(path: &Path) -> Result<Vec<Record>> {
    read_records(path).with_context(|| format!("reading records from {}", path.display()))
}

fn decode_mode(beam: Option<usize>) -> DecodeMode {
    beam.map_or(DecodeMode::Greedy, DecodeMode::Beam)
}

fn run(cli: &Cli, manifest: &mut RunManifest) -> Result<()> {
    let config_json = |settings: &Settings| {
        serde_json::json!({ "train": settings.train, "args": cli.command, "taxonomy": cli.taxonomy })
    };
    match &cli.command {
        Command::Ingest { graph, out } => {
            let g = KnowledgeGraph::ingest(graph).with_context(|| format!("reading {}", graph.display()))?;
            let summary = serde_json::json!({
                "triples": g.len(),
                "duplicates": g.duplicates(),
                "concepts": g.concepts().len(),
                "relations": g.relations(),
            });
            manifest.set_config(serde_json::json!({ "args": cli.command }), serde_json::Value::Null)?;
            println!("{} triples, {} concepts, {} relations", g.len(), g.concepts().len(), g.relations().len());
            fs::write(out, serde_json::to_vec_pretty(&summary)?)?;
        }
        Command::TrainTranse { graph, out, dim, epochs, margin, lr } => {
            let settings = Settings::resolve(cli, None)?;
            let d = TranseConfig::default();
            let cfg = TranseConfig {
                dim: dim.unwrap_or(d.dim),
                epochs: epochs.unwrap_or(d.epochs),
                margin: margin.unwrap_or(d.margin),
                learning_rate: lr.unwrap_or(d.learning_rate),
                seed: settings.train.seed,
                ..d
            };
            settings.record(manifest, serde_json::json!({ "transe": cfg, "args": cli.command }))?;
            let g = KnowledgeGraph::ingest(graph).with_context(|| format!("reading {}", graph.display()))?;
            let trained = train_transe(&g, &cfg)?;
            println!(
                "threshold {:.4}, holdout accuracy {:.4} over {} triples",
                trained.table.threshold, trained.calibration_accuracy, trained.holdout_triples
            );
            trained.table.save(out)?;
        }
        Command::Filter { graph, input, transe, top_k, threshold, out } => {
            let settings = Settings::resolve(cli, None)?;
            settings.record(manifest, config_json(&settings))?;
            let records = load_records(input)?;
            let args = KnowledgeArgs {
                kb: None,
                graph: Some(graph.clone()),
                transe: transe.clone(),
                top_k: *top_k,
                threshold: *threshold,
            };
            let kb = knowledge(&args, &records, &cli.taxonomy, &ModelConfig::preset(&settings.train.preset)?, None)?;
            println!("{} entities", kb.len());
            kb.save(out)?;
        }
        Command::Train { input, knowledge: kargs, out, .. } => {
            let settings = Settings::resolve(cli, None)?;
            settings.record(manifest, config_json(&settings))?;
            let tc = &settings.train;
            let cfg = ModelConfig { dropout: tc.dropout, ..ModelConfig::preset(&tc.preset)? };
            let records = load_records(input)?;
            let kb = knowledge(kargs, &records, &cli.taxonomy, &cfg, None)?;
            let mut vocab = build_vocabulary(&records);
            add_knowledge_tokens(&mut vocab, &kb);
            let mut model = Model::new(cfg, vocab, tc.seed)?;
            let samples = prepare_all(&records, &kb, &model, &tc.variant, input.parent())?;
            let report = fit(&mut model, &samples, tc, Some(out))?;
            fs::write(out.join(TRAIN_CONFIG_FILE), tc.to_text())?;
            fs::write(out.join("fit.json"), serde_json::to_vec_pretty(&report)?)?;
            kb.save(&out.join(KNOWLEDGE_FILE))?;
            println!("best loss {:.5} after {} steps", report.best_loss, report.steps);
        }
        Command::Caption { model, input, knowledge: kargs, beam, out } => {
            let settings = Settings::resolve(cli, Some(model))?;
            settings.record(manifest, config_json(&settings))?;
            let m = load_model(model)?;
            let records = load_records(input)?;
            let kb = knowledge(kargs, &records, &cli.taxonomy, &m.config, Some(model))?;
            let samples = prepare_all(&records, &kb, &m, &settings.train.variant, input.parent())?;
            let gens = caption_all(&m, &samples, decode_mode(*beam))?;
            write_jsonl(out, &gens)?;
            println!("{} captions", gens.len());
        }
        Command::Eval { input, captions, vocab, out } => {
            manifest.set_config(serde_json::json!({ "args": cli.command }), serde_json::Value::Null)?;
            let records = load_records(input)?;
            let gens: Vec<Generation> =
                read_jsonl(captions).with_context(|| format!("reading captions from {}", captions.display()))?;
            let by_id: HashMap<&str, &Generation> = gens.iter().map(|g| (g.id.as_str(), g)).collect();
            let mut items = Vec::with_capacity(records.len());
            for r in &records {
                let g = by_id.get(r.id.as_str()).with_context(|| format!("no caption for record {}", r.id))?;
                items.push(EvalItem {
                    id: r.id.clone(),
                    candidate: g.tokens(),
                    references: vec![r.caption_tokens()],
                    predicted_entities: g.entities(),
                    gold_entities: r.caption_entities(),
                    article: r.article.clone(),
                });
            }
            let train_vocab = match vocab {
                Some(p) => vocabulary_tokens(&Vocabulary::load(p)?),
                None => {
                    log::warn!("no --vocab given; every entity counts as a rare noun");
                    HashSet::new()
                }
            };
            let report = evaluate(&items, &train_vocab);
            print!("{}", report.to_table());
            fs::write(out, serde_json::to_vec_pretty(&report)?)?;
        }
        Command::SweepK { model, input, knowledge: kargs, grid, beam, out } => {
            let settings = Settings::resolve(cli, Some(model))?;
            settings.record(manifest, config_json(&settings))?;
            if grid.is_empty() {
                bail!("empty --grid");
            }
            let m = load_model(model)?;
            let records = load_records(input)?;
            let kb = knowledge(kargs, &records, &cli.taxonomy, &m.config, Some(model))?;
            let rows = sweep_k(&m, &records, &kb, &settings.train.variant, grid, decode_mode(*beam), input.parent())?;
            println!("{:>4}  {:>8} {:>8} {:>8}  {:>8} {:>8} {:>8}", "K", "P", "R", "F1", "P~", "R~", "F1~");
            for r in &rows {
                println!(
                    "{:>4}  {:>8.4} {:>8.4} {:>8.4}  {:>8.4} {:>8.4} {:>8.4}",
                    r.k,
                    r.entity.precision,
                    r.entity.recall,
                    r.entity.f1,
                    r.normalized.precision,
                    r.normalized.recall,
                    r.normalized.f1
                );
            }
            fs::write(out, serde_json::to_vec_pretty(&serde_json::json!({ "rows": rows }))?)?;
        }
        Command::Synth { kind, records, out } => {
            let settings = Settings::resolve(cli, None)?;
            let seed = settings.train.seed;
            settings.record(manifest, serde_json::json!({ "args": cli.command }))?;
            match kind {
                SynthKind::Memorization => synth::memorization_corpus(records.unwrap_or(32), seed).write(out)?,
                SynthKind::Distinguish => synth::distinguish_corpus(records.unwrap_or(200), 100, seed).write(out)?,
                SynthKind::Enrich => synth::enrich_corpus(records.unwrap_or(120), 50, seed).write(out)?,
                SynthKind::Transe => {
                    fs::create_dir_all(out)?;
                    let triples = synth::planted_graph(records.unwrap_or(200), 80, 3, seed);
                    fs::write(out.join("graph.tsv"), synth::graph_tsv(&triples))?;
                }
            }
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn no_color() -> bool {
    std::env::var_os("NO_COLOR").is_some_and(|v| !v.is_empty())
}

fn main() -> ExitCode {
    let color = if no_color() { ColorChoice::Never } else { ColorChoice::Auto };
    let matches = match <Cli as clap::CommandFactory>::command().color(color).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(2));
        }
    };
    let cli = match <Cli as clap::FromArgMatches>::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    let style = if no_color() || !std::io::stderr().is_terminal() {
        env_logger::WriteStyle::Never
    } else {
        env_logger::WriteStyle::Auto
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).write_style(style).init();

    let seed = cli.seed.unwrap_or_default();
    let mut manifest = match RunManifest::start(cli.command.name(), seed, cli.command.out(), &cli.command.inputs()) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let outcome = run(&cli, &mut manifest);
    if let Err(e) = manifest.finish(&outcome) {
        eprintln!("error: could not finalize the run manifest: {e:#}");
    }
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
