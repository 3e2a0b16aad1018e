//! `strategyseq`: data preparation, training, evaluation and statistics for
//! dialogue strategy labeling.

mod manifest;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use strategyseq::data::{
    bi_transform, load_corpus, load_predictions, strip_bi, synth_corpus, synth_corpus_with,
    synth_features, transition_stats, write_corpus, write_predictions, Corpus, FeatureStore,
    LabelVocabulary, Predictions, Role, SynthCorpus, SynthFeatures, Vocabularies,
};
use strategyseq::metrics::{confusion_matrix, f1_from_confusion, MacroDomain};
use strategyseq::model::{read_snapshot, Variant};
use strategyseq::train::{run_grid, run_variant, EvalReport, Evaluation, TrainConfig};

use manifest::{hash_file, now, Outputs, RunManifest};

#[derive(Parser)]
#[command(name = "strategyseq", version, about = "Persuasion strategy sequence labeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Grid {
    Table4,
    Table5,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Domain {
    GoldPresent,
    Union,
    All,
}

impl From<Domain> for MacroDomain {
    fn from(d: Domain) -> Self {
        match d {
            Domain::GoldPresent => MacroDomain::GoldPresent,
            Domain::Union => MacroDomain::Union,
            Domain::All => MacroDomain::All,
        }
    }
}

#[derive(clap::Args)]
struct VocabArg {
    /// Directory with er.txt and ee.txt; labels must come from these files.
    #[arg(long)]
    vocab_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-validated training of one variant or a comparison grid.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// JSON training config; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "grid")]
        variant: Option<String>,
        #[arg(long, value_enum)]
        grid: Option<Grid>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        bi: bool,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
        /// Omit wall-clock timestamps so identical runs give identical bytes.
        #[arg(long)]
        deterministic: bool,
        #[command(flatten)]
        vocab: VocabArg,
    },
    /// Label-transition counts per dialogue, one CSV per role pair.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "stats")]
        out_dir: PathBuf,
        #[arg(long)]
        deterministic: bool,
        #[command(flatten)]
        vocab: VocabArg,
    },
    /// Rewrite a corpus with B-/I- label prefixes, or strip them again.
    Bi {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        strip: bool,
    },
    /// Planted class-conditional features for a corpus.
    Synth {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1024)]
        dim: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 0.0)]
        success_shift: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Random dialogues over the default label sets.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        dialogues: usize,
        #[arg(long, default_value_t = 6)]
        min_turns: usize,
        #[arg(long, default_value_t = 14)]
        max_turns: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        vocab: VocabArg,
    },
    /// Score a predictions file against gold labels.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_enum, default_value = "gold-present")]
        domain: Domain,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        vocab: VocabArg,
    },
    /// Decode a corpus with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the model's directory, where `train` leaves er.txt/ee.txt.
        #[arg(long)]
        vocab_dir: Option<PathBuf>,
    },
}

/// Bad flags or unusable input files: exit code 2.
#[derive(Debug)]
struct InputError(String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input_err(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use strategyseq::Error as E;
    if e.downcast_ref::<InputError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<E>() {
        Some(
            E::Diverged(_) | E::Shape { .. } | E::NonScalarLoss(_) | E::TapeConsumed | E::MissingGradient(_),
        ) => 1,
        Some(_) => 2,
        None => 1,
    }
}

fn threads() -> Result<usize> {
    match std::env::var("STRATEGYSEQ_THREADS") {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| input_err(format!("STRATEGYSEQ_THREADS={v:?} is not a positive integer")))?;
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring worker threads")?;
            Ok(n)
        }
        Err(_) => Ok(rayon::current_num_threads()),
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(input_err(format!("{what} not found: {}", path.display())));
    }
    Ok(())
}

fn load_vocabs(dir: &Path) -> Result<Vocabularies> {
    let er = dir.join("er.txt");
    let ee = dir.join("ee.txt");
    require_file(&er, "ER vocabulary")?;
    require_file(&ee, "EE vocabulary")?;
    let v = Vocabularies {
        er: LabelVocabulary::load(&er)?,
        ee: LabelVocabulary::load(&ee)?,
    };
    for (role, voc) in [(Role::Er, &v.er), (Role::Ee, &v.ee)] {
        if voc.role() != role {
            return Err(input_err(format!("{} has a {} header", dir.display(), voc.role())));
        }
    }
    Ok(v)
}

fn read_corpus(path: &Path, vocab: Option<&Path>) -> Result<Corpus> {
    require_file(path, "corpus")?;
    let fixed = vocab.map(load_vocabs).transpose()?;
    let c = load_corpus(path, fixed.as_ref())?;
    for w in &c.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(c)
}

fn read_features(path: &Path, corpus: &Corpus) -> Result<FeatureStore> {
    require_file(path, "feature file")?;
    Ok(FeatureStore::load(path, corpus)?)
}

fn parse_variant(s: &str) -> Result<Variant> {
    Variant::parse(s).ok_or_else(|| {
        let known: Vec<&str> = Variant::ALL.iter().map(|v| v.id()).collect();
        input_err(format!("unknown variant {s:?}; expected one of {}", known.join(", ")))
    })
}

fn base_config(path: Option<&Path>) -> Result<TrainConfig> {
    let Some(p) = path else {
        return Ok(TrainConfig::default());
    };
    require_file(p, "config")?;
    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&text).map_err(|e| input_err(format!("{}: {e}", p.display())))
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    corpus_path: &Path,
    features_path: &Path,
    config: Option<&Path>,
    variant: Option<&str>,
    grid: Option<Grid>,
    overrides: (Option<usize>, Option<usize>, Option<u64>, Option<usize>, bool),
    out_dir: &Path,
    deterministic: bool,
    vocab: Option<&Path>,
) -> Result<()> {
    let started = now(deterministic);
    let threads = threads()?;
    let mut cfg = base_config(config)?;
    let (folds, repeats, seed, epochs, bi) = overrides;
    if let Some(v) = variant {
        cfg.variant = parse_variant(v)?;
    }
    if let Some(f) = folds {
        cfg.folds = f;
    }
    if let Some(r) = repeats {
        cfg.repeats = r;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.bi |= bi || matches!(grid, Some(Grid::Table5));
    cfg.validate().map_err(|e| input_err(e.to_string()))?;

    let corpus = read_corpus(corpus_path, vocab)?;
    let features = read_features(features_path, &corpus)?;
    if corpus.len() < cfg.folds {
        return Err(input_err(format!(
            "{} dialogues cannot fill {} folds",
            corpus.len(),
            cfg.folds
        )));
    }
    let mut inputs = vec![hash_file(corpus_path)?, hash_file(features_path)?];
    if let Some(c) = config {
        inputs.push(hash_file(c)?);
    }
    let mut out = Outputs::new(out_dir);
    let resolved = match grid {
        None => {
            let run = run_variant(&cfg, &corpus, &features)?;
            let r = &run.report;
            print!("{}", r.to_text());
            out.add_json("report.json", r)?;
            out.add("report.txt", r.to_text());
            out.add_json("folds.json", &run.outcomes)?;
            for role in Role::ALL {
                out.add(format!("confusion-{role}.csv"), r.role(role).confusion_csv());
            }
            if let Some(snap) = run.snapshot {
                out.add("model.snap", snap);
                let labels = if cfg.bi { bi_transform(&corpus).vocabs } else { corpus.vocabs.clone() };
                out.add("er.txt", labels.er.to_file_string());
                out.add("ee.txt", labels.ee.to_file_string());
            }
            serde_json::to_value(&cfg)?
        }
        Some(g) => {
            let variants: &[Variant] = match g {
                Grid::Table4 => &Variant::ALL,
                Grid::Table5 => &Variant::BI_GRID,
            };
            let cfgs: Vec<TrainConfig> = variants
                .iter()
                .map(|&v| TrainConfig {
                    variant: v,
                    ..cfg.clone()
                })
                .collect();
            let report = run_grid(&cfgs, &corpus, &features)?;
            print!("{}", report.to_text());
            out.add_json("grid.json", &report)?;
            out.add("grid.txt", report.to_text());
            out.add("grid.csv", report.to_csv());
            for r in &report.rows {
                for role in Role::ALL {
                    out.add(format!("confusion-{}-{role}.csv", r.variant), r.role(role).confusion_csv());
                }
            }
            serde_json::to_value(&cfgs)?
        }
    };
    out.write(RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        command: "train".into(),
        config: resolved,
        seed: cfg.seed,
        threads: if deterministic { 0 } else { threads },
        deterministic,
        inputs,
        outputs: Vec::new(),
        started,
        finished: None,
    })
}

fn cmd_stats(corpus_path: &Path, out_dir: &Path, deterministic: bool, vocab: Option<&Path>) -> Result<()> {
    let started = now(deterministic);
    let corpus = read_corpus(corpus_path, vocab)?;
    let stats = transition_stats(&corpus)?;
    let mut out = Outputs::new(out_dir);
    for prev in Role::ALL {
        for next in Role::ALL {
            out.add(
                format!("transitions-{prev}-{next}.csv"),
                stats.to_csv(prev, next, &corpus.vocabs),
            );
        }
    }
    println!(
        "{} dialogues, {} adjacent pairs; wrote {} files to {}",
        stats.dialogue_count,
        stats.total_pairs(),
        out.names().len(),
        out_dir.display()
    );
    out.write(RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        command: "stats".into(),
        config: serde_json::Value::Null,
        seed: 0,
        threads: 1,
        deterministic,
        inputs: vec![hash_file(corpus_path)?],
        outputs: Vec::new(),
        started,
        finished: None,
    })
}

fn cmd_bi(corpus_path: &Path, out: &Path, strip: bool) -> Result<()> {
    let corpus = read_corpus(corpus_path, None)?;
    let rewritten = if strip { strip_bi(&corpus).map_err(|e| input_err(e.to_string()))? } else { bi_transform(&corpus) };
    write_corpus(out, &rewritten)?;
    println!("wrote {} dialogues to {}", rewritten.len(), out.display());
    Ok(())
}

fn cmd_synth(corpus_path: &Path, out: &Path, cfg: SynthFeatures) -> Result<()> {
    let corpus = read_corpus(corpus_path, None)?;
    let fs = synth_features(&corpus, &cfg).map_err(|e| input_err(e.to_string()))?;
    fs.write(out)?;
    println!("wrote {} feature matrices of width {} to {}", fs.len(), fs.dim(), out.display());
    Ok(())
}

fn cmd_synth_corpus(out: &Path, cfg: SynthCorpus, vocab: Option<&Path>) -> Result<()> {
    if cfg.min_turns == 0 || cfg.min_turns > cfg.max_turns {
        return Err(input_err(format!(
            "turn range {}..={} is empty",
            cfg.min_turns, cfg.max_turns
        )));
    }
    let c = match vocab {
        Some(d) => synth_corpus_with(&cfg, load_vocabs(d)?),
        None => synth_corpus(&cfg),
    };
    write_corpus(out, &c)?;
    println!("wrote {} dialogues to {}", c.len(), out.display());
    Ok(())
}

fn score(gold: &Corpus, preds: &Predictions, domain: MacroDomain) -> Result<Evaluation> {
    if preds.entries.len() != gold.len() {
        return Err(input_err(format!(
            "{} predicted dialogues for {} gold dialogues",
            preds.entries.len(),
            gold.len()
        )));
    }
    let mut g: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut p: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (d, (id, labels)) in gold.dialogues.iter().zip(&preds.entries) {
        if &d.id != id || d.len() != labels.len() {
            return Err(input_err(format!(
                "prediction for {id:?} does not line up with gold dialogue {:?}",
                d.id
            )));
        }
        for (u, &y) in d.utterances.iter().zip(labels) {
            g[u.role.index()].push(u.label_id);
            p[u.role.index()].push(y);
        }
    }
    let mut confusion: [Vec<Vec<u64>>; 2] = [Vec::new(), Vec::new()];
    for r in Role::ALL {
        confusion[r.index()] = confusion_matrix(&g[r.index()], &p[r.index()], gold.vocabs.get(r).len())?;
    }
    Ok(Evaluation {
        er: f1_from_confusion(&confusion[0], gold.vocabs.er.names(), domain),
        ee: f1_from_confusion(&confusion[1], gold.vocabs.ee.names(), domain),
        confusion,
        success_accuracy: None,
    })
}

fn cmd_eval(gold: &Path, pred: &Path, domain: MacroDomain, json: bool, vocab: Option<&Path>) -> Result<()> {
    let g = read_corpus(gold, vocab)?;
    require_file(pred, "predictions file")?;
    let preds = load_predictions(pred, &g.vocabs)?;
    let report = EvalReport::single(&pred.display().to_string(), &score(&g, &preds, domain)?);
    if json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_text());
    }
    Ok(())
}

fn cmd_predict(model: &Path, corpus_path: &Path, features_path: &Path, out: &Path, vocab: Option<&Path>) -> Result<()> {
    require_file(model, "model snapshot")?;
    let dir = vocab
        .map(Path::to_path_buf)
        .unwrap_or_else(|| model.parent().unwrap_or(Path::new(".")).to_path_buf());
    let vocabs = load_vocabs(&dir)?;
    let corpus = read_corpus(corpus_path, Some(&dir))?;
    let features = read_features(features_path, &corpus)?;
    let (m, store) = read_snapshot(model)?;
    if m.config().vocab_sizes != vocabs.sizes() {
        return Err(input_err(format!(
            "model expects {:?} labels per role, vocabulary in {} has {:?}",
            m.config().vocab_sizes,
            dir.display(),
            vocabs.sizes()
        )));
    }
    let mut entries = Vec::with_capacity(corpus.len());
    for d in &corpus.dialogues {
        let f = features.get(&d.id).expect("validated");
        entries.push((d.id.clone(), m.predict(&store, &d.roles(), f)?));
    }
    write_predictions(out, &corpus, &Predictions { entries })?;
    println!("wrote predictions for {} dialogues to {}", corpus.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            corpus,
            features,
            config,
            variant,
            grid,
            folds,
            repeats,
            seed,
            epochs,
            bi,
            out_dir,
            deterministic,
            vocab,
        } => cmd_train(
            &corpus,
            &features,
            config.as_deref(),
            variant.as_deref(),
            grid,
            (folds, repeats, seed, epochs, bi),
            &out_dir,
            deterministic,
            vocab.vocab_dir.as_deref(),
        ),
        Command::Stats {
            corpus,
            out_dir,
            deterministic,
            vocab,
        } => cmd_stats(&corpus, &out_dir, deterministic, vocab.vocab_dir.as_deref()),
        Command::Bi { corpus, out, strip } => cmd_bi(&corpus, &out, strip),
        Command::Synth {
            corpus,
            out,
            dim,
            sigma,
            success_shift,
            seed,
        } => cmd_synth(
            &corpus,
            &out,
            SynthFeatures {
                dim,
                sigma,
                success_shift,
                seed,
            },
        ),
        Command::SynthCorpus {
            out,
            dialogues,
            min_turns,
            max_turns,
            seed,
            vocab,
        } => cmd_synth_corpus(
            &out,
            SynthCorpus {
                dialogues,
                min_turns,
                max_turns,
                seed,
                ..SynthCorpus::default()
            },
            vocab.vocab_dir.as_deref(),
        ),
        Command::Eval {
            gold,
            pred,
            domain,
            json,
            vocab,
        } => cmd_eval(&gold, &pred, domain.into(), json, vocab.vocab_dir.as_deref()),
        Command::Predict {
            model,
            corpus,
            features,
            out,
            vocab_dir,
        } => cmd_predict(&model, &corpus, &features, &out, vocab_dir.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
