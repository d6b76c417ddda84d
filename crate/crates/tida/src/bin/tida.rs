//! Command-line front end: detect -> augment -> evaluate -> probe -> report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use tida::augment::{
    build_all, build_random_baseline, build_targeted, AugmentContext, DatasetManifest,
    FailureReport,
};
use tida::corpus::{filter_by_skill, load_karpathy, Dataset, Split};
use tida::genclient::{Backend, RemoteBackend, RetryPolicy, StubBackend};
use tida::metrics::{
    bleu_corpus, skill_confusion, skill_prf, EvalPair, EvalReport, ReportFormat,
};
use tida::perturb::{GenderDirection, PerturbOptions};
use tida::probe::{build_probe_dataset, train_probe, Activation, ProbeConfig, SplitIndices};
use tida::skills::{Skill, SkillLexicon};
use tida::TidaError;

#[derive(Parser)]
#[command(name = "tida", about = "Targeted data augmentation for image captioning")]
struct Cli {
    /// TOML config file; command-line flags win over its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count and index skill-bearing captions in a corpus split.
    Detect(DetectArgs),
    /// Build an augmented training manifest.
    Augment(AugmentArgs),
    /// Score candidate captions with BLEU and skill-word confusion.
    Evaluate(EvaluateArgs),
    /// Train a skill probe on frozen image embeddings.
    Probe(ProbeArgs),
}

#[derive(Args)]
struct CorpusArgs {
    /// Karpathy split JSON file.
    #[arg(long)]
    corpus: PathBuf,
    /// Caption source file; defaults to the corpus file itself.
    #[arg(long)]
    captions: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    split: String,
    /// Lexicon override file (TOML or JSON).
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    skill: Skill,
    /// Write the (image_id, ref_index) match index as JSONL here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// gender, color, counting, all, or random.
    #[arg(long)]
    skill: String,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Directory receiving generated images and the batch journal.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Manifest output path; defaults to <out-dir>/manifest.jsonl.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Replace only the first matched occurrence per caption.
    #[arg(long)]
    replace_first_only: bool,
    /// Also map female gender forms to male counterparts.
    #[arg(long)]
    symmetric_gender: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Candidate captions: JSONL of {"image_id", "caption"}.
    #[arg(long)]
    candidates: PathBuf,
    /// Comma-separated skills for the confusion analysis.
    #[arg(long, default_value = "gender,color,counting")]
    skills: String,
    #[arg(long)]
    format: Option<String>,
    /// Model name used as the report row label.
    #[arg(long, default_value = "model")]
    model: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Embeddings file: JSONL or the self-describing binary layout.
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    skill: Skill,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated hidden-size grid.
    #[arg(long)]
    hidden_sizes: Option<String>,
    /// Comma-separated learning-rate grid.
    #[arg(long)]
    learning_rates: Option<String>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// TOML mirror of the command-line flags; flags win over file values.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct FileConfig {
    seed: Option<u64>,
    budget: Option<usize>,
    backend: Option<String>,
    endpoint: Option<String>,
    max_in_flight: Option<usize>,
    out_dir: Option<PathBuf>,
    format: Option<String>,
    lexicon: Option<PathBuf>,
    hidden_sizes: Option<Vec<usize>>,
    learning_rates: Option<Vec<f64>>,
    patience: Option<usize>,
    max_epochs: Option<usize>,
    batch_size: Option<usize>,
    activation: Option<String>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self, TidaError> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| TidaError::Io(format!("{}: {e}", p.display())))?;
                toml::from_str(&text)
                    .map_err(|e| TidaError::Config(format!("{}: {e}", p.display())))
            }
        }
    }
}

fn load_lexicon(args: &CorpusArgs, cfg: &FileConfig) -> Result<SkillLexicon, TidaError> {
    match args.lexicon.as_ref().or(cfg.lexicon.as_ref()) {
        Some(path) => SkillLexicon::load(path),
        None => Ok(SkillLexicon::default()),
    }
}

fn load_corpus(args: &CorpusArgs) -> Result<Dataset, TidaError> {
    let split = Split::parse(&args.split)?;
    let captions = args.captions.as_ref().unwrap_or(&args.corpus);
    load_karpathy(&args.corpus, captions, split)
}

fn cmd_detect(args: &DetectArgs, cfg: &FileConfig) -> Result<(), TidaError> {
    let lexicon = load_lexicon(&args.corpus, cfg)?;
    let dataset = load_corpus(&args.corpus)?;
    let subset = filter_by_skill(&dataset, args.skill, &lexicon)?;
    println!(
        "skill={} images_matched={} captions_matched={} images_total={} captions_total={}",
        args.skill,
        subset.dataset.image_count(),
        subset.matched.len(),
        dataset.image_count(),
        dataset.caption_count(),
    );
    if let Some(out) = &args.out {
        let mut lines = String::new();
        for (image_id, ref_index) in &subset.matched {
            lines.push_str(&serde_json::to_string(&serde_json::json!({
                "image_id": image_id,
                "ref_index": ref_index,
            })).expect("json"));
            lines.push('\n');
        }
        std::fs::write(out, lines).map_err(|e| TidaError::Io(e.to_string()))?;
    }
    Ok(())
}

fn cmd_augment(args: &AugmentArgs, cfg: &FileConfig) -> Result<(), TidaError> {
    let lexicon = load_lexicon(&args.corpus, cfg)?;
    let train = load_corpus(&args.corpus)?;
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let budget = args.budget.or(cfg.budget).unwrap_or(0);
    let backend_name = args
        .backend
        .clone()
        .or_else(|| cfg.backend.clone())
        .unwrap_or_else(|| "stub".to_string());
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("tida-out"));
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| out_dir.join("manifest.jsonl"));
    let max_in_flight = args.max_in_flight.or(cfg.max_in_flight).unwrap_or(8);

    let stub;
    let remote;
    let backend: &dyn Backend = match backend_name.as_str() {
        "stub" => {
            stub = StubBackend::new();
            &stub
        }
        "remote" => {
            let endpoint = args
                .endpoint
                .clone()
                .or_else(|| cfg.endpoint.clone())
                .ok_or_else(|| TidaError::Config("remote backend requires --endpoint".into()))?;
            remote = RemoteBackend::new(endpoint, Duration::from_secs(120))?;
            &remote
        }
        other => return Err(TidaError::Config(format!("unknown backend: {other}"))),
    };

    let ctx = AugmentContext {
        backend,
        out_dir: out_dir.join("images"),
        journal_path: out_dir.join("journal.jsonl"),
        max_in_flight,
        retry: RetryPolicy::default(),
        lexicon: &lexicon,
        perturb_opts: PerturbOptions {
            replace_all: !args.replace_first_only,
            gender_direction: if args.symmetric_gender {
                GenderDirection::Symmetric
            } else {
                GenderDirection::MaleToFemale
            },
        },
    };

    let (manifest, failures): (DatasetManifest, FailureReport) = match args.skill.as_str() {
        "all" => build_all(
            &train,
            [
                (Skill::Gender, budget),
                (Skill::Color, budget),
                (Skill::Counting, budget),
            ],
            &ctx,
            seed,
        )?,
        "random" => build_random_baseline(&train, budget, &ctx, seed)?,
        other => build_targeted(&train, other.parse()?, budget, &ctx, seed)?,
    };

    std::fs::create_dir_all(&out_dir).map_err(|e| TidaError::Io(e.to_string()))?;
    let file = std::fs::File::create(&manifest_path)
        .map_err(|e| TidaError::Io(format!("{}: {e}", manifest_path.display())))?;
    manifest.write(file)?;
    println!(
        "manifest={} rows={} augmented={} failures={}",
        manifest_path.display(),
        manifest.rows.len(),
        manifest.budget_used,
        failures.failures.len(),
    );
    if !failures.failures.is_empty() {
        let report_path = out_dir.join("failures.json");
        let json = serde_json::to_string_pretty(&failures).expect("failure report serializes");
        std::fs::write(&report_path, json).map_err(|e| TidaError::Io(e.to_string()))?;
        return Err(TidaError::Generation(format!(
            "{} generation failures, report at {}",
            failures.failures.len(),
            report_path.display()
        )));
    }
    Ok(())
}

#[derive(Deserialize)]
struct CandidateRow {
    image_id: String,
    caption: String,
}

fn cmd_evaluate(args: &EvaluateArgs, cfg: &FileConfig) -> Result<(), TidaError> {
    let lexicon = load_lexicon(&args.corpus, cfg)?;
    let dataset = load_corpus(&args.corpus)?;
    let text = std::fs::read_to_string(&args.candidates)
        .map_err(|e| TidaError::Io(format!("{}: {e}", args.candidates.display())))?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: CandidateRow = serde_json::from_str(line).map_err(|e| TidaError::Parse {
            offset: 0,
            line: lineno + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        let refs: Vec<String> = dataset
            .captions_of(&row.image_id)
            .iter()
            .map(|c| c.text.clone())
            .collect();
        if refs.is_empty() {
            return Err(TidaError::Integrity(format!(
                "candidate references unknown image: {}",
                row.image_id
            )));
        }
        pairs.push(EvalPair {
            image_id: row.image_id,
            candidate: row.caption,
            references: refs,
        });
    }
    if pairs.is_empty() {
        return Err(TidaError::Integrity("no candidate captions".into()));
    }

    let skills: Vec<Skill> = args
        .skills
        .split(',')
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<_, _>>()?;

    let bleu = bleu_corpus(&pairs)?;
    let prf = skills
        .iter()
        .map(|&s| (s, skill_prf(&skill_confusion(&pairs, s, &lexicon))))
        .collect();
    let report = EvalReport {
        model: args.model.clone(),
        bleu: vec![(args.corpus.split.clone(), bleu)],
        prf,
    };
    let format = match args
        .format
        .clone()
        .or_else(|| cfg.format.clone())
        .unwrap_or_else(|| "markdown".into())
        .as_str()
    {
        "csv" => ReportFormat::Csv,
        "markdown" => ReportFormat::Markdown,
        other => return Err(TidaError::Config(format!("unknown format: {other}"))),
    };
    let rendered = tida::metrics::emit_report(std::slice::from_ref(&report), format);
    match &args.out {
        Some(path) => std::fs::write(path, rendered).map_err(|e| TidaError::Io(e.to_string()))?,
        None => print!("{rendered}"),
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, TidaError> {
    s.split(',')
        .filter(|x| !x.is_empty())
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| TidaError::Config(format!("bad {what} entry: {x}")))
        })
        .collect()
}

fn cmd_probe(args: &ProbeArgs, cfg: &FileConfig) -> Result<(), TidaError> {
    let lexicon = load_lexicon(&args.corpus, cfg)?;
    let mut config = ProbeConfig {
        seed: args.seed.or(cfg.seed).unwrap_or(0),
        ..ProbeConfig::default()
    };
    if let Some(h) = &args.hidden_sizes {
        config.hidden_sizes = parse_list(h, "hidden size")?;
    } else if let Some(h) = &cfg.hidden_sizes {
        config.hidden_sizes = h.clone();
    }
    if let Some(l) = &args.learning_rates {
        config.learning_rates = parse_list(l, "learning rate")?;
    } else if let Some(l) = &cfg.learning_rates {
        config.learning_rates = l.clone();
    }
    if let Some(p) = args.patience.or(cfg.patience) {
        config.patience = p;
    }
    if let Some(m) = args.max_epochs.or(cfg.max_epochs) {
        config.max_epochs = m;
    }
    if let Some(b) = args.batch_size.or(cfg.batch_size) {
        config.batch_size = b;
    }
    if let Some(a) = args.activation.as_ref().or(cfg.activation.as_ref()) {
        config.activation = match a.as_str() {
            "relu" => Activation::Relu,
            "identity" => Activation::Identity,
            other => return Err(TidaError::Config(format!("unknown activation: {other}"))),
        };
    }

    // the three corpus splits supply the probe's train/val/test partition
    let captions = args.corpus.captions.as_ref().unwrap_or(&args.corpus.corpus);
    let mut embeddings = Vec::new();
    let mut labels = BTreeMap::new();
    let mut split_indices = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for split in [Split::Train, Split::Val, Split::Test] {
        let dataset = load_karpathy(&args.corpus.corpus, captions, split)?;
        if dataset.image_count() == 0 {
            continue;
        }
        let (embs, labs) = build_probe_dataset(&dataset, args.skill, &lexicon, &args.embeddings)?;
        let indices: Vec<usize> = (embeddings.len()..embeddings.len() + embs.len()).collect();
        match split {
            Split::Train => split_indices.train = indices,
            Split::Val => split_indices.val = indices,
            Split::Test => split_indices.test = indices,
        }
        embeddings.extend(embs);
        labels.extend(labs);
    }
    let labels: std::collections::HashMap<String, u8> = labels.into_iter().collect();

    let result = train_probe(&embeddings, &labels, &config, &split_indices)?;
    let json = serde_json::to_string_pretty(&result).expect("result serializes");
    if let Some(path) = &args.out {
        std::fs::write(path, &json).map_err(|e| TidaError::Io(e.to_string()))?;
    }
    println!("{json}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match FileConfig::load(cli.config.as_deref()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Detect(args) => cmd_detect(args, &cfg),
        Command::Augment(args) => cmd_augment(args, &cfg),
        Command::Evaluate(args) => cmd_evaluate(args, &cfg),
        Command::Probe(args) => cmd_probe(args, &cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
