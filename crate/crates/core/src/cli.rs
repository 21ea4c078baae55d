//! Command-line entry point. Each subcommand delegates to one library
//! operation, writes its outputs atomically and leaves a manifest beside
//! them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::corpus::{load_jsonl, save_jsonl, LoadOptions};
use crate::corpus::synth::{generate, SynthConfig};
use crate::corpus::{Dataset, Document, LabelSpace, Split, SubwordVocab, DEFAULT_MAX_WORDS};
use crate::error::{Error, Result};
use crate::io;
use crate::method::{level_percent, Method};
use crate::metrics::{ablation_report, dataset_agreement, Variant};
use crate::model::DEFAULT_TEMPERATURE;
use crate::rationale::{extract, load_rationales, matched_random_baseline, save_rationales, Rationale};
use crate::rng::{self, Stream};
use crate::study::{self, AssignmentPlan, Gold, Response, SimAnnotator};
use crate::trainer::{self, evaluate, Checkpoint, TrainConfig};

#[derive(Debug, Parser, Serialize)]
#[command(name = "inkwell", version, about = "Length-controllable rationale extraction")]
pub struct Cli {
    /// Root seed; every random stream of the run derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Write a planted-keyword corpus as JSONL.
    Synth(SynthArgs),
    /// Load a JSONL corpus, validate it and write a dataset file.
    Ingest(IngestArgs),
    /// Train one model.
    Train(TrainCmd),
    /// Train one model per length level.
    Sweep(TrainCmd),
    /// Extract rationales from a checkpoint.
    Extract(ExtractArgs),
    /// Random rationales matched to reference rationales.
    RandomBaseline(RandomArgs),
    /// End-task metrics of a checkpoint.
    Eval(EvalArgs),
    /// Token agreement of rationales with annotated evidence.
    Agreement(AgreementArgs),
    /// Train and evaluate ablation variants.
    Ablate(AblateArgs),
    /// Build a study assignment plan.
    PlanStudy(PlanArgs),
    /// Run a study plan with simulated participants.
    SimulateStudy(SimulateArgs),
    /// Analyze study responses.
    AnalyzeStudy(AnalyzeArgs),
    /// Serve a live study over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusKind {
    /// 30-60 words, 1-3 single planted keywords.
    Study,
    /// 30-60 words, 2-4 planted three-word phrases.
    Evidence,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = CorpusKind::Evidence)]
    pub kind: CorpusKind,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// JSONL corpus, one record per line.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated label names.
    #[arg(long, default_value = "positive,negative", value_delimiter = ',')]
    pub labels: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_MAX_WORDS)]
    pub max_words: usize,
    /// Build a subword vocabulary from training words seen at least this
    /// often; rarer words split into pieces. Off when absent.
    #[arg(long)]
    pub subword_min_count: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, default_value = "limitedink")]
    pub method: Method,
    #[arg(long, default_value_t = 0.2)]
    pub length_level: f64,
    #[arg(long, default_value_t = 6)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Continuity weight.
    #[arg(long, default_value_t = 0.5)]
    pub lambda1: f64,
    /// Length-control weight.
    #[arg(long, default_value_t = 0.3)]
    pub lambda2: f64,
    /// Baseline-penalty weight.
    #[arg(long, default_value_t = 1e-4)]
    pub lambda: f64,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    pub temperature: f64,
}

impl TrainArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::new(self.method, self.length_level, seed);
        cfg.epochs = self.epochs;
        cfg.learning_rate = self.learning_rate;
        cfg.batch_size = self.batch_size;
        cfg.weights.lambda = self.lambda;
        cfg.weights.lambda1 = self.lambda1;
        cfg.weights.lambda2 = self.lambda2;
        cfg.sampler.temperature = self.temperature;
        cfg
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainCmd {
    /// Dataset file written by `ingest`.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint file for `train`, directory for `sweep`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// One or more checkpoints; rationales of all are written together.
    #[arg(long, required = true, num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Overrides the checkpoint's own level.
    #[arg(long)]
    pub length_level: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct RandomArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Rationales to match, possibly at several levels.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
}

#[derive(Debug, Args, Serialize)]
pub struct AgreementArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub rationales: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON report; an aligned text table is written beside it.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct PlanArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// When given, only reviews this model classifies correctly are drawn.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub plan: PathBuf,
    /// Rationale files covering both study methods at every level.
    #[arg(long, required = true, num_args = 1..)]
    pub rationales: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = study::DEFAULT_PARTICIPATION)]
    pub participation: f64,
    #[arg(long, default_value_t = 0.5)]
    pub guess_accuracy: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub responses: PathBuf,
    /// JSON report; `.txt` and `.csv` siblings are written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub rationales: Vec<PathBuf>,
    /// Append-only response log, replayed on start.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    invocation: &'a Cli,
    outputs: Vec<String>,
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn write_manifest(cli: &Cli, out: &Path, outputs: &[PathBuf]) -> Result<()> {
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed: cli.seed,
        invocation: cli,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    io::write_json(manifest_path(out), &m)
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path)
}

/// Documents of `ds` by id.
fn doc_index(ds: &Dataset) -> BTreeMap<&str, &Document> {
    ds.documents().map(|(_, d)| (d.id.as_str(), d)).collect()
}

fn load_all_rationales(paths: &[PathBuf]) -> Result<Vec<Rationale>> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(load_rationales(p)?);
    }
    Ok(all)
}

fn study_documents(ds: &Dataset, plan: &AssignmentPlan) -> Result<Vec<Document>> {
    let index = doc_index(ds);
    plan.review_ids()
        .map(|id| {
            index
                .get(id.as_str())
                .map(|d| (*d).clone())
                .ok_or_else(|| Error::UnknownReview(id.clone()))
        })
        .collect()
}

pub fn checkpoint_name(method: Method, level: f64) -> String {
    format!("{}-{}.json", method, level_percent(level))
}

impl Command {
    /// Files the command reads.
    fn inputs(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = Vec::new();
        match self {
            Command::Synth(_) => {}
            Command::Ingest(a) => v.push(&a.data),
            Command::Train(a) | Command::Sweep(a) => v.push(&a.data),
            Command::Extract(a) => {
                v.push(&a.data);
                v.extend(a.checkpoint.iter().map(PathBuf::as_path));
            }
            Command::RandomBaseline(a) => v.extend([a.data.as_path(), &a.reference]),
            Command::Eval(a) => v.extend([a.data.as_path(), &a.checkpoint]),
            Command::Agreement(a) => v.extend([a.data.as_path(), &a.rationales]),
            Command::Ablate(a) => v.push(&a.data),
            Command::PlanStudy(a) => {
                v.push(&a.data);
                v.extend(a.checkpoint.as_deref());
            }
            Command::SimulateStudy(a) => {
                v.extend([a.data.as_path(), &a.plan]);
                v.extend(a.rationales.iter().map(PathBuf::as_path));
            }
            Command::AnalyzeStudy(a) => v.extend([a.data.as_path(), &a.responses]),
            Command::Serve(a) => {
                v.extend([a.data.as_path(), &a.plan]);
                v.extend(a.rationales.iter().map(PathBuf::as_path));
            }
        }
        v
    }
}

/// Runs a parsed command.
pub fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed;
    if let Some(missing) = cli.command.inputs().into_iter().find(|p| !p.exists()) {
        return Err(Error::MissingInput(missing.display().to_string()));
    }
    match &cli.command {
        Command::Synth(a) => {
            let cfg = match a.kind {
                CorpusKind::Study => SynthConfig::study(seed),
                CorpusKind::Evidence => SynthConfig::evidence(seed),
            };
            save_jsonl(&generate(&cfg), &a.out)?;
            write_manifest(cli, &a.out, &[a.out.clone()])
        }
        Command::Ingest(a) => {
            let labels = LabelSpace::new(a.labels.clone())?;
            let mut ds = load_jsonl(
                &a.data,
                &labels,
                &LoadOptions {
                    max_words: a.max_words,
                    tokenizer: None,
                },
            )?;
            if let Some(min) = a.subword_min_count {
                let vocab = SubwordVocab::from_corpus(ds.train.iter().flat_map(|d| d.words.iter().map(String::as_str)), min);
                ds.retokenize(Some(vocab))?;
            }
            ds.validate()?;
            let truncated = ds.documents().filter(|(_, d)| d.truncated).count();
            if truncated > 0 {
                log::warn!("{truncated} documents truncated to {} words", a.max_words);
            }
            io::write_json(&a.out, &ds)?;
            write_manifest(cli, &a.out, &[a.out.clone()])
        }
        Command::Train(a) => {
            let ds = load_dataset(&a.data)?;
            let cfg = a.train.config(seed);
            cfg.validate()?;
            let ckpt = trainer::train(&ds, &cfg)?;
            ckpt.save(&a.out)?;
            log::info!("best validation F1 {:.4} at epoch {:?}", ckpt.best_val_f1, ckpt.best_epoch);
            write_manifest(cli, &a.out, &[a.out.clone()])
        }
        Command::Sweep(a) => {
            let ds = load_dataset(&a.data)?;
            let cfg = a.train.config(seed);
            cfg.validate()?;
            std::fs::create_dir_all(&a.out)?;
            let mut outputs = Vec::new();
            for ckpt in trainer::sweep(&ds, &cfg)? {
                let path = a.out.join(checkpoint_name(ckpt.config.method, ckpt.config.length_level()));
                ckpt.save(&path)?;
                outputs.push(path);
            }
            write_manifest(cli, &a.out.join("sweep"), &outputs)
        }
        Command::Extract(a) => {
            let ds = load_dataset(&a.data)?;
            let docs = ds.split(a.split);
            if docs.is_empty() {
                return Err(Error::EmptySplit(a.split.as_str()));
            }
            let mut all = Vec::new();
            for path in &a.checkpoint {
                let ckpt = Checkpoint::load(path)?;
                let level = a.length_level.unwrap_or(ckpt.config.length_level());
                for d in docs {
                    all.push(extract(&ckpt, d, level)?);
                }
            }
            save_rationales(&a.out, &all)?;
            write_manifest(cli, &a.out, &[a.out.clone()])
        }
        Command::RandomBaseline(a) => {
            let ds = load_dataset(&a.data)?;
            let index = doc_index(&ds);
            let reference = load_rationales(&a.reference)?;
            if reference.is_empty() {
                return Err(Error::EmptyInput("reference rationales"));
            }
            let mut by_level: BTreeMap<u32, Vec<Rationale>> = BTreeMap::new();
            for r in reference {
                by_level.entry(level_percent(r.length_level)).or_default().push(r);
            }
            let mut out = Vec::new();
            for group in by_level.values() {
                let level = group[0].length_level;
                let docs: Vec<&Document> = group
                    .iter()
                    .map(|r| index.get(r.doc_id.as_str()).copied().ok_or_else(|| Error::UnknownDocument(r.doc_id.clone())))
                    .collect::<Result<_>>()?;
                let draws = matched_random_baseline(&docs, group, level, seed)?;
                let reduced = draws.iter().filter(|d| d.reduced()).count();
                if reduced > 0 {
                    log::warn!("{reduced} documents at {}% could not fit the requested segment count", level_percent(level));
                }
                out.extend(draws.into_iter().map(|d| d.rationale));
            }
            save_rationales(&a.out, &out)?;
            write_manifest(cli, &a.out, &[a.out.clone()])
        }
        Command::Eval(a) => {
            let ds = load_dataset(&a.data)?;
            let ckpt = Checkpoint::load(&a.checkpoint)?;
            let report = evaluate(&ckpt, ds.split(a.split))?;
            io::write_json(&a.out, &report)?;
            write_manifest(cli, &a.out, &[a.out.clone()])
        }
        Command::Agreement(a) => {
            let ds = load_dataset(&a.data)?;
            let rs = load_rationales(&a.rationales)?;
            let report = dataset_agreement(&rs, &ds)?;
            io::write_json(&a.out, &report)?;
            write_manifest(cli, &a.out, &[a.out.clone()])
        }
        Command::Ablate(a) => {
            let ds = load_dataset(&a.data)?;
            let cfg = a.train.config(seed);
            cfg.validate()?;
            let report = ablation_report(&ds, &cfg, &Variant::ALL)?;
            let text = with_extension(&a.out, "txt");
            io::write_json(&a.out, &report)?;
            io::write_atomic(&text, report.to_text().as_bytes())?;
            write_manifest(cli, &a.out, &[a.out.clone(), text])
        }
        Command::PlanStudy(a) => {
            let ds = load_dataset(&a.data)?;
            let docs = ds.split(a.split);
            let predictions: Vec<usize> = match &a.checkpoint {
                Some(p) => {
                    let ckpt = Checkpoint::load(p)?;
                    docs.iter()
                        .map(|d| trainer::predict(&ckpt.model, ckpt.config.method, ckpt.config.length_level(), d))
                        .collect::<Result<_>>()?
                }
                None => docs.iter().map(|d| d.label).collect(),
            };
            let mut rng = rng::stream(seed, Stream::Plan);
            let reviews = study::sample_reviews(docs, &predictions, study::N_REVIEWS, &mut rng)?;
            let ids: Vec<String> = reviews.iter().map(|d| d.id.clone()).collect();
            let plan = study::build_plan(&ids, &study::default_worker_ids(), &mut rng)?;
            io::write_json(&a.out, &plan)?;
            write_manifest(cli, &a.out, &[a.out.clone()])
        }
        Command::SimulateStudy(a) => {
            let ds = load_dataset(&a.data)?;
            let plan: AssignmentPlan = io::read_json(&a.plan)?;
            let docs = study_documents(&ds, &plan)?;
            let rationales = load_all_rationales(&a.rationales)?;
            let mut annotator = SimAnnotator::planted();
            annotator.labels = ds.labelspace.clone();
            annotator.participation = a.participation;
            annotator.guess_accuracy = a.guess_accuracy;
            let responses = study::simulate(&plan, &docs, &rationales, &annotator, seed)?;
            io::write_jsonl(&a.out, &responses)?;
            write_manifest(cli, &a.out, &[a.out.clone()])
        }
        Command::AnalyzeStudy(a) => {
            let ds = load_dataset(&a.data)?;
            let responses: Vec<Response> = io::read_jsonl(&a.responses)?;
            let gold = Gold::from_documents(ds.labelspace.clone(), ds.documents().map(|(_, d)| d));
            let report = study::analyze(&responses, &gold)?;
            let text = with_extension(&a.out, "txt");
            let csv = with_extension(&a.out, "csv");
            io::write_json(&a.out, &report)?;
            io::write_atomic(&text, report.to_text().as_bytes())?;
            io::write_atomic(&csv, report.to_csv().as_bytes())?;
            write_manifest(cli, &a.out, &[a.out.clone(), text, csv])
        }
        Command::Serve(a) => {
            let ds = load_dataset(&a.data)?;
            let plan: AssignmentPlan = io::read_json(&a.plan)?;
            let data = crate::server::StudyData {
                documents: study_documents(&ds, &plan)?,
                rationales: load_all_rationales(&a.rationales)?,
                labels: ds.labelspace.clone(),
                render_seed: rng::derive(seed, Stream::Render as u64),
                plan,
            };
            write_manifest(cli, &a.log, &[a.log.clone()])?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(crate::server::serve(data, &a.log, a.port))
        }
    }
}

/// Machine-readable one-line error.
pub fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": message, "kind": kind }).to_string()
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return 2;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            1
        }
    }
}
