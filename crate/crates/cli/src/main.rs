//! `ufin` command line: synthetic data, preparation, prompt rendering,
//! text encoding, teacher pretraining, training, evaluation and export.

mod config;

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ufin::data::synth::{self, Labeling};
use ufin::data::{self as data, DomainDataset, InstanceRecord, Schema, Split};
use ufin::encoder::{EmbeddingCache, HashEncoder};
use ufin::eval::{EvalMode, EvalReport};
use ufin::model::{EncoderSpec, Featurizer, Mode, UfinModel};
use ufin::pipeline::{self, StudentSpec};
use ufin::prompting::{PhraseBook, PromptTemplate, PromptVariant};
use ufin::training::{pretrain_teachers, TeacherModel};

use config::{Backend, RunConfig};

/// Bad flags, config or a refused overwrite; exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

const PHRASES_FILE: &str = "prompts.json";

#[derive(Parser, Debug)]
#[command(
    name = "ufin",
    version,
    about = "Multi-domain CTR prediction from text-derived universal features"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; flags override its keys.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Root seed; every stage derives its own seed from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replace outputs that already exist.
    #[arg(long, global = true)]
    overwrite: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-domain dataset.
    Synth(SynthArgs),
    /// Split a labelled TSV file into per-domain train/valid/test.
    Prepare(PrepareArgs),
    /// Dump prompts as TSV (row_id, prompt).
    Render(RenderArgs),
    /// Write a UFEC cache with the hash encoder, or validate an existing one.
    Encode(EncodeArgs),
    /// Train one teacher per domain.
    PretrainTeachers(TeacherArgs),
    /// Train the student model.
    Train(TrainArgs),
    /// Score a split with a trained model.
    Evaluate(EvaluateArgs),
    /// Score domains the model never saw in training.
    Zeroshot(ZeroshotArgs),
    /// Write the universal features of a split as CSV.
    ExportFeatures(ExportArgs),
}

#[derive(Args, Debug)]
struct DataArg {
    /// Prepared dataset directory [default: paths.data].
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PromptArgs {
    /// Prompt variant: base, prompt1, prompt2 or prompt3.
    #[arg(long)]
    prompt: Option<PromptVariant>,
    /// Field left out of the prompt (implies prompt3); repeatable.
    #[arg(long = "drop-field", value_name = "FIELD")]
    drop_fields: Vec<String>,
}

impl PromptArgs {
    fn apply(&self, base: &PromptTemplate) -> PromptTemplate {
        let mut t = base.clone();
        if let Some(v) = self.prompt {
            t.variant = v;
        }
        if !self.drop_fields.is_empty() {
            t.variant = PromptVariant::Prompt3;
            t.drop_fields = self.drop_fields.clone();
        }
        t
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory [default: paths.data].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    domains: Option<usize>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    items: Option<usize>,
    /// Interactions per domain.
    #[arg(long)]
    interactions: Option<usize>,
    /// Label each row by a coin flip on its true probability (bernoulli) or by thresholding it at 0.5 (threshold).
    #[arg(long)]
    labeling: Option<LabelingArg>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum LabelingArg {
    Bernoulli,
    Threshold,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// Labelled rows: domain_id, row_id, label, then one column per field.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// JSON list of fields.
    #[arg(long, value_name = "FILE")]
    schema: PathBuf,
    /// Output directory [default: paths.data].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// The label column holds 1-5 ratings: 4-5 are clicks, 1-2 are not, 3 is dropped.
    #[arg(long)]
    ratings: bool,
    /// Skip malformed rows (reported on stderr) instead of failing.
    #[arg(long)]
    lenient: bool,
    /// Phrase book (JSON) copied next to the data for rendering prompts.
    #[arg(long, value_name = "FILE")]
    phrases: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[command(flatten)]
    data: DataArg,
    /// Output TSV [default: <paths.reports>/prompts.tsv].
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Splits to render; all when omitted. Repeatable.
    #[arg(long)]
    split: Vec<Split>,
    /// Domains to render; all when omitted. Repeatable.
    #[arg(long)]
    domain: Vec<usize>,
    #[command(flatten)]
    prompt: PromptArgs,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[command(flatten)]
    data: DataArg,
    /// Output cache [default: paths.cache].
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Vector width [default: model.d_v].
    #[arg(long)]
    dim: Option<usize>,
    /// Check an externally produced cache against the data instead of writing one.
    #[arg(long, value_name = "FILE", conflicts_with = "out")]
    validate: Option<PathBuf>,
    #[command(flatten)]
    prompt: PromptArgs,
}

#[derive(Args, Debug)]
struct OptimArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Early-stopping patience in epochs.
    #[arg(long)]
    patience: Option<usize>,
}

impl OptimArgs {
    fn apply(&self, c: &mut ufin::training::TrainConfig) {
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.weight_decay {
            c.weight_decay = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.patience {
            c.patience = v;
        }
    }
}

#[derive(Args, Debug)]
struct TeacherArgs {
    #[command(flatten)]
    data: DataArg,
    /// Output directory [default: paths.teachers].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Domains to pretrain; all when omitted. Repeatable.
    #[arg(long)]
    domain: Vec<usize>,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArg,
    /// Teacher checkpoints [default: paths.teachers].
    #[arg(long, value_name = "DIR")]
    teachers: Option<PathBuf>,
    /// Output checkpoint [default: paths.model].
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Training history CSV [default: <paths.reports>/history.csv].
    #[arg(long, value_name = "FILE")]
    history: Option<PathBuf>,
    /// ufin_t (text only) or ufin_t+f (text plus feature adaptor).
    #[arg(long)]
    mode: Option<Mode>,
    /// Train on labels only, without teacher guidance.
    #[arg(long)]
    no_distill: bool,
    /// Text vectors from the hash encoder or from the UFEC cache.
    #[arg(long)]
    backend: Option<Backend>,
    /// UFEC cache used with `--backend cache` [default: paths.cache].
    #[arg(long, value_name = "FILE")]
    cache: Option<PathBuf>,
    /// Training domains; all when omitted. Repeatable.
    #[arg(long)]
    domain: Vec<usize>,
    /// Pretrained checkpoint whose matching parameters initialise the model.
    #[arg(long, value_name = "FILE")]
    init: Option<PathBuf>,
    /// Text vector width d_V.
    #[arg(long)]
    d_v: Option<usize>,
    #[command(flatten)]
    optim: OptimArgs,
    #[command(flatten)]
    prompt: PromptArgs,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[command(flatten)]
    data: DataArg,
    /// Trained checkpoint [default: paths.model].
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Domains to score. Repeatable.
    #[arg(long)]
    domain: Vec<usize>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    score: ScoreArgs,
    /// in-domain, or cross-platform for a model fine-tuned from another platform.
    #[arg(long, default_value = "in-domain")]
    mode: EvalMode,
    /// JSON report [default: <paths.reports>/<mode>_<split>.json].
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ZeroshotArgs {
    #[command(flatten)]
    score: ScoreArgs,
    /// JSON report [default: <paths.reports>/zero-shot_<split>.json].
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[command(flatten)]
    score: ScoreArgs,
    /// Output CSV [default: <paths.reports>/universal_<split>.csv].
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(err) = cause.downcast_ref::<ufin::Error>() {
            return match err {
                ufin::Error::NonFiniteLoss { .. } | ufin::Error::OrderOverflow { .. } => 3,
                _ => 2,
            };
        }
    }
    2
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.common.config.as_deref())?;
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    let ow = cli.common.overwrite;
    match cli.command {
        Command::Synth(a) => cmd_synth(&mut cfg, a, ow),
        Command::Prepare(a) => cmd_prepare(&cfg, a, ow),
        Command::Render(a) => cmd_render(&cfg, a, ow),
        Command::Encode(a) => cmd_encode(&cfg, a, ow),
        Command::PretrainTeachers(a) => cmd_teachers(&mut cfg, a, ow),
        Command::Train(a) => cmd_train(&mut cfg, a, ow),
        Command::Evaluate(a) => cmd_evaluate(&cfg, a, ow),
        Command::Zeroshot(a) => cmd_zeroshot(&cfg, a, ow),
        Command::ExportFeatures(a) => cmd_export(&cfg, a, ow),
    }
}

/// Refuse to clobber `path` unless `--overwrite`.
fn guard(path: &Path, overwrite: bool) -> Result<()> {
    if path.exists() && !overwrite {
        return Err(usage(format!(
            "{} already exists; pass --overwrite to replace it",
            path.display()
        )));
    }
    Ok(())
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn data_dir(cfg: &RunConfig, a: &DataArg) -> PathBuf {
    a.data.clone().unwrap_or_else(|| cfg.paths.data.clone())
}

struct Loaded {
    schema: Schema,
    datasets: Vec<DomainDataset>,
    book: PhraseBook,
}

fn load_data(dir: &Path) -> Result<Loaded> {
    if !dir.exists() {
        return Err(ufin::Error::MissingPath(dir.to_path_buf()).into());
    }
    let (schema, datasets) =
        data::load_datasets(dir).with_context(|| format!("loading {}", dir.display()))?;
    let phrases = dir.join(PHRASES_FILE);
    let book = if phrases.exists() {
        PhraseBook::load(&phrases)?
    } else {
        PhraseBook::default()
    };
    Ok(Loaded {
        schema,
        datasets,
        book,
    })
}

/// Datasets restricted to `wanted` (all when empty); unknown ids are an error.
fn select(datasets: &[DomainDataset], wanted: &[usize]) -> Result<Vec<DomainDataset>> {
    let have: BTreeSet<usize> = datasets.iter().map(|d| d.domain_id).collect();
    if let Some(d) = wanted.iter().find(|d| !have.contains(d)) {
        return Err(ufin::Error::UnknownDomain(*d).into());
    }
    Ok(datasets
        .iter()
        .filter(|d| wanted.is_empty() || wanted.contains(&d.domain_id))
        .cloned()
        .collect())
}

fn cmd_synth(cfg: &mut RunConfig, a: SynthArgs, ow: bool) -> Result<()> {
    let out = a.out.unwrap_or_else(|| cfg.paths.data.clone());
    let s = &mut cfg.synth;
    if let Some(v) = a.domains {
        s.n_domains = v;
    }
    if let Some(v) = a.users {
        s.n_users = v;
    }
    if let Some(v) = a.items {
        s.n_items = v;
    }
    if let Some(v) = a.interactions {
        s.n_interactions = v;
    }
    if let Some(l) = a.labeling {
        s.labeling = match l {
            LabelingArg::Bernoulli => Labeling::Bernoulli,
            LabelingArg::Threshold => Labeling::Threshold,
        };
    }
    s.validate().map_err(|e| usage(e.to_string()))?;
    guard(&out.join(data::tsv::SCHEMA_FILE), ow)?;
    let generated = synth::generate(s, cfg.seed)?;
    data::save_datasets(&out, &generated.schema, &generated.datasets)?;
    PhraseBook::synthetic(&generated.item_nouns).save(&out.join(PHRASES_FILE))?;
    for ds in &generated.datasets {
        println!(
            "domain {}: {} train, {} valid, {} test rows",
            ds.domain_id,
            ds.train.len(),
            ds.valid.len(),
            ds.test.len()
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

/// Rows with a 1-5 rating in the label column, relabelled to 0/1.
fn relabel_ratings(text: &str, origin: &Path) -> Result<String> {
    let mut lines = text.lines();
    let header = lines.next().context("empty input")?;
    let label_col = header
        .split('\t')
        .position(|h| h == "label")
        .ok_or_else(|| ufin::Error::MissingColumn("label".into()))?;
    let mut out = String::with_capacity(text.len());
    out.push_str(header);
    out.push('\n');
    for (i, line) in lines.enumerate() {
        let mut cells: Vec<&str> = line.split('\t').collect();
        let Some(cell) = cells.get(label_col) else {
            // left for the record parser to report
            out.push_str(line);
            out.push('\n');
            continue;
        };
        let rating: i64 = cell.trim().parse().map_err(|_| ufin::Error::Parse {
            path: origin.display().to_string(),
            line: i + 2,
            message: format!("bad rating `{cell}`"),
        })?;
        let label = data::map_rating_to_label(rating).map_err(|e| ufin::Error::Parse {
            path: origin.display().to_string(),
            line: i + 2,
            message: e.to_string(),
        })?;
        if let Some(y) = label {
            let y = y.to_string();
            cells[label_col] = &y;
            out.push_str(&cells.join("\t"));
            out.push('\n');
        }
    }
    Ok(out)
}

fn cmd_prepare(cfg: &RunConfig, a: PrepareArgs, ow: bool) -> Result<()> {
    let out = a.out.unwrap_or_else(|| cfg.paths.data.clone());
    let schema = Schema::load(&a.schema)?;
    if !a.input.exists() {
        return Err(ufin::Error::MissingPath(a.input.clone()).into());
    }
    guard(&out.join(data::tsv::SCHEMA_FILE), ow)?;
    let mut text =
        fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    if a.ratings {
        text = relabel_ratings(&text, &a.input)?;
    }
    let report = data::read_records(
        text.as_bytes(),
        &a.input.display().to_string(),
        &schema,
        a.lenient,
    )?;
    for (line, msg) in &report.skipped {
        eprintln!("{}:{line}: skipped: {msg}", a.input.display());
    }
    let mut by_domain: std::collections::BTreeMap<usize, Vec<InstanceRecord>> = Default::default();
    for r in report.records {
        by_domain.entry(r.domain_id).or_default().push(r);
    }
    if by_domain.is_empty() {
        bail!(ufin::Error::InvalidArgument("no usable rows".into()));
    }
    let split_seed = pipeline::stage_seed(cfg.seed, "split");
    let mut datasets = Vec::new();
    for (d, records) in by_domain {
        let (train, valid, test) =
            data::split(records, split_seed ^ d as u64).with_context(|| format!("domain {d}"))?;
        datasets.push(DomainDataset {
            domain_id: d,
            schema: schema.clone(),
            train,
            valid,
            test,
            oracle: Default::default(),
        });
    }
    data::save_datasets(&out, &schema, &datasets)?;
    if let Some(p) = &a.phrases {
        PhraseBook::load(p)?.save(&out.join(PHRASES_FILE))?;
    }
    for ds in &datasets {
        println!(
            "domain {}: {} train, {} valid, {} test rows",
            ds.domain_id,
            ds.train.len(),
            ds.valid.len(),
            ds.test.len()
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn render_rows<'a>(datasets: &'a [DomainDataset], splits: &[Split]) -> Vec<&'a InstanceRecord> {
    let splits: Vec<Split> = if splits.is_empty() {
        Split::ALL.to_vec()
    } else {
        splits.to_vec()
    };
    datasets
        .iter()
        .flat_map(|d| splits.iter().flat_map(move |&s| d.split(s)))
        .collect()
}

fn cmd_render(cfg: &RunConfig, a: RenderArgs, ow: bool) -> Result<()> {
    let loaded = load_data(&data_dir(cfg, &a.data))?;
    let out = a
        .out
        .unwrap_or_else(|| cfg.paths.reports.join("prompts.tsv"));
    guard(&out, ow)?;
    let datasets = select(&loaded.datasets, &a.domain)?;
    let template = a.prompt.apply(&cfg.prompt);
    let rows = render_rows(&datasets, &a.split);
    let prompts = rows
        .iter()
        .map(|r| {
            let p = ufin::prompting::render(
                r,
                &loaded.schema,
                loaded.book.table(r.domain_id),
                &template,
            )?;
            Ok((r.row_id, p))
        })
        .collect::<Result<Vec<_>>>()?;
    create_parent(&out)?;
    ufin::prompting::write_prompt_dump(BufWriter::new(File::create(&out)?), &prompts)?;
    println!("wrote {} prompts to {}", rows.len(), out.display());
    Ok(())
}

fn cmd_encode(cfg: &RunConfig, a: EncodeArgs, ow: bool) -> Result<()> {
    let loaded = load_data(&data_dir(cfg, &a.data))?;
    let rows = render_rows(&loaded.datasets, &[]);
    if let Some(path) = &a.validate {
        let cache = EmbeddingCache::load(path)?;
        let want = a.dim.unwrap_or(cfg.model.d_v);
        if cache.dim() != want {
            bail!(ufin::Error::InvalidArgument(format!(
                "{} holds d_v={} vectors, config expects {want}",
                path.display(),
                cache.dim()
            )));
        }
        for r in &rows {
            cache.get(r.row_id)?;
        }
        println!(
            "{}: {} entries, d_v={}, covers all {} rows",
            path.display(),
            cache.len(),
            cache.dim(),
            rows.len()
        );
        return Ok(());
    }
    let out = a.out.unwrap_or_else(|| cfg.paths.cache.clone());
    guard(&out, ow)?;
    let dim = a.dim.unwrap_or(cfg.model.d_v);
    let encoder = HashEncoder::new(dim, cfg.encoder.hash_seed).map_err(|e| usage(e.to_string()))?;
    let template = a.prompt.apply(&cfg.prompt);
    let mut cache = EmbeddingCache::new(dim)?;
    for r in &rows {
        let p =
            ufin::prompting::render(r, &loaded.schema, loaded.book.table(r.domain_id), &template)?;
        let v: Vec<f32> = encoder.pooled(&p).into_iter().map(|x| x as f32).collect();
        cache.insert(r.row_id, &v)?;
    }
    create_parent(&out)?;
    cache.save(&out)?;
    println!(
        "wrote {} vectors of width {dim} to {}",
        cache.len(),
        out.display()
    );
    Ok(())
}

fn cmd_teachers(cfg: &mut RunConfig, a: TeacherArgs, ow: bool) -> Result<()> {
    let loaded = load_data(&data_dir(cfg, &a.data))?;
    let out = a.out.unwrap_or_else(|| cfg.paths.teachers.clone());
    let datasets = select(&loaded.datasets, &a.domain)?;
    for ds in &datasets {
        guard(&TeacherModel::path_in(&out, ds.domain_id), ow)?;
    }
    a.optim.apply(&mut cfg.teacher_train);
    cfg.teacher_train.seed = pipeline::stage_seed(cfg.seed, "teachers");
    cfg.teacher_train
        .validate()
        .map_err(|e| usage(e.to_string()))?;
    let teachers = pretrain_teachers(&loaded.schema, &datasets, &cfg.teacher, &cfg.teacher_train)?;
    fs::create_dir_all(&out)?;
    for (t, h) in &teachers {
        let path = TeacherModel::path_in(&out, t.domain_id());
        t.save(&path)?;
        let hist = out.join(format!("teacher_{}_history.csv", t.domain_id()));
        h.write_csv(File::create(&hist)?)?;
        println!(
            "teacher {}: best epoch {} of {}, valid AUC {}",
            t.domain_id(),
            h.best_epoch,
            h.epochs.len(),
            fmt_auc(h.best_auc())
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn fmt_auc(a: Option<f64>) -> String {
    a.map_or("-".into(), |v| format!("{v:.4}"))
}

fn encoder_spec(cfg: &RunConfig, backend: Option<Backend>, cache: Option<PathBuf>) -> EncoderSpec {
    match backend.unwrap_or(cfg.encoder.backend) {
        Backend::Hash => EncoderSpec::Hash {
            seed: cfg.encoder.hash_seed,
        },
        Backend::Cache => EncoderSpec::Cache {
            path: cache.unwrap_or_else(|| cfg.paths.cache.clone()),
        },
    }
}

fn cmd_train(cfg: &mut RunConfig, a: TrainArgs, ow: bool) -> Result<()> {
    let loaded = load_data(&data_dir(cfg, &a.data))?;
    let out = a.out.clone().unwrap_or_else(|| cfg.paths.model.clone());
    let history_path = a
        .history
        .clone()
        .unwrap_or_else(|| cfg.paths.reports.join("history.csv"));
    guard(&out, ow)?;
    guard(&history_path, ow)?;
    let datasets = select(&loaded.datasets, &a.domain)?;

    if let Some(m) = a.mode {
        cfg.model.mode = m;
    }
    if let Some(d) = a.d_v {
        cfg.model.d_v = d;
    }
    a.optim.apply(&mut cfg.train);
    if a.no_distill {
        cfg.train.distill = false;
    }
    cfg.train.seed = pipeline::stage_seed(cfg.seed, "train");
    cfg.train.validate().map_err(|e| usage(e.to_string()))?;
    cfg.model
        .resolve(datasets.len())
        .map_err(|e| usage(e.to_string()))?;

    let teachers = if cfg.train.distill {
        let dir = a
            .teachers
            .clone()
            .unwrap_or_else(|| cfg.paths.teachers.clone());
        datasets
            .iter()
            .map(|ds| {
                let p = TeacherModel::path_in(&dir, ds.domain_id);
                if !p.exists() {
                    return Err(anyhow::Error::new(ufin::Error::MissingPath(p)).context(
                        "teacher checkpoint not found; run `ufin pretrain-teachers` or pass --no-distill",
                    ));
                }
                Ok(TeacherModel::load(&p)?)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let init = match &a.init {
        Some(p) => Some(UfinModel::load(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let spec = StudentSpec {
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        prompt: a.prompt.apply(&cfg.prompt),
        encoder: encoder_spec(cfg, a.backend, a.cache.clone()),
        init_seed: pipeline::stage_seed(cfg.seed, "init"),
    };
    let (model, history) = pipeline::train_student(
        &loaded.schema,
        &datasets,
        &loaded.book,
        &teachers,
        &spec,
        init.as_ref(),
    )?;
    create_parent(&out)?;
    model.save(&out)?;
    create_parent(&history_path)?;
    history.write_csv(File::create(&history_path)?)?;
    for e in &history.epochs {
        println!(
            "epoch {:>3}  train loss {:.5}  valid AUC {}  logloss {:.5}",
            e.epoch,
            e.train_loss,
            fmt_auc(e.valid.overall.auc),
            e.valid.overall.logloss
        );
    }
    println!(
        "{} kept epoch {} (valid AUC {}); wrote {}",
        model.mode().name(),
        history.best_epoch,
        fmt_auc(history.best_auc()),
        out.display()
    );
    Ok(())
}

fn load_model(cfg: &RunConfig, a: &ScoreArgs) -> Result<(UfinModel, Loaded)> {
    let path = a.model.clone().unwrap_or_else(|| cfg.paths.model.clone());
    if !path.exists() {
        return Err(
            anyhow::Error::new(ufin::Error::MissingPath(path)).context("run `ufin train` first")
        );
    }
    let model = UfinModel::load(&path)?;
    let loaded = load_data(&data_dir(cfg, &a.data))?;
    Ok((model, loaded))
}

fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    create_parent(path)?;
    fs::write(path, report.to_json()?)?;
    Ok(())
}

/// The requested domains, or the model's training domains when none are given.
fn seen_by_default(model: &UfinModel, requested: &[usize]) -> Vec<usize> {
    if requested.is_empty() {
        model.meta.domains.clone()
    } else {
        requested.to_vec()
    }
}

fn cmd_evaluate(cfg: &RunConfig, a: EvaluateArgs, ow: bool) -> Result<()> {
    if a.mode == EvalMode::ZeroShot {
        return Err(usage("use `ufin zeroshot` for unseen domains"));
    }
    let report_path = a.report.clone().unwrap_or_else(|| {
        cfg.paths
            .reports
            .join(format!("{}_{}.json", a.mode.name(), a.score.split.name()))
    });
    guard(&report_path, ow)?;
    let (model, loaded) = load_model(cfg, &a.score)?;
    let datasets = select(&loaded.datasets, &seen_by_default(&model, &a.score.domain))?;
    let rows: Vec<&InstanceRecord> = datasets
        .iter()
        .flat_map(|d| d.split(a.score.split))
        .collect();
    let report = pipeline::evaluate_rows(&model, &rows, &loaded.book, a.mode)?;
    write_report(&report, &report_path)?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_zeroshot(cfg: &RunConfig, a: ZeroshotArgs, ow: bool) -> Result<()> {
    let report_path = a.report.clone().unwrap_or_else(|| {
        cfg.paths
            .reports
            .join(format!("zero-shot_{}.json", a.score.split.name()))
    });
    guard(&report_path, ow)?;
    let (model, loaded) = load_model(cfg, &a.score)?;
    if model.mode() == Mode::TextFeature {
        return Err(usage(
            "zero-shot needs a ufin_t model (train with --mode ufin_t): the feature adaptor has no weights for unseen domains",
        ));
    }
    let wanted: Vec<usize> = if a.score.domain.is_empty() {
        loaded
            .datasets
            .iter()
            .map(|d| d.domain_id)
            .filter(|d| !model.meta.domains.contains(d))
            .collect()
    } else {
        a.score.domain.clone()
    };
    if wanted.is_empty() {
        return Err(usage(
            "every domain in the data was seen in training; pass --domain",
        ));
    }
    if let Some(d) = wanted.iter().find(|d| model.meta.domains.contains(d)) {
        return Err(usage(format!("domain {d} was seen in training")));
    }
    let datasets = select(&loaded.datasets, &wanted)?;
    let rows: Vec<&InstanceRecord> = datasets
        .iter()
        .flat_map(|d| d.split(a.score.split))
        .collect();
    let report = pipeline::evaluate_rows(&model, &rows, &loaded.book, EvalMode::ZeroShot)?;
    write_report(&report, &report_path)?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_export(cfg: &RunConfig, a: ExportArgs, ow: bool) -> Result<()> {
    let out = a.out.clone().unwrap_or_else(|| {
        cfg.paths
            .reports
            .join(format!("universal_{}.csv", a.score.split.name()))
    });
    guard(&out, ow)?;
    let (model, loaded) = load_model(cfg, &a.score)?;
    let datasets = select(&loaded.datasets, &seen_by_default(&model, &a.score.domain))?;
    let rows: Vec<&InstanceRecord> = datasets
        .iter()
        .flat_map(|d| d.split(a.score.split))
        .collect();
    let backend = model.meta.encoder.open(model.config().d_v)?;
    let f = Featurizer {
        schema: &model.meta.schema,
        book: &loaded.book,
        template: &model.meta.prompt,
        backend: &backend,
    };
    let set = model.inputs(&rows, f.pooled(&rows)?)?;
    create_parent(&out)?;
    model.export_universal(&set, BufWriter::new(File::create(&out)?))?;
    println!(
        "wrote universal features of {} rows to {}",
        rows.len(),
        out.display()
    );
    Ok(())
}
