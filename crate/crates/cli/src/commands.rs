use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use chronofeat_core::evalreport::{self, spec_key, ReportOptions, SpecGrid};
use chronofeat_core::featurize::{featurize_fold, FeatureConfig};
use chronofeat_core::folds::{build_fold, fold_label, parse_fold_list, write_split_report};
use chronofeat_core::ingest::{sample_csv, EventLog, LogSchema};
use chronofeat_core::matrix::{FeatureMatrix, SplitTag};
use chronofeat_core::metrics::{eda_ctr_by_day, eda_unseen_rate, evaluate, join_labels, Metric, Predictions};
use chronofeat_core::synthgen::{generate, SynthConfig};
use chronofeat_core::te::{te_pass, TeParams};
use chronofeat_core::timeagg::{parse_lengths, Shape, WindowSpec, DEFAULT_ENTITY_KEYS, DEFAULT_EVENT_N};
use clap::{Args, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::manifest::ManifestBuilder;
use crate::settings::{required, resolve, usage, Settings};

pub struct Context {
    pub settings: Settings,
    /// Global seed from `--seed`, `CHRONOFEAT_SEED` or the settings file.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricArg {
    RocAuc,
    PrAuc,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::RocAuc => Metric::RocAuc,
            MetricArg::PrAuc => Metric::PrAuc,
        }
    }
}

fn load_schema(path: Option<&PathBuf>, m: &mut ManifestBuilder) -> anyhow::Result<LogSchema> {
    match path {
        Some(p) => {
            m.input(p)?;
            Ok(LogSchema::from_json_file(p)?)
        }
        None => Ok(LogSchema::avazu()),
    }
}

fn load_log(input: &Path, schema: &LogSchema, m: &mut ManifestBuilder) -> anyhow::Result<EventLog> {
    m.input(input)?;
    let log = EventLog::read_csv_file(input, schema).with_context(|| format!("reading {}", input.display()))?;
    info!("loaded {} rows from {}", log.len(), input.display());
    Ok(log)
}

fn create_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn create_file(path: &Path) -> anyhow::Result<BufWriter<File>> {
    create_parent(path)?;
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    create_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
pub struct SampleArgs {
    /// Raw CSV log.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Percentage of rows to keep, 0 to 100 [default: 10].
    #[arg(long)]
    pub rate: Option<u8>,
    /// Column whose text is hashed [default: id].
    #[arg(long)]
    pub id_column: Option<String>,
    /// Sampled CSV.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn sample(ctx: &Context, args: SampleArgs) -> anyhow::Result<()> {
    let a = resolve(&args, &ctx.settings, "sample", json!({"rate": 10, "id_column": "id"}))?;
    let (input, output) = (required(&a.input, "input")?, required(&a.output, "output")?);
    let rate = required(&a.rate, "rate")?;
    if rate > 100 {
        return Err(usage(format!("--rate {rate} is outside 0..=100")));
    }
    let mut m = ManifestBuilder::new("sample", &a)?;
    m.input(&input)?;
    let reader = BufReader::new(File::open(&input).with_context(|| format!("opening {}", input.display()))?);
    let (read, kept) = sample_csv(reader, create_file(&output)?, &required(&a.id_column, "id-column")?, rate)?;
    info!("kept {kept} of {read} rows");
    m.write_beside(&output)?;
    Ok(())
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
pub struct StatsArgs {
    /// CSV log.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Schema JSON [default: the Avazu columns].
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Per-day statistics CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn stats(ctx: &Context, args: StatsArgs) -> anyhow::Result<()> {
    let a = resolve(&args, &ctx.settings, "stats", json!({}))?;
    let (input, out) = (required(&a.input, "input")?, required(&a.out, "out")?);
    let mut m = ManifestBuilder::new("stats", &a)?;
    let schema = load_schema(a.schema.as_ref(), &mut m)?;
    let log = load_log(&input, &schema, &mut m)?;
    let Some(stats) = log.stats() else {
        bail!("{} holds no rows", input.display());
    };
    stats.write_csv(create_file(&out)?)?;
    m.write_beside(&out)?;
    Ok(())
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
pub struct SplitsArgs {
    /// CSV log.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Folds as letters or day offsets from the end, e.g. `A,B` or `0,1` [default: A,B].
    #[arg(long)]
    pub folds: Option<String>,
    /// Split report CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn splits(ctx: &Context, args: SplitsArgs) -> anyhow::Result<()> {
    let a = resolve(&args, &ctx.settings, "splits", json!({"folds": "A,B"}))?;
    let (input, report) = (required(&a.input, "input")?, required(&a.report, "report")?);
    let offsets = parse_fold_list(&required(&a.folds, "folds")?).map_err(|e| usage(e.to_string()))?;
    let mut m = ManifestBuilder::new("splits", &a)?;
    let schema = load_schema(a.schema.as_ref(), &mut m)?;
    let log = load_log(&input, &schema, &mut m)?;
    let folds = offsets
        .iter()
        .map(|&k| build_fold(&log.events, k))
        .collect::<Result<Vec<_>, _>>()?;
    let sample = input.file_stem().and_then(|s| s.to_str()).unwrap_or("log");
    write_split_report(sample, &folds, create_file(&report)?)?;
    m.write_beside(&report)?;
    Ok(())
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
pub struct TeArgs {
    /// CSV log.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Cache file (binary matrix).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Prior pseudo-clicks [default: 1].
    #[arg(long)]
    pub prior_a: Option<f64>,
    /// Prior pseudo-non-clicks [default: 10].
    #[arg(long)]
    pub prior_b: Option<f64>,
    /// Smoothing strength towards the prior [default: 100].
    #[arg(long)]
    pub m: Option<f64>,
}

pub fn te(ctx: &Context, args: TeArgs) -> anyhow::Result<()> {
    let d = TeParams::default();
    let a = resolve(&args, &ctx.settings, "te", json!({"prior_a": d.prior_a, "prior_b": d.prior_b, "m": d.m}))?;
    let (input, out) = (required(&a.input, "input")?, required(&a.out, "out")?);
    let params = TeParams {
        prior_a: required(&a.prior_a, "prior-a")?,
        prior_b: required(&a.prior_b, "prior-b")?,
        m: required(&a.m, "m")?,
    };
    let mut m = ManifestBuilder::new("te", &a)?;
    let schema = load_schema(a.schema.as_ref(), &mut m)?;
    let log = load_log(&input, &schema, &mut m)?;
    create_parent(&out)?;
    te_pass(&log, params)?.to_matrix(&log).write_file(&out)?;
    m.write_beside(&out)?;
    Ok(())
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
pub struct FeaturizeArgs {
    /// CSV log.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Fold letter or day offset [default: A].
    #[arg(long)]
    pub fold: Option<String>,
    /// Window lengths in hours; omit for the TE-only baseline.
    #[arg(long)]
    pub lengths: Option<String>,
    /// Window shape [default: trailing].
    #[arg(long)]
    pub shape: Option<Shape>,
    /// Include target-encoding features [default: on].
    #[arg(long)]
    pub te: Option<Toggle>,
    /// Impressions per event-count window [default: 50].
    #[arg(long)]
    pub event_n: Option<u32>,
    /// Entity keys for window aggregation, comma separated.
    #[arg(long)]
    pub entity_keys: Option<String>,
    /// Precomputed TE cache; built on the fly when absent.
    #[arg(long)]
    pub te_cache: Option<PathBuf>,
    /// Output directory for train/val/test matrices.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn featurize(ctx: &Context, args: FeaturizeArgs) -> anyhow::Result<()> {
    let a = resolve(
        &args,
        &ctx.settings,
        "featurize",
        json!({
            "fold": "A",
            "shape": Shape::Trailing,
            "te": Toggle::On,
            "event_n": DEFAULT_EVENT_N,
            "entity_keys": DEFAULT_ENTITY_KEYS.join(","),
        }),
    )?;
    let (input, out) = (required(&a.input, "input")?, required(&a.out, "out")?);
    let offsets = parse_fold_list(&required(&a.fold, "fold")?).map_err(|e| usage(e.to_string()))?;
    let [offset] = offsets[..] else {
        return Err(usage("--fold takes exactly one fold"));
    };
    let window = match &a.lengths {
        Some(text) => {
            let lengths = parse_lengths(text).map_err(|e| usage(e.to_string()))?;
            let spec = WindowSpec::new(lengths, required(&a.shape, "shape")?)
                .map_err(|e| usage(e.to_string()))?
                .with_event_n(required(&a.event_n, "event-n")?)
                .map_err(|e| usage(e.to_string()))?;
            Some(spec)
        }
        None => None,
    };
    let te_on = required(&a.te, "te")? == Toggle::On;
    let mut config = FeatureConfig::new(window, te_on);
    config.entity_keys = required(&a.entity_keys, "entity-keys")?
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();

    let mut m = ManifestBuilder::new("featurize", &a)?;
    let schema = load_schema(a.schema.as_ref(), &mut m)?;
    let log = load_log(&input, &schema, &mut m)?;
    let fold = build_fold(&log.events, offset)?;
    let cache = match (te_on, &a.te_cache) {
        (false, _) => None,
        (true, Some(path)) => {
            m.input(path)?;
            Some(FeatureMatrix::read_file(path)?)
        }
        (true, None) => Some(te_pass(&log, TeParams::default())?.to_matrix(&log)),
    };
    let matrix = featurize_fold(&log, &fold, &config, cache.as_ref())?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    for tag in [SplitTag::Train, SplitTag::Val, SplitTag::Test] {
        let part = matrix.split(tag);
        part.write_file(&out.join(format!("{}.fmx", tag.as_str())))?;
        part.write_csv_file(&out.join(format!("{}.csv", tag.as_str())))?;
    }
    write_json(&out.join("fold.json"), &fold)?;
    info!("fold {}: {} rows x {} features", fold_label(offset), matrix.n_rows(), matrix.n_cols());
    m.write_in(&out)?;
    Ok(())
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Generator configuration JSON [default: built-in config].
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of days to generate.
    #[arg(long)]
    pub days: Option<u32>,
    /// Mean rows per hour.
    #[arg(long)]
    pub rows_per_hour: Option<f64>,
    /// Output CSV log.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn synth(ctx: &Context, args: SynthArgs) -> anyhow::Result<()> {
    let a = resolve(&args, &ctx.settings, "synth", json!({}))?;
    let out = required(&a.out, "out")?;
    let mut m = ManifestBuilder::new("synth", &a)?;
    let mut config = match &a.config {
        Some(path) => {
            m.input(path)?;
            SynthConfig::from_json_file(path)?
        }
        None => SynthConfig::default(),
    };
    if let Some(days) = a.days {
        config.n_days = days;
    }
    if let Some(rate) = a.rows_per_hour {
        config.rows_per_hour.mean = rate;
    }
    if a.config.is_none() {
        if let Some(seed) = ctx.seed {
            config.seed = seed;
        }
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    m.seed("synth", config.seed);
    let synth = generate(&config)?;
    info!("generated {} rows ({} probabilities clamped)", synth.log.len(), synth.clamp_count);
    create_parent(&out)?;
    synth.log.write_csv_file(&out)?;
    m.record("synth_config", &config)?;
    m.write_beside(&out)?;
    Ok(())
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    /// CSV log.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Design grid JSON [default: the full built-in grid].
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Results directory; cells already finished there are skipped.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Cells trained in parallel [default: 1].
    #[arg(long)]
    pub jobs: Option<usize>,
}

pub fn sweep(ctx: &Context, args: SweepArgs) -> anyhow::Result<()> {
    let a = resolve(&args, &ctx.settings, "sweep", json!({"jobs": 1}))?;
    let (input, out) = (required(&a.input, "input")?, required(&a.out, "out")?);
    let jobs = required(&a.jobs, "jobs")?;
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let mut m = ManifestBuilder::new("sweep", &a)?;
    let mut grid = match &a.grid {
        Some(path) => {
            m.input(path)?;
            SpecGrid::from_json_file(path)?
        }
        None => SpecGrid::default(),
    };
    if a.grid.is_none() {
        if let Some(seed) = ctx.seed {
            grid.learner.seed = seed;
            grid.bootstrap_seed = seed;
        }
    }
    grid.validate().map_err(|e| usage(e.to_string()))?;
    m.seed("learner", grid.learner.seed);
    m.seed("bootstrap", grid.bootstrap_seed);
    let schema = load_schema(a.schema.as_ref(), &mut m)?;
    let log = load_log(&input, &schema, &mut m)?;
    let summary = evalreport::run_sweep(&log, &grid, &out, jobs)?;
    info!(
        "{} cells completed, {} skipped, {} failed",
        summary.completed.len(),
        summary.skipped.len(),
        summary.failed.len()
    );
    m.write_in(&out)?;
    if !summary.failed.is_empty() {
        let keys: Vec<String> = summary.failed.iter().map(|f| format!("{}: {}", f.key, f.error)).collect();
        bail!("{} cells failed:\n  {}", keys.len(), keys.join("\n  "));
    }
    Ok(())
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Predictions CSV with `row_id,score`.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Labels CSV with `row_id` (or `id`) and `label` (or `click`).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Metrics JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn read_labels(path: &Path) -> anyhow::Result<HashMap<u64, u8>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let find = |names: &[&str]| headers.iter().position(|h| names.contains(&h));
    let id = find(&["row_id", "id"]).context("labels file needs a `row_id` or `id` column")?;
    let label = find(&["label", "click"]).context("labels file needs a `label` or `click` column")?;
    let mut out = HashMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let row: u64 = rec[id].trim().parse().with_context(|| format!("bad row id `{}`", &rec[id]))?;
        let y: u8 = match rec[label].trim() {
            "0" => 0,
            "1" => 1,
            other => bail!("label `{other}` is not 0 or 1"),
        };
        if out.insert(row, y).is_some() {
            bail!("row id {row} appears twice in {}", path.display());
        }
    }
    Ok(out)
}

pub fn eval(ctx: &Context, args: EvalArgs) -> anyhow::Result<()> {
    let a = resolve(&args, &ctx.settings, "eval", json!({}))?;
    let (pred, labels, out) = (required(&a.pred, "pred")?, required(&a.labels, "labels")?, required(&a.out, "out")?);
    let mut m = ManifestBuilder::new("eval", &a)?;
    m.input(&pred)?;
    m.input(&labels)?;
    let scores = Predictions::read_csv(BufReader::new(File::open(&pred)?))?;
    let joined = join_labels(&scores, &read_labels(&labels)?)?;
    let result = evaluate(&joined.scores, &joined.labels)?;
    write_json(&out, &result)?;
    m.write_beside(&out)?;
    Ok(())
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Sweep results directory.
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Baseline window as `shape:lengths[@N]`, or `te_only` [default: trailing:1,6,24,48,168].
    #[arg(long)]
    pub baseline: Option<String>,
    /// Whether the baseline cell has TE features [default: on].
    #[arg(long)]
    pub baseline_te: Option<Toggle>,
    /// Metric ranked in the league table [default: roc-auc].
    #[arg(long)]
    pub metric: Option<MetricArg>,
    /// Bootstrap resamples for confidence intervals [default: 200].
    #[arg(long)]
    pub bootstrap_resamples: Option<usize>,
    /// Bootstrap seed [default: 42].
    #[arg(long)]
    pub bootstrap_seed: Option<u64>,
    /// Lengths whose event-count cells form the event-count sweep [default: 1,6,24].
    #[arg(long)]
    pub event_sweep_lengths: Option<String>,
    /// Report directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn report(ctx: &Context, args: ReportArgs) -> anyhow::Result<()> {
    let d = ReportOptions::default();
    let sweep_lengths: Vec<String> = d.event_sweep_lengths.iter().map(u32::to_string).collect();
    let a = resolve(
        &args,
        &ctx.settings,
        "report",
        json!({
            "baseline": "trailing:1,6,24,48,168",
            "baseline_te": Toggle::On,
            "metric": MetricArg::RocAuc,
            "bootstrap_resamples": d.bootstrap_resamples,
            "bootstrap_seed": ctx.seed.unwrap_or(d.bootstrap_seed),
            "event_sweep_lengths": sweep_lengths.join(","),
        }),
    )?;
    let (results, out) = (required(&a.results, "results")?, required(&a.out, "out")?);
    let baseline_text = required(&a.baseline, "baseline")?;
    let window = match baseline_text.as_str() {
        "te_only" => None,
        text => Some(text.parse::<WindowSpec>().map_err(|e| usage(format!("--baseline: {e}")))?),
    };
    let options = ReportOptions {
        baseline: spec_key(window.as_ref(), required(&a.baseline_te, "baseline-te")? == Toggle::On),
        metric: required(&a.metric, "metric")?.into(),
        bootstrap_resamples: required(&a.bootstrap_resamples, "bootstrap-resamples")?,
        bootstrap_seed: required(&a.bootstrap_seed, "bootstrap-seed")?,
        event_sweep_lengths: parse_lengths(&required(&a.event_sweep_lengths, "event-sweep-lengths")?)
            .map_err(|e| usage(e.to_string()))?,
    };
    let mut m = ManifestBuilder::new("report", &a)?;
    m.seed("bootstrap", options.bootstrap_seed);
    evalreport::report(&results, &options, &out)?;
    m.write_in(&out)?;
    Ok(())
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
pub struct EdaArgs {
    /// CSV log.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Columns for the unseen-rate series [default: the entity keys].
    #[arg(long)]
    pub columns: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn eda(ctx: &Context, args: EdaArgs) -> anyhow::Result<()> {
    let a = resolve(&args, &ctx.settings, "eda", json!({"columns": DEFAULT_ENTITY_KEYS.join(",")}))?;
    let (input, out) = (required(&a.input, "input")?, required(&a.out, "out")?);
    let columns: Vec<String> = required(&a.columns, "columns")?
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let mut m = ManifestBuilder::new("eda", &a)?;
    let schema = load_schema(a.schema.as_ref(), &mut m)?;
    for c in &columns {
        if schema.categorical_index(c).is_err() {
            return Err(usage(format!("--columns: `{c}` is not a categorical column")));
        }
    }
    let log = load_log(&input, &schema, &mut m)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let mut w = csv::Writer::from_writer(create_file(&out.join("ctr_by_day.csv"))?);
    w.write_record(["date", "n_rows", "ctr"])?;
    for d in eda_ctr_by_day(&log.events) {
        w.write_record([d.date, d.n_rows.to_string(), format!("{:.8}", d.ctr)])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create_file(&out.join("unseen_rate.csv"))?);
    w.write_record(["column", "date", "n_rows", "unseen_rate"])?;
    for r in eda_unseen_rate(&log, &columns)? {
        w.write_record([r.column, r.date, r.n_rows.to_string(), format!("{:.8}", r.unseen_rate)])?;
    }
    w.flush()?;
    m.write_in(&out)?;
    Ok(())
}
