//! Design-grid sweep and summary reports.
//!
//! A sweep writes one directory per cell under `<out>/cells/<key>/` holding
//! `result.json`, `predictions_val.csv`, `predictions_test.csv`,
//! `model.json` and `timing.json`. Reports are computed only from those
//! files, so regenerating them from an unchanged directory is byte-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{expected_feature_count, featurize_fold, FeatureConfig};
use crate::folds::{build_fold, fold_label, FoldAssignment};
use crate::ingest::EventLog;
use crate::learner::{fit, read_external_predictions, write_exchange, FittedModel, LearnerConfig, ModelKind};
use crate::matrix::{FeatureMatrix, SplitTag};
use crate::metrics::{bootstrap_mean_ci, paired_delta, Interval, Metric, PairedSample, Predictions};
use crate::te::{te_pass, TeParams};
use crate::timeagg::{default_length_tuples, Shape, TimeAggConfig, WindowSpec, DEFAULT_ENTITY_KEYS, DEFAULT_EVENT_N};

/// Sign tolerance of the traffic-light summary.
pub const TRAFFIC_LIGHT_TOLERANCE: f64 = 1e-5;

/// Axes of the design grid plus shared settings (`grid.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecGrid {
    pub lengths: Vec<Vec<u32>>,
    pub shapes: Vec<Shape>,
    pub te: Vec<bool>,
    /// Only varies event-count cells; other shapes ignore it.
    pub event_n: Vec<u32>,
    pub folds: Vec<u32>,
    /// Adds the TE-only reference cell for each fold.
    pub include_te_only: bool,
    pub entity_keys: Vec<String>,
    pub timeagg: TimeAggConfig,
    pub learner: LearnerConfig,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
    /// Also store each cell's feature matrix as `matrix.fmx`.
    pub save_matrices: bool,
}

impl Default for SpecGrid {
    fn default() -> Self {
        SpecGrid {
            lengths: default_length_tuples(),
            shapes: Shape::ALL.to_vec(),
            te: vec![true, false],
            event_n: vec![DEFAULT_EVENT_N],
            folds: vec![0, 1],
            include_te_only: true,
            entity_keys: DEFAULT_ENTITY_KEYS.iter().map(|s| s.to_string()).collect(),
            timeagg: TimeAggConfig::default(),
            learner: LearnerConfig::default(),
            bootstrap_resamples: 200,
            bootstrap_seed: 42,
            save_matrices: false,
        }
    }
}

impl SpecGrid {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let grid: SpecGrid = serde_json::from_str(&text)?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds.is_empty() {
            return Err(Error::Config("grid has no folds".into()));
        }
        if self.te.is_empty() && !self.include_te_only {
            return Err(Error::Config("grid has no te flags".into()));
        }
        if self.event_n.is_empty() {
            return Err(Error::Config("grid has no event_n values".into()));
        }
        self.learner.validate()?;
        for spec in self.windows()? {
            spec.validate(self.timeagg.horizon_cap)?;
        }
        Ok(())
    }

    fn windows(&self) -> Result<Vec<WindowSpec>> {
        let mut out = Vec::new();
        for lengths in &self.lengths {
            for &shape in &self.shapes {
                let ns: &[u32] = if shape == Shape::Event50 { &self.event_n } else { &[DEFAULT_EVENT_N] };
                for &n in ns {
                    let spec = WindowSpec {
                        lengths: lengths.clone(),
                        shape,
                        gap_hours: 1,
                        event_n: n,
                    };
                    spec.validate(self.timeagg.horizon_cap)?;
                    out.push(spec);
                }
            }
        }
        Ok(out)
    }

    /// Every cell in execution order: fold, then lengths, shape, TE flag and
    /// event count as listed, with the TE-only cell first in each fold.
    pub fn cells(&self) -> Result<Vec<CellSpec>> {
        let windows = self.windows()?;
        let mut cells = Vec::new();
        let mut seen = BTreeSet::new();
        for &fold in &self.folds {
            if self.include_te_only {
                cells.push(CellSpec {
                    fold_offset: fold,
                    window: None,
                    te_on: true,
                });
            }
            for w in &windows {
                for &te_on in &self.te {
                    cells.push(CellSpec {
                        fold_offset: fold,
                        window: Some(w.clone()),
                        te_on,
                    });
                }
            }
        }
        cells.retain(|c| seen.insert(c.key()));
        Ok(cells)
    }

    pub fn feature_config(&self, cell: &CellSpec) -> FeatureConfig {
        FeatureConfig {
            window: cell.window.clone(),
            te_on: cell.te_on,
            entity_keys: self.entity_keys.clone(),
            timeagg: self.timeagg,
        }
    }
}

/// One grid cell: a fold and a feature set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellSpec {
    pub fold_offset: u32,
    pub window: Option<WindowSpec>,
    pub te_on: bool,
}

impl CellSpec {
    /// Feature-set identifier shared by all folds, e.g. `trailing__1-6-24__te_on`.
    pub fn spec_key(&self) -> String {
        spec_key(self.window.as_ref(), self.te_on)
    }

    pub fn fold_id(&self) -> String {
        fold_label(self.fold_offset)
    }

    pub fn key(&self) -> String {
        format!("{}__{}", self.fold_id(), self.spec_key())
    }
}

pub fn spec_key(window: Option<&WindowSpec>, te_on: bool) -> String {
    let te = if te_on { "te_on" } else { "te_off" };
    match window {
        Some(w) => format!("{}__{te}", w.key()),
        None => format!("te_only__{te}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub roc_auc: f64,
    pub pr_auc: f64,
}

impl MetricPair {
    pub fn of(p: &Predictions) -> Result<Self> {
        Ok(MetricPair {
            roc_auc: p.metric(Metric::RocAuc)?,
            pr_auc: p.metric(Metric::PrAuc)?,
        })
    }
}

/// Contents of `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: String,
    pub spec_key: String,
    pub fold_id: String,
    pub cell: CellSpec,
    pub n_features: usize,
    pub expected_features: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub val: MetricPair,
    pub test: MetricPair,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub featurize_seconds: f64,
    pub fit_seconds: f64,
}

/// A finished cell held in memory.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub result: CellResult,
    pub val: Predictions,
    pub test: Predictions,
    pub model: Option<FittedModel>,
    pub timing: CellTiming,
    pub matrix: FeatureMatrix,
}

/// Featurizes, trains and scores one cell.
pub fn run_cell(
    log: &EventLog,
    fold: &FoldAssignment,
    cell: &CellSpec,
    features: &FeatureConfig,
    te_cache: Option<&FeatureMatrix>,
    learner: &LearnerConfig,
    exchange_dir: Option<&Path>,
) -> Result<CellOutcome> {
    let t0 = Instant::now();
    let matrix = featurize_fold(log, fold, features, if features.te_on { te_cache } else { None })?;
    let expected = expected_feature_count(
        features.window.as_ref(),
        features.te_on,
        log.schema.categorical_columns.len(),
        features.entity_keys.len(),
    );
    if matrix.n_cols() != expected {
        return Err(Error::ColumnMismatch(format!(
            "{} columns built, {expected} expected",
            matrix.n_cols()
        )));
    }
    let featurize_seconds = t0.elapsed().as_secs_f64();
    let (train, val, test) = (
        matrix.split(SplitTag::Train),
        matrix.split(SplitTag::Val),
        matrix.split(SplitTag::Test),
    );
    let t1 = Instant::now();
    let (model, val_p, test_p) = match learner.model {
        ModelKind::LogisticSgd => {
            let model = fit(&train, &val, learner)?;
            let (v, t) = (model.predictions(&val)?, model.predictions(&test)?);
            (Some(model), v, t)
        }
        ModelKind::External => {
            let dir = exchange_dir.ok_or_else(|| Error::Config("external learner needs an exchange directory".into()))?;
            if !dir.join("manifest.json").exists() {
                write_exchange(dir, &train, &val, &test)?;
            }
            let v = read_external_predictions(dir, "val", &val)?;
            let t = read_external_predictions(dir, "test", &test)?;
            (None, v, t)
        }
    };
    let fit_seconds = t1.elapsed().as_secs_f64();
    let result = CellResult {
        key: cell.key(),
        spec_key: cell.spec_key(),
        fold_id: cell.fold_id(),
        cell: cell.clone(),
        n_features: matrix.n_cols(),
        expected_features: expected,
        n_train: train.n_rows(),
        n_val: val.n_rows(),
        n_test: test.n_rows(),
        val: MetricPair::of(&val_p)?,
        test: MetricPair::of(&test_p)?,
        best_epoch: model.as_ref().map(|m| m.best_epoch),
    };
    Ok(CellOutcome {
        result,
        val: val_p,
        test: test_p,
        model,
        timing: CellTiming {
            featurize_seconds,
            fit_seconds,
        },
        matrix,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub key: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub completed: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Vec<CellFailure>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
}

fn write_predictions(path: &Path, p: &Predictions) -> Result<()> {
    let mut buf = Vec::new();
    p.write_csv(&mut buf)?;
    write_file(path, &buf)
}

fn read_predictions(path: &Path) -> Result<Predictions> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Predictions::read_csv(std::io::BufReader::new(file))
}

pub fn cell_dir(out: &Path, key: &str) -> PathBuf {
    out.join("cells").join(key)
}

fn persist_cell(dir: &Path, outcome: &CellOutcome, save_matrix: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_predictions(&dir.join("predictions_val.csv"), &outcome.val)?;
    write_predictions(&dir.join("predictions_test.csv"), &outcome.test)?;
    if let Some(model) = &outcome.model {
        write_json(&dir.join("model.json"), model)?;
    }
    if save_matrix {
        outcome.matrix.write_file(&dir.join("matrix.fmx"))?;
    }
    write_json(&dir.join("timing.json"), &outcome.timing)?;
    // Written last: its presence marks the cell complete.
    let tmp = dir.join("result.json.tmp");
    write_json(&tmp, &outcome.result)?;
    let done = dir.join("result.json");
    fs::rename(&tmp, &done).map_err(|e| Error::io(&done, e))
}

fn load_or_build_te_cache(log: &EventLog, out: &Path) -> Result<FeatureMatrix> {
    let path = out.join("te_cache.fmx");
    if path.exists() {
        let cache = FeatureMatrix::read_file(&path)?;
        if cache.row_ids.len() == log.len() && cache.row_ids.iter().zip(&log.events).all(|(&a, e)| a == e.row_id) {
            return Ok(cache);
        }
        log::warn!("{} does not match the input log; rebuilding", path.display());
    }
    let cache = te_pass(log, TeParams::default())?.to_matrix(log);
    cache.write_file(&path)?;
    Ok(cache)
}

/// Runs every cell of `grid` not already complete under `out`. A failing
/// cell is recorded and the remaining cells still run.
pub fn run_sweep(log: &EventLog, grid: &SpecGrid, out: &Path, jobs: usize) -> Result<SweepSummary> {
    grid.validate()?;
    fs::create_dir_all(out.join("cells")).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("grid.json"), grid)?;
    let cells = grid.cells()?;
    let mut folds = BTreeMap::new();
    for &k in &grid.folds {
        folds.insert(k, build_fold(&log.events, k)?);
    }
    let needs_te = cells.iter().any(|c| c.te_on);
    let te_cache = if needs_te { Some(load_or_build_te_cache(log, out)?) } else { None };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let outcomes: Vec<(String, std::result::Result<bool, String>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let key = cell.key();
                let dir = cell_dir(out, &key);
                if dir.join("result.json").exists() {
                    return (key, Ok(false));
                }
                log::info!("cell {key}");
                let run = || -> Result<()> {
                    let exchange = dir.join("exchange");
                    let outcome = run_cell(
                        log,
                        &folds[&cell.fold_offset],
                        cell,
                        &grid.feature_config(cell),
                        te_cache.as_ref(),
                        &grid.learner,
                        Some(&exchange),
                    )?;
                    persist_cell(&dir, &outcome, grid.save_matrices)
                };
                match run() {
                    Ok(()) => (key, Ok(true)),
                    Err(e) => {
                        log::error!("cell {key} failed: {e}");
                        (key, Err(e.to_string()))
                    }
                }
            })
            .collect()
    });
    let mut summary = SweepSummary::default();
    for (key, r) in outcomes {
        match r {
            Ok(true) => summary.completed.push(key),
            Ok(false) => summary.skipped.push(key),
            Err(error) => summary.failed.push(CellFailure { key, error }),
        }
    }
    write_json(&out.join("sweep_status.json"), &summary)?;
    Ok(summary)
}

/// A completed cell read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedCell {
    pub result: CellResult,
    pub val: Predictions,
    pub test: Predictions,
}

impl LoadedCell {
    pub fn from_outcome(o: &CellOutcome) -> Self {
        LoadedCell {
            result: o.result.clone(),
            val: o.val.clone(),
            test: o.test.clone(),
        }
    }

    fn window(&self) -> Option<&WindowSpec> {
        self.result.cell.window.as_ref()
    }
}

/// Loads all completed cells, sorted by key.
pub fn load_results(dir: &Path) -> Result<Vec<LoadedCell>> {
    let cells_dir = dir.join("cells");
    let entries = fs::read_dir(&cells_dir).map_err(|e| Error::io(&cells_dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("result.json").exists())
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let path = p.join("result.json");
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Ok(LoadedCell {
                result: serde_json::from_str(&text)?,
                val: read_predictions(&p.join("predictions_val.csv"))?,
                test: read_predictions(&p.join("predictions_test.csv"))?,
            })
        })
        .collect()
}

/// Metrics recomputed from the stored predictions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbsoluteRow {
    pub fold_id: String,
    pub spec_key: String,
    pub n_features: usize,
    pub val: MetricPair,
    pub test: MetricPair,
    pub best_epoch: Option<usize>,
}

pub fn absolute_table(cells: &[LoadedCell]) -> Result<Vec<AbsoluteRow>> {
    let mut rows = cells
        .iter()
        .map(|c| {
            Ok(AbsoluteRow {
                fold_id: c.result.fold_id.clone(),
                spec_key: c.result.spec_key.clone(),
                n_features: c.result.n_features,
                val: MetricPair::of(&c.val)?,
                test: MetricPair::of(&c.test)?,
                best_epoch: c.result.best_epoch,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| (&a.spec_key, &a.fold_id).cmp(&(&b.spec_key, &b.fold_id)));
    Ok(rows)
}

/// Cells indexed by spec key, then fold id.
fn by_spec(cells: &[LoadedCell]) -> BTreeMap<String, BTreeMap<String, &LoadedCell>> {
    let mut m: BTreeMap<String, BTreeMap<String, &LoadedCell>> = BTreeMap::new();
    for c in cells {
        m.entry(c.result.spec_key.clone())
            .or_default()
            .insert(c.result.fold_id.clone(), c);
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeagueRow {
    pub rank: usize,
    pub spec_key: String,
    pub te_on: bool,
    /// `(fold_id, delta)` in fold order.
    pub fold_deltas: Vec<(String, f64)>,
    pub mean_delta: f64,
    pub ci: Interval,
}

/// Paired test-metric deltas of every spec against `baseline`, ranked by
/// mean delta (descending).
pub fn league_table(
    cells: &[LoadedCell],
    baseline: &str,
    metric: Metric,
    resamples: usize,
    seed: u64,
) -> Result<Vec<LeagueRow>> {
    let specs = by_spec(cells);
    let base = specs
        .get(baseline)
        .ok_or_else(|| Error::MissingResult(format!("baseline `{baseline}` has no results")))?;
    let mut rows = Vec::new();
    for (key, folds) in &specs {
        if base.keys().any(|f| !folds.contains_key(f)) {
            log::warn!("{key} lacks a fold of the baseline; left out of the league table");
            continue;
        }
        let mut fold_deltas = Vec::new();
        let mut aligned = Vec::new();
        for (fold, b) in base {
            let s = folds[fold];
            fold_deltas.push((fold.clone(), paired_delta(&s.test, &b.test, metric)?));
            aligned.push((s.test.clone(), s.test.align(&b.test)?));
        }
        let mean_delta = fold_deltas.iter().map(|d| d.1).sum::<f64>() / fold_deltas.len() as f64;
        let samples: Vec<PairedSample<'_>> = aligned
            .iter()
            .map(|(s, b)| PairedSample {
                spec: &s.scores,
                baseline: &b.scores,
                labels: &s.labels,
            })
            .collect();
        let ci = if key == baseline {
            Interval { low: 0.0, high: 0.0 }
        } else {
            bootstrap_mean_ci(&samples, metric, resamples, seed)?
        };
        let te_on = folds.values().next().is_some_and(|c| c.result.cell.te_on);
        rows.push(LeagueRow {
            rank: 0,
            spec_key: key.clone(),
            te_on,
            fold_deltas,
            mean_delta,
            ci,
        });
    }
    rows.sort_by(|a, b| b.mean_delta.total_cmp(&a.mean_delta).then_with(|| a.spec_key.cmp(&b.spec_key)));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrafficRow {
    pub lengths: String,
    pub shape: Shape,
    pub event_n: u32,
    pub te_on: bool,
    pub mean_delta: f64,
    pub sign: char,
}

pub fn sign_of(delta: f64) -> char {
    if delta > TRAFFIC_LIGHT_TOLERANCE {
        '+'
    } else if delta < -TRAFFIC_LIGHT_TOLERANCE {
        '-'
    } else {
        '0'
    }
}

fn mean_fold_delta(
    spec: &BTreeMap<String, &LoadedCell>,
    reference: &BTreeMap<String, &LoadedCell>,
    metric: Metric,
) -> Result<f64> {
    let mut deltas = Vec::new();
    for (fold, s) in spec {
        let r = reference
            .get(fold)
            .ok_or_else(|| Error::MissingResult(format!("no reference result for fold {fold}")))?;
        deltas.push(paired_delta(&s.test, &r.test, metric)?);
    }
    Ok(deltas.iter().sum::<f64>() / deltas.len().max(1) as f64)
}

/// Mean test delta of each non-trailing shape against trailing on the same
/// tuple and TE flag.
pub fn traffic_light(cells: &[LoadedCell], metric: Metric) -> Result<Vec<TrafficRow>> {
    let specs = by_spec(cells);
    let mut rows = Vec::new();
    for folds in specs.values() {
        let first = folds.values().next().expect("non-empty");
        let Some(w) = first.window() else { continue };
        if w.shape == Shape::Trailing {
            continue;
        }
        let trailing = WindowSpec {
            shape: Shape::Trailing,
            event_n: DEFAULT_EVENT_N,
            gap_hours: 1,
            lengths: w.lengths.clone(),
        };
        let te_on = first.result.cell.te_on;
        let ref_key = spec_key(Some(&trailing), te_on);
        let reference = specs
            .get(&ref_key)
            .ok_or_else(|| Error::MissingResult(format!("no trailing reference `{ref_key}`")))?;
        let mean_delta = mean_fold_delta(folds, reference, metric)?;
        rows.push(TrafficRow {
            lengths: w.lengths_label(),
            shape: w.shape,
            event_n: w.event_n,
            te_on,
            mean_delta,
            sign: sign_of(mean_delta),
        });
    }
    rows.sort_by(|a, b| {
        (&a.lengths, a.shape.as_str(), a.event_n, !a.te_on).cmp(&(&b.lengths, b.shape.as_str(), b.event_n, !b.te_on))
    });
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpliftRow {
    pub window: String,
    pub n_folds: usize,
    pub roc_auc_uplift: f64,
    pub pr_auc_uplift: f64,
}

/// Mean test uplift of TE on over TE off for each window spec.
pub fn te_uplift(cells: &[LoadedCell]) -> Result<Vec<UpliftRow>> {
    let mut pairs: BTreeMap<(String, String), [Option<&LoadedCell>; 2]> = BTreeMap::new();
    for c in cells {
        let Some(w) = c.window() else { continue };
        let slot = pairs.entry((w.key(), c.result.fold_id.clone())).or_default();
        slot[usize::from(c.result.cell.te_on)] = Some(c);
    }
    let mut acc: BTreeMap<String, (usize, f64, f64)> = BTreeMap::new();
    for ((window, fold), pair) in &pairs {
        let (Some(off), Some(on)) = (pair[0], pair[1]) else {
            return Err(Error::MissingResult(format!("{window} fold {fold} lacks its TE on/off partner")));
        };
        let e = acc.entry(window.clone()).or_default();
        e.0 += 1;
        e.1 += paired_delta(&on.test, &off.test, Metric::RocAuc)?;
        e.2 += paired_delta(&on.test, &off.test, Metric::PrAuc)?;
    }
    Ok(acc
        .into_iter()
        .map(|(window, (n, roc, pr))| UpliftRow {
            window,
            n_folds: n,
            roc_auc_uplift: roc / n as f64,
            pr_auc_uplift: pr / n as f64,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventNRow {
    pub event_n: u32,
    pub fold_id: String,
    pub val: MetricPair,
    pub test: MetricPair,
}

/// Event-count cells with TE on over `lengths`, ordered by N then fold.
pub fn event_n_sweep(cells: &[LoadedCell], lengths: &[u32]) -> Result<Vec<EventNRow>> {
    let mut rows = cells
        .iter()
        .filter(|c| {
            c.result.cell.te_on && c.window().is_some_and(|w| w.shape == Shape::Event50 && w.lengths == lengths)
        })
        .map(|c| {
            Ok(EventNRow {
                event_n: c.window().expect("filtered").event_n,
                fold_id: c.result.fold_id.clone(),
                val: MetricPair::of(&c.val)?,
                test: MetricPair::of(&c.test)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| (a.event_n, &a.fold_id).cmp(&(b.event_n, &b.fold_id)));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Spec key of the league-table baseline.
    pub baseline: String,
    pub metric: Metric,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
    /// Tuple whose event-count cells form the N sweep.
    pub event_sweep_lengths: Vec<u32>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        let baseline = WindowSpec::new(vec![1, 6, 24, 48, 168], Shape::Trailing).expect("valid");
        ReportOptions {
            baseline: spec_key(Some(&baseline), true),
            metric: Metric::RocAuc,
            bootstrap_resamples: 200,
            bootstrap_seed: 42,
            event_sweep_lengths: vec![1, 6, 24, 48, 168],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportIndex {
    pub n_cells: usize,
    pub options: ReportOptions,
    pub interval_method: String,
    pub files: BTreeMap<String, String>,
}

fn f(x: f64) -> String {
    format!("{x:.8}")
}

fn write_csv_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    write_file(path, &bytes)
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Writes the report CSVs and `index.json` from loaded cells.
pub fn write_reports(cells: &[LoadedCell], options: &ReportOptions, out: &Path) -> Result<ReportIndex> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut files = BTreeMap::new();

    let abs = absolute_table(cells)?;
    write_csv_rows(
        &out.join("absolute_metrics.csv"),
        &strings(&["spec", "fold_id", "n_features", "val_roc_auc", "val_pr_auc", "test_roc_auc", "test_pr_auc", "best_epoch"]),
        &abs.iter()
            .map(|r| {
                vec![
                    r.spec_key.clone(),
                    r.fold_id.clone(),
                    r.n_features.to_string(),
                    f(r.val.roc_auc),
                    f(r.val.pr_auc),
                    f(r.test.roc_auc),
                    f(r.test.pr_auc),
                    r.best_epoch.map_or(String::new(), |e| e.to_string()),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    files.insert("absolute_metrics".into(), "absolute_metrics.csv".into());

    let specs = by_spec(cells);
    if specs.contains_key(&options.baseline) {
        let league = league_table(
            cells,
            &options.baseline,
            options.metric,
            options.bootstrap_resamples,
            options.bootstrap_seed,
        )?;
        let fold_ids: Vec<String> = league
            .first()
            .map(|r| r.fold_deltas.iter().map(|d| d.0.clone()).collect())
            .unwrap_or_default();
        let mut header = strings(&["rank", "spec", "te"]);
        header.extend(fold_ids.iter().map(|f| format!("delta_{f}")));
        header.extend(strings(&["mean_delta", "ci_low", "ci_high"]));
        let rows: Vec<Vec<String>> = league
            .iter()
            .map(|r| {
                let mut row = vec![r.rank.to_string(), r.spec_key.clone(), r.te_on.to_string()];
                row.extend(r.fold_deltas.iter().map(|d| f(d.1)));
                row.extend([f(r.mean_delta), f(r.ci.low), f(r.ci.high)]);
                row
            })
            .collect();
        write_csv_rows(&out.join("league_table.csv"), &header, &rows)?;
        files.insert("league_table".into(), "league_table.csv".into());
    } else {
        log::warn!("baseline `{}` not in results; league table skipped", options.baseline);
    }

    let has_trailing = cells
        .iter()
        .any(|c| c.window().is_some_and(|w| w.shape == Shape::Trailing));
    if has_trailing {
        let tl = traffic_light(cells, options.metric)?;
        write_csv_rows(
            &out.join("traffic_light.csv"),
            &strings(&["lengths", "shape", "event_n", "te", "mean_delta", "sign"]),
            &tl.iter()
                .map(|r| {
                    vec![
                        r.lengths.clone(),
                        r.shape.to_string(),
                        r.event_n.to_string(),
                        r.te_on.to_string(),
                        f(r.mean_delta),
                        r.sign.to_string(),
                    ]
                })
                .collect::<Vec<_>>(),
        )?;
        files.insert("traffic_light".into(), "traffic_light.csv".into());
    }

    let has_off = cells.iter().any(|c| !c.result.cell.te_on);
    if has_off {
        let up = te_uplift(cells)?;
        write_csv_rows(
            &out.join("te_uplift.csv"),
            &strings(&["window", "n_folds", "roc_auc_uplift", "pr_auc_uplift"]),
            &up.iter()
                .map(|r| vec![r.window.clone(), r.n_folds.to_string(), f(r.roc_auc_uplift), f(r.pr_auc_uplift)])
                .collect::<Vec<_>>(),
        )?;
        files.insert("te_uplift".into(), "te_uplift.csv".into());
    }

    let sweep = event_n_sweep(cells, &options.event_sweep_lengths)?;
    if !sweep.is_empty() {
        write_csv_rows(
            &out.join("event_n_sweep.csv"),
            &strings(&["event_n", "fold_id", "val_roc_auc", "val_pr_auc", "test_roc_auc", "test_pr_auc"]),
            &sweep
                .iter()
                .map(|r| {
                    vec![
                        r.event_n.to_string(),
                        r.fold_id.clone(),
                        f(r.val.roc_auc),
                        f(r.val.pr_auc),
                        f(r.test.roc_auc),
                        f(r.test.pr_auc),
                    ]
                })
                .collect::<Vec<_>>(),
        )?;
        files.insert("event_n_sweep".into(), "event_n_sweep.csv".into());
    }

    let index = ReportIndex {
        n_cells: cells.len(),
        options: options.clone(),
        interval_method: format!(
            "paired percentile bootstrap over test rows within each fold, mean delta across folds, B={}, seed={}",
            options.bootstrap_resamples, options.bootstrap_seed
        ),
        files,
    };
    let mut text = serde_json::to_string_pretty(&index)?;
    text.push('\n');
    let path = out.join("index.json");
    let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(index)
}

/// Loads `results` and writes all reports to `out`.
pub fn report(results: &Path, options: &ReportOptions, out: &Path) -> Result<ReportIndex> {
    let cells = load_results(results)?;
    if cells.is_empty() {
        return Err(Error::MissingResult(format!("no completed cells under {}", results.display())));
    }
    write_reports(&cells, options, out)
}
