//! Ranking metrics, paired comparisons and descriptive statistics.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{day_of, format_day_iso, DayIndex, EventLog, ImpressionEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    RocAuc,
    PrAuc,
}

impl Metric {
    pub fn compute(self, scores: &[f64], labels: &[u8]) -> Result<f64> {
        match self {
            Metric::RocAuc => roc_auc(scores, labels),
            Metric::PrAuc => pr_auc(scores, labels),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::RocAuc => "roc_auc",
            Metric::PrAuc => "pr_auc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub n_pos: u64,
    pub n_neg: u64,
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::Alignment(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score".into()));
    }
    let mut n_pos = 0u64;
    for &l in labels {
        match l {
            0 => {}
            1 => n_pos += 1,
            other => return Err(Error::UndefinedMetric(format!("label {other} is not binary"))),
        }
    }
    Ok((n_pos, labels.len() as u64 - n_pos))
}

/// Indices sorted by score, descending when `desc`.
fn order(scores: &[f64], desc: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_unstable_by(|&a, &b| {
        let o = scores[a].total_cmp(&scores[b]);
        if desc {
            o.reverse()
        } else {
            o
        }
    });
    idx
}

/// Mann-Whitney AUC with half credit for ties, via midrank sums.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "ROC AUC needs at least one positive and one negative".into(),
        ));
    }
    let idx = order(scores, false);
    // Twice the positive rank sum, in integers: a tie group spanning 0-based
    // positions [start, end) has midrank (start + 1 + end) / 2.
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && scores[idx[end]] == scores[idx[start]] {
            end += 1;
        }
        let pos = idx[start..end].iter().filter(|&&i| labels[i] == 1).count() as u128;
        twice_rank_sum += pos * (start + 1 + end) as u128;
        start = end;
    }
    let twice_u = twice_rank_sum - u128::from(n_pos) * u128::from(n_pos + 1);
    Ok(twice_u as f64 / (2 * u128::from(n_pos) * u128::from(n_neg)) as f64)
}

/// Average precision; tied scores form one group evaluated at its end.
pub fn pr_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (n_pos, _) = check_inputs(scores, labels)?;
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("PR AUC needs at least one positive".into()));
    }
    let idx = order(scores, true);
    let (mut tp, mut seen) = (0u64, 0u64);
    let mut total = 0.0;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && scores[idx[end]] == scores[idx[start]] {
            end += 1;
        }
        let group_tp = idx[start..end].iter().filter(|&&i| labels[i] == 1).count() as u64;
        tp += group_tp;
        seen += (end - start) as u64;
        if group_tp > 0 {
            total += group_tp as f64 * (tp as f64 / seen as f64);
        }
        start = end;
    }
    Ok(total / n_pos as f64)
}

pub fn evaluate(scores: &[f64], labels: &[u8]) -> Result<MetricResult> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    Ok(MetricResult {
        roc_auc: roc_auc(scores, labels)?,
        pr_auc: pr_auc(scores, labels)?,
        n_pos,
        n_neg,
    })
}

/// Scores joined to labels by row id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Predictions {
    pub row_ids: Vec<u64>,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    pub fn metric(&self, metric: Metric) -> Result<f64> {
        metric.compute(&self.scores, &self.labels)
    }

    /// Reorders `other` to this row order. Errors unless both cover the
    /// same row set with the same labels.
    pub fn align(&self, other: &Predictions) -> Result<Predictions> {
        if self.len() != other.len() {
            return Err(Error::Alignment(format!(
                "row sets differ in size: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        let index: HashMap<u64, usize> = other
            .row_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();
        let mut out = Predictions::default();
        for (k, &id) in self.row_ids.iter().enumerate() {
            let &j = index
                .get(&id)
                .ok_or_else(|| Error::Alignment(format!("row id {id} missing from comparison set")))?;
            if other.labels[j] != self.labels[k] {
                return Err(Error::Alignment(format!("label mismatch for row id {id}")));
            }
            out.row_ids.push(id);
            out.scores.push(other.scores[j]);
            out.labels.push(other.labels[j]);
        }
        Ok(out)
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Predictions> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let (id_i, score_i) = (col("row_id")?, col("score")?);
        let label_i = headers.iter().position(|h| h == "label");
        let mut out = Predictions::default();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let parse_err = |what: &str| Error::Parse {
                line,
                message: format!("bad {what}"),
            };
            out.row_ids.push(record[id_i].parse().map_err(|_| parse_err("row_id"))?);
            out.scores.push(record[score_i].parse().map_err(|_| parse_err("score"))?);
            if let Some(li) = label_i {
                out.labels.push(record[li].parse().map_err(|_| parse_err("label"))?);
            }
        }
        Ok(out)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["row_id", "score", "label"])?;
        for i in 0..self.len() {
            writer.write_record([
                self.row_ids[i].to_string(),
                format!("{:e}", self.scores[i]),
                self.labels[i].to_string(),
            ])?;
        }
        writer.flush().map_err(|e| Error::io("<predictions>", e))?;
        Ok(())
    }
}

/// Joins a `row_id,score` file to a `row_id,label` file.
pub fn join_labels(scores: &Predictions, labels: &HashMap<u64, u8>) -> Result<Predictions> {
    let mut out = scores.clone();
    out.labels = scores
        .row_ids
        .iter()
        .map(|id| {
            labels
                .get(id)
                .copied()
                .ok_or_else(|| Error::Alignment(format!("no label for row id {id}")))
        })
        .collect::<Result<_>>()?;
    Ok(out)
}

/// `metric(spec) - metric(baseline)` over the identical row set.
pub fn paired_delta(spec: &Predictions, baseline: &Predictions, metric: Metric) -> Result<f64> {
    let aligned = spec.align(baseline)?;
    Ok(spec.metric(metric)? - aligned.metric(metric)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }

    pub fn excludes_zero(&self) -> bool {
        self.low > 0.0 || self.high < 0.0
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }
}

/// One fold's paired inputs: scores of the spec and of the baseline on the
/// same rows, in the same order.
#[derive(Debug, Clone, Copy)]
pub struct PairedSample<'a> {
    pub spec: &'a [f64],
    pub baseline: &'a [f64],
    pub labels: &'a [u8],
}

const MAX_REDRAWS: usize = 100;

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile (2.5%, 97.5%) interval of the mean paired delta over folds,
/// resampling rows within each fold. Resample `b` draws from its own ChaCha
/// stream, so results do not depend on scheduling.
pub fn bootstrap_mean_ci(folds: &[PairedSample<'_>], metric: Metric, resamples: usize, seed: u64) -> Result<Interval> {
    if resamples < 100 {
        return Err(Error::Config(format!("bootstrap needs B >= 100, got {resamples}")));
    }
    if folds.is_empty() {
        return Err(Error::Config("bootstrap over zero folds".into()));
    }
    for f in folds {
        if f.spec.len() != f.labels.len() || f.baseline.len() != f.labels.len() || f.labels.is_empty() {
            return Err(Error::Alignment("paired sample lengths differ".into()));
        }
    }
    let deltas = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let mut total = 0.0;
            for f in folds {
                let n = f.labels.len();
                let mut tries = 0;
                let idx = loop {
                    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                    let pos = idx.iter().filter(|&&i| f.labels[i] == 1).count();
                    let ok = match metric {
                        Metric::RocAuc => pos > 0 && pos < n,
                        Metric::PrAuc => pos > 0,
                    };
                    if ok {
                        break idx;
                    }
                    tries += 1;
                    if tries >= MAX_REDRAWS {
                        return Err(Error::UndefinedMetric(
                            "bootstrap kept drawing single-class resamples".into(),
                        ));
                    }
                };
                let labels: Vec<u8> = idx.iter().map(|&i| f.labels[i]).collect();
                let a: Vec<f64> = idx.iter().map(|&i| f.spec[i]).collect();
                let b: Vec<f64> = idx.iter().map(|&i| f.baseline[i]).collect();
                total += metric.compute(&a, &labels)? - metric.compute(&b, &labels)?;
            }
            Ok(total / folds.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut sorted = deltas;
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    Ok(Interval {
        low: quantile(&sorted, 0.025),
        high: quantile(&sorted, 0.975),
    })
}

/// Single-fold paired bootstrap interval for `metric(a) - metric(b)`.
pub fn bootstrap_ci(
    scores_a: &[f64],
    scores_b: &[f64],
    labels: &[u8],
    metric: Metric,
    resamples: usize,
    seed: u64,
) -> Result<Interval> {
    bootstrap_mean_ci(
        &[PairedSample {
            spec: scores_a,
            baseline: scores_b,
            labels,
        }],
        metric,
        resamples,
        seed,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DayCtr {
    pub day: DayIndex,
    pub date: String,
    pub n_rows: u64,
    pub ctr: f64,
}

pub fn eda_ctr_by_day(events: &[ImpressionEvent]) -> Vec<DayCtr> {
    let mut per_day: BTreeMap<DayIndex, (u64, u64)> = BTreeMap::new();
    for e in events {
        let entry = per_day.entry(day_of(e.hour)).or_default();
        entry.0 += 1;
        entry.1 += u64::from(e.click);
    }
    per_day
        .into_iter()
        .map(|(day, (n, c))| DayCtr {
            day,
            date: format_day_iso(day),
            n_rows: n,
            ctr: c as f64 / n as f64,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnseenRate {
    pub column: String,
    pub date: String,
    pub n_rows: u64,
    pub unseen_rate: f64,
}

/// Per day and column, the share of rows whose value never appeared on an
/// earlier day. The first day is 1.0 by definition.
pub fn eda_unseen_rate(log: &EventLog, columns: &[String]) -> Result<Vec<UnseenRate>> {
    let indices = columns
        .iter()
        .map(|c| log.schema.categorical_index(c))
        .collect::<Result<Vec<_>>>()?;
    let mut by_day: BTreeMap<DayIndex, Vec<&ImpressionEvent>> = BTreeMap::new();
    for e in &log.events {
        by_day.entry(day_of(e.hour)).or_default().push(e);
    }
    let mut out = Vec::new();
    for (name, &col) in columns.iter().zip(&indices) {
        let mut seen: HashSet<u32> = HashSet::new();
        for (&day, rows) in &by_day {
            let unseen = rows.iter().filter(|e| !seen.contains(&e.cats[col])).count();
            out.push(UnseenRate {
                column: name.clone(),
                date: format_day_iso(day),
                n_rows: rows.len() as u64,
                unseen_rate: unseen as f64 / rows.len() as f64,
            });
            seen.extend(rows.iter().map(|e| e.cats[col]));
        }
    }
    Ok(out)
}
