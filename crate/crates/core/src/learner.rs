//! Built-in logistic regression trained by mini-batch SGD with validation
//! early stopping, and the file exchange used to plug in external learners.
//!
//! Inputs are median-imputed and standardized with statistics of the
//! training split only. The bias is not penalized.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::metrics::{Metric, Predictions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LogisticSgd,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingValuePolicy {
    TrainMedianImpute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub model: ModelKind,
    pub learning_rate: f64,
    pub l2_penalty: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub early_stopping_patience: usize,
    pub eval_metric: Metric,
    pub seed: u64,
    pub missing_value_policy: MissingValuePolicy,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            model: ModelKind::LogisticSgd,
            learning_rate: 0.05,
            l2_penalty: 1e-5,
            max_epochs: 30,
            batch_size: 256,
            early_stopping_patience: 3,
            eval_metric: Metric::RocAuc,
            seed: 42,
            missing_value_policy: MissingValuePolicy::TrainMedianImpute,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.early_stopping_patience < 1 || self.batch_size < 1 || self.max_epochs < 1 {
            return Err(Error::Config(
                "patience, batch_size and max_epochs must be at least 1".into(),
            ));
        }
        if self.l2_penalty.is_nan() || self.l2_penalty < 0.0 {
            return Err(Error::Config("l2_penalty must be non-negative".into()));
        }
        Ok(())
    }
}

/// Train-split imputation and scaling statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub medians: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Preprocessor {
    pub fn fit(train: &FeatureMatrix) -> Self {
        let d = train.n_cols();
        let mut medians = Vec::with_capacity(d);
        let mut means = Vec::with_capacity(d);
        let mut stds = Vec::with_capacity(d);
        for j in 0..d {
            let mut present: Vec<f32> = train.column(j).filter(|v| !v.is_nan()).collect();
            let median = if present.is_empty() {
                0.0
            } else {
                present.sort_unstable_by(f32::total_cmp);
                let n = present.len();
                if n % 2 == 1 {
                    f64::from(present[n / 2])
                } else {
                    (f64::from(present[n / 2 - 1]) + f64::from(present[n / 2])) / 2.0
                }
            };
            let n = train.n_rows().max(1) as f64;
            let filled = || train.column(j).map(|v| if v.is_nan() { median } else { f64::from(v) });
            let mean = filled().sum::<f64>() / n;
            let var = filled().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            medians.push(median);
            means.push(mean);
            stds.push(if std > 1e-12 { std } else { 1.0 });
        }
        Preprocessor { medians, means, stds }
    }

    /// Dense standardized copy, row-major.
    pub fn transform(&self, m: &FeatureMatrix) -> Vec<f32> {
        let d = m.n_cols();
        let mut out = Vec::with_capacity(m.values.len());
        for (k, &v) in m.values.iter().enumerate() {
            let j = k % d;
            let x = if v.is_nan() { self.medians[j] } else { f64::from(v) };
            out.push(((x - self.means[j]) / self.stds[j]) as f32);
        }
        out
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z)) - y z`, stable for large |z|.
fn log_loss(z: f64, y: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
}

/// Mean log-loss plus `l2 / 2 * |w|^2` over a dense row-major design.
pub struct LogisticObjective<'a> {
    pub x: &'a [f32],
    pub y: &'a [u8],
    pub dim: usize,
    pub l2: f64,
}

impl LogisticObjective<'_> {
    fn margin(&self, i: usize, w: &[f64], b: f64) -> f64 {
        let row = &self.x[i * self.dim..(i + 1) * self.dim];
        b + row.iter().zip(w).map(|(&x, &w)| f64::from(x) * w).sum::<f64>()
    }

    pub fn loss(&self, w: &[f64], b: f64) -> f64 {
        let n = self.y.len();
        let data: f64 = (0..n)
            .map(|i| log_loss(self.margin(i, w, b), f64::from(self.y[i])))
            .sum::<f64>()
            / n as f64;
        data + 0.5 * self.l2 * w.iter().map(|v| v * v).sum::<f64>()
    }

    /// Gradient of [`Self::loss`] over the rows in `rows`.
    pub fn gradient_on(&self, rows: &[usize], w: &[f64], b: f64, gw: &mut [f64]) -> f64 {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for &i in rows {
            let r = sigmoid(self.margin(i, w, b)) - f64::from(self.y[i]);
            let row = &self.x[i * self.dim..(i + 1) * self.dim];
            for (g, &x) in gw.iter_mut().zip(row) {
                *g += r * f64::from(x);
            }
            gb += r;
        }
        let inv = 1.0 / rows.len() as f64;
        for (g, &wj) in gw.iter_mut().zip(w) {
            *g = *g * inv + self.l2 * wj;
        }
        gb * inv
    }

    pub fn gradient(&self, w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let rows: Vec<usize> = (0..self.y.len()).collect();
        let mut gw = vec![0.0; self.dim];
        let gb = self.gradient_on(&rows, w, b, &mut gw);
        (gw, gb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub val_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub columns: Vec<String>,
    pub preprocessor: Preprocessor,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub best_epoch: usize,
    pub best_val_metric: f64,
    pub eval_metric: Metric,
    pub history: Vec<EpochRecord>,
}

fn check_labels(m: &FeatureMatrix, what: &str) -> Result<(usize, usize)> {
    let mut pos = 0;
    for &l in &m.labels {
        match l {
            0 => {}
            1 => pos += 1,
            other => return Err(Error::Training(format!("{what} label {other} is not binary"))),
        }
    }
    Ok((pos, m.labels.len() - pos))
}

fn margins(x: &[f32], n: usize, dim: usize, w: &[f64], b: f64) -> Vec<f64> {
    if dim == 0 {
        return vec![b; n];
    }
    x.par_chunks(dim)
        .map(|row| b + row.iter().zip(w).map(|(&x, &w)| f64::from(x) * w).sum::<f64>())
        .collect()
}

pub fn fit(train: &FeatureMatrix, val: &FeatureMatrix, config: &LearnerConfig) -> Result<FittedModel> {
    config.validate()?;
    if config.model != ModelKind::LogisticSgd {
        return Err(Error::Config("fit() only trains the built-in logistic model".into()));
    }
    if train.column_names != val.column_names {
        return Err(Error::ColumnMismatch("train and val columns differ".into()));
    }
    let (pos, neg) = check_labels(train, "train")?;
    if pos == 0 || neg == 0 {
        return Err(Error::Training("training labels contain a single class".into()));
    }
    check_labels(val, "val")?;

    let dim = train.n_cols();
    let pre = Preprocessor::fit(train);
    let xt = pre.transform(train);
    let xv = pre.transform(val);
    let objective = LogisticObjective {
        x: &xt,
        y: &train.labels,
        dim,
        l2: config.l2_penalty,
    };

    let mut w = vec![0.0; dim];
    let mut b = (pos as f64 / neg as f64).ln();
    let mut gw = vec![0.0; dim];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.n_rows()).collect();

    let mut best = (f64::NEG_INFINITY, 0usize, w.clone(), b);
    let mut history = Vec::new();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let gb = objective.gradient_on(batch, &w, b, &mut gw);
            for (wj, g) in w.iter_mut().zip(&gw) {
                *wj -= config.learning_rate * g;
            }
            b -= config.learning_rate * gb;
        }
        let scores: Vec<f64> = margins(&xv, val.n_rows(), dim, &w, b).into_iter().map(sigmoid).collect();
        let metric = config.eval_metric.compute(&scores, &val.labels)?;
        history.push(EpochRecord {
            epoch,
            val_metric: metric,
        });
        if metric > best.0 {
            best = (metric, epoch, w.clone(), b);
        } else if epoch - best.1 >= config.early_stopping_patience {
            break;
        }
    }
    let (best_val_metric, best_epoch, weights, bias) = best;
    Ok(FittedModel {
        columns: train.column_names.clone(),
        preprocessor: pre,
        weights,
        bias,
        best_epoch,
        best_val_metric,
        eval_metric: config.eval_metric,
        history,
    })
}

impl FittedModel {
    pub fn predict_proba(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        if m.column_names != self.columns {
            return Err(Error::ColumnMismatch("matrix columns differ from training columns".into()));
        }
        let x = self.preprocessor.transform(m);
        Ok(margins(&x, m.n_rows(), self.columns.len(), &self.weights, self.bias)
            .into_iter()
            .map(sigmoid)
            .collect())
    }

    pub fn predictions(&self, m: &FeatureMatrix) -> Result<Predictions> {
        Ok(Predictions {
            row_ids: m.row_ids.clone(),
            scores: self.predict_proba(m)?,
            labels: m.labels.clone(),
        })
    }
}

pub fn predict_proba(model: &FittedModel, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
    model.predict_proba(matrix)
}

/// Reference gradient-boosted-tree configuration written into exchange
/// manifests for external learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XgbReference {
    pub objective: String,
    pub n_estimators: u32,
    pub learning_rate: f64,
    pub max_depth: u32,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub min_child_weight: f64,
    pub reg_lambda: f64,
    pub random_state: u64,
    pub n_jobs: u32,
    pub tree_method: String,
    pub early_stopping_rounds: u32,
    pub eval_metric: Vec<String>,
}

impl Default for XgbReference {
    fn default() -> Self {
        XgbReference {
            objective: "binary:logistic".into(),
            n_estimators: 800,
            learning_rate: 0.05,
            max_depth: 6,
            subsample: 0.8,
            colsample_bytree: 0.8,
            min_child_weight: 10.0,
            reg_lambda: 5.0,
            random_state: 42,
            n_jobs: 1,
            tree_method: "hist".into(),
            early_stopping_rounds: 50,
            eval_metric: vec!["auc".into(), "aucpr".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeManifest {
    pub format_version: u32,
    pub splits: Vec<String>,
    pub matrix_files: Vec<String>,
    pub csv_files: Vec<String>,
    pub expected_predictions: Vec<String>,
    pub n_features: usize,
    pub columns: Vec<String>,
    pub reference_hyperparameters: XgbReference,
}

/// Writes `{train,val,test}.fmx`, the CSV twins and `manifest.json`.
pub fn write_exchange(dir: &Path, train: &FeatureMatrix, val: &FeatureMatrix, test: &FeatureMatrix) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, m) in [("train", train), ("val", val), ("test", test)] {
        m.write_file(&dir.join(format!("{name}.fmx")))?;
        m.write_csv_file(&dir.join(format!("{name}.csv")))?;
    }
    let manifest = ExchangeManifest {
        format_version: 1,
        splits: vec!["train".into(), "val".into(), "test".into()],
        matrix_files: vec!["train.fmx".into(), "val.fmx".into(), "test.fmx".into()],
        csv_files: vec!["train.csv".into(), "val.csv".into(), "test.csv".into()],
        expected_predictions: vec!["predictions_val.csv".into(), "predictions_test.csv".into()],
        n_features: train.n_cols(),
        columns: train.column_names.clone(),
        reference_hyperparameters: XgbReference::default(),
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
}

/// Reads `predictions_<split>.csv` (`row_id,score`) and joins it onto the
/// matrix rows by id.
pub fn read_external_predictions(dir: &Path, split: &str, matrix: &FeatureMatrix) -> Result<Predictions> {
    let path = dir.join(format!("predictions_{split}.csv"));
    let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let raw = Predictions::read_csv(std::io::BufReader::new(file))?;
    let mut by_id = HashMap::with_capacity(raw.len());
    for (&id, &s) in raw.row_ids.iter().zip(&raw.scores) {
        if by_id.insert(id, s).is_some() {
            return Err(Error::Alignment(format!("{}: duplicate row id {id}", path.display())));
        }
    }
    if by_id.len() != matrix.n_rows() {
        return Err(Error::Alignment(format!(
            "{}: {} predictions for {} rows",
            path.display(),
            by_id.len(),
            matrix.n_rows()
        )));
    }
    let scores = matrix
        .row_ids
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| Error::Alignment(format!("{}: no prediction for row id {id}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Predictions {
        row_ids: matrix.row_ids.clone(),
        scores,
        labels: matrix.labels.clone(),
    })
}
