//! Time-aware target encoding with a one-hour label delay.
//!
//! Rows of hour `h` are encoded from state that reflects hours `< h` only;
//! hour-`h` labels are folded in after the whole hour has been encoded.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ingest::{hour_of_day, EventLog, HourIndex, ImpressionEvent};
use crate::matrix::{FeatureMatrix, SplitTag};

/// `ln(1 + n)`, the volume transform shared by all count features.
pub fn log_count(n: u64) -> f64 {
    (1.0 + n as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeParams {
    /// Pseudo-clicks of the global prior.
    pub prior_a: f64,
    /// Pseudo-non-clicks of the global prior.
    pub prior_b: f64,
    /// Smoothing strength towards the prior.
    pub m: f64,
}

impl Default for TeParams {
    fn default() -> Self {
        TeParams {
            prior_a: 1.0,
            prior_b: 10.0,
            m: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub impressions: u64,
    pub clicks: u64,
}

impl Counts {
    pub fn add(&mut self, click: bool) {
        self.impressions += 1;
        self.clicks += u64::from(click);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorState {
    pub history: Counts,
    pub a: f64,
    pub b: f64,
}

impl PriorState {
    pub fn new(a: f64, b: f64) -> Self {
        PriorState {
            history: Counts::default(),
            a,
            b,
        }
    }

    /// `(C + a) / (I + a + b)` over all hours before the current one.
    pub fn prior_ctr(&self) -> f64 {
        (self.history.clicks as f64 + self.a) / (self.history.impressions as f64 + self.a + self.b)
    }
}

pub fn prior_ctr(state: &PriorState) -> f64 {
    state.prior_ctr()
}

/// `(C_v + m * prior) / (I_v + m)`; exactly `prior` for an unseen value.
pub fn te_value(counts: Counts, prior: f64, m: f64) -> f64 {
    if counts.impressions == 0 {
        return prior;
    }
    (counts.clicks as f64 + m * prior) / (counts.impressions as f64 + m)
}

pub fn hist_imps(counts: Counts) -> f64 {
    log_count(counts.impressions)
}

/// Cumulative per-value counts for every categorical column.
#[derive(Debug, Clone)]
pub struct TeState {
    columns: Vec<Vec<Counts>>,
    pub m: f64,
}

impl TeState {
    pub fn new(n_columns: usize, m: f64) -> Self {
        TeState {
            columns: vec![Vec::new(); n_columns],
            m,
        }
    }

    pub fn counts(&self, column: usize, value: u32) -> Counts {
        self.columns[column]
            .get(value as usize)
            .copied()
            .unwrap_or_default()
    }

    pub fn te_value(&self, column: usize, value: u32, prior: f64) -> f64 {
        te_value(self.counts(column, value), prior, self.m)
    }

    pub fn hist_imps(&self, column: usize, value: u32) -> f64 {
        hist_imps(self.counts(column, value))
    }

    pub fn observe(&mut self, event: &ImpressionEvent) {
        for (column, &value) in event.cats.iter().enumerate() {
            let slots = &mut self.columns[column];
            if slots.len() <= value as usize {
                slots.resize(value as usize + 1, Counts::default());
            }
            slots[value as usize].add(event.click);
        }
    }
}

/// Per-row base and target-encoding features in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct TeFeatures {
    pub row_ids: Vec<u64>,
    pub hours: Vec<HourIndex>,
    pub prior_ctr: Vec<f64>,
    pub n_columns: usize,
    /// Row-major, `2 * n_columns` per row: `te, hist_imps` for each column.
    pub values: Vec<f64>,
}

impl TeFeatures {
    pub fn te(&self, row: usize, column: usize) -> f64 {
        self.values[row * 2 * self.n_columns + 2 * column]
    }

    pub fn hist_imps(&self, row: usize, column: usize) -> f64 {
        self.values[row * 2 * self.n_columns + 2 * column + 1]
    }

    pub fn column_names(schema_columns: &[String]) -> Vec<String> {
        let mut names = vec!["prior_ctr".to_string(), "hour_of_day".to_string()];
        for c in schema_columns {
            names.push(format!("{c}__te"));
            names.push(format!("{c}__hist_imps"));
        }
        names
    }

    /// The on-disk cache layout: `prior_ctr, hour_of_day, <col>__te, <col>__hist_imps...`.
    pub fn to_matrix(&self, log: &EventLog) -> FeatureMatrix {
        let names = Self::column_names(&log.schema.categorical_columns);
        let width = names.len();
        let mut values = Vec::with_capacity(self.row_ids.len() * width);
        for row in 0..self.row_ids.len() {
            values.push(self.prior_ctr[row] as f32);
            values.push(hour_of_day(self.hours[row]) as f32);
            let block = &self.values[row * 2 * self.n_columns..(row + 1) * 2 * self.n_columns];
            values.extend(block.iter().map(|&v| v as f32));
        }
        FeatureMatrix {
            row_ids: self.row_ids.clone(),
            column_names: names,
            values,
            labels: log.events.iter().map(|e| u8::from(e.click)).collect(),
            splits: vec![SplitTag::Unassigned; self.row_ids.len()],
        }
    }
}

/// One chronological pass with per-hour batching. Requires hour-sorted input.
pub fn te_pass(log: &EventLog, params: TeParams) -> Result<TeFeatures> {
    log.check_sorted()?;
    let n_columns = log.schema.categorical_columns.len();
    let n = log.events.len();
    let mut prior = PriorState::new(params.prior_a, params.prior_b);
    let mut state = TeState::new(n_columns, params.m);
    let mut out = TeFeatures {
        row_ids: Vec::with_capacity(n),
        hours: Vec::with_capacity(n),
        prior_ctr: Vec::with_capacity(n),
        n_columns,
        values: Vec::with_capacity(n * 2 * n_columns),
    };
    for batch in log.events.chunk_by(|a, b| a.hour == b.hour) {
        let p = prior.prior_ctr();
        for event in batch {
            out.row_ids.push(event.row_id);
            out.hours.push(event.hour);
            out.prior_ctr.push(p);
            for (column, &value) in event.cats.iter().enumerate() {
                let counts = state.counts(column, value);
                out.values.push(te_value(counts, p, state.m));
                out.values.push(hist_imps(counts));
            }
        }
        for event in batch {
            prior.history.add(event.click);
            state.observe(event);
        }
    }
    Ok(out)
}
