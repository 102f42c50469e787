//! Per-fold feature matrix assembly.
//!
//! Column order is fixed: `hour_of_day`, `prior_ctr` (TE on), the TE block in
//! schema column order, then the time-aggregation block in entity-key order.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::folds::{FoldAssignment, Split};
use crate::ingest::{hour_of_day, EventLog, LogSchema};
use crate::matrix::{FeatureMatrix, SplitTag};
use crate::timeagg::{Shape, TimeAggConfig, TimeAggEngine, WindowSpec, DEFAULT_ENTITY_KEYS};

/// One cell of the design grid minus the fold: which features to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// `None` builds the TE-only baseline.
    pub window: Option<WindowSpec>,
    pub te_on: bool,
    pub entity_keys: Vec<String>,
    #[serde(default)]
    pub timeagg: TimeAggConfig,
}

impl FeatureConfig {
    pub fn new(window: Option<WindowSpec>, te_on: bool) -> Self {
        FeatureConfig {
            window,
            te_on,
            entity_keys: DEFAULT_ENTITY_KEYS.iter().map(|s| s.to_string()).collect(),
            timeagg: TimeAggConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.te_on && self.window.is_none() {
            return Err(Error::Config("a feature set needs TE or a window spec".into()));
        }
        if let Some(w) = &self.window {
            w.validate(self.timeagg.horizon_cap)?;
        }
        Ok(())
    }
}

/// Closed-form column count for one grid cell.
pub fn expected_feature_count(
    spec: Option<&WindowSpec>,
    te_on: bool,
    n_cat_columns: usize,
    n_entity_keys: usize,
) -> usize {
    let base = 1 + usize::from(te_on);
    let te = if te_on { 2 * n_cat_columns } else { 0 };
    let agg = spec.map_or(0, |s| {
        n_entity_keys * (2 * s.lengths.len() + 1 + s.shape.extra_columns())
    });
    base + te + agg
}

pub fn feature_names(config: &FeatureConfig, schema: &LogSchema) -> Vec<String> {
    let mut names = vec!["hour_of_day".to_string()];
    if config.te_on {
        names.push("prior_ctr".into());
        for c in &schema.categorical_columns {
            names.push(format!("{c}__te"));
            names.push(format!("{c}__hist_imps"));
        }
    }
    if let Some(w) = &config.window {
        names.extend(w.column_names(&config.entity_keys));
    }
    names
}

/// Column indices in the TE cache for `prior_ctr` and each `<col>__te`,
/// `<col>__hist_imps` pair, keyed by row id.
struct TeLookup<'a> {
    cache: &'a FeatureMatrix,
    rows: HashMap<u64, usize>,
    columns: Vec<usize>,
}

impl<'a> TeLookup<'a> {
    fn new(cache: &'a FeatureMatrix, schema: &LogSchema) -> Result<Self> {
        let mut wanted = vec!["prior_ctr".to_string()];
        for c in &schema.categorical_columns {
            wanted.push(format!("{c}__te"));
            wanted.push(format!("{c}__hist_imps"));
        }
        let columns = wanted
            .iter()
            .map(|w| {
                cache
                    .column_index(w)
                    .ok_or_else(|| Error::ColumnMismatch(format!("TE cache lacks column `{w}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rows = HashMap::with_capacity(cache.n_rows());
        for (i, &id) in cache.row_ids.iter().enumerate() {
            if rows.insert(id, i).is_some() {
                return Err(Error::Alignment(format!("TE cache has duplicate row id {id}")));
            }
        }
        Ok(TeLookup { cache, rows, columns })
    }

    fn extend(&self, row_id: u64, out: &mut Vec<f32>) -> Result<()> {
        let &i = self
            .rows
            .get(&row_id)
            .ok_or_else(|| Error::Alignment(format!("row id {row_id} missing from TE cache")))?;
        let row = self.cache.row(i);
        out.extend(self.columns.iter().map(|&j| row[j]));
        Ok(())
    }
}

/// Builds the matrix for every row in the fold's span (train start through
/// test end), tagging each row with its split.
pub fn featurize_fold(
    log: &EventLog,
    fold: &FoldAssignment,
    config: &FeatureConfig,
    te_cache: Option<&FeatureMatrix>,
) -> Result<FeatureMatrix> {
    config.validate()?;
    log.check_sorted()?;
    let te = match (config.te_on, te_cache) {
        (true, Some(cache)) => Some(TeLookup::new(cache, &log.schema)?),
        (true, None) => return Err(Error::Config("TE features requested without a TE cache".into())),
        (false, _) => None,
    };
    let column_names = feature_names(config, &log.schema);
    let span = fold.span();
    let lo = log.events.partition_point(|e| e.hour < span.start);
    let hi = log.events.partition_point(|e| e.hour < span.end);
    let rows = &log.events[lo..hi];

    let mut engine = match &config.window {
        Some(w) => {
            let entity_columns = config
                .entity_keys
                .iter()
                .map(|k| log.schema.categorical_index(k))
                .collect::<Result<Vec<_>>>()?;
            let origin = log.events.first().map_or(0, |e| e.hour);
            Some(TimeAggEngine::new(w.clone(), config.timeagg, entity_columns, origin)?)
        }
        None => None,
    };

    let width = column_names.len();
    let mut values = Vec::with_capacity(rows.len() * width);
    let mut agg = Vec::new();
    for batch in rows.chunk_by(|a, b| a.hour == b.hour) {
        let hour = batch[0].hour;
        for event in batch {
            values.push(hour_of_day(hour) as f32);
            if let Some(te) = &te {
                te.extend(event.row_id, &mut values)?;
            }
            if let Some(engine) = &engine {
                agg.clear();
                engine.features_for(&event.cats, hour, &mut agg)?;
                values.extend(agg.iter().map(|&v| v as f32));
            }
        }
        if let Some(engine) = &mut engine {
            engine.advance_hour(hour, batch)?;
        }
    }
    debug_assert_eq!(values.len(), rows.len() * width);

    let matrix = FeatureMatrix {
        row_ids: rows.iter().map(|e| e.row_id).collect(),
        column_names,
        values,
        labels: rows.iter().map(|e| u8::from(e.click)).collect(),
        splits: rows
            .iter()
            .map(|e| SplitTag::from(fold.assign(e.hour)))
            .collect(),
    };
    debug_assert!(matrix.splits.iter().all(|&t| t != SplitTag::from(Split::Excluded)));
    Ok(matrix)
}

/// The shapes of the design grid.
pub fn default_shapes() -> Vec<Shape> {
    Shape::ALL.to_vec()
}
