//! Synthetic hour-resolution click logs with Zipf-distributed entities,
//! per-entity click effects, daily drift and hour-of-day seasonality.
//!
//! The click logit of a row is
//! `logit(base_ctr) + drift(day) + seasonality(hour) + sum_c effect_c(value, hour)`
//! where each column effect is a static per-value draw plus a dynamic draw
//! that is redrawn every `volatility_period_hours`. All effects are pure
//! functions of the seed, so true probabilities can be recomputed from a
//! generated log.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal, Zipf};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    day_of, fnv1a64, hour_of_day, parse_timestamp, EventLog, HourIndex, LogSchema,
    AVAZU_CATEGORICAL_COLUMNS,
};
use crate::metrics::roc_auc;

const PROB_FLOOR: f64 = 1e-6;
const VALUE_MULTIPLIER: u32 = 0x9E37_79B1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub cardinality: u32,
    pub zipf_exponent: f64,
    /// Standard deviation of the static per-value logit effect.
    #[serde(default)]
    pub effect_scale: f64,
    /// Standard deviation of the per-period dynamic logit effect.
    #[serde(default)]
    pub volatility: f64,
    #[serde(default = "default_period")]
    pub volatility_period_hours: u32,
}

fn default_period() -> u32 {
    24
}

impl ColumnSpec {
    pub fn new(name: &str, cardinality: u32, zipf_exponent: f64) -> Self {
        ColumnSpec {
            name: name.into(),
            cardinality,
            zipf_exponent,
            effect_scale: 0.0,
            volatility: 0.0,
            volatility_period_hours: default_period(),
        }
    }

    pub fn effects(mut self, effect_scale: f64, volatility: f64) -> Self {
        self.effect_scale = effect_scale;
        self.volatility = volatility;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowsPerHour {
    pub mean: f64,
    /// Gamma-Poisson overdispersion; 0 gives plain Poisson counts.
    #[serde(default)]
    pub dispersion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_days: u32,
    /// First hour, `YYMMDDHH`.
    pub start: String,
    pub rows_per_hour: RowsPerHour,
    pub base_ctr: f64,
    /// Standard deviation of the per-day logit shift.
    pub drift_amplitude: f64,
    /// Peak logit amplitude of the 24-hour sinusoid.
    pub seasonality_amplitude: f64,
    pub columns: Vec<ColumnSpec>,
    pub seed: u64,
}

fn avazu_columns() -> Vec<ColumnSpec> {
    let table: [(&str, u32, f64, f64, f64); 21] = [
        ("C1", 7, 2.0, 0.1, 0.0),
        ("banner_pos", 7, 2.0, 0.1, 0.0),
        ("site_id", 800, 1.1, 0.4, 0.3),
        ("site_domain", 600, 1.1, 0.1, 0.0),
        ("site_category", 20, 1.5, 0.2, 0.0),
        ("app_id", 800, 1.1, 0.4, 0.3),
        ("app_domain", 200, 1.3, 0.1, 0.0),
        ("app_category", 30, 1.5, 0.1, 0.0),
        ("device_id", 20_000, 1.0, 0.3, 0.5),
        ("device_ip", 20_000, 0.9, 0.3, 0.6),
        ("device_model", 2_000, 1.1, 0.1, 0.0),
        ("device_type", 5, 2.0, 0.1, 0.0),
        ("device_conn_type", 4, 2.0, 0.1, 0.0),
        ("C14", 1_000, 1.1, 0.1, 0.0),
        ("C15", 8, 2.0, 0.05, 0.0),
        ("C16", 9, 2.0, 0.05, 0.0),
        ("C17", 300, 1.2, 0.1, 0.0),
        ("C18", 4, 1.5, 0.1, 0.0),
        ("C19", 60, 1.3, 0.05, 0.0),
        ("C20", 150, 1.2, 0.05, 0.0),
        ("C21", 60, 1.3, 0.1, 0.0),
    ];
    debug_assert!(table.iter().zip(AVAZU_CATEGORICAL_COLUMNS).all(|(t, c)| t.0 == c));
    table
        .iter()
        .map(|&(name, card, s, effect, vol)| ColumnSpec::new(name, card, s).effects(effect, vol))
        .collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_days: 10,
            start: "14102100".into(),
            rows_per_hour: RowsPerHour {
                mean: 1500.0,
                dispersion: 0.05,
            },
            base_ctr: 0.17,
            drift_amplitude: 0.1,
            seasonality_amplitude: 0.15,
            columns: avazu_columns(),
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_days == 0 {
            return bad("n_days must be at least 1".into());
        }
        parse_timestamp(&self.start)?;
        if negative(self.rows_per_hour.mean) || negative(self.rows_per_hour.dispersion) {
            return bad("rows_per_hour mean and dispersion must be non-negative".into());
        }
        if !(self.base_ctr > 0.0 && self.base_ctr < 1.0) {
            return bad("base_ctr must lie in (0, 1)".into());
        }
        if negative(self.drift_amplitude) || negative(self.seasonality_amplitude) {
            return bad("drift and seasonality amplitudes must be non-negative".into());
        }
        if self.columns.is_empty() {
            return bad("at least one column is required".into());
        }
        for c in &self.columns {
            if c.cardinality == 0 || c.volatility_period_hours == 0 {
                return bad(format!("column `{}`: cardinality and period must be positive", c.name));
            }
            if negative(c.zipf_exponent) || negative(c.effect_scale) || negative(c.volatility) {
                return bad(format!("column `{}`: negative distribution parameter", c.name));
            }
        }
        self.schema().validate()
    }

    pub fn schema(&self) -> LogSchema {
        LogSchema {
            categorical_columns: self.columns.iter().map(|c| c.name.clone()).collect(),
            ..LogSchema::avazu()
        }
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: SynthConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }
}

/// Standard normal draw keyed by an arbitrary tuple of integers.
fn keyed_normal(parts: &[u64]) -> f64 {
    let bytes: Vec<u8> = parts.iter().flat_map(|p| p.to_le_bytes()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(&bytes));
    rng.sample(StandardNormal)
}

const TAG_STATIC: u64 = 1;
const TAG_DYNAMIC: u64 = 2;
const TAG_DRIFT: u64 = 3;
const TAG_SALT: u64 = 4;

fn salt(seed: u64, column: usize) -> u32 {
    fnv1a64(&[seed.to_le_bytes(), TAG_SALT.to_le_bytes(), (column as u64).to_le_bytes()].concat()) as u32
}

fn inverse_multiplier(m: u32) -> u32 {
    // Newton iteration for the inverse of an odd number modulo 2^32.
    let mut x = m;
    for _ in 0..5 {
        x = x.wrapping_mul(2u32.wrapping_sub(m.wrapping_mul(x)));
    }
    x
}

/// Value string for a popularity rank: a bijective scramble of the rank.
pub fn value_string(seed: u64, column: usize, rank: u32) -> String {
    format!("{:08x}", rank.wrapping_mul(VALUE_MULTIPLIER) ^ salt(seed, column))
}

pub fn value_rank(seed: u64, column: usize, value: &str) -> Option<u32> {
    let x = u32::from_str_radix(value, 16).ok()?;
    Some((x ^ salt(seed, column)).wrapping_mul(inverse_multiplier(VALUE_MULTIPLIER)))
}

/// Precomputed generating model for one configuration.
pub struct ClickModel {
    config: SynthConfig,
    origin: HourIndex,
    statics: Vec<Vec<f64>>,
    base_logit: f64,
}

impl ClickModel {
    pub fn new(config: &SynthConfig) -> Result<Self> {
        config.validate()?;
        let statics = config
            .columns
            .iter()
            .enumerate()
            .map(|(c, spec)| {
                if spec.effect_scale == 0.0 {
                    return vec![0.0; spec.cardinality as usize];
                }
                (0..spec.cardinality)
                    .into_par_iter()
                    .map(|r| spec.effect_scale * keyed_normal(&[config.seed, TAG_STATIC, c as u64, u64::from(r)]))
                    .collect()
            })
            .collect();
        Ok(ClickModel {
            origin: parse_timestamp(&config.start)?,
            base_logit: (config.base_ctr / (1.0 - config.base_ctr)).ln(),
            config: config.clone(),
            statics,
        })
    }

    pub fn drift(&self, hour: HourIndex) -> f64 {
        if self.config.drift_amplitude == 0.0 {
            return 0.0;
        }
        let day = day_of(hour);
        self.config.drift_amplitude * keyed_normal(&[self.config.seed, TAG_DRIFT, day as u64])
    }

    pub fn seasonality(&self, hour: HourIndex) -> f64 {
        let phase = f64::from(hour_of_day(hour)) / 24.0 * std::f64::consts::TAU;
        self.config.seasonality_amplitude * phase.sin()
    }

    /// Logit contribution of rank `rank` in column `column` at `hour`.
    pub fn entity_effect(&self, column: usize, rank: u32, hour: HourIndex) -> f64 {
        let spec = &self.config.columns[column];
        let mut e = self.statics[column][rank as usize];
        if spec.volatility > 0.0 {
            let period = (hour - self.origin).div_euclid(i64::from(spec.volatility_period_hours));
            e += spec.volatility
                * keyed_normal(&[self.config.seed, TAG_DYNAMIC, column as u64, u64::from(rank), period as u64]);
        }
        e
    }

    /// True click probability and whether it was clamped.
    pub fn probability(&self, hour: HourIndex, ranks: &[u32]) -> (f64, bool) {
        let z = self.base_logit
            + self.drift(hour)
            + self.seasonality(hour)
            + ranks
                .iter()
                .enumerate()
                .map(|(c, &r)| self.entity_effect(c, r, hour))
                .sum::<f64>();
        let p = 1.0 / (1.0 + (-z).exp());
        let clamped = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        (clamped, clamped != p)
    }
}

#[derive(Debug, Clone)]
pub struct SynthLog {
    pub log: EventLog,
    /// True click probability of each row.
    pub probabilities: Vec<f64>,
    pub clamp_count: usize,
}

struct DayRows {
    rows: Vec<(HourIndex, bool, Vec<u32>, f64, bool)>,
}

fn generate_day(model: &ClickModel, samplers: &[Zipf<f64>], day: u32) -> Result<DayRows> {
    let cfg = &model.config;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::from(day));
    let first = model.origin + 24 * i64::from(day);
    let mut rows = Vec::new();
    for hour in first..first + 24 {
        let mean = cfg.rows_per_hour.mean;
        let lambda = if cfg.rows_per_hour.dispersion > 0.0 && mean > 0.0 {
            let k = 1.0 / cfg.rows_per_hour.dispersion;
            let g = Gamma::new(k, mean / k).map_err(|e| Error::Config(e.to_string()))?;
            g.sample(&mut rng)
        } else {
            mean
        };
        let n = if lambda > 0.0 {
            Poisson::new(lambda).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rng) as usize
        } else {
            0
        };
        for _ in 0..n {
            let ranks: Vec<u32> = samplers.iter().map(|z| z.sample(&mut rng) as u32 - 1).collect();
            let (p, clamped) = model.probability(hour, &ranks);
            let click = rng.random::<f64>() < p;
            rows.push((hour, click, ranks, p, clamped));
        }
    }
    Ok(DayRows { rows })
}

/// Generates the log. Days are drawn in parallel from per-day streams of
/// the seed and concatenated in order, so output depends only on the config.
fn negative(x: f64) -> bool {
    x.is_nan() || x < 0.0
}

pub fn generate(config: &SynthConfig) -> Result<SynthLog> {
    let model = ClickModel::new(config)?;
    let samplers = config
        .columns
        .iter()
        .map(|c| Zipf::new(f64::from(c.cardinality), c.zipf_exponent).map_err(|e| Error::Config(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let days = (0..config.n_days)
        .into_par_iter()
        .map(|d| generate_day(&model, &samplers, d))
        .collect::<Result<Vec<_>>>()?;

    let strings: Vec<Vec<String>> = config
        .columns
        .iter()
        .enumerate()
        .map(|(c, spec)| (0..spec.cardinality).map(|r| value_string(config.seed, c, r)).collect())
        .collect();
    let mut log = EventLog::new(config.schema());
    let mut probabilities = Vec::new();
    let mut clamp_count = 0;
    let mut values: Vec<&str> = Vec::with_capacity(config.columns.len());
    for (hour, click, ranks, p, clamped) in days.into_iter().flat_map(|d| d.rows) {
        values.clear();
        values.extend(ranks.iter().enumerate().map(|(c, &r)| strings[c][r as usize].as_str()));
        log.push(log.len() as u64 + 1, hour, click, &values)?;
        probabilities.push(p);
        clamp_count += usize::from(clamped);
    }
    Ok(SynthLog {
        log,
        probabilities,
        clamp_count,
    })
}

/// Recomputes the generating probabilities of `log` from `config`.
pub fn true_probabilities(config: &SynthConfig, log: &EventLog) -> Result<Vec<f64>> {
    let model = ClickModel::new(config)?;
    if log.schema.categorical_columns.len() != config.columns.len() {
        return Err(Error::Schema("log columns differ from the synthetic config".into()));
    }
    let ranks: Vec<Vec<u32>> = log
        .vocabularies
        .iter()
        .enumerate()
        .map(|(c, vocab)| {
            (0..vocab.len() as u32)
                .map(|code| {
                    value_rank(config.seed, c, vocab.value(code))
                        .filter(|&r| r < config.columns[c].cardinality)
                        .ok_or_else(|| Error::Schema(format!("value `{}` was not generated by this config", vocab.value(code))))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(log
        .events
        .par_iter()
        .map(|e| {
            let r: Vec<u32> = e.cats.iter().enumerate().map(|(c, &code)| ranks[c][code as usize]).collect();
            model.probability(e.hour, &r).0
        })
        .collect())
}

/// ROC AUC of the true probabilities: the ceiling any model can reach.
pub fn ground_truth_auc(config: &SynthConfig, log: &EventLog) -> Result<f64> {
    let p = true_probabilities(config, log)?;
    let labels: Vec<u8> = log.events.iter().map(|e| u8::from(e.click)).collect();
    roc_auc(&p, &labels)
}
