//! Brute-force reference implementations used by the integration tests.
//!
//! Every feature is recomputed for each row by rescanning all earlier rows
//! of the log, with no incremental state.

#![allow(dead_code)]

use chronofeat_core::ingest::{EventLog, HourIndex, ImpressionEvent, LogSchema};
use chronofeat_core::timeagg::{Shape, WindowSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ALPHA: f64 = 1.0;
pub const BETA: f64 = 10.0;
pub const PRIOR_A: f64 = 1.0;
pub const PRIOR_B: f64 = 10.0;
pub const M: f64 = 100.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub imps: u64,
    pub clicks: u64,
}

fn limps(t: Tally) -> f64 {
    (1.0 + t.imps as f64).ln()
}

fn rate(t: Tally) -> f64 {
    (t.clicks as f64 + ALPHA) / (t.imps as f64 + ALPHA + BETA)
}

/// Rows strictly before the hour of row `i`.
fn history(events: &[ImpressionEvent], i: usize) -> &[ImpressionEvent] {
    let h = events[i].hour;
    let end = events.iter().position(|e| e.hour >= h).unwrap_or(events.len());
    &events[..end]
}

/// Tally of rows with `cats[col] == value` and hour in `[lo, hi)`.
pub fn tally(past: &[ImpressionEvent], col: usize, value: u32, lo: HourIndex, hi: HourIndex) -> Tally {
    let mut t = Tally::default();
    for e in past {
        if e.cats[col] == value && e.hour >= lo && e.hour < hi {
            t.imps += 1;
            t.clicks += u64::from(e.click);
        }
    }
    t
}

/// `(prior_ctr, [(te, hist_imps); n_columns])` for row `i`.
pub fn te_row(events: &[ImpressionEvent], i: usize) -> (f64, Vec<(f64, f64)>) {
    let past = history(events, i);
    let clicks = past.iter().filter(|e| e.click).count() as f64;
    let prior = (clicks + PRIOR_A) / (past.len() as f64 + PRIOR_A + PRIOR_B);
    let cols = events[i]
        .cats
        .iter()
        .enumerate()
        .map(|(c, &v)| {
            let t = tally(past, c, v, HourIndex::MIN, HourIndex::MAX);
            let te = if t.imps == 0 {
                prior
            } else {
                (t.clicks as f64 + M * prior) / (t.imps as f64 + M)
            };
            (te, limps(t))
        })
        .collect();
    (prior, cols)
}

fn day_start(hour: HourIndex) -> HourIndex {
    hour.div_euclid(24) * 24
}

fn tally_of(mine: &[(HourIndex, bool)], lo: HourIndex, hi: HourIndex) -> Tally {
    let mut t = Tally::default();
    for &(h, c) in mine {
        if h >= lo && h < hi {
            t.imps += 1;
            t.clicks += u64::from(c);
        }
    }
    t
}

/// Time-aggregation features of row `i` in emission order.
pub fn timeagg_row(
    events: &[ImpressionEvent],
    i: usize,
    spec: &WindowSpec,
    entity_cols: &[usize],
    origin: HourIndex,
) -> Vec<f64> {
    let past = history(events, i);
    let h = events[i].hour;
    let mut out = Vec::new();
    let pair = |out: &mut Vec<f64>, t: Tally| {
        out.push(limps(t));
        out.push(rate(t));
    };
    for &col in entity_cols {
        let v = events[i].cats[col];
        // Earlier rows of this value, in stream order.
        let mine: Vec<(HourIndex, bool)> = past
            .iter()
            .filter(|e| e.cats[col] == v)
            .map(|e| (e.hour, e.click))
            .collect();
        let l = |len: u32| i64::from(len);
        match spec.shape {
            Shape::Trailing | Shape::Calendar | Shape::Event50 => {
                for &len in &spec.lengths {
                    pair(&mut out, tally_of(&mine, h - l(len), h));
                }
            }
            Shape::Gap1 => {
                let g = i64::from(spec.gap_hours);
                for &len in &spec.lengths {
                    pair(&mut out, tally_of(&mine, h - l(len) - g, h - g));
                }
            }
            Shape::Bucket => {
                let mut prev = 0;
                for &len in &spec.lengths {
                    pair(&mut out, tally_of(&mine, h - l(len), h - prev));
                    prev = l(len);
                }
            }
        }
        match spec.shape {
            Shape::Calendar => {
                let d0 = day_start(h);
                pair(&mut out, tally_of(&mine, d0, h));
                if origin > d0 - 24 {
                    out.extend([f64::NAN, f64::NAN]);
                } else {
                    pair(&mut out, tally_of(&mine, d0 - 24, d0));
                }
            }
            Shape::Event50 => {
                let mut t = Tally::default();
                for &(_, c) in mine.iter().rev().take(spec.event_n as usize) {
                    t.imps += 1;
                    t.clicks += u64::from(c);
                }
                pair(&mut out, t);
            }
            _ => {}
        }
        out.push(mine.last().map_or(f64::NAN, |&(s, _)| (h - s) as f64));
    }
    out
}

/// Bitwise equality that treats every NaN as equal to every other NaN.
pub fn same(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || a.to_bits() == b.to_bits()
}

/// Random log knobs.
#[derive(Debug, Clone, Copy)]
pub struct LogShape {
    pub rows: usize,
    pub hours: i64,
    pub cardinality: u32,
    pub columns: usize,
    pub ctr: f64,
    /// First hour offset inside its day, so logs can start mid-day.
    pub start_offset: i64,
}

pub fn schema(columns: usize) -> LogSchema {
    LogSchema {
        categorical_columns: (0..columns).map(|c| format!("c{c}")).collect(),
        ..LogSchema::avazu()
    }
}

/// Hour-sorted random log with skewed values and occasional gaps in time.
pub fn random_log(seed: u64, shape: LogShape) -> EventLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hours: Vec<i64> = (0..shape.rows)
        .map(|_| {
            // sqrt of a uniform puts more rows late; sparse early hours leave gaps.
            let u: f64 = rng.random();
            (u.sqrt() * shape.hours as f64) as i64
        })
        .collect();
    hours.sort_unstable();
    let base = 24 * 16_000 + shape.start_offset;
    let mut log = EventLog::new(schema(shape.columns));
    for (k, h) in hours.into_iter().enumerate() {
        let values: Vec<String> = (0..shape.columns)
            .map(|_| {
                let u: f64 = rng.random();
                format!("v{}", (u * u * f64::from(shape.cardinality)) as u32)
            })
            .collect();
        let refs: Vec<&str> = values.iter().map(String::as_str).collect();
        log.push(k as u64 * 7 + 3, base + h, rng.random_bool(shape.ctr), &refs)
            .expect("valid row");
    }
    log
}

pub fn random_shape(rng: &mut ChaCha8Rng, max_rows: usize) -> LogShape {
    LogShape {
        rows: rng.random_range(1..=max_rows),
        hours: rng.random_range(1..=400),
        cardinality: rng.random_range(1..=60),
        columns: rng.random_range(2..=5),
        ctr: rng.random_range(0.02..0.6),
        start_offset: rng.random_range(0..24),
    }
}

/// Random strictly ascending length tuple with values up to `cap`.
pub fn random_lengths(rng: &mut ChaCha8Rng, cap: u32) -> Vec<u32> {
    let k = rng.random_range(1..=5);
    let mut v: Vec<u32> = (0..k).map(|_| rng.random_range(1..=cap)).collect();
    v.sort_unstable();
    v.dedup();
    v
}
