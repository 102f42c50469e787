//! Rolling-tail out-of-time folds.
//!
//! Fold `k` tests on day `D - k`, validates on `D - k - 1` and trains on every
//! earlier day, where `D` is the last day with any rows.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{day_of, format_hour_iso, DayIndex, HourIndex, ImpressionEvent};

/// Half-open hour interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HourRange {
    pub start: HourIndex,
    pub end: HourIndex,
}

impl HourRange {
    pub fn days(first: DayIndex, last_inclusive: DayIndex) -> Self {
        HourRange {
            start: first * 24,
            end: (last_inclusive + 1) * 24,
        }
    }

    pub fn contains(&self, hour: HourIndex) -> bool {
        self.start <= hour && hour < self.end
    }

    pub fn last_hour(&self) -> HourIndex {
        self.end - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Excluded,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Excluded => "excluded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: Split,
    pub start_hour: HourIndex,
    /// Last hour of the interval (inclusive), as reported in split tables.
    pub end_hour: HourIndex,
    pub n_rows: u64,
    pub clicks: u64,
    pub click_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_id: String,
    pub offset: u32,
    pub train: HourRange,
    pub val: HourRange,
    pub test: HourRange,
    /// Train, val, test in that order.
    pub stats: [SplitStats; 3],
    /// Set when the last day of the input has fewer than 24 distinct hours.
    pub partial_final_day: bool,
}

/// "A" for offset 0, "B" for 1, and so on.
pub fn fold_label(offset: u32) -> String {
    if offset < 26 {
        char::from(b'A' + offset as u8).to_string()
    } else {
        format!("F{offset}")
    }
}

/// Accepts letters (`A,B`) or offsets (`0,1`).
pub fn parse_fold_list(text: &str) -> Result<Vec<u32>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            if let Ok(k) = s.parse::<u32>() {
                return Ok(k);
            }
            let bytes = s.as_bytes();
            if bytes.len() == 1 && bytes[0].is_ascii_uppercase() {
                return Ok(u32::from(bytes[0] - b'A'));
            }
            Err(Error::Config(format!("unrecognised fold `{s}`")))
        })
        .collect()
}

impl FoldAssignment {
    pub fn assign(&self, hour: HourIndex) -> Split {
        if self.train.contains(hour) {
            Split::Train
        } else if self.val.contains(hour) {
            Split::Val
        } else if self.test.contains(hour) {
            Split::Test
        } else {
            Split::Excluded
        }
    }

    /// Train start through test end.
    pub fn span(&self) -> HourRange {
        HourRange {
            start: self.train.start,
            end: self.test.end,
        }
    }

    pub fn split_stats(&self, split: Split) -> Option<&SplitStats> {
        self.stats.iter().find(|s| s.split == split)
    }
}

pub fn assign_split(event: &ImpressionEvent, fold: &FoldAssignment) -> Split {
    fold.assign(event.hour)
}

pub fn build_fold(events: &[ImpressionEvent], offset: u32) -> Result<FoldAssignment> {
    let required = offset as usize + 3;
    let (Some(first), Some(last)) = (
        events.iter().map(|e| day_of(e.hour)).min(),
        events.iter().map(|e| day_of(e.hour)).max(),
    ) else {
        return Err(Error::InsufficientDays {
            required,
            available: 0,
        });
    };
    let span_days = (last - first + 1) as usize;
    if span_days < required {
        return Err(Error::InsufficientDays {
            required,
            available: span_days,
        });
    }
    let test_day = last - i64::from(offset);
    let train = HourRange::days(first, test_day - 2);
    let val = HourRange::days(test_day - 1, test_day - 1);
    let test = HourRange::days(test_day, test_day);

    let mut counts = [(0u64, 0u64); 3];
    let mut final_hours = std::collections::BTreeSet::new();
    for e in events {
        if day_of(e.hour) == last {
            final_hours.insert(e.hour);
        }
        let slot = if train.contains(e.hour) {
            0
        } else if val.contains(e.hour) {
            1
        } else if test.contains(e.hour) {
            2
        } else {
            continue;
        };
        counts[slot].0 += 1;
        counts[slot].1 += u64::from(e.click);
    }
    let stat = |split, range: HourRange, (n_rows, clicks): (u64, u64)| SplitStats {
        split,
        start_hour: range.start,
        end_hour: range.last_hour(),
        n_rows,
        clicks,
        click_rate: if n_rows == 0 { 0.0 } else { clicks as f64 / n_rows as f64 },
    };
    let partial_final_day = final_hours.len() < 24;
    if partial_final_day {
        log::warn!(
            "final day has only {} distinct hours; treating it as day D anyway",
            final_hours.len()
        );
    }
    Ok(FoldAssignment {
        fold_id: fold_label(offset),
        offset,
        train,
        val,
        test,
        stats: [
            stat(Split::Train, train, counts[0]),
            stat(Split::Val, val, counts[1]),
            stat(Split::Test, test, counts[2]),
        ],
        partial_final_day,
    })
}

/// Writes the split report: one row per (fold, split), splits in
/// alphabetical order within a fold.
pub fn write_split_report<W: Write>(sample: &str, folds: &[FoldAssignment], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record([
        "sample",
        "fold_id",
        "split",
        "start_hour",
        "end_hour",
        "n_rows",
        "click_rate",
    ])?;
    for fold in folds {
        let mut stats: Vec<&SplitStats> = fold.stats.iter().collect();
        stats.sort_by_key(|s| s.split.as_str());
        for s in stats {
            writer.write_record([
                sample.to_string(),
                fold.fold_id.clone(),
                s.split.as_str().to_string(),
                format_hour_iso(s.start_hour),
                format_hour_iso(s.end_hour),
                s.n_rows.to_string(),
                format!("{:.4}", s.click_rate),
            ])?;
        }
    }
    writer.flush().map_err(|e| Error::io("<split report>", e))?;
    Ok(())
}
