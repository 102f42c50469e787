//! Entity-history window aggregation under per-hour batching.
//!
//! For every configured entity column the engine keeps, per value, a deque of
//! hourly `(impressions, clicks)` buckets, two calendar-day accumulators, a
//! ring of the most recent click outcomes and the last hour the value was
//! seen. Features for hour `H` are read from state that reflects hours `< H`
//! only; [`TimeAggEngine::advance_hour`] is the single mutation point.

use std::collections::VecDeque;
use std::fmt;
use std::ops::Sub;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{day_of, day_start, DayIndex, EventLog, HourIndex, ImpressionEvent};
use crate::te::{log_count, Counts};

pub const DEFAULT_HORIZON_CAP: u32 = 168;
pub const DEFAULT_EVENT_N: u32 = 50;
pub const DEFAULT_ENTITY_KEYS: [&str; 4] = ["device_ip", "device_id", "app_id", "site_id"];

/// The length tuples of the design grid.
pub fn default_length_tuples() -> Vec<Vec<u32>> {
    vec![
        vec![1, 6, 24],
        vec![1, 3, 6, 12, 24],
        vec![1, 6, 24, 48, 168],
        vec![1, 2, 4, 8, 16, 24, 48, 96, 168],
    ]
}

impl Sub for Counts {
    type Output = Counts;

    fn sub(self, rhs: Counts) -> Counts {
        Counts {
            impressions: self.impressions - rhs.impressions,
            clicks: self.clicks - rhs.clicks,
        }
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, rhs: Counts) {
        self.impressions += rhs.impressions;
        self.clicks += rhs.clicks;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Shape {
    #[serde(rename = "trailing")]
    Trailing,
    #[serde(rename = "gap1")]
    Gap1,
    #[serde(rename = "bucket")]
    Bucket,
    #[serde(rename = "calendar")]
    Calendar,
    #[serde(rename = "event50")]
    Event50,
}

impl Shape {
    pub const ALL: [Shape; 5] = [
        Shape::Trailing,
        Shape::Gap1,
        Shape::Bucket,
        Shape::Calendar,
        Shape::Event50,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Shape::Trailing => "trailing",
            Shape::Gap1 => "gap1",
            Shape::Bucket => "bucket",
            Shape::Calendar => "calendar",
            Shape::Event50 => "event50",
        }
    }

    /// Shapes that add columns on top of the trailing block.
    pub fn keeps_trailing(self) -> bool {
        matches!(self, Shape::Trailing | Shape::Calendar | Shape::Event50)
    }

    /// Columns added per entity key beyond the per-length block.
    pub fn extra_columns(self) -> usize {
        match self {
            Shape::Calendar => 4,
            Shape::Event50 => 2,
            _ => 0,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Shape::ALL
            .into_iter()
            .find(|shape| shape.as_str() == s)
            .ok_or_else(|| Error::WindowSpec(format!("unknown shape `{s}`")))
    }
}

fn default_gap() -> u32 {
    1
}

fn default_event_n() -> u32 {
    DEFAULT_EVENT_N
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowSpec {
    pub lengths: Vec<u32>,
    pub shape: Shape,
    #[serde(default = "default_gap")]
    pub gap_hours: u32,
    #[serde(default = "default_event_n")]
    pub event_n: u32,
}

impl WindowSpec {
    pub fn new(lengths: Vec<u32>, shape: Shape) -> Result<Self> {
        let spec = WindowSpec {
            lengths,
            shape,
            gap_hours: 1,
            event_n: DEFAULT_EVENT_N,
        };
        spec.validate(DEFAULT_HORIZON_CAP)?;
        Ok(spec)
    }

    pub fn with_event_n(mut self, n: u32) -> Result<Self> {
        self.event_n = n;
        self.validate(u32::MAX)?;
        Ok(self)
    }

    pub fn validate(&self, horizon_cap: u32) -> Result<()> {
        if self.lengths.is_empty() {
            return Err(Error::WindowSpec("empty length tuple".into()));
        }
        if self.lengths[0] == 0 {
            return Err(Error::WindowSpec("lengths must be positive".into()));
        }
        if self.lengths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::WindowSpec(format!(
                "lengths {:?} are not strictly ascending",
                self.lengths
            )));
        }
        let max = *self.lengths.last().expect("non-empty");
        if max > horizon_cap {
            return Err(Error::WindowSpec(format!(
                "max length {max} exceeds horizon cap {horizon_cap}"
            )));
        }
        if self.gap_hours == 0 || self.event_n == 0 {
            return Err(Error::WindowSpec("gap_hours and event_n must be positive".into()));
        }
        Ok(())
    }

    /// Trailing horizons the engine must be able to answer.
    pub fn horizons(&self) -> Vec<u32> {
        let mut h: Vec<u32> = match self.shape {
            Shape::Gap1 => self
                .lengths
                .iter()
                .map(|&l| l + self.gap_hours)
                .chain(std::iter::once(self.gap_hours))
                .collect(),
            _ => self.lengths.clone(),
        };
        h.sort_unstable();
        h.dedup();
        h
    }

    /// Tuple rendered as `1-6-24`.
    pub fn lengths_label(&self) -> String {
        self.lengths
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join("-")
    }

    /// Stable identifier, e.g. `trailing__1-6-24` or `event50__1-6-24__n50`.
    pub fn key(&self) -> String {
        match self.shape {
            Shape::Event50 => format!("{}__{}__n{}", self.shape, self.lengths_label(), self.event_n),
            Shape::Gap1 if self.gap_hours != 1 => {
                format!("{}__{}__g{}", self.shape, self.lengths_label(), self.gap_hours)
            }
            _ => format!("{}__{}", self.shape, self.lengths_label()),
        }
    }

    pub fn columns_per_entity(&self) -> usize {
        2 * self.lengths.len() + self.shape.extra_columns() + 1
    }

    /// Column names in emission order: for each entity key, the per-length
    /// block, the shape extras, then recency.
    pub fn column_names(&self, entity_keys: &[String]) -> Vec<String> {
        let mut names = Vec::with_capacity(entity_keys.len() * self.columns_per_entity());
        let pair = |names: &mut Vec<String>, stem: String| {
            names.push(format!("{stem}__limps"));
            names.push(format!("{stem}__rate"));
        };
        for e in entity_keys {
            match self.shape {
                Shape::Trailing | Shape::Calendar | Shape::Event50 => {
                    for l in &self.lengths {
                        pair(&mut names, format!("{e}__trailing__{l}h"));
                    }
                }
                Shape::Gap1 => {
                    for l in &self.lengths {
                        pair(&mut names, format!("{e}__{}__{l}h", self.shape));
                    }
                }
                Shape::Bucket => {
                    let mut prev = 0;
                    for &l in &self.lengths {
                        pair(&mut names, format!("{e}__bucket__{prev}to{l}h"));
                        prev = l;
                    }
                }
            }
            match self.shape {
                Shape::Calendar => {
                    pair(&mut names, format!("{e}__calendar__cur_day"));
                    pair(&mut names, format!("{e}__calendar__prev_day"));
                }
                Shape::Event50 => pair(&mut names, format!("{e}__event__{}ev", self.event_n)),
                _ => {}
            }
            names.push(format!("{e}__recency_h"));
        }
        names
    }
}

impl fmt::Display for WindowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.shape)?;
        let lengths: Vec<String> = self.lengths.iter().map(u32::to_string).collect();
        f.write_str(&lengths.join(","))?;
        if self.shape == Shape::Event50 && self.event_n != DEFAULT_EVENT_N {
            write!(f, "@{}", self.event_n)?;
        }
        Ok(())
    }
}

/// Parses `shape:l1,l2,...` with an optional `@N` event-count suffix.
impl FromStr for WindowSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (shape, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::WindowSpec(format!("expected `shape:lengths`, got `{s}`")))?;
        let (lengths, event_n) = match rest.split_once('@') {
            Some((l, n)) => (
                l,
                n.parse::<u32>()
                    .map_err(|_| Error::WindowSpec(format!("bad event count `{n}`")))?,
            ),
            None => (rest, DEFAULT_EVENT_N),
        };
        let spec = WindowSpec {
            lengths: parse_lengths(lengths)?,
            shape: shape.trim().parse()?,
            gap_hours: 1,
            event_n,
        };
        spec.validate(DEFAULT_HORIZON_CAP)?;
        Ok(spec)
    }
}

pub fn parse_lengths(text: &str) -> Result<Vec<u32>> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<u32>()
                .map_err(|_| Error::WindowSpec(format!("bad length `{p}`")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothedRateParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for SmoothedRateParams {
    fn default() -> Self {
        SmoothedRateParams {
            alpha: 1.0,
            beta: 10.0,
        }
    }
}

/// `(C + alpha) / (I + alpha + beta)`.
pub fn smoothed_rate(counts: Counts, params: SmoothedRateParams) -> Result<f64> {
    if counts.clicks > counts.impressions {
        return Err(Error::CountInvariant {
            impressions: counts.impressions,
            clicks: counts.clicks,
        });
    }
    Ok((counts.clicks as f64 + params.alpha) / (counts.impressions as f64 + params.alpha + params.beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct HourBucket {
    hour: HourIndex,
    counts: Counts,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct DayCounts {
    day: Option<DayIndex>,
    counts: Counts,
}

#[derive(Debug, Clone, Default)]
struct ValueHistory {
    buckets: VecDeque<HourBucket>,
    today: DayCounts,
    yesterday: DayCounts,
    ring: VecDeque<bool>,
    ring_clicks: u64,
    last_seen: Option<HourIndex>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalendarCounts {
    pub current_day: Counts,
    pub previous_day: Counts,
    pub previous_day_available: bool,
}

/// History of one entity column, indexed by interned value.
#[derive(Debug, Clone)]
pub struct EntityHistory {
    values: Vec<ValueHistory>,
    event_n: usize,
}

impl EntityHistory {
    pub fn new(event_n: usize) -> Self {
        EntityHistory {
            values: Vec::new(),
            event_n,
        }
    }

    fn get(&self, value: u32) -> Option<&ValueHistory> {
        self.values.get(value as usize)
    }

    fn get_mut(&mut self, value: u32) -> &mut ValueHistory {
        let idx = value as usize;
        if self.values.len() <= idx {
            self.values.resize_with(idx + 1, ValueHistory::default);
        }
        &mut self.values[idx]
    }

    /// Counts over `[hour - h, hour)` for each ascending horizon `h`.
    pub fn horizon_counts(&self, value: u32, hour: HourIndex, horizons: &[u32], out: &mut [Counts]) {
        debug_assert_eq!(horizons.len(), out.len());
        let mut acc = Counts::default();
        let mut next = 0;
        if let Some(vh) = self.get(value) {
            for b in vh.buckets.iter().rev() {
                debug_assert!(b.hour < hour, "state contains hour {} >= query hour {hour}", b.hour);
                let age = hour - b.hour;
                while next < horizons.len() && age > i64::from(horizons[next]) {
                    out[next] = acc;
                    next += 1;
                }
                if next == horizons.len() {
                    break;
                }
                acc += b.counts;
            }
        }
        for slot in &mut out[next..] {
            *slot = acc;
        }
    }

    pub fn trailing_counts(&self, value: u32, length: u32, hour: HourIndex) -> Counts {
        let mut out = [Counts::default()];
        self.horizon_counts(value, hour, &[length], &mut out);
        out[0]
    }

    /// Counts over `[hour - (length + gap), hour - gap)`.
    pub fn gap_counts(&self, value: u32, length: u32, gap: u32, hour: HourIndex) -> Counts {
        let mut out = [Counts::default(); 2];
        self.horizon_counts(value, hour, &[gap, length + gap], &mut out);
        out[1] - out[0]
    }

    /// Disjoint buckets `[hour - e_j, hour - e_{j-1})` with `e_0 = 0`.
    pub fn bucket_counts(&self, value: u32, edges: &[u32], hour: HourIndex) -> Vec<Counts> {
        let mut cumulative = vec![Counts::default(); edges.len()];
        self.horizon_counts(value, hour, edges, &mut cumulative);
        let mut prev = Counts::default();
        cumulative
            .into_iter()
            .map(|c| {
                let bucket = c - prev;
                prev = c;
                bucket
            })
            .collect()
    }

    /// Current day up to `hour`, and the previous full day. The previous day
    /// is unavailable when the log starts after that day begins.
    pub fn calendar_counts(&self, value: u32, hour: HourIndex, origin: HourIndex) -> CalendarCounts {
        let day = day_of(hour);
        let pick = |target: DayIndex| {
            self.get(value)
                .and_then(|vh| {
                    [vh.today, vh.yesterday]
                        .into_iter()
                        .find(|d| d.day == Some(target))
                })
                .map(|d| d.counts)
                .unwrap_or_default()
        };
        CalendarCounts {
            current_day: pick(day),
            previous_day: pick(day - 1),
            previous_day_available: origin <= day_start(hour) - 24,
        }
    }

    /// The last `min(N, available)` impressions strictly before the current hour.
    pub fn event_window_counts(&self, value: u32) -> Counts {
        self.get(value)
            .map(|vh| Counts {
                impressions: vh.ring.len() as u64,
                clicks: vh.ring_clicks,
            })
            .unwrap_or_default()
    }

    pub fn recency(&self, value: u32, hour: HourIndex) -> Option<u32> {
        self.get(value)
            .and_then(|vh| vh.last_seen)
            .map(|seen| (hour - seen) as u32)
    }

    /// Impressions currently held in hour buckets.
    pub fn retained_impressions(&self, value: u32) -> u64 {
        self.get(value)
            .map(|vh| vh.buckets.iter().map(|b| b.counts.impressions).sum())
            .unwrap_or(0)
    }

    /// Oldest retained bucket hour for a value.
    pub fn oldest_bucket(&self, value: u32) -> Option<HourIndex> {
        self.get(value).and_then(|vh| vh.buckets.front().map(|b| b.hour))
    }

    /// Folds one row into the value's state. Returns true when a new hour
    /// bucket was opened.
    fn observe(&mut self, value: u32, hour: HourIndex, click: bool) -> bool {
        let event_n = self.event_n;
        let vh = self.get_mut(value);
        let opened = match vh.buckets.back_mut() {
            Some(b) if b.hour == hour => {
                b.counts.add(click);
                false
            }
            _ => {
                let mut counts = Counts::default();
                counts.add(click);
                vh.buckets.push_back(HourBucket { hour, counts });
                true
            }
        };
        let day = day_of(hour);
        if vh.today.day != Some(day) {
            vh.yesterday = vh.today;
            vh.today = DayCounts {
                day: Some(day),
                counts: Counts::default(),
            };
        }
        vh.today.counts.add(click);
        if event_n > 0 {
            vh.ring.push_back(click);
            vh.ring_clicks += u64::from(click);
            if vh.ring.len() > event_n {
                let dropped = vh.ring.pop_front().expect("non-empty ring");
                vh.ring_clicks -= u64::from(dropped);
            }
        }
        vh.last_seen = Some(hour);
        opened
    }

    fn evict_front(&mut self, value: u32, hour: HourIndex) {
        let vh = self.get_mut(value);
        if vh.buckets.front().map(|b| b.hour) == Some(hour) {
            vh.buckets.pop_front();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeAggConfig {
    pub horizon_cap: u32,
    pub rate: SmoothedRateParams,
}

impl Default for TimeAggConfig {
    fn default() -> Self {
        TimeAggConfig {
            horizon_cap: DEFAULT_HORIZON_CAP,
            rate: SmoothedRateParams::default(),
        }
    }
}

/// One streaming pass for one window spec.
#[derive(Debug, Clone)]
pub struct TimeAggEngine {
    spec: WindowSpec,
    config: TimeAggConfig,
    entity_columns: Vec<usize>,
    histories: Vec<EntityHistory>,
    horizons: Vec<u32>,
    retention: u32,
    origin: HourIndex,
    cursor: Option<HourIndex>,
    evictions: VecDeque<(HourIndex, usize, u32)>,
}

impl TimeAggEngine {
    /// `entity_columns` index into each event's `cats`; `origin` is the
    /// first hour of the log.
    pub fn new(
        spec: WindowSpec,
        config: TimeAggConfig,
        entity_columns: Vec<usize>,
        origin: HourIndex,
    ) -> Result<Self> {
        spec.validate(config.horizon_cap)?;
        let horizons = spec.horizons();
        let retention = horizons.last().copied().unwrap_or(0).max(config.horizon_cap);
        let event_n = if spec.shape == Shape::Event50 {
            spec.event_n as usize
        } else {
            0
        };
        Ok(TimeAggEngine {
            histories: vec![EntityHistory::new(event_n); entity_columns.len()],
            spec,
            config,
            entity_columns,
            horizons,
            retention,
            origin,
            cursor: None,
            evictions: VecDeque::new(),
        })
    }

    pub fn spec(&self) -> &WindowSpec {
        &self.spec
    }

    pub fn history(&self, key: usize) -> &EntityHistory {
        &self.histories[key]
    }

    pub fn cursor(&self) -> Option<HourIndex> {
        self.cursor
    }

    pub fn retention(&self) -> u32 {
        self.retention
    }

    pub fn width(&self) -> usize {
        self.entity_columns.len() * self.spec.columns_per_entity()
    }

    fn horizon_slot(&self, h: u32) -> usize {
        self.horizons.binary_search(&h).expect("horizon registered at construction")
    }

    /// Appends this row's features to `out`. `hour` must be later than every
    /// hour already folded into state.
    pub fn features_for(&self, cats: &[u32], hour: HourIndex, out: &mut Vec<f64>) -> Result<()> {
        if let Some(last) = self.cursor {
            if hour <= last {
                return Err(Error::HourOrder { last, found: hour });
            }
        }
        let rate = self.config.rate;
        let mut at = vec![Counts::default(); self.horizons.len()];
        let push = |out: &mut Vec<f64>, c: Counts| -> Result<()> {
            out.push(log_count(c.impressions));
            out.push(smoothed_rate(c, rate)?);
            Ok(())
        };
        for (key, &column) in self.entity_columns.iter().enumerate() {
            let value = cats[column];
            let history = &self.histories[key];
            history.horizon_counts(value, hour, &self.horizons, &mut at);
            match self.spec.shape {
                Shape::Trailing | Shape::Calendar | Shape::Event50 => {
                    for &l in &self.spec.lengths {
                        push(out, at[self.horizon_slot(l)])?;
                    }
                }
                Shape::Gap1 => {
                    let g = self.spec.gap_hours;
                    let recent = at[self.horizon_slot(g)];
                    for &l in &self.spec.lengths {
                        push(out, at[self.horizon_slot(l + g)] - recent)?;
                    }
                }
                Shape::Bucket => {
                    let mut prev = Counts::default();
                    for &l in &self.spec.lengths {
                        let c = at[self.horizon_slot(l)];
                        push(out, c - prev)?;
                        prev = c;
                    }
                }
            }
            match self.spec.shape {
                Shape::Calendar => {
                    let cal = history.calendar_counts(value, hour, self.origin);
                    push(out, cal.current_day)?;
                    if cal.previous_day_available {
                        push(out, cal.previous_day)?;
                    } else {
                        out.extend([f64::NAN, f64::NAN]);
                    }
                }
                Shape::Event50 => push(out, history.event_window_counts(value))?,
                _ => {}
            }
            out.push(
                history
                    .recency(value, hour)
                    .map_or(f64::NAN, f64::from),
            );
        }
        Ok(())
    }

    /// Folds all rows of `hour` into state, in row order, then evicts
    /// buckets no window can reach any more.
    pub fn advance_hour<'a, I>(&mut self, hour: HourIndex, rows: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a ImpressionEvent>,
    {
        if let Some(last) = self.cursor {
            if hour <= last {
                return Err(Error::HourOrder { last, found: hour });
            }
        }
        for row in rows {
            if row.hour != hour {
                return Err(Error::HourOrder {
                    last: hour,
                    found: row.hour,
                });
            }
            for (key, &column) in self.entity_columns.iter().enumerate() {
                let value = row.cats[column];
                if self.histories[key].observe(value, hour, row.click) {
                    self.evictions.push_back((hour, key, value));
                }
            }
        }
        self.cursor = Some(hour);
        let cutoff = hour + 1 - i64::from(self.retention);
        while let Some(&(h, key, value)) = self.evictions.front() {
            if h >= cutoff {
                break;
            }
            self.evictions.pop_front();
            self.histories[key].evict_front(value, h);
        }
        Ok(())
    }
}

/// Row-major features for every row of a log, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeAggFeatures {
    pub column_names: Vec<String>,
    pub values: Vec<f64>,
}

impl TimeAggFeatures {
    pub fn width(&self) -> usize {
        self.column_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.values[i * w..(i + 1) * w]
    }
}

/// Runs the engine over an hour-sorted log, featurizing each hour before
/// folding it into state.
pub fn run_time_agg(
    log: &EventLog,
    spec: &WindowSpec,
    config: TimeAggConfig,
    entity_keys: &[String],
) -> Result<TimeAggFeatures> {
    log.check_sorted()?;
    let entity_columns = entity_keys
        .iter()
        .map(|k| log.schema.categorical_index(k))
        .collect::<Result<Vec<_>>>()?;
    let origin = log.events.first().map_or(0, |e| e.hour);
    let mut engine = TimeAggEngine::new(spec.clone(), config, entity_columns, origin)?;
    let mut values = Vec::with_capacity(log.len() * engine.width());
    for batch in log.events.chunk_by(|a, b| a.hour == b.hour) {
        let hour = batch[0].hour;
        for event in batch {
            engine.features_for(&event.cats, hour, &mut values)?;
        }
        engine.advance_hour(hour, batch)?;
    }
    Ok(TimeAggFeatures {
        column_names: spec.column_names(entity_keys),
        values,
    })
}
