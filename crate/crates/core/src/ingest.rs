//! Event-log ingestion: CSV parsing against a fixed schema, hour-index
//! conversion and the deterministic hash sampler.
//!
//! Categorical values are interned per column into dense `u32` codes. The
//! mapping is exact (a dictionary, not a hash), so two rows share a code iff
//! they carry the same string.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hours since 1970-01-01 00:00 in the log's native timezone.
pub type HourIndex = i64;

/// Calendar day index (days since 1970-01-01).
pub type DayIndex = i64;

pub const FNV_OFFSET_BASIS: u64 = 14695981039346656037;
pub const FNV_PRIME: u64 = 1099511628211;

/// FNV-1a 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Sampling hash of a row id: FNV-1a over its ASCII decimal form.
pub fn row_hash(row_id: u64) -> u64 {
    fnv1a64(row_id.to_string().as_bytes())
}

/// Whether a row with this raw id text is kept at `rate_percent`.
pub fn keep_id_text(id_text: &str, rate_percent: u8) -> bool {
    fnv1a64(id_text.as_bytes()) % 100 < u64::from(rate_percent)
}

pub fn keep_row(row_id: u64, rate_percent: u8) -> bool {
    row_hash(row_id) % 100 < u64::from(rate_percent)
}

pub fn day_of(hour: HourIndex) -> DayIndex {
    hour.div_euclid(24)
}

pub fn hour_of_day(hour: HourIndex) -> u32 {
    hour.rem_euclid(24) as u32
}

pub fn day_start(hour: HourIndex) -> HourIndex {
    day_of(hour) * 24
}

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid epoch")
}

/// Parses a `YYMMDDHH` timestamp (years are 20YY) into an hour index.
pub fn parse_timestamp(text: &str) -> Result<HourIndex> {
    let bad = || Error::Timestamp(text.to_string());
    if text.len() != 8 || !text.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let field = |i: usize| text[i..i + 2].parse::<u32>().map_err(|_| bad());
    let (yy, mm, dd, hh) = (field(0)?, field(2)?, field(4)?, field(6)?);
    if hh > 23 {
        return Err(bad());
    }
    let date = NaiveDate::from_ymd_opt(2000 + yy as i32, mm, dd).ok_or_else(bad)?;
    let days = (date - epoch()).num_days();
    Ok(days * 24 + i64::from(hh))
}

pub fn day_date(day: DayIndex) -> NaiveDate {
    epoch() + chrono::Days::new(day as u64)
}

/// Formats an hour index back to `YYMMDDHH`.
pub fn format_timestamp(hour: HourIndex) -> String {
    let date = day_date(day_of(hour));
    format!(
        "{:02}{:02}{:02}{:02}",
        date.year() % 100,
        date.month(),
        date.day(),
        hour_of_day(hour)
    )
}

/// `YYYY-MM-DD HH:00`, the form used in split reports.
pub fn format_hour_iso(hour: HourIndex) -> String {
    format!("{} {:02}:00", day_date(day_of(hour)), hour_of_day(hour))
}

pub fn format_day_iso(day: DayIndex) -> String {
    day_date(day).to_string()
}

/// Column layout of a delimited event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogSchema {
    pub id_column: String,
    pub label_column: String,
    pub hour_column: String,
    pub categorical_columns: Vec<String>,
}

/// The 21 categorical columns of the Avazu CTR log.
pub const AVAZU_CATEGORICAL_COLUMNS: [&str; 21] = [
    "C1",
    "banner_pos",
    "site_id",
    "site_domain",
    "site_category",
    "app_id",
    "app_domain",
    "app_category",
    "device_id",
    "device_ip",
    "device_model",
    "device_type",
    "device_conn_type",
    "C14",
    "C15",
    "C16",
    "C17",
    "C18",
    "C19",
    "C20",
    "C21",
];

impl Default for LogSchema {
    fn default() -> Self {
        Self::avazu()
    }
}

impl LogSchema {
    pub fn avazu() -> Self {
        LogSchema {
            id_column: "id".into(),
            label_column: "click".into(),
            hour_column: "hour".into(),
            categorical_columns: AVAZU_CATEGORICAL_COLUMNS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        let fixed = [&self.id_column, &self.label_column, &self.hour_column];
        for name in fixed.into_iter().chain(self.categorical_columns.iter()) {
            if name.is_empty() {
                return Err(Error::Schema("empty column name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{name}`")));
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: LogSchema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn categorical_index(&self, name: &str) -> Result<usize> {
        self.categorical_columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn header(&self) -> Vec<&str> {
        let mut h = vec![
            self.id_column.as_str(),
            self.label_column.as_str(),
            self.hour_column.as_str(),
        ];
        h.extend(self.categorical_columns.iter().map(String::as_str));
        h
    }
}

/// Per-column string interner.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    codes: HashMap<String, u32>,
    values: Vec<String>,
}

impl Vocabulary {
    pub fn intern(&mut self, value: &str) -> u32 {
        if let Some(&code) = self.codes.get(value) {
            return code;
        }
        let code = self.values.len() as u32;
        self.values.push(value.to_string());
        self.codes.insert(value.to_string(), code);
        code
    }

    pub fn code(&self, value: &str) -> Option<u32> {
        self.codes.get(value).copied()
    }

    pub fn value(&self, code: u32) -> &str {
        &self.values[code as usize]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One impression row. `cats[i]` is the interned value of the schema's
/// i-th categorical column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImpressionEvent {
    pub row_id: u64,
    pub hour: HourIndex,
    pub click: bool,
    pub cats: Vec<u32>,
}

/// An ordered event sequence with its schema and vocabularies.
#[derive(Debug, Clone)]
pub struct EventLog {
    pub schema: LogSchema,
    pub vocabularies: Vec<Vocabulary>,
    pub events: Vec<ImpressionEvent>,
}

impl EventLog {
    pub fn new(schema: LogSchema) -> Self {
        let vocabularies = vec![Vocabulary::default(); schema.categorical_columns.len()];
        EventLog {
            schema,
            vocabularies,
            events: Vec::new(),
        }
    }

    /// Appends a row, interning its categorical values.
    pub fn push(&mut self, row_id: u64, hour: HourIndex, click: bool, values: &[&str]) -> Result<()> {
        if values.len() != self.vocabularies.len() {
            return Err(Error::Schema(format!(
                "expected {} categorical values, got {}",
                self.vocabularies.len(),
                values.len()
            )));
        }
        if hour < 0 {
            return Err(Error::Schema(format!("negative hour index {hour}")));
        }
        let cats = values
            .iter()
            .zip(self.vocabularies.iter_mut())
            .map(|(v, vocab)| vocab.intern(v))
            .collect();
        self.events.push(ImpressionEvent {
            row_id,
            hour,
            click,
            cats,
        });
        Ok(())
    }

    /// Same schema and vocabularies, different rows.
    pub fn with_events(&self, events: Vec<ImpressionEvent>) -> Self {
        EventLog {
            schema: self.schema.clone(),
            vocabularies: self.vocabularies.clone(),
            events,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn value(&self, event: &ImpressionEvent, column: usize) -> &str {
        self.vocabularies[column].value(event.cats[column])
    }

    /// Errors with the first out-of-order pair if hours ever decrease.
    pub fn check_sorted(&self) -> Result<()> {
        for pair in self.events.windows(2) {
            if pair[1].hour < pair[0].hour {
                return Err(Error::Unsorted {
                    previous: pair[0].hour,
                    found: pair[1].hour,
                });
            }
        }
        Ok(())
    }

    /// Stable sort by hour; within-hour file order is kept.
    pub fn sort_by_hour(&mut self) {
        self.events.sort_by_key(|e| e.hour);
    }

    /// Keeps rows whose hashed id falls under `rate_percent`.
    pub fn sampled(&self, rate_percent: u8) -> Self {
        self.with_events(hash_sample(&self.events, rate_percent))
    }

    /// Parses RFC 4180 CSV with a header row naming at least the schema columns.
    pub fn parse<R: Read>(input: R, schema: &LogSchema) -> Result<Self> {
        schema.validate()?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let headers = reader.headers()?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let id_idx = find(&schema.id_column)?;
        let label_idx = find(&schema.label_column)?;
        let hour_idx = find(&schema.hour_column)?;
        let cat_idx = schema
            .categorical_columns
            .iter()
            .map(|c| find(c))
            .collect::<Result<Vec<_>>>()?;

        let mut log = EventLog::new(schema.clone());
        let mut record = csv::StringRecord::new();
        loop {
            let more = reader.read_record(&mut record).map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                Error::Parse {
                    line,
                    message: e.to_string(),
                }
            })?;
            if !more {
                break;
            }
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let fail = |message: String| Error::Parse { line, message };
            let id_text = &record[id_idx];
            let row_id = id_text
                .parse::<u64>()
                .map_err(|_| fail(format!("row id `{id_text}` is not an unsigned 64-bit integer")))?;
            let click = match &record[label_idx] {
                "0" => false,
                "1" => true,
                other => return Err(fail(format!("label `{other}` is not 0 or 1"))),
            };
            let hour = parse_timestamp(&record[hour_idx]).map_err(|e| fail(e.to_string()))?;
            let cats = cat_idx
                .iter()
                .zip(log.vocabularies.iter_mut())
                .map(|(&i, vocab)| vocab.intern(&record[i]))
                .collect();
            log.events.push(ImpressionEvent {
                row_id,
                hour,
                click,
                cats,
            });
        }
        Ok(log)
    }

    pub fn read_csv_file(path: &std::path::Path, schema: &LogSchema) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(std::io::BufReader::new(file), schema)
    }

    /// Writes the schema columns back as CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(self.schema.header())?;
        let mut fields: Vec<String> = Vec::with_capacity(3 + self.vocabularies.len());
        for event in &self.events {
            fields.clear();
            fields.push(event.row_id.to_string());
            fields.push(if event.click { "1" } else { "0" }.to_string());
            fields.push(format_timestamp(event.hour));
            for (col, &code) in event.cats.iter().enumerate() {
                fields.push(self.vocabularies[col].value(code).to_string());
            }
            writer.write_record(&fields)?;
        }
        writer.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn stats(&self) -> Option<LogStats> {
        log_stats(&self.events)
    }
}

/// Filters events by `fnv1a64(decimal(row_id)) % 100 < rate_percent`.
pub fn hash_sample(events: &[ImpressionEvent], rate_percent: u8) -> Vec<ImpressionEvent> {
    events
        .iter()
        .filter(|e| keep_row(e.row_id, rate_percent))
        .cloned()
        .collect()
}

/// Streams a CSV through the sampler without parsing anything but the id
/// column. The id text is hashed as-is, which equals the decimal form for
/// canonical numeric ids. Returns `(rows_read, rows_kept)`.
pub fn sample_csv<R: Read, W: Write>(
    input: R,
    output: W,
    id_column: &str,
    rate_percent: u8,
) -> Result<(u64, u64)> {
    if rate_percent > 100 {
        return Err(Error::Config(format!("rate {rate_percent} outside 0..=100")));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let mut writer = csv::Writer::from_writer(output);
    let headers = reader.headers()?.clone();
    let id_idx = headers
        .iter()
        .position(|h| h == id_column)
        .ok_or_else(|| Error::MissingColumn(id_column.to_string()))?;
    writer.write_record(&headers)?;
    let (mut read, mut kept) = (0u64, 0u64);
    let mut record = csv::ByteRecord::new();
    while reader.read_byte_record(&mut record)? {
        read += 1;
        if fnv1a64(&record[id_idx]) % 100 < u64::from(rate_percent) {
            kept += 1;
            writer.write_byte_record(&record)?;
        }
    }
    writer.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok((read, kept))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DayStats {
    pub day: DayIndex,
    pub date: String,
    pub n_rows: u64,
    pub clicks: u64,
    pub click_rate: f64,
    pub distinct_hours: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogStats {
    pub days: Vec<DayStats>,
    pub first_hour: HourIndex,
    pub last_hour: HourIndex,
    pub n_rows: u64,
}

/// Per-day row counts and click rates; `None` for an empty log.
pub fn log_stats(events: &[ImpressionEvent]) -> Option<LogStats> {
    let first_hour = events.iter().map(|e| e.hour).min()?;
    let last_hour = events.iter().map(|e| e.hour).max()?;
    let mut per_day: BTreeMap<DayIndex, (u64, u64, std::collections::BTreeSet<HourIndex>)> =
        BTreeMap::new();
    for e in events {
        let entry = per_day.entry(day_of(e.hour)).or_default();
        entry.0 += 1;
        entry.1 += u64::from(e.click);
        entry.2.insert(e.hour);
    }
    let days = per_day
        .into_iter()
        .map(|(day, (n_rows, clicks, hours))| DayStats {
            day,
            date: format_day_iso(day),
            n_rows,
            clicks,
            click_rate: clicks as f64 / n_rows as f64,
            distinct_hours: hours.len() as u32,
        })
        .collect();
    Some(LogStats {
        days,
        first_hour,
        last_hour,
        n_rows: events.len() as u64,
    })
}

impl LogStats {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["date", "n_rows", "clicks", "click_rate", "distinct_hours"])?;
        for d in &self.days {
            writer.write_record([
                d.date.clone(),
                d.n_rows.to_string(),
                d.clicks.to_string(),
                format!("{:.6}", d.click_rate),
                d.distinct_hours.to_string(),
            ])?;
        }
        writer.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_schema() -> LogSchema {
        LogSchema {
            id_column: "id".into(),
            label_column: "click".into(),
            hour_column: "hour".into(),
            categorical_columns: vec!["site_id".into(), "device_ip".into()],
        }
    }

    #[test]
    fn parses_avazu_style_row() {
        let csv = "id,click,hour,site_id,device_ip\n1000,0,14102100,a,b\n";
        let log = EventLog::parse(csv.as_bytes(), &small_schema()).unwrap();
        assert_eq!(log.len(), 1);
        let e = &log.events[0];
        assert_eq!(e.row_id, 1000);
        assert!(!e.click);
        let expected = NaiveDate::from_ymd_opt(2014, 10, 21).unwrap();
        assert_eq!(e.hour, (expected - epoch()).num_days() * 24);
        assert_eq!(format_hour_iso(e.hour), "2014-10-21 00:00");
        assert_eq!(log.value(e, 0), "a");
    }

    #[test]
    fn empty_body_gives_empty_log() {
        let log = EventLog::parse("id,click,hour,site_id,device_ip\n".as_bytes(), &small_schema()).unwrap();
        assert!(log.is_empty());
    }

    #[test]
    fn bad_label_names_line() {
        let csv = "id,click,hour,site_id,device_ip\n1,0,14102100,a,b\n2,2,14102100,a,b\n";
        let err = EventLog::parse(csv.as_bytes(), &small_schema()).unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("label"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_and_bad_timestamp() {
        let err = EventLog::parse("id,click,hour,site_id\n".as_bytes(), &small_schema()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "device_ip"));
        let csv = "id,click,hour,site_id,device_ip\n1,0,2014-10-21,a,b\n";
        assert!(matches!(
            EventLog::parse(csv.as_bytes(), &small_schema()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(parse_timestamp("14102124").is_err());
        assert!(parse_timestamp("14023000").is_err());
    }

    #[test]
    fn ragged_row_is_a_parse_error() {
        let csv = "id,click,hour,site_id,device_ip\n1,0,14102100,a\n";
        assert!(matches!(
            EventLog::parse(csv.as_bytes(), &small_schema()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn schema_rejects_overlap() {
        let mut s = small_schema();
        s.categorical_columns.push("hour".into());
        assert!(s.validate().is_err());
        assert!(LogSchema::avazu().validate().is_ok());
        assert_eq!(LogSchema::avazu().categorical_columns.len(), 21);
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
        assert_eq!(row_hash(1000), fnv1a64(b"1000"));
    }

    #[test]
    fn sample_rate_extremes() {
        let events: Vec<_> = (0..1000u64)
            .map(|i| ImpressionEvent {
                row_id: i * 7919,
                hour: 0,
                click: false,
                cats: vec![],
            })
            .collect();
        assert_eq!(hash_sample(&events, 100), events);
        assert!(hash_sample(&events, 0).is_empty());
    }

    #[test]
    fn stats_per_day() {
        let mut log = EventLog::new(small_schema());
        for (i, click) in [false, true, false, false].into_iter().enumerate() {
            log.push(i as u64, 24 * 100 + i as i64, click, &["x", "y"]).unwrap();
        }
        log.push(9, 24 * 101, false, &["x", "y"]).unwrap();
        log.push(10, 24 * 101 + 3, false, &["x", "y"]).unwrap();
        let stats = log.stats().unwrap();
        assert_eq!(stats.days.len(), 2);
        assert_eq!(stats.days[0].n_rows, 4);
        assert_eq!(stats.days[0].click_rate, 0.25);
        assert_eq!(stats.days[1].click_rate, 0.0);
        assert!(log_stats(&[]).is_none());
    }

    #[test]
    fn raw_sampler_matches_event_sampler() {
        let mut log = EventLog::new(small_schema());
        for i in 0..500u64 {
            log.push(i * 31 + 5, 24 * 100 + (i as i64 % 30), i % 3 == 0, &["s", "d"]).unwrap();
        }
        let mut raw = Vec::new();
        log.write_csv(&mut raw).unwrap();
        let mut out = Vec::new();
        let (read, kept) = sample_csv(raw.as_slice(), &mut out, "id", 10).unwrap();
        assert_eq!(read, 500);
        let reparsed = EventLog::parse(out.as_slice(), &small_schema()).unwrap();
        assert_eq!(reparsed.len() as u64, kept);
        let expected: Vec<u64> = log.sampled(10).events.iter().map(|e| e.row_id).collect();
        let got: Vec<u64> = reparsed.events.iter().map(|e| e.row_id).collect();
        assert_eq!(got, expected);
    }

    proptest! {
        #[test]
        fn sampling_is_nested_and_order_free(ids in proptest::collection::vec(any::<u64>(), 0..200), r1 in 0u8..=100, r2 in 0u8..=100) {
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            for &id in &ids {
                if keep_row(id, lo) {
                    prop_assert!(keep_row(id, hi));
                }
            }
            let events: Vec<_> = ids.iter().map(|&row_id| ImpressionEvent { row_id, hour: 0, click: false, cats: vec![] }).collect();
            let mut reversed = events.clone();
            reversed.reverse();
            let mut a: Vec<u64> = hash_sample(&events, hi).iter().map(|e| e.row_id).collect();
            let mut b: Vec<u64> = hash_sample(&reversed, hi).iter().map(|e| e.row_id).collect();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn csv_round_trip(rows in proptest::collection::vec((any::<u64>(), 0i64..2000, any::<bool>(), "[a-z0-9,\" ]{0,6}", "[a-f0-9]{1,4}"), 0..40)) {
            let base = parse_timestamp("14102100").unwrap();
            let mut log = EventLog::new(small_schema());
            for (id, h, c, a, b) in &rows {
                log.push(*id, base + h, *c, &[a.as_str(), b.as_str()]).unwrap();
            }
            let mut buf = Vec::new();
            log.write_csv(&mut buf).unwrap();
            let back = EventLog::parse(buf.as_slice(), &small_schema()).unwrap();
            prop_assert_eq!(back.len(), log.len());
            for (x, y) in log.events.iter().zip(&back.events) {
                prop_assert_eq!(x.row_id, y.row_id);
                prop_assert_eq!(x.hour, y.hour);
                prop_assert_eq!(x.click, y.click);
                for col in 0..2 {
                    prop_assert_eq!(log.value(x, col), back.value(y, col));
                }
            }
        }

        #[test]
        fn timestamp_round_trip(hours in 0i64..(80 * 365 * 24)) {
            let h = parse_timestamp("00010100").unwrap() + hours;
            prop_assert_eq!(parse_timestamp(&format_timestamp(h)).unwrap(), h);
        }
    }
}
