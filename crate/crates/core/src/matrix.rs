//! Dense float32 feature matrices and the `FMX1` container.
//!
//! Layout (little-endian): magic `FMX1`, version `u16`, row count `u64`,
//! column count `u32`, column names (`u32` byte length + UTF-8), row ids
//! (`u64` each), labels (`u8` each), split tags (`u8` each), then the
//! row-major `f32` payload. Missing values are NaN.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::folds::Split;

pub const MAGIC: &[u8; 4] = b"FMX1";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum SplitTag {
    Train = 0,
    Val = 1,
    Test = 2,
    Unassigned = 3,
}

impl SplitTag {
    fn from_u8(b: u8) -> Result<Self> {
        Ok(match b {
            0 => SplitTag::Train,
            1 => SplitTag::Val,
            2 => SplitTag::Test,
            3 => SplitTag::Unassigned,
            other => return Err(Error::Format(format!("unknown split tag {other}"))),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
            SplitTag::Unassigned => "unassigned",
        }
    }
}

impl From<Split> for SplitTag {
    fn from(s: Split) -> Self {
        match s {
            Split::Train => SplitTag::Train,
            Split::Val => SplitTag::Val,
            Split::Test => SplitTag::Test,
            Split::Excluded => SplitTag::Unassigned,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub row_ids: Vec<u64>,
    pub column_names: Vec<String>,
    /// Row-major, `row_ids.len() * column_names.len()` entries.
    pub values: Vec<f32>,
    pub labels: Vec<u8>,
    pub splits: Vec<SplitTag>,
}

impl FeatureMatrix {
    pub fn empty(column_names: Vec<String>) -> Self {
        FeatureMatrix {
            row_ids: Vec::new(),
            column_names,
            values: Vec::new(),
            labels: Vec::new(),
            splits: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.n_cols();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f32> + '_ {
        (0..self.n_rows()).map(move |i| self.values[i * self.n_cols() + j])
    }

    /// Bit-level equality (NaN payloads compare equal to themselves).
    pub fn bit_eq(&self, other: &FeatureMatrix) -> bool {
        self.row_ids == other.row_ids
            && self.column_names == other.column_names
            && self.labels == other.labels
            && self.splits == other.splits
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn check_shape(&self) -> Result<()> {
        let n = self.n_rows();
        if self.values.len() != n * self.n_cols() || self.labels.len() != n || self.splits.len() != n {
            return Err(Error::Format(format!(
                "inconsistent dimensions: {} rows, {} columns, {} values, {} labels, {} tags",
                n,
                self.n_cols(),
                self.values.len(),
                self.labels.len(),
                self.splits.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &self.column_names {
            if !seen.insert(name) {
                return Err(Error::Format(format!("duplicate column `{name}`")));
            }
        }
        Ok(())
    }

    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(indices.len() * self.n_cols());
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            row_ids: indices.iter().map(|&i| self.row_ids[i]).collect(),
            column_names: self.column_names.clone(),
            values,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            splits: indices.iter().map(|&i| self.splits[i]).collect(),
        }
    }

    pub fn split(&self, tag: SplitTag) -> FeatureMatrix {
        let idx: Vec<usize> = (0..self.n_rows()).filter(|&i| self.splits[i] == tag).collect();
        self.select_rows(&idx)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        self.check_shape()?;
        let io = |e| Error::io("<fmx output>", e);
        let mut buf = Vec::with_capacity(64 + self.values.len() * 4 + self.n_rows() * 10);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.n_rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.n_cols() as u32).to_le_bytes());
        for name in &self.column_names {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
        }
        for id in &self.row_ids {
            buf.extend_from_slice(&id.to_le_bytes());
        }
        buf.extend_from_slice(&self.labels);
        buf.extend(self.splits.iter().map(|&t| t as u8));
        out.write_all(&buf).map_err(io)?;
        let mut chunk = Vec::with_capacity(1 << 16);
        for block in self.values.chunks(1 << 14) {
            chunk.clear();
            for v in block {
                chunk.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&chunk).map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<FeatureMatrix> {
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io("<fmx input>", e))?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes(cur.array()?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let n_rows = u64::from_le_bytes(cur.array()?) as usize;
        let n_cols = u32::from_le_bytes(cur.array()?) as usize;
        let mut column_names = Vec::with_capacity(n_cols.min(1 << 16));
        for _ in 0..n_cols {
            let len = u32::from_le_bytes(cur.array()?) as usize;
            let raw = cur.take(len)?;
            let name = std::str::from_utf8(raw)
                .map_err(|_| Error::Format("column name is not UTF-8".into()))?;
            column_names.push(name.to_string());
        }
        let expected = n_rows
            .checked_mul(8 + 1 + 1 + 4 * n_cols)
            .ok_or_else(|| Error::Format("row count overflow".into()))?;
        if bytes.len() - cur.pos != expected {
            return Err(Error::Format(format!(
                "truncated or oversized payload: expected {expected} bytes after header, found {}",
                bytes.len() - cur.pos
            )));
        }
        let row_ids = (0..n_rows)
            .map(|_| cur.array().map(u64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        let labels = cur.take(n_rows)?.to_vec();
        let splits = cur
            .take(n_rows)?
            .iter()
            .map(|&b| SplitTag::from_u8(b))
            .collect::<Result<Vec<_>>>()?;
        let values = cur
            .take(n_rows * n_cols * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let m = FeatureMatrix {
            row_ids,
            column_names,
            values,
            labels,
            splits,
        };
        m.check_shape()?;
        Ok(m)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn read_file(path: &Path) -> Result<FeatureMatrix> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }

    /// CSV export: `row_id, label, split, <columns...>`; NaN is an empty field.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec!["row_id".to_string(), "label".into(), "split".into()];
        header.extend(self.column_names.iter().cloned());
        writer.write_record(&header)?;
        let mut fields = Vec::with_capacity(header.len());
        for i in 0..self.n_rows() {
            fields.clear();
            fields.push(self.row_ids[i].to_string());
            fields.push(self.labels[i].to_string());
            fields.push(self.splits[i].as_str().to_string());
            for v in self.row(i) {
                fields.push(if v.is_nan() { String::new() } else { v.to_string() });
            }
            writer.write_record(&fields)?;
        }
        writer.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated input".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }
}
