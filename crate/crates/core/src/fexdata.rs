//! The Fex table: per-frame faceboxes, landmarks, action units and emotions.
//!
//! Missing detections are stored as NaN and written as empty CSV cells.
//! Unknown CSV columns are kept verbatim and written back after the schema
//! columns.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::geometry::{FaceBox, GeometryError, LandmarkSet, LANDMARK_COUNT};

/// Action units in column order.
pub const AU_NAMES: [&str; 20] = [
    "AU01", "AU02", "AU04", "AU05", "AU06", "AU07", "AU09", "AU10", "AU12", "AU14", "AU15", "AU17", "AU18", "AU20",
    "AU23", "AU24", "AU25", "AU26", "AU28", "AU43",
];

pub const EMOTION_NAMES: [&str; 7] = ["anger", "disgust", "fear", "happiness", "sadness", "surprise", "neutral"];

pub const FACEBOX_COLUMNS: [&str; 5] = ["FaceRectX", "FaceRectY", "FaceRectWidth", "FaceRectHeight", "FaceScore"];

const META_COLUMNS: [&str; 3] = ["frame", "time_s", "session"];

pub fn au_index(name: &str) -> Option<usize> {
    AU_NAMES.iter().position(|&n| n == name)
}

pub fn emotion_index(name: &str) -> Option<usize> {
    EMOTION_NAMES.iter().position(|&n| n == name)
}

#[derive(Debug, Error)]
pub enum FexError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("malformed number in row {row}, column `{column}`: `{value}`")]
    MalformedNumber { row: usize, column: String, value: String },
    #[error("row {row}: {group} group is partially filled")]
    IncompleteGroup { row: usize, group: &'static str },
    #[error("row {row}: {source}")]
    InvalidGeometry { row: usize, source: GeometryError },
    #[error("row {row}: frame {frame} does not increase within session `{session}`")]
    FrameOrder { row: usize, frame: u64, session: String },
    #[error("row {row}: time_s must be finite and non-negative")]
    InvalidTime { row: usize },
    #[error("row {row}: expected {expected} extra cells, got {got}")]
    ExtraArity { row: usize, expected: usize, got: usize },
    #[error("io failure on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// The 20 action-unit activations, NaN when not detected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuVector(pub [f64; 20]);

impl AuVector {
    pub fn zeros() -> Self {
        Self([0.0; 20])
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        au_index(name).map(|i| self.0[i])
    }

    pub fn set(&mut self, name: &str, value: f64) -> bool {
        match au_index(name) {
            Some(i) => {
                self.0[i] = value;
                true
            }
            None => false,
        }
    }
}

/// Seven emotion scores; they need not sum to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmotionVector(pub [f64; 7]);

/// One frame of detections.
#[derive(Debug, Clone, PartialEq)]
pub struct FexRow {
    pub frame: u64,
    pub time_s: f64,
    pub session: String,
    pub facebox: Option<FaceBox>,
    pub landmarks: Option<LandmarkSet>,
    pub aus: Option<AuVector>,
    pub emotions: Option<EmotionVector>,
    /// Values for the table's extra columns, in the same order.
    pub extra: Vec<String>,
}

impl FexRow {
    pub fn new(frame: u64, time_s: f64) -> Self {
        Self {
            frame,
            time_s,
            session: String::new(),
            facebox: None,
            landmarks: None,
            aus: None,
            emotions: None,
            extra: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.facebox.is_none() && self.landmarks.is_none() && self.aus.is_none() && self.emotions.is_none()
    }

    fn group_values(&self, group: ColumnGroup) -> Vec<f64> {
        match group {
            ColumnGroup::Facebox => match &self.facebox {
                Some(b) => vec![b.x, b.y, b.width, b.height, b.score],
                None => vec![f64::NAN; 5],
            },
            ColumnGroup::Landmarks => match &self.landmarks {
                Some(lm) => lm.to_flat(),
                None => vec![f64::NAN; 2 * LANDMARK_COUNT],
            },
            ColumnGroup::Aus => self.aus.map_or_else(|| vec![f64::NAN; 20], |a| a.0.to_vec()),
            ColumnGroup::Emotions => self.emotions.map_or_else(|| vec![f64::NAN; 7], |e| e.0.to_vec()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnGroup {
    Facebox,
    Landmarks,
    Aus,
    Emotions,
}

impl ColumnGroup {
    pub const ALL: [ColumnGroup; 4] =
        [ColumnGroup::Facebox, ColumnGroup::Landmarks, ColumnGroup::Aus, ColumnGroup::Emotions];

    pub fn columns(self) -> Vec<String> {
        match self {
            ColumnGroup::Facebox => FACEBOX_COLUMNS.iter().map(|s| s.to_string()).collect(),
            ColumnGroup::Landmarks => (0..LANDMARK_COUNT)
                .map(|i| format!("x_{i}"))
                .chain((0..LANDMARK_COUNT).map(|i| format!("y_{i}")))
                .collect(),
            ColumnGroup::Aus => AU_NAMES.iter().map(|s| s.to_string()).collect(),
            ColumnGroup::Emotions => EMOTION_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn width(self) -> usize {
        match self {
            ColumnGroup::Facebox => 5,
            ColumnGroup::Landmarks => 2 * LANDMARK_COUNT,
            ColumnGroup::Aus => 20,
            ColumnGroup::Emotions => 7,
        }
    }

    fn label(self) -> &'static str {
        match self {
            ColumnGroup::Facebox => "facebox",
            ColumnGroup::Landmarks => "landmarks",
            ColumnGroup::Aus => "aus",
            ColumnGroup::Emotions => "emotions",
        }
    }
}

impl std::str::FromStr for ColumnGroup {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "facebox" => Ok(Self::Facebox),
            "landmarks" => Ok(Self::Landmarks),
            "aus" => Ok(Self::Aus),
            "emotions" => Ok(Self::Emotions),
            other => Err(format!("unknown column group `{other}`")),
        }
    }
}

/// Full schema header in write order (without extra columns).
pub fn schema_columns() -> Vec<String> {
    META_COLUMNS.iter().map(|s| s.to_string()).chain(ColumnGroup::ALL.iter().flat_map(|g| g.columns())).collect()
}

/// Immutable per-frame table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FexTable {
    extra_columns: Vec<String>,
    rows: Vec<FexRow>,
}

impl FexTable {
    /// Validates row arity, time and within-session frame ordering.
    pub fn new(extra_columns: Vec<String>, rows: Vec<FexRow>) -> Result<Self, FexError> {
        let mut last_frame: HashMap<&str, u64> = HashMap::new();
        for (i, row) in rows.iter().enumerate() {
            if row.extra.len() != extra_columns.len() {
                return Err(FexError::ExtraArity { row: i, expected: extra_columns.len(), got: row.extra.len() });
            }
            if !(row.time_s.is_finite() && row.time_s >= 0.0) {
                return Err(FexError::InvalidTime { row: i });
            }
            if let Some(&prev) = last_frame.get(row.session.as_str()) {
                if row.frame <= prev {
                    return Err(FexError::FrameOrder { row: i, frame: row.frame, session: row.session.clone() });
                }
            }
            last_frame.insert(&row.session, row.frame);
        }
        Ok(Self { extra_columns, rows })
    }

    pub fn from_rows(rows: Vec<FexRow>) -> Result<Self, FexError> {
        Self::new(Vec::new(), rows)
    }

    pub fn rows(&self) -> &[FexRow] {
        &self.rows
    }

    pub fn extra_columns(&self) -> &[String] {
        &self.extra_columns
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn into_rows(self) -> Vec<FexRow> {
        self.rows
    }

    /// Column of an extra (non-schema) field, if present.
    pub fn extra_column(&self, name: &str) -> Option<Vec<&str>> {
        let idx = self.extra_columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r.extra[idx].as_str()).collect())
    }

    /// Rows × group columns, NaN where the group is missing.
    pub fn select(&self, group: ColumnGroup) -> DMatrix<f64> {
        let width = group.width();
        let mut m = DMatrix::from_element(self.rows.len(), width, f64::NAN);
        for (i, row) in self.rows.iter().enumerate() {
            for (j, v) in row.group_values(group).into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Partition by session label, sessions in first-occurrence order.
    pub fn group_by_session(&self) -> Vec<(String, FexTable)> {
        let mut order: Vec<String> = Vec::new();
        let mut parts: HashMap<&str, Vec<FexRow>> = HashMap::new();
        for row in &self.rows {
            parts
                .entry(row.session.as_str())
                .or_insert_with(|| {
                    order.push(row.session.clone());
                    Vec::new()
                })
                .push(row.clone());
        }
        order
            .into_iter()
            .map(|s| {
                let rows = parts.remove(s.as_str()).unwrap_or_default();
                let table = FexTable { extra_columns: self.extra_columns.clone(), rows };
                (s, table)
            })
            .collect()
    }
}

/// Shortest decimal that parses back to the same `f64`; NaN is an empty cell.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64, FexError> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(f64::NAN);
    }
    cell.parse::<f64>().map_err(|_| FexError::MalformedNumber {
        row,
        column: column.to_string(),
        value: cell.to_string(),
    })
}

pub fn read_fex_csv(path: impl AsRef<Path>) -> Result<FexTable, FexError> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|source| FexError::Io { path: path.to_path_buf(), source })?;
    parse_fex_csv(&text)
}

pub fn parse_fex_csv(text: &str) -> Result<FexTable, FexError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();

    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, name) in header.iter().enumerate() {
        if index.insert(name.as_str(), i).is_some() {
            return Err(FexError::DuplicateColumn(name.clone()));
        }
    }
    let schema = schema_columns();
    let mut schema_idx = Vec::with_capacity(schema.len());
    for name in &schema {
        match index.get(name.as_str()) {
            Some(&i) => schema_idx.push(i),
            None => return Err(FexError::MissingColumn(name.clone())),
        }
    }
    let extra_idx: Vec<usize> = (0..header.len()).filter(|i| !schema_idx.contains(i)).collect();
    let extra_columns: Vec<String> = extra_idx.iter().map(|&i| header[i].clone()).collect();

    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |k: usize| record.get(schema_idx[k]).unwrap_or("");
        let frame_text = cell(0).trim();
        let frame = frame_text.parse::<u64>().map_err(|_| FexError::MalformedNumber {
            row: r,
            column: "frame".into(),
            value: frame_text.to_string(),
        })?;
        let time_s = parse_cell(cell(1), r, "time_s")?;
        let mut row = FexRow::new(frame, time_s);
        row.session = cell(2).to_string();

        let mut k = 3;
        let mut read_group = |g: ColumnGroup| -> Result<Vec<f64>, FexError> {
            let names = g.columns();
            let mut vals = Vec::with_capacity(names.len());
            for name in &names {
                vals.push(parse_cell(cell(k), r, name)?);
                k += 1;
            }
            Ok(vals)
        };

        let fb = read_group(ColumnGroup::Facebox)?;
        let lm = read_group(ColumnGroup::Landmarks)?;
        let aus = read_group(ColumnGroup::Aus)?;
        let emo = read_group(ColumnGroup::Emotions)?;

        let geometry = |source| FexError::InvalidGeometry { row: r, source };
        let rect_present = fb[..4].iter().filter(|v| !v.is_nan()).count();
        row.facebox = match rect_present {
            0 if fb[4].is_nan() => None,
            4 => Some(FaceBox::new(fb[0], fb[1], fb[2], fb[3], fb[4]).map_err(geometry)?),
            _ => return Err(FexError::IncompleteGroup { row: r, group: ColumnGroup::Facebox.label() }),
        };
        let lm_present = lm.iter().filter(|v| !v.is_nan()).count();
        row.landmarks = match lm_present {
            0 => None,
            n if n == lm.len() => Some(LandmarkSet::from_flat(&lm).map_err(geometry)?),
            _ => return Err(FexError::IncompleteGroup { row: r, group: ColumnGroup::Landmarks.label() }),
        };
        if aus.iter().any(|v| !v.is_nan()) {
            row.aus = Some(AuVector(aus.try_into().expect("20 AU columns")));
        }
        if emo.iter().any(|v| !v.is_nan()) {
            row.emotions = Some(EmotionVector(emo.try_into().expect("7 emotion columns")));
        }
        row.extra = extra_idx.iter().map(|&i| record.get(i).unwrap_or("").to_string()).collect();
        rows.push(row);
    }
    FexTable::new(extra_columns, rows)
}

/// Serializes deterministically with `\n` line endings.
pub fn fex_csv_bytes(table: &FexTable) -> Result<Vec<u8>, FexError> {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header = schema_columns();
    header.extend(table.extra_columns.iter().cloned());
    writer.write_record(&header)?;
    for row in &table.rows {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        rec.push(row.frame.to_string());
        rec.push(format_number(row.time_s));
        rec.push(row.session.clone());
        for g in ColumnGroup::ALL {
            rec.extend(row.group_values(g).into_iter().map(format_number));
        }
        rec.extend(row.extra.iter().cloned());
        writer.write_record(&rec)?;
    }
    writer
        .into_inner()
        .map_err(|e| FexError::Io { path: PathBuf::from("<buffer>"), source: std::io::Error::other(e.to_string()) })
}

pub fn write_fex_csv(table: &FexTable, path: impl AsRef<Path>) -> Result<(), FexError> {
    let path = path.as_ref();
    let bytes = fex_csv_bytes(table)?;
    File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|source| FexError::Io { path: path.to_path_buf(), source })
}
