//! Landmark data model, JSONL dataset ingestion, canonical normalization and
//! the normalized mean error (NME) metric.
//!
//! A face is stored as the flattened vector `(x1, y1, x2, y2, ..., xn, yn)`;
//! that is also the layout the morphable model works in.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Point count of the standard 68-point facial annotation.
pub const DEFAULT_POINT_COUNT: usize = 68;

/// Outer eye corners in the 0-based iBUG 68-point layout.
pub const LEFT_EYE_OUTER: usize = 36;
pub const RIGHT_EYE_OUTER: usize = 45;

/// Margin applied to the tight landmark bounding box before mapping it onto
/// the unit square (box enlarged by 80%).
pub const CROP_MARGIN: f64 = 1.8;

const MIN_INTEROCULAR: f64 = 1e-9;

/// One face: `n` 2-D points, stored flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    coords: Vec<f64>,
}

impl LandmarkSet {
    pub fn from_points(points: &[[f64; 2]]) -> Result<Self> {
        Self::from_vec(points.iter().flat_map(|p| [p[0], p[1]]).collect())
    }

    /// Builds a set from a flattened `(x1, y1, ..., xn, yn)` vector.
    pub fn from_vec(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || coords.len() % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "flattened landmark vector must have positive even length, got {}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("landmark coordinates"));
        }
        Ok(Self { coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> [f64; 2] {
        [self.coords[2 * i], self.coords[2 * i + 1]]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = [f64; 2]> + '_ {
        self.coords.chunks_exact(2).map(|c| [c[0], c[1]])
    }

    pub fn to_points(&self) -> Vec<[f64; 2]> {
        self.points().collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coords
    }

    /// Applies `f` to every point.
    pub fn map_points(&self, mut f: impl FnMut([f64; 2]) -> [f64; 2]) -> Result<Self> {
        Self::from_vec(
            self.points()
                .flat_map(|p| {
                    let q = f(p);
                    [q[0], q[1]]
                })
                .collect(),
        )
    }
}

/// Coordinate space a record's points are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Pixel,
    #[default]
    Canonical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkRecord {
    pub id: String,
    pub frame: String,
    pub landmarks: LandmarkSet,
    pub space: Space,
}

/// Non-empty list of records sharing one point count.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkDataset {
    records: Vec<LandmarkRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatasetFormat {
    #[default]
    Jsonl,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: String,
    frame: String,
    points: Vec<[f64; 2]>,
    #[serde(default)]
    space: Space,
}

impl LandmarkDataset {
    pub fn new(records: Vec<LandmarkRecord>) -> Result<Self> {
        let first = records.first().ok_or(Error::EmptyDataset)?;
        let n = first.landmarks.len();
        for (i, r) in records.iter().enumerate() {
            if r.landmarks.len() != n {
                return Err(Error::InconsistentPointCount {
                    line: i + 1,
                    expected: n,
                    found: r.landmarks.len(),
                });
            }
        }
        Ok(Self { records })
    }

    /// Wraps bare landmark sets as canonical records with generated ids.
    pub fn from_landmarks(sets: impl IntoIterator<Item = LandmarkSet>) -> Result<Self> {
        Self::new(
            sets.into_iter()
                .enumerate()
                .map(|(i, landmarks)| LandmarkRecord {
                    id: "anon".into(),
                    frame: i.to_string(),
                    landmarks,
                    space: Space::Canonical,
                })
                .collect(),
        )
    }

    pub fn records(&self) -> &[LandmarkRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn point_count(&self) -> usize {
        self.records[0].landmarks.len()
    }

    pub fn landmarks(&self) -> impl ExactSizeIterator<Item = &LandmarkSet> + '_ {
        self.records.iter().map(|r| &r.landmarks)
    }

    pub fn is_canonical(&self) -> bool {
        self.records.iter().all(|r| r.space == Space::Canonical)
    }

    /// Passes every pixel-space record through [`normalize_to_canonical`].
    pub fn canonicalize(mut self) -> Result<Self> {
        for r in &mut self.records {
            if r.space == Space::Pixel {
                r.landmarks = normalize_to_canonical(&r.landmarks)?;
                r.space = Space::Canonical;
            }
        }
        Ok(self)
    }

    /// SHA-256 over the record count, point count and the bit patterns of
    /// every coordinate, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.point_count() as u64).to_le_bytes());
        for l in self.landmarks() {
            for c in l.as_slice() {
                h.update(c.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            let line = RecordLine {
                id: r.id.clone(),
                frame: r.frame.clone(),
                points: r.landmarks.to_points(),
                space: r.space,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

/// Parses a JSON Lines dataset. Blank lines are skipped; every error names
/// the 1-based line it came from.
pub fn parse_landmark_records<R: BufRead>(input: R, format: DatasetFormat) -> Result<LandmarkDataset> {
    match format {
        DatasetFormat::Jsonl => parse_jsonl(input),
    }
}

fn parse_jsonl<R: BufRead>(input: R) -> Result<LandmarkDataset> {
    let mut records = Vec::new();
    let mut expected = None;
    for (idx, line) in input.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::MalformedRecord {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: lineno,
            message: e.to_string(),
        })?;
        records.push(record_from_line(rec, lineno, &mut expected)?);
    }
    LandmarkDataset::new(records)
}

fn record_from_line(rec: RecordLine, line: usize, expected: &mut Option<usize>) -> Result<LandmarkRecord> {
    let n = rec.points.len();
    if n == 0 {
        return Err(Error::MalformedRecord {
            line,
            message: "record has no points".into(),
        });
    }
    match *expected {
        Some(e) if e != n => {
            return Err(Error::InconsistentPointCount {
                line,
                expected: e,
                found: n,
            })
        }
        _ => *expected = Some(n),
    }
    if rec.points.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::NonFiniteCoordinate { line });
    }
    Ok(LandmarkRecord {
        id: rec.id,
        frame: rec.frame,
        landmarks: LandmarkSet::from_points(&rec.points)?,
        space: rec.space,
    })
}

/// Parses records already decoded from JSON (e.g. an HTTP body). Positions in
/// the array are reported as 1-based line numbers.
pub fn dataset_from_json_values(values: Vec<serde_json::Value>) -> Result<LandmarkDataset> {
    let mut expected = None;
    let mut records = Vec::with_capacity(values.len());
    for (i, v) in values.into_iter().enumerate() {
        let rec: RecordLine = serde_json::from_value(v).map_err(|e| Error::MalformedRecord {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record_from_line(rec, i + 1, &mut expected)?);
    }
    LandmarkDataset::new(records)
}

/// Maps pixel-space landmarks into the canonical unit square.
///
/// The tight bounding box is enlarged to a square of side
/// `1.8 * max(width, height)` around its center, and that square is mapped
/// onto `[0, 1]²` with a uniform scale. Translation and scale of the input
/// are removed; rotation is kept.
pub fn normalize_to_canonical(raw: &LandmarkSet) -> Result<LandmarkSet> {
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for [x, y] in raw.points() {
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    let extent = (max_x - min_x).max(max_y - min_y);
    if !(extent > 0.0) {
        return Err(Error::DegenerateBoundingBox);
    }
    let side = CROP_MARGIN * extent;
    let cx = 0.5 * (min_x + max_x);
    let cy = 0.5 * (min_y + max_y);
    raw.map_points(|[x, y]| [(x - cx) / side + 0.5, (y - cy) / side + 0.5])
}

/// Distance between the outer eye corners (points 36 and 45).
pub fn interocular_distance(l: &LandmarkSet) -> Result<f64> {
    if l.len() != DEFAULT_POINT_COUNT {
        return Err(Error::NotSixtyEightPoints(l.len()));
    }
    let [ax, ay] = l.point(LEFT_EYE_OUTER);
    let [bx, by] = l.point(RIGHT_EYE_OUTER);
    let d = (ax - bx).hypot(ay - by);
    if d < MIN_INTEROCULAR {
        return Err(Error::DegenerateInterocular(d));
    }
    Ok(d)
}

/// Mean point-to-point Euclidean error normalized by the inter-ocular
/// distance of `truth`.
pub fn nme(pred: &LandmarkSet, truth: &LandmarkSet) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::PointCount {
            expected: truth.len(),
            found: pred.len(),
        });
    }
    let d = interocular_distance(truth)?;
    let sum: f64 = pred
        .points()
        .zip(truth.points())
        .map(|(p, t)| (p[0] - t[0]).hypot(p[1] - t[1]) / d)
        .sum();
    Ok(sum / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmeReport {
    pub per_sample: Vec<f64>,
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k: Option<usize>,
    /// Samples dropped because their inter-ocular distance was degenerate.
    #[serde(default)]
    pub skipped: usize,
}

impl NmeReport {
    pub fn from_samples(per_sample: Vec<f64>, k: Option<usize>, skipped: usize) -> Self {
        let mean = if per_sample.is_empty() {
            0.0
        } else {
            per_sample.iter().sum::<f64>() / per_sample.len() as f64
        };
        Self {
            per_sample,
            mean,
            k,
            skipped,
        }
    }
}
