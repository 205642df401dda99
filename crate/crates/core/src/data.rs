//! Synthetic benchmarks with ground-truth anomaly masks, CSV dataset IO and
//! per-coordinate standardisation.
//!
//! Every instance is a flat vector. Time-series windows are flattened
//! feature-major (`index = feature·window_len + step`), images row-major.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::AnomalyMask;
use crate::error::{Error, Result};
use crate::rng::{Purpose, Stream};

pub const DATASET_SCHEMA: &str = "arpro-ds-v1";
pub const DEFAULT_SCALE_FLOOR: f64 = 1e-6;

/// Largest image side accepted by the generator.
pub const MAX_IMAGE_SIDE: usize = 32;

const TRAIN_BLOCK: u64 = 0;
const TEST_BLOCK: u64 = 1 << 32;
const INJECT_BLOCK: u64 = 2 << 32;
const HELDOUT_BLOCK: u64 = 3 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Timeseries,
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub len: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
    pub labels: Vec<AnomalyMask>,
    pub feature_names: Vec<String>,
    pub modality: Modality,
    pub window: Option<WindowSpec>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 {
            return Err(Error::Empty("dataset features"));
        }
        if self.train.is_empty() {
            return Err(Error::Empty("training split"));
        }
        if self.labels.len() != self.test.len() {
            return Err(Error::InvalidParameter(format!(
                "{} test instances but {} label rows",
                self.test.len(),
                self.labels.len()
            )));
        }
        let rows = self.train.iter().chain(&self.test);
        if rows.clone().any(|x| x.len() != n) || self.labels.iter().any(|m| m.len() != n) {
            return Err(Error::InvalidParameter(format!("instances must all have dimension {n}")));
        }
        if rows.flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Spike,
    LevelShift,
    NoiseBurst,
    StuckSensor,
    SquareDefect,
    StripeDefect,
}

impl AnomalyKind {
    fn for_images(self) -> bool {
        matches!(self, AnomalyKind::SquareDefect | AnomalyKind::StripeDefect)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub magnitude: f64,
    /// Fraction of coordinates affected per event.
    pub extent: f64,
    #[serde(default = "one")]
    pub count: usize,
}

fn one() -> usize {
    1
}

impl AnomalySpec {
    pub fn new(kind: AnomalyKind, magnitude: f64, extent: f64, count: usize) -> Result<Self> {
        let spec = AnomalySpec {
            kind,
            magnitude,
            extent,
            count,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.magnitude > 0.0 && self.magnitude.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "anomaly magnitude must be positive, got {}",
                self.magnitude
            )));
        }
        if !(self.extent > 0.0 && self.extent <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "anomaly extent must lie in (0, 1], got {}",
                self.extent
            )));
        }
        if self.count == 0 {
            return Err(Error::InvalidParameter("anomaly count must be at least 1".into()));
        }
        Ok(())
    }

    fn coords(&self, n: usize) -> usize {
        ((self.extent * n as f64).round() as usize).clamp(1, n)
    }
}

fn check_specs(specs: &[AnomalySpec], images: bool) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Empty("anomaly specs"));
    }
    for s in specs {
        s.validate()?;
        if s.kind.for_images() != images {
            let modality = if images { "image" } else { "time-series" };
            return Err(Error::InvalidParameter(format!(
                "{:?} anomalies are not available for {modality} data",
                s.kind
            )));
        }
    }
    Ok(())
}

/// Marks exactly the coordinates where `anomalous` differs from `normal`.
fn diff_mask(normal: &[f64], anomalous: &[f64]) -> AnomalyMask {
    AnomalyMask::from_bits(normal.iter().zip(anomalous).map(|(a, b)| a != b).collect())
}

fn sign(rng: &mut Stream) -> f64 {
    if rng.coin() {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone)]
struct Component {
    freq: f64,
    amp: f64,
    phase: f64,
}

/// Per-feature sinusoid mixture shared by every window of one seed.
#[derive(Debug, Clone)]
pub struct TsGenerator {
    n_features: usize,
    window_len: usize,
    offsets: Vec<f64>,
    components: Vec<Vec<Component>>,
    /// Std of the per-window multiplicative gain jitter.
    pub gain_jitter: f64,
    pub noise: f64,
}

impl TsGenerator {
    pub fn new(n_features: usize, window_len: usize, seed: u64) -> Result<Self> {
        if n_features == 0 || window_len < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 1 feature and window length ≥ 2, got {n_features} × {window_len}"
            )));
        }
        let mut rng = Stream::for_purpose(seed, Purpose::Data, u64::MAX >> 16);
        let mut offsets = Vec::with_capacity(n_features);
        let mut components = Vec::with_capacity(n_features);
        for _ in 0..n_features {
            offsets.push(rng.uniform_range(-0.5, 0.5));
            let slow = Component {
                freq: 1.0 + rng.index(2) as f64,
                amp: rng.uniform_range(0.8, 1.2),
                phase: rng.uniform_range(0.0, TAU),
            };
            let fast = Component {
                freq: 3.0 + rng.index(3) as f64,
                amp: rng.uniform_range(0.2, 0.5),
                phase: rng.uniform_range(0.0, TAU),
            };
            components.push(vec![slow, fast]);
        }
        Ok(TsGenerator {
            n_features,
            window_len,
            offsets,
            components,
            gain_jitter: 0.1,
            noise: 0.1,
        })
    }

    pub fn dim(&self) -> usize {
        self.n_features * self.window_len
    }

    pub fn feature_names(&self) -> Vec<String> {
        (0..self.n_features)
            .flat_map(|f| (0..self.window_len).map(move |t| format!("s{f}_t{t}")))
            .collect()
    }

    /// One normal window from its own stream. Each window starts at a
    /// uniformly random phase, so every time step has the same marginal.
    pub fn normal(&self, seed: u64, index: u64) -> Vec<f64> {
        let mut rng = Stream::for_purpose(seed, Purpose::Data, index);
        let shift = rng.uniform_range(0.0, TAU);
        let len = self.window_len as f64;
        let mut x = Vec::with_capacity(self.dim());
        for f in 0..self.n_features {
            let gain = 1.0 + self.gain_jitter * rng.normal();
            for t in 0..self.window_len {
                let wave: f64 = self.components[f]
                    .iter()
                    .map(|c| c.amp * (TAU * c.freq * t as f64 / len + c.phase + c.freq * shift).sin())
                    .sum();
                x.push(self.offsets[f] + gain * wave + self.noise * rng.normal());
            }
        }
        x
    }

    fn segment(&self, rng: &mut Stream, len: usize) -> (usize, usize) {
        let len = len.clamp(1, self.window_len);
        let f = rng.index(self.n_features);
        let start = rng.index(self.window_len - len + 1);
        (f * self.window_len + start, len)
    }

    pub fn inject(&self, x: &[f64], spec: &AnomalySpec, rng: &mut Stream) -> Vec<f64> {
        let mut y = x.to_vec();
        let k = spec.coords(self.dim());
        for _ in 0..spec.count {
            match spec.kind {
                AnomalyKind::Spike => {
                    for i in rng.sample_indices(self.dim(), k) {
                        y[i] += sign(rng) * spec.magnitude;
                    }
                }
                AnomalyKind::LevelShift => {
                    let (start, len) = self.segment(rng, k);
                    let delta = sign(rng) * spec.magnitude;
                    y[start..start + len].iter_mut().for_each(|v| *v += delta);
                }
                AnomalyKind::NoiseBurst => {
                    let (start, len) = self.segment(rng, k);
                    for v in &mut y[start..start + len] {
                        *v += spec.magnitude * rng.normal();
                    }
                }
                AnomalyKind::StuckSensor => {
                    let (start, len) = self.segment(rng, k);
                    let feature = start / self.window_len;
                    let level = self.offsets[feature] + sign(rng) * spec.magnitude;
                    y[start..start + len].iter_mut().for_each(|v| *v = level);
                }
                AnomalyKind::SquareDefect | AnomalyKind::StripeDefect => {
                    unreachable!("image anomalies are rejected for time series")
                }
            }
        }
        y
    }
}

/// Normal training windows plus `n_test` anomalous test windows; test
/// instance `i` uses `specs[i % specs.len()]`.
pub fn gen_synthetic_ts(
    n_features: usize,
    window_len: usize,
    n_train: usize,
    n_test: usize,
    specs: &[AnomalySpec],
    seed: u64,
) -> Result<Dataset> {
    check_specs(specs, false)?;
    if n_train == 0 {
        return Err(Error::InvalidParameter("n_train must be positive".into()));
    }
    let gen = TsGenerator::new(n_features, window_len, seed)?;
    let train = (0..n_train as u64).map(|i| gen.normal(seed, TRAIN_BLOCK + i)).collect();
    let mut test = Vec::with_capacity(n_test);
    let mut labels = Vec::with_capacity(n_test);
    for i in 0..n_test {
        let normal = gen.normal(seed, TEST_BLOCK + i as u64);
        let mut rng = Stream::for_purpose(seed, Purpose::Data, INJECT_BLOCK + i as u64);
        let bad = gen.inject(&normal, &specs[i % specs.len()], &mut rng);
        labels.push(diff_mask(&normal, &bad));
        test.push(bad);
    }
    Ok(Dataset {
        train,
        test,
        labels,
        feature_names: gen.feature_names(),
        modality: Modality::Timeseries,
        window: Some(WindowSpec {
            len: window_len,
            stride: window_len,
        }),
    })
}

/// Fresh normal windows from the same process as [`gen_synthetic_ts`],
/// disjoint from its train and test streams.
pub fn heldout_normal_ts(n_features: usize, window_len: usize, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let gen = TsGenerator::new(n_features, window_len, seed)?;
    Ok((0..count as u64).map(|i| gen.normal(seed, HELDOUT_BLOCK + i)).collect())
}

/// Smooth grayscale texture: a 4×4 grid of N(0, 1) values bilinearly
/// upsampled to `side × side`, plus fine pixel noise.
fn texture(side: usize, rng: &mut Stream) -> Vec<f64> {
    const GRID: usize = 4;
    let coarse = rng.normals(GRID * GRID);
    let scale = (GRID - 1) as f64 / (side - 1).max(1) as f64;
    let mut img = Vec::with_capacity(side * side);
    for r in 0..side {
        let gy = r as f64 * scale;
        let y0 = (gy.floor() as usize).min(GRID - 2);
        let fy = gy - y0 as f64;
        for c in 0..side {
            let gx = c as f64 * scale;
            let x0 = (gx.floor() as usize).min(GRID - 2);
            let fx = gx - x0 as f64;
            let at = |y: usize, x: usize| coarse[y * GRID + x];
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
            let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
            img.push(top * (1.0 - fy) + bottom * fy + 0.1 * rng.normal());
        }
    }
    img
}

fn inject_image(img: &[f64], side: usize, spec: &AnomalySpec, rng: &mut Stream) -> Vec<f64> {
    let mut out = img.to_vec();
    for _ in 0..spec.count {
        match spec.kind {
            AnomalyKind::SquareDefect => {
                let k = ((spec.extent * (side * side) as f64).sqrt().round() as usize).clamp(1, side);
                let (r0, c0) = (rng.index(side - k + 1), rng.index(side - k + 1));
                for r in r0..r0 + k {
                    for c in c0..c0 + k {
                        out[r * side + c] += spec.magnitude;
                    }
                }
            }
            AnomalyKind::StripeDefect => {
                let h = ((spec.extent * side as f64).round() as usize).clamp(1, side);
                let start = rng.index(side - h + 1);
                let horizontal = rng.coin();
                for a in start..start + h {
                    for b in 0..side {
                        let i = if horizontal { a * side + b } else { b * side + a };
                        out[i] += spec.magnitude;
                    }
                }
            }
            _ => unreachable!("time-series anomalies are rejected for images"),
        }
    }
    out
}

pub fn gen_synthetic_image(side: usize, n_train: usize, n_test: usize, specs: &[AnomalySpec], seed: u64) -> Result<Dataset> {
    check_specs(specs, true)?;
    if !(2..=MAX_IMAGE_SIDE).contains(&side) {
        return Err(Error::InvalidParameter(format!(
            "image side must lie in 2..={MAX_IMAGE_SIDE}, got {side}"
        )));
    }
    if n_train == 0 {
        return Err(Error::InvalidParameter("n_train must be positive".into()));
    }
    let draw = |index: u64| texture(side, &mut Stream::for_purpose(seed, Purpose::Data, index));
    let train = (0..n_train as u64).map(|i| draw(TRAIN_BLOCK + i)).collect();
    let mut test = Vec::with_capacity(n_test);
    let mut labels = Vec::with_capacity(n_test);
    for i in 0..n_test {
        let normal = draw(TEST_BLOCK + i as u64);
        let mut rng = Stream::for_purpose(seed, Purpose::Data, INJECT_BLOCK + i as u64);
        let bad = inject_image(&normal, side, &specs[i % specs.len()], &mut rng);
        labels.push(diff_mask(&normal, &bad));
        test.push(bad);
    }
    Ok(Dataset {
        train,
        test,
        labels,
        feature_names: (0..side)
            .flat_map(|r| (0..side).map(move |c| format!("p{r}_{c}")))
            .collect(),
        modality: Modality::Image,
        window: None,
    })
}

pub fn heldout_normal_image(side: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..count as u64)
        .map(|i| texture(side, &mut Stream::for_purpose(seed, Purpose::Data, HELDOUT_BLOCK + i)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    schema: String,
    n: usize,
    modality: Modality,
    feature_names: Vec<String>,
    window: Option<WindowSpec>,
}

fn write_rows<'a>(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>> + 'a) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data {
            path: path.to_path_buf(),
            row: 0,
            col: 0,
            detail: format!("{other:?}"),
        },
    }
}

/// Writes `train.csv`, `test.csv`, `test_labels.csv` and `meta.json`.
pub fn write_csv_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let numbers = |x: &Vec<f64>| x.iter().map(f64::to_string).collect::<Vec<_>>();
    write_rows(&dir.join("train.csv"), &ds.feature_names, ds.train.iter().map(numbers))?;
    write_rows(&dir.join("test.csv"), &ds.feature_names, ds.test.iter().map(numbers))?;
    write_rows(
        &dir.join("test_labels.csv"),
        &ds.feature_names,
        ds.labels
            .iter()
            .map(|m| m.bits().iter().map(|&b| if b { "1" } else { "0" }.to_string()).collect()),
    )?;
    let meta = Meta {
        schema: DATASET_SCHEMA.into(),
        n: ds.dim(),
        modality: ds.modality,
        feature_names: ds.feature_names.clone(),
        window: ds.window,
    };
    let text = serde_json::to_string_pretty(&meta).expect("meta serialises");
    let path = dir.join("meta.json");
    fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Header and numeric rows of a CSV file. Rows and columns in errors are
/// 1-based, with the header as row 1.
pub fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let data_error = |row, col, detail: String| Error::Data {
        path: path.to_path_buf(),
        row,
        col,
        detail,
    };
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != header.len() {
            return Err(data_error(
                row,
                record.len().min(header.len()) + 1,
                format!("expected {} columns, found {}", header.len(), record.len()),
            ));
        }
        let values = record
            .iter()
            .enumerate()
            .map(|(j, cell)| match cell.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(data_error(row, j + 1, format!("non-finite value {cell:?}"))),
                Err(_) => Err(data_error(row, j + 1, format!("not a number: {cell:?}"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(values);
    }
    Ok((header, rows))
}

/// Loads a dataset directory. Without `meta.json` the data are treated as
/// row-per-instance time series.
pub fn load_csv_dataset(dir: &Path) -> Result<Dataset> {
    let train_path = dir.join("train.csv");
    let test_path = dir.join("test.csv");
    let labels_path = dir.join("test_labels.csv");
    let (names, train) = read_numeric_csv(&train_path)?;
    let (test_names, test) = read_numeric_csv(&test_path)?;
    let (label_names, label_rows) = read_numeric_csv(&labels_path)?;
    for (path, other) in [(&test_path, &test_names), (&labels_path, &label_names)] {
        if other.len() != names.len() {
            return Err(Error::Data {
                path: path.clone(),
                row: 1,
                col: other.len().min(names.len()) + 1,
                detail: format!("expected {} columns as in train.csv, found {}", names.len(), other.len()),
            });
        }
    }
    if label_rows.len() != test.len() {
        return Err(Error::Data {
            path: labels_path,
            row: label_rows.len() + 1,
            col: 1,
            detail: format!("{} label rows for {} test rows", label_rows.len(), test.len()),
        });
    }
    let mut labels = Vec::with_capacity(label_rows.len());
    for (i, row) in label_rows.iter().enumerate() {
        if let Some(j) = row.iter().position(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::Data {
                path: labels_path,
                row: i + 2,
                col: j + 1,
                detail: format!("label {} is not 0 or 1", row[j]),
            });
        }
        labels.push(AnomalyMask::from_binary(row)?);
    }

    let (modality, window) = match read_meta(dir)? {
        Some(meta) => {
            if meta.n != names.len() || meta.feature_names != names {
                return Err(Error::InvalidParameter(format!(
                    "{}: feature list disagrees with train.csv",
                    dir.join("meta.json").display()
                )));
            }
            (meta.modality, meta.window)
        }
        None => (Modality::Timeseries, None),
    };
    let ds = Dataset {
        train,
        test,
        labels,
        feature_names: names,
        modality,
        window,
    };
    ds.validate()?;
    Ok(ds)
}

fn read_meta(dir: &Path) -> Result<Option<Meta>> {
    let path = dir.join("meta.json");
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: Meta = serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?;
    if meta.schema != DATASET_SCHEMA {
        return Err(Error::InvalidParameter(format!(
            "{}: unsupported schema {:?}",
            path.display(),
            meta.schema
        )));
    }
    Ok(Some(meta))
}

/// Cuts a long-format series (one row per time step, one column per sensor)
/// into windows flattened feature-major.
pub fn window_series(rows: &[Vec<f64>], window: WindowSpec) -> Result<Vec<Vec<f64>>> {
    if window.len == 0 || window.stride == 0 {
        return Err(Error::InvalidParameter("window length and stride must be positive".into()));
    }
    let Some(first) = rows.first() else {
        return Err(Error::Empty("series"));
    };
    let f = first.len();
    if rows.iter().any(|r| r.len() != f) {
        return Err(Error::InvalidParameter("ragged series rows".into()));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + window.len <= rows.len() {
        let chunk = &rows[start..start + window.len];
        out.push((0..f).flat_map(|j| chunk.iter().map(move |r| r[j])).collect());
        start += window.stride;
    }
    Ok(out)
}

/// Column names for windows produced by [`window_series`].
pub fn window_feature_names(sensors: &[String], len: usize) -> Vec<String> {
    sensors
        .iter()
        .flat_map(|s| (0..len).map(move |t| format!("{s}_t{t}")))
        .collect()
}

/// Reads a long-format CSV and windows it (stride defaults to `len`).
pub fn load_long_csv(path: &Path, len: usize, stride: Option<usize>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let (sensors, rows) = read_numeric_csv(path)?;
    let window = WindowSpec {
        len,
        stride: stride.unwrap_or(len),
    };
    Ok((window_feature_names(&sensors, len), window_series(&rows, window)?))
}

/// Per-coordinate standardisation fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    shift: Vec<f64>,
    scale: Vec<f64>,
}

/// Mean and population standard deviation per coordinate, the latter
/// clamped below by `floor`.
pub fn fit_scaler(train: &[Vec<f64>], floor: f64) -> Result<Scaler> {
    let first = train.first().ok_or(Error::Empty("scaler training data"))?;
    if !(floor > 0.0) {
        return Err(Error::InvalidParameter(format!("scale floor must be positive, got {floor}")));
    }
    let n = first.len();
    if train.iter().any(|x| x.len() != n) {
        return Err(Error::InvalidParameter("ragged scaler training data".into()));
    }
    let m = train.len() as f64;
    let mut shift = vec![0.0; n];
    for x in train {
        for (s, v) in shift.iter_mut().zip(x) {
            *s += v;
        }
    }
    shift.iter_mut().for_each(|s| *s /= m);
    let mut var = vec![0.0; n];
    for x in train {
        for ((acc, v), mu) in var.iter_mut().zip(x).zip(&shift) {
            *acc += (v - mu).powi(2);
        }
    }
    let scale = var.iter().map(|v| (v / m).sqrt().max(floor)).collect();
    Ok(Scaler { shift, scale })
}

impl Scaler {
    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        crate::error::ensure_dim("scaler", self.dim(), x.len())?;
        Ok(x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn invert(&self, z: &[f64]) -> Result<Vec<f64>> {
        crate::error::ensure_dim("scaler", self.dim(), z.len())?;
        Ok(z.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (m, s))| v * s + m)
            .collect())
    }

    pub fn apply_all(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|x| self.apply(x)).collect()
    }

    /// Copy of `ds` with both splits standardised.
    pub fn apply_dataset(&self, ds: &Dataset) -> Result<Dataset> {
        Ok(Dataset {
            train: self.apply_all(&ds.train)?,
            test: self.apply_all(&ds.test)?,
            ..ds.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spike(extent: f64) -> AnomalySpec {
        AnomalySpec::new(AnomalyKind::Spike, 3.0, extent, 1).unwrap()
    }

    #[test]
    fn spike_density_matches_extent() {
        let ds = gen_synthetic_ts(4, 32, 10, 20, &[spike(0.05)], 3).unwrap();
        for m in &ds.labels {
            let density = m.count() as f64 / m.len() as f64;
            assert!((0.03..=0.07).contains(&density), "density {density}");
        }
        assert_eq!(ds.dim(), 128);
    }

    #[test]
    fn generation_is_deterministic() {
        let specs = [spike(0.05), AnomalySpec::new(AnomalyKind::LevelShift, 2.0, 0.1, 1).unwrap()];
        let a = gen_synthetic_ts(3, 16, 5, 6, &specs, 11).unwrap();
        assert_eq!(a, gen_synthetic_ts(3, 16, 5, 6, &specs, 11).unwrap());
        assert_ne!(a, gen_synthetic_ts(3, 16, 5, 6, &specs, 12).unwrap());
        let sq = [AnomalySpec::new(AnomalyKind::SquareDefect, 3.0, 0.1, 1).unwrap()];
        let b = gen_synthetic_image(8, 4, 3, &sq, 5).unwrap();
        assert_eq!(b, gen_synthetic_image(8, 4, 3, &sq, 5).unwrap());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(AnomalySpec::new(AnomalyKind::Spike, 0.0, 0.1, 1).is_err());
        assert!(AnomalySpec::new(AnomalyKind::Spike, 1.0, 0.0, 1).is_err());
        assert!(AnomalySpec::new(AnomalyKind::Spike, 1.0, 1.5, 1).is_err());
        assert!(AnomalySpec::new(AnomalyKind::Spike, 1.0, 0.5, 0).is_err());
        let sq = AnomalySpec::new(AnomalyKind::SquareDefect, 1.0, 0.1, 1).unwrap();
        assert!(gen_synthetic_ts(2, 8, 2, 2, &[sq], 0).is_err());
        assert!(gen_synthetic_image(8, 2, 2, &[spike(0.1)], 0).is_err());
        assert!(gen_synthetic_image(33, 2, 2, &[sq], 0).is_err());
        assert!(gen_synthetic_ts(2, 8, 2, 2, &[], 0).is_err());
    }

    #[test]
    fn square_defect_area_is_exact() {
        let sq = AnomalySpec::new(AnomalyKind::SquareDefect, 2.5, 0.1, 1).unwrap();
        let ds = gen_synthetic_image(16, 2, 5, &[sq], 1).unwrap();
        // round(√(0.1·256)) = 5.
        assert!(ds.labels.iter().all(|m| m.count() == 25));
    }

    #[test]
    fn every_ts_kind_differs_exactly_on_mask() {
        let gen = TsGenerator::new(3, 20, 4).unwrap();
        for kind in [
            AnomalyKind::Spike,
            AnomalyKind::LevelShift,
            AnomalyKind::NoiseBurst,
            AnomalyKind::StuckSensor,
        ] {
            let spec = AnomalySpec::new(kind, 2.0, 0.15, 2).unwrap();
            let x = gen.normal(4, 0);
            let y = gen.inject(&x, &spec, &mut Stream::new(4, 9));
            let m = diff_mask(&x, &y);
            assert!(m.count() > 0, "{kind:?}");
            for ((a, b), bit) in x.iter().zip(&y).zip(m.bits()) {
                assert_eq!(a != b, *bit);
            }
        }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_synthetic_ts(2, 8, 6, 3, &[spike(0.1)], 2).unwrap();
        write_csv_dataset(&ds, dir.path()).unwrap();
        assert_eq!(load_csv_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn csv_without_meta_is_row_per_instance() {
        let dir = tempfile::tempdir().unwrap();
        let rows: String = (0..10).map(|i| format!("{i},{}.5,-1\n", i * 2)).collect();
        fs::write(dir.path().join("train.csv"), format!("a,b,c\n{rows}")).unwrap();
        fs::write(dir.path().join("test.csv"), "a,b,c\n1,2,3\n").unwrap();
        fs::write(dir.path().join("test_labels.csv"), "a,b,c\n0,1,0\n").unwrap();
        let ds = load_csv_dataset(dir.path()).unwrap();
        assert_eq!(ds.train.len(), 10);
        assert_eq!(ds.dim(), 3);
        assert_eq!(ds.modality, Modality::Timeseries);
        assert_eq!(ds.labels[0].bits(), &[false, true, false]);
    }

    #[test]
    fn csv_errors_are_addressed() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("train.csv"), "a,b\n1,2\n").unwrap();
        fs::write(dir.path().join("test.csv"), "a,b\n1,2\n3,4\n").unwrap();
        fs::write(dir.path().join("test_labels.csv"), "a,b\n0,0\n0,2\n").unwrap();
        match load_csv_dataset(dir.path()) {
            Err(Error::Data { row, col, .. }) => assert_eq!((row, col), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }

        fs::write(dir.path().join("test_labels.csv"), "a,b\n0,0\n0,1\n").unwrap();
        fs::write(dir.path().join("train.csv"), "a,b\n1,2\n3\n").unwrap();
        assert!(matches!(load_csv_dataset(dir.path()), Err(Error::Data { row: 3, .. })));
        fs::write(dir.path().join("train.csv"), "a,b\n1,x\n").unwrap();
        assert!(matches!(load_csv_dataset(dir.path()), Err(Error::Data { row: 2, col: 2, .. })));
        fs::write(dir.path().join("train.csv"), "a,b\n1,NaN\n").unwrap();
        assert!(matches!(load_csv_dataset(dir.path()), Err(Error::Data { row: 2, col: 2, .. })));

        fs::remove_file(dir.path().join("train.csv")).unwrap();
        match load_csv_dataset(dir.path()) {
            Err(Error::MissingFile(p)) => assert!(p.ends_with("train.csv")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn windowing_is_feature_major() {
        let rows: Vec<Vec<f64>> = (0..7).map(|t| vec![t as f64, 10.0 + t as f64]).collect();
        let w = window_series(&rows, WindowSpec { len: 3, stride: 3 }).unwrap();
        assert_eq!(w, vec![vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0], vec![3.0, 4.0, 5.0, 13.0, 14.0, 15.0]]);
        let w = window_series(&rows, WindowSpec { len: 3, stride: 2 }).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(
            window_feature_names(&["a".into()], 2),
            vec!["a_t0".to_string(), "a_t1".to_string()]
        );
    }

    #[test]
    fn scaler_examples() {
        let s = fit_scaler(&[vec![0.0], vec![2.0]], DEFAULT_SCALE_FLOOR).unwrap();
        assert_eq!(s.apply(&[2.0]).unwrap(), vec![1.0]);
        let c = fit_scaler(&[vec![5.0, 1.0], vec![5.0, 3.0]], 1e-3).unwrap();
        assert_eq!(c.scale()[0], 1e-3);
        assert_eq!(c.apply(&[5.0, 2.0]).unwrap()[0], 0.0);
        let x = [3.7, -12.25];
        let back = c.invert(&c.apply(&x).unwrap()).unwrap();
        assert!(back.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(fit_scaler(&[], 1e-6).is_err());
    }
}
