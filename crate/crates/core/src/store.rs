//! File formats and run configuration.
//!
//! Every text artifact is JSON lines: a header object naming the format,
//! kind, version and schema hash, followed by one record per line. Frame
//! streams may also use a packed little-endian binary layout (`.tgrb`).
//! Writes go to a temporary file in the target directory and are renamed
//! into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::anomaly::{AnomalyDetector, DetectorOptions};
use crate::capsim::{Frame, GestureKind, RawRecording, SensorConfig, TruthAnnotation};
use crate::dimreduce::{FeatureMask, PcaModel};
use crate::featurization::{FeatureConfig, LabeledDataset, Scaler, Schema};
use crate::linalg::Matrix;
use crate::segmentation::GestureEvent;
use crate::linmodels::{LogRegModel, SoftmaxModel, TrainOptions};
use crate::svm::{SmoOptions, SvmModel};
use crate::{Error, Result};

pub const FORMAT: &str = "touchguard";
pub const VERSION: u32 = 1;
pub const BINARY_MAGIC: &[u8; 4] = b"TGRB";
pub const BINARY_EXTENSION: &str = "tgrb";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub kind: String,
    pub version: u32,
    pub schema_hash: Option<String>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Header {
    pub fn new(kind: &str, schema_hash: Option<String>, meta: serde_json::Value) -> Self {
        Self {
            format: FORMAT.to_string(),
            kind: kind.to_string(),
            version: VERSION,
            schema_hash,
            meta,
        }
    }
}

fn parse_error(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

fn json_error(path: &Path, line_start: usize, e: &serde_json::Error) -> Error {
    parse_error(path, line_start + e.column().saturating_sub(1), e.to_string())
}

/// Writes `bytes` to `path` through a sibling temporary file, creating
/// missing parent directories.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn to_line<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::invalid(format!("cannot serialize: {e}")))
}

/// Serializes a header and records as JSON lines.
pub fn encode_records<R: Serialize>(header: &Header, records: &[R]) -> Result<String> {
    let mut out = to_line(header)?;
    out.push('\n');
    for r in records {
        out.push_str(&to_line(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_records<R: Serialize>(path: &Path, header: &Header, records: &[R]) -> Result<()> {
    write_atomic(path, encode_records(header, records)?.as_bytes())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses JSON-lines content, checking the header against `kind`. Blank
/// lines are skipped.
pub fn decode_records<R: DeserializeOwned>(path: &Path, text: &[u8], kind: &str) -> Result<(Header, Vec<R>)> {
    let text = std::str::from_utf8(text)
        .map_err(|e| parse_error(path, e.valid_up_to(), "file is not valid UTF-8"))?;
    let mut lines = Vec::new();
    let mut start = 0;
    for line in text.split_inclusive('\n') {
        let body = line.trim_end_matches(['\n', '\r']);
        if !body.trim().is_empty() {
            lines.push((start, body));
        }
        start += line.len();
    }
    let Some(&(h_start, h_line)) = lines.first() else {
        return Err(Error::Empty { path: path.to_path_buf() });
    };
    let probe: serde_json::Value = serde_json::from_str(h_line).map_err(|e| json_error(path, h_start, &e))?;
    if probe.get("format").and_then(|f| f.as_str()) != Some(FORMAT) {
        return Err(parse_error(path, h_start, "missing touchguard header line"));
    }
    let found_kind = probe.get("kind").and_then(|k| k.as_str()).unwrap_or("").to_string();
    if found_kind != kind {
        return Err(Error::WrongKind {
            path: path.to_path_buf(),
            expected: kind.to_string(),
            found: found_kind,
        });
    }
    let version = probe.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
    if version != u64::from(VERSION) {
        return Err(Error::Version {
            path: path.to_path_buf(),
            kind: kind.to_string(),
            found: u32::try_from(version).unwrap_or(u32::MAX),
            supported: VERSION,
        });
    }
    let header: Header = serde_json::from_value(probe).map_err(|e| parse_error(path, h_start, e.to_string()))?;
    let records = lines[1..]
        .iter()
        .map(|&(s, l)| serde_json::from_str(l).map_err(|e| json_error(path, s, &e)))
        .collect::<Result<Vec<R>>>()?;
    Ok((header, records))
}

pub fn read_records<R: DeserializeOwned>(path: &Path, kind: &str) -> Result<(Header, Vec<R>)> {
    decode_records(path, &read_file(path)?, kind)
}

fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} holds non-finite values, which the text format cannot store")))
    }
}

fn meta_field<T: DeserializeOwned>(path: &Path, header: &Header, field: &str) -> Result<T> {
    let v = header
        .meta
        .get(field)
        .ok_or_else(|| parse_error(path, 0, format!("header is missing meta.{field}")))?;
    serde_json::from_value(v.clone()).map_err(|e| parse_error(path, 0, format!("meta.{field}: {e}")))
}

// ---- recordings ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrameRecord {
    t: f64,
    v: Vec<f64>,
}

/// Path of the ground-truth sidecar for a recording.
pub fn truth_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".truth.json");
    PathBuf::from(s)
}

fn is_binary(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()) == Some(BINARY_EXTENSION)
}

/// Saves frames as JSON lines, or packed binary when the extension is
/// `.tgrb`. Truth annotations go to a `.truth.json` sidecar.
pub fn save_recording(path: &Path, rec: &RawRecording) -> Result<()> {
    rec.validate()?;
    if is_binary(path) {
        write_atomic(path, &encode_binary(rec))?;
    } else {
        let header = Header::new(
            "recording",
            None,
            serde_json::json!({ "config": rec.config, "frames": rec.frames.len() }),
        );
        let records = rec
            .frames
            .iter()
            .map(|f| {
                check_finite("frame", &f.values)?;
                Ok(FrameRecord { t: f.timestamp, v: f.values.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        write_records(path, &header, &records)?;
    }
    let sidecar = truth_path(path);
    match &rec.truth {
        Some(t) => write_atomic(&sidecar, (serde_json::to_string_pretty(t).map_err(|e| Error::invalid(e.to_string()))? + "\n").as_bytes())?,
        None => {
            if sidecar.exists() {
                fs::remove_file(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
            }
        }
    }
    Ok(())
}

pub fn load_recording(path: &Path) -> Result<RawRecording> {
    let mut rec = if is_binary(path) {
        decode_binary(path, &read_file(path)?)?
    } else {
        let (header, records): (Header, Vec<FrameRecord>) = read_records(path, "recording")?;
        let config: SensorConfig = meta_field(path, &header, "config")?;
        if records.is_empty() {
            return Err(Error::Empty { path: path.to_path_buf() });
        }
        let frames = records
            .into_iter()
            .map(|r| Frame::from_values(config.rows, config.cols, r.v, r.t))
            .collect::<Result<Vec<_>>>()?;
        RawRecording { config, frames, truth: None }
    };
    let sidecar = truth_path(path);
    if sidecar.exists() {
        let bytes = read_file(&sidecar)?;
        let truth: Vec<TruthAnnotation> = serde_json::from_slice(&bytes).map_err(|e| {
            parse_error(&sidecar, line_col_offset(&bytes, e.line(), e.column()), e.to_string())
        })?;
        rec.truth = Some(truth);
    }
    rec.validate()?;
    Ok(rec)
}

fn line_col_offset(bytes: &[u8], line: usize, col: usize) -> usize {
    let start: usize = bytes
        .split_inclusive(|&b| b == b'\n')
        .take(line.saturating_sub(1))
        .map(<[u8]>::len)
        .sum();
    start + col.saturating_sub(1)
}

/// Packed layout, little-endian: `"TGRB"`, u32 version, u32 rows, u32 cols,
/// f64 frame rate, f64 noise sigma, u64 frame count, then per frame an f64
/// timestamp followed by `rows·cols` f64 values in row-major order.
pub fn encode_binary(rec: &RawRecording) -> Vec<u8> {
    let c = &rec.config;
    let mut out = Vec::with_capacity(40 + rec.frames.len() * 8 * (1 + c.pixels()));
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(c.rows as u32).to_le_bytes());
    out.extend_from_slice(&(c.cols as u32).to_le_bytes());
    out.extend_from_slice(&c.frame_rate.to_le_bytes());
    out.extend_from_slice(&c.noise_sigma.to_le_bytes());
    out.extend_from_slice(&(rec.frames.len() as u64).to_le_bytes());
    for f in &rec.frames {
        out.extend_from_slice(&f.timestamp.to_le_bytes());
        for v in &f.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| parse_error(self.path, self.pos, format!("truncated while reading {what}")))?;
        self.pos = end;
        Ok(slice.try_into().expect("length checked"))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(what)?))
    }
}

pub fn decode_binary(path: &Path, bytes: &[u8]) -> Result<RawRecording> {
    if bytes.is_empty() {
        return Err(Error::Empty { path: path.to_path_buf() });
    }
    let mut c = Cursor { path, bytes, pos: 0 };
    if &c.take::<4>("magic")? != BINARY_MAGIC {
        return Err(parse_error(path, 0, "bad magic, expected TGRB"));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            kind: "recording".into(),
            found: version,
            supported: VERSION,
        });
    }
    let rows = c.u32("rows")? as usize;
    let cols = c.u32("cols")? as usize;
    let config = SensorConfig {
        rows,
        cols,
        frame_rate: c.f64("frame rate")?,
        noise_sigma: c.f64("noise sigma")?,
    };
    let n = c.u64("frame count")?;
    if n == 0 {
        return Err(Error::Empty { path: path.to_path_buf() });
    }
    let frame_bytes = 8 * (1 + rows * cols);
    let expected = c.pos as u64 + n * frame_bytes as u64;
    if expected != bytes.len() as u64 {
        return Err(parse_error(
            path,
            bytes.len().min(c.pos),
            format!("frame count {n} needs {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let mut frames = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let t = c.f64("timestamp")?;
        let values = (0..rows * cols).map(|_| c.f64("pixel")).collect::<Result<Vec<_>>>()?;
        frames.push(Frame::from_values(rows, cols, values, t)?);
    }
    Ok(RawRecording { config, frames, truth: None })
}

// ---- datasets ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetRecord {
    label: String,
    x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetMeta {
    schema: Schema,
    gesture_kind: Option<GestureKind>,
    scaler: Option<Scaler>,
    rows: usize,
}

pub fn save_dataset(path: &Path, ds: &LabeledDataset) -> Result<()> {
    check_finite("dataset", ds.features.as_slice())?;
    let meta = DatasetMeta {
        schema: ds.schema.clone(),
        gesture_kind: ds.kind,
        scaler: ds.scaler.clone(),
        rows: ds.len(),
    };
    let header = Header::new(
        "dataset",
        Some(ds.schema.id()),
        serde_json::to_value(&meta).map_err(|e| Error::invalid(e.to_string()))?,
    );
    let records: Vec<DatasetRecord> = ds
        .features
        .iter_rows()
        .zip(&ds.labels)
        .map(|(x, l)| DatasetRecord { label: l.clone(), x: x.to_vec() })
        .collect();
    write_records(path, &header, &records)
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let (header, records): (Header, Vec<DatasetRecord>) = read_records(path, "dataset")?;
    let meta: DatasetMeta = serde_json::from_value(header.meta.clone())
        .map_err(|e| parse_error(path, 0, format!("dataset header: {e}")))?;
    if records.is_empty() {
        return Err(Error::Empty { path: path.to_path_buf() });
    }
    if header.schema_hash.as_deref() != Some(meta.schema.id().as_str()) {
        return Err(parse_error(path, 0, "schema hash does not match the embedded schema"));
    }
    if records.len() != meta.rows {
        return Err(parse_error(path, 0, format!("header promises {} rows, found {}", meta.rows, records.len())));
    }
    let (labels, rows): (Vec<String>, Vec<Vec<f64>>) = records.into_iter().map(|r| (r.label, r.x)).unzip();
    let mut ds = LabeledDataset::new(meta.gesture_kind, meta.schema, Matrix::from_rows(&rows)?, labels)?;
    ds.scaler = meta.scaler;
    Ok(ds)
}

// ---- events ----

/// Writes segmented events; `threshold` is recorded in the header.
pub fn save_events(path: &Path, events: &[GestureEvent], threshold: f64) -> Result<()> {
    if events.is_empty() {
        return Err(Error::invalid("no events to save"));
    }
    let header = Header::new("events", None, serde_json::json!({ "threshold": threshold }));
    write_records(path, &header, events)
}

pub fn load_events(path: &Path) -> Result<Vec<GestureEvent>> {
    let (_, events): (Header, Vec<GestureEvent>) = read_records(path, "events")?;
    if events.is_empty() {
        return Err(Error::Empty { path: path.to_path_buf() });
    }
    for (i, e) in events.iter().enumerate() {
        if e.frames.is_empty() || e.end_index + 1 != e.start_index + e.frames.len() {
            return Err(parse_error(path, 0, format!("event {i}: frame count does not match its index span")));
        }
        for f in &e.frames {
            f.validate()?;
        }
    }
    Ok(events)
}

// ---- masks ----

pub fn save_mask(path: &Path, mask: &FeatureMask, schema: Option<&Schema>) -> Result<()> {
    if let Some(s) = schema {
        mask.validate(s.len())?;
    }
    let header = Header::new("mask", schema.map(Schema::id), serde_json::Value::Null);
    write_records(path, &header, std::slice::from_ref(mask))
}

/// Loads a mask, returning the schema hash it was made for.
pub fn load_mask(path: &Path) -> Result<(FeatureMask, Option<String>)> {
    let (header, mut records): (Header, Vec<FeatureMask>) = read_records(path, "mask")?;
    match records.len() {
        0 => Err(Error::Empty { path: path.to_path_buf() }),
        1 => Ok((records.remove(0), header.schema_hash)),
        n => Err(parse_error(path, 0, format!("mask file holds {n} records, expected 1"))),
    }
}

// ---- models ----

/// Any trained model. Serialized with a `type` tag.
// Bundles are loaded once per run, so the size skew between variants is harmless.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Model {
    Logreg(LogRegModel),
    Softmax(SoftmaxModel),
    Svm(SvmModel),
    Gmm(AnomalyDetector),
    Pca(PcaModel),
}

impl Model {
    pub fn type_name(&self) -> &'static str {
        match self {
            Model::Logreg(_) => "logreg",
            Model::Softmax(_) => "softmax",
            Model::Svm(_) => "svm",
            Model::Gmm(_) => "gmm",
            Model::Pca(_) => "pca",
        }
    }
}

/// A model with the preprocessing it expects: raw vectors are z-scored with
/// `scaler` (full schema), then reduced by `mask`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub model: Model,
    pub scaler: Option<Scaler>,
    pub mask: Option<FeatureMask>,
    pub feature_config: Option<FeatureConfig>,
    pub gesture_kind: Option<GestureKind>,
    /// Genuine user of a detector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
}

impl ModelBundle {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            scaler: None,
            mask: None,
            feature_config: None,
            gesture_kind: None,
            user: None,
        }
    }

    /// Applies the stored scaler and mask to a raw feature vector.
    pub fn prepare(&self, raw: &[f64]) -> Result<Vec<f64>> {
        let scaled = match &self.scaler {
            Some(s) => s.apply(raw)?,
            None => raw.to_vec(),
        };
        match &self.mask {
            Some(m) => m.apply_vector(&scaled),
            None => Ok(scaled),
        }
    }

    /// Label predicted for a raw feature vector. Detectors answer
    /// `accept`/`reject`; PCA models have no label.
    pub fn predict_label(&self, raw: &[f64]) -> Result<String> {
        let x = self.prepare(raw)?;
        Ok(match &self.model {
            Model::Logreg(m) => m.predict(&x)?.1,
            Model::Softmax(m) => m.predict(&x)?.1,
            Model::Svm(m) => m.predict(&x)?.label,
            Model::Gmm(d) => if d.classify(&x)?.accept { "accept" } else { "reject" }.to_string(),
            Model::Pca(_) => return Err(Error::invalid("PCA models do not predict labels")),
        })
    }
}

pub fn save_model(path: &Path, bundle: &ModelBundle, schema: Option<&Schema>) -> Result<()> {
    let header = Header::new("model", schema.map(Schema::id), serde_json::json!({ "type": bundle.model.type_name() }));
    write_records(path, &header, std::slice::from_ref(bundle))
}

/// Loads a model bundle and the schema hash it was trained against.
pub fn load_model(path: &Path) -> Result<(ModelBundle, Option<String>)> {
    let (header, mut records): (Header, Vec<ModelBundle>) = read_records(path, "model")?;
    match records.len() {
        0 => Err(Error::Empty { path: path.to_path_buf() }),
        1 => Ok((records.remove(0), header.schema_hash)),
        n => Err(parse_error(path, 0, format!("model file holds {n} records, expected 1"))),
    }
}

// ---- run configuration ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSection {
    pub taps: FeatureConfig,
    pub circles: FeatureConfig,
    pub random: FeatureConfig,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self {
            taps: FeatureConfig::taps(),
            circles: FeatureConfig::circles(),
            random: FeatureConfig::random(),
        }
    }
}

impl FeatureSection {
    pub fn for_kind(&self, kind: GestureKind) -> FeatureConfig {
        match kind {
            GestureKind::Tap => self.taps,
            GestureKind::Circle => self.circles,
            GestureKind::Random => self.random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmSection {
    pub c: f64,
    pub gamma: f64,
    pub smo: SmoOptions,
}

impl Default for SvmSection {
    fn default() -> Self {
        Self { c: 10.0, gamma: 0.01, smo: SmoOptions::default() }
    }
}

/// Seeds are mandatory so no run draws on ambient entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub corpus: u64,
    pub split: u64,
    pub model: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub model_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { data_dir: PathBuf::from("data"), model_dir: PathBuf::from("models") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub sensor: SensorConfig,
    #[serde(default)]
    pub features: FeatureSection,
    #[serde(default)]
    pub logistic: TrainOptions,
    #[serde(default)]
    pub svm: SvmSection,
    #[serde(default)]
    pub anomaly: DetectorOptions,
    pub seeds: Seeds,
    #[serde(default)]
    pub paths: Paths,
    /// Gesture counts per user for synthetic corpora.
    #[serde(default)]
    pub per_user: BTreeMap<GestureKind, usize>,
}

impl RunConfig {
    pub fn with_seeds(seeds: Seeds) -> Self {
        Self {
            sensor: SensorConfig::default(),
            features: FeatureSection::default(),
            logistic: TrainOptions::default(),
            svm: SvmSection::default(),
            anomaly: DetectorOptions::default(),
            seeds,
            paths: Paths::default(),
            per_user: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        for kind in GestureKind::ALL {
            self.features.for_kind(kind).validate()?;
        }
        self.logistic.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::invalid(format!("cannot encode config: {e}")))
    }

    /// Parses TOML; relative paths are taken from `base`.
    pub fn from_toml(text: &str, origin: &Path, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            parse_error(origin, e.span().map_or(0, |s| s.start), e.message().to_string())
        })?;
        cfg.validate()?;
        for p in [&mut cfg.paths.data_dir, &mut cfg.paths.model_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            let parent = p.parent().unwrap_or(Path::new("/"));
            if !p.exists() && !parent.as_os_str().is_empty() && !parent.exists() {
                return Err(Error::invalid(format!("{}: neither it nor its parent exists", p.display())));
            }
        }
        Ok(cfg)
    }
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    RunConfig::from_toml(&text, path, base)
}

pub fn save_run_config(path: &Path, cfg: &RunConfig) -> Result<()> {
    write_atomic(path, cfg.to_toml()?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capsim::{synth_corpus, synthetic_profiles};

    fn small_recording() -> RawRecording {
        let profiles = synthetic_profiles(2, 1.0);
        let counts = BTreeMap::from([(GestureKind::Tap, 2)]);
        synth_corpus(&profiles, &counts, &SensorConfig::default(), 5).unwrap()
    }

    #[test]
    fn recording_round_trips_in_both_encodings() {
        let dir = tempfile::tempdir().unwrap();
        let rec = small_recording();
        for name in ["r.jsonl", "r.tgrb"] {
            let p = dir.path().join(name);
            save_recording(&p, &rec).unwrap();
            assert_eq!(load_recording(&p).unwrap(), rec);
        }
    }

    #[test]
    fn binary_truncation_reports_offset() {
        let rec = small_recording();
        let bytes = encode_binary(&rec);
        let err = decode_binary(Path::new("x.tgrb"), &bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_binary(Path::new("x.tgrb"), &bad), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn header_checks() {
        let p = Path::new("m.jsonl");
        let v2 = br#"{"format":"touchguard","kind":"mask","version":2,"schema_hash":null}"#;
        assert!(matches!(decode_records::<FeatureMask>(p, v2, "mask"), Err(Error::Version { found: 2, .. })));
        let wrong = br#"{"format":"touchguard","kind":"model","version":1,"schema_hash":null}"#;
        assert!(matches!(decode_records::<FeatureMask>(p, wrong, "mask"), Err(Error::WrongKind { .. })));
        assert!(matches!(decode_records::<FeatureMask>(p, b"", "mask"), Err(Error::Empty { .. })));
        let broken = b"{\"format\":\"touchguard\",\"kind\":\"mask\",\"version\":1,\"schema_hash\":null}\n{\"selected\":[1,}\n";
        match decode_records::<FeatureMask>(p, broken, "mask") {
            Err(Error::Parse { offset, .. }) => assert!((70..90).contains(&offset), "{offset}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn run_config_requires_seeds_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(&p, "[sensor]\nrows = 16\ncols = 16\nframe_rate = 30.0\nnoise_sigma = 1.0\n").unwrap();
        assert!(load_run_config(&p).is_err());
        let cfg = RunConfig::with_seeds(Seeds { corpus: 1, split: 2, model: 3 });
        save_run_config(&p, &cfg).unwrap();
        let back = load_run_config(&p).unwrap();
        assert_eq!(back.seeds, cfg.seeds);
        assert_eq!(back.paths.model_dir, dir.path().join("models"));
        assert_eq!(back.anomaly, cfg.anomaly);
    }
}
