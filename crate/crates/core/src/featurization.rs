//! Fixed-length gesture features.
//!
//! Each event becomes `frames_f` windows of `window_n × window_n` pressure
//! values cut around the frame maximum, followed by optional per-frame
//! velocities and the event duration:
//!
//! ```text
//! [ window_0 (row-major) | ... | window_{f-1} | vx_0 vy_0 ... vx_{f-1} vy_{f-1} | duration ]
//! ```
//!
//! Events longer than `frames_f` are subsampled at evenly spaced indices;
//! shorter events are stretched by linear interpolation between neighbouring
//! real frames.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::capsim::{Frame, GestureKind, SubPixel};
use crate::linalg::Matrix;
use crate::segmentation::{frame_max, GestureEvent};
use crate::{par, Error, Result};

pub const ALLOWED_WINDOWS: [usize; 3] = [3, 5, 7];
pub const ALLOWED_FRAME_COUNTS: [usize; 3] = [3, 5, 30];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub window_n: usize,
    pub frames_f: usize,
    pub include_velocity: bool,
    pub include_duration: bool,
}

impl FeatureConfig {
    /// 5×5 windows over 5 frames plus duration: 126 features.
    pub fn taps() -> Self {
        Self {
            window_n: 5,
            frames_f: 5,
            include_velocity: false,
            include_duration: true,
        }
    }

    /// 7×7 windows over 30 frames plus velocity and duration: 1531 features.
    pub fn circles() -> Self {
        Self {
            window_n: 7,
            frames_f: 30,
            include_velocity: true,
            include_duration: true,
        }
    }

    pub fn random() -> Self {
        Self::circles()
    }

    pub fn for_kind(kind: GestureKind) -> Self {
        match kind {
            GestureKind::Tap => Self::taps(),
            GestureKind::Circle => Self::circles(),
            GestureKind::Random => Self::random(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !ALLOWED_WINDOWS.contains(&self.window_n) {
            return Err(Error::invalid(format!(
                "window size {} not in {ALLOWED_WINDOWS:?}",
                self.window_n
            )));
        }
        if !ALLOWED_FRAME_COUNTS.contains(&self.frames_f) {
            return Err(Error::invalid(format!(
                "frame count {} not in {ALLOWED_FRAME_COUNTS:?}",
                self.frames_f
            )));
        }
        Ok(())
    }

    pub fn feature_len(&self) -> usize {
        self.frames_f * self.window_n * self.window_n
            + if self.include_velocity { 2 * self.frames_f } else { 0 }
            + usize::from(self.include_duration)
    }
}

impl FromStr for FeatureConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(Self::for_kind(s.parse()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureDescriptor {
    /// Window pixel at (`row`, `col`) of selected frame `frame`.
    Pressure { frame: usize, row: usize, col: usize },
    Vx { frame: usize },
    Vy { frame: usize },
    Duration,
}

impl fmt::Display for FeatureDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureDescriptor::Pressure { frame, row, col } => write!(f, "f{frame}:p({row},{col})"),
            FeatureDescriptor::Vx { frame } => write!(f, "f{frame}:vx"),
            FeatureDescriptor::Vy { frame } => write!(f, "f{frame}:vy"),
            FeatureDescriptor::Duration => f.write_str("duration"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub config: FeatureConfig,
    pub descriptors: Vec<FeatureDescriptor>,
}

impl Schema {
    pub fn for_config(config: FeatureConfig) -> Self {
        let n = config.window_n;
        let mut descriptors = Vec::with_capacity(config.feature_len());
        for frame in 0..config.frames_f {
            for row in 0..n {
                for col in 0..n {
                    descriptors.push(FeatureDescriptor::Pressure { frame, row, col });
                }
            }
        }
        if config.include_velocity {
            for frame in 0..config.frames_f {
                descriptors.push(FeatureDescriptor::Vx { frame });
                descriptors.push(FeatureDescriptor::Vy { frame });
            }
        }
        if config.include_duration {
            descriptors.push(FeatureDescriptor::Duration);
        }
        Self { config, descriptors }
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    /// Sub-schema holding the listed positions, in the listed order.
    pub fn select(&self, indices: &[usize]) -> Result<Schema> {
        let descriptors = indices
            .iter()
            .map(|&i| {
                self.descriptors.get(i).copied().ok_or_else(|| {
                    Error::invalid(format!("feature index {i} outside schema of {}", self.len()))
                })
            })
            .collect::<Result<_>>()?;
        Ok(Schema {
            config: self.config,
            descriptors,
        })
    }

    /// Content hash identifying this schema in file headers.
    pub fn id(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema: Arc<Schema>,
}

/// `n × n` patch centered on `(row, col)`; pixels outside the sensor read 0.
pub fn extract_window(frame: &Frame, row: usize, col: usize, n: usize) -> Vec<f64> {
    debug_assert!(n % 2 == 1, "window size must be odd");
    let half = (n / 2) as isize;
    let mut out = Vec::with_capacity(n * n);
    for dr in -half..=half {
        for dc in -half..=half {
            let r = row as isize + dr;
            let c = col as isize + dc;
            let v = if r >= 0 && c >= 0 && (r as usize) < frame.rows && (c as usize) < frame.cols {
                frame.get(r as usize, c as usize)
            } else {
                0.0
            };
            out.push(v);
        }
    }
    out
}

/// One selected (or interpolated) frame reduced to its window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub window: Vec<f64>,
    /// Sub-pixel finger center: the window's value-weighted centroid.
    pub center: SubPixel,
    /// Seconds since the first frame of the event.
    pub time: f64,
}

fn window_sample(frame: &Frame, n: usize, time: f64) -> WindowSample {
    let m = frame_max(frame);
    let window = extract_window(frame, m.row, m.col, n);
    let half = (n / 2) as f64;
    let (mut sw, mut sr, mut sc) = (0.0, 0.0, 0.0);
    for (i, &w) in window.iter().enumerate() {
        let w = w.max(0.0);
        sw += w;
        sr += w * ((i / n) as f64 - half);
        sc += w * ((i % n) as f64 - half);
    }
    let (dr, dc) = if sw > 0.0 { (sr / sw, sc / sw) } else { (0.0, 0.0) };
    WindowSample {
        window,
        center: SubPixel::new(m.row as f64 + dr, m.col as f64 + dc),
        time,
    }
}

/// `round(num / den)` with exact halves rounded down.
fn round_half_down(num: usize, den: usize) -> usize {
    let (q, r) = (num / den, num % den);
    if 2 * r > den {
        q + 1
    } else {
        q
    }
}

/// Picks `f` windows spread over the event.
///
/// With at least `f` frames, frame `round(i·(len-1)/(f-1))` is taken for each
/// `i`, halves rounding down. With fewer, windows, centers and times are
/// linearly interpolated at the same fractional positions. The first and
/// last real frames are always returned untouched.
pub fn select_frames(event: &GestureEvent, f: usize, n: usize) -> Result<Vec<WindowSample>> {
    if f < 2 {
        return Err(Error::invalid(format!("need at least 2 target frames, got {f}")));
    }
    if event.frames.is_empty() {
        return Err(Error::invalid("event has no frames"));
    }
    let len = event.frames.len();
    let dt = 1.0 / event.frame_rate;
    let real: Vec<WindowSample> = event
        .frames
        .iter()
        .enumerate()
        .map(|(i, fr)| window_sample(fr, n, i as f64 * dt))
        .collect();
    if len >= f {
        return Ok((0..f)
            .map(|i| real[round_half_down(i * (len - 1), f - 1)].clone())
            .collect());
    }
    Ok((0..f)
        .map(|i| {
            let num = i * (len - 1);
            let lo = num / (f - 1);
            let w = (num % (f - 1)) as f64 / (f - 1) as f64;
            if w == 0.0 {
                return real[lo].clone();
            }
            let (a, b) = (&real[lo], &real[lo + 1]);
            WindowSample {
                window: a
                    .window
                    .iter()
                    .zip(&b.window)
                    .map(|(x, y)| x + w * (y - x))
                    .collect(),
                center: a.center.lerp(b.center, w),
                time: a.time + w * (b.time - a.time),
            }
        })
        .collect())
}

/// Forward-difference velocities `(vx, vy)` in pixels per second, `x` along
/// columns. The last entry repeats the previous one.
pub fn compute_velocity(centers: &[SubPixel], times: &[f64]) -> Result<Vec<(f64, f64)>> {
    if centers.len() != times.len() {
        return Err(Error::DimensionMismatch {
            expected: centers.len(),
            got: times.len(),
        });
    }
    if centers.len() < 2 {
        return Ok(vec![(0.0, 0.0); centers.len()]);
    }
    let mut out: Vec<(f64, f64)> = centers
        .windows(2)
        .zip(times.windows(2))
        .map(|(c, t)| {
            let dt = t[1] - t[0];
            if dt > 0.0 {
                ((c[1].col - c[0].col) / dt, (c[1].row - c[0].row) / dt)
            } else {
                (0.0, 0.0)
            }
        })
        .collect();
    out.push(*out.last().expect("at least one difference"));
    Ok(out)
}

pub fn featurize_values(event: &GestureEvent, config: &FeatureConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let samples = select_frames(event, config.frames_f, config.window_n)?;
    let mut values = Vec::with_capacity(config.feature_len());
    for s in &samples {
        values.extend_from_slice(&s.window);
    }
    if config.include_velocity {
        let centers: Vec<SubPixel> = samples.iter().map(|s| s.center).collect();
        let times: Vec<f64> = samples.iter().map(|s| s.time).collect();
        for (vx, vy) in compute_velocity(&centers, &times)? {
            values.push(vx);
            values.push(vy);
        }
    }
    if config.include_duration {
        values.push(event.duration());
    }
    debug_assert_eq!(values.len(), config.feature_len());
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("feature vector has non-finite values".into()));
    }
    Ok(values)
}

pub fn featurize(event: &GestureEvent, config: &FeatureConfig) -> Result<FeatureVector> {
    Ok(FeatureVector {
        values: featurize_values(event, config)?,
        schema: Arc::new(Schema::for_config(*config)),
    })
}

/// Per-feature z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    /// Population standard deviation; zero marks a constant feature.
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(x: &Matrix) -> Result<Self> {
        if x.rows() < 2 {
            return Err(Error::invalid(format!(
                "normalization needs at least 2 rows, got {}",
                x.rows()
            )));
        }
        let mean = x.column_means();
        let mut var = vec![0.0; x.cols()];
        for r in x.iter_rows() {
            for ((v, &xi), &m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (xi - m) * (xi - m);
            }
        }
        let n = x.rows() as f64;
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 * (1.0 + s) { s } else { 0.0 }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&v, &m), &s)| if s > 0.0 { (v - m) / s } else { 0.0 })
            .collect())
    }

    pub fn apply_matrix(&self, x: &Matrix) -> Result<Matrix> {
        let rows = x.iter_rows().map(|r| self.apply(r)).collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, self.dim()));
        }
        Matrix::from_rows(&rows)
    }

    pub fn select(&self, indices: &[usize]) -> Scaler {
        Scaler {
            mean: indices.iter().map(|&i| self.mean[i]).collect(),
            std: indices.iter().map(|&i| self.std[i]).collect(),
        }
    }
}

/// Feature matrix with one user label per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub kind: Option<GestureKind>,
    pub schema: Schema,
    pub features: Matrix,
    pub labels: Vec<String>,
    /// Set once the features have been z-scored.
    pub scaler: Option<Scaler>,
}

impl LabeledDataset {
    pub fn new(
        kind: Option<GestureKind>,
        schema: Schema,
        features: Matrix,
        labels: Vec<String>,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.rows(),
                got: labels.len(),
            });
        }
        if features.cols() != schema.len() {
            return Err(Error::DimensionMismatch {
                expected: schema.len(),
                got: features.cols(),
            });
        }
        if labels.is_empty() {
            return Err(Error::invalid("dataset has no rows"));
        }
        Ok(Self {
            kind,
            schema,
            features,
            labels,
            scaler: None,
        })
    }

    /// Featurizes labeled events in parallel; unlabeled events are an error.
    pub fn from_events(events: &[GestureEvent], config: &FeatureConfig) -> Result<Self> {
        config.validate()?;
        if events.is_empty() {
            return Err(Error::invalid("no events to featurize"));
        }
        let labels = events
            .iter()
            .enumerate()
            .map(|(i, e)| {
                e.label
                    .clone()
                    .ok_or_else(|| Error::invalid(format!("event {i} has no label")))
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = par::map(events, |e| featurize_values(e, config))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let kind = events[0].kind.filter(|k| events.iter().all(|e| e.kind == Some(*k)));
        Self::new(kind, Schema::for_config(*config), Matrix::from_rows(&rows)?, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<String> {
        let mut c = self.labels.clone();
        c.sort();
        c.dedup();
        c
    }

    /// Label of each row as an index into `classes`.
    pub fn class_indices(&self, classes: &[String]) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .map(|l| {
                classes
                    .binary_search(l)
                    .map_err(|_| Error::invalid(format!("label {l:?} not among classes {classes:?}")))
            })
            .collect()
    }

    pub fn subset(&self, rows: &[usize]) -> LabeledDataset {
        LabeledDataset {
            kind: self.kind,
            schema: self.schema.clone(),
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i].clone()).collect(),
            scaler: self.scaler.clone(),
        }
    }

    /// Keeps the listed feature columns.
    pub fn select_features(&self, columns: &[usize]) -> Result<LabeledDataset> {
        Ok(LabeledDataset {
            kind: self.kind,
            schema: self.schema.select(columns)?,
            features: self.features.select_columns(columns),
            labels: self.labels.clone(),
            scaler: self.scaler.as_ref().map(|s| s.select(columns)),
        })
    }

    /// Rows whose label is `user`.
    pub fn rows_of(&self, user: &str) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == user).collect()
    }
}

/// Z-scores every feature. Constant features map to 0.
pub fn normalize_fit(dataset: &LabeledDataset) -> Result<(LabeledDataset, Scaler)> {
    let scaler = Scaler::fit(&dataset.features)?;
    let mut out = dataset.clone();
    out.features = scaler.apply_matrix(&dataset.features)?;
    out.scaler = Some(scaler.clone());
    Ok((out, scaler))
}

pub fn normalize_apply(scaler: &Scaler, vector: &[f64]) -> Result<Vec<f64>> {
    scaler.apply(vector)
}
