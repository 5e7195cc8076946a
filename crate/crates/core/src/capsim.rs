//! Capacitive sensor simulator.
//!
//! A finger is modelled as an isotropic Gaussian blob on a `rows × cols`
//! pixel grid, sampled at the sensor frame rate with additive Gaussian
//! pixel noise clamped at zero. Synthetic users differ in blob radius,
//! pressure, tap duration, traversal speed and trajectory bias.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seed::{self, Rng};
use crate::{par, Error, Result};

/// Noise frames placed at the start of every synthesized recording; they
/// give threshold calibration clean input.
pub const CALIBRATION_FRAMES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub rows: usize,
    pub cols: usize,
    pub frame_rate: f64,
    pub noise_sigma: f64,
}

impl Default for SensorConfig {
    /// 16×16 grid at 30 fps. The grid size is arbitrary; it only has to fit a
    /// 7×7 window.
    fn default() -> Self {
        Self {
            rows: 16,
            cols: 16,
            frame_rate: 30.0,
            noise_sigma: 1.0,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows < 7 || self.cols < 7 {
            return Err(Error::invalid(format!(
                "sensor grid {}x{} is smaller than 7x7",
                self.rows, self.cols
            )));
        }
        if !(self.frame_rate > 0.0) || !self.frame_rate.is_finite() {
            return Err(Error::invalid("frame_rate must be positive"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid("noise_sigma must be non-negative"));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn frame_period(&self) -> f64 {
        1.0 / self.frame_rate
    }

    fn grid_center(&self) -> SubPixel {
        SubPixel::new((self.rows - 1) as f64 / 2.0, (self.cols - 1) as f64 / 2.0)
    }
}

/// Sub-pixel location in (row, col) coordinates; pixel `(r, c)` sits at
/// `row = r, col = c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubPixel {
    pub row: f64,
    pub col: f64,
}

impl SubPixel {
    pub fn new(row: f64, col: f64) -> Self {
        Self { row, col }
    }

    pub fn lerp(self, other: SubPixel, w: f64) -> SubPixel {
        SubPixel::new(
            self.row + w * (other.row - self.row),
            self.col + w * (other.col - self.col),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub rows: usize,
    pub cols: usize,
    /// Row-major capacitance values.
    pub values: Vec<f64>,
    /// Seconds since the start of the stream.
    pub timestamp: f64,
}

impl Frame {
    pub fn zeros(rows: usize, cols: usize, timestamp: f64) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
            timestamp,
        }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>, timestamp: f64) -> Result<Self> {
        let frame = Self {
            rows,
            cols,
            values,
            timestamp,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.rows * self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                got: self.values.len(),
            });
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("frame holds non-finite value {v}")));
        }
        Ok(())
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GestureKind {
    Tap,
    Circle,
    Random,
}

impl GestureKind {
    pub const ALL: [GestureKind; 3] = [GestureKind::Tap, GestureKind::Circle, GestureKind::Random];

    /// Plural dataset name: `taps`, `circles`, `random`.
    pub fn dataset_name(self) -> &'static str {
        match self {
            GestureKind::Tap => "taps",
            GestureKind::Circle => "circles",
            GestureKind::Random => "random",
        }
    }

    pub(crate) fn stream_id(self) -> u64 {
        match self {
            GestureKind::Tap => 1,
            GestureKind::Circle => 2,
            GestureKind::Random => 3,
        }
    }
}

impl fmt::Display for GestureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GestureKind::Tap => "tap",
            GestureKind::Circle => "circle",
            GestureKind::Random => "random",
        })
    }
}

impl FromStr for GestureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tap" | "taps" => Ok(GestureKind::Tap),
            "circle" | "circles" => Ok(GestureKind::Circle),
            "random" => Ok(GestureKind::Random),
            other => Err(Error::invalid(format!("unknown gesture kind {other:?}"))),
        }
    }
}

/// Per-user offsets that shape circle and free-form paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBias {
    /// Shift of the preferred touch area from the grid center, in pixels.
    pub offset: SubPixel,
    /// Radius of drawn circles, in pixels.
    pub loop_radius: f64,
    /// Mean heading drift of free-form strokes, in radians per second.
    pub curvature: f64,
    pub clockwise: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user: String,
    /// Standard deviation of the finger blob, in pixels.
    pub finger_radius: f64,
    pub peak_pressure: f64,
    /// Relative per-gesture standard deviation of the pressure.
    pub pressure_jitter: f64,
    /// Traversal speed in pixels per second.
    pub speed: f64,
    pub tap_duration_mean: f64,
    pub tap_duration_std: f64,
    pub random_duration_mean: f64,
    pub trajectory: TrajectoryBias,
    pub rng_seed: u64,
}

const USER_NAMES: [&str; 8] = [
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi",
];

impl UserProfile {
    /// The `index`-th synthetic user. Users are spread over radius,
    /// pressure, duration, speed and trajectory by an amount proportional to
    /// `separation`; at `separation = 0` they differ only in circle
    /// direction.
    pub fn synthetic(index: usize, separation: f64) -> Self {
        const R: [f64; 8] = [0.0, 2.0, 1.0, 3.0, 0.5, 2.5, 1.5, 3.5];
        const P: [f64; 8] = [1.0, 0.0, 3.0, 2.0, 3.5, 0.5, 1.5, 2.5];
        const D: [f64; 8] = [2.0, 0.0, 1.0, 3.0, 0.5, 2.5, 3.5, 1.5];
        const S: [f64; 8] = [0.0, 3.0, 2.0, 1.0, 1.5, 3.5, 0.5, 2.5];
        const L: [f64; 8] = [1.0, 3.0, 0.0, 2.0, 2.5, 0.5, 3.5, 1.5];
        let k = index % 8;
        // Beyond eight users the tables repeat, shifted by a quarter step.
        let lap = (index / 8) as f64 * 0.25;
        let s = separation;
        let angle = 2.0 * PI * index as f64 / 5.0;
        let user = if index < USER_NAMES.len() {
            USER_NAMES[index].to_string()
        } else {
            format!("user{index}")
        };
        Self {
            user,
            finger_radius: 1.6 + s * 0.25 * (R[k] + lap),
            peak_pressure: 70.0 + s * 10.0 * (P[k] + lap),
            pressure_jitter: 0.06,
            speed: 16.0 + s * 4.0 * (S[k] + lap),
            tap_duration_mean: 0.14 + s * 0.03 * (D[k] + lap),
            tap_duration_std: 0.015,
            random_duration_mean: 1.0 + s * 0.1 * (D[k] + lap),
            trajectory: TrajectoryBias {
                offset: SubPixel::new(s * 0.6 * angle.sin(), s * 0.6 * angle.cos()),
                loop_radius: 4.0 + s * 0.35 * (L[k] + lap),
                curvature: s * 0.8 * (S[(k + 3) % 8] - 1.75),
                clockwise: index % 2 == 1,
            },
            rng_seed: seed::derive(0x7A9_C0FFEE, &[index as u64]),
        }
    }

    pub fn validate(&self, config: &SensorConfig) -> Result<()> {
        if !(self.finger_radius > 0.0) {
            return Err(Error::invalid("finger_radius must be positive"));
        }
        if !(self.peak_pressure > 6.0 * config.noise_sigma) {
            return Err(Error::invalid(format!(
                "peak_pressure {} does not clear the noise floor {}",
                self.peak_pressure,
                6.0 * config.noise_sigma
            )));
        }
        if !(self.tap_duration_mean > 0.0) || self.tap_duration_std < 0.0 {
            return Err(Error::invalid("tap duration must be positive"));
        }
        if !(self.speed > 0.0) || !(self.random_duration_mean > 0.0) {
            return Err(Error::invalid("speed and random duration must be positive"));
        }
        if !(self.trajectory.loop_radius > 0.0) {
            return Err(Error::invalid("loop_radius must be positive"));
        }
        if self.pressure_jitter < 0.0 {
            return Err(Error::invalid("pressure_jitter must be non-negative"));
        }
        Ok(())
    }
}

pub fn synthetic_profiles(count: usize, separation: f64) -> Vec<UserProfile> {
    (0..count).map(|i| UserProfile::synthetic(i, separation)).collect()
}

/// Ground-truth contact span inside a recording; `end_index` is inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthAnnotation {
    pub start_index: usize,
    pub end_index: usize,
    pub user: String,
    pub kind: GestureKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecording {
    pub config: SensorConfig,
    pub frames: Vec<Frame>,
    pub truth: Option<Vec<TruthAnnotation>>,
}

impl RawRecording {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let period = self.config.frame_period();
        for (i, f) in self.frames.iter().enumerate() {
            if f.rows != self.config.rows || f.cols != self.config.cols {
                return Err(Error::invalid(format!(
                    "frame {i} is {}x{}, sensor is {}x{}",
                    f.rows, f.cols, self.config.rows, self.config.cols
                )));
            }
            f.validate()?;
            if i > 0 {
                let dt = f.timestamp - self.frames[i - 1].timestamp;
                if !(dt > 0.0) || (dt - period).abs() > 1e-6 * period.max(1.0) {
                    return Err(Error::invalid(format!(
                        "frame {i}: timestamp step {dt} does not match frame period {period}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn gaussian(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn add_noise(frame: &mut Frame, sigma: f64, rng: &mut Rng) {
    if sigma > 0.0 {
        for v in &mut frame.values {
            *v = (*v + sigma * gaussian(rng)).max(0.0);
        }
    }
}

/// Renders one frame with a finger blob of the given radius at `center`.
///
/// Pixel `p` holds `pressure · exp(-|p - center|² / (2 r²))` plus
/// `N(0, noise_sigma)`, clamped at zero. The timestamp is left at zero.
pub fn render_frame(
    center: SubPixel,
    finger_radius: f64,
    pressure: f64,
    config: &SensorConfig,
    rng: &mut Rng,
) -> Result<Frame> {
    let max_row = (config.rows - 1) as f64;
    let max_col = (config.cols - 1) as f64;
    if !(center.row >= 0.0 && center.row <= max_row && center.col >= 0.0 && center.col <= max_col) {
        return Err(Error::invalid(format!(
            "center ({}, {}) outside the {}x{} grid",
            center.row, center.col, config.rows, config.cols
        )));
    }
    if !(pressure >= 0.0) || !pressure.is_finite() {
        return Err(Error::invalid(format!("pressure {pressure} must be non-negative")));
    }
    if !(finger_radius > 0.0) {
        return Err(Error::invalid("finger_radius must be positive"));
    }
    let mut frame = Frame::zeros(config.rows, config.cols, 0.0);
    let inv = 1.0 / (2.0 * finger_radius * finger_radius);
    for r in 0..config.rows {
        let dr = r as f64 - center.row;
        for c in 0..config.cols {
            let dc = c as f64 - center.col;
            frame.values[r * config.cols + c] = pressure * (-(dr * dr + dc * dc) * inv).exp();
        }
    }
    add_noise(&mut frame, config.noise_sigma, rng);
    Ok(frame)
}

/// A frame with no finger present.
pub fn noise_frame(config: &SensorConfig, rng: &mut Rng) -> Frame {
    let mut frame = Frame::zeros(config.rows, config.cols, 0.0);
    add_noise(&mut frame, config.noise_sigma, rng);
    frame
}

/// A synthesized gesture: noise lead-in, touching frames, noise tail.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthGesture {
    pub kind: GestureKind,
    pub frames: Vec<Frame>,
    /// Index of the first touching frame.
    pub touch_start: usize,
    /// Number of touching frames.
    pub touch_len: usize,
    /// Finger center of each touching frame.
    pub centers: Vec<SubPixel>,
}

struct PathPoint {
    center: SubPixel,
    pressure: f64,
}

fn clamp_to_grid(p: SubPixel, config: &SensorConfig, margin: f64) -> SubPixel {
    SubPixel::new(
        p.row.clamp(margin, (config.rows - 1) as f64 - margin),
        p.col.clamp(margin, (config.cols - 1) as f64 - margin),
    )
}

fn frames_for(duration: f64, config: &SensorConfig) -> usize {
    ((duration * config.frame_rate).round() as usize).max(2)
}

fn tap_path(profile: &UserProfile, config: &SensorConfig, rng: &mut Rng) -> Vec<PathPoint> {
    let duration = profile.tap_duration_mean + profile.tap_duration_std * gaussian(rng);
    let n = frames_for(duration, config);
    let base = config.grid_center();
    let spot = SubPixel::new(
        base.row + profile.trajectory.offset.row + rng.random_range(-2.0..2.0),
        base.col + profile.trajectory.offset.col + rng.random_range(-2.0..2.0),
    );
    let spot = clamp_to_grid(spot, config, 1.0);
    let peak = profile.peak_pressure * (1.0 + profile.pressure_jitter * gaussian(rng)).max(0.2);
    (0..n)
        .map(|i| {
            let envelope = 0.6 + 0.4 * (PI * (i as f64 + 0.5) / n as f64).sin();
            let drift = SubPixel::new(spot.row + 0.05 * gaussian(rng), spot.col + 0.05 * gaussian(rng));
            PathPoint {
                center: clamp_to_grid(drift, config, 0.0),
                pressure: peak * envelope,
            }
        })
        .collect()
}

fn circle_path(profile: &UserProfile, config: &SensorConfig, rng: &mut Rng) -> Vec<PathPoint> {
    let base = config.grid_center();
    let bias = &profile.trajectory;
    let half_extent = (config.rows.min(config.cols) - 1) as f64 / 2.0 - 0.5;
    let radius = (bias.loop_radius * (1.0 + 0.05 * gaussian(rng))).clamp(1.0, half_extent);
    let center = SubPixel::new(
        base.row + bias.offset.row + 0.3 * gaussian(rng),
        base.col + bias.offset.col + 0.3 * gaussian(rng),
    );
    let speed = profile.speed * (1.0 + 0.05 * gaussian(rng)).max(0.2);
    let n = frames_for(2.0 * PI * radius / speed, config);
    let direction = if bias.clockwise { -1.0 } else { 1.0 };
    let theta0 = rng.random_range(0.0..2.0 * PI);
    let peak = profile.peak_pressure * (1.0 + profile.pressure_jitter * gaussian(rng)).max(0.2);
    (0..n)
        .map(|i| {
            let t = i as f64 / config.frame_rate;
            let theta = theta0 + direction * speed * t / radius;
            let p = SubPixel::new(center.row + radius * theta.sin(), center.col + radius * theta.cos());
            PathPoint {
                center: clamp_to_grid(p, config, 0.0),
                pressure: peak * (1.0 + 0.02 * gaussian(rng)).max(0.5),
            }
        })
        .collect()
}

fn random_path(profile: &UserProfile, config: &SensorConfig, rng: &mut Rng) -> Vec<PathPoint> {
    let duration = (profile.random_duration_mean * (1.0 + 0.15 * gaussian(rng))).max(0.3);
    let n = frames_for(duration, config);
    let dt = config.frame_period();
    let base = config.grid_center();
    let mut pos = clamp_to_grid(
        SubPixel::new(
            base.row + profile.trajectory.offset.row + rng.random_range(-2.0..2.0),
            base.col + profile.trajectory.offset.col + rng.random_range(-2.0..2.0),
        ),
        config,
        1.0,
    );
    let mut heading: f64 = rng.random_range(0.0..2.0 * PI);
    let mut turn = 0.0;
    let lo = 1.0;
    let hi_r = (config.rows - 2) as f64;
    let hi_c = (config.cols - 2) as f64;
    let peak = profile.peak_pressure * (1.0 + profile.pressure_jitter * gaussian(rng)).max(0.2);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(PathPoint {
            center: pos,
            pressure: peak * (1.0 + 0.02 * gaussian(rng)).max(0.5),
        });
        // Low-pass filtered heading noise gives smooth strokes.
        turn = 0.85 * turn + 0.15 * 0.6 * gaussian(rng);
        heading += profile.trajectory.curvature * dt + turn;
        let step = profile.speed * dt;
        let (mut dr, mut dc) = (step * heading.sin(), step * heading.cos());
        if pos.row + dr < lo || pos.row + dr > hi_r {
            dr = -dr;
            heading = -heading;
        }
        if pos.col + dc < lo || pos.col + dc > hi_c {
            dc = -dc;
            heading = PI - heading;
        }
        pos = clamp_to_grid(SubPixel::new(pos.row + dr, pos.col + dc), config, lo);
    }
    out
}

/// Synthesizes one gesture. Identical `(profile, kind, config, seed)` give
/// bit-identical frames.
pub fn synth_gesture(
    profile: &UserProfile,
    kind: GestureKind,
    config: &SensorConfig,
    seed: u64,
) -> Result<SynthGesture> {
    config.validate()?;
    profile.validate(config)?;
    let mut rng = seed::rng_for(seed, &[profile.rng_seed, kind.stream_id()]);
    let lead = rng.random_range(2..=4usize);
    let tail = rng.random_range(2..=4usize);
    let path = match kind {
        GestureKind::Tap => tap_path(profile, config, &mut rng),
        GestureKind::Circle => circle_path(profile, config, &mut rng),
        GestureKind::Random => random_path(profile, config, &mut rng),
    };
    let mut frames = Vec::with_capacity(lead + path.len() + tail);
    for _ in 0..lead {
        frames.push(noise_frame(config, &mut rng));
    }
    for p in &path {
        frames.push(render_frame(p.center, profile.finger_radius, p.pressure, config, &mut rng)?);
    }
    for _ in 0..tail {
        frames.push(noise_frame(config, &mut rng));
    }
    for (i, f) in frames.iter_mut().enumerate() {
        f.timestamp = i as f64 / config.frame_rate;
    }
    Ok(SynthGesture {
        kind,
        frames,
        touch_start: lead,
        touch_len: path.len(),
        centers: path.iter().map(|p| p.center).collect(),
    })
}

/// Synthesizes `counts[kind]` gestures per profile, shuffles them, and
/// concatenates them behind a [`CALIBRATION_FRAMES`] noise lead-in.
pub fn synth_corpus(
    profiles: &[UserProfile],
    counts: &BTreeMap<GestureKind, usize>,
    config: &SensorConfig,
    seed: u64,
) -> Result<RawRecording> {
    if profiles.is_empty() {
        return Err(Error::invalid("corpus needs at least one profile"));
    }
    if counts.is_empty() || counts.values().any(|&c| c == 0) {
        return Err(Error::invalid("gesture counts must be at least 1"));
    }
    config.validate()?;
    for p in profiles {
        p.validate(config)?;
    }

    let mut plan: Vec<(usize, GestureKind, usize)> = Vec::new();
    for pi in 0..profiles.len() {
        for (&kind, &count) in counts {
            plan.extend((0..count).map(|j| (pi, kind, j)));
        }
    }
    plan.shuffle(&mut seed::rng_for(seed, &[0x5A0F]));

    let gestures = par::map(&plan, |&(pi, kind, j)| {
        let s = seed::derive(seed, &[pi as u64, kind.stream_id(), j as u64]);
        synth_gesture(&profiles[pi], kind, config, s)
    });

    let mut lead_rng = seed::rng_for(seed, &[0x1EAD]);
    let mut frames: Vec<Frame> = (0..CALIBRATION_FRAMES)
        .map(|_| noise_frame(config, &mut lead_rng))
        .collect();
    let mut truth = Vec::with_capacity(plan.len());
    for (g, &(pi, kind, _)) in gestures.into_iter().zip(&plan) {
        let g = g?;
        let offset = frames.len();
        truth.push(TruthAnnotation {
            start_index: offset + g.touch_start,
            end_index: offset + g.touch_start + g.touch_len - 1,
            user: profiles[pi].user.clone(),
            kind,
        });
        frames.extend(g.frames);
    }
    for (i, f) in frames.iter_mut().enumerate() {
        f.timestamp = i as f64 / config.frame_rate;
    }
    Ok(RawRecording {
        config: *config,
        frames,
        truth: Some(truth),
    })
}

/// Per-kind corpora shaped like the reference study: four users for taps and
/// circles, two for free-form strokes.
pub fn paper_shaped_corpora(
    profiles: &[UserProfile],
    per_user: &BTreeMap<GestureKind, usize>,
    config: &SensorConfig,
    seed: u64,
) -> Result<Vec<(GestureKind, RawRecording)>> {
    if profiles.len() < 4 {
        return Err(Error::invalid("paper-shaped corpora need four profiles"));
    }
    per_user
        .iter()
        .map(|(&kind, &count)| {
            let users = match kind {
                GestureKind::Random => &profiles[..2],
                _ => &profiles[..4],
            };
            let counts = BTreeMap::from([(kind, count)]);
            synth_corpus(users, &counts, config, seed::derive(seed, &[kind.stream_id()]))
                .map(|r| (kind, r))
        })
        .collect()
}
