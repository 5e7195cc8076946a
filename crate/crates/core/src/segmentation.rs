//! Threshold segmentation of a frame stream into gesture events.
//!
//! A finger is on the panel while the frame maximum is strictly above the
//! touch threshold. Maximal runs of such frames become events; runs shorter
//! than `min_event_frames` are dropped as noise spikes. Sub-threshold dips
//! inside a gesture are not bridged.

use serde::{Deserialize, Serialize};

use crate::capsim::{Frame, GestureKind, RawRecording, TruthAnnotation};
use crate::{Error, Result};

pub const DEFAULT_MIN_EVENT_FRAMES: usize = 2;
pub const MIN_CALIBRATION_FRAMES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMax {
    pub value: f64,
    pub row: usize,
    pub col: usize,
}

/// Maximum value of a frame and its location. Ties go to the smallest row,
/// then the smallest column.
pub fn frame_max(frame: &Frame) -> FrameMax {
    let mut best = FrameMax {
        value: f64::NEG_INFINITY,
        row: 0,
        col: 0,
    };
    for (i, &v) in frame.values.iter().enumerate() {
        if v > best.value {
            best = FrameMax {
                value: v,
                row: i / frame.cols,
                col: i % frame.cols,
            };
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureEvent {
    /// Index of the first frame in the source recording.
    pub start_index: usize,
    /// Index of the last frame in the source recording (inclusive).
    pub end_index: usize,
    pub frame_rate: f64,
    pub frames: Vec<Frame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<GestureKind>,
}

impl GestureEvent {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Duration in seconds: frame count over frame rate.
    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.frame_rate
    }
}

/// Maximal above-threshold runs as inclusive `(start, end)` index pairs.
pub fn detect_spans(frames: &[Frame], threshold: f64, min_event_frames: usize) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, f) in frames.iter().enumerate() {
        let touching = frame_max(f).value > threshold;
        match (touching, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - s >= min_event_frames {
                    spans.push((s, i - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        if frames.len() - s >= min_event_frames {
            spans.push((s, frames.len() - 1));
        }
    }
    spans
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::invalid(format!("touch threshold {threshold} must be positive")));
    }
    Ok(())
}

pub fn detect_events(recording: &RawRecording, threshold: f64) -> Result<Vec<GestureEvent>> {
    detect_events_with(recording, threshold, DEFAULT_MIN_EVENT_FRAMES)
}

pub fn detect_events_with(
    recording: &RawRecording,
    threshold: f64,
    min_event_frames: usize,
) -> Result<Vec<GestureEvent>> {
    check_threshold(threshold)?;
    let spans = detect_spans(&recording.frames, threshold, min_event_frames.max(1));
    Ok(spans
        .into_iter()
        .map(|(s, e)| GestureEvent {
            start_index: s,
            end_index: e,
            frame_rate: recording.config.frame_rate,
            frames: recording.frames[s..=e].to_vec(),
            label: None,
            kind: None,
        })
        .collect())
}

/// Touch threshold from noise-only frames: mean plus six standard
/// deviations of the per-frame maxima.
pub fn calibrate_threshold(noise_frames: &[Frame]) -> Result<f64> {
    if noise_frames.len() < MIN_CALIBRATION_FRAMES {
        return Err(Error::invalid(format!(
            "threshold calibration needs at least {MIN_CALIBRATION_FRAMES} noise frames, got {}",
            noise_frames.len()
        )));
    }
    let maxima: Vec<f64> = noise_frames.iter().map(|f| frame_max(f).value).collect();
    let n = maxima.len() as f64;
    let mean = maxima.iter().sum::<f64>() / n;
    let var = maxima.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n;
    Ok(mean + 6.0 * var.sqrt())
}

/// Copies user and kind from the truth annotation overlapping each event
/// the most. Events with no overlap stay unlabeled.
pub fn label_events(events: &mut [GestureEvent], truth: &[TruthAnnotation]) {
    for ev in events {
        let best = truth
            .iter()
            .map(|t| {
                let lo = ev.start_index.max(t.start_index);
                let hi = ev.end_index.min(t.end_index);
                (if hi >= lo { hi - lo + 1 } else { 0 }, t)
            })
            .filter(|(overlap, _)| *overlap > 0)
            .max_by_key(|(overlap, _)| *overlap);
        if let Some((_, t)) = best {
            ev.label = Some(t.user.clone());
            ev.kind = Some(t.kind);
        }
    }
}
