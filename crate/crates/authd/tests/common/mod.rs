#![allow(dead_code)]

use std::collections::BTreeMap;

use touchguard_authd::protocol::{EnrollRequest, FrameChunk};
use touchguard_authd::ServiceConfig;
use touchguard_core::capsim::{synth_corpus, GestureKind, RawRecording, SensorConfig, UserProfile};

pub fn profile(i: usize) -> UserProfile {
    UserProfile::synthetic(i, 1.0)
}

/// One user's gestures behind a noise lead-in.
pub fn stream(user: usize, kind: GestureKind, count: usize, seed: u64) -> RawRecording {
    let counts = BTreeMap::from([(kind, count)]);
    synth_corpus(&[profile(user)], &counts, &SensorConfig::default(), seed).unwrap()
}

pub fn wire(rec: &RawRecording) -> Vec<Vec<f64>> {
    rec.frames.iter().map(|f| f.values.clone()).collect()
}

pub fn enroll_request(rec: &RawRecording, kind: GestureKind) -> EnrollRequest {
    EnrollRequest { kind, t0: 0.0, frames: wire(rec) }
}

/// Splits a recording into consecutive chunks of `size` frames.
pub fn chunks(rec: &RawRecording, size: usize) -> Vec<FrameChunk> {
    let rate = rec.config.frame_rate;
    wire(rec)
        .chunks(size)
        .enumerate()
        .map(|(i, c)| FrameChunk { session: None, frames: c.to_vec(), t0: (i * size) as f64 / rate })
        .collect()
}

pub fn config(dir: &std::path::Path) -> ServiceConfig {
    ServiceConfig { model_dir: dir.to_path_buf(), ..ServiceConfig::default() }
}
