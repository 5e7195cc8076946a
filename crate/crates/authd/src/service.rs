//! Enrollment registry and per-session actors, independent of transport.

use std::collections::{HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use touchguard_core::anomaly::AnomalyDetector;
use touchguard_core::capsim::{Frame, GestureKind, RawRecording, CALIBRATION_FRAMES};
use touchguard_core::featurization::{featurize_values, Schema};
use touchguard_core::linalg::Matrix;
use touchguard_core::segmentation::{self, GestureEvent, MIN_CALIBRATION_FRAMES};
use touchguard_core::store::{self, Header, Model, ModelBundle};
use touchguard_core::par;

use crate::config::ServiceConfig;
use crate::error::{AuthError, Result};
use crate::online::{OnlineSegmenter, Span};
use crate::protocol::{
    ChunkReply, Decision, EnrollRequest, EnrollSummary, FrameChunk, Policy, SessionInfo, SessionRequest,
    SessionSummary,
};

/// Stored result of an enrollment. Immutable once published.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enrollment {
    pub user: String,
    pub kind: GestureKind,
    pub touch_threshold: f64,
    pub gestures: usize,
    pub bundle: ModelBundle,
}

impl Enrollment {
    fn detector(&self) -> &AnomalyDetector {
        match &self.bundle.model {
            Model::Gmm(d) => d,
            _ => unreachable!("enrollments always hold a detector"),
        }
    }

    /// Score threshold of the stored detector.
    pub fn detector_threshold(&self) -> f64 {
        self.detector().threshold.threshold
    }

    /// Score and verdict for one completed gesture.
    fn judge(&self, event: &GestureEvent) -> Result<(f64, bool)> {
        let config = self.bundle.feature_config.expect("enrollments record their feature config");
        let x = self.bundle.prepare(&featurize_values(event, &config)?)?;
        let d = self.detector().classify(&x)?;
        Ok((d.score, d.accept))
    }
}

struct Session {
    info: SessionInfo,
    segmenter: OnlineSegmenter,
    decisions: Vec<Decision>,
    recent: VecDeque<bool>,
    last_timestamp: Option<f64>,
}

impl Session {
    fn summary(&self) -> SessionSummary {
        SessionSummary {
            session: self.info.session.clone(),
            user: self.info.user.clone(),
            kind: self.info.kind,
            frames_received: self.segmenter.frames_seen(),
            accepted: self.decisions.iter().filter(|d| d.accept).count(),
            decisions: self.decisions.clone(),
        }
    }
}

type Key = (String, GestureKind);

pub struct Service {
    config: ServiceConfig,
    enrollments: RwLock<HashMap<Key, Arc<Enrollment>>>,
    /// Serializes the write-and-publish step of enrollments.
    publish: Mutex<()>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    next_session: AtomicU64,
}

fn check_user(user: &str) -> Result<()> {
    let ok = !user.is_empty()
        && user.len() <= 64
        && user.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(AuthError::BadRequest(format!(
            "user id {user:?} must be 1-64 characters of [A-Za-z0-9_-]"
        )))
    }
}

impl Service {
    pub fn new(config: ServiceConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            enrollments: RwLock::new(HashMap::new()),
            publish: Mutex::new(()),
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(1),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn enrollment_path(&self, user: &str, kind: GestureKind) -> PathBuf {
        self.config.model_dir.join(user).join(format!("{kind}.jsonl"))
    }

    /// Converts wire frames, checking shape and values. `t0` stamps the
    /// first frame; the rest follow at the sensor frame rate.
    fn frames(&self, raw: Vec<Vec<f64>>, t0: f64) -> Result<Vec<Frame>> {
        if !t0.is_finite() {
            return Err(AuthError::BadChunk(format!("t0 {t0} is not finite")));
        }
        let s = &self.config.sensor;
        raw.into_iter()
            .enumerate()
            .map(|(i, values)| {
                if values.len() != s.pixels() {
                    return Err(AuthError::BadChunk(format!(
                        "frame {i} has {} values, sensor is {}x{}",
                        values.len(),
                        s.rows,
                        s.cols
                    )));
                }
                if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
                    return Err(AuthError::BadChunk(format!("frame {i} holds invalid value {v}")));
                }
                Ok(Frame::from_values(s.rows, s.cols, values, t0 + i as f64 / s.frame_rate)?)
            })
            .collect()
    }

    /// Segments an enrollment stream, fits the detector, writes it to disk
    /// and then publishes it, replacing any earlier enrollment.
    pub fn enroll(&self, user: &str, req: EnrollRequest) -> Result<EnrollSummary> {
        check_user(user)?;
        let floor = self.config.min_enroll_gestures;
        let frames = self.frames(req.frames, req.t0)?;
        let touch_threshold = match self.config.touch_threshold {
            Some(t) => t,
            None => {
                if frames.len() < MIN_CALIBRATION_FRAMES {
                    return Err(AuthError::BadRequest(format!(
                        "stream needs at least {MIN_CALIBRATION_FRAMES} leading noise frames for calibration"
                    )));
                }
                segmentation::calibrate_threshold(&frames[..CALIBRATION_FRAMES.min(frames.len())])?
            }
        };
        let recording = RawRecording { config: self.config.sensor, frames, truth: None };
        let events = segmentation::detect_events_with(&recording, touch_threshold, self.config.min_event_frames)?;
        if events.len() < floor {
            return Err(AuthError::insufficient(events.len(), floor));
        }
        let features = self.config.features.for_kind(req.kind);
        let rows = par::map(&events, |e| featurize_values(e, &features))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let detector = AnomalyDetector::fit(&Matrix::from_rows(&rows)?, &self.config.detector)?;
        let summary = EnrollSummary {
            user: user.to_string(),
            kind: req.kind,
            gestures: events.len(),
            floor,
            quantile: detector.threshold.quantile,
            score_threshold: detector.threshold.threshold,
            touch_threshold,
            features: features.feature_len(),
            components: detector.gmm.k,
        };
        let mut bundle = ModelBundle::new(Model::Gmm(detector));
        bundle.feature_config = Some(features);
        bundle.gesture_kind = Some(req.kind);
        let enrollment = Enrollment {
            user: user.to_string(),
            kind: req.kind,
            touch_threshold,
            gestures: events.len(),
            bundle,
        };

        let _guard = self.publish.lock().expect("publish lock");
        let path = self.enrollment_path(user, req.kind);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| touchguard_core::Error::io(dir, e))?;
        }
        let header = Header::new(
            "enrollment",
            Some(Schema::for_config(features).id()),
            serde_json::json!({ "user": user, "kind": req.kind }),
        );
        store::write_records(&path, &header, std::slice::from_ref(&enrollment))?;
        self.enrollments
            .write()
            .expect("registry lock")
            .insert((user.to_string(), req.kind), Arc::new(enrollment));
        log::info!("enrolled {user} for {} with {} gestures", req.kind, summary.gestures);
        Ok(summary)
    }

    /// Current enrollment, loaded from the model directory on first use.
    pub fn enrollment(&self, user: &str, kind: GestureKind) -> Result<Arc<Enrollment>> {
        check_user(user)?;
        let key = (user.to_string(), kind);
        if let Some(e) = self.enrollments.read().expect("registry lock").get(&key) {
            return Ok(e.clone());
        }
        let path = self.enrollment_path(user, kind);
        if !path.exists() {
            return Err(AuthError::NotEnrolled { user: user.to_string(), kind: kind.to_string() });
        }
        let _guard = self.publish.lock().expect("publish lock");
        let (_, mut records): (Header, Vec<Enrollment>) = store::read_records(&path, "enrollment")?;
        let loaded = Arc::new(records.remove(0));
        Ok(self
            .enrollments
            .write()
            .expect("registry lock")
            .entry(key)
            .or_insert(loaded)
            .clone())
    }

    pub fn open_session(&self, req: SessionRequest) -> Result<SessionInfo> {
        let enrollment = self.enrollment(&req.user, req.kind)?;
        let n = self.next_session.fetch_add(1, Ordering::Relaxed);
        let info = SessionInfo {
            session: format!("s{n:06}"),
            user: req.user,
            kind: req.kind,
            policy: if self.config.vote_window.is_some() { Policy::MajorityVote } else { Policy::PerGesture },
            vote_window: self.config.vote_window,
        };
        let session = Session {
            info: info.clone(),
            segmenter: OnlineSegmenter::new(
                enrollment.touch_threshold,
                self.config.min_event_frames,
                self.config.buffer_frames(),
            ),
            decisions: Vec::new(),
            recent: VecDeque::new(),
            last_timestamp: None,
        };
        self.sessions
            .lock()
            .expect("session table")
            .insert(info.session.clone(), Arc::new(Mutex::new(session)));
        Ok(info)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .lock()
            .expect("session table")
            .get(id)
            .cloned()
            .ok_or_else(|| AuthError::UnknownSession(id.to_string()))
    }

    /// Feeds a chunk to a session and judges every gesture it completes. A
    /// rejected chunk leaves the session untouched.
    pub fn push_chunk(&self, id: &str, chunk: FrameChunk) -> Result<ChunkReply> {
        let session = self.session(id)?;
        if let Some(s) = &chunk.session {
            if s != id {
                return Err(AuthError::BadChunk(format!("chunk names session {s:?}, sent to {id:?}")));
            }
        }
        let mut st = session.lock().expect("session lock");
        let mut reply = ChunkReply { session: id.to_string(), decisions: Vec::new() };
        if chunk.frames.is_empty() {
            return Ok(reply);
        }
        if let Some(last) = st.last_timestamp {
            if !(chunk.t0 > last) {
                return Err(AuthError::BadChunk(format!("t0 {} does not follow previous frame at {last}", chunk.t0)));
            }
        }
        let frames = self.frames(chunk.frames, chunk.t0)?;
        let enrollment = self.enrollment(&st.info.user, st.info.kind)?;
        st.last_timestamp = frames.last().map(|f| f.timestamp);
        let spans: Vec<Span> = frames.into_iter().filter_map(|f| st.segmenter.push(f)).collect();
        for span in spans {
            let event = GestureEvent {
                start_index: span.start,
                end_index: span.end,
                frame_rate: self.config.sensor.frame_rate,
                frames: span.frames,
                label: None,
                kind: Some(st.info.kind),
            };
            let (score, gesture_accept) = enrollment.judge(&event)?;
            let accept = match self.config.vote_window {
                Some(w) => {
                    st.recent.push_back(gesture_accept);
                    if st.recent.len() > w {
                        st.recent.pop_front();
                    }
                    2 * st.recent.iter().filter(|a| **a).count() > st.recent.len()
                }
                None => gesture_accept,
            };
            let decision = Decision {
                gesture_index: st.decisions.len(),
                score,
                accept,
                gesture_accept,
                start_frame: span.start,
                end_frame: span.end,
            };
            st.decisions.push(decision.clone());
            reply.decisions.push(decision);
        }
        Ok(reply)
    }

    pub fn session_summary(&self, id: &str) -> Result<SessionSummary> {
        let session = self.session(id)?;
        let st = session.lock().expect("session lock");
        Ok(st.summary())
    }

    pub fn close_session(&self, id: &str) -> Result<SessionSummary> {
        let session = self
            .sessions
            .lock()
            .expect("session table")
            .remove(id)
            .ok_or_else(|| AuthError::UnknownSession(id.to_string()))?;
        let st = session.lock().expect("session lock");
        Ok(st.summary())
    }
}
