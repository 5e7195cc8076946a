//! JSON wire schemas. Frames travel as flat row-major pixel arrays.

use serde::{Deserialize, Serialize};
use touchguard_core::capsim::GestureKind;

fn default_kind() -> GestureKind {
    GestureKind::Tap
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnrollRequest {
    #[serde(default = "default_kind")]
    pub kind: GestureKind,
    /// Timestamp of the first frame, in seconds.
    #[serde(default)]
    pub t0: f64,
    pub frames: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollSummary {
    pub user: String,
    pub kind: GestureKind,
    pub gestures: usize,
    pub floor: usize,
    /// Fraction of genuine calibration scores below the threshold.
    pub quantile: f64,
    pub score_threshold: f64,
    pub touch_threshold: f64,
    pub features: usize,
    pub components: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRequest {
    pub user: String,
    #[serde(default = "default_kind")]
    pub kind: GestureKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    PerGesture,
    MajorityVote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session: String,
    pub user: String,
    pub kind: GestureKind,
    pub policy: Policy,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vote_window: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameChunk {
    /// Must match the session in the URL when present.
    #[serde(default)]
    pub session: Option<String>,
    pub frames: Vec<Vec<f64>>,
    #[serde(default)]
    pub t0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub gesture_index: usize,
    pub score: f64,
    /// Decision under the session policy.
    pub accept: bool,
    /// This gesture's own verdict; differs from `accept` only when voting.
    pub gesture_accept: bool,
    /// Stream frame indices of the gesture, inclusive.
    pub start_frame: usize,
    pub end_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkReply {
    pub session: String,
    pub decisions: Vec<Decision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session: String,
    pub user: String,
    pub kind: GestureKind,
    pub frames_received: usize,
    pub accepted: usize,
    pub decisions: Vec<Decision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub needed: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub floor: Option<usize>,
}
