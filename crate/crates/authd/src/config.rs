use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use touchguard_core::anomaly::DetectorOptions;
use touchguard_core::capsim::SensorConfig;
use touchguard_core::store::FeatureSection;

use crate::error::{AuthError, Result};

pub const BIND_ENV: &str = "TOUCHGUARD_BIND";
pub const CONFIG_ENV: &str = "TOUCHGUARD_CONFIG";
pub const DEFAULT_BIND: &str = "127.0.0.1:7878";

/// Fewest gesture events an enrollment accepts.
pub const ENROLL_FLOOR: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub model_dir: PathBuf,
    pub sensor: SensorConfig,
    pub features: FeatureSection,
    pub detector: DetectorOptions,
    pub min_enroll_gestures: usize,
    /// Majority vote over the last N gestures; `None` decides per gesture.
    pub vote_window: Option<usize>,
    /// Longest contact kept in a session buffer, in seconds.
    pub buffer_seconds: f64,
    /// Fixed touch threshold. Unset, each enrollment calibrates one on the
    /// leading noise frames of its stream.
    pub touch_threshold: Option<f64>,
    pub min_event_frames: usize,
    pub max_body_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            model_dir: PathBuf::from("models"),
            sensor: SensorConfig::default(),
            features: FeatureSection::default(),
            detector: DetectorOptions::default(),
            min_enroll_gestures: ENROLL_FLOOR,
            vote_window: None,
            buffer_seconds: 10.0,
            touch_threshold: None,
            min_event_frames: touchguard_core::segmentation::DEFAULT_MIN_EVENT_FRAMES,
            max_body_bytes: 256 << 20,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        if self.min_enroll_gestures < ENROLL_FLOOR {
            return Err(AuthError::BadRequest(format!(
                "min_enroll_gestures must be at least {ENROLL_FLOOR}"
            )));
        }
        if self.vote_window == Some(0) {
            return Err(AuthError::BadRequest("vote_window must be at least 1".into()));
        }
        if !(self.buffer_seconds > 0.0) {
            return Err(AuthError::BadRequest("buffer_seconds must be positive".into()));
        }
        if let Some(t) = self.touch_threshold {
            if !(t > 0.0) || !t.is_finite() {
                return Err(AuthError::BadRequest("touch_threshold must be positive".into()));
            }
        }
        Ok(())
    }

    /// Frames a session buffers before dropping the oldest.
    pub fn buffer_frames(&self) -> usize {
        (self.buffer_seconds * self.sensor.frame_rate).ceil().max(1.0) as usize
    }

    /// Reads TOML; a relative `model_dir` is taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| touchguard_core::Error::io(path, e))?;
        let mut cfg: ServiceConfig =
            toml::from_str(&text).map_err(|e| AuthError::BadRequest(format!("{}: {e}", path.display())))?;
        if cfg.model_dir.is_relative() {
            cfg.model_dir = path.parent().unwrap_or(Path::new(".")).join(&cfg.model_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Config named by `TOUCHGUARD_CONFIG`, or defaults.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) => Self::load(Path::new(&p)),
            None => Ok(Self::default()),
        }
    }
}

pub fn bind_address() -> String {
    std::env::var(BIND_ENV).unwrap_or_else(|_| DEFAULT_BIND.to_string())
}
