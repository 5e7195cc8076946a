//! Enrollment and continuous authentication over live capacitive frame
//! streams.
//!
//! Users enroll by posting a frame stream of their gestures; the service
//! segments it, fits a per-user anomaly detector and stores it. Sessions then
//! stream frames and receive an accept or reject decision for every gesture
//! they complete.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod http;
pub mod online;
pub mod protocol;
pub mod service;

pub use config::ServiceConfig;
pub use error::{AuthError, Result};
pub use http::router;
pub use service::{Enrollment, Service};
