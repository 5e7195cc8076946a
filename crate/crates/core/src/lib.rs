//! Touch-gesture authentication toolkit.
//!
//! The pipeline runs from simulated capacitive frames ([`capsim`]) through
//! event segmentation ([`segmentation`]) and fixed-length featurization
//! ([`featurization`]) to three model families: gradient-descent linear
//! models ([`linmodels`]), SMO-trained kernel SVMs ([`svm`]) and a
//! Gaussian-mixture anomaly detector ([`anomaly`]). [`dimreduce`] offers
//! RFECV feature selection and PCA, [`evaluation`] the train/test protocol,
//! and [`store`] the on-disk formats.
//!
//! Data-parallel loops (corpus synthesis, CV folds, grid cells, one-vs-rest
//! machines, E-step) go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise.

// Negated float comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anomaly;
pub mod capsim;
pub mod dimreduce;
pub mod error;
pub mod evaluation;
pub mod featurization;
pub mod linalg;
pub mod linmodels;
pub mod par;
pub mod seed;
pub mod segmentation;
pub mod store;
pub mod svm;

pub use error::{Error, Result};
