#![allow(dead_code)]

use rand_distr::{Distribution, StandardNormal};
use touchguard_core::featurization::{FeatureConfig, FeatureDescriptor, LabeledDataset, Schema};
use touchguard_core::linalg::Matrix;
use touchguard_core::seed;

pub fn normal(rng: &mut seed::Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Dataset with placeholder descriptors, for tests that only need numbers.
pub fn plain_dataset(rows: &[Vec<f64>], labels: Vec<String>) -> LabeledDataset {
    let schema = Schema {
        config: FeatureConfig::taps(),
        descriptors: vec![FeatureDescriptor::Duration; rows[0].len()],
    };
    LabeledDataset::new(None, schema, Matrix::from_rows(rows).unwrap(), labels).unwrap()
}

/// `k` Gaussian clusters with random centers.
pub fn clusters(k: usize, per: usize, d: usize, spread: f64, s: u64) -> LabeledDataset {
    let mut rng = seed::rng(s);
    let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| 4.0 * normal(&mut rng)).collect()).collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per {
            rows.push(center.iter().map(|m| m + spread * normal(&mut rng)).collect());
            labels.push(format!("c{c}"));
        }
    }
    plain_dataset(&rows, labels)
}
