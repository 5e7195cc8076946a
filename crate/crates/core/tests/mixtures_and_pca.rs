mod common;

use common::{clusters, normal};
use proptest::prelude::*;
use touchguard_core::anomaly::{gmm_fit, AnomalyDetector, DetectorOptions, GmmOptions};
use touchguard_core::dimreduce::pca_fit;
use touchguard_core::linalg::{dot, Matrix};
use touchguard_core::seed;

fn gaussian_rows(n: usize, d: usize, s: u64) -> Matrix {
    let mut rng = seed::rng(s);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..d).map(|j| normal(&mut rng) * (1.0 + j as f64) + (i % 3) as f64 * 3.0).collect())
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn em_objective_is_monotone_and_weights_normalize(s in 0u64..10_000, k in 1usize..4) {
        let x = clusters(3, 25, 3, 1.0, s).features;
        let m = gmm_fit(&x, &GmmOptions { k, seed: s, ..Default::default() }).unwrap();
        for w in m.log_likelihood_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
        }
        prop_assert!((m.phi.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let r = m.responsibilities(&x).unwrap();
        for row in r.iter_rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn pca_components_are_orthonormal(s in 0u64..10_000, n in 5usize..40, d in 2usize..12, target in 0.5f64..1.0) {
        let x = gaussian_rows(n, d, s);
        let p = pca_fit(&x, target).unwrap();
        for a in 0..p.n_components() {
            for b in 0..p.n_components() {
                let v = dot(p.components.row(a), p.components.row(b));
                let want = if a == b { 1.0 } else { 0.0 };
                prop_assert!((v - want).abs() <= 1e-8);
            }
        }
        for w in p.explained_variance_ratio.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
    }
}

#[test]
fn rank_one_data_needs_one_component() {
    let dir = [0.6, -0.8, 0.0, 0.0];
    let rows: Vec<Vec<f64>> = (0..12).map(|i| dir.iter().map(|v| v * (i as f64 - 5.0) + 1.0).collect()).collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let p = pca_fit(&x, 0.99).unwrap();
    assert_eq!(p.n_components(), 1);
    for r in &rows {
        let back = p.inverse_transform(&p.transform(r).unwrap()).unwrap();
        for (a, b) in back.iter().zip(r) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn detector_separates_two_clusters() {
    let mut rng = seed::rng(7);
    let genuine: Vec<Vec<f64>> = (0..120).map(|_| (0..5).map(|_| normal(&mut rng)).collect()).collect();
    let det = AnomalyDetector::fit(&Matrix::from_rows(&genuine).unwrap(), &DetectorOptions::default()).unwrap();
    let held: Vec<bool> = (0..50)
        .map(|_| (0..5).map(|_| normal(&mut rng)).collect::<Vec<_>>())
        .map(|x| det.classify(&x).unwrap().accept)
        .collect();
    let impostor: Vec<bool> = (0..50)
        .map(|_| (0..5).map(|_| 4.0 + normal(&mut rng)).collect::<Vec<_>>())
        .map(|x| det.classify(&x).unwrap().accept)
        .collect();
    assert!(held.iter().filter(|a| **a).count() >= 40);
    assert!(impostor.iter().all(|a| !a));
}
