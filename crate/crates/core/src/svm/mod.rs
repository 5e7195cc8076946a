//! Soft-margin kernel SVM trained by SMO, with one-vs-rest multiclass.

mod smo;

pub use smo::{dual_objective, solve_dual, solve_dual_from, DualSolution, Gram, KernelRows, SmoOptions, SubGram};

use serde::{Deserialize, Serialize};

use crate::featurization::LabeledDataset;
use crate::linalg::{dot, squared_distance, Matrix};
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    Polynomial { degree: u32, coef0: f64 },
    Rbf { gamma: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { degree, coef0 } => {
                if degree < 1 || !coef0.is_finite() {
                    return Err(Error::invalid("polynomial kernel needs degree >= 1"));
                }
                Ok(())
            }
            KernelSpec::Rbf { gamma } => {
                if !(gamma > 0.0) || !gamma.is_finite() {
                    return Err(Error::invalid(format!("RBF gamma must be positive, got {gamma}")));
                }
                Ok(())
            }
        }
    }

    /// Kernel value without dimension checks.
    pub fn apply(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(x, y),
            KernelSpec::Polynomial { degree, coef0 } => (dot(x, y) + coef0).powi(degree as i32),
            KernelSpec::Rbf { gamma } => (-gamma * squared_distance(x, y)).exp(),
        }
    }

    /// Kernel matrix over the rows of `x`.
    pub fn gram(&self, x: &Matrix) -> Gram {
        Gram::from_fn(x.rows(), |i, j| self.apply(x.row(i), x.row(j)))
    }
}

/// Evaluates the kernel: `x·y`, `(x·y + coef0)^degree` or `exp(−γ‖x−y‖²)`.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    spec.validate()?;
    Ok(spec.apply(x, y))
}

/// Pairwise squared Euclidean distances; RBF grams for any γ follow by
/// mapping `d ↦ exp(−γ d)`.
pub fn squared_distances(x: &Matrix) -> Gram {
    let norms: Vec<f64> = x.iter_rows().map(|r| dot(r, r)).collect();
    let rows = par::map_range(x.rows(), |i| {
        (0..=i)
            .map(|j| (norms[i] + norms[j] - 2.0 * dot(x.row(i), x.row(j))).max(0.0))
            .collect::<Vec<f64>>()
    });
    Gram::from_fn(x.rows(), |i, j| if i == j { 0.0 } else { rows[i.max(j)][i.min(j)] })
}

/// One binary decision function `f(x) = Σ coef_i K(sv_i, x) + bias`, with
/// `coef_i = α_i y_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMachine {
    pub support_vectors: Vec<Vec<f64>>,
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl BinaryMachine {
    fn from_solution(x: &Matrix, rows: &[usize], y: &[f64], sol: &DualSolution) -> Self {
        let mut support_vectors = Vec::new();
        let mut dual_coef = Vec::new();
        for (k, &a) in sol.alpha.iter().enumerate() {
            if a > 0.0 {
                support_vectors.push(x.row(rows[k]).to_vec());
                dual_coef.push(a * y[k]);
            }
        }
        Self {
            support_vectors,
            dual_coef,
            bias: sol.bias,
            converged: sol.converged,
            iterations: sol.iterations,
        }
    }

    pub fn decision(&self, kernel: &KernelSpec, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coef)
            .map(|(sv, &c)| c * kernel.apply(sv, x))
            .sum::<f64>()
            + self.bias
    }

    /// Primal weight vector `Σ coef_i sv_i`; meaningful for the linear kernel.
    pub fn linear_weights(&self, dim: usize) -> Vec<f64> {
        let mut w = vec![0.0; dim];
        for (sv, &c) in self.support_vectors.iter().zip(&self.dual_coef) {
            for (wj, &xj) in w.iter_mut().zip(sv) {
                *wj += c * xj;
            }
        }
        w
    }

    /// `Σ α_i y_i`, zero at a feasible point.
    pub fn coef_sum(&self) -> f64 {
        self.dual_coef.iter().sum()
    }
}

/// Trained SVM. Binary models hold one machine whose positive side is
/// `classes[1]`; one-vs-rest models hold one machine per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: KernelSpec,
    pub c: f64,
    pub classes: Vec<String>,
    pub dim: usize,
    pub machines: Vec<BinaryMachine>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmPrediction {
    /// One value per machine.
    pub decision_values: Vec<f64>,
    pub class_index: usize,
    pub label: String,
}

impl SvmPrediction {
    /// Decision value of the predicted class (binary: the single machine's).
    pub fn decision(&self) -> f64 {
        if self.decision_values.len() == 1 {
            self.decision_values[0]
        } else {
            self.decision_values[self.class_index]
        }
    }
}

impl SvmModel {
    pub fn is_one_vs_rest(&self) -> bool {
        self.machines.len() == self.classes.len() && self.classes.len() > 1 && self.machines.len() != 1
    }

    pub fn converged(&self) -> bool {
        self.machines.iter().all(|m| m.converged)
    }

    pub fn predict(&self, x: &[f64]) -> Result<SvmPrediction> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let values: Vec<f64> = self.machines.iter().map(|m| m.decision(&self.kernel, x)).collect();
        let class_index = if values.len() == 1 {
            // sign, with 0 counted as the positive class
            usize::from(values[0] >= 0.0)
        } else {
            argmax_lowest(&values)
        };
        Ok(SvmPrediction {
            decision_values: values,
            class_index,
            label: self.classes[class_index].clone(),
        })
    }
}

/// Index of the maximum, ties to the lowest index.
pub(crate) fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_training_input(x: &Matrix, c: f64, kernel: &KernelSpec) -> Result<()> {
    kernel.validate()?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid(format!("C must be positive, got {c}")));
    }
    if x.rows() == 0 {
        return Err(Error::invalid("empty training set"));
    }
    Ok(())
}

/// Trains one machine on `rows` of a precomputed kernel with targets
/// `+1` where `positive[k]` holds.
pub fn train_machine<K: KernelRows>(
    x: &Matrix,
    kernel: &K,
    rows: &[usize],
    positive: &[bool],
    c: f64,
    opts: &SmoOptions,
) -> Result<BinaryMachine> {
    let y: Vec<f64> = positive.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
    let view = SubGram { kernel, rows };
    let sol = solve_dual(&view, &y, c, opts)?;
    Ok(BinaryMachine::from_solution(x, rows, &y, &sol))
}

/// Binary SVM on `±1` targets.
pub fn svm_train_binary(x: &Matrix, y: &[f64], c: f64, kernel: &KernelSpec, opts: &SmoOptions) -> Result<BinaryMachine> {
    check_training_input(x, c, kernel)?;
    if y.len() != x.rows() {
        return Err(Error::DimensionMismatch { expected: x.rows(), got: y.len() });
    }
    let gram = kernel.gram(x);
    let sol = solve_dual(&gram, y, c, opts)?;
    let rows: Vec<usize> = (0..x.rows()).collect();
    Ok(BinaryMachine::from_solution(x, &rows, y, &sol))
}

/// Binary model on a two-class dataset; `classes[1]` is the positive side.
pub fn train_binary_dataset(dataset: &LabeledDataset, c: f64, kernel: &KernelSpec, opts: &SmoOptions) -> Result<SvmModel> {
    let classes = dataset.classes();
    if classes.len() != 2 {
        return Err(Error::invalid(format!(
            "binary SVM needs exactly 2 classes, got {}",
            classes.len()
        )));
    }
    let idx = dataset.class_indices(&classes)?;
    let y: Vec<f64> = idx.iter().map(|&k| if k == 1 { 1.0 } else { -1.0 }).collect();
    let machine = svm_train_binary(&dataset.features, &y, c, kernel, opts)?;
    Ok(SvmModel {
        kernel: *kernel,
        c,
        classes,
        dim: dataset.dim(),
        machines: vec![machine],
    })
}

/// One machine per class, class `c` against the rest, sharing one kernel
/// matrix. Machines train in parallel.
pub fn one_vs_rest_train(dataset: &LabeledDataset, c: f64, kernel: &KernelSpec, opts: &SmoOptions) -> Result<SvmModel> {
    check_training_input(&dataset.features, c, kernel)?;
    let classes = dataset.classes();
    if classes.len() < 2 {
        return Err(Error::invalid("one-vs-rest needs at least 2 classes"));
    }
    let idx = dataset.class_indices(&classes)?;
    let gram = kernel.gram(&dataset.features);
    let rows: Vec<usize> = (0..dataset.len()).collect();
    let machines = par::try_map_range(classes.len(), |k| {
        let positive: Vec<bool> = idx.iter().map(|&i| i == k).collect();
        train_machine(&dataset.features, &gram, &rows, &positive, c, opts)
    })?;
    Ok(SvmModel {
        kernel: *kernel,
        c,
        classes,
        dim: dataset.dim(),
        machines,
    })
}

pub fn svm_predict(model: &SvmModel, x: &[f64]) -> Result<SvmPrediction> {
    model.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurization::{FeatureConfig, FeatureDescriptor, Schema};
    use crate::seed;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn dataset(rows: &[Vec<f64>], labels: &[&str]) -> LabeledDataset {
        let schema = Schema {
            config: FeatureConfig::taps(),
            descriptors: vec![FeatureDescriptor::Duration; rows[0].len()],
        };
        LabeledDataset::new(
            None,
            schema,
            Matrix::from_rows(rows).unwrap(),
            labels.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap()
    }

    fn xor() -> (Matrix, Vec<f64>) {
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]]).unwrap();
        (x, vec![-1.0, -1.0, 1.0, 1.0])
    }

    fn accuracy(m: &BinaryMachine, k: &KernelSpec, x: &Matrix, y: &[f64]) -> f64 {
        let hits = x
            .iter_rows()
            .zip(y)
            .filter(|(r, &t)| (m.decision(k, r) >= 0.0) == (t > 0.0))
            .count();
        hits as f64 / y.len() as f64
    }

    /// KKT residuals of a trained machine on its own training set.
    fn assert_kkt(m: &BinaryMachine, k: &KernelSpec, x: &Matrix, y: &[f64], c: f64, tol: f64) {
        for (r, &t) in x.iter_rows().zip(y) {
            let margin = t * m.decision(k, r);
            let alpha = m
                .support_vectors
                .iter()
                .zip(&m.dual_coef)
                .find(|(sv, _)| sv.as_slice() == r)
                .map_or(0.0, |(_, &c)| c.abs());
            if alpha == 0.0 {
                assert!(margin >= 1.0 - tol, "alpha=0 margin {margin}");
            } else if alpha < c {
                assert!((margin - 1.0).abs() <= tol, "free margin {margin}");
            } else {
                assert!(margin <= 1.0 + tol, "bound margin {margin}");
            }
        }
    }

    #[test]
    fn kernel_values() {
        let rbf = KernelSpec::Rbf { gamma: 0.7 };
        assert_eq!(kernel_eval(&rbf, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(kernel_eval(&KernelSpec::Linear, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let x = [10.0, 0.0];
        let y = [0.0, 0.0];
        let v = kernel_eval(&KernelSpec::Rbf { gamma: 0.01 }, &x, &y).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.3679).abs() < 1e-4);
        let poly = KernelSpec::Polynomial { degree: 3, coef0: 1.0 };
        assert_eq!(kernel_eval(&poly, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1728.0);
        assert!(kernel_eval(&rbf, &[1.0], &[1.0, 2.0]).is_err());
        assert!(kernel_eval(&KernelSpec::Rbf { gamma: 0.0 }, &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn kernel_symmetry() {
        let mut rng = seed::rng(8);
        let specs = [
            KernelSpec::Linear,
            KernelSpec::Polynomial { degree: 2, coef0: 0.5 },
            KernelSpec::Rbf { gamma: 0.3 },
        ];
        for _ in 0..100 {
            let a: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            for s in &specs {
                assert!((s.apply(&a, &b) - s.apply(&b, &a)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn two_point_model() {
        let x = Matrix::from_rows(&[[-1.0], [1.0]]).unwrap();
        let m = svm_train_binary(&x, &[-1.0, 1.0], 1e3, &KernelSpec::Linear, &SmoOptions::default()).unwrap();
        assert_eq!(m.support_vectors.len(), 2);
        for &c in &m.dual_coef {
            assert!((c.abs() - 0.5).abs() < 1e-12);
        }
        for t in [-2.0, -0.3, 0.0, 0.8, 3.0] {
            assert!((m.decision(&KernelSpec::Linear, &[t]) - t).abs() < 1e-12);
        }
    }

    #[test]
    fn xor_needs_a_nonlinear_kernel() {
        let (x, y) = xor();
        let lin = svm_train_binary(&x, &y, 10.0, &KernelSpec::Linear, &SmoOptions::default()).unwrap();
        assert!(accuracy(&lin, &KernelSpec::Linear, &x, &y) <= 0.75);
        let rbf_spec = KernelSpec::Rbf { gamma: 1.0 };
        let rbf = svm_train_binary(&x, &y, 10.0, &rbf_spec, &SmoOptions::default()).unwrap();
        assert_eq!(accuracy(&rbf, &rbf_spec, &x, &y), 1.0);
        assert_kkt(&rbf, &rbf_spec, &x, &y, 10.0, 1e-3);
    }

    #[test]
    fn rbf_scale_invariance() {
        let mut rng = seed::rng(21);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let shift = if i % 2 == 0 { 1.0 } else { -1.0 };
                (0..3).map(|_| shift + { let z: f64 = StandardNormal.sample(&mut rng); z }).collect()
            })
            .collect();
        let y: Vec<f64> = (0..30).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let scale = 3.5;
        let xs = Matrix::from_rows(&rows.iter().map(|r| r.iter().map(|v| v * scale).collect::<Vec<_>>()).collect::<Vec<_>>()).unwrap();
        let k1 = KernelSpec::Rbf { gamma: 0.4 };
        let k2 = KernelSpec::Rbf { gamma: 0.4 / (scale * scale) };
        let m1 = svm_train_binary(&x, &y, 2.0, &k1, &SmoOptions::default()).unwrap();
        let m2 = svm_train_binary(&xs, &y, 2.0, &k2, &SmoOptions::default()).unwrap();
        for _ in 0..50 {
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let ps: Vec<f64> = p.iter().map(|v| v * scale).collect();
            let (d1, d2) = (m1.decision(&k1, &p), m2.decision(&k2, &ps));
            assert!((d1 - d2).abs() < 1e-6, "{d1} vs {d2}");
        }
    }

    fn clusters(k: usize, per: usize, seed_: u64) -> LabeledDataset {
        let mut rng = seed::rng(seed_);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let names = ["a", "b", "c", "d"];
        for (c, name) in names.iter().enumerate().take(k) {
            let center = [6.0 * (c as f64), 3.0 * ((c * 7) % 3) as f64];
            for _ in 0..per {
                rows.push(center.iter().map(|m| m + 0.5 * { let z: f64 = StandardNormal.sample(&mut rng); z }).collect::<Vec<f64>>());
                labels.push(*name);
            }
        }
        dataset(&rows, &labels)
    }

    #[test]
    fn one_vs_rest_on_separated_clusters() {
        let train = clusters(3, 20, 1);
        let test = clusters(3, 10, 2);
        let model = one_vs_rest_train(&train, 10.0, &KernelSpec::Rbf { gamma: 0.1 }, &SmoOptions::default()).unwrap();
        assert_eq!(model.machines.len(), 3);
        for m in &model.machines {
            assert!(m.coef_sum().abs() < 1e-6);
            assert!(m.dual_coef.iter().all(|c| c.abs() <= 10.0 + 1e-12));
        }
        for (r, l) in test.features.iter_rows().zip(&test.labels) {
            assert_eq!(&model.predict(r).unwrap().label, l);
        }
    }

    #[test]
    fn two_class_one_vs_rest_matches_binary() {
        let train = clusters(2, 25, 3);
        let kernel = KernelSpec::Rbf { gamma: 0.2 };
        let ovr = one_vs_rest_train(&train, 1.0, &kernel, &SmoOptions::default()).unwrap();
        let bin = train_binary_dataset(&train, 1.0, &kernel, &SmoOptions::default()).unwrap();
        assert_eq!(ovr.machines.len(), 2);
        let mut rng = seed::rng(4);
        for _ in 0..200 {
            let p = [rng.random_range(-3.0..9.0), rng.random_range(-3.0..6.0)];
            assert_eq!(ovr.predict(&p).unwrap().label, bin.predict(&p).unwrap().label);
        }
    }

    #[test]
    fn free_vectors_sit_on_the_margin() {
        let train = clusters(2, 30, 9);
        let kernel = KernelSpec::Linear;
        let c = 0.5;
        let model = train_binary_dataset(&train, c, &kernel, &SmoOptions::default()).unwrap();
        let m = &model.machines[0];
        for (sv, &coef) in m.support_vectors.iter().zip(&m.dual_coef) {
            if coef.abs() < c - 1e-9 {
                let d = m.decision(&kernel, sv).abs();
                assert!((1.0 - 1e-3..=1.0 + 1e-3).contains(&d), "{d}");
            }
        }
    }

    #[test]
    fn predict_checks_dimension() {
        let train = clusters(2, 5, 3);
        let model = one_vs_rest_train(&train, 1.0, &KernelSpec::Linear, &SmoOptions::default()).unwrap();
        assert!(model.predict(&[1.0]).is_err());
    }

    #[test]
    fn squared_distance_matrix() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [3.0, 4.0], [1.0, 1.0]]).unwrap();
        let d = squared_distances(&x);
        assert!((d.at(0, 1) - 25.0).abs() < 1e-12);
        assert!((d.at(2, 1) - 13.0).abs() < 1e-12);
        assert_eq!(d.at(1, 1), 0.0);
    }
}
