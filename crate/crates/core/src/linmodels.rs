//! Logistic and softmax regression fitted by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use crate::featurization::LabeledDataset;
use crate::linalg::Matrix;
use crate::{par, Error, Result};

/// `1 / (1 + e^−z)` without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)`, stable on both tails.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub l2_lambda: f64,
    /// First trial step of the backtracking line search.
    pub learning_rate: f64,
    pub max_iter: usize,
    /// Stop once the gradient norm falls below this.
    pub tol: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            l2_lambda: 0.0,
            learning_rate: 1.0,
            max_iter: 5000,
            tol: 1e-6,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2_lambda >= 0.0) || !self.l2_lambda.is_finite() {
            return Err(Error::invalid("l2_lambda must be finite and >= 0"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        Ok(())
    }
}

/// Result of [`gradient_descent`].
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Loss before the first step and after every accepted step.
    pub loss_trace: Vec<f64>,
}

const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-20;

/// Minimizes a smooth function with Armijo backtracking. `f` returns the
/// value and gradient.
pub fn gradient_descent<F>(f: F, x0: Vec<f64>, opts: &TrainOptions) -> Optimum
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0;
    let (mut loss, mut grad) = f(&x);
    let mut trace = vec![loss];
    let mut step = opts.learning_rate;
    let mut iterations = 0;
    let mut converged = false;
    let mut trial = vec![0.0; x.len()];
    while iterations < opts.max_iter {
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        if g2.sqrt() < opts.tol {
            converged = true;
            break;
        }
        let accepted = loop {
            for ((t, &xi), &gi) in trial.iter_mut().zip(&x).zip(&grad) {
                *t = xi - step * gi;
            }
            let (l, g) = f(&trial);
            if l.is_finite() && l <= loss - ARMIJO_C * step * g2 {
                break Some((l, g));
            }
            step *= 0.5;
            if step < MIN_STEP {
                break None;
            }
        };
        let Some((l, g)) = accepted else {
            // no further decrease is representable
            converged = true;
            break;
        };
        std::mem::swap(&mut x, &mut trial);
        loss = l;
        grad = g;
        trace.push(loss);
        iterations += 1;
        step = (step * 2.0).min(1e6);
    }
    Optimum {
        x,
        loss,
        iterations,
        converged,
        loss_trace: trace,
    }
}

/// Linear score `θ_0 + Σ θ_{j+1} x_j`.
fn affine(theta: &[f64], x: &[f64]) -> f64 {
    theta[0] + theta[1..].iter().zip(x).map(|(t, v)| t * v).sum::<f64>()
}

/// Mean negative log-likelihood plus `(λ/2)‖θ_{1..}‖²` and its gradient.
/// `theta[0]` is the unpenalized bias; `y` holds 0/1 targets.
pub fn logreg_loss_grad(theta: &[f64], x: &Matrix, y: &[f64], l2_lambda: f64) -> (f64, Vec<f64>) {
    let n = x.rows();
    let d = x.cols();
    let parts = par::map_range(n, |i| {
        let z = affine(theta, x.row(i));
        (softplus(z) - y[i] * z, sigmoid(z) - y[i])
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    for (i, &(l, r)) in parts.iter().enumerate() {
        loss += l;
        grad[0] += r;
        for (g, &v) in grad[1..].iter_mut().zip(x.row(i)) {
            *g += r * v;
        }
    }
    let inv = 1.0 / n as f64;
    loss *= inv;
    grad.iter_mut().for_each(|g| *g *= inv);
    for j in 1..=d {
        loss += 0.5 * l2_lambda * theta[j] * theta[j];
        grad[j] += l2_lambda * theta[j];
    }
    (loss, grad)
}

/// Mean cross-entropy plus `(λ/2)Σ_c‖θ_{c,1..}‖²` and its gradient, with
/// `theta` a row-major `k × (d+1)` matrix flattened and `y` class indices.
pub fn softmax_loss_grad(theta: &[f64], k: usize, x: &Matrix, y: &[usize], l2_lambda: f64) -> (f64, Vec<f64>) {
    let n = x.rows();
    let w = x.cols() + 1;
    let parts = par::map_range(n, |i| {
        let z: Vec<f64> = (0..k).map(|c| affine(&theta[c * w..(c + 1) * w], x.row(i))).collect();
        let p = softmax(&z);
        let lse = log_sum_exp(&z);
        (lse - z[y[i]], p)
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0; k * w];
    for (i, (l, p)) in parts.iter().enumerate() {
        loss += l;
        for c in 0..k {
            let r = p[c] - if c == y[i] { 1.0 } else { 0.0 };
            let g = &mut grad[c * w..(c + 1) * w];
            g[0] += r;
            for (gj, &v) in g[1..].iter_mut().zip(x.row(i)) {
                *gj += r * v;
            }
        }
    }
    let inv = 1.0 / n as f64;
    loss *= inv;
    grad.iter_mut().for_each(|g| *g *= inv);
    for c in 0..k {
        for j in 1..w {
            let t = theta[c * w + j];
            loss += 0.5 * l2_lambda * t * t;
            grad[c * w + j] += l2_lambda * t;
        }
    }
    (loss, grad)
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Probabilities with max-subtraction.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    /// Bias first, then one weight per feature.
    pub theta: Vec<f64>,
    /// `[negative, positive]`.
    pub classes: Vec<String>,
    pub iterations: usize,
    pub final_loss: f64,
    pub l2_lambda: f64,
    pub converged: bool,
}

impl LogRegModel {
    pub fn dim(&self) -> usize {
        self.theta.len() - 1
    }

    /// Probability of `classes[1]` and the predicted label; 0.5 goes to
    /// `classes[0]`.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, String)> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let p = sigmoid(affine(&self.theta, x));
        let label = &self.classes[usize::from(p > 0.5)];
        Ok((p, label.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    /// `k × (d+1)`, bias in column 0.
    pub theta: Matrix,
    pub classes: Vec<String>,
    pub iterations: usize,
    pub final_loss: f64,
    pub l2_lambda: f64,
    pub converged: bool,
}

impl SoftmaxModel {
    pub fn dim(&self) -> usize {
        self.theta.cols() - 1
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let z: Vec<f64> = self.theta.iter_rows().map(|t| affine(t, x)).collect();
        Ok(softmax(&z))
    }

    /// Probability vector and arg-max label, ties to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<(Vec<f64>, String)> {
        let p = self.probabilities(x)?;
        let best = crate::svm::argmax_lowest(&p);
        Ok((p, self.classes[best].clone()))
    }
}

fn binary_targets(dataset: &LabeledDataset) -> Result<(Vec<String>, Vec<f64>)> {
    let classes = dataset.classes();
    if classes.len() != 2 {
        return Err(Error::invalid(format!(
            "logistic regression needs exactly 2 classes, got {}",
            classes.len()
        )));
    }
    let idx = dataset.class_indices(&classes)?;
    Ok((classes, idx.into_iter().map(|i| i as f64).collect()))
}

pub fn logreg_train(dataset: &LabeledDataset, opts: &TrainOptions) -> Result<LogRegModel> {
    logreg_train_from(dataset, opts, vec![0.0; dataset.dim() + 1])
}

/// As [`logreg_train`], starting from `theta0`.
pub fn logreg_train_from(dataset: &LabeledDataset, opts: &TrainOptions, theta0: Vec<f64>) -> Result<LogRegModel> {
    opts.validate()?;
    let (classes, y) = binary_targets(dataset)?;
    if theta0.len() != dataset.dim() + 1 {
        return Err(Error::DimensionMismatch { expected: dataset.dim() + 1, got: theta0.len() });
    }
    let x = &dataset.features;
    let opt = gradient_descent(|t| logreg_loss_grad(t, x, &y, opts.l2_lambda), theta0, opts);
    finite(&opt.x)?;
    if !opt.converged {
        log::warn!("logistic regression stopped at max_iter={} before reaching tol", opts.max_iter);
    }
    Ok(LogRegModel {
        theta: opt.x,
        classes,
        iterations: opt.iterations,
        final_loss: opt.loss,
        l2_lambda: opts.l2_lambda,
        converged: opt.converged,
    })
}

pub fn softmax_train(dataset: &LabeledDataset, opts: &TrainOptions) -> Result<SoftmaxModel> {
    let k = dataset.classes().len();
    softmax_train_from(dataset, opts, vec![0.0; k * (dataset.dim() + 1)])
}

/// As [`softmax_train`], starting from a flattened `k × (d+1)` `theta0`.
pub fn softmax_train_from(dataset: &LabeledDataset, opts: &TrainOptions, theta0: Vec<f64>) -> Result<SoftmaxModel> {
    opts.validate()?;
    let classes = dataset.classes();
    let k = classes.len();
    if k < 2 {
        return Err(Error::invalid("softmax regression needs at least 2 classes"));
    }
    let w = dataset.dim() + 1;
    if theta0.len() != k * w {
        return Err(Error::DimensionMismatch { expected: k * w, got: theta0.len() });
    }
    let y = dataset.class_indices(&classes)?;
    let x = &dataset.features;
    let opt = gradient_descent(|t| softmax_loss_grad(t, k, x, &y, opts.l2_lambda), theta0, opts);
    finite(&opt.x)?;
    if !opt.converged {
        log::warn!("softmax regression stopped at max_iter={} before reaching tol", opts.max_iter);
    }
    Ok(SoftmaxModel {
        theta: Matrix::from_vec(k, w, opt.x)?,
        classes,
        iterations: opt.iterations,
        final_loss: opt.loss,
        l2_lambda: opts.l2_lambda,
        converged: opt.converged,
    })
}

fn finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|t| t.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical("training produced non-finite parameters".into()))
    }
}

pub fn logreg_predict(model: &LogRegModel, x: &[f64]) -> Result<(f64, String)> {
    model.predict(x)
}

pub fn softmax_predict(model: &SoftmaxModel, x: &[f64]) -> Result<(Vec<f64>, String)> {
    model.predict(x)
}
