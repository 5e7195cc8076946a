//! Sequential minimal optimization for the soft-margin SVM dual
//!
//! ```text
//! min_α  ½ αᵀQα − eᵀα   s.t.  0 ≤ α_i ≤ C,  yᵀα = 0,   Q_ij = y_i y_j K_ij
//! ```
//!
//! Each step takes the maximal KKT violator `i` and pairs it with the partner
//! `j` that promises the largest objective decrease (second-order working
//! set selection), then solves the two-variable sub-problem analytically.
//! The iteration stops once the maximal violation `m(α) − M(α)` drops below
//! `tol`, which bounds every KKT residual by `tol`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const TAU: f64 = 1e-12;

/// Read-only access to a kernel matrix.
pub trait KernelRows: Sync {
    fn len(&self) -> usize;
    fn at(&self, i: usize, j: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dense symmetric kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    n: usize,
    data: Vec<f64>,
}

impl Gram {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Self { n, data }
    }

    /// Applies `f` elementwise, e.g. squared distances to an RBF kernel.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

impl KernelRows for Gram {
    fn len(&self) -> usize {
        self.n
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// The kernel restricted to a subset of rows, e.g. one CV training fold.
pub struct SubGram<'a, K: KernelRows> {
    pub kernel: &'a K,
    pub rows: &'a [usize],
}

impl<K: KernelRows> KernelRows for SubGram<'_, K> {
    fn len(&self) -> usize {
        self.rows.len()
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.kernel.at(self.rows[i], self.rows[j])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoOptions {
    pub tol: f64,
    /// Pair updates before giving up. `None` means 100 sweeps' worth
    /// (`100·n`, at least 1000).
    pub max_iter: Option<usize>,
    /// Record the dual objective after every update (costs O(n) per step).
    pub record_objective: bool,
}

impl Default for SmoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: None,
            record_objective: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final `m(α) − M(α)`.
    pub max_violation: f64,
    /// Dual objective `Σα − ½αᵀQα` (maximization form) after each update,
    /// when requested.
    pub objective_trace: Vec<f64>,
}

/// Dual objective in maximization form: `Σ α_i − ½ Σ_ij α_i α_j y_i y_j K_ij`.
pub fn dual_objective<K: KernelRows>(kernel: &K, y: &[f64], alpha: &[f64]) -> f64 {
    let n = kernel.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            if alpha[j] != 0.0 {
                quad += alpha[i] * alpha[j] * y[i] * y[j] * kernel.at(i, j);
            }
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

struct State<'a, K: KernelRows> {
    kernel: &'a K,
    y: &'a [f64],
    c: f64,
    alpha: Vec<f64>,
    grad: Vec<f64>,
    diag: Vec<f64>,
}

impl<K: KernelRows> State<'_, K> {
    fn in_up(&self, t: usize) -> bool {
        if self.y[t] > 0.0 {
            self.alpha[t] < self.c
        } else {
            self.alpha[t] > 0.0
        }
    }

    fn in_low(&self, t: usize) -> bool {
        if self.y[t] > 0.0 {
            self.alpha[t] > 0.0
        } else {
            self.alpha[t] < self.c
        }
    }

    /// Returns the working pair, or `None` with the current violation when
    /// the stopping rule is met.
    fn select(&self, tol: f64) -> (Option<(usize, usize)>, f64) {
        let n = self.alpha.len();
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if self.in_up(t) {
                let v = -self.y[t] * self.grad[t];
                if v >= gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let Some(i) = i_sel else {
            return (None, 0.0);
        };
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !self.in_low(t) {
                continue;
            }
            let v = self.y[t] * self.grad[t];
            if v >= gmax2 {
                gmax2 = v;
            }
            let grad_diff = gmax + v;
            if grad_diff > 0.0 {
                let kit = self.kernel.at(i, t);
                let quad = self.diag[i] + self.diag[t] - 2.0 * kit;
                let quad = if quad > 0.0 { quad } else { TAU };
                let obj = -(grad_diff * grad_diff) / quad;
                if obj <= best {
                    best = obj;
                    j_sel = Some(t);
                }
            }
        }
        let violation = gmax + gmax2;
        match j_sel {
            Some(j) if violation >= tol => (Some((i, j)), violation),
            _ => (None, violation.max(0.0)),
        }
    }

    fn update(&mut self, i: usize, j: usize) {
        let (yi, yj) = (self.y[i], self.y[j]);
        let c = self.c;
        let kij = self.kernel.at(i, j);
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        let (gi, gj) = (self.grad[i], self.grad[j]);
        if yi != yj {
            let quad = self.diag[i] + self.diag[j] + 2.0 * yi * yj * kij;
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (-gi - gj) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let quad = self.diag[i] + self.diag[j] - 2.0 * yi * yj * kij;
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (gi - gj) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let (dai, daj) = (ai - old_i, aj - old_j);
        for t in 0..self.alpha.len() {
            let yt = self.y[t];
            self.grad[t] += yt * (yi * self.kernel.at(i, t) * dai + yj * self.kernel.at(j, t) * daj);
        }
    }

    fn objective(&self) -> f64 {
        // Σα − ½αᵀQα = Σα − ½αᵀ(G + e) = ½Σα − ½αᵀG
        self.alpha
            .iter()
            .zip(&self.grad)
            .map(|(a, g)| 0.5 * a - 0.5 * a * g)
            .sum()
    }

    fn bias(&self) -> f64 {
        let n = self.alpha.len();
        let (mut sum, mut free) = (0.0, 0usize);
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        for t in 0..n {
            let v = -self.y[t] * self.grad[t];
            if self.alpha[t] > 0.0 && self.alpha[t] < self.c {
                sum += v;
                free += 1;
            } else {
                if self.in_up(t) {
                    lb = lb.max(v);
                }
                if self.in_low(t) {
                    ub = ub.min(v);
                }
            }
        }
        if free > 0 {
            sum / free as f64
        } else if ub.is_finite() && lb.is_finite() {
            (ub + lb) / 2.0
        } else if ub.is_finite() {
            ub
        } else if lb.is_finite() {
            lb
        } else {
            0.0
        }
    }
}

/// Solves the dual for labels `y ∈ {−1, +1}` and penalty `c`.
///
/// The returned bias makes the decision function
/// `f(x) = Σ α_i y_i K(x_i, x) + bias`.
pub fn solve_dual<K: KernelRows>(kernel: &K, y: &[f64], c: f64, opts: &SmoOptions) -> Result<DualSolution> {
    solve_dual_from(kernel, y, c, opts, None)
}

/// As [`solve_dual`], starting from a feasible `alpha0` (for example the
/// solution at a smaller `C`).
pub fn solve_dual_from<K: KernelRows>(
    kernel: &K,
    y: &[f64],
    c: f64,
    opts: &SmoOptions,
    alpha0: Option<&[f64]>,
) -> Result<DualSolution> {
    let n = kernel.len();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid(format!("C must be positive, got {c}")));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::invalid("SVM labels must be -1 or +1"));
    }
    if !(y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0)) {
        return Err(Error::invalid("SVM training needs both classes"));
    }
    let mut st = State {
        kernel,
        y,
        c,
        alpha: vec![0.0; n],
        grad: vec![-1.0; n],
        diag: (0..n).map(|i| kernel.at(i, i)).collect(),
    };
    if let Some(a0) = alpha0 {
        if a0.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: a0.len() });
        }
        let balance: f64 = a0.iter().zip(y).map(|(a, t)| a * t).sum();
        if a0.iter().any(|&a| !(0.0..=c).contains(&a)) || balance.abs() > 1e-9 * (1.0 + c) {
            return Err(Error::invalid("initial alpha is not feasible"));
        }
        st.alpha = a0.to_vec();
        for s in (0..n).filter(|&s| a0[s] > 0.0) {
            let w = a0[s] * y[s];
            for (t, g) in st.grad.iter_mut().enumerate() {
                *g += y[t] * w * kernel.at(t, s);
            }
        }
    }
    let max_iter = opts.max_iter.unwrap_or((100 * n).max(1000));
    let mut trace = Vec::new();
    if opts.record_objective {
        trace.push(st.objective());
    }
    let mut iterations = 0;
    let mut converged = false;
    let mut violation;
    loop {
        let (pair, v) = st.select(opts.tol);
        violation = v;
        let Some((i, j)) = pair else {
            converged = true;
            break;
        };
        if iterations >= max_iter {
            break;
        }
        st.update(i, j);
        iterations += 1;
        if opts.record_objective {
            trace.push(st.objective());
        }
    }
    if !converged {
        log::debug!(
            "SMO stopped after {iterations} iterations with KKT violation {violation:.3e} (tol {})",
            opts.tol
        );
    }
    let bias = st.bias();
    Ok(DualSolution {
        alpha: st.alpha,
        bias,
        iterations,
        converged,
        max_violation: violation,
        objective_trace: trace,
    })
}
