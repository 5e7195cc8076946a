//! Gaussian-mixture anomaly detection for one genuine user.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dimreduce::{pca_fit, PcaModel};
use crate::featurization::Scaler;
use crate::linalg::{squared_distance, Cholesky, Matrix};
use crate::{par, seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub k: usize,
    /// Added to each covariance diagonal, scaled by `1/φ_j` (see [`gmm_fit`]).
    pub reg_eps: f64,
    pub max_iter: usize,
    /// Stop once the per-sample objective gains less than this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            k: 3,
            reg_eps: 1e-3,
            max_iter: 200,
            tol: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmModel {
    pub k: usize,
    pub phi: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<Matrix>,
    pub reg_eps: f64,
    /// Objective after initialization and after every EM iteration.
    pub log_likelihood_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    #[serde(skip)]
    prepared: OnceLock<Vec<Prepared>>,
}

impl PartialEq for GmmModel {
    fn eq(&self, o: &Self) -> bool {
        self.k == o.k
            && self.phi == o.phi
            && self.mu == o.mu
            && self.sigma == o.sigma
            && self.reg_eps == o.reg_eps
            && self.log_likelihood_trace == o.log_likelihood_trace
            && self.iterations == o.iterations
            && self.converged == o.converged
    }
}

/// Per-component factorization used for scoring.
#[derive(Debug, Clone)]
struct Prepared {
    chol: Cholesky,
    /// `log φ_j − ½(d log 2π + log|Σ_j|)`.
    offset: f64,
}

fn prepare(phi: &[f64], sigma: &[Matrix]) -> Result<Vec<Prepared>> {
    phi.iter()
        .zip(sigma)
        .map(|(&p, s)| {
            let chol = Cholesky::new(s).map_err(|e| {
                Error::Numerical(format!("{e}; covariance is singular, use reg_eps > 0"))
            })?;
            let d = s.rows() as f64;
            let offset = p.ln() - 0.5 * (d * (2.0 * PI).ln() + chol.log_det());
            Ok(Prepared { chol, offset })
        })
        .collect()
}

fn component_logs(prep: &[Prepared], mu: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    prep.iter()
        .zip(mu)
        .map(|(p, m)| {
            let diff: Vec<f64> = x.iter().zip(m).map(|(a, b)| a - b).collect();
            p.offset - 0.5 * p.chol.inverse_quadratic_form(&diff)
        })
        .collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmModel {
    pub fn dim(&self) -> usize {
        self.mu.first().map_or(0, Vec::len)
    }

    fn prepared(&self) -> Result<&[Prepared]> {
        if let Some(p) = self.prepared.get() {
            return Ok(p);
        }
        let p = prepare(&self.phi, &self.sigma)?;
        Ok(self.prepared.get_or_init(|| p))
    }

    /// `max_j log(φ_j N(x; μ_j, Σ_j))`.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let logs = component_logs(self.prepared()?, &self.mu, x);
        Ok(logs.into_iter().fold(f64::NEG_INFINITY, f64::max))
    }

    /// `log Σ_j φ_j N(x; μ_j, Σ_j)`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(log_sum_exp(&component_logs(self.prepared()?, &self.mu, x)))
    }

    /// Posterior component probabilities, one row per sample.
    pub fn responsibilities(&self, x: &Matrix) -> Result<Matrix> {
        Ok(e_step(self.prepared()?, &self.mu, x).0)
    }

    /// Total log-likelihood of `x`.
    pub fn log_likelihood(&self, x: &Matrix) -> Result<f64> {
        Ok(e_step(self.prepared()?, &self.mu, x).1)
    }

    /// `reg_eps · m / 2 · Σ_j tr(Σ_j⁻¹)`, the penalty EM maximizes against.
    fn penalty(&self, m: usize) -> Result<f64> {
        if self.reg_eps == 0.0 {
            return Ok(0.0);
        }
        let tr: f64 = self.prepared()?.iter().map(|p| p.chol.inverse_trace()).sum();
        Ok(0.5 * self.reg_eps * m as f64 * tr)
    }

    fn from_parts(phi: Vec<f64>, mu: Vec<Vec<f64>>, sigma: Vec<Matrix>, reg_eps: f64) -> Self {
        Self {
            k: phi.len(),
            phi,
            mu,
            sigma,
            reg_eps,
            log_likelihood_trace: Vec::new(),
            iterations: 0,
            converged: false,
            prepared: OnceLock::new(),
        }
    }
}

fn e_step(prep: &[Prepared], mu: &[Vec<f64>], x: &Matrix) -> (Matrix, f64) {
    let rows = par::map_range(x.rows(), |i| {
        let logs = component_logs(prep, mu, x.row(i));
        let lse = log_sum_exp(&logs);
        let q: Vec<f64> = logs.iter().map(|l| (l - lse).exp()).collect();
        let s: f64 = q.iter().sum();
        (q.into_iter().map(|v| v / s).collect::<Vec<_>>(), lse)
    });
    let ll = rows.iter().map(|(_, l)| l).sum();
    let k = mu.len();
    let data = rows.into_iter().flat_map(|(q, _)| q).collect();
    (Matrix::from_vec(x.rows(), k, data).expect("shape"), ll)
}

/// Closed-form maximizer given responsibilities. With the trace penalty the
/// covariance update is `S_j/N_j + (reg_eps/φ_j) I`.
fn m_step(x: &Matrix, resp: &Matrix, reg_eps: f64) -> Result<GmmModel> {
    let (m, d, k) = (x.rows(), x.cols(), resp.cols());
    let mut phi = Vec::with_capacity(k);
    let mut mu = Vec::with_capacity(k);
    let mut sigma = Vec::with_capacity(k);
    for j in 0..k {
        let nj: f64 = (0..m).map(|i| resp[(i, j)]).sum();
        if !(nj > 0.0) {
            return Err(Error::Numerical(format!("mixture component {j} lost all support")));
        }
        let mut mean = vec![0.0; d];
        for i in 0..m {
            let q = resp[(i, j)];
            for (a, &v) in mean.iter_mut().zip(x.row(i)) {
                *a += q * v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= nj);
        let mut s = Matrix::zeros(d, d);
        let mut diff = vec![0.0; d];
        for i in 0..m {
            let q = resp[(i, j)];
            if q == 0.0 {
                continue;
            }
            for ((df, &v), &mm) in diff.iter_mut().zip(x.row(i)).zip(&mean) {
                *df = v - mm;
            }
            for a in 0..d {
                let qa = q * diff[a];
                for b in a..d {
                    s[(a, b)] += qa * diff[b];
                }
            }
        }
        let p = nj / m as f64;
        for a in 0..d {
            for b in a..d {
                let v = s[(a, b)] / nj;
                s[(a, b)] = v;
                s[(b, a)] = v;
            }
            s[(a, a)] += reg_eps / p;
        }
        phi.push(p);
        mu.push(mean);
        sigma.push(s);
    }
    Ok(GmmModel::from_parts(phi, mu, sigma, reg_eps))
}

/// k-means++ seeding: first mean uniform, later ones with probability
/// proportional to the squared distance to the nearest chosen mean.
fn seed_means(x: &Matrix, k: usize, rng: &mut seed::Rng) -> Vec<Vec<f64>> {
    let m = x.rows();
    let mut means = vec![x.row(rng.random_range(0..m)).to_vec()];
    let mut d2: Vec<f64> = x.iter_rows().map(|r| squared_distance(r, &means[0])).collect();
    while means.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = m - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..m)
        };
        let c = x.row(pick).to_vec();
        for (d, r) in d2.iter_mut().zip(x.iter_rows()) {
            *d = d.min(squared_distance(r, &c));
        }
        means.push(c);
    }
    means
}

/// One EM iteration from `model`; also returns the responsibilities used.
pub fn em_iteration(model: &GmmModel, x: &Matrix) -> Result<(GmmModel, Matrix)> {
    let (resp, _) = e_step(model.prepared()?, &model.mu, x);
    let next = m_step(x, &resp, model.reg_eps)?;
    Ok((next, resp))
}

/// Fits a full-covariance mixture by EM.
///
/// With `reg_eps > 0` the M-step is the exact maximizer of the
/// log-likelihood minus `reg_eps·m/2·Σ_j tr(Σ_j⁻¹)`, so every covariance has
/// eigenvalues at least `reg_eps` and the recorded objective never
/// decreases. With `reg_eps = 0` the trace is the plain log-likelihood.
pub fn gmm_fit(x: &Matrix, opts: &GmmOptions) -> Result<GmmModel> {
    let (m, d) = (x.rows(), x.cols());
    if opts.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if m < opts.k {
        return Err(Error::invalid(format!("need at least k={} samples, got {m}", opts.k)));
    }
    if !(opts.reg_eps >= 0.0) || !opts.reg_eps.is_finite() {
        return Err(Error::invalid("reg_eps must be finite and >= 0"));
    }
    if d == 0 {
        return Err(Error::invalid("GMM needs at least one feature"));
    }
    let mut rng = seed::rng(opts.seed);
    let means = seed_means(x, opts.k, &mut rng);
    let mut global = x.covariance(0)?;
    for a in 0..d {
        global[(a, a)] += opts.reg_eps;
    }
    let mut model = GmmModel::from_parts(
        vec![1.0 / opts.k as f64; opts.k],
        means,
        vec![global; opts.k],
        opts.reg_eps,
    );
    let objective = |g: &GmmModel| -> Result<f64> { Ok(g.log_likelihood(x)? - g.penalty(m)?) };
    let mut trace = vec![objective(&model)?];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let (next, _) = em_iteration(&model, x)?;
        let obj = objective(&next)?;
        let gain = obj - trace[trace.len() - 1];
        trace.push(obj);
        model = next;
        iterations += 1;
        if gain / (m as f64) < opts.tol {
            converged = true;
            break;
        }
    }
    model.log_likelihood_trace = trace;
    model.iterations = iterations;
    model.converged = converged;
    Ok(model)
}

pub fn gmm_score(model: &GmmModel, x: &[f64]) -> Result<f64> {
    model.score(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyThreshold {
    pub threshold: f64,
    pub quantile: f64,
    pub n_scores: usize,
}

pub const MIN_CALIBRATION_SCORES: usize = 20;

/// Lower empirical quantile `s_(⌊q·n⌋)` of the genuine scores.
pub fn calibrate_threshold(scores: &[f64], quantile: f64) -> Result<AnomalyThreshold> {
    if scores.len() < MIN_CALIBRATION_SCORES {
        return Err(Error::invalid(format!(
            "threshold calibration needs at least {MIN_CALIBRATION_SCORES} scores, got {}",
            scores.len()
        )));
    }
    if !(0.0..1.0).contains(&quantile) {
        return Err(Error::invalid(format!("quantile must be in [0, 1), got {quantile}")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("calibration scores must be finite"));
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let idx = ((quantile * s.len() as f64).floor() as usize).min(s.len() - 1);
    Ok(AnomalyThreshold {
        threshold: s[idx],
        quantile,
        n_scores: s.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyDecision {
    pub score: f64,
    pub accept: bool,
}

/// Accepts iff `score ≥ threshold`.
pub fn classify_anomaly(model: &GmmModel, threshold: &AnomalyThreshold, x: &[f64]) -> Result<AnomalyDecision> {
    let score = model.score(x)?;
    Ok(AnomalyDecision {
        score,
        accept: score >= threshold.threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorOptions {
    /// PCA variance target; `None` skips the projection.
    pub pca_variance: Option<f64>,
    pub max_components: usize,
    /// `gmm.k` is the largest component count tried when `select_k` is set.
    pub gmm: GmmOptions,
    pub select_k: bool,
    pub quantile: f64,
    /// Add an isotropic Gaussian term for the distance to the PCA subspace.
    pub residual: bool,
    /// Folds for out-of-fold calibration; below 2 calibrates in-sample.
    pub calibration_folds: usize,
}

impl Default for DetectorOptions {
    fn default() -> Self {
        Self {
            pca_variance: Some(0.95),
            max_components: 20,
            gmm: GmmOptions::default(),
            select_k: true,
            quantile: 0.05,
            residual: true,
            calibration_folds: 5,
        }
    }
}

/// Genuine-user detector: z-score, optional PCA, mixture score, threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyDetector {
    pub scaler: Scaler,
    pub pca: Option<PcaModel>,
    pub gmm: GmmModel,
    /// Per-dimension variance of the discarded PCA directions, when the
    /// residual term is used.
    pub residual_variance: Option<f64>,
    pub threshold: AnomalyThreshold,
}

/// Scaler and projection fitted on one set of genuine rows.
struct Projection {
    scaler: Scaler,
    pca: Option<PcaModel>,
}

impl Projection {
    fn fit(rows: &Matrix, opts: &DetectorOptions) -> Result<Self> {
        let scaler = Scaler::fit(rows)?;
        let pca = match opts.pca_variance {
            Some(v) => {
                let z = scaler.apply_matrix(rows)?;
                let mut p = pca_fit(&z, v)?;
                let q = p.n_components().min(opts.max_components.max(1));
                if q < p.n_components() {
                    p.components = p.components.select_rows(&(0..q).collect::<Vec<_>>());
                    p.explained_variance.truncate(q);
                    p.explained_variance_ratio.truncate(q);
                }
                Some(p)
            }
            None => None,
        };
        Ok(Self { scaler, pca })
    }

    /// Reduced coordinates, squared residual and residual dimension.
    fn project(&self, x: &[f64]) -> Result<(Vec<f64>, f64, usize)> {
        let z = self.scaler.apply(x)?;
        match &self.pca {
            Some(p) => Ok((p.transform(&z)?, p.residual(&z)?, p.dim() - p.n_components())),
            None => Ok((z, 0.0, 0)),
        }
    }

    fn project_matrix(&self, x: &Matrix) -> Result<(Matrix, Vec<(f64, usize)>)> {
        let parts = x.iter_rows().map(|r| self.project(r)).collect::<Result<Vec<_>>>()?;
        let reduced: Vec<Vec<f64>> = parts.iter().map(|p| p.0.clone()).collect();
        Ok((Matrix::from_rows(&reduced)?, parts.into_iter().map(|p| (p.1, p.2)).collect()))
    }
}

fn residual_log_density(residual: f64, free: usize, var: f64) -> f64 {
    if free == 0 {
        return 0.0;
    }
    -0.5 * residual / var - 0.5 * free as f64 * (2.0 * PI * var).ln()
}

/// Held-out quantities for one genuine sample.
struct HeldOut {
    /// Mixture score per candidate k (`None` where that k failed to fit).
    scores: Vec<Option<f64>>,
    densities: Vec<Option<f64>>,
    residual: f64,
    free: usize,
}

impl AnomalyDetector {
    /// Fits on raw feature rows of the genuine user.
    ///
    /// With `calibration_folds ≥ 2` the residual variance, the component
    /// count (when `select_k`) and the threshold all come from out-of-fold
    /// scores, so they reflect unseen genuine gestures rather than the
    /// training fit.
    pub fn fit(genuine: &Matrix, opts: &DetectorOptions) -> Result<Self> {
        let candidates: Vec<usize> = if opts.select_k { (1..=opts.gmm.k).collect() } else { vec![opts.gmm.k] };
        let folds = opts.calibration_folds;
        let oof = if folds >= 2 {
            if genuine.rows() < 2 * folds {
                return Err(Error::invalid(format!(
                    "out-of-fold calibration with {folds} folds needs at least {} rows",
                    2 * folds
                )));
            }
            Some(Self::held_out(genuine, opts, &candidates)?)
        } else {
            None
        };
        let (k, residual_variance) = match &oof {
            Some(held) => {
                let mut best: Option<(usize, f64)> = None;
                for ci in 0..candidates.len() {
                    let ll: Option<f64> = held.iter().map(|h| h.densities[ci]).sum();
                    if let Some(ll) = ll {
                        if best.is_none_or(|(_, b)| ll > b) {
                            best = Some((ci, ll));
                        }
                    }
                }
                let (ci, _) = best.ok_or_else(|| Error::Numerical("no component count could be fitted".into()))?;
                let var = if opts.residual {
                    let (r, f) = held.iter().fold((0.0, 0usize), |(r, f), h| (r + h.residual, f + h.free));
                    (f > 0).then(|| (r / f as f64).max(opts.gmm.reg_eps).max(1e-12))
                } else {
                    None
                };
                (candidates[ci], var)
            }
            None => (opts.gmm.k, None),
        };
        let proj = Projection::fit(genuine, opts)?;
        let (reduced, resid) = proj.project_matrix(genuine)?;
        let residual_variance = match (oof.is_some(), opts.residual) {
            (true, _) => residual_variance,
            (false, true) => {
                let (r, f) = resid.iter().fold((0.0, 0usize), |(r, f), &(a, b)| (r + a, f + b));
                (f > 0).then(|| (r / f as f64).max(opts.gmm.reg_eps).max(1e-12))
            }
            (false, false) => None,
        };
        let gmm = gmm_fit(&reduced, &GmmOptions { k, ..opts.gmm })?;
        let scores: Vec<f64> = match &oof {
            Some(held) => {
                let ci = candidates.iter().position(|&c| c == k).expect("chosen from candidates");
                held.iter()
                    .map(|h| {
                        let s = h.scores[ci].expect("chosen k fitted on every fold");
                        s + residual_variance.map_or(0.0, |v| residual_log_density(h.residual, h.free, v))
                    })
                    .collect()
            }
            None => (0..genuine.rows())
                .map(|i| {
                    let (r, f) = resid[i];
                    Ok(gmm.score(reduced.row(i))? + residual_variance.map_or(0.0, |v| residual_log_density(r, f, v)))
                })
                .collect::<Result<_>>()?,
        };
        let threshold = calibrate_threshold(&scores, opts.quantile)?;
        Ok(Self {
            scaler: proj.scaler,
            pca: proj.pca,
            gmm,
            residual_variance,
            threshold,
        })
    }

    fn held_out(genuine: &Matrix, opts: &DetectorOptions, candidates: &[usize]) -> Result<Vec<HeldOut>> {
        let m = genuine.rows();
        let folds = opts.calibration_folds;
        let mut order: Vec<usize> = (0..m).collect();
        {
            use rand::seq::SliceRandom;
            order.shuffle(&mut seed::rng(seed::derive(opts.gmm.seed, &[0xca1])));
        }
        let per_fold = par::try_map_range(folds, |f| {
            let test: Vec<usize> = order.iter().skip(f).step_by(folds).copied().collect();
            let train: Vec<usize> = (0..m).filter(|i| !test.contains(i)).collect();
            let proj = Projection::fit(&genuine.select_rows(&train), opts)?;
            let (reduced, _) = proj.project_matrix(&genuine.select_rows(&train))?;
            let models: Vec<Option<GmmModel>> = candidates
                .iter()
                .map(|&k| gmm_fit(&reduced, &GmmOptions { k, seed: seed::derive(opts.gmm.seed, &[f as u64]), ..opts.gmm }).ok())
                .collect();
            test.iter()
                .map(|&i| {
                    let (z, residual, free) = proj.project(genuine.row(i))?;
                    let scores = models.iter().map(|g| g.as_ref().and_then(|g| g.score(&z).ok())).collect();
                    let densities = models.iter().map(|g| g.as_ref().and_then(|g| g.log_density(&z).ok())).collect();
                    Ok((i, HeldOut { scores, densities, residual, free }))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let mut all: Vec<(usize, HeldOut)> = per_fold.into_iter().flatten().collect();
        all.sort_by_key(|(i, _)| *i);
        Ok(all.into_iter().map(|(_, h)| h).collect())
    }

    pub fn dim(&self) -> usize {
        self.scaler.dim()
    }

    /// Mixture score in the reduced space, plus the residual log-density
    /// when enabled.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let z = self.scaler.apply(x)?;
        let Some(p) = &self.pca else {
            return self.gmm.score(&z);
        };
        let s = self.gmm.score(&p.transform(&z)?)?;
        Ok(s + self
            .residual_variance
            .map_or(Ok(0.0), |v| p.residual(&z).map(|r| residual_log_density(r, p.dim() - p.n_components(), v)))?)
    }

    pub fn classify(&self, x: &[f64]) -> Result<AnomalyDecision> {
        let score = self.score(x)?;
        Ok(AnomalyDecision {
            score,
            accept: score >= self.threshold.threshold,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rng: &mut seed::Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    fn blobs(s: u64, per: usize) -> (Matrix, [[f64; 2]; 2]) {
        let centers = [[-5.0, 0.0], [5.0, 2.0]];
        let mut rng = seed::rng(s);
        let mut rows = Vec::new();
        for c in &centers {
            for _ in 0..per {
                rows.push(vec![c[0] + normal(&mut rng), c[1] + normal(&mut rng)]);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), centers)
    }

    #[test]
    fn single_component_is_closed_form() {
        let (x, _) = blobs(1, 50);
        let g = gmm_fit(&x, &GmmOptions { k: 1, reg_eps: 0.01, ..Default::default() }).unwrap();
        let mean = x.column_means();
        let mut cov = x.covariance(0).unwrap();
        for a in 0..2 {
            cov[(a, a)] += 0.01;
        }
        assert_eq!(g.phi, vec![1.0]);
        for (a, b) in g.mu[0].iter().zip(&mean) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(g.sigma[0].max_abs_diff(&cov) < 1e-9);
    }

    #[test]
    fn two_blobs_recovered() {
        let (x, centers) = blobs(2, 200);
        let g = gmm_fit(&x, &GmmOptions { k: 2, reg_eps: 0.0, ..Default::default() }).unwrap();
        let se = 3.0 / (200f64).sqrt();
        for c in &centers {
            let hit = g.mu.iter().any(|m| (m[0] - c[0]).abs() < se && (m[1] - c[1]).abs() < se);
            assert!(hit, "{:?} not near {:?}", g.mu, c);
        }
    }

    #[test]
    fn trace_non_decreasing_and_weights_normalize() {
        for s in 0..5 {
            let (x, _) = blobs(10 + s, 40);
            for reg in [0.0, 0.05] {
                let g = gmm_fit(&x, &GmmOptions { k: 3, reg_eps: reg, seed: s, ..Default::default() }).unwrap();
                for w in g.log_likelihood_trace.windows(2) {
                    assert!(w[1] >= w[0] - 1e-9, "{w:?}");
                }
                assert!((g.phi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                let (next, resp) = em_iteration(&g, &x).unwrap();
                for r in resp.iter_rows() {
                    assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
                for j in 0..3 {
                    let mean_q = resp.column(j).iter().sum::<f64>() / x.rows() as f64;
                    assert!((next.phi[j] - mean_q).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn regularized_covariances_bounded_below() {
        let (x, _) = blobs(4, 30);
        let g = gmm_fit(&x, &GmmOptions { k: 3, reg_eps: 0.3, ..Default::default() }).unwrap();
        for s in &g.sigma {
            let eig = crate::linalg::symmetric_eigen(s).unwrap();
            assert!(eig.values.iter().all(|&v| v >= 0.3 - 1e-12));
        }
    }

    #[test]
    fn singular_data_without_regularizer_fails() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let err = gmm_fit(&x, &GmmOptions { k: 1, reg_eps: 0.0, ..Default::default() }).unwrap_err();
        assert!(err.to_string().contains("reg_eps"), "{err}");
        assert!(gmm_fit(&x, &GmmOptions { k: 11, ..Default::default() }).is_err());
    }

    #[test]
    fn seeded_fit_is_deterministic() {
        let (x, _) = blobs(5, 30);
        let o = GmmOptions { seed: 9, ..Default::default() };
        assert_eq!(gmm_fit(&x, &o).unwrap(), gmm_fit(&x, &o).unwrap());
    }

    #[test]
    fn unit_gaussian_score_difference() {
        let g = GmmModel::from_parts(vec![1.0], vec![vec![0.0]], vec![Matrix::identity(1)], 0.0);
        let d = g.score(&[0.0]).unwrap() - g.score(&[1.0]).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
        assert!(g.score(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn score_peaks_at_heaviest_mean() {
        let (x, _) = blobs(6, 50);
        let g = gmm_fit(&x, &GmmOptions { k: 1, reg_eps: 0.01, ..Default::default() }).unwrap();
        let at_mean = g.score(&g.mu[0]).unwrap();
        let eig = crate::linalg::symmetric_eigen(&g.sigma[0]).unwrap();
        for a in 0..2 {
            let dir = eig.vectors.column(a);
            let mut prev = at_mean;
            for step in 1..20 {
                let p: Vec<f64> = g.mu[0].iter().zip(&dir).map(|(m, v)| m + 0.3 * step as f64 * v).collect();
                let s = g.score(&p).unwrap();
                assert!(s < prev);
                prev = s;
            }
        }
    }

    #[test]
    fn quantile_calibration() {
        let scores: Vec<f64> = (0..40).map(|i| (i * 7 % 40) as f64).collect();
        assert_eq!(calibrate_threshold(&scores, 0.0).unwrap().threshold, 0.0);
        let med = calibrate_threshold(&scores, 0.5).unwrap().threshold;
        let below = scores.iter().filter(|&&s| s < med).count();
        assert!((below as i64 - 20).abs() <= 1);
        assert!(calibrate_threshold(&scores[..10], 0.05).is_err());
        assert!(calibrate_threshold(&scores, 1.0).is_err());
    }

    #[test]
    fn classify_tie_and_far_points() {
        let g = GmmModel::from_parts(vec![1.0], vec![vec![0.0, 0.0]], vec![Matrix::identity(2)], 0.0);
        let at = g.score(&[0.5, 0.5]).unwrap();
        let thr = AnomalyThreshold { threshold: at, quantile: 0.05, n_scores: 20 };
        assert!(classify_anomaly(&g, &thr, &[0.5, 0.5]).unwrap().accept);
        assert!(classify_anomaly(&g, &thr, &[0.0, 0.0]).unwrap().accept);
        assert!(!classify_anomaly(&g, &thr, &[100.0, 0.0]).unwrap().accept);
    }

    #[test]
    fn detector_separates_shifted_population() {
        let mut rng = seed::rng(31);
        let d = 12;
        let basis: Vec<f64> = (0..d).map(|j| 1.0 + j as f64 * 0.1).collect();
        let sample = |rng: &mut seed::Rng, shift: f64| -> Vec<f64> {
            let t = normal(rng);
            basis.iter().enumerate().map(|(j, b)| b * t + 0.3 * normal(rng) + if j % 3 == 0 { shift } else { 0.0 }).collect()
        };
        let train: Vec<Vec<f64>> = (0..120).map(|_| sample(&mut rng, 0.0)).collect();
        let det = AnomalyDetector::fit(&Matrix::from_rows(&train).unwrap(), &DetectorOptions::default()).unwrap();
        let genuine = (0..200).filter(|_| det.classify(&sample(&mut rng, 0.0)).unwrap().accept).count();
        let impostor = (0..200).filter(|_| !det.classify(&sample(&mut rng, 1.5)).unwrap().accept).count();
        assert!(genuine >= 170, "{genuine}");
        assert!(impostor >= 190, "{impostor}");
        let again = AnomalyDetector::fit(&Matrix::from_rows(&train).unwrap(), &DetectorOptions::default()).unwrap();
        assert_eq!(det, again);
    }

    #[test]
    fn serde_round_trip_keeps_scores() {
        let (x, _) = blobs(7, 30);
        let g = gmm_fit(&x, &GmmOptions::default()).unwrap();
        let back: GmmModel = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(g, back);
        for r in x.iter_rows() {
            assert_eq!(g.score(r).unwrap().to_bits(), back.score(r).unwrap().to_bits());
        }
    }
}
