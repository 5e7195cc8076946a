//! Feature selection by recursive elimination with cross-validation, and PCA.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::evaluation::stratified_folds;
use crate::featurization::{FeatureDescriptor, LabeledDataset, Schema};
use crate::linalg::{dot, symmetric_eigen, Matrix};
use crate::svm::{self, KernelSpec, SmoOptions};
use crate::{par, Error, Result};

/// Selected schema positions plus the elimination trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMask {
    /// Ascending schema indices.
    pub selected: Vec<usize>,
    /// Every schema index, most important first: the last feature left
    /// standing, then the others in reverse order of elimination.
    #[serde(default)]
    pub ranking: Vec<usize>,
    /// `(active feature count, CV accuracy)` per elimination round.
    pub score_trace: Vec<(usize, f64)>,
}

impl FeatureMask {
    pub fn validate(&self, schema_len: usize) -> Result<()> {
        if self.selected.is_empty() {
            return Err(Error::invalid("feature mask selects nothing"));
        }
        let unique: BTreeSet<_> = self.selected.iter().collect();
        if unique.len() != self.selected.len() {
            return Err(Error::invalid("feature mask has duplicate indices"));
        }
        if let Some(&bad) = self.selected.iter().find(|&&i| i >= schema_len) {
            return Err(Error::invalid(format!("mask index {bad} outside schema of {schema_len}")));
        }
        Ok(())
    }

    pub fn apply(&self, dataset: &LabeledDataset) -> Result<LabeledDataset> {
        self.validate(dataset.dim())?;
        dataset.select_features(&self.selected)
    }

    pub fn apply_vector(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.validate(x.len())?;
        Ok(self.selected.iter().map(|&i| x[i]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfecvOptions {
    pub folds: usize,
    /// Features dropped per round; `None` means 5% of the active set
    /// (at least one), and one at a time below 50 active features.
    pub step: Option<usize>,
    /// Soft-margin constant of the ranking SVM.
    pub c: f64,
    pub seed: u64,
}

impl Default for RfecvOptions {
    fn default() -> Self {
        Self {
            folds: 10,
            step: None,
            c: 1.0,
            seed: 0,
        }
    }
}

const FINE_STEP_BELOW: usize = 50;

fn step_size(opts: &RfecvOptions, active: usize) -> usize {
    let s = match opts.step {
        Some(s) => s,
        None if active < FINE_STEP_BELOW => 1,
        None => (active / 20).max(1),
    };
    s.clamp(1, active - 1)
}

/// Trains the ranking SVM on `rows` and returns the summed squared weight
/// of each column of `x`.
fn feature_weights(x: &Matrix, class_idx: &[usize], k: usize, rows: &[usize], c: f64) -> Result<Vec<f64>> {
    let gram = KernelSpec::Linear.gram(&x.select_rows(rows));
    let local: Vec<usize> = (0..rows.len()).collect();
    let sub_x = x.select_rows(rows);
    let machines: Vec<usize> = if k == 2 { vec![1] } else { (0..k).collect() };
    let mut w2 = vec![0.0; x.cols()];
    for m in machines {
        let positive: Vec<bool> = rows.iter().map(|&r| class_idx[r] == m).collect();
        let machine = svm::train_machine(&sub_x, &gram, &local, &positive, c, &SmoOptions::default())?;
        for (acc, w) in w2.iter_mut().zip(machine.linear_weights(x.cols())) {
            *acc += w * w;
        }
    }
    Ok(w2)
}

fn fold_accuracy(x: &Matrix, class_idx: &[usize], k: usize, train: &[usize], test: &[usize], c: f64) -> Result<f64> {
    let sub_x = x.select_rows(train);
    let gram = KernelSpec::Linear.gram(&sub_x);
    let local: Vec<usize> = (0..train.len()).collect();
    let machines: Vec<usize> = if k == 2 { vec![1] } else { (0..k).collect() };
    let trained = machines
        .iter()
        .map(|&m| {
            let positive: Vec<bool> = train.iter().map(|&r| class_idx[r] == m).collect();
            svm::train_machine(&sub_x, &gram, &local, &positive, c, &SmoOptions::default())
        })
        .collect::<Result<Vec<_>>>()?;
    let hits = test
        .iter()
        .filter(|&&r| {
            let v: Vec<f64> = trained.iter().map(|m| m.decision(&KernelSpec::Linear, x.row(r))).collect();
            let pred = if k == 2 { usize::from(v[0] >= 0.0) } else { svm::argmax_lowest(&v) };
            pred == class_idx[r]
        })
        .count();
    Ok(hits as f64 / test.len() as f64)
}

fn looks_normalized(x: &Matrix) -> bool {
    let n = x.rows() as f64;
    x.column_means().iter().enumerate().all(|(j, &m)| {
        let var = x.iter_rows().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / n;
        m.abs() < 1e-6 && (var < 1e-12 || (var - 1.0).abs() < 1e-6)
    })
}

/// Backward elimination ranked by linear-SVM weights, scored by stratified
/// k-fold accuracy. Returns the active set with the best score, preferring
/// fewer features on ties.
pub fn rfecv(dataset: &LabeledDataset, opts: &RfecvOptions) -> Result<FeatureMask> {
    if opts.folds < 2 {
        return Err(Error::invalid("RFECV needs at least 2 folds"));
    }
    if dataset.len() < opts.folds {
        return Err(Error::invalid(format!(
            "RFECV with {} folds needs at least that many rows, got {}",
            opts.folds,
            dataset.len()
        )));
    }
    let classes = dataset.classes();
    if classes.len() < 2 {
        return Err(Error::invalid("RFECV needs at least 2 classes"));
    }
    if dataset.scaler.is_none() && !looks_normalized(&dataset.features) {
        log::warn!("RFECV input does not look normalized; linear-SVM weights may rank by scale");
    }
    let k = classes.len();
    let class_idx = dataset.class_indices(&classes)?;
    let folds = stratified_folds(&dataset.labels, opts.folds, opts.seed)?;
    let splits: Vec<(Vec<usize>, Vec<usize>)> = folds
        .iter()
        .enumerate()
        .map(|(f, test)| {
            let train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            (train, test.clone())
        })
        .collect();
    for (train, _) in &splits {
        let present: BTreeSet<usize> = train.iter().map(|&r| class_idx[r]).collect();
        if present.len() < 2 {
            return Err(Error::invalid("a cross-validation training fold holds a single class; re-stratify"));
        }
    }
    let all_rows: Vec<usize> = (0..dataset.len()).collect();
    let mut active: Vec<usize> = (0..dataset.dim()).collect();
    let mut trace = Vec::new();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut eliminated = Vec::with_capacity(dataset.dim());
    loop {
        let x = dataset.features.select_columns(&active);
        let accs = par::try_map_range(splits.len(), |f| {
            fold_accuracy(&x, &class_idx, k, &splits[f].0, &splits[f].1, opts.c)
        })?;
        let acc = accs.iter().sum::<f64>() / accs.len() as f64;
        trace.push((active.len(), acc));
        if best.as_ref().is_none_or(|(b, _)| acc >= *b) {
            best = Some((acc, active.clone()));
        }
        if active.len() == 1 {
            break;
        }
        let w2 = feature_weights(&x, &class_idx, k, &all_rows, opts.c)?;
        let drop = step_size(opts, active.len());
        let mut order: Vec<usize> = (0..active.len()).collect();
        // lowest weight first; earlier schema position breaks ties
        order.sort_by(|&a, &b| w2[a].total_cmp(&w2[b]).then(a.cmp(&b)));
        eliminated.extend(order[..drop].iter().map(|&p| active[p]));
        let removed: BTreeSet<usize> = order[..drop].iter().copied().collect();
        active = active
            .iter()
            .enumerate()
            .filter(|(p, _)| !removed.contains(p))
            .map(|(_, &f)| f)
            .collect();
    }
    let (_, selected) = best.expect("at least one round ran");
    eliminated.extend(active);
    eliminated.reverse();
    Ok(FeatureMask {
        selected,
        ranking: eliminated,
        score_trace: trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `q × d`, one orthonormal direction per row.
    pub components: Matrix,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

/// Relative eigenvalue cutoff below which a direction counts as null.
const RANK_TOL: f64 = 1e-10;

/// Principal components covering at least `variance_target` of the total
/// variance, capped at the numerical rank. Uses the `m × m` Gram matrix
/// when there are fewer rows than features.
pub fn pca_fit(x: &Matrix, variance_target: f64) -> Result<PcaModel> {
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::invalid(format!("variance target must be in (0, 1], got {variance_target}")));
    }
    let (m, d) = (x.rows(), x.cols());
    if m < 2 {
        return Err(Error::invalid("PCA needs at least 2 rows"));
    }
    let mean = x.column_means();
    let mut centered = x.clone();
    for i in 0..m {
        for (v, mu) in centered.row_mut(i).iter_mut().zip(&mean) {
            *v -= mu;
        }
    }
    let denom = (m - 1) as f64;
    let (values, directions) = if d <= m {
        let cov = x.covariance(1)?;
        let eig = symmetric_eigen(&cov)?;
        let dirs: Vec<Vec<f64>> = (0..d).map(|c| eig.vectors.column(c)).collect();
        (eig.values, dirs)
    } else {
        let rows: Vec<&[f64]> = centered.iter_rows().collect();
        let gram = Matrix::from_vec(
            m,
            m,
            (0..m * m).map(|t| dot(rows[t / m], rows[t % m]) / denom).collect(),
        )?;
        let eig = symmetric_eigen(&gram)?;
        let dirs = (0..m)
            .map(|c| {
                let v = eig.vectors.column(c);
                let mut u = vec![0.0; d];
                for (r, &vi) in rows.iter().zip(&v) {
                    for (uj, &xj) in u.iter_mut().zip(r.iter()) {
                        *uj += vi * xj;
                    }
                }
                u
            })
            .collect();
        (eig.values, dirs)
    };
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let top = values.first().copied().unwrap_or(0.0);
    if !(total > 0.0) {
        return Err(Error::invalid("PCA input has zero variance"));
    }
    let rank = values.iter().take_while(|&&v| v > RANK_TOL * top).count();
    let mut q = 0;
    let mut cum = 0.0;
    while q < rank {
        cum += values[q] / total;
        q += 1;
        if cum >= variance_target - 1e-12 {
            break;
        }
    }
    let mut comps: Vec<Vec<f64>> = Vec::with_capacity(q);
    for mut u in directions.into_iter().take(q) {
        // modified Gram-Schmidt keeps rows orthonormal to machine precision
        for prev in &comps {
            let p = dot(&u, prev);
            for (a, b) in u.iter_mut().zip(prev) {
                *a -= p * b;
            }
        }
        let n = dot(&u, &u).sqrt();
        u.iter_mut().for_each(|v| *v /= n);
        // sign convention: largest-magnitude entry positive
        let pivot = u.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        if pivot < 0.0 {
            u.iter_mut().for_each(|v| *v = -*v);
        }
        comps.push(u);
    }
    let explained_variance: Vec<f64> = values[..q].to_vec();
    let explained_variance_ratio = explained_variance.iter().map(|v| v / total).collect();
    Ok(PcaModel {
        mean,
        components: Matrix::from_rows(&comps)?,
        explained_variance,
        explained_variance_ratio,
    })
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.rows()
    }

    /// `components · (x − mean)`.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let c: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self.components.iter_rows().map(|r| dot(r, &c)).collect())
    }

    pub fn transform_matrix(&self, x: &Matrix) -> Result<Matrix> {
        let rows = x.iter_rows().map(|r| self.transform(r)).collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)
    }

    /// `mean + componentsᵀ · z`.
    pub fn inverse_transform(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.n_components() {
            return Err(Error::DimensionMismatch { expected: self.n_components(), got: z.len() });
        }
        let mut x = self.mean.clone();
        for (r, &zi) in self.components.iter_rows().zip(z) {
            for (xj, &cj) in x.iter_mut().zip(r) {
                *xj += zi * cj;
            }
        }
        Ok(x)
    }

    /// Squared distance between `x` and its projection onto the subspace.
    pub fn residual(&self, x: &[f64]) -> Result<f64> {
        let back = self.inverse_transform(&self.transform(x)?)?;
        Ok(crate::linalg::squared_distance(x, &back))
    }
}

pub fn pca_transform(model: &PcaModel, x: &[f64]) -> Result<Vec<f64>> {
    model.transform(x)
}

/// Selection counts over window pixels, summed across frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub window_n: usize,
    /// `window_n × window_n`, row-major.
    pub counts: Vec<Vec<usize>>,
    /// Selected velocity and duration features.
    pub side: Vec<FeatureDescriptor>,
}

impl Heatmap {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum::<usize>() + self.side.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.counts {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn heatmap_export(mask: &FeatureMask, schema: &Schema) -> Result<Heatmap> {
    mask.validate(schema.len())?;
    let n = schema.config.window_n;
    let mut counts = vec![vec![0; n]; n];
    let mut side = Vec::new();
    for &i in &mask.selected {
        match schema.descriptors[i] {
            FeatureDescriptor::Pressure { row, col, .. } => counts[row][col] += 1,
            other => side.push(other),
        }
    }
    Ok(Heatmap {
        window_n: n,
        counts,
        side,
    })
}
