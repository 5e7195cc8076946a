//! Train/test protocol, metrics, C/γ grid search and the results table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::anomaly::{AnomalyDetector, DetectorOptions};
use crate::capsim::{self, GestureKind, RawRecording, SensorConfig, CALIBRATION_FRAMES};
use crate::dimreduce::{rfecv, RfecvOptions};
use crate::featurization::{normalize_fit, FeatureConfig, LabeledDataset};
use crate::linmodels::{logreg_train, softmax_train, TrainOptions};
use crate::segmentation;
use crate::svm::{self, solve_dual_from, KernelSpec, SmoOptions, SubGram};
use crate::{par, seed, Error, Result};

/// Row indices of a stratified split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per class, shuffles and keeps `round(fraction·n_c)` rows for training,
/// at least one row on each side.
pub fn split_indices(labels: &[String], train_fraction: f64, seed_: u64) -> Result<SplitIndices> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction must be in (0, 1), got {train_fraction}")));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = seed::rng(seed_);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut rows) in by_class {
        if rows.len() < 2 {
            return Err(Error::invalid(format!("class {class:?} has fewer than 2 samples")));
        }
        rows.shuffle(&mut rng);
        let n_train = ((train_fraction * rows.len() as f64).round() as usize).clamp(1, rows.len() - 1);
        train.extend_from_slice(&rows[..n_train]);
        test.extend_from_slice(&rows[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

pub fn split(dataset: &LabeledDataset, train_fraction: f64, seed_: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let s = split_indices(&dataset.labels, train_fraction, seed_)?;
    Ok((dataset.subset(&s.train), dataset.subset(&s.test)))
}

/// `k` disjoint test folds covering every row, each class dealt round-robin
/// after a seeded shuffle.
pub fn stratified_folds(labels: &[String], k: usize, seed_: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    if labels.len() < k {
        return Err(Error::invalid(format!("{} rows cannot fill {k} folds", labels.len())));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = seed::rng(seed_);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (_, mut rows) in by_class {
        rows.shuffle(&mut rng);
        for r in rows {
            folds[next].push(r);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// `(train, test)` row lists for each fold.
pub fn fold_splits(folds: &[Vec<usize>]) -> Vec<(Vec<usize>, Vec<usize>)> {
    (0..folds.len())
        .map(|f| {
            let mut train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            train.sort_unstable();
            (train, folds[f].clone())
        })
        .collect()
}

/// Rows are true classes, columns predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("true\\pred,{}\n", self.classes.join(","));
        for (c, row) in self.classes.iter().zip(&self.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "{c},{}", cells.join(","));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
    /// Set when some precision, recall or F1 had a zero denominator and was
    /// reported as 0.
    pub zero_division: bool,
}

/// Standard classification metrics over the union of observed labels.
pub fn score(predictions: &[String], truth: &[String]) -> Result<Scores> {
    if predictions.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: predictions.len() });
    }
    if truth.is_empty() {
        return Err(Error::invalid("nothing to score"));
    }
    let classes: Vec<String> = truth
        .iter()
        .chain(predictions)
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pos = |l: &String| classes.binary_search(l).expect("class present");
    let k = classes.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (p, t) in predictions.iter().zip(truth) {
        counts[pos(t)][pos(p)] += 1;
    }
    let mut zero_division = false;
    let mut ratio = |num: f64, den: f64| {
        if den == 0.0 {
            zero_division = true;
            0.0
        } else {
            num / den
        }
    };
    let mut precision = Vec::with_capacity(k);
    let mut recall = Vec::with_capacity(k);
    let mut f1 = Vec::with_capacity(k);
    for (c, row) in counts.iter().enumerate() {
        let tp = row[c] as f64;
        let predicted: f64 = counts.iter().map(|r| r[c] as f64).sum();
        let actual: f64 = row.iter().map(|&v| v as f64).sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        let f = ratio(2.0 * p * r, p + r);
        precision.push(p);
        recall.push(r);
        f1.push(f);
    }
    let confusion = ConfusionMatrix { classes, counts };
    Ok(Scores {
        accuracy: confusion.accuracy(),
        macro_f1: f1.iter().sum::<f64>() / k as f64,
        precision,
        recall,
        f1,
        confusion,
        zero_division,
    })
}

/// `10^lo, 10^(lo+1), …, 10^hi`.
pub fn log_axis(lo_exp: i32, hi_exp: i32) -> Vec<f64> {
    (lo_exp..=hi_exp).map(|e| 10f64.powi(e)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxes {
    pub c: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Default for GridAxes {
    /// Decade steps over C ∈ [1e-3, 1e10] and γ ∈ [1e-15, 1e3].
    fn default() -> Self {
        Self {
            c: log_axis(-3, 10),
            gamma: log_axis(-15, 3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    pub folds: usize,
    pub seed: u64,
    pub smo: SmoOptions,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            smo: SmoOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub c_values: Vec<f64>,
    pub gamma_values: Vec<f64>,
    /// Mean CV accuracy, indexed `[c][gamma]`.
    pub scores: Vec<Vec<f64>>,
    /// `(c index, gamma index)` of the best cell.
    pub best: (usize, usize),
    pub folds: usize,
    /// Solver runs that hit the iteration cap.
    pub unconverged: usize,
}

impl GridSearchResult {
    pub fn best_c(&self) -> f64 {
        self.c_values[self.best.0]
    }

    pub fn best_gamma(&self) -> f64 {
        self.gamma_values[self.best.1]
    }

    pub fn best_score(&self) -> f64 {
        self.scores[self.best.0][self.best.1]
    }

    /// Heatmap-ready CSV: one row per C, one column per γ.
    pub fn to_csv(&self) -> String {
        let head: Vec<String> = self.gamma_values.iter().map(|g| format!("{g:e}")).collect();
        let mut out = format!("C\\gamma,{}\n", head.join(","));
        for (c, row) in self.c_values.iter().zip(&self.scores) {
            let cells: Vec<String> = row.iter().map(|s| format!("{s:.6}")).collect();
            let _ = writeln!(out, "{c:e},{}", cells.join(","));
        }
        out
    }
}

fn check_axis(name: &str, axis: &[f64]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::invalid(format!("{name} axis is empty")));
    }
    if axis.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!("{name} axis values must be positive")));
    }
    if axis.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!("{name} axis must be strictly increasing")));
    }
    Ok(())
}

/// Stratified k-fold CV accuracy of an RBF SVM over every (C, γ) cell.
///
/// Distances are computed once; each γ maps them to a kernel matrix shared by
/// all folds, classes and C values, and solutions along the C axis warm-start
/// from the previous C. The best cell maximizes accuracy, ties going to the
/// smaller C and then the smaller γ.
pub fn grid_search(dataset: &LabeledDataset, axes: &GridAxes, opts: &GridOptions) -> Result<GridSearchResult> {
    check_axis("C", &axes.c)?;
    check_axis("gamma", &axes.gamma)?;
    let classes = dataset.classes();
    let k = classes.len();
    if k < 2 {
        return Err(Error::invalid("grid search needs at least 2 classes"));
    }
    let class_idx = dataset.class_indices(&classes)?;
    let splits = fold_splits(&stratified_folds(&dataset.labels, opts.folds, opts.seed)?);
    for (train, _) in &splits {
        if train.iter().map(|&r| class_idx[r]).collect::<BTreeSet<_>>().len() < k {
            return Err(Error::invalid("a training fold is missing a class; use fewer folds"));
        }
    }
    let machines: Vec<usize> = if k == 2 { vec![1] } else { (0..k).collect() };
    let dist = svm::squared_distances(&dataset.features);
    let per_gamma = par::try_map_range(axes.gamma.len(), |g| {
        let gamma = axes.gamma[g];
        let gram = dist.map(|d| (-gamma * d).exp());
        let mut correct = vec![vec![0usize; splits.len()]; axes.c.len()];
        let mut unconverged = 0;
        for (f, (train, test)) in splits.iter().enumerate() {
            let view = SubGram { kernel: &gram, rows: train };
            // decision[c][machine][test row]
            let mut decision = vec![vec![Vec::new(); machines.len()]; axes.c.len()];
            for (mi, &m) in machines.iter().enumerate() {
                let y: Vec<f64> = train.iter().map(|&r| if class_idx[r] == m { 1.0 } else { -1.0 }).collect();
                let mut warm: Option<Vec<f64>> = None;
                for (ci, &c) in axes.c.iter().enumerate() {
                    let sol = solve_dual_from(&view, &y, c, &opts.smo, warm.as_deref())?;
                    unconverged += usize::from(!sol.converged);
                    decision[ci][mi] = test
                        .iter()
                        .map(|&t| {
                            let row = gram.row(t);
                            train
                                .iter()
                                .zip(&sol.alpha)
                                .zip(&y)
                                .filter(|((_, a), _)| **a > 0.0)
                                .map(|((&s, a), yy)| a * yy * row[s])
                                .sum::<f64>()
                                + sol.bias
                        })
                        .collect();
                    warm = Some(sol.alpha);
                }
            }
            for ci in 0..axes.c.len() {
                correct[ci][f] = test
                    .iter()
                    .enumerate()
                    .filter(|&(ti, &t)| {
                        let pred = if k == 2 {
                            usize::from(decision[ci][0][ti] >= 0.0)
                        } else {
                            let v: Vec<f64> = (0..machines.len()).map(|mi| decision[ci][mi][ti]).collect();
                            svm::argmax_lowest(&v)
                        };
                        pred == class_idx[t]
                    })
                    .count();
            }
        }
        let acc: Vec<f64> = correct
            .iter()
            .map(|per_fold| {
                per_fold
                    .iter()
                    .zip(&splits)
                    .map(|(&c, (_, test))| c as f64 / test.len() as f64)
                    .sum::<f64>()
                    / splits.len() as f64
            })
            .collect();
        Ok::<_, Error>((acc, unconverged))
    })?;
    let mut scores = vec![vec![0.0; axes.gamma.len()]; axes.c.len()];
    let mut unconverged = 0;
    for (g, (acc, u)) in per_gamma.into_iter().enumerate() {
        unconverged += u;
        for (ci, a) in acc.into_iter().enumerate() {
            scores[ci][g] = a;
        }
    }
    let mut best = (0, 0);
    for ci in 0..axes.c.len() {
        for g in 0..axes.gamma.len() {
            if scores[ci][g] > scores[best.0][best.1] {
                best = (ci, g);
            }
        }
    }
    Ok(GridSearchResult {
        c_values: axes.c.clone(),
        gamma_values: axes.gamma.clone(),
        scores,
        best,
        folds: splits.len(),
        unconverged,
    })
}

/// Segments a recording with a threshold calibrated on its lead-in frames,
/// labels events from the truth sidecar and featurizes them. Events that
/// overlap no annotated gesture are dropped.
pub fn recording_dataset(recording: &RawRecording, config: &FeatureConfig) -> Result<LabeledDataset> {
    let truth = recording
        .truth
        .as_ref()
        .ok_or_else(|| Error::invalid("recording has no truth annotations"))?;
    let lead = CALIBRATION_FRAMES.min(recording.frames.len());
    let threshold = segmentation::calibrate_threshold(&recording.frames[..lead])?;
    let mut events = segmentation::detect_events(recording, threshold)?;
    segmentation::label_events(&mut events, truth);
    let before = events.len();
    events.retain(|e| e.label.is_some());
    if events.len() < before {
        log::warn!("dropped {} events with no matching annotation", before - events.len());
    }
    LabeledDataset::from_events(&events, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3Config {
    pub seeds: Vec<u64>,
    pub users: usize,
    pub separation: f64,
    pub per_user: BTreeMap<GestureKind, usize>,
    pub sensor: SensorConfig,
    pub train_fraction: f64,
    pub logistic: TrainOptions,
    pub softmax: TrainOptions,
    pub grid: GridAxes,
    pub grid_folds: usize,
    pub detector: DetectorOptions,
    /// Feature selection before the SVM; `None` uses all features.
    pub rfecv: Option<RfecvOptions>,
}

impl Default for Table3Config {
    fn default() -> Self {
        let lin = TrainOptions {
            max_iter: 1000,
            ..TrainOptions::default()
        };
        Self {
            seeds: vec![1, 2, 3],
            users: 4,
            separation: 1.0,
            per_user: BTreeMap::from([
                (GestureKind::Tap, 200),
                (GestureKind::Circle, 100),
                (GestureKind::Random, 100),
            ]),
            sensor: SensorConfig::default(),
            train_fraction: 0.8,
            logistic: lin,
            softmax: lin,
            grid: GridAxes::default(),
            grid_folds: 5,
            detector: DetectorOptions::default(),
            rfecv: None,
        }
    }
}

pub const TABLE3_ROWS: [&str; 5] = [
    "Log Reg (Binary)",
    "Log Reg (Softmax)",
    "SVM",
    "Mult Gauss (pass)",
    "Mult Gauss (fail)",
];

/// Train and test figures for one model on one dataset; `None` is NA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Cell {
    pub train: Option<f64>,
    pub test: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRun {
    pub kind: GestureKind,
    pub samples: usize,
    pub classes: usize,
    /// One cell per entry of [`TABLE3_ROWS`].
    pub cells: Vec<Cell>,
    pub svm_c: f64,
    pub svm_gamma: f64,
    pub svm_features: usize,
    pub grid: GridSearchResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub datasets: Vec<DatasetRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3Report {
    pub runs: Vec<SeedRun>,
}

impl Table3Report {
    pub fn kinds(&self) -> Vec<GestureKind> {
        self.runs
            .first()
            .map(|r| r.datasets.iter().map(|d| d.kind).collect())
            .unwrap_or_default()
    }

    /// Seed-averaged cell for `row` on `kind`.
    pub fn mean_cell(&self, row: usize, kind: GestureKind) -> Cell {
        let cells: Vec<Cell> = self
            .runs
            .iter()
            .filter_map(|r| r.datasets.iter().find(|d| d.kind == kind))
            .map(|d| d.cells[row])
            .collect();
        let mean = |get: fn(&Cell) -> Option<f64>| -> Option<f64> {
            let v: Vec<f64> = cells.iter().filter_map(get).collect();
            (!v.is_empty() && v.len() == cells.len()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        Cell {
            train: mean(|c| c.train),
            test: mean(|c| c.test),
        }
    }

    fn fmt(v: Option<f64>) -> String {
        v.map_or_else(|| "NA".to_string(), |x| format!("{:.1}%", 100.0 * x))
    }

    pub fn to_markdown(&self) -> String {
        let kinds = self.kinds();
        let mut out = String::from("| Model |");
        for k in &kinds {
            let n = self.runs[0].datasets.iter().find(|d| d.kind == *k).map_or(0, |d| d.samples);
            let _ = write!(out, " {} (n={n}) Train | Test |", k.dataset_name());
        }
        out.push_str("\n|---|");
        out.push_str(&"---|---|".repeat(kinds.len()));
        out.push('\n');
        for (r, name) in TABLE3_ROWS.iter().enumerate() {
            let _ = write!(out, "| {name} |");
            for &k in &kinds {
                let c = self.mean_cell(r, k);
                let _ = write!(out, " {} | {} |", Self::fmt(c.train), Self::fmt(c.test));
            }
            out.push('\n');
        }
        let _ = writeln!(out, "\nAveraged over seeds {:?}.", self.runs.iter().map(|r| r.seed).collect::<Vec<_>>());
        out.push_str("\n| Seed | Dataset | C | gamma | CV accuracy | SVM features |\n|---|---|---|---|---|---|\n");
        for run in &self.runs {
            for d in &run.datasets {
                let _ = writeln!(
                    out,
                    "| {} | {} | {:e} | {:e} | {:.3} | {} |",
                    run.seed,
                    d.kind.dataset_name(),
                    d.svm_c,
                    d.svm_gamma,
                    d.grid.best_score(),
                    d.svm_features
                );
            }
        }
        out
    }

    /// Long-format CSV: `seed,dataset,model,train,test` with empty NA cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,dataset,model,train,test\n");
        let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        for run in &self.runs {
            for d in &run.datasets {
                for (name, c) in TABLE3_ROWS.iter().zip(&d.cells) {
                    let _ = writeln!(out, "{},{},{name},{},{}", run.seed, d.kind.dataset_name(), f(c.train), f(c.test));
                }
            }
        }
        out
    }
}

fn accuracy_of(pred: Vec<String>, truth: &[String]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}

fn run_dataset(kind: GestureKind, data: &LabeledDataset, cfg: &Table3Config, s: u64) -> Result<DatasetRun> {
    let classes = data.classes();
    let split_seed = seed::derive(s, &[kind.stream_id(), 1]);
    let sp = split_indices(&data.labels, cfg.train_fraction, split_seed)?;
    let (train_raw, test_raw) = (data.subset(&sp.train), data.subset(&sp.test));
    let (train, scaler) = normalize_fit(&train_raw)?;
    let mut test = test_raw.clone();
    test.features = scaler.apply_matrix(&test_raw.features)?;
    test.scaler = Some(scaler);
    let mut cells = vec![Cell::default(); TABLE3_ROWS.len()];

    // binary logistic on the first two users
    let pair: Vec<String> = classes[..2].to_vec();
    let keep = |d: &LabeledDataset| -> Vec<usize> { (0..d.len()).filter(|&i| pair.contains(&d.labels[i])).collect() };
    let (btr, bte) = (train.subset(&keep(&train)), test.subset(&keep(&test)));
    let lr = logreg_train(&btr, &cfg.logistic)?;
    let predict_lr = |d: &LabeledDataset| -> Result<Vec<String>> { d.features.iter_rows().map(|r| Ok(lr.predict(r)?.1)).collect() };
    cells[0] = Cell {
        train: Some(accuracy_of(predict_lr(&btr)?, &btr.labels)),
        test: Some(accuracy_of(predict_lr(&bte)?, &bte.labels)),
    };

    // softmax only where there are more than two users
    if classes.len() > 2 {
        let sm = softmax_train(&train, &cfg.softmax)?;
        let predict = |d: &LabeledDataset| -> Result<Vec<String>> { d.features.iter_rows().map(|r| Ok(sm.predict(r)?.1)).collect() };
        cells[1] = Cell {
            train: Some(accuracy_of(predict(&train)?, &train.labels)),
            test: Some(accuracy_of(predict(&test)?, &test.labels)),
        };
    }

    // SVM: optional selection, grid search, refit on the full training split
    let (svm_train, svm_test) = match &cfg.rfecv {
        Some(o) => {
            let mask = rfecv(&train, &RfecvOptions { seed: seed::derive(s, &[kind.stream_id(), 2]), ..*o })?;
            (mask.apply(&train)?, mask.apply(&test)?)
        }
        None => (train.clone(), test.clone()),
    };
    let grid = grid_search(
        &svm_train,
        &cfg.grid,
        &GridOptions {
            folds: cfg.grid_folds,
            seed: seed::derive(s, &[kind.stream_id(), 3]),
            smo: SmoOptions::default(),
        },
    )?;
    let kernel = KernelSpec::Rbf { gamma: grid.best_gamma() };
    let model = if classes.len() == 2 {
        svm::train_binary_dataset(&svm_train, grid.best_c(), &kernel, &SmoOptions::default())?
    } else {
        svm::one_vs_rest_train(&svm_train, grid.best_c(), &kernel, &SmoOptions::default())?
    };
    let predict_svm = |d: &LabeledDataset| -> Result<Vec<String>> { d.features.iter_rows().map(|r| Ok(model.predict(r)?.label)).collect() };
    cells[2] = Cell {
        train: Some(accuracy_of(predict_svm(&svm_train)?, &svm_train.labels)),
        test: Some(accuracy_of(predict_svm(&svm_test)?, &svm_test.labels)),
    };

    // one detector per genuine user, fitted on raw training features
    let mut pass_train = Vec::new();
    let mut pass_test = Vec::new();
    let mut reject = Vec::new();
    for (ui, user) in classes.iter().enumerate() {
        let rows = train_raw.rows_of(user);
        let detector = AnomalyDetector::fit(
            &train_raw.features.select_rows(&rows),
            &DetectorOptions {
                gmm: crate::anomaly::GmmOptions {
                    seed: seed::derive(s, &[kind.stream_id(), 4, ui as u64]),
                    ..cfg.detector.gmm
                },
                ..cfg.detector
            },
        )?;
        let rate = |d: &LabeledDataset, genuine: bool| -> Result<f64> {
            let idx: Vec<usize> = (0..d.len()).filter(|&i| (d.labels[i] == *user) == genuine).collect();
            let acc = idx
                .iter()
                .map(|&i| detector.classify(d.features.row(i)).map(|r| r.accept))
                .collect::<Result<Vec<_>>>()?;
            let n_acc = acc.iter().filter(|&&a| a).count() as f64;
            Ok(if genuine { n_acc } else { acc.len() as f64 - n_acc } / acc.len() as f64)
        };
        pass_train.push(rate(&train_raw, true)?);
        pass_test.push(rate(&test_raw, true)?);
        reject.push(rate(&test_raw, false)?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    cells[3] = Cell {
        train: Some(mean(&pass_train)),
        test: Some(mean(&pass_test)),
    };
    cells[4] = Cell {
        train: None,
        test: Some(mean(&reject)),
    };
    Ok(DatasetRun {
        kind,
        samples: data.len(),
        classes: classes.len(),
        cells,
        svm_c: grid.best_c(),
        svm_gamma: grid.best_gamma(),
        svm_features: svm_train.dim(),
        grid,
    })
}

/// Builds the per-kind datasets of one seeded synthetic corpus.
pub fn synthetic_datasets(cfg: &Table3Config, s: u64) -> Result<Vec<(GestureKind, LabeledDataset)>> {
    let profiles = capsim::synthetic_profiles(cfg.users, cfg.separation);
    let corpora = capsim::paper_shaped_corpora(&profiles, &cfg.per_user, &cfg.sensor, s)?;
    corpora
        .iter()
        .map(|(kind, rec)| Ok((*kind, recording_dataset(rec, &FeatureConfig::for_kind(*kind))?)))
        .collect()
}

/// Generates a corpus per seed and fills every cell of the results table.
pub fn run_table3(cfg: &Table3Config) -> Result<Table3Report> {
    if cfg.seeds.is_empty() {
        return Err(Error::invalid("no seeds given"));
    }
    let runs = cfg
        .seeds
        .iter()
        .map(|&s| {
            let datasets = synthetic_datasets(cfg, s)?
                .iter()
                .map(|(kind, ds)| run_dataset(*kind, ds, cfg, s))
                .collect::<Result<Vec<_>>>()?;
            Ok(SeedRun { seed: s, datasets })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table3Report { runs })
}
