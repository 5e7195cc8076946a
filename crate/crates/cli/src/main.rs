use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use touchguard_core::anomaly::AnomalyDetector;
use touchguard_core::capsim::{synth_corpus, synthetic_profiles, GestureKind, CALIBRATION_FRAMES};
use touchguard_core::dimreduce::{heatmap_export, pca_fit, rfecv, RfecvOptions};
use touchguard_core::evaluation::{self, grid_search, log_axis, GridAxes, GridOptions, Table3Config};
use touchguard_core::featurization::{normalize_fit, LabeledDataset, Schema};
use touchguard_core::linmodels::{logreg_train, softmax_train};
use touchguard_core::segmentation;
use touchguard_core::store::{self, Model, ModelBundle, RunConfig, Seeds};
use touchguard_core::svm::{one_vs_rest_train, KernelSpec};

#[derive(Parser)]
#[command(name = "touchguard", version, about = "Touch gesture authentication pipeline")]
struct Cli {
    /// Run configuration (TOML) supplying sensor, feature and model defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Logreg,
    Softmax,
    Svm,
    Gmm,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelKind {
    Linear,
    Poly,
    Rbf,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled recording.
    Gen {
        #[arg(long, default_value_t = 4)]
        users: usize,
        #[arg(long, default_value = "taps")]
        kind: GestureKind,
        /// Gestures per user.
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1.0)]
        separation: f64,
        /// `.tgrb` selects the packed binary encoding.
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a recording into gesture events.
    Segment {
        #[arg(long = "in")]
        input: PathBuf,
        /// A number, or `auto` to calibrate on the leading noise frames.
        #[arg(long, default_value = "auto")]
        threshold: String,
        #[arg(long, default_value_t = segmentation::DEFAULT_MIN_EVENT_FRAMES)]
        min_frames: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn labeled events into a feature dataset.
    Featurize {
        /// Feature preset: taps, circles or random.
        #[arg(long = "features", default_value = "taps")]
        features: GestureKind,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stratified train/test split.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        fraction: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Recursive feature elimination with cross-validation.
    Select {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long)]
        step: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a PCA model on a dataset.
    Pca {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        variance: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-pixel selection counts of a mask as CSV.
    Heatmap {
        #[arg(long)]
        mask: PathBuf,
        /// Feature preset the mask was made for.
        #[arg(long = "features", default_value = "taps")]
        features: GestureKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model.
    Train {
        #[arg(long, value_enum)]
        model: ModelKind,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Genuine user for `gmm`.
        #[arg(long)]
        user: Option<String>,
        #[arg(long, value_enum, default_value = "rbf")]
        kernel: KernelKind,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 3)]
        degree: u32,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a model on a test dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Confusion matrix CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Cross-validated (C, gamma) grid for the RBF SVM.
    Grid {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Decade exponents `lo:hi` for C.
        #[arg(long, default_value = "-3:10", allow_hyphen_values = true)]
        c_range: String,
        #[arg(long, default_value = "-15:3", allow_hyphen_values = true)]
        gamma_range: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train/test accuracy table over synthetic corpora.
    Report {
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        taps: usize,
        #[arg(long, default_value_t = 100)]
        circles: usize,
        #[arg(long, default_value_t = 100)]
        random: usize,
    },
    /// Run the enrollment and authentication service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        /// Service configuration (TOML); defaults to $TOUCHGUARD_CONFIG.
        #[arg(long)]
        service_config: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", describe(&e));
        std::process::exit(1);
    }
}

fn write_text(path: &Path, text: impl AsRef<str>) -> Result<()> {
    Ok(store::write_atomic(path, text.as_ref().as_bytes())?)
}

/// Joins the error chain, skipping causes a parent message already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.ends_with(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => store::load_run_config(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(RunConfig::with_seeds(Seeds { corpus: 0, split: 0, model: 0 })),
    }
}

fn exponents(range: &str) -> Result<Vec<f64>> {
    let (lo, hi) = range.split_once(':').context("range must look like lo:hi")?;
    let (lo, hi): (i32, i32) = (lo.trim().parse()?, hi.trim().parse()?);
    if lo > hi {
        bail!("empty range {range}");
    }
    Ok(log_axis(lo, hi))
}

fn normalized(ds: &LabeledDataset) -> Result<LabeledDataset> {
    if ds.scaler.is_some() {
        bail!("dataset is already normalized; pass raw features");
    }
    Ok(normalize_fit(ds)?.0)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = run_config(cli.config.as_deref())?;
    match cli.command {
        Command::Gen { users, kind, count, seed, separation, out } => {
            let profiles = synthetic_profiles(users, separation);
            let counts = BTreeMap::from([(kind, count)]);
            let rec = synth_corpus(&profiles, &counts, &cfg.sensor, seed.unwrap_or(cfg.seeds.corpus))?;
            store::save_recording(&out, &rec)?;
            println!("wrote {} frames, {} gestures to {}", rec.frames.len(), users * count, out.display());
        }
        Command::Segment { input, threshold, min_frames, out } => {
            let rec = store::load_recording(&input)?;
            let threshold = if threshold == "auto" {
                segmentation::calibrate_threshold(&rec.frames[..CALIBRATION_FRAMES.min(rec.frames.len())])?
            } else {
                threshold.parse().context("threshold must be a number or auto")?
            };
            let mut events = segmentation::detect_events_with(&rec, threshold, min_frames)?;
            if let Some(truth) = &rec.truth {
                segmentation::label_events(&mut events, truth);
            }
            store::save_events(&out, &events, threshold)?;
            println!("threshold {threshold:.6}: {} events", events.len());
        }
        Command::Featurize { features, input, out } => {
            let mut events = store::load_events(&input)?;
            let before = events.len();
            events.retain(|e| e.label.is_some());
            if events.len() < before {
                log::warn!("dropped {} unlabeled events", before - events.len());
            }
            let ds = LabeledDataset::from_events(&events, &cfg.features.for_kind(features))?;
            store::save_dataset(&out, &ds)?;
            println!("{} rows x {} features", ds.len(), ds.dim());
        }
        Command::Split { input, fraction, seed, train, test } => {
            let ds = store::load_dataset(&input)?;
            let (a, b) = evaluation::split(&ds, fraction, seed.unwrap_or(cfg.seeds.split))?;
            store::save_dataset(&train, &a)?;
            store::save_dataset(&test, &b)?;
            println!("train {} / test {}", a.len(), b.len());
        }
        Command::Select { input, folds, step, c, seed, out } => {
            let ds = store::load_dataset(&input)?;
            let opts = RfecvOptions { folds, step, c, seed: seed.unwrap_or(cfg.seeds.model) };
            let mask = rfecv(&normalized(&ds)?, &opts)?;
            store::save_mask(&out, &mask, Some(&ds.schema))?;
            println!("kept {} of {} features", mask.selected.len(), ds.dim());
        }
        Command::Pca { input, variance, out } => {
            let ds = store::load_dataset(&input)?;
            let (z, scaler) = normalize_fit(&ds)?;
            let model = pca_fit(&z.features, variance)?;
            println!("{} components keep {:.4} of the variance", model.n_components(), model.explained_variance_ratio.iter().sum::<f64>());
            let mut bundle = ModelBundle::new(Model::Pca(model));
            bundle.scaler = Some(scaler);
            bundle.gesture_kind = ds.kind;
            bundle.feature_config = Some(ds.schema.config);
            store::save_model(&out, &bundle, Some(&ds.schema))?;
        }
        Command::Heatmap { mask, features, out } => {
            let (mask, hash) = store::load_mask(&mask)?;
            let schema = Schema::for_config(cfg.features.for_kind(features));
            if hash.as_ref().is_some_and(|h| *h != schema.id()) {
                bail!("mask was made for a different feature schema");
            }
            let map = heatmap_export(&mask, &schema)?;
            write_text(&out, map.to_csv())?;
            println!("{} selected pixels over {} frames", map.total(), schema.config.frames_f);
        }
        Command::Train { model, input, out, mask, user, kernel, c, gamma, degree, lambda, max_iter, seed } => {
            let ds = store::load_dataset(&input)?;
            let mask = match mask {
                Some(p) => {
                    let (m, hash) = store::load_mask(&p)?;
                    if hash.is_some_and(|h| h != ds.schema.id()) {
                        bail!("mask {} was made for a different feature schema", p.display());
                    }
                    Some(m)
                }
                None => None,
            };
            let mut opts = cfg.logistic;
            if let Some(l) = lambda {
                opts.l2_lambda = l;
            }
            if let Some(m) = max_iter {
                opts.max_iter = m;
            }
            let mut bundle = match model {
                ModelKind::Gmm => {
                    let user = user.context("--user is required for gmm")?;
                    let rows = ds.rows_of(&user);
                    if rows.is_empty() {
                        bail!("no rows labeled {user:?}");
                    }
                    let genuine = match &mask {
                        Some(m) => m.apply(&ds.subset(&rows))?,
                        None => ds.subset(&rows),
                    };
                    let mut det_opts = cfg.anomaly;
                    det_opts.gmm.seed = seed.unwrap_or(cfg.seeds.model);
                    let det = AnomalyDetector::fit(&genuine.features, &det_opts)?;
                    let mut b = ModelBundle::new(Model::Gmm(det));
                    b.user = Some(user);
                    b
                }
                _ => {
                    let (z, scaler) = normalize_fit(&ds)?;
                    let z = match &mask {
                        Some(m) => m.apply(&z)?,
                        None => z,
                    };
                    let trained = match model {
                        ModelKind::Logreg => Model::Logreg(logreg_train(&z, &opts)?),
                        ModelKind::Softmax => Model::Softmax(softmax_train(&z, &opts)?),
                        ModelKind::Svm => {
                            let spec = match kernel {
                                KernelKind::Linear => KernelSpec::Linear,
                                KernelKind::Poly => KernelSpec::Polynomial { degree, coef0: 1.0 },
                                KernelKind::Rbf => KernelSpec::Rbf { gamma: gamma.unwrap_or(cfg.svm.gamma) },
                            };
                            Model::Svm(one_vs_rest_train(&z, c.unwrap_or(cfg.svm.c), &spec, &cfg.svm.smo)?)
                        }
                        ModelKind::Gmm => unreachable!(),
                    };
                    let mut b = ModelBundle::new(trained);
                    b.scaler = Some(scaler);
                    b
                }
            };
            bundle.mask = mask;
            bundle.feature_config = Some(ds.schema.config);
            bundle.gesture_kind = ds.kind;
            store::save_model(&out, &bundle, Some(&ds.schema))?;
            println!("wrote {} model to {}", bundle.model.type_name(), out.display());
        }
        Command::Eval { model, test, report, csv } => {
            let (bundle, hash) = store::load_model(&model)?;
            let ds = store::load_dataset(&test)?;
            if hash.is_some_and(|h| h != ds.schema.id()) {
                bail!("model was trained on a different feature schema");
            }
            let predictions = ds
                .features
                .iter_rows()
                .map(|r| bundle.predict_label(r))
                .collect::<touchguard_core::Result<Vec<_>>>()?;
            let text = match &bundle.user {
                Some(user) => detector_report(user, &predictions, &ds.labels),
                None => {
                    let scores = evaluation::score(&predictions, &ds.labels)?;
                    if let Some(p) = &csv {
                        write_text(p, scores.confusion.to_csv())?;
                    }
                    classifier_report(&bundle, &scores)
                }
            };
            write_text(&report, &text)?;
            print!("{text}");
        }
        Command::Grid { input, out, folds, c_range, gamma_range, seed } => {
            let ds = normalized(&store::load_dataset(&input)?)?;
            let axes = GridAxes { c: exponents(&c_range)?, gamma: exponents(&gamma_range)? };
            let opts = GridOptions { folds, seed: seed.unwrap_or(cfg.seeds.model), smo: cfg.svm.smo };
            let grid = grid_search(&ds, &axes, &opts)?;
            write_text(&out, grid.to_csv())?;
            println!("best C={:e} gamma={:e} accuracy {:.4}", grid.best_c(), grid.best_gamma(), grid.best_score());
        }
        Command::Report { seeds, out, csv, json, taps, circles, random } => {
            let mut per_user = BTreeMap::new();
            for (k, n) in [(GestureKind::Tap, taps), (GestureKind::Circle, circles), (GestureKind::Random, random)] {
                if n > 0 {
                    per_user.insert(k, n);
                }
            }
            let t3 = Table3Config {
                seeds,
                per_user,
                sensor: cfg.sensor,
                detector: cfg.anomaly,
                ..Table3Config::default()
            };
            let report = evaluation::run_table3(&t3)?;
            write_text(&out, report.to_markdown())?;
            if let Some(p) = csv {
                write_text(&p, report.to_csv())?;
            }
            if let Some(p) = json {
                write_text(&p, serde_json::to_string_pretty(&report)?)?;
            }
            print!("{}", report.to_markdown());
        }
        Command::Serve { bind, service_config } => {
            let svc_cfg = match service_config {
                Some(p) => touchguard_authd::ServiceConfig::load(&p)?,
                None => touchguard_authd::ServiceConfig::from_env()?,
            };
            let bind = bind.unwrap_or_else(touchguard_authd::config::bind_address);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let app = touchguard_authd::router(Arc::new(touchguard_authd::Service::new(svc_cfg)?));
                let listener = tokio::net::TcpListener::bind(&bind).await?;
                eprintln!("listening on {}", listener.local_addr()?);
                axum_serve(listener, app).await
            })?;
        }
    }
    Ok(())
}

async fn axum_serve(listener: tokio::net::TcpListener, app: touchguard_authd::http::Router) -> Result<()> {
    touchguard_authd::http::serve(listener, app).await?;
    Ok(())
}

fn classifier_report(bundle: &ModelBundle, s: &touchguard_core::evaluation::Scores) -> String {
    let mut out = format!(
        "# {} evaluation\n\naccuracy: {:.4}\nmacro F1: {:.4}\n\n| class | precision | recall | F1 |\n|---|---|---|---|\n",
        bundle.model.type_name(),
        s.accuracy,
        s.macro_f1
    );
    for (i, c) in s.confusion.classes.iter().enumerate() {
        out += &format!("| {c} | {:.4} | {:.4} | {:.4} |\n", s.precision[i], s.recall[i], s.f1[i]);
    }
    out += "\nconfusion (rows true, columns predicted):\n\n```\n";
    out += &s.confusion.to_csv();
    out += "```\n";
    out
}

fn detector_report(user: &str, predictions: &[String], truth: &[String]) -> String {
    let (mut ga, mut gn, mut ir, mut inn) = (0usize, 0usize, 0usize, 0usize);
    for (p, t) in predictions.iter().zip(truth) {
        if t == user {
            gn += 1;
            ga += usize::from(p == "accept");
        } else {
            inn += 1;
            ir += usize::from(p == "reject");
        }
    }
    let rate = |a: usize, n: usize| if n == 0 { "NA".to_string() } else { format!("{:.4}", a as f64 / n as f64) };
    format!(
        "# detector evaluation for {user}\n\ngenuine acceptance: {} ({ga}/{gn})\nimpostor rejection: {} ({ir}/{inn})\n",
        rate(ga, gn),
        rate(ir, inn)
    )
}
