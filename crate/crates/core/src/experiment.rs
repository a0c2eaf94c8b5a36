//! Experiment protocol on the synthetic benchmark and the three operator
//! commands built on it: dataset generation, a single manifest-driven run,
//! and the full method-by-k agreement matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{PcaKMeans, RsfConfig, SurvivalForest};
use crate::ehr::{ColumnKind, FeatureLayout};
use crate::error::{Error, Result, StageContext};
use crate::losses::{LossWeights, Scenario};
use crate::metrics::{
    adjusted_rand_index, km_by_cluster, logrank_by_labels, write_km_csv, MetricsReport,
};
use crate::network::{hard_labels, write_assignments_csv, Cohort, EncoderKind, Model, ModelConfig};
use crate::synthetic::{generate_dataset, to_sequences, SyntheticConfig, SyntheticDataset};
use crate::trainer::{
    finetune_cluster, pretrain, repeat_seed, split_indices, summarize, MetricSummary, TrainConfig,
};

/// Reference partitions of the synthetic benchmark, in table column order.
pub const REFERENCES: [&str; 3] = ["unsupervised", "outcome", "combined"];

/// Centers every column and divides by one shared scale: the root mean
/// square of the centered entries. A single scale keeps relative distances.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    pub mean: Array1<f64>,
    pub scale: f64,
}

impl FeatureScaler {
    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        let mean = x
            .mean_axis(Axis(0))
            .ok_or_else(|| Error::input("cannot fit a scaler on zero rows"))?;
        let centered = &x - &mean;
        let rms = (centered.iter().map(|v| v * v).sum::<f64>() / centered.len() as f64).sqrt();
        Ok(Self {
            mean,
            scale: if rms > 0.0 { rms } else { 1.0 },
        })
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean) / self.scale
    }
}

/// Model dimensions shared by every run of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub encoder_kind: EncoderKind,
    #[serde(default = "one")]
    pub n_windows: usize,
    pub embed_width: usize,
    pub latent_width: usize,
    #[serde(default = "two")]
    pub n_gru_layers: usize,
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
    pub n_clusters: usize,
}

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

fn default_dropout() -> f64 {
    0.1
}

impl ModelSpec {
    /// Concrete model configuration for static rows described by `layout`.
    pub fn build(&self, layout: &FeatureLayout, n_clusters: usize) -> Result<ModelConfig> {
        let config = match self.encoder_kind {
            EncoderKind::Feedforward => {
                ModelConfig::feedforward(layout, self.embed_width, self.latent_width, n_clusters)
            }
            EncoderKind::Recurrent => {
                if self.n_windows == 0 || !layout.width().is_multiple_of(self.n_windows) {
                    return Err(Error::config(
                        "n_windows",
                        format!(
                            "{} features cannot be split into {} windows",
                            layout.width(),
                            self.n_windows
                        ),
                    ));
                }
                let w = layout.width() / self.n_windows;
                let window = FeatureLayout {
                    names: layout.names[..w].to_vec(),
                    kinds: layout.kinds[..w].to_vec(),
                };
                ModelConfig {
                    n_gru_layers: self.n_gru_layers,
                    dropout_p: self.dropout_p,
                    ..ModelConfig::recurrent(
                        &window,
                        self.n_windows,
                        self.embed_width,
                        self.latent_width,
                        n_clusters,
                    )
                }
            }
        };
        config.validate()?;
        Ok(config)
    }

    /// Cohort view of static rows matching this encoder.
    pub fn cohort(&self, features: ArrayView2<f64>, layout: &FeatureLayout) -> Result<Cohort> {
        match self.encoder_kind {
            EncoderKind::Feedforward => Ok(Cohort::from_static(features)),
            EncoderKind::Recurrent if layout.kinds.iter().all(|&k| k == ColumnKind::Binary) => {
                let w = layout.width() / self.n_windows.max(1);
                let window = FeatureLayout {
                    names: layout.names[..w].to_vec(),
                    kinds: layout.kinds[..w].to_vec(),
                };
                Cohort::from_trajectories(&to_sequences(features, layout, self.n_windows)?, &window)
            }
            // Scaled continuous values fall outside the record range check.
            EncoderKind::Recurrent => Cohort::from_static_windows(features, self.n_windows),
        }
    }
}

/// Everything the agreement-matrix experiment depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSettings {
    pub data: SyntheticConfig,
    pub model: ModelSpec,
    pub pretrain: TrainConfig,
    /// Loss weights are replaced by each scenario preset; `n_repeats` and
    /// `split_fraction` drive the repeat protocol.
    pub finetune: TrainConfig,
    pub pca_components: usize,
    pub rsf: RsfConfig,
    /// Cluster counts reported in the agreement matrix.
    pub table_ks: Vec<usize>,
    /// Cluster counts at which log-rank statistics are collected.
    pub logrank_ks: Vec<usize>,
    pub seed: u64,
}

impl ExperimentSettings {
    /// Full-size benchmark: 60000 patients, recurrent encoder of width 256, long pre-training.
    pub fn full() -> Self {
        let weights = Scenario::Combined.weights().expect("preset");
        Self {
            data: SyntheticConfig::default(),
            model: ModelSpec {
                encoder_kind: EncoderKind::Recurrent,
                n_windows: 4,
                embed_width: 256,
                latent_width: 256,
                n_gru_layers: 2,
                dropout_p: 0.1,
                n_clusters: 3,
            },
            pretrain: TrainConfig {
                epochs: 350,
                batch_size: 4096,
                learning_rate: 2e-3,
                weight_decay: 1e-6,
                seed: 0,
                weights: LossWeights::pretraining(weights.w_kl),
                split_fraction: 0.8,
                n_repeats: 5,
                checkpoint_every: 0,
                checkpoint_dir: None,
            },
            finetune: TrainConfig {
                epochs: 25,
                batch_size: 256,
                learning_rate: 1e-3,
                weight_decay: 1e-6,
                seed: 0,
                weights,
                split_fraction: 0.8,
                n_repeats: 5,
                checkpoint_every: 0,
                checkpoint_dir: None,
            },
            pca_components: 5,
            rsf: RsfConfig::default(),
            table_ks: vec![3, 6],
            logrank_ks: vec![2, 3, 4, 5],
            seed: 0,
        }
    }

    /// Laptop-sized benchmark: `scale` of the full cohort and a small
    /// feedforward model.
    pub fn desk(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::config("scale", "must lie in (0, 1]"));
        }
        let mut s = Self::full();
        s.data.n_patients = (s.data.n_patients as f64 * scale).round().max(1.0) as usize;
        s.model = ModelSpec {
            encoder_kind: EncoderKind::Feedforward,
            n_windows: 1,
            embed_width: 64,
            latent_width: 10,
            n_gru_layers: 0,
            dropout_p: 0.0,
            n_clusters: 3,
        };
        s.pretrain.epochs = 40;
        s.pretrain.batch_size = 256;
        s.finetune.epochs = 25;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        if self.pca_components == 0 {
            return Err(Error::config("pca_components", "must be positive"));
        }
        if self.table_ks.is_empty() || self.all_ks().iter().any(|&k| k < 2) {
            return Err(Error::config(
                "table_ks",
                "needs at least one k, all k >= 2",
            ));
        }
        Ok(())
    }

    fn all_ks(&self) -> BTreeSet<usize> {
        self.table_ks
            .iter()
            .chain(&self.logrank_ks)
            .copied()
            .collect()
    }
}

/// Row labels of the agreement matrix, in table order.
pub const TABLE_METHODS: [&str; 6] = [
    "pca_kmeans",
    "rsf",
    "ac_tpc",
    "recon_only",
    "outcome_only",
    "combined",
];

/// Display name of a method row.
pub fn method_label(method: &str) -> &'static str {
    match method {
        "pca_kmeans" => "PCA k-means",
        "rsf" => "RSF",
        "ac_tpc" => "AC-TPC",
        "recon_only" => "recon_only (w_r=0.5 w_y=0)",
        "outcome_only" => "outcome_only (w_r=0 w_y=1)",
        "combined" => "combined (w_r=0.05 w_y=1)",
        _ => "unknown",
    }
}

pub fn ari_key(method: &str, k: usize, reference: &str) -> String {
    format!("{method}/k{k}/ari_{reference}")
}

pub fn logrank_key(method: &str, k: usize) -> String {
    format!("{method}/k{k}/logrank")
}

fn score(
    metrics: &mut BTreeMap<String, f64>,
    method: &str,
    k: usize,
    labels: &[usize],
    test: &SyntheticDataset,
) -> Result<()> {
    let refs: [&[usize]; 3] = [
        &test.noise_labels,
        &test.outcome_labels,
        &test.combined_labels,
    ];
    for (name, reference) in REFERENCES.iter().zip(refs) {
        metrics.insert(
            ari_key(method, k, name),
            adjusted_rand_index(labels, reference)?,
        );
    }
    // A run that collapses to one cluster separates nothing.
    let stat = logrank_by_labels(&test.outcomes, labels).map_or(0.0, |r| r.statistic);
    metrics.insert(logrank_key(method, k), stat);
    Ok(())
}

/// One repeat: fresh split, baselines, one shared pre-training, then every
/// scenario at every k. All methods fit on the training split and label the
/// held-out split.
pub fn run_repeat(
    dataset: &SyntheticDataset,
    settings: &ExperimentSettings,
    seed: u64,
) -> Result<BTreeMap<String, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train_idx, test_idx) = split_indices(
        dataset.n_patients(),
        settings.finetune.split_fraction,
        &mut rng,
    );
    let train = dataset.subset(&train_idx);
    let test = if test_idx.is_empty() {
        train.clone()
    } else {
        dataset.subset(&test_idx)
    };
    let (x_train, x_test) = if dataset.binary {
        (train.features.clone(), test.features.clone())
    } else {
        let scaler = FeatureScaler::fit(train.features.view())?;
        (
            scaler.transform(train.features.view()),
            scaler.transform(test.features.view()),
        )
    };
    let ks = settings.all_ks();
    let mut metrics = BTreeMap::new();

    let forest = SurvivalForest::fit(x_train.view(), &train.outcomes, settings.rsf, &mut rng)
        .stage("rsf")?;
    for &k in &ks {
        let pca = PcaKMeans::fit(x_train.view(), settings.pca_components, k, &mut rng)
            .stage("pca_kmeans")?;
        score(
            &mut metrics,
            "pca_kmeans",
            k,
            &pca.predict(x_test.view()),
            &test,
        )?;
        let rsf = forest.cluster(x_train.view(), k, &mut rng).stage("rsf")?;
        score(&mut metrics, "rsf", k, &rsf.predict(x_test.view()), &test)?;
    }

    let layout = dataset.layout();
    let train_cohort = settings.model.cohort(x_train.view(), &layout)?;
    let test_cohort = settings.model.cohort(x_test.view(), &layout)?;
    let mut base = Model::new(settings.model.build(&layout, 2)?, &mut rng)?;
    let pre = TrainConfig {
        seed: repeat_seed(seed, 1),
        ..settings.pretrain.clone()
    };
    pretrain(&mut base, &train_cohort, &pre).stage("pretrain")?;
    let eval_batch = settings.finetune.batch_size.max(1024);
    let embedded = base.embed(&train_cohort, eval_batch)?;

    for (s, scenario) in Scenario::PRESETS.iter().enumerate() {
        for &k in &ks {
            let mut model = base.with_n_clusters(k)?;
            let mut init_rng = ChaCha8Rng::seed_from_u64(repeat_seed(seed, 100 + k));
            model
                .init_centroids(&embedded, &mut init_rng)
                .stage("init_centroids")?;
            let config = TrainConfig {
                seed: repeat_seed(seed, 1000 + 10 * s + k),
                weights: scenario.weights().expect("preset"),
                ..settings.finetune.clone()
            };
            finetune_cluster(&mut model, &train_cohort, &train.outcomes, &config)
                .stage("finetune")?;
            let labels = hard_labels(&model.assignments(&model.embed(&test_cohort, eval_batch)?));
            score(&mut metrics, scenario.as_str(), k, &labels, &test)?;
        }
    }
    Ok(metrics)
}

/// Summaries of every metric over all repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub n_patients: usize,
    pub n_repeats: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
}

impl ExperimentResult {
    pub fn mean(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).map(|s| s.mean)
    }

    /// Mean agreement of `method` at `k` with `reference`.
    pub fn ari(&self, method: &str, k: usize, reference: &str) -> Option<f64> {
        self.mean(&ari_key(method, k, reference))
    }

    pub fn logrank(&self, method: &str, k: usize) -> Option<f64> {
        self.mean(&logrank_key(method, k))
    }

    /// Agreement matrix in table layout: one row per method, one column per
    /// (k, reference). Cells are `mean` and `std` columns side by side.
    pub fn table_csv(&self, ks: &[usize]) -> String {
        let mut out = String::from("method");
        for k in ks {
            for r in REFERENCES {
                let _ = write!(out, ",k{k}_{r}_mean,k{k}_{r}_std");
            }
        }
        out.push_str(",note\n");
        for method in TABLE_METHODS {
            out.push_str(method_label(method));
            for &k in ks {
                for r in REFERENCES {
                    match self.metrics.get(&ari_key(method, k, r)) {
                        Some(s) => {
                            let _ = write!(out, ",{:.4},{:.4}", s.mean, s.std);
                        }
                        None => out.push_str(",,"),
                    }
                }
            }
            if method == "ac_tpc" {
                out.push_str(",external comparison model; not reimplemented");
            } else {
                out.push(',');
            }
            out.push('\n');
        }
        out
    }

    /// Mean and std of the held-out log-rank statistic per method and k.
    pub fn logrank_csv(&self, ks: &[usize]) -> String {
        let mut out = String::from("method,k,logrank_mean,logrank_std\n");
        for method in TABLE_METHODS {
            for &k in ks {
                if let Some(s) = self.metrics.get(&logrank_key(method, k)) {
                    let _ = writeln!(out, "{method},{k},{:.4},{:.4}", s.mean, s.std);
                }
            }
        }
        out
    }
}

/// Generates the dataset and runs every repeat.
pub fn run_experiment(settings: &ExperimentSettings) -> Result<ExperimentResult> {
    settings.validate()?;
    let data = SyntheticConfig {
        seed: settings.seed,
        ..settings.data.clone()
    };
    let dataset = generate_dataset(&data).stage("gen-data")?;
    let n_repeats = settings.finetune.n_repeats;
    let mut collected: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in 0..n_repeats {
        let started = std::time::Instant::now();
        for (key, v) in run_repeat(&dataset, settings, repeat_seed(settings.seed, r))? {
            collected.entry(key).or_default().push(v);
        }
        log::info!(
            "repeat {}/{n_repeats} finished in {:.1?}",
            r + 1,
            started.elapsed()
        );
    }
    Ok(ExperimentResult {
        n_patients: dataset.n_patients(),
        n_repeats,
        metrics: collected
            .into_iter()
            .map(|(k, v)| (k, summarize(&v)))
            .collect(),
    })
}

/// Writes `table2.csv`, `logrank.csv`, `summary.json` and the resolved
/// `settings.json` into `out`.
pub fn write_experiment(
    result: &ExperimentResult,
    settings: &ExperimentSettings,
    out: &Path,
) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("table2.csv"), result.table_csv(&settings.table_ks))?;
    let logrank_ks: Vec<usize> = settings.all_ks().into_iter().collect();
    fs::write(out.join("logrank.csv"), result.logrank_csv(&logrank_ks))?;
    fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(result)? + "\n",
    )?;
    fs::write(
        out.join("settings.json"),
        serde_json::to_string_pretty(settings)? + "\n",
    )?;
    Ok(())
}

/// Runs the agreement-matrix experiment at `scale` of the full cohort.
pub fn cmd_reproduce_table2(out: &Path, scale: f64, seed: u64) -> Result<ExperimentResult> {
    let settings = ExperimentSettings {
        seed,
        ..ExperimentSettings::desk(scale)?
    };
    let result = run_experiment(&settings)?;
    write_experiment(&result, &settings, out).stage("write")?;
    Ok(result)
}

/// Generates a synthetic dataset from a JSON config (defaults when `None`)
/// and writes it with a copy of the resolved config.
pub fn cmd_gen_data(
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    scale: Option<f64>,
) -> Result<SyntheticDataset> {
    let mut cfg = match config {
        Some(path) => SyntheticConfig::from_json_file(path).stage("config")?,
        None => SyntheticConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(scale) = scale {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::config("scale", "must lie in (0, 1]"));
        }
        cfg.n_patients = (cfg.n_patients as f64 * scale).round().max(1.0) as usize;
    }
    cfg.validate().stage("config")?;
    let ds = generate_dataset(&cfg).stage("gen-data")?;
    ds.write_csv(out).stage("write")?;
    fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(&cfg)? + "\n",
    )
    .stage("write")?;
    Ok(ds)
}

/// A single training run, archivable as one JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    /// Directory holding `features.csv` and `labels.csv`.
    pub dataset: PathBuf,
    pub model: ModelSpec,
    /// Pre-training schedule; `None` starts fine-tuning from initialisation.
    #[serde(default)]
    pub pretrain: Option<TrainConfig>,
    pub finetune: TrainConfig,
    /// Preset name, or `custom` to use `finetune.weights` as given.
    pub scenario: Scenario,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl ExperimentManifest {
    /// Reads a manifest; relative paths resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut m: Self = serde_json::from_str(&crate::error::read_text(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if m.dataset.is_relative() {
            m.dataset = base.join(&m.dataset);
        }
        if m.output_dir.is_relative() {
            m.output_dir = base.join(&m.output_dir);
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for file in ["features.csv", "labels.csv"] {
            if !self.dataset.join(file).is_file() {
                return Err(Error::config(
                    "dataset",
                    format!("{} not found", self.dataset.join(file).display()),
                ));
            }
        }
        if let Some(p) = &self.pretrain {
            p.validate()?;
        }
        self.finetune.validate()?;
        if self.model.n_clusters < 2 {
            return Err(Error::config("model.n_clusters", "must be at least 2"));
        }
        Ok(())
    }

    /// Fine-tuning weights after applying the scenario.
    pub fn weights(&self) -> LossWeights {
        self.scenario.weights().unwrap_or(self.finetune.weights)
    }
}

/// Command-line overrides applied on top of a manifest.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub scenario: Option<Scenario>,
    pub k: Option<usize>,
    pub skip_pretrain: bool,
    pub out: Option<PathBuf>,
}

/// Output of [`cmd_run`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub report: MetricsReport,
    pub labels: Vec<usize>,
    pub output_dir: PathBuf,
}

/// Pre-trains (unless skipped), places centroids, fine-tunes and evaluates
/// on the whole dataset named by the manifest.
///
/// Writes `pretrain_loss.csv`, `finetune_loss.csv`, `assignments.csv`,
/// `metrics.json`, `km.csv` and the final checkpoint under `model/`.
pub fn cmd_run(manifest_path: &Path, overrides: &RunOverrides) -> Result<RunSummary> {
    let mut m = ExperimentManifest::from_file(manifest_path).stage("manifest")?;
    if let Some(seed) = overrides.seed {
        m.seed = seed;
    }
    if let Some(scenario) = overrides.scenario {
        m.scenario = scenario;
    }
    if let Some(k) = overrides.k {
        m.model.n_clusters = k;
    }
    if let Some(out) = &overrides.out {
        m.output_dir = out.clone();
    }
    if overrides.skip_pretrain {
        m.pretrain = None;
    }
    m.validate().stage("manifest")?;
    run_manifest(&m)
}

/// [`cmd_run`] on an already-resolved manifest.
pub fn run_manifest(m: &ExperimentManifest) -> Result<RunSummary> {
    let out = &m.output_dir;
    fs::create_dir_all(out).stage("write")?;
    let ds = SyntheticDataset::read_csv(&m.dataset).stage("load")?;
    let features = if ds.binary {
        ds.features.clone()
    } else {
        FeatureScaler::fit(ds.features.view())
            .stage("load")?
            .transform(ds.features.view())
    };
    let layout = ds.layout();
    let cohort = m.model.cohort(features.view(), &layout).stage("load")?;
    let mut rng = ChaCha8Rng::seed_from_u64(m.seed);
    let config = m.model.build(&layout, m.model.n_clusters).stage("model")?;
    let mut model = Model::new(config, &mut rng).stage("model")?;

    if let Some(p) = &m.pretrain {
        let p = TrainConfig {
            seed: repeat_seed(m.seed, 1),
            ..p.clone()
        };
        let history = pretrain(&mut model, &cohort, &p).stage("pretrain")?;
        history
            .write_csv(&out.join("pretrain_loss.csv"))
            .stage("write")?;
    }
    let eval_batch = m.finetune.batch_size.max(1024);
    let embedded = model.embed(&cohort, eval_batch).stage("init_centroids")?;
    model
        .init_centroids(&embedded, &mut rng)
        .stage("init_centroids")?;
    let ft = TrainConfig {
        seed: repeat_seed(m.seed, 2),
        weights: m.weights(),
        ..m.finetune.clone()
    };
    let fit = finetune_cluster(&mut model, &cohort, &ds.outcomes, &ft).stage("finetune")?;
    fit.history
        .write_csv(&out.join("finetune_loss.csv"))
        .stage("write")?;
    model.save(&out.join("model")).stage("write")?;

    let ids: Vec<String> = (0..ds.n_patients()).map(|i| i.to_string()).collect();
    write_assignments_csv(&out.join("assignments.csv"), &ids, &fit.q).stage("write")?;
    let report = MetricsReport::evaluate(
        m.scenario.as_str(),
        m.model.n_clusters,
        &fit.labels,
        &[
            ("unsupervised", &ds.noise_labels),
            ("outcome", &ds.outcome_labels),
            ("combined", &ds.combined_labels),
        ],
        &ds.outcomes,
    )
    .stage("metrics")?;
    report
        .write_json(&out.join("metrics.json"))
        .stage("write")?;
    let curves = km_by_cluster(&ds.outcomes, &fit.labels).stage("metrics")?;
    write_km_csv(&out.join("km.csv"), &curves).stage("write")?;
    Ok(RunSummary {
        report,
        labels: fit.labels,
        output_dir: out.clone(),
    })
}
