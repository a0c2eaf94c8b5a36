//! Synthetic benchmark with three known partitions: clusters in a block of
//! outcome-irrelevant "noise" features, outcome clusters with distinct
//! exponential time-to-event scales, and combined clusters that split each
//! outcome cluster in two with distinct centroids in a second feature block.

use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::ehr::{ColumnKind, FeatureLayout, TrajectoryTensor};
use crate::error::{Error, Result};
use crate::SurvivalOutcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_patients: usize,
    pub k_noise: usize,
    pub n_noise_features: usize,
    pub noise_std: f64,
    pub noise_center_range: (f64, f64),
    pub k_outcome: usize,
    pub tte_min: f64,
    pub tte_max: f64,
    pub censor_prob: f64,
    pub tte_cap: f64,
    pub k_combined: usize,
    pub n_outcome_features: usize,
    pub combined_std: f64,
    pub combined_center_range: (f64, f64),
    /// Min-max scale and round every feature to {0, 1}.
    pub binarize: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_patients: 60_000,
            k_noise: 3,
            n_noise_features: 200,
            noise_std: 3.0,
            noise_center_range: (-10.0, 10.0),
            k_outcome: 3,
            tte_min: 10.0,
            tte_max: 10_000.0,
            censor_prob: 0.5,
            tte_cap: 2_000.0,
            k_combined: 6,
            n_outcome_features: 200,
            combined_std: 5.0,
            combined_center_range: (-5.0, 5.0),
            binarize: false,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Same generative parameters with a different cohort size.
    pub fn with_patients(n_patients: usize, seed: u64) -> Self {
        Self {
            n_patients,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_patients", self.n_patients),
            ("k_noise", self.k_noise),
            ("n_noise_features", self.n_noise_features),
            ("k_outcome", self.k_outcome),
            ("k_combined", self.k_combined),
            ("n_outcome_features", self.n_outcome_features),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.k_combined != 2 * self.k_outcome {
            return Err(Error::config(
                "k_combined",
                format!("must equal 2 * k_outcome = {}", 2 * self.k_outcome),
            ));
        }
        if !(0.0..=1.0).contains(&self.censor_prob) {
            return Err(Error::config("censor_prob", "must lie in [0, 1]"));
        }
        if !(self.tte_min > 0.0) {
            return Err(Error::config("tte_min", "must be positive"));
        }
        if !(self.tte_max >= self.tte_min) {
            return Err(Error::config("tte_max", "must be at least tte_min"));
        }
        if !(self.tte_cap > 0.0) {
            return Err(Error::config("tte_cap", "must be positive"));
        }
        for (field, std) in [
            ("noise_std", self.noise_std),
            ("combined_std", self.combined_std),
        ] {
            if !(std >= 0.0) {
                return Err(Error::config(field, "must be non-negative"));
            }
        }
        for (field, (lo, hi)) in [
            ("noise_center_range", self.noise_center_range),
            ("combined_center_range", self.combined_center_range),
        ] {
            if !(lo <= hi) {
                return Err(Error::config(field, "lower bound exceeds upper bound"));
            }
        }
        if self.n_patients < self.k_noise {
            return Err(Error::config(
                "n_patients",
                "fewer patients than noise clusters",
            ));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = crate::error::read_text(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    /// Noise block followed by the outcome block, one row per patient.
    pub features: Array2<f64>,
    pub noise_labels: Vec<usize>,
    pub outcome_labels: Vec<usize>,
    pub combined_labels: Vec<usize>,
    pub outcomes: Vec<SurvivalOutcome>,
    pub binary: bool,
}

impl SyntheticDataset {
    pub fn n_patients(&self) -> usize {
        self.features.nrows()
    }

    pub fn layout(&self) -> FeatureLayout {
        let kind = if self.binary {
            ColumnKind::Binary
        } else {
            ColumnKind::Continuous
        };
        FeatureLayout::uniform(self.features.ncols(), kind, "f")
    }

    /// Rows `idx` of every field, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let pick = |v: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            features: self.features.select(Axis(0), idx),
            noise_labels: pick(&self.noise_labels),
            outcome_labels: pick(&self.outcome_labels),
            combined_labels: pick(&self.combined_labels),
            outcomes: idx.iter().map(|&i| self.outcomes[i]).collect(),
            binary: self.binary,
        }
    }

    /// Writes `features.csv` (header `f0..`) and `labels.csv`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("features.csv"))?;
        let header: Vec<String> = (0..self.features.ncols())
            .map(|j| format!("f{j}"))
            .collect();
        w.write_record(&header)?;
        for row in self.features.outer_iter() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("labels.csv"))?;
        w.write_record([
            "patient_id",
            "noise_label",
            "outcome_label",
            "combined_label",
            "time",
            "event",
        ])?;
        for i in 0..self.n_patients() {
            w.write_record([
                i.to_string(),
                self.noise_labels[i].to_string(),
                self.outcome_labels[i].to_string(),
                self.combined_labels[i].to_string(),
                self.outcomes[i].time.to_string(),
                u8::from(self.outcomes[i].event).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the pair of files written by [`SyntheticDataset::write_csv`].
    pub fn read_csv(dir: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(dir.join("features.csv"))?;
        let width = r.headers()?.len();
        let mut values = Vec::new();
        let mut rows = 0;
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != width {
                return Err(Error::Parse(format!(
                    "features row {rows} has {} fields",
                    rec.len()
                )));
            }
            for field in rec.iter() {
                values.push(
                    field
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("{field}: {e}")))?,
                );
            }
            rows += 1;
        }
        let features = Array2::from_shape_vec((rows, width), values)
            .map_err(|e| Error::Parse(e.to_string()))?;

        let mut r = csv::Reader::from_path(dir.join("labels.csv"))?;
        let mut ds = Self {
            binary: features.iter().all(|&v| v == 0.0 || v == 1.0),
            features,
            noise_labels: Vec::new(),
            outcome_labels: Vec::new(),
            combined_labels: Vec::new(),
            outcomes: Vec::new(),
        };
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Parse(format!("{s}: {e}")))
        };
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 6 {
                return Err(Error::Parse("labels.csv needs 6 columns".into()));
            }
            ds.noise_labels.push(parse(&rec[1])? as usize);
            ds.outcome_labels.push(parse(&rec[2])? as usize);
            ds.combined_labels.push(parse(&rec[3])? as usize);
            ds.outcomes.push(SurvivalOutcome::new(
                parse(&rec[4])?,
                parse(&rec[5])? != 0.0,
            ));
        }
        if ds.outcomes.len() != rows {
            return Err(Error::Parse(format!(
                "{} label rows for {rows} feature rows",
                ds.outcomes.len()
            )));
        }
        Ok(ds)
    }
}

/// Features for the given labels, with one uniformly placed centroid per
/// cluster and isotropic Gaussian spread around it.
pub fn sample_cluster_features<R: Rng + ?Sized>(
    labels: &[usize],
    k: usize,
    n_features: usize,
    std: f64,
    center_range: (f64, f64),
    rng: &mut R,
) -> Result<Array2<f64>> {
    if n_features == 0 {
        return Err(Error::config("n_features", "must be positive"));
    }
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::config("std", "must be finite and non-negative"));
    }
    let (lo, hi) = center_range;
    if !(lo <= hi) {
        return Err(Error::config(
            "center_range",
            "lower bound exceeds upper bound",
        ));
    }
    let mut centroids = Array2::zeros((k, n_features));
    for v in centroids.iter_mut() {
        *v = if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        };
    }
    let mut x = Array2::zeros((labels.len(), n_features));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    for (mut row, &l) in x.outer_iter_mut().zip(labels) {
        if l >= k {
            return Err(Error::input(format!("label {l} outside [0, {k})")));
        }
        for (v, c) in row.iter_mut().zip(centroids.row(l)) {
            *v = c + std * normal.sample(rng);
        }
    }
    Ok(x)
}

/// Draws `n` equiprobable labels in `[0, k)` and Gaussian features around
/// uniformly placed centroids.
pub fn generate_isotropic_clusters<R: Rng + ?Sized>(
    k: usize,
    n_features: usize,
    std: f64,
    center_range: (f64, f64),
    n: usize,
    rng: &mut R,
) -> Result<(Array2<f64>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::config("n", "must be positive"));
    }
    if k == 0 || n < k {
        return Err(Error::config(
            "k",
            format!("need 1 <= k <= n, got k={k}, n={n}"),
        ));
    }
    if n_features == 0 {
        return Err(Error::config("n_features", "must be positive"));
    }
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let x = sample_cluster_features(&labels, k, n_features, std, center_range, rng)?;
    Ok((x, labels))
}

/// `k` base-10 log-spaced values from `min` to `max`, both inclusive.
pub fn log_spaced(k: usize, min: f64, max: f64) -> Vec<f64> {
    if k == 1 {
        return vec![min];
    }
    let (a, b) = (min.log10(), max.log10());
    (0..k)
        .map(|i| {
            if i == k - 1 {
                max
            } else {
                10f64.powf(a + (b - a) * i as f64 / (k - 1) as f64)
            }
        })
        .collect()
}

/// Exponential event times whose mean is the log-spaced scale of the
/// patient's cluster, with random censoring and administrative capping.
///
/// Pass `tte_cap = f64::INFINITY` to disable the cap.
pub fn generate_outcome_times<R: Rng + ?Sized>(
    labels: &[usize],
    k: usize,
    tte_min: f64,
    tte_max: f64,
    censor_prob: f64,
    tte_cap: f64,
    rng: &mut R,
) -> Result<Vec<SurvivalOutcome>> {
    if !(tte_min > 0.0) {
        return Err(Error::config("tte_min", "must be positive"));
    }
    if !(tte_max >= tte_min) {
        return Err(Error::config("tte_max", "must be at least tte_min"));
    }
    if !(0.0..=1.0).contains(&censor_prob) {
        return Err(Error::config("censor_prob", "must lie in [0, 1]"));
    }
    if !(tte_cap > 0.0) {
        return Err(Error::config("tte_cap", "must be positive"));
    }
    if k == 0 {
        return Err(Error::config("k", "must be positive"));
    }
    let dists: Vec<Exp<f64>> = log_spaced(k, tte_min, tte_max)
        .into_iter()
        .map(|scale| Exp::new(1.0 / scale).expect("positive rate"))
        .collect();
    labels
        .iter()
        .map(|&l| {
            let dist = dists
                .get(l)
                .ok_or_else(|| Error::input(format!("label {l} outside [0, {k})")))?;
            let mut time = dist.sample(rng);
            // zero has probability ~0 but times must stay positive
            if time <= 0.0 {
                time = f64::MIN_POSITIVE;
            }
            let mut event = rng.random::<f64>() >= censor_prob;
            if time > tte_cap {
                time = tte_cap;
                event = false;
            }
            Ok(SurvivalOutcome::new(time, event))
        })
        .collect()
}

/// Splits every outcome cluster `c` uniformly at random into combined
/// clusters `2c` (first `floor(n/2)` members) and `2c + 1`.
pub fn split_combined_clusters<R: Rng + ?Sized>(
    outcome_labels: &[usize],
    rng: &mut R,
) -> Result<Vec<usize>> {
    let k = outcome_labels.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in outcome_labels.iter().enumerate() {
        members[l].push(i);
    }
    let mut combined = vec![0; outcome_labels.len()];
    for (c, idx) in members.iter_mut().enumerate() {
        if idx.len() < 2 {
            return Err(Error::config(
                "outcome_labels",
                format!(
                    "outcome cluster {c} has {} member(s); need at least 2 to split",
                    idx.len()
                ),
            ));
        }
        idx.shuffle(rng);
        let half = idx.len() / 2;
        for (j, &i) in idx.iter().enumerate() {
            combined[i] = 2 * c + usize::from(j >= half);
        }
    }
    Ok(combined)
}

/// Per-column min-max scaling to [0, 1] followed by rounding (ties round up).
pub fn binarize_features(x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = x.to_owned();
    for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let min = col.iter().copied().fold(f64::INFINITY, f64::min);
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(min < max) {
            return Err(Error::ConstantColumn { column: j });
        }
        for v in col.iter_mut() {
            let scaled = (*v - min) / (max - min);
            *v = if scaled >= 0.5 { 1.0 } else { 0.0 };
        }
    }
    Ok(out)
}

pub fn generate_dataset(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_patients;
    let (noise, noise_labels) = generate_isotropic_clusters(
        config.k_noise,
        config.n_noise_features,
        config.noise_std,
        config.noise_center_range,
        n,
        &mut rng,
    )?;
    let outcome_labels: Vec<usize> = (0..n)
        .map(|_| rng.random_range(0..config.k_outcome))
        .collect();
    for c in 0..config.k_outcome {
        if outcome_labels.iter().filter(|&&l| l == c).count() < 2 {
            return Err(Error::config(
                "n_patients",
                format!("outcome cluster {c} drew fewer than 2 patients"),
            ));
        }
    }
    let combined_labels = split_combined_clusters(&outcome_labels, &mut rng)?;
    let outcome_block = sample_cluster_features(
        &combined_labels,
        config.k_combined,
        config.n_outcome_features,
        config.combined_std,
        config.combined_center_range,
        &mut rng,
    )?;
    let outcomes = generate_outcome_times(
        &outcome_labels,
        config.k_outcome,
        config.tte_min,
        config.tte_max,
        config.censor_prob,
        config.tte_cap,
        &mut rng,
    )?;
    let mut features = ndarray::concatenate(Axis(1), &[noise.view(), outcome_block.view()])
        .expect("blocks share row count");
    if config.binarize {
        features = binarize_features(features.view())?;
    }
    Ok(SyntheticDataset {
        features,
        noise_labels,
        outcome_labels,
        combined_labels,
        outcomes,
        binary: config.binarize,
    })
}

/// Splits each static row into `n_windows` contiguous equal-width windows,
/// all marked present.
pub fn to_sequences(
    features: ArrayView2<f64>,
    layout: &FeatureLayout,
    n_windows: usize,
) -> Result<Vec<TrajectoryTensor>> {
    let d = features.ncols();
    if n_windows == 0 || !d.is_multiple_of(n_windows) {
        return Err(Error::config(
            "n_windows",
            format!("{d} features cannot be split into {n_windows} equal windows"),
        ));
    }
    if layout.width() != d {
        return Err(Error::input("layout width differs from feature count"));
    }
    let w = d / n_windows;
    Ok(features
        .outer_iter()
        .map(|row| {
            let windows = row
                .to_owned()
                .into_shape_with_order((n_windows, w))
                .expect("divisible");
            let mut continuous_mask = Array2::from_elem((n_windows, w), false);
            for t in 0..n_windows {
                for j in 0..w {
                    continuous_mask[[t, j]] = layout.kinds[t * w + j] == ColumnKind::Continuous;
                }
            }
            TrajectoryTensor {
                windows,
                mask: vec![true; n_windows],
                continuous_mask,
                index_window: None,
            }
        })
        .collect())
}

/// Inverse of [`to_sequences`]: concatenates each trajectory's windows.
pub fn flatten_sequences(trajectories: &[TrajectoryTensor]) -> Result<Array2<f64>> {
    let Some(first) = trajectories.first() else {
        return Ok(Array2::zeros((0, 0)));
    };
    let width = first.windows.len();
    let mut out = Array2::zeros((trajectories.len(), width));
    for (i, t) in trajectories.iter().enumerate() {
        if t.windows.len() != width {
            return Err(Error::input("trajectories differ in total size"));
        }
        out.slice_mut(s![i, ..])
            .assign(&ndarray::Array1::from_iter(t.windows.iter().copied()));
    }
    Ok(out)
}
