//! Two-phase optimisation: autoencoder pre-training on reconstruction and
//! KL, then joint fine-tuning with the outcome and self-training losses.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mode, ParamGrads, ParamSet};
use crate::error::{Error, Result};
use crate::losses::{weighted_total, ClusterLoss, CoxLoss, KlLoss, LossWeights, ReconLoss};
use crate::network::{hard_labels, target_distribution, Cohort, Model};
use crate::SurvivalOutcome;

/// Assignment confidence tracked during fine-tuning.
pub const CONFIDENT_Q: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub split_fraction: f64,
    pub n_repeats: usize,
    /// Write a checkpoint every this many epochs; 0 disables.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config(
                "learning_rate",
                "must be finite and non-negative",
            ));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config(
                "weight_decay",
                "must be finite and non-negative",
            ));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction <= 1.0) {
            return Err(Error::config("split_fraction", "must lie in (0, 1]"));
        }
        if self.n_repeats == 0 {
            return Err(Error::config("n_repeats", "must be at least 1"));
        }
        self.weights.validate()
    }
}

/// Adam with decoupled weight decay on parameters flagged for decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, learning_rate: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Array2<f64>> = params
            .ids()
            .map(|id| Array2::zeros(params.value(id).raw_dim()))
            .collect();
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamGrads) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = self.learning_rate;
        for id in params.ids().collect::<Vec<_>>() {
            if !params.is_trainable(id) {
                continue;
            }
            let decay = if params.decays(id) {
                self.weight_decay
            } else {
                0.0
            };
            let i = id.index();
            let g = grads.get(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            ndarray::Zip::from(params.value_mut(id))
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let update = (*m / c1) / ((*v / c2).sqrt() + self.eps);
                    *p -= lr * (update + decay * *p);
                });
        }
    }
}

/// Loss components averaged over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub cox: f64,
    pub cluster: f64,
    pub total: f64,
    /// Fraction of patients whose largest soft assignment exceeds
    /// [`CONFIDENT_Q`] after the epoch; absent during pre-training.
    pub confident: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochLog>,
}

impl TrainingHistory {
    /// Writes `epoch,L_r,L_KL,L_y,L_c,total,confident`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "epoch,L_r,L_KL,L_y,L_c,total,confident")?;
        for e in &self.epochs {
            let conf = e.confident.map(|c| format!("{c:?}")).unwrap_or_default();
            writeln!(
                f,
                "{},{:?},{:?},{:?},{:?},{:?},{}",
                e.epoch, e.recon, e.kl, e.cox, e.cluster, e.total, conf
            )?;
        }
        Ok(())
    }

    pub fn totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.total).collect()
    }
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn moving_average(values: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

struct Objective<'a> {
    weights: LossWeights,
    outcomes: Option<&'a [SurvivalOutcome]>,
    target: Option<&'a Array2<f64>>,
}

fn fisher_yates(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

fn run_epoch(
    model: &mut Model,
    cohort: &Cohort,
    objective: &Objective<'_>,
    opt: &mut Adam,
    batch_size: usize,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpochLog> {
    let n = cohort.n_patients();
    let order = fisher_yates(n, rng);
    let w = objective.weights;
    let mut sums = [0.0f64; 5];
    for idx in order.chunks(batch_size) {
        let batch = cohort.select(idx);
        let mut g = Graph::new();
        let lat = model.encode(&mut g, &batch, &mut Mode::Train(rng))?;

        let recon = if w.w_r > 0.0 {
            let y = model.decode(&mut g, lat.z, &batch)?;
            let (target, valid) = batch.stacked();
            let f = ReconLoss {
                target,
                valid,
                binary: model.config.binary_columns.clone(),
                w_b: w.w_b,
            };
            Some(g.apply(Box::new(f), &[y])?)
        } else {
            None
        };
        let kl = if w.w_kl > 0.0 {
            Some(g.apply(Box::new(KlLoss), &[lat.mu, lat.logvar])?)
        } else {
            None
        };
        let cox = match objective.outcomes {
            Some(outcomes) if w.w_y > 0.0 => {
                let risk = model.predict_risk(&mut g, lat.z)?;
                let batch_outcomes = idx.iter().map(|&i| outcomes[i]).collect();
                Some(g.apply(
                    Box::new(CoxLoss {
                        outcomes: batch_outcomes,
                    }),
                    &[risk],
                )?)
            }
            _ => None,
        };
        let cluster = match objective.target {
            Some(p) if w.w_c > 0.0 => {
                let q = model.soft_assign(&mut g, lat.z)?;
                let target = p.select(ndarray::Axis(0), idx);
                Some(g.apply(Box::new(ClusterLoss { target }), &[q])?)
            }
            _ => None,
        };
        let total = weighted_total(
            &mut g,
            &[(w.w_r, recon), (w.w_kl, kl), (w.w_y, cox), (w.w_c, cluster)],
        )?;
        let loss = g.scalar(total);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                what: "training loss".into(),
            });
        }
        let grads = g.backward(total)?;
        let pg = g.param_grads(&grads, &model.params);
        if !pg.all_finite() {
            return Err(Error::Diverged {
                epoch,
                what: "gradient".into(),
            });
        }
        opt.step(&mut model.params, &pg);
        let share = idx.len() as f64 / n as f64;
        for (s, v) in sums.iter_mut().zip([recon, kl, cox, cluster, Some(total)]) {
            if let Some(v) = v {
                *s += share * g.scalar(v);
            }
        }
    }
    Ok(EpochLog {
        epoch,
        recon: sums[0],
        kl: sums[1],
        cox: sums[2],
        cluster: sums[3],
        total: sums[4],
        confident: None,
    })
}

fn maybe_checkpoint(model: &Model, config: &TrainConfig, phase: &str, epoch: usize) -> Result<()> {
    if let (Some(dir), true) = (&config.checkpoint_dir, config.checkpoint_every > 0) {
        if (epoch + 1).is_multiple_of(config.checkpoint_every) {
            model.save(&dir.join(format!("{phase}-epoch{:04}", epoch + 1)))?;
        }
    }
    Ok(())
}

/// Minimises `w_r L_r + w_kl L_KL` on `cohort`; the outcome and cluster
/// weights are ignored.
pub fn pretrain(
    model: &mut Model,
    cohort: &Cohort,
    config: &TrainConfig,
) -> Result<TrainingHistory> {
    config.validate()?;
    if cohort.n_patients() == 0 {
        return Err(Error::input("empty cohort"));
    }
    let weights = LossWeights {
        w_y: 0.0,
        w_c: 0.0,
        ..config.weights
    };
    if weights.w_r + weights.w_kl == 0.0 {
        return Err(Error::config("weights", "pre-training needs w_r or w_kl"));
    }
    let objective = Objective {
        weights,
        outcomes: None,
        target: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Adam::new(&model.params, config.learning_rate, config.weight_decay);
    let mut history = TrainingHistory::default();
    for epoch in 0..config.epochs {
        let log = run_epoch(
            model,
            cohort,
            &objective,
            &mut opt,
            config.batch_size,
            epoch,
            &mut rng,
        )?;
        log::debug!(
            "pretrain epoch {epoch}: L_r {:.5} L_KL {:.3}",
            log.recon,
            log.kl
        );
        history.epochs.push(log);
        maybe_checkpoint(model, config, "pretrain", epoch)?;
    }
    Ok(history)
}

#[derive(Debug, Clone)]
pub struct ClusterFit {
    pub history: TrainingHistory,
    /// Final full-cohort soft assignments.
    pub q: Array2<f64>,
    pub labels: Vec<usize>,
}

fn confident_fraction(q: &Array2<f64>) -> f64 {
    let n = q.nrows().max(1) as f64;
    q.outer_iter()
        .filter(|row| row.iter().cloned().fold(0.0, f64::max) > CONFIDENT_Q)
        .count() as f64
        / n
}

/// Joint fine-tuning of the full objective.
///
/// The target distribution is recomputed from full-cohort evaluation-mode
/// assignments at the start of every epoch. Centroids must already be
/// placed, e.g. by [`Model::init_centroids`].
pub fn finetune_cluster(
    model: &mut Model,
    cohort: &Cohort,
    outcomes: &[SurvivalOutcome],
    config: &TrainConfig,
) -> Result<ClusterFit> {
    config.validate()?;
    if outcomes.len() != cohort.n_patients() {
        return Err(Error::input(format!(
            "{} outcomes for {} patients",
            outcomes.len(),
            cohort.n_patients()
        )));
    }
    let centroids = model.centroids();
    for a in 0..centroids.nrows() {
        for b in 0..a {
            if centroids.row(a) == centroids.row(b) {
                return Err(Error::input(format!(
                    "centroids {b} and {a} coincide; initialise centroids first"
                )));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Adam::new(&model.params, config.learning_rate, config.weight_decay);
    let mut history = TrainingHistory::default();
    let eval_batch = config.batch_size.max(1024);
    let mut q = model.assignments(&model.embed(cohort, eval_batch)?);
    for epoch in 0..config.epochs {
        let target = target_distribution(&q)?;
        let objective = Objective {
            weights: config.weights,
            outcomes: Some(outcomes),
            target: Some(&target),
        };
        let mut log = run_epoch(
            model,
            cohort,
            &objective,
            &mut opt,
            config.batch_size,
            epoch,
            &mut rng,
        )?;
        q = model.assignments(&model.embed(cohort, eval_batch)?);
        log.confident = Some(confident_fraction(&q));
        log::debug!(
            "finetune epoch {epoch}: total {:.5} L_c {:.5} confident {:.3}",
            log.total,
            log.cluster,
            log.confident.unwrap_or(0.0)
        );
        history.epochs.push(log);
        maybe_checkpoint(model, config, "finetune", epoch)?;
    }
    let labels = hard_labels(&q);
    Ok(ClusterFit { history, q, labels })
}

/// Shuffles `0..n` with the given RNG and splits off the first
/// `round(fraction * n)` indices for training.
pub fn split_indices(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let order = fisher_yates(n, rng);
    let cut = ((fraction * n as f64).round() as usize).clamp(usize::from(n > 0), n);
    (order[..cut].to_vec(), order[cut..].to_vec())
}

/// Mean and population standard deviation of each named metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len();
    if n == 0 {
        return MetricSummary {
            mean: f64::NAN,
            std: f64::NAN,
            n,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    MetricSummary {
        mean,
        std: var.sqrt(),
        n,
    }
}

/// Runs `run(repeat, seed)` for each repeat with seeds derived from
/// `base_seed`, then summarises every metric the runs report.
pub fn repeated_runs<F>(
    n_repeats: usize,
    base_seed: u64,
    mut run: F,
) -> Result<BTreeMap<String, MetricSummary>>
where
    F: FnMut(usize, u64) -> Result<BTreeMap<String, f64>>,
{
    if n_repeats == 0 {
        return Err(Error::config("n_repeats", "must be at least 1"));
    }
    let mut collected: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in 0..n_repeats {
        for (name, v) in run(r, repeat_seed(base_seed, r))? {
            collected.entry(name).or_default().push(v);
        }
    }
    Ok(collected
        .into_iter()
        .map(|(k, v)| (k, summarize(&v)))
        .collect())
}

/// Seed of repeat `r`; distinct repeats get well-separated streams.
pub fn repeat_seed(base_seed: u64, r: usize) -> u64 {
    base_seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
