//! The clustering model: a variational autoencoder whose latent code also
//! feeds a linear Cox risk head and a Student-t cluster layer.
//!
//! Two encoders are available. The feedforward encoder treats each patient
//! as one static vector and is paired with a mirrored dense decoder. The
//! recurrent encoder embeds every window, runs a stacked bidirectional GRU
//! and aggregates the final states; its GRU decoder starts from `z` and
//! reconstructs windows last-to-first, reading the next window as teacher
//! input and a learned start token for the last window.

use std::fs;
use std::path::Path;
use std::rc::Rc;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    bidirectional_gru, dense, gru_cell, reparameterize, Activation, Function, Graph, GruParams,
    GruVars, Mode, ParamId, ParamSet, Var,
};
use crate::baselines::{kmeans_plus_plus, lloyd};
use crate::ehr::{ColumnKind, FeatureLayout, TrajectoryTensor};
use crate::error::{Error, Result};

/// Lloyd iteration cap when placing centroids.
pub const CENTROID_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Feedforward,
    Recurrent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_width: usize,
    pub n_windows: usize,
    pub embed_width: usize,
    pub latent_width: usize,
    pub n_gru_layers: usize,
    pub dropout_p: f64,
    pub n_clusters: usize,
    pub encoder_kind: EncoderKind,
    /// Columns reconstructed through a sigmoid.
    pub binary_columns: Vec<bool>,
}

impl ModelConfig {
    /// Feedforward model over static rows described by `layout`.
    pub fn feedforward(
        layout: &FeatureLayout,
        embed_width: usize,
        latent_width: usize,
        n_clusters: usize,
    ) -> Self {
        Self {
            input_width: layout.width(),
            n_windows: 1,
            embed_width,
            latent_width,
            n_gru_layers: 0,
            dropout_p: 0.0,
            n_clusters,
            encoder_kind: EncoderKind::Feedforward,
            binary_columns: binary_flags(layout),
        }
    }

    /// Recurrent model over `n_windows` windows described by `layout`.
    pub fn recurrent(
        layout: &FeatureLayout,
        n_windows: usize,
        embed_width: usize,
        latent_width: usize,
        n_clusters: usize,
    ) -> Self {
        Self {
            input_width: layout.width(),
            n_windows,
            embed_width,
            latent_width,
            n_gru_layers: 2,
            dropout_p: 0.1,
            n_clusters,
            encoder_kind: EncoderKind::Recurrent,
            binary_columns: binary_flags(layout),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_width", self.input_width),
            ("n_windows", self.n_windows),
            ("embed_width", self.embed_width),
            ("latent_width", self.latent_width),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.latent_width >= self.input_width * self.n_windows {
            return Err(Error::config(
                "latent_width",
                format!(
                    "{} does not compress {} inputs",
                    self.latent_width,
                    self.input_width * self.n_windows
                ),
            ));
        }
        if self.n_clusters < 2 {
            return Err(Error::config("n_clusters", "need at least 2 clusters"));
        }
        if self.binary_columns.len() != self.input_width {
            return Err(Error::config(
                "binary_columns",
                "length differs from input_width",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config("dropout_p", "must lie in [0, 1)"));
        }
        match self.encoder_kind {
            EncoderKind::Feedforward if self.n_windows != 1 => Err(Error::config(
                "n_windows",
                "the feedforward encoder reads a single window",
            )),
            EncoderKind::Recurrent if self.n_gru_layers == 0 => Err(Error::config(
                "n_gru_layers",
                "the recurrent encoder needs a GRU layer",
            )),
            _ => Ok(()),
        }
    }
}

fn binary_flags(layout: &FeatureLayout) -> Vec<bool> {
    layout
        .kinds
        .iter()
        .map(|&k| k == ColumnKind::Binary)
        .collect()
}

/// Patients stored window-major: `windows[t]` holds window `t` of every
/// patient as one row.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub windows: Vec<Array2<f64>>,
    /// Entries that count towards the reconstruction loss.
    pub valid: Vec<Array2<bool>>,
}

impl Cohort {
    /// Static rows as a single fully observed window.
    pub fn from_static(features: ArrayView2<f64>) -> Self {
        Self {
            valid: vec![Array2::from_elem(features.raw_dim(), true)],
            windows: vec![features.to_owned()],
        }
    }

    /// Static rows cut into `n_windows` contiguous equal-width windows, all
    /// observed.
    pub fn from_static_windows(features: ArrayView2<f64>, n_windows: usize) -> Result<Self> {
        let d = features.ncols();
        if n_windows == 0 || !d.is_multiple_of(n_windows) {
            return Err(Error::config(
                "n_windows",
                format!("{d} features cannot be split into {n_windows} equal windows"),
            ));
        }
        let w = d / n_windows;
        let windows: Vec<Array2<f64>> = (0..n_windows)
            .map(|t| features.slice(s![.., t * w..(t + 1) * w]).to_owned())
            .collect();
        Ok(Self {
            valid: vec![Array2::from_elem((features.nrows(), w), true); n_windows],
            windows,
        })
    }

    /// Trajectories of equal length; unequal lengths are rejected.
    pub fn from_trajectories(
        trajectories: &[TrajectoryTensor],
        layout: &FeatureLayout,
    ) -> Result<Self> {
        let Some(first) = trajectories.first() else {
            return Err(Error::input("empty cohort"));
        };
        let (t_len, width) = first.windows.dim();
        let n = trajectories.len();
        let mut windows = vec![Array2::zeros((n, width)); t_len];
        let mut valid = vec![Array2::from_elem((n, width), false); t_len];
        for (i, traj) in trajectories.iter().enumerate() {
            traj.validate(layout)?;
            if traj.windows.dim() != (t_len, width) {
                return Err(Error::Patient {
                    patient: i.to_string(),
                    reason: format!(
                        "trajectory shape {:?} differs from {:?}; align trajectories first",
                        traj.windows.dim(),
                        (t_len, width)
                    ),
                });
            }
            for t in 0..t_len {
                windows[t].row_mut(i).assign(&traj.windows.row(t));
                for j in 0..width {
                    valid[t][[i, j]] = traj.entry_observed(layout, t, j);
                }
            }
        }
        Ok(Self { windows, valid })
    }

    pub fn n_patients(&self) -> usize {
        self.windows.first().map_or(0, |w| w.nrows())
    }

    pub fn n_windows(&self) -> usize {
        self.windows.len()
    }

    pub fn width(&self) -> usize {
        self.windows.first().map_or(0, |w| w.ncols())
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            windows: self
                .windows
                .iter()
                .map(|w| w.select(Axis(0), idx))
                .collect(),
            valid: self.valid.iter().map(|v| v.select(Axis(0), idx)).collect(),
        }
    }

    /// Windows stacked time-major, matching [`Model::decode`].
    pub fn stacked(&self) -> (Array2<f64>, Array2<bool>) {
        let x = ndarray::concatenate(
            Axis(0),
            &self.windows.iter().map(|w| w.view()).collect::<Vec<_>>(),
        )
        .expect("equal widths");
        let v = ndarray::concatenate(
            Axis(0),
            &self.valid.iter().map(|w| w.view()).collect::<Vec<_>>(),
        )
        .expect("equal widths");
        (x, v)
    }
}

/// Weight and bias of one dense layer.
#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    fn new(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let bound = (6.0 / (input + output) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let w = Array2::from_shape_simple_fn((input, output), || dist.sample(rng));
        Ok(Self {
            w: params.add(&format!("{name}.w"), w, true, true)?,
            b: params.add(
                &format!("{name}.b"),
                Array2::zeros((1, output)),
                true,
                false,
            )?,
        })
    }

    fn bind(&self, g: &mut Graph, params: &ParamSet) -> (Var, Var) {
        (g.param(params, self.w), g.param(params, self.b))
    }

    fn apply(&self, g: &mut Graph, params: &ParamSet, x: Var, act: Activation) -> Result<Var> {
        let (w, b) = self.bind(g, params);
        dense(g, x, w, b, act)
    }
}

#[derive(Debug, Clone)]
enum Architecture {
    Feedforward {
        enc: [Linear; 2],
        dec: [Linear; 2],
    },
    Recurrent {
        embed: [Linear; 2],
        gru: Vec<[GruParams; 2]>,
        aggregate: Linear,
        dec_in: Linear,
        dec_gru: GruParams,
        start: ParamId,
    },
}

/// Latent statistics of a batch.
#[derive(Debug, Clone, Copy)]
pub struct Latent {
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
}

/// Model configuration together with its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    arch: Architecture,
    mu_head: Linear,
    logvar_head: Linear,
    out_head: Linear,
    risk_head: Linear,
    centroids: ParamId,
    binary: Rc<Vec<bool>>,
}

impl Model {
    /// Registers every parameter in a fixed order, so the same RNG state
    /// always yields the same model.
    pub fn new(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut p = ParamSet::new();
        let (w, e, l) = (config.input_width, config.embed_width, config.latent_width);
        let (arch, head_in, out_in) = match config.encoder_kind {
            EncoderKind::Feedforward => {
                let enc = [
                    Linear::new(&mut p, "enc.0", w, e, rng)?,
                    Linear::new(&mut p, "enc.1", e, e, rng)?,
                ];
                let dec = [
                    Linear::new(&mut p, "dec.0", l, e, rng)?,
                    Linear::new(&mut p, "dec.1", e, e, rng)?,
                ];
                (Architecture::Feedforward { enc, dec }, e, e)
            }
            EncoderKind::Recurrent => {
                let embed = [
                    Linear::new(&mut p, "embed.0", w, e, rng)?,
                    Linear::new(&mut p, "embed.1", e, e, rng)?,
                ];
                let mut gru = Vec::with_capacity(config.n_gru_layers);
                for layer in 0..config.n_gru_layers {
                    let input = if layer == 0 { e } else { 2 * e };
                    gru.push([
                        GruParams::new(&mut p, &format!("gru.{layer}.fwd"), input, e, rng)?,
                        GruParams::new(&mut p, &format!("gru.{layer}.bwd"), input, e, rng)?,
                    ]);
                }
                let aggregate =
                    Linear::new(&mut p, "aggregate", 2 * config.n_gru_layers * e, e, rng)?;
                let dec_in = Linear::new(&mut p, "dec.in", w, e, rng)?;
                let dec_gru = GruParams::new(&mut p, "dec.gru", e, l, rng)?;
                let start = p.add("dec.start", Array2::zeros((1, e)), true, false)?;
                let arch = Architecture::Recurrent {
                    embed,
                    gru,
                    aggregate,
                    dec_in,
                    dec_gru,
                    start,
                };
                (arch, e, l)
            }
        };
        let mu_head = Linear::new(&mut p, "mu", head_in, l, rng)?;
        let logvar_head = Linear::new(&mut p, "logvar", head_in, l, rng)?;
        let out_head = Linear::new(&mut p, "out", out_in, w, rng)?;
        let risk_head = Linear::new(&mut p, "risk", l, 1, rng)?;
        let centroids = p.add(
            "centroids",
            Array2::zeros((config.n_clusters, l)),
            true,
            false,
        )?;
        let binary = Rc::new(config.binary_columns.clone());
        Ok(Self {
            config,
            params: p,
            arch,
            mu_head,
            logvar_head,
            out_head,
            risk_head,
            centroids,
            binary,
        })
    }

    /// Copy of this model with `k` unplaced centroids; every other
    /// parameter is carried over.
    pub fn with_n_clusters(&self, k: usize) -> Result<Self> {
        let config = ModelConfig {
            n_clusters: k,
            ..self.config.clone()
        };
        let mut rng = rand::SeedableRng::seed_from_u64(0);
        let mut model = Model::new(config, &mut rng)?;
        for id in self.params.ids() {
            if id == self.centroids {
                continue;
            }
            let target = model.params.id(self.params.name(id)).expect("same layout");
            model.params.set(target, self.params.value(id).clone())?;
            model
                .params
                .set_trainable(target, self.params.is_trainable(id));
        }
        Ok(model)
    }

    pub fn centroids_id(&self) -> ParamId {
        self.centroids
    }

    pub fn centroids(&self) -> &Array2<f64> {
        self.params.value(self.centroids)
    }

    fn check_batch(&self, batch: &Cohort) -> Result<()> {
        if batch.width() != self.config.input_width || batch.n_windows() != self.config.n_windows {
            return Err(Error::Shape {
                op: "encode",
                left: (batch.n_windows(), batch.width()),
                right: (self.config.n_windows, self.config.input_width),
            });
        }
        if batch.n_patients() == 0 {
            return Err(Error::input("empty batch"));
        }
        Ok(())
    }

    /// Latent code of a batch. Training mode samples `z` by
    /// reparameterization; evaluation mode returns `z = mu`.
    pub fn encode(&self, g: &mut Graph, batch: &Cohort, mode: &mut Mode<'_>) -> Result<Latent> {
        self.check_batch(batch)?;
        let p = &self.params;
        let hidden = match &self.arch {
            Architecture::Feedforward { enc, .. } => {
                let x = g.input(batch.windows[0].clone());
                let h = enc[0].apply(g, p, x, Activation::Relu)?;
                enc[1].apply(g, p, h, Activation::Relu)?
            }
            Architecture::Recurrent {
                embed,
                gru,
                aggregate,
                ..
            } => {
                let e0 = embed[0].bind(g, p);
                let e1 = embed[1].bind(g, p);
                let mut seq = Vec::with_capacity(batch.n_windows());
                for w in &batch.windows {
                    let x = g.input(w.clone());
                    let h = dense(g, x, e0.0, e0.1, Activation::Relu)?;
                    seq.push(dense(g, h, e1.0, e1.1, Activation::Relu)?);
                }
                let layers: Vec<[GruVars; 2]> = gru
                    .iter()
                    .map(|[f, b]| [f.bind(g, p), b.bind(g, p)])
                    .collect();
                let out = bidirectional_gru(g, &seq, &layers, self.config.dropout_p, mode)?;
                let finals = g.concat_cols(&out.finals)?;
                aggregate.apply(g, p, finals, Activation::Relu)?
            }
        };
        let mu = self.mu_head.apply(g, p, hidden, Activation::Identity)?;
        let logvar = self.logvar_head.apply(g, p, hidden, Activation::Identity)?;
        let z = match mode {
            Mode::Train(rng) => {
                let noise = Array2::from_shape_simple_fn(g.value(mu).raw_dim(), || {
                    rng.sample(StandardNormal)
                });
                reparameterize(g, mu, logvar, noise)?
            }
            Mode::Eval => mu,
        };
        Ok(Latent { mu, logvar, z })
    }

    /// Reconstruction of every window, stacked time-major like
    /// [`Cohort::stacked`]. Binary columns pass through a sigmoid.
    pub fn decode(&self, g: &mut Graph, z: Var, batch: &Cohort) -> Result<Var> {
        let (b, l) = g.shape(z);
        if l != self.config.latent_width {
            return Err(Error::Shape {
                op: "decode",
                left: (b, l),
                right: (b, self.config.latent_width),
            });
        }
        if batch.n_windows() != self.config.n_windows || batch.n_patients() != b {
            return Err(Error::input(format!(
                "teacher sequence of {} windows x {} patients, expected {} x {b}",
                batch.n_windows(),
                batch.n_patients(),
                self.config.n_windows
            )));
        }
        let p = &self.params;
        let (ow, ob) = self.out_head.bind(g, p);
        match &self.arch {
            Architecture::Feedforward { dec, .. } => {
                let h = dec[0].apply(g, p, z, Activation::Relu)?;
                let h = dec[1].apply(g, p, h, Activation::Relu)?;
                let y = dense(g, h, ow, ob, Activation::Identity)?;
                g.sigmoid_columns(y, self.binary.clone())
            }
            Architecture::Recurrent {
                dec_in,
                dec_gru,
                start,
                ..
            } => {
                let t_len = batch.n_windows();
                let (iw, ib) = dec_in.bind(g, p);
                let cell = dec_gru.bind(g, p);
                let start = g.param(p, *start);
                let zeros = g.input(Array2::zeros((b, self.config.embed_width)));
                let start_rows = g.add_bias(zeros, start)?;
                let mut outputs = vec![z; t_len];
                let mut h = z;
                for i in (0..t_len).rev() {
                    let teacher = if i + 1 == t_len {
                        start_rows
                    } else {
                        let x = g.input(batch.windows[i + 1].clone());
                        dense(g, x, iw, ib, Activation::Relu)?
                    };
                    h = gru_cell(g, teacher, h, &cell)?;
                    let y = dense(g, h, ow, ob, Activation::Identity)?;
                    outputs[i] = g.sigmoid_columns(y, self.binary.clone())?;
                }
                g.concat_rows(&outputs)
            }
        }
    }

    /// Linear risk score, one row per patient.
    pub fn predict_risk(&self, g: &mut Graph, z: Var) -> Result<Var> {
        self.risk_head
            .apply(g, &self.params, z, Activation::Identity)
    }

    /// Student-t soft assignment of each row of `z` to the centroids.
    pub fn soft_assign(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let c = g.param(&self.params, self.centroids);
        g.apply(Box::new(SoftAssign), &[z, c])
    }

    /// Evaluation-mode latent means, computed in batches.
    pub fn embed(&self, cohort: &Cohort, batch_size: usize) -> Result<Array2<f64>> {
        let n = cohort.n_patients();
        let mut out = Array2::zeros((n, self.config.latent_width));
        for start in (0..n).step_by(batch_size.max(1)) {
            let end = (start + batch_size.max(1)).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let mut g = Graph::new();
            let lat = self.encode(&mut g, &cohort.select(&idx), &mut Mode::Eval)?;
            out.slice_mut(s![start..end, ..]).assign(g.value(lat.mu));
        }
        Ok(out)
    }

    /// Evaluation-mode risk scores.
    pub fn risks(&self, embeddings: &Array2<f64>) -> Vec<f64> {
        let w = self.params.value(self.risk_head.w);
        let b = self.params.value(self.risk_head.b)[[0, 0]];
        embeddings.dot(w).iter().map(|r| r + b).collect()
    }

    /// Evaluation-mode soft assignments.
    pub fn assignments(&self, embeddings: &Array2<f64>) -> Array2<f64> {
        soft_assign(embeddings, self.centroids())
    }

    /// Places the centroids by k-means on `embeddings`.
    pub fn init_centroids(&mut self, embeddings: &Array2<f64>, rng: &mut ChaCha8Rng) -> Result<()> {
        let c = init_centroids(embeddings, self.config.n_clusters, rng)?;
        self.params.set(self.centroids, c)
    }

    /// Writes `params.txt` and `model.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.params.save(&dir.join("params.txt"))?;
        fs::write(
            dir.join("model.json"),
            serde_json::to_string_pretty(&self.config)?,
        )?;
        Ok(())
    }

    /// Rebuilds the model from [`Model::save`] output.
    pub fn load(dir: &Path) -> Result<Self> {
        let config: ModelConfig =
            serde_json::from_str(&crate::error::read_text(&dir.join("model.json"))?)?;
        let params = ParamSet::load(&dir.join("params.txt"))?;
        let mut rng = rand::SeedableRng::seed_from_u64(0);
        let mut model = Model::new(config, &mut rng)?;
        if params.len() != model.params.len() {
            return Err(Error::Parse(
                "checkpoint does not match the model layout".into(),
            ));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            let value = params
                .get(&name)
                .ok_or_else(|| Error::Parse(format!("checkpoint lacks {name}")))?;
            model.params.set(id, value.clone())?;
        }
        Ok(model)
    }
}

fn squared_distances(z: ArrayView2<f64>, centroids: ArrayView2<f64>) -> Array2<f64> {
    Array2::from_shape_fn((z.nrows(), centroids.nrows()), |(n, k)| {
        z.row(n)
            .iter()
            .zip(centroids.row(k).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    })
}

/// `q_nk ∝ (1 + ||z_n - λ_k||²)^(-1/2)`, rows summing to 1.
pub fn soft_assign(z: &Array2<f64>, centroids: &Array2<f64>) -> Array2<f64> {
    let mut q = squared_distances(z.view(), centroids.view()).mapv(|d| 1.0 / (1.0 + d).sqrt());
    for mut row in q.outer_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    q
}

/// Graph form of [`soft_assign`]; inputs are `z` and the centroids.
#[derive(Debug)]
pub struct SoftAssign;

impl Function for SoftAssign {
    fn name(&self) -> &'static str {
        "soft_assign"
    }

    fn forward(&self, inputs: &[&Array2<f64>]) -> Result<Array2<f64>> {
        let (z, c) = (inputs[0], inputs[1]);
        if z.ncols() != c.ncols() {
            return Err(Error::Shape {
                op: "soft_assign",
                left: z.dim(),
                right: c.dim(),
            });
        }
        if c.nrows() < 2 {
            return Err(Error::config("n_clusters", "need at least 2 clusters"));
        }
        Ok(soft_assign(z, c))
    }

    fn backward(
        &self,
        inputs: &[&Array2<f64>],
        q: &Array2<f64>,
        grad: &Array2<f64>,
    ) -> Vec<Array2<f64>> {
        let (z, c) = (inputs[0], inputs[1]);
        let d = squared_distances(z.view(), c.view());
        // a_nk = dL/dd_nk
        let mut a = Array2::zeros(q.raw_dim());
        for n in 0..q.nrows() {
            let gq: f64 = (0..q.ncols()).map(|k| grad[[n, k]] * q[[n, k]]).sum();
            for k in 0..q.ncols() {
                a[[n, k]] = -0.5 * (grad[[n, k]] - gq) * q[[n, k]] / (1.0 + d[[n, k]]);
            }
        }
        let row_sum = a.sum_axis(Axis(1)).insert_axis(Axis(1));
        let col_sum = a.sum_axis(Axis(0)).insert_axis(Axis(1));
        let gz = (z * &row_sum - a.dot(c)) * 2.0;
        let gc = (c * &col_sum - a.t().dot(z)) * 2.0;
        vec![gz, gc]
    }
}

/// Sharpened targets `p_nk ∝ q_nk² / f_k` with `f_k = Σ_n q_nk`.
///
/// A cluster whose soft frequency `f_k` vanishes is degenerate.
pub fn target_distribution(q: &Array2<f64>) -> Result<Array2<f64>> {
    let f = q.sum_axis(Axis(0));
    if let Some(k) = f.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::DegenerateCluster { cluster: k });
    }
    let mut p = q.mapv(|v| v * v) / &f;
    for mut row in p.outer_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    Ok(p)
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn hard_labels(q: &Array2<f64>) -> Vec<usize> {
    q.outer_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| {
                    if v > best.1 {
                        (k, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

/// k-means++ seeding followed by Lloyd iterations.
pub fn init_centroids(
    embeddings: &Array2<f64>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    if embeddings.nrows() < k {
        return Err(Error::input(format!(
            "{} embeddings cannot seed {k} centroids",
            embeddings.nrows()
        )));
    }
    let seeds = kmeans_plus_plus(embeddings.view(), k, rng);
    Ok(lloyd(embeddings.view(), seeds, CENTROID_MAX_ITER).centroids)
}

/// Writes `patient_id,hard_label,q_1..q_K`.
pub fn write_assignments_csv(path: &Path, ids: &[String], q: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["patient_id".to_string(), "hard_label".to_string()];
    header.extend((1..=q.ncols()).map(|k| format!("q_{k}")));
    w.write_record(&header)?;
    for ((id, row), label) in ids.iter().zip(q.outer_iter()).zip(hard_labels(q)) {
        let mut rec = vec![id.clone(), label.to_string()];
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
