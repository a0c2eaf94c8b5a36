//! Loss terms: masked mixed-type reconstruction, Gaussian KL, Cox partial
//! likelihood and the self-training cluster divergence.
//!
//! Each term has a plain evaluation function and a [`Function`] wrapper that
//! carries its analytic gradient into a [`Graph`].

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Function, Graph, Var};
use crate::error::{Error, Result};
use crate::SurvivalOutcome;

/// Clamp for binary predictions inside the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub w_r: f64,
    pub w_y: f64,
    pub w_c: f64,
    pub w_kl: f64,
    /// Binary cross-entropy weight relative to the continuous MSE.
    #[serde(default = "default_w_b")]
    pub w_b: f64,
}

fn default_w_b() -> f64 {
    1.0
}

/// Named weight presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    ReconOnly,
    OutcomeOnly,
    Combined,
    Custom,
}

impl Scenario {
    pub const PRESETS: [Scenario; 3] = [
        Scenario::ReconOnly,
        Scenario::OutcomeOnly,
        Scenario::Combined,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::ReconOnly => "recon_only",
            Scenario::OutcomeOnly => "outcome_only",
            Scenario::Combined => "combined",
            Scenario::Custom => "custom",
        }
    }

    /// Preset weights; `None` for `Custom`.
    pub fn weights(self) -> Option<LossWeights> {
        let (w_r, w_y) = match self {
            Scenario::ReconOnly => (0.5, 0.0),
            Scenario::OutcomeOnly => (0.0, 1.0),
            Scenario::Combined => (0.05, 1.0),
            Scenario::Custom => return None,
        };
        Some(LossWeights {
            w_r,
            w_y,
            w_c: 0.25,
            w_kl: 1e-5,
            w_b: 1.0,
        })
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recon_only" => Ok(Scenario::ReconOnly),
            "outcome_only" => Ok(Scenario::OutcomeOnly),
            "combined" => Ok(Scenario::Combined),
            "custom" => Ok(Scenario::Custom),
            other => Err(Error::config(
                "scenario",
                format!("{other:?} is not one of recon_only, outcome_only, combined, custom"),
            )),
        }
    }
}

impl LossWeights {
    /// Reconstruction and KL only, as used before clustering.
    pub fn pretraining(w_kl: f64) -> Self {
        Self {
            w_r: 1.0,
            w_y: 0.0,
            w_c: 0.0,
            w_kl,
            w_b: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("w_r", self.w_r),
            ("w_y", self.w_y),
            ("w_c", self.w_c),
            ("w_kl", self.w_kl),
            ("w_b", self.w_b),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::config(
                    name,
                    format!("weight {w} must be finite and non-negative"),
                ));
            }
        }
        if self.w_r + self.w_y + self.w_c + self.w_kl == 0.0 {
            return Err(Error::config(
                "weights",
                "at least one loss weight must be positive",
            ));
        }
        Ok(())
    }
}

/// Unweighted loss values of one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub recon: f64,
    pub kl: f64,
    pub cox: f64,
    pub cluster: f64,
}

/// `w_r L_r + w_kl L_KL + w_y L_y + w_c L_c`.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    for (name, v) in [
        ("recon", c.recon),
        ("kl", c.kl),
        ("cox", c.cox),
        ("cluster", c.cluster),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: format!("{name} loss"),
            });
        }
    }
    Ok(w.w_r * c.recon + w.w_kl * c.kl + w.w_y * c.cox + w.w_c * c.cluster)
}

fn check_same(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::Shape {
            op,
            left: a,
            right: b,
        });
    }
    Ok(())
}

/// Masked reconstruction loss: MSE over valid continuous entries plus
/// `w_b` times BCE over valid binary entries. An empty term contributes 0.
pub fn recon_loss(
    x: &Array2<f64>,
    x_hat: &Array2<f64>,
    valid: &Array2<bool>,
    binary: &[bool],
    w_b: f64,
) -> Result<f64> {
    let (cont, bin, n_cont, n_bin) = recon_parts(x, x_hat, valid, binary)?;
    Ok(mean(cont, n_cont) + w_b * mean(bin, n_bin))
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn recon_parts(
    x: &Array2<f64>,
    x_hat: &Array2<f64>,
    valid: &Array2<bool>,
    binary: &[bool],
) -> Result<(f64, f64, usize, usize)> {
    check_same("recon_loss", x.dim(), x_hat.dim())?;
    check_same("recon_loss mask", x.dim(), valid.dim())?;
    if binary.len() != x.ncols() {
        return Err(Error::Shape {
            op: "recon_loss columns",
            left: x.dim(),
            right: (1, binary.len()),
        });
    }
    let (mut cont, mut bin, mut n_cont, mut n_bin) = (0.0, 0.0, 0usize, 0usize);
    for ((row, hrow), vrow) in x
        .outer_iter()
        .zip(x_hat.outer_iter())
        .zip(valid.outer_iter())
    {
        for (j, &is_bin) in binary.iter().enumerate() {
            if !vrow[j] {
                continue;
            }
            let (t, p) = (row[j], hrow[j]);
            if is_bin {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::input(format!(
                        "binary prediction {p} outside [0, 1]"
                    )));
                }
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                bin -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
                n_bin += 1;
            } else {
                cont += (p - t) * (p - t);
                n_cont += 1;
            }
        }
    }
    Ok((cont, bin, n_cont, n_bin))
}

/// Graph form of [`recon_loss`]; the single input is `x_hat`.
#[derive(Debug)]
pub struct ReconLoss {
    pub target: Array2<f64>,
    pub valid: Array2<bool>,
    pub binary: Vec<bool>,
    pub w_b: f64,
}

impl Function for ReconLoss {
    fn name(&self) -> &'static str {
        "recon_loss"
    }

    fn forward(&self, inputs: &[&Array2<f64>]) -> Result<Array2<f64>> {
        let v = recon_loss(&self.target, inputs[0], &self.valid, &self.binary, self.w_b)?;
        Ok(Array2::from_elem((1, 1), v))
    }

    fn backward(
        &self,
        inputs: &[&Array2<f64>],
        _output: &Array2<f64>,
        grad: &Array2<f64>,
    ) -> Vec<Array2<f64>> {
        let x_hat = inputs[0];
        let (mut n_cont, mut n_bin) = (0usize, 0usize);
        for vrow in self.valid.outer_iter() {
            for (&v, &b) in vrow.iter().zip(&self.binary) {
                if v {
                    if b {
                        n_bin += 1
                    } else {
                        n_cont += 1
                    }
                }
            }
        }
        let g = grad[[0, 0]];
        let c_scale = if n_cont > 0 {
            2.0 * g / n_cont as f64
        } else {
            0.0
        };
        let b_scale = if n_bin > 0 {
            self.w_b * g / n_bin as f64
        } else {
            0.0
        };
        let mut out = Array2::zeros(x_hat.raw_dim());
        for (i, mut orow) in out.outer_iter_mut().enumerate() {
            for (j, &is_bin) in self.binary.iter().enumerate() {
                if !self.valid[[i, j]] {
                    continue;
                }
                let (t, p) = (self.target[[i, j]], x_hat[[i, j]]);
                orow[j] = if is_bin {
                    if (BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                        b_scale * (p - t) / (p * (1.0 - p))
                    } else {
                        0.0
                    }
                } else {
                    c_scale * (p - t)
                };
            }
        }
        vec![out]
    }
}

/// `-1/2 Σ_d (1 + logvar - mu² - exp(logvar))`, averaged over rows.
pub fn kl_loss(mu: &Array2<f64>, logvar: &Array2<f64>) -> Result<f64> {
    check_same("kl_loss", mu.dim(), logvar.dim())?;
    let n = mu.nrows().max(1) as f64;
    let mut total = 0.0;
    Zip::from(mu)
        .and(logvar)
        .for_each(|&m, &l| total += -0.5 * (1.0 + l - m * m - l.exp()));
    Ok(total / n)
}

/// Graph form of [`kl_loss`]; inputs are `mu` and `logvar`.
#[derive(Debug)]
pub struct KlLoss;

impl Function for KlLoss {
    fn name(&self) -> &'static str {
        "kl_loss"
    }

    fn forward(&self, inputs: &[&Array2<f64>]) -> Result<Array2<f64>> {
        Ok(Array2::from_elem((1, 1), kl_loss(inputs[0], inputs[1])?))
    }

    fn backward(
        &self,
        inputs: &[&Array2<f64>],
        _output: &Array2<f64>,
        grad: &Array2<f64>,
    ) -> Vec<Array2<f64>> {
        let s = grad[[0, 0]] / inputs[0].nrows().max(1) as f64;
        let g_mu = inputs[0] * s;
        let g_lv = inputs[1].mapv(|l| -0.5 * (1.0 - l.exp()) * s);
        vec![g_mu, g_lv]
    }
}

/// Per-patient quantities shared by the Cox value and gradient.
struct CoxTerms {
    loss: f64,
    /// `log Σ_{j: s_j ≥ s_n} exp(r_j)` per patient.
    log_risk_set: Vec<f64>,
    n_events: usize,
}

fn check_cox(risks: &[f64], outcomes: &[SurvivalOutcome]) -> Result<()> {
    if risks.len() != outcomes.len() {
        return Err(Error::Shape {
            op: "cox_loss",
            left: (risks.len(), 1),
            right: (outcomes.len(), 1),
        });
    }
    if risks.is_empty() {
        return Err(Error::input("Cox loss of an empty batch"));
    }
    if let Some(o) = outcomes.iter().find(|o| !(o.time > 0.0)) {
        return Err(Error::input(format!(
            "survival time {} is not positive",
            o.time
        )));
    }
    Ok(())
}

/// Patient indices ordered by decreasing time.
fn descending_order(outcomes: &[SurvivalOutcome]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..outcomes.len()).collect();
    order.sort_by(|&a, &b| outcomes[b].time.total_cmp(&outcomes[a].time));
    order
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn cox_terms(risks: &[f64], outcomes: &[SurvivalOutcome]) -> CoxTerms {
    let order = descending_order(outcomes);
    let mut log_risk_set = vec![0.0; risks.len()];
    let mut running = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let t = outcomes[order[i]].time;
        let mut j = i;
        while j < order.len() && outcomes[order[j]].time == t {
            running = log_add(running, risks[order[j]]);
            j += 1;
        }
        for &n in &order[i..j] {
            log_risk_set[n] = running;
        }
        i = j;
    }
    let mut sum = 0.0;
    let mut n_events = 0;
    for (n, o) in outcomes.iter().enumerate() {
        if o.event {
            sum += risks[n] - log_risk_set[n];
            n_events += 1;
        }
    }
    CoxTerms {
        loss: -sum / risks.len() as f64,
        log_risk_set,
        n_events,
    }
}

/// Negative Cox partial log-likelihood averaged over the batch.
///
/// Risk sets are `{j : s_j ≥ s_n}`, so tied times share a risk set. A batch
/// without events has no likelihood contribution and returns 0.
pub fn cox_loss(risks: &[f64], outcomes: &[SurvivalOutcome]) -> Result<f64> {
    check_cox(risks, outcomes)?;
    let terms = cox_terms(risks, outcomes);
    if terms.n_events == 0 {
        log::warn!(
            "Cox loss on a batch of {} censored patients is 0",
            risks.len()
        );
        return Ok(0.0);
    }
    Ok(terms.loss)
}

/// Gradient of [`cox_loss`] with respect to the risks.
pub fn cox_gradient(risks: &[f64], outcomes: &[SurvivalOutcome]) -> Result<Vec<f64>> {
    check_cox(risks, outcomes)?;
    let terms = cox_terms(risks, outcomes);
    let n = risks.len() as f64;
    // b_j = log Σ_{events m with s_m ≤ s_j} exp(-log_risk_set[m])
    let mut order = descending_order(outcomes);
    order.reverse();
    let mut grad = vec![0.0; risks.len()];
    let mut acc = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let t = outcomes[order[i]].time;
        let mut j = i;
        while j < order.len() && outcomes[order[j]].time == t {
            let m = order[j];
            if outcomes[m].event {
                acc = log_add(acc, -terms.log_risk_set[m]);
            }
            j += 1;
        }
        for &k in &order[i..j] {
            let share = if acc == f64::NEG_INFINITY {
                0.0
            } else {
                (risks[k] + acc).exp()
            };
            let event = if outcomes[k].event { 1.0 } else { 0.0 };
            grad[k] = -(event - share) / n;
        }
        i = j;
    }
    Ok(grad)
}

/// Graph form of [`cox_loss`]; the input is an `N x 1` risk column.
#[derive(Debug)]
pub struct CoxLoss {
    pub outcomes: Vec<SurvivalOutcome>,
}

impl Function for CoxLoss {
    fn name(&self) -> &'static str {
        "cox_loss"
    }

    fn forward(&self, inputs: &[&Array2<f64>]) -> Result<Array2<f64>> {
        let risks: Vec<f64> = inputs[0].iter().copied().collect();
        Ok(Array2::from_elem((1, 1), cox_loss(&risks, &self.outcomes)?))
    }

    fn backward(
        &self,
        inputs: &[&Array2<f64>],
        _output: &Array2<f64>,
        grad: &Array2<f64>,
    ) -> Vec<Array2<f64>> {
        let risks: Vec<f64> = inputs[0].iter().copied().collect();
        let g = cox_gradient(&risks, &self.outcomes).expect("validated in forward");
        let g = Array2::from_shape_vec(inputs[0].raw_dim(), g).expect("one gradient per risk");
        vec![g * grad[[0, 0]]]
    }
}

/// `(1/N) Σ_n Σ_k p log(p / q)`; entries with `p = 0` contribute 0.
pub fn cluster_loss(p: &Array2<f64>, q: &Array2<f64>) -> Result<f64> {
    check_same("cluster_loss", p.dim(), q.dim())?;
    if q.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::input("soft assignment with a non-positive entry"));
    }
    let mut total = 0.0;
    Zip::from(p).and(q).for_each(|&pv, &qv| {
        if pv > 0.0 {
            total += pv * (pv / qv).ln();
        }
    });
    Ok(total / p.nrows().max(1) as f64)
}

/// Graph form of [`cluster_loss`] with a fixed target; the input is `Q`.
#[derive(Debug)]
pub struct ClusterLoss {
    pub target: Array2<f64>,
}

impl Function for ClusterLoss {
    fn name(&self) -> &'static str {
        "cluster_loss"
    }

    fn forward(&self, inputs: &[&Array2<f64>]) -> Result<Array2<f64>> {
        Ok(Array2::from_elem(
            (1, 1),
            cluster_loss(&self.target, inputs[0])?,
        ))
    }

    fn backward(
        &self,
        inputs: &[&Array2<f64>],
        _output: &Array2<f64>,
        grad: &Array2<f64>,
    ) -> Vec<Array2<f64>> {
        let s = -grad[[0, 0]] / inputs[0].nrows().max(1) as f64;
        let mut g = self.target.clone();
        Zip::from(&mut g)
            .and(inputs[0])
            .for_each(|gv, &qv| *gv = s * *gv / qv);
        vec![g]
    }
}

/// Adds the weighted loss terms that have positive weight.
///
/// `terms` pairs each weight with its graph node; zero-weight terms are
/// skipped so their inputs need not be computed.
pub fn weighted_total(g: &mut Graph, terms: &[(f64, Option<Var>)]) -> Result<Var> {
    let active: Vec<(Var, f64)> = terms
        .iter()
        .filter_map(|&(w, v)| if w > 0.0 { v.map(|v| (v, w)) } else { None })
        .collect();
    g.weighted_sum(&active)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, ParamSet};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn so(time: f64, event: bool) -> SurvivalOutcome {
        SurvivalOutcome::new(time, event)
    }

    /// Risk sets enumerated by definition.
    fn cox_oracle(r: &[f64], o: &[SurvivalOutcome]) -> f64 {
        let mut total = 0.0;
        for n in 0..r.len() {
            if o[n].event {
                let denom: f64 = (0..r.len())
                    .filter(|&j| o[j].time >= o[n].time)
                    .map(|j| r[j].exp())
                    .sum();
                total += r[n] - denom.ln();
            }
        }
        -total / r.len() as f64
    }

    #[test]
    fn recon_unit_mse_and_bce() {
        let v = recon_loss(
            &array![[0.0]],
            &array![[1.0]],
            &array![[true]],
            &[false],
            1.0,
        )
        .unwrap();
        assert_eq!(v, 1.0);
        let v = recon_loss(
            &array![[1.0]],
            &array![[0.5]],
            &array![[true]],
            &[true],
            1.0,
        )
        .unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn recon_perfect_is_near_zero() {
        let x = array![[1.0, 0.0, 0.3]];
        let v = recon_loss(
            &x,
            &x,
            &array![[true, true, true]],
            &[true, true, false],
            1.0,
        )
        .unwrap();
        assert!(v < 4.0 * BCE_EPS, "{v}");
    }

    #[test]
    fn recon_rejects_binary_out_of_range() {
        let r = recon_loss(
            &array![[1.0]],
            &array![[1.2]],
            &array![[true]],
            &[true],
            1.0,
        );
        assert!(r.is_err());
    }

    #[test]
    fn recon_ignores_masked_entries() {
        let x = array![[0.2, 1.0], [0.7, 0.0]];
        let valid = array![[true, false], [false, true]];
        let a = recon_loss(
            &x,
            &array![[0.1, 0.4], [0.9, 0.3]],
            &valid,
            &[false, true],
            1.0,
        )
        .unwrap();
        let b = recon_loss(
            &x,
            &array![[0.1, 0.9], [-50.0, 0.3]],
            &valid,
            &[false, true],
            1.0,
        )
        .unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(
            kl_loss(&array![[0.0, 0.0]], &array![[0.0, 0.0]]).unwrap(),
            0.0
        );
        assert_eq!(kl_loss(&array![[1.0]], &array![[0.0]]).unwrap(), 0.5);
    }

    #[test]
    fn cox_examples() {
        let all_censored = [so(1.0, false), so(2.0, false)];
        assert_eq!(cox_loss(&[0.3, -1.0], &all_censored).unwrap(), 0.0);
        let two = [so(1.0, true), so(2.0, false)];
        let v = cox_loss(&[0.7, 0.7], &two).unwrap();
        assert!((v - 0.5 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!(cox_loss(&[0.0], &[so(0.0, true)]).is_err());
        assert!(cox_loss(&[], &[]).is_err());
    }

    #[test]
    fn cox_raising_early_event_risk_lowers_loss() {
        let o = [so(1.0, true), so(2.0, true), so(3.0, false)];
        let base = cox_loss(&[0.0, 0.0, 0.0], &o).unwrap();
        let raised = cox_loss(&[0.5, 0.0, 0.0], &o).unwrap();
        assert!(raised < base);
    }

    #[test]
    fn cox_is_stable_for_large_risks() {
        let o = [so(1.0, true), so(2.0, true)];
        let v = cox_loss(&[1000.0, 1000.0], &o).unwrap();
        assert!((v - 0.5 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cluster_loss_examples() {
        let q = array![[0.5, 0.5]];
        assert_eq!(cluster_loss(&q, &q).unwrap(), 0.0);
        let p = array![[1.0 - 1e-9, 1e-9]];
        assert!((cluster_loss(&p, &q).unwrap() - std::f64::consts::LN_2).abs() < 1e-7);
        let a = array![[0.9, 0.1]];
        let b = array![[0.4, 0.6]];
        assert_ne!(cluster_loss(&a, &b).unwrap(), cluster_loss(&b, &a).unwrap());
        assert!(cluster_loss(&a, &array![[1.0, 0.0]]).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let c = LossComponents {
            recon: 0.7,
            kl: 3.0,
            cox: 2.0,
            cluster: 1.0,
        };
        let w = LossWeights {
            w_r: 1.0,
            w_y: 0.0,
            w_c: 0.0,
            w_kl: 0.0,
            w_b: 1.0,
        };
        assert_eq!(total_loss(&c, &w).unwrap(), 0.7);
        let base = Scenario::Combined.weights().unwrap();
        let doubled = LossWeights {
            w_r: 2.0 * base.w_r,
            w_y: 2.0 * base.w_y,
            w_c: 2.0 * base.w_c,
            w_kl: 2.0 * base.w_kl,
            w_b: base.w_b,
        };
        let t = total_loss(&c, &base).unwrap();
        assert!((total_loss(&c, &doubled).unwrap() - 2.0 * t).abs() < 1e-12);
        let bad = LossComponents { cox: f64::NAN, ..c };
        assert!(
            matches!(total_loss(&bad, &base), Err(Error::NonFinite { what }) if what.contains("cox"))
        );
    }

    #[test]
    fn scenario_presets() {
        let r = Scenario::ReconOnly.weights().unwrap();
        assert_eq!((r.w_r, r.w_kl, r.w_y, r.w_c), (0.5, 1e-5, 0.0, 0.25));
        let o = Scenario::OutcomeOnly.weights().unwrap();
        assert_eq!((o.w_r, o.w_y), (0.0, 1.0));
        let c = Scenario::Combined.weights().unwrap();
        assert_eq!((c.w_r, c.w_y), (0.05, 1.0));
        assert!(Scenario::Custom.weights().is_none());
        assert_eq!("combined".parse::<Scenario>().unwrap(), Scenario::Combined);
        assert!("both".parse::<Scenario>().is_err());
    }

    #[test]
    fn weights_validation() {
        let mut w = Scenario::Combined.weights().unwrap();
        assert!(w.validate().is_ok());
        w.w_y = -1.0;
        assert!(w.validate().is_err());
        let zero = LossWeights {
            w_r: 0.0,
            w_y: 0.0,
            w_c: 0.0,
            w_kl: 0.0,
            w_b: 1.0,
        };
        assert!(zero.validate().is_err());
    }

    fn random_outcomes(n: usize, rng: &mut ChaCha8Rng) -> Vec<SurvivalOutcome> {
        // small integer times force ties
        (0..n)
            .map(|_| so(rng.random_range(1..5) as f64, rng.random::<f64>() < 0.6))
            .collect()
    }

    #[test]
    fn loss_gradients_pass_checker() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let mut p = ParamSet::new();
            let n = 5;
            let xh = p
                .add(
                    "xh",
                    Array2::from_shape_fn((n, 4), |_| rng.random_range(0.05..0.95)),
                    true,
                    false,
                )
                .unwrap();
            let mu = p
                .add(
                    "mu",
                    Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0)),
                    true,
                    false,
                )
                .unwrap();
            let lv = p
                .add(
                    "lv",
                    Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0)),
                    true,
                    false,
                )
                .unwrap();
            let r = p
                .add(
                    "r",
                    Array2::from_shape_fn((n, 1), |_| rng.random_range(-2.0..2.0)),
                    true,
                    false,
                )
                .unwrap();
            let q_raw = Array2::from_shape_fn((n, 3), |_| rng.random_range(0.1..1.0));
            let q = p.add("q", q_raw, true, false).unwrap();
            let target = Array2::from_shape_fn((n, 4), |(_, j)| {
                if j < 2 {
                    rng.random_range(0..2) as f64
                } else {
                    rng.random()
                }
            });
            let valid = Array2::from_shape_fn((n, 4), |_| rng.random::<f64>() < 0.8);
            let pt = Array2::from_shape_fn((n, 3), |_| rng.random_range(0.1..1.0));
            let outcomes = random_outcomes(n, &mut rng);
            let report = grad_check(
                |g: &mut Graph, ps: &ParamSet| {
                    let xv = g.param(ps, xh);
                    let recon = g.apply(
                        Box::new(ReconLoss {
                            target: target.clone(),
                            valid: valid.clone(),
                            binary: vec![true, true, false, false],
                            w_b: 0.7,
                        }),
                        &[xv],
                    )?;
                    let (m, l) = (g.param(ps, mu), g.param(ps, lv));
                    let kl = g.apply(Box::new(KlLoss), &[m, l])?;
                    let rv = g.param(ps, r);
                    let cox = g.apply(
                        Box::new(CoxLoss {
                            outcomes: outcomes.clone(),
                        }),
                        &[rv],
                    )?;
                    let qv = g.param(ps, q);
                    let cl = g.apply(Box::new(ClusterLoss { target: pt.clone() }), &[qv])?;
                    weighted_total(
                        g,
                        &[
                            (0.3, Some(recon)),
                            (0.2, Some(kl)),
                            (1.0, Some(cox)),
                            (0.5, Some(cl)),
                        ],
                    )
                },
                &p,
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{report:?}");
        }
    }

    proptest! {
        #[test]
        fn cox_matches_brute_force(
            n in 1usize..7,
            seed in 0u64..10_000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let o = random_outcomes(n, &mut rng);
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let v = cox_loss(&r, &o).unwrap();
            let oracle = if o.iter().any(|x| x.event) { cox_oracle(&r, &o) } else { 0.0 };
            prop_assert!((v - oracle).abs() < 1e-12, "{} vs {}", v, oracle);
        }

        #[test]
        fn cox_shift_invariant(seed in 0u64..10_000, shift in -50.0f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let o = random_outcomes(8, &mut rng);
            let r: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let shifted: Vec<f64> = r.iter().map(|v| v + shift).collect();
            prop_assert!((cox_loss(&r, &o).unwrap() - cox_loss(&shifted, &o).unwrap()).abs() < 1e-10);
        }

        #[test]
        fn kl_non_negative(vals in prop::collection::vec(-3.0f64..3.0, 12)) {
            let mu = Array2::from_shape_vec((3, 2), vals[..6].to_vec()).unwrap();
            let lv = Array2::from_shape_vec((3, 2), vals[6..].to_vec()).unwrap();
            prop_assert!(kl_loss(&mu, &lv).unwrap() >= 0.0);
        }

        #[test]
        fn cluster_loss_zero_only_at_equality(vals in prop::collection::vec(0.05f64..1.0, 12)) {
            let norm = |v: &[f64]| {
                let mut a = Array2::from_shape_vec((3, 2), v.to_vec()).unwrap();
                for mut row in a.outer_iter_mut() {
                    let s = row.sum();
                    row /= s;
                }
                a
            };
            let (p, q) = (norm(&vals[..6]), norm(&vals[6..]));
            let d = cluster_loss(&p, &q).unwrap();
            prop_assert!(d >= -1e-12);
            prop_assert!(cluster_loss(&p, &p).unwrap().abs() < 1e-12);
            if (&p - &q).iter().any(|v| v.abs() > 1e-3) {
                prop_assert!(d > 1e-12);
            }
        }
    }
}
