//! Kaplan-Meier estimation and the k-sample log-rank test.
//!
//! At tied times deaths are processed before censorings, so a patient
//! censored at `t` still counts as at risk for events at `t`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::SurvivalOutcome;

/// Product-limit survival curve evaluated at every distinct observed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl StepCurve {
    /// Survival probability at `t` (right-continuous step function).
    pub fn survival_at(&self, t: f64) -> f64 {
        match self.times.iter().rposition(|&s| s <= t) {
            Some(i) => self.survival[i],
            None => 1.0,
        }
    }

    /// Cumulative event fraction, `1 - KM` at each step.
    pub fn crude_incidence(&self) -> Vec<f64> {
        self.survival.iter().map(|s| 1.0 - s).collect()
    }
}

/// Distinct times with (at risk, events, censored) counts, ascending.
fn risk_table(outcomes: &[SurvivalOutcome]) -> Vec<(f64, usize, usize)> {
    let mut sorted: Vec<&SurvivalOutcome> = outcomes.iter().collect();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut table = Vec::new();
    let mut at_risk = sorted.len();
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].time;
        let mut events = 0;
        let mut total = 0;
        while i < sorted.len() && sorted[i].time == t {
            events += usize::from(sorted[i].event);
            total += 1;
            i += 1;
        }
        table.push((t, at_risk, events));
        at_risk -= total;
    }
    table
}

fn check_times(outcomes: &[SurvivalOutcome]) -> Result<()> {
    if let Some(o) = outcomes
        .iter()
        .find(|o| !(o.time > 0.0) || !o.time.is_finite())
    {
        return Err(Error::input(format!(
            "survival times must be positive, got {}",
            o.time
        )));
    }
    Ok(())
}

pub fn kaplan_meier(outcomes: &[SurvivalOutcome]) -> Result<StepCurve> {
    if outcomes.is_empty() {
        return Err(Error::input("kaplan-meier needs at least one observation"));
    }
    check_times(outcomes)?;
    let mut curve = StepCurve {
        times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
    };
    let mut s = 1.0;
    for (t, n, d) in risk_table(outcomes) {
        if d > 0 {
            s *= (n - d) as f64 / n as f64;
        }
        curve.times.push(t);
        curve.survival.push(s);
        curve.at_risk.push(n);
        curve.events.push(d);
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRankResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// k-sample log-rank test of equal survival across groups.
pub fn logrank_test(groups: &[&[SurvivalOutcome]]) -> Result<LogRankResult> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::input("log-rank test needs at least two groups"));
    }
    if let Some(g) = groups.iter().position(|g| g.is_empty()) {
        return Err(Error::input(format!("log-rank group {g} is empty")));
    }
    let mut pooled: Vec<(f64, bool, usize)> = Vec::new();
    for (g, outcomes) in groups.iter().enumerate() {
        check_times(outcomes)?;
        pooled.extend(outcomes.iter().map(|o| (o.time, o.event, g)));
    }
    if !pooled.iter().any(|p| p.1) {
        return Err(Error::UndefinedTest("no events in any group".into()));
    }
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut at_risk: Vec<f64> = groups.iter().map(|g| g.len() as f64).collect();
    let mut o_minus_e = vec![0.0; k];
    let mut var = DMatrix::<f64>::zeros(k, k);
    let mut i = 0;
    while i < pooled.len() {
        let t = pooled[i].0;
        let mut deaths = vec![0.0; k];
        let mut leaving = vec![0.0; k];
        while i < pooled.len() && pooled[i].0 == t {
            let g = pooled[i].2;
            leaving[g] += 1.0;
            if pooled[i].1 {
                deaths[g] += 1.0;
            }
            i += 1;
        }
        let d: f64 = deaths.iter().sum();
        let n: f64 = at_risk.iter().sum();
        if d > 0.0 {
            for g in 0..k {
                o_minus_e[g] += deaths[g] - d * at_risk[g] / n;
            }
            if n > 1.0 {
                let scale = d * (n - d) / (n - 1.0);
                for g in 0..k {
                    let pg = at_risk[g] / n;
                    for h in 0..k {
                        let ph = at_risk[h] / n;
                        let delta = if g == h { 1.0 } else { 0.0 };
                        var[(g, h)] += scale * pg * (delta - ph);
                    }
                }
            }
        }
        for g in 0..k {
            at_risk[g] -= leaving[g];
        }
    }

    // drop the last group: the full covariance is singular (rows sum to zero)
    let m = k - 1;
    let v = var.view((0, 0), (m, m)).into_owned();
    let u = nalgebra::DVector::from_column_slice(&o_minus_e[..m]);
    let statistic = match v.clone().cholesky() {
        Some(ch) => u.dot(&ch.solve(&u)),
        None => {
            let pinv = v
                .pseudo_inverse(1e-12)
                .map_err(|e| Error::UndefinedTest(e.to_string()))?;
            u.dot(&(pinv * &u))
        }
    };
    let statistic = statistic.max(0.0);
    Ok(LogRankResult {
        statistic,
        df: m,
        p_value: chi2_sf(statistic, m as f64),
    })
}

/// Log-rank test across the clusters of a hard labeling.
///
/// Empty labels are skipped; fewer than two non-empty clusters is an error.
pub fn logrank_by_labels(outcomes: &[SurvivalOutcome], labels: &[usize]) -> Result<LogRankResult> {
    if outcomes.len() != labels.len() {
        return Err(Error::input("outcomes and labels differ in length"));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut groups: Vec<Vec<SurvivalOutcome>> = vec![Vec::new(); k];
    for (o, &l) in outcomes.iter().zip(labels) {
        groups[l].push(*o);
    }
    let groups: Vec<&[SurvivalOutcome]> = groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| g.as_slice())
        .collect();
    logrank_test(&groups)
}

/// Upper tail of the chi-squared distribution with `df` degrees of freedom.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_q(0.5 * df, 0.5 * x)
}

pub(crate) fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x) by its power series.
pub(crate) fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut sum = 1.0 / a;
    let mut term = sum;
    let mut ap = a;
    for _ in 0..10_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

/// Regularized upper incomplete gamma Q(a, x) by Lentz's continued fraction.
pub(crate) fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

fn gamma_q(a: f64, x: f64) -> f64 {
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}
