//! Independent reference implementations used as test oracles.
//!
//! Each one recomputes a quantity by a different route than the library:
//! pair enumeration instead of contingency sums, per-sample log ratios
//! instead of table entropies, explicit risk-set scans instead of sorted
//! cumulative sums.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::Rng;
use survclust::SurvivalOutcome;

/// ARI from the four pair counts (Hubert and Arabie form).
pub fn ari_by_pairs(a: &[usize], b: &[usize]) -> f64 {
    let (mut n11, mut n10, mut n01, mut n00) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => n11 += 1.0,
                (true, false) => n10 += 1.0,
                (false, true) => n01 += 1.0,
                (false, false) => n00 += 1.0,
            }
        }
    }
    let denom = (n00 + n01) * (n01 + n11) + (n00 + n10) * (n10 + n11);
    if denom == 0.0 {
        return 1.0;
    }
    2.0 * (n00 * n11 - n01 * n10) / denom
}

/// NMI with geometric-mean normalisation, averaged sample by sample.
pub fn nmi_by_samples(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut ca: HashMap<usize, f64> = HashMap::new();
    let mut cb: HashMap<usize, f64> = HashMap::new();
    let mut cab: HashMap<(usize, usize), f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1.0;
        *cb.entry(y).or_default() += 1.0;
        *cab.entry((x, y)).or_default() += 1.0;
    }
    let (mut mi, mut ha, mut hb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        mi += (n * cab[&(x, y)] / (ca[&x] * cb[&y])).ln() / n;
        ha -= (ca[&x] / n).ln() / n;
        hb -= (cb[&y] / n).ln() / n;
    }
    if ha.abs() < 1e-15 || hb.abs() < 1e-15 {
        return 0.0;
    }
    (mi / (ha * hb).sqrt()).clamp(0.0, 1.0)
}

/// Mean negative Cox partial log-likelihood over all patients, scanning the
/// full cohort for every risk set.
pub fn cox_by_risk_sets(risks: &[f64], outcomes: &[SurvivalOutcome]) -> f64 {
    if !outcomes.iter().any(|o| o.event) {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, oi) in outcomes.iter().enumerate() {
        if !oi.event {
            continue;
        }
        let denom: f64 = outcomes
            .iter()
            .zip(risks)
            .filter(|(oj, _)| oj.time >= oi.time)
            .map(|(_, r)| r.exp())
            .sum();
        total -= risks[i] - denom.ln();
    }
    total / outcomes.len() as f64
}

/// Product-limit estimate at `t`, recounting the risk set at each event time.
pub fn km_at(outcomes: &[SurvivalOutcome], t: f64) -> f64 {
    let mut times: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.event && o.time <= t)
        .map(|o| o.time)
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
        .iter()
        .map(|&s| {
            let at_risk = outcomes.iter().filter(|o| o.time >= s).count() as f64;
            let deaths = outcomes.iter().filter(|o| o.event && o.time == s).count() as f64;
            1.0 - deaths / at_risk
        })
        .product()
}

/// Two-sample log-rank chi-square from the hypergeometric variance.
pub fn logrank_two_groups(g0: &[SurvivalOutcome], g1: &[SurvivalOutcome]) -> f64 {
    let all: Vec<SurvivalOutcome> = g0.iter().chain(g1).copied().collect();
    let mut times: Vec<f64> = all.iter().filter(|o| o.event).map(|o| o.time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let (mut o_minus_e, mut var) = (0.0, 0.0);
    for s in times {
        let n0 = g0.iter().filter(|o| o.time >= s).count() as f64;
        let n = all.iter().filter(|o| o.time >= s).count() as f64;
        let d0 = g0.iter().filter(|o| o.event && o.time == s).count() as f64;
        let d = all.iter().filter(|o| o.event && o.time == s).count() as f64;
        o_minus_e += d0 - d * n0 / n;
        if n > 1.0 {
            var += d * (n0 / n) * (1.0 - n0 / n) * (n - d) / (n - 1.0);
        }
    }
    o_minus_e * o_minus_e / var
}

/// Random outcomes on a small integer time grid so ties are frequent.
pub fn random_outcomes<R: Rng>(n: usize, rng: &mut R) -> Vec<SurvivalOutcome> {
    (0..n)
        .map(|_| SurvivalOutcome::new(f64::from(rng.random_range(1..5u8)), rng.random_bool(0.6)))
        .collect()
}

/// Random labeling of `n` items into at most `k` clusters.
pub fn random_labels<R: Rng>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

const BIN: &str = env!("CARGO_BIN_EXE_survclust");

pub fn survclust(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) {
    let out = survclust(args);
    assert!(
        out.status.success(),
        "survclust {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Relative path to file bytes, recursively.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, acc: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, acc);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                acc.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(dir, dir, &mut acc);
    acc
}

pub fn manifest(dir: &Path, data: &Path, out: &str) -> PathBuf {
    let train = |w_r: f64, epochs: usize| {
        serde_json::json!({
            "epochs": epochs, "batch_size": 64, "learning_rate": 2e-3, "weight_decay": 1e-6,
            "seed": 0, "weights": {"w_r": w_r, "w_y": 0.0, "w_c": 0.0, "w_kl": 1e-5},
            "split_fraction": 0.8, "n_repeats": 1
        })
    };
    let m = serde_json::json!({
        "dataset": data,
        "model": {"encoder_kind": "feedforward", "embed_width": 16, "latent_width": 4, "n_clusters": 3},
        "pretrain": train(1.0, 3),
        "finetune": train(0.5, 3),
        "scenario": "combined",
        "output_dir": out,
        "seed": 5
    });
    let path = dir.join(format!("{out}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&m).unwrap()).unwrap();
    path
}
