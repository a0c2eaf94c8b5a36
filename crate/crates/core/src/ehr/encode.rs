use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::NaiveDate;
use ndarray::s;

use super::{
    Channel, FeatureLayout, FeatureSpec, LabStatistic, RankNormalizer, RawEvent, TrajectoryTensor,
};
use crate::error::{Error, Result};

/// Number of `window_days`-wide windows covering `[start, end]` inclusive.
pub fn window_count(start: NaiveDate, end: NaiveDate, window_days: u32) -> usize {
    ((end - start).num_days() / i64::from(window_days)) as usize + 1
}

/// Window holding `date` for a trajectory starting at `start`.
pub fn index_window(start: NaiveDate, date: NaiveDate, window_days: u32) -> Option<usize> {
    let days = (date - start).num_days();
    (days >= 0).then(|| (days / i64::from(window_days)) as usize)
}

/// Derives the retained vocabularies and frozen lab normalizers from a cohort.
///
/// A token is kept when at least `min_prevalence` of patients have it.
pub fn build_feature_spec(
    events: &[RawEvent],
    min_prevalence: f64,
    window_days: u32,
) -> Result<FeatureSpec> {
    if events.is_empty() {
        return Err(Error::input("cannot build a feature spec from no events"));
    }
    if window_days == 0 {
        return Err(Error::config("window_days", "must be positive"));
    }
    if !(0.0..=1.0).contains(&min_prevalence) {
        return Err(Error::config("min_prevalence", "must lie in [0, 1]"));
    }
    let mut patients: BTreeSet<&str> = BTreeSet::new();
    let mut first_date: HashMap<&str, NaiveDate> = HashMap::new();
    let mut holders: BTreeMap<(Channel, &str), BTreeSet<&str>> = BTreeMap::new();
    for e in events {
        e.validate()?;
        patients.insert(&e.patient_id);
        first_date
            .entry(&e.patient_id)
            .and_modify(|d| *d = (*d).min(e.date))
            .or_insert(e.date);
        holders
            .entry((e.channel, &e.code))
            .or_default()
            .insert(&e.patient_id);
    }
    let n = patients.len() as f64;
    let mut vocabulary: BTreeMap<Channel, Vec<String>> =
        Channel::CODED.iter().map(|&c| (c, Vec::new())).collect();
    let mut labs = Vec::new();
    for ((channel, code), who) in &holders {
        if (who.len() as f64) / n < min_prevalence {
            continue;
        }
        match channel {
            Channel::Lab => labs.push(code.to_string()),
            c => vocabulary
                .get_mut(c)
                .expect("coded channel")
                .push(code.to_string()),
        }
    }

    let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut counts: BTreeMap<(&str, &str, usize), usize> = BTreeMap::new();
    for e in events.iter().filter(|e| e.channel == Channel::Lab) {
        if labs.binary_search_by(|l| l.as_str().cmp(&e.code)).is_err() {
            continue;
        }
        values
            .entry(&e.code)
            .or_default()
            .push(e.value.expect("validated lab"));
        let w = index_window(first_date[e.patient_id.as_str()], e.date, window_days)
            .expect("first date");
        *counts.entry((&e.code, &e.patient_id, w)).or_default() += 1;
    }
    let mut per_lab_counts: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for ((lab, _, _), c) in counts {
        per_lab_counts.entry(lab).or_default().push(c as f64);
    }
    Ok(FeatureSpec {
        vocabulary,
        lab_statistics: LabStatistic::ALL.to_vec(),
        window_days,
        min_prevalence,
        value_normalizers: values
            .iter()
            .map(|(k, v)| (k.to_string(), RankNormalizer::fit(v)))
            .collect(),
        count_normalizers: per_lab_counts
            .iter()
            .map(|(k, v)| (k.to_string(), RankNormalizer::fit(v)))
            .collect(),
        labs,
    })
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median absolute deviation about the median; 0 for a single value.
pub(crate) fn mad(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = median(&v);
    let mut dev: Vec<f64> = v.iter().map(|x| (x - m).abs()).collect();
    dev.sort_by(f64::total_cmp);
    median(&dev)
}

/// Lab code with its (date, normalized value) readings in input order.
type LabReadings = (String, Vec<(NaiveDate, f64)>);

/// Encodes one patient's events over `span` (inclusive) into windows.
///
/// Codes and labs outside the spec are ignored; a window is marked present
/// when it holds at least one retained event.
pub fn encode_windows(
    patient_id: &str,
    events: &[RawEvent],
    spec: &FeatureSpec,
    span: (NaiveDate, NaiveDate),
) -> Result<TrajectoryTensor> {
    let (start, end) = span;
    if end < start {
        return Err(Error::Patient {
            patient: patient_id.to_string(),
            reason: format!("span end {end} precedes start {start}"),
        });
    }
    let layout = spec.layout();
    let n_windows = window_count(start, end, spec.window_days);
    let mut traj = TrajectoryTensor::empty(&layout, n_windows);

    // (window, lab column) -> (date, normalized value) in input order
    let mut lab_values: BTreeMap<(usize, usize), LabReadings> = BTreeMap::new();
    for e in events {
        if e.patient_id != patient_id {
            return Err(Error::Patient {
                patient: patient_id.to_string(),
                reason: format!("received an event of patient {}", e.patient_id),
            });
        }
        e.validate()?;
        if e.date < start || e.date > end {
            return Err(Error::Patient {
                patient: patient_id.to_string(),
                reason: format!("event at {} lies outside span {start}..={end}", e.date),
            });
        }
        let t = index_window(start, e.date, spec.window_days).expect("inside span");
        match e.channel {
            Channel::Lab => {
                let Some(col) = spec.lab_column(&e.code) else {
                    continue;
                };
                let v = spec.value_normalizers[&e.code].apply(e.value.expect("validated lab"));
                lab_values
                    .entry((t, col))
                    .or_insert_with(|| (e.code.clone(), Vec::new()))
                    .1
                    .push((e.date, v));
            }
            channel => {
                if let Some(col) = spec.coded_column(channel, &e.code) {
                    traj.windows[[t, col]] = 1.0;
                    traj.mask[t] = true;
                }
            }
        }
    }

    for ((t, col), (code, obs)) in lab_values {
        let values: Vec<f64> = obs.iter().map(|o| o.1).collect();
        // latest date wins, later input order breaks ties
        let last = obs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(a.0.cmp(&b.0)))
            .map(|(_, o)| o.1)
            .expect("non-empty");
        for (offset, stat) in spec.lab_statistics.iter().enumerate() {
            let v = match stat {
                LabStatistic::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
                LabStatistic::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                LabStatistic::Mean => values.iter().sum::<f64>() / values.len() as f64,
                LabStatistic::Mad => mad(&values),
                LabStatistic::Last => last,
                LabStatistic::Count => spec
                    .count_normalizers
                    .get(&code)
                    .map_or(0.5, |n| n.apply(values.len() as f64)),
            };
            traj.windows[[t, col + offset]] = v;
            traj.continuous_mask[[t, col + offset]] = true;
        }
        traj.mask[t] = true;
    }
    Ok(traj)
}

/// Pads trajectories with empty windows so every index window lands on the
/// same position.
pub fn align_at_index(
    trajectories: &[TrajectoryTensor],
    layout: &FeatureLayout,
) -> Result<Vec<TrajectoryTensor>> {
    let mut anchor = 0;
    let mut tail = 0;
    for (i, t) in trajectories.iter().enumerate() {
        let idx = t
            .index_window
            .filter(|&w| w < t.n_windows())
            .ok_or_else(|| Error::Patient {
                patient: format!("#{i}"),
                reason: "missing or out-of-range index window".into(),
            })?;
        if t.width() != layout.width() {
            return Err(Error::input(format!(
                "trajectory #{i} width differs from layout"
            )));
        }
        anchor = anchor.max(idx);
        tail = tail.max(t.n_windows() - idx);
    }
    let len = anchor + tail;
    Ok(trajectories
        .iter()
        .map(|t| {
            let idx = t.index_window.expect("checked");
            let offset = anchor - idx;
            let mut out = TrajectoryTensor::empty(layout, len);
            let n = t.n_windows();
            out.windows
                .slice_mut(s![offset..offset + n, ..])
                .assign(&t.windows);
            out.continuous_mask
                .slice_mut(s![offset..offset + n, ..])
                .assign(&t.continuous_mask);
            out.mask[offset..offset + n].copy_from_slice(&t.mask);
            out.index_window = Some(anchor);
            out
        })
        .collect())
}
