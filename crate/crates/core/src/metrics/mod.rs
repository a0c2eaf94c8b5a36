//! Evaluation suite: partition agreement, Kaplan-Meier curves and log-rank
//! tests, plus the report and curve file formats.

mod clustering;
mod survival;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use clustering::{
    adjusted_rand_index, normalized_mutual_information, overlap_table, ContingencyTable,
};
pub use survival::{
    chi2_sf, kaplan_meier, logrank_by_labels, logrank_test, LogRankResult, StepCurve,
};

use crate::error::Result;
use crate::SurvivalOutcome;

/// Agreement between a predicted labeling and one reference labeling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reference: String,
    pub ari: f64,
    pub nmi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub k: usize,
    pub n_patients: usize,
    pub comparisons: Vec<Comparison>,
    /// Log-rank test across the predicted clusters, if defined.
    pub logrank: Option<LogRankResult>,
}

impl MetricsReport {
    /// Scores `labels` against every named reference and tests the survival
    /// separation of the predicted clusters.
    pub fn evaluate(
        method: &str,
        k: usize,
        labels: &[usize],
        references: &[(&str, &[usize])],
        outcomes: &[SurvivalOutcome],
    ) -> Result<Self> {
        let mut comparisons = Vec::with_capacity(references.len());
        for (name, reference) in references {
            comparisons.push(Comparison {
                reference: name.to_string(),
                ari: adjusted_rand_index(labels, reference)?,
                nmi: normalized_mutual_information(labels, reference)?,
            });
        }
        let logrank = logrank_by_labels(outcomes, labels).ok();
        Ok(Self {
            method: method.to_string(),
            k,
            n_patients: labels.len(),
            comparisons,
            logrank,
        })
    }

    pub fn ari(&self, reference: &str) -> Option<f64> {
        self.comparisons
            .iter()
            .find(|c| c.reference == reference)
            .map(|c| c.ari)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }
}

/// One Kaplan-Meier curve per cluster (clusters without members skipped).
pub fn km_by_cluster(
    outcomes: &[SurvivalOutcome],
    labels: &[usize],
) -> Result<Vec<(usize, StepCurve)>> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut curves = Vec::new();
    for c in 0..k {
        let members: Vec<SurvivalOutcome> = outcomes
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == c)
            .map(|(o, _)| *o)
            .collect();
        if members.is_empty() {
            continue;
        }
        curves.push((c, kaplan_meier(&members)?));
    }
    Ok(curves)
}

/// Writes `cluster_id,time,survival,at_risk,events` rows.
pub fn write_km_csv(path: &Path, curves: &[(usize, StepCurve)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cluster_id", "time", "survival", "at_risk", "events"])?;
    for (id, curve) in curves {
        for i in 0..curve.times.len() {
            w.write_record([
                id.to_string(),
                curve.times[i].to_string(),
                curve.survival[i].to_string(),
                curve.at_risk[i].to_string(),
                curve.events[i].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
