//! Longitudinal event records to fixed-width windowed feature tensors.
//!
//! Coded channels (diagnoses, procedures, medications) become multi-hot
//! binary columns; each laboratory test contributes six continuous columns
//! (min, max, mean, MAD, last value, count) rank-normalized against the
//! cohort. Missing continuous entries hold [`MISSING_CONTINUOUS`].

mod encode;
mod rank;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

pub use encode::{align_at_index, build_feature_spec, encode_windows, index_window, window_count};
pub use rank::{rank_normalize, RankNormalizer};

use crate::error::{Error, Result};

/// Fill value for absent continuous entries, outside the normalized range.
pub const MISSING_CONTINUOUS: f64 = -0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    PrimaryDx,
    SecondaryDx,
    Procedure,
    Medication,
    Lab,
}

impl Channel {
    pub const CODED: [Channel; 4] = [
        Channel::PrimaryDx,
        Channel::SecondaryDx,
        Channel::Procedure,
        Channel::Medication,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::PrimaryDx => "primary_dx",
            Channel::SecondaryDx => "secondary_dx",
            Channel::Procedure => "procedure",
            Channel::Medication => "medication",
            Channel::Lab => "lab",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "primary_dx" => Channel::PrimaryDx,
            "secondary_dx" => Channel::SecondaryDx,
            "procedure" => Channel::Procedure,
            "medication" => Channel::Medication,
            "lab" => Channel::Lab,
            other => return Err(Error::Parse(format!("unknown channel {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawEvent {
    pub patient_id: String,
    pub date: NaiveDate,
    pub channel: Channel,
    pub code: String,
    pub value: Option<f64>,
}

impl RawEvent {
    pub fn coded(patient: &str, date: NaiveDate, channel: Channel, code: &str) -> Self {
        Self {
            patient_id: patient.to_string(),
            date,
            channel,
            code: code.to_string(),
            value: None,
        }
    }

    pub fn lab(patient: &str, date: NaiveDate, code: &str, value: f64) -> Self {
        Self {
            patient_id: patient.to_string(),
            date,
            channel: Channel::Lab,
            code: code.to_string(),
            value: Some(value),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.channel, self.value) {
            (Channel::Lab, Some(v)) if v.is_finite() => Ok(()),
            (Channel::Lab, _) => Err(Error::Patient {
                patient: self.patient_id.clone(),
                reason: format!(
                    "lab event {} on {} needs a finite value",
                    self.code, self.date
                ),
            }),
            (_, None) => Ok(()),
            (_, Some(_)) => Err(Error::Patient {
                patient: self.patient_id.clone(),
                reason: format!(
                    "coded event {} on {} must not carry a value",
                    self.code, self.date
                ),
            }),
        }
    }
}

/// Reads `patient_id,date,channel,code,value` rows; `value` is empty for
/// coded events.
pub fn read_events_csv(path: &Path) -> Result<Vec<RawEvent>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut events = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let date = NaiveDate::parse_from_str(field(1), "%Y-%m-%d")
            .map_err(|e| Error::Parse(format!("row {}: date {:?}: {e}", line + 1, field(1))))?;
        let value = match field(4) {
            "" => None,
            v => Some(
                v.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: value {v:?}: {e}", line + 1)))?,
            ),
        };
        let event = RawEvent {
            patient_id: field(0).to_string(),
            date,
            channel: field(2).parse()?,
            code: field(3).to_string(),
            value,
        };
        event.validate()?;
        events.push(event);
    }
    Ok(events)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Binary,
    Continuous,
}

/// Column names and kinds of one window vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub names: Vec<String>,
    pub kinds: Vec<ColumnKind>,
}

impl FeatureLayout {
    pub fn uniform(width: usize, kind: ColumnKind, prefix: &str) -> Self {
        Self {
            names: (0..width).map(|j| format!("{prefix}{j}")).collect(),
            kinds: vec![kind; width],
        }
    }

    pub fn width(&self) -> usize {
        self.kinds.len()
    }

    /// Binary columns 0, continuous columns [`MISSING_CONTINUOUS`].
    pub fn empty_window(&self) -> Array1<f64> {
        self.kinds
            .iter()
            .map(|k| match k {
                ColumnKind::Binary => 0.0,
                ColumnKind::Continuous => MISSING_CONTINUOUS,
            })
            .collect()
    }

    pub fn write_manifest(&self, path: &Path, window_days: Option<u32>) -> Result<()> {
        #[derive(Serialize)]
        struct Column<'a> {
            index: usize,
            name: &'a str,
            kind: ColumnKind,
        }
        #[derive(Serialize)]
        struct Manifest<'a> {
            width: usize,
            window_days: Option<u32>,
            columns: Vec<Column<'a>>,
        }
        let manifest = Manifest {
            width: self.width(),
            window_days,
            columns: self
                .names
                .iter()
                .zip(&self.kinds)
                .enumerate()
                .map(|(index, (name, &kind))| Column { index, name, kind })
                .collect(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}

/// Summary statistics stored per lab and window, in column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabStatistic {
    Min,
    Max,
    Mean,
    Mad,
    Last,
    Count,
}

impl LabStatistic {
    pub const ALL: [LabStatistic; 6] = [
        LabStatistic::Min,
        LabStatistic::Max,
        LabStatistic::Mean,
        LabStatistic::Mad,
        LabStatistic::Last,
        LabStatistic::Count,
    ];

    fn as_str(self) -> &'static str {
        match self {
            LabStatistic::Min => "min",
            LabStatistic::Max => "max",
            LabStatistic::Mean => "mean",
            LabStatistic::Mad => "mad",
            LabStatistic::Last => "last",
            LabStatistic::Count => "count",
        }
    }
}

/// Frozen vocabulary, column layout and lab normalization of a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    /// Retained codes of each coded channel, lexicographic.
    pub vocabulary: BTreeMap<Channel, Vec<String>>,
    /// Retained lab codes, lexicographic.
    pub labs: Vec<String>,
    pub lab_statistics: Vec<LabStatistic>,
    pub window_days: u32,
    pub min_prevalence: f64,
    /// Cohort rank map of raw values, per lab.
    pub value_normalizers: BTreeMap<String, RankNormalizer>,
    /// Cohort rank map of per-window occurrence counts, per lab.
    pub count_normalizers: BTreeMap<String, RankNormalizer>,
}

impl FeatureSpec {
    pub fn n_binary(&self) -> usize {
        self.vocabulary.values().map(Vec::len).sum()
    }

    pub fn width(&self) -> usize {
        self.n_binary() + self.labs.len() * self.lab_statistics.len()
    }

    /// Column of a coded token, if retained.
    pub fn coded_column(&self, channel: Channel, code: &str) -> Option<usize> {
        let mut offset = 0;
        for ch in Channel::CODED {
            let vocab = self.vocabulary.get(&ch).map(Vec::as_slice).unwrap_or(&[]);
            if ch == channel {
                return vocab
                    .binary_search_by(|c| c.as_str().cmp(code))
                    .ok()
                    .map(|i| offset + i);
            }
            offset += vocab.len();
        }
        None
    }

    /// First column of a retained lab's statistics block.
    pub fn lab_column(&self, code: &str) -> Option<usize> {
        self.labs
            .binary_search_by(|c| c.as_str().cmp(code))
            .ok()
            .map(|i| self.n_binary() + i * self.lab_statistics.len())
    }

    pub fn layout(&self) -> FeatureLayout {
        let mut names = Vec::with_capacity(self.width());
        let mut kinds = Vec::with_capacity(self.width());
        for ch in Channel::CODED {
            for code in self.vocabulary.get(&ch).into_iter().flatten() {
                names.push(format!("{ch}:{code}"));
                kinds.push(ColumnKind::Binary);
            }
        }
        for lab in &self.labs {
            for stat in &self.lab_statistics {
                names.push(format!("lab:{lab}:{}", stat.as_str()));
                kinds.push(ColumnKind::Continuous);
            }
        }
        FeatureLayout { names, kinds }
    }
}

/// One patient's sequence of window vectors with presence masks.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTensor {
    /// One row per window.
    pub windows: Array2<f64>,
    /// Whether each window holds any data.
    pub mask: Vec<bool>,
    /// Per entry: a continuous value was observed.
    pub continuous_mask: Array2<bool>,
    pub index_window: Option<usize>,
}

impl TrajectoryTensor {
    pub fn n_windows(&self) -> usize {
        self.windows.nrows()
    }

    pub fn width(&self) -> usize {
        self.windows.ncols()
    }

    /// All-empty trajectory of `n_windows` windows.
    pub fn empty(layout: &FeatureLayout, n_windows: usize) -> Self {
        let empty = layout.empty_window();
        let mut windows = Array2::zeros((n_windows, layout.width()));
        for mut row in windows.outer_iter_mut() {
            row.assign(&empty);
        }
        Self {
            windows,
            mask: vec![false; n_windows],
            continuous_mask: Array2::from_elem((n_windows, layout.width()), false),
            index_window: None,
        }
    }

    /// Whether entry `(t, j)` carries an observed value for the loss.
    pub fn entry_observed(&self, layout: &FeatureLayout, t: usize, j: usize) -> bool {
        self.mask[t]
            && match layout.kinds[j] {
                ColumnKind::Binary => true,
                ColumnKind::Continuous => self.continuous_mask[[t, j]],
            }
    }

    /// Checks width, mask soundness and the value range of continuous entries.
    pub fn validate(&self, layout: &FeatureLayout) -> Result<()> {
        if self.width() != layout.width() {
            return Err(Error::input(format!(
                "trajectory width {} differs from layout width {}",
                self.width(),
                layout.width()
            )));
        }
        if self.mask.len() != self.n_windows() || self.continuous_mask.dim() != self.windows.dim() {
            return Err(Error::input("mask dimensions differ from windows"));
        }
        let empty = layout.empty_window();
        for (t, row) in self.windows.outer_iter().enumerate() {
            if !self.mask[t] && row != empty {
                return Err(Error::input(format!("window {t} is masked but not empty")));
            }
            for (j, &v) in row.iter().enumerate() {
                if layout.kinds[j] == ColumnKind::Continuous
                    && v != MISSING_CONTINUOUS
                    && !(0.0..=1.0).contains(&v)
                {
                    return Err(Error::input(format!(
                        "continuous entry ({t}, {j}) = {v} out of range"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Writes `tensors.csv` (patient_id, window, values...), `mask.csv`
/// (patient_id, window, present, continuous-present flags...) and
/// `layout.json`.
pub fn write_tensors(
    dir: &Path,
    ids: &[String],
    trajectories: &[TrajectoryTensor],
    layout: &FeatureLayout,
    window_days: Option<u32>,
) -> Result<()> {
    if ids.len() != trajectories.len() {
        return Err(Error::input("one id per trajectory required"));
    }
    std::fs::create_dir_all(dir)?;
    let mut values = csv::Writer::from_path(dir.join("tensors.csv"))?;
    let mut masks = csv::Writer::from_path(dir.join("mask.csv"))?;
    let mut header = vec!["patient_id".to_string(), "window".to_string()];
    header.extend((0..layout.width()).map(|j| format!("c{j}")));
    values.write_record(&header)?;
    header[2..].iter_mut().for_each(|h| h.insert_str(0, "obs_"));
    header.insert(2, "present".to_string());
    masks.write_record(&header)?;
    for (id, traj) in ids.iter().zip(trajectories) {
        for t in 0..traj.n_windows() {
            let mut rec = vec![id.clone(), t.to_string()];
            rec.extend(traj.windows.row(t).iter().map(|v| v.to_string()));
            values.write_record(&rec)?;
            let mut rec = vec![
                id.clone(),
                t.to_string(),
                u8::from(traj.mask[t]).to_string(),
            ];
            rec.extend(
                traj.continuous_mask
                    .row(t)
                    .iter()
                    .map(|&b| u8::from(b).to_string()),
            );
            masks.write_record(&rec)?;
        }
    }
    values.flush()?;
    masks.flush()?;
    layout.write_manifest(&dir.join("layout.json"), window_days)
}
