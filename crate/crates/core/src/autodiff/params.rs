use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const CHECKPOINT_TAG: &str = "survclust-params v1";

/// Index of a tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    value: Array2<f64>,
    trainable: bool,
    decay: bool,
}

/// Named tensors with fixed shapes.
///
/// `decay` marks tensors that receive weight decay (weight matrices, not
/// biases or centroids).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: &str,
        value: Array2<f64>,
        trainable: bool,
        decay: bool,
    ) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::input(format!("duplicate parameter name {name}")));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::input(format!("invalid parameter name {name:?}")));
        }
        let id = self.entries.len();
        self.index.insert(name.to_string(), id);
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            trainable,
            decay,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.entries[id.0].value
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.id(name).map(|id| self.value(id))
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.entries[id.0].decay
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    /// Replaces a tensor's value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Array2<f64>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.dim() != value.dim() {
            return Err(Error::Shape {
                op: "param_set",
                left: e.value.dim(),
                right: value.dim(),
            });
        }
        e.value = value;
        Ok(())
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.entries[id.0].value
    }

    /// Total number of scalar entries.
    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Writes a text checkpoint whose values round-trip bit-exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_str(&crate::error::read_text(path)?)
    }

    pub fn to_checkpoint_string(&self) -> String {
        let mut out = format!("{CHECKPOINT_TAG}\n{}\n", self.entries.len());
        for e in &self.entries {
            let (r, c) = e.value.dim();
            out.push_str(&format!(
                "{} {r} {c} {} {}\n",
                e.name, e.trainable as u8, e.decay as u8
            ));
            let values: Vec<String> = e.value.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&values.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |what: &str| Error::Parse(format!("checkpoint: {what}"));
        if lines.next() != Some(CHECKPOINT_TAG) {
            return Err(bad("missing or unsupported version tag"));
        }
        let count: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| bad("missing tensor count"))?;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let header = lines.next().ok_or_else(|| bad("truncated header"))?;
            let fields: Vec<&str> = header.split_whitespace().collect();
            let [name, r, c, t, d] = fields[..] else {
                return Err(bad(&format!("malformed header {header:?}")));
            };
            let parse_usize = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| bad(&format!("bad integer {s:?}")))
            };
            let (rows, cols) = (parse_usize(r)?, parse_usize(c)?);
            let data_line = lines.next().ok_or_else(|| bad("truncated values"))?;
            let data = data_line
                .split_whitespace()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| bad(&format!("bad value {v:?}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if data.len() != rows * cols {
                return Err(bad(&format!(
                    "{name}: expected {} values, found {}",
                    rows * cols,
                    data.len()
                )));
            }
            let value = Array2::from_shape_vec((rows, cols), data).expect("length checked");
            set.add(name, value, parse_usize(t)? == 1, parse_usize(d)? == 1)?;
        }
        Ok(set)
    }
}

/// Per-parameter gradients aligned with a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    grads: Vec<Array2<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            grads: params
                .entries
                .iter()
                .map(|e| Array2::zeros(e.value.raw_dim()))
                .collect(),
        }
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Array2<f64>) {
        self.grads[id.0] += g;
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.grads[id.0]
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            *g *= factor;
        }
    }
}
