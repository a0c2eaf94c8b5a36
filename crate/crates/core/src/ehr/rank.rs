use serde::{Deserialize, Serialize};

/// Average ranks (0-based) of `values`, ties sharing the mean of their ranks.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j - 1) as f64;
        for &o in &order[i..j] {
            ranks[o] = avg;
        }
        i = j;
    }
    ranks
}

/// Maps each value to `rank / (n - 1)` using average ranks for ties.
///
/// A single value maps to 0.5. Output order follows input order.
pub fn rank_normalize(values: &[f64]) -> Vec<f64> {
    match values.len() {
        0 => Vec::new(),
        1 => vec![0.5],
        n => average_ranks(values)
            .into_iter()
            .map(|r| r / (n - 1) as f64)
            .collect(),
    }
}

/// Rank normalization frozen on a reference sample.
///
/// Values seen at fit time map exactly to their normalized rank; values in
/// between interpolate linearly; values outside the fitted range clamp to 0
/// or 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankNormalizer {
    support: Vec<f64>,
    targets: Vec<f64>,
}

impl RankNormalizer {
    pub fn fit(values: &[f64]) -> Self {
        let normalized = rank_normalize(values);
        let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(normalized).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.dedup_by(|a, b| a.0 == b.0);
        let (support, targets) = pairs.into_iter().unzip();
        Self { support, targets }
    }

    pub fn apply(&self, v: f64) -> f64 {
        let s = &self.support;
        if s.is_empty() {
            return 0.5;
        }
        match s.binary_search_by(|x| x.total_cmp(&v)) {
            Ok(i) => self.targets[i],
            Err(0) => 0.0,
            Err(i) if i == s.len() => 1.0,
            Err(i) => {
                let (x0, x1) = (s[i - 1], s[i]);
                let (y0, y1) = (self.targets[i - 1], self.targets[i]);
                (y0 + (y1 - y0) * (v - x0) / (x1 - x0)).clamp(0.0, 1.0)
            }
        }
    }
}
