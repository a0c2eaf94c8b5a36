//! Partition-agreement scores computed from a contingency table.

use std::collections::BTreeMap;

use log::warn;

use crate::error::{Error, Result};

/// Cross-tabulation of two labelings of the same items.
///
/// Rows follow the sorted distinct labels of the first labeling, columns those
/// of the second.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable {
    pub row_labels: Vec<usize>,
    pub col_labels: Vec<usize>,
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub total: u64,
}

impl ContingencyTable {
    pub fn new(labels_a: &[usize], labels_b: &[usize]) -> Result<Self> {
        if labels_a.len() != labels_b.len() {
            return Err(Error::input(format!(
                "label length mismatch: {} vs {}",
                labels_a.len(),
                labels_b.len()
            )));
        }
        let index = |labels: &[usize]| {
            let mut map = BTreeMap::new();
            for &l in labels {
                map.entry(l).or_insert(0usize);
            }
            for (i, v) in map.values_mut().enumerate() {
                *v = i;
            }
            map
        };
        let rows = index(labels_a);
        let cols = index(labels_b);
        let mut counts = vec![vec![0u64; cols.len()]; rows.len()];
        for (a, b) in labels_a.iter().zip(labels_b) {
            counts[rows[a]][cols[b]] += 1;
        }
        let row_sums: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums: Vec<u64> = (0..cols.len())
            .map(|j| counts.iter().map(|r| r[j]).sum())
            .collect();
        Ok(Self {
            row_labels: rows.into_keys().collect(),
            col_labels: cols.into_keys().collect(),
            counts,
            row_sums,
            col_sums,
            total: labels_a.len() as u64,
        })
    }
}

fn pairs(n: u64) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Chance-corrected Rand index.
///
/// Returns 1.0 for the degenerate cases where the expected index equals its
/// maximum (both labelings trivial), matching the usual convention.
pub fn adjusted_rand_index(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.len() < 2 {
        return Err(Error::input("adjusted rand index needs at least 2 items"));
    }
    let table = ContingencyTable::new(labels_a, labels_b)?;
    let index: f64 = table.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let sum_a: f64 = table.row_sums.iter().map(|&c| pairs(c)).sum();
    let sum_b: f64 = table.col_sums.iter().map(|&c| pairs(c)).sum();
    let expected = sum_a * sum_b / pairs(table.total);
    let max = 0.5 * (sum_a + sum_b);
    let denom = max - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

fn entropy(counts: &[u64], total: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalised by the geometric mean of the two entropies.
///
/// A labeling with a single cluster has zero entropy; the score is then
/// defined as 0.
pub fn normalized_mutual_information(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.is_empty() {
        return Err(Error::input("normalized mutual information needs items"));
    }
    let table = ContingencyTable::new(labels_a, labels_b)?;
    let n = table.total as f64;
    let h_a = entropy(&table.row_sums, n);
    let h_b = entropy(&table.col_sums, n);
    if h_a == 0.0 || h_b == 0.0 {
        warn!("NMI undefined for a single-cluster labeling; reporting 0");
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let pij = c as f64 / n;
            let pi = table.row_sums[i] as f64 / n;
            let pj = table.col_sums[j] as f64 / n;
            mi += pij * (pij / (pi * pj)).ln();
        }
    }
    Ok((mi / (h_a * h_b).sqrt()).clamp(0.0, 1.0))
}

/// Fraction of each source cluster (rows, indexed by label value) falling in
/// each target cluster (columns, indexed by label value).
///
/// A label value absent from `labels_a` yields a row of zeros.
pub fn overlap_table(labels_a: &[usize], labels_b: &[usize]) -> Result<Vec<Vec<f64>>> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::input(format!(
            "label length mismatch: {} vs {}",
            labels_a.len(),
            labels_b.len()
        )));
    }
    let n_rows = labels_a.iter().max().map_or(0, |m| m + 1);
    let n_cols = labels_b.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0usize; n_cols]; n_rows];
    for (&a, &b) in labels_a.iter().zip(labels_b) {
        counts[a][b] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                warn!("overlap table: source cluster {i} is empty");
                return vec![0.0; n_cols];
            }
            row.into_iter().map(|c| c as f64 / total as f64).collect()
        })
        .collect())
}
