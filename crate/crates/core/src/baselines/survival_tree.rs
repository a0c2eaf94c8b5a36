//! Depth-limited survival tree grown greedily on the two-sample log-rank
//! statistic. A leaf's risk is its Nelson-Aalen cumulative hazard summed
//! over the distinct event times of the fitting cohort, so leaves are
//! compared on one shared time grid.

use log::warn;
use ndarray::{ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::SurvivalOutcome;

/// Upper bound on split thresholds tried per feature and node.
pub const MAX_THRESHOLDS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        risk: f64,
        n_samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalTree {
    pub nodes: Vec<TreeNode>,
    pub max_depth: usize,
}

impl SurvivalTree {
    /// Index into `nodes` of the leaf that `row` falls in (`x <= threshold` goes left).
    pub fn leaf_index(&self, row: ArrayView1<f64>) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
                TreeNode::Leaf { .. } => return i,
            }
        }
    }

    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            TreeNode::Leaf { risk, .. } => risk,
            TreeNode::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    pub fn predict(&self, features: ArrayView2<f64>) -> Vec<f64> {
        features.outer_iter().map(|r| self.predict_row(r)).collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Nelson-Aalen cumulative hazard at the largest observed time.
pub fn nelson_aalen(outcomes: &[SurvivalOutcome]) -> f64 {
    let mut sorted: Vec<&SurvivalOutcome> = outcomes.iter().collect();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut at_risk = sorted.len();
    let mut hazard = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].time;
        let mut d = 0;
        let mut leaving = 0;
        while i < sorted.len() && sorted[i].time == t {
            d += usize::from(sorted[i].event);
            leaving += 1;
            i += 1;
        }
        if d > 0 {
            hazard += d as f64 / at_risk as f64;
        }
        at_risk -= leaving;
    }
    hazard
}

/// `sum_{t in grid} H(t)` for the Nelson-Aalen estimate `H` of `outcomes`;
/// `grid` must be ascending.
pub fn mortality(outcomes: &[SurvivalOutcome], grid: &[f64]) -> f64 {
    let mut sorted: Vec<&SurvivalOutcome> = outcomes.iter().collect();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut at_risk = sorted.len();
    let (mut hazard, mut total, mut i) = (0.0, 0.0, 0);
    for &t in grid {
        while i < sorted.len() && sorted[i].time <= t {
            let s = sorted[i].time;
            let mut d = 0;
            let mut leaving = 0;
            while i < sorted.len() && sorted[i].time == s {
                d += usize::from(sorted[i].event);
                leaving += 1;
                i += 1;
            }
            if d > 0 {
                hazard += d as f64 / at_risk as f64;
            }
            at_risk -= leaving;
        }
        total += hazard;
    }
    total
}

/// Samples of one node, pre-sorted by time, with tie groups.
struct NodeSamples {
    /// sample indices in ascending time order
    order: Vec<usize>,
    /// `[start, end)` ranges of equal time within `order`
    ties: Vec<(usize, usize)>,
}

impl NodeSamples {
    fn new(mut idx: Vec<usize>, outcomes: &[SurvivalOutcome]) -> Self {
        idx.sort_by(|&a, &b| outcomes[a].time.total_cmp(&outcomes[b].time));
        let mut ties = Vec::new();
        let mut s = 0;
        while s < idx.len() {
            let mut e = s + 1;
            while e < idx.len() && outcomes[idx[e]].time == outcomes[idx[s]].time {
                e += 1;
            }
            ties.push((s, e));
            s = e;
        }
        Self { order: idx, ties }
    }
}

/// Two-sample log-rank chi-square for membership flags aligned with `node.order`.
fn two_sample_logrank(node: &NodeSamples, left: &[bool], events: &[bool]) -> Option<f64> {
    let mut n_left = left.iter().filter(|&&l| l).count() as f64;
    let mut n = left.len() as f64;
    let (mut o_minus_e, mut var) = (0.0, 0.0);
    let (mut d_left_total, mut d_right_total) = (0usize, 0usize);
    for &(s, e) in &node.ties {
        let (mut d, mut d_l, mut leave_l) = (0.0, 0.0, 0.0);
        for p in s..e {
            if events[p] {
                d += 1.0;
                if left[p] {
                    d_l += 1.0;
                    d_left_total += 1;
                } else {
                    d_right_total += 1;
                }
            }
            if left[p] {
                leave_l += 1.0;
            }
        }
        if d > 0.0 {
            o_minus_e += d_l - d * n_left / n;
            if n > 1.0 {
                var += d * (n - d) / (n - 1.0) * (n_left / n) * (1.0 - n_left / n);
            }
        }
        n -= (e - s) as f64;
        n_left -= leave_l;
    }
    if d_left_total == 0 || d_right_total == 0 || var <= 0.0 {
        return None;
    }
    Some(o_minus_e * o_minus_e / var)
}

/// Midpoints between consecutive distinct values, thinned to at most
/// [`MAX_THRESHOLDS`] evenly spaced (quantile) candidates.
fn candidate_thresholds(values: &mut Vec<f64>) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mids: Vec<f64> = values.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    if mids.len() <= MAX_THRESHOLDS {
        return mids;
    }
    (0..MAX_THRESHOLDS)
        .map(|i| mids[((i as f64 + 0.5) * mids.len() as f64 / MAX_THRESHOLDS as f64) as usize])
        .collect()
}

struct Grower<'a> {
    features: ArrayView2<'a, f64>,
    outcomes: &'a [SurvivalOutcome],
    candidates: &'a [usize],
    max_depth: usize,
    /// distinct event times of the fitting cohort, ascending
    grid: Vec<f64>,
    nodes: Vec<TreeNode>,
}

impl Grower<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let sub: Vec<SurvivalOutcome> = idx.iter().map(|&i| self.outcomes[i]).collect();
        self.nodes.push(TreeNode::Leaf {
            risk: mortality(&sub, &self.grid),
            n_samples: idx.len(),
        });
        self.nodes.len() - 1
    }

    fn best_split(&self, idx: &[usize]) -> Option<(usize, f64, f64)> {
        let node = NodeSamples::new(idx.to_vec(), self.outcomes);
        let events: Vec<bool> = node.order.iter().map(|&i| self.outcomes[i].event).collect();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut left = vec![false; node.order.len()];
        for &f in self.candidates {
            let column: Vec<f64> = node.order.iter().map(|&i| self.features[[i, f]]).collect();
            let mut distinct = column.clone();
            for thr in candidate_thresholds(&mut distinct) {
                for (l, &v) in left.iter_mut().zip(&column) {
                    *l = v <= thr;
                }
                if let Some(stat) = two_sample_logrank(&node, &left, &events) {
                    if best.is_none_or(|b| stat > b.2) {
                        best = Some((f, thr, stat));
                    }
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        if depth >= self.max_depth || idx.len() < 2 {
            return self.leaf(&idx);
        }
        let Some((feature, threshold, _)) = self.best_split(&idx) else {
            return self.leaf(&idx);
        };
        let slot = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            risk: 0.0,
            n_samples: 0,
        });
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.features[[i, feature]] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[slot] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        slot
    }
}

/// Grows a tree on all rows, considering only `feature_subset` (all columns
/// when `None`) for splits.
pub fn fit_survival_tree(
    features: ArrayView2<f64>,
    outcomes: &[SurvivalOutcome],
    feature_subset: Option<&[usize]>,
    max_depth: usize,
) -> Result<SurvivalTree> {
    if features.nrows() != outcomes.len() {
        return Err(Error::input(format!(
            "{} feature rows but {} outcomes",
            features.nrows(),
            outcomes.len()
        )));
    }
    if outcomes.len() < 2 || !outcomes.iter().any(|o| o.event) {
        return Err(Error::input(
            "survival tree needs at least 2 samples and 1 event",
        ));
    }
    let all: Vec<usize> = (0..features.ncols()).collect();
    let candidates = feature_subset.unwrap_or(&all);
    if let Some(&bad) = candidates.iter().find(|&&f| f >= features.ncols()) {
        return Err(Error::input(format!("feature index {bad} out of range")));
    }
    let mut grid: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.event)
        .map(|o| o.time)
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut grower = Grower {
        features,
        outcomes,
        candidates,
        max_depth,
        grid,
        nodes: Vec::new(),
    };
    grower.grow((0..outcomes.len()).collect(), 0);
    let tree = SurvivalTree {
        nodes: grower.nodes,
        max_depth,
    };
    if max_depth > 0 && tree.n_leaves() == 1 {
        warn!("survival tree: no valid split at the root, returning a single leaf");
    }
    Ok(tree)
}
