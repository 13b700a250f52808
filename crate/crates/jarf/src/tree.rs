//! Axis-aligned CART trees: Gini for classification, variance for
//! regression. Split search is exact (full sort per node per candidate
//! feature) with thresholds at midpoints of consecutive distinct values.
//! Equal-gain ties break to the lowest feature index, then the lowest
//! threshold, so tree growth is fully deterministic.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Labels, Task};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Gini,
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// None = unlimited depth.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Candidate features per split, 1..=d.
    pub mtry: usize,
    pub criterion: Criterion,
}

impl TreeParams {
    /// Table-default params for a task: unlimited depth, min_samples_leaf 1,
    /// mtry = ceil(sqrt(d)) for classification and d for regression.
    pub fn defaults(task: Task, d: usize) -> TreeParams {
        let (mtry, criterion) = match task {
            Task::Classification => ((d as f64).sqrt().ceil() as usize, Criterion::Gini),
            Task::Regression => (d, Criterion::Variance),
        };
        TreeParams {
            max_depth: None,
            min_samples_leaf: 1,
            mtry: mtry.clamp(1, d),
            criterion,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.min_samples_leaf < 1 {
            return Err(Error::InvalidParam("min_samples_leaf must be >= 1".into()));
        }
        if self.mtry < 1 || self.mtry > d {
            return Err(Error::InvalidParam(format!(
                "mtry must be in 1..={d}, got {}",
                self.mtry
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Internal {
        split_feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    ClassLeaf {
        counts: Vec<u32>,
    },
    ValueLeaf {
        mean: f64,
        count: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Gini impurity 1 - sum_c p_c^2 of a class-count vector.
pub fn gini_from_counts(counts: &[u32]) -> f64 {
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

/// Mean squared deviation from the slice mean.
pub fn variance_of(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Node impurity under the given criterion for the labels of `rows`.
pub fn impurity(rows: &[usize], dataset: &Dataset, criterion: Criterion) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::InvalidParam("impurity of an empty node".into()));
    }
    match (criterion, &dataset.labels) {
        (Criterion::Gini, Labels::Classes(y)) => {
            let mut counts = vec![0u32; dataset.n_classes];
            for &i in rows {
                counts[y[i]] += 1;
            }
            Ok(gini_from_counts(&counts))
        }
        (Criterion::Variance, Labels::Values(y)) => {
            let vals: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
            Ok(variance_of(&vals))
        }
        _ => Err(Error::InvalidParam("criterion does not match label kind".into())),
    }
}

// Running variance bookkeeping via sums; clamped at zero to absorb rounding.
#[inline]
fn var_from_sums(sum: f64, sumsq: f64, k: f64) -> f64 {
    let v = sumsq / k - (sum / k) * (sum / k);
    v.max(0.0)
}

/// Best split over the feature subset, maximizing weighted impurity
/// decrease; `None` when no split has positive gain. `feature_subset` is
/// scanned in ascending order and thresholds ascending, so the first
/// strict maximum realizes the tie rule.
pub fn best_split(
    rows: &[usize],
    feature_subset: &[usize],
    dataset: &Dataset,
    params: &TreeParams,
) -> Option<SplitCandidate> {
    let n = rows.len();
    if n < 2 * params.min_samples_leaf {
        return None;
    }
    let nf = n as f64;
    let mut best: Option<SplitCandidate> = None;

    match (&dataset.labels, params.criterion) {
        (Labels::Classes(y), Criterion::Gini) => {
            let c = dataset.n_classes;
            let mut total = vec![0u32; c];
            for &i in rows {
                total[y[i]] += 1;
            }
            let parent = gini_from_counts(&total);
            let mut order: Vec<usize> = rows.to_vec();
            let mut left = vec![0u32; c];
            for &f in feature_subset {
                order.sort_by(|&a, &b| {
                    dataset
                        .features
                        .get(a, f)
                        .partial_cmp(&dataset.features.get(b, f))
                        .unwrap()
                });
                left.iter_mut().for_each(|v| *v = 0);
                for k in 0..n - 1 {
                    left[y[order[k]]] += 1;
                    let v0 = dataset.features.get(order[k], f);
                    let v1 = dataset.features.get(order[k + 1], f);
                    if v0 == v1 {
                        continue;
                    }
                    let nl = k + 1;
                    let nr = n - nl;
                    if nl < params.min_samples_leaf || nr < params.min_samples_leaf {
                        continue;
                    }
                    let mut right = total.clone();
                    for (rc, lc) in right.iter_mut().zip(&left) {
                        *rc -= lc;
                    }
                    let gain = parent
                        - (nl as f64 / nf) * gini_from_counts(&left)
                        - (nr as f64 / nf) * gini_from_counts(&right);
                    if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                        best = Some(SplitCandidate {
                            feature: f,
                            threshold: 0.5 * (v0 + v1),
                            gain,
                        });
                    }
                }
            }
        }
        (Labels::Values(y), Criterion::Variance) => {
            let total_sum: f64 = rows.iter().map(|&i| y[i]).sum();
            let total_sumsq: f64 = rows.iter().map(|&i| y[i] * y[i]).sum();
            let parent = var_from_sums(total_sum, total_sumsq, nf);
            let mut order: Vec<usize> = rows.to_vec();
            for &f in feature_subset {
                order.sort_by(|&a, &b| {
                    dataset
                        .features
                        .get(a, f)
                        .partial_cmp(&dataset.features.get(b, f))
                        .unwrap()
                });
                let mut lsum = 0.0;
                let mut lsumsq = 0.0;
                for k in 0..n - 1 {
                    let yv = y[order[k]];
                    lsum += yv;
                    lsumsq += yv * yv;
                    let v0 = dataset.features.get(order[k], f);
                    let v1 = dataset.features.get(order[k + 1], f);
                    if v0 == v1 {
                        continue;
                    }
                    let nl = k + 1;
                    let nr = n - nl;
                    if nl < params.min_samples_leaf || nr < params.min_samples_leaf {
                        continue;
                    }
                    let gain = parent
                        - (nl as f64 / nf) * var_from_sums(lsum, lsumsq, nl as f64)
                        - (nr as f64 / nf)
                            * var_from_sums(total_sum - lsum, total_sumsq - lsumsq, nr as f64);
                    if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                        best = Some(SplitCandidate {
                            feature: f,
                            threshold: 0.5 * (v0 + v1),
                            gain,
                        });
                    }
                }
            }
        }
        _ => return None,
    }
    best
}

fn make_leaf(rows: &[usize], dataset: &Dataset) -> TreeNode {
    match &dataset.labels {
        Labels::Classes(y) => {
            let mut counts = vec![0u32; dataset.n_classes];
            for &i in rows {
                counts[y[i]] += 1;
            }
            TreeNode::ClassLeaf { counts }
        }
        Labels::Values(y) => {
            let sum: f64 = rows.iter().map(|&i| y[i]).sum();
            TreeNode::ValueLeaf {
                mean: sum / rows.len() as f64,
                count: rows.len() as u32,
            }
        }
    }
}

fn is_pure(rows: &[usize], dataset: &Dataset) -> bool {
    match &dataset.labels {
        Labels::Classes(y) => rows.iter().all(|&i| y[i] == y[rows[0]]),
        Labels::Values(y) => rows.iter().all(|&i| y[i] == y[rows[0]]),
    }
}

/// Recursive CART growth. At each node `mtry` features are sampled without
/// replacement from `rng`; recursion is depth-first (left first), so the
/// stream consumption order — and hence the tree — is a pure function of
/// the inputs.
pub fn grow_tree(
    rows: &[usize],
    dataset: &Dataset,
    params: &TreeParams,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    grow_rec(rows, dataset, params, rng, 0)
}

fn grow_rec(
    rows: &[usize],
    dataset: &Dataset,
    params: &TreeParams,
    rng: &mut ChaCha8Rng,
    depth: usize,
) -> TreeNode {
    debug_assert!(!rows.is_empty());
    let depth_capped = params.max_depth.is_some_and(|cap| depth >= cap);
    if rows.len() < 2 * params.min_samples_leaf || depth_capped || is_pure(rows, dataset) {
        return make_leaf(rows, dataset);
    }
    let subset = sample_features(dataset.d(), params.mtry, rng);
    let Some(split) = best_split(rows, &subset, dataset, params) else {
        return make_leaf(rows, dataset);
    };
    let (mut left_rows, mut right_rows) = (Vec::new(), Vec::new());
    for &i in rows {
        if dataset.features.get(i, split.feature) <= split.threshold {
            left_rows.push(i);
        } else {
            right_rows.push(i);
        }
    }
    TreeNode::Internal {
        split_feature: split.feature,
        threshold: split.threshold,
        left: Box::new(grow_rec(&left_rows, dataset, params, rng, depth + 1)),
        right: Box::new(grow_rec(&right_rows, dataset, params, rng, depth + 1)),
    }
}

/// `mtry` distinct feature indices, returned ascending.
fn sample_features(d: usize, mtry: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..d).collect();
    for i in 0..mtry {
        let j = rng.gen_range(i..d);
        idx.swap(i, j);
    }
    let mut out = idx[..mtry].to_vec();
    out.sort_unstable();
    out
}

/// Route `x` to its leaf: ties at the threshold go left (x <= tau).
pub fn tree_find_leaf<'a>(tree: &'a TreeNode, x: &[f64]) -> &'a TreeNode {
    let mut node = tree;
    loop {
        match node {
            TreeNode::Internal { split_feature, threshold, left, right } => {
                node = if x[*split_feature] <= *threshold { left } else { right };
            }
            leaf => return leaf,
        }
    }
}

/// Leaf class counts for `x` (classification trees).
pub fn tree_predict_counts<'a>(tree: &'a TreeNode, x: &[f64]) -> Result<&'a [u32]> {
    match tree_find_leaf(tree, x) {
        TreeNode::ClassLeaf { counts } => Ok(counts),
        _ => Err(Error::InvalidParam("not a classification tree".into())),
    }
}

/// Leaf mean for `x` (regression trees).
pub fn tree_predict_mean(tree: &TreeNode, x: &[f64]) -> Result<f64> {
    match tree_find_leaf(tree, x) {
        TreeNode::ValueLeaf { mean, .. } => Ok(*mean),
        _ => Err(Error::InvalidParam("not a regression tree".into())),
    }
}
