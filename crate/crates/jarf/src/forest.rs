//! Bagged CART ensembles with soft voting: per-leaf class frequencies
//! averaged over trees. Tree `t` draws its bootstrap rows from the stream
//! `(seed, "bootstrap", t)` and its per-node feature subsets from
//! `(seed, "features", t)`, so training is bit-identical for any thread
//! count or scheduling order.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tree::{grow_tree, tree_predict_counts, tree_predict_mean, TreeNode, TreeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<TreeNode>,
    pub params: TreeParams,
    pub n_trees: usize,
    pub task: Task,
    pub n_classes: usize,
    pub d: usize,
    pub seed: u64,
}

/// Fit `n_trees` bagged trees; tree order in the result is by tree index.
pub fn fit_forest(
    dataset: &Dataset,
    params: &TreeParams,
    n_trees: usize,
    seed: u64,
) -> Result<Forest> {
    if n_trees < 1 {
        return Err(Error::InvalidParam("need n_trees >= 1".into()));
    }
    params.validate(dataset.d())?;
    let n = dataset.n();
    let trees: Vec<TreeNode> = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut boot_rng = stream(seed, "bootstrap", t as u64);
            let rows: Vec<usize> = (0..n).map(|_| boot_rng.gen_range(0..n)).collect();
            let mut feat_rng = stream(seed, "features", t as u64);
            grow_tree(&rows, dataset, params, &mut feat_rng)
        })
        .collect();
    Ok(Forest {
        trees,
        params: *params,
        n_trees,
        task: dataset.task,
        n_classes: dataset.n_classes,
        d: dataset.d(),
        seed,
    })
}

impl Forest {
    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "input has {} features, forest expects {}",
                x.len(),
                self.d
            )));
        }
        Ok(())
    }

    /// Average over trees of per-leaf class frequencies; sums to 1.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.task != Task::Classification {
            return Err(Error::InvalidParam("predict_proba on a regression forest".into()));
        }
        self.check_x(x)?;
        let mut acc = vec![0.0; self.n_classes];
        for tree in &self.trees {
            let counts = tree_predict_counts(tree, x)?;
            let total: u64 = counts.iter().map(|&c| c as u64).sum();
            let t = total as f64;
            for (a, &c) in acc.iter_mut().zip(counts) {
                *a += c as f64 / t;
            }
        }
        let nt = self.n_trees as f64;
        for a in &mut acc {
            *a /= nt;
        }
        Ok(acc)
    }

    /// Mean of per-tree leaf means.
    pub fn predict_value(&self, x: &[f64]) -> Result<f64> {
        if self.task != Task::Regression {
            return Err(Error::InvalidParam("predict_value on a classification forest".into()));
        }
        self.check_x(x)?;
        let mut acc = 0.0;
        for tree in &self.trees {
            acc += tree_predict_mean(tree, x)?;
        }
        Ok(acc / self.n_trees as f64)
    }

    /// Argmax of predict_proba; ties break to the lowest class index.
    pub fn predict_label(&self, x: &[f64]) -> Result<usize> {
        let p = self.predict_proba(x)?;
        let mut best = 0;
        for (c, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = c;
            }
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_rotated_hyperplane, Labels};
    use crate::linalg::Matrix;

    #[test]
    fn small_forest_separable_perfect() {
        let values: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let labels: Vec<usize> = (0..40).map(|i| (i >= 20) as usize).collect();
        let ds = Dataset::new(
            Matrix { rows: 40, cols: 1, data: values },
            Labels::Classes(labels.clone()),
            Task::Classification,
            2,
            vec!["x".into()],
        )
        .unwrap();
        // bootstrap sampling can drop a boundary row from one tree, so vote
        // over a small ensemble rather than a single tree
        let f = fit_forest(&ds, &TreeParams::defaults(Task::Classification, 1), 25, 3).unwrap();
        let correct = (0..40)
            .filter(|&i| f.predict_label(ds.features.row(i)).unwrap() == labels[i])
            .count();
        assert_eq!(correct, 40);
    }

    #[test]
    fn same_seed_identical_forest() {
        let (ds, _) = gen_rotated_hyperplane(150, 4, 30.0, 0.2, 5).unwrap();
        let p = TreeParams::defaults(Task::Classification, 4);
        let f1 = fit_forest(&ds, &p, 20, 11).unwrap();
        let f2 = fit_forest(&ds, &p, 20, 11).unwrap();
        assert_eq!(
            serde_json::to_vec(&f1).unwrap(),
            serde_json::to_vec(&f2).unwrap(),
            "serialized forms byte-equal"
        );
    }

    #[test]
    fn forest_invariant_to_thread_count() {
        let (ds, _) = gen_rotated_hyperplane(150, 4, 30.0, 0.2, 5).unwrap();
        let p = TreeParams::defaults(Task::Classification, 4);
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let f1 = pool1.install(|| fit_forest(&ds, &p, 16, 9).unwrap());
        let f4 = pool4.install(|| fit_forest(&ds, &p, 16, 9).unwrap());
        assert_eq!(f1, f4);
    }

    #[test]
    fn proba_simplex_and_hand_average() {
        // three stump-free trees: leaves [2,2], [3,1], [0,4]
        let mk = |counts: Vec<u32>| TreeNode::ClassLeaf { counts };
        let forest = Forest {
            trees: vec![mk(vec![2, 2]), mk(vec![3, 1]), mk(vec![0, 4])],
            params: TreeParams::defaults(Task::Classification, 1),
            n_trees: 3,
            task: Task::Classification,
            n_classes: 2,
            d: 1,
            seed: 0,
        };
        let p = forest.predict_proba(&[0.0]).unwrap();
        assert!((p[0] - 0.41666666666666663).abs() < 1e-12);
        assert!((p[1] - 0.5833333333333334).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn proba_pure_leaf_and_symmetric_vote() {
        let one = Forest {
            trees: vec![TreeNode::ClassLeaf { counts: vec![4, 0] }],
            params: TreeParams::defaults(Task::Classification, 1),
            n_trees: 1,
            task: Task::Classification,
            n_classes: 2,
            d: 1,
            seed: 0,
        };
        assert_eq!(one.predict_proba(&[0.0]).unwrap(), vec![1.0, 0.0]);
        let two = Forest {
            trees: vec![
                TreeNode::ClassLeaf { counts: vec![1, 0] },
                TreeNode::ClassLeaf { counts: vec![0, 1] },
            ],
            n_trees: 2,
            ..one.clone()
        };
        assert_eq!(two.predict_proba(&[5.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn predict_label_ties_and_argmax() {
        let argmax = |p: &Forest, x: &[f64]| p.predict_label(x).unwrap();
        let mk = |counts: Vec<u32>, c: usize| Forest {
            trees: vec![TreeNode::ClassLeaf { counts }],
            params: TreeParams::defaults(Task::Classification, 1),
            n_trees: 1,
            task: Task::Classification,
            n_classes: c,
            d: 1,
            seed: 0,
        };
        assert_eq!(argmax(&mk(vec![1, 4], 2), &[0.0]), 1);
        assert_eq!(argmax(&mk(vec![2, 2], 2), &[0.0]), 0, "tie goes low");
        assert_eq!(argmax(&mk(vec![2, 5, 3], 3), &[0.0]), 1);
    }

    #[test]
    fn regression_forest_means() {
        let one = Forest {
            trees: vec![TreeNode::ValueLeaf { mean: 3.2, count: 5 }],
            params: TreeParams::defaults(Task::Regression, 1),
            n_trees: 1,
            task: Task::Regression,
            n_classes: 0,
            d: 1,
            seed: 0,
        };
        assert_eq!(one.predict_value(&[0.0]).unwrap(), 3.2);
        let two = Forest {
            trees: vec![
                TreeNode::ValueLeaf { mean: 1.0, count: 1 },
                TreeNode::ValueLeaf { mean: 3.0, count: 1 },
            ],
            n_trees: 2,
            ..one.clone()
        };
        assert_eq!(two.predict_value(&[0.0]).unwrap(), 2.0);
    }

    #[test]
    fn constant_label_regression_predicts_constant() {
        let ds = Dataset::new(
            Matrix { rows: 10, cols: 2, data: (0..20).map(|i| i as f64).collect() },
            Labels::Values(vec![4.25; 10]),
            Task::Regression,
            0,
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let f = fit_forest(&ds, &TreeParams::defaults(Task::Regression, 2), 5, 1).unwrap();
        assert_eq!(f.predict_value(&[100.0, -3.0]).unwrap(), 4.25);
    }

    #[test]
    fn task_mismatch_errors() {
        let cls = Forest {
            trees: vec![TreeNode::ClassLeaf { counts: vec![1, 1] }],
            params: TreeParams::defaults(Task::Classification, 1),
            n_trees: 1,
            task: Task::Classification,
            n_classes: 2,
            d: 1,
            seed: 0,
        };
        assert!(cls.predict_value(&[0.0]).is_err());
        let reg = Forest { task: Task::Regression, ..cls };
        assert!(reg.predict_proba(&[0.0]).is_err());
    }
}
