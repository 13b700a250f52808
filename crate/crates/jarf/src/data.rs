//! Dataset ingestion, synthetic generation, feature statistics, subsampling,
//! and 5x2 cross-validation fold construction.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{stream, NormalSampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Labels {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(v) => v.len(),
            Labels::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> &[usize] {
        match self {
            Labels::Classes(v) => v,
            Labels::Values(_) => panic!("regression labels where classes expected"),
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Labels::Values(v) => v,
            Labels::Classes(_) => panic!("class labels where values expected"),
        }
    }
}

/// Feature matrix with labels; the structure every stage consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Labels,
    pub task: Task,
    /// Number of classes (classification only; 0 for regression).
    pub n_classes: usize,
    pub feature_names: Vec<String>,
    /// Original label strings by class index, when loaded from CSV.
    pub label_mapping: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Labels,
        task: Task,
        n_classes: usize,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = features.rows;
        let d = features.cols;
        if n < 2 {
            return Err(Error::InvalidDataset(format!("need n >= 2, got {n}")));
        }
        if d < 1 {
            return Err(Error::InvalidDataset("need d >= 1".into()));
        }
        if labels.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{} labels for {} rows",
                labels.len(),
                n
            )));
        }
        if features.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        match (&labels, task) {
            (Labels::Classes(c), Task::Classification) => {
                if n_classes < 2 {
                    return Err(Error::InvalidDataset("need at least 2 classes".into()));
                }
                if c.iter().any(|&y| y >= n_classes) {
                    return Err(Error::InvalidDataset("class index out of range".into()));
                }
            }
            (Labels::Values(v), Task::Regression) => {
                if v.iter().any(|y| !y.is_finite()) {
                    return Err(Error::NonFinite("regression labels".into()));
                }
            }
            _ => return Err(Error::InvalidDataset("label kind does not match task".into())),
        }
        if feature_names.len() != d {
            return Err(Error::InvalidDataset("feature_names length != d".into()));
        }
        Ok(Dataset { features, labels, task, n_classes, feature_names, label_mapping: None })
    }

    pub fn n(&self) -> usize {
        self.features.rows
    }

    pub fn d(&self) -> usize {
        self.features.cols
    }

    /// Restrict to the given rows (copies).
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let d = self.d();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            data.extend_from_slice(self.features.row(i));
        }
        let labels = match &self.labels {
            Labels::Classes(c) => Labels::Classes(rows.iter().map(|&i| c[i]).collect()),
            Labels::Values(v) => Labels::Values(rows.iter().map(|&i| v[i]).collect()),
        };
        Dataset {
            features: Matrix { rows: rows.len(), cols: d, data },
            labels,
            task: self.task,
            n_classes: self.n_classes,
            feature_names: self.feature_names.clone(),
            label_mapping: self.label_mapping.clone(),
        }
    }

    /// Same labels/metadata, different feature matrix (e.g. after a linear map).
    pub fn with_features(&self, features: Matrix) -> Dataset {
        assert_eq!(features.rows, self.n());
        Dataset {
            features,
            labels: self.labels.clone(),
            task: self.task,
            n_classes: self.n_classes,
            feature_names: self.feature_names.clone(),
            label_mapping: self.label_mapping.clone(),
        }
    }
}

/// Which CSV column holds the label.
#[derive(Debug, Clone)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

/// Strict CSV loader: comma-separated, mandatory header, '.' decimals,
/// no quoting; any malformed row is an error, any non-finite feature is
/// rejected. Classification label strings map to 0..C-1 by first appearance.
pub fn load_csv(path: &Path, label_column: &LabelColumn, task: Task) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Csv { line: 1, msg: "empty file".into() })?;
    let names: Vec<&str> = header.split(',').collect();
    let label_idx = match label_column {
        LabelColumn::Name(n) => names
            .iter()
            .position(|h| h == n)
            .ok_or_else(|| Error::Csv { line: 1, msg: format!("label column '{n}' not found") })?,
        LabelColumn::Index(i) => {
            if *i >= names.len() {
                return Err(Error::Csv { line: 1, msg: format!("label index {i} out of range") });
            }
            *i
        }
    };
    let feature_names: Vec<String> = names
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, s)| s.to_string())
        .collect();
    let d = feature_names.len();
    if d == 0 {
        return Err(Error::Csv { line: 1, msg: "no feature columns".into() });
    }

    let mut data: Vec<f64> = Vec::new();
    let mut class_labels: Vec<usize> = Vec::new();
    let mut value_labels: Vec<f64> = Vec::new();
    let mut mapping: Vec<String> = Vec::new();
    let mut n = 0usize;
    for (lineno0, line) in lines {
        let lineno = lineno0 + 1;
        if line.is_empty() {
            return Err(Error::Csv { line: lineno, msg: "empty row".into() });
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != names.len() {
            return Err(Error::Csv {
                line: lineno,
                msg: format!("expected {} cells, got {}", names.len(), cells.len()),
            });
        }
        for (i, cell) in cells.iter().enumerate() {
            if i == label_idx {
                if cell.is_empty() {
                    return Err(Error::Csv { line: lineno, msg: "empty label".into() });
                }
                match task {
                    Task::Classification => {
                        let idx = match mapping.iter().position(|m| m == cell) {
                            Some(p) => p,
                            None => {
                                mapping.push(cell.to_string());
                                mapping.len() - 1
                            }
                        };
                        class_labels.push(idx);
                    }
                    Task::Regression => {
                        let v: f64 = cell.parse().map_err(|_| Error::Csv {
                            line: lineno,
                            msg: format!("bad label '{cell}'"),
                        })?;
                        if !v.is_finite() {
                            return Err(Error::Csv {
                                line: lineno,
                                msg: "non-finite label".into(),
                            });
                        }
                        value_labels.push(v);
                    }
                }
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Csv {
                    line: lineno,
                    msg: format!("bad feature cell '{cell}'"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Csv {
                        line: lineno,
                        msg: format!("non-finite feature '{cell}'"),
                    });
                }
                data.push(v);
            }
        }
        n += 1;
    }

    let features = Matrix { rows: n, cols: d, data };
    let (labels, n_classes) = match task {
        Task::Classification => {
            let c = mapping.len();
            (Labels::Classes(class_labels), c)
        }
        Task::Regression => (Labels::Values(value_labels), 0),
    };
    if task == Task::Classification && n_classes < 2 {
        return Err(Error::InvalidDataset(
            "classification needs >= 2 distinct labels".into(),
        ));
    }
    let mut ds = Dataset::new(features, labels, task, n_classes, feature_names)?;
    if task == Task::Classification {
        ds.label_mapping = Some(mapping);
    }
    Ok(ds)
}

/// Write back in the same strict dialect. Classification labels are written
/// through `label_mapping` when present, else as bare class indices. Floats
/// use Rust's shortest round-trip formatting, so load(write(ds)) == ds.
pub fn write_csv(dataset: &Dataset, path: &Path, label_name: &str) -> Result<()> {
    let mut out = String::new();
    for name in &dataset.feature_names {
        out.push_str(name);
        out.push(',');
    }
    out.push_str(label_name);
    out.push('\n');
    for i in 0..dataset.n() {
        for v in dataset.features.row(i) {
            let _ = write!(out, "{v},");
        }
        match &dataset.labels {
            Labels::Classes(c) => match &dataset.label_mapping {
                Some(map) => out.push_str(&map[c[i]]),
                None => {
                    let _ = write!(out, "{}", c[i]);
                }
            },
            Labels::Values(v) => {
                let _ = write!(out, "{}", v[i]);
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Noisy rotated-halfspace generator: x ~ N(0, I_d), label = 1{v^T x + eta >= 0}
/// with v = cos(theta) e1 + sin(theta) e2 and eta ~ N(0, sigma^2).
/// Returns the dataset and the true unit normal for alignment analysis.
pub fn gen_rotated_hyperplane(
    n: usize,
    d: usize,
    theta_deg: f64,
    sigma: f64,
    seed: u64,
) -> Result<(Dataset, Vec<f64>)> {
    if d < 2 {
        return Err(Error::InvalidParam(format!("need d >= 2, got {d}")));
    }
    if sigma < 0.0 {
        return Err(Error::InvalidParam("sigma must be >= 0".into()));
    }
    if n < 2 {
        return Err(Error::InvalidParam("need n >= 2".into()));
    }
    let theta = theta_deg.to_radians();
    let mut v = vec![0.0; d];
    v[0] = theta.cos();
    v[1] = theta.sin();

    let mut ns = NormalSampler::new(stream(seed, "hyperplane", 0));
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let row_start = data.len();
        for _ in 0..d {
            data.push(ns.sample());
        }
        let x = &data[row_start..row_start + d];
        let eta = if sigma > 0.0 { sigma * ns.sample() } else { 0.0 };
        let score = v[0] * x[0] + v[1] * x[1] + eta;
        labels.push(if score >= 0.0 { 1 } else { 0 });
    }
    let feature_names = (0..d).map(|j| format!("x{j}")).collect();
    let ds = Dataset::new(
        Matrix { rows: n, cols: d, data },
        Labels::Classes(labels),
        Task::Classification,
        2,
        feature_names,
    )?;
    Ok((ds, v))
}

/// Per-feature robust scale statistics and the finite-difference steps they
/// imply.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mad: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// epsilon_j = alpha * MAD_j / 0.6745, with fallbacks for degenerate
    /// columns (see `feature_stats`).
    pub fd_step: Vec<f64>,
    pub alpha: f64,
    /// Features where both MAD and standard deviation are zero.
    pub degenerate: Vec<bool>,
}

fn median_of(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// MAD-calibrated per-feature FD steps: epsilon_j = alpha * MAD_j / 0.6745.
///
/// When MAD is zero the sample standard deviation substitutes for
/// MAD/0.6745; when that is also zero (constant column) the step is 1 and
/// the feature is flagged degenerate — its FD gradient is 0 regardless.
pub fn feature_stats(dataset: &Dataset, alpha: f64) -> Result<FeatureStats> {
    if alpha <= 0.0 {
        return Err(Error::InvalidParam(format!("alpha must be > 0, got {alpha}")));
    }
    let n = dataset.n();
    let d = dataset.d();
    if n == 0 {
        return Err(Error::InvalidDataset("empty dataset".into()));
    }
    let mut mad = vec![0.0; d];
    let mut mn = vec![0.0; d];
    let mut mx = vec![0.0; d];
    let mut step = vec![0.0; d];
    let mut degenerate = vec![false; d];
    let mut col = vec![0.0; n];
    for j in 0..d {
        for (i, c) in col.iter_mut().enumerate() {
            *c = dataset.features.get(i, j);
        }
        mn[j] = col.iter().cloned().fold(f64::INFINITY, f64::min);
        mx[j] = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sorted = col.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = median_of(&sorted);
        let mut dev: Vec<f64> = col.iter().map(|x| (x - med).abs()).collect();
        dev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        mad[j] = median_of(&dev);
        if mad[j] > 0.0 {
            step[j] = alpha * mad[j] / 0.6745;
        } else {
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            if sd > 0.0 {
                step[j] = alpha * sd;
            } else {
                step[j] = 1.0;
                degenerate[j] = true;
            }
        }
    }
    Ok(FeatureStats { mad, min: mn, max: mx, fd_step: step, alpha, degenerate })
}

/// Five 50/50 splits of 0..n-1, each usable in both orientations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldPlan {
    pub repetitions: Vec<(Vec<usize>, Vec<usize>)>,
    pub seed: u64,
    pub stratified: bool,
}

/// 5x2 CV folds: five independent shuffles, each split 50/50; stratified
/// for classification, plain for regression. Deterministic given seed.
pub fn make_5x2_folds(dataset: &Dataset, seed: u64) -> Result<FoldPlan> {
    let n = dataset.n();
    let stratified = dataset.task == Task::Classification;
    if stratified && n < 2 * dataset.n_classes {
        return Err(Error::InvalidDataset(format!(
            "need n >= 2C = {} for stratified folds, got {n}",
            2 * dataset.n_classes
        )));
    }
    let mut reps = Vec::with_capacity(5);
    for r in 0..5u64 {
        let mut rng = stream(seed, "fold", r);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        if stratified {
            let classes = dataset.labels.classes();
            let mut odd_rank = 0usize;
            for c in 0..dataset.n_classes {
                let mut members: Vec<usize> =
                    (0..n).filter(|&i| classes[i] == c).collect();
                if members.len() < 2 {
                    return Err(Error::InvalidDataset(format!(
                        "class {c} has fewer than 2 members"
                    )));
                }
                shuffle(&mut members, &mut rng);
                let half = members.len() / 2;
                // alternate which side receives the extra element of odd classes
                let cut = if members.len() % 2 == 1 {
                    odd_rank += 1;
                    if odd_rank % 2 == 1 {
                        half + 1
                    } else {
                        half
                    }
                } else {
                    half
                };
                a.extend_from_slice(&members[..cut]);
                b.extend_from_slice(&members[cut..]);
            }
            a.sort_unstable();
            b.sort_unstable();
        } else {
            let mut idx: Vec<usize> = (0..n).collect();
            shuffle(&mut idx, &mut rng);
            let cut = n.div_ceil(2);
            a = idx[..cut].to_vec();
            b = idx[cut..].to_vec();
            a.sort_unstable();
            b.sort_unstable();
        }
        reps.push((a, b));
    }
    Ok(FoldPlan { repetitions: reps, seed, stratified })
}

fn shuffle<R: Rng>(v: &mut [usize], rng: &mut R) {
    for i in (1..v.len()).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
}

/// Uniform sample without replacement of size min(m, n), sorted ascending.
pub fn subsample_indices(n: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    if m < 1 {
        return Err(Error::InvalidParam("subsample cap must be >= 1".into()));
    }
    if n == 0 {
        return Err(Error::InvalidParam("n must be >= 1".into()));
    }
    let k = m.min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = stream(seed, "subsample", 0);
    // partial Fisher-Yates: the first k slots end up a uniform k-subset
    for i in 0..k {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    let mut out = idx[..k].to_vec();
    out.sort_unstable();
    Ok(out)
}
