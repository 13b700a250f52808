//! End-to-end trainers (plain forest, PCA-rotated forest, Jacobian-aligned
//! forest) and versioned JSON model serialization.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{feature_stats, subsample_indices, Dataset, Task};
use crate::ejop::{build_preconditioner, estimate_ejop, FdOptions, Preconditioner};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, Forest};
use crate::linalg::{sym_eigen, transform, Matrix, SymMatrix};
use crate::rng::derive_seed;
use crate::tree::TreeParams;

/// Version stamp for every serialized model file.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Hyperparameters of the Jacobian-aligned pipeline. Defaults: alpha 0.1,
/// gamma 1e-3, up to 10000 probes, 50 surrogate trees, 200 final trees,
/// centered clipped finite differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JarfConfig {
    /// Step-size multiplier for the robust per-feature scale.
    pub alpha: f64,
    /// Ridge added to the raw estimate before normalization.
    pub gamma: f64,
    /// Probe budget; capped at n during training.
    pub m: usize,
    pub fd: FdOptions,
    pub surrogate_trees: usize,
    pub final_trees: usize,
    /// Sum gradient outer products over every class instead of probing only
    /// the observed class.
    pub sum_over_classes: bool,
    /// Ablation: skip estimation entirely and train on the raw features.
    pub identity_h: bool,
    /// Ablation switch: when false the applied transform is H0 + gamma I
    /// without trace normalization.
    pub trace_normalize: bool,
}

impl Default for JarfConfig {
    fn default() -> Self {
        JarfConfig {
            alpha: 0.1,
            gamma: 1e-3,
            m: 10_000,
            fd: FdOptions::default(),
            surrogate_trees: 50,
            final_trees: 200,
            sum_over_classes: false,
            identity_h: false,
            trace_normalize: true,
        }
    }
}

impl JarfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParam(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParam(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.m < 1 {
            return Err(Error::InvalidParam("probe budget m must be >= 1".into()));
        }
        if self.surrogate_trees < 1 || self.final_trees < 1 {
            return Err(Error::InvalidParam("tree counts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Wall-clock seconds per training stage.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct JarfTimings {
    pub surrogate_s: f64,
    pub ejop_s: f64,
    pub final_s: f64,
}

impl JarfTimings {
    pub fn total(&self) -> f64 {
        self.surrogate_s + self.ejop_s + self.final_s
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JarfModel {
    /// Absent only for the identity ablation, which trains on raw features.
    pub preconditioner: Option<Preconditioner>,
    /// The matrix actually applied to inputs. Usually the normalized H; the
    /// no-trace-norm ablation stores H0 + gamma I; identity stores nothing.
    pub transform: Option<SymMatrix>,
    pub final_forest: Forest,
    pub surrogate_trees: usize,
    pub config: JarfConfig,
    pub label_mapping: Option<Vec<String>>,
    /// Surrogate calls spent on gradient probes.
    pub probe_calls: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaRfModel {
    /// Columns are covariance eigenvectors, descending eigenvalue order.
    pub rotation: Matrix,
    pub feature_means: Vec<f64>,
    pub forest: Forest,
}

/// Plain bagged forest with the default tree parameters.
pub fn train_rf(train: &Dataset, n_trees: usize, seed: u64) -> Result<Forest> {
    fit_forest(train, &TreeParams::defaults(train.task, train.d()), n_trees, seed)
}

/// The full pipeline: surrogate fit, gradient probing, preconditioner,
/// final forest on the transformed features. The input dataset is not
/// modified; all stages draw from streams derived from `seed`.
pub fn train_jarf(train: &Dataset, config: &JarfConfig, seed: u64) -> Result<(JarfModel, JarfTimings)> {
    config.validate()?;
    let d = train.d();
    let n = train.n();
    let params = TreeParams::defaults(train.task, d);
    let mut timings = JarfTimings::default();

    if config.identity_h {
        let t = Instant::now();
        let final_forest = fit_forest(train, &params, config.final_trees, derive_seed(seed, "final"))?;
        timings.final_s = t.elapsed().as_secs_f64();
        return Ok((
            JarfModel {
                preconditioner: None,
                transform: None,
                final_forest,
                surrogate_trees: config.surrogate_trees,
                config: config.clone(),
                label_mapping: train.label_mapping.clone(),
                probe_calls: 0,
            },
            timings,
        ));
    }

    let t = Instant::now();
    let surrogate = fit_forest(train, &params, config.surrogate_trees, derive_seed(seed, "surrogate"))?;
    timings.surrogate_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let stats = feature_stats(train, config.alpha)?;
    let m = config.m.min(n);
    let probes = subsample_indices(n, m, derive_seed(seed, "probes"))?;
    let est = estimate_ejop(&surrogate, train, &probes, &stats, &config.fd, config.sum_over_classes)?;
    let prec = build_preconditioner(&est.h0, config.gamma, config.alpha, m)?;
    let applied = if config.trace_normalize {
        prec.h.clone()
    } else {
        let mut reg = est.h0.clone();
        for i in 0..d {
            reg.set(i, i, reg.get(i, i) + config.gamma);
        }
        reg
    };
    timings.ejop_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let xt = transform(&train.features, &applied.to_matrix())?;
    let transformed = train.with_features(xt);
    let final_forest =
        fit_forest(&transformed, &params, config.final_trees, derive_seed(seed, "final"))?;
    timings.final_s = t.elapsed().as_secs_f64();

    Ok((
        JarfModel {
            preconditioner: Some(prec),
            transform: Some(applied),
            final_forest,
            surrogate_trees: config.surrogate_trees,
            config: config.clone(),
            label_mapping: train.label_mapping.clone(),
            probe_calls: est.calls,
        },
        timings,
    ))
}

/// Center by the training means, rotate onto the covariance eigenbasis
/// (all d components), and fit a forest on the rotated features.
pub fn train_pca_rf(train: &Dataset, n_trees: usize, seed: u64) -> Result<PcaRfModel> {
    let n = train.n();
    let d = train.d();
    let mut means = vec![0.0f64; d];
    for i in 0..n {
        for (m, &v) in means.iter_mut().zip(train.features.row(i)) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    // sample covariance of the centered features
    let mut cov = vec![0.0f64; d * d];
    for i in 0..n {
        let row = train.features.row(i);
        for a in 0..d {
            let ca = row[a] - means[a];
            for b in a..d {
                cov[a * d + b] += ca * (row[b] - means[b]);
            }
        }
    }
    let denom = (n - 1).max(1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / denom;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    let eig = sym_eigen(&SymMatrix::new(d, cov)?)?;
    let rotation = eig.eigenvectors.clone();

    let mut rotated = Matrix::zeros(n, d);
    for i in 0..n {
        let row = train.features.row(i);
        let centered: Vec<f64> = row.iter().zip(&means).map(|(v, m)| v - m).collect();
        for j in 0..d {
            let mut s = 0.0;
            for (k, c) in centered.iter().enumerate() {
                s += c * rotation.get(k, j);
            }
            rotated.set(i, j, s);
        }
    }
    let forest = fit_forest(
        &train.with_features(rotated),
        &TreeParams::defaults(train.task, d),
        n_trees,
        seed,
    )?;
    Ok(PcaRfModel { rotation, feature_means: means, forest })
}

impl PcaRfModel {
    /// rotationᵀ(x − means).
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.feature_means.len();
        if x.len() != d {
            return Err(Error::DimensionMismatch(format!("expected {d} features, got {}", x.len())));
        }
        let centered: Vec<f64> = x.iter().zip(&self.feature_means).map(|(v, m)| v - m).collect();
        Ok((0..d)
            .map(|j| (0..d).map(|k| centered[k] * self.rotation.get(k, j)).sum())
            .collect())
    }
}

impl JarfModel {
    /// Phi(x) = xᵀH with the stored transform, or x itself for the identity
    /// ablation. Entry j sums H-column products in ascending index order —
    /// the same order used when transforming the training matrix, so train
    /// and test features are bit-identical functions of the input.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.transform {
            None => Ok(x.to_vec()),
            Some(h) => {
                if x.len() != h.size {
                    return Err(Error::DimensionMismatch(format!(
                        "expected {} features, got {}",
                        h.size,
                        x.len()
                    )));
                }
                let t =
                    transform(&Matrix { rows: 1, cols: x.len(), data: x.to_vec() }, &h.to_matrix())?;
                Ok(t.data)
            }
        }
    }
}

/// Any trained model, for uniform prediction and serialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Rf(Forest),
    PcaRf(PcaRfModel),
    Jarf(Box<JarfModel>),
}

impl Model {
    pub fn task(&self) -> Task {
        self.forest().task
    }

    pub fn d(&self) -> usize {
        match self {
            Model::Rf(f) => f.d,
            Model::PcaRf(m) => m.feature_means.len(),
            Model::Jarf(m) => match &m.transform {
                Some(h) => h.size,
                None => m.final_forest.d,
            },
        }
    }

    fn forest(&self) -> &Forest {
        match self {
            Model::Rf(f) => f,
            Model::PcaRf(m) => &m.forest,
            Model::Jarf(m) => &m.final_forest,
        }
    }

    fn features_for(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Model::Rf(f) => {
                if x.len() != f.d {
                    return Err(Error::DimensionMismatch(format!(
                        "expected {} features, got {}",
                        f.d,
                        x.len()
                    )));
                }
                Ok(x.to_vec())
            }
            Model::PcaRf(m) => m.project(x),
            Model::Jarf(m) => m.project(x),
        }
    }

    pub fn predict_label(&self, x: &[f64]) -> Result<usize> {
        self.forest().predict_label(&self.features_for(x)?)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forest().predict_proba(&self.features_for(x)?)
    }

    pub fn predict_value(&self, x: &[f64]) -> Result<f64> {
        self.forest().predict_value(&self.features_for(x)?)
    }

    pub fn predict_labels(&self, x: &Matrix) -> Result<Vec<usize>> {
        (0..x.rows).map(|i| self.predict_label(x.row(i))).collect()
    }

    pub fn predict_values(&self, x: &Matrix) -> Result<Vec<f64>> {
        (0..x.rows).map(|i| self.predict_value(x.row(i))).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    /// SHA-256 hex digest of the serialized `model` payload.
    checksum: String,
    model: Model,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

fn payload_checksum(model: &Model) -> Result<String> {
    let payload = serde_json::to_string(model)?;
    let mut hasher = Sha256::new();
    hasher.update(payload.as_bytes());
    Ok(format!("{:x}", hasher.finalize()))
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        checksum: payload_checksum(model)?,
        model: model.clone(),
    };
    fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path)?;
    let probe: VersionProbe = serde_json::from_str(&text)
        .map_err(|e| Error::ModelFormat(format!("unreadable model header: {e}")))?;
    if probe.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: probe.format_version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let file: ModelFile = serde_json::from_str(&text)
        .map_err(|e| Error::ModelFormat(format!("malformed model file: {e}")))?;
    let want = payload_checksum(&file.model)?;
    if want != file.checksum {
        return Err(Error::ChecksumMismatch);
    }
    Ok(file.model)
}
