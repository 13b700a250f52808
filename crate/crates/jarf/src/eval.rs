//! Evaluation metrics, effect sizes, subspace-alignment scores, the 5x2
//! cross-validation benchmark runner, and the ablation driver.
//!
//! Report JSON is fully deterministic for a given seed: wall-clock timings
//! are carried on the side and emitted only into the flat CSV, so rerunning
//! with any thread count reproduces the JSON byte for byte.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{make_5x2_folds, Dataset, Task};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::pipeline::{train_jarf, train_pca_rf, train_rf, JarfConfig, JarfTimings, Model};
use crate::rng::derive_seed;

/// Trees in every baseline and final forest.
pub const BENCH_FOREST_TREES: usize = 200;

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Cohen's kappa plus a flag for degenerate folds where expected agreement
/// is 1 (single class on both sides); kappa is 0 by convention there.
pub fn cohen_kappa_detail(y_true: &[usize], y_pred: &[usize]) -> Result<(f64, bool)> {
    check_lengths(y_true.len(), y_pred.len())?;
    let n = y_true.len() as f64;
    let c = n_classes_of(y_true, y_pred);
    let mut confusion = vec![0u64; c * c];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[t * c + p] += 1;
    }
    let p_o = (0..c).map(|k| confusion[k * c + k]).sum::<u64>() as f64 / n;
    let mut p_e = 0.0;
    for k in 0..c {
        let row: u64 = (0..c).map(|j| confusion[k * c + j]).sum();
        let col: u64 = (0..c).map(|j| confusion[j * c + k]).sum();
        p_e += row as f64 * col as f64 / (n * n);
    }
    if p_e >= 1.0 {
        return Ok((0.0, true));
    }
    Ok(((p_o - p_e) / (1.0 - p_e), false))
}

/// Chance-corrected agreement (p_o - p_e) / (1 - p_e); 0 when p_e = 1.
pub fn cohen_kappa(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    cohen_kappa_detail(y_true, y_pred).map(|(k, _)| k)
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    check_lengths(y_true.len(), y_pred.len())?;
    let hits = y_true.iter().zip(y_pred).filter(|(t, p)| t == p).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// Unweighted mean of per-class F1. A class with no true and no predicted
/// members contributes F1 = 0 (strict zero-division convention).
pub fn macro_f1(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    check_lengths(y_true.len(), y_pred.len())?;
    let c = n_classes_of(y_true, y_pred);
    let mut sum = 0.0;
    for k in 0..c {
        let tp = y_true.iter().zip(y_pred).filter(|(&t, &p)| t == k && p == k).count() as f64;
        let fp = y_true.iter().zip(y_pred).filter(|(&t, &p)| t != k && p == k).count() as f64;
        let fneg = y_true.iter().zip(y_pred).filter(|(&t, &p)| t == k && p != k).count() as f64;
        let denom = 2.0 * tp + fp + fneg;
        if denom > 0.0 {
            sum += 2.0 * tp / denom;
        }
    }
    Ok(sum / c as f64)
}

/// 1 - SS_res / SS_tot with SS_tot about the mean of `y_true`; constant
/// targets are an error because SS_tot vanishes.
pub fn r2(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_lengths(y_true.len(), y_pred.len())?;
    if y_true.len() < 2 {
        return Err(Error::InvalidParam("r2 needs at least 2 points".into()));
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::InvalidParam("r2 undefined for constant targets".into()));
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Effect size kappa_RF - kappa_A; negative values mean A beats the RF
/// baseline.
pub fn effect_size(kappa_rf: f64, kappa_a: f64) -> f64 {
    kappa_rf - kappa_a
}

/// Squared projection of the unit vector `n_hat` onto the column span of
/// the orthonormal `u_k`; in [0, 1], and 1 iff n_hat lies in the span.
pub fn alignment_score(u_k: &Matrix, n_hat: &[f64]) -> Result<f64> {
    let (d, k) = (u_k.rows, u_k.cols);
    if n_hat.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "normal has {} entries, subspace lives in dimension {d}",
            n_hat.len()
        )));
    }
    for a in 0..k {
        for b in a..k {
            let g: f64 = (0..d).map(|i| u_k.get(i, a) * u_k.get(i, b)).sum();
            let want = if a == b { 1.0 } else { 0.0 };
            if (g - want).abs() > 1e-8 {
                return Err(Error::InvalidParam("subspace columns are not orthonormal".into()));
            }
        }
    }
    let norm: f64 = n_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidParam(format!("normal has norm {norm}, expected 1")));
    }
    let mut s = 0.0;
    for j in 0..k {
        let c: f64 = (0..d).map(|i| u_k.get(i, j) * n_hat[i]).sum();
        s += c * c;
    }
    Ok(s)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("label vectors of length {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::InvalidParam("empty label vectors".into()));
    }
    Ok(())
}

fn n_classes_of(y_true: &[usize], y_pred: &[usize]) -> usize {
    y_true.iter().chain(y_pred).max().map_or(0, |m| m + 1)
}

// ---------------------------------------------------------------------------
// Benchmark runner
// ---------------------------------------------------------------------------

/// One method under evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodSpec {
    Rf,
    PcaRf,
    Jarf(JarfConfig),
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Rf => "rf",
            MethodSpec::PcaRf => "pca_rf",
            MethodSpec::Jarf(_) => "jarf",
        }
    }
}

/// Metrics for one evaluation fold. Wall time is measurement metadata and
/// is kept out of the JSON so reports stay byte-reproducible.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricSet {
    pub kappa: Option<f64>,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub r2: Option<f64>,
    /// True when kappa hit the degenerate p_e = 1 convention.
    pub kappa_degenerate: bool,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl MetricSet {
    /// The headline metric: kappa for classification, R^2 for regression.
    pub fn primary(&self) -> f64 {
        self.kappa.or(self.r2).expect("metric set has a primary metric")
    }
}

/// Per-stage wall time for one fold (all zero except total for non-JARF
/// methods); emitted to CSV only.
#[derive(Debug, Clone, Copy, Default)]
pub struct FoldTiming {
    pub total_s: f64,
    pub surrogate_s: f64,
    pub ejop_s: f64,
    pub final_s: f64,
}

/// One (dataset, method) cell: 10 folds, effect sizes against the shared
/// RF baseline, and their aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchCell {
    pub dataset: String,
    pub method: String,
    pub folds: Vec<MetricSet>,
    /// kappa_RF - kappa_method per fold (classification; r2 analogue for
    /// regression).
    pub delta_per_fold: Vec<f64>,
    pub mean_primary: f64,
    pub se_primary: f64,
    pub mean_delta: f64,
    pub se_delta: f64,
    #[serde(skip)]
    pub fold_timings: Vec<FoldTiming>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub format_version: u32,
    pub seed: u64,
    /// Resolved method list, echoed for auditability.
    pub methods: Vec<MethodSpec>,
    pub cells: Vec<BenchCell>,
}

pub const REPORT_FORMAT_VERSION: u32 = 1;

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn evaluate(model: &Model, test: &Dataset) -> Result<MetricSet> {
    match test.task {
        Task::Classification => {
            let truth = test.labels.classes();
            let pred = model.predict_labels(&test.features)?;
            let (kappa, degenerate) = cohen_kappa_detail(truth, &pred)?;
            Ok(MetricSet {
                kappa: Some(kappa),
                accuracy: Some(accuracy(truth, &pred)?),
                macro_f1: Some(macro_f1(truth, &pred)?),
                r2: None,
                kappa_degenerate: degenerate,
                wall_time_s: 0.0,
            })
        }
        Task::Regression => {
            let truth = test.labels.values();
            let pred = model.predict_values(&test.features)?;
            Ok(MetricSet {
                kappa: None,
                accuracy: None,
                macro_f1: None,
                r2: Some(r2(truth, &pred)?),
                kappa_degenerate: false,
                wall_time_s: 0.0,
            })
        }
    }
}

fn train_method(
    spec: &MethodSpec,
    train: &Dataset,
    seed: u64,
) -> Result<(Model, FoldTiming)> {
    let start = Instant::now();
    match spec {
        MethodSpec::Rf => {
            let f = train_rf(train, BENCH_FOREST_TREES, seed)?;
            let total = start.elapsed().as_secs_f64();
            Ok((Model::Rf(f), FoldTiming { total_s: total, ..FoldTiming::default() }))
        }
        MethodSpec::PcaRf => {
            let m = train_pca_rf(train, BENCH_FOREST_TREES, seed)?;
            let total = start.elapsed().as_secs_f64();
            Ok((Model::PcaRf(m), FoldTiming { total_s: total, ..FoldTiming::default() }))
        }
        MethodSpec::Jarf(cfg) => {
            let (m, t) = train_jarf(train, cfg, seed)?;
            Ok((
                Model::Jarf(Box::new(m)),
                FoldTiming {
                    total_s: t.total(),
                    surrogate_s: t.surrogate_s,
                    ejop_s: t.ejop_s,
                    final_s: t.final_s,
                },
            ))
        }
    }
}

/// 5x2 CV over every (dataset, method) pair. All methods share the fold
/// plan of each dataset; the RF baseline for effect sizes is trained once
/// per fold with its own derived seed, which the `rf` method reuses so its
/// effect size is identically zero.
pub fn run_benchmark(
    datasets: &[(String, Dataset)],
    methods: &[MethodSpec],
    seed: u64,
) -> Result<BenchReport> {
    if datasets.is_empty() || methods.is_empty() {
        return Err(Error::InvalidParam("need at least one dataset and one method".into()));
    }
    let mut cells = Vec::new();
    for (d_idx, (name, ds)) in datasets.iter().enumerate() {
        let plan = make_5x2_folds(ds, derive_seed(seed, &format!("folds-{d_idx}")))?;
        let fold_sets: Vec<(Dataset, Dataset)> = plan
            .repetitions
            .iter()
            .flat_map(|(h1, h2)| {
                [(ds.subset(h1), ds.subset(h2)), (ds.subset(h2), ds.subset(h1))]
            })
            .collect();

        // shared per-fold RF baseline for the effect sizes
        let mut baseline_primary = Vec::with_capacity(fold_sets.len());
        let mut baseline_cells: Vec<(MetricSet, FoldTiming)> = Vec::new();
        for (f_idx, (tr, te)) in fold_sets.iter().enumerate() {
            let rf_seed = derive_seed(seed, &format!("rf-{d_idx}-{f_idx}"));
            let (model, timing) = train_method(&MethodSpec::Rf, tr, rf_seed)?;
            let mut m = evaluate(&model, te)?;
            m.wall_time_s = timing.total_s;
            baseline_primary.push(m.primary());
            baseline_cells.push((m, timing));
        }

        for spec in methods {
            let mut folds = Vec::with_capacity(fold_sets.len());
            let mut timings = Vec::with_capacity(fold_sets.len());
            if *spec == MethodSpec::Rf {
                for (m, t) in &baseline_cells {
                    folds.push(m.clone());
                    timings.push(*t);
                }
            } else {
                for (f_idx, (tr, te)) in fold_sets.iter().enumerate() {
                    let s = derive_seed(seed, &format!("{}-{d_idx}-{f_idx}", spec.name()));
                    let (model, timing) = train_method(spec, tr, s)?;
                    let mut m = evaluate(&model, te)?;
                    m.wall_time_s = timing.total_s;
                    folds.push(m);
                    timings.push(timing);
                }
            }
            let primaries: Vec<f64> = folds.iter().map(|m| m.primary()).collect();
            let deltas: Vec<f64> = primaries
                .iter()
                .zip(&baseline_primary)
                .map(|(p, b)| effect_size(*b, *p))
                .collect();
            let (mean_primary, se_primary) = mean_se(&primaries);
            let (mean_delta, se_delta) = mean_se(&deltas);
            cells.push(BenchCell {
                dataset: name.clone(),
                method: spec.name().to_string(),
                folds,
                delta_per_fold: deltas,
                mean_primary,
                se_primary,
                mean_delta,
                se_delta,
                fold_timings: timings,
            });
        }
    }
    Ok(BenchReport {
        format_version: REPORT_FORMAT_VERSION,
        seed,
        methods: methods.to_vec(),
        cells,
    })
}

/// Flat CSV: one row per dataset x method x fold, including the per-stage
/// wall-clock columns that the JSON deliberately omits.
pub fn report_to_csv(report: &BenchReport) -> String {
    let mut out = String::from(
        "dataset,method,fold,kappa,accuracy,macro_f1,r2,delta,wall_time_s,surrogate_s,ejop_s,final_s\n",
    );
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
    for cell in &report.cells {
        for (i, m) in cell.folds.iter().enumerate() {
            let t = cell.fold_timings.get(i).copied().unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                cell.dataset,
                cell.method,
                i,
                fmt(m.kappa),
                fmt(m.accuracy),
                fmt(m.macro_f1),
                fmt(m.r2),
                cell.delta_per_fold[i],
                t.total_s,
                t.surrogate_s,
                t.ejop_s,
                t.final_s,
            ));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

/// One-component departures from the default configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum AblationVariant {
    Default,
    IdentityH,
    FdForward,
    FdNoClipping,
    FixedGlobalStep,
    Alpha { value: f64 },
    SubsampleFraction { value: f64 },
    NoGamma,
    NoTraceNorm,
}

impl AblationVariant {
    /// Parse tags like `identity_h`, `alpha=0.05`, `subsample_fraction=0.25`.
    pub fn parse(tag: &str) -> Result<AblationVariant> {
        let (head, value) = match tag.split_once('=') {
            Some((h, v)) => {
                let x: f64 = v
                    .parse()
                    .map_err(|_| Error::InvalidParam(format!("bad variant value in {tag:?}")))?;
                (h, Some(x))
            }
            None => (tag, None),
        };
        match (head, value) {
            ("default", None) => Ok(AblationVariant::Default),
            ("identity_h", None) => Ok(AblationVariant::IdentityH),
            ("fd_forward", None) => Ok(AblationVariant::FdForward),
            ("fd_no_clipping", None) => Ok(AblationVariant::FdNoClipping),
            ("fixed_global_step", None) => Ok(AblationVariant::FixedGlobalStep),
            ("alpha", Some(v)) => Ok(AblationVariant::Alpha { value: v }),
            ("subsample_fraction", Some(v)) => {
                Ok(AblationVariant::SubsampleFraction { value: v })
            }
            ("no_gamma", None) => Ok(AblationVariant::NoGamma),
            ("no_trace_norm", None) => Ok(AblationVariant::NoTraceNorm),
            _ => Err(Error::InvalidParam(format!("unknown ablation variant {tag:?}"))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            AblationVariant::Default => "default".into(),
            AblationVariant::IdentityH => "identity_h".into(),
            AblationVariant::FdForward => "fd_forward".into(),
            AblationVariant::FdNoClipping => "fd_no_clipping".into(),
            AblationVariant::FixedGlobalStep => "fixed_global_step".into(),
            AblationVariant::Alpha { value } => format!("alpha={value}"),
            AblationVariant::SubsampleFraction { value } => format!("subsample_fraction={value}"),
            AblationVariant::NoGamma => "no_gamma".into(),
            AblationVariant::NoTraceNorm => "no_trace_norm".into(),
        }
    }

    /// The variant's configuration: exactly one component differs from
    /// `base`.
    pub fn apply(&self, base: &JarfConfig, n: usize) -> Result<JarfConfig> {
        use crate::ejop::{FdScheme, StepRule};
        let mut cfg = base.clone();
        match *self {
            AblationVariant::Default => {}
            AblationVariant::IdentityH => cfg.identity_h = true,
            AblationVariant::FdForward => cfg.fd.scheme = FdScheme::Forward,
            AblationVariant::FdNoClipping => cfg.fd.clipping = false,
            AblationVariant::FixedGlobalStep => cfg.fd.step = StepRule::FixedGlobal,
            AblationVariant::Alpha { value } => {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(Error::InvalidParam(format!("alpha must be > 0, got {value}")));
                }
                cfg.alpha = value;
            }
            AblationVariant::SubsampleFraction { value } => {
                if !(value > 0.0 && value <= 1.0) {
                    return Err(Error::InvalidParam(format!(
                        "subsample fraction must be in (0, 1], got {value}"
                    )));
                }
                cfg.m = ((value * n as f64).round() as usize).max(1);
            }
            AblationVariant::NoGamma => cfg.gamma = 0.0,
            AblationVariant::NoTraceNorm => cfg.trace_normalize = false,
        }
        Ok(cfg)
    }
}

/// One ablation row: mean metric differences, variant minus default, on
/// identical folds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub d_kappa: f64,
    pub d_macro_f1: f64,
    pub d_accuracy: f64,
    /// Wall-time difference; excluded from determinism guarantees.
    #[serde(skip)]
    pub d_time_s: f64,
}

/// Evaluate each variant against default JARF on one shared 5x2 fold plan.
/// Every arm uses the same per-fold training streams, so rows differ only
/// through the configuration component the variant changes.
pub fn run_ablations(
    dataset: &Dataset,
    variants: &[AblationVariant],
    seed: u64,
) -> Result<Vec<AblationRow>> {
    if dataset.task != Task::Classification {
        return Err(Error::InvalidParam("ablation table is defined for classification".into()));
    }
    let base = JarfConfig::default();
    let plan = make_5x2_folds(dataset, derive_seed(seed, "folds-0"))?;
    let fold_sets: Vec<(Dataset, Dataset)> = plan
        .repetitions
        .iter()
        .flat_map(|(h1, h2)| {
            [(dataset.subset(h1), dataset.subset(h2)), (dataset.subset(h2), dataset.subset(h1))]
        })
        .collect();

    let arm = |cfg: &JarfConfig| -> Result<(f64, f64, f64, f64)> {
        let mut kappas = Vec::new();
        let mut f1s = Vec::new();
        let mut accs = Vec::new();
        let mut time = 0.0;
        for (f_idx, (tr, te)) in fold_sets.iter().enumerate() {
            let s = derive_seed(seed, &format!("jarf-0-{f_idx}"));
            let (model, timings) = train_jarf(tr, cfg, s)?;
            let m = evaluate(&Model::Jarf(Box::new(model)), te)?;
            kappas.push(m.kappa.unwrap());
            f1s.push(m.macro_f1.unwrap());
            accs.push(m.accuracy.unwrap());
            time += timings.total();
        }
        let n = kappas.len() as f64;
        Ok((
            kappas.iter().sum::<f64>() / n,
            f1s.iter().sum::<f64>() / n,
            accs.iter().sum::<f64>() / n,
            time / n,
        ))
    };

    let (k0, f0, a0, t0) = arm(&base)?;
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let cfg = v.apply(&base, dataset.n())?;
        let (k, f, a, t) = arm(&cfg)?;
        rows.push(AblationRow {
            variant: v.label(),
            d_kappa: k - k0,
            d_macro_f1: f - f0,
            d_accuracy: a - a0,
            d_time_s: t - t0,
        });
    }
    Ok(rows)
}

/// JARF stage timings re-exported for CLI summaries.
pub type StageTimings = JarfTimings;
