//! Finite-difference gradient probing of a surrogate predictor and assembly
//! of the EJOP/EGOP preconditioner.
//!
//! For each probed point and feature j the default scheme is the centered
//! quotient (f(x + (e_j/2)eps_j) - f(x - (e_j/2)eps_j)) / eps_j, falling back
//! to a one-sided quotient with step eps_j/2 when a probe would leave the
//! empirical feature range, and to 0 when neither probe fits. The mean of
//! gradient outer products over probes is the EJOP estimate H0.
//!
//! # Surrogate-call accounting
//!
//! Every evaluation of the predictor at one point counts as one call. The
//! base prediction f(x) is computed at most once per probe point and shared
//! by all one-sided quotients there, so per probe point:
//!
//! * centered scheme:  calls = 2*(#centered features) + (#one-sided features)
//!   + 1 if any feature is one-sided, else + 0;
//! * forward scheme:   calls = (#probed features) + 1 if any feature is
//!   probed, else + 0.
//!
//! Skipped features contribute no calls. The all-centered case therefore
//! costs exactly 2*d calls per probe and 2*m*d in total.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureStats, Task};
use crate::error::{Error, Result};
use crate::forest::Forest;
use crate::linalg::{sym_eigen, trace_mean, EigenDecomposition, Matrix, SymMatrix};

/// Probes per parallel work unit; fixed so the reduction order (and hence
/// the bit pattern of H0) does not depend on the thread count.
const PROBE_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdScheme {
    Centered,
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// eps_j = alpha * MAD_j / 0.6745 per feature (the default).
    PerFeature,
    /// One global eps = median over features of the per-feature steps.
    FixedGlobal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdOptions {
    pub scheme: FdScheme,
    /// Clip probe points to the empirical [min, max] of each feature.
    pub clipping: bool,
    pub step: StepRule,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions { scheme: FdScheme::Centered, clipping: true, step: StepRule::PerFeature }
    }
}

/// How a particular feature of a particular probe was differenced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeScheme {
    Centered,
    OneSidedForward,
    OneSidedBackward,
    /// Full-step forward quotient (forward-difference ablation mode).
    ForwardFull,
    /// Full-step backward quotient (forward mode clipped at the top).
    BackwardFull,
    /// No in-range probe existed; the gradient entry is 0.
    Skipped,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientProbe {
    pub gradient: Vec<f64>,
    pub schemes: Vec<ProbeScheme>,
}

/// Per-feature probe plan: the scheme plus the displaced coordinate values
/// and quotient denominator. `None` coordinates mean "reuse the base point".
#[derive(Debug, Clone, Copy)]
struct FeaturePlan {
    scheme: ProbeScheme,
    plus: Option<f64>,
    minus: Option<f64>,
    denom: f64,
}

/// Effective step for feature `j` under the step rule.
pub fn effective_step(stats: &FeatureStats, opts: &FdOptions, j: usize) -> f64 {
    match opts.step {
        StepRule::PerFeature => stats.fd_step[j],
        StepRule::FixedGlobal => {
            let mut steps = stats.fd_step.clone();
            steps.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = steps.len();
            if n % 2 == 1 {
                steps[n / 2]
            } else {
                0.5 * (steps[n / 2 - 1] + steps[n / 2])
            }
        }
    }
}

fn plan_feature(x_j: f64, eps: f64, lo: f64, hi: f64, opts: &FdOptions) -> FeaturePlan {
    match opts.scheme {
        FdScheme::Centered => {
            let h = 0.5 * eps;
            if !opts.clipping || (x_j + h <= hi && x_j - h >= lo) {
                FeaturePlan {
                    scheme: ProbeScheme::Centered,
                    plus: Some(x_j + h),
                    minus: Some(x_j - h),
                    denom: eps,
                }
            } else if x_j - h < lo && x_j + h <= hi {
                FeaturePlan {
                    scheme: ProbeScheme::OneSidedForward,
                    plus: Some(x_j + h),
                    minus: None,
                    denom: h,
                }
            } else if x_j + h > hi && x_j - h >= lo {
                FeaturePlan {
                    scheme: ProbeScheme::OneSidedBackward,
                    plus: None,
                    minus: Some(x_j - h),
                    denom: h,
                }
            } else {
                FeaturePlan { scheme: ProbeScheme::Skipped, plus: None, minus: None, denom: 1.0 }
            }
        }
        FdScheme::Forward => {
            if !opts.clipping || x_j + eps <= hi {
                FeaturePlan {
                    scheme: ProbeScheme::ForwardFull,
                    plus: Some(x_j + eps),
                    minus: None,
                    denom: eps,
                }
            } else if x_j - eps >= lo {
                FeaturePlan {
                    scheme: ProbeScheme::BackwardFull,
                    plus: None,
                    minus: Some(x_j - eps),
                    denom: eps,
                }
            } else {
                FeaturePlan { scheme: ProbeScheme::Skipped, plus: None, minus: None, denom: 1.0 }
            }
        }
    }
}

/// Vector-valued FD gradient at `x`: one gradient column per output of
/// `eval`. Returns the d x k gradient matrix (row j = feature j), the
/// per-feature schemes, and the number of `eval` calls made.
fn fd_gradient_multi<F>(
    eval: &F,
    n_outputs: usize,
    x: &[f64],
    stats: &FeatureStats,
    opts: &FdOptions,
) -> Result<(Matrix, Vec<ProbeScheme>, u64)>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let d = x.len();
    if stats.fd_step.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "stats cover {} features, point has {d}",
            stats.fd_step.len()
        )));
    }
    let mut grad = Matrix::zeros(d, n_outputs);
    let mut schemes = Vec::with_capacity(d);
    let mut calls = 0u64;
    let mut base: Option<Vec<f64>> = None;
    let mut point = x.to_vec();

    let check = |v: &[f64]| -> Result<()> {
        if v.len() != n_outputs {
            return Err(Error::DimensionMismatch("predictor output width".into()));
        }
        if v.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("prediction at a probe point".into()));
        }
        Ok(())
    };

    for j in 0..d {
        let eps = effective_step(stats, opts, j);
        let plan = plan_feature(x[j], eps, stats.min[j], stats.max[j], opts);
        schemes.push(plan.scheme);
        if plan.scheme == ProbeScheme::Skipped {
            continue;
        }
        let f_plus: Vec<f64>;
        let f_minus: Vec<f64>;
        match (plan.plus, plan.minus) {
            (Some(p), Some(m)) => {
                point[j] = p;
                f_plus = eval(&point);
                calls += 1;
                point[j] = m;
                f_minus = eval(&point);
                calls += 1;
                point[j] = x[j];
            }
            (Some(p), None) => {
                point[j] = p;
                f_plus = eval(&point);
                calls += 1;
                point[j] = x[j];
                if base.is_none() {
                    base = Some(eval(x));
                    calls += 1;
                    check(base.as_ref().unwrap())?;
                }
                f_minus = base.clone().unwrap();
            }
            (None, Some(m)) => {
                if base.is_none() {
                    base = Some(eval(x));
                    calls += 1;
                    check(base.as_ref().unwrap())?;
                }
                f_plus = base.clone().unwrap();
                point[j] = m;
                f_minus = eval(&point);
                calls += 1;
                point[j] = x[j];
            }
            (None, None) => unreachable!(),
        }
        check(&f_plus)?;
        check(&f_minus)?;
        for k in 0..n_outputs {
            grad.set(j, k, (f_plus[k] - f_minus[k]) / plan.denom);
        }
    }
    Ok((grad, schemes, calls))
}

/// FD gradient of a scalar black-box predictor at `x`. Returns the probe
/// and the number of predictor calls it cost.
pub fn fd_gradient<F>(
    predict: &F,
    x: &[f64],
    stats: &FeatureStats,
    opts: &FdOptions,
) -> Result<(GradientProbe, u64)>
where
    F: Fn(&[f64]) -> f64,
{
    let eval = |p: &[f64]| vec![predict(p)];
    let (grad, schemes, calls) = fd_gradient_multi(&eval, 1, x, stats, opts)?;
    Ok((GradientProbe { gradient: grad.data, schemes }, calls))
}

/// EJOP/EGOP estimate plus its instrumentation.
#[derive(Debug, Clone)]
pub struct EjopEstimate {
    pub h0: SymMatrix,
    /// Number of surrogate evaluations performed.
    pub calls: u64,
    pub m_used: usize,
}

/// Mean of gradient outer products over the rows of `points` for a scalar
/// analytic function; used for EGOP oracles and the ridge-recovery checks.
pub fn estimate_egop_fn<F>(
    f: &F,
    points: &Matrix,
    stats: &FeatureStats,
    opts: &FdOptions,
) -> Result<EjopEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = points.cols;
    let eval = |x: &[f64]| vec![f(x)];
    accumulate_probes(points.rows, d, opts, stats, &|i| points.row(i), &eval, 1, None)
}

/// EJOP/EGOP estimate from a trained surrogate forest over the probe rows.
///
/// Classification probes the surrogate probability of the observed class
/// y_i by default; `sum_over_classes` switches to summing the outer
/// products of all C class-probability gradients (built from the same
/// probe evaluations, so the call count is unchanged). Regression probes
/// the scalar prediction.
pub fn estimate_ejop(
    surrogate: &Forest,
    dataset: &Dataset,
    probe_indices: &[usize],
    stats: &FeatureStats,
    opts: &FdOptions,
    sum_over_classes: bool,
) -> Result<EjopEstimate> {
    if probe_indices.is_empty() {
        return Err(Error::InvalidParam("empty probe set".into()));
    }
    if surrogate.task != dataset.task {
        return Err(Error::InvalidParam("surrogate task does not match dataset".into()));
    }
    let d = dataset.d();
    match surrogate.task {
        Task::Regression => {
            let eval = |x: &[f64]| vec![surrogate.predict_value(x).expect("regression surrogate")];
            accumulate_probes(
                probe_indices.len(),
                d,
                opts,
                stats,
                &|i| dataset.features.row(probe_indices[i]),
                &eval,
                1,
                None,
            )
        }
        Task::Classification => {
            let c = surrogate.n_classes;
            let eval =
                |x: &[f64]| surrogate.predict_proba(x).expect("classification surrogate");
            let targets: Option<Vec<usize>> = if sum_over_classes {
                None
            } else {
                Some(probe_indices.iter().map(|&i| dataset.labels.classes()[i]).collect())
            };
            accumulate_probes(
                probe_indices.len(),
                d,
                opts,
                stats,
                &|i| dataset.features.row(probe_indices[i]),
                &eval,
                c,
                targets.as_deref(),
            )
        }
    }
}

/// Shared accumulation core: mean over probes of gradient outer products,
/// parallel over fixed-size chunks merged in chunk order (bit-stable for
/// any thread count). `targets` selects one output column per probe; when
/// absent, all output columns contribute (the Eq.-(1)-style sum).
#[allow(clippy::too_many_arguments)]
fn accumulate_probes<'a, G, F>(
    m: usize,
    d: usize,
    opts: &FdOptions,
    stats: &FeatureStats,
    row_of: &G,
    eval: &F,
    n_outputs: usize,
    targets: Option<&[usize]>,
) -> Result<EjopEstimate>
where
    G: Fn(usize) -> &'a [f64] + Sync,
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let tri = d * (d + 1) / 2;
    let chunk_results: Vec<Result<(Vec<f64>, u64)>> = (0..m)
        .collect::<Vec<_>>()
        .par_chunks(PROBE_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0f64; tri];
            let mut calls = 0u64;
            for &i in chunk {
                let (grad, _, c) = fd_gradient_multi(eval, n_outputs, row_of(i), stats, opts)?;
                calls += c;
                match targets {
                    Some(t) => add_outer_upper(&mut acc, &grad, t[i], d),
                    None => {
                        for k in 0..n_outputs {
                            add_outer_upper(&mut acc, &grad, k, d);
                        }
                    }
                }
            }
            Ok((acc, calls))
        })
        .collect();

    let mut acc = vec![0.0f64; tri];
    let mut calls = 0u64;
    for r in chunk_results {
        let (part, c) = r?;
        for (a, p) in acc.iter_mut().zip(&part) {
            *a += p;
        }
        calls += c;
    }

    let mf = m as f64;
    let mut h = vec![0.0f64; d * d];
    let mut idx = 0;
    for a in 0..d {
        for b in a..d {
            let v = acc[idx] / mf;
            h[a * d + b] = v;
            h[b * d + a] = v;
            idx += 1;
        }
    }
    Ok(EjopEstimate { h0: SymMatrix::new(d, h)?, calls, m_used: m })
}

#[inline]
fn add_outer_upper(acc: &mut [f64], grad: &Matrix, col: usize, d: usize) {
    let mut idx = 0;
    for a in 0..d {
        let ga = grad.get(a, col);
        for b in a..d {
            acc[idx] += ga * grad.get(b, col);
            idx += 1;
        }
    }
}

/// The regularized, trace-normalized preconditioner and the spectrum of
/// its raw estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Preconditioner {
    /// Raw EJOP/EGOP estimate H0.
    pub h0: SymMatrix,
    /// H = (H0 + gamma I) / trace_mean(H0 + gamma I).
    pub h: SymMatrix,
    pub gamma: f64,
    pub alpha: f64,
    pub m_used: usize,
    pub eigen: EigenDecomposition,
}

/// Regularize and trace-normalize H0 into the preconditioner H, and take
/// the eigendecomposition of H0.
pub fn build_preconditioner(
    h0: &SymMatrix,
    gamma: f64,
    alpha: f64,
    m_used: usize,
) -> Result<Preconditioner> {
    if gamma < 0.0 {
        return Err(Error::InvalidParam("gamma must be >= 0".into()));
    }
    let d = h0.size;
    let mut reg = h0.clone();
    for i in 0..d {
        reg.set(i, i, reg.get(i, i) + gamma);
    }
    let tm = trace_mean(&reg);
    if tm == 0.0 {
        return Err(Error::InvalidParam(
            "H0 + gamma I has zero trace; nothing to normalize".into(),
        ));
    }
    let mut h = reg.clone();
    for i in 0..d {
        for j in 0..d {
            h.set(i, j, reg.get(i, j) / tm);
        }
    }
    let eigen = sym_eigen(h0)?;
    Ok(Preconditioner { h0: h0.clone(), h, gamma, alpha, m_used, eigen })
}

/// First k eigenvector columns of the stored H0 decomposition, as a d x k
/// matrix.
pub fn top_k_subspace(p: &Preconditioner, k: usize) -> Result<Matrix> {
    let d = p.h0.size;
    if k < 1 || k > d {
        return Err(Error::InvalidParam(format!("k must be in 1..={d}, got {k}")));
    }
    let mut u = Matrix::zeros(d, k);
    for j in 0..k {
        for i in 0..d {
            u.set(i, j, p.eigen.eigenvectors.get(i, j));
        }
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use crate::rng::{stream, NormalSampler};

    fn wide_stats(d: usize, eps: f64) -> FeatureStats {
        FeatureStats {
            mad: vec![eps; d],
            min: vec![-1e12; d],
            max: vec![1e12; d],
            fd_step: vec![eps; d],
            alpha: 0.1,
            degenerate: vec![false; d],
        }
    }

    #[test]
    fn centered_fd_exact_on_affine() {
        let w = [2.0, -3.0, 0.5];
        let predict = |x: &[f64]| dot(&w, x) + 7.0;
        let stats = wide_stats(3, 0.3);
        let (probe, calls) =
            fd_gradient(&predict, &[0.1, 0.2, -0.4], &stats, &FdOptions::default()).unwrap();
        for (g, want) in probe.gradient.iter().zip(&w) {
            assert!((g - want).abs() < 1e-12);
        }
        assert_eq!(calls, 6, "2 per feature, all centered");
        assert!(probe.schemes.iter().all(|s| *s == ProbeScheme::Centered));
    }

    #[test]
    fn centered_fd_exact_on_quadratic() {
        let predict = |x: &[f64]| x[0] * x[0];
        let stats = wide_stats(1, 0.2);
        let (probe, _) =
            fd_gradient(&predict, &[1.0], &stats, &FdOptions::default()).unwrap();
        // (1.1^2 - 0.9^2)/0.2 = 2.0, the exact derivative
        assert!((probe.gradient[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cubic_bias_quarters_when_step_halves() {
        let predict = |x: &[f64]| x[0] * x[0] * x[0];
        let bias_at = |eps: f64| {
            let stats = wide_stats(1, eps);
            let (p, _) = fd_gradient(&predict, &[1.0], &stats, &FdOptions::default()).unwrap();
            p.gradient[0] - 3.0
        };
        let b1 = bias_at(0.2);
        let b2 = bias_at(0.1);
        assert!((b1 - 0.2 * 0.2 / 4.0).abs() < 1e-12, "bias eps^2/4, got {b1}");
        let ratio = b1 / b2;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn clipping_falls_back_to_one_sided() {
        let predict = |x: &[f64]| 5.0 * x[0];
        let stats = FeatureStats {
            mad: vec![1.0],
            min: vec![0.0],
            max: vec![10.0],
            fd_step: vec![0.4],
            alpha: 0.1,
            degenerate: vec![false],
        };
        let opts = FdOptions::default();
        // at the bottom edge: minus probe would leave the range
        let (p, calls) = fd_gradient(&predict, &[0.0], &stats, &opts).unwrap();
        assert_eq!(p.schemes[0], ProbeScheme::OneSidedForward);
        assert!((p.gradient[0] - 5.0).abs() < 1e-12);
        assert_eq!(calls, 2, "one new probe plus the base point");
        // at the top edge: plus probe would leave the range
        let (p2, _) = fd_gradient(&predict, &[10.0], &stats, &opts).unwrap();
        assert_eq!(p2.schemes[0], ProbeScheme::OneSidedBackward);
        assert!((p2.gradient[0] - 5.0).abs() < 1e-12);
        // range narrower than the step: skipped, entry 0
        let narrow = FeatureStats { min: vec![0.0], max: vec![0.1], ..stats };
        let (p3, calls3) = fd_gradient(&predict, &[0.05], &narrow, &opts).unwrap();
        assert_eq!(p3.schemes[0], ProbeScheme::Skipped);
        assert_eq!(p3.gradient[0], 0.0);
        assert_eq!(calls3, 0);
    }

    #[test]
    fn forward_mode_quotient() {
        let predict = |x: &[f64]| x[0] * x[0];
        let stats = wide_stats(1, 0.2);
        let opts = FdOptions { scheme: FdScheme::Forward, ..FdOptions::default() };
        let (p, calls) = fd_gradient(&predict, &[1.0], &stats, &opts).unwrap();
        // (1.2^2 - 1^2)/0.2 = 2.2: forward quotient has O(eps) bias
        assert!((p.gradient[0] - 2.2).abs() < 1e-12);
        assert_eq!(p.schemes[0], ProbeScheme::ForwardFull);
        assert_eq!(calls, 2);
    }

    #[test]
    fn fixed_global_step_is_median() {
        let stats = FeatureStats {
            mad: vec![0.0; 3],
            min: vec![-1e12; 3],
            max: vec![1e12; 3],
            fd_step: vec![0.1, 0.4, 0.2],
            alpha: 0.1,
            degenerate: vec![false; 3],
        };
        let opts = FdOptions { step: StepRule::FixedGlobal, ..FdOptions::default() };
        for j in 0..3 {
            assert_eq!(effective_step(&stats, &opts, j), 0.2);
        }
    }

    #[test]
    fn egop_of_linear_is_rank_one() {
        let w = vec![1.0, -2.0, 0.5, 0.0];
        let wc = w.clone();
        let f = move |x: &[f64]| dot(&wc, x);
        let mut ns = NormalSampler::new(stream(4, "egop", 0));
        let points = Matrix { rows: 50, cols: 4, data: (0..200).map(|_| ns.sample()).collect() };
        let stats = wide_stats(4, 0.1);
        let est = estimate_egop_fn(&f, &points, &stats, &FdOptions::default()).unwrap();
        // H0 = w w^T exactly: centered FD is exact on affine maps
        for a in 0..4 {
            for b in 0..4 {
                assert!((est.h0.get(a, b) - w[a] * w[b]).abs() < 1e-10);
            }
        }
        assert_eq!(est.calls, 50 * 4 * 2);
    }

    #[test]
    fn egop_of_constant_is_zero() {
        let f = |_: &[f64]| 3.0;
        let points = Matrix { rows: 10, cols: 2, data: vec![0.3; 20] };
        let stats = wide_stats(2, 0.1);
        let est = estimate_egop_fn(&f, &points, &stats, &FdOptions::default()).unwrap();
        assert!(est.h0.entries().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scale_response_quadruples_h0() {
        let f1 = |x: &[f64]| (x[0] * 1.3 - x[1]).sin();
        let f2 = move |x: &[f64]| 2.0 * (x[0] * 1.3 - x[1]).sin();
        let mut ns = NormalSampler::new(stream(6, "scale", 0));
        let points = Matrix { rows: 40, cols: 2, data: (0..80).map(|_| ns.sample()).collect() };
        let stats = wide_stats(2, 0.05);
        let a = estimate_egop_fn(&f1, &points, &stats, &FdOptions::default()).unwrap();
        let b = estimate_egop_fn(&f2, &points, &stats, &FdOptions::default()).unwrap();
        for (x, y) in a.h0.entries().iter().zip(b.h0.entries()) {
            assert!((4.0 * x - y).abs() < 1e-10 * x.abs().max(1.0));
        }
    }

    #[test]
    fn h0_bitwise_stable_across_thread_counts() {
        let f = |x: &[f64]| (x[0] + 0.7 * x[1] - x[2] * x[1]).tanh();
        let mut ns = NormalSampler::new(stream(8, "threads", 0));
        let points =
            Matrix { rows: 300, cols: 3, data: (0..900).map(|_| ns.sample()).collect() };
        let stats = wide_stats(3, 0.1);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| estimate_egop_fn(&f, &points, &stats, &FdOptions::default()).unwrap())
        };
        let h1 = run(1);
        let h4 = run(4);
        assert_eq!(h1.h0.entries(), h4.h0.entries());
    }

    #[test]
    fn preconditioner_algebra() {
        // h0 = 0, gamma = 1e-3 -> h = I
        let z = SymMatrix::zeros(3);
        let p = build_preconditioner(&z, 1e-3, 0.1, 10).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((p.h.get(i, j) - want).abs() < 1e-15);
            }
        }
        // h0 = diag(3,1), gamma = 0 -> trace_mean 2, h = diag(1.5, 0.5)
        let d = SymMatrix::from_diag(&[3.0, 1.0]);
        let p2 = build_preconditioner(&d, 0.0, 0.1, 10).unwrap();
        assert_eq!(p2.h.get(0, 0), 1.5);
        assert_eq!(p2.h.get(1, 1), 0.5);
        assert!((trace_mean(&p2.h) - 1.0).abs() <= 1e-12);
        // all-zero h0 with gamma = 0 is an error
        assert!(build_preconditioner(&z, 0.0, 0.1, 10).is_err());
    }

    #[test]
    fn top_k_subspace_contract() {
        let h0 = SymMatrix::from_diag(&[5.0, 1.0, 0.0]);
        let p = build_preconditioner(&h0, 1e-3, 0.1, 1).unwrap();
        let u1 = top_k_subspace(&p, 1).unwrap();
        assert!((u1.get(0, 0).abs() - 1.0).abs() < 1e-12, "dominant axis e1");
        let ud = top_k_subspace(&p, 3).unwrap();
        let g = ud.transpose().matmul(&ud).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g.get(i, j) - want).abs() < 1e-10);
            }
        }
        assert!(top_k_subspace(&p, 0).is_err());
        assert!(top_k_subspace(&p, 4).is_err());
    }

    #[test]
    fn rank_one_h0_top_vector_spans_w() {
        let w = [0.6, -0.8];
        let mut h = SymMatrix::zeros(2);
        for a in 0..2 {
            for b in 0..2 {
                h.set(a, b, w[a] * w[b]);
            }
        }
        let p = build_preconditioner(&h, 0.0, 0.1, 1).unwrap();
        let u1 = top_k_subspace(&p, 1).unwrap();
        let cos = (u1.get(0, 0) * w[0] + u1.get(1, 0) * w[1]).abs();
        assert!((cos - 1.0).abs() < 1e-10);
    }
}
