//! Command-line interface: synthetic data generation, training, the 5x2 CV
//! benchmark, ablation tables, and subspace-alignment curves.
//!
//! Every JSON artifact carries a `format_version`; every command is
//! deterministic given its flags and seed (wall-clock columns in the CSV
//! outputs are the only exception, and they are documented as such).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use jarf::data::{gen_rotated_hyperplane, load_csv, write_csv, Dataset, LabelColumn, Task};
use jarf::ejop::{top_k_subspace, FdScheme, StepRule};
use jarf::error::{Error, Result};
use jarf::eval::{
    report_to_csv, run_ablations, run_benchmark, AblationVariant, MethodSpec, MetricSet,
};
use jarf::pipeline::{
    load_model, save_model, train_jarf, train_pca_rf, train_rf, JarfConfig, Model,
};

/// Version stamp for CLI-emitted JSON artifacts (reports, sidecars).
const ARTIFACT_FORMAT_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "jarf", version, about = "Jacobian-aligned random forests")]
struct Cli {
    /// Upper bound on worker threads; results are identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a rotated-hyperplane classification CSV plus a sidecar
    /// JSON with the planted boundary normal.
    GenSynth(GenSynthArgs),
    /// Train one model on a CSV and serialize it.
    Train(TrainArgs),
    /// Run the 5x2 CV benchmark described by a JSON config.
    Bench(BenchArgs),
    /// Emit the ablation table plus the probe-budget sweep.
    Ablate(AblateArgs),
    /// Alignment curve s_k of stored normals against a trained model's
    /// estimated eigenbasis.
    Align(AlignArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    /// Rotation angle of the boundary normal, in degrees.
    #[arg(long)]
    theta: f64,
    /// Label-noise scale.
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_csv: PathBuf,
    #[arg(long)]
    out_meta: PathBuf,
}

/// JARF hyperparameter overrides shared by train/bench/ablate; unset flags
/// fall back to the JSON config file, then to built-in defaults.
#[derive(Args, Clone, Default)]
struct JarfOverrides {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Probe budget (capped at n during training).
    #[arg(long)]
    m: Option<usize>,
    /// Finite-difference scheme: centered | forward.
    #[arg(long)]
    fd_scheme: Option<String>,
    /// Disable clipping of probes to the empirical feature range.
    #[arg(long)]
    fd_no_clipping: bool,
    /// Use one global step (median of the per-feature steps).
    #[arg(long)]
    fixed_global_step: bool,
    #[arg(long)]
    surrogate_trees: Option<usize>,
    #[arg(long)]
    final_trees: Option<usize>,
}

impl JarfOverrides {
    fn apply(&self, mut cfg: JarfConfig) -> Result<JarfConfig> {
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(g) = self.gamma {
            cfg.gamma = g;
        }
        if let Some(m) = self.m {
            cfg.m = m;
        }
        if let Some(s) = &self.fd_scheme {
            cfg.fd.scheme = match s.as_str() {
                "centered" => FdScheme::Centered,
                "forward" => FdScheme::Forward,
                other => {
                    return Err(Error::InvalidParam(format!(
                        "unknown fd scheme {other:?}; expected centered or forward"
                    )))
                }
            };
        }
        if self.fd_no_clipping {
            cfg.fd.clipping = false;
        }
        if self.fixed_global_step {
            cfg.fd.step = StepRule::FixedGlobal;
        }
        if let Some(t) = self.surrogate_trees {
            cfg.surrogate_trees = t;
        }
        if let Some(t) = self.final_trees {
            cfg.final_trees = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Label column name; defaults to the last column.
    #[arg(long)]
    label: Option<String>,
    /// classification | regression.
    #[arg(long, default_value = "classification")]
    task: String,
    /// rf | pca_rf | jarf.
    #[arg(long)]
    method: String,
    /// JSON file with a JARF configuration (flags override its values).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Forest size for rf / pca_rf.
    #[arg(long, default_value_t = 200)]
    trees: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Optional held-out CSV; metrics are written next to the model.
    #[arg(long)]
    holdout: Option<PathBuf>,
    #[arg(long)]
    out_metrics: Option<PathBuf>,
    #[command(flatten)]
    overrides: JarfOverrides,
}

#[derive(Args)]
struct BenchArgs {
    /// JSON benchmark description: datasets, methods, JARF config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_json: PathBuf,
    #[arg(long)]
    out_csv: PathBuf,
    #[command(flatten)]
    overrides: JarfOverrides,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    label: Option<String>,
    /// Comma-separated variant tags; defaults to the full single-component
    /// ablation list.
    #[arg(long)]
    variants: Option<String>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_csv: PathBuf,
}

#[derive(Args)]
struct AlignArgs {
    /// Serialized JARF model with a stored estimate.
    #[arg(long)]
    model: PathBuf,
    /// JSON file with {"normals": [[...], ...]} or a gen-synth sidecar
    /// with {"v_theta": [...]}.
    #[arg(long)]
    normals: PathBuf,
    #[arg(long)]
    k_max: usize,
    #[arg(long)]
    out_csv: PathBuf,
}

fn parse_task(s: &str) -> Result<Task> {
    match s {
        "classification" => Ok(Task::Classification),
        "regression" => Ok(Task::Regression),
        other => Err(Error::InvalidParam(format!(
            "unknown task {other:?}; expected classification or regression"
        ))),
    }
}

fn label_column(path: &Path, label: &Option<String>) -> Result<LabelColumn> {
    match label {
        Some(name) => Ok(LabelColumn::Name(name.clone())),
        None => {
            let text = fs::read_to_string(path)?;
            let header = text.lines().next().ok_or_else(|| {
                Error::InvalidDataset(format!("{}: empty file", path.display()))
            })?;
            Ok(LabelColumn::Index(header.split(',').count() - 1))
        }
    }
}

fn load_dataset(path: &Path, label: &Option<String>, task: Task) -> Result<Dataset> {
    load_csv(path, &label_column(path, label)?, task)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn cmd_gen_synth(a: &GenSynthArgs) -> Result<()> {
    let (ds, v_theta) = gen_rotated_hyperplane(a.n, a.d, a.theta, a.sigma, a.seed)?;
    write_csv(&ds, &a.out_csv, "label")?;
    write_json(
        &a.out_meta,
        &json!({
            "format_version": ARTIFACT_FORMAT_VERSION,
            "n": a.n,
            "d": a.d,
            "theta": a.theta,
            "sigma": a.sigma,
            "seed": a.seed,
            "v_theta": v_theta,
        }),
    )?;
    println!(
        "gen-synth n={} d={} theta={} sigma={} seed={} -> {}",
        a.n,
        a.d,
        a.theta,
        a.sigma,
        a.seed,
        a.out_csv.display()
    );
    Ok(())
}

fn jarf_config_from(path: &Option<PathBuf>, overrides: &JarfOverrides) -> Result<JarfConfig> {
    let base = match path {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .map_err(|e| Error::InvalidParam(format!("{}: {e}", p.display())))?,
        None => JarfConfig::default(),
    };
    overrides.apply(base)
}

fn train_metrics(model: &Model, data: &Dataset) -> Result<MetricSet> {
    match data.task {
        Task::Classification => {
            let pred = model.predict_labels(&data.features)?;
            let truth = data.labels.classes();
            let (kappa, degenerate) = jarf::eval::cohen_kappa_detail(truth, &pred)?;
            Ok(MetricSet {
                kappa: Some(kappa),
                accuracy: Some(jarf::eval::accuracy(truth, &pred)?),
                macro_f1: Some(jarf::eval::macro_f1(truth, &pred)?),
                r2: None,
                kappa_degenerate: degenerate,
                wall_time_s: 0.0,
            })
        }
        Task::Regression => {
            let pred = model.predict_values(&data.features)?;
            Ok(MetricSet {
                r2: Some(jarf::eval::r2(data.labels.values(), &pred)?),
                ..MetricSet::default()
            })
        }
    }
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let task = parse_task(&a.task)?;
    let ds = load_dataset(&a.data, &a.label, task)?;
    let start = Instant::now();
    let (model, resolved) = match a.method.as_str() {
        "rf" => (Model::Rf(train_rf(&ds, a.trees, a.seed)?), json!({"trees": a.trees})),
        "pca_rf" => {
            (Model::PcaRf(train_pca_rf(&ds, a.trees, a.seed)?), json!({"trees": a.trees}))
        }
        "jarf" => {
            let cfg = jarf_config_from(&a.config, &a.overrides)?;
            let echo = serde_json::to_value(&cfg)?;
            let (m, _) = train_jarf(&ds, &cfg, a.seed)?;
            (Model::Jarf(Box::new(m)), echo)
        }
        other => {
            return Err(Error::InvalidParam(format!(
                "unknown method {other:?}; expected rf, pca_rf or jarf"
            )))
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    save_model(&model, &a.out)?;
    let train_m = train_metrics(&model, &ds)?;
    let primary = train_m.primary();
    println!(
        "train method={} n={} d={} time={elapsed:.2}s train_metric={primary:.4} -> {}",
        a.method,
        ds.n(),
        ds.d(),
        a.out.display()
    );
    if let Some(holdout) = &a.holdout {
        let out_metrics = a.out_metrics.clone().ok_or_else(|| {
            Error::InvalidParam("--holdout requires --out-metrics".into())
        })?;
        let held = load_dataset(holdout, &a.label, task)?;
        let metrics = train_metrics(&model, &held)?;
        write_json(
            &out_metrics,
            &json!({
                "format_version": ARTIFACT_FORMAT_VERSION,
                "method": a.method,
                "seed": a.seed,
                "config": resolved,
                "holdout_metrics": metrics,
            }),
        )?;
    }
    Ok(())
}

/// Benchmark description file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchConfigFile {
    datasets: Vec<DatasetSpec>,
    /// Method names: rf | pca_rf | jarf.
    methods: Vec<String>,
    /// JARF configuration for the jarf method (flags override).
    #[serde(default)]
    jarf: Option<JarfConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSpec {
    name: String,
    #[serde(default)]
    path: Option<String>,
    #[serde(default)]
    synth: Option<SynthSpec>,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    task: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthSpec {
    n: usize,
    d: usize,
    theta: f64,
    #[serde(default = "default_sigma")]
    sigma: f64,
    seed: u64,
}

fn default_sigma() -> f64 {
    0.2
}

fn resolve_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    match (&spec.path, &spec.synth) {
        (Some(p), None) => {
            let task = parse_task(spec.task.as_deref().unwrap_or("classification"))?;
            load_dataset(Path::new(p), &spec.label, task)
        }
        (None, Some(s)) => Ok(gen_rotated_hyperplane(s.n, s.d, s.theta, s.sigma, s.seed)?.0),
        _ => Err(Error::InvalidParam(format!(
            "dataset {:?} must set exactly one of path or synth",
            spec.name
        ))),
    }
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let mut cfg: BenchConfigFile = serde_json::from_str(&fs::read_to_string(&a.config)?)
        .map_err(|e| Error::InvalidParam(format!("{}: {e}", a.config.display())))?;
    let jarf_cfg = a.overrides.apply(cfg.jarf.clone().unwrap_or_default())?;
    cfg.jarf = Some(jarf_cfg.clone());
    if cfg.datasets.is_empty() || cfg.methods.is_empty() {
        return Err(Error::InvalidParam("bench config needs datasets and methods".into()));
    }
    let mut datasets = Vec::new();
    for spec in &cfg.datasets {
        let ds = resolve_dataset(spec)
            .map_err(|e| Error::Other(format!("dataset {:?}: {e}", spec.name)))?;
        datasets.push((spec.name.clone(), ds));
    }
    let methods: Vec<MethodSpec> = cfg
        .methods
        .iter()
        .map(|m| match m.as_str() {
            "rf" => Ok(MethodSpec::Rf),
            "pca_rf" => Ok(MethodSpec::PcaRf),
            "jarf" => Ok(MethodSpec::Jarf(jarf_cfg.clone())),
            other => Err(Error::InvalidParam(format!("unknown method {other:?}"))),
        })
        .collect::<Result<_>>()?;
    let report = run_benchmark(&datasets, &methods, a.seed)?;
    write_json(
        &a.out_json,
        &json!({
            "format_version": ARTIFACT_FORMAT_VERSION,
            "config": cfg,
            "report": report,
        }),
    )?;
    fs::write(&a.out_csv, report_to_csv(&report))?;
    for cell in &report.cells {
        println!(
            "bench {} {} mean={:.4} se={:.4} delta={:+.4}",
            cell.dataset, cell.method, cell.mean_primary, cell.se_primary, cell.mean_delta
        );
    }
    Ok(())
}

/// Table rows minus the out-of-scope categorical-handling row.
fn default_variants() -> Vec<AblationVariant> {
    vec![
        AblationVariant::Default,
        AblationVariant::IdentityH,
        AblationVariant::FdForward,
        AblationVariant::FdNoClipping,
        AblationVariant::FixedGlobalStep,
        AblationVariant::NoGamma,
        AblationVariant::NoTraceNorm,
    ]
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let ds = load_dataset(&a.data, &a.label, Task::Classification)?;
    let variants = match &a.variants {
        Some(list) => list
            .split(',')
            .map(|t| AblationVariant::parse(t.trim()))
            .collect::<Result<Vec<_>>>()?,
        None => default_variants(),
    };
    let rows = run_ablations(&ds, &variants, a.seed)?;
    // probe-budget sweep appended as subsample-fraction variants
    let n = ds.n();
    let sweep_ms = [1000usize, 2500, 5000, 10_000, n];
    let sweep: Vec<AblationVariant> = sweep_ms
        .iter()
        .map(|&m| AblationVariant::SubsampleFraction { value: (m.min(n)) as f64 / n as f64 })
        .collect();
    let sweep_rows = run_ablations(&ds, &sweep, a.seed)?;
    let mut out = String::from("section,variant,d_kappa,d_macro_f1,d_accuracy,d_time_s\n");
    for r in &rows {
        out.push_str(&format!(
            "ablation,{},{},{},{},{}\n",
            r.variant, r.d_kappa, r.d_macro_f1, r.d_accuracy, r.d_time_s
        ));
    }
    for (r, &m) in sweep_rows.iter().zip(&sweep_ms) {
        out.push_str(&format!(
            "m_sweep,m={},{},{},{},{}\n",
            m.min(n),
            r.d_kappa,
            r.d_macro_f1,
            r.d_accuracy,
            r.d_time_s
        ));
    }
    fs::write(&a.out_csv, out)?;
    println!("ablate {} variants + {} sweep rows -> {}", rows.len(), sweep_rows.len(), a.out_csv.display());
    Ok(())
}

#[derive(Deserialize)]
struct NormalsFile {
    normals: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct SynthMetaFile {
    v_theta: Vec<f64>,
}

fn load_normals(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    if let Ok(f) = serde_json::from_str::<NormalsFile>(&text) {
        return Ok(f.normals);
    }
    if let Ok(f) = serde_json::from_str::<SynthMetaFile>(&text) {
        return Ok(vec![f.v_theta]);
    }
    Err(Error::InvalidParam(format!(
        "{}: expected {{\"normals\": [[..]]}} or a gen-synth sidecar",
        path.display()
    )))
}

fn cmd_align(a: &AlignArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let Model::Jarf(jm) = model else {
        return Err(Error::InvalidParam("align requires a jarf model".into()));
    };
    let prec = jm.preconditioner.as_ref().ok_or_else(|| {
        Error::InvalidParam("model was trained with the identity ablation; no eigenbasis".into())
    })?;
    let d = prec.h0.size;
    if a.k_max < 1 || a.k_max > d {
        return Err(Error::InvalidParam(format!("k_max must be in 1..={d}")));
    }
    let normals = load_normals(&a.normals)?;
    for v in &normals {
        if v.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "normal of length {}, model dimension {d}",
                v.len()
            )));
        }
    }
    let mut out = String::from("k,normal,s_k\n");
    for k in 1..=a.k_max {
        let u = top_k_subspace(prec, k)?;
        let mut scores = Vec::with_capacity(normals.len());
        for (i, v) in normals.iter().enumerate() {
            let s = jarf::eval::alignment_score(&u, v)?;
            out.push_str(&format!("{k},{i},{s}\n"));
            scores.push(s);
        }
        scores.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let median = if scores.len() % 2 == 1 {
            scores[scores.len() / 2]
        } else {
            0.5 * (scores[scores.len() / 2 - 1] + scores[scores.len() / 2])
        };
        out.push_str(&format!("{k},median,{median}\n"));
    }
    fs::write(&a.out_csv, out)?;
    println!("align k=1..{} over {} normals -> {}", a.k_max, normals.len(), a.out_csv.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t < 1 {
            return Err(Error::InvalidParam("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Other(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::GenSynth(a) => cmd_gen_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Align(a) => cmd_align(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
