//! Experiment plans: a base configuration, an optional sweep over one
//! axis, and a list of seeds. Every (sweep value, seed) pair is one run;
//! runs execute concurrently and write CSV files plus a manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::analysis::{estimate_zeta, theorem1_bound, theorem4_bound, AnalysisError, BoundInputs};
use crate::compress::SparsifierSpec;
use crate::config::{
    fork_rng, Algorithm, ConfigError, DeviceCount, ExperimentConfig, Hierarchy, Purpose, StreamLabel,
};
use crate::dataio::{load_idx, locate_idx_files, partition, DataError, LabeledDataset, Provenance};
use crate::engine::{run_protocol, EngineError, EngineOptions, MlpWorkload, Protocol, RoundLog, SyntheticWorkload, Workload};
use crate::model::{init_params, MlpShape, QuadraticObjective};
use crate::par;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("run {axis}={value} seed {seed}: {source}")]
    Run {
        axis: String,
        value: String,
        seed: u64,
        #[source]
        source: Box<ExperimentError>,
    },
}

impl ExperimentError {
    /// Machine-readable form for the CLI's error record.
    pub fn to_json(&self) -> serde_json::Value {
        let kind = match self {
            ExperimentError::Plan(_) => "plan",
            ExperimentError::Config(_) => "config",
            ExperimentError::Data(_) => "data",
            ExperimentError::Engine(_) => "engine",
            ExperimentError::Analysis(_) => "analysis",
            ExperimentError::Io { .. } => "io",
            ExperimentError::Run { .. } => "run",
        };
        let mut v = json!({ "error": kind, "message": self.to_string() });
        if let ExperimentError::Run { axis, value, seed, .. } = self {
            v["sweep_axis"] = json!(axis);
            v["sweep_value"] = json!(value);
            v["seed"] = json!(seed);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Algorithm,
    Te,
    Clustering,
    NOverD,
    Alpha,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Algorithm => "algorithm",
            SweepAxis::Te => "te",
            SweepAxis::Clustering => "clustering",
            SweepAxis::NOverD => "n_over_d",
            SweepAxis::Alpha => "alpha",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "algorithm" => SweepAxis::Algorithm,
            "te" | "t_e" | "edge_rounds" => SweepAxis::Te,
            "clustering" => SweepAxis::Clustering,
            "n_over_d" => SweepAxis::NOverD,
            "alpha" => SweepAxis::Alpha,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<String>,
}

impl Sweep {
    /// Parses `AXIS=v1,v2,...`. Clustering values are written `QxM`.
    pub fn parse(spec: &str) -> Result<Self, ExperimentError> {
        let (axis, values) = spec
            .split_once('=')
            .ok_or_else(|| ExperimentError::Plan(format!("sweep `{spec}` is not AXIS=v1,v2,...")))?;
        let axis = SweepAxis::parse(axis.trim())
            .ok_or_else(|| ExperimentError::Plan(format!("unknown sweep axis `{axis}`")))?;
        let values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(ExperimentError::Plan("sweep has no values".into()));
        }
        Ok(Self { axis, values })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub config: ExperimentConfig,
    pub sweep: Option<Sweep>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Train on the synthetic quadratic instead of a dataset.
    pub synthetic: bool,
    /// Worker threads (0 = rayon default). Never affects results.
    pub workers: usize,
}

/// One (sweep value, seed) coordinate with its resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub axis: String,
    pub value: String,
    pub seed: u64,
    pub config: ExperimentConfig,
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub record_type: String,
    pub algorithm: String,
    pub seed: u64,
    pub sweep_axis: String,
    pub sweep_value: String,
    pub t: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub grad_l1: f64,
    pub uplink_bits: u64,
    pub downlink_bits: u64,
}

pub const CSV_HEADER: &str = "record_type,algorithm,seed,sweep_axis,sweep_value,t,train_loss,test_loss,train_acc,test_acc,grad_l1,uplink_bits,downlink_bits";

/// Applies one sweep value to a configuration.
pub fn apply_sweep(base: &ExperimentConfig, axis: SweepAxis, value: &str) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = base.clone();
    let bad = || ExperimentError::Plan(format!("bad {} value `{value}`", axis.name()));
    match axis {
        SweepAxis::Algorithm => cfg.algorithm = Algorithm::parse(value).ok_or_else(bad)?,
        SweepAxis::Te => cfg.schedule.edge_rounds = value.parse().map_err(|_| bad())?,
        SweepAxis::Clustering => {
            let (q, m) = value.split_once(['x', 'X']).ok_or_else(bad)?;
            let q: usize = q.parse().map_err(|_| bad())?;
            let m: usize = m.parse().map_err(|_| bad())?;
            if let Some(budget) = cfg.hierarchy.device_budget {
                if q * m != budget {
                    return Err(ExperimentError::Plan(format!(
                        "clustering {q}x{m} uses {} devices, but the plan fixes the budget at {budget}",
                        q * m
                    )));
                }
            }
            cfg.hierarchy.num_edges = q;
            cfg.hierarchy.devices_per_edge = DeviceCount::Uniform(m);
        }
        SweepAxis::NOverD => {
            let f: f64 = value.parse().map_err(|_| bad())?;
            if !(f > 0.0 && f <= 1.0) {
                return Err(bad());
            }
            cfg.algorithm = Algorithm::HierSignsgdQdl;
            cfg.downlink.enabled = true;
            cfg.downlink.active_components = None;
            cfg.downlink.active_fraction = Some(f);
        }
        SweepAxis::Alpha => {
            let a: f64 = value.parse().map_err(|_| bad())?;
            cfg.partition.mode = crate::config::PartitionMode::Dirichlet;
            cfg.partition.alpha = a;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentPlan {
    /// All runs, sweep-value-major.
    pub fn runs(&self) -> Result<Vec<RunSpec>, ExperimentError> {
        if self.seeds.is_empty() {
            return Err(ExperimentError::Plan("no seeds".into()));
        }
        self.config.validate()?;
        let points: Vec<(String, String, ExperimentConfig)> = match &self.sweep {
            None => vec![("none".into(), String::new(), self.config.clone())],
            Some(s) => s
                .values
                .iter()
                .map(|v| Ok((s.axis.name().to_string(), v.clone(), apply_sweep(&self.config, s.axis, v)?)))
                .collect::<Result<_, ExperimentError>>()?,
        };
        Ok(points
            .into_iter()
            .flat_map(|(axis, value, config)| {
                self.seeds.iter().map(move |&seed| RunSpec {
                    axis: axis.clone(),
                    value: value.clone(),
                    seed,
                    config: config.clone(),
                })
            })
            .collect())
    }
}

/// Train and test sets named by a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Datasets {
    pub train: LabeledDataset,
    pub test: Option<LabeledDataset>,
    pub sources: Vec<PathBuf>,
}

/// Loads the configured IDX files (explicit paths, else `data.dir`) and
/// applies `data.subsample` to the training set.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<Datasets, ExperimentError> {
    let d = &cfg.data;
    let located = d.dir.as_deref().and_then(locate_idx_files);
    let train_images = d.train_images.clone().or_else(|| located.as_ref().map(|f| f.train_images.clone()));
    let train_labels = d.train_labels.clone().or_else(|| located.as_ref().map(|f| f.train_labels.clone()));
    let (Some(ti), Some(tl)) = (train_images, train_labels) else {
        return Err(ExperimentError::Plan(
            "no training data: set data.dir or data.train_images/train_labels, or use --synthetic".into(),
        ));
    };
    let mut train = load_idx(&ti, &tl)?;
    if let Some(n) = d.subsample {
        let mut rng = fork_rng(d.subsample_seed, StreamLabel::new(Purpose::Subsample));
        train = train.subsample(n, &mut rng);
    }
    let mut sources = vec![ti, tl];
    let test_images = d.test_images.clone().or_else(|| located.as_ref().and_then(|f| f.test_images.clone()));
    let test_labels = d.test_labels.clone().or_else(|| located.as_ref().and_then(|f| f.test_labels.clone()));
    let test = match (test_images, test_labels) {
        (Some(a), Some(b)) => {
            let ds = load_idx(&a, &b)?;
            sources.extend([a, b]);
            Some(ds)
        }
        _ => None,
    };
    Ok(Datasets { train, test, sources })
}

pub fn mlp_shape(cfg: &ExperimentConfig, data: &LabeledDataset) -> MlpShape {
    MlpShape {
        input: data.dim(),
        hidden: cfg.model.hidden,
        output: data.num_classes().max(2),
        activation: cfg.model.activation,
    }
}

/// Everything one run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub spec: RunSpec,
    pub logs: Vec<RoundLog>,
    pub records: Vec<Record>,
    pub provenance: Option<Provenance>,
}

fn protocol(cfg: &ExperimentConfig, dim: usize) -> Result<Protocol, ExperimentError> {
    Ok(match cfg.algorithm {
        Algorithm::HierSignsgd => Protocol::HierSignSgd,
        Algorithm::HierSgd => Protocol::HierSgd,
        Algorithm::HierSignsgdQdl => {
            let mut dl = cfg.downlink.clone();
            dl.enabled = true;
            Protocol::HierSignSgdQuantizedDownlink(dl.resolve(dim)?)
        }
    })
}

fn round_records(spec: &RunSpec, logs: &[RoundLog]) -> Vec<Record> {
    logs.iter()
        .map(|l| Record {
            record_type: "round".into(),
            algorithm: spec.config.algorithm.name().into(),
            seed: spec.seed,
            sweep_axis: spec.axis.clone(),
            sweep_value: spec.value.clone(),
            t: l.t,
            train_loss: l.train_loss,
            test_loss: l.test_loss,
            train_acc: l.train_accuracy,
            test_acc: l.test_accuracy,
            grad_l1: l.global_grad_l1,
            uplink_bits: l.uplink_bits,
            downlink_bits: l.downlink_bits,
        })
        .collect()
}

/// Analysis rows keep their scalar in the `grad_l1` column.
fn scalar_record(spec: &RunSpec, kind: &str, t: usize, value: f64) -> Record {
    Record {
        record_type: kind.into(),
        algorithm: spec.config.algorithm.name().into(),
        seed: spec.seed,
        sweep_axis: spec.axis.clone(),
        sweep_value: spec.value.clone(),
        t,
        train_loss: f64::NAN,
        test_loss: f64::NAN,
        train_acc: f64::NAN,
        test_acc: f64::NAN,
        grad_l1: value,
        uplink_bits: 0,
        downlink_bits: 0,
    }
}

/// Rounds at which `zeta` is probed: `count` points spread over `0..=T_G`.
fn probe_rounds(count: usize, global_rounds: usize) -> Vec<usize> {
    if count == 0 {
        return Vec::new();
    }
    let mut r: Vec<usize> = (0..count)
        .map(|i| if count == 1 { 0 } else { i * global_rounds / (count - 1) })
        .collect();
    r.dedup();
    r
}

/// Trains the MLP for one run.
pub fn run_mlp(spec: &RunSpec, data: &Datasets, workers: usize, checkpoint_dir: Option<PathBuf>) -> Result<RunResult, ExperimentError> {
    let cfg = &spec.config;
    let layout = cfg.hierarchy.layout()?;
    let parts = partition(&data.train, &layout, &cfg.partition_spec(spec.seed), cfg.partition.max_retries)?;
    let shape = mlp_shape(cfg, &data.train);
    let workload = MlpWorkload::new(
        &data.train,
        data.test.as_ref(),
        &parts,
        shape,
        cfg.eval.grad_batch,
        cfg.eval.train_samples,
        spec.seed,
    );
    let mut rng = fork_rng(spec.seed, StreamLabel::new(Purpose::Init));
    let w0 = init_params(shape, cfg.model.init, &mut rng).values;
    let schedule = cfg.schedule(spec.seed);
    let probes = probe_rounds(cfg.eval.zeta_probes, schedule.global_rounds);
    let options = EngineOptions {
        workers,
        checkpoint_shape: checkpoint_dir.as_ref().map(|_| shape),
        checkpoint_dir,
        snapshot_rounds: probes,
    };
    let out = run_protocol(&workload, &schedule, protocol(cfg, shape.num_params())?, &w0, &options, &mut |_| {})?;
    let mut records = round_records(spec, &out.logs);
    if !out.snapshots.is_empty() {
        let points: Vec<Vec<f64>> = out.snapshots.iter().map(|(_, w)| w.clone()).collect();
        let z = estimate_zeta(&workload, &points)?;
        records.push(scalar_record(spec, "zeta", schedule.global_rounds, z.value));
    }
    Ok(RunResult {
        spec: spec.clone(),
        logs: out.logs,
        records,
        provenance: Some(parts.provenance().clone()),
    })
}

/// The synthetic quadratic for a run: objective, hierarchy and start.
pub fn synthetic_setup(cfg: &ExperimentConfig, seed: u64) -> Result<(SyntheticWorkload, Vec<f64>), ExperimentError> {
    let s = &cfg.synthetic;
    let layout = cfg.hierarchy.layout()?;
    let hierarchy = Hierarchy::derive_weights(layout.iter().map(|&m| vec![1; m]).collect())?;
    let mut rng = fork_rng(seed, StreamLabel::new(Purpose::Synthetic).round(1));
    use rand::Rng;
    let curvature: Vec<f64> = (0..s.dim)
        .map(|_| {
            if s.curvature_max > s.curvature_min {
                rng.random_range(s.curvature_min..s.curvature_max)
            } else {
                s.curvature_min
            }
        })
        .collect();
    let optimum: Vec<f64> = (0..s.dim)
        .map(|_| if s.optimum_scale > 0.0 { rng.random_range(-s.optimum_scale..s.optimum_scale) } else { 0.0 })
        .collect();
    let mut rng = fork_rng(seed, StreamLabel::new(Purpose::Init));
    let w0: Vec<f64> = (0..s.dim)
        .map(|_| if s.init_scale > 0.0 { rng.random_range(-s.init_scale..s.init_scale) } else { 0.0 })
        .collect();
    let objective = QuadraticObjective::new(curvature, optimum, s.noise_std);
    let workload = SyntheticWorkload::new(objective, hierarchy).with_heterogeneity(s.heterogeneity_std, seed);
    Ok((workload, w0))
}

/// Runs the synthetic quadratic and appends the measured `zeta`, the
/// average `||grad F(w^(t))||_1` over `t < T_G`, and the convergence bound's
/// right-hand side (the sparsified-downlink form when that is enabled).
pub fn run_synthetic(spec: &RunSpec, workers: usize) -> Result<RunResult, ExperimentError> {
    let cfg = &spec.config;
    let (workload, w0) = synthetic_setup(cfg, spec.seed)?;
    let schedule = cfg.schedule(spec.seed);
    let d = workload.dim();
    let proto = protocol(cfg, d)?;
    let options = EngineOptions {
        workers,
        ..Default::default()
    };
    let out = run_protocol(&workload, &schedule, proto, &w0, &options, &mut |_| {})?;
    let tg = schedule.global_rounds;
    let mut records = round_records(spec, &out.logs);
    let zeta = estimate_zeta(&workload, std::slice::from_ref(&w0))?.value;
    let avg = out.logs[..tg].iter().map(|l| l.global_grad_l1).sum::<f64>() / tg as f64;
    let psi = match proto {
        Protocol::HierSignSgdQuantizedDownlink(dl) => SparsifierSpec::new(d, dl.active_components)
            .map_err(EngineError::from)?
            .psi(),
        _ => 0.0,
    };
    let inputs = BoundInputs {
        initial_gap: workload.objective().value(&w0),
        smoothness: workload.objective().smoothness(),
        noise_bound: cfg.synthetic.noise_std,
        heterogeneity: zeta,
        dim: d,
        batch_size: schedule.batch_size,
        step_size: schedule.step_size,
        global_rounds: tg,
        edge_rounds: schedule.edge_rounds,
        psi,
    };
    records.push(scalar_record(spec, "zeta", tg, zeta));
    records.push(scalar_record(spec, "avg_grad_l1", tg, avg));
    if psi > 0.0 {
        records.push(scalar_record(spec, "bound_theorem4", tg, theorem4_bound(&inputs).1));
    } else {
        records.push(scalar_record(spec, "bound_theorem1", tg, theorem1_bound(&inputs).1));
    }
    Ok(RunResult {
        spec: spec.clone(),
        logs: out.logs,
        records,
        provenance: None,
    })
}

/// `%.9g`-style formatting; NaN prints as an empty field.
pub fn format_g9(x: f64) -> String {
    if x.is_nan() {
        return String::new();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-5..9).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim(mantissa), sign, exp.abs())
    } else {
        let decimals = (8 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    }
}

fn sort_key(r: &Record) -> (SweepKey, u64, usize) {
    (SweepKey::from(r.sweep_value.as_str()), r.seed, r.t)
}

/// Numeric sweep values order numerically, before any non-numeric ones.
#[derive(Debug, PartialEq, PartialOrd)]
enum SweepKey {
    Number(f64),
    Text(String),
}

impl From<&str> for SweepKey {
    fn from(s: &str) -> Self {
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => SweepKey::Number(v),
            _ => SweepKey::Text(s.to_string()),
        }
    }
}

/// Renders records as CSV, sorted by `(sweep_value, seed, t)`; rows with
/// equal keys keep their input order.
pub fn render_csv(records: &[Record]) -> String {
    let mut rows: Vec<&Record> = records.iter().collect();
    rows.sort_by(|a, b| sort_key(a).partial_cmp(&sort_key(b)).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.record_type,
            r.algorithm,
            r.seed,
            r.sweep_axis,
            r.sweep_value,
            r.t,
            format_g9(r.train_loss),
            format_g9(r.test_loss),
            format_g9(r.train_acc),
            format_g9(r.test_acc),
            format_g9(r.grad_l1),
            r.uplink_bits,
            r.downlink_bits
        );
    }
    out
}

pub fn emit_csv(path: &Path, records: &[Record]) -> Result<(), ExperimentError> {
    fs::write(path, render_csv(records)).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `run_<axis>-<value>_seed-<seed>.csv` with unsafe characters replaced.
pub fn run_file_name(spec: &RunSpec) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
            .collect()
    };
    if spec.value.is_empty() {
        format!("run_seed-{}.csv", spec.seed)
    } else {
        format!("run_{}-{}_seed-{}.csv", clean(&spec.axis), clean(&spec.value), spec.seed)
    }
}

/// Executes a single run against already-loaded data.
/// With `checkpoint_root` set, MLP runs save every `w^(t)` below it.
pub fn execute(
    spec: &RunSpec,
    data: Option<&Datasets>,
    workers: usize,
    checkpoint_root: Option<&Path>,
) -> Result<RunResult, ExperimentError> {
    let result = match data {
        Some(d) => run_mlp(spec, d, workers, checkpoint_root.map(|r| r.join(run_file_name(spec).trim_end_matches(".csv")))),
        None => run_synthetic(spec, workers),
    };
    result.map_err(|e| ExperimentError::Run {
        axis: spec.axis.clone(),
        value: spec.value.clone(),
        seed: spec.seed,
        source: Box::new(e),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutput {
    pub files: Vec<PathBuf>,
    pub records: usize,
}

/// Runs every (value, seed) pair and writes one CSV per run, a merged
/// `summary.csv` and `manifest.json`. Completed runs are written even when
/// another run fails; the first failure is then returned.
pub fn run_plan(plan: &ExperimentPlan) -> Result<PlanOutput, ExperimentError> {
    let runs = plan.runs()?;
    let data = if plan.synthetic {
        None
    } else {
        Some(load_datasets(&plan.config)?)
    };
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ExperimentError::Io { path, source }
    };
    fs::create_dir_all(&plan.out_dir).map_err(io(&plan.out_dir))?;

    let results = par::with_workers(plan.workers, || {
        let checkpoints = plan.config.output.checkpoints.then(|| plan.out_dir.join("checkpoints"));
        par::map_indexed(runs.len(), |i| execute(&runs[i], data.as_ref(), 0, checkpoints.as_deref()))
    });

    let mut files = Vec::new();
    let mut all = Vec::new();
    let mut first_error = None;
    let mut provenance = BTreeMap::new();
    for r in results {
        match r {
            Ok(r) => {
                let path = plan.out_dir.join(run_file_name(&r.spec));
                emit_csv(&path, &r.records)?;
                files.push(path);
                if let Some(p) = &r.provenance {
                    provenance.insert(run_file_name(&r.spec), serde_json::to_value(p).unwrap());
                }
                all.extend(r.records);
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let summary = plan.out_dir.join("summary.csv");
    emit_csv(&summary, &all)?;
    files.push(summary);
    let manifest_path = plan.out_dir.join("manifest.json");
    let manifest = manifest(plan, &runs, data.as_ref(), provenance);
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).unwrap() + "\n")
        .map_err(io(&manifest_path))?;
    files.push(manifest_path);
    match first_error {
        Some(e) => Err(e),
        None => Ok(PlanOutput {
            files,
            records: all.len(),
        }),
    }
}

fn manifest(
    plan: &ExperimentPlan,
    runs: &[RunSpec],
    data: Option<&Datasets>,
    provenance: BTreeMap<String, serde_json::Value>,
) -> serde_json::Value {
    let config = |c: &ExperimentConfig| serde_json::to_value(c).expect("config serializes");
    json!({
        "generator": concat!("hiersign ", env!("CARGO_PKG_VERSION")),
        "synthetic": plan.synthetic,
        "seeds": plan.seeds,
        "sweep": plan.sweep,
        "base_config": config(&plan.config),
        "data": data.map(|d| json!({
            "sources": d.sources,
            "train_samples": d.train.len(),
            "test_samples": d.test.as_ref().map(|t| t.len()),
            "input_dim": d.train.dim(),
            "num_classes": d.train.num_classes(),
        })),
        "runs": runs.iter().map(|r| json!({
            "file": run_file_name(r),
            "sweep_axis": r.axis,
            "sweep_value": r.value,
            "seed": r.seed,
            "config": config(&r.config),
            "partition": provenance.get(&run_file_name(r)),
        })).collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g9_formatting() {
        assert_eq!(format_g9(0.1), "0.1");
        assert_eq!(format_g9(1.234567894321), "1.23456789");
        assert_eq!(format_g9(123456789.0), "123456789");
        assert_eq!(format_g9(1234567890.0), "1.23456789e+09");
        assert_eq!(format_g9(1.5e-7), "1.5e-07");
        assert_eq!(format_g9(0.0001), "0.0001");
        assert_eq!(format_g9(-3.0), "-3");
        assert_eq!(format_g9(f64::NAN), "");
        assert_eq!(format_g9(0.999999999999), "1");
    }

    #[test]
    fn sweep_parsing() {
        let s = Sweep::parse("te=10,30, 90").unwrap();
        assert_eq!(s.axis, SweepAxis::Te);
        assert_eq!(s.values, vec!["10", "30", "90"]);
        assert!(Sweep::parse("speed=1").is_err());
        assert!(Sweep::parse("te").is_err());
        assert!(Sweep::parse("te=").is_err());
    }

    #[test]
    fn clustering_budget() {
        let mut cfg = ExperimentConfig::default();
        cfg.hierarchy.device_budget = Some(48);
        let c = apply_sweep(&cfg, SweepAxis::Clustering, "6x8").unwrap();
        assert_eq!(c.hierarchy.layout().unwrap(), vec![8; 6]);
        assert!(apply_sweep(&cfg, SweepAxis::Clustering, "5x8").is_err());
        cfg.hierarchy.device_budget = None;
        assert!(apply_sweep(&cfg, SweepAxis::Clustering, "5x8").is_ok());
    }

    #[test]
    fn sweep_values_reach_config() {
        let cfg = ExperimentConfig::default();
        let c = apply_sweep(&cfg, SweepAxis::NOverD, "0.06").unwrap();
        assert_eq!(c.algorithm, Algorithm::HierSignsgdQdl);
        assert_eq!(c.downlink.resolve(1000).unwrap().active_components, 60);
        let c = apply_sweep(&cfg, SweepAxis::Alpha, "0.3").unwrap();
        assert_eq!(c.partition.alpha, 0.3);
        let c = apply_sweep(&cfg, SweepAxis::Algorithm, "hier_sgd").unwrap();
        assert_eq!(c.algorithm, Algorithm::HierSgd);
        assert!(apply_sweep(&cfg, SweepAxis::NOverD, "1.5").is_err());
        assert!(apply_sweep(&cfg, SweepAxis::Te, "0").is_err());
    }

    #[test]
    fn csv_sorting_and_header() {
        assert_eq!(render_csv(&[]), format!("{CSV_HEADER}\n"));
        let spec = |v: &str, seed| RunSpec {
            axis: "te".into(),
            value: v.into(),
            seed,
            config: ExperimentConfig::default(),
        };
        let mut recs = Vec::new();
        for (v, seed) in [("90", 1), ("10", 2), ("10", 1)] {
            for t in [1, 0] {
                recs.push(scalar_record(&spec(v, seed), "round", t, t as f64));
            }
        }
        let csv = render_csv(&recs);
        let keys: Vec<String> = csv
            .lines()
            .skip(1)
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                format!("{}/{}/{}", f[4], f[2], f[5])
            })
            .collect();
        assert_eq!(keys, ["10/1/0", "10/1/1", "10/2/0", "10/2/1", "90/1/0", "90/1/1"]);
    }

    #[test]
    fn file_names() {
        let spec = RunSpec {
            axis: "clustering".into(),
            value: "6x8".into(),
            seed: 3,
            config: ExperimentConfig::default(),
        };
        assert_eq!(run_file_name(&spec), "run_clustering-6x8_seed-3.csv");
    }

    #[test]
    fn probes_spread_over_rounds() {
        assert_eq!(probe_rounds(0, 30), Vec::<usize>::new());
        assert_eq!(probe_rounds(1, 30), vec![0]);
        assert_eq!(probe_rounds(3, 30), vec![0, 15, 30]);
    }
}
