use std::path::{Path, PathBuf};

use odecausal::experiments::{linear_config, table_cell, CellSummary};
use odecausal::intervene::{compare_interventions, learned_linear_field, InterventionSpec, Subject};
use odecausal::io::{self, Bundle, SystemRecord, SYSTEM_FILE};
use odecausal::nn::Architecture;
use odecausal::structure::{infer_structure, jacobian_timeseries, verify_unidentifiability, ExtractionMode, ScoreAggregation, DEFAULT_EPSILON};
use odecausal::systems::{
    corrupt, generate as generate_system, CorruptionSpec, LotkaVolterra, SparseSystemSpec, SystemSpec, Transcription,
};
use odecausal::train::{prediction_solver, Checkpoint};
use odecausal::{score_graph, Order, TrainConfig, TrainedModel, Trajectory};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{self, materialize, merge, to_value, Flags};
use crate::manifest::Run;
use crate::{plot, CliError, ModeArg, SystemKind};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn layer_file(base: &mut Value, file: Option<&PathBuf>, run: &mut Run) -> Result<Option<Value>, CliError> {
    let Some(path) = file else { return Ok(None) };
    run.input(path);
    let v = config::load(path)?;
    merge(base, v.clone());
    Ok(Some(v))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub spec: SystemSpec,
    pub corruption: CorruptionSpec,
}

pub struct GenerateArgs {
    pub system: SystemKind,
    pub config: Option<PathBuf>,
    pub n: Option<usize>,
    pub density: Option<f64>,
    pub sigma: Option<f64>,
    pub irr: Option<f64>,
    pub seed: Option<u64>,
    pub plot: bool,
}

pub fn generate(run: &mut Run, a: GenerateArgs) -> Result<(), CliError> {
    let default_spec = match a.system {
        SystemKind::Linear => SystemSpec::default_linear(10, 0),
        SystemKind::Spiral => SystemSpec::default_spiral(),
        SystemKind::Lv => SystemSpec::default_lv(),
        SystemKind::Transcription => SystemSpec::default_transcription(),
    };
    let name = default_spec.name();
    let mut cfg = to_value(&GenerateConfig { spec: default_spec, corruption: CorruptionSpec::default() });
    if let Some(file) = layer_file(&mut cfg, a.config.as_ref(), run)? {
        if let Some(tag) = file.pointer("/spec/system").and_then(Value::as_str) {
            if tag != name {
                return Err(usage(format!("config describes a `{tag}` system, not `{name}`")));
            }
        }
    }
    let linear = a.system == SystemKind::Linear;
    if !linear && (a.n.is_some() || a.density.is_some()) {
        return Err(usage("--n and --density apply to linear systems only"));
    }
    let mut spec_flags = Flags::default();
    spec_flags.set("dim", a.n).set("density", a.density);
    if linear {
        spec_flags.set("seed", a.seed);
    }
    let mut corruption_flags = Flags::default();
    corruption_flags.set("sigma", a.sigma).set("irr", a.irr).set("seed", a.seed);
    merge(&mut cfg, json!({"spec": spec_flags.into_value(), "corruption": corruption_flags.into_value()}));
    run.config(cfg.clone());

    check_flattened_spec(&cfg["spec"])?;
    let cfg: GenerateConfig = materialize(&cfg, "generate config")?;
    run.seed(match &cfg.spec {
        SystemSpec::Linear { spec, .. } => spec.seed,
        _ => cfg.corruption.seed,
    });
    let data = generate_system(&cfg.spec)?;
    let observed = corrupt(&data.trajectory, &cfg.corruption)?;
    let bundle = Bundle::new(data, observed, cfg.corruption);
    for f in [io::TRAJECTORY_FILE, io::CLEAN_TRAJECTORY_FILE, io::TRUTH_FILE, io::SYSTEM_FILE, io::CORRUPTION_FILE] {
        run.output(f);
    }
    bundle.save(run.out())?;
    if a.plot {
        run.write_text("trajectory.svg", &plot::lines(&bundle.observed, &format!("{name}: observed trajectory")))?;
    }
    println!(
        "{name}: {} variables, {} observations, {} true edges -> {}",
        bundle.observed.dim(),
        bundle.observed.len(),
        bundle.truth.edge_count(),
        run.out().display()
    );
    Ok(())
}

/// The system spec is a tagged enum with flattened parameters, which hides
/// field paths from deserialization errors; checking the flattened part on
/// its own recovers them.
fn check_flattened_spec(spec: &Value) -> Result<(), CliError> {
    let mut params = spec.clone();
    if let Value::Object(map) = &mut params {
        for key in ["system", "x0", "window"] {
            map.remove(key);
        }
    }
    let prefixed = |e: CliError| match e {
        CliError::Usage(m) => CliError::Usage(m.replacen("field `", "field `spec.", 1)),
        other => other,
    };
    match spec.get("system").and_then(Value::as_str) {
        Some("linear") => materialize::<SparseSystemSpec>(&params, "generate config").map(drop).map_err(prefixed),
        Some("lv") => materialize::<LotkaVolterra>(&params, "generate config").map(drop).map_err(prefixed),
        Some("transcription") => materialize::<Transcription>(&params, "generate config").map(drop).map_err(prefixed),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub architecture: Architecture,
    pub train: TrainConfig,
}

pub struct TrainArgs {
    pub dataset: PathBuf,
    pub config: Option<PathBuf>,
    pub arch: Option<Vec<usize>>,
    pub lambda: Option<f64>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub order: Option<String>,
    pub activation: Option<String>,
    pub features: Option<String>,
    pub raw: bool,
    pub seed: Option<u64>,
    pub plot: bool,
}

/// Order recorded in a bundle's `system.json`, if any.
fn bundle_order(dataset: &Path) -> Result<Option<Order>, CliError> {
    let path = dataset.join(SYSTEM_FILE);
    if !dataset.is_dir() || !path.exists() {
        return Ok(None);
    }
    let record: SystemRecord = io::read_json(&path)?;
    Ok(Some(record.spec.order()))
}

pub fn train(run: &mut Run, a: TrainArgs) -> Result<(), CliError> {
    run.input(&a.dataset);
    let (observed, _) = io::load_observations(&a.dataset)?;
    let dim = observed.dim();
    let file = match &a.config {
        Some(p) => {
            run.input(p);
            Some(config::load(p)?)
        }
        None => None,
    };
    let order_flag = a.order.as_deref().map(|o| if o == "2" { Order::Second } else { Order::First });
    let order_file = match file.as_ref().and_then(|f| f.pointer("/architecture/order")) {
        Some(v) => Some(materialize::<Order>(v, "architecture.order")?),
        None => None,
    };
    let order = match order_flag.or(order_file) {
        Some(o) => o,
        None => bundle_order(&a.dataset)?.unwrap_or(Order::First),
    };
    let mut cfg = to_value(&TrainRunConfig {
        architecture: Architecture::default_for(dim, order),
        train: TrainConfig::default_for_dim(dim),
    });
    if let Some(f) = file {
        merge(&mut cfg, f);
    }
    let mut arch_flags = Flags::default();
    arch_flags.set("order", order_flag).set("hidden", a.arch).set("activation", a.activation).set("features", a.features);
    let mut train_flags = Flags::default();
    train_flags
        .set("lambda", a.lambda)
        .set("learning_rate", a.lr)
        .set("epochs", a.epochs)
        .set("seed", a.seed)
        .set("normalize", a.raw.then_some(false));
    merge(&mut cfg, json!({"architecture": arch_flags.into_value(), "train": train_flags.into_value()}));
    run.config(cfg.clone());
    let cfg: TrainRunConfig = materialize(&cfg, "train config")?;
    run.seed(cfg.train.seed);

    let model = odecausal::train(&observed, &cfg.architecture, &cfg.train)?;
    run.write_json("checkpoint.json", &model.checkpoint())?;
    run.write_text("training_log.csv", &model.report.to_csv())?;
    if a.plot {
        let pred = model.predict(observed.row(0), observed.times(), None)?;
        run.write_text("prediction.svg", &plot::lines(&pred, "prediction from the first observation"))?;
    }
    println!(
        "trained {} epochs in {:.1} s: data loss {:.3e}, path penalty {:.3e}",
        model.report.epochs(),
        model.report.wall_clock_seconds,
        model.report.final_data_loss,
        model.report.final_penalty
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferConfig {
    pub epsilon: f64,
    pub mode: ExtractionMode,
    pub aggregation: ScoreAggregation,
}

pub struct InferArgs {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub config: Option<PathBuf>,
    pub epsilon: Option<f64>,
    pub mode: Option<ModeArg>,
    pub aggregation: Option<String>,
    pub plot: bool,
}

fn load_model(path: &Path) -> Result<TrainedModel, CliError> {
    let checkpoint: Checkpoint = io::read_json(path)?;
    Ok(checkpoint.into_model()?)
}

pub fn infer(run: &mut Run, a: InferArgs) -> Result<(), CliError> {
    run.input(&a.checkpoint);
    run.input(&a.dataset);
    let model = load_model(&a.checkpoint)?;
    let (observed, truth) = io::load_observations(&a.dataset)?;
    let mut cfg = to_value(&InferConfig {
        epsilon: DEFAULT_EPSILON,
        mode: ExtractionMode::default_for(&model),
        aggregation: ScoreAggregation::default(),
    });
    layer_file(&mut cfg, a.config.as_ref(), run)?;
    let mode = a.mode.map(|m| match m {
        ModeArg::Linear => ExtractionMode::Linear,
        ModeArg::Jacobian => ExtractionMode::Jacobian,
    });
    let mut flags = Flags::default();
    flags.set("epsilon", a.epsilon).set("mode", mode).set("aggregation", a.aggregation);
    merge(&mut cfg, flags.into_value());
    run.config(cfg.clone());
    let cfg: InferConfig = materialize(&cfg, "infer config")?;
    if !(cfg.epsilon >= 0.0) {
        return Err(usage("epsilon must be non-negative"));
    }
    run.seed(model.config.seed);

    let graph = infer_structure(&model, &observed, cfg.mode, cfg.epsilon, cfg.aggregation)?;
    run.write_text("scores.csv", &io::matrix_to_csv(graph.scores()))?;
    let adjacency = graph.adjacency().map(|b| if b { 1.0 } else { 0.0 });
    run.write_text("adjacency.csv", &io::matrix_to_csv(&adjacency))?;
    if let Some(signs) = graph.signs() {
        run.write_text("signs.csv", &io::matrix_to_csv(signs))?;
    }
    if let Some(truth) = truth {
        let metrics = score_graph(&graph, &truth)?;
        run.write_json("metrics.json", &metrics)?;
        println!(
            "SHD-bar {:.3}  TPR {:.3}  TNR {:.3}  (missing {}, extra {}, reversed {})",
            metrics.shd_bar, metrics.tpr, metrics.tnr, metrics.missing, metrics.extra, metrics.reversed
        );
    }
    println!("{} edges at epsilon {}", graph.edge_count(), cfg.epsilon);
    if a.plot {
        run.write_text("scores.svg", &plot::heatmap(graph.scores(), "edge scores (row = effect)"))?;
        if cfg.mode == ExtractionMode::Jacobian {
            let inputs = model.network_inputs(&observed)?;
            let jacobians = jacobian_timeseries(&model.field, &inputs)?;
            let rows = jacobians.iter().map(|j| j.transpose().iter().cloned().collect()).collect();
            let series = Trajectory::new(inputs.times().to_vec(), rows)?;
            run.write_text("jacobians.svg", &plot::lines(&series, "input Jacobian entries along the trajectory"))?;
        }
    }
    Ok(())
}

pub struct InterveneArgs {
    pub spec: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub system: Option<PathBuf>,
    pub x0: Option<Vec<f64>>,
    pub plot: bool,
}

/// Reads a bundle directory, a `system.json` record, or a bare system spec.
fn load_system(path: &Path) -> Result<SystemRecord, CliError> {
    let file = if path.is_dir() { path.join(SYSTEM_FILE) } else { path.to_path_buf() };
    let value: Value = io::read_json(&file)?;
    if value.get("spec").is_some() {
        return materialize(&value, "system record");
    }
    let spec: SystemSpec = materialize(&value, "system spec")?;
    let coefficients = match spec {
        SystemSpec::Linear { .. } => generate_system(&spec)?.linear,
        _ => None,
    };
    Ok(SystemRecord { spec, coefficients })
}

pub fn intervene(run: &mut Run, a: InterveneArgs) -> Result<(), CliError> {
    run.input(&a.spec);
    let spec: InterventionSpec = materialize(&io::read_json::<Value>(&a.spec)?, "intervention spec")?;
    if a.checkpoint.is_none() && a.system.is_none() {
        return Err(usage("pass --checkpoint, --system, or both"));
    }
    let record = match &a.system {
        Some(p) => {
            run.input(p);
            Some(load_system(p)?)
        }
        None => None,
    };
    let model = match &a.checkpoint {
        Some(p) => {
            run.input(p);
            Some(load_model(p)?)
        }
        None => None,
    };
    let x0 = match (&a.x0, record.as_ref().and_then(SystemRecord::initial_state)) {
        (Some(x), _) => x.clone(),
        (None, Some(x)) => x,
        (None, None) => return Err(usage("no initial state: pass --x0")),
    };
    let window = match (spec.horizon, &record) {
        (Some(w), _) => w,
        (None, Some(r)) => r.spec.window(),
        (None, None) => return Err(usage("the intervention spec needs a horizon when no system is given")),
    };
    if window.points < 2 || !(window.t_end > 0.0) {
        return Err(usage("horizon needs at least two points and t_end > 0"));
    }
    let times = window.grid();
    run.config(json!({"intervention": InterventionSpec { horizon: Some(window), ..spec.clone() }, "x0": x0}));
    if let Some(m) = &model {
        run.seed(m.config.seed);
    }

    let truth_field = record.as_ref().and_then(SystemRecord::nonlinear_field);
    let truth = match (&record, &truth_field) {
        (None, _) => None,
        (Some(_), Some(f)) => Some(Subject::field(f.as_ref(), None)),
        (Some(r), None) => {
            let c = r.coefficients.as_ref().ok_or_else(|| usage("linear system record lacks coefficients"))?;
            Some(Subject::linear(c.field(), Some(c.v0.clone())))
        }
    };
    let denormalized = model.as_ref().map(TrainedModel::original_units_field);
    let learned = match (&model, &denormalized) {
        (Some(m), Some(f)) => {
            let v0 = match m.field.order() {
                Order::First => None,
                Order::Second => Some(m.initial_velocity(&x0)?),
            };
            Some(if spec.edits.is_empty() {
                Subject::field(f, v0)
            } else {
                Subject::linear(learned_linear_field(m)?, v0)
            })
        }
        _ => None,
    };

    let n = x0.len();
    let mut plots = Vec::new();
    match (&truth, &learned) {
        (Some(t), Some(l)) => {
            let report = compare_interventions(t, l, &spec, &x0, &times)?;
            for (name, traj, failure) in [
                ("truth.csv", &report.truth, &report.truth_failure),
                ("learned.csv", &report.learned, &report.learned_failure),
            ] {
                match (traj, failure) {
                    (Some(traj), _) => {
                        run.write_text(name, &io::trajectory_to_csv(traj, "x"))?;
                        plots.push((name, traj.clone()));
                    }
                    (None, Some(msg)) => eprintln!("warning: {name}: {msg}"),
                    _ => {}
                }
            }
            run.write_json("report.json", &report)?;
            let fmt = |v: &[f64]| v.iter().map(|g| format!("{g:.4}")).collect::<Vec<_>>().join(" ");
            println!("sup-norm gap per variable: {}", fmt(&report.gap));
            println!("derivative sign agreement: {}", fmt(&report.sign_agreement));
        }
        (Some(s), None) | (None, Some(s)) => {
            spec.validate(n)?;
            let name = if truth.is_some() { "truth.csv" } else { "learned.csv" };
            let traj = s.simulate(&spec, &x0, &times, &prediction_solver())?.0.leading_columns(n);
            run.write_text(name, &io::trajectory_to_csv(&traj, "x"))?;
            plots.push((name, traj));
        }
        (None, None) => unreachable!("one of checkpoint and system is present"),
    }
    if a.plot {
        for (name, traj) in plots {
            let svg = name.replace(".csv", ".svg");
            run.write_text(&svg, &plot::lines(&traj, &format!("{} under the intervention", name.trim_end_matches(".csv"))))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub lambda: Option<f64>,
    pub learning_rate: Option<f64>,
}

impl TrainOverrides {
    fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        cfg.epochs = self.epochs.unwrap_or(cfg.epochs);
        cfg.lambda = self.lambda.unwrap_or(cfg.lambda);
        cfg.learning_rate = self.learning_rate.unwrap_or(cfg.learning_rate);
        cfg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub dims: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub irrs: Vec<f64>,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub train: TrainOverrides,
}

pub struct SweepArgs {
    pub config: Option<PathBuf>,
    pub dims: Option<Vec<usize>>,
    pub sigmas: Option<Vec<f64>>,
    pub irrs: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    pub workers: Option<usize>,
    pub epochs: Option<usize>,
    pub lambda: Option<f64>,
    pub lr: Option<f64>,
}

pub fn sweep(run: &mut Run, a: SweepArgs) -> Result<(), CliError> {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut cfg = to_value(&SweepConfig {
        dims: vec![10],
        sigmas: vec![0.0],
        irrs: vec![0.0],
        seeds: vec![0, 1, 2],
        workers: cores,
        train: TrainOverrides::default(),
    });
    layer_file(&mut cfg, a.config.as_ref(), run)?;
    let mut flags = Flags::default();
    flags.set("dims", a.dims).set("sigmas", a.sigmas).set("irrs", a.irrs).set("seeds", a.seeds).set("workers", a.workers);
    let mut train_flags = Flags::default();
    train_flags.set("epochs", a.epochs).set("lambda", a.lambda).set("learning_rate", a.lr);
    merge(&mut cfg, flags.into_value());
    merge(&mut cfg, json!({"train": train_flags.into_value()}));
    run.config(cfg.clone());
    let cfg: SweepConfig = materialize(&cfg, "sweep config")?;
    for (name, empty) in [
        ("seeds", cfg.seeds.is_empty()),
        ("dims", cfg.dims.is_empty()),
        ("sigmas", cfg.sigmas.is_empty()),
        ("irrs", cfg.irrs.is_empty()),
    ] {
        if empty {
            return Err(usage(format!("the {name} list is empty")));
        }
    }
    if cfg.workers == 0 {
        return Err(usage("workers must be at least 1"));
    }

    let mut cells = Vec::new();
    for &d in &cfg.dims {
        for &s in &cfg.sigmas {
            for &i in &cfg.irrs {
                cells.push((d, s, i));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Io(format!("worker pool: {e}")))?;
    let overrides = &cfg.train;
    let seeds = &cfg.seeds;
    let results: Vec<odecausal::Result<CellSummary>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(dim, sigma, irr)| {
                let cell = table_cell(dim, sigma, irr, seeds, |seed| overrides.apply(linear_config(seed)));
                if let Ok(c) = &cell {
                    eprintln!("cell dim={dim} sigma={sigma} irr={irr}: SHD-bar {:.3}", c.shd_bar);
                }
                cell
            })
            .collect()
    });
    let summaries = results.into_iter().collect::<odecausal::Result<Vec<_>>>()?;
    let mut csv = String::from(CellSummary::CSV_HEADER);
    csv.push('\n');
    for c in &summaries {
        csv.push_str(&c.csv_row());
        csv.push('\n');
    }
    run.write_text("table.csv", &csv)?;
    run.write_json("cells.json", &summaries)?;
    print!("{csv}");
    Ok(())
}

pub fn demo_unidentifiability(run: &mut Run) -> Result<(), CliError> {
    run.config(json!({"x0": [1.0, 1.0], "window": [0.0, 2.0], "a": [[1.0, 0.0], [0.0, 1.0]], "b": [[0.0, 1.0], [1.0, 0.0]]}));
    let report = verify_unidentifiability()?;
    println!("{}", report.summary);
    println!("{:<10} {:>10} {:>10}", "system", "L1,1", "nonzeros");
    println!("{:<10} {:>10} {:>10}", "identity", report.l11_identity, report.nonzero_identity);
    println!("{:<10} {:>10} {:>10}", "swap", report.l11_swap, report.nonzero_swap);
    println!("analytic deviation {:.3e}, dopri5 deviation {:.3e}", report.analytic_deviation, report.dopri5_deviation);
    run.write_json("unidentifiability.json", &report)?;
    Ok(())
}
