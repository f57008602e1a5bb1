//! `trajkit` command line tool.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use trajkit::map_prior::PriorJson;
use trajkit::predictor::{count_flops, count_params, render_svg, FlopBreakdown, PredictionSet, Sample, Variant};
use trajkit::scenario::{self, generate_synthetic, InputFormat, LaneTopology, MotionModel, SynthSpec};
use trajkit::training::{self, EpochMetrics};
use trajkit::{metrics, Error, Model32, Point, Result, Scenario};

use config::{FileConfig, Resolved};

#[derive(Parser)]
#[command(name = "trajkit", version, about = "Multimodal vehicle trajectory prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build centerline priors for every scenario.
    Preprocess(Common),
    /// Train a model; writes a checkpoint and a metrics log.
    Train(Common),
    /// Predict six modes per scenario with a trained checkpoint.
    Predict(Common),
    /// minADE/minFDE of stored predictions or of a checkpoint.
    Eval(EvalArgs),
    /// Parameter and FLOP report of a configuration.
    Flops(Common),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Flat JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for per-scenario work.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,
    /// Also write an SVG overlay per scenario (predict).
    #[arg(long)]
    svg: bool,
    #[arg(long, value_enum, default_value = "native_json")]
    format: FormatArg,
    /// Checkpoint directory (predict, eval).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Validation scenario directory (train); defaults to the last fifth of --data.
    #[arg(long)]
    val: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Directory of prediction JSON files named `<scenario_id>.json`.
    #[arg(long, conflicts_with = "model")]
    pred: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value = "cv")]
    motion: MotionArg,
    #[arg(long, value_enum, default_value = "straight")]
    topology: TopologyArg,
    /// Agents per scene, target included.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u16).range(1..))]
    agents: u16,
    /// Observation noise standard deviation, m.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Social,
    Map,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    #[value(name = "native_json")]
    NativeJson,
    #[value(name = "argoverse_csv")]
    ArgoverseCsv,
}

#[derive(Clone, Copy, ValueEnum)]
enum MotionArg {
    Cv,
    Ctrv,
    Ctra,
}

#[derive(Clone, Copy, ValueEnum)]
enum TopologyArg {
    Straight,
    Curve,
    Fork,
}

fn main() -> ExitCode {
    let env = env_logger::Env::new().filter_or("TRAJKIT_LOG", "error");
    env_logger::Builder::from_env(env).format_timestamp(None).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Preprocess(c) => preprocess(&c),
        Command::Train(c) => train(&c),
        Command::Predict(c) => predict(&c),
        Command::Eval(a) => eval(&a),
        Command::Flops(c) => flops(&c),
        Command::Synth(a) => synth(&a),
    }
}

fn resolve(c: &Common) -> Result<Resolved> {
    let file = match &c.config {
        Some(path) => FileConfig::read(path)?,
        None => FileConfig::default(),
    };
    let variant = c.variant.map(|v| match v {
        VariantArg::Social => Variant::Social,
        VariantArg::Map => Variant::Map,
    });
    Resolved::new(&file, variant, c.seed)
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::InvalidConfig(format!("--{flag} is required")))
}

fn pool(jobs: u16) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs as usize).build().map_err(|e| Error::InvalidConfig(e.to_string()))
}

fn input_format(f: FormatArg) -> (InputFormat, &'static str) {
    match f {
        FormatArg::NativeJson => (InputFormat::NativeJson, "json"),
        FormatArg::ArgoverseCsv => (InputFormat::ArgoverseCsv, "csv"),
    }
}

/// Scenario files of a directory in file-name order.
fn scenario_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == ext))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(files)
}

fn load_scenarios(dir: &Path, c: &Common, r: &Resolved) -> Result<Vec<Scenario>> {
    let (format, ext) = input_format(c.format);
    let files = scenario_files(dir, ext)?;
    pool(c.jobs)?.install(|| {
        files
            .par_iter()
            .map(|f| {
                let raw = fs::read(f)?;
                scenario::parse_scenario(&raw, format, &r.prep.horizon).map_err(|e| Error::MalformedInput(format!("{}: {e}", f.display())))
            })
            .collect()
    })
}

fn prepare(scenarios: &[Scenario], c: &Common, r: &Resolved) -> Result<Vec<Sample>> {
    pool(c.jobs)?.install(|| scenarios.par_iter().map(|s| Sample::prepare(s, &r.prep)).collect())
}

fn out_dir(c: &Common) -> Result<&Path> {
    let out = required(&c.out, "out")?;
    fs::create_dir_all(out)?;
    Ok(out)
}

fn file_stem(id: &str) -> String {
    id.chars().map(|ch| if ch.is_ascii_alphanumeric() || "-_.".contains(ch) { ch } else { '_' }).collect()
}

fn preprocess(c: &Common) -> Result<()> {
    let mut r = resolve(c)?;
    r.prep.with_prior = true;
    let scenarios = load_scenarios(required(&c.data, "data")?, c, &r)?;
    let out = out_dir(c)?;
    let priors: Vec<(String, PriorJson)> = pool(c.jobs)?.install(|| {
        scenarios
            .par_iter()
            .map(|s| {
                let sample = Sample::prepare(s, &r.prep)?;
                let prior = sample.prior.ok_or(Error::MissingPrior)?;
                Ok((sample.scenario_id, prior.to_json()))
            })
            .collect::<Result<_>>()
    })?;
    for (id, prior) in &priors {
        fs::write(out.join(format!("{}.json", file_stem(id))), serde_json::to_string(prior)?)?;
    }
    log::info!("wrote {} priors", priors.len());
    Ok(())
}

fn train(c: &Common) -> Result<()> {
    let r = resolve(c)?;
    let data = required(&c.data, "data")?;
    let mut all = load_scenarios(data, c, &r)?;
    let val_scenarios = match &c.val {
        Some(dir) => load_scenarios(dir, c, &r)?,
        None => {
            if all.len() < 2 {
                return Err(Error::InvalidConfig("need at least 2 scenarios to hold out a validation fifth".into()));
            }
            let split = all.len() - (all.len() / 5).max(1);
            all.split_off(split)
        }
    };
    let train_set = prepare(&all, c, &r)?;
    let val_set = prepare(&val_scenarios, c, &r)?;
    let out = out_dir(c)?;
    let mut model = Model32::new(r.model.clone(), r.train.seed)?;
    log::info!("training {} parameters on {} scenes, {} held out", model.num_params(), train_set.len(), val_set.len());
    let mut log_file = fs::File::create(out.join("metrics.jsonl"))?;
    let mut write_err = None;
    let report = training::train(&mut model, &train_set, &val_set, &r.train, |m: &EpochMetrics| {
        log::info!("epoch {} lr {:.2e} loss {:.4} minADE6 {:.3}", m.epoch, m.lr, m.train_loss, m.val_minade_k6);
        let line = serde_json::to_string(m).map_err(Error::from);
        let res = line.and_then(|l| writeln!(log_file, "{l}").map_err(Error::from));
        if let Err(e) = res {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    model.save(&out.join("checkpoint"))?;
    #[derive(Serialize)]
    struct Summary<'a> {
        model: &'a trajkit::predictor::ModelConfig,
        train: &'a training::TrainConfig,
        stage2_from: Option<usize>,
        params: usize,
    }
    let summary = Summary { model: &r.model, train: &r.train, stage2_from: report.stage2_from, params: model.num_params() };
    fs::write(out.join("run.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

/// Predictions of every sample mapped back to world coordinates.
fn world_predictions(model: &Model32, samples: &[Sample], c: &Common) -> Result<Vec<PredictionSet>> {
    let chunk = 64;
    let sets: Vec<Vec<PredictionSet>> = pool(c.jobs)?.install(|| {
        samples
            .par_chunks(chunk)
            .map(|batch| {
                let refs: Vec<&Sample> = batch.iter().collect();
                let preds = model.predict(&refs)?;
                Ok(batch.iter().zip(preds).map(|(s, p)| to_world(s, p)).collect())
            })
            .collect::<Result<_>>()
    })?;
    Ok(sets.into_iter().flatten().collect())
}

fn to_world(s: &Sample, mut p: PredictionSet) -> PredictionSet {
    for t in &mut p.trajectories {
        for q in t.iter_mut() {
            *q = s.frame.invert(*q);
        }
    }
    p
}

fn load_model(c: &Common, r: &mut Resolved) -> Result<Model32> {
    let model = Model32::load(required(&c.model, "model")?)?;
    r.prep.with_prior = model.config.variant == Variant::Map;
    Ok(model)
}

fn predict(c: &Common) -> Result<()> {
    let mut r = resolve(c)?;
    let model = load_model(c, &mut r)?;
    let scenarios = load_scenarios(required(&c.data, "data")?, c, &r)?;
    let samples = prepare(&scenarios, c, &r)?;
    let preds = world_predictions(&model, &samples, c)?;
    let out = out_dir(c)?;
    for (s, p) in samples.iter().zip(&preds) {
        let stem = file_stem(&s.scenario_id);
        fs::write(out.join(format!("{stem}.json")), p.to_json()?)?;
        if c.svg {
            let local = PredictionSet {
                trajectories: p.trajectories.iter().map(|t| t.iter().map(|&q| s.frame.apply(q)).collect()).collect(),
                confidences: p.confidences.clone(),
            };
            fs::write(out.join(format!("{stem}.svg")), render_svg(s, &local))?;
        }
    }
    log::info!("wrote {} predictions", preds.len());
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let c = &a.common;
    let mut r = resolve(c)?;
    let (preds, gts): (Vec<PredictionSet>, Vec<Vec<Point>>) = match &a.pred {
        Some(dir) => {
            let scenarios = load_scenarios(required(&c.data, "data")?, c, &r)?;
            let mut preds = Vec::with_capacity(scenarios.len());
            let mut gts = Vec::with_capacity(scenarios.len());
            for s in &scenarios {
                let path = dir.join(format!("{}.json", file_stem(&s.scenario_id)));
                preds.push(PredictionSet::from_json(&fs::read_to_string(&path)?)?);
                gts.push(ground_truth(s, &r)?);
            }
            (preds, gts)
        }
        None => {
            let model = load_model(c, &mut r)?;
            let scenarios = load_scenarios(required(&c.data, "data")?, c, &r)?;
            let samples = prepare(&scenarios, c, &r)?;
            let gts = scenarios.iter().map(|s| ground_truth(s, &r)).collect::<Result<_>>()?;
            (world_predictions(&model, &samples, c)?, gts)
        }
    };
    let summary = metrics::evaluate(&gts, &preds)?;
    let json = serde_json::to_string(&summary)?;
    if let Some(out) = &c.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("eval.json"), &json)?;
    }
    println!("{json}");
    Ok(())
}

fn ground_truth(s: &Scenario, r: &Resolved) -> Result<Vec<Point>> {
    if !s.has_future(&r.prep.horizon) {
        return Err(Error::InsufficientFrames { got: s.frame_count(), need: r.prep.horizon.total() });
    }
    Ok(s.target_future(&r.prep.horizon).to_vec())
}

#[derive(Serialize)]
struct FlopReport {
    variant: Variant,
    params: usize,
    agents: usize,
    flops: FlopBreakdown,
    total_flops: u64,
    gflops: f64,
    convention: &'static str,
}

fn flops(c: &Common) -> Result<()> {
    let r = resolve(c)?;
    let f = count_flops(&r.model, r.agents);
    let report = FlopReport {
        variant: r.model.variant,
        params: count_params(&r.model),
        agents: r.agents,
        flops: f,
        total_flops: f.total(),
        gflops: f.total() as f64 * 1e-9,
        convention:
            "multiply-accumulate = 2; elementwise, nonlinearity, reduction = 1 per element; batch norm = 2 per element; data movement = 0",
    };
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(out) = &c.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("flops.json"), &json)?;
    }
    println!("{json}");
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(Error::InvalidConfig("--noise must be a finite non-negative number".into()));
    }
    let motion = match a.motion {
        MotionArg::Cv => MotionModel::Cv,
        MotionArg::Ctrv => MotionModel::Ctrv,
        MotionArg::Ctra => MotionModel::Ctra,
    };
    let topology = match a.topology {
        TopologyArg::Straight => LaneTopology::Straight,
        TopologyArg::Curve => LaneTopology::Curve,
        TopologyArg::Fork => LaneTopology::Fork,
    };
    fs::create_dir_all(&a.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let width = a.n.max(1).to_string().len();
    for i in 0..a.n {
        let mut spec = SynthSpec::new(motion, topology, rng.next_u64());
        spec.n_agents = a.agents as usize;
        spec.noise_sigma = a.noise;
        let mut s = generate_synthetic(&spec);
        s.scenario_id = format!("{:0width$}-{}", i, s.scenario_id);
        fs::write(a.out.join(format!("{}.json", file_stem(&s.scenario_id))), scenario::to_native_json(&s)?)?;
    }
    Ok(())
}
