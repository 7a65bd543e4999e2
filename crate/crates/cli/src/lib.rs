//! The `basisnet` command line: train, compress, finetune, eval, report, bench.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use basisnet::accounting::{bench_inference, compare, FlopsConvention, MetricsReport};
use basisnet::compress::{apply_plan, plan_by_accuracy, plan_by_energy, CompressionPlan};
use basisnet::data::Dataset;
use basisnet::io::{load_dataset, load_json, load_model_file, save_json, save_model_file, DatasetSource, ModelFile};
use basisnet::nn::{evaluate, presets, train, EpochStats, Layer, Network, TrainConfig, TrainReport};
use basisnet::sft::{spectral_finetune, OrthoConfig};
use basisnet::spectral::orthogonality_residual;

#[derive(Parser, Debug)]
#[command(name = "basisnet", version, about = "Compress CNNs by replacing conv layers with eigen basis filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a baseline network from scratch
    Train(TrainArgs),
    /// Plan ranks and write the compressed model
    Compress(CompressArgs),
    /// Spectral fine tuning of a compressed model
    Finetune(FinetuneArgs),
    /// Classification accuracy of a model
    Eval(EvalArgs),
    /// Compare an original and a compressed model
    Report(ReportArgs),
    /// Time forward passes
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct Optim {
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long = "lr", default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Optim {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training data, e.g. mnist:DIR, idx:IMAGES,LABELS, cifar10:FILE, synthetic:N
    #[arg(long)]
    data: String,
    /// Use only the first N training samples
    #[arg(long)]
    limit: Option<usize>,
    /// Held-out data evaluated after training
    #[arg(long)]
    test: Option<String>,
    #[arg(long)]
    test_limit: Option<usize>,
    /// One of mnist-reference, tiny, cifar-reference
    #[arg(long, default_value = "mnist-reference")]
    arch: String,
    /// Multiplier on the He-normal std of conv filters
    #[arg(long, default_value_t = 1.0)]
    init_scale: f64,
    #[command(flatten)]
    optim: Optim,
    #[arg(long)]
    out: PathBuf,
    /// Write the training log as JSON
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Energy,
    Accuracy,
}

#[derive(Args, Debug)]
struct CompressArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Energy)]
    mode: Mode,
    /// Energy ratio to retain per layer (energy mode)
    #[arg(long, default_value_t = 0.95)]
    t_min: f64,
    /// Largest tolerated per-layer accuracy drop (accuracy mode)
    #[arg(long, default_value_t = 0.03)]
    max_drop: f64,
    /// Calibration data (accuracy mode)
    #[arg(long)]
    calib: Option<String>,
    #[arg(long)]
    limit: Option<usize>,
    /// Accepted for uniformity; planning is deterministic
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the plan (defaults to OUT with a .plan.json suffix)
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: String,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    ortho_weight: f64,
    #[command(flatten)]
    optim: Optim,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: String,
    #[arg(long)]
    limit: Option<usize>,
    /// Print a JSON object instead of text
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    compressed: PathBuf,
    /// Evaluate both models on this data and include accuracies
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    limit: Option<usize>,
    /// mac (1 FLOP = 1 MAC) or 2xmac
    #[arg(long, default_value = "mac")]
    flops_convention: String,
    /// Also write the report as JSON
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 20)]
    repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

/// A bad flag value or combination: reported with exit code 1.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code: 0 on success, 1 on usage errors, 2 on data or
/// model errors.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match e.downcast_ref::<basisnet::Error>() {
        Some(basisnet::Error::InvalidArgument(_)) => 1,
        _ => 2,
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Compress(a) => cmd_compress(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn source(spec: &str) -> anyhow::Result<DatasetSource> {
    spec.parse::<DatasetSource>().map_err(|e| usage(e.to_string()))
}

fn load_model(path: &Path) -> anyhow::Result<ModelFile> {
    Ok(load_model_file(path)?)
}

/// Loads data normalized the way `model` expects (fitted if it records nothing).
fn load_for(model: &ModelFile, spec: &str, limit: Option<usize>) -> anyhow::Result<Dataset> {
    let (data, _) = load_dataset(&source(spec)?, limit, model.normalization.as_ref())
        .with_context(|| format!("loading dataset {spec}"))?;
    check_shape(&model.network, &data, spec)?;
    Ok(data)
}

fn check_shape(network: &Network, data: &Dataset, spec: &str) -> anyhow::Result<()> {
    if data.sample_shape() != Some(network.input_shape()) {
        bail!(
            "dataset {spec} has samples of shape {:?}, the model expects {:?}",
            data.sample_shape().unwrap_or(&[]),
            network.input_shape()
        );
    }
    Ok(())
}

fn print_epochs(epochs: &[EpochStats]) {
    let n = epochs.len();
    for s in epochs {
        let mut line = format!(
            "epoch {}/{n}  loss {:.4}  task {:.4}  train acc {:.2}%",
            s.epoch + 1,
            s.loss,
            s.task_loss,
            100.0 * s.accuracy
        );
        if let Some(r) = s.ortho_residual {
            line.push_str(&format!("  ortho residual {r:.3e}"));
        }
        println!("{line}");
    }
}

#[derive(Serialize)]
struct TrainLog<'a> {
    command: &'static str,
    config: TrainConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    ortho: Option<OrthoConfig>,
    report: &'a TrainReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_accuracy: Option<f64>,
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let src = source(&a.data)?;
    if !(a.init_scale.is_finite() && a.init_scale > 0.0) {
        return Err(usage(format!("--init-scale {} must be positive", a.init_scale)));
    }
    let config = a.optim.config();
    config.validate()?;
    let (train_set, norm) =
        load_dataset::<f64>(&src, a.limit, None).with_context(|| format!("loading dataset {}", a.data))?;
    let (input_shape, specs) = presets::by_name(&a.arch, train_set.num_classes()).ok_or_else(|| {
        usage(format!("unknown --arch {:?} (expected one of {})", a.arch, presets::NAMES.join(", ")))
    })?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(a.optim.seed);
    let mut network = Network::init(input_shape, &specs, a.init_scale, &mut rng)?;
    check_shape(&network, &train_set, &a.data)?;

    println!(
        "training {} on {} samples, {} parameters",
        a.arch,
        train_set.len(),
        network.param_count()
    );
    let report = train(&mut network, &train_set, &config)?;
    print_epochs(&report.epochs);
    println!("final train accuracy {:.2}%", 100.0 * report.final_train_accuracy);

    let model = ModelFile {
        network,
        normalization: Some(norm),
    };
    let test_accuracy = match &a.test {
        Some(spec) => {
            let test = load_for(&model, spec, a.test_limit)?;
            let acc = evaluate(&model.network, &test)?;
            println!("test accuracy {:.2}% on {} samples", 100.0 * acc, test.len());
            Some(acc)
        }
        None => None,
    };
    save_model_file(&model, &a.out)?;
    println!("wrote {}", a.out.display());
    if let Some(log) = &a.log {
        save_json(
            &TrainLog {
                command: "train",
                config,
                ortho: None,
                report: &report,
                test_accuracy,
            },
            log,
        )?;
    }
    Ok(())
}

fn default_plan_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".plan.json");
    out.with_file_name(name)
}

fn cmd_compress(a: CompressArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let plan = match a.mode {
        Mode::Energy => plan_by_energy(&model.network, a.t_min)?,
        Mode::Accuracy => {
            let spec = a
                .calib
                .as_deref()
                .ok_or_else(|| usage("--mode accuracy needs --calib DATA"))?;
            let calib = load_for(&model, spec, a.limit)?;
            plan_by_accuracy(&model.network, &calib, a.max_drop)?
        }
    };
    print_plan(&plan);
    let compressed = apply_plan(&model.network, &plan)?;
    let plan_path = a.plan.unwrap_or_else(|| default_plan_path(&a.out));
    save_json(&plan, &plan_path)?;
    save_model_file(
        &ModelFile {
            network: compressed,
            normalization: model.normalization,
        },
        &a.out,
    )?;
    println!("wrote {} and {}", a.out.display(), plan_path.display());
    Ok(())
}

fn print_plan(plan: &CompressionPlan) {
    println!("{:>5}  {:>4}  {:>4}  {:>2}  {:>4}  {:>8}  {:>10}  action", "layer", "P", "L", "D", "Q", "energy", "params");
    for e in &plan.entries {
        let mut action = if e.skip { "skip".to_string() } else { "basis_conv".to_string() };
        if let (Some(b), Some(acc)) = (e.baseline_accuracy, e.accuracy) {
            action.push_str(&format!("  calib acc {:.2}% (baseline {:.2}%)", 100.0 * acc, 100.0 * b));
        }
        println!(
            "{:>5}  {:>4}  {:>4}  {:>2}  {:>4}  {:>8.5}  {:>10}  {action}",
            e.layer_index,
            e.filters,
            e.channels,
            e.kernel,
            e.chosen_q,
            e.energy_t,
            format!("{}->{}", e.params_before, e.params_after)
        );
    }
}

fn cmd_finetune(a: FinetuneArgs) -> anyhow::Result<()> {
    let ortho = OrthoConfig {
        alpha: a.alpha,
        weight: a.ortho_weight,
    };
    ortho.validate()?;
    let config = a.optim.config();
    config.validate()?;
    let mut model = load_model(&a.model)?;
    let data = load_for(&model, &a.data, a.limit)?;
    let report = spectral_finetune(&mut model.network, &data, &config, &ortho)?;
    print_epochs(&report.epochs);
    for (i, r) in residuals(&model.network) {
        println!("layer {i}: orthogonality residual {r:.3e}");
    }
    save_model_file(&model, &a.out)?;
    println!("wrote {}", a.out.display());
    if let Some(log) = &a.log {
        save_json(
            &TrainLog {
                command: "finetune",
                config,
                ortho: Some(ortho),
                report: &report,
                test_accuracy: None,
            },
            log,
        )?;
    }
    Ok(())
}

fn residuals(network: &Network) -> Vec<(usize, f64)> {
    network
        .layers()
        .iter()
        .enumerate()
        .filter_map(|(i, l)| match l {
            Layer::BasisConv(bc) => Some((i, orthogonality_residual(&bc.basis))),
            _ => None,
        })
        .collect()
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let data = load_for(&model, &a.data, a.limit)?;
    let acc = evaluate(&model.network, &data)?;
    if a.json {
        println!("{}", serde_json::json!({ "accuracy": acc, "samples": data.len() }));
    } else {
        println!("accuracy {:.2}% on {} samples", 100.0 * acc, data.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct LayerResidual {
    index: usize,
    residual: f64,
}

/// The report JSON: the metrics plus per-layer orthogonality residuals.
#[derive(Serialize)]
struct ReportDocument {
    #[serde(flatten)]
    metrics: MetricsReport,
    ortho_residuals: Vec<LayerResidual>,
}

fn cmd_report(a: ReportArgs) -> anyhow::Result<()> {
    let convention: FlopsConvention = a.flops_convention.parse()?;
    let original = load_model(&a.original)?;
    let compressed = load_model(&a.compressed)?;
    let accuracies = match &a.data {
        Some(spec) => {
            let data = load_for(&original, spec, a.limit)?;
            Some((evaluate(&original.network, &data)?, evaluate(&compressed.network, &data)?))
        }
        None => None,
    };
    let metrics = compare(
        &original.network,
        &compressed.network,
        original.network.input_shape(),
        accuracies,
        convention,
    )?;
    print!("{}", metrics.to_table());
    let res = residuals(&compressed.network);
    for (i, r) in &res {
        println!("layer {i}: orthogonality residual {r:.3e}");
    }
    if let Some(path) = &a.json {
        save_json(
            &ReportDocument {
                metrics,
                ortho_residuals: res.into_iter().map(|(index, residual)| LayerResidual { index, residual }).collect(),
            },
            path,
        )?;
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let stats = bench_inference(&model.network, a.repetitions, a.seed)?;
    if a.json {
        println!("{}", serde_json::to_string(&stats)?);
    } else {
        println!(
            "{} repetitions: mean {:.3} ms, p50 {:.3} ms, p95 {:.3} ms",
            stats.repetitions, stats.mean_ms, stats.p50_ms, stats.p95_ms
        );
    }
    Ok(())
}

/// Loads a plan written by `compress`.
pub fn read_plan(path: &Path) -> anyhow::Result<CompressionPlan> {
    load_json(path).with_context(|| format!("reading plan {}", path.display()))
}
