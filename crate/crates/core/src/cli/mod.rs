//! Command-line surface: argument types, run configs and command bodies.
//!
//! Every command that takes `--out` writes its outputs into that directory
//! together with `config.json`, the exact [`RunConfig`] that produced them.

pub mod profile;
pub mod verify;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate_dataset, read_gray, synthetic_digits, write_gray, DataGenConfig, Dataset, ProjectionPoint};
use crate::error::{Error, Result};
use crate::grid::Bandlimit;
use crate::network::{sample_equivariant_architecture, AdamConfig, ModelFile, Network, SamplerConfig};
use crate::training::{evaluate, train, EvalReport, TrainConfig};
use crate::transforms::{s2_synthesize, S2Spectrum};

pub use profile::{profile_network, LayerTiming, ProfileReport};
pub use verify::{reference_architecture, run_verify, CheckOutcome, VerifyLevel, VerifyReport};

pub const CONFIG_FILE: &str = "config.json";
pub const DATASET_FILE: &str = "dataset.sphd";
pub const MODEL_FILE: &str = "model.sphm";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SOURCES_FILE: &str = "sources.gray";

#[derive(Debug, Parser)]
#[command(name = "s2seg", version, about = "Rotation-equivariant segmentation on the sphere")]
pub struct Cli {
    /// Worker threads; 1 gives bitwise-reproducible runs. Defaults to all cores.
    #[arg(long, global = true, env = "S2SEG_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render synthetic 28×28 digit sources into a GRAY container.
    GenSources(GenSourcesArgs),
    /// Generate a spherical segmentation dataset.
    GenData(GenDataArgs),
    /// Sample an equivariant architecture in a parameter range and initialise it.
    GenModel(GenModelArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Evaluate a model on a dataset.
    Eval(EvalArgs),
    /// Run the property suites of every module.
    Verify(VerifyArgs),
    /// Per-layer latency profile of a model.
    Profile(ProfileArgs),
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GenSourcesArgs {
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, env = "S2SEG_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "S2SEG_OUT")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GenDataArgs {
    /// GRAY source container; synthetic digits are rendered when omitted.
    #[arg(long)]
    pub sources: Option<PathBuf>,
    /// Number of synthetic sources when `--sources` is omitted.
    #[arg(long, default_value_t = 1000)]
    pub synthetic_sources: usize,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, env = "S2SEG_BANDLIMIT", default_value_t = 50)]
    pub bandlimit: usize,
    #[arg(long, default_value_t = 1)]
    pub items: usize,
    #[arg(long, default_value_t = 150)]
    pub threshold: u8,
    #[arg(long, default_value = "pole")]
    pub projection: String,
    /// Store the canvases unrotated.
    #[arg(long)]
    pub unrotated: bool,
    #[arg(long, default_value_t = 11)]
    pub num_classes: usize,
    #[arg(long, env = "S2SEG_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "S2SEG_OUT")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GenModelArgs {
    #[arg(long, default_value_t = 150_000)]
    pub param_lo: usize,
    #[arg(long, default_value_t = 250_000)]
    pub param_hi: usize,
    #[arg(long, env = "S2SEG_BANDLIMIT", default_value_t = 50)]
    pub bandlimit: usize,
    #[arg(long, default_value_t = 1)]
    pub in_channels: usize,
    #[arg(long, default_value_t = 11)]
    pub out_channels: usize,
    /// Use a hand-written model spec instead of sampling one.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, env = "S2SEG_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "S2SEG_OUT")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Validation set for early stopping on non-background mIoU.
    #[arg(long)]
    pub val_dataset: Option<PathBuf>,
    #[arg(long, env = "S2SEG_EPOCHS", default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, env = "S2SEG_BATCH_SIZE", default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, env = "S2SEG_LR", default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, env = "S2SEG_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "S2SEG_OUT")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, env = "S2SEG_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value = "quick")]
    pub level: VerifyLevel,
    #[arg(long, env = "S2SEG_TOLERANCE_SCALE", default_value_t = 1.0)]
    pub tolerance_scale: f64,
    #[arg(long, env = "S2SEG_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "S2SEG_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ProfileArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 30)]
    pub iterations: usize,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, env = "S2SEG_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "S2SEG_OUT")]
    pub out: Option<PathBuf>,
}

/// The configuration of one run, stored as `config.json` next to its outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    GenSources(GenSourcesArgs),
    GenData { args: GenDataArgs, data: DataGenConfig },
    GenModel(GenModelArgs),
    Train { args: TrainArgs, train: TrainConfig },
    Eval(EvalArgs),
    Verify(VerifyArgs),
    Profile { args: ProfileArgs, threads: usize },
}

impl RunConfig {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(dir.join(CONFIG_FILE), text + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(CONFIG_FILE))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))
    }
}

/// What a command reports back to the binary.
#[derive(Clone, Debug)]
pub enum Outcome {
    Done(String),
    /// The command ran but a check failed; maps to exit code 2.
    Failed(String),
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::UndefinedMetric(_) => 2,
        Error::Io(_) | Error::Format(_) => 3,
        _ => 4,
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Format(e.to_string()))
}

pub fn cmd_gen_sources(args: &GenSourcesArgs) -> Result<Outcome> {
    RunConfig::GenSources(args.clone()).save(&args.out)?;
    let path = args.out.join(SOURCES_FILE);
    write_gray(&path, &synthetic_digits(args.count, args.seed))?;
    Ok(Outcome::Done(format!("wrote {} sources to {}", args.count, path.display())))
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<Outcome> {
    let data = DataGenConfig {
        bandlimit: args.bandlimit,
        items_per_sphere: args.items,
        threshold: args.threshold,
        projection_point: args.projection.parse::<ProjectionPoint>()?,
        rotated: !args.unrotated,
        seed: args.seed,
        num_classes: args.num_classes,
        ..DataGenConfig::default()
    };
    data.validate()?;
    let sources = match &args.sources {
        Some(p) => read_gray(p)?,
        None => synthetic_digits(args.synthetic_sources, args.seed),
    };
    RunConfig::GenData { args: args.clone(), data: data.clone() }.save(&args.out)?;
    let ds = generate_dataset(&data, &sources, args.count)?;
    let path = args.out.join(DATASET_FILE);
    ds.save(&path)?;
    Ok(Outcome::Done(format!("wrote {} records to {}", args.count, path.display())))
}

pub fn cmd_gen_model(args: &GenModelArgs) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let spec = match &args.spec {
        Some(p) => crate::network::ModelSpec::from_canonical_text(&fs::read_to_string(p)?)?,
        None => {
            let cfg = SamplerConfig::new(args.param_lo, args.param_hi, args.bandlimit, args.in_channels, args.out_channels);
            sample_equivariant_architecture(&cfg, &mut rng)?
        }
    };
    let net = Network::new(spec.clone())?;
    let params = net.init_params(&mut rng);
    RunConfig::GenModel(args.clone()).save(&args.out)?;
    let path = args.out.join(MODEL_FILE);
    ModelFile { spec: spec.clone(), params, adam: None }.save(&path)?;
    Ok(Outcome::Done(format!("{spec}\n{} parameters, wrote {}", net.param_count(), path.display())))
}

pub fn cmd_train(args: &TrainArgs) -> Result<Outcome> {
    let model = ModelFile::load(&args.model)?;
    let train_set = Dataset::load(&args.dataset)?;
    let val_set = args.val_dataset.as_deref().map(Dataset::load).transpose()?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        adam: AdamConfig { lr: args.lr, ..AdamConfig::default() },
        patience: args.patience,
        seed: args.seed,
    };
    RunConfig::Train { args: args.clone(), train: cfg.clone() }.save(&args.out)?;
    let net = Network::new(model.spec.clone())?;
    let mut log = fs::File::create(args.out.join(METRICS_FILE))?;
    let mut io_err = None;
    let outcome = train(
        &net,
        model.params,
        model.adam,
        &train_set.records,
        val_set.as_ref().map(|d| d.records.as_slice()),
        &cfg,
        |entry| {
            let line = to_json(entry).map(|s| writeln!(log, "{s}"));
            if let Ok(Err(e)) = line {
                io_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let path = args.out.join(MODEL_FILE);
    ModelFile { spec: model.spec, params: outcome.params, adam: Some(outcome.adam) }.save(&path)?;
    let last = outcome.log.last().map(|e| e.loss).unwrap_or(outcome.initial_loss);
    Ok(Outcome::Done(format!(
        "trained {} epochs, loss {:.4} -> {:.4}, wrote {}",
        outcome.log.len(),
        outcome.initial_loss,
        last,
        path.display()
    )))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(Outcome, EvalReport)> {
    let model = ModelFile::load(&args.model)?;
    let ds = Dataset::load(&args.dataset)?;
    let net = Network::new(model.spec)?;
    let report = evaluate(&net, &model.params, &ds.records)?;
    let json = to_json(&report)?;
    if let Some(dir) = &args.out {
        RunConfig::Eval(args.clone()).save(dir)?;
        fs::write(dir.join("metrics.json"), format!("{json}\n"))?;
    }
    let outcome = match report.miou {
        Some(_) => Outcome::Done(json),
        None => Outcome::Failed(format!("{json}\nnon-background mIoU is undefined: no foreground class present")),
    };
    Ok((outcome, report))
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<(Outcome, VerifyReport)> {
    let report = run_verify(args.level, args.tolerance_scale, args.seed)?;
    if let Some(dir) = &args.out {
        RunConfig::Verify(args.clone()).save(dir)?;
        fs::write(dir.join("verify.json"), to_json(&report)? + "\n")?;
    }
    let text = report.to_string();
    let outcome = if report.passed() { Outcome::Done(text) } else { Outcome::Failed(text) };
    Ok((outcome, report))
}

pub fn cmd_profile(args: &ProfileArgs) -> Result<(Outcome, ProfileReport)> {
    let model = ModelFile::load(&args.model)?;
    let net = Network::new(model.spec)?;
    let l = Bandlimit::new(net.spec().input_bandlimit())?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let inputs = (0..args.batch)
        .map(|_| s2_synthesize(&S2Spectrum::random_real(l, net.spec().input_channels(), &mut rng)))
        .collect::<Result<Vec<_>>>()?;
    let report = profile_network(&net, &model.params, &inputs, args.warmup, args.iterations)?;
    if let Some(dir) = &args.out {
        RunConfig::Profile { args: args.clone(), threads: report.threads }.save(dir)?;
        fs::write(dir.join("profile.json"), to_json(&report)? + "\n")?;
    }
    Ok((Outcome::Done(report.to_string()), report))
}

/// Dispatches a parsed command line. The thread pool must be configured by the caller.
pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::GenSources(a) => cmd_gen_sources(a),
        Command::GenData(a) => cmd_gen_data(a),
        Command::GenModel(a) => cmd_gen_model(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a).map(|r| r.0),
        Command::Verify(a) => cmd_verify(a).map(|r| r.0),
        Command::Profile(a) => cmd_profile(a).map(|r| r.0),
    }
}
