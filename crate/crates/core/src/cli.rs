//! The `attn-distill` command line: `distill`, `eval` and `export`.
//!
//! Exit codes: 0 on success, 2 for malformed or invalid flags, 1 for
//! failures while running.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::augment::AugmentSpec;
use crate::data::ToySpec;
use crate::distill::{init_synthetic, run_from, DistillConfig, InitStrategy, ProgressSink, StepRecord};
use crate::error::{Error, Result};
use crate::eval::{evaluate_synthetic, EvalConfig};
use crate::io::{image_grid, DatasetFormat, DatasetIdentity, MetricsWriter, RunManifest, SyntheticSetFile};

#[derive(Parser, Debug)]
#[command(name = "attn-distill", version, about = "Learn and evaluate distilled image sets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Learn a synthetic set from real data.
    Distill(DistillArgs),
    /// Train fresh classifiers on a synthetic set and report test accuracy.
    Eval(EvalArgs),
    /// Render a synthetic set as a PPM grid.
    Export(ExportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Dataset file or directory, or `toy` for the built-in generator.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Defaults to `toy` when the dataset is `toy`, and `cifar10` otherwise.
    #[arg(long)]
    pub format: Option<DatasetFormat>,
    /// Crop or pad MNIST digits to this side length.
    #[arg(long)]
    pub resize: Option<usize>,
    #[arg(long, default_value_t = ToySpec::default().num_classes)]
    pub toy_classes: usize,
    #[arg(long, default_value_t = ToySpec::default().train_per_class)]
    pub toy_train: usize,
    #[arg(long, default_value_t = ToySpec::default().test_per_class)]
    pub toy_test: usize,
    #[arg(long, default_value_t = ToySpec::default().channels)]
    pub toy_channels: usize,
    #[arg(long, default_value_t = ToySpec::default().image_size)]
    pub toy_size: usize,
    #[arg(long, default_value_t = ToySpec::default().noise_std)]
    pub toy_noise: f64,
    #[arg(long, default_value_t = ToySpec::default().seed)]
    pub toy_seed: u64,
}

impl DataArgs {
    fn identity(&self) -> Result<Option<DatasetIdentity>> {
        let Some(path) = &self.dataset else {
            return Ok(None);
        };
        let format = self.format.unwrap_or(if path == "toy" { DatasetFormat::Toy } else { DatasetFormat::Cifar10 });
        if format == DatasetFormat::Toy {
            return Ok(Some(DatasetIdentity::toy(ToySpec {
                num_classes: self.toy_classes,
                train_per_class: self.toy_train,
                test_per_class: self.toy_test,
                channels: self.toy_channels,
                image_size: self.toy_size,
                noise_std: self.toy_noise,
                seed: self.toy_seed,
            })));
        }
        Ok(Some(DatasetIdentity::file(format, path.as_ref(), self.resize)?))
    }
}

fn parse_layers(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>().map_err(|e| format!("bad layer `{t}`: {e}")))
        .collect()
}

#[derive(Args, Debug, Clone)]
pub struct DistillArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 10)]
    pub ipc: usize,
    #[arg(long = "iters", default_value_t = crate::distill::DEFAULT_ITERATIONS)]
    pub iterations: usize,
    /// Image learning rate; 1.0 up to 50 images per class, 10.0 above.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = crate::distill::DEFAULT_IMAGE_MOMENTUM)]
    pub momentum: f64,
    /// Task balance; 0.01 up to 32px, 0.02 above.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = crate::losses::DEFAULT_POWER)]
    pub p: f64,
    #[arg(long, default_value = "random")]
    pub init: InitStrategy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Blocks used for attention matching, e.g. `1,2`.
    #[arg(long, value_parser = parse_layers)]
    pub layers: Option<Vec<usize>>,
    #[arg(long)]
    pub no_mmd: bool,
    #[arg(long)]
    pub no_sam: bool,
    /// `none` or a comma list of `flip,crop,cutout`.
    #[arg(long, value_parser = AugmentSpec::parse_list, default_value = "flip,crop,cutout")]
    pub aug: AugmentSpec,
    #[arg(long, default_value_t = crate::distill::DEFAULT_REAL_BATCH)]
    pub real_batch: usize,
    #[arg(long, default_value_t = crate::encoder::DEFAULT_WIDTH)]
    pub width: usize,
    #[arg(long)]
    pub depth: Option<usize>,
    /// Record the run's wall-clock duration in the manifest.
    #[arg(long)]
    pub record_time: bool,
    /// Print losses every N iterations (0 = never).
    #[arg(long, default_value_t = 0)]
    pub log_every: usize,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub syn: PathBuf,
    /// Defaults to the dataset recorded in the synthetic set's manifest.
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = crate::eval::DEFAULT_NUM_MODELS)]
    pub models: usize,
    #[arg(long, default_value_t = crate::eval::DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = crate::eval::DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    #[arg(long, value_parser = AugmentSpec::parse_list, default_value = "flip,crop,cutout")]
    pub aug: AugmentSpec,
    /// Defaults to the architecture the set was distilled with.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ExportArgs {
    #[arg(long)]
    pub syn: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Black pixels between tiles.
    #[arg(long, default_value_t = 0)]
    pub gutter: usize,
}

/// Failure class, mapped to the exit code.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Distill(a) => cmd_distill(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Export(a) => cmd_export(&a),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Resolves the distillation flags into a validated configuration.
pub fn distill_config(a: &DistillArgs, image_size: usize) -> Result<DistillConfig> {
    let mut cfg = DistillConfig::for_dataset(a.ipc, image_size);
    cfg.iterations = a.iterations;
    if let Some(lr) = a.lr {
        cfg.lr_images = lr;
    }
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
    cfg.image_momentum = a.momentum;
    cfg.p = a.p;
    cfg.init = a.init;
    cfg.seed = a.seed;
    cfg.layers = a.layers.clone();
    cfg.use_sam = !a.no_sam;
    cfg.use_mmd = !a.no_mmd;
    cfg.augment = a.aug.clone();
    cfg.real_batch_per_class = a.real_batch;
    cfg.width = a.width;
    cfg.depth = a.depth;
    cfg.validate()?;
    Ok(cfg)
}

struct Progress {
    metrics: Option<MetricsWriter<std::fs::File>>,
    every: usize,
    last: Option<StepRecord>,
}

impl ProgressSink for Progress {
    fn record(&mut self, r: &StepRecord) -> Result<()> {
        if let Some(m) = self.metrics.as_mut() {
            m.record(r)?;
        }
        if self.every > 0 && r.iteration % self.every == 0 {
            let b = &r.breakdown;
            eprintln!("iter {:>6}  l_sam {:.6e}  l_mmd {:.6e}  total {:.6e}", r.iteration, b.l_sam, b.l_mmd, b.total);
        }
        self.last = Some(r.clone());
        Ok(())
    }
}

fn cmd_distill(a: &DistillArgs) -> std::result::Result<(), Failure> {
    let identity = a
        .data
        .identity()?
        .ok_or_else(|| Failure::Usage("distill requires --dataset".into()))?;
    if let Some(layers) = &a.layers {
        if layers.is_empty() && !a.no_sam {
            return Err(Failure::Usage("--layers is empty; pass --no-sam to disable attention matching".into()));
        }
    }
    let started = Instant::now();
    let data = identity.load()?;
    let cfg = distill_config(a, data.train.image_size()).map_err(|e| Failure::Usage(e.to_string()))?;
    let encoder = cfg.encoder_config(data.train.channels(), data.train.image_size(), data.train.num_classes);
    encoder.validate().map_err(|e| Failure::Usage(e.to_string()))?;

    let init = init_synthetic(&data.train, cfg.ipc, cfg.init, cfg.seed)?;
    let mut sink = Progress {
        metrics: a.metrics.as_ref().map(MetricsWriter::create).transpose()?,
        every: a.log_every,
        last: None,
    };
    let set = run_from(&cfg, &data.train, init, &mut sink)?;
    if let Some(m) = sink.metrics.take() {
        m.finish()?;
    }

    let mut manifest = RunManifest::new(cfg.seed, identity, data.train.stats.clone());
    manifest.encoder = Some(encoder);
    manifest.distill = Some(cfg.clone());
    if a.record_time {
        manifest.wall_clock_secs = Some(started.elapsed().as_secs_f64());
    }
    SyntheticSetFile::new(set, manifest).write(&a.out)?;
    match sink.last {
        Some(r) => println!(
            "wrote {} ({} classes x {} ipc) after {} iterations, last total loss {:.6e}",
            a.out.display(),
            data.train.num_classes,
            cfg.ipc,
            cfg.iterations,
            r.breakdown.total
        ),
        None => println!("wrote {} (initialisation only)", a.out.display()),
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> std::result::Result<(), Failure> {
    let file = SyntheticSetFile::read(&a.syn)?;
    let identity = match a.data.identity()? {
        Some(id) => id,
        None => {
            file.manifest.dataset.verify()?;
            file.manifest.dataset.clone()
        }
    };
    let data = identity.load()?;
    let test = data
        .test
        .ok_or_else(|| Error::Config(format!("dataset {} has no test split", identity.path)))?;
    let shape = file.set.images.shape();
    if test.images.shape()[1..] != shape[1..] || test.num_classes != file.set.num_classes {
        return Err(Error::shape(
            "eval",
            format!(
                "synthetic set {:?} with {} classes vs test set {:?} with {}",
                shape,
                file.set.num_classes,
                test.images.shape(),
                test.num_classes
            ),
        )
        .into());
    }

    let distilled = file.manifest.encoder;
    let cfg = EvalConfig {
        num_models: a.models,
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        augment: a.aug.clone(),
        width: a.width.or(distilled.map(|e| e.width)).unwrap_or(crate::encoder::DEFAULT_WIDTH),
        depth: a.depth.or(distilled.map(|e| e.depth)),
        seed: a.seed,
        ..EvalConfig::default()
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let report = evaluate_synthetic(&file.set, &test, &cfg)?;
    println!("{} % over {} models", report.summary(), report.accuracies.len());
    if let Some(path) = &a.report {
        std::fs::write(path, serde_json::to_string_pretty(&report).map_err(Error::from)?).map_err(Error::from)?;
    }
    Ok(())
}

fn cmd_export(a: &ExportArgs) -> std::result::Result<(), Failure> {
    let file = SyntheticSetFile::read(&a.syn)?;
    let ppm = image_grid(&file.set, &file.manifest.stats, a.gutter)?;
    ppm.write(&a.out)?;
    println!("wrote {} ({}x{})", a.out.display(), ppm.width, ppm.height);
    Ok(())
}
