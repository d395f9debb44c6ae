//! Command-line entry point: dataset generation, training, evaluation and
//! inference. Exit codes: 0 on success, 1 on usage errors, 2 on runtime
//! failures.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::{Path, PathBuf};
use vodepth::dataset::{load_dataset, write_index, write_sample, Sample};
use vodepth::error::{Error, Result};
use vodepth::harness::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use vodepth::harness::config::{Precision, TrainConfig};
use vodepth::harness::evaluate::evaluate;
use vodepth::harness::infer::infer;
use vodepth::harness::metrics::MetricsReport;
use vodepth::harness::model::Model;
use vodepth::harness::{train, Adam};
use vodepth::scalar::Scalar;
use vodepth::synth::{generate_scene, SceneSpec, VoMode, DEFAULT_VO_DENSITY};

#[derive(Parser)]
#[command(
    name = "vodepth",
    version,
    about = "Stereo-supervised disparity estimation with visual-odometry priors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stereo dataset with simulated odometry priors.
    GenData(GenDataArgs),
    /// Train a model and write the final checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint against a dataset's ground truth.
    Eval(EvalArgs),
    /// Predict a disparity map for one dataset sample and write it to disk.
    Infer(InferArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Number of samples.
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Odometry simulation: "stereo" or "mono".
    #[arg(long, default_value = "stereo")]
    vo_mode: VoMode,
    /// Fraction of pixels carrying an odometry disparity.
    #[arg(long, default_value_t = DEFAULT_VO_DENSITY)]
    density: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (as produced by gen-data).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint file to write when training finishes.
    #[arg(long)]
    out: PathBuf,
    /// Optional config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Individual overrides, e.g. --set epochs=30 --set ablation=no-prior.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Resume from an existing checkpoint (config must match, epochs may
    /// extend).
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Blend with a mirrored second pass.
    #[arg(long)]
    post_process: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Index of the sample within the dataset manifest.
    #[arg(long, default_value_t = 0)]
    sample: usize,
    /// Output disparity file.
    #[arg(long)]
    out: PathBuf,
    /// Blend with a mirrored second pass.
    #[arg(long)]
    post_process: bool,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(2);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => {
            let config = build_config(args.config.as_deref(), &args.set)?;
            match config.precision {
                Precision::F32 => run_train::<f32>(config, &args),
                Precision::F64 => run_train::<f64>(config, &args),
            }
        }
        Command::Eval(args) => {
            let ck = load_checkpoint(&args.checkpoint)?;
            match ck.config.precision {
                Precision::F32 => run_eval::<f32>(&ck, &args),
                Precision::F64 => run_eval::<f64>(&ck, &args),
            }
        }
        Command::Infer(args) => {
            let ck = load_checkpoint(&args.checkpoint)?;
            match ck.config.precision {
                Precision::F32 => run_infer::<f32>(&ck, &args),
                Precision::F64 => run_infer::<f64>(&ck, &args),
            }
        }
    }
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    if args.count == 0 {
        return Err(Error::invalid("--count must be positive"));
    }
    fs::create_dir_all(&args.out).map_err(Error::io_at(&args.out))?;
    let spec = SceneSpec::with_density(args.height, args.width, args.vo_mode, args.density)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut names = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let scene = generate_scene(&spec, &mut rng)?;
        let name = format!("sample{i:04}.vod");
        write_sample(&args.out.join(&name), &scene, &spec.rig)?;
        names.push(name);
    }
    write_index(&args.out, &names)?;
    println!(
        "wrote {} samples ({}x{}, {} odometry) to {}",
        args.count,
        args.height,
        args.width,
        args.vo_mode,
        args.out.display()
    );
    Ok(())
}

fn build_config(file: Option<&Path>, sets: &[String]) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(Error::io_at(path))?;
        config.apply_text(&text)?;
    }
    for entry in sets {
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("--set expects KEY=VALUE, got {entry:?}")))?;
        config.set(key.trim(), value.trim())?;
    }
    config.validate()?;
    Ok(config)
}

/// Builds the model for a parsed checkpoint and loads its weights and
/// optimizer state.
fn restore_model<T: Scalar>(ck: &Checkpoint) -> Result<(Model<T>, Adam<T>)> {
    let mut model = Model::new(ck.config.seed, ck.config.levels)?;
    let mut adam = Adam::new(&model.store, ck.config.lr);
    ck.restore(&mut model.store, &mut adam)?;
    Ok((model, adam))
}

fn run_train<T: Scalar>(config: TrainConfig, args: &TrainArgs) -> Result<()> {
    let dataset: Vec<Sample<T>> = load_dataset(&args.data)?;
    let (mut model, mut adam, start_epoch) = match &args.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if !config.resumes(&ck.config) {
                return Err(Error::invalid(
                    "resume config differs from the checkpoint's (only epochs may change)",
                ));
            }
            let (model, adam) = restore_model::<T>(&ck)?;
            (model, adam, ck.completed_epochs)
        }
        None => {
            let model = Model::<T>::new(config.seed, config.levels)?;
            let adam = Adam::new(&model.store, config.lr);
            (model, adam, 0)
        }
    };
    if start_epoch >= config.epochs {
        return Err(Error::invalid(format!(
            "checkpoint already covers {start_epoch} epochs, target is {}",
            config.epochs
        )));
    }

    let log_every = config.log_every;
    train(&mut model, &mut adam, &config, &dataset, start_epoch, |log| {
        if (log.epoch + 1) % log_every == 0 || log.epoch + 1 == config.epochs {
            println!("{}", log.line());
        }
    })?;
    save_checkpoint(&args.out, &config, config.epochs, &model.store, &adam)?;
    println!("saved checkpoint to {}", args.out.display());
    Ok(())
}

fn run_eval<T: Scalar>(ck: &Checkpoint, args: &EvalArgs) -> Result<()> {
    let (model, _) = restore_model::<T>(ck)?;
    let dataset: Vec<Sample<T>> = load_dataset(&args.data)?;
    let report = evaluate(&model, &dataset, ck.config.ablation, args.post_process)?;
    println!("{}", MetricsReport::CSV_HEADER);
    println!("{}", report.csv_line());
    println!("samples: {}", report.samples);
    Ok(())
}

const DISPARITY_MAGIC: &[u8; 5] = b"VODD1";

fn write_disparity<T: Scalar>(path: &Path, map: &vodepth::Tensor<T>) -> Result<()> {
    let (_, _, h, w) = map.dims4()?;
    let mut buf = Vec::with_capacity(5 + 8 + map.data().len() * 4);
    buf.extend_from_slice(DISPARITY_MAGIC);
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    for v in map.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(Error::io_at(path))?;
    Ok(())
}

fn run_infer<T: Scalar>(ck: &Checkpoint, args: &InferArgs) -> Result<()> {
    let (model, _) = restore_model::<T>(ck)?;
    let dataset: Vec<Sample<T>> = load_dataset(&args.data)?;
    let sample = dataset.get(args.sample).ok_or_else(|| {
        Error::invalid(format!(
            "sample index {} out of range (dataset has {})",
            args.sample,
            dataset.len()
        ))
    })?;
    let out = infer(
        &model,
        &sample.left,
        &sample.sparse_left,
        ck.config.ablation,
        args.post_process,
    )?;
    write_disparity(&args.out, &out.disparity)?;
    let (h, w) = sample.dims()?;
    println!(
        "wrote {} ({h}x{w}, {} forward pass{})",
        args.out.display(),
        out.forward_passes,
        if out.forward_passes == 1 { "" } else { "es" }
    );
    Ok(())
}
