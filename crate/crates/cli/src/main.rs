//! Command-line front end: cost reports, the design ladder, training on
//! synthetic tasks, redundancy profiles and greedy decoding.

mod config;

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use squeezeformer::analysis::{ablation_ladder, count_flops, random_features, redundancy_profile};
use squeezeformer::io::{load_features, save_features};
use squeezeformer::model::{count_params, ctc_greedy_decode, load_checkpoint, save_checkpoint, EncoderModel, PRESET_NAMES};
use squeezeformer::train::{gen_synthetic, train, TrainLog};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<squeezeformer::Error> for CliError {
    fn from(e: squeezeformer::Error) -> Self {
        match e {
            squeezeformer::Error::Config { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "squeezeformer", version, about = "Squeezeformer and Conformer CTC encoders: costs, training and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArgs {
    /// Named preset; overrides the preset given in --config.
    #[arg(long)]
    preset: Option<String>,
    /// TOML config file with optional [model], [train] and [task] sections.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<config::Resolved, CliError> {
        config::resolve(self.preset.as_deref(), self.config.as_deref())
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Tsv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum LadderSize {
    S,
    M,
    L,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskKind {
    /// Emit the label sequence encoded in the input features.
    Copy,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be positive, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Analytic FLOPs of one forward pass.
    Flops {
        #[command(flatten)]
        model: ModelArgs,
        /// Input duration in seconds.
        #[arg(long, default_value_t = 30.0, value_parser = positive)]
        seconds: f64,
        /// Feature hop in milliseconds.
        #[arg(long, default_value_t = 10.0, value_parser = positive)]
        frame_ms: f64,
        /// List every module in text output.
        #[arg(long)]
        breakdown: bool,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// Write here instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Parameters and GFLOPs along the Conformer-to-Squeezeformer design path.
    Ladder {
        #[arg(long, value_enum, default_value = "m")]
        size: LadderSize,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Learnable parameter count.
    Params {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        breakdown: bool,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Train on a synthetic task.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value = "copy")]
        task: TaskKind,
        /// Overrides train.steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Seeds initialization and the training stream; overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Line-delimited JSON record per step.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Columns: step, learning rate, loss.
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Columns: step, token accuracy.
        #[arg(long)]
        accuracy_curve: Option<PathBuf>,
        /// Final model checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory for periodic checkpoints; overrides train.checkpoint_dir.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Overrides train.checkpoint_every.
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Cosine similarity of neighbouring embeddings after every block.
    Profile {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of random inputs, used when no --features are given.
        #[arg(long, default_value_t = 10)]
        inputs: usize,
        /// Frames per random input.
        #[arg(long, default_value_t = 200)]
        frames: usize,
        /// Feature files to profile instead of random inputs.
        #[arg(long, num_args = 1..)]
        features: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        distances: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Greedy CTC decoding of one feature file; prints token ids.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Write one synthetic example as a feature file and print its labels.
    Synth {
        #[command(flatten)]
        model: ModelArgs,
        /// Overrides task.seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        features: PathBuf,
    },
    /// Print the fully resolved config as TOML.
    Config {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// List preset names.
    Presets,
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), CliError> {
    match output {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn json(value: &impl serde::Serialize) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn cmd_flops(model: &ModelArgs, seconds: f64, frame_ms: f64, breakdown: bool, format: Format) -> Result<String, CliError> {
    let r = model.resolve()?;
    let report = count_flops(&r.model, seconds, frame_ms)?;
    Ok(match format {
        Format::Json => report.to_json()? + "\n",
        Format::Tsv => report.to_tsv(),
        Format::Text => {
            let fr = report.frames;
            let mut s = String::new();
            if breakdown {
                let width = report.entries.iter().map(|e| e.path.len()).max().unwrap_or(0);
                for e in &report.entries {
                    writeln!(s, "{:width$}  {:>14} MACs  {:>10.4} GFLOPs", e.path, e.macs, e.flops as f64 / 1e9).unwrap();
                }
            }
            writeln!(s, "preset {}: {seconds} s at {frame_ms} ms = {} frames, {} after subsampling, {} inside the U-Net", r.preset, fr.input, fr.encoder, fr.downsampled).unwrap();
            writeln!(s, "total {:.2} GFLOPs ({} MACs)", report.gflops(), report.total_macs).unwrap();
            s
        }
    })
}

fn cmd_ladder(size: LadderSize, format: Format) -> Result<String, CliError> {
    let size = match size {
        LadderSize::S => "s",
        LadderSize::M => "m",
        LadderSize::L => "l",
    };
    let rows = ablation_ladder(size)?;
    Ok(match format {
        Format::Json => json(&rows)?,
        Format::Tsv => {
            let mut s = String::from("change\tparams\tgflops\n");
            for r in &rows {
                writeln!(s, "{}\t{}\t{:.4}", r.change, r.params, r.gflops).unwrap();
            }
            s
        }
        Format::Text => {
            let mut s = format!("{:<16} {:>10} {:>10}\n", "change", "params (M)", "GFLOPs");
            for r in &rows {
                writeln!(s, "{:<16} {:>10.2} {:>10.2}", r.change, r.params as f64 / 1e6, r.gflops).unwrap();
            }
            s
        }
    })
}

fn cmd_params(model: &ModelArgs, breakdown: bool, format: Format) -> Result<String, CliError> {
    let r = model.resolve()?;
    let p = count_params(&r.model);
    Ok(match format {
        Format::Json => json(&p)?,
        Format::Tsv => {
            let mut s = String::from("module\tparams\n");
            for (n, v) in &p.entries {
                writeln!(s, "{n}\t{v}").unwrap();
            }
            writeln!(s, "total\t{}", p.total).unwrap();
            s
        }
        Format::Text => {
            let mut s = String::new();
            if breakdown {
                let width = p.entries.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
                for (n, v) in &p.entries {
                    writeln!(s, "{n:width$}  {v:>12}").unwrap();
                }
            }
            writeln!(s, "preset {}: {} parameters ({:.2} M)", r.preset, p.total, p.total as f64 / 1e6).unwrap();
            s
        }
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    model: &ModelArgs,
    steps: Option<usize>,
    seed: Option<u64>,
    log_path: Option<&Path>,
    curve: Option<&Path>,
    accuracy_curve: Option<&Path>,
    checkpoint: Option<&Path>,
    checkpoint_dir: Option<PathBuf>,
    checkpoint_every: Option<usize>,
) -> Result<String, CliError> {
    let r = model.resolve()?;
    let mut cfg = r.train.clone();
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if checkpoint_dir.is_some() {
        cfg.checkpoint_dir = checkpoint_dir;
    }
    if let Some(e) = checkpoint_every {
        cfg.checkpoint_every = e;
    }
    let mut m = EncoderModel::build(&r.model, cfg.seed)?;
    log::info!("training preset {} ({} parameters) for {} steps", r.preset, m.num_params(), cfg.steps);
    let log: TrainLog = match log_path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            let log = train(&mut m, &r.task, &cfg, Some(&mut w))?;
            w.flush()?;
            log
        }
        None => train(&mut m, &r.task, &cfg, None)?,
    };
    if let Some(p) = curve {
        let mut s = String::from("step\tlr\tloss\n");
        for rec in &log.records {
            writeln!(s, "{}\t{}\t{}", rec.step, rec.lr, rec.loss).unwrap();
        }
        std::fs::write(p, s)?;
    }
    if let Some(p) = accuracy_curve {
        let mut s = String::from("step\taccuracy\n");
        for rec in &log.records {
            if let Some(a) = rec.accuracy {
                writeln!(s, "{}\t{a}", rec.step).unwrap();
            }
        }
        std::fs::write(p, s)?;
    }
    if let Some(p) = checkpoint {
        save_checkpoint(&m, p)?;
        log::info!("wrote {}", p.display());
    }
    let last = log.records.last();
    Ok(format!(
        "steps {}\nfinal loss {:.6}\nfinal accuracy {:.4}\n",
        last.map_or(0, |r| r.step),
        last.map_or(f64::NAN, |r| r.loss),
        log.final_accuracy().unwrap_or(f64::NAN)
    ))
}

#[allow(clippy::too_many_arguments)]
fn cmd_profile(
    checkpoint: &Path,
    inputs: usize,
    frames: usize,
    features: &[PathBuf],
    distances: &[usize],
    seed: u64,
    format: Format,
) -> Result<String, CliError> {
    let m = load_checkpoint(checkpoint)?;
    let xs = if features.is_empty() {
        if inputs == 0 || frames == 0 {
            return Err(CliError::Usage("--inputs and --frames must be positive".into()));
        }
        random_features(inputs, frames, m.config.input_feature_dim, seed)
    } else {
        features.iter().map(load_features).collect::<Result<Vec<_>, _>>()?
    };
    let p = redundancy_profile(&m, &xs, distances)?;
    Ok(match format {
        Format::Json => json(&p)?,
        Format::Tsv | Format::Text => {
            let mut s = String::from("layer\tdistance\tsimilarity\n");
            let layers = std::iter::once(("embedding".to_string(), &p.embedding))
                .chain(p.blocks.iter().enumerate().map(|(i, b)| (format!("block.{i}"), b)));
            for (name, vals) in layers {
                for (d, v) in p.distances.iter().zip(vals) {
                    writeln!(s, "{name}\t{d}\t{v}").unwrap();
                }
            }
            s
        }
    })
}

fn cmd_decode(checkpoint: &Path, input: &Path) -> Result<String, CliError> {
    let m = load_checkpoint(checkpoint)?;
    let x = load_features(input)?;
    let ids = ctc_greedy_decode(&m.logits(&x)?);
    Ok(ids.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ") + "\n")
}

fn cmd_synth(model: &ModelArgs, seed: Option<u64>, features: &Path) -> Result<String, CliError> {
    let r = model.resolve()?;
    let mut task = r.task;
    if let Some(s) = seed {
        task.seed = s;
    }
    let ex = gen_synthetic(&task, 1)?.remove(0);
    save_features(&ex.features, features)?;
    Ok(ex.labels.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ") + "\n")
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Flops {
            model,
            seconds,
            frame_ms,
            breakdown,
            format,
            output,
        } => emit(output.as_deref(), &cmd_flops(&model, seconds, frame_ms, breakdown, format)?),
        Command::Ladder { size, format, output } => emit(output.as_deref(), &cmd_ladder(size, format)?),
        Command::Params {
            model,
            breakdown,
            format,
            output,
        } => emit(output.as_deref(), &cmd_params(&model, breakdown, format)?),
        Command::Train {
            model,
            task: TaskKind::Copy,
            steps,
            seed,
            log,
            curve,
            accuracy_curve,
            checkpoint,
            checkpoint_dir,
            checkpoint_every,
        } => {
            let out = cmd_train(
                &model,
                steps,
                seed,
                log.as_deref(),
                curve.as_deref(),
                accuracy_curve.as_deref(),
                checkpoint.as_deref(),
                checkpoint_dir,
                checkpoint_every,
            )?;
            emit(None, &out)
        }
        Command::Profile {
            checkpoint,
            inputs,
            frames,
            features,
            distances,
            seed,
            format,
            output,
        } => emit(output.as_deref(), &cmd_profile(&checkpoint, inputs, frames, &features, &distances, seed, format)?),
        Command::Decode { checkpoint, input } => emit(None, &cmd_decode(&checkpoint, &input)?),
        Command::Synth { model, seed, features } => emit(None, &cmd_synth(&model, seed, &features)?),
        Command::Config { model } => emit(None, &model.resolve()?.to_toml()?),
        Command::Presets => emit(None, &(PRESET_NAMES.join("\n") + "\n")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(CliError::Usage(String::new()).exit_code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
