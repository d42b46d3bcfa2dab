use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mprnet::checkpoint;
use mprnet::config::Config;
use mprnet::data::ImagePair;
use mprnet::image_io::{read_image, write_image};
use mprnet::metrics::{ColorSpace, MetricTable};
use mprnet::model::{MprNet, Precision};
use mprnet::train::{evaluate, input_metrics, train, StageSelect};
use mprnet::{Error, Real};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CHECKPOINT: u8 = 3;
const EXIT_NO_PAIRS: u8 = 4;

#[derive(Parser)]
#[command(name = "mprnet", version, about = "Train, evaluate and run multi-stage image restoration models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// `key=value` override applied after the file; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Report PSNR/SSIM over `<name>.clean.png` / `<name>.degraded.png` pairs.
    Eval {
        /// Without a checkpoint the degraded inputs themselves are scored.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        y_channel: bool,
        /// One row per stage instead of the final stage only.
        #[arg(long)]
        per_stage: bool,
    },
    /// Restore a single image.
    Restore {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Stop after this stage.
        #[arg(long)]
        exit_stage: Option<usize>,
        /// Also write `<output>.stage<k>.<ext>` for every stage.
        #[arg(long, conflicts_with = "exit_stage")]
        all_stages: bool,
    },
    /// Print a checkpoint's configuration and parameter table.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the fast invariant suite.
    Selftest {
        /// Corrupt a backward rule; the suite must then fail.
        #[arg(long)]
        inject_fault: bool,
    },
}

/// A failure carrying its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Usage(_) => EXIT_CONFIG,
            Error::Checkpoint(_) => EXIT_CHECKPOINT,
            _ => EXIT_FAILURE,
        };
        Failure { code, message: e.to_string() }
    }
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("MPRF_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let result = match cli.command {
        Command::Train { config, overrides } => cmd_train(&config, &overrides),
        Command::Eval { checkpoint, dir, y_channel, per_stage } => {
            cmd_eval(checkpoint.as_deref(), &dir, y_channel, per_stage)
        }
        Command::Restore { checkpoint, input, output, exit_stage, all_stages } => {
            cmd_restore(&checkpoint, &input, &output, exit_stage, all_stages)
        }
        Command::Inspect { checkpoint } => cmd_inspect(&checkpoint),
        Command::Selftest { inject_fault } => cmd_selftest(inject_fault),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_train(config: &Path, overrides: &[String]) -> CmdResult {
    let mut cfg = Config::load(config)?;
    cfg.apply_overrides(overrides)?;
    cfg.validate()?;
    match cfg.model.precision {
        Precision::F32 => train_as::<f32>(&cfg),
        Precision::F64 => train_as::<f64>(&cfg),
    }
}

fn train_as<T: Real>(cfg: &Config) -> CmdResult {
    let mut model = MprNet::<T>::new(cfg.model.clone(), cfg.train.seed)?;
    eprintln!("model: {} parameters", model.param_count());
    let out = train(&mut model, cfg)?;
    for v in &out.validations {
        let psnrs: Vec<String> = v.stages.iter().map(|s| format!("{:.3}", s.report.psnr)).collect();
        println!("val iter={} psnr_per_stage={}", v.iter, psnrs.join(","));
    }
    println!("input_psnr={:.4}", out.input_psnr);
    println!("best_psnr={:.4}", out.best_psnr);
    println!("first_loss={:e}", out.first_loss);
    println!("last_loss={:e}", out.last_loss);
    println!("log_checksum={:016x}", out.checksum);
    Ok(())
}

fn load_checkpoint<T: Real>(path: &Path) -> Result<MprNet<T>, Failure> {
    match checkpoint::load::<T>(path) {
        Ok((m, _)) => Ok(m),
        Err(Error::Io(e)) => Err(fail(EXIT_CHECKPOINT, format!("cannot read checkpoint {}: {e}", path.display()))),
        Err(e) => Err(e.into()),
    }
}

fn checkpoint_precision(path: &Path) -> Result<Precision, Failure> {
    match checkpoint::read_manifest_from(path) {
        Ok(m) => Ok(m.config.model.precision),
        Err(Error::Io(e)) => Err(fail(EXIT_CHECKPOINT, format!("cannot read checkpoint {}: {e}", path.display()))),
        Err(e) => Err(e.into()),
    }
}

/// Pairs `<name>.clean.<ext>` with `<name>.degraded.<ext>`; unpaired files are
/// reported on stderr.
fn collect_pairs(dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>, Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| fail(EXIT_NO_PAIRS, format!("{}: {e}", dir.display())))?;
    let mut found: BTreeMap<String, (Option<PathBuf>, Option<PathBuf>)> = BTreeMap::new();
    for entry in entries.flatten() {
        let path = entry.path();
        let Some(file) = path.file_name().and_then(|f| f.to_str()).map(str::to_owned) else { continue };
        let Some((stem, _ext)) = file.rsplit_once('.') else { continue };
        if let Some(name) = stem.strip_suffix(".clean") {
            found.entry(name.to_owned()).or_default().0 = Some(path);
        } else if let Some(name) = stem.strip_suffix(".degraded") {
            found.entry(name.to_owned()).or_default().1 = Some(path);
        } else if path.is_file() {
            eprintln!("warning: skipping {file}: not named <name>.clean.* or <name>.degraded.*");
        }
    }
    let mut pairs = Vec::new();
    for (name, slot) in found {
        match slot {
            (Some(c), Some(d)) => pairs.push((name, c, d)),
            (Some(p), None) | (None, Some(p)) => eprintln!("warning: skipping unpaired file {}", p.display()),
            (None, None) => {}
        }
    }
    if pairs.is_empty() {
        return Err(fail(EXIT_NO_PAIRS, format!("no clean/degraded image pairs in {}", dir.display())));
    }
    Ok(pairs)
}

fn cmd_eval(ckpt: Option<&Path>, dir: &Path, y_channel: bool, per_stage: bool) -> CmdResult {
    let pairs = collect_pairs(dir)?;
    let precision = match ckpt {
        Some(p) => checkpoint_precision(p)?,
        None => Precision::F64,
    };
    match precision {
        Precision::F32 => eval_as::<f32>(ckpt, &pairs, y_channel, per_stage),
        Precision::F64 => eval_as::<f64>(ckpt, &pairs, y_channel, per_stage),
    }
}

fn eval_as<T: Real>(ckpt: Option<&Path>, files: &[(String, PathBuf, PathBuf)], y: bool, per_stage: bool) -> CmdResult {
    let mut pairs = Vec::with_capacity(files.len());
    for (name, c, d) in files {
        let pair = ImagePair::new(read_image::<T>(c)?, read_image::<T>(d)?)
            .map_err(|e| fail(EXIT_FAILURE, format!("{name}: {e}")))?;
        pairs.push(pair);
    }
    let space = if y { ColorSpace::YChannel } else { ColorSpace::Rgb };
    let mut table = MetricTable::new();
    let input = input_metrics(&pairs, space)?;
    table.push("input", input.psnr, input.ssim);
    if let Some(path) = ckpt {
        let model = load_checkpoint::<T>(path)?;
        let select = if per_stage { StageSelect::All } else { StageSelect::Exit(model.config().n_stages) };
        for s in evaluate(&model, &pairs, select, space)? {
            table.push(format!("stage{}", s.stage), s.report.psnr, s.report.ssim);
        }
    }
    println!("pairs={} evaluated_on={space}", pairs.len());
    print!("{}", table.render());
    Ok(())
}

fn cmd_restore(ckpt: &Path, input: &Path, output: &Path, exit_stage: Option<usize>, all_stages: bool) -> CmdResult {
    match checkpoint_precision(ckpt)? {
        Precision::F32 => restore_as::<f32>(ckpt, input, output, exit_stage, all_stages),
        Precision::F64 => restore_as::<f64>(ckpt, input, output, exit_stage, all_stages),
    }
}

fn stage_path(output: &Path, stage: usize) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("restored");
    let ext = output.extension().and_then(|s| s.to_str()).unwrap_or("png");
    output.with_file_name(format!("{stem}.stage{stage}.{ext}"))
}

fn restore_as<T: Real>(ckpt: &Path, input: &Path, output: &Path, exit_stage: Option<usize>, all: bool) -> CmdResult {
    let model = load_checkpoint::<T>(ckpt)?;
    let img = read_image::<T>(input)?;
    let outs = model.restore(&img, exit_stage)?;
    write_image(output, outs.last().expect("restore yields at least one stage"))?;
    if all {
        for (i, o) in outs.iter().enumerate() {
            write_image(&stage_path(output, i + 1), o)?;
        }
    }
    Ok(())
}

fn cmd_inspect(ckpt: &Path) -> CmdResult {
    let manifest = match checkpoint::read_manifest_from(ckpt) {
        Ok(m) => m,
        Err(Error::Io(e)) => return Err(fail(EXIT_CHECKPOINT, format!("cannot read checkpoint {}: {e}", ckpt.display()))),
        Err(e) => return Err(e.into()),
    };
    print!("{}", manifest.config.to_text());
    println!("dtype={}", manifest.dtype);
    println!("param_tensors={}", manifest.params.len());
    println!("param_scalars={}", manifest.scalar_count());
    for (name, shape) in &manifest.params {
        println!("  {name} {shape}");
    }
    Ok(())
}

fn cmd_selftest(inject_fault: bool) -> CmdResult {
    let report = mprnet::selftest::run(inject_fault);
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(fail(EXIT_FAILURE, "selftest failed"))
    }
}
