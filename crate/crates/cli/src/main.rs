//! `prnu-scout`: enroll cameras, identify the source of a video, run evaluations and
//! generate synthetic camera data.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;

use prnu_core::denoise::DenoiserConfig;
use prnu_core::eval::{parse_size, run_experiment, ExperimentConfig, SceneKind, SyntheticSetup, DEFAULT_RATES};
use prnu_core::fingerprint::{enroll, save_fingerprint, Fingerprint};
use prnu_core::identify::{CameraRegistry, Comparator, Identifier, IdentifyOptions, Method, FINGERPRINT_EXT};
use prnu_core::imgio::{conform, save_pgm, write_atomic, FrameDir, FrameImage, SamplingPolicy};
use prnu_core::matching::DEFAULT_EXCLUSION;

const FLAG_SUMMARY: &str = "\
Flags by command:
  enroll    --frames --label --db --rate --sigma --levels --rescale --force
  identify  --db --frames --method --rate --comparator --normalize --exclusion
            --sigma --levels --rescale --out
  evaluate  --config --out --seed --force
  simulate  --out --cameras --size --strength --additive-sigma --train-frames
            --test-frames --test-videos --test-sets --seed --force
  all       --jobs

Exit codes: 0 success, 1 usage error, 2 data error.
Set RUST_LOG=info (or debug) for progress logs on standard error.";

#[derive(Parser, Debug)]
#[command(
    name = "prnu-scout",
    version,
    about = "Sensor-noise source camera identification for video frames"
)]
#[command(after_help = FLAG_SUMMARY)]
struct Cli {
    /// Worker threads (default: number of logical processors).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate a camera fingerprint from a directory of frames and store it in the registry.
    Enroll(EnrollArgs),
    /// Attribute a directory of frames to one of the enrolled cameras.
    Identify(IdentifyArgs),
    /// Run an experiment config and write error tables and confusion matrices.
    Evaluate(EvaluateArgs),
    /// Write synthetic training and test videos for a set of simulated cameras.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    /// Assumed noise standard deviation of the wavelet Wiener filter.
    #[arg(long, default_value_t = 3.0, value_name = "SIGMA")]
    sigma: f64,
    /// Wavelet decomposition levels.
    #[arg(long, default_value_t = 4, value_name = "L")]
    levels: usize,
}

impl DenoiseArgs {
    fn config(&self) -> Result<DenoiserConfig, CliError> {
        let cfg = DenoiserConfig {
            sigma0: self.sigma,
            levels: self.levels,
            ..DenoiserConfig::default()
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct EnrollArgs {
    /// Directory of frame_<index>.(pgm|ppm|png) files.
    #[arg(long, value_name = "DIR")]
    frames: PathBuf,
    /// Camera label; the fingerprint is written to <db>/<label>.prnufp.
    #[arg(long)]
    label: String,
    /// Registry directory (created if missing).
    #[arg(long, value_name = "DIR")]
    db: PathBuf,
    /// Use one frame out of every N.
    #[arg(long, default_value_t = 1, value_name = "N")]
    rate: u32,
    #[command(flatten)]
    denoise: DenoiseArgs,
    /// Downscale every frame to WxH (nearest neighbour) before enrollment.
    #[arg(long, value_name = "WxH", value_parser = size_arg)]
    rescale: Option<(usize, usize)>,
    /// Overwrite an existing fingerprint with the same label.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct IdentifyArgs {
    /// Registry directory of .prnufp files.
    #[arg(long, value_name = "DIR")]
    db: PathBuf,
    /// Directory of frames from the video under test.
    #[arg(long, value_name = "DIR")]
    frames: PathBuf,
    /// Identification method.
    #[arg(long, default_value = "pattern", value_parser = method_parser())]
    method: Method,
    /// Use one frame out of every N.
    #[arg(long, default_value_t = 1, value_name = "N")]
    rate: u32,
    /// Fingerprint comparator for the pattern method.
    #[arg(long, default_value = "ncc", value_parser = comparator_parser())]
    comparator: Comparator,
    /// Divide each per-frame PCE vector by its maximum (pcevec method).
    #[arg(long)]
    normalize: bool,
    /// Side of the square window around the correlation peak excluded from PCE.
    #[arg(long, default_value_t = DEFAULT_EXCLUSION, value_name = "K")]
    exclusion: usize,
    #[command(flatten)]
    denoise: DenoiseArgs,
    /// Downscale frames to WxH (nearest neighbour); must match the registry resolution.
    #[arg(long, value_name = "WxH", value_parser = size_arg)]
    rescale: Option<(usize, usize)>,
    /// Write the machine-readable record to this file instead of standard output.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Experiment config file (key = value lines).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Output directory for the CSV files.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Override the seed given in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Number of simulated cameras.
    #[arg(long, default_value_t = 5, value_name = "K")]
    cameras: usize,
    /// Frame size.
    #[arg(long, default_value = "256x256", value_name = "WxH", value_parser = size_arg)]
    size: (usize, usize),
    /// Standard deviation of the multiplicative sensitivity pattern.
    #[arg(long, default_value_t = 0.05)]
    strength: f64,
    /// Standard deviation of the additive noise, in grey levels.
    #[arg(long, default_value_t = 2.0)]
    additive_sigma: f64,
    /// Frames in each training video.
    #[arg(long, default_value_t = 20, value_name = "N")]
    train_frames: usize,
    /// Frames in each test video.
    #[arg(long, default_value_t = 10, value_name = "N")]
    test_frames: usize,
    /// Test videos per camera and scene kind.
    #[arg(long, default_value_t = 1, value_name = "N")]
    test_videos: usize,
    /// Scene kinds of the test videos.
    #[arg(long, default_value = "textured", value_delimiter = ',', value_parser = PossibleValuesParser::new(["textured", "flat"]))]
    test_sets: Vec<String>,
    /// Base seed for every random draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

fn size_arg(s: &str) -> Result<(usize, usize), String> {
    parse_size(s).map_err(|e| e.to_string())
}

fn method_parser() -> impl TypedValueParser<Value = Method> {
    PossibleValuesParser::new(["vote", "pattern", "pcevec"]).map(|s| s.parse::<Method>().expect("listed value"))
}

fn comparator_parser() -> impl TypedValueParser<Value = Comparator> {
    PossibleValuesParser::new(["ncc", "pce"]).map(|s| s.parse::<Comparator>().expect("listed value"))
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl From<prnu_core::Error> for CliError {
    fn from(e: prnu_core::Error) -> Self {
        match e {
            prnu_core::Error::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn policy(rate: u32) -> Result<SamplingPolicy, CliError> {
    SamplingPolicy::new(rate).map_err(|_| CliError::Usage(format!("--rate must be at least 1, got {rate}")))
}

fn open_frames(dir: &Path, rate: u32) -> Result<Vec<FrameImage>, CliError> {
    let fd = FrameDir::open(dir)?;
    if fd.is_empty() {
        return Err(CliError::Data(format!("no frame_<index> images in {}", dir.display())));
    }
    info!("{}: {} frames, sampling 1/{rate}", dir.display(), fd.len());
    Ok(fd.load_sampled(policy(rate)?)?)
}

fn rescale_all(frames: Vec<FrameImage>, size: Option<(usize, usize)>) -> Result<Vec<FrameImage>, CliError> {
    match size {
        None => Ok(frames),
        Some((w, h)) => Ok(frames
            .iter()
            .map(|f| conform(f, w, h, true))
            .collect::<Result<_, _>>()?),
    }
}

/// Refuses to write into a directory that already holds files, unless forced.
fn prepare_out_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if !force && dir.exists() {
        let non_empty = fs::read_dir(dir)
            .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?
            .next()
            .is_some();
        if non_empty {
            return Err(CliError::Usage(format!("{} is not empty (use --force)", dir.display())));
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn valid_label(label: &str) -> bool {
    !label.is_empty()
        && !label.starts_with('.')
        && label
            .chars()
            .all(|c| c.is_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn cmd_enroll(a: EnrollArgs) -> Result<(), CliError> {
    if !valid_label(&a.label) {
        return Err(CliError::Usage(format!(
            "label `{}` must be non-empty and use letters, digits, '-', '_' or '.'",
            a.label
        )));
    }
    let cfg = a.denoise.config()?;
    let target = a.db.join(format!("{}.{FINGERPRINT_EXT}", a.label));
    if target.exists() && !a.force {
        return Err(CliError::Usage(format!(
            "{} exists (use --force to overwrite)",
            target.display()
        )));
    }
    let frames = rescale_all(open_frames(&a.frames, a.rate)?, a.rescale)?;
    let fp = enroll(&frames, SamplingPolicy::every_frame(), &cfg, a.label.clone())?;
    fs::create_dir_all(&a.db).map_err(|e| CliError::Data(format!("{}: {e}", a.db.display())))?;
    save_fingerprint(&fp, &target)?;
    eprintln!(
        "enrolled {} from {} frames ({}x{}) -> {}",
        a.label,
        fp.frames_used(),
        fp.width(),
        fp.height(),
        target.display()
    );
    println!("{},{},{}", a.label, fp.frames_used(), target.display());
    Ok(())
}

fn cmd_identify(a: IdentifyArgs) -> Result<(), CliError> {
    let registry = CameraRegistry::load_dir(&a.db)?;
    if registry.is_empty() {
        return Err(CliError::Data(format!(
            "no .{FINGERPRINT_EXT} files in {}",
            a.db.display()
        )));
    }
    if a.exclusion == 0 || a.exclusion.is_multiple_of(2) {
        return Err(CliError::Usage(format!("--exclusion must be odd, got {}", a.exclusion)));
    }
    let options = IdentifyOptions {
        denoiser: a.denoise.config()?,
        exclusion: a.exclusion,
        comparator: a.comparator,
        normalize: a.normalize,
        rescale: false,
    };
    let frames = rescale_all(open_frames(&a.frames, a.rate)?, a.rescale)?;
    let identifier = Identifier::new(&registry, options)?;
    let report = identifier.identify(a.method, &frames, SamplingPolicy::every_frame())?;
    eprintln!("{report}");
    let line = report.record_line();
    match &a.out {
        Some(path) => write_atomic(path, format!("{line}\n").as_bytes())?,
        None => println!("{line}"),
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    prepare_out_dir(&a.out, a.force)?;
    let report = run_experiment(&cfg)?;
    let files = report.write(&a.out)?;
    eprint!("mean error (%) over test sets\n{}", report.mean_error_csv());
    for path in &files {
        println!("{}", path.display());
    }
    let failures = report.failures();
    if failures.is_empty() {
        return Ok(());
    }
    for (method, rate, set, err) in &failures {
        warn!("cell {method} 1/{rate} {set} failed: {err}");
    }
    Err(CliError::Data(format!(
        "{} of {} cells failed, see {}",
        failures.len(),
        report.cells.len(),
        a.out.join("errors.csv").display()
    )))
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), CliError> {
    let setup = SyntheticSetup {
        cameras: a.cameras,
        width: a.size.0,
        height: a.size.1,
        strength: a.strength,
        additive_sigma: a.additive_sigma,
        train_frames: a.train_frames,
        test_frames: a.test_frames,
        test_videos: a.test_videos,
        test_sets: a
            .test_sets
            .iter()
            .map(|s| {
                if s == "flat" {
                    SceneKind::Flat
                } else {
                    SceneKind::Textured
                }
            })
            .collect(),
    };
    if setup.cameras == 0 || setup.train_frames == 0 || setup.test_frames == 0 || setup.test_videos == 0 {
        return Err(CliError::Usage(
            "--cameras, --train-frames, --test-frames and --test-videos must be at least 1".into(),
        ));
    }
    if !(setup.strength >= 0.0 && setup.additive_sigma >= 0.0) {
        return Err(CliError::Usage(
            "--strength and --additive-sigma must be non-negative".into(),
        ));
    }
    prepare_out_dir(&a.out, a.force)?;

    (0..setup.cameras)
        .into_par_iter()
        .try_for_each(|c| -> Result<(), CliError> {
            let cam = setup.camera(a.seed, c)?;
            let root = a.out.join(&cam.label);
            let write_video = |dir: &Path, frames: &mut dyn Iterator<Item = prnu_core::Result<FrameImage>>| {
                fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
                for (i, frame) in frames.enumerate() {
                    save_pgm(&frame?, dir.join(format!("frame_{i:06}.pgm")))?;
                }
                Ok::<(), CliError>(())
            };
            write_video(
                &root.join("train"),
                &mut (0..setup.train_frames).map(|i| setup.training_frame(&cam, a.seed, c, i)),
            )?;
            for &kind in &setup.test_sets {
                for v in 0..setup.test_videos {
                    write_video(
                        &root.join(format!("test_{}_{v:02}", kind.name())),
                        &mut (0..setup.test_frames).map(|i| setup.test_frame(&cam, a.seed, kind, c, v, i)),
                    )?;
                }
            }
            let planted = Fingerprint::from_f64(&cam.k, 0, cam.label.clone())?;
            save_fingerprint(&planted, root.join(format!("planted.{FINGERPRINT_EXT}")))?;
            Ok(())
        })?;

    let config_path = a.out.join("experiment.cfg");
    write_atomic(&config_path, simulated_config(&setup, &a).as_bytes())?;
    eprintln!(
        "wrote {} cameras ({}x{}) to {}",
        setup.cameras,
        setup.width,
        setup.height,
        a.out.display()
    );
    println!("{}", config_path.display());
    Ok(())
}

/// A directories-mode experiment config covering the simulated tree.
fn simulated_config(setup: &SyntheticSetup, a: &SimulateArgs) -> String {
    let mut text = format!(
        "# {} cameras, {}x{}, strength {}, additive_sigma {}, seed {}\nmode = directories\nrates = {}\n",
        setup.cameras,
        setup.width,
        setup.height,
        setup.strength,
        setup.additive_sigma,
        a.seed,
        DEFAULT_RATES.map(|r| r.to_string()).join(", ")
    );
    for c in 0..setup.cameras {
        let label = SyntheticSetup::camera_label(c);
        let _ = writeln!(text, "train = {label} {label}/train");
    }
    for kind in &setup.test_sets {
        for c in 0..setup.cameras {
            let label = SyntheticSetup::camera_label(c);
            for v in 0..setup.test_videos {
                let _ = writeln!(text, "video = {0} {label} {label}/test_{0}_{v:02}", kind.name());
            }
        }
    }
    text
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot set up {jobs} worker threads: {e}")))?;
    }
    match cli.command {
        Command::Enroll(a) => cmd_enroll(a),
        Command::Identify(a) => cmd_identify(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, msg) = match &e {
                CliError::Usage(m) => ("usage error", m),
                CliError::Data(m) => ("error", m),
            };
            eprintln!("prnu-scout: {kind}: {msg}");
            ExitCode::from(e.code())
        }
    }
}
