use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use clip_assoc::bench::{run_bench, suite_cases, STANDARD_SUITE};
use clip_assoc::domain::ClipLayout;
use clip_assoc::io;
use clip_assoc::memory::BufferMode;
use clip_assoc::metrics::{evaluate, DEFAULT_IOU_GATE};
use clip_assoc::pipeline::{hyperparameter_sweep, process_video, TrackerConfig};
use clip_assoc::simulator::{self, SCENARIO_NAMES};
use clip_assoc::Error;

#[derive(Parser)]
#[command(
    name = "clip-assoc",
    version,
    about = "Link per-clip object tubes into video tracks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Associate a detection stream into tracks.
    Track {
        /// TOML tracker config; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a scenario into a detection stream and its ground truth.
    Simulate {
        /// A standard-suite name or a scenario file (.toml or .json).
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth output; defaults to the detection path with a
        /// `.gt.jsonl` suffix.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Takes the clip layout from this config.
        #[arg(long, conflicts_with_all = ["clip_length", "overlap"])]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        clip_length: usize,
        #[arg(long, default_value_t = 1)]
        overlap: usize,
    },
    /// Score tracks against ground truth.
    Eval {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = DEFAULT_IOU_GATE)]
        iou_gate: f64,
    },
    /// Grid over refresh window and threshold on the standard suite.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        tau: Vec<usize>,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        alpha: Vec<f64>,
        /// CSV output.
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the benchmark suite with one or both buffer modes.
    Bench {
        #[arg(long, default_value = STANDARD_SUITE)]
        suite: String,
        #[arg(long, value_enum, default_value_t = BenchMode::Both)]
        mode: BenchMode,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchMode {
    Lamb,
    Naive,
    Both,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            e => Failure::Data(e),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<TrackerConfig, Failure> {
    match path {
        Some(p) => io::read_config(p).map_err(|e| match e {
            Error::Io(io) => Failure::Usage(format!("{}: {io}", p.display())),
            e => e.into(),
        }),
        None => Ok(TrackerConfig::default()),
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Track {
            config,
            detections,
            out,
        } => {
            let config = load_config(config.as_deref())?;
            let clips = io::read_detections(&detections, config.layout())?;
            let output = process_video(&clips, &config)?;
            io::write_tracks(&output, Some(config.rng_seed), &out)?;
        }
        Command::Simulate {
            scenario,
            out,
            gt,
            config,
            clip_length,
            overlap,
        } => {
            let layout = match config {
                Some(p) => load_config(Some(&p))?.layout(),
                None => ClipLayout::new(clip_length, overlap)?,
            };
            let spec = match simulator::scenario(&scenario) {
                Some(spec) => spec,
                None if Path::new(&scenario).is_file() => io::read_scenario(Path::new(&scenario))?,
                None => {
                    return Err(Failure::Usage(format!(
                        "unknown scenario {scenario:?}; expected a file or one of {}",
                        SCENARIO_NAMES.join(", ")
                    )))
                }
            };
            let rendered = simulator::render(&spec)?;
            let clips = rendered.clips(layout);
            io::write_detections(&clips, layout, rendered.num_frames(), &out)?;
            let gt_path = gt.unwrap_or_else(|| {
                let mut name = out.file_stem().unwrap_or_default().to_os_string();
                name.push(".gt.jsonl");
                out.with_file_name(name)
            });
            io::write_ground_truth(&rendered.ground_truth, &gt_path)?;
        }
        Command::Eval {
            tracks,
            gt,
            report,
            iou_gate,
        } => {
            if !(iou_gate > 0.0 && iou_gate <= 1.0) {
                return Err(Failure::Usage(format!(
                    "iou gate {iou_gate} outside (0, 1]"
                )));
            }
            let output = io::read_tracks(&tracks)?;
            let gt = io::read_ground_truth(&gt)?;
            io::write_json_report(&evaluate(&output, &gt, iou_gate)?, &report)?;
        }
        Command::Sweep {
            config,
            tau,
            alpha,
            report,
        } => {
            let config = load_config(config.as_deref())?;
            let cases = suite_cases(config.layout())?;
            let table = hyperparameter_sweep(&cases, &config, &tau, &alpha)?;
            io::write_sweep_csv(&table, &report)?;
        }
        Command::Bench {
            suite,
            mode,
            config,
            report,
        } => {
            let config = load_config(config.as_deref())?;
            let modes: &[BufferMode] = match mode {
                BenchMode::Lamb => &[BufferMode::LocationAware],
                BenchMode::Naive => &[BufferMode::Naive],
                BenchMode::Both => &[BufferMode::LocationAware, BufferMode::Naive],
            };
            io::write_json_report(&run_bench(&suite, modes, &config)?, &report)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
