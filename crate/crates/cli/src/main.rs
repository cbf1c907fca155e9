use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod settings;
mod spec_file;

#[derive(Parser)]
#[command(name = "guideflow", version, about = "Sensor-guided optical flow pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand. Flags override `--config`.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Plain `key=value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ground-truth hint density, relative to valid GT pixels.
    #[arg(long)]
    pub density: Option<f64>,
    /// Uniform noise half-width added to sampled GT hints (pixels).
    #[arg(long)]
    pub noise: Option<f64>,
    /// Modulation peak height.
    #[arg(long)]
    pub k: Option<f64>,
    /// Modulation width.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub radius: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long = "fb-threshold")]
    pub fb_threshold: Option<f64>,
    /// Scene-level worker threads.
    #[arg(long, env = "GUIDED_FLOW_JOBS")]
    pub jobs: Option<usize>,
    /// Use the recorded pose instead of PnP for ego-motion hints.
    #[arg(long = "known-pose")]
    pub known_pose: bool,
    /// Aggregate reports over pooled pixels instead of per-image means.
    #[arg(long)]
    pub pooled: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes.
    Generate {
        /// Preset: static-suite or dynamic-suite.
        #[arg(long, conflicts_with = "spec")]
        preset: Option<String>,
        /// Scene description file.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Produce ego-motion, estimator, fused and GT-sampled hints.
    Hints {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the estimator for each variant.
    Flow {
        #[arg(long)]
        scenes: PathBuf,
        /// Output of `hints`; required by guided variants.
        #[arg(long)]
        hints: Option<PathBuf>,
        /// Comma-separated subset of unguided,gt_sampled,sensor.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate flows against ground truth.
    Eval {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        flows: PathBuf,
        /// Output of `hints`, used to report guide density.
        #[arg(long)]
        hints: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-pixel error vectors as KITTI PNGs.
        #[arg(long = "error-maps")]
        error_maps: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Hints, flow and evaluation in one pass.
    Bench {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { preset, spec, count, out, common } => {
            commands::generate(preset.as_deref(), spec.as_deref(), count, &out, &common)
        }
        Command::Hints { scenes, out, common } => commands::hints(&scenes, &out, &common),
        Command::Flow { scenes, hints, variants, out, common } => {
            commands::flow(&scenes, hints.as_deref(), &variants, &out, &common)
        }
        Command::Eval { scenes, flows, hints, variants, out, error_maps, common } => {
            commands::eval(&scenes, &flows, hints.as_deref(), &variants, &out, error_maps, &common)
        }
        Command::Bench { scenes, out, common } => commands::bench(&scenes, &out, &common),
    };
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(errors) => {
            eprintln!("{errors} scene error(s)");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
