mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "orthostitch", version, about = "Orthographic stitching of cone-beam X-rays")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Global {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config value by dotted path, e.g. `stitch.depth_fraction=0.4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a procedural femur phantom and its ground truth.
    Phantom,
    /// Render cone-beam or orthographic projections of a volume.
    Project(commands::ProjectArgs),
    /// Stitch X-rays into one orthographic image.
    Stitch(commands::StitchArgs),
    /// Compare images (SSIM, PSNR, cosine) and heatmaps (BCE, RR).
    Evaluate(commands::EvaluateArgs),
    /// Locate landmarks and report the distance between two of them.
    Measure(commands::MeasureArgs),
    /// Generate a reproducible training dataset.
    Dataset,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    let code = f.exit_code;
    eprintln!("{}", serde_json::to_string(&f).expect("failure serialises"));
    ExitCode::from(code as u8)
}
