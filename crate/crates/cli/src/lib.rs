//! Command-line front end: `validate`, `run`, `compare` and `render`.
//!
//! Exit codes are stable: 0 on success, 1 on runtime failure, 2 when the
//! scene, configuration or flags are invalid.

pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use compsplat::optim::Heuristic;
use compsplat::Error;

use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "compsplat", version, about = "Composition-aware Gaussian scene optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scene spec and report object/edge counts and warnings.
    Validate {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Run one optimization and write its artifacts.
    Run(RunArgs),
    /// Run several heuristics on the same scene and seed and summarize.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated heuristics.
        #[arg(long, value_delimiter = ',', default_value = "staged,iterative,simultaneous,holistic")]
        heuristics: Vec<Heuristic>,
    },
    /// Render a run directory or PLY file.
    Render {
        /// Run directory (uses final.ply) or PLY file.
        input: PathBuf,
        #[arg(long, default_value = "render.png")]
        out: PathBuf,
        /// Only render this object's Gaussians.
        #[arg(long)]
        object: Option<String>,
        #[arg(long, default_value_t = commands::EVAL_AZIMUTH, allow_negative_numbers = true)]
        azimuth: f64,
        #[arg(long, default_value_t = commands::EVAL_ELEVATION, allow_negative_numbers = true)]
        elevation: f64,
        #[arg(long)]
        radius: Option<f64>,
        /// 36 frames at 10° azimuth steps into the `--out` directory.
        #[arg(long)]
        turntable: bool,
        #[arg(long, default_value_t = 256)]
        resolution: usize,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration or a previous run's manifest.json.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub heuristic: Option<Heuristic>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub conflict_delta: Option<f64>,
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Gaussians per object at initialization.
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub render_every: Option<usize>,
    /// Write each prompt's target image as PNG into `<out>/targets`.
    #[arg(long)]
    pub dump_targets: bool,
}

impl RunArgs {
    pub fn to_config(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            spec: self.spec.clone(),
            out: self.out.clone(),
            seed: self.seed,
            heuristic: self.heuristic,
            iters: self.iters,
            lambda: self.lambda,
            gamma: self.gamma,
            conflict_delta: self.conflict_delta,
            resolution: self.resolution,
            points: self.points,
            checkpoint_every: self.checkpoint_every,
            render_every: self.render_every,
            dump_targets: self.dump_targets,
        });
        Ok(cfg)
    }
}

/// Reads `SPLAT_THREADS` and sizes the global thread pool accordingly.
pub fn configure_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var("SPLAT_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("SPLAT_THREADS must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(Error::Config("SPLAT_THREADS must be positive".into()));
        }
        // Only the first initialization in a process takes effect.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn exit_code(e: &Error) -> u8 {
    if e.is_validation() {
        2
    } else {
        1
    }
}

pub fn execute(cli: Cli) -> Result<String, Error> {
    configure_threads()?;
    match cli.command {
        Command::Validate { spec } => commands::cmd_validate(&spec),
        Command::Run(args) => {
            let cfg = args.to_config()?;
            let out = commands::cmd_run(&cfg)?;
            Ok(format!(
                "{} iterations, {} Gaussians, {} trace records -> {}\n",
                out.total_iters,
                out.cloud.len(),
                out.trace.len(),
                cfg.output_dir.display()
            ))
        }
        Command::Compare { run, heuristics } => {
            let cfg = run.to_config()?;
            let rows = commands::cmd_compare(&cfg, &heuristics)?;
            Ok(commands::format_table(&rows))
        }
        Command::Render {
            input,
            out,
            object,
            azimuth,
            elevation,
            radius,
            turntable,
            resolution,
        } => {
            let written = commands::cmd_render(&commands::RenderRequest {
                input,
                output: out,
                object,
                azimuth,
                elevation,
                radius,
                turntable,
                resolution,
            })?;
            Ok(format!("wrote {} image(s)\n", written.len()))
        }
    }
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(msg) => {
            print!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
