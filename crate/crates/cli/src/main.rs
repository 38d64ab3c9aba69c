//! `eccmc`: simulate, compensate, reconstruct and evaluate rigid motion in
//! cone-beam CT datasets.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ecc_motion::config::Config;
use ecc_motion::pipeline::{self, CompensateOptions, ReconstructOptions};
use ecc_motion::reconstruction::{off_center_slice, render_slice, RampFilter};
use ecc_motion::simulation::Volume;
use ecc_motion::Error;

#[derive(Parser)]
#[command(name = "eccmc", version, about = "Epipolar-consistency motion compensation for cone-beam CT")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the default configuration as TOML.
    DefaultConfig,
    /// Render a motion-corrupted dataset.
    Simulate {
        /// TOML configuration; defaults are used for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the configured scenario (oop, ip, full).
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the motion by minimizing the epipolar inconsistency.
    Compensate {
        dataset: PathBuf,
        /// oop, ip or full; defaults to the simulated scenario.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        x_tol: Option<f64>,
        #[arg(long)]
        f_tol: Option<f64>,
        /// Initial simplex step as a fraction of the bound half-width.
        #[arg(long)]
        initial_step: Option<f64>,
        /// Leave the elapsed_ms column empty so the log is reproducible.
        #[arg(long)]
        no_elapsed: bool,
    },
    /// FDK reconstruction with the original, motion or recovered geometry.
    Reconstruct {
        dataset: PathBuf,
        #[arg(long, default_value = "original")]
        which: String,
        #[arg(long)]
        voxels: Option<usize>,
        #[arg(long)]
        spacing: Option<f64>,
        /// ram-lak or hann.
        #[arg(long)]
        filter: Option<String>,
        /// Also write an off-center slice as 16-bit PNG.
        #[arg(long)]
        png: bool,
        #[arg(long)]
        slice_offset: Option<f64>,
        /// Display window `lo,hi` for the PNG.
        #[arg(long, value_parser = parse_window)]
        window: Option<(f64, f64)>,
    },
    /// Write one axial slice of a stored volume as 16-bit PNG.
    RenderSlice {
        /// Volume path without extension (e.g. `data/recon_motion`).
        volume: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Slice offset from the center as a fraction of the half-depth.
        #[arg(long, default_value_t = 0.25)]
        offset: f64,
        #[arg(long, value_parser = parse_window, default_value = "-0.2,1.4")]
        window: (f64, f64),
    },
    /// Compare volumes and motion parameters before and after compensation.
    Evaluate { dataset: PathBuf },
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected `lo,hi`")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((lo, hi))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::DefaultConfig => print!("{}", Config::default().to_toml_string()),
        Command::Simulate {
            config,
            seed,
            scenario,
            out,
        } => {
            let mut cfg = match config {
                Some(path) => Config::from_file(&path)?,
                None => Config::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = scenario {
                cfg.scenario = s;
            }
            let meta = pipeline::simulate(&cfg, &out)?;
            println!(
                "wrote {} views ({}x{}) to {}",
                meta.geometry.n_projections,
                meta.geometry.detector_cols,
                meta.geometry.detector_rows,
                out.display()
            );
        }
        Command::Compensate {
            dataset,
            scenario,
            max_iter,
            x_tol,
            f_tol,
            initial_step,
            no_elapsed,
        } => {
            let opts = CompensateOptions {
                scenario,
                max_iter,
                x_tol,
                f_tol,
                initial_step,
                log_elapsed: no_elapsed.then_some(false),
            };
            let s = pipeline::compensate(&dataset, &opts)?;
            println!(
                "scenario {}: {} parameters, {} iterations, {} evaluations, cost {:.6e} -> {:.6e}",
                s.scenario, s.dimension, s.iterations, s.evaluations, s.initial_cost, s.final_cost
            );
        }
        Command::Reconstruct {
            dataset,
            which,
            voxels,
            spacing,
            filter,
            png,
            slice_offset,
            window,
        } => {
            let opts = ReconstructOptions {
                voxels,
                spacing_mm: spacing,
                filter: filter.map(|f| f.parse::<RampFilter>()).transpose()?,
                png,
                slice_offset,
                window,
            };
            let vol = pipeline::reconstruct(&dataset, &which, &opts)?;
            let [nx, ny, nz] = vol.shape();
            println!(
                "wrote {}.raw ({nx}x{ny}x{nz})",
                pipeline::volume_stem(&dataset, &which).display()
            );
        }
        Command::RenderSlice {
            volume,
            out,
            offset,
            window,
        } => {
            let vol = Volume::read(&volume)?;
            render_slice(&vol, off_center_slice(vol.grid.nz, offset), window, &out)?;
        }
        Command::Evaluate { dataset } => {
            let rows = pipeline::evaluate(&dataset)?;
            print!("{}", pipeline::format_report(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
