use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::builder::RangedU64ValueParser;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use exaq::{
    gen_gaussian_tensor, load_tensor, save_tensor, Bits, GaussianParams, LinearClipModel, QuantMode,
};
use exaq_cli::*;

#[derive(Parser)]
#[command(
    name = "exaq",
    version,
    about = "Exponent-aware quantization of softmax inputs"
)]
struct Cli {
    /// Worker threads for row-parallel work.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exaq,
    Naive,
}

impl From<ModeArg> for QuantMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exaq => QuantMode::Exaq,
            ModeArg::Naive => QuantMode::Naive,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Collect sigma, mu and averaged minimum over a directory of tensors.
    Calibrate {
        #[arg(long)]
        input_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-tensor sigma histogram.
        #[arg(long)]
        histogram: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Optimal clipping value for one Gaussian.
    Solve {
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        mu: f64,
        #[arg(long)]
        bits: u8,
        /// Also compare the closed form against quadrature at the optimum.
        #[arg(long)]
        check: bool,
    },
    /// Fit the linear sigma -> clip model.
    Fit {
        #[arg(long)]
        bits: u8,
        #[arg(long, default_value_t = DEFAULT_SIGMA_LO)]
        sigma_lo: f64,
        #[arg(long, default_value_t = DEFAULT_SIGMA_HI)]
        sigma_hi: f64,
        #[arg(long, default_value_t = DEFAULT_FIT_POINTS,
              value_parser = RangedU64ValueParser::<usize>::new().range(8..))]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the exponent and sum tables from calibration stats.
    BuildLut {
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        bits: u8,
        #[arg(long, value_enum, default_value_t = ModeArg::Exaq)]
        mode: ModeArg,
        /// Codes per sum-table key.
        #[arg(long)]
        pack: Option<usize>,
        /// Fitted model JSON; defaults to the built-in coefficients.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Row-wise softmax of a tensor file.
    Softmax {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = KernelChoice::Exaq)]
        kernel: KernelChoice,
        #[arg(long)]
        lut: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-row clip from each row's own sigma (exaq kernel only).
        #[arg(long)]
        dynamic_sigma: bool,
    },
    /// Monte Carlo check of the analytical optimum.
    Simulate {
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        mu: f64,
        #[arg(long)]
        bits: u8,
        #[arg(long, default_value_t = 100_000,
              value_parser = RangedU64ValueParser::<usize>::new().range(1..))]
        samples: usize,
        /// Use the small 1000-sample setting.
        #[arg(long)]
        paper_parity: bool,
        #[arg(long, env = "EXAQ_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        grid_step: f64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Time the reference and table kernels on a synthetic tensor.
    Bench {
        #[arg(long, default_value_t = 1024)]
        rows: usize,
        #[arg(long, default_value_t = 4096)]
        cols: usize,
        #[arg(long, default_value_t = 2)]
        bits: u8,
        #[arg(long, default_value_t = 10,
              value_parser = RangedU64ValueParser::<usize>::new().range(3..))]
        reps: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long, default_value_t = 2.0)]
        sigma: f64,
        #[arg(long, env = "EXAQ_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Exponent-domain and output MSE of two bundles over a tensor directory.
    MseReport {
        #[arg(long)]
        input_dir: PathBuf,
        #[arg(long)]
        exaq_lut: PathBuf,
        #[arg(long)]
        naive_lut: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write a synthetic Gaussian tensor.
    GenTensor {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        mu: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, env = "EXAQ_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &PathBuf) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .context("starting thread pool")?;

    match cli.command {
        Command::Calibrate {
            input_dir,
            out,
            histogram: hist,
            bins,
        } => {
            let report = cmd_calibrate(&input_dir)?;
            write_json(&report, &out)?;
            if let Some(path) = hist {
                let sigmas: Vec<f64> = report.per_tensor.iter().map(|r| r.calib.sigma).collect();
                write_histogram_csv(&path, &histogram(&sigmas, bins))?;
            }
            print_json(&report.stats)
        }
        Command::Solve {
            sigma,
            mu,
            bits,
            check,
        } => {
            let sol = cmd_solve(mu, sigma, bits)?;
            if check {
                let g = GaussianParams::new(mu, sigma)?;
                let model = error_model_check(&g, sol.c_star, Bits::new(bits)?)?;
                print_json(&serde_json::json!({ "solution": sol, "check": model }))
            } else {
                print_json(&sol)
            }
        }
        Command::Fit {
            bits,
            sigma_lo,
            sigma_hi,
            points,
            out,
        } => {
            let model = cmd_fit(bits, sigma_lo, sigma_hi, points)?;
            if let Some(path) = out {
                write_json(&model, &path)?;
            }
            print_json(&model)
        }
        Command::BuildLut {
            stats,
            bits,
            mode,
            pack,
            model,
            out,
        } => {
            let stats = read_stats(&stats)?;
            let model: Option<LinearClipModel> = model.map(|p| read_json(&p)).transpose()?;
            let (bundle, report) = cmd_build_lut(&stats, bits, mode.into(), pack, model.as_ref())?;
            save_bundle(&bundle, &out)?;
            print_json(&report)
        }
        Command::Softmax {
            input,
            kernel,
            lut,
            out,
            dynamic_sigma,
        } => {
            let tensor =
                load_tensor(&input).with_context(|| format!("loading {}", input.display()))?;
            let bundle = lut.map(|p| load_bundle(&p)).transpose()?;
            let (probs, report) = cmd_softmax(&tensor, bundle.as_ref(), kernel, dynamic_sigma)?;
            save_tensor(&probs, &out).with_context(|| format!("writing {}", out.display()))?;
            print_json(&report)
        }
        Command::Simulate {
            sigma,
            mu,
            bits,
            samples,
            paper_parity,
            seed,
            grid_step,
            csv,
        } => {
            let samples = if paper_parity {
                PARITY_SAMPLES
            } else {
                samples
            };
            let report = cmd_simulate(mu, sigma, bits, samples, seed, grid_step)?;
            if let Some(path) = csv {
                write_simulation_csv(&path, &report)?;
            }
            print_json(&report)
        }
        Command::Bench {
            rows,
            cols,
            bits,
            reps,
            warmup,
            sigma,
            seed,
        } => print_json(&cmd_bench(rows, cols, bits, reps, warmup, sigma, seed)?),
        Command::MseReport {
            input_dir,
            exaq_lut,
            naive_lut,
            csv,
        } => {
            let summary = cmd_mse_report(
                &input_dir,
                &load_bundle(&exaq_lut)?,
                &load_bundle(&naive_lut)?,
            )?;
            if let Some(path) = csv {
                write_mse_csv(&path, &summary)?;
            }
            print_json(&summary)
        }
        Command::GenTensor {
            rows,
            cols,
            mu,
            sigma,
            seed,
            out,
        } => {
            let t = gen_gaussian_tensor(rows, cols, mu, sigma, seed)?;
            save_tensor(&t, &out).with_context(|| format!("writing {}", out.display()))?;
            print_json(&serde_json::json!({ "dims": t.dims(), "seed": seed }))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
