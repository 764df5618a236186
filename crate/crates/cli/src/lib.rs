//! Command implementations behind the `exaq` binary.
//!
//! Every command is a plain function returning a serializable report, so the
//! binary only parses flags, installs the thread pool and prints.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};

use exaq::bench::{run_bench, BenchConfig, BenchSummary};
use exaq::clip_optimizer::{empirical_codec_mse, ClipPrediction};
use exaq::gaussian_mse::mse_codec_quadrature;
use exaq::lut::default_pack_width;
use exaq::quadrature::QuadOptions;
use exaq::quantizer::{calibrate_from, calibrate_tensor, exp_domain_mse, TensorCalib};
use exaq::softmax::{softmax_rows, Kernel};
use exaq::tensor::{gaussian_samples, slice_stats};
use exaq::{
    fit_linear_model, gen_gaussian_tensor, load_lut, load_tensor, make_spec_exaq, make_spec_naive,
    mse_quadrature_oracle, mse_total, output_mse, predict_clip, save_lut, shift_by_max,
    simulate_empirical_clip, softmax_exaq, softmax_reference, solve_optimal_clip, Bits, CalibStats,
    ClipSolution, GaussianParams, LinearClipModel, LutBundle, QuantMode, QuantSpec, TensorF32,
};

pub const DEFAULT_FIT_POINTS: usize = 26;
pub const DEFAULT_SIGMA_LO: f64 = 0.9;
pub const DEFAULT_SIGMA_HI: f64 = 3.4;

/// Regular files of `dir`, sorted by name.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            files.push(entry.path());
        }
    }
    files.sort();
    ensure!(!files.is_empty(), "no tensor files in {}", dir.display());
    Ok(files)
}

fn load_dir(dir: &Path) -> Result<Vec<(PathBuf, TensorF32)>> {
    list_files(dir)?
        .into_iter()
        .map(|p| {
            let t = load_tensor(&p).with_context(|| format!("loading {}", p.display()))?;
            Ok((p, t))
        })
        .collect()
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

// calibrate

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorCalibRow {
    pub file: String,
    #[serde(flatten)]
    pub calib: TensorCalib,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub stats: CalibStats,
    pub per_tensor: Vec<TensorCalibRow>,
}

pub fn cmd_calibrate(input_dir: &Path) -> Result<CalibrationReport> {
    let per_tensor: Vec<TensorCalibRow> = load_dir(input_dir)?
        .iter()
        .map(|(p, t)| {
            Ok(TensorCalibRow {
                file: file_name(p),
                calib: calibrate_tensor(t)?,
            })
        })
        .collect::<Result<_>>()?;
    let calibs: Vec<TensorCalib> = per_tensor.iter().map(|r| r.calib).collect();
    Ok(CalibrationReport {
        stats: calibrate_from(&calibs)?,
        per_tensor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width histogram over `[min, max]` of the values; the last bin is
/// closed on the right.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lo: lo + i as f64 * width,
            hi: lo + (i + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for &v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        out[i].count += 1;
    }
    out
}

pub fn write_histogram_csv(path: &Path, bins: &[HistogramBin]) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(f, "sigma_lo,sigma_hi,count")?;
    for b in bins {
        writeln!(f, "{},{},{}", b.lo, b.hi, b.count)?;
    }
    Ok(())
}

// solve / fit

pub fn cmd_solve(mu: f64, sigma: f64, bits: u8) -> Result<ClipSolution> {
    let g = GaussianParams::new(mu, sigma)?;
    Ok(solve_optimal_clip(&g, Bits::new(bits)?)?)
}

pub fn cmd_fit(bits: u8, lo: f64, hi: f64, points: usize) -> Result<LinearClipModel> {
    Ok(fit_linear_model(Bits::new(bits)?, lo, hi, points)?)
}

/// Built-in coefficients where they exist, otherwise a fresh fit over the
/// default range.
pub fn default_model(bits: Bits) -> Result<LinearClipModel> {
    match LinearClipModel::table(bits) {
        Some(m) => Ok(m),
        None => Ok(fit_linear_model(
            bits,
            DEFAULT_SIGMA_LO,
            DEFAULT_SIGMA_HI,
            DEFAULT_FIT_POINTS,
        )?),
    }
}

// build-lut

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LutReport {
    pub bits: u8,
    pub clip: f64,
    pub delta: f64,
    pub mode: QuantMode,
    pub sigma: f64,
    pub pack: usize,
    pub levels: Vec<f64>,
    pub exp_entries: usize,
    pub sum_entries: usize,
    /// For EXAQ: whether sigma was inside the clip model's fitted range.
    pub sigma_in_model_range: Option<bool>,
}

pub fn lut_report(bundle: &LutBundle, sigma: f64, prediction: Option<ClipPrediction>) -> LutReport {
    LutReport {
        bits: bundle.spec.bits().get(),
        clip: bundle.spec.clip(),
        delta: bundle.spec.delta(),
        mode: bundle.spec.mode(),
        sigma,
        pack: bundle.sum.pack_width,
        levels: bundle.spec.levels().to_vec(),
        exp_entries: bundle.exp.entries.len(),
        sum_entries: bundle.sum.entries.len(),
        sigma_in_model_range: prediction.map(|p| p.in_range),
    }
}

pub fn cmd_build_lut(
    stats: &CalibStats,
    bits: u8,
    mode: QuantMode,
    pack: Option<usize>,
    model: Option<&LinearClipModel>,
) -> Result<(LutBundle, LutReport)> {
    let bits = Bits::new(bits)?;
    let pack = pack.unwrap_or_else(|| default_pack_width(bits));
    let (spec, prediction) = match mode {
        QuantMode::Exaq => {
            let model = match model {
                Some(m) => m.clone(),
                None => default_model(bits)?,
            };
            (
                make_spec_exaq(stats, bits, &model)?,
                Some(predict_clip(&model, stats.sigma)),
            )
        }
        QuantMode::Naive => (make_spec_naive(stats, bits)?, None),
    };
    let bundle = LutBundle::build(spec, pack)?;
    let report = lut_report(&bundle, stats.sigma, prediction);
    Ok((bundle, report))
}

// softmax

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum KernelChoice {
    Reference,
    Exaq,
    Naive,
    ScalarOracle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SoftmaxReport {
    pub kernel: KernelChoice,
    pub rows: usize,
    pub cols: usize,
    /// Per-row counters (identical for every row).
    pub exp_calls: usize,
    pub accum_iters: usize,
    pub lut_lookups: usize,
    pub max_abs_sum_error: f64,
    pub dynamic_sigma: bool,
}

/// Per-row EXAQ spec from the row's own sigma. Experimental; the static
/// calibrated spec is the normal path.
fn dynamic_bundle(row: &[f32], base: &LutBundle, model: &LinearClipModel) -> Result<LutBundle> {
    let sigma = slice_stats(&shift_by_max(row)?)?.std;
    let clip = predict_clip(model, sigma).clip;
    let spec = QuantSpec::new(base.spec.bits(), clip, QuantMode::Exaq)?;
    Ok(LutBundle::build(spec, base.sum.pack_width)?)
}

pub fn cmd_softmax(
    input: &TensorF32,
    bundle: Option<&LutBundle>,
    kernel: KernelChoice,
    dynamic_sigma: bool,
) -> Result<(TensorF32, SoftmaxReport)> {
    let need_bundle = || bundle.context("this kernel needs a LUT bundle (--lut)");
    let results = match kernel {
        KernelChoice::Reference => softmax_rows(input, Kernel::Reference)?,
        KernelChoice::Exaq | KernelChoice::Naive => {
            let b = need_bundle()?;
            let want = if kernel == KernelChoice::Exaq {
                QuantMode::Exaq
            } else {
                QuantMode::Naive
            };
            ensure!(
                b.spec.mode() == want,
                "bundle was built in {} mode, kernel {:?} requested",
                b.spec.mode(),
                kernel
            );
            if dynamic_sigma {
                ensure!(
                    want == QuantMode::Exaq,
                    "--dynamic-sigma applies to the exaq kernel only"
                );
                let model = default_model(b.spec.bits())?;
                input
                    .rows()
                    .map(|row| {
                        let rb = dynamic_bundle(row, b, &model)?;
                        Ok(softmax_exaq(row, &rb.spec, &rb.exp, &rb.sum)?)
                    })
                    .collect::<Result<_>>()?
            } else {
                softmax_rows(input, Kernel::Lut(b))?
            }
        }
        KernelChoice::ScalarOracle => {
            softmax_rows(input, Kernel::ScalarOracle(&need_bundle()?.spec))?
        }
    };
    let first = &results[0];
    let max_abs_sum_error = results
        .iter()
        .map(|r| (r.probs.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let report = SoftmaxReport {
        kernel,
        rows: input.n_rows(),
        cols: input.n_cols(),
        exp_calls: first.exp_calls,
        accum_iters: first.accum_iters,
        lut_lookups: first.lut_lookups,
        max_abs_sum_error,
        dynamic_sigma,
    };
    let data: Vec<f32> = results
        .iter()
        .flat_map(|r| r.probs.iter().map(|&p| p as f32))
        .collect();
    Ok((TensorF32::new(input.dims().to_vec(), data)?, report))
}

// simulate

pub const PARITY_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationPoint {
    pub c: f64,
    pub analytic_mse: f64,
    pub empirical_mse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationReport {
    pub mu: f64,
    pub sigma: f64,
    pub bits: u8,
    pub samples: usize,
    pub seed: u64,
    pub c_analytic: f64,
    pub c_empirical: f64,
    pub gap: f64,
    pub grid_points: usize,
    #[serde(skip)]
    pub curve: Vec<SimulationPoint>,
}

/// Clip grid from `mu - span_sigmas * sigma` up to `-step`, spaced `step`.
pub fn simulation_grid(mu: f64, sigma: f64, span_sigmas: f64, step: f64) -> Result<Vec<f64>> {
    ensure!(step > 0.0, "grid step must be positive");
    let lo = mu - span_sigmas * sigma;
    ensure!(lo < -step, "grid range is empty");
    let n = ((-step - lo) / step).floor() as usize;
    Ok((0..=n).map(|i| -step - (n - i) as f64 * step).collect())
}

pub fn cmd_simulate(
    mu: f64,
    sigma: f64,
    bits: u8,
    samples: usize,
    seed: u64,
    grid_step: f64,
) -> Result<SimulationReport> {
    ensure!(samples > 0, "samples must be positive");
    let g = GaussianParams::new(mu, sigma)?;
    let bits_t = Bits::new(bits)?;
    let analytic = solve_optimal_clip(&g, bits_t)?;
    let grid = simulation_grid(mu, sigma, 8.0, grid_step)?;
    let sim = simulate_empirical_clip(&g, bits_t, samples, seed, &grid)?;
    let curve = sim
        .curve
        .iter()
        .map(|&(c, empirical_mse)| {
            Ok(SimulationPoint {
                c,
                analytic_mse: mse_total(&g, c, bits_t)?.total,
                empirical_mse,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulationReport {
        mu,
        sigma,
        bits,
        samples,
        seed,
        c_analytic: analytic.c_star,
        c_empirical: sim.c_empirical,
        gap: (analytic.c_star - sim.c_empirical).abs(),
        grid_points: grid.len(),
        curve,
    })
}

pub fn write_simulation_csv(path: &Path, report: &SimulationReport) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(f, "c,analytic_mse,empirical_mse")?;
    for p in &report.curve {
        writeln!(f, "{},{:e},{:e}", p.c, p.analytic_mse, p.empirical_mse)?;
    }
    Ok(())
}

// bench

pub fn cmd_bench(
    rows: usize,
    cols: usize,
    bits: u8,
    reps: usize,
    warmup: usize,
    sigma: f64,
    seed: u64,
) -> Result<BenchSummary> {
    ensure!(rows > 0 && cols > 0, "rows and cols must be positive");
    ensure!(reps >= 3, "need at least 3 repetitions, got {reps}");
    let tensor = gen_gaussian_tensor(rows, cols, 0.0, sigma, seed)?;
    let stats = calibrate_from(&[calibrate_tensor(&tensor)?])?;
    let (bundle, _) = cmd_build_lut(&stats, bits, QuantMode::Exaq, None, None)?;
    Ok(run_bench(
        &tensor,
        &bundle,
        &BenchConfig {
            repetitions: reps,
            warmup,
        },
    )?)
}

// mse-report

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MseRow {
    pub file: String,
    pub rows: usize,
    pub cols: usize,
    pub exp_mse_exaq: f64,
    pub exp_mse_naive: f64,
    pub out_mse_exaq: f64,
    pub out_mse_naive: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MseSummary {
    pub files: usize,
    pub exp_mse_exaq: f64,
    pub exp_mse_naive: f64,
    pub out_mse_exaq: f64,
    pub out_mse_naive: f64,
    pub exaq_not_worse: bool,
    #[serde(skip)]
    pub rows: Vec<MseRow>,
}

/// Exponent-domain and softmax-output MSE of two bundles against the
/// unquantized reference for one tensor, averaged over rows.
pub fn tensor_mse(tensor: &TensorF32, exaq: &LutBundle, naive: &LutBundle) -> Result<[f64; 4]> {
    let mut acc = [0.0; 4];
    for row in tensor.rows() {
        let shifted = shift_by_max(row)?;
        let reference = softmax_reference(row)?;
        acc[0] += exp_domain_mse(&shifted, &exaq.spec)?;
        acc[1] += exp_domain_mse(&shifted, &naive.spec)?;
        for (slot, b) in [(2, exaq), (3, naive)] {
            let r = softmax_exaq(row, &b.spec, &b.exp, &b.sum)?;
            acc[slot] += output_mse(&r.probs, &reference.probs)?;
        }
    }
    let n = tensor.n_rows() as f64;
    Ok(acc.map(|v| v / n))
}

pub fn cmd_mse_report(dir: &Path, exaq: &LutBundle, naive: &LutBundle) -> Result<MseSummary> {
    let rows: Vec<MseRow> = load_dir(dir)?
        .iter()
        .map(|(p, t)| {
            let [a, b, c, d] = tensor_mse(t, exaq, naive)?;
            Ok(MseRow {
                file: file_name(p),
                rows: t.n_rows(),
                cols: t.n_cols(),
                exp_mse_exaq: a,
                exp_mse_naive: b,
                out_mse_exaq: c,
                out_mse_naive: d,
            })
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let mean = |f: fn(&MseRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let (ea, en) = (mean(|r| r.exp_mse_exaq), mean(|r| r.exp_mse_naive));
    let (oa, on) = (mean(|r| r.out_mse_exaq), mean(|r| r.out_mse_naive));
    Ok(MseSummary {
        files: rows.len(),
        exp_mse_exaq: ea,
        exp_mse_naive: en,
        out_mse_exaq: oa,
        out_mse_naive: on,
        exaq_not_worse: ea <= en && oa <= on,
        rows,
    })
}

pub fn write_mse_csv(path: &Path, summary: &MseSummary) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(
        f,
        "file,rows,cols,exp_mse_exaq,exp_mse_naive,out_mse_exaq,out_mse_naive"
    )?;
    for r in &summary.rows {
        writeln!(
            f,
            "{},{},{},{:e},{:e},{:e},{:e}",
            r.file,
            r.rows,
            r.cols,
            r.exp_mse_exaq,
            r.exp_mse_naive,
            r.out_mse_exaq,
            r.out_mse_naive
        )?;
    }
    Ok(())
}

// analysis helpers used by `solve --verbose`

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorModelCheck {
    pub delta: f64,
    pub taylor_quant: f64,
    pub noise_model_quant: f64,
    pub codec_quant: f64,
    pub codec_clip: f64,
    pub clip_closed: f64,
    pub clip_quadrature: f64,
}

/// Compares the closed form at `clip` with both quadrature routes.
pub fn error_model_check(g: &GaussianParams, clip: f64, bits: Bits) -> Result<ErrorModelCheck> {
    let opts = QuadOptions {
        abs_tol: 0.0,
        rel_tol: 1e-12,
        max_intervals: 4000,
    };
    let closed = mse_total(g, clip, bits)?;
    let noise = mse_quadrature_oracle(g, clip, bits, &opts)?;
    let codec = mse_codec_quadrature(g, clip, bits, &opts)?;
    Ok(ErrorModelCheck {
        delta: -clip / bits.n_levels() as f64,
        taylor_quant: closed.mse_quant,
        noise_model_quant: noise.mse_quant,
        codec_quant: codec.mse_quant,
        codec_clip: codec.mse_clip,
        clip_closed: closed.mse_clip,
        clip_quadrature: noise.mse_clip,
    })
}

/// Monte Carlo codec MSE at `clip` over `n` samples of `g`.
pub fn monte_carlo_mse(
    g: &GaussianParams,
    clip: f64,
    bits: Bits,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let samples = gaussian_samples(g.mu(), g.sigma(), n, seed)?;
    let spec = QuantSpec::new(bits, clip, QuantMode::Exaq)?;
    Ok(empirical_codec_mse(&samples, &spec))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Accepts either a bare `CalibStats` object or a full calibration report.
pub fn read_stats(path: &Path) -> Result<CalibStats> {
    let value: serde_json::Value = read_json(path)?;
    let stats = value.get("stats").cloned().unwrap_or(value);
    serde_json::from_value(stats)
        .with_context(|| format!("{} holds no calibration stats", path.display()))
}

pub fn load_bundle(path: &Path) -> Result<LutBundle> {
    load_lut(path).with_context(|| format!("loading {}", path.display()))
}

pub fn save_bundle(bundle: &LutBundle, path: &Path) -> Result<()> {
    save_lut(bundle, path).with_context(|| format!("writing {}", path.display()))
}
