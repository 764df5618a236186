//! Search for the MSE-optimal clip, and the linear `sigma -> C*` model.
//!
//! The solver scans a coarse grid over `[mu - 10 sigma, -1e-3]` with points
//! spaced geometrically in `|C|` (dense near zero), then refines the best
//! bracket by golden-section search. The coarse scan doubles as a
//! unimodality probe.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gaussian_mse::{mse_total, GaussianParams};
use crate::quantizer::{Bits, QuantMode, QuantSpec};
use crate::tensor::gaussian_samples;
use crate::{Error, Result};

pub const GRID_POINTS: usize = 480;
pub const GRID_SIGMAS: f64 = 10.0;
pub const GRID_TOP: f64 = -1e-3;
pub const GOLDEN_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMethod {
    Grid,
    GridGolden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSolution {
    pub c_star: f64,
    pub mse_at_min: f64,
    pub method: SearchMethod,
    pub grid_lo: f64,
    pub grid_hi: f64,
    /// Final-grid neighbors of the optimum and their MSE; both MSEs are at
    /// least `mse_at_min`.
    pub neighbors: [(f64, f64); 2],
    /// Whether the coarse-grid MSE sequence had exactly one sign change of
    /// its first differences.
    pub unimodal: bool,
}

/// Coarse grid for [`solve_optimal_clip`], ascending.
pub fn search_grid(g: &GaussianParams) -> Result<Vec<f64>> {
    let lo = g.mu() - GRID_SIGMAS * g.sigma();
    if lo >= GRID_TOP {
        return Err(Error::InvalidArgument(format!(
            "search range [{lo}, {GRID_TOP}] is empty; mu is too large for a max-shifted input"
        )));
    }
    let (a, b) = ((-lo).ln(), (-GRID_TOP).ln());
    let n = GRID_POINTS;
    let mut grid: Vec<f64> = (0..n)
        .map(|i| -(a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect();
    grid[0] = lo;
    grid[n - 1] = GRID_TOP;
    Ok(grid)
}

/// Number of sign changes in the first differences, ignoring flat steps.
fn sign_changes(values: &[f64]) -> usize {
    let mut prev = 0.0f64;
    let mut changes = 0;
    for w in values.windows(2) {
        let d = w[1] - w[0];
        if d == 0.0 {
            continue;
        }
        if prev != 0.0 && d.signum() != prev.signum() {
            changes += 1;
        }
        prev = d;
    }
    changes
}

/// Golden-section minimization of `f` on `[a, b]` until the bracket is no
/// wider than `tol`. Returns the best point evaluated.
pub fn golden_section<F>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc <= fd { (c, fc) } else { (d, fd) })
}

/// Minimizes the closed-form total MSE over the clip value.
///
/// Fails with [`Error::BoundarySolution`] when the coarse minimum sits on
/// either end of the grid.
pub fn solve_optimal_clip(g: &GaussianParams, bits: Bits) -> Result<ClipSolution> {
    let grid = search_grid(g)?;
    let mse: Vec<f64> = grid
        .iter()
        .map(|&c| mse_total(g, c, bits).map(|b| b.total))
        .collect::<Result<_>>()?;
    let best = mse
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, _)| i)
        .expect("grid is nonempty");
    let (grid_lo, grid_hi) = (grid[0], grid[grid.len() - 1]);
    if best == 0 || best == grid.len() - 1 {
        return Err(Error::BoundarySolution {
            c: grid[best],
            lo: grid_lo,
            hi: grid_hi,
        });
    }
    let neighbors = [
        (grid[best - 1], mse[best - 1]),
        (grid[best + 1], mse[best + 1]),
    ];
    let (mut c_star, mut mse_at_min, mut method) = (grid[best], mse[best], SearchMethod::Grid);
    if grid[best + 1] - grid[best - 1] > GOLDEN_TOL {
        let (c, v) = golden_section(
            |c| mse_total(g, c, bits).map(|b| b.total),
            grid[best - 1],
            grid[best + 1],
            GOLDEN_TOL,
        )?;
        method = SearchMethod::GridGolden;
        if v <= mse_at_min {
            c_star = c;
            mse_at_min = v;
        }
    }
    Ok(ClipSolution {
        c_star,
        mse_at_min,
        method,
        grid_lo,
        grid_hi,
        neighbors,
        unimodal: sign_changes(&mse) == 1,
    })
}

/// Linear approximation `C*(sigma) = slope * sigma + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClipModel {
    pub bits: Bits,
    pub slope: f64,
    pub intercept: f64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    /// Largest |prediction - solved optimum| over the fitted points; `None`
    /// for the built-in coefficients, whose fit residual is not known.
    pub residual_max: Option<f64>,
}

impl LinearClipModel {
    /// Built-in coefficients, fitted over sigma in [0.9, 3.4]. Only 2 and 3
    /// bits are tabulated.
    pub fn table(bits: Bits) -> Option<Self> {
        let (slope, intercept) = match bits.get() {
            2 => (-1.66, -1.85),
            3 => (-1.75, -2.06),
            _ => return None,
        };
        Some(LinearClipModel {
            bits,
            slope,
            intercept,
            sigma_lo: 0.9,
            sigma_hi: 3.4,
            residual_max: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipPrediction {
    pub clip: f64,
    /// Whether sigma lies inside the model's fitted range.
    pub in_range: bool,
}

pub fn predict_clip(model: &LinearClipModel, sigma: f64) -> ClipPrediction {
    ClipPrediction {
        clip: model.slope * sigma + model.intercept,
        in_range: (model.sigma_lo..=model.sigma_hi).contains(&sigma),
    }
}

/// Solves the zero-mean optimum at `n_points` evenly spaced sigmas in
/// `[sigma_lo, sigma_hi]` and least-squares fits a line through them.
///
/// The per-sigma solves run on the current rayon pool.
pub fn fit_linear_model(
    bits: Bits,
    sigma_lo: f64,
    sigma_hi: f64,
    n_points: usize,
) -> Result<LinearClipModel> {
    if n_points < 8 {
        return Err(Error::InvalidArgument(format!(
            "fit needs at least 8 points, got {n_points}"
        )));
    }
    if !(sigma_lo > 0.0 && sigma_lo < sigma_hi && sigma_hi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "fit range must satisfy 0 < lo < hi, got [{sigma_lo}, {sigma_hi}]"
        )));
    }
    let sigmas: Vec<f64> = (0..n_points)
        .map(|i| sigma_lo + (sigma_hi - sigma_lo) * i as f64 / (n_points - 1) as f64)
        .collect();
    let optima: Vec<f64> = sigmas
        .par_iter()
        .map(|&s| solve_optimal_clip(&GaussianParams::centered(s)?, bits).map(|sol| sol.c_star))
        .collect::<Result<_>>()?;

    let n = n_points as f64;
    let mx = sigmas.iter().sum::<f64>() / n;
    let my = optima.iter().sum::<f64>() / n;
    let sxy: f64 = sigmas
        .iter()
        .zip(&optima)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    let sxx: f64 = sigmas.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual_max = sigmas
        .iter()
        .zip(&optima)
        .map(|(x, y)| (slope * x + intercept - y).abs())
        .fold(0.0, f64::max);
    Ok(LinearClipModel {
        bits,
        slope,
        intercept,
        sigma_lo,
        sigma_hi,
        residual_max: Some(residual_max),
    })
}

/// Empirical MSE of the codec on raw samples of the input model:
/// `(1/n) * sum over x <= 0 of (e^Q(x) - e^x)^2`.
///
/// Samples above zero lie outside the max-shifted model and contribute
/// nothing, matching the analytical integrals that stop at zero.
pub fn empirical_codec_mse(samples: &[f64], spec: &QuantSpec) -> f64 {
    let exp_levels: Vec<f64> = spec.levels().iter().map(|l| l.exp()).collect();
    let sum: f64 = samples
        .iter()
        .filter(|&&x| x <= 0.0)
        .map(|&x| {
            let d = exp_levels[spec.code_of(x) as usize] - x.exp();
            d * d
        })
        .sum();
    sum / samples.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalClip {
    pub c_empirical: f64,
    pub curve: Vec<(f64, f64)>,
}

/// Monte Carlo counterpart of [`solve_optimal_clip`]: draws `n_samples`
/// values once, quantizes them at every grid clip and returns the grid
/// point with the lowest empirical MSE together with the whole curve.
pub fn simulate_empirical_clip(
    g: &GaussianParams,
    bits: Bits,
    n_samples: usize,
    seed: u64,
    c_grid: &[f64],
) -> Result<EmpiricalClip> {
    if c_grid.is_empty() {
        return Err(Error::Empty("clip grid"));
    }
    if n_samples < 100 {
        return Err(Error::InvalidArgument(format!(
            "simulation needs at least 100 samples, got {n_samples}"
        )));
    }
    if c_grid.windows(2).any(|w| w[0] >= w[1]) || c_grid.iter().any(|&c| !(c < 0.0)) {
        return Err(Error::InvalidArgument(
            "clip grid must be strictly increasing and negative".into(),
        ));
    }
    let samples = gaussian_samples(g.mu(), g.sigma(), n_samples, seed)?;
    let curve: Vec<(f64, f64)> = c_grid
        .iter()
        .map(|&c| {
            let spec = QuantSpec::new(bits, c, QuantMode::Exaq)?;
            Ok((c, empirical_codec_mse(&samples, &spec)))
        })
        .collect::<Result<_>>()?;
    let c_empirical = curve
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|p| p.0)
        .expect("grid is nonempty");
    Ok(EmpiricalClip { c_empirical, curve })
}
