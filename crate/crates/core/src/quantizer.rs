//! The softmax-input codec: calibration, spec construction and
//! row quantization.
//!
//! A spec covers `[clip, 0]` with `2^M` equal bins of width
//! `delta = -clip / 2^M`. Code `k` reconstructs to the bin center
//! `clip + (k + 1/2) * delta`, so rounding noise is uniform on
//! `[-delta/2, delta/2]` and the top level is `-delta/2` (e^0 itself is never
//! representable). Codes are stored one per byte; packing is done by
//! [`crate::lut`].

use serde::{Deserialize, Serialize};

use crate::clip_optimizer::{predict_clip, LinearClipModel};
use crate::tensor::{slice_stats, TensorF32};
use crate::{Error, Result};

/// Supported code widths: 2, 3 or 4 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Bits(u8);

impl Bits {
    pub const ALL: [Bits; 3] = [Bits(2), Bits(3), Bits(4)];

    pub fn new(m: u8) -> Result<Self> {
        match m {
            2..=4 => Ok(Bits(m)),
            _ => Err(Error::InvalidArgument(format!(
                "bit width {m} unsupported (2, 3 or 4)"
            ))),
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// `2^M`.
    pub fn n_levels(self) -> usize {
        1 << self.0
    }

    pub fn max_code(self) -> u8 {
        (self.n_levels() - 1) as u8
    }
}

impl TryFrom<u8> for Bits {
    type Error = Error;

    fn try_from(m: u8) -> Result<Self> {
        Bits::new(m)
    }
}

impl From<Bits> for u8 {
    fn from(b: Bits) -> u8 {
        b.0
    }
}

impl std::fmt::Display for Bits {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantMode {
    /// Clip from the linear sigma -> C* model.
    Exaq,
    /// Clip at the averaged observed minimum.
    Naive,
}

impl QuantMode {
    pub(crate) fn to_byte(self) -> u8 {
        match self {
            QuantMode::Exaq => 0,
            QuantMode::Naive => 1,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(QuantMode::Exaq),
            1 => Ok(QuantMode::Naive),
            _ => Err(Error::InvalidArgument(format!(
                "unknown quantization mode {b}"
            ))),
        }
    }
}

impl std::fmt::Display for QuantMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            QuantMode::Exaq => "exaq",
            QuantMode::Naive => "naive",
        })
    }
}

/// Static quantization parameters: `scale = delta`, `offset = clip`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantSpec {
    bits: Bits,
    clip: f64,
    delta: f64,
    levels: Vec<f64>,
    mode: QuantMode,
}

impl QuantSpec {
    pub fn new(bits: Bits, clip: f64, mode: QuantMode) -> Result<Self> {
        if !(clip < 0.0) || !clip.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "clip must be finite and negative, got {clip}"
            )));
        }
        let delta = -clip / bits.n_levels() as f64;
        let levels = (0..bits.n_levels())
            .map(|k| clip + (k as f64 + 0.5) * delta)
            .collect();
        Ok(QuantSpec {
            bits,
            clip,
            delta,
            levels,
            mode,
        })
    }

    pub fn bits(&self) -> Bits {
        self.bits
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn mode(&self) -> QuantMode {
        self.mode
    }

    /// `clamp(floor((x - clip) / delta), 0, 2^M - 1)` for a nonpositive `x`.
    #[inline]
    pub fn code_of(&self, x: f64) -> u8 {
        let t = ((x - self.clip) / self.delta).max(0.0);
        // truncation is floor for t >= 0; the cast saturates
        (t as u32).min(self.bits.max_code() as u32) as u8
    }
}

/// Calibration summary of a stream of activation tensors, taken after
/// subtracting each row's maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibStats {
    pub sigma: f64,
    pub mu: f64,
    pub min_avg: f64,
    pub n_tensors: usize,
}

/// Per-tensor summary feeding [`calibrate`]: averages of the per-row
/// statistics of the max-shifted rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorCalib {
    pub sigma: f64,
    pub mu: f64,
    pub min: f64,
}

/// Subtracts the row maximum. The maximum element becomes exactly zero and
/// every other element is nonpositive.
pub fn shift_by_max(row: &[f32]) -> Result<Vec<f32>> {
    let max = row_max(row)?;
    Ok(row.iter().map(|&x| x - max).collect())
}

pub(crate) fn row_max(row: &[f32]) -> Result<f32> {
    if row.is_empty() {
        return Err(Error::Empty("softmax row"));
    }
    let mut max = f32::NEG_INFINITY;
    for (index, &x) in row.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFinite { index });
        }
        max = max.max(x);
    }
    Ok(max)
}

pub fn calibrate_tensor(tensor: &TensorF32) -> Result<TensorCalib> {
    let (mut sigma, mut mu, mut min) = (0.0, 0.0, 0.0);
    for row in tensor.rows() {
        let s = slice_stats(&shift_by_max(row)?)?;
        sigma += s.std;
        mu += s.mean;
        min += s.min;
    }
    let n = tensor.n_rows() as f64;
    Ok(TensorCalib {
        sigma: sigma / n,
        mu: mu / n,
        min: (min / n).min(0.0),
    })
}

/// Averages per-tensor statistics over the calibration set. Each tensor is
/// processed row-wise: rows are max-shifted, and the tensor's sigma, mean and
/// minimum are the averages over its rows.
pub fn calibrate(tensors: &[TensorF32]) -> Result<CalibStats> {
    let per: Vec<TensorCalib> = tensors
        .iter()
        .map(calibrate_tensor)
        .collect::<Result<_>>()?;
    calibrate_from(&per)
}

pub fn calibrate_from(per_tensor: &[TensorCalib]) -> Result<CalibStats> {
    if per_tensor.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    let n = per_tensor.len() as f64;
    Ok(CalibStats {
        sigma: per_tensor.iter().map(|t| t.sigma).sum::<f64>() / n,
        mu: per_tensor.iter().map(|t| t.mu).sum::<f64>() / n,
        min_avg: (per_tensor.iter().map(|t| t.min).sum::<f64>() / n).min(0.0),
        n_tensors: per_tensor.len(),
    })
}

pub fn make_spec_exaq(
    stats: &CalibStats,
    bits: Bits,
    model: &LinearClipModel,
) -> Result<QuantSpec> {
    if model.bits != bits {
        return Err(Error::InvalidArgument(format!(
            "clip model is for {} bits, spec requested {bits}",
            model.bits
        )));
    }
    if !(stats.sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "EXAQ needs a positive calibrated sigma, got {}",
            stats.sigma
        )));
    }
    let clip = predict_clip(model, stats.sigma).clip;
    if !(clip < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "clip model predicts nonnegative clip {clip} at sigma {}",
            stats.sigma
        )));
    }
    QuantSpec::new(bits, clip, QuantMode::Exaq)
}

/// The full observed range: after max subtraction the top of the range is
/// identically zero, so the averaged range is `[min_avg, 0]`.
pub fn make_spec_naive(stats: &CalibStats, bits: Bits) -> Result<QuantSpec> {
    if !(stats.min_avg < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "NAIVE needs a negative averaged minimum, got {}",
            stats.min_avg
        )));
    }
    QuantSpec::new(bits, stats.min_avg, QuantMode::Naive)
}

/// Codes for a max-shifted row. Inputs below the clip saturate to code 0;
/// zero lands in the top code.
pub fn quantize_row<T: Copy + Into<f64>>(shifted: &[T], spec: &QuantSpec) -> Result<Vec<u8>> {
    shifted
        .iter()
        .enumerate()
        .map(|(index, &x)| {
            let x: f64 = x.into();
            if x > 0.0 || x.is_nan() {
                return Err(Error::PositiveInput { index, value: x });
            }
            Ok(spec.code_of(x))
        })
        .collect()
}

pub fn dequantize(codes: &[u8], spec: &QuantSpec) -> Result<Vec<f64>> {
    codes
        .iter()
        .map(|&k| {
            spec.levels
                .get(k as usize)
                .copied()
                .ok_or(Error::CodeOutOfRange {
                    code: k as u32,
                    bits: spec.bits.get(),
                })
        })
        .collect()
}

/// Mean of `(e^dequant(quant(x)) - e^x)^2` over a max-shifted row.
pub fn exp_domain_mse<T: Copy + Into<f64>>(shifted: &[T], spec: &QuantSpec) -> Result<f64> {
    let codes = quantize_row(shifted, spec)?;
    let sum: f64 = codes
        .iter()
        .zip(shifted)
        .map(|(&k, &x)| {
            let d = spec.levels[k as usize].exp() - x.into().exp();
            d * d
        })
        .sum();
    Ok(sum / shifted.len() as f64)
}
