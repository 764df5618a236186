//! Softmax kernels.
//!
//! * [`softmax_reference`]: subtract the max, `exp` every element, accumulate
//!   the denominator one element per iteration, divide.
//! * [`softmax_exaq`]: subtract the max, quantize, read numerators from the
//!   exponent table and accumulate the denominator one packed group of `P`
//!   codes per iteration from the sum table.
//! * [`softmax_quantized_scalar`]: the same quantized semantics written
//!   straight-line (dequantize, `exp` in 64-bit, sequential sum). It is the
//!   oracle for the table kernel.
//!
//! All denominators accumulate in 64-bit; normalization divides in 64-bit.
//! Each result carries operation counters so the accumulation savings can
//! be checked exactly rather than timed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lut::{ExpLut, LutBundle, SumLut};
use crate::quantizer::{dequantize, quantize_row, row_max, shift_by_max, QuantSpec};
use crate::tensor::TensorF32;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxResult {
    pub probs: Vec<f64>,
    pub denom: f64,
    /// Calls to `exp`.
    pub exp_calls: usize,
    /// Iterations of the denominator accumulation loop.
    pub accum_iters: usize,
    /// Table reads: one per numerator plus one per denominator iteration.
    pub lut_lookups: usize,
}

pub fn softmax_reference(row: &[f32]) -> Result<SoftmaxResult> {
    let max = row_max(row)? as f64;
    let mut probs: Vec<f64> = row.iter().map(|&x| (x as f64 - max).exp()).collect();
    let mut denom = 0.0f64;
    for &e in &probs {
        denom += e;
    }
    for p in &mut probs {
        *p /= denom;
    }
    Ok(SoftmaxResult {
        probs,
        denom,
        exp_calls: row.len(),
        accum_iters: row.len(),
        lut_lookups: 0,
    })
}

fn check_tables(spec: &QuantSpec, exp: &ExpLut, sum: &SumLut) -> Result<()> {
    let same = |what: &str, clip: f64, delta: f64, bits| {
        if bits != spec.bits()
            || clip.to_bits() != spec.clip().to_bits()
            || delta.to_bits() != spec.delta().to_bits()
        {
            return Err(Error::LutMismatch(format!(
                "{what} table built for {bits} bits, clip {clip}, delta {delta}; spec has {} bits, clip {}, delta {}",
                spec.bits(),
                spec.clip(),
                spec.delta()
            )));
        }
        Ok(())
    };
    same("exp", exp.clip, exp.delta, exp.bits)?;
    same("sum", sum.clip, sum.delta, sum.bits)?;
    if exp.entries.len() != spec.bits().n_levels() || sum.entries.len() != 1 << sum.key_bits() {
        return Err(Error::LutMismatch(
            "table sizes disagree with bit width".into(),
        ));
    }
    Ok(())
}

/// Table-driven softmax.
///
/// The denominator walks the codes in groups of `P`; each full group is one
/// sum-table read. A trailing partial group is added from the exponent
/// table entries of its codes and counts as one more iteration, so
/// `accum_iters = ceil(N / P)` and `lut_lookups = N + ceil(N / P)`.
///
/// Each output is `exp[code] / denom`; the `2^M` quotients are formed once
/// and then looked up.
pub fn softmax_exaq(
    row: &[f32],
    spec: &QuantSpec,
    exp: &ExpLut,
    sum: &SumLut,
) -> Result<SoftmaxResult> {
    check_tables(spec, exp, sum)?;
    let max = row_max(row)?;
    let n = row.len();
    let pack = sum.pack_width;
    let m = spec.bits().get() as u32;

    let codes: Vec<u8> = row
        .iter()
        .map(|&x| spec.code_of((x - max) as f64))
        .collect();

    let groups = n / pack;
    let full = &codes[..groups * pack];
    let mut denom = match pack {
        1 => group_sum::<1>(full, m, &sum.entries),
        2 => group_sum::<2>(full, m, &sum.entries),
        3 => group_sum::<3>(full, m, &sum.entries),
        4 => group_sum::<4>(full, m, &sum.entries),
        5 => group_sum::<5>(full, m, &sum.entries),
        6 => group_sum::<6>(full, m, &sum.entries),
        _ => unreachable!("sum table wider than 12 key bits"),
    };
    let mut accum_iters = groups;
    if full.len() < n {
        denom += codes[full.len()..]
            .iter()
            .map(|&c| exp.entries[c as usize] as f64)
            .sum::<f64>();
        accum_iters += 1;
    }

    let scaled: Vec<f64> = exp.entries.iter().map(|&e| e as f64 / denom).collect();
    let probs = codes.iter().map(|&c| scaled[c as usize]).collect();
    Ok(SoftmaxResult {
        probs,
        denom,
        exp_calls: 0,
        accum_iters,
        lut_lookups: n + accum_iters,
    })
}

#[inline]
fn group_sum<const P: usize>(codes: &[u8], m: u32, table: &[f32]) -> f64 {
    let mut denom = 0.0f64;
    for group in codes.chunks_exact(P) {
        let key = group.iter().fold(0usize, |k, &c| (k << m) | c as usize);
        denom += table[key] as f64;
    }
    denom
}

pub fn softmax_quantized_scalar(row: &[f32], spec: &QuantSpec) -> Result<SoftmaxResult> {
    let shifted = shift_by_max(row)?;
    let levels = dequantize(&quantize_row(&shifted, spec)?, spec)?;
    let mut probs: Vec<f64> = levels.iter().map(|l| l.exp()).collect();
    let mut denom = 0.0f64;
    for &e in &probs {
        denom += e;
    }
    for p in &mut probs {
        *p /= denom;
    }
    Ok(SoftmaxResult {
        probs,
        denom,
        exp_calls: row.len(),
        accum_iters: row.len(),
        lut_lookups: 0,
    })
}

/// Mean squared difference of two probability vectors.
pub fn output_mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Empty("probability vectors"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

#[derive(Debug, Clone, Copy)]
pub enum Kernel<'a> {
    Reference,
    Lut(&'a LutBundle),
    ScalarOracle(&'a QuantSpec),
}

impl Kernel<'_> {
    pub fn run(&self, row: &[f32]) -> Result<SoftmaxResult> {
        match self {
            Kernel::Reference => softmax_reference(row),
            Kernel::Lut(b) => softmax_exaq(row, &b.spec, &b.exp, &b.sum),
            Kernel::ScalarOracle(spec) => softmax_quantized_scalar(row, spec),
        }
    }
}

/// Runs `kernel` on every row of `tensor` using the current rayon pool.
/// The tables are shared read-only across rows.
pub fn softmax_rows(tensor: &TensorF32, kernel: Kernel<'_>) -> Result<Vec<SoftmaxResult>> {
    tensor
        .data()
        .par_chunks_exact(tensor.n_cols())
        .map(|row| kernel.run(row))
        .collect()
}
