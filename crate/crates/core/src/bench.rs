//! Wall-clock comparison of the reference and table-driven kernels.
//!
//! Each repetition runs the kernel over every row of one tensor on the
//! calling thread; `ns_per_row` is the median repetition divided by the row
//! count. Counters come from the kernels themselves and are deterministic.

use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::lut::LutBundle;
use crate::softmax::{softmax_exaq, softmax_reference, SoftmaxResult};
use crate::tensor::TensorF32;
use crate::{Error, Result};

/// Runtime improvement reported for the table kernel on Gaudi-2
/// (3.274 ms -> 2.066 ms); printed for context only.
pub const REPORTED_ACCELERATOR_IMPROVEMENT: f64 = 0.369;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub kernel: String,
    pub rows: usize,
    pub cols: usize,
    pub ns_per_row: f64,
    pub speedup_vs_reference: f64,
    /// Per-row counters.
    pub exp_calls: usize,
    pub accum_iters: usize,
    pub lut_lookups: usize,
    pub repetitions: usize,
    pub warmup: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub reference: BenchReport,
    pub exaq: BenchReport,
    /// reference ns / exaq ns.
    pub speedup: f64,
    /// 1 - exaq ns / reference ns.
    pub runtime_reduction: f64,
    pub accum_iters_ratio: f64,
    pub reported_accelerator_reduction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub repetitions: usize,
    pub warmup: usize,
}

fn time_kernel<F>(tensor: &TensorF32, cfg: &BenchConfig, kernel: F) -> Result<(f64, SoftmaxResult)>
where
    F: Fn(&[f32]) -> Result<SoftmaxResult>,
{
    let first = kernel(tensor.row(0))?;
    for _ in 0..cfg.warmup {
        for row in tensor.rows() {
            black_box(kernel(black_box(row))?);
        }
    }
    let mut samples = Vec::with_capacity(cfg.repetitions);
    for _ in 0..cfg.repetitions {
        let start = Instant::now();
        for row in tensor.rows() {
            black_box(kernel(black_box(row))?);
        }
        samples.push(start.elapsed().as_nanos() as f64 / tensor.n_rows() as f64);
    }
    samples.sort_by(f64::total_cmp);
    let mid = samples.len() / 2;
    let median = if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        0.5 * (samples[mid - 1] + samples[mid])
    };
    Ok((median.max(f64::MIN_POSITIVE), first))
}

pub fn run_bench(
    tensor: &TensorF32,
    bundle: &LutBundle,
    cfg: &BenchConfig,
) -> Result<BenchSummary> {
    if cfg.repetitions < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 timed repetitions, got {}",
            cfg.repetitions
        )));
    }
    let (rows, cols) = (tensor.n_rows(), tensor.n_cols());
    let (ref_ns, ref_counts) = time_kernel(tensor, cfg, softmax_reference)?;
    let (exaq_ns, exaq_counts) = time_kernel(tensor, cfg, |row| {
        softmax_exaq(row, &bundle.spec, &bundle.exp, &bundle.sum)
    })?;
    let report = |kernel: &str, ns: f64, c: &SoftmaxResult| BenchReport {
        kernel: kernel.to_string(),
        rows,
        cols,
        ns_per_row: ns,
        speedup_vs_reference: ref_ns / ns,
        exp_calls: c.exp_calls,
        accum_iters: c.accum_iters,
        lut_lookups: c.lut_lookups,
        repetitions: cfg.repetitions,
        warmup: cfg.warmup,
    };
    Ok(BenchSummary {
        reference: report("reference", ref_ns, &ref_counts),
        exaq: report("exaq", exaq_ns, &exaq_counts),
        speedup: ref_ns / exaq_ns,
        runtime_reduction: 1.0 - exaq_ns / ref_ns,
        accum_iters_ratio: ref_counts.accum_iters as f64 / exaq_counts.accum_iters as f64,
        reported_accelerator_reduction: REPORTED_ACCELERATOR_IMPROVEMENT,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::{Bits, QuantMode, QuantSpec};
    use crate::tensor::gen_gaussian_tensor;

    #[test]
    fn small_bench_reports_counters() {
        let t = gen_gaussian_tensor(4, 64, 0.0, 1.0, 1).unwrap();
        let spec = QuantSpec::new(Bits::new(2).unwrap(), -3.51, QuantMode::Exaq).unwrap();
        let b = LutBundle::build(spec, 4).unwrap();
        let s = run_bench(
            &t,
            &b,
            &BenchConfig {
                repetitions: 3,
                warmup: 1,
            },
        )
        .unwrap();
        assert_eq!(s.reference.accum_iters, 64);
        assert_eq!(s.exaq.accum_iters, 16);
        assert_eq!(s.accum_iters_ratio, 4.0);
        assert_eq!(s.exaq.exp_calls, 0);
        assert!(s.exaq.ns_per_row > 0.0 && s.reference.ns_per_row > 0.0);
        assert_eq!(s.reference.speedup_vs_reference, 1.0);
        assert!(run_bench(
            &t,
            &b,
            &BenchConfig {
                repetitions: 1,
                warmup: 0
            }
        )
        .is_err());
    }
}
