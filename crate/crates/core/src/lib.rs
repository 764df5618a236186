//! Exponent-aware quantization (EXAQ) of softmax inputs.
//!
//! The crate has two halves. The analytical half models the error that
//! clipped uniform quantization of max-subtracted softmax inputs causes
//! *after* exponentiation, and finds the clipping value that minimizes it
//! under a Gaussian input model ([`gaussian_mse`], [`clip_optimizer`]).
//! The kernel half turns a quantization spec into two lookup tables and
//! runs softmax with table lookups in place of `exp` and with a packed
//! 4-way denominator accumulation ([`quantizer`], [`lut`], [`softmax`]).
//!
//! [`tensor`] holds the activation container and its file format, and
//! [`bench`] the wall-clock harness used to compare the kernels.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
mod bytes;
pub mod clip_optimizer;
mod error;
pub mod gaussian_mse;
pub mod lut;
pub mod quadrature;
pub mod quantizer;
pub mod softmax;
pub mod tensor;

pub use error::{Error, Result};

pub use clip_optimizer::{
    fit_linear_model, predict_clip, simulate_empirical_clip, solve_optimal_clip, ClipPrediction,
    ClipSolution, EmpiricalClip, LinearClipModel, SearchMethod,
};
pub use gaussian_mse::{
    mse_clip, mse_quadrature_oracle, mse_quant, mse_total, partial_exp_moment, GaussianParams,
    MseBreakdown,
};
pub use lut::{build_exp_lut, build_sum_lut, load_lut, pack_codes, save_lut, unpack_key};
pub use lut::{ExpLut, LutBundle, SumLut};
pub use quantizer::{
    calibrate, dequantize, make_spec_exaq, make_spec_naive, quantize_row, shift_by_max, Bits,
    CalibStats, QuantMode, QuantSpec,
};
pub use softmax::{
    output_mse, softmax_exaq, softmax_quantized_scalar, softmax_reference, SoftmaxResult,
};
pub use tensor::{
    gen_gaussian_tensor, load_tensor, save_tensor, tensor_stats, TensorF32, TensorStats,
};
