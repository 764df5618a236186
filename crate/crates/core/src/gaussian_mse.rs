//! Expected post-exponent error of clipped uniform quantization under a
//! Gaussian model of the max-subtracted softmax input.
//!
//! With clip `C < 0`, `M` bits and step `delta = -C / 2^M`, inputs in
//! `[C, 0]` are quantized and inputs below `C` saturate to `C`. The error is
//! measured after exponentiation and split in two parts:
//!
//! ```text
//! quant = integral_C^0      (e^Q(x) - e^x)^2 f(x) dx  ~= delta^2/12 * integral_C^0 e^(2x) f(x) dx
//! clip  = integral_-inf^C   (e^C - e^x)^2 f(x) dx
//! ```
//!
//! The quantization term uses the first-order expansion `e^(x+eps) ~= e^x (1 + eps)`
//! with `eps` uniform on `[-delta/2, delta/2]`. Both terms reduce to truncated
//! exponential moments of the Gaussian, which have closed forms in `Phi`.
//! [`mse_quadrature_oracle`] integrates the unexpanded integrands numerically
//! and never touches `Phi`, so the two routes check each other.
//!
//! Mass of `f` above zero is outside the model: the max-subtracted input is
//! nonpositive, so the error integrals stop at zero.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::erfc;
use serde::{Deserialize, Serialize};

use crate::quadrature::{integrate, QuadOptions};
use crate::quantizer::Bits;
use crate::{Error, Result};

/// Number of standard deviations beyond which the quadrature oracle treats
/// the density as zero. The neglected mass is below 2e-33.
pub const TAIL_SIGMAS: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    mu: f64,
    sigma: f64,
}

impl GaussianParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "gaussian needs finite mu and sigma > 0, got mu={mu}, sigma={sigma}"
            )));
        }
        Ok(GaussianParams { mu, sigma })
    }

    /// Zero-mean model, as used when fitting the linear clip model.
    pub fn centered(sigma: f64) -> Result<Self> {
        GaussianParams::new(0.0, sigma)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        (-0.5 * z * z).exp() / (self.sigma * (2.0 * PI).sqrt())
    }

    pub fn cdf(&self, x: f64) -> f64 {
        std_normal_cdf((x - self.mu) / self.sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseBreakdown {
    pub mse_quant: f64,
    pub mse_clip: f64,
    pub total: f64,
}

impl MseBreakdown {
    fn new(mse_quant: f64, mse_clip: f64) -> Self {
        MseBreakdown {
            mse_quant,
            mse_clip,
            total: mse_quant + mse_clip,
        }
    }
}

/// Standard normal CDF through `erfc`, accurate in both tails.
pub fn std_normal_cdf(z: f64) -> f64 {
    if z == f64::INFINITY {
        1.0
    } else if z == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-z * FRAC_1_SQRT_2)
    }
}

fn upper_tail(z: f64) -> f64 {
    std_normal_cdf(-z)
}

/// `Phi(zb) - Phi(za)` for `za <= zb`, evaluated on whichever side of zero
/// avoids cancellation.
fn normal_mass(za: f64, zb: f64) -> f64 {
    if za >= 0.0 {
        upper_tail(za) - upper_tail(zb)
    } else if zb <= 0.0 {
        std_normal_cdf(zb) - std_normal_cdf(za)
    } else {
        1.0 - std_normal_cdf(za) - upper_tail(zb)
    }
    .max(0.0)
}

/// `integral_lo^hi e^(a x) f(x) dx` for the Gaussian density `f`.
///
/// Equals `e^(a mu + a^2 sigma^2 / 2) * [Phi((hi - mu - a sigma^2)/sigma) - Phi((lo - mu - a sigma^2)/sigma)]`.
/// `lo` may be `-inf` and `hi` may be `+inf`.
pub fn partial_exp_moment(a: f64, g: &GaussianParams, lo: f64, hi: f64) -> Result<f64> {
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(Error::InvalidArgument(format!(
            "moment bounds need lo < hi, got [{lo}, {hi}]"
        )));
    }
    let (mu, s) = (g.mu, g.sigma);
    let shift = mu + a * s * s;
    let mass = normal_mass((lo - shift) / s, (hi - shift) / s);
    if mass == 0.0 {
        return Ok(0.0);
    }
    let log_scale = a * mu + 0.5 * a * a * s * s;
    Ok((log_scale + mass.ln()).exp())
}

fn check_clip(c: f64) -> Result<()> {
    if !(c < 0.0) || !c.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "clip must be finite and negative, got {c}"
        )));
    }
    Ok(())
}

/// Quantization part of the error, first-order (Taylor) model:
/// `delta^2 / 12 * integral_C^0 e^(2x) f(x) dx`.
pub fn mse_quant(g: &GaussianParams, clip: f64, bits: Bits) -> Result<f64> {
    check_clip(clip)?;
    let delta = -clip / bits.n_levels() as f64;
    Ok(delta * delta / 12.0 * partial_exp_moment(2.0, g, clip, 0.0)?)
}

/// Clipping part of the error, `integral_-inf^C (e^C - e^x)^2 f(x) dx`, expanded as
/// `e^2C Phi(C) - 2 e^C m1(-inf, C) + m2(-inf, C)`.
pub fn mse_clip(g: &GaussianParams, clip: f64) -> Result<f64> {
    check_clip(clip)?;
    let ec = clip.exp();
    let below = g.cdf(clip);
    let m1 = partial_exp_moment(1.0, g, f64::NEG_INFINITY, clip)?;
    let m2 = partial_exp_moment(2.0, g, f64::NEG_INFINITY, clip)?;
    Ok((ec * ec * below - 2.0 * ec * m1 + m2).max(0.0))
}

pub fn mse_total(g: &GaussianParams, clip: f64, bits: Bits) -> Result<MseBreakdown> {
    Ok(MseBreakdown::new(
        mse_quant(g, clip, bits)?,
        mse_clip(g, clip)?,
    ))
}

fn support(g: &GaussianParams) -> (f64, f64) {
    (g.mu - TAIL_SIGMAS * g.sigma, g.mu + TAIL_SIGMAS * g.sigma)
}

fn clip_by_quadrature(g: &GaussianParams, clip: f64, opts: &QuadOptions) -> Result<f64> {
    saturation_by_quadrature(g, clip, clip, opts)
}

/// `integral_-inf^clip (e^r - e^x)^2 f(x) dx` for a reconstruction point `r >= clip`.
fn saturation_by_quadrature(
    g: &GaussianParams,
    clip: f64,
    r: f64,
    opts: &QuadOptions,
) -> Result<f64> {
    let (lo, _) = support(g);
    if clip <= lo {
        return Ok(0.0);
    }
    let e2r = (2.0 * r).exp();
    // (e^r - e^x)^2 = e^2r (e^(x-r) - 1)^2, without cancellation near x = r
    let v = integrate(
        |x| {
            let d = (x - r).exp_m1();
            e2r * d * d * g.pdf(x)
        },
        lo,
        clip,
        opts,
    )?;
    Ok(v.value)
}

/// Independent numerical evaluation of the error without the first-order
/// expansion.
///
/// The clip term integrates `(e^C - e^x)^2 f(x)` directly. The quantization
/// term integrates `(1/delta) integral (e^(x+eps) - e^x)^2 d eps` against `f` over
/// `[C, 0]`, with the inner average over `eps` in `[-delta/2, delta/2]` also
/// done by quadrature. The lower limit `-inf` is `mu - 12 sigma`.
pub fn mse_quadrature_oracle(
    g: &GaussianParams,
    clip: f64,
    bits: Bits,
    opts: &QuadOptions,
) -> Result<MseBreakdown> {
    check_clip(clip)?;
    let delta = -clip / bits.n_levels() as f64;
    let (lo, hi) = support(g);
    let (a, b) = (clip.max(lo), hi.min(0.0));
    let inner = QuadOptions {
        abs_tol: 0.0,
        rel_tol: 1e-14,
        ..*opts
    };
    let quant = if a < b {
        let mut failure = None;
        let r = integrate(
            |x| {
                let e2x = (2.0 * x).exp();
                // (e^(x+eps) - e^x)^2 = e^2x (e^eps - 1)^2
                let noise = integrate(
                    |eps: f64| {
                        let d = eps.exp_m1();
                        e2x * d * d
                    },
                    -0.5 * delta,
                    0.5 * delta,
                    &inner,
                );
                match noise {
                    Ok(n) => n.value / delta * g.pdf(x),
                    Err(e) => {
                        failure.get_or_insert(e);
                        0.0
                    }
                }
            },
            a,
            b,
            opts,
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        r.value
    } else {
        0.0
    };
    Ok(MseBreakdown::new(quant, clip_by_quadrature(g, clip, opts)?))
}

/// Numerical error of the actual mid-bin codec: every `x` in bin `k` is
/// reconstructed as `C + (k + 1/2) delta`, and everything below `C`
/// saturates to code 0 and is reconstructed as `C + delta / 2`.
///
/// The closed form models neither detail (it assumes noise independent of
/// `x` and clipped values landing on `e^C`); this route shows how far the
/// model sits from the codec.
pub fn mse_codec_quadrature(
    g: &GaussianParams,
    clip: f64,
    bits: Bits,
    opts: &QuadOptions,
) -> Result<MseBreakdown> {
    check_clip(clip)?;
    let n = bits.n_levels();
    let delta = -clip / n as f64;
    let (lo, hi) = support(g);
    let mut quant = 0.0;
    for k in 0..n {
        let a = (clip + k as f64 * delta).max(lo);
        let b = (clip + (k + 1) as f64 * delta).min(hi).min(0.0);
        if a >= b {
            continue;
        }
        let level = (clip + (k as f64 + 0.5) * delta).exp();
        quant += integrate(
            |x| {
                let d = level - x.exp();
                d * d * g.pdf(x)
            },
            a,
            b,
            opts,
        )?
        .value;
    }
    Ok(MseBreakdown::new(
        quant,
        saturation_by_quadrature(g, clip, clip + 0.5 * delta, opts)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(mu: f64, sigma: f64) -> GaussianParams {
        GaussianParams::new(mu, sigma).unwrap()
    }

    fn bits(m: u8) -> Bits {
        Bits::new(m).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    fn opts() -> QuadOptions {
        QuadOptions {
            abs_tol: 0.0,
            rel_tol: 1e-13,
            max_intervals: 4000,
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(GaussianParams::new(0.0, 0.0).is_err());
        assert!(GaussianParams::new(f64::NAN, 1.0).is_err());
        assert!(partial_exp_moment(1.0, &g(0.0, 1.0), 0.0, 0.0).is_err());
        assert!(mse_quant(&g(0.0, 1.0), 0.0, bits(2)).is_err());
        assert!(mse_clip(&g(0.0, 1.0), 0.5).is_err());
    }

    #[test]
    fn zeroth_moment_is_probability() {
        let m = partial_exp_moment(0.0, &g(-1.3, 0.7), f64::NEG_INFINITY, 50.0).unwrap();
        assert!((m - 1.0).abs() < 1e-15);
    }

    #[test]
    fn first_moment_is_lognormal_mean() {
        let m = partial_exp_moment(1.0, &g(0.0, 1.0), f64::NEG_INFINITY, f64::INFINITY).unwrap();
        assert!(rel(m, 0.5f64.exp()) < 1e-15);
    }

    #[test]
    fn second_moment_below_zero_matches_quadrature() {
        // e^2 * Phi(-2), by the closed form and by direct integration of e^(2x) phi(x).
        let closed = partial_exp_moment(2.0, &g(0.0, 1.0), f64::NEG_INFINITY, 0.0).unwrap();
        let quad = integrate(
            |x| (2.0 * x).exp() * g(0.0, 1.0).pdf(x),
            -12.0,
            0.0,
            &opts(),
        )
        .unwrap();
        assert!(rel(closed, quad.value) < 1e-12);
        assert!(rel(closed, 2f64.exp() * 0.022_750_131_948_179_21) < 1e-14);
    }

    #[test]
    fn moment_matches_quadrature_on_finite_intervals() {
        for &(a, mu, s, lo, hi) in &[
            (2.0, 0.0, 1.0, -3.0, 0.0),
            (1.0, -2.0, 0.6, -5.0, -0.5),
            (2.0, -1.0, 3.4, -20.0, -4.0),
            (-1.0, 0.5, 2.0, -1.0, 6.0),
        ] {
            let gp = g(mu, s);
            let closed = partial_exp_moment(a, &gp, lo, hi).unwrap();
            let quad = integrate(|x| (a * x).exp() * gp.pdf(x), lo, hi, &opts()).unwrap();
            assert!(
                rel(closed, quad.value) < 1e-10,
                "{a} {mu} {s}: {closed} vs {}",
                quad.value
            );
        }
    }

    #[test]
    fn quant_term_vanishes_with_step() {
        assert!(mse_quant(&g(0.0, 1.0), -1e-9, bits(2)).unwrap() < 1e-19);
    }

    #[test]
    fn one_more_bit_quarters_quant_term() {
        let gp = g(0.0, 1.0);
        for m in [2u8, 3] {
            let a = mse_quant(&gp, -3.0, bits(m)).unwrap();
            let b = mse_quant(&gp, -3.0, bits(m + 1)).unwrap();
            assert_eq!(b, a / 4.0);
        }
    }

    #[test]
    fn far_clip_has_no_clip_error() {
        let gp = g(0.0, 1.0);
        assert!(mse_clip(&gp, -12.0).unwrap() <= 1e-12);
    }

    #[test]
    fn clip_term_matches_quadrature() {
        let gp = g(0.0, 1.0);
        let closed = mse_clip(&gp, -1.0).unwrap();
        let quad = clip_by_quadrature(&gp, -1.0, &opts()).unwrap();
        assert!(rel(closed, quad) < 1e-8, "{closed} vs {quad}");
    }

    #[test]
    fn clip_term_nondecreasing_in_clip() {
        let gp = g(0.0, 1.0);
        let mut prev = 0.0;
        for i in 0..=790 {
            let c = -8.0 + 0.01 * i as f64;
            let v = mse_clip(&gp, c).unwrap();
            assert!(v >= prev, "C={c}: {v} < {prev}");
            prev = v;
        }
    }

    #[test]
    fn total_is_sum_of_parts() {
        let b = mse_total(&g(-0.5, 1.5), -2.0, bits(3)).unwrap();
        assert_eq!(b.total, b.mse_quant + b.mse_clip);
    }

    #[test]
    fn tiny_clip_total_is_clip_term() {
        let gp = g(0.0, 1.0);
        let o = mse_quadrature_oracle(&gp, -1e-9, bits(2), &opts()).unwrap();
        let c = mse_clip(&gp, -1e-9).unwrap();
        assert!(rel(o.total, c) < 1e-8);
    }

    #[test]
    fn noise_model_oracle_tracks_taylor_form() {
        // The noise-averaged exact integrand factors as e^(2x) * E[(e^eps - 1)^2],
        // so its ratio to the Taylor form is (sinh(delta)/delta - 2 sinh(delta/2)/(delta/2) + 1) / (delta^2/12).
        let gp = g(0.0, 1.0);
        let clip = -2.0;
        let d: f64 = 0.5;
        let ratio = ((d.sinh() / d) - 2.0 * ((d / 2.0).sinh() / (d / 2.0)) + 1.0) / (d * d / 12.0);
        let exact = mse_quadrature_oracle(&gp, clip, bits(2), &opts()).unwrap();
        let taylor = mse_quant(&gp, clip, bits(2)).unwrap();
        assert!(rel(exact.mse_quant, taylor * ratio) < 1e-9);
    }

    #[test]
    fn codec_quadrature_is_close_for_small_steps() {
        let gp = g(0.0, 1.0);
        let codec = mse_codec_quadrature(&gp, -1.5, bits(4), &opts()).unwrap();
        let taylor = mse_quant(&gp, -1.5, bits(4)).unwrap();
        assert!(rel(codec.mse_quant, taylor) < 0.01);
    }
}
