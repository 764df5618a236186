//! Activation tensors, their on-disk format, and descriptive statistics.
//!
//! File layout (little-endian, no padding):
//!
//! ```text
//! "EXAQTNSR"        8 bytes magic
//! version   u32     currently 1
//! ndim      u32     1 or 2
//! dims      u64 x ndim
//! payload   f32 x product(dims), row-major
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bytes::ByteCursor;
use crate::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 8] = b"EXAQTNSR";
pub const TENSOR_VERSION: u32 = 1;

/// A 1-D or 2-D row-major tensor of finite `f32` values.
///
/// A 1-D tensor is treated as a single row wherever rows matter.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorF32 {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl TensorF32 {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 2 {
            return Err(Error::Shape(format!("rank {} not supported", dims.len())));
        }
        if dims.contains(&0) {
            return Err(Error::Shape(format!("dims {dims:?} contain a zero")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(TensorF32 { dims, data })
    }

    /// Builds a 2-D tensor from equally sized rows.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        TensorF32::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn n_rows(&self) -> usize {
        if self.dims.len() == 2 {
            self.dims[0]
        } else {
            1
        }
    }

    pub fn n_cols(&self) -> usize {
        *self.dims.last().expect("rank checked at construction")
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.n_cols())
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.n_cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor::new(bytes);
        if cur.take(8)? != TENSOR_MAGIC {
            return Err(Error::BadMagic {
                expected: "EXAQTNSR",
            });
        }
        let version = cur.u32()?;
        if version != TENSOR_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let ndim = cur.u32()?;
        if ndim == 0 || ndim > 2 {
            return Err(Error::BadRank(ndim));
        }
        let mut dims = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            let d = cur.u64()?;
            let d = usize::try_from(d).map_err(|_| Error::Shape(format!("dim {d} too large")))?;
            if d == 0 {
                return Err(Error::Shape("zero-sized dimension".into()));
            }
            dims.push(d);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Shape(format!("dims {dims:?} overflow")))?;
        let payload = n
            .checked_mul(4)
            .ok_or_else(|| Error::Shape(format!("dims {dims:?} overflow")))?;
        let header = cur.position();
        let rest = cur.remaining();
        if rest < payload {
            return Err(Error::Truncated {
                expected: header + payload,
                found: bytes.len(),
            });
        }
        if rest > payload {
            return Err(Error::SizeMismatch(format!(
                "{} trailing bytes after payload",
                rest - payload
            )));
        }
        let data = cur
            .take(payload)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        TensorF32::new(dims, data)
    }
}

/// Reads a tensor file; see the module docs for the layout.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<TensorF32> {
    TensorF32::from_bytes(&fs::read(path)?)
}

pub fn save_tensor(tensor: &TensorF32, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, tensor.to_bytes())?;
    Ok(())
}

/// Draws a `rows x cols` tensor of N(mu, sigma^2) samples.
///
/// The stream is ChaCha8 seeded from `seed` feeding the ziggurat sampler of
/// `rand_distr::StandardNormal`; samples are drawn in 64-bit and rounded to
/// `f32`. The same seed yields the same tensor on a given build.
/// A 1-row request produces a 1-D tensor.
pub fn gen_gaussian_tensor(
    rows: usize,
    cols: usize,
    mu: f64,
    sigma: f64,
    seed: u64,
) -> Result<TensorF32> {
    if !(sigma >= 0.0) || !sigma.is_finite() || !mu.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need finite mu and sigma >= 0, got mu={mu}, sigma={sigma}"
        )));
    }
    let data = gaussian_samples(mu, sigma, rows * cols, seed)?
        .into_iter()
        .map(|v| v as f32)
        .collect();
    let dims = if rows == 1 {
        vec![cols]
    } else {
        vec![rows, cols]
    };
    TensorF32::new(dims, data)
}

/// The 64-bit sample stream behind [`gen_gaussian_tensor`].
pub fn gaussian_samples(mu: f64, sigma: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let dist = Normal::new(mu, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorStats {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation (divides by `n`).
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub fn tensor_stats(tensor: &TensorF32) -> Result<TensorStats> {
    slice_stats(tensor.data())
}

/// Two-pass statistics in 64-bit over any slice of values.
pub fn slice_stats<T: Copy + Into<f64>>(values: &[T]) -> Result<TensorStats> {
    if values.is_empty() {
        return Err(Error::Empty("statistics of an empty tensor"));
    }
    let n = values.len();
    let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for &v in values {
        let v: f64 = v.into();
        min = min.min(v);
        max = max.max(v);
        sum += v;
    }
    let mean = (sum / n as f64).clamp(min, max);
    let var = values
        .iter()
        .map(|&v| {
            let d = v.into() - mean;
            d * d
        })
        .sum::<f64>()
        / n as f64;
    Ok(TensorStats {
        n,
        mean,
        std: var.sqrt(),
        min,
        max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file_bytes(dims: &[u64], values: &[f32]) -> Vec<u8> {
        let mut b = TENSOR_MAGIC.to_vec();
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            b.extend_from_slice(&d.to_le_bytes());
        }
        for v in values {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn zero_tensor_loads() {
        let t = TensorF32::from_bytes(&file_bytes(&[4], &[0.0; 4])).unwrap();
        assert_eq!(t.dims(), &[4]);
        assert_eq!(t.data(), &[0.0; 4]);
    }

    #[test]
    fn short_payload_is_truncation() {
        let err = TensorF32::from_bytes(&file_bytes(&[2, 3], &[1.0; 5])).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }), "{err}");
    }

    #[test]
    fn load_errors_are_distinct() {
        let mut b = file_bytes(&[2], &[1.0, 2.0]);
        b[0] = b'X';
        assert!(matches!(
            TensorF32::from_bytes(&b),
            Err(Error::BadMagic { .. })
        ));

        let b = file_bytes(&[2], &[1.0, f32::NAN]);
        assert!(matches!(
            TensorF32::from_bytes(&b),
            Err(Error::NonFinite { index: 1 })
        ));

        let b = file_bytes(&[1, 1, 1], &[1.0]);
        assert!(matches!(TensorF32::from_bytes(&b), Err(Error::BadRank(3))));

        let mut b = file_bytes(&[1], &[1.0]);
        b.push(0);
        assert!(matches!(
            TensorF32::from_bytes(&b),
            Err(Error::SizeMismatch(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        let t = gen_gaussian_tensor(3, 7, -1.0, 2.0, 11).unwrap();
        save_tensor(&t, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let back = load_tensor(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn gaussian_large_sample_moments() {
        let t = gen_gaussian_tensor(1, 1_000_000, 0.0, 1.0, 7).unwrap();
        let s = tensor_stats(&t).unwrap();
        assert!((0.99..=1.01).contains(&s.std), "std {}", s.std);
        assert!(s.mean.abs() < 0.01, "mean {}", s.mean);
    }

    #[test]
    fn zero_sigma_is_constant() {
        let t = gen_gaussian_tensor(1, 5, 3.0, 0.0, 99).unwrap();
        assert!(t.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn generator_is_seeded() {
        let a = gen_gaussian_tensor(2, 3, 0.0, 1.0, 5).unwrap();
        let b = gen_gaussian_tensor(2, 3, 0.0, 1.0, 5).unwrap();
        assert_eq!(a, b);
        let c = gen_gaussian_tensor(4, 4, 0.0, 1.0, 6).unwrap();
        let d = gen_gaussian_tensor(4, 4, 0.0, 1.0, 7).unwrap();
        assert_ne!(c, d);
        assert!(gen_gaussian_tensor(1, 1, 0.0, -1.0, 0).is_err());
    }

    #[test]
    fn stats_by_hand() {
        let t = TensorF32::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let s = tensor_stats(&t).unwrap();
        assert_eq!((s.n, s.mean, s.min, s.max), (3, 2.0, 1.0, 3.0));
        assert!((s.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);

        let t = TensorF32::new(vec![4], vec![0.7; 4]).unwrap();
        assert_eq!(tensor_stats(&t).unwrap().std, 0.0);

        let t = TensorF32::new(vec![2], vec![-5.0, 0.0]).unwrap();
        let s = tensor_stats(&t).unwrap();
        assert_eq!((s.min, s.max), (-5.0, 0.0));

        assert!(slice_stats::<f32>(&[]).is_err());
    }
}
