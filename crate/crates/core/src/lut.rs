//! Lookup tables that replace `exp` and the denominator accumulation.
//!
//! `ExpLut` holds `e^level` for each of the `2^M` codes. `SumLut` is keyed by
//! `P` packed codes and holds the sum of their exponents, so one lookup
//! accumulates `P` elements.
//!
//! Key layout: element 0 occupies the most significant `M`-bit field,
//! `key = sum_i code_i << (M * (P - 1 - i))`. For `M = 2, P = 4` the codes
//! `[0, 3, 0, 3]` pack to `0b00_11_00_11 = 0x33`.
//!
//! Bundle file (little-endian):
//!
//! ```text
//! "EXAQLUT1"   8 bytes magic
//! version      u32    currently 1
//! bits         u8
//! pack         u8
//! reserved     u16    zero
//! clip         f64
//! delta        f64
//! mode         u8     0 = exaq, 1 = naive
//! reserved     7 bytes zero
//! exp count    u32, then f32 x count
//! sum count    u32, then f32 x count
//! ```

use std::fs;
use std::path::Path;

use crate::bytes::ByteCursor;
use crate::quantizer::{Bits, QuantMode, QuantSpec};
use crate::{Error, Result};

pub const LUT_MAGIC: &[u8; 8] = b"EXAQLUT1";
pub const LUT_VERSION: u32 = 1;
/// Largest packed key width accepted by [`pack_codes`].
pub const MAX_KEY_BITS: u32 = 16;
/// Largest key width for which a sum table is built (4096 entries).
pub const MAX_SUM_KEY_BITS: u32 = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct ExpLut {
    pub bits: Bits,
    pub clip: f64,
    pub delta: f64,
    pub entries: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SumLut {
    pub bits: Bits,
    pub pack_width: usize,
    pub clip: f64,
    pub delta: f64,
    pub entries: Vec<f32>,
}

impl SumLut {
    pub fn key_bits(&self) -> u32 {
        self.bits.get() as u32 * self.pack_width as u32
    }
}

/// `e^level` for every code, computed in 64-bit and stored as `f32`.
pub fn build_exp_lut(spec: &QuantSpec) -> ExpLut {
    ExpLut {
        bits: spec.bits(),
        clip: spec.clip(),
        delta: spec.delta(),
        entries: spec.levels().iter().map(|l| l.exp() as f32).collect(),
    }
}

/// Default pack width: 4 codes for 2- and 3-bit, 2 codes for 4-bit.
pub fn default_pack_width(bits: Bits) -> usize {
    match bits.get() {
        4 => 2,
        _ => 4,
    }
}

fn check_pack(bits: Bits, pack: usize, max_key_bits: u32) -> Result<()> {
    if pack == 0 || bits.get() as u32 * pack as u32 > max_key_bits {
        return Err(Error::InvalidArgument(format!(
            "pack width {pack} x {bits} bits exceeds {max_key_bits}-bit keys"
        )));
    }
    Ok(())
}

pub fn pack_codes(codes: &[u8], bits: Bits) -> Result<u16> {
    check_pack(bits, codes.len(), MAX_KEY_BITS)?;
    let m = bits.get();
    codes.iter().try_fold(0u16, |key, &c| {
        if c > bits.max_code() {
            return Err(Error::CodeOutOfRange {
                code: c as u32,
                bits: m,
            });
        }
        Ok((key << m) | c as u16)
    })
}

pub fn unpack_key(key: u16, bits: Bits, pack: usize) -> Result<Vec<u8>> {
    check_pack(bits, pack, MAX_KEY_BITS)?;
    let m = bits.get() as u32;
    let key_bits = m * pack as u32;
    if key_bits < 16 && key >> key_bits != 0 {
        return Err(Error::InvalidArgument(format!(
            "key {key:#x} wider than {key_bits} bits"
        )));
    }
    let mask = bits.max_code() as u16;
    Ok((0..pack as u32)
        .map(|i| ((key >> (m * (pack as u32 - 1 - i))) & mask) as u8)
        .collect())
}

/// Sum of the exponent entries of `codes`, accumulated left to right in
/// 64-bit and rounded once to `f32`.
pub fn sum_entry(exp: &ExpLut, codes: &[u8]) -> f32 {
    codes
        .iter()
        .fold(0.0f64, |acc, &c| acc + exp.entries[c as usize] as f64) as f32
}

impl ExpLut {
    /// Enumerates every `pack`-code key.
    pub fn sum_lut(&self, pack: usize) -> Result<SumLut> {
        check_pack(self.bits, pack, MAX_SUM_KEY_BITS)?;
        let m = self.bits.get() as usize;
        let n_keys = 1usize << (m * pack);
        let mask = self.bits.max_code() as usize;
        let mut codes = vec![0u8; pack];
        let entries = (0..n_keys)
            .map(|key| {
                for (i, c) in codes.iter_mut().enumerate() {
                    *c = ((key >> (m * (pack - 1 - i))) & mask) as u8;
                }
                sum_entry(self, &codes)
            })
            .collect();
        Ok(SumLut {
            bits: self.bits,
            pack_width: pack,
            clip: self.clip,
            delta: self.delta,
            entries,
        })
    }
}

pub fn build_sum_lut(spec: &QuantSpec, pack: usize) -> Result<SumLut> {
    build_exp_lut(spec).sum_lut(pack)
}

/// A quantization spec together with the two tables built from it.
#[derive(Debug, Clone, PartialEq)]
pub struct LutBundle {
    pub spec: QuantSpec,
    pub exp: ExpLut,
    pub sum: SumLut,
}

impl LutBundle {
    pub fn build(spec: QuantSpec, pack: usize) -> Result<Self> {
        let exp = build_exp_lut(&spec);
        let sum = exp.sum_lut(pack)?;
        Ok(LutBundle { spec, exp, sum })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(48 + 4 * (self.exp.entries.len() + self.sum.entries.len()));
        out.extend_from_slice(LUT_MAGIC);
        out.extend_from_slice(&LUT_VERSION.to_le_bytes());
        out.push(self.spec.bits().get());
        out.push(self.sum.pack_width as u8);
        out.extend_from_slice(&[0u8; 2]);
        out.extend_from_slice(&self.spec.clip().to_le_bytes());
        out.extend_from_slice(&self.spec.delta().to_le_bytes());
        out.push(self.spec.mode().to_byte());
        out.extend_from_slice(&[0u8; 7]);
        for table in [&self.exp.entries, &self.sum.entries] {
            out.extend_from_slice(&(table.len() as u32).to_le_bytes());
            for v in table {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor::new(bytes);
        if cur.take(8)? != LUT_MAGIC {
            return Err(Error::BadMagic {
                expected: "EXAQLUT1",
            });
        }
        let version = cur.u32()?;
        if version != LUT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let bits = Bits::new(cur.u8()?)?;
        let pack = cur.u8()? as usize;
        cur.u16()?;
        let clip = cur.f64()?;
        let delta = cur.f64()?;
        let mode = QuantMode::from_byte(cur.u8()?)?;
        cur.take(7)?;
        check_pack(bits, pack, MAX_SUM_KEY_BITS)?;
        let spec = QuantSpec::new(bits, clip, mode)?;
        if spec.delta().to_bits() != delta.to_bits() {
            return Err(Error::LutMismatch(format!(
                "stored delta {delta} disagrees with clip {clip} at {bits} bits"
            )));
        }
        let mut read_table = |expected: usize, name: &str| -> Result<Vec<f32>> {
            let count = cur.u32()? as usize;
            if count != expected {
                return Err(Error::SizeMismatch(format!(
                    "{name} table has {count} entries, expected {expected}"
                )));
            }
            (0..count).map(|_| cur.f32()).collect()
        };
        let exp_entries = read_table(bits.n_levels(), "exp")?;
        let sum_entries = read_table(1 << (bits.get() as usize * pack), "sum")?;
        if cur.remaining() != 0 {
            return Err(Error::SizeMismatch(format!(
                "{} trailing bytes",
                cur.remaining()
            )));
        }
        Ok(LutBundle {
            exp: ExpLut {
                bits,
                clip,
                delta,
                entries: exp_entries,
            },
            sum: SumLut {
                bits,
                pack_width: pack,
                clip,
                delta,
                entries: sum_entries,
            },
            spec,
        })
    }
}

pub fn save_lut(bundle: &LutBundle, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, bundle.to_bytes())?;
    Ok(())
}

pub fn load_lut(path: impl AsRef<Path>) -> Result<LutBundle> {
    LutBundle::from_bytes(&fs::read(path)?)
}
