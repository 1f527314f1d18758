//! NBTF container.
//!
//! ```text
//! "NBTF" | version u16 = 1 | flags u16 (bit 0: float16 payload)
//! height u32 | width u32 | n_pairs u32 | texel_size_mm f32
//! n_pairs × (θ_cam, φ_cam, θ_light, φ_light) f32
//! payload [pair][row][col][rgb], f32 or f16
//! ```

use std::path::Path;

use super::{BtfDataset, BtfSlice, DirectionPair};
use crate::bytes::{self, Reader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NBTF";
const VERSION: u16 = 1;
const FLAG_F16: u16 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F16,
    F32,
}

pub fn encode_btf(ds: &BtfDataset, precision: Precision) -> Result<Vec<u8>> {
    let texels = ds.height * ds.width * 3;
    let word = if precision == Precision::F16 { 2 } else { 4 };
    let mut out = Vec::with_capacity(24 + 16 * ds.len() + word * texels * ds.len());
    out.extend_from_slice(MAGIC);
    bytes::put_u16(&mut out, VERSION);
    bytes::put_u16(&mut out, if precision == Precision::F16 { FLAG_F16 } else { 0 });
    bytes::put_u32(&mut out, bytes::u32_of(ds.height, "height")?);
    bytes::put_u32(&mut out, bytes::u32_of(ds.width, "width")?);
    bytes::put_u32(&mut out, bytes::u32_of(ds.len(), "pair count")?);
    bytes::put_f32s(&mut out, &[ds.texel_size]);
    for p in &ds.pairs {
        bytes::put_f32s(&mut out, &[p.camera.theta, p.camera.phi, p.light.theta, p.light.phi]);
    }
    for s in &ds.slices {
        match precision {
            Precision::F32 => bytes::put_f32s(&mut out, &s.pixels),
            Precision::F16 => bytes::put_f16s(&mut out, &s.pixels)?,
        }
    }
    Ok(out)
}

pub fn decode_btf(buf: &[u8]) -> Result<BtfDataset> {
    let mut r = Reader::new(buf);
    r.magic(MAGIC)?;
    let at = r.pos();
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(at, format!("unsupported NBTF version {version}")));
    }
    let at = r.pos();
    let flags = r.u16("flags")?;
    if flags & !FLAG_F16 != 0 {
        return Err(Error::format(at, format!("unknown flag bits {flags:#06x}")));
    }
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    let at = r.pos();
    let n = r.u32("pair count")? as usize;
    if n == 0 || height == 0 || width == 0 {
        return Err(Error::format(at, format!("empty dataset ({n} pairs of {height}×{width})")));
    }
    let texel_size = r.f32("texel size")?;
    let mut pairs = Vec::with_capacity(n.min(r.remaining() / 16));
    for _ in 0..n {
        let at = r.pos();
        let a = r.f32s(4, "direction record")?;
        let pair = DirectionPair::from_degrees(a[0], a[1], a[2], a[3])
            .map_err(|e| Error::format(at, format!("direction record: {e}")))?;
        pairs.push(pair);
    }
    let texels = height
        .checked_mul(width)
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| Error::format(r.pos(), "payload size overflows"))?;
    let word = if flags & FLAG_F16 != 0 { 2 } else { 4 };
    let need = texels.checked_mul(n).and_then(|v| v.checked_mul(word));
    if need != Some(r.remaining()) {
        return Err(Error::format(
            r.pos(),
            format!(
                "payload holds {} bytes, header implies {}",
                r.remaining(),
                need.map_or("overflow".into(), |v| v.to_string())
            ),
        ));
    }
    let mut slices = Vec::with_capacity(n);
    for _ in 0..n {
        let pixels = if word == 2 {
            r.f16s(texels, "payload")?
        } else {
            r.f32s(texels, "payload")?
        };
        slices.push(BtfSlice::new(height, width, pixels)?);
    }
    r.finish()?;
    BtfDataset::new(texel_size, pairs, slices)
}

/// Writes with the default float16 payload.
pub fn save_btf(ds: &BtfDataset, path: impl AsRef<Path>) -> Result<()> {
    save_btf_with(ds, path, Precision::F16)
}

pub fn save_btf_with(ds: &BtfDataset, path: impl AsRef<Path>, precision: Precision) -> Result<()> {
    bytes::write_file(path.as_ref(), &encode_btf(ds, precision)?)
}

pub fn load_btf(path: impl AsRef<Path>) -> Result<BtfDataset> {
    decode_btf(&bytes::read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn le32(v: f32) -> [u8; 4] {
        v.to_le_bytes()
    }

    /// 1×1 texel, one pair, value 0.5, assembled by hand.
    fn minimal_file() -> Vec<u8> {
        let mut b = b"NBTF".to_vec();
        b.extend([1, 0, 0, 0]);
        b.extend([1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        b.extend(le32(0.25));
        for v in [0.0f32, 0.0, 30.0, 90.0] {
            b.extend(le32(v));
        }
        for _ in 0..3 {
            b.extend(le32(0.5));
        }
        b
    }

    fn two_by_two() -> BtfDataset {
        let s = |k: f32| BtfSlice::new(2, 2, (0..12).map(|i| i as f32 * 0.125 + k).collect()).unwrap();
        let pairs = vec![
            DirectionPair::from_degrees(0.0, 0.0, 0.0, 0.0).unwrap(),
            DirectionPair::from_degrees(30.0, 90.0, 45.0, 180.0).unwrap(),
        ];
        BtfDataset::new(1.0, pairs, vec![s(0.0), s(1.0)]).unwrap()
    }

    #[test]
    fn decodes_hand_assembled_minimal_file() {
        let ds = decode_btf(&minimal_file()).unwrap();
        assert_eq!((ds.height(), ds.width(), ds.len()), (1, 1, 1));
        assert_eq!(ds.slices()[0].pixels(), &[0.5, 0.5, 0.5]);
        assert_eq!(ds.pairs()[0], DirectionPair::from_degrees(0.0, 0.0, 30.0, 90.0).unwrap());
        assert_eq!(ds.texel_size(), 0.25);
    }

    #[test]
    fn f32_round_trip_and_determinism() {
        let ds = two_by_two();
        let a = encode_btf(&ds, Precision::F32).unwrap();
        assert_eq!(a, encode_btf(&ds, Precision::F32).unwrap());
        assert_eq!(decode_btf(&a).unwrap(), ds);
    }

    #[test]
    fn f16_size_and_tolerance() {
        let ds = two_by_two();
        let b = encode_btf(&ds, Precision::F16).unwrap();
        // 24-byte header, 16 bytes per direction record, 2 pairs × 2×2 texels × 3 channels × 2 bytes.
        assert_eq!(b.len(), 24 + 2 * 16 + 2 * (2 * 2 * 3 * 2));
        let back = decode_btf(&b).unwrap();
        for (x, y) in back.slices().iter().zip(ds.slices()) {
            for (a, b) in x.pixels().iter().zip(y.pixels()) {
                assert!((a - b).abs() <= b.abs() * 2f32.powi(-10));
            }
        }
    }

    #[test]
    fn corrupted_inputs() {
        let good = minimal_file();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_btf(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode_btf(&bad), Err(Error::Format { offset: 4, .. })));
        assert!(matches!(decode_btf(&good[..good.len() - 1]), Err(Error::Format { .. })));
        assert!(matches!(decode_btf(&good[..10]), Err(Error::Format { offset: 8, .. })));
        let mut bad = good.clone();
        let n = bad.len();
        bad[n - 4..].copy_from_slice(&le32(f32::NAN));
        assert!(matches!(decode_btf(&bad), Err(Error::Validation(_))));
        bad[n - 4..].copy_from_slice(&le32(-1.0));
        assert!(matches!(decode_btf(&bad), Err(Error::Validation(_))));
    }

    #[test]
    fn f16_overflow_is_rejected() {
        let s = BtfSlice::new(1, 1, vec![1e6, 0.0, 0.0]).unwrap();
        let p = DirectionPair::from_degrees(0.0, 0.0, 0.0, 0.0).unwrap();
        let ds = BtfDataset::new(1.0, vec![p], vec![s]).unwrap();
        assert!(encode_btf(&ds, Precision::F16).is_err());
        assert!(encode_btf(&ds, Precision::F32).is_ok());
    }
}
