//! NBTX bundles, self-contained for external renderers.
//!
//! ```text
//! "NBTX" | version u16 = 1 | H u32 | W u32 | D u16 | texel_size_mm f32 | flags u16 (bit 0: f16 texture)
//! texture [row][col][channel]
//! renderer: config length u32 | model config (UTF-8 TOML) | NBCK tensor records
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::NeuralBtf;
use crate::btf::Precision;
use crate::bytes::{self, Reader};
use crate::error::{Error, Result};
use crate::model::{fill_tensors, read_tensors, write_tensors, ModelConfig, NeuralTexture, RendererMlp};

const MAGIC: &[u8; 4] = b"NBTX";
const VERSION: u16 = 1;
const FLAG_F16: u16 = 1;
pub const NBTX_HEADER_LEN: usize = 22;

fn renderer_config(renderer: &RendererMlp) -> ModelConfig {
    ModelConfig {
        latent_dim: renderer.latent_dim(),
        renderer: renderer.config().clone(),
        ..ModelConfig::default()
    }
}

fn renderer_payload(renderer: &RendererMlp) -> Result<Vec<u8>> {
    let text = toml::to_string(&renderer_config(renderer)).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::new();
    bytes::put_u32(&mut out, bytes::u32_of(text.len(), "config length")?);
    out.extend_from_slice(text.as_bytes());
    write_tensors(&mut out, &[renderer.params()])?;
    Ok(out)
}

/// Exact byte size of the encoded bundle.
pub fn nbtx_size(nb: &NeuralBtf, precision: Precision) -> Result<usize> {
    let t = nb.texture();
    let per = match precision {
        Precision::F16 => 2,
        Precision::F32 => 4,
    };
    Ok(NBTX_HEADER_LEN + t.height() * t.width() * t.depth() * per + renderer_payload(nb.renderer())?.len())
}

pub fn encode_nbtx(nb: &NeuralBtf, precision: Precision) -> Result<Vec<u8>> {
    let t = nb.texture();
    let mut out = MAGIC.to_vec();
    bytes::put_u16(&mut out, VERSION);
    bytes::put_u32(&mut out, bytes::u32_of(t.height(), "height")?);
    bytes::put_u32(&mut out, bytes::u32_of(t.width(), "width")?);
    let depth = u16::try_from(t.depth()).map_err(|_| Error::Validation(format!("depth {} exceeds u16", t.depth())))?;
    bytes::put_u16(&mut out, depth);
    out.extend_from_slice(&nb.texel_size().to_le_bytes());
    let values = t.to_interleaved();
    match precision {
        Precision::F16 => {
            bytes::put_u16(&mut out, FLAG_F16);
            bytes::put_f16s(&mut out, &values)?;
        }
        Precision::F32 => {
            bytes::put_u16(&mut out, 0);
            bytes::put_f32s(&mut out, &values);
        }
    }
    out.extend_from_slice(&renderer_payload(nb.renderer())?);
    Ok(out)
}

pub fn decode_nbtx(buf: &[u8]) -> Result<NeuralBtf> {
    let mut r = Reader::new(buf);
    r.magic(MAGIC)?;
    let at = r.pos();
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(at, format!("unsupported NBTX version {version}")));
    }
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let d = r.u16("depth")? as usize;
    let at = r.pos();
    let texel_size = r.f32("texel size")?;
    if !(texel_size > 0.0 && texel_size.is_finite()) {
        return Err(Error::format(at, format!("texel size {texel_size} must be positive")));
    }
    let at = r.pos();
    let flags = r.u16("flags")?;
    if flags & !FLAG_F16 != 0 {
        return Err(Error::format(at, format!("unknown flags {flags:#06x}")));
    }
    let at = r.pos();
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(d))
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::format(at, format!("invalid texture extent {h}×{w}×{d}")))?;
    let values = if flags & FLAG_F16 != 0 {
        r.f16s(n, "texture payload")?
    } else {
        r.f32s(n, "texture payload")?
    };
    let texture = NeuralTexture::from_interleaved(h, w, d, &values).map_err(|e| Error::format(at, e.to_string()))?;

    let len = r.u32("config length")? as usize;
    let at = r.pos();
    let text = std::str::from_utf8(r.take(len, "renderer config")?)
        .map_err(|e| Error::format(at, format!("renderer config is not UTF-8: {e}")))?;
    let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::format(at, format!("renderer config: {e}")))?;
    // weights are overwritten below; the seed only fixes the shapes
    let mut renderer =
        RendererMlp::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).map_err(|e| Error::format(at, e.to_string()))?;
    let tensors = read_tensors(&mut r)?;
    fill_tensors(&mut [renderer.params_mut()], tensors)?;
    r.finish()?;
    NeuralBtf::new(texture, renderer, texel_size).map_err(|e| Error::format(at, e.to_string()))
}

pub fn export_neural_btf(nb: &NeuralBtf, path: impl AsRef<Path>, precision: Precision) -> Result<()> {
    bytes::write_file(path.as_ref(), &encode_nbtx(nb, precision)?)
}

pub fn import_neural_btf(path: impl AsRef<Path>) -> Result<NeuralBtf> {
    decode_nbtx(&bytes::read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::btf::{Direction, DirectionPair};
    use crate::model::Checkpoint;

    fn bundle(h: usize, w: usize) -> NeuralBtf {
        let ck = Checkpoint::init(ModelConfig::default(), 11).unwrap();
        let hwd: Vec<f32> = (0..h * w * 14).map(|i| ((i as f32) * 0.013).sin()).collect();
        let tex = NeuralTexture::from_interleaved(h, w, 14, &hwd).unwrap();
        NeuralBtf::new(tex, ck.renderer, 0.25).unwrap()
    }

    #[test]
    fn f32_round_trip_is_bit_exact() {
        let nb = bundle(4, 6);
        let buf = encode_nbtx(&nb, Precision::F32).unwrap();
        let back = decode_nbtx(&buf).unwrap();
        assert_eq!(back, nb);
        let (c, l) = (Direction::new(20.0, 10.0).unwrap(), Direction::new(60.0, 300.0).unwrap());
        for (u, v) in [(0.1, 0.2), (0.77, 0.5)] {
            let a = nb.query(u, v, c, l).unwrap();
            let b = back.query(u, v, c, l).unwrap();
            assert_eq!(a.map(f32::to_bits), b.map(f32::to_bits));
        }
        assert_eq!(encode_nbtx(&back, Precision::F32).unwrap(), buf);
    }

    #[test]
    fn size_arithmetic() {
        let nb = bundle(8, 8);
        let buf = encode_nbtx(&nb, Precision::F16).unwrap();
        let renderer = renderer_payload(nb.renderer()).unwrap().len();
        assert_eq!(buf.len(), NBTX_HEADER_LEN + 8 * 8 * 14 * 2 + renderer);
        assert_eq!(buf.len(), nbtx_size(&nb, Precision::F16).unwrap());
        assert_eq!(encode_nbtx(&nb, Precision::F32).unwrap().len(), nbtx_size(&nb, Precision::F32).unwrap());
        // tensor records carry the 3011 weights as f32 plus names and extents
        assert!(renderer > 3011 * 4);
        let back = decode_nbtx(&buf).unwrap();
        let err = back
            .texture()
            .as_tensor()
            .max_abs_diff(nb.texture().as_tensor());
        assert!(err < 1e-3);
        assert_eq!(back.renderer(), nb.renderer());
        let pair = DirectionPair::from_degrees(0.0, 0.0, 30.0, 0.0).unwrap();
        assert!(back.render_slice(&pair).is_ok());
    }

    #[test]
    fn corrupted_bundles_are_rejected() {
        let buf = encode_nbtx(&bundle(2, 2), Precision::F32).unwrap();
        let fmt = |b: &[u8]| matches!(decode_nbtx(b), Err(Error::Format { .. }));
        assert!(fmt(&buf[..buf.len() - 1]));
        assert!(fmt(&buf[..10]));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(decode_nbtx(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = buf.clone();
        bad[20] = 0xff;
        assert!(matches!(decode_nbtx(&bad), Err(Error::Format { offset: 20, .. })));
        let mut bad = buf.clone();
        bad.push(0);
        assert!(fmt(&bad));
        let mut bad = buf;
        bad[16..20].copy_from_slice(&(-1.0f32).to_le_bytes());
        assert!(matches!(decode_nbtx(&bad), Err(Error::Format { offset: 16, .. })));
    }
}
