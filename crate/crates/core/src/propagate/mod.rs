//! Neural BTF bundles conditioned on arbitrary guidance images.

mod nbtx;

pub use nbtx::{decode_nbtx, encode_nbtx, export_neural_btf, import_neural_btf, nbtx_size, NBTX_HEADER_LEN};

use crate::btf::{area_resample, BtfSlice, Direction, DirectionPair, GuidanceImage};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, NeuralTexture, RendererMlp};
use crate::training::AugmentationConfig;

/// A neural texture with the renderer that decodes it, addressed with wrap.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralBtf {
    texture: NeuralTexture,
    renderer: RendererMlp,
    texel_size: f32,
}

impl NeuralBtf {
    pub fn new(texture: NeuralTexture, renderer: RendererMlp, texel_size: f32) -> Result<Self> {
        if texture.depth() != renderer.latent_dim() {
            return Err(Error::Dimension(format!(
                "texture has {} channels, renderer expects {}",
                texture.depth(),
                renderer.latent_dim()
            )));
        }
        if !(texel_size > 0.0 && texel_size.is_finite()) {
            return Err(Error::Validation(format!("texel size {texel_size} mm must be positive")));
        }
        Ok(Self {
            texture,
            renderer,
            texel_size,
        })
    }

    pub fn texture(&self) -> &NeuralTexture {
        &self.texture
    }

    pub fn renderer(&self) -> &RendererMlp {
        &self.renderer
    }

    pub fn texel_size(&self) -> f32 {
        self.texel_size
    }

    pub fn height(&self) -> usize {
        self.texture.height()
    }

    pub fn width(&self) -> usize {
        self.texture.width()
    }

    /// RGB at texture coordinates `(u, v)`; `u` runs along columns and `v`
    /// along rows, both wrapping modulo 1.
    pub fn query(&self, u: f64, v: f64, camera: Direction, light: Direction) -> Result<[f32; 3]> {
        let latent = self
            .texture
            .sample_bilinear(v * self.height() as f64, u * self.width() as f64);
        self.renderer.render_point(&latent, &DirectionPair::new(camera, light))
    }

    /// Many queries in one renderer pass; `uv` holds `(u, v)` pairs.
    pub fn query_batch(&self, uv: &[(f64, f64)], pairs: &[DirectionPair]) -> Result<Vec<[f32; 3]>> {
        if uv.len() != pairs.len() {
            return Err(Error::Dimension(format!("{} coordinates for {} direction pairs", uv.len(), pairs.len())));
        }
        let (h, w) = (self.height() as f64, self.width() as f64);
        let latents: Vec<f32> = uv
            .iter()
            .flat_map(|&(u, v)| self.texture.sample_bilinear(v * h, u * w))
            .collect();
        self.renderer.render_points(&latents, pairs)
    }

    pub fn render_slice(&self, pair: &DirectionPair) -> Result<BtfSlice> {
        self.renderer.render_slice(&self.texture, pair)
    }
}

fn texel_size_of(ckpt: &Checkpoint) -> f32 {
    ckpt.extra
        .get("data")
        .and_then(|d| d.get("texel_size"))
        .and_then(|v| v.as_float())
        .map_or(1.0, |v| v as f32)
}

/// Rescale range the checkpoint was trained with.
pub fn trained_scale_range(ckpt: &Checkpoint) -> [f32; 2] {
    ckpt.extra
        .get("train")
        .and_then(|t| t.get("augmentation"))
        .and_then(|a| a.get("scale_range"))
        .and_then(|r| r.as_array())
        .and_then(|r| match r.as_slice() {
            [lo, hi] => Some([lo.as_float()? as f32, hi.as_float()? as f32]),
            _ => None,
        })
        .unwrap_or(AugmentationConfig::default().scale_range)
}

/// Encodes `guidance` with the checkpoint's autoencoder; no retraining.
pub fn propagate(ckpt: &Checkpoint, guidance: &GuidanceImage) -> Result<NeuralBtf> {
    let texture = ckpt.autoencoder.encode(guidance)?;
    NeuralBtf::new(texture, ckpt.renderer.clone(), texel_size_of(ckpt))
}

/// Propagates guidance the caller declares cyclic; the bundle tiles
/// seamlessly whenever that holds.
pub fn make_tileable(ckpt: &Checkpoint, tileable_guidance: &GuidanceImage) -> Result<NeuralBtf> {
    propagate(ckpt, tileable_guidance)
}

/// Largest absolute RGB difference between a slice and the slice rendered
/// from the texture shifted by half its extent, shifted back.
pub fn seam_metric(nb: &NeuralBtf, pair: &DirectionPair) -> Result<f32> {
    let (dy, dx) = ((nb.height() / 2) as isize, (nb.width() / 2) as isize);
    let direct = nb.render_slice(pair)?;
    let shifted = nb.renderer.render_slice(&nb.texture.roll(dy, dx), pair)?;
    let (h, w) = (nb.height(), nb.width());
    let mut worst = 0.0f32;
    for r in 0..h {
        for c in 0..w {
            let a = direct.texel(r, c);
            let b = shifted.texel((r + dy as usize) % h, (c + dx as usize) % w);
            for k in 0..3 {
                worst = worst.max((a[k] - b[k]).abs());
            }
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Multires {
    pub bundle: NeuralBtf,
    /// Set when the scale lies outside the range seen in training.
    pub warning: Option<String>,
}

/// Area-downsamples `guidance` by `scale` and propagates the result.
pub fn make_multires(ckpt: &Checkpoint, guidance: &GuidanceImage, scale: f32) -> Result<Multires> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::Config(format!("scale {scale} must lie in (0, 1]")));
    }
    let stride = ckpt.autoencoder.stride();
    let (h, w) = (guidance.height(), guidance.width());
    let (oh, ow) = ((h as f32 * scale).round() as usize, (w as f32 * scale).round() as usize);
    if oh < stride || ow < stride {
        return Err(Error::Dimension(format!(
            "scale {scale} turns {h}×{w} into {oh}×{ow}, below one stride unit ({stride})"
        )));
    }
    let scaled = if scale == 1.0 {
        guidance.clone()
    } else {
        let px = area_resample(guidance.pixels(), h, w, 3, (0.0, 0.0), oh as f64 / h as f64, oh, ow);
        GuidanceImage::new(oh, ow, px.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())?
    };
    let [lo, hi] = trained_scale_range(ckpt);
    let warning = (scale < lo || scale > hi)
        .then(|| format!("scale {scale} lies outside the trained rescale range [{lo}, {hi}]; quality is not guaranteed"));
    let mut bundle = propagate(ckpt, &scaled)?;
    bundle.texel_size /= scale;
    Ok(Multires { bundle, warning })
}
