//! Two-view training pairs: a shared geometric transform, photometric
//! jitter on the input view only.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::AugmentationConfig;
use crate::btf::{area_resample, tonemap, BtfDataset, BtfSlice, DirectionPair, GuidanceImage};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    /// Tone-mapped, photometrically perturbed crop fed to the autoencoder.
    pub input_view: GuidanceImage,
    /// Linear radiance crop under `target_pair`, aligned with `input_view`.
    pub target_view: BtfSlice,
    pub input_pair: DirectionPair,
    pub target_pair: DirectionPair,
}

pub fn sample_training_pair<R: Rng + ?Sized>(
    dataset: &BtfDataset,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> Result<TrainingPair> {
    let (h, w) = (dataset.height(), dataset.width());
    cfg.check_fits(h, w)?;
    let n = dataset.len();
    let target = rng.random_range(0..n);
    let input = rng.random_range(0..n);
    let [lo, hi] = cfg.scale_range;
    let scale = if lo < hi { rng.random_range(lo..=hi) } else { lo } as f64;
    let origin = (rng.random_range(0..h) as f64, rng.random_range(0..w) as f64);
    let crop = cfg.crop_size;
    let view = |i: usize| area_resample(dataset.slices()[i].pixels(), h, w, 3, origin, scale, crop, crop);

    let target_view = BtfSlice::new(crop, crop, view(target))?;
    let mut px: Vec<f32> = view(input).into_iter().map(tonemap).collect();
    let p = cfg.photometric_probability;
    if cfg.hue_max_deg > 0.0 && rng.random::<f32>() < p {
        hue_rotate(&mut px, rng.random_range(0.0..cfg.hue_max_deg));
    }
    if cfg.blur_sigma_max > 0.0 && rng.random::<f32>() < p {
        gaussian_blur(&mut px, crop, crop, rng.random_range(0.0..=cfg.blur_sigma_max));
    }
    if cfg.noise_sigma_max > 0.0 && rng.random::<f32>() < p {
        let sigma = rng.random_range(0.0..=cfg.noise_sigma_max);
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
        for v in &mut px {
            *v += normal.sample(rng);
        }
    }
    for v in &mut px {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(TrainingPair {
        input_view: GuidanceImage::new(crop, crop, px)?,
        target_view,
        input_pair: dataset.pairs()[input],
        target_pair: dataset.pairs()[target],
    })
}

/// Rotates every RGB triple about the gray axis by `degrees`, then clamps to `[0, 1]`.
pub fn hue_rotate(rgb: &mut [f32], degrees: f32) {
    let (s, c) = (degrees as f64).to_radians().sin_cos();
    let k = 1.0 / 3.0f64.sqrt();
    let t = 1.0 - c;
    // Rodrigues' formula with the unit axis (1,1,1)/√3
    let diag = c + t * k * k;
    let (plus, minus) = (t * k * k + s * k, t * k * k - s * k);
    let m = [[diag, minus, plus], [plus, diag, minus], [minus, plus, diag]];
    for px in rgb.chunks_exact_mut(3) {
        let v = [px[0] as f64, px[1] as f64, px[2] as f64];
        for (o, row) in px.iter_mut().zip(&m) {
            *o = (row[0] * v[0] + row[1] * v[1] + row[2] * v[2]).clamp(0.0, 1.0) as f32;
        }
    }
}

/// Separable Gaussian blur of an interleaved RGB image with clamp-to-edge reads.
pub fn gaussian_blur(rgb: &mut [f32], height: usize, width: usize, sigma: f32) {
    if sigma < 1e-3 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f32> = (-radius..=radius)
        .map(|d| (-0.5 * (d as f32 / sigma).powi(2)).exp())
        .collect();
    let norm: f32 = taps.iter().sum();
    let taps: Vec<f32> = taps.iter().map(|t| t / norm).collect();
    let pass = |src: &[f32], along_rows: bool| {
        let mut out = vec![0.0; src.len()];
        for r in 0..height {
            for c in 0..width {
                for ch in 0..3 {
                    let mut acc = 0.0;
                    for (k, t) in taps.iter().enumerate() {
                        let d = k as isize - radius;
                        let (rr, cc) = if along_rows {
                            (r, (c as isize + d).clamp(0, width as isize - 1) as usize)
                        } else {
                            ((r as isize + d).clamp(0, height as isize - 1) as usize, c)
                        };
                        acc += t * src[(rr * width + cc) * 3 + ch];
                    }
                    out[(r * width + c) * 3 + ch] = acc;
                }
            }
        }
        out
    };
    let tmp = pass(rgb, true);
    rgb.copy_from_slice(&pass(&tmp, false));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::btf::synth::{synth_preset, Preset};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_slice(ds: &BtfDataset, i: usize) -> BtfDataset {
        let keep = ds.pairs()[i];
        ds.filter(|p| *p == keep).unwrap()
    }

    #[test]
    fn identity_pipeline_gives_tonemapped_target() {
        let ds = single_slice(&synth_preset(Preset::GgxTextured, 16).unwrap(), 10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pair = sample_training_pair(&ds, &AugmentationConfig::identity(8), &mut rng).unwrap();
        let expect: Vec<f32> = pair.target_view.pixels().iter().map(|v| tonemap(*v)).collect();
        assert_eq!(pair.input_view.pixels(), &expect[..]);
        // the crop is a plain wrapped window of the slice
        let s = &ds.slices()[0];
        let first = pair.target_view.texel(0, 0);
        assert!((0..16).any(|r| (0..16).any(|c| s.texel(r, c) == first)));
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let ds = synth_preset(Preset::GgxTextured, 16).unwrap();
        let cfg = AugmentationConfig {
            crop_size: 8,
            ..Default::default()
        };
        let draw = || sample_training_pair(&ds, &cfg, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(draw(), draw());
    }

    #[test]
    fn hue_wheel_is_periodic() {
        let px: Vec<f32> = (0..30).map(|i| (i as f32 * 0.37).sin().abs()).collect();
        let (mut a, mut b) = (px.clone(), px.clone());
        hue_rotate(&mut a, 0.0);
        hue_rotate(&mut b, 360.0);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5);
        }
        assert_eq!(a, px);
        let mut gray = vec![0.4f32; 6];
        hue_rotate(&mut gray, 123.0);
        assert!(gray.iter().all(|v| (v - 0.4).abs() < 1e-6));
        let mut red = vec![1.0, 0.0, 0.0];
        hue_rotate(&mut red, 120.0);
        assert!((red[1] - 1.0).abs() < 1e-6 && red[0].abs() < 1e-6);
    }

    #[test]
    fn blur_preserves_constants_and_mass() {
        let mut flat = vec![0.3f32; 5 * 7 * 3];
        gaussian_blur(&mut flat, 5, 7, 1.2);
        assert!(flat.iter().all(|v| (v - 0.3).abs() < 1e-6));
        let mut spike = vec![0.0f32; 9 * 9 * 3];
        spike[(4 * 9 + 4) * 3] = 1.0;
        gaussian_blur(&mut spike, 9, 9, 0.8);
        let total: f32 = spike.iter().step_by(3).sum();
        assert!((total - 1.0).abs() < 1e-5);
        assert!(spike[(4 * 9 + 4) * 3] < 1.0);
    }

    #[test]
    fn crop_too_large_is_a_config_error() {
        let ds = synth_preset(Preset::Lambertian, 32).unwrap();
        let err = sample_training_pair(&ds, &AugmentationConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn geometric_alignment(seed in any::<u64>(), lo in 0.7f32..1.0, span in 0.0f32..0.4) {
            let ds = single_slice(&synth_preset(Preset::GgxTextured, 16).unwrap(), 20);
            let cfg = AugmentationConfig { scale_range: [lo, lo + span], ..AugmentationConfig::identity(8) };
            let pair = sample_training_pair(&ds, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let expect: Vec<f32> = pair.target_view.pixels().iter().map(|v| tonemap(*v)).collect();
            prop_assert_eq!(pair.input_view.pixels(), &expect[..]);
        }
    }
}
