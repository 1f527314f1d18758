use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    /// Side of the square training crops, in texels after rescaling.
    pub crop_size: usize,
    /// Uniform range of the rescale factor shared by both views.
    pub scale_range: [f32; 2],
    /// Hue rotations are drawn from `[0, hue_max_deg)`.
    pub hue_max_deg: f32,
    pub blur_sigma_max: f32,
    pub noise_sigma_max: f32,
    /// Chance that each photometric op is applied to a given input view.
    pub photometric_probability: f32,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            crop_size: 64,
            scale_range: [0.7, 1.4],
            hue_max_deg: 360.0,
            blur_sigma_max: 1.5,
            noise_sigma_max: 0.02,
            photometric_probability: 0.5,
        }
    }
}

impl AugmentationConfig {
    /// Every magnitude at its identity value.
    pub fn identity(crop_size: usize) -> Self {
        Self {
            crop_size,
            scale_range: [1.0, 1.0],
            hue_max_deg: 0.0,
            blur_sigma_max: 0.0,
            noise_sigma_max: 0.0,
            photometric_probability: 0.0,
        }
    }

    pub fn validate(&self, stride: usize) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if self.crop_size == 0 || self.crop_size % stride != 0 {
            return Err(Error::Config(format!(
                "crop_size {} must be a positive multiple of the autoencoder stride {stride}",
                self.crop_size
            )));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("scale_range [{lo}, {hi}] must be positive and ordered")));
        }
        let mags = [
            ("hue_max_deg", self.hue_max_deg),
            ("blur_sigma_max", self.blur_sigma_max),
            ("noise_sigma_max", self.noise_sigma_max),
        ];
        for (name, v) in mags {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.photometric_probability) {
            return Err(Error::Config(format!(
                "photometric_probability {} outside [0, 1]",
                self.photometric_probability
            )));
        }
        Ok(())
    }

    /// Rejects slices too small to hold a crop at the smallest scale.
    pub fn check_fits(&self, height: usize, width: usize) -> Result<()> {
        let footprint = self.crop_size as f32 / self.scale_range[0];
        if footprint > height.min(width) as f32 {
            return Err(Error::Config(format!(
                "crop {} at scale {} covers {footprint:.1} texels but slices are {height}×{width}",
                self.crop_size, self.scale_range[0]
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub l1: f32,
    pub style: f32,
    pub freq: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l1: 1.0,
            style: 0.1,
            freq: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.l1, self.style, self.freq];
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative, got {w:?}")));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::Config("all loss weights are zero".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Floor of the cosine schedule, reached at the last step.
    pub lr_min: f64,
    /// Intermediate checkpoints are written every this many steps; 0 disables them.
    pub checkpoint_every: u64,
    pub augmentation: AugmentationConfig,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 4,
            lr: 1e-3,
            lr_min: 1e-4,
            checkpoint_every: 1000,
            augmentation: AugmentationConfig::default(),
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, stride: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rates must satisfy 0 ≤ lr_min ≤ lr, got lr {} lr_min {}",
                self.lr, self.lr_min
            )));
        }
        self.augmentation.validate(stride)?;
        self.loss.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = TrainConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), cfg);
        assert!(toml::from_str::<TrainConfig>("stepz = 3").is_err());
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate(8).is_ok());
        let mut c = TrainConfig::default();
        c.augmentation.crop_size = 20;
        assert!(matches!(c.validate(8), Err(Error::Config(_))));
        let mut c = TrainConfig::default();
        c.loss = LossWeights { l1: 0.0, style: 0.0, freq: 0.0 };
        assert!(c.validate(8).is_err());
        let a = AugmentationConfig::default();
        assert!(a.check_fits(32, 32).is_err());
        assert!(AugmentationConfig { crop_size: 16, ..a }.check_fits(32, 32).is_ok());
    }
}
