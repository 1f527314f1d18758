use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    /// Channel width per resolution level; the level count is the length and
    /// the total stride is `2^levels`.
    pub widths: Vec<usize>,
    /// Depthwise kernel size inside blocks and downsamplers.
    pub kernel: usize,
    /// Hidden expansion factor of the pointwise pair in each block.
    pub expansion: usize,
    /// Initial value of the learned per-channel residual scale.
    pub residual_scale: f32,
    /// Channel reduction of the attention MLP.
    pub attention_reduction: usize,
    /// Kernel size of the spatial attention convolution.
    pub spatial_kernel: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 64],
            kernel: 5,
            expansion: 4,
            residual_scale: 0.1,
            attention_reduction: 8,
            spatial_kernel: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RendererConfig {
    pub hidden_width: usize,
    /// Number of hidden sine layers; zero gives a single linear map.
    pub hidden_layers: usize,
    pub omega0: f32,
    /// Initial layer-norm gain in front of each sine; the sine argument starts
    /// at `omega0 · gamma` standard deviations.
    pub ln_gamma_init: f32,
}

impl Default for RendererConfig {
    fn default() -> Self {
        Self {
            hidden_width: 32,
            hidden_layers: 3,
            omega0: 30.0,
            ln_gamma_init: 1.0 / 30.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Neural texture channels.
    pub latent_dim: usize,
    pub autoencoder: AutoencoderConfig,
    pub renderer: RendererConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 14,
            autoencoder: AutoencoderConfig::default(),
            renderer: RendererConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.autoencoder;
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if a.widths.is_empty() || a.widths.contains(&0) {
            return Err(Error::Config("autoencoder widths must be non-empty and positive".into()));
        }
        for w in a.widths.windows(2) {
            if w[1] % w[0] != 0 {
                return Err(Error::Config(format!(
                    "width {} is not a multiple of the previous width {} (downsampling is depthwise)",
                    w[1], w[0]
                )));
            }
        }
        if a.kernel % 2 == 0 || a.spatial_kernel % 2 == 0 {
            return Err(Error::Config("kernel sizes must be odd".into()));
        }
        if a.expansion == 0 || a.attention_reduction == 0 {
            return Err(Error::Config("expansion and attention reduction must be positive".into()));
        }
        let r = &self.renderer;
        if r.hidden_width == 0 && r.hidden_layers > 0 {
            return Err(Error::Config("renderer hidden width must be positive".into()));
        }
        if !(r.omega0.is_finite() && r.omega0 > 0.0 && r.ln_gamma_init.is_finite()) {
            return Err(Error::Config("renderer omega0 must be positive and finite".into()));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        1 << self.autoencoder.widths.len()
    }
}
