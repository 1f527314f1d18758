//! Pointwise sine-activated decoder: `(latent, ω_o, ω_i) → RGB`.

use nbtf_tensor::init::init_siren;
use nbtf_tensor::{Conv2dSpec, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use super::params::{Conv, Norm, ParamSet};
use super::texture::NeuralTexture;
use super::{ModelConfig, RendererConfig};
use crate::btf::{BtfSlice, DirectionPair};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
struct Hidden {
    linear: Conv,
    norm: Norm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RendererMlp {
    latent_dim: usize,
    config: RendererConfig,
    hidden: Vec<Hidden>,
    output: Conv,
    params: ParamSet,
}

fn linear(params: &mut ParamSet, name: &str, cout: usize, cin: usize, layer: usize, omega0: f64, rng: &mut ChaCha8Rng) -> Conv {
    let w = init_siren(&[cout, cin, 1, 1], layer, cin, omega0, rng).expect("positive extents");
    Conv {
        weight: params.add(format!("{name}.weight"), w),
        bias: Some(params.add(format!("{name}.bias"), Tensor::zeros([cout]))),
        spec: Conv2dSpec::circular(),
    }
}

impl RendererMlp {
    pub fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let r = &cfg.renderer;
        let mut params = ParamSet::default();
        let mut hidden = Vec::with_capacity(r.hidden_layers);
        let mut cin = cfg.latent_dim + 4;
        for l in 0..r.hidden_layers {
            let lin = linear(&mut params, &format!("renderer.hidden{l}"), r.hidden_width, cin, l, r.omega0 as f64, rng);
            let norm = Norm {
                gamma: params.add(
                    format!("renderer.hidden{l}.norm.gamma"),
                    Tensor::full([r.hidden_width], r.ln_gamma_init),
                ),
                beta: params.add(format!("renderer.hidden{l}.norm.beta"), Tensor::zeros([r.hidden_width])),
            };
            hidden.push(Hidden { linear: lin, norm });
            cin = r.hidden_width;
        }
        let output = linear(&mut params, "renderer.output", 3, cin, r.hidden_layers.max(1), r.omega0 as f64, rng);
        Ok(Self {
            latent_dim: cfg.latent_dim,
            config: r.clone(),
            hidden,
            output,
            params,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn config(&self) -> &RendererConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn count_parameters(&self) -> usize {
        self.params.count()
    }

    /// `input` is `N×(D+4)×H×W`: latent channels then projected directions.
    pub fn forward(&self, t: &mut Tape, p: &[Var], input: Var) -> Result<Var> {
        let mut h = input;
        for (l, layer) in self.hidden.iter().enumerate() {
            let z = layer.linear.apply(t, p, h)?;
            let z = layer.norm.apply(t, p, z)?;
            let z = t.sine(z, self.config.omega0)?;
            // identity residual between equal-width hidden layers
            h = if l == 0 { z } else { t.add(h, z)? };
        }
        self.output.apply(t, p, h)
    }

    /// Builds the renderer input for one texture and per-item direction pairs.
    pub fn input_tensor(texture: &Tensor, pairs: &[DirectionPair]) -> Result<Tensor> {
        let (n, d, h, w) = texture.dims4("renderer input")?;
        if pairs.len() != n {
            return Err(Error::Dimension(format!("{} direction pairs for a batch of {n}", pairs.len())));
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * (d + 4) * hw);
        for (i, pair) in pairs.iter().enumerate() {
            data.extend_from_slice(&texture.data()[i * d * hw..(i + 1) * d * hw]);
            for v in pair.projected() {
                data.extend(std::iter::repeat_n(v, hw));
            }
        }
        Ok(Tensor::new([n, d + 4, h, w], data)?)
    }

    /// Unclamped network output for an `N×D×H×W` latent batch.
    pub fn render_raw(&self, texture: &Tensor, pairs: &[DirectionPair]) -> Result<Tensor> {
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, false);
        let x = t.constant(Self::input_tensor(texture, pairs)?);
        let y = self.forward(&mut t, &p, x)?;
        Ok(t.value(y).clone())
    }

    /// RGB for each `(latent, pair)` sample, clamped at zero. `latents` holds
    /// `n·D` values, one latent after another.
    pub fn render_points(&self, latents: &[f32], pairs: &[DirectionPair]) -> Result<Vec<[f32; 3]>> {
        let d = self.latent_dim;
        if latents.len() != pairs.len() * d {
            return Err(Error::Dimension(format!(
                "{} latent values for {} samples of depth {d}",
                latents.len(),
                pairs.len()
            )));
        }
        let n = pairs.len();
        // samples laid out along the width axis of a single image
        let mut data = vec![0.0; (d + 4) * n];
        for (s, pair) in pairs.iter().enumerate() {
            for c in 0..d {
                data[c * n + s] = latents[s * d + c];
            }
            for (c, v) in pair.projected().into_iter().enumerate() {
                data[(d + c) * n + s] = v;
            }
        }
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, false);
        let x = t.constant(Tensor::new([1, d + 4, 1, n], data)?);
        let y = self.forward(&mut t, &p, x)?;
        let out = t.value(y).data();
        Ok((0..n).map(|s| [0, 1, 2].map(|c| out[c * n + s].max(0.0))).collect())
    }

    pub fn render_point(&self, latent: &[f32], pair: &DirectionPair) -> Result<[f32; 3]> {
        Ok(self.render_points(latent, std::slice::from_ref(pair))?[0])
    }

    /// One fully-convolutional pass over the whole texture.
    pub fn render_slice(&self, texture: &NeuralTexture, pair: &DirectionPair) -> Result<BtfSlice> {
        if texture.depth() != self.latent_dim {
            return Err(Error::Dimension(format!(
                "texture depth {} but renderer expects {}",
                texture.depth(),
                self.latent_dim
            )));
        }
        let y = self.render_raw(texture.as_tensor(), std::slice::from_ref(pair))?;
        let (h, w) = (texture.height(), texture.width());
        let hw = h * w;
        let mut px = Vec::with_capacity(hw * 3);
        for i in 0..hw {
            for c in 0..3 {
                px.push(y.data()[c * hw + i].max(0.0));
            }
        }
        BtfSlice::new(h, w, px).map_err(|e| Error::Numeric(format!("renderer output: {e}")))
    }
}
