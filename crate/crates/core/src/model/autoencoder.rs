//! Fully-convolutional U-Net mapping a guidance image to a neural texture.

use nbtf_tensor::init::init_orthogonal;
use nbtf_tensor::{Conv2dSpec, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use super::params::{Conv, Norm, ParamSet};
use super::texture::NeuralTexture;
use super::ModelConfig;
use crate::btf::GuidanceImage;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
struct Block {
    depthwise: Conv,
    norm: Norm,
    expand: Conv,
    project: Conv,
    scale: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Attention {
    mlp_in: Conv,
    mlp_out: Conv,
    spatial: Conv,
}

#[derive(Clone, Debug, PartialEq)]
struct Up {
    reduce: Conv,
    skip: Conv,
    block: Block,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    stride: usize,
    latent_dim: usize,
    stem: Conv,
    encoder: Vec<Block>,
    down: Vec<Conv>,
    bottleneck: Block,
    attention: Attention,
    /// Coarsest level first.
    up: Vec<Up>,
    head: Conv,
    params: ParamSet,
}

struct Builder<'a> {
    params: ParamSet,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize, spec: Conv2dSpec) -> Conv {
        let w = init_orthogonal(&[cout, cin / spec.groups, k, k], self.rng).expect("positive extents");
        Conv {
            weight: self.params.add(format!("{name}.weight"), w),
            bias: Some(self.params.add(format!("{name}.bias"), Tensor::zeros([cout]))),
            spec,
        }
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        Norm {
            gamma: self.params.add(format!("{name}.gamma"), Tensor::ones([c])),
            beta: self.params.add(format!("{name}.beta"), Tensor::zeros([c])),
        }
    }

    fn block(&mut self, name: &str, c: usize, cfg: &ModelConfig) -> Block {
        let a = &cfg.autoencoder;
        let hidden = c * a.expansion;
        Block {
            depthwise: self.conv(&format!("{name}.dw"), c, c, a.kernel, Conv2dSpec::circular().with_groups(c)),
            norm: self.norm(&format!("{name}.norm"), c),
            expand: self.conv(&format!("{name}.expand"), hidden, c, 1, Conv2dSpec::circular()),
            project: self.conv(&format!("{name}.project"), c, hidden, 1, Conv2dSpec::circular()),
            scale: self
                .params
                .add(format!("{name}.scale"), Tensor::full([1, c, 1, 1], a.residual_scale)),
        }
    }
}

impl Block {
    fn apply(&self, t: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let y = self.depthwise.apply(t, p, x)?;
        let y = self.norm.apply(t, p, y)?;
        let y = self.expand.apply(t, p, y)?;
        let y = t.gelu(y)?;
        let y = self.project.apply(t, p, y)?;
        let y = t.mul(y, p[self.scale])?;
        Ok(t.add(x, y)?)
    }
}

impl Attention {
    /// Channel gate from pooled statistics, then a spatial gate.
    fn apply(&self, t: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let avg = t.global_avg_pool(x)?;
        let max = t.global_max_pool(x)?;
        let mut gate = None;
        for pooled in [avg, max] {
            let h = self.mlp_in.apply(t, p, pooled)?;
            let h = t.gelu(h)?;
            let h = self.mlp_out.apply(t, p, h)?;
            gate = Some(match gate {
                None => h,
                Some(g) => t.add(g, h)?,
            });
        }
        let gate = t.sigmoid(gate.expect("two pooled branches"))?;
        let x = t.mul(x, gate)?;
        let mean = t.channel_mean(x)?;
        let max = t.channel_max(x)?;
        let s = t.concat_channels(&[mean, max])?;
        let s = self.spatial.apply(t, p, s)?;
        let s = t.sigmoid(s)?;
        Ok(t.mul(x, s)?)
    }
}

impl Autoencoder {
    pub fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let a = &cfg.autoencoder;
        let widths = &a.widths;
        let last = *widths.last().expect("validated non-empty");
        let mut b = Builder {
            params: ParamSet::default(),
            rng,
        };
        let stem = b.conv("ae.stem", widths[0], 3, 3, Conv2dSpec::circular());
        let mut encoder = Vec::new();
        let mut down = Vec::new();
        for (l, &w) in widths.iter().enumerate() {
            encoder.push(b.block(&format!("ae.enc{l}"), w, cfg));
            let next = widths.get(l + 1).copied().unwrap_or(last);
            let spec = Conv2dSpec::circular().with_stride(2).with_groups(w);
            down.push(b.conv(&format!("ae.down{l}"), next, w, a.kernel, spec));
        }
        let bottleneck = b.block("ae.bottleneck", last, cfg);
        let mid = (last / a.attention_reduction).max(1);
        let attention = Attention {
            mlp_in: b.conv("ae.attn.mlp_in", mid, last, 1, Conv2dSpec::circular()),
            mlp_out: b.conv("ae.attn.mlp_out", last, mid, 1, Conv2dSpec::circular()),
            spatial: b.conv("ae.attn.spatial", 1, 2, a.spatial_kernel, Conv2dSpec::circular()),
        };
        let mut up = Vec::new();
        let mut cin = last;
        for l in (0..widths.len()).rev() {
            let w = widths[l];
            up.push(Up {
                reduce: b.conv(&format!("ae.up{l}.reduce"), w, cin, 1, Conv2dSpec::circular()),
                skip: b.conv(&format!("ae.up{l}.skip"), w, w, 1, Conv2dSpec::circular()),
                block: b.block(&format!("ae.dec{l}"), w, cfg),
            });
            cin = w;
        }
        let head = b.conv("ae.head", cfg.latent_dim, widths[0], 1, Conv2dSpec::circular());
        Ok(Self {
            stride: cfg.stride(),
            latent_dim: cfg.latent_dim,
            stem,
            encoder,
            down,
            bottleneck,
            attention,
            up,
            head,
            params: b.params,
        })
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
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

    /// `N×3×H×W` guidance batch to `N×D×H×W` latents.
    pub fn forward(&self, t: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let (_, c, h, w) = t.value(x).dims4("autoencoder input")?;
        if c != 3 {
            return Err(Error::Dimension(format!("guidance needs 3 channels, got {c}")));
        }
        if h % self.stride != 0 || w % self.stride != 0 {
            return Err(Error::Dimension(format!(
                "input {h}×{w} is not a multiple of the total stride {}",
                self.stride
            )));
        }
        let mut x = self.stem.apply(t, p, x)?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        for (block, down) in self.encoder.iter().zip(&self.down) {
            x = block.apply(t, p, x)?;
            skips.push(x);
            x = down.apply(t, p, x)?;
        }
        x = self.bottleneck.apply(t, p, x)?;
        x = self.attention.apply(t, p, x)?;
        for up in &self.up {
            let skip = skips.pop().expect("one skip per level");
            // 1×1 conv commutes with nearest upsampling, so reduce first
            let y = up.reduce.apply(t, p, x)?;
            let y = t.upsample_nearest(y, 2)?;
            let s = up.skip.apply(t, p, skip)?;
            let y = t.add(y, s)?;
            x = up.block.apply(t, p, y)?;
        }
        self.head.apply(t, p, x)
    }

    /// Guidance as a `1×3×H×W` tensor.
    pub fn guidance_tensor(image: &GuidanceImage) -> Tensor {
        let (h, w) = (image.height(), image.width());
        let hw = h * w;
        let px = image.pixels();
        Tensor::from_fn([1, 3, h, w], |i| px[(i % hw) * 3 + i / hw])
    }

    pub fn encode(&self, image: &GuidanceImage) -> Result<NeuralTexture> {
        image.check_stride(self.stride)?;
        let mut t = Tape::new();
        let p = self.params.bind(&mut t, false);
        let x = t.constant(Self::guidance_tensor(image));
        let y = self.forward(&mut t, &p, x)?;
        NeuralTexture::from_tensor(t.value(y).clone())
    }
}
