//! The guidance autoencoder, the pointwise renderer, and their checkpoints.

mod autoencoder;
mod checkpoint;
mod config;
mod params;
mod renderer;
mod texture;

pub use autoencoder::Autoencoder;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub(crate) use checkpoint::{fill as fill_tensors, read_tensors, write_tensors};
pub use config::{AutoencoderConfig, ModelConfig, RendererConfig};
pub use params::ParamSet;
pub use renderer::RendererMlp;
pub use texture::NeuralTexture;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::btf::{DirectionPair, GuidanceImage};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn guidance(size: usize, seed: u64) -> GuidanceImage {
        let mut r = rng(seed);
        GuidanceImage::new(size, size, (0..size * size * 3).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()
    }

    /// Counts from the layer list, without touching the parameter store.
    fn autoencoder_hand_count(widths: &[usize], d: usize) -> usize {
        let conv = |cout: usize, cin_per_group: usize, k: usize| cout * cin_per_group * k * k + cout;
        let block = |c: usize| conv(c, 1, 5) + 2 * c + conv(4 * c, c, 1) + conv(c, 4 * c, 1) + c;
        let last = *widths.last().unwrap();
        let mut n = conv(widths[0], 3, 3);
        for (l, &w) in widths.iter().enumerate() {
            let next = widths.get(l + 1).copied().unwrap_or(last);
            n += block(w) + conv(next, 1, 5);
        }
        n += block(last);
        n += conv(last / 8, last, 1) + conv(last, last / 8, 1) + conv(1, 2, 7);
        let mut cin = last;
        for &w in widths.iter().rev() {
            n += conv(w, cin, 1) + conv(w, w, 1) + block(w);
            cin = w;
        }
        n + conv(d, widths[0], 1)
    }

    #[test]
    fn renderer_parameter_anchor() {
        let cfg = ModelConfig::default();
        let r = RendererMlp::new(&cfg, &mut rng(0)).unwrap();
        assert_eq!(r.count_parameters(), 3011);
        assert_eq!(r.count_parameters(), (18 * 32 + 32) + 2 * (32 * 32 + 32) + (32 * 3 + 3) + 3 * (32 + 32));
        let mut lin = cfg.clone();
        lin.renderer.hidden_layers = 0;
        assert_eq!(RendererMlp::new(&lin, &mut rng(0)).unwrap().count_parameters(), 57);
    }

    #[test]
    fn autoencoder_parameter_audit() {
        let cfg = ModelConfig::default();
        let a = Autoencoder::new(&cfg, &mut rng(0)).unwrap();
        assert_eq!(a.count_parameters(), autoencoder_hand_count(&[16, 32, 64], 14));
        assert_eq!(a.count_parameters(), 146_873);
    }

    #[test]
    fn encode_shapes() {
        let cfg = ModelConfig::default();
        let a = Autoencoder::new(&cfg, &mut rng(1)).unwrap();
        let t = a.encode(&guidance(64, 2)).unwrap();
        assert_eq!((t.height(), t.width(), t.depth()), (64, 64, 14));
        let t = a.encode(&guidance(72, 2)).unwrap();
        assert_eq!((t.height(), t.width()), (72, 72));
        let err = a.encode(&guidance(70, 2)).unwrap_err().to_string();
        assert!(err.contains("multiples of 8"), "{err}");
    }

    #[test]
    fn encode_is_equivariant_to_stride_multiples() {
        let cfg = ModelConfig::default();
        let a = Autoencoder::new(&cfg, &mut rng(3)).unwrap();
        let g = guidance(32, 4);
        let lhs = a.encode(&g.roll(8, 16)).unwrap();
        let rhs = a.encode(&g).unwrap().roll(8, 16);
        assert!(lhs.as_tensor().max_abs_diff(rhs.as_tensor()) < 1e-4);
    }

    #[test]
    fn render_slice_matches_pointwise_loop() {
        let cfg = ModelConfig::default();
        let (a, r) = (Autoencoder::new(&cfg, &mut rng(5)).unwrap(), RendererMlp::new(&cfg, &mut rng(6)).unwrap());
        let tex = a.encode(&guidance(16, 7)).unwrap();
        let pair = DirectionPair::from_degrees(20.0, 45.0, 60.0, 200.0).unwrap();
        let slice = r.render_slice(&tex, &pair).unwrap();
        for row in 0..16 {
            for col in 0..16 {
                let p = r.render_point(&tex.texel(row, col), &pair).unwrap();
                let s = slice.texel(row, col);
                for c in 0..3 {
                    assert!((p[c] - s[c]).abs() < 1e-6);
                }
            }
        }
        let rolled = r.render_slice(&tex.roll(3, 5), &pair).unwrap();
        assert_eq!(rolled.texel(3, 5), slice.texel(0, 0));
    }

    #[test]
    fn zero_network_renders_black() {
        let cfg = ModelConfig::default();
        let mut r = RendererMlp::new(&cfg, &mut rng(0)).unwrap();
        for t in r.params_mut().tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let pair = DirectionPair::from_degrees(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(r.render_point(&[0.3; 14], &pair).unwrap(), [0.0; 3]);
        let tex = NeuralTexture::from_interleaved(1, 1, 14, &[0.5; 14]).unwrap();
        assert_eq!(r.render_slice(&tex, &pair).unwrap().pixels(), &[0.0; 3]);
    }

    #[test]
    fn batched_points_are_pure() {
        let cfg = ModelConfig::default();
        let r = RendererMlp::new(&cfg, &mut rng(8)).unwrap();
        let pair = DirectionPair::from_degrees(30.0, 10.0, 40.0, 100.0).unwrap();
        let latent: Vec<f32> = (0..14).map(|i| (i as f32 * 0.37).sin()).collect();
        let batch: Vec<f32> = latent.iter().copied().cycle().take(14 * 5).collect();
        let out = r.render_points(&batch, &[pair; 5]).unwrap();
        assert!(out.iter().all(|o| *o == out[0]));
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let mut ck = Checkpoint::init(ModelConfig::default(), 9).unwrap();
        ck.step = 17;
        ck.extra.insert("note".into(), toml::Value::String("x".into()));
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(bytes, ck.to_bytes().unwrap());
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        let g = guidance(8, 1);
        let pair = DirectionPair::from_degrees(0.0, 0.0, 30.0, 0.0).unwrap();
        let render = |c: &Checkpoint| c.renderer.render_slice(&c.autoencoder.encode(&g).unwrap(), &pair).unwrap();
        assert_eq!(render(&ck), render(&back));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(crate::Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(crate::Error::Format { offset: 4, .. })));
    }

    #[test]
    fn checkpoint_rejects_shape_mismatch() {
        let ck = Checkpoint::init(ModelConfig::default(), 1).unwrap();
        let mut other = ModelConfig::default();
        other.renderer.hidden_width = 16;
        let mut small = Checkpoint::init(other, 1).unwrap();
        small.model = ck.model.clone();
        // config now claims width 32 while tensors have width 16
        let err = Checkpoint::from_bytes(&small.to_bytes().unwrap()).unwrap_err();
        assert!(matches!(err, crate::Error::Format { .. }), "{err}");
    }
}
