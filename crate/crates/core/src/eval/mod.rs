//! Reconstruction metrics, report formatting, compression accounting, the
//! PCA baseline and latent visualization.

mod metrics;
mod pca;

pub use metrics::{psnr, slice_metrics, ssim, PSNR_CAP, SSIM_SIGMA, SSIM_WINDOW};
pub use pca::{pca_baseline, pca_bytes, pca_sweep, PcaResult};

use std::fmt::Write as _;

use nbtf_tensor::par;

use crate::btf::{BtfDataset, BtfSlice, DirectionPair, GuidanceImage, Precision};
use crate::error::Result;
use crate::model::{Checkpoint, NeuralTexture};
use crate::propagate::{propagate, NeuralBtf};

/// Anything that can produce a slice for a direction pair.
pub trait SliceSource: Sync {
    fn slice(&self, pair: &DirectionPair) -> Result<BtfSlice>;
}

impl SliceSource for NeuralBtf {
    fn slice(&self, pair: &DirectionPair) -> Result<BtfSlice> {
        self.render_slice(pair)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SliceMetric {
    pub pair: DirectionPair,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    /// Independent of the order of `values`.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let mut dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
        dev.sort_by(f64::total_cmp);
        Self {
            mean: mean.clamp(v[0], v[v.len() - 1]),
            std: (dev.iter().sum::<f64>() / n).sqrt(),
            min: v[0],
            max: v[v.len() - 1],
        }
    }
}

/// Raw versus neural storage, in bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Storage {
    /// The tabulated BTF at float32.
    pub raw_bytes: usize,
    pub texture_bytes: usize,
    /// Renderer weights at float32.
    pub renderer_bytes: usize,
}

impl Storage {
    pub fn new(
        n_slices: usize,
        height: usize,
        width: usize,
        channels: usize,
        renderer_parameters: usize,
        texture_precision: Precision,
    ) -> Self {
        let per = match texture_precision {
            Precision::F16 => 2,
            Precision::F32 => 4,
        };
        Self {
            raw_bytes: n_slices * height * width * 3 * 4,
            texture_bytes: height * width * channels * per,
            renderer_bytes: renderer_parameters * 4,
        }
    }

    pub fn neural_bytes(&self) -> usize {
        self.texture_bytes + self.renderer_bytes
    }

    pub fn ratio(&self) -> f64 {
        self.raw_bytes as f64 / self.neural_bytes() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub slices: Vec<SliceMetric>,
    pub psnr: Summary,
    pub ssim: Summary,
    pub renderer_parameters: usize,
    pub texture_channels: usize,
    /// Float32 accounting.
    pub storage: Storage,
}

pub const REPORT_CSV_HEADER: &str = "theta_cam,phi_cam,theta_light,phi_light,psnr,ssim,lpips,flip";

impl MetricReport {
    pub fn compression_ratio(&self) -> f64 {
        self.storage.ratio()
    }

    /// One row per slice; perceptual columns are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_CSV_HEADER}\n");
        for s in &self.slices {
            let (c, l) = (s.pair.camera, s.pair.light);
            writeln!(
                out,
                "{},{},{},{},{:.4},{:.6},,",
                c.theta(),
                c.phi(),
                l.theta(),
                l.phi(),
                s.psnr,
                s.ssim
            )
            .expect("string write");
        }
        out
    }

    pub fn to_table(&self) -> String {
        let st = &self.storage;
        let rows: Vec<(String, String)> = vec![
            ("PSNR ↑".into(), format!("{:.2} ± {:.2}", self.psnr.mean, self.psnr.std)),
            ("SSIM ↑".into(), format!("{:.3} ± {:.3}", self.ssim.mean, self.ssim.std)),
            ("LPIPS ↓".into(), "n/a".into()),
            ("FLIP ↓".into(), "n/a".into()),
            ("decoder parameters".into(), self.renderer_parameters.to_string()),
            ("texture channels".into(), self.texture_channels.to_string()),
            ("slices".into(), self.slices.len().to_string()),
            ("raw bytes (f32)".into(), st.raw_bytes.to_string()),
            ("neural bytes (f32)".into(), st.neural_bytes().to_string()),
            ("compression ratio".into(), format!("{:.2}×", st.ratio())),
        ];
        let width = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            writeln!(out, "{k:<width$}  {v:>16}").expect("string write");
        }
        out
    }
}

/// Metrics of `source` against every slice of `dataset`.
pub fn evaluate_source(
    source: &dyn SliceSource,
    dataset: &BtfDataset,
    renderer_parameters: usize,
    texture_channels: usize,
) -> Result<MetricReport> {
    let per = par::map_indices(dataset.len(), |i| {
        let pair = dataset.pairs()[i];
        let pred = source.slice(&pair)?;
        let (psnr, ssim) = slice_metrics(&pred, &dataset.slices()[i])?;
        Ok(SliceMetric { pair, psnr, ssim })
    });
    let slices = per.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        psnr: Summary::of(slices.iter().map(|s| s.psnr)),
        ssim: Summary::of(slices.iter().map(|s| s.ssim)),
        slices,
        renderer_parameters,
        texture_channels,
        storage: Storage::new(
            dataset.len(),
            dataset.height(),
            dataset.width(),
            texture_channels,
            renderer_parameters,
            Precision::F32,
        ),
    })
}

/// Propagates `guidance` and scores the bundle on every slice of `dataset`.
pub fn evaluate_with_guidance(ckpt: &Checkpoint, guidance: &GuidanceImage, dataset: &BtfDataset) -> Result<MetricReport> {
    let nb = propagate(ckpt, guidance)?;
    evaluate_source(&nb, dataset, ckpt.renderer.count_parameters(), nb.texture().depth())
}

/// Self-guided evaluation: the dataset's near-normal slice is the guidance.
pub fn evaluate_full(ckpt: &Checkpoint, dataset: &BtfDataset) -> Result<MetricReport> {
    let guidance = GuidanceImage::from_slice(&dataset.slices()[dataset.guidance_index()]);
    evaluate_with_guidance(ckpt, &guidance, dataset)
}

/// The display curve `1 / (e^{1−c} + 1)` applied to standardized latents.
#[inline]
pub fn latent_sigmoid(c: f64) -> f64 {
    1.0 / ((1.0 - c).exp() + 1.0)
}

/// One `H×W` image in `[0, 1]` per latent channel.
pub fn visualize_latents(texture: &NeuralTexture) -> Vec<Vec<f32>> {
    (0..texture.depth())
        .map(|c| {
            let plane = texture.channel(c);
            let n = plane.len() as f64;
            let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = plane.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            plane
                .iter()
                .map(|&v| {
                    let z = if std > 0.0 { (v as f64 - mean) / std } else { 0.0 };
                    latent_sigmoid(z) as f32
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::btf::synth::{synth_preset, Preset};
    use crate::model::ModelConfig;

    struct Oracle<'a>(&'a BtfDataset);

    impl SliceSource for Oracle<'_> {
        fn slice(&self, pair: &DirectionPair) -> Result<BtfSlice> {
            self.0.get_slice(pair).cloned()
        }
    }

    #[test]
    fn perfect_source_scores_perfectly() {
        let ds = synth_preset(Preset::GgxTextured, 16).unwrap();
        let r = evaluate_source(&Oracle(&ds), &ds, 3011, 14).unwrap();
        assert!(r.slices.iter().all(|s| s.psnr == 99.0 && (s.ssim - 1.0).abs() < 1e-12));
        assert_eq!(r.psnr.mean, 99.0);
        assert_eq!(r.to_csv().lines().count(), ds.len() + 1);
        let table = r.to_table();
        assert!(table.contains("3011") && table.contains("14"));
    }

    #[test]
    fn report_from_checkpoint() {
        let ck = Checkpoint::init(ModelConfig::default(), 0).unwrap();
        let ds = synth_preset(Preset::Lambertian, 16).unwrap();
        let r = evaluate_full(&ck, &ds).unwrap();
        assert_eq!((r.renderer_parameters, r.texture_channels), (3011, 14));
        assert!(r.psnr.min <= r.psnr.mean && r.psnr.mean <= r.psnr.max);
        assert!(r.ssim.min <= r.ssim.mean && r.ssim.mean <= r.ssim.max);
        let expect = (24 * 16 * 16 * 3 * 4) as f64 / (16 * 16 * 14 * 4 + 3011 * 4) as f64;
        assert!((r.compression_ratio() - expect).abs() < 1e-12);
    }

    #[test]
    fn summaries_ignore_order() {
        let v = [3.5, 0.25, 9.0, 1e-3, 7.75, 2.0];
        let mut w = v;
        w.reverse();
        w.swap(0, 3);
        assert_eq!(Summary::of(v), Summary::of(w));
        let s = Summary::of([2.0, 4.0]);
        assert_eq!((s.mean, s.std, s.min, s.max), (3.0, 1.0, 2.0, 4.0));
    }

    #[test]
    fn storage_arithmetic() {
        let s = Storage::new(100, 64, 64, 14, 3011, Precision::F32);
        assert!((s.ratio() - 4_915_200.0 / 241_420.0).abs() < 1e-12 && s.ratio() > 20.3);
        let s = Storage::new(49, 64, 64, 14, 3011, Precision::F32);
        assert_eq!(s.raw_bytes, 2_408_448);
        assert_eq!(s.neural_bytes(), 241_420);
    }

    #[test]
    fn latent_curve() {
        assert_eq!(latent_sigmoid(1.0), 0.5);
        assert!((latent_sigmoid(0.0) - 0.26894).abs() < 1e-5);
        assert!(latent_sigmoid(50.0) > 1.0 - 1e-12 && latent_sigmoid(-50.0) < 1e-12);
        let hwd: Vec<f32> = (0..4 * 4 * 2).map(|i| if i % 2 == 0 { 0.7 } else { (i as f32).sin() }).collect();
        let t = NeuralTexture::from_interleaved(4, 4, 2, &hwd).unwrap();
        let imgs = visualize_latents(&t);
        assert!(imgs[0].iter().all(|v| (*v as f64 - latent_sigmoid(0.0)).abs() < 1e-7));
        assert!(imgs[1].iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
