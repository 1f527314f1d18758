//! PSNR and SSIM on interleaved images.

use crate::btf::{tonemap, BtfSlice};
use crate::error::{Error, Result};

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// `10·log10(peak² / MSE)`, capped at 99 dB.
pub fn psnr(a: &[f32], b: &[f32], peak: f32) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Dimension(format!("psnr of {} vs {} values", a.len(), b.len())));
    }
    if !(peak > 0.0) {
        return Err(Error::Validation(format!("peak {peak} must be positive")));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * ((peak as f64).powi(2) / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        *v = (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable window sums over every valid position of one channel.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = g.iter().enumerate().map(|(k, gk)| gk * x[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = g.iter().enumerate().map(|(k, gk)| gk * rows[(r + k) * ow + c]).sum();
        }
    }
    out
}

/// Mean structural similarity over valid 11×11 Gaussian windows, averaged
/// over channels.
pub fn ssim(a: &[f32], b: &[f32], height: usize, width: usize, channels: usize, peak: f32) -> Result<f64> {
    let n = height * width * channels;
    if a.len() != n || b.len() != n || channels == 0 {
        return Err(Error::Dimension(format!(
            "ssim of {} and {} values for {height}×{width}×{channels}",
            a.len(),
            b.len()
        )));
    }
    if height < SSIM_WINDOW || width < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "ssim needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {height}×{width}"
        )));
    }
    let c1 = (0.01 * peak as f64).powi(2);
    let c2 = (0.03 * peak as f64).powi(2);
    let g = gaussian_window();
    let mut total = 0.0;
    for ch in 0..channels {
        let x: Vec<f64> = (0..height * width).map(|i| a[i * channels + ch] as f64).collect();
        let y: Vec<f64> = (0..height * width).map(|i| b[i * channels + ch] as f64).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mx = filter_valid(&x, height, width, &g);
        let my = filter_valid(&y, height, width, &g);
        let mxx = filter_valid(&prod(&x, &x), height, width, &g);
        let myy = filter_valid(&prod(&y, &y), height, width, &g);
        let mxy = filter_valid(&prod(&x, &y), height, width, &g);
        let sum: f64 = (0..mx.len())
            .map(|i| {
                let (ux, uy) = (mx[i], my[i]);
                let (vx, vy, cxy) = (mxx[i] - ux * ux, myy[i] - uy * uy, mxy[i] - ux * uy);
                ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
            })
            .sum();
        total += sum / mx.len() as f64;
    }
    Ok(total / channels as f64)
}

fn tonemapped(s: &BtfSlice) -> Vec<f32> {
    s.pixels().iter().map(|&v| tonemap(v)).collect()
}

/// PSNR and SSIM of two radiance slices, compared after tone mapping with peak 1.
pub fn slice_metrics(pred: &BtfSlice, truth: &BtfSlice) -> Result<(f64, f64)> {
    if (pred.height(), pred.width()) != (truth.height(), truth.width()) {
        return Err(Error::Dimension(format!(
            "{}×{} vs {}×{} slices",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    let (a, b) = (tonemapped(pred), tonemapped(truth));
    Ok((psnr(&a, &b, 1.0)?, ssim(&a, &b, pred.height(), pred.width(), 3, 1.0)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f32> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| r.random_range(0.0..1.0)).collect()
    }

    #[test]
    fn psnr_examples() {
        let a = random(300, 1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), 99.0);
        let b: Vec<f32> = a.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-4);
        assert!(psnr(&a, &a[1..], 1.0).is_err());
    }

    #[test]
    fn psnr_matches_scalar_loop() {
        let (a, b) = (random(500, 2), random(500, 3));
        let mut se = 0.0f64;
        for i in 0..a.len() {
            let d = a[i] as f64 - b[i] as f64;
            se += d * d;
        }
        let expect = 10.0 * (4.0 / (se / 500.0)).log10();
        assert!((psnr(&a, &b, 2.0).unwrap() - expect).abs() < 1e-6);
    }

    #[test]
    fn ssim_constant_images() {
        let zero = vec![0.0f32; 16 * 16];
        let one = vec![1.0f32; 16 * 16];
        assert!((ssim(&zero, &zero, 16, 16, 1, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let c1 = 1e-4;
        let got = ssim(&zero, &one, 16, 16, 1, 1.0).unwrap();
        assert!((got - c1 / (1.0 + c1)).abs() < 1e-9, "{got}");
        assert!(ssim(&zero[..100], &zero[..100], 10, 10, 1, 1.0).is_err());
    }

    /// Direct per-window evaluation of the same definition.
    fn ssim_oracle(a: &[f32], b: &[f32], h: usize, w: usize, ch: usize) -> f64 {
        let r = 5isize;
        let mut g = vec![0.0f64; 121];
        for dy in -r..=r {
            for dx in -r..=r {
                g[((dy + r) * 11 + dx + r) as usize] = (-((dy * dy + dx * dx) as f64) / 4.5).exp();
            }
        }
        let s: f64 = g.iter().sum();
        g.iter_mut().for_each(|v| *v /= s);
        let (c1, c2) = (1e-4, 9e-4);
        let mut total = 0.0;
        for c in 0..ch {
            let mut acc = 0.0;
            let mut count = 0;
            for y in 0..=h - 11 {
                for x in 0..=w - 11 {
                    let (mut ux, mut uy, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for ky in 0..11 {
                        for kx in 0..11 {
                            let i = ((y + ky) * w + x + kx) * ch + c;
                            let (p, q, wt) = (a[i] as f64, b[i] as f64, g[ky * 11 + kx]);
                            ux += wt * p;
                            uy += wt * q;
                            xx += wt * p * p;
                            yy += wt * q * q;
                            xy += wt * p * q;
                        }
                    }
                    let (vx, vy, cxy) = (xx - ux * ux, yy - uy * uy, xy - ux * uy);
                    acc += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
                    count += 1;
                }
            }
            total += acc / count as f64;
        }
        total / ch as f64
    }

    #[test]
    fn ssim_matches_windowed_loop() {
        let (h, w) = (17, 14);
        let a = random(h * w * 3, 4);
        let b: Vec<f32> = a.iter().zip(random(h * w * 3, 5)).map(|(x, n)| 0.7 * x + 0.3 * n).collect();
        let got = ssim(&a, &b, h, w, 3, 1.0).unwrap();
        assert!((got - ssim_oracle(&a, &b, h, w, 3)).abs() < 1e-5);
        assert!(got > 0.0 && got < 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn symmetric_and_reflexive(seed in any::<u64>()) {
            let (a, b) = (random(12 * 13, seed), random(12 * 13, seed ^ 1));
            prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
            let s = ssim(&a, &b, 12, 13, 1, 1.0).unwrap();
            prop_assert!((s - ssim(&b, &a, 12, 13, 1, 1.0).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert!((ssim(&a, &a, 12, 13, 1, 1.0).unwrap() - 1.0).abs() < 1e-9);
        }
    }
}
