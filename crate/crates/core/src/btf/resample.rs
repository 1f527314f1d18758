//! Area-weighted resampling with wrap addressing.

/// Source texels and weights covering output sample `i` along one axis.
fn footprint(origin: f64, i: usize, scale: f64) -> Vec<(isize, f64)> {
    let (a, b) = (origin + i as f64 / scale, origin + (i + 1) as f64 / scale);
    let mut taps = Vec::new();
    let mut k = a.floor();
    while k < b {
        let overlap = (k + 1.0).min(b) - k.max(a);
        if overlap > 0.0 {
            taps.push((k as isize, overlap * scale));
        }
        k += 1.0;
    }
    taps
}

/// Resamples an interleaved `h×w×channels` image by `scale` (output texels per
/// source texel), averaging each output texel's footprint exactly. Output
/// texel `(0, 0)` starts at source position `origin = (row, col)`; reads wrap
/// around both axes.
#[allow(clippy::too_many_arguments)]
pub fn area_resample(
    pixels: &[f32],
    height: usize,
    width: usize,
    channels: usize,
    origin: (f64, f64),
    scale: f64,
    out_height: usize,
    out_width: usize,
) -> Vec<f32> {
    assert_eq!(pixels.len(), height * width * channels, "image extent");
    assert!(scale > 0.0, "scale must be positive");
    let rows: Vec<_> = (0..out_height).map(|i| footprint(origin.0, i, scale)).collect();
    let cols: Vec<_> = (0..out_width).map(|j| footprint(origin.1, j, scale)).collect();
    let wrap = |k: isize, n: usize| k.rem_euclid(n as isize) as usize;
    let mut out = vec![0.0f32; out_height * out_width * channels];
    let mut acc = vec![0.0f64; channels];
    for (i, row_taps) in rows.iter().enumerate() {
        for (j, col_taps) in cols.iter().enumerate() {
            acc.fill(0.0);
            for &(r, wr) in row_taps {
                let r = wrap(r, height);
                for &(c, wc) in col_taps {
                    let base = (r * width + wrap(c, width)) * channels;
                    for (ch, a) in acc.iter_mut().enumerate() {
                        *a += wr * wc * pixels[base + ch] as f64;
                    }
                }
            }
            let o = (i * out_width + j) * channels;
            for (ch, a) in acc.iter().enumerate() {
                out[o + ch] = *a as f32;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_scale_integer_origin_copies() {
        let px: Vec<f32> = (0..4 * 5 * 3).map(|i| i as f32 * 0.1).collect();
        let out = area_resample(&px, 4, 5, 3, (1.0, 3.0), 1.0, 4, 5);
        for i in 0..4 {
            for j in 0..5 {
                for c in 0..3 {
                    assert_eq!(out[(i * 5 + j) * 3 + c], px[(((i + 1) % 4) * 5 + (j + 3) % 5) * 3 + c]);
                }
            }
        }
    }

    #[test]
    fn half_scale_averages_blocks() {
        let px: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let out = area_resample(&px, 4, 4, 1, (0.0, 0.0), 0.5, 2, 2);
        assert_eq!(out, vec![2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn weights_sum_to_one_and_preserve_constants() {
        let px = vec![0.75f32; 7 * 9];
        for scale in [0.7, 0.93, 1.0, 1.37] {
            let out = area_resample(&px, 7, 9, 1, (2.3, 5.9), scale, 5, 6);
            assert!(out.iter().all(|v| (v - 0.75).abs() < 1e-6), "{scale}");
        }
    }
}
