//! Guidance images and image files: PNG (sRGB-encoded) and PFM (linear float).

use std::path::Path;

use super::{tonemap, BtfSlice};
use crate::bytes;
use crate::error::{Error, Result};

/// Linear RGB in [0, 1], row-major `[row][col][rgb]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl GuidanceImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width * 3 {
            return Err(Error::Validation(format!(
                "guidance of {height}×{width} needs {} values, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("guidance value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, pixels })
    }

    /// Tone-maps an HDR slice into the guidance range.
    pub fn from_slice(slice: &BtfSlice) -> Self {
        Self {
            height: slice.height(),
            width: slice.width(),
            pixels: slice.pixels().iter().map(|&v| tonemap(v)).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn check_stride(&self, stride: usize) -> Result<()> {
        if self.height % stride != 0 || self.width % stride != 0 {
            return Err(Error::Dimension(format!(
                "guidance is {}×{}; both sides must be multiples of {stride}, crop or pad to {}×{}",
                self.height,
                self.width,
                self.height / stride * stride,
                self.width / stride * stride
            )));
        }
        Ok(())
    }

    /// Cyclic shift by `(dy, dx)` texels.
    /// Repeats the image `ny` times vertically and `nx` times horizontally.
    pub fn tile(&self, ny: usize, nx: usize) -> Self {
        Self {
            height: self.height * ny,
            width: self.width * nx,
            pixels: super::tile_rgb(&self.pixels, self.height, self.width, ny, nx),
        }
    }

    pub fn roll(&self, dy: isize, dx: isize) -> Self {
        let (h, w) = (self.height, self.width);
        let mut out = vec![0.0; self.pixels.len()];
        for y in 0..h {
            let ty = (y as isize + dy).rem_euclid(h as isize) as usize;
            for x in 0..w {
                let tx = (x as isize + dx).rem_euclid(w as isize) as usize;
                out[(ty * w + tx) * 3..][..3].copy_from_slice(&self.pixels[(y * w + x) * 3..][..3]);
            }
        }
        Self {
            height: h,
            width: w,
            pixels: out,
        }
    }
}

/// sRGB electro-optical transfer function.
pub fn srgb_to_linear(c: f32) -> f32 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f32) -> f32 {
    let c = c.clamp(0.0, 1.0);
    if c <= 0.0031308 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Reads a PNG (decoded to linear) or PFM as `(height, width, rgb)`.
pub fn load_image(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f32>)> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "png" => {
            let img = image::open(path).map_err(|e| Error::format(0, format!("{}: {e}", path.display())))?;
            let (w, h) = (img.width() as usize, img.height() as usize);
            let pixels = if matches!(
                img.color(),
                image::ColorType::L16 | image::ColorType::La16 | image::ColorType::Rgb16 | image::ColorType::Rgba16
            ) {
                img.to_rgb16().into_raw().iter().map(|&v| srgb_to_linear(v as f32 / 65535.0)).collect()
            } else {
                img.to_rgb8().into_raw().iter().map(|&v| srgb_to_linear(v as f32 / 255.0)).collect()
            };
            Ok((h, w, pixels))
        }
        "pfm" => decode_pfm(&bytes::read_file(path)?),
        other => Err(Error::format(0, format!("unknown image extension {other:?}; expected png or pfm"))),
    }
}

pub fn load_guidance(path: impl AsRef<Path>, stride: usize) -> Result<GuidanceImage> {
    let (h, w, pixels) = load_image(path)?;
    let g = GuidanceImage::new(h, w, pixels)?;
    g.check_stride(stride)?;
    Ok(g)
}

/// Writes linear RGB; PNG output is sRGB-encoded 8-bit after clamping to [0, 1].
pub fn save_image(path: impl AsRef<Path>, height: usize, width: usize, rgb: &[f32]) -> Result<()> {
    let path = path.as_ref();
    if rgb.len() != height * width * 3 {
        return Err(Error::Validation(format!(
            "image of {height}×{width} needs {} values, got {}",
            height * width * 3,
            rgb.len()
        )));
    }
    match extension(path).as_str() {
        "png" => {
            let raw: Vec<u8> = rgb.iter().map(|&v| (linear_to_srgb(v) * 255.0).round() as u8).collect();
            image::save_buffer(path, &raw, width as u32, height as u32, image::ColorType::Rgb8)
                .map_err(|e| Error::io(path, std::io::Error::other(e)))
        }
        "pfm" => bytes::write_file(path, &encode_pfm(height, width, rgb)),
        other => Err(Error::format(0, format!("unknown image extension {other:?}; expected png or pfm"))),
    }
}

/// 8-bit grayscale PNG of display values in `[0, 1]`, written without any transfer curve.
pub fn save_gray_png(path: impl AsRef<Path>, height: usize, width: usize, values: &[f32]) -> Result<()> {
    let path = path.as_ref();
    if values.len() != height * width {
        return Err(Error::Validation(format!(
            "image of {height}×{width} needs {} values, got {}",
            height * width,
            values.len()
        )));
    }
    let raw: Vec<u8> = values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    image::save_buffer(path, &raw, width as u32, height as u32, image::ColorType::L8)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

/// Colour PFM, little-endian, rows stored bottom to top.
pub fn encode_pfm(height: usize, width: usize, rgb: &[f32]) -> Vec<u8> {
    let mut out = format!("PF\n{width} {height}\n-1.0\n").into_bytes();
    for row in (0..height).rev() {
        bytes::put_f32s(&mut out, &rgb[row * width * 3..(row + 1) * width * 3]);
    }
    out
}

pub fn decode_pfm(buf: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    // Three whitespace-terminated header tokens, then a single separator byte.
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos, "truncated PFM header"));
        }
        tokens.push((start, String::from_utf8_lossy(&buf[start..pos]).into_owned()));
    }
    pos += 1;
    let channels = match tokens[0].1.as_str() {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(Error::format(0, "bad PFM magic")),
    };
    let parse = |i: usize| {
        tokens[i]
            .1
            .parse::<usize>()
            .map_err(|_| Error::format(tokens[i].0, format!("bad PFM extent {:?}", tokens[i].1)))
    };
    let (width, height) = (parse(1)?, parse(2)?);
    let scale: f32 = tokens[3]
        .1
        .parse()
        .map_err(|_| Error::format(tokens[3].0, "bad PFM scale"))?;
    let little = scale < 0.0;
    let n = width * height * channels;
    if buf.len().saturating_sub(pos) != n * 4 {
        return Err(Error::format(
            pos,
            format!("PFM payload holds {} bytes, expected {}", buf.len().saturating_sub(pos), n * 4),
        ));
    }
    let vals: Vec<f32> = buf[pos..]
        .chunks_exact(4)
        .map(|c| {
            let b: [u8; 4] = c.try_into().unwrap();
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let mut rgb = vec![0.0; width * height * 3];
    for row in 0..height {
        let src = &vals[(height - 1 - row) * width * channels..][..width * channels];
        for col in 0..width {
            for c in 0..3 {
                rgb[(row * width + col) * 3 + c] = src[col * channels + c.min(channels - 1)];
            }
        }
    }
    Ok((height, width, rgb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn srgb_reference_values() {
        assert_eq!(srgb_to_linear(1.0), 1.0);
        assert_eq!(srgb_to_linear(0.0), 0.0);
        assert!((srgb_to_linear(128.0 / 255.0) - 0.2158).abs() < 1e-4);
        for i in 0..=255 {
            let c = i as f32 / 255.0;
            assert!((linear_to_srgb(srgb_to_linear(c)) - c).abs() < 1e-5);
        }
    }

    #[test]
    fn pfm_round_trip() {
        let rgb: Vec<f32> = (0..2 * 3 * 3).map(|i| i as f32 * 0.5).collect();
        let (h, w, back) = decode_pfm(&encode_pfm(2, 3, &rgb)).unwrap();
        assert_eq!((h, w), (2, 3));
        assert_eq!(back, rgb);
    }

    #[test]
    fn png_extremes_and_midgray() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        image::save_buffer(&p, &[0, 128, 255, 0, 128, 255], 2, 1, image::ColorType::Rgb8).unwrap();
        let (h, w, px) = load_image(&p).unwrap();
        assert_eq!((h, w), (1, 2));
        assert_eq!(px[0], 0.0);
        assert!((px[1] - 0.2158).abs() < 1e-4);
        assert_eq!(px[2], 1.0);
    }

    #[test]
    fn stride_and_extension_errors() {
        let g = GuidanceImage::new(4, 12, vec![0.5; 4 * 12 * 3]).unwrap();
        let msg = g.check_stride(8).unwrap_err().to_string();
        assert!(msg.contains("multiples of 8"), "{msg}");
        assert!(GuidanceImage::new(1, 1, vec![1.5, 0.0, 0.0]).is_err());
        assert!(matches!(load_image("x.jpg"), Err(Error::Format { .. })));
    }
}
