//! Tabulated BTF data, direction geometry and the synthetic ground-truth generator.

mod format;
mod image_io;
mod resample;
pub mod synth;

pub use resample::area_resample;
pub use format::{decode_btf, encode_btf, load_btf, save_btf, save_btf_with, Precision};
pub use image_io::{
    decode_pfm, encode_pfm, linear_to_srgb, load_guidance, load_image, save_gray_png, save_image, srgb_to_linear, GuidanceImage,
};

use std::fmt;

use crate::error::{Error, Result};

/// A hemisphere direction in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Direction {
    theta: f32,
    phi: f32,
}

impl Direction {
    pub fn new(theta: f32, phi: f32) -> Result<Self> {
        if !(0.0..90.0).contains(&theta) || !(0.0..360.0).contains(&phi) {
            return Err(Error::Validation(format!(
                "direction (θ={theta}, φ={phi}) outside θ∈[0,90), φ∈[0,360)"
            )));
        }
        Ok(Self { theta, phi })
    }

    pub fn theta(&self) -> f32 {
        self.theta
    }

    pub fn phi(&self) -> f32 {
        self.phi
    }

    /// Unit vector with z along the surface normal.
    pub fn to_vector(&self) -> [f64; 3] {
        let (t, p) = ((self.theta as f64).to_radians(), (self.phi as f64).to_radians());
        [t.sin() * p.cos(), t.sin() * p.sin(), t.cos()]
    }

    /// Angle in degrees between two directions.
    pub fn angle_to(&self, other: &Direction) -> f64 {
        let (a, b) = (self.to_vector(), other.to_vector());
        let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        dot.clamp(-1.0, 1.0).acos().to_degrees()
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}°, {}°)", self.theta, self.phi)
    }
}

/// Orthographic projection onto the unit disk: `(sin θ cos φ, sin θ sin φ)`.
pub fn direction_to_projected(d: Direction) -> (f32, f32) {
    let [x, y, _] = d.to_vector();
    (x as f32, y as f32)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectionPair {
    pub camera: Direction,
    pub light: Direction,
}

impl DirectionPair {
    pub fn new(camera: Direction, light: Direction) -> Self {
        Self { camera, light }
    }

    /// Convenience constructor from `(θ_cam, φ_cam, θ_light, φ_light)` in degrees.
    pub fn from_degrees(tc: f32, pc: f32, tl: f32, pl: f32) -> Result<Self> {
        Ok(Self::new(Direction::new(tc, pc)?, Direction::new(tl, pl)?))
    }

    pub fn angular_distance(&self, other: &DirectionPair) -> f64 {
        self.camera.angle_to(&other.camera) + self.light.angle_to(&other.light)
    }

    /// The four renderer direction inputs: projected camera then projected light.
    pub fn projected(&self) -> [f32; 4] {
        let (cx, cy) = direction_to_projected(self.camera);
        let (lx, ly) = direction_to_projected(self.light);
        [cx, cy, lx, ly]
    }
}

impl fmt::Display for DirectionPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cam {} light {}", self.camera, self.light)
    }
}

/// One RGB image of linear radiance, stored row-major as `[row][col][rgb]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BtfSlice {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl BtfSlice {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::Validation(format!(
                "slice of {height}×{width} needs {} values, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(format!(
                "radiance {} at texel {} is not finite and non-negative",
                pixels[i],
                i / 3
            )));
        }
        Ok(Self { height, width, pixels })
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

    pub fn texel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Repeats the slice `ny` times vertically and `nx` times horizontally.
    pub fn tile(&self, ny: usize, nx: usize) -> Self {
        Self {
            height: self.height * ny,
            width: self.width * nx,
            pixels: tile_rgb(&self.pixels, self.height, self.width, ny, nx),
        }
    }
}

/// A full tabulated BTF: one slice per sampled direction pair.
#[derive(Clone, Debug, PartialEq)]
pub struct BtfDataset {
    height: usize,
    width: usize,
    texel_size: f32,
    pairs: Vec<DirectionPair>,
    slices: Vec<BtfSlice>,
}

impl BtfDataset {
    pub fn new(texel_size: f32, pairs: Vec<DirectionPair>, slices: Vec<BtfSlice>) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::Validation("a BTF needs at least one slice".into()));
        }
        if pairs.len() != slices.len() {
            return Err(Error::Validation(format!(
                "{} direction pairs for {} slices",
                pairs.len(),
                slices.len()
            )));
        }
        let (height, width) = (slices[0].height, slices[0].width);
        if height == 0 || width == 0 {
            return Err(Error::Validation("slices must have positive extent".into()));
        }
        if let Some(s) = slices.iter().find(|s| (s.height, s.width) != (height, width)) {
            return Err(Error::Validation(format!(
                "slice of {}×{} in a {height}×{width} dataset",
                s.height, s.width
            )));
        }
        for (i, p) in pairs.iter().enumerate() {
            if pairs[..i].contains(p) {
                return Err(Error::Validation(format!("duplicate direction pair {p}")));
            }
        }
        if !(texel_size.is_finite() && texel_size > 0.0) {
            return Err(Error::Validation(format!("texel size {texel_size} must be positive")));
        }
        Ok(Self {
            height,
            width,
            texel_size,
            pairs,
            slices,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn texel_size(&self) -> f32 {
        self.texel_size
    }

    pub fn pairs(&self) -> &[DirectionPair] {
        &self.pairs
    }

    pub fn slices(&self) -> &[BtfSlice] {
        &self.slices
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The slice stored for exactly `pair`.
    pub fn get_slice(&self, pair: &DirectionPair) -> Result<&BtfSlice> {
        if let Some(i) = self.pairs.iter().position(|p| p == pair) {
            return Ok(&self.slices[i]);
        }
        let nearest = self
            .pairs
            .iter()
            .min_by(|a, b| a.angular_distance(pair).total_cmp(&b.angular_distance(pair)))
            .expect("datasets are non-empty");
        Err(Error::Lookup(format!(
            "pair {pair} is not sampled; nearest is {nearest} ({:.2}° away)",
            nearest.angular_distance(pair)
        )))
    }

    /// Subset restricted to the pairs for which `keep` returns true.
    pub fn filter(&self, keep: impl Fn(&DirectionPair) -> bool) -> Result<Self> {
        let (pairs, slices) = self
            .pairs
            .iter()
            .zip(&self.slices)
            .filter(|(p, _)| keep(p))
            .map(|(p, s)| (*p, s.clone()))
            .unzip();
        Self::new(self.texel_size, pairs, slices)
    }

    /// Index of the pair closest to normal view and normal light, used as the
    /// canonical self-guidance slice.
    pub fn guidance_index(&self) -> usize {
        let key = |p: &DirectionPair| p.camera.theta + p.light.theta;
        (0..self.len())
            .min_by(|&a, &b| key(&self.pairs[a]).total_cmp(&key(&self.pairs[b])).then(a.cmp(&b)))
            .expect("datasets are non-empty")
    }
}

fn tile_rgb(px: &[f32], h: usize, w: usize, ny: usize, nx: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(px.len() * ny * nx);
    for _ in 0..ny {
        for row in px.chunks_exact(w * 3).take(h) {
            for _ in 0..nx {
                out.extend_from_slice(row);
            }
        }
    }
    out
}

/// Reinhard operator `x / (1 + x)`.
#[inline]
pub fn tonemap(x: f32) -> f32 {
    x / (1.0 + x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir(t: f32, p: f32) -> Direction {
        Direction::new(t, p).unwrap()
    }

    #[test]
    fn direction_bounds() {
        assert!(Direction::new(90.0, 0.0).is_err());
        assert!(Direction::new(0.0, 360.0).is_err());
        assert!(Direction::new(-1.0, 0.0).is_err());
        assert!(Direction::new(89.9, 359.9).is_ok());
    }

    #[test]
    fn projection_examples() {
        for phi in [0.0, 45.0, 300.0] {
            assert_eq!(direction_to_projected(dir(0.0, phi)), (0.0, 0.0));
        }
        let (x, y) = direction_to_projected(dir(89.9999, 0.0));
        assert!((x - 1.0).abs() < 1e-5 && y.abs() < 1e-5);
        let (x, y) = direction_to_projected(dir(45.0, 90.0));
        assert!(x.abs() < 1e-6 && (y - 0.70711).abs() < 1e-5);
    }

    #[test]
    fn lookup_reports_nearest() {
        let slice = BtfSlice::new(1, 1, vec![0.1, 0.2, 0.3]).unwrap();
        let a = DirectionPair::new(dir(0.0, 0.0), dir(30.0, 0.0));
        let b = DirectionPair::new(dir(0.0, 0.0), dir(60.0, 0.0));
        let ds = BtfDataset::new(1.0, vec![a, b], vec![slice.clone(), slice]).unwrap();
        assert_eq!(ds.get_slice(&a).unwrap().pixels(), &[0.1, 0.2, 0.3]);
        let miss = DirectionPair::new(dir(0.0, 0.0), dir(55.0, 0.0));
        let msg = ds.get_slice(&miss).unwrap_err().to_string();
        assert!(msg.contains("nearest is cam (0°, 0°) light (60°, 0°)"), "{msg}");
    }

    #[test]
    fn dataset_invariants() {
        let s = BtfSlice::new(1, 1, vec![0.0; 3]).unwrap();
        let p = DirectionPair::new(dir(0.0, 0.0), dir(0.0, 0.0));
        assert!(BtfDataset::new(1.0, vec![], vec![]).is_err());
        assert!(BtfDataset::new(1.0, vec![p, p], vec![s.clone(), s.clone()]).is_err());
        assert!(BtfSlice::new(1, 1, vec![0.0, -1.0, 0.0]).is_err());
        assert!(BtfSlice::new(1, 1, vec![0.0, f32::NAN, 0.0]).is_err());
        let other = BtfSlice::new(2, 1, vec![0.0; 6]).unwrap();
        let q = DirectionPair::new(dir(10.0, 0.0), dir(0.0, 0.0));
        assert!(BtfDataset::new(1.0, vec![p, q], vec![s, other]).is_err());
    }
}
