//! Point-light renderer for SVBRDF maps, producing tabulated ground-truth BTFs.
//!
//! Shading is a Lambertian lobe plus a GGX microfacet lobe with separable
//! Smith masking and Schlick Fresnel (F0 = 0.04). All directions live in the
//! tangent frame of the flat sample, z up.

use std::f64::consts::PI;

use super::{BtfDataset, BtfSlice, DirectionPair};
use crate::error::{Error, Result};

pub const F0: f64 = 0.04;

/// Per-texel material parameters, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SvbrdfMaps {
    pub height: usize,
    pub width: usize,
    /// Diffuse albedo ρ, `[row][col][rgb]`.
    pub albedo: Vec<f32>,
    /// Unit shading normals in the tangent frame, `[row][col][xyz]`.
    pub normal: Vec<f32>,
    /// GGX α in (0, 1].
    pub roughness: Vec<f32>,
    /// Specular weight k_s.
    pub specular: Vec<f32>,
}

impl SvbrdfMaps {
    pub fn uniform(height: usize, width: usize, albedo: [f32; 3], roughness: f32, specular: f32) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            albedo: albedo.iter().copied().cycle().take(n * 3).collect(),
            normal: [0.0, 0.0, 1.0].iter().copied().cycle().take(n * 3).collect(),
            roughness: vec![roughness; n],
            specular: vec![specular; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        if n == 0
            || self.albedo.len() != 3 * n
            || self.normal.len() != 3 * n
            || self.roughness.len() != n
            || self.specular.len() != n
        {
            return Err(Error::Validation(format!(
                "SVBRDF maps disagree with extent {}×{}",
                self.height, self.width
            )));
        }
        for (i, nrm) in self.normal.chunks_exact(3).enumerate() {
            let len = nrm.iter().map(|v| v * v).sum::<f32>().sqrt();
            if len < 1e-6 {
                return Err(Error::Validation(format!("zero-length normal at texel {i}")));
            }
            if (len - 1.0).abs() > 1e-3 {
                return Err(Error::Validation(format!("normal at texel {i} has length {len}")));
            }
        }
        if let Some(a) = self.roughness.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::Validation(format!("roughness {a} outside (0, 1]")));
        }
        if let Some(v) = self.albedo.iter().chain(&self.specular).find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Validation(format!("albedo/specular value {v} must be finite and ≥ 0")));
        }
        Ok(())
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn smith_g1(cos: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    2.0 * cos / (cos + (a2 + (1.0 - a2) * cos * cos).sqrt())
}

/// BRDF value `f_r(ω_o, ω_i)` (no cosine factor); zero when either direction
/// is below the shading horizon.
pub fn brdf(n: [f64; 3], wo: [f64; 3], wi: [f64; 3], albedo: [f64; 3], alpha: f64, ks: f64) -> [f64; 3] {
    let (co, ci) = (dot(n, wo), dot(n, wi));
    if co <= 0.0 || ci <= 0.0 {
        return [0.0; 3];
    }
    let h = [wo[0] + wi[0], wo[1] + wi[1], wo[2] + wi[2]];
    let hl = dot(h, h).sqrt();
    let h = [h[0] / hl, h[1] / hl, h[2] / hl];
    let nh = dot(n, h).max(0.0);
    let a2 = alpha * alpha;
    let denom = nh * nh * (a2 - 1.0) + 1.0;
    let d = a2 / (PI * denom * denom);
    let g = smith_g1(co, alpha) * smith_g1(ci, alpha);
    let f = F0 + (1.0 - F0) * (1.0 - dot(h, wo).clamp(0.0, 1.0)).powi(5);
    let spec = ks * d * g * f / (4.0 * co * ci);
    albedo.map(|r| r / PI + spec)
}

/// Renders one slice per pair: `f_r · cos θ_i` at every texel.
pub fn render_synthetic_btf(maps: &SvbrdfMaps, pairs: &[DirectionPair], texel_size: f32) -> Result<BtfDataset> {
    maps.validate()?;
    let n = maps.height * maps.width;
    let slices = pairs
        .iter()
        .map(|p| {
            let (wo, wi) = (p.camera.to_vector(), p.light.to_vector());
            let mut px = Vec::with_capacity(n * 3);
            for t in 0..n {
                let nv = &maps.normal[t * 3..t * 3 + 3];
                let len = nv.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
                let nrm = [nv[0] as f64 / len, nv[1] as f64 / len, nv[2] as f64 / len];
                let alb = [0, 1, 2].map(|c| maps.albedo[t * 3 + c] as f64);
                let f = brdf(nrm, wo, wi, alb, maps.roughness[t] as f64, maps.specular[t] as f64);
                let ci = dot(nrm, wi).max(0.0);
                px.extend(f.iter().map(|v| (v * ci) as f32));
            }
            BtfSlice::new(maps.height, maps.width, px)
        })
        .collect::<Result<Vec<_>>>()?;
    BtfDataset::new(texel_size, pairs.to_vec(), slices)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Diffuse-only two-tone pattern, fixed overhead camera, 24 light positions.
    Lambertian,
    /// Height-field normals with varying roughness and specularity, 7×7 direction grid.
    GgxTextured,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambertian" => Ok(Preset::Lambertian),
            "ggx-textured" => Ok(Preset::GgxTextured),
            _ => Err(Error::Config(format!(
                "unknown preset {s:?}; expected lambertian or ggx-textured"
            ))),
        }
    }
}

const TEXEL_SIZE_MM: f32 = 0.5;

/// Light grid θ ∈ {0, 15, …, 75} × φ ∈ {0, 90, 180, 270} with the camera overhead.
pub fn lambertian_pairs() -> Vec<DirectionPair> {
    let mut out = Vec::with_capacity(24);
    for t in (0..6).map(|i| i as f32 * 15.0) {
        for p in [0.0, 90.0, 180.0, 270.0] {
            out.push(DirectionPair::from_degrees(0.0, 0.0, t, p).expect("grid is in range"));
        }
    }
    out
}

const GGX_DIRECTIONS: [(f32, f32); 7] = [
    (0.0, 0.0),
    (25.0, 0.0),
    (25.0, 120.0),
    (25.0, 240.0),
    (50.0, 60.0),
    (50.0, 180.0),
    (50.0, 300.0),
];

/// `(camera, light)` indices into the direction list that are excluded from training.
const GGX_HELD_OUT: [(usize, usize); 9] = [(0, 5), (1, 3), (2, 6), (3, 1), (4, 4), (5, 0), (6, 2), (2, 3), (5, 5)];

/// Every camera direction paired with every light direction.
pub fn ggx_pairs() -> Vec<DirectionPair> {
    let mut out = Vec::with_capacity(49);
    for &(tc, pc) in &GGX_DIRECTIONS {
        for &(tl, pl) in &GGX_DIRECTIONS {
            out.push(DirectionPair::from_degrees(tc, pc, tl, pl).expect("grid is in range"));
        }
    }
    out
}

/// Pairs of a preset reserved for evaluating generalization across directions.
pub fn held_out_pairs(preset: Preset) -> Vec<DirectionPair> {
    match preset {
        Preset::Lambertian => Vec::new(),
        Preset::GgxTextured => {
            let all = ggx_pairs();
            GGX_HELD_OUT.iter().map(|&(c, l)| all[c * 7 + l]).collect()
        }
    }
}

fn periodic(size: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            out.push(f(x as f64 / size as f64, y as f64 / size as f64));
        }
    }
    out
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
}

const TAU: f64 = 2.0 * PI;

/// Tileable SVBRDF maps of a preset at `size × size` texels.
pub fn preset_maps(preset: Preset, size: usize) -> Result<SvbrdfMaps> {
    if size == 0 {
        return Err(Error::Config("preset size must be positive".into()));
    }
    let mut maps = SvbrdfMaps::uniform(size, size, [0.0; 3], 1.0, 0.0);
    match preset {
        Preset::Lambertian => {
            let t = periodic(size, |u, v| {
                let s = (TAU * 2.0 * u).sin() * (TAU * 2.0 * v).sin() + 0.5 * (TAU * (3.0 * u + v)).sin();
                smoothstep(-0.3, 0.3, s)
            });
            let (dark, light) = ([0.12, 0.2, 0.4], [0.75, 0.55, 0.35]);
            maps.albedo = t.iter().flat_map(|&t| mix(dark, light, t)).map(|v| v as f32).collect();
        }
        Preset::GgxTextured => {
            // h = 0.5 sin(6πu) cos(4πv) + 0.3 sin(2π(2u + 3v)), texture-space amplitude `amp`.
            let amp = 0.04;
            let hgt = periodic(size, |u, v| {
                0.5 * (TAU * 3.0 * u).sin() * (TAU * 2.0 * v).cos() + 0.3 * (TAU * (2.0 * u + 3.0 * v)).sin()
            });
            let du = periodic(size, |u, v| {
                0.5 * TAU * 3.0 * (TAU * 3.0 * u).cos() * (TAU * 2.0 * v).cos()
                    + 0.3 * TAU * 2.0 * (TAU * (2.0 * u + 3.0 * v)).cos()
            });
            let dv = periodic(size, |u, v| {
                -0.5 * TAU * 2.0 * (TAU * 3.0 * u).sin() * (TAU * 2.0 * v).sin()
                    + 0.3 * TAU * 3.0 * (TAU * (2.0 * u + 3.0 * v)).cos()
            });
            maps.normal = du
                .iter()
                .zip(&dv)
                .flat_map(|(&du, &dv)| {
                    let n = [-amp * du, -amp * dv, 1.0];
                    let l = (n[0] * n[0] + n[1] * n[1] + 1.0f64).sqrt();
                    n.map(|c| (c / l) as f32)
                })
                .collect();
            let (low, high) = ([0.35, 0.12, 0.08], [0.85, 0.7, 0.45]);
            maps.albedo = hgt
                .iter()
                .flat_map(|&h| mix(low, high, smoothstep(-0.8, 0.8, h)))
                .map(|v| v as f32)
                .collect();
            maps.roughness = periodic(size, |u, v| 0.3 + 0.25 * (0.5 + 0.5 * (TAU * (u + 2.0 * v)).sin()))
                .into_iter()
                .map(|v| v as f32)
                .collect();
            maps.specular = hgt.iter().map(|&h| (0.3 + 0.5 * smoothstep(-0.8, 0.8, -h)) as f32).collect();
        }
    }
    maps.validate()?;
    Ok(maps)
}

pub fn preset_pairs(preset: Preset) -> Vec<DirectionPair> {
    match preset {
        Preset::Lambertian => lambertian_pairs(),
        Preset::GgxTextured => ggx_pairs(),
    }
}

/// Renders a preset at `size × size` texels over its full direction grid.
pub fn synth_preset(preset: Preset, size: usize) -> Result<BtfDataset> {
    render_synthetic_btf(&preset_maps(preset, size)?, &preset_pairs(preset), TEXEL_SIZE_MM)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// GGX specular lobe at normal view and light, evaluated from the
    /// textbook simplifications: D = 1/(πα²), G = 1, F = F0.
    fn normal_incidence_oracle(alpha: f64, ks: f64, rho: f64) -> f64 {
        rho / std::f64::consts::PI + ks * (1.0 / (std::f64::consts::PI * alpha * alpha)) * 0.04 / 4.0
    }

    fn pair(tc: f32, pc: f32, tl: f32, pl: f32) -> DirectionPair {
        DirectionPair::from_degrees(tc, pc, tl, pl).unwrap()
    }

    #[test]
    fn lambertian_closed_forms() {
        let maps = SvbrdfMaps::uniform(3, 2, [0.6; 3], 0.5, 0.0);
        let ds = render_synthetic_btf(&maps, &[pair(0.0, 0.0, 0.0, 0.0), pair(0.0, 0.0, 60.0, 0.0)], 1.0).unwrap();
        assert!(ds.slices()[0].pixels().iter().all(|v| (v - 0.19099).abs() < 1e-5));
        assert!(ds.slices()[1].pixels().iter().all(|v| (v - 0.09549).abs() < 1e-5));
    }

    #[test]
    fn ggx_normal_incidence_matches_oracle() {
        let want = normal_incidence_oracle(0.3, 1.0, 0.0);
        assert!((want - 0.035368).abs() < 1e-6);
        for (ks, rho) in [(1.0, 0.0), (0.5, 0.2), (0.8, 0.7)] {
            let maps = SvbrdfMaps::uniform(1, 1, [rho as f32; 3], 0.3, ks as f32);
            let ds = render_synthetic_btf(&maps, &[pair(0.0, 0.0, 0.0, 0.0)], 1.0).unwrap();
            let got = ds.slices()[0].pixels()[0] as f64;
            assert!((got - normal_incidence_oracle(0.3, ks, rho)).abs() < 1e-6, "{got}");
        }
    }

    #[test]
    fn brdf_is_reciprocal() {
        let n = [0.0, 0.0, 1.0];
        for (a, b) in [((20.0, 10.0), (60.0, 200.0)), ((45.0, 90.0), (5.0, 300.0))] {
            let p = pair(a.0, a.1, b.0, b.1);
            let (wo, wi) = (p.camera.to_vector(), p.light.to_vector());
            let f = brdf(n, wo, wi, [0.3, 0.4, 0.5], 0.25, 0.7);
            let g = brdf(n, wi, wo, [0.3, 0.4, 0.5], 0.25, 0.7);
            for c in 0..3 {
                assert!((f[c] - g[c]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn below_horizon_is_black() {
        let n = [0.0, 0.0, 1.0];
        assert_eq!(brdf(n, [0.0, 0.0, 1.0], [1.0, 0.0, -0.1], [0.5; 3], 0.3, 1.0), [0.0; 3]);
    }

    #[test]
    fn map_validation() {
        let mut m = SvbrdfMaps::uniform(1, 1, [0.5; 3], 0.3, 0.1);
        m.normal = vec![0.0; 3];
        assert!(m.validate().unwrap_err().to_string().contains("zero-length normal"));
        let mut m = SvbrdfMaps::uniform(1, 1, [0.5; 3], 0.0, 0.1);
        assert!(m.validate().is_err());
        m.roughness = vec![1.0];
        assert!(m.validate().is_ok());
    }

    #[test]
    fn presets_have_expected_grids() {
        let l = synth_preset(Preset::Lambertian, 8).unwrap();
        assert_eq!(l.len(), 24);
        let g = synth_preset(Preset::GgxTextured, 8).unwrap();
        assert_eq!(g.len(), 49);
        let held = held_out_pairs(Preset::GgxTextured);
        assert_eq!(held.len(), 9);
        assert!(held.iter().all(|p| g.pairs().contains(p)));
        assert!(!held.contains(&g.pairs()[g.guidance_index()]));
    }

    #[test]
    fn lambertian_preset_is_cosine_scaled_albedo() {
        let maps = preset_maps(Preset::Lambertian, 16).unwrap();
        let ds = render_synthetic_btf(&maps, &lambertian_pairs(), 1.0).unwrap();
        for (p, s) in ds.pairs().iter().zip(ds.slices()) {
            let c = (p.light.theta() as f64).to_radians().cos();
            for (v, a) in s.pixels().iter().zip(&maps.albedo) {
                assert!((*v as f64 - *a as f64 / std::f64::consts::PI * c).abs() < 1e-6);
            }
        }
    }
}
