use nbtf_tensor::Tensor;

use crate::error::{Error, Result};

/// `H×W×D` latent field, held channel-planar as a `1×D×H×W` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralTexture {
    values: Tensor,
}

impl NeuralTexture {
    pub fn from_tensor(values: Tensor) -> Result<Self> {
        let (n, _, _, _) = values.dims4("neural texture")?;
        if n != 1 {
            return Err(Error::Dimension(format!("a texture is a single image, got batch {n}")));
        }
        if !values.all_finite() {
            return Err(Error::Numeric("neural texture has non-finite values".into()));
        }
        Ok(Self { values })
    }

    /// From interleaved `[row][col][channel]` values.
    pub fn from_interleaved(height: usize, width: usize, depth: usize, hwd: &[f32]) -> Result<Self> {
        if hwd.len() != height * width * depth {
            return Err(Error::Dimension(format!(
                "{} values for a {height}×{width}×{depth} texture",
                hwd.len()
            )));
        }
        let hw = height * width;
        let planar = Tensor::from_fn([1, depth, height, width], |i| hwd[(i % hw) * depth + i / hw]);
        Self::from_tensor(planar)
    }

    pub fn height(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[3]
    }

    pub fn depth(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.values
    }

    /// Values as `[row][col][channel]`.
    pub fn to_interleaved(&self) -> Vec<f32> {
        let (d, hw) = (self.depth(), self.height() * self.width());
        let v = self.values.data();
        (0..hw * d).map(|i| v[(i % d) * hw + i / d]).collect()
    }

    pub fn texel(&self, row: usize, col: usize) -> Vec<f32> {
        let (h, w) = (self.height(), self.width());
        (0..self.depth()).map(|c| self.values.data()[(c * h + row) * w + col]).collect()
    }

    /// Channel `c` as an `H×W` plane.
    pub fn channel(&self, c: usize) -> &[f32] {
        self.values.plane(0, c)
    }

    /// Cyclic shift by `(dy, dx)` texels.
    pub fn roll(&self, dy: isize, dx: isize) -> Self {
        Self {
            values: self.values.roll_spatial(dy, dx).expect("rank 4"),
        }
    }

    /// Bilinear fetch at continuous texel coordinates with wrap addressing;
    /// texel `(r, c)` has its center at `(r + 0.5, c + 0.5)`.
    pub fn sample_bilinear(&self, y: f64, x: f64) -> Vec<f32> {
        let (h, w) = (self.height() as f64, self.width() as f64);
        let (fy, fx) = (y - 0.5, x - 0.5);
        let (y0, x0) = (fy.floor(), fx.floor());
        let (ty, tx) = ((fy - y0) as f32, (fx - x0) as f32);
        let wrap = |v: f64, n: f64| (v.rem_euclid(n)) as usize;
        let (r0, r1) = (wrap(y0, h), wrap(y0 + 1.0, h));
        let (c0, c1) = (wrap(x0, w), wrap(x0 + 1.0, w));
        let (hh, ww) = (self.height(), self.width());
        let v = self.values.data();
        (0..self.depth())
            .map(|c| {
                let at = |r: usize, col: usize| v[(c * hh + r) * ww + col];
                let top = at(r0, c0) * (1.0 - tx) + at(r0, c1) * tx;
                let bot = at(r1, c0) * (1.0 - tx) + at(r1, c1) * tx;
                top * (1.0 - ty) + bot * ty
            })
            .collect()
    }
}
