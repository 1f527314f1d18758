use crate::error::{dim_err, Result, TensorError};
use crate::scalar::Scalar;

/// Dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F = f32> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<F>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(dim_err(
                "Tensor::new",
                format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, F::one())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: F) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: F) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> F) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Self {
            shape,
            data: (0..numel).map(&mut f).collect(),
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[F] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> F {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(dim_err(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// `(n, c, h, w)` of a rank-4 tensor.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(dim_err(
                op,
                format!("expected an N×C×H×W tensor, got shape {:?}", self.shape),
            )),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Result<Self> {
        if self.shape != other.shape {
            return Err(dim_err(
                "zip_map",
                format!("shapes {:?} and {:?} differ", self.shape, other.shape),
            ));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> F {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(F::zero(), F::max)
    }

    /// Cyclic shift of the last two axes: `out[.., (y+dy) mod H, (x+dx) mod W] = in[.., y, x]`.
    pub fn roll_spatial(&self, dy: isize, dx: isize) -> Result<Self> {
        if self.rank() < 2 {
            return Err(dim_err("roll_spatial", "need at least two axes"));
        }
        let h = self.shape[self.rank() - 2];
        let w = self.shape[self.rank() - 1];
        let planes = self.numel() / (h * w).max(1);
        let mut out = vec![F::zero(); self.numel()];
        for p in 0..planes {
            let src = &self.data[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * h * w..(p + 1) * h * w];
            for y in 0..h {
                let ty = (y as isize + dy).rem_euclid(h as isize) as usize;
                for x in 0..w {
                    let tx = (x as isize + dx).rem_euclid(w as isize) as usize;
                    dst[ty * w + tx] = src[y * w + x];
                }
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: out,
        })
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::of(v.as_f64())).collect(),
        }
    }

    /// Plane `(n, c)` of an N×C×H×W tensor.
    pub fn plane(&self, n: usize, c: usize) -> &[F] {
        let (_, cc, h, w) = self.dims4("plane").expect("plane() needs rank 4");
        let off = (n * cc + c) * h * w;
        &self.data[off..off + h * w]
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op })
        }
    }
}

impl<F: Scalar> std::ops::Index<usize> for Tensor<F> {
    type Output = F;
    fn index(&self, i: usize) -> &F {
        &self.data[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::<f32>::new([2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn roll_wraps() {
        let t = Tensor::<f32>::new([1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.roll_spatial(0, 1).unwrap().data(), &[3.0, 1.0, 2.0]);
        assert_eq!(t.roll_spatial(0, -4).unwrap().data(), &[2.0, 3.0, 1.0]);
    }
}
