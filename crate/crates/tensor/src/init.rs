//! Weight initializers.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Orthogonal matrix reshaped to `shape` (first axis = rows, rest flattened).
///
/// Rows are orthonormal when there are no more rows than columns, otherwise
/// columns are orthonormal, so `W·Wᵀ = I` (or `Wᵀ·W = I`) on the smaller side.
pub fn init_orthogonal<F: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Tensor<F>> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(dim_err("init_orthogonal", format!("bad shape {shape:?}")));
    }
    let rows = shape[0];
    let cols: usize = shape[1..].iter().product::<usize>().max(1);
    let (tall_r, tall_c) = (rows.max(cols), rows.min(cols));
    let gauss = DMatrix::<f64>::from_fn(tall_r, tall_c, |_, _| StandardNormal.sample(rng));
    let qr = gauss.qr();
    let mut q = qr.q();
    let r = qr.r();
    // sign fix makes the distribution uniform over the orthogonal group
    for j in 0..tall_c {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let m = if rows >= cols { q } else { q.transpose() };
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            data.push(F::of(m[(i, j)]));
        }
    }
    Tensor::new(shape.to_vec(), data)
}

/// Bound of the uniform distribution used by [`init_siren`].
pub fn siren_bound(layer_index: usize, fan_in: usize, omega0: f64) -> f64 {
    if layer_index == 0 {
        1.0 / fan_in as f64
    } else {
        (6.0 / fan_in as f64).sqrt() / omega0
    }
}

/// Sine-network initialization: `U(-1/fan_in, 1/fan_in)` for the first layer,
/// `U(-√(6/fan_in)/ω0, √(6/fan_in)/ω0)` afterwards.
pub fn init_siren<F: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    layer_index: usize,
    fan_in: usize,
    omega0: f64,
    rng: &mut R,
) -> Result<Tensor<F>> {
    if fan_in == 0 {
        return Err(dim_err("init_siren", "fan_in must be positive"));
    }
    let bound = siren_bound(layer_index, fan_in, omega0);
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Ok(Tensor::from_fn(shape.to_vec(), |_| F::of(dist.sample(rng))))
}
