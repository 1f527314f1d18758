//! Two-dimensional discrete Fourier transform over row-major planes.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::scalar::Scalar;

fn transform<F: Scalar>(data: &mut [Complex<F>], h: usize, w: usize, inverse: bool) {
    assert_eq!(data.len(), h * w, "fft2: plane size mismatch");
    if h == 0 || w == 0 {
        return;
    }
    let mut planner = FftPlanner::<F>::new();
    let row = if inverse {
        planner.plan_fft_inverse(w)
    } else {
        planner.plan_fft_forward(w)
    };
    row.process(data);

    let col = if inverse {
        planner.plan_fft_inverse(h)
    } else {
        planner.plan_fft_forward(h)
    };
    let mut buf = vec![Complex::new(F::zero(), F::zero()); h];
    for x in 0..w {
        for y in 0..h {
            buf[y] = data[y * w + x];
        }
        col.process(&mut buf);
        for y in 0..h {
            data[y * w + x] = buf[y];
        }
    }
}

/// Unnormalized forward DFT of a real `h×w` plane.
pub fn fft2<F: Scalar>(plane: &[F], h: usize, w: usize) -> Vec<Complex<F>> {
    let mut data: Vec<_> = plane.iter().map(|&v| Complex::new(v, F::zero())).collect();
    transform(&mut data, h, w, false);
    data
}

/// Unnormalized forward DFT of a complex plane, in place.
pub fn fft2_complex<F: Scalar>(data: &mut [Complex<F>], h: usize, w: usize) {
    transform(data, h, w, false);
}

/// Unnormalized inverse DFT: `ifft2(fft2(x)) = x · h · w`.
pub fn ifft2<F: Scalar>(data: &mut [Complex<F>], h: usize, w: usize) {
    transform(data, h, w, true);
}
