//! 2D convolution with "same" padding, grouped channels and integer stride.

use crate::error::{dim_err, Result, TensorError};
use crate::par;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Indices wrap modulo the spatial extent.
    Circular,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: Padding,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: Padding::Circular,
            groups: 1,
        }
    }
}

impl Conv2dSpec {
    pub fn circular() -> Self {
        Self::default()
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }
}

const OUTSIDE: usize = usize::MAX;

/// Resolved shapes and source-index tables of one convolution.
pub(crate) struct Geometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub cg: usize,
    pub og: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    /// `rows[ky * ho + y]`: input row read by output row `y` at tap `ky`.
    rows: Vec<usize>,
    /// `cols[kx * wo + x]`: input column read by output column `x` at tap `kx`.
    cols: Vec<usize>,
}

impl Geometry {
    pub fn new(input: &[usize], weight: &[usize], spec: &Conv2dSpec) -> Result<Self> {
        let [n, c, h, w] = input[..] else {
            return Err(dim_err(
                "conv2d",
                format!("input must be N×C×H×W, got {:?}", input),
            ));
        };
        let [o, cg, kh, kw] = weight[..] else {
            return Err(dim_err(
                "conv2d",
                format!("kernel must be O×(C/groups)×kh×kw, got {:?}", weight),
            ));
        };
        let groups = spec.groups;
        if groups == 0 || c % groups != 0 || o % groups != 0 {
            return Err(dim_err(
                "conv2d",
                format!("axis 1 (channels {c}) and kernel axis 0 ({o}) must divide by groups {groups}"),
            ));
        }
        if cg != c / groups {
            return Err(dim_err(
                "conv2d",
                format!(
                    "kernel axis 1 is {cg} but input axis 1 / groups = {}",
                    c / groups
                ),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(dim_err(
                "conv2d",
                format!("kernel axes 2,3 must be odd, got {kh}×{kw}"),
            ));
        }
        if spec.stride == 0 {
            return Err(TensorError::Invalid {
                op: "conv2d",
                detail: "stride must be at least 1".into(),
            });
        }
        if h == 0 || w == 0 {
            return Err(dim_err("conv2d", "input axes 2,3 must be non-empty"));
        }
        let ho = h.div_ceil(spec.stride);
        let wo = w.div_ceil(spec.stride);
        let table = |k: usize, out: usize, extent: usize| -> Vec<usize> {
            let pad = (k / 2) as isize;
            let mut t = Vec::with_capacity(k * out);
            for tap in 0..k {
                for i in 0..out {
                    let src = (i * spec.stride) as isize + tap as isize - pad;
                    t.push(match spec.padding {
                        Padding::Circular => src.rem_euclid(extent as isize) as usize,
                        Padding::Zero if src < 0 || src >= extent as isize => OUTSIDE,
                        Padding::Zero => src as usize,
                    });
                }
            }
            t
        };
        Ok(Self {
            n,
            c,
            h,
            w,
            o,
            cg,
            og: o / groups,
            kh,
            kw,
            ho,
            wo,
            rows: table(kh, ho, h),
            cols: table(kw, wo, w),
        })
    }

    fn pointwise(&self, spec: &Conv2dSpec) -> bool {
        self.kh == 1 && self.kw == 1 && spec.stride == 1 && spec.groups == 1
    }

    fn macs(&self) -> usize {
        self.n * self.o * self.ho * self.wo * self.cg * self.kh * self.kw
    }
}

fn check_bias<F: Scalar>(bias: Option<&Tensor<F>>, o: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [o] {
            return Err(dim_err(
                "conv2d",
                format!("bias must have shape [{o}], got {:?}", b.shape()),
            ));
        }
    }
    Ok(())
}

pub fn conv2d_forward<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    spec: &Conv2dSpec,
) -> Result<Tensor<F>> {
    let g = Geometry::new(input.shape(), kernel.shape(), spec)?;
    check_bias(bias, g.o)?;
    let plane_out = g.ho * g.wo;
    let mut out = vec![F::zero(); g.n * g.o * plane_out];
    let x = input.data();
    let k = kernel.data();
    let bias = bias.map(|b| b.data());

    if g.pointwise(spec) {
        let p = g.h * g.w;
        par::for_each_chunk(&mut out, g.o * p, g.macs(), |n, dst| {
            if let Some(b) = bias {
                for (o, row) in dst.chunks_mut(p).enumerate() {
                    row.fill(b[o]);
                }
            }
            let src = &x[n * g.c * p..(n + 1) * g.c * p];
            F::gemm(
                g.o,
                g.c,
                p,
                F::one(),
                k,
                (g.c as isize, 1),
                src,
                (p as isize, 1),
                F::one(),
                dst,
                (p as isize, 1),
            );
        });
        return Tensor::new([g.n, g.o, g.ho, g.wo], out);
    }

    let plane_in = g.h * g.w;
    par::for_each_chunk(&mut out, plane_out, g.macs(), |idx, dst| {
        let n = idx / g.o;
        let o = idx % g.o;
        let grp = o / g.og;
        if let Some(b) = bias {
            dst.fill(b[o]);
        }
        for cl in 0..g.cg {
            let c = grp * g.cg + cl;
            let src = &x[(n * g.c + c) * plane_in..(n * g.c + c + 1) * plane_in];
            let taps = &k[(o * g.cg + cl) * g.kh * g.kw..(o * g.cg + cl + 1) * g.kh * g.kw];
            for ky in 0..g.kh {
                for y in 0..g.ho {
                    let iy = g.rows[ky * g.ho + y];
                    if iy == OUTSIDE {
                        continue;
                    }
                    let src_row = &src[iy * g.w..(iy + 1) * g.w];
                    let dst_row = &mut dst[y * g.wo..(y + 1) * g.wo];
                    for kx in 0..g.kw {
                        let wv = taps[ky * g.kw + kx];
                        let cols = &g.cols[kx * g.wo..(kx + 1) * g.wo];
                        for (d, &ix) in dst_row.iter_mut().zip(cols) {
                            if ix != OUTSIDE {
                                *d = *d + wv * src_row[ix];
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new([g.n, g.o, g.ho, g.wo], out)
}

/// Gradients of a convolution with respect to its input, kernel and bias.
pub struct Conv2dGrads<F> {
    pub input: Option<Tensor<F>>,
    pub kernel: Option<Tensor<F>>,
    pub bias: Option<Tensor<F>>,
}

pub fn conv2d_backward<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    grad_out: &Tensor<F>,
    spec: &Conv2dSpec,
    want: (bool, bool, bool),
) -> Result<Conv2dGrads<F>> {
    let g = Geometry::new(input.shape(), kernel.shape(), spec)?;
    let x = input.data();
    let k = kernel.data();
    let go = grad_out.data();
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;

    let bias = want.2.then(|| {
        let mut gb = vec![F::zero(); g.o];
        for n in 0..g.n {
            for (o, acc) in gb.iter_mut().enumerate() {
                let off = (n * g.o + o) * plane_out;
                *acc = *acc + go[off..off + plane_out].iter().copied().sum::<F>();
            }
        }
        Tensor::new([g.o], gb).expect("bias grad shape")
    });

    if g.pointwise(spec) {
        let p = plane_in;
        let input_grad = want.0.then(|| {
            let mut gi = vec![F::zero(); g.n * g.c * p];
            par::for_each_chunk(&mut gi, g.c * p, g.macs(), |n, dst| {
                F::gemm(
                    g.c,
                    g.o,
                    p,
                    F::one(),
                    k,
                    (1, g.c as isize),
                    &go[n * g.o * p..(n + 1) * g.o * p],
                    (p as isize, 1),
                    F::zero(),
                    dst,
                    (p as isize, 1),
                );
            });
            Tensor::new(input.shape().to_vec(), gi).expect("input grad shape")
        });
        let kernel_grad = want.1.then(|| {
            let mut gk = vec![F::zero(); g.o * g.c];
            for n in 0..g.n {
                F::gemm(
                    g.o,
                    p,
                    g.c,
                    F::one(),
                    &go[n * g.o * p..(n + 1) * g.o * p],
                    (p as isize, 1),
                    &x[n * g.c * p..(n + 1) * g.c * p],
                    (1, p as isize),
                    F::one(),
                    &mut gk,
                    (g.c as isize, 1),
                );
            }
            Tensor::new(kernel.shape().to_vec(), gk).expect("kernel grad shape")
        });
        return Ok(Conv2dGrads {
            input: input_grad,
            kernel: kernel_grad,
            bias,
        });
    }

    let input_grad = want.0.then(|| {
        let mut gi = vec![F::zero(); g.n * g.c * plane_in];
        par::for_each_chunk(&mut gi, plane_in, g.macs(), |idx, dst| {
            let n = idx / g.c;
            let c = idx % g.c;
            let grp = c / g.cg;
            let cl = c % g.cg;
            for o in grp * g.og..(grp + 1) * g.og {
                let src = &go[(n * g.o + o) * plane_out..(n * g.o + o + 1) * plane_out];
                let taps = &k[(o * g.cg + cl) * g.kh * g.kw..(o * g.cg + cl + 1) * g.kh * g.kw];
                for ky in 0..g.kh {
                    for y in 0..g.ho {
                        let iy = g.rows[ky * g.ho + y];
                        if iy == OUTSIDE {
                            continue;
                        }
                        let src_row = &src[y * g.wo..(y + 1) * g.wo];
                        let dst_row = &mut dst[iy * g.w..(iy + 1) * g.w];
                        for kx in 0..g.kw {
                            let wv = taps[ky * g.kw + kx];
                            let cols = &g.cols[kx * g.wo..(kx + 1) * g.wo];
                            for (&s, &ix) in src_row.iter().zip(cols) {
                                if ix != OUTSIDE {
                                    dst_row[ix] = dst_row[ix] + wv * s;
                                }
                            }
                        }
                    }
                }
            }
        });
        Tensor::new(input.shape().to_vec(), gi).expect("input grad shape")
    });

    let kernel_grad = want.1.then(|| {
        let taps_per_out = g.cg * g.kh * g.kw;
        let mut gk = vec![F::zero(); g.o * taps_per_out];
        par::for_each_chunk(&mut gk, taps_per_out, g.macs(), |o, dst| {
            let grp = o / g.og;
            for n in 0..g.n {
                let gplane = &go[(n * g.o + o) * plane_out..(n * g.o + o + 1) * plane_out];
                for cl in 0..g.cg {
                    let c = grp * g.cg + cl;
                    let src = &x[(n * g.c + c) * plane_in..(n * g.c + c + 1) * plane_in];
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let cols = &g.cols[kx * g.wo..(kx + 1) * g.wo];
                            let mut acc = F::zero();
                            for y in 0..g.ho {
                                let iy = g.rows[ky * g.ho + y];
                                if iy == OUTSIDE {
                                    continue;
                                }
                                let src_row = &src[iy * g.w..(iy + 1) * g.w];
                                let grow = &gplane[y * g.wo..(y + 1) * g.wo];
                                for (&gv, &ix) in grow.iter().zip(cols) {
                                    if ix != OUTSIDE {
                                        acc = acc + gv * src_row[ix];
                                    }
                                }
                            }
                            let slot = &mut dst[(cl * g.kh + ky) * g.kw + kx];
                            *slot = *slot + acc;
                        }
                    }
                }
            }
        });
        Tensor::new(kernel.shape().to_vec(), gk).expect("kernel grad shape")
    });

    Ok(Conv2dGrads {
        input: input_grad,
        kernel: kernel_grad,
        bias,
    })
}

/// Wrapped copy of the last two axes: `pad.0` rows above and below,
/// `pad.1` columns left and right.
pub fn pad_circular<F: Scalar>(input: &Tensor<F>, pad: (usize, usize)) -> Result<Tensor<F>> {
    let r = input.rank();
    if r < 2 {
        return Err(dim_err("pad_circular", "need at least two axes"));
    }
    let h = input.shape()[r - 2];
    let w = input.shape()[r - 1];
    if (pad.0 > 0 && pad.0 >= h) || (pad.1 > 0 && pad.1 >= w) {
        return Err(TensorError::Invalid {
            op: "pad_circular",
            detail: format!("amount {pad:?} must be smaller than the extent {h}×{w}"),
        });
    }
    let (ph, pw) = (h + 2 * pad.0, w + 2 * pad.1);
    let planes = input.numel() / (h * w).max(1);
    let mut out = Vec::with_capacity(planes * ph * pw);
    for p in 0..planes {
        let src = &input.data()[p * h * w..(p + 1) * h * w];
        for y in 0..ph {
            let sy = (y as isize - pad.0 as isize).rem_euclid(h as isize) as usize;
            for x in 0..pw {
                let sx = (x as isize - pad.1 as isize).rem_euclid(w as isize) as usize;
                out.push(src[sy * w + sx]);
            }
        }
    }
    let mut shape = input.shape().to_vec();
    shape[r - 2] = ph;
    shape[r - 1] = pw;
    Tensor::new(shape, out)
}

/// Adjoint of [`pad_circular`]: folds the border back onto the interior.
pub(crate) fn pad_circular_adjoint<F: Scalar>(
    grad: &Tensor<F>,
    input_shape: &[usize],
    pad: (usize, usize),
) -> Tensor<F> {
    let r = input_shape.len();
    let h = input_shape[r - 2];
    let w = input_shape[r - 1];
    let (ph, pw) = (h + 2 * pad.0, w + 2 * pad.1);
    let planes = grad.numel() / (ph * pw);
    let mut out = vec![F::zero(); planes * h * w];
    for p in 0..planes {
        let src = &grad.data()[p * ph * pw..(p + 1) * ph * pw];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..ph {
            let sy = (y as isize - pad.0 as isize).rem_euclid(h as isize) as usize;
            for x in 0..pw {
                let sx = (x as isize - pad.1 as isize).rem_euclid(w as isize) as usize;
                dst[sy * w + sx] = dst[sy * w + sx] + src[y * pw + x];
            }
        }
    }
    Tensor::new(input_shape.to_vec(), out).expect("pad adjoint shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f32]) -> Tensor<f32> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = Tensor::from_fn([1, 2, 4, 5], |i| (i as f32 * 0.37).sin());
        let mut k = Tensor::zeros([2, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        k.data_mut()[13] = 1.0;
        let y = conv2d_forward(&x, &k, None, &Conv2dSpec::circular().with_groups(2)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn row_wrap_sum() {
        let x = t(&[1, 1, 1, 3], &[1.0, 2.0, 3.0]);
        let k = t(&[1, 1, 1, 3], &[1.0, 1.0, 1.0]);
        let y = conv2d_forward(&x, &k, None, &Conv2dSpec::circular()).unwrap();
        assert_eq!(y.data(), &[6.0, 6.0, 6.0]);
    }

    #[test]
    fn zero_padding_drops_border() {
        let x = t(&[1, 1, 1, 3], &[1.0, 2.0, 3.0]);
        let k = t(&[1, 1, 1, 3], &[1.0, 1.0, 1.0]);
        let spec = Conv2dSpec::circular().with_padding(Padding::Zero);
        let y = conv2d_forward(&x, &k, None, &spec).unwrap();
        assert_eq!(y.data(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn stride_output_size_rounds_up() {
        let x = Tensor::<f32>::zeros([1, 1, 5, 7]);
        let k = Tensor::<f32>::zeros([1, 1, 3, 3]);
        let y = conv2d_forward(&x, &k, None, &Conv2dSpec::circular().with_stride(2)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 4]);
    }

    #[test]
    fn even_kernel_rejected() {
        let x = Tensor::<f32>::zeros([1, 1, 4, 4]);
        let k = Tensor::<f32>::zeros([1, 1, 2, 2]);
        assert!(conv2d_forward(&x, &k, None, &Conv2dSpec::circular()).is_err());
    }

    #[test]
    fn group_mismatch_names_axes() {
        let x = Tensor::<f32>::zeros([1, 3, 4, 4]);
        let k = Tensor::<f32>::zeros([4, 1, 3, 3]);
        let err = conv2d_forward(&x, &k, None, &Conv2dSpec::circular().with_groups(2))
            .unwrap_err()
            .to_string();
        assert!(err.contains("axis 1"), "{err}");
    }

    #[test]
    fn pad_row() {
        let x = t(&[1, 3], &[1.0, 2.0, 3.0]);
        let p = pad_circular(&x, (0, 1)).unwrap();
        assert_eq!(p.data(), &[3.0, 1.0, 2.0, 3.0, 1.0]);
        assert_eq!(pad_circular(&x, (0, 0)).unwrap(), x);
        assert!(pad_circular(&x, (0, 3)).is_err());
        assert!(pad_circular(&x, (1, 0)).is_err());
    }
}
