//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s in execution
//! order. [`Tape::backward`] walks the records once in reverse and
//! accumulates gradients additively into every ancestor that requires them.

use rustfft::num_complex::Complex;

use crate::conv::{self, Conv2dSpec};
use crate::error::{dim_err, Result, TensorError};
use crate::fft;
use crate::par;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    Abs(Var),
    Log1p(Var),
    Exp(Var),
    Sigmoid(Var),
    Gelu(Var),
    Sine(Var, F),
    Clamp(Var, F, F),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        spec: Conv2dSpec,
    },
    LayerNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Upsample(Var, usize),
    Concat(Vec<Var>),
    Reshape(Var),
    GlobalAvg(Var),
    GlobalMax(Var, Vec<usize>),
    ChannelMean(Var),
    ChannelMax(Var, Vec<usize>),
    Gram(Var),
    Fft2(Var),
    Select(Var, usize),
    PadCircular(Var, (usize, usize)),
}

struct Node<F> {
    value: Tensor<F>,
    grad: Option<Tensor<F>>,
    requires_grad: bool,
    op: Op<F>,
}

/// Recorded computation graph; rebuilt for every forward pass.
pub struct Tape<F: Scalar = f32> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn broadcast_strides(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let numel_b: usize = b.iter().product();
    if numel_b == 1 {
        return Ok(vec![0; a.len()]);
    }
    if a.len() != b.len() || a.iter().zip(b).any(|(&x, &y)| y != x && y != 1) {
        return Err(dim_err(
            op,
            format!("cannot broadcast {b:?} onto {a:?}"),
        ));
    }
    let mut strides = vec![0; b.len()];
    let mut acc = 1;
    for d in (0..b.len()).rev() {
        strides[d] = if b[d] == 1 { 0 } else { acc };
        acc *= b[d];
    }
    Ok(strides)
}

fn for_each_broadcast(shape: &[usize], bstrides: &[usize], mut f: impl FnMut(usize, usize)) {
    let r = shape.len();
    let n: usize = shape.iter().product();
    let mut idx = vec![0usize; r];
    let mut bi = 0usize;
    for ai in 0..n {
        f(ai, bi);
        let mut d = r;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            bi += bstrides[d];
            if idx[d] < shape[d] {
                break;
            }
            bi -= bstrides[d] * shape[d];
            idx[d] = 0;
        }
    }
}

fn gelu_cdf<F: Scalar>(x: F) -> F {
    F::of(0.5) * (F::one() + (x * F::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_pdf<F: Scalar>(x: F) -> F {
    F::of(0.398_942_280_401_432_7) * (-(x * x) * F::of(0.5)).exp()
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[Var], name: &'static str) -> Result<Var> {
        value.check_finite(name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a trainable leaf.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<F>> {
        self.nodes[v.0].grad.take()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn unary(&mut self, x: Var, name: &'static str, f: impl Fn(F) -> F, op: Op<F>) -> Result<Var> {
        let value = self.value(x).map(f);
        self.push(value, op, &[x], name)
    }

    /// `a + b`, with `b` broadcast over size-1 axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_zip("add", a, b, |x, y| x + y)?;
        self.push(value, Op::Add(a, b), &[a, b], "add")
    }

    /// `a * b`, with `b` broadcast over size-1 axes of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_zip("mul", a, b, |x, y| x * y)?;
        self.push(value, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y).map_err(|_| {
            dim_err(
                "sub",
                format!("shapes {:?} and {:?} differ", self.shape(a), self.shape(b)),
            )
        })?;
        self.push(value, Op::Sub(a, b), &[a, b], "sub")
    }

    fn broadcast_zip(&self, op: &'static str, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            return ta.zip_map(tb, f);
        }
        let strides = broadcast_strides(op, ta.shape(), tb.shape())?;
        let mut out = vec![F::zero(); ta.numel()];
        let (da, db) = (ta.data(), tb.data());
        for_each_broadcast(ta.shape(), &strides, |ai, bi| out[ai] = f(da[ai], db[bi]));
        Tensor::new(ta.shape().to_vec(), out)
    }

    pub fn scale(&mut self, x: Var, s: F) -> Result<Var> {
        self.unary(x, "scale", |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: F) -> Result<Var> {
        self.unary(x, "add_scalar", |v| v + s, Op::AddScalar(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x), &[x], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / F::of(t.numel() as f64));
        self.push(value, Op::Mean(x), &[x], "mean")
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "abs", num_traits::Float::abs, Op::Abs(x))
    }

    /// `ln(1 + x)`; any element `≤ -1` is a domain error.
    pub fn log1p(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|&&v| v <= -F::one()) {
            return Err(TensorError::Domain {
                op: "log1p",
                detail: format!("argument {bad} is not greater than -1"),
            });
        }
        self.unary(x, "log1p", F::ln_1p, Op::Log1p(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "exp", F::exp, Op::Exp(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "sigmoid", |v| F::one() / (F::one() + (-v).exp()), Op::Sigmoid(x))
    }

    /// GELU with the exact Gaussian CDF.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "gelu", |v| v * gelu_cdf(v), Op::Gelu(x))
    }

    /// `sin(omega0 · x)`.
    pub fn sine(&mut self, x: Var, omega0: F) -> Result<Var> {
        self.unary(x, "sine", |v| (omega0 * v).sin(), Op::Sine(x, omega0))
    }

    pub fn clamp(&mut self, x: Var, lo: F, hi: F) -> Result<Var> {
        self.unary(x, "clamp", |v| v.max(lo).min(hi), Op::Clamp(x, lo, hi))
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let value = conv::conv2d_forward(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            &spec,
        )?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                spec,
            },
            &inputs,
            "conv2d",
        )
    }

    /// Normalizes axis 1 of an `N×C×…` tensor to zero mean and unit variance,
    /// then applies the per-channel affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, input: Var, gamma: Var, beta: Var, eps: F) -> Result<Var> {
        let x = self.value(input);
        if x.rank() < 2 {
            return Err(dim_err("layer_norm", "input needs at least axes N and C"));
        }
        let (n, c) = (x.shape()[0], x.shape()[1]);
        let s: usize = x.shape()[2..].iter().product();
        if c == 0 {
            return Err(dim_err("layer_norm", "normalized axis 1 is empty"));
        }
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(p) != [c] {
                return Err(dim_err(
                    "layer_norm",
                    format!("{name} must have shape [{c}], got {:?}", self.shape(p)),
                ));
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![F::zero(); x.numel()];
        let mut rstd = vec![F::zero(); n * s];
        let inv_c = F::of(1.0 / c as f64);
        {
            let src = x.data();
            let mut mean = vec![F::zero(); s];
            let mut var = vec![F::zero(); s];
            for i in 0..n {
                let block = &src[i * c * s..(i + 1) * c * s];
                mean.fill(F::zero());
                var.fill(F::zero());
                for row in block.chunks(s) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m = *m + v;
                    }
                }
                mean.iter_mut().for_each(|m| *m = *m * inv_c);
                for row in block.chunks(s) {
                    for ((q, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = v - m;
                        *q = *q + d * d;
                    }
                }
                let rs = &mut rstd[i * s..(i + 1) * s];
                for (r, &q) in rs.iter_mut().zip(&var) {
                    *r = F::one() / (q * inv_c + eps).sqrt();
                }
                let out = &mut xhat[i * c * s..(i + 1) * c * s];
                for (orow, row) in out.chunks_mut(s).zip(block.chunks(s)) {
                    for (((o, &v), &m), &r) in orow.iter_mut().zip(row).zip(&mean).zip(rs.iter()) {
                        *o = (v - m) * r;
                    }
                }
            }
        }
        let mut y = xhat.clone();
        for (k, row) in y.chunks_mut(s).enumerate() {
            let ch = k % c;
            for v in row.iter_mut() {
                *v = *v * g[ch] + b[ch];
            }
        }
        let value = Tensor::new(x.shape().to_vec(), y)?;
        self.push(
            value,
            Op::LayerNorm {
                input,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[input, gamma, beta],
            "layer_norm",
        )
    }

    /// Replicates every texel `factor` times along both trailing axes.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(TensorError::Invalid {
                op: "upsample_nearest",
                detail: "factor must be at least 1".into(),
            });
        }
        let t = self.value(x);
        let (n, c, h, w) = t.dims4("upsample_nearest")?;
        let (oh, ow) = (h * factor, w * factor);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in t.data().chunks(h * w) {
            for y in 0..oh {
                let row = &plane[(y / factor) * w..(y / factor + 1) * w];
                for xx in 0..ow {
                    out.push(row[xx / factor]);
                }
            }
        }
        let value = Tensor::new([n, c, oh, ow], out)?;
        self.push(value, Op::Upsample(x, factor), &[x], "upsample_nearest")
    }

    /// Concatenates rank-4 tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(*parts.first().ok_or_else(|| dim_err("concat", "no inputs"))?);
        let (n, _, h, w) = first.dims4("concat")?;
        let mut total_c = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4("concat")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(dim_err(
                    "concat",
                    format!("axes 0,2,3 differ: {:?} vs {:?}", (pn, ph, pw), (n, h, w)),
                ));
            }
            total_c += pc;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total_c * hw);
        for i in 0..n {
            for &p in parts {
                let t = self.value(p);
                let pc = t.shape()[1];
                out.extend_from_slice(&t.data()[i * pc * hw..(i + 1) * pc * hw]);
            }
        }
        let value = Tensor::new([n, total_c, h, w], out)?;
        self.push(value, Op::Concat(parts.to_vec()), parts, "concat")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        self.push(value, Op::Reshape(x), &[x], "reshape")
    }

    /// Spatial mean: `N×C×H×W → N×C×1×1`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (n, c, h, w) = t.dims4("global_avg_pool")?;
        let inv = F::of(1.0 / (h * w) as f64);
        let out: Vec<F> = t.data().chunks(h * w).map(|p| p.iter().copied().sum::<F>() * inv).collect();
        let value = Tensor::new([n, c, 1, 1], out)?;
        self.push(value, Op::GlobalAvg(x), &[x], "global_avg_pool")
    }

    /// Spatial max: `N×C×H×W → N×C×1×1`.
    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (n, c, h, w) = t.dims4("global_max_pool")?;
        let mut out = Vec::with_capacity(n * c);
        let mut arg = Vec::with_capacity(n * c);
        for (k, p) in t.data().chunks(h * w).enumerate() {
            let (i, v) = p
                .iter()
                .enumerate()
                .fold((0, p[0]), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
            out.push(v);
            arg.push(k * h * w + i);
        }
        let value = Tensor::new([n, c, 1, 1], out)?;
        self.push(value, Op::GlobalMax(x, arg), &[x], "global_max_pool")
    }

    /// Mean over channels: `N×C×H×W → N×1×H×W`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (n, c, h, w) = t.dims4("channel_mean")?;
        let hw = h * w;
        let inv = F::of(1.0 / c as f64);
        let mut out = vec![F::zero(); n * hw];
        for i in 0..n {
            let dst = &mut out[i * hw..(i + 1) * hw];
            for ch in 0..c {
                for (d, &v) in dst.iter_mut().zip(t.plane(i, ch)) {
                    *d = *d + v;
                }
            }
            dst.iter_mut().for_each(|d| *d = *d * inv);
        }
        let value = Tensor::new([n, 1, h, w], out)?;
        self.push(value, Op::ChannelMean(x), &[x], "channel_mean")
    }

    /// Max over channels: `N×C×H×W → N×1×H×W`.
    pub fn channel_max(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (n, c, h, w) = t.dims4("channel_max")?;
        let hw = h * w;
        let mut out = vec![F::neg_infinity(); n * hw];
        let mut arg = vec![0usize; n * hw];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * hw;
                for (p, &v) in t.plane(i, ch).iter().enumerate() {
                    if v > out[i * hw + p] {
                        out[i * hw + p] = v;
                        arg[i * hw + p] = base + p;
                    }
                }
            }
        }
        let value = Tensor::new([n, 1, h, w], out)?;
        self.push(value, Op::ChannelMax(x, arg), &[x], "channel_max")
    }

    /// Channel Gram matrices `G[n] = F[n]·F[n]ᵀ / (C·H·W)`: `N×C×H×W → N×C×C`.
    pub fn gram(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (n, c, h, w) = t.dims4("gram")?;
        let p = h * w;
        let norm = F::of(1.0 / (c * p) as f64);
        let mut out = vec![F::zero(); n * c * c];
        for i in 0..n {
            let f = &t.data()[i * c * p..(i + 1) * c * p];
            F::gemm(
                c,
                p,
                c,
                norm,
                f,
                (p as isize, 1),
                f,
                (1, p as isize),
                F::zero(),
                &mut out[i * c * c..(i + 1) * c * c],
                (c as isize, 1),
            );
        }
        let value = Tensor::new([n, c, c], out)?;
        self.push(value, Op::Gram(x), &[x], "gram")
    }

    /// Unnormalized 2D DFT of every plane: `N×C×H×W → 2×N×C×H×W`
    /// (real parts first, then imaginary parts).
    pub fn fft2(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (n, c, h, w) = t.dims4("fft2")?;
        let hw = h * w;
        let planes = par::map_indices(n * c, |k| fft::fft2(&t.data()[k * hw..(k + 1) * hw], h, w));
        let mut out = vec![F::zero(); 2 * n * c * hw];
        let (re, im) = out.split_at_mut(n * c * hw);
        for (k, spec) in planes.iter().enumerate() {
            for (p, z) in spec.iter().enumerate() {
                re[k * hw + p] = z.re;
                im[k * hw + p] = z.im;
            }
        }
        let value = Tensor::new([2, n, c, h, w], out)?;
        self.push(value, Op::Fft2(x), &[x], "fft2")
    }

    /// Index `i` along axis 0.
    pub fn select(&mut self, x: Var, i: usize) -> Result<Var> {
        let t = self.value(x);
        let k = *t.shape().first().ok_or_else(|| dim_err("select", "rank-0 input"))?;
        if i >= k {
            return Err(dim_err("select", format!("index {i} out of axis 0 extent {k}")));
        }
        let inner = t.numel() / k;
        let value = Tensor::new(t.shape()[1..].to_vec(), t.data()[i * inner..(i + 1) * inner].to_vec())?;
        self.push(value, Op::Select(x, i), &[x], "select")
    }

    pub fn pad_circular(&mut self, x: Var, pad: (usize, usize)) -> Result<Var> {
        let value = conv::pad_circular(self.value(x), pad)?;
        self.push(value, Op::PadCircular(x, pad), &[x], "pad_circular")
    }

    /// Populates gradients of every ancestor of the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        self.backward_with(loss, Tensor::full(shape, F::one()))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `out`) to every
    /// ancestor of `out`.
    pub fn backward_with(&mut self, out: Var, seed: Tensor<F>) -> Result<()> {
        if seed.shape() != self.shape(out) {
            return Err(dim_err(
                "backward_with",
                format!("seed {:?} vs output {:?}", seed.shape(), self.shape(out)),
            ));
        }
        accumulate(&mut self.nodes[out.0], seed);
        for i in (0..=out.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(i, &g)?;
            self.nodes[i].grad = Some(g);
            for (v, t) in contributions {
                if self.nodes[v.0].requires_grad {
                    accumulate(&mut self.nodes[v.0], t);
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_grads(&self, i: usize, g: &Tensor<F>) -> Result<Vec<(Var, Tensor<F>)>> {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                res.push((*a, g.clone()));
                if self.wants(*b) {
                    res.push((*b, reduce_broadcast(g, val(*b).shape())?));
                }
            }
            Op::Sub(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.map(|v| -v)));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if ta.shape() == tb.shape() {
                    if self.wants(*a) {
                        res.push((*a, g.zip_map(tb, |gv, bv| gv * bv)?));
                    }
                    if self.wants(*b) {
                        res.push((*b, g.zip_map(ta, |gv, av| gv * av)?));
                    }
                } else {
                    let strides = broadcast_strides("mul", ta.shape(), tb.shape())?;
                    let (da, db, dg) = (ta.data(), tb.data(), g.data());
                    if self.wants(*a) {
                        let mut ga = vec![F::zero(); ta.numel()];
                        for_each_broadcast(ta.shape(), &strides, |ai, bi| ga[ai] = dg[ai] * db[bi]);
                        res.push((*a, Tensor::new(ta.shape().to_vec(), ga)?));
                    }
                    if self.wants(*b) {
                        let mut gb = vec![F::zero(); tb.numel()];
                        for_each_broadcast(ta.shape(), &strides, |ai, bi| {
                            gb[bi] = gb[bi] + dg[ai] * da[ai]
                        });
                        res.push((*b, Tensor::new(tb.shape().to_vec(), gb)?));
                    }
                }
            }
            Op::Scale(x, s) => res.push((*x, g.map(|v| v * *s))),
            Op::AddScalar(x) => res.push((*x, g.clone())),
            Op::Sum(x) => res.push((*x, Tensor::full(val(*x).shape(), g.item()))),
            Op::Mean(x) => {
                let t = val(*x);
                let v = g.item() / F::of(t.numel() as f64);
                res.push((*x, Tensor::full(t.shape(), v)));
            }
            Op::Abs(x) => res.push((*x, g.zip_map(val(*x), |gv, xv| gv * xv.signum())?)),
            Op::Log1p(x) => res.push((*x, g.zip_map(val(*x), |gv, xv| gv / (F::one() + xv))?)),
            Op::Exp(x) => res.push((*x, g.zip_map(out, |gv, yv| gv * yv)?)),
            Op::Sigmoid(x) => res.push((*x, g.zip_map(out, |gv, yv| gv * yv * (F::one() - yv))?)),
            Op::Gelu(x) => res.push((
                *x,
                g.zip_map(val(*x), |gv, xv| gv * (gelu_cdf(xv) + xv * gelu_pdf(xv)))?,
            )),
            Op::Sine(x, w) => res.push((*x, g.zip_map(val(*x), |gv, xv| gv * *w * (*w * xv).cos())?)),
            Op::Clamp(x, lo, hi) => res.push((
                *x,
                g.zip_map(val(*x), |gv, xv| if xv >= *lo && xv <= *hi { gv } else { F::zero() })?,
            )),
            Op::Conv2d {
                input,
                kernel,
                bias,
                spec,
            } => {
                let want = (self.wants(*input), self.wants(*kernel), bias.is_some_and(|b| self.wants(b)));
                let grads = conv::conv2d_backward(val(*input), val(*kernel), g, spec, want)?;
                if let Some(t) = grads.input {
                    res.push((*input, t));
                }
                if let Some(t) = grads.kernel {
                    res.push((*kernel, t));
                }
                if let (Some(b), Some(t)) = (bias, grads.bias) {
                    res.push((*b, t));
                }
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let shape = val(*input).shape();
                let (n, c) = (shape[0], shape[1]);
                let s = out.numel() / (n * c);
                let gam = val(*gamma).data();
                let dg = g.data();
                let mut ggam = vec![F::zero(); c];
                let mut gbet = vec![F::zero(); c];
                for (k, (grow, xrow)) in dg.chunks(s).zip(xhat.chunks(s)).enumerate() {
                    let ch = k % c;
                    let mut a = F::zero();
                    let mut b = F::zero();
                    for (&gv, &xv) in grow.iter().zip(xrow) {
                        a = a + gv * xv;
                        b = b + gv;
                    }
                    ggam[ch] = ggam[ch] + a;
                    gbet[ch] = gbet[ch] + b;
                }
                if self.wants(*input) {
                    let inv_c = F::of(1.0 / c as f64);
                    let mut gx = vec![F::zero(); out.numel()];
                    par::for_each_chunk(&mut gx, c * s, out.numel() * 4, |i, dst| {
                        let gblk = &dg[i * c * s..(i + 1) * c * s];
                        let xblk = &xhat[i * c * s..(i + 1) * c * s];
                        let rs = &rstd[i * s..(i + 1) * s];
                        let mut m1 = vec![F::zero(); s];
                        let mut m2 = vec![F::zero(); s];
                        for ch in 0..c {
                            let gr = &gblk[ch * s..(ch + 1) * s];
                            let xr = &xblk[ch * s..(ch + 1) * s];
                            for p in 0..s {
                                let gx = gr[p] * gam[ch];
                                m1[p] = m1[p] + gx;
                                m2[p] = m2[p] + gx * xr[p];
                            }
                        }
                        for ch in 0..c {
                            let gr = &gblk[ch * s..(ch + 1) * s];
                            let xr = &xblk[ch * s..(ch + 1) * s];
                            let dr = &mut dst[ch * s..(ch + 1) * s];
                            for p in 0..s {
                                let gxh = gr[p] * gam[ch];
                                dr[p] = rs[p] * (gxh - m1[p] * inv_c - xr[p] * m2[p] * inv_c);
                            }
                        }
                    });
                    res.push((*input, Tensor::new(shape.to_vec(), gx)?));
                }
                res.push((*gamma, Tensor::new([c], ggam)?));
                res.push((*beta, Tensor::new([c], gbet)?));
            }
            Op::Upsample(x, f) => {
                let t = val(*x);
                let (_, _, h, w) = t.dims4("upsample_nearest")?;
                let (oh, ow) = (h * f, w * f);
                let mut gx = vec![F::zero(); t.numel()];
                for (dst, src) in gx.chunks_mut(h * w).zip(g.data().chunks(oh * ow)) {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let k = (y / f) * w + xx / f;
                            dst[k] = dst[k] + src[y * ow + xx];
                        }
                    }
                }
                res.push((*x, Tensor::new(t.shape().to_vec(), gx)?));
            }
            Op::Concat(parts) => {
                let (n, total_c, h, w) = out.dims4("concat")?;
                let hw = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = val(p).shape()[1];
                    if self.wants(p) {
                        let mut gp = Vec::with_capacity(n * pc * hw);
                        for i in 0..n {
                            let base = (i * total_c + offset) * hw;
                            gp.extend_from_slice(&g.data()[base..base + pc * hw]);
                        }
                        res.push((p, Tensor::new(val(p).shape().to_vec(), gp)?));
                    }
                    offset += pc;
                }
            }
            Op::Reshape(x) => res.push((*x, g.clone().reshape(val(*x).shape().to_vec())?)),
            Op::GlobalAvg(x) => {
                let t = val(*x);
                let (_, _, h, w) = t.dims4("global_avg_pool")?;
                let inv = F::of(1.0 / (h * w) as f64);
                let mut gx = Vec::with_capacity(t.numel());
                for &gv in g.data() {
                    gx.extend(std::iter::repeat_n(gv * inv, h * w));
                }
                res.push((*x, Tensor::new(t.shape().to_vec(), gx)?));
            }
            Op::GlobalMax(x, arg) | Op::ChannelMax(x, arg) => {
                let t = val(*x);
                let mut gx = vec![F::zero(); t.numel()];
                for (&k, &gv) in arg.iter().zip(g.data()) {
                    gx[k] = gx[k] + gv;
                }
                res.push((*x, Tensor::new(t.shape().to_vec(), gx)?));
            }
            Op::ChannelMean(x) => {
                let t = val(*x);
                let (n, c, h, w) = t.dims4("channel_mean")?;
                let hw = h * w;
                let inv = F::of(1.0 / c as f64);
                let mut gx = Vec::with_capacity(t.numel());
                for i in 0..n {
                    let src = &g.data()[i * hw..(i + 1) * hw];
                    for _ in 0..c {
                        gx.extend(src.iter().map(|&v| v * inv));
                    }
                }
                res.push((*x, Tensor::new(t.shape().to_vec(), gx)?));
            }
            Op::Gram(x) => {
                let t = val(*x);
                let (n, c, h, w) = t.dims4("gram")?;
                let p = h * w;
                let norm = F::of(1.0 / (c * p) as f64);
                let mut gx = vec![F::zero(); t.numel()];
                for i in 0..n {
                    let gg = &g.data()[i * c * c..(i + 1) * c * c];
                    let sym: Vec<F> = (0..c * c)
                        .map(|k| gg[k] + gg[(k % c) * c + k / c])
                        .collect();
                    F::gemm(
                        c,
                        c,
                        p,
                        norm,
                        &sym,
                        (c as isize, 1),
                        &t.data()[i * c * p..(i + 1) * c * p],
                        (p as isize, 1),
                        F::zero(),
                        &mut gx[i * c * p..(i + 1) * c * p],
                        (p as isize, 1),
                    );
                }
                res.push((*x, Tensor::new(t.shape().to_vec(), gx)?));
            }
            Op::Fft2(x) => {
                let t = val(*x);
                let (n, c, h, w) = t.dims4("fft2")?;
                let hw = h * w;
                let (gre, gim) = g.data().split_at(n * c * hw);
                let planes = par::map_indices(n * c, |k| {
                    let mut z: Vec<Complex<F>> = (0..hw)
                        .map(|p| Complex::new(gre[k * hw + p], -gim[k * hw + p]))
                        .collect();
                    fft::fft2_complex(&mut z, h, w);
                    z
                });
                let gx: Vec<F> = planes.iter().flat_map(|z| z.iter().map(|v| v.re)).collect();
                res.push((*x, Tensor::new(t.shape().to_vec(), gx)?));
            }
            Op::Select(x, i) => {
                let t = val(*x);
                let inner = g.numel();
                let mut gx = vec![F::zero(); t.numel()];
                gx[i * inner..(i + 1) * inner].copy_from_slice(g.data());
                res.push((*x, Tensor::new(t.shape().to_vec(), gx)?));
            }
            Op::PadCircular(x, pad) => {
                res.push((*x, conv::pad_circular_adjoint(g, val(*x).shape(), *pad)));
            }
        }
        Ok(res)
    }
}

fn accumulate<F: Scalar>(node: &mut Node<F>, g: Tensor<F>) {
    match &mut node.grad {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Sums `g` over the axes along which a tensor of `shape` was broadcast.
fn reduce_broadcast<F: Scalar>(g: &Tensor<F>, shape: &[usize]) -> Result<Tensor<F>> {
    if g.shape() == shape {
        return Ok(g.clone());
    }
    let strides = broadcast_strides("add", g.shape(), shape)?;
    let mut out = vec![F::zero(); shape.iter().product()];
    let dg = g.data();
    for_each_broadcast(g.shape(), &strides, |ai, bi| out[bi] = out[bi] + dg[ai]);
    Tensor::new(shape.to_vec(), out)
}
