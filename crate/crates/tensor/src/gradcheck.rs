//! Central finite-difference gradient checking.
//!
//! The numeric side only ever runs forward passes, so it is independent of
//! the backward rules it is used to verify. Each check contracts the op
//! output with a fixed random cotangent `r`, so the analytic side is one
//! vector-Jacobian product and the numeric side is a directional difference
//! of `Σ r·y` accumulated in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{Conv2dSpec, Padding};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Normwise relative error of the full gradient vector (all inputs):
    /// `max|analytic − numeric| / max(max|analytic|, max|numeric|, floor)`.
    pub max_rel_err: f64,
    /// `(input, element, analytic, numeric)` of the largest absolute discrepancy.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

impl GradCheckReport {
    fn empty() -> Self {
        Self {
            max_rel_err: 0.0,
            worst: None,
            checked: 0,
        }
    }

    fn merge(&mut self, other: GradCheckReport) {
        if other.max_rel_err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
        self.checked += other.checked;
    }
}

/// Compares the tape gradient of `Σ r·build(inputs)` against central
/// differences with step `h`, for every element of every input. `r` is drawn
/// uniformly from [-1, 1] with `seed`. The error is normwise over all inputs
/// together, with `floor` guarding all-zero gradients.
pub fn check_gradients<F, B>(inputs: &[Tensor<F>], h: f64, floor: f64, seed: u64, build: B) -> Result<GradCheckReport>
where
    F: Scalar,
    B: Fn(&mut Tape<F>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cotangent: Tensor<F> = Tensor::from_fn(tape.shape(out).to_vec(), |_| F::of(rng.random_range(-1.0..1.0)));
    let weights: Vec<f64> = cotangent.data().iter().map(|v| v.as_f64()).collect();
    tape.backward_with(out, cotangent)?;
    let analytic: Vec<Tensor<F>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |values: &[Tensor<F>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).data().iter().zip(&weights).map(|(y, r)| y.as_f64() * r).sum())
    };

    let (mut scale, mut diff) = (0.0f64, 0.0f64);
    let mut worst = None;
    let mut checked = 0;
    let mut probe = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        for e in 0..t.numel() {
            let orig = t.data()[e];
            let hi = F::of(orig.as_f64() + h);
            let lo = F::of(orig.as_f64() - h);
            probe[i].data_mut()[e] = hi;
            let up = eval(&probe)?;
            probe[i].data_mut()[e] = lo;
            let down = eval(&probe)?;
            probe[i].data_mut()[e] = orig;
            // The representable step, not the requested one.
            let numeric = (up - down) / (hi.as_f64() - lo.as_f64());
            let a = analytic[i].data()[e].as_f64();
            scale = scale.max(a.abs()).max(numeric.abs());
            if (a - numeric).abs() >= diff {
                diff = (a - numeric).abs();
                worst = Some((i, e, a, numeric));
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err: diff / scale.max(floor),
        worst,
        checked,
    })
}

/// Integer parameters of one randomized configuration (strides, factors, …).
pub type Params = Vec<usize>;

/// A differentiable op together with a generator of valid random inputs.
pub struct OpCase<F: Scalar> {
    pub name: &'static str,
    pub sample: fn(&mut ChaCha8Rng) -> (Vec<Tensor<F>>, Params),
    pub build: fn(&mut Tape<F>, &[Var], &[usize]) -> Result<Var>,
}

fn uniform<F: Scalar>(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<F> {
    Tensor::from_fn(shape.to_vec(), |_| F::of(rng.random_range(lo..hi)))
}

/// Magnitudes in `[lo, hi)` with random sign.
fn away_from_zero<F: Scalar>(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<F> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(lo..hi);
        F::of(if rng.random_bool(0.5) { m } else { -m })
    })
}

/// Values spaced at least `2/numel` apart, so max-selections are stable
/// under the finite-difference step.
fn distinct<F: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    Tensor::from_fn(shape.to_vec(), |i| F::of(2.0 * (order[i] as f64 + 0.5) / n as f64 - 1.0))
}

fn nchw(rng: &mut ChaCha8Rng, c: std::ops::RangeInclusive<usize>, hw: std::ops::RangeInclusive<usize>) -> [usize; 4] {
    [
        rng.random_range(1..=2),
        rng.random_range(c),
        rng.random_range(hw.clone()),
        rng.random_range(hw),
    ]
}

fn elementwise(rng: &mut ChaCha8Rng) -> [usize; 4] {
    nchw(rng, 1..=3, 1..=4)
}

/// Every differentiable op on the tape, each with a sampler that keeps inputs
/// off non-differentiable points.
pub fn op_cases<F: Scalar>() -> Vec<OpCase<F>> {
    vec![
        OpCase {
            name: "add",
            sample: |rng| {
                let s = elementwise(rng);
                (vec![uniform(&s, -1.0, 1.0, rng), uniform(&s, -1.0, 1.0, rng)], vec![])
            },
            build: |t, v, _| t.add(v[0], v[1]),
        },
        OpCase {
            name: "add_broadcast",
            sample: |rng| {
                let s = elementwise(rng);
                let b = [1, s[1], 1, 1];
                (vec![uniform(&s, -1.0, 1.0, rng), uniform(&b, -1.0, 1.0, rng)], vec![])
            },
            build: |t, v, _| t.add(v[0], v[1]),
        },
        OpCase {
            name: "sub",
            sample: |rng| {
                let s = elementwise(rng);
                (vec![uniform(&s, -1.0, 1.0, rng), uniform(&s, -1.0, 1.0, rng)], vec![])
            },
            build: |t, v, _| t.sub(v[0], v[1]),
        },
        OpCase {
            name: "mul",
            sample: |rng| {
                let s = elementwise(rng);
                (vec![uniform(&s, -1.0, 1.0, rng), uniform(&s, -1.0, 1.0, rng)], vec![])
            },
            build: |t, v, _| t.mul(v[0], v[1]),
        },
        OpCase {
            name: "mul_broadcast",
            sample: |rng| {
                let s = elementwise(rng);
                let b = [s[0], s[1], 1, 1];
                (vec![uniform(&s, -1.0, 1.0, rng), uniform(&b, -1.0, 1.0, rng)], vec![])
            },
            build: |t, v, _| t.mul(v[0], v[1]),
        },
        OpCase {
            name: "scale",
            sample: |rng| (vec![uniform(&elementwise(rng), -1.0, 1.0, rng)], vec![]),
            build: |t, v, _| t.scale(v[0], F::of(-1.7)),
        },
        OpCase {
            name: "add_scalar",
            sample: |rng| (vec![uniform(&elementwise(rng), -1.0, 1.0, rng)], vec![]),
            build: |t, v, _| t.add_scalar(v[0], F::of(0.3)),
        },
        OpCase {
            name: "sum",
            sample: |rng| (vec![uniform(&elementwise(rng), -1.0, 1.0, rng)], vec![]),
            build: |t, v, _| t.sum(v[0]),
        },
        OpCase {
            name: "mean",
            sample: |rng| (vec![uniform(&elementwise(rng), -1.0, 1.0, rng)], vec![]),
            build: |t, v, _| t.mean(v[0]),
        },
        OpCase {
            name: "abs",
            sample: |rng| (vec![away_from_zero(&elementwise(rng), 0.05, 1.0, rng)], vec![]),
            build: |t, v, _| t.abs(v[0]),
        },
        OpCase {
            name: "log1p",
            sample: |rng| (vec![uniform(&elementwise(rng), -0.5, 2.0, rng)], vec![]),
            build: |t, v, _| t.log1p(v[0]),
        },
        OpCase {
            name: "exp",
            sample: |rng| (vec![uniform(&elementwise(rng), -2.0, 2.0, rng)], vec![]),
            build: |t, v, _| t.exp(v[0]),
        },
        OpCase {
            name: "sigmoid",
            sample: |rng| (vec![uniform(&elementwise(rng), -3.0, 3.0, rng)], vec![]),
            build: |t, v, _| t.sigmoid(v[0]),
        },
        OpCase {
            name: "gelu",
            sample: |rng| (vec![uniform(&elementwise(rng), -3.0, 3.0, rng)], vec![]),
            build: |t, v, _| t.gelu(v[0]),
        },
        OpCase {
            name: "sine",
            sample: |rng| (vec![uniform(&elementwise(rng), -1.0, 1.0, rng)], vec![]),
            build: |t, v, _| t.sine(v[0], F::of(30.0)),
        },
        OpCase {
            name: "clamp",
            // Magnitudes keep clear of both bounds at ±0.5.
            sample: |rng| {
                let s = elementwise(rng);
                let x = Tensor::from_fn(s.to_vec(), |_| {
                    let m = if rng.random_bool(0.5) {
                        rng.random_range(0.0..0.45)
                    } else {
                        rng.random_range(0.55..1.0)
                    };
                    F::of(if rng.random_bool(0.5) { m } else { -m })
                });
                (vec![x], vec![])
            },
            build: |t, v, _| t.clamp(v[0], F::of(-0.5), F::of(0.5)),
        },
        OpCase {
            name: "conv2d",
            // params: stride, groups, zero padding flag
            sample: |rng| {
                let k = [1, 3, 5][rng.random_range(0..3)];
                let groups = rng.random_range(1..=2);
                let cin = groups * rng.random_range(1..=2);
                let cout = groups * rng.random_range(1..=2);
                let stride = rng.random_range(1..=2);
                let zero = rng.random_bool(0.3) as usize;
                let x = [rng.random_range(1..=2), cin, rng.random_range(k..=k + 2), rng.random_range(k..=k + 2)];
                let inputs = vec![
                    uniform(&x, -1.0, 1.0, rng),
                    uniform(&[cout, cin / groups, k, k], -1.0, 1.0, rng),
                    uniform(&[cout], -1.0, 1.0, rng),
                ];
                (inputs, vec![stride, groups, zero])
            },
            build: |t, v, p| {
                let pad = if p[2] == 1 { Padding::Zero } else { Padding::Circular };
                let spec = Conv2dSpec::circular().with_stride(p[0]).with_groups(p[1]).with_padding(pad);
                t.conv2d(v[0], v[1], Some(v[2]), spec)
            },
        },
        OpCase {
            name: "conv2d_pointwise",
            sample: |rng| {
                let x = nchw(rng, 1..=4, 1..=5);
                let cout = rng.random_range(1..=4);
                let inputs = vec![uniform(&x, -1.0, 1.0, rng), uniform(&[cout, x[1], 1, 1], -1.0, 1.0, rng)];
                (inputs, vec![])
            },
            build: |t, v, _| t.conv2d(v[0], v[1], None, Conv2dSpec::circular()),
        },
        OpCase {
            name: "layer_norm",
            sample: |rng| {
                // Two channels normalize to ±1 whatever the input, a zero-gradient case.
                let s = nchw(rng, 3..=5, 1..=3);
                let inputs = vec![
                    uniform(&s, -2.0, 2.0, rng),
                    uniform(&[s[1]], 0.5, 1.5, rng),
                    uniform(&[s[1]], -0.5, 0.5, rng),
                ];
                (inputs, vec![])
            },
            build: |t, v, _| t.layer_norm(v[0], v[1], v[2], F::of(1e-5)),
        },
        OpCase {
            name: "upsample_nearest",
            sample: |rng| (vec![uniform(&nchw(rng, 1..=2, 1..=3), -1.0, 1.0, rng)], vec![rng.random_range(1..=3)]),
            build: |t, v, p| t.upsample_nearest(v[0], p[0]),
        },
        OpCase {
            name: "concat_channels",
            sample: |rng| {
                let s = nchw(rng, 1..=3, 1..=3);
                let parts = rng.random_range(1..=3);
                let inputs = (0..parts)
                    .map(|_| uniform(&[s[0], rng.random_range(1..=3), s[2], s[3]], -1.0, 1.0, rng))
                    .collect();
                (inputs, vec![])
            },
            build: |t, v, _| t.concat_channels(v),
        },
        OpCase {
            name: "reshape",
            sample: |rng| (vec![uniform(&elementwise(rng), -1.0, 1.0, rng)], vec![]),
            build: |t, v, _| {
                let n = t.value(v[0]).numel();
                t.reshape(v[0], &[n])
            },
        },
        OpCase {
            name: "select",
            sample: |rng| {
                let s = [rng.random_range(1..=4), rng.random_range(1..=3), rng.random_range(1..=3)];
                let i = rng.random_range(0..s[0]);
                (vec![uniform(&s, -1.0, 1.0, rng)], vec![i])
            },
            build: |t, v, p| t.select(v[0], p[0]),
        },
        OpCase {
            name: "global_avg_pool",
            sample: |rng| (vec![uniform(&nchw(rng, 1..=3, 1..=4), -1.0, 1.0, rng)], vec![]),
            build: |t, v, _| t.global_avg_pool(v[0]),
        },
        OpCase {
            name: "global_max_pool",
            sample: |rng| (vec![distinct(&nchw(rng, 1..=3, 1..=4), rng)], vec![]),
            build: |t, v, _| t.global_max_pool(v[0]),
        },
        OpCase {
            name: "channel_mean",
            sample: |rng| (vec![uniform(&nchw(rng, 1..=4, 1..=3), -1.0, 1.0, rng)], vec![]),
            build: |t, v, _| t.channel_mean(v[0]),
        },
        OpCase {
            name: "channel_max",
            sample: |rng| (vec![distinct(&nchw(rng, 1..=4, 1..=3), rng)], vec![]),
            build: |t, v, _| t.channel_max(v[0]),
        },
        OpCase {
            name: "gram",
            sample: |rng| (vec![uniform(&nchw(rng, 1..=4, 1..=4), -1.0, 1.0, rng)], vec![]),
            build: |t, v, _| t.gram(v[0]),
        },
        OpCase {
            name: "fft2",
            sample: |rng| (vec![uniform(&nchw(rng, 1..=2, 1..=6), -1.0, 1.0, rng)], vec![]),
            build: |t, v, _| t.fft2(v[0]),
        },
        OpCase {
            name: "pad_circular",
            sample: |rng| {
                let s = nchw(rng, 1..=2, 2..=4);
                let pad = vec![rng.random_range(0..s[2]), rng.random_range(0..s[3])];
                (vec![uniform(&s, -1.0, 1.0, rng)], pad)
            },
            build: |t, v, p| t.pad_circular(v[0], (p[0], p[1])),
        },
    ]
}

/// Runs `trials` random configurations of `case` and merges the reports.
pub fn check_case<F: Scalar>(case: &OpCase<F>, trials: usize, seed: u64, h: f64, floor: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = GradCheckReport::empty();
    for trial in 0..trials {
        let (inputs, params) = (case.sample)(&mut rng);
        let report = check_gradients(&inputs, h, floor, seed ^ (trial as u64).wrapping_mul(0x9E37_79B9), |t, v| {
            (case.build)(t, v, &params)
        })?;
        total.merge(report);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // d/dx of x·x is 2x; feeding the same leaf twice must count both paths.
        let x = Tensor::<f64>::new([3], vec![0.5, -1.0, 2.0]).unwrap();
        let ok = check_gradients(&[x.clone()], 1e-5, 1e-12, 1, |t, v| t.mul(v[0], v[0])).unwrap();
        assert!(ok.max_rel_err < 1e-8);
        // A build that is not a pure function of its inputs breaks agreement.
        let calls = std::cell::Cell::new(0.0);
        let bad = check_gradients(&[x], 1e-5, 1e-12, 1, |t, v| {
            calls.set(calls.get() + 1.0);
            t.scale(v[0], calls.get())
        })
        .unwrap();
        assert!(bad.max_rel_err > 0.1);
    }
}
