//! Pixel-wise log-L1, Gram style and focal frequency losses on `N×3×H×W` batches.

use nbtf_tensor::init::init_orthogonal;
use nbtf_tensor::{Conv2dSpec, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::LossWeights;
use crate::btf::BtfSlice;
use crate::error::{Error, Result};

const STYLE_SEED: u64 = 0x5717_1e00;
/// `(out channels, stride)` of each pyramid level.
const STYLE_LEVELS: [(usize, usize); 3] = [(8, 1), (16, 2), (32, 2)];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub total: f32,
    pub l1_log: f32,
    pub style: f32,
    pub freq: f32,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.total, self.l1_log, self.style, self.freq].iter().all(|v| v.is_finite())
    }

    /// Name of the first non-finite component, if any.
    pub fn non_finite_component(&self) -> Option<&'static str> {
        [
            ("l1_log", self.l1_log),
            ("style", self.style),
            ("freq", self.freq),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Loss nodes recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LossVars {
    pub total: Var,
    pub l1_log: Var,
    pub style: Var,
    pub freq: Var,
}

impl LossVars {
    pub fn report(&self, t: &Tape) -> LossReport {
        LossReport {
            total: t.value(self.total).item(),
            l1_log: t.value(self.l1_log).item(),
            style: t.value(self.style).item(),
            freq: t.value(self.freq).item(),
        }
    }
}

/// Fixed random convolution pyramid whose Gram matrices define the style loss.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleExtractor {
    kernels: Vec<(Tensor, Conv2dSpec)>,
}

impl Default for StyleExtractor {
    fn default() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(STYLE_SEED);
        let mut cin = 3;
        let kernels = STYLE_LEVELS
            .iter()
            .map(|&(cout, stride)| {
                let k = init_orthogonal(&[cout, cin, 3, 3], &mut rng).expect("positive extents");
                cin = cout;
                (k, Conv2dSpec::circular().with_stride(stride))
            })
            .collect();
        Self { kernels }
    }
}

impl StyleExtractor {
    pub fn levels(&self) -> usize {
        self.kernels.len()
    }

    pub(crate) fn features(&self, t: &mut Tape, x: Var) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(self.kernels.len());
        let mut h = x;
        for (k, spec) in &self.kernels {
            let k = t.constant(k.clone());
            let y = t.conv2d(h, k, None, *spec)?;
            h = t.gelu(y)?;
            out.push(h);
        }
        Ok(out)
    }

    /// Feature maps of every level, outside any tape.
    pub fn feature_maps(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut t = Tape::new();
        let x = t.constant(x.clone());
        Ok(self.features(&mut t, x)?.into_iter().map(|v| t.value(v).clone()).collect())
    }

    pub(crate) fn loss(&self, t: &mut Tape, pred: Var, target: Var) -> Result<Var> {
        let n = t.shape(pred)[0];
        let fp = self.features(t, pred)?;
        let ft = self.features(t, target)?;
        let mut total = None;
        for (a, b) in fp.into_iter().zip(ft) {
            let d = gram_distance_var(t, a, b)?;
            total = Some(match total {
                None => d,
                Some(s) => t.add(s, d)?,
            });
        }
        let total = total.ok_or_else(|| Error::Config("style pyramid has no levels".into()))?;
        Ok(t.scale(total, 1.0 / (n * self.levels()) as f32)?)
    }
}

/// Sum over the batch of squared Frobenius distances between Gram matrices.
fn gram_distance_var(t: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let ga = t.gram(a)?;
    let gb = t.gram(b)?;
    let d = t.sub(ga, gb)?;
    let sq = t.mul(d, d)?;
    Ok(t.sum(sq)?)
}

/// Squared Frobenius distance between the normalized Gram matrices of two
/// `1×C×H×W` feature maps.
pub fn gram_distance(a: &Tensor, b: &Tensor) -> Result<f32> {
    let mut t = Tape::new();
    let (a, b) = (t.constant(a.clone()), t.constant(b.clone()));
    let d = gram_distance_var(&mut t, a, b)?;
    Ok(t.value(d).item())
}

pub(crate) fn l1_log_var(t: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let p = t.clamp(pred, -0.999, f32::MAX)?;
    let p = t.log1p(p)?;
    let q = t.log1p(target)?;
    let d = t.sub(p, q)?;
    let d = t.abs(d)?;
    Ok(t.mean(d)?)
}

pub(crate) fn focal_freq_var(t: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let (_, _, h, w) = t.value(pred).dims4("focal frequency loss")?;
    let diff = t.sub(pred, target)?;
    let spec = t.fft2(diff)?;
    let re = t.select(spec, 0)?;
    let im = t.select(spec, 1)?;
    let re2 = t.mul(re, re)?;
    let im2 = t.mul(im, im)?;
    let power = t.add(re2, im2)?;
    // unitary normalization divides every coefficient by √(HW)
    let power = t.scale(power, 1.0 / (h * w) as f32)?;
    let hw = h * w;
    let mut weights = t.value(power).clone();
    for plane in weights.data_mut().chunks_mut(hw) {
        let max = plane.iter().fold(0.0f32, |m, v| m.max(v.sqrt()));
        for v in plane.iter_mut() {
            *v = if max > 0.0 { v.sqrt() / max } else { 0.0 };
        }
    }
    let weights = t.constant(weights);
    let weighted = t.mul(power, weights)?;
    Ok(t.mean(weighted)?)
}

pub(crate) fn total_loss_var(
    t: &mut Tape,
    pred: Var,
    target: Var,
    w: &LossWeights,
    style: &StyleExtractor,
) -> Result<LossVars> {
    if t.shape(pred) != t.shape(target) {
        return Err(Error::Dimension(format!(
            "prediction {:?} vs target {:?}",
            t.shape(pred),
            t.shape(target)
        )));
    }
    let l1_log = l1_log_var(t, pred, target).map_err(|e| numeric("l1_log", e))?;
    let style_v = style.loss(t, pred, target).map_err(|e| numeric("style", e))?;
    let freq = focal_freq_var(t, pred, target).map_err(|e| numeric("freq", e))?;
    let a = t.scale(l1_log, w.l1)?;
    let b = t.scale(style_v, w.style)?;
    let c = t.scale(freq, w.freq)?;
    let ab = t.add(a, b)?;
    let total = t.add(ab, c)?;
    Ok(LossVars {
        total,
        l1_log,
        style: style_v,
        freq,
    })
}

/// Tags a non-finite failure with the stage that produced it.
pub(crate) fn numeric(stage: &str, e: Error) -> Error {
    match e {
        Error::Tensor(nbtf_tensor::TensorError::NonFinite { op }) => {
            Error::Numeric(format!("{stage}: {op} produced a non-finite value"))
        }
        Error::Numeric(m) => Error::Numeric(format!("{stage}: {m}")),
        other => other,
    }
}

fn eval_on_tape(pred: &Tensor, target: &Tensor, f: impl FnOnce(&mut Tape, Var, Var) -> Result<Var>) -> Result<f32> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    let mut t = Tape::new();
    let (p, q) = (t.constant(pred.clone()), t.constant(target.clone()));
    let v = f(&mut t, p, q)?;
    Ok(t.value(v).item())
}

pub fn loss_l1_log(pred: &Tensor, target: &Tensor) -> Result<f32> {
    eval_on_tape(pred, target, l1_log_var)
}

pub fn loss_style(pred: &Tensor, target: &Tensor) -> Result<f32> {
    let s = StyleExtractor::default();
    eval_on_tape(pred, target, |t, p, q| s.loss(t, p, q))
}

pub fn loss_focal_freq(pred: &Tensor, target: &Tensor) -> Result<f32> {
    eval_on_tape(pred, target, focal_freq_var)
}

pub fn total_loss(pred: &Tensor, target: &Tensor, w: &LossWeights) -> Result<LossReport> {
    let mut t = Tape::new();
    let (p, q) = (t.constant(pred.clone()), t.constant(target.clone()));
    let vars = total_loss_var(&mut t, p, q, w, &StyleExtractor::default())?;
    Ok(vars.report(&t))
}

/// Stacks equally sized slices into an `N×3×H×W` tensor.
pub fn slices_to_tensor(slices: &[&BtfSlice]) -> Result<Tensor> {
    let first = slices.first().ok_or_else(|| Error::Dimension("empty batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let hw = h * w;
    let mut data = Vec::with_capacity(slices.len() * 3 * hw);
    for s in slices {
        if (s.height(), s.width()) != (h, w) {
            return Err(Error::Dimension(format!(
                "batch mixes {h}×{w} and {}×{} slices",
                s.height(),
                s.width()
            )));
        }
        let px = s.pixels();
        data.extend((0..3 * hw).map(|i| px[(i % hw) * 3 + i / hw]));
    }
    Ok(Tensor::new([slices.len(), 3, h, w], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(shape: [usize; 4], seed: u64, lo: f32, hi: f32) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
    }

    #[test]
    fn identical_inputs_give_zero() {
        let x = random([2, 3, 16, 16], 1, 0.0, 3.0);
        let r = total_loss(&x, &x, &LossWeights::default()).unwrap();
        assert_eq!(r, LossReport::default());
    }

    #[test]
    fn l1_log_examples_and_oracle() {
        let p = Tensor::new([1, 1, 1, 1], vec![std::f32::consts::E - 1.0]).unwrap();
        let z = Tensor::zeros([1, 1, 1, 1]);
        assert!((loss_l1_log(&p, &z).unwrap() - 1.0).abs() < 1e-6);
        let pred = random([2, 3, 5, 7], 2, -2.0, 8.0);
        let target = random([2, 3, 5, 7], 3, 0.0, 8.0);
        let oracle = pred
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| ((a.max(-0.999) as f64).ln_1p() - (b as f64).ln_1p()).abs())
            .sum::<f64>()
            / pred.numel() as f64;
        assert!((loss_l1_log(&pred, &target).unwrap() as f64 - oracle).abs() < 1e-6);
    }

    #[test]
    fn gram_of_constant_maps() {
        let a = Tensor::full([1, 1, 4, 5], 1.0);
        let b = Tensor::full([1, 1, 4, 5], 2.0);
        assert!((gram_distance(&a, &b).unwrap() - 9.0).abs() < 1e-6);
    }

    #[test]
    fn style_grams_match_double_loop() {
        let s = StyleExtractor::default();
        let x = random([1, 3, 16, 16], 4, 0.0, 2.0);
        for f in s.feature_maps(&x).unwrap() {
            let (_, c, h, w) = f.dims4("features").unwrap();
            let p = h * w;
            let mut t = Tape::new();
            let v = t.constant(f.clone());
            let g = t.gram(v).unwrap();
            let g = t.value(g);
            for i in 0..c {
                for j in 0..c {
                    let dot: f64 = (0..p)
                        .map(|k| f.data()[i * p + k] as f64 * f.data()[j * p + k] as f64)
                        .sum();
                    let expect = dot / (c * p) as f64;
                    assert!((g.data()[i * c + j] as f64 - expect).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn focal_frequency_examples_and_oracle() {
        let one = Tensor::full([1, 1, 1, 1], 1.0);
        let zero = Tensor::zeros([1, 1, 1, 1]);
        assert!((loss_focal_freq(&one, &zero).unwrap() - 1.0).abs() < 1e-6);

        let (pred, target) = (random([1, 3, 8, 8], 5, 0.0, 2.0), random([1, 3, 8, 8], 6, 0.0, 2.0));
        let (h, w) = (8usize, 8usize);
        let mut total = 0.0f64;
        for c in 0..3 {
            let d: Vec<f64> = (0..h * w)
                .map(|k| (pred.data()[c * 64 + k] - target.data()[c * 64 + k]) as f64)
                .collect();
            let mut mag = vec![0.0f64; h * w];
            for u in 0..h {
                for v in 0..w {
                    let (mut re, mut im) = (0.0, 0.0);
                    for y in 0..h {
                        for x in 0..w {
                            let ang = -2.0 * std::f64::consts::PI * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                            re += d[y * w + x] * ang.cos();
                            im += d[y * w + x] * ang.sin();
                        }
                    }
                    mag[u * w + v] = (re * re + im * im).sqrt() / ((h * w) as f64).sqrt();
                }
            }
            let max = mag.iter().cloned().fold(0.0, f64::max);
            total += mag.iter().map(|m| m / max * m * m).sum::<f64>();
        }
        let oracle = total / (3 * h * w) as f64;
        let got = loss_focal_freq(&pred, &target).unwrap() as f64;
        assert!((got - oracle).abs() < 1e-4, "{got} vs {oracle}");
    }

    #[test]
    fn total_is_weighted_sum() {
        let pred = random([2, 3, 8, 8], 7, 0.0, 4.0);
        let target = random([2, 3, 8, 8], 8, 0.0, 4.0);
        let w = LossWeights { l1: 0.7, style: 0.3, freq: 1.9 };
        let r = total_loss(&pred, &target, &w).unwrap();
        assert!(r.l1_log > 0.0 && r.style > 0.0 && r.freq > 0.0);
        let sum = w.l1 * r.l1_log + w.style * r.style + w.freq * r.freq;
        assert!((r.total - sum).abs() < 1e-6);
        let l1_only = total_loss(&pred, &target, &LossWeights { l1: 1.0, style: 0.0, freq: 0.0 }).unwrap();
        assert_eq!(l1_only.total, l1_only.l1_log);
        assert_eq!(l1_only.l1_log, loss_l1_log(&pred, &target).unwrap());
    }

    #[test]
    fn batch_order_does_not_matter() {
        let pred = random([3, 3, 8, 8], 9, 0.0, 4.0);
        let target = random([3, 3, 8, 8], 10, 0.0, 4.0);
        let per = 3 * 64;
        let permute = |t: &Tensor| {
            let mut d = Vec::new();
            for i in [2, 0, 1] {
                d.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
            }
            Tensor::new([3, 3, 8, 8], d).unwrap()
        };
        let a = total_loss(&pred, &target, &LossWeights::default()).unwrap();
        let b = total_loss(&permute(&pred), &permute(&target), &LossWeights::default()).unwrap();
        for (x, y) in [(a.total, b.total), (a.l1_log, b.l1_log), (a.style, b.style), (a.freq, b.freq)] {
            assert!((x - y).abs() <= 1e-5 * x.abs().max(1.0));
        }
    }

    #[test]
    fn slices_are_stacked_planar() {
        let s = BtfSlice::new(1, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let t = slices_to_tensor(&[&s]).unwrap();
        assert_eq!(t.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }
}
