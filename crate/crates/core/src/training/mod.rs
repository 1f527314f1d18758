//! Training-pair sampling, losses and the end-to-end optimization loop.

mod augment;
mod config;
mod losses;

pub use augment::{gaussian_blur, hue_rotate, sample_training_pair, TrainingPair};
pub use config::{AugmentationConfig, LossWeights, TrainConfig};
pub use losses::{
    gram_distance, loss_focal_freq, loss_l1_log, loss_style, slices_to_tensor, total_loss, LossReport,
    StyleExtractor,
};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nbtf_tensor::{adam_step, cosine_lr, AdamState, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::btf::BtfDataset;
use crate::bytes;
use crate::error::{Error, Result};
use crate::model::{Autoencoder, Checkpoint, ModelConfig};

pub const LOSS_CSV_HEADER: &str = "step,total,l1_log,style,freq,wall_ms";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    /// Number of optimizer updates completed, starting at 1.
    pub step: u64,
    pub report: LossReport,
    /// Wall time of the step; zero in deterministic mode.
    pub wall_ms: f64,
}

/// Randomness for item `item` of step `step`, independent of batch layout.
pub fn item_rng(seed: u64, step: u64, item: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    key[16..24].copy_from_slice(&(item as u64).to_le_bytes());
    key[24..].copy_from_slice(b"nbtf-aug");
    ChaCha8Rng::from_seed(key)
}

/// Steps the joint optimization of autoencoder and renderer one batch at a time.
pub struct Trainer {
    dataset: BtfDataset,
    config: TrainConfig,
    checkpoint: Checkpoint,
    adam: AdamState,
    style: StyleExtractor,
    deterministic: bool,
}

impl Trainer {
    pub fn new(dataset: BtfDataset, model: ModelConfig, config: TrainConfig, seed: u64) -> Result<Self> {
        model.validate()?;
        config.validate(model.stride())?;
        config.augmentation.check_fits(dataset.height(), dataset.width())?;
        let mut checkpoint = Checkpoint::init(model, seed)?;
        let train = toml::Value::try_from(&config).map_err(|e| Error::Config(e.to_string()))?;
        checkpoint.extra.insert("train".into(), train);
        let mut data = toml::Table::new();
        data.insert("texel_size".into(), toml::Value::Float(dataset.texel_size() as f64));
        checkpoint.extra.insert("data".into(), toml::Value::Table(data));
        let params = checkpoint
            .autoencoder
            .params()
            .tensors()
            .iter()
            .chain(checkpoint.renderer.params().tensors());
        let adam = AdamState::new(params, config.lr);
        Ok(Self {
            dataset,
            config,
            checkpoint,
            adam,
            style: StyleExtractor::default(),
            deterministic: false,
        })
    }

    /// Zeroes reported wall times so loss curves are reproducible byte for byte.
    pub fn deterministic(mut self, on: bool) -> Self {
        self.deterministic = on;
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.checkpoint
    }

    pub fn steps_done(&self) -> u64 {
        self.checkpoint.step
    }

    pub fn step(&mut self) -> Result<LossRecord> {
        let start = Instant::now();
        let step = self.checkpoint.step;
        self.adam.lr = cosine_lr(step, self.config.steps, self.config.lr, self.config.lr_min);
        let (inputs, targets, dirs) = self.batch(step)?;

        let ck = &mut self.checkpoint;
        let mut t = Tape::new();
        let pa = ck.autoencoder.params().bind(&mut t, true);
        let pr = ck.renderer.params().bind(&mut t, true);
        let x = t.constant(inputs);
        let at = |e: Error| match e {
            Error::Numeric(m) => Error::Numeric(format!("step {}: {m}", step + 1)),
            other => other,
        };
        let latents = ck
            .autoencoder
            .forward(&mut t, &pa, x)
            .map_err(|e| at(losses::numeric("autoencoder", e)))?;
        let dirs = t.constant(dirs);
        let rin = t.concat_channels(&[latents, dirs])?;
        let pred = ck
            .renderer
            .forward(&mut t, &pr, rin)
            .map_err(|e| at(losses::numeric("renderer", e)))?;
        let target = t.constant(targets);
        let loss = losses::total_loss_var(&mut t, pred, target, &self.config.loss, &self.style).map_err(at)?;
        let report = loss.report(&t);
        if let Some(part) = report.non_finite_component() {
            return Err(Error::Numeric(format!("step {}: {part} loss is not finite", step + 1)));
        }
        t.backward(loss.total).map_err(|e| at(losses::numeric("backward", e.into())))?;
        let grads: Vec<Tensor> = pa
            .iter()
            .zip(ck.autoencoder.params().tensors())
            .chain(pr.iter().zip(ck.renderer.params().tensors()))
            .map(|(&v, p)| t.take_grad(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
            let names: Vec<&String> = ck.autoencoder.params().names().iter().chain(ck.renderer.params().names()).collect();
            return Err(Error::Numeric(format!("step {}: gradient of {} is not finite", step + 1, names[i])));
        }
        let grad_refs: Vec<&Tensor> = grads.iter().collect();
        let mut params: Vec<&mut Tensor> = ck
            .autoencoder
            .params_mut()
            .tensors_mut()
            .iter_mut()
            .chain(ck.renderer.params_mut().tensors_mut().iter_mut())
            .collect();
        adam_step(&mut params, &grad_refs, &mut self.adam)?;
        ck.step = step + 1;
        let wall_ms = if self.deterministic {
            0.0
        } else {
            start.elapsed().as_secs_f64() * 1e3
        };
        Ok(LossRecord {
            step: step + 1,
            report,
            wall_ms,
        })
    }

    /// Input views, target views and target direction channels of one batch.
    fn batch(&self, step: u64) -> Result<(Tensor, Tensor, Tensor)> {
        let b = self.config.batch_size;
        let crop = self.config.augmentation.crop_size;
        let hw = crop * crop;
        let pairs = (0..b)
            .map(|i| {
                let mut rng = item_rng(self.checkpoint.seed, step, i);
                sample_training_pair(&self.dataset, &self.config.augmentation, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut input = Vec::with_capacity(b * 3 * hw);
        let mut dirs = Vec::with_capacity(b * 4 * hw);
        for p in &pairs {
            input.extend_from_slice(Autoencoder::guidance_tensor(&p.input_view).data());
            for v in p.target_pair.projected() {
                dirs.extend(std::iter::repeat_n(v, hw));
            }
        }
        let targets: Vec<_> = pairs.iter().map(|p| &p.target_view).collect();
        Ok((
            Tensor::new([b, 3, crop, crop], input)?,
            slices_to_tensor(&targets)?,
            Tensor::new([b, 4, crop, crop], dirs)?,
        ))
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Single worker thread and zero wall times.
    pub deterministic: bool,
    /// Where `loss.csv`, `checkpoint.nbck` and periodic checkpoints go.
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub curve: Vec<LossRecord>,
}

/// Runs `config.steps` updates from a fresh initialization.
pub fn train(
    dataset: &BtfDataset,
    model: &ModelConfig,
    config: &TrainConfig,
    seed: u64,
    opts: &TrainOptions,
    mut on_step: impl FnMut(&LossRecord) + Send,
) -> Result<TrainOutcome> {
    let run = || {
        let mut trainer = Trainer::new(dataset.clone(), model.clone(), config.clone(), seed)?.deterministic(opts.deterministic);
        let mut curve = Vec::with_capacity(config.steps as usize);
        for _ in 0..config.steps {
            let rec = trainer.step()?;
            on_step(&rec);
            curve.push(rec);
            let done = trainer.steps_done();
            if let Some(dir) = &opts.out_dir {
                if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.steps {
                    trainer.checkpoint().save(dir.join(format!("checkpoint_{done:06}.nbck")))?;
                }
            }
        }
        let checkpoint = trainer.into_checkpoint();
        if let Some(dir) = &opts.out_dir {
            checkpoint.save(dir.join("checkpoint.nbck"))?;
            write_loss_csv(dir.join("loss.csv"), &curve)?;
        }
        Ok(TrainOutcome { checkpoint, curve })
    };
    with_threads(opts.deterministic, run)
}

#[cfg(feature = "parallel")]
fn with_threads<T: Send>(single: bool, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if !single {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
fn with_threads<T: Send>(_single: bool, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    f()
}

pub fn loss_csv(curve: &[LossRecord]) -> String {
    let mut out = format!("{LOSS_CSV_HEADER}\n");
    for r in curve {
        let p = &r.report;
        writeln!(out, "{},{},{},{},{},{:.3}", r.step, p.total, p.l1_log, p.style, p.freq, r.wall_ms).expect("string write");
    }
    out
}

pub fn write_loss_csv(path: impl AsRef<Path>, curve: &[LossRecord]) -> Result<()> {
    bytes::write_file(path.as_ref(), loss_csv(curve).as_bytes())
}

/// Exponential moving average with smoothing `2 / (window + 1)`.
pub fn ema(values: &[f32], window: usize) -> Vec<f64> {
    let a = 2.0 / (window as f64 + 1.0);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = None;
    for &v in values {
        let next = match acc {
            None => v as f64,
            Some(m) => m + a * (v as f64 - m),
        };
        acc = Some(next);
        out.push(next);
    }
    out
}
