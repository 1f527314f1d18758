//! NBCK checkpoints.
//!
//! ```text
//! "NBCK" | version u16 = 1 | config length u32 | config (UTF-8 TOML)
//! tensor count u32 | per tensor: name length u16, name, rank u8, extents u32[rank], f32 payload
//! ```
//!
//! The config text carries the model configuration under `[model]`, the
//! training step and seed under `[state]`, and any further sections verbatim.

use std::path::Path;

use nbtf_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Autoencoder, ModelConfig, ParamSet, RendererMlp};
use crate::bytes::{self, Reader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NBCK";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    /// Additional config sections stored alongside the model (e.g. training settings).
    pub extra: toml::Table,
    pub step: u64,
    /// Seed of the run; together with `step` it fixes every later random draw.
    pub seed: u64,
    pub autoencoder: Autoencoder,
    pub renderer: RendererMlp,
}

impl Checkpoint {
    /// Freshly initialised networks for `model`, seeded from `seed`.
    pub fn init(model: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let autoencoder = Autoencoder::new(&model, &mut rng)?;
        rng.set_stream(2);
        let renderer = RendererMlp::new(&model, &mut rng)?;
        Ok(Self {
            model,
            extra: toml::Table::new(),
            step: 0,
            seed,
            autoencoder,
            renderer,
        })
    }

    pub fn config_text(&self) -> Result<String> {
        let mut table = self.extra.clone();
        for reserved in ["model", "state"] {
            if table.contains_key(reserved) {
                return Err(Error::Config(format!("extra config may not define [{reserved}]")));
            }
        }
        let model = toml::Value::try_from(&self.model).map_err(|e| Error::Config(e.to_string()))?;
        table.insert("model".into(), model);
        let mut state = toml::Table::new();
        for (k, v) in [("step", self.step), ("seed", self.seed)] {
            let v = i64::try_from(v).map_err(|_| Error::Config(format!("{k} {v} exceeds the config integer range")))?;
            state.insert(k.into(), toml::Value::Integer(v));
        }
        table.insert("state".into(), toml::Value::Table(state));
        toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let text = self.config_text()?;
        let mut out = MAGIC.to_vec();
        bytes::put_u16(&mut out, VERSION);
        bytes::put_u32(&mut out, bytes::u32_of(text.len(), "config length")?);
        out.extend_from_slice(text.as_bytes());
        let sets = [self.autoencoder.params(), self.renderer.params()];
        write_tensors(&mut out, &sets)?;
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        r.magic(MAGIC)?;
        let at = r.pos();
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(Error::format(at, format!("unsupported NBCK version {version}")));
        }
        let len = r.u32("config length")? as usize;
        let at = r.pos();
        let text = std::str::from_utf8(r.take(len, "config text")?)
            .map_err(|e| Error::format(at, format!("config is not UTF-8: {e}")))?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| Error::format(at, format!("config text: {e}")))?;
        let model: ModelConfig = table
            .remove("model")
            .ok_or_else(|| Error::format(at, "config lacks [model]"))?
            .try_into()
            .map_err(|e| Error::format(at, format!("[model]: {e}")))?;
        let state = table
            .remove("state")
            .and_then(|v| v.as_table().cloned())
            .ok_or_else(|| Error::format(at, "config lacks [state]"))?;
        let int = |k: &str| {
            state
                .get(k)
                .and_then(|v| v.as_integer())
                .and_then(|v| u64::try_from(v).ok())
                .ok_or_else(|| Error::format(at, format!("[state] lacks a non-negative {k}")))
        };
        let (step, seed) = (int("step")?, int("seed")?);
        let mut ckpt = Self::init(model, seed).map_err(|e| Error::format(at, format!("embedded config: {e}")))?;
        ckpt.step = step;
        ckpt.extra = table;
        let tensors = read_tensors(&mut r)?;
        let mut sets = [ckpt.autoencoder.params_mut(), ckpt.renderer.params_mut()];
        fill(&mut sets, tensors)?;
        r.finish()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        bytes::write_file(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&bytes::read_file(path.as_ref())?)
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

/// Count, then each tensor framed with name, rank and extents.
pub(crate) fn write_tensors(out: &mut Vec<u8>, sets: &[&ParamSet]) -> Result<()> {
    let total: usize = sets.iter().map(|s| s.len()).sum();
    bytes::put_u32(out, bytes::u32_of(total, "tensor count")?);
    for set in sets {
        for (name, t) in set.names().iter().zip(set.tensors()) {
            let len = u16::try_from(name.len()).map_err(|_| Error::Validation(format!("name {name} too long")))?;
            bytes::put_u16(out, len);
            out.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(t.rank()).map_err(|_| Error::Validation(format!("{name} has rank {}", t.rank())))?;
            out.push(rank);
            for &d in t.shape() {
                bytes::put_u32(out, bytes::u32_of(d, "extent")?);
            }
            bytes::put_f32s(out, t.data());
        }
    }
    Ok(())
}

/// Tensors in file order, each with the offset of its record.
pub(crate) fn read_tensors(r: &mut Reader<'_>) -> Result<Vec<(usize, String, Tensor)>> {
    let count = r.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let at = r.pos();
        let len = r.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::format(at, "tensor name is not UTF-8"))?
            .to_owned();
        let rank = r.u8("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("tensor extent")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format(at, format!("tensor {name} size overflows")))?;
        let data = r.f32s(numel, "tensor payload")?;
        out.push((at, name.clone(), Tensor::new(shape, data).expect("extent product matches")));
    }
    Ok(out)
}

/// Assigns every stored tensor to its parameter, requiring an exact match of
/// names and shapes.
pub(crate) fn fill(sets: &mut [&mut ParamSet], tensors: Vec<(usize, String, Tensor)>) -> Result<()> {
    let expected: usize = sets.iter().map(|s| s.len()).sum();
    let end = tensors.last().map_or(0, |t| t.0);
    if tensors.len() != expected {
        return Err(Error::format(
            end,
            format!("{} tensors stored, the embedded config defines {expected}", tensors.len()),
        ));
    }
    let mut seen = std::collections::HashSet::new();
    for (at, name, t) in tensors {
        if !seen.insert(name.clone()) {
            return Err(Error::format(at, format!("tensor {name} stored twice")));
        }
        if !t.all_finite() {
            return Err(Error::format(at, format!("tensor {name} has non-finite values")));
        }
        let set = sets
            .iter_mut()
            .find(|s| s.get(&name).is_some())
            .ok_or_else(|| Error::format(at, format!("unexpected tensor {name}")))?;
        set.assign(&name, t).map_err(|e| Error::format(at, e.to_string()))?;
    }
    Ok(())
}
