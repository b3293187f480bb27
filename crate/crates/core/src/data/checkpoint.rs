//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"FMUD"  u32 version
//! u32 tensor count, then per tensor:
//!     u32 name length, name (utf-8), u32 ndim, u64 dims[ndim], f64 data
//! u32 entry count, then per entry:
//!     u32 key length, key, u32 value length, value
//! u32 crc32 of every preceding byte
//! ```
//!
//! Normalisation statistics travel as the tensors `norm.min`/`norm.max`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Fmuad, ModelConfig};
use crate::params::ParamSet;
use crate::tensor::Tensor;

use super::NormStats;

const MAGIC: &[u8; 4] = b"FMUD";
const VERSION: u32 = 1;
const NORM_MIN: &str = "norm.min";
const NORM_MAX: &str = "norm.max";

/// A trained model together with the statistics needed to score new data.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Fmuad,
    pub stats: NormStats,
    pub seed: u64,
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn hyperparameters(config: &ModelConfig, seed: u64) -> Vec<(String, String)> {
    [
        ("m", config.features.to_string()),
        ("tau", config.tau.to_string()),
        ("k", config.window.to_string()),
        ("stride", config.stride.to_string()),
        ("hidden_ch", config.hidden_channels.to_string()),
        ("lstm_kernel", config.lstm_kernel.to_string()),
        ("channels", join(&config.dilated_channels)),
        ("dilations", join(&config.dilations)),
        ("leaky_slope", config.leaky_slope.to_string()),
        ("detectors", config.detectors.to_string()),
        ("seed", seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_str(out, name);
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let params = ckpt.model.params();
    put_u32(&mut out, (params.len() + 2) as u32);
    for (name, t) in params.iter() {
        put_tensor(&mut out, name, t);
    }
    put_tensor(&mut out, NORM_MIN, &Tensor::vector(ckpt.stats.min.clone())?);
    put_tensor(&mut out, NORM_MAX, &Tensor::vector(ckpt.stats.max.clone())?);
    let hyper = hyperparameters(ckpt.model.config(), ckpt.seed);
    put_u32(&mut out, hyper.len() as u32);
    for (k, v) in &hyper {
        put_str(&mut out, k);
        put_str(&mut out, v);
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated checkpoint while reading {what} at byte {}", self.pos))
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format(format!("{what} is not valid utf-8")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name = self.string("tensor name")?;
        let ndim = self.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(self.u64("tensor shape")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor `{name}` is too large")))?;
        let raw = self.take(count.saturating_mul(8), "tensor data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
        Ok((name, t))
    }
}

fn field<T: std::str::FromStr>(table: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = table
        .get(key)
        .ok_or_else(|| Error::Format(format!("checkpoint lacks hyperparameter `{key}`")))?;
    raw.parse()
        .map_err(|_| Error::Format(format!("hyperparameter `{key}` has invalid value `{raw}`")))
}

fn list(table: &BTreeMap<String, String>, key: &str) -> Result<Vec<usize>> {
    let raw: String = field(table, key)?;
    raw.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Format(format!("hyperparameter `{key}` has invalid value `{raw}`")))
        })
        .collect()
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Format("checkpoint checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut params = ParamSet::new();
    let (mut min, mut max) = (None, None);
    for _ in 0..count {
        let (name, t) = r.tensor()?;
        match name.as_str() {
            NORM_MIN => min = Some(t.data().to_vec()),
            NORM_MAX => max = Some(t.data().to_vec()),
            _ if params.find(&name).is_some() => {
                return Err(Error::Format(format!("duplicate tensor `{name}`")))
            }
            _ => {
                params.add(name, t);
            }
        }
    }
    let entries = r.u32("hyperparameter count")?;
    let mut table = BTreeMap::new();
    for _ in 0..entries {
        let k = r.string("hyperparameter key")?;
        let v = r.string("hyperparameter value")?;
        table.insert(k, v);
    }
    if r.pos != body.len() {
        return Err(Error::Format(format!("{} trailing bytes", body.len() - r.pos)));
    }

    let mut config = ModelConfig::new(field(&table, "m")?);
    config.tau = field(&table, "tau")?;
    config.window = field(&table, "k")?;
    config.stride = field(&table, "stride")?;
    config.hidden_channels = field(&table, "hidden_ch")?;
    config.lstm_kernel = field(&table, "lstm_kernel")?;
    config.dilated_channels = list(&table, "channels")?;
    config.dilations = list(&table, "dilations")?;
    config.leaky_slope = field(&table, "leaky_slope")?;
    config.detectors = field::<String>(&table, "detectors")?
        .parse()
        .map_err(|e| Error::Format(format!("detectors: {e}")))?;
    let seed = field(&table, "seed")?;

    let (min, max) = match (min, max) {
        (Some(a), Some(b)) if a.len() == config.features && b.len() == config.features => (a, b),
        _ => return Err(Error::Format("normalisation statistics missing or mis-sized".into())),
    };
    let model = Fmuad::from_params(config, params).map_err(|e| Error::Format(e.to_string()))?;
    Ok(Checkpoint {
        model,
        stats: NormStats { min, max },
        seed,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(ckpt)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
