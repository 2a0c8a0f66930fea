//! Binary checkpoint formats.
//!
//! Model file: `KNCK`, version, epoch, init seed, input shape, the layer
//! list, then the flat parameter vector as little-endian `f32`.
//! Optimizer file: `KNOP`, version, step count, hyperparameters as `f64`,
//! then both moment vectors as little-endian `f32`.

use std::fs;
use std::path::Path;

use super::{Activation, AdamConfig, AdamState, Architecture, LayerSpec, Model, NnError, Real, Shape};

const MODEL_MAGIC: &[u8; 4] = b"KNCK";
const OPT_MAGIC: &[u8; 4] = b"KNOP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    /// Number of completed training epochs.
    pub epoch: u32,
    pub init_seed: u64,
}

fn ck_err(path: &Path, message: impl Into<String>) -> NnError {
    NnError::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), NnError> {
    fs::write(path, bytes).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>, NnError> {
    fs::read(path).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ck_err(self.path, format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], NnError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, NnError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn f32s<T: Real>(&mut self, n: usize) -> Result<Vec<T>, NnError> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| ck_err(self.path, "length overflow"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect())
    }

    fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<(), NnError> {
        if self.take(4)? != magic {
            return Err(ck_err(self.path, format!("not a {} file", String::from_utf8_lossy(magic))));
        }
        let v = self.u32()?;
        if v != VERSION {
            return Err(ck_err(self.path, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<(), NnError> {
        if self.pos != self.bytes.len() {
            return Err(ck_err(self.path, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn push_f32s<T: Real>(buf: &mut Vec<u8>, values: &[T]) {
    for v in values {
        buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
    }
}

fn encode_layer(buf: &mut Vec<u8>, spec: &LayerSpec) {
    let (kind, act, units, rate) = match *spec {
        LayerSpec::Conv2D { filters, activation } => (0u8, activation.code(), filters, 0.0),
        LayerSpec::MaxPool2D => (1, 0, 0, 0.0),
        LayerSpec::Dropout { rate } => (2, 0, 0, rate),
        LayerSpec::Flatten => (3, 0, 0, 0.0),
        LayerSpec::Dense { units, activation } => (4, activation.code(), units, 0.0),
    };
    buf.push(kind);
    buf.push(act);
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&(units as u32).to_le_bytes());
    buf.extend_from_slice(&rate.to_le_bytes());
}

fn decode_layer(r: &mut Reader) -> Result<LayerSpec, NnError> {
    let kind = r.u8()?;
    let act_code = r.u8()?;
    let _pad = r.u16()?;
    let units = r.u32()? as usize;
    let rate = r.f64()?;
    let act = || Activation::from_code(act_code).ok_or_else(|| ck_err(r.path, format!("unknown activation {act_code}")));
    Ok(match kind {
        0 => LayerSpec::Conv2D {
            filters: units,
            activation: act()?,
        },
        1 => LayerSpec::MaxPool2D,
        2 => LayerSpec::Dropout { rate },
        3 => LayerSpec::Flatten,
        4 => LayerSpec::Dense {
            units,
            activation: act()?,
        },
        k => return Err(ck_err(r.path, format!("unknown layer kind {k}"))),
    })
}

/// Write the model's architecture and parameters (as `f32`).
pub fn save_checkpoint<T: Real>(path: &Path, model: &Model<T>, epoch: u32) -> Result<(), NnError> {
    let arch = model.architecture();
    let mut buf = Vec::with_capacity(64 + 12 * arch.layers.len() + 4 * model.param_count());
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&epoch.to_le_bytes());
    buf.extend_from_slice(&model.init_seed().to_le_bytes());
    for d in [arch.input.h, arch.input.w, arch.input.c] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(arch.layers.len() as u32).to_le_bytes());
    for spec in &arch.layers {
        encode_layer(&mut buf, spec);
    }
    buf.extend_from_slice(&(model.param_count() as u64).to_le_bytes());
    push_f32s(&mut buf, model.params());
    write_file(path, &buf)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(Model<T>, CheckpointMeta), NnError> {
    let bytes = read_file(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    r.expect_magic(MODEL_MAGIC)?;
    let epoch = r.u32()?;
    let init_seed = r.u64()?;
    let input = Shape::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let n_layers = r.u32()? as usize;
    if n_layers > 4096 {
        return Err(ck_err(path, format!("implausible layer count {n_layers}")));
    }
    let layers = (0..n_layers).map(|_| decode_layer(&mut r)).collect::<Result<Vec<_>, _>>()?;
    let arch = Architecture { input, layers };
    let expected = arch.param_count().map_err(|e| ck_err(path, e.to_string()))?;
    let count = r.u64()? as usize;
    if count != expected {
        return Err(ck_err(path, format!("{count} parameters stored, architecture needs {expected}")));
    }
    let params = r.f32s(count)?;
    r.finish()?;
    let model = Model::from_params(arch, params, init_seed).map_err(|e| ck_err(path, e.to_string()))?;
    Ok((model, CheckpointMeta { epoch, init_seed }))
}

pub fn save_optimizer<T: Real>(path: &Path, state: &AdamState<T>) -> Result<(), NnError> {
    let mut buf = Vec::with_capacity(64 + 8 * state.m.len());
    buf.extend_from_slice(OPT_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&state.t.to_le_bytes());
    let c = state.config;
    for v in [c.lr, c.beta1, c.beta2, c.eps] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(state.m.len() as u64).to_le_bytes());
    push_f32s(&mut buf, &state.m);
    push_f32s(&mut buf, &state.v);
    write_file(path, &buf)
}

/// Load optimizer state; `expected_len` is the model's parameter count.
pub fn load_optimizer<T: Real>(path: &Path, expected_len: usize) -> Result<AdamState<T>, NnError> {
    let bytes = read_file(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    r.expect_magic(OPT_MAGIC)?;
    let t = r.u64()?;
    let config = AdamConfig {
        lr: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        eps: r.f64()?,
    };
    let len = r.u64()? as usize;
    if len != expected_len {
        return Err(ck_err(path, format!("optimizer holds {len} moments, model has {expected_len} parameters")));
    }
    let m = r.f32s(len)?;
    let v = r.f32s(len)?;
    r.finish()?;
    Ok(AdamState { config, t, m, v })
}
