//! Binary checkpoint:
//!
//! ```text
//! magic        8 bytes  "TRKCAST\0"
//! version      u32
//! config       u32 length + JSON (integers, booleans and names only)
//! shape table  u32 count, then per tensor: u16 name length, name, u8 rank, u64 dims
//! payload      every tensor's f64 values, in table order
//! ```
//!
//! All integers and floats are little-endian.

use serde::{Deserialize, Serialize};

use super::{ForecastModel, ModelConfig, INPUT_CHANNELS};
use crate::embed::PASSTHROUGH_CHANNELS;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TRKCAST\0";
pub const CHECKPOINT_VERSION: u32 = 1;

const SCALING: [&str; 4] = [
    "scaling.x_mean",
    "scaling.x_std",
    "scaling.passthrough_mean",
    "scaling.passthrough_std",
];

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    positions: usize,
}

fn tensors(model: &ForecastModel) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out: Vec<_> = model
        .store
        .iter()
        .map(|(_, p)| (p.name.clone(), p.shape.clone(), p.data.clone()))
        .collect();
    let s = &model.scaling;
    out.push((SCALING[0].into(), vec![INPUT_CHANNELS], s.x_mean.to_vec()));
    out.push((SCALING[1].into(), vec![INPUT_CHANNELS], s.x_std.to_vec()));
    out.push((SCALING[2].into(), vec![PASSTHROUGH_CHANNELS], s.passthrough.mean.to_vec()));
    out.push((SCALING[3].into(), vec![PASSTHROUGH_CHANNELS], s.passthrough.std.to_vec()));
    out
}

pub fn save_checkpoint(model: &ForecastModel) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(CHECKPOINT_MAGIC);
    b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let header = serde_json::to_vec(&Header {
        model: model.config.clone(),
        positions: model.positions,
    })
    .expect("header serializes");
    b.extend_from_slice(&(header.len() as u32).to_le_bytes());
    b.extend_from_slice(&header);
    let ts = tensors(model);
    b.extend_from_slice(&(ts.len() as u32).to_le_bytes());
    for (name, shape, _) in &ts {
        b.extend_from_slice(&(name.len() as u16).to_le_bytes());
        b.extend_from_slice(name.as_bytes());
        b.push(shape.len() as u8);
        for d in shape {
            b.extend_from_slice(&(*d as u64).to_le_bytes());
        }
    }
    for (_, _, data) in &ts {
        for v in data {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    b
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated stream while reading {what} at byte {}", self.at))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<ForecastModel> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic bytes)".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len = r.u32("config length")? as usize;
    let header: Header = serde_json::from_slice(r.take(len, "config")?)
        .map_err(|e| Error::Checkpoint(format!("config block: {e}")))?;
    let mut model = ForecastModel::new(header.model, header.positions, 0)
        .map_err(|e| Error::Checkpoint(format!("config block: {e}")))?;

    let expected = tensors(&model);
    let count = r.u32("tensor count")? as usize;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "shape table lists {count} tensors, configuration needs {}",
            expected.len()
        )));
    }
    for (name, shape, _) in &expected {
        let n = r.u16("name length")? as usize;
        let got = std::str::from_utf8(r.take(n, "tensor name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64("dimension")? as usize);
        }
        if got != name || &dims != shape {
            return Err(Error::Checkpoint(format!(
                "shape table entry `{got}` {dims:?} does not match expected `{name}` {shape:?}"
            )));
        }
    }
    let mut read = |n: usize, what: &str| -> Result<Vec<f64>> {
        let raw = r.take(n * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    };
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let n = model.store.get(id).len();
        let name = model.store.get(id).name.clone();
        model.store.get_mut(id).data = read(n, &name)?;
    }
    let s = &mut model.scaling;
    s.x_mean.copy_from_slice(&read(INPUT_CHANNELS, SCALING[0])?);
    s.x_std.copy_from_slice(&read(INPUT_CHANNELS, SCALING[1])?);
    s.passthrough.mean.copy_from_slice(&read(PASSTHROUGH_CHANNELS, SCALING[2])?);
    s.passthrough.std.copy_from_slice(&read(PASSTHROUGH_CHANNELS, SCALING[3])?);
    if r.at != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes after payload", bytes.len() - r.at)));
    }
    Ok(model)
}
