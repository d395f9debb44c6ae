//! Checkpoint serialization.
//!
//! A checkpoint stores the canonical config text, the number of completed
//! epochs, and for every parameter its value and Adam moments as f64 planes
//! (lossless for both run precisions). Restoring matches parameters by name
//! and demands an exact one-to-one correspondence, so a checkpoint from a
//! different architecture is rejected instead of silently half-loaded.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::adam::Adam;
use crate::harness::config::TrainConfig;
use crate::scalar::Scalar;
use crate::tape::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 5] = b"VODC1";
const VERSION: u32 = 1;

/// One parameter's persisted state.
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// A fully parsed checkpoint file.
pub struct Checkpoint {
    pub config_text: String,
    pub config: TrainConfig,
    pub completed_epochs: usize,
    pub adam_step: u64,
    pub entries: Vec<CheckpointEntry>,
}

fn file_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::FileFormat {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    config: &TrainConfig,
    completed_epochs: usize,
    store: &ParamStore<T>,
    adam: &Adam<T>,
) -> Result<()> {
    let config_text = config.to_text();
    let (m, v) = adam.moments();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(config_text.as_bytes());
    buf.extend_from_slice(&(completed_epochs as u32).to_le_bytes());
    buf.extend_from_slice(&adam.step_count().to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (i, (name, param)) in store.iter().enumerate() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(param.value.shape().len() as u32).to_le_bytes());
        for &d in param.value.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for plane in [param.value.data(), m[i].data(), v[i].data()] {
            for val in plane {
                buf.extend_from_slice(&val.as_f64().to_le_bytes());
            }
        }
    }
    fs::write(path, buf).map_err(Error::io_at(path))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(file_err(self.path, "checkpoint is truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, len: usize, what: &str) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| file_err(self.path, format!("{what} is not valid utf-8")))
    }

    fn f64_plane(&mut self, numel: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(numel * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(Error::io_at(path))?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if c.take(5)? != MAGIC {
        return Err(file_err(path, "not a checkpoint file (bad magic)"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(file_err(
            path,
            format!("unsupported checkpoint version {version}, expected {VERSION}"),
        ));
    }
    let cfg_len = c.u32()? as usize;
    let config_text = c.string(cfg_len, "config block")?;
    let mut config = TrainConfig::default();
    config
        .apply_text(&config_text)
        .map_err(|e| file_err(path, format!("bad config block: {e}")))?;
    let completed_epochs = c.u32()? as usize;
    let adam_step = c.u64()?;
    let count = c.u32()? as usize;

    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = c.string(name_len, "parameter name")?;
        let rank = c.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(file_err(path, format!("{name}: implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        if numel == 0 || numel > 1 << 28 {
            return Err(file_err(
                path,
                format!("{name}: implausible element count {numel}"),
            ));
        }
        let value = c.f64_plane(numel)?;
        let m = c.f64_plane(numel)?;
        let v = c.f64_plane(numel)?;
        entries.push(CheckpointEntry {
            name,
            shape,
            value,
            m,
            v,
        });
    }
    if c.pos != bytes.len() {
        return Err(file_err(path, "trailing bytes after checkpoint payload"));
    }
    Ok(Checkpoint {
        config_text,
        config,
        completed_epochs,
        adam_step,
        entries,
    })
}

impl Checkpoint {
    /// Loads values and optimizer state into an already-registered model.
    /// Every stored parameter must exist with the same shape and vice versa.
    pub fn restore<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        adam: &mut Adam<T>,
    ) -> Result<()> {
        if self.entries.len() != store.len() {
            return Err(Error::invalid(format!(
                "checkpoint holds {} parameters, model has {}",
                self.entries.len(),
                store.len()
            )));
        }
        let mut m = Vec::with_capacity(self.entries.len());
        let mut v = Vec::with_capacity(self.entries.len());
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.name(id).to_string();
            let entry = self
                .entries
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| {
                    Error::invalid(format!("checkpoint is missing parameter {name}"))
                })?;
            if entry.shape != store.get(id).value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint restore",
                    detail: format!(
                        "{name}: stored {:?}, model {:?}",
                        entry.shape,
                        store.get(id).value.shape()
                    ),
                });
            }
            let to_tensor = |data: &[f64]| -> Result<Tensor<T>> {
                Tensor::new(
                    entry.shape.clone(),
                    data.iter().map(|&x| T::from_f64(x)).collect(),
                )
            };
            store.set_value(id, to_tensor(&entry.value)?)?;
            m.push(to_tensor(&entry.m)?);
            v.push(to_tensor(&entry.v)?);
        }
        adam.restore(self.adam_step, m, v);
        Ok(())
    }
}
