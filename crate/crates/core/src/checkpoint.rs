//! Model files.
//!
//! A checkpoint is a text header followed by binary tensor records:
//!
//! ```text
//! TABIMPUTE-CKPT v1
//! key = value            (model config, precision, schedule length, scaler,
//!                         feature names, optional free-text comment)
//! end-header
//! u64 record count, then per record:
//!   u32 name length, name bytes, u8 trainable, u32 rank, rank x u64 dims,
//!   elements in little-endian order
//! ```
//!
//! Floats in the header are written with Rust's shortest round-trip
//! formatting, so loading and saving again reproduces the file byte for byte.

use std::path::Path;

use crate::data::MinMaxScaler;
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const MAGIC: &str = "TABIMPUTE-CKPT v1";
const END: &str = "end-header";

/// A trained model with what is needed to apply it to raw data.
pub struct Checkpoint<F: Real = f64> {
    pub model: Denoiser<F>,
    /// Length of the schedule the model was trained with.
    pub t_training: usize,
    pub scaler: Option<MinMaxScaler>,
    pub feature_names: Vec<String>,
    /// Single line stored in the header, e.g. how the model was produced.
    pub comment: Option<String>,
}

fn floats(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn parse_floats(key: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| Error::Checkpoint(format!("bad number {x:?} in {key}"))))
        .collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint("file is truncated".into()));
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
}

impl<F: Real> Checkpoint<F> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut head = vec![MAGIC.to_string()];
        let mut pairs = self.model.config().to_pairs();
        pairs.push(("precision".into(), F::NAME.into()));
        pairs.push(("t_training".into(), self.t_training.to_string()));
        if let Some(s) = &self.scaler {
            pairs.push(("scaler.min".into(), floats(&s.min)));
            pairs.push(("scaler.max".into(), floats(&s.max)));
            pairs.push(("scaler.range".into(), floats(&[s.range.0, s.range.1])));
        }
        if let Some(c) = &self.comment {
            if c.contains(['\n', '\r']) {
                return Err(Error::Checkpoint("comment contains a line break".into()));
            }
            pairs.push(("comment".into(), c.clone()));
        }
        for name in &self.feature_names {
            if name.contains(['\n', '\r']) {
                return Err(Error::Checkpoint(format!("feature name {name:?} contains a line break")));
            }
            pairs.push(("feature".into(), name.clone()));
        }
        head.extend(pairs.into_iter().map(|(k, v)| format!("{k} = {v}")));
        head.push(END.into());
        let mut out = (head.join("\n") + "\n").into_bytes();
        let store = self.model.store();
        out.extend_from_slice(&(store.len() as u64).to_le_bytes());
        for id in store.ids() {
            let name = store.name(id).as_bytes();
            let value = store.value(id);
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name);
            out.push(store.is_trainable(id) as u8);
            out.extend_from_slice(&(value.rank() as u32).to_le_bytes());
            for &d in value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in value.data() {
                x.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut lines = Vec::new();
        let mut pos = 0;
        loop {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::Checkpoint("header is not terminated".into()))?;
            let line = std::str::from_utf8(&bytes[pos..pos + end])
                .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
            pos += end + 1;
            if lines.is_empty() && line != MAGIC {
                return Err(Error::Checkpoint(format!("not a checkpoint (first line {line:?})")));
            }
            if line == END {
                break;
            }
            lines.push(line.to_string());
        }
        let pairs: Vec<(String, String)> = lines[1..]
            .iter()
            .map(|l| {
                l.split_once(" = ")
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| Error::Checkpoint(format!("bad header line {l:?}")))
            })
            .collect::<Result<_>>()?;
        let get = |key: &str| pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone());
        let precision = get("precision").ok_or_else(|| Error::Checkpoint("missing key precision".into()))?;
        if precision != F::NAME {
            return Err(Error::Checkpoint(format!(
                "file holds {precision} parameters but {} was requested",
                F::NAME
            )));
        }
        let config = DenoiserConfig::from_pairs(get)?;
        let t_training = get("t_training")
            .and_then(|v| v.parse().ok())
            .filter(|&t: &usize| t >= 1)
            .ok_or_else(|| Error::Checkpoint("missing or bad t_training".into()))?;
        let scaler = match (get("scaler.min"), get("scaler.max"), get("scaler.range")) {
            (Some(lo), Some(hi), Some(r)) => {
                let (min, max, r) = (
                    parse_floats("scaler.min", &lo)?,
                    parse_floats("scaler.max", &hi)?,
                    parse_floats("scaler.range", &r)?,
                );
                if min.len() != config.k || max.len() != config.k || r.len() != 2 {
                    return Err(Error::Checkpoint("scaler does not match the feature count".into()));
                }
                Some(MinMaxScaler { min, max, range: (r[0], r[1]) })
            }
            (None, None, None) => None,
            _ => return Err(Error::Checkpoint("incomplete scaler".into())),
        };
        let feature_names: Vec<String> = pairs.iter().filter(|(k, _)| k == "feature").map(|(_, v)| v.clone()).collect();
        if !feature_names.is_empty() && feature_names.len() != config.k {
            return Err(Error::Checkpoint("feature names do not match the feature count".into()));
        }
        let mut model = Denoiser::<F>::new(config, 0)?;
        let mut r = Reader { bytes, pos };
        let count = r.u64()? as usize;
        if count != model.store().len() {
            return Err(Error::Checkpoint(format!(
                "{count} tensors stored, the configured model has {}",
                model.store().len()
            )));
        }
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Checkpoint("bad tensor name".into()))?;
            let id = model
                .store()
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name:?}")))?;
            let trainable = r.take(1)?[0] != 0;
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
            if trainable != model.store().is_trainable(id) || shape != model.store().value(id).shape() {
                return Err(Error::Checkpoint(format!("tensor {name:?} has the wrong kind or shape {shape:?}")));
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n * F::BYTES)?;
            let data = raw.chunks_exact(F::BYTES).map(F::read_le).collect();
            model.store_mut().set_value(id, Tensor::new(shape, data)?)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after the last tensor".into()));
        }
        Ok(Self {
            model,
            t_training,
            scaler,
            feature_names,
            comment: get("comment"),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
