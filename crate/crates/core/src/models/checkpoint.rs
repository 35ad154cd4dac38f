//! Self-describing checkpoint container.
//!
//! ```text
//! b"SDCHKPT1"  u64 header_len  header (JSON)  f64 LE blobs
//! ```
//!
//! The header holds the graph spec, the epoch counter, the config hash,
//! free-form metadata and an index of every stored tensor (name, shape,
//! element offset into the blob region). Tensors are model parameters,
//! batch-norm running statistics and the optimizer moments.

use super::{GraphSpec, ModelGraph};
use crate::error::{Error, Result};
use crate::io::{read_f64s, read_u64, write_f64s};
use crate::tensor::Tensor;
use crate::train::AdamState;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Read;
use std::path::Path;

const MAGIC: &[u8; 8] = b"SDCHKPT1";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    spec: GraphSpec,
    epoch: usize,
    config_hash: String,
    optimizer_step: Option<u64>,
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelGraph,
    pub optimizer: Option<AdamState>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub config_hash: String,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(model: ModelGraph) -> Self {
        Checkpoint { model, optimizer: None, epoch: 0, config_hash: String::new(), meta: serde_json::Value::Null }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut named: Vec<(String, &[usize], &[f64])> = Vec::new();
        for p in self.model.params.iter() {
            named.push((format!("param/{}", p.name), p.value.shape(), p.value.data()));
        }
        let stat_shapes: Vec<[usize; 1]> = self.model.stats.iter().map(|s| [s.channels()]).collect();
        for (i, s) in self.model.stats.iter().enumerate() {
            named.push((format!("bn/{i}/mean"), &stat_shapes[i], &s.mean));
            named.push((format!("bn/{i}/var"), &stat_shapes[i], &s.var));
        }
        if let Some(opt) = &self.optimizer {
            for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
                named.push((format!("adam/m/{i}"), m.shape(), m.data()));
                named.push((format!("adam/v/{i}"), v.shape(), v.data()));
            }
        }
        let mut offset = 0;
        let tensors = named
            .iter()
            .map(|(name, shape, data)| {
                let e = Entry { name: name.clone(), shape: shape.to_vec(), offset };
                offset += data.len();
                e
            })
            .collect();
        let header = Header {
            spec: self.model.spec.clone(),
            epoch: self.epoch,
            config_hash: self.config_hash.clone(),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            meta: self.meta.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, data) in &named {
            write_f64s(data, &mut out)?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut input = bytes;
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let len = read_u64(&mut input)? as usize;
        if len > input.len() {
            return Err(Error::Format("truncated checkpoint header".into()));
        }
        let header: Header = serde_json::from_slice(&input[..len])?;
        input = &input[len..];
        let total: usize = header.tensors.iter().map(|e| e.shape.iter().product::<usize>()).sum();
        if input.len() != total * 8 {
            return Err(Error::Format(format!("checkpoint blob holds {} bytes, index needs {}", input.len(), total * 8)));
        }
        let blob = read_f64s(&mut input, total)?;
        let mut lookup = std::collections::HashMap::new();
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let t = Tensor::new(e.shape.clone(), blob[e.offset..e.offset + n].to_vec())?;
            lookup.insert(e.name.clone(), t);
        }
        let mut take = |name: &str| lookup.remove(name).ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")));

        let mut model = ModelGraph::build(header.spec, 0)?;
        for p in model.params.iter_mut() {
            let t = take(&format!("param/{}", p.name))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Format(format!("{}: stored {:?}, model {:?}", p.name, t.shape(), p.value.shape())));
            }
            p.value = t;
        }
        for (i, s) in model.stats.iter_mut().enumerate() {
            s.mean = take(&format!("bn/{i}/mean"))?.into_data();
            s.var = take(&format!("bn/{i}/var"))?.into_data();
        }
        let optimizer = match header.optimizer_step {
            Some(step) => {
                let n = model.params.len();
                let m = (0..n).map(|i| take(&format!("adam/m/{i}"))).collect::<Result<Vec<_>>>()?;
                let v = (0..n).map(|i| take(&format!("adam/v/{i}"))).collect::<Result<Vec<_>>>()?;
                Some(AdamState { step, m, v })
            }
            None => None,
        };
        Ok(Checkpoint { model, optimizer, epoch: header.epoch, config_hash: header.config_hash, meta: header.meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{MlpConfig, NetworkCommon};

    #[test]
    fn roundtrip_is_bit_exact() {
        let g = crate::models::build_mlp(&MlpConfig::default(), &NetworkCommon::default(), 3).unwrap();
        let mut ck = Checkpoint::new(g);
        ck.epoch = 4;
        ck.config_hash = "abc".into();
        ck.optimizer = Some(AdamState::new(&ck.model.params));
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.epoch, 4);
        for (a, b) in back.model.params.iter().zip(ck.model.params.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let ck = Checkpoint::new(crate::models::build_mlp(&MlpConfig::default(), &NetworkCommon::default(), 3).unwrap());
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    }
}
