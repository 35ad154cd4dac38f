//! File formats shared by the CLI and the Python bindings.
//!
//! Tensor file (`.sdt`), all little-endian:
//!
//! ```text
//! b"SDTENSOR"  u32 version (=1)  u32 ndim  u64 dim[ndim]  f64 data[prod(dim)]
//! ```
//!
//! Waveforms are raw little-endian `f32` samples next to a JSON sidecar
//! `{"sample_rate": ..., "length": ...}` with the same stem.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

const TENSOR_MAGIC: &[u8; 8] = b"SDTENSOR";
const TENSOR_VERSION: u32 = 1;

pub fn encode_tensor(t: &Tensor, out: &mut impl Write) -> Result<()> {
    out.write_all(TENSOR_MAGIC)?;
    out.write_all(&TENSOR_VERSION.to_le_bytes())?;
    out.write_all(&(t.ndim() as u32).to_le_bytes())?;
    for &d in t.shape() {
        out.write_all(&(d as u64).to_le_bytes())?;
    }
    write_f64s(t.data(), out)
}

pub fn decode_tensor(input: &mut impl Read) -> Result<Tensor> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format("not a tensor file".into()));
    }
    let version = read_u32(input)?;
    if version != TENSOR_VERSION {
        return Err(Error::Format(format!("unsupported tensor version {version}")));
    }
    let ndim = read_u32(input)? as usize;
    let shape = (0..ndim).map(|_| read_u64(input).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let n = shape.iter().product();
    let data = read_f64s(input, n)?;
    Tensor::new(shape, data)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + 8 * t.ndim() + 8 * t.numel());
    encode_tensor(t, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    decode_tensor(&mut bytes.as_slice())
}

pub(crate) fn write_f64s(data: &[f64], out: &mut impl Write) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 8);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_f64s(input: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    input.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

pub(crate) fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(input: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveSidecar {
    pub sample_rate: u32,
    pub length: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_wave(path: impl AsRef<Path>, samples: &[f32], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(samples.len() * 4);
    for s in samples {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    fs::write(path, buf)?;
    let meta = WaveSidecar { sample_rate, length: samples.len() };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

/// Reads a raw f32 waveform and its sidecar; returns (samples, sample rate).
pub fn read_wave(path: impl AsRef<Path>) -> Result<(Vec<f32>, u32)> {
    let path = path.as_ref();
    let meta: WaveSidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    let bytes = fs::read(path)?;
    if bytes.len() != meta.length * 4 {
        return Err(Error::Format(format!(
            "{}: sidecar says {} samples, file holds {} bytes",
            path.display(),
            meta.length,
            bytes.len()
        )));
    }
    let samples = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Ok((samples, meta.sample_rate))
}
