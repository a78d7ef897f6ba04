//! Single-file checkpoint: magic, format version, JSON header, then raw
//! little-endian `f32` blobs for parameters and Adam moments.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use avsep_autograd::{AdamState, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioConfig;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::generative::{ScheduleKind, Variant};
use crate::model::ModelConfig;
use crate::nn::ParamStore;

pub const MAGIC: &[u8; 8] = b"AVSEPCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleInfo {
    pub steps: usize,
    pub kind: ScheduleKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub variant: Variant,
    pub model: ModelConfig,
    pub audio: AudioConfig,
    /// Present for the DDPM variant only.
    pub schedule: Option<ScheduleInfo>,
    pub train: TrainConfig,
    pub step: u64,
    pub rng: ChaCha8Rng,
    pub adam_step: u64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamStore<f32>,
    pub adam: AdamState<f32>,
}

fn write_blob(out: &mut Vec<u8>, t: &Tensor<f32>) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_blob(bytes: &[u8], pos: &mut usize, shape: &[usize]) -> Result<Tensor<f32>> {
    let n: usize = shape.iter().product();
    let end = *pos + 4 * n;
    let chunk = bytes
        .get(*pos..end)
        .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
    *pos = end;
    let data = chunk
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Tensor::from_vec(shape, data)?)
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut header = self.header.clone();
        header.format_version = FORMAT_VERSION;
        header.adam_step = self.adam.step;
        header.tensors = self
            .params
            .names()
            .iter()
            .zip(self.params.tensors())
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect();
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(json.len() + 12 * self.params.numel() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.params.tensors() {
            write_blob(&mut out, t);
        }
        for t in self.adam.m.iter().chain(&self.adam.v) {
            write_blob(&mut out, t);
        }
        let tmp = path.with_extension("tmp");
        fs::File::create(&tmp)?.write_all(&out)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::Format(format!("{} is not a checkpoint", path.display())));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let hend = 20 + hlen;
        let header: CheckpointHeader = serde_json::from_slice(
            bytes
                .get(20..hend)
                .ok_or_else(|| Error::Format("checkpoint header truncated".into()))?,
        )?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Format("checkpoint header version mismatch".into()));
        }
        let mut pos = hend;
        let mut params = ParamStore::new();
        for e in &header.tensors {
            let t = read_blob(&bytes, &mut pos, &e.shape)?;
            params.add(e.name.clone(), t);
        }
        let mut moments = Vec::with_capacity(2 * header.tensors.len());
        for _ in 0..2 {
            for e in &header.tensors {
                moments.push(read_blob(&bytes, &mut pos, &e.shape)?);
            }
        }
        if pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint data".into()));
        }
        let v = moments.split_off(header.tensors.len());
        let adam = AdamState {
            step: header.adam_step,
            m: moments,
            v,
        };
        Ok(Self { header, params, adam })
    }
}
