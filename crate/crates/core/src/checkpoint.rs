//! Versioned binary container of named `f64` tensors, and the mapping from a
//! model plus optimizer state to it.
//!
//! Layout (little-endian): `b"SLCK"`, `u32` version, `u32` tensor count, then
//! per tensor `u32` name length, UTF-8 name, `u32` rank, `u64` dims, `f64`
//! values.

use std::collections::BTreeMap;
use std::path::Path;

use crate::embed::{EmbedNet, EmbedNetParams};
use crate::error::{Error, Result};
use crate::ops::{FilterKernel, NormKernel};
use crate::optim::{Moments, Optimizer};
use crate::pipeline::{Model, ModelShape, ScaleConfig, TaskKind};

pub const MAGIC: &[u8; 4] = b"SLCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Format(format!("tensor shape {shape:?} does not hold {} values", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Io(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "truncated checkpoint")));
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

impl Checkpoint {
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::Version(format!("checkpoint lacks tensor `{name}`")))
    }

    fn scalar(&self, name: &str) -> Result<f64> {
        let t = self.get(name)?;
        t.data.first().copied().ok_or_else(|| Error::Format(format!("`{name}` is empty")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version(format!("checkpoint version {version}, expected {VERSION}")));
        }
        let count = r.u32()?;
        let mut ck = Checkpoint::default();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            ck.tensors.insert(name, Tensor { shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Everything needed to resume training.
#[derive(Clone, Debug)]
pub struct TrainingState {
    pub model: Model,
    pub optimizer_steps: u64,
    pub moments: BTreeMap<String, Moments>,
    /// Number of completed epochs.
    pub epoch: usize,
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn shape_vector(s: &ModelShape) -> Vec<f64> {
    vec![
        match s.kind {
            TaskKind::Color => 0.0,
            TaskKind::Flow => 1.0,
        },
        s.data_channels as f64,
        s.guidance_channels as f64,
        s.d_tilde as f64,
        s.neighborhood as f64,
        flag(s.use_embedding),
        flag(s.embed_spatial),
        flag(s.batch_norm),
        flag(s.offset_mode),
    ]
}

fn shape_from_vector(v: &[f64]) -> Result<ModelShape> {
    if v.len() != 9 {
        return Err(Error::Version("model shape record has the wrong length".into()));
    }
    Ok(ModelShape {
        kind: if v[0] == 0.0 { TaskKind::Color } else { TaskKind::Flow },
        data_channels: v[1] as usize,
        guidance_channels: v[2] as usize,
        d_tilde: v[3] as usize,
        neighborhood: v[4] as usize,
        use_embedding: v[5] != 0.0,
        embed_spatial: v[6] != 0.0,
        batch_norm: v[7] != 0.0,
        offset_mode: v[8] != 0.0,
    })
}

/// Serializes a model, optional optimizer state, and the epoch counter.
pub fn to_checkpoint(model: &Model, optimizer: Option<&Optimizer>, epoch: usize) -> Checkpoint {
    let mut ck = Checkpoint::default();
    ck.insert("model.shape", Tensor::vector(shape_vector(&model.shape)));
    ck.insert("scale", Tensor::vector(vec![model.scale.lambda_s, model.scale.lambda_i]));
    ck.insert("scale.multiplier", Tensor::scalar(model.lambda_mult));
    ck.insert("features.mean", Tensor::vector(model.mean.clone()));
    ck.insert(
        "lattice.kernel",
        Tensor { shape: vec![model.kernel.channels(), model.kernel.taps()], data: model.kernel.as_slice().to_vec() },
    );
    ck.insert("lattice.norm_log", Tensor::vector(model.norm.log_weights().to_vec()));
    if let Some(net) = &model.embed {
        let p = net.params();
        for (i, l) in p.layers.iter().enumerate() {
            ck.insert(
                format!("embed.conv{i}.weight"),
                Tensor { shape: vec![l.out_channels, l.in_channels, 3, 3], data: l.weight.clone() },
            );
            ck.insert(format!("embed.conv{i}.bias"), Tensor::vector(l.bias.clone()));
        }
        if let Some(bn) = &p.bn {
            ck.insert("embed.bn.gamma", Tensor::vector(bn.gamma.clone()));
            ck.insert("embed.bn.beta", Tensor::vector(bn.beta.clone()));
            ck.insert("embed.bn.running_mean", Tensor::vector(bn.running_mean.clone()));
            ck.insert("embed.bn.running_var", Tensor::vector(bn.running_var.clone()));
        }
    }
    ck.insert("train.epoch", Tensor::scalar(epoch as f64));
    if let Some(opt) = optimizer {
        ck.insert("optim.steps", Tensor::scalar(opt.steps() as f64));
        for (name, m) in opt.moments() {
            ck.insert(format!("optim.{name}.m"), Tensor::vector(m.m.clone()));
            ck.insert(format!("optim.{name}.v"), Tensor::vector(m.v.clone()));
        }
    }
    ck
}

fn fill(dst: &mut [f64], ck: &Checkpoint, name: &str) -> Result<()> {
    let t = ck.get(name)?;
    if t.data.len() != dst.len() {
        return Err(Error::Version(format!("`{name}` has {} values, model needs {}", t.data.len(), dst.len())));
    }
    dst.copy_from_slice(&t.data);
    Ok(())
}

/// Restores a model and training state saved by [`to_checkpoint`].
pub fn from_checkpoint(ck: &Checkpoint) -> Result<TrainingState> {
    let shape = shape_from_vector(&ck.get("model.shape")?.data)?;
    shape.validate().map_err(|e| Error::Version(e.to_string()))?;
    let sc = &ck.get("scale")?.data;
    if sc.len() != 2 {
        return Err(Error::Version("scale record has the wrong length".into()));
    }
    let scale = ScaleConfig::new(sc[0], sc[1]).map_err(|e| Error::Version(e.to_string()))?;
    let mean = ck.get("features.mean")?.data.clone();
    let mut model = Model::init(shape, scale, mean, 0).map_err(|e| Error::Version(e.to_string()))?;
    model.lambda_mult = ck.scalar("scale.multiplier")?;
    let mut kernel = vec![0.0; model.kernel.as_slice().len()];
    fill(&mut kernel, ck, "lattice.kernel")?;
    model.kernel = FilterKernel::from_vec(model.kernel.channels(), model.kernel.taps(), kernel)?;
    let mut norm = vec![0.0; model.norm.taps()];
    fill(&mut norm, ck, "lattice.norm_log")?;
    model.norm = NormKernel::from_log_weights(norm)?;
    if let Some(net) = &model.embed {
        let mut p: EmbedNetParams = net.params().clone();
        for (i, l) in p.layers.iter_mut().enumerate() {
            fill(&mut l.weight, ck, &format!("embed.conv{i}.weight"))?;
            fill(&mut l.bias, ck, &format!("embed.conv{i}.bias"))?;
        }
        if let Some(bn) = &mut p.bn {
            fill(&mut bn.gamma, ck, "embed.bn.gamma")?;
            fill(&mut bn.beta, ck, "embed.bn.beta")?;
            fill(&mut bn.running_mean, ck, "embed.bn.running_mean")?;
            fill(&mut bn.running_var, ck, "embed.bn.running_var")?;
        }
        model.embed = Some(EmbedNet::new(p));
    }
    let epoch = ck.scalar("train.epoch")? as usize;
    let optimizer_steps = ck.tensors.get("optim.steps").map_or(0.0, |t| t.data[0]) as u64;
    let mut moments = BTreeMap::new();
    for (name, t) in &ck.tensors {
        if let Some(group) = name.strip_prefix("optim.").and_then(|n| n.strip_suffix(".m")) {
            let v = ck.get(&format!("optim.{group}.v"))?;
            moments.insert(group.to_string(), Moments { m: t.data.clone(), v: v.data.clone() });
        }
    }
    Ok(TrainingState { model, optimizer_steps, moments, epoch })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip() {
        let mut ck = Checkpoint::default();
        ck.insert("a", Tensor::new(vec![2, 2], vec![1.0, -0.5, f64::MIN_POSITIVE, 3.25]).unwrap());
        ck.insert("b", Tensor::scalar(7.0));
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..4], b"SLCK");
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
    }

    #[test]
    fn rejects_bad_headers() {
        let mut bytes = Checkpoint::default().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..6]), Err(Error::Io(_))));
        bytes[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Version(_))));
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
    }
}
