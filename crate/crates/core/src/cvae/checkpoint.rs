//! Checkpoint files: a magic line, a one-line JSON header describing the
//! configuration, history and every block, then the blocks themselves as
//! little-endian `f32` in header order (parameters, running statistics,
//! Adam first moments, Adam second moments).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cvae::{Cvae, CvaeConfig, TrainConfig, TrainHistory};
use crate::error::{Error, Result};
use crate::nn::Param;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "EEGSYNTH-CVAE";

/// One named array.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl Block {
    pub fn from_param(p: &Param<f32>) -> Self {
        Block {
            name: p.name.clone(),
            shape: p.shape.clone(),
            values: p.value.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvaeCheckpoint {
    pub version: u32,
    pub model: CvaeConfig,
    pub train: TrainConfig,
    pub history: TrainHistory,
    pub params: Vec<Block>,
    pub buffers: Vec<Block>,
    pub adam_t: u64,
    /// Empty when no optimiser step was taken.
    pub adam_m: Vec<Vec<f32>>,
    pub adam_v: Vec<Vec<f32>>,
}

#[derive(Serialize, Deserialize)]
struct BlockHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    model: CvaeConfig,
    train: TrainConfig,
    history: TrainHistory,
    params: Vec<BlockHeader>,
    buffers: Vec<BlockHeader>,
    adam_t: u64,
    adam_moments: bool,
}

fn copy_blocks(dst: Vec<&mut Param<f32>>, src: &[Block], what: &str) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::Integrity(format!(
            "checkpoint has {} {what} blocks, model has {}",
            src.len(),
            dst.len()
        )));
    }
    for (p, b) in dst.into_iter().zip(src) {
        if p.name != b.name || p.shape != b.shape || b.values.len() != p.len() {
            return Err(Error::Integrity(format!(
                "checkpoint block {} {:?} does not match model block {} {:?}",
                b.name, b.shape, p.name, p.shape
            )));
        }
        p.value.copy_from_slice(&b.values);
    }
    Ok(())
}

impl CvaeCheckpoint {
    /// Rebuilds the 32-bit model with the stored parameters and statistics.
    pub fn to_model(&self) -> Result<Cvae<f32>> {
        let mut m = Cvae::<f32>::new(self.model.clone(), 0)?;
        copy_blocks(m.params_mut(), &self.params, "parameter")?;
        copy_blocks(m.buffers_mut(), &self.buffers, "running-statistic")?;
        Ok(m)
    }

    /// Checkpoint of a model as it stands, with no optimiser state.
    pub fn from_model(model: &Cvae<f32>, train: TrainConfig, history: TrainHistory) -> Self {
        CvaeCheckpoint {
            version: CHECKPOINT_VERSION,
            model: model.config().clone(),
            train,
            history,
            params: model.params().into_iter().map(Block::from_param).collect(),
            buffers: model.buffers().into_iter().map(Block::from_param).collect(),
            adam_t: 0,
            adam_m: Vec::new(),
            adam_v: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let moments = !self.adam_m.is_empty();
        if moments
            && (self.adam_m.len() != self.params.len()
                || self.adam_v.len() != self.params.len()
                || self
                    .params
                    .iter()
                    .zip(self.adam_m.iter().zip(&self.adam_v))
                    .any(|(p, (m, v))| m.len() != p.values.len() || v.len() != p.values.len()))
        {
            return Err(Error::shape("optimiser moments do not mirror the parameters"));
        }
        let header = Header {
            version: self.version,
            model: self.model.clone(),
            train: self.train.clone(),
            history: self.history.clone(),
            params: self.params.iter().map(|b| BlockHeader { name: b.name.clone(), shape: b.shape.clone() }).collect(),
            buffers: self.buffers.iter().map(|b| BlockHeader { name: b.name.clone(), shape: b.shape.clone() }).collect(),
            adam_t: self.adam_t,
            adam_moments: moments,
        };
        let mut out = format!("{MAGIC} {}\n{}\n", self.version, serde_json::to_string(&header)?).into_bytes();
        let arrays = self
            .params
            .iter()
            .chain(&self.buffers)
            .map(|b| &b.values)
            .chain(self.adam_m.iter())
            .chain(self.adam_v.iter());
        for a in arrays {
            for v in a {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut lines = bytes.splitn(3, |&b| b == b'\n');
        let magic = lines.next().unwrap_or_default();
        let magic = std::str::from_utf8(magic).map_err(|_| Error::Integrity("checkpoint magic is not text".into()))?;
        let version = magic
            .strip_prefix(MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| Error::Integrity(format!("not a checkpoint file (first line {magic:?})")))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Integrity(format!(
                "checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let header_line = lines.next().ok_or_else(|| Error::Integrity("checkpoint header missing".into()))?;
        let header: Header = serde_json::from_slice(header_line)
            .map_err(|e| Error::Integrity(format!("checkpoint header unreadable: {e}")))?;
        if header.version != version {
            return Err(Error::Integrity("header and magic versions disagree".into()));
        }
        let payload = lines.next().unwrap_or_default();
        let lens: Vec<usize> = header
            .params
            .iter()
            .chain(&header.buffers)
            .map(|b| b.shape.iter().product())
            .collect();
        let n_params = header.params.len();
        let param_lens = lens[..n_params].to_vec();
        let mut all = lens.clone();
        if header.adam_moments {
            all.extend(&param_lens);
            all.extend(&param_lens);
        }
        let expected = all.iter().sum::<usize>() * 4;
        if payload.len() != expected {
            return Err(Error::Integrity(format!(
                "checkpoint payload is {} bytes, header describes {expected}",
                payload.len()
            )));
        }
        let mut values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let mut take = |n: usize| -> Vec<f32> { values.by_ref().take(n).collect() };
        let mk = |hs: Vec<BlockHeader>, take: &mut dyn FnMut(usize) -> Vec<f32>| -> Vec<Block> {
            hs.into_iter()
                .map(|h| {
                    let n = h.shape.iter().product();
                    Block {
                        name: h.name,
                        shape: h.shape,
                        values: take(n),
                    }
                })
                .collect()
        };
        let params = mk(header.params, &mut take);
        let buffers = mk(header.buffers, &mut take);
        let (adam_m, adam_v) = if header.adam_moments {
            (
                param_lens.iter().map(|&n| take(n)).collect(),
                param_lens.iter().map(|&n| take(n)).collect(),
            )
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(CvaeCheckpoint {
            version,
            model: header.model,
            train: header.train,
            history: header.history,
            params,
            buffers,
            adam_t: header.adam_t,
            adam_m,
            adam_v,
        })
    }
}

pub fn save_checkpoint(ckpt: &CvaeCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CvaeCheckpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    CvaeCheckpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvae::{condition_tensor, sample_noise, LossParts};
    use crate::data::ClassLabel;
    use crate::nn::{Mode, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn checkpoint() -> CvaeCheckpoint {
        let mut m = Cvae::<f32>::new(CvaeConfig::default(), 11).unwrap();
        for (k, p) in m.buffers_mut().into_iter().enumerate() {
            p.value.iter_mut().for_each(|v| *v += 0.25 * k as f32);
        }
        let mut c = CvaeCheckpoint::from_model(
            &m,
            TrainConfig::default(),
            TrainHistory {
                initial_val: LossParts { total: 3.0, recon: 2.0, kl: 1.0 },
                ..TrainHistory::default()
            },
        );
        c.adam_t = 7;
        c.adam_m = c.params.iter().map(|p| vec![0.5; p.values.len()]).collect();
        c.adam_v = c.params.iter().map(|p| vec![0.125; p.values.len()]).collect();
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let c = checkpoint();
        let bytes = c.to_bytes().unwrap();
        let back = CvaeCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn reload_reproduces_inference() {
        let c = checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&c, &path).unwrap();
        let mut a = c.to_model().unwrap();
        let mut b = load_checkpoint(&path).unwrap().to_model().unwrap();
        let z = sample_noise(&mut ChaCha8Rng::seed_from_u64(1), 2, 10);
        let cond = condition_tensor(&[ClassLabel::Left.condition(), ClassLabel::Feet.condition()], true).unwrap();
        let ya: Tensor<f32> = a.decode(&z, &cond, Mode::Infer).unwrap();
        let yb = b.decode(&z, &cond, Mode::Infer).unwrap();
        assert!(ya.data().iter().zip(yb.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn truncation_and_version_detected() {
        let bytes = checkpoint().to_bytes().unwrap();
        let err = CvaeCheckpoint::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
        let mut v2 = bytes.clone();
        let pos = MAGIC.len() + 1;
        v2[pos] = b'9';
        assert!(matches!(CvaeCheckpoint::from_bytes(&v2).unwrap_err(), Error::Integrity(_)));
        assert!(matches!(CvaeCheckpoint::from_bytes(b"garbage").unwrap_err(), Error::Integrity(_)));
    }

    #[test]
    fn mismatched_architecture_rejected() {
        let mut c = checkpoint();
        c.model.latent_dim = 8;
        assert!(matches!(c.to_model(), Err(Error::Integrity(_))));
    }
}
