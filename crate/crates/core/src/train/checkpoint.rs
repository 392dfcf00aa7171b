//! Binary checkpoint format.
//!
//! ```text
//! "FLAB" | u32 version | u64 header length | JSON header
//! | u64 tensor count | per tensor: u64 name length, name, u64 rank,
//!   u64 dims.., f32 values (little-endian)
//! | u64 checksum
//! ```
//! The header holds the model config and the training metadata. The
//! checksum is the first eight bytes of the SHA-256 of everything before it.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{ModelConfig, ModelState, Tensor};

pub const MAGIC: &[u8; 4] = b"FLAB";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Pass1,
    Reset,
    Pass2,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Pass1 => "pass1",
            Phase::Reset => "reset",
            Phase::Pass2 => "pass2",
        }
    }
}

/// One optimizer step: the batch loss before the update and the rate used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub phase: Phase,
}

/// Full-corpus loss measured at the end of an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// ChaCha word position, as a decimal string (it is a u128).
    pub word_pos: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(default)]
    pub base_ref: Option<String>,
    #[serde(default)]
    pub loss_curve: Vec<LossPoint>,
    #[serde(default)]
    pub epoch_losses: Vec<EpochLoss>,
    #[serde(default)]
    pub train_config: Option<serde_json::Value>,
    #[serde(default)]
    pub rng_state: Option<RngState>,
    #[serde(default)]
    pub entropy_floor: Option<f64>,
    #[serde(default)]
    pub reset_step: Option<usize>,
    #[serde(default)]
    pub converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelState,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn from_model(model: ModelState) -> Self {
        Checkpoint {
            model,
            meta: CheckpointMeta::default(),
        }
    }

    pub fn content_hash(&self) -> String {
        self.model.content_hash()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.model.config.clone(),
            meta: self.meta.clone(),
        })
        .map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(64 + header.len() + 4 * self.model.n_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.model.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.model.tensors {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u64).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Checksum {
                stored: 0,
                computed: checksum(bytes),
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        let computed = checksum(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let hlen = r.u64()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::Format(e.to_string()))?;
        let count = r.u64()? as usize;
        let mut tensors = indexmap::IndexMap::with_capacity(count);
        for _ in 0..count {
            let nlen = r.u64()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rank = r.u64()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.insert(name, Tensor { shape, data });
        }
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes after tensors".into()));
        }
        let model = ModelState {
            config: header.config,
            tensors,
        };
        model.validate()?;
        Ok(Checkpoint {
            model,
            meta: header.meta,
        })
    }
}

fn checksum(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("unexpected end of checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Checks that `ckpt` was trained from `base`: same config and a matching
/// `base_ref`.
pub fn verify_lineage(base: &ModelState, ckpt: &Checkpoint) -> Result<()> {
    if base.config != ckpt.model.config {
        return Err(Error::Lineage(
            "model config differs from the base checkpoint".into(),
        ));
    }
    let hash = base.content_hash();
    match &ckpt.meta.base_ref {
        Some(r) if *r == hash => Ok(()),
        Some(r) => Err(Error::Lineage(format!(
            "not a delta of this base (base_ref {r}, base is {hash})"
        ))),
        None => Err(Error::Lineage("checkpoint has no base_ref".into())),
    }
}

/// Loads `path` and checks it against `base`.
pub fn load_with_base(path: &Path, base: &ModelState) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    verify_lineage(base, &ckpt)?;
    Ok(ckpt)
}

/// CSV `step,epoch,lr,loss,floor`, with a trailing `phase` column when the
/// curve comes from a forgetting run.
pub fn loss_curve_csv(meta: &CheckpointMeta) -> String {
    let phased = meta.loss_curve.iter().any(|p| p.phase != Phase::Train);
    let floor = meta.entropy_floor.map(|f| f.to_string()).unwrap_or_default();
    let mut s = String::from(if phased {
        "step,epoch,lr,loss,floor,phase\n"
    } else {
        "step,epoch,lr,loss,floor\n"
    });
    for p in &meta.loss_curve {
        let _ = write!(s, "{},{},{},{},{}", p.step, p.epoch, p.lr, p.loss, floor);
        if phased {
            let _ = write!(s, ",{}", p.phase.label());
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn ckpt() -> Checkpoint {
        let c = ModelConfig {
            n_layers: 3,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            vocab_size: 20,
            max_seq_len: 8,
            init_seed: 4,
        };
        let mut k = Checkpoint::from_model(init_params(&c).unwrap());
        k.meta.loss_curve.push(LossPoint {
            step: 1,
            epoch: 0,
            lr: 1e-4,
            loss: 2.5,
            phase: Phase::Train,
        });
        k.meta.base_ref = Some("ab".into());
        k
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.flab");
        let k = ckpt();
        save_checkpoint(&k, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back.content_hash(), k.content_hash());
        assert!(back.model.bit_equal(&k.model));
        assert_eq!(back.meta, k.meta);
        assert_eq!(&std::fs::read(&p).unwrap()[..4], b"FLAB");
    }

    #[test]
    fn truncation_and_corruption() {
        let bytes = ckpt().to_bytes().unwrap();
        for cut in [0, 3, 100, bytes.len() - 1] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::Checksum { .. })
            ));
        }
        let mut flipped = bytes.clone();
        flipped[200] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Checksum { .. })));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = ckpt().to_bytes().unwrap();
        bytes[4] = 9;
        let n = bytes.len() - 8;
        let sum = checksum(&bytes[..n]);
        bytes[n..].copy_from_slice(&sum.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn lineage() {
        let base = ckpt().model;
        let mut child = Checkpoint::from_model(base.clone());
        child.model.tensors[0].data[0] += 1.0;
        assert!(verify_lineage(&base, &child).is_err());
        child.meta.base_ref = Some(base.content_hash());
        verify_lineage(&base, &child).unwrap();

        let mut other = base.config.clone();
        other.init_seed = 99;
        other.d_ff = 8;
        let stranger = init_params(&other).unwrap();
        assert!(matches!(verify_lineage(&stranger, &child), Err(Error::Lineage(_))));
    }

    #[test]
    fn csv_header() {
        let k = ckpt();
        let csv = loss_curve_csv(&k.meta);
        assert!(csv.starts_with("step,epoch,lr,loss,floor\n1,0,"));
    }
}
