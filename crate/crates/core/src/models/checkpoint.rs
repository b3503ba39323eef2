use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"FFCK";
const FORMAT: &str = "fragnet-checkpoint";
const VERSION: u32 = 1;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorIndex {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    /// Byte length in the blob.
    pub len: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub corpus_digest: String,
    #[serde(default)]
    pub class_names: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub config: ModelConfig,
    pub tensors: Vec<TensorIndex>,
    pub training: Option<TrainingMeta>,
    pub blob_len: usize,
    /// FNV-1a 64 of the blob, 16 hex digits.
    pub digest: String,
}

/// Decoded checkpoint: the manifest and the weights it indexes.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub store: ParamStore<f32>,
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>, training: Option<TrainingMeta>) -> Result<Self> {
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut blob = Vec::new();
        for e in model.store().entries() {
            e.tensor.ensure_finite(&e.name)?;
            let len = e.tensor.numel() * 4;
            tensors.push(TensorIndex {
                name: e.name.clone(),
                shape: e.tensor.shape().to_vec(),
                offset,
                len,
                trainable: e.trainable,
            });
            offset += len;
            blob.extend(e.tensor.data().iter().flat_map(|v| v.to_le_bytes()));
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            architecture: model.config().architecture,
            config: model.config().clone(),
            tensors,
            training,
            blob_len: blob.len(),
            digest: format!("{:016x}", fnv1a64(&blob)),
        };
        Ok(Checkpoint { manifest, store: model.store().clone() })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.manifest)?;
        let mut out = Vec::with_capacity(8 + json.len() + self.manifest.blob_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for e in self.store.entries() {
            out.extend(e.tensor.data().iter().flat_map(|v| v.to_le_bytes()));
        }
        Ok(out)
    }

    /// Parses and fully validates a checkpoint image: header, manifest, blob length,
    /// digest and every tensor index entry.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let mlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = &bytes[8..];
        if mlen > body.len() {
            return Err(Error::Format(format!(
                "manifest length {mlen} exceeds the remaining {} bytes",
                body.len()
            )));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..mlen])
            .map_err(|e| Error::Format(format!("manifest: {e}")))?;
        let blob = &body[mlen..];
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint format {} v{}",
                manifest.format, manifest.version
            )));
        }
        if manifest.architecture != manifest.config.architecture {
            return Err(Error::Format("manifest architecture disagrees with its config".into()));
        }
        if blob.len() != manifest.blob_len {
            return Err(Error::Integrity(format!(
                "blob has {} bytes, manifest says {}",
                blob.len(),
                manifest.blob_len
            )));
        }
        let digest = format!("{:016x}", fnv1a64(blob));
        if digest != manifest.digest {
            return Err(Error::Integrity(format!(
                "blob digest {digest} does not match manifest digest {}",
                manifest.digest
            )));
        }
        let mut store = ParamStore::new();
        for t in &manifest.tensors {
            let numel = t
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n > 0 && n.checked_mul(4) == Some(t.len));
            let end = t.offset.checked_add(t.len).filter(|&e| e <= blob.len());
            let (Some(_), Some(end)) = (numel, end) else {
                return Err(Error::Format(format!(
                    "tensor {} ({:?}, offset {}, len {}) does not fit the blob",
                    t.name, t.shape, t.offset, t.len
                )));
            };
            if store.find(&t.name).is_some() {
                return Err(Error::Format(format!("duplicate tensor name {}", t.name)));
            }
            let data = blob[t.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            store.add(t.name.clone(), Tensor::new(&t.shape, data)?, t.trainable);
        }
        Ok(Checkpoint { manifest, store })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Writes through a temporary sibling file and renames it into place.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = Path::new(&tmp);
        {
            let mut f = fs::File::create(tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }

    /// Rebuilds the model. With `expected`, the checkpoint must describe the same
    /// architecture and class count; the fragment size is taken from `expected`.
    pub fn into_model(self, expected: Option<&ModelConfig>) -> Result<Model<f32>> {
        let config = match expected {
            Some(want) => {
                check_compatible(&self.manifest.config, want)?;
                want.clone()
            }
            None => self.manifest.config.clone(),
        };
        let mut model = Model::build(&config, self.manifest.training.as_ref().map_or(0, |t| t.seed))?;
        copy_all(&self.store, model.store_mut())?;
        Ok(model)
    }
}

fn check_compatible(have: &ModelConfig, want: &ModelConfig) -> Result<()> {
    if have.architecture != want.architecture {
        return Err(Error::Config(format!(
            "checkpoint holds a {} model, expected {}",
            have.architecture, want.architecture
        )));
    }
    if have.num_classes != want.num_classes {
        return Err(Error::Config(format!(
            "checkpoint has {} classes, expected {}",
            have.num_classes, want.num_classes
        )));
    }
    Ok(())
}

/// Copies every tensor of `src` into `dst` by name, or nothing if any name or shape
/// disagrees.
fn copy_all(src: &ParamStore<f32>, dst: &mut ParamStore<f32>) -> Result<Vec<String>> {
    if src.len() != dst.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} tensors, model has {}",
            src.len(),
            dst.len()
        )));
    }
    let mut plan = Vec::with_capacity(dst.len());
    for id in dst.ids() {
        let e = dst.entry(id);
        let sid = src
            .find(&e.name)
            .ok_or_else(|| Error::Config(format!("checkpoint has no tensor {}", e.name)))?;
        if src.get(sid).shape() != e.tensor.shape() {
            return Err(Error::Config(format!(
                "tensor {} has shape {:?} in the checkpoint, {:?} in the model",
                e.name,
                src.get(sid).shape(),
                e.tensor.shape()
            )));
        }
        plan.push((id, sid));
    }
    let mut names = Vec::with_capacity(plan.len());
    for (id, sid) in plan {
        dst.get_mut(id).data_mut().copy_from_slice(src.get(sid).data());
        names.push(dst.entry(id).name.clone());
    }
    Ok(names)
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path, training: Option<TrainingMeta>) -> Result<()> {
    Checkpoint::from_model(model, training)?.write(path)
}

pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<Model<f32>> {
    Checkpoint::read(path)?.into_model(expected)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TransferReport {
    pub architecture: Architecture,
    pub source_fragment_size: usize,
    pub target_fragment_size: usize,
    pub copied: Vec<String>,
    pub total: usize,
}

/// Initializes `target` from a checkpoint trained at a possibly different fragment size.
/// No weight shape depends on the input length, so every tensor carries over.
pub fn transfer_load(target: &mut Model<f32>, source: &Checkpoint) -> Result<TransferReport> {
    check_compatible(&source.manifest.config, target.config())?;
    let copied = copy_all(&source.store, target.store_mut())?;
    Ok(TransferReport {
        architecture: target.config().architecture,
        source_fragment_size: source.manifest.config.fragment_size,
        target_fragment_size: target.config().fragment_size,
        total: target.store().len(),
        copied,
    })
}
