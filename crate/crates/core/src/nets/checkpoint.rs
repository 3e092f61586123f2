//! Named-tensor checkpoint archive.
//!
//! Layout: the 8-byte magic `MADANT01`, a little-endian `u64` header
//! length, a JSON header (manifest plus tensor table) and the payload of
//! little-endian `f32` values, tensor after tensor, row-major.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::task::{ArchSpec, TaskModel, TaskParams};
use super::wae::{Wae, WaeArch, WaeParams};
use crate::datamodel::ShapeSignature;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MADANT01";

/// Which network an archive holds and how to rebuild it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    Task { arch: ArchSpec, signature: ShapeSignature },
    Wae { arch: WaeArch },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub arch_tag: String,
    pub latent_dim: usize,
    pub iteration: usize,
    /// Resolved run configuration, `key → value`.
    pub config: BTreeMap<String, String>,
    pub spec: ModelSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    manifest: CheckpointManifest,
    tensors: Vec<TensorEntry>,
    payload_sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub manifest: CheckpointManifest,
    pub tensors: Vec<NamedTensor>,
}

impl Archive {
    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// All tensor values in archive order.
    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().map(|&v| v as f64)).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Shape(format!("tensor {} has {} values for shape {:?}", t.name, t.data.len(), t.shape)));
            }
            entries.push(TensorEntry { name: t.name.clone(), shape: t.shape.clone(), dtype: "f32".into(), offset: payload.len() });
            for v in &t.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            manifest: self.manifest.clone(),
            tensors: entries,
            payload_sha256: hex::encode(Sha256::digest(&payload)),
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Data(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint archive"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..).ok_or_else(|| bad("truncated"))?;
        if hlen > body.len() {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&e.to_string()))?;
        let payload = &body[hlen..];
        if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
            return Err(Error::Checksum("checkpoint payload".into()));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            if e.dtype != "f32" {
                return Err(bad(&format!("tensor {} has unsupported dtype {}", e.name, e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            let raw = payload.get(e.offset..e.offset + 4 * n).ok_or_else(|| bad(&format!("tensor {} out of bounds", e.name)))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            tensors.push(NamedTensor { name: e.name, shape: e.shape, data });
        }
        Ok(Self { manifest: header.manifest, tensors })
    }

    /// Write through a temporary file and rename, so an interrupted write
    /// never replaces an existing checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let io = |e| Error::io(format!("writing {}", path.display()), e);
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

fn tensors(layout: &[(String, Vec<usize>, usize)], values: &[f64]) -> Vec<NamedTensor> {
    layout
        .iter()
        .map(|(name, shape, off)| {
            let n: usize = shape.iter().product();
            NamedTensor { name: name.clone(), shape: shape.clone(), data: values[*off..off + n].iter().map(|&v| v as f32).collect() }
        })
        .collect()
}

fn gather(archive: &Archive, layout: &[(String, Vec<usize>, usize)], count: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; count];
    for (name, shape, off) in layout {
        let t = archive.tensor(name).ok_or_else(|| Error::Data(format!("checkpoint lacks tensor {name}")))?;
        if &t.shape != shape {
            return Err(Error::Shape(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape)));
        }
        for (d, &v) in out[*off..].iter_mut().zip(&t.data) {
            *d = v as f64;
        }
    }
    Ok(out)
}

pub fn task_archive(task: &TaskModel, theta: &TaskParams, iteration: usize, config: BTreeMap<String, String>) -> Archive {
    Archive {
        manifest: CheckpointManifest {
            arch_tag: task.arch.tag().to_string(),
            latent_dim: task.embedding_dim(),
            iteration,
            config,
            spec: ModelSpec::Task { arch: task.arch.clone(), signature: task.signature },
        },
        tensors: tensors(&task.param_layout(), &theta.values),
    }
}

pub fn task_from_archive(archive: &Archive) -> Result<(TaskModel, TaskParams)> {
    let ModelSpec::Task { arch, signature } = &archive.manifest.spec else {
        return Err(Error::Data("checkpoint holds a WAE, not a task network".into()));
    };
    let task = TaskModel::new(arch.clone(), *signature)?;
    let values = gather(archive, &task.param_layout(), task.param_count())?;
    let theta = TaskParams { arch: arch.clone(), values };
    Ok((task, theta))
}

pub fn wae_archive(wae: &Wae, psi: &WaeParams, iteration: usize, config: BTreeMap<String, String>) -> Archive {
    let (ae, critic) = wae.param_layout();
    let mut t = tensors(&ae, &psi.autoencoder);
    t.extend(tensors(&critic, &psi.critic));
    Archive {
        manifest: CheckpointManifest {
            arch_tag: format!("wae_{}", wae.arch.divergence),
            latent_dim: wae.latent_dim(),
            iteration,
            config,
            spec: ModelSpec::Wae { arch: wae.arch.clone() },
        },
        tensors: t,
    }
}

pub fn wae_from_archive(archive: &Archive) -> Result<(Wae, WaeParams)> {
    let ModelSpec::Wae { arch } = &archive.manifest.spec else {
        return Err(Error::Data("checkpoint holds a task network, not a WAE".into()));
    };
    let wae = Wae::new(arch.clone())?;
    let (ae, critic) = wae.param_layout();
    let count = |l: &[(String, Vec<usize>, usize)]| l.iter().map(|(_, s, o)| o + s.iter().product::<usize>()).max().unwrap_or(0);
    let psi = WaeParams { autoencoder: gather(archive, &ae, count(&ae))?, critic: gather(archive, &critic, count(&critic))? };
    Ok((wae, psi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::ImageShape;
    use crate::metaloop::snap_f32;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig() -> ShapeSignature {
        ShapeSignature { image: ImageShape::new(12, 12, 1), n_classes: 4 }
    }

    #[test]
    fn task_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let task = TaskModel::new(ArchSpec::DigitsConvnet { conv1: 2, conv2: 3, fc: 5, kernel: 3 }, sig()).unwrap();
        let mut theta = task.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        snap_f32(&mut theta.values);
        let cfg = BTreeMap::from([("beta".to_string(), "2000".to_string())]);
        let path = dir.path().join("task.ckpt");
        task_archive(&task, &theta, 17, cfg.clone()).save(&path).unwrap();
        let a = Archive::load(&path).unwrap();
        assert_eq!(a.manifest.iteration, 17);
        assert_eq!(a.manifest.config, cfg);
        assert_eq!(a.manifest.arch_tag, "digits_convnet");
        let (task2, theta2) = task_from_archive(&a).unwrap();
        assert_eq!(task2, task);
        assert!(theta2.values.iter().zip(&theta.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(a.flat(), theta.values);
        assert!(!dir.path().join("task.tmp").exists());
    }

    #[test]
    fn wae_round_trip_is_bit_exact() {
        let wae = Wae::new(WaeArch { hidden: 6, latent: 2, critic_hidden: 3, ..WaeArch::digits(10) }).unwrap();
        let mut psi = wae.init_params(&mut ChaCha8Rng::seed_from_u64(2));
        snap_f32(&mut psi.autoencoder);
        snap_f32(&mut psi.critic);
        let a = Archive::from_bytes(&wae_archive(&wae, &psi, 3, BTreeMap::new()).to_bytes().unwrap()).unwrap();
        assert_eq!(a.manifest.latent_dim, 2);
        let (_, psi2) = wae_from_archive(&a).unwrap();
        assert_eq!(psi2, psi);
        assert!(task_from_archive(&a).is_err());
    }

    #[test]
    fn corrupted_archives_are_rejected() {
        let task = TaskModel::new(ArchSpec::ToyMlp { hidden: 3 }, sig()).unwrap();
        let theta = task.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let mut bytes = task_archive(&task, &theta, 0, BTreeMap::new()).to_bytes().unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        assert!(matches!(Archive::from_bytes(&bytes), Err(Error::Checksum(_))));
        assert!(Archive::from_bytes(b"nonsense").is_err());
    }
}
