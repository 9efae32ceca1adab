//! On-disk checkpoints: a directory holding `meta.toml` plus one raw
//! little-endian blob per named weight tensor under `weights/`.
//!
//! ```text
//! ckpt/
//!   meta.toml            schema = "faceprotect-ckpt/1", kind, id, layers, ...
//!   weights/gen.fc.weight.bin
//!   ...
//! ```
//!
//! The checkpoint `id` is a SHA-256 digest over every blob (name, dtype, shape,
//! bytes). Loading recomputes it, so a truncated or edited blob is rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use faceprotect_nn::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA: &str = "faceprotect-ckpt/1";
const META_FILE: &str = "meta.toml";
const WEIGHTS_DIR: &str = "weights";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Godwgm,
    Wvs,
}

impl fmt::Display for CheckpointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointKind::Godwgm => f.write_str("godwgm"),
            CheckpointKind::Wvs => f.write_str("wvs"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

/// One named weight tensor.
#[derive(Clone, Debug, PartialEq)]
pub enum Blob {
    F32 { shape: Vec<usize>, data: Vec<f32> },
    F64 { shape: Vec<usize>, data: Vec<f64> },
}

impl Blob {
    pub fn shape(&self) -> &[usize] {
        match self {
            Blob::F32 { shape, .. } | Blob::F64 { shape, .. } => shape,
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            Blob::F32 { .. } => DType::F32,
            Blob::F64 { .. } => DType::F64,
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        match self {
            Blob::F32 { data, .. } => data.iter().flat_map(|v| v.to_le_bytes()).collect(),
            Blob::F64 { data, .. } => data.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    fn from_bytes(dtype: DType, shape: Vec<usize>, bytes: &[u8]) -> Option<Self> {
        let numel: usize = shape.iter().product();
        match dtype {
            DType::F32 if bytes.len() == numel * 4 => Some(Blob::F32 {
                data: bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                shape,
            }),
            DType::F64 if bytes.len() == numel * 8 => Some(Blob::F64 {
                data: bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                shape,
            }),
            _ => None,
        }
    }
}

impl From<&Tensor> for Blob {
    fn from(t: &Tensor) -> Self {
        Blob::F32 {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema: String,
    pub kind: CheckpointKind,
    pub id: String,
    pub created_unix: u64,
    pub extractor_id: String,
    pub dataset_fingerprint: String,
    /// Architecture identifiers and sizes; enough to rebuild the network.
    pub architecture: toml::Table,
    /// Training hyperparameters (learning rates, batch size, epochs, loss weights, seed, ...).
    pub training: toml::Table,
    pub layers: Vec<LayerEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub weights: BTreeMap<String, Blob>,
}

/// Hex SHA-256 of the given byte chunks, truncated to 16 hex digits.
pub fn fingerprint<'a>(chunks: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut h = Sha256::new();
    for c in chunks {
        h.update((c.len() as u64).to_le_bytes());
        h.update(c);
    }
    hex::encode(h.finalize())[..16].to_string()
}

fn weights_id(weights: &BTreeMap<String, Blob>) -> String {
    let mut h = Sha256::new();
    for (name, blob) in weights {
        h.update(name.as_bytes());
        h.update([0u8, blob.dtype() as u8]);
        for d in blob.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        h.update(blob.to_bytes());
    }
    hex::encode(h.finalize())[..16].to_string()
}

impl Checkpoint {
    pub fn new(
        kind: CheckpointKind,
        weights: BTreeMap<String, Blob>,
        architecture: toml::Table,
        training: toml::Table,
        extractor_id: impl Into<String>,
        dataset_fingerprint: impl Into<String>,
    ) -> Self {
        let layers = weights
            .iter()
            .map(|(name, b)| LayerEntry {
                name: name.clone(),
                dtype: b.dtype(),
                shape: b.shape().to_vec(),
            })
            .collect();
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            meta: CheckpointMeta {
                schema: CHECKPOINT_SCHEMA.to_string(),
                kind,
                id: weights_id(&weights),
                created_unix,
                extractor_id: extractor_id.into(),
                dataset_fingerprint: dataset_fingerprint.into(),
                architecture,
                training,
                layers,
            },
            weights,
        }
    }

    pub fn kind(&self) -> CheckpointKind {
        self.meta.kind
    }

    pub fn id(&self) -> &str {
        &self.meta.id
    }

    pub fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.meta.kind != kind {
            return Err(Error::SchemaMismatch(format!(
                "expected a {kind} checkpoint, got {}",
                self.meta.kind
            )));
        }
        Ok(())
    }

    /// Fetch an `f32` tensor, checking its shape.
    pub fn tensor(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        match self.weights.get(name) {
            Some(Blob::F32 { shape: s, data }) if s == shape => Ok(Tensor::new(s, data.clone())),
            Some(b) => Err(Error::SchemaMismatch(format!(
                "layer {name}: expected f32 {shape:?}, found {:?} {:?}",
                b.dtype(),
                b.shape()
            ))),
            None => Err(Error::SchemaMismatch(format!("missing layer {name}"))),
        }
    }

    /// Fetch an `f64` buffer, checking its shape.
    pub fn f64_buffer(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        match self.weights.get(name) {
            Some(Blob::F64 { shape: s, data }) if s == shape => Ok(data.clone()),
            Some(b) => Err(Error::SchemaMismatch(format!(
                "layer {name}: expected f64 {shape:?}, found {:?} {:?}",
                b.dtype(),
                b.shape()
            ))),
            None => Err(Error::SchemaMismatch(format!("missing layer {name}"))),
        }
    }

    /// Reject layers that no consumer asked for.
    pub fn expect_layer_names<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let want: std::collections::BTreeSet<&str> = names.into_iter().collect();
        let have: std::collections::BTreeSet<&str> = self.weights.keys().map(String::as_str).collect();
        if want != have {
            let extra: Vec<_> = have.difference(&want).collect();
            let missing: Vec<_> = want.difference(&have).collect();
            return Err(Error::SchemaMismatch(format!(
                "layer set differs: missing {missing:?}, unexpected {extra:?}"
            )));
        }
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let wdir = dir.join(WEIGHTS_DIR);
        std::fs::create_dir_all(&wdir).map_err(|e| Error::io(&wdir, e))?;
        for (name, blob) in &self.weights {
            let p = wdir.join(format!("{name}.bin"));
            std::fs::write(&p, blob.to_bytes()).map_err(|e| Error::io(&p, e))?;
        }
        let meta = toml::to_string(&self.meta).map_err(|e| Error::Checkpoint {
            path: dir.to_path_buf(),
            reason: e.to_string(),
        })?;
        let p = dir.join(META_FILE);
        std::fs::write(&p, meta).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let bad = |reason: String| Error::Checkpoint {
            path: dir.to_path_buf(),
            reason,
        };
        let meta_path = dir.join(META_FILE);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: CheckpointMeta =
            toml::from_str(&text).map_err(|e| bad(format!("unreadable {META_FILE}: {e}")))?;
        if meta.schema != CHECKPOINT_SCHEMA {
            return Err(bad(format!(
                "unsupported schema {:?}, expected {CHECKPOINT_SCHEMA:?}",
                meta.schema
            )));
        }
        let mut weights = BTreeMap::new();
        for layer in &meta.layers {
            let p: PathBuf = dir.join(WEIGHTS_DIR).join(format!("{}.bin", layer.name));
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let blob = Blob::from_bytes(layer.dtype, layer.shape.clone(), &bytes).ok_or_else(|| {
                bad(format!(
                    "layer {} has {} bytes, which does not match {:?} {:?}",
                    layer.name,
                    bytes.len(),
                    layer.dtype,
                    layer.shape
                ))
            })?;
            weights.insert(layer.name.clone(), blob);
        }
        let id = weights_id(&weights);
        if id != meta.id {
            return Err(bad(format!("weights digest {id} does not match recorded id {}", meta.id)));
        }
        Ok(Self { meta, weights })
    }
}
