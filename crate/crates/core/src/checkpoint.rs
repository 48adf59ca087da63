//! Checkpoints: a binary named-tensor file plus a metadata JSON that names
//! the tensor file by its SHA-256 digest.
//!
//! Saving writes the tensor file under its digest, then the metadata to a
//! temporary file that is renamed over `meta.json`. The rename is the
//! commit point; a save interrupted earlier leaves the previous checkpoint
//! loadable.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::features::FeatureScalers;
use crate::model::params::ModelParams;
use crate::model::{Model, ModelConfig};

const MAGIC: &[u8; 8] = b"VECTNSR1";
pub const META_FILE: &str = "meta.json";
pub const FORMAT_VERSION: u32 = 1;

/// Serializes named tensors: magic, tensor count, then per tensor the
/// name, shape and little-endian `f64` values.
pub fn encode_tensors(named: &[(String, Tensor<f64>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("tensor file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")) as usize)
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor<f64>)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a tensor file".into()));
    }
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let (rows, cols) = (r.u32()?, r.u32()?);
        let raw = r.take(rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| {
            Error::Checkpoint(format!("tensor {name} is too large"))
        })?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes"))).collect();
        out.push((name, Tensor::from_vec(rows, cols, data)));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after tensors".into()));
    }
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    /// File name of the tensor file, relative to the checkpoint directory.
    pub tensor_file: String,
    pub tensor_sha256: String,
    pub model: ModelConfig,
    pub scalers: FeatureScalers,
    /// Digest of the configuration that produced the checkpoint.
    pub config_hash: String,
    pub epoch: usize,
    pub val_loss: Option<f64>,
    /// Driver of a fine-tuned checkpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver_id: Option<String>,
    /// Tensor digest of the global checkpoint a driver checkpoint starts from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_sha256: Option<String>,
}

/// Descriptive fields of a checkpoint; digests are filled in on save.
#[derive(Debug, Clone)]
pub struct CheckpointInfo {
    pub config_hash: String,
    pub epoch: usize,
    pub val_loss: Option<f64>,
    pub driver_id: Option<String>,
    pub parent_sha256: Option<String>,
}

/// A checkpoint whose tensor file is on disk but whose metadata is not yet
/// committed.
pub struct PendingCheckpoint {
    dir: PathBuf,
    tmp_meta: PathBuf,
    pub meta: CheckpointMeta,
}

/// Aborts the process when `VECEST_FAULT` names this point; used to test
/// crash safety of the save protocol.
fn fault_point(name: &str) {
    if std::env::var("VECEST_FAULT").is_ok_and(|v| v == name) {
        std::process::abort();
    }
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    Ok(())
}

fn sync_dir(dir: &Path) {
    if let Ok(d) = fs::File::open(dir) {
        let _ = d.sync_all();
    }
}

/// Writes the tensor file and a temporary metadata file.
pub fn stage(dir: &Path, model: &Model, params: &ModelParams, info: CheckpointInfo) -> Result<PendingCheckpoint> {
    fs::create_dir_all(dir)?;
    let bytes = encode_tensors(&params.to_named());
    let digest = sha256_hex(&bytes);
    let tensor_file = format!("params-{}.bin", &digest[..16]);
    let target = dir.join(&tensor_file);
    if !target.exists() {
        let tmp = dir.join(format!("{tensor_file}.tmp"));
        write_synced(&tmp, &bytes)?;
        fault_point("tensor_written");
        fs::rename(&tmp, &target)?;
        fault_point("tensor_renamed");
    }
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        tensor_file,
        tensor_sha256: digest,
        model: model.config.clone(),
        scalers: model.scalers.clone(),
        config_hash: info.config_hash,
        epoch: info.epoch,
        val_loss: info.val_loss,
        driver_id: info.driver_id,
        parent_sha256: info.parent_sha256,
    };
    let tmp_meta = dir.join(format!("{META_FILE}.tmp"));
    write_synced(&tmp_meta, serde_json::to_string_pretty(&meta)?.as_bytes())?;
    fault_point("meta_written");
    Ok(PendingCheckpoint { dir: dir.to_path_buf(), tmp_meta, meta })
}

impl PendingCheckpoint {
    /// Atomically replaces the directory's metadata and removes tensor
    /// files no longer referenced.
    pub fn commit(self) -> Result<CheckpointMeta> {
        fs::rename(&self.tmp_meta, self.dir.join(META_FILE))?;
        sync_dir(&self.dir);
        fault_point("meta_committed");
        for entry in fs::read_dir(&self.dir)?.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with("params-") && name != self.meta.tensor_file {
                let _ = fs::remove_file(entry.path());
            }
        }
        Ok(self.meta)
    }
}

pub fn save(dir: &Path, model: &Model, params: &ModelParams, info: CheckpointInfo) -> Result<CheckpointMeta> {
    stage(dir, model, params, info)?.commit()
}

pub struct LoadedCheckpoint {
    pub model: Model,
    pub params: ModelParams,
    pub meta: CheckpointMeta,
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", meta.format_version)));
    }
    Ok(meta)
}

/// Loads and verifies the committed checkpoint in `dir`.
pub fn load(dir: &Path) -> Result<LoadedCheckpoint> {
    let meta = read_meta(dir)?;
    let bytes = fs::read(dir.join(&meta.tensor_file))
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", meta.tensor_file)))?;
    if sha256_hex(&bytes) != meta.tensor_sha256 {
        return Err(Error::Checkpoint("tensor file digest does not match metadata".into()));
    }
    let model = Model::new(meta.model.clone(), meta.scalers.clone())?;
    let params = ModelParams::from_named(model.layout.clone(), &decode_tensors(&bytes)?)?;
    Ok(LoadedCheckpoint { model, params, meta })
}
