//! On-disk model store.
//!
//! ```text
//! <root>/network.json
//! <root>/data/trips.jsonl
//! <root>/global/meta.json, params-<digest>.bin
//! <root>/drivers/<driver_id>/meta.json, params-<digest>.bin
//! <root>/events.jsonl
//! ```
//!
//! Checkpoint metadata is a pure function of the training inputs. Wall
//! clock times go to `events.jsonl` instead.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use vecest::checkpoint::{self, CheckpointInfo, CheckpointMeta, LoadedCheckpoint, META_FILE};
use vecest::evaluation::Dataset;
use vecest::ingest::{read_jsonl, write_jsonl};
use vecest::model::params::ModelParams;
use vecest::model::Model;
use vecest::types::{RoadNetwork, Trip};
use vecest::{Error, Result};

#[derive(Debug, Clone)]
pub struct ModelStore {
    root: PathBuf,
}

/// Rejects ids that would escape or alias a store directory.
pub fn check_driver_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.len() <= 128
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidData(format!("driver id {id:?} is not usable as a store key")))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl ModelStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn network_path(&self) -> PathBuf {
        self.root.join("network.json")
    }

    pub fn trips_path(&self) -> PathBuf {
        self.root.join("data").join("trips.jsonl")
    }

    pub fn global_dir(&self) -> PathBuf {
        self.root.join("global")
    }

    pub fn driver_dir(&self, id: &str) -> Result<PathBuf> {
        check_driver_id(id)?;
        Ok(self.root.join("drivers").join(id))
    }

    pub fn save_network(&self, network: &RoadNetwork) -> Result<()> {
        write_atomic(&self.network_path(), network.to_json()?.as_bytes())
    }

    pub fn load_network(&self) -> Result<RoadNetwork> {
        let path = self.network_path();
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::InvalidData(format!("cannot read {}: {e}", path.display())))?;
        RoadNetwork::from_json(&text)
    }

    pub fn save_trips(&self, trips: &[Trip]) -> Result<()> {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, trips)?;
        write_atomic(&self.trips_path(), &buf)
    }

    pub fn load_trips(&self) -> Result<Vec<Trip>> {
        let path = self.trips_path();
        let f = fs::File::open(&path).map_err(|e| Error::InvalidData(format!("cannot read {}: {e}", path.display())))?;
        read_jsonl(BufReader::new(f))
    }

    pub fn dataset(&self, split_seed: u64, utc_offset_s: i32) -> Result<Dataset> {
        Ok(Dataset::from_trips(self.load_network()?, self.load_trips()?, split_seed, utc_offset_s))
    }

    pub fn save_global(&self, model: &Model, params: &ModelParams, info: CheckpointInfo) -> Result<CheckpointMeta> {
        let meta = checkpoint::save(&self.global_dir(), model, params, info)?;
        self.record_event("global_saved", None, &meta.tensor_sha256)?;
        Ok(meta)
    }

    pub fn has_global(&self) -> bool {
        self.global_dir().join(META_FILE).exists()
    }

    pub fn load_global(&self) -> Result<LoadedCheckpoint> {
        if !self.has_global() {
            return Err(Error::Checkpoint(format!("no global checkpoint in {}", self.root.display())));
        }
        checkpoint::load(&self.global_dir())
    }

    /// Saves a driver checkpoint; `info.parent_sha256` must name the global
    /// checkpoint it was fine-tuned from.
    pub fn save_driver(&self, id: &str, model: &Model, params: &ModelParams, info: CheckpointInfo) -> Result<CheckpointMeta> {
        if info.parent_sha256.is_none() {
            return Err(Error::Contract("driver checkpoints must reference their global checkpoint".into()));
        }
        let meta = checkpoint::save(&self.driver_dir(id)?, model, params, CheckpointInfo { driver_id: Some(id.into()), ..info })?;
        self.record_event("driver_saved", Some(id), &meta.tensor_sha256)?;
        Ok(meta)
    }

    /// The driver's committed checkpoint, if any.
    pub fn load_driver(&self, id: &str) -> Result<Option<LoadedCheckpoint>> {
        let dir = self.driver_dir(id)?;
        if !dir.join(META_FILE).exists() {
            return Ok(None);
        }
        checkpoint::load(&dir).map(Some)
    }

    pub fn driver_ids(&self) -> Result<Vec<String>> {
        let dir = self.root.join("drivers");
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut ids: Vec<String> = fs::read_dir(dir)?
            .flatten()
            .filter(|e| e.path().join(META_FILE).exists())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Appends a timestamped line to the store's event log.
    pub fn record_event(&self, kind: &str, driver_id: Option<&str>, sha256: &str) -> Result<()> {
        #[derive(Serialize)]
        struct Event<'a> {
            time: String,
            kind: &'a str,
            #[serde(skip_serializing_if = "Option::is_none")]
            driver_id: Option<&'a str>,
            sha256: &'a str,
        }
        fs::create_dir_all(&self.root)?;
        let line = serde_json::to_string(&Event {
            time: chrono::Utc::now().to_rfc3339(),
            kind,
            driver_id,
            sha256,
        })?;
        let mut f = fs::OpenOptions::new().create(true).append(true).open(self.root.join("events.jsonl"))?;
        writeln!(f, "{line}")?;
        Ok(())
    }
}
