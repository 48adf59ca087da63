//! Training, fine-tuning and estimation against a model store.

use std::collections::HashMap;
use std::sync::Arc;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use vecest::checkpoint::{CheckpointInfo, CheckpointMeta, LoadedCheckpoint};
use vecest::config::AppConfig;
use vecest::evaluation::{fine_tune_driver, prepare, train_global};
use vecest::ingest::make_splits;
use vecest::model::{ModelConfig, Variant};
use vecest::types::{clock, group_by_driver, DriverHistory, RoadNetwork, Route, Splits, Trip, VehicleType};
use vecest::{Error, Result};

use crate::store::ModelStore;

/// Trains the global model on the store's data and commits it.
pub fn train(store: &ModelStore, cfg: &AppConfig) -> Result<CheckpointMeta> {
    let data = store.dataset(cfg.data.split_seed, cfg.data.utc_offset_s)?;
    let (model, prepared) = prepare(&data, &cfg.model)?;
    let (params, outcome) = train_global(&model, &prepared, &cfg.meta)?;
    info!("kept epoch {} with validation loss {:?}", outcome.best_epoch, outcome.best_val);
    store.save_global(
        &model,
        &params,
        CheckpointInfo {
            config_hash: cfg.hash(),
            epoch: outcome.best_epoch,
            val_loss: outcome.best_val,
            driver_id: None,
            parent_sha256: None,
        },
    )
}

/// Driver histories split as in training.
pub fn histories(trips: Vec<Trip>, split_seed: u64) -> Vec<DriverHistory> {
    group_by_driver(trips).iter().map(|h| make_splits(h, split_seed)).collect()
}

/// Fine-tunes the committed global model for one driver. Returns `None`
/// when the driver has no labeled training trips.
pub fn finetune(
    store: &ModelStore,
    cfg: &AppConfig,
    global: &LoadedCheckpoint,
    network: &RoadNetwork,
    history: &DriverHistory,
) -> Result<Option<CheckpointMeta>> {
    let pending = finetune_staged(cfg, global, network, history)?;
    let Some((params, info)) = pending else { return Ok(None) };
    store.save_driver(&history.driver_id, &global.model, &params, info).map(Some)
}

type Adapted = (vecest::model::params::ModelParams, CheckpointInfo);

/// The adapted parameters and checkpoint fields, not yet written.
pub fn finetune_staged(
    cfg: &AppConfig,
    global: &LoadedCheckpoint,
    network: &RoadNetwork,
    history: &DriverHistory,
) -> Result<Option<Adapted>> {
    let model = &global.model;
    let prepared = vec![model.prepare_driver(history, network)?];
    let Some((params, steps)) = fine_tune_driver(model, &prepared, 0, &global.params, &cfg.meta)? else {
        return Ok(None);
    };
    let val: Vec<usize> = prepared[0].splits.val.iter().copied().filter(|&i| prepared[0].is_labeled(i)).collect();
    let val_loss = (!val.is_empty()).then(|| model.batch_loss(&params.values, &prepared[0], &val));
    info!("driver {}: {steps} fine-tune steps, validation loss {val_loss:?}", history.driver_id);
    let info = CheckpointInfo {
        config_hash: cfg.hash(),
        epoch: global.meta.epoch,
        val_loss,
        driver_id: Some(history.driver_id.clone()),
        parent_sha256: Some(global.meta.tensor_sha256.clone()),
    };
    Ok(Some((params, info)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Departure {
    Epoch(i64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateRequest {
    pub driver_id: String,
    pub segment_ids: Vec<String>,
    /// Epoch seconds or a local date-time such as `2018-01-05T08:30`.
    pub departure_time: Departure,
    /// Defaults to the vehicle of the driver's latest trip.
    #[serde(default)]
    pub vehicle_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEnergy {
    pub id: String,
    pub predicted_energy: f64,
    /// Predicted mean speed, m/s; absent for variants without behavior
    /// prediction.
    pub predicted_speed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResponse {
    pub driver_id: String,
    pub total_energy: f64,
    pub segments: Vec<SegmentEnergy>,
    /// Tensor digest of the checkpoint that produced the estimate.
    pub model_version: String,
    /// `driver` for a fine-tuned checkpoint, `global` otherwise.
    pub model: String,
    pub departure_time: i64,
    pub reference_trips: Vec<String>,
    /// True when the driver had no history to summarize.
    pub stats_fallback: bool,
}

#[derive(Debug)]
pub enum EstimateError {
    UnknownDriver(String),
    UnknownSegment(String),
    BadRequest(String),
    NoModel,
    Model(Error),
}

impl std::fmt::Display for EstimateError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimateError::UnknownDriver(id) => write!(f, "unknown driver {id:?}"),
            EstimateError::UnknownSegment(id) => write!(f, "unknown segment id {id:?}"),
            EstimateError::BadRequest(msg) => write!(f, "{msg}"),
            EstimateError::NoModel => write!(f, "no global checkpoint has been trained"),
            EstimateError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for EstimateError {}

/// Immutable view of the store used to serve estimates.
pub struct Snapshot {
    pub network: Arc<RoadNetwork>,
    pub histories: HashMap<String, Arc<DriverHistory>>,
    pub global: Option<Arc<LoadedCheckpoint>>,
    pub drivers: HashMap<String, Arc<LoadedCheckpoint>>,
    pub utc_offset_s: i32,
}

impl Snapshot {
    /// Loads network, histories and committed checkpoints. Driver
    /// checkpoints fine-tuned from another global checkpoint are skipped.
    pub fn load(store: &ModelStore, cfg: &AppConfig) -> Result<Self> {
        let network = Arc::new(store.load_network()?);
        let trips = if store.trips_path().exists() { store.load_trips()? } else { Vec::new() };
        let histories =
            histories(trips, cfg.data.split_seed).into_iter().map(|h| (h.driver_id.clone(), Arc::new(h))).collect();
        let global = if store.has_global() { Some(Arc::new(store.load_global()?)) } else { None };
        let mut drivers = HashMap::new();
        if let Some(g) = &global {
            for id in store.driver_ids()? {
                match store.load_driver(&id) {
                    Ok(Some(ck)) if ck.meta.parent_sha256.as_deref() == Some(g.meta.tensor_sha256.as_str()) => {
                        drivers.insert(id, Arc::new(ck));
                    }
                    Ok(Some(_)) => warn!("driver {id}: checkpoint was fine-tuned from another global model, ignored"),
                    Ok(None) => {}
                    Err(e) => warn!("driver {id}: {e}"),
                }
            }
        }
        Ok(Self { network, histories, global, drivers, utc_offset_s: cfg.data.utc_offset_s })
    }

    pub fn knows_driver(&self, id: &str) -> bool {
        self.histories.contains_key(id) || self.drivers.contains_key(id)
    }

    /// Copy with one driver checkpoint replaced.
    pub fn with_driver(&self, id: &str, ck: Arc<LoadedCheckpoint>) -> Self {
        let mut drivers = self.drivers.clone();
        drivers.insert(id.to_string(), ck);
        Self {
            network: self.network.clone(),
            histories: self.histories.clone(),
            global: self.global.clone(),
            drivers,
            utc_offset_s: self.utc_offset_s,
        }
    }

    pub fn estimate(&self, req: &EstimateRequest, fallback: bool) -> std::result::Result<EstimateResponse, EstimateError> {
        let global = self.global.as_ref().ok_or(EstimateError::NoModel)?;
        if !self.knows_driver(&req.driver_id) && !fallback {
            return Err(EstimateError::UnknownDriver(req.driver_id.clone()));
        }
        if req.segment_ids.is_empty() {
            return Err(EstimateError::BadRequest("route has no segments".into()));
        }
        if let Some(bad) = req.segment_ids.iter().find(|s| !self.network.contains(s)) {
            return Err(EstimateError::UnknownSegment(bad.clone()));
        }
        let departure = match &req.departure_time {
            Departure::Epoch(t) => *t,
            Departure::Text(s) => clock::parse(s, self.utc_offset_s)
                .ok_or_else(|| EstimateError::BadRequest(format!("cannot parse departure time {s:?}")))?,
        };
        let history = self.serving_history(&req.driver_id);
        let vehicle_type = match &req.vehicle_type {
            Some(v) => v.parse::<VehicleType>().map_err(|e| EstimateError::BadRequest(e.to_string()))?,
            None => history.trips.iter().max_by_key(|t| t.departure_time).map_or(VehicleType::EV, |t| t.vehicle_type),
        };
        let (ck, kind) = match self.drivers.get(&req.driver_id) {
            Some(ck) => (ck.as_ref(), "driver"),
            None => (global.as_ref(), "global"),
        };
        let target = Trip {
            id: format!("request-{}-{departure}", req.driver_id),
            driver_id: req.driver_id.clone(),
            vehicle_type,
            departure_time: departure,
            route: Route::new(req.segment_ids.clone()),
            trajectory: None,
            y_total: None,
        };
        let est = ck.model.forward(&target, &history, &ck.params, &self.network).map_err(EstimateError::Model)?;
        Ok(EstimateResponse {
            driver_id: req.driver_id.clone(),
            total_energy: est.total,
            segments: est
                .per_segment
                .iter()
                .map(|s| SegmentEnergy {
                    id: s.segment_id.clone(),
                    predicted_energy: s.energy,
                    predicted_speed: s.behaviors.map(|b| b[0]),
                })
                .collect(),
            model_version: ck.meta.tensor_sha256.clone(),
            model: kind.into(),
            departure_time: departure,
            reference_trips: est.reference_trips,
            stats_fallback: est.stats_fallback,
        })
    }

    /// The driver's full history with every trip eligible as a reference.
    fn serving_history(&self, id: &str) -> DriverHistory {
        match self.histories.get(id) {
            Some(h) => {
                let mut h = DriverHistory::clone(h);
                h.splits = Splits { train: (0..h.trips.len()).collect(), ..Splits::default() };
                h
            }
            None => DriverHistory::new(id, Vec::new()),
        }
    }
}

/// Applies command line overrides to a configuration.
pub fn with_overrides(mut cfg: AppConfig, seed: Option<u64>, variant: Option<Variant>) -> Result<AppConfig> {
    if let Some(s) = seed {
        cfg.meta.seed = s;
        cfg.model.selection_seed = s;
    }
    if let Some(v) = variant {
        cfg.model = ModelConfig { variant: v, ..cfg.model };
    }
    cfg.validate()?;
    Ok(cfg)
}
