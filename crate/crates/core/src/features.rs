//! Feature construction: trip/statistical, road, and vehicle-state inputs,
//! their train-split scalers, and the learned embeddings into `R^d`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::ingest::{extract_road_labels, trip_statistics};
use crate::model::encoding::encoding_matrix;
use crate::model::params::Bound;
use crate::types::{clock, DriverHistory, RoadNetwork, Trip, VehicleState, BEHAVIOR_DIM};

/// `[route length km, avg speed, avg accel, energy/hour, energy/km]`
pub const TRIP_CONT_DIM: usize = 1 + BEHAVIOR_DIM;
/// `[max speed km/h, length m]`
pub const ROAD_CONT_DIM: usize = 2;
pub const LANE_BUCKETS: usize = 4;
/// Embedded pieces concatenated before the trip projection: month, hour,
/// and one per continuous trip feature.
pub const TRIP_PARTS: usize = 2 + TRIP_CONT_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for row in rows {
            n += 1;
            for (j, &v) in row.iter().enumerate() {
                sum[j] += v;
                sq[j] += v * v;
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / nf - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| (v - m) / s).collect()
    }

    pub fn invert(&self, j: usize, v: f64) -> f64 {
        v * self.std[j] + self.mean[j]
    }
}

/// Affine label map: `standardized = (y - offset) / factor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScaler {
    pub factor: f64,
    pub offset: f64,
}

impl LabelScaler {
    pub fn fit(labels: &[f64]) -> Self {
        let s = Standardizer::fit(labels.iter().map(std::slice::from_ref), 1);
        Self { factor: s.std[0], offset: s.mean[0] }
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.offset) / self.factor
    }

    pub fn inverse(&self, y: f64) -> f64 {
        y * self.factor + self.offset
    }
}

/// Train-split statistics and vocabularies; persisted with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScalers {
    pub trip: Standardizer,
    pub state: Standardizer,
    pub road: Standardizer,
    pub behavior: Standardizer,
    pub label: LabelScaler,
    /// Mean driver statistics over all training trips; fallback for drivers
    /// without history.
    pub global_stats: [f64; BEHAVIOR_DIM],
    /// Sorted road type codes; the row order of the road-type table.
    pub road_types: Vec<String>,
    /// Seconds east of UTC for local time features.
    pub utc_offset_s: i32,
}

impl FeatureScalers {
    /// Fits every scaler on the training split of `histories`.
    pub fn fit(histories: &[DriverHistory], network: &RoadNetwork, utc_offset_s: i32) -> Result<Self> {
        let mut trip_rows = Vec::new();
        let mut state_rows = Vec::new();
        let mut behavior_rows = Vec::new();
        let mut labels = Vec::new();
        for h in histories {
            for t in h.train_trips() {
                let stats = trip_statistics(t)?;
                let len_km = network.route_length_m(&t.route)? / 1000.0;
                let mut row = vec![len_km];
                row.extend_from_slice(&stats);
                trip_rows.push(row);
                for p in t.trajectory.as_ref().ok_or(Error::NoTrajectory)? {
                    state_rows.push(p.state.to_array().to_vec());
                }
                for l in extract_road_labels(t)? {
                    behavior_rows.push(l.values.to_vec());
                }
                labels.push(t.y_total.ok_or_else(|| Error::InvalidData(format!("trip {} has no label", t.id)))?);
            }
        }
        let road_rows: Vec<Vec<f64>> = network.segments().iter().map(|s| vec![s.max_speed_kmh, s.length_m]).collect();
        let trip = Standardizer::fit(trip_rows.iter().map(|r| r.as_slice()), TRIP_CONT_DIM);
        let global_stats = [trip.mean[1], trip.mean[2], trip.mean[3], trip.mean[4]];
        Ok(Self {
            trip,
            state: Standardizer::fit(state_rows.iter().map(|r| r.as_slice()), VehicleState::DIM),
            road: Standardizer::fit(road_rows.iter().map(|r| r.as_slice()), ROAD_CONT_DIM),
            behavior: Standardizer::fit(behavior_rows.iter().map(|r| r.as_slice()), BEHAVIOR_DIM),
            label: LabelScaler::fit(&labels),
            global_stats,
            road_types: network.road_types(),
            utc_offset_s,
        })
    }

    pub fn road_type_index(&self, code: &str) -> Result<usize> {
        self.road_types.binary_search_by(|c| c.as_str().cmp(code)).map_err(|_| Error::UnknownRoadType(code.into()))
    }
}

/// Mean of per-trip `[speed, accel, energy/hour, energy/km]` over `trips`;
/// `None` when there are no trips.
pub fn driver_statistics<'a>(trips: impl IntoIterator<Item = &'a Trip>) -> Result<Option<[f64; BEHAVIOR_DIM]>> {
    let mut n = 0usize;
    let mut acc = [0.0; BEHAVIOR_DIM];
    for t in trips {
        let s = trip_statistics(t)?;
        for j in 0..BEHAVIOR_DIM {
            acc[j] += s[j];
        }
        n += 1;
    }
    if n == 0 {
        return Ok(None);
    }
    Ok(Some(acc.map(|v| v / n as f64)))
}

/// Shape and constants the encoder needs from the model configuration.
#[derive(Debug, Clone, Copy)]
pub struct EncodeSettings {
    pub embed_dim: usize,
    pub dist_max_m: f64,
    pub time_max_s: f64,
}

/// A trip reduced to standardized numeric inputs and categorical indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTrip {
    pub id: String,
    pub departure_time: i64,
    pub month: usize,
    pub hour: usize,
    pub vehicle: usize,
    pub route_len_km: f64,
    pub road_type: Vec<usize>,
    pub lanes: Vec<usize>,
    pub oneway: Vec<usize>,
    /// `n x 2` standardized `[max speed, length]`.
    pub road_cont: Tensor<f64>,
    pub segment_lengths_m: Vec<f64>,
    /// `m x 5` standardized states, when a trajectory exists.
    pub states: Option<Tensor<f64>>,
    /// `m x d` distance-time encodings.
    pub encodings: Option<Tensor<f64>>,
    /// `n x 4` standardized per-road behavior labels.
    pub labels: Option<Tensor<f64>>,
    /// Standardized energy label.
    pub y: Option<f64>,
    /// Raw trip statistics (used for other trips' driver statistics).
    pub stats: Option<[f64; BEHAVIOR_DIM]>,
}

impl EncodedTrip {
    pub fn n(&self) -> usize {
        self.road_type.len()
    }
}

/// Encodes everything about `trip` that does not depend on other trips.
/// Only the route, departure time and vehicle type are read unless the
/// trip carries a trajectory.
pub fn encode_trip(
    trip: &Trip,
    network: &RoadNetwork,
    scalers: &FeatureScalers,
    settings: EncodeSettings,
) -> Result<EncodedTrip> {
    if trip.route.is_empty() {
        return Err(Error::InvalidData(format!("trip {} has an empty route", trip.id)));
    }
    let segments = network.resolve(&trip.route)?;
    let mut road_type = Vec::with_capacity(segments.len());
    let mut lanes = Vec::with_capacity(segments.len());
    let mut oneway = Vec::with_capacity(segments.len());
    let mut road_cont = Vec::with_capacity(segments.len() * ROAD_CONT_DIM);
    for s in &segments {
        road_type.push(scalers.road_type_index(&s.road_type)?);
        lanes.push((s.lanes.clamp(1, LANE_BUCKETS as u32) - 1) as usize);
        oneway.push(s.oneway as usize);
        road_cont.extend(scalers.road.apply(&[s.max_speed_kmh, s.length_m]));
    }
    let segment_lengths_m: Vec<f64> = segments.iter().map(|s| s.length_m).collect();
    let route_len_km = segment_lengths_m.iter().sum::<f64>() / 1000.0;
    let n = segments.len();

    let (states, encodings, labels, stats) = match &trip.trajectory {
        Some(points) if !points.is_empty() => {
            let mut s = Vec::with_capacity(points.len() * VehicleState::DIM);
            for p in points {
                s.extend(scalers.state.apply(&p.state.to_array()));
            }
            let ps: Vec<f64> = points.iter().map(|p| p.p).collect();
            let ts: Vec<f64> = points.iter().map(|p| p.t).collect();
            let enc = encoding_matrix(&ps, &ts, settings.embed_dim, settings.dist_max_m, settings.time_max_s);
            let mut l = Vec::with_capacity(n * BEHAVIOR_DIM);
            for label in extract_road_labels(trip)? {
                l.extend(scalers.behavior.apply(&label.values));
            }
            (
                Some(Tensor::from_vec(points.len(), VehicleState::DIM, s)),
                Some(enc),
                Some(Tensor::from_vec(n, BEHAVIOR_DIM, l)),
                Some(trip_statistics(trip)?),
            )
        }
        _ => (None, None, None, None),
    };

    Ok(EncodedTrip {
        id: trip.id.clone(),
        departure_time: trip.departure_time,
        month: clock::month(trip.departure_time, scalers.utc_offset_s) as usize - 1,
        hour: clock::hour(trip.departure_time, scalers.utc_offset_s) as usize,
        vehicle: trip.vehicle_type.index(),
        route_len_km,
        road_type,
        lanes,
        oneway,
        road_cont: Tensor::from_vec(n, ROAD_CONT_DIM, road_cont),
        segment_lengths_m,
        states,
        encodings,
        labels,
        y: trip.y_total.map(|y| scalers.label.forward(y)),
        stats,
    })
}

/// Standardized `[route length, driver statistics]` for a target trip.
/// Returns the vector and whether the global fallback statistics were used.
pub fn trip_continuous(
    route_len_km: f64,
    driver_stats: Option<[f64; BEHAVIOR_DIM]>,
    scalers: &FeatureScalers,
) -> ([f64; TRIP_CONT_DIM], bool) {
    let stats = driver_stats.unwrap_or(scalers.global_stats);
    let raw = [route_len_km, stats[0], stats[1], stats[2], stats[3]];
    let z = scalers.trip.apply(&raw);
    ([z[0], z[1], z[2], z[3], z[4]], driver_stats.is_none())
}

/// Declares the embedding parameters.
pub fn add_embedding_params(layout: &mut crate::model::params::ParamLayout, d: usize, road_types: usize) {
    use crate::model::params::Init;
    layout.add("emb.month", 12, d, Init::Embedding);
    layout.add("emb.hour", 24, d, Init::Embedding);
    layout.add("emb.trip_cont_w", 1, TRIP_CONT_DIM * d, Init::Embedding);
    layout.add("emb.trip_cont_b", 1, TRIP_CONT_DIM * d, Init::Zeros);
    layout.add("emb.trip_proj_w", TRIP_PARTS * d, d, Init::Xavier);
    layout.add("emb.trip_proj_b", 1, d, Init::Zeros);
    layout.add("emb.road_type", road_types.max(1), d, Init::Embedding);
    layout.add("emb.lanes", LANE_BUCKETS, d, Init::Embedding);
    layout.add("emb.oneway", 2, d, Init::Embedding);
    layout.add("emb.road_cont_w", ROAD_CONT_DIM, d, Init::Xavier);
    layout.add("emb.road_b", 1, d, Init::Zeros);
    layout.add("emb.state_w", VehicleState::DIM, d, Init::Xavier);
    layout.add("emb.state_b", 1, d, Init::Zeros);
}

/// `x^s`: month and hour lookups plus one affine embedding per continuous
/// feature, concatenated and projected to `1 x d`.
pub fn embed_trip<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    d: usize,
    month: usize,
    hour: usize,
    cont: &[f64; TRIP_CONT_DIM],
) -> Var {
    let m = tape.gather(p.var("emb.month"), &[month]);
    let h = tape.gather(p.var("emb.hour"), &[hour]);
    let mut spread = Vec::with_capacity(TRIP_CONT_DIM * d);
    for &v in cont {
        spread.extend(std::iter::repeat(T::from_f64(v)).take(d));
    }
    let spread = tape.constant(Tensor::from_vec(1, TRIP_CONT_DIM * d, spread));
    let scaled = tape.mul(spread, p.var("emb.trip_cont_w"));
    let c = tape.add(scaled, p.var("emb.trip_cont_b"));
    let all = tape.concat_cols(&[m, h, c]);
    let proj = tape.matmul(all, p.var("emb.trip_proj_w"));
    tape.add(proj, p.var("emb.trip_proj_b"))
}

/// `x^e`: `n x d` road embeddings.
pub fn embed_roads<T: Real>(tape: &mut Tape<T>, p: &Bound, trip: &EncodedTrip) -> Var {
    let rt = tape.gather(p.var("emb.road_type"), &trip.road_type);
    let ln = tape.gather(p.var("emb.lanes"), &trip.lanes);
    let ow = tape.gather(p.var("emb.oneway"), &trip.oneway);
    let cont = tape.constant_f64(&trip.road_cont);
    let c = tape.matmul(cont, p.var("emb.road_cont_w"));
    let s = tape.add(rt, ln);
    let s = tape.add(s, ow);
    let s = tape.add(s, c);
    tape.add_row(s, p.var("emb.road_b"))
}

/// `x^l` with distance-time encodings attached: `m x d`.
pub fn embed_states<T: Real>(tape: &mut Tape<T>, p: &Bound, trip: &EncodedTrip) -> Option<Var> {
    let states = trip.states.as_ref()?;
    let enc = trip.encodings.as_ref()?;
    let s = tape.constant_f64(states);
    let e = tape.matmul(s, p.var("emb.state_w"));
    let e = tape.add_row(e, p.var("emb.state_b"));
    let pe = tape.constant_f64(enc);
    Some(tape.add(e, pe))
}

/// Embedded feature vectors of one trip.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    /// `x^s`, `1 x d`.
    pub trip_stat: Tensor<f64>,
    /// `x^e`, `n x d`.
    pub road_seq: Tensor<f64>,
    /// `x^l`, `m x d`, when the trip has a trajectory.
    pub state_seq: Option<Tensor<f64>>,
    /// `y^e`, `n x 4` standardized, when the trip has a trajectory.
    pub behavior_labels: Option<Tensor<f64>>,
    /// Raw driver statistics used in `x^s`.
    pub driver_stats: [f64; BEHAVIOR_DIM],
    /// True when the driver had no training trips and global means were used.
    pub stats_fallback: bool,
}
