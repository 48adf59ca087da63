//! Raw GPS/OBD logs to labeled trips.

use std::io::{BufRead, Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    clock, DriverHistory, Route, SegmentId, TrajectoryPoint, Trip, VehicleState, VehicleType, BEHAVIOR_DIM,
};

/// A stop longer than this (seconds) ends a trip.
pub const TRIP_GAP_S: f64 = 300.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawLogRecord {
    pub driver_id: String,
    /// Epoch seconds (fractional allowed).
    pub timestamp: f64,
    pub lat: f64,
    pub lon: f64,
    /// m/s
    pub speed: f64,
    /// Dataset energy units per second.
    pub energy_rate: Option<f64>,
    pub segment_id: Option<SegmentId>,
    pub vehicle_type: VehicleType,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub mass_kg: f64,
    pub drag_coefficient: f64,
    pub frontal_area_m2: f64,
    pub rolling_resistance: f64,
    pub air_density: f64,
    pub gravity: f64,
    /// Joules per dataset energy unit (3.6e6 gives kWh).
    pub joules_per_unit: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass_kg: 1500.0,
            drag_coefficient: 0.3,
            frontal_area_m2: 2.2,
            rolling_resistance: 0.01,
            air_density: 1.2,
            gravity: 9.81,
            joules_per_unit: 3.6e6,
        }
    }
}

impl VehicleParams {
    pub fn check(&self) -> Result<()> {
        let all = [
            self.mass_kg,
            self.drag_coefficient,
            self.frontal_area_m2,
            self.rolling_resistance,
            self.air_density,
            self.gravity,
            self.joules_per_unit,
        ];
        if all.iter().all(|v| *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidData("vehicle parameters must all be strictly positive".into()))
        }
    }

    /// Traction power (W) at speed `v` and acceleration `a` on a flat road.
    pub fn traction_power(&self, v: f64, a: f64) -> f64 {
        let force = self.mass_kg * a
            + 0.5 * self.air_density * self.drag_coefficient * self.frontal_area_m2 * v * v
            + self.mass_kg * self.gravity * self.rolling_resistance;
        force * v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Obd,
    Mechanical,
}

impl std::str::FromStr for LabelMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "obd" => Ok(LabelMode::Obd),
            "mechanical" => Ok(LabelMode::Mechanical),
            other => Err(Error::Config(format!("unknown label mode {other:?}"))),
        }
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    driver_id: String,
    timestamp: String,
    lat: f64,
    lon: f64,
    speed: f64,
    #[serde(default)]
    energy_rate: Option<String>,
    #[serde(default)]
    segment_id: Option<String>,
    vehicle_type: String,
}

fn non_empty(s: Option<String>) -> Option<String> {
    s.map(|v| v.trim().to_string()).filter(|v| !v.is_empty())
}

/// Parses the raw log CSV. Timestamps may be epoch seconds (integer or
/// fractional) or ISO-8601 local times in `utc_offset_s`.
pub fn read_csv<R: Read>(reader: R, utc_offset_s: i32) -> Result<Vec<RawLogRecord>> {
    const COLUMNS: [&str; 8] =
        ["driver_id", "timestamp", "lat", "lon", "speed", "energy_rate", "segment_id", "vehicle_type"];
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != COLUMNS {
        return Err(Error::InvalidData(format!("expected CSV columns {COLUMNS:?}, found {names:?}")));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = row?;
        let timestamp = row
            .timestamp
            .parse::<f64>()
            .ok()
            .or_else(|| clock::parse(&row.timestamp, utc_offset_s).map(|t| t as f64))
            .ok_or_else(|| Error::InvalidData(format!("row {}: bad timestamp {:?}", line + 2, row.timestamp)))?;
        let energy_rate = match non_empty(row.energy_rate) {
            Some(v) => Some(
                v.parse::<f64>()
                    .map_err(|_| Error::InvalidData(format!("row {}: bad energy_rate {v:?}", line + 2)))?,
            ),
            None => None,
        };
        out.push(RawLogRecord {
            driver_id: row.driver_id,
            timestamp,
            lat: row.lat,
            lon: row.lon,
            speed: row.speed,
            energy_rate,
            segment_id: non_empty(row.segment_id),
            vehicle_type: row.vehicle_type.parse()?,
        });
    }
    Ok(out)
}

/// Writes records in the format [`read_csv`] accepts, timestamps as epoch
/// seconds.
pub fn write_csv<W: Write>(w: W, records: &[RawLogRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["driver_id", "timestamp", "lat", "lon", "speed", "energy_rate", "segment_id", "vehicle_type"])?;
    for r in records {
        out.write_record([
            r.driver_id.clone(),
            r.timestamp.to_string(),
            r.lat.to_string(),
            r.lon.to_string(),
            r.speed.to_string(),
            r.energy_rate.map(|v| v.to_string()).unwrap_or_default(),
            r.segment_id.clone().unwrap_or_default(),
            r.vehicle_type.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Splits a timestamp-sorted stream into trips at stops longer than
/// [`TRIP_GAP_S`] (and at driver changes). Each trip is re-based so its
/// first point has `p = 0`, `t = 0`; `p` integrates speed with the
/// trapezoidal rule. Energy fields are left at zero until
/// [`label_energy`] runs. Records sharing a timestamp with their
/// predecessor are dropped.
pub fn split_trips(stream: &[RawLogRecord], utc_offset_s: i32) -> Result<Vec<Trip>> {
    for (i, w) in stream.windows(2).enumerate() {
        if w[0].driver_id == w[1].driver_id && w[1].timestamp < w[0].timestamp {
            return Err(Error::Unsorted { position: i + 1 });
        }
    }
    let mut trips = Vec::new();
    let mut current: Vec<&RawLogRecord> = Vec::new();
    for rec in stream {
        if let Some(prev) = current.last() {
            let same_driver = prev.driver_id == rec.driver_id;
            if same_driver && rec.timestamp == prev.timestamp {
                continue;
            }
            if !same_driver || rec.timestamp - prev.timestamp > TRIP_GAP_S {
                trips.extend(build_trip(&current, utc_offset_s));
                current.clear();
            }
        }
        current.push(rec);
    }
    trips.extend(build_trip(&current, utc_offset_s));
    Ok(trips)
}

fn build_trip(records: &[&RawLogRecord], utc_offset_s: i32) -> Option<Trip> {
    if records.len() < 2 {
        return None;
    }
    let t0 = records[0].timestamp;
    let departure = t0.floor() as i64;
    let mut points = Vec::with_capacity(records.len());
    let mut p = 0.0;
    for (j, rec) in records.iter().enumerate() {
        let t = rec.timestamp - t0;
        let accel = if j == 0 {
            0.0
        } else {
            let prev = records[j - 1];
            let dt = rec.timestamp - prev.timestamp;
            p += 0.5 * (prev.speed + rec.speed) * dt;
            (rec.speed - prev.speed) / dt
        };
        let tod = (clock::seconds_of_day(departure, utc_offset_s) as f64 + (rec.timestamp - departure as f64)) / 3600.0;
        points.push(TrajectoryPoint {
            p,
            t,
            state: VehicleState { time_of_day_h: tod.rem_euclid(24.0), speed: rec.speed, accel, ..Default::default() },
            y_cum: 0.0,
            segment_id: rec.segment_id.clone(),
        });
    }
    let mut segments: Vec<SegmentId> = Vec::new();
    for rec in records {
        if let Some(id) = &rec.segment_id {
            if segments.last() != Some(id) {
                segments.push(id.clone());
            }
        }
    }
    // Measured rates ride in the energy-per-hour slot until labeling.
    for (pt, rec) in points.iter_mut().zip(records) {
        pt.state.energy_per_hour = rec.energy_rate.map_or(f64::NAN, |r| r * 3600.0);
    }
    let trip = Trip {
        id: format!("{}-{}", records[0].driver_id, departure),
        driver_id: records[0].driver_id.clone(),
        vehicle_type: records[0].vehicle_type,
        departure_time: departure,
        route: Route::new(segments),
        trajectory: Some(points),
        y_total: None,
    };
    Some(trip)
}

/// Fills cumulative energy labels.
///
/// `Obd` integrates the measured rate (trapezoidal rule over each
/// interval). `Mechanical` integrates traction power with the interval's
/// constant acceleration, clamping negative interval energy to zero.
/// Afterwards every point's energy-per-hour and energy-per-km state is
/// derived from the interval ending at it.
pub fn label_energy(trip: &Trip, mode: LabelMode, params: &VehicleParams) -> Result<Trip> {
    params.check()?;
    let mut out = trip.clone();
    let points = out.trajectory.as_mut().ok_or(Error::NoTrajectory)?;
    if points.is_empty() {
        return Err(Error::InvalidData("empty trajectory".into()));
    }
    let n = points.len();
    let mut interval = vec![0.0; n];
    match mode {
        LabelMode::Obd => {
            let rates: Vec<f64> = points.iter().map(|p| p.state.energy_per_hour / 3600.0).collect();
            if let Some(index) = rates.iter().position(|r| !r.is_finite()) {
                return Err(Error::MissingChannel { channel: "energy_rate", index });
            }
            for j in 1..n {
                let dt = points[j].t - points[j - 1].t;
                interval[j] = 0.5 * (rates[j - 1] + rates[j]) * dt;
            }
        }
        LabelMode::Mechanical => {
            if let Some(index) = points.iter().position(|p| !p.state.speed.is_finite()) {
                return Err(Error::MissingChannel { channel: "speed", index });
            }
            for j in 1..n {
                interval[j] = mechanical_interval_energy(points[j - 1].state.speed, points[j].state.speed, points[j].t - points[j - 1].t, params);
            }
        }
    }
    let mut y = 0.0;
    for j in 0..n {
        y += interval[j];
        points[j].y_cum = y;
        if j > 0 {
            let dt = points[j].t - points[j - 1].t;
            let dp = points[j].p - points[j - 1].p;
            points[j].state.energy_per_hour = if dt > 0.0 { interval[j] / dt * 3600.0 } else { 0.0 };
            points[j].state.energy_per_km = if dp > 0.0 { interval[j] / dp * 1000.0 } else { 0.0 };
        }
    }
    if n > 1 {
        points[0].state.energy_per_hour = points[1].state.energy_per_hour;
        points[0].state.energy_per_km = points[1].state.energy_per_km;
    } else {
        points[0].state.energy_per_hour = 0.0;
        points[0].state.energy_per_km = 0.0;
    }
    out.y_total = Some(y);
    Ok(out)
}

/// Energy of one interval from speed `v0` to `v1` over `dt` seconds, in
/// dataset units.
pub fn mechanical_interval_energy(v0: f64, v1: f64, dt: f64, params: &VehicleParams) -> f64 {
    if dt <= 0.0 {
        return 0.0;
    }
    let a = (v1 - v0) / dt;
    let joules = 0.5 * (params.traction_power(v0, a) + params.traction_power(v1, a)) * dt;
    joules.max(0.0) / params.joules_per_unit
}

/// Per-road behavior label of one route position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadLabel {
    pub segment_id: SegmentId,
    /// `[mean speed, mean acceleration, energy per hour, energy per km]`
    pub values: [f64; BEHAVIOR_DIM],
    /// Energy attributed to this segment from point assignment.
    pub energy: f64,
    pub imputed: bool,
}

/// Trip-level `[mean speed, mean acceleration, energy per hour, energy per km]`.
pub fn trip_statistics(trip: &Trip) -> Result<[f64; BEHAVIOR_DIM]> {
    let points = trip.trajectory.as_ref().ok_or(Error::NoTrajectory)?;
    if points.is_empty() {
        return Err(Error::InvalidData("empty trajectory".into()));
    }
    let n = points.len() as f64;
    let speed = points.iter().map(|p| p.state.speed).sum::<f64>() / n;
    let accel = points.iter().map(|p| p.state.accel).sum::<f64>() / n;
    let last = points.last().unwrap();
    let energy = trip.y_total.unwrap_or(last.y_cum);
    let eph = if last.t > 0.0 { energy / last.t * 3600.0 } else { 0.0 };
    let epkm = if last.p > 0.0 { energy / last.p * 1000.0 } else { 0.0 };
    Ok([speed, accel, eph, epkm])
}

/// Ground-truth behavior statistics for each route position.
///
/// The interval ending at point `j` is attributed to the route position of
/// point `j`'s matched segment (unmatched points inherit the previous
/// assignment). Positions advance along the route as the matched segment
/// changes, so a revisited segment gets one label per visit. Positions
/// that receive no points get the trip-level statistics and are flagged
/// as imputed.
pub fn extract_road_labels(trip: &Trip) -> Result<Vec<RoadLabel>> {
    let points = trip.trajectory.as_ref().ok_or(Error::NoTrajectory)?;
    let trip_level = trip_statistics(trip)?;

    #[derive(Default)]
    struct Acc {
        count: usize,
        speed: f64,
        accel: f64,
        energy: f64,
        dt: f64,
        dp: f64,
    }
    let route = &trip.route.segments;
    let mut acc: Vec<Acc> = route.iter().map(|_| Acc::default()).collect();
    let mut pos = 0;
    for (j, pt) in points.iter().enumerate() {
        if let Some(id) = pt.segment_id.as_deref() {
            if route.get(pos).map(|s| s.as_str()) != Some(id) {
                if let Some(k) = route.iter().skip(pos + 1).position(|s| s == id) {
                    pos += k + 1;
                }
            }
        }
        let Some(a) = acc.get_mut(pos) else { continue };
        a.count += 1;
        a.speed += pt.state.speed;
        a.accel += pt.state.accel;
        if j > 0 {
            a.energy += pt.y_cum - points[j - 1].y_cum;
            a.dt += pt.t - points[j - 1].t;
            a.dp += pt.p - points[j - 1].p;
        }
    }
    Ok(route
        .iter()
        .zip(acc)
        .map(|(id, a)| {
            if a.count == 0 {
                return RoadLabel { segment_id: id.clone(), values: trip_level, energy: 0.0, imputed: true };
            }
            let n = a.count as f64;
            let eph = if a.dt > 0.0 { a.energy / a.dt * 3600.0 } else { 0.0 };
            let epkm = if a.dp > 0.0 { a.energy / a.dp * 1000.0 } else { 0.0 };
            RoadLabel { segment_id: id.clone(), values: [a.speed / n, a.accel / n, eph, epkm], energy: a.energy, imputed: false }
        })
        .collect())
}

fn driver_seed(seed: u64, driver_id: &str) -> u64 {
    // FNV-1a keeps per-driver streams independent of iteration order.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in driver_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Per-driver random split: 10% validation, 20% test (both floored), the
/// rest train; support is 10% of train (at least one trip), query the rest.
pub fn make_splits(history: &DriverHistory, seed: u64) -> DriverHistory {
    let m = history.trips.len();
    let mut idx: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(driver_seed(seed, &history.driver_id));
    idx.shuffle(&mut rng);
    let n_val = m / 10;
    let n_test = m / 5;
    let mut val = idx[..n_val].to_vec();
    let mut test = idx[n_val..n_val + n_test].to_vec();
    let train_shuffled = &idx[n_val + n_test..];
    let n_support = if train_shuffled.is_empty() { 0 } else { (train_shuffled.len() / 10).max(1) };
    let mut support = train_shuffled[..n_support].to_vec();
    let mut query = train_shuffled[n_support..].to_vec();
    let mut train = train_shuffled.to_vec();
    for v in [&mut val, &mut test, &mut support, &mut query, &mut train] {
        v.sort_unstable();
    }
    let mut out = history.clone();
    out.splits = crate::types::Splits { train, val, test, support, query };
    out
}

/// Groups raw records by driver, sorts each stream by time, splits and
/// labels every trip.
pub fn ingest_records(
    mut records: Vec<RawLogRecord>,
    mode: LabelMode,
    params: &VehicleParams,
    utc_offset_s: i32,
) -> Result<Vec<Trip>> {
    records.sort_by(|a, b| a.driver_id.cmp(&b.driver_id).then(a.timestamp.total_cmp(&b.timestamp)));
    split_trips(&records, utc_offset_s)?.iter().map(|t| label_energy(t, mode, params)).collect()
}

pub fn write_jsonl<W: Write>(mut w: W, trips: &[Trip]) -> Result<()> {
    for t in trips {
        writeln!(w, "{}", t.to_json_line()?)?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Trip>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
