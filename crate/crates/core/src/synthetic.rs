//! Synthetic driving logs with driver-specific energy use and per-road
//! behavior, for end-to-end experiments and tests.
//!
//! The network is a set of corridors whose segments run residential, then
//! arterial, then highway and back. Each driver favors two corridors and a
//! few departure hours, and has an energy coefficient, per-road-type speed
//! habits, a driving intensity for each period of the day, and a climate
//! control habit. Arterials congest at rush hour.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ingest::{ingest_records, LabelMode, RawLogRecord, VehicleParams};
use crate::types::{clock, RoadNetwork, RoadSegment, Trip, VehicleType};

/// 2018-01-01T00:00:00Z
const EPOCH_START: i64 = 1_514_764_800;
const ROAD_TYPES: [(&str, f64, u32); 3] = [("residential", 40.0, 1), ("arterial", 60.0, 2), ("highway", 100.0, 3)];
/// Road type index of each corridor position.
const CORRIDOR: [usize; 16] = [0, 0, 0, 1, 1, 1, 2, 2, 2, 2, 1, 1, 1, 0, 0, 0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub drivers: usize,
    pub corridors: usize,
    /// Fraction of drivers with few trips.
    pub long_tail_fraction: f64,
    pub trips_per_driver: (usize, usize),
    pub long_tail_trips: (usize, usize),
    pub min_route_segments: usize,
    pub max_route_segments: usize,
    pub sample_period_s: f64,
    /// Relative noise on the measured energy rate.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            drivers: 32,
            corridors: 6,
            long_tail_fraction: 0.3,
            trips_per_driver: (25, 40),
            long_tail_trips: (6, 13),
            min_route_segments: 3,
            max_route_segments: 10,
            sample_period_s: 10.0,
            noise: 0.03,
            seed: 0,
        }
    }
}

/// Hidden per-driver parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverProfile {
    pub driver_id: String,
    pub vehicle_type: VehicleType,
    pub energy_coefficient: f64,
    /// Fraction of the speed limit targeted on each road type.
    pub speed_factor: [f64; 3],
    /// Driving intensity for night, morning, midday, evening.
    pub intensity: [f64; 4],
    pub climate_factor: f64,
    pub corridors: Vec<usize>,
    pub hours: Vec<f64>,
    pub trips: usize,
}

pub struct SyntheticData {
    pub network: RoadNetwork,
    pub records: Vec<RawLogRecord>,
    pub profiles: Vec<DriverProfile>,
}

impl SyntheticData {
    /// Splits and labels the records from the measured energy channel.
    pub fn trips(&self) -> Result<Vec<Trip>> {
        ingest_records(self.records.clone(), LabelMode::Obd, &VehicleParams::default(), 0)
    }
}

fn segment_id(corridor: usize, pos: usize) -> String {
    format!("c{corridor}s{pos:02}")
}

fn build_network(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Result<RoadNetwork> {
    let mut segments = Vec::new();
    for c in 0..cfg.corridors {
        let (mut lat, mut lon) = (42.25 + 0.02 * c as f64, -83.75);
        for (pos, &ty) in CORRIDOR.iter().enumerate() {
            let (name, max_speed, lanes) = ROAD_TYPES[ty];
            let length_m = rng.gen_range(400.0..900.0);
            let (lat1, lon1) = (lat + 0.2 * length_m / 111_000.0, lon + length_m / 82_000.0);
            segments.push(RoadSegment {
                id: segment_id(c, pos),
                length_m,
                lanes: lanes + rng.gen_range(0..2),
                max_speed_kmh: max_speed,
                road_type: name.to_string(),
                oneway: ty == 2,
                polyline: Some(vec![[lat, lon], [lat1, lon1]]),
            });
            (lat, lon) = (lat1, lon1);
        }
    }
    RoadNetwork::new(segments)
}

fn profile(id: usize, cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> DriverProfile {
    let long_tail = (id as f64) < cfg.long_tail_fraction * cfg.drivers as f64;
    let range = if long_tail { cfg.long_tail_trips } else { cfg.trips_per_driver };
    let mut corridors: Vec<usize> = (0..cfg.corridors).collect();
    corridors.shuffle(rng);
    corridors.truncate(2.min(cfg.corridors));
    DriverProfile {
        driver_id: format!("driver{id:03}"),
        vehicle_type: VehicleType::ALL[rng.gen_range(0..VehicleType::ALL.len())],
        energy_coefficient: rng.gen_range(0.8..1.3),
        speed_factor: [rng.gen_range(0.7..1.05), rng.gen_range(0.7..1.05), rng.gen_range(0.75..1.1)],
        intensity: std::array::from_fn(|_| rng.gen_range(0.2..1.6)),
        climate_factor: rng.gen_range(0.3..1.7),
        corridors,
        hours: (0..2).map(|_| rng.gen_range(5.0..22.0)).collect(),
        trips: rng.gen_range(range.0..=range.1),
    }
}

fn period(hour: f64) -> usize {
    match hour {
        h if (6.0..10.0).contains(&h) => 1,
        h if (10.0..16.0).contains(&h) => 2,
        h if (16.0..20.0).contains(&h) => 3,
        _ => 0,
    }
}

fn rush_hour(hour: f64) -> bool {
    (7.0..9.5).contains(&hour) || (16.5..19.0).contains(&hour)
}

/// Auxiliary power (W) by month: heating in winter, cooling in summer.
fn climate_power(month: u32) -> f64 {
    match month {
        12 | 1 | 2 => 2500.0,
        3 | 11 => 1200.0,
        6..=8 => 1500.0,
        _ => 300.0,
    }
}

fn efficiency(t: VehicleType) -> f64 {
    match t {
        VehicleType::ICEV => 0.3,
        VehicleType::HEV => 0.42,
        VehicleType::PHEV => 0.55,
        VehicleType::EV => 0.85,
    }
}

struct TripPlan<'a> {
    driver: &'a DriverProfile,
    segments: Vec<&'a RoadSegment>,
    departure: i64,
}

fn simulate(plan: &TripPlan, cfg: &SyntheticConfig, params: &VehicleParams, rng: &mut ChaCha8Rng) -> Vec<RawLogRecord> {
    let d = plan.driver;
    let hour = clock::seconds_of_day(plan.departure, 0) as f64 / 3600.0;
    let intensity = d.intensity[period(hour)];
    let aux = 250.0 + d.climate_factor * climate_power(clock::month(plan.departure, 0));
    let ends: Vec<f64> = plan
        .segments
        .iter()
        .scan(0.0, |acc, s| {
            *acc += s.length_m;
            Some(*acc)
        })
        .collect();
    let total = *ends.last().expect("route has segments");
    let dt = cfg.sample_period_s;
    let (mut p, mut v, mut t) = (0.0f64, 0.0f64, 0.0f64);
    let mut seg = 0usize;
    let mut out = Vec::new();
    loop {
        while seg + 1 < ends.len() && p >= ends[seg] {
            seg += 1;
        }
        let s = plan.segments[seg];
        let ty = ROAD_TYPES.iter().position(|r| r.0 == s.road_type).unwrap_or(0);
        let mut target = s.max_speed_kmh / 3.6 * d.speed_factor[ty];
        let mut jitter = 0.4 + 0.8 * intensity;
        if ty == 1 && rush_hour(hour) {
            target *= 0.45;
            jitter *= 1.8;
        }
        let a = (0.25 * (1.0 + intensity) * (target - v) + jitter * rng.gen_range(-1.0..1.0)).clamp(-3.0, 2.5);
        let v_next = (v + a * dt).clamp(0.0, target.max(2.0) * 1.15);
        let a_eff = (v_next - v) / dt;
        let traction = params.traction_power(v, a_eff).max(0.0) / efficiency(d.vehicle_type);
        let rate = d.energy_coefficient * (traction + aux) / params.joules_per_unit;
        let rate = rate * (1.0 + cfg.noise * rng.gen_range(-1.0..1.0));
        let frac = if seg == 0 { p / ends[0] } else { (p - ends[seg - 1]) / s.length_m };
        let poly = s.polyline.as_ref().expect("synthetic segments have geometry");
        let frac = frac.clamp(0.0, 1.0);
        out.push(RawLogRecord {
            driver_id: d.driver_id.clone(),
            timestamp: plan.departure as f64 + t,
            lat: poly[0][0] + frac * (poly[1][0] - poly[0][0]),
            lon: poly[0][1] + frac * (poly[1][1] - poly[0][1]),
            speed: v,
            energy_rate: Some(rate),
            segment_id: Some(s.id.clone()),
            vehicle_type: d.vehicle_type,
        });
        if p >= total {
            break;
        }
        p += 0.5 * (v + v_next) * dt;
        v = v_next;
        t += dt;
    }
    out
}

/// Generates the network, hidden driver profiles, and raw log records.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let network = build_network(cfg, &mut rng)?;
    let params = VehicleParams::default();
    let profiles: Vec<DriverProfile> = (0..cfg.drivers).map(|i| profile(i, cfg, &mut rng)).collect();
    let mut records = Vec::new();
    for d in &profiles {
        let mut days: Vec<i64> = (0..365).collect();
        days.shuffle(&mut rng);
        for &day in days.iter().take(d.trips) {
            let corridor = d.corridors[rng.gen_range(0..d.corridors.len())];
            let len = rng.gen_range(cfg.min_route_segments..=cfg.max_route_segments.min(CORRIDOR.len()));
            let start = rng.gen_range(0..=CORRIDOR.len() - len);
            let mut positions: Vec<usize> = (start..start + len).collect();
            if rng.gen_bool(0.5) {
                positions.reverse();
            }
            let segments = positions
                .iter()
                .map(|&pos| network.get(&segment_id(corridor, pos)).expect("generated segment exists"))
                .collect();
            let hour = (d.hours[rng.gen_range(0..d.hours.len())] + rng.gen_range(-1.0..1.0)).clamp(0.0, 23.5);
            let departure = EPOCH_START + day * 86_400 + (hour * 3600.0) as i64;
            records.extend(simulate(&TripPlan { driver: d, segments, departure }, cfg, &params, &mut rng));
        }
    }
    Ok(SyntheticData { network, records, profiles })
}
