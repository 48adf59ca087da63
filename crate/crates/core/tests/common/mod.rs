//! Small hand-built fixtures shared by the integration tests.
#![allow(dead_code)]

use vecest::evaluation::{prepare, Dataset};
use vecest::ingest::{ingest_records, LabelMode, RawLogRecord, VehicleParams};
use vecest::model::{Model, ModelConfig, PreparedDriver};
use vecest::types::{RoadNetwork, RoadSegment, Trip, VehicleType};

pub const DAY: i64 = 86_400;
/// 2018-03-05T00:00:00Z
pub const T0: i64 = 1_520_208_000;

pub fn segment(id: &str, road_type: &str, length_m: f64, lanes: u32, max_speed_kmh: f64) -> RoadSegment {
    RoadSegment {
        id: id.into(),
        length_m,
        lanes,
        max_speed_kmh,
        road_type: road_type.into(),
        oneway: lanes > 2,
        polyline: Some(vec![[42.0, -83.0], [42.001, -83.001]]),
    }
}

pub fn tiny_network() -> RoadNetwork {
    RoadNetwork::new(vec![
        segment("a", "residential", 300.0, 1, 40.0),
        segment("b", "arterial", 420.0, 2, 60.0),
        segment("c", "arterial", 380.0, 3, 60.0),
        segment("d", "highway", 650.0, 4, 100.0),
        segment("e", "residential", 250.0, 1, 30.0),
    ])
    .unwrap()
}

/// Six samples ten seconds apart, two on each of the three segments.
pub fn tiny_records(driver: &str, segs: [&str; 3], departure: i64, speed: f64, rate: f64) -> Vec<RawLogRecord> {
    let bumps = [0.0, 2.0, 4.5, 3.0, 5.0, 1.5];
    (0..6)
        .map(|i| RawLogRecord {
            driver_id: driver.into(),
            timestamp: (departure + 10 * i as i64) as f64,
            lat: 42.0,
            lon: -83.0,
            speed: speed + bumps[i],
            energy_rate: Some(rate * (1.0 + 0.15 * i as f64)),
            segment_id: Some(segs[i / 2].into()),
            vehicle_type: VehicleType::EV,
        })
        .collect()
}

pub fn tiny_trips(driver: &str, count: usize, seed: usize) -> Vec<Trip> {
    let routes = [["a", "b", "c"], ["b", "c", "d"], ["e", "a", "b"], ["c", "d", "e"], ["a", "b", "d"]];
    let mut records = Vec::new();
    for k in 0..count {
        let dep = T0 + (k as i64) * DAY + 3600 * (6 + ((k + seed) % 9) as i64);
        let speed = 6.0 + ((k * 7 + seed) % 5) as f64;
        let rate = 0.002 + 0.0005 * ((k + 2 * seed) % 3) as f64;
        records.extend(tiny_records(driver, routes[(k + seed) % routes.len()], dep, speed, rate));
    }
    ingest_records(records, LabelMode::Obd, &VehicleParams::default(), 0).unwrap()
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig { embed_dim: 4, top_k: 2, window: 2, heads: 2, mlp_hidden: 3, ..ModelConfig::default() }
}

pub fn tiny_dataset() -> Dataset {
    let mut trips = tiny_trips("u1", 6, 0);
    trips.extend(tiny_trips("u2", 5, 3));
    Dataset::from_trips(tiny_network(), trips, 1, 0)
}

pub fn tiny_model(config: &ModelConfig) -> (Dataset, Model, Vec<PreparedDriver>) {
    let data = tiny_dataset();
    let (model, prepared) = prepare(&data, config).unwrap();
    (data, model, prepared)
}

/// Relative error with an absolute floor for values near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
