//! Historical trip selection by route overlap and departure-time proximity.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::{clock, DriverHistory, Trip};

const DAY_S: i64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSimilarityMode {
    /// Seconds between local times of day, wrapping at midnight.
    #[default]
    TimeOfDay,
    /// Seconds between absolute departure timestamps.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimilarityScore {
    /// Number of distinct segments shared with the target route.
    pub route_overlap: usize,
    /// Departure time distance, seconds.
    pub time_distance: i64,
    /// `norm(route_overlap) - norm(time_distance)` over the candidate pool.
    pub combined: f64,
}

/// Departure-time distance between two trips under `mode`.
pub fn time_distance(a: i64, b: i64, mode: TimeSimilarityMode, utc_offset_s: i32) -> i64 {
    match mode {
        TimeSimilarityMode::Absolute => (a - b).abs(),
        TimeSimilarityMode::TimeOfDay => {
            let d = (clock::seconds_of_day(a, utc_offset_s) - clock::seconds_of_day(b, utc_offset_s)).abs();
            d.min(DAY_S - d)
        }
    }
}

/// Scores every candidate against `target`. Min-max normalization runs over
/// the candidate pool; a criterion on which all candidates tie contributes 0.
pub fn score_candidates(
    target: &Trip,
    candidates: &[&Trip],
    mode: TimeSimilarityMode,
    utc_offset_s: i32,
) -> Vec<SimilarityScore> {
    let raw = raw_scores(target, candidates, mode, utc_offset_s);
    let Some(bounds) = Bounds::of(&raw) else { return Vec::new() };
    raw.iter()
        .map(|&(overlap, dist)| {
            let r = if bounds.route_span > 0 {
                (overlap - bounds.route_min) as f64 / bounds.route_span as f64
            } else {
                0.0
            };
            let t = if bounds.time_span > 0 { (dist - bounds.time_min) as f64 / bounds.time_span as f64 } else { 0.0 };
            SimilarityScore { route_overlap: overlap as usize, time_distance: dist, combined: r - t }
        })
        .collect()
}

fn raw_scores(target: &Trip, candidates: &[&Trip], mode: TimeSimilarityMode, utc_offset_s: i32) -> Vec<(i64, i64)> {
    let target_set: HashSet<&str> = target.route.segments.iter().map(|s| s.as_str()).collect();
    candidates
        .iter()
        .map(|c| {
            let cand_set: HashSet<&str> = c.route.segments.iter().map(|s| s.as_str()).collect();
            let overlap = cand_set.intersection(&target_set).count() as i64;
            (overlap, time_distance(target.departure_time, c.departure_time, mode, utc_offset_s))
        })
        .collect()
}

struct Bounds {
    route_min: i64,
    route_span: i64,
    time_min: i64,
    time_span: i64,
}

impl Bounds {
    fn of(raw: &[(i64, i64)]) -> Option<Self> {
        let route_min = raw.iter().map(|r| r.0).min()?;
        let route_max = raw.iter().map(|r| r.0).max()?;
        let time_min = raw.iter().map(|r| r.1).min()?;
        let time_max = raw.iter().map(|r| r.1).max()?;
        Some(Self { route_min, route_span: route_max - route_min, time_min, time_span: time_max - time_min })
    }

    /// Combined score scaled by the (shared, positive) common denominator,
    /// so candidates compare exactly in integer arithmetic.
    fn numerator(&self, overlap: i64, dist: i64) -> i128 {
        let route_den = self.route_span.max(1) as i128;
        let time_den = self.time_span.max(1) as i128;
        let r = if self.route_span > 0 { (overlap - self.route_min) as i128 * time_den } else { 0 };
        let t = if self.time_span > 0 { (dist - self.time_min) as i128 * route_den } else { 0 };
        r - t
    }
}

/// Indices into `candidates` of the up-to-`k` highest scoring trips, best
/// first. Ties break by earlier departure, then by trip id.
pub fn rank_candidates(
    target: &Trip,
    candidates: &[&Trip],
    k: usize,
    mode: TimeSimilarityMode,
    utc_offset_s: i32,
) -> Vec<usize> {
    let raw = raw_scores(target, candidates, mode, utc_offset_s);
    let Some(bounds) = Bounds::of(&raw) else { return Vec::new() };
    let keys: Vec<i128> = raw.iter().map(|&(o, d)| bounds.numerator(o, d)).collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        keys[b]
            .cmp(&keys[a])
            .then_with(|| candidates[a].departure_time.cmp(&candidates[b].departure_time))
            .then_with(|| candidates[a].id.cmp(&candidates[b].id))
    });
    order.truncate(k);
    order
}

/// Top-`k` trips from the driver's training split (excluding the target
/// itself, matched by id).
pub fn select_top_k<'a>(
    target: &Trip,
    history: &'a DriverHistory,
    k: usize,
    mode: TimeSimilarityMode,
    utc_offset_s: i32,
) -> Vec<&'a Trip> {
    let pool: Vec<&Trip> = history.train_trips().filter(|t| t.id != target.id).collect();
    rank_candidates(target, &pool, k, mode, utc_offset_s).into_iter().map(|i| pool[i]).collect()
}

/// Uniform random choice of up to `k` candidates, seeded per target trip.
pub fn select_random(target: &Trip, candidate_count: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut h: u64 = seed ^ 0x5851_f42d_4c95_7f2d;
    for b in target.id.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    let mut idx: Vec<usize> = (0..candidate_count).collect();
    idx.shuffle(&mut rng);
    idx.truncate(k);
    idx
}
