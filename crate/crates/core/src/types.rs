//! Domain types shared by every stage of the pipeline.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// Number of per-road behavior statistics: speed, acceleration,
/// energy per hour, energy per km.
pub const BEHAVIOR_DIM: usize = 4;

pub type SegmentId = String;

/// Accepts ids written either as JSON strings or numbers.
pub(crate) fn id_from_any<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum AnyId {
        S(String),
        I(i64),
        F(f64),
    }
    Ok(match AnyId::deserialize(de)? {
        AnyId::S(s) => s,
        AnyId::I(i) => i.to_string(),
        AnyId::F(f) => f.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSegment {
    #[serde(deserialize_with = "id_from_any")]
    pub id: SegmentId,
    pub length_m: f64,
    pub lanes: u32,
    pub max_speed_kmh: f64,
    #[serde(deserialize_with = "id_from_any")]
    pub road_type: String,
    pub oneway: bool,
    /// `[lat, lon]` pairs, carried for map rendering only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polyline: Option<Vec<[f64; 2]>>,
}

impl RoadSegment {
    pub fn check(&self) -> Result<()> {
        if !(self.length_m > 0.0) {
            return Err(Error::InvalidData(format!("segment {}: length must be > 0", self.id)));
        }
        if self.lanes < 1 {
            return Err(Error::InvalidData(format!("segment {}: lanes must be >= 1", self.id)));
        }
        if !(self.max_speed_kmh > 0.0) {
            return Err(Error::InvalidData(format!("segment {}: max_speed must be > 0", self.id)));
        }
        Ok(())
    }
}

/// Road segments addressable by id.
#[derive(Debug, Clone, Default)]
pub struct RoadNetwork {
    segments: Vec<RoadSegment>,
    index: HashMap<SegmentId, usize>,
}

impl RoadNetwork {
    pub fn new(segments: Vec<RoadSegment>) -> Result<Self> {
        let mut index = HashMap::with_capacity(segments.len());
        for (i, s) in segments.iter().enumerate() {
            s.check()?;
            if index.insert(s.id.clone(), i).is_some() {
                return Err(Error::InvalidData(format!("duplicate segment id {:?}", s.id)));
            }
        }
        Ok(Self { segments, index })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.segments)?)
    }

    pub fn get(&self, id: &str) -> Option<&RoadSegment> {
        self.index.get(id).map(|&i| &self.segments[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn segments(&self) -> &[RoadSegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Sorted distinct road type codes.
    pub fn road_types(&self) -> Vec<String> {
        let mut types: Vec<String> = self.segments.iter().map(|s| s.road_type.clone()).collect();
        types.sort();
        types.dedup();
        types
    }

    /// Total length of `route` in meters.
    pub fn route_length_m(&self, route: &Route) -> Result<f64> {
        route
            .segments
            .iter()
            .map(|id| self.get(id).map(|s| s.length_m).ok_or_else(|| Error::UnknownSegment(id.clone())))
            .sum()
    }

    pub fn resolve(&self, route: &Route) -> Result<Vec<&RoadSegment>> {
        route.segments.iter().map(|id| self.get(id).ok_or_else(|| Error::UnknownSegment(id.clone()))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Route {
    pub segments: Vec<SegmentId>,
}

impl Route {
    pub fn new(segments: Vec<SegmentId>) -> Self {
        Self { segments }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[allow(clippy::upper_case_acronyms)]
pub enum VehicleType {
    ICEV,
    HEV,
    PHEV,
    EV,
}

impl VehicleType {
    pub const ALL: [VehicleType; 4] = [VehicleType::ICEV, VehicleType::HEV, VehicleType::PHEV, VehicleType::EV];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for VehicleType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for VehicleType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ICEV" | "ICE" => Ok(VehicleType::ICEV),
            "HEV" => Ok(VehicleType::HEV),
            "PHEV" => Ok(VehicleType::PHEV),
            "EV" | "BEV" => Ok(VehicleType::EV),
            _ => Err(Error::UnknownVehicleType(s.to_string())),
        }
    }
}

/// Instantaneous vehicle state at one trajectory point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Local time of day in hours, `[0, 24)`.
    pub time_of_day_h: f64,
    /// m/s
    pub speed: f64,
    /// m/s²
    pub accel: f64,
    pub energy_per_hour: f64,
    pub energy_per_km: f64,
}

impl VehicleState {
    pub const DIM: usize = 5;

    pub fn to_array(&self) -> [f64; Self::DIM] {
        [self.time_of_day_h, self.speed, self.accel, self.energy_per_hour, self.energy_per_km]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    /// Cumulative distance from the origin, meters.
    pub p: f64,
    /// Seconds since departure.
    pub t: f64,
    pub state: VehicleState,
    /// Cumulative energy from the origin.
    pub y_cum: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_id: Option<SegmentId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub id: String,
    pub driver_id: String,
    pub vehicle_type: VehicleType,
    /// Epoch seconds.
    pub departure_time: i64,
    pub route: Route,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<TrajectoryPoint>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_total: Option<f64>,
}

impl Trip {
    /// Travelled distance (last `p`) in meters, when a trajectory exists.
    pub fn distance_m(&self) -> Option<f64> {
        self.trajectory.as_ref().and_then(|t| t.last()).map(|p| p.p)
    }

    pub fn duration_s(&self) -> Option<f64> {
        self.trajectory.as_ref().and_then(|t| t.last()).map(|p| p.t)
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Index sets into [`DriverHistory::trips`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub support: Vec<usize>,
    pub query: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverHistory {
    pub driver_id: String,
    pub trips: Vec<Trip>,
    #[serde(default)]
    pub splits: Splits,
}

impl DriverHistory {
    pub fn new(driver_id: impl Into<String>, trips: Vec<Trip>) -> Self {
        Self { driver_id: driver_id.into(), trips, splits: Splits::default() }
    }

    pub fn train_trips(&self) -> impl Iterator<Item = &Trip> {
        self.splits.train.iter().map(move |&i| &self.trips[i])
    }

    /// Checks split disjointness and `support ∪ query = train`.
    pub fn check_splits(&self) -> Result<()> {
        let s = &self.splits;
        let mut seen = vec![0u8; self.trips.len()];
        for &i in s.train.iter().chain(&s.val).chain(&s.test) {
            let slot = seen.get_mut(i).ok_or_else(|| Error::InvalidData(format!("split index {i} out of range")))?;
            *slot += 1;
            if *slot > 1 {
                return Err(Error::InvalidData(format!("trip index {i} appears in more than one split")));
            }
        }
        let mut sq: Vec<usize> = s.support.iter().chain(&s.query).copied().collect();
        sq.sort_unstable();
        let mut train = s.train.clone();
        train.sort_unstable();
        if sq != train {
            return Err(Error::InvalidData("support and query must partition train".into()));
        }
        Ok(())
    }
}

/// Groups trips by driver id, sorted by driver id then departure time.
pub fn group_by_driver(trips: Vec<Trip>) -> Vec<DriverHistory> {
    let mut map: std::collections::BTreeMap<String, Vec<Trip>> = Default::default();
    for t in trips {
        map.entry(t.driver_id.clone()).or_default().push(t);
    }
    map.into_iter()
        .map(|(id, mut trips)| {
            trips.sort_by(|a, b| a.departure_time.cmp(&b.departure_time).then_with(|| a.id.cmp(&b.id)));
            DriverHistory::new(id, trips)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyRoute,
    UnresolvedSegment { id: SegmentId },
    NotMonotonic { field: &'static str, index: usize },
    NegativeValue { field: &'static str, index: usize },
    OriginNotZero,
    LabelMismatch { y_total: f64, last_y_cum: f64 },
    MissingLabel,
}

/// Every invariant violation of `trip`; empty when the trip is valid.
pub fn validate_trip(trip: &Trip, network: &RoadNetwork) -> Vec<Violation> {
    let mut out = Vec::new();
    if trip.route.is_empty() {
        out.push(Violation::EmptyRoute);
    }
    for id in &trip.route.segments {
        if !network.contains(id) {
            out.push(Violation::UnresolvedSegment { id: id.clone() });
        }
    }
    let Some(points) = &trip.trajectory else {
        return out;
    };
    if let Some(first) = points.first() {
        if first.p != 0.0 || first.t != 0.0 || first.y_cum != 0.0 {
            out.push(Violation::OriginNotZero);
        }
    }
    for (i, pt) in points.iter().enumerate() {
        if pt.p < 0.0 {
            out.push(Violation::NegativeValue { field: "p", index: i });
        }
        if pt.t < 0.0 {
            out.push(Violation::NegativeValue { field: "t", index: i });
        }
        if let Some(id) = &pt.segment_id {
            if !network.contains(id) {
                out.push(Violation::UnresolvedSegment { id: id.clone() });
            }
        }
    }
    for (i, w) in points.windows(2).enumerate() {
        if w[1].p < w[0].p {
            out.push(Violation::NotMonotonic { field: "p", index: i + 1 });
        }
        if w[1].t < w[0].t {
            out.push(Violation::NotMonotonic { field: "t", index: i + 1 });
        }
    }
    match (trip.y_total, points.last()) {
        (Some(y), Some(last)) if (y - last.y_cum).abs() > 1e-9 * y.abs().max(1.0) => {
            out.push(Violation::LabelMismatch { y_total: y, last_y_cum: last.y_cum });
        }
        (None, Some(_)) => out.push(Violation::MissingLabel),
        _ => {}
    }
    out
}

/// Local time helpers; the offset is a fixed number of seconds east of UTC.
pub mod clock {
    use chrono::{DateTime, Datelike, FixedOffset, NaiveDateTime, TimeZone};

    fn local(ts: i64, offset_s: i32) -> DateTime<FixedOffset> {
        let tz = FixedOffset::east_opt(offset_s).unwrap_or_else(|| FixedOffset::east_opt(0).unwrap());
        tz.timestamp_opt(ts, 0).single().unwrap_or_else(|| tz.timestamp_opt(0, 0).unwrap())
    }

    /// Seconds since local midnight.
    pub fn seconds_of_day(ts: i64, offset_s: i32) -> i64 {
        (ts + offset_s as i64).rem_euclid(86_400)
    }

    pub fn hour(ts: i64, offset_s: i32) -> u32 {
        (seconds_of_day(ts, offset_s) / 3600) as u32
    }

    /// Month 1..=12.
    pub fn month(ts: i64, offset_s: i32) -> u32 {
        local(ts, offset_s).month()
    }

    /// Parses `YYYY-MM-DDTHH:MM[:SS]`, RFC 3339, or integer epoch seconds.
    /// Naive times are interpreted in the given offset.
    pub fn parse(text: &str, offset_s: i32) -> Option<i64> {
        let text = text.trim();
        if let Ok(v) = text.parse::<i64>() {
            return Some(v);
        }
        if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
            return Some(dt.timestamp());
        }
        for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"] {
            if let Ok(n) = NaiveDateTime::parse_from_str(text, fmt) {
                return Some(n.and_utc().timestamp() - offset_s as i64);
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn network() -> RoadNetwork {
        let seg = |id: &str| RoadSegment {
            id: id.into(),
            length_m: 100.0,
            lanes: 2,
            max_speed_kmh: 50.0,
            road_type: "primary".into(),
            oneway: false,
            polyline: None,
        };
        RoadNetwork::new(vec![seg("a"), seg("b"), seg("c")]).unwrap()
    }

    fn point(p: f64, t: f64, y: f64) -> TrajectoryPoint {
        TrajectoryPoint { p, t, state: VehicleState::default(), y_cum: y, segment_id: None }
    }

    fn trip(ps: &[f64]) -> Trip {
        let points: Vec<_> = ps.iter().enumerate().map(|(i, &p)| point(p, i as f64 * 10.0, i as f64)).collect();
        let y = points.last().unwrap().y_cum;
        Trip {
            id: "t".into(),
            driver_id: "d".into(),
            vehicle_type: VehicleType::EV,
            departure_time: 0,
            route: Route::new(vec!["a".into(), "b".into()]),
            trajectory: Some(points),
            y_total: Some(y),
        }
    }

    #[test]
    fn well_formed_trip_has_no_violations() {
        assert!(validate_trip(&trip(&[0.0, 50.0, 90.0]), &network()).is_empty());
    }

    #[test]
    fn decreasing_distance_is_reported_once() {
        let v = validate_trip(&trip(&[0.0, 50.0, 40.0]), &network());
        assert_eq!(v, vec![Violation::NotMonotonic { field: "p", index: 2 }]);
    }

    #[test]
    fn unknown_segment_is_reported() {
        let mut t = trip(&[0.0, 50.0, 90.0]);
        t.route.segments.push("zz".into());
        assert_eq!(validate_trip(&t, &network()), vec![Violation::UnresolvedSegment { id: "zz".into() }]);
    }

    #[test]
    fn label_mismatch_is_reported() {
        let mut t = trip(&[0.0, 50.0, 90.0]);
        t.y_total = Some(7.0);
        assert!(matches!(validate_trip(&t, &network())[..], [Violation::LabelMismatch { .. }]));
    }

    #[test]
    fn network_rejects_bad_segments() {
        let json = r#"[{"id": 1, "length_m": 0, "lanes": 1, "max_speed_kmh": 30, "road_type": "x", "oneway": true}]"#;
        assert!(RoadNetwork::from_json(json).is_err());
        let json = r#"[{"id": 1, "length_m": 10, "lanes": 1, "max_speed_kmh": 30, "road_type": 3, "oneway": true}]"#;
        let net = RoadNetwork::from_json(json).unwrap();
        assert_eq!(net.get("1").unwrap().road_type, "3");
    }

    #[test]
    fn clock_helpers() {
        // 2018-01-05T08:30:00Z
        let ts = clock::parse("2018-01-05T08:30", 0).unwrap();
        assert_eq!(ts, 1_515_141_000);
        assert_eq!(clock::hour(ts, 0), 8);
        assert_eq!(clock::hour(ts, -5 * 3600), 3);
        assert_eq!(clock::month(ts, 0), 1);
        assert_eq!(clock::parse("2018-01-05T08:30", 3600).unwrap(), ts - 3600);
    }

    #[test]
    fn vehicle_type_parsing() {
        assert_eq!("phev".parse::<VehicleType>().unwrap(), VehicleType::PHEV);
        assert!("truck".parse::<VehicleType>().is_err());
    }
}
