//! Static world description: information specs, vehicles with trajectories
//! and sensing capabilities, the edge node, and physical entities with their
//! information associations. Also ingests or synthesizes trajectories and
//! answers the geometric queries the environment needs.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

pub type InfoId = u32;
pub type VehicleId = u32;
pub type EntityId = u32;

/// A 2-D location in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// Euclidean distance between two locations.
pub fn distance(a: Point, b: Point) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

/// One kind of sensable information: category, underlying update interval,
/// and payload size.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InfoSpec {
    pub id: InfoId,
    pub type_tag: u32,
    /// Seconds between updates of the underlying physical quantity.
    pub update_interval: f64,
    /// Payload size in bits.
    pub size_bits: f64,
}

/// What a vehicle can sense for one information id, and at what cost.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensingCapability {
    pub info_id: InfoId,
    /// Minimum sensing frequency in hertz.
    pub freq_min: f64,
    /// Maximum sensing frequency in hertz.
    pub freq_max: f64,
    /// Energy in joules per slot while sensing this information.
    pub sensing_cost: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub time: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub id: VehicleId,
    /// Samples ordered by strictly increasing time.
    pub trajectory: Vec<TrajectoryPoint>,
    pub capabilities: Vec<SensingCapability>,
    /// Transmission power capacity in watts.
    pub power_cap: f64,
}

impl VehicleSpec {
    /// Position at an arbitrary time: linear interpolation between samples,
    /// clamped to the endpoints outside the sampled span.
    pub fn position_at(&self, time: f64) -> Point {
        let traj = &self.trajectory;
        assert!(!traj.is_empty(), "vehicle {} has no trajectory", self.id);
        if time <= traj[0].time {
            return Point { x: traj[0].x, y: traj[0].y };
        }
        let last = traj[traj.len() - 1];
        if time >= last.time {
            return Point { x: last.x, y: last.y };
        }
        let idx = traj.partition_point(|p| p.time <= time);
        let (a, b) = (traj[idx - 1], traj[idx]);
        let frac = (time - a.time) / (b.time - a.time);
        Point {
            x: a.x + frac * (b.x - a.x),
            y: a.y + frac * (b.y - a.y),
        }
    }

    pub fn capability(&self, info_id: InfoId) -> Option<&SensingCapability> {
        self.capabilities.iter().find(|c| c.info_id == info_id)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub location: Point,
    /// Communication range in meters.
    pub range: f64,
    /// Uplink bandwidth capacity in hertz.
    pub bandwidth: f64,
}

/// A physical entity and the information ids its digital twin requires.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntityAssociation {
    pub entity_id: EntityId,
    pub required_info: Vec<InfoId>,
}

/// Immutable world description shared read-only by all actors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub slot_count: usize,
    /// Slot duration in seconds.
    pub slot_duration: f64,
    pub infos: Vec<InfoSpec>,
    pub vehicles: Vec<VehicleSpec>,
    pub edge: EdgeSpec,
    pub entities: Vec<EntityAssociation>,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.slot_count < 1 {
            return Err(Error::Config("slot_count must be >= 1".into()));
        }
        if self.slot_duration <= 0.0 {
            return Err(Error::Config("slot_duration must be > 0".into()));
        }
        let mut ids: Vec<InfoId> = self.infos.iter().map(|i| i.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.infos.len() {
            return Err(Error::Config("duplicate info ids".into()));
        }
        for info in &self.infos {
            if info.update_interval <= 0.0 || info.size_bits <= 0.0 {
                return Err(Error::Config(format!("info {} has non-positive parameters", info.id)));
            }
        }
        for v in &self.vehicles {
            if v.power_cap <= 0.0 {
                return Err(Error::Config(format!("vehicle {} has non-positive power cap", v.id)));
            }
            if v.trajectory.windows(2).any(|w| w[1].time <= w[0].time) {
                return Err(Error::Config(format!("vehicle {} trajectory times not increasing", v.id)));
            }
            let mut cap_ids: Vec<InfoId> = v.capabilities.iter().map(|c| c.info_id).collect();
            cap_ids.sort_unstable();
            cap_ids.dedup();
            if cap_ids.len() != v.capabilities.len() {
                return Err(Error::Config(format!("vehicle {} has duplicate capabilities", v.id)));
            }
            for c in &v.capabilities {
                if !(c.freq_min > 0.0 && c.freq_min <= c.freq_max) || c.sensing_cost < 0.0 {
                    return Err(Error::Config(format!(
                        "vehicle {} capability for info {} invalid",
                        v.id, c.info_id
                    )));
                }
                if !ids.binary_search(&c.info_id).is_ok() {
                    return Err(Error::Config(format!(
                        "vehicle {} senses unknown info {}",
                        v.id, c.info_id
                    )));
                }
            }
        }
        if self.edge.range <= 0.0 || self.edge.bandwidth <= 0.0 {
            return Err(Error::Config("edge range and bandwidth must be > 0".into()));
        }
        for e in &self.entities {
            if e.required_info.is_empty() {
                return Err(Error::Config(format!("entity {} requires no information", e.entity_id)));
            }
            for d in &e.required_info {
                if !ids.binary_search(d).is_ok() {
                    return Err(Error::Config(format!(
                        "entity {} requires unknown info {}",
                        e.entity_id, d
                    )));
                }
            }
        }
        Ok(())
    }

    /// Wall-clock time at the start of slot `t`.
    pub fn slot_time(&self, slot: usize) -> f64 {
        slot as f64 * self.slot_duration
    }

    pub fn info(&self, id: InfoId) -> &InfoSpec {
        self.infos.iter().find(|i| i.id == id).expect("unknown info id")
    }

    pub fn info_index(&self, id: InfoId) -> usize {
        self.infos.iter().position(|i| i.id == id).expect("unknown info id")
    }

    /// Ids of vehicles within the edge's radio coverage at slot `t`.
    pub fn vehicles_in_range(&self, slot: usize) -> Vec<VehicleId> {
        let time = self.slot_time(slot);
        self.vehicles
            .iter()
            .filter(|v| distance(v.position_at(time), self.edge.location) <= self.edge.range)
            .map(|v| v.id)
            .collect()
    }
}

/// Reads trajectories from a CSV with header `vehicle_id,time_s,x_m,y_m`.
/// Rows are grouped per vehicle and must be time-monotone within a vehicle.
pub fn load_trajectories(path: &Path) -> Result<BTreeMap<VehicleId, Vec<TrajectoryPoint>>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut out: BTreeMap<VehicleId, Vec<TrajectoryPoint>> = BTreeMap::new();
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // 1-based, after the header
        let record = record?;
        let parse = |idx: usize, name: &str| -> Result<f64> {
            record
                .get(idx)
                .ok_or_else(|| Error::Parse { line, msg: format!("missing column {name}") })?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse { line, msg: format!("bad {name}: {e}") })
        };
        let vehicle: VehicleId = record
            .get(0)
            .ok_or_else(|| Error::Parse { line, msg: "missing vehicle_id".into() })?
            .trim()
            .parse()
            .map_err(|e| Error::Parse { line, msg: format!("bad vehicle_id: {e}") })?;
        let point = TrajectoryPoint { time: parse(1, "time_s")?, x: parse(2, "x_m")?, y: parse(3, "y_m")? };
        let traj = out.entry(vehicle).or_default();
        if let Some(prev) = traj.last() {
            if point.time <= prev.time {
                return Err(Error::NonMonotoneTrajectory { vehicle, line });
            }
        }
        traj.push(point);
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyTrajectoryFile);
    }
    Ok(out)
}

/// Synthesizes random-waypoint trajectories inside a rectangular area,
/// sampled once per second. Deterministic for a fixed seed.
pub fn generate_synthetic_trajectories(
    seed: u64,
    n_vehicles: usize,
    area: (f64, f64),
    duration: f64,
    speed_range: (f64, f64),
) -> BTreeMap<VehicleId, Vec<TrajectoryPoint>> {
    assert!(n_vehicles >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (width, height) = area;
    let n_samples = duration.ceil() as usize + 1;
    let mut out = BTreeMap::new();
    for vid in 0..n_vehicles as VehicleId {
        let mut pos = Point { x: rng.gen::<f64>() * width, y: rng.gen::<f64>() * height };
        let mut waypoint = Point { x: rng.gen::<f64>() * width, y: rng.gen::<f64>() * height };
        let mut speed = rng.gen_range(speed_range.0..=speed_range.1);
        let mut traj = Vec::with_capacity(n_samples);
        for step in 0..n_samples {
            traj.push(TrajectoryPoint { time: step as f64, x: pos.x, y: pos.y });
            let mut remaining = 1.0;
            while remaining > 0.0 {
                let dist = distance(pos, waypoint);
                if speed <= 0.0 {
                    break;
                }
                let travel = speed * remaining;
                if travel < dist {
                    let frac = travel / dist;
                    pos.x += frac * (waypoint.x - pos.x);
                    pos.y += frac * (waypoint.y - pos.y);
                    remaining = 0.0;
                } else {
                    remaining -= dist / speed;
                    pos = waypoint;
                    waypoint = Point { x: rng.gen::<f64>() * width, y: rng.gen::<f64>() * height };
                    speed = rng.gen_range(speed_range.0..=speed_range.1);
                }
            }
        }
        out.insert(vid, traj);
    }
    out
}
