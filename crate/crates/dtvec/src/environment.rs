//! Discrete-time multi-agent environment: observation encodings, action
//! decoding with constraint repair, one-slot advancement with fading draws,
//! the two-objective reward vector, per-vehicle difference rewards, and the
//! edge's candidate-normalized reward.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::scenario::{distance, InfoId, Scenario, VehicleId, VehicleSpec};
use crate::sensing_queue::{
    arrival_moment, pk_queuing_time, total_workload, updating_moment, QueueEntry, UploadTimeModel,
};
use crate::twin_metrics::{
    cdt, pdt, qdt, twin_consistency, twin_redundancy, twin_sensing_cost, twin_timeliness,
    twin_transmission_cost, DeliveredInfo, MetricWeights, NormalizationState, TwinScore,
    TwinSnapshot, UndeliveredCost, RAW_METRICS,
};
use crate::v2i_channel::{
    min_power_for_reliability, shannon_rate, snr, transmission_duration, transmission_energy,
    ChannelParams, TransmissionOutcome,
};
use crate::Result;

/// Queues are repaired to keep total workload strictly below this margin.
pub const STABILITY_MARGIN: f64 = 0.95;
/// Coefficient of variation assumed for upload times when turning a mean
/// into a second moment.
pub const SERVICE_CV: f64 = 0.3;
/// Number of seeded random edge allocations in the candidate set.
pub const EDGE_RANDOM_CANDIDATES: usize = 8;
/// Floor applied to distances before path-loss evaluation.
const MIN_DISTANCE: f64 = 1.0;

/// The two scalar objectives achieved in one slot (or summed over slots).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    pub quality: f64,
    pub profit: f64,
}

impl RewardVector {
    pub fn sub(self, other: RewardVector) -> RewardVector {
        RewardVector { quality: self.quality - other.quality, profit: self.profit - other.profit }
    }

    pub fn add(self, other: RewardVector) -> RewardVector {
        RewardVector { quality: self.quality + other.quality, profit: self.profit + other.profit }
    }

    /// Scalarization under an objective weight vector.
    pub fn scalarized(self, weights: WeightVector) -> f64 {
        weights.quality * self.quality + weights.profit * self.profit
    }
}

/// Preference over the two objectives; components sum to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub quality: f64,
    pub profit: f64,
}

impl WeightVector {
    pub fn new(quality: f64) -> Self {
        assert!((0.0..=1.0).contains(&quality));
        WeightVector { quality, profit: 1.0 - quality }
    }
}

/// Uniform draw of a preference: first component uniform in (0, 1), second
/// its complement.
pub fn sample_weight_vector<R: Rng>(rng: &mut R) -> WeightVector {
    WeightVector::new(rng.gen_range(0.0..1.0))
}

/// One information type a vehicle decided to sense this slot.
#[derive(Clone, Debug)]
pub struct SenseDecision {
    pub info_id: InfoId,
    pub frequency: f64,
    /// Distinct rank; larger ranks upload earlier.
    pub priority: i32,
}

/// Decoded, repaired per-vehicle action.
#[derive(Clone, Debug)]
pub struct VehicleAction {
    pub vehicle_id: VehicleId,
    pub sensed: Vec<SenseDecision>,
    /// Transmission power in watts.
    pub power: f64,
    /// False when the power misses the reliability floor at the current
    /// distance (or no usable bandwidth): sensing still happens and costs,
    /// but nothing is queued for upload.
    pub uploads: bool,
    /// Upload queue classes, one per sensed info, empty when `uploads` is
    /// false.
    pub queue: Vec<QueueEntry>,
}

impl VehicleAction {
    pub fn null(vehicle_id: VehicleId) -> Self {
        VehicleAction { vehicle_id, sensed: Vec::new(), power: 0.0, uploads: false, queue: Vec::new() }
    }
}

/// Decoded bandwidth split over the vehicles in range.
#[derive(Clone, Debug)]
pub struct EdgeAction {
    pub shares: BTreeMap<VehicleId, f64>,
}

/// Raw network outputs for one slot: one vector per vehicle (fixed layout
/// `[per capability: gate, frequency knob, priority score] + [power knob]`,
/// padded to the largest capability count) plus one nonnegative vector with
/// one entry per vehicle for the edge.
#[derive(Clone, Debug)]
pub struct RawJointAction {
    pub vehicles: Vec<Vec<f64>>,
    pub edge: Vec<f64>,
}

impl RawJointAction {
    /// Replaces one vehicle's raw vector with the null action (all zeros:
    /// no gate opens, zero power), leaving everything else untouched.
    pub fn with_null_vehicle(&self, index: usize) -> RawJointAction {
        let mut out = self.clone();
        out.vehicles[index] = vec![0.0; out.vehicles[index].len()];
        out
    }
}

/// Mean upload time and matching second moment for one payload at a mean
/// channel rate, under the fixed upload-time coefficient of variation.
fn upload_time_model(size_bits: f64, mean_rate: f64) -> UploadTimeModel {
    let mean = size_bits / mean_rate;
    UploadTimeModel { mean, second_moment: mean * mean * (1.0 + SERVICE_CV * SERVICE_CV) }
}

/// Maps one raw vector to a constraint-satisfying vehicle action.
///
/// Gates at or above 0.5 open; frequency knobs interpolate the capability
/// band; priority ranks order the scores descending with info-id tie-break;
/// the power knob scales the vehicle's power capacity. Repairs: frequencies
/// are scaled down (floored at each band minimum, then lowest-priority
/// decisions dropped) until the queue workload sits below the stability
/// margin, and a power below the reliability floor at the current distance
/// turns uploading off for the slot.
pub fn decode_vehicle_action(
    raw: &[f64],
    vehicle: &VehicleSpec,
    scenario: &Scenario,
    channel: &ChannelParams,
    bandwidth_share: f64,
    slot: usize,
) -> VehicleAction {
    let t = scenario.slot_time(slot);
    let mut sensed = Vec::new();
    let mut scored: Vec<(f64, InfoId)> = Vec::new();
    for (k, cap) in vehicle.capabilities.iter().enumerate() {
        let gate = raw.get(3 * k).copied().unwrap_or(0.0);
        if gate < 0.5 {
            continue;
        }
        let knob = raw.get(3 * k + 1).copied().unwrap_or(0.0).clamp(0.0, 1.0);
        let score = raw.get(3 * k + 2).copied().unwrap_or(0.0);
        sensed.push(SenseDecision {
            info_id: cap.info_id,
            frequency: cap.freq_min + knob * (cap.freq_max - cap.freq_min),
            priority: 0,
        });
        scored.push((score, cap.info_id));
    }
    // Descending score, ascending id on ties; the front of the order gets
    // the largest rank (served first).
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        scored[b].0.partial_cmp(&scored[a].0).unwrap().then(scored[a].1.cmp(&scored[b].1))
    });
    for (pos, &idx) in order.iter().enumerate() {
        sensed[idx].priority = (sensed.len() - pos) as i32;
    }

    let power_knob = raw.get(raw.len().saturating_sub(1)).copied().unwrap_or(0.0).clamp(0.0, 1.0);
    let power = power_knob * vehicle.power_cap;

    let dis = distance(vehicle.position_at(t), scenario.edge.location).max(MIN_DISTANCE);
    let mean_rate = shannon_rate(bandwidth_share, snr(dis, power, channel.fading_mean, channel));
    let reliable = match min_power_for_reliability(dis, channel) {
        Ok(floor) => power >= floor,
        Err(_) => false,
    };
    let uploads = reliable && mean_rate > 0.0 && !sensed.is_empty();
    if !uploads {
        return VehicleAction { vehicle_id: vehicle.id, sensed, power, uploads: false, queue: Vec::new() };
    }

    // Workload repair: proportional slow-down respecting band minima, then
    // drop the lowest-priority class when every knob is already floored.
    let alpha = |id: InfoId| -> f64 { scenario.info(id).size_bits / mean_rate };
    let mut guard = 0;
    loop {
        let load: f64 = sensed.iter().map(|d| d.frequency * alpha(d.info_id)).sum();
        if load < STABILITY_MARGIN || sensed.is_empty() {
            break;
        }
        let factor = STABILITY_MARGIN / load * (1.0 - 1e-9);
        let mut changed = false;
        for d in &mut sensed {
            let floor = vehicle.capability(d.info_id).expect("sensed implies capable").freq_min;
            let scaled = (d.frequency * factor).max(floor);
            if scaled < d.frequency {
                d.frequency = scaled;
                changed = true;
            }
        }
        guard += 1;
        if !changed || guard > 200 {
            let drop = sensed
                .iter()
                .enumerate()
                .min_by_key(|(_, d)| d.priority)
                .map(|(i, _)| i)
                .expect("nonempty checked above");
            sensed.remove(drop);
            guard = 0;
        }
    }
    if sensed.is_empty() {
        return VehicleAction { vehicle_id: vehicle.id, sensed, power, uploads: false, queue: Vec::new() };
    }
    let queue: Vec<QueueEntry> = sensed
        .iter()
        .map(|d| QueueEntry {
            info_id: d.info_id,
            frequency: d.frequency,
            priority: d.priority,
            upload_time: upload_time_model(scenario.info(d.info_id).size_bits, mean_rate),
        })
        .collect();
    VehicleAction { vehicle_id: vehicle.id, sensed, power, uploads: true, queue }
}

/// Maps nonnegative raw shares to a bandwidth split over the in-range set,
/// spending the full capacity; a zero raw sum splits uniformly.
pub fn decode_edge_action(raw: &[f64], in_range: &[VehicleId], bandwidth: f64) -> EdgeAction {
    let mut shares = BTreeMap::new();
    if in_range.is_empty() {
        return EdgeAction { shares };
    }
    let total: f64 = in_range.iter().map(|&v| raw.get(v as usize).copied().unwrap_or(0.0).max(0.0)).sum();
    for &v in in_range {
        let weight = if total > 0.0 {
            raw.get(v as usize).copied().unwrap_or(0.0).max(0.0) / total
        } else {
            1.0 / in_range.len() as f64
        };
        shares.insert(v, weight * bandwidth);
    }
    EdgeAction { shares }
}

/// Checks every decoded constraint: sensed infos within capability bands,
/// pairwise-distinct priorities, power within capacity, upload queues below
/// the stability margin, and edge shares nonnegative summing to at most the
/// capacity.
pub fn validate_joint_action(
    actions: &[VehicleAction],
    edge: &EdgeAction,
    scenario: &Scenario,
) -> Result<()> {
    for action in actions {
        let vehicle = scenario
            .vehicles
            .iter()
            .find(|v| v.id == action.vehicle_id)
            .ok_or_else(|| Error::Config(format!("unknown vehicle {}", action.vehicle_id)))?;
        let mut ranks: Vec<i32> = Vec::new();
        for d in &action.sensed {
            let cap = vehicle.capability(d.info_id).ok_or_else(|| {
                Error::Config(format!("vehicle {} cannot sense info {}", vehicle.id, d.info_id))
            })?;
            if d.frequency < cap.freq_min - 1e-9 || d.frequency > cap.freq_max + 1e-9 {
                return Err(Error::Config(format!(
                    "frequency {} outside [{}, {}] for info {}",
                    d.frequency, cap.freq_min, cap.freq_max, d.info_id
                )));
            }
            ranks.push(d.priority);
        }
        ranks.sort_unstable();
        ranks.dedup();
        if ranks.len() != action.sensed.len() {
            return Err(Error::Config(format!("vehicle {} has duplicate priorities", vehicle.id)));
        }
        if action.power < 0.0 || action.power > vehicle.power_cap + 1e-12 {
            return Err(Error::Config(format!("vehicle {} power outside capacity", vehicle.id)));
        }
        if action.uploads {
            let rho = total_workload(&action.queue);
            if rho >= STABILITY_MARGIN {
                return Err(Error::UnstableQueue { rho });
            }
        }
    }
    let mut sum = 0.0;
    for (&v, &share) in &edge.shares {
        if share < 0.0 {
            return Err(Error::Config(format!("negative bandwidth share for vehicle {v}")));
        }
        sum += share;
    }
    if sum > scenario.edge.bandwidth * (1.0 + 1e-9) {
        return Err(Error::Config(format!(
            "edge shares sum {} exceeds capacity {}",
            sum, scenario.edge.bandwidth
        )));
    }
    Ok(())
}

/// One decoded-and-evaluated slot, before the outcome is committed.
#[derive(Clone, Debug)]
pub struct SlotEvaluation {
    pub reward: RewardVector,
    pub snapshots: Vec<TwinSnapshot>,
    pub scores: Vec<TwinScore>,
    pub actions: Vec<VehicleAction>,
    pub edge_action: EdgeAction,
}

/// Everything one committed step produced.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub slot: usize,
    pub reward: RewardVector,
    pub difference_rewards: Vec<RewardVector>,
    pub edge_reward: RewardVector,
    pub scores: Vec<TwinScore>,
    pub actions: Vec<VehicleAction>,
}

/// One per-vehicle trace row for the episode debug export.
#[derive(Clone, Debug, Serialize)]
pub struct TraceRow {
    pub slot: usize,
    pub vehicle_id: VehicleId,
    pub sensed_count: usize,
    pub uploads: bool,
    pub power_w: f64,
    pub delivered: usize,
    pub dropped: usize,
}

/// Mutable world: scenario plus per-episode running state (slot cursor,
/// normalization ranges, edge cache ages, accumulated twin scores, fading
/// stream, preference vector).
#[derive(Clone, Debug)]
pub struct Environment {
    pub scenario: Scenario,
    pub channel: ChannelParams,
    pub metric_weights: MetricWeights,
    slot: usize,
    norm: NormalizationState,
    /// Latest underlying update instant the edge has received, per info.
    cached: BTreeMap<InfoId, f64>,
    scores: Vec<TwinScore>,
    weight_vector: WeightVector,
    fading_rng: ChaCha8Rng,
    trace: Vec<TraceRow>,
}

impl Environment {
    pub fn new(scenario: Scenario, channel: ChannelParams, metric_weights: MetricWeights) -> Result<Self> {
        scenario.validate()?;
        metric_weights.validate()?;
        let seed = scenario.seed;
        Ok(Environment {
            scenario,
            channel,
            metric_weights,
            slot: 0,
            norm: NormalizationState::new(1e-3),
            cached: BTreeMap::new(),
            scores: Vec::new(),
            weight_vector: WeightVector::new(0.5),
            fading_rng: ChaCha8Rng::seed_from_u64(seed),
            trace: Vec::new(),
        })
    }

    /// Rewinds to slot 0 with fresh episode state; the fading stream is
    /// reseeded from `episode_seed`.
    pub fn reset(&mut self, episode_seed: u64) {
        self.slot = 0;
        self.norm = NormalizationState::new(1e-3);
        self.cached.clear();
        self.scores.clear();
        self.trace.clear();
        self.fading_rng = ChaCha8Rng::seed_from_u64(episode_seed);
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn is_done(&self) -> bool {
        self.slot >= self.scenario.slot_count
    }

    pub fn set_weight_vector(&mut self, w: WeightVector) {
        self.weight_vector = w;
    }

    pub fn weight_vector(&self) -> WeightVector {
        self.weight_vector
    }

    pub fn scores(&self) -> &[TwinScore] {
        &self.scores
    }

    /// Snapshot of the committed normalization ranges, as counterfactual
    /// evaluations would start from them.
    pub fn norm_state(&self) -> NormalizationState {
        self.norm.clone()
    }

    pub fn max_capability_count(&self) -> usize {
        self.scenario.vehicles.iter().map(|v| v.capabilities.len()).max().unwrap_or(0)
    }

    /// Fixed raw action length per vehicle: three knobs per capability slot
    /// (padded to the largest count) plus the power knob.
    pub fn vehicle_raw_len(&self) -> usize {
        3 * self.max_capability_count() + 1
    }

    pub fn edge_raw_len(&self) -> usize {
        self.scenario.vehicles.len()
    }

    fn position_scale(&self) -> f64 {
        (2.0 * self.scenario.edge.range).max(1.0)
    }

    fn frequency_scale(&self) -> f64 {
        self.scenario
            .vehicles
            .iter()
            .flat_map(|v| v.capabilities.iter().map(|c| c.freq_max))
            .fold(0.0f64, f64::max)
            .max(1e-9)
    }

    fn cost_scale(&self) -> f64 {
        self.scenario
            .vehicles
            .iter()
            .flat_map(|v| v.capabilities.iter().map(|c| c.sensing_cost))
            .fold(0.0f64, f64::max)
            .max(1e-9)
    }

    fn episode_seconds(&self) -> f64 {
        self.scenario.slot_count as f64 * self.scenario.slot_duration
    }

    /// Age of the newest cached copy of `info`, scaled by the episode span
    /// and clamped to [0, 1]; 1 when nothing was ever delivered.
    fn cached_age(&self, info: InfoId) -> f64 {
        match self.cached.get(&info) {
            Some(&updated) => {
                ((self.scenario.slot_time(self.slot) - updated) / self.episode_seconds()).clamp(0.0, 1.0)
            }
            None => 1.0,
        }
    }

    fn required_anywhere(&self, info: InfoId) -> bool {
        self.scenario.entities.iter().any(|e| e.required_info.contains(&info))
    }

    /// Fixed-length local observation of one vehicle: slot and identity,
    /// position, one block per info type (capability band, sensing cost,
    /// cache age, demand flag), then the preference vector.
    pub fn observe_vehicle(&self, index: usize) -> Vec<f64> {
        let vehicle = &self.scenario.vehicles[index];
        let t = self.scenario.slot_time(self.slot);
        let pos = vehicle.position_at(t);
        let ps = self.position_scale();
        let mut obs = vec![
            self.slot as f64 / self.scenario.slot_count as f64,
            index as f64 / self.scenario.vehicles.len() as f64,
            pos.x / ps,
            pos.y / ps,
        ];
        for info in &self.scenario.infos {
            match vehicle.capability(info.id) {
                Some(cap) => {
                    obs.push(1.0);
                    obs.push(cap.freq_min / self.frequency_scale());
                    obs.push(cap.freq_max / self.frequency_scale());
                    obs.push(cap.sensing_cost / self.cost_scale());
                }
                None => obs.extend_from_slice(&[0.0, 0.0, 0.0, 0.0]),
            }
            obs.push(self.cached_age(info.id));
            obs.push(if self.required_anywhere(info.id) { 1.0 } else { 0.0 });
        }
        obs.push(self.weight_vector.quality);
        obs.push(self.weight_vector.profit);
        obs
    }

    /// Fixed-length edge observation: slot, per-vehicle coverage mask and
    /// masked distance, every vehicle's sensable flags, per-info cache age
    /// and demand flag, then the preference vector.
    pub fn observe_edge(&self) -> Vec<f64> {
        let t = self.scenario.slot_time(self.slot);
        let ps = self.position_scale();
        let mut obs = vec![self.slot as f64 / self.scenario.slot_count as f64];
        for vehicle in &self.scenario.vehicles {
            let dis = distance(vehicle.position_at(t), self.scenario.edge.location);
            if dis <= self.scenario.edge.range {
                obs.push(1.0);
                obs.push(dis / ps);
            } else {
                obs.push(0.0);
                obs.push(0.0);
            }
        }
        for vehicle in &self.scenario.vehicles {
            for info in &self.scenario.infos {
                obs.push(if vehicle.capability(info.id).is_some() { 1.0 } else { 0.0 });
            }
        }
        for info in &self.scenario.infos {
            obs.push(self.cached_age(info.id));
            obs.push(if self.required_anywhere(info.id) { 1.0 } else { 0.0 });
        }
        obs.push(self.weight_vector.quality);
        obs.push(self.weight_vector.profit);
        obs
    }

    /// Draws this slot's squared fading gain per vehicle (every vehicle,
    /// in index order, so counterfactuals can reuse the same draws).
    pub fn sample_fading(&mut self) -> Vec<f64> {
        let normal = Normal::new(self.channel.fading_mean, self.channel.fading_var.sqrt())
            .expect("fading variance is nonnegative");
        self.scenario
            .vehicles
            .iter()
            .map(|_| loop {
                let g = normal.sample(&mut self.fading_rng);
                if g > 0.0 {
                    break g;
                }
            })
            .collect()
    }

    /// Evaluates one slot without committing anything: decodes the joint
    /// action, runs sensing/queuing/uploading, assembles twin snapshots,
    /// updates the caller's normalization ranges with this slot's counted
    /// twins, and scores them. Deterministic given the fading draws.
    pub fn eval_slot(
        &self,
        raw: &RawJointAction,
        fading: &[f64],
        norm: &mut NormalizationState,
    ) -> Result<SlotEvaluation> {
        let scenario = &self.scenario;
        let t = scenario.slot_time(self.slot);
        let in_range = scenario.vehicles_in_range(self.slot);
        let edge_action = decode_edge_action(&raw.edge, &in_range, scenario.edge.bandwidth);

        let mut snapshots: Vec<TwinSnapshot> =
            scenario.entities.iter().map(|e| TwinSnapshot::new(e.entity_id)).collect();
        let mut actions = Vec::with_capacity(scenario.vehicles.len());

        for (index, vehicle) in scenario.vehicles.iter().enumerate() {
            if !in_range.contains(&vehicle.id) {
                actions.push(VehicleAction::null(vehicle.id));
                continue;
            }
            let share = edge_action.shares[&vehicle.id];
            let action = decode_vehicle_action(
                &raw.vehicles[index],
                vehicle,
                scenario,
                &self.channel,
                share,
                self.slot,
            );

            // Rate profile over the remaining slots while coverage lasts,
            // at this slot's sampled fading gain.
            let mut rates = Vec::new();
            if action.uploads {
                for k in self.slot..scenario.slot_count {
                    let pos = vehicle.position_at(scenario.slot_time(k));
                    let dis = distance(pos, scenario.edge.location);
                    if dis > scenario.edge.range {
                        break;
                    }
                    let s = snr(dis.max(MIN_DISTANCE), action.power, fading[index], &self.channel);
                    rates.push(shannon_rate(share, s));
                }
            }

            let mut sensed_sorted: Vec<&SenseDecision> = action.sensed.iter().collect();
            sensed_sorted.sort_by_key(|d| d.info_id);
            for d in sensed_sorted {
                let info = scenario.info(d.info_id);
                let cap = vehicle.capability(d.info_id).expect("sensed implies capable");
                let targets: Vec<usize> = scenario
                    .entities
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.required_info.contains(&d.info_id))
                    .map(|(i, _)| i)
                    .collect();
                if targets.is_empty() {
                    continue;
                }
                if !action.uploads {
                    for &e in &targets {
                        snapshots[e]
                            .undelivered
                            .push(UndeliveredCost { sensing_cost: cap.sensing_cost, energy: 0.0 });
                    }
                    continue;
                }
                let entry = action
                    .queue
                    .iter()
                    .find(|q| q.info_id == d.info_id)
                    .expect("queue mirrors sensed set");
                let q = pk_queuing_time(entry, &action.queue)?;
                let arrival = arrival_moment(t, d.frequency);
                let updating = updating_moment(arrival, info.update_interval);
                match transmission_duration(info.size_bits, &rates, scenario.slot_duration, q) {
                    TransmissionOutcome::Completed(duration) => {
                        for &e in &targets {
                            snapshots[e].delivered.push(DeliveredInfo {
                                info_id: d.info_id,
                                vehicle_id: vehicle.id,
                                arrival,
                                updating,
                                queuing: q,
                                duration,
                                energy: transmission_energy(action.power, duration),
                                sensing_cost: cap.sensing_cost,
                            });
                        }
                    }
                    TransmissionOutcome::NotCompleted { transmitting_time } => {
                        for &e in &targets {
                            snapshots[e].undelivered.push(UndeliveredCost {
                                sensing_cost: cap.sensing_cost,
                                energy: transmission_energy(action.power, transmitting_time),
                            });
                        }
                    }
                }
            }
            actions.push(action);
        }

        // Score counted twins: extend the shared ranges with every counted
        // twin first, then normalize.
        let counted: Vec<usize> =
            (0..snapshots.len()).filter(|&i| snapshots[i].is_counted()).collect();
        let mut scores = Vec::with_capacity(counted.len());
        let mut reward = RewardVector::default();
        if !counted.is_empty() {
            for &i in &counted {
                let snap = &snapshots[i];
                let raws = [
                    twin_timeliness(snap),
                    twin_consistency(snap),
                    twin_redundancy(snap),
                    twin_sensing_cost(snap),
                    twin_transmission_cost(snap),
                ];
                for (metric, value) in RAW_METRICS.iter().zip(raws) {
                    norm.observe(*metric, value);
                }
            }
            for &i in &counted {
                let snap = &snapshots[i];
                let quality = qdt(snap, &self.metric_weights, norm);
                let cost = cdt(snap, &self.metric_weights, norm);
                scores.push(TwinScore {
                    slot: self.slot,
                    entity_id: snap.entity_id,
                    timeliness: twin_timeliness(snap),
                    consistency: twin_consistency(snap),
                    redundancy: twin_redundancy(snap),
                    sensing_cost: twin_sensing_cost(snap),
                    transmission_cost: twin_transmission_cost(snap),
                    qdt: quality,
                    cdt: cost,
                    pdt: pdt(cost),
                });
            }
            let n = scores.len() as f64;
            reward.quality = scores.iter().map(|s| s.qdt).sum::<f64>() / n;
            reward.profit = scores.iter().map(|s| s.pdt).sum::<f64>() / n;
        }

        Ok(SlotEvaluation { reward, snapshots, scores, actions, edge_action })
    }

    /// Marginal contribution of vehicle `index`: slot reward of the full
    /// joint action minus the reward with that vehicle nulled (the edge
    /// split and everyone else unchanged), on the same fading draws.
    pub fn difference_reward(
        &self,
        raw: &RawJointAction,
        fading: &[f64],
        index: usize,
    ) -> Result<RewardVector> {
        let mut norm_full = self.norm.clone();
        let full = self.eval_slot(raw, fading, &mut norm_full)?;
        let mut norm_null = self.norm.clone();
        let null = self.eval_slot(&raw.with_null_vehicle(index), fading, &mut norm_null)?;
        Ok(full.reward.sub(null.reward))
    }

    /// Alternative edge splits compared against the actual one: uniform,
    /// proportional to each vehicle's pre-repair offered load, and seeded
    /// random shares.
    fn edge_candidates(&self, raw: &RawJointAction) -> Vec<Vec<f64>> {
        let n = self.scenario.vehicles.len();
        let mut candidates = vec![vec![1.0; n]];
        let mut proportional = vec![0.0; n];
        for (i, vehicle) in self.scenario.vehicles.iter().enumerate() {
            for (k, cap) in vehicle.capabilities.iter().enumerate() {
                let gate = raw.vehicles[i].get(3 * k).copied().unwrap_or(0.0);
                if gate < 0.5 {
                    continue;
                }
                let knob = raw.vehicles[i].get(3 * k + 1).copied().unwrap_or(0.0).clamp(0.0, 1.0);
                let freq = cap.freq_min + knob * (cap.freq_max - cap.freq_min);
                proportional[i] += freq * self.scenario.info(cap.info_id).size_bits;
            }
        }
        candidates.push(proportional);
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.scenario.seed ^ (self.slot as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        for _ in 0..EDGE_RANDOM_CANDIDATES {
            candidates.push((0..n).map(|_| rng.gen_range(0.0..1.0)).collect());
        }
        candidates
    }

    /// Edge reward per objective: where the actual split's slot reward
    /// falls between the worst and best candidate split (vehicle actions
    /// fixed, same fading). A degenerate range scores 1.
    pub fn edge_normalized_reward(&self, raw: &RawJointAction, fading: &[f64]) -> Result<RewardVector> {
        let mut norm = self.norm.clone();
        let actual = self.eval_slot(raw, fading, &mut norm)?.reward;
        let mut rewards = vec![actual];
        for candidate in self.edge_candidates(raw) {
            let mut alt = raw.clone();
            alt.edge = candidate;
            let mut norm = self.norm.clone();
            rewards.push(self.eval_slot(&alt, fading, &mut norm)?.reward);
        }
        let normalize = |pick: fn(&RewardVector) -> f64| -> f64 {
            let lo = rewards.iter().map(|r| pick(r)).fold(f64::INFINITY, f64::min);
            let hi = rewards.iter().map(|r| pick(r)).fold(f64::NEG_INFINITY, f64::max);
            if hi - lo > 0.0 {
                (pick(&actual) - lo) / (hi - lo)
            } else {
                1.0
            }
        };
        Ok(RewardVector {
            quality: normalize(|r| r.quality),
            profit: normalize(|r| r.profit),
        })
    }

    /// Advances one slot: draws fading, evaluates the full joint action and
    /// every counterfactual, then commits the outcome (normalization
    /// ranges, edge cache, twin scores, trace, slot cursor).
    pub fn step(&mut self, raw: &RawJointAction) -> Result<StepResult> {
        assert!(!self.is_done(), "episode already finished");
        let fading = self.sample_fading();

        let mut difference_rewards = Vec::with_capacity(self.scenario.vehicles.len());
        for index in 0..self.scenario.vehicles.len() {
            difference_rewards.push(self.difference_reward(raw, &fading, index)?);
        }
        let edge_reward = self.edge_normalized_reward(raw, &fading)?;

        let mut norm = self.norm.clone();
        let full = self.eval_slot(raw, &fading, &mut norm)?;
        self.norm = norm;
        for snap in &full.snapshots {
            for d in &snap.delivered {
                let newest = self.cached.entry(d.info_id).or_insert(f64::NEG_INFINITY);
                *newest = newest.max(d.updating);
            }
        }
        for action in &full.actions {
            let delivered = full
                .snapshots
                .iter()
                .flat_map(|s| s.delivered.iter())
                .filter(|d| d.vehicle_id == action.vehicle_id)
                .count();
            let dropped = action.sensed.len().saturating_sub(
                full.snapshots
                    .iter()
                    .flat_map(|s| s.delivered.iter())
                    .filter(|d| d.vehicle_id == action.vehicle_id)
                    .map(|d| d.info_id)
                    .collect::<std::collections::BTreeSet<_>>()
                    .len(),
            );
            self.trace.push(TraceRow {
                slot: self.slot,
                vehicle_id: action.vehicle_id,
                sensed_count: action.sensed.len(),
                uploads: action.uploads,
                power_w: action.power,
                delivered,
                dropped,
            });
        }
        self.scores.extend_from_slice(&full.scores);
        let slot = self.slot;
        self.slot += 1;
        Ok(StepResult {
            slot,
            reward: full.reward,
            difference_rewards,
            edge_reward,
            scores: full.scores,
            actions: full.actions,
        })
    }

    /// Writes the per-(slot, vehicle) debug trace as CSV.
    pub fn export_trace(&self, path: &std::path::Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        for row in &self.trace {
            writer.serialize(row)?;
        }
        writer.flush().map_err(Error::from)?;
        Ok(())
    }
}
