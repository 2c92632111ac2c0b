//! Per-twin quality and cost metrics: information timeliness, twin
//! timeliness/consistency/quality, redundancy and energy costs, the derived
//! profit, system aggregates, and the evaluation metrics QPUC / PPUQ /
//! AT / AR / ASC / ATC.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::scenario::{EntityId, InfoId, VehicleId};
use crate::Result;

/// One delivered piece of information with its timing and cost bookkeeping.
#[derive(Clone, Debug)]
pub struct DeliveredInfo {
    pub info_id: InfoId,
    pub vehicle_id: VehicleId,
    /// Sampling instant of the delivered copy.
    pub arrival: f64,
    /// Underlying update instant; at most `arrival`.
    pub updating: f64,
    pub queuing: f64,
    pub duration: f64,
    /// Transmission energy in joules.
    pub energy: f64,
    /// Sensing energy in joules.
    pub sensing_cost: f64,
}

/// Cost of a sensed-and-required upload attempt that did not complete
/// before the vehicle left coverage (or never started). Quality metrics
/// ignore it; cost metrics still charge it.
#[derive(Clone, Copy, Debug)]
pub struct UndeliveredCost {
    pub sensing_cost: f64,
    pub energy: f64,
}

/// Everything the edge received (and attempted) for one twin in one slot.
#[derive(Clone, Debug, Default)]
pub struct TwinSnapshot {
    pub entity_id: EntityId,
    pub delivered: Vec<DeliveredInfo>,
    pub undelivered: Vec<UndeliveredCost>,
}

impl TwinSnapshot {
    pub fn new(entity_id: EntityId) -> Self {
        TwinSnapshot { entity_id, delivered: Vec::new(), undelivered: Vec::new() }
    }

    /// A twin is counted in a slot only when it received something.
    pub fn is_counted(&self) -> bool {
        !self.delivered.is_empty()
    }
}

/// Weights of the quality components (sum 1) and cost components (sum 1).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub w5: f64,
}

impl Default for MetricWeights {
    fn default() -> Self {
        MetricWeights { w1: 0.6, w2: 0.4, w3: 0.2, w4: 0.4, w5: 0.4 }
    }
}

impl MetricWeights {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.w1, self.w2, self.w3, self.w4, self.w5];
        if vals.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Config("metric weights must lie in [0, 1]".into()));
        }
        if (self.w1 + self.w2 - 1.0).abs() > 1e-9 || (self.w3 + self.w4 + self.w5 - 1.0).abs() > 1e-9 {
            return Err(Error::Config("metric weights must sum to 1 per group".into()));
        }
        Ok(())
    }
}

/// The five raw metrics that get min-max normalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RawMetric {
    Timeliness,
    Consistency,
    Redundancy,
    SensingCost,
    TransmissionCost,
}

pub const RAW_METRICS: [RawMetric; 5] = [
    RawMetric::Timeliness,
    RawMetric::Consistency,
    RawMetric::Redundancy,
    RawMetric::SensingCost,
    RawMetric::TransmissionCost,
];

/// Running per-episode min/max per raw metric, shared across twins. The
/// caller observes every twin's raw values for a slot before normalizing
/// that slot.
#[derive(Clone, Debug)]
pub struct NormalizationState {
    mins: [f64; 5],
    maxs: [f64; 5],
    pub epsilon: f64,
}

impl NormalizationState {
    pub fn new(epsilon: f64) -> Self {
        NormalizationState { mins: [f64::INFINITY; 5], maxs: [f64::NEG_INFINITY; 5], epsilon }
    }

    pub fn observe(&mut self, metric: RawMetric, value: f64) {
        let i = metric as usize;
        self.mins[i] = self.mins[i].min(value);
        self.maxs[i] = self.maxs[i].max(value);
    }

    /// Min-max rescaling into the open interval, clamped to
    /// `[epsilon, 1 - epsilon]`. A degenerate range maps to `epsilon`.
    pub fn normalize(&self, metric: RawMetric, value: f64) -> f64 {
        let i = metric as usize;
        let range = self.maxs[i] - self.mins[i];
        let scaled = if range > 0.0 { (value - self.mins[i]) / range } else { 0.0 };
        scaled.clamp(self.epsilon, 1.0 - self.epsilon)
    }
}

/// Timeliness of one delivered item: delay from its underlying update to
/// its receipt at the edge.
pub fn info_timeliness(entry: &DeliveredInfo) -> f64 {
    entry.arrival + entry.queuing + entry.duration - entry.updating
}

/// Twin timeliness: sum over contributing vehicles of the maximum item
/// timeliness each vehicle delivered for this twin.
pub fn twin_timeliness(snapshot: &TwinSnapshot) -> f64 {
    let mut vehicles: Vec<VehicleId> = snapshot.delivered.iter().map(|d| d.vehicle_id).collect();
    vehicles.sort_unstable();
    vehicles.dedup();
    vehicles
        .iter()
        .map(|&v| {
            snapshot
                .delivered
                .iter()
                .filter(|d| d.vehicle_id == v)
                .map(info_timeliness)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum()
}

/// Twin consistency: spread (max minus min) of the delivered updating times.
pub fn twin_consistency(snapshot: &TwinSnapshot) -> f64 {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for d in &snapshot.delivered {
        min = min.min(d.updating);
        max = max.max(d.updating);
    }
    if snapshot.delivered.is_empty() {
        0.0
    } else {
        max - min
    }
}

/// Twin redundancy: extra delivered copies beyond the first per info type.
pub fn twin_redundancy(snapshot: &TwinSnapshot) -> f64 {
    let mut ids: Vec<InfoId> = snapshot.delivered.iter().map(|d| d.info_id).collect();
    ids.sort_unstable();
    let mut redundancy = 0usize;
    let mut i = 0;
    while i < ids.len() {
        let j = ids[i..].iter().take_while(|&&x| x == ids[i]).count();
        redundancy += j - 1;
        i += j;
    }
    redundancy as f64
}

/// Total sensing energy charged to the twin, including undelivered attempts.
pub fn twin_sensing_cost(snapshot: &TwinSnapshot) -> f64 {
    snapshot.delivered.iter().map(|d| d.sensing_cost).sum::<f64>()
        + snapshot.undelivered.iter().map(|u| u.sensing_cost).sum::<f64>()
}

/// Total transmission energy charged to the twin, including undelivered
/// attempts.
pub fn twin_transmission_cost(snapshot: &TwinSnapshot) -> f64 {
    snapshot.delivered.iter().map(|d| d.energy).sum::<f64>()
        + snapshot.undelivered.iter().map(|u| u.energy).sum::<f64>()
}

/// Quality of a twin from normalized timeliness and consistency.
pub fn qdt(snapshot: &TwinSnapshot, weights: &MetricWeights, norm: &NormalizationState) -> f64 {
    let theta = norm.normalize(RawMetric::Timeliness, twin_timeliness(snapshot));
    let psi = norm.normalize(RawMetric::Consistency, twin_consistency(snapshot));
    weights.w1 * (1.0 - theta) + weights.w2 * (1.0 - psi)
}

/// Cost of a twin from normalized redundancy, sensing cost, and
/// transmission cost.
pub fn cdt(snapshot: &TwinSnapshot, weights: &MetricWeights, norm: &NormalizationState) -> f64 {
    let xi = norm.normalize(RawMetric::Redundancy, twin_redundancy(snapshot));
    let phi = norm.normalize(RawMetric::SensingCost, twin_sensing_cost(snapshot));
    let omega = norm.normalize(RawMetric::TransmissionCost, twin_transmission_cost(snapshot));
    weights.w3 * xi + weights.w4 * phi + weights.w5 * omega
}

/// Profit of a twin: complement of its cost.
pub fn pdt(cdt_value: f64) -> f64 {
    1.0 - cdt_value
}

/// Per-(slot, twin) record of the scored metrics.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TwinScore {
    pub slot: usize,
    pub entity_id: EntityId,
    pub timeliness: f64,
    pub consistency: f64,
    pub redundancy: f64,
    pub sensing_cost: f64,
    pub transmission_cost: f64,
    pub qdt: f64,
    pub cdt: f64,
    pub pdt: f64,
}

/// System-level aggregates over every counted (slot, twin) pair.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SystemAggregates {
    pub quality: f64,
    pub cost: f64,
    pub profit: f64,
}

pub fn system_aggregates(scores: &[TwinScore]) -> Result<SystemAggregates> {
    if scores.is_empty() {
        return Err(Error::NoTwins);
    }
    let n = scores.len() as f64;
    Ok(SystemAggregates {
        quality: scores.iter().map(|s| s.qdt).sum::<f64>() / n,
        cost: scores.iter().map(|s| s.cdt).sum::<f64>() / n,
        profit: scores.iter().map(|s| s.pdt).sum::<f64>() / n,
    })
}

/// Quality per unit cost: total QDT over total CDT.
pub fn qpuc(scores: &[TwinScore]) -> Result<f64> {
    let denom: f64 = scores.iter().map(|s| s.cdt).sum();
    if denom <= 0.0 {
        return Err(Error::ZeroDenominator { metric: "qpuc" });
    }
    Ok(scores.iter().map(|s| s.qdt).sum::<f64>() / denom)
}

/// Profit per unit quality: total PDT over total QDT.
pub fn ppuq(scores: &[TwinScore]) -> Result<f64> {
    let denom: f64 = scores.iter().map(|s| s.qdt).sum();
    if denom <= 0.0 {
        return Err(Error::ZeroDenominator { metric: "ppuq" });
    }
    Ok(scores.iter().map(|s| s.pdt).sum::<f64>() / denom)
}

/// Average timeliness, redundancy, sensing cost, and transmission cost over
/// counted (slot, twin) pairs.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct AuxiliaryMetrics {
    pub avg_timeliness: f64,
    pub avg_redundancy: f64,
    pub avg_sensing_cost: f64,
    pub avg_transmission_cost: f64,
}

pub fn auxiliary_metrics(scores: &[TwinScore]) -> AuxiliaryMetrics {
    if scores.is_empty() {
        return AuxiliaryMetrics::default();
    }
    let n = scores.len() as f64;
    AuxiliaryMetrics {
        avg_timeliness: scores.iter().map(|s| s.timeliness).sum::<f64>() / n,
        avg_redundancy: scores.iter().map(|s| s.redundancy).sum::<f64>() / n,
        avg_sensing_cost: scores.iter().map(|s| s.sensing_cost).sum::<f64>() / n,
        avg_transmission_cost: scores.iter().map(|s| s.transmission_cost).sum::<f64>() / n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn item(info: InfoId, vehicle: VehicleId, a: f64, u: f64, q: f64, g: f64) -> DeliveredInfo {
        DeliveredInfo {
            info_id: info,
            vehicle_id: vehicle,
            arrival: a,
            updating: u,
            queuing: q,
            duration: g,
            energy: 0.0,
            sensing_cost: 0.0,
        }
    }

    #[test]
    fn info_timeliness_hand_values() {
        assert_relative_eq!(info_timeliness(&item(0, 0, 3.0, 2.0, 0.5, 0.2)), 1.7);
        assert_eq!(info_timeliness(&item(0, 0, 4.0, 4.0, 0.0, 0.0)), 0.0);
        let base = item(0, 0, 3.0, 2.0, 0.5, 0.2);
        let mut bumped = base.clone();
        bumped.queuing += 0.3;
        assert_relative_eq!(info_timeliness(&bumped), info_timeliness(&base) + 0.3);
    }

    #[test]
    fn twin_timeliness_per_vehicle_max_then_sum() {
        let mut snap = TwinSnapshot::new(0);
        snap.delivered.push(item(0, 1, 3.0, 2.0, 0.5, 0.2)); // theta 1.7
        snap.delivered.push(item(1, 1, 2.0, 1.8, 0.1, 0.1)); // theta 0.4
        assert_relative_eq!(twin_timeliness(&snap), 1.7);
        snap.delivered.push(item(2, 2, 4.0, 2.0, 0.0, 0.0)); // theta 2.0
        assert_relative_eq!(twin_timeliness(&snap), 3.7);
    }

    #[test]
    fn twin_timeliness_single_entry() {
        let mut snap = TwinSnapshot::new(0);
        snap.delivered.push(item(0, 1, 3.0, 2.0, 0.5, 0.2));
        assert_relative_eq!(twin_timeliness(&snap), 1.7);
    }

    #[test]
    fn consistency_spread() {
        let mut snap = TwinSnapshot::new(0);
        snap.delivered.push(item(0, 1, 2.5, 2.0, 0.0, 0.0));
        assert_eq!(twin_consistency(&snap), 0.0);
        snap.delivered.push(item(1, 1, 6.5, 6.0, 0.0, 0.0));
        snap.delivered.push(item(2, 2, 3.5, 3.0, 0.0, 0.0));
        assert_relative_eq!(twin_consistency(&snap), 4.0);
        // Adding an entry inside the current span leaves the spread alone.
        snap.delivered.push(item(3, 2, 4.5, 4.0, 0.0, 0.0));
        assert_relative_eq!(twin_consistency(&snap), 4.0);
    }

    #[test]
    fn redundancy_counts_extra_copies() {
        let mut snap = TwinSnapshot::new(0);
        snap.delivered.push(item(0, 1, 0.0, 0.0, 0.0, 0.0));
        snap.delivered.push(item(1, 1, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(twin_redundancy(&snap), 0.0);
        snap.delivered.push(item(0, 2, 0.0, 0.0, 0.0, 0.0));
        snap.delivered.push(item(0, 3, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(twin_redundancy(&snap), 2.0);
        snap.delivered.push(item(1, 2, 0.0, 0.0, 0.0, 0.0));
        // Copies {3, 2}: (3-1) + (2-1) = 3.
        assert_eq!(twin_redundancy(&snap), 3.0);
    }

    #[test]
    fn cost_sums() {
        let mut snap = TwinSnapshot::new(0);
        assert_eq!(twin_sensing_cost(&snap), 0.0);
        assert_eq!(twin_transmission_cost(&snap), 0.0);
        let mut a = item(0, 1, 0.0, 0.0, 0.0, 0.0);
        a.sensing_cost = 0.2;
        a.energy = 0.05;
        let mut b = item(1, 2, 0.0, 0.0, 0.0, 0.0);
        b.sensing_cost = 0.3;
        b.energy = 0.1;
        snap.delivered.push(a);
        snap.delivered.push(b);
        assert_relative_eq!(twin_sensing_cost(&snap), 0.5);
        assert_relative_eq!(twin_transmission_cost(&snap), 0.15);
        snap.undelivered.push(UndeliveredCost { sensing_cost: 0.1, energy: 0.02 });
        assert_relative_eq!(twin_sensing_cost(&snap), 0.6);
        assert_relative_eq!(twin_transmission_cost(&snap), 0.17);
    }

    fn norm_with(spans: [(f64, f64); 5]) -> NormalizationState {
        let mut norm = NormalizationState::new(1e-3);
        for (metric, (lo, hi)) in RAW_METRICS.iter().zip(spans) {
            norm.observe(*metric, lo);
            norm.observe(*metric, hi);
        }
        norm
    }

    #[test]
    fn qdt_hand_value() {
        // Theta-hat 0.5, Psi-hat 0.25 under spans [0,2]/[0,4] with raw 1/1.
        let norm = norm_with([(0.0, 2.0), (0.0, 4.0), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0)]);
        let mut snap = TwinSnapshot::new(0);
        snap.delivered.push(item(0, 1, 1.0, 0.5, 0.3, 0.2)); // theta 1.0, u 0.5
        snap.delivered.push(item(1, 2, 1.5, 1.5, 0.0, 0.0)); // theta 0, u 1.5
        assert_relative_eq!(twin_timeliness(&snap), 1.0);
        assert_relative_eq!(twin_consistency(&snap), 1.0);
        let w = MetricWeights::default();
        assert_relative_eq!(qdt(&snap, &w, &norm), 0.6 * 0.5 + 0.4 * 0.75);
    }

    #[test]
    fn qdt_extremes() {
        let norm = norm_with([(0.0, 1.0); 5]);
        let w = MetricWeights::default();
        let mut best = TwinSnapshot::new(0);
        best.delivered.push(item(0, 1, 0.0, 0.0, 0.0, 0.0));
        let q = qdt(&best, &w, &norm);
        assert!(q > 1.0 - 2.0 * norm.epsilon);
        let mut worst = TwinSnapshot::new(0);
        worst.delivered.push(item(0, 1, 1.0, 0.0, 0.0, 0.0));
        worst.delivered.push(item(1, 2, 1.0, 1.0, 0.0, 0.0));
        // Timeliness 1 and consistency 1 both sit at the span maximum.
        let q = qdt(&worst, &w, &norm);
        assert!(q < 2.0 * norm.epsilon + 1e-9);
    }

    #[test]
    fn cdt_hand_values() {
        let norm = norm_with([(0.0, 1.0), (0.0, 1.0), (0.0, 2.0), (0.0, 1.0), (0.0, 1.0)]);
        let w = MetricWeights::default();
        // Redundancy 2 normalizes to 1; zero costs normalize to epsilon.
        let mut snap = TwinSnapshot::new(0);
        for v in 1..=3 {
            snap.delivered.push(item(0, v, 0.0, 0.0, 0.0, 0.0));
        }
        let c = cdt(&snap, &w, &norm);
        assert_relative_eq!(c, 0.2 * (1.0 - 1e-3) + 0.8 * 1e-3, epsilon = 1e-12);
    }

    #[test]
    fn cdt_equal_components_is_that_value() {
        // All normalized components equal x: any valid weights give x.
        let norm = norm_with([(0.0, 1.0), (0.0, 1.0), (0.0, 2.0), (0.0, 1.0), (0.0, 0.2)]);
        let mut snap = TwinSnapshot::new(0);
        let mut a = item(0, 1, 0.0, 0.0, 0.0, 0.0);
        a.sensing_cost = 0.5;
        a.energy = 0.1;
        snap.delivered.push(a);
        let mut b = item(0, 2, 0.0, 0.0, 0.0, 0.0);
        b.sensing_cost = 0.0;
        b.energy = 0.0;
        snap.delivered.push(b);
        // Xi 1/2, Phi 0.5/1, Omega 0.1/0.2 are all 0.5.
        for w in [
            MetricWeights::default(),
            MetricWeights { w1: 0.5, w2: 0.5, w3: 0.6, w4: 0.2, w5: 0.2 },
        ] {
            assert_relative_eq!(cdt(&snap, &w, &norm), 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn pdt_complement() {
        assert_eq!(pdt(0.0), 1.0);
        assert_eq!(pdt(1.0), 0.0);
        assert_relative_eq!(pdt(0.2), 0.8);
    }

    fn score(qdt: f64, cdt: f64) -> TwinScore {
        TwinScore {
            slot: 0,
            entity_id: 0,
            timeliness: 0.0,
            consistency: 0.0,
            redundancy: 0.0,
            sensing_cost: 0.0,
            transmission_cost: 0.0,
            qdt,
            cdt,
            pdt: 1.0 - cdt,
        }
    }

    #[test]
    fn aggregates_and_tradeoff_metrics() {
        assert!(matches!(system_aggregates(&[]), Err(Error::NoTwins)));
        let one = [score(0.7, 0.3)];
        let agg = system_aggregates(&one).unwrap();
        assert_relative_eq!(agg.quality, 0.7);
        assert_relative_eq!(agg.profit, 0.7);
        let two = [score(0.6, 0.4), score(0.8, 0.2)];
        let agg = system_aggregates(&two).unwrap();
        assert_relative_eq!(agg.quality, 0.7);
        assert_relative_eq!(agg.profit, 1.0 - agg.cost, epsilon = 1e-12);
        assert_relative_eq!(qpuc(&two).unwrap(), 1.4 / 0.6, epsilon = 1e-12);
        assert_relative_eq!(ppuq(&two).unwrap(), 1.4 / 1.4, epsilon = 1e-12);
        assert!(matches!(qpuc(&[score(0.5, 0.0)]), Err(Error::ZeroDenominator { .. })));
    }

    #[test]
    fn auxiliary_means() {
        let mut a = score(0.5, 0.5);
        a.timeliness = 1.0;
        a.redundancy = 0.0;
        a.sensing_cost = 0.2;
        a.transmission_cost = 0.1;
        let mut b = a;
        b.timeliness = 3.0;
        b.sensing_cost = 0.4;
        let aux = auxiliary_metrics(&[a, b]);
        assert_relative_eq!(aux.avg_timeliness, 2.0);
        assert_relative_eq!(aux.avg_redundancy, 0.0);
        assert_relative_eq!(aux.avg_sensing_cost, 0.3, epsilon = 1e-12);
        assert_relative_eq!(aux.avg_transmission_cost, 0.1);
    }

    #[test]
    fn qdt_monotone_in_timeliness_with_fixed_bounds() {
        let norm = norm_with([(0.0, 5.0), (0.0, 5.0), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0)]);
        let w = MetricWeights::default();
        let mut last = f64::INFINITY;
        for theta in [0.5, 1.0, 2.0, 4.0] {
            let mut snap = TwinSnapshot::new(0);
            snap.delivered.push(item(0, 1, theta, 0.0, 0.0, 0.0));
            let q = qdt(&snap, &w, &norm);
            assert!(q <= last + 1e-12);
            last = q;
        }
    }
}
