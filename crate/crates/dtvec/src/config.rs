//! Run configuration: TOML-loadable sections for the scenario generator,
//! channel, metric weights, training hyperparameters, and evaluation, plus
//! the sweep axes the CLI iterates over.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{Environment, WeightVector};
use crate::mamo::TrainingConfig;
use crate::scenario::{
    EdgeSpec, EntityAssociation, InfoSpec, Point, Scenario, SensingCapability, TrajectoryPoint,
    VehicleSpec,
};
use crate::twin_metrics::MetricWeights;
use crate::v2i_channel::ChannelParams;
use crate::{Error, Result};

/// Parameters of the deterministic synthetic scenario generator.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub vehicle_count: usize,
    pub info_count: usize,
    pub entity_count: usize,
    /// Required information ids per entity; sets are nested so raising this
    /// only ever adds requirements.
    pub required_per_entity: usize,
    pub slot_count: usize,
    pub slot_duration: f64,
    /// Square area side length in meters.
    pub area: f64,
    pub edge_range: f64,
    pub bandwidth: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            vehicle_count: 5,
            info_count: 10,
            entity_count: 6,
            required_per_entity: 4,
            slot_count: 60,
            slot_duration: 1.0,
            area: 1000.0,
            edge_range: 500.0,
            bandwidth: 2e6,
            seed: 7,
        }
    }
}

/// Evaluation settings attached to a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub eval_episodes: usize,
    /// Quality weight used when evaluating a trained policy.
    pub eval_weight_quality: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { eval_episodes: 5, eval_weight_quality: 0.5 }
    }
}

/// Top-level run configuration; every section has desk-scale defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub channel: ChannelParams,
    pub metrics: MetricWeights,
    pub training: TrainingConfig,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: ScenarioConfig::default(),
            channel: ChannelParams::default(),
            metrics: MetricWeights::default(),
            training: TrainingConfig::desk_scale(),
            run: RunSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Builds the environment described by this configuration.
    pub fn build_environment(&self) -> Result<Environment> {
        Environment::new(build_scenario(&self.scenario), self.channel, self.metrics)
    }

    pub fn eval_weights(&self) -> WeightVector {
        WeightVector::new(self.run.eval_weight_quality)
    }
}

/// Deterministic synthetic scenario: vehicles drive straight lines through
/// the coverage area, capabilities cover every information id, and each
/// entity requires a nested prefix of its own fixed preference order.
pub fn build_scenario(cfg: &ScenarioConfig) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let center = cfg.area / 2.0;
    let horizon = cfg.slot_count as f64 * cfg.slot_duration;

    let infos: Vec<InfoSpec> = (0..cfg.info_count as u32)
        .map(|id| InfoSpec {
            id,
            type_tag: id % 3,
            update_interval: rng.gen_range(1.5..4.0),
            size_bits: rng.gen_range(3e4..8e4),
        })
        .collect();

    let mut vehicles = Vec::with_capacity(cfg.vehicle_count);
    for v in 0..cfg.vehicle_count {
        // Start inside coverage, constant heading and speed.
        let r = rng.gen_range(0.0..0.5 * cfg.edge_range);
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        let (x0, y0) = (center + r * a.cos(), center + r * a.sin());
        let heading = rng.gen_range(0.0..std::f64::consts::TAU);
        let speed = rng.gen_range(8.0..16.0);
        let trajectory = vec![
            TrajectoryPoint { time: 0.0, x: x0, y: y0 },
            TrajectoryPoint {
                time: horizon,
                x: x0 + speed * horizon * heading.cos(),
                y: y0 + speed * horizon * heading.sin(),
            },
        ];
        // Round-robin seed so every info id is sensable somewhere, then a
        // few extra random capabilities for overlap.
        let mut ids: Vec<u32> = (0..cfg.info_count as u32)
            .filter(|id| (*id as usize) % cfg.vehicle_count == v)
            .collect();
        for _ in 0..2 {
            let id = rng.gen_range(0..cfg.info_count as u32);
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        ids.sort_unstable();
        let capabilities = ids
            .into_iter()
            .map(|info_id| SensingCapability {
                info_id,
                freq_min: 0.5,
                freq_max: 2.0,
                sensing_cost: rng.gen_range(0.1..0.5),
            })
            .collect();
        vehicles.push(VehicleSpec {
            id: v as u32,
            trajectory,
            capabilities,
            power_cap: rng.gen_range(0.08..0.2),
        });
    }

    let entities = (0..cfg.entity_count as u32)
        .map(|entity_id| {
            // Per-entity preference order; the required set is its prefix so
            // growing `required_per_entity` strictly nests.
            let mut order: Vec<u32> = (0..cfg.info_count as u32).collect();
            for i in (1..order.len()).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            let mut required: Vec<u32> =
                order.into_iter().take(cfg.required_per_entity.min(cfg.info_count)).collect();
            required.sort_unstable();
            EntityAssociation { entity_id, required_info: required }
        })
        .collect();

    Scenario {
        slot_count: cfg.slot_count,
        slot_duration: cfg.slot_duration,
        infos,
        vehicles,
        edge: EdgeSpec {
            location: Point { x: center, y: center },
            range: cfg.edge_range,
            bandwidth: cfg.bandwidth,
        },
        entities,
        seed: cfg.seed,
    }
}

/// Axes the sweep command iterates over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Bandwidth,
    RequiredInfo,
}

impl SweepAxis {
    /// Values swept along this axis, in increasing order.
    pub fn values(self) -> Vec<f64> {
        match self {
            SweepAxis::Bandwidth => vec![1e6, 1.5e6, 2e6, 2.5e6, 3e6],
            SweepAxis::RequiredInfo => vec![3.0, 4.0, 5.0, 6.0, 7.0],
        }
    }

    /// Returns a copy of `config` with this axis set to `value`.
    pub fn apply(self, config: &RunConfig, value: f64) -> RunConfig {
        let mut out = config.clone();
        match self {
            SweepAxis::Bandwidth => out.scenario.bandwidth = value,
            SweepAxis::RequiredInfo => out.scenario.required_per_entity = value as usize,
        }
        out
    }
}
