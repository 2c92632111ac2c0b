//! Multi-agent multi-objective learner: experience generation with
//! exploration noise, uniform replay, scalarized temporal-difference
//! targets, dueling critic and deterministic policy updates, soft target
//! blending, periodic actor synchronization, and a deterministic
//! interleaved training loop.

use std::io::Write;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{
    sample_weight_vector, Environment, RawJointAction, RewardVector, WeightVector,
};
use crate::neural::{
    sample_baseline_draws, Adam, DuelingCritic, Mlp, MlpGradients, OutputActivation,
};
use crate::twin_metrics::{auxiliary_metrics, qpuc, AuxiliaryMetrics, TwinScore};
use crate::Result;

/// Learner and actor hyperparameters. Defaults carry the full-scale values;
/// [`TrainingConfig::desk_scale`] shrinks them to finish within a desk-class
/// compute budget.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Discount factor.
    pub gamma: f64,
    /// Minibatch size M.
    pub batch_size: usize,
    pub policy_lr: f64,
    pub critic_lr: f64,
    /// Soft-update blend rate for target networks.
    pub soft_update_rate: f64,
    /// Learner steps between soft target updates.
    pub target_period: usize,
    /// Learner steps between actor synchronizations.
    pub actor_sync_period: usize,
    /// Sync actors from target policies (true) or local policies (false).
    pub sync_from_targets: bool,
    /// Exploration noise scale at the first and last iteration (linear
    /// decay in between).
    pub exploration_start: f64,
    pub exploration_end: f64,
    /// Random actions per dueling baseline.
    pub n_baseline_actions: usize,
    pub buffer_capacity: usize,
    /// Transitions collected before learning starts.
    pub warmup_transitions: usize,
    /// Learner updates applied after each collected episode.
    pub updates_per_iteration: usize,
    /// Episodes to run.
    pub iterations: usize,
    pub policy_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Dueling critic aggregation on (true) or a monolithic critic head
    /// (false).
    pub dueling: bool,
    /// Freeze the preference vector instead of resampling per iteration.
    pub fixed_weights: Option<WeightVector>,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            gamma: 0.996,
            batch_size: 256,
            policy_lr: 1e-4,
            critic_lr: 1e-4,
            soft_update_rate: 1e-3,
            target_period: 100,
            actor_sync_period: 500,
            sync_from_targets: true,
            exploration_start: 0.3,
            exploration_end: 0.05,
            n_baseline_actions: 16,
            buffer_capacity: 1_000_000,
            warmup_transitions: 1_000,
            updates_per_iteration: 8,
            iterations: 2_000,
            policy_hidden: vec![256, 128],
            critic_hidden: vec![512, 256],
            dueling: true,
            fixed_weights: None,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    /// Shrunk variant sized for a 30-minute single-threaded budget.
    pub fn desk_scale() -> Self {
        TrainingConfig {
            batch_size: 64,
            policy_lr: 3e-4,
            critic_lr: 1e-3,
            soft_update_rate: 0.01,
            target_period: 1,
            actor_sync_period: 4,
            sync_from_targets: false,
            n_baseline_actions: 8,
            buffer_capacity: 100_000,
            warmup_transitions: 256,
            updates_per_iteration: 8,
            iterations: 500,
            policy_hidden: vec![64, 32],
            critic_hidden: vec![128, 64],
            ..TrainingConfig::default()
        }
    }

    fn exploration_at(&self, iteration: usize) -> f64 {
        if self.iterations <= 1 {
            return self.exploration_start;
        }
        let frac = iteration as f64 / (self.iterations - 1) as f64;
        self.exploration_start + frac * (self.exploration_end - self.exploration_start)
    }
}

/// One stored step of experience for every agent.
#[derive(Clone, Debug)]
pub struct ReplayTransition {
    pub vehicle_obs: Vec<Vec<f64>>,
    pub edge_obs: Vec<f64>,
    pub weights: WeightVector,
    pub vehicle_actions: Vec<Vec<f64>>,
    pub edge_action: Vec<f64>,
    pub vehicle_rewards: Vec<RewardVector>,
    pub edge_reward: RewardVector,
    pub next_vehicle_obs: Vec<Vec<f64>>,
    pub next_edge_obs: Vec<f64>,
    pub next_weights: WeightVector,
    pub terminal: bool,
}

/// Fixed-capacity ring with uniform minibatch sampling without replacement.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    slots: Vec<ReplayTransition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer { slots: Vec::new(), capacity, next: 0 }
    }

    pub fn push(&mut self, transition: ReplayTransition) {
        if self.slots.len() < self.capacity {
            self.slots.push(transition);
        } else {
            self.slots[self.next] = transition;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&self, index: usize) -> &ReplayTransition {
        &self.slots[index]
    }

    /// Distinct uniform indices for one minibatch.
    pub fn sample_indices<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<usize> {
        assert!(count <= self.slots.len(), "minibatch larger than buffer");
        rand::seq::index::sample(rng, self.slots.len(), count).into_vec()
    }
}

/// Local and target networks plus optimizer state for one agent role.
#[derive(Clone, Debug)]
pub struct AgentNets {
    pub policy: Mlp,
    pub policy_target: Mlp,
    pub critic: DuelingCritic,
    pub critic_target: DuelingCritic,
    opt_policy: Adam,
    opt_advantage: Adam,
    opt_value: Adam,
}

impl AgentNets {
    fn new(
        policy_sizes: &[usize],
        obs_dim: usize,
        own_dim: usize,
        others_dim: usize,
        critic_hidden: &[usize],
        policy_lr: f64,
        critic_lr: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let policy = Mlp::new(policy_sizes, OutputActivation::Logistic, rng);
        let critic = DuelingCritic::new(obs_dim, own_dim, others_dim, 2, critic_hidden, rng);
        AgentNets {
            policy_target: policy.clone(),
            critic_target: critic.clone(),
            opt_policy: Adam::new(&policy, policy_lr),
            opt_advantage: Adam::new(&critic.advantage, critic_lr),
            opt_value: Adam::new(&critic.value, critic_lr),
            policy,
            critic,
        }
    }
}

/// Read-only policy copies held by an actor.
#[derive(Clone, Debug)]
pub struct ActorPolicies {
    pub vehicle: Mlp,
    pub edge: Mlp,
}

/// Deterministic policy output plus clipped Gaussian exploration noise.
pub fn act_vehicle<R: Rng>(policy: &Mlp, observation: &[f64], noise_scale: f64, rng: &mut R) -> Vec<f64> {
    let mut action = policy.infer_one(observation).expect("observation length fixed by env");
    for a in &mut action {
        if noise_scale > 0.0 {
            let n: f64 = rand_distr::StandardNormal.sample(rng);
            *a += noise_scale * n;
        }
        *a = a.clamp(0.0, 1.0);
    }
    action
}

use rand_distr::Distribution as _;

fn flatten(actions: &[Vec<f64>]) -> Vec<f64> {
    actions.iter().flat_map(|a| a.iter().copied()).collect()
}

/// Edge policy acts on its observation concatenated with every vehicle's
/// raw action, plus clipped exploration noise.
pub fn act_edge<R: Rng>(
    policy: &Mlp,
    observation: &[f64],
    vehicle_actions: &[Vec<f64>],
    noise_scale: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut input = observation.to_vec();
    input.extend(flatten(vehicle_actions));
    act_vehicle(policy, &input, noise_scale, rng)
}

/// One critic input row.
#[derive(Clone, Debug)]
struct CriticRow {
    obs: Vec<f64>,
    own: Vec<f64>,
    others: Vec<f64>,
    weights: [f64; 2],
}

impl CriticRow {
    fn advantage_input(&self, own: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.obs.len() + own.len() + self.others.len() + 2);
        v.extend_from_slice(&self.obs);
        v.extend_from_slice(own);
        v.extend_from_slice(&self.others);
        v.extend_from_slice(&self.weights);
        v
    }

    fn value_input(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.obs.len() + 2);
        v.extend_from_slice(&self.obs);
        v.extend_from_slice(&self.weights);
        v
    }
}

fn rows_to_array(rows: Vec<Vec<f64>>) -> Array2<f64> {
    let cols = rows.first().map(|r| r.len()).unwrap_or(0);
    let n = rows.len();
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
        .expect("uniform row lengths")
}

/// Scalar critic value for one row, honoring the dueling switch.
fn critic_q_row(critic: &DuelingCritic, row: &CriticRow, draws: &[Vec<f64>], dueling: bool) -> f64 {
    if !dueling {
        return critic.advantage.infer_one(&row.advantage_input(&row.own)).expect("shapes fixed")[0];
    }
    crate::neural::dueling_q_with_draws(critic, &row.obs, &row.own, &row.others, &row.weights, draws)
        .expect("shapes fixed")
}

/// Squared-error critic fit against `targets` on the given rows; returns the
/// mean loss. One optimizer step each on the advantage and (when dueling)
/// value heads.
fn critic_update_agent(
    nets: &mut AgentNets,
    rows: &[CriticRow],
    targets: &[f64],
    draws: &[Vec<f64>],
    dueling: bool,
) -> f64 {
    let n = rows.len();
    let n_draws = draws.len();
    let blocks = if dueling { 1 + n_draws } else { 1 };
    let mut adv_rows = Vec::with_capacity(blocks * n);
    for row in rows {
        adv_rows.push(row.advantage_input(&row.own));
    }
    if dueling {
        for draw in draws {
            for row in rows {
                adv_rows.push(row.advantage_input(draw));
            }
        }
    }
    let adv_in = rows_to_array(adv_rows);
    let adv_cache = nets.critic.advantage.forward(&adv_in).expect("shapes fixed");
    let adv_out = adv_cache.output();

    let (val_cache, values) = if dueling {
        let val_in = rows_to_array(rows.iter().map(|r| r.value_input()).collect());
        let cache = nets.critic.value.forward(&val_in).expect("shapes fixed");
        let v: Vec<f64> = cache.output().column(0).to_vec();
        (Some(cache), v)
    } else {
        (None, vec![0.0; n])
    };

    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let mut q = values[i] + adv_out[[i, 0]];
        if dueling {
            let baseline: f64 =
                (0..n_draws).map(|d| adv_out[[(1 + d) * n + i, 0]]).sum::<f64>() / n_draws as f64;
            q -= baseline;
        }
        let err = q - targets[i];
        loss += err * err;
        grad[i] = 2.0 * err / n as f64;
    }
    loss /= n as f64;

    let mut adv_grad = Array2::zeros((blocks * n, 1));
    for i in 0..n {
        adv_grad[[i, 0]] = grad[i];
        if dueling {
            for d in 0..n_draws {
                adv_grad[[(1 + d) * n + i, 0]] = -grad[i] / n_draws as f64;
            }
        }
    }
    let (adv_grads, _) = nets.critic.advantage.backward(&adv_cache, &adv_grad);
    nets.opt_advantage.step(&mut nets.critic.advantage, &adv_grads);
    if let Some(cache) = val_cache {
        let mut val_grad = Array2::zeros((n, 1));
        for i in 0..n {
            val_grad[[i, 0]] = grad[i];
        }
        let (val_grads, _) = nets.critic.value.backward(&cache, &val_grad);
        nets.opt_value.step(&mut nets.critic.value, &val_grads);
    }
    loss
}

/// Ascent gradient of the mean critic value over the batch w.r.t. the policy
/// parameters, chained through the action input of the advantage head. The
/// dueling baseline and value head carry no dependence on the agent action.
fn policy_gradient_agent(
    nets: &AgentNets,
    policy_inputs: &[Vec<f64>],
    critic_rows: &[CriticRow],
) -> MlpGradients {
    let n = policy_inputs.len();
    let pol_in = rows_to_array(policy_inputs.to_vec());
    let pol_cache = nets.policy.forward(&pol_in).expect("shapes fixed");
    let actions = pol_cache.output();

    let act_dim = actions.ncols();
    let adv_rows: Vec<Vec<f64>> = critic_rows
        .iter()
        .enumerate()
        .map(|(i, row)| row.advantage_input(&actions.row(i).to_vec()))
        .collect();
    let adv_in = rows_to_array(adv_rows);
    let adv_cache = nets.critic.advantage.forward(&adv_in).expect("shapes fixed");
    let grad_out = Array2::from_elem((n, 1), 1.0 / n as f64);
    let (_, input_grads) = nets.critic.advantage.backward(&adv_cache, &grad_out);

    let mut dq_da = Array2::zeros((n, act_dim));
    for i in 0..n {
        let offset = critic_rows[i].obs.len();
        for a in 0..act_dim {
            dq_da[[i, a]] = input_grads[[i, offset + a]];
        }
    }
    let (grads, _) = nets.policy.backward(&pol_cache, &dq_da);
    grads
}

fn policy_update_agent(nets: &mut AgentNets, policy_inputs: &[Vec<f64>], critic_rows: &[CriticRow]) {
    let mut grads = policy_gradient_agent(nets, policy_inputs, critic_rows);
    // The optimizer descends; flip the ascent direction.
    grads.scale(-1.0);
    let mut policy = nets.policy.clone();
    nets.opt_policy.step(&mut policy, &grads);
    nets.policy = policy;
}

/// The learner: shared vehicle nets, edge nets, and the step counter.
#[derive(Clone, Debug)]
pub struct LearnerState {
    pub vehicle: AgentNets,
    pub edge: AgentNets,
    pub dueling: bool,
    pub step: u64,
    vehicle_action_dim: usize,
    edge_action_dim: usize,
    vehicle_count: usize,
}

impl LearnerState {
    pub fn new(env: &Environment, config: &TrainingConfig, rng: &mut ChaCha8Rng) -> Self {
        let v_obs = env.observe_vehicle(0).len();
        let e_obs = env.observe_edge().len();
        let va = env.vehicle_raw_len();
        let ea = env.edge_raw_len();
        let s = env.scenario.vehicles.len();
        let mut policy_sizes = vec![v_obs];
        policy_sizes.extend_from_slice(&config.policy_hidden);
        policy_sizes.push(va);
        let vehicle = AgentNets::new(
            &policy_sizes,
            v_obs,
            va,
            (s - 1) * va,
            &config.critic_hidden,
            config.policy_lr,
            config.critic_lr,
            rng,
        );
        let mut edge_policy_sizes = vec![e_obs + s * va];
        edge_policy_sizes.extend_from_slice(&config.policy_hidden);
        edge_policy_sizes.push(ea);
        let edge = AgentNets::new(
            &edge_policy_sizes,
            e_obs,
            ea,
            s * va,
            &config.critic_hidden,
            config.policy_lr,
            config.critic_lr,
            rng,
        );
        LearnerState {
            vehicle,
            edge,
            dueling: config.dueling,
            step: 0,
            vehicle_action_dim: va,
            edge_action_dim: ea,
            vehicle_count: s,
        }
    }

    pub fn make_actors(&self) -> ActorPolicies {
        ActorPolicies { vehicle: self.vehicle.policy.clone(), edge: self.edge.policy.clone() }
    }

    fn others_for(&self, actions: &[Vec<f64>], s: usize) -> Vec<f64> {
        actions
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != s)
            .flat_map(|(_, a)| a.iter().copied())
            .collect()
    }

    /// Next-slot joint action from the target policies.
    fn next_target_actions(&self, transition: &ReplayTransition) -> (Vec<Vec<f64>>, Vec<f64>) {
        let next_vehicle: Vec<Vec<f64>> = transition
            .next_vehicle_obs
            .iter()
            .map(|o| self.vehicle.policy_target.infer_one(o).expect("obs length fixed"))
            .collect();
        let mut edge_in = transition.next_edge_obs.clone();
        edge_in.extend(flatten(&next_vehicle));
        let next_edge = self.edge.policy_target.infer_one(&edge_in).expect("obs length fixed");
        (next_vehicle, next_edge)
    }

    /// Scalarized target for vehicle `s`: reward under the stored weights
    /// plus the discounted target-critic value of the target policies'
    /// next action; the bootstrap vanishes at terminal transitions.
    pub fn compute_vehicle_target(
        &self,
        transition: &ReplayTransition,
        s: usize,
        gamma: f64,
        draws: &[Vec<f64>],
    ) -> f64 {
        let immediate = transition.vehicle_rewards[s].scalarized(transition.weights);
        if transition.terminal {
            return immediate;
        }
        let (next_vehicle, _) = self.next_target_actions(transition);
        let row = CriticRow {
            obs: transition.next_vehicle_obs[s].clone(),
            own: next_vehicle[s].clone(),
            others: self.others_for(&next_vehicle, s),
            weights: [transition.next_weights.quality, transition.next_weights.profit],
        };
        immediate + gamma * critic_q_row(&self.vehicle.critic_target, &row, draws, self.dueling)
    }

    /// Mirror of [`Self::compute_vehicle_target`] for the edge agent.
    pub fn compute_edge_target(
        &self,
        transition: &ReplayTransition,
        gamma: f64,
        draws: &[Vec<f64>],
    ) -> f64 {
        let immediate = transition.edge_reward.scalarized(transition.weights);
        if transition.terminal {
            return immediate;
        }
        let (next_vehicle, next_edge) = self.next_target_actions(transition);
        let row = CriticRow {
            obs: transition.next_edge_obs.clone(),
            own: next_edge,
            others: flatten(&next_vehicle),
            weights: [transition.next_weights.quality, transition.next_weights.profit],
        };
        immediate + gamma * critic_q_row(&self.edge.critic_target, &row, draws, self.dueling)
    }

    /// One critic fit on a minibatch; returns (vehicle loss, edge loss).
    pub fn critic_update(
        &mut self,
        batch: &[&ReplayTransition],
        gamma: f64,
        n_baseline: usize,
        rng: &mut ChaCha8Rng,
    ) -> (f64, f64) {
        let draws_v = sample_baseline_draws(self.vehicle_action_dim, n_baseline, rng);
        let draws_e = sample_baseline_draws(self.edge_action_dim, n_baseline, rng);
        let s_count = self.vehicle_count;

        let mut v_rows = Vec::with_capacity(batch.len() * s_count);
        let mut v_targets = Vec::with_capacity(batch.len() * s_count);
        let mut e_rows = Vec::with_capacity(batch.len());
        let mut e_targets = Vec::with_capacity(batch.len());
        for tr in batch {
            for s in 0..s_count {
                v_targets.push(self.compute_vehicle_target(tr, s, gamma, &draws_v));
                v_rows.push(CriticRow {
                    obs: tr.vehicle_obs[s].clone(),
                    own: tr.vehicle_actions[s].clone(),
                    others: self.others_for(&tr.vehicle_actions, s),
                    weights: [tr.weights.quality, tr.weights.profit],
                });
            }
            e_targets.push(self.compute_edge_target(tr, gamma, &draws_e));
            e_rows.push(CriticRow {
                obs: tr.edge_obs.clone(),
                own: tr.edge_action.clone(),
                others: flatten(&tr.vehicle_actions),
                weights: [tr.weights.quality, tr.weights.profit],
            });
        }
        let lv = critic_update_agent(&mut self.vehicle, &v_rows, &v_targets, &draws_v, self.dueling);
        let le = critic_update_agent(&mut self.edge, &e_rows, &e_targets, &draws_e, self.dueling);
        (lv, le)
    }

    /// One deterministic-policy-gradient ascent step for both policies,
    /// critics held fixed.
    pub fn policy_update(&mut self, batch: &[&ReplayTransition]) {
        let s_count = self.vehicle_count;
        let mut v_inputs = Vec::with_capacity(batch.len() * s_count);
        let mut v_rows = Vec::with_capacity(batch.len() * s_count);
        let mut e_inputs = Vec::with_capacity(batch.len());
        let mut e_rows = Vec::with_capacity(batch.len());
        for tr in batch {
            for s in 0..s_count {
                v_inputs.push(tr.vehicle_obs[s].clone());
                v_rows.push(CriticRow {
                    obs: tr.vehicle_obs[s].clone(),
                    own: Vec::new(),
                    others: self.others_for(&tr.vehicle_actions, s),
                    weights: [tr.weights.quality, tr.weights.profit],
                });
            }
            let mut edge_in = tr.edge_obs.clone();
            edge_in.extend(flatten(&tr.vehicle_actions));
            e_inputs.push(edge_in);
            e_rows.push(CriticRow {
                obs: tr.edge_obs.clone(),
                own: Vec::new(),
                others: flatten(&tr.vehicle_actions),
                weights: [tr.weights.quality, tr.weights.profit],
            });
        }
        policy_update_agent(&mut self.vehicle, &v_inputs, &v_rows);
        policy_update_agent(&mut self.edge, &e_inputs, &e_rows);
    }

    /// Soft target blend on all four target networks.
    pub fn soft_update(&mut self, rate: f64) {
        self.vehicle.policy_target.blend_from(&self.vehicle.policy, rate);
        self.vehicle.critic_target.blend_from(&self.vehicle.critic, rate);
        self.edge.policy_target.blend_from(&self.edge.policy, rate);
        self.edge.critic_target.blend_from(&self.edge.critic, rate);
    }

    /// Replaces the actor's policies with exact copies of the targets (or
    /// the locals, per the switch).
    pub fn sync_actors(&self, actors: &mut ActorPolicies, from_targets: bool) {
        if from_targets {
            actors.vehicle = self.vehicle.policy_target.clone();
            actors.edge = self.edge.policy_target.clone();
        } else {
            actors.vehicle = self.vehicle.policy.clone();
            actors.edge = self.edge.policy.clone();
        }
    }
}

/// One training-iteration log record; serialized as one JSON line.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub exploration: f64,
    pub weight_quality: f64,
    pub vehicle_critic_loss: Option<f64>,
    pub edge_critic_loss: Option<f64>,
    pub reward_quality: f64,
    pub reward_profit: f64,
    pub scalarized_return: f64,
    pub qpuc: Option<f64>,
    pub ppuq: Option<f64>,
}

/// Finished training run: final learner, synced actors, and the history.
pub struct TrainOutcome {
    pub learner: LearnerState,
    pub actors: ActorPolicies,
    pub history: Vec<IterationRecord>,
}

/// Builds the raw joint action the current actor policies emit.
fn actor_joint_action(
    actors: &ActorPolicies,
    env: &Environment,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> RawJointAction {
    let vehicles: Vec<Vec<f64>> = (0..env.scenario.vehicles.len())
        .map(|s| act_vehicle(&actors.vehicle, &env.observe_vehicle(s), noise, rng))
        .collect();
    let edge = act_edge(&actors.edge, &env.observe_edge(), &vehicles, noise, rng);
    RawJointAction { vehicles, edge }
}

/// Deterministic greedy joint action (no exploration noise).
pub fn greedy_joint_action(actors: &ActorPolicies, env: &Environment) -> RawJointAction {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    actor_joint_action(actors, env, 0.0, &mut rng)
}

/// Runs the interleaved single-writer training loop: one collected episode
/// per iteration, then a fixed number of learner updates, with periodic
/// target and actor synchronization. Fully deterministic for a fixed
/// config and seed. `log` receives one JSON line per iteration.
pub fn train(
    env: &mut Environment,
    config: &TrainingConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut learner = LearnerState::new(env, config, &mut rng);
    let mut actors = learner.make_actors();
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut history = Vec::with_capacity(config.iterations);

    for iteration in 0..config.iterations {
        let noise = config.exploration_at(iteration);
        let w = match config.fixed_weights {
            Some(w) => w,
            None => sample_weight_vector(&mut rng),
        };
        env.reset(config.seed.wrapping_add(iteration as u64).wrapping_mul(0x9E37_79B9));
        env.set_weight_vector(w);

        let mut episode_reward = RewardVector::default();
        let mut scalarized_return = 0.0;
        while !env.is_done() {
            let vehicle_obs: Vec<Vec<f64>> =
                (0..env.scenario.vehicles.len()).map(|s| env.observe_vehicle(s)).collect();
            let edge_obs = env.observe_edge();
            let vehicle_actions: Vec<Vec<f64>> = vehicle_obs
                .iter()
                .map(|o| act_vehicle(&actors.vehicle, o, noise, &mut rng))
                .collect();
            let edge_action = act_edge(&actors.edge, &edge_obs, &vehicle_actions, noise, &mut rng);
            let raw = RawJointAction { vehicles: vehicle_actions.clone(), edge: edge_action.clone() };
            let out = env.step(&raw)?;
            episode_reward = episode_reward.add(out.reward);
            scalarized_return += out.reward.scalarized(w);
            let next_vehicle_obs: Vec<Vec<f64>> =
                (0..env.scenario.vehicles.len()).map(|s| env.observe_vehicle(s)).collect();
            buffer.push(ReplayTransition {
                vehicle_obs,
                edge_obs,
                weights: w,
                vehicle_actions,
                edge_action,
                vehicle_rewards: out.difference_rewards,
                edge_reward: out.edge_reward,
                next_vehicle_obs,
                next_edge_obs: env.observe_edge(),
                next_weights: w,
                terminal: env.is_done(),
            });
        }

        let mut losses = None;
        if buffer.len() >= config.warmup_transitions.max(config.batch_size) {
            for _ in 0..config.updates_per_iteration {
                let indices = buffer.sample_indices(config.batch_size, &mut rng);
                let batch: Vec<&ReplayTransition> = indices.iter().map(|&i| buffer.get(i)).collect();
                let (lv, le) =
                    learner.critic_update(&batch, config.gamma, config.n_baseline_actions, &mut rng);
                learner.policy_update(&batch);
                learner.step += 1;
                losses = Some((lv, le));
                if learner.step % config.target_period as u64 == 0 {
                    learner.soft_update(config.soft_update_rate);
                }
                if learner.step % config.actor_sync_period as u64 == 0 {
                    learner.sync_actors(&mut actors, config.sync_from_targets);
                }
            }
        }

        let slots = env.scenario.slot_count as f64;
        let record = IterationRecord {
            iteration,
            exploration: noise,
            weight_quality: w.quality,
            vehicle_critic_loss: losses.map(|(lv, _)| lv),
            edge_critic_loss: losses.map(|(_, le)| le),
            reward_quality: episode_reward.quality / slots,
            reward_profit: episode_reward.profit / slots,
            scalarized_return,
            qpuc: qpuc(env.scores()).ok(),
            ppuq: crate::twin_metrics::ppuq(env.scores()).ok(),
        };
        if let Some(out) = log.as_deref_mut() {
            serde_json::to_writer(&mut *out, &record)?;
            out.write_all(b"\n")?;
        }
        history.push(record);
    }
    // Leave the actors on the freshest parameters for evaluation.
    learner.sync_actors(&mut actors, config.sync_from_targets);
    Ok(TrainOutcome { learner, actors, history })
}

/// Evaluation summary over greedy episodes with a fixed preference.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_scalarized_return: f64,
    pub scalarized_returns: Vec<f64>,
    pub qpuc_per_episode: Vec<f64>,
    pub mean_qpuc: f64,
    pub qpuc_stderr: f64,
    pub mean_reward: RewardVector,
    pub aux: AuxiliaryMetrics,
}

/// Runs `episodes` deterministic episodes under `act` and aggregates the
/// returns and twin metrics. An episode that counts no twin scores a zero
/// quality-per-cost ratio.
pub fn evaluate_policy(
    env: &mut Environment,
    act: &mut dyn FnMut(&Environment, &mut ChaCha8Rng) -> RawJointAction,
    episodes: usize,
    w: WeightVector,
    seed: u64,
) -> Result<EvalSummary> {
    let mut returns = Vec::with_capacity(episodes);
    let mut qpucs = Vec::with_capacity(episodes);
    let mut total_reward = RewardVector::default();
    let mut all_scores: Vec<TwinScore> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for e in 0..episodes {
        env.reset(seed.wrapping_add(e as u64).wrapping_mul(0x2545_F491_4F6C_DD1D));
        env.set_weight_vector(w);
        let mut ret = 0.0;
        while !env.is_done() {
            let raw = act(env, &mut rng);
            let out = env.step(&raw)?;
            ret += out.reward.scalarized(w);
            total_reward = total_reward.add(out.reward);
        }
        returns.push(ret);
        qpucs.push(qpuc(env.scores()).unwrap_or(0.0));
        all_scores.extend_from_slice(env.scores());
    }
    let n = episodes as f64;
    let mean_q = qpucs.iter().sum::<f64>() / n;
    let var_q = qpucs.iter().map(|q| (q - mean_q) * (q - mean_q)).sum::<f64>() / (n - 1.0).max(1.0);
    let slots = env.scenario.slot_count as f64;
    Ok(EvalSummary {
        episodes,
        mean_scalarized_return: returns.iter().sum::<f64>() / n,
        scalarized_returns: returns,
        mean_qpuc: mean_q,
        qpuc_stderr: (var_q / n).sqrt(),
        qpuc_per_episode: qpucs,
        mean_reward: RewardVector {
            quality: total_reward.quality / (n * slots),
            profit: total_reward.profit / (n * slots),
        },
        aux: auxiliary_metrics(&all_scores),
    })
}
