//! Comparison policies: uniform-random allocation, a centralized
//! fixed-weight single-agent learner over the concatenated observation and
//! joint action, and the multi-agent fixed-weight variant (shared machinery
//! with the main learner, monolithic critic head, frozen preference).

use std::io::Write;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{Environment, RawJointAction, RewardVector, WeightVector};
use crate::mamo::{train, ActorPolicies, IterationRecord, TrainingConfig};
use crate::neural::{Adam, Mlp, OutputActivation};
use crate::twin_metrics::{ppuq, qpuc};
use crate::Result;

/// Which comparison policy to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMode {
    /// Uniform draws over the raw action cube every slot.
    Random,
    /// One agent observing everything and emitting the full joint raw
    /// action, preference frozen at (0.5, 0.5).
    CentralizedFixed,
    /// Multi-agent topology with the preference frozen at (0.5, 0.5), a
    /// monolithic (non-dueling) critic head, and no weight resampling.
    MultiagentFixed,
}

/// The preference used by the learned baselines.
pub const FIXED_WEIGHTS: WeightVector = WeightVector { quality: 0.5, profit: 0.5 };

/// Uniform draw over the raw joint action cube; the standard decoders then
/// guarantee every constraint.
pub fn ra_action<R: Rng>(env: &Environment, rng: &mut R) -> RawJointAction {
    let va = env.vehicle_raw_len();
    RawJointAction {
        vehicles: (0..env.scenario.vehicles.len())
            .map(|_| (0..va).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect(),
        edge: (0..env.edge_raw_len()).map(|_| rng.gen_range(0.0..1.0)).collect(),
    }
}

/// Trained artifact of a baseline run, when the mode learns anything.
#[derive(Clone, Debug)]
pub enum BaselinePolicy {
    Random,
    Centralized(Mlp),
    Multiagent(ActorPolicies),
}

pub struct BaselineOutcome {
    pub history: Vec<IterationRecord>,
    pub policy: BaselinePolicy,
}

/// Concatenated observation of every vehicle plus the edge.
pub fn centralized_observation(env: &Environment) -> Vec<f64> {
    let mut obs = Vec::new();
    for s in 0..env.scenario.vehicles.len() {
        obs.extend(env.observe_vehicle(s));
    }
    obs.extend(env.observe_edge());
    obs
}

/// Splits a flat joint action into per-vehicle raws plus the edge raw.
pub fn split_joint_action(env: &Environment, flat: &[f64]) -> RawJointAction {
    let va = env.vehicle_raw_len();
    let s = env.scenario.vehicles.len();
    let vehicles = (0..s).map(|i| flat[i * va..(i + 1) * va].to_vec()).collect();
    RawJointAction { vehicles, edge: flat[s * va..].to_vec() }
}

/// Total joint action length the centralized agent emits.
pub fn centralized_action_len(env: &Environment) -> usize {
    env.scenario.vehicles.len() * env.vehicle_raw_len() + env.edge_raw_len()
}

struct CentralizedTransition {
    obs: Vec<f64>,
    action: Vec<f64>,
    reward: RewardVector,
    next_obs: Vec<f64>,
    terminal: bool,
}

fn rows_to_array(rows: Vec<Vec<f64>>) -> Array2<f64> {
    let cols = rows.first().map(|r| r.len()).unwrap_or(0);
    let n = rows.len();
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
        .expect("uniform row lengths")
}

fn critic_input(obs: &[f64], action: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(obs.len() + action.len() + 2);
    v.extend_from_slice(obs);
    v.extend_from_slice(action);
    v.extend_from_slice(&[FIXED_WEIGHTS.quality, FIXED_WEIGHTS.profit]);
    v
}

/// Single-agent deterministic-policy-gradient run over the joint space.
fn run_centralized(
    env: &mut Environment,
    config: &TrainingConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<BaselineOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let obs_dim = {
        env.reset(0);
        centralized_observation(env).len()
    };
    let act_dim = centralized_action_len(env);

    let mut policy_sizes = vec![obs_dim];
    policy_sizes.extend_from_slice(&config.policy_hidden);
    policy_sizes.push(act_dim);
    let mut critic_sizes = vec![obs_dim + act_dim + 2];
    critic_sizes.extend_from_slice(&config.critic_hidden);
    critic_sizes.push(1);

    let mut policy = Mlp::new(&policy_sizes, OutputActivation::Logistic, &mut rng);
    let mut critic = Mlp::new(&critic_sizes, OutputActivation::Identity, &mut rng);
    let mut policy_target = policy.clone();
    let mut critic_target = critic.clone();
    let mut opt_policy = Adam::new(&policy, config.policy_lr);
    let mut opt_critic = Adam::new(&critic, config.critic_lr);

    let mut buffer: Vec<CentralizedTransition> = Vec::new();
    let mut next_slot = 0usize;
    let mut history = Vec::with_capacity(config.iterations);
    let mut step = 0u64;

    for iteration in 0..config.iterations {
        let noise = config.exploration_start
            + if config.iterations > 1 {
                iteration as f64 / (config.iterations - 1) as f64
                    * (config.exploration_end - config.exploration_start)
            } else {
                0.0
            };
        env.reset(config.seed.wrapping_add(iteration as u64).wrapping_mul(0x9E37_79B9));
        env.set_weight_vector(FIXED_WEIGHTS);
        let mut episode_reward = RewardVector::default();
        let mut scalarized_return = 0.0;
        while !env.is_done() {
            let obs = centralized_observation(env);
            let mut action = policy.infer_one(&obs).expect("obs length fixed");
            for a in &mut action {
                if noise > 0.0 {
                    let n: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                    *a += noise * n;
                }
                *a = a.clamp(0.0, 1.0);
            }
            let out = env.step(&split_joint_action(env, &action))?;
            episode_reward = episode_reward.add(out.reward);
            scalarized_return += out.reward.scalarized(FIXED_WEIGHTS);
            let transition = CentralizedTransition {
                obs,
                action,
                reward: out.reward,
                next_obs: centralized_observation(env),
                terminal: env.is_done(),
            };
            if buffer.len() < config.buffer_capacity {
                buffer.push(transition);
            } else {
                buffer[next_slot] = transition;
                next_slot = (next_slot + 1) % config.buffer_capacity;
            }
        }

        let mut losses = None;
        if buffer.len() >= config.warmup_transitions.max(config.batch_size) {
            for _ in 0..config.updates_per_iteration {
                let indices =
                    rand::seq::index::sample(&mut rng, buffer.len(), config.batch_size).into_vec();
                // Critic fit.
                let mut inputs = Vec::with_capacity(indices.len());
                let mut targets = Vec::with_capacity(indices.len());
                for &i in &indices {
                    let tr = &buffer[i];
                    let mut y = tr.reward.scalarized(FIXED_WEIGHTS);
                    if !tr.terminal {
                        let next_action =
                            policy_target.infer_one(&tr.next_obs).expect("obs length fixed");
                        let q = critic_target
                            .infer_one(&critic_input(&tr.next_obs, &next_action))
                            .expect("shapes fixed")[0];
                        y += config.gamma * q;
                    }
                    targets.push(y);
                    inputs.push(critic_input(&tr.obs, &tr.action));
                }
                let input = rows_to_array(inputs);
                let cache = critic.forward(&input).expect("shapes fixed");
                let n = indices.len();
                let mut loss = 0.0;
                let mut grad = Array2::zeros((n, 1));
                for i in 0..n {
                    let err = cache.output()[[i, 0]] - targets[i];
                    loss += err * err;
                    grad[[i, 0]] = 2.0 * err / n as f64;
                }
                loss /= n as f64;
                let (critic_grads, _) = critic.backward(&cache, &grad);
                opt_critic.step(&mut critic, &critic_grads);

                // Policy ascent through the critic's action inputs.
                let pol_inputs: Vec<Vec<f64>> =
                    indices.iter().map(|&i| buffer[i].obs.clone()).collect();
                let pol_in = rows_to_array(pol_inputs);
                let pol_cache = policy.forward(&pol_in).expect("shapes fixed");
                let actions = pol_cache.output().clone();
                let q_inputs: Vec<Vec<f64>> = indices
                    .iter()
                    .enumerate()
                    .map(|(row, &i)| critic_input(&buffer[i].obs, &actions.row(row).to_vec()))
                    .collect();
                let q_in = rows_to_array(q_inputs);
                let q_cache = critic.forward(&q_in).expect("shapes fixed");
                let ones = Array2::from_elem((n, 1), 1.0 / n as f64);
                let (_, input_grads) = critic.backward(&q_cache, &ones);
                let mut dq_da = Array2::zeros((n, act_dim));
                for row in 0..n {
                    for a in 0..act_dim {
                        dq_da[[row, a]] = -input_grads[[row, obs_dim + a]];
                    }
                }
                let (mut policy_grads, _) = policy.backward(&pol_cache, &dq_da);
                // dq_da already negated above; Adam descends this loss.
                let _ = &mut policy_grads;
                opt_policy.step(&mut policy, &policy_grads);

                step += 1;
                losses = Some(loss);
                if step % config.target_period as u64 == 0 {
                    policy_target.blend_from(&policy, config.soft_update_rate);
                    critic_target.blend_from(&critic, config.soft_update_rate);
                }
            }
        }

        let slots = env.scenario.slot_count as f64;
        let record = IterationRecord {
            iteration,
            exploration: noise,
            weight_quality: FIXED_WEIGHTS.quality,
            vehicle_critic_loss: losses,
            edge_critic_loss: losses,
            reward_quality: episode_reward.quality / slots,
            reward_profit: episode_reward.profit / slots,
            scalarized_return,
            qpuc: qpuc(env.scores()).ok(),
            ppuq: ppuq(env.scores()).ok(),
        };
        if let Some(out) = log.as_deref_mut() {
            serde_json::to_writer(&mut *out, &record)?;
            out.write_all(b"\n")?;
        }
        history.push(record);
    }
    Ok(BaselineOutcome { history, policy: BaselinePolicy::Centralized(policy) })
}

/// Pure-random rollout history with the shared log schema.
fn run_random(
    env: &mut Environment,
    config: &TrainingConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<BaselineOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        env.reset(config.seed.wrapping_add(iteration as u64).wrapping_mul(0x9E37_79B9));
        env.set_weight_vector(FIXED_WEIGHTS);
        let mut episode_reward = RewardVector::default();
        let mut scalarized_return = 0.0;
        while !env.is_done() {
            let out = env.step(&ra_action(env, &mut rng))?;
            episode_reward = episode_reward.add(out.reward);
            scalarized_return += out.reward.scalarized(FIXED_WEIGHTS);
        }
        let slots = env.scenario.slot_count as f64;
        let record = IterationRecord {
            iteration,
            exploration: 1.0,
            weight_quality: FIXED_WEIGHTS.quality,
            vehicle_critic_loss: None,
            edge_critic_loss: None,
            reward_quality: episode_reward.quality / slots,
            reward_profit: episode_reward.profit / slots,
            scalarized_return,
            qpuc: qpuc(env.scores()).ok(),
            ppuq: ppuq(env.scores()).ok(),
        };
        if let Some(out) = log.as_deref_mut() {
            serde_json::to_writer(&mut *out, &record)?;
            out.write_all(b"\n")?;
        }
        history.push(record);
    }
    Ok(BaselineOutcome { history, policy: BaselinePolicy::Random })
}

/// Runs one baseline mode with the shared metric schema.
pub fn run_baseline(
    mode: BaselineMode,
    env: &mut Environment,
    config: &TrainingConfig,
    log: Option<&mut dyn Write>,
) -> Result<BaselineOutcome> {
    match mode {
        BaselineMode::Random => run_random(env, config, log),
        BaselineMode::CentralizedFixed => run_centralized(env, config, log),
        BaselineMode::MultiagentFixed => {
            let fixed = TrainingConfig {
                dueling: false,
                fixed_weights: Some(FIXED_WEIGHTS),
                ..config.clone()
            };
            let outcome = train(env, &fixed, log)?;
            Ok(BaselineOutcome {
                history: outcome.history,
                policy: BaselinePolicy::Multiagent(outcome.actors),
            })
        }
    }
}
