//! Acceptance suite: one test per release criterion, each printing a single
//! PASS/FAIL line. Expected values come from closed forms, independent
//! discrete-event simulation, finite differences, and straight-line
//! reimplementations — never from the code under test.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use dtvec::baselines::ra_action;
use dtvec::config::{RunConfig, SweepAxis};
use dtvec::environment::{
    Environment, RawJointAction, RewardVector, WeightVector,
};
use dtvec::mamo::{evaluate_policy, greedy_joint_action, train, ActorPolicies};
use dtvec::neural::{
    dueling_q_with_draws, DuelingCritic, Mlp, OutputActivation,
};
use dtvec::par::maybe_par_map;
use dtvec::scenario::{
    EdgeSpec, EntityAssociation, InfoSpec, Point, Scenario, SensingCapability, TrajectoryPoint,
    VehicleSpec,
};
use dtvec::sensing_queue::{
    pk_queuing_time, simulate_queue_oracle, QueueEntry, UploadTimeModel,
};
use dtvec::twin_metrics::{MetricWeights, NormalizationState};
use dtvec::v2i_channel::{min_power_for_reliability, snr, ChannelParams};

fn report(number: usize, name: &str, pass: bool) {
    println!("criterion {number:02} ({name}): {}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {number:02} ({name}) failed");
}

// ---------------------------------------------------------------------------
// 1. Closed-form queuing delays vs a discrete-event simulation.

#[test]
fn criterion_01_queue_closed_form_matches_des() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut instances = Vec::new();
    for _ in 0..20 {
        // Three classes, total workload in [0.3, 0.7], service cv in [0, 1].
        let rho_total = rng.gen_range(0.4..0.65);
        let splits: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..1.0)).collect();
        let sum: f64 = splits.iter().sum();
        let mut entries = Vec::new();
        for (k, s) in splits.iter().enumerate() {
            let rho = rho_total * s / sum;
            let frequency = rng.gen_range(1.0..2.0);
            let mean = rho / frequency;
            let cv = rng.gen_range(0.2..0.8);
            entries.push(QueueEntry {
                info_id: k as u32,
                frequency,
                priority: 3 - k as i32,
                upload_time: UploadTimeModel {
                    mean,
                    second_moment: mean * mean * (1.0 + cv * cv),
                },
            });
        }
        instances.push(entries);
    }
    let results = maybe_par_map(instances, true, |entries| {
        let des = simulate_queue_oracle(&entries, 1_000_000, 7).unwrap();
        let errors: Vec<f64> = entries
            .iter()
            .zip(&des)
            .map(|(e, &sim)| {
                let closed = pk_queuing_time(e, &entries).unwrap();
                (sim - closed).abs() / closed
            })
            .collect();
        errors
    });
    let worst = results.iter().flatten().cloned().fold(0.0f64, f64::max);
    let elapsed = started.elapsed();
    println!("  worst relative error {worst:.4}, elapsed {elapsed:?}");
    report(
        1,
        "queue closed form vs discrete-event oracle",
        worst <= 0.03 && elapsed <= Duration::from_secs(120),
    );
}

// ---------------------------------------------------------------------------
// 2. Deterministic-service cross-check against the textbook value.

#[test]
fn criterion_02_deterministic_service_cross_check() {
    // One class, lambda = 0.5, deterministic unit service: mean wait is
    // lambda * beta2 / (2 (1 - rho)) = 0.5 * 1 / (2 * 0.5) = 0.5.
    let entry = QueueEntry {
        info_id: 0,
        frequency: 0.5,
        priority: 1,
        upload_time: UploadTimeModel { mean: 1.0, second_moment: 1.0 },
    };
    let entries = vec![entry.clone()];
    let expected = 0.5;
    let closed = pk_queuing_time(&entry, &entries).unwrap();
    let des = simulate_queue_oracle(&entries, 1_000_000, 3).unwrap()[0];
    let pass = (closed - expected).abs() < 1e-12 && (des - expected).abs() / expected <= 0.03;
    report(2, "deterministic-service mean wait", pass);
}

// ---------------------------------------------------------------------------
// 3. Reliability floor is conservative under Gaussian fading.

#[test]
fn criterion_03_reliability_floor_conservative() {
    let params = ChannelParams::default();
    let normal = Normal::new(params.fading_mean, params.fading_var.sqrt()).unwrap();
    let mut pass = true;
    for (i, dis) in [50.0, 150.0, 300.0, 450.0].into_iter().enumerate() {
        let power = min_power_for_reliability(dis, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(300 + i as u64);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| {
                let gain: f64 = normal.sample(&mut rng).max(1e-12);
                snr(dis, power, gain, &params) >= params.snr_target
            })
            .count();
        pass &= hits as f64 / n as f64 >= params.reliability;
    }
    report(3, "reliability floor conservative under Gaussian fading", pass);
}

// ---------------------------------------------------------------------------
// 4. Analytic gradients vs central differences on random networks.

fn network_loss(mlp: &Mlp, input: &Array2<f64>, grad_out: &Array2<f64>) -> f64 {
    let out = mlp.infer(input).unwrap();
    (&out * grad_out).sum()
}

#[test]
fn criterion_04_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for net in 0..10 {
        let activation = if net % 2 == 0 { OutputActivation::Identity } else { OutputActivation::Logistic };
        let sizes = vec![
            rng.gen_range(2..5),
            rng.gen_range(3..6),
            rng.gen_range(2..5),
            rng.gen_range(1..4),
        ];
        let mut mlp = Mlp::new(&sizes, activation, &mut rng);
        let batch = 3;
        let input = Array2::from_shape_fn((batch, sizes[0]), |_| rng.gen_range(-1.0..1.0));
        let grad_out = Array2::from_shape_fn((batch, *sizes.last().unwrap()), |_| rng.gen_range(-1.0..1.0));
        let cache = mlp.forward(&input).unwrap();
        let (grads, _) = mlp.backward(&cache, &grad_out);
        let h = 1e-6;
        let base = network_loss(&mlp, &input, &grad_out);
        for (l, (gw, gb)) in grads.layers.iter().enumerate() {
            for ((r, c), &analytic) in gw.indexed_iter() {
                let orig = mlp.layers[l].weights[[r, c]];
                mlp.layers[l].weights[[r, c]] = orig + h;
                let plus = network_loss(&mlp, &input, &grad_out);
                mlp.layers[l].weights[[r, c]] = orig - h;
                let minus = network_loss(&mlp, &input, &grad_out);
                mlp.layers[l].weights[[r, c]] = orig;
                let fd = (plus - minus) / (2.0 * h);
                // A second difference far above the h^2 curvature scale
                // means the perturbation crossed a rectifier kink; finite
                // differences are meaningless there.
                if (plus + minus - 2.0 * base).abs() > 1e-9 {
                    continue;
                }
                worst = worst.max((analytic - fd).abs() / fd.abs().max(1e-6));
            }
            for (j, &analytic) in gb.iter().enumerate() {
                let orig = mlp.layers[l].bias[j];
                mlp.layers[l].bias[j] = orig + h;
                let plus = network_loss(&mlp, &input, &grad_out);
                mlp.layers[l].bias[j] = orig - h;
                let minus = network_loss(&mlp, &input, &grad_out);
                mlp.layers[l].bias[j] = orig;
                let fd = (plus - minus) / (2.0 * h);
                if (plus + minus - 2.0 * base).abs() > 1e-9 {
                    continue;
                }
                worst = worst.max((analytic - fd).abs() / fd.abs().max(1e-6));
            }
        }
    }
    println!("  worst relative error {worst:.3e}");
    report(4, "gradients vs central differences", worst < 1e-4);
}

// ---------------------------------------------------------------------------
// 5. Dueling aggregation identities.

#[test]
fn criterion_05_dueling_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (obs_d, own_d, others_d, w_d) = (4, 3, 2, 2);
    let obs: Vec<f64> = (0..obs_d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let own: Vec<f64> = (0..own_d).map(|_| rng.gen_range(0.0..1.0)).collect();
    let others: Vec<f64> = (0..others_d).map(|_| rng.gen_range(0.0..1.0)).collect();
    let w = [0.5, 0.5];
    let draws: Vec<Vec<f64>> =
        (0..6).map(|_| (0..own_d).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();

    // Constant advantage (all-zero net plus output bias) leaves Q = V.
    let mut pass = true;
    for c in [0.0, 0.3, -1.7] {
        let mut critic = DuelingCritic::new(obs_d, own_d, others_d, w_d, &[5], &mut rng);
        critic.advantage = Mlp::zeros(&[obs_d + own_d + others_d + w_d, 5, 1], OutputActivation::Identity);
        let last = critic.advantage.layers.len() - 1;
        critic.advantage.layers[last].bias[0] = c;
        let v = critic.value.infer_one(&[obs.clone(), w.to_vec()].concat()).unwrap()[0];
        let q = dueling_q_with_draws(&critic, &obs, &own, &others, &w, &draws).unwrap();
        pass &= (q - v).abs() <= 1e-12;
    }

    // Shifting every advantage output by a constant leaves Q unchanged.
    for shift in [0.9, -2.4] {
        let mut critic = DuelingCritic::new(obs_d, own_d, others_d, w_d, &[6, 4], &mut rng);
        let q0 = dueling_q_with_draws(&critic, &obs, &own, &others, &w, &draws).unwrap();
        let last = critic.advantage.layers.len() - 1;
        critic.advantage.layers[last].bias[0] += shift;
        let q1 = dueling_q_with_draws(&critic, &obs, &own, &others, &w, &draws).unwrap();
        pass &= (q0 - q1).abs() <= 1e-12;
    }
    report(5, "dueling aggregation identities", pass);
}

// ---------------------------------------------------------------------------
// 6. Exhaustive slot evaluation vs a straight-line reimplementation.

/// Fixed two-vehicle / three-info / two-twin scenario for the metric oracle.
fn oracle_scenario() -> Scenario {
    let stationary = |id, x: f64, y: f64, caps: Vec<SensingCapability>| VehicleSpec {
        id,
        trajectory: vec![
            TrajectoryPoint { time: 0.0, x, y },
            TrajectoryPoint { time: 1e4, x, y },
        ],
        capabilities: caps,
        power_cap: 0.1,
    };
    let cap = |info_id, lo, hi, cost| SensingCapability {
        info_id,
        freq_min: lo,
        freq_max: hi,
        sensing_cost: cost,
    };
    Scenario {
        slot_count: 20,
        slot_duration: 1.0,
        infos: vec![
            InfoSpec { id: 0, type_tag: 0, update_interval: 2.0, size_bits: 4e4 },
            InfoSpec { id: 1, type_tag: 0, update_interval: 3.0, size_bits: 6e4 },
            InfoSpec { id: 2, type_tag: 0, update_interval: 5.0, size_bits: 5e4 },
        ],
        vehicles: vec![
            stationary(0, 600.0, 500.0, vec![cap(0, 0.5, 2.0, 0.2), cap(1, 0.5, 1.5, 0.3)]),
            stationary(1, 500.0, 700.0, vec![cap(1, 0.5, 2.0, 0.25), cap(2, 0.5, 1.0, 0.1)]),
        ],
        edge: EdgeSpec { location: Point { x: 500.0, y: 500.0 }, range: 500.0, bandwidth: 2e6 },
        entities: vec![
            EntityAssociation { entity_id: 0, required_info: vec![0, 1] },
            EntityAssociation { entity_id: 1, required_info: vec![1, 2] },
        ],
        seed: 7,
    }
}

#[derive(Clone, Copy)]
struct OracleDelivered {
    info_id: u32,
    vehicle: usize,
    arrival: f64,
    updating: f64,
    queuing: f64,
    duration: f64,
    energy: f64,
    sensing_cost: f64,
}

#[derive(Clone, Copy)]
struct OracleScore {
    timeliness: f64,
    consistency: f64,
    redundancy: f64,
    sensing_cost: f64,
    transmission_cost: f64,
    qdt: f64,
    cdt: f64,
    pdt: f64,
}

/// Straight-line recomputation of one slot-0 evaluation on the fixed
/// scenario above: decoding, queue delays, piecewise transmission, the five
/// raw metrics, shared-range normalization, and the reward.
fn oracle_eval(raw: &RawJointAction, fading: &[f64]) -> (RewardVector, Vec<OracleScore>) {
    // Scenario constants.
    let sizes = [4e4, 6e4, 5e4];
    let intervals = [2.0, 3.0, 5.0];
    let caps: [&[(u32, f64, f64, f64)]; 2] = [
        &[(0, 0.5, 2.0, 0.2), (1, 0.5, 1.5, 0.3)],
        &[(1, 0.5, 2.0, 0.25), (2, 0.5, 1.0, 0.1)],
    ];
    let dis = [
        ((600.0f64 - 500.0).powi(2) + (500.0f64 - 500.0).powi(2)).sqrt().max(1.0),
        ((500.0f64 - 500.0).powi(2) + (700.0f64 - 500.0).powi(2)).sqrt().max(1.0),
    ];
    let power_cap = 0.1;
    let bandwidth = 2e6;
    let slot_count = 20usize;
    let slot_duration = 1.0;
    // Channel constants.
    let (noise, antenna, ploss, mu, var, snr_tgt, delta): (f64, f64, f64, f64, f64, f64, f64) =
        (1e-12, 1.0, 3.0, 2.0, 0.4, 10.0, 0.9);
    let snr_of = |d: f64, p: f64, g: f64| g * antenna * d.powf(-ploss) * p / noise;
    let rate_of = |b: f64, s: f64| b * (1.0 + s).log2();
    let power_floor = |d: f64| {
        let margin = (delta * var / (1.0 - delta)).sqrt();
        snr_tgt * noise * d.powf(ploss) / (antenna * (mu - margin))
    };
    // Metric weights.
    let (w1, w2, w3, w4, w5) = (0.6, 0.4, 0.2, 0.4, 0.4);
    let eps = 1e-3;

    // Edge split over both in-range vehicles.
    let total = raw.edge[0].max(0.0) + raw.edge[1].max(0.0);
    let share = |v: usize| {
        if total > 0.0 { raw.edge[v].max(0.0) / total * bandwidth } else { 0.5 * bandwidth }
    };

    // Snapshot accumulators: entity 0 requires {0, 1}, entity 1 {1, 2}.
    let targets_of = |id: u32| -> &'static [usize] {
        match id {
            0 => &[0],
            1 => &[0, 1],
            _ => &[1],
        }
    };
    let mut delivered: [Vec<OracleDelivered>; 2] = [Vec::new(), Vec::new()];
    let mut undelivered: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];

    for v in 0..2 {
        let rawv = &raw.vehicles[v];
        // Decode gated sensing decisions: (info, frequency, score).
        let mut sensed: Vec<(u32, f64, i32)> = Vec::new();
        let mut scored: Vec<(f64, u32)> = Vec::new();
        for (k, &(id, lo, hi, _)) in caps[v].iter().enumerate() {
            if rawv[3 * k] < 0.5 {
                continue;
            }
            let knob = rawv[3 * k + 1].clamp(0.0, 1.0);
            sensed.push((id, lo + knob * (hi - lo), 0));
            scored.push((rawv[3 * k + 2], id));
        }
        let mut order: Vec<usize> = (0..scored.len()).collect();
        order.sort_by(|&a, &b| {
            scored[b].0.partial_cmp(&scored[a].0).unwrap().then(scored[a].1.cmp(&scored[b].1))
        });
        for (pos, &idx) in order.iter().enumerate() {
            sensed[idx].2 = (sensed.len() - pos) as i32;
        }
        let power = rawv[rawv.len() - 1].clamp(0.0, 1.0) * power_cap;
        let mean_rate = rate_of(share(v), snr_of(dis[v], power, mu));
        let uploads = power >= power_floor(dis[v]) && mean_rate > 0.0 && !sensed.is_empty();

        if uploads {
            // Workload repair: proportional slow-down with band floors, then
            // drop the lowest priority when nothing changes.
            let alpha_of = |id: u32| sizes[id as usize] / mean_rate;
            let mut guard = 0;
            loop {
                let load: f64 = sensed.iter().map(|&(id, f, _)| f * alpha_of(id)).sum();
                if load < 0.95 || sensed.is_empty() {
                    break;
                }
                let factor = 0.95 / load * (1.0 - 1e-9);
                let mut changed = false;
                for d in &mut sensed {
                    let floor = caps[v].iter().find(|c| c.0 == d.0).unwrap().1;
                    let scaled = (d.1 * factor).max(floor);
                    if scaled < d.1 {
                        d.1 = scaled;
                        changed = true;
                    }
                }
                guard += 1;
                if !changed || guard > 200 {
                    let drop = sensed
                        .iter()
                        .enumerate()
                        .min_by_key(|(_, d)| d.2)
                        .map(|(i, _)| i)
                        .unwrap();
                    sensed.remove(drop);
                    guard = 0;
                }
            }
        }
        let uploads = uploads && !sensed.is_empty();

        // Constant rate profile while stationary in coverage.
        let actual_rate = rate_of(share(v), snr_of(dis[v], power, fading[v]));

        let mut by_id: Vec<(u32, f64, i32)> = sensed.clone();
        by_id.sort_by_key(|d| d.0);
        for &(id, freq, prio) in &by_id {
            let cost = caps[v].iter().find(|c| c.0 == id).unwrap().3;
            if !uploads {
                for &e in targets_of(id) {
                    undelivered[e].push((cost, 0.0));
                }
                continue;
            }
            // Closed-form queuing delay among this vehicle's classes.
            let second = |m: f64| m * m * (1.0 + 0.3 * 0.3);
            let alpha = sizes[id as usize] / mean_rate;
            let own = freq * alpha;
            let rho_ahead: f64 = sensed
                .iter()
                .filter(|d| d.2 > prio)
                .map(|&(i, f, _)| f * (sizes[i as usize] / mean_rate))
                .sum();
            let residual = freq * second(alpha)
                + sensed
                    .iter()
                    .filter(|d| d.2 > prio)
                    .map(|&(i, f, _)| f * second(sizes[i as usize] / mean_rate))
                    .sum::<f64>();
            let q = 1.0 / (1.0 - rho_ahead) * (alpha + residual / (2.0 * (1.0 - rho_ahead - own)))
                - alpha;
            let arrival = (0.0f64 * freq).floor() / freq;
            let updating = (arrival / intervals[id as usize]).floor() * intervals[id as usize];
            // Piecewise transmission starting q seconds into the profile.
            let mut remaining = sizes[id as usize];
            let mut elapsed = 0.0;
            let mut outcome: Option<f64> = None;
            for i in 0..slot_count {
                let seg_start = i as f64 * slot_duration;
                let seg_end = seg_start + slot_duration;
                if seg_end <= q {
                    continue;
                }
                let usable = seg_end - seg_start.max(q);
                if actual_rate > 0.0 && remaining <= actual_rate * usable {
                    outcome = Some(elapsed + remaining / actual_rate);
                    break;
                }
                remaining -= actual_rate * usable;
                elapsed += usable;
            }
            match outcome {
                Some(duration) => {
                    for &e in targets_of(id) {
                        delivered[e].push(OracleDelivered {
                            info_id: id,
                            vehicle: v,
                            arrival,
                            updating,
                            queuing: q,
                            duration,
                            energy: power * duration,
                            sensing_cost: cost,
                        });
                    }
                }
                None => {
                    for &e in targets_of(id) {
                        undelivered[e].push((cost, power * elapsed));
                    }
                }
            }
        }
    }

    // Raw metrics per counted twin.
    let raw_metrics = |e: usize| -> [f64; 5] {
        let del = &delivered[e];
        let mut vehicles: Vec<usize> = del.iter().map(|d| d.vehicle).collect();
        vehicles.sort_unstable();
        vehicles.dedup();
        let timeliness: f64 = vehicles
            .iter()
            .map(|&v| {
                del.iter()
                    .filter(|d| d.vehicle == v)
                    .map(|d| d.arrival + d.queuing + d.duration - d.updating)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum();
        let mut min_u = f64::INFINITY;
        let mut max_u = f64::NEG_INFINITY;
        for d in del {
            min_u = min_u.min(d.updating);
            max_u = max_u.max(d.updating);
        }
        let consistency = if del.is_empty() { 0.0 } else { max_u - min_u };
        let mut ids: Vec<u32> = del.iter().map(|d| d.info_id).collect();
        ids.sort_unstable();
        let mut redundancy = 0usize;
        let mut i = 0;
        while i < ids.len() {
            let j = ids[i..].iter().take_while(|&&x| x == ids[i]).count();
            redundancy += j - 1;
            i += j;
        }
        let sensing: f64 = del.iter().map(|d| d.sensing_cost).sum::<f64>()
            + undelivered[e].iter().map(|u| u.0).sum::<f64>();
        let transmission: f64 = del.iter().map(|d| d.energy).sum::<f64>()
            + undelivered[e].iter().map(|u| u.1).sum::<f64>();
        [timeliness, consistency, redundancy as f64, sensing, transmission]
    };

    let counted: Vec<usize> = (0..2).filter(|&e| !delivered[e].is_empty()).collect();
    if counted.is_empty() {
        return (RewardVector::default(), Vec::new());
    }
    let mut mins = [f64::INFINITY; 5];
    let mut maxs = [f64::NEG_INFINITY; 5];
    for &e in &counted {
        for (m, v) in raw_metrics(e).into_iter().enumerate() {
            mins[m] = mins[m].min(v);
            maxs[m] = maxs[m].max(v);
        }
    }
    let normalize = |m: usize, v: f64| {
        let range = maxs[m] - mins[m];
        let scaled = if range > 0.0 { (v - mins[m]) / range } else { 0.0 };
        scaled.clamp(eps, 1.0 - eps)
    };
    let scores: Vec<OracleScore> = counted
        .iter()
        .map(|&e| {
            let r = raw_metrics(e);
            let qdt = w1 * (1.0 - normalize(0, r[0])) + w2 * (1.0 - normalize(1, r[1]));
            let cdt = w3 * normalize(2, r[2]) + w4 * normalize(3, r[3]) + w5 * normalize(4, r[4]);
            OracleScore {
                timeliness: r[0],
                consistency: r[1],
                redundancy: r[2],
                sensing_cost: r[3],
                transmission_cost: r[4],
                qdt,
                cdt,
                pdt: 1.0 - cdt,
            }
        })
        .collect();
    let n = scores.len() as f64;
    let reward = RewardVector {
        quality: scores.iter().map(|s| s.qdt).sum::<f64>() / n,
        profit: scores.iter().map(|s| s.pdt).sum::<f64>() / n,
    };
    (reward, scores)
}

#[test]
fn criterion_06_metric_oracle_exhaustive() {
    let started = Instant::now();
    let env = Environment::new(oracle_scenario(), ChannelParams::default(), MetricWeights::default())
        .unwrap();
    let fading = vec![2.0, 1.7];
    let levels = [0.0, 0.5, 1.0];
    let gates = [0.0, 1.0];
    let mut checked = 0usize;
    let mut pass = true;
    'outer: for &g00 in &gates {
        for &g01 in &gates {
            for &g10 in &gates {
                for &g11 in &gates {
                    for &f0 in &levels {
                        for &f1 in &levels {
                            for &p0 in &levels {
                                for &p1 in &levels {
                                    for &e0 in &levels {
                                        let raw = RawJointAction {
                                            vehicles: vec![
                                                vec![g00, f0, 0.6, g01, f1, 0.4, p0],
                                                vec![g10, f1, 0.3, g11, f0, 0.7, p1],
                                            ],
                                            edge: vec![0.25 + e0, 1.0],
                                        };
                                        let mut norm = NormalizationState::new(1e-3);
                                        let out = env.eval_slot(&raw, &fading, &mut norm).unwrap();
                                        let (reward, scores) = oracle_eval(&raw, &fading);
                                        let exact = out.reward.quality == reward.quality
                                            && out.reward.profit == reward.profit
                                            && out.scores.len() == scores.len()
                                            && out.scores.iter().zip(&scores).all(|(a, b)| {
                                                a.timeliness == b.timeliness
                                                    && a.consistency == b.consistency
                                                    && a.redundancy == b.redundancy
                                                    && a.sensing_cost == b.sensing_cost
                                                    && a.transmission_cost == b.transmission_cost
                                                    && a.qdt == b.qdt
                                                    && a.cdt == b.cdt
                                                    && a.pdt == b.pdt
                                            });
                                        checked += 1;
                                        if !exact {
                                            pass = false;
                                            break 'outer;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    pass &= checked == 3_888;
    let within_budget = started.elapsed() <= Duration::from_secs(60);
    report(6, "exhaustive slot evaluation vs straight-line oracle", pass && within_budget);
}

// ---------------------------------------------------------------------------
// 7. Constraint fuzzing: every random raw action decodes to a valid one.

#[test]
fn criterion_07_constraint_fuzzing() {
    use dtvec::environment::{decode_edge_action, decode_vehicle_action, validate_joint_action};
    let config = RunConfig::default();
    let env = config.build_environment().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut violations = 0usize;
    for _ in 0..10_000 {
        let slot = rng.gen_range(0..env.scenario.slot_count);
        let raw = ra_action(&env, &mut rng);
        let in_range = env.scenario.vehicles_in_range(slot);
        let edge = decode_edge_action(&raw.edge, &in_range, env.scenario.edge.bandwidth);
        let actions: Vec<_> = env
            .scenario
            .vehicles
            .iter()
            .enumerate()
            .filter(|(_, v)| in_range.contains(&v.id))
            .map(|(i, v)| {
                decode_vehicle_action(
                    &raw.vehicles[i],
                    v,
                    &env.scenario,
                    &env.channel,
                    edge.shares[&v.id],
                    slot,
                )
            })
            .collect();
        if validate_joint_action(&actions, &edge, &env.scenario).is_err() {
            violations += 1;
        }
    }
    report(7, "constraint fuzzing over random raw actions", violations == 0);
}

// ---------------------------------------------------------------------------
// 8. Difference-reward identity on random steps.

#[test]
fn criterion_08_difference_reward_identity() {
    let config = RunConfig::default();
    let mut env = config.build_environment().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut pass = true;
    let mut checked = 0;
    let mut episode = 0u64;
    env.reset(episode);
    while checked < 100 {
        if env.is_done() {
            episode += 1;
            env.reset(episode);
        }
        let mut raw = ra_action(&env, &mut rng);
        // One vehicle nulled up front: its counterfactual is identical, so
        // its difference reward must be exactly zero.
        let nulled = rng.gen_range(0..raw.vehicles.len());
        raw.vehicles[nulled] = vec![0.0; raw.vehicles[nulled].len()];
        let fading = env.sample_fading();
        for index in 0..env.scenario.vehicles.len() {
            let dr = env.difference_reward(&raw, &fading, index).unwrap();
            let full = env
                .eval_slot(&raw, &fading, &mut env.norm_state())
                .unwrap()
                .reward;
            let null = env
                .eval_slot(&raw.with_null_vehicle(index), &fading, &mut env.norm_state())
                .unwrap()
                .reward;
            pass &= dr == full.sub(null);
            if index == nulled {
                pass &= dr == RewardVector::default();
            }
        }
        env.step(&raw).unwrap();
        checked += 1;
    }
    report(8, "difference-reward identity on random steps", pass);
}

// ---------------------------------------------------------------------------
// 9-11. One shared desk-scale training run.

struct TrainedArtifacts {
    actors: ActorPolicies,
    elapsed: Duration,
    iterations: usize,
}

static TRAINED: OnceLock<TrainedArtifacts> = OnceLock::new();

fn trained() -> &'static TrainedArtifacts {
    TRAINED.get_or_init(|| {
        let config = RunConfig::default();
        let mut env = config.build_environment().unwrap();
        let started = Instant::now();
        let outcome = train(&mut env, &config.training, None).unwrap();
        TrainedArtifacts {
            actors: outcome.actors,
            elapsed: started.elapsed(),
            iterations: outcome.history.len(),
        }
    })
}

fn eval_greedy(env: &mut Environment, actors: &ActorPolicies, episodes: usize, w: WeightVector, seed: u64) -> dtvec::mamo::EvalSummary {
    evaluate_policy(env, &mut |env, _| greedy_joint_action(actors, env), episodes, w, seed).unwrap()
}

#[test]
fn criterion_09_trained_policy_beats_random() {
    let artifacts = trained();
    let config = RunConfig::default();
    let w = WeightVector::new(0.5);
    let mut env = config.build_environment().unwrap();
    let learned = eval_greedy(&mut env, &artifacts.actors, 20, w, 9_000);
    let mut env = config.build_environment().unwrap();
    let random = evaluate_policy(
        &mut env,
        &mut |env, rng| ra_action(env, rng),
        20,
        w,
        9_000,
    )
    .unwrap();
    let margin = learned.mean_qpuc - random.mean_qpuc;
    let se = (learned.qpuc_stderr.powi(2) + random.qpuc_stderr.powi(2)).sqrt();
    let pass = artifacts.iterations >= 500
        && artifacts.elapsed <= Duration::from_secs(1800)
        && learned.mean_scalarized_return >= 1.3 * random.mean_scalarized_return
        && margin > 2.0 * se;
    println!(
        "  return {:.3} vs {:.3} (x{:.2}); qpuc {:.3} vs {:.3} (margin {:.3}, 2se {:.3}); \
         train {:?}",
        learned.mean_scalarized_return,
        random.mean_scalarized_return,
        learned.mean_scalarized_return / random.mean_scalarized_return.max(1e-12),
        learned.mean_qpuc,
        random.mean_qpuc,
        margin,
        2.0 * se,
        artifacts.elapsed
    );
    report(9, "trained policy beats random allocation", pass);
}

#[test]
fn criterion_10_weight_conditioned_quality() {
    let artifacts = trained();
    let config = RunConfig::default();
    // Paired greedy rollouts on identical episode seeds, compare the
    // per-episode quality objective under the two extreme preferences.
    let quality_returns = |w: WeightVector| -> Vec<f64> {
        let mut env = config.build_environment().unwrap();
        (0..20u64)
            .map(|e| {
                env.reset(10_000 + e);
                env.set_weight_vector(w);
                let mut total = 0.0;
                while !env.is_done() {
                    let raw = greedy_joint_action(&artifacts.actors, &env);
                    total += env.step(&raw).unwrap().reward.quality;
                }
                total
            })
            .collect()
    };
    let heavy = quality_returns(WeightVector::new(0.9));
    let light = quality_returns(WeightVector::new(0.1));
    let diffs: Vec<f64> = heavy.iter().zip(&light).map(|(h, l)| h - l).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    // The rollouts are deterministic, so a weight-insensitive policy drives
    // the paired standard error toward zero faster than the mean; floor the
    // tie tolerance at numerical-noise scale relative to the returns.
    let scale = heavy.iter().map(|q| q.abs()).fold(0.0f64, f64::max);
    let tie = se + 1e-6 * scale;
    println!("  quality heavy-light mean diff {mean:.3e}, se {se:.3e}, tie tol {tie:.3e}");
    report(10, "quality-heavy weight yields at least as much quality", mean >= -tie);
}

#[test]
fn criterion_11_sweep_trends() {
    let artifacts = trained();
    let base = RunConfig::default();
    let w = WeightVector::new(0.5);
    let eval_point = |config: &RunConfig| {
        let mut env = config.build_environment().unwrap();
        eval_greedy(&mut env, &artifacts.actors, 20, w, 11_000)
    };
    let atc_by_bandwidth: Vec<f64> = SweepAxis::Bandwidth
        .values()
        .into_iter()
        .map(|v| eval_point(&SweepAxis::Bandwidth.apply(&base, v)).aux.avg_transmission_cost)
        .collect();
    let required_points: Vec<_> = SweepAxis::RequiredInfo
        .values()
        .into_iter()
        .map(|v| {
            let s = eval_point(&SweepAxis::RequiredInfo.apply(&base, v));
            (s.aux.avg_sensing_cost, s.aux.avg_transmission_cost)
        })
        .collect();
    println!("  bandwidth ATC: {atc_by_bandwidth:?}");
    println!("  required-info (ASC, ATC): {required_points:?}");
    let tol = 1e-9;
    let bandwidth_ok = atc_by_bandwidth.windows(2).all(|p| p[1] <= p[0] + tol);
    let required_ok = required_points.windows(2).all(|p| {
        p[1].0 >= p[0].0 - tol && p[1].1 >= p[0].1 - tol
    });
    report(11, "bandwidth and demand sweep trends", bandwidth_ok && required_ok);
}

// ---------------------------------------------------------------------------
// 12. Byte-identical logs across repeated single-threaded CLI runs.

#[test]
fn criterion_12_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.toml");
    std::fs::write(
        &config_path,
        "[scenario]\nslot_count = 10\nvehicle_count = 3\ninfo_count = 4\nentity_count = 2\n\
         [training]\niterations = 4\nbatch_size = 8\nwarmup_transitions = 8\n\
         updates_per_iteration = 1\npolicy_hidden = [8]\ncritic_hidden = [8]\n\
         n_baseline_actions = 2\n",
    )
    .unwrap();
    let run = |out: &std::path::Path| {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_dtvec"))
            .args([
                "--config",
                config_path.to_str().unwrap(),
                "--seed",
                "5",
                "--single-thread",
                "--out",
                out.to_str().unwrap(),
                "train",
                "--mode",
                "mamo",
            ])
            .status()
            .unwrap();
        assert!(status.success(), "cli train run failed");
        (
            std::fs::read(out.join("log.jsonl")).unwrap(),
            std::fs::read(out.join("history.csv")).unwrap(),
        )
    };
    let (log_a, csv_a) = run(&dir.path().join("a"));
    let (log_b, csv_b) = run(&dir.path().join("b"));
    let mut files: BTreeMap<&str, bool> = BTreeMap::new();
    files.insert("log.jsonl", log_a == log_b && !log_a.is_empty());
    files.insert("history.csv", csv_a == csv_b && !csv_a.is_empty());
    report(12, "byte-identical logs across repeated runs", files.values().all(|&v| v));
}
