//! Analytic model of the per-vehicle sensing and priority uploading queue:
//! arrival/updating moments, workloads, and closed-form queuing delays for a
//! multi-class M/G/1 priority queue, plus a discrete-event oracle used to
//! validate the closed form.
//!
//! The closed form is the mean queuing delay (time in system minus nominal
//! upload time) of a preemptive-resume priority queue whose class-`d` upload
//! time has mean `alpha` and second moment `beta`. The oracle simulates that
//! queue directly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::scenario::InfoId;
use crate::Result;

/// First two moments of the upload time of one information class.
#[derive(Clone, Copy, Debug)]
pub struct UploadTimeModel {
    /// Mean upload time in seconds.
    pub mean: f64,
    /// Second moment of the upload time in seconds^2. This is the `beta`
    /// slot of the queuing formula; realizable services need
    /// `second_moment >= mean^2`.
    pub second_moment: f64,
}

/// One class in a vehicle's uploading queue.
#[derive(Clone, Debug)]
pub struct QueueEntry {
    pub info_id: InfoId,
    /// Sensing frequency in hertz; arrivals of this class are one per
    /// `1/frequency` seconds on average.
    pub frequency: f64,
    /// Priority rank; larger ranks are served earlier. Ranks are distinct
    /// within one vehicle's queue.
    pub priority: i32,
    pub upload_time: UploadTimeModel,
}

impl QueueEntry {
    fn load(&self) -> f64 {
        self.frequency * self.upload_time.mean
    }
}

/// Most recent sampling instant of a class with frequency `freq` at or
/// before time `t`: `floor(t * freq) / freq`.
pub fn arrival_moment(t: f64, freq: f64) -> f64 {
    assert!(freq > 0.0, "arrival_moment needs a positive frequency");
    (t * freq).floor() / freq
}

/// Most recent underlying update at or before `arrival`:
/// `floor(arrival / update_interval) * update_interval`.
pub fn updating_moment(arrival: f64, update_interval: f64) -> f64 {
    assert!(update_interval > 0.0, "updating_moment needs a positive interval");
    (arrival / update_interval).floor() * update_interval
}

/// Total offered workload of every class in the queue. The queue is stable
/// only if this is below 1.
pub fn total_workload(entries: &[QueueEntry]) -> f64 {
    entries.iter().map(|e| e.load()).sum()
}

/// Workload of the classes served strictly before `entry`.
pub fn workload_ahead(entry: &QueueEntry, entries: &[QueueEntry]) -> f64 {
    entries
        .iter()
        .filter(|e| e.priority > entry.priority)
        .map(|e| e.load())
        .sum()
}

/// Closed-form mean queuing delay of `entry` among `entries`.
///
/// Errors with [`Error::UnstableQueue`] when the workload at or above this
/// priority reaches 1.
pub fn pk_queuing_time(entry: &QueueEntry, entries: &[QueueEntry]) -> Result<f64> {
    let rho_ahead = workload_ahead(entry, entries);
    let own = entry.frequency * entry.upload_time.mean;
    if rho_ahead + own >= 1.0 {
        return Err(Error::UnstableQueue { rho: rho_ahead + own });
    }
    let residual: f64 = entry.frequency * entry.upload_time.second_moment
        + entries
            .iter()
            .filter(|e| e.priority > entry.priority)
            .map(|e| e.frequency * e.upload_time.second_moment)
            .sum::<f64>();
    let alpha = entry.upload_time.mean;
    let q = 1.0 / (1.0 - rho_ahead)
        * (alpha + residual / (2.0 * (1.0 - rho_ahead - own)))
        - alpha;
    Ok(q)
}

/// Two-point service distribution matching a mean and second moment.
#[derive(Clone, Copy, Debug)]
struct TwoPoint {
    low: f64,
    high: f64,
}

impl TwoPoint {
    fn from_moments(mean: f64, second_moment: f64) -> Result<TwoPoint> {
        let variance = second_moment - mean * mean;
        if variance < -1e-12 {
            return Err(Error::UnrealizableService { second_moment, mean_sq: mean * mean });
        }
        let spread = variance.max(0.0).sqrt();
        if spread > mean {
            return Err(Error::UnrealizableService { second_moment, mean_sq: mean * mean });
        }
        Ok(TwoPoint { low: mean - spread, high: mean + spread })
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if rng.gen::<bool>() {
            self.high
        } else {
            self.low
        }
    }
}

/// Discrete-event simulation of the multi-class priority queue with Poisson
/// arrivals per class, preemptive-resume service in priority order, and
/// two-point service times matching each class's upload-time moments.
///
/// Returns the per-class mean queuing delay (sojourn minus mean upload
/// time), indexed like `entries`. Deterministic for a fixed seed.
pub fn simulate_queue_oracle(entries: &[QueueEntry], n_arrivals: usize, seed: u64) -> Result<Vec<f64>> {
    if n_arrivals == 0 {
        return Err(Error::NoArrivals);
    }
    let rho = total_workload(entries);
    if rho >= 1.0 {
        return Err(Error::UnstableQueue { rho });
    }
    let services: Vec<TwoPoint> = entries
        .iter()
        .map(|e| TwoPoint::from_moments(e.upload_time.mean, e.upload_time.second_moment))
        .collect::<Result<_>>()?;

    // Classes sorted by descending priority; index 0 is served first.
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(entries[i].priority));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next_arrival: Vec<f64> = entries
        .iter()
        .map(|e| exp_sample(&mut rng, e.frequency))
        .collect();
    // Per class FIFO of (arrival time, remaining service).
    let mut queues: Vec<std::collections::VecDeque<(f64, f64)>> =
        vec![std::collections::VecDeque::new(); entries.len()];
    let mut arrivals_left = n_arrivals;
    let mut now = 0.0;
    let mut sum_sojourn = vec![0.0f64; entries.len()];
    let mut completed = vec![0usize; entries.len()];

    loop {
        let serving = order.iter().copied().find(|&i| !queues[i].is_empty());
        let next_completion = serving.map(|i| now + queues[i][0].1);
        let next_arr = if arrivals_left > 0 {
            let mut best: Option<(f64, usize)> = None;
            for (i, &t) in next_arrival.iter().enumerate() {
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
            best
        } else {
            None
        };

        match (next_arr, next_completion) {
            (Some((ta, ci)), Some(tc)) if ta < tc => {
                if let Some(s) = serving {
                    queues[s][0].1 -= ta - now;
                }
                now = ta;
                let service = services[ci].sample(&mut rng);
                queues[ci].push_back((now, service));
                next_arrival[ci] = now + exp_sample(&mut rng, entries[ci].frequency);
                arrivals_left -= 1;
            }
            (_, Some(tc)) => {
                let s = serving.unwrap();
                now = tc;
                let (arrived, _) = queues[s].pop_front().unwrap();
                sum_sojourn[s] += now - arrived;
                completed[s] += 1;
            }
            (Some((ta, ci)), None) => {
                now = ta;
                let service = services[ci].sample(&mut rng);
                queues[ci].push_back((now, service));
                next_arrival[ci] = now + exp_sample(&mut rng, entries[ci].frequency);
                arrivals_left -= 1;
            }
            (None, None) => break,
        }
    }

    Ok(entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            if completed[i] == 0 {
                0.0
            } else {
                sum_sojourn[i] / completed[i] as f64 - e.upload_time.mean
            }
        })
        .collect())
}

fn exp_sample(rng: &mut impl Rng, rate: f64) -> f64 {
    // Inverse CDF; 1 - gen() is in (0, 1].
    -(1.0 - rng.gen::<f64>()).ln() / rate
}
