//! V2I uplink model: SNR, distributionally robust transmission reliability,
//! Shannon rate, transmission duration over a piecewise-constant rate
//! profile, and transmission energy.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Channel and reliability parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    /// Additive white Gaussian noise power in watts.
    pub noise_power: f64,
    /// Antenna design constant.
    pub antenna_const: f64,
    /// Path loss exponent.
    pub pathloss_exp: f64,
    /// Mean of the squared channel fading gain.
    pub fading_mean: f64,
    /// Variance of the squared channel fading gain.
    pub fading_var: f64,
    /// Target SNR threshold for a successful transmission.
    pub snr_target: f64,
    /// Required reliability in (0, 1).
    pub reliability: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        // -90 dBm noise, reliability 0.9, fading mean 2 / variance 0.4.
        ChannelParams {
            noise_power: 1e-12,
            antenna_const: 1.0,
            pathloss_exp: 3.0,
            fading_mean: 2.0,
            fading_var: 0.4,
            snr_target: 10.0,
            reliability: 0.9,
        }
    }
}

/// Received SNR at distance `dis` with transmit power `power` and squared
/// fading gain `fading_gain`.
pub fn snr(dis: f64, power: f64, fading_gain: f64, params: &ChannelParams) -> f64 {
    assert!(dis > 0.0, "snr needs a positive distance");
    fading_gain * params.antenna_const * dis.powf(-params.pathloss_exp) * power
        / params.noise_power
}

/// Worst-case probability that the squared fading gain is at least
/// `threshold_gain`, over every distribution with the configured mean and
/// variance. This is the one-sided Chebyshev (Cantelli) bound:
/// `(mu - c)^2 / (var + (mu - c)^2)` for `c < mu`, and 0 otherwise.
pub fn worst_case_success_prob(threshold_gain: f64, params: &ChannelParams) -> f64 {
    let margin = params.fading_mean - threshold_gain;
    if margin <= 0.0 {
        return 0.0;
    }
    margin * margin / (params.fading_var + margin * margin)
}

/// Smallest transmit power whose worst-case success probability meets the
/// reliability target at distance `dis`.
pub fn min_power_for_reliability(dis: f64, params: &ChannelParams) -> Result<f64> {
    let delta = params.reliability;
    assert!(delta > 0.0 && delta < 1.0, "reliability must be in (0, 1)");
    let needed_margin = (delta * params.fading_var / (1.0 - delta)).sqrt();
    if params.fading_mean <= needed_margin {
        return Err(Error::InfeasibleReliability { mean: params.fading_mean, delta });
    }
    Ok(params.snr_target * params.noise_power * dis.powf(params.pathloss_exp)
        / (params.antenna_const * (params.fading_mean - needed_margin)))
}

/// Shannon rate in bits per second.
pub fn shannon_rate(bandwidth: f64, snr: f64) -> f64 {
    bandwidth * (1.0 + snr).log2()
}

/// Outcome of an upload over a finite rate profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TransmissionOutcome {
    /// Upload finished after this many seconds.
    Completed(f64),
    /// The profile ended (vehicle left coverage) first; this much time was
    /// spent transmitting.
    NotCompleted { transmitting_time: f64 },
}

/// Time to deliver `size_bits` over piecewise-constant `rates` (one entry
/// per `slot_duration` seconds), starting `start` seconds into the profile.
pub fn transmission_duration(
    size_bits: f64,
    rates: &[f64],
    slot_duration: f64,
    start: f64,
) -> TransmissionOutcome {
    assert!(size_bits > 0.0, "transmission_duration needs a positive size");
    let mut remaining = size_bits;
    let mut elapsed = 0.0;
    for (i, &rate) in rates.iter().enumerate() {
        let seg_start = i as f64 * slot_duration;
        let seg_end = seg_start + slot_duration;
        if seg_end <= start {
            continue;
        }
        let usable = seg_end - seg_start.max(start);
        if rate > 0.0 && remaining <= rate * usable {
            return TransmissionOutcome::Completed(elapsed + remaining / rate);
        }
        remaining -= rate * usable;
        elapsed += usable;
    }
    TransmissionOutcome::NotCompleted { transmitting_time: elapsed }
}

/// Energy spent transmitting at `power` for `duration` seconds.
pub fn transmission_energy(power: f64, duration: f64) -> f64 {
    power * duration
}
