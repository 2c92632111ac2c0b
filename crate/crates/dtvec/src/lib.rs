//! Simulator and training harness for cooperative sensing and V2I uploading
//! of digital twins at a vehicular edge node.
//!
//! Vehicles sense heterogeneous information about physical road entities and
//! upload it over V2I links; the edge node fuses the received information into
//! digital twins and allocates the uplink bandwidth. The crate models the
//! per-vehicle priority uploading queues, the wireless channel, the per-twin
//! quality/cost metrics, and a multi-agent multi-objective actor-critic
//! learner with a dueling critic, plus baselines and experiment sweeps.

pub mod baselines;
pub mod config;
pub mod environment;
pub mod error;
pub mod mamo;
pub mod neural;
pub mod par;
pub mod scenario;
pub mod sensing_queue;
pub mod twin_metrics;
pub mod v2i_channel;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
