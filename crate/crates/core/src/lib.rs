//! Simulator for federated and decentralized direct preference optimization
//! over log-linear policies on finite-horizon MDPs.

pub mod bench_suite;
pub mod cli_io;
pub mod dec_runtime;
pub mod dpo_core;
pub mod env_policy;
pub mod error;
pub mod fed_runtime;
pub mod linalg;
pub mod lowerbound;
pub mod metrics;
pub mod oracle;
pub mod par;
pub mod preference_data;
pub mod rng;
pub mod theory_constants;
pub mod topology;

pub use error::{Error, Result};
