//! Deterministic discrete-slot simulator for battery-aware energy-harvesting
//! federated learning.
//!
//! Clients harvest one battery unit per slot with probability `delta`, spend
//! `kappa` units over `kappa` consecutive slots to train, and one unit to
//! upload. The crate provides the cyclic group scheduler (FedBacys and its
//! odd-chance variant), five baseline schedulers adjusted to the same energy
//! model, exact binomial participation analytics, and a sweep harness that
//! emits CSV summaries.
//!
//! ```no_run
//! use ehfl_core::{harness, ExperimentConfig};
//!
//! let cfg = ExperimentConfig::default();
//! let result = harness::run(&cfg).unwrap();
//! println!("{} units", result.ledger.consumed_total.as_f64());
//! ```

pub mod analytics;
pub mod baselines;
pub mod battery;
pub mod error;
pub mod fedbacys;
pub mod harness;
pub mod model;
pub mod objectives;
pub mod par;
pub mod rng;
pub mod sim;

pub use battery::{Energy, EnergyLedger};
pub use error::{Error, Result};
pub use model::{
    clock_decompose, validate_config, Algorithm, ClientState, ClockPosition, ExperimentConfig,
    MetricsRecord, ModelVector, SlotClock, ValidationReport,
};
pub use objectives::{Objective, ObjectiveSpec};
pub use par::Execution;
pub use sim::{Action, RunResult};
