//! Cycle-level simulator of a heterogeneous CPU/GPU chiplet mesh whose
//! virtual-channel partitioning and switch arbitration are reconfigured
//! every epoch from a Kalman-filter prediction of GPU congestion.
//!
//! The crate is organised bottom-up:
//!
//! - [`topology`]: mesh, node roles and XY routing.
//! - [`router`]: VC router pipeline, VC and switch allocators.
//! - [`traffic`]: synthetic sources, memory controllers and epoch telemetry.
//! - [`kalman`]: the filter, observation normalisation and the binary signal.
//! - [`controller`]: warmup / hold / revert rules and the resource maps.
//! - [`sim`]: scenario configuration, the global cycle loop and CSV output.

pub mod controller;
pub mod error;
pub mod kalman;
pub mod router;
pub mod sim;
pub mod topology;
pub mod traffic;

pub use error::{ConfigError, InvariantViolation, KalmanError, SimError, TopologyError};
pub use sim::config::{Mode, ScenarioConfig};
pub use sim::{compare, run, sweep_vc, SimResult};
