//! Asynchronous maintenance of `M` multicast trees over
//! a peer-to-peer overlay with per-node upload caps.
//!
//! [`graph`] holds the overlay, [`protocol`] the local update rules,
//! [`sim`] the Poisson sampling process, [`metrics`] the observables and
//! convergence checks, and [`experiments`] the batch and bound drivers.

pub mod config;
pub mod experiments;
pub mod graph;
pub mod metrics;
pub mod protocol;
pub mod serial;
pub mod sim;

pub use graph::{Color, Depth, GraphState, Link, NodeId, Parent};
pub use protocol::{on_sample, DepthMode, Rule, RuleOutcome, Update};
pub use sim::{run, run_indexed, DegreeProfile, MetricSample, RunResult, SimConfig, Simulation};
