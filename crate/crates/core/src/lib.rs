//! Switched-network scheduling laboratory.
//!
//! The crate simulates single-hop and multi-hop switched networks under
//! max-weight style policies, computes the static planning geometry of a
//! schedule set in exact rational arithmetic, solves the lifting-map convex
//! program, integrates fluid trajectories and runs multiplicative
//! state-space-collapse experiments.
//!
//! Module map:
//!
//! * [`net`] static network data (schedules, routing, weight functions)
//! * [`arrivals`] exogenous arrival processes and deviation diagnostics
//! * [`policy`] schedule selection (MW-f, backpressure, MSMW-log)
//! * [`sim`] discrete-time dynamics, trajectories and audits
//! * [`plan`] admissible region, dual vertices and virtual resources
//! * [`lift`] Lyapunov function, workload map and the lifting map
//! * [`fluid`] fluid trajectories and their structural checks
//! * [`collapse`] collapse experiments and input-queued switch suites
//! * [`scenario`] / [`exec`] the scenario-file front end used by the CLI

pub mod arrivals;
pub mod collapse;
pub mod error;
pub mod exec;
pub mod fluid;
pub mod lift;
pub mod net;
pub mod plan;
pub mod policy;
pub mod scenario;
pub mod sim;
pub mod vecops;

pub use error::{Error, Result};
