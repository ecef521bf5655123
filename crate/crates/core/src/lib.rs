//! Closed queueing network models, congestion-based dispatch policies and
//! the fluid planning problem they track.

pub mod congestion;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod network;
pub mod planning;
pub mod policies;
pub mod simulator;

pub use congestion::{Congestion, CongestionKind};
pub use error::{Error, Result};
pub use network::{DemandModel, DemandType, Instance, NetworkSpec, Scale, Setting};
pub use planning::{solve_spp, SppSolution};
pub use policies::{Decision, Policy, PolicyConfig, PolicyKind};
pub use simulator::{run, RunConfig, RunMetrics, TravelTimes};
