//! Singular port-Hamiltonian systems: model, interconnection with loads and
//! controllers, instrumented simulation and property audits.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Aborted runs return their partial trajectory by value.
#![allow(clippy::result_large_err)]

pub mod audit;
pub mod error;
pub mod interconnect;
pub mod linalg;
pub mod sim;
pub mod system;

pub use error::{Result, SphsError};
pub use interconnect::{
    realize_tf, wrap_phase, ClosedLoopSystem, InputSignal, Load, LtiLoad, PhasePIController,
    SineComponent, StaticLoad,
};
pub use sim::{integrate, EventKind, EventLog, IntegratorConfig, Method, Sample, Trajectory};
pub use system::{QuadraticForm, Region, SigmaLevel, SingularPHSystem, Variant};
