//! Safe sliding-mode control for nonlinear uncertain systems in regular
//! form: an inner robust SMC loop paired with an outer safeguarding loop
//! that keeps a barrier-defined safe set forward invariant by exchanging
//! energy with an augmented scalar state, plus a deterministic fixed-step
//! simulator and post-hoc certificate monitors.
//!
//! The crate is organized around the controller pipeline:
//! [`model`] holds the domain types, [`smc`] the unsafe inner control law,
//! [`safeguard`] the outer loop (coefficients, closed-form u_s, mode
//! machine, resets), [`sim`] the simulation engine, [`verify`] the
//! monitors, and [`scenarios`] the built-in planar-robot case studies.

pub mod error;
pub mod model;
pub mod safeguard;
pub mod scenarios;
pub mod sim;
pub mod smc;
pub mod verify;

pub use error::ControlError;
pub use model::{
    ChannelRule, ControllerState, Mode, RegularFormPlant, SafeguardParams, SafetySpec,
    SlidingSpec, Switching, ValidationReport,
};
pub use sim::{EventLog, RunOutcome, RunOutput, Scenario, SimConfig, TrajectoryRecord};

/// Reciprocal-condition threshold below which a matrix counts as singular.
pub const RCOND_THRESHOLD: f64 = 1e-12;
/// Magnitude below which safeguard denominators and channel gains count as
/// degenerate.
pub const DEGENERACY_EPS: f64 = 1e-9;
