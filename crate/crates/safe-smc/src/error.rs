use thiserror::Error;

/// Errors raised by controller evaluation and simulation.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ControlError {
    /// A matrix that must be inverted failed the conditioning check
    /// (reciprocal condition number below [`crate::RCOND_THRESHOLD`]).
    #[error("singular matrix: {name}")]
    SingularMatrix { name: &'static str },

    /// The safeguard inequality a_j·u − b·|u| ≥ c has no solution on the
    /// selected channel (c > 0 with −b ≤ a_j ≤ b). Signals that the safety
    /// requirement and the stabilizing sliding manifold are incompatible.
    #[error("infeasible safeguard on channel {j}: c = {c:.6e} > 0 with a_j = {a_j:.6e}, b = {b:.6e}")]
    InfeasibleSafeguard { j: usize, a_j: f64, b: f64, c: f64 },

    /// The selected closed-form branch denominator is numerically zero.
    #[error("degenerate safeguard denominator {denom:.3e} on channel {j}")]
    DegenerateDenominator { j: usize, denom: f64 },

    /// Argmax channel selection found no channel with a usable gain.
    #[error("channel selection degenerate: max |a_i| = {max_abs:.3e}")]
    ChannelDegenerate { max_abs: f64 },

    /// A simulated quantity became non-finite.
    #[error("non-finite state at t = {t}: {field}")]
    NonFiniteState { t: f64, field: String },

    /// An operation that needs at least one trajectory record got none.
    #[error("empty trajectory")]
    EmptyTrajectory,

    /// Scenario construction or validation failed.
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}
