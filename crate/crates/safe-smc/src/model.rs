//! Domain types: the plant in regular coordinates, the sliding manifold
//! specification, the safety specification, the safeguard tuning parameters,
//! and the per-run controller state. No dynamics are executed here.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::ControlError;
use crate::RCOND_THRESHOLD;

/// Map from the full state x to a scalar (bounds, barriers).
pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
/// Drift map on the regular-form coordinates (η, ζ).
pub type DriftFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
/// Map from the full state x to a p×p matrix (E, Ĝ).
pub type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// Simulation-truth map (t, x) → p×p matrix.
pub type TruthMatrixFn = Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// Simulation-truth map (t, x) → p-vector.
pub type TruthVectorFn = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
/// Reduced-order stabilizer φ(η) → ζ-target.
pub type ManifoldFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
/// Jacobian ∂φ/∂η, p×m.
pub type JacobianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// Class-K decay rate α(r).
pub type ClassKFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// Barrier gradient ∇h(x), a row vector of length n.
pub type GradientFn = Arc<dyn Fn(&DVector<f64>) -> RowDVector<f64> + Send + Sync>;
/// Channel predicate on the initial state, returning a 1-based channel.
pub type ChannelPredicate = Arc<dyn Fn(&DVector<f64>) -> usize + Send + Sync>;

/// The plant already transformed to regular form:
/// η̇ = f_a(η, ζ), ζ̇ = f_b(η, ζ) + G(x)E(x)u + δ(t, x),
/// with G diagonal and unknown (g_i ≥ g0), E and Ĝ known.
///
/// `g_true`/`delta_true` are simulation truth only; the controller never
/// reads them.
#[derive(Clone)]
pub struct RegularFormPlant {
    /// State dimension n.
    pub n: usize,
    /// Input dimension p ≤ n; m = n − p is the η-dimension.
    pub p: usize,
    /// Drift of the η-equations, (η, ζ) → ℝ^m. Empty output when m = 0.
    pub f_a: DriftFn,
    /// Drift of the ζ-equations, (η, ζ) → ℝ^p.
    pub f_b: DriftFn,
    /// Known input shaping E(x), p×p, nonsingular.
    pub e: MatrixFn,
    /// Known diagonal estimate Ĝ(x) of G(x), nonsingular.
    pub g_hat: MatrixFn,
    /// Uniform lower bound on the unknown diagonal gains g_i(x).
    pub g0: f64,
    /// Bound on ‖δ(t, x)‖∞.
    pub rho1: ScalarFn,
    /// Bound on ‖G(x) − Ĝ(x)‖∞.
    pub rho2: ScalarFn,
    /// Combined per-channel bound ϱ(x) on |Δ_i/g_i|.
    pub rho: ScalarFn,
    /// True gain matrix, simulation only.
    pub g_true: TruthMatrixFn,
    /// True matched disturbance, simulation only.
    pub delta_true: TruthVectorFn,
}

impl RegularFormPlant {
    /// Dimension of η.
    pub fn m(&self) -> usize {
        self.n - self.p
    }

    /// Split the full state into (η, ζ).
    pub fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let m = self.m();
        (x.rows(0, m).into_owned(), x.rows(m, self.p).into_owned())
    }
}

/// Switching term used in the reaching law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Switching {
    /// Discontinuous sign(s_i), with sign(0) = 1.
    Sign,
    /// Boundary-layer saturation sat(s_i, ε).
    Sat { epsilon: f64 },
}

/// Sliding manifold specification: s = M·(ζ − φ(η)).
///
/// M = I recovers the plain manifold s = ζ − φ(η); a nonsingular M ≠ I
/// expresses mixed manifolds such as s = [x1 − x2, x1 + x2]ᵀ without
/// re-deriving a regular form. With M ≠ I and nonzero ϱ2 the diagonal-gain
/// robustness argument no longer applies verbatim; validation emits a
/// warning for that combination.
#[derive(Clone)]
pub struct SlidingSpec {
    /// Reduced-order stabilizer φ(η); identically zero when m = 0.
    pub phi: ManifoldFn,
    /// Jacobian ∂φ/∂η, p×m.
    pub jac_phi: JacobianFn,
    /// Nonsingular mixing matrix M, p×p.
    pub m_mix: DMatrix<f64>,
    /// Reaching-law margin β0 > 0.
    pub beta0: f64,
    /// Switching term selection.
    pub switching: Switching,
}

impl SlidingSpec {
    /// Plain manifold s = ζ − φ(η) with the given reaching margin.
    pub fn new(
        phi: ManifoldFn,
        jac_phi: JacobianFn,
        p: usize,
        beta0: f64,
        switching: Switching,
    ) -> Self {
        Self {
            phi,
            jac_phi,
            m_mix: DMatrix::identity(p, p),
            beta0,
            switching,
        }
    }

    /// Trivial manifold for plants with m = 0 (s = M·ζ).
    pub fn full_state(p: usize, beta0: f64, switching: Switching) -> Self {
        Self::new(
            Arc::new(move |_eta: &DVector<f64>| DVector::zeros(p)),
            Arc::new(move |_eta: &DVector<f64>| DMatrix::zeros(p, 0)),
            p,
            beta0,
            switching,
        )
    }

    /// True when the mixing matrix is exactly the identity.
    pub fn is_identity_mix(&self) -> bool {
        self.m_mix == DMatrix::identity(self.m_mix.nrows(), self.m_mix.ncols())
    }
}

/// Safety specification: the safe set is C = { x | h(x) ≥ 0 }.
#[derive(Clone)]
pub struct SafetySpec {
    /// Barrier h(x); h ≥ 0 is safe.
    pub h: ScalarFn,
    /// Gradient ∇h(x) as a row vector.
    pub grad_h: GradientFn,
    /// Class-K decay rate α(r).
    pub alpha: ClassKFn,
    /// Risky-set threshold h̄ > 0: the safeguard activates when h ≤ h̄.
    pub h_bar: f64,
    /// Radius ρ_Ω of Ω = { ‖s‖₂ < ρ_Ω }, inside which u_s is zero.
    pub omega_radius: f64,
}

impl SafetySpec {
    /// Linear class-K rate α(r) = gain·r.
    pub fn linear_alpha(gain: f64) -> ClassKFn {
        Arc::new(move |r| gain * r)
    }
}

/// How the safeguarded channel j ∈ 1..=p is chosen.
#[derive(Clone)]
pub enum ChannelRule {
    /// A fixed channel for the whole run.
    Fixed(usize),
    /// Evaluate a predicate on x(0) at run start.
    InitialCondition(ChannelPredicate),
    /// argmax_i |a_i| at the activation instant (ties → lowest index).
    ArgmaxAtActivation,
}

/// The seven safeguard tuning parameters plus the reset rule and channel rule.
///
/// Υ(z) = h1 + h2·arctan(h3·z) requires h1 > (π/2)·h2; the constructor
/// rejects violations.
#[derive(Clone)]
pub struct SafeguardParams {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub c_z: f64,
    pub lambda: f64,
    /// Initial augmented state z(0).
    pub z0: f64,
    /// Reset z to z0 when |z| falls below this and x is in the risky set;
    /// `None` disables resets.
    pub z_reset_threshold: Option<f64>,
    /// Channel selection rule.
    pub channel_rule: ChannelRule,
    /// When set, sign(z) inside ψ and the z-dynamics is replaced by
    /// sat(z, ε). Off by default; the saturation variant of the reaching
    /// law smooths sign(s) only.
    pub z_sign_smoothing: Option<f64>,
}

impl SafeguardParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        h1: f64,
        h2: f64,
        h3: f64,
        c_z: f64,
        lambda: f64,
        z0: f64,
        z_reset_threshold: Option<f64>,
        channel_rule: ChannelRule,
    ) -> Result<Self, ControlError> {
        let params = Self {
            h1,
            h2,
            h3,
            c_z,
            lambda,
            z0,
            z_reset_threshold,
            channel_rule,
            z_sign_smoothing: None,
        };
        let issues = params.invariant_issues();
        if issues.is_empty() {
            Ok(params)
        } else {
            Err(ControlError::InvalidScenario(issues.join("; ")))
        }
    }

    fn invariant_issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if !(self.h1 > 0.0 && self.h2 > 0.0 && self.h3 > 0.0) {
            issues.push("h1, h2, h3 must be strictly positive".to_string());
        }
        if self.h1 <= PI / 2.0 * self.h2 {
            issues.push(format!(
                "h1 = {} must exceed (pi/2)*h2 = {}",
                self.h1,
                PI / 2.0 * self.h2
            ));
        }
        if !(self.c_z > 0.0) {
            issues.push("c_z must be strictly positive".to_string());
        }
        if !(self.lambda > 0.0) {
            issues.push("lambda must be strictly positive".to_string());
        }
        if let Some(th) = self.z_reset_threshold {
            if !(th > 0.0) {
                issues.push("z reset threshold must be strictly positive".to_string());
            }
        }
        issues
    }
}

/// Operating mode of the safeguarding loop. Transitions are one-way:
/// PRE → ACTIVE (first risky-set entry) → DONE (Ω reached).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Pre,
    Active,
    Done,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Pre => write!(f, "PRE"),
            Mode::Active => write!(f, "ACTIVE"),
            Mode::Done => write!(f, "DONE"),
        }
    }
}

/// Mutable per-run controller state. Confined to a single simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    /// Augmented energy state z.
    pub z: f64,
    pub mode: Mode,
    /// Selected channel, 1-based. 0 means not yet selected
    /// (argmax rule before activation).
    pub j: usize,
    pub reset_count: u32,
    /// First risky-set entry time, set exactly when PRE → ACTIVE fires.
    pub t1: Option<f64>,
}

impl ControllerState {
    pub fn new(z0: f64) -> Self {
        Self {
            z: z0,
            mode: Mode::Pre,
            j: 0,
            reset_count: 0,
            t1: None,
        }
    }
}

/// Outcome of scenario validation: `errors` are violated invariants,
/// `warnings` flag configurations that are accepted but outside the
/// formally covered regime.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Reciprocal condition number 1/(‖A‖∞·‖A⁻¹‖∞), or 0 when not invertible.
pub(crate) fn rcond_inf(m: &DMatrix<f64>) -> f64 {
    match m.clone().try_inverse() {
        Some(inv) => {
            let norm = inf_matrix_norm(m);
            let inv_norm = inf_matrix_norm(&inv);
            if norm == 0.0 || inv_norm == 0.0 {
                0.0
            } else {
                1.0 / (norm * inv_norm)
            }
        }
        None => 0.0,
    }
}

/// Induced infinity norm (max row sum of absolute values).
pub fn inf_matrix_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Invert with the conditioning check used throughout the controller.
pub(crate) fn checked_inverse(
    m: &DMatrix<f64>,
    name: &'static str,
) -> Result<DMatrix<f64>, ControlError> {
    let inv = m
        .clone()
        .try_inverse()
        .ok_or(ControlError::SingularMatrix { name })?;
    let rcond = {
        let norm = inf_matrix_norm(m);
        let inv_norm = inf_matrix_norm(&inv);
        if norm == 0.0 || inv_norm == 0.0 {
            0.0
        } else {
            1.0 / (norm * inv_norm)
        }
    };
    if rcond < RCOND_THRESHOLD {
        return Err(ControlError::SingularMatrix { name });
    }
    Ok(inv)
}

fn eval_guard<T, F: FnOnce() -> T>(label: &str, f: F, issues: &mut Vec<String>) -> Option<T> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => Some(v),
        Err(_) => {
            issues.push(format!("{label}: evaluation failed at x(0)"));
            None
        }
    }
}

fn finite_vec(label: &str, v: &DVector<f64>, issues: &mut Vec<String>) {
    if v.iter().any(|x| !x.is_finite()) {
        issues.push(format!("{label}: non-finite value at x(0)"));
    }
}

/// Check every constructor invariant of a scenario at its initial state.
///
/// Returns the list of violated invariants (empty = valid) plus warnings;
/// never mutates its inputs and never panics on a failing user map.
pub fn validate_scenario(
    plant: &RegularFormPlant,
    sliding: &SlidingSpec,
    safety: &SafetySpec,
    params: &SafeguardParams,
    x0: &DVector<f64>,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    let errors = &mut report.errors;

    if plant.p == 0 || plant.p > plant.n {
        errors.push(format!(
            "plant dimensions invalid: n = {}, p = {}",
            plant.n, plant.p
        ));
        return report;
    }
    if x0.len() != plant.n {
        errors.push(format!(
            "x0 has length {}, plant expects n = {}",
            x0.len(),
            plant.n
        ));
        return report;
    }

    // Plant invariants at x(0).
    if !(plant.g0 > 0.0) {
        errors.push("g0 must be strictly positive".to_string());
    }
    let (eta, zeta) = plant.split(x0);
    if let Some(e) = eval_guard("E(x)", || (plant.e)(x0), errors) {
        if e.nrows() != plant.p || e.ncols() != plant.p {
            errors.push("E(x) is not p x p".to_string());
        } else if rcond_inf(&e) < RCOND_THRESHOLD {
            errors.push("E(x0) fails the nonsingularity check".to_string());
        }
    }
    if let Some(gh) = eval_guard("Ghat(x)", || (plant.g_hat)(x0), errors) {
        if gh.nrows() != plant.p || gh.ncols() != plant.p {
            errors.push("Ghat(x) is not p x p".to_string());
        } else if rcond_inf(&gh) < RCOND_THRESHOLD {
            errors.push("Ghat(x0) fails the nonsingularity check".to_string());
        }
    }
    if let Some(fa) = eval_guard("f_a", || (plant.f_a)(&eta, &zeta), errors) {
        if fa.len() != plant.m() {
            errors.push("f_a output dimension != m".to_string());
        }
        finite_vec("f_a", &fa, errors);
    }
    if let Some(fb) = eval_guard("f_b", || (plant.f_b)(&eta, &zeta), errors) {
        if fb.len() != plant.p {
            errors.push("f_b output dimension != p".to_string());
        }
        finite_vec("f_b", &fb, errors);
    }
    let mut rho2_at_x0 = 0.0;
    for (label, f) in [
        ("rho1", &plant.rho1),
        ("rho2", &plant.rho2),
        ("rho", &plant.rho),
    ] {
        if let Some(v) = eval_guard(label, || f(x0), errors) {
            if !v.is_finite() || v < 0.0 {
                errors.push(format!("{label}(x0) must be finite and >= 0"));
            }
            if label == "rho2" {
                rho2_at_x0 = v;
            }
        }
    }

    // Simulation self-consistency at (0, x0): truth inside the stated bounds.
    if let Some(gt) = eval_guard("G_true", || (plant.g_true)(0.0, x0), errors) {
        for i in 0..gt.nrows().min(plant.p) {
            if gt[(i, i)] < plant.g0 {
                errors.push(format!(
                    "G_true diagonal entry {} = {} below g0 = {} at (0, x0)",
                    i + 1,
                    gt[(i, i)],
                    plant.g0
                ));
            }
        }
        if let Some(gh) = eval_guard("Ghat(x)", || (plant.g_hat)(x0), errors) {
            let diff = &gt - &gh;
            let bound = (plant.rho2)(x0);
            if inf_matrix_norm(&diff) > bound + 1e-12 {
                errors.push("||G_true - Ghat|| exceeds rho2 at (0, x0)".to_string());
            }
        }
    }
    if let Some(dt) = eval_guard("delta_true", || (plant.delta_true)(0.0, x0), errors) {
        let bound = (plant.rho1)(x0);
        if dt.amax() > bound + 1e-12 {
            errors.push("||delta_true||_inf exceeds rho1 at (0, x0)".to_string());
        }
    }

    // Sliding invariants.
    if sliding.m_mix.nrows() != plant.p || sliding.m_mix.ncols() != plant.p {
        errors.push("M is not p x p".to_string());
    } else if rcond_inf(&sliding.m_mix) < RCOND_THRESHOLD {
        errors.push("M nonsingular violated".to_string());
    }
    if !(sliding.beta0 > 0.0) {
        errors.push("beta0 must be strictly positive".to_string());
    }
    if let Switching::Sat { epsilon } = sliding.switching {
        if !(epsilon > 0.0) {
            errors.push("saturation epsilon must be strictly positive".to_string());
        }
    }
    if let Some(phi0) = eval_guard("phi", || (sliding.phi)(&eta), errors) {
        if phi0.len() != plant.p {
            errors.push("phi output dimension != p".to_string());
        }
        if plant.m() > 0 {
            let zero_eta = DVector::zeros(plant.m());
            if let Some(phi_origin) = eval_guard("phi(0)", || (sliding.phi)(&zero_eta), errors) {
                if phi_origin.amax() > 1e-12 {
                    errors.push("phi(0) != 0".to_string());
                }
            }
        }
    }

    // Safety invariants.
    if !(safety.h_bar > 0.0) {
        errors.push("h_bar must be strictly positive".to_string());
    }
    if !(safety.omega_radius > 0.0) {
        errors.push("omega_radius must be strictly positive".to_string());
    }
    if let Some(h0) = eval_guard("h", || (safety.h)(x0), errors) {
        if !h0.is_finite() {
            errors.push("h(x0) is non-finite".to_string());
        }
    }
    if let Some(g) = eval_guard("grad_h", || (safety.grad_h)(x0), errors) {
        if g.len() != plant.n {
            errors.push("grad_h output dimension != n".to_string());
        }
    }
    let origin = DVector::zeros(plant.n);
    if let Some(h0) = eval_guard("h(0)", || (safety.h)(&origin), errors) {
        if !(h0 > 0.0) {
            errors.push(format!("h(0) = {h0} must be positive (origin in safe set)"));
        }
    }
    // Numerical monotonicity of alpha on a sampled grid.
    if let Some(a0) = eval_guard("alpha(0)", || (safety.alpha)(0.0), errors) {
        if a0.abs() > 1e-12 {
            errors.push(format!("alpha(0) = {a0} must be zero"));
        }
    }
    let mut prev = (safety.alpha)(0.0);
    for k in 1..=64 {
        let r = k as f64 * 0.25;
        let v = (safety.alpha)(r);
        if v <= prev {
            errors.push(format!("alpha not strictly increasing near r = {r}"));
            break;
        }
        prev = v;
    }

    // Safeguard parameter invariants.
    errors.extend(params.invariant_issues());
    match &params.channel_rule {
        ChannelRule::Fixed(j) => {
            if *j == 0 || *j > plant.p {
                errors.push(format!("fixed channel j = {j} outside 1..={}", plant.p));
            }
        }
        ChannelRule::InitialCondition(pred) => {
            if let Some(j) = eval_guard("channel predicate", || pred(x0), errors) {
                if j == 0 || j > plant.p {
                    errors.push(format!(
                        "channel predicate returned j = {j} outside 1..={}",
                        plant.p
                    ));
                }
            }
        }
        ChannelRule::ArgmaxAtActivation => {}
    }

    if !sliding.is_identity_mix() && rho2_at_x0 > 0.0 {
        report.warnings.push(
            "M != I with rho2(x0) > 0: the diagonal-gain robustness argument is not \
             formally preserved for mixed manifolds under gain uncertainty"
                .to_string(),
        );
    }

    report
}
