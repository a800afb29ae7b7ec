//! Deterministic fixed-step simulation of the coupled (x, z) system under
//! u = u_smc + u_s on the safeguarded channel, with event detection, energy
//! accounting, and trajectory logging.
//!
//! Fixed-step only: discontinuous sign terms defeat adaptive error
//! estimators. Controls are zero-order-held across a step, including inside
//! RK4 substages; only the plant state and clock advance at substages.

use nalgebra::DVector;

use crate::error::ControlError;
use crate::model::{
    checked_inverse, validate_scenario, ChannelRule, ControllerState, Mode, RegularFormPlant,
    SafeguardParams, SafetySpec, SlidingSpec,
};
use crate::safeguard::{
    coefficients, maybe_reset, safeguard_control, select_channel, update_mode, upsilon, ModeEvent,
    SafeguardCoefficients, z_derivative,
};
use crate::smc::{sliding_variable, unsafe_control};

/// Fixed-step integrator selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Euler,
    /// Classic RK4. The discontinuous right-hand side makes it formally
    /// first-order near the switching surface; accepted.
    Rk4,
}

/// Simulation configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub integrator: Integrator,
    pub x0: DVector<f64>,
    /// Log every k-th step (the final state is always logged).
    pub record_stride: usize,
}

impl SimConfig {
    pub fn new(x0: DVector<f64>, t_end: f64) -> Self {
        Self {
            dt: 1e-4,
            t_end,
            integrator: Integrator::Rk4,
            x0,
            record_stride: 1,
        }
    }
}

/// One logged step, all values taken at the step start.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub x: DVector<f64>,
    pub z: f64,
    pub s: DVector<f64>,
    pub u_smc: DVector<f64>,
    pub u_s: f64,
    pub u: DVector<f64>,
    pub h: f64,
    /// h_Υ = Υ(z)·h(x), the augmented barrier.
    pub h_upsilon: f64,
    pub v_smc: f64,
    pub v_z: f64,
    pub v_total: f64,
    pub mode: Mode,
    pub reset: bool,
}

/// Event log of a run. Times refined by linear interpolation between
/// bracketing steps, so their resolution is at most dt.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    /// First risky-set entry.
    pub t1: Option<f64>,
    pub reset_times: Vec<f64>,
    /// First entry into Ω (ACTIVE → DONE).
    pub t_omega: Option<f64>,
    /// Timestamp at which the safeguard became infeasible, if it did.
    pub infeasible_at: Option<f64>,
    pub min_h: f64,
    /// First time with ‖s‖∞ < 0.05.
    pub reach_time: Option<f64>,
    /// Times at which the Remark-3 fallback zeroed u_smc.
    pub fallback_times: Vec<f64>,
    pub anomalies: Vec<String>,
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Completed,
    /// Aborted: the safeguard inequality had no solution on the selected
    /// channel at time t.
    Infeasible { t: f64 },
    /// Aborted on a numerical failure.
    Failed { t: f64, error: ControlError },
}

/// A full scenario: plant + specs + simulation configuration.
#[derive(Clone)]
pub struct Scenario {
    pub plant: RegularFormPlant,
    pub sliding: SlidingSpec,
    pub safety: SafetySpec,
    pub params: SafeguardParams,
    pub config: SimConfig,
    /// When false the safeguarding loop is bypassed entirely (u_s ≡ 0).
    pub safeguard_enabled: bool,
    /// Opt-in Remark-3 fallback: on infeasibility, zero u_smc until the
    /// trajectory exits the risky set instead of aborting.
    pub remark3_fallback: bool,
}

/// Result of a run: the trajectory log (possibly partial), the events, the
/// final controller state, and the outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<TrajectoryRecord>,
    pub events: EventLog,
    pub final_state: ControllerState,
    pub outcome: RunOutcome,
}

/// Controls evaluated once at a step start (zero-order hold).
#[derive(Debug, Clone)]
pub struct ControlEval {
    pub s: DVector<f64>,
    pub u_smc: DVector<f64>,
    pub u_s: f64,
    pub u: DVector<f64>,
    pub h: f64,
    pub coeffs: Option<SafeguardCoefficients>,
}

/// Options threaded from the run loop into a single step.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepOptions {
    pub safeguard_enabled: bool,
    /// Remark-3 fallback engaged: u_smc is zeroed this step.
    pub zero_u_smc: bool,
    /// A Remark-5 reset fired this step (logged in the record).
    pub reset: bool,
}

/// Output of one integration step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub x_next: DVector<f64>,
    pub z_next: f64,
    pub record: TrajectoryRecord,
}

/// Direction in input space along which the scalar u_s is injected:
/// e_j for plain manifolds, E⁻¹Ĝ⁻¹M⁻¹e_j for mixed manifolds (whose
/// certain effect on ṡ is exactly e_j·u_s).
pub fn injection_direction(
    plant: &RegularFormPlant,
    sliding: &SlidingSpec,
    j: usize,
    x: &DVector<f64>,
) -> Result<DVector<f64>, ControlError> {
    let mut e_j = DVector::zeros(plant.p);
    e_j[j - 1] = 1.0;
    if sliding.is_identity_mix() {
        Ok(e_j)
    } else {
        let e_inv = checked_inverse(&(plant.e)(x), "E")?;
        let g_inv = checked_inverse(&(plant.g_hat)(x), "Ghat")?;
        let m_inv = checked_inverse(&sliding.m_mix, "M")?;
        Ok(e_inv * g_inv * m_inv * e_j)
    }
}

/// Evaluate u_smc and u_s at a step start.
pub fn evaluate_controls(
    plant: &RegularFormPlant,
    sliding: &SlidingSpec,
    safety: &SafetySpec,
    params: &SafeguardParams,
    state: &ControllerState,
    x: &DVector<f64>,
    options: &StepOptions,
) -> Result<ControlEval, ControlError> {
    let out = unsafe_control(plant, sliding, x)?;
    let u_smc = if options.zero_u_smc {
        DVector::zeros(plant.p)
    } else {
        out.u_smc
    };
    let h = (safety.h)(x);

    let mut u_s = 0.0;
    let mut coeffs = None;
    if options.safeguard_enabled && state.mode == Mode::Active && state.j > 0 {
        let co = coefficients(x, state.z, &out.s, &u_smc, plant, sliding, safety, params)?;
        u_s = safeguard_control(&co, state.j, &out.s, state.mode, safety)?;
        coeffs = Some(co);
    }

    let u = if u_s != 0.0 {
        &u_smc + injection_direction(plant, sliding, state.j, x)? * u_s
    } else {
        u_smc.clone()
    };

    Ok(ControlEval {
        s: out.s,
        u_smc,
        u_s,
        u,
        h,
        coeffs,
    })
}

fn make_record(
    state: &ControllerState,
    params: &SafeguardParams,
    eval: &ControlEval,
    t: f64,
    x: &DVector<f64>,
    reset: bool,
) -> TrajectoryRecord {
    let v_smc = 0.5 * eval.s.norm_squared();
    let v_z = params.c_z / 2.0 * state.z.abs();
    TrajectoryRecord {
        t,
        x: x.clone(),
        z: state.z,
        s: eval.s.clone(),
        u_smc: eval.u_smc.clone(),
        u_s: eval.u_s,
        u: eval.u.clone(),
        h: eval.h,
        h_upsilon: upsilon(state.z, params) * eval.h,
        v_smc,
        v_z,
        v_total: v_smc + v_z,
        mode: state.mode,
        reset,
    }
}

/// Coupled right-hand side with the true plant maps and held controls.
#[allow(clippy::too_many_arguments)]
fn derivative(
    plant: &RegularFormPlant,
    sliding: &SlidingSpec,
    params: &SafeguardParams,
    j: usize,
    u: &DVector<f64>,
    u_s: f64,
    tau: f64,
    x: &DVector<f64>,
    z: f64,
) -> (DVector<f64>, f64) {
    let (eta, zeta) = plant.split(x);
    let f_a = (plant.f_a)(&eta, &zeta);
    let zeta_dot = (plant.f_b)(&eta, &zeta)
        + (plant.g_true)(tau, x) * (plant.e)(x) * u
        + (plant.delta_true)(tau, x);
    let mut x_dot = DVector::zeros(plant.n);
    let m = plant.m();
    for i in 0..m {
        x_dot[i] = f_a[i];
    }
    for i in 0..plant.p {
        x_dot[m + i] = zeta_dot[i];
    }
    let s = sliding_variable(sliding, &eta, &zeta);
    let j_eff = if j == 0 { 1 } else { j };
    let z_dot = z_derivative(x, &s, z, u_s, j_eff, plant, sliding, params);
    (x_dot, z_dot)
}

/// One fixed step of the chosen integrator on the coupled (x, z) system.
#[allow(clippy::too_many_arguments)]
pub(crate) fn integrate_step(
    plant: &RegularFormPlant,
    sliding: &SlidingSpec,
    params: &SafeguardParams,
    j: usize,
    u: &DVector<f64>,
    u_s: f64,
    t: f64,
    x: &DVector<f64>,
    z: f64,
    dt: f64,
    integrator: Integrator,
) -> (DVector<f64>, f64) {
    let f = |tau: f64, xs: &DVector<f64>, zs: f64| {
        derivative(plant, sliding, params, j, u, u_s, tau, xs, zs)
    };
    match integrator {
        Integrator::Euler => {
            let (k1x, k1z) = f(t, x, z);
            (x + k1x * dt, z + k1z * dt)
        }
        Integrator::Rk4 => {
            let (k1x, k1z) = f(t, x, z);
            let (k2x, k2z) = f(t + dt / 2.0, &(x + &k1x * (dt / 2.0)), z + k1z * dt / 2.0);
            let (k3x, k3z) = f(t + dt / 2.0, &(x + &k2x * (dt / 2.0)), z + k2z * dt / 2.0);
            let (k4x, k4z) = f(t + dt, &(x + &k3x * dt), z + k3z * dt);
            let x_next = x + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (dt / 6.0);
            let z_next = z + dt / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
            (x_next, z_next)
        }
    }
}

/// Advance one step: controls computed once at the step start and held,
/// the coupled (x, z) state integrated with the true plant maps, and the
/// record filled from start-of-step values.
#[allow(clippy::too_many_arguments)]
pub fn step(
    plant: &RegularFormPlant,
    sliding: &SlidingSpec,
    safety: &SafetySpec,
    params: &SafeguardParams,
    state: &ControllerState,
    x: &DVector<f64>,
    t: f64,
    dt: f64,
    integrator: Integrator,
    options: &StepOptions,
) -> Result<StepOutput, ControlError> {
    let eval = evaluate_controls(plant, sliding, safety, params, state, x, options)?;
    let record = make_record(state, params, &eval, t, x, options.reset);
    let (x_next, mut z_next) = integrate_step(
        plant, sliding, params, state.j, &eval.u, eval.u_s, t, x, state.z, dt, integrator,
    );
    // Step-size guard: the analytic z-dynamics stop at the origin (the
    // drain switches off with sign(z)); never let a discrete step carry z
    // across it.
    if state.z * z_next < 0.0 {
        z_next = 0.0;
    }
    for (i, v) in x_next.iter().enumerate() {
        if !v.is_finite() {
            return Err(ControlError::NonFiniteState {
                t,
                field: format!("x{}", i + 1),
            });
        }
    }
    if !z_next.is_finite() {
        return Err(ControlError::NonFiniteState {
            t,
            field: "z".to_string(),
        });
    }
    Ok(StepOutput {
        x_next,
        z_next,
        record,
    })
}

/// Linear interpolation of the zero crossing of f between (t_prev, f_prev)
/// and (t_curr, f_curr).
fn interp_crossing(t_prev: f64, t_curr: f64, f_prev: f64, f_curr: f64) -> f64 {
    if (f_prev - f_curr).abs() < f64::EPSILON * (f_prev.abs() + f_curr.abs() + 1.0) {
        return t_curr;
    }
    t_prev + (t_curr - t_prev) * f_prev / (f_prev - f_curr)
}

/// Run a full scenario over t ∈ [0, t_end].
///
/// Deterministic: identical inputs produce bit-identical logs. Mode updates
/// and reset checks run every step before control computation. An
/// infeasible safeguard aborts at that timestamp with the partial log.
pub fn run(scenario: &Scenario) -> Result<RunOutput, ControlError> {
    let Scenario {
        plant,
        sliding,
        safety,
        params,
        config,
        safeguard_enabled,
        remark3_fallback,
    } = scenario;

    let report = validate_scenario(plant, sliding, safety, params, &config.x0);
    if !report.is_valid() {
        return Err(ControlError::InvalidScenario(report.errors.join("; ")));
    }
    if !(config.dt > 0.0) || config.t_end < 0.0 || config.record_stride == 0 {
        return Err(ControlError::InvalidScenario(
            "dt must be positive, t_end non-negative, record_stride >= 1".to_string(),
        ));
    }

    let n_steps = (config.t_end / config.dt).round() as usize;
    let dt = config.dt;
    let mut x = config.x0.clone();
    let mut state = ControllerState::new(params.z0);
    state.j = match &params.channel_rule {
        ChannelRule::ArgmaxAtActivation => 0,
        rule => select_channel(rule, &config.x0, None)?,
    };

    let mut events = EventLog {
        min_h: f64::INFINITY,
        ..EventLog::default()
    };
    let mut records = Vec::with_capacity(n_steps / config.record_stride + 2);
    let mut outcome = RunOutcome::Completed;
    let mut fallback_zeroing = false;
    // Previous step-start values of the crossing quantities.
    let mut prev: Option<(f64, f64, f64)> = None; // (h, ||s||2, ||s||inf)

    for k in 0..=n_steps {
        let t = k as f64 * dt;
        let (eta, zeta) = plant.split(&x);
        let s = sliding_variable(sliding, &eta, &zeta);
        let h = (safety.h)(&x);
        let s_norm = s.norm();
        let s_inf = s.amax();

        events.min_h = events.min_h.min(h);
        if events.reach_time.is_none() && s_inf < 0.05 {
            events.reach_time = Some(match prev {
                Some((_, _, p_inf)) if p_inf >= 0.05 => {
                    interp_crossing(t - dt, t, p_inf - 0.05, s_inf - 0.05)
                }
                _ => t,
            });
        }

        match update_mode(&mut state, &x, &s, safety, params, t) {
            ModeEvent::Activated => {
                let t1 = match prev {
                    Some((p_h, _, _)) if p_h > safety.h_bar => {
                        interp_crossing(t - dt, t, p_h - safety.h_bar, h - safety.h_bar)
                    }
                    _ => t,
                };
                state.t1 = Some(t1);
                events.t1 = Some(t1);
                if state.j == 0 && *safeguard_enabled {
                    // Argmax rule: select from the coefficients at activation.
                    let out = unsafe_control(plant, sliding, &x)?;
                    let co =
                        coefficients(&x, state.z, &out.s, &out.u_smc, plant, sliding, safety, params)?;
                    match select_channel(&params.channel_rule, &config.x0, Some(&co)) {
                        Ok(j) => state.j = j,
                        Err(e) => {
                            outcome = RunOutcome::Failed { t, error: e };
                            break;
                        }
                    }
                }
            }
            ModeEvent::EnteredOmega => {
                events.t_omega = Some(match prev {
                    Some((_, p_norm, _)) if p_norm >= safety.omega_radius => interp_crossing(
                        t - dt,
                        t,
                        p_norm - safety.omega_radius,
                        s_norm - safety.omega_radius,
                    ),
                    _ => t,
                });
            }
            ModeEvent::LeftOmegaWhileDone => {
                events
                    .anomalies
                    .push(format!("left Omega while DONE at t = {t}"));
            }
            ModeEvent::None => {}
        }

        let reset = maybe_reset(&mut state, &x, safety, params);
        if reset {
            events.reset_times.push(t);
        }

        if fallback_zeroing && h > safety.h_bar {
            fallback_zeroing = false;
        }

        let mut options = StepOptions {
            safeguard_enabled: *safeguard_enabled,
            zero_u_smc: fallback_zeroing,
            reset,
        };

        if k == n_steps {
            // Final instant: log only.
            match evaluate_controls(plant, sliding, safety, params, &state, &x, &options) {
                Ok(eval) => records.push(make_record(&state, params, &eval, t, &x, reset)),
                Err(e) => {
                    record_abort(&mut events, &mut outcome, e, t);
                }
            }
            break;
        }

        let mut result = step(
            plant,
            sliding,
            safety,
            params,
            &state,
            &x,
            t,
            dt,
            config.integrator,
            &options,
        );
        if *remark3_fallback && !fallback_zeroing {
            if let Err(ControlError::InfeasibleSafeguard { .. }) = result {
                fallback_zeroing = true;
                events.fallback_times.push(t);
                options.zero_u_smc = true;
                result = step(
                    plant,
                    sliding,
                    safety,
                    params,
                    &state,
                    &x,
                    t,
                    dt,
                    config.integrator,
                    &options,
                );
            }
        }
        let out = match result {
            Ok(out) => out,
            Err(e) => {
                record_abort(&mut events, &mut outcome, e, t);
                break;
            }
        };

        if k % config.record_stride == 0 {
            records.push(out.record);
        }
        prev = Some((h, s_norm, s_inf));
        x = out.x_next;
        state.z = out.z_next;
        // Freeze the augmented state at the equilibrium once in DONE.
        if state.mode == Mode::Done && state.z.abs() < 1e-12 {
            state.z = 0.0;
        }
    }

    Ok(RunOutput {
        records,
        events,
        final_state: state,
        outcome,
    })
}

fn record_abort(events: &mut EventLog, outcome: &mut RunOutcome, e: ControlError, t: f64) {
    match e {
        ControlError::InfeasibleSafeguard { .. } => {
            events.infeasible_at = Some(t);
            *outcome = RunOutcome::Infeasible { t };
        }
        other => {
            *outcome = RunOutcome::Failed { t, error: other };
        }
    }
}

/// Extract the (V_smc, V_z, V_total) series from a log.
pub fn energy_series(
    records: &[TrajectoryRecord],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), ControlError> {
    if records.is_empty() {
        return Err(ControlError::EmptyTrajectory);
    }
    Ok((
        records.iter().map(|r| r.v_smc).collect(),
        records.iter().map(|r| r.v_z).collect(),
        records.iter().map(|r| r.v_total).collect(),
    ))
}
