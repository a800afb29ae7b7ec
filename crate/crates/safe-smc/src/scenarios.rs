//! Built-in planar mobile-robot case studies.
//!
//! The plant family is the uncertain single-integrator robot
//!   ẋ1 = (1 + θ1)·u1 + δ1,  ẋ2 = (1 + θ2)·u2 + δ2,
//! with θ1 = θ̄1·sin t, θ2 = θ̄2·e^{−t}·cos t, δ1 = δ̄1·cos t,
//! δ2 = δ̄2·sin x2, and a circular obstacle as the unsafe set.

use std::sync::Arc;

use nalgebra::{dvector, DMatrix, DVector, RowDVector};

use crate::model::{
    ChannelRule, RegularFormPlant, SafeguardParams, SafetySpec, SlidingSpec, Switching,
};
use crate::sim::{Integrator, Scenario, SimConfig};

/// Names of the built-in demos.
pub const DEMO_NAMES: [&str; 6] = [
    "robot-s1a",
    "robot-s1b",
    "robot-sat",
    "robot-z50",
    "robot-incompatible",
    "robot-altmanifold",
];

/// Uncertainty amplitudes of the robot plant family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotUncertainty {
    /// Amplitude of θ1 = θ̄1·sin t.
    pub theta1_bar: f64,
    /// Amplitude of θ2 = θ̄2·e^{−t}·cos t.
    pub theta2_bar: f64,
    /// Amplitude of δ1 = δ̄1·cos t.
    pub delta1_bar: f64,
    /// Amplitude of δ2 = δ̄2·sin x2.
    pub delta2_bar: f64,
}

impl RobotUncertainty {
    /// The case-study values.
    pub fn nominal() -> Self {
        Self {
            theta1_bar: 0.5,
            theta2_bar: 0.5,
            delta1_bar: 4.0,
            delta2_bar: 3.0,
        }
    }

    /// All unknown terms identically zero.
    pub fn none() -> Self {
        Self {
            theta1_bar: 0.0,
            theta2_bar: 0.0,
            delta1_bar: 0.0,
            delta2_bar: 0.0,
        }
    }
}

/// Build the robot plant (n = p = 2, m = 0, E = Ĝ = I) with the given
/// uncertainty amplitudes. g0 = 1 − max θ̄, ϱ1 = max δ̄, ϱ2 = max θ̄,
/// ϱ = ϱ1/g0.
pub fn robot_plant(unc: RobotUncertainty) -> RegularFormPlant {
    assert!(
        unc.theta1_bar < 1.0 && unc.theta2_bar < 1.0,
        "gain uncertainty must leave the true gains positive"
    );
    let theta_bar = unc.theta1_bar.max(unc.theta2_bar);
    let delta_bar = unc.delta1_bar.max(unc.delta2_bar);
    let g0 = 1.0 - theta_bar;
    let rho = delta_bar / g0;
    RegularFormPlant {
        n: 2,
        p: 2,
        f_a: Arc::new(|_eta, _zeta| DVector::zeros(0)),
        f_b: Arc::new(|_eta, _zeta| DVector::zeros(2)),
        e: Arc::new(|_x| DMatrix::identity(2, 2)),
        g_hat: Arc::new(|_x| DMatrix::identity(2, 2)),
        g0,
        rho1: Arc::new(move |_x| delta_bar),
        rho2: Arc::new(move |_x| theta_bar),
        rho: Arc::new(move |_x| rho),
        g_true: Arc::new(move |t, _x| {
            DMatrix::from_diagonal(&dvector![
                1.0 + unc.theta1_bar * t.sin(),
                1.0 + unc.theta2_bar * (-t).exp() * t.cos()
            ])
        }),
        delta_true: Arc::new(move |t, x| {
            dvector![unc.delta1_bar * t.cos(), unc.delta2_bar * x[1].sin()]
        }),
    }
}

/// Circular-obstacle barrier h(x) = (x1 − x1c)² + (x2 − x2c)² − l² with a
/// linear class-K rate.
pub fn circular_obstacle_safety(
    x1c: f64,
    x2c: f64,
    l: f64,
    alpha_gain: f64,
    h_bar: f64,
    omega_radius: f64,
) -> SafetySpec {
    SafetySpec {
        h: Arc::new(move |x: &DVector<f64>| {
            (x[0] - x1c).powi(2) + (x[1] - x2c).powi(2) - l * l
        }),
        grad_h: Arc::new(move |x: &DVector<f64>| {
            RowDVector::from_row_slice(&[2.0 * (x[0] - x1c), 2.0 * (x[1] - x2c)])
        }),
        alpha: SafetySpec::linear_alpha(alpha_gain),
        h_bar,
        omega_radius,
    }
}

/// The case-study channel rule: j = 2 when x2(0) ≥ x1(0) − 2, else j = 1.
pub fn section_v_channel_rule() -> ChannelRule {
    ChannelRule::InitialCondition(Arc::new(|x0: &DVector<f64>| {
        if x0[1] >= x0[0] - 2.0 {
            2
        } else {
            1
        }
    }))
}

fn nominal_params(z0: f64, reset: Option<f64>, rule: ChannelRule) -> SafeguardParams {
    SafeguardParams::new(1.0, 0.2, 1.0, 2.0, 1.0, z0, reset, rule)
        .expect("case-study parameters are valid")
}

fn nominal_scenario(x0: DVector<f64>, switching: Switching, z0: f64, reset: Option<f64>) -> Scenario {
    Scenario {
        plant: robot_plant(RobotUncertainty::nominal()),
        sliding: SlidingSpec::full_state(2, 0.1, switching),
        safety: circular_obstacle_safety(5.0, 3.0, 2.0, 10.0, 1.0, 3.83),
        params: nominal_params(z0, reset, section_v_channel_rule()),
        config: SimConfig::new(x0, 5.0),
        safeguard_enabled: true,
        remark3_fallback: false,
    }
}

fn incompatible_scenario() -> Scenario {
    Scenario {
        plant: robot_plant(RobotUncertainty::none()),
        sliding: SlidingSpec::full_state(2, 0.1, Switching::Sign),
        safety: circular_obstacle_safety(0.0, 3.0, 1.5, 10.0, 1.0, 1.5),
        params: nominal_params(-10.0, Some(1.0), ChannelRule::Fixed(1)),
        config: SimConfig {
            dt: 1e-4,
            t_end: 20.0,
            integrator: Integrator::Rk4,
            x0: dvector![0.0, 6.0],
            record_stride: 10,
        },
        safeguard_enabled: true,
        remark3_fallback: false,
    }
}

/// Build a built-in demo scenario by name. Returns `None` for unknown names.
pub fn demo(name: &str) -> Option<Scenario> {
    match name {
        "robot-s1a" => Some(nominal_scenario(
            dvector![7.0, 7.0],
            Switching::Sign,
            -10.0,
            Some(1.0),
        )),
        "robot-s1b" => Some(nominal_scenario(
            dvector![7.0, 4.5],
            Switching::Sign,
            -10.0,
            Some(1.0),
        )),
        "robot-sat" => Some(nominal_scenario(
            dvector![7.0, 7.0],
            Switching::Sat { epsilon: 0.5 },
            -10.0,
            Some(1.0),
        )),
        "robot-z50" => Some(nominal_scenario(
            dvector![7.0, 7.0],
            Switching::Sign,
            -50.0,
            None,
        )),
        "robot-incompatible" => Some(incompatible_scenario()),
        "robot-altmanifold" => {
            let mut sc = incompatible_scenario();
            sc.sliding.m_mix = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]);
            sc.config.t_end = 120.0;
            Some(sc)
        }
        _ => None,
    }
}
