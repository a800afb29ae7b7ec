//! The inner, possibly unsafe, sliding mode controller and the finite-time
//! reaching bound.

use nalgebra::DVector;

use crate::error::ControlError;
use crate::model::{checked_inverse, RegularFormPlant, SlidingSpec, Switching};

/// Output of the unsafe control law, with the intermediate quantities the
/// safeguard and the monitors need.
#[derive(Debug, Clone, PartialEq)]
pub struct UnsafeControlOutput {
    pub u_smc: DVector<f64>,
    pub s: DVector<f64>,
    /// Gain actually used: β(x) = ϱ(x) + β0.
    pub beta: f64,
    /// Reaching term v, v_i = −β(x)·σ(s_i).
    pub v: DVector<f64>,
}

/// sign with the sign(0) = 1 convention used throughout.
pub fn sign(y: f64) -> f64 {
    if y >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// sat(y, ε): y/|y| when |y| ≥ ε, y/ε otherwise.
pub fn sat(y: f64, epsilon: f64) -> f64 {
    if y.abs() >= epsilon {
        sign(y)
    } else {
        y / epsilon
    }
}

/// Sliding variable s = M·(ζ − φ(η)).
pub fn sliding_variable(
    sliding: &SlidingSpec,
    eta: &DVector<f64>,
    zeta: &DVector<f64>,
) -> DVector<f64> {
    let deviation = zeta - (sliding.phi)(eta);
    &sliding.m_mix * deviation
}

/// Elementwise switching term σ(s_i).
pub fn switching_term(s: &DVector<f64>, switching: Switching) -> DVector<f64> {
    s.map(|si| match switching {
        Switching::Sign => sign(si),
        Switching::Sat { epsilon } => sat(si, epsilon),
    })
}

/// The unsafe control law
/// u_smc = E⁻¹·( −Ĝ⁻¹·(f_b − (∂φ/∂η)·f_a) + M⁻¹·v ),
/// v_i = −β(x)·σ(s_i), β(x) = ϱ(x) + β0.
pub fn unsafe_control(
    plant: &RegularFormPlant,
    sliding: &SlidingSpec,
    x: &DVector<f64>,
) -> Result<UnsafeControlOutput, ControlError> {
    let (eta, zeta) = plant.split(x);
    let s = sliding_variable(sliding, &eta, &zeta);
    let beta = (plant.rho)(x) + sliding.beta0;
    let v = switching_term(&s, sliding.switching).map(|sigma| -beta * sigma);

    let drift = (plant.f_b)(&eta, &zeta) - (sliding.jac_phi)(&eta) * (plant.f_a)(&eta, &zeta);
    let e_inv = checked_inverse(&(plant.e)(x), "E")?;
    let g_hat_inv = checked_inverse(&(plant.g_hat)(x), "Ghat")?;
    let m_inv = checked_inverse(&sliding.m_mix, "M")?;

    let u_smc = &e_inv * (-(&g_hat_inv * drift) + &m_inv * &v);
    Ok(UnsafeControlOutput { u_smc, s, beta, v })
}

/// Conservative finite-time bound on reaching (s, z) = (0, 0):
/// t_r ≤ √(2·V(0)) / μ with V(0) = ½‖s0‖₂² + (c_z/2)|z0| and
/// μ = min{ g0·β0, λ/√c_z }.
pub fn reaching_time_bound(
    s0: &DVector<f64>,
    z0: f64,
    g0: f64,
    beta0: f64,
    lambda: f64,
    c_z: f64,
) -> f64 {
    let v0 = 0.5 * s0.norm_squared() + c_z / 2.0 * z0.abs();
    let mu = (g0 * beta0).min(lambda / c_z.sqrt());
    (2.0 * v0).sqrt() / mu
}
