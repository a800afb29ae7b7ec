//! The outer safeguarding loop: Υ, ψ, γ₁/γ₂, the a/b/c coefficients of the
//! safeguard inequality, the closed-form u_s, the augmented-state dynamics,
//! the PRE/ACTIVE/DONE mode machine, channel selection, and the reset rule.

use nalgebra::{DVector, RowDVector};

use crate::error::ControlError;
use crate::model::{
    checked_inverse, inf_matrix_norm, ChannelRule, ControllerState, Mode, RegularFormPlant,
    SafeguardParams, SafetySpec, SlidingSpec,
};
use crate::smc::{sat, sign};
use crate::DEGENERACY_EPS;

/// Coefficients of the safeguard inequality a_j·u_s − b_j·|u_s| ≥ c,
/// together with the scalar fields they are assembled from.
///
/// The ϱ2 margin b is kept per channel, mirroring the per-channel
/// augmented-state dynamics of the closed form: for the single-channel
/// perturbation, the gain uncertainty acts only through column j of E and
/// the j-th gradient component, so the vector-form margin
/// 2‖s‖∞‖E‖∞ψϱ2 + Υγ2 over-charges weak channels (it can exceed their
/// entire barrier authority near gradient-aligned approaches, turning
/// solvable states infeasible).
#[derive(Debug, Clone, PartialEq)]
pub struct SafeguardCoefficients {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub c: f64,
    pub psi: f64,
    pub upsilon: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

/// Υ(z) = h1 + h2·arctan(h3·z), strictly positive when h1 > (π/2)·h2 and
/// confined to the open interval (h1 − πh2/2, h1 + πh2/2).
pub fn upsilon(z: f64, params: &SafeguardParams) -> f64 {
    params.h1 + params.h2 * (params.h3 * z).atan()
}

fn z_sign(z: f64, params: &SafeguardParams) -> f64 {
    match params.z_sign_smoothing {
        None => sign(z),
        Some(eps) => sat(z, eps),
    }
}

/// ψ(x, z) = h2·h3·h(x)·sign(z) / (c_z·(1 + h3²z²)), with sign(0) = 1.
pub fn psi(x: &DVector<f64>, z: f64, safety: &SafetySpec, params: &SafeguardParams) -> f64 {
    let h = (safety.h)(x);
    params.h2 * params.h3 * h * z_sign(z, params)
        / (params.c_z * (1.0 + params.h3 * params.h3 * z * z))
}

/// The ζ-block of ∇h: in regular coordinates the input enters only the
/// ζ-equations, so ∇h·B reduces to the last p gradient components.
fn grad_h_zeta(plant: &RegularFormPlant, safety: &SafetySpec, x: &DVector<f64>) -> RowDVector<f64> {
    let grad = (safety.grad_h)(x);
    grad.columns(plant.m(), plant.p).into_owned()
}

/// Uncertainty margins of the robust barrier inequality:
/// γ1 = ‖∇h·B‖∞·ϱ1(x), γ2 = ‖∇h·B‖∞·‖E(x)‖∞·ϱ2(x).
pub fn gammas(x: &DVector<f64>, plant: &RegularFormPlant, safety: &SafetySpec) -> (f64, f64) {
    let gz = grad_h_zeta(plant, safety, x);
    let ninf = gz.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let e_norm = inf_matrix_norm(&(plant.e)(x));
    let gamma1 = ninf * (plant.rho1)(x);
    let gamma2 = ninf * e_norm * (plant.rho2)(x);
    (gamma1, gamma2)
}

/// Assemble the safeguard inequality coefficients at (x, z).
///
/// With M = I the safeguard perturbs physical input channel j and the
/// coefficients are
///   a = −2·sᵀ·ĜE·ψ + Υ·∇h_ζ·ĜE,
///   b = 2‖s‖∞‖E‖∞·ψ·ϱ2 + Υ·γ2,
///   c = −α(Υ·h) + 2λ√|z|·ψ − Υ·(L_f h + ∇h_ζ·ĜE·u_smc − γ1).
///
/// With M ≠ I the perturbation is injected through E⁻¹Ĝ⁻¹M⁻¹e_j so that its
/// certain effect on ṡ is exactly e_j·u_s; the first term of a becomes
/// −2·s_i·ψ, the barrier gain becomes ∇h_ζ·M⁻¹, and the ϱ2 margins are taken
/// through the injection column.
#[allow(clippy::too_many_arguments)]
pub fn coefficients(
    x: &DVector<f64>,
    z: f64,
    s: &DVector<f64>,
    u_smc: &DVector<f64>,
    plant: &RegularFormPlant,
    sliding: &SlidingSpec,
    safety: &SafetySpec,
    params: &SafeguardParams,
) -> Result<SafeguardCoefficients, ControlError> {
    let ups = upsilon(z, params);
    let ps = psi(x, z, safety, params);
    let (gamma1, gamma2) = gammas(x, plant, safety);
    let h = (safety.h)(x);
    let rho2 = (plant.rho2)(x);
    let e = (plant.e)(x);
    let g_hat = (plant.g_hat)(x);
    let ge = &g_hat * &e;
    let gz = grad_h_zeta(plant, safety, x);
    let l_hat = &gz * &ge;

    // L_f h through the regular-form drift [f_a; f_b].
    let (eta, zeta) = plant.split(x);
    let grad = (safety.grad_h)(x);
    let f_a = (plant.f_a)(&eta, &zeta);
    let f_b = (plant.f_b)(&eta, &zeta);
    let m = plant.m();
    let mut l_f_h = 0.0;
    for i in 0..m {
        l_f_h += grad[i] * f_a[i];
    }
    for i in 0..plant.p {
        l_f_h += grad[m + i] * f_b[i];
    }

    let (a, b) = if sliding.is_identity_mix() {
        let s_ge = s.transpose() * &ge;
        let a = DVector::from_fn(plant.p, |i, _| -2.0 * s_ge[i] * ps + ups * l_hat[i]);
        // Per-channel margins through column i of E (G − Ĝ diagonal):
        // the ṡ-side weight Σ_k |s_k||E_ki| and the ḣ-side weight
        // Σ_k |(∇h·B)_k||E_ki|.
        let b = DVector::from_fn(plant.p, |i, _| {
            let s_weight: f64 = (0..plant.p).map(|k| s[k].abs() * e[(k, i)].abs()).sum();
            let g_weight: f64 = (0..plant.p).map(|k| gz[k].abs() * e[(k, i)].abs()).sum();
            2.0 * ps * s_weight * rho2 + ups * g_weight * rho2
        });
        (a, b)
    } else {
        let m_inv = checked_inverse(&sliding.m_mix, "M")?;
        let g_hat_inv = checked_inverse(&g_hat, "Ghat")?;
        let barrier_gain = &gz * &m_inv;
        let a = DVector::from_fn(plant.p, |i, _| -2.0 * s[i] * ps + ups * barrier_gain[i]);
        // Margins through the injection columns Ĝ⁻¹M⁻¹e_i.
        let gm = &g_hat_inv * &m_inv;
        let mts = sliding.m_mix.transpose() * s;
        let b = DVector::from_fn(plant.p, |i, _| {
            let col: f64 = gm.column(i).iter().map(|v| v.abs()).sum();
            let g_weight: f64 = (0..plant.p).map(|k| gz[k].abs() * gm[(k, i)].abs()).sum();
            2.0 * ps * mts.amax() * rho2 * col + ups * g_weight * rho2
        });
        (a, b)
    };

    let pressure = (&l_hat * u_smc)[0];
    let alpha_val = (safety.alpha)(ups * h);
    let c = -alpha_val + 2.0 * params.lambda * z.abs().sqrt() * ps
        - ups * (l_f_h + pressure - gamma1);

    Ok(SafeguardCoefficients {
        a,
        b,
        c,
        psi: ps,
        upsilon: ups,
        gamma1,
        gamma2,
    })
}

/// Resolve the safeguarded channel (1-based).
pub fn select_channel(
    rule: &ChannelRule,
    x0: &DVector<f64>,
    coefficients_at_activation: Option<&SafeguardCoefficients>,
) -> Result<usize, ControlError> {
    match rule {
        ChannelRule::Fixed(j) => Ok(*j),
        ChannelRule::InitialCondition(pred) => Ok(pred(x0)),
        ChannelRule::ArgmaxAtActivation => {
            let coeffs = coefficients_at_activation.ok_or(ControlError::InvalidScenario(
                "argmax channel rule needs coefficients at activation".to_string(),
            ))?;
            let mut best = 0usize;
            let mut best_abs = -1.0;
            for (i, ai) in coeffs.a.iter().enumerate() {
                if ai.abs() > best_abs {
                    best_abs = ai.abs();
                    best = i;
                }
            }
            if best_abs < DEGENERACY_EPS {
                return Err(ControlError::ChannelDegenerate { max_abs: best_abs });
            }
            Ok(best + 1)
        }
    }
}

/// Closed-form safeguarding control on channel j:
/// zero unless the mode is ACTIVE, the state is outside Ω, and c > 0;
/// otherwise the branch of
///   u_s = c/(a_j − b)  when a_j > b,
///   u_s = c/(a_j + b)  when a_j < −b
/// that solves a_j·u_s − b·|u_s| = c with equality. When both branch
/// conditions hold (possible for b < 0) the branch with smaller |u_s| is
/// taken.
pub fn safeguard_control(
    coeffs: &SafeguardCoefficients,
    j: usize,
    s: &DVector<f64>,
    mode: Mode,
    safety: &SafetySpec,
) -> Result<f64, ControlError> {
    if mode != Mode::Active {
        return Ok(0.0);
    }
    if s.norm() < safety.omega_radius {
        return Ok(0.0);
    }
    let c = coeffs.c;
    if c <= 0.0 {
        return Ok(0.0);
    }
    let a_j = coeffs.a[j - 1];
    let b = coeffs.b;
    let branch_pos = a_j > b;
    let branch_neg = a_j < -b;
    let denom = match (branch_pos, branch_neg) {
        (false, false) => {
            return Err(ControlError::InfeasibleSafeguard { j, a_j, b, c });
        }
        (true, false) => a_j - b,
        (false, true) => a_j + b,
        // Both solvable (b < 0): smaller |u_s| means larger |denominator|.
        (true, true) => {
            if (a_j - b).abs() >= (a_j + b).abs() {
                a_j - b
            } else {
                a_j + b
            }
        }
    };
    if denom.abs() < DEGENERACY_EPS {
        return Err(ControlError::DegenerateDenominator { j, denom });
    }
    Ok(c / denom)
}

/// Augmented-state dynamics for the single-channel closed form:
/// ż = −2·( λ√|z| + ⟨injected certain power⟩ + ⟨ϱ2 margin⟩ ) / c_z · sign(z).
///
/// With M = I the certain power is (sᵀĜE)_j·u_s and the margin
/// |s_j|·‖E_j‖∞·ϱ2·|u_s|; with M ≠ I the normalized injection makes the
/// certain power exactly s_j·u_s with the margin taken through the
/// injection column.
#[allow(clippy::too_many_arguments)]
pub fn z_derivative(
    x: &DVector<f64>,
    s: &DVector<f64>,
    z: f64,
    u_s: f64,
    j: usize,
    plant: &RegularFormPlant,
    sliding: &SlidingSpec,
    params: &SafeguardParams,
) -> f64 {
    let idx = j - 1;
    let rho2 = (plant.rho2)(x);
    let (certain, margin) = if sliding.is_identity_mix() {
        let e = (plant.e)(x);
        let ge = (plant.g_hat)(x) * &e;
        let s_ge = s.transpose() * ge;
        let e_col = e.column(idx).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (
            s_ge[idx] * u_s,
            s[idx].abs() * e_col * rho2 * u_s.abs(),
        )
    } else {
        // Margin through the injection column Ĝ⁻¹M⁻¹e_j; falls back to zero
        // if the inverses degenerate (validation rejects that upfront).
        let margin = match (
            checked_inverse(&sliding.m_mix, "M"),
            checked_inverse(&(plant.g_hat)(x), "Ghat"),
        ) {
            (Ok(m_inv), Ok(g_inv)) => {
                let gm = g_inv * m_inv;
                let col = gm.column(idx).iter().map(|v| v.abs()).sum::<f64>();
                let mts = sliding.m_mix.transpose() * s;
                mts.amax() * rho2 * col * u_s.abs()
            }
            _ => 0.0,
        };
        (s[idx] * u_s, margin)
    };
    -2.0 * (params.lambda * z.abs().sqrt() + certain + margin) / params.c_z * z_sign(z, params)
}

/// What `update_mode` observed at this step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeEvent {
    None,
    /// PRE → ACTIVE: first risky-set entry; t1 recorded.
    Activated,
    /// ACTIVE → DONE: trajectory entered Ω.
    EnteredOmega,
    /// The trajectory left Ω while DONE. Logged as an anomaly, not an error.
    LeftOmegaWhileDone,
}

/// One-way mode machine: PRE → ACTIVE when h(x) ≤ h̄ (after which the
/// activation threshold is effectively +∞, so the switch is single);
/// ACTIVE → DONE when ‖s‖₂ < ρ_Ω. DONE is terminal.
pub fn update_mode(
    state: &mut ControllerState,
    x: &DVector<f64>,
    s: &DVector<f64>,
    safety: &SafetySpec,
    _params: &SafeguardParams,
    t: f64,
) -> ModeEvent {
    match state.mode {
        Mode::Pre => {
            if (safety.h)(x) <= safety.h_bar {
                state.mode = Mode::Active;
                state.t1 = Some(t);
                ModeEvent::Activated
            } else {
                ModeEvent::None
            }
        }
        Mode::Active => {
            if s.norm() < safety.omega_radius {
                state.mode = Mode::Done;
                ModeEvent::EnteredOmega
            } else {
                ModeEvent::None
            }
        }
        Mode::Done => {
            if s.norm() >= safety.omega_radius {
                ModeEvent::LeftOmegaWhileDone
            } else {
                ModeEvent::None
            }
        }
    }
}

/// Remark-5 reset: while ACTIVE with resets enabled, z is reinjected to z0
/// when |z| has drained below the threshold and x is still in the risky
/// set. Since the single-switch rule widens the risky set to h̄ = +∞ once
/// the mode is ACTIVE, the membership test reduces to h(x) ≥ 0. Without
/// this widening z can park at zero just outside the original band, where
/// the flipping sign(z) inflates b and starves the safeguard of authority.
pub fn maybe_reset(
    state: &mut ControllerState,
    x: &DVector<f64>,
    safety: &SafetySpec,
    params: &SafeguardParams,
) -> bool {
    if state.mode != Mode::Active {
        return false;
    }
    let Some(threshold) = params.z_reset_threshold else {
        return false;
    };
    if state.z.abs() < threshold && (safety.h)(x) >= 0.0 {
        state.z = params.z0;
        state.reset_count += 1;
        true
    } else {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn s1a() -> crate::sim::Scenario {
        scenarios::demo("robot-s1a").unwrap()
    }

    #[test]
    fn upsilon_values() {
        let sc = s1a();
        assert_relative_eq!(upsilon(0.0, &sc.params), 1.0);
        assert_relative_eq!(
            upsilon(-10.0, &sc.params),
            0.705774465139253,
            max_relative = 1e-12
        );
        // Supremum h1 + pi*h2/2 approached but never attained.
        let sup = 1.0 + std::f64::consts::PI * 0.2 / 2.0;
        assert!(upsilon(1e12, &sc.params) < sup);
        assert_relative_eq!(upsilon(1e12, &sc.params), sup, epsilon = 1e-9);
    }

    #[test]
    fn psi_values() {
        let sc = s1a();
        // Boundary point: h = 0 -> psi = 0. h = 0 at x = [7, 3].
        assert_relative_eq!(psi(&dvector![7.0, 3.0], -10.0, &sc.safety, &sc.params), 0.0);
        // x = [7,7] (h = 16), z = -10: psi = -3.2/202.
        assert_relative_eq!(
            psi(&dvector![7.0, 7.0], -10.0, &sc.safety, &sc.params),
            -0.015841584158415842,
            max_relative = 1e-12
        );
        // Same x, z = 0: sign(0) = 1 -> psi = 0.2*16/2 = 1.6.
        assert_relative_eq!(psi(&dvector![7.0, 7.0], 0.0, &sc.safety, &sc.params), 1.6);
    }

    #[test]
    fn gamma_values() {
        let sc = s1a();
        assert_eq!(gammas(&dvector![7.0, 7.0], &sc.plant, &sc.safety), (32.0, 4.0));
        assert_eq!(gammas(&dvector![7.0, 3.0], &sc.plant, &sc.safety), (16.0, 2.0));
        // No uncertainty -> both margins vanish.
        let inc = scenarios::demo("robot-incompatible").unwrap();
        assert_eq!(gammas(&dvector![0.0, 6.0], &inc.plant, &inc.safety), (0.0, 0.0));
    }

    /// Independent oracle: the §V printed instantiation of the coefficient
    /// formulas for the planar robot (obstacle at (5,3), l = 2, Ĝ = E = I),
    /// kept separate from the general implementation path.
    fn printed_case_study_coefficients(
        x: &DVector<f64>,
        z: f64,
        u_smc: &DVector<f64>,
    ) -> (DVector<f64>, f64, f64) {
        let (h1, h2, h3, c_z, lam) = (1.0, 0.2, 1.0, 2.0, 1.0);
        let (x1c, x2c) = (5.0, 3.0);
        let sgn = |y: f64| if y >= 0.0 { 1.0 } else { -1.0 };
        let h = (x[0] - x1c).powi(2) + (x[1] - x2c).powi(2) - 4.0;
        let ups = h1 + h2 * (h3 * z).atan();
        let ps = h2 * h3 * h * sgn(z) / (c_z * (1.0 + h3 * h3 * z * z));
        let d = dvector![x[0] - x1c, x[1] - x2c];
        let a = dvector![
            -2.0 * ps * x[0] + 2.0 * ups * d[0],
            -2.0 * ps * x[1] + 2.0 * ups * d[1]
        ];
        let rho2 = 0.5;
        let b = 2.0 * (ps * x.amax() + ups * d.amax()) * rho2;
        let gamma1 = 2.0 * d.amax() * 4.0;
        let c = -10.0 * ups * h + 2.0 * lam * ps * z.abs().sqrt()
            - ups * (2.0 * (d[0] * u_smc[0] + d[1] * u_smc[1]) - gamma1);
        (a, b, c)
    }

    #[test]
    fn coefficients_match_case_study_values() {
        let sc = s1a();
        let x = dvector![7.0, 7.0];
        let u_smc = dvector![-8.1, -8.1];
        let co =
            coefficients(&x, -10.0, &x, &u_smc, &sc.plant, &sc.sliding, &sc.safety, &sc.params)
                .unwrap();
        assert_relative_eq!(co.a[0], 3.044880038774834, max_relative = 1e-12);
        assert_relative_eq!(co.a[1], 5.867977899331846, max_relative = 1e-12);
        assert_relative_eq!(co.b, 2.712206771448101, max_relative = 1e-12);
        assert_relative_eq!(co.c, -21.838044501660676, max_relative = 1e-10);

        let x2 = dvector![6.8, 4.2];
        let co2 =
            coefficients(&x2, -10.0, &x2, &u_smc, &sc.plant, &sc.sliding, &sc.safety, &sc.params)
                .unwrap();
        assert_relative_eq!(co2.a[0], 2.5499445101448748, max_relative = 1e-12);
        assert_relative_eq!(co2.a[1], 1.6995141618787621, max_relative = 1e-12);
        assert_relative_eq!(co2.b, 1.2658158194288731, max_relative = 1e-12);
        assert_relative_eq!(co2.c, 39.66026682437272, max_relative = 1e-10);
    }

    #[test]
    fn coefficients_agree_with_printed_instantiation() {
        let sc = s1a();
        let u_smc = dvector![-8.1, -8.1];
        for (x, z) in [
            (dvector![7.0, 7.0], -10.0),
            (dvector![6.8, 4.2], -10.0),
            (dvector![5.5, 1.2], -3.0),
            (dvector![2.0, 2.0], 0.5),
            (dvector![7.0, 4.5], -0.2),
        ] {
            let general = coefficients(
                &x, z, &x, &u_smc, &sc.plant, &sc.sliding, &sc.safety, &sc.params,
            )
            .unwrap();
            let (a, b, c) = printed_case_study_coefficients(&x, z, &u_smc);
            assert_relative_eq!(general.a[0], a[0], max_relative = 1e-12);
            assert_relative_eq!(general.a[1], a[1], max_relative = 1e-12);
            assert_relative_eq!(general.b, b, max_relative = 1e-12);
            assert_relative_eq!(general.c, c, max_relative = 1e-10);
        }
    }

    #[test]
    fn coefficients_degenerate_corner() {
        // s = 0, z = 0, no uncertainty, u_smc = 0, f = 0:
        // a = Upsilon * L_hat, b = 0, c = -alpha(Upsilon*h).
        let sc = scenarios::demo("robot-incompatible").unwrap();
        let x = dvector![0.0, 6.0];
        let zero = dvector![0.0, 0.0];
        let co = coefficients(
            &x, 0.0, &zero, &zero, &sc.plant, &sc.sliding, &sc.safety, &sc.params,
        )
        .unwrap();
        let h = 9.0 - 2.25;
        assert_relative_eq!(co.a[0], co.upsilon * 0.0);
        assert_relative_eq!(co.a[1], co.upsilon * 6.0);
        assert_relative_eq!(co.b, 0.0);
        assert_relative_eq!(co.c, -10.0 * co.upsilon * h, max_relative = 1e-12);
    }

    #[test]
    fn channel_selection_rules() {
        let sc = s1a();
        // §V rule: j = 2 when x2(0) >= x1(0) - 2.
        assert_eq!(
            select_channel(&sc.params.channel_rule, &dvector![7.0, 7.0], None).unwrap(),
            2
        );
        assert_eq!(
            select_channel(&sc.params.channel_rule, &dvector![7.0, 4.5], None).unwrap(),
            1
        );
        // Predicate arithmetic: 4.5 >= 6.5 - 2 holds.
        assert_eq!(
            select_channel(&sc.params.channel_rule, &dvector![6.5, 4.5], None).unwrap(),
            2
        );
        let coeffs = SafeguardCoefficients {
            a: dvector![3.0449, 5.8680],
            b: 0.0,
            c: 0.0,
            psi: 0.0,
            upsilon: 1.0,
            gamma1: 0.0,
            gamma2: 0.0,
        };
        assert_eq!(
            select_channel(&ChannelRule::ArgmaxAtActivation, &dvector![0.0, 0.0], Some(&coeffs))
                .unwrap(),
            2
        );
        let tiny = SafeguardCoefficients {
            a: dvector![1e-12, -1e-13],
            ..coeffs
        };
        assert!(matches!(
            select_channel(&ChannelRule::ArgmaxAtActivation, &dvector![0.0, 0.0], Some(&tiny)),
            Err(ControlError::ChannelDegenerate { .. })
        ));
    }

    fn active_control(a: DVector<f64>, b: f64, c: f64, j: usize) -> Result<f64, ControlError> {
        let sc = s1a();
        let coeffs = SafeguardCoefficients {
            a,
            b,
            c,
            psi: 0.0,
            upsilon: 1.0,
            gamma1: 0.0,
            gamma2: 0.0,
        };
        // s far outside Omega so only the branch logic decides.
        safeguard_control(&coeffs, j, &dvector![7.0, 7.0], Mode::Active, &sc.safety)
    }

    #[test]
    fn safeguard_control_branches() {
        // Branch 1 identity: 5*0.5 - 1*0.5 = 2.
        assert_relative_eq!(active_control(dvector![5.0, 0.0], 1.0, 2.0, 1).unwrap(), 0.5);
        // Branch 2 identity: (-5)(-0.5) - 1*0.5 = 2.
        assert_relative_eq!(active_control(dvector![-5.0, 0.0], 1.0, 2.0, 1).unwrap(), -0.5);
        // c <= 0 -> zero.
        assert_relative_eq!(active_control(dvector![5.0, 0.0], 1.0, -21.8, 1).unwrap(), 0.0);
        // Infeasible: c > 0 with -b <= a_j <= b.
        assert!(matches!(
            active_control(dvector![0.1, 0.0], 1.0, 2.0, 1),
            Err(ControlError::InfeasibleSafeguard { .. })
        ));
        // Degenerate denominator.
        assert!(matches!(
            active_control(dvector![1.0 + 1e-12, 0.0], 1.0, 2.0, 1),
            Err(ControlError::DegenerateDenominator { .. })
        ));
    }

    #[test]
    fn safeguard_control_case_study_risky_sample() {
        // a_2 ~ 1.6995, b ~ 1.2658, c ~ 39.660 -> u_s ~ 91.447 via c/(a_j - b).
        let us = active_control(
            dvector![2.5499445101448748, 1.6995141618787621],
            1.2658158194288731,
            39.66026682437272,
            2,
        )
        .unwrap();
        assert_relative_eq!(us, 91.44666451879557, max_relative = 1e-10);
        // The inequality holds with equality at the returned value.
        let residual = 1.6995141618787621 * us - 1.2658158194288731 * us.abs()
            - 39.66026682437272;
        assert!(residual.abs() < 1e-9);
    }

    #[test]
    fn safeguard_control_overlapping_branches_takes_smaller_magnitude() {
        // b < 0 makes both branches solvable; a_j > 0 favors branch 1.
        let us = active_control(dvector![1.0, 0.0], -3.0, 2.0, 1).unwrap();
        assert_relative_eq!(us, 2.0 / 4.0);
        let us_neg = active_control(dvector![-1.0, 0.0], -3.0, 2.0, 1).unwrap();
        assert_relative_eq!(us_neg, 2.0 / -4.0);
    }

    #[test]
    fn safeguard_control_zero_when_not_active_or_inside_omega() {
        let sc = s1a();
        let coeffs = SafeguardCoefficients {
            a: dvector![5.0, 5.0],
            b: 0.0,
            c: 10.0,
            psi: 0.0,
            upsilon: 1.0,
            gamma1: 0.0,
            gamma2: 0.0,
        };
        let far = dvector![7.0, 7.0];
        assert_eq!(
            safeguard_control(&coeffs, 1, &far, Mode::Pre, &sc.safety).unwrap(),
            0.0
        );
        assert_eq!(
            safeguard_control(&coeffs, 1, &far, Mode::Done, &sc.safety).unwrap(),
            0.0
        );
        // ||s|| = 3 < 3.83 -> inside Omega.
        let near = dvector![3.0, 0.0];
        assert_eq!(
            safeguard_control(&coeffs, 1, &near, Mode::Active, &sc.safety).unwrap(),
            0.0
        );
    }

    #[test]
    fn z_derivative_values() {
        let sc = s1a();
        // u_s = 0, z = -10: zdot = +sqrt(10) (relaxation toward zero).
        let zd = z_derivative(
            &dvector![7.0, 7.0],
            &dvector![7.0, 7.0],
            -10.0,
            0.0,
            2,
            &sc.plant,
            &sc.sliding,
            &sc.params,
        );
        assert_relative_eq!(zd, 10.0f64.sqrt(), max_relative = 1e-12);
        // Equilibrium: z = 0, s = 0, u_s = 0.
        let zd0 = z_derivative(
            &dvector![0.0, 0.0],
            &dvector![0.0, 0.0],
            0.0,
            0.0,
            2,
            &sc.plant,
            &sc.sliding,
            &sc.params,
        );
        assert_eq!(zd0, 0.0);
        // Risky-set sample: s_j = 4.2, u_s ~ 91.447 -> energy drain ~ +579.28.
        let zd2 = z_derivative(
            &dvector![6.8, 4.2],
            &dvector![6.8, 4.2],
            -10.0,
            91.44666451879557,
            2,
            &sc.plant,
            &sc.sliding,
            &sc.params,
        );
        assert_relative_eq!(zd2, 579.2762641285806, max_relative = 1e-10);
    }

    #[test]
    fn mode_machine_transitions() {
        let sc = s1a();
        let mut state = ControllerState::new(-10.0);
        // h([7,7]) = 16 > 1: stays PRE.
        let x = dvector![7.0, 7.0];
        assert_eq!(
            update_mode(&mut state, &x, &x, &sc.safety, &sc.params, 0.0),
            ModeEvent::None
        );
        assert_eq!(state.mode, Mode::Pre);
        // h = 0.68 <= 1 while PRE: activates and records t1.
        let x_risky = dvector![6.8, 4.2];
        assert_eq!(
            update_mode(&mut state, &x_risky, &x_risky, &sc.safety, &sc.params, 0.118),
            ModeEvent::Activated
        );
        assert_eq!(state.mode, Mode::Active);
        assert_eq!(state.t1, Some(0.118));
        // ||s|| = 3 < 3.83: enters Omega, terminal.
        let s_small = dvector![3.0, 0.0];
        assert_eq!(
            update_mode(&mut state, &x_risky, &s_small, &sc.safety, &sc.params, 0.8),
            ModeEvent::EnteredOmega
        );
        assert_eq!(state.mode, Mode::Done);
        // Leaving Omega while DONE is an anomaly, not a transition.
        let s_big = dvector![7.0, 7.0];
        assert_eq!(
            update_mode(&mut state, &x_risky, &s_big, &sc.safety, &sc.params, 0.9),
            ModeEvent::LeftOmegaWhileDone
        );
        assert_eq!(state.mode, Mode::Done);
    }

    #[test]
    fn reset_rule() {
        let sc = s1a();
        let mut state = ControllerState::new(-10.0);
        state.mode = Mode::Active;
        state.z = -0.4;
        // |z| < 1 and h = 0.3 at a point on the risky ring.
        let x_risky = dvector![5.0, 3.0 + (4.3f64).sqrt()];
        assert!(maybe_reset(&mut state, &x_risky, &sc.safety, &sc.params));
        assert_eq!(state.z, -10.0);
        assert_eq!(state.reset_count, 1);
        // |z| still charged: no reset.
        state.z = -5.0;
        assert!(!maybe_reset(&mut state, &x_risky, &sc.safety, &sc.params));
        assert_eq!(state.z, -5.0);
        // Safe side but outside the original band: the widened risky set
        // (h_bar = +infinity once ACTIVE) still resets.
        state.z = -0.4;
        assert!(maybe_reset(&mut state, &dvector![7.0, 7.0], &sc.safety, &sc.params));
        assert_eq!(state.reset_count, 2);
        // Unsafe side: no reset.
        state.z = -0.4;
        assert!(!maybe_reset(&mut state, &dvector![5.0, 3.0], &sc.safety, &sc.params));
        // Resets disabled.
        let mut params = sc.params.clone();
        params.z_reset_threshold = None;
        assert!(!maybe_reset(&mut state, &x_risky, &sc.safety, &params));
        assert_eq!(state.reset_count, 2);
        // Not ACTIVE: never resets.
        state.mode = Mode::Pre;
        assert!(!maybe_reset(&mut state, &x_risky, &sc.safety, &sc.params));
    }
}
