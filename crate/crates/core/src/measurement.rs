//! Readout model, readout sampling and the single-step state updates.
//!
//! All updates act on the Bloch vector directly. The exact update applies the
//! Gaussian Kraus operator, the Hamiltonian rotation and the extra dephasing in
//! that order.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BlochState, ModelParams, PHYSICAL_SLACK};

/// Time-averaged detector output over one step.
pub type Readout = f64;

/// Overshoots of the unit ball below this are always projected back.
pub const CLIP_TOLERANCE: f64 = 1e-6;

/// Largest single Euler-type displacement that may be projected back onto the
/// ball when it overshoots by more than `CLIP_TOLERANCE`.
pub const MAX_PROJECTED_STEP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum UpdateScheme {
    ExactOperator,
    Stratonovich,
    Ito,
    SplitOperator { pieces: u32 },
}

impl UpdateScheme {
    pub fn split_default() -> Self {
        UpdateScheme::SplitOperator { pieces: 10 }
    }

    pub fn name(&self) -> String {
        match self {
            UpdateScheme::ExactOperator => "exact-operator".into(),
            UpdateScheme::Stratonovich => "stratonovich".into(),
            UpdateScheme::Ito => "ito".into(),
            UpdateScheme::SplitOperator { pieces } => format!("split-operator({pieces})"),
        }
    }
}

fn check_z(z: f64) -> Result<()> {
    if !(z.abs() <= 1.0 + PHYSICAL_SLACK) {
        return Err(Error::UnphysicalState { norm: z.abs() });
    }
    Ok(())
}

pub fn readout_pdf(r: Readout, z: f64, params: &ModelParams) -> Result<f64> {
    check_z(z)?;
    let a = params.dt / params.tau_m;
    let norm = (a / (2.0 * PI)).sqrt();
    let up = (-a * (r - 1.0).powi(2) / 2.0).exp() * (1.0 + z) / 2.0;
    let down = (-a * (r + 1.0).powi(2) / 2.0).exp() * (1.0 - z) / 2.0;
    Ok(norm * (up + down))
}

pub fn sample_readout<R: Rng + ?Sized>(z: f64, params: &ModelParams, rng: &mut R) -> Result<Readout> {
    check_z(z)?;
    let s = if rng.random::<f64>() < (1.0 + z) / 2.0 { 1.0 } else { -1.0 };
    let sd = (params.tau_m / params.dt).sqrt();
    let n = Normal::new(s, sd).map_err(|e| Error::invalid("dt", e.to_string()))?;
    Ok(n.sample(rng))
}

/// White noise increment with variance 1/dt.
pub fn sample_white_noise<R: Rng + ?Sized>(params: &ModelParams, rng: &mut R) -> f64 {
    let n: f64 = rng.sample(rand_distr::StandardNormal);
    n / params.dt.sqrt()
}

/// Readout implied by white noise: r = z + sqrt(tau_m) xi.
pub fn white_noise_readout(z: f64, xi: f64, params: &ModelParams) -> Readout {
    z + params.tau_m.sqrt() * xi
}

/// Kraus update for exp[-dt (r - sigma_z)^2 / 4 tau_m], with k = r dt / tau_m.
fn measure(s: BlochState, k: f64) -> Result<BlochState> {
    let ak = k.abs();
    let p = (1.0 + s.z) * (k - ak).exp();
    let m = (1.0 - s.z) * (-k - ak).exp();
    let den = p + m;
    if !(den > 1e-300) {
        return Err(Error::Underflow { trace: den });
    }
    let shrink = 2.0 * (-ak).exp() / den;
    Ok(BlochState {
        x: s.x * shrink,
        y: s.y * shrink,
        z: (p - m) / den,
    })
}

/// Rotation generated by H = (eps/2) sigma_z - (delta/2) sigma_x over a time `t`.
fn rotate(s: BlochState, epsilon: f64, delta: f64, t: f64) -> BlochState {
    let w = [-delta, 0.0, epsilon];
    let wn = (delta * delta + epsilon * epsilon).sqrt();
    if wn == 0.0 || t == 0.0 {
        return s;
    }
    let n = [w[0] / wn, w[1] / wn, w[2] / wn];
    let phi = wn * t;
    let (sp, cp) = phi.sin_cos();
    let r = [s.x, s.y, s.z];
    let cross = [
        n[1] * r[2] - n[2] * r[1],
        n[2] * r[0] - n[0] * r[2],
        n[0] * r[1] - n[1] * r[0],
    ];
    let dot = n[0] * r[0] + n[1] * r[1] + n[2] * r[2];
    let out: Vec<f64> = (0..3)
        .map(|i| r[i] * cp + cross[i] * sp + n[i] * dot * (1.0 - cp))
        .collect();
    BlochState {
        x: out[0],
        y: out[1],
        z: out[2],
    }
}

fn dephase(s: BlochState, gamma: f64, t: f64) -> BlochState {
    let f = (-gamma * t).exp();
    BlochState {
        x: s.x * f,
        y: s.y * f,
        z: s.z,
    }
}

pub fn update_exact(
    state: &BlochState,
    r: Readout,
    params: &ModelParams,
    delta_eff: f64,
    scheme: UpdateScheme,
) -> Result<BlochState> {
    let k = r * params.dt / params.tau_m;
    let mut s = *state;
    match scheme {
        UpdateScheme::ExactOperator => {
            s = measure(s, k)?;
            s = rotate(s, params.epsilon, delta_eff, params.dt);
        }
        UpdateScheme::SplitOperator { pieces } => {
            if pieces == 0 {
                return Err(Error::invalid("pieces", "split-operator needs at least one piece"));
            }
            let m = pieces as f64;
            for _ in 0..pieces {
                s = measure(s, k / m)?;
                s = rotate(s, params.epsilon, delta_eff, params.dt / m);
            }
        }
        other => {
            return Err(Error::invalid(
                "scheme",
                format!("{} is not an operator scheme", other.name()),
            ))
        }
    }
    Ok(dephase(s, params.gamma, params.dt))
}

/// Projects small overshoots back onto the sphere, rejects large ones.
fn clip(prev: &BlochState, next: BlochState) -> Result<BlochState> {
    let n = next.norm();
    if !n.is_finite() {
        return Err(Error::StepSize { overshoot: f64::INFINITY });
    }
    if n <= 1.0 {
        return Ok(next);
    }
    let over = n - 1.0;
    let step = ((next.x - prev.x).powi(2) + (next.y - prev.y).powi(2) + (next.z - prev.z).powi(2)).sqrt();
    if over <= CLIP_TOLERANCE || (step <= MAX_PROJECTED_STEP && over <= step * step) {
        Ok(BlochState {
            x: next.x / n,
            y: next.y / n,
            z: next.z / n,
        })
    } else {
        Err(Error::StepSize { overshoot: over })
    }
}

/// One Euler-Maruyama step of the Itô equations driven by white noise `xi`.
pub fn update_ito(state: &BlochState, xi: f64, params: &ModelParams, delta_eff: f64) -> Result<BlochState> {
    let BlochState { x, y, z } = *state;
    let g = params.gamma_total();
    let eps = params.epsilon;
    let dt = params.dt;
    let dw = xi * dt / params.tau_m.sqrt();
    let next = BlochState {
        x: x + (-g * x - eps * y) * dt - x * z * dw,
        y: y + (-g * y + eps * x + delta_eff * z) * dt - y * z * dw,
        z: z - delta_eff * y * dt + (1.0 - z * z) * dw,
    };
    clip(state, next)
}

fn strat_drift(s: &BlochState, r: f64, params: &ModelParams, delta_eff: f64) -> [f64; 3] {
    let g = params.gamma;
    let eps = params.epsilon;
    let k = r / params.tau_m;
    [
        -g * s.x - eps * s.y - s.x * s.z * k,
        -g * s.y + eps * s.x + delta_eff * s.z - s.y * s.z * k,
        -delta_eff * s.y + (1.0 - s.z * s.z) * k,
    ]
}

/// One step of the Stratonovich equations with readout `r`, using the
/// trapezoidal predictor-corrector so that the step converges to the
/// Stratonovich (not the Itô) solution.
pub fn update_stratonovich(
    state: &BlochState,
    r: Readout,
    params: &ModelParams,
    delta_eff: f64,
) -> Result<BlochState> {
    let dt = params.dt;
    let f0 = strat_drift(state, r, params, delta_eff);
    let pred = BlochState {
        x: state.x + dt * f0[0],
        y: state.y + dt * f0[1],
        z: state.z + dt * f0[2],
    };
    let f1 = strat_drift(&pred, r, params, delta_eff);
    let next = BlochState {
        x: state.x + 0.5 * dt * (f0[0] + f1[0]),
        y: state.y + 0.5 * dt * (f0[1] + f1[1]),
        z: state.z + 0.5 * dt * (f0[2] + f1[2]),
    };
    clip(state, next)
}

/// Log-likelihood increment -dt (r^2 - 2 r z + 1) / (2 tau_m).
pub fn action_increment(state: &BlochState, r: Readout, params: &ModelParams) -> f64 {
    -params.dt * (r * r - 2.0 * r * state.z + 1.0) / (2.0 * params.tau_m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qnd(dt: f64) -> ModelParams {
        ModelParams::new(1.0, dt, 10)
    }

    #[test]
    fn pdf_peak_at_pointer_state() {
        let p = qnd(0.01);
        let v = readout_pdf(1.0, 1.0, &p).unwrap();
        assert!((v - (0.01 / (2.0 * PI)).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn pdf_rejects_unphysical_z() {
        assert!(readout_pdf(0.0, 1.5, &qnd(0.01)).is_err());
    }

    #[test]
    fn exact_update_matches_tanh_form() {
        let p = qnd(0.02);
        for &(z, r) in &[(0.3, 2.0), (-0.7, -5.0), (0.0, 11.0), (0.95, -30.0)] {
            let s = BlochState::new(0.0, 0.0, z).unwrap();
            let out = update_exact(&s, r, &p, 0.0, UpdateScheme::ExactOperator).unwrap();
            let expect = (z.atanh() + r * p.dt / p.tau_m).tanh();
            assert!((out.z - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn pointer_states_are_fixed() {
        let p = qnd(0.05);
        for z in [1.0, -1.0] {
            let s = BlochState::new(0.0, 0.0, z).unwrap();
            for r in [-40.0, 0.3, 25.0] {
                let out = update_exact(&s, r, &p, 0.0, UpdateScheme::ExactOperator).unwrap();
                assert_eq!(out.z, z);
            }
        }
    }

    #[test]
    fn extreme_readout_does_not_overflow() {
        let p = qnd(1.0);
        let s = BlochState::new(0.6, 0.0, 0.8).unwrap();
        let out = update_exact(&s, 5000.0, &p, 0.0, UpdateScheme::ExactOperator).unwrap();
        assert!((out.z - 1.0).abs() < 1e-12 && out.x.abs() < 1e-12);
    }

    #[test]
    fn underflow_is_reported() {
        let p = qnd(1.0);
        let s = BlochState::new(0.0, 0.0, -1.0).unwrap();
        let e = update_exact(&s, 800.0, &p, 0.0, UpdateScheme::ExactOperator);
        assert!(matches!(e, Err(Error::Underflow { .. })));
    }

    #[test]
    fn rotation_direction_follows_bloch_equations() {
        // Small-step rotation must reproduce dz/dt = -delta y, dy/dt = delta z.
        let p = qnd(1e-6);
        let s = BlochState::new(0.0, 0.6, 0.8).unwrap();
        let out = update_exact(&s, 0.0, &p, 3.0, UpdateScheme::ExactOperator).unwrap();
        assert!(((out.z - s.z) / p.dt - (-3.0 * 0.6)).abs() < 1e-4);
        assert!(((out.y - s.y) / p.dt - 3.0 * 0.8).abs() < 1e-4);
    }

    #[test]
    fn split_operator_agrees_for_small_rotation() {
        let p = ModelParams::new(1.0, 1e-4, 10);
        let s = BlochState::new(0.1, 0.5, -0.3).unwrap();
        for r in [-50.0, 0.0, 80.0] {
            let a = update_exact(&s, r, &p, 1.0, UpdateScheme::ExactOperator).unwrap();
            let b = update_exact(&s, r, &p, 1.0, UpdateScheme::split_default()).unwrap();
            assert!((a.x - b.x).abs() < 1e-6 && (a.y - b.y).abs() < 1e-6 && (a.z - b.z).abs() < 1e-6);
        }
    }

    #[test]
    fn ito_drift_free_point() {
        let p = qnd(0.01);
        let s = BlochState::new(0.0, 0.0, 0.4).unwrap();
        let out = update_ito(&s, 0.0, &p, 0.0).unwrap();
        assert_eq!(out, s);
        let top = BlochState::new(0.0, 0.0, 1.0).unwrap();
        assert_eq!(update_ito(&top, 17.0, &p, 0.0).unwrap().z, 1.0);
    }

    #[test]
    fn large_overshoot_is_a_step_size_error() {
        let p = qnd(0.01);
        let s = BlochState::new(0.0, 0.0, 0.5).unwrap();
        let e = update_ito(&s, 200.0, &p, 0.0);
        assert!(matches!(e, Err(Error::StepSize { .. })));
    }

    #[test]
    fn stratonovich_zero_readout_is_identity_without_hamiltonian() {
        let p = qnd(0.01);
        let s = BlochState::new(0.3, -0.2, 0.4).unwrap();
        assert_eq!(update_stratonovich(&s, 0.0, &p, 0.0).unwrap(), s);
    }

    #[test]
    fn stratonovich_dephasing_factor() {
        let dt = 1e-3;
        let p = qnd(dt).with_gamma(2.0);
        let s = BlochState::new(0.3, -0.2, 0.4).unwrap();
        let out = update_stratonovich(&s, 0.0, &p, 0.0).unwrap();
        let f = 1.0 - 2.0 * dt;
        assert!((out.x - 0.3 * f).abs() <= 0.3 * (2.0 * dt).powi(2));
        assert!((out.y + 0.2 * f).abs() <= 0.2 * (2.0 * dt).powi(2));
        assert_eq!(out.z, 0.4);
    }

    #[test]
    fn stratonovich_local_error_is_second_order() {
        let s = BlochState::new(0.2, 0.1, 0.35).unwrap();
        let r = 1.7;
        let err = |dt: f64| {
            let p = qnd(dt);
            let a = update_exact(&s, r, &p, 0.0, UpdateScheme::ExactOperator).unwrap();
            let b = update_stratonovich(&s, r, &p, 0.0).unwrap();
            (a.z - b.z).abs() + (a.x - b.x).abs()
        };
        let (e1, e2) = (err(0.02), err(0.01));
        assert!(e1 < 0.02f64.powi(2));
        assert!(e2 < e1 / 3.0);
    }

    #[test]
    fn action_increment_values() {
        let p = qnd(0.01);
        let one = BlochState::new(0.0, 0.0, 1.0).unwrap();
        assert_eq!(action_increment(&one, 1.0, &p), 0.0);
        let zero = BlochState::new(0.0, 0.0, 0.0).unwrap();
        assert!((action_increment(&zero, 0.0, &p) + 0.005).abs() < 1e-16);
    }
}
