//! Parameter records, Bloch states and the (u, v, w) frame that diagonalizes
//! the linear drift of the Itô equations.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on |r| <= 1 before a state counts as unphysical.
pub const PHYSICAL_SLACK: f64 = 1e-9;

/// Largest imaginary residue accepted when mapping back to Bloch coordinates.
pub const IMAG_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochState {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let s = BlochState { x, y, z };
        s.check()?;
        Ok(s)
    }

    /// Pure state in the y-z plane with z = cos(theta), y = sin(theta).
    pub fn from_theta(theta: f64) -> Self {
        BlochState {
            x: 0.0,
            y: theta.sin(),
            z: theta.cos(),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Angle in the y-z plane, in (-pi, pi].
    pub fn theta(&self) -> f64 {
        self.y.atan2(self.z)
    }

    pub fn check(&self) -> Result<()> {
        let n = self.norm();
        if !n.is_finite() || n > 1.0 + PHYSICAL_SLACK {
            return Err(Error::UnphysicalState { norm: n });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub tau_m: f64,
    pub dt: f64,
    pub total_time: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub delta: f64,
    pub n_steps: usize,
}

impl ModelParams {
    /// Pure measurement (no Hamiltonian, no extra dephasing) on an `n_steps` grid.
    pub fn new(tau_m: f64, dt: f64, n_steps: usize) -> Self {
        ModelParams {
            tau_m,
            dt,
            total_time: dt * n_steps as f64,
            gamma: 0.0,
            epsilon: 0.0,
            delta: 0.0,
            n_steps,
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    /// Sets gamma so that the measurement efficiency equals `eta`.
    pub fn with_efficiency(mut self, eta: f64) -> Self {
        self.gamma = 1.0 / (2.0 * self.tau_m * eta) - 1.0 / (2.0 * self.tau_m);
        self
    }

    /// Total dephasing rate.
    pub fn gamma_total(&self) -> f64 {
        self.gamma + 1.0 / (2.0 * self.tau_m)
    }

    pub fn efficiency(&self) -> f64 {
        1.0 / (2.0 * self.tau_m * self.gamma_total())
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_m > 0.0 && self.tau_m.is_finite()) {
            return Err(Error::invalid("tau_m", "must be positive and finite"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", "must be positive and finite"));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps", "must be at least 1"));
        }
        let expected = self.dt * self.n_steps as f64;
        if (self.total_time - expected).abs() > 1e-9 * expected.max(1.0) {
            return Err(Error::invalid(
                "total_time",
                format!("must equal n_steps * dt = {expected}"),
            ));
        }
        for (field, v) in [
            ("gamma", self.gamma),
            ("epsilon", self.epsilon),
            ("delta", self.delta),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(field, "must be finite"));
            }
        }
        let g = self.gamma_total();
        if g <= 0.0 {
            return Err(Error::invalid("gamma", "total dephasing rate must be positive"));
        }
        let eta = self.efficiency();
        if !(eta > 0.0 && eta <= 1.0 + 1e-12) {
            return Err(Error::invalid(
                "gamma",
                format!("efficiency {eta} outside (0, 1]"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagonalFrame {
    pub lambda1: C64,
    pub lambda2: C64,
    pub lambda3: C64,
    pub omega: C64,
    pub alpha: f64,
    pub kappa1: C64,
    pub kappa2: C64,
    pub kappa3: C64,
    /// `None` when delta = 0.
    pub beta: Option<(C64, C64)>,
    pub gamma_total: f64,
    pub delta: f64,
}

impl DiagonalFrame {
    pub fn betas(&self) -> Result<(C64, C64)> {
        self.beta.ok_or(Error::FrameDegenerate)
    }

    /// Rate of the propagator for each diagonal coordinate (0 = u, 1 = v, 2 = w).
    pub fn lambda(&self, index: usize) -> C64 {
        [self.lambda1, self.lambda2, self.lambda3][index]
    }

    pub fn kappa(&self, index: usize) -> C64 {
        [self.kappa1, self.kappa2, self.kappa3][index]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagonalCoords {
    pub u: C64,
    pub v: C64,
    pub w: C64,
}

pub fn eigensystem(params: &ModelParams) -> Result<DiagonalFrame> {
    params.validate()?;
    let g = params.gamma_total();
    let d = params.delta;
    let disc = g * g - 4.0 * d * d;
    if disc == 0.0 {
        return Err(Error::DegenerateEigenvalue);
    }
    let omega = C64::new(disc, 0.0).sqrt();
    let gc = C64::new(g, 0.0);
    let sq = params.tau_m.sqrt();
    let beta = if d == 0.0 {
        None
    } else {
        Some(((gc + omega) / (2.0 * d), (gc - omega) / (2.0 * d)))
    };
    Ok(DiagonalFrame {
        lambda1: C64::new(-g, 0.0),
        lambda2: -(gc + omega) / 2.0,
        lambda3: -(gc - omega) / 2.0,
        omega,
        alpha: -1.0 / sq,
        kappa1: C64::new(0.0, 0.0),
        kappa2: (omega - gc) / (2.0 * sq * omega),
        kappa3: (gc + omega) / (2.0 * sq * omega),
        beta,
        gamma_total: g,
        delta: d,
    })
}

pub fn to_diagonal(
    state: &BlochState,
    frame: &DiagonalFrame,
    params: &ModelParams,
) -> Result<DiagonalCoords> {
    if params.delta == 0.0 || frame.beta.is_none() {
        return Err(Error::FrameDegenerate);
    }
    let g = C64::new(frame.gamma_total, 0.0);
    let om = frame.omega;
    let yd = 2.0 * state.y * frame.delta;
    Ok(DiagonalCoords {
        u: C64::new(state.x, 0.0),
        v: (yd - g * state.z + om * state.z) / (2.0 * om),
        w: (-yd + g * state.z + om * state.z) / (2.0 * om),
    })
}

pub fn from_diagonal(coords: &DiagonalCoords, frame: &DiagonalFrame) -> Result<BlochState> {
    let (b1, b2) = frame.betas()?;
    let x = coords.u;
    let y = b1 * coords.v + b2 * coords.w;
    let z = coords.v + coords.w;
    for (name, c) in [("x", x), ("y", y), ("z", z)] {
        if c.im.abs() > IMAG_TOLERANCE * c.re.abs().max(1.0) {
            return Err(Error::NumericalConsistency(format!(
                "{name} has imaginary part {:e}",
                c.im
            )));
        }
    }
    BlochState::new(x.re, y.re, z.re)
}
