//! Mean trajectory and tree-level correlation functions of the Rabi-driven,
//! measured qubit.

use num_complex::Complex64 as C64;

use crate::diagrams::{enumerate_tree, evaluate_diagram, Diagram, Flavor};
use crate::error::{Error, Result};
use crate::model::{
    eigensystem, to_diagonal, BlochState, DiagonalCoords, DiagonalFrame, ModelParams,
    IMAG_TOLERANCE,
};

fn real(c: C64, what: &str) -> Result<f64> {
    if c.im.abs() > IMAG_TOLERANCE * c.re.abs().max(1.0) {
        return Err(Error::NumericalConsistency(format!(
            "{what} has imaginary part {:e}",
            c.im
        )));
    }
    Ok(c.re)
}

/// sinh(x)/x for complex x, stable near zero.
fn sinhc(x: C64) -> C64 {
    if x.norm() < 1e-4 {
        let x2 = x * x;
        C64::new(1.0, 0.0) + x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sinh() / x
    }
}

/// Ensemble mean of z(t) without feedback.
pub fn mean_z(t: f64, initial: &BlochState, params: &ModelParams) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::invalid("t", "must be non-negative"));
    }
    let g = params.gamma_total();
    let d = params.delta;
    let omega = C64::new(g * g - 4.0 * d * d, 0.0).sqrt();
    let half = omega * t / 2.0;
    // sinh(Ωt/2)/Ω = (t/2) sinhc(Ωt/2)
    let value = (-g * t / 2.0).exp()
        * (initial.z * half.cosh() + (initial.z * g - 2.0 * d * initial.y) * (t / 2.0) * sinhc(half));
    real(value, "mean z")
}

/// ⟨z(t1) ξ(t2)⟩ from its closed form; zero unless t1 > t2.
pub fn corr_z_xi(
    t1: f64,
    t2: f64,
    initial: &BlochState,
    frame: &DiagonalFrame,
    params: &ModelParams,
) -> Result<f64> {
    if t1 <= t2 {
        return Ok(0.0);
    }
    let c = to_diagonal(initial, frame, params)?;
    let (l2, l3) = (frame.lambda2, frame.lambda3);
    let a = frame.alpha;
    let (v, w) = (c.v, c.w);
    let value = (l2 * t1).exp()
        * (frame.kappa2 * (-l2 * t2).exp() + a * v * v * (l2 * t2).exp() + a * v * w * (l3 * t2).exp())
        + (l3 * t1).exp()
            * (frame.kappa3 * (-l3 * t2).exp() + a * w * w * (l3 * t2).exp() + a * v * w * (l2 * t2).exp());
    real(value, "z-xi correlation")
}

/// Long-time limit of Var[z] at tree level, (Γ² + Δ²)/(2 Γ Δ² τ_m).
pub fn variance_limit(params: &ModelParams) -> f64 {
    let g = params.gamma_total();
    let d = params.delta;
    (g * g + d * d) / (2.0 * g * d * d * params.tau_m)
}

/// The same limit assembled from the diagonal-frame constants,
/// -κ₂²/2λ₂ - κ₃²/2λ₃ - 2κ₂κ₃/(λ₂+λ₃).
pub fn variance_limit_from_frame(frame: &DiagonalFrame) -> Result<f64> {
    let (k2, k3, l2, l3) = (frame.kappa2, frame.kappa3, frame.lambda2, frame.lambda3);
    let v = -k2 * k2 / (2.0 * l2) - k3 * k3 / (2.0 * l3) - 2.0 * k2 * k3 / (l2 + l3);
    real(v, "variance limit")
}

/// Cached tree-level diagrams for two-point functions of a fixed model and
/// initial state.
#[derive(Debug, Clone)]
pub struct TreeCorrelator {
    pub frame: DiagonalFrame,
    pub initial: BlochState,
    pub coords: DiagonalCoords,
    pub params: ModelParams,
    /// pairs[a][b] for a, b ∈ {v, w}.
    pairs: [[Vec<Diagram>; 2]; 2],
    noise: [Vec<Diagram>; 2],
}

const VW: [Flavor; 2] = [Flavor::V, Flavor::W];

impl TreeCorrelator {
    pub fn new(initial: &BlochState, params: &ModelParams) -> Result<Self> {
        let frame = eigensystem(params)?;
        let coords = to_diagonal(initial, &frame, params)?;
        let pair = |a: Flavor, b: Flavor| enumerate_tree(&[(a, 1.0), (b, 1.0)]);
        Ok(TreeCorrelator {
            frame,
            initial: *initial,
            coords,
            params: *params,
            pairs: [
                [pair(VW[0], VW[0])?, pair(VW[0], VW[1])?],
                [pair(VW[1], VW[0])?, pair(VW[1], VW[1])?],
            ],
            noise: [
                enumerate_tree(&[(Flavor::V, 1.0), (Flavor::Xi, 1.0)])?,
                enumerate_tree(&[(Flavor::W, 1.0), (Flavor::Xi, 1.0)])?,
            ],
        })
    }

    fn sum(&self, diagrams: &[Diagram], times: &[f64]) -> Result<C64> {
        let horizon = times.iter().cloned().fold(0.0, f64::max);
        diagrams
            .iter()
            .map(|d| evaluate_diagram(&d.with_times(times), &self.frame, &self.coords, horizon))
            .sum()
    }

    /// ⟨a(t1) b(t2)⟩ for diagonal coordinates a, b ∈ {v, w} (index 0 = v, 1 = w).
    pub fn pair(&self, a: usize, b: usize, t1: f64, t2: f64) -> Result<C64> {
        self.sum(&self.pairs[a][b], &[t1, t2])
    }

    pub fn pair_diagrams(&self, a: usize, b: usize) -> &[Diagram] {
        &self.pairs[a][b]
    }

    pub fn zz(&self, t1: f64, t2: f64) -> Result<f64> {
        let mut s = C64::new(0.0, 0.0);
        for a in 0..2 {
            for b in 0..2 {
                s += self.pair(a, b, t1, t2)?;
            }
        }
        real(s, "z-z correlation")
    }

    pub fn yz(&self, t1: f64, t2: f64) -> Result<f64> {
        let (b1, b2) = self.frame.betas()?;
        let beta = [b1, b2];
        let mut s = C64::new(0.0, 0.0);
        for a in 0..2 {
            for b in 0..2 {
                s += beta[a] * self.pair(a, b, t1, t2)?;
            }
        }
        real(s, "y-z correlation")
    }

    /// ⟨z(t1) ξ(t2)⟩ summed over its diagrams.
    pub fn z_xi(&self, t1: f64, t2: f64) -> Result<f64> {
        let s = self.sum(&self.noise[0], &[t1, t2])? + self.sum(&self.noise[1], &[t1, t2])?;
        real(s, "z-xi correlation")
    }

    /// Connected part ⟨z(t1) z(t2)⟩ - ⟨z(t1)⟩⟨z(t2)⟩.
    pub fn cov_zz(&self, t1: f64, t2: f64) -> Result<f64> {
        Ok(self.zz(t1, t2)? - mean_z(t1, &self.initial, &self.params)? * mean_z(t2, &self.initial, &self.params)?)
    }

    pub fn var_z(&self, t: f64) -> Result<f64> {
        self.cov_zz(t, t)
    }
}

pub fn corr_zz(t1: f64, t2: f64, initial: &BlochState, params: &ModelParams) -> Result<f64> {
    TreeCorrelator::new(initial, params)?.zz(t1, t2)
}

pub fn corr_yz(t1: f64, t2: f64, initial: &BlochState, params: &ModelParams) -> Result<f64> {
    TreeCorrelator::new(initial, params)?.yz(t1, t2)
}
