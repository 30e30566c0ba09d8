//! Most-likely paths. The continuous extremal equations for a pure qubit
//! under direct linear feedback in the angle parametrisation z = cos θ,
//! y = sin θ, their stochastic Hamiltonian and phase portrait, a shooting
//! solver, and the discrete extremal system for plain z measurement.

use std::f64::consts::PI;

use ode_solvers::{Dopri5, OutputType, System, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::trajectory::FeedbackSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub theta: f64,
    pub p_theta: f64,
}

impl PhasePoint {
    pub fn new(theta: f64, p_theta: f64) -> Self {
        PhasePoint { theta, p_theta }
    }
}

/// Rabi frequency Δ₀ + Δ₁ r.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearGain {
    pub delta0: f64,
    pub delta1: f64,
}

impl LinearGain {
    pub fn new(delta0: f64, delta1: f64) -> Self {
        LinearGain { delta0, delta1 }
    }

    /// Plain measurement uses the model's own Rabi frequency as Δ₀.
    pub fn from_spec(fb: &FeedbackSpec, params: &ModelParams) -> Result<Self> {
        match *fb {
            FeedbackSpec::None => Ok(LinearGain::new(params.delta, 0.0)),
            FeedbackSpec::DirectLinear { delta0, delta1 } => Ok(LinearGain::new(delta0, delta1)),
            FeedbackSpec::PhaseLock { .. } => Err(Error::invalid(
                "feedback",
                "most-likely paths need direct linear feedback or none",
            )),
        }
    }
}

/// Extremal readout r = p_θ Δ₁ τ_m − p_θ sin θ + cos θ.
pub fn optimal_readout(p: PhasePoint, tau_m: f64, gain: LinearGain) -> f64 {
    p.p_theta * (gain.delta1 * tau_m - p.theta.sin()) + p.theta.cos()
}

/// Returns (dθ/dt, dp_θ/dt, r).
pub fn extremal_rhs(p: PhasePoint, tau_m: f64, gain: LinearGain) -> (f64, f64, f64) {
    let r = optimal_readout(p, tau_m, gain);
    let (s, c) = p.theta.sin_cos();
    let theta_dot = gain.delta0 + gain.delta1 * r - r * s / tau_m;
    let p_dot = (p.p_theta * r * c + r * s) / tau_m;
    (theta_dot, p_dot, r)
}

pub fn stochastic_hamiltonian(p: PhasePoint, tau_m: f64, gain: LinearGain) -> f64 {
    let r = optimal_readout(p, tau_m, gain);
    r * r / (2.0 * tau_m) + p.p_theta * gain.delta0 - 1.0 / (2.0 * tau_m)
}

/// Log-likelihood density −(r² − 2 r cos θ + 1)/2τ_m.
pub fn likelihood_rate(theta: f64, r: f64, tau_m: f64) -> f64 {
    -(r * r - 2.0 * r * theta.cos() + 1.0) / (2.0 * tau_m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }
}

/// Level set of the Hamiltonian for Δ₀ = 0, split into segments at the poles
/// sin θ = Δ₁ τ_m.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PortraitCurve {
    pub energy: f64,
    pub branch: Branch,
    pub poles: Vec<f64>,
    pub segments: Vec<Vec<PhasePoint>>,
}

pub const POLE_GAP: f64 = 1e-9;

/// p_θ(θ, E) on one branch, or None at a pole.
pub fn portrait_momentum(theta: f64, energy: f64, tau_m: f64, delta1: f64, branch: Branch) -> Result<Option<f64>> {
    let disc = 1.0 + 2.0 * energy * tau_m;
    if disc < 0.0 {
        return Err(Error::NoRealCurve(disc));
    }
    let den = delta1 * tau_m - theta.sin();
    if den.abs() < POLE_GAP {
        return Ok(None);
    }
    Ok(Some((-theta.cos() + branch.sign() * disc.sqrt()) / den))
}

pub fn portrait_curve(
    energy: f64,
    tau_m: f64,
    delta1: f64,
    branch: Branch,
    theta_range: (f64, f64),
    samples: usize,
) -> Result<PortraitCurve> {
    let (lo, hi) = theta_range;
    if !(hi > lo) || samples < 2 {
        return Err(Error::invalid("theta_range", "need lo < hi and at least two samples"));
    }
    let a = delta1 * tau_m;
    let mut poles = Vec::new();
    if a.abs() <= 1.0 {
        let base = [a.asin(), PI - a.asin()];
        let k0 = ((lo - PI) / (2.0 * PI)).floor() as i64;
        let k1 = ((hi + PI) / (2.0 * PI)).ceil() as i64;
        for k in k0..=k1 {
            for b in base {
                let t = b + 2.0 * PI * k as f64;
                if t > lo && t < hi && !poles.iter().any(|&q: &f64| (q - t).abs() < 1e-12) {
                    poles.push(t);
                }
            }
        }
        poles.sort_by(|x, y| x.total_cmp(y));
    }
    let mut segments = vec![Vec::new()];
    let mut next_pole = 0;
    for i in 0..samples {
        let theta = lo + (hi - lo) * i as f64 / (samples - 1) as f64;
        while next_pole < poles.len() && theta > poles[next_pole] {
            next_pole += 1;
            if !segments.last().unwrap().is_empty() {
                segments.push(Vec::new());
            }
        }
        match portrait_momentum(theta, energy, tau_m, delta1, branch)? {
            Some(p) => segments.last_mut().unwrap().push(PhasePoint::new(theta, p)),
            None => {
                if !segments.last().unwrap().is_empty() {
                    segments.push(Vec::new());
                }
            }
        }
    }
    segments.retain(|s| !s.is_empty());
    Ok(PortraitCurve { energy, branch, poles, segments })
}

/// Stationary angles in [0, 2π) for Δ₀ = 0; empty when |Δ₁ τ_m| > 1.
pub fn attractors(tau_m: f64, delta1: f64) -> Vec<f64> {
    let a = delta1 * tau_m;
    if a.abs() > 1.0 {
        return Vec::new();
    }
    let s = a.asin();
    let mut out: Vec<f64> = Vec::new();
    for t in [s, PI - s] {
        let t = t.rem_euclid(2.0 * PI);
        if !out.iter().any(|&q| (q - t).abs() < 1e-12) {
            out.push(t);
        }
    }
    out.sort_by(|x, y| x.total_cmp(y));
    out
}

/// Distance from θ to the nearest attractor, modulo 2π.
pub fn attractor_distance(theta: f64, attractors: &[f64]) -> f64 {
    attractors
        .iter()
        .map(|&a| {
            let d = (theta - a).rem_euclid(2.0 * PI);
            d.min(2.0 * PI - d)
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FinalCondition {
    Theta { theta: f64 },
    FreeEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpBoundary {
    pub theta_initial: f64,
    pub final_condition: FinalCondition,
    pub total_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootingConfig {
    pub p_min: f64,
    pub p_max: f64,
    pub scan_points: usize,
    pub rtol: f64,
    pub atol: f64,
    /// Accepted boundary residual after refinement.
    pub residual_tolerance: f64,
    /// Solutions whose energies differ by less than this are merged.
    pub energy_merge: f64,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        ShootingConfig {
            p_min: -10.0,
            p_max: 10.0,
            scan_points: 400,
            rtol: 1e-9,
            atol: 1e-9,
            residual_tolerance: 1e-8,
            energy_merge: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpSolution {
    pub times: Vec<f64>,
    pub theta: Vec<f64>,
    pub p_theta: Vec<f64>,
    pub readout: Vec<f64>,
    pub energy: f64,
    /// max |H − E| / max(|E|, 1/2τ_m) along the path.
    pub energy_drift: f64,
    pub log_likelihood: f64,
    pub p_initial: f64,
    pub residual: f64,
    pub boundary: MlpBoundary,
    pub branch_id: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpResult {
    /// Ordered from most to least likely.
    pub solutions: Vec<MlpSolution>,
    /// (p_θ(0), boundary residual) over the scan grid; NaN where the path diverged.
    pub landscape: Vec<(f64, f64)>,
    pub config: ShootingConfig,
}

/// |p_θ| beyond which a path is treated as divergent.
const P_BLOWUP: f64 = 1e8;

struct Extremal {
    tau_m: f64,
    gain: LinearGain,
}

impl System<f64, Vector3<f64>> for Extremal {
    fn system(&self, _t: f64, y: &Vector3<f64>, dy: &mut Vector3<f64>) {
        let (td, pd, r) = extremal_rhs(PhasePoint::new(y[0], y[1]), self.tau_m, self.gain);
        dy[0] = td;
        dy[1] = pd;
        dy[2] = likelihood_rate(y[0], r, self.tau_m);
    }

    fn solout(&mut self, _t: f64, y: &Vector3<f64>, _dy: &Vector3<f64>) -> bool {
        !(y[1].abs() < P_BLOWUP) || !y[0].is_finite()
    }
}

struct Path {
    times: Vec<f64>,
    states: Vec<Vector3<f64>>,
}

fn integrate(start: PhasePoint, total_time: f64, tau_m: f64, gain: LinearGain, cfg: &ShootingConfig) -> Result<Path> {
    let sys = Extremal { tau_m, gain };
    let y0 = Vector3::new(start.theta, start.p_theta, 0.0);
    let mut solver = Dopri5::new(sys, 0.0, total_time, total_time, y0, cfg.rtol, cfg.atol);
    solver.set_output(OutputType::Sparse);
    solver.integrate().map_err(|e| Error::Integrator(e.to_string()))?;
    let times = solver.x_out().clone();
    let states = solver.y_out().clone();
    match times.last() {
        Some(&t) if (t - total_time).abs() <= 1e-12 * total_time.max(1.0) => Ok(Path { times, states }),
        _ => Err(Error::Integrator("path diverged before the final time".into())),
    }
}

fn boundary_residual(end: &Vector3<f64>, fc: FinalCondition) -> f64 {
    match fc {
        FinalCondition::Theta { theta } => end[0] - theta,
        FinalCondition::FreeEnd => end[1],
    }
}

fn check_pure_model(params: &ModelParams) -> Result<()> {
    if params.gamma != 0.0 || params.epsilon != 0.0 {
        return Err(Error::invalid(
            "params",
            "most-likely paths are implemented for gamma = 0 and epsilon = 0",
        ));
    }
    if !(params.tau_m > 0.0) {
        return Err(Error::invalid("tau_m", "must be positive"));
    }
    Ok(())
}

fn build_solution(path: Path, p0: f64, boundary: MlpBoundary, tau_m: f64, gain: LinearGain) -> MlpSolution {
    let mut theta = Vec::with_capacity(path.times.len());
    let mut p_theta = Vec::with_capacity(path.times.len());
    let mut readout = Vec::with_capacity(path.times.len());
    let mut energies = Vec::with_capacity(path.times.len());
    for y in &path.states {
        let pt = PhasePoint::new(y[0], y[1]);
        theta.push(y[0]);
        p_theta.push(y[1]);
        readout.push(optimal_readout(pt, tau_m, gain));
        energies.push(stochastic_hamiltonian(pt, tau_m, gain));
    }
    let energy = energies[0];
    let scale = energy.abs().max(1.0 / (2.0 * tau_m));
    let energy_drift = energies.iter().map(|e| (e - energy).abs()).fold(0.0, f64::max) / scale;
    let end = path.states.last().unwrap();
    MlpSolution {
        residual: boundary_residual(end, boundary.final_condition),
        log_likelihood: end[2],
        times: path.times,
        theta,
        p_theta,
        readout,
        energy,
        energy_drift,
        p_initial: p0,
        boundary,
        branch_id: 0,
    }
}

/// All extremal paths meeting the boundary conditions whose initial
/// conjugate lies in the scan range.
pub fn solve_mlp(boundary: MlpBoundary, params: &ModelParams, fb: &FeedbackSpec, cfg: &ShootingConfig) -> Result<MlpResult> {
    check_pure_model(params)?;
    if !(boundary.total_time > 0.0) {
        return Err(Error::invalid("total_time", "must be positive"));
    }
    if !(cfg.p_max > cfg.p_min) || cfg.scan_points < 2 {
        return Err(Error::invalid("scan", "need p_min < p_max and at least two scan points"));
    }
    let gain = LinearGain::from_spec(fb, params)?;
    let tau = params.tau_m;
    let residual = |p0: f64| -> f64 {
        match integrate(PhasePoint::new(boundary.theta_initial, p0), boundary.total_time, tau, gain, cfg) {
            Ok(path) => boundary_residual(path.states.last().unwrap(), boundary.final_condition),
            Err(_) => f64::NAN,
        }
    };
    let grid: Vec<f64> = (0..cfg.scan_points)
        .map(|i| cfg.p_min + (cfg.p_max - cfg.p_min) * i as f64 / (cfg.scan_points - 1) as f64)
        .collect();
    let landscape: Vec<(f64, f64)> = grid.par_iter().map(|&p| (p, residual(p))).collect();

    let mut brackets = Vec::new();
    for w in landscape.windows(2) {
        let ((a, fa), (b, fb_)) = (w[0], w[1]);
        if fa == 0.0 {
            brackets.push((a, a));
        } else if fa.is_finite() && fb_.is_finite() && fa.signum() != fb_.signum() && fb_ != 0.0 {
            brackets.push((a, b));
        }
    }
    if let Some(&(p, f)) = landscape.last() {
        if f == 0.0 {
            brackets.push((p, p));
        }
    }

    let roots: Vec<f64> = brackets
        .par_iter()
        .filter_map(|&(mut a, mut b)| {
            if a == b {
                return Some(a);
            }
            let mut fa = residual(a);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                let fm = residual(m);
                if !fm.is_finite() {
                    return None;
                }
                if fm == 0.0 {
                    return Some(m);
                }
                if fm.signum() == fa.signum() {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
            }
            Some(0.5 * (a + b))
        })
        .collect();

    let mut solutions: Vec<MlpSolution> = Vec::new();
    for p0 in roots {
        let Ok(path) = integrate(PhasePoint::new(boundary.theta_initial, p0), boundary.total_time, tau, gain, cfg) else {
            continue;
        };
        let sol = build_solution(path, p0, boundary, tau, gain);
        if !(sol.residual.abs() <= cfg.residual_tolerance) {
            continue;
        }
        let merge = cfg.energy_merge * sol.energy.abs().max(1.0 / (2.0 * tau));
        if solutions.iter().any(|s| (s.energy - sol.energy).abs() <= merge) {
            continue;
        }
        solutions.push(sol);
    }
    solutions.sort_by(|a, b| b.log_likelihood.total_cmp(&a.log_likelihood));
    for (i, s) in solutions.iter_mut().enumerate() {
        s.branch_id = i;
    }
    Ok(MlpResult { solutions, landscape, config: *cfg })
}

/// Integrates the extremal equations from a given phase point.
pub fn extremal_path(start: PhasePoint, total_time: f64, params: &ModelParams, fb: &FeedbackSpec, cfg: &ShootingConfig) -> Result<MlpSolution> {
    check_pure_model(params)?;
    let gain = LinearGain::from_spec(fb, params)?;
    let path = integrate(start, total_time, params.tau_m, gain, cfg)?;
    let boundary = MlpBoundary {
        theta_initial: start.theta,
        final_condition: FinalCondition::FreeEnd,
        total_time,
    };
    Ok(build_solution(path, start.p_theta, boundary, params.tau_m, gain))
}

// Discrete extremal system for plain z measurement: exact update
// z' = tanh(artanh z + r δt/τ_m) and Gaussian log-likelihood
// −(r² − 2 r z + 1) δt/2τ_m.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteStep {
    pub q_next: f64,
    pub p_prev: f64,
    pub r_residual: f64,
}

fn qnd_update(q: f64, r: f64, k: f64) -> f64 {
    (q.atanh() + r * k).tanh()
}

/// One step of the discrete extremal equations: forward map for q, backward
/// map for p, stationarity residual in r.
pub fn discrete_extremal_step(q: f64, p: f64, r: f64, params: &ModelParams) -> DiscreteStep {
    let k = params.dt / params.tau_m;
    let q_next = qnd_update(q, r, k);
    let e_q = (1.0 - q_next * q_next) / (1.0 - q * q);
    let e_r = (1.0 - q_next * q_next) * k;
    let l_q = r * k;
    let l_r = -(r - q) * k;
    DiscreteStep {
        q_next,
        p_prev: p * e_q + l_q,
        r_residual: p * e_r + l_r,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub r: Vec<f64>,
}

/// Solves r from the stationarity condition r = q + p (1 − q'²) at fixed (q, p).
fn stationary_readout(q: f64, p: f64, k: f64) -> Result<f64> {
    let mut r = q;
    for _ in 0..200 {
        let qn = qnd_update(q, r, k);
        let next = q + p * (1.0 - qn * qn);
        if (next - r).abs() <= 1e-15 * next.abs().max(1.0) {
            return Ok(next);
        }
        r = next;
    }
    Err(Error::NumericalConsistency("readout stationarity did not converge".into()))
}

fn discrete_forward(q0: f64, p0: f64, n: usize, params: &ModelParams) -> Result<DiscretePath> {
    let k = params.dt / params.tau_m;
    let mut q = vec![q0];
    let mut p = vec![p0];
    let mut r = Vec::with_capacity(n);
    for j in 0..n {
        let (qj, pj) = (q[j], p[j]);
        let rj = stationary_readout(qj, pj, k)?;
        let qn = qnd_update(qj, rj, k);
        if !(qn.abs() < 1.0) {
            return Err(Error::BoundaryDivergence { value: qn });
        }
        r.push(rj);
        q.push(qn);
        if j + 1 == n {
            break;
        }
        // p_j = p_{j+1} E_q(q_{j+1}, r_{j+1}) + r_{j+1} k with r_{j+1} stationary
        let mut pn = pj;
        let mut converged = false;
        for _ in 0..200 {
            let rn = stationary_readout(qn, pn, k)?;
            let qnn = qnd_update(qn, rn, k);
            let e_q = (1.0 - qnn * qnn) / (1.0 - qn * qn);
            let next = (pj - rn * k) / e_q;
            if (next - pn).abs() <= 1e-14 * next.abs().max(1.0) {
                pn = next;
                converged = true;
                break;
            }
            pn = next;
        }
        if !converged || !pn.is_finite() {
            return Err(Error::NumericalConsistency("conjugate recursion did not converge".into()));
        }
        p.push(pn);
    }
    Ok(DiscretePath { q, p, r })
}

/// Discrete most-likely path from z_i over n = params.n_steps steps, ending
/// at z_f or, when `z_f` is None, with p_{n-1} = 0. Shoots on p_0 within
/// `p_range`.
pub fn solve_discrete_qnd(z_i: f64, z_f: Option<f64>, params: &ModelParams, p_range: (f64, f64)) -> Result<DiscretePath> {
    for (v, name) in [(Some(z_i), "z_i"), (z_f, "z_f")] {
        if v.is_some_and(|v| !(v.abs() < 1.0)) {
            return Err(Error::invalid(name, "must lie in (-1, 1)"));
        }
    }
    let n = params.n_steps;
    if n == 0 {
        return Err(Error::invalid("n_steps", "must be positive"));
    }
    let miss = |p0: f64| -> f64 {
        discrete_forward(z_i, p0, n, params)
            .map(|path| match z_f {
                Some(zf) => path.q[n].atanh() - zf.atanh(),
                None => path.p[n - 1],
            })
            .unwrap_or(f64::NAN)
    };
    const SCAN: usize = 200;
    let grid: Vec<(f64, f64)> = (0..=SCAN)
        .map(|i| {
            let p = p_range.0 + (p_range.1 - p_range.0) * i as f64 / SCAN as f64;
            (p, miss(p))
        })
        .collect();
    if let Some(&(p, _)) = grid.iter().find(|g| g.1 == 0.0) {
        return discrete_forward(z_i, p, n, params);
    }
    let bracket = grid
        .windows(2)
        .find(|w| w[0].1.is_finite() && w[1].1.is_finite() && w[0].1.signum() != w[1].1.signum());
    let Some(w) = bracket else {
        return Err(Error::NumericalConsistency(format!(
            "no sign change of the endpoint miss over p_0 in [{}, {}]",
            p_range.0, p_range.1
        )));
    };
    let ((mut a, mut fa), (mut b, _)) = (w[0], w[1]);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = miss(m);
        if !fm.is_finite() {
            return Err(Error::NumericalConsistency("shooting path diverged".into()));
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    discrete_forward(z_i, 0.5 * (a + b), n, params)
}
