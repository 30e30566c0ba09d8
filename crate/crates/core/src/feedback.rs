//! Phase-locked Rabi stabilisation: the coarse-grained phase difference,
//! the analytic z autocorrelation K_z(τ), and its estimate from full
//! trajectory simulation.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::trajectory::{fold_ensemble, EnsembleSpec, FeedbackSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseLockConfig {
    pub delta_d: f64,
    #[serde(rename = "F")]
    pub factor: f64,
    /// Coarse step δt̃, one carrier period by default.
    pub coarse_dt: f64,
}

/// Below this Δ_d τ_m the coarse-grained description is not trusted.
pub const DIFFUSIVE_THRESHOLD: f64 = 10.0;

impl PhaseLockConfig {
    pub fn new(delta_d: f64, factor: f64) -> Self {
        PhaseLockConfig {
            delta_d,
            factor,
            coarse_dt: 2.0 * PI / delta_d,
        }
    }

    pub fn with_coarse_dt(mut self, coarse_dt: f64) -> Self {
        self.coarse_dt = coarse_dt;
        self
    }

    /// Relaxation rate F Δ_d of the phase difference.
    pub fn rate(&self) -> f64 {
        self.factor * self.delta_d
    }

    pub fn feedback(&self) -> FeedbackSpec {
        FeedbackSpec::PhaseLock {
            delta_d: self.delta_d,
            factor: self.factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_d.is_finite() && self.delta_d != 0.0) {
            return Err(Error::invalid("delta_d", "must be finite and nonzero"));
        }
        if !self.factor.is_finite() || self.factor * self.delta_d < 0.0 {
            return Err(Error::invalid("F", "F delta_d must be non-negative"));
        }
        if !(self.coarse_dt > 0.0 && self.coarse_dt.is_finite()) {
            return Err(Error::invalid("coarse_dt", "must be positive"));
        }
        Ok(())
    }

    pub fn warnings(&self, params: &ModelParams) -> Vec<String> {
        let x = self.delta_d.abs() * params.tau_m;
        if x < DIFFUSIVE_THRESHOLD {
            vec![format!(
                "delta_d tau_m = {x} < {DIFFUSIVE_THRESHOLD}: outside the diffusive Rabi regime"
            )]
        } else {
            Vec::new()
        }
    }
}

/// Variance of the coarse noise ξ̃ per coarse step, 1/(2 τ_m δt̃).
pub fn coarse_noise_variance(cfg: &PhaseLockConfig, params: &ModelParams) -> f64 {
    1.0 / (2.0 * params.tau_m * cfg.coarse_dt)
}

/// Euler step of dδθ/dt = −F Δ_d δθ + ξ̃ with a given noise value.
pub fn coarse_grained_step_with(delta_theta: f64, cfg: &PhaseLockConfig, xi: f64) -> f64 {
    delta_theta + (-cfg.rate() * delta_theta + xi) * cfg.coarse_dt
}

pub fn coarse_grained_step<R: Rng + ?Sized>(
    delta_theta: f64,
    cfg: &PhaseLockConfig,
    params: &ModelParams,
    rng: &mut R,
) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    coarse_grained_step_with(delta_theta, cfg, z * coarse_noise_variance(cfg, params).sqrt())
}

/// Stationary variance 1/(4 τ_m F Δ_d) of the phase difference.
pub fn stationary_variance(cfg: &PhaseLockConfig, params: &ModelParams) -> f64 {
    1.0 / (4.0 * params.tau_m * cfg.rate())
}

/// K_z(τ) = cos(Δ_d τ)/2 · exp{(e^{−FΔ_d τ} − 1)/(4 τ_m F Δ_d)}, with the
/// F Δ_d → 0 limit cos(Δ_d τ)/2 · e^{−τ/4τ_m}.
pub fn kz_analytic(tau: f64, cfg: &PhaseLockConfig, params: &ModelParams) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::invalid("tau", "must be non-negative"));
    }
    Ok(0.5 * (cfg.delta_d * tau).cos() * kz_envelope(tau, cfg, params))
}

pub fn kz_envelope(tau: f64, cfg: &PhaseLockConfig, params: &ModelParams) -> f64 {
    let k = cfg.rate();
    let x = k * tau;
    // (e^{−x} − 1)/k = −τ (1 − e^{−x})/x
    let ratio = if x.abs() < 1e-8 { 1.0 - x / 2.0 } else { -(-x).exp_m1() / x };
    (-tau * ratio / (4.0 * params.tau_m)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KzSampling {
    /// Defaults to five relaxation times 5/(F Δ_d).
    pub burn_in: Option<f64>,
    /// Leave-one-block-out groups for the jackknife.
    pub jackknife_blocks: usize,
}

impl Default for KzSampling {
    fn default() -> Self {
        KzSampling {
            burn_in: None,
            jackknife_blocks: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KzReport {
    pub taus: Vec<f64>,
    pub analytic: Vec<f64>,
    pub empirical: Vec<f64>,
    pub stderr: Vec<f64>,
    pub burn_in: f64,
    pub n_traj: usize,
}

/// Largest time step allowed for the full-simulation estimate: 1/50 of a
/// carrier period.
pub fn max_kz_dt(cfg: &PhaseLockConfig) -> f64 {
    2.0 * PI / cfg.delta_d.abs() / 50.0
}

/// Jackknife mean and standard error of per-sample values over `blocks`
/// contiguous groups.
pub fn jackknife(values: &[f64], blocks: usize) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let g = blocks.min(n);
    if g < 2 {
        return (mean, f64::NAN);
    }
    let total: f64 = values.iter().sum();
    let mut loo = Vec::with_capacity(g);
    for b in 0..g {
        let (lo, hi) = (b * n / g, (b + 1) * n / g);
        let s: f64 = values[lo..hi].iter().sum();
        loo.push((total - s) / (n - (hi - lo)) as f64);
    }
    let m = loo.iter().sum::<f64>() / g as f64;
    let var = (g - 1) as f64 / g as f64 * loo.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    (mean, var.sqrt())
}

/// Time- and ensemble-averaged z(t) z(t+τ) after the burn-in, for an
/// ensemble run under phase-lock feedback.
pub fn kz_empirical(spec: &EnsembleSpec, taus: &[f64], sampling: &KzSampling) -> Result<KzReport> {
    let FeedbackSpec::PhaseLock { delta_d, factor } = spec.feedback else {
        return Err(Error::invalid("feedback", "K_z estimation needs phase-lock feedback"));
    };
    let cfg = PhaseLockConfig::new(delta_d, factor);
    cfg.validate()?;
    let params = &spec.params;
    if params.dt > max_kz_dt(&cfg) * (1.0 + 1e-12) {
        return Err(Error::invalid(
            "dt",
            format!("must resolve the carrier: dt <= {}", max_kz_dt(&cfg)),
        ));
    }
    if taus.is_empty() || taus.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::invalid("taus", "need a non-empty grid of non-negative lags"));
    }
    let burn_in = match sampling.burn_in {
        Some(b) if b >= 0.0 => b,
        Some(_) => return Err(Error::invalid("burn_in", "must be non-negative")),
        None if cfg.rate() > 0.0 => 5.0 / cfg.rate(),
        None => return Err(Error::invalid("burn_in", "no default without restoring force")),
    };
    let max_lag = taus.iter().cloned().fold(0.0, f64::max);
    if burn_in + max_lag >= params.total_time {
        return Err(Error::BurnInTooLong {
            burn_in,
            max_lag,
            run: params.total_time,
        });
    }
    let lags: Vec<usize> = taus.iter().map(|t| (t / params.dt).round() as usize).collect();
    let start = (burn_in / params.dt).ceil() as usize;
    let n = params.n_steps;

    let mut rows: Vec<(usize, Vec<f64>)> = fold_ensemble(
        spec,
        Vec::new,
        |acc, i, tr| {
            let z: Vec<f64> = tr.states.iter().map(|s| s.z).collect();
            let row = lags
                .iter()
                .map(|&l| {
                    let m = n - l;
                    (start..=m).map(|k| z[k] * z[k + l]).sum::<f64>() / (m + 1 - start) as f64
                })
                .collect();
            acc.push((i, row));
            Ok(())
        },
        |a, mut b| a.append(&mut b),
    )?;
    rows.sort_by_key(|r| r.0);

    let mut empirical = Vec::with_capacity(taus.len());
    let mut stderr = Vec::with_capacity(taus.len());
    let mut analytic = Vec::with_capacity(taus.len());
    for (j, &lag) in lags.iter().enumerate() {
        let col: Vec<f64> = rows.iter().map(|r| r.1[j]).collect();
        let (m, e) = jackknife(&col, sampling.jackknife_blocks);
        empirical.push(m);
        stderr.push(e);
        analytic.push(kz_analytic(lag as f64 * params.dt, &cfg, params)?);
    }
    Ok(KzReport {
        taus: lags.iter().map(|&l| l as f64 * params.dt).collect(),
        analytic,
        empirical,
        stderr,
        burn_in,
        n_traj: spec.n_traj,
    })
}
