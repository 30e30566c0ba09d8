//! Statistics of measurement-only (QND) trajectories conditioned on both the
//! initial and the final state.
//!
//! In the coordinate u = atanh z the conditioned path is Gaussian around the
//! straight line ū(t). Fluctuations eta = u - ū have covariance M⁻¹, whose
//! continuum limit is (t_j / tau_m)(1 - t_k / T) for t_j <= t_k.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::quad::adaptive_simpson;
use crate::stats::MomentAccumulator;
use crate::trajectory::{fold_ensemble, EnsembleSpec, Trajectory};

fn check_open(z: f64) -> Result<()> {
    if !(z.abs() < 1.0) {
        return Err(Error::BoundaryDivergence { value: z });
    }
    Ok(())
}

fn check_time(t: f64, total_time: f64) -> Result<()> {
    if !(total_time > 0.0) {
        return Err(Error::invalid("total_time", "must be positive"));
    }
    if !(0.0..=total_time).contains(&t) {
        return Err(Error::invalid("t", format!("{t} outside [0, {total_time}]")));
    }
    Ok(())
}

pub fn optimal_path_u(z_i: f64, z_f: f64, total_time: f64, t: f64) -> Result<f64> {
    check_open(z_i)?;
    check_open(z_f)?;
    check_time(t, total_time)?;
    let (ui, uf) = (z_i.atanh(), z_f.atanh());
    Ok(t / total_time * (uf - ui) + ui)
}

pub fn final_state_pdf(z_f: f64, z_i: f64, total_time: f64, params: &ModelParams) -> Result<f64> {
    check_open(z_i)?;
    check_open(z_f)?;
    if !(total_time > 0.0) {
        return Err(Error::invalid("total_time", "must be positive"));
    }
    let tau = params.tau_m;
    let rbar = tau / total_time * (z_f.atanh() - z_i.atanh());
    let pre = (tau / (2.0 * PI * total_time)).sqrt() / (1.0 - z_f * z_f);
    let expo = -total_time * (rbar * rbar + 1.0) / (2.0 * tau)
        + 0.5 * ((1.0 - z_i * z_i) / (1.0 - z_f * z_f)).ln();
    Ok(pre * expo.exp())
}

/// Element (j, k) of the inverse of the (n-1)x(n-1) fluctuation matrix
/// (tau_m/dt) tridiag(-1, 2, -1).
pub fn m_inverse_element(j: usize, k: usize, n: usize, params: &ModelParams) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("n", "need at least two steps"));
    }
    for idx in [j, k] {
        if idx < 1 || idx > n - 1 {
            return Err(Error::IndexOutOfRange { index: idx, max: n - 1 });
        }
    }
    let (a, b) = if k >= j { (j, k) } else { (k, j) };
    Ok(params.dt / params.tau_m * (a * (n - b)) as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WickIndexSet {
    pub indices: Vec<usize>,
}

impl WickIndexSet {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("indices", "must be nonempty"));
        }
        Ok(WickIndexSet { indices })
    }
}

/// Gaussian moment of the fluctuations, summed over all perfect pairings.
pub fn wick_moment(idx: &WickIndexSet, n: usize, params: &ModelParams) -> Result<f64> {
    for &i in &idx.indices {
        if i < 1 || i + 1 > n {
            return Err(Error::IndexOutOfRange { index: i, max: n.saturating_sub(1) });
        }
    }
    if idx.indices.len() % 2 == 1 {
        return Ok(0.0);
    }
    fn pairings(rest: &[usize], n: usize, p: &ModelParams) -> Result<f64> {
        if rest.is_empty() {
            return Ok(1.0);
        }
        let first = rest[0];
        let mut total = 0.0;
        for m in 1..rest.len() {
            let mut remaining: Vec<usize> = rest[1..].to_vec();
            let partner = remaining.remove(m - 1);
            total += m_inverse_element(first, partner, n, p)? * pairings(&remaining, n, p)?;
        }
        Ok(total)
    }
    pairings(&idx.indices, n, params)
}

fn poly_derivative_step(p: &[f64]) -> Vec<f64> {
    // d/du p(T) = p'(T) (1 - T^2) with T = tanh u.
    let dp: Vec<f64> = p.iter().enumerate().skip(1).map(|(i, c)| i as f64 * c).collect();
    let mut out = vec![0.0; dp.len() + 2];
    for (i, c) in dp.iter().enumerate() {
        out[i] += c;
        out[i + 2] -= c;
    }
    out
}

/// k-th u-derivative of tanh(u)^power as a polynomial in tanh(u).
pub fn tanh_power_derivative(power: u32, k: usize) -> Vec<f64> {
    let mut p = vec![0.0; power as usize + 1];
    p[power as usize] = 1.0;
    for _ in 0..k {
        p = poly_derivative_step(&p);
    }
    p
}

fn eval_poly(p: &[f64], x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Continuum fluctuation variance (t / tau_m)(1 - t / T).
fn eta_variance(t: f64, total_time: f64, params: &ModelParams) -> f64 {
    t / params.tau_m * (1.0 - t / total_time)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesValue {
    pub value: f64,
    /// Set when the last retained term is larger than the one before it.
    pub truncation_warning: bool,
}

/// Default truncation order of the moment series.
pub const DEFAULT_SERIES_ORDER: usize = 4;

/// Series coefficients c_m with f(ū + eta) averaged = sum_m c_m s^m,
/// s = <eta^2>, c_m = f^(2m)(ū) / (2^m m!).
fn series_coefficients(power: u32, ubar: f64, order: usize) -> Vec<f64> {
    let th = ubar.tanh();
    let mut fact = 1.0;
    (0..=order)
        .map(|m| {
            if m > 0 {
                fact *= 2.0 * m as f64;
            }
            eval_poly(&tanh_power_derivative(power, 2 * m), th) / fact
        })
        .collect()
}

fn finish_series(terms: &[f64], skip_leading: bool) -> SeriesValue {
    let value = terms.iter().sum();
    let m = terms.len() - 1;
    let warn = m >= 1
        && !(skip_leading && m == 1)
        && terms[m].abs() > terms[m - 1].abs();
    SeriesValue {
        value,
        truncation_warning: warn,
    }
}

pub fn conditional_mean_z(
    t: f64,
    z_i: f64,
    z_f: f64,
    total_time: f64,
    params: &ModelParams,
    order: usize,
) -> Result<SeriesValue> {
    let ubar = optimal_path_u(z_i, z_f, total_time, t)?;
    if t == 0.0 || t == total_time {
        let value = if t == 0.0 { z_i } else { z_f };
        return Ok(SeriesValue { value, truncation_warning: false });
    }
    let s = eta_variance(t, total_time, params);
    let c = series_coefficients(1, ubar, order);
    let terms: Vec<f64> = c.iter().enumerate().map(|(m, cm)| cm * s.powi(m as i32)).collect();
    Ok(finish_series(&terms, false))
}

/// Variance of z(t) truncated consistently at s^order, s = <eta^2>.
pub fn conditional_var_z(
    t: f64,
    z_i: f64,
    z_f: f64,
    total_time: f64,
    params: &ModelParams,
    order: usize,
) -> Result<SeriesValue> {
    let ubar = optimal_path_u(z_i, z_f, total_time, t)?;
    if t == 0.0 || t == total_time {
        return Ok(SeriesValue { value: 0.0, truncation_warning: false });
    }
    let s = eta_variance(t, total_time, params);
    let a = series_coefficients(2, ubar, order);
    let b = series_coefficients(1, ubar, order);
    let terms: Vec<f64> = (0..=order)
        .map(|m| {
            let sq: f64 = (0..=m).map(|i| b[i] * b[m - i]).sum();
            (a[m] - sq) * s.powi(m as i32)
        })
        .collect();
    Ok(finish_series(&terms, true))
}

/// Connected two-time correlation of z to first order in the fluctuations.
pub fn conditional_zz_corr(
    t_j: f64,
    t_k: f64,
    z_i: f64,
    z_f: f64,
    total_time: f64,
    params: &ModelParams,
) -> Result<f64> {
    let (a, b) = if t_k >= t_j { (t_j, t_k) } else { (t_k, t_j) };
    let ua = optimal_path_u(z_i, z_f, total_time, a)?;
    let ub = optimal_path_u(z_i, z_f, total_time, b)?;
    let sech2 = |u: f64| 1.0 / u.cosh().powi(2);
    Ok(a / params.tau_m * (1.0 - b / total_time) * sech2(ua) * sech2(ub))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Postselection {
    pub z_final: f64,
    pub tolerance: f64,
}

impl Postselection {
    pub fn new(z_final: f64, tolerance: f64) -> Result<Self> {
        let s = Postselection { z_final, tolerance };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.z_final.abs() < 1.0) {
            return Err(Error::invalid("z_final", "must lie in (-1, 1)"));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::invalid("tolerance", "must be positive"));
        }
        Ok(())
    }

    pub fn accepts(&self, z: f64) -> bool {
        (z - self.z_final).abs() <= self.tolerance
    }
}

/// Probability that z(T) lands in the selection window, from the final-state density.
pub fn predicted_acceptance(
    sel: &Postselection,
    z_i: f64,
    total_time: f64,
    params: &ModelParams,
) -> Result<f64> {
    check_open(z_i)?;
    let lo = (sel.z_final - sel.tolerance).max(-1.0);
    let hi = (sel.z_final + sel.tolerance).min(1.0);
    let f = |z: f64| {
        if z.abs() >= 1.0 {
            0.0
        } else {
            final_state_pdf(z, z_i, total_time, params).unwrap_or(0.0)
        }
    };
    Ok(adaptive_simpson(&f, lo, hi, 1e-10, 40))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostselectionAccumulator {
    pub selection: Postselection,
    pub checkpoints: Vec<usize>,
    pub total: u64,
    pub moments: MomentAccumulator,
}

impl PostselectionAccumulator {
    pub fn new(selection: Postselection, checkpoints: Vec<usize>) -> Self {
        let d = checkpoints.len();
        PostselectionAccumulator {
            selection,
            checkpoints,
            total: 0,
            moments: MomentAccumulator::new(d, true),
        }
    }

    /// Returns whether the trajectory was accepted.
    pub fn observe(&mut self, tr: &Trajectory) -> bool {
        self.total += 1;
        if !self.selection.accepts(tr.final_state().z) {
            return false;
        }
        let zs: Vec<f64> = self.checkpoints.iter().map(|&k| tr.states[k].z).collect();
        self.moments.push(&zs);
        true
    }

    pub fn merge(&mut self, other: &PostselectionAccumulator) {
        self.total += other.total;
        self.moments.merge(&other.moments);
    }

    pub fn finish(&self, dt: f64, predicted: f64) -> Result<PostselectionReport> {
        let accepted = self.moments.count();
        if accepted == 0 {
            return Err(Error::EmptySelection { predicted });
        }
        let d = self.checkpoints.len();
        let cov = self.moments.covariance().unwrap_or_default();
        Ok(PostselectionReport {
            total: self.total,
            accepted,
            acceptance_fraction: accepted as f64 / self.total as f64,
            predicted_fraction: predicted,
            times: self.checkpoints.iter().map(|&k| k as f64 * dt).collect(),
            mean: self.moments.mean().to_vec(),
            variance: self.moments.variance(),
            stderr: self.moments.stderr(),
            variance_stderr: self.moments.variance_stderr(),
            covariance: (0..d).map(|i| cov[i * d..(i + 1) * d].to_vec()).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostselectionReport {
    pub total: u64,
    pub accepted: u64,
    pub acceptance_fraction: f64,
    pub predicted_fraction: f64,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub stderr: Vec<f64>,
    pub variance_stderr: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

/// Evenly spaced checkpoint step indices 0..=n_steps.
pub fn checkpoint_grid(n_steps: usize, count: usize) -> Vec<usize> {
    let count = count.max(2);
    let mut v: Vec<usize> = (0..count)
        .map(|i| ((i as f64) * n_steps as f64 / (count - 1) as f64).round() as usize)
        .collect();
    v.dedup();
    v
}

/// Filters an in-memory ensemble and reports its conditioned statistics.
pub fn postselect<'a>(
    ensemble: &'a [Trajectory],
    sel: &Postselection,
    checkpoints: &[usize],
    z_i: f64,
    params: &ModelParams,
) -> Result<(Vec<&'a Trajectory>, PostselectionReport)> {
    if ensemble.is_empty() {
        return Err(Error::invalid("ensemble", "must be nonempty"));
    }
    sel.validate()?;
    let mut acc = PostselectionAccumulator::new(*sel, checkpoints.to_vec());
    let kept: Vec<&Trajectory> = ensemble.iter().filter(|tr| acc.observe(tr)).collect();
    let predicted = predicted_acceptance(sel, z_i, params.total_time, params)?;
    let report = acc.finish(params.dt, predicted)?;
    Ok((kept, report))
}

/// Streams an ensemble through the selection without keeping trajectories.
pub fn postselect_ensemble(
    spec: &EnsembleSpec,
    sel: &Postselection,
    checkpoints: &[usize],
) -> Result<PostselectionReport> {
    sel.validate()?;
    if let Some(&k) = checkpoints.iter().find(|&&k| k > spec.params.n_steps) {
        return Err(Error::IndexOutOfRange { index: k, max: spec.params.n_steps });
    }
    let acc = fold_ensemble(
        spec,
        || PostselectionAccumulator::new(*sel, checkpoints.to_vec()),
        |acc, _, tr| {
            acc.observe(&tr);
            Ok(())
        },
        |a, b| a.merge(&b),
    )?;
    let predicted = predicted_acceptance(sel, spec.initial.z, spec.params.total_time, &spec.params)?;
    acc.finish(spec.params.dt, predicted)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDecomposition {
    pub s_full: f64,
    pub s_opt: f64,
    pub quad_residual: f64,
}

fn ln_cosh(u: f64) -> f64 {
    let a = u.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Action of a path in u, with the tanh(u) du term integrated exactly across
/// each step so that it telescopes to the boundary term ln cosh u.
fn action_u(u: &[f64], params: &ModelParams) -> f64 {
    let dt = params.dt;
    let tau = params.tau_m;
    let kinetic: f64 = u.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() * tau / (2.0 * dt);
    let n = (u.len() - 1) as f64;
    -kinetic + (ln_cosh(u[u.len() - 1]) - ln_cosh(u[0])) - n * dt / (2.0 * tau)
}

/// Splits the action of `path` (values of z on the grid) into the optimal-path
/// action and the quadratic fluctuation cost.
pub fn action_decomposition_check(
    path: &[f64],
    z_i: f64,
    z_f: f64,
    params: &ModelParams,
) -> Result<ActionDecomposition> {
    if path.len() < 2 {
        return Err(Error::invalid("path", "needs at least two points"));
    }
    check_open(z_i)?;
    check_open(z_f)?;
    let last = path.len() - 1;
    if (path[0] - z_i).abs() > 1e-12 || (path[last] - z_f).abs() > 1e-12 {
        return Err(Error::EndpointMismatch(format!(
            "path runs {} -> {}, boundary is {} -> {}",
            path[0], path[last], z_i, z_f
        )));
    }
    for &z in path {
        check_open(z)?;
    }
    let total_time = last as f64 * params.dt;
    let u: Vec<f64> = path.iter().map(|z| z.atanh()).collect();
    let ubar: Vec<f64> = (0..=last)
        .map(|k| optimal_path_u(z_i, z_f, total_time, (k as f64 * params.dt).min(total_time)))
        .collect::<Result<_>>()?;
    // Pin the endpoints of the reference path to the same values as `u`.
    let mut ubar = ubar;
    ubar[0] = u[0];
    ubar[last] = u[last];
    let eta: Vec<f64> = u.iter().zip(&ubar).map(|(a, b)| a - b).collect();
    let quad = eta.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() * params.tau_m
        / (2.0 * params.dt);
    let s_full = action_u(&u, params);
    let s_opt = action_u(&ubar, params);
    let scale = s_full.abs() + s_opt.abs() + quad;
    let mismatch = (s_full - (s_opt - quad)).abs();
    if mismatch > 1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NumericalConsistency(format!(
            "action decomposition off by {mismatch:e}"
        )));
    }
    Ok(ActionDecomposition {
        s_full,
        s_opt,
        quad_residual: quad,
    })
}
