use qpath::diagrams::Flavor;
use qpath::feedback::{max_kz_dt, PhaseLockConfig};
use qpath::optimizer::FinalCondition;
use qpath::{FeedbackSpec, UpdateScheme};
use serde::Serialize;

use crate::config::{Mode, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
    pub severity: Severity,
}

struct Checker {
    out: Vec<Violation>,
}

impl Checker {
    fn error(&mut self, path: &str, message: impl Into<String>) {
        self.out.push(Violation { path: path.into(), message: message.into(), severity: Severity::Error });
    }

    fn warn(&mut self, path: &str, message: impl Into<String>) {
        self.out.push(Violation { path: path.into(), message: message.into(), severity: Severity::Warning });
    }

    fn positive(&mut self, path: &str, v: f64) {
        if !(v > 0.0 && v.is_finite()) {
            self.error(path, format!("must be positive and finite, got {v}"));
        }
    }

    fn finite(&mut self, path: &str, v: f64) {
        if !v.is_finite() {
            self.error(path, format!("must be finite, got {v}"));
        }
    }
}

pub fn has_errors(v: &[Violation]) -> bool {
    v.iter().any(|x| x.severity == Severity::Error)
}

/// Every violated invariant with the path of the offending field. Warnings
/// do not block a run.
pub fn validate(cfg: &RunConfig) -> Vec<Violation> {
    let mut c = Checker { out: Vec::new() };
    let p = &cfg.params;
    c.positive("params.tau_m", p.tau_m);
    c.positive("params.dt", p.dt);
    if p.n_steps == 0 {
        c.error("params.n_steps", "must be at least 1");
    }
    c.finite("params.epsilon", p.epsilon);
    c.finite("params.delta", p.delta);
    c.finite("params.gamma", p.gamma);
    if p.gamma < 0.0 && p.tau_m > 0.0 {
        let eta = 1.0 / (2.0 * p.tau_m * (p.gamma + 0.5 / p.tau_m));
        c.error("params.gamma", format!("negative dephasing gives efficiency {eta} > 1"));
    }
    let model = p.model();
    let total = model.total_time;

    let s = &cfg.initial;
    if !(s.x.is_finite() && s.y.is_finite() && s.z.is_finite()) || s.norm() > 1.0 + 1e-9 {
        c.error("initial", format!("Bloch vector of length {} is outside the unit ball", s.norm()));
    }

    match cfg.fb {
        FeedbackSpec::None => {}
        FeedbackSpec::DirectLinear { delta0, delta1 } => {
            c.finite("fb.delta0", delta0);
            c.finite("fb.delta1", delta1);
            if (delta1 * p.tau_m).abs() > 1.0 {
                c.warn("fb.delta1", "|delta1 tau_m| > 1: direct feedback has no attractors");
            }
        }
        FeedbackSpec::PhaseLock { delta_d, factor } => {
            if let Err(e) = PhaseLockConfig::new(delta_d, factor).validate() {
                let field = match e {
                    qpath::Error::InvalidParameter { field: "F", .. } => "fb.F",
                    _ => "fb.delta_d",
                };
                c.error(field, e.to_string());
            }
        }
    }

    if cfg.mode.samples() {
        if cfg.ensemble.n_traj == 0 {
            c.error("ensemble.n_traj", "must be at least 1");
        }
        if let UpdateScheme::SplitOperator { pieces } = cfg.ensemble.scheme {
            if pieces == 0 {
                c.error("ensemble.scheme.pieces", "must be at least 1");
            }
        }
        if matches!(cfg.fb, FeedbackSpec::DirectLinear { .. }) && cfg.ensemble.scheme == UpdateScheme::ExactOperator {
            c.warn(
                "ensemble.scheme",
                "exact-operator applies the feedback rotation after the measurement step, \
                 which shifts the attractors; use split-operator or stratonovich",
            );
        }
    }
    if cfg.output.checkpoints < 2 && matches!(cfg.mode, Mode::Simulate | Mode::Postselect) {
        c.error("output.checkpoints", "need at least 2");
    }
    if cfg.mode == Mode::Simulate && cfg.output.formats.is_empty() {
        c.error("output.formats", "need at least one trajectory format");
    }

    match cfg.mode {
        Mode::Simulate => {}
        Mode::Postselect => match &cfg.selection {
            None => c.error("selection", "postselect mode needs a selection"),
            Some(sel) => {
                if !(sel.tolerance > 0.0 && sel.tolerance.is_finite()) {
                    c.error("selection.tolerance", format!("must be positive, got {}", sel.tolerance));
                }
                if !(sel.z_final.abs() < 1.0) {
                    c.error("selection.z_final", "must lie in (-1, 1)");
                }
                if sel.series_order == 0 {
                    c.error("selection.series_order", "must be at least 1");
                }
                if !(s.z.abs() < 1.0) {
                    c.error("initial.z", "conditioned statistics need z in (-1, 1)");
                }
                if p.delta != 0.0 || p.epsilon != 0.0 || cfg.fb != FeedbackSpec::None {
                    c.warn("params", "analytic columns assume no Hamiltonian and no feedback");
                }
            }
        },
        Mode::Correlate => {
            if p.delta == 0.0 {
                c.error("params.delta", "tree-level correlators need delta != 0");
            }
            if cfg.fb != FeedbackSpec::None {
                c.error("fb", "correlators are derived without feedback");
            }
            match &cfg.correlate {
                None => c.error("correlate", "correlate mode needs a [correlate] section"),
                Some(k) => {
                    c.positive("correlate.lag_step", k.lag_step);
                    if !(k.max_lag >= 0.0) {
                        c.error("correlate.max_lag", "must be non-negative");
                    }
                    if k.reference_times.is_empty() {
                        c.error("correlate.reference_times", "need at least one time");
                    }
                    for (i, &t) in k.reference_times.iter().enumerate() {
                        if !(t > 0.0 && t + k.max_lag <= total + 1e-12) {
                            c.error(
                                &format!("correlate.reference_times[{i}]"),
                                format!("{t} + max_lag must lie in (0, {total}]"),
                            );
                        }
                    }
                }
            }
        }
        Mode::Diagrams => match &cfg.diagrams {
            None => c.error("diagrams", "diagrams mode needs a [diagrams] section"),
            Some(d) => {
                if d.endings.len() != d.times.len() {
                    c.error("diagrams.times", "need one time per ending");
                }
                for (i, e) in d.endings.iter().enumerate() {
                    if Flavor::parse(e).is_err() {
                        c.error(&format!("diagrams.endings[{i}]"), format!("unknown flavor `{e}`"));
                    }
                }
                for (i, &t) in d.times.iter().enumerate() {
                    if !(t > 0.0 && t.is_finite()) {
                        c.error(&format!("diagrams.times[{i}]"), "must be positive");
                    }
                }
                if p.delta == 0.0 {
                    c.error("params.delta", "the diagonal frame needs delta != 0");
                }
            }
        },
        Mode::Mlp | Mode::Portrait => {
            if p.gamma != 0.0 {
                c.error("params.gamma", "most-likely paths are for pure states (gamma = 0)");
            }
            if p.epsilon != 0.0 {
                c.error("params.epsilon", "most-likely paths are for epsilon = 0");
            }
            if matches!(cfg.fb, FeedbackSpec::PhaseLock { .. }) {
                c.error("fb", "needs direct linear feedback or none");
            }
            let delta0 = match cfg.fb {
                FeedbackSpec::DirectLinear { delta0, .. } => delta0,
                _ => p.delta,
            };
            if cfg.mode == Mode::Mlp {
                match &cfg.mlp {
                    None => c.error("mlp", "mlp mode needs an [mlp] section"),
                    Some(m) => {
                        c.finite("mlp.theta_initial", m.theta_initial);
                        c.positive("mlp.total_time", m.total_time);
                        if let FinalCondition::Theta { theta } = m.final_condition {
                            c.finite("mlp.final_condition.theta", theta);
                        }
                        let sh = &m.shooting;
                        if !(sh.p_max > sh.p_min) {
                            c.error("mlp.shooting.p_max", "must exceed p_min");
                        }
                        if sh.scan_points < 2 {
                            c.error("mlp.shooting.scan_points", "need at least 2");
                        }
                    }
                }
            } else {
                if delta0 != 0.0 {
                    c.error("fb.delta0", "the portrait level sets assume delta0 = 0");
                }
                match &cfg.portrait {
                    None => c.error("portrait", "portrait mode needs a [portrait] section"),
                    Some(pc) => {
                        if !(pc.theta_max > pc.theta_min) {
                            c.error("portrait.theta_max", "must exceed theta_min");
                        }
                        if pc.samples < 2 {
                            c.error("portrait.samples", "need at least 2");
                        }
                        for (i, &e) in pc.energies.iter().enumerate() {
                            if !(1.0 + 2.0 * e * p.tau_m >= 0.0) {
                                c.error(&format!("portrait.energies[{i}]"), "needs E >= -1/(2 tau_m)");
                            }
                        }
                    }
                }
            }
        }
        Mode::FeedbackKz => {
            let FeedbackSpec::PhaseLock { delta_d, factor } = cfg.fb else {
                c.error("fb", "feedback-kz needs phase-lock feedback");
                return c.out;
            };
            let pl = PhaseLockConfig::new(delta_d, factor);
            for w in pl.warnings(&model) {
                c.warn("fb.delta_d", w);
            }
            if delta_d != 0.0 && p.dt > max_kz_dt(&pl) {
                c.error("params.dt", format!("must resolve the carrier: dt <= {}", max_kz_dt(&pl)));
            }
            match &cfg.kz {
                None => c.error("kz", "feedback-kz mode needs a [kz] section"),
                Some(k) => {
                    if !(k.max_tau >= 0.0) {
                        c.error("kz.max_tau", "must be non-negative");
                    }
                    if k.points == 0 {
                        c.error("kz.points", "need at least 1");
                    }
                    if k.jackknife_blocks < 2 {
                        c.error("kz.jackknife_blocks", "need at least 2");
                    }
                    let burn = k.burn_in.unwrap_or(5.0 / pl.rate());
                    if k.burn_in.is_some_and(|b| !(b >= 0.0)) {
                        c.error("kz.burn_in", "must be non-negative");
                    } else if burn + k.max_tau >= total {
                        c.error(
                            "params.n_steps",
                            format!("run of {total} is too short for burn-in {burn} plus lag {}", k.max_tau),
                        );
                    }
                }
            }
        }
    }
    c.out
}
