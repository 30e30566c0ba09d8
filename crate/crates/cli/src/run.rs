//! Executes a resolved config and writes its tables, dumps and manifests.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use qpath::conditioned::{checkpoint_grid, conditional_mean_z, conditional_var_z, postselect_ensemble};
use qpath::correlators::{mean_z, TreeCorrelator};
use qpath::diagrams::{enumerate_tree, evaluate_diagram, Flavor};
use qpath::dump::{DumpHeader, DumpWriter};
use qpath::feedback::{kz_empirical, KzSampling};
use qpath::model::{eigensystem, to_diagonal};
use qpath::optimizer::{portrait_curve, solve_mlp, Branch, LinearGain, MlpBoundary};
use qpath::stats::MomentAccumulator;
use qpath::trajectory::{EnsembleSpec, CHUNK};
use qpath::FeedbackSpec;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Mode, RunConfig};

#[derive(Debug)]
pub enum RunError {
    Model(qpath::Error),
    Io(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Model(e) => write!(f, "{e}"),
            RunError::Io(m) => write!(f, "io: {m}"),
        }
    }
}

impl From<qpath::Error> for RunError {
    fn from(e: qpath::Error) -> Self {
        RunError::Model(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

type Result<T> = std::result::Result<T, RunError>;

/// Settings that are not part of the physics config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
    pub defaulted: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub mode: String,
    pub master_seed: u64,
    pub workers: usize,
    pub wall_time: f64,
    pub outputs: Vec<PathBuf>,
    pub warnings: Vec<String>,
    /// Mode-specific headline numbers.
    pub details: Value,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    opts: &'a RunOptions,
    workers: usize,
    started: Instant,
    outputs: Vec<PathBuf>,
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output.directory.join(name)
    }

    fn manifest(&mut self, file: &Path) -> Result<()> {
        let record = json!({
            "file": file.file_name().map(|n| n.to_string_lossy().into_owned()),
            "version": env!("CARGO_PKG_VERSION"),
            "mode": self.cfg.mode.name(),
            "config": self.cfg,
            "resolved_defaults": self.opts.defaulted,
            "master_seed": self.cfg.ensemble.master_seed,
            "workers": self.workers,
            "wall_time": self.started.elapsed().as_secs_f64(),
            "warnings": self.opts.warnings,
        });
        let mut name = file.as_os_str().to_owned();
        name.push(".manifest.json");
        let text = serde_json::to_string_pretty(&record).map_err(|e| RunError::Io(e.to_string()))?;
        fs::write(PathBuf::from(name), text + "\n")?;
        self.outputs.push(file.to_path_buf());
        Ok(())
    }

    fn table(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let path = self.path(name);
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "{}", header.join(","))?;
        for row in rows {
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        self.manifest(&path)
    }
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        v.to_string()
    }
}

fn nums(vs: &[f64]) -> Vec<String> {
    vs.iter().map(|&v| num(v)).collect()
}

fn ensemble_spec(cfg: &RunConfig) -> EnsembleSpec {
    EnsembleSpec {
        n_traj: cfg.ensemble.n_traj,
        initial: cfg.initial,
        params: cfg.params.model(),
        feedback: cfg.fb,
        scheme: cfg.ensemble.scheme,
        master_seed: cfg.ensemble.master_seed,
        workers: None,
    }
}

/// Config recorded in dump headers: everything except where the output goes,
/// so a replay into another directory reproduces the dump byte for byte.
fn header_config(cfg: &RunConfig) -> Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let Value::Object(m) = &mut v {
        m.remove("output");
    }
    v
}

/// Runs `cfg` in a pool of `opts.workers` threads (all cores by default).
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = opts.workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build().map_err(|e| RunError::Io(e.to_string()))?;
    fs::create_dir_all(&cfg.output.directory)?;
    pool.install(|| {
        let mut ctx = Ctx {
            cfg,
            opts,
            workers: rayon::current_num_threads(),
            started: Instant::now(),
            outputs: Vec::new(),
        };
        let details = match cfg.mode {
            Mode::Simulate => simulate(&mut ctx)?,
            Mode::Postselect => postselect(&mut ctx)?,
            Mode::Correlate => correlate(&mut ctx)?,
            Mode::Diagrams => diagrams(&mut ctx)?,
            Mode::Mlp => mlp(&mut ctx)?,
            Mode::Portrait => portrait(&mut ctx)?,
            Mode::FeedbackKz => feedback_kz(&mut ctx)?,
        };
        Ok(RunSummary {
            mode: cfg.mode.name().into(),
            master_seed: cfg.ensemble.master_seed,
            workers: ctx.workers,
            wall_time: ctx.started.elapsed().as_secs_f64(),
            outputs: ctx.outputs,
            warnings: opts.warnings.clone(),
            details,
        })
    })
}

/// Unconditioned mean and tree-level variance, NaN where no closed form applies.
fn analytic_moments(cfg: &RunConfig, times: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let params = cfg.params.model();
    if cfg.fb != FeedbackSpec::None {
        return (vec![f64::NAN; times.len()], vec![f64::NAN; times.len()]);
    }
    let mean = times
        .iter()
        .map(|&t| mean_z(t, &cfg.initial, &params).unwrap_or(f64::NAN))
        .collect();
    let tree = TreeCorrelator::new(&cfg.initial, &params).ok();
    let var = times
        .iter()
        .map(|&t| match &tree {
            Some(tr) if t > 0.0 => tr.var_z(t).unwrap_or(f64::NAN),
            Some(_) => 0.0,
            None => f64::NAN,
        })
        .collect();
    (mean, var)
}

const STATS_HEADER: [&str; 6] = ["t", "mean_analytic", "mean_empirical", "var_analytic", "var_empirical", "stderr"];

fn simulate(ctx: &mut Ctx) -> Result<Value> {
    let cfg = ctx.cfg;
    let spec = ensemble_spec(cfg);
    spec.params.validate()?;
    let checkpoints = checkpoint_grid(spec.params.n_steps, cfg.output.checkpoints);
    let header = DumpHeader {
        master_seed: spec.master_seed,
        scheme: spec.scheme,
        config: header_config(cfg),
    };
    let mut paths = Vec::new();
    let mut writers = Vec::new();
    for &format in &cfg.output.formats {
        let path = ctx.path(&format!("trajectories.{}", format.extension()));
        let w = DumpWriter::new(BufWriter::new(File::create(&path)?), format, &header)?;
        paths.push(path);
        writers.push(w);
    }
    let mut acc = MomentAccumulator::new(checkpoints.len(), false);
    let mut lo = 0;
    while lo < spec.n_traj {
        let hi = (lo + CHUNK).min(spec.n_traj);
        let block: Vec<_> = (lo..hi)
            .into_par_iter()
            .map(|i| spec.trajectory(i))
            .collect::<qpath::Result<_>>()?;
        for (i, tr) in (lo..hi).zip(&block) {
            for w in &mut writers {
                w.write(i as u64, tr)?;
            }
            let zs: Vec<f64> = checkpoints.iter().map(|&k| tr.states[k].z).collect();
            acc.push(&zs);
        }
        lo = hi;
    }
    for w in writers {
        w.finish()?.flush()?;
    }
    for p in &paths {
        ctx.manifest(p)?;
    }
    let times: Vec<f64> = checkpoints.iter().map(|&k| spec.params.time(k)).collect();
    let (mean_a, var_a) = analytic_moments(cfg, &times);
    let (mean, var, se) = (acc.mean().to_vec(), acc.variance(), acc.stderr());
    ctx.table(
        "simulate_stats.csv",
        &STATS_HEADER,
        (0..times.len()).map(|j| nums(&[times[j], mean_a[j], mean[j], var_a[j], var[j], se[j]])),
    )?;
    Ok(json!({ "n_traj": spec.n_traj, "final_mean_z": mean.last(), "final_var_z": var.last() }))
}

fn postselect(ctx: &mut Ctx) -> Result<Value> {
    let cfg = ctx.cfg;
    let sel_cfg = cfg.selection.expect("validated");
    let spec = ensemble_spec(cfg);
    let params = spec.params;
    let checkpoints = checkpoint_grid(params.n_steps, cfg.output.checkpoints);
    let report = postselect_ensemble(&spec, &sel_cfg.postselection(), &checkpoints)?;
    let total = params.total_time;
    let (z_i, z_f) = (cfg.initial.z, sel_cfg.z_final);
    let mut truncated = Vec::new();
    let rows: Vec<Vec<String>> = report
        .times
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let t = t.min(total);
            let m = conditional_mean_z(t, z_i, z_f, total, &params, sel_cfg.series_order);
            let v = conditional_var_z(t, z_i, z_f, total, &params, sel_cfg.series_order);
            let (ma, va) = match (m, v) {
                (Ok(m), Ok(v)) => {
                    if m.truncation_warning || v.truncation_warning {
                        truncated.push(t);
                    }
                    (m.value, v.value)
                }
                _ => (f64::NAN, f64::NAN),
            };
            nums(&[t, ma, report.mean[j], va, report.variance[j], report.stderr[j]])
        })
        .collect();
    ctx.table("postselect_stats.csv", &STATS_HEADER, rows)?;

    let d = report.times.len();
    let corr: Vec<Vec<String>> = (0..d)
        .map(|i| {
            let mut row = vec![num(report.times[i])];
            row.extend((0..d).map(|j| {
                let s = (report.covariance[i][i] * report.covariance[j][j]).sqrt();
                num(if s > 0.0 { report.covariance[i][j] / s } else { f64::NAN })
            }));
            row
        })
        .collect();
    let names: Vec<String> = std::iter::once("t".to_string())
        .chain(report.times.iter().map(|t| format!("t={t}")))
        .collect();
    let header: Vec<&str> = names.iter().map(String::as_str).collect();
    ctx.table("postselect_corr.csv", &header, corr)?;
    Ok(json!({
        "total": report.total,
        "accepted": report.accepted,
        "acceptance_fraction": report.acceptance_fraction,
        "predicted_fraction": report.predicted_fraction,
        "series_truncation_warnings": truncated,
    }))
}

fn correlate(ctx: &mut Ctx) -> Result<Value> {
    let cfg = ctx.cfg;
    let k = cfg.correlate.clone().expect("validated");
    let spec = ensemble_spec(cfg);
    let params = spec.params;
    let tree = TreeCorrelator::new(&cfg.initial, &params)?;
    let n_lags = (k.max_lag / k.lag_step + 1e-9).floor() as usize;
    let mut pairs = Vec::new();
    for &t1 in &k.reference_times {
        for l in 0..=n_lags {
            let tau = l as f64 * k.lag_step;
            pairs.push((t1, tau, t1 + tau));
        }
    }
    let step = |t: f64| ((t / params.dt).round() as usize).min(params.n_steps);
    let mut steps: Vec<usize> = pairs.iter().flat_map(|&(a, _, b)| [step(a), step(b)]).collect();
    steps.sort_unstable();
    steps.dedup();
    let mc = if k.monte_carlo {
        let dim = steps.len();
        let ck = steps.clone();
        let acc = qpath::trajectory::fold_ensemble(
            &spec,
            || MomentAccumulator::new(dim, true),
            |acc, _, tr| {
                let zs: Vec<f64> = ck.iter().map(|&s| tr.states[s].z).collect();
                acc.push(&zs);
                Ok(())
            },
            |a, b| a.merge(&b),
        )?;
        Some(acc)
    } else {
        None
    };
    let at = |s: usize| steps.binary_search(&s).expect("step recorded");
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for &(t1, tau, t2) in &pairs {
        let analytic = tree.cov_zz(t2, t1).unwrap_or(f64::NAN);
        let (emp, se) = match &mc {
            Some(acc) => {
                let d = steps.len();
                let cov = acc.covariance().expect("tracked");
                let (i, j) = (at(step(t1)), at(step(t2)));
                let n = acc.count() as f64;
                let c = cov[i * d + j];
                let se = ((cov[i * d + i] * cov[j * d + j] + c * c) / n).sqrt();
                if se > 0.0 && analytic.is_finite() {
                    worst = worst.max((c - analytic).abs() / se);
                }
                (c, se)
            }
            None => (f64::NAN, f64::NAN),
        };
        rows.push(nums(&[t1, tau, t2, analytic, emp, se]));
    }
    ctx.table("correlate.csv", &["t1", "tau", "t2", "cov_tree", "cov_empirical", "stderr"], rows)?;
    Ok(json!({ "pairs": pairs.len(), "max_deviation_sigma": mc.map(|_| worst) }))
}

fn diagrams(ctx: &mut Ctx) -> Result<Value> {
    let cfg = ctx.cfg;
    let d = cfg.diagrams.clone().expect("validated");
    let params = cfg.params.model();
    let endings: Vec<(Flavor, f64)> = d
        .endings
        .iter()
        .zip(&d.times)
        .map(|(e, &t)| Ok((Flavor::parse(e)?, t)))
        .collect::<qpath::Result<_>>()?;
    let frame = eigensystem(&params)?;
    let coords = to_diagonal(&cfg.initial, &frame, &params)?;
    let horizon = d.times.iter().cloned().fold(0.0, f64::max);
    let mut listing = String::new();
    let mut rows = Vec::new();
    let mut total = (0.0, 0.0);
    let list = enumerate_tree(&endings)?;
    for (i, dg) in list.iter().enumerate() {
        let value = evaluate_diagram(dg, &frame, &coords, horizon)?;
        total = (total.0 + value.re, total.1 + value.im);
        listing.push_str(&format!("diagram {i}\n{}value: {} {:+}i\n\n", dg.listing(), value.re, value.im));
        let verts: Vec<&str> = dg.vertices.iter().map(|v| v.label()).collect();
        rows.push(vec![
            i.to_string(),
            dg.multiplicity.to_string(),
            num(dg.coefficient),
            dg.nu_order.to_string(),
            dg.loops.to_string(),
            format!("\"{}\"", verts.join(" ")),
            num(value.re),
            num(value.im),
        ]);
    }
    listing.push_str(&format!("total: {} {:+}i\n", total.0, total.1));
    let path = ctx.path("diagrams.txt");
    fs::write(&path, listing)?;
    ctx.manifest(&path)?;
    ctx.table(
        "diagrams.csv",
        &["index", "multiplicity", "coefficient", "nu_order", "loops", "vertices", "re", "im"],
        rows,
    )?;
    Ok(json!({ "count": list.len(), "total_re": total.0, "total_im": total.1 }))
}

fn mlp(ctx: &mut Ctx) -> Result<Value> {
    let cfg = ctx.cfg;
    let m = cfg.mlp.expect("validated");
    let params = cfg.params.model();
    let boundary = MlpBoundary {
        theta_initial: m.theta_initial,
        final_condition: m.final_condition,
        total_time: m.total_time,
    };
    let result = solve_mlp(boundary, &params, &cfg.fb, &m.shooting)?;
    for s in &result.solutions {
        let n = s.times.len();
        let rows = (0..n).map(|k| {
            let r = s.readout.get(k).copied().unwrap_or(f64::NAN);
            nums(&[s.times[k], s.theta[k], s.p_theta[k], r, s.energy])
        });
        ctx.table(&format!("mlp_branch_{}.csv", s.branch_id), &["t", "theta", "p_theta", "r", "E"], rows)?;
    }
    let rows = result.solutions.iter().map(|s| {
        let mut r = vec![s.branch_id.to_string()];
        r.extend(nums(&[s.p_initial, s.energy, s.log_likelihood, s.residual, s.energy_drift]));
        r
    });
    ctx.table(
        "mlp_branches.csv",
        &["branch", "p_initial", "E", "log_likelihood", "residual", "energy_drift"],
        rows.collect::<Vec<_>>(),
    )?;
    let rows = result.landscape.iter().map(|&(p, res)| nums(&[p, res]));
    ctx.table("mlp_landscape.csv", &["p_initial", "residual"], rows.collect::<Vec<_>>())?;
    Ok(json!({
        "branches": result.solutions.len(),
        "energies": result.solutions.iter().map(|s| s.energy).collect::<Vec<_>>(),
    }))
}

fn portrait(ctx: &mut Ctx) -> Result<Value> {
    let cfg = ctx.cfg;
    let pc = cfg.portrait.clone().expect("validated");
    let params = cfg.params.model();
    let gain = LinearGain::from_spec(&cfg.fb, &params)?;
    let mut rows = Vec::new();
    let mut curves = 0;
    for &e in &pc.energies {
        for branch in [Branch::Plus, Branch::Minus] {
            let c = portrait_curve(e, params.tau_m, gain.delta1, branch, (pc.theta_min, pc.theta_max), pc.samples)?;
            for (si, seg) in c.segments.iter().enumerate() {
                curves += 1;
                for p in seg {
                    let mut r = nums(&[p.theta, p.p_theta, e]);
                    r.push(format!("{branch:?}").to_lowercase());
                    r.push(si.to_string());
                    rows.push(r);
                }
            }
        }
    }
    ctx.table("portrait.csv", &["theta", "p_theta", "E", "branch", "segment"], rows)?;
    let attractors = qpath::optimizer::attractors(params.tau_m, gain.delta1);
    Ok(json!({ "segments": curves, "attractors": attractors }))
}

fn feedback_kz(ctx: &mut Ctx) -> Result<Value> {
    let cfg = ctx.cfg;
    let k = cfg.kz.expect("validated");
    let spec = ensemble_spec(cfg);
    let taus: Vec<f64> = if k.points <= 1 {
        vec![0.0]
    } else {
        (0..k.points).map(|i| k.max_tau * i as f64 / (k.points - 1) as f64).collect()
    };
    let sampling = KzSampling {
        burn_in: k.burn_in,
        jackknife_blocks: k.jackknife_blocks,
    };
    let report = kz_empirical(&spec, &taus, &sampling)?;
    let rows = (0..report.taus.len())
        .map(|i| nums(&[report.taus[i], report.analytic[i], report.empirical[i], report.stderr[i]]));
    ctx.table("kz.csv", &["tau", "kz_analytic", "kz_empirical", "stderr"], rows.collect::<Vec<_>>())?;
    Ok(json!({ "burn_in": report.burn_in, "n_traj": report.n_traj }))
}
