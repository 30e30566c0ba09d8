//! Monte Carlo trajectories and ensembles with counter-based seeding.
//!
//! Trajectory `i` of an ensemble is driven by `trajectory_seed(master, i)`, so
//! every trajectory can be rebuilt on its own and the ensemble does not depend
//! on how the work is scheduled.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::{
    sample_readout, sample_white_noise, update_exact, update_ito, update_stratonovich,
    white_noise_readout, Readout, UpdateScheme,
};
use crate::model::{BlochState, ModelParams};
use crate::stats::MomentAccumulator;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FeedbackSpec {
    None,
    DirectLinear {
        delta0: f64,
        delta1: f64,
    },
    PhaseLock {
        delta_d: f64,
        #[serde(rename = "F")]
        factor: f64,
    },
}

impl FeedbackSpec {
    /// Direct linear feedback only has attractors when |delta1 tau_m| <= 1.
    pub fn warnings(&self, params: &ModelParams) -> Vec<String> {
        match *self {
            FeedbackSpec::DirectLinear { delta1, .. } if (delta1 * params.tau_m).abs() > 1.0 => {
                vec![format!(
                    "|delta1 tau_m| = {} > 1: direct feedback has no attractors",
                    (delta1 * params.tau_m).abs()
                )]
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<BlochState>,
    pub readouts: Vec<Readout>,
    pub seed: u64,
    pub scheme: UpdateScheme,
}

impl Trajectory {
    pub fn final_state(&self) -> &BlochState {
        self.states.last().expect("trajectory has at least the initial state")
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn trajectory_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(index.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

fn unwrap_angle(prev: f64, raw: f64) -> f64 {
    let d = raw - prev;
    prev + d - 2.0 * PI * (d / (2.0 * PI)).round()
}

/// Runs one trajectory, handing each step to `observe(k, t_k, state_k, r_k)`
/// and the final state to `observe(n, T, state_n, NaN)`.
pub fn run_steps<F>(
    initial: &BlochState,
    params: &ModelParams,
    fb: &FeedbackSpec,
    scheme: UpdateScheme,
    seed: u64,
    mut observe: F,
) -> Result<()>
where
    F: FnMut(usize, f64, &BlochState, Readout),
{
    params.validate()?;
    initial.check()?;
    let mut rng = rng_from_seed(seed);
    let mut s = *initial;
    let mut theta = s.theta();
    let sq = params.tau_m.sqrt();
    for k in 0..params.n_steps {
        let t = params.time(k);
        let (r, xi) = match scheme {
            UpdateScheme::Ito => {
                let xi = sample_white_noise(params, &mut rng);
                (white_noise_readout(s.z, xi, params), xi)
            }
            _ => {
                let r = sample_readout(s.z, params, &mut rng).map_err(|e| e.at_step(k))?;
                (r, (r - s.z) / sq)
            }
        };
        let delta_eff = match *fb {
            FeedbackSpec::None => params.delta,
            FeedbackSpec::DirectLinear { delta0, delta1 } => delta0 + delta1 * r,
            FeedbackSpec::PhaseLock { delta_d, factor } => {
                delta_d * (1.0 - factor * (theta - delta_d * t))
            }
        };
        observe(k, t, &s, r);
        let next = match scheme {
            UpdateScheme::Ito => update_ito(&s, xi, params, delta_eff),
            UpdateScheme::Stratonovich => update_stratonovich(&s, r, params, delta_eff),
            _ => update_exact(&s, r, params, delta_eff, scheme),
        }
        .map_err(|e| e.at_step(k))?;
        s = next;
        theta = unwrap_angle(theta, s.theta());
    }
    observe(params.n_steps, params.total_time, &s, f64::NAN);
    Ok(())
}

pub fn simulate_one(
    initial: &BlochState,
    params: &ModelParams,
    fb: &FeedbackSpec,
    scheme: UpdateScheme,
    seed: u64,
) -> Result<Trajectory> {
    let n = params.n_steps;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut readouts = Vec::with_capacity(n);
    run_steps(initial, params, fb, scheme, seed, |k, t, s, r| {
        times.push(t);
        states.push(*s);
        if k < n {
            readouts.push(r);
        }
    })?;
    Ok(Trajectory {
        times,
        states,
        readouts,
        seed,
        scheme,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n_traj: usize,
    pub initial: BlochState,
    pub params: ModelParams,
    pub feedback: FeedbackSpec,
    pub scheme: UpdateScheme,
    pub master_seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

/// Trajectories per work unit. Units are folded independently and merged in
/// index order, so accumulated statistics do not depend on the worker count.
pub const CHUNK: usize = 256;

/// Default limit for `simulate_ensemble`, which keeps every trajectory.
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 30;

impl EnsembleSpec {
    pub fn seed(&self, index: usize) -> u64 {
        trajectory_seed(self.master_seed, index as u64)
    }

    pub fn trajectory(&self, index: usize) -> Result<Trajectory> {
        simulate_one(
            &self.initial,
            &self.params,
            &self.feedback,
            self.scheme,
            self.seed(index),
        )
    }

    fn bytes_per_trajectory(&self) -> usize {
        let n = self.params.n_steps;
        (n + 1) * (std::mem::size_of::<BlochState>() + 8) + n * 8 + std::mem::size_of::<Trajectory>()
    }
}

fn in_pool<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(job()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::invalid("workers", e.to_string()))?;
            Ok(pool.install(job))
        }
    }
}

/// Streams the ensemble through a mergeable accumulator.
pub fn fold_ensemble<A, I, F, M>(spec: &EnsembleSpec, init: I, fold: F, merge: M) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize, Trajectory) -> Result<()> + Sync + Send,
    M: Fn(&mut A, A),
{
    if spec.n_traj == 0 {
        return Err(Error::invalid("n_traj", "must be at least 1"));
    }
    spec.params.validate()?;
    let chunks = spec.n_traj.div_ceil(CHUNK);
    let parts: Vec<Result<A>> = in_pool(spec.workers, || {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = init();
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(spec.n_traj);
                for i in lo..hi {
                    let tr = spec.trajectory(i)?;
                    fold(&mut acc, i, tr)?;
                }
                Ok(acc)
            })
            .collect()
    })?;
    let mut it = parts.into_iter();
    let mut total = it.next().expect("at least one chunk")?;
    for p in it {
        merge(&mut total, p?);
    }
    Ok(total)
}

/// Keeps every trajectory in memory, refusing ensembles beyond `memory_budget` bytes.
pub fn simulate_ensemble(spec: &EnsembleSpec, memory_budget: usize) -> Result<Vec<Trajectory>> {
    let requested = spec.n_traj.saturating_mul(spec.bytes_per_trajectory());
    if requested > memory_budget {
        return Err(Error::ResourceLimit {
            requested,
            budget: memory_budget,
        });
    }
    fold_ensemble(
        spec,
        Vec::new,
        |acc: &mut Vec<Trajectory>, _, tr| {
            acc.push(tr);
            Ok(())
        },
        |a, b| a.extend(b),
    )
}

/// Streamed moments of z at the given step indices.
pub fn ensemble_moments(spec: &EnsembleSpec, checkpoints: &[usize], with_covariance: bool) -> Result<MomentAccumulator> {
    if let Some(&k) = checkpoints.iter().find(|&&k| k > spec.params.n_steps) {
        return Err(Error::IndexOutOfRange { index: k, max: spec.params.n_steps });
    }
    fold_ensemble(
        spec,
        || MomentAccumulator::new(checkpoints.len(), with_covariance),
        |acc, _, tr| {
            let zs: Vec<f64> = checkpoints.iter().map(|&k| tr.states[k].z).collect();
            acc.push(&zs);
            Ok(())
        },
        |a, b| a.merge(&b),
    )
}
