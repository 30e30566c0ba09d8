#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]
use proptest::prelude::*;
use qpath::feedback::{
    coarse_grained_step, jackknife, kz_analytic, kz_empirical, kz_envelope, stationary_variance, KzSampling,
    PhaseLockConfig,
};
use qpath::trajectory::{rng_from_seed, EnsembleSpec};
use qpath::{BlochState, Error, ModelParams, UpdateScheme};
use rand_distr::{Distribution, StandardNormal};

fn fine(delta_d: f64, f: f64) -> PhaseLockConfig {
    PhaseLockConfig::new(delta_d, f).with_coarse_dt(0.002)
}

#[test]
fn ou_stationary_variance() {
    let params = ModelParams::new(1.0, 0.001, 10);
    let cfg = fine(20.0, 0.3);
    let mut rng = rng_from_seed(11);
    let target = stationary_variance(&cfg, &params);
    let mut d: f64 = StandardNormal.sample(&mut rng);
    d *= target.sqrt();
    let mut samples = Vec::new();
    for i in 0..2_000_000 {
        d = coarse_grained_step(d, &cfg, &params, &mut rng);
        if i % 200 == 0 {
            samples.push(d * d);
        }
    }
    let (m, e) = jackknife(&samples, 100);
    // discrete-time stationary variance of the Euler recursion
    let kh = cfg.rate() * cfg.coarse_dt;
    let euler = target * 2.0 / (2.0 - kh);
    assert!((m - euler).abs() < 4.0 * e, "{m} ± {e} vs {euler}");
    assert!((euler / target - 1.0).abs() < 0.01);
}

#[test]
fn zero_gain_is_random_walk() {
    let params = ModelParams::new(2.0, 0.001, 10);
    let cfg = fine(20.0, 0.0);
    let steps = 500;
    let mut finals = Vec::new();
    for s in 0..4000u64 {
        let mut rng = rng_from_seed(s);
        let mut d = 0.0;
        for _ in 0..steps {
            d = coarse_grained_step(d, &cfg, &params, &mut rng);
        }
        finals.push(d * d);
    }
    let (m, e) = jackknife(&finals, 100);
    let expect = steps as f64 * cfg.coarse_dt / (2.0 * params.tau_m);
    assert!((m - expect).abs() < 4.0 * e, "{m} ± {e} vs {expect}");
}

#[test]
fn kz_matches_coarse_monte_carlo() {
    let params = ModelParams::new(1.0, 0.001, 10);
    let cfg = fine(20.0, 0.3);
    let lags = [0usize, 50, 150, 300, 500];
    let sd = stationary_variance(&cfg, &params).sqrt();
    let mut per_lag = vec![Vec::new(); lags.len()];
    for s in 0..20_000u64 {
        let mut rng = rng_from_seed(1000 + s);
        let first: f64 = StandardNormal.sample(&mut rng);
        let mut d = first * sd;
        let d0 = d;
        let mut k = 0;
        for (j, &lag) in lags.iter().enumerate() {
            while k < lag {
                d = coarse_grained_step(d, &cfg, &params, &mut rng);
                k += 1;
            }
            per_lag[j].push((d0 - d).cos());
        }
    }
    for (j, &lag) in lags.iter().enumerate() {
        let tau = lag as f64 * cfg.coarse_dt;
        let (m, e) = jackknife(&per_lag[j], 100);
        let est = 0.5 * (cfg.delta_d * tau).cos() * m;
        let err = 0.5 * (cfg.delta_d * tau).cos().abs() * e;
        let exact = kz_analytic(tau, &cfg, &params).unwrap();
        assert!((est - exact).abs() <= 4.0 * err + 1e-12, "tau {tau}: {est} ± {err} vs {exact}");
    }
}

fn full_simulation_report(n_traj: usize) -> qpath::feedback::KzReport {
    let cfg = PhaseLockConfig::new(20.0, 0.3);
    let spec = EnsembleSpec {
        n_traj,
        initial: BlochState::new(0.0, 0.0, 1.0).unwrap(),
        params: ModelParams::new(1.0, 0.0025, 1600),
        feedback: cfg.feedback(),
        scheme: UpdateScheme::Stratonovich,
        master_seed: 7,
        workers: None,
    };
    let taus: Vec<f64> = (0..=80).map(|i| i as f64 * 0.0125).collect();
    kz_empirical(&spec, &taus, &KzSampling::default()).unwrap()
}

#[test]
fn full_simulation_kz_shape() {
    let rep = full_simulation_report(500);
    assert!((rep.empirical[0] - 0.5).abs() < 4.0 * rep.stderr[0] + 0.01, "{}", rep.empirical[0]);
    let crossings: Vec<f64> = rep
        .empirical
        .windows(2)
        .zip(rep.taus.windows(2))
        .filter(|(k, _)| k[0].signum() != k[1].signum())
        .map(|(k, t)| t[0] + (t[1] - t[0]) * k[0] / (k[0] - k[1]))
        .collect();
    let half_period = (crossings.last().unwrap() - crossings[0]) / (crossings.len() - 1) as f64;
    assert!((half_period / (std::f64::consts::PI / 20.0) - 1.0).abs() < 0.01, "{half_period}");
    // the coarse-grained formula drops O(1/(delta_d tau_m)) corrections
    for j in 0..rep.taus.len() {
        assert!((rep.empirical[j] - rep.analytic[j]).abs() < 0.02, "tau {}", rep.taus[j]);
    }
}

#[test]
fn kz_rejects_long_burn_in() {
    let params = ModelParams::new(1.0, 0.005, 100);
    let cfg = PhaseLockConfig::new(20.0, 0.3);
    let spec = EnsembleSpec {
        n_traj: 4,
        initial: BlochState::new(0.0, 0.0, 1.0).unwrap(),
        params,
        feedback: cfg.feedback(),
        scheme: UpdateScheme::Stratonovich,
        master_seed: 7,
        workers: None,
    };
    assert!(matches!(
        kz_empirical(&spec, &[0.0, 0.1], &KzSampling::default()),
        Err(Error::BurnInTooLong { .. })
    ));
    let coarse = EnsembleSpec { params: ModelParams::new(1.0, 0.01, 1000), ..spec };
    assert!(kz_empirical(&coarse, &[0.0], &KzSampling::default()).is_err());
}

proptest! {
    #[test]
    fn envelope_monotone_and_bounded(f in 0.01f64..2.0, dd in 5.0f64..100.0, t1 in 0.0f64..5.0, t2 in 0.0f64..5.0) {
        let params = ModelParams::new(1.0, 0.001, 10);
        let cfg = PhaseLockConfig::new(dd, f);
        let (a, b) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        let (ea, eb) = (kz_envelope(a, &cfg, &params), kz_envelope(b, &cfg, &params));
        let floor = (-1.0 / (4.0 * cfg.rate())).exp();
        prop_assert!(eb <= ea + 1e-15);
        prop_assert!(eb >= floor - 1e-15);
        prop_assert_eq!(kz_analytic(0.0, &cfg, &params).unwrap(), 0.5);
    }
}
