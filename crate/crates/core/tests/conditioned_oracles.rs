#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]
mod common;

use common::{brute_moment, dense_inverse, fluctuation_matrix};
use proptest::prelude::*;
use qpath::conditioned::{
    action_decomposition_check, final_state_pdf, m_inverse_element, optimal_path_u, wick_moment, WickIndexSet,
};
use qpath::quad::adaptive_simpson;
use qpath::ModelParams;

#[test]
fn inverse_times_matrix_is_identity() {
    for n in 2..=9 {
        for (tau, dt) in [(1.0, 0.006), (2.5, 0.1), (0.3, 1e-3)] {
            let p = ModelParams::new(tau, dt, n);
            let m = fluctuation_matrix(n, &p);
            let d = n - 1;
            for i in 0..d {
                for j in 0..d {
                    let s: f64 = (0..d).map(|k| m[i][k] * m_inverse_element(k + 1, j + 1, n, &p).unwrap()).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((s - expect).abs() < 1e-10, "n={n} ({i},{j}): {s}");
                }
            }
        }
    }
}

#[test]
fn out_of_range_indices_are_rejected() {
    let p = ModelParams::new(1.0, 0.01, 5);
    assert!(wick_moment(&WickIndexSet::new(vec![0, 1]).unwrap(), 5, &p).is_err());
    assert!(wick_moment(&WickIndexSet::new(vec![1, 5]).unwrap(), 5, &p).is_err());
    assert!(WickIndexSet::new(vec![]).is_err());
}

proptest! {
    #[test]
    fn wick_matches_dense_brute_force(
        n in 2usize..=5,
        raw in proptest::collection::vec(0usize..100, 1..=6),
        tau in 0.2f64..3.0,
        dt in 0.001f64..0.2,
    ) {
        let p = ModelParams::new(tau, dt, n);
        let indices: Vec<usize> = raw.iter().map(|r| 1 + r % (n - 1)).collect();
        let cov = dense_inverse(&fluctuation_matrix(n, &p));
        let brute = brute_moment(&indices, &cov);
        let fast = wick_moment(&WickIndexSet::new(indices.clone()).unwrap(), n, &p).unwrap();
        prop_assert!((fast - brute).abs() <= 1e-8 * brute.abs().max(1e-300) + 1e-300, "{indices:?}: {fast} vs {brute}");
    }

    #[test]
    fn final_state_density_normalises(z_i in -0.95f64..0.95, big_t in 0.05f64..1.5, tau in 0.75f64..3.0) {
        let p = ModelParams::new(tau, 0.001, 10);
        let f = |u: f64| {
            let z = u.tanh();
            final_state_pdf(z, z_i, big_t, &p).unwrap() * (1.0 - z * z)
        };
        let centre = z_i.atanh() + big_t / tau;
        let width = 12.0 * (big_t / tau).sqrt() + 2.0 * big_t / tau + 1.0;
        let total = adaptive_simpson(&f, (centre - width).max(-15.0), (centre + width).min(15.0), 1e-11, 50);
        prop_assert!((total - 1.0).abs() < 1e-6, "{total}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn action_splits_into_optimal_plus_fluctuation(
        z_i in -0.9f64..0.9,
        z_f in -0.9f64..0.9,
        interior in proptest::collection::vec(-0.97f64..0.97, 3..60),
        dt in 0.001f64..0.05,
        tau in 0.3f64..3.0,
    ) {
        let p = ModelParams::new(tau, dt, interior.len() + 1);
        let mut path = vec![z_i];
        path.extend(&interior);
        path.push(z_f);
        let n = path.len() - 1;
        let dec = action_decomposition_check(&path, z_i, z_f, &p).unwrap();

        let ln_cosh = |u: f64| u.cosh().ln();
        let action = |u: &[f64]| -> f64 {
            let kin: f64 = u.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
            -tau * kin / (2.0 * dt) + ln_cosh(u[n]) - ln_cosh(u[0]) - n as f64 * dt / (2.0 * tau)
        };
        let u: Vec<f64> = path.iter().map(|z| z.atanh()).collect();
        let total = n as f64 * dt;
        let ubar: Vec<f64> = (0..=n)
            .map(|k| optimal_path_u(z_i, z_f, total, (k as f64 * dt).min(total)).unwrap())
            .collect();
        let quad: f64 = (0..n)
            .map(|k| ((u[k + 1] - ubar[k + 1]) - (u[k] - ubar[k])).powi(2))
            .sum::<f64>() * tau / (2.0 * dt);
        let (s_full, s_opt) = (action(&u), action(&ubar));
        let scale = s_full.abs() + s_opt.abs() + quad;
        prop_assert!((s_full - (s_opt - quad)).abs() <= 1e-8 * scale);
        prop_assert!((dec.s_full - s_full).abs() <= 1e-8 * scale);
        prop_assert!((dec.s_opt - s_opt).abs() <= 1e-8 * scale);
        prop_assert!((dec.quad_residual - quad).abs() <= 1e-8 * scale);
    }
}
