#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]
//! Diagram values against direct numerical integration of their integrands,
//! and the closed-form correlators against the diagram sums.

mod common;

use common::{integrate, quadrature_value};
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use qpath::correlators::{
    corr_z_xi, mean_z, variance_limit, variance_limit_from_frame, TreeCorrelator,
};
use qpath::diagrams::{enumerate_tree, evaluate_diagram, Flavor};
use qpath::model::{eigensystem, to_diagonal, BlochState, DiagonalCoords, DiagonalFrame, ModelParams};

fn setup(eta: f64, delta: f64, state: (f64, f64, f64)) -> (ModelParams, DiagonalFrame, DiagonalCoords, BlochState) {
    let p = ModelParams::new(1.0, 0.001, 500).with_efficiency(eta).with_delta(delta);
    let f = eigensystem(&p).unwrap();
    let s = BlochState::new(state.0, state.1, state.2).unwrap();
    let c = to_diagonal(&s, &f, &p).unwrap();
    (p, f, c, s)
}

fn rel_close(a: C64, b: C64, tol: f64) -> bool {
    (a - b).norm() <= tol * a.norm().max(b.norm()).max(1e-12)
}

#[test]
fn all_two_point_diagrams_match_quadrature() {
    let (_, f, c, _) = setup(0.3, 4.0, (0.2, 0.6, 0.5));
    let pairs = [
        [(Flavor::V, 0.41), (Flavor::V, 0.27)],
        [(Flavor::V, 0.27), (Flavor::W, 0.41)],
        [(Flavor::W, 0.33), (Flavor::W, 0.33)],
        [(Flavor::V, 0.41), (Flavor::Xi, 0.17)],
        [(Flavor::W, 0.41), (Flavor::Xi, 0.17)],
        [(Flavor::U, 0.3), (Flavor::V, 0.2)],
    ];
    for endings in pairs {
        for d in enumerate_tree(&endings).unwrap() {
            let closed = evaluate_diagram(&d, &f, &c, 0.5).unwrap();
            let quad = quadrature_value(&d, &f, &c, 0.5);
            assert!(rel_close(closed, quad, 1e-6), "{}\nclosed {closed} quad {quad}", d.listing());
        }
    }
}

#[test]
fn three_point_diagrams_match_quadrature() {
    let (_, f, c, _) = setup(0.5, 2.0, (0.0, 0.8, 0.3));
    let endings = [(Flavor::V, 0.31), (Flavor::W, 0.22), (Flavor::Xi, 0.12)];
    let diagrams = enumerate_tree(&endings).unwrap();
    assert!(!diagrams.is_empty());
    for d in diagrams.iter().filter(|d| d.vertices.len() <= 5) {
        let closed = evaluate_diagram(d, &f, &c, 0.4).unwrap();
        let quad = quadrature_value(d, &f, &c, 0.4);
        assert!(rel_close(closed, quad, 1e-6), "{}\nclosed {closed} quad {quad}", d.listing());
    }
}

#[test]
fn vv_sum_matches_closed_form_integral() {
    let (p, f, c, s) = setup(0.02, 20.0 * std::f64::consts::PI, (0.0, 1.0, 0.0));
    let corr = TreeCorrelator::new(&s, &p).unwrap();
    let (t1, t2) = (0.31, 0.12);
    let (l2, l3) = (f.lambda2, f.lambda3);
    let brace = |t: f64| f.kappa2 + f.alpha * c.v * c.v * (2.0 * l2 * t).exp() + f.alpha * c.v * c.w * ((l2 + l3) * t).exp();
    let integrand = |t: f64| (l2 * (t1 - t)).exp() * (l2 * (t2 - t)).exp() * brace(t) * brace(t);
    let expect = c.v * c.v * (l2 * (t1 + t2)).exp() + integrate(&integrand, 0.0, t2, &[], 1e-14);
    let got = corr.pair(0, 0, t1, t2).unwrap();
    assert!(rel_close(got, expect, 1e-9), "{got} vs {expect}");
}

#[test]
fn mean_matches_single_line_diagrams() {
    for (eta, delta) in [(1.0, 20.0 * std::f64::consts::PI), (0.02, 20.0 * std::f64::consts::PI), (0.4, 0.7)] {
        let (p, f, c, s) = setup(eta, delta, (0.1, 0.7, -0.4));
        for t in [0.01, 0.1, 0.37] {
            let v = &enumerate_tree(&[(Flavor::V, t)]).unwrap()[0];
            let w = &enumerate_tree(&[(Flavor::W, t)]).unwrap()[0];
            let sum = evaluate_diagram(v, &f, &c, t).unwrap() + evaluate_diagram(w, &f, &c, t).unwrap();
            let m = mean_z(t, &s, &p).unwrap();
            assert!((sum.re - m).abs() < 1e-10 && sum.im.abs() < 1e-10);
        }
    }
}

#[test]
fn z_xi_closed_form_matches_diagrams() {
    let (p, f, _, s) = setup(0.02, 20.0 * std::f64::consts::PI, (0.0, 1.0, 0.0));
    let corr = TreeCorrelator::new(&s, &p).unwrap();
    for (t1, t2) in [(0.3, 0.1), (0.05, 1e-6), (0.2, 0.19)] {
        let a = corr_z_xi(t1, t2, &s, &f, &p).unwrap();
        let b = corr.z_xi(t1, t2).unwrap();
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0), "{a} vs {b}");
    }
    assert_eq!(corr.z_xi(0.2, 0.2).unwrap(), 0.0);
    assert_eq!(corr.z_xi(0.1, 0.2).unwrap(), 0.0);
    assert_eq!(corr_z_xi(0.2, 0.2, &s, &f, &p).unwrap(), 0.0);
}

#[test]
fn long_time_variance_limit() {
    let (p, f, _, s) = setup(0.02, 20.0 * std::f64::consts::PI, (0.0, 1.0, 0.0));
    let target = variance_limit(&p);
    assert!((target - 0.023).abs() < 5e-4);
    assert!((variance_limit_from_frame(&f).unwrap() - target).abs() < 1e-12);
    let corr = TreeCorrelator::new(&s, &p).unwrap();
    let v = corr.var_z(3.0).unwrap();
    assert!((v - target).abs() < 1e-6, "{v} vs {target}");
    assert!(corr.var_z(1e-9).unwrap().abs() < 1e-6);
}

#[test]
fn empty_endings_give_unit() {
    let (_, f, c, _) = setup(1.0, 3.0, (0.0, 1.0, 0.0));
    let d = enumerate_tree(&[]).unwrap();
    assert_eq!(d.len(), 1);
    assert_eq!(evaluate_diagram(&d[0], &f, &c, 1.0).unwrap(), C64::new(1.0, 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn closed_forms_match_quadrature_for_random_times(
        t1 in 0.01f64..0.5, t2 in 0.01f64..0.5, eta in 0.05f64..1.0, delta in 0.5f64..30.0,
        y in -0.7f64..0.7, z in -0.7f64..0.7,
    ) {
        let (_, f, c, _) = setup(eta, delta, (0.0, y, z));
        for endings in [[(Flavor::V, t1), (Flavor::W, t2)], [(Flavor::W, t1), (Flavor::Xi, t2)]] {
            for d in enumerate_tree(&endings).unwrap() {
                let closed = evaluate_diagram(&d, &f, &c, 0.5).unwrap();
                let quad = quadrature_value(&d, &f, &c, 0.5);
                prop_assert!(rel_close(closed, quad, 1e-6) || (closed - quad).norm() < 1e-12,
                    "{}\nclosed {} quad {}", d.listing(), closed, quad);
            }
        }
    }

    #[test]
    fn correlators_are_real(t1 in 0.01f64..0.5, t2 in 0.01f64..0.5, eta in 0.02f64..1.0) {
        let (p, _, _, s) = setup(eta, 20.0 * std::f64::consts::PI, (0.0, 1.0, 0.0));
        let corr = TreeCorrelator::new(&s, &p).unwrap();
        prop_assert!(corr.zz(t1, t2).is_ok());
        prop_assert!(corr.yz(t1, t2).is_ok());
    }
}
