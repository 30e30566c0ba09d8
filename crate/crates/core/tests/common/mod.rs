//! Independent reference implementations shared by the integration tests.
#![allow(dead_code, clippy::too_many_arguments)]

use num_complex::Complex64 as C64;
use qpath::diagrams::{Diagram, FieldSlot, Flavor, NoiseSlot};
use qpath::model::{DiagonalCoords, DiagonalFrame, ModelParams};

pub fn simpson(f: &dyn Fn(f64) -> C64, a: f64, b: f64, fa: C64, fm: C64, fb: C64, whole: C64, tol: f64, depth: u32) -> C64 {
    let m = 0.5 * (a + b);
    let (l, r) = (0.5 * (a + m), 0.5 * (m + b));
    let (fl, fr) = (f(l), f(r));
    let left = (m - a) / 6.0 * (fa + 4.0 * fl + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * fr + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.norm() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson(f, a, m, fa, fl, fm, left, tol / 2.0, depth - 1)
        + simpson(f, m, b, fm, fr, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson over [a, b], split at `breaks` and kept off them.
pub fn integrate(f: &dyn Fn(f64) -> C64, a: f64, b: f64, breaks: &[f64], tol: f64) -> C64 {
    let mut pts = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    inner.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.extend(inner);
    pts.push(b);
    let mut total = C64::new(0.0, 0.0);
    for w in pts.windows(2) {
        let (lo, hi) = (w[0] + 1e-14, w[1] - 1e-14);
        if hi <= lo {
            continue;
        }
        let m = 0.5 * (lo + hi);
        let (fa, fm, fb) = (f(lo), f(m), f(hi));
        let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
        total += simpson(f, lo, hi, fa, fm, fb, whole, tol, 40);
    }
    total
}

/// Direct evaluation: every internal vertex gets a time, noise pairs share it,
/// and free times are integrated over [0, horizon].
pub fn quadrature_value(d: &Diagram, frame: &DiagonalFrame, init: &DiagonalCoords, horizon: f64) -> C64 {
    let ne = d.endings.len();
    let nv = d.vertices.len();
    // group[node] for nodes 0..ne+nv, merging noise pairs
    let mut group: Vec<usize> = (0..ne + nv).collect();
    fn find(g: &mut [usize], mut a: usize) -> usize {
        while g[a] != a {
            a = g[a];
        }
        a
    }
    let node = |s: NoiseSlot| match s {
        NoiseSlot::Ending(i) => i,
        NoiseSlot::Vertex(v) => ne + v,
    };
    for &(a, b) in &d.noise_pairs {
        let (ra, rb) = (find(&mut group, node(a)), find(&mut group, node(b)));
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        group[hi] = lo;
    }
    let roots: Vec<usize> = (0..ne + nv).map(|x| find(&mut group, x)).collect();
    let mut fixed: Vec<Option<f64>> = vec![None; ne + nv];
    for (i, e) in d.endings.iter().enumerate() {
        fixed[roots[i]] = Some(e.time);
    }
    for (v, k) in d.vertices.iter().enumerate() {
        if !k.has_noise() {
            fixed[roots[ne + v]] = Some(0.0);
        }
    }
    let mut free: Vec<usize> = (0..ne + nv).filter(|&x| roots[x] == x && fixed[x].is_none()).collect();
    free.sort();
    let lam = |f: Flavor| match f {
        Flavor::U => frame.lambda1,
        Flavor::V => frame.lambda2,
        Flavor::W => frame.lambda3,
        Flavor::Xi => unreachable!(),
    };
    let mut weight = C64::new(d.coefficient, 0.0);
    for k in &d.vertices {
        weight *= k.weight(frame, init);
    }
    let integrand = |times: &[f64]| -> C64 {
        let t_of = |x: usize| -> f64 {
            let r = roots[x];
            match fixed[r] {
                Some(t) => t,
                None => times[free.iter().position(|&f| f == r).unwrap()],
            }
        };
        let mut val = weight;
        for p in &d.propagators {
            let later = match p.field {
                FieldSlot::Ending(i) => i,
                FieldSlot::Leg { vertex, .. } => ne + vertex,
            };
            let dt = t_of(later) - t_of(ne + p.conjugate);
            if dt <= 0.0 {
                return C64::new(0.0, 0.0);
            }
            val *= (lam(p.flavor) * dt).exp();
        }
        val
    };
    let mut breaks: Vec<f64> = d.endings.iter().map(|e| e.time).collect();
    breaks.push(0.0);
    fn nest(
        integrand: &dyn Fn(&[f64]) -> C64,
        prefix: &[f64],
        depth: usize,
        horizon: f64,
        breaks: &[f64],
    ) -> C64 {
        if depth == 0 {
            return integrand(prefix);
        }
        let mut b = breaks.to_vec();
        b.extend(prefix.iter().copied());
        let f = |t: f64| {
            let mut p = prefix.to_vec();
            p.push(t);
            nest(integrand, &p, depth - 1, horizon, breaks)
        };
        integrate(&f, 0.0, horizon, &b, 1e-12)
    }
    nest(&integrand, &[], free.len(), horizon, &breaks)
}

pub fn fluctuation_matrix(n: usize, p: &ModelParams) -> Vec<Vec<f64>> {
    let d = n - 1;
    let c = p.tau_m / p.dt;
    let mut m = vec![vec![0.0; d]; d];
    for i in 0..d {
        m[i][i] = 2.0 * c;
        if i + 1 < d {
            m[i][i + 1] = -c;
            m[i + 1][i] = -c;
        }
    }
    m
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn dense_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = a.len();
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..d).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..d {
        let piv = (col..d).max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs())).unwrap();
        aug.swap(col, piv);
        let p = aug[col][col];
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        for r in 0..d {
            if r != col {
                let f = aug[r][col];
                for c in 0..2 * d {
                    aug[r][c] -= f * aug[col][c];
                }
            }
        }
    }
    aug.into_iter().map(|r| r[d..].to_vec()).collect()
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Isserlis by brute force over all permutations: E = Σ_σ Π C_{σ(2k)σ(2k+1)} / (2^m m!).
pub fn brute_moment(indices: &[usize], cov: &[Vec<f64>]) -> f64 {
    let n = indices.len();
    if n % 2 == 1 {
        return 0.0;
    }
    let m = n / 2;
    let norm = (1..=m).map(|k| k as f64).product::<f64>() * 2f64.powi(m as i32);
    permutations(n)
        .iter()
        .map(|s| {
            (0..m)
                .map(|k| cov[indices[s[2 * k]] - 1][indices[s[2 * k + 1]] - 1])
                .product::<f64>()
        })
        .sum::<f64>()
        / norm
}
