//! Piecewise sums of c t^m e^{a t} with complex c and a, closed under
//! products and under the two causal integrals used for diagram evaluation.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Exponents closer than this are merged, which turns e^{(a-b)t} with a ≈ b
/// into a polynomial factor.
pub const RATE_MERGE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub coef: C64,
    pub power: u32,
    pub rate: C64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExpPoly {
    pub terms: Vec<Term>,
}

impl ExpPoly {
    pub fn zero() -> Self {
        ExpPoly { terms: Vec::new() }
    }

    pub fn exp(coef: C64, rate: C64) -> Self {
        ExpPoly::from_terms(vec![Term { coef, power: 0, rate }])
    }

    pub fn constant(coef: C64) -> Self {
        ExpPoly::exp(coef, C64::new(0.0, 0.0))
    }

    fn from_terms(terms: Vec<Term>) -> Self {
        let mut out: Vec<Term> = Vec::with_capacity(terms.len());
        for t in terms {
            if t.coef == C64::new(0.0, 0.0) {
                continue;
            }
            match out
                .iter_mut()
                .find(|o| o.power == t.power && (o.rate - t.rate).norm() < RATE_MERGE)
            {
                Some(o) => o.coef += t.coef,
                None => out.push(t),
            }
        }
        ExpPoly { terms: out }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.coef == C64::new(0.0, 0.0))
    }

    pub fn eval(&self, t: f64) -> C64 {
        self.terms
            .iter()
            .map(|term| term.coef * t.powi(term.power as i32) * (term.rate * t).exp())
            .sum()
    }

    pub fn add(&self, other: &ExpPoly) -> ExpPoly {
        let mut v = self.terms.clone();
        v.extend_from_slice(&other.terms);
        ExpPoly::from_terms(v)
    }

    pub fn scale(&self, c: C64) -> ExpPoly {
        ExpPoly::from_terms(
            self.terms
                .iter()
                .map(|t| Term { coef: t.coef * c, ..*t })
                .collect(),
        )
    }

    pub fn mul(&self, other: &ExpPoly) -> ExpPoly {
        let mut v = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                v.push(Term {
                    coef: a.coef * b.coef,
                    power: a.power + b.power,
                    rate: a.rate + b.rate,
                });
            }
        }
        ExpPoly::from_terms(v)
    }

    /// Multiplies by e^{rate t}.
    pub fn shift_rate(&self, rate: C64) -> ExpPoly {
        ExpPoly::from_terms(
            self.terms
                .iter()
                .map(|t| Term { rate: t.rate + rate, ..*t })
                .collect(),
        )
    }

    /// An antiderivative, term by term.
    pub fn antiderivative(&self) -> ExpPoly {
        let mut v = Vec::new();
        for t in &self.terms {
            let m = t.power;
            if t.rate.norm() < RATE_MERGE {
                v.push(Term {
                    coef: t.coef / (m as f64 + 1.0),
                    power: m + 1,
                    rate: t.rate,
                });
                continue;
            }
            // ∫ t^m e^{a t} = e^{a t} Σ_k (-1)^k m!/(m-k)! t^{m-k} / a^{k+1}
            let mut falling = 1.0;
            let mut apow = t.rate;
            for k in 0..=m {
                if k > 0 {
                    falling *= (m - k + 1) as f64;
                    apow *= t.rate;
                }
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                v.push(Term {
                    coef: t.coef * sign * falling / apow,
                    power: m - k,
                    rate: t.rate,
                });
            }
        }
        ExpPoly::from_terms(v)
    }
}

/// A function of one time variable made of `ExpPoly` pieces between sorted
/// breakpoints, with separately stored values at the breakpoints themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct Piecewise {
    breaks: Vec<f64>,
    /// `pieces[i]` covers (breaks[i-1], breaks[i]); the first and last are unbounded.
    pieces: Vec<ExpPoly>,
    points: Vec<C64>,
}

impl Piecewise {
    pub fn smooth(f: ExpPoly) -> Self {
        Piecewise {
            breaks: Vec::new(),
            pieces: vec![f],
            points: Vec::new(),
        }
    }

    pub fn one() -> Self {
        Piecewise::smooth(ExpPoly::constant(C64::new(1.0, 0.0)))
    }

    /// Θ(x - t0) f(x) with Θ(0) = 0.
    pub fn step_up(t0: f64, f: ExpPoly) -> Self {
        Piecewise {
            breaks: vec![t0],
            pieces: vec![ExpPoly::zero(), f],
            points: vec![C64::new(0.0, 0.0)],
        }
    }

    /// Θ(t0 - x) f(x) with Θ(0) = 0.
    pub fn step_down(t0: f64, f: ExpPoly) -> Self {
        Piecewise {
            breaks: vec![t0],
            pieces: vec![f, ExpPoly::zero()],
            points: vec![C64::new(0.0, 0.0)],
        }
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    fn piece_index(&self, x: f64) -> usize {
        self.breaks.partition_point(|b| *b < x)
    }

    pub fn eval(&self, x: f64) -> C64 {
        let i = self.piece_index(x);
        if i < self.breaks.len() && self.breaks[i] == x {
            return self.points[i];
        }
        self.pieces[i].eval(x)
    }

    /// The piece in force on the open interval to the right of `x`.
    fn piece_right_of(&self, x: f64) -> &ExpPoly {
        &self.pieces[self.breaks.partition_point(|b| *b <= x)]
    }

    pub fn mul(&self, other: &Piecewise) -> Piecewise {
        let mut breaks: Vec<f64> = self.breaks.iter().chain(&other.breaks).copied().collect();
        breaks.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
        breaks.dedup();
        let mut pieces = Vec::with_capacity(breaks.len() + 1);
        pieces.push(self.pieces[0].mul(&other.pieces[0]));
        for &b in &breaks {
            pieces.push(self.piece_right_of(b).mul(other.piece_right_of(b)));
        }
        let points = breaks.iter().map(|&b| self.eval(b) * other.eval(b)).collect();
        Piecewise { breaks, pieces, points }
    }

    /// Breakpoints from zero upward, with zero always included.
    fn nonnegative_breaks(&self) -> Vec<f64> {
        let mut b = vec![0.0];
        b.extend(self.breaks.iter().copied().filter(|&x| x > 0.0));
        b
    }

    /// g(s) = ∫_0^s e^{λ(s-τ)} f(τ) dτ for s > 0, zero for s <= 0.
    pub fn integrate_below(&self, lambda: C64) -> Piecewise {
        let b = self.nonnegative_breaks();
        let mut pieces = vec![ExpPoly::zero()];
        let mut points = Vec::with_capacity(b.len());
        let mut acc = C64::new(0.0, 0.0);
        for (j, &lo) in b.iter().enumerate() {
            let h = self.piece_right_of(lo).shift_rate(-lambda).antiderivative();
            points.push(acc * (lambda * lo).exp());
            let offset = acc - h.eval(lo);
            pieces.push(h.add(&ExpPoly::constant(offset)).shift_rate(lambda));
            if let Some(&hi) = b.get(j + 1) {
                acc += h.eval(hi) - h.eval(lo);
            }
        }
        Piecewise {
            breaks: b,
            pieces,
            points,
        }
    }

    /// g(s) = ∫_{max(s,0)}^∞ e^{λ(τ-s)} f(τ) dτ, requiring f to vanish beyond
    /// its last breakpoint.
    pub fn integrate_above(&self, lambda: C64) -> Result<Piecewise> {
        if !self.pieces.last().is_none_or(ExpPoly::is_zero) {
            return Err(Error::UnsupportedDiagram(
                "integrand does not vanish at late times".into(),
            ));
        }
        let b = self.nonnegative_breaks();
        let m = b.len();
        let hs: Vec<ExpPoly> = b
            .iter()
            .map(|&lo| self.piece_right_of(lo).shift_rate(lambda).antiderivative())
            .collect();
        // tail[j] = ∫ from b[j] to ∞ of e^{λτ} f(τ).
        let mut tail = vec![C64::new(0.0, 0.0); m + 1];
        for j in (0..m).rev() {
            let seg = match b.get(j + 1) {
                Some(&hi) => hs[j].eval(hi) - hs[j].eval(b[j]),
                None => C64::new(0.0, 0.0),
            };
            tail[j] = tail[j + 1] + seg;
        }
        let mut pieces = vec![ExpPoly::constant(tail[0]).shift_rate(-lambda)];
        let mut points = Vec::with_capacity(m);
        for j in 0..m {
            points.push(tail[j] * (-lambda * b[j]).exp());
            let piece = match b.get(j + 1) {
                Some(&hi) => ExpPoly::constant(tail[j + 1] + hs[j].eval(hi))
                    .add(&hs[j].scale(C64::new(-1.0, 0.0)))
                    .shift_rate(-lambda),
                None => ExpPoly::zero(),
            };
            pieces.push(piece);
        }
        Ok(Piecewise {
            breaks: b,
            pieces,
            points,
        })
    }
}
