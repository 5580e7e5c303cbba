//! Exponential polynomials: finite sums of `c · t^m · e^{a t} · cos(b t)` and
//! `c · t^m · e^{a t} · sin(b t)`.
//!
//! The family is closed under addition, products, differentiation and
//! Laplace convolution on `[0, t]`, so every coefficient function built from a
//! memory kernel of this form is represented exactly. Internally, products
//! and convolutions run on the complex-exponential form `c · t^m · e^{λ t}`
//! and are folded back into the real form afterwards.

mod parse;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

pub use parse::parse;

/// Relative size below which a coefficient produced by cancellation is
/// dropped.
pub const CANCELLATION_TOL: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Cos,
    Sin,
}

/// One term `coeff · t^power · e^{rate·t} · phase(freq·t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub coeff: f64,
    pub power: u32,
    pub rate: f64,
    pub freq: f64,
    pub phase: Phase,
}

impl Term {
    pub fn new(coeff: f64, power: u32, rate: f64, freq: f64, phase: Phase) -> Self {
        Self { coeff, power, rate, freq, phase }
    }

    fn order_key(&self, other: &Self) -> Ordering {
        self.rate
            .total_cmp(&other.rate)
            .then(self.freq.total_cmp(&other.freq))
            .then(self.phase.cmp(&other.phase))
            .then(self.power.cmp(&other.power))
    }
}

#[derive(Clone, Copy, Debug)]
struct CTerm {
    c: Complex64,
    m: u32,
    lambda: Complex64,
}

/// A real exponential polynomial in canonical form: terms sorted by
/// `(rate, freq, phase, power)`, no two sharing that key, no zero
/// coefficients, `freq >= 0`, and `freq == 0` only with [`Phase::Cos`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExpPolyFn {
    terms: Vec<Term>,
}

fn clean_zero(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x
    }
}

pub(crate) fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

pub(crate) fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

impl ExpPolyFn {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Self::from_terms(alloc::vec![Term::new(c, 0, 0.0, 0.0, Phase::Cos)])
    }

    /// `c · t^m`.
    pub fn monomial(c: f64, m: u32) -> Self {
        Self::from_terms(alloc::vec![Term::new(c, m, 0.0, 0.0, Phase::Cos)])
    }

    /// `e^{rate · t}`.
    pub fn exp(rate: f64) -> Self {
        Self::from_terms(alloc::vec![Term::new(1.0, 0, rate, 0.0, Phase::Cos)])
    }

    pub fn cos(freq: f64) -> Self {
        Self::from_terms(alloc::vec![Term::new(1.0, 0, 0.0, freq, Phase::Cos)])
    }

    pub fn sin(freq: f64) -> Self {
        Self::from_terms(alloc::vec![Term::new(1.0, 0, 0.0, freq, Phase::Sin)])
    }

    /// Builds the canonical form of an arbitrary list of terms.
    pub fn from_terms(terms: Vec<Term>) -> Self {
        let complex: Vec<CTerm> = terms.iter().flat_map(|t| to_complex(*t)).collect();
        from_complex(complex)
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_power(&self) -> u32 {
        self.terms.iter().map(|t| t.power).max().unwrap_or(0)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let mut sum = 0.0;
        let mut key: Option<(f64, f64)> = None;
        let (mut ea, mut cb, mut sb) = (1.0, 1.0, 0.0);
        for term in &self.terms {
            if key != Some((term.rate, term.freq)) {
                ea = (term.rate * t).exp();
                if term.freq == 0.0 {
                    cb = 1.0;
                    sb = 0.0;
                } else {
                    let (s, c) = (term.freq * t).sin_cos();
                    cb = c;
                    sb = s;
                }
                key = Some((term.rate, term.freq));
            }
            let osc = match term.phase {
                Phase::Cos => cb,
                Phase::Sin => sb,
            };
            sum += term.coeff * t.powi(term.power as i32) * ea * osc;
        }
        sum
    }

    /// Pointwise bound `|f(τ)| ≤ Σ |c| τ^m e^{a τ}` valid at `τ = t`, and
    /// a bound for the maximum over `[0, t]` when `over_interval` is set.
    pub fn abs_bound(&self, t: f64, over_interval: bool) -> f64 {
        self.terms
            .iter()
            .map(|term| {
                let growth = if over_interval { (term.rate * t).exp().max(1.0) } else { (term.rate * t).exp() };
                term.coeff.abs() * t.abs().powi(term.power as i32) * growth
            })
            .sum()
    }

    pub fn scale(&self, c: f64) -> Self {
        if c == 0.0 {
            return Self::zero();
        }
        Self { terms: self.terms.iter().map(|t| Term { coeff: t.coeff * c, ..*t }).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        Self::from_terms(terms)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    /// Pointwise product.
    pub fn mul(&self, other: &Self) -> Self {
        let a = self.complex_terms();
        let b = other.complex_terms();
        let mut out = Vec::with_capacity(a.len() * b.len());
        for x in &a {
            for y in &b {
                out.push(CTerm { c: x.c * y.c, m: x.m + y.m, lambda: x.lambda + y.lambda });
            }
        }
        from_complex(out)
    }

    /// Symbolic `k`-th derivative.
    pub fn derivative(&self, k: u32) -> Self {
        let mut current = self.complex_terms();
        for _ in 0..k {
            let mut next = Vec::with_capacity(2 * current.len());
            for term in &current {
                if term.m > 0 {
                    next.push(CTerm { c: term.c * term.m as f64, m: term.m - 1, lambda: term.lambda });
                }
                if term.lambda != Complex64::new(0.0, 0.0) {
                    next.push(CTerm { c: term.c * term.lambda, m: term.m, lambda: term.lambda });
                }
            }
            current = merge_complex(next);
        }
        from_complex(current)
    }

    /// Laplace convolution `(f ∗ g)(t) = ∫₀ᵗ f(t−τ) g(τ) dτ`.
    pub fn convolve(&self, other: &Self) -> Self {
        from_complex(convolve_complex(&self.complex_terms(), &other.complex_terms()))
    }

    /// `j`-fold convolution power; the zero function when `j == 0`.
    pub fn conv_power(&self, j: u32) -> Self {
        let mut powers = self.conv_powers(j);
        powers.pop().unwrap_or_default()
    }

    /// All convolution powers `M, M∗M, …` up to `j` factors.
    pub fn conv_powers(&self, j: u32) -> Vec<Self> {
        let base = self.complex_terms();
        let mut out = Vec::with_capacity(j as usize);
        if j == 0 {
            out.push(Self::zero());
            return out;
        }
        let mut current = base.clone();
        out.push(self.clone());
        for _ in 1..j {
            current = merge_complex(convolve_complex(&current, &base));
            out.push(from_complex(current.clone()));
        }
        out
    }

    fn complex_terms(&self) -> Vec<CTerm> {
        self.terms.iter().flat_map(|t| to_complex(*t)).collect()
    }

    /// The function as `Σ c · t^m · e^{λt}` with complex `c` and `λ`,
    /// returned as `(c, m, λ)` triples.
    pub fn complex_form(&self) -> Vec<(Complex64, u32, Complex64)> {
        merge_complex(self.complex_terms()).into_iter().map(|t| (t.c, t.m, t.lambda)).collect()
    }

    /// Canonical text form, accepted back by [`parse`].
    pub fn to_expr_string(&self) -> String {
        alloc::format!("{self}")
    }
}

fn to_complex(t: Term) -> impl Iterator<Item = CTerm> {
    let mut out: [Option<CTerm>; 2] = [None, None];
    if t.coeff != 0.0 {
        let freq = t.freq.abs();
        // sin(-b t) = -sin(b t)
        let sign = if t.freq < 0.0 && t.phase == Phase::Sin { -1.0 } else { 1.0 };
        let c = t.coeff * sign;
        if freq == 0.0 {
            if t.phase == Phase::Cos {
                out[0] = Some(CTerm { c: Complex64::new(c, 0.0), m: t.power, lambda: Complex64::new(t.rate, 0.0) });
            }
        } else {
            let (cp, cm) = match t.phase {
                Phase::Cos => (Complex64::new(0.5 * c, 0.0), Complex64::new(0.5 * c, 0.0)),
                Phase::Sin => (Complex64::new(0.0, -0.5 * c), Complex64::new(0.0, 0.5 * c)),
            };
            out[0] = Some(CTerm { c: cp, m: t.power, lambda: Complex64::new(t.rate, freq) });
            out[1] = Some(CTerm { c: cm, m: t.power, lambda: Complex64::new(t.rate, -freq) });
        }
    }
    out.into_iter().flatten()
}

type Key = (u32, u64, u64);

fn key_of(m: u32, lambda: Complex64) -> Key {
    (m, clean_zero(lambda.re).to_bits(), clean_zero(lambda.im).to_bits())
}

/// Sums complex terms sharing `(m, λ)`, dropping cancellations.
fn merge_complex(terms: Vec<CTerm>) -> Vec<CTerm> {
    let mut groups: BTreeMap<Key, (CTerm, f64)> = BTreeMap::new();
    for t in terms {
        let entry = groups.entry(key_of(t.m, t.lambda)).or_insert((CTerm { c: Complex64::new(0.0, 0.0), ..t }, 0.0));
        entry.0.c += t.c;
        entry.1 += t.c.norm();
    }
    groups.into_values().filter(|(t, mag)| t.c.norm() > CANCELLATION_TOL * mag).map(|(t, _)| t).collect()
}

fn from_complex(terms: Vec<CTerm>) -> ExpPolyFn {
    // (m, rate, |freq|) -> (sum over +freq, sum over -freq, magnitude)
    let mut groups: BTreeMap<Key, (Complex64, Complex64, f64, f64, f64)> = BTreeMap::new();
    for t in terms {
        let re = clean_zero(t.lambda.re);
        let im = clean_zero(t.lambda.im);
        let e = groups.entry((t.m, re.to_bits(), im.abs().to_bits())).or_insert((
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            0.0,
            re,
            im.abs(),
        ));
        if im >= 0.0 {
            e.0 += t.c;
        } else {
            e.1 += t.c;
        }
        e.2 += t.c.norm();
    }
    let mut out = Vec::new();
    for ((m, _, _), (plus, minus, mag, rate, freq)) in groups {
        let floor = CANCELLATION_TOL * mag;
        if freq == 0.0 {
            let c = (plus + minus).re;
            if c.abs() > floor {
                out.push(Term::new(c, m, rate, 0.0, Phase::Cos));
            }
        } else {
            let cos_c = (plus + minus).re;
            let sin_c = -(plus - minus).im;
            if cos_c.abs() > floor {
                out.push(Term::new(cos_c, m, rate, freq, Phase::Cos));
            }
            if sin_c.abs() > floor {
                out.push(Term::new(sin_c, m, rate, freq, Phase::Sin));
            }
        }
    }
    out.sort_by(|a, b| a.order_key(b));
    ExpPolyFn { terms: out }
}

fn convolve_complex(a: &[CTerm], b: &[CTerm]) -> Vec<CTerm> {
    let mut out = Vec::new();
    for x in a {
        for y in b {
            convolve_pair(x, y, &mut out);
        }
    }
    out
}

/// `(c1 t^m e^{λt}) ∗ (c2 t^n e^{μt})` by partial fractions of
/// `m! n! / ((s−λ)^{m+1} (s−μ)^{n+1})`.
fn convolve_pair(x: &CTerm, y: &CTerm, out: &mut Vec<CTerm>) {
    let (m, n) = (x.m, y.m);
    let scale = x.c * y.c * (factorial(m) * factorial(n));
    if x.lambda == y.lambda {
        let p = m + n + 1;
        out.push(CTerm { c: scale / factorial(p), m: p, lambda: x.lambda });
        return;
    }
    push_partial_fractions(scale, m + 1, x.lambda, n + 1, y.lambda, out);
    push_partial_fractions(scale, n + 1, y.lambda, m + 1, x.lambda, out);
}

/// Terms of `1/((s−λ)^p (s−μ)^q)` at the pole `λ`, inverted to the time
/// domain and multiplied by `scale`.
fn push_partial_fractions(scale: Complex64, p: u32, lambda: Complex64, q: u32, mu: Complex64, out: &mut Vec<CTerm>) {
    let diff = lambda - mu;
    for k in 1..=p {
        let r = p - k;
        let sign = if r.is_multiple_of(2) { 1.0 } else { -1.0 };
        let coeff = sign * binomial(q + r - 1, r);
        let a_k = diff.powi(-((q + r) as i32)) * coeff;
        out.push(CTerm { c: scale * a_k / factorial(k - 1), m: k - 1, lambda });
    }
}

fn fmt_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        alloc::format!("{}", x as i64)
    } else {
        alloc::format!("{x:?}")
    }
}

impl fmt::Display for ExpPolyFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (i, term) in self.terms.iter().enumerate() {
            let mut c = term.coeff;
            if i > 0 {
                if c < 0.0 {
                    f.write_str(" - ")?;
                    c = -c;
                } else {
                    f.write_str(" + ")?;
                }
            }
            f.write_str(&fmt_number(c))?;
            match term.power {
                0 => {}
                1 => f.write_str("*t")?,
                p => write!(f, "*t^{p}")?,
            }
            if term.rate != 0.0 {
                write!(f, "*exp({}*t)", fmt_number(term.rate))?;
            }
            if term.freq != 0.0 {
                let name = match term.phase {
                    Phase::Cos => "cos",
                    Phase::Sin => "sin",
                };
                write!(f, "*{name}({}*t)", fmt_number(term.freq))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    #[test]
    fn eval_examples() {
        assert_eq!(ExpPolyFn::constant(1.0).eval(3.7), 1.0);
        let f = ExpPolyFn::monomial(1.0, 1).mul(&ExpPolyFn::exp(-1.0));
        assert_eq!(f.eval(0.0), 0.0);
        assert!((ExpPolyFn::sin(1.0).eval(PI / 2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn derivative_examples() {
        let d = ExpPolyFn::monomial(1.0, 2).derivative(1);
        assert_eq!(d, ExpPolyFn::monomial(2.0, 1));
        let (a, b) = (0.3, 2.0);
        let f = ExpPolyFn::exp(a).mul(&ExpPolyFn::sin(b));
        let expected = ExpPolyFn::from_terms(alloc::vec![Term::new(a, 0, a, b, Phase::Sin), Term::new(b, 0, a, b, Phase::Cos),]);
        let got = f.derivative(1);
        for t in [0.0, 0.4, 1.3] {
            assert!((got.eval(t) - expected.eval(t)).abs() < 1e-14);
        }
        assert!(ExpPolyFn::sin(1.0).derivative(2).eval(0.0).abs() < 1e-15);
    }

    #[test]
    fn convolution_of_constants_and_resonant_exponentials() {
        let one = ExpPolyFn::constant(1.0);
        assert_eq!(one.convolve(&one), ExpPolyFn::monomial(1.0, 1));
        let e = ExpPolyFn::exp(-0.7);
        let expected = ExpPolyFn::monomial(1.0, 1).mul(&e);
        assert_eq!(e.convolve(&e), expected);
    }

    #[test]
    fn conv_power_conventions() {
        assert!(ExpPolyFn::exp(1.0).conv_power(0).is_zero());
        assert_eq!(ExpPolyFn::constant(1.0).conv_power(1), ExpPolyFn::constant(1.0));
        assert_eq!(ExpPolyFn::constant(1.0).conv_power(3), ExpPolyFn::monomial(0.5, 2));
    }

    #[test]
    fn canonical_form_merges_and_drops() {
        let f = ExpPolyFn::from_terms(alloc::vec![
            Term::new(1.0, 0, 0.0, 0.0, Phase::Cos),
            Term::new(2.0, 0, 0.0, 0.0, Phase::Cos),
            Term::new(5.0, 0, 0.0, 0.0, Phase::Sin),
            Term::new(0.0, 3, 1.0, 0.0, Phase::Cos),
        ]);
        assert_eq!(f.terms(), &[Term::new(3.0, 0, 0.0, 0.0, Phase::Cos)]);
        let g = ExpPolyFn::sin(-2.0);
        assert_eq!(g.terms(), &[Term::new(-1.0, 0, 0.0, 2.0, Phase::Sin)]);
    }

    #[test]
    fn display_is_readable() {
        let f = ExpPolyFn::monomial(1.0, 2).mul(&ExpPolyFn::exp(0.5)).mul(&ExpPolyFn::cos(2.0));
        assert_eq!(f.to_expr_string(), "1*t^2*exp(0.5*t)*cos(2*t)");
        assert_eq!(ExpPolyFn::zero().to_expr_string(), "0");
        let g = ExpPolyFn::constant(1.0).sub(&ExpPolyFn::monomial(2.0, 1));
        assert_eq!(g.to_expr_string(), "1 - 2*t");
    }
}
