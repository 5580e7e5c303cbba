//! Closed-form modal propagator for exponential-polynomial kernels.
//!
//! The Laplace transform of `y' = −η y − M∗y` is `1/F(s)` with
//! `F(s) = s + η + M̂(s)` and `M̂` rational, so
//! `φ(t) = Σ_k e^{s_k t} / F'(s_k)` over the zeros `s_k` of `F`.

use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::expoly::{factorial, ExpPolyFn};

const MAX_SWEEPS: usize = 400;
const STEP_TOL: f64 = 1e-15;
/// Relative tolerance on the moment identities `Σ r_k = 1`, `Σ r_k s_k = −η`.
pub const MOMENT_TOL: f64 = 1e-8;

/// `φ(t) = Re Σ_k r_k e^{s_k t}` for one eigenvalue.
#[derive(Clone, Debug)]
pub struct ModeResolvent {
    eta: f64,
    poles: Vec<Complex64>,
    residues: Vec<Complex64>,
}

struct Transform {
    eta: f64,
    /// `(c · m!, m, λ)`.
    terms: Vec<(Complex64, u32, Complex64)>,
    /// Distinct `λ` with the largest pole order `p = m + 1`.
    groups: Vec<(Complex64, u32, Complex64)>,
}

impl Transform {
    fn new(kernel: &ExpPolyFn, eta: f64) -> Self {
        let terms: Vec<_> = kernel.complex_form().into_iter().map(|(c, m, l)| (c * factorial(m), m, l)).collect();
        let mut groups: Vec<(Complex64, u32, Complex64)> = Vec::new();
        for &(c, m, l) in &terms {
            match groups.iter_mut().find(|g| g.0 == l) {
                Some(g) if m + 1 > g.1 => {
                    g.1 = m + 1;
                    g.2 = c;
                }
                Some(_) => {}
                None => groups.push((l, m + 1, c)),
            }
        }
        Self { eta, terms, groups }
    }

    fn f(&self, s: Complex64) -> Complex64 {
        let mut v = s + self.eta;
        for &(c, m, l) in &self.terms {
            v += c / (s - l).powi(m as i32 + 1);
        }
        v
    }

    fn df(&self, s: Complex64) -> Complex64 {
        let mut v = Complex64::new(1.0, 0.0);
        for &(c, m, l) in &self.terms {
            v -= c * (m as f64 + 1.0) / (s - l).powi(m as i32 + 2);
        }
        v
    }

    /// `G'/G` for the polynomial `G = F · Π (s − λ)^p`.
    fn log_derivative(&self, s: Complex64) -> Complex64 {
        let mut v = self.df(s) / self.f(s);
        for &(l, p, _) in &self.groups {
            v += p as f64 / (s - l);
        }
        v
    }

    fn degree(&self) -> usize {
        1 + self.groups.iter().map(|g| g.1 as usize).sum::<usize>()
    }

    fn initial_guesses(&self) -> Vec<Complex64> {
        let mut out = alloc::vec![Complex64::new(-self.eta, 0.0)];
        for &(l, p, c) in &self.groups {
            let base = -c / (l + self.eta);
            let r = base.norm().powf(1.0 / p as f64).max(1e-6 * (1.0 + l.norm()));
            let arg = base.arg() / p as f64;
            for k in 0..p {
                let theta = arg + 2.0 * core::f64::consts::PI * k as f64 / p as f64 + 0.1;
                out.push(l + Complex64::from_polar(r, theta));
            }
        }
        out
    }
}

impl ModeResolvent {
    pub fn new(kernel: &ExpPolyFn, eta: f64) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(invalid("eigenvalue must be positive"));
        }
        let tf = Transform::new(kernel, eta);
        let n = tf.degree();
        let mut roots = tf.initial_guesses();
        debug_assert_eq!(roots.len(), n);
        for _ in 0..MAX_SWEEPS {
            let mut largest = 0.0f64;
            for k in 0..n {
                let s = roots[k];
                let ratio = tf.log_derivative(s);
                let repulsion: Complex64 = (0..n).filter(|&j| j != k).map(|j| Complex64::new(1.0, 0.0) / (s - roots[j])).sum();
                let step = Complex64::new(1.0, 0.0) / (ratio - repulsion);
                if step.is_finite() {
                    roots[k] = s - step;
                    largest = largest.max(step.norm() / (1.0 + s.norm()));
                }
            }
            if largest < STEP_TOL {
                break;
            }
        }
        for root in roots.iter_mut() {
            for _ in 0..3 {
                let step = tf.f(*root) / tf.df(*root);
                if step.is_finite() {
                    *root -= step;
                }
            }
        }
        let residues: Vec<Complex64> = roots.iter().map(|&s| Complex64::new(1.0, 0.0) / tf.df(s)).collect();
        let scale: f64 = residues.iter().map(|r| r.norm()).sum::<f64>().max(1.0);
        let m0: Complex64 = residues.iter().sum();
        let m1: Complex64 = residues.iter().zip(&roots).map(|(r, s)| r * s).sum();
        let d0 = (m0 - 1.0).norm() / scale;
        let d1 = (m1 + eta).norm() / (scale * (1.0 + eta));
        if !(d0.max(d1) <= MOMENT_TOL) {
            return Err(Error::Mismatch { what: "resolvent moment identities", discrepancy: d0.max(d1), tolerance: MOMENT_TOL });
        }
        Ok(Self { eta, poles: roots, residues })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn poles(&self) -> &[Complex64] {
        &self.poles
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.poles.iter().zip(&self.residues).map(|(s, r)| (r * (s * t).exp()).re).sum()
    }
}

/// `φ_η(t)` at every time in `times`.
pub fn resolvent_mode(kernel: &ExpPolyFn, eta: f64, times: &[f64]) -> Result<Vec<f64>> {
    let r = ModeResolvent::new(kernel, eta)?;
    Ok(times.iter().map(|&t| r.eval(t)).collect())
}
