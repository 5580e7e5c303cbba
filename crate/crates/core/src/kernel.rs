//! Coefficient functions of the flow decomposition and the bivariate kernel
//! `K_M(t,s) = Σ_{j≥1} (−s)^j / j! · (M∗⋯∗M)_j(t−s)`.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::expoly::{binomial, factorial, ExpPolyFn};

/// `h_l(t) = (−1)^l Σ_{j=0}^{l} C(l, l−j) · d^{l−j}/dt^{l−j} M^{∗j}(t)`.
pub fn h_coeff(kernel: &ExpPolyFn, l: u32) -> ExpPolyFn {
    if l == 0 {
        return ExpPolyFn::zero();
    }
    let powers = kernel.conv_powers(l);
    h_from_powers(&powers, l)
}

fn h_from_powers(powers: &[ExpPolyFn], l: u32) -> ExpPolyFn {
    let mut acc = ExpPolyFn::zero();
    for j in 1..=l {
        let d = powers[(j - 1) as usize].derivative(l - j);
        acc = acc.add(&d.scale(binomial(l, l - j)));
    }
    if l % 2 == 1 {
        acc.scale(-1.0)
    } else {
        acc
    }
}

/// `p_l(t) = −h_l(0) + (−1)^{l+1} Σ_{j,m ≥ 1, 2j−l−1 ≤ m ≤ j}
/// C(l, l−j+m) · (d^{l−j+m} M^{∗j})(0) · (−t)^m / m!`.
///
/// Under the summation constraints `j−1 ≤ l−j+m ≤ l`, so every binomial
/// index is in range.
pub fn p_coeff(kernel: &ExpPolyFn, l: u32) -> ExpPolyFn {
    let powers = kernel.conv_powers(l + 1);
    let h0 = if l == 0 { 0.0 } else { h_from_powers(&powers, l).eval(0.0) };
    let mut coeffs = alloc::vec![0.0; (l + 2) as usize];
    coeffs[0] = -h0;
    let outer = if l.is_multiple_of(2) { -1.0 } else { 1.0 };
    for j in 1..=(l + 1) {
        let lo = (2 * j).saturating_sub(l + 1).max(1);
        for m in lo..=j {
            let order = l + m - j;
            let value = powers[(j - 1) as usize].derivative(order).eval(0.0);
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            coeffs[m as usize] += outer * binomial(l, order) * value * sign / factorial(m);
        }
    }
    let terms =
        coeffs.iter().enumerate().map(|(m, &c)| crate::expoly::Term::new(c, m as u32, 0.0, 0.0, crate::expoly::Phase::Cos)).collect();
    ExpPolyFn::from_terms(terms)
}

/// `max_{[a,b]} |f|` by dense sampling and golden-section refinement of the
/// best sample's neighbourhood.
pub fn sup_abs(f: &ExpPolyFn, a: f64, b: f64) -> f64 {
    const SAMPLES: usize = 1024;
    if b <= a {
        return f.eval(a).abs();
    }
    let h = (b - a) / (SAMPLES - 1) as f64;
    let mut best = (0usize, f.eval(a).abs());
    for i in 1..SAMPLES {
        let v = f.eval(a + h * i as f64).abs();
        if v > best.1 {
            best = (i, v);
        }
    }
    let lo = a + h * best.0.saturating_sub(1) as f64;
    let hi = (a + h * (best.0 + 1) as f64).min(b);
    let refined = golden_max(|t| f.eval(t).abs(), lo, hi);
    best.1.max(refined)
}

fn golden_max<F: Fn(f64) -> f64>(g: F, mut lo: f64, mut hi: f64) -> f64 {
    let ratio = 0.5 * (5.0f64.sqrt() - 1.0);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut g1, mut g2) = (g(x1), g(x2));
    for _ in 0..80 {
        if g1 < g2 {
            lo = x1;
            x1 = x2;
            g1 = g2;
            x2 = lo + ratio * (hi - lo);
            g2 = g(x2);
        } else {
            hi = x2;
            x2 = x1;
            g2 = g1;
            x1 = hi - ratio * (hi - lo);
            g1 = g(x1);
        }
        if hi - lo < 1e-15 * (1.0 + hi.abs()) {
            break;
        }
    }
    g1.max(g2)
}

/// `Σ_{j≤N} max_{[0,t]} |M^{(j)}|`.
pub fn kernel_c_norm(kernel: &ExpPolyFn, order: u32, t: f64) -> f64 {
    (0..=order).map(|j| sup_abs(&kernel.derivative(j), 0.0, t)).sum()
}

/// Smallest `l ≥ 1` with `h_l(T) ≠ 0`, where zero means
/// `|h_l(T)| ≤ 1e-12 · kernel_c_norm(M, l, T)`.
pub fn first_nonzero_h_index(kernel: &ExpPolyFn, horizon: f64, max_index: u32) -> Result<u32> {
    if kernel.is_zero() {
        return Err(invalid("memory kernel is identically zero"));
    }
    let powers = kernel.conv_powers(max_index);
    for l in 1..=max_index {
        let value = h_from_powers(&powers, l).eval(horizon);
        let scale = kernel_c_norm(kernel, l, horizon).max(f64::MIN_POSITIVE);
        if value.abs() > 1e-12 * scale {
            return Ok(l);
        }
    }
    Err(invalid("no nonzero h_l(T) found below the search limit"))
}

/// Truncated series for `∂_s^N K_M(t,s)` on `t ≥ s ≥ 0`.
#[derive(Clone, Debug)]
pub struct BivariateKernel {
    order: u32,
    /// `derivs[j-1][d]` is the `d`-th derivative of the `j`-fold convolution power.
    derivs: Vec<Vec<ExpPolyFn>>,
}

/// Builds the `J_max`-term partial sum of `∂_s^N K_M`.
pub fn km_partial(kernel: &ExpPolyFn, order: u32, truncation: u32) -> Result<BivariateKernel> {
    if truncation < 1 {
        return Err(invalid("truncation order must be at least 1"));
    }
    let derivs = kernel.conv_powers(truncation).into_iter().map(|g| (0..=order).map(|d| g.derivative(d)).collect()).collect();
    Ok(BivariateKernel { order, derivs })
}

impl BivariateKernel {
    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn truncation(&self) -> u32 {
        self.derivs.len() as u32
    }

    /// `Σ_{j ≤ J} Σ_{k ≤ min(N,j)} C(N,k) (−1)^N (−s)^{j−k}/(j−k)! · g_j^{(N−k)}(t−s)`.
    pub fn eval(&self, t: f64, s: f64) -> f64 {
        let n = self.order;
        let sign_n = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
        let u = t - s;
        let mut total = 0.0;
        for (idx, derivs) in self.derivs.iter().enumerate() {
            let j = idx as u32 + 1;
            let mut term = 0.0;
            for k in 0..=n.min(j) {
                let p = j - k;
                let poly = (-s).powi(p as i32) / factorial(p);
                if poly == 0.0 {
                    continue;
                }
                term += binomial(n, k) * poly * derivs[(n - k) as usize].eval(u);
            }
            total += sign_n * term;
        }
        total
    }

    fn term_bound(&self, idx: usize, t: f64, s: f64) -> f64 {
        let n = self.order;
        let j = idx as u32 + 1;
        let u = t - s;
        (0..=n.min(j))
            .map(|k| {
                let p = j - k;
                binomial(n, k) * s.abs().powi(p as i32) / factorial(p) * self.derivs[idx][(n - k) as usize].abs_bound(u, false)
            })
            .sum()
    }

    /// Bound on the omitted terms `j > J`, extrapolated geometrically from
    /// the last two per-term bounds. Infinite when the bounds are not
    /// decreasing.
    pub fn tail_bound(&self, t: f64, s: f64) -> f64 {
        let len = self.derivs.len();
        let last = self.term_bound(len - 1, t, s);
        if last == 0.0 {
            return 0.0;
        }
        if len < 2 {
            return f64::INFINITY;
        }
        let prev = self.term_bound(len - 2, t, s);
        if prev == 0.0 {
            return f64::INFINITY;
        }
        let q = last / prev;
        if q >= 1.0 {
            return f64::INFINITY;
        }
        last * q / (1.0 - q)
    }

    /// [`Self::eval`] with a truncation check against `tolerance`.
    pub fn eval_checked(&self, t: f64, s: f64, tolerance: f64) -> Result<f64> {
        let bound = self.tail_bound(t, s);
        if bound > tolerance {
            return Err(Error::Truncation { bound, tolerance });
        }
        Ok(self.eval(t, s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_coefficients() {
        let m = ExpPolyFn::exp(-1.0);
        assert!(h_coeff(&m, 0).is_zero());
        assert_eq!(h_coeff(&m, 1), m.scale(-1.0));
        assert_eq!(p_coeff(&ExpPolyFn::constant(2.0), 0), ExpPolyFn::monomial(2.0, 1));
        assert!(p_coeff(&ExpPolyFn::sin(1.0), 0).is_zero());
    }

    #[test]
    fn p1_closed_form() {
        let m = crate::expoly::parse("exp(-t) + 2").unwrap();
        let (m0, dm0) = (m.eval(0.0), m.derivative(1).eval(0.0));
        let p1 = p_coeff(&m, 1);
        for t in [0.0, 0.3, 1.7] {
            let expected = m0 - dm0 * t + 0.5 * m0 * m0 * t * t;
            assert!((p1.eval(t) - expected).abs() < 1e-13);
        }
    }

    #[test]
    fn km_single_term_and_origin() {
        let c = 1.7;
        let k = km_partial(&ExpPolyFn::constant(c), 0, 1).unwrap();
        assert!((k.eval(2.0, 0.6) + 0.6 * c).abs() < 1e-15);
        let k = km_partial(&ExpPolyFn::sin(1.0), 0, 20).unwrap();
        assert_eq!(k.eval(1.3, 0.0), 0.0);
    }

    #[test]
    fn km_truncation_error_reported() {
        let k = km_partial(&ExpPolyFn::constant(1.0), 0, 2).unwrap();
        assert!(matches!(k.eval_checked(5.0, 4.0, 1e-12), Err(Error::Truncation { .. })));
        let k = km_partial(&ExpPolyFn::constant(1.0), 0, 30).unwrap();
        assert!(k.eval_checked(1.0, 0.5, 1e-12).is_ok());
    }

    #[test]
    fn c_norm_examples() {
        assert!((kernel_c_norm(&ExpPolyFn::constant(1.0), 2, 1.0) - 1.0).abs() < 1e-15);
        assert!((kernel_c_norm(&ExpPolyFn::exp(-1.0), 1, 2.0) - 2.0).abs() < 1e-15);
        assert!((kernel_c_norm(&ExpPolyFn::sin(1.0), 0, 3.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn first_nonzero_index() {
        assert_eq!(first_nonzero_h_index(&ExpPolyFn::exp(-1.0), 1.0, 8).unwrap(), 1);
        let m = crate::expoly::parse("sin(pi*t)").unwrap();
        assert_eq!(first_nonzero_h_index(&m, 1.0, 8).unwrap(), 2);
    }
}
