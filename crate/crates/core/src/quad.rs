//! One-dimensional quadrature: globally adaptive Gauss–Kronrod (7/15) and
//! fixed-order Gauss–Legendre rules.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Ordering;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

/// Result of an adaptive integration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

/// Tolerances and limits for [`integrate`].
#[derive(Clone, Copy, Debug)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subintervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { abs_tol: 1e-13, rel_tol: 1e-11, max_subintervals: 2000 }
    }
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (k, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kronrod += w * pair;
        if k % 2 == 1 {
            gauss += WG[k / 2] * pair;
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    (value, error)
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Integrates `f` over `[a, b]`, bisecting the interval with the largest
/// error estimate until the global estimate meets the tolerance.
pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<Integral> {
    integrate_points(f, &[a, b], opts)
}

/// Like [`integrate`] over `[points[0], points[last]]`, seeding the
/// subdivision with the given increasing breakpoints. Breakpoints should
/// bracket features such as boundary layers that a single rule would miss.
pub fn integrate_points<F: FnMut(f64) -> f64>(mut f: F, points: &[f64], opts: QuadOptions) -> Result<Integral> {
    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    let mut evaluations = 0;
    for w in points.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let (value, error) = gk15(&mut f, w[0], w[1]);
        heap.push(Segment { a: w[0], b: w[1], value, error });
        total += value;
        total_err += error;
        evaluations += 15;
    }
    if heap.is_empty() {
        return Ok(Integral { value: 0.0, error: 0.0, evaluations: 0 });
    }
    loop {
        let tol = opts.abs_tol.max(opts.rel_tol * total.abs());
        if total_err <= tol {
            break;
        }
        if heap.len() >= opts.max_subintervals {
            return Err(Error::Quadrature { achieved: total_err, requested: tol });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval exhausted at machine resolution
            return Err(Error::Quadrature { achieved: total_err, requested: tol });
        }
        let (v1, e1) = gk15(&mut f, worst.a, mid);
        let (v2, e2) = gk15(&mut f, mid, worst.b);
        evaluations += 30;
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Segment { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: worst.b, value: v2, error: e2 });
    }
    // re-sum to shed the drift of incremental updates
    let value = heap.iter().map(|s| s.value).sum();
    let error = heap.iter().map(|s| s.error).sum();
    Ok(Integral { value, error, evaluations })
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut nodes = alloc::vec![0.0; n];
    let mut weights = alloc::vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (core::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let pn = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (x * pn - p0) / (x * x - 1.0);
    (pn, dp)
}

/// Fixed Gauss–Legendre rule mapped onto `[a, b]`.
pub fn gauss_fixed<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, nodes: &[f64], weights: &[f64]) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    nodes.iter().zip(weights).map(|(&x, &w)| w * f(c + h * x)).sum::<f64>() * h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let r = integrate(|x| x * x * x - 2.0 * x, 0.0, 2.0, QuadOptions::default()).unwrap();
        assert!((r.value - 0.0).abs() < 1e-14);
    }

    #[test]
    fn boundary_layer() {
        let eta = 1.0e4;
        let breaks = [0.0, 1e-4, 1e-3, 1e-2, 1.0];
        let r = integrate_points(|x| (-eta * x).exp(), &breaks, QuadOptions::default()).unwrap();
        let exact = (1.0 - (-eta).exp()) / eta;
        assert!((r.value - exact).abs() < 1e-14);
    }

    #[test]
    fn gauss_legendre_integrates_degree_2n_minus_1() {
        let (x, w) = gauss_legendre(5);
        let v = gauss_fixed(|t| t.powi(9) + t.powi(8), -1.0, 1.0, &x, &w);
        assert!((v - 2.0 / 9.0).abs() < 1e-14);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn empty_interval() {
        let r = integrate(|_| 1.0, 1.0, 1.0, QuadOptions::default()).unwrap();
        assert_eq!(r.value, 0.0);
    }
}
