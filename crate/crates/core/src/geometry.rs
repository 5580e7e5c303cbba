//! Space-time observation sets `Q ⊂ [0,T]×(0,1)` as boolean rasters, and
//! the slice functionals evaluated on them.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::expoly::ExpPolyFn;
use crate::quad::{gauss_fixed, gauss_legendre};

/// A raster over `[0,T]×[0,1]` with `n_t` time cells and `n_x` space
/// cells. A cell belongs to `Q` iff its midpoint does.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    horizon: f64,
    n_t: usize,
    n_x: usize,
    /// `cells[x * n_t + t]`
    cells: Vec<bool>,
    provenance: String,
}

/// Header of the text mask format.
pub const MASK_MAGIC: &str = "MEMFLOW-MASK";

impl Mask {
    /// Builds a mask from a membership test on cell midpoints `(t, x)`.
    pub fn from_fn<F: Fn(f64, f64) -> bool>(horizon: f64, n_t: usize, n_x: usize, provenance: &str, inside: F) -> Result<Self> {
        if !(horizon > 0.0) || n_t == 0 || n_x == 0 {
            return Err(invalid("mask needs a positive horizon and nonzero dimensions"));
        }
        let dt = horizon / n_t as f64;
        let dx = 1.0 / n_x as f64;
        let mut cells = Vec::with_capacity(n_t * n_x);
        for ix in 0..n_x {
            let x = (ix as f64 + 0.5) * dx;
            for it in 0..n_t {
                cells.push(inside((it as f64 + 0.5) * dt, x));
            }
        }
        Ok(Self { horizon, n_t, n_x, cells, provenance: provenance.to_string() })
    }

    /// The empty set; the only constructor allowed to produce no cells.
    pub fn empty(horizon: f64, n_t: usize, n_x: usize) -> Result<Self> {
        Self::from_fn(horizon, n_t, n_x, "empty", |_, _| false)
    }

    pub fn from_cells(horizon: f64, n_t: usize, n_x: usize, cells: Vec<bool>, provenance: &str) -> Result<Self> {
        if cells.len() != n_t * n_x {
            return Err(Error::Dimension { expected: n_t * n_x, found: cells.len() });
        }
        let mut m = Self::empty(horizon, n_t, n_x)?;
        m.cells = cells;
        m.provenance = provenance.to_string();
        Ok(m)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_t as f64
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.n_x as f64
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn get(&self, t_cell: usize, x_cell: usize) -> bool {
        self.cells[x_cell * self.n_t + t_cell]
    }

    pub fn set(&mut self, t_cell: usize, x_cell: usize, value: bool) {
        self.cells[x_cell * self.n_t + t_cell] = value;
    }

    pub fn column(&self, x_cell: usize) -> &[bool] {
        &self.cells[x_cell * self.n_t..(x_cell + 1) * self.n_t]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Column containing the spatial point `x`.
    pub fn x_cell_of(&self, x: f64) -> usize {
        ((x * self.n_x as f64) as usize).min(self.n_x - 1)
    }

    pub fn x_mid(&self, x_cell: usize) -> f64 {
        (x_cell as f64 + 0.5) * self.dx()
    }

    /// Cellwise union.
    pub fn union(&self, other: &Self) -> Result<Self> {
        if (self.n_t, self.n_x) != (other.n_t, other.n_x) {
            return Err(invalid("masks must share raster dimensions"));
        }
        let cells = self.cells.iter().zip(&other.cells).map(|(a, b)| *a || *b).collect();
        Self::from_cells(self.horizon, self.n_t, self.n_x, cells, "union")
    }

    /// Overlap length of time cell `t_cell` with `[s, t]`.
    fn cell_overlap(&self, t_cell: usize, s: f64, t: f64) -> f64 {
        let dt = self.dt();
        let a = t_cell as f64 * dt;
        let b = a + dt;
        (b.min(t) - a.max(s)).max(0.0)
    }

    fn cell_range(&self, s: f64, t: f64) -> core::ops::Range<usize> {
        let dt = self.dt();
        let lo = ((s / dt).floor().max(0.0) as usize).min(self.n_t);
        let hi = ((t / dt).ceil().max(0.0) as usize).min(self.n_t);
        lo..hi
    }

    /// Serializes to `MEMFLOW-MASK v1 n_t n_x T` followed by one `0`/`1`
    /// line of `n_t` characters per column.
    pub fn to_text(&self) -> String {
        let mut out = alloc::format!("{MASK_MAGIC} v1 {} {} {}\n", self.n_t, self.n_x, self.horizon);
        for ix in 0..self.n_x {
            out.extend(self.column(ix).iter().map(|&c| if c { '1' } else { '0' }));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let parse_err = |position: usize, message: &str| Error::Parse { position, message: message.to_string() };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| parse_err(0, "empty mask file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != MASK_MAGIC {
            return Err(parse_err(0, "expected header 'MEMFLOW-MASK v1 n_t n_x T'"));
        }
        if fields[1] != "v1" {
            return Err(parse_err(MASK_MAGIC.len() + 1, "unsupported mask version"));
        }
        let n_t: usize = fields[2].parse().map_err(|_| parse_err(0, "invalid n_t"))?;
        let n_x: usize = fields[3].parse().map_err(|_| parse_err(0, "invalid n_x"))?;
        let horizon: f64 = fields[4].parse().map_err(|_| parse_err(0, "invalid horizon"))?;
        let mut cells = Vec::with_capacity(n_t * n_x);
        let mut offset = header.len() + 1;
        for _ in 0..n_x {
            let line = lines.next().ok_or_else(|| parse_err(offset, "missing mask row"))?;
            if line.len() != n_t {
                return Err(parse_err(offset, "mask row has the wrong length"));
            }
            for (i, b) in line.bytes().enumerate() {
                match b {
                    b'0' => cells.push(false),
                    b'1' => cells.push(true),
                    _ => return Err(parse_err(offset + i, "mask cells must be '0' or '1'")),
                }
            }
            offset += line.len() + 1;
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(parse_err(offset, "trailing data after mask rows"));
        }
        Self::from_cells(horizon, n_t, n_x, cells, "file")
    }
}

/// `(t_lo, t_hi) × (x_lo, x_hi)`.
pub fn cylinder(horizon: f64, n_t: usize, n_x: usize, omega: (f64, f64), times: (f64, f64)) -> Result<Mask> {
    if omega.1 <= omega.0 || times.1 <= times.0 {
        return Err(invalid("cylinder needs a nonempty spatial and temporal range"));
    }
    let m = Mask::from_fn(horizon, n_t, n_x, "cylinder", |t, x| x > omega.0 && x < omega.1 && t > times.0 && t < times.1)?;
    if m.is_empty() {
        return Err(invalid("cylinder contains no raster cell"));
    }
    Ok(m)
}

/// `{f_ε(x) < t < f_ε(x) + ε}` with the tent `f_ε(x) = 1 − |2x − 1|`.
pub fn zigzag(horizon: f64, n_t: usize, n_x: usize, eps: f64) -> Result<Mask> {
    if !(eps > 0.0) {
        return Err(invalid("zigzag width must be positive"));
    }
    Mask::from_fn(horizon, n_t, n_x, "zigzag", |t, x| {
        let f = if x < 0.5 { 2.0 * x } else { 2.0 - 2.0 * x };
        t > f && t < f + eps
    })
}

/// `{(t,x) : S < t < T, t ≥ T − |x − x0|^{1/3}}` with `x0` moved to the
/// nearest column midpoint, so that column is empty.
pub fn cusp(horizon: f64, n_t: usize, n_x: usize, x0: f64, start: f64) -> Result<Mask> {
    if !(0.0..=1.0).contains(&x0) || start < 0.0 || start >= horizon {
        return Err(invalid("cusp needs x0 in [0,1] and 0 <= S < T"));
    }
    let dx = 1.0 / n_x as f64;
    let col = ((x0 / dx) as usize).min(n_x.saturating_sub(1));
    let x0 = (col as f64 + 0.5) * dx;
    Mask::from_fn(horizon, n_t, n_x, "cusp", |t, x| t > start && t >= horizon - (x - x0).abs().cbrt())
}

/// `[0,T]×(0,1)` without the cylinder over `B(x*, r)`.
pub fn missing_ball(horizon: f64, n_t: usize, n_x: usize, center: f64, radius: f64) -> Result<Mask> {
    if !(radius > 0.0) {
        return Err(invalid("ball radius must be positive"));
    }
    Mask::from_fn(horizon, n_t, n_x, "missing_ball", |_, x| (x - center).abs() >= radius)
}

/// Union of `count` random rectangles, reproducible from `seed`.
pub fn random_rects(horizon: f64, n_t: usize, n_x: usize, seed: u64, count: usize) -> Result<Mask> {
    if count == 0 {
        return Err(invalid("need at least one rectangle"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rects: Vec<(f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            let w = rng.gen_range(0.05..0.4);
            let h = rng.gen_range(0.1..0.6) * horizon;
            let x = rng.gen_range(0.0..1.0 - w);
            let t = rng.gen_range(0.0..horizon - h);
            (t, t + h, x, x + w)
        })
        .collect();
    let mut m = Mask::from_fn(horizon, n_t, n_x, "random_rects", |t, x| {
        rects.iter().any(|&(t0, t1, x0, x1)| t >= t0 && t < t1 && x >= x0 && x < x1)
    })?;
    if m.is_empty() {
        // every rectangle is thinner than a cell; keep the first one's cell
        let (t0, _, x0, _) = rects[0];
        let it = ((t0 / m.dt()) as usize).min(n_t - 1);
        m.set(it, m.x_cell_of(x0), true);
    }
    Ok(m)
}

/// `|{t ∈ [S,T] : (t,x) ∈ Q}|` for one column, with boundary cells
/// counted by their overlap with `[S,T]`.
pub fn slice_measure(q: &Mask, x_cell: usize, s: f64, t: f64) -> f64 {
    let col = q.column(x_cell);
    // `+ 0.0` turns the empty sum's `-0.0` into `0.0`
    q.cell_range(s, t).filter(|&i| col[i]).map(|i| q.cell_overlap(i, s, t)).sum::<f64>() + 0.0
}

/// `ess-inf_x |Q_x ∩ [S,T]|`, the column minimum of [`slice_measure`].
pub fn moc_functional(q: &Mask, s: f64, t: f64) -> f64 {
    (0..q.n_x()).map(|ix| slice_measure(q, ix, s, t)).fold(f64::INFINITY, f64::min)
}

/// `inf_{x0} avg_{B(x0,r)∩(0,1)} |Q_x ∩ [0,T]|` with centers on the column
/// midpoints. A ball always contains at least its center column.
pub fn ball_average(q: &Mask, radius: f64, t: f64) -> f64 {
    let slices: Vec<f64> = (0..q.n_x()).map(|ix| slice_measure(q, ix, 0.0, t)).collect();
    let mut best = f64::INFINITY;
    for c in 0..q.n_x() {
        let x0 = q.x_mid(c);
        let (mut sum, mut n, mut low) = (0.0, 0usize, f64::INFINITY);
        for (ix, &v) in slices.iter().enumerate() {
            if ix == c || (q.x_mid(ix) - x0).abs() < radius {
                sum += v;
                n += 1;
                low = low.min(v);
            }
        }
        // rounding in the sum can put the mean an ulp below its smallest term
        best = best.min((sum / n as f64).max(low));
    }
    best
}

/// `∫_S^T χ_Q(t,x) |M(t)| dt` for one column, by 8-point Gauss rules on
/// each cell.
pub fn weighted_slice(q: &Mask, kernel: &ExpPolyFn, s: f64, t: f64, x_cell: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(8);
    let dt = q.dt();
    let col = q.column(x_cell);
    q.cell_range(s, t)
        .filter(|&i| col[i])
        .map(|i| {
            let a = (i as f64 * dt).max(s);
            let b = ((i + 1) as f64 * dt).min(t);
            if b <= a {
                0.0
            } else {
                gauss_fixed(|u| kernel.eval(u).abs(), a, b, &nodes, &weights)
            }
        })
        .sum()
}

/// A zero of an exponential polynomial and its order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Zero {
    pub at: f64,
    pub order: u32,
}

/// Outcome of checking `∫χ_Q|f| ≥ C (∫χ_Q)^{β+1}` on every column.
#[derive(Clone, Debug, PartialEq)]
pub struct LowerBoundCheck {
    pub c: f64,
    pub beta: u32,
    pub zeros: Vec<Zero>,
    pub verified: bool,
    pub violations: usize,
    /// `min_x ∫χ_Q|f| / (C (∫χ_Q)^{β+1})` over columns with `∫χ_Q > 0`.
    pub worst_ratio: f64,
}

const MAX_ZERO_ORDER: u32 = 12;
/// Relative slack for quadrature rounding in the column comparison.
pub const BOUND_ROUNDING: f64 = 1e-12;
const ZERO_SAMPLES: usize = 4096;

fn bisect(f: &ExpPolyFn, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f.eval(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f.eval(m);
        if fm == 0.0 {
            return m;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn sign_change_roots(f: &ExpPolyFn, s: f64, t: f64, out: &mut Vec<f64>) {
    let h = (t - s) / ZERO_SAMPLES as f64;
    let mut prev_t = s;
    let mut prev = f.eval(s);
    for i in 1..=ZERO_SAMPLES {
        let x = if i == ZERO_SAMPLES { t } else { s + h * i as f64 };
        let v = f.eval(x);
        if v == 0.0 {
            out.push(x);
        } else if prev != 0.0 && (v < 0.0) != (prev < 0.0) {
            out.push(bisect(f, prev_t, x));
        }
        prev_t = x;
        prev = v;
    }
}

/// Zeros of `f` on `[S,T]` with their orders: candidates are sign changes of
/// `f, f', …` and the endpoints. A candidate has order `k` when `f^{(k)}` is
/// the first derivative above `1e-9 · Σ_{j≤k} max|f^{(j)}|`.
pub fn isolate_zeros(f: &ExpPolyFn, s: f64, t: f64) -> Result<Vec<Zero>> {
    let derivs: Vec<ExpPolyFn> = (0..=MAX_ZERO_ORDER).map(|k| f.derivative(k)).collect();
    let mut scales = Vec::with_capacity(derivs.len());
    let mut acc = 0.0;
    for d in &derivs {
        acc += crate::kernel::sup_abs(d, 0.0, t);
        scales.push(acc.max(f64::MIN_POSITIVE));
    }
    let order_at = |at: f64| (0..derivs.len()).find(|&k| derivs[k].eval(at).abs() > 1e-9 * scales[k]);
    let mut candidates = alloc::vec![s, t];
    for d in &derivs[..MAX_ZERO_ORDER as usize] {
        sign_change_roots(d, s, t, &mut candidates);
    }
    candidates.sort_by(|a, b| a.total_cmp(b));
    let merge = 1e-9 * (t - s).max(1.0);
    let mut zeros: Vec<Zero> = Vec::new();
    for c in candidates {
        let order = order_at(c).ok_or(Error::RootIsolation { lo: c, hi: c })? as u32;
        if order == 0 {
            continue;
        }
        match zeros.last_mut() {
            Some(z) if (c - z.at).abs() < merge => {
                if order > z.order {
                    *z = Zero { at: c, order };
                }
            }
            _ => zeros.push(Zero { at: c, order }),
        }
    }
    Ok(zeros)
}

/// The constant `C` and exponent `β` with `∫_S^T χ_Q|f| ≥ C(∫_S^T χ_Q)^{β+1}`
/// following the zero-counting argument, then checked on every column.
pub fn analytic_lower_bound_check(q: &Mask, f: &ExpPolyFn, s: f64, t: f64) -> Result<LowerBoundCheck> {
    if !(s < t) {
        return Err(invalid("need S < T"));
    }
    let zeros = isolate_zeros(f, s, t)?;
    let beta = zeros.iter().map(|z| z.order).max().unwrap_or(0);
    let dist = |u: f64| zeros.iter().map(|z| (u - z.at).abs()).fold(f64::INFINITY, f64::min);
    let mut c2 = f64::INFINITY;
    for i in 0..=ZERO_SAMPLES {
        let u = s + (t - s) * i as f64 / ZERO_SAMPLES as f64;
        let d = if zeros.is_empty() { 1.0 } else { dist(u) };
        if d < 1e-6 {
            continue;
        }
        c2 = c2.min(f.eval(u).abs() / d.powi(beta as i32));
    }
    for z in zeros.iter().filter(|z| z.order == beta) {
        let limit = f.derivative(beta).eval(z.at).abs() / crate::expoly::factorial(beta);
        c2 = c2.min(limit);
    }
    if !(c2 > 0.0) || !c2.is_finite() {
        return Err(invalid("function vanishes identically on [S,T]"));
    }
    let m = zeros.len().max(1) as f64;
    let c = 2.0 * c2 / (beta as f64 + 1.0) * (1.0 / (2.0 * m)).powi(beta as i32 + 1);
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for ix in 0..q.n_x() {
        let measure = slice_measure(q, ix, s, t);
        if measure <= 0.0 {
            continue;
        }
        let lhs = weighted_slice(q, f, s, t, ix);
        let rhs = c * measure.powi(beta as i32 + 1);
        worst = worst.min(lhs / rhs);
        // the bound is sharp for functions without zeros
        if lhs < rhs * (1.0 - BOUND_ROUNDING) {
            violations += 1;
        }
    }
    Ok(LowerBoundCheck { c, beta, zeros, verified: violations == 0, violations, worst_ratio: worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expoly::parse;

    #[test]
    fn full_cylinder_measures() {
        let q = cylinder(1.0, 40, 16, (0.0, 1.0), (0.0, 1.0)).unwrap();
        assert_eq!(q.count(), 640);
        assert!((moc_functional(&q, 0.2, 0.9) - 0.7).abs() < 1e-14);
        assert!((ball_average(&q, 0.1, 1.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zigzag_columns() {
        let eps = 0.25;
        let q = zigzag(1.5, 600, 64, eps).unwrap();
        let dt = q.dt();
        for ix in 0..64 {
            assert!((slice_measure(&q, ix, 0.0, 1.5) - eps).abs() <= dt + 1e-12);
        }
        assert!((moc_functional(&q, 0.0, 1.0 + 2.0 * eps) - eps).abs() <= dt + 1e-12);
    }

    #[test]
    fn cusp_has_empty_column() {
        let q = cusp(1.0, 200, 64, 0.5, 0.0).unwrap();
        assert_eq!(slice_measure(&q, q.x_cell_of(0.5), 0.0, 1.0), 0.0);
        assert!(moc_functional(&q, 0.0, 1.0) <= q.dt());
    }

    #[test]
    fn empty_column_and_weight_one() {
        let q = missing_ball(1.0, 50, 20, 0.5, 0.1).unwrap();
        assert_eq!(slice_measure(&q, 10, 0.0, 1.0), 0.0);
        assert_eq!(weighted_slice(&q, &ExpPolyFn::constant(1.0), 0.0, 1.0, 10), 0.0);
        let w = weighted_slice(&q, &ExpPolyFn::constant(1.0), 0.1, 0.85, 2);
        assert!((w - slice_measure(&q, 2, 0.1, 0.85)).abs() < 1e-14);
    }

    #[test]
    fn text_round_trip() {
        let q = random_rects(2.0, 17, 9, 7, 3).unwrap();
        let text = q.to_text();
        assert!(text.starts_with("MEMFLOW-MASK v1 17 9 2\n"));
        let back = Mask::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        assert!(matches!(Mask::from_text("MEMFLOW-MASK v1 2 1 1\n0x\n"), Err(Error::Parse { position: 23, .. })));
    }

    #[test]
    fn zero_orders() {
        let z = isolate_zeros(&parse("t - 0.5").unwrap(), 0.0, 1.0).unwrap();
        assert_eq!(z.len(), 1);
        assert!((z[0].at - 0.5).abs() < 1e-12 && z[0].order == 1);
        let z = isolate_zeros(&parse("t^2 - 2*t + 1").unwrap(), 0.0, 2.0).unwrap();
        assert_eq!(z.len(), 1);
        assert_eq!(z[0].order, 2);
        let z = isolate_zeros(&ExpPolyFn::sin(1.0), 0.0, 2.0 * core::f64::consts::PI).unwrap();
        assert_eq!(z.len(), 3);
    }

    #[test]
    fn bound_constant_for_constant_function() {
        let q = random_rects(1.0, 64, 32, 3, 5).unwrap();
        let r = analytic_lower_bound_check(&q, &ExpPolyFn::constant(1.0), 0.0, 1.0).unwrap();
        assert_eq!(r.beta, 0);
        assert!(r.c <= 1.0 && r.verified);
    }
}
