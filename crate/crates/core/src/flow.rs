//! The memory flow `Φ(t)` mode by mode: a trapezoidal Volterra solver, the
//! kernel representation `e^{−ηt} + ∫ K_M(t,τ) e^{−ητ} dτ`, and the
//! asymptotic decomposition `P_N + W_N + R_N η^{−N−1}`.

use alloc::string::String;
use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::expoly::{binomial, ExpPolyFn};
use crate::kernel::{h_coeff, kernel_c_norm, km_partial, p_coeff, BivariateKernel};
use crate::quad::{integrate_points, QuadOptions};
use crate::resolvent::resolvent_mode;
use crate::spectral::{EigenBasis, SpectralVec};

/// Default truncation of the `K_M` series.
pub const DEFAULT_SERIES_TERMS: u32 = 40;
/// Default decomposition order.
pub const DEFAULT_ORDER: u32 = 4;
/// Largest admissible `η Δt` for the Volterra solver.
pub const MAX_STIFFNESS: f64 = 2.0;
/// Tail tolerance applied to the truncated `K_M` series.
pub const SERIES_TOL: f64 = 1e-10;

/// Uniform grid `t_i = i Δt`, `i = 0..=steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end > 0.0) || steps == 0 {
            return Err(invalid("time grid needs a positive horizon and at least one step"));
        }
        Ok(Self { dt: t_end / steps as f64, steps })
    }

    pub fn end(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        self.dt * i as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }

    /// The same horizon with every step split into `factor` sub-steps.
    pub fn refine(&self, factor: usize) -> Self {
        Self { dt: self.dt / factor as f64, steps: self.steps * factor }
    }
}

/// Running sums `Σ_k w_k (t_n−t_k)^p e^{λ(t_n−t_k)} y_k` for every
/// exponential mode of the kernel, advanced in `O(1)` per step.
struct MemorySums {
    modes: Vec<(Complex64, u32, Complex64)>,
    decay: Vec<Complex64>,
    sums: Vec<Vec<Complex64>>,
    binom: Vec<Vec<f64>>,
    dt_powers: Vec<f64>,
    m0: f64,
}

impl MemorySums {
    fn new(kernel: &ExpPolyFn, dt: f64) -> Self {
        let modes = kernel.complex_form();
        let max_p = modes.iter().map(|m| m.1).max().unwrap_or(0);
        let decay = modes.iter().map(|&(_, _, lambda)| (lambda * dt).exp()).collect();
        let sums = modes.iter().map(|&(_, m, _)| alloc::vec![Complex64::new(0.0, 0.0); m as usize + 1]).collect();
        let binom = (0..=max_p).map(|p| (0..=p).map(|q| binomial(p, q)).collect()).collect();
        let dt_powers = (0..=max_p as i32).map(|k| dt.powi(k)).collect();
        Self { modes, decay, sums, binom, dt_powers, m0: kernel.eval(0.0) }
    }

    /// Starts the sums at `y_0` with trapezoid end weight `½`.
    fn start(&mut self, y0: f64) {
        for s in &mut self.sums {
            s.iter_mut().for_each(|x| *x = Complex64::new(0.0, 0.0));
            s[0] = Complex64::new(0.5 * y0, 0.0);
        }
    }

    /// Shifts every sum forward by one step without adding the new sample.
    #[allow(clippy::needless_range_loop)]
    fn shift(&mut self) {
        for ((sums, decay), &(_, m, _)) in self.sums.iter_mut().zip(&self.decay).zip(&self.modes) {
            for p in (0..=m as usize).rev() {
                let mut acc = Complex64::new(0.0, 0.0);
                for q in 0..=p {
                    acc += sums[q] * (self.binom[p][q] * self.dt_powers[p - q]);
                }
                sums[p] = acc * decay;
            }
        }
    }

    /// `(1/Δt)·` trapezoid memory integral at the current step, excluding the
    /// contribution of the current sample.
    fn integral_without_last(&self) -> f64 {
        self.sums.iter().zip(&self.modes).map(|(s, &(c, m, _))| (c * s[m as usize]).re).sum()
    }

    /// Adds `½ y` to the `p = 0` sums: a new sample enters with end weight
    /// `½` and is raised to `1` one step later.
    fn add_half(&mut self, y: f64) {
        for s in &mut self.sums {
            s[0] += 0.5 * y;
        }
    }
}

/// Trapezoidal solution of `y' = −η y − (M∗y) + g` with `y(0) = y0`, where
/// `forcing[n]` is the average of `g` over step `n`.
pub fn volterra_mode(kernel: &ExpPolyFn, eta: f64, grid: &TimeGrid, y0: f64, forcing: Option<&[f64]>) -> Result<Vec<f64>> {
    let dt = grid.dt;
    if eta * dt > MAX_STIFFNESS {
        return Err(Error::StepTooLarge { eta, dt });
    }
    if let Some(f) = forcing {
        if f.len() != grid.steps {
            return Err(Error::Dimension { expected: grid.steps, found: f.len() });
        }
    }
    let mut mem = MemorySums::new(kernel, dt);
    mem.start(y0);
    let mut out = Vec::with_capacity(grid.steps + 1);
    out.push(y0);
    let lhs = 1.0 + 0.5 * dt * eta + 0.25 * dt * dt * mem.m0;
    let mut y = y0;
    // memory integral at t_n, already complete
    let mut i_n = 0.0;
    for n in 0..grid.steps {
        if n > 0 {
            mem.add_half(y);
        }
        mem.shift();
        let known = dt * mem.integral_without_last();
        let g = forcing.map_or(0.0, |f| f[n]);
        let rhs = y * (1.0 - 0.5 * dt * eta) - 0.5 * dt * (i_n + known) + dt * g;
        let next = rhs / lhs;
        i_n = known + 0.5 * dt * mem.m0 * next;
        mem.add_half(next);
        y = next;
        out.push(y);
    }
    Ok(out)
}

/// Response of the forced scheme with `y0 = 0` to unit forcing on step 0.
/// The scheme is shift invariant, so forcing on step `k` produces the same
/// samples delayed by `k` steps.
pub fn volterra_impulse(kernel: &ExpPolyFn, eta: f64, grid: &TimeGrid) -> Result<Vec<f64>> {
    let mut forcing = alloc::vec![0.0; grid.steps];
    forcing[0] = 1.0;
    volterra_mode(kernel, eta, grid, 0.0, Some(&forcing))
}

fn layer_breaks(eta: f64, t: f64) -> Vec<f64> {
    let mut pts = alloc::vec![0.0];
    for k in [1.0, 4.0, 16.0, 64.0] {
        let s = k / eta;
        if s < t {
            pts.push(s);
        }
    }
    pts.push(t);
    pts
}

fn quad_opts() -> QuadOptions {
    QuadOptions { abs_tol: 1e-14, rel_tol: 1e-12, max_subintervals: 4000 }
}

/// `e^{−ηt} + ∫₀ᵗ K_M(t,τ) e^{−ητ} dτ` with a prebuilt `K_M` series.
pub fn kernel_rep_with(series: &BivariateKernel, eta: f64, t: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(invalid("time must be nonnegative"));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    let tail = series.tail_bound(t, t);
    if tail > SERIES_TOL {
        return Err(Error::Truncation { bound: tail, tolerance: SERIES_TOL });
    }
    let r = integrate_points(|tau| series.eval(t, tau) * (-eta * tau).exp(), &layer_breaks(eta, t), quad_opts())?;
    Ok((-eta * t).exp() + r.value)
}

/// Kernel representation of one mode with `J_max` series terms.
pub fn kernel_rep_mode(kernel: &ExpPolyFn, eta: f64, t: f64, series_terms: u32) -> Result<f64> {
    let series = km_partial(kernel, 0, series_terms)?;
    kernel_rep_with(&series, eta, t)
}

/// The pieces of the order-`N` decomposition of one mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecompositionParts {
    pub order: u32,
    /// `e^{−ηt}(1 + Σ_{l<N} p_l(t) η^{−l−1})`
    pub p_part: f64,
    /// `Σ_{l<N} h_l(t) η^{−l−1}`
    pub w_part: f64,
    /// `R_N(t,η) η^{−N−1}`
    pub remainder: f64,
    pub sum: f64,
}

/// Precomputed coefficient functions for decompositions of fixed order.
#[derive(Clone, Debug)]
pub struct Decomposition {
    order: u32,
    h: Vec<ExpPolyFn>,
    p: Vec<ExpPolyFn>,
    series: BivariateKernel,
}

impl Decomposition {
    pub fn new(kernel: &ExpPolyFn, order: u32, series_terms: u32) -> Result<Self> {
        if order < 2 {
            return Err(invalid("decomposition order must be at least 2"));
        }
        let h = (0..order).map(|l| h_coeff(kernel, l)).collect();
        let p = (0..order).map(|l| p_coeff(kernel, l)).collect();
        let series = km_partial(kernel, order, series_terms)?;
        Ok(Self { order, h, p, series })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    /// `h_l` for `l < N`.
    pub fn h(&self, l: usize) -> &ExpPolyFn {
        &self.h[l]
    }

    /// `p_l` for `l < N`.
    pub fn p(&self, l: usize) -> &ExpPolyFn {
        &self.p[l]
    }

    /// `R_N(t,η) = ∫₀ᵗ η e^{−ηs} ∂_s^N K_M(t,s) ds`.
    pub fn remainder_rn(&self, eta: f64, t: f64) -> Result<f64> {
        if t <= 0.0 {
            return Ok(0.0);
        }
        let tail = self.series.tail_bound(t, t);
        if tail > SERIES_TOL {
            return Err(Error::Truncation { bound: tail, tolerance: SERIES_TOL });
        }
        let r = integrate_points(|s| eta * (-eta * s).exp() * self.series.eval(t, s), &layer_breaks(eta, t), quad_opts())?;
        Ok(r.value)
    }

    pub fn parts(&self, eta: f64, t: f64) -> Result<DecompositionParts> {
        if t <= 0.0 {
            return Err(invalid("decomposition is evaluated for t > 0 only"));
        }
        let mut poly = 1.0;
        let mut w = 0.0;
        let mut scale = 1.0 / eta;
        for l in 0..self.order as usize {
            poly += self.p[l].eval(t) * scale;
            w += self.h[l].eval(t) * scale;
            scale /= eta;
        }
        let p_part = (-eta * t).exp() * poly;
        let remainder = self.remainder_rn(eta, t)? * scale;
        Ok(DecompositionParts { order: self.order, p_part, w_part: w, remainder, sum: p_part + w + remainder })
    }
}

pub fn decomposition_mode(kernel: &ExpPolyFn, eta: f64, t: f64, order: u32) -> Result<DecompositionParts> {
    Decomposition::new(kernel, order, DEFAULT_SERIES_TERMS)?.parts(eta, t)
}

pub fn remainder_rn_mode(kernel: &ExpPolyFn, eta: f64, t: f64, order: u32) -> Result<f64> {
    if order < 2 {
        return Err(invalid("decomposition order must be at least 2"));
    }
    if t <= 0.0 {
        return Ok(0.0);
    }
    let series = km_partial(kernel, order, DEFAULT_SERIES_TERMS)?;
    Decomposition { order, h: Vec::new(), p: Vec::new(), series }.remainder_rn(eta, t)
}

/// `e^t {exp[N(1+t) Σ_{j≤N} max|M^{(j)}|] − 1}`.
pub fn remainder_bound(kernel: &ExpPolyFn, order: u32, t: f64) -> f64 {
    let c = kernel_c_norm(kernel, order, t);
    t.exp() * ((order as f64 * (1.0 + t) * c).exp() - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowMethod {
    Volterra,
    KernelRep,
    Decomposition(u32),
    Resolvent,
}

impl FlowMethod {
    pub fn label(&self) -> String {
        match self {
            FlowMethod::Volterra => String::from("volterra"),
            FlowMethod::KernelRep => String::from("kernel_rep"),
            FlowMethod::Decomposition(n) => alloc::format!("decomposition({n})"),
            FlowMethod::Resolvent => String::from("resolvent"),
        }
    }
}

/// Propagator samples `φ[j][i]` for every mode on a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowTable {
    eigenvalues: Vec<f64>,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    method: FlowMethod,
}

impl FlowTable {
    /// Assembles a table from per-mode rows, e.g. computed in parallel.
    pub fn from_rows(eigenvalues: Vec<f64>, times: Vec<f64>, values: Vec<Vec<f64>>, method: FlowMethod) -> Result<Self> {
        if values.len() != eigenvalues.len() {
            return Err(Error::Dimension { expected: eigenvalues.len(), found: values.len() });
        }
        if let Some(row) = values.iter().find(|r| r.len() != times.len()) {
            return Err(Error::Dimension { expected: times.len(), found: row.len() });
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("flow table times must be strictly increasing"));
        }
        Ok(Self { eigenvalues, times, values, method })
    }

    pub fn volterra(kernel: &ExpPolyFn, basis: &EigenBasis, grid: &TimeGrid) -> Result<Self> {
        let values = basis.eigenvalues().iter().map(|&eta| volterra_mode(kernel, eta, grid, 1.0, None)).collect::<Result<Vec<_>>>()?;
        Self::from_rows(basis.eigenvalues().to_vec(), grid.times(), values, FlowMethod::Volterra)
    }

    pub fn kernel_rep(kernel: &ExpPolyFn, basis: &EigenBasis, times: &[f64], series_terms: u32) -> Result<Self> {
        let series = km_partial(kernel, 0, series_terms)?;
        let values = basis
            .eigenvalues()
            .iter()
            .map(|&eta| times.iter().map(|&t| kernel_rep_with(&series, eta, t)).collect())
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(basis.eigenvalues().to_vec(), times.to_vec(), values, FlowMethod::KernelRep)
    }

    /// Decomposition sums; `t = 0` uses `Φ(0) = Id`.
    pub fn decomposition(kernel: &ExpPolyFn, basis: &EigenBasis, times: &[f64], order: u32, series_terms: u32) -> Result<Self> {
        let dec = Decomposition::new(kernel, order, series_terms)?;
        let values = basis
            .eigenvalues()
            .iter()
            .map(|&eta| times.iter().map(|&t| if t == 0.0 { Ok(1.0) } else { dec.parts(eta, t).map(|p| p.sum) }).collect())
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(basis.eigenvalues().to_vec(), times.to_vec(), values, FlowMethod::Decomposition(order))
    }

    /// Closed-form residue sums at arbitrary times.
    pub fn resolvent(kernel: &ExpPolyFn, basis: &EigenBasis, times: &[f64]) -> Result<Self> {
        let values = basis.eigenvalues().iter().map(|&eta| resolvent_mode(kernel, eta, times)).collect::<Result<Vec<_>>>()?;
        Self::from_rows(basis.eigenvalues().to_vec(), times.to_vec(), values, FlowMethod::Resolvent)
    }

    pub fn method(&self) -> FlowMethod {
        self.method
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn modes(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j]
    }

    pub fn value(&self, j: usize, i: usize) -> f64 {
        self.values[j][i]
    }

    /// `Φ(t_i) y0`.
    pub fn apply(&self, i: usize, y0: &SpectralVec) -> Result<SpectralVec> {
        if y0.len() != self.modes() {
            return Err(Error::Dimension { expected: self.modes(), found: y0.len() });
        }
        let coeffs = y0.coeffs.iter().zip(&self.values).map(|(a, row)| a * row[i]).collect();
        Ok(SpectralVec { coeffs, s: y0.s })
    }

    /// Rows `j, η_j, φ_j(t_0), …` under the header `j, eta_j, t_0, …`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("j, eta_j");
        for t in &self.times {
            out.push_str(&alloc::format!(", {t:e}"));
        }
        out.push('\n');
        for (j, (eta, row)) in self.eigenvalues.iter().zip(&self.values).enumerate() {
            out.push_str(&alloc::format!("{}, {eta:e}", j + 1));
            for v in row {
                out.push_str(&alloc::format!(", {v:e}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn flow_apply(table: &FlowTable, t_index: usize, y0: &SpectralVec) -> Result<SpectralVec> {
    table.apply(t_index, y0)
}

/// Modal forcing `⟨χ_Q u(t), e_j⟩`, constant on each of `cells` equal time
/// cells.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalForcing {
    /// `values[j][c]`
    pub values: Vec<Vec<f64>>,
}

impl ModalForcing {
    pub fn cells(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Per-step averages on a grid that refines the cells.
    pub fn step_averages(&self, j: usize, steps: usize) -> Result<Vec<f64>> {
        let cells = self.cells();
        if cells == 0 || !steps.is_multiple_of(cells) {
            return Err(invalid("time grid must refine the forcing cells"));
        }
        let sub = steps / cells;
        Ok(self.values[j].iter().flat_map(|&v| core::iter::repeat_n(v, sub)).collect())
    }
}

/// State trajectory `y[j][i]` of the controlled equation, with the
/// discrepancy between the direct and the Duhamel computation.
#[derive(Clone, Debug, PartialEq)]
pub struct ForcedTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub discrepancy: f64,
}

impl ForcedTrajectory {
    pub fn state(&self, i: usize) -> SpectralVec {
        SpectralVec::new(self.states.iter().map(|row| row[i]).collect(), 0.0)
    }

    pub fn final_state(&self) -> SpectralVec {
        self.state(self.times.len() - 1)
    }
}

/// Solves the controlled equation twice: directly with the forced Volterra
/// scheme, and as `Φ(t)y0 + ∫ Φ(t−s) g(s) ds` from the propagator samples
/// with the trapezoid rule in `s`. Fails if the two differ by more than
/// `tolerance` relative to the trajectory's size.
pub fn forced_solution(
    kernel: &ExpPolyFn,
    basis: &EigenBasis,
    y0: &SpectralVec,
    forcing: &ModalForcing,
    grid: &TimeGrid,
    tolerance: f64,
) -> Result<ForcedTrajectory> {
    if y0.len() != basis.len() {
        return Err(Error::Dimension { expected: basis.len(), found: y0.len() });
    }
    if forcing.values.len() != basis.len() {
        return Err(Error::Dimension { expected: basis.len(), found: forcing.values.len() });
    }
    let mut states = Vec::with_capacity(basis.len());
    let mut discrepancy = 0.0f64;
    let mut scale = 0.0f64;
    for (j, &eta) in basis.eigenvalues().iter().enumerate() {
        let g = forcing.step_averages(j, grid.steps)?;
        let direct = volterra_mode(kernel, eta, grid, y0.coeffs[j], Some(&g))?;
        let phi = volterra_mode(kernel, eta, grid, 1.0, None)?;
        for n in 0..=grid.steps {
            let mut duhamel = phi[n] * y0.coeffs[j];
            for (k, &gk) in g.iter().enumerate().take(n) {
                duhamel += gk * grid.dt * 0.5 * (phi[n - k] + phi[n - k - 1]);
            }
            discrepancy = discrepancy.max((duhamel - direct[n]).abs());
            scale = scale.max(direct[n].abs());
        }
        states.push(direct);
    }
    let relative = discrepancy / scale.max(f64::MIN_POSITIVE);
    if relative > tolerance {
        return Err(Error::Mismatch { what: "forced solution (direct vs Duhamel)", discrepancy: relative, tolerance });
    }
    Ok(ForcedTrajectory { times: grid.times(), states, discrepancy: relative })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expoly::parse;
    use core::f64::consts::PI;

    fn grid(t: f64, steps: usize) -> TimeGrid {
        TimeGrid::new(t, steps).unwrap()
    }

    #[test]
    fn pure_heat_mode() {
        let eta = PI * PI;
        let y = volterra_mode(&ExpPolyFn::zero(), eta, &grid(0.1, 1000), 1.0, None).unwrap();
        assert!((y[1000] - (-0.1 * eta).exp()).abs() < 1e-6);
    }

    #[test]
    fn initial_value_and_guard() {
        let m = ExpPolyFn::constant(1.0);
        assert_eq!(volterra_mode(&m, 10.0, &grid(1.0, 100), 1.0, None).unwrap()[0], 1.0);
        assert!(matches!(volterra_mode(&m, 1000.0, &grid(1.0, 100), 1.0, None), Err(Error::StepTooLarge { .. })));
    }

    #[test]
    fn memory_sums_match_direct_trapezoid() {
        // constant kernel: y' = -η y - ∫y has closed-form roots
        let eta = 3.0;
        let y = volterra_mode(&ExpPolyFn::constant(2.0), eta, &grid(1.0, 4000), 1.0, None).unwrap();
        // y'' + η y' + 2 y = 0, y(0)=1, y'(0)=-η
        let disc = (eta * eta - 8.0f64).sqrt();
        let (r1, r2) = (0.5 * (-eta + disc), 0.5 * (-eta - disc));
        let a = (-eta - r2) / (r1 - r2);
        let exact = a * r1.exp() + (1.0 - a) * r2.exp();
        assert!((y[4000] - exact).abs() < 1e-7);
    }

    #[test]
    fn kernel_rep_trivial_cases() {
        let m = parse("exp(-t)").unwrap();
        assert_eq!(kernel_rep_mode(&m, 10.0, 0.0, 40).unwrap(), 1.0);
        let v = kernel_rep_mode(&ExpPolyFn::zero(), 10.0, 0.3, 40).unwrap();
        assert!((v - (-3.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn leading_term_of_n2_decomposition() {
        let m = parse("exp(-t) + 2").unwrap();
        let dec = Decomposition::new(&m, 2, 40).unwrap();
        assert!(dec.h(0).is_zero());
        assert_eq!(dec.h(1), &m.scale(-1.0));
        let eta = 400.0;
        let parts = dec.parts(eta, 0.7).unwrap();
        assert!((parts.w_part + m.eval(0.7) / (eta * eta)).abs() < 1e-15);
    }

    #[test]
    fn three_methods_agree() {
        let m = ExpPolyFn::constant(1.0);
        let eta = PI * PI;
        let y = volterra_mode(&m, eta, &grid(0.5, 2000), 1.0, None).unwrap();
        let k = kernel_rep_mode(&m, eta, 0.5, 40).unwrap();
        let d = decomposition_mode(&m, eta, 0.5, 4).unwrap();
        assert!((y[2000] - k).abs() < 1e-6, "{} {}", y[2000], k);
        assert!((d.sum - k).abs() < 1e-9, "{} {}", d.sum, k);
    }

    #[test]
    fn remainder_vanishes_at_zero() {
        assert_eq!(remainder_rn_mode(&ExpPolyFn::constant(1.0), 10.0, 0.0, 2).unwrap(), 0.0);
    }

    #[test]
    fn table_apply_and_csv() {
        let basis = crate::spectral::interval_basis(2, 8).unwrap();
        let table = FlowTable::volterra(&parse("exp(-t)").unwrap(), &basis, &grid(0.1, 100)).unwrap();
        let y0 = SpectralVec::new(alloc::vec![1.0, -2.0], 0.0);
        assert_eq!(table.apply(0, &y0).unwrap(), y0);
        let csv = table.to_csv();
        assert!(csv.starts_with("j, eta_j, 0e0, 1e-3"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn forced_without_control_is_free_flow() {
        let basis = crate::spectral::interval_basis(3, 12).unwrap();
        let g = grid(0.5, 500);
        let y0 = SpectralVec::new(alloc::vec![1.0, 0.5, 0.25], 0.0);
        let forcing = ModalForcing { values: alloc::vec![alloc::vec![0.0; 5]; 3] };
        let traj = forced_solution(&ExpPolyFn::zero(), &basis, &y0, &forcing, &g, 1e-12).unwrap();
        let eta = basis.eta(0);
        assert!((traj.states[0][500] - volterra_mode(&ExpPolyFn::zero(), eta, &g, 1.0, None).unwrap()[500]).abs() < 1e-15);
    }
}
