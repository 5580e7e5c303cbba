//! Inverse problems built on the observation operator: reconstruction of
//! initial data, minimal-norm interior controls, the memory correction of
//! reachable states and finite-dimensional duality checks.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::expoly::ExpPolyFn;
use crate::flow::{forced_solution, volterra_impulse, volterra_mode, ModalForcing, TimeGrid};
use crate::geometry::{moc_functional, Mask};
use crate::observability::{eigen_sorted, random_unit, ObsSetup};
use crate::spectral::{hs_norm, EigenBasis, SpectralVec};

/// Relative eigenvalue threshold below which a Gram direction counts as null.
pub const RANK_TOL: f64 = 1e-12;
/// Largest truncation handled by the dense solvers.
pub const MAX_DENSE_MODES: usize = 64;
/// Largest number of time cells handled by the dense solvers.
pub const MAX_TIME_CELLS: usize = 4096;
/// Allowed relative norm decrease in the null-space optimality check.
pub const OPTIMALITY_TOL: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Reconstruction

/// Masked samples `d(t_n, x_i)` on the nodes of an [`ObsSetup`], one row per
/// observation term. Points outside the mask carry no sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Observations {
    values: Vec<Vec<f64>>,
}

impl Observations {
    /// Noise-free data `χ_Q Φ(t_n) y0`.
    pub fn observe(setup: &ObsSetup, y0: &SpectralVec) -> Result<Self> {
        setup.check_len(y0)?;
        let basis = setup.basis();
        let values = setup
            .terms
            .iter()
            .map(|term| {
                setup.patterns[term.pattern]
                    .iter()
                    .map(|&i| (0..setup.modes()).map(|j| y0.coeffs[j] * setup.table.value(j, term.node) * basis.mode(j)[i]).sum())
                    .collect()
            })
            .collect();
        Ok(Self { values })
    }

    fn check(&self, setup: &ObsSetup) -> Result<()> {
        if self.values.len() != setup.terms.len()
            || self.values.iter().zip(&setup.terms).any(|(row, term)| row.len() != setup.patterns[term.pattern].len())
        {
            return Err(invalid("observations do not match the setup"));
        }
        Ok(())
    }

    /// Weighted `L²` norm on the observation nodes.
    pub fn norm(&self, setup: &ObsSetup) -> f64 {
        let w = setup.basis().weights();
        self.values
            .iter()
            .zip(&setup.terms)
            .map(|(row, term)| {
                let tw = term.weight * setup.t_pow(term.node, 2.0 * setup.alpha());
                tw * setup.patterns[term.pattern].iter().zip(row).map(|(&i, v)| w[i] * v * v).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Adds Gaussian noise rescaled to `relative · ‖d‖`; returns its norm.
    pub fn add_noise(&mut self, setup: &ObsSetup, relative: f64, seed: u64) -> Result<f64> {
        self.check(setup)?;
        if !(relative >= 0.0) {
            return Err(invalid("noise level must be nonnegative"));
        }
        let target = relative * self.norm(setup);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noise =
            Self { values: self.values.iter().map(|row| row.iter().map(|_| StandardNormal.sample(&mut rng)).collect()).collect() };
        let n = noise.norm(setup);
        if n > 0.0 {
            noise.values.iter_mut().flatten().for_each(|v| *v *= target / n);
        }
        for (row, extra) in self.values.iter_mut().zip(&noise.values) {
            for (v, e) in row.iter_mut().zip(extra) {
                *v += e;
            }
        }
        Ok(target)
    }

    /// `t, x, value` rows in node order.
    pub fn to_csv(&self, setup: &ObsSetup) -> String {
        let grid = setup.basis().grid();
        let mut out = String::from("t,x,value\n");
        for (row, term) in self.values.iter().zip(&setup.terms) {
            let t = setup.table.times()[term.node];
            for (&i, v) in setup.patterns[term.pattern].iter().zip(row) {
                let _ = writeln!(out, "{t:.17e},{:.17e},{v:.17e}", grid[i]);
            }
        }
        out
    }
}

/// How the Tikhonov parameter is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regularization {
    Fixed(f64),
    /// Raise `λ` tenfold until the residual reaches `0.9 · noise`.
    Discrepancy {
        noise: f64,
    },
}

#[derive(Clone, Debug)]
pub struct ReconstructionProblem<'a> {
    pub setup: &'a ObsSetup,
    pub data: &'a Observations,
    pub regularization: Regularization,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub y0: SpectralVec,
    pub lambda: f64,
    pub residual: f64,
    /// Relative error in the reference norm when the truth is known.
    pub rel_error: Option<f64>,
    pub sigma_min: f64,
    /// `λ` values tried by the discrepancy search.
    pub trials: usize,
}

fn misfit(setup: &ObsSetup, data: &Observations, y0: &SpectralVec) -> Result<f64> {
    let mut model = Observations::observe(setup, y0)?;
    for (row, d) in model.values.iter_mut().zip(&data.values) {
        for (v, e) in row.iter_mut().zip(d) {
            *v -= e;
        }
    }
    Ok(model.norm(setup))
}

/// Minimizes `‖χ_Q Φ(·)y0 − d‖² + λ‖y0‖²_{H^s}` by the normal equations in
/// the reference-sphere coordinates.
pub fn reconstruct_y0(problem: &ReconstructionProblem<'_>, truth: Option<&SpectralVec>) -> Result<Reconstruction> {
    let setup = problem.setup;
    let data = problem.data;
    data.check(setup)?;
    let j_max = setup.modes();
    if j_max > MAX_DENSE_MODES {
        return Err(invalid("reconstruction is limited to 64 modes"));
    }
    setup.has_forms()?;
    let gram = setup.gram_sphere();
    let (values, vectors) = eigen_sorted(gram.clone());
    let top = values.last().copied().unwrap_or(0.0);
    let sigma_min = values.first().copied().unwrap_or(0.0).max(0.0).sqrt();

    // right-hand side S Fᵀ W d
    let w = setup.basis().weights();
    let mut rhs = DVector::zeros(j_max);
    for (row, term) in data.values.iter().zip(&setup.terms) {
        let tw = term.weight * setup.t_pow(term.node, 2.0 * setup.alpha());
        for j in 0..j_max {
            let e = setup.basis().mode(j);
            let proj: f64 = setup.patterns[term.pattern].iter().zip(row).map(|(&i, v)| w[i] * e[i] * v).sum();
            rhs[j] += tw * setup.table.value(j, term.node) * setup.scale[j] * proj;
        }
    }

    let solve = |lambda: f64| -> Result<SpectralVec> {
        if lambda == 0.0 && !(values[0] > RANK_TOL * top) {
            let null_direction = setup.from_sphere(&vectors[0]).coeffs;
            return Err(Error::Singular { null_direction });
        }
        let mut m = gram.clone();
        for j in 0..j_max {
            m[(j, j)] += lambda;
        }
        let b = match Cholesky::new(m) {
            Some(ch) => ch.solve(&rhs),
            None => return Err(Error::Singular { null_direction: setup.from_sphere(&vectors[0]).coeffs }),
        };
        Ok(setup.from_sphere(b.as_slice()))
    };

    let (y0, lambda, trials) = match problem.regularization {
        Regularization::Fixed(lambda) => {
            if !(lambda >= 0.0) {
                return Err(invalid("regularization must be nonnegative"));
            }
            (solve(lambda)?, lambda, 1)
        }
        Regularization::Discrepancy { noise } => {
            if !(noise > 0.0) {
                return Err(invalid("discrepancy principle needs a positive noise level"));
            }
            let mut lambda = 1e-14 * top.max(f64::MIN_POSITIVE);
            let mut trials = 0;
            loop {
                trials += 1;
                let y = solve(lambda)?;
                if misfit(setup, data, &y)? >= 0.9 * noise || trials >= 40 {
                    break (y, lambda, trials);
                }
                lambda *= 10.0;
            }
        }
    };
    let residual = misfit(setup, data, &y0)?;
    let rel_error = match truth {
        Some(t) => {
            setup.check_len(t)?;
            let mut diff = y0.clone();
            diff.axpy(-1.0, t);
            Some(setup.ref_norm(&diff) / setup.ref_norm(t))
        }
        None => None,
    };
    Ok(Reconstruction { y0, lambda, residual, rel_error, sigma_min, trials })
}

// ---------------------------------------------------------------------------
// Controls

/// Piecewise-constant control on the mask raster; cells outside the mask
/// hold exact zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct Control {
    horizon: f64,
    n_t: usize,
    n_x: usize,
    /// `values[c * n_x + x]`
    values: Vec<f64>,
}

impl Control {
    pub fn zero(mask: &Mask) -> Self {
        Self { horizon: mask.horizon(), n_t: mask.n_t(), n_x: mask.n_x(), values: alloc::vec![0.0; mask.n_t() * mask.n_x()] }
    }

    /// Independent standard normal values on the mask cells.
    pub fn random(mask: &Mask, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = Self::zero(mask);
        for c in 0..mask.n_t() {
            for x in 0..mask.n_x() {
                if mask.get(c, x) {
                    u.values[c * mask.n_x() + x] = StandardNormal.sample(&mut rng);
                }
            }
        }
        u
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn value(&self, t_cell: usize, x_cell: usize) -> f64 {
        self.values[t_cell * self.n_x + x_cell]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn dt(&self) -> f64 {
        self.horizon / self.n_t as f64
    }

    fn check(&self, mask: &Mask) -> Result<()> {
        if (self.n_t, self.n_x) != (mask.n_t(), mask.n_x()) {
            return Err(invalid("control raster differs from the mask"));
        }
        Ok(())
    }

    /// `⟨u(t), e_j⟩` per time cell.
    pub fn modal_forcing(&self, basis: &EigenBasis) -> ModalForcing {
        let cells = SpatialCells::new(basis, self.n_x);
        let values = (0..basis.len())
            .map(|j| (0..self.n_t).map(|c| (0..self.n_x).map(|x| self.value(c, x) * cells.moment[j][x]).sum()).collect())
            .collect();
        ModalForcing { values }
    }

    /// `‖u(t)‖_{L²}` per time cell.
    pub fn cell_norms(&self, basis: &EigenBasis) -> Vec<f64> {
        let cells = SpatialCells::new(basis, self.n_x);
        (0..self.n_t).map(|c| (0..self.n_x).map(|x| cells.measure[x] * self.value(c, x).powi(2)).sum::<f64>().sqrt()).collect()
    }

    /// `‖u‖_{L²(0,T̂; L²)}`.
    pub fn l2_norm(&self, basis: &EigenBasis) -> f64 {
        let dt = self.dt();
        self.cell_norms(basis).iter().map(|n| dt * n * n).sum::<f64>().sqrt()
    }

    /// `sup_t (T̂ − t)^{−α} ‖u(t)‖_{L²}`, infinite if the last cell is active.
    pub fn weighted_sup(&self, basis: &EigenBasis, alpha: f64) -> f64 {
        let norms = self.cell_norms(basis);
        let dt = self.dt();
        let mut sup = 0.0f64;
        for (c, n) in norms.iter().enumerate() {
            if *n == 0.0 {
                continue;
            }
            let w = sup_weight(self.horizon, dt, c, alpha);
            sup = sup.max(w * n);
        }
        sup
    }

    /// `t_i, x_cell, u_value` rows for the cells of the mask.
    pub fn to_csv(&self, mask: &Mask) -> Result<String> {
        self.check(mask)?;
        let dt = self.dt();
        let mut out = String::from("t_i,x_cell,u_value\n");
        for c in 0..self.n_t {
            for x in 0..self.n_x {
                if mask.get(c, x) {
                    let _ = writeln!(out, "{:.17e},{x},{:.17e}", c as f64 * dt, self.value(c, x));
                }
            }
        }
        Ok(out)
    }
}

/// `sup` of `(T̂ − t)^{−α}` over time cell `c`.
fn sup_weight(horizon: f64, dt: f64, c: usize, alpha: f64) -> f64 {
    let gap = horizon - (c + 1) as f64 * dt;
    if gap <= 1e-12 * horizon {
        f64::INFINITY
    } else {
        gap.powf(-alpha)
    }
}

/// Spatial quadrature per mask column: `∫_cell e_j` and the cell measure.
struct SpatialCells {
    moment: Vec<Vec<f64>>,
    measure: Vec<f64>,
}

impl SpatialCells {
    fn new(basis: &EigenBasis, n_x: usize) -> Self {
        let grid = basis.grid();
        let w = basis.weights();
        let cell = |x: f64| ((x * n_x as f64) as usize).min(n_x - 1);
        let mut measure = alloc::vec![0.0; n_x];
        for (i, &x) in grid.iter().enumerate() {
            measure[cell(x)] += w[i];
        }
        let moment = (0..basis.len())
            .map(|j| {
                let mut m = alloc::vec![0.0; n_x];
                for (i, &x) in grid.iter().enumerate() {
                    m[cell(x)] += w[i] * basis.mode(j)[i];
                }
                m
            })
            .collect();
        Self { moment, measure }
    }
}

/// Norm in which the control is minimized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ControlNorm {
    L2,
    /// `sup_t (T̂ − t)^{−α} ‖u(t)‖_{L²}`; requires `α > 1`.
    WeightedSup {
        alpha: f64,
    },
}

#[derive(Clone, Debug)]
pub struct ControlProblem {
    pub kernel: ExpPolyFn,
    pub basis: EigenBasis,
    /// Its horizon is the control time `T̂`.
    pub mask: Mask,
    pub y0: SpectralVec,
    pub y1: SpectralVec,
    pub norm: ControlNorm,
    /// Volterra steps per mask time cell; by default `η_J Δt ≤ 1`.
    pub steps_per_cell: Option<usize>,
    /// Relative tolerance of the replay consistency check.
    pub replay_tolerance: f64,
}

impl ControlProblem {
    pub fn new(kernel: &ExpPolyFn, basis: &EigenBasis, mask: &Mask, y0: SpectralVec, y1: SpectralVec, norm: ControlNorm) -> Self {
        Self {
            kernel: kernel.clone(),
            basis: basis.clone(),
            mask: mask.clone(),
            y0,
            y1,
            norm,
            steps_per_cell: None,
            replay_tolerance: 1e-6,
        }
    }

    fn time_grid(&self) -> Result<TimeGrid> {
        default_grid(&self.basis, &self.mask, self.steps_per_cell)
    }
}

fn default_grid(basis: &EigenBasis, mask: &Mask, steps_per_cell: Option<usize>) -> Result<TimeGrid> {
    if basis.is_empty() {
        return Err(invalid("basis has no modes"));
    }
    if mask.n_t() > MAX_TIME_CELLS {
        return Err(invalid("too many time cells for the dense solvers"));
    }
    let sub = match steps_per_cell {
        Some(0) => return Err(invalid("steps per cell must be positive")),
        Some(s) => s,
        None => (basis.eta(basis.len() - 1) * mask.dt()).ceil().max(1.0) as usize,
    };
    TimeGrid::new(mask.horizon(), mask.n_t() * sub)
}

/// Null-space perturbation test of an `L²`-minimal control.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimalityCheck {
    pub directions: usize,
    /// Smallest `(‖u + εv‖ − ‖u‖)/‖u‖` over all directions and signs.
    pub worst_change: f64,
    /// Largest `‖L v‖ / ‖L‖‖v‖` of the projected directions.
    pub leakage: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlReport {
    pub control: Control,
    /// `‖y(T̂) − y1‖` of the replayed trajectory.
    pub final_error: f64,
    pub replay_discrepancy: f64,
    pub gram_condition: f64,
    pub l2_norm: f64,
    /// Weighted sup norm and the reweighting lower bound (weighted regime).
    pub weighted_sup: Option<f64>,
    pub irls_objective: Option<f64>,
    pub irls_iterations: usize,
    pub optimality: Option<OptimalityCheck>,
    pub moc: f64,
    pub target_h4_norm: f64,
}

/// Columns `L_{j,(c,x)} = K_j(c) ∫_x e_j` of the discrete reachability map,
/// with the cell measures `Δt |x|`.
struct Reachability {
    cells: Vec<(usize, usize)>,
    columns: Vec<DVector<f64>>,
    measure: Vec<f64>,
    final_phi: Vec<f64>,
}

impl Reachability {
    fn new(kernel: &ExpPolyFn, basis: &EigenBasis, mask: &Mask, grid: &TimeGrid, skip_last: bool) -> Result<Self> {
        let j_max = basis.len();
        let n = grid.steps;
        let sub = n / mask.n_t();
        let mut k = alloc::vec![alloc::vec![0.0; mask.n_t()]; j_max];
        let mut final_phi = Vec::with_capacity(j_max);
        for (j, &eta) in basis.eigenvalues().iter().enumerate() {
            let g = volterra_impulse(kernel, eta, grid)?;
            for step in 0..n {
                k[j][step / sub] += g[n - step];
            }
            final_phi.push(volterra_mode(kernel, eta, grid, 1.0, None)?[n]);
        }
        let spatial = SpatialCells::new(basis, mask.n_x());
        let mut cells = Vec::new();
        let mut columns = Vec::new();
        let mut measure = Vec::new();
        let t_cells = if skip_last { mask.n_t() - 1 } else { mask.n_t() };
        #[allow(clippy::needless_range_loop)]
        for c in 0..t_cells {
            for x in 0..mask.n_x() {
                if !mask.get(c, x) || spatial.measure[x] == 0.0 {
                    continue;
                }
                cells.push((c, x));
                columns.push(DVector::from_iterator(j_max, (0..j_max).map(|j| k[j][c] * spatial.moment[j][x])));
                measure.push(mask.dt() * spatial.measure[x]);
            }
        }
        Ok(Self { cells, columns, measure, final_phi })
    }

    /// `Σ_cells L Lᵀ / (p μ)`.
    fn gram(&self, penalty: &[f64]) -> DMatrix<f64> {
        let j_max = self.final_phi.len();
        let mut c = DMatrix::zeros(j_max, j_max);
        for ((col, mu), p) in self.columns.iter().zip(&self.measure).zip(penalty) {
            if p.is_finite() {
                c.ger(1.0 / (p * mu), col, col, 1.0);
            }
        }
        c
    }

    /// Minimizer of `Σ p μ u²` subject to `L u = r`.
    fn least_norm(&self, penalty: &[f64], r: &DVector<f64>) -> Result<(Vec<f64>, f64)> {
        let c = self.gram(penalty);
        let j_max = c.nrows();
        let d: Vec<f64> = (0..j_max).map(|j| c[(j, j)].sqrt()).collect();
        if d.iter().any(|&v| !(v > 0.0)) {
            return Err(invalid("the mask does not reach every mode"));
        }
        let scaled = DMatrix::from_fn(j_max, j_max, |a, b| c[(a, b)] / (d[a] * d[b]));
        let eig = SymmetricEigen::new(scaled.clone());
        let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if !(lo > RANK_TOL * hi) {
            let i = eig.eigenvalues.iamin();
            return Err(Error::Singular { null_direction: eig.eigenvectors.column(i).iter().copied().collect() });
        }
        let ch = Cholesky::new(scaled.clone()).ok_or(Error::Singular { null_direction: Vec::new() })?;
        let rs = DVector::from_iterator(j_max, (0..j_max).map(|j| r[j] / d[j]));
        let mut z = ch.solve(&rs);
        // one refinement step
        let defect = &rs - &scaled * &z;
        z += ch.solve(&defect);
        let lambda = DVector::from_iterator(j_max, (0..j_max).map(|j| z[j] / d[j]));
        let u = self
            .columns
            .iter()
            .zip(&self.measure)
            .zip(penalty)
            .map(|((col, mu), p)| if p.is_finite() { col.dot(&lambda) / (p * mu) } else { 0.0 })
            .collect();
        Ok((u, hi / lo))
    }

    fn apply(&self, u: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.final_phi.len());
        for (col, v) in self.columns.iter().zip(u) {
            out.axpy(*v, col, 1.0);
        }
        out
    }

    fn weighted_norm(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.measure).map(|(v, mu)| mu * v * v).sum::<f64>().sqrt()
    }

    fn to_control(&self, mask: &Mask, u: &[f64]) -> Control {
        let mut out = Control::zero(mask);
        for (&(c, x), v) in self.cells.iter().zip(u) {
            out.values[c * mask.n_x() + x] = *v;
        }
        out
    }
}

fn check_state(basis: &EigenBasis, v: &SpectralVec) -> Result<()> {
    if v.len() != basis.len() {
        return Err(Error::Dimension { expected: basis.len(), found: v.len() });
    }
    Ok(())
}

/// Least-norm control steering `y0` to `y1` at the mask horizon, verified by
/// replaying the forced equation.
pub fn min_norm_control(problem: &ControlProblem, seed: u64) -> Result<ControlReport> {
    let basis = &problem.basis;
    let mask = &problem.mask;
    check_state(basis, &problem.y0)?;
    check_state(basis, &problem.y1)?;
    if basis.len() > MAX_DENSE_MODES {
        return Err(invalid("control synthesis is limited to 64 modes"));
    }
    if let ControlNorm::WeightedSup { alpha } = problem.norm {
        if !(alpha > 1.0) {
            return Err(invalid("the weighted regime needs alpha > 1"));
        }
        if mask.n_t() < 2 {
            return Err(invalid("the weighted regime needs at least two time cells"));
        }
    }
    let grid = problem.time_grid()?;
    let weighted = matches!(problem.norm, ControlNorm::WeightedSup { .. });
    let reach = Reachability::new(&problem.kernel, basis, mask, &grid, weighted)?;
    let r = DVector::from_iterator(basis.len(), (0..basis.len()).map(|j| problem.y1.coeffs[j] - reach.final_phi[j] * problem.y0.coeffs[j]));
    let ones = alloc::vec![1.0; reach.cells.len()];
    let (mut u, mut cond) = if r.norm() == 0.0 { (alloc::vec![0.0; reach.cells.len()], 0.0) } else { reach.least_norm(&ones, &r)? };

    let mut optimality = None;
    let mut weighted_sup = None;
    let mut irls_objective = None;
    let mut irls_iterations = 0;
    match problem.norm {
        ControlNorm::L2 => {
            optimality = Some(null_space_check(&reach, &u, seed)?);
        }
        ControlNorm::WeightedSup { alpha } => {
            if r.norm() > 0.0 {
                let (v, c, lower, iters) = lawson(&reach, mask, alpha, &r)?;
                u = v;
                cond = c;
                irls_objective = Some(lower);
                irls_iterations = iters;
            } else {
                irls_objective = Some(0.0);
            }
        }
    }
    let control = reach.to_control(mask, &u);
    if let ControlNorm::WeightedSup { alpha } = problem.norm {
        weighted_sup = Some(control.weighted_sup(basis, alpha));
    }
    let replay = forced_solution(&problem.kernel, basis, &problem.y0, &control.modal_forcing(basis), &grid, problem.replay_tolerance)?;
    let mut diff = replay.final_state();
    diff.axpy(-1.0, &problem.y1);
    let final_error = diff.coeffs.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(ControlReport {
        l2_norm: control.l2_norm(basis),
        control,
        final_error,
        replay_discrepancy: replay.discrepancy,
        gram_condition: cond,
        weighted_sup,
        irls_objective,
        irls_iterations,
        optimality,
        moc: moc_functional(mask, 0.0, mask.horizon()),
        target_h4_norm: hs_norm(basis, &problem.y1, 4.0),
    })
}

/// Perturbs `u` along ten random directions of the null space of `L`.
fn null_space_check(reach: &Reachability, u: &[f64], seed: u64) -> Result<OptimalityCheck> {
    let m = u.len();
    let ones = alloc::vec![1.0; m];
    let base = reach.weighted_norm(u);
    let op_norm = reach.columns.iter().map(|c| c.norm_squared()).sum::<f64>().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let mut leakage = 0.0f64;
    let directions = 10;
    for _ in 0..directions {
        let mut v = random_unit(&mut rng, m);
        let (proj, _) = reach.least_norm(&ones, &reach.apply(&v))?;
        for (a, b) in v.iter_mut().zip(&proj) {
            *a -= b;
        }
        let vn = reach.weighted_norm(&v);
        if vn == 0.0 {
            continue;
        }
        leakage = leakage.max(reach.apply(&v).norm() / (op_norm * v.iter().map(|x| x * x).sum::<f64>().sqrt()));
        let eps = if base > 0.0 { 0.1 * base / vn } else { 1.0 / vn };
        for sign in [1.0, -1.0] {
            let moved: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + sign * eps * b).collect();
            let moved_norm = reach.weighted_norm(&moved);
            let change = (moved_norm - base) / base.max(moved_norm);
            worst = worst.min(change);
        }
    }
    if worst < -OPTIMALITY_TOL {
        return Err(Error::Mismatch { what: "null-space optimality", discrepancy: -worst, tolerance: OPTIMALITY_TOL });
    }
    Ok(OptimalityCheck { directions, worst_change: worst, leakage })
}

/// Lawson reweighting for `min max_c ω_c ‖u_c‖` subject to `L u = r`;
/// returns the control, the Gram condition, the lower bound and iterations.
fn lawson(reach: &Reachability, mask: &Mask, alpha: f64, r: &DVector<f64>) -> Result<(Vec<f64>, f64, f64, usize)> {
    let n_t = mask.n_t();
    let omega: Vec<f64> = (0..n_t).map(|c| sup_weight(mask.horizon(), mask.dt(), c, alpha)).collect();
    let active: Vec<bool> = (0..n_t).map(|c| omega[c].is_finite() && reach.cells.iter().any(|cell| cell.0 == c)).collect();
    let count = active.iter().filter(|&&a| a).count();
    let mut p: Vec<f64> = (0..n_t).map(|c| if active[c] { 1.0 / count as f64 } else { 0.0 }).collect();
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    let mut lower_bound = 0.0f64;
    let mut iterations = 0;
    for it in 0..500 {
        iterations = it + 1;
        // Σ penalty·μ·u² = Δt Σ_c p_c ω_c² ‖u_c‖²
        let penalty: Vec<f64> =
            reach.cells.iter().map(|&(c, _)| if p[c] > 0.0 { p[c] * omega[c] * omega[c] } else { f64::INFINITY }).collect();
        let (u, cond) = reach.least_norm(&penalty, r)?;
        let mut sq = alloc::vec![0.0; n_t];
        for ((&(c, _), v), mu) in reach.cells.iter().zip(&u).zip(&reach.measure) {
            sq[c] += mu / mask.dt() * v * v;
        }
        let err: Vec<f64> = (0..n_t).map(|c| if active[c] { omega[c] * sq[c].sqrt() } else { 0.0 }).collect();
        let upper = err.iter().copied().fold(0.0, f64::max);
        let lower = (0..n_t).map(|c| p[c] * err[c] * err[c]).sum::<f64>().sqrt();
        // any normalized weights give a lower bound on the minimax value
        lower_bound = lower_bound.max(lower);
        if best.as_ref().is_none_or(|b| upper < b.2) {
            best = Some((u, cond, upper));
        }
        let gap = best.as_ref().map_or(f64::INFINITY, |b| b.2) / lower_bound.max(f64::MIN_POSITIVE);
        if gap < 1.0 + 1e-3 {
            break;
        }
        let total: f64 = (0..n_t).map(|c| p[c] * err[c]).sum();
        if !(total > 0.0) {
            break;
        }
        for c in 0..n_t {
            p[c] = p[c] * err[c] / total;
            if p[c] < 1e-300 {
                p[c] = 0.0;
            }
        }
    }
    let (u, cond, _) = best.ok_or_else(|| invalid("reweighting produced no iterate"))?;
    Ok((u, cond, lower_bound, iterations))
}

/// `f_u(T̂) = y(T̂; y0, u) − z(T̂; y0, u)` with `z` the memoryless run, and
/// the flattening of `Σ_{j≤n} f_j² η_j⁴`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReachableReport {
    pub difference: SpectralVec,
    pub partial_sums: Vec<f64>,
    /// Relative increase of the partial sums over the last quartile of modes.
    pub tail_increase: f64,
    /// `‖y(T̂) − (z(T̂) + f_u(T̂))‖` with `f_u` from the impulse responses.
    pub sandwich_defect: f64,
}

pub fn reachable_difference_check(
    kernel: &ExpPolyFn,
    basis: &EigenBasis,
    mask: &Mask,
    y0: &SpectralVec,
    u: &Control,
    steps_per_cell: Option<usize>,
) -> Result<ReachableReport> {
    check_state(basis, y0)?;
    u.check(mask)?;
    let grid = default_grid(basis, mask, steps_per_cell)?;
    let forcing = u.modal_forcing(basis);
    let n = grid.steps;
    let mut with = SpectralVec::zeros(basis.len(), 0.0);
    let mut without = SpectralVec::zeros(basis.len(), 0.0);
    // the same difference again from the two impulse responses
    let mut independent = Vec::with_capacity(basis.len());
    for (j, &eta) in basis.eigenvalues().iter().enumerate() {
        let g = forcing.step_averages(j, n)?;
        with.coeffs[j] = volterra_mode(kernel, eta, &grid, y0.coeffs[j], Some(&g))?[n];
        without.coeffs[j] = volterra_mode(&ExpPolyFn::zero(), eta, &grid, y0.coeffs[j], Some(&g))?[n];
        let gm = volterra_impulse(kernel, eta, &grid)?;
        let g0 = volterra_impulse(&ExpPolyFn::zero(), eta, &grid)?;
        let pm = volterra_mode(kernel, eta, &grid, 1.0, None)?[n];
        let p0 = volterra_mode(&ExpPolyFn::zero(), eta, &grid, 1.0, None)?[n];
        let mut f = (pm - p0) * y0.coeffs[j];
        for (k, gk) in g.iter().enumerate() {
            f += gk * (gm[n - k] - g0[n - k]);
        }
        independent.push(f);
    }
    let mut difference = with.clone();
    difference.axpy(-1.0, &without);
    let sandwich_defect = (0..basis.len()).map(|j| (with.coeffs[j] - without.coeffs[j] - independent[j]).powi(2)).sum::<f64>().sqrt();

    let mut partial_sums = Vec::with_capacity(basis.len());
    let mut acc = 0.0;
    for (a, eta) in difference.coeffs.iter().zip(basis.eigenvalues()) {
        acc += a * a * eta.powi(4);
        partial_sums.push(acc);
    }
    let total = acc;
    let quartile = basis.len() - basis.len() / 4;
    let before = if quartile == 0 { 0.0 } else { partial_sums[quartile - 1] };
    let tail_increase = if total > 0.0 { (total - before) / total } else { 0.0 };
    Ok(ReachableReport { difference: SpectralVec::new(difference.coeffs, 4.0), partial_sums, tail_increase, sandwich_defect })
}

// ---------------------------------------------------------------------------
// Duality

#[derive(Clone, Debug, PartialEq)]
pub struct DualityReport {
    /// `sup ‖Rz‖/‖Oz‖` from the generalized eigenproblem.
    pub c1: f64,
    /// Largest ratio over random samples; never above `c1`.
    pub c1_sampled: f64,
    /// `max ‖y*‖/‖x*‖` over the supplied functionals.
    pub c2: f64,
    pub ratios: Vec<f64>,
    pub residuals: Vec<f64>,
}

fn lower_cholesky(o: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let oto = o.transpose() * o;
    let n = oto.nrows();
    let (values, vectors) = eigen_sorted(oto.clone());
    let top = values.last().copied().unwrap_or(0.0);
    if n == 0 || !(values[0] > RANK_TOL * top) {
        return Err(Error::Singular { null_direction: vectors.first().cloned().unwrap_or_default() });
    }
    Cholesky::new(oto).ok_or(Error::Singular { null_direction: vectors[0].clone() })
}

/// Unit `x*` maximizing `‖y*‖` with `O*y* = R*x*`: the top eigenvector of
/// `R (OᵀO)^{−1} Rᵀ`.
pub fn extremal_functional(r: &DMatrix<f64>, o: &DMatrix<f64>) -> Result<DVector<f64>> {
    let ch = lower_cholesky(o)?;
    let m = r * ch.solve(&r.transpose());
    let m = (&m + m.transpose()) * 0.5;
    let (_, vectors) = eigen_sorted(m);
    Ok(DVector::from_vec(vectors.last().cloned().unwrap_or_default()))
}

/// Forward constant of `‖Rz‖ ≤ C₁‖Oz‖` and least-norm solutions of
/// `O*y* = R*x*` for every `x*`.
pub fn duality_range_test(
    r: &DMatrix<f64>,
    o: &DMatrix<f64>,
    functionals: &[DVector<f64>],
    tolerance: f64,
    seed: u64,
) -> Result<DualityReport> {
    if r.ncols() != o.ncols() {
        return Err(Error::Dimension { expected: o.ncols(), found: r.ncols() });
    }
    let ch = lower_cholesky(o)?;
    let l = ch.l();
    // C₁² = λ_max(L^{-1} RᵀR L^{-T})
    let rtr = r.transpose() * r;
    let linv = l.clone().try_inverse().ok_or(Error::Singular { null_direction: Vec::new() })?;
    let m = &linv * rtr * linv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let (values, _) = eigen_sorted(m);
    let c1 = values.last().copied().unwrap_or(0.0).max(0.0).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c1_sampled = 0.0f64;
    for _ in 0..64 {
        let z = DVector::from_vec(random_unit(&mut rng, o.ncols()));
        let den = (o * &z).norm();
        if den > 0.0 {
            c1_sampled = c1_sampled.max((r * &z).norm() / den);
        }
    }

    let mut ratios = Vec::with_capacity(functionals.len());
    let mut residuals = Vec::with_capacity(functionals.len());
    for x in functionals {
        if x.len() != r.nrows() {
            return Err(Error::Dimension { expected: r.nrows(), found: x.len() });
        }
        let rhs = r.transpose() * x;
        let y = o * ch.solve(&rhs);
        let defect = (o.transpose() * &y - &rhs).norm() / rhs.norm().max(f64::MIN_POSITIVE);
        if defect > tolerance {
            return Err(Error::Mismatch { what: "adjoint range equation", discrepancy: defect, tolerance });
        }
        ratios.push(y.norm() / x.norm());
        residuals.push(defect);
    }
    let c2 = ratios.iter().copied().fold(0.0, f64::max);
    Ok(DualityReport { c1, c1_sampled, c2, ratios, residuals })
}

/// The observability instance: `R` is the reference-norm embedding and
/// `O` a square root of the observation Gram matrix. Functionals are the unit
/// vectors and the extremal one.
pub fn observability_duality(setup: &ObsSetup, seed: u64) -> Result<DualityReport> {
    setup.has_forms()?;
    let (g, _) = crate::observability::gram_matrix(setup)?;
    let j_max = setup.modes();
    let s = setup.ref_exponent();
    let r = DMatrix::from_diagonal(&DVector::from_iterator(j_max, setup.basis().eigenvalues().iter().map(|e| e.powf(0.5 * s))));
    let g = (&g + g.transpose()) * 0.5;
    let eig = SymmetricEigen::new(g);
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    let o = &root * eig.eigenvectors.transpose();
    let mut functionals: Vec<DVector<f64>> = (0..j_max).map(|j| DVector::from_fn(j_max, |i, _| if i == j { 1.0 } else { 0.0 })).collect();
    functionals.push(extremal_functional(&r, &o)?);
    duality_range_test(&r, &o, &functionals, 1e-6, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expoly::parse;
    use crate::geometry::{cylinder, zigzag};
    use crate::observability::ObsOptions;
    use crate::spectral::interval_basis;

    fn full(n_t: usize, n_x: usize) -> Mask {
        Mask::from_fn(1.0, n_t, n_x, "full", |_, _| true).unwrap()
    }

    #[test]
    fn zero_data_gives_zero_state() {
        let basis = interval_basis(6, 64).unwrap();
        let m = parse("exp(-t)").unwrap();
        let setup = ObsSetup::new(&basis, &m, &full(8, 16), &ObsOptions::default()).unwrap();
        let data = Observations::observe(&setup, &SpectralVec::zeros(6, 0.0)).unwrap();
        let p = ReconstructionProblem { setup: &setup, data: &data, regularization: Regularization::Fixed(1e-3) };
        let rec = reconstruct_y0(&p, None).unwrap();
        assert!(rec.y0.coeffs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noiseless_round_trip() {
        let basis = interval_basis(8, 128).unwrap();
        let m = parse("exp(-t)").unwrap();
        let mask = cylinder(1.0, 16, 32, (0.2, 0.6), (0.0, 1.0)).unwrap();
        let setup = ObsSetup::new(&basis, &m, &mask, &ObsOptions::default()).unwrap();
        let truth = SpectralVec::new((0..8).map(|j| 1.0 / (1.0 + j as f64)).collect(), 0.0);
        let data = Observations::observe(&setup, &truth).unwrap();
        let p = ReconstructionProblem { setup: &setup, data: &data, regularization: Regularization::Fixed(0.0) };
        let rec = reconstruct_y0(&p, Some(&truth)).unwrap();
        assert!(rec.rel_error.unwrap() < 1e-8, "{:?}", rec.rel_error);
    }

    #[test]
    fn blind_mask_is_singular() {
        let basis = interval_basis(4, 64).unwrap();
        let m = parse("exp(-t)").unwrap();
        let mask = Mask::empty(1.0, 8, 16).unwrap();
        let setup = ObsSetup::new(&basis, &m, &mask, &ObsOptions::default()).unwrap();
        let data = Observations::observe(&setup, &SpectralVec::zeros(4, 0.0)).unwrap();
        let p = ReconstructionProblem { setup: &setup, data: &data, regularization: Regularization::Fixed(0.0) };
        assert!(matches!(reconstruct_y0(&p, None), Err(Error::Singular { .. })));
    }

    #[test]
    fn zero_to_zero_needs_no_control() {
        let basis = interval_basis(4, 64).unwrap();
        let m = parse("exp(-t)").unwrap();
        let p = ControlProblem::new(&m, &basis, &full(8, 16), SpectralVec::zeros(4, 0.0), SpectralVec::zeros(4, 4.0), ControlNorm::L2);
        let rep = min_norm_control(&p, 1).unwrap();
        assert!(rep.control.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn l2_control_reaches_target() {
        let basis = interval_basis(6, 96).unwrap();
        let m = parse("sin(t)").unwrap();
        let mask = zigzag(1.0, 16, 32, 0.4).unwrap();
        let y0 = SpectralVec::new((0..6).map(|j| (j as f64 * 0.7).cos()).collect(), 0.0);
        let y1 = SpectralVec::new(basis.eigenvalues().iter().map(|e| e.powi(-3)).collect(), 4.0);
        let p = ControlProblem::new(&m, &basis, &mask, y0, y1, ControlNorm::L2);
        let rep = min_norm_control(&p, 3).unwrap();
        assert!(rep.final_error < 1e-8, "{}", rep.final_error);
        for c in 0..16 {
            for x in 0..32 {
                if !mask.get(c, x) {
                    assert_eq!(rep.control.value(c, x).to_bits(), 0);
                }
            }
        }
        assert!(rep.optimality.unwrap().worst_change >= -OPTIMALITY_TOL);
    }

    #[test]
    fn weighted_regime_rejects_small_alpha() {
        let basis = interval_basis(4, 64).unwrap();
        let p = ControlProblem::new(
            &ExpPolyFn::zero(),
            &basis,
            &full(8, 16),
            SpectralVec::zeros(4, 0.0),
            SpectralVec::zeros(4, 4.0),
            ControlNorm::WeightedSup { alpha: 1.0 },
        );
        assert!(min_norm_control(&p, 1).is_err());
    }

    #[test]
    fn weighted_control_vanishes_on_last_cell() {
        let basis = interval_basis(4, 64).unwrap();
        let m = parse("exp(-t)").unwrap();
        let y0 = SpectralVec::new(alloc::vec![1.0, -0.5, 0.25, 0.1], 0.0);
        let p = ControlProblem::new(&m, &basis, &full(8, 16), y0, SpectralVec::zeros(4, 4.0), ControlNorm::WeightedSup { alpha: 2.0 });
        let rep = min_norm_control(&p, 1).unwrap();
        assert!(rep.final_error < 1e-8);
        assert!((0..16).all(|x| rep.control.value(7, x) == 0.0));
        let (sup, lower) = (rep.weighted_sup.unwrap(), rep.irls_objective.unwrap());
        assert!(sup.is_finite() && lower <= sup * (1.0 + 1e-12));
    }

    #[test]
    fn memoryless_difference_vanishes() {
        let basis = interval_basis(6, 64).unwrap();
        let mask = full(8, 16);
        let u = Control::random(&mask, 5);
        let y0 = SpectralVec::unit(6, 0, 0.0);
        let rep = reachable_difference_check(&ExpPolyFn::zero(), &basis, &mask, &y0, &u, None).unwrap();
        assert!(rep.difference.coeffs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duality_identity_and_diagonal() {
        let id = DMatrix::<f64>::identity(2, 2);
        let xs = [DVector::from_vec(alloc::vec![1.0, 0.0]), DVector::from_vec(alloc::vec![0.6, 0.8])];
        let rep = duality_range_test(&id, &id, &xs, 1e-12, 0).unwrap();
        assert_eq!(rep.c1, 1.0);
        assert!((rep.c2 - 1.0).abs() < 1e-15);
        let o = DMatrix::from_diagonal(&DVector::from_vec(alloc::vec![1.0, 0.5]));
        let xs = [DVector::from_vec(alloc::vec![1.0, 0.0]), DVector::from_vec(alloc::vec![0.0, 1.0])];
        let rep = duality_range_test(&id, &o, &xs, 1e-12, 0).unwrap();
        assert_eq!(rep.c1, 2.0);
        assert_eq!(rep.c2, 2.0);
        assert!(rep.c1_sampled <= rep.c1);
    }

    #[test]
    fn csv_lists_mask_cells_only() {
        let mask = cylinder(1.0, 4, 4, (0.0, 0.5), (0.0, 1.0)).unwrap();
        let u = Control::random(&mask, 2);
        let csv = u.to_csv(&mask).unwrap();
        assert_eq!(csv.lines().count(), 1 + mask.count());
    }
}
