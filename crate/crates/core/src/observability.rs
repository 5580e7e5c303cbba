//! Masked observation seminorms `∫_S^T t^α ‖χ_Q y(t)‖_{L²} dt`, the
//! two-sided and null observability constants at truncation, and the
//! degeneracy probes built from concentrated bumps.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::expoly::ExpPolyFn;
use crate::flow::FlowTable;
use crate::geometry::Mask;
use crate::kernel::{first_nonzero_h_index, h_coeff};
use crate::resolvent::resolvent_mode;
use crate::spectral::{apply_neg_a_power, evaluate_on_grid, hs_norm, project_function, EigenBasis, SpectralVec};

/// Reference Sobolev exponent of the two-sided estimate.
pub const DEFAULT_REF_EXPONENT: f64 = -4.0;
/// Minimum number of restarts for the lower constant.
pub const MIN_RESTARTS: usize = 32;
/// Largest truncation for which per-cell quadratic forms are assembled.
pub const MAX_FORM_MODES: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct ObsOptions {
    /// Weight exponent; `None` means no weight.
    pub alpha: Option<f64>,
    /// Apply `t^α` even when the window starts after `0`.
    pub override_weight: bool,
    /// `(S, T)`; defaults to `(0, horizon)`.
    pub window: Option<(f64, f64)>,
    pub ref_exponent: f64,
    /// Time nodes are spaced at most `grading · t` apart.
    pub grading: f64,
    /// Minimum number of sub-intervals per mask time cell.
    pub cell_substeps: usize,
    /// Assemble the per-cell quadratic forms used by the optimizers.
    pub quadratic_forms: bool,
}

impl Default for ObsOptions {
    fn default() -> Self {
        Self {
            alpha: None,
            override_weight: false,
            window: None,
            ref_exponent: DEFAULT_REF_EXPONENT,
            grading: 1.0 / 64.0,
            cell_substeps: 8,
            quadratic_forms: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct ObsTerm {
    pub(crate) node: usize,
    pub(crate) pattern: usize,
    /// Trapezoid weight of the node within one mask time cell.
    pub(crate) weight: f64,
}

/// Observation operator `y0 ↦ χ_Q Φ(·) y0` discretized on graded
/// trapezoid nodes inside every nonempty mask time cell.
#[derive(Clone, Debug)]
pub struct ObsSetup {
    basis: EigenBasis,
    kernel: ExpPolyFn,
    mask: Mask,
    alpha: f64,
    window: (f64, f64),
    ref_exponent: f64,
    pub(crate) table: FlowTable,
    pub(crate) final_phi: Vec<f64>,
    pub(crate) terms: Vec<ObsTerm>,
    pub(crate) patterns: Vec<Vec<usize>>,
    /// `η_j^{−s/2}`: maps unit-sphere coordinates `b` to coefficients `a`.
    pub(crate) scale: Vec<f64>,
    /// `psi[n][j] = φ_j(t_n) · scale_j`.
    psi: Vec<Vec<f64>>,
    /// Row-major `J×J` Gram blocks `Σ_{i∈P} w_i e_j(x_i) e_k(x_i)`.
    blocks: Vec<Vec<f64>>,
}

fn cell_nodes(a: f64, b: f64, grading: f64, h_min: f64, substeps: usize) -> Vec<f64> {
    let h_max = (b - a) / substeps as f64;
    let mut out = alloc::vec![a];
    let mut t = a;
    loop {
        let h = (grading * t).max(h_min).min(h_max);
        let next = t + h;
        if next >= b - 0.3 * h {
            out.push(b);
            return out;
        }
        out.push(next);
        t = next;
    }
}

impl ObsSetup {
    pub fn new(basis: &EigenBasis, kernel: &ExpPolyFn, mask: &Mask, opts: &ObsOptions) -> Result<Self> {
        let (s, t) = opts.window.unwrap_or((0.0, mask.horizon()));
        if !(s >= 0.0 && t > s && t <= mask.horizon() * (1.0 + 1e-12)) {
            return Err(invalid("window must satisfy 0 <= S < T <= mask horizon"));
        }
        if let Some(a) = opts.alpha {
            if !(a >= 0.0) {
                return Err(invalid("weight exponent must be nonnegative"));
            }
        }
        if !(opts.grading > 0.0) || opts.cell_substeps == 0 {
            return Err(invalid("node grading must be positive"));
        }
        let alpha = match opts.alpha {
            Some(a) if s == 0.0 || opts.override_weight => a,
            _ => 0.0,
        };
        let j_max = basis.len();
        let h_min = 0.01 / basis.eta(j_max - 1);
        let dt = mask.dt();
        let grid = basis.grid();

        let mut pattern_ids: BTreeMap<Vec<bool>, usize> = BTreeMap::new();
        let mut patterns: Vec<Vec<usize>> = Vec::new();
        let mut node_times: Vec<f64> = Vec::new();
        let mut terms: Vec<ObsTerm> = Vec::new();
        let first = ((s / dt).floor() as usize).min(mask.n_t() - 1);
        let last = ((t / dt).ceil() as usize).min(mask.n_t());
        for c in first..last {
            let a = if c == first { s } else { c as f64 * dt };
            let b = if c + 1 == last { t } else { (c + 1) as f64 * dt };
            if b <= a {
                continue;
            }
            let active: Vec<bool> = (0..mask.n_x()).map(|x| mask.get(c, x)).collect();
            let pid = match pattern_ids.get(&active) {
                Some(&p) => p,
                None => {
                    let points: Vec<usize> = (0..grid.len()).filter(|&i| active[mask.x_cell_of(grid[i])]).collect();
                    patterns.push(points);
                    pattern_ids.insert(active, patterns.len() - 1);
                    patterns.len() - 1
                }
            };
            if patterns[pid].is_empty() {
                continue;
            }
            let local = cell_nodes(a, b, opts.grading, h_min, opts.cell_substeps);
            let offset = if node_times.last() == Some(&a) { node_times.len() - 1 } else { node_times.len() };
            node_times.truncate(offset);
            node_times.extend_from_slice(&local);
            for k in 0..local.len() - 1 {
                let half = 0.5 * (local[k + 1] - local[k]);
                for node in [offset + k, offset + k + 1] {
                    match terms.last_mut() {
                        Some(last) if last.node == node && last.pattern == pid => last.weight += half,
                        _ => terms.push(ObsTerm { node, pattern: pid, weight: half }),
                    }
                }
            }
        }
        terms.sort_by_key(|term| (term.node, term.pattern));

        let table = FlowTable::resolvent(kernel, basis, &node_times)?;
        let final_phi =
            basis.eigenvalues().iter().map(|&eta| resolvent_mode(kernel, eta, &[t]).map(|v| v[0])).collect::<Result<Vec<_>>>()?;
        let scale: Vec<f64> = basis.eigenvalues().iter().map(|eta| eta.powf(-0.5 * opts.ref_exponent)).collect();
        let psi = (0..node_times.len()).map(|n| (0..j_max).map(|j| table.value(j, n) * scale[j]).collect()).collect();
        let blocks =
            if opts.quadratic_forms && j_max <= MAX_FORM_MODES { patterns.iter().map(|p| block(basis, p)).collect() } else { Vec::new() };
        Ok(Self {
            basis: basis.clone(),
            kernel: kernel.clone(),
            mask: mask.clone(),
            alpha,
            window: (s, t),
            ref_exponent: opts.ref_exponent,
            table,
            final_phi,
            terms,
            patterns,
            scale,
            psi,
            blocks,
        })
    }

    pub fn basis(&self) -> &EigenBasis {
        &self.basis
    }

    pub fn kernel(&self) -> &ExpPolyFn {
        &self.kernel
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    /// Effective weight exponent.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    pub fn ref_exponent(&self) -> f64 {
        self.ref_exponent
    }

    pub fn table(&self) -> &FlowTable {
        &self.table
    }

    pub fn modes(&self) -> usize {
        self.basis.len()
    }

    /// `φ_j(T)` at the window end.
    pub fn final_flow(&self) -> &[f64] {
        &self.final_phi
    }

    /// No time cell of the window meets the mask.
    pub fn is_blind(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn ref_norm(&self, y0: &SpectralVec) -> f64 {
        hs_norm(&self.basis, y0, self.ref_exponent)
    }

    /// Coefficients `a = η^{−s/2} b` of a point `b` of the unit sphere.
    pub fn from_sphere(&self, b: &[f64]) -> SpectralVec {
        SpectralVec::new(b.iter().zip(&self.scale).map(|(x, s)| x * s).collect(), self.ref_exponent)
    }

    pub fn to_sphere(&self, y0: &SpectralVec) -> Vec<f64> {
        y0.coeffs.iter().zip(&self.scale).map(|(a, s)| a / s).collect()
    }

    pub(crate) fn check_len(&self, y0: &SpectralVec) -> Result<()> {
        if y0.len() != self.modes() {
            return Err(Error::Dimension { expected: self.modes(), found: y0.len() });
        }
        Ok(())
    }

    pub(crate) fn has_forms(&self) -> Result<()> {
        if self.blocks.len() != self.patterns.len() {
            return Err(invalid("setup was built without quadratic forms"));
        }
        Ok(())
    }

    pub(crate) fn t_pow(&self, n: usize, p: f64) -> f64 {
        if p == 0.0 {
            1.0
        } else {
            self.table.times()[n].powf(p)
        }
    }

    /// Objective and gradient in sphere coordinates, using the quadratic forms.
    fn obs_sphere(&self, b: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let j_max = b.len();
        let mut u = alloc::vec![0.0; j_max];
        let mut bu = alloc::vec![0.0; j_max];
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
        let mut total = 0.0;
        let mut current = usize::MAX;
        for term in &self.terms {
            if term.node != current {
                current = term.node;
                for ((uj, p), bj) in u.iter_mut().zip(&self.psi[current]).zip(b) {
                    *uj = p * bj;
                }
            }
            let blk = &self.blocks[term.pattern];
            let mut q = 0.0;
            for j in 0..j_max {
                let row = &blk[j * j_max..(j + 1) * j_max];
                let v: f64 = row.iter().zip(&u).map(|(x, y)| x * y).sum();
                bu[j] = v;
                q += u[j] * v;
            }
            if q <= 0.0 {
                continue;
            }
            let root = q.sqrt();
            let w = term.weight * self.t_pow(term.node, self.alpha);
            total += w * root;
            if let Some(g) = grad.as_deref_mut() {
                let f = w / root;
                for j in 0..j_max {
                    g[j] += f * self.psi[current][j] * bu[j];
                }
            }
        }
        total
    }

    /// `Σ w t^{2α} (ψψᵀ) ∘ B` in sphere coordinates.
    pub(crate) fn gram_sphere(&self) -> DMatrix<f64> {
        let j_max = self.modes();
        let mut g = DMatrix::zeros(j_max, j_max);
        for term in &self.terms {
            let w = term.weight * self.t_pow(term.node, 2.0 * self.alpha);
            let p = &self.psi[term.node];
            let blk = &self.blocks[term.pattern];
            for j in 0..j_max {
                for k in 0..j_max {
                    g[(j, k)] += w * p[j] * p[k] * blk[j * j_max + k];
                }
            }
        }
        g
    }
}

fn block(basis: &EigenBasis, points: &[usize]) -> Vec<f64> {
    let j_max = basis.len();
    let w = basis.weights();
    let mut out = alloc::vec![0.0; j_max * j_max];
    for j in 0..j_max {
        let ej = basis.mode(j);
        for k in j..j_max {
            let ek = basis.mode(k);
            let v: f64 = points.iter().map(|&i| w[i] * ej[i] * ek[i]).sum();
            out[j * j_max + k] = v;
            out[k * j_max + j] = v;
        }
    }
    out
}

/// `∫_S^T t^α ‖χ_Q Φ(t) y0‖_{L²} dt` by the trapezoid rule on the setup's
/// nodes, with the state evaluated on the spatial grid.
pub fn obs_seminorm(setup: &ObsSetup, y0: &SpectralVec) -> Result<f64> {
    setup.check_len(y0)?;
    let basis = &setup.basis;
    let w = basis.weights();
    let n_grid = basis.grid().len();
    // The interval basis is orthonormal on its grid up to rounding, so the
    // unmasked norm is the coefficient norm.
    let parseval = basis.domain_id() == "interval";
    let mut state = alloc::vec![0.0; setup.modes()];
    let mut values = Vec::new();
    let mut total = 0.0;
    let mut current = usize::MAX;
    for term in &setup.terms {
        if term.node != current {
            current = term.node;
            for (j, (c, a)) in state.iter_mut().zip(&y0.coeffs).enumerate() {
                *c = a * setup.table.value(j, current);
            }
        }
        let points = &setup.patterns[term.pattern];
        let sq = if parseval && points.len() == n_grid {
            state.iter().map(|c| c * c).sum::<f64>()
        } else {
            values.clear();
            values.resize(points.len(), 0.0);
            for (j, &c) in state.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let row = basis.mode(j);
                for (v, &i) in values.iter_mut().zip(points) {
                    *v += c * row[i];
                }
            }
            points.iter().zip(&values).map(|(&i, v)| w[i] * v * v).sum::<f64>()
        };
        total += term.weight * setup.t_pow(term.node, setup.alpha) * sq.sqrt();
    }
    Ok(total)
}

/// `(G, D)` with `G_jk = ∫ t^{2α} φ_j φ_k ⟨χ_Q e_j, χ_Q e_k⟩ dt` and
/// `D = diag(η_j^s)` for the reference exponent `s`.
pub fn gram_matrix(setup: &ObsSetup) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    setup.has_forms()?;
    let mut g = setup.gram_sphere();
    let j_max = setup.modes();
    for j in 0..j_max {
        for k in 0..j_max {
            g[(j, k)] /= setup.scale[j] * setup.scale[k];
        }
    }
    let d =
        DMatrix::from_diagonal(&DVector::from_iterator(j_max, setup.basis.eigenvalues().iter().map(|eta| eta.powf(setup.ref_exponent))));
    Ok((g, d))
}

/// Optimizer settings shared by the constant estimators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimOptions {
    pub seed: u64,
    /// Random starts added to the eigen-directions; the total is at least
    /// [`MIN_RESTARTS`] for the lower constant.
    pub random_starts: usize,
    pub max_iter: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self { seed: 0, random_starts: 16, max_iter: 500 }
    }
}

struct SphereRun {
    x: Vec<f64>,
    value: f64,
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Riemannian gradient descent with Armijo backtracking on the unit sphere.
fn sphere_descent<F>(f: &F, start: &[f64], maximize: bool, max_iter: usize) -> SphereRun
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    let n = start.len();
    let sign = if maximize { -1.0 } else { 1.0 };
    let mut x = start.to_vec();
    normalize(&mut x);
    let mut grad = alloc::vec![0.0; n];
    let mut value = f(&x, &mut grad);
    let mut cand = alloc::vec![0.0; n];
    let mut cand_grad = alloc::vec![0.0; n];
    let mut step: Option<f64> = None;
    let mut stalls = 0;
    for _ in 0..max_iter {
        if !value.is_finite() {
            break;
        }
        let radial: f64 = grad.iter().zip(&x).map(|(g, xi)| g * xi).sum();
        let pg: Vec<f64> = grad.iter().zip(&x).map(|(g, xi)| sign * (g - radial * xi)).collect();
        let pn = pg.iter().map(|v| v * v).sum::<f64>().sqrt();
        if pn <= 1e-12 * value.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        let mut tau = step.unwrap_or(0.1 / pn);
        let mut accepted = false;
        while tau * pn > 1e-15 {
            for i in 0..n {
                cand[i] = x[i] - tau * pg[i];
            }
            normalize(&mut cand);
            let cv = f(&cand, &mut cand_grad);
            if cv.is_finite() && sign * cv <= sign * value - 1e-4 * tau * pn * pn {
                let gain = (value - cv).abs() / value.abs().max(f64::MIN_POSITIVE);
                stalls = if gain < 1e-13 { stalls + 1 } else { 0 };
                core::mem::swap(&mut x, &mut cand);
                core::mem::swap(&mut grad, &mut cand_grad);
                value = cv;
                accepted = true;
                break;
            }
            tau *= 0.5;
        }
        if !accepted || stalls >= 3 {
            break;
        }
        step = Some((2.0 * tau).min(1.0 / pn.max(f64::MIN_POSITIVE)));
    }
    SphereRun { x, value }
}

pub(crate) fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        if normalize(&mut v) > 0.0 {
            return v;
        }
    }
}

/// Index of the best run: lowest (or highest) value, ties by lowest index.
fn best_run(runs: &[SphereRun], maximize: bool) -> usize {
    let mut best = 0;
    for (i, r) in runs.iter().enumerate().skip(1) {
        let better = if maximize { r.value > runs[best].value } else { r.value < runs[best].value };
        if better {
            best = i;
        }
    }
    best
}

/// Relative spread of the best half of the restart values.
fn restart_spread(values: &[f64], maximize: bool) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::INFINITY;
    }
    v.sort_by(|a, b| if maximize { b.total_cmp(a) } else { a.total_cmp(b) });
    let half = v.len().div_ceil(2);
    let best = v[0];
    if best == 0.0 {
        return if v[half - 1] == 0.0 { 0.0 } else { f64::INFINITY };
    }
    ((v[half - 1] - best) / best).abs()
}

pub(crate) fn eigen_sorted(m: DMatrix<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = idx.iter().map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect();
    (values, vectors)
}

/// Two-sided constants over the unit sphere of the reference norm.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoSided {
    pub c_lower: f64,
    pub c_upper: f64,
    pub witness_lower: SpectralVec,
    pub witness_upper: SpectralVec,
    /// `√λ_min`, `√λ_max` of the weighted `L²`-in-time Gram pair.
    pub surrogate_lower: f64,
    pub surrogate_upper: f64,
    pub lower_restarts: Vec<f64>,
    pub upper_restarts: Vec<f64>,
    pub lower_spread: f64,
    pub upper_spread: f64,
    /// `c^{L¹} ≤ √(T−S) c^{L²}` for both constants.
    pub sandwich_ok: bool,
}

pub fn two_sided_constants(setup: &ObsSetup, opts: &OptimOptions) -> Result<TwoSided> {
    setup.has_forms()?;
    let j_max = setup.modes();
    let (values, vectors) = eigen_sorted(setup.gram_sphere());
    let surrogate_lower = values[0].max(0.0).sqrt();
    let surrogate_upper = values[j_max - 1].max(0.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let f = |b: &[f64], g: &mut [f64]| setup.obs_sphere(b, Some(g));

    let mut lower_starts = vectors.clone();
    let extra = opts.random_starts.max(MIN_RESTARTS.saturating_sub(j_max));
    lower_starts.extend((0..extra).map(|_| random_unit(&mut rng, j_max)));
    let lower: Vec<SphereRun> = lower_starts.iter().map(|s| sphere_descent(&f, s, false, opts.max_iter)).collect();

    let mut upper_starts: Vec<Vec<f64>> = vectors.iter().rev().take(4).cloned().collect();
    upper_starts.extend((0..8).map(|_| random_unit(&mut rng, j_max)));
    let upper: Vec<SphereRun> = upper_starts.iter().map(|s| sphere_descent(&f, s, true, opts.max_iter)).collect();

    let lo = best_run(&lower, false);
    let hi = best_run(&upper, true);
    let witness_lower = setup.from_sphere(&lower[lo].x);
    let witness_upper = setup.from_sphere(&upper[hi].x);
    let c_lower = obs_seminorm(setup, &witness_lower)? / setup.ref_norm(&witness_lower);
    let c_upper = obs_seminorm(setup, &witness_upper)? / setup.ref_norm(&witness_upper);
    let lower_restarts: Vec<f64> = lower.iter().map(|r| r.value).collect();
    let upper_restarts: Vec<f64> = upper.iter().map(|r| r.value).collect();
    let factor = (setup.window.1 - setup.window.0).sqrt() * (1.0 + 1e-9);
    let sandwich_ok = c_lower <= factor * surrogate_lower + 1e-300 && c_upper <= factor * surrogate_upper + 1e-300;
    Ok(TwoSided {
        c_lower,
        c_upper,
        witness_lower,
        witness_upper,
        surrogate_lower,
        surrogate_upper,
        lower_spread: restart_spread(&lower_restarts, false),
        upper_spread: restart_spread(&upper_restarts, true),
        lower_restarts,
        upper_restarts,
        sandwich_ok,
    })
}

/// Largest `‖Φ(T) y0‖_{L²} / obs(y0)` found.
#[derive(Clone, Debug, PartialEq)]
pub struct NullConstant {
    pub c_null: f64,
    pub witness: SpectralVec,
    /// Set when the witness is (numerically) invisible to the observation.
    pub unbounded: bool,
    /// Square root of the largest generalized eigenvalue of `(F, G)`.
    pub surrogate: f64,
    pub restarts: Vec<f64>,
    pub spread: f64,
}

/// `‖Φ(T) y0‖_{L²}`.
pub fn final_norm(setup: &ObsSetup, y0: &SpectralVec) -> f64 {
    y0.coeffs.iter().zip(&setup.final_phi).map(|(a, p)| (a * p).powi(2)).sum::<f64>().sqrt()
}

pub fn null_obs_constant(setup: &ObsSetup, opts: &OptimOptions) -> Result<NullConstant> {
    setup.has_forms()?;
    let j_max = setup.modes();
    let fin: Vec<f64> = setup.final_phi.iter().zip(&setup.scale).map(|(p, s)| p * s).collect();
    let (values, vectors) = eigen_sorted(setup.gram_sphere());
    let top = values[j_max - 1].max(0.0);
    let cut = 1e-13 * top;
    // Gram directions below the cutoff that the final state still sees.
    let mut blind: Option<Vec<f64>> = None;
    let mut kept = Vec::new();
    for (lambda, v) in values.iter().zip(&vectors) {
        if *lambda > cut && top > 0.0 {
            kept.push((*lambda, v));
        } else if blind.is_none() {
            let seen = v.iter().zip(&fin).map(|(x, f)| (x * f).powi(2)).sum::<f64>().sqrt();
            if seen > 1e-8 * fin.iter().fold(0.0f64, |m, f| m.max(f.abs())) {
                blind = Some(v.clone());
            }
        }
    }
    if let Some(v) = blind {
        let witness = setup.from_sphere(&v);
        return Ok(NullConstant {
            c_null: f64::INFINITY,
            witness,
            unbounded: true,
            surrogate: f64::INFINITY,
            restarts: Vec::new(),
            spread: f64::INFINITY,
        });
    }
    // Reduced problem H = Wᵀ F W with W = V Λ^{−1/2}.
    let k = kept.len();
    let mut h = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            let (la, va) = kept[a];
            let (lb, vb) = kept[b];
            let s: f64 = (0..j_max).map(|j| va[j] * fin[j] * fin[j] * vb[j]).sum();
            h[(a, b)] = s / (la * lb).sqrt();
        }
    }
    let (mu, u) = eigen_sorted(h);
    let surrogate = mu[k - 1].max(0.0).sqrt();
    let lift = |coeffs: &[f64]| -> Vec<f64> {
        let mut out = alloc::vec![0.0; j_max];
        for (c, (l, v)) in coeffs.iter().zip(&kept) {
            for j in 0..j_max {
                out[j] += c / l.sqrt() * v[j];
            }
        }
        out
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts: Vec<Vec<f64>> = u.iter().rev().take(4).map(|c| lift(c)).collect();
    starts.extend((0..opts.random_starts).map(|_| random_unit(&mut rng, j_max)));

    let f = |b: &[f64], g: &mut [f64]| {
        let mut og = alloc::vec![0.0; j_max];
        let o = setup.obs_sphere(b, Some(&mut og));
        let num = b.iter().zip(&fin).map(|(x, f)| (x * f).powi(2)).sum::<f64>().sqrt();
        if o <= 0.0 {
            g.iter_mut().for_each(|x| *x = 0.0);
            return f64::INFINITY;
        }
        for j in 0..j_max {
            let dn = if num > 0.0 { fin[j] * fin[j] * b[j] / num } else { 0.0 };
            g[j] = (dn * o - num * og[j]) / (o * o);
        }
        num / o
    };
    let runs: Vec<SphereRun> = starts.iter().map(|s| sphere_descent(&f, s, true, opts.max_iter)).collect();
    let best = best_run(&runs, true);
    let witness = setup.from_sphere(&runs[best].x);
    let obs = obs_seminorm(setup, &witness)?;
    let unbounded = obs < 1e-12 * setup.ref_norm(&witness);
    let c_null = if obs > 0.0 { final_norm(setup, &witness) / obs } else { f64::INFINITY };
    let restarts: Vec<f64> = runs.iter().map(|r| r.value).collect();
    Ok(NullConstant { c_null, witness, unbounded, surrogate, spread: restart_spread(&restarts, true), restarts })
}

/// Best constant of `C ‖y0‖_{H^s} ≤ obs(y0) + ‖y0‖_{H^{s−2}}` over the
/// sampled sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxedFit {
    pub c: f64,
    pub witness: SpectralVec,
    /// `obs(w)/‖w‖_{H^s}` at the witness; the part of `C` not explained
    /// by the compact term.
    pub residual: f64,
    pub compact_part: f64,
    pub samples: usize,
}

pub fn relaxed_inequality_fit(setup: &ObsSetup, opts: &OptimOptions) -> Result<RelaxedFit> {
    setup.has_forms()?;
    let j_max = setup.modes();
    let inv_eta: Vec<f64> = setup.basis.eigenvalues().iter().map(|e| 1.0 / e).collect();
    let compact = |b: &[f64]| b.iter().zip(&inv_eta).map(|(x, i)| (x * i).powi(2)).sum::<f64>().sqrt();
    let f = |b: &[f64], g: &mut [f64]| {
        let o = setup.obs_sphere(b, Some(g));
        let c = compact(b);
        if c > 0.0 {
            for j in 0..j_max {
                g[j] += inv_eta[j] * inv_eta[j] * b[j] / c;
            }
        }
        o + c
    };
    let (_, vectors) = eigen_sorted(setup.gram_sphere());
    let mut samples: Vec<Vec<f64>> = (0..j_max)
        .map(|j| {
            let mut e = alloc::vec![0.0; j_max];
            e[j] = 1.0;
            e
        })
        .collect();
    samples.extend(vectors);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    while samples.len() < 256.max(2 * j_max + opts.random_starts) {
        samples.push(random_unit(&mut rng, j_max));
    }
    let mut scratch = alloc::vec![0.0; j_max];
    let mut best = (0usize, f64::INFINITY);
    for (i, s) in samples.iter().enumerate() {
        let v = f(s, &mut scratch);
        if v < best.1 {
            best = (i, v);
        }
    }
    let refined = sphere_descent(&f, &samples[best.0], false, opts.max_iter);
    let x = if refined.value < best.1 { refined.x } else { samples[best.0].clone() };
    let witness = setup.from_sphere(&x);
    let norm = setup.ref_norm(&witness);
    let obs = obs_seminorm(setup, &witness)? / norm;
    let compact_part = compact(&x) / normalize(&mut x.clone());
    Ok(RelaxedFit { c: obs + compact_part, witness, residual: obs, compact_part, samples: samples.len() })
}

/// Numerical rank of `y0 ↦ χ_Q Φ(·) y0` in the reference norm and the
/// smallest singular value `√λ_min` of its weighted Gram matrix.
pub fn unique_continuation_rank(setup: &ObsSetup) -> Result<(usize, f64)> {
    setup.has_forms()?;
    let (values, _) = eigen_sorted(setup.gram_sphere());
    let top = values.last().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Ok((0, 0.0));
    }
    let rank = values.iter().filter(|&&v| v > 1e-12 * top).count();
    Ok((rank, values[0].max(0.0).sqrt()))
}

/// Shape of the concentrated profiles `ρ` on `[−1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BumpProfile {
    /// `(1 − u²)⁴`.
    Polynomial,
    /// `d²/du² (1 − u²)¹²`: mean and first moment vanish, so `(−A)^{−1}` of
    /// the bump stays supported in the same interval.
    ZeroMoment,
}

impl BumpProfile {
    fn eval(&self, u: f64) -> f64 {
        if u.abs() >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - u * u;
        match self {
            BumpProfile::Polynomial => s.powi(4),
            BumpProfile::ZeroMoment => s.powi(10) * (552.0 * u * u - 24.0),
        }
    }
}

/// Unit-`L²` projection of `ρ((x − c)/ε)`; the flag marks a support
/// narrower than four grid cells.
pub fn bump(basis: &EigenBasis, center: f64, half_width: f64, profile: BumpProfile) -> Result<(SpectralVec, bool)> {
    if !(half_width > 0.0) {
        return Err(invalid("bump width must be positive"));
    }
    let samples: Vec<f64> = basis.grid().iter().map(|&x| profile.eval((x - center) / half_width)).collect();
    let mut v = project_function(basis, &samples)?;
    if normalize(&mut v.coeffs) == 0.0 {
        return Err(invalid("bump misses every grid point"));
    }
    let cell = basis.grid().get(1).zip(basis.grid().first()).map(|(b, a)| b - a).unwrap_or(1.0);
    Ok((v, 2.0 * half_width < 4.0 * cell))
}

/// `k ↦ quotient` records.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ProbeTrajectory {
    pub k: Vec<u32>,
    pub quotient: Vec<f64>,
    /// Probe-specific companion value per `k`.
    pub aux: Vec<f64>,
    pub warnings: Vec<String>,
}

impl ProbeTrajectory {
    /// `max/min` of the quotients.
    pub fn spread(&self) -> f64 {
        let max = self.quotient.iter().fold(f64::NEG_INFINITY, |m, &q| m.max(q));
        let min = self.quotient.iter().fold(f64::INFINITY, |m, &q| m.min(q));
        max / min
    }

    /// Last over first quotient.
    pub fn growth(&self) -> f64 {
        match (self.quotient.first(), self.quotient.last()) {
            (Some(a), Some(b)) => b / a,
            _ => f64::NAN,
        }
    }

    /// `"k, quotient"` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k, quotient\n");
        for (k, q) in self.k.iter().zip(&self.quotient) {
            out.push_str(&alloc::format!("{k}, {q:e}\n"));
        }
        out
    }
}

fn check_decay(decay: f64) -> Result<()> {
    if !(decay > 0.0 && decay.is_finite()) {
        return Err(invalid("width decay must be positive"));
    }
    Ok(())
}

fn check_k_list(k_list: &[u32]) -> Result<()> {
    if k_list.is_empty() || k_list.contains(&0) {
        return Err(invalid("k-list must be nonempty with positive entries"));
    }
    Ok(())
}

/// Half-width `ε k^{−γ}` of the `k`-th bump.
pub fn probe_width(first: f64, decay: f64, k: u32) -> f64 {
    first * (k as f64).powf(-decay)
}

/// `k ↦ obs(y_k)/‖y_k‖_{H^s}` for `y_k = A² w_k`, with `w_k` the unit bump of
/// half-width `half_width·k^{−decay}` centred at `center`.
pub fn alpha_probe(
    setup: &ObsSetup,
    center: f64,
    half_width: f64,
    decay: f64,
    k_list: &[u32],
    profile: BumpProfile,
) -> Result<ProbeTrajectory> {
    check_k_list(k_list)?;
    check_decay(decay)?;
    let mut out = ProbeTrajectory::default();
    for &k in k_list {
        let (w, thin) = bump(&setup.basis, center, probe_width(half_width, decay, k), profile)?;
        if thin {
            out.warnings.push(alloc::format!("k = {k}: bump narrower than four grid cells"));
        }
        let y = apply_neg_a_power(&setup.basis, &w, 2.0);
        out.k.push(k);
        out.quotient.push(obs_seminorm(setup, &y)? / setup.ref_norm(&y));
        out.aux.push(hs_norm(&setup.basis, &w, 0.0));
    }
    Ok(out)
}

/// Parameters of the missing-ball construction.
#[derive(Clone, Debug, PartialEq)]
pub struct BallProbe {
    pub horizon: f64,
    pub n_t: usize,
    pub center: f64,
    pub radius: f64,
    pub profile: BumpProfile,
    /// Bump half-widths are `(r/2)·k^{−width_decay}`.
    pub width_decay: f64,
    /// Observe everywhere instead of outside the ball.
    pub full_mask: bool,
}

/// `k ↦ ‖Φ(T) z_k‖ / obs(z_k)` with `z_k = A^{J+1} w_k`, `J` the first index
/// with `h_J(T) ≠ 0` and `w_k` a unit bump of half-width `(r/2)·k^{−γ}`. The
/// companion values are `‖Φ(T) z_k‖ / |h_J(T)|`.
pub fn missing_ball_probe(basis: &EigenBasis, kernel: &ExpPolyFn, probe: &BallProbe, k_list: &[u32]) -> Result<ProbeTrajectory> {
    check_k_list(k_list)?;
    check_decay(probe.width_decay)?;
    let n_x = basis.grid().len();
    let mask = if probe.full_mask {
        Mask::from_fn(probe.horizon, probe.n_t, n_x, "full", |_, _| true)?
    } else {
        crate::geometry::missing_ball(probe.horizon, probe.n_t, n_x, probe.center, probe.radius)?
    };
    let opts = ObsOptions { alpha: Some(0.0), quadratic_forms: false, ..ObsOptions::default() };
    let setup = ObsSetup::new(basis, kernel, &mask, &opts)?;
    let order = first_nonzero_h_index(kernel, probe.horizon, 16)?;
    let hj = h_coeff(kernel, order).eval(probe.horizon).abs();
    let mut out = ProbeTrajectory::default();
    for &k in k_list {
        let (w, thin) = bump(basis, probe.center, probe_width(0.5 * probe.radius, probe.width_decay, k), probe.profile)?;
        if thin {
            out.warnings.push(alloc::format!("k = {k}: bump narrower than four grid cells"));
        }
        let z = apply_neg_a_power(basis, &w, (order + 1) as f64);
        let top = final_norm(&setup, &z);
        out.k.push(k);
        out.quotient.push(top / obs_seminorm(&setup, &z)?);
        out.aux.push(top / hj);
    }
    Ok(out)
}

/// One row of the local heat probe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeatProbeRow {
    pub s: f64,
    pub half_width: f64,
    /// `sup_t ‖e^{tA} z‖_{L²(Ω∖B(x0,r))} / ‖z‖_{H^s}`.
    pub ratio: f64,
}

/// Heat-flow leakage of bumps supported in `B(x0, r/2)` to the exterior of
/// `B(x0, r)`, for every `s`, bump width and `t` in the lists.
pub fn heat_local_probe(
    basis: &EigenBasis,
    x0: f64,
    r: f64,
    s_list: &[f64],
    t_list: &[f64],
    half_widths: &[f64],
    profile: BumpProfile,
) -> Result<Vec<HeatProbeRow>> {
    if half_widths.iter().any(|&w| !(w > 0.0) || w > 0.5 * r) {
        return Err(invalid("bump half-widths must lie in (0, r/2]"));
    }
    let outside: Vec<usize> = (0..basis.grid().len()).filter(|&i| (basis.grid()[i] - x0).abs() >= r).collect();
    let w = basis.weights();
    let mut rows = Vec::new();
    for &hw in half_widths {
        let (z, _) = bump(basis, x0, hw, profile)?;
        let mut leak = 0.0f64;
        for &t in t_list {
            let coeffs = z.coeffs.iter().zip(basis.eigenvalues()).map(|(a, eta)| a * (-eta * t).exp()).collect();
            let vals = evaluate_on_grid(basis, &SpectralVec::new(coeffs, 0.0))?;
            let sq: f64 = outside.iter().map(|&i| w[i] * vals[i] * vals[i]).sum();
            leak = leak.max(sq.sqrt());
        }
        for &s in s_list {
            rows.push(HeatProbeRow { s, half_width: hw, ratio: leak / hs_norm(basis, &z, s) });
        }
    }
    Ok(rows)
}

/// Aggregate of the observability quantities of one configuration.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ObsReport {
    pub two_sided: Option<TwoSided>,
    pub null: Option<NullConstant>,
    pub relaxed: Option<RelaxedFit>,
    pub rank: Option<(usize, f64)>,
    pub probes: Vec<(String, ProbeTrajectory)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cusp, zigzag};
    use crate::spectral::interval_basis;
    use core::f64::consts::PI;

    fn full(horizon: f64, n_t: usize, n_x: usize) -> Mask {
        Mask::from_fn(horizon, n_t, n_x, "full", |_, _| true).unwrap()
    }

    fn setup(j: usize, kernel: &ExpPolyFn, mask: &Mask, alpha: Option<f64>) -> ObsSetup {
        let basis = interval_basis(j, 8 * j.max(8)).unwrap();
        ObsSetup::new(&basis, kernel, mask, &ObsOptions { alpha, ..ObsOptions::default() }).unwrap()
    }

    #[test]
    fn single_mode_closed_form() {
        let mask = full(1.0, 16, 16);
        let s = setup(1, &ExpPolyFn::zero(), &mask, Some(0.0));
        let v = obs_seminorm(&s, &SpectralVec::unit(1, 0, 0.0)).unwrap();
        let exact = (1.0 - (-PI * PI).exp()) / (PI * PI);
        assert!((v - exact).abs() < 2e-4 * exact, "{v} vs {exact}");
    }

    #[test]
    fn empty_mask_and_homogeneity() {
        let empty = Mask::empty(1.0, 8, 8).unwrap();
        let s = setup(3, &ExpPolyFn::exp(-1.0), &empty, Some(2.0));
        let y = SpectralVec::new(alloc::vec![1.0, -2.0, 0.5], 0.0);
        assert_eq!(obs_seminorm(&s, &y).unwrap(), 0.0);
        assert!(s.is_blind());
        let (g, _) = gram_matrix(&s).unwrap();
        assert_eq!(g.norm(), 0.0);
        assert_eq!(unique_continuation_rank(&s).unwrap().0, 0);

        let z = zigzag(1.4, 28, 16, 0.4).unwrap();
        let s = setup(3, &ExpPolyFn::exp(-1.0), &z, Some(2.0));
        let a = obs_seminorm(&s, &y).unwrap();
        let mut scaled = y.clone();
        scaled.coeffs.iter_mut().for_each(|c| *c *= -3.5);
        assert!((obs_seminorm(&s, &scaled).unwrap() - 3.5 * a).abs() < 1e-12 * a);
    }

    #[test]
    fn quadratic_path_matches_grid_path() {
        let z = zigzag(1.4, 28, 32, 0.4).unwrap();
        let s = setup(4, &ExpPolyFn::exp(-1.0), &z, Some(2.0));
        let b = [0.3, -0.5, 0.7, 0.2];
        let direct = obs_seminorm(&s, &s.from_sphere(&b)).unwrap();
        let fast = s.obs_sphere(&b, None);
        assert!((direct - fast).abs() < 1e-11 * direct);
    }

    #[test]
    fn gram_properties() {
        let mask = full(1.0, 16, 32);
        let s = setup(4, &ExpPolyFn::zero(), &mask, Some(0.0));
        let (g, d) = gram_matrix(&s).unwrap();
        for j in 0..4 {
            let eta = s.basis().eta(j);
            let exact = (1.0 - (-2.0 * eta).exp()) / (2.0 * eta);
            assert!((g[(j, j)] - exact).abs() < 2e-3 * exact);
            assert!((d[(j, j)] - eta.powi(-4)).abs() < 1e-14 * eta.powi(-4));
            for k in 0..4 {
                if j != k {
                    assert!(g[(j, k)].abs() < 1e-8);
                }
            }
        }
        let z = zigzag(1.4, 28, 32, 0.3).unwrap();
        let s = setup(4, &ExpPolyFn::exp(-1.0), &z, Some(2.0));
        let (g, _) = gram_matrix(&s).unwrap();
        assert!((g.clone() - g.transpose()).norm() < 1e-14 * g.norm());
        let eig = SymmetricEigen::new(g.clone());
        assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-12 * g.trace()));
    }

    #[test]
    fn one_mode_sphere_is_two_points() {
        let mask = zigzag(1.4, 28, 16, 0.4).unwrap();
        let s = setup(1, &ExpPolyFn::exp(-1.0), &mask, Some(2.0));
        let c = two_sided_constants(&s, &OptimOptions::default()).unwrap();
        let e = SpectralVec::unit(1, 0, -4.0);
        let direct = obs_seminorm(&s, &e).unwrap() / s.ref_norm(&e);
        assert!((c.c_lower - direct).abs() < 1e-12 * direct);
        assert!((c.c_upper - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn two_sided_full_mask() {
        let mask = full(1.0, 16, 32);
        let s = setup(3, &ExpPolyFn::exp(-1.0), &mask, Some(2.0));
        let c = two_sided_constants(&s, &OptimOptions::default()).unwrap();
        assert!(c.c_lower > 0.0 && c.c_lower <= c.c_upper);
        assert!(c.lower_spread < 0.05, "{}", c.lower_spread);
        assert!(c.sandwich_ok);
        let w = obs_seminorm(&s, &c.witness_lower).unwrap() / s.ref_norm(&c.witness_lower);
        assert!((w - c.c_lower).abs() <= 1e-9 * c.c_lower);
    }

    #[test]
    fn weighted_window_sandwich() {
        let mask = full(1.0, 16, 32);
        let basis = interval_basis(3, 64).unwrap();
        let m = ExpPolyFn::exp(-1.0);
        let window = Some((0.5, 1.0));
        let plain = ObsSetup::new(&basis, &m, &mask, &ObsOptions { window, alpha: Some(2.0), ..ObsOptions::default() }).unwrap();
        assert_eq!(plain.alpha(), 0.0);
        let weighted =
            ObsSetup::new(&basis, &m, &mask, &ObsOptions { window, alpha: Some(2.0), override_weight: true, ..ObsOptions::default() })
                .unwrap();
        let y = SpectralVec::new(alloc::vec![0.2, 1.0, -0.4], 0.0);
        let (a, b) = (obs_seminorm(&plain, &y).unwrap(), obs_seminorm(&weighted, &y).unwrap());
        assert!(0.25 * a <= b * (1.0 + 1e-12) && b <= a * (1.0 + 1e-12));
    }

    #[test]
    fn null_constant_single_mode() {
        let mask = full(1.0, 16, 16);
        let s = setup(1, &ExpPolyFn::zero(), &mask, Some(0.0));
        let n = null_obs_constant(&s, &OptimOptions::default()).unwrap();
        let eta = PI * PI;
        let exact = (-eta).exp() / ((1.0 - (-eta).exp()) / eta);
        assert!((n.c_null - exact).abs() < 2e-4 * exact);
        assert!(!n.unbounded);
        let empty = Mask::empty(1.0, 16, 16).unwrap();
        let s = setup(2, &ExpPolyFn::zero(), &empty, Some(0.0));
        assert!(null_obs_constant(&s, &OptimOptions::default()).unwrap().unbounded);
    }

    #[test]
    fn relaxed_fit_empty_mask() {
        let empty = Mask::empty(1.0, 8, 8).unwrap();
        let s = setup(5, &ExpPolyFn::exp(-1.0), &empty, Some(2.0));
        let fit = relaxed_inequality_fit(&s, &OptimOptions::default()).unwrap();
        assert!((fit.c - 1.0 / s.basis().eta(4)).abs() < 1e-12 * fit.c);
        assert!(fit.samples >= 256);
    }

    #[test]
    fn rank_full_and_monotone() {
        let m = ExpPolyFn::exp(-1.0);
        let s = setup(4, &m, &full(1.0, 16, 32), Some(2.0));
        let (rank, sigma) = unique_continuation_rank(&s).unwrap();
        assert_eq!(rank, 4);
        assert!(sigma > 0.0);
        let small = cusp(1.0, 16, 32, 0.5, 0.0).unwrap();
        let (_, sigma_small) = unique_continuation_rank(&setup(4, &m, &small, Some(2.0))).unwrap();
        assert!(sigma_small <= sigma);
    }

    #[test]
    fn bumps_are_normalized_and_local() {
        let basis = interval_basis(64, 512).unwrap();
        for profile in [BumpProfile::Polynomial, BumpProfile::ZeroMoment] {
            let (w, thin) = bump(&basis, 0.5, 0.1, profile).unwrap();
            assert!(!thin);
            assert!((hs_norm(&basis, &w, 0.0) - 1.0).abs() < 1e-12);
        }
        assert!(bump(&basis, 0.5, 0.002, BumpProfile::Polynomial).unwrap().1);
    }

    #[test]
    fn heat_probe_includes_initial_time() {
        let basis = interval_basis(64, 512).unwrap();
        let rows = heat_local_probe(&basis, 0.5, 0.2, &[0.0], &[0.0], &[0.1], BumpProfile::Polynomial).unwrap();
        assert!(rows[0].ratio < 1e-3, "{}", rows[0].ratio);
    }
}
