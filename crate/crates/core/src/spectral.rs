//! Dirichlet eigenbasis, the `H^s` scale and diagonal powers of `−A`.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};

/// Eigenpairs of the Dirichlet Laplacian sampled on a spatial grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenBasis {
    domain_id: String,
    eigenvalues: Vec<f64>,
    grid: Vec<f64>,
    weights: Vec<f64>,
    /// `modes[j][i] = e_{j+1}(grid[i])`
    modes: Vec<Vec<f64>>,
}

/// Orthonormality tolerance for user-supplied bases.
pub const ORTHONORMALITY_TOL: f64 = 1e-8;

/// `η_j = (jπ)²`, `e_j = √2 sin(jπx)` on the `n_x` cell midpoints of `(0,1)`
/// with weights `1/n_x`.
pub fn interval_basis(modes: usize, n_x: usize) -> Result<EigenBasis> {
    if modes == 0 {
        return Err(invalid("mode count must be at least 1"));
    }
    if n_x < 4 * modes {
        return Err(invalid("grid must have at least 4 points per mode"));
    }
    let h = 1.0 / n_x as f64;
    let grid: Vec<f64> = (0..n_x).map(|i| (i as f64 + 0.5) * h).collect();
    let eigenvalues = (1..=modes).map(|j| (j as f64 * PI).powi(2)).collect();
    let modes = (1..=modes).map(|j| grid.iter().map(|&x| 2f64.sqrt() * (j as f64 * PI * x).sin()).collect()).collect();
    Ok(EigenBasis { domain_id: String::from("interval"), eigenvalues, grid, weights: alloc::vec![h; n_x], modes })
}

impl EigenBasis {
    /// Validates a user-supplied basis: positive strictly increasing
    /// eigenvalues and grid-orthonormal modes.
    pub fn custom(domain_id: &str, eigenvalues: Vec<f64>, grid: Vec<f64>, weights: Vec<f64>, modes: Vec<Vec<f64>>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(invalid("basis needs at least one mode"));
        }
        if eigenvalues[0] <= 0.0 || eigenvalues.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("eigenvalues must be positive and strictly increasing"));
        }
        if modes.len() != eigenvalues.len() {
            return Err(Error::Dimension { expected: eigenvalues.len(), found: modes.len() });
        }
        if weights.len() != grid.len() {
            return Err(Error::Dimension { expected: grid.len(), found: weights.len() });
        }
        if let Some(bad) = modes.iter().find(|m| m.len() != grid.len()) {
            return Err(Error::Dimension { expected: grid.len(), found: bad.len() });
        }
        let basis = Self { domain_id: String::from(domain_id), eigenvalues, grid, weights, modes };
        let defect = basis.orthonormality_defect();
        if defect > ORTHONORMALITY_TOL {
            return Err(Error::Mismatch { what: "basis orthonormality", discrepancy: defect, tolerance: ORTHONORMALITY_TOL });
        }
        Ok(basis)
    }

    pub fn domain_id(&self) -> &str {
        &self.domain_id
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eta(&self, j: usize) -> f64 {
        self.eigenvalues[j]
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Samples of mode `j` (zero-based) on the grid.
    pub fn mode(&self, j: usize) -> &[f64] {
        &self.modes[j]
    }

    /// Discrete inner product on the grid.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights.iter().zip(f).zip(g).map(|((w, a), b)| w * a * b).sum()
    }

    /// `max_{i,j} |⟨e_i, e_j⟩_grid − δ_ij|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.len() {
            for j in i..self.len() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((self.inner(&self.modes[i], &self.modes[j]) - target).abs());
            }
        }
        worst
    }

    /// Restriction to the first `modes` eigenpairs.
    pub fn truncate(&self, modes: usize) -> Result<Self> {
        if modes == 0 || modes > self.len() {
            return Err(invalid("truncation must keep between 1 and all modes"));
        }
        let mut out = self.clone();
        out.eigenvalues.truncate(modes);
        out.modes.truncate(modes);
        Ok(out)
    }
}

/// Coefficients `(a_j)_{j≤J}` in the eigenbasis with a declared Sobolev
/// exponent.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralVec {
    pub coeffs: Vec<f64>,
    pub s: f64,
}

impl SpectralVec {
    pub fn new(coeffs: Vec<f64>, s: f64) -> Self {
        Self { coeffs, s }
    }

    pub fn zeros(modes: usize, s: f64) -> Self {
        Self { coeffs: alloc::vec![0.0; modes], s }
    }

    /// The `j`-th (zero-based) unit vector.
    pub fn unit(modes: usize, j: usize, s: f64) -> Self {
        let mut v = Self::zeros(modes, s);
        v.coeffs[j] = 1.0;
        v
    }

    /// Independent standard normal coefficients.
    pub fn random(modes: usize, s: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self { coeffs: (0..modes).map(|_| StandardNormal.sample(&mut rng)).collect(), s }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `⟨u, v⟩_{H^0}`.
    pub fn dot(&self, other: &Self) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    pub fn axpy(&mut self, alpha: f64, x: &Self) {
        for (a, b) in self.coeffs.iter_mut().zip(&x.coeffs) {
            *a += alpha * b;
        }
    }

    /// `"s, a_1, …, a_J"`.
    pub fn to_csv_line(&self) -> String {
        let mut line = alloc::format!("{:e}", self.s);
        for a in &self.coeffs {
            line.push_str(&alloc::format!(", {a:e}"));
        }
        line
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let mut values = Vec::new();
        let mut offset = 0;
        for raw in line.split(',') {
            let field = raw.trim();
            let position = offset + (raw.len() - raw.trim_start().len());
            let value = field.parse().map_err(|_| Error::Parse { position, message: alloc::format!("invalid number '{field}'") })?;
            values.push(value);
            offset += raw.len() + 1;
        }
        let s = values.remove(0);
        Ok(Self { coeffs: values, s })
    }
}

/// `(Σ a_j² η_j^s)^{1/2}`.
pub fn hs_norm(basis: &EigenBasis, v: &SpectralVec, s: f64) -> f64 {
    v.coeffs.iter().zip(&basis.eigenvalues).map(|(a, eta)| a * a * eta.powf(s)).sum::<f64>().sqrt()
}

/// `A^k`: `a_j ↦ (−η_j)^k a_j`. The declared exponent drops by `2k`.
pub fn apply_a_power(basis: &EigenBasis, v: &SpectralVec, k: i32) -> SpectralVec {
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    let coeffs = v.coeffs.iter().zip(&basis.eigenvalues).map(|(a, eta)| sign * eta.powi(k) * a).collect();
    SpectralVec { coeffs, s: v.s - 2.0 * k as f64 }
}

/// `(−A)^k` for real `k`: `a_j ↦ η_j^k a_j`. The declared exponent drops by `2k`.
pub fn apply_neg_a_power(basis: &EigenBasis, v: &SpectralVec, k: f64) -> SpectralVec {
    let coeffs = v.coeffs.iter().zip(&basis.eigenvalues).map(|(a, eta)| eta.powf(k) * a).collect();
    SpectralVec { coeffs, s: v.s - 2.0 * k }
}

/// `a_j = ⟨f, e_j⟩_grid`.
pub fn project_function(basis: &EigenBasis, samples: &[f64]) -> Result<SpectralVec> {
    if samples.len() != basis.grid.len() {
        return Err(Error::Dimension { expected: basis.grid.len(), found: samples.len() });
    }
    let coeffs = basis.modes.iter().map(|e| basis.inner(samples, e)).collect();
    Ok(SpectralVec { coeffs, s: 0.0 })
}

/// `Σ a_j e_j` on the grid.
pub fn evaluate_on_grid(basis: &EigenBasis, v: &SpectralVec) -> Result<Vec<f64>> {
    if v.len() != basis.len() {
        return Err(Error::Dimension { expected: basis.len(), found: v.len() });
    }
    let mut out = alloc::vec![0.0; basis.grid.len()];
    for (a, e) in v.coeffs.iter().zip(&basis.modes) {
        for (o, x) in out.iter_mut().zip(e) {
            *o += a * x;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_eigenpair() {
        let b = interval_basis(1, 4).unwrap();
        assert!((b.eta(0) - 9.869_604_401_089_358).abs() < 1e-12);
        let mid = interval_basis(1, 5).unwrap();
        assert!((mid.mode(0)[2] - 2f64.sqrt()).abs() < 1e-15);
        assert!(interval_basis(4, 15).is_err());
    }

    #[test]
    fn grid_orthonormal() {
        let b = interval_basis(32, 128).unwrap();
        assert!(b.orthonormality_defect() < 1e-10);
        assert!(b.inner(b.mode(1), b.mode(2)).abs() < 1e-10);
    }

    #[test]
    fn norms_and_powers() {
        let b = interval_basis(3, 12).unwrap();
        let e1 = SpectralVec::unit(3, 0, 0.0);
        assert!((hs_norm(&b, &e1, -4.0) - PI.powi(-4)).abs() < 1e-18);
        assert_eq!(hs_norm(&b, &SpectralVec::zeros(3, 0.0), 2.0), 0.0);
        let inv = apply_a_power(&b, &e1, -1);
        assert!((inv.coeffs[0] + PI.powi(-2)).abs() < 1e-16);
        assert_eq!(apply_a_power(&b, &e1, 0), e1);
    }

    #[test]
    fn custom_basis_rejects_bad_input() {
        let b = interval_basis(2, 8).unwrap();
        let grid = b.grid().to_vec();
        let w = b.weights().to_vec();
        let modes: Vec<Vec<f64>> = (0..2).map(|j| b.mode(j).to_vec()).collect();
        assert!(EigenBasis::custom("copy", b.eigenvalues().to_vec(), grid.clone(), w.clone(), modes.clone()).is_ok());
        assert!(EigenBasis::custom("dec", alloc::vec![2.0, 1.0], grid.clone(), w.clone(), modes.clone()).is_err());
        let scaled: Vec<Vec<f64>> = modes.iter().map(|m| m.iter().map(|x| 1.1 * x).collect()).collect();
        assert!(EigenBasis::custom("scaled", b.eigenvalues().to_vec(), grid, w, scaled).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let v = SpectralVec::new(alloc::vec![1.5, -2.25e-7, 0.0], -4.0);
        let line = v.to_csv_line();
        assert_eq!(SpectralVec::from_csv_line(&line).unwrap(), v);
        assert!(matches!(SpectralVec::from_csv_line("0, 1, x"), Err(Error::Parse { position: 6, .. })));
    }
}
