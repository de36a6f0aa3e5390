//! Spectral summaries and the dense linear-algebra helpers used as oracles.
//!
//! Everything here that materializes an `n x n` matrix is gated by a
//! dimension cap; the distributed solve path never calls into it except to
//! pick the chain length on instances small enough to afford it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{SplitMatrix, STRUCTURE_TOL};

/// Largest dimension for which `SpectralMode::Exact` is allowed.
pub const EXACT_DIM_CAP: usize = 2000;

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const ZERO_EIG_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectralMode {
    Exact,
    Bound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub mu_min_nonzero: f64,
    pub mu_max: f64,
    pub kappa: f64,
    /// Number of (numerically) zero eigenvalues; `None` in bound mode.
    pub zero_eigenvalues: Option<usize>,
    pub mode: SpectralMode,
}

pub fn spectral_summary(m: &SplitMatrix, mode: SpectralMode) -> Result<SpectralSummary> {
    spectral_summary_capped(m, mode, EXACT_DIM_CAP)
}

pub fn spectral_summary_capped(
    m: &SplitMatrix,
    mode: SpectralMode,
    cap: usize,
) -> Result<SpectralSummary> {
    let n = m.dim();
    if n == 0 {
        return Err(Error::param("empty matrix has no spectrum"));
    }
    match mode {
        SpectralMode::Exact => {
            if n > cap {
                return Err(Error::OracleCap { dim: n, cap });
            }
            let eig = sorted_eigenvalues(&m.to_dense());
            let mu_max = *eig.last().unwrap();
            if mu_max <= 0.0 {
                return Err(Error::Singular("matrix has no positive eigenvalue".into()));
            }
            let zero_tol = ZERO_EIG_REL_TOL * mu_max;
            let zeros = eig.iter().filter(|&&e| e.abs() <= zero_tol).count();
            let mu_min_nonzero = eig.iter().copied().find(|&e| e > zero_tol).unwrap();
            Ok(SpectralSummary {
                mu_min_nonzero,
                mu_max,
                kappa: (mu_max / mu_min_nonzero).abs(),
                zero_eigenvalues: Some(zeros),
                mode,
            })
        }
        SpectralMode::Bound => {
            let (w_min, w_max) = weight_extremes(m);
            let nf = n as f64;
            // Laplacians (no slack anywhere) vs. grounded/nonsingular matrices.
            let singular_like = (0..n).all(|k| m.slack(k) <= STRUCTURE_TOL * m.diag()[k]);
            let power = if singular_like { 3 } else { 4 };
            let kappa = (nf.powi(power) * w_max / w_min).max(1.0);
            let mu_max = (0..n)
                .map(|k| m.diag()[k] + m.row(k).iter().map(|&(_, v)| v).sum::<f64>())
                .fold(0.0, f64::max);
            Ok(SpectralSummary {
                mu_min_nonzero: mu_max / kappa,
                mu_max,
                kappa,
                zero_eigenvalues: None,
                mode,
            })
        }
    }
}

/// Smallest and largest "weights" of the graph behind `m`: the off-diagonal
/// entries plus any positive row slack (an edge to the grounded node).
fn weight_extremes(m: &SplitMatrix) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for k in 0..m.dim() {
        for &(_, v) in m.row(k) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let s = m.slack(k);
        if s > STRUCTURE_TOL * m.diag()[k] {
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }
    if !lo.is_finite() {
        (1.0, 1.0)
    } else {
        (lo, hi)
    }
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut eig: Vec<f64> = SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Moore-Penrose pseudoinverse of a symmetric positive semidefinite matrix,
/// dropping eigenvalues below `ZERO_EIG_REL_TOL` times the largest.
pub fn psd_pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let top = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let tol = ZERO_EIG_REL_TOL * top;
    let inv = eig
        .eigenvalues
        .map(|e| if e.abs() > tol { 1.0 / e } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Symmetric square root (and inverse square root) of an SPD matrix.
pub fn spd_sqrt_pair(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let s = eig.eigenvalues.map(|e| e.max(0.0).sqrt());
    let s_inv = s.map(|e| if e > 0.0 { 1.0 / e } else { 0.0 });
    let v = &eig.eigenvectors;
    (
        v * DMatrix::from_diagonal(&s) * v.transpose(),
        v * DMatrix::from_diagonal(&s_inv) * v.transpose(),
    )
}

/// Dense solve used as the reference solution for SPD systems.
pub fn dense_spd_solve(m: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("Cholesky factorization failed".into()))?;
    Ok(chol
        .solve(&DVector::from_column_slice(b))
        .iter()
        .copied()
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::WeightedGraph;
    use crate::matrix::laplacian;

    #[test]
    fn identity_has_unit_kappa() {
        let id = SplitMatrix::new(vec![1.0; 4], vec![vec![]; 4]).unwrap();
        let s = spectral_summary(&id, SpectralMode::Exact).unwrap();
        assert!((s.kappa - 1.0).abs() < 1e-12);
        assert_eq!(s.zero_eigenvalues, Some(0));
    }

    #[test]
    fn single_edge_laplacian_kappa() {
        let g = WeightedGraph::new(2, vec![(0, 1, 1.0)]).unwrap();
        let s = spectral_summary(&laplacian(&g), SpectralMode::Exact).unwrap();
        assert!((s.mu_max - 2.0).abs() < 1e-12);
        assert!((s.kappa - 1.0).abs() < 1e-12);
        assert_eq!(s.zero_eigenvalues, Some(1));
    }

    #[test]
    fn path_p3_kappa() {
        // characteristic polynomial of [[1,-1,0],[-1,2,-1],[0,-1,1]] is -t(t-1)(t-3)
        let g = WeightedGraph::new(3, vec![(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let s = spectral_summary(&laplacian(&g), SpectralMode::Exact).unwrap();
        assert!((s.mu_min_nonzero - 1.0).abs() < 1e-12);
        assert!((s.mu_max - 3.0).abs() < 1e-12);
        assert!((s.kappa - 3.0).abs() < 1e-12);
    }

    #[test]
    fn bound_mode_formula() {
        let g = WeightedGraph::new(3, vec![(0, 1, 1.0), (1, 2, 4.0)]).unwrap();
        let l = laplacian(&g);
        let s = spectral_summary(&l, SpectralMode::Bound).unwrap();
        assert_eq!(s.kappa, 27.0 * 4.0);
        let gr = crate::matrix::ground(&l, 0).unwrap();
        let s = spectral_summary(&gr.matrix, SpectralMode::Bound).unwrap();
        assert_eq!(s.kappa, 16.0 * 4.0);
        let exact = spectral_summary(&gr.matrix, SpectralMode::Exact).unwrap();
        assert!(exact.kappa <= s.kappa);
    }

    #[test]
    fn exact_mode_respects_cap() {
        let id = SplitMatrix::new(vec![1.0; 5], vec![vec![]; 5]).unwrap();
        assert!(matches!(
            spectral_summary_capped(&id, SpectralMode::Exact, 4),
            Err(Error::OracleCap { dim: 5, cap: 4 })
        ));
    }
}
