use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{InverseChain, CHAIN_DENSE_CAP};
use crate::error::{Error, Result};
use crate::spectral::{EXACT_DIM_CAP, ZERO_EIG_REL_TOL};

/// Smallest `alpha` with `e^-alpha X <= Y <= e^alpha X` on the common range.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ApproxFactor {
    pub alpha: f64,
}

impl ApproxFactor {
    pub fn within(&self, budget: f64) -> bool {
        self.alpha <= budget
    }
}

/// Measures the spectral approximation factor between two symmetric PSD
/// matrices through the generalized eigenvalues of `(X, Y)` on range(X).
pub fn loewner_approx_factor(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<ApproxFactor> {
    let n = x.nrows();
    if x.shape() != (n, n) || y.shape() != (n, n) {
        return Err(Error::Structure(format!(
            "need square matrices of equal size, got {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    if n > EXACT_DIM_CAP {
        return Err(Error::OracleCap {
            dim: n,
            cap: EXACT_DIM_CAP,
        });
    }
    for (name, m) in [("X", x), ("Y", y)] {
        let scale = m.abs().max().max(f64::MIN_POSITIVE);
        if (m - m.transpose()).abs().max() > 1e-10 * scale {
            return Err(Error::Structure(format!("{name} is not symmetric")));
        }
    }

    let ex = SymmetricEigen::new(x.clone());
    let ey = SymmetricEigen::new(y.clone());
    let top_x = ex.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let top_y = ey.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let rank = |vals: &nalgebra::DVector<f64>, top: f64| {
        vals.iter().filter(|&&v| v > ZERO_EIG_REL_TOL * top).count()
    };
    let (rx, ry) = (rank(&ex.eigenvalues, top_x), rank(&ey.eigenvalues, top_y));
    if rx != ry {
        return Err(Error::NullSpaceMismatch(format!(
            "rank(X) = {rx}, rank(Y) = {ry}"
        )));
    }
    if rx == 0 {
        return Ok(ApproxFactor { alpha: 0.0 });
    }

    let keep: Vec<usize> = (0..n)
        .filter(|&i| ex.eigenvalues[i] > ZERO_EIG_REL_TOL * top_x)
        .collect();
    let null: Vec<usize> = (0..n).filter(|i| !keep.contains(i)).collect();
    if !null.is_empty() {
        let u0 = ex.eigenvectors.select_columns(&null);
        let leak = (y * &u0).norm();
        if leak > 1e-8 * top_y * (n as f64).sqrt() {
            return Err(Error::NullSpaceMismatch(format!(
                "Y does not vanish on the null space of X (|Y U0| = {leak:.3e})"
            )));
        }
    }
    let ur = ex.eigenvectors.select_columns(&keep);
    let scale = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        keep.len(),
        keep.iter().map(|&i| 1.0 / ex.eigenvalues[i].sqrt()),
    ));
    let s = &scale * ur.transpose() * y * &ur * &scale;
    let s = (&s + s.transpose()) * 0.5;
    let theta = SymmetricEigen::new(s).eigenvalues;
    let mut alpha: f64 = 0.0;
    for &t in theta.iter() {
        if t <= 0.0 {
            return Err(Error::NullSpaceMismatch(format!(
                "generalized eigenvalue {t:.3e} is not positive"
            )));
        }
        alpha = alpha.max(t.ln().abs());
    }
    Ok(ApproxFactor { alpha })
}

/// Measured approximation factors of every chain condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainVerification {
    /// `measured[i]` for `i < d` is the larger of the two conditions that
    /// tie level `i + 1` to level `i`; `measured[d]` compares `D_d` with `M_d`.
    pub measured: Vec<f64>,
    pub eps_d: f64,
    /// Levels whose measurement exceeds the declared budget.
    pub flagged: Vec<usize>,
}

/// Slack allowed between a measured factor and its declared budget.
pub const VERIFY_TOL: f64 = 1e-10;

pub fn verify_chain(chain: &InverseChain) -> Result<ChainVerification> {
    let n = chain.dim();
    if !chain.is_materialized() {
        return Err(Error::OracleCap {
            dim: n,
            cap: CHAIN_DENSE_CAP,
        });
    }
    let d = chain.depth();
    let diag = chain.base().diag_dense();
    let d_inv = DMatrix::from_diagonal(&diag.diagonal().map(|v| 1.0 / v));
    let mut measured = Vec::with_capacity(d + 1);
    for i in 1..=d {
        let a_prev = chain.level_offdiag_dense(i - 1).unwrap();
        let squared = &diag - a_prev * &d_inv * a_prev;
        let squared = (&squared + squared.transpose()) * 0.5;
        let level = chain.level_matrix_dense(i).unwrap();
        let c1 = loewner_approx_factor(&squared, &level)?.alpha;
        let c2 = loewner_approx_factor(&diag, &diag)?.alpha;
        measured.push(c1.max(c2));
    }
    let eps_d = loewner_approx_factor(&diag, &chain.level_matrix_dense(d).unwrap())?.alpha;
    measured.push(eps_d);
    let flagged = measured
        .iter()
        .zip(chain.epsilons())
        .enumerate()
        .filter(|(_, (m, e))| **m > **e + VERIFY_TOL)
        .map(|(i, _)| i)
        .collect();
    Ok(ChainVerification {
        measured,
        eps_d,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_chain_for, build_exact_chain, chain_budget};
    use crate::graph::WeightedGraph;
    use crate::matrix::{ground, laplacian};

    #[test]
    fn identical_and_scaled() {
        let x = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        assert!(loewner_approx_factor(&x, &x).unwrap().alpha < 1e-12);
        let y = &x * std::f64::consts::E;
        assert!((loewner_approx_factor(&x, &y).unwrap().alpha - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_pairs_use_the_common_range() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert!((loewner_approx_factor(&l, &(&l * 2.0)).unwrap().alpha - 2f64.ln()).abs() < 1e-12);
        let id = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(
            loewner_approx_factor(&l, &id),
            Err(Error::NullSpaceMismatch(_))
        ));
    }

    #[test]
    fn p3_level_d_within_budget() {
        let g = WeightedGraph::new(3, vec![(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let m = ground(&laplacian(&g), 1).unwrap().matrix;
        let (chain, _) = build_chain_for(&m).unwrap();
        let v = verify_chain(&chain).unwrap();
        assert!(v.eps_d < chain_budget());
        assert!(v.flagged.is_empty());
        for e in &v.measured[..chain.depth()] {
            assert!(*e < 1e-10);
        }
    }

    /// Cliques of size `k` joined in a path by single edges.
    fn clique_path(k: usize, blocks: usize) -> WeightedGraph {
        let mut e = vec![];
        for b in 0..blocks {
            for i in 0..k {
                for j in i + 1..k {
                    e.push((b * k + i, b * k + j, 1.0));
                }
            }
            if b + 1 < blocks {
                e.push((b * k + k - 1, (b + 1) * k, 1.0));
            }
        }
        WeightedGraph::new(k * blocks, e).unwrap()
    }

    #[test]
    fn shortened_chains() {
        let m = ground(&laplacian(&clique_path(8, 8)), 0).unwrap().matrix;
        let (full, kappa) = build_chain_for(&m).unwrap();
        assert!(kappa > 1e3);
        // one level short still fits, since 1 - rho >= 1/kappa
        let v = verify_chain(&build_exact_chain(&m, full.depth() - 1).unwrap()).unwrap();
        assert!(v.flagged.is_empty());
        let short = build_exact_chain(&m, full.depth() - 2).unwrap();
        let v = verify_chain(&short).unwrap();
        assert!(v.eps_d > chain_budget());
        assert_eq!(v.flagged, vec![short.depth()]);
    }
}
