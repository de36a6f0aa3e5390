//! Inverse approximated chains and the centralized reference solvers.
//!
//! The chain used throughout is the exact-squaring chain of `M0 = D0 - A0`:
//! every level keeps `D_i = D0` and `A_i = D0 (D0^{-1} A0)^(2^i)`, so that
//! `D_i - A_i = D_{i-1} - A_{i-1} D_{i-1}^{-1} A_{i-1}` holds exactly and the
//! only approximation is replacing `M_d` by `D_d` at the bottom.

mod export;
mod loewner;

pub use export::{export_chain, import_chain, ChainManifest};
pub use loewner::{loewner_approx_factor, verify_chain, ApproxFactor, ChainVerification};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::{norm2, SplitMatrix, STRUCTURE_TOL};
use crate::spectral::{spectral_summary, SpectralMode};

/// Budget on the total chain error under which Richardson converges.
pub fn chain_budget() -> f64 {
    std::f64::consts::LN_2 / 3.0
}

/// Chains of dimension up to this are materialized densely.
pub const CHAIN_DENSE_CAP: usize = 200;

/// `d = ceil(log2(2 ln(2^(1/3) / (2^(1/3) - 1)) kappa))`.
pub fn chain_length(kappa: f64) -> Result<usize> {
    if !(kappa.is_finite() && kappa >= 1.0) {
        return Err(Error::param(format!(
            "condition number must be >= 1, got {kappa}"
        )));
    }
    let c = 2f64.cbrt();
    let d = (2.0 * (c / (c - 1.0)).ln() * kappa).log2().ceil();
    Ok(d.max(1.0) as usize)
}

#[derive(Debug, Clone)]
pub struct InverseChain {
    base: SplitMatrix,
    depth: usize,
    epsilons: Vec<f64>,
    /// `A_i` for `i = 0..=d`, present when `dim <= CHAIN_DENSE_CAP`.
    dense: Option<Vec<DMatrix<f64>>>,
}

/// An SDDM matrix is nonsingular iff every connected component of its
/// support graph contains a strictly dominant row.
pub(crate) fn check_nonsingular(m: &SplitMatrix) -> Result<()> {
    let report = m.sddm_report();
    if !report.is_sddm {
        return Err(Error::Structure(format!(
            "matrix is not diagonally dominant in rows {:?}",
            report.violating_rows
        )));
    }
    let n = m.dim();
    let mut seen = vec![false; n];
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut stack = vec![s];
        seen[s] = true;
        let mut strict = false;
        while let Some(u) = stack.pop() {
            strict |= m.slack(u) > STRUCTURE_TOL * m.diag()[u];
            for &(v, _) in m.row(u) {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        if !strict {
            return Err(Error::Singular(format!(
                "the component containing row {s} has no strictly dominant row; ground the Laplacian first"
            )));
        }
    }
    Ok(())
}

/// Builds the exact-squaring chain of depth `d`. Declared budgets are zero
/// on levels `0..d` and `ln(2)/3` on level `d`.
pub fn build_exact_chain(m0: &SplitMatrix, d: usize) -> Result<InverseChain> {
    if d == 0 {
        return Err(Error::param("chain length must be at least 1"));
    }
    if m0.dim() == 0 {
        return Err(Error::param("empty matrix"));
    }
    check_nonsingular(m0)?;
    let mut epsilons = vec![0.0; d + 1];
    epsilons[d] = chain_budget();
    let dense = (m0.dim() <= CHAIN_DENSE_CAP).then(|| {
        let d0 = m0.diag_dense();
        let d0_inv = DMatrix::from_diagonal(&DVector::from_iterator(
            m0.dim(),
            m0.diag().iter().map(|v| 1.0 / v),
        ));
        let mut power = &d0_inv * m0.offdiag_dense(); // (D^{-1} A)^(2^i)
        let mut levels = Vec::with_capacity(d + 1);
        for i in 0..=d {
            if i > 0 {
                power = &power * &power;
            }
            let a_i = &d0 * &power;
            // symmetrize away rounding
            levels.push((&a_i + a_i.transpose()) * 0.5);
        }
        levels
    });
    Ok(InverseChain {
        base: m0.clone(),
        depth: d,
        epsilons,
        dense,
    })
}

/// Chain with `d = chain_length(kappa)` where `kappa` is computed exactly.
pub fn build_chain_for(m0: &SplitMatrix) -> Result<(InverseChain, f64)> {
    let kappa = spectral_summary(m0, SpectralMode::Exact)?.kappa;
    Ok((build_exact_chain(m0, chain_length(kappa)?)?, kappa))
}

impl InverseChain {
    pub fn base(&self) -> &SplitMatrix {
        &self.base
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// Declared `eps_0 ..= eps_d`.
    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn total_epsilon(&self) -> f64 {
        self.epsilons.iter().sum()
    }

    /// Replaces the declared budgets (for example with measured values).
    pub fn with_epsilons(mut self, eps: Vec<f64>) -> Result<Self> {
        if eps.len() != self.depth + 1 || eps.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::param(format!(
                "need {} non-negative budgets",
                self.depth + 1
            )));
        }
        self.epsilons = eps;
        Ok(self)
    }

    pub fn is_materialized(&self) -> bool {
        self.dense.is_some()
    }

    /// `D_i` (identical on every level of the exact chain).
    pub fn level_diag(&self, _i: usize) -> &[f64] {
        self.base.diag()
    }

    /// Dense `A_i`, when materialized.
    pub fn level_offdiag_dense(&self, i: usize) -> Option<&DMatrix<f64>> {
        self.dense.as_ref().map(|l| &l[i])
    }

    /// Dense `M_i = D_i - A_i`, when materialized.
    pub fn level_matrix_dense(&self, i: usize) -> Option<DMatrix<f64>> {
        self.level_offdiag_dense(i)
            .map(|a| self.base.diag_dense() - a)
    }

    /// `A_i D_i^{-1} v = (A0 D0^{-1})^(2^i) v`
    pub fn apply_a_dinv(&self, i: usize, v: &[f64]) -> Vec<f64> {
        match &self.dense {
            Some(levels) => {
                let scaled: Vec<f64> = v.iter().zip(self.base.diag()).map(|(x, d)| x / d).collect();
                mat_vec(&levels[i], &scaled)
            }
            None => {
                let mut out = v.to_vec();
                for _ in 0..(1usize << i) {
                    out = self.base.apply_a_dinv(&out);
                }
                out
            }
        }
    }

    /// `D_i^{-1} A_i v = (D0^{-1} A0)^(2^i) v`
    pub fn apply_dinv_a(&self, i: usize, v: &[f64]) -> Vec<f64> {
        match &self.dense {
            Some(levels) => mat_vec(&levels[i], v)
                .into_iter()
                .zip(self.base.diag())
                .map(|(x, d)| x / d)
                .collect(),
            None => {
                let mut out = v.to_vec();
                for _ in 0..(1usize << i) {
                    out = self.base.apply_dinv_a(&out);
                }
                out
            }
        }
    }
}

fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(v))
        .iter()
        .copied()
        .collect()
}

/// The crude chain solve: forward pass `b_i = (I + A_{i-1} D_{i-1}^{-1}) b_{i-1}`,
/// `x_d = D_d^{-1} b_d`, then `x_i = (D_i^{-1} b_i + (I + D_i^{-1} A_i) x_{i+1}) / 2`.
pub fn parallel_r_solve(chain: &InverseChain, b0: &[f64]) -> Result<Vec<f64>> {
    let n = chain.dim();
    if b0.len() != n {
        return Err(Error::param(format!(
            "right-hand side has length {}, chain dimension is {n}",
            b0.len()
        )));
    }
    let d = chain.depth();
    let diag = chain.base().diag();
    let mut bs = Vec::with_capacity(d + 1);
    bs.push(b0.to_vec());
    for i in 1..=d {
        let prev = &bs[i - 1];
        let u = chain.apply_a_dinv(i - 1, prev);
        bs.push(prev.iter().zip(&u).map(|(b, u)| b + u).collect());
    }
    let mut x: Vec<f64> = bs[d].iter().zip(diag).map(|(b, dk)| b / dk).collect();
    for i in (0..d).rev() {
        let eta = chain.apply_dinv_a(i, &x);
        x = (0..n)
            .map(|k| 0.5 * (bs[i][k] / diag[k] + x[k] + eta[k]))
            .collect();
    }
    Ok(x)
}

/// When to stop preconditioned Richardson.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Stop once `||M y - b||_2 / ||b||_2 <= threshold`; fail after `q_max` sweeps.
    Residual { threshold: f64, q_max: usize },
    /// Run exactly this many sweeps (makes the solve a fixed linear operator).
    Fixed(usize),
}

impl StopRule {
    /// Threshold `eps / sqrt(kappa_hat)` and cap `ceil(6 ln(1/eps)) + 2`.
    pub fn for_precision(eps: f64, kappa_hat: f64) -> Result<Self> {
        check_eps(eps)?;
        Ok(StopRule::Residual {
            threshold: eps / kappa_hat.max(1.0).sqrt(),
            q_max: sweep_cap(eps),
        })
    }

    pub fn max_sweeps(&self) -> usize {
        match *self {
            StopRule::Residual { q_max, .. } => q_max,
            StopRule::Fixed(q) => q,
        }
    }

    /// True when iteration should stop after a sweep with this residual.
    pub fn done(&self, sweeps: usize, rel_residual: f64) -> bool {
        match *self {
            StopRule::Residual { threshold, .. } => rel_residual <= threshold,
            StopRule::Fixed(q) => sweeps >= q,
        }
    }

    pub fn threshold(&self) -> f64 {
        match *self {
            StopRule::Residual { threshold, .. } => threshold,
            StopRule::Fixed(_) => 0.0,
        }
    }
}

pub fn sweep_cap(eps: f64) -> usize {
    (6.0 * (1.0 / eps).ln()).ceil() as usize + 2
}

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps <= 0.5 {
        Ok(())
    } else {
        Err(Error::param(format!(
            "precision must lie in (0, 1/2], got {eps}"
        )))
    }
}

/// Stop rule for `m0` at precision `eps`, using the bound-mode condition number.
pub fn default_stop_rule(m0: &SplitMatrix, eps: f64) -> Result<StopRule> {
    let kappa_hat = spectral_summary(m0, SpectralMode::Bound)?.kappa;
    StopRule::for_precision(eps, kappa_hat)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RichardsonOutcome {
    pub x: Vec<f64>,
    pub sweeps: usize,
    /// Relative residual after each sweep.
    pub residuals: Vec<f64>,
}

pub(crate) fn relative_residual(m: &SplitMatrix, y: &[f64], b: &[f64]) -> f64 {
    let my = m.apply(y);
    let r: Vec<f64> = my.iter().zip(b).map(|(a, b)| a - b).collect();
    norm2(&r) / norm2(b)
}

pub(crate) fn check_chain_budget(chain: &InverseChain) -> Result<()> {
    let total = chain.total_epsilon();
    if total < chain_budget() + 1e-15 {
        Ok(())
    } else {
        Err(Error::param(format!(
            "chain budget {total:.4} is not below ln(2)/3"
        )))
    }
}

/// Preconditioned Richardson on top of [`parallel_r_solve`] with the default
/// stop rule for `eps`.
pub fn parallel_e_solve(chain: &InverseChain, b0: &[f64], eps: f64) -> Result<RichardsonOutcome> {
    let rule = default_stop_rule(chain.base(), eps)?;
    parallel_e_solve_with(chain, b0, rule)
}

pub fn parallel_e_solve_with(
    chain: &InverseChain,
    b0: &[f64],
    rule: StopRule,
) -> Result<RichardsonOutcome> {
    check_chain_budget(chain)?;
    let m = chain.base();
    let n = m.dim();
    if b0.len() != n {
        return Err(Error::param(format!(
            "right-hand side has length {}, matrix dimension is {n}",
            b0.len()
        )));
    }
    if b0.iter().all(|&v| v == 0.0) {
        return Ok(RichardsonOutcome {
            x: vec![0.0; n],
            sweeps: 0,
            residuals: Vec::new(),
        });
    }
    let chi = parallel_r_solve(chain, b0)?;
    let mut y = vec![0.0; n];
    let mut residuals = Vec::new();
    for t in 1..=rule.max_sweeps() {
        let u1 = m.apply(&y);
        let u2 = parallel_r_solve(chain, &u1)?;
        for k in 0..n {
            y[k] = y[k] - u2[k] + chi[k];
        }
        let res = relative_residual(m, &y, b0);
        residuals.push(res);
        if rule.done(t, res) {
            return Ok(RichardsonOutcome {
                x: y,
                sweeps: t,
                residuals,
            });
        }
    }
    if let StopRule::Fixed(_) = rule {
        return Ok(RichardsonOutcome {
            x: y,
            sweeps: rule.max_sweeps(),
            residuals,
        });
    }
    Err(Error::NotConverged {
        sweeps: rule.max_sweeps(),
        residual: residuals.last().copied().unwrap_or(f64::NAN),
        target: rule.threshold(),
        per_node: Vec::new(),
    })
}
