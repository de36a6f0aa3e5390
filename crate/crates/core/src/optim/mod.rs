//! Dual descent loops and Newton-type directions.
//!
//! All directions act on the convex dual `q` from [`crate::netflow`], so the
//! gradient step is `lambda - alpha g` and a Newton step is
//! `lambda + alpha d` with `d ~ -H^+ g`.

mod run;
mod theory;
mod trace;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::chain::{chain_length, default_stop_rule, StopRule};
use crate::dist::{e_dist_r_solve_with, node_inputs};
use crate::error::{Error, Result};
use crate::matrix::{ground, project_out_ones, SplitMatrix};
use crate::netflow::{dual_gradient, dual_hessian, FlowProblem};
use crate::sim::{CostReport, RunOptions, Transcript};
use crate::spectral::{psd_pseudo_inverse, spectral_summary, SpectralMode, EXACT_DIM_CAP};

pub use run::{run_optimizer, OptimizerConfig, DIVERGENCE_FACTOR, DIVERGENCE_PATIENCE};
pub use theory::{
    audit_phases, convergence_constants, normg_bound, optimal_step_size, phase_classifier,
    predict_iterations, ConvergenceConstants, InequalityCheck, IterationPredictions, Phase,
    PhaseAudit,
};
pub use trace::{RunTrace, TraceRow, CSV_COLUMNS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gradient,
    ExactNewton,
    SddmNewton,
    NeumannNewton,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Gradient,
        Method::ExactNewton,
        Method::SddmNewton,
        Method::NeumannNewton,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Gradient => "gradient",
            Method::ExactNewton => "exact-newton",
            Method::SddmNewton => "sddm-newton",
            Method::NeumannNewton => "neumann-newton",
        }
    }

    pub fn is_newton(&self) -> bool {
        !matches!(self, Method::Gradient)
    }

    /// Iteration cap used when the config leaves it unset.
    pub fn default_cap(&self, n: usize) -> usize {
        match self {
            Method::Gradient => 10_000,
            _ => 10 * n,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::param(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRule {
    Fixed,
    AlphaStar,
    Backtracking,
}

impl AlphaRule {
    pub fn name(&self) -> &'static str {
        match self {
            AlphaRule::Fixed => "fixed",
            AlphaRule::AlphaStar => "alpha_star",
            AlphaRule::Backtracking => "backtracking",
        }
    }
}

impl fmt::Display for AlphaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlphaRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            AlphaRule::Fixed,
            AlphaRule::AlphaStar,
            AlphaRule::Backtracking,
        ]
        .into_iter()
        .find(|r| r.name() == s)
        .ok_or_else(|| Error::param(format!("unknown step rule {s:?}")))
    }
}

/// `lambda - alpha g(lambda)`
pub fn gradient_step(p: &FlowProblem, lambda: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param(format!(
            "step size must be positive, got {alpha}"
        )));
    }
    let g = dual_gradient(p, lambda)?;
    Ok(lambda
        .iter()
        .zip(&g)
        .map(|(l, gi)| l - alpha * gi)
        .collect())
}

/// `-H^+ g` through a dense pseudo-inverse. Test oracle only.
pub fn exact_newton_direction(p: &FlowProblem, lambda: &[f64]) -> Result<Vec<f64>> {
    let h = dual_hessian(p, lambda)?;
    let g = dual_gradient(p, lambda)?;
    exact_direction(&h, &g)
}

pub(crate) fn exact_direction(h: &SplitMatrix, g: &[f64]) -> Result<Vec<f64>> {
    let n = h.dim();
    if n > EXACT_DIM_CAP {
        return Err(Error::OracleCap {
            dim: n,
            cap: EXACT_DIM_CAP,
        });
    }
    let pinv = psd_pseudo_inverse(&h.to_dense());
    let g = nalgebra::DVector::from_column_slice(g);
    Ok((-(pinv * g)).iter().copied().collect())
}

/// `-D^{-1} sum_{k=0}^{N} (A D^{-1})^k g` for the splitting `H = D - A`.
pub fn neumann_newton_direction(
    p: &FlowProblem,
    lambda: &[f64],
    n_terms: usize,
) -> Result<Vec<f64>> {
    let h = dual_hessian(p, lambda)?;
    let g = dual_gradient(p, lambda)?;
    Ok(neumann_direction(&h, &g, n_terms))
}

pub(crate) fn neumann_direction(h: &SplitMatrix, g: &[f64], n_terms: usize) -> Vec<f64> {
    let mut term = g.to_vec();
    let mut acc = g.to_vec();
    for _ in 0..n_terms {
        term = h.apply_a_dinv(&term);
        acc.iter_mut().zip(&term).for_each(|(a, t)| *a += t);
    }
    acc.iter().zip(h.diag()).map(|(a, d)| -a / d).collect()
}

/// Settings for one distributed Newton solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SddmOptions {
    pub eps: f64,
    pub r_hop: usize,
    /// Chain depth; defaults to `chain_length` of the grounded system.
    pub depth: Option<usize>,
    /// Richardson stop rule; defaults to the residual rule for `eps`.
    pub rule: Option<StopRule>,
    pub log_messages: bool,
}

impl SddmOptions {
    pub fn new(eps: f64, r_hop: usize) -> Self {
        Self {
            eps,
            r_hop,
            depth: None,
            rule: None,
            log_messages: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SddmDirection {
    pub direction: Vec<f64>,
    pub cost: CostReport,
    pub sweeps: usize,
    pub depth: usize,
    pub rule: StopRule,
    /// The grounded coordinate.
    pub ground: usize,
    pub transcript: Transcript,
}

/// Chain depth for a grounded system: from the exact condition number under
/// the oracle cap, otherwise from the (larger) bound-mode estimate.
pub fn depth_for(m: &SplitMatrix) -> Result<usize> {
    let mode = if m.dim() <= EXACT_DIM_CAP {
        SpectralMode::Exact
    } else {
        SpectralMode::Bound
    };
    chain_length(spectral_summary(m, mode)?.kappa)
}

/// Solves `H d = -g` on `1^perp` with the distributed solver: ground `H` at
/// the max-degree node, run the R-hop Richardson solver on the grounded
/// system, re-insert the grounded coordinate as 0 and shift to mean zero.
pub fn sddm_direction(h: &SplitMatrix, g: &[f64], opts: &SddmOptions) -> Result<SddmDirection> {
    let n = h.dim();
    if g.len() != n {
        return Err(Error::param(format!(
            "gradient has length {}, Hessian has dimension {n}",
            g.len()
        )));
    }
    let node = h.support_graph().grounding_node();
    let grounded = ground(h, node)?;
    let rhs: Vec<f64> = grounded
        .restrict(&project_out_ones(g))
        .iter()
        .map(|v| -v)
        .collect();
    let depth = match opts.depth {
        Some(d) => d,
        None => depth_for(&grounded.matrix)?,
    };
    let rule = match opts.rule {
        Some(r) => r,
        None => default_stop_rule(&grounded.matrix, opts.eps)?,
    };
    let inputs = node_inputs(&grounded.matrix, &rhs, depth, opts.r_hop, Some(opts.eps))?;
    let run_opts = RunOptions {
        log_messages: opts.log_messages,
        ..RunOptions::default()
    };
    let run = e_dist_r_solve_with(&inputs, rule, &run_opts)?;
    Ok(SddmDirection {
        direction: grounded.embed_mean_zero(&run.x),
        cost: run.cost(),
        sweeps: run.sweeps,
        depth,
        rule,
        ground: node,
        transcript: run.transcript,
    })
}

/// `-Z g` at `lambda`, with `Z` the distributed solver's operator.
pub fn sddm_newton_direction(
    p: &FlowProblem,
    lambda: &[f64],
    eps: f64,
    r_hop: usize,
) -> Result<SddmDirection> {
    let h = dual_hessian(p, lambda)?;
    let g = dual_gradient(p, lambda)?;
    sddm_direction(&h, &g, &SddmOptions::new(eps, r_hop))
}

/// `sqrt(v^T H v)`
pub fn h_norm(h: &SplitMatrix, v: &[f64]) -> f64 {
    h.quad_form(v).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DirectedNetwork;
    use crate::netflow::CostFunction;

    fn single_edge() -> FlowProblem {
        let net = DirectedNetwork::new(2, vec![(0, 1)]).unwrap();
        FlowProblem::new(net, vec![CostFunction::quadratic(1.0)], vec![1.0, -1.0]).unwrap()
    }

    #[test]
    fn gradient_step_by_hand() {
        let p = single_edge();
        assert_eq!(
            gradient_step(&p, &[0.0, 0.0], 0.5).unwrap(),
            vec![0.5, -0.5]
        );
        assert_eq!(
            gradient_step(&p, &[0.5, -0.5], 0.5).unwrap(),
            vec![0.5, -0.5]
        );
        assert!(gradient_step(&p, &[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn single_edge_newton_directions() {
        let p = single_edge();
        let d = exact_newton_direction(&p, &[0.0, 0.0]).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-12 && (d[1] + 0.5).abs() < 1e-12);
        let s = sddm_newton_direction(&p, &[0.0, 0.0], 1e-6, 1).unwrap();
        assert!((s.direction[0] - 0.5).abs() < 1e-6 && (s.direction[1] + 0.5).abs() < 1e-6);
        let g0 = sddm_newton_direction(&p, &[0.5, -0.5], 1e-6, 1).unwrap();
        assert_eq!(g0.direction, vec![0.0, 0.0]);
        assert_eq!(g0.cost.total_messages, 0);
    }

    #[test]
    fn neumann_zeroth_order_is_scaled_gradient() {
        let p = single_edge();
        let d = neumann_newton_direction(&p, &[0.0, 0.0], 0).unwrap();
        assert_eq!(d, vec![1.0, -1.0]);
    }

    #[test]
    fn names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("newton".parse::<Method>().is_err());
        assert_eq!(
            "alpha_star".parse::<AlphaRule>().unwrap(),
            AlphaRule::AlphaStar
        );
    }
}
