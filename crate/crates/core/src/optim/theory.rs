//! Constants and phase analysis of the approximate Newton method with step
//! `alpha*`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netflow::{laplacian_extremes, lipschitz_constant_b, FlowProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConstants {
    pub alpha_star: f64,
    pub xi: f64,
    pub zeta: f64,
    pub eta0: f64,
    pub eta1: f64,
    pub b: f64,
    pub delta: f64,
    pub gamma: f64,
    #[serde(rename = "Gamma")]
    pub big_gamma: f64,
    pub mu2: f64,
    pub mun: f64,
    pub eps: f64,
    /// `eps (mu_n / mu_2) sqrt(Gamma / gamma)`, which must stay below 1.
    pub eps_effective: f64,
    /// Upper end of the admissible precision, `(mu_2 / mu_n) sqrt(gamma / Gamma)`.
    pub window: f64,
    /// The looser bound `(mu_2 / mu_n) sqrt(Gamma / gamma)`, reported for comparison.
    pub window_alt: f64,
    pub window_ok: bool,
}

impl ConvergenceConstants {
    /// Assembles the constants from the graph and cost quantities.
    pub fn from_parts(
        eps: f64,
        gamma: f64,
        big_gamma: f64,
        mu2: f64,
        mun: f64,
        b: f64,
        delta: f64,
    ) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::param(format!(
                "precision must be positive, got {eps}"
            )));
        }
        if !(gamma > 0.0 && gamma <= big_gamma && mu2 > 0.0 && mu2 <= mun && b >= 0.0) {
            return Err(Error::param(format!(
                "inconsistent constants: gamma {gamma}, Gamma {big_gamma}, mu2 {mu2}, mun {mun}, B {b}"
            )));
        }
        let ratio = mu2 / mun;
        let window = ratio * (gamma / big_gamma).sqrt();
        let window_alt = ratio * (big_gamma / gamma).sqrt();
        let eps_effective = eps / ratio * (big_gamma / gamma).sqrt();
        let alpha_star =
            (-eps * eps).exp() / (1.0 + eps).powi(2) * (gamma / big_gamma * ratio).powi(2);
        let xi = (1.0 - alpha_star * (1.0 - eps_effective)).sqrt();
        let zeta = b * (alpha_star * big_gamma * (1.0 + eps)).powi(2) / (2.0 * mu2 * mu2);
        let (eta0, eta1) = if zeta > 0.0 {
            (xi * (1.0 - xi) / zeta, (1.0 - xi) / zeta)
        } else {
            (f64::INFINITY, f64::INFINITY)
        };
        Ok(Self {
            alpha_star,
            xi,
            zeta,
            eta0,
            eta1,
            b,
            delta,
            gamma,
            big_gamma,
            mu2,
            mun,
            eps,
            eps_effective,
            window,
            window_alt,
            window_ok: eps < window,
        })
    }

    /// Per-step decrease of `q` guaranteed while `||g||_L >= eta1`.
    pub fn strict_decrement(&self) -> f64 {
        let e = self.eps;
        0.5 * (-2.0 * e * e).exp() / (1.0 + e).powi(2) * self.gamma.powi(3) / self.big_gamma.powi(2)
            * self.mu2.powi(2)
            / self.mun.powi(4)
            * self.eta1.powi(2)
    }
}

/// Constants for `problem` at solver precision `eps`. Always filled; check
/// `window_ok` (or call [`optimal_step_size`]) before relying on them.
pub fn convergence_constants(p: &FlowProblem, eps: f64) -> Result<ConvergenceConstants> {
    let (mu2, mun) = laplacian_extremes(p)?;
    let (gamma, big_gamma) = p.curvature_bounds();
    ConvergenceConstants::from_parts(
        eps,
        gamma,
        big_gamma,
        mu2,
        mun,
        lipschitz_constant_b(p)?,
        p.delta(),
    )
}

/// `alpha*`, refusing precisions outside the admissible window.
pub fn optimal_step_size(c: &ConvergenceConstants) -> Result<f64> {
    if !c.window_ok {
        return Err(Error::param(format!(
            "precision {} outside (0, {:.6e}); the looser bound would allow up to {:.6e}",
            c.eps, c.window, c.window_alt
        )));
    }
    Ok(c.alpha_star)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Strict,
    Quadratic,
    Terminal,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Strict => "strict",
            Phase::Quadratic => "quadratic",
            Phase::Terminal => "terminal",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(Phase::Strict),
            "quadratic" => Ok(Phase::Quadratic),
            "terminal" => Ok(Phase::Terminal),
            _ => Err(Error::Parse(format!("unknown phase label {s:?}"))),
        }
    }
}

/// Strict at or above `eta1`, quadratic in `[eta0, eta1)`, terminal below
/// `eta0`. With infinite thresholds (quadratic costs) every label is terminal.
pub fn phase_classifier(gnorm_l: f64, c: &ConvergenceConstants) -> Phase {
    if gnorm_l >= c.eta1 {
        Phase::Strict
    } else if gnorm_l >= c.eta0 {
        Phase::Quadratic
    } else {
        Phase::Terminal
    }
}

/// Right-hand side of the two-term gradient-norm recursion for step `alpha`.
pub fn normg_bound(c: &ConvergenceConstants, alpha: f64, gnorm_l: f64) -> f64 {
    let linear = 1.0 - alpha + alpha * c.eps_effective;
    let quad = alpha * alpha * c.b * (c.big_gamma * (1.0 + c.eps)).powi(2) / (2.0 * c.mu2 * c.mu2);
    linear * gnorm_l + quad * gnorm_l * gnorm_l
}

/// Predicted phase lengths; report-only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationPredictions {
    pub n1: f64,
    pub n2: Option<f64>,
    pub rho_terminal: f64,
}

/// `q0 - q_star` is the initial dual gap; `g_enter_quadratic` is `||g||_L`
/// at the first quadratic-phase iterate, if the run had one.
pub fn predict_iterations(
    c: &ConvergenceConstants,
    dual_gap: f64,
    g_enter_quadratic: Option<f64>,
) -> IterationPredictions {
    let e = c.eps;
    let shrink = 1.0 - c.eps_effective;
    let c1 = 2.0 * c.delta.powi(2) * (1.0 + e).powi(2) * dual_gap.max(0.0) * c.big_gamma.powi(2)
        / c.gamma;
    let n1 = c1 * c.mun.powi(2) / c.mu2.powi(3) / (shrink * shrink);
    let n2 = g_enter_quadratic.map(|g| {
        let r = g / c.eta1;
        (0.5 * (1.0 - c.alpha_star * shrink).log2() / r.log2()).log2()
    });
    let rho_terminal = 2.0 * shrink / (-e * e * c.gamma * c.delta).exp() * c.mun * c.mu2.sqrt();
    IterationPredictions {
        n1,
        n2,
        rho_terminal,
    }
}

/// Outcome of checking one inequality over a trace.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub checked: usize,
    pub violations: usize,
    /// Largest `lhs - rhs` seen (negative when every step had room to spare).
    pub worst_excess: f64,
}

impl InequalityCheck {
    fn record(&mut self, lhs: f64, rhs: f64, slack: f64) {
        let excess = lhs - rhs;
        if self.checked == 0 || excess > self.worst_excess {
            self.worst_excess = excess;
        }
        self.checked += 1;
        if excess > slack * rhs.abs().max(1.0) {
            self.violations += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Every step of a trace checked against the phase it started in, plus the
/// two-term gradient-norm recursion for the step size actually taken.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseAudit {
    pub strict: InequalityCheck,
    pub quadratic: InequalityCheck,
    pub terminal: InequalityCheck,
    pub recursion: InequalityCheck,
    /// A terminal-labelled iterate was later labelled strict.
    pub regressed: bool,
}

impl PhaseAudit {
    pub fn passed(&self) -> bool {
        self.strict.passed() && self.quadratic.passed() && self.terminal.passed() && !self.regressed
    }
}

/// Audits consecutive rows of `trace`. Violations are counted only beyond
/// `slack` relative to `max(1, |rhs|)`.
pub fn audit_phases(trace: &super::RunTrace, c: &ConvergenceConstants, slack: f64) -> PhaseAudit {
    let mut audit = PhaseAudit::default();
    let mut seen_terminal = false;
    for pair in trace.rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        match a.phase {
            Phase::Strict => audit.strict.record(b.q - a.q, -c.strict_decrement(), slack),
            Phase::Quadratic => {
                audit
                    .quadratic
                    .record(b.gnorm_l, a.gnorm_l * a.gnorm_l / c.eta1, slack)
            }
            Phase::Terminal => audit.terminal.record(b.gnorm_l, c.xi * a.gnorm_l, slack),
        }
        if let Some(alpha) = a.alpha {
            audit
                .recursion
                .record(b.gnorm_l, normg_bound(c, alpha, a.gnorm_l), slack);
        }
    }
    for r in &trace.rows {
        seen_terminal |= r.phase == Phase::Terminal;
        audit.regressed |= seen_terminal && r.phase == Phase::Strict;
    }
    audit
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_star_arithmetic() {
        // gamma/Gamma = 1/10, mu2/mun = 1/3
        let c = ConvergenceConstants::from_parts(0.01, 1.0, 10.0, 1.0, 3.0, 0.0, 0.0).unwrap();
        let expect = (-1e-4f64).exp() / 1.01f64.powi(2) / 900.0;
        assert!((c.alpha_star - expect).abs() < 1e-15);
        assert!((c.alpha_star - 1.089e-3).abs() < 1e-6);
    }

    #[test]
    fn complete_graph_limit() {
        let c = ConvergenceConstants::from_parts(1e-12, 2.0, 2.0, 4.0, 4.0, 0.0, 0.0).unwrap();
        assert!((c.alpha_star - 1.0).abs() < 1e-11);
        assert!(optimal_step_size(&c).unwrap() <= 1.0);
    }

    #[test]
    fn alpha_star_decreases_in_eps() {
        let mut last = f64::INFINITY;
        for i in 1..20 {
            let eps = 0.005 * i as f64;
            let c = ConvergenceConstants::from_parts(eps, 1.0, 2.0, 1.0, 1.0, 1.0, 1.0).unwrap();
            assert!(c.alpha_star < last);
            last = c.alpha_star;
        }
    }

    #[test]
    fn window_is_enforced() {
        let c = ConvergenceConstants::from_parts(0.2, 1.0, 4.0, 1.0, 2.0, 1.0, 1.0).unwrap();
        // window = 0.5 * 0.5, looser form 0.5 * 2
        assert!((c.window - 0.25).abs() < 1e-15 && (c.window_alt - 1.0).abs() < 1e-15);
        assert!(optimal_step_size(&c).is_ok());
        let c = ConvergenceConstants::from_parts(0.3, 1.0, 4.0, 1.0, 2.0, 1.0, 1.0).unwrap();
        assert!(optimal_step_size(&c).is_err());
    }

    #[test]
    fn thresholds_and_labels() {
        let c = ConvergenceConstants::from_parts(0.01, 1.0, 2.0, 2.0, 2.0, 0.5, 0.3).unwrap();
        assert!((c.eta0 - c.xi * (1.0 - c.xi) / c.zeta).abs() < 1e-12 * c.eta0);
        assert!(c.eta0 < c.eta1 && c.xi > 0.0 && c.xi < 1.0);
        let xi2 =
            1.0 - c.alpha_star * (1.0 - c.eps * (c.mun / c.mu2) * (c.big_gamma / c.gamma).sqrt());
        assert!((c.xi * c.xi - xi2).abs() < 1e-15);
        assert_eq!(phase_classifier(2.0 * c.eta1, &c), Phase::Strict);
        assert_eq!(
            phase_classifier(0.5 * (c.eta0 + c.eta1), &c),
            Phase::Quadratic
        );
        assert_eq!(phase_classifier(0.5 * c.eta0, &c), Phase::Terminal);
        let q = ConvergenceConstants::from_parts(0.01, 1.0, 2.0, 2.0, 2.0, 0.0, 0.0).unwrap();
        assert_eq!(q.zeta, 0.0);
        assert!(q.eta0.is_infinite() && q.eta1.is_infinite());
        assert_eq!(phase_classifier(1e300, &q), Phase::Terminal);
    }
}
