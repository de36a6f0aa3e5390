use std::time::Instant;

use super::theory::{convergence_constants, optimal_step_size, phase_classifier};
use super::trace::{RunTrace, TraceRow};
use super::{exact_direction, neumann_direction, sddm_direction, AlphaRule, Method, SddmOptions};
use crate::chain::{build_exact_chain, chain_budget, verify_chain, CHAIN_DENSE_CAP};
use crate::error::{Error, Result};
use crate::matrix::{dot, ground, norm2};
use crate::netflow::{
    dual_hessian, dual_value, laplacian_norm, primal_objective, DualState, FlowProblem,
};
use crate::sim::CostReport;

/// Divergence: `||g||_2` above this multiple of its initial value ...
pub const DIVERGENCE_FACTOR: f64 = 10.0;
/// ... for this many consecutive iterations.
pub const DIVERGENCE_PATIENCE: usize = 50;

const ARMIJO_C: f64 = 1e-4;
const ARMIJO_MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Solver precision for sddm-newton; also the `eps` of the phase constants.
    pub eps: f64,
    pub r_hop: usize,
    /// Chain depth override for sddm-newton.
    pub depth: Option<usize>,
    pub alpha_rule: AlphaRule,
    /// Fixed step, or the first trial step of backtracking. Defaults to
    /// `gamma / mu_n(L)` for gradient descent and 1 for Newton methods.
    pub alpha: Option<f64>,
    /// Stop once `||g||_2` is at or below this.
    pub threshold: f64,
    pub max_iters: Option<usize>,
    pub neumann_terms: usize,
    pub seed: Option<u64>,
    /// Fill the `ms` column (makes traces non-reproducible).
    pub timing: bool,
    /// Measure the chain budget with the dense oracle when small enough.
    pub measure_chain: bool,
    pub lambda0: Option<Vec<f64>>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            r_hop: 1,
            depth: None,
            alpha_rule: AlphaRule::Backtracking,
            alpha: None,
            threshold: 1e-10,
            max_iters: None,
            neumann_terms: 2,
            seed: None,
            timing: false,
            measure_chain: true,
            lambda0: None,
        }
    }
}

struct ChainRecord {
    depth: Option<usize>,
    eps_d: Option<f64>,
    measured: bool,
}

/// Runs `method` from `lambda0` (default 0) until `||g||_2 <= threshold` or
/// the iteration cap. Errors carry the method name and iteration.
pub fn run_optimizer(p: &FlowProblem, method: Method, cfg: &OptimizerConfig) -> Result<RunTrace> {
    let mut k = 0;
    run_inner(p, method, cfg, &mut k).map_err(|e| match e {
        e @ Error::Parameter(_) if k == 0 => e,
        e => Error::Method {
            method: method.name().to_string(),
            iteration: k,
            source: Box::new(e),
        },
    })
}

fn run_inner(
    p: &FlowProblem,
    method: Method,
    cfg: &OptimizerConfig,
    k: &mut usize,
) -> Result<RunTrace> {
    let n = p.node_count();
    if !(cfg.threshold >= 0.0 && cfg.threshold.is_finite()) {
        return Err(Error::param(
            "gradient threshold must be finite and non-negative",
        ));
    }
    if method == Method::SddmNewton && !crate::dist::is_power_of_two(cfg.r_hop) {
        return Err(Error::param(format!(
            "R = {} is not a power of two",
            cfg.r_hop
        )));
    }
    let constants = convergence_constants(p, cfg.eps)?;
    let (gamma, big_gamma) = p.curvature_bounds();
    let alpha = match (cfg.alpha_rule, cfg.alpha) {
        (AlphaRule::AlphaStar, _) => optimal_step_size(&constants)?,
        (_, Some(a)) if a > 0.0 && a.is_finite() => a,
        (_, Some(a)) => return Err(Error::param(format!("step size must be positive, got {a}"))),
        (_, None) if method == Method::Gradient => gamma / constants.mun,
        (_, None) => 1.0,
    };
    let cap = cfg.max_iters.unwrap_or_else(|| method.default_cap(n));
    let distributed = method != Method::ExactNewton;
    let exchange = if distributed {
        p.incidence_laplacian().nnz_offdiag()
    } else {
        0
    };
    let exchange_rounds = usize::from(distributed);

    let lambda0 = cfg.lambda0.clone().unwrap_or_else(|| vec![0.0; n]);
    if lambda0.len() != n {
        return Err(Error::param(format!(
            "initial dual has length {}, expected {n}",
            lambda0.len()
        )));
    }
    let start = Instant::now();
    let mut state = DualState::new(p, lambda0)?;
    let mut q = dual_value(p, &state.lambda)?;
    let g0 = norm2(&state.g);
    let mut cost = CostReport::default();
    let mut messages = exchange;
    let mut rounds = exchange_rounds;
    let mut rows = Vec::new();
    let mut sddm = SddmOptions::new(cfg.eps, cfg.r_hop);
    sddm.depth = cfg.depth;
    let mut chain = ChainRecord {
        depth: None,
        eps_d: None,
        measured: false,
    };
    let reuse = p.is_quadratic();
    let mut above = 0;
    let mut converged = false;

    let row = |k: usize, st: &DualState, q: f64, messages: usize, rounds: usize| TraceRow {
        k,
        q,
        f: primal_objective(p, &st.x),
        feas: norm2(&st.g),
        gnorm_l: laplacian_norm(p, &st.g),
        phase: phase_classifier(laplacian_norm(p, &st.g), &constants),
        messages,
        rounds,
        ms: cfg.timing.then(|| start.elapsed().as_secs_f64() * 1e3),
        alpha: None,
        sweeps: None,
    };
    rows.push(row(0, &state, q, messages, rounds));

    loop {
        let gnorm = norm2(&state.g);
        if gnorm <= cfg.threshold {
            converged = true;
            break;
        }
        if *k >= cap {
            break;
        }
        let (d, sweeps) = match method {
            Method::Gradient => (state.g.iter().map(|v| -v).collect::<Vec<_>>(), None),
            Method::ExactNewton => (
                exact_direction(&dual_hessian(p, &state.lambda)?, &state.g)?,
                None,
            ),
            Method::NeumannNewton => {
                messages += (cfg.neumann_terms + 1) * exchange;
                rounds += cfg.neumann_terms + 1;
                let h = dual_hessian(p, &state.lambda)?;
                (neumann_direction(&h, &state.g, cfg.neumann_terms), None)
            }
            Method::SddmNewton => {
                let h = dual_hessian(p, &state.lambda)?;
                if cfg.measure_chain
                    && (!reuse || chain.eps_d.is_none())
                    && n - 1 <= CHAIN_DENSE_CAP
                    && n > 1
                {
                    let grounded = ground(&h, h.support_graph().grounding_node())?;
                    let depth = match sddm.depth {
                        Some(d) => d,
                        None => super::depth_for(&grounded.matrix)?,
                    };
                    let v = verify_chain(&build_exact_chain(&grounded.matrix, depth)?)?;
                    chain.eps_d = Some(chain.eps_d.map_or(v.eps_d, |e: f64| e.max(v.eps_d)));
                    chain.measured = true;
                }
                let out = sddm_direction(&h, &state.g, &sddm)?;
                if reuse {
                    sddm.depth = Some(out.depth);
                    sddm.rule = Some(out.rule);
                }
                chain.depth = Some(out.depth);
                cost.add(&out.cost);
                messages += out.cost.total_messages;
                rounds += out.cost.total_rounds;
                (out.direction, Some(out.sweeps))
            }
        };
        let slope = dot(&state.g, &d);
        let (step, next, q_next) = match cfg.alpha_rule {
            AlphaRule::Backtracking => backtrack(p, &state, q, &d, slope, alpha, *k)?,
            _ => {
                let lam = step_to(&state.lambda, &d, alpha);
                let st = DualState::new(p, lam)?;
                let qn = dual_value(p, &st.lambda)?;
                (alpha, st, qn)
            }
        };
        if let Some(last) = rows.last_mut() {
            last.alpha = Some(step);
            last.sweeps = sweeps;
        }
        state = next;
        q = q_next;
        *k += 1;
        messages += exchange;
        rounds += exchange_rounds;
        if !q.is_finite() || state.g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                iteration: *k,
                reason: "non-finite dual value or gradient".into(),
            });
        }
        if norm2(&state.g) > DIVERGENCE_FACTOR * g0 {
            above += 1;
            if above >= DIVERGENCE_PATIENCE {
                return Err(Error::Diverged {
                    iteration: *k,
                    reason: format!(
                        "||g|| stayed above {DIVERGENCE_FACTOR} x its initial value {g0:e} for {DIVERGENCE_PATIENCE} iterations"
                    ),
                });
            }
        } else {
            above = 0;
        }
        rows.push(row(*k, &state, q, messages, rounds));
    }

    let mut header: Vec<(String, String)> = vec![
        (
            "seed".into(),
            cfg.seed.map_or_else(|| "none".into(), |s| s.to_string()),
        ),
        ("method".into(), method.name().into()),
        ("eps".into(), format!("{:e}", cfg.eps)),
        ("R".into(), cfg.r_hop.to_string()),
        ("alpha_rule".into(), cfg.alpha_rule.name().into()),
        ("n".into(), n.to_string()),
        ("m".into(), p.arc_count().to_string()),
        ("gamma".into(), format!("{gamma:e}")),
        ("Gamma".into(), format!("{big_gamma:e}")),
        ("alpha".into(), format!("{alpha:e}")),
        ("threshold".into(), format!("{:e}", cfg.threshold)),
        ("max_iters".into(), cap.to_string()),
    ];
    if method == Method::NeumannNewton {
        header.push(("neumann_terms".into(), cfg.neumann_terms.to_string()));
    }
    if method == Method::SddmNewton {
        header.push(("chain_reuse".into(), reuse.to_string()));
        if let Some(d) = chain.depth {
            header.push(("d".into(), d.to_string()));
        }
        let (eps_d, source) = match chain.eps_d {
            Some(e) if chain.measured => (e, "measured"),
            _ => (chain_budget(), "declared"),
        };
        header.push(("eps_d".into(), format!("{eps_d:e}")));
        header.push(("eps_d_source".into(), source.into()));
    }
    header.push(("alpha_star".into(), format!("{:e}", constants.alpha_star)));
    header.push(("eta0".into(), format!("{:e}", constants.eta0)));
    header.push(("eta1".into(), format!("{:e}", constants.eta1)));
    header.push(("converged".into(), converged.to_string()));
    header.push(("iterations".into(), k.to_string()));
    let cost = (method == Method::SddmNewton).then_some(cost);
    if let Some(c) = &cost {
        header.push(("cost".into(), serde_json::to_string(c)?));
    }
    Ok(RunTrace {
        header,
        rows,
        cost,
        converged,
        x: state.x,
        lambda: state.lambda,
    })
}

fn step_to(lambda: &[f64], d: &[f64], alpha: f64) -> Vec<f64> {
    lambda.iter().zip(d).map(|(l, di)| l + alpha * di).collect()
}

/// Armijo on `q`: halve from `alpha0` until
/// `q(lambda + a d) <= q(lambda) + c a g^T d`, with a roundoff allowance so
/// that steps taken next to the optimum are not rejected for noise.
fn backtrack(
    p: &FlowProblem,
    state: &DualState,
    q: f64,
    d: &[f64],
    slope: f64,
    alpha0: f64,
    k: usize,
) -> Result<(f64, DualState, f64)> {
    if slope > 0.0 {
        return Err(Error::Diverged {
            iteration: k,
            reason: format!("direction is not a descent direction (g^T d = {slope:e})"),
        });
    }
    let noise = 8.0 * f64::EPSILON * (1.0 + q.abs());
    let mut a = alpha0;
    for _ in 0..=ARMIJO_MAX_HALVINGS {
        let st = DualState::new(p, step_to(&state.lambda, d, a))?;
        let qn = dual_value(p, &st.lambda)?;
        if qn <= q + ARMIJO_C * a * slope + noise {
            return Ok((a, st, qn));
        }
        a *= 0.5;
    }
    Err(Error::Diverged {
        iteration: k,
        reason: format!("no sufficient decrease after {ARMIJO_MAX_HALVINGS} halvings"),
    })
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
    fn exact_newton_one_step_on_single_edge() {
        let cfg = OptimizerConfig {
            alpha_rule: AlphaRule::Fixed,
            ..OptimizerConfig::default()
        };
        let t = run_optimizer(&single_edge(), Method::ExactNewton, &cfg).unwrap();
        assert!(t.converged);
        assert_eq!(t.iterations(), 1);
        assert!((t.x[0] - 1.0).abs() < 1e-12);
        assert!((t.rows[1].f - 0.5).abs() < 1e-12);
        assert_eq!(t.rows[1].messages, 0);
    }

    #[test]
    fn gradient_counts_one_exchange_per_iterate() {
        let cfg = OptimizerConfig {
            alpha_rule: AlphaRule::Fixed,
            max_iters: Some(3),
            ..OptimizerConfig::default()
        };
        let t = run_optimizer(&single_edge(), Method::Gradient, &cfg).unwrap();
        // default step gamma / mu_n = 1/2 solves the single edge exactly
        assert_eq!(t.header_value("alpha"), Some("5e-1"));
        assert_eq!(t.iterations(), 1);
        let cfg = OptimizerConfig {
            alpha: Some(0.25),
            ..cfg
        };
        let t = run_optimizer(&single_edge(), Method::Gradient, &cfg).unwrap();
        let msgs: Vec<usize> = t.rows.iter().map(|r| r.messages).collect();
        assert_eq!(msgs, vec![2, 4, 6, 8]);
        assert!(!t.converged);
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = OptimizerConfig {
            alpha_rule: AlphaRule::Fixed,
            alpha: Some(3.0),
            max_iters: Some(500),
            ..OptimizerConfig::default()
        };
        let err = run_optimizer(&single_edge(), Method::Gradient, &cfg).unwrap_err();
        match err {
            Error::Method { method, source, .. } => {
                assert_eq!(method, "gradient");
                assert!(matches!(*source, Error::Diverged { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn alpha_star_outside_window_is_a_parameter_error() {
        let cfg = OptimizerConfig {
            alpha_rule: AlphaRule::AlphaStar,
            eps: 0.5,
            ..OptimizerConfig::default()
        };
        let p = FlowProblem::new(
            DirectedNetwork::new(3, vec![(0, 1), (1, 2)]).unwrap(),
            vec![CostFunction::quadratic(1.0), CostFunction::quadratic(10.0)],
            vec![1.0, 0.0, -1.0],
        )
        .unwrap();
        assert!(matches!(
            run_optimizer(&p, Method::SddmNewton, &cfg),
            Err(Error::Parameter(_))
        ));
    }
}
