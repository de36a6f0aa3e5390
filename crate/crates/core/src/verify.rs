//! Oracle and invariant suites on small instances, run by `sddmflow verify`.
//!
//! Each suite compares library output with an independent computation: a
//! dense factorization, a finite difference, or an inequality evaluated from
//! its closed form.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{build_chain_for, verify_chain};
use crate::dist::{e_dist_r_solve, node_inputs};
use crate::error::Result;
use crate::graph::{generate_random_network, DirectedNetwork};
use crate::matrix::{ground, laplacian};
use crate::netflow::{
    dual_gradient, dual_hessian, dual_value, laplacian_norm, CostFamily, CostFunction, FlowProblem,
};
use crate::optim::{
    audit_phases, convergence_constants, exact_direction, h_norm, run_optimizer, sddm_direction,
    AlphaRule, Method, OptimizerConfig, SddmOptions,
};
use crate::sim::{assert_locality, run, RogueProgram, RunOptions};
use crate::spectral::dense_spd_solve;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl SuiteResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

/// Smoothed-cost instances for the phase inequalities: a path edge, a
/// triangle, a 4-cycle, `K5` and a 6-cycle with precision `eps`. Supplies are
/// scaled so that `||g_0||_L` sits at `3 eta1` (strict start) or inside the
/// quadratic window `[eta0, eta1)`, alternately.
pub fn theorem_instances(eps: f64) -> Result<Vec<FlowProblem>> {
    let k5: Vec<(usize, usize)> = (0..5)
        .flat_map(|i| (i + 1..5).map(move |j| (i, j)))
        .collect();
    let graphs: Vec<(usize, Vec<(usize, usize)>)> = vec![
        (2, vec![(0, 1)]),
        (3, vec![(0, 1), (1, 2), (2, 0)]),
        (4, vec![(0, 1), (1, 2), (2, 3), (3, 0)]),
        (5, k5),
        (6, (0..6).map(|i| (i, (i + 1) % 6)).collect()),
    ];
    graphs
        .into_iter()
        .enumerate()
        .map(|(idx, (n, arcs))| {
            let net = DirectedNetwork::new(n, arcs)?;
            let costs: Vec<_> = (0..net.arc_count())
                .map(|e| CostFunction::smoothed(1.0 + 0.1 * (e % 3) as f64, 0.5))
                .collect();
            let mut b = vec![0.0; n];
            b[0] = 1.0;
            b[n / 2] = -1.0;
            let unit = FlowProblem::new(net.clone(), costs.clone(), b.clone())?;
            let c = convergence_constants(&unit, eps)?;
            let target = if idx % 2 == 0 {
                3.0 * c.eta1
            } else {
                0.5 * (1.0 + c.xi) * c.eta1
            };
            let scale = target / laplacian_norm(&unit, &b);
            FlowProblem::new(net, costs, b.iter().map(|v| v * scale).collect())
        })
        .collect()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

fn gradient_fd(seed: u64) -> Result<SuiteResult> {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..5 {
        let net = generate_random_network(8, 12, seed + i, (1.0, 1.0))?;
        let family = if i % 2 == 0 {
            CostFamily::Smoothed
        } else {
            CostFamily::Quadratic
        };
        let p = FlowProblem::from_random_network(&net, family, (1.0, 10.0), 0.5, 2.0)?;
        let lam = random_vec(&mut rng, 8);
        let g = dual_gradient(&p, &lam)?;
        let h = 1e-5;
        let mut fd = vec![0.0; 8];
        for (k, v) in fd.iter_mut().enumerate() {
            let mut up = lam.clone();
            let mut dn = lam.clone();
            up[k] += h;
            dn[k] -= h;
            *v = (dual_value(&p, &up)? - dual_value(&p, &dn)?) / (2.0 * h);
        }
        worst = worst.max(rel(&fd, &g));
    }
    Ok(SuiteResult::new(
        "dual-gradient-fd",
        worst <= 1e-6,
        format!("max relative error {worst:.2e} (limit 1e-6)"),
    ))
}

fn hessian_fd(seed: u64) -> Result<SuiteResult> {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for i in 0..3 {
        let net = generate_random_network(7, 10, seed + 10 + i, (1.0, 1.0))?;
        let p = FlowProblem::from_random_network(&net, CostFamily::Smoothed, (1.0, 3.0), 1.0, 1.0)?;
        let lam = random_vec(&mut rng, 7);
        let hd = dual_hessian(&p, &lam)?.to_dense();
        let h = 1e-5;
        let mut fd = DMatrix::zeros(7, 7);
        for k in 0..7 {
            let mut up = lam.clone();
            let mut dn = lam.clone();
            up[k] += h;
            dn[k] -= h;
            let gu = dual_gradient(&p, &up)?;
            let gd = dual_gradient(&p, &dn)?;
            for r in 0..7 {
                fd[(r, k)] = (gu[r] - gd[r]) / (2.0 * h);
            }
        }
        worst = worst.max((&fd - &hd).norm() / hd.norm());
    }
    Ok(SuiteResult::new(
        "dual-hessian-fd",
        worst <= 1e-4,
        format!("max relative error {worst:.2e} (limit 1e-4)"),
    ))
}

fn solver_accuracy(seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xacc);
    let mut worst: f64 = 0.0;
    let mut fails = 0;
    for i in 0..4 {
        let n = 6 + 3 * i as usize;
        let net = generate_random_network(n, 2 * n, seed + 20 + i, (1.0, 10.0))?;
        let m = ground(&laplacian(&net.graph), net.graph.grounding_node())?.matrix;
        let b = random_vec(&mut rng, n - 1);
        let exact = dense_spd_solve(&m.to_dense(), &b)?;
        for eps in [1e-2, 1e-4] {
            let x = e_dist_r_solve(
                &node_inputs(&m, &b, build_chain_for(&m)?.0.depth(), 1, Some(eps))?,
                &RunOptions::default(),
            )?
            .x;
            let err: Vec<f64> = x.iter().zip(&exact).map(|(a, b)| a - b).collect();
            let ratio = m.quad_form(&err).sqrt() / m.quad_form(&exact).sqrt() / eps;
            worst = worst.max(ratio);
            fails += usize::from(ratio > 1.0);
        }
    }
    Ok(SuiteResult::new(
        "solver-accuracy",
        fails == 0,
        format!("worst ||x - x*||_M / (eps ||x*||_M) = {worst:.3}"),
    ))
}

fn chain_and_locality(seed: u64) -> Result<SuiteResult> {
    let mut worst: f64 = 0.0;
    let mut local = true;
    for i in 0..3 {
        let net = generate_random_network(10, 16, seed + 30 + i, (1.0, 10.0))?;
        let m = ground(&laplacian(&net.graph), net.graph.grounding_node())?.matrix;
        let (chain, _) = build_chain_for(&m)?;
        worst = worst.max(verify_chain(&chain)?.eps_d);
        let b: Vec<f64> = (0..m.dim()).map(|k| (k as f64 + 1.0).sin()).collect();
        for r in [1, 2] {
            let run = e_dist_r_solve(
                &node_inputs(&m, &b, chain.depth(), r, Some(1e-3))?,
                &RunOptions::logged(),
            )?;
            local &= assert_locality(&run.transcript, &m.support_graph(), r).passed;
        }
    }
    let path = crate::graph::WeightedGraph::new(4, vec![(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)])?;
    let mut rogue: Vec<_> = (0..4).map(|_| RogueProgram::new(3)).collect();
    let caught = !assert_locality(&run(&mut rogue, &path, RunOptions::logged())?, &path, 1).passed;
    let budget = crate::chain::chain_budget();
    Ok(SuiteResult::new(
        "chain-and-locality",
        worst < budget && local && caught,
        format!(
            "max eps_d {worst:.4} (budget {budget:.4}); locality {local}; rogue caught {caught}"
        ),
    ))
}

fn direction_contract(seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1);
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        let net = generate_random_network(10, 18, seed + 40 + i, (1.0, 1.0))?;
        let family = if i % 2 == 0 {
            CostFamily::Smoothed
        } else {
            CostFamily::Quadratic
        };
        let p = FlowProblem::from_random_network(&net, family, (1.0, 10.0), 0.5, 3.0)?;
        let lam = random_vec(&mut rng, 10);
        let h = dual_hessian(&p, &lam)?;
        let g = dual_gradient(&p, &lam)?;
        let d = exact_direction(&h, &g)?;
        let eps = 1e-4;
        let dt = sddm_direction(&h, &g, &SddmOptions::new(eps, 1))?.direction;
        let diff: Vec<f64> = dt.iter().zip(&d).map(|(a, b)| a - b).collect();
        worst = worst.max(h_norm(&h, &diff) / h_norm(&h, &d) / eps);
    }
    Ok(SuiteResult::new(
        "newton-direction",
        worst <= 1.0,
        format!("worst ||d~ - d||_H / (eps ||d||_H) = {worst:.3}"),
    ))
}

fn phase_inequalities() -> Result<SuiteResult> {
    let eps = 0.01;
    let mut violations = 0;
    let mut checked = [0usize; 3];
    for p in theorem_instances(eps)? {
        let c = convergence_constants(&p, eps)?;
        let cfg = OptimizerConfig {
            eps,
            alpha_rule: AlphaRule::AlphaStar,
            threshold: 1e-9,
            max_iters: Some(5000),
            ..OptimizerConfig::default()
        };
        let trace = run_optimizer(&p, Method::SddmNewton, &cfg)?;
        let a = audit_phases(&trace, &c, 1e-9);
        violations += a.strict.violations
            + a.quadratic.violations
            + a.terminal.violations
            + usize::from(a.regressed);
        checked[0] += a.strict.checked;
        checked[1] += a.quadratic.checked;
        checked[2] += a.terminal.checked;
    }
    Ok(SuiteResult::new(
        "phase-inequalities",
        violations == 0,
        format!(
            "{violations} violations over {} strict, {} quadratic, {} terminal steps",
            checked[0], checked[1], checked[2]
        ),
    ))
}

fn inverse_identity(seed: u64) -> Result<SuiteResult> {
    // (I - X)^{-1} = 1/2 [I + (I + X)(I - X^2)^{-1}(I + X)] for ||X|| < 1
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1d);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let n = 6;
        let mut x = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        x = (&x + x.transpose()) * 0.5;
        let scale = 0.9 / x.symmetric_eigenvalues().amax();
        x *= scale;
        let id = DMatrix::<f64>::identity(n, n);
        let lhs = (&id - &x).try_inverse().expect("I - X is nonsingular");
        let inner = (&id - &x * &x)
            .try_inverse()
            .expect("I - X^2 is nonsingular");
        let rhs = (&id + (&id + &x) * inner * (&id + &x)) * 0.5;
        worst = worst.max((lhs - rhs).amax());
    }
    Ok(SuiteResult::new(
        "inverse-identity",
        worst <= 1e-10,
        format!("max entry error {worst:.2e}"),
    ))
}

/// Runs every suite. A suite that errors is reported as failed with the error.
pub fn run_all(seed: u64) -> Vec<SuiteResult> {
    type Suite = Box<dyn Fn() -> Result<SuiteResult>>;
    let suites: Vec<(&str, Suite)> = vec![
        ("dual-gradient-fd", Box::new(move || gradient_fd(seed))),
        ("dual-hessian-fd", Box::new(move || hessian_fd(seed))),
        ("inverse-identity", Box::new(move || inverse_identity(seed))),
        ("solver-accuracy", Box::new(move || solver_accuracy(seed))),
        (
            "chain-and-locality",
            Box::new(move || chain_and_locality(seed)),
        ),
        (
            "newton-direction",
            Box::new(move || direction_contract(seed)),
        ),
        ("phase-inequalities", Box::new(phase_inequalities)),
    ];
    suites
        .into_iter()
        .map(|(name, f)| {
            f().unwrap_or_else(|e| SuiteResult::new(name, false, format!("error: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theorem_instances_start_where_intended() {
        for (i, p) in theorem_instances(0.01).unwrap().iter().enumerate() {
            let c = convergence_constants(p, 0.01).unwrap();
            assert!(c.window_ok);
            let g0 = laplacian_norm(p, &dual_gradient(p, &vec![0.0; p.node_count()]).unwrap());
            if i % 2 == 0 {
                assert!((g0 / c.eta1 - 3.0).abs() < 1e-9);
            } else {
                assert!(g0 >= c.eta0 && g0 < c.eta1);
            }
        }
    }
}
