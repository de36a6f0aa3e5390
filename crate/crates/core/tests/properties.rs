use proptest::prelude::*;

use sddmflow::chain::{build_exact_chain, chain_length, export_chain, import_chain};
use sddmflow::dist::{e_dist_r_solve, node_inputs};
use sddmflow::matrix::{project_out_ones, seeded_rhs};
use sddmflow::netflow::{
    dual_gradient, dual_hessian, primal_from_dual, CostFamily, CostFunction, FlowProblem,
};
use sddmflow::optim::{sddm_direction, SddmOptions};
use sddmflow::sim::RunOptions;
use sddmflow::{
    generate_random_network, ground, laplacian, spectral_summary, SpectralMode, SplitMatrix,
};

fn grounded(n: usize, m: usize, seed: u64) -> SplitMatrix {
    let m = m.min(n * (n - 1) / 2);
    let net = generate_random_network(n, m, seed, (1.0, 10.0)).unwrap();
    ground(&laplacian(&net.graph), net.graph.grounding_node())
        .unwrap()
        .matrix
}

fn problem(n: usize, seed: u64, smoothed: bool) -> FlowProblem {
    let net =
        generate_random_network(n, (2 * n - 1).min(n * (n - 1) / 2), seed, (1.0, 1.0)).unwrap();
    let family = if smoothed {
        CostFamily::Smoothed
    } else {
        CostFamily::Quadratic
    };
    FlowProblem::from_random_network(&net, family, (1.0, 10.0), 0.5, 3.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn inverse_derivative_inverts(a in 0.1f64..10.0, s in 0.0f64..5.0, t in -50.0f64..50.0) {
        let c = CostFunction::smoothed(a, s);
        let x = c.inverse_derivative(t, 0).unwrap();
        prop_assert!((c.derivative(x) - t).abs() <= 1e-9 * (1.0 + t.abs()));
    }

    #[test]
    fn primal_satisfies_optimality(n in 3usize..12, seed in 0u64..1000, smoothed: bool) {
        let p = problem(n, seed, smoothed);
        let lam = seeded_rhs(n, seed + 1);
        let x = primal_from_dual(&p, &lam).unwrap();
        for (e, &(u, v)) in p.network().arcs().iter().enumerate() {
            // x_e minimizes Phi_e(x) - (lambda_u - lambda_v) x
            let t = lam[u] - lam[v];
            prop_assert!((p.costs()[e].derivative(x[e]) - t).abs() <= 1e-9 * (1.0 + t.abs()));
        }
    }

    #[test]
    fn dual_gradient_sums_to_zero(n in 3usize..15, seed in 0u64..1000, smoothed: bool) {
        let p = problem(n, seed, smoothed);
        let g = dual_gradient(&p, &seeded_rhs(n, seed)).unwrap();
        let scale: f64 = g.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        prop_assert!(g.iter().sum::<f64>().abs() <= 1e-12 * scale);
    }

    #[test]
    fn hessian_is_a_laplacian(n in 3usize..15, seed in 0u64..1000) {
        let p = problem(n, seed, true);
        let h = dual_hessian(&p, &seeded_rhs(n, seed)).unwrap();
        let ones = h.apply(&vec![1.0; n]);
        prop_assert!(ones.iter().all(|v| v.abs() <= 1e-12 * h.diag().iter().cloned().fold(1.0, f64::max)));
    }

    #[test]
    fn direction_ignores_constant_shifts(n in 4usize..14, seed in 0u64..1000, shift in -5.0f64..5.0) {
        let p = problem(n, seed, true);
        let lam = seeded_rhs(n, seed);
        let h = dual_hessian(&p, &lam).unwrap();
        let g = dual_gradient(&p, &lam).unwrap();
        let shifted: Vec<f64> = g.iter().map(|v| v + shift).collect();
        let opts = SddmOptions::new(1e-6, 1);
        let a = sddm_direction(&h, &g, &opts).unwrap().direction;
        let b = sddm_direction(&h, &shifted, &opts).unwrap().direction;
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() <= 1e-8 * (1.0 + u.abs()));
        }
        prop_assert!(a.iter().sum::<f64>().abs() <= 1e-9 * (1.0 + a.iter().map(|v| v.abs()).sum::<f64>()));
    }

    #[test]
    fn solve_is_linear_in_scale(n in 4usize..20, seed in 0u64..1000, k in 0.1f64..100.0) {
        // Stopping is relative, so scaling b scales the iterates exactly.
        let m = grounded(n, 2 * n, seed);
        let b = seeded_rhs(m.dim(), seed);
        let bk: Vec<f64> = b.iter().map(|v| v * k).collect();
        let d = chain_length(spectral_summary(&m, SpectralMode::Exact).unwrap().kappa).unwrap();
        let x = e_dist_r_solve(&node_inputs(&m, &b, d, 1, Some(1e-6)).unwrap(), &RunOptions::default()).unwrap();
        let xk = e_dist_r_solve(&node_inputs(&m, &bk, d, 1, Some(1e-6)).unwrap(), &RunOptions::default()).unwrap();
        prop_assert_eq!(x.sweeps, xk.sweeps);
        for (u, v) in x.x.iter().zip(&xk.x) {
            prop_assert!((u * k - v).abs() <= 1e-9 * (1.0 + v.abs()));
        }
    }
}

#[test]
fn schedule_does_not_change_the_solution() {
    let m = grounded(15, 30, 3);
    let b = seeded_rhs(m.dim(), 3);
    let inputs = node_inputs(&m, &b, 6, 2, Some(1e-5)).unwrap();
    let base = e_dist_r_solve(&inputs, &RunOptions::logged()).unwrap();
    let reversed = RunOptions {
        log_messages: true,
        schedule: Some((0..m.dim()).rev().collect()),
        ..RunOptions::default()
    };
    let other = e_dist_r_solve(&inputs, &reversed).unwrap();
    assert_eq!(base.x, other.x);
    assert_eq!(base.transcript.to_ndjson(), other.transcript.to_ndjson());
}

#[test]
fn chain_export_round_trip() {
    let m = grounded(12, 20, 9);
    let chain = build_exact_chain(&m, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_chain(&chain, dir.path(), Some(3.5), Some(9)).unwrap();
    let (back, manifest) = import_chain(dir.path()).unwrap();
    assert_eq!(manifest.d, 5);
    assert_eq!(manifest.seed, Some(9));
    assert_eq!(back.epsilons(), chain.epsilons());
    let diff = back.level_matrix_dense(5).unwrap() - chain.level_matrix_dense(5).unwrap();
    assert!(diff.amax() < 1e-12);
}

#[test]
fn problem_file_round_trip_preserves_the_dual() {
    let p = problem(10, 4, true);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    std::fs::write(&path, p.to_json(Some(4)).unwrap()).unwrap();
    let (back, seed) = FlowProblem::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(seed, Some(4));
    let lam = seeded_rhs(10, 1);
    assert_eq!(
        dual_gradient(&p, &lam).unwrap(),
        dual_gradient(&back, &lam).unwrap()
    );
}

#[test]
fn projected_rhs_has_zero_mean() {
    let v = project_out_ones(&[1.0, 2.0, 3.0, 10.0]);
    assert!(v.iter().sum::<f64>().abs() < 1e-14);
}
