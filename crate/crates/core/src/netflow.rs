//! Min-cost network flow and its dual.
//!
//! For arc `e = (i, j)` with convex cost `Phi_e`, the flow that minimizes the
//! Lagrangian at potentials `lambda` is `x_e = Phi_e'^{-1}(lambda_i - lambda_j)`.
//! The dual objective used throughout is
//! `q(lambda) = lambda^T (A x(lambda) - b) - sum_e Phi_e(x_e(lambda))`,
//! which is convex; its gradient is `g = A x(lambda) - b` and its Hessian is
//! the weighted Laplacian `A diag(1 / Phi_e'') A^T`.
//!
//! ```
//! use sddmflow::netflow::{dual_gradient, CostFunction, FlowProblem};
//! use sddmflow::DirectedNetwork;
//!
//! let net = DirectedNetwork::new(2, vec![(0, 1)])?;
//! let p = FlowProblem::new(net, vec![CostFunction::quadratic(1.0)], vec![1.0, -1.0])?;
//! assert_eq!(dual_gradient(&p, &[0.0, 0.0])?, vec![-1.0, 1.0]);
//! # Ok::<(), sddmflow::Error>(())
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DirectedNetwork, RandomNetwork, WeightedGraph};
use crate::matrix::{dot, laplacian, project_out_ones, SplitMatrix};
use crate::spectral::{spectral_summary, SpectralMode};

/// Absolute tolerance of primal recovery for non-quadratic costs.
pub const ROOT_TOL: f64 = 1e-12;
const ROOT_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CostFunction {
    /// `(a/2) x^2 + c x`
    Quadratic {
        a: f64,
        #[serde(default)]
        c: f64,
    },
    /// `(a/2) x^2 + s sqrt(1 + x^2)`
    Smoothed { a: f64, s: f64 },
}

impl CostFunction {
    pub fn quadratic(a: f64) -> Self {
        CostFunction::Quadratic { a, c: 0.0 }
    }

    pub fn smoothed(a: f64, s: f64) -> Self {
        CostFunction::Smoothed { a, s }
    }

    fn validate(&self, edge: usize) -> Result<()> {
        let ok = match *self {
            CostFunction::Quadratic { a, c } => a > 0.0 && a.is_finite() && c.is_finite(),
            CostFunction::Smoothed { a, s } => a > 0.0 && a.is_finite() && s > 0.0 && s.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!(
                "cost of edge {edge} has invalid coefficients: {self:?}"
            )))
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            CostFunction::Quadratic { a, c } => 0.5 * a * x * x + c * x,
            CostFunction::Smoothed { a, s } => 0.5 * a * x * x + s * (1.0 + x * x).sqrt(),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            CostFunction::Quadratic { a, c } => a * x + c,
            CostFunction::Smoothed { a, s } => a * x + s * x / (1.0 + x * x).sqrt(),
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match *self {
            CostFunction::Quadratic { a, .. } => a,
            CostFunction::Smoothed { a, s } => a + s / (1.0 + x * x).powf(1.5),
        }
    }

    pub fn third_derivative(&self, x: f64) -> f64 {
        match *self {
            CostFunction::Quadratic { .. } => 0.0,
            CostFunction::Smoothed { s, .. } => -3.0 * s * x / (1.0 + x * x).powf(2.5),
        }
    }

    /// `(inf, sup)` of the second derivative over the real line.
    pub fn curvature_bounds(&self) -> (f64, f64) {
        match *self {
            CostFunction::Quadratic { a, .. } => (a, a),
            CostFunction::Smoothed { a, s } => (a, a + s),
        }
    }

    /// Lipschitz constant of `1 / Phi''`, i.e. `max |Phi''' / Phi''^2|`.
    pub fn delta(&self) -> f64 {
        match *self {
            CostFunction::Quadratic { .. } => 0.0,
            CostFunction::Smoothed { .. } => {
                let f =
                    |x: f64| (self.third_derivative(x) / self.second_derivative(x).powi(2)).abs();
                // the ratio is odd-symmetric in x and decays like x^-4
                let (mut best_x, mut best) = (0.0, 0.0);
                let steps = 4000;
                for i in 0..=steps {
                    let x = 10.0 * i as f64 / steps as f64;
                    let v = f(x);
                    if v > best {
                        best = v;
                        best_x = x;
                    }
                }
                let h = 10.0 / steps as f64;
                let (mut lo, mut hi) = ((best_x - h).max(0.0), best_x + h);
                let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
                for _ in 0..100 {
                    let m1 = hi - inv_phi * (hi - lo);
                    let m2 = lo + inv_phi * (hi - lo);
                    if f(m1) < f(m2) {
                        lo = m1;
                    } else {
                        hi = m2;
                    }
                }
                best.max(f(0.5 * (lo + hi)))
            }
        }
    }

    /// Solves `Phi'(x) = t`.
    pub fn inverse_derivative(&self, t: f64, edge: usize) -> Result<f64> {
        if !t.is_finite() {
            return Err(Error::RootFinding {
                edge,
                reason: format!("target derivative {t} is not finite"),
            });
        }
        match *self {
            CostFunction::Quadratic { a, c } => Ok((t - c) / a),
            CostFunction::Smoothed { a, s } => {
                // |s x / sqrt(1 + x^2)| < s brackets the root
                let (mut lo, mut hi) = ((t - s) / a, (t + s) / a);
                let mut x = t / (a + s);
                for _ in 0..ROOT_MAX_ITER {
                    let fx = self.derivative(x) - t;
                    if fx == 0.0 {
                        return Ok(x);
                    }
                    if fx < 0.0 {
                        lo = x;
                    } else {
                        hi = x;
                    }
                    let newton = x - fx / self.second_derivative(x);
                    let next = if newton > lo && newton < hi {
                        newton
                    } else {
                        0.5 * (lo + hi)
                    };
                    if (next - x).abs() <= ROOT_TOL * (1.0 + x.abs()) || hi - lo <= ROOT_TOL {
                        return Ok(next);
                    }
                    x = next;
                }
                Err(Error::RootFinding {
                    edge,
                    reason: format!(
                        "no convergence after {ROOT_MAX_ITER} iterations for target {t}"
                    ),
                })
            }
        }
    }
}

/// Which cost family to draw when generating problems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostFamily {
    Quadratic,
    Smoothed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowProblem {
    network: DirectedNetwork,
    costs: Vec<CostFunction>,
    b: Vec<f64>,
    graph: WeightedGraph,
}

/// On-disk form: `{version, network: {n, arcs}, costs: [{kind, a, c|s}], b}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowProblemFile {
    pub version: u32,
    pub network: NetworkArcs,
    pub costs: Vec<CostFunction>,
    pub b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkArcs {
    pub n: usize,
    pub arcs: Vec<(usize, usize)>,
}

pub const FLOW_FILE_VERSION: u32 = 1;

impl FlowProblem {
    pub fn new(network: DirectedNetwork, costs: Vec<CostFunction>, b: Vec<f64>) -> Result<Self> {
        let n = network.node_count();
        if costs.len() != network.arc_count() {
            return Err(Error::Structure(format!(
                "{} costs for {} arcs",
                costs.len(),
                network.arc_count()
            )));
        }
        if b.len() != n {
            return Err(Error::Structure(format!(
                "supply has {} entries for {n} nodes",
                b.len()
            )));
        }
        for (e, c) in costs.iter().enumerate() {
            c.validate(e)?;
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("supply must be finite"));
        }
        let total: f64 = b.iter().sum();
        let scale: f64 = b.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        if total.abs() > 1e-9 * scale {
            return Err(Error::param(format!(
                "supplies must sum to zero, got {total:e}"
            )));
        }
        let graph = network.unweighted_graph();
        graph.validate_connected()?;
        Ok(Self {
            network,
            costs,
            b,
            graph,
        })
    }

    /// Costs drawn on top of a generated network. Coefficients `a_e` are
    /// uniform in `curvature` (quadratic) or `(curvature.0, curvature.1 - s)`
    /// plus `s` for the smoothed family, from a ChaCha8 stream on `seed`
    /// separate from the one that built the topology.
    pub fn from_random_network(
        net: &RandomNetwork,
        family: CostFamily,
        curvature: (f64, f64),
        smoothing: f64,
        supply_scale: f64,
    ) -> Result<Self> {
        let (lo, hi) = curvature;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::param(format!(
                "curvature range ({lo}, {hi}) must satisfy 0 < lo <= hi"
            )));
        }
        if !(supply_scale > 0.0 && supply_scale.is_finite()) {
            return Err(Error::param("supply scale must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(net.seed);
        rng.set_stream(1);
        let mut draw = |lo: f64, hi: f64| {
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        };
        let costs = (0..net.network.arc_count())
            .map(|_| match family {
                CostFamily::Quadratic => Ok(CostFunction::quadratic(draw(lo, hi))),
                CostFamily::Smoothed => {
                    if !(smoothing > 0.0 && lo + smoothing <= hi) {
                        return Err(Error::param(format!(
                            "smoothing {smoothing} must be positive and fit inside the curvature range ({lo}, {hi})"
                        )));
                    }
                    Ok(CostFunction::smoothed(draw(lo, hi - smoothing), smoothing))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let b = net.supply.iter().map(|v| v * supply_scale).collect();
        Self::new(net.network.clone(), costs, b)
    }

    pub fn network(&self) -> &DirectedNetwork {
        &self.network
    }

    pub fn costs(&self) -> &[CostFunction] {
        &self.costs
    }

    pub fn supply(&self) -> &[f64] {
        &self.b
    }

    pub fn node_count(&self) -> usize {
        self.network.node_count()
    }

    pub fn arc_count(&self) -> usize {
        self.network.arc_count()
    }

    /// The underlying undirected graph with `A A^T` weights (antiparallel
    /// arcs merge into weight 2).
    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    /// The unweighted Laplacian `A A^T`.
    pub fn incidence_laplacian(&self) -> SplitMatrix {
        laplacian(&self.graph)
    }

    /// `(gamma, Gamma)`: bounds on every edge's curvature.
    pub fn curvature_bounds(&self) -> (f64, f64) {
        self.costs
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), c| {
                let (l, h) = c.curvature_bounds();
                (lo.min(l), hi.max(h))
            })
    }

    pub fn delta(&self) -> f64 {
        self.costs
            .iter()
            .map(CostFunction::delta)
            .fold(0.0, f64::max)
    }

    pub fn is_quadratic(&self) -> bool {
        self.costs
            .iter()
            .all(|c| matches!(c, CostFunction::Quadratic { .. }))
    }

    pub fn to_file(&self, seed: Option<u64>) -> FlowProblemFile {
        FlowProblemFile {
            version: FLOW_FILE_VERSION,
            network: NetworkArcs {
                n: self.node_count(),
                arcs: self.network.arcs().to_vec(),
            },
            costs: self.costs.clone(),
            b: self.b.clone(),
            seed,
        }
    }

    pub fn to_json(&self, seed: Option<u64>) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file(seed))?)
    }

    pub fn from_json(text: &str) -> Result<(Self, Option<u64>)> {
        let file: FlowProblemFile = serde_json::from_str(text)?;
        if file.version != FLOW_FILE_VERSION {
            return Err(Error::Parse(format!(
                "unsupported problem version {}",
                file.version
            )));
        }
        let net = DirectedNetwork::new(file.network.n, file.network.arcs)?;
        Ok((Self::new(net, file.costs, file.b)?, file.seed))
    }
}

fn check_lambda(p: &FlowProblem, lambda: &[f64]) -> Result<()> {
    if lambda.len() != p.node_count() {
        return Err(Error::param(format!(
            "dual vector has length {}, network has {} nodes",
            lambda.len(),
            p.node_count()
        )));
    }
    if lambda.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("dual vector must be finite"));
    }
    Ok(())
}

/// `x_e(lambda) = Phi_e'^{-1}(lambda_i - lambda_j)` for every arc `(i, j)`.
pub fn primal_from_dual(p: &FlowProblem, lambda: &[f64]) -> Result<Vec<f64>> {
    check_lambda(p, lambda)?;
    p.network
        .arcs()
        .iter()
        .zip(&p.costs)
        .enumerate()
        .map(|(e, (&(i, j), c))| c.inverse_derivative(lambda[i] - lambda[j], e))
        .collect()
}

/// `A x - b`
pub fn constraint_residual(p: &FlowProblem, x: &[f64]) -> Vec<f64> {
    p.network
        .apply_incidence(x)
        .into_iter()
        .zip(&p.b)
        .map(|(ax, b)| ax - b)
        .collect()
}

/// `g = A x(lambda) - b`
pub fn dual_gradient(p: &FlowProblem, lambda: &[f64]) -> Result<Vec<f64>> {
    Ok(constraint_residual(p, &primal_from_dual(p, lambda)?))
}

/// Component `k` of the gradient from node `k`'s incident arcs only.
pub fn local_gradient(p: &FlowProblem, lambda: &[f64], k: usize) -> Result<f64> {
    let mut g = -p.b[k];
    for &(e, sign) in p.network.incident(k) {
        let (i, j) = p.network.arcs()[e];
        g += sign * p.costs[e].inverse_derivative(lambda[i] - lambda[j], e)?;
    }
    Ok(g)
}

/// Weighted Laplacian with edge weights `1 / Phi_e''(x_e(lambda))`.
pub fn dual_hessian(p: &FlowProblem, lambda: &[f64]) -> Result<SplitMatrix> {
    let x = primal_from_dual(p, lambda)?;
    let w: Vec<f64> = x
        .iter()
        .zip(&p.costs)
        .map(|(&xe, c)| 1.0 / c.second_derivative(xe))
        .collect();
    Ok(laplacian(&p.network.underlying_graph(&w)?))
}

/// `q(lambda) = lambda^T (A x - b) - sum_e Phi_e(x_e)`
pub fn dual_value(p: &FlowProblem, lambda: &[f64]) -> Result<f64> {
    let x = primal_from_dual(p, lambda)?;
    Ok(dot(lambda, &constraint_residual(p, &x)) - primal_objective(p, &x))
}

/// `f(x) = sum_e Phi_e(x_e)`
pub fn primal_objective(p: &FlowProblem, x: &[f64]) -> f64 {
    x.iter().zip(&p.costs).map(|(&xe, c)| c.value(xe)).sum()
}

/// `||A x - b||_2`
pub fn feasibility(p: &FlowProblem, x: &[f64]) -> f64 {
    crate::matrix::norm2(&constraint_residual(p, x))
}

/// `sqrt(v^T L v)` with `L = A A^T`, after projecting out the constant vector.
pub fn laplacian_norm(p: &FlowProblem, v: &[f64]) -> f64 {
    let v = project_out_ones(v);
    laplacian(&p.graph).quad_form(&v).max(0.0).sqrt()
}

/// Dual iterate together with the primal flows and gradient it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub lambda: Vec<f64>,
    pub x: Vec<f64>,
    pub g: Vec<f64>,
}

impl DualState {
    pub fn new(p: &FlowProblem, lambda: Vec<f64>) -> Result<Self> {
        let x = primal_from_dual(p, &lambda)?;
        let g = constraint_residual(p, &x);
        Ok(Self { lambda, x, g })
    }
}

/// Extreme nonzero eigenvalues `(mu_2, mu_n)` of `L = A A^T`.
pub fn laplacian_extremes(p: &FlowProblem) -> Result<(f64, f64)> {
    let s = spectral_summary(&p.incidence_laplacian(), SpectralMode::Exact)?;
    Ok((s.mu_min_nonzero, s.mu_max))
}

/// `B = mu_n delta / (gamma sqrt(mu_2))`
pub fn lipschitz_constant_b(p: &FlowProblem) -> Result<f64> {
    let (mu2, mun) = laplacian_extremes(p)?;
    let (gamma, _) = p.curvature_bounds();
    Ok(mun * p.delta() / (gamma * mu2.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_edge(cost: CostFunction) -> FlowProblem {
        FlowProblem::new(
            DirectedNetwork::new(2, vec![(0, 1)]).unwrap(),
            vec![cost],
            vec![1.0, -1.0],
        )
        .unwrap()
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn quadratic_primal_recovery() {
        let p = single_edge(CostFunction::quadratic(1.0));
        assert_eq!(primal_from_dual(&p, &[0.0, 0.0]).unwrap(), vec![0.0]);
        assert_eq!(primal_from_dual(&p, &[1.0, 0.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn smoothed_root_matches_bisection() {
        let c = CostFunction::smoothed(1.0, 1.0);
        let x = c.inverse_derivative(2.0, 0).unwrap();
        let oracle = bisect(|x| x + x / (1.0 + x * x).sqrt() - 2.0, 0.0, 2.0);
        assert!((x - oracle).abs() < 1e-12);
        assert!((x - 1.225_270_426).abs() < 1e-8);
        for t in [-50.0, -1.0, 0.0, 1e-9, 3.7, 1e6] {
            let x = c.inverse_derivative(t, 0).unwrap();
            assert!((c.derivative(x) - t).abs() <= 1e-10 * (1.0 + t.abs()));
        }
        assert!(matches!(
            c.inverse_derivative(f64::NAN, 3),
            Err(Error::RootFinding { edge: 3, .. })
        ));
    }

    #[test]
    fn single_edge_hand_values() {
        let p = single_edge(CostFunction::quadratic(1.0));
        assert_eq!(dual_gradient(&p, &[0.0, 0.0]).unwrap(), vec![-1.0, 1.0]);
        assert_eq!(feasibility(&p, &[1.0]), 0.0);
        assert_eq!(primal_objective(&p, &[1.0]), 0.5);
        let h = dual_hessian(&p, &[0.3, -2.0]).unwrap().to_dense();
        assert_eq!(
            h,
            nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])
        );
        assert_eq!(lipschitz_constant_b(&p).unwrap(), 0.0);
    }

    #[test]
    fn supply_must_balance() {
        let net = DirectedNetwork::new(2, vec![(0, 1)]).unwrap();
        assert!(FlowProblem::new(
            net.clone(),
            vec![CostFunction::quadratic(1.0)],
            vec![1.0, 0.0]
        )
        .is_err());
        assert!(
            FlowProblem::new(net, vec![CostFunction::quadratic(-1.0)], vec![1.0, -1.0]).is_err()
        );
    }

    #[test]
    fn smoothed_delta_on_grid() {
        let c = CostFunction::smoothed(1.0, 1.0);
        let mut best: f64 = 0.0;
        for i in 0..=200_000 {
            let x = -10.0 + 20.0 * i as f64 / 200_000.0;
            let r = 3.0 * x.abs()
                / (1.0 + x * x).powf(2.5)
                / (1.0 + 1.0 / (1.0 + x * x).powf(1.5)).powi(2);
            best = best.max(r);
        }
        assert!((c.delta() - best).abs() < 1e-8);
        assert!((CostFunction::smoothed(1.0, 2.0).delta() - c.delta()).abs() > 1e-3);
    }

    #[test]
    fn json_round_trip() {
        let net = crate::graph::generate_random_network(8, 12, 3, (1.0, 1.0)).unwrap();
        let p = FlowProblem::from_random_network(&net, CostFamily::Smoothed, (1.0, 10.0), 1.0, 1.0)
            .unwrap();
        let (back, seed) = FlowProblem::from_json(&p.to_json(Some(3)).unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(seed, Some(3));
        assert!(p.to_json(None).unwrap().contains("\"kind\": \"smoothed\""));
    }
}
