//! TOML-driven experiments: one problem instance, every requested method,
//! one RunTrace CSV per method and a summary JSON.
//!
//! ```
//! use sddmflow::bench::ExperimentConfig;
//!
//! let cfg = ExperimentConfig::from_toml_str("n = 6\nm = 8\nseed = 3\n")?;
//! assert_eq!(cfg.solver.eps, 1e-4);
//! assert!(ExperimentConfig::from_toml_str("n = 6\nm = 4\nseed = 3\n").is_err());
//! # Ok::<(), sddmflow::Error>(())
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chain::check_eps;
use crate::dist::is_power_of_two;
use crate::error::{Error, Result};
use crate::graph::generate_random_network;
use crate::netflow::{CostFamily, FlowProblem};
use crate::optim::{run_optimizer, AlphaRule, Method, OptimizerConfig, RunTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    /// Multiplier on the unit source/sink supply.
    #[serde(default = "defaults::supply_scale")]
    pub supply_scale: f64,
    #[serde(default)]
    pub costs: CostConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub run: RunConfig,
    /// Output directory; relative paths resolve against the working directory.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    #[serde(default = "defaults::family")]
    pub family: CostFamily,
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    #[serde(rename = "Gamma", default = "defaults::big_gamma")]
    pub big_gamma: f64,
    /// `s` of the smoothed family.
    #[serde(default = "defaults::smoothing")]
    pub smoothing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "defaults::eps")]
    pub eps: f64,
    #[serde(default = "defaults::r_hop")]
    pub r_hop: usize,
    /// Chain depth override.
    #[serde(default)]
    pub d: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "defaults::methods")]
    pub methods: Vec<Method>,
    /// Step rule of the Newton-type methods.
    #[serde(default = "defaults::alpha_rule")]
    pub alpha_rule: AlphaRule,
    #[serde(default = "defaults::gradient_alpha_rule")]
    pub gradient_alpha_rule: AlphaRule,
    /// Fixed step or first backtracking trial for the Newton-type methods.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Fixed step for gradient descent; defaults to `gamma / mu_n(L)`.
    #[serde(default)]
    pub gradient_alpha: Option<f64>,
    #[serde(default = "defaults::threshold")]
    pub threshold: f64,
    #[serde(default = "defaults::feasibility_target")]
    pub feasibility_target: f64,
    #[serde(default = "defaults::neumann_terms")]
    pub neumann_terms: usize,
    /// Defaults to `10 n`.
    #[serde(default)]
    pub max_iters_newton: Option<usize>,
    /// Defaults to 10000.
    #[serde(default)]
    pub max_iters_gradient: Option<usize>,
    #[serde(default)]
    pub timing: bool,
}

mod defaults {
    use super::*;
    pub fn supply_scale() -> f64 {
        1.0
    }
    pub fn family() -> CostFamily {
        CostFamily::Quadratic
    }
    pub fn gamma() -> f64 {
        1.0
    }
    pub fn big_gamma() -> f64 {
        10.0
    }
    pub fn smoothing() -> f64 {
        0.5
    }
    pub fn eps() -> f64 {
        1e-4
    }
    pub fn r_hop() -> usize {
        1
    }
    pub fn methods() -> Vec<Method> {
        Method::ALL.to_vec()
    }
    pub fn alpha_rule() -> AlphaRule {
        AlphaRule::Backtracking
    }
    pub fn gradient_alpha_rule() -> AlphaRule {
        AlphaRule::Fixed
    }
    pub fn threshold() -> f64 {
        1e-10
    }
    pub fn feasibility_target() -> f64 {
        1e-3
    }
    pub fn neumann_terms() -> usize {
        2
    }
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            family: defaults::family(),
            gamma: defaults::gamma(),
            big_gamma: defaults::big_gamma(),
            smoothing: defaults::smoothing(),
        }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps: defaults::eps(),
            r_hop: defaults::r_hop(),
            d: None,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            methods: defaults::methods(),
            alpha_rule: defaults::alpha_rule(),
            gradient_alpha_rule: defaults::gradient_alpha_rule(),
            alpha: None,
            gradient_alpha: None,
            threshold: defaults::threshold(),
            feasibility_target: defaults::feasibility_target(),
            neumann_terms: defaults::neumann_terms(),
            max_iters_newton: None,
            max_iters_gradient: None,
            timing: false,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    /// Checks every precondition that can be checked without building the
    /// problem.
    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n, self.m);
        if n < 2 {
            return Err(Error::param(format!("need at least 2 nodes, got {n}")));
        }
        if m + 1 < n {
            return Err(Error::param(format!(
                "{m} edges cannot connect {n} nodes (need at least {})",
                n - 1
            )));
        }
        if m > n * (n - 1) / 2 {
            return Err(Error::param(format!(
                "{m} edges exceed the simple-graph maximum {}",
                n * (n - 1) / 2
            )));
        }
        positive("supply_scale", self.supply_scale)?;
        let c = &self.costs;
        positive("gamma", c.gamma)?;
        positive("Gamma", c.big_gamma)?;
        if c.gamma > c.big_gamma {
            return Err(Error::param(format!(
                "gamma {} exceeds Gamma {}",
                c.gamma, c.big_gamma
            )));
        }
        if c.family == CostFamily::Smoothed {
            positive("smoothing", c.smoothing)?;
            if c.gamma + c.smoothing > c.big_gamma {
                return Err(Error::param(format!(
                    "smoothing {} does not fit in [gamma, Gamma] = [{}, {}]",
                    c.smoothing, c.gamma, c.big_gamma
                )));
            }
        }
        check_eps(self.solver.eps)?;
        if !is_power_of_two(self.solver.r_hop) {
            return Err(Error::param(format!(
                "R = {} is not a power of two",
                self.solver.r_hop
            )));
        }
        if self.solver.d == Some(0) {
            return Err(Error::param("chain depth must be at least 1"));
        }
        let r = &self.run;
        if r.methods.is_empty() {
            return Err(Error::param("no methods requested"));
        }
        for (i, m) in r.methods.iter().enumerate() {
            if r.methods[..i].contains(m) {
                return Err(Error::param(format!("method {m} listed twice")));
            }
        }
        if !(r.threshold >= 0.0 && r.threshold.is_finite()) {
            return Err(Error::param("threshold must be finite and non-negative"));
        }
        positive("feasibility_target", r.feasibility_target)?;
        for (name, a) in [("alpha", r.alpha), ("gradient_alpha", r.gradient_alpha)] {
            if let Some(a) = a {
                positive(name, a)?;
            }
        }
        if r.max_iters_newton == Some(0) || r.max_iters_gradient == Some(0) {
            return Err(Error::param("iteration caps must be positive"));
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<FlowProblem> {
        let net = generate_random_network(self.n, self.m, self.seed, (1.0, 1.0))?;
        FlowProblem::from_random_network(
            &net,
            self.costs.family,
            (self.costs.gamma, self.costs.big_gamma),
            self.costs.smoothing,
            self.supply_scale,
        )
    }

    pub fn optimizer_config(&self, method: Method) -> OptimizerConfig {
        let r = &self.run;
        let gradient = method == Method::Gradient;
        OptimizerConfig {
            eps: self.solver.eps,
            r_hop: self.solver.r_hop,
            depth: self.solver.d,
            alpha_rule: if gradient {
                r.gradient_alpha_rule
            } else {
                r.alpha_rule
            },
            alpha: if gradient { r.gradient_alpha } else { r.alpha },
            threshold: r.threshold,
            max_iters: if gradient {
                r.max_iters_gradient
            } else {
                r.max_iters_newton
            },
            neumann_terms: r.neumann_terms,
            seed: Some(self.seed),
            timing: r.timing,
            measure_chain: true,
            lambda0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub csv: String,
    pub iterations: usize,
    pub converged: bool,
    /// First `k` with `||g_k||_2 = ||A x_k - b|| <= threshold`.
    pub iterations_to_threshold: Option<usize>,
    /// First `k` with feasibility at or below `feasibility_target`.
    pub iterations_to_feasibility: Option<usize>,
    pub final_f: f64,
    pub final_feasibility: f64,
    pub total_messages: usize,
    pub total_rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: Option<String>,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub eps: f64,
    pub r_hop: usize,
    pub threshold: f64,
    pub feasibility_target: f64,
    pub methods: Vec<MethodSummary>,
}

impl ExperimentSummary {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub problem: FlowProblem,
    pub traces: Vec<(Method, RunTrace)>,
    pub summary: ExperimentSummary,
}

impl ExperimentOutput {
    pub fn trace(&self, m: Method) -> Option<&RunTrace> {
        self.traces.iter().find(|(k, _)| *k == m).map(|(_, t)| t)
    }
}

/// Runs every method on the same instance. When `out_dir` is given (or the
/// config names an output directory) writes `<method>.csv`, `summary.json`
/// and `problem.json` there.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let problem = cfg.build_problem()?;
    let mut traces = Vec::new();
    let mut methods = Vec::new();
    for &method in &cfg.run.methods {
        let trace = run_optimizer(&problem, method, &cfg.optimizer_config(method))?;
        let last = trace
            .rows
            .last()
            .expect("a trace always has its initial row");
        methods.push(MethodSummary {
            method,
            csv: format!("{method}.csv"),
            iterations: trace.iterations(),
            converged: trace.converged,
            iterations_to_threshold: trace.first_feasible(cfg.run.threshold),
            iterations_to_feasibility: trace.first_feasible(cfg.run.feasibility_target),
            final_f: last.f,
            final_feasibility: last.feas,
            total_messages: last.messages,
            total_rounds: last.rounds,
        });
        traces.push((method, trace));
    }
    let summary = ExperimentSummary {
        name: cfg.name.clone(),
        n: cfg.n,
        m: cfg.m,
        seed: cfg.seed,
        eps: cfg.solver.eps,
        r_hop: cfg.solver.r_hop,
        threshold: cfg.run.threshold,
        feasibility_target: cfg.run.feasibility_target,
        methods,
    };
    if let Some(dir) = out_dir.or(cfg.output.as_deref()) {
        fs::create_dir_all(dir)?;
        for (method, trace) in &traces {
            fs::write(dir.join(format!("{method}.csv")), trace.to_csv())?;
        }
        fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&summary)? + "\n",
        )?;
        fs::write(
            dir.join("problem.json"),
            problem.to_json(Some(cfg.seed))? + "\n",
        )?;
    }
    Ok(ExperimentOutput {
        problem,
        traces,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            ExperimentConfig::from_toml_str("n = 6\nm = 8\nseed = 1\nbogus = 2\n"),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn validation_cases() {
        let base = ExperimentConfig::from_toml_str("n = 6\nm = 8\nseed = 1\n").unwrap();
        let bad = |f: &dyn Fn(&mut ExperimentConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(&|c| c.m = 16));
        assert!(bad(&|c| c.solver.r_hop = 3));
        assert!(bad(&|c| c.solver.eps = 0.7));
        assert!(bad(&|c| c.costs.gamma = 20.0));
        assert!(bad(
            &|c| c.run.methods = vec![Method::Gradient, Method::Gradient]
        ));
        assert!(bad(&|c| c.run.methods.clear()));
        assert!(bad(&|c| {
            c.costs.family = CostFamily::Smoothed;
            c.costs.smoothing = 9.5;
        }));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::from_toml_str(
            "n = 6\nm = 8\nseed = 1\n[solver]\nd = 4\n[run]\nmethods = [\"sddm-newton\"]\nalpha_rule = \"alpha_star\"\n",
        )
        .unwrap();
        assert_eq!(cfg.run.methods, vec![Method::SddmNewton]);
        assert_eq!(
            ExperimentConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap(),
            cfg
        );
    }

    #[test]
    fn summary_matches_traces() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_toml_str("n = 8\nm = 12\nseed = 5\nsupply_scale = 4.0\n")
            .unwrap();
        let out = run_experiment(&cfg, Some(dir.path())).unwrap();
        for s in &out.summary.methods {
            let text = fs::read_to_string(dir.path().join(&s.csv)).unwrap();
            let t = RunTrace::from_csv(&text).unwrap();
            assert_eq!(
                t.first_feasible(cfg.run.feasibility_target),
                s.iterations_to_feasibility
            );
            assert_eq!(t.rows.len(), s.iterations + 1);
        }
        assert!(dir.path().join("summary.json").exists());
    }
}
