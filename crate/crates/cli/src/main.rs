use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use sddmflow::bench::{run_experiment, ExperimentConfig};
use sddmflow::chain::{default_stop_rule, StopRule};
use sddmflow::dist::{e_dist_r_solve_with, node_inputs};
use sddmflow::io::{read_matrix_market, read_vector, write_vector_str};
use sddmflow::matrix::{project_out_ones, seeded_rhs};
use sddmflow::netflow::{CostFamily, FlowProblem};
use sddmflow::optim::depth_for;
use sddmflow::sim::RunOptions;
use sddmflow::{generate_random_network, ground, Error, Result};

/// Distributed SDDM solves and approximate Newton methods for network flow.
#[derive(Debug, Parser)]
#[command(name = "sddmflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a random flow problem as JSON.
    Gen(GenArgs),
    /// Solve one SDDM system with the distributed solver.
    Solve(SolveArgs),
    /// Run every method of an experiment config.
    Bench(BenchArgs),
    /// Run the oracle and invariant suites on small instances.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Number of nodes.
    #[arg(long)]
    n: usize,
    /// Number of edges, at least n - 1.
    #[arg(long)]
    m: usize,
    /// Seed of the graph, cost and supply streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cost family: quadratic or smoothed.
    #[arg(long, value_parser = parse_family, default_value = "quadratic")]
    family: CostFamily,
    /// Lower curvature bound of the costs.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Upper curvature bound of the costs.
    #[arg(long = "Gamma", alias = "big-gamma", default_value_t = 10.0)]
    big_gamma: f64,
    /// `s` of the smoothed family.
    #[arg(long, default_value_t = 0.5)]
    smoothing: f64,
    /// Multiplier of the unit source/sink supply.
    #[arg(long, default_value_t = 1.0)]
    supply_scale: f64,
    /// Output file; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Matrix Market file holding an SDDM matrix (or a Laplacian with --ground).
    #[arg(long)]
    matrix: PathBuf,
    /// Right-hand side, one value per line; a seeded random vector when absent.
    #[arg(long)]
    rhs: Option<PathBuf>,
    /// Target precision in the matrix norm, in (0, 1/2].
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    /// Hop radius R, a power of two.
    #[arg(long, default_value_t = 1)]
    rhop: usize,
    /// Treat the matrix as a connected Laplacian and ground it at NODE
    /// (the lowest-index max-degree node when NODE is omitted).
    #[arg(long, num_args = 0..=1, default_missing_value = "auto", value_name = "NODE")]
    ground: Option<String>,
    /// Chain depth override.
    #[arg(long)]
    d: Option<usize>,
    /// Run exactly this many Richardson sweeps instead of the residual rule.
    #[arg(long)]
    sweeps: Option<usize>,
    /// Seed of the random right-hand side.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Solution file; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Write the message transcript as newline-delimited JSON.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Experiment TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output`.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Seed of the random instances.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Print results as JSON.
    #[arg(long)]
    json: bool,
}

fn parse_family(s: &str) -> std::result::Result<CostFamily, String> {
    match s {
        "quadratic" => Ok(CostFamily::Quadratic),
        "smoothed" => Ok(CostFamily::Smoothed),
        _ => Err(format!(
            "unknown cost family {s:?} (expected quadratic or smoothed)"
        )),
    }
}

fn write_out(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn gen(a: GenArgs) -> Result<()> {
    let net = generate_random_network(a.n, a.m, a.seed, (1.0, 1.0))?;
    let p = FlowProblem::from_random_network(
        &net,
        a.family,
        (a.gamma, a.big_gamma),
        a.smoothing,
        a.supply_scale,
    )?;
    write_out(a.out.as_ref(), &(p.to_json(Some(a.seed))? + "\n"))
}

fn solve(a: SolveArgs) -> Result<()> {
    let matrix = read_matrix_market(&a.matrix)?;
    let n = matrix.dim();
    let b = match &a.rhs {
        Some(p) => read_vector(p)?,
        None => seeded_rhs(n, a.seed),
    };
    if b.len() != n {
        return Err(Error::Parameter(format!(
            "right-hand side has {} entries, matrix is {n}x{n}",
            b.len()
        )));
    }
    let (system, rhs, grounded) = match a.ground.as_deref() {
        None => (matrix.clone(), b.clone(), None),
        Some(node) => {
            let g = match node {
                "auto" => matrix.support_graph().grounding_node(),
                s => s.parse().map_err(|_| {
                    Error::Parameter(format!("--ground expects a node index, got {s:?}"))
                })?,
            };
            let gr = ground(&matrix, g)?;
            let rhs = gr.restrict(&project_out_ones(&b));
            (gr.matrix.clone(), rhs, Some(gr))
        }
    };
    let depth = match a.d {
        Some(d) => d,
        None => depth_for(&system)?,
    };
    let rule = match a.sweeps {
        Some(q) => StopRule::Fixed(q),
        None => default_stop_rule(&system, a.eps)?,
    };
    let opts = RunOptions {
        log_messages: a.transcript.is_some(),
        ..RunOptions::default()
    };
    let run = e_dist_r_solve_with(
        &node_inputs(&system, &rhs, depth, a.rhop, Some(a.eps))?,
        rule,
        &opts,
    )?;
    let x = match &grounded {
        Some(gr) => gr.embed_mean_zero(&run.x),
        None => run.x.clone(),
    };
    if let Some(path) = &a.transcript {
        run.transcript.write_ndjson(fs::File::create(path)?)?;
    }
    let mx = matrix.apply(&x);
    let target = if grounded.is_some() {
        project_out_ones(&b)
    } else {
        b.clone()
    };
    let num: f64 = mx
        .iter()
        .zip(&target)
        .map(|(u, v)| (u - v).powi(2))
        .sum::<f64>()
        .sqrt();
    let den: f64 = target.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cost = run.cost();
    let report = serde_json::json!({
        "n": n,
        "d": depth,
        "R": a.rhop,
        "eps": a.eps,
        "sweeps": run.sweeps,
        "relative_residual": if den > 0.0 { num / den } else { num },
        "messages": cost.total_messages,
        "rounds": cost.total_rounds,
        "grounded_at": grounded.as_ref().map(|g| g.node),
    });
    eprintln!("{report}");
    write_out(a.out.as_ref(), &write_vector_str(&x))
}

fn bench(a: BenchArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let out_dir = a
        .out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let out = run_experiment(&cfg, Some(&out_dir))?;
    for s in &out.summary.methods {
        eprintln!(
            "{:<15} iterations {:>6}  converged {:<5}  feasible@{:<8} messages {}",
            s.method.to_string(),
            s.iterations,
            s.converged,
            s.iterations_to_feasibility
                .map_or_else(|| "-".into(), |k| k.to_string()),
            s.total_messages
        );
    }
    eprintln!("wrote {}", out_dir.display());
    Ok(())
}

/// Returns whether every suite passed.
fn verify(a: VerifyArgs) -> Result<bool> {
    let results = sddmflow::verify::run_all(a.seed);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&results)?);
    } else {
        for r in &results {
            println!(
                "{} {} {}",
                if r.passed { "PASS" } else { "FAIL" },
                r.name,
                r.detail
            );
        }
    }
    Ok(results.iter().all(|r| r.passed))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Solve(a) => solve(a),
        Command::Bench(a) => bench(a),
        Command::Verify(a) => match verify(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(2),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
