use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use routeage::benchmarks::{benchmark, Benchmark, PolicyKind};
use routeage::eval::mixed_rates;
use routeage::model::{validate, ModelError, NetworkConfig, NetworkSpec};
use routeage::sim::{self, SimOptions};
use routeage::solver::{solve, SolveError, SolverTolerances};
use routeage::ThresholdPolicy;

mod sweep;

use sweep::SweepVar;

#[derive(Parser)]
#[command(name = "routeage", version, about = "Age-optimal sampling and routing over intermittent routes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the optimal policy and print its thresholds.
    Solve(SolveArgs),
    /// Simulate one policy.
    Simulate(SimulateArgs),
    /// Exact and simulated age of the optimal policy and every benchmark.
    Compare(CompareArgs),
    /// Vary one parameter and tabulate the age of each policy.
    Sweep(SweepArgs),
    /// Dump a policy as JSON for deployment.
    Thresholds(ThresholdsArgs),
}

#[derive(Args)]
struct Common {
    /// Network description (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    tol: TolArgs,
}

#[derive(Args)]
struct TolArgs {
    /// Final width of the λ bracket (default 1e-4·λᵘ).
    #[arg(long)]
    tol_lambda: Option<f64>,
    /// Final width of the c bracket.
    #[arg(long, default_value_t = 1e-4)]
    tol_c: f64,
    /// Fixed-point residual (default 1e-8·λᵘ).
    #[arg(long)]
    tol_fixed_point: Option<f64>,
    /// Sweep limit for one fixed point.
    #[arg(long, default_value_t = 10_000)]
    tol_max_iterations: usize,
}

impl TolArgs {
    fn tolerances(&self) -> SolverTolerances {
        SolverTolerances {
            lambda: self.tol_lambda,
            c: self.tol_c,
            fixed_point: self.tol_fixed_point,
            max_fixed_point_iterations: self.tol_max_iterations,
            ..SolverTolerances::default()
        }
    }
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value_t = 1_000_000)]
    epochs: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    /// Also write the multiplier trace (c, λ_c, AoI, energy) as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, default_value = "optimal")]
    policy: PolicyKind,
    /// Write every epoch as CSV.
    #[arg(long)]
    epoch_trace: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// `e_max`, `c_s`, or `<field>:<route>` with field one of mu, sigma, p, g
    /// and a 1-based route position in the config file.
    #[arg(long)]
    var: SweepVar,
    #[arg(long)]
    from: f64,
    #[arg(long)]
    to: f64,
    #[arg(long, default_value_t = 11)]
    steps: usize,
    /// Comma-separated policy names.
    #[arg(long, value_delimiter = ',', default_value = "optimal,mad-opt,mad-zw,mdv-opt,mdv-zw")]
    policies: Vec<PolicyKind>,
    /// Simulated columns as well, with this many epochs per point.
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ThresholdsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "optimal")]
    policy: PolicyKind,
}

/// Raised for anything wrong with the inputs; maps to exit code 2.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<SolveError>() {
            return match e {
                SolveError::Infeasible(_) => 3,
                SolveError::NonConvergence(_) | SolveError::BracketViolation { .. } | SolveError::CDivergence { .. } => 4,
                SolveError::Eval(_) => 1,
            };
        }
        if cause.is::<ConfigError>() || cause.is::<ModelError>() || cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    1
}

fn load_config(path: &Path) -> Result<NetworkConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    NetworkConfig::from_json(&text)
        .map_err(|e| ConfigError(format!("{}: {e}", path.display())).into())
}

fn load_spec(path: &Path) -> Result<NetworkSpec> {
    let config = load_config(path)?;
    validate(&config).map_err(|e| ConfigError(format!("{}: {e}", path.display())).into())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut out = output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_csv<T: Serialize>(path: Option<&Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(output(path)?);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn print_policy(spec: &NetworkSpec, policy: &ThresholdPolicy, label: &str) {
    let ids = spec.permutation();
    let n = spec.len();
    println!("{label} (λ = {:.6}, c = {:.6})", policy.multipliers().lambda, policy.multipliers().c);
    println!("  {:<16}  {:<28}  {:<18}  levels", "available", "thresholds", "routes");
    for rule in policy.rules() {
        let up: Vec<String> = rule.state.available(n).map(|r| ids[r].to_string()).collect();
        let taus: Vec<String> = rule.thresholds.iter().map(|t| format!("{t:.4}")).collect();
        let routes: Vec<String> = rule.routes.iter().map(|&r| ids[r].to_string()).collect();
        let levels: Vec<String> = rule.levels.iter().map(|b| format!("{b:.4}")).collect();
        println!(
            "  {:<16}  {:<28}  {:<18}  {}",
            up.join(","),
            taus.join(" "),
            routes.join(" "),
            levels.join(" ")
        );
    }
}

fn cmd_solve(args: &SolveArgs) -> Result<()> {
    let spec = load_spec(&args.common.config)?;
    let sol = solve(&spec, &args.common.tol.tolerances())?;
    println!("λ* = {:.6}", sol.lambda);
    println!("c* = {:.6}", sol.c);
    println!("q  = {:.6}", sol.q);
    println!("energy = {:.6} (budget {})", sol.energy, spec.energy_budget());
    if sol.diagnostics.reducible {
        println!("warning: route chain has several closed classes; rates depend on the start");
    }
    println!("routes are labelled by their config id");
    print_policy(&spec, &sol.policy.plus, "policy");
    if sol.q < 1.0 {
        print_policy(&spec, &sol.policy.minus, "alternative policy (probability 1 - q)");
    }
    if let Some(path) = &args.trace {
        write_csv(Some(path), &sol.trace)?;
    }
    if let Some(path) = &args.common.out {
        write_json(Some(path), &sol)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EpochRow {
    epoch: u64,
    unavailable: String,
    observed: f64,
    route: usize,
    wait: f64,
    delay: f64,
}

#[derive(Serialize)]
struct SimulateRow {
    policy: String,
    epochs: u64,
    seed: u64,
    aoi: f64,
    aoi_ci95: f64,
    energy: f64,
    energy_ci95: f64,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let spec = load_spec(&args.common.config)?;
    let bench = benchmark(args.policy, &spec, &args.common.tol.tolerances())?;
    let opts = SimOptions {
        record: args.epoch_trace.is_some(),
        ..SimOptions::new(args.sim.epochs, args.sim.seed)
    };
    let (_, trace) = sim::simulate_mixed(&bench.policy, &spec, &opts);
    if let Some(path) = &args.epoch_trace {
        let ids = spec.permutation();
        let rows: Vec<EpochRow> = trace
            .records
            .as_deref()
            .unwrap_or_default()
            .iter()
            .map(|r| EpochRow {
                epoch: r.epoch,
                unavailable: r.availability.to_bits(spec.len()),
                observed: r.observed,
                route: ids[r.route],
                wait: r.wait,
                delay: r.delay,
            })
            .collect();
        write_csv(Some(path), &rows)?;
    }
    write_csv(
        args.common.out.as_deref(),
        &[SimulateRow {
            policy: args.policy.to_string(),
            epochs: trace.epochs,
            seed: args.sim.seed,
            aoi: trace.aoi,
            aoi_ci95: trace.aoi_half_width(1.96),
            energy: trace.energy,
            energy_ci95: 1.96 * trace.energy_se,
        }],
    )
}

#[derive(Serialize)]
struct CompareRow {
    policy: String,
    analytic_aoi: f64,
    simulated_aoi: f64,
    ci95: f64,
    analytic_energy: f64,
    simulated_energy: f64,
}

fn compare_rows(spec: &NetworkSpec, tol: &SolverTolerances, epochs: u64, seed: u64) -> Result<Vec<CompareRow>> {
    let benches: Vec<Benchmark> = PolicyKind::ALL
        .par_iter()
        .map(|&k| benchmark(k, spec, tol))
        .collect::<Result<_, _>>()?;
    let opts = SimOptions::new(epochs, seed);
    benches
        .par_iter()
        .map(|b| {
            let exact = mixed_rates(&b.policy, spec)?;
            let s = sim::simulate_stratified(&b.policy, spec, &opts);
            Ok(CompareRow {
                policy: b.kind.to_string(),
                analytic_aoi: b.lambda.unwrap_or(exact.aoi),
                simulated_aoi: s.aoi,
                ci95: 1.96 * s.aoi_se,
                analytic_energy: exact.energy,
                simulated_energy: s.energy,
            })
        })
        .collect()
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let spec = load_spec(&args.common.config)?;
    let rows = compare_rows(&spec, &args.common.tol.tolerances(), args.sim.epochs, args.sim.seed)?;
    write_csv(args.common.out.as_deref(), &rows)
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    if args.steps < 2 {
        return Err(ConfigError("--steps must be at least 2".into()).into());
    }
    if !(args.from.is_finite() && args.to.is_finite()) {
        return Err(ConfigError("sweep range must be finite".into()).into());
    }
    let base = load_config(&args.common.config)?;
    args.var
        .apply(&base, args.from)
        .and_then(|c| validate(&c).map_err(|e| e.to_string()))
        .map_err(ConfigError)?;
    let tol = args.common.tol.tolerances();
    let points: Vec<f64> = (0..args.steps)
        .map(|i| args.from + (args.to - args.from) * i as f64 / (args.steps - 1) as f64)
        .collect();
    let rows: Vec<Vec<String>> = points
        .par_iter()
        .map(|&x| sweep::point(&base, &args.var, x, &args.policies, &tol, args.epochs, args.seed))
        .collect();
    let mut w = csv::Writer::from_writer(output(args.common.out.as_deref())?);
    w.write_record(sweep::header(&args.var, &args.policies, args.epochs.is_some()))?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_thresholds(args: &ThresholdsArgs) -> Result<()> {
    let spec = load_spec(&args.common.config)?;
    let bench = benchmark(args.policy, &spec, &args.common.tol.tolerances())?;
    write_json(args.common.out.as_deref(), &bench.policy)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Thresholds(a) => cmd_thresholds(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
