//! Command-line driver: solve problems, cross-check against the exact
//! oracle, simulate policies, sweep parameters into stats CSVs, export
//! value surfaces, and generate rover instances.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use haostar::model::rover::{make_rover_problem, RoverParams};
use haostar::model::{problem_from_json, problem_to_json, validate_problem, DiscreteState, HybridProblem};
use haostar::oracle;
use haostar::search::{solve, Solution, SolveOptions};
use haostar::sim;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "haostar", version, about = "Conditional planning for hybrid-state MDPs with consumable resources")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem and write the policy file.
    Solve(SolveArgs),
    /// Exact oracle: enumerate reachable hybrid states and value them.
    Oracle(OracleArgs),
    /// Solve and verify the start value against the exact oracle.
    Check(CheckArgs),
    /// Monte Carlo execution of a policy file.
    Simulate(SimulateArgs),
    /// Sweep a parameter and emit a stats CSV row per value.
    Sweep(SweepArgs),
    /// Export a node's value surface from a policy file as CSV.
    ExportVf(ExportArgs),
    /// Generate a rover problem file from a parameter file.
    GenRover(GenRoverArgs),
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    problem: PathBuf,
    /// Expansion horizon; a positive integer or "inf".
    #[arg(long, default_value = "7")]
    k: String,
    /// Override the initial resource point, comma separated.
    #[arg(long)]
    x0: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Disable the bounding-box multi-region update.
    #[arg(long)]
    no_multiregion: bool,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Solve for the whole resource hypercube as the start region, so the
    /// exported value surface covers every resource level.
    #[arg(long)]
    surface: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long)]
    x0: Option<String>,
    /// Write the full state-value table to this CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Enumeration cap on hybrid states.
    #[arg(long, default_value_t = oracle::DEFAULT_STATE_CAP)]
    cap: usize,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long)]
    x0: Option<String>,
    #[arg(long, default_value = "7")]
    k: String,
    #[arg(long, default_value_t = oracle::DEFAULT_STATE_CAP)]
    cap: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    trials: usize,
    #[arg(long)]
    seed: u64,
    /// Dump per-step rows for the first N trials to this CSV path.
    #[arg(long)]
    dump: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    dump_trials: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Max concurrent solves.
    #[arg(long)]
    jobs: Option<usize>,
    /// Override the spec's output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    policy: PathBuf,
    /// Node selector: a fluent bit string or a node index.
    #[arg(long)]
    node: String,
    #[arg(long, default_value_t = 200)]
    grid: usize,
    /// "grid" for sampled rows, "pieces" for one row per box.
    #[arg(long, default_value = "grid")]
    mode: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenRoverArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Self-describing policy file: the solved problem rides along so
/// simulation and export need no second input.
#[derive(Serialize, Deserialize)]
struct PolicyFile {
    tool: String,
    problem_sha256: String,
    problem: serde_json::Value,
    solution: Solution,
}

fn sha_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{:02x}", b)).collect()
}

fn csv_header(input_hash: &str) -> String {
    format!("# haostar {} input_sha256={}\n", VERSION, input_hash)
}

fn load_problem(path: &Path) -> Result<(HybridProblem, String)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let problem = problem_from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok((problem, sha_hex(text.as_bytes())))
}

fn parse_x0(problem: &HybridProblem, arg: &Option<String>) -> Result<Vec<f64>> {
    let x0 = match arg {
        None => problem.initial_resources.clone(),
        Some(s) => s
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| anyhow::anyhow!("bad x0 component {:?}: {}", t, e)))
            .collect::<Result<Vec<f64>>>()?,
    };
    if !problem.space.contains(&x0) {
        bail!("x0 {:?} is infeasible: outside the resource hypercube {:?}", x0, problem.space.max);
    }
    Ok(x0)
}

fn parse_k(s: &str) -> Result<Option<usize>> {
    if s.eq_ignore_ascii_case("inf") || s == "0" {
        return Ok(None);
    }
    let k: usize = s.parse().with_context(|| format!("bad expansion horizon {:?}", s))?;
    if k == 0 {
        return Ok(None);
    }
    Ok(Some(k))
}

fn reject_invalid(problem: &HybridProblem) -> Result<()> {
    let report = validate_problem(problem);
    if !report.is_empty() {
        for v in &report {
            eprintln!("violation: {}", v);
        }
        bail!("problem failed validation with {} violation(s)", report.len());
    }
    Ok(())
}

fn write_policy_file(path: &Path, problem: &HybridProblem, hash: &str, solution: &Solution) -> Result<()> {
    let file = PolicyFile {
        tool: format!("haostar {}", VERSION),
        problem_sha256: hash.to_string(),
        problem: serde_json::from_str(&problem_to_json(problem)?)?,
        solution: solution.clone(),
    };
    fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

fn load_policy_file(path: &Path) -> Result<(HybridProblem, Solution, String)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: PolicyFile = serde_json::from_str(&text).with_context(|| "parsing policy file")?;
    let problem = problem_from_json(&serde_json::to_string(&file.problem)?)?;
    Ok((problem, file.solution, sha_hex(text.as_bytes())))
}

fn cmd_solve(args: &SolveArgs) -> Result<()> {
    let (problem, hash) = load_problem(&args.problem)?;
    reject_invalid(&problem)?;
    let x0 = parse_x0(&problem, &args.x0)?;
    let opts = SolveOptions {
        expansion_horizon: parse_k(&args.k)?,
        multiregion: !args.no_multiregion,
        x0: Some(x0),
        start_region: args.surface.then(|| problem.full_grid_region()),
        max_iterations: args.max_iter,
        max_wall: None,
    };
    let solution = solve(&problem, &opts)?;
    write_policy_file(&args.out, &problem, &hash, &solution)?;
    println!(
        "value {} error_bound {} converged {} nodes {} expanded {} backups {} wall_ms {}",
        solution.value_at_start,
        solution.error_bound,
        solution.converged,
        solution.stats.nodes_created,
        solution.stats.nodes_expanded,
        solution.stats.backups,
        solution.stats.wall_ms
    );
    Ok(())
}

fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let (problem, hash) = load_problem(&args.problem)?;
    reject_invalid(&problem)?;
    let x0 = parse_x0(&problem, &args.x0)?;
    let table = oracle::solve_exact(&problem, &x0, args.cap)?;
    println!(
        "states {} value {}",
        table.len(),
        table.value(problem.initial_state, &x0).unwrap_or(f64::NAN)
    );
    if let Some(out) = &args.out {
        let body = table.to_csv(&problem);
        fs::write(out, format!("{}{}", csv_header(&hash), body))?;
    }
    Ok(())
}

fn cmd_check(args: &CheckArgs) -> Result<()> {
    let (problem, _) = load_problem(&args.problem)?;
    reject_invalid(&problem)?;
    let x0 = parse_x0(&problem, &args.x0)?;
    let table = oracle::solve_exact(&problem, &x0, args.cap)?;
    let want = table.value(problem.initial_state, &x0).unwrap_or(f64::NAN);
    let opts = SolveOptions {
        expansion_horizon: parse_k(&args.k)?,
        x0: Some(x0),
        ..Default::default()
    };
    let solution = solve(&problem, &opts)?;
    let diff = (solution.value_at_start - want).abs();
    println!("search {} oracle {} |delta| {:e}", solution.value_at_start, want, diff);
    if diff <= 1e-9 {
        println!("PASS, |\u{394}| < 1e-9");
        Ok(())
    } else {
        println!("FAIL, |\u{394}| = {:e}", diff);
        bail!("oracle check failed");
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let (problem, solution, hash) = load_policy_file(&args.policy)?;
    let eval = sim::evaluate_policy(&problem, &solution, args.trials, args.seed)?;
    println!(
        "trials {} mean {} stderr {} done_at_fringe_rate {}",
        eval.trials, eval.mean, eval.stderr, eval.done_at_fringe_rate
    );
    for (g, rate) in eval.goal_rates.iter().enumerate() {
        println!("goal {} achieved_rate {}", g, rate);
    }
    if let Some(dump) = &args.dump {
        let mut trajectories = Vec::new();
        for trial in 0..args.dump_trials.min(args.trials as u64) {
            trajectories.push((trial, sim::simulate_trajectory(&problem, &solution, args.seed, trial)?));
        }
        let body = sim::trajectories_csv(&problem, &trajectories);
        fs::write(dump, format!("{}{}", csv_header(&hash), body))?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct SweepSpec {
    axis: String,
    values: Vec<f64>,
    problem: PathBuf,
    #[serde(default)]
    x0: Option<Vec<f64>>,
    #[serde(default = "default_k")]
    k: f64,
    #[serde(default = "default_true")]
    multiregion: bool,
    #[serde(default)]
    out: Option<PathBuf>,
}

fn default_k() -> f64 {
    7.0
}

fn default_true() -> bool {
    true
}

struct SweepRow {
    axis_value: f64,
    reachable: usize,
    solution: Solution,
}

fn sweep_point(problem: &HybridProblem, spec: &SweepSpec, value: f64) -> Result<SweepRow> {
    let mut x0 = spec.x0.clone().unwrap_or_else(|| problem.initial_resources.clone());
    let mut k = if spec.k == 0.0 { None } else { Some(spec.k as usize) };
    match spec.axis.as_str() {
        "initial_time" => x0[0] = value,
        "initial_energy" => {
            if problem.space.dims < 2 {
                bail!("initial_energy sweep needs a second resource dimension");
            }
            x0[1] = value;
        }
        "k" => k = if value == 0.0 { None } else { Some(value as usize) },
        other => bail!("unknown sweep axis {:?} (expected initial_time, initial_energy or k)", other),
    }
    if !problem.space.contains(&x0) {
        bail!("sweep value {} puts x0 {:?} outside the hypercube", value, x0);
    }
    let reachable = oracle::count_reachable_discrete(problem, &x0)?;
    let opts = SolveOptions {
        expansion_horizon: k,
        multiregion: spec.multiregion,
        x0: Some(x0),
        iteration_trace: false,
        ..Default::default()
    };
    let solution = solve(problem, &opts)?;
    Ok(SweepRow { axis_value: value, reachable, solution })
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let text = fs::read_to_string(&args.spec).with_context(|| format!("reading {}", args.spec.display()))?;
    let spec: SweepSpec = serde_json::from_str(&text)?;
    if spec.values.is_empty() {
        bail!("sweep needs at least one value");
    }
    let (problem, hash) = load_problem(&spec.problem)?;
    reject_invalid(&problem)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or_else(rayon::current_num_threads))
        .build()?;
    let rows: Vec<Result<SweepRow>> = pool.install(|| {
        use rayon::prelude::*;
        spec.values.par_iter().map(|v| sweep_point(&problem, &spec, *v)).collect()
    });
    let mut body = String::from(
        "axis_value,reachable_states,nodes_created,nodes_expanded,regions_expanded,policy_nodes,policy_branches,goals_pursued,backups,wall_ms,value,error_bound\n",
    );
    for row in rows {
        let row = row?;
        let st = &row.solution.stats;
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.axis_value,
            row.reachable,
            st.nodes_created,
            st.nodes_expanded,
            st.regions_expanded,
            st.policy_nodes,
            st.policy_branches,
            st.goals_pursued,
            st.backups,
            st.wall_ms,
            row.solution.value_at_start,
            row.solution.error_bound,
        ));
    }
    let out = args
        .out
        .clone()
        .or_else(|| spec.out.clone())
        .unwrap_or_else(|| PathBuf::from("sweep.csv"));
    fs::write(&out, format!("{}{}", csv_header(&hash), body))?;
    println!("wrote {} rows to {}", spec.values.len(), out.display());
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> Result<()> {
    let (problem, solution, hash) = load_policy_file(&args.policy)?;
    let node = if args.node.len() == problem.width() && args.node.chars().all(|c| c == '0' || c == '1') {
        let n = DiscreteState::from_bitstring(&args.node)?;
        solution.node(n).with_context(|| format!("no solution node for state {}", args.node))?
    } else {
        let idx: usize = args.node.parse().with_context(|| format!("bad node selector {:?}", args.node))?;
        solution.nodes.get(idx).with_context(|| format!("node index {} out of range", idx))?
    };
    let body = match args.mode.as_str() {
        "grid" => node.value.grid_csv(problem.xmax(), args.grid),
        "pieces" => node.value.pieces_csv(problem.xmax()),
        other => bail!("unknown export mode {:?} (expected grid or pieces)", other),
    };
    fs::write(&args.out, format!("{}{}", csv_header(&hash), body))?;
    println!("wrote {} surface for node {} to {}", args.mode, node.discrete.to_hex(), args.out.display());
    Ok(())
}

fn cmd_gen_rover(args: &GenRoverArgs) -> Result<()> {
    let text = fs::read_to_string(&args.params).with_context(|| format!("reading {}", args.params.display()))?;
    let params: RoverParams = serde_json::from_str(&text)?;
    let problem = make_rover_problem(&params)?;
    let report = validate_problem(&problem);
    if !report.is_empty() {
        for v in &report {
            eprintln!("violation: {}", v);
        }
        bail!("generated problem failed validation");
    }
    let mut value: serde_json::Value = serde_json::from_str(&problem_to_json(&problem)?)?;
    value.as_object_mut().unwrap().insert(
        "_meta".into(),
        serde_json::json!({
            "tool": format!("haostar {}", VERSION),
            "params_sha256": sha_hex(text.as_bytes()),
        }),
    );
    fs::write(&args.out, serde_json::to_string_pretty(&value)?)?;
    println!(
        "wrote problem with {} fluents, {} actions to {}",
        problem.width(),
        problem.actions.len(),
        args.out.display()
    );
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Check(a) => cmd_check(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::ExportVf(a) => cmd_export(a),
        Command::GenRover(a) => cmd_gen_rover(a),
    };
    if let Err(e) = result {
        eprintln!("error: {:#}", e);
        std::process::exit(1);
    }
}
