//! Command-line front end: scenario runs, run comparison and scenario
//! generation.
//!
//! Exit codes: 0 on success, 1 when an algorithm fails or stops at its
//! iteration cap (artifacts are still written), 2 on bad input. Errors are
//! reported on stderr as a JSON object `{"error": kind, "message": text}`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::admm::{AdmmError, AdmmOutcome, AdmmParams};
use crate::conic::{
    cbf::to_cbf, exactness_residuals, max_relative_residual, ClarabelSolver, ConicSolver,
    DenseIpmSolver, LineResidual, PowerFlowSolution, EPS_EXACT,
};
use crate::dualdecomp::{DualError, DualOutcome, DualParams};
use crate::fixtures::{self, CapacityPolicy};
use crate::fleet::{
    aggregate, count_critical, discretize, distances, randomized_round, AssignmentMatrix, Scenario,
};
use crate::grid::{BusId, FeederDocument, Grid};
use crate::oracle::{
    assignment_objective, enumerate_binary, joint_problem, rounding_gap, solve_centralized_relaxed,
    OracleError, DEFAULT_CAP,
};
use crate::simnet::{audit_privacy, run_session_with, Algorithm, Engine, SessionError, SessionResult};

pub const SOLUTION_FORMAT: &str = "swapgrid-solution/1";

#[derive(Debug, Parser)]
#[command(name = "swapgrid", version, about = "EV battery swapping scheduled jointly with optimal power flow")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one feeder + scenario and write artifacts to --out.
    Run(RunArgs),
    /// Tabulate the summaries of several run directories as CSV.
    Compare(CompareArgs),
    /// Generate a random scenario on the four-station layout.
    GenScenario(GenScenarioArgs),
    /// Write one of the built-in feeders.
    GenFeeder(GenFeederArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgoFlag {
    Centralized,
    Admm,
    Dual,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverFlag {
    Clarabel,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineFlag {
    Sync,
    Threaded,
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    pub feeder: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, value_enum)]
    pub algo: AlgoFlag,
    /// ADMM penalty.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Initial step for the load prices (dual decomposition).
    #[arg(long)]
    pub rho1: Option<f64>,
    /// Initial step for the capacity prices (dual decomposition).
    #[arg(long)]
    pub rho2: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Seed of the randomized rounding reported next to the deterministic one.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SolverFlag::Clarabel)]
    pub solver: SolverFlag,
    #[arg(long, value_enum, default_value_t = EngineFlag::Sync)]
    pub engine: EngineFlag,
    /// Largest number of station count vectors the oracle may enumerate.
    #[arg(long, default_value_t = DEFAULT_CAP)]
    pub oracle_cap: usize,
    /// Also write the joint relaxed problem in CBF format.
    #[arg(long)]
    pub cbf: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct CompareArgs {
    pub runs: Vec<PathBuf>,
    /// Write the table here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyFlag {
    /// Every station holds `A` batteries.
    #[value(name = "i", alias = "ample")]
    Ample,
    /// Uneven capacities `(1/2, 1/10, 1/4, 1/4)` of about `1.1 A`.
    #[value(name = "ii", alias = "uneven")]
    Uneven,
}

#[derive(Debug, clap::Args)]
pub struct GenScenarioArgs {
    /// Number of EVs.
    #[arg(long = "evs", short = 'a')]
    pub evs: usize,
    #[arg(long, default_value_t = 4)]
    pub stations: usize,
    #[arg(long, default_value_t = 4.0)]
    pub area_km: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = PolicyFlag::Ample)]
    pub policy: PolicyFlag,
    /// Place station `j` at the bus of this feeder that hosts station `j`
    /// (default: the 56-bus stand-in layout).
    #[arg(long)]
    pub feeder: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeederName {
    Feeder6,
    Sce56,
}

#[derive(Debug, clap::Args)]
pub struct GenFeederArgs {
    #[arg(value_enum)]
    pub name: FeederName,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: AlgoFlag,
    pub objective: f64,
    pub iters: usize,
    pub residual_final: f64,
    pub critical_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounding_gap: Option<f64>,
    pub exact: bool,
    pub converged: bool,
    pub max_relative_residual: f64,
    /// Objective of the deterministic rounding of the returned assignment.
    pub rounded_objective: f64,
    /// Objective of a seeded randomized rounding, for comparison.
    pub randomized_objective: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iters_to_threshold: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privacy_ok: Option<bool>,
    pub runtime_s: f64,
}

/// `solution.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub format: String,
    pub algorithm: AlgoFlag,
    pub objective: f64,
    pub station_buses: Vec<BusId>,
    pub power_flow: PowerFlowSolution,
    pub assignment: AssignmentMatrix,
    /// Station index per EV after deterministic rounding.
    pub rounded: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
}

/// `exactness.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactnessReport {
    pub eps_exact: f64,
    pub max_relative_residual: f64,
    pub exact: bool,
    pub lines: Vec<LineResidual>,
}

impl ExactnessReport {
    pub fn new(grid: &Grid, pf: &PowerFlowSolution) -> Self {
        let lines = exactness_residuals(grid, pf);
        let max = max_relative_residual(&lines);
        ExactnessReport {
            eps_exact: EPS_EXACT,
            max_relative_residual: max,
            exact: max <= EPS_EXACT,
            lines,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Exit code 2.
    Input(String),
    /// Exit code 1, artifacts written.
    NonConvergence(String),
    /// Exit code 1.
    Algorithm(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::NonConvergence(_) | CliError::Algorithm(_) => 1,
        }
    }

    pub fn to_json(&self) -> String {
        let (kind, message) = match self {
            CliError::Input(m) => ("input", m),
            CliError::NonConvergence(m) => ("nonconvergence", m),
            CliError::Algorithm(m) => ("algorithm", m),
        };
        serde_json::json!({ "error": kind, "message": message }).to_string()
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Algorithm(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("artifacts serialize");
    write_file(path, text.as_bytes())
}

fn read_input(path: &Path, what: &str) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Input(format!("{what} not found: {}", path.display())),
        _ => CliError::Input(format!("{what} unreadable: {}: {e}", path.display())),
    })
}

pub fn read_summary(dir: &Path) -> Result<Summary, CliError> {
    let path = dir.join("summary.json");
    let text = read_input(&path, "summary")?;
    serde_json::from_slice(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn read_solution(dir: &Path) -> Result<SolutionFile, CliError> {
    let path = dir.join("solution.json");
    let text = read_input(&path, "solution")?;
    serde_json::from_slice(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Header and numeric rows of a trace CSV.
pub fn read_trace(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Input(e.to_string()))?;
    let header = rdr
        .headers()
        .map_err(|e| CliError::Input(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Input(e.to_string()))?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Entry point shared by the binary and the tests.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = writeln!(stderr, "{}", CliError::Input(text.trim().to_string()).to_json());
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Compare(args) => cmd_compare(&args, stdout),
        Command::GenScenario(args) => cmd_gen_scenario(&args, stdout),
        Command::GenFeeder(args) => cmd_gen_feeder(&args, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.to_json());
            e.exit_code()
        }
    }
}

fn load_inputs(args: &RunArgs) -> Result<(Grid, Scenario), CliError> {
    let feeder = read_input(&args.feeder, "feeder")?;
    let grid = crate::grid::load_feeder(&feeder).map_err(|e| CliError::Input(format!("feeder: {e}")))?;
    let scenario = read_input(&args.scenario, "scenario")?;
    let scen = Scenario::from_json(&scenario).map_err(|e| CliError::Input(format!("scenario: {e}")))?;
    scen.check_against(&grid)
        .and_then(|_| scen.check_capacity())
        .map_err(|e| CliError::Input(format!("scenario: {e}")))?;
    let d = distances(&scen.evs, &scen.stations);
    for (a, ev) in scen.evs.iter().enumerate() {
        crate::fleet::feasible_stations(ev, d.row(a)).map_err(|e| CliError::Input(format!("scenario: {e}")))?;
    }
    Ok((grid, scen))
}

/// What every algorithm hands back to the artifact writer.
struct RunResult {
    power_flow: PowerFlowSolution,
    assignment: AssignmentMatrix,
    objective: f64,
    iters: usize,
    residual_final: f64,
    converged: bool,
    iters_to_threshold: Option<usize>,
    lambda: Option<Vec<f64>>,
    mu: Option<Vec<f64>>,
    trace_csv: Option<Vec<u8>>,
    log: Option<crate::simnet::MessageLog>,
    failure: Option<String>,
}

fn admm_result(o: AdmmOutcome, params: &AdmmParams, failure: Option<String>) -> RunResult {
    let mut csv = Vec::new();
    o.trace.write_csv(&mut csv).expect("in-memory CSV");
    let iters_to_threshold = o
        .trace
        .records
        .iter()
        .find(|r| r.residual <= params.eps_primal)
        .map(|r| r.iter);
    RunResult {
        lambda: o.trace.records.last().map(|r| r.lambda.clone()),
        mu: None,
        iters: o.iterations,
        residual_final: o.residual,
        converged: o.converged,
        iters_to_threshold,
        power_flow: o.power_flow,
        assignment: o.assignment,
        objective: o.objective,
        trace_csv: Some(csv),
        log: None,
        failure,
    }
}

fn dual_result(o: DualOutcome, scen: &Scenario, failure: Option<String>) -> RunResult {
    let mut csv = Vec::new();
    o.trace.write_csv(&mut csv).expect("in-memory CSV");
    // the utility's last priced response against the recovered station loads
    let target = scen.station_loads().loads_mw(&aggregate(&o.assignment));
    let residual_final = o.trace.records.last().map_or(0.0, |r| {
        r.w.iter().zip(&target).map(|(w, t)| (w - t).abs()).fold(0.0, f64::max)
    });
    let bound = o.dual_bound;
    let iters_to_threshold = o
        .trace
        .records
        .iter()
        .find(|r| (r.dual_value - bound).abs() <= 1e-3 * bound.abs().max(1.0))
        .map(|r| r.iter);
    RunResult {
        power_flow: o.power_flow,
        assignment: o.assignment,
        objective: o.objective,
        iters: o.iterations,
        residual_final,
        converged: o.converged,
        iters_to_threshold,
        lambda: Some(o.lambda),
        mu: Some(o.mu),
        trace_csv: Some(csv),
        log: None,
        failure,
    }
}

fn make_solver(flag: SolverFlag) -> Box<dyn ConicSolver> {
    match flag {
        SolverFlag::Clarabel => Box::new(ClarabelSolver::default()),
        SolverFlag::Dense => Box::new(DenseIpmSolver::default()),
    }
}

fn algorithm_error(e: impl std::fmt::Display) -> CliError {
    CliError::Algorithm(e.to_string())
}

fn solve(args: &RunArgs, grid: &Grid, scen: &Scenario, solver: &dyn ConicSolver) -> Result<RunResult, CliError> {
    let engine = match args.engine {
        EngineFlag::Sync => Engine::Synchronous,
        EngineFlag::Threaded => Engine::Threaded,
    };
    match args.algo {
        AlgoFlag::Centralized => {
            let o = solve_centralized_relaxed(grid, scen, solver).map_err(algorithm_error)?;
            Ok(RunResult {
                power_flow: o.power_flow,
                assignment: o.assignment,
                objective: o.objective,
                iters: 1,
                residual_final: 0.0,
                converged: true,
                iters_to_threshold: None,
                lambda: None,
                mu: None,
                trace_csv: None,
                log: None,
                failure: None,
            })
        }
        AlgoFlag::Oracle => {
            let o = enumerate_binary(grid, scen, args.oracle_cap, solver).map_err(|e| match e {
                OracleError::TooLarge { .. } => CliError::Input(e.to_string()),
                e => algorithm_error(e),
            })?;
            Ok(RunResult {
                power_flow: o.power_flow,
                assignment: o.assignment,
                objective: o.objective,
                iters: o.opf_solves,
                residual_final: 0.0,
                converged: true,
                iters_to_threshold: None,
                lambda: None,
                mu: None,
                trace_csv: None,
                log: None,
                failure: None,
            })
        }
        AlgoFlag::Admm => {
            let mut params = AdmmParams::for_rate(scen.r_mw);
            if let Some(rho) = args.rho {
                params.rho = rho;
            }
            if let Some(n) = args.max_iters {
                params.max_iters = n;
            }
            params.validate().map_err(CliError::Input)?;
            let out = run_session_with(grid, scen, &Algorithm::Admm(params.clone()), solver, engine);
            let mut r = match out.result {
                Ok(SessionResult::Admm(o)) => admm_result(o, &params, None),
                Err(SessionError::Admm(AdmmError::NonConvergence { best, max_iters })) => {
                    let msg = format!("ADMM did not converge in {max_iters} iterations");
                    admm_result(*best, &params, Some(msg))
                }
                Err(e) => return Err(algorithm_error(e)),
                Ok(other) => unreachable!("ADMM session returned {other:?}"),
            };
            r.log = Some(out.log);
            Ok(r)
        }
        AlgoFlag::Dual => {
            let mut params = DualParams::for_fleet(scen.n_evs());
            if let Some(v) = args.rho1 {
                params.rho1_0 = v;
            }
            if let Some(v) = args.rho2 {
                params.rho2_0 = v;
            }
            if let Some(n) = args.max_iters {
                params.max_iters = n;
            }
            params.validate().map_err(CliError::Input)?;
            let out = run_session_with(grid, scen, &Algorithm::Dual(params), solver, engine);
            let mut r = match out.result {
                Ok(SessionResult::Dual(o)) => dual_result(o, scen, None),
                Err(SessionError::Dual(DualError::NonConvergence { best, max_iters })) => {
                    let msg = format!("dual decomposition did not converge in {max_iters} iterations");
                    dual_result(*best, scen, Some(msg))
                }
                Err(e) => return Err(algorithm_error(e)),
                Ok(other) => unreachable!("dual session returned {other:?}"),
            };
            r.log = Some(out.log);
            Ok(r)
        }
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let (grid, scen) = load_inputs(args)?;
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let solver = make_solver(args.solver);
    if let Some(path) = &args.cbf {
        let d = distances(&scen.evs, &scen.stations);
        let (prob, _, _) = joint_problem(&grid, &scen, &d).map_err(algorithm_error)?;
        write_file(path, to_cbf(&prob).as_bytes())?;
    }

    let start = Instant::now();
    let r = solve(args, &grid, &scen, solver.as_ref())?;
    let runtime_s = start.elapsed().as_secs_f64();

    let d = distances(&scen.evs, &scen.stations);
    let rounded = discretize(&r.assignment, &scen, &d).map_err(algorithm_error)?;
    let (_, rounded_objective) =
        assignment_objective(&grid, &scen, &rounded, solver.as_ref()).map_err(algorithm_error)?;
    let randomized = randomized_round(&r.assignment, &scen, &d, args.seed)
        .map_err(algorithm_error)?;
    let (_, randomized_objective) =
        assignment_objective(&grid, &scen, &randomized, solver.as_ref()).map_err(algorithm_error)?;
    let rounding = match args.algo {
        AlgoFlag::Oracle => Some(0.0),
        _ => match rounding_gap(&grid, &scen, &r.assignment, args.oracle_cap, solver.as_ref()) {
            Ok(g) => Some(g.gap),
            Err(OracleError::TooLarge { .. }) => None,
            Err(e) => return Err(algorithm_error(e)),
        },
    };

    let exactness = ExactnessReport::new(&grid, &r.power_flow);
    let privacy = r.log.as_ref().map(audit_privacy);
    let summary = Summary {
        algorithm: args.algo,
        objective: r.objective,
        iters: r.iters,
        residual_final: r.residual_final,
        critical_count: count_critical(&r.assignment),
        rounding_gap: rounding,
        exact: exactness.exact,
        converged: r.converged,
        max_relative_residual: exactness.max_relative_residual,
        rounded_objective,
        randomized_objective,
        iters_to_threshold: r.iters_to_threshold,
        privacy_ok: privacy.as_ref().map(|p| p.ok()),
        runtime_s,
    };
    let solution = SolutionFile {
        format: SOLUTION_FORMAT.into(),
        algorithm: args.algo,
        objective: r.objective,
        station_buses: scen.stations.iter().map(|s| s.bus).collect(),
        power_flow: r.power_flow,
        rounded: rounded.argmax_rows(),
        assignment: r.assignment,
        lambda: r.lambda,
        mu: r.mu,
    };

    let out = &args.out;
    write_json(&out.join("solution.json"), &solution)?;
    write_json(&out.join("exactness.json"), &exactness)?;
    if let Some(csv) = &r.trace_csv {
        write_file(&out.join("trace.csv"), csv)?;
    }
    if let Some(log) = &r.log {
        let path = out.join("messages.jsonl");
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        log.write_jsonl(std::io::BufWriter::new(file)).map_err(|e| io_err(&path, e))?;
    }
    if let Some(p) = &privacy {
        write_json(&out.join("privacy.json"), p)?;
    }
    write_json(&out.join("summary.json"), &summary)?;
    match r.failure {
        Some(msg) => Err(CliError::NonConvergence(msg)),
        None => Ok(()),
    }
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub run: String,
    pub algorithm: AlgoFlag,
    pub objective: f64,
    /// `(objective - reference) / |reference|`, the first run being the reference.
    pub objective_delta: f64,
    pub iters: usize,
    pub iters_to_threshold: Option<usize>,
    pub critical_count: usize,
    pub rounding_gap: Option<f64>,
    pub exact: bool,
    pub converged: bool,
}

pub fn compare_rows(runs: &[PathBuf]) -> Result<Vec<CompareRow>, CliError> {
    let summaries = runs
        .iter()
        .map(|dir| read_summary(dir))
        .collect::<Result<Vec<_>, _>>()?;
    let Some(reference) = summaries.first().map(|s| s.objective) else {
        return Ok(Vec::new());
    };
    Ok(runs
        .iter()
        .zip(summaries)
        .map(|(dir, s)| CompareRow {
            run: dir.display().to_string(),
            algorithm: s.algorithm,
            objective: s.objective,
            objective_delta: (s.objective - reference) / reference.abs().max(f64::MIN_POSITIVE),
            iters: s.iters,
            iters_to_threshold: s.iters_to_threshold,
            critical_count: s.critical_count,
            rounding_gap: s.rounding_gap,
            exact: s.exact,
            converged: s.converged,
        })
        .collect())
}

pub fn cmd_compare(args: &CompareArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let rows = compare_rows(&args.runs)?;
    let mut buf = Vec::new();
    {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(&mut buf);
        wtr.write_record([
            "run",
            "algorithm",
            "objective",
            "objective_delta",
            "iters",
            "iters_to_threshold",
            "critical_count",
            "rounding_gap",
            "exact",
            "converged",
        ])
        .expect("in-memory CSV");
        for row in &rows {
            wtr.serialize(row).expect("in-memory CSV");
        }
        wtr.flush().expect("in-memory CSV");
    }
    match &args.out {
        Some(path) => write_file(path, &buf),
        None => stdout.write_all(&buf).map_err(|e| CliError::Algorithm(e.to_string())),
    }
}

pub fn cmd_gen_scenario(args: &GenScenarioArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if !(1..=4).contains(&args.stations) {
        return Err(CliError::Input(format!("--stations must be 1..=4, got {}", args.stations)));
    }
    if args.evs == 0 || !(args.area_km > 0.0) {
        return Err(CliError::Input("--evs and --area-km must be positive".into()));
    }
    let policy = match args.policy {
        PolicyFlag::Ample => CapacityPolicy::Ample,
        PolicyFlag::Uneven => CapacityPolicy::Uneven,
    };
    let mut scen = fixtures::layout_scenario(args.evs, args.stations, args.area_km, policy, args.seed);
    if let Some(path) = &args.feeder {
        let text = read_input(path, "feeder")?;
        let doc: FeederDocument =
            serde_json::from_slice(&text).map_err(|e| CliError::Input(format!("feeder: {e}")))?;
        for st in scen.stations.iter_mut() {
            st.bus = doc
                .buses
                .iter()
                .find(|b| b.station_id == Some(st.id))
                .map(|b| b.id)
                .ok_or_else(|| CliError::Input(format!("feeder has no bus hosting station {}", st.id)))?;
        }
    }
    let text = scen.to_json();
    match &args.out {
        Some(path) => write_file(path, text.as_bytes()),
        None => writeln!(stdout, "{text}").map_err(|e| CliError::Algorithm(e.to_string())),
    }
}

pub fn cmd_gen_feeder(args: &GenFeederArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let doc = match args.name {
        FeederName::Feeder6 => fixtures::feeder6(),
        FeederName::Sce56 => fixtures::sce56_standin(),
    };
    let text = doc.to_json();
    match &args.out {
        Some(path) => write_file(path, text.as_bytes()),
        None => writeln!(stdout, "{text}").map_err(|e| CliError::Algorithm(e.to_string())),
    }
}
