use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use cubic_planner::bvp::{continuation_sweep, multi_seed, scaled_family, solve_bvp, ShootingResult};
use cubic_planner::dynamics::Trajectory;
use cubic_planner::index::{verdict, OptimalityReport, Verdict, VerdictOptions};
use cubic_planner::jacobi::{biconjugate_scan, ScanOptions};
use cubic_planner::oracle::{check_uniqueness_props, compare_with_shooting, minimize_discrete, Comparison, DescentOptions, UniquenessOptions, UniquenessReport};
use cubic_planner::scenario::Scenario;
use cubic_planner::{Error, Model};
use serde::Serialize;

/// Plans and checks modified cubic trajectories described by a JSON scenario.
#[derive(Debug, Parser)]
#[command(name = "cubic-planner", version)]
struct Cli {
    /// Scenario file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Integrator step, overriding the scenario.
    #[arg(long, global = true)]
    step: Option<f64>,
    /// Random seed, overriding the scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the boundary value problem; writes trajectory.csv and solve.json.
    Plan,
    /// Second-order checks; writes verdict.json.
    Verify {
        /// Check this trajectory instead of solving the scenario.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Biconjugate scan from a base time; writes biconjugate.json.
    Scan {
        #[arg(long)]
        t1: Option<f64>,
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Continuation in the potential strength; writes sweep.csv.
    Sweep {
        /// Comma-separated λ grid starting at 0.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
    /// Discrete minimization against shooting; writes comparison.json.
    OracleCompare {
        #[arg(long)]
        intervals: Option<usize>,
    },
}

const EXIT_CONFIG: u8 = 1;
const EXIT_NONCONVERGENCE: u8 = 2;
const EXIT_CHART: u8 = 3;
const EXIT_NOT_MINIMIZER: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::ChartEscape { .. } | Error::OutsideDomain { .. } | Error::OutOfRange(_) => EXIT_CHART,
        Error::NonConvergence { .. }
        | Error::CriticalBiexp { .. }
        | Error::Numerical(_)
        | Error::NonFinite { .. }
        | Error::Overflow { .. }
        | Error::IllConditionedBasis(_)
        | Error::ConstructionFailure { .. }
        | Error::DescentNonConvergence { .. } => EXIT_NONCONVERGENCE,
        Error::Sweep { source, .. } => exit_code(source),
        _ => EXIT_CONFIG,
    }
}

struct Run {
    scenario: Scenario,
    model: Model,
    out: PathBuf,
}

impl Run {
    fn load(cli: &Cli) -> Result<Self> {
        let Some(path) = &cli.config else { bail!("--config is required") };
        let mut scenario = Scenario::from_file(path)?;
        if cli.step.is_some() {
            scenario.step = cli.step;
        }
        if let Some(seed) = cli.seed {
            scenario.seed = seed;
        }
        if let Some(h) = scenario.step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!("step must be positive, got {h}")).into());
            }
        }
        let model = scenario.model()?;
        fs::create_dir_all(&cli.out).with_context(|| format!("cannot create {}", cli.out.display()))?;
        Ok(Self { scenario, model, out: cli.out.clone() })
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    /// Best solution over the configured number of shooting seeds.
    fn solve(&self) -> Result<Vec<ShootingResult>> {
        let boundary = self.scenario.boundary();
        let opts = self.scenario.solver_options();
        let found = if self.scenario.seeds > 1 {
            multi_seed(&self.model, &boundary, self.scenario.seeds, self.scenario.seed, &opts)?
        } else {
            vec![solve_bvp(&self.model, &boundary, None, &opts)?]
        };
        Ok(found)
    }

    fn trajectory(&self, file: Option<&Path>) -> Result<Trajectory> {
        match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
                Ok(Trajectory::from_csv(&text, &self.scenario.manifold, self.scenario.potential())?)
            }
            None => Ok(self.solve()?.swap_remove(0).trajectory.expect("solver returns its trajectory")),
        }
    }
}

#[derive(Serialize)]
struct Alternative {
    action: f64,
    residual: f64,
    y: Vec<f64>,
    z: Vec<f64>,
}

#[derive(Serialize)]
struct SolveReport<'a> {
    manifold: &'a str,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    solution: Option<&'a ShootingResult>,
    /// Other distinct solutions from the multi-seed scan, by action.
    alternatives: Vec<Alternative>,
}

fn plan(run: &Run) -> Result<u8> {
    match run.solve() {
        Ok(found) => {
            let best = &found[0];
            run.write("trajectory.csv", &best.trajectory().to_csv())?;
            let alternatives = found[1..]
                .iter()
                .map(|r| Alternative { action: r.action, residual: r.residual, y: r.y.clone(), z: r.z.clone() })
                .collect();
            run.write_json("solve.json", &SolveReport { manifold: &run.scenario.manifold, converged: true, error: None, solution: Some(best), alternatives })?;
            Ok(0)
        }
        Err(e) => {
            let report = SolveReport { manifold: &run.scenario.manifold, converged: false, error: Some(e.to_string()), solution: None, alternatives: vec![] };
            run.write_json("solve.json", &report)?;
            Err(e)
        }
    }
}

#[derive(Serialize)]
struct VerifyReport {
    #[serde(flatten)]
    optimality: OptimalityReport,
    uniqueness: Option<UniquenessReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    uniqueness_error: Option<String>,
}

fn verify(run: &Run, file: Option<&Path>) -> Result<u8> {
    let traj = run.trajectory(file)?;
    let opts = VerdictOptions { m: run.scenario.basis_intervals, scan: ScanOptions::default() };
    let optimality = verdict(&run.model, &traj, &opts)?;
    let uniq = check_uniqueness_props(&run.model, &traj, &UniquenessOptions { seed: run.scenario.seed, ..UniquenessOptions::default() });
    let code = match optimality.verdict {
        Verdict::NotOmegaLocalMinimizer => EXIT_NOT_MINIMIZER,
        Verdict::Candidate | Verdict::Degenerate => 0,
    };
    let (uniqueness, uniqueness_error) = match uniq {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    run.write_json("verdict.json", &VerifyReport { optimality, uniqueness, uniqueness_error })?;
    Ok(code)
}

fn scan(run: &Run, t1: Option<f64>, file: Option<&Path>) -> Result<u8> {
    let traj = run.trajectory(file)?;
    let t1 = t1.or(run.scenario.scan_t1).unwrap_or(traj.start_time());
    let report = biconjugate_scan(&run.model, &traj, t1, &ScanOptions::default())?;
    run.write_json("biconjugate.json", &report)?;
    Ok(0)
}

fn sweep(run: &Run, lambdas: Option<Vec<f64>>) -> Result<u8> {
    let grid = lambdas
        .or_else(|| run.scenario.sweep.clone())
        .unwrap_or_else(|| vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    if grid.first() != Some(&0.0) {
        return Err(Error::Config("sweep grid must start at 0".into()).into());
    }
    let target = run.scenario.potential();
    let results = continuation_sweep(&run.model, scaled_family(&target), &run.scenario.boundary(), &grid, &run.scenario.solver_options())?;
    let n = run.model.dim();
    let mut csv = String::from("lambda");
    for name in ["y", "z"] {
        for i in 0..n {
            csv.push_str(&format!(",{name}{i}"));
        }
    }
    csv.push_str(",J,residual\n");
    for (lambda, r) in &results {
        csv.push_str(&format!("{lambda:.16e}"));
        for x in r.y.iter().chain(&r.z) {
            csv.push_str(&format!(",{x:.16e}"));
        }
        csv.push_str(&format!(",{:.16e},{:.16e}\n", r.action, r.residual));
    }
    run.write("sweep.csv", &csv)?;
    Ok(0)
}

#[derive(Serialize)]
struct OracleReport {
    #[serde(flatten)]
    comparison: Comparison,
    gradient_norm: f64,
    tolerance: f64,
}

fn oracle_compare(run: &Run, intervals: Option<usize>) -> Result<u8> {
    let sol = run.solve()?.swap_remove(0);
    let n = intervals.unwrap_or(run.scenario.oracle_intervals);
    let min = minimize_discrete(&run.model, &run.scenario.boundary(), n, None, &DescentOptions::default())?;
    let comparison = compare_with_shooting(&run.model, sol.trajectory(), sol.action, &min)?;
    run.write_json("comparison.json", &OracleReport { comparison, gradient_norm: min.gradient_norm, tolerance: min.tolerance })?;
    Ok(0)
}

fn execute(cli: &Cli) -> Result<u8> {
    let run = Run::load(cli)?;
    match &cli.command {
        Command::Plan => plan(&run),
        Command::Verify { trajectory } => verify(&run, trajectory.as_deref()),
        Command::Scan { t1, trajectory } => scan(&run, *t1, trajectory.as_deref()),
        Command::Sweep { lambdas } => sweep(&run, lambdas.clone()),
        Command::OracleCompare { intervals } => oracle_compare(&run, *intervals),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.chain().find_map(|c| c.downcast_ref::<Error>()).map_or(EXIT_CONFIG, exit_code);
            ExitCode::from(code)
        }
    }
}
