//! `lockdown`: simulate, solve, synthesize and verify optimal lockdown
//! policies for the controlled SIRD model.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lockdown_core::cost::evaluate_j;
use lockdown_core::dynamics::integrate_full;
use lockdown_core::io::{
    fmt_g12, read_value_field, write_full_trajectory_csv, write_policy_csv, write_value_field, write_value_field_csv,
};
use lockdown_core::policy::simulate_closed_loop;
use lockdown_core::verify::{closed_loop_horizon, closed_loop_tolerance, run_suites};
use lockdown_core::{solve_value_function, ControlSignal, Error, FullState, ModelParams, State, ValueField};

use config::Config;

#[derive(Parser, Debug)]
#[command(name = "lockdown", version, about = "Optimal lockdown control on a SIRD epidemic")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate the epidemic under an open-loop lockdown and report its cost.
    Simulate(SimulateArgs),
    /// Solve for the value function on a triangular grid.
    Solve(SolveArgs),
    /// Run the feedback policy of a solved field from an initial state.
    Policy(PolicyArgs),
    /// Run the verification suites.
    Verify(VerifyArgs),
    /// Solve and run the policy over a grid of (beta, theta, chi).
    Sweep,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    s0: Option<f64>,
    #[arg(long)]
    i0: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Constant lockdown level.
    #[arg(long, conflicts_with = "control")]
    level: Option<f64>,
    /// Piecewise-constant lockdown as `t:l,t:l,...` starting at t = 0.
    #[arg(long)]
    control: Option<String>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Also solve at 2n and report the sup-norm gap on the coarse nodes.
    #[arg(long)]
    refine: bool,
}

#[derive(Args, Debug)]
struct PolicyArgs {
    /// Binary field written by `solve`.
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long)]
    s0: Option<f64>,
    #[arg(long)]
    i0: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Suite to run; repeat for several. Defaults to all.
    #[arg(long = "suite")]
    suites: Vec<String>,
}

/// Failure with its exit code: 1 for usage and configuration, 2 for
/// numerical failures.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonConvergence { .. } | Error::StepSize { .. } => Failure::numerical(e.to_string()),
            _ => Failure::usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::usage(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let mut cfg = config::load(cli.config.as_deref(), std::env::vars()).map_err(Failure::usage)?;
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.run.out = out;
    }
    if let Some(w) = cli.workers {
        cfg.run.workers = w;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.workers)
        .build_global()
        .map_err(|e| Failure::usage(e.to_string()))?;
    let params = cfg.params();
    params.validate()?;
    std::fs::create_dir_all(&cfg.run.out)?;
    match cli.command {
        Command::Simulate(a) => simulate(&cfg, &params, a),
        Command::Solve(a) => solve(&cfg, &params, a),
        Command::Policy(a) => policy(&cfg, &params, a),
        Command::Verify(a) => verify(&cfg, &params, a),
        Command::Sweep => sweep(&cfg, &params),
    }
}

fn create(dir: &Path, name: &str) -> Result<(BufWriter<File>, PathBuf), Failure> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    Ok((BufWriter::new(file), path))
}

/// Parses `t:l,t:l,...`.
fn parse_control(spec: &str, l_bar: f64) -> Result<ControlSignal, Failure> {
    let mut bps = Vec::new();
    let mut vals = Vec::new();
    for piece in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (t, l) = piece
            .split_once(':')
            .ok_or_else(|| Failure::usage(format!("control piece `{piece}` is not `t:l`")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Failure::usage(format!("`{s}` in control `{spec}` is not a number")))
        };
        bps.push(parse(t)?);
        vals.push(parse(l)?);
    }
    Ok(ControlSignal::new(bps, vals, l_bar)?)
}

fn simulate(cfg: &Config, params: &ModelParams, a: SimulateArgs) -> Outcome {
    let sec = &cfg.simulate;
    let s0 = a.s0.unwrap_or(sec.s0);
    let i0 = a.i0.unwrap_or(sec.i0);
    let horizon = a.horizon.unwrap_or(sec.horizon);
    let dt = a.dt.unwrap_or(sec.dt);
    let control = match (&a.control, a.level) {
        (Some(spec), _) => parse_control(spec, params.l_bar)?,
        (None, Some(l)) => ControlSignal::new(vec![0.0], vec![l], params.l_bar)?,
        (None, None) if !sec.breakpoints.is_empty() => {
            ControlSignal::new(sec.breakpoints.clone(), sec.levels.clone(), params.l_bar)?
        }
        (None, None) => ControlSignal::new(vec![0.0], vec![sec.level], params.l_bar)?,
    };
    // Nobody has died yet; everyone outside s and i has recovered. A share
    // below 1e-12 is rounding noise from `1 - s0 - i0`.
    let r0 = 1.0 - s0 - i0;
    let x0 = FullState::new(s0, i0, if r0 < 1e-12 { 0.0 } else { r0 }, 0.0)?;
    let traj = integrate_full(x0, &control, horizon, dt, params)?;
    let (mut w, path) = create(&cfg.run.out, "trajectory.csv")?;
    write_full_trajectory_csv(&mut w, &traj)?;
    w.flush()?;
    let (cost, t_cut) = evaluate_j(x0.reduced(), &control, params, sec.rel_tol)?;
    let bound = sec.rel_tol * params.w / params.r;
    println!("trajectory: {}", path.display());
    println!(
        "J = {} (integrated to T = {}, tail <= {})",
        fmt_g12(cost),
        fmt_g12(t_cut),
        fmt_g12(bound)
    );
    Ok(())
}

fn solve_reporting(params: &ModelParams, solver: &lockdown_core::SolverConfig) -> Result<ValueField, Failure> {
    let field = solve_value_function(params, solver)?;
    let bound = params.value_bound();
    let (lo, hi) = field
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    println!(
        "n = {}: {} iterations, residual {}, dt {}",
        solver.n,
        field.iterations,
        fmt_g12(field.residual),
        fmt_g12(field.dt)
    );
    println!(
        "V in [{}, {}], bound K_f/(r+nu) = {}: {}",
        fmt_g12(lo),
        fmt_g12(hi),
        fmt_g12(bound),
        if lo >= 0.0 && hi <= bound + 1e-9 { "ok" } else { "VIOLATED" }
    );
    Ok(field)
}

fn solve(cfg: &Config, params: &ModelParams, a: SolveArgs) -> Outcome {
    let mut solver = cfg.grid.solver();
    solver.n = a.n.unwrap_or(solver.n);
    solver.dt = a.dt.or(solver.dt);
    solver.m = a.m.unwrap_or(solver.m);
    solver.tol = a.tol.unwrap_or(solver.tol);
    let field = solve_reporting(params, &solver)?;
    let (mut w, csv) = create(&cfg.run.out, "value_field.csv")?;
    write_value_field_csv(&mut w, &field)?;
    w.flush()?;
    let (mut w, bin) = create(&cfg.run.out, "value_field.bin")?;
    write_value_field(&mut w, &field)?;
    w.flush()?;
    println!("wrote {} and {}", csv.display(), bin.display());
    if a.refine {
        let mut fine_cfg = solver;
        fine_cfg.n = 2 * solver.n;
        fine_cfg.dt = solver.dt.map(|dt| dt / 2.0);
        let fine = solve_reporting(params, &fine_cfg)?;
        let mut gap: f64 = 0.0;
        for (j, k) in field.grid.nodes() {
            let x = field.grid.node_state(j, k);
            gap = gap.max((field.node(j, k) - fine.interpolate(x)?).abs());
        }
        println!("sup |V_{} - V_{}| on coarse nodes = {}", fine_cfg.n, solver.n, fmt_g12(gap));
    }
    Ok(())
}

fn policy(cfg: &Config, params: &ModelParams, a: PolicyArgs) -> Outcome {
    let sec = &cfg.policy;
    let path = a
        .field
        .or_else(|| sec.field.clone())
        .unwrap_or_else(|| cfg.run.out.join("value_field.bin"));
    let file = File::open(&path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let field = read_value_field(std::io::BufReader::new(file))?;
    if field.params != *params {
        return Err(Error::Mismatch(format!("{}: {}", path.display(), param_diff(&field.params, params))).into());
    }
    let x0 = State::new(a.s0.unwrap_or(sec.s0), a.i0.unwrap_or(sec.i0))?;
    let horizon = a.horizon.or(sec.horizon).unwrap_or_else(|| closed_loop_horizon(params));
    let dt = sec.dt.unwrap_or(field.dt);
    let report = simulate_closed_loop(&field, x0, horizon, dt, params)?;
    let (mut w, out) = create(&cfg.run.out, "policy.csv")?;
    write_policy_csv(&mut w, &report)?;
    w.flush()?;
    let v = field.interpolate(x0)?;
    println!("policy: {}", out.display());
    println!(
        "closed-loop cost {} (tail <= {}), V(x0) = {}, gap {} (tolerance {})",
        fmt_g12(report.cost),
        fmt_g12(report.tail_bound),
        fmt_g12(v),
        fmt_g12((report.cost - v).abs()),
        fmt_g12(closed_loop_tolerance(&field))
    );
    println!(
        "peak infected {}, deaths {}",
        fmt_g12(report.peak_infected()),
        fmt_g12(report.deaths)
    );
    Ok(())
}

/// Human-readable list of the parameters that differ.
fn param_diff(field: &ModelParams, config: &ModelParams) -> String {
    let pairs = [
        ("beta", field.beta, config.beta),
        ("gamma", field.gamma, config.gamma),
        ("theta", field.theta, config.theta),
        ("l_bar", field.l_bar, config.l_bar),
        ("nu", field.nu, config.nu),
        ("r", field.r, config.r),
        ("w", field.w, config.w),
        ("chi", field.chi, config.chi),
    ];
    let mut parts: Vec<String> = pairs
        .iter()
        .filter(|(_, a, b)| a != b)
        .map(|(name, a, b)| format!("{name} is {} in the field, {} in the config", fmt_g12(*a), fmt_g12(*b)))
        .collect();
    if field.phi != config.phi {
        parts.push(format!("phi is {:?} in the field, {:?} in the config", field.phi, config.phi));
    }
    parts.join("; ")
}

fn verify(cfg: &Config, params: &ModelParams, a: VerifyArgs) -> Outcome {
    let suites = if a.suites.is_empty() {
        cfg.suites().map_err(Failure::usage)?
    } else {
        a.suites
            .iter()
            .map(|s| config::parse_suite(s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(Failure::usage)?
    };
    let report = run_suites(params, &cfg.verify(), &suites, None)?;
    let text = report.to_text();
    print!("{text}");
    let (mut w, _) = create(&cfg.run.out, "verify_report.txt")?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    let (mut w, _) = create(&cfg.run.out, "verify_report.json")?;
    w.write_all(report.to_json().as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    if report.passed {
        Ok(())
    } else {
        Err(Failure::numerical("verification failed"))
    }
}

fn sweep(cfg: &Config, base: &ModelParams) -> Outcome {
    let sec = &cfg.sweep;
    let x0 = State::new(sec.s0, sec.i0)?;
    let solver = cfg.grid.solver();
    let (mut w, path) = create(&cfg.run.out, "sweep.csv")?;
    writeln!(w, "beta,theta,chi,V_at_x0,peak_i,total_deaths")?;
    for &beta in &sec.beta {
        for &theta in &sec.theta {
            for &chi in &sec.chi {
                let params = ModelParams { beta, theta, chi, ..*base };
                params.validate()?;
                let field = solve_value_function(&params, &solver)?;
                let horizon = sec.horizon.unwrap_or_else(|| closed_loop_horizon(&params));
                let rep = simulate_closed_loop(&field, x0, horizon, field.dt, &params)?;
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    fmt_g12(beta),
                    fmt_g12(theta),
                    fmt_g12(chi),
                    fmt_g12(field.interpolate(x0)?),
                    fmt_g12(rep.peak_infected()),
                    fmt_g12(rep.deaths)
                )?;
            }
        }
    }
    w.flush()?;
    println!("sweep: {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_spec_parses() {
        let c = parse_control("0:0.5, 10:0.1", 0.7).ok().unwrap();
        assert_eq!(c.breakpoints(), &[0.0, 10.0]);
        assert_eq!(c.values(), &[0.5, 0.1]);
        assert!(parse_control("0-0.5", 0.7).is_err());
        assert!(parse_control("0:0.9", 0.7).is_err());
    }

    #[test]
    fn numerical_errors_map_to_exit_two() {
        let f: Failure = Error::NonConvergence {
            iterations: 1,
            residual: 1.0,
            target: 0.1,
        }
        .into();
        assert_eq!(f.code, 2);
        let f: Failure = Error::Config("x".into()).into();
        assert_eq!(f.code, 1);
    }
}
