//! Property suites that check a parameter set and a solved value field
//! against the structural facts of the model.
//!
//! Every check draws its samples from its own ChaCha stream, keyed by the
//! run seed and the check name, so reports are reproducible and independent
//! of which suites run. Each check reports the worst violation it saw and
//! the tolerance it was held to.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cost::{discounted_cost, evaluate_j, evaluate_j_tilde, running_cost};
use crate::dynamics::{
    integrate_backward, integrate_forward, sample_forward, vector_field, ControlSignal, FullState, State,
};
use crate::error::{Error, Result};
use crate::hamiltonian::{classify, h_cv, hamiltonian_h, pressure, psi, Costate, MinimizerSet, Region};
use crate::hjb::{bellman_update, solve_value_function, SolverConfig, ValueField};
use crate::params::ModelParams;
use crate::policy::{open_loop_value_process, simulate_closed_loop};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Dynamics,
    Cost,
    Hamiltonian,
    Hjb,
    Policy,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Dynamics, Suite::Cost, Suite::Hamiltonian, Suite::Hjb, Suite::Policy];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Dynamics => "dynamics",
            Suite::Cost => "cost",
            Suite::Hamiltonian => "hamiltonian",
            Suite::Hjb => "hjb",
            Suite::Policy => "policy",
        }
    }

    pub fn from_name(name: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|s| s.name() == name)
    }

    fn needs_field(&self) -> bool {
        matches!(self, Suite::Hjb | Suite::Policy)
    }
}

/// Sample counts and solver settings for a verification run.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub seed: u64,
    /// States and costates for the Hamiltonian oracle and minimizer checks.
    pub hamiltonian_samples: usize,
    /// Size of the brute-force control grid in the oracle.
    pub oracle_grid: usize,
    pub partition_samples: usize,
    pub concavity_samples: usize,
    /// Random points for the field and cost Lipschitz/bound checks.
    pub pointwise_samples: usize,
    /// Random trajectories for invariance, Gronwall and cost checks.
    pub trajectory_trials: usize,
    pub identity_trials: usize,
    pub identity_rel_tol: f64,
    pub dpp_trials: usize,
    pub closed_loop_starts: usize,
    pub solver: SolverConfig,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 20200415,
            hamiltonian_samples: 100_000,
            oracle_grid: 10_000,
            partition_samples: 1_000_000,
            concavity_samples: 10_000,
            pointwise_samples: 100_000,
            trajectory_trials: 100,
            identity_trials: 100,
            identity_rel_tol: 1e-4,
            dpp_trials: 50,
            closed_loop_starts: 20,
            solver: SolverConfig::default(),
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("hamiltonian_samples", self.hamiltonian_samples),
            ("partition_samples", self.partition_samples),
            ("concavity_samples", self.concavity_samples),
            ("pointwise_samples", self.pointwise_samples),
            ("trajectory_trials", self.trajectory_trials),
            ("identity_trials", self.identity_trials),
            ("dpp_trials", self.dpp_trials),
            ("closed_loop_starts", self.closed_loop_starts),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be at least 1")));
            }
        }
        if self.oracle_grid < 2 {
            return Err(Error::Config("`oracle_grid` must be at least 2".into()));
        }
        if !(self.identity_rel_tol > 0.0) {
            return Err(Error::Config("`identity_rel_tol` must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub suite: &'static str,
    pub check: &'static str,
    pub samples: usize,
    pub max_violation: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub seed: u64,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl CheckReport {
    fn new(check: &'static str, samples: usize, max_violation: f64, tolerance: f64, seed: u64) -> Self {
        Self {
            suite: "",
            check,
            samples,
            max_violation,
            tolerance,
            passed: max_violation <= tolerance,
            seed,
            note: String::new(),
        }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckReport>,
}

impl VerifyReport {
    fn from_checks(seed: u64, checks: Vec<CheckReport>) -> Self {
        Self {
            seed,
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }

    pub fn suite_passed(&self, suite: Suite) -> bool {
        self.checks.iter().filter(|c| c.suite == suite.name()).all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckReport> {
        self.checks.iter().find(|c| c.check == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let _ = write!(
                out,
                "{:<5} {:<12} {:<24} samples={:<8} max_violation={:<12} tolerance={}",
                if c.passed { "PASS" } else { "FAIL" },
                c.suite,
                c.check,
                c.samples,
                crate::io::fmt_g12(c.max_violation),
                crate::io::fmt_g12(c.tolerance),
            );
            if !c.note.is_empty() {
                let _ = write!(out, "  ({})", c.note);
            }
            out.push('\n');
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        let _ = writeln!(
            out,
            "{} checks, {} failed, seed {}",
            self.checks.len(),
            failed,
            self.seed
        );
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs every suite, solving the value function once for the field suites.
pub fn run_all(params: &ModelParams, config: &VerifyConfig) -> Result<VerifyReport> {
    run_suites(params, config, &Suite::ALL, None)
}

/// Runs the chosen suites. `field` is solved from `config.solver` when a
/// field suite is requested and none is given.
pub fn run_suites(
    params: &ModelParams,
    config: &VerifyConfig,
    suites: &[Suite],
    field: Option<&ValueField>,
) -> Result<VerifyReport> {
    params.validate()?;
    config.validate()?;
    let solved;
    let field = match field {
        Some(f) => Some(f),
        None if suites.iter().any(Suite::needs_field) => {
            solved = solve_value_function(params, &config.solver)?;
            Some(&solved)
        }
        None => None,
    };
    let mut checks = Vec::new();
    for suite in suites {
        let mut part = match suite {
            Suite::Dynamics => dynamics_suite(params, config)?,
            Suite::Cost => cost_suite(params, config)?,
            Suite::Hamiltonian => hamiltonian_suite(params, config),
            Suite::Hjb => hjb_suite(field.expect("field"), params, config)?,
            Suite::Policy => policy_suite(field.expect("field"), params, config)?,
        };
        for c in &mut part {
            c.suite = suite.name();
        }
        checks.extend(part);
    }
    Ok(VerifyReport::from_checks(config.seed, checks))
}

/// Seed of a check's private stream.
pub fn check_seed(seed: u64, check: &str) -> u64 {
    // FNV-1a over the name, mixed with the run seed.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in check.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ seed.wrapping_mul(0x9e3779b97f4a7c15)
}

fn rng_for(seed: u64, check: &str) -> (ChaCha8Rng, u64) {
    let s = check_seed(seed, check);
    (ChaCha8Rng::seed_from_u64(s), s)
}

// ---------------------------------------------------------------- sampling

/// Uniform point of the triangle.
pub fn sample_state<R: Rng>(rng: &mut R) -> State {
    let (u, v): (f64, f64) = (rng.gen(), rng.gen());
    if u + v <= 1.0 {
        State { s: u, i: v }
    } else {
        State { s: 1.0 - u, i: 1.0 - v }
    }
}

/// Uniform point at least `margin` away from the boundary of the triangle.
pub fn sample_interior<R: Rng>(rng: &mut R, margin: f64) -> State {
    loop {
        let x = sample_state(rng);
        if x.s >= margin && x.i >= margin && x.s + x.i <= 1.0 - margin {
            return x;
        }
    }
}

/// Triangle point with a few percent of draws on each edge and the origin.
fn sample_state_with_edges<R: Rng>(rng: &mut R) -> State {
    let x = sample_state(rng);
    match rng.gen_range(0..50) {
        0 => State { s: x.s, i: 0.0 },
        1 => State { s: 0.0, i: x.i },
        2 => State { s: 0.0, i: 0.0 },
        3 => State { s: x.s / (x.s + x.i), i: x.i / (x.s + x.i) },
        _ => x,
    }
}

/// Costates spread over several orders of magnitude of `q - p`, so every
/// region of the Hamiltonian is visited.
pub fn sample_costate<R: Rng>(rng: &mut R) -> Costate {
    let p = rng.gen_range(-20.0..20.0);
    let gap = match rng.gen_range(0..10) {
        0 => 0.0,
        1..=3 => rng.gen_range(-20.0..20.0),
        _ => {
            let mag = 10f64.powf(rng.gen_range(-2.0..3.0));
            if rng.gen_bool(0.8) {
                mag
            } else {
                -mag
            }
        }
    };
    Costate::new(p, p + gap)
}

/// Piecewise-constant control with up to six pieces on `[0, horizon)`.
pub fn sample_control<R: Rng>(rng: &mut R, horizon: f64, l_bar: f64) -> ControlSignal {
    let pieces = rng.gen_range(1..=6);
    let mut bps: Vec<f64> = (1..pieces).map(|_| rng.gen_range(0.0..horizon)).collect();
    bps.push(0.0);
    bps.sort_by(f64::total_cmp);
    bps.dedup();
    let vals = bps.iter().map(|_| rng.gen_range(0.0..=l_bar)).collect();
    ControlSignal::new(bps, vals, l_bar).expect("valid random control")
}

fn max_of(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(0.0, f64::max)
}

// ---------------------------------------------------------------- dynamics

fn dynamics_suite(params: &ModelParams, cfg: &VerifyConfig) -> Result<Vec<CheckReport>> {
    let consts = params.constants();
    let mut out = Vec::new();

    let (mut rng, seed) = rng_for(cfg.seed, "forward_invariance");
    let runs: Vec<(State, ControlSignal)> = (0..cfg.trajectory_trials)
        .map(|_| (sample_state_with_edges(&mut rng), sample_control(&mut rng, 40.0, params.l_bar)))
        .collect();
    let mut worst_exit: f64 = 0.0;
    let mut worst_rise: f64 = 0.0;
    for (x0, ctl) in &runs {
        match integrate_forward(*x0, ctl, 60.0, 0.05, params) {
            Ok(traj) => {
                worst_exit = worst_exit.max(max_of(traj.states.iter().map(State::violation)));
                for w in traj.states.windows(2) {
                    worst_rise = worst_rise.max((w[1].s + w[1].i) - (w[0].s + w[0].i));
                }
            }
            Err(Error::StepSize { violation, .. }) => worst_exit = worst_exit.max(violation),
            Err(e) => return Err(e),
        }
    }
    out.push(CheckReport::new("forward_invariance", runs.len(), worst_exit, 0.0, seed));
    out.push(CheckReport::new("population_nonincreasing", runs.len(), worst_rise, 0.0, seed));

    out.push(check_gronwall(params, cfg.trajectory_trials, cfg.seed)?);

    let (mut rng, seed) = rng_for(cfg.seed, "field_bound");
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.pointwise_samples {
        let x = sample_state(&mut rng);
        let l = rng.gen_range(0.0..=params.l_bar);
        let (a, b) = vector_field(x, l, params);
        worst = worst.max(a.hypot(b) - consts.k_b);
    }
    out.push(CheckReport::new("field_bound", cfg.pointwise_samples, worst.max(0.0), 0.0, seed));

    let (mut rng, seed) = rng_for(cfg.seed, "field_lipschitz");
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.pointwise_samples {
        let x = sample_state(&mut rng);
        let y = sample_state(&mut rng);
        let l = rng.gen_range(0.0..=params.l_bar);
        let (a, b) = vector_field(x, l, params);
        let (c, d) = vector_field(y, l, params);
        let lhs = (a - c).hypot(b - d);
        worst = worst.max(lhs - consts.m_b * x.norm_to(&y) - 1e-15);
    }
    out.push(CheckReport::new("field_lipschitz", cfg.pointwise_samples, worst.max(0.0), 0.0, seed));

    let (mut rng, seed) = rng_for(cfg.seed, "backward_roundtrip");
    let mut worst: f64 = 0.0;
    let mut used = 0;
    for _ in 0..cfg.trajectory_trials {
        let y0 = sample_interior(&mut rng, 1e-3);
        let dur = rng.gen_range(0.5..10.0);
        let ctl = sample_control(&mut rng, dur, params.l_bar);
        let back = integrate_backward(y0, &ctl, dur, 0.01, params)?;
        if !back.admissible {
            continue;
        }
        used += 1;
        let start = *back.trajectory.last().expect("nonempty");
        let fwd = integrate_forward(start, &ctl.reflected(dur), dur, 0.01, params)?;
        worst = worst.max(fwd.last().expect("nonempty").norm_to(&y0));
    }
    out.push(
        CheckReport::new("backward_roundtrip", used, worst, 1e-6, seed)
            .with_note(format!("{} of {} runs left the triangle backward", cfg.trajectory_trials - used, cfg.trajectory_trials)),
    );
    Ok(out)
}

/// `‖X^L_t - X^L'_t‖ <= ‖x - x'‖ e^{M_b t} + 4θ(L̄+1) ∫_0^t |L - L'| e^{M_b (t-u)} du`
/// on random pairs, at 32 times in `(0, 8]`.
pub fn check_gronwall(params: &ModelParams, trials: usize, seed: u64) -> Result<CheckReport> {
    let (mut rng, sd) = rng_for(seed, "gronwall");
    let m_b = params.constants().m_b;
    let horizon = 8.0;
    let times: Vec<f64> = (1..=32).map(|k| horizon * k as f64 / 32.0).collect();
    let weight = 4.0 * params.theta * (params.l_bar + 1.0);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let x = sample_state(&mut rng);
        let y = if rng.gen_bool(0.5) {
            x
        } else {
            sample_state(&mut rng)
        };
        let a = sample_control(&mut rng, horizon, params.l_bar);
        let b = sample_control(&mut rng, horizon, params.l_bar);
        let xs = sample_forward(x, &a, &times, 0.005, params)?;
        let ys = sample_forward(y, &b, &times, 0.005, params)?;
        for ((t, p), q) in times.iter().zip(&xs).zip(&ys) {
            let bound = x.norm_to(&y) * (m_b * t).exp() + weight * weighted_l1(&a, &b, *t, m_b);
            let lhs = p.norm_to(q);
            worst = worst.max(lhs - bound * (1.0 + 1e-12) - 1e-12);
        }
    }
    Ok(CheckReport::new("gronwall", trials, worst.max(0.0), 0.0, sd))
}

/// `∫_0^t |a - b| e^{m (t-u)} du`, exact for piecewise-constant controls.
fn weighted_l1(a: &ControlSignal, b: &ControlSignal, t: f64, m: f64) -> f64 {
    let mut cuts: Vec<f64> = a.breakpoints().iter().chain(b.breakpoints()).copied().filter(|c| *c < t).collect();
    cuts.push(0.0);
    cuts.push(t);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2)
        .map(|w| {
            let gap = (a.eval(w[0]) - b.eval(w[0])).abs();
            gap * ((m * (t - w[0])).exp() - (m * (t - w[1])).exp()) / m
        })
        .sum()
}

// ---------------------------------------------------------------- cost

fn cost_suite(params: &ModelParams, cfg: &VerifyConfig) -> Result<Vec<CheckReport>> {
    let consts = params.constants();
    let rho = params.rho();
    let mut out = vec![check_output_identity(params, cfg.identity_trials, cfg.identity_rel_tol, cfg.seed, false)?];

    let (mut rng, seed) = rng_for(cfg.seed, "cost_bounds");
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.trajectory_trials {
        let x = sample_state_with_edges(&mut rng);
        let ctl = sample_control(&mut rng, 30.0, params.l_bar);
        let (j, _) = evaluate_j(x, &ctl, params, 1e-6)?;
        worst = worst.max(-j).max(j - consts.k_f / rho);
    }
    out.push(CheckReport::new("cost_bounds", cfg.trajectory_trials, worst.max(0.0), 0.0, seed));

    let (mut rng, seed) = rng_for(cfg.seed, "running_cost_lipschitz");
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.pointwise_samples {
        let x = sample_state(&mut rng);
        let y = sample_state(&mut rng);
        let l = rng.gen_range(0.0..=params.l_bar);
        let gap = (running_cost(x, l, params) - running_cost(y, l, params)).abs();
        worst = worst.max(gap - consts.m_f * x.norm_to(&y) - 1e-15);
    }
    out.push(CheckReport::new("running_cost_lipschitz", cfg.pointwise_samples, worst.max(0.0), 0.0, seed));

    let (mut rng, seed) = rng_for(cfg.seed, "death_penalty_monotone");
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.trajectory_trials {
        let x = sample_state(&mut rng);
        let ctl = sample_control(&mut rng, 30.0, params.l_bar);
        let lo = rng.gen_range(0.0..20.0);
        let hi = lo + rng.gen_range(0.0..20.0);
        let mut a = *params;
        a.chi = lo;
        let mut b = *params;
        b.chi = hi;
        let ja = discounted_cost(x, &ctl, 40.0, 0.02, &a)?.cost;
        let jb = discounted_cost(x, &ctl, 40.0, 0.02, &b)?.cost;
        worst = worst.max(ja - jb);
    }
    out.push(CheckReport::new("death_penalty_monotone", cfg.trajectory_trials, worst.max(0.0), 1e-12, seed));
    Ok(out)
}

/// `J̃ = (1 - d0) w / r - J` on random initial populations and controls,
/// to a relative error `rel_tol` of `w / r`. With `no_deaths` the initial
/// dead compartment is zero, otherwise half the draws carry some deaths.
pub fn check_output_identity(
    params: &ModelParams,
    trials: usize,
    rel_tol: f64,
    seed: u64,
    no_deaths: bool,
) -> Result<CheckReport> {
    let (mut rng, sd) = rng_for(seed, "output_identity");
    let scale = params.w / params.r;
    let draws: Vec<(FullState, ControlSignal)> = (0..trials)
        .map(|k| {
            let x = sample_state(&mut rng);
            let d = if no_deaths || k % 2 == 0 {
                0.0
            } else {
                rng.gen_range(0.0..1.0 - x.s - x.i)
            };
            let full = FullState::new(x.s, x.i, 1.0 - x.s - x.i - d, d).expect("sums to one");
            (full, sample_control(&mut rng, 30.0, params.l_bar))
        })
        .collect();
    let errs = draws
        .par_iter()
        .map(|(x0, ctl)| -> Result<f64> {
            let jt = evaluate_j_tilde(*x0, ctl, params, rel_tol / 4.0)?;
            let (j, _) = evaluate_j(x0.reduced(), ctl, params, rel_tol / 4.0)?;
            Ok(((1.0 - x0.d) * scale - j - jt).abs() / scale)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CheckReport::new("output_identity", trials, max_of(errs.into_iter()), rel_tol, sd))
}

// ---------------------------------------------------------------- hamiltonian

fn hamiltonian_suite(params: &ModelParams, cfg: &VerifyConfig) -> Vec<CheckReport> {
    let mut out = vec![check_partition(params, cfg.partition_samples, cfg.seed)];
    out.extend(check_hamiltonian_oracle(
        params,
        cfg.hamiltonian_samples,
        cfg.oracle_grid,
        cfg.seed,
        hamiltonian_h,
    ));
    out.push(check_concavity(params, cfg.concavity_samples, cfg.seed));
    out.push(check_continuity(params, cfg.concavity_samples, cfg.seed));
    out
}

/// Membership of each region written straight from its defining
/// inequalities, independently of [`classify`].
pub fn region_predicates(x: State, c: Costate, params: &ModelParams) -> [bool; 7] {
    let (s, i) = (x.s, x.i);
    let gap = c.q - c.p;
    let inside = s > 0.0 && i > 0.0;
    let load = if inside { params.beta * s * i / (s + i) } else { 0.0 };
    let w = params.w;
    let theta = params.theta;
    let cut = 1.0 - theta * params.l_bar;
    [
        i == 0.0,
        s == 0.0 && i > 0.0,
        inside && gap == 0.0,
        inside && gap < 0.0,
        inside && gap > 0.0 && 2.0 * theta * gap * load <= w,
        inside && gap > 0.0 && 2.0 * theta * gap * load > w && 2.0 * theta * gap * load * cut < w,
        inside && gap > 0.0 && 2.0 * theta * gap * load * cut >= w,
    ]
}

fn region_slot(r: Region) -> usize {
    Region::ALL.iter().position(|q| *q == r).expect("listed")
}

/// Every state/costate pair lies in exactly one region, the one `classify`
/// reports. Violation is the number of disagreeing samples.
pub fn check_partition(params: &ModelParams, samples: usize, seed: u64) -> CheckReport {
    let (mut rng, sd) = rng_for(seed, "region_partition");
    let draws: Vec<(State, Costate)> =
        (0..samples).map(|_| (sample_state_with_edges(&mut rng), sample_costate(&mut rng))).collect();
    // Slot order in `region_predicates` follows `Region::ALL`.
    debug_assert_eq!(Region::ALL[0], Region::CI);
    let bad = draws
        .par_iter()
        .filter(|(x, c)| {
            let preds = region_predicates(*x, *c, params);
            let hits = preds.iter().filter(|b| **b).count();
            hits != 1 || !preds[region_slot(classify(*x, *c, params))]
        })
        .count();
    CheckReport::new("region_partition", samples, bad as f64, 0.0, sd)
}

/// Allowed gap between the closed-form `H` and the brute-force oracle.
pub const ORACLE_TOL: f64 = 1e-6;

/// Brute-force minimum and minimizer of `H_CV` over `m` evenly spaced
/// controls in `[0, L̄]`.
pub fn oracle_hamiltonian(x: State, c: Costate, params: &ModelParams, m: usize) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..m {
        let l = params.l_bar * k as f64 / (m - 1) as f64;
        let v = h_cv(x, c, l, params);
        if v < best.0 {
            best = (v, l);
        }
    }
    best
}

/// Compares `h` with the brute-force oracle, and checks that the closed-form
/// minimizer attains `H` and sits within one grid cell of the oracle's.
/// `h` is a parameter so a deliberately broken Hamiltonian can be shown to
/// fail.
pub fn check_hamiltonian_oracle<F>(
    params: &ModelParams,
    samples: usize,
    m: usize,
    seed: u64,
    h: F,
) -> Vec<CheckReport>
where
    F: Fn(State, Costate, &ModelParams) -> f64 + Sync,
{
    let (mut rng, sd) = rng_for(seed, "hamiltonian_oracle");
    let draws: Vec<(State, Costate)> =
        (0..samples).map(|_| (sample_state_with_edges(&mut rng), sample_costate(&mut rng))).collect();
    let dl = params.l_bar / (m - 1) as f64;
    // (|H - oracle|, minimizer value gap, argmin distance)
    let per: Vec<(f64, f64, f64)> = draws
        .par_iter()
        .map(|&(x, c)| {
            let (min, arg) = oracle_hamiltonian(x, c, params, m);
            let got = h(x, c, params);
            let grid_err = params.beta * params.theta.powi(2) * x.s * x.i * c.gap().abs() * dl * dl / 4.0;
            let tol = grid_err + 1e-12 * (1.0 + min.abs());
            let oracle = (got - min).abs();
            let set = psi(x, c, params);
            let attained = (h_cv(x, c, set.selection(), params) - got).abs() / (1.0 + got.abs());
            let arg_gap = match set {
                MinimizerSet::Singleton(l) => {
                    // A flat direction can put the grid argmin anywhere with
                    // the same value; only a strictly worse pick counts.
                    let d = (l - arg).abs();
                    if d > dl && h_cv(x, c, l, params) < min - tol {
                        d
                    } else {
                        0.0
                    }
                }
                MinimizerSet::FullInterval => 0.0,
            };
            (oracle, attained, arg_gap)
        })
        .collect();
    vec![
        CheckReport::new("hamiltonian_oracle", samples, max_of(per.iter().map(|p| p.0)), ORACLE_TOL, sd),
        CheckReport::new("minimizer_attains", samples, max_of(per.iter().map(|p| p.1)), 1e-10, sd),
        CheckReport::new("minimizer_location", samples, max_of(per.iter().map(|p| p.2)), dl, sd)
            .with_note(format!("control grid of {m} points")),
    ]
}

/// `H(x, ·)` is concave: `H(λa + (1-λ)b) >= λH(a) + (1-λ)H(b)`.
pub fn check_concavity(params: &ModelParams, samples: usize, seed: u64) -> CheckReport {
    let (mut rng, sd) = rng_for(seed, "costate_concavity");
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x = sample_state_with_edges(&mut rng);
        let a = sample_costate(&mut rng);
        let b = sample_costate(&mut rng);
        let lam: f64 = rng.gen();
        let mix = Costate::new(lam * a.p + (1.0 - lam) * b.p, lam * a.q + (1.0 - lam) * b.q);
        let ha = hamiltonian_h(x, a, params);
        let hb = hamiltonian_h(x, b, params);
        let chord = lam * ha + (1.0 - lam) * hb;
        let scale = 1.0 + ha.abs() + hb.abs();
        worst = worst.max((chord - hamiltonian_h(x, mix, params)) / scale);
    }
    CheckReport::new("costate_concavity", samples, worst.max(0.0), 1e-12, sd)
}

/// `H` does not jump across the `A_2/A_3` and `A_3/A_4` boundaries.
pub fn check_continuity(params: &ModelParams, samples: usize, seed: u64) -> CheckReport {
    let (mut rng, sd) = rng_for(seed, "boundary_continuity");
    let eps = 1e-9;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x = sample_interior(&mut rng, 1e-3);
        let load = pressure(x, params);
        let p = rng.gen_range(-20.0..20.0);
        let k1_gap = params.w / (2.0 * params.theta * load);
        for gap in [k1_gap, k1_gap / (1.0 - params.theta * params.l_bar)] {
            let lo = hamiltonian_h(x, Costate::new(p, p + gap - eps), params);
            let hi = hamiltonian_h(x, Costate::new(p, p + gap + eps), params);
            worst = worst.max((lo - hi).abs());
        }
    }
    CheckReport::new("boundary_continuity", samples, worst, 1e-6, sd)
}

// ---------------------------------------------------------------- hjb

/// Tolerance for dynamic-programming comparisons on a field.
pub fn dpp_tolerance(field: &ValueField) -> f64 {
    10.0 * (field.h() + field.dt) * field.params.constants().k_f
}

/// Tolerance for comparing a closed-loop cost with the field.
pub fn closed_loop_tolerance(field: &ValueField) -> f64 {
    let p = &field.params;
    20.0 * (field.h() + field.dt) * p.constants().k_f / p.rho()
}

fn check_field_params(field: &ValueField, params: &ModelParams) -> Result<()> {
    if field.params != *params {
        return Err(Error::Mismatch("field was solved for different parameters".into()));
    }
    Ok(())
}

fn hjb_suite(field: &ValueField, params: &ModelParams, cfg: &VerifyConfig) -> Result<Vec<CheckReport>> {
    check_field_params(field, params)?;
    let mut out = vec![check_value_bound(field), check_zero_infected_edge(field)];
    out.push(check_contraction(field));
    out.push(check_one_step_dpp(field)?);
    out.extend(check_dpp(field, cfg.dpp_trials, cfg.seed)?);
    out.push(check_value_lipschitz(field));
    out.push(check_infected_edge_monotone(field));
    let res = crate::hjb::hjb_residual(field, params);
    out.push(
        CheckReport::new("hjb_residual_median", field.grid.node_count(), res.interior_median, dpp_tolerance(field), cfg.seed)
            .with_note(format!(
                "interior p90 {} max {}",
                crate::io::fmt_g12(res.interior_p90),
                crate::io::fmt_g12(res.interior_max)
            )),
    );
    Ok(out)
}

/// `0 <= V <= K_f / (r+ν)` at every node.
pub fn check_value_bound(field: &ValueField) -> CheckReport {
    let bound = field.params.value_bound();
    let worst = max_of(field.values.iter().map(|v| (-v).max(v - bound)));
    CheckReport::new("value_bound", field.values.len(), worst.max(0.0), 1e-9, 0)
}

/// `V(s, 0) = 0`.
pub fn check_zero_infected_edge(field: &ValueField) -> CheckReport {
    let n = field.grid.n();
    let worst = max_of((0..=n).map(|j| field.node(j, 0).abs()));
    CheckReport::new("zero_infected_edge", n + 1, worst, 1e-12, 0)
}

/// Successive sweep changes shrink at least by the discount factor, up to
/// a small slack, once the iteration has left its transient.
pub fn check_contraction(field: &ValueField) -> CheckReport {
    let disc = field.discount();
    let hist = &field.history;
    if hist.len() < 3 {
        return CheckReport::new("contraction", 0, 0.0, 0.05, 0).with_note("no sweep history on this field");
    }
    let start = hist.len() / 10;
    let worst = max_of(
        hist[start..]
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0] - disc),
    );
    CheckReport::new("contraction", hist.len() - start - 1, worst.max(0.0), 0.05, 0)
}

/// One more sweep of the discrete operator barely moves a converged field:
/// `‖B V - V‖ <= 2 × (stored residual) + 1e-12`.
pub fn check_one_step_dpp(field: &ValueField) -> Result<CheckReport> {
    let (next, change) = bellman_update(field, &field.params, field.dt, field.m)?;
    drop(next);
    Ok(CheckReport::new("dpp_one_step", field.values.len(), change, 2.0 * field.residual + 1e-12, 0))
}

/// Dynamic programming over `T = 10 dt`: forward with the best constant
/// control on the solver's control grid, and the backward inequality along
/// admissible backward runs. Starts on `s + i = 1` admit no backward run and
/// are skipped.
pub fn check_dpp(field: &ValueField, trials: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let params = &field.params;
    let rho = params.rho();
    let tol = dpp_tolerance(field);
    let horizon = 10.0 * field.dt;
    let m = field.m.max(2);

    let (mut rng, sd) = rng_for(seed, "dpp_forward");
    let starts: Vec<State> = (0..trials).map(|_| sample_interior(&mut rng, 1e-3)).collect();
    let fwd = starts
        .par_iter()
        .map(|x| -> Result<f64> {
            let mut best = f64::INFINITY;
            for k in 0..m {
                let l = params.l_bar * k as f64 / (m - 1) as f64;
                let run = discounted_cost(*x, &ControlSignal::constant(l), horizon, field.dt / 4.0, params)?;
                best = best.min(run.cost + (-rho * horizon).exp() * field.interpolate(run.end)?);
            }
            Ok((best - field.interpolate(*x)?).abs())
        })
        .collect::<Result<Vec<_>>>()?;

    let (mut rng, sd_b) = rng_for(seed, "dpp_backward");
    let mut runs = Vec::with_capacity(trials);
    for _ in 0..trials {
        let x = sample_interior(&mut rng, 1e-3);
        let dur = rng.gen_range(horizon..2.0);
        runs.push((x, dur, sample_control(&mut rng, dur, params.l_bar)));
    }
    let back = runs
        .par_iter()
        .map(|(x, dur, ctl)| -> Result<(f64, bool)> {
            let run = integrate_backward(*x, ctl, *dur, field.dt, params)?;
            let traj = &run.trajectory;
            let vx = field.interpolate(*x)?;
            let mut worst: f64 = 0.0;
            // ∫_0^u f(Y_{-v}) e^{ρ v} dv by the trapezoid rule along the run.
            let mut acc = 0.0;
            for k in 1..traj.len() {
                let (u0, u1) = (traj.times[k - 1], traj.times[k]);
                let l = traj.control_values[k - 1];
                let f0 = running_cost(traj.states[k - 1], l, params) * (rho * u0).exp();
                let f1 = running_cost(traj.states[k], l, params) * (rho * u1).exp();
                acc += 0.5 * (u1 - u0) * (f0 + f1);
                let rhs = field.interpolate(traj.states[k])? * (rho * u1).exp() - acc;
                worst = worst.max(rhs - vx);
            }
            Ok((worst, run.admissible))
        })
        .collect::<Result<Vec<_>>>()?;
    let exits = back.iter().filter(|b| !b.1).count();
    Ok(vec![
        CheckReport::new("dpp_forward", trials, max_of(fwd.into_iter()), tol, sd),
        CheckReport::new("dpp_backward", trials, max_of(back.iter().map(|b| b.0)), tol, sd_b).with_note(format!(
            "{exits} runs left the triangle and were checked up to the exit; starts on s+i=1 are excluded"
        )),
    ])
}

/// Largest slope between adjacent nodes against
/// `M_f / (r+ν - M_b) + 10 h M_f`. Only meaningful when `r+ν > M_b`.
pub fn check_value_lipschitz(field: &ValueField) -> CheckReport {
    let c = field.params.constants();
    let rho = field.params.rho();
    let n = field.grid.n();
    let h = field.h();
    let mut slope: f64 = 0.0;
    for (j, k) in field.grid.nodes() {
        let v = field.node(j, k);
        if j + k < n {
            slope = slope.max((field.node(j + 1, k) - v).abs() / h);
            slope = slope.max((field.node(j, k + 1) - v).abs() / h);
        }
        if j > 0 {
            slope = slope.max((field.node(j - 1, k + 1) - v).abs() / (h * std::f64::consts::SQRT_2));
        }
    }
    if rho <= c.m_b {
        return CheckReport::new("value_lipschitz", field.grid.node_count(), 0.0, f64::INFINITY, 0)
            .with_note(format!("not applicable: r+nu = {} <= M_b = {}", rho, c.m_b));
    }
    let bound = c.m_f / (rho - c.m_b) + 10.0 * h * c.m_f;
    CheckReport::new("value_lipschitz", field.grid.node_count(), (slope - bound).max(0.0), 0.0, 0)
        .with_note(format!("max slope {} bound {}", crate::io::fmt_g12(slope), crate::io::fmt_g12(bound)))
}

/// `V(0, i)` is non-decreasing in `i`.
pub fn check_infected_edge_monotone(field: &ValueField) -> CheckReport {
    let n = field.grid.n();
    let worst = max_of((0..n).map(|k| field.node(0, k) - field.node(0, k + 1)));
    CheckReport::new("infected_edge_monotone", n, worst.max(0.0), 1e-12, 0)
}

// ---------------------------------------------------------------- policy

/// Closed-loop horizon after which the discounted tail is below `1e-6`.
pub fn closed_loop_horizon(params: &ModelParams) -> f64 {
    (params.constants().k_f / (params.rho() * 1e-6)).ln() / params.rho()
}

fn policy_suite(field: &ValueField, params: &ModelParams, cfg: &VerifyConfig) -> Result<Vec<CheckReport>> {
    check_field_params(field, params)?;
    let horizon = closed_loop_horizon(params);
    let tol = closed_loop_tolerance(field);
    let (mut rng, sd) = rng_for(cfg.seed, "closed_loop");
    let starts: Vec<State> = (0..cfg.closed_loop_starts).map(|_| sample_interior(&mut rng, 1e-3)).collect();
    let reports = starts
        .par_iter()
        .map(|x| simulate_closed_loop(field, *x, horizon, field.dt, params))
        .collect::<Result<Vec<_>>>()?;

    let mut cost_gap: f64 = 0.0;
    let mut g_spread: f64 = 0.0;
    let mut pointwise: f64 = 0.0;
    let mut laissez: f64 = 0.0;
    let mut jumps = 0usize;
    let m = field.m.max(2);
    for (x0, rep) in starts.iter().zip(&reports) {
        cost_gap = cost_gap.max((rep.cost - field.interpolate(*x0)?).abs());
        let g = rep.value_process(field)?;
        let (lo, hi) = g.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        g_spread = g_spread.max(hi - lo);
        for k in 0..rep.times.len() {
            let (x, c, l) = (rep.states[k], rep.costates[k], rep.applied_l[k]);
            let at = h_cv(x, c, l, params);
            let grid_min = (0..m)
                .map(|j| h_cv(x, c, params.l_bar * j as f64 / (m - 1) as f64, params))
                .fold(f64::INFINITY, f64::min);
            pointwise = pointwise.max(at - grid_min);
            if c.q <= c.p {
                laissez = laissez.max(l);
            }
        }
        jumps += region_jumps(&rep.region_tags);
    }
    let n = starts.len();
    let mut out = vec![
        CheckReport::new("closed_loop_cost", n, cost_gap, tol, sd),
        CheckReport::new("value_process_constant", n, g_spread, tol, sd),
        CheckReport::new("pointwise_minimum", n, pointwise, 1e-8, sd),
        CheckReport::new("laissez_faire", n, laissez, 0.0, sd),
        CheckReport::new("region_adjacency", n, jumps as f64, 0.0, sd)
            .with_note("transitions must follow A1-A0-A2-A3-A4"),
    ];

    let (mut rng, sd) = rng_for(cfg.seed, "value_process_monotone");
    let mut drop: f64 = 0.0;
    for _ in 0..cfg.closed_loop_starts {
        let x = sample_interior(&mut rng, 1e-3);
        let ctl = sample_control(&mut rng, horizon, params.l_bar);
        let g = open_loop_value_process(field, x, &ctl, horizon, field.dt, params)?;
        let mut peak = f64::NEG_INFINITY;
        for (_, v) in g {
            peak = peak.max(v);
            drop = drop.max(peak - v);
        }
    }
    out.push(CheckReport::new("value_process_monotone", cfg.closed_loop_starts, drop, dpp_tolerance(field), sd));
    Ok(out)
}

/// Number of consecutive region changes that skip a rung of the ladder
/// `A1 - A0 - A2 - A3 - A4`. Boundary regions do not count.
pub fn region_jumps(tags: &[Region]) -> usize {
    let ranks: Vec<u8> = tags.iter().filter_map(Region::ladder_rank).collect();
    ranks.windows(2).filter(|w| w[0].abs_diff(w[1]) > 1).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifyConfig {
        VerifyConfig {
            hamiltonian_samples: 2_000,
            oracle_grid: 2_001,
            partition_samples: 20_000,
            concavity_samples: 2_000,
            pointwise_samples: 5_000,
            trajectory_trials: 10,
            identity_trials: 6,
            dpp_trials: 8,
            closed_loop_starts: 4,
            solver: SolverConfig::default().with_n(20),
            ..VerifyConfig::default()
        }
    }

    #[test]
    fn zero_samples_is_a_config_error() {
        let cfg = VerifyConfig {
            identity_trials: 0,
            ..small()
        };
        assert!(matches!(run_all(&ModelParams::default(), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn seeds_depend_on_check_name() {
        assert_ne!(check_seed(1, "gronwall"), check_seed(1, "output_identity"));
        assert_ne!(check_seed(1, "gronwall"), check_seed(2, "gronwall"));
        assert_eq!(check_seed(7, "dpp_forward"), check_seed(7, "dpp_forward"));
    }

    #[test]
    fn predicates_agree_with_classify_on_edges() {
        let p = ModelParams::default();
        for (x, c) in [
            (State { s: 0.3, i: 0.0 }, Costate::new(0.0, 1.0)),
            (State { s: 0.0, i: 0.3 }, Costate::new(0.0, 1.0)),
            (State { s: 0.0, i: 0.0 }, Costate::new(0.0, 1.0)),
            (State { s: 0.3, i: 0.3 }, Costate::new(1.0, 1.0)),
            (State { s: 0.3, i: 0.3 }, Costate::new(2.0, 1.0)),
        ] {
            let preds = region_predicates(x, c, &p);
            assert_eq!(preds.iter().filter(|b| **b).count(), 1);
            assert!(preds[region_slot(classify(x, c, &p))]);
        }
    }

    #[test]
    fn weighted_l1_matches_plain_l1_without_growth() {
        let a = ControlSignal::new(vec![0.0, 1.0], vec![0.5, 0.1], 0.7).unwrap();
        let b = ControlSignal::constant(0.2);
        let tiny = weighted_l1(&a, &b, 3.0, 1e-9);
        assert!((tiny - a.l1_distance(&b, 3.0)).abs() < 1e-7);
    }

    #[test]
    fn ladder_jumps_are_counted() {
        use Region::*;
        assert_eq!(region_jumps(&[A1, A0, A2, A3, A4, A3]), 0);
        assert_eq!(region_jumps(&[A2, CI, A4]), 1);
        assert_eq!(region_jumps(&[A1, A3]), 1);
    }

    #[test]
    fn small_run_passes_and_is_deterministic() {
        let p = ModelParams::default();
        let a = run_all(&p, &small()).unwrap();
        assert!(a.passed, "{}", a.to_text());
        let b = run_all(&p, &small()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }
}
