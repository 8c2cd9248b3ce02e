//! Run configuration: one TOML file, overridable per key from the
//! environment as `SIRD_<SECTION>_<KEY>` (e.g. `SIRD_PARAMS_BETA=0.3`).

use std::path::{Path, PathBuf};

use lockdown_core::hjb::SolverConfig;
use lockdown_core::verify::{Suite, VerifyConfig};
use lockdown_core::{ModelParams, MortalityCurve};
use serde::Deserialize;
use toml::{Table, Value};

pub const ENV_PREFIX: &str = "SIRD_";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub params: ParamsSection,
    pub grid: GridSection,
    pub run: RunSection,
    pub simulate: SimulateSection,
    pub policy: PolicySection,
    pub suites: SuitesSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsSection {
    pub beta: f64,
    pub gamma: f64,
    pub theta: f64,
    pub l_bar: f64,
    pub nu: f64,
    pub r: f64,
    pub w: f64,
    pub chi: f64,
    pub phi: MortalityCurve,
}

impl Default for ParamsSection {
    fn default() -> Self {
        let p = ModelParams::default();
        Self {
            beta: p.beta,
            gamma: p.gamma,
            theta: p.theta,
            l_bar: p.l_bar,
            nu: p.nu,
            r: p.r,
            w: p.w,
            chi: p.chi,
            phi: p.phi,
        }
    }
}

impl ParamsSection {
    pub fn model(&self) -> ModelParams {
        ModelParams {
            beta: self.beta,
            gamma: self.gamma,
            theta: self.theta,
            l_bar: self.l_bar,
            nu: self.nu,
            r: self.r,
            w: self.w,
            chi: self.chi,
            phi: self.phi,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
    pub dt: Option<f64>,
    pub m: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub analytic_candidate: bool,
}

impl Default for GridSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            n: s.n,
            dt: s.dt,
            m: s.m,
            tol: s.tol,
            max_iter: s.max_iter,
            analytic_candidate: s.analytic_candidate,
        }
    }
}

impl GridSection {
    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            n: self.n,
            dt: self.dt,
            m: self.m,
            tol: self.tol,
            max_iter: self.max_iter,
            analytic_candidate: self.analytic_candidate,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            workers: 0,
            seed: VerifyConfig::default().seed,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub s0: f64,
    pub i0: f64,
    pub horizon: f64,
    pub dt: f64,
    /// Constant lockdown level, used when `breakpoints` is empty.
    pub level: f64,
    pub breakpoints: Vec<f64>,
    pub levels: Vec<f64>,
    pub rel_tol: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            s0: 0.99,
            i0: 0.01,
            horizon: 100.0,
            dt: 0.05,
            level: 0.0,
            breakpoints: Vec::new(),
            levels: Vec::new(),
            rel_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub field: Option<PathBuf>,
    pub s0: f64,
    pub i0: f64,
    /// Defaults to the horizon past which the discounted tail is below 1e-6.
    pub horizon: Option<f64>,
    /// Defaults to the solver step stored with the field.
    pub dt: Option<f64>,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            field: None,
            s0: 0.99,
            i0: 0.01,
            horizon: None,
            dt: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuitesSection {
    /// Suites to run; empty means all.
    pub names: Vec<String>,
    pub hamiltonian_samples: usize,
    pub oracle_grid: usize,
    pub partition_samples: usize,
    pub concavity_samples: usize,
    pub pointwise_samples: usize,
    pub trajectory_trials: usize,
    pub identity_trials: usize,
    pub identity_rel_tol: f64,
    pub dpp_trials: usize,
    pub closed_loop_starts: usize,
}

impl Default for SuitesSection {
    fn default() -> Self {
        let v = VerifyConfig::default();
        Self {
            names: Vec::new(),
            hamiltonian_samples: v.hamiltonian_samples,
            oracle_grid: v.oracle_grid,
            partition_samples: v.partition_samples,
            concavity_samples: v.concavity_samples,
            pointwise_samples: v.pointwise_samples,
            trajectory_trials: v.trajectory_trials,
            identity_trials: v.identity_trials,
            identity_rel_tol: v.identity_rel_tol,
            dpp_trials: v.dpp_trials,
            closed_loop_starts: v.closed_loop_starts,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub chi: Vec<f64>,
    pub s0: f64,
    pub i0: f64,
    pub horizon: Option<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        let p = ModelParams::default();
        Self {
            beta: vec![p.beta],
            theta: vec![p.theta],
            chi: vec![p.chi],
            s0: 0.99,
            i0: 0.01,
            horizon: None,
        }
    }
}

impl Config {
    pub fn params(&self) -> ModelParams {
        self.params.model()
    }

    pub fn suites(&self) -> Result<Vec<Suite>, String> {
        if self.suites.names.is_empty() {
            return Ok(Suite::ALL.to_vec());
        }
        self.suites.names.iter().map(|n| parse_suite(n)).collect()
    }

    pub fn verify(&self) -> VerifyConfig {
        let s = &self.suites;
        VerifyConfig {
            seed: self.run.seed,
            hamiltonian_samples: s.hamiltonian_samples,
            oracle_grid: s.oracle_grid,
            partition_samples: s.partition_samples,
            concavity_samples: s.concavity_samples,
            pointwise_samples: s.pointwise_samples,
            trajectory_trials: s.trajectory_trials,
            identity_trials: s.identity_trials,
            identity_rel_tol: s.identity_rel_tol,
            dpp_trials: s.dpp_trials,
            closed_loop_starts: s.closed_loop_starts,
            solver: self.grid.solver(),
        }
    }
}

pub fn parse_suite(name: &str) -> Result<Suite, String> {
    Suite::from_name(name).ok_or_else(|| {
        let known: Vec<_> = Suite::ALL.iter().map(|s| s.name()).collect();
        format!("unknown suite `{name}` (known: {})", known.join(", "))
    })
}

/// Reads `path` (or starts from defaults), applies environment overrides
/// from `env` and deserializes the result.
pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Config, String> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            text.parse::<Table>().map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => Table::new(),
    };
    apply_env(&mut table, env)?;
    Config::deserialize(Value::Table(table)).map_err(|e| match path {
        Some(p) => format!("{}: {e}", p.display()),
        None => e.to_string(),
    })
}

fn apply_env(table: &mut Table, env: impl IntoIterator<Item = (String, String)>) -> Result<(), String> {
    let mut vars: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (key, raw) in vars {
        let rest = key[ENV_PREFIX.len()..].to_ascii_lowercase();
        let Some((section, field)) = rest.split_once('_') else {
            return Err(format!("{key}: expected {ENV_PREFIX}<SECTION>_<KEY>"));
        };
        let value = parse_scalar(&raw);
        let entry = table
            .entry(section.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        let Value::Table(sec) = entry else {
            return Err(format!("{key}: `{section}` is not a section"));
        };
        sec.insert(field.to_string(), value);
    }
    Ok(())
}

/// A TOML literal if `raw` parses as one, else a bare string.
fn parse_scalar(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_match_core() {
        let cfg = load(None, env(&[])).unwrap();
        assert_eq!(cfg.params(), ModelParams::default());
        assert_eq!(cfg.grid.solver(), SolverConfig::default());
        assert_eq!(cfg.suites().unwrap().len(), 5);
    }

    #[test]
    fn env_overrides_keys_with_underscores() {
        let cfg = load(
            None,
            env(&[("SIRD_PARAMS_L_BAR", "0.5"), ("SIRD_GRID_N", "80"), ("HOME", "/x")]),
        )
        .unwrap();
        assert_eq!(cfg.params.l_bar, 0.5);
        assert_eq!(cfg.grid.n, 80);
    }

    #[test]
    fn file_sections_and_phi_table() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "[params]\nbeta = 0.3\n[params.phi]\nkind = \"affine_saturating\"\nphi0 = 0.01\nslope = 0.1\ncap = 0.05\n\n[suites]\nnames = [\"hamiltonian\"]\n",
        )
        .unwrap();
        let cfg = load(Some(&path), env(&[])).unwrap();
        assert_eq!(cfg.params.beta, 0.3);
        assert!(matches!(cfg.params.phi, MortalityCurve::AffineSaturating { .. }));
        assert_eq!(cfg.suites().unwrap(), vec![Suite::Hamiltonian]);
    }

    #[test]
    fn unknown_keys_and_bad_syntax_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[params]\nbetta = 0.3\n").unwrap();
        let err = load(Some(&path), env(&[])).unwrap_err();
        assert!(err.contains("betta"), "{err}");
        std::fs::write(&path, "[params]\nbeta = = 0.3\n").unwrap();
        let err = load(Some(&path), env(&[])).unwrap_err();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(parse_suite("oracle").unwrap_err().contains("hamiltonian"));
    }
}
