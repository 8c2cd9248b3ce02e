//! Semi-Lagrangian value iteration for the lockdown value function.
//!
//! One sweep of the discrete Bellman operator reads
//!
//! ```text
//! V(x) <- min_l [ dt f(x, l) + e^{-(r+ν) dt} V(x + dt b(x, l)) ]
//! ```
//!
//! with `V` at the characteristic foot taken from the P1 interpolant. The
//! candidate controls are a uniform grid on `[0, L̄]` plus, when it lies
//! strictly inside, the vertex `Ψ` predicted by the finite-difference costate.
//! Since the grid part of the scheme does not change between sweeps, its feet
//! and weights are computed once.

use rayon::prelude::*;

use crate::cost::running_cost;
use crate::dynamics::{vector_field, State, CLAMP_TOL};
use crate::error::{Error, Result};
use crate::grid::{Location, TriangularGrid};
use crate::hamiltonian::{hamiltonian_h, psi, Costate, MinimizerSet};
use crate::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Subdivisions per edge.
    pub n: usize,
    /// Time step; `None` picks `0.5 h / K_b`.
    pub dt: Option<f64>,
    /// Size of the uniform control grid.
    pub m: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Adds the analytic minimizer to the candidate set.
    pub analytic_candidate: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n: 50,
            dt: None,
            m: 21,
            tol: 1e-6,
            max_iter: 200_000,
            analytic_candidate: true,
        }
    }
}

impl SolverConfig {
    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn resolved_dt(&self, params: &ModelParams) -> f64 {
        self.dt
            .unwrap_or_else(|| 0.5 / (self.n as f64 * params.constants().k_b))
    }
}

/// Grid-sampled value function with the settings that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub grid: TriangularGrid,
    pub values: Vec<f64>,
    pub params: ModelParams,
    pub dt: f64,
    pub m: usize,
    pub iterations: usize,
    pub residual: f64,
    /// Sup-norm change of every sweep; empty for loaded fields.
    pub history: Vec<f64>,
}

impl ValueField {
    pub fn zeros(grid: TriangularGrid, params: ModelParams, dt: f64, m: usize) -> Self {
        let values = vec![0.0; grid.node_count()];
        Self {
            grid,
            values,
            params,
            dt,
            m,
            iterations: 0,
            residual: f64::INFINITY,
            history: Vec::new(),
        }
    }

    pub fn h(&self) -> f64 {
        self.grid.h()
    }

    pub fn node(&self, j: usize, k: usize) -> f64 {
        self.values[self.grid.index(j, k)]
    }

    pub fn interpolate(&self, x: State) -> Result<f64> {
        self.grid.interpolate(&self.values, x)
    }

    /// Contraction factor `e^{-(r+ν) dt}` of one sweep.
    pub fn discount(&self) -> f64 {
        (-self.params.rho() * self.dt).exp()
    }

    /// Finite-difference gradient at a node, reading neighbors directly.
    pub fn node_costate(&self, j: usize, k: usize) -> Costate {
        node_costate(&self.grid, &self.values, j, k)
    }
}

fn node_costate(grid: &TriangularGrid, values: &[f64], j: usize, k: usize) -> Costate {
    let n = grid.n();
    let h = grid.h();
    let v = |j: usize, k: usize| values[grid.index(j, k)];
    let here = v(j, k);
    let room = j + k < n;
    let p = match (j > 0, room) {
        (true, true) => Some((v(j + 1, k) - v(j - 1, k)) / (2.0 * h)),
        (false, true) => Some((v(j + 1, k) - here) / h),
        (true, false) => Some((here - v(j - 1, k)) / h),
        (false, false) => None,
    };
    let q = match (k > 0, room) {
        (true, true) => Some((v(j, k + 1) - v(j, k - 1)) / (2.0 * h)),
        (false, true) => Some((v(j, k + 1) - here) / h),
        (true, false) => Some((here - v(j, k - 1)) / h),
        (false, false) => None,
    };
    // At the corners (1, 0) and (0, 1) one axis has no neighbor; step along
    // the hypotenuse instead.
    match (p, q) {
        (Some(p), Some(q)) => Costate { p, q },
        (Some(p), None) => Costate { p, q: p + (v(j - 1, k + 1) - here) / h },
        (None, Some(q)) => Costate { p: q + (v(j + 1, k - 1) - here) / h, q },
        (None, None) => Costate { p: 0.0, q: 0.0 },
    }
}

/// Finite-difference costate at any point: central differences with step
/// `h` where both neighbors lie in the triangle, one-sided otherwise.
pub fn fd_costate(field: &ValueField, x: State) -> Result<Costate> {
    let x = x.clamped()?;
    let h = field.h();
    let slack = 1e-12;
    let inside = |y: State| y.violation() <= slack;
    let eval = |y: State| field.interpolate(y);
    let diff = |plus: State, minus: State| -> Result<Option<f64>> {
        Ok(match (inside(plus), inside(minus)) {
            (true, true) => Some((eval(plus)? - eval(minus)?) / (2.0 * h)),
            (true, false) => Some((eval(plus)? - eval(x)?) / h),
            (false, true) => Some((eval(x)? - eval(minus)?) / h),
            (false, false) => None,
        })
    };
    let p = diff(State { s: x.s + h, i: x.i }, State { s: x.s - h, i: x.i })?;
    let q = diff(State { s: x.s, i: x.i + h }, State { s: x.s, i: x.i - h })?;
    let along = |ds: f64, di: f64| -> Result<f64> {
        let y = State { s: x.s + ds, i: x.i + di };
        if inside(y) {
            Ok((eval(y)? - eval(x)?) / h)
        } else {
            Ok(0.0)
        }
    };
    Ok(match (p, q) {
        (Some(p), Some(q)) => Costate { p, q },
        (Some(p), None) => Costate { p, q: p + along(-h, h)? },
        (None, Some(q)) => Costate { p: q + along(h, -h)?, q },
        (None, None) => Costate { p: 0.0, q: 0.0 },
    })
}

#[derive(Debug, Clone, Copy)]
struct Stencil {
    loc: Location,
    running: f64,
}

/// The discrete Bellman operator for fixed `(grid, params, dt, m)`.
pub struct Scheme {
    grid: TriangularGrid,
    params: ModelParams,
    dt: f64,
    m: usize,
    discount: f64,
    stencils: Vec<Stencil>,
    analytic_candidate: bool,
}

fn foot(x: State, l: f64, dt: f64, params: &ModelParams) -> State {
    let (ds, di) = vector_field(x, l, params);
    State {
        s: x.s + dt * ds,
        i: x.i + dt * di,
    }
}

impl Scheme {
    pub fn new(
        grid: TriangularGrid,
        params: ModelParams,
        dt: f64,
        m: usize,
        analytic_candidate: bool,
    ) -> Result<Self> {
        params.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Domain {
                what: "time step",
                detail: format!("dt = {dt} must be positive"),
            });
        }
        if m < 2 {
            return Err(Error::Domain {
                what: "control grid",
                detail: format!("m = {m} needs at least 2 points"),
            });
        }
        let controls: Vec<f64> = (0..m)
            .map(|k| params.l_bar * k as f64 / (m - 1) as f64)
            .collect();
        let mut stencils = Vec::with_capacity(grid.node_count() * m);
        for (j, k) in grid.nodes() {
            let x = grid.node_state(j, k);
            for &l in &controls {
                let y = foot(x, l, dt, &params);
                if y.violation() > CLAMP_TOL {
                    return Err(Error::StepSize {
                        t: dt,
                        violation: y.violation(),
                    });
                }
                stencils.push(Stencil {
                    loc: grid.locate(y)?,
                    running: dt * running_cost(x, l, &params),
                });
            }
        }
        Ok(Self {
            discount: (-params.rho() * dt).exp(),
            grid,
            params,
            dt,
            m,
            stencils,
            analytic_candidate,
        })
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    fn node_update(&self, idx: usize, j: usize, k: usize, values: &[f64]) -> f64 {
        let row = &self.stencils[idx * self.m..(idx + 1) * self.m];
        let mut best = f64::INFINITY;
        for st in row {
            let v = st.running + self.discount * st.loc.apply(values);
            if v < best {
                best = v;
            }
        }
        if self.analytic_candidate && j > 0 && k > 0 {
            let x = self.grid.node_state(j, k);
            let c = node_costate(&self.grid, values, j, k);
            if let MinimizerSet::Singleton(l) = psi(x, c, &self.params) {
                if l > 0.0 && l < self.params.l_bar {
                    let y = foot(x, l, self.dt, &self.params);
                    if let Ok(loc) = self.grid.locate(y) {
                        let v = self.dt * running_cost(x, l, &self.params)
                            + self.discount * loc.apply(values);
                        best = best.min(v);
                    }
                }
            }
        }
        best
    }

    /// Applies the operator, writing into `out`; returns the sup-norm change.
    pub fn apply(&self, values: &[f64], out: &mut [f64]) -> f64 {
        let n = self.grid.n();
        let grid = &self.grid;
        out.par_chunks_mut(n + 1)
            .enumerate()
            .map(|(chunk, dst)| {
                let mut change = 0.0f64;
                let start = chunk * (n + 1);
                let (mut j, mut k) = grid.coords(start);
                for (off, slot) in dst.iter_mut().enumerate() {
                    let idx = start + off;
                    let v = self.node_update(idx, j, k, values);
                    change = change.max((v - values[idx]).abs());
                    *slot = v;
                    j += 1;
                    if j + k > n {
                        j = 0;
                        k += 1;
                    }
                }
                change
            })
            .reduce(|| 0.0, f64::max)
    }
}

/// One sweep of the Bellman operator on `field`.
pub fn bellman_update(field: &ValueField, params: &ModelParams, dt: f64, m: usize) -> Result<(ValueField, f64)> {
    let scheme = Scheme::new(field.grid.clone(), *params, dt, m, true)?;
    let mut out = field.clone();
    let residual = scheme.apply(&field.values, &mut out.values);
    out.params = *params;
    out.dt = dt;
    out.m = m;
    out.iterations += 1;
    out.residual = residual;
    out.history.push(residual);
    Ok((out, residual))
}

/// Value iteration from the zero field until the sup-norm change drops to
/// `tol (1 - e^{-(r+ν) dt})`, which bounds the distance to the fixed point
/// by `tol`.
pub fn solve_value_function(params: &ModelParams, config: &SolverConfig) -> Result<ValueField> {
    if !(config.tol > 0.0) {
        return Err(Error::Domain {
            what: "tolerance",
            detail: format!("{} must be positive", config.tol),
        });
    }
    let grid = TriangularGrid::new(config.n)?;
    let dt = config.resolved_dt(params);
    let scheme = Scheme::new(grid.clone(), *params, dt, config.m, config.analytic_candidate)?;
    let target = config.tol * (1.0 - scheme.discount());
    let mut field = ValueField::zeros(grid, *params, dt, config.m);
    let mut next = field.values.clone();
    let mut residual = f64::INFINITY;
    for it in 1..=config.max_iter {
        residual = scheme.apply(&field.values, &mut next);
        std::mem::swap(&mut field.values, &mut next);
        field.history.push(residual);
        if residual <= target {
            field.iterations = it;
            field.residual = residual;
            return Ok(field);
        }
    }
    Err(Error::NonConvergence {
        iterations: config.max_iter,
        residual,
        target,
    })
}

/// Pointwise HJB residual `(r+ν) V - H(x, ∇V)` at every node.
#[derive(Debug, Clone)]
pub struct ResidualMap {
    pub per_node: Vec<f64>,
    pub interior_median: f64,
    pub interior_p90: f64,
    pub interior_max: f64,
}

pub fn hjb_residual(field: &ValueField, params: &ModelParams) -> ResidualMap {
    let n = field.grid.n();
    let rho = params.rho();
    let mut per_node = vec![0.0; field.grid.node_count()];
    let mut interior = Vec::new();
    for (idx, (j, k)) in field.grid.nodes().enumerate() {
        let x = field.grid.node_state(j, k);
        let c = field.node_costate(j, k);
        let res = rho * field.values[idx] - hamiltonian_h(x, c, params);
        per_node[idx] = res;
        if j > 0 && k > 0 && j + k < n {
            interior.push(res.abs());
        }
    }
    interior.sort_by(f64::total_cmp);
    let q = |frac: f64| -> f64 {
        if interior.is_empty() {
            0.0
        } else {
            interior[((interior.len() - 1) as f64 * frac).round() as usize]
        }
    };
    ResidualMap {
        interior_median: q(0.5),
        interior_p90: q(0.9),
        interior_max: q(1.0),
        per_node,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(grid: &TriangularGrid, f: impl Fn(f64, f64) -> f64) -> ValueField {
        let mut field = ValueField::zeros(grid.clone(), ModelParams::default(), 0.01, 5);
        for (idx, (j, k)) in grid.nodes().enumerate() {
            let x = grid.node_state(j, k);
            field.values[idx] = f(x.s, x.i);
        }
        field
    }

    #[test]
    fn affine_gradient_is_exact() {
        let grid = TriangularGrid::new(10).unwrap();
        let field = synthetic(&grid, |s, i| 0.3 - 1.7 * s + 2.4 * i);
        for x in [
            State { s: 0.0, i: 0.0 },
            State { s: 0.31, i: 0.42 },
            State { s: 1.0, i: 0.0 },
            State { s: 0.0, i: 1.0 },
            State { s: 0.5, i: 0.5 },
        ] {
            let c = fd_costate(&field, x).unwrap();
            assert!((c.p + 1.7).abs() < 1e-9 && (c.q - 2.4).abs() < 1e-9, "{x:?}: {c:?}");
        }
    }

    #[test]
    fn node_and_point_costates_agree() {
        let grid = TriangularGrid::new(12).unwrap();
        let field = synthetic(&grid, |s, i| (2.0 * s).sin() * (1.0 + i * i));
        for (j, k) in grid.nodes() {
            let a = field.node_costate(j, k);
            let b = fd_costate(&field, grid.node_state(j, k)).unwrap();
            assert!((a.p - b.p).abs() < 1e-9 && (a.q - b.q).abs() < 1e-9, "({j}, {k})");
        }
    }

    #[test]
    fn central_differences_are_second_order() {
        let f = |s: f64, i: f64| (1.3 * s).sin() + (0.7 * i).exp() * s;
        let grad = |s: f64, i: f64| (1.3 * (1.3 * s).cos() + (0.7 * i).exp(), 0.7 * (0.7 * i).exp() * s);
        let x = State { s: 0.3, i: 0.3 };
        let mut errs = Vec::new();
        for n in [20, 40, 80] {
            let field = synthetic(&TriangularGrid::new(n).unwrap(), f);
            let c = fd_costate(&field, x).unwrap();
            let (gp, gq) = grad(x.s, x.i);
            errs.push((c.p - gp).abs().max((c.q - gq).abs()));
        }
        assert!(errs[1] < errs[0] / 3.0 && errs[2] < errs[1] / 3.0, "{errs:?}");
    }

    #[test]
    fn one_sided_differences_are_first_order() {
        let f = |s: f64, i: f64| (1.3 * s).cos() + (0.7 * i).exp() * s;
        let x = State { s: 0.0, i: 0.5 };
        let exact_p = (0.35f64).exp();
        let mut errs = Vec::new();
        for n in [20, 40, 80] {
            let field = synthetic(&TriangularGrid::new(n).unwrap(), f);
            errs.push((fd_costate(&field, x).unwrap().p - exact_p).abs());
        }
        let r1 = errs[0] / errs[1];
        let r2 = errs[1] / errs[2];
        assert!(r1 > 1.6 && r1 < 2.5 && r2 > 1.6 && r2 < 2.5, "{errs:?}");
    }

    #[test]
    fn zero_infected_edge_stays_at_zero() {
        let params = ModelParams::default();
        let field = solve_value_function(&params, &SolverConfig::default().with_n(16)).unwrap();
        for j in 0..=16 {
            assert_eq!(field.node(j, 0), 0.0);
        }
    }

    #[test]
    fn update_is_monotone_without_analytic_candidate() {
        let params = ModelParams::default();
        let grid = TriangularGrid::new(12).unwrap();
        let scheme = Scheme::new(grid.clone(), params, 0.02, 9, false).unwrap();
        let a: Vec<f64> = (0..grid.node_count()).map(|k| (k as f64 * 0.71).sin().abs()).collect();
        let b: Vec<f64> = a.iter().enumerate().map(|(k, v)| v + 0.1 * ((k % 3) as f64)).collect();
        let mut ua = vec![0.0; a.len()];
        let mut ub = vec![0.0; b.len()];
        scheme.apply(&a, &mut ua);
        scheme.apply(&b, &mut ub);
        assert!(ua.iter().zip(&ub).all(|(x, y)| x <= y));
    }

    #[test]
    fn update_contracts_in_sup_norm() {
        let params = ModelParams::default();
        let grid = TriangularGrid::new(12).unwrap();
        let scheme = Scheme::new(grid.clone(), params, 0.02, 9, false).unwrap();
        let a: Vec<f64> = (0..grid.node_count()).map(|k| (k as f64 * 0.37).cos()).collect();
        let b: Vec<f64> = (0..grid.node_count()).map(|k| (k as f64 * 0.53).sin()).collect();
        let mut ua = vec![0.0; a.len()];
        let mut ub = vec![0.0; b.len()];
        scheme.apply(&a, &mut ua);
        scheme.apply(&b, &mut ub);
        let sup = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(sup(&ua, &ub) <= scheme.discount() * sup(&a, &b) + 1e-15);
    }

    #[test]
    fn oversized_dt_is_rejected() {
        let params = ModelParams::default();
        let grid = TriangularGrid::new(10).unwrap();
        assert!(matches!(
            Scheme::new(grid, params, 20.0, 5, true),
            Err(Error::StepSize { .. })
        ));
    }

    #[test]
    fn bellman_update_records_metadata() {
        let params = ModelParams::default();
        let grid = TriangularGrid::new(8).unwrap();
        let field = ValueField::zeros(grid, params, 0.05, 5);
        let (next, res) = bellman_update(&field, &params, 0.05, 5).unwrap();
        assert_eq!(next.iterations, 1);
        assert_eq!(next.residual, res);
        assert!(res > 0.0);
        assert!(next.values.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn non_convergence_is_reported() {
        let params = ModelParams::default();
        let cfg = SolverConfig {
            n: 8,
            max_iter: 3,
            ..Default::default()
        };
        assert!(matches!(
            solve_value_function(&params, &cfg),
            Err(Error::NonConvergence { iterations: 3, .. })
        ));
    }
}
