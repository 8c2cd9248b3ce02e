//! Feedback lockdown synthesized from a solved value field.
//!
//! The costate is read off the field by finite differences and the control
//! is the minimizer `Ψ` of the Hamiltonian at that costate. Closed-loop runs
//! are sampled-data: the control is frozen over each integration step.

use crate::cost::running_cost;
use crate::dynamics::{march, rk4_step, settle, vector_field, ControlSignal, State};
use crate::error::{Error, Result};
use crate::hamiltonian::{classify, pressure, psi, Costate, Region};
use crate::hjb::{fd_costate, ValueField};
use crate::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feedback {
    pub l: f64,
    pub region: Region,
    pub costate: Costate,
}

/// Lockdown levels `K1 < K2` on the infection pressure `βsi / (s + i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub k1: f64,
    pub k2: f64,
    pub pressure: f64,
}

impl Thresholds {
    /// Region implied by the thresholds alone (valid when `q > p`).
    pub fn region(&self) -> Region {
        if self.k1 <= 0.0 {
            Region::A1
        } else if self.pressure <= self.k1 {
            Region::A2
        } else if self.pressure >= self.k2 {
            Region::A4
        } else {
            Region::A3
        }
    }
}

pub fn feedback_law(field: &ValueField, x: State, params: &ModelParams) -> Result<Feedback> {
    let costate = fd_costate(field, x)?;
    let x = x.clamped()?;
    Ok(Feedback {
        l: psi(x, costate, params).selection(),
        region: classify(x, costate, params),
        costate,
    })
}

pub fn thresholds_k(x: State, c: Costate, params: &ModelParams) -> Result<Thresholds> {
    let gap = c.gap();
    if gap == 0.0 {
        return Err(Error::UndefinedThreshold);
    }
    let k1 = params.w / (2.0 * params.theta * gap);
    Ok(Thresholds {
        k1,
        k2: k1 / (1.0 - params.theta * params.l_bar),
        pressure: pressure(x, params),
    })
}

/// Per-instant record of a closed-loop run.
#[derive(Debug, Clone)]
pub struct PolicyReport {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub applied_l: Vec<f64>,
    pub region_tags: Vec<Region>,
    pub costates: Vec<Costate>,
    /// `None` where the thresholds are undefined (`q = p`, `s = 0` or `i = 0`).
    pub thresholds: Vec<Option<Thresholds>>,
    pub running_costs: Vec<f64>,
    /// `∫_0^t e^{-(r+ν)u} f du` at each instant.
    pub accumulated: Vec<f64>,
    /// Discounted cost over the horizon.
    pub cost: f64,
    /// Bound on the discounted cost beyond the horizon.
    pub tail_bound: f64,
    /// Deaths `∫ i φ(i) dt` over the horizon.
    pub deaths: f64,
}

impl PolicyReport {
    pub fn peak_infected(&self) -> f64 {
        self.states.iter().map(|x| x.i).fold(0.0, f64::max)
    }

    /// `g(t) = ∫_0^t e^{-(r+ν)u} f du + e^{-(r+ν)t} V(X_t)` at each instant.
    pub fn value_process(&self, field: &ValueField) -> Result<Vec<f64>> {
        let rho = field.params.rho();
        self.times
            .iter()
            .zip(&self.states)
            .zip(&self.accumulated)
            .map(|((t, x), acc)| Ok(acc + (-rho * t).exp() * field.interpolate(*x)?))
            .collect()
    }
}

pub fn simulate_closed_loop(
    field: &ValueField,
    x0: State,
    horizon: f64,
    dt: f64,
    params: &ModelParams,
) -> Result<PolicyReport> {
    if !(dt > 0.0) || !(horizon > 0.0) {
        return Err(Error::Domain {
            what: "closed-loop window",
            detail: format!("horizon {horizon} and dt {dt} must be positive"),
        });
    }
    let rho = params.rho();
    let steps = (horizon / dt).ceil() as usize;
    let mut x = x0.clamped()?;
    let mut report = PolicyReport {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        applied_l: Vec::with_capacity(steps + 1),
        region_tags: Vec::with_capacity(steps + 1),
        costates: Vec::with_capacity(steps + 1),
        thresholds: Vec::with_capacity(steps + 1),
        running_costs: Vec::with_capacity(steps + 1),
        accumulated: Vec::with_capacity(steps + 1),
        cost: 0.0,
        tail_bound: params.constants().k_f * (-rho * horizon).exp() / rho,
        deaths: 0.0,
    };
    let (mut acc, mut deaths) = (0.0, 0.0);
    for step in 0..=steps {
        let t = (step as f64 * dt).min(horizon);
        let fb = feedback_law(field, x, params)?;
        report.times.push(t);
        report.states.push(x);
        report.applied_l.push(fb.l);
        report.region_tags.push(fb.region);
        report.costates.push(fb.costate);
        report.thresholds.push(if x.s > 0.0 && x.i > 0.0 {
            thresholds_k(x, fb.costate, params).ok()
        } else {
            None
        });
        report.running_costs.push(running_cost(x, fb.l, params));
        report.accumulated.push(acc);
        if step == steps {
            break;
        }
        let h = ((step + 1) as f64 * dt).min(horizon) - t;
        let l = fb.l;
        let y = rk4_step(
            &[x.s, x.i, acc, deaths],
            h,
            |tt, y| {
                let xs = State { s: y[0], i: y[1] };
                let (ds, di) = vector_field(xs, l, params);
                [
                    ds,
                    di,
                    (-rho * tt).exp() * running_cost(xs, l, params),
                    y[1] * params.phi(y[1]),
                ]
            },
            t,
        );
        x = settle(State { s: y[0], i: y[1] }, t + h, x.s + x.i)?;
        acc = y[2];
        deaths = y[3];
    }
    report.cost = acc;
    report.deaths = deaths;
    Ok(report)
}

/// Samples of `g(t)` along an open-loop control, one per integration step.
pub fn open_loop_value_process(
    field: &ValueField,
    x0: State,
    control: &ControlSignal,
    horizon: f64,
    dt: f64,
    params: &ModelParams,
) -> Result<Vec<(f64, f64)>> {
    control.validate(params)?;
    let x0 = x0.clamped()?;
    let rho = params.rho();
    let mut cap = x0.s + x0.i;
    let mut out = Vec::with_capacity((horizon / dt).ceil() as usize + 2);
    out.push((0.0, field.interpolate(x0)?));
    march(
        [x0.s, x0.i, 0.0],
        control,
        horizon,
        dt,
        &[],
        |t, y, l| {
            let x = State { s: y[0], i: y[1] };
            let (ds, di) = vector_field(x, l, params);
            [ds, di, (-rho * t).exp() * running_cost(x, l, params)]
        },
        |t, y, _| {
            let x = settle(State { s: y[0], i: y[1] }, t, cap)?;
            cap = x.s + x.i;
            y[0] = x.s;
            y[1] = x.i;
            out.push((t, y[2] + (-rho * t).exp() * field.interpolate(x)?));
            Ok(true)
        },
    )?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TriangularGrid;
    use crate::hamiltonian::hamiltonian_h;

    fn affine_field(p: f64, q: f64) -> ValueField {
        let grid = TriangularGrid::new(20).unwrap();
        let params = ModelParams::default();
        let mut field = ValueField::zeros(grid.clone(), params, 0.01, 5);
        for (idx, (j, k)) in grid.nodes().enumerate() {
            let x = grid.node_state(j, k);
            field.values[idx] = 1.0 + p * x.s + q * x.i;
        }
        field
    }

    #[test]
    fn boundary_states_get_no_lockdown() {
        let params = ModelParams::default();
        let field = affine_field(0.0, 50.0);
        let fb = feedback_law(&field, State { s: 0.6, i: 0.0 }, &params).unwrap();
        assert_eq!((fb.l, fb.region), (0.0, Region::CI));
        let fb = feedback_law(&field, State { s: 0.0, i: 0.6 }, &params).unwrap();
        assert_eq!((fb.l, fb.region), (0.0, Region::CS));
    }

    #[test]
    fn steep_infected_cost_triggers_full_lockdown() {
        let params = ModelParams::default();
        let x = State { s: 0.5, i: 0.4 };
        let load = pressure(x, &params);
        let q = 2.0 * params.w / (2.0 * params.theta * (1.0 - params.theta * params.l_bar) * load);
        let field = affine_field(0.0, q);
        let fb = feedback_law(&field, x, &params).unwrap();
        assert_eq!(fb.region, Region::A4);
        assert_eq!(fb.l, params.l_bar);
    }

    #[test]
    fn threshold_ratio_and_errors() {
        let params = ModelParams::default();
        let x = State { s: 0.4, i: 0.2 };
        let th = thresholds_k(x, Costate::new(0.1, 0.9), &params).unwrap();
        assert!((th.k2 / th.k1 - 1.0 / (1.0 - params.theta * params.l_bar)).abs() < 1e-12);
        assert!(th.k2 > th.k1);
        let th = thresholds_k(x, Costate::new(0.9, 0.1), &params).unwrap();
        assert!(th.k1 < 0.0 && th.k2 < 0.0);
        assert_eq!(th.region(), Region::A1);
        assert!(matches!(
            thresholds_k(x, Costate::new(0.4, 0.4), &params),
            Err(Error::UndefinedThreshold)
        ));
    }

    #[test]
    fn closed_loop_without_epidemic_is_free() {
        let params = ModelParams::default();
        let field = affine_field(0.3, 2.0);
        let rep = simulate_closed_loop(&field, State { s: 0.7, i: 0.0 }, 5.0, 0.1, &params).unwrap();
        assert!(rep.applied_l.iter().all(|l| *l == 0.0));
        assert!(rep.states.iter().all(|x| *x == State { s: 0.7, i: 0.0 }));
        assert_eq!(rep.cost, 0.0);
        assert_eq!(rep.times.len(), 51);
    }

    #[test]
    fn applied_control_attains_hamiltonian() {
        let params = ModelParams::default();
        let field = affine_field(-1.0, 6.0);
        let rep = simulate_closed_loop(&field, State { s: 0.8, i: 0.15 }, 10.0, 0.05, &params).unwrap();
        for ((x, c), l) in rep.states.iter().zip(&rep.costates).zip(&rep.applied_l) {
            let h = hamiltonian_h(*x, *c, &params);
            let at = crate::hamiltonian::h_cv(*x, *c, *l, &params);
            assert!((at - h).abs() < 1e-10);
        }
    }
}
