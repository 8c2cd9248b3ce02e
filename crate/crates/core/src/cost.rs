//! Running cost, the reduced discounted functional `J` and the original
//! expected-output functional `J̃` with the random vaccine arrival.

use crate::dynamics::{march, settle, vector_field, ControlSignal, FullState, State, CLAMP_TOL};
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::quadrature::{composite, gauss_legendre};

/// Inner time step used by the cost quadratures. RK4 at this step is many
/// orders of magnitude below any tolerance we certify.
const COST_DT: f64 = 0.02;

#[inline]
pub fn running_cost(x: State, l: f64, params: &ModelParams) -> f64 {
    (x.s + x.i) * l * params.w + params.death_weight() * x.i * params.phi(x.i)
}

/// `f(s, i, l)`, with domain checks.
pub fn running_cost_f(x: State, l: f64, params: &ModelParams) -> Result<f64> {
    if x.violation() > 0.0 {
        return Err(Error::Domain {
            what: "state",
            detail: format!("({}, {}) is not in the triangle", x.s, x.i),
        });
    }
    params.check_lockdown(l)?;
    Ok(running_cost(x, l, params))
}

/// Discounted cost accumulated over a finite window, and where it ends.
#[derive(Debug, Clone, Copy)]
pub struct WindowCost {
    pub cost: f64,
    pub end: State,
}

/// `∫_0^T e^{-(r+ν)t} f(X_t, L_t) dt` together with `X_T`.
pub fn discounted_cost(
    x0: State,
    control: &ControlSignal,
    horizon: f64,
    dt: f64,
    params: &ModelParams,
) -> Result<WindowCost> {
    control.validate(params)?;
    let x0 = x0.clamped()?;
    let rho = params.rho();
    let mut cap = x0.s + x0.i;
    let mut out = WindowCost { cost: 0.0, end: x0 };
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
            out = WindowCost { cost: y[2], end: x };
            Ok(true)
        },
    )?;
    Ok(out)
}

/// Horizon after which `K_f e^{-(r+ν)T} / (r+ν) <= rel_tol * w / r`.
pub fn truncation_horizon(params: &ModelParams, rel_tol: f64) -> f64 {
    let rho = params.rho();
    let k_f = params.constants().k_f;
    let target = rel_tol * params.w / params.r;
    ((k_f / (rho * target)).ln() / rho).max(COST_DT)
}

/// Infinite-horizon cost `J(L, x0)`, truncated with a certified tail bound.
/// Returns the cost and the truncation time.
pub fn evaluate_j(
    x0: State,
    control: &ControlSignal,
    params: &ModelParams,
    rel_tol: f64,
) -> Result<(f64, f64)> {
    if !(rel_tol > 0.0) {
        return Err(Error::Domain {
            what: "relative tolerance",
            detail: format!("{rel_tol} must be positive"),
        });
    }
    let horizon = truncation_horizon(params, rel_tol);
    let run = discounted_cost(x0, control, horizon, COST_DT.min(horizon), params)?;
    Ok((run.cost, horizon))
}

/// Expected discounted output `J̃(L, x0)` of the four-compartment model with
/// an exponential vaccine arrival time `τ`.
///
/// Conditional on `τ`, the payoff is `G(τ) + e^{-rτ}(1 - D_τ) w / r`, where
/// `G(τ)` integrates the pre-arrival output and the post-arrival population is
/// frozen. The expectation over `τ` uses composite Gauss-Legendre panels
/// split at the control breakpoints, refined until two levels agree.
pub fn evaluate_j_tilde(
    x0: FullState,
    control: &ControlSignal,
    params: &ModelParams,
    rel_tol: f64,
) -> Result<f64> {
    if !(rel_tol > 0.0) {
        return Err(Error::Domain {
            what: "relative tolerance",
            detail: format!("{rel_tol} must be positive"),
        });
    }
    control.validate(params)?;
    let (r, nu, w) = (params.r, params.nu, params.w);
    let scale = w / r;
    let sup_payoff = (w + params.chi * params.gamma) / r;
    let t_max = ((sup_payoff / (0.1 * rel_tol * scale)).ln() / nu).max(1.0);
    let base = gauss_legendre(8);

    let quad = |panels: usize| -> Result<f64> {
        let mut cuts: Vec<f64> = (0..=panels).map(|k| t_max * k as f64 / panels as f64).collect();
        cuts.extend(control.breakpoints().iter().copied().filter(|&b| b > 0.0 && b < t_max));
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let rule = composite(&cuts, &base);
        let mut stops: Vec<f64> = rule.iter().map(|(t, _)| *t).collect();
        stops.push(t_max);
        let payoffs = conditional_payoffs(x0, control, &stops, t_max, params)?;
        let body: f64 = rule
            .iter()
            .zip(&payoffs)
            .map(|((tau, wt), pay)| wt * nu * (-nu * tau).exp() * pay)
            .sum();
        // The payoff barely moves past t_max; its last value closes the tail.
        let tail = (-nu * t_max).exp() * payoffs[payoffs.len() - 1];
        Ok(body + tail)
    };

    let mut panels = 8;
    let mut prev = quad(panels)?;
    for _ in 0..6 {
        panels *= 2;
        let next = quad(panels)?;
        if (next - prev).abs() <= 0.1 * rel_tol * scale {
            return Ok(next);
        }
        prev = next;
    }
    Ok(prev)
}

/// Payoff conditional on `τ = t` for every `t` in `stops` (ascending).
fn conditional_payoffs(
    x0: FullState,
    control: &ControlSignal,
    stops: &[f64],
    horizon: f64,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    let (r, w, chi) = (params.r, params.w, params.chi);
    let mut out = Vec::with_capacity(stops.len());
    let mut next = 0;
    march(
        [x0.s, x0.i, x0.r_frac, x0.d, 0.0],
        control,
        horizon,
        COST_DT,
        stops,
        |t, y, l| {
            let x = State { s: y[0], i: y[1] };
            let (ds, di) = vector_field(x, l, params);
            let deaths = y[1] * params.phi(y[1]);
            let alive = y[0] + y[1] + y[2];
            let output = (alive - (y[0] + y[1]) * l) * w - chi * deaths;
            [ds, di, params.gamma * y[1], deaths, (-r * t).exp() * output]
        },
        |t, y, _| {
            let worst = y[..4].iter().fold(0.0f64, |m, v| m.max(-v));
            if worst > CLAMP_TOL {
                return Err(Error::StepSize { t, violation: worst });
            }
            for v in y[..4].iter_mut() {
                *v = v.max(0.0);
            }
            while next < stops.len() && stops[next] <= t {
                let alive = y[0] + y[1] + y[2];
                out.push(y[4] + (-r * t).exp() * alive * w / r);
                next += 1;
            }
            Ok(true)
        },
    )?;
    if out.len() != stops.len() {
        return Err(Error::Domain {
            what: "quadrature node",
            detail: "outside the integration window".into(),
        });
    }
    Ok(out)
}
