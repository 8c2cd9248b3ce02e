//! Controlled SIRD vector field and its forward/backward integrators.
//!
//! The reduced state `(s, i)` lives in the triangle `s, i >= 0, s + i <= 1`.
//! Controls are piecewise constant; every integrator splits its steps at the
//! control breakpoints so that the classical fourth-order Runge-Kutta step
//! only ever sees a smooth right-hand side.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;

/// States may overshoot the invariant set by this much through rounding;
/// anything beyond is reported as a step-size error.
pub const CLAMP_TOL: f64 = 1e-10;

/// Exit threshold for backward runs. Backward trajectories are not forward
/// invariant, so only floating-point noise is tolerated.
pub const BACKWARD_EXIT_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub s: f64,
    pub i: f64,
}

impl State {
    pub fn new(s: f64, i: f64) -> Result<Self> {
        let x = State { s, i };
        if x.violation() > 0.0 || !s.is_finite() || !i.is_finite() {
            return Err(Error::Domain {
                what: "state",
                detail: format!("({s}, {i}) is not in the triangle"),
            });
        }
        Ok(x)
    }

    /// Distance by which the point sits outside the triangle (0 inside).
    #[inline]
    pub fn violation(&self) -> f64 {
        (-self.s).max(-self.i).max(self.s + self.i - 1.0).max(0.0)
    }

    pub fn is_interior(&self) -> bool {
        self.s > 0.0 && self.i > 0.0 && self.s + self.i < 1.0
    }

    pub fn norm_to(&self, other: &State) -> f64 {
        (self.s - other.s).hypot(self.i - other.i)
    }

    /// Accept points within [`CLAMP_TOL`] of the triangle and project them on it.
    pub fn clamped(self) -> Result<Self> {
        let v = self.violation();
        if v > CLAMP_TOL || !v.is_finite() {
            return Err(Error::Domain {
                what: "state",
                detail: format!("({}, {}) is outside the triangle by {v:e}", self.s, self.i),
            });
        }
        Ok(self.project())
    }

    fn project(self) -> Self {
        let mut s = self.s.max(0.0);
        let mut i = self.i.max(0.0);
        let excess = s + i - 1.0;
        if excess > 0.0 {
            if s >= excess {
                s -= excess;
            } else {
                i -= excess;
            }
        }
        State { s, i }
    }
}

/// Point of the four-compartment simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullState {
    pub s: f64,
    pub i: f64,
    pub r_frac: f64,
    pub d: f64,
}

impl FullState {
    pub fn new(s: f64, i: f64, r_frac: f64, d: f64) -> Result<Self> {
        let x = FullState { s, i, r_frac, d };
        let neg = [s, i, r_frac, d].iter().any(|v| !(*v >= 0.0));
        if neg || (x.total() - 1.0).abs() > 1e-12 {
            return Err(Error::Domain {
                what: "full state",
                detail: format!("({s}, {i}, {r_frac}, {d}) is not on the simplex"),
            });
        }
        Ok(x)
    }

    /// Completes `(s, i, r)` with `d = 1 - s - i - r`.
    pub fn from_sir(s: f64, i: f64, r_frac: f64) -> Result<Self> {
        Self::new(s, i, r_frac, (1.0 - s - i - r_frac).max(0.0))
    }

    pub fn total(&self) -> f64 {
        self.s + self.i + self.r_frac + self.d
    }

    pub fn reduced(&self) -> State {
        State { s: self.s, i: self.i }
    }

    fn as_array(&self) -> [f64; 4] {
        [self.s, self.i, self.r_frac, self.d]
    }
}

/// Piecewise-constant lockdown path on right-open intervals
/// `[breakpoints[k], breakpoints[k + 1])`, the last one unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl ControlSignal {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>, l_bar: f64) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return Err(Error::Control(format!(
                "{} breakpoints for {} values",
                breakpoints.len(),
                values.len()
            )));
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::Control("first breakpoint must be 0".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::Control("breakpoints must be strictly increasing".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=l_bar).contains(*v)) {
            return Err(Error::Control(format!("level {v} not in [0, {l_bar}]")));
        }
        Ok(Self { breakpoints, values })
    }

    pub fn constant(level: f64) -> Self {
        Self {
            breakpoints: vec![0.0],
            values: vec![level],
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        match self.values.iter().find(|v| !(0.0..=params.l_bar).contains(*v)) {
            Some(v) => Err(Error::Control(format!("level {v} not in [0, {}]", params.l_bar))),
            None => Ok(()),
        }
    }

    fn segment(&self, t: f64) -> usize {
        self.breakpoints.partition_point(|&b| b <= t).saturating_sub(1)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.values[self.segment(t)]
    }

    /// First breakpoint strictly after `t`, if any.
    pub fn next_breakpoint(&self, t: f64) -> Option<f64> {
        let k = self.breakpoints.partition_point(|&b| b <= t);
        self.breakpoints.get(k).copied()
    }

    /// Exact value of `∫_0^t |L_u - other_u| du`.
    pub fn l1_distance(&self, other: &ControlSignal, t: f64) -> f64 {
        let mut cuts: Vec<f64> = self
            .breakpoints
            .iter()
            .chain(other.breakpoints.iter())
            .copied()
            .filter(|&b| b < t)
            .collect();
        cuts.push(t);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts.windows(2)
            .map(|w| (w[1] - w[0]) * (self.eval(w[0]) - other.eval(w[0])).abs())
            .sum()
    }

    /// The control `u -> self(horizon - u)` on `[0, horizon)`, with each
    /// constant piece kept intact.
    pub fn reflected(&self, horizon: f64) -> ControlSignal {
        let mut ends: Vec<f64> = self
            .breakpoints
            .iter()
            .copied()
            .filter(|&b| b > 0.0 && b < horizon)
            .collect();
        ends.push(horizon);
        let mut breakpoints = Vec::with_capacity(ends.len());
        let mut values = Vec::with_capacity(ends.len());
        let mut start = 0.0;
        let mut pieces = Vec::with_capacity(ends.len());
        for end in ends {
            pieces.push((horizon - end, self.eval(start)));
            start = end;
        }
        for (b, v) in pieces.into_iter().rev() {
            breakpoints.push(b);
            values.push(v);
        }
        breakpoints[0] = 0.0;
        ControlSignal { breakpoints, values }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<X> {
    pub times: Vec<f64>,
    pub states: Vec<X>,
    pub control_values: Vec<f64>,
}

impl<X> Trajectory<X> {
    fn with_capacity(n: usize) -> Self {
        Self {
            times: Vec::with_capacity(n),
            states: Vec::with_capacity(n),
            control_values: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, t: f64, x: X, l: f64) {
        self.times.push(t);
        self.states.push(x);
        self.control_values.push(l);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&X> {
        self.states.last()
    }
}

/// `b(s, i, l)`, the reduced vector field.
#[inline]
pub fn vector_field(x: State, l: f64, params: &ModelParams) -> (f64, f64) {
    let damp = 1.0 - params.theta * l;
    let infection = params.beta * x.s * x.i * damp * damp;
    let removal = (params.gamma + params.phi(x.i)) * x.i;
    (-infection, infection - removal)
}

/// Checked version of [`vector_field`].
pub fn vector_field_b(x: State, l: f64, params: &ModelParams) -> Result<(f64, f64)> {
    if x.violation() > 0.0 {
        return Err(Error::Domain {
            what: "state",
            detail: format!("({}, {}) is not in the triangle", x.s, x.i),
        });
    }
    params.check_lockdown(l)?;
    Ok(vector_field(x, l, params))
}

#[inline]
fn full_field(y: &[f64; 4], l: f64, params: &ModelParams) -> [f64; 4] {
    let (ds, di) = vector_field(State { s: y[0], i: y[1] }, l, params);
    [ds, di, params.gamma * y[1], y[1] * params.phi(y[1])]
}

#[inline]
pub(crate) fn rk4_step<const N: usize>(
    y: &[f64; N],
    h: f64,
    rhs: impl Fn(f64, &[f64; N]) -> [f64; N],
    t: f64,
) -> [f64; N] {
    let axpy = |a: &[f64; N], k: &[f64; N], c: f64| {
        let mut o = *a;
        for (o, k) in o.iter_mut().zip(k) {
            *o += c * k;
        }
        o
    };
    let k1 = rhs(t, y);
    let k2 = rhs(t + 0.5 * h, &axpy(y, &k1, 0.5 * h));
    let k3 = rhs(t + 0.5 * h, &axpy(y, &k2, 0.5 * h));
    let k4 = rhs(t + h, &axpy(y, &k3, h));
    let mut out = *y;
    for n in 0..N {
        out[n] += h / 6.0 * (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n]);
    }
    out
}

/// Drives an RK4 march over `[0, horizon]` with the control frozen on each
/// step. Steps are split at control breakpoints and at every time in `stops`
/// (sorted). `after_step` may project the state and returns `false` to halt.
pub(crate) fn march<const N: usize>(
    y0: [f64; N],
    control: &ControlSignal,
    horizon: f64,
    dt: f64,
    stops: &[f64],
    rhs: impl Fn(f64, &[f64; N], f64) -> [f64; N],
    mut after_step: impl FnMut(f64, &mut [f64; N], f64) -> Result<bool>,
) -> Result<()> {
    let mut y = y0;
    let mut t = 0.0;
    let mut stop_idx = stops.partition_point(|&s| s <= 0.0);
    if !after_step(0.0, &mut y, control.eval(0.0))? {
        return Ok(());
    }
    while t < horizon {
        let mut t_next = (t + dt).min(horizon);
        if let Some(b) = control.next_breakpoint(t) {
            t_next = t_next.min(b);
        }
        while stop_idx < stops.len() && stops[stop_idx] <= t {
            stop_idx += 1;
        }
        if let Some(&s) = stops.get(stop_idx) {
            t_next = t_next.min(s);
        }
        // Absorb slivers left by floating-point accumulation.
        if horizon - t_next < 1e-12 * horizon.max(1.0) {
            t_next = horizon;
        }
        let l = control.eval(t);
        let h = t_next - t;
        y = rk4_step(&y, h, |tt, yy| rhs(tt, yy, l), t);
        t = t_next;
        if !after_step(t, &mut y, control.eval(t))? {
            break;
        }
    }
    Ok(())
}

fn check_dt(horizon: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain {
            what: "time step",
            detail: format!("dt = {dt} must be positive"),
        });
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Domain {
            what: "horizon",
            detail: format!("{horizon} must be positive"),
        });
    }
    Ok(())
}

/// Clamps `x` onto the triangle, refusing violations above [`CLAMP_TOL`], and
/// keeps `s + i` from creeping above `cap`.
pub(crate) fn settle(x: State, t: f64, cap: f64) -> Result<State> {
    let v = x.violation();
    if v > CLAMP_TOL || !v.is_finite() {
        return Err(Error::StepSize { t, violation: v });
    }
    let mut x = x.project();
    let excess = x.s + x.i - cap;
    if excess > 0.0 {
        if x.s >= excess {
            x.s -= excess;
        } else {
            x.i = (x.i - excess).max(0.0);
        }
    }
    Ok(x)
}

pub fn integrate_forward(
    x0: State,
    control: &ControlSignal,
    horizon: f64,
    dt: f64,
    params: &ModelParams,
) -> Result<Trajectory<State>> {
    check_dt(horizon, dt)?;
    control.validate(params)?;
    let x0 = x0.clamped()?;
    let mut traj = Trajectory::with_capacity((horizon / dt).ceil() as usize + 2);
    let mut cap = x0.s + x0.i;
    march(
        [x0.s, x0.i],
        control,
        horizon,
        dt,
        &[],
        |_, y, l| {
            let (ds, di) = vector_field(State { s: y[0], i: y[1] }, l, params);
            [ds, di]
        },
        |t, y, l| {
            let x = settle(State { s: y[0], i: y[1] }, t, cap)?;
            cap = x.s + x.i;
            *y = [x.s, x.i];
            traj.push(t, x, l);
            Ok(true)
        },
    )?;
    Ok(traj)
}

pub fn integrate_full(
    x0: FullState,
    control: &ControlSignal,
    horizon: f64,
    dt: f64,
    params: &ModelParams,
) -> Result<Trajectory<FullState>> {
    check_dt(horizon, dt)?;
    control.validate(params)?;
    let mut traj = Trajectory::with_capacity((horizon / dt).ceil() as usize + 2);
    march(
        x0.as_array(),
        control,
        horizon,
        dt,
        &[],
        |_, y, l| full_field(y, l, params),
        |t, y, l| {
            let worst = y.iter().fold(0.0f64, |m, v| m.max(-v));
            if worst > CLAMP_TOL || !worst.is_finite() {
                return Err(Error::StepSize { t, violation: worst });
            }
            for v in y.iter_mut() {
                *v = v.max(0.0);
            }
            traj.push(
                t,
                FullState {
                    s: y[0],
                    i: y[1],
                    r_frac: y[2],
                    d: y[3],
                },
                l,
            );
            Ok(true)
        },
    )?;
    Ok(traj)
}

/// Result of a backward run. `times` in the trajectory are the elapsed
/// backward durations `u`, i.e. the state at physical time `-u`.
#[derive(Debug, Clone)]
pub struct BackwardRun {
    pub trajectory: Trajectory<State>,
    pub admissible: bool,
}

/// Integrates `Y' = b(Y, L)` backward from `y0` over `(-duration, 0]`.
/// `control` is indexed by elapsed backward time: it holds `L_{-u}` at `u`.
pub fn integrate_backward(
    y0: State,
    control: &ControlSignal,
    duration: f64,
    dt: f64,
    params: &ModelParams,
) -> Result<BackwardRun> {
    check_dt(duration, dt)?;
    control.validate(params)?;
    let y0 = y0.clamped()?;
    let mut traj = Trajectory::with_capacity((duration / dt).ceil() as usize + 2);
    let mut admissible = true;
    let mut last = (0.0, y0);
    let rev = |y: &[f64; 2], l: f64| {
        let (ds, di) = vector_field(State { s: y[0], i: y[1] }, l, params);
        [-ds, -di]
    };
    march(
        [y0.s, y0.i],
        control,
        duration,
        dt,
        &[],
        |_, y, l| rev(y, l),
        |u, y, l| {
            let x = State { s: y[0], i: y[1] };
            if x.violation() > BACKWARD_EXIT_TOL || !x.violation().is_finite() {
                // Bisect the last step for the exit time.
                let (u0, x0) = last;
                let l0 = control.eval(u0);
                let (mut lo, mut hi) = (0.0, u - u0);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    let y = rk4_step(&[x0.s, x0.i], mid, |_, yy| rev(yy, l0), u0);
                    if (State { s: y[0], i: y[1] }).violation() > BACKWARD_EXIT_TOL {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                if lo > 0.0 {
                    let y = rk4_step(&[x0.s, x0.i], lo, |_, yy| rev(yy, l0), u0);
                    traj.push(u0 + lo, State { s: y[0], i: y[1] }.project(), l0);
                }
                admissible = false;
                return Ok(false);
            }
            let x = x.project();
            *y = [x.s, x.i];
            last = (u, x);
            traj.push(u, x, l);
            Ok(true)
        },
    )?;
    Ok(BackwardRun {
        trajectory: traj,
        admissible,
    })
}

/// States of the forward flow at the given ascending `times` (all in
/// `(0, horizon]`), integrated with steps no larger than `dt`.
pub fn sample_forward(
    x0: State,
    control: &ControlSignal,
    times: &[f64],
    dt: f64,
    params: &ModelParams,
) -> Result<Vec<State>> {
    let horizon = times.last().copied().unwrap_or(0.0);
    check_dt(horizon, dt)?;
    control.validate(params)?;
    let x0 = x0.clamped()?;
    let mut out = Vec::with_capacity(times.len());
    let mut next = 0;
    let mut cap = x0.s + x0.i;
    march(
        [x0.s, x0.i],
        control,
        horizon,
        dt,
        times,
        |_, y, l| {
            let (ds, di) = vector_field(State { s: y[0], i: y[1] }, l, params);
            [ds, di]
        },
        |t, y, _| {
            let x = settle(State { s: y[0], i: y[1] }, t, cap)?;
            cap = x.s + x.i;
            *y = [x.s, x.i];
            while next < times.len() && times[next] <= t {
                out.push(x);
                next += 1;
            }
            Ok(true)
        },
    )?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::MortalityCurve;

    fn p(beta: f64, gamma: f64, theta: f64, phi0: f64) -> ModelParams {
        ModelParams {
            beta,
            gamma,
            theta,
            l_bar: 1.0,
            phi: MortalityCurve::Constant { phi0 },
            ..Default::default()
        }
    }

    #[test]
    fn field_vanishes_without_infected() {
        let params = ModelParams::default();
        for l in [0.0, 0.3, params.l_bar] {
            assert_eq!(vector_field(State { s: 0.7, i: 0.0 }, l, &params), (-0.0, 0.0));
        }
    }

    #[test]
    fn field_hand_values() {
        let params = p(0.3, 0.1, 0.5, 0.05);
        let (ds, di) = vector_field_b(State { s: 0.5, i: 0.5 }, 0.0, &params).unwrap();
        // 0.3 * 0.25 = 0.075; removal (0.1 + 0.05) * 0.5 = 0.075
        assert!((ds + 0.075).abs() < 1e-15);
        assert!(di.abs() < 1e-15);
        let (ds, di) = vector_field_b(State { s: 0.5, i: 0.5 }, 1.0, &params).unwrap();
        assert!((ds + 0.01875).abs() < 1e-15);
        assert!((di + 0.05625).abs() < 1e-15);
    }

    #[test]
    fn field_domain_errors() {
        let params = ModelParams::default();
        assert!(vector_field_b(State { s: 0.8, i: 0.3 }, 0.0, &params).is_err());
        assert!(vector_field_b(State { s: 0.3, i: 0.3 }, 0.9, &params).is_err());
    }

    #[test]
    fn control_segments_are_right_open() {
        let c = ControlSignal::new(vec![0.0, 1.0, 2.5], vec![0.1, 0.5, 0.2], 0.7).unwrap();
        assert_eq!(c.eval(0.0), 0.1);
        assert_eq!(c.eval(0.999), 0.1);
        assert_eq!(c.eval(1.0), 0.5);
        assert_eq!(c.eval(7.0), 0.2);
        assert_eq!(c.next_breakpoint(1.0), Some(2.5));
        assert_eq!(c.next_breakpoint(3.0), None);
        assert!(ControlSignal::new(vec![0.0, 1.0], vec![0.1, 0.9], 0.7).is_err());
        assert!(ControlSignal::new(vec![0.0, 0.0], vec![0.1, 0.1], 0.7).is_err());
        assert!(ControlSignal::new(vec![0.5], vec![0.1], 0.7).is_err());
    }

    #[test]
    fn l1_distance_exact() {
        let a = ControlSignal::new(vec![0.0, 1.0], vec![0.2, 0.6], 0.7).unwrap();
        let b = ControlSignal::constant(0.4);
        // 1 * 0.2 + 2 * 0.2
        assert!((a.l1_distance(&b, 3.0) - 0.6).abs() < 1e-14);
        assert!((a.l1_distance(&b, 0.5) - 0.1).abs() < 1e-14);
    }

    #[test]
    fn reflection_reverses_segments() {
        let c = ControlSignal::new(vec![0.0, 1.0, 3.0], vec![0.1, 0.5, 0.2], 0.7).unwrap();
        let r = c.reflected(4.0);
        // Segments [0,1) 0.1, [1,3) 0.5, [3,4) 0.2 -> [0,1) 0.2, [1,3) 0.5, [3,4) 0.1
        assert_eq!(r.breakpoints(), &[0.0, 1.0, 3.0]);
        assert_eq!(r.values(), &[0.2, 0.5, 0.1]);
    }

    #[test]
    fn no_infected_is_stationary() {
        let params = ModelParams::default();
        let c = ControlSignal::new(vec![0.0, 2.0], vec![0.3, 0.6], 0.7).unwrap();
        let traj = integrate_forward(State { s: 0.4, i: 0.0 }, &c, 10.0, 0.1, &params).unwrap();
        assert!(traj.states.iter().all(|x| *x == State { s: 0.4, i: 0.0 }));
    }

    #[test]
    fn no_susceptible_ignores_control() {
        let params = ModelParams::default();
        let a = integrate_forward(State { s: 0.0, i: 0.6 }, &ControlSignal::constant(0.0), 20.0, 0.05, &params)
            .unwrap();
        let c = ControlSignal::new(vec![0.0, 3.0], vec![0.7, 0.1], 0.7).unwrap();
        let b = integrate_forward(State { s: 0.0, i: 0.6 }, &c, 20.0, 0.05, &params).unwrap();
        assert!(b.states.iter().all(|x| x.s == 0.0));
        let (ea, eb) = (a.last().unwrap(), b.last().unwrap());
        assert!((ea.i - eb.i).abs() < 1e-12);
    }

    #[test]
    fn initial_growth_follows_reproduction_sign() {
        let params = p(0.3, 0.1, 0.5, 0.05);
        let x0 = State { s: 0.6, i: 0.1 };
        let traj = integrate_forward(x0, &ControlSignal::constant(0.0), 1.0, 0.01, &params).unwrap();
        let rising = params.beta * x0.s > params.gamma + params.phi(x0.i);
        assert!(rising);
        assert!(traj.states[1].i > x0.i);

        let x0 = State { s: 0.3, i: 0.1 };
        let traj = integrate_forward(x0, &ControlSignal::constant(0.0), 1.0, 0.01, &params).unwrap();
        assert!(params.beta * x0.s < params.gamma + params.phi(x0.i));
        assert!(traj.states[1].i < x0.i);
    }

    #[test]
    fn steps_split_at_breakpoints() {
        let params = ModelParams::default();
        let c = ControlSignal::new(vec![0.0, 0.25], vec![0.0, 0.7], 0.7).unwrap();
        let traj = integrate_forward(State { s: 0.9, i: 0.1 }, &c, 1.0, 0.1, &params).unwrap();
        assert!(traj.times.contains(&0.25));
        assert_eq!(*traj.times.last().unwrap(), 1.0);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn full_system_conserves_population() {
        let params = ModelParams {
            phi: MortalityCurve::AffineSaturating {
                phi0: 0.01,
                slope: 0.1,
                cap: 0.05,
            },
            ..Default::default()
        };
        let x0 = FullState::from_sir(0.7, 0.2, 0.05).unwrap();
        let c = ControlSignal::new(vec![0.0, 5.0, 20.0], vec![0.2, 0.7, 0.0], 0.7).unwrap();
        let traj = integrate_full(x0, &c, 80.0, 0.1, &params).unwrap();
        for w in traj.states.windows(2) {
            assert!((w[1].total() - 1.0).abs() < 1e-9);
            assert!(w[1].d >= w[0].d);
        }
    }

    #[test]
    fn full_system_without_infected_is_constant() {
        let params = ModelParams::default();
        let x0 = FullState::new(0.5, 0.0, 0.3, 0.2).unwrap();
        let traj = integrate_full(x0, &ControlSignal::constant(0.4), 10.0, 0.5, &params).unwrap();
        assert!(traj.states.iter().all(|x| *x == x0));
    }

    #[test]
    fn backward_from_top_edge_is_inadmissible() {
        let params = ModelParams::default();
        for (s, i) in [(0.5, 0.5), (0.99, 0.01), (0.0, 1.0)] {
            for l in [0.0, 0.7] {
                let run = integrate_backward(State { s, i }, &ControlSignal::constant(l), 1.0, 0.01, &params)
                    .unwrap();
                assert!(!run.admissible, "({s}, {i}) with l = {l}");
            }
        }
    }

    #[test]
    fn backward_without_infected_is_constant() {
        let params = ModelParams::default();
        let run = integrate_backward(State { s: 0.3, i: 0.0 }, &ControlSignal::constant(0.5), 5.0, 0.1, &params)
            .unwrap();
        assert!(run.admissible);
        assert!(run.trajectory.states.iter().all(|x| *x == State { s: 0.3, i: 0.0 }));
    }

    #[test]
    fn backward_on_s_edge_grows_exponentially_until_exit() {
        let params = ModelParams::default();
        let rate = params.gamma + params.phi(0.0);
        let run = integrate_backward(State { s: 0.0, i: 0.5 }, &ControlSignal::constant(0.3), 5.0, 0.01, &params)
            .unwrap();
        assert!(run.admissible);
        for (u, x) in run.trajectory.times.iter().zip(&run.trajectory.states) {
            assert_eq!(x.s, 0.0);
            assert!((x.i - 0.5 * (rate * u).exp()).abs() < 1e-10);
        }
        // Exit once i reaches 1, at u = ln 2 / rate.
        let exit = std::f64::consts::LN_2 / rate;
        let run = integrate_backward(State { s: 0.0, i: 0.5 }, &ControlSignal::constant(0.3), 2.0 * exit, 0.01, &params)
            .unwrap();
        assert!(!run.admissible);
        let u_end = *run.trajectory.times.last().unwrap();
        assert!((u_end - exit).abs() < 1e-8, "{u_end} vs {exit}");
    }

    #[test]
    fn backward_then_forward_returns_home() {
        let params = ModelParams::default();
        let y0 = State { s: 0.5, i: 0.2 };
        let c = ControlSignal::new(vec![0.0, 1.5, 2.5], vec![0.6, 0.1, 0.35], 0.7).unwrap();
        let duration = 4.0;
        let run = integrate_backward(y0, &c, duration, 0.01, &params).unwrap();
        assert!(run.admissible);
        let start = *run.trajectory.last().unwrap();
        let fwd = integrate_forward(start, &c.reflected(duration), duration, 0.01, &params).unwrap();
        assert!(fwd.last().unwrap().norm_to(&y0) < 1e-6);
    }

    #[test]
    fn oversized_step_is_reported() {
        let params = ModelParams {
            beta: 5.0,
            ..Default::default()
        };
        let err = integrate_forward(State { s: 0.5, i: 0.5 }, &ControlSignal::constant(0.0), 10.0, 3.0, &params);
        assert!(matches!(err, Err(Error::StepSize { .. })));
    }
}
