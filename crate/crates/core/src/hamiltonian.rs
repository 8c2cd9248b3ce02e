//! Closed-form Hamiltonian of the lockdown problem.
//!
//! For fixed `(s, i, p, q)` the current-value Hamiltonian is a quadratic in
//! the lockdown level `l` with leading coefficient `βθ²si(q - p)`. Its
//! minimum over `[0, L̄]` is found by locating the vertex
//!
//! ```text
//! l* = 1/θ - w (s + i) / (2θ² (q - p) β s i)
//! ```
//!
//! relative to the interval, which splits `T × R²` into seven regions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::State;
use crate::error::{Error, Result};
use crate::params::ModelParams;

/// Gradient `(∂_s V, ∂_i V)` of the value function, or any test covector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Costate {
    pub p: f64,
    pub q: f64,
}

impl Costate {
    pub fn new(p: f64, q: f64) -> Self {
        Self { p, q }
    }

    /// Marginal cost gap `q - p` between an infected and a susceptible agent.
    #[inline]
    pub fn gap(&self) -> f64 {
        self.q - self.p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    /// No infected.
    CI,
    /// No susceptibles, some infected.
    CS,
    /// Interior, `q = p`.
    A0,
    /// Interior, `q < p`.
    A1,
    /// Interior, `q > p`, pressure at or below the lower threshold.
    A2,
    /// Interior, `q > p`, pressure strictly between the thresholds.
    A3,
    /// Interior, `q > p`, pressure at or above the upper threshold.
    A4,
}

impl Region {
    pub const ALL: [Region; 7] = [
        Region::CI,
        Region::CS,
        Region::A0,
        Region::A1,
        Region::A2,
        Region::A3,
        Region::A4,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Region::CI => "C_I",
            Region::CS => "C_S",
            Region::A0 => "A_0",
            Region::A1 => "A_1",
            Region::A2 => "A_2",
            Region::A3 => "A_3",
            Region::A4 => "A_4",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Region> {
        Region::ALL.into_iter().find(|r| r.tag() == tag)
    }

    /// Position along the lockdown ladder `A_1 < A_0 < A_2 < A_3 < A_4`
    /// traversed as `q - p` grows. `None` on the boundary regions.
    pub fn ladder_rank(&self) -> Option<u8> {
        match self {
            Region::A1 => Some(0),
            Region::A0 => Some(1),
            Region::A2 => Some(2),
            Region::A3 => Some(3),
            Region::A4 => Some(4),
            Region::CI | Region::CS => None,
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Set `Ψ` of minimizing lockdown levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MinimizerSet {
    Singleton(f64),
    /// All of `[0, L̄]`; only at the origin.
    FullInterval,
}

impl MinimizerSet {
    /// A single representative; the full interval resolves to no lockdown.
    pub fn selection(&self) -> f64 {
        match *self {
            MinimizerSet::Singleton(l) => l,
            MinimizerSet::FullInterval => 0.0,
        }
    }

    pub fn contains(&self, l: f64, l_bar: f64) -> bool {
        match *self {
            MinimizerSet::Singleton(v) => v == l,
            MinimizerSet::FullInterval => (0.0..=l_bar).contains(&l),
        }
    }
}

/// Terms of the Hamiltonian that do not depend on the lockdown.
#[inline]
fn uncontrolled(x: State, c: Costate, params: &ModelParams) -> f64 {
    let phi = params.phi(x.i);
    x.i * phi * params.death_weight() - (params.gamma + phi) * x.i * c.q
}

/// Current-value Hamiltonian `H_CV(s, i, p, q, l)`.
#[inline]
pub fn h_cv(x: State, c: Costate, l: f64, params: &ModelParams) -> f64 {
    let damp = 1.0 - params.theta * l;
    (x.s + x.i) * l * params.w
        + params.beta * damp * damp * x.s * x.i * c.gap()
        + uncontrolled(x, c, params)
}

pub fn h_cv_checked(x: State, c: Costate, l: f64, params: &ModelParams) -> Result<f64> {
    if x.violation() > 0.0 {
        return Err(Error::Domain {
            what: "state",
            detail: format!("({}, {}) is not in the triangle", x.s, x.i),
        });
    }
    params.check_lockdown(l)?;
    Ok(h_cv(x, c, l, params))
}

/// Infection pressure `βsi / (s + i)`; zero at the origin.
#[inline]
pub fn pressure(x: State, params: &ModelParams) -> f64 {
    let n = x.s + x.i;
    if n > 0.0 {
        params.beta * x.s * x.i / n
    } else {
        0.0
    }
}

pub fn classify(x: State, c: Costate, params: &ModelParams) -> Region {
    if x.i == 0.0 {
        return Region::CI;
    }
    if x.s == 0.0 {
        return Region::CS;
    }
    let gap = c.gap();
    if gap == 0.0 {
        return Region::A0;
    }
    if gap < 0.0 {
        return Region::A1;
    }
    let load = pressure(x, params);
    let lower = params.w / (2.0 * params.theta * gap);
    let upper = params.w / (2.0 * params.theta * (1.0 - params.theta * params.l_bar) * gap);
    if load <= lower {
        Region::A2
    } else if load >= upper {
        Region::A4
    } else {
        Region::A3
    }
}

/// `H(s, i, p, q) = min_{l ∈ [0, L̄]} H_CV`, evaluated branch by branch.
pub fn hamiltonian_h(x: State, c: Costate, params: &ModelParams) -> f64 {
    hamiltonian_in(x, c, classify(x, c, params), params)
}

/// The closed-form branch of `H` for a known region.
pub fn hamiltonian_in(x: State, c: Costate, region: Region, params: &ModelParams) -> f64 {
    let si = x.s * x.i;
    let n = x.s + x.i;
    let (beta, theta, w) = (params.beta, params.theta, params.w);
    match region {
        Region::CI => 0.0,
        Region::CS | Region::A0 => uncontrolled(x, c, params),
        Region::A1 | Region::A2 => beta * si * c.gap() + uncontrolled(x, c, params),
        Region::A3 => {
            w * w / (4.0 * theta * theta * (c.p - c.q)) * n * n / (beta * si)
                + w / theta * n
                + uncontrolled(x, c, params)
        }
        Region::A4 => {
            let damp = theta * params.l_bar - 1.0;
            beta * si * damp * damp * c.gap() + w * params.l_bar * n + uncontrolled(x, c, params)
        }
    }
}

/// Vertex of the parabola `l ↦ H_CV`; meaningful for `q ≠ p` in the interior.
#[inline]
pub fn vertex(x: State, c: Costate, params: &ModelParams) -> f64 {
    let theta = params.theta;
    1.0 / theta - params.w * (x.s + x.i) / (2.0 * theta * theta * c.gap() * params.beta * x.s * x.i)
}

pub fn psi(x: State, c: Costate, params: &ModelParams) -> MinimizerSet {
    if x.s == 0.0 && x.i == 0.0 {
        return MinimizerSet::FullInterval;
    }
    match classify(x, c, params) {
        // Rounding can nudge the vertex onto the closed interval ends.
        Region::A3 => MinimizerSet::Singleton(vertex(x, c, params).clamp(0.0, params.l_bar)),
        Region::A4 => MinimizerSet::Singleton(params.l_bar),
        _ => MinimizerSet::Singleton(0.0),
    }
}
