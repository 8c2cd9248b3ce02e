//! Optimal lockdown on a controlled SIRD epidemic with a random vaccine
//! arrival time.
//!
//! The state is the susceptible and infected fractions `(s, i)` on the
//! triangle `s, i >= 0, s + i <= 1`. A planner picks a lockdown level
//! `l in [0, L̄]` to minimize discounted lost output plus a death penalty.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod hamiltonian;
pub mod hjb;
pub mod io;
pub mod params;
pub mod policy;
mod quadrature;
pub mod verify;

pub use dynamics::{ControlSignal, FullState, State, Trajectory};
pub use error::{Error, Result};
pub use hamiltonian::{Costate, Region};
pub use hjb::{solve_value_function, SolverConfig, ValueField};
pub use params::{ModelParams, MortalityCurve};
