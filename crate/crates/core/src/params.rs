//! Model parameters and the mortality curve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Death rate of infected agents as a function of the infected fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MortalityCurve {
    Constant { phi0: f64 },
    /// `min(phi0 + slope * i, cap)`.
    AffineSaturating { phi0: f64, slope: f64, cap: f64 },
}

impl MortalityCurve {
    #[inline]
    pub fn eval(&self, i: f64) -> f64 {
        match *self {
            MortalityCurve::Constant { phi0 } => phi0,
            MortalityCurve::AffineSaturating { phi0, slope, cap } => (phi0 + slope * i).min(cap),
        }
    }

    /// Lipschitz constant on `[0, 1]`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            MortalityCurve::Constant { .. } => 0.0,
            MortalityCurve::AffineSaturating { slope, .. } => slope,
        }
    }

    pub fn validate(&self, gamma: f64) -> Result<()> {
        match *self {
            MortalityCurve::Constant { phi0 } => {
                positive("phi0", phi0)?;
                if phi0 > gamma {
                    return Err(Error::InvalidParam {
                        name: "phi0",
                        value: phi0,
                        reason: "mortality must not exceed gamma",
                    });
                }
            }
            MortalityCurve::AffineSaturating { phi0, slope, cap } => {
                positive("phi0", phi0)?;
                positive("cap", cap)?;
                if !(slope >= 0.0) || !slope.is_finite() {
                    return Err(Error::InvalidParam {
                        name: "slope",
                        value: slope,
                        reason: "must be finite and non-negative",
                    });
                }
                if cap > gamma {
                    return Err(Error::InvalidParam {
                        name: "cap",
                        value: cap,
                        reason: "mortality cap must not exceed gamma",
                    });
                }
            }
        }
        Ok(())
    }
}

/// Scalar parameters of the controlled SIRD model and the planner's cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Transmission rate.
    pub beta: f64,
    /// Recovery rate.
    pub gamma: f64,
    /// Lockdown effectiveness, in (0, 1).
    pub theta: f64,
    /// Maximum lockdown fraction, in (0, 1].
    pub l_bar: f64,
    /// Arrival intensity of the vaccine.
    pub nu: f64,
    /// Discount rate.
    pub r: f64,
    /// Output per active agent.
    pub w: f64,
    /// Death cost in output units.
    pub chi: f64,
    pub phi: MortalityCurve,
}

/// Bounds and Lipschitz constants of the vector field and of the running cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    pub k_b: f64,
    pub m_b: f64,
    pub k_f: f64,
    pub m_f: f64,
}

impl Default for ModelParams {
    /// Desk-scale placeholder values. Nothing in the model pins these down;
    /// every check in this crate is parameter-generic.
    fn default() -> Self {
        Self {
            beta: 0.2,
            gamma: 1.0 / 14.0,
            theta: 0.8,
            l_bar: 0.7,
            nu: 0.5,
            r: 0.05,
            w: 1.0,
            chi: 5.0,
            phi: MortalityCurve::Constant { phi0: 0.01 },
        }
    }
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParam {
            name,
            value,
            reason: "must be finite and strictly positive",
        })
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        positive("beta", self.beta)?;
        positive("gamma", self.gamma)?;
        positive("nu", self.nu)?;
        positive("r", self.r)?;
        positive("w", self.w)?;
        positive("chi", self.chi)?;
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::InvalidParam {
                name: "theta",
                value: self.theta,
                reason: "must lie in (0, 1)",
            });
        }
        if !(self.l_bar > 0.0 && self.l_bar <= 1.0) {
            return Err(Error::InvalidParam {
                name: "l_bar",
                value: self.l_bar,
                reason: "must lie in (0, 1]",
            });
        }
        self.phi.validate(self.gamma)
    }

    #[inline]
    pub fn phi(&self, i: f64) -> f64 {
        self.phi.eval(i)
    }

    /// Effective discount rate `r + nu`.
    #[inline]
    pub fn rho(&self) -> f64 {
        self.r + self.nu
    }

    /// Marginal cost of a death, `w / r + chi`.
    #[inline]
    pub fn death_weight(&self) -> f64 {
        self.w / self.r + self.chi
    }

    pub fn constants(&self) -> Constants {
        let m_phi = self.phi.lipschitz();
        let bg = self.beta + self.gamma;
        Constants {
            k_b: 3.0 * bg,
            m_b: 2.0 * (bg + m_phi),
            k_f: self.l_bar * self.w + self.death_weight() * self.gamma,
            m_f: 2.0 * (self.l_bar * self.w + self.death_weight() * (self.gamma + m_phi)),
        }
    }

    /// Upper bound `K_f / (r + nu)` of the value function.
    pub fn value_bound(&self) -> f64 {
        self.constants().k_f / self.rho()
    }

    pub(crate) fn check_lockdown(&self, l: f64) -> Result<()> {
        if (0.0..=self.l_bar).contains(&l) {
            Ok(())
        } else {
            Err(Error::Domain {
                what: "lockdown level",
                detail: format!("{l} not in [0, {}]", self.l_bar),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_b_from_beta_gamma() {
        let p = ModelParams {
            beta: 0.2,
            gamma: 0.1,
            ..Default::default()
        };
        assert!((p.constants().k_b - 0.9).abs() < 1e-15);
    }

    #[test]
    fn m_b_without_mortality_slope() {
        let p = ModelParams::default();
        let c = p.constants();
        assert_eq!(c.m_b, 2.0 * (p.beta + p.gamma));
    }

    #[test]
    fn k_f_arithmetic() {
        let p = ModelParams {
            l_bar: 1.0,
            w: 1.0,
            r: 0.05,
            chi: 2.0,
            gamma: 0.1,
            phi: MortalityCurve::Constant { phi0: 0.05 },
            ..Default::default()
        };
        // 1 + (20 + 2) * 0.1
        assert!((p.constants().k_f - 3.2).abs() < 1e-12);
        assert!((p.constants().m_f - 2.0 * 3.2).abs() < 1e-12);
    }

    #[test]
    fn affine_curve_saturates() {
        let phi = MortalityCurve::AffineSaturating {
            phi0: 0.01,
            slope: 0.2,
            cap: 0.05,
        };
        assert!((phi.eval(0.1) - 0.03).abs() < 1e-15);
        assert_eq!(phi.eval(0.9), 0.05);
        assert_eq!(phi.lipschitz(), 0.2);
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = ModelParams::default();
        p.theta = 1.0;
        assert!(p.validate().is_err());
        let mut p = ModelParams::default();
        p.phi = MortalityCurve::Constant { phi0: 0.5 };
        assert!(p.validate().is_err());
        let mut p = ModelParams::default();
        p.l_bar = 0.0;
        assert!(p.validate().is_err());
        assert!(ModelParams::default().validate().is_ok());
    }
}
