use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `α_t = c_α(ω + t)^{−1/3}`, `β_t = c_β α_t`, `η_{t+1} = min(1, c_η α_t²)`,
/// `γ_{t+1} = min(1, c_γ α_t²)`, with `η₀ = γ₀ = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub c_alpha: f64,
    pub omega: f64,
    pub c_beta: f64,
    pub c_eta: f64,
    pub c_gamma: f64,
    /// Forces `η_t = γ_t = 1`, turning momentum off.
    #[serde(default)]
    pub unit_momentum: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleValues {
    pub alpha: f64,
    pub beta: f64,
    pub eta_next: f64,
    pub gamma_next: f64,
}

impl Schedule {
    /// Meta-learning experiment constants.
    pub const META_LEARNING: Schedule = Schedule {
        c_alpha: 10.0,
        omega: 2.0,
        c_beta: 10.0,
        c_eta: 0.1,
        c_gamma: 0.1,
        unit_momentum: false,
    };

    /// Hyperparameter-optimization experiment constants.
    pub const HYPEROPT: Schedule = Schedule {
        c_alpha: 5.0,
        omega: 2.0,
        c_beta: 1.5,
        c_eta: 0.1,
        c_gamma: 0.1,
        unit_momentum: false,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = self.c_alpha > 0.0
            && self.omega >= 2.0
            && self.c_beta > 0.0
            && self.c_eta >= 0.0
            && self.c_gamma >= 0.0
            && [self.c_alpha, self.omega, self.c_beta, self.c_eta, self.c_gamma]
                .iter()
                .all(|v| v.is_finite());
        if !ok {
            return Err(Error::invalid(format!(
                "schedule needs c_alpha > 0, omega >= 2, c_beta > 0, c_eta >= 0, c_gamma >= 0; got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn values(&self, t: u64) -> ScheduleValues {
        let alpha = self.c_alpha * (self.omega + t as f64).powf(-1.0 / 3.0);
        let (eta_next, gamma_next) = if self.unit_momentum {
            (1.0, 1.0)
        } else {
            let a2 = alpha * alpha;
            ((self.c_eta * a2).min(1.0), (self.c_gamma * a2).min(1.0))
        };
        ScheduleValues {
            alpha,
            beta: self.c_beta * alpha,
            eta_next,
            gamma_next,
        }
    }

    /// `η_t`, the coefficient used in the update at iteration `t`.
    pub fn eta(&self, t: u64) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.values(t - 1).eta_next
        }
    }

    /// `γ_t`, the coefficient used in the update at iteration `t`.
    pub fn gamma(&self, t: u64) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.values(t - 1).gamma_next
        }
    }
}

pub fn schedule_values(s: &Schedule, t: u64) -> ScheduleValues {
    s.values(t)
}
