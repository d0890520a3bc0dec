//! Bilevel problem oracles.
//!
//! Every agent `i` holds an upper objective `f_i(x, y)` and a lower objective
//! `g_i(x, y)`, strongly convex in `y`. Stochastic queries take a [`Sample`];
//! the oracle expands a sample key into concrete noise or a minibatch, so a
//! query is a pure function of `(agent, point, sample)`.

mod dataset;
mod logistic;
mod quadratic;

pub use dataset::{load_libsvm, make_synthetic_dataset, parse_libsvm, AgentShard, Dataset, Example};
pub use logistic::{LogisticConfig, LogisticProblem, DEFAULT_X_CLAMP, NUM_CLASSES};
pub use quadratic::{quadratic_problem, QuadraticAgent, QuadraticConfig, QuadraticProblem};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Vector;

/// Constants of the smoothness, strong convexity and noise assumptions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub mu_g: f64,
    pub l_g: f64,
    pub l_fx: f64,
    pub l_fy: f64,
    pub c_fy: f64,
    pub c_gxy: f64,
    pub l_gxy: f64,
    pub l_gyy: f64,
    pub sigma_f: f64,
    pub sigma_g: f64,
}

impl ProblemConstants {
    /// Every constant set to one, except `l_g = 2`.
    pub fn unit() -> Self {
        ProblemConstants {
            mu_g: 1.0,
            l_g: 2.0,
            l_fx: 1.0,
            l_fy: 1.0,
            c_fy: 1.0,
            c_gxy: 1.0,
            l_gxy: 1.0,
            l_gyy: 1.0,
            sigma_f: 0.0,
            sigma_g: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_g > 0.0) {
            return Err(Error::invalid(format!("mu_g must be > 0, got {}", self.mu_g)));
        }
        if !(self.l_g >= self.mu_g) {
            return Err(Error::invalid(format!(
                "l_g = {} must be >= mu_g = {}",
                self.l_g, self.mu_g
            )));
        }
        let rest = [
            ("l_fx", self.l_fx),
            ("l_fy", self.l_fy),
            ("c_fy", self.c_fy),
            ("c_gxy", self.c_gxy),
            ("l_gxy", self.l_gxy),
            ("l_gyy", self.l_gyy),
            ("sigma_f", self.sigma_f),
            ("sigma_g", self.sigma_g),
        ];
        for (name, v) in rest {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// One stochastic sample. `Exact` asks for the noiseless full-batch query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sample {
    Exact,
    Key(u64),
}

/// Stochastic first- and second-order queries of `(f_i, g_i)`.
///
/// `hess_xy_g_times` maps a lower-dimension vector `v` to `∇²_xy g · v`
/// in the upper dimension.
pub trait BilevelOracle: Send + Sync {
    fn num_agents(&self) -> usize;
    fn d_up(&self) -> usize;
    fn d_low(&self) -> usize;
    fn constants(&self) -> &ProblemConstants;

    fn grad_x_f(&self, agent: usize, x: &Vector, y: &Vector, sample: Sample) -> Result<Vector>;
    fn grad_y_f(&self, agent: usize, x: &Vector, y: &Vector, sample: Sample) -> Result<Vector>;
    fn grad_y_g(&self, agent: usize, x: &Vector, y: &Vector, sample: Sample) -> Result<Vector>;
    fn hess_xy_g_times(
        &self,
        agent: usize,
        x: &Vector,
        y: &Vector,
        v: &Vector,
        sample: Sample,
    ) -> Result<Vector>;
    fn hess_yy_g_times(
        &self,
        agent: usize,
        x: &Vector,
        y: &Vector,
        v: &Vector,
        sample: Sample,
    ) -> Result<Vector>;

    /// Deterministic `f_i(x, y)`.
    fn upper_value(&self, agent: usize, x: &Vector, y: &Vector) -> Result<f64>;

    fn exact(&self) -> Option<&dyn ExactOracle> {
        None
    }
}

/// Ground-truth access to the lower solution map and the hypergradient.
pub trait ExactOracle {
    /// `y_i*(x) = argmin_y g_i(x, y)`.
    fn y_star(&self, agent: usize, x: &Vector) -> Result<Vector>;
    /// `∇l_i(x)` with `l_i(x) = f_i(x, y_i*(x))`.
    fn hypergrad_exact(&self, agent: usize, x: &Vector) -> Result<Vector>;
    /// `l_i(x)`.
    fn upper_objective(&self, agent: usize, x: &Vector) -> Result<f64>;
    /// Minimizer of `(1/m) Σ_i l_i`, where it is available in closed form.
    fn global_min(&self) -> Option<Vector> {
        None
    }
}

pub(crate) fn check_agent(agent: usize, m: usize) -> Result<()> {
    if agent >= m {
        return Err(Error::invalid(format!("agent {agent} out of range for m = {m}")));
    }
    Ok(())
}

pub(crate) fn check_dim(what: &str, v: &Vector, dim: usize) -> Result<()> {
    if v.dim() != dim {
        return Err(Error::invalid(format!("{what}: expected dimension {dim}, got {}", v.dim())));
    }
    Ok(())
}
