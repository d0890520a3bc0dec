//! The tracked-momentum iteration and its three baselines.
//!
//! All four share one step skeleton. Agent `i` at iteration `t` draws its
//! upper sample tuple from lane `(i, t, UpperEstimate)` and its lower
//! sample from lane `(i, t, LowerGrad)`, so runs with the same seed see the
//! same samples regardless of algorithm.

mod run;
mod schedule;
mod theorem1;

pub use run::{run, run_with, RunOptions, RunOutput};
pub use schedule::{schedule_values, Schedule, ScheduleValues};
pub use theorem1::{theorem1_constants, Theorem1Constants};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergrad::{EstimatorConfig, NeumannSample};
use crate::numerics::{Lane, Purpose, RngStream, Vector};
use crate::problems::{BilevelOracle, Sample};
use crate::topology::ConsensusMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Diamond,
    Dsgd,
    Gtsgd,
    Msgd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Diamond, Algorithm::Dsgd, Algorithm::Gtsgd, Algorithm::Msgd];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Diamond => "diamond",
            Algorithm::Dsgd => "dsgd",
            Algorithm::Gtsgd => "gtsgd",
            Algorithm::Msgd => "msgd",
        }
    }

    /// `(upper, lower)` per-agent oracle calls of step `t` under estimator budget `K`.
    pub fn ifo_per_step(self, k: usize, t: u64) -> (u64, u64) {
        let est = (k + 2) as u64;
        match self {
            Algorithm::Diamond | Algorithm::Msgd if t > 0 => (2 * est, 2),
            _ => (est, 1),
        }
    }

    /// Closed-form per-agent `(upper, lower)` totals after `t` steps.
    pub fn ifo_after(self, k: usize, t: u64) -> (u64, u64) {
        if t == 0 {
            return (0, 0);
        }
        let est = (k + 2) as u64;
        match self {
            Algorithm::Diamond | Algorithm::Msgd => (2 * est * (t - 1) + est, 2 * (t - 1) + 1),
            Algorithm::Dsgd | Algorithm::Gtsgd => (est * t, t),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "diamond" => Ok(Algorithm::Diamond),
            "dsgd" => Ok(Algorithm::Dsgd),
            "gtsgd" => Ok(Algorithm::Gtsgd),
            "msgd" => Ok(Algorithm::Msgd),
            _ => Err(Error::invalid(format!("unknown algorithm {s:?}"))),
        }
    }
}

/// One agent's local variables. `p` and `v` are the momentum directions,
/// `u` the tracked upper direction. For the tracking baseline `p` holds the
/// previous raw estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: Vector,
    pub y: Vector,
    pub p: Vector,
    pub v: Vector,
    pub u: Vector,
    pub prev_x: Vector,
    pub prev_y: Vector,
}

impl AgentState {
    pub fn new(x: Vector, y: Vector) -> Self {
        AgentState {
            p: Vector::zeros(x.dim()),
            v: Vector::zeros(y.dim()),
            u: Vector::zeros(x.dim()),
            prev_x: x.clone(),
            prev_y: y.clone(),
            x,
            y,
        }
    }

    fn is_finite(&self) -> bool {
        [&self.x, &self.y, &self.p, &self.v, &self.u].iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub iterations: u64,
    pub comm_rounds: u64,
    pub upper_ifo_per_agent: u64,
    pub lower_ifo_per_agent: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub agents: Vec<AgentState>,
    pub t: u64,
    pub counters: Counters,
}

impl NetworkState {
    /// All agents start at `(x0, y0)` with zero momentum and tracking.
    pub fn uniform(m: usize, x0: &Vector, y0: &Vector) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("network needs at least one agent"));
        }
        NetworkState::from_agents((0..m).map(|_| AgentState::new(x0.clone(), y0.clone())).collect())
    }

    pub fn from_agents(agents: Vec<AgentState>) -> Result<Self> {
        let first = agents.first().ok_or_else(|| Error::invalid("network needs at least one agent"))?;
        let (du, dl) = (first.x.dim(), first.y.dim());
        if agents.iter().any(|a| a.x.dim() != du || a.y.dim() != dl) {
            return Err(Error::invalid("agents disagree on d_up or d_low"));
        }
        Ok(NetworkState {
            agents,
            t: 0,
            counters: Counters::default(),
        })
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn x_bar(&self) -> Vector {
        Vector::mean(self.agents.iter().map(|a| &a.x)).expect("nonempty network")
    }

    pub fn u_bar(&self) -> Vector {
        Vector::mean(self.agents.iter().map(|a| &a.u)).expect("nonempty network")
    }

    pub fn p_bar(&self) -> Vector {
        Vector::mean(self.agents.iter().map(|a| &a.p)).expect("nonempty network")
    }

    pub fn is_finite(&self) -> bool {
        self.agents.iter().all(AgentState::is_finite)
    }
}

/// Everything a step needs besides the state.
#[derive(Clone, Copy)]
pub struct StepContext<'a> {
    pub cm: &'a ConsensusMatrix,
    pub oracle: &'a dyn BilevelOracle,
    pub est: EstimatorConfig,
    pub sched: Schedule,
    pub seed: u64,
}

impl StepContext<'_> {
    fn check(&self, net: &NetworkState) -> Result<()> {
        let m = net.num_agents();
        if self.cm.num_agents() != m || self.oracle.num_agents() != m {
            return Err(Error::invalid(format!(
                "network has {m} agents, consensus matrix {} and oracle {}",
                self.cm.num_agents(),
                self.oracle.num_agents()
            )));
        }
        let a = &net.agents[0];
        if a.x.dim() != self.oracle.d_up() || a.y.dim() != self.oracle.d_low() {
            return Err(Error::invalid(format!(
                "state dimensions ({}, {}) do not match oracle ({}, {})",
                a.x.dim(),
                a.y.dim(),
                self.oracle.d_up(),
                self.oracle.d_low()
            )));
        }
        Ok(())
    }

    fn samples(&self, agent: usize, t: u64) -> Result<(NeumannSample, Sample)> {
        let mut up = RngStream::new(self.seed, Lane::new(agent, t, Purpose::UpperEstimate));
        let ns = NeumannSample::draw(&mut up, self.est.k)?;
        let mut lo = RngStream::new(self.seed, Lane::new(agent, t, Purpose::LowerGrad));
        Ok((ns, Sample::Key(lo.next_u64())))
    }
}

/// Momentum directions for agent `i` at iteration `t`, reusing one sample
/// at the current and the previous point.
fn momentum(ctx: &StepContext, i: usize, a: &AgentState, t: u64) -> Result<(Vector, Vector)> {
    let (ns, zeta) = ctx.samples(i, t)?;
    let mut p = ns.evaluate(ctx.oracle, i, &a.x, &a.y, &ctx.est)?;
    let mut v = ctx.oracle.grad_y_g(i, &a.x, &a.y, zeta)?;
    if t > 0 {
        let (eta, gamma) = (ctx.sched.eta(t), ctx.sched.gamma(t));
        let p_prev = ns.evaluate(ctx.oracle, i, &a.prev_x, &a.prev_y, &ctx.est)?;
        let v_prev = ctx.oracle.grad_y_g(i, &a.prev_x, &a.prev_y, zeta)?;
        p.axpy(1.0 - eta, &(&a.p - &p_prev));
        v.axpy(1.0 - gamma, &(&a.v - &v_prev));
    }
    Ok((p, v))
}

/// Fresh estimates without momentum.
fn raw(ctx: &StepContext, i: usize, a: &AgentState, t: u64) -> Result<(Vector, Vector)> {
    let (ns, zeta) = ctx.samples(i, t)?;
    Ok((
        ns.evaluate(ctx.oracle, i, &a.x, &a.y, &ctx.est)?,
        ctx.oracle.grad_y_g(i, &a.x, &a.y, zeta)?,
    ))
}

fn advance(alg: Algorithm, net: &NetworkState, ctx: &StepContext) -> Result<NetworkState> {
    ctx.check(net)?;
    let t = net.t;
    let sv = ctx.sched.values(t);
    let dirs = net
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| match alg {
            Algorithm::Diamond | Algorithm::Msgd => momentum(ctx, i, a, t),
            Algorithm::Dsgd | Algorithm::Gtsgd => raw(ctx, i, a, t),
        })
        .collect::<Result<Vec<_>>>()?;

    let xs: Vec<Vector> = net.agents.iter().map(|a| a.x.clone()).collect();
    let mixed_x = ctx.cm.mix(&xs);
    let tracked = match alg {
        Algorithm::Diamond | Algorithm::Gtsgd => {
            let us: Vec<Vector> = net.agents.iter().map(|a| a.u.clone()).collect();
            let mut mixed_u = ctx.cm.mix(&us);
            for ((mu, a), (p, _)) in mixed_u.iter_mut().zip(&net.agents).zip(&dirs) {
                *mu += p;
                *mu -= &a.p;
            }
            Some(mixed_u)
        }
        Algorithm::Dsgd | Algorithm::Msgd => None,
    };

    let agents = net
        .agents
        .iter()
        .zip(dirs)
        .zip(mixed_x)
        .enumerate()
        .map(|(i, ((a, (p, v)), mut x))| {
            let u = tracked.as_ref().map(|us| us[i].clone()).unwrap_or_else(|| Vector::zeros(a.u.dim()));
            let dir = if tracked.is_some() { &u } else { &p };
            x.axpy(-sv.alpha, dir);
            let mut y = a.y.clone();
            y.axpy(-sv.beta, &v);
            AgentState {
                x,
                y,
                p,
                v,
                u,
                prev_x: a.x.clone(),
                prev_y: a.y.clone(),
            }
        })
        .collect();

    let (du, dl) = alg.ifo_per_step(ctx.est.k, t);
    let c = net.counters;
    Ok(NetworkState {
        agents,
        t: t + 1,
        counters: Counters {
            iterations: c.iterations + 1,
            comm_rounds: c.comm_rounds + 1,
            upper_ifo_per_agent: c.upper_ifo_per_agent + du,
            lower_ifo_per_agent: c.lower_ifo_per_agent + dl,
        },
    })
}

/// One iteration of `alg` from `net`.
pub fn step(alg: Algorithm, net: &NetworkState, ctx: &StepContext) -> Result<NetworkState> {
    advance(alg, net, ctx)
}

/// Momentum estimates, tracked direction, consensus step on `x`, momentum
/// step on `y`.
pub fn diamond_step(net: &NetworkState, ctx: &StepContext) -> Result<NetworkState> {
    advance(Algorithm::Diamond, net, ctx)
}

/// Consensus on `x` minus a raw estimate; plain stochastic gradient on `y`.
pub fn dsgd_step(net: &NetworkState, ctx: &StepContext) -> Result<NetworkState> {
    advance(Algorithm::Dsgd, net, ctx)
}

/// Gradient tracking over raw estimates.
pub fn gtsgd_step(net: &NetworkState, ctx: &StepContext) -> Result<NetworkState> {
    advance(Algorithm::Gtsgd, net, ctx)
}

/// Momentum estimates without tracking.
pub fn msgd_step(net: &NetworkState, ctx: &StepContext) -> Result<NetworkState> {
    advance(Algorithm::Msgd, net, ctx)
}
