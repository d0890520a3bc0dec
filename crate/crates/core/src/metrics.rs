//! Stationarity metric, estimator diagnostics and empirical rate fitting.
//!
//! `𝔐_t = ‖∇l(x̄_t)‖² + Σ_i ‖x_{i,t} − x̄_t‖² + Σ_i ‖y_i*(x_{i,t}) − y_{i,t}‖²`
//! with `∇l = (1/m) Σ_i ∇l_i`.

use serde::{Deserialize, Serialize};

use crate::algorithms::NetworkState;
use crate::error::{Error, Result};
use crate::hypergrad::{lemma3_bias_bound, surrogate_grad, EstimatorConfig, NeumannSample};
use crate::numerics::{Lane, Purpose, RngStream, Vector};
use crate::problems::{BilevelOracle, ExactOracle, Sample};

/// One row of a run's output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub t: u64,
    pub samples_upper: u64,
    pub samples_lower: u64,
    pub comm_rounds: u64,
    pub stationarity_err: f64,
    pub consensus_err: f64,
    pub lower_err: f64,
    #[serde(rename = "metric_M")]
    pub metric_m: f64,
    pub upper_loss: f64,
    pub wall_seconds: f64,
}

impl RunRecord {
    pub const CSV_HEADER: [&'static str; 10] = [
        "t",
        "samples_upper",
        "samples_lower",
        "comm_rounds",
        "stationarity_err",
        "consensus_err",
        "lower_err",
        "metric_M",
        "upper_loss",
        "wall_seconds",
    ];

    pub fn new(net: &NetworkState, terms: &MetricTerms, wall_seconds: f64) -> Self {
        RunRecord {
            t: net.t,
            samples_upper: net.counters.upper_ifo_per_agent,
            samples_lower: net.counters.lower_ifo_per_agent,
            comm_rounds: net.counters.comm_rounds,
            stationarity_err: terms.stationarity_err,
            consensus_err: terms.consensus_err,
            lower_err: terms.lower_err,
            metric_m: terms.metric_m,
            upper_loss: terms.upper_loss,
            wall_seconds,
        }
    }

    /// Equality on every numeric field except wall-clock time.
    pub fn same_numerics(&self, other: &RunRecord) -> bool {
        RunRecord {
            wall_seconds: 0.0,
            ..self.clone()
        } == RunRecord {
            wall_seconds: 0.0,
            ..other.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricTerms {
    pub stationarity_err: f64,
    pub consensus_err: f64,
    pub lower_err: f64,
    pub metric_m: f64,
    /// `l(x̄) = (1/m) Σ_i l_i(x̄)`.
    pub upper_loss: f64,
}

pub fn consensus_error(xs: &[Vector]) -> f64 {
    let Some(mean) = Vector::mean(xs) else {
        return 0.0;
    };
    xs.iter().map(|x| x.dist_sq(&mean)).sum()
}

/// Evaluates `𝔐_t` through the exact oracle.
pub fn exact_metric(net: &NetworkState, oracle: &dyn BilevelOracle) -> Result<MetricTerms> {
    let exact = oracle
        .exact()
        .ok_or(Error::Capability("exact_metric needs an oracle with exact lower solutions"))?;
    exact_metric_with(net, exact)
}

pub fn exact_metric_with(net: &NetworkState, exact: &dyn ExactOracle) -> Result<MetricTerms> {
    let m = net.num_agents();
    let x_bar = net.x_bar();
    let mut grad = Vector::zeros(x_bar.dim());
    let mut loss = 0.0;
    let mut lower_err = 0.0;
    for (i, a) in net.agents.iter().enumerate() {
        grad += &exact.hypergrad_exact(i, &x_bar)?;
        loss += exact.upper_objective(i, &x_bar)?;
        lower_err += exact.y_star(i, &a.x)?.dist_sq(&a.y);
    }
    grad.scale(1.0 / m as f64);
    let xs: Vec<Vector> = net.agents.iter().map(|a| a.x.clone()).collect();
    let stationarity_err = grad.norm_sq();
    let consensus_err = consensus_error(&xs);
    Ok(MetricTerms {
        stationarity_err,
        consensus_err,
        lower_err,
        metric_m: stationarity_err + consensus_err + lower_err,
        upper_loss: loss / m as f64,
    })
}

/// Measured estimation errors of the momentum directions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    /// `Σ_i ‖p_i − ∇̄f_i − b_i‖²`.
    pub ef_norm2: f64,
    /// `Σ_i ‖v_i − ∇_y g_i‖²`.
    pub eg_norm2: f64,
    /// `Σ_i ‖b_i‖²` with `b_i` estimated by Monte Carlo.
    pub bias_norm2: f64,
    /// `m · (bias bound)²` for comparison with `bias_norm2`.
    pub bias_bound2: f64,
}

/// `bias_draws` fresh estimator draws per agent estimate the bias
/// `b_i = E[estimate] − ∇̄f_i`.
pub fn estimation_errors(
    net: &NetworkState,
    oracle: &dyn BilevelOracle,
    cfg: &EstimatorConfig,
    bias_draws: usize,
    seed: u64,
) -> Result<DiagnosticRecord> {
    if bias_draws == 0 {
        return Err(Error::invalid("estimation_errors: bias_draws must be >= 1"));
    }
    let mut out = DiagnosticRecord {
        ef_norm2: 0.0,
        eg_norm2: 0.0,
        bias_norm2: 0.0,
        bias_bound2: 0.0,
    };
    for (i, a) in net.agents.iter().enumerate() {
        let gy = oracle.grad_y_g(i, &a.x, &a.y, Sample::Exact)?;
        out.eg_norm2 += a.v.dist_sq(&gy);

        let surrogate = surrogate_grad(oracle, i, &a.x, &a.y)?;
        let mut s = RngStream::new(seed, Lane::new(i, net.t, Purpose::Diagnostics));
        let mut mean = Vector::zeros(surrogate.dim());
        for _ in 0..bias_draws {
            mean += &NeumannSample::draw(&mut s, cfg.k)?.evaluate(oracle, i, &a.x, &a.y, cfg)?;
        }
        mean.scale(1.0 / bias_draws as f64);
        let bias = &mean - &surrogate;
        out.bias_norm2 += bias.norm_sq();
        // p − ∇̄f − b = p − mean
        out.ef_norm2 += a.p.dist_sq(&mean);
    }
    let bound = lemma3_bias_bound(oracle.constants(), cfg.k);
    out.bias_bound2 = net.num_agents() as f64 * bound * bound;
    Ok(out)
}

/// Least-squares slope of `log(running min of 𝔐)` against `log t` over
/// records with `t_lo ≤ t ≤ t_hi`. The running minimum starts at the first
/// record.
pub fn rate_slope(records: &[RunRecord], t_lo: u64, t_hi: u64) -> Result<f64> {
    if t_lo < 1 || t_hi < t_lo {
        return Err(Error::invalid(format!("rate_slope: bad window [{t_lo}, {t_hi}]")));
    }
    let mut best = f64::INFINITY;
    let mut pts = Vec::new();
    for r in records {
        best = best.min(r.metric_m);
        if (t_lo..=t_hi).contains(&r.t) {
            if !(best > 0.0) || !best.is_finite() {
                return Err(Error::invalid(format!("rate_slope: non-positive metric {best} at t = {}", r.t)));
            }
            pts.push(((r.t as f64).ln(), best.ln()));
        }
    }
    if pts.len() < 10 {
        return Err(Error::invalid(format!("rate_slope: {} points in window, need >= 10", pts.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{AgentState, NetworkState};
    use crate::problems::QuadraticProblem;

    fn record(t: u64, metric: f64) -> RunRecord {
        RunRecord {
            t,
            samples_upper: 0,
            samples_lower: 0,
            comm_rounds: t,
            stationarity_err: metric,
            consensus_err: 0.0,
            lower_err: 0.0,
            metric_m: metric,
            upper_loss: 0.0,
            wall_seconds: 0.0,
        }
    }

    #[test]
    fn power_law_slope() {
        let recs: Vec<_> = (1..=200).map(|t| record(t * 10, (t as f64 * 10.0).powf(-2.0 / 3.0))).collect();
        let s = rate_slope(&recs, 10, 2000).unwrap();
        assert!((s + 2.0 / 3.0).abs() < 1e-9, "{s}");
        let flat: Vec<_> = (1..=20).map(|t| record(t, 3.0)).collect();
        assert_eq!(rate_slope(&flat, 1, 20).unwrap(), 0.0);
        assert!(rate_slope(&flat[..5], 1, 20).is_err());
    }

    #[test]
    fn consensus_of_opposite_points() {
        let e1 = Vector::basis(3, 0);
        assert_eq!(consensus_error(&[e1.clone(), -&e1]), 2.0);
    }

    #[test]
    fn scalar_metric_example() {
        let p = QuadraticProblem::scalar(2.0, 1.0, 0.0).unwrap();
        let net = NetworkState::uniform(1, &Vector::from(vec![2.0]), &Vector::from(vec![1.0])).unwrap();
        let m = exact_metric(&net, &p).unwrap();
        assert!((m.stationarity_err - 0.25).abs() < 1e-15);
        assert_eq!(m.consensus_err, 0.0);
        assert!(m.lower_err < 1e-24);
        assert!((m.metric_m - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_at_stationary_consensus() {
        let p = QuadraticProblem::scalar(2.0, 1.0, 0.0).unwrap();
        let net = NetworkState::from_agents(vec![AgentState::new(Vector::zeros(1), Vector::zeros(1))]).unwrap();
        let m = exact_metric(&net, &p).unwrap();
        assert_eq!(m.metric_m, 0.0);
    }
}
