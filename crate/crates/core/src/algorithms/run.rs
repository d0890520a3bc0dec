use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{step, Algorithm, NetworkState, Schedule, StepContext};
use crate::error::{Error, Result};
use crate::hypergrad::EstimatorConfig;
use crate::metrics::{exact_metric, MetricTerms, RunRecord};
use crate::problems::BilevelOracle;
use crate::topology::ConsensusMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub algorithm: Algorithm,
    /// Number of iterations `T`.
    pub iterations: u64,
    /// Records at `t = 0, c, 2c, …` and at `T`.
    pub cadence: u64,
    pub seed: u64,
    pub estimator: EstimatorConfig,
    pub schedule: Schedule,
}

impl RunOptions {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("run: iterations must be >= 1"));
        }
        if self.cadence == 0 {
            return Err(Error::invalid("run: cadence must be >= 1"));
        }
        self.estimator.validate()?;
        self.schedule.validate()
    }

    /// Iterations at which a record is taken.
    pub fn record_times(&self) -> Vec<u64> {
        let mut ts: Vec<u64> = (0..self.iterations).step_by(self.cadence as usize).collect();
        ts.push(self.iterations);
        ts
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<RunRecord>,
    pub final_state: NetworkState,
}

/// Runs with records from the exact metric.
pub fn run(
    opts: &RunOptions,
    net0: NetworkState,
    cm: &ConsensusMatrix,
    oracle: &dyn BilevelOracle,
) -> Result<RunOutput> {
    if oracle.exact().is_none() {
        return Err(Error::Capability("run: records need an oracle with exact lower solutions"));
    }
    run_with(opts, net0, cm, oracle, &mut |net| exact_metric(net, oracle))
}

/// Runs with `observe` producing the metric terms at each record time.
/// A non-finite iterate stops the run with [`Error::Divergence`].
pub fn run_with(
    opts: &RunOptions,
    net0: NetworkState,
    cm: &ConsensusMatrix,
    oracle: &dyn BilevelOracle,
    observe: &mut dyn FnMut(&NetworkState) -> Result<MetricTerms>,
) -> Result<RunOutput> {
    opts.validate()?;
    let ctx = StepContext {
        cm,
        oracle,
        est: opts.estimator,
        sched: opts.schedule,
        seed: opts.seed,
    };
    let start = Instant::now();
    let mut records = Vec::with_capacity((opts.iterations / opts.cadence + 2) as usize);
    let mut net = net0;
    loop {
        if net.t.is_multiple_of(opts.cadence) || net.t == opts.iterations {
            let terms = observe(&net)?;
            records.push(RunRecord::new(&net, &terms, start.elapsed().as_secs_f64()));
        }
        if net.t == opts.iterations {
            break;
        }
        net = step(opts.algorithm, &net, &ctx)?;
        if !net.is_finite() {
            log::warn!("{} diverged at iteration {}", opts.algorithm, net.t);
            return Err(Error::Divergence { iteration: net.t as usize });
        }
    }
    Ok(RunOutput {
        records,
        final_state: net,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Vector;
    use crate::problems::QuadraticProblem;
    use crate::topology::{ConsensusMatrix, Graph, MatrixKind};

    fn opts(alg: Algorithm, iterations: u64, cadence: u64) -> RunOptions {
        RunOptions {
            algorithm: alg,
            iterations,
            cadence,
            seed: 1,
            estimator: EstimatorConfig::new(5, 2.0, 1.0).unwrap(),
            schedule: Schedule {
                c_alpha: 0.1,
                c_beta: 1.0,
                ..Schedule::META_LEARNING
            },
        }
    }

    #[test]
    fn record_cadence() {
        let o = opts(Algorithm::Diamond, 100, 10);
        assert_eq!(o.record_times().len(), 11);
        assert_eq!(opts(Algorithm::Diamond, 25, 10).record_times(), vec![0, 10, 20, 25]);
        let p = QuadraticProblem::scalar(2.0, 1.0, 0.0).unwrap();
        let cm = ConsensusMatrix::build(MatrixKind::Laplacian, &Graph::complete(1)).unwrap();
        let net = NetworkState::uniform(1, &Vector::from(vec![1.0]), &Vector::zeros(1)).unwrap();
        let out = run(&o, net, &cm, &p).unwrap();
        let ts: Vec<u64> = out.records.iter().map(|r| r.t).collect();
        assert_eq!(ts, o.record_times());
        assert_eq!(out.final_state.t, 100);
        assert_eq!(out.records.last().unwrap().comm_rounds, 100);
    }

    #[test]
    fn rejects_zero_horizon_and_detects_divergence() {
        let p = QuadraticProblem::scalar(2.0, 1.0, 0.0).unwrap();
        let cm = ConsensusMatrix::build(MatrixKind::Laplacian, &Graph::complete(1)).unwrap();
        let net = NetworkState::uniform(1, &Vector::from(vec![1.0]), &Vector::zeros(1)).unwrap();
        assert!(run(&opts(Algorithm::Diamond, 0, 10), net.clone(), &cm, &p).is_err());
        let mut wild = opts(Algorithm::Dsgd, 500, 10);
        wild.schedule.c_alpha = 1e6;
        match run(&wild, net, &cm, &p) {
            Err(Error::Divergence { iteration }) => assert!(iteration >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
