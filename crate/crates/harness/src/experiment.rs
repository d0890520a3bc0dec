//! Building instances from a config, running seed replicates and writing
//! CSV records plus a JSON summary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use diamond_core::algorithms::{run, Algorithm, NetworkState, RunOptions, Schedule};
use diamond_core::hypergrad::{k_for_horizon, EstimatorConfig};
use diamond_core::metrics::{rate_slope, RunRecord};
use diamond_core::numerics::{Lane, Purpose, RngStream, Vector};
use diamond_core::problems::{
    load_libsvm, make_synthetic_dataset, BilevelOracle, LogisticConfig, LogisticProblem, QuadraticConfig,
    QuadraticProblem,
};
use diamond_core::topology::{erdos_renyi, ConsensusMatrix, Graph, DEFAULT_ER_RETRIES};
use diamond_core::Error as CoreError;
use serde::Serialize;

use crate::config::{ExperimentConfig, KSetting, ProblemSpec};

pub const CODE_VERSION: &str = concat!("diamond-harness ", env!("CARGO_PKG_VERSION"));

/// Everything shared by the runs of one config.
pub struct Instance {
    pub oracle: Box<dyn BilevelOracle>,
    pub graph: Graph,
    pub cm: ConsensusMatrix,
    pub estimator: EstimatorConfig,
    pub schedule: Schedule,
}

impl Instance {
    pub fn k(&self) -> usize {
        self.estimator.k
    }

    pub fn initial_state(&self) -> Result<NetworkState> {
        let o = &self.oracle;
        Ok(NetworkState::uniform(
            o.num_agents(),
            &Vector::zeros(o.d_up()),
            &Vector::zeros(o.d_low()),
        )?)
    }
}

pub fn build_graph(cfg: &ExperimentConfig) -> Result<Graph> {
    let t = &cfg.topology;
    if t.m == 1 {
        return Ok(Graph::complete(1));
    }
    let mut rng = RngStream::new(t.seed, Lane::global(Purpose::Topology));
    Ok(erdos_renyi(t.m, t.p_c, &mut rng, DEFAULT_ER_RETRIES)?)
}

pub fn build_oracle(cfg: &ExperimentConfig) -> Result<Box<dyn BilevelOracle>> {
    let m = cfg.topology.m;
    Ok(match &cfg.problem {
        ProblemSpec::Quadratic(q) => {
            let qc = QuadraticConfig {
                m,
                d_up: q.d_up,
                d_low: q.d_low,
                conditioning: q.conditioning,
                mu_g: q.mu_g,
                rho: q.rho,
                sigma_f: q.sigma_f,
                sigma_g: q.sigma_g,
                coupling: q.coupling,
                radius: q.radius,
                realizable: q.realizable,
            };
            let mut rng = RngStream::new(q.seed, Lane::global(Purpose::ProblemInstance));
            Box::new(QuadraticProblem::generate(&qc, &mut rng)?)
        }
        ProblemSpec::Logistic(l) => {
            let mut rng = RngStream::new(l.seed, Lane::global(Purpose::Dataset));
            let data = match &l.libsvm_path {
                Some(path) => load_libsvm(path, l.features, m, &mut rng)
                    .with_context(|| format!("loading {}", path.display()))?,
                None => make_synthetic_dataset(m, l.n_per_agent, l.features.unwrap_or(0), l.separation, &mut rng)?,
            };
            let lc = LogisticConfig {
                batch_size: l.batch_size,
                x_clamp: l.x_clamp,
                y_radius: l.y_radius,
                inner_tol: l.inner_tol,
            };
            Box::new(LogisticProblem::new(data, lc)?)
        }
    })
}

pub fn resolve_k(cfg: &ExperimentConfig, oracle: &dyn BilevelOracle) -> Result<usize> {
    Ok(match cfg.estimator.k {
        KSetting::Fixed(k) => k,
        KSetting::Auto => k_for_horizon(oracle.constants(), cfg.iterations as usize)?,
    })
}

pub fn build_instance(cfg: &ExperimentConfig) -> Result<Instance> {
    let graph = build_graph(cfg)?;
    let cm = ConsensusMatrix::build(cfg.topology.matrix, &graph)?;
    let oracle = build_oracle(cfg)?;
    let k = resolve_k(cfg, oracle.as_ref())?;
    let pc = oracle.constants();
    let estimator = EstimatorConfig::new(
        k,
        cfg.estimator.l_g.unwrap_or(pc.l_g),
        cfg.estimator.mu_g.unwrap_or(pc.mu_g),
    )?;
    Ok(Instance {
        oracle,
        graph,
        cm,
        estimator,
        schedule: cfg.schedule.resolve(),
    })
}

/// Largest `T` whose per-agent upper-level sample count fits `budget`.
pub fn iterations_for_budget(alg: Algorithm, k: usize, budget: u64) -> u64 {
    let (mut lo, mut hi) = (0u64, budget.max(1));
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if alg.ifo_after(k, mid).0 <= budget {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

pub fn horizon(cfg: &ExperimentConfig, alg: Algorithm, k: usize) -> u64 {
    match cfg.budget {
        Some(b) => iterations_for_budget(alg, k, b),
        None => cfg.iterations,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Diverged { iteration: usize },
    Failed { message: String },
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub iterations: u64,
    pub status: RunStatus,
    pub records: Vec<RunRecord>,
    /// `(1/m) Σ_i f_i(x_i, y_i)` at the final iterates.
    pub final_iterate_loss: Option<f64>,
}

impl SeedRun {
    pub fn final_record(&self) -> Option<&RunRecord> {
        match self.status {
            RunStatus::Ok => self.records.last(),
            _ => None,
        }
    }
}

/// `(1/m) Σ_i f_i(x_i, y_i)`: the upper objective at the agents' own iterates.
pub fn iterate_loss(oracle: &dyn BilevelOracle, net: &NetworkState) -> Result<f64> {
    let mut total = 0.0;
    for (i, a) in net.agents.iter().enumerate() {
        total += oracle.upper_value(i, &a.x, &a.y)?;
    }
    Ok(total / net.num_agents() as f64)
}

/// One seed of one algorithm. Divergence is reported in the status.
pub fn run_seed(inst: &Instance, cfg: &ExperimentConfig, alg: Algorithm, seed: u64) -> Result<SeedRun> {
    let iterations = horizon(cfg, alg, inst.k());
    if iterations == 0 {
        anyhow::bail!("budget {:?} does not cover one iteration of {alg}", cfg.budget);
    }
    let opts = RunOptions {
        algorithm: alg,
        iterations,
        cadence: cfg.cadence,
        seed,
        estimator: inst.estimator,
        schedule: inst.schedule,
    };
    let (status, records, final_iterate_loss) =
        match run(&opts, inst.initial_state()?, &inst.cm, inst.oracle.as_ref()) {
            Ok(out) => {
                let loss = iterate_loss(inst.oracle.as_ref(), &out.final_state)?;
                (RunStatus::Ok, out.records, Some(loss))
            }
            Err(CoreError::Divergence { iteration }) => (RunStatus::Diverged { iteration }, Vec::new(), None),
            Err(e) => return Err(e.into()),
        };
    Ok(SeedRun {
        algorithm: alg,
        seed,
        iterations,
        status,
        records,
        final_iterate_loss,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub iterations: u64,
    #[serde(flatten)]
    pub status: RunStatus,
    pub final_metric_m: Option<f64>,
    pub final_upper_loss: Option<f64>,
    pub final_iterate_loss: Option<f64>,
    pub final_samples_upper: Option<u64>,
    pub rate_slope: Option<f64>,
    pub csv: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AlgorithmSummary {
    pub runs: usize,
    pub diverged: usize,
    pub median_final_metric_m: Option<f64>,
    pub mean_final_metric_m: Option<f64>,
    pub median_final_upper_loss: Option<f64>,
    pub median_final_iterate_loss: Option<f64>,
    pub median_rate_slope: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentSummary {
    pub code_version: &'static str,
    pub config: ExperimentConfig,
    pub k: usize,
    pub lambda: f64,
    pub estimator_l_g: f64,
    pub estimator_mu_g: f64,
    pub runs: Vec<RunSummary>,
    pub algorithms: BTreeMap<String, AlgorithmSummary>,
    /// Algorithms ordered by median final `metric_M`, lowest first.
    pub ranking: Vec<String>,
}

impl ExperimentSummary {
    pub fn algorithm(&self, alg: Algorithm) -> Option<&AlgorithmSummary> {
        self.algorithms.get(alg.name())
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn summarize_run(cfg: &ExperimentConfig, run: &SeedRun, csv: Option<PathBuf>) -> RunSummary {
    let last = run.final_record();
    let [lo, hi] = cfg.slope_window;
    let slope = match run.status {
        RunStatus::Ok => rate_slope(&run.records, lo, hi.min(run.iterations)).ok(),
        _ => None,
    };
    RunSummary {
        algorithm: run.algorithm,
        seed: run.seed,
        iterations: run.iterations,
        status: run.status.clone(),
        final_metric_m: last.map(|r| r.metric_m),
        final_upper_loss: last.map(|r| r.upper_loss),
        final_iterate_loss: run.final_iterate_loss,
        final_samples_upper: last.map(|r| r.samples_upper),
        rate_slope: slope,
        csv,
    }
}

fn aggregate(runs: &[RunSummary], alg: Algorithm) -> AlgorithmSummary {
    let mine: Vec<&RunSummary> = runs.iter().filter(|r| r.algorithm == alg).collect();
    let finals: Vec<f64> = mine.iter().filter_map(|r| r.final_metric_m).collect();
    let losses: Vec<f64> = mine.iter().filter_map(|r| r.final_upper_loss).collect();
    let iterate: Vec<f64> = mine.iter().filter_map(|r| r.final_iterate_loss).collect();
    let slopes: Vec<f64> = mine.iter().filter_map(|r| r.rate_slope).collect();
    AlgorithmSummary {
        runs: mine.len(),
        diverged: mine.iter().filter(|r| r.status != RunStatus::Ok).count(),
        median_final_metric_m: median(&finals),
        mean_final_metric_m: mean(&finals),
        median_final_upper_loss: median(&losses),
        median_final_iterate_loss: median(&iterate),
        median_rate_slope: median(&slopes),
    }
}

pub fn csv_name(alg: Algorithm, index: usize, seed: u64) -> String {
    format!("{}_run{index:02}_seed{seed}.csv", alg.name())
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    if records.is_empty() {
        w.write_record(RunRecord::CSV_HEADER)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RunRecord::CSV_HEADER {
        anyhow::bail!("{}: unexpected header {header:?}", path.display());
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Writes `value` as JSON through a temporary file and a rename.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

/// Output directory: the config's `output`, else `$DIAMOND_OUT`, else `out`.
pub fn output_root(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output
        .clone()
        .or_else(|| std::env::var_os("DIAMOND_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Runs every (algorithm, seed) pair. With `out` set, writes one CSV per
/// pair and `summary.json` there.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<(ExperimentSummary, Vec<SeedRun>)> {
    cfg.validate()?;
    let inst = build_instance(cfg)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut runs = Vec::new();
    let mut summaries = Vec::new();
    for &alg in &cfg.algorithms {
        for (idx, &seed) in cfg.seeds.iter().enumerate() {
            let r = match run_seed(&inst, cfg, alg, seed) {
                Ok(r) => r,
                Err(e) => SeedRun {
                    algorithm: alg,
                    seed,
                    iterations: horizon(cfg, alg, inst.k()),
                    status: RunStatus::Failed { message: format!("{e:#}") },
                    records: Vec::new(),
                    final_iterate_loss: None,
                },
            };
            if let RunStatus::Diverged { iteration } = r.status {
                log::warn!("{alg} seed {seed} diverged at iteration {iteration}");
            }
            let csv = match out {
                Some(dir) if r.status == RunStatus::Ok => {
                    let p = dir.join(csv_name(alg, idx, seed));
                    write_records(&p, &r.records)?;
                    Some(p)
                }
                _ => None,
            };
            summaries.push(summarize_run(cfg, &r, csv));
            runs.push(r);
        }
    }
    let algorithms: BTreeMap<String, AlgorithmSummary> = cfg
        .algorithms
        .iter()
        .map(|&a| (a.name().to_string(), aggregate(&summaries, a)))
        .collect();
    let mut ranking: Vec<(String, f64)> = algorithms
        .iter()
        .map(|(k, v)| (k.clone(), v.median_final_metric_m.unwrap_or(f64::INFINITY)))
        .collect();
    ranking.sort_by(|a, b| a.1.total_cmp(&b.1));
    let summary = ExperimentSummary {
        code_version: CODE_VERSION,
        config: cfg.clone(),
        k: inst.k(),
        lambda: inst.cm.lambda(),
        estimator_l_g: inst.estimator.l_g,
        estimator_mu_g: inst.estimator.mu_g,
        runs: summaries,
        algorithms,
        ranking: ranking.into_iter().map(|r| r.0).collect(),
    };
    if let Some(dir) = out {
        write_json_atomic(&dir.join("summary.json"), &summary)?;
    }
    Ok((summary, runs))
}
