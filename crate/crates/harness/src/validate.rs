//! Acceptance suites. Each criterion reports pass/fail with the measured
//! values; errors count as failures.

use std::str::FromStr;
use std::time::Instant;

use anyhow::{anyhow, ensure, Result};
use diamond_core::algorithms::{
    run, step, theorem1_constants, Algorithm, NetworkState, RunOptions, Schedule, StepContext,
};
use diamond_core::hypergrad::{
    k_for_bias, lemma1_constants, lemma2_constant, lemma3_bias_bound, EstimatorConfig, LipschitzBundle,
    NeumannSample,
};
use diamond_core::numerics::{sym_eigvals, Lane, Purpose, RngStream, Vector};
use diamond_core::problems::{
    make_synthetic_dataset, BilevelOracle, ExactOracle, LogisticConfig, LogisticProblem, ProblemConstants,
    QuadraticConfig, QuadraticProblem,
};
use diamond_core::topology::{erdos_renyi, ConsensusMatrix, MatrixKind, DEFAULT_ER_RETRIES};
use serde::Serialize;

use crate::config::{parse_config, ExperimentConfig};
use crate::experiment::{run_experiment, ExperimentSummary};
use crate::sweep::{parse_values, sweep};

#[derive(Clone, Debug, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub measured: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "criterion {:2} {}: {} ({:.1}s) {}",
            self.id,
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.seconds,
            self.measured
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Matrices,
    Hypergrad,
    Invariants,
    Convergence,
    All,
}

impl Suite {
    pub fn criteria(self) -> &'static [u8] {
        match self {
            Suite::Matrices => &[1],
            Suite::Hypergrad => &[2, 3, 10],
            Suite::Invariants => &[4, 5],
            Suite::Convergence => &[6, 7, 8, 9],
            Suite::All => &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10],
        }
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "matrices" => Suite::Matrices,
            "hypergrad" => Suite::Hypergrad,
            "invariants" => Suite::Invariants,
            "convergence" => Suite::Convergence,
            "all" => Suite::All,
            _ => {
                return Err(format!(
                    "unknown suite {s:?}; expected matrices, hypergrad, invariants, convergence or all"
                ))
            }
        })
    }
}

pub fn run_suite(suite: Suite) -> Vec<CriterionResult> {
    suite.criteria().iter().map(|&id| criterion(id)).collect()
}

type Check = fn() -> Result<(bool, String)>;

pub fn criterion(id: u8) -> CriterionResult {
    let (name, f): (&'static str, Check) = match id {
        1 => ("consensus matrices", consensus_matrices),
        2 => ("hypergradient finite differences", hypergradient_fd),
        3 => ("estimator bias decay", bias_decay),
        4 => ("tracking invariants and counters", algebraic_invariants),
        5 => ("deterministic convergence", deterministic_convergence),
        6 => ("rate slope", rate_check),
        7 => ("baseline ordering", baseline_ordering),
        8 => ("p_c insensitivity", pc_insensitivity),
        9 => ("hyperparameter task", hyperparameter_task),
        10 => ("constant calculators", constant_calculators),
        _ => {
            return CriterionResult {
                id,
                name: "unknown",
                pass: false,
                measured: format!("no criterion {id}"),
                seconds: 0.0,
            }
        }
    };
    let start = Instant::now();
    let (pass, measured) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e:#}")),
    };
    CriterionResult {
        id,
        name,
        pass,
        measured,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn second_magnitude(cm: &ConsensusMatrix) -> Result<f64> {
    let mut ev = sym_eigvals(cm.weights())?;
    ev.sort_by(f64::total_cmp);
    ev.pop();
    Ok(ev.iter().fold(0.0f64, |a, e| a.max(e.abs())))
}

fn consensus_matrices() -> Result<(bool, String)> {
    let start = Instant::now();
    let mut rng = RngStream::new(2024, Lane::global(Purpose::Custom(1)));
    let (mut worst_sum, mut worst_lambda_gap, mut max_lambda) = (0.0f64, 0.0f64, 0.0f64);
    let mut failures = Vec::new();
    for trial in 0..50 {
        let m = 2 + rng.uniform_int(29)?;
        let p_c = 0.3 + 0.6 * rng.uniform();
        let g = erdos_renyi(m, p_c, &mut rng, DEFAULT_ER_RETRIES)?;
        for kind in [MatrixKind::Metropolis, MatrixKind::Laplacian] {
            let cm = ConsensusMatrix::build(kind, &g)?;
            let w = cm.weights();
            for i in 0..m {
                let row: f64 = (0..m).map(|j| w.get(i, j)).sum();
                let col: f64 = (0..m).map(|j| w.get(j, i)).sum();
                worst_sum = worst_sum.max((row - 1.0).abs()).max((col - 1.0).abs());
                for j in 0..m {
                    if w.get(i, j).to_bits() != w.get(j, i).to_bits() {
                        failures.push(format!("trial {trial} {kind:?}: asymmetric at ({i},{j})"));
                    }
                    let expect_edge = i != j && g.has_edge(i, j);
                    if i != j && (w.get(i, j) != 0.0) != expect_edge {
                        failures.push(format!("trial {trial} {kind:?}: sparsity at ({i},{j})"));
                    }
                }
            }
            let lambda = cm.lambda();
            max_lambda = max_lambda.max(lambda);
            worst_lambda_gap = worst_lambda_gap.max((lambda - second_magnitude(&cm)?).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && worst_sum <= 1e-12 && max_lambda < 1.0 && worst_lambda_gap <= 1e-8 && secs < 10.0;
    let mut msg = format!(
        "100 matrices: max |row/col sum - 1| = {worst_sum:.2e}, max lambda = {max_lambda:.6}, \
         max |lambda - eigensolve| = {worst_lambda_gap:.2e}, {secs:.2}s"
    );
    if let Some(f) = failures.first() {
        msg.push_str(&format!("; {} structural failures, first: {f}", failures.len()));
    }
    Ok((pass, msg))
}

fn rel_err(a: &Vector, b: &Vector) -> f64 {
    a.dist_sq(b).sqrt() / b.norm().max(1e-300)
}

fn fd_hypergrad(exact: &dyn ExactOracle, agent: usize, x: &Vector, h: f64) -> Result<Vector> {
    let mut g = Vector::zeros(x.dim());
    for j in 0..x.dim() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp.as_mut_slice()[j] += h;
        xm.as_mut_slice()[j] -= h;
        g.as_mut_slice()[j] = (exact.upper_objective(agent, &xp)? - exact.upper_objective(agent, &xm)?) / (2.0 * h);
    }
    Ok(g)
}

fn hypergradient_fd() -> Result<(bool, String)> {
    let start = Instant::now();
    let mut worst_q = 0.0f64;
    for inst in 0..20u64 {
        let mut rng = RngStream::new(inst, Lane::global(Purpose::ProblemInstance));
        let cfg = QuadraticConfig {
            m: 2,
            d_up: 3 + (inst as usize % 4),
            d_low: 2 + (inst as usize % 5),
            conditioning: 2.0 + inst as f64,
            ..QuadraticConfig::default()
        };
        let p = QuadraticProblem::generate(&cfg, &mut rng)?;
        let x = rng.gaussian(cfg.d_up, 1.0)?;
        for agent in 0..cfg.m {
            let g = p.hypergrad_exact(agent, &x)?;
            let fd = fd_hypergrad(&p, agent, &x, 1e-4)?;
            worst_q = worst_q.max(rel_err(&fd, &g));
        }
    }
    let mut worst_l = 0.0f64;
    for inst in 0..5u64 {
        let mut rng = RngStream::new(100 + inst, Lane::global(Purpose::Dataset));
        let data = make_synthetic_dataset(2, 60, 4 + inst as usize, 1.5, &mut rng)?;
        let p = LogisticProblem::new(data, LogisticConfig::default())?;
        let x = Vector::from_fn(p.d_up(), |_| rng.uniform() * 2.0 - 1.0);
        for agent in 0..2 {
            let g = p.hypergrad_exact(agent, &x)?;
            let fd = fd_hypergrad(&p, agent, &x, 1e-4)?;
            worst_l = worst_l.max(rel_err(&fd, &g));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst_q <= 1e-5 && worst_l <= 1e-4 && secs < 120.0,
        format!("max relative error: quadratic {worst_q:.2e} (tol 1e-5), logistic {worst_l:.2e} (tol 1e-4), {secs:.2}s"),
    ))
}

fn bias_decay() -> Result<(bool, String)> {
    let start = Instant::now();
    // g = ½y² − xy, f = ½y², estimator L_g = 2: E[estimate] = (1 − 2^{−K})·y
    let p = QuadraticProblem::scalar(1.0, 1.0, 0.0)?.with_l_g(2.0)?;
    let (x, y) = (Vector::from(vec![0.3]), Vector::from(vec![0.5]));
    let surrogate = 0.5;
    const N: usize = 100_000;
    let mut ok = true;
    let mut rows = Vec::new();
    for k in [1usize, 5, 10, 20] {
        let cfg = EstimatorConfig::new(k, 2.0, 1.0)?;
        let mut s = RngStream::new(7, Lane::global(Purpose::Custom(3 + k as u32)));
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..N {
            let v = NeumannSample::draw(&mut s, k)?.evaluate(&p, 0, &x, &y, &cfg)?[0];
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / N as f64;
        let se = ((sum2 / N as f64 - mean * mean) / N as f64).sqrt();
        let analytic = (1.0 - 0.5f64.powi(k as i32)) * 0.5;
        let bias_factor = (surrogate - analytic) / 0.5;
        let bound = lemma3_bias_bound(p.constants(), k);
        let analytic_bias = surrogate - analytic;
        let within = (mean - analytic).abs() <= 3.0 * se;
        let hand = (bias_factor - 0.5f64.powi(k as i32)).abs() <= 1e-15;
        let under = analytic_bias.abs() <= bound && (mean - surrogate).abs() <= bound + 3.0 * se;
        ok &= within && hand && under;
        rows.push(format!(
            "K={k}: mc={mean:.6} analytic={analytic:.6} se={se:.1e} bias={analytic_bias:.3e} bound={bound:.3e}"
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((ok && secs < 60.0, format!("{}; {secs:.1}s", rows.join("; "))))
}

const INVARIANT_STEPS: u64 = 1000;

fn algebraic_invariants() -> Result<(bool, String)> {
    let mut rng = RngStream::new(11, Lane::global(Purpose::ProblemInstance));
    let p = QuadraticProblem::generate(
        &QuadraticConfig {
            m: 9,
            sigma_f: 0.5,
            sigma_g: 0.5,
            ..QuadraticConfig::default()
        },
        &mut rng,
    )?;
    let mut trng = RngStream::new(11, Lane::global(Purpose::Topology));
    let g = erdos_renyi(9, 0.3, &mut trng, DEFAULT_ER_RETRIES)?;
    let cm = ConsensusMatrix::build(MatrixKind::Laplacian, &g)?;
    let k = 10;
    let sched = Schedule {
        c_alpha: 0.3,
        c_beta: 0.5,
        c_eta: 10.0,
        c_gamma: 10.0,
        ..Schedule::META_LEARNING
    };
    let ctx = StepContext {
        cm: &cm,
        oracle: &p,
        est: EstimatorConfig::from_constants(k, p.constants())?,
        sched,
        seed: 5,
    };
    let mut net = NetworkState::uniform(9, &Vector::zeros(p.d_up()), &Vector::zeros(p.d_low()))?;
    let (mut worst_track, mut worst_avg) = (0.0f64, 0.0f64);
    for _ in 0..INVARIANT_STEPS {
        let alpha = sched.values(net.t).alpha;
        let x_bar = net.x_bar();
        let next = step(Algorithm::Diamond, &net, &ctx)?;
        let u_bar = next.u_bar();
        let scale = 1.0f64.max(u_bar.max_abs());
        worst_track = worst_track.max((&u_bar - &next.p_bar()).max_abs() / scale);
        let predicted = &x_bar - &u_bar.scaled(alpha);
        worst_avg = worst_avg.max((&next.x_bar() - &predicted).max_abs() / 1.0f64.max(x_bar.max_abs()));
        net = next;
    }
    let t = INVARIANT_STEPS;
    let est = (k + 2) as u64;
    let c = net.counters;
    let counters_ok = c.comm_rounds == t
        && c.iterations == t
        && c.upper_ifo_per_agent == 2 * est * (t - 1) + est
        && c.lower_ifo_per_agent == 2 * (t - 1) + 1;
    Ok((
        worst_track <= 1e-12 && worst_avg <= 1e-12 && counters_ok,
        format!(
            "max |u_bar - p_bar| = {worst_track:.2e}, max average-preservation error = {worst_avg:.2e}, \
             comm_rounds = {}, upper IFO = {} (closed form {}), lower IFO = {}",
            c.comm_rounds,
            c.upper_ifo_per_agent,
            2 * est * (t - 1) + est,
            c.lower_ifo_per_agent
        ),
    ))
}

/// Plain descent on a single-agent quadratic, written against the raw
/// matrices: `x ← x − α_t h_t`, `y ← y − β_t (A y − B x − c)` with
/// `h_t = ρ(x − s) + (K/L)·Bᵀ(I − A/L)^k (y − r)` for the drawn index `k`.
fn reference_trace(p: &QuadraticProblem, est: &EstimatorConfig, sched: &Schedule, seed: u64, steps: u64) -> Result<Vec<Vector>> {
    let a = p.agent(0);
    let (mut x, mut y) = (Vector::zeros(p.d_up()), Vector::zeros(p.d_low()));
    let mut trace = vec![x.clone()];
    for t in 0..steps {
        let mut s = RngStream::new(seed, Lane::new(0, t, Purpose::UpperEstimate));
        let k = NeumannSample::draw(&mut s, est.k)?.k;
        let mut w = &y - &a.r;
        for _ in 0..k {
            let aw = a.a.matvec(&w);
            w.axpy(-1.0 / est.l_g, &aw);
        }
        let mut h = (&x - &a.s).scaled(p.rho());
        h.axpy(est.k as f64 / est.l_g, &a.b.matvec_t(&w));
        let gy = &(&a.a.matvec(&y) - &a.b.matvec(&x)) - &a.c;
        let v = sched.values(t);
        x.axpy(-v.alpha, &h);
        y.axpy(-v.beta, &gy);
        trace.push(x.clone());
    }
    Ok(trace)
}

fn deterministic_convergence() -> Result<(bool, String)> {
    let sched = Schedule {
        c_alpha: 0.3,
        c_beta: 1.0,
        unit_momentum: true,
        ..Schedule::META_LEARNING
    };
    const T: u64 = 5000;

    let cfg = QuadraticConfig {
        m: 5,
        realizable: true,
        ..QuadraticConfig::default()
    };
    let mut rng = RngStream::new(3, Lane::global(Purpose::ProblemInstance));
    let p = QuadraticProblem::generate(&cfg, &mut rng)?;
    let k = k_for_bias(p.constants(), 1e-12)?;
    let bound = lemma3_bias_bound(p.constants(), k);
    let mut trng = RngStream::new(3, Lane::global(Purpose::Topology));
    let cm = ConsensusMatrix::build(MatrixKind::Laplacian, &erdos_renyi(5, 0.5, &mut trng, DEFAULT_ER_RETRIES)?)?;
    let est = EstimatorConfig::from_constants(k, p.constants())?;
    let opts = RunOptions {
        algorithm: Algorithm::Diamond,
        iterations: T,
        cadence: 100,
        seed: 1,
        estimator: est,
        schedule: sched,
    };
    let net = NetworkState::uniform(5, &Vector::zeros(p.d_up()), &Vector::zeros(p.d_low()))?;
    let out = run(&opts, net, &cm, &p)?;
    let first_hit = out.records.iter().find(|r| r.metric_m <= 1e-6).map(|r| r.t);
    let final_m = out.records.last().ok_or_else(|| anyhow!("no records"))?.metric_m;

    let single = QuadraticProblem::generate(&QuadraticConfig { m: 1, ..cfg }, &mut rng)?;
    let est1 = EstimatorConfig::from_constants(k_for_bias(single.constants(), 1e-12)?, single.constants())?;
    let steps = 2000;
    let reference = reference_trace(&single, &est1, &sched, 9, steps)?;
    let cm1 = ConsensusMatrix::build(MatrixKind::Laplacian, &diamond_core::topology::Graph::complete(1))?;
    let ctx = StepContext {
        cm: &cm1,
        oracle: &single,
        est: est1,
        sched,
        seed: 9,
    };
    let mut state = NetworkState::uniform(1, &Vector::zeros(single.d_up()), &Vector::zeros(single.d_low()))?;
    let mut worst = 0.0f64;
    for r in reference.iter().skip(1) {
        state = step(Algorithm::Diamond, &state, &ctx)?;
        worst = worst.max(state.agents[0].x.dist_sq(r).sqrt());
    }
    ensure!(bound <= 1e-12, "bias bound {bound:e} at K = {k}");
    Ok((
        final_m <= 1e-6 && first_hit.is_some() && worst <= 1e-8,
        format!(
            "K = {k} (bias bound {bound:.1e}); metric_M <= 1e-6 first at t = {}, final {final_m:.2e}; \
             single-agent max |x - reference| over {steps} steps = {worst:.2e}",
            first_hit.map_or("never".to_string(), |t| t.to_string())
        ),
    ))
}

const QUADRATIC_STOCHASTIC: &str = r#"
algorithms = ["diamond"]
iterations = 10000
seeds = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]
cadence = 10
slope_window = [100, 10000]
[problem]
kind = "quadratic"
seed = 0
sigma_f = 0.5
sigma_g = 0.5
[topology]
m = 9
p_c = 0.3
[estimator]
k = 20
[schedule]
c_alpha = 0.3
c_beta = 0.5
c_eta = 10.0
c_gamma = 10.0
"#;

const LOGISTIC_SMALL: &str = r#"
algorithms = ["diamond", "dsgd", "gtsgd", "msgd"]
iterations = 2000
budget = 40000
seeds = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]
cadence = 50
[problem]
kind = "logistic"
features = 10
n_per_agent = 100
separation = 2.0
x_clamp = 3.0
batch_size = 1
[topology]
m = 9
p_c = 0.3
[estimator]
k = 20
[schedule]
c_alpha = 1.0
c_beta = 2.0
c_eta = 1.0
c_gamma = 1.0
"#;

const HYPEROPT: &str = r#"
algorithms = ["diamond", "dsgd"]
iterations = 5000
budget = 100000
seeds = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]
cadence = 250
[problem]
kind = "logistic"
features = 50
n_per_agent = 200
separation = 2.0
x_clamp = 3.0
batch_size = 1
[topology]
m = 5
p_c = 0.5
[estimator]
k = 20
[schedule]
preset = "hyperopt"
"#;

fn config(text: &str) -> Result<ExperimentConfig> {
    Ok(parse_config(text)?)
}

fn median_final(s: &ExperimentSummary, alg: Algorithm) -> Result<f64> {
    s.algorithm(alg)
        .and_then(|a| a.median_final_metric_m)
        .ok_or_else(|| anyhow!("no finished {alg} runs"))
}

fn rate_check() -> Result<(bool, String)> {
    let start = Instant::now();
    let (s, _) = run_experiment(&config(QUADRATIC_STOCHASTIC)?, None)?;
    let a = s.algorithm(Algorithm::Diamond).ok_or_else(|| anyhow!("no diamond summary"))?;
    let slope = a.median_rate_slope.ok_or_else(|| anyhow!("no slope"))?;
    let secs = start.elapsed().as_secs_f64();
    Ok((
        (-1.0..=-0.4).contains(&slope) && a.diverged == 0 && secs < 300.0,
        format!("median slope over [1e2, 1e4] = {slope:.3} (band [-1.0, -0.4]), {} runs, {secs:.1}s", a.runs),
    ))
}

fn baseline_ordering() -> Result<(bool, String)> {
    let start = Instant::now();
    let mut quad = config(QUADRATIC_STOCHASTIC)?;
    quad.algorithms = Algorithm::ALL.to_vec();
    quad.budget = Some(220_000);
    let logi = config(LOGISTIC_SMALL)?;
    let mut ok = true;
    let mut rows = Vec::new();
    for (label, base) in [("quadratic", &quad), ("logistic", &logi)] {
        for m in [9usize, 15] {
            let mut cfg = base.clone();
            cfg.topology.m = m;
            let (s, _) = run_experiment(&cfg, None)?;
            let d = median_final(&s, Algorithm::Diamond)?;
            let mut parts = vec![format!("diamond {d:.3e}")];
            for alg in [Algorithm::Msgd, Algorithm::Gtsgd, Algorithm::Dsgd] {
                let v = median_final(&s, alg)?;
                ok &= d <= v;
                parts.push(format!("{alg} {v:.3e}"));
            }
            rows.push(format!("{label} m={m}: {}", parts.join(", ")));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((ok && secs < 600.0, format!("median final metric_M at equal budget; {}; {secs:.1}s", rows.join("; "))))
}

/// Relative slack allowed when checking that the median final metric does
/// not grow with `p_c`.
pub const PC_MONOTONE_SLACK: f64 = 0.05;

fn pc_insensitivity() -> Result<(bool, String)> {
    let base = config(QUADRATIC_STOCHASTIC)?;
    let (_, summaries) = sweep(&base, "topology.p_c", &parse_values("0.3,0.5,0.8"), None)?;
    let meds = summaries
        .iter()
        .map(|s| median_final(s, Algorithm::Diamond))
        .collect::<Result<Vec<_>>>()?;
    let (lo, hi) = meds.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    let within_two = hi <= 2.0 * lo;
    let monotone = meds.windows(2).all(|w| w[1] <= (1.0 + PC_MONOTONE_SLACK) * w[0]);
    Ok((
        within_two && monotone,
        format!(
            "median final metric_M at p_c = 0.3/0.5/0.8: {:.4e} / {:.4e} / {:.4e}; max/min = {:.3}; \
             non-increasing within {:.0}%: {monotone}",
            meds[0],
            meds[1],
            meds[2],
            hi / lo,
            PC_MONOTONE_SLACK * 100.0
        ),
    ))
}

fn hyperparameter_task() -> Result<(bool, String)> {
    let (s, _) = run_experiment(&config(HYPEROPT)?, None)?;
    let get = |alg: Algorithm| -> Result<(f64, f64, f64)> {
        let a = s.algorithm(alg).ok_or_else(|| anyhow!("no {alg} summary"))?;
        Ok((
            a.median_final_upper_loss.ok_or_else(|| anyhow!("no {alg} loss"))?,
            a.median_final_iterate_loss.ok_or_else(|| anyhow!("no {alg} iterate loss"))?,
            a.median_final_metric_m.ok_or_else(|| anyhow!("no {alg} metric"))?,
        ))
    };
    let (dl, di, dm) = get(Algorithm::Diamond)?;
    let (sl, si, sm) = get(Algorithm::Dsgd)?;
    Ok((
        dl <= sl,
        format!(
            "median final validation loss l(x_bar): diamond {dl:.5} vs dsgd {sl:.5}; \
             at the agents' own iterates: {di:.5} vs {si:.5}; metric_M: {dm:.3e} vs {sm:.3e}"
        ),
    ))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1.0)
}

fn constant_calculators() -> Result<(bool, String)> {
    let pc = ProblemConstants::unit();
    let lb = lemma1_constants(&pc)?;
    let l2 = lemma2_constant(&pc, 1)?;
    let mut bad = Vec::new();
    let mut check = |what: &str, got: f64, want: f64| {
        if !close(got, want) {
            bad.push(format!("{what}: {got} vs {want}"));
        }
    };
    check("L_f", lb.l_f, 4.0);
    check("L_l", lb.l_l, 8.0);
    check("L_y", lb.l_y, 1.0);
    check("L_K", l2.l_k, 8.0);

    let t = theorem1_constants(&pc, &LipschitzBundle { l_k: l2.l_k, ..lb }, 1, 0.0)?;
    // hand values for L_f = 4, L_y = 1, L_K = 8, mu = 1, L = 2, m = 1, lambda = 0
    let c_bar_y = 0.4f64.sqrt();
    let c_beta = 48.0 / c_bar_y;
    let c_bar_u = 1.0 / 1_658_880.0;
    check("L_mu_g", t.l_mu_g, 2.0 / 3.0);
    check("c_bar_y", t.c_bar_y, c_bar_y);
    check("c_beta", t.c_beta, c_beta);
    check("c_bar_eta", t.c_bar_eta, 552_960.0);
    check("c_bar_gamma", t.c_bar_gamma, 34_560.0);
    check("c_bar_u", t.c_bar_u, c_bar_u);
    check("c_gamma", t.c_gamma, 5_437_440.0 + 1.0 / 12.0);
    let alpha_terms = [
        1.0 / 128.0f64.sqrt(),
        c_bar_u / 30.0,
        2.0 * c_bar_u,
        1.0 / 15_360.0,
        34_560.0 * c_bar_u / 320.0,
        1.0 / 40.0,
        1.0 / 12.0,
        (1.0 / 7680.0f64).sqrt(),
        108.0,
        2.0,
        1.0,
    ];
    for (i, (&got, &want)) in t.alpha_terms.iter().zip(&alpha_terms).enumerate() {
        check(&format!("alpha term {}", i + 1), got, want);
    }
    check("alpha bound", t.alpha_bound, 1.0 / 49_766_400.0);
    check("beta bound", t.beta_bound, 1.0 / 3.0);
    check("c_bar_x(0.1)", t.c_bar_x(0.1), 60.0);
    let singular = t.c_eta_singular && t.c_eta.is_infinite();
    if !singular {
        bad.push(format!("c_eta expected singular, got {}", t.c_eta));
    }
    Ok((
        bad.is_empty(),
        if bad.is_empty() {
            format!(
                "L_f = {}, L_l = {}, L_y = {}, L_K = {}, c_bar_y = {:.6}, alpha bound = {:.4e}, all 26 values within 1e-12",
                lb.l_f, lb.l_l, lb.l_y, l2.l_k, t.c_bar_y, t.alpha_bound
            )
        } else {
            bad.join("; ")
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names() {
        assert_eq!("all".parse::<Suite>().unwrap().criteria().len(), 10);
        assert_eq!("matrices".parse::<Suite>().unwrap().criteria(), &[1]);
        assert!("everything".parse::<Suite>().is_err());
        assert!(!criterion(42).pass);
    }

    #[test]
    fn embedded_configs_parse() {
        for text in [QUADRATIC_STOCHASTIC, LOGISTIC_SMALL, HYPEROPT] {
            config(text).unwrap();
        }
    }
}
