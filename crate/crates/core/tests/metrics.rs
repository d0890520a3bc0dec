use diamond_core::algorithms::{AgentState, NetworkState};
use diamond_core::hypergrad::{neumann_mean, EstimatorConfig};
use diamond_core::metrics::{estimation_errors, exact_metric};
use diamond_core::numerics::{lu_solve, Lane, Purpose, RngStream, Vector};
use diamond_core::problems::{BilevelOracle, ExactOracle, QuadraticConfig, QuadraticProblem, Sample};
use proptest::prelude::*;

fn problem(seed: u64, m: usize) -> QuadraticProblem {
    let mut rng = RngStream::new(seed, Lane::global(Purpose::ProblemInstance));
    QuadraticProblem::generate(
        &QuadraticConfig {
            m,
            d_up: 2,
            d_low: 3,
            ..QuadraticConfig::default()
        },
        &mut rng,
    )
    .unwrap()
}

fn random_net(p: &QuadraticProblem, seed: u64) -> NetworkState {
    let mut rng = RngStream::new(seed, Lane::global(Purpose::Custom(5)));
    let agents = (0..p.num_agents())
        .map(|_| AgentState::new(rng.gaussian(p.d_up(), 1.0).unwrap(), rng.gaussian(p.d_low(), 1.0).unwrap()))
        .collect();
    NetworkState::from_agents(agents).unwrap()
}

/// `y*` by a dense solve and `l` from the raw matrices.
fn brute_y_star(p: &QuadraticProblem, i: usize, x: &Vector) -> Vector {
    let a = p.agent(i);
    lu_solve(a.a.as_matrix(), &(&a.b.matvec(x) + &a.c)).unwrap()
}

fn brute_l(p: &QuadraticProblem, x: &Vector) -> f64 {
    let m = p.num_agents();
    (0..m)
        .map(|i| {
            let ys = brute_y_star(p, i, x);
            0.5 * ys.dist_sq(&p.agent(i).r) + 0.5 * p.rho() * x.dist_sq(&p.agent(i).s)
        })
        .sum::<f64>()
        / m as f64
}

fn brute_metric(p: &QuadraticProblem, net: &NetworkState) -> (f64, f64, f64) {
    let m = net.num_agents();
    let xs: Vec<Vector> = net.agents.iter().map(|a| a.x.clone()).collect();
    let mut x_bar = Vector::zeros(p.d_up());
    for x in &xs {
        x_bar.axpy(1.0 / m as f64, x);
    }
    let h = 1e-5;
    let grad2: f64 = (0..p.d_up())
        .map(|j| {
            let (mut xp, mut xm) = (x_bar.clone(), x_bar.clone());
            xp[j] += h;
            xm[j] -= h;
            ((brute_l(p, &xp) - brute_l(p, &xm)) / (2.0 * h)).powi(2)
        })
        .sum();
    let cons: f64 = xs.iter().map(|x| x.dist_sq(&x_bar)).sum();
    let low: f64 = net
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| brute_y_star(p, i, &a.x).dist_sq(&a.y))
        .sum();
    (grad2, cons, low)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn metric_matches_brute_force(seed in 0u64..1000, m in 1usize..6) {
        let p = problem(seed, m);
        let net = random_net(&p, seed);
        let terms = exact_metric(&net, &p).unwrap();
        let (g, c, l) = brute_metric(&p, &net);
        prop_assert!(rel(terms.stationarity_err, g) < 1e-6, "{} vs {}", terms.stationarity_err, g);
        prop_assert!(rel(terms.consensus_err, c) < 1e-12 || (terms.consensus_err - c).abs() < 1e-14);
        prop_assert!(rel(terms.lower_err, l) < 1e-10);
        prop_assert!(rel(terms.metric_m, g + c + l) < 1e-6);
    }

    #[test]
    fn metric_is_invariant_under_agent_relabeling(seed in 0u64..1000) {
        // identical agents make any permutation of the states a relabeling
        let base = problem(seed, 1);
        let a = base.agent(0).clone();
        let p = QuadraticProblem::from_parts(vec![a.clone(), a.clone(), a.clone(), a], base.rho(), 0.0, 0.0, 10.0).unwrap();
        let net = random_net(&p, seed);
        let mut shuffled = net.agents.clone();
        let mut rng = RngStream::new(seed, Lane::global(Purpose::Custom(6)));
        rng.shuffle(&mut shuffled);
        let perm = NetworkState::from_agents(shuffled).unwrap();
        let (t1, t2) = (exact_metric(&net, &p).unwrap(), exact_metric(&perm, &p).unwrap());
        prop_assert!(rel(t2.metric_m, t1.metric_m) < 1e-12);
        prop_assert!(rel(t2.consensus_err, t1.consensus_err) < 1e-12);
    }
}

#[test]
fn metric_vanishes_at_consensus_on_the_minimizer() {
    let p = problem(2, 3);
    let x = p.global_min().unwrap();
    let agents = (0..3).map(|i| AgentState::new(x.clone(), p.y_star(i, &x).unwrap())).collect();
    let terms = exact_metric(&NetworkState::from_agents(agents).unwrap(), &p).unwrap();
    assert!(terms.metric_m < 1e-20, "{}", terms.metric_m);
}

#[test]
fn estimation_errors_vanish_for_exact_directions_where_upper_gradient_in_y_is_zero() {
    let p = problem(4, 2);
    let cfg = EstimatorConfig::from_constants(8, p.constants()).unwrap();
    let agents = (0..2)
        .map(|i| {
            let x = Vector::from(vec![0.3 * i as f64, -0.4]);
            let y = p.agent(i).r.clone();
            let mut a = AgentState::new(x.clone(), y.clone());
            a.p = neumann_mean(&p, i, &x, &y, &cfg).unwrap();
            a.v = p.grad_y_g(i, &x, &y, Sample::Exact).unwrap();
            a
        })
        .collect();
    let d = estimation_errors(&NetworkState::from_agents(agents).unwrap(), &p, &cfg, 50, 1).unwrap();
    assert!(d.ef_norm2 < 1e-28 && d.eg_norm2 < 1e-28 && d.bias_norm2 < 1e-28, "{d:?}");
}

#[test]
fn estimation_errors_measure_offsets() {
    let p = problem(4, 2);
    let cfg = EstimatorConfig::from_constants(30, p.constants()).unwrap();
    let net = random_net(&p, 3);
    let mut shifted = net.clone();
    for (i, a) in shifted.agents.iter_mut().enumerate() {
        a.v = &p.grad_y_g(i, &a.x, &a.y, Sample::Exact).unwrap() + &Vector::filled(3, 1.0);
    }
    let d = estimation_errors(&shifted, &p, &cfg, 4000, 2).unwrap();
    assert!((d.eg_norm2 - 6.0).abs() < 1e-9, "{}", d.eg_norm2);
    assert!(d.bias_bound2 > 0.0);
    assert!(estimation_errors(&net, &p, &cfg, 0, 2).is_err());
}
