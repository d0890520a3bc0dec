use diamond_core::hypergrad::{neumann_mean, surrogate_grad, EstimatorConfig, NeumannSample};
use diamond_core::numerics::{Lane, Purpose, RngStream, Vector};
use diamond_core::problems::{
    make_synthetic_dataset, BilevelOracle, ExactOracle, LogisticConfig, LogisticProblem, QuadraticConfig,
    QuadraticProblem, Sample,
};
use proptest::prelude::*;

fn quadratic(seed: u64, m: usize, conditioning: f64, sigma: f64) -> QuadraticProblem {
    let mut rng = RngStream::new(seed, Lane::global(Purpose::ProblemInstance));
    QuadraticProblem::generate(
        &QuadraticConfig {
            m,
            d_up: 3,
            d_low: 4,
            conditioning,
            sigma_f: sigma,
            sigma_g: sigma,
            ..QuadraticConfig::default()
        },
        &mut rng,
    )
    .unwrap()
}

fn logistic(seed: u64) -> LogisticProblem {
    let mut rng = RngStream::new(seed, Lane::global(Purpose::Dataset));
    let data = make_synthetic_dataset(2, 40, 3, 1.5, &mut rng).unwrap();
    LogisticProblem::new(
        data,
        LogisticConfig {
            batch_size: 4,
            ..LogisticConfig::default()
        },
    )
    .unwrap()
}

fn point(rng: &mut RngStream, dim: usize, scale: f64) -> Vector {
    Vector::from_fn(dim, |_| scale * (2.0 * rng.uniform() - 1.0))
}

/// Checks `μ‖Δ‖² ≤ ⟨∇g(y₁) − ∇g(y₂), Δ⟩` and `‖∇g(y₁) − ∇g(y₂)‖ ≤ L‖Δ‖`.
fn lower_witness(o: &dyn BilevelOracle, agent: usize, x: &Vector, y1: &Vector, y2: &Vector) {
    let pc = o.constants();
    let d = y1 - y2;
    let dg = &o.grad_y_g(agent, x, y1, Sample::Exact).unwrap() - &o.grad_y_g(agent, x, y2, Sample::Exact).unwrap();
    let n2 = d.norm_sq();
    assert!(dg.dot(&d) >= pc.mu_g * n2 * (1.0 - 1e-9), "strong convexity: {} < {}", dg.dot(&d), pc.mu_g * n2);
    assert!(dg.norm() <= pc.l_g * d.norm() * (1.0 + 1e-9), "smoothness: {} > {}", dg.norm(), pc.l_g * d.norm());
}

fn fd_check(o: &dyn ExactOracle, agent: usize, x: &Vector, tol: f64) {
    let g = o.hypergrad_exact(agent, x).unwrap();
    let h = 1e-5;
    for j in 0..x.dim() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let fd = (o.upper_objective(agent, &xp).unwrap() - o.upper_objective(agent, &xm).unwrap()) / (2.0 * h);
        assert!((fd - g[j]).abs() <= tol * (1.0 + g.norm()), "coordinate {j}: fd {fd} vs {}", g[j]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn quadratic_lower_level_is_strongly_convex_and_smooth(seed in 0u64..1000, cond in 1.0f64..50.0, ps in 0u64..1000) {
        let p = quadratic(seed, 2, cond, 0.0);
        let mut rng = RngStream::new(ps, Lane::global(Purpose::Custom(0)));
        let x = point(&mut rng, 3, 2.0);
        lower_witness(&p, 1, &x, &point(&mut rng, 4, 3.0), &point(&mut rng, 4, 3.0));
    }

    #[test]
    fn logistic_lower_level_is_strongly_convex_and_smooth(seed in 0u64..50, ps in 0u64..1000) {
        let p = logistic(seed);
        let mut rng = RngStream::new(ps, Lane::global(Purpose::Custom(0)));
        let x = point(&mut rng, p.d_up(), 1.0);
        lower_witness(&p, 0, &x, &point(&mut rng, p.d_low(), 2.0), &point(&mut rng, p.d_low(), 2.0));
    }

    #[test]
    fn quadratic_hypergradient_matches_finite_differences(seed in 0u64..1000, cond in 1.0f64..20.0, ps in 0u64..1000) {
        let p = quadratic(seed, 1, cond, 0.0);
        let mut rng = RngStream::new(ps, Lane::global(Purpose::Custom(0)));
        fd_check(&p, 0, &point(&mut rng, 3, 2.0), 1e-6);
    }

    #[test]
    fn surrogate_at_lower_solution_is_the_hypergradient(seed in 0u64..1000, ps in 0u64..1000) {
        let p = quadratic(seed, 1, 5.0, 0.0);
        let mut rng = RngStream::new(ps, Lane::global(Purpose::Custom(0)));
        let x = point(&mut rng, 3, 2.0);
        let ys = p.y_star(0, &x).unwrap();
        let s = surrogate_grad(&p, 0, &x, &ys).unwrap();
        let h = p.hypergrad_exact(0, &x).unwrap();
        prop_assert!(s.dist_sq(&h).sqrt() <= 1e-8 * (1.0 + h.norm()));
    }
}

#[test]
fn logistic_hypergradient_matches_finite_differences() {
    for seed in 0..4 {
        let p = logistic(seed);
        let mut rng = RngStream::new(seed, Lane::global(Purpose::Custom(0)));
        let x = point(&mut rng, p.d_up(), 1.0);
        fd_check(&p, 1, &x, 1e-5);
    }
}

#[test]
fn stochastic_gradients_are_unbiased() {
    let n = 4000;
    for (name, o) in [
        ("quadratic", Box::new(quadratic(3, 2, 4.0, 0.8)) as Box<dyn BilevelOracle>),
        ("logistic", Box::new(logistic(3))),
    ] {
        let mut rng = RngStream::new(1, Lane::global(Purpose::Custom(0)));
        let x = point(&mut rng, o.d_up(), 0.5);
        let y = point(&mut rng, o.d_low(), 0.5);
        let exact = [
            o.grad_x_f(1, &x, &y, Sample::Exact).unwrap(),
            o.grad_y_f(1, &x, &y, Sample::Exact).unwrap(),
            o.grad_y_g(1, &x, &y, Sample::Exact).unwrap(),
        ];
        let mut sums = exact.clone().map(|v| Vector::zeros(v.dim()));
        let mut sq = [0.0; 3];
        for _ in 0..n {
            let s = Sample::Key(rng.next_u64());
            let draws = [
                o.grad_x_f(1, &x, &y, s).unwrap(),
                o.grad_y_f(1, &x, &y, s).unwrap(),
                o.grad_y_g(1, &x, &y, s).unwrap(),
            ];
            for j in 0..3 {
                sq[j] += draws[j].dist_sq(&exact[j]);
                sums[j] += &draws[j];
            }
        }
        for j in 0..3 {
            sums[j].scale(1.0 / n as f64);
            let var = sq[j] / n as f64;
            let err = sums[j].dist_sq(&exact[j]);
            // E‖mean − g‖² = var / n; allow a generous multiple
            assert!(err <= 25.0 * var / n as f64 + 1e-24, "{name} gradient {j}: {err:e} vs var {var:e}");
        }
    }
}

#[test]
fn estimator_mean_matches_truncated_series() {
    let p = quadratic(5, 1, 3.0, 0.0);
    let cfg = EstimatorConfig::from_constants(6, p.constants()).unwrap();
    let x = Vector::from(vec![0.3, -0.2, 0.5]);
    let y = Vector::from(vec![0.1, 0.4, -0.6, 0.2]);
    let mut avg = Vector::zeros(3);
    for k in 0..cfg.k {
        avg += &NeumannSample::exact(cfg.k, k).evaluate(&p, 0, &x, &y, &cfg).unwrap();
    }
    avg.scale(1.0 / cfg.k as f64);
    let mean = neumann_mean(&p, 0, &x, &y, &cfg).unwrap();
    assert!(avg.dist_sq(&mean).sqrt() < 1e-12);
}

#[test]
fn estimator_converges_to_surrogate_as_k_grows() {
    let p = quadratic(6, 1, 3.0, 0.0);
    let x = Vector::from(vec![0.3, -0.2, 0.5]);
    let y = Vector::from(vec![0.1, 0.4, -0.6, 0.2]);
    let s = surrogate_grad(&p, 0, &x, &y).unwrap();
    let mut last = f64::INFINITY;
    for k in [1, 4, 16, 64, 256] {
        let cfg = EstimatorConfig::from_constants(k, p.constants()).unwrap();
        let gap = neumann_mean(&p, 0, &x, &y, &cfg).unwrap().dist_sq(&s).sqrt();
        assert!(gap <= last);
        last = gap;
    }
    assert!(last < 1e-12);
}
