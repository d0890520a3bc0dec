//! Synthetic quadratic bilevel instance with closed-form lower solutions.
//!
//! Per agent:
//! `g_i(x, y) = ½ yᵀA_i y − yᵀ(B_i x + c_i)` and
//! `f_i(x, y) = ½‖y − r_i‖² + (ρ/2)‖x − s_i‖²`,
//! so `y_i*(x) = A_i⁻¹(B_i x + c_i)`, `∇²_xy g_i = −B_iᵀ` and
//! `∇l_i(x) = ρ(x − s_i) + B_iᵀA_i⁻¹(y_i*(x) − r_i)`.

use serde::{Deserialize, Serialize};

use super::{check_agent, check_dim, BilevelOracle, ExactOracle, ProblemConstants, Sample};
use crate::error::{Error, Result};
use crate::numerics::{lu_solve, random_orthogonal, Cholesky, Lane, Matrix, Purpose, RngStream, SymMatrix, Vector};

const F_NOISE: u32 = 0;
const G_NOISE: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadraticConfig {
    pub m: usize,
    pub d_up: usize,
    pub d_low: usize,
    /// `L_g / μ_g`.
    pub conditioning: f64,
    pub mu_g: f64,
    /// Weight `ρ` of the upper-level proximity term.
    pub rho: f64,
    pub sigma_f: f64,
    pub sigma_g: f64,
    /// Scale of the coupling matrices `B_i`.
    pub coupling: f64,
    /// Radius of the `y` region over which `C_fy` is stated.
    pub radius: f64,
    /// Give all agents a common stationary point `x*` with `∇l_i(x*) = 0`
    /// and `y_i*(x*) = r_i`.
    pub realizable: bool,
}

impl Default for QuadraticConfig {
    fn default() -> Self {
        QuadraticConfig {
            m: 1,
            d_up: 5,
            d_low: 5,
            conditioning: 4.0,
            mu_g: 1.0,
            rho: 0.5,
            sigma_f: 0.0,
            sigma_g: 0.0,
            coupling: 1.0,
            radius: 10.0,
            realizable: false,
        }
    }
}

impl QuadraticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.d_up == 0 || self.d_low == 0 {
            return Err(Error::invalid("quadratic: m, d_up and d_low must be >= 1"));
        }
        if !(self.conditioning >= 1.0) || !self.conditioning.is_finite() {
            return Err(Error::invalid(format!(
                "quadratic: conditioning must be >= 1, got {}",
                self.conditioning
            )));
        }
        if !(self.mu_g > 0.0) {
            return Err(Error::invalid(format!("quadratic: mu_g must be > 0, got {}", self.mu_g)));
        }
        for (name, v) in [
            ("rho", self.rho),
            ("sigma_f", self.sigma_f),
            ("sigma_g", self.sigma_g),
            ("coupling", self.coupling),
            ("radius", self.radius),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("quadratic: {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct QuadraticAgent {
    pub a: SymMatrix,
    /// `d_low × d_up`.
    pub b: Matrix,
    pub c: Vector,
    pub r: Vector,
    pub s: Vector,
}

#[derive(Clone, Debug)]
pub struct QuadraticProblem {
    agents: Vec<QuadraticAgent>,
    factors: Vec<Cholesky>,
    rho: f64,
    d_up: usize,
    d_low: usize,
    constants: ProblemConstants,
    global_min: Option<Vector>,
}

/// Random instance with the default proximity weight and coupling.
pub fn quadratic_problem(
    m: usize,
    d_up: usize,
    d_low: usize,
    conditioning: f64,
    sigma_f: f64,
    sigma_g: f64,
    s: &mut RngStream,
) -> Result<QuadraticProblem> {
    let cfg = QuadraticConfig {
        m,
        d_up,
        d_low,
        conditioning,
        sigma_f,
        sigma_g,
        ..QuadraticConfig::default()
    };
    QuadraticProblem::generate(&cfg, s)
}

impl QuadraticProblem {
    pub fn generate(cfg: &QuadraticConfig, s: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let (d_up, d_low) = (cfg.d_up, cfg.d_low);
        let l_g = cfg.mu_g * cfg.conditioning;
        let x_star = s.gaussian(d_up, 1.0 / (d_up as f64).sqrt())?;
        let mut agents = Vec::with_capacity(cfg.m);
        for _ in 0..cfg.m {
            let mut eig: Vec<f64> = (0..d_low)
                .map(|_| cfg.mu_g + (l_g - cfg.mu_g) * s.uniform())
                .collect();
            eig[0] = cfg.mu_g;
            if d_low > 1 {
                eig[d_low - 1] = l_g;
            }
            let q = random_orthogonal(d_low, s);
            let a = Matrix::from_fn(d_low, d_low, |i, j| {
                (0..d_low).map(|k| q.get(i, k) * eig[k] * q.get(j, k)).sum()
            });
            let a = SymMatrix::from_matrix_symmetrized(&a)?;
            let scale = cfg.coupling / (d_up as f64).sqrt();
            let b = Matrix::from_fn(d_low, d_up, |_, _| scale * s.standard_normal());
            let c = s.gaussian(d_low, 1.0 / (d_low as f64).sqrt())?;
            let mut r = s.gaussian(d_low, 1.0 / (d_low as f64).sqrt())?;
            let mut sv = s.gaussian(d_up, 1.0 / (d_up as f64).sqrt())?;
            if cfg.realizable {
                let rhs = &b.matvec(&x_star) + &c;
                r = Cholesky::factor(&a)?.solve(&rhs);
                sv = x_star.clone();
            }
            agents.push(QuadraticAgent { a, b, c, r, s: sv });
        }
        let mut p = QuadraticProblem::from_parts(agents, cfg.rho, cfg.sigma_f, cfg.sigma_g, cfg.radius)?;
        // state the construction range so that L_g / mu_g equals the requested conditioning
        p.constants.mu_g = cfg.mu_g;
        p.constants.l_g = l_g;
        Ok(p)
    }

    /// Instance from explicit per-agent data. Constants are measured from the
    /// data; `C_fy` is stated over the ball `‖y‖ ≤ radius`.
    pub fn from_parts(
        agents: Vec<QuadraticAgent>,
        rho: f64,
        sigma_f: f64,
        sigma_g: f64,
        radius: f64,
    ) -> Result<Self> {
        let first = agents.first().ok_or_else(|| Error::invalid("quadratic: no agents"))?;
        let (d_low, d_up) = (first.b.rows(), first.b.cols());
        let mut mu_g = f64::INFINITY;
        let mut l_g: f64 = 0.0;
        let mut c_gxy: f64 = 0.0;
        let mut r_max: f64 = 0.0;
        let mut factors = Vec::with_capacity(agents.len());
        for (i, ag) in agents.iter().enumerate() {
            if ag.a.dim() != d_low || ag.b.rows() != d_low || ag.b.cols() != d_up {
                return Err(Error::invalid(format!("quadratic: agent {i} has inconsistent shapes")));
            }
            check_dim("quadratic c", &ag.c, d_low)?;
            check_dim("quadratic r", &ag.r, d_low)?;
            check_dim("quadratic s", &ag.s, d_up)?;
            let ev = ag.a.eigvals()?;
            mu_g = mu_g.min(ev[ev.len() - 1]);
            l_g = l_g.max(ev[0]);
            c_gxy = c_gxy.max(ag.b.spectral_norm()?);
            r_max = r_max.max(ag.r.norm());
            factors.push(Cholesky::factor(&ag.a)?);
        }
        let constants = ProblemConstants {
            mu_g,
            l_g,
            l_fx: rho,
            l_fy: 1.0,
            c_fy: radius + r_max,
            c_gxy,
            l_gxy: 0.0,
            l_gyy: 0.0,
            sigma_f,
            sigma_g,
        };
        constants.validate()?;
        let mut p = QuadraticProblem {
            agents,
            factors,
            rho,
            d_up,
            d_low,
            constants,
            global_min: None,
        };
        p.global_min = p.solve_global_min();
        Ok(p)
    }

    /// Single agent, `d_up = d_low = 1`, `c = r = s = 0`:
    /// `g = ½ a y² − b x y` and `f = ½ y² + (ρ/2) x²`.
    pub fn scalar(a: f64, b: f64, rho: f64) -> Result<Self> {
        let agent = QuadraticAgent {
            a: SymMatrix::from_rows(&[vec![a]])?,
            b: Matrix::from_rows(&[vec![b]])?,
            c: Vector::zeros(1),
            r: Vector::zeros(1),
            s: Vector::zeros(1),
        };
        QuadraticProblem::from_parts(vec![agent], rho, 0.0, 0.0, 1.0)
    }

    /// Overrides the stated smoothness constant, e.g. to run the estimator
    /// with `L_g` above the true spectrum.
    pub fn with_l_g(mut self, l_g: f64) -> Result<Self> {
        self.constants.l_g = l_g;
        self.constants.validate()?;
        Ok(self)
    }

    pub fn agent(&self, i: usize) -> &QuadraticAgent {
        &self.agents[i]
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `∇L(x) = 0` is linear in `x`:
    /// `[ρI + (1/m)Σ GᵢᵀGᵢ] x = (1/m)Σ [ρ sᵢ − Gᵢᵀ(Aᵢ⁻¹cᵢ − rᵢ)]` with `Gᵢ = Aᵢ⁻¹Bᵢ`.
    fn solve_global_min(&self) -> Option<Vector> {
        let (n, m) = (self.d_up, self.agents.len() as f64);
        let mut h = Matrix::from_fn(n, n, |i, j| if i == j { self.rho } else { 0.0 });
        let mut rhs = Vector::zeros(n);
        for (ag, ch) in self.agents.iter().zip(&self.factors) {
            let cols: Vec<Vector> = (0..n)
                .map(|j| ch.solve(&Vector::from_fn(self.d_low, |i| ag.b.get(i, j))))
                .collect();
            for i in 0..n {
                for j in 0..n {
                    h.set(i, j, h.get(i, j) + cols[i].dot(&cols[j]) / m);
                }
            }
            let w = &ch.solve(&ag.c) - &ag.r;
            for i in 0..n {
                rhs[i] += (self.rho * ag.s[i] - cols[i].dot(&w)) / m;
            }
        }
        lu_solve(&h, &rhs).ok()
    }

    fn noise(&self, agent: usize, sample: Sample, stream: u32, dim: usize, sigma: f64) -> Result<Option<Vector>> {
        match sample {
            Sample::Key(key) if sigma > 0.0 => {
                let mut s = RngStream::new(key, Lane::new(agent, 0, Purpose::SampleExpansion(stream)));
                Ok(Some(s.gaussian(dim, sigma / (dim as f64).sqrt())?))
            }
            _ => Ok(None),
        }
    }

    /// Noise on the joint upper gradient `(∇_x f, ∇_y f)`, split by block.
    fn f_noise(&self, agent: usize, sample: Sample) -> Result<Option<(Vector, Vector)>> {
        let dim = self.d_up + self.d_low;
        Ok(self
            .noise(agent, sample, F_NOISE, dim, self.constants.sigma_f)?
            .map(|n| {
                let v = n.into_inner();
                (Vector::from(v[..self.d_up].to_vec()), Vector::from(v[self.d_up..].to_vec()))
            }))
    }

    fn check(&self, agent: usize, x: &Vector, y: &Vector) -> Result<()> {
        check_agent(agent, self.agents.len())?;
        check_dim("x", x, self.d_up)?;
        check_dim("y", y, self.d_low)
    }
}

impl BilevelOracle for QuadraticProblem {
    fn num_agents(&self) -> usize {
        self.agents.len()
    }

    fn d_up(&self) -> usize {
        self.d_up
    }

    fn d_low(&self) -> usize {
        self.d_low
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn grad_x_f(&self, agent: usize, x: &Vector, y: &Vector, sample: Sample) -> Result<Vector> {
        self.check(agent, x, y)?;
        let mut g = (x - &self.agents[agent].s).scaled(self.rho);
        if let Some((nx, _)) = self.f_noise(agent, sample)? {
            g += &nx;
        }
        Ok(g)
    }

    fn grad_y_f(&self, agent: usize, x: &Vector, y: &Vector, sample: Sample) -> Result<Vector> {
        self.check(agent, x, y)?;
        let mut g = y - &self.agents[agent].r;
        if let Some((_, ny)) = self.f_noise(agent, sample)? {
            g += &ny;
        }
        Ok(g)
    }

    fn grad_y_g(&self, agent: usize, x: &Vector, y: &Vector, sample: Sample) -> Result<Vector> {
        self.check(agent, x, y)?;
        let ag = &self.agents[agent];
        let mut g = ag.a.matvec(y);
        g -= &ag.b.matvec(x);
        g -= &ag.c;
        if let Some(n) = self.noise(agent, sample, G_NOISE, self.d_low, self.constants.sigma_g)? {
            g += &n;
        }
        Ok(g)
    }

    fn hess_xy_g_times(&self, agent: usize, x: &Vector, y: &Vector, v: &Vector, _: Sample) -> Result<Vector> {
        self.check(agent, x, y)?;
        check_dim("hess_xy_g_times v", v, self.d_low)?;
        Ok(-&self.agents[agent].b.matvec_t(v))
    }

    fn hess_yy_g_times(&self, agent: usize, x: &Vector, y: &Vector, v: &Vector, _: Sample) -> Result<Vector> {
        self.check(agent, x, y)?;
        check_dim("hess_yy_g_times v", v, self.d_low)?;
        Ok(self.agents[agent].a.matvec(v))
    }

    fn upper_value(&self, agent: usize, x: &Vector, y: &Vector) -> Result<f64> {
        self.check(agent, x, y)?;
        let ag = &self.agents[agent];
        Ok(0.5 * y.dist_sq(&ag.r) + 0.5 * self.rho * x.dist_sq(&ag.s))
    }

    fn exact(&self) -> Option<&dyn ExactOracle> {
        Some(self)
    }
}

impl ExactOracle for QuadraticProblem {
    fn y_star(&self, agent: usize, x: &Vector) -> Result<Vector> {
        check_agent(agent, self.agents.len())?;
        check_dim("x", x, self.d_up)?;
        let ag = &self.agents[agent];
        Ok(self.factors[agent].solve(&(&ag.b.matvec(x) + &ag.c)))
    }

    fn hypergrad_exact(&self, agent: usize, x: &Vector) -> Result<Vector> {
        let ys = self.y_star(agent, x)?;
        let ag = &self.agents[agent];
        let w = self.factors[agent].solve(&(&ys - &ag.r));
        let mut g = (x - &ag.s).scaled(self.rho);
        g += &ag.b.matvec_t(&w);
        Ok(g)
    }

    fn upper_objective(&self, agent: usize, x: &Vector) -> Result<f64> {
        let ys = self.y_star(agent, x)?;
        self.upper_value(agent, x, &ys)
    }

    fn global_min(&self) -> Option<Vector> {
        self.global_min.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, rho: f64) -> QuadraticProblem {
        QuadraticProblem::scalar(a, 1.0, rho).unwrap()
    }

    fn v1(x: f64) -> Vector {
        Vector::from(vec![x])
    }

    #[test]
    fn scalar_instance_closed_forms() {
        let p = scalar(2.0, 0.0);
        for x in [-3.0, 0.5, 2.0, 7.0] {
            let ys = p.y_star(0, &v1(x)).unwrap();
            assert!((ys[0] - x / 2.0).abs() < 1e-15);
            let g = p.hypergrad_exact(0, &v1(x)).unwrap();
            assert!((g[0] - x / 4.0).abs() < 1e-15);
            let l = p.upper_objective(0, &v1(x)).unwrap();
            assert!((l - x * x / 8.0).abs() < 1e-15 * (1.0 + l.abs()));
        }
        let xm = p.global_min().unwrap();
        assert!(xm[0].abs() < 1e-15);
    }

    #[test]
    fn zero_noise_queries_match_exact() {
        let mut rng = RngStream::new(4, Lane::global(Purpose::ProblemInstance));
        let p = quadratic_problem(3, 4, 6, 5.0, 0.0, 0.0, &mut rng).unwrap();
        let x = Vector::from_fn(4, |i| i as f64 * 0.3 - 0.5);
        let y = Vector::from_fn(6, |i| (i as f64).cos());
        for key in [1u64, 99, 12345] {
            for i in 0..3 {
                let s = Sample::Key(key);
                assert_eq!(p.grad_x_f(i, &x, &y, s).unwrap(), p.grad_x_f(i, &x, &y, Sample::Exact).unwrap());
                assert_eq!(p.grad_y_f(i, &x, &y, s).unwrap(), p.grad_y_f(i, &x, &y, Sample::Exact).unwrap());
                assert_eq!(p.grad_y_g(i, &x, &y, s).unwrap(), p.grad_y_g(i, &x, &y, Sample::Exact).unwrap());
            }
        }
    }

    #[test]
    fn same_sample_same_noise() {
        let mut rng = RngStream::new(4, Lane::global(Purpose::ProblemInstance));
        let p = quadratic_problem(2, 3, 3, 2.0, 0.7, 0.4, &mut rng).unwrap();
        let (x, y) = (Vector::zeros(3), Vector::zeros(3));
        let a = p.grad_y_g(1, &x, &y, Sample::Key(5)).unwrap();
        let b = p.grad_y_g(1, &x, &y, Sample::Key(5)).unwrap();
        let c = p.grad_y_g(1, &x, &y, Sample::Key(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn conditioning_below_one_rejected() {
        let mut rng = RngStream::new(1, Lane::global(Purpose::ProblemInstance));
        assert!(quadratic_problem(1, 2, 2, 0.5, 0.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn generated_spectrum_matches_constants() {
        let mut rng = RngStream::new(8, Lane::global(Purpose::ProblemInstance));
        let p = quadratic_problem(4, 3, 5, 10.0, 0.0, 0.0, &mut rng).unwrap();
        let pc = p.constants();
        assert!((pc.l_g / pc.mu_g - 10.0).abs() < 1e-12);
        for i in 0..4 {
            let ev = p.agent(i).a.eigvals().unwrap();
            assert!(ev[4] >= pc.mu_g - 1e-10 && ev[0] <= pc.l_g + 1e-10);
        }
    }

    #[test]
    fn global_min_is_stationary() {
        let mut rng = RngStream::new(21, Lane::global(Purpose::ProblemInstance));
        let p = quadratic_problem(5, 4, 3, 3.0, 0.0, 0.0, &mut rng).unwrap();
        let xm = p.global_min().unwrap();
        let mut g = Vector::zeros(4);
        for i in 0..5 {
            g += &p.hypergrad_exact(i, &xm).unwrap();
        }
        assert!(g.norm() < 1e-12, "{}", g.norm());
    }

    #[test]
    fn realizable_instance_has_common_stationary_point() {
        let cfg = QuadraticConfig {
            m: 4,
            d_up: 3,
            d_low: 4,
            realizable: true,
            ..QuadraticConfig::default()
        };
        let mut rng = RngStream::new(2, Lane::global(Purpose::ProblemInstance));
        let p = QuadraticProblem::generate(&cfg, &mut rng).unwrap();
        let xs = p.global_min().unwrap();
        for i in 0..4 {
            assert!(p.hypergrad_exact(i, &xs).unwrap().norm() < 1e-12);
            let ys = p.y_star(i, &xs).unwrap();
            assert!(ys.dist_sq(&p.agent(i).r).sqrt() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let p = scalar(2.0, 0.0);
        assert!(p.grad_y_g(1, &v1(0.0), &v1(0.0), Sample::Exact).is_err());
        assert!(p.grad_y_g(0, &Vector::zeros(2), &v1(0.0), Sample::Exact).is_err());
    }
}
