//! Hypergradient surrogate, the randomized Neumann-series estimator and the
//! smoothness constants that govern them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{conjugate_gradient, RngStream, Vector};
use crate::problems::{BilevelOracle, ProblemConstants, Sample};

/// Configuration of the Neumann-series estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Neumann budget `K`.
    pub k: usize,
    pub l_g: f64,
    pub mu_g: f64,
}

impl EstimatorConfig {
    pub fn new(k: usize, l_g: f64, mu_g: f64) -> Result<Self> {
        let cfg = EstimatorConfig { k, l_g, mu_g };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_constants(k: usize, pc: &ProblemConstants) -> Result<Self> {
        EstimatorConfig::new(k, pc.l_g, pc.mu_g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("estimator: K must be >= 1"));
        }
        if !(self.mu_g > 0.0) || !(self.l_g >= self.mu_g) || !self.l_g.is_finite() {
            return Err(Error::invalid(format!(
                "estimator: need 0 < mu_g <= L_g, got mu_g = {}, L_g = {}",
                self.mu_g, self.l_g
            )));
        }
        Ok(())
    }

    /// Oracle samples consumed by one estimate: `ξ` and `ζ⁰, …, ζ^K`.
    pub fn samples_per_estimate(&self) -> usize {
        self.k + 2
    }
}

/// The random inputs of one estimate: `ξ` for both upper gradients,
/// `ζ⁰, …, ζ^K` for the Hessian queries and the truncation index `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeumannSample {
    pub xi: Sample,
    pub zetas: Vec<Sample>,
    pub k: usize,
}

impl NeumannSample {
    /// Draws `K + 2` sample keys, then `k ~ U{0, …, K−1}`.
    pub fn draw(s: &mut RngStream, big_k: usize) -> Result<Self> {
        let xi = Sample::Key(s.next_u64());
        let zetas = (0..=big_k).map(|_| Sample::Key(s.next_u64())).collect();
        let k = s.uniform_int(big_k)?;
        Ok(NeumannSample { xi, zetas, k })
    }

    /// Noiseless samples with a fixed truncation index.
    pub fn exact(big_k: usize, k: usize) -> Self {
        NeumannSample {
            xi: Sample::Exact,
            zetas: vec![Sample::Exact; big_k + 1],
            k,
        }
    }

    /// `∇_x f(ξ) − (K/L_g)·∇²_xy g(ζ⁰)·Π_{j=1..k}(I − ∇²_yy g(ζʲ)/L_g)·∇_y f(ξ)`,
    /// with the product applied right to left.
    pub fn evaluate(
        &self,
        oracle: &dyn BilevelOracle,
        agent: usize,
        x: &Vector,
        y: &Vector,
        cfg: &EstimatorConfig,
    ) -> Result<Vector> {
        if self.zetas.len() != cfg.k + 1 || self.k >= cfg.k {
            return Err(Error::invalid(format!(
                "neumann sample with {} Hessian samples and index {} does not match K = {}",
                self.zetas.len(),
                self.k,
                cfg.k
            )));
        }
        let mut w = oracle.grad_y_f(agent, x, y, self.xi)?;
        for j in (1..=self.k).rev() {
            let hw = oracle.hess_yy_g_times(agent, x, y, &w, self.zetas[j])?;
            w.axpy(-1.0 / cfg.l_g, &hw);
        }
        let corr = oracle.hess_xy_g_times(agent, x, y, &w, self.zetas[0])?;
        let mut out = oracle.grad_x_f(agent, x, y, self.xi)?;
        out.axpy(-(cfg.k as f64) / cfg.l_g, &corr);
        Ok(out)
    }
}

/// One draw of the stochastic hypergradient estimator.
pub fn neumann_estimate(
    oracle: &dyn BilevelOracle,
    agent: usize,
    x: &Vector,
    y: &Vector,
    cfg: &EstimatorConfig,
    s: &mut RngStream,
) -> Result<Vector> {
    NeumannSample::draw(s, cfg.k)?.evaluate(oracle, agent, x, y, cfg)
}

/// Exact expectation of the estimator over `k` with noiseless queries:
/// `∇_x f − ∇²_xy g · (1/L_g) Σ_{k<K} (I − ∇²_yy g/L_g)^k · ∇_y f`.
pub fn neumann_mean(
    oracle: &dyn BilevelOracle,
    agent: usize,
    x: &Vector,
    y: &Vector,
    cfg: &EstimatorConfig,
) -> Result<Vector> {
    let mut w = oracle.grad_y_f(agent, x, y, Sample::Exact)?;
    let mut acc = w.clone();
    for _ in 1..cfg.k {
        let hw = oracle.hess_yy_g_times(agent, x, y, &w, Sample::Exact)?;
        w.axpy(-1.0 / cfg.l_g, &hw);
        acc += &w;
    }
    let corr = oracle.hess_xy_g_times(agent, x, y, &acc, Sample::Exact)?;
    let mut out = oracle.grad_x_f(agent, x, y, Sample::Exact)?;
    out.axpy(-1.0 / cfg.l_g, &corr);
    Ok(out)
}

/// `∇_x f − ∇²_xy g · [∇²_yy g]⁻¹ · ∇_y f` at `(x, y)`, noiseless.
pub fn surrogate_grad(oracle: &dyn BilevelOracle, agent: usize, x: &Vector, y: &Vector) -> Result<Vector> {
    let gy = oracle.grad_y_f(agent, x, y, Sample::Exact)?;
    let sol = conjugate_gradient(
        |v| oracle.hess_yy_g_times(agent, x, y, v, Sample::Exact),
        &gy,
        1e-10,
        50 * oracle.d_low().max(1),
    )?;
    let corr = oracle.hess_xy_g_times(agent, x, y, &sol.solution, Sample::Exact)?;
    let mut out = oracle.grad_x_f(agent, x, y, Sample::Exact)?;
    out -= &corr;
    Ok(out)
}

/// Lipschitz constants of the surrogate, the hypergradient, the lower
/// solution map and the estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBundle {
    pub l_f: f64,
    pub l_l: f64,
    pub l_y: f64,
    pub l_k: f64,
}

fn require_mu(pc: &ProblemConstants) -> Result<()> {
    if !(pc.mu_g > 0.0) {
        return Err(Error::invalid(format!("mu_g must be > 0, got {}", pc.mu_g)));
    }
    Ok(())
}

/// `L_f`, `L_l`, `L_y`; `l_k` is left at zero.
pub fn lemma1_constants(pc: &ProblemConstants) -> Result<LipschitzBundle> {
    require_mu(pc)?;
    let mu = pc.mu_g;
    let l_f = pc.l_fx + pc.l_fy * pc.c_gxy / mu + pc.c_fy * (pc.l_gxy / mu + pc.l_gyy * pc.c_gxy / (mu * mu));
    Ok(LipschitzBundle {
        l_f,
        l_l: l_f + l_f * pc.c_gxy / mu,
        l_y: pc.c_gxy / mu,
        l_k: 0.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Value {
    pub l_k: f64,
    /// Set when `L_g = μ_g` made the `K³` term undefined and it was dropped.
    pub cubic_term_omitted: bool,
}

/// Second-moment constant `L_K` of the estimator.
pub fn lemma2_constant(pc: &ProblemConstants, k: usize) -> Result<Lemma2Value> {
    require_mu(pc)?;
    let (mu, l) = (pc.mu_g, pc.l_g);
    let den = 2.0 * mu * l - mu * mu;
    if !(den > 0.0) {
        return Err(Error::invalid(format!("need 2·mu_g·L_g − mu_g² > 0, got {den}")));
    }
    let kf = k as f64;
    let mut l_k = 2.0 * pc.l_fx.powi(2)
        + 6.0 * pc.c_gxy.powi(2) * pc.l_fy.powi(2) * kf / den
        + 6.0 * pc.c_fy.powi(2) * pc.l_gxy.powi(2) * kf / den;
    let num = 6.0 * pc.c_gxy.powi(2) * pc.c_fy.powi(2) * pc.l_gyy.powi(2) * kf.powi(3);
    let gap = (l - mu).powi(2);
    let mut omitted = false;
    if num == 0.0 {
    } else if gap > 0.0 {
        l_k += num / (gap * den);
    } else {
        omitted = true;
        log::warn!("lemma2_constant: L_g = mu_g, the K^3 term is undefined and omitted");
    }
    Ok(Lemma2Value {
        l_k,
        cubic_term_omitted: omitted,
    })
}

/// `(C_gxy·C_fy/μ_g)·(1 − μ_g/L_g)^K`.
pub fn lemma3_bias_bound(pc: &ProblemConstants, k: usize) -> f64 {
    pc.c_gxy * pc.c_fy / pc.mu_g * (1.0 - pc.mu_g / pc.l_g).powi(k as i32)
}

/// `K = ⌈(L_g/μ_g)·ln(C_gxy·C_fy·T/μ_g)⌉`, at least 1.
pub fn k_for_horizon(pc: &ProblemConstants, t: usize) -> Result<usize> {
    require_mu(pc)?;
    let arg = pc.c_gxy * pc.c_fy * t as f64 / pc.mu_g;
    if !(arg > 0.0) {
        return Ok(1);
    }
    let k = (pc.l_g / pc.mu_g * arg.ln()).ceil();
    if !k.is_finite() {
        return Err(Error::invalid("k_for_horizon: non-finite K"));
    }
    Ok((k.max(1.0)) as usize)
}

/// Smallest `K` whose bias bound does not exceed `target`.
pub fn k_for_bias(pc: &ProblemConstants, target: f64) -> Result<usize> {
    require_mu(pc)?;
    let lead = pc.c_gxy * pc.c_fy / pc.mu_g;
    let rate = 1.0 - pc.mu_g / pc.l_g;
    if lead <= target || rate <= 0.0 {
        return Ok(1);
    }
    Ok(((target / lead).ln() / rate.ln()).ceil().max(1.0) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Lane, Purpose};
    use crate::problems::{quadratic_problem, ExactOracle, QuadraticProblem};

    fn v1(x: f64) -> Vector {
        Vector::from(vec![x])
    }

    fn all_ones() -> ProblemConstants {
        ProblemConstants::unit()
    }

    #[test]
    fn lemma1_examples() {
        let lb = lemma1_constants(&all_ones()).unwrap();
        assert_eq!((lb.l_f, lb.l_l, lb.l_y), (4.0, 8.0, 1.0));
        let mut pc = all_ones();
        pc.c_fy = 0.0;
        pc.l_fy = 0.0;
        pc.l_fx = 2.5;
        assert_eq!(lemma1_constants(&pc).unwrap().l_f, 2.5);
        pc.mu_g = 0.0;
        assert!(lemma1_constants(&pc).is_err());
    }

    #[test]
    fn lemma2_examples() {
        let v = lemma2_constant(&all_ones(), 1).unwrap();
        assert!((v.l_k - 8.0).abs() < 1e-12);
        assert!(!v.cubic_term_omitted);

        let mut pc = all_ones();
        pc.l_fy = 0.0;
        pc.c_fy = 0.0;
        pc.l_gxy = 0.0;
        pc.l_gyy = 0.0;
        assert_eq!(lemma2_constant(&pc, 7).unwrap().l_k, 2.0);

        let mut last = 0.0;
        for k in 1..30 {
            let l = lemma2_constant(&all_ones(), k).unwrap().l_k;
            assert!(l >= last);
            last = l;
        }

        let mut flat = all_ones();
        flat.l_g = 1.0;
        let v = lemma2_constant(&flat, 3).unwrap();
        assert!(v.cubic_term_omitted && v.l_k.is_finite());
    }

    #[test]
    fn lemma3_examples() {
        let pc = all_ones();
        assert!((lemma3_bias_bound(&pc, 3) - 0.125).abs() < 1e-15);
        for k in 1..10 {
            assert!((lemma3_bias_bound(&pc, k + 1) - 0.5 * lemma3_bias_bound(&pc, k)).abs() < 1e-15);
        }
        let mut flat = pc.clone();
        flat.l_g = 1.0;
        assert_eq!(lemma3_bias_bound(&flat, 1), 0.0);
    }

    #[test]
    fn horizon_k() {
        let pc = all_ones();
        assert_eq!(k_for_horizon(&pc, 1000).unwrap(), 14);
        assert_eq!(k_for_horizon(&pc, 1).unwrap(), 1);
        let k = k_for_bias(&pc, 1e-12).unwrap();
        assert!(lemma3_bias_bound(&pc, k) <= 1e-12 && lemma3_bias_bound(&pc, k - 1) > 1e-12);
    }

    #[test]
    fn surrogate_on_scalar_quadratic() {
        let p = QuadraticProblem::scalar(2.0, 1.0, 0.0).unwrap();
        for (x, y) in [(0.0, 1.0), (3.0, -2.0), (-1.0, 0.25)] {
            let s = surrogate_grad(&p, 0, &v1(x), &v1(y)).unwrap();
            assert!((s[0] - y / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn surrogate_matches_exact_at_lower_solution() {
        let mut rng = RngStream::new(5, Lane::global(Purpose::ProblemInstance));
        let p = quadratic_problem(3, 4, 6, 8.0, 0.0, 0.0, &mut rng).unwrap();
        let x = Vector::from_fn(4, |i| 0.3 * i as f64 - 0.4);
        for i in 0..3 {
            let ys = p.y_star(i, &x).unwrap();
            let s = surrogate_grad(&p, i, &x, &ys).unwrap();
            let h = p.hypergrad_exact(i, &x).unwrap();
            assert!(s.dist_sq(&h).sqrt() <= 1e-9 * h.norm().max(1.0));
        }
    }

    #[test]
    fn empty_product_when_k_is_zero() {
        let p = QuadraticProblem::scalar(1.5, 0.7, 0.3).unwrap();
        let cfg = EstimatorConfig::new(6, 2.0, 1.0).unwrap();
        let (x, y) = (v1(0.8), v1(-1.1));
        let e = NeumannSample::exact(6, 0).evaluate(&p, 0, &x, &y, &cfg).unwrap();
        // ∇_x f = ρx, ∇²_xy g = −b, ∇_y f = y
        let expect = 0.3 * 0.8 - 6.0 / 2.0 * (-0.7) * (-1.1);
        assert!((e[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn point_spectrum_is_unbiased() {
        let p = QuadraticProblem::scalar(2.0, 1.0, 0.0).unwrap();
        for big_k in [1, 4, 9] {
            let cfg = EstimatorConfig::new(big_k, 2.0, 2.0).unwrap();
            let y = 1.3;
            let mean: f64 = (0..big_k)
                .map(|k| NeumannSample::exact(big_k, k).evaluate(&p, 0, &v1(0.0), &v1(y), &cfg).unwrap()[0])
                .sum::<f64>()
                / big_k as f64;
            assert!((mean - y / 2.0).abs() < 1e-15);
            let nm = neumann_mean(&p, 0, &v1(0.0), &v1(y), &cfg).unwrap();
            assert!((nm[0] - y / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn geometric_bias_on_scalar_quadratic() {
        // A = 1, L_g = 2: E[estimate] = (1 − 2^{−K})·y against the surrogate y
        let p = QuadraticProblem::scalar(1.0, 1.0, 0.0).unwrap();
        let y = 0.9;
        for big_k in [1, 2, 5, 10] {
            let cfg = EstimatorConfig::new(big_k, 2.0, 1.0).unwrap();
            let nm = neumann_mean(&p, 0, &v1(0.0), &v1(y), &cfg).unwrap()[0];
            let expect = (1.0 - 0.5f64.powi(big_k as i32)) * y;
            assert!((nm - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn draw_consumes_fixed_sample_count() {
        let mut s = RngStream::new(1, Lane::global(Purpose::UpperEstimate));
        let ns = NeumannSample::draw(&mut s, 7).unwrap();
        assert_eq!(ns.zetas.len() + 1, 9);
        assert!(ns.k < 7);
        assert!(EstimatorConfig::new(0, 1.0, 1.0).is_err());
        assert!(EstimatorConfig::new(1, 1.0, 2.0).is_err());
    }
}
