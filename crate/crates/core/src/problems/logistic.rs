//! Hyperparameter optimization for two-class logistic regression.
//!
//! `x ∈ R^p` holds per-feature log-regularization weights and
//! `y ∈ R^{qp}` the classifier, stored class-major (`y[k·p + r]` is the
//! weight of feature `r` for class `k`).
//!
//! `g_i(x, y) = CE_train(y) + (1/(qp)) Σ_k Σ_r exp(x_r) y_{kr}²`,
//! `f_i(x, y) = CE_val(y)`.
//!
//! `x` is clamped to `[−R, R]` before exponentiation; the derivative with
//! respect to a clamped coordinate is zero.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{check_agent, check_dim, BilevelOracle, Dataset, Example, ExactOracle, ProblemConstants, Sample};
use crate::error::{Error, Result};
use crate::numerics::{conjugate_gradient, Cholesky, Lane, Matrix, Purpose, RngStream, SymMatrix, Vector};

pub const NUM_CLASSES: usize = 2;
pub const DEFAULT_X_CLAMP: f64 = 30.0;

const F_BATCH: u32 = 2;
const G_BATCH: u32 = 3;
const NEWTON_MAX_ITER: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogisticConfig {
    /// Minibatch size of one stochastic sample.
    pub batch_size: usize,
    /// Clamp radius `R` for `x`.
    pub x_clamp: f64,
    /// Radius of the `y` region over which `C_gxy`, `L_gxy` are stated.
    pub y_radius: f64,
    /// Gradient-norm tolerance of the exact inner solve.
    pub inner_tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            batch_size: 16,
            x_clamp: DEFAULT_X_CLAMP,
            y_radius: 10.0,
            inner_tol: 1e-10,
        }
    }
}

#[derive(Debug)]
pub struct LogisticProblem {
    data: Dataset,
    cfg: LogisticConfig,
    constants: ProblemConstants,
    clamp_events: AtomicUsize,
}

fn softmax2(y: &Vector, a: &Vector, p: usize) -> [f64; 2] {
    let (y0, y1) = y.as_slice().split_at(p);
    let z0: f64 = y0.iter().zip(a.iter()).map(|(w, v)| w * v).sum();
    let z1: f64 = y1.iter().zip(a.iter()).map(|(w, v)| w * v).sum();
    let s1 = 1.0 / (1.0 + (z0 - z1).exp());
    [1.0 - s1, s1]
}

/// `−log softmax(z)_label`, computed stably.
fn cross_entropy(y: &Vector, e: &Example, p: usize) -> f64 {
    let (y0, y1) = y.as_slice().split_at(p);
    let z0: f64 = y0.iter().zip(e.features.iter()).map(|(w, v)| w * v).sum();
    let z1: f64 = y1.iter().zip(e.features.iter()).map(|(w, v)| w * v).sum();
    let (own, other) = if e.label == 1 { (z1, z0) } else { (z0, z1) };
    let d = other - own;
    if d > 0.0 {
        d + (-d).exp().ln_1p()
    } else {
        d.exp().ln_1p()
    }
}

fn ce_grad(y: &Vector, batch: &[&Example], p: usize) -> Vector {
    let mut g = Vector::zeros(NUM_CLASSES * p);
    let w = 1.0 / batch.len() as f64;
    for e in batch {
        let s = softmax2(y, &e.features, p);
        for (k, sk) in s.iter().enumerate() {
            let coef = w * (sk - if k == e.label { 1.0 } else { 0.0 });
            let block = &mut g.as_mut_slice()[k * p..(k + 1) * p];
            for (b, a) in block.iter_mut().zip(e.features.iter()) {
                *b += coef * a;
            }
        }
    }
    g
}

/// Cross-entropy Hessian times `v`. For two classes the softmax Jacobian is
/// `s₀s₁·[[1, −1], [−1, 1]]`.
fn ce_hvp(y: &Vector, batch: &[&Example], v: &Vector, p: usize) -> Vector {
    let mut out = Vector::zeros(NUM_CLASSES * p);
    let w = 1.0 / batch.len() as f64;
    let (v0, v1) = v.as_slice().split_at(p);
    for e in batch {
        let s = softmax2(y, &e.features, p);
        let a = e.features.as_slice();
        let d: f64 = a.iter().zip(v0.iter().zip(v1)).map(|(ai, (x0, x1))| ai * (x0 - x1)).sum();
        let coef = w * s[0] * s[1] * d;
        let (o0, o1) = out.as_mut_slice().split_at_mut(p);
        for r in 0..p {
            o0[r] += coef * a[r];
            o1[r] -= coef * a[r];
        }
    }
    out
}

impl LogisticProblem {
    pub fn new(data: Dataset, cfg: LogisticConfig) -> Result<Self> {
        if cfg.batch_size == 0 {
            return Err(Error::invalid("logistic: batch_size must be >= 1"));
        }
        if !(cfg.x_clamp > 0.0) || !(cfg.y_radius > 0.0) || !(cfg.inner_tol > 0.0) {
            return Err(Error::invalid("logistic: x_clamp, y_radius and inner_tol must be > 0"));
        }
        for (i, sh) in data.shards().iter().enumerate() {
            if sh.train.is_empty() || sh.val.is_empty() {
                return Err(Error::invalid(format!("logistic: agent {i} has an empty train or validation shard")));
            }
        }
        let p = data.p() as f64;
        let q = NUM_CLASSES as f64;
        let a_max = data.max_feature_norm();
        let reg_lo = 2.0 / (q * p) * (-cfg.x_clamp).exp();
        let reg_hi = 2.0 / (q * p) * cfg.x_clamp.exp();
        // the two-class softmax Hessian has norm at most 1/2
        let ce_smooth = 0.5 * a_max * a_max;
        let constants = ProblemConstants {
            mu_g: reg_lo,
            l_g: ce_smooth + reg_hi,
            l_fx: 0.0,
            l_fy: ce_smooth,
            c_fy: std::f64::consts::SQRT_2 * a_max,
            c_gxy: reg_hi * cfg.y_radius,
            l_gxy: reg_hi * cfg.y_radius.max(1.0),
            l_gyy: a_max.powi(3) + reg_hi,
            sigma_f: std::f64::consts::SQRT_2 * a_max,
            sigma_g: std::f64::consts::SQRT_2 * a_max,
        };
        constants.validate()?;
        Ok(LogisticProblem {
            data,
            cfg,
            constants,
            clamp_events: AtomicUsize::new(0),
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn config(&self) -> &LogisticConfig {
        &self.cfg
    }

    /// Number of queries that saw at least one clamped coordinate.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events.load(Ordering::Relaxed)
    }

    fn p(&self) -> usize {
        self.data.p()
    }

    /// `(2/(qp))·exp(clamp(x_r))` and whether `x_r` lies inside the box.
    fn reg_weights(&self, x: &Vector) -> Vec<(f64, bool)> {
        let r = self.cfg.x_clamp;
        let base = 2.0 / (NUM_CLASSES * self.p()) as f64;
        let mut clamped = false;
        let out = x
            .iter()
            .map(|&xr| {
                let inside = xr.abs() <= r;
                clamped |= !inside;
                (base * xr.clamp(-r, r).exp(), inside)
            })
            .collect();
        if clamped && self.clamp_events.fetch_add(1, Ordering::Relaxed) == 0 {
            log::warn!("logistic: x left the clamp box [-{r}, {r}]; exp(x) is evaluated at the boundary");
        }
        out
    }

    fn batch<'a>(&self, set: &'a [Example], agent: usize, sample: Sample, stream: u32) -> Vec<&'a Example> {
        match sample {
            Sample::Exact => set.iter().collect(),
            Sample::Key(key) => {
                let mut s = RngStream::new(key, Lane::new(agent, 0, Purpose::SampleExpansion(stream)));
                (0..self.cfg.batch_size)
                    .map(|_| &set[s.uniform_int(set.len()).expect("shard is nonempty")])
                    .collect()
            }
        }
    }

    fn check(&self, agent: usize, x: &Vector, y: &Vector) -> Result<()> {
        check_agent(agent, self.data.num_agents())?;
        check_dim("x", x, self.p())?;
        check_dim("y", y, NUM_CLASSES * self.p())
    }

    fn lower_value(&self, agent: usize, x: &Vector, y: &Vector) -> f64 {
        let p = self.p();
        let train = &self.data.shard(agent).train;
        let ce = train.iter().map(|e| cross_entropy(y, e, p)).sum::<f64>() / train.len() as f64;
        let w = self.reg_weights(x);
        let reg: f64 = (0..NUM_CLASSES * p).map(|j| 0.5 * w[j % p].0 * y[j] * y[j]).sum();
        ce + reg
    }

    /// Dense `∇²_yy g` on the full training shard.
    fn lower_hessian(&self, agent: usize, x: &Vector, y: &Vector) -> Result<SymMatrix> {
        let p = self.p();
        let train = &self.data.shard(agent).train;
        let mut s = Matrix::zeros(p, p);
        for e in train {
            let sm = softmax2(y, &e.features, p);
            let c = sm[0] * sm[1] / train.len() as f64;
            let a = e.features.as_slice();
            for i in 0..p {
                for j in 0..p {
                    s.set(i, j, s.get(i, j) + c * a[i] * a[j]);
                }
            }
        }
        let w = self.reg_weights(x);
        let n = NUM_CLASSES * p;
        let h = Matrix::from_fn(n, n, |i, j| {
            let v = s.get(i % p, j % p);
            let blockwise = if (i < p) == (j < p) { v } else { -v };
            blockwise + if i == j { w[i % p].0 } else { 0.0 }
        });
        SymMatrix::from_matrix_symmetrized(&h)
    }

    /// Fraction of `examples` classified correctly by `y`.
    pub fn accuracy(&self, examples: &[Example], y: &Vector) -> f64 {
        if examples.is_empty() {
            return f64::NAN;
        }
        let p = self.p();
        let hits = examples
            .iter()
            .filter(|e| usize::from(softmax2(y, &e.features, p)[1] > 0.5) == e.label)
            .count();
        hits as f64 / examples.len() as f64
    }
}

impl BilevelOracle for LogisticProblem {
    fn num_agents(&self) -> usize {
        self.data.num_agents()
    }

    fn d_up(&self) -> usize {
        self.p()
    }

    fn d_low(&self) -> usize {
        NUM_CLASSES * self.p()
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn grad_x_f(&self, agent: usize, x: &Vector, y: &Vector, _: Sample) -> Result<Vector> {
        self.check(agent, x, y)?;
        Ok(Vector::zeros(self.p()))
    }

    fn grad_y_f(&self, agent: usize, x: &Vector, y: &Vector, sample: Sample) -> Result<Vector> {
        self.check(agent, x, y)?;
        let batch = self.batch(&self.data.shard(agent).val, agent, sample, F_BATCH);
        Ok(ce_grad(y, &batch, self.p()))
    }

    fn grad_y_g(&self, agent: usize, x: &Vector, y: &Vector, sample: Sample) -> Result<Vector> {
        self.check(agent, x, y)?;
        let p = self.p();
        let batch = self.batch(&self.data.shard(agent).train, agent, sample, G_BATCH);
        let mut g = ce_grad(y, &batch, p);
        let w = self.reg_weights(x);
        for j in 0..NUM_CLASSES * p {
            g[j] += w[j % p].0 * y[j];
        }
        Ok(g)
    }

    fn hess_xy_g_times(&self, agent: usize, x: &Vector, y: &Vector, v: &Vector, _: Sample) -> Result<Vector> {
        self.check(agent, x, y)?;
        check_dim("hess_xy_g_times v", v, self.d_low())?;
        let p = self.p();
        let w = self.reg_weights(x);
        Ok(Vector::from_fn(p, |r| {
            let (wr, inside) = w[r];
            if !inside {
                return 0.0;
            }
            (0..NUM_CLASSES).map(|k| wr * y[k * p + r] * v[k * p + r]).sum()
        }))
    }

    fn hess_yy_g_times(&self, agent: usize, x: &Vector, y: &Vector, v: &Vector, sample: Sample) -> Result<Vector> {
        self.check(agent, x, y)?;
        check_dim("hess_yy_g_times v", v, self.d_low())?;
        let p = self.p();
        let batch = self.batch(&self.data.shard(agent).train, agent, sample, G_BATCH);
        let mut out = ce_hvp(y, &batch, v, p);
        let w = self.reg_weights(x);
        for j in 0..NUM_CLASSES * p {
            out[j] += w[j % p].0 * v[j];
        }
        Ok(out)
    }

    fn upper_value(&self, agent: usize, x: &Vector, y: &Vector) -> Result<f64> {
        self.check(agent, x, y)?;
        let val = &self.data.shard(agent).val;
        Ok(val.iter().map(|e| cross_entropy(y, e, self.p())).sum::<f64>() / val.len() as f64)
    }

    fn exact(&self) -> Option<&dyn ExactOracle> {
        Some(self)
    }
}

impl ExactOracle for LogisticProblem {
    /// Damped Newton from `y = 0` with Armijo backtracking.
    fn y_star(&self, agent: usize, x: &Vector) -> Result<Vector> {
        check_agent(agent, self.data.num_agents())?;
        check_dim("x", x, self.p())?;
        let mut y = Vector::zeros(self.d_low());
        let mut gnorm = f64::INFINITY;
        for _ in 0..NEWTON_MAX_ITER {
            let g = self.grad_y_g(agent, x, &y, Sample::Exact)?;
            gnorm = g.norm();
            if gnorm <= self.cfg.inner_tol {
                return Ok(y);
            }
            let step = Cholesky::factor(&self.lower_hessian(agent, x, &y)?)?.solve(&g);
            let f0 = self.lower_value(agent, x, &y);
            let slope = g.dot(&step);
            // the decrease is below rounding of f, so take the full step
            if slope <= 1e-12 * (1.0 + f0.abs()) {
                y.axpy(-1.0, &step);
                continue;
            }
            let mut t = 1.0;
            loop {
                let mut trial = y.clone();
                trial.axpy(-t, &step);
                if self.lower_value(agent, x, &trial) <= f0 - 1e-4 * t * slope || t < 1e-12 {
                    y = trial;
                    break;
                }
                t *= 0.5;
            }
        }
        Err(Error::Numerical {
            what: "logistic inner solve",
            residual: gnorm,
            iterations: NEWTON_MAX_ITER,
        })
    }

    /// `∇l = ∇_x f − ∇²_xy g [∇²_yy g]⁻¹ ∇_y f` at `y*`, with the linear
    /// solve done by conjugate gradient.
    fn hypergrad_exact(&self, agent: usize, x: &Vector) -> Result<Vector> {
        let ys = self.y_star(agent, x)?;
        let gy = self.grad_y_f(agent, x, &ys, Sample::Exact)?;
        let n = self.d_low();
        let sol = conjugate_gradient(
            |v| self.hess_yy_g_times(agent, x, &ys, v, Sample::Exact),
            &gy,
            1e-10,
            50 * n,
        )?;
        let corr = self.hess_xy_g_times(agent, x, &ys, &sol.solution, Sample::Exact)?;
        let mut g = self.grad_x_f(agent, x, &ys, Sample::Exact)?;
        g -= &corr;
        Ok(g)
    }

    fn upper_objective(&self, agent: usize, x: &Vector) -> Result<f64> {
        let ys = self.y_star(agent, x)?;
        self.upper_value(agent, x, &ys)
    }
}
