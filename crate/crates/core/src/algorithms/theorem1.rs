//! Step-size and momentum constants of the convergence theorem, evaluated
//! literally. These are diagnostics; experiments use hand-set schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergrad::LipschitzBundle;
use crate::problems::ProblemConstants;

const SINGULAR_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Constants {
    pub l_mu_g: f64,
    pub c_bar_y: f64,
    pub c_beta: f64,
    pub c_bar_eta: f64,
    pub c_bar_gamma: f64,
    pub c_bar_u: f64,
    pub c_eta: f64,
    /// `1 − 3·c̄_u·c̄_η` vanished, so `c_eta` is infinite.
    pub c_eta_singular: bool,
    pub c_gamma: f64,
    /// The eleven terms whose minimum bounds `α_t`, in printed order.
    pub alpha_terms: [f64; 11],
    pub alpha_bound: f64,
    pub beta_bound: f64,
    pub lambda: f64,
}

impl Theorem1Constants {
    /// `c̄_x = 6 / ((1 − λ)·α)`.
    pub fn c_bar_x(&self, alpha: f64) -> f64 {
        6.0 / ((1.0 - self.lambda) * alpha)
    }
}

/// `lb.l_k` must hold the estimator constant for the chosen `K`.
pub fn theorem1_constants(
    pc: &ProblemConstants,
    lb: &LipschitzBundle,
    m: usize,
    lambda: f64,
) -> Result<Theorem1Constants> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::invalid(format!("theorem1_constants: lambda must be in [0, 1), got {lambda}")));
    }
    if m == 0 {
        return Err(Error::invalid("theorem1_constants: m must be >= 1"));
    }
    if !(pc.mu_g > 0.0) {
        return Err(Error::invalid("theorem1_constants: mu_g must be > 0"));
    }
    let mf = m as f64;
    let (mu, l_g) = (pc.mu_g, pc.l_g);
    let (l_f, l_l, l_y) = (lb.l_f, lb.l_l, lb.l_y);
    let lk2 = lb.l_k * lb.l_k;
    let lg2 = l_g * l_g;
    let gap = 1.0 - lambda;

    let l_mu_g = mu * l_g / (mu + l_g);
    let c_bar_y = (l_f / (2.0 * l_y * l_y * mf)).sqrt().min((l_f / (10.0 * l_y * l_y * mf * mf)).sqrt());
    let c_beta = 8.0 * l_f / (mf * l_mu_g * c_bar_y);
    let c_bar_eta = (32.0 * lk2)
        .max(160.0 * lk2 * mf)
        .max(24.0 * (mu + l_g) * lk2 * c_beta / c_bar_y);
    let c_bar_gamma = (32.0 * lg2)
        .max(160.0 * lg2 * mf)
        .max(24.0 * (mu + l_g) * lg2 * c_beta / c_bar_y);
    let c_bar_u = (1.0 / (48.0 * lk2)).min(1.0 / (3.0 * c_bar_eta));

    let denom = 1.0 - 3.0 * c_bar_u * c_bar_eta;
    let c_eta_singular = denom.abs() <= SINGULAR_TOL;
    let c_eta = if c_eta_singular {
        log::warn!("theorem1_constants: 1 - 3·c̄_u·c̄_η vanishes, c_η is infinite");
        f64::INFINITY
    } else {
        (6.0 * l_f * c_bar_eta + mf) / (3.0 * l_f * mf * denom)
    };
    // the weight multiplying the bracket is read as c̄_γ
    let c_bar_r = c_bar_gamma;
    let c_gamma = 1.0 / (3.0 * l_f)
        + 8.0 * lg2 * c_beta * c_beta
        + c_bar_r
            * (2.0 * c_beta * c_bar_y / l_mu_g + 8.0 * lk2 * c_beta * c_beta / c_bar_eta + 12.0 * lk2 * c_bar_u * c_beta * c_beta);

    let alpha_terms = [
        (mf / (2.0 * l_l * l_l)).sqrt(),
        c_bar_u * gap * gap / 30.0,
        c_bar_u * gap * l_mu_g * c_beta / (40.0 * l_y * l_y * c_bar_y),
        c_bar_u * gap * c_bar_eta / (80.0 * lk2),
        c_bar_u * gap * c_bar_gamma / (80.0 * lg2),
        1.0 / (5.0 * l_l),
        1.0 / (3.0 * l_f),
        (gap * gap / (120.0 * lk2)).sqrt(),
        gap / (240.0 * c_bar_u * lk2 * mf),
        c_bar_y * gap / (36.0 * (mu + l_g) * c_bar_u * lk2 * c_beta),
        gap,
    ];
    let alpha_bound = alpha_terms.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Theorem1Constants {
        l_mu_g,
        c_bar_y,
        c_beta,
        c_bar_eta,
        c_bar_gamma,
        c_bar_u,
        c_eta,
        c_eta_singular,
        c_gamma,
        alpha_terms,
        alpha_bound,
        beta_bound: 1.0 / (mu + l_g),
        lambda,
    })
}
