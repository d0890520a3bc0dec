//! Dense linear algebra, symmetric eigenvalues and reproducible random streams.

mod eigen;
mod matrix;
mod rng;
mod vector;

pub use eigen::sym_eigvals;
pub use matrix::{lu_solve, Cholesky, Matrix, SymMatrix};
pub use rng::{draw_gaussian, draw_uniform_int, Lane, Purpose, RngStream};
pub use vector::Vector;

use crate::error::{Error, Result};

/// Orthogonal matrix from modified Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal(n: usize, rng: &mut RngStream) -> Matrix {
    let mut cols: Vec<Vector> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v = Vector::from_fn(n, |_| rng.standard_normal());
        for _ in 0..2 {
            for c in &cols {
                let proj = c.dot(&v);
                v.axpy(-proj, c);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            v.scale(1.0 / norm);
            cols.push(v);
        }
    }
    Matrix::from_fn(n, n, |i, j| cols[j][i])
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub solution: Vector,
    pub iterations: usize,
    pub residual: f64,
}

/// Conjugate gradient for `A x = b` with `A` symmetric positive definite,
/// given only as a matrix-vector product. Stops when `‖r‖ ≤ tol · max(1, ‖b‖)`.
pub fn conjugate_gradient(
    apply: impl Fn(&Vector) -> Result<Vector>,
    b: &Vector,
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let target = tol * b.norm().max(1.0);
    let mut x = Vector::zeros(b.dim());
    let mut r = b.clone();
    let mut rs = r.norm_sq();
    if rs.sqrt() <= target {
        return Ok(CgOutcome {
            solution: x,
            iterations: 0,
            residual: rs.sqrt(),
        });
    }
    let mut p = r.clone();
    for it in 1..=max_iter {
        let ap = apply(&p)?;
        let curv = p.dot(&ap);
        if !(curv > 0.0) {
            return Err(Error::Numerical {
                what: "conjugate gradient (operator not positive definite)",
                residual: rs.sqrt(),
                iterations: it,
            });
        }
        let step = rs / curv;
        x.axpy(step, &p);
        // recompute the true residual periodically to avoid drift
        if it % 50 == 0 {
            r = b - &apply(&x)?;
        } else {
            r.axpy(-step, &ap);
        }
        let rs_new = r.norm_sq();
        if rs_new.sqrt() <= target {
            return Ok(CgOutcome {
                solution: x,
                iterations: it,
                residual: rs_new.sqrt(),
            });
        }
        let beta = rs_new / rs;
        p.scale(beta);
        p += &r;
        rs = rs_new;
    }
    Err(Error::Numerical {
        what: "conjugate gradient",
        residual: rs.sqrt(),
        iterations: max_iter,
    })
}
