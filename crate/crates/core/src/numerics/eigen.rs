//! Cyclic Jacobi eigenvalue iteration for dense symmetric matrices.
//!
//! Each sweep visits every off-diagonal pair `(p, q)` once and applies the
//! plane rotation that annihilates `a[p][q]`. Off-diagonal mass decreases
//! quadratically once it is small, and the diagonal converges to the
//! eigenvalues with high relative accuracy.

use super::SymMatrix;
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// All eigenvalues of `a`, sorted descending.
pub fn sym_eigvals(a: &SymMatrix) -> Result<Vec<f64>> {
    let n = a.dim();
    let src = a.as_matrix();
    if !src.is_finite() {
        return Err(Error::invalid("sym_eigvals: non-finite entry"));
    }
    let mut w: Vec<f64> = (0..n * n).map(|k| src.get(k / n, k % n)).collect();
    let scale = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if scale == 0.0 {
        return Ok(vec![0.0; n]);
    }

    let mut converged = n == 1;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| w[i * n + j] * w[i * n + j])
            .sum();
        if off.sqrt() <= f64::EPSILON * 1e-3 * scale {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = w[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = w[p * n + p];
                let aqq = w[q * n + q];
                // after a few sweeps, entries negligible against both diagonals are dropped
                if sweeps > 3
                    && (app.abs() + 1e3 * apq.abs() == app.abs())
                    && (aqq.abs() + 1e3 * apq.abs() == aqq.abs())
                {
                    w[p * n + q] = 0.0;
                    w[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                w[p * n + p] = app - t * apq;
                w[q * n + q] = aqq + t * apq;
                w[p * n + q] = 0.0;
                w[q * n + p] = 0.0;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = w[k * n + p];
                    let akq = w[k * n + q];
                    let new_kp = akp - s * (akq + tau * akp);
                    let new_kq = akq + s * (akp - tau * akq);
                    w[k * n + p] = new_kp;
                    w[p * n + k] = new_kp;
                    w[k * n + q] = new_kq;
                    w[q * n + k] = new_kq;
                }
            }
        }
        sweeps += 1;
    }
    if !converged {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| w[i * n + j] * w[i * n + j])
            .sum();
        // the drop rule above can leave tiny residue that never reaches the threshold
        if off.sqrt() > 1e-13 * scale {
            return Err(Error::Numerical {
                what: "jacobi eigensolve",
                residual: off.sqrt(),
                iterations: sweeps,
            });
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| w[i * n + i]).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    Ok(eig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Matrix, RngStream, Lane, Purpose};

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn identity_two_by_two() {
        let ev = sym_eigvals(&SymMatrix::identity(2)).unwrap();
        assert_eq!(ev, vec![1.0, 1.0]);
    }

    #[test]
    fn rank_one_averaging() {
        let third = 1.0 / 3.0;
        let a = SymMatrix::from_rows(&[vec![third; 3], vec![third; 3], vec![third; 3]]).unwrap();
        let ev = sym_eigvals(&a).unwrap();
        assert!(close(&ev, &[1.0, 0.0, 0.0], 1e-14), "{ev:?}");
    }

    #[test]
    fn path_graph_metropolis() {
        let (a, b) = (2.0 / 3.0, 1.0 / 3.0);
        let m = SymMatrix::from_rows(&[vec![a, b, 0.0], vec![b, b, b], vec![0.0, b, a]]).unwrap();
        let ev = sym_eigvals(&m).unwrap();
        assert!(close(&ev, &[1.0, 2.0 / 3.0, 0.0], 1e-14), "{ev:?}");
    }

    #[test]
    fn non_finite_rejected() {
        let m = SymMatrix::from_rows(&[vec![f64::NAN, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eigvals(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn trace_and_known_spectrum_on_random_rotation() {
        // Q diag(d) Qᵀ with Q from Gram-Schmidt; eigenvalues must come back exactly.
        let n = 12;
        let mut rng = RngStream::new(7, Lane::new(0, 0, Purpose::Custom(1)));
        let d: Vec<f64> = (0..n).map(|i| (i as f64) * 0.37 - 2.0).collect();
        let q = crate::numerics::random_orthogonal(n, &mut rng);
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let v: f64 = (0..n).map(|k| q.get(i, k) * d[k] * q.get(j, k)).sum();
                a.set(i, j, v);
            }
        }
        let s = SymMatrix::from_matrix_symmetrized(&a).unwrap();
        let ev = sym_eigvals(&s).unwrap();
        let mut expect = d.clone();
        expect.sort_by(|a, b| b.total_cmp(a));
        for (x, y) in ev.iter().zip(&expect) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "{x} vs {y}");
        }
        let sum: f64 = ev.iter().sum();
        assert!((sum - s.trace()).abs() <= 1e-9 * n as f64 * s.as_matrix().max_abs());
    }
}
