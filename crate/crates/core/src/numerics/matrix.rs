use serde::{Deserialize, Serialize};

use super::Vector;
use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::invalid("ragged rows"));
        }
        Ok(Matrix {
            rows: r,
            cols: c,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `A v`
    pub fn matvec(&self, v: &Vector) -> Vector {
        debug_assert_eq!(v.dim(), self.cols);
        Vector::from_fn(self.rows, |i| {
            self.row(i).iter().zip(v.iter()).map(|(a, b)| a * b).sum()
        })
    }

    /// `Aᵀ v`
    pub fn matvec_t(&self, v: &Vector) -> Vector {
        debug_assert_eq!(v.dim(), self.rows);
        let mut out = Vector::zeros(self.cols);
        for i in 0..self.rows {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            for (o, a) in out.as_mut_slice().iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Largest singular value, from the eigenvalues of `AᵀA`.
    pub fn spectral_norm(&self) -> Result<f64> {
        let gram = SymMatrix::from_matrix_symmetrized(&self.transpose().matmul(self))?;
        let top = gram.eigvals()?.first().copied().unwrap_or(0.0);
        Ok(top.max(0.0).sqrt())
    }
}

/// Square matrix with exactly symmetric storage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    inner: Matrix,
}

impl SymMatrix {
    /// Rejects inputs that are not square or not exactly symmetric.
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows != m.cols || m.rows == 0 {
            return Err(Error::invalid(format!(
                "symmetric matrix must be square and non-empty, got {}x{}",
                m.rows, m.cols
            )));
        }
        for i in 0..m.rows {
            for j in (i + 1)..m.cols {
                if m.get(i, j) != m.get(j, i) {
                    return Err(Error::invalid(format!("entry ({i},{j}) differs from ({j},{i})")));
                }
            }
        }
        Ok(SymMatrix { inner: m })
    }

    /// Copies the upper triangle onto the lower one.
    pub fn from_matrix_symmetrized(m: &Matrix) -> Result<Self> {
        if m.rows != m.cols {
            return Err(Error::invalid("matrix must be square"));
        }
        let n = m.rows;
        let mut out = m.clone();
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (m.get(i, j) + m.get(j, i));
                out.set(i, j, avg);
                out.set(j, i, avg);
            }
        }
        SymMatrix::new(out)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        SymMatrix::new(Matrix::from_rows(rows)?)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix {
            inner: Matrix::identity(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.rows
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn matvec(&self, v: &Vector) -> Vector {
        self.inner.matvec(v)
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.get(i, i)).sum()
    }

    pub fn eigvals(&self) -> Result<Vec<f64>> {
        super::eigen::sym_eigvals(self)
    }
}

/// Cholesky factor `A = L Lᵀ` of a symmetric positive definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &SymMatrix) -> Result<Self> {
        let n = a.dim();
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::invalid(format!("matrix not positive definite (pivot {j})")));
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Cholesky { n, lower: l })
    }

    pub fn solve(&self, b: &Vector) -> Vector {
        let n = self.n;
        let l = &self.lower;
        let mut z = b.clone().into_inner();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= l[i * n + k] * z[k];
            }
            z[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (i + 1)..n {
                s -= l[k * n + i] * z[k];
            }
            z[i] = s / l[i * n + i];
        }
        Vector::from(z)
    }
}

/// Gaussian elimination with partial pivoting. Used where an independent
/// route to a Cholesky or CG solve is wanted.
pub fn lu_solve(a: &Matrix, b: &Vector) -> Result<Vector> {
    let n = a.rows();
    if a.cols() != n || b.dim() != n {
        return Err(Error::invalid("lu_solve: dimension mismatch"));
    }
    let mut m = a.clone();
    let mut rhs = b.clone();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m.get(i, col).abs().total_cmp(&m.get(j, col).abs()))
            .unwrap_or(col);
        if m.get(pivot, col).abs() < 1e-300 {
            return Err(Error::invalid("lu_solve: singular matrix"));
        }
        if pivot != col {
            for j in 0..n {
                let tmp = m.get(col, j);
                m.set(col, j, m.get(pivot, j));
                m.set(pivot, j, tmp);
            }
            let tmp = rhs[col];
            rhs[col] = rhs[pivot];
            rhs[pivot] = tmp;
        }
        let p = m.get(col, col);
        for i in (col + 1)..n {
            let f = m.get(i, col) / p;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m.set(i, j, m.get(i, j) - f * m.get(col, j));
            }
            rhs[i] -= f * rhs[col];
        }
    }
    let mut x = Vector::zeros(n);
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for j in (i + 1)..n {
            s -= m.get(i, j) * x[j];
        }
        x[i] = s / m.get(i, i);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asymmetric_input_is_rejected() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0000001, 1.0]]).unwrap();
        assert!(SymMatrix::new(m).is_err());
    }

    #[test]
    fn cholesky_and_lu_agree() {
        let a = SymMatrix::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, -0.2],
            vec![0.5, -0.2, 2.0],
        ])
        .unwrap();
        let b = Vector::from(vec![1.0, -2.0, 0.3]);
        let x1 = Cholesky::factor(&a).unwrap().solve(&b);
        let x2 = lu_solve(a.as_matrix(), &b).unwrap();
        assert!(x1.dist_sq(&x2).sqrt() < 1e-14);
        let r = &a.matvec(&x1) - &b;
        assert!(r.norm() < 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(Cholesky::factor(&a).is_err());
    }

    #[test]
    fn transpose_product() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let v = Vector::from(vec![1.0, -1.0]);
        assert_eq!(a.matvec_t(&v), a.transpose().matvec(&v));
        assert!((a.spectral_norm().unwrap() - 9.508_032_000_695_723).abs() < 1e-12);
    }
}
