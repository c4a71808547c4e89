//! Small dense matrices generic over [`Real`], enough for metric tensors and
//! their inverses inside dual-number evaluations.

use crate::error::{Error, Result};
use crate::expr::Real;

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(n: usize) -> Self {
        Mat {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Mat { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| {
                let row = &self.data[i * self.n..(i + 1) * self.n];
                crate::expr::dual::dot(row, v)
            })
            .collect()
    }

    /// `u^T A v`.
    pub fn bilinear(&self, u: &[T], v: &[T]) -> T {
        crate::expr::dual::dot(u, &self.mul_vec(v))
    }

    pub fn scaled(&self, c: T) -> Self {
        Mat {
            n: self.n,
            data: self.data.iter().map(|&a| a * c).collect(),
        }
    }

    pub fn values(&self) -> Mat<f64> {
        Mat {
            n: self.n,
            data: self.data.iter().map(|a| a.value()).collect(),
        }
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut m = 0.0_f64;
        for i in 0..self.n {
            for j in 0..self.n {
                m = m.max((self[(i, j)] - self[(j, i)]).value().abs());
            }
        }
        m
    }

    /// LU factorization with partial pivoting (pivots chosen on values).
    pub fn lu(&self) -> Result<Lu<T>> {
        let n = self.n;
        let mut a = self.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = self
            .data
            .iter()
            .map(|x| x.value().abs())
            .fold(0.0_f64, f64::max);
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|r| (r, a[r * n + k].value().abs()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if !(pmax > 1e-300 && pmax > 1e-14 * scale) || !pmax.is_finite() {
                return Err(Error::Singular(format!(
                    "pivot {pmax:e} in column {k} (scale {scale:e})"
                )));
            }
            if p != k {
                for c in 0..n {
                    a.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let pivot = a[k * n + k];
            for r in k + 1..n {
                let f = a[r * n + k] / pivot;
                a[r * n + k] = f;
                for c in k + 1..n {
                    let t = a[k * n + c];
                    a[r * n + c] -= f * t;
                }
            }
        }
        Ok(Lu { n, a, perm })
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        Ok(self.lu()?.solve(b))
    }

    pub fn inverse(&self) -> Result<Self> {
        let lu = self.lu()?;
        let n = self.n;
        let mut inv = Self::zeros(n);
        for j in 0..n {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            let col = lu.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        Ok(inv)
    }
}

impl Mat<f64> {
    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n, self.n, &self.data)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    /// Positive-definiteness test: smallest eigenvalue > 1e-12 * trace.
    pub fn check_positive_definite(&self, what: &str) -> Result<()> {
        if self.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Model(format!("{what} has non-finite entries")));
        }
        let trace: f64 = (0..self.n).map(|i| self[(i, i)]).sum();
        let eig = nalgebra::SymmetricEigen::new(self.to_nalgebra()).eigenvalues;
        let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
        if !(trace > 0.0 && min > 1e-12 * trace) {
            return Err(Error::Model(format!(
                "{what} is not positive definite (min eigenvalue {min:e}, trace {trace:e})"
            )));
        }
        Ok(())
    }
}

impl<T> std::ops::Index<(usize, usize)> for Mat<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Mat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.n + j]
    }
}

pub struct Lu<T> {
    n: usize,
    a: Vec<T>,
    perm: Vec<usize>,
}

impl<T: Real> Lu<T> {
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut y: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                let t = self.a[i * n + k] * y[k];
                y[i] -= t;
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let t = self.a[i * n + k] * y[k];
                y[i] -= t;
            }
            y[i] = y[i] / self.a[i * n + i];
        }
        y
    }
}

/// Euclidean norm of a float slice.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `a - b` componentwise.
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Orthonormal basis (Euclidean) of the orthogonal complement of `v`.
pub fn orthonormal_complement(v: &[f64]) -> Vec<Vec<f64>> {
    let n = v.len();
    let nv = norm(v);
    let mut basis: Vec<Vec<f64>> = vec![v.iter().map(|x| x / nv).collect()];
    let mut axes: Vec<usize> = (0..n).collect();
    // Start from the axes least aligned with v.
    axes.sort_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()));
    for k in axes {
        if basis.len() == n {
            break;
        }
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        for b in &basis {
            let d: f64 = e.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in e.iter_mut().zip(b) {
                *x -= d * y;
            }
        }
        let ne = norm(&e);
        if ne > 1e-8 {
            basis.push(e.iter().map(|x| x / ne).collect());
        }
    }
    basis.remove(0);
    basis
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Dual;

    #[test]
    fn solve_with_pivoting() {
        let m = Mat::from_fn(3, |i, j| {
            [[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]][i][j]
        });
        let x = m.solve(&[5.0, 3.0, 6.0]).unwrap();
        let back = m.mul_vec(&x);
        for (a, b) in back.iter().zip([5.0, 3.0, 6.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let m = Mat::from_fn(2, |_, _| 1.0);
        assert!(matches!(m.solve(&[1.0, 1.0]), Err(Error::Singular(_))));
    }

    #[test]
    fn inverse_differentiates_through_duals() {
        // d/dt (A + tB)^{-1} = -A^{-1} B A^{-1}
        let a = [[2.0, 1.0], [1.0, 3.0]];
        let b = [[0.5, 0.0], [0.0, -1.0]];
        let m = Mat::from_fn(2, |i, j| Dual::new(a[i][j], b[i][j]));
        let inv = m.inverse().unwrap();
        let ai = Mat::from_fn(2, |i, j| a[i][j]).inverse().unwrap();
        let bm = Mat::from_fn(2, |i, j| b[i][j]);
        for i in 0..2 {
            for j in 0..2 {
                let mut expected = 0.0;
                for k in 0..2 {
                    for l in 0..2 {
                        expected -= ai[(i, k)] * bm[(k, l)] * ai[(l, j)];
                    }
                }
                assert!((inv[(i, j)].eps - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn positive_definite_check() {
        assert!(Mat::<f64>::identity(3).check_positive_definite("g").is_ok());
        let m = Mat::from_fn(2, |i, j| if i == j { 1.0 } else { 2.0 });
        assert!(m.check_positive_definite("g").is_err());
    }

    #[test]
    fn complement_is_orthonormal() {
        let v = [1.0, 2.0, -0.5];
        let b = orthonormal_complement(&v);
        assert_eq!(b.len(), 2);
        for (i, e) in b.iter().enumerate() {
            assert!((norm(e) - 1.0).abs() < 1e-14);
            assert!(e.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>().abs() < 1e-14);
            for f in &b[i + 1..] {
                assert!(e.iter().zip(f).map(|(a, b)| a * b).sum::<f64>().abs() < 1e-14);
            }
        }
    }
}
