//! Small dense matrices and the factorizations the solvers need.
//!
//! State and control dimensions of a spectral Galerkin truncation are tiny
//! (a handful of modes, at most a few hundred stacked unknowns), so this
//! module sticks to straightforward row-major storage with Cholesky for
//! symmetric positive definite solves and cyclic Jacobi for symmetric
//! eigenvalues. Everything is generic over [`Scalar`]; no BLAS is linked.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    /// Builds from row-major data; errors when the element count is off.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                context: "Mat::from_vec".into(),
                expected: format!("{} elements", rows * cols),
                got: format!("{}", data.len()),
            });
        }
        Ok(Mat { rows, cols, data })
    }

    /// Builds from nested rows; errors on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::ShapeMismatch {
                    context: "Mat::from_rows".into(),
                    expected: format!("{c} columns"),
                    got: format!("{}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Mat {
            rows: r,
            cols: c,
            data,
        })
    }

    /// Diagonal matrix from the given entries.
    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Mat::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    /// `out += A x`.
    pub fn matvec_add(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols.max(1))) {
            let mut acc = T::zero();
            for (a, b) in row.iter().zip(x.iter()) {
                acc += *a * *b;
            }
            *o += acc;
        }
    }

    /// `out = A x`.
    pub fn matvec(&self, x: &[T], out: &mut [T]) {
        for v in out.iter_mut() {
            *v = T::zero();
        }
        self.matvec_add(x, out);
    }

    /// `out += A^T x`.
    pub fn tr_matvec_add(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (xi, row) in x.iter().zip(self.data.chunks_exact(self.cols.max(1))) {
            for (o, a) in out.iter_mut().zip(row.iter()) {
                *o += *a * *xi;
            }
        }
    }

    pub fn transpose(&self) -> Mat<T> {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.at(i, j));
            }
        }
        t
    }

    pub fn scaled(&self, s: T) -> Mat<T> {
        let mut m = self.clone();
        for v in m.data.iter_mut() {
            *v *= s;
        }
        m
    }

    pub fn add(&self, other: &Mat<T>) -> Mat<T> {
        debug_assert_eq!(self.shape(), other.shape());
        let mut m = self.clone();
        for (a, b) in m.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
        m
    }

    /// Largest absolute asymmetry `max_ij |a_ij - a_ji|` (square matrices).
    pub fn max_skew(&self) -> T {
        debug_assert_eq!(self.rows, self.cols);
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let d = (self.at(i, j) - self.at(j, i)).abs();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }

    /// `(A + A^T) / 2`.
    pub fn symmetrized(&self) -> Mat<T> {
        debug_assert_eq!(self.rows, self.cols);
        let mut m = Mat::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m.set(i, j, (self.at(i, j) + self.at(j, i)) * T::half());
            }
        }
        m
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(
            T::zero(),
            |acc, v| if v.abs() > acc { v.abs() } else { acc },
        )
    }

    pub fn frobenius(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, v| acc + *v * *v)
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Plain dot product with left-to-right accumulation (deterministic order).
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        acc += *x * *y;
    }
    acc
}

/// `y += alpha * x`.
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * *xi;
    }
}

/// Eigenvalues (ascending) and matching orthonormal eigenvectors (columns)
/// of a symmetric matrix, via cyclic Jacobi rotations.
pub fn sym_eigen<T: Scalar>(a: &Mat<T>) -> (Vec<T>, Mat<T>) {
    assert_eq!(a.rows(), a.cols(), "sym_eigen needs a square matrix");
    let n = a.rows();
    let mut w = a.clone();
    let mut v = Mat::<T>::identity(n);
    if n <= 1 {
        return (w.data.clone(), v);
    }

    let scale = {
        let f = w.frobenius();
        if f > T::zero() {
            f
        } else {
            T::one()
        }
    };
    let tol = T::epsilon() * scale * T::from_usize(n);

    for _sweep in 0..64 {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += w.at(i, j) * w.at(i, j);
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = w.at(p, q);
                if apq.abs() <= T::epsilon() * scale {
                    continue;
                }
                let app = w.at(p, p);
                let aqq = w.at(q, q);
                let theta = (aqq - app) / (T::two() * apq);
                // Smaller-angle root of t^2 + 2 t theta - 1 = 0.
                let t = {
                    let abs_t = T::one() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    if theta < T::zero() {
                        -abs_t
                    } else {
                        abs_t
                    }
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                // Update rows/columns p and q of the working matrix.
                for k in 0..n {
                    let wkp = w.at(k, p);
                    let wkq = w.at(k, q);
                    w.set(k, p, c * wkp - s * wkq);
                    w.set(k, q, s * wkp + c * wkq);
                }
                for k in 0..n {
                    let wpk = w.at(p, k);
                    let wqk = w.at(q, k);
                    w.set(p, k, c * wpk - s * wqk);
                    w.set(q, k, s * wpk + c * wqk);
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        w.at(i, i)
            .partial_cmp(&w.at(j, j))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigs: Vec<T> = order.iter().map(|&i| w.at(i, i)).collect();
    let mut vecs = Mat::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..n {
            vecs.set(k, new_col, v.at(k, old_col));
        }
    }
    (eigs, vecs)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn sym_min_eig<T: Scalar>(a: &Mat<T>) -> T {
    let (eigs, _) = sym_eigen(a);
    eigs.first().copied().unwrap_or_else(T::zero)
}

/// Cholesky factorization `A = L L^T` of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Mat<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Returns `None` when the matrix is not numerically positive definite.
    pub fn new(a: &Mat<T>) -> Option<Self> {
        if a.rows() != a.cols() {
            return None;
        }
        let n = a.rows();
        let mut l = Mat::<T>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a.at(i, j);
                for k in 0..j {
                    sum -= l.at(i, k) * l.at(j, k);
                }
                if i == j {
                    if sum <= T::zero() || !sum.is_finite() {
                        return None;
                    }
                    l.set(i, i, sum.sqrt());
                } else {
                    l.set(i, j, sum / l.at(j, j));
                }
            }
        }
        Some(Cholesky { l })
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.l.rows();
        debug_assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        // Forward substitution L y = b.
        for i in 0..n {
            let mut sum = x[i];
            for (k, xk) in x.iter().enumerate().take(i) {
                sum -= self.l.at(i, k) * *xk;
            }
            x[i] = sum / self.l.at(i, i);
        }
        // Back substitution L^T x = y.
        for i in (0..n).rev() {
            let mut sum = x[i];
            for (k, xk) in x.iter().enumerate().skip(i + 1) {
                sum -= self.l.at(k, i) * *xk;
            }
            x[i] = sum / self.l.at(i, i);
        }
        x
    }
}

/// Solves a symmetric system `A x = b`: Cholesky when positive definite,
/// otherwise a minimal-norm least-squares solution through the eigenbasis
/// (singular directions below `rank_tol * max|eig|` are dropped).
pub fn solve_sym<T: Scalar>(a: &Mat<T>, b: &[T]) -> Result<Vec<T>> {
    if a.rows() != a.cols() || a.rows() != b.len() {
        return Err(Error::ShapeMismatch {
            context: "solve_sym".into(),
            expected: format!("square matrix matching rhs of length {}", b.len()),
            got: format!("{}x{}", a.rows(), a.cols()),
        });
    }
    if let Some(chol) = Cholesky::new(a) {
        return Ok(chol.solve(b));
    }
    let (eigs, vecs) = sym_eigen(a);
    let max_abs = eigs.iter().fold(
        T::zero(),
        |acc, e| if e.abs() > acc { e.abs() } else { acc },
    );
    let rank_tol = T::from_f64(1e-12)
        * if max_abs > T::zero() {
            max_abs
        } else {
            T::one()
        };
    let n = b.len();
    let mut x = vec![T::zero(); n];
    for (j, eig) in eigs.iter().enumerate() {
        if eig.abs() <= rank_tol {
            continue;
        }
        let mut proj = T::zero();
        for (i, bi) in b.iter().enumerate() {
            proj += vecs.at(i, j) * *bi;
        }
        let coef = proj / *eig;
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += coef * vecs.at(i, j);
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let mut out = vec![0.0; 3];
        a.matvec(&[1.0, -1.0], &mut out);
        assert_eq!(out, vec![-1.0, -1.0, -1.0]);
        let mut tr = vec![0.0; 2];
        a.tr_matvec_add(&[1.0, 1.0, 1.0], &mut tr);
        assert_eq!(tr, vec![9.0, 12.0]);
        assert_eq!(a.transpose().at(0, 2), 5.0);
    }

    #[test]
    fn jacobi_matches_hand_computed_spectrum() {
        // Eigenvalues of [[2,1],[1,2]] are 1 and 3.
        let a = Mat::<f64>::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let (eigs, vecs) = sym_eigen(&a);
        assert!((eigs[0] - 1.0).abs() < 1e-14);
        assert!((eigs[1] - 3.0).abs() < 1e-14);
        // Residual check A v = lambda v.
        for (j, eig) in eigs.iter().enumerate() {
            for i in 0..2 {
                let av = a.at(i, 0) * vecs.at(0, j) + a.at(i, 1) * vecs.at(1, j);
                assert!((av - eig * vecs.at(i, j)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn jacobi_on_larger_matrix_reproduces_trace_and_det() {
        // Symmetric 4x4 with known trace; det checked via eigenvalue product.
        let a = Mat::from_rows(&[
            vec![4.0, 1.0, 0.5, 0.0],
            vec![1.0, 3.0, 0.2, 0.1],
            vec![0.5, 0.2, 2.0, 0.3],
            vec![0.0, 0.1, 0.3, 1.0],
        ])
        .unwrap();
        let (eigs, _) = sym_eigen(&a);
        let trace: f64 = eigs.iter().sum();
        assert!((trace - 10.0).abs() < 1e-12);
        assert!(eigs.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let a = Mat::<f64>::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let chol = Cholesky::new(&a).unwrap();
        let x = chol.solve(&[8.0, 7.0]);
        assert!((x[0] - 1.25).abs() < 1e-14);
        assert!((x[1] - 1.5).abs() < 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(Cholesky::<f64>::new(&a).is_none());
    }

    #[test]
    fn solve_sym_falls_back_to_minimal_norm() {
        // Rank-1 system: A = diag(1, 0), b = (2, 0): minimal-norm solution (2, 0).
        let a = Mat::<f64>::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let x = solve_sym(&a, &[2.0, 0.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12);
        assert!(x[1].abs() < 1e-12);
    }

    #[test]
    fn generic_over_f32() {
        let a = Mat::<f32>::from_rows(&[vec![2.0, 0.0], vec![0.0, 5.0]]).unwrap();
        let (eigs, _) = sym_eigen(&a);
        assert!((eigs[0] - 2.0).abs() < 1e-5);
        assert!((eigs[1] - 5.0).abs() < 1e-5);
    }
}
