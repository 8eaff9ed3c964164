//! Matrix-free Krylov solvers in a weighted inner product.
//!
//! The control-space operators of this crate are self-adjoint with respect
//! to the *weighted* pairing `<a, b>_W = sum_i w_i a_i b_i` (the flattened
//! form of the tree pairing), not the Euclidean one, so every solver here
//! takes the pairing explicitly and runs its recurrences in that geometry:
//! conjugate gradients with optional preconditioning for the self-adjoint
//! positive case, a normal-equations fallback for semidefinite or
//! indefinite-but-consistent systems, BiCGStab for the nonsymmetric
//! two-player systems, and a Lanczos extremal-eigenvalue estimate for
//! operators too large to assemble densely.

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Mat};
use crate::scalar::Scalar;

/// Matrix-free operator application on flat vectors.
pub type ApplyFn<'a, T> = dyn FnMut(&[T]) -> Result<Vec<T>> + 'a;

/// Infallible preconditioner application (approximate inverse).
pub type PrecondFn<'a, T> = dyn FnMut(&[T]) -> Vec<T> + 'a;

/// Iteration diagnostics common to all solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct KrylovReport<T> {
    /// Operator applications consumed.
    pub iterations: usize,
    /// Final `||b - A x||_W / ||b||_W` (true residual, recomputed).
    pub rel_residual: T,
    /// The normal-equations minimal-norm path was taken (stalled CG or an
    /// explicit least-squares request); the solution may not satisfy the
    /// original system when it is inconsistent.
    pub least_squares_fallback: bool,
}

/// Weighted pairing on flat vectors, optionally split into two blocks whose
/// partial sums are combined by a single final addition.
///
/// The split form makes every reduction invariant under exchanging the two
/// blocks (scalar addition is commutative at fixed precision), which the
/// two-player solver relies on to make player relabeling an exact — bitwise —
/// symmetry of its iterates.
pub struct Pairing<'a, T> {
    weights: &'a [T],
    split: Option<usize>,
}

impl<'a, T: Scalar> Pairing<'a, T> {
    /// Plain weighted pairing over the whole vector.
    pub fn flat(weights: &'a [T]) -> Self {
        Pairing {
            weights,
            split: None,
        }
    }

    /// Pairing whose reductions sum the two blocks `[..at]` and `[at..]`
    /// separately before combining.
    pub fn split(weights: &'a [T], at: usize) -> Self {
        debug_assert!(at <= weights.len());
        Pairing {
            weights,
            split: Some(at),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `<a, b>_W`.
    pub fn dot(&self, a: &[T], b: &[T]) -> T {
        match self.split {
            None => weighted_dot(self.weights, a, b),
            Some(s) => {
                weighted_dot(&self.weights[..s], &a[..s], &b[..s])
                    + weighted_dot(&self.weights[s..], &a[s..], &b[s..])
            }
        }
    }

    /// `||a||_W`.
    pub fn norm(&self, a: &[T]) -> T {
        self.dot(a, a).max(T::zero()).sqrt()
    }
}

/// `<a, b>_W` with a plain left-to-right accumulation. The product is
/// grouped `w * (a * b)` so the pairing is argument-symmetric at the bitwise
/// level, not just mathematically.
#[inline]
pub fn weighted_dot<T: Scalar>(weights: &[T], a: &[T], b: &[T]) -> T {
    debug_assert_eq!(weights.len(), a.len());
    debug_assert_eq!(weights.len(), b.len());
    let mut acc = T::zero();
    for i in 0..a.len() {
        acc += weights[i] * (a[i] * b[i]);
    }
    acc
}

/// `||a||_W`.
#[inline]
pub fn weighted_norm<T: Scalar>(weights: &[T], a: &[T]) -> T {
    weighted_dot(weights, a, a).max(T::zero()).sqrt()
}

fn check_apply_shape(got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::ShapeMismatch {
            context: "krylov operator".into(),
            expected: format!("{expected}-vector"),
            got: format!("{got}-vector"),
        });
    }
    Ok(())
}

fn to_f64_vec<T: Scalar>(x: &[T]) -> Vec<f64> {
    x.iter().map(|v| (*v).to_f64()).collect()
}

/// Conjugate gradients for a W-self-adjoint positive (semi)definite
/// operator, solving `A x = b` from `x = 0` to relative residual `tol`.
///
/// Detected negative curvature aborts with an indefiniteness error (the
/// operator is not a convex quadratic's Hessian); a stall on a null
/// direction of a semidefinite operator switches to the normal-equations
/// minimal-norm solve and flags the report.
pub fn conjugate_gradient<T: Scalar>(
    apply: &mut ApplyFn<'_, T>,
    mut precond: Option<&mut PrecondFn<'_, T>>,
    rhs: &[T],
    pairing: &Pairing<'_, T>,
    tol: T,
    max_iter: usize,
) -> Result<(Vec<T>, KrylovReport<T>)> {
    let dim = rhs.len();
    if pairing.len() != dim {
        return Err(Error::ShapeMismatch {
            context: "krylov weights".into(),
            expected: format!("{dim}-vector"),
            got: format!("{}", pairing.len()),
        });
    }
    let b_norm = pairing.norm(rhs);
    if b_norm == T::zero() {
        return Ok((
            vec![T::zero(); dim],
            KrylovReport {
                iterations: 0,
                rel_residual: T::zero(),
                least_squares_fallback: false,
            },
        ));
    }

    let mut x = vec![T::zero(); dim];
    let mut r = rhs.to_vec();
    let mut z = match precond.as_mut() {
        Some(m) => m(&r),
        None => r.clone(),
    };
    check_apply_shape(z.len(), dim)?;
    let mut p = z.clone();
    let mut rz = pairing.dot(&r, &z);
    let mut iterations = 0usize;
    // Running estimate of the operator scale ||A p|| / ||p||, used to give
    // the curvature and stall thresholds a magnitude to be relative to.
    let mut op_scale = T::zero();
    let guard = T::from_f64(1e-14);

    while iterations < max_iter {
        let ap = apply(&p)?;
        check_apply_shape(ap.len(), dim)?;
        iterations += 1;
        let pp = pairing.dot(&p, &p);
        let pap = pairing.dot(&p, &ap);
        let ap_norm = pairing.norm(&ap);
        let p_norm = pp.max(T::zero()).sqrt();
        if p_norm > T::zero() {
            let s = ap_norm / p_norm;
            if s > op_scale {
                op_scale = s;
            }
        }
        let floor = guard * pp * op_scale.max(T::one());
        if pap < -floor {
            return Err(Error::Indefinite {
                detail: format!(
                    "negative curvature <p, Ap> = {:e} on a search direction after {} iterations; \
                     the operator is not positive semidefinite (run the finiteness check)",
                    pap.to_f64(),
                    iterations
                ),
            });
        }
        if pap <= floor {
            // Null direction of a semidefinite operator: minimal-norm path.
            let (xs, mut report) = normal_equations(
                apply,
                rhs,
                pairing,
                tol,
                max_iter.saturating_sub(iterations),
            )?;
            report.iterations += iterations;
            report.least_squares_fallback = true;
            return Ok((xs, report));
        }
        let alpha = rz / pap;
        for i in 0..dim {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if pairing.norm(&r) <= tol * b_norm {
            break;
        }
        z = match precond.as_mut() {
            Some(m) => m(&r),
            None => r.clone(),
        };
        let rz_new = pairing.dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..dim {
            p[i] = z[i] + beta * p[i];
        }
    }

    let final_res = true_residual(apply, &x, rhs, pairing)?;
    if final_res > tol {
        return Err(Error::NoConvergence {
            iterations,
            residual: final_res.to_f64(),
            best: to_f64_vec(&x),
        });
    }
    Ok((
        x,
        KrylovReport {
            iterations,
            rel_residual: final_res,
            least_squares_fallback: false,
        },
    ))
}

/// Minimal-norm solve of `A x = b` through the normal equations
/// `A (A x) = A b`, valid for any W-self-adjoint operator (the squared
/// operator is positive semidefinite). Starting from zero, conjugate
/// gradients converge to the minimal-norm least-squares solution; for
/// inconsistent systems the reported true residual stays away from zero.
pub fn normal_equations<T: Scalar>(
    apply: &mut ApplyFn<'_, T>,
    rhs: &[T],
    pairing: &Pairing<'_, T>,
    tol: T,
    max_iter: usize,
) -> Result<(Vec<T>, KrylovReport<T>)> {
    let dim = rhs.len();
    let ab = apply(rhs)?;
    check_apply_shape(ab.len(), dim)?;
    let ab_norm = pairing.norm(&ab);
    let mut x = vec![T::zero(); dim];
    let mut iterations = 1usize;
    if ab_norm > T::zero() {
        let mut r = ab.clone();
        let mut p = r.clone();
        let mut rr = pairing.dot(&r, &r);
        while iterations < max_iter.max(2) {
            let ap1 = apply(&p)?;
            let aap = apply(&ap1)?;
            iterations += 2;
            let pap = pairing.dot(&p, &aap);
            if pap <= T::zero() {
                break;
            }
            let alpha = rr / pap;
            for i in 0..dim {
                x[i] += alpha * p[i];
                r[i] -= alpha * aap[i];
            }
            let rr_new = pairing.dot(&r, &r);
            if rr_new.max(T::zero()).sqrt() <= tol * ab_norm {
                break;
            }
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..dim {
                p[i] = r[i] + beta * p[i];
            }
        }
    }
    let final_res = true_residual(apply, &x, rhs, pairing)?;
    Ok((
        x,
        KrylovReport {
            iterations,
            rel_residual: final_res,
            least_squares_fallback: true,
        },
    ))
}

/// BiCGStab for general (nonsymmetric) operators in the weighted pairing.
pub fn bicgstab<T: Scalar>(
    apply: &mut ApplyFn<'_, T>,
    rhs: &[T],
    pairing: &Pairing<'_, T>,
    tol: T,
    max_iter: usize,
) -> Result<(Vec<T>, KrylovReport<T>)> {
    let dim = rhs.len();
    let b_norm = pairing.norm(rhs);
    if b_norm == T::zero() {
        return Ok((
            vec![T::zero(); dim],
            KrylovReport {
                iterations: 0,
                rel_residual: T::zero(),
                least_squares_fallback: false,
            },
        ));
    }
    let mut x = vec![T::zero(); dim];
    let mut r = rhs.to_vec();
    let r_hat = r.clone();
    let mut rho = T::one();
    let mut alpha = T::one();
    let mut omega = T::one();
    let mut v = vec![T::zero(); dim];
    let mut p = vec![T::zero(); dim];
    let mut iterations = 0usize;
    let breakdown = T::from_f64(1e-300);

    while iterations < max_iter {
        let rho_new = pairing.dot(&r_hat, &r);
        if rho_new.abs() < breakdown {
            return Err(Error::NoConvergence {
                iterations,
                residual: (pairing.norm(&r) / b_norm).to_f64(),
                best: to_f64_vec(&x),
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..dim {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        v = apply(&p)?;
        check_apply_shape(v.len(), dim)?;
        iterations += 1;
        let rhv = pairing.dot(&r_hat, &v);
        if rhv.abs() < breakdown {
            return Err(Error::NoConvergence {
                iterations,
                residual: (pairing.norm(&r) / b_norm).to_f64(),
                best: to_f64_vec(&x),
            });
        }
        alpha = rho / rhv;
        let mut s = r.clone();
        for i in 0..dim {
            s[i] -= alpha * v[i];
        }
        if pairing.norm(&s) <= tol * b_norm {
            for i in 0..dim {
                x[i] += alpha * p[i];
            }
            break;
        }
        let t = apply(&s)?;
        iterations += 1;
        let tt = pairing.dot(&t, &t);
        if tt.abs() < breakdown {
            return Err(Error::NoConvergence {
                iterations,
                residual: (pairing.norm(&s) / b_norm).to_f64(),
                best: to_f64_vec(&x),
            });
        }
        omega = pairing.dot(&t, &s) / tt;
        for i in 0..dim {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        if pairing.norm(&r) <= tol * b_norm {
            break;
        }
    }

    let final_res = true_residual(apply, &x, rhs, pairing)?;
    if final_res > tol {
        return Err(Error::NoConvergence {
            iterations,
            residual: final_res.to_f64(),
            best: to_f64_vec(&x),
        });
    }
    Ok((
        x,
        KrylovReport {
            iterations,
            rel_residual: final_res,
            least_squares_fallback: false,
        },
    ))
}

fn true_residual<T: Scalar>(
    apply: &mut ApplyFn<'_, T>,
    x: &[T],
    rhs: &[T],
    pairing: &Pairing<'_, T>,
) -> Result<T> {
    let ax = apply(x)?;
    let mut r = rhs.to_vec();
    for i in 0..r.len() {
        r[i] -= ax[i];
    }
    let b_norm = pairing.norm(rhs);
    if b_norm == T::zero() {
        return Ok(T::zero());
    }
    Ok(pairing.norm(&r) / b_norm)
}

/// Lanczos estimate of the smallest eigenvalue of a W-self-adjoint operator
/// (full reorthogonalisation, deterministic start vector). Exact when
/// `steps >= dim`; otherwise an estimate from above.
pub fn lanczos_min_eig<T: Scalar>(
    apply: &mut ApplyFn<'_, T>,
    dim: usize,
    weights: &[T],
    steps: usize,
) -> Result<T> {
    if dim == 0 {
        return Err(Error::InvalidSpec(
            "cannot estimate eigenvalues in dimension zero".into(),
        ));
    }
    let m = steps.min(dim).max(1);
    // Deterministic, sign-varying start vector.
    let mut q = vec![T::zero(); dim];
    for (i, v) in q.iter_mut().enumerate() {
        *v = T::from_f64(((i * 2654435761 + 104729) % 1000) as f64 / 500.0 - 1.0 + 0.001);
    }
    let norm = weighted_norm(weights, &q);
    for v in q.iter_mut() {
        *v /= norm;
    }

    let mut basis: Vec<Vec<T>> = vec![q.clone()];
    let mut alphas: Vec<T> = Vec::with_capacity(m);
    let mut betas: Vec<T> = Vec::new();

    for j in 0..m {
        let qj = basis[j].clone();
        let mut w = apply(&qj)?;
        check_apply_shape(w.len(), dim)?;
        let alpha = weighted_dot(weights, &qj, &w);
        alphas.push(alpha);
        // Full reorthogonalisation against every stored basis vector.
        for q_prev in basis.iter() {
            let c = weighted_dot(weights, q_prev, &w);
            for i in 0..dim {
                w[i] -= c * q_prev[i];
            }
        }
        for q_prev in basis.iter() {
            let c = weighted_dot(weights, q_prev, &w);
            for i in 0..dim {
                w[i] -= c * q_prev[i];
            }
        }
        let beta = weighted_norm(weights, &w);
        if j + 1 == m || beta <= T::from_f64(1e-14) * alpha.abs().max(T::one()) {
            break;
        }
        betas.push(beta);
        for v in w.iter_mut() {
            *v /= beta;
        }
        basis.push(w);
    }

    let k = alphas.len();
    let mut tri = Mat::zeros(k, k);
    for i in 0..k {
        tri.set(i, i, alphas[i]);
        if i + 1 < k {
            tri.set(i, i + 1, betas[i]);
            tri.set(i + 1, i, betas[i]);
        }
    }
    let (eigs, _) = sym_eigen(&tri);
    Ok(eigs[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_apply(d: Vec<f64>) -> impl FnMut(&[f64]) -> Result<Vec<f64>> {
        move |x: &[f64]| Ok(x.iter().zip(d.iter()).map(|(a, b)| a * b).collect())
    }

    #[test]
    fn cg_solves_weighted_diagonal_system() {
        let mut apply = diag_apply(vec![1.0, 2.0, 3.0, 4.0]);
        let w = [0.5, 0.25, 0.125, 0.125];
        let b = [2.0, 2.0, 9.0, 8.0];
        let (x, report) =
            conjugate_gradient(&mut apply, None, &b, &Pairing::flat(&w), 1e-12, 100).unwrap();
        for (xi, want) in x.iter().zip([2.0, 1.0, 3.0, 2.0]) {
            assert!((xi - want).abs() < 1e-10);
        }
        assert!(!report.least_squares_fallback);
        assert!(report.rel_residual <= 1e-12);
    }

    #[test]
    fn cg_handles_non_diagonal_weighted_self_adjoint_operator() {
        // C = W^{-1} S with S symmetric positive definite is self-adjoint
        // and positive in the W inner product.
        let w = [0.4, 0.1, 0.3, 0.2];
        let s = crate::linalg::Mat::<f64>::from_rows(&[
            vec![4.0, 1.0, 0.5, 0.0],
            vec![1.0, 3.0, 0.2, 0.1],
            vec![0.5, 0.2, 2.0, 0.3],
            vec![0.0, 0.1, 0.3, 1.0],
        ])
        .unwrap();
        let mut apply = |x: &[f64]| -> Result<Vec<f64>> {
            let mut out = vec![0.0; 4];
            s.matvec(x, &mut out);
            for i in 0..4 {
                out[i] /= w[i];
            }
            Ok(out)
        };
        let b = [1.0, -2.0, 0.5, 3.0];
        let (x, _) =
            conjugate_gradient(&mut apply, None, &b, &Pairing::flat(&w), 1e-13, 200).unwrap();
        let ax = apply(&x).unwrap();
        for i in 0..4 {
            assert!((ax[i] - b[i]).abs() < 1e-11);
        }
    }

    #[test]
    fn preconditioned_cg_converges_in_one_step_with_exact_inverse() {
        let d = vec![1.0, 10.0, 100.0, 1000.0];
        let mut apply = diag_apply(d.clone());
        let mut inv =
            move |r: &[f64]| -> Vec<f64> { r.iter().zip(d.iter()).map(|(a, b)| a / b).collect() };
        let w = [0.25; 4];
        let b = [1.0, 1.0, 1.0, 1.0];
        let (x, report) = conjugate_gradient(
            &mut apply,
            Some(&mut inv),
            &b,
            &Pairing::flat(&w),
            1e-12,
            10,
        )
        .unwrap();
        assert!(report.iterations <= 2);
        assert!((x[3] - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn cg_reports_indefiniteness() {
        // rhs leaning into the negative eigendirection produces a search
        // direction with strictly negative curvature on the first step.
        let mut apply = diag_apply(vec![1.0, -1.0]);
        let err = conjugate_gradient(
            &mut apply,
            None,
            &[0.1, 1.0],
            &Pairing::flat(&[0.5, 0.5]),
            1e-10,
            10,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Indefinite { .. }));
    }

    #[test]
    fn indefinite_but_balanced_rhs_resolves_through_fallback() {
        // <b, Ab> = 0 exactly: CG stalls immediately and the consistent
        // system is still solved (minimal-norm path), flagged as such.
        let mut apply = diag_apply(vec![1.0, -1.0]);
        let (x, report) = conjugate_gradient(
            &mut apply,
            None,
            &[1.0, 1.0],
            &Pairing::flat(&[0.5, 0.5]),
            1e-10,
            50,
        )
        .unwrap();
        assert!(report.least_squares_fallback);
        assert!((x[0] - 1.0).abs() < 1e-9);
        assert!((x[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn singular_consistent_system_solves_without_fallback() {
        // rhs orthogonal to the null space: plain CG never meets the null
        // direction and converges directly.
        let mut apply = diag_apply(vec![1.0, 0.0]);
        let (x, report) = conjugate_gradient(
            &mut apply,
            None,
            &[2.0, 0.0],
            &Pairing::flat(&[0.5, 0.5]),
            1e-10,
            50,
        )
        .unwrap();
        assert!(!report.least_squares_fallback);
        assert!((x[0] - 2.0).abs() < 1e-9);
        assert!(x[1].abs() < 1e-12);
    }

    #[test]
    fn singular_inconsistent_system_stalls_into_flagged_fallback() {
        let mut apply = diag_apply(vec![1.0, 0.0]);
        let (x, report) = conjugate_gradient(
            &mut apply,
            None,
            &[2.0, 3.0],
            &Pairing::flat(&[0.5, 0.5]),
            1e-10,
            50,
        )
        .unwrap();
        assert!(report.least_squares_fallback);
        assert!((x[0] - 2.0).abs() < 1e-9);
        assert!(x[1].abs() < 1e-12);
        assert!(report.rel_residual > 0.5);
    }

    #[test]
    fn inconsistent_system_reports_nonzero_residual() {
        let mut apply = diag_apply(vec![1.0, 0.0]);
        let (x, report) = normal_equations(
            &mut apply,
            &[2.0, 3.0],
            &Pairing::flat(&[0.5, 0.5]),
            1e-12,
            50,
        )
        .unwrap();
        assert!((x[0] - 2.0).abs() < 1e-9);
        assert!(x[1].abs() < 1e-12);
        assert!(report.rel_residual > 0.5);
        assert!(report.least_squares_fallback);
    }

    #[test]
    fn bicgstab_solves_nonsymmetric_system() {
        let a = crate::linalg::Mat::<f64>::from_rows(&[
            vec![2.0, 1.0, 0.0],
            vec![-0.5, 3.0, 0.7],
            vec![0.0, 0.2, 1.5],
        ])
        .unwrap();
        let mut apply = |x: &[f64]| -> Result<Vec<f64>> {
            let mut out = vec![0.0; 3];
            a.matvec(x, &mut out);
            Ok(out)
        };
        let w = [1.0, 0.5, 0.25];
        let b = [1.0, 2.0, 3.0];
        let (x, report) = bicgstab(&mut apply, &b, &Pairing::flat(&w), 1e-12, 100).unwrap();
        let ax = apply(&x).unwrap();
        for i in 0..3 {
            assert!((ax[i] - b[i]).abs() < 1e-10);
        }
        assert!(report.rel_residual <= 1e-12);
    }

    #[test]
    fn split_pairing_is_exactly_block_swap_invariant() {
        // Sums that straddle the split in different orders must agree
        // bitwise when computed through the split pairing.
        let w = [0.3, 0.7, 0.1, 0.9, 0.2, 0.8];
        let a = [0.123456789, -1.5, 3.25, 0.7, -0.01, 2.0];
        let b = [1.1, 0.9, -0.4, 0.33, 1.7, -0.2];
        let p = Pairing::split(&w, 3);
        let lhs = p.dot(&a, &b);
        // Swap the two blocks of everything and recompute.
        let swap = |v: &[f64]| -> Vec<f64> {
            let mut out = v[3..].to_vec();
            out.extend_from_slice(&v[..3]);
            out
        };
        let (ws, asw, bs) = (swap(&w), swap(&a), swap(&b));
        let ps = Pairing::split(&ws, 3);
        let rhs = ps.dot(&asw, &bs);
        assert_eq!(lhs.to_bits(), rhs.to_bits());
    }

    #[test]
    fn nonconvergence_carries_the_partial_iterate() {
        // One iteration on a well-conditioned system cannot reach 1e-14,
        // but the partial iterate should be on its way toward the solution.
        let a = crate::linalg::Mat::<f64>::from_rows(&[
            vec![2.0, 1.0, 0.0],
            vec![-0.5, 3.0, 0.7],
            vec![0.0, 0.2, 1.5],
        ])
        .unwrap();
        let mut apply = |x: &[f64]| -> Result<Vec<f64>> {
            let mut out = vec![0.0; 3];
            a.matvec(x, &mut out);
            Ok(out)
        };
        let w = [1.0; 3];
        let b = [1.0, 2.0, 3.0];
        let err = bicgstab(&mut apply, &b, &Pairing::flat(&w), 1e-14, 1).unwrap_err();
        match err {
            Error::NoConvergence { best, residual, .. } => {
                assert_eq!(best.len(), 3);
                assert!(residual < 1.0, "partial iterate should reduce the residual");
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn lanczos_finds_smallest_eigenvalue_exactly_at_full_dimension() {
        let n = 12;
        // W-self-adjoint with known spectrum: diagonal operator.
        let d: Vec<f64> = (0..n).map(|i| 0.3 + i as f64).collect();
        let mut apply = diag_apply(d);
        let w: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let min = lanczos_min_eig(&mut apply, n, &w, n).unwrap();
        assert!((min - 0.3).abs() < 1e-9, "got {min}");
    }

    #[test]
    fn lanczos_estimates_negative_extreme() {
        let mut apply = diag_apply(vec![2.0, -5.0, 1.0, 4.0]);
        let w = [0.25; 4];
        let min = lanczos_min_eig(&mut apply, 4, &w, 4).unwrap();
        assert!((min + 5.0).abs() < 1e-9);
    }

    #[test]
    fn zero_rhs_short_circuits() {
        let mut apply = diag_apply(vec![1.0, 2.0]);
        let (x, report) = conjugate_gradient(
            &mut apply,
            None,
            &[0.0, 0.0],
            &Pairing::flat(&[0.5, 0.5]),
            1e-12,
            10,
        )
        .unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
        assert_eq!(report.iterations, 0);
    }
}
