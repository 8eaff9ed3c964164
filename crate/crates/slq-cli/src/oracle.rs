//! Dense brute-force oracle for the open-loop minimiser.
//!
//! This deliberately shares no code path with the matrix-free solver: it
//! reconstructs the full Hessian and gradient of the discrete cost purely
//! from black-box `cost()` evaluations on canonical basis controls, solves
//! the dense symmetric system, and returns the minimiser. Because the cost
//! is exactly quadratic, the finite differences are exact up to roundoff —
//! and evaluating them along both positive and negative steps gives an
//! internal consistency check that would expose any non-quadratic behavior.

use anyhow::{anyhow, bail, Result};
use slq_core::linalg::solve_sym;
use slq_core::lq::cost;
use slq_core::tree::AdaptedProcess;
use slq_core::{LqProblemSpec64, Mat64};

/// Largest stacked control dimension the dense oracle accepts.
pub const MAX_ORACLE_DIM: usize = 200;

/// Tolerance for the two-route Hessian reconstruction agreement, relative
/// to the largest Hessian entry.
pub const HESSIAN_CONSISTENCY_TOL: f64 = 1e-10;

/// Minimiser found by dense reconstruction, with its cost and the observed
/// two-route Hessian discrepancy.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub minimizer: AdaptedProcess<f64>,
    pub cost: f64,
    /// `max |H_forward - H_backward|`, scaled by `max(1, max |H|)`.
    pub hessian_discrepancy: f64,
}

/// Reconstructs the cost's dense Hessian and gradient from `cost()`
/// evaluations on basis vectors and solves for the unique minimiser.
pub fn brute_force_minimizer(spec: &LqProblemSpec64) -> Result<OracleResult> {
    let d = spec.control_flat_dim();
    if d > MAX_ORACLE_DIM {
        bail!("brute-force oracle limited to control dimension {MAX_ORACLE_DIM}, got {d}");
    }
    let first = spec.init_level;
    let last = spec.last_running_level();
    let m = spec.control_dim();

    let eval = |w: &[f64]| -> Result<f64> {
        let u = AdaptedProcess::from_flat(first, last, m, 1, w)
            .map_err(|e| anyhow!("oracle control: {e}"))?;
        cost(spec, &u).map_err(|e| anyhow!("oracle cost evaluation: {e}"))
    };

    let mut w = vec![0.0; d];
    let j0 = eval(&w)?;
    let mut j_pos = vec![0.0; d];
    let mut j_neg = vec![0.0; d];
    for i in 0..d {
        w[i] = 1.0;
        j_pos[i] = eval(&w)?;
        w[i] = -1.0;
        j_neg[i] = eval(&w)?;
        w[i] = 0.0;
    }

    // Diagonal: second difference along +/- e_i; off-diagonal: the exact
    // quadratic polarisation identity along the forward and backward routes.
    let mut h = Mat64::zeros(d, d);
    let mut discrepancy = 0.0f64;
    for i in 0..d {
        let forward = {
            w[i] = 2.0;
            let j2 = eval(&w)?;
            w[i] = 0.0;
            j2 - 2.0 * j_pos[i] + j0
        };
        let backward = j_pos[i] + j_neg[i] - 2.0 * j0;
        discrepancy = discrepancy.max((forward - backward).abs());
        h.set(i, i, backward);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            w[i] = 1.0;
            w[j] = 1.0;
            let forward = eval(&w)? - j_pos[i] - j_pos[j] + j0;
            w[i] = -1.0;
            w[j] = -1.0;
            let backward = eval(&w)? - j_neg[i] - j_neg[j] + j0;
            w[i] = 0.0;
            w[j] = 0.0;
            discrepancy = discrepancy.max((forward - backward).abs());
            let value = 0.5 * (forward + backward);
            h.set(i, j, value);
            h.set(j, i, value);
        }
    }
    let scale = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .fold(1.0f64, |acc, (i, j)| acc.max(h.at(i, j).abs()));
    let hessian_discrepancy = discrepancy / scale;
    if hessian_discrepancy > HESSIAN_CONSISTENCY_TOL {
        bail!(
            "brute-force Hessian routes disagree by {hessian_discrepancy:e} \
             (tolerance {HESSIAN_CONSISTENCY_TOL:e}); the cost is not behaving quadratically"
        );
    }

    // Exact gradient at zero from the odd part of the basis evaluations.
    let grad: Vec<f64> = (0..d).map(|i| 0.5 * (j_pos[i] - j_neg[i])).collect();
    let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
    let solution = solve_sym(&h, &rhs).map_err(|e| anyhow!("oracle dense solve: {e}"))?;
    let value = eval(&solution)?;
    let minimizer = AdaptedProcess::from_flat(first, last, m, 1, &solution)
        .map_err(|e| anyhow!("oracle control: {e}"))?;
    Ok(OracleResult {
        minimizer,
        cost: value,
        hessian_discrepancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use slq_core::instances::{random_problem, InstanceParams};
    use slq_core::lq::solve_open_loop;
    use slq_core::tree::process_norm;

    #[test]
    fn zero_linear_data_minimises_at_zero() {
        // Homogenizing removes every affine term (initial state,
        // inhomogeneities, linear weights), so zero is the unique minimiser.
        let spec: LqProblemSpec64 = random_problem(3, &InstanceParams::standard(2, 1, 3))
            .unwrap()
            .homogenized();
        let result = brute_force_minimizer(&spec).unwrap();
        assert!(result.minimizer.max_abs() <= 1e-10);
        assert!(result.cost.abs() <= 1e-12);
    }

    #[test]
    fn oracle_agrees_with_the_iterative_solver() {
        for seed in 0..5u64 {
            let spec: LqProblemSpec64 =
                random_problem(seed, &InstanceParams::standard(2, 1, 3)).unwrap();
            let oracle = brute_force_minimizer(&spec).unwrap();
            let (u, diag) = solve_open_loop(&spec).unwrap();
            let mut gap = oracle.minimizer.clone();
            gap.add_scaled(&u, -1.0);
            assert!(
                process_norm(&gap, &spec.tree) <= 1e-8,
                "seed {seed}: control gap {:e}",
                process_norm(&gap, &spec.tree)
            );
            assert!((oracle.cost - diag.cost).abs() <= 1e-10 * diag.cost.abs().max(1.0));
            assert!(oracle.hessian_discrepancy <= HESSIAN_CONSISTENCY_TOL);
        }
    }

    #[test]
    fn oversized_problems_are_rejected() {
        // Control dim m * (2^K - 1) = 3 * 127 = 381 > 200.
        let spec: LqProblemSpec64 = random_problem(1, &InstanceParams::standard(1, 3, 7)).unwrap();
        let err = brute_force_minimizer(&spec).unwrap_err();
        assert!(err.to_string().contains("200"));
    }
}
