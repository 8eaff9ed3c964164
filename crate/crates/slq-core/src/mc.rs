//! Monte Carlo path-ensemble backend for horizons beyond the tree's reach.
//!
//! The binary tree is the reference backend: its conditional expectations are
//! exact, so duality identities hold to machine precision — but its size is
//! `2^K`. This module trades exactness for scale: `M` simulated Gaussian
//! paths replace the tree, controls are restricted to deterministic (time-
//! indexed) processes, and conditional expectations become least-squares
//! regressions on polynomial functions of the state, so the structural
//! identities hold only statistically.
//!
//! Two distinct differentations coexist here, on purpose:
//!
//! * [`mc_gradient`] differentiates the *ensemble average cost* exactly, by
//!   the pathwise chain rule (no conditional expectations involved). For a
//!   fixed ensemble the cost is an exactly quadratic function of the control,
//!   so [`mc_solve_open_loop`] is a plain conjugate-gradient minimisation
//!   with machine-precision stationarity — and an unbiased estimator of the
//!   true optimality system as `M` grows.
//! * [`mc_backward`] builds the conditional adjoint pair `(yhat, z)` by
//!   regression, which is what the duality diagnostics pair against; their
//!   residuals come with a standard error, and [`mc_duality_check`] reports
//!   a `3 sigma` bound rather than a tolerance.
//!
//! Coefficient and weight tables must be deterministic (constant or
//! per-level): node-indexed tables address tree atoms, which have no meaning
//! on a sampled ensemble, and are rejected at construction.

use crate::error::{Error, Result};
use crate::krylov::{conjugate_gradient, normal_equations, Pairing};
use crate::linalg::{dot, Cholesky, Mat};
use crate::lq::SolveDiagnostics;
use crate::model::{
    CoeffTable, CoefficientSet, LqOptions, LqProblemSpec, SpectralOperator, TerminalTable,
    WeightSet,
};
use crate::scalar::Scalar;
use crate::tree::TimeGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Largest `paths * steps` increment table the ensemble will allocate.
pub const MAX_ENSEMBLE_ENTRIES: usize = 1 << 26;

/// Regression basis for conditional expectations: polynomials in the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McBasis {
    /// Degree 0: plain ensemble mean.
    Mean,
    /// Degree 1: affine functions of the state.
    Linear,
    /// Degree 2: affine plus all second-order monomials `x_i x_j`.
    Quadratic,
}

impl McBasis {
    /// Number of features for state dimension `n` (including the intercept).
    pub fn dim(&self, n: usize) -> usize {
        match self {
            McBasis::Mean => 1,
            McBasis::Linear => 1 + n,
            McBasis::Quadratic => 1 + n + n * (n + 1) / 2,
        }
    }

    /// Writes the non-intercept features of one state into `out`
    /// (`dim(n) - 1` entries).
    fn fill_features<T: Scalar>(&self, state: &[T], out: &mut [T]) {
        match self {
            McBasis::Mean => {}
            McBasis::Linear => out.copy_from_slice(state),
            McBasis::Quadratic => {
                let n = state.len();
                out[..n].copy_from_slice(state);
                let mut idx = n;
                for i in 0..n {
                    for j in i..n {
                        out[idx] = state[i] * state[j];
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// A fixed ensemble of Gaussian increment paths, reproducible from its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct McEnsemble<T> {
    grid: TimeGrid<T>,
    paths: usize,
    seed: u64,
    basis: McBasis,
    /// `paths x steps`, path-major: `dw[p * steps + k] ~ N(0, dt)`.
    increments: Vec<T>,
}

impl<T: Scalar> McEnsemble<T> {
    /// Draws `paths` Brownian increment paths on the grid from one seeded
    /// stream. The same `(grid, paths, seed)` reproduce the same increments
    /// bit for bit.
    pub fn generate(grid: TimeGrid<T>, paths: usize, seed: u64, basis: McBasis) -> Result<Self> {
        if paths == 0 {
            return Err(Error::InvalidSpec(
                "ensemble needs at least one path".into(),
            ));
        }
        let entries = paths.saturating_mul(grid.steps());
        if entries > MAX_ENSEMBLE_ENTRIES {
            return Err(Error::Capacity {
                what: "ensemble increments".into(),
                size: entries,
                limit: MAX_ENSEMBLE_ENTRIES,
            });
        }
        let sqrt_dt = grid.dt().sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut increments = Vec::with_capacity(entries);
        for _ in 0..entries {
            let g: f64 = rng.sample(StandardNormal);
            increments.push(sqrt_dt * T::from_f64(g));
        }
        Ok(McEnsemble {
            grid,
            paths,
            seed,
            basis,
            increments,
        })
    }

    #[inline]
    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    #[inline]
    pub fn paths(&self) -> usize {
        self.paths
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn basis(&self) -> McBasis {
        self.basis
    }

    /// Increment `Delta W_k` on path `p`.
    #[inline]
    pub fn dw(&self, path: usize, k: usize) -> T {
        self.increments[path * self.grid.steps() + k]
    }
}

/// A control problem posed for the ensemble backend: the same coefficient
/// and weight data as the tree problem, minus the tree.
#[derive(Debug, Clone, PartialEq)]
pub struct McProblem<T> {
    pub generator: SpectralOperator<T>,
    pub coeffs: CoefficientSet<T>,
    pub weights: WeightSet<T>,
    pub grid: TimeGrid<T>,
    /// Deterministic initial state at `t0`.
    pub eta: Vec<T>,
    pub options: LqOptions<T>,
}

impl<T: Scalar> McProblem<T> {
    pub fn new(
        generator: SpectralOperator<T>,
        coeffs: CoefficientSet<T>,
        weights: WeightSet<T>,
        grid: TimeGrid<T>,
        eta: Vec<T>,
        options: LqOptions<T>,
    ) -> Result<Self> {
        let problem = McProblem {
            generator,
            coeffs,
            weights,
            grid,
            eta,
            options,
        };
        problem.validate_shapes()?;
        Ok(problem)
    }

    /// Re-poses a tree problem on the ensemble backend (the tables must be
    /// deterministic and the state must start at the root).
    pub fn from_tree_spec(spec: &LqProblemSpec<T>) -> Result<Self> {
        if spec.init_level != 0 {
            return Err(Error::InvalidSpec(format!(
                "the ensemble backend starts paths at the root; init_level {} is tree-specific",
                spec.init_level
            )));
        }
        McProblem::new(
            spec.generator.clone(),
            spec.coeffs.clone(),
            spec.weights.clone(),
            spec.tree.grid().clone(),
            spec.eta.clone(),
            spec.options.clone(),
        )
    }

    #[inline]
    pub fn state_dim(&self) -> usize {
        self.generator.dim()
    }

    #[inline]
    pub fn control_dim(&self) -> usize {
        self.coeffs.b_ctrl.shape().1
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    /// Effective `S` multiplier (`s_factor / 2`).
    #[inline]
    pub fn s_eff(&self) -> T {
        T::from_usize(self.options.s_factor as usize) * T::half()
    }

    /// Stacked dimension of the deterministic control space (`steps * m`).
    pub fn control_flat_dim(&self) -> usize {
        self.steps() * self.control_dim()
    }

    /// All-zero deterministic control.
    pub fn zero_control(&self) -> McControl<T> {
        McControl::zeros(self.steps(), self.control_dim())
    }

    /// Copy with zero initial state, inhomogeneities, and linear weights.
    pub fn homogenized(&self) -> Self {
        let n = self.state_dim();
        let m = self.control_dim();
        let mut hom = self.clone();
        hom.eta = vec![T::zero(); n];
        hom.coeffs.drift = CoeffTable::zero(n, 1);
        hom.coeffs.diffusion = CoeffTable::zero(n, 1);
        hom.weights.q_lin = CoeffTable::zero(n, 1);
        hom.weights.r_lin = CoeffTable::zero(m, 1);
        hom.weights.g_lin = TerminalTable::zero(n, 1);
        hom
    }

    fn validate_shapes(&self) -> Result<()> {
        let n = self.state_dim();
        let m = self.control_dim();
        if m == 0 {
            return Err(Error::InvalidSpec(
                "control dimension must be positive".into(),
            ));
        }
        if self.eta.len() != n {
            return Err(Error::ShapeMismatch {
                context: "initial state".into(),
                expected: format!("{n} modes"),
                got: format!("{}", self.eta.len()),
            });
        }
        if self.eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "initial state".into(),
                level: 0,
            });
        }
        if self.options.s_factor != 1 && self.options.s_factor != 2 {
            return Err(Error::InvalidSpec(format!(
                "s_factor must be 1 or 2, got {}",
                self.options.s_factor
            )));
        }
        let last = self.steps() - 1;
        let coeff_checks: [(&str, &CoeffTable<T>, usize, usize); 11] = [
            ("a1", &self.coeffs.a1, n, n),
            ("b", &self.coeffs.b_ctrl, n, m),
            ("c", &self.coeffs.c, n, n),
            ("d", &self.coeffs.d_ctrl, n, m),
            ("drift", &self.coeffs.drift, n, 1),
            ("diffusion", &self.coeffs.diffusion, n, 1),
            ("q", &self.weights.q, n, n),
            ("r", &self.weights.r, m, m),
            ("s", &self.weights.s, m, n),
            ("q_lin", &self.weights.q_lin, n, 1),
            ("r_lin", &self.weights.r_lin, m, 1),
        ];
        for (name, table, rows, cols) in coeff_checks {
            if table.is_node_indexed() {
                return Err(Error::InvalidSpec(format!(
                    "the ensemble backend needs deterministic tables; '{name}' is node-indexed"
                )));
            }
            table.validate(name, rows, cols, 0, last)?;
        }
        for (name, table, rows, cols) in [
            ("g", &self.weights.g, n, n),
            ("g_lin", &self.weights.g_lin, n, 1),
        ] {
            if !table.is_constant() {
                return Err(Error::InvalidSpec(format!(
                    "the ensemble backend needs deterministic tables; '{name}' is leaf-indexed"
                )));
            }
            table.validate(name, rows, cols, 0)?;
        }
        Ok(())
    }
}

/// A deterministic (time-indexed) control: one `m`-vector per step.
#[derive(Debug, Clone, PartialEq)]
pub struct McControl<T> {
    values: Vec<Vec<T>>,
}

impl<T: Scalar> McControl<T> {
    pub fn zeros(steps: usize, dim: usize) -> Self {
        McControl {
            values: vec![vec![T::zero(); dim]; steps],
        }
    }

    pub fn from_flat(steps: usize, dim: usize, flat: &[T]) -> Result<Self> {
        if flat.len() != steps * dim {
            return Err(Error::ShapeMismatch {
                context: "deterministic control from flat data".into(),
                expected: format!("{} entries", steps * dim),
                got: format!("{}", flat.len()),
            });
        }
        Ok(McControl {
            values: flat.chunks(dim).map(|c| c.to_vec()).collect(),
        })
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.values.iter().flatten().copied().collect()
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    #[inline]
    pub fn level(&self, k: usize) -> &[T] {
        &self.values[k]
    }

    #[inline]
    pub fn level_mut(&mut self, k: usize) -> &mut [T] {
        &mut self.values[k]
    }

    /// `self += alpha * other` (matching shapes).
    pub fn add_scaled(&mut self, other: &McControl<T>, alpha: T) {
        debug_assert_eq!(self.steps(), other.steps());
        debug_assert_eq!(self.dim(), other.dim());
        for (mine, theirs) in self.values.iter_mut().zip(other.values.iter()) {
            for (a, b) in mine.iter_mut().zip(theirs.iter()) {
                *a += alpha * *b;
            }
        }
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().flatten().fold(
            T::zero(),
            |acc, v| if v.abs() > acc { v.abs() } else { acc },
        )
    }

    /// `sqrt(sum_k dt |u_k|^2)` — the deterministic-control process norm.
    pub fn norm(&self, grid: &TimeGrid<T>) -> T {
        let mut acc = T::zero();
        for level in self.values.iter() {
            acc += dot(level, level);
        }
        (grid.dt() * acc).max(T::zero()).sqrt()
    }
}

/// Per-path, per-level vector field (states, adjoints, regressed pairs).
#[derive(Debug, Clone, PartialEq)]
pub struct McPaths<T> {
    paths: usize,
    levels: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> McPaths<T> {
    fn zeros(paths: usize, levels: usize, dim: usize) -> Self {
        McPaths {
            paths,
            levels,
            dim,
            data: vec![T::zero(); paths * levels * dim],
        }
    }

    #[inline]
    pub fn paths(&self) -> usize {
        self.paths
    }

    /// Number of stored levels (states store `steps + 1`, conditional pairs
    /// store `steps`).
    #[inline]
    pub fn levels(&self) -> usize {
        self.levels
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn at(&self, path: usize, level: usize) -> &[T] {
        let start = (path * self.levels + level) * self.dim;
        &self.data[start..start + self.dim]
    }

    #[inline]
    fn at_mut(&mut self, path: usize, level: usize) -> &mut [T] {
        let start = (path * self.levels + level) * self.dim;
        &mut self.data[start..start + self.dim]
    }

    /// Ensemble mean at one level.
    pub fn mean(&self, level: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        for p in 0..self.paths {
            for (o, v) in out.iter_mut().zip(self.at(p, level).iter()) {
                *o += *v;
            }
        }
        let inv = T::one() / T::from_usize(self.paths);
        for o in out.iter_mut() {
            *o *= inv;
        }
        out
    }
}

fn check_control<T: Scalar>(problem: &McProblem<T>, u: &McControl<T>) -> Result<()> {
    if u.steps() != problem.steps() || u.dim() != problem.control_dim() {
        return Err(Error::ShapeMismatch {
            context: "deterministic control".into(),
            expected: format!(
                "{} levels of {} entries",
                problem.steps(),
                problem.control_dim()
            ),
            got: format!("{} levels of {} entries", u.steps(), u.dim()),
        });
    }
    Ok(())
}

fn check_ensemble<T: Scalar>(problem: &McProblem<T>, ensemble: &McEnsemble<T>) -> Result<()> {
    if ensemble.grid() != &problem.grid {
        return Err(Error::InvalidGrid(
            "ensemble and problem use different time grids".into(),
        ));
    }
    Ok(())
}

/// Simulates the state along every path of the ensemble under a
/// deterministic control, with the same one-step exponential integrator as
/// the tree backend.
pub fn mc_forward<T: Scalar>(
    problem: &McProblem<T>,
    ensemble: &McEnsemble<T>,
    u: &McControl<T>,
) -> Result<McPaths<T>> {
    check_control(problem, u)?;
    check_ensemble(problem, ensemble)?;
    let n = problem.state_dim();
    let steps = problem.steps();
    let dt = problem.grid.dt();
    let semigroup = problem.generator.semigroup_factors(dt)?;
    let coeffs = &problem.coeffs;

    let mut states = McPaths::zeros(ensemble.paths(), steps + 1, n);
    let mut drift = vec![T::zero(); n];
    let mut diffusion = vec![T::zero(); n];
    for p in 0..ensemble.paths() {
        states.at_mut(p, 0).copy_from_slice(&problem.eta);
        for k in 0..steps {
            let dw = ensemble.dw(p, k);
            let uk = u.level(k);
            let x = states.at(p, k);
            for v in drift.iter_mut() {
                *v = T::zero();
            }
            coeffs.a1.block(k, 0).matvec_add(x, &mut drift);
            coeffs.b_ctrl.block(k, 0).matvec_add(uk, &mut drift);
            coeffs.drift.block(k, 0).add_to(&mut drift);
            for v in diffusion.iter_mut() {
                *v = T::zero();
            }
            coeffs.c.block(k, 0).matvec_add(x, &mut diffusion);
            coeffs.d_ctrl.block(k, 0).matvec_add(uk, &mut diffusion);
            coeffs.diffusion.block(k, 0).add_to(&mut diffusion);
            let x = states.at(p, k).to_vec();
            let next = states.at_mut(p, k + 1);
            for i in 0..n {
                next[i] = semigroup[i] * (x[i] + dt * drift[i] + dw * diffusion[i]);
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "simulated state".into(),
                    level: k + 1,
                });
            }
        }
    }
    Ok(states)
}

/// Sample mean and standard error of an ensemble estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate<T> {
    pub mean: T,
    /// `sample std / sqrt(paths)`; zero for a single path.
    pub std_err: T,
}

fn estimate<T: Scalar>(samples: &[T]) -> McEstimate<T> {
    let m = samples.len();
    let inv = T::one() / T::from_usize(m);
    let mut mean = T::zero();
    for s in samples {
        mean += *s;
    }
    mean *= inv;
    if m < 2 {
        return McEstimate {
            mean,
            std_err: T::zero(),
        };
    }
    let mut var = T::zero();
    for s in samples {
        let d = *s - mean;
        var += d * d;
    }
    var /= T::from_usize(m - 1);
    McEstimate {
        mean,
        std_err: (var / T::from_usize(m)).max(T::zero()).sqrt(),
    }
}

fn path_cost<T: Scalar>(
    problem: &McProblem<T>,
    states: &McPaths<T>,
    u: &McControl<T>,
    p: usize,
    scratch_n: &mut [T],
    scratch_m: &mut [T],
) -> T {
    let weights = &problem.weights;
    let dt = problem.grid.dt();
    let two = T::two();
    let s_cross = two * problem.s_eff();
    let steps = problem.steps();

    let mut running = T::zero();
    for k in 0..steps {
        let x = states.at(p, k);
        let uk = u.level(k);
        let mut sum = T::zero();
        for v in scratch_n.iter_mut() {
            *v = T::zero();
        }
        weights.q.block(k, 0).matvec_add(x, scratch_n);
        sum += dot(scratch_n, x);
        for v in scratch_m.iter_mut() {
            *v = T::zero();
        }
        weights.r.block(k, 0).matvec_add(uk, scratch_m);
        sum += dot(scratch_m, uk);
        for v in scratch_m.iter_mut() {
            *v = T::zero();
        }
        weights.s.block(k, 0).matvec_add(x, scratch_m);
        sum += s_cross * dot(scratch_m, uk);
        sum += two * dot(weights.q_lin.block(k, 0).data, x);
        sum += two * dot(weights.r_lin.block(k, 0).data, uk);
        running += dt * sum;
    }

    let x_end = states.at(p, steps);
    for v in scratch_n.iter_mut() {
        *v = T::zero();
    }
    weights.g.block(0).matvec_add(x_end, scratch_n);
    let terminal = dot(scratch_n, x_end) + two * dot(weights.g_lin.block(0).data, x_end);
    T::half() * (running + terminal)
}

/// Ensemble estimate of the cost at a deterministic control.
pub fn mc_cost<T: Scalar>(
    problem: &McProblem<T>,
    ensemble: &McEnsemble<T>,
    u: &McControl<T>,
) -> Result<McEstimate<T>> {
    let states = mc_forward(problem, ensemble, u)?;
    let n = problem.state_dim();
    let m = problem.control_dim();
    let mut scratch_n = vec![T::zero(); n];
    let mut scratch_m = vec![T::zero(); m];
    let samples: Vec<T> = (0..ensemble.paths())
        .map(|p| path_cost(problem, &states, u, p, &mut scratch_n, &mut scratch_m))
        .collect();
    Ok(estimate(&samples))
}

/// Exact gradient of the *ensemble average* cost with respect to the
/// deterministic control, by the pathwise chain rule: per path, the adjoint
/// recursion `p_k = dt (Q x + S_eff^T u + q) + (I + A1^T dt + C^T dW_k)
/// e^{A dt} p_{k+1}` runs backward from `p_K = G x_K + g`, and the level-`k`
/// gradient averages `B^T e^{A dt} p_{k+1} + D^T e^{A dt} p_{k+1} dW_k/dt +
/// S_eff x_k` over paths, plus the deterministic `R u_k + r_k`. For a fixed
/// ensemble the average cost is exactly quadratic in the control and this is
/// its exact derivative — no regression enters.
pub fn mc_gradient<T: Scalar>(
    problem: &McProblem<T>,
    ensemble: &McEnsemble<T>,
    u: &McControl<T>,
) -> Result<McControl<T>> {
    let states = mc_forward(problem, ensemble, u)?;
    mc_gradient_given_paths(problem, ensemble, u, &states)
}

fn mc_gradient_given_paths<T: Scalar>(
    problem: &McProblem<T>,
    ensemble: &McEnsemble<T>,
    u: &McControl<T>,
    states: &McPaths<T>,
) -> Result<McControl<T>> {
    let n = problem.state_dim();
    let m = problem.control_dim();
    let steps = problem.steps();
    let dt = problem.grid.dt();
    let inv_dt = T::one() / dt;
    let s_eff = problem.s_eff();
    let semigroup = problem.generator.semigroup_factors(dt)?;
    let coeffs = &problem.coeffs;
    let weights = &problem.weights;

    let mut grad = McControl::zeros(steps, m);
    let mut adj = vec![T::zero(); n];
    let mut propagated = vec![T::zero(); n];
    let mut xi = vec![T::zero(); n];
    let mut s_row = vec![T::zero(); m];
    for p in 0..ensemble.paths() {
        // Terminal adjoint G x_K + g.
        for v in adj.iter_mut() {
            *v = T::zero();
        }
        let x_end = states.at(p, steps);
        weights.g.block(0).matvec_add(x_end, &mut adj);
        weights.g_lin.block(0).add_to(&mut adj);
        for k in (0..steps).rev() {
            let dw = ensemble.dw(p, k);
            let x = states.at(p, k);
            let uk = u.level(k);
            for i in 0..n {
                propagated[i] = semigroup[i] * adj[i];
            }
            // Control sensitivity of this step, averaged across paths.
            let g_level = grad.level_mut(k);
            coeffs
                .b_ctrl
                .block(k, 0)
                .tr_matvec_add(&propagated, g_level);
            for v in s_row.iter_mut() {
                *v = T::zero();
            }
            coeffs
                .d_ctrl
                .block(k, 0)
                .tr_matvec_add(&propagated, &mut s_row);
            let w = dw * inv_dt;
            for (g, v) in g_level.iter_mut().zip(s_row.iter()) {
                *g += w * *v;
            }
            for v in s_row.iter_mut() {
                *v = T::zero();
            }
            weights.s.block(k, 0).matvec_add(x, &mut s_row);
            for (g, v) in g_level.iter_mut().zip(s_row.iter()) {
                *g += s_eff * *v;
            }
            // Running-cost state derivative xi = Q x + S_eff^T u + q.
            for v in xi.iter_mut() {
                *v = T::zero();
            }
            weights.q.block(k, 0).matvec_add(x, &mut xi);
            let mut su = vec![T::zero(); n];
            weights.s.block(k, 0).tr_matvec_add(uk, &mut su);
            for (a, b) in xi.iter_mut().zip(su.iter()) {
                *a += s_eff * *b;
            }
            weights.q_lin.block(k, 0).add_to(&mut xi);
            // p_k = dt xi + (I + A1^T dt + C^T dW) propagated.
            for v in adj.iter_mut() {
                *v = T::zero();
            }
            coeffs.a1.block(k, 0).tr_matvec_add(&propagated, &mut adj);
            for v in adj.iter_mut() {
                *v *= dt;
            }
            let mut cterm = vec![T::zero(); n];
            coeffs.c.block(k, 0).tr_matvec_add(&propagated, &mut cterm);
            for i in 0..n {
                adj[i] += propagated[i] + dw * cterm[i] + dt * xi[i];
            }
        }
    }

    let inv_paths = T::one() / T::from_usize(ensemble.paths());
    for k in 0..steps {
        let uk = u.level(k);
        let level = grad.level_mut(k);
        for v in level.iter_mut() {
            *v *= inv_paths;
        }
        weights.r.block(k, 0).matvec_add(uk, level);
        weights.r_lin.block(k, 0).add_to(level);
    }
    Ok(grad)
}

/// Minimises the ensemble average cost over deterministic controls by
/// conjugate gradients on the stationarity system (exactly quadratic for a
/// fixed ensemble). The diagnostics carry the independently recomputed
/// gradient norm and the cost estimate at the minimiser; the convexity
/// eigenvalue is not estimated on this backend.
pub fn mc_solve_open_loop<T: Scalar>(
    problem: &McProblem<T>,
    ensemble: &McEnsemble<T>,
) -> Result<(McControl<T>, SolveDiagnostics<T>)> {
    check_ensemble(problem, ensemble)?;
    let steps = problem.steps();
    let m = problem.control_dim();
    let dim = steps * m;

    let rhs_grad = mc_gradient(problem, ensemble, &problem.zero_control())?;
    let mut rhs = rhs_grad.to_flat();
    for v in rhs.iter_mut() {
        *v = -*v;
    }
    let weights_flat = vec![problem.grid.dt(); dim];
    let pairing = Pairing::flat(&weights_flat);

    let hom = problem.homogenized();
    let mut apply = |w: &[T]| -> Result<Vec<T>> {
        let u = McControl::from_flat(steps, m, w)?;
        Ok(mc_gradient(&hom, ensemble, &u)?.to_flat())
    };
    let tol = problem.options.cg_tol;
    let max_iter = (problem.options.cg_max_iter_factor * dim).max(8);
    let (w, report) = if problem.options.least_squares {
        normal_equations(&mut apply, &rhs, &pairing, tol, max_iter)?
    } else {
        conjugate_gradient(&mut apply, None, &rhs, &pairing, tol, max_iter)?
    };

    let u = McControl::from_flat(steps, m, &w)?;
    let grad = mc_gradient(problem, ensemble, &u)?;
    let cost = mc_cost(problem, ensemble, &u)?;
    let diagnostics = SolveDiagnostics {
        iterations: report.iterations,
        cg_rel_residual: report.rel_residual,
        gradient_norm: grad.norm(&problem.grid),
        cost: cost.mean,
        min_eig: None,
        least_squares: report.least_squares_fallback || problem.options.least_squares,
        preconditioned: false,
    };
    Ok((u, diagnostics))
}

/// Conditional adjoint pair on the ensemble: `yhat` (the conditional
/// expectation of the semigroup-propagated next-level adjoint) and `z` (the
/// increment-weighted conditional coefficient), both by least-squares
/// regression on the ensemble's basis.
#[derive(Debug, Clone, PartialEq)]
pub struct McBackwardPair<T> {
    pub y_pre: McPaths<T>,
    pub z: McPaths<T>,
    /// Ensemble mean of the level-0 adjoint `y_0`.
    pub y0_mean: Vec<T>,
}

/// Least-squares conditional expectation of `targets` (paths x cols,
/// path-major) given the level-`k` states, with centred features and a small
/// ridge; returns the per-path predictions. Constant targets are reproduced
/// exactly (the intercept is not penalised).
fn regress_conditional<T: Scalar>(
    basis: McBasis,
    states: &McPaths<T>,
    level: usize,
    targets: &[T],
    cols: usize,
    predictions: &mut [T],
) -> Result<()> {
    let paths = states.paths();
    let n = states.dim();
    let features = basis.dim(n) - 1;
    debug_assert_eq!(targets.len(), paths * cols);
    debug_assert_eq!(predictions.len(), paths * cols);

    // Column means of targets (always the degree-0 answer).
    let inv_paths = T::one() / T::from_usize(paths);
    let mut target_mean = vec![T::zero(); cols];
    for p in 0..paths {
        for c in 0..cols {
            target_mean[c] += targets[p * cols + c];
        }
    }
    for v in target_mean.iter_mut() {
        *v *= inv_paths;
    }
    if features == 0 {
        for p in 0..paths {
            predictions[p * cols..(p + 1) * cols].copy_from_slice(&target_mean);
        }
        return Ok(());
    }

    // Centred feature matrix, path-major.
    let mut phi = vec![T::zero(); paths * features];
    for p in 0..paths {
        basis.fill_features(
            states.at(p, level),
            &mut phi[p * features..(p + 1) * features],
        );
    }
    let mut feat_mean = vec![T::zero(); features];
    for p in 0..paths {
        for f in 0..features {
            feat_mean[f] += phi[p * features + f];
        }
    }
    for v in feat_mean.iter_mut() {
        *v *= inv_paths;
    }
    for p in 0..paths {
        for f in 0..features {
            phi[p * features + f] -= feat_mean[f];
        }
    }

    // Gram matrix (phi^T phi / paths) + ridge.
    let ridge = T::from_f64(1e-10);
    let mut gram = Mat::zeros(features, features);
    for p in 0..paths {
        let row = &phi[p * features..(p + 1) * features];
        for i in 0..features {
            for j in i..features {
                let v = gram.at(i, j) + row[i] * row[j];
                gram.set(i, j, v);
            }
        }
    }
    for i in 0..features {
        for j in i..features {
            let v = gram.at(i, j) * inv_paths;
            gram.set(i, j, v);
            gram.set(j, i, v);
        }
    }
    for i in 0..features {
        let v = gram.at(i, i) + ridge;
        gram.set(i, i, v);
    }
    let factor = Cholesky::new(&gram).ok_or_else(|| Error::Indefinite {
        detail: "regression Gram matrix lost positive definiteness".into(),
    })?;

    let mut moment = vec![T::zero(); features];
    let mut beta = vec![vec![T::zero(); features]; cols];
    for c in 0..cols {
        for v in moment.iter_mut() {
            *v = T::zero();
        }
        for p in 0..paths {
            let centred = targets[p * cols + c] - target_mean[c];
            let row = &phi[p * features..(p + 1) * features];
            for f in 0..features {
                moment[f] += row[f] * centred;
            }
        }
        for v in moment.iter_mut() {
            *v *= inv_paths;
        }
        beta[c] = factor.solve(&moment);
    }
    for p in 0..paths {
        let row = &phi[p * features..(p + 1) * features];
        for c in 0..cols {
            let mut val = target_mean[c];
            for f in 0..features {
                val += beta[c][f] * row[f];
            }
            predictions[p * cols + c] = val;
        }
    }
    Ok(())
}

/// Solves the adjoint equation along the ensemble with regression-based
/// conditional expectations: at each level the semigroup-propagated
/// next-level adjoint is regressed on the current states to produce `yhat`,
/// its increment-weighted regression produces `z`, and the full adjoint
/// `y = yhat + dt (A1^T yhat + C^T z + xi)` feeds the next level down. The
/// driver is the running cost's state derivative at `(x, u)` and the
/// terminal datum is `G x_K + g`.
pub fn mc_backward<T: Scalar>(
    problem: &McProblem<T>,
    ensemble: &McEnsemble<T>,
    states: &McPaths<T>,
    u: &McControl<T>,
) -> Result<McBackwardPair<T>> {
    check_control(problem, u)?;
    check_ensemble(problem, ensemble)?;
    let n = problem.state_dim();
    let steps = problem.steps();
    let paths = ensemble.paths();
    let dt = problem.grid.dt();
    let inv_dt = T::one() / dt;
    let s_eff = problem.s_eff();
    let semigroup = problem.generator.semigroup_factors(dt)?;
    let coeffs = &problem.coeffs;
    let weights = &problem.weights;

    let mut y = vec![T::zero(); paths * n];
    for p in 0..paths {
        let x_end = states.at(p, steps);
        let row = &mut y[p * n..(p + 1) * n];
        weights.g.block(0).matvec_add(x_end, row);
        weights.g_lin.block(0).add_to(row);
    }

    let mut y_pre = McPaths::zeros(paths, steps, n);
    let mut z = McPaths::zeros(paths, steps, n);
    let mut propagated = vec![T::zero(); paths * n];
    let mut weighted = vec![T::zero(); paths * n];
    let mut yhat_level = vec![T::zero(); paths * n];
    let mut z_level = vec![T::zero(); paths * n];
    let mut xi = vec![T::zero(); n];
    let mut su = vec![T::zero(); n];
    for k in (0..steps).rev() {
        for p in 0..paths {
            let dw = ensemble.dw(p, k);
            for i in 0..n {
                let v = semigroup[i] * y[p * n + i];
                propagated[p * n + i] = v;
                weighted[p * n + i] = v * dw * inv_dt;
            }
        }
        regress_conditional(ensemble.basis(), states, k, &propagated, n, &mut yhat_level)?;
        regress_conditional(ensemble.basis(), states, k, &weighted, n, &mut z_level)?;
        for p in 0..paths {
            let yh = &yhat_level[p * n..(p + 1) * n];
            let zz = &z_level[p * n..(p + 1) * n];
            y_pre.at_mut(p, k).copy_from_slice(yh);
            z.at_mut(p, k).copy_from_slice(zz);
            // xi = Q x + S_eff^T u + q at (k, p).
            for v in xi.iter_mut() {
                *v = T::zero();
            }
            weights.q.block(k, 0).matvec_add(states.at(p, k), &mut xi);
            for v in su.iter_mut() {
                *v = T::zero();
            }
            weights.s.block(k, 0).tr_matvec_add(u.level(k), &mut su);
            for (a, b) in xi.iter_mut().zip(su.iter()) {
                *a += s_eff * *b;
            }
            weights.q_lin.block(k, 0).add_to(&mut xi);
            // y = yhat + dt (A1^T yhat + C^T z + xi).
            let row = &mut y[p * n..(p + 1) * n];
            for (r, v) in row.iter_mut().zip(yh.iter()) {
                *r = *v;
            }
            let mut corr = vec![T::zero(); n];
            coeffs.a1.block(k, 0).tr_matvec_add(yh, &mut corr);
            coeffs.c.block(k, 0).tr_matvec_add(zz, &mut corr);
            for i in 0..n {
                row[i] += dt * (corr[i] + xi[i]);
            }
        }
    }

    let mut y0_mean = vec![T::zero(); n];
    for p in 0..paths {
        for i in 0..n {
            y0_mean[i] += y[p * n + i];
        }
    }
    let inv_paths = T::one() / T::from_usize(paths);
    for v in y0_mean.iter_mut() {
        *v *= inv_paths;
    }
    Ok(McBackwardPair { y_pre, z, y0_mean })
}

/// Duality identity on the ensemble, with a statistical verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct McDualityReport<T> {
    pub lhs: T,
    pub rhs: T,
    pub gap_abs: T,
    /// Standard error of the per-path gap samples.
    pub std_err: T,
    /// `3 * std_err` plus a small deterministic floor.
    pub bound: T,
    /// The mean gap sits inside the statistical bound.
    pub within_bound: bool,
}

/// Checks the summation-by-parts duality identity
///
/// ```text
/// E<x_K, y_K> - <eta, E y_0>
///   = sum_k dt E[<u, B^T yhat + D^T z> + <b, yhat> + <sigma, z> - <x, xi>]
/// ```
///
/// on the ensemble, with the conditional pair obtained by regression. Unlike
/// the tree backend the identity holds only up to regression and sampling
/// error, so the verdict compares the mean gap against three standard errors
/// (plus a roundoff floor) instead of a fixed tolerance.
pub fn mc_duality_check<T: Scalar>(
    problem: &McProblem<T>,
    ensemble: &McEnsemble<T>,
    u: &McControl<T>,
) -> Result<McDualityReport<T>> {
    let n = problem.state_dim();
    let steps = problem.steps();
    let dt = problem.grid.dt();
    let s_eff = problem.s_eff();
    let weights = &problem.weights;
    let coeffs = &problem.coeffs;

    let states = mc_forward(problem, ensemble, u)?;
    let pair = mc_backward(problem, ensemble, &states, u)?;

    let mut lhs_samples = Vec::with_capacity(ensemble.paths());
    let mut gap_samples = Vec::with_capacity(ensemble.paths());
    let mut rhs_mean = T::zero();
    let mut terminal = vec![T::zero(); n];
    let mut xi = vec![T::zero(); n];
    let mut su = vec![T::zero(); n];
    let mut bd = vec![T::zero(); u.dim()];
    for p in 0..ensemble.paths() {
        let x_end = states.at(p, steps);
        for v in terminal.iter_mut() {
            *v = T::zero();
        }
        weights.g.block(0).matvec_add(x_end, &mut terminal);
        weights.g_lin.block(0).add_to(&mut terminal);
        // y_0 per path: rebuild from the level-0 pair the same way the
        // backward sweep does.
        let yh = pair.y_pre.at(p, 0);
        let zz = pair.z.at(p, 0);
        for v in xi.iter_mut() {
            *v = T::zero();
        }
        weights.q.block(0, 0).matvec_add(states.at(p, 0), &mut xi);
        for v in su.iter_mut() {
            *v = T::zero();
        }
        weights.s.block(0, 0).tr_matvec_add(u.level(0), &mut su);
        for (a, b) in xi.iter_mut().zip(su.iter()) {
            *a += s_eff * *b;
        }
        weights.q_lin.block(0, 0).add_to(&mut xi);
        let mut y0 = vec![T::zero(); n];
        coeffs.a1.block(0, 0).tr_matvec_add(yh, &mut y0);
        coeffs.c.block(0, 0).tr_matvec_add(zz, &mut y0);
        for i in 0..n {
            y0[i] = yh[i] + dt * (y0[i] + xi[i]);
        }
        let lhs_p = dot(x_end, &terminal) - dot(&problem.eta, &y0);

        let mut rhs_p = T::zero();
        for k in 0..steps {
            let x = states.at(p, k);
            let uk = u.level(k);
            let yh = pair.y_pre.at(p, k);
            let zz = pair.z.at(p, k);
            for v in bd.iter_mut() {
                *v = T::zero();
            }
            coeffs.b_ctrl.block(k, 0).tr_matvec_add(yh, &mut bd);
            coeffs.d_ctrl.block(k, 0).tr_matvec_add(zz, &mut bd);
            let mut sum = dot(uk, &bd);
            sum += dot(coeffs.drift.block(k, 0).data, yh);
            sum += dot(coeffs.diffusion.block(k, 0).data, zz);
            for v in xi.iter_mut() {
                *v = T::zero();
            }
            weights.q.block(k, 0).matvec_add(x, &mut xi);
            for v in su.iter_mut() {
                *v = T::zero();
            }
            weights.s.block(k, 0).tr_matvec_add(uk, &mut su);
            for (a, b) in xi.iter_mut().zip(su.iter()) {
                *a += s_eff * *b;
            }
            weights.q_lin.block(k, 0).add_to(&mut xi);
            sum -= dot(x, &xi);
            rhs_p += dt * sum;
        }
        lhs_samples.push(lhs_p);
        rhs_mean += rhs_p;
        gap_samples.push(lhs_p - rhs_p);
    }
    rhs_mean /= T::from_usize(ensemble.paths());
    let lhs = estimate(&lhs_samples).mean;
    let gap = estimate(&gap_samples);
    let scale = T::one().max(lhs.abs()).max(rhs_mean.abs());
    let bound = T::from_f64(3.0) * gap.std_err + T::from_f64(1e-9) * scale;
    Ok(McDualityReport {
        lhs,
        rhs: rhs_mean,
        gap_abs: gap.mean.abs(),
        std_err: gap.std_err,
        bound,
        within_bound: gap.mean.abs() <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{random_control, random_problem, InstanceParams};
    use crate::lq::cost as tree_cost;
    use crate::tree::AdaptedProcess;

    fn grid(steps: usize) -> TimeGrid<f64> {
        TimeGrid::new(0.0, 1.0, steps).unwrap()
    }

    /// Deterministic scalar benchmark: flat generator, unit control map,
    /// unit control energy and terminal weight, unit initial state.
    fn benchmark(steps: usize) -> McProblem<f64> {
        let generator = SpectralOperator::new(vec![0.0]).unwrap();
        let mut coeffs = CoefficientSet::zero(1, 1);
        coeffs.b_ctrl = CoeffTable::identity(1);
        let mut weights = WeightSet::default_for(1, 1);
        weights.g = TerminalTable::Constant(Mat::identity(1));
        McProblem::new(
            generator,
            coeffs,
            weights,
            grid(steps),
            vec![1.0],
            LqOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn ensembles_reproduce_from_their_seed() {
        let a = McEnsemble::<f64>::generate(grid(5), 64, 9, McBasis::Linear).unwrap();
        let b = McEnsemble::<f64>::generate(grid(5), 64, 9, McBasis::Linear).unwrap();
        let c = McEnsemble::<f64>::generate(grid(5), 64, 10, McBasis::Linear).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        // Increment moments at sanity scale: mean near zero, mean square
        // near dt.
        let m = 64.0 * 5.0;
        let mean: f64 = a.increments.iter().sum::<f64>() / m;
        let msq: f64 = a.increments.iter().map(|v| v * v).sum::<f64>() / m;
        assert!(mean.abs() < 5.0 * (0.2 / m).sqrt());
        assert!((msq - 0.2).abs() < 0.1);
    }

    #[test]
    fn node_indexed_tables_are_rejected() {
        let spec: LqProblemSpec<f64> =
            random_problem(3, &InstanceParams::standard(2, 1, 3)).unwrap();
        let mut bad = spec.clone();
        bad.weights.q = CoeffTable::PerNode(AdaptedProcess::from_fn(0, 2, 2, 2, |_, _, out| {
            out[0] = 1.0;
            out[3] = 1.0;
        }));
        let err = McProblem::from_tree_spec(&bad).unwrap_err();
        assert!(matches!(err, Error::InvalidSpec(msg) if msg.contains("'q' is node-indexed")));
    }

    #[test]
    fn deterministic_dynamics_reproduce_the_tree_cost_exactly() {
        // No state noise and no control noise: every path is the same, and
        // the ensemble cost of a deterministic control must equal the tree
        // cost of the control broadcast across nodes.
        let mut spec: LqProblemSpec<f64> =
            random_problem(7, &InstanceParams::standard(2, 1, 4)).unwrap();
        spec.coeffs.c = CoeffTable::zero(2, 2);
        spec.coeffs.d_ctrl = CoeffTable::zero(2, 1);
        spec.coeffs.diffusion = CoeffTable::zero(2, 1);
        let problem = McProblem::from_tree_spec(&spec).unwrap();
        let ensemble = McEnsemble::generate(spec.tree.grid().clone(), 3, 1, McBasis::Mean).unwrap();

        let mut u = McControl::zeros(4, 1);
        for k in 0..4 {
            u.level_mut(k)[0] = 0.3 - 0.2 * k as f64;
        }
        let u_tree = AdaptedProcess::from_fn(0, 3, 1, 1, |k, _, out| {
            out[0] = 0.3 - 0.2 * k as f64;
        });
        let mc = mc_cost(&problem, &ensemble, &u).unwrap();
        let exact = tree_cost(&spec, &u_tree).unwrap();
        assert!((mc.mean - exact).abs() <= 1e-13 * exact.abs().max(1.0));
        assert_eq!(mc.std_err, 0.0);
    }

    #[test]
    fn benchmark_minimiser_is_minus_half_at_any_step_count() {
        for steps in [4usize, 32] {
            let problem = benchmark(steps);
            let ensemble = McEnsemble::generate(problem.grid.clone(), 4, 2, McBasis::Mean).unwrap();
            let (u, diag) = mc_solve_open_loop(&problem, &ensemble).unwrap();
            for k in 0..steps {
                assert!(
                    (u.level(k)[0] + 0.5).abs() <= 1e-9,
                    "steps {steps}, level {k}"
                );
            }
            assert!(
                (diag.cost - 0.25).abs() <= 1e-10,
                "steps {steps}: cost {}",
                diag.cost
            );
            assert!(diag.gradient_norm <= 1e-9);
        }
    }

    #[test]
    fn gradient_is_the_exact_derivative_of_the_ensemble_cost() {
        let spec: LqProblemSpec<f64> =
            random_problem(21, &InstanceParams::general(2, 2, 3)).unwrap();
        let problem = McProblem::from_tree_spec(&spec).unwrap();
        let ensemble = McEnsemble::generate(problem.grid.clone(), 40, 5, McBasis::Linear).unwrap();
        let mut u = McControl::zeros(3, 2);
        let mut v = McControl::zeros(3, 2);
        for k in 0..3 {
            for j in 0..2 {
                u.level_mut(k)[j] = (0.9 + 1.3 * k as f64 + 0.7 * j as f64).sin() * 0.5;
                v.level_mut(k)[j] = (2.1 + 0.8 * k as f64 + 1.1 * j as f64).cos() * 0.5;
            }
        }
        let grad = mc_gradient(&problem, &ensemble, &u).unwrap();
        // The ensemble cost is exactly quadratic, so the centred difference
        // equals the directional derivative to roundoff.
        let eps = 1e-4;
        let mut up = u.clone();
        up.add_scaled(&v, eps);
        let mut dn = u.clone();
        dn.add_scaled(&v, -eps);
        let fd = (mc_cost(&problem, &ensemble, &up).unwrap().mean
            - mc_cost(&problem, &ensemble, &dn).unwrap().mean)
            / (2.0 * eps);
        let mut pairing = 0.0;
        for k in 0..3 {
            pairing += problem.grid.dt() * dot(grad.level(k), v.level(k));
        }
        assert!(
            (fd - pairing).abs() <= 1e-9 * fd.abs().max(1.0),
            "fd {fd} vs {pairing}"
        );
    }

    #[test]
    fn stochastic_instance_solves_to_stationarity() {
        let spec: LqProblemSpec<f64> =
            random_problem(13, &InstanceParams::standard(2, 1, 3)).unwrap();
        let problem = McProblem::from_tree_spec(&spec).unwrap();
        let ensemble = McEnsemble::generate(problem.grid.clone(), 50, 11, McBasis::Linear).unwrap();
        let (u, diag) = mc_solve_open_loop(&problem, &ensemble).unwrap();
        assert!(
            diag.gradient_norm <= 1e-9,
            "gradient norm {}",
            diag.gradient_norm
        );
        assert!(u.max_abs() > 0.0);
        // Re-solving on the same ensemble reproduces the control bitwise.
        let (u2, _) = mc_solve_open_loop(&problem, &ensemble).unwrap();
        assert_eq!(u, u2);
    }

    #[test]
    fn duality_gap_sits_inside_the_statistical_bound() {
        let spec: LqProblemSpec<f64> =
            random_problem(31, &InstanceParams::general(2, 1, 4)).unwrap();
        let problem = McProblem::from_tree_spec(&spec).unwrap();
        for basis in [McBasis::Mean, McBasis::Linear, McBasis::Quadratic] {
            let ensemble = McEnsemble::generate(problem.grid.clone(), 400, 17, basis).unwrap();
            let u = {
                let tree_u = random_control(5, &spec);
                // Deterministic control: level means of a random tree control.
                let mut u = McControl::zeros(4, 1);
                for k in 0..4 {
                    let level = tree_u.level(k);
                    let mut mean = 0.0;
                    for node in 0..level.nodes() {
                        mean += level.node(node)[0];
                    }
                    u.level_mut(k)[0] = mean / level.nodes() as f64;
                }
                u
            };
            let report = mc_duality_check(&problem, &ensemble, &u).unwrap();
            assert!(
                report.within_bound,
                "basis {basis:?}: gap {:e} vs bound {:e}",
                report.gap_abs, report.bound
            );
        }
    }

    #[test]
    fn tree_and_ensemble_disagree_on_grids() {
        let problem = benchmark(4);
        let ensemble = McEnsemble::generate(grid(5), 8, 3, McBasis::Mean).unwrap();
        let err = mc_cost(&problem, &ensemble, &problem.zero_control()).unwrap_err();
        assert!(matches!(err, Error::InvalidGrid(_)));
    }
}
