//! The operator formulation of the quadratic control problem: the
//! control-to-state and data-to-state maps with their adjoints, the
//! assembled quadratic/linear/constant pieces of the cost, the Fréchet
//! gradient, the convexity (finiteness) check, and the open-loop minimiser.
//!
//! Everything is matrix-free: an operator application is one forward sweep,
//! one backward sweep, and cheap per-node algebra. The only dense object
//! ever formed is the diagnostic Gram matrix of the quadratic term, and only
//! below a configured dimension threshold.

use crate::backward::{
    control_adjoint_process, initial_adjoint_mean, solve_backward, BackwardPair,
};
use crate::error::{Error, Result};
use crate::forward::{forward_sweep, solve_forward, SourceTerm, StatePath};
use crate::krylov::{conjugate_gradient, lanczos_min_eig, normal_equations, Pairing, PrecondFn};
use crate::linalg::{dot, sym_eigen, Cholesky, Mat};
use crate::model::{CoeffTable, LqProblemSpec, TerminalTable};
use crate::scalar::Scalar;
use crate::tree::{pair_processes, pair_weight_vector, process_norm, AdaptedProcess, NodeArray};

/// The five linear maps of the problem's state response and their adjoints.
///
/// `apply_m(u) + apply_n(eta) + compute_h()` reproduces the full state
/// trajectory atomwise; each adjoint is realised by one backward sweep.
pub struct OperatorBundle<'a, T> {
    spec: &'a LqProblemSpec<T>,
}

impl<'a, T: Scalar> OperatorBundle<'a, T> {
    pub fn new(spec: &'a LqProblemSpec<T>) -> Self {
        OperatorBundle { spec }
    }

    /// Control-to-state map: `x(.; 0, u, (0,0))`.
    pub fn apply_m(&self, u: &AdaptedProcess<T>) -> Result<StatePath<T>> {
        let s = self.spec;
        forward_sweep(
            &s.generator,
            &s.coeffs.a1,
            &s.coeffs.c,
            &s.tree,
            s.init_level,
            None,
            &[SourceTerm::Mapped(&s.coeffs.b_ctrl, u)],
            &[SourceTerm::Mapped(&s.coeffs.d_ctrl, u)],
        )
    }

    /// Initial-to-state map: `x(.; eta, 0, (0,0))`.
    pub fn apply_n(&self, eta: &[T]) -> Result<StatePath<T>> {
        let s = self.spec;
        forward_sweep(
            &s.generator,
            &s.coeffs.a1,
            &s.coeffs.c,
            &s.tree,
            s.init_level,
            Some(eta),
            &[],
            &[],
        )
    }

    /// Terminal slice of [`OperatorBundle::apply_m`].
    pub fn apply_hat_m(&self, u: &AdaptedProcess<T>) -> Result<NodeArray<T>> {
        let x = self.apply_m(u)?;
        Ok(x.level(self.spec.tree.depth()).clone())
    }

    /// Terminal slice of [`OperatorBundle::apply_n`].
    pub fn apply_hat_n(&self, eta: &[T]) -> Result<NodeArray<T>> {
        let x = self.apply_n(eta)?;
        Ok(x.level(self.spec.tree.depth()).clone())
    }

    /// Inhomogeneous response: `x(.; 0, 0, (b, sigma))`.
    pub fn compute_h(&self) -> Result<StatePath<T>> {
        let s = self.spec;
        forward_sweep(
            &s.generator,
            &s.coeffs.a1,
            &s.coeffs.c,
            &s.tree,
            s.init_level,
            None,
            &[SourceTerm::Table(&s.coeffs.drift)],
            &[SourceTerm::Table(&s.coeffs.diffusion)],
        )
    }

    fn zero_terminal(&self) -> NodeArray<T> {
        NodeArray::zeros(self.spec.tree.depth(), self.spec.state_dim(), 1)
    }

    /// Adjoint of the control-to-state map: `B^T yhat + D^T z` from the
    /// backward solve with running source `xi` and zero terminal datum.
    pub fn apply_m_star(&self, xi: &AdaptedProcess<T>) -> Result<AdaptedProcess<T>> {
        let pair = solve_backward(self.spec, &self.zero_terminal(), Some(xi))?;
        control_adjoint_process(&self.spec.coeffs.b_ctrl, &self.spec.coeffs.d_ctrl, &pair)
    }

    /// Adjoint of the initial-to-state map: initial-level adjoint mean of
    /// the same backward solve.
    pub fn apply_n_star(&self, xi: &AdaptedProcess<T>) -> Result<Vec<T>> {
        let pair = solve_backward(self.spec, &self.zero_terminal(), Some(xi))?;
        Ok(initial_adjoint_mean(&pair))
    }

    /// Adjoint of the terminal control-to-state map: zero running source,
    /// terminal datum `y_terminal`.
    pub fn apply_hat_m_star(&self, y_terminal: &NodeArray<T>) -> Result<AdaptedProcess<T>> {
        let pair = solve_backward(self.spec, y_terminal, None)?;
        control_adjoint_process(&self.spec.coeffs.b_ctrl, &self.spec.coeffs.d_ctrl, &pair)
    }

    /// Adjoint of the terminal initial-to-state map.
    pub fn apply_hat_n_star(&self, y_terminal: &NodeArray<T>) -> Result<Vec<T>> {
        let pair = solve_backward(self.spec, y_terminal, None)?;
        Ok(initial_adjoint_mean(&pair))
    }
}

/// `Q x (+ q_lin)` as a running source process over the running levels.
fn state_weighted_source<T: Scalar>(
    spec: &LqProblemSpec<T>,
    x: &StatePath<T>,
    include_linear: bool,
) -> AdaptedProcess<T> {
    let n = spec.state_dim();
    let first = spec.init_level;
    let last = spec.last_running_level();
    let mut out = AdaptedProcess::zeros(first, last, n, 1);
    for k in first..=last {
        let xs = x.level(k);
        let arr = out.level_mut(k);
        for node in 0..arr.nodes() {
            let dst = arr.node_mut(node);
            spec.weights.q.block(k, node).matvec_add(xs.node(node), dst);
            if include_linear {
                spec.weights.q_lin.block(k, node).add_to(dst);
            }
        }
    }
    out
}

/// `S_eff^T u` added into an existing running source (the cross-term's
/// contribution to the adjoint equation).
fn add_cross_adjoint_source<T: Scalar>(
    spec: &LqProblemSpec<T>,
    u: &AdaptedProcess<T>,
    out: &mut AdaptedProcess<T>,
) {
    let s_eff = spec.s_eff();
    if spec.weights.s.max_abs() == T::zero() {
        return;
    }
    let mut tmp = vec![T::zero(); spec.state_dim()];
    for k in out.first_level()..=out.last_level() {
        let us = u.level(k);
        let arr = out.level_mut(k);
        for node in 0..arr.nodes() {
            for v in tmp.iter_mut() {
                *v = T::zero();
            }
            spec.weights
                .s
                .block(k, node)
                .tr_matvec_add(us.node(node), &mut tmp);
            let dst = arr.node_mut(node);
            for (d, t) in dst.iter_mut().zip(tmp.iter()) {
                *d += s_eff * *t;
            }
        }
    }
}

/// `G x_K (+ g_lin)` as the terminal datum of the adjoint equation.
fn terminal_weighted_datum<T: Scalar>(
    spec: &LqProblemSpec<T>,
    x_leaf: &NodeArray<T>,
    include_linear: bool,
) -> NodeArray<T> {
    let n = spec.state_dim();
    let leaf = spec.tree.depth();
    let mut out = NodeArray::zeros(leaf, n, 1);
    for node in 0..out.nodes() {
        let dst = out.node_mut(node);
        spec.weights
            .g
            .block(node)
            .matvec_add(x_leaf.node(node), dst);
        if include_linear {
            spec.weights.g_lin.block(node).add_to(dst);
        }
    }
    out
}

/// Stationarity-type control process
/// `B^T yhat + D^T z [+ S_eff x] [+ R u] [+ r_lin]`.
fn control_stationarity<T: Scalar>(
    spec: &LqProblemSpec<T>,
    pair: &BackwardPair<T>,
    x: Option<&StatePath<T>>,
    u: Option<&AdaptedProcess<T>>,
    include_linear: bool,
) -> Result<AdaptedProcess<T>> {
    let mut out = control_adjoint_process(&spec.coeffs.b_ctrl, &spec.coeffs.d_ctrl, pair)?;
    let s_eff = spec.s_eff();
    let mut tmp = vec![T::zero(); spec.control_dim()];
    for k in out.first_level()..=out.last_level() {
        let arr = out.level_mut(k);
        for node in 0..arr.nodes() {
            if let Some(xs) = x {
                for v in tmp.iter_mut() {
                    *v = T::zero();
                }
                spec.weights
                    .s
                    .block(k, node)
                    .matvec_add(xs.level(k).node(node), &mut tmp);
                let dst = arr.node_mut(node);
                for (d, t) in dst.iter_mut().zip(tmp.iter()) {
                    *d += s_eff * *t;
                }
            }
            let dst = arr.node_mut(node);
            if let Some(us) = u {
                spec.weights
                    .r
                    .block(k, node)
                    .matvec_add(us.level(k).node(node), dst);
            }
            if include_linear {
                spec.weights.r_lin.block(k, node).add_to(dst);
            }
        }
    }
    Ok(out)
}

/// Direct evaluation of the quadratic cost at `u`:
///
/// ```text
/// J(u) = 1/2 sum_k dt E[<Q x, x> + <R u, u> + 2 <S_eff x, u>
///                        + 2 <q_lin, x> + 2 <r_lin, u>]
///        + 1/2 E[<G x_K, x_K> + 2 <g_lin, x_K>],
/// ```
///
/// with `S_eff = (s_factor/2) S`, so both cross-term conventions evaluate
/// through one formula.
pub fn cost<T: Scalar>(spec: &LqProblemSpec<T>, u: &AdaptedProcess<T>) -> Result<T> {
    let x = solve_forward(spec, u)?;
    cost_given_state(spec, u, &x)
}

/// Cost evaluation reusing an already computed state trajectory.
pub fn cost_given_state<T: Scalar>(
    spec: &LqProblemSpec<T>,
    u: &AdaptedProcess<T>,
    x: &StatePath<T>,
) -> Result<T> {
    let tree = &spec.tree;
    let first = spec.init_level;
    let last = spec.last_running_level();
    let n = spec.state_dim();
    let m = spec.control_dim();
    let dt = tree.dt();
    let s_eff = spec.s_eff();
    let two = T::two();

    let mut qx = vec![T::zero(); n];
    let mut ru = vec![T::zero(); m];
    let mut sx = vec![T::zero(); m];
    let mut running = T::zero();
    for k in first..=last {
        let xs = x.level(k);
        let us = u.level(k);
        let prob = tree.atom_prob(k);
        let mut level_sum = T::zero();
        for node in 0..xs.nodes() {
            let xv = xs.node(node);
            let uv = us.node(node);
            for v in qx.iter_mut() {
                *v = T::zero();
            }
            spec.weights.q.block(k, node).matvec_add(xv, &mut qx);
            for v in ru.iter_mut() {
                *v = T::zero();
            }
            spec.weights.r.block(k, node).matvec_add(uv, &mut ru);
            for v in sx.iter_mut() {
                *v = T::zero();
            }
            spec.weights.s.block(k, node).matvec_add(xv, &mut sx);
            let mut node_sum = dot(&qx, xv) + dot(&ru, uv) + two * s_eff * dot(&sx, uv);
            node_sum += two * dot(spec.weights.q_lin.block(k, node).data, xv);
            node_sum += two * dot(spec.weights.r_lin.block(k, node).data, uv);
            level_sum += node_sum;
        }
        running += dt * prob * level_sum;
    }

    let leaf = tree.depth();
    let xk = x.level(leaf);
    let prob = tree.atom_prob(leaf);
    let mut gx = vec![T::zero(); n];
    let mut terminal = T::zero();
    for node in 0..xk.nodes() {
        let xv = xk.node(node);
        for v in gx.iter_mut() {
            *v = T::zero();
        }
        spec.weights.g.block(node).matvec_add(xv, &mut gx);
        terminal += dot(&gx, xv) + two * dot(spec.weights.g_lin.block(node).data, xv);
    }
    terminal *= prob;

    Ok(T::half() * (running + terminal))
}

/// The Fréchet derivative of the cost at `u`, as a control process:
/// one forward solve with full data, one backward solve with
/// `xi = Q x + S_eff^T u + q_lin` and terminal `G x_K + g_lin`, then
/// `B^T yhat + D^T z + S_eff x + R u + r_lin`.
pub fn frechet_gradient<T: Scalar>(
    spec: &LqProblemSpec<T>,
    u: &AdaptedProcess<T>,
) -> Result<AdaptedProcess<T>> {
    let x = solve_forward(spec, u)?;
    let mut xi = state_weighted_source(spec, &x, true);
    add_cross_adjoint_source(spec, u, &mut xi);
    let y_t = terminal_weighted_datum(spec, x.level(spec.tree.depth()), true);
    let pair = solve_backward(spec, &y_t, Some(&xi))?;
    control_stationarity(spec, &pair, Some(&x), Some(u), true)
}

/// Norm (in the control pairing) of the stationarity expression at `u`;
/// zero together with a nonnegative finiteness check certifies optimality.
pub fn optimality_residual<T: Scalar>(spec: &LqProblemSpec<T>, u: &AdaptedProcess<T>) -> Result<T> {
    Ok(process_norm(&frechet_gradient(spec, u)?, &spec.tree))
}

/// The quadratic/linear/constant decomposition of the cost in `(u, eta)`:
/// matrix-free applications of the quadratic term plus cached affine data.
pub struct PsiSystem<'a, T> {
    spec: &'a LqProblemSpec<T>,
    hom: LqProblemSpec<T>,
    h: StatePath<T>,
    phi1: Vec<T>,
    phi2: AdaptedProcess<T>,
    phi3: T,
}

impl<'a, T: Scalar> PsiSystem<'a, T> {
    /// Assembles the affine pieces: one forward sweep for the inhomogeneous
    /// response `h` and one backward sweep serving the linear term in both
    /// the control variable (`phi2`) and the initial state (`phi1`); the
    /// constant `phi3` is the cost at zero control and zero initial state.
    pub fn new(spec: &'a LqProblemSpec<T>) -> Result<Self> {
        let bundle = OperatorBundle::new(spec);
        let h = bundle.compute_h()?;
        let xi = state_weighted_source(spec, &h, true);
        let y_t = terminal_weighted_datum(spec, h.level(spec.tree.depth()), true);
        let pair = solve_backward(spec, &y_t, Some(&xi))?;
        let phi2 = control_stationarity(spec, &pair, Some(&h), None, true)?;
        let phi1 = initial_adjoint_mean(&pair);

        // Cost at zero control and zero initial state: the state path is
        // exactly `h`, so no dedicated spec copy is needed.
        let phi3 = cost_given_state(spec, &spec.zero_control(), &h)?;

        Ok(PsiSystem {
            spec,
            hom: spec.homogenized(),
            h,
            phi1,
            phi2,
            phi3,
        })
    }

    /// The inhomogeneous state response this system was assembled around.
    pub fn h(&self) -> &StatePath<T> {
        &self.h
    }

    /// Linear coefficient against the initial state.
    pub fn phi1(&self) -> &[T] {
        &self.phi1
    }

    /// Linear coefficient against the control (a control process).
    pub fn phi2(&self) -> &AdaptedProcess<T> {
        &self.phi2
    }

    /// Constant term: the cost at zero control and zero initial state.
    pub fn phi3(&self) -> T {
        self.phi3
    }

    /// Quadratic term in the control: self-adjoint, positive exactly when
    /// the problem is convex in `u`. One forward and one combined backward
    /// sweep per application.
    pub fn apply_psi1(&self, u: &AdaptedProcess<T>) -> Result<AdaptedProcess<T>> {
        let spec = self.spec;
        let bundle = OperatorBundle::new(spec);
        let xu = bundle.apply_m(u)?;
        let mut xi = state_weighted_source(spec, &xu, false);
        add_cross_adjoint_source(spec, u, &mut xi);
        let y_t = terminal_weighted_datum(spec, xu.level(spec.tree.depth()), false);
        let pair = solve_backward(spec, &y_t, Some(&xi))?;
        control_stationarity(spec, &pair, Some(&xu), Some(u), false)
    }

    /// Mixed term: initial state to control space.
    pub fn apply_psi2(&self, eta: &[T]) -> Result<AdaptedProcess<T>> {
        let spec = self.spec;
        let bundle = OperatorBundle::new(spec);
        let xe = bundle.apply_n(eta)?;
        let xi = state_weighted_source(spec, &xe, false);
        let y_t = terminal_weighted_datum(spec, xe.level(spec.tree.depth()), false);
        let pair = solve_backward(spec, &y_t, Some(&xi))?;
        control_stationarity(spec, &pair, Some(&xe), None, false)
    }

    /// Quadratic term in the initial state (returned as the vector
    /// `Psi_3 eta`, to be paired Euclideanly with `eta`).
    pub fn apply_psi3(&self, eta: &[T]) -> Result<Vec<T>> {
        let spec = self.spec;
        let bundle = OperatorBundle::new(spec);
        let xe = bundle.apply_n(eta)?;
        let xi = state_weighted_source(spec, &xe, false);
        let y_t = terminal_weighted_datum(spec, xe.level(spec.tree.depth()), false);
        let pair = solve_backward(spec, &y_t, Some(&xi))?;
        Ok(initial_adjoint_mean(&pair))
    }

    /// Cost through the assembled decomposition,
    /// `1/2 pair(Psi1 u, u) + pair(Psi2 eta, u) + 1/2 <Psi3 eta, eta> +
    /// <phi1, eta> + pair(phi2, u) + phi3`; agrees with the direct
    /// evaluation to roundoff.
    pub fn cost_psi_form(&self, u: &AdaptedProcess<T>) -> Result<T> {
        let spec = self.spec;
        let tree = &spec.tree;
        let eta = &spec.eta;
        let half = T::half();
        let psi1_u = self.apply_psi1(u)?;
        let psi2_eta = self.apply_psi2(eta)?;
        let psi3_eta = self.apply_psi3(eta)?;
        let mut total = half * pair_processes(&psi1_u, u, tree)?;
        total += pair_processes(&psi2_eta, u, tree)?;
        total += half * dot(&psi3_eta, eta);
        total += dot(&self.phi1, eta);
        total += pair_processes(&self.phi2, u, tree)?;
        total += self.phi3;
        Ok(total)
    }

    /// Right-hand side of the stationarity system,
    /// `-(Psi2 eta + phi2)`; computed as the negated gradient at zero
    /// control (the same quantity, one sweep pair cheaper).
    pub fn rhs(&self) -> Result<AdaptedProcess<T>> {
        let mut g = frechet_gradient(self.spec, &self.spec.zero_control())?;
        g.scale(-T::one());
        Ok(g)
    }

    /// The fully homogeneous copy of the problem; its cost functional is
    /// `u -> 1/2 pair(Psi1 u, u)`, the exact second-order term of the
    /// expansion of the cost.
    pub fn homogenized_spec(&self) -> &LqProblemSpec<T> {
        &self.hom
    }
}

/// Builds a matrix-free Ψ system for the problem.
pub fn assemble_psi<T: Scalar>(spec: &LqProblemSpec<T>) -> Result<PsiSystem<'_, T>> {
    PsiSystem::new(spec)
}

/// Outcome of the convexity/finiteness diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitenessReport<T> {
    /// Smallest eigenvalue of the quadratic term in the control pairing.
    pub min_eig: T,
    /// `min_eig >= -1e-12`: the necessary condition for a finite infimum.
    pub nonneg: bool,
    /// Stacked control dimension the operator acts on.
    pub dimension: usize,
    /// The value is a Lanczos estimate rather than a dense eigensolve.
    pub estimated: bool,
}

/// Smallest eigenvalue of the quadratic cost term over the control space.
///
/// Below the configured dense threshold the operator is applied to every
/// canonical basis process and the weighted-symmetrised Gram matrix is
/// eigendecomposed exactly; above it, an iterative estimate is used when
/// enabled, otherwise a capacity error names the offending size.
pub fn check_finiteness<T: Scalar>(spec: &LqProblemSpec<T>) -> Result<FinitenessReport<T>> {
    let psi = PsiSystem::new(spec)?;
    let dim = spec.control_flat_dim();
    let first = spec.init_level;
    let last = spec.last_running_level();
    let m = spec.control_dim();
    let weights = pair_weight_vector(&spec.tree, first, last, m);

    let mut apply_flat = |flat: &[T]| -> Result<Vec<T>> {
        let u = AdaptedProcess::from_flat(first, last, m, 1, flat)?;
        Ok(psi.apply_psi1(&u)?.to_flat())
    };

    if dim > spec.options.dense_threshold {
        if !spec.options.iterative_eig_fallback {
            return Err(Error::Capacity {
                what: "dense finiteness check".into(),
                size: dim,
                limit: spec.options.dense_threshold,
            });
        }
        let min_eig = lanczos_min_eig(&mut apply_flat, dim, &weights, 64)?;
        return Ok(FinitenessReport {
            min_eig,
            nonneg: min_eig >= T::from_f64(-1e-12),
            dimension: dim,
            estimated: true,
        });
    }

    // Dense path: columns of the operator in flat coordinates, then the
    // similarity transform W^{1/2} C W^{-1/2} which is symmetric exactly
    // when the operator is self-adjoint in the weighted pairing.
    let mut cols = Mat::zeros(dim, dim);
    let mut e = vec![T::zero(); dim];
    for j in 0..dim {
        e[j] = T::one();
        let col = apply_flat(&e)?;
        e[j] = T::zero();
        for (i, v) in col.iter().enumerate() {
            cols.set(i, j, *v);
        }
    }
    let mut sym = Mat::zeros(dim, dim);
    for (i, wi) in weights.iter().enumerate() {
        let wi = wi.sqrt();
        for (j, wj) in weights.iter().enumerate() {
            let wj = wj.sqrt();
            sym.set(i, j, wi * cols.at(i, j) / wj);
        }
    }
    let sym = sym.symmetrized();
    let (eigs, _) = sym_eigen(&sym);
    let min_eig = eigs[0];
    Ok(FinitenessReport {
        min_eig,
        nonneg: min_eig >= T::from_f64(-1e-12),
        dimension: dim,
        estimated: false,
    })
}

/// Per-block inverse of the control weight, used to precondition the
/// stationarity solve when `R` is uniformly positive definite.
enum RInverse<T> {
    Constant(Cholesky<T>),
    PerLevel(Vec<Cholesky<T>>),
    PerNode(Vec<Vec<Cholesky<T>>>),
}

fn factor_r_blocks<T: Scalar>(spec: &LqProblemSpec<T>) -> Option<RInverse<T>> {
    let first = spec.init_level;
    let last = spec.last_running_level();
    match &spec.weights.r {
        CoeffTable::Constant(m) => Cholesky::new(&m.symmetrized()).map(RInverse::Constant),
        CoeffTable::PerLevel(v) => {
            let mut out = Vec::with_capacity(last + 1 - first);
            for block in &v[first..=last] {
                out.push(Cholesky::new(&block.symmetrized())?);
            }
            Some(RInverse::PerLevel(out))
        }
        CoeffTable::PerNode(p) => {
            let mut levels = Vec::new();
            for k in first..=last {
                let arr = p.level(k);
                let mut nodes = Vec::with_capacity(arr.nodes());
                for node in 0..arr.nodes() {
                    let m = Mat::from_vec(arr.rows(), arr.cols(), arr.node(node).to_vec())
                        .expect("validated block");
                    nodes.push(Cholesky::new(&m.symmetrized())?);
                }
                levels.push(nodes);
            }
            Some(RInverse::PerNode(levels))
        }
    }
}

impl<T: Scalar> RInverse<T> {
    fn solve_block(&self, level: usize, first_level: usize, node: usize, r: &[T]) -> Vec<T> {
        match self {
            RInverse::Constant(c) => c.solve(r),
            RInverse::PerLevel(v) => v[level - first_level].solve(r),
            RInverse::PerNode(levels) => levels[level - first_level][node].solve(r),
        }
    }
}

/// Diagnostics accompanying the open-loop minimiser.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveDiagnostics<T> {
    /// Operator applications used by the Krylov solve.
    pub iterations: usize,
    /// Final relative residual of the stationarity system.
    pub cg_rel_residual: T,
    /// Independently recomputed gradient norm at the returned control.
    pub gradient_norm: T,
    /// Cost at the returned control.
    pub cost: T,
    /// Smallest eigenvalue from the finiteness precheck (skipped in
    /// least-squares mode).
    pub min_eig: Option<T>,
    /// The minimal-norm least-squares path was taken.
    pub least_squares: bool,
    /// An R-block preconditioner was in effect.
    pub preconditioned: bool,
}

/// Minimises the cost over open-loop controls by conjugate gradients on the
/// stationarity system in the control pairing.
///
/// Unless least-squares mode is requested, the convexity precheck must pass
/// with a strictly positive margin; a semidefinite-but-nonnegative operator
/// is resolved through the flagged minimal-norm path.
pub fn solve_open_loop<T: Scalar>(
    spec: &LqProblemSpec<T>,
) -> Result<(AdaptedProcess<T>, SolveDiagnostics<T>)> {
    let psi = PsiSystem::new(spec)?;
    let first = spec.init_level;
    let last = spec.last_running_level();
    let m = spec.control_dim();
    let dim = spec.control_flat_dim();
    let weights = pair_weight_vector(&spec.tree, first, last, m);
    let tol = spec.options.cg_tol;
    let max_iter = spec.options.cg_max_iter_factor.saturating_mul(dim).max(8);

    let mut min_eig = None;
    let mut force_least_squares = spec.options.least_squares;
    if !force_least_squares {
        let report = check_finiteness(spec)?;
        min_eig = Some(report.min_eig);
        if !report.nonneg {
            return Err(Error::Indefinite {
                detail: format!(
                    "the quadratic cost term has smallest eigenvalue {:e} < 0; the infimum is \
                     -infinity and no minimiser exists (finiteness check failed)",
                    report.min_eig.to_f64()
                ),
            });
        }
        if report.min_eig <= T::from_f64(1e-12) {
            // Nonnegative but singular: minimal-norm stationary point.
            force_least_squares = true;
        }
    }

    let rhs_process = psi.rhs()?;
    let rhs = rhs_process.to_flat();
    let mut apply_flat = |flat: &[T]| -> Result<Vec<T>> {
        let u = AdaptedProcess::from_flat(first, last, m, 1, flat)?;
        Ok(psi.apply_psi1(&u)?.to_flat())
    };

    let r_inv = if force_least_squares {
        None
    } else {
        factor_r_blocks(spec)
    };
    let preconditioned = r_inv.is_some();
    let mut precond_fn;
    let mut precond: Option<&mut PrecondFn<'_, T>> = match &r_inv {
        Some(ri) => {
            precond_fn = |r: &[T]| -> Vec<T> {
                let mut out = vec![T::zero(); r.len()];
                let mut offset = 0usize;
                for k in first..=last {
                    let nodes = 1usize << k;
                    for node in 0..nodes {
                        let seg = &r[offset..offset + m];
                        let sol = ri.solve_block(k, first, node, seg);
                        out[offset..offset + m].copy_from_slice(&sol);
                        offset += m;
                    }
                }
                out
            };
            Some(&mut precond_fn)
        }
        None => None,
    };

    let pairing = Pairing::flat(&weights);
    let (flat, report) = if force_least_squares {
        normal_equations(&mut apply_flat, &rhs, &pairing, tol, max_iter)?
    } else {
        conjugate_gradient(
            &mut apply_flat,
            precond.take(),
            &rhs,
            &pairing,
            tol,
            max_iter,
        )?
    };
    let u_star = AdaptedProcess::from_flat(first, last, m, 1, &flat)?;

    let gradient_norm = optimality_residual(spec, &u_star)?;
    let cost_value = cost(spec, &u_star)?;
    Ok((
        u_star,
        SolveDiagnostics {
            iterations: report.iterations,
            cg_rel_residual: report.rel_residual,
            gradient_norm,
            cost: cost_value,
            min_eig,
            least_squares: report.least_squares_fallback || spec.options.least_squares,
            preconditioned,
        },
    ))
}

/// Terminal-table application helper shared with the game module.
pub(crate) fn terminal_datum_from_tables<T: Scalar>(
    g: &TerminalTable<T>,
    g_lin: &TerminalTable<T>,
    x_leaf: &NodeArray<T>,
) -> NodeArray<T> {
    let n = x_leaf.rows();
    let mut out = NodeArray::zeros(x_leaf.level(), n, 1);
    for node in 0..out.nodes() {
        let dst = out.node_mut(node);
        g.block(node).matvec_add(x_leaf.node(node), dst);
        g_lin.block(node).add_to(dst);
    }
    out
}
