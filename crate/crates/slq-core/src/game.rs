//! Two-person linear-quadratic stochastic differential games on the binary
//! probability tree.
//!
//! Both players steer one shared state equation through their own input maps
//! `B_i`, `D_i`; each carries a quadratic cost in the state and in *both*
//! controls (own energy, cross-control weights, and state-control coupling).
//! An open-loop Nash equilibrium is a pair of control processes such that
//! neither player can improve by deviating unilaterally. Equivalently, both
//! players' stationarity expressions
//!
//! ```text
//! g_i = B_i^T yhat_i + D_i^T z_i + S^i_i x + R^i_{ii} u_i
//!       + 1/2 (R^i_{io} + (R^i_{oi})^T) u_o + r^i_i            (o = other)
//! ```
//!
//! vanish, where `(yhat_i, z_i)` solve player `i`'s adjoint equation driven
//! by `Q^i x + (S^i_1)^T u_1 + (S^i_2)^T u_2 + q^i` with terminal datum
//! `G^i x(T) + g^i`. The map `(u_1, u_2) -> (g_1, g_2)` is affine, so
//! [`solve_nash`] reduces equilibrium search to one joint linear system on
//! the stacked control space, solved matrix-free by a Krylov method.
//!
//! Relabeling the players is an *exact* symmetry here, not an approximate
//! one: every two-term accumulation that mixes player-1 and player-2 data is
//! evaluated into fresh vectors and combined by one commutative addition, and
//! every Krylov reduction sums the two control blocks separately before a
//! final add. Swapping all inputs therefore swaps the computed equilibrium
//! bitwise.

use crate::backward::{backward_sweep, control_adjoint_process};
use crate::error::{Error, Result};
use crate::forward::{forward_sweep, SourceTerm, StatePath};
use crate::krylov::{bicgstab, conjugate_gradient, normal_equations, Pairing};
use crate::linalg::dot;
use crate::lq::{self, FinitenessReport};
use crate::model::{
    coeff_blocks, scan_sym_blocks, terminal_blocks, CoeffTable, CoefficientSet, LqOptions,
    LqProblemSpec, SpectralOperator, SymmetryViolation, TerminalTable, WeightSet,
};
use crate::scalar::Scalar;
use crate::tree::{pair_weight_vector, process_norm, AdaptedProcess, TreeSpace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One player's cost weights. Both control blocks appear in both players'
/// costs: for state dim `n` and control dims `m1`, `m2`, the shapes are
/// `q: n x n`, `s1: m1 x n`, `s2: m2 x n`, `r11: m1 x m1`, `r12: m1 x m2`,
/// `r21: m2 x m1`, `r22: m2 x m2`, `g: n x n`, and column vectors `q_lin`,
/// `r1_lin`, `r2_lin`, `g_lin`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayerWeights<T> {
    pub q: CoeffTable<T>,
    pub s1: CoeffTable<T>,
    pub s2: CoeffTable<T>,
    pub r11: CoeffTable<T>,
    pub r12: CoeffTable<T>,
    pub r21: CoeffTable<T>,
    pub r22: CoeffTable<T>,
    pub g: TerminalTable<T>,
    pub q_lin: CoeffTable<T>,
    pub r1_lin: CoeffTable<T>,
    pub r2_lin: CoeffTable<T>,
    pub g_lin: TerminalTable<T>,
}

impl<T: Scalar> PlayerWeights<T> {
    /// All-zero weights for the given dimensions.
    pub fn zero(n: usize, m1: usize, m2: usize) -> Self {
        PlayerWeights {
            q: CoeffTable::zero(n, n),
            s1: CoeffTable::zero(m1, n),
            s2: CoeffTable::zero(m2, n),
            r11: CoeffTable::zero(m1, m1),
            r12: CoeffTable::zero(m1, m2),
            r21: CoeffTable::zero(m2, m1),
            r22: CoeffTable::zero(m2, m2),
            g: TerminalTable::zero(n, n),
            q_lin: CoeffTable::zero(n, 1),
            r1_lin: CoeffTable::zero(m1, 1),
            r2_lin: CoeffTable::zero(m2, 1),
            g_lin: TerminalTable::zero(n, 1),
        }
    }

    /// Zero weights except identity control energies (the benign default).
    pub fn default_for(n: usize, m1: usize, m2: usize) -> Self {
        let mut w = PlayerWeights::zero(n, m1, m2);
        w.r11 = CoeffTable::identity(m1);
        w.r22 = CoeffTable::identity(m2);
        w
    }

    /// The same weights with the player roles `1 <-> 2` exchanged.
    fn swapped_roles(mut self) -> Self {
        std::mem::swap(&mut self.s1, &mut self.s2);
        std::mem::swap(&mut self.r11, &mut self.r22);
        std::mem::swap(&mut self.r12, &mut self.r21);
        std::mem::swap(&mut self.r1_lin, &mut self.r2_lin);
        self
    }
}

/// Shared state dynamics plus the two players' input maps. Shapes:
/// `a1, c: n x n`, `b1, d1: n x m1`, `b2, d2: n x m2`, `drift, diffusion:
/// n x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GameDynamics<T> {
    /// Bounded drift perturbation of the generator.
    pub a1: CoeffTable<T>,
    /// State-to-diffusion map.
    pub c: CoeffTable<T>,
    /// Drift inhomogeneity.
    pub drift: CoeffTable<T>,
    /// Diffusion inhomogeneity.
    pub diffusion: CoeffTable<T>,
    /// Player 1 drift and diffusion input maps.
    pub b1: CoeffTable<T>,
    pub d1: CoeffTable<T>,
    /// Player 2 drift and diffusion input maps.
    pub b2: CoeffTable<T>,
    pub d2: CoeffTable<T>,
}

impl<T: Scalar> GameDynamics<T> {
    /// All-zero dynamics tables for the given dimensions.
    pub fn zero(n: usize, m1: usize, m2: usize) -> Self {
        GameDynamics {
            a1: CoeffTable::zero(n, n),
            c: CoeffTable::zero(n, n),
            drift: CoeffTable::zero(n, 1),
            diffusion: CoeffTable::zero(n, 1),
            b1: CoeffTable::zero(n, m1),
            d1: CoeffTable::zero(n, m1),
            b2: CoeffTable::zero(n, m2),
            d2: CoeffTable::zero(n, m2),
        }
    }
}

/// A complete two-player game: shared dynamics, per-player weights, tree,
/// and initial data. The cross-term convention is fixed to the factor-2 form
/// (running cost `... + 2 <S^i_j x, u_j> + ...`); the single-player
/// `s_factor` option is ignored by the game formulas.
#[derive(Debug, Clone, PartialEq)]
pub struct GameSpec<T> {
    pub generator: SpectralOperator<T>,
    pub dynamics: GameDynamics<T>,
    pub players: [PlayerWeights<T>; 2],
    pub tree: TreeSpace<T>,
    /// Level at which the state starts; controls live on
    /// `init_level..=depth-1`.
    pub init_level: usize,
    /// Deterministic initial state, broadcast to every starting atom.
    pub eta: Vec<T>,
    pub options: LqOptions<T>,
}

impl<T: Scalar> GameSpec<T> {
    pub fn new(
        generator: SpectralOperator<T>,
        dynamics: GameDynamics<T>,
        players: [PlayerWeights<T>; 2],
        tree: TreeSpace<T>,
        init_level: usize,
        eta: Vec<T>,
        options: LqOptions<T>,
    ) -> Result<Self> {
        let mut game = GameSpec {
            generator,
            dynamics,
            players,
            tree,
            init_level,
            eta,
            options,
        };
        if game.options.symmetrize {
            for p in game.players.iter_mut() {
                p.q.map_blocks(|m| m.symmetrized());
                p.r11.map_blocks(|m| m.symmetrized());
                p.r22.map_blocks(|m| m.symmetrized());
                p.g.map_blocks(|m| m.symmetrized());
            }
        }
        game.validate_shapes()?;
        Ok(game)
    }

    #[inline]
    pub fn state_dim(&self) -> usize {
        self.generator.dim()
    }

    /// Control dimension of player `i` (0-based).
    #[inline]
    pub fn control_dim(&self, i: usize) -> usize {
        self.input_maps(i).0.shape().1
    }

    /// Last running level (controls live on `init_level..=this`).
    #[inline]
    pub fn last_running_level(&self) -> usize {
        self.tree.depth() - 1
    }

    /// Stacked dimension of player `i`'s control space.
    pub fn control_flat_dim(&self, i: usize) -> usize {
        let m = self.control_dim(i);
        (self.init_level..=self.last_running_level())
            .map(|k| (1usize << k) * m)
            .sum()
    }

    /// Player `i`'s drift and diffusion input maps.
    pub fn input_maps(&self, i: usize) -> (&CoeffTable<T>, &CoeffTable<T>) {
        assert!(i < 2, "player index must be 0 or 1");
        if i == 0 {
            (&self.dynamics.b1, &self.dynamics.d1)
        } else {
            (&self.dynamics.b2, &self.dynamics.d2)
        }
    }

    /// All-zero control process for player `i`.
    pub fn zero_control(&self, i: usize) -> AdaptedProcess<T> {
        AdaptedProcess::zeros(
            self.init_level,
            self.last_running_level(),
            self.control_dim(i),
            1,
        )
    }

    /// The same game with the players relabeled `1 <-> 2`. Solving the
    /// swapped game yields the original equilibrium with the controls
    /// exchanged, bitwise.
    pub fn swapped(&self) -> Self {
        let mut game = self.clone();
        std::mem::swap(&mut game.dynamics.b1, &mut game.dynamics.b2);
        std::mem::swap(&mut game.dynamics.d1, &mut game.dynamics.d2);
        game.players.swap(0, 1);
        let [p1, p2] = game.players;
        game.players = [p1.swapped_roles(), p2.swapped_roles()];
        game
    }

    /// Copy with zeroed initial state, inhomogeneities, and linear weights;
    /// its stationarity map is the exact linear part of this game's.
    pub fn homogeneous(&self) -> Self {
        let n = self.state_dim();
        let (m1, m2) = (self.control_dim(0), self.control_dim(1));
        let mut game = self.clone();
        game.eta = vec![T::zero(); n];
        game.dynamics.drift = CoeffTable::zero(n, 1);
        game.dynamics.diffusion = CoeffTable::zero(n, 1);
        for p in game.players.iter_mut() {
            p.q_lin = CoeffTable::zero(n, 1);
            p.r1_lin = CoeffTable::zero(m1, 1);
            p.r2_lin = CoeffTable::zero(m2, 1);
            p.g_lin = TerminalTable::zero(n, 1);
        }
        game
    }

    fn validate_shapes(&self) -> Result<()> {
        let n = self.state_dim();
        let m1 = self.dynamics.b1.shape().1;
        let m2 = self.dynamics.b2.shape().1;
        if m1 == 0 || m2 == 0 {
            return Err(Error::InvalidSpec(
                "control dimensions must be positive".into(),
            ));
        }
        let k = self.tree.depth();
        if self.init_level >= k {
            return Err(Error::InvalidGrid(format!(
                "init_level {} must be below the leaf level {k}",
                self.init_level
            )));
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
                level: self.init_level,
            });
        }
        if self.options.s_factor != 1 && self.options.s_factor != 2 {
            return Err(Error::InvalidSpec(format!(
                "s_factor must be 1 or 2, got {}",
                self.options.s_factor
            )));
        }
        let first = self.init_level;
        let last = self.last_running_level();
        self.dynamics.a1.validate("a1", n, n, first, last)?;
        self.dynamics.c.validate("c", n, n, first, last)?;
        self.dynamics.drift.validate("drift", n, 1, first, last)?;
        self.dynamics
            .diffusion
            .validate("diffusion", n, 1, first, last)?;
        self.dynamics.b1.validate("b1", n, m1, first, last)?;
        self.dynamics.d1.validate("d1", n, m1, first, last)?;
        self.dynamics.b2.validate("b2", n, m2, first, last)?;
        self.dynamics.d2.validate("d2", n, m2, first, last)?;
        for (i, p) in self.players.iter().enumerate() {
            let who = i + 1;
            p.q.validate(&format!("player{who}.q"), n, n, first, last)?;
            p.s1.validate(&format!("player{who}.s1"), m1, n, first, last)?;
            p.s2.validate(&format!("player{who}.s2"), m2, n, first, last)?;
            p.r11
                .validate(&format!("player{who}.r11"), m1, m1, first, last)?;
            p.r12
                .validate(&format!("player{who}.r12"), m1, m2, first, last)?;
            p.r21
                .validate(&format!("player{who}.r21"), m2, m1, first, last)?;
            p.r22
                .validate(&format!("player{who}.r22"), m2, m2, first, last)?;
            p.q_lin
                .validate(&format!("player{who}.q_lin"), n, 1, first, last)?;
            p.r1_lin
                .validate(&format!("player{who}.r1_lin"), m1, 1, first, last)?;
            p.r2_lin
                .validate(&format!("player{who}.r2_lin"), m2, 1, first, last)?;
            p.g.validate(&format!("player{who}.g"), n, n, k)?;
            p.g_lin.validate(&format!("player{who}.g_lin"), n, 1, k)?;
        }
        Ok(())
    }

    fn check_control(&self, i: usize, u: &AdaptedProcess<T>, context: &str) -> Result<()> {
        let m = self.control_dim(i);
        if u.first_level() != self.init_level
            || u.last_level() != self.last_running_level()
            || u.rows() != m
            || u.cols() != 1
        {
            return Err(Error::ShapeMismatch {
                context: context.into(),
                expected: format!(
                    "{m}x1 control on levels {}..={}",
                    self.init_level,
                    self.last_running_level()
                ),
                got: format!(
                    "{}x{} on levels {}..={}",
                    u.rows(),
                    u.cols(),
                    u.first_level(),
                    u.last_level()
                ),
            });
        }
        Ok(())
    }
}

/// Player-`i` view of the game data: own input maps and the weights that
/// act on the own control, plus the other player's maps for embedding.
struct PlayerView<'a, T> {
    b: &'a CoeffTable<T>,
    d: &'a CoeffTable<T>,
    b_other: &'a CoeffTable<T>,
    d_other: &'a CoeffTable<T>,
    s_own: &'a CoeffTable<T>,
    s_other: &'a CoeffTable<T>,
    r_own: &'a CoeffTable<T>,
    /// Cross block in the own row (`R^i_{io}`), applied to the other control.
    r_own_other: &'a CoeffTable<T>,
    /// Cross block in the other row (`R^i_{oi}`), transposed onto the own
    /// control space.
    r_other_own: &'a CoeffTable<T>,
    r_lin_own: &'a CoeffTable<T>,
}

fn view<T: Scalar>(game: &GameSpec<T>, i: usize) -> PlayerView<'_, T> {
    assert!(i < 2, "player index must be 0 or 1");
    let p = &game.players[i];
    if i == 0 {
        PlayerView {
            b: &game.dynamics.b1,
            d: &game.dynamics.d1,
            b_other: &game.dynamics.b2,
            d_other: &game.dynamics.d2,
            s_own: &p.s1,
            s_other: &p.s2,
            r_own: &p.r11,
            r_own_other: &p.r12,
            r_other_own: &p.r21,
            r_lin_own: &p.r1_lin,
        }
    } else {
        PlayerView {
            b: &game.dynamics.b2,
            d: &game.dynamics.d2,
            b_other: &game.dynamics.b1,
            d_other: &game.dynamics.d1,
            s_own: &p.s2,
            s_other: &p.s1,
            r_own: &p.r22,
            r_own_other: &p.r21,
            r_other_own: &p.r12,
            r_lin_own: &p.r2_lin,
        }
    }
}

/// `map_a u_a + map_b u_b` as an adapted `rows x 1` process, evaluated into
/// two fresh vectors per node and combined by one commutative addition so
/// that exchanging the pairs `(map_a, u_a) <-> (map_b, u_b)` leaves the
/// result bitwise unchanged.
fn two_term_control_source<T: Scalar>(
    map_a: &CoeffTable<T>,
    u_a: &AdaptedProcess<T>,
    map_b: &CoeffTable<T>,
    u_b: &AdaptedProcess<T>,
    rows: usize,
    first: usize,
    last: usize,
) -> AdaptedProcess<T> {
    let mut va = vec![T::zero(); rows];
    let mut vb = vec![T::zero(); rows];
    AdaptedProcess::from_fn(first, last, rows, 1, |k, node, out| {
        for v in va.iter_mut() {
            *v = T::zero();
        }
        for v in vb.iter_mut() {
            *v = T::zero();
        }
        map_a
            .block(k, node)
            .matvec_add(u_a.level(k).node(node), &mut va);
        map_b
            .block(k, node)
            .matvec_add(u_b.level(k).node(node), &mut vb);
        for (o, (a, b)) in out.iter_mut().zip(va.iter().zip(vb.iter())) {
            *o = *a + *b;
        }
    })
}

/// State trajectory under the pair of controls: one exponential-integrator
/// sweep with drift `b + B_1 u_1 + B_2 u_2` and diffusion
/// `sigma + D_1 u_1 + D_2 u_2`.
pub fn game_forward<T: Scalar>(
    game: &GameSpec<T>,
    u1: &AdaptedProcess<T>,
    u2: &AdaptedProcess<T>,
) -> Result<StatePath<T>> {
    game.check_control(0, u1, "game forward, player 1 control")?;
    game.check_control(1, u2, "game forward, player 2 control")?;
    let n = game.state_dim();
    let first = game.init_level;
    let last = game.last_running_level();
    let dynamics = &game.dynamics;
    let drift_ctrl = two_term_control_source(&dynamics.b1, u1, &dynamics.b2, u2, n, first, last);
    let diffusion_ctrl =
        two_term_control_source(&dynamics.d1, u1, &dynamics.d2, u2, n, first, last);
    forward_sweep(
        &game.generator,
        &dynamics.a1,
        &dynamics.c,
        &game.tree,
        game.init_level,
        Some(&game.eta),
        &[
            SourceTerm::Table(&dynamics.drift),
            SourceTerm::Process(&drift_ctrl),
        ],
        &[
            SourceTerm::Table(&dynamics.diffusion),
            SourceTerm::Process(&diffusion_ctrl),
        ],
    )
}

/// Player `i`'s cost at the control pair, reusing a computed trajectory:
///
/// ```text
/// J^i = 1/2 sum_k dt E[<Q x, x> + <R_11 u_1, u_1> + <R_22 u_2, u_2>
///                      + <R_12 u_2, u_1> + <R_21 u_1, u_2>
///                      + 2 <S_1 x, u_1> + 2 <S_2 x, u_2>
///                      + 2 <q_lin, x> + 2 <r1_lin, u_1> + 2 <r2_lin, u_2>]
///       + 1/2 E[<G x_K, x_K> + 2 <g_lin, x_K>]
/// ```
///
/// (all weights player `i`'s).
pub fn game_cost_given_state<T: Scalar>(
    game: &GameSpec<T>,
    i: usize,
    u1: &AdaptedProcess<T>,
    u2: &AdaptedProcess<T>,
    x: &StatePath<T>,
) -> Result<T> {
    assert!(i < 2, "player index must be 0 or 1");
    let p = &game.players[i];
    let tree = &game.tree;
    let n = game.state_dim();
    let (m1, m2) = (game.control_dim(0), game.control_dim(1));
    let dt = tree.dt();
    let two = T::two();

    let mut tn = vec![T::zero(); n];
    let mut t1 = vec![T::zero(); m1];
    let mut t2 = vec![T::zero(); m2];
    let mut running = T::zero();
    for k in game.init_level..=game.last_running_level() {
        let xs = x.level(k);
        let u1s = u1.level(k);
        let u2s = u2.level(k);
        let prob = tree.atom_prob(k);
        let mut level_sum = T::zero();
        for node in 0..xs.nodes() {
            let xv = xs.node(node);
            let u1v = u1s.node(node);
            let u2v = u2s.node(node);
            let mut node_sum = T::zero();
            clear(&mut tn);
            p.q.block(k, node).matvec_add(xv, &mut tn);
            node_sum += dot(&tn, xv);
            clear(&mut t1);
            p.r11.block(k, node).matvec_add(u1v, &mut t1);
            node_sum += dot(&t1, u1v);
            clear(&mut t2);
            p.r22.block(k, node).matvec_add(u2v, &mut t2);
            node_sum += dot(&t2, u2v);
            clear(&mut t1);
            p.r12.block(k, node).matvec_add(u2v, &mut t1);
            node_sum += dot(&t1, u1v);
            clear(&mut t2);
            p.r21.block(k, node).matvec_add(u1v, &mut t2);
            node_sum += dot(&t2, u2v);
            clear(&mut t1);
            p.s1.block(k, node).matvec_add(xv, &mut t1);
            node_sum += two * dot(&t1, u1v);
            clear(&mut t2);
            p.s2.block(k, node).matvec_add(xv, &mut t2);
            node_sum += two * dot(&t2, u2v);
            node_sum += two * dot(p.q_lin.block(k, node).data, xv);
            node_sum += two * dot(p.r1_lin.block(k, node).data, u1v);
            node_sum += two * dot(p.r2_lin.block(k, node).data, u2v);
            level_sum += node_sum;
        }
        running += dt * prob * level_sum;
    }

    let leaf = tree.depth();
    let xk = x.level(leaf);
    let prob = tree.atom_prob(leaf);
    let mut terminal = T::zero();
    for node in 0..xk.nodes() {
        let xv = xk.node(node);
        clear(&mut tn);
        p.g.block(node).matvec_add(xv, &mut tn);
        terminal += dot(&tn, xv) + two * dot(p.g_lin.block(node).data, xv);
    }
    terminal *= prob;

    Ok(T::half() * (running + terminal))
}

/// Player `i`'s cost at the control pair (one forward solve).
pub fn game_cost<T: Scalar>(
    game: &GameSpec<T>,
    i: usize,
    u1: &AdaptedProcess<T>,
    u2: &AdaptedProcess<T>,
) -> Result<T> {
    let x = game_forward(game, u1, u2)?;
    game_cost_given_state(game, i, u1, u2, &x)
}

fn clear<T: Scalar>(buf: &mut [T]) {
    for v in buf.iter_mut() {
        *v = T::zero();
    }
}

/// Player `i`'s adjoint driver `Q^i x + (S^i_1)^T u_1 + (S^i_2)^T u_2 +
/// q^i` over the running levels; the two control couplings are combined
/// pairwise so the expression is exactly relabeling-equivariant.
fn player_adjoint_source<T: Scalar>(
    game: &GameSpec<T>,
    i: usize,
    x: &StatePath<T>,
    u1: &AdaptedProcess<T>,
    u2: &AdaptedProcess<T>,
) -> AdaptedProcess<T> {
    let p = &game.players[i];
    let n = game.state_dim();
    let mut v1 = vec![T::zero(); n];
    let mut v2 = vec![T::zero(); n];
    AdaptedProcess::from_fn(
        game.init_level,
        game.last_running_level(),
        n,
        1,
        |k, node, out| {
            p.q.block(k, node).matvec_add(x.level(k).node(node), out);
            p.q_lin.block(k, node).add_to(out);
            clear(&mut v1);
            clear(&mut v2);
            p.s1.block(k, node)
                .tr_matvec_add(u1.level(k).node(node), &mut v1);
            p.s2.block(k, node)
                .tr_matvec_add(u2.level(k).node(node), &mut v2);
            for (o, (a, b)) in out.iter_mut().zip(v1.iter().zip(v2.iter())) {
                *o += *a + *b;
            }
        },
    )
}

/// Player `i`'s stationarity expression at the control pair, given the
/// shared trajectory: solves the player's adjoint equation, then assembles
/// `B_i^T yhat + D_i^T z + S^i_i x + R^i_{ii} u_i + 1/2 (R^i_{io} +
/// (R^i_{oi})^T) u_o + r^i_i`.
pub fn player_stationarity<T: Scalar>(
    game: &GameSpec<T>,
    i: usize,
    x: &StatePath<T>,
    u1: &AdaptedProcess<T>,
    u2: &AdaptedProcess<T>,
) -> Result<AdaptedProcess<T>> {
    assert!(i < 2, "player index must be 0 or 1");
    let p = &game.players[i];
    let pv = view(game, i);
    let u_own = if i == 0 { u1 } else { u2 };
    let u_other = if i == 0 { u2 } else { u1 };
    let m = game.control_dim(i);
    let half = T::half();

    let xi = player_adjoint_source(game, i, x, u1, u2);
    let y_terminal = lq::terminal_datum_from_tables(&p.g, &p.g_lin, x.level(game.tree.depth()));
    let pair = backward_sweep(
        &game.generator,
        &game.dynamics.a1,
        &game.dynamics.c,
        &game.tree,
        game.init_level,
        &y_terminal,
        Some(&xi),
    )?;
    let mut out = control_adjoint_process(pv.b, pv.d, &pair)?;

    let mut sx = vec![T::zero(); m];
    let mut va = vec![T::zero(); m];
    let mut vb = vec![T::zero(); m];
    for k in out.first_level()..=out.last_level() {
        let arr = out.level_mut(k);
        for node in 0..arr.nodes() {
            clear(&mut sx);
            pv.s_own
                .block(k, node)
                .matvec_add(x.level(k).node(node), &mut sx);
            clear(&mut va);
            pv.r_own_other
                .block(k, node)
                .matvec_add(u_other.level(k).node(node), &mut va);
            clear(&mut vb);
            pv.r_other_own
                .block(k, node)
                .tr_matvec_add(u_other.level(k).node(node), &mut vb);
            let dst = arr.node_mut(node);
            for (j, d) in dst.iter_mut().enumerate() {
                *d += sx[j];
            }
            pv.r_own
                .block(k, node)
                .matvec_add(u_own.level(k).node(node), dst);
            for (j, d) in dst.iter_mut().enumerate() {
                *d += half * (va[j] + vb[j]);
            }
            pv.r_lin_own.block(k, node).add_to(dst);
        }
    }
    Ok(out)
}

/// Both stationarity expressions at the control pair: one forward solve
/// shared by the two adjoint solves.
pub fn nash_stationarity<T: Scalar>(
    game: &GameSpec<T>,
    u1: &AdaptedProcess<T>,
    u2: &AdaptedProcess<T>,
) -> Result<(AdaptedProcess<T>, AdaptedProcess<T>)> {
    let x = game_forward(game, u1, u2)?;
    let g1 = player_stationarity(game, 0, &x, u1, u2)?;
    let g2 = player_stationarity(game, 1, &x, u1, u2)?;
    Ok((g1, g2))
}

/// Freezes the other player's control and returns player `i`'s standalone
/// problem: input maps `B_i, D_i`, weights `(Q^i, S^i_i, R^i_{ii}, G^i)`,
/// drift `b + B_o u_o`, diffusion `sigma + D_o u_o`, and linear weights
/// absorbing the couplings: `q^i + (S^i_o)^T u_o` and
/// `r^i_i + 1/2 (R^i_{io} + (R^i_{oi})^T) u_o`. Player `i`'s cost in the
/// embedded problem differs
/// from the game cost only by a constant in the own control, so best
/// responses and convexity transfer exactly.
pub fn embed_player_problem<T: Scalar>(
    game: &GameSpec<T>,
    i: usize,
    u_other: &AdaptedProcess<T>,
) -> Result<LqProblemSpec<T>> {
    assert!(i < 2, "player index must be 0 or 1");
    game.check_control(1 - i, u_other, "embedding, frozen control")?;
    let p = &game.players[i];
    let pv = view(game, i);
    let n = game.state_dim();
    let m = game.control_dim(i);
    let first = game.init_level;
    let last = game.last_running_level();
    let half = T::half();

    let offset = |table: &CoeffTable<T>, map: &CoeffTable<T>| {
        AdaptedProcess::from_fn(first, last, n, 1, |k, node, out: &mut [T]| {
            table.block(k, node).add_to(out);
            map.block(k, node)
                .matvec_add(u_other.level(k).node(node), out);
        })
    };
    let drift = CoeffTable::PerNode(offset(&game.dynamics.drift, pv.b_other));
    let diffusion = CoeffTable::PerNode(offset(&game.dynamics.diffusion, pv.d_other));

    let q_lin = CoeffTable::PerNode(AdaptedProcess::from_fn(
        first,
        last,
        n,
        1,
        |k, node, out: &mut [T]| {
            p.q_lin.block(k, node).add_to(out);
            pv.s_other
                .block(k, node)
                .tr_matvec_add(u_other.level(k).node(node), out);
        },
    ));
    let mut va = vec![T::zero(); m];
    let mut vb = vec![T::zero(); m];
    let r_lin = CoeffTable::PerNode(AdaptedProcess::from_fn(
        first,
        last,
        m,
        1,
        |k, node, out: &mut [T]| {
            pv.r_lin_own.block(k, node).add_to(out);
            clear(&mut va);
            pv.r_own_other
                .block(k, node)
                .matvec_add(u_other.level(k).node(node), &mut va);
            clear(&mut vb);
            pv.r_other_own
                .block(k, node)
                .tr_matvec_add(u_other.level(k).node(node), &mut vb);
            for (o, (a, b)) in out.iter_mut().zip(va.iter().zip(vb.iter())) {
                *o += half * (*a + *b);
            }
        },
    ));

    let coeffs = CoefficientSet {
        a1: game.dynamics.a1.clone(),
        b_ctrl: pv.b.clone(),
        c: game.dynamics.c.clone(),
        d_ctrl: pv.d.clone(),
        drift,
        diffusion,
    };
    let weights = WeightSet {
        q: p.q.clone(),
        r: pv.r_own.clone(),
        s: pv.s_own.clone(),
        g: p.g.clone(),
        q_lin,
        r_lin,
        g_lin: p.g_lin.clone(),
    };
    let mut options = game.options.clone();
    options.s_factor = 2;
    LqProblemSpec::new(
        game.generator.clone(),
        coeffs,
        weights,
        game.tree.clone(),
        game.init_level,
        game.eta.clone(),
        options,
    )
}

/// Convexity of player `i`'s homogeneous cost in the own control: the
/// finiteness check of the embedded problem with everything affine removed.
/// Nonnegative spectrum is exactly the player's half of the equilibrium
/// sufficiency condition.
pub fn check_convexity_homogeneous<T: Scalar>(
    game: &GameSpec<T>,
    i: usize,
) -> Result<FinitenessReport<T>> {
    assert!(i < 2, "player index must be 0 or 1");
    let frozen = game.zero_control(1 - i);
    let embedded = embed_player_problem(game, i, &frozen)?;
    lq::check_finiteness(&embedded.homogenized())
}

/// Stationarity-residual threshold below which a candidate with both
/// convexity flags is declared certified.
pub fn nash_residual_tolerance<T: Scalar>() -> T {
    T::from_f64(1e-8)
}

/// Distance threshold for the best-response re-solve in [`verify_nash`].
pub fn best_response_tolerance<T: Scalar>() -> T {
    T::from_f64(1e-7)
}

/// Largest cost decrease a unilateral deviation may exhibit in
/// [`verify_nash`] before the check fails.
pub fn deviation_tolerance<T: Scalar>() -> T {
    T::from_f64(1e-9)
}

/// A candidate open-loop Nash equilibrium with its certification data.
#[derive(Debug, Clone)]
pub struct NashCandidate<T> {
    pub u1: AdaptedProcess<T>,
    pub u2: AdaptedProcess<T>,
    /// Stationarity norms at the returned pair, one per player.
    pub residuals: [T; 2],
    /// Per-player convexity verdicts; `false` when the check was skipped
    /// (least-squares mode) or failed.
    pub convex: [bool; 2],
    /// Smallest Hessian eigenvalues from the convexity checks (`None` when
    /// skipped).
    pub min_eigs: [Option<T>; 2],
    /// Both convexity flags hold and both residuals meet
    /// [`nash_residual_tolerance`].
    pub certified: bool,
    /// Operator applications consumed by the joint Krylov solve.
    pub iterations: usize,
    /// Final relative residual of the joint linear solve.
    pub rel_residual: T,
    /// The joint operator probed symmetric, so conjugate gradients ran
    /// instead of a general Krylov method.
    pub symmetric_system: bool,
    /// A minimal-norm least-squares path was taken.
    pub least_squares: bool,
}

/// Deterministic probe entry depending only on the seed and the position,
/// never on block sizes, so probe sets built per block are closed under
/// player relabeling.
fn probe_vector<T: Scalar>(seed_lo: usize, seed_hi: usize, lo: usize, hi: usize) -> Vec<T> {
    let mut v = Vec::with_capacity(lo + hi);
    push_probe_block(seed_lo, lo, &mut v);
    push_probe_block(seed_hi, hi, &mut v);
    v
}

fn push_probe_block<T: Scalar>(seed: usize, len: usize, out: &mut Vec<T>) {
    for t in 0..len {
        let angle = 0.7368 * seed as f64 + 0.4711 * (t + 1) as f64;
        out.push(T::from_f64(angle.sin() + 0.1));
    }
}

/// Solves the joint stationarity system `(g_1, g_2)(u_1, u_2) = 0` for an
/// open-loop Nash candidate.
///
/// Unless least-squares mode is requested, both players' homogeneous-cost
/// convexity checks run first; a failed check does not abort the solve but
/// leaves the candidate non-certified. The affine stationarity map is split
/// into its exact linear part (the homogeneous game) and the constant
/// `(g_1, g_2)(0, 0)`; a deterministic, relabeling-closed probe then decides
/// between conjugate gradients (symmetric joint operator) and a general
/// Krylov method. Nonconvergence surfaces as a no-equilibrium error carrying
/// the best iterate.
pub fn solve_nash<T: Scalar>(game: &GameSpec<T>) -> Result<NashCandidate<T>> {
    let first = game.init_level;
    let last = game.last_running_level();
    let (m1, m2) = (game.control_dim(0), game.control_dim(1));
    let flat1 = game.control_flat_dim(0);
    let flat2 = game.control_flat_dim(1);
    let dim = flat1 + flat2;

    let mut convex = [false; 2];
    let mut min_eigs = [None, None];
    if !game.options.least_squares {
        for i in 0..2 {
            let report = check_convexity_homogeneous(game, i)?;
            convex[i] = report.nonneg;
            min_eigs[i] = Some(report.min_eig);
        }
    }

    let (c1, c2) = nash_stationarity(game, &game.zero_control(0), &game.zero_control(1))?;
    let mut rhs = c1.to_flat();
    rhs.extend(c2.to_flat());
    for v in rhs.iter_mut() {
        *v = -*v;
    }

    let mut weights = pair_weight_vector(&game.tree, first, last, m1);
    weights.extend(pair_weight_vector(&game.tree, first, last, m2));
    let pairing = Pairing::split(&weights, flat1);

    let hom = game.homogeneous();
    let mut apply = |w: &[T]| -> Result<Vec<T>> {
        let u1 = AdaptedProcess::from_flat(first, last, m1, 1, &w[..flat1])?;
        let u2 = AdaptedProcess::from_flat(first, last, m2, 1, &w[flat1..])?;
        let (h1, h2) = nash_stationarity(&hom, &u1, &u2)?;
        let mut out = h1.to_flat();
        out.extend(h2.to_flat());
        Ok(out)
    };

    let mut max_gap = T::zero();
    let mut scale = T::one();
    for (a, b) in [(1usize, 2usize), (1, 3), (2, 3)] {
        let p = probe_vector::<T>(a, b, flat1, flat2);
        let q = probe_vector::<T>(b, a, flat1, flat2);
        let ap = apply(&p)?;
        let aq = apply(&q)?;
        let left = pairing.dot(&ap, &q);
        let right = pairing.dot(&p, &aq);
        let gap = (left - right).abs();
        if gap > max_gap {
            max_gap = gap;
        }
        let mag = left.abs().max(right.abs());
        if mag > scale {
            scale = mag;
        }
    }
    let symmetric = max_gap <= T::from_f64(1e-12) * scale;

    let tol = game.options.cg_tol;
    let max_iter = (game.options.cg_max_iter_factor * dim).max(8);
    let solve = if game.options.least_squares {
        if symmetric {
            normal_equations(&mut apply, &rhs, &pairing, tol, max_iter)
        } else {
            bicgstab(&mut apply, &rhs, &pairing, tol, max_iter)
        }
    } else if symmetric {
        match conjugate_gradient(&mut apply, None, &rhs, &pairing, tol, max_iter) {
            Err(Error::Indefinite { .. }) => bicgstab(&mut apply, &rhs, &pairing, tol, max_iter),
            other => other,
        }
    } else {
        bicgstab(&mut apply, &rhs, &pairing, tol, max_iter)
    };
    let (w, report) = solve.map_err(|e| match e {
        Error::NoConvergence {
            iterations,
            residual,
            best,
        } => Error::NoEquilibrium {
            detail: format!(
                "the joint stationarity solve stalled after {iterations} iterations at \
                 relative residual {residual:e}"
            ),
            best_u1: best[..flat1].to_vec(),
            best_u2: best[flat1..].to_vec(),
        },
        other => other,
    })?;
    if !game.options.least_squares && report.least_squares_fallback && report.rel_residual > tol {
        // The stalled solve ended on the minimal-norm least-squares iterate
        // of an inconsistent system: no control pair is stationary.
        return Err(Error::NoEquilibrium {
            detail: format!(
                "the joint stationarity system is inconsistent; its least-squares iterate \
                 leaves relative residual {:e}",
                report.rel_residual.to_f64()
            ),
            best_u1: w[..flat1].iter().map(|v| (*v).to_f64()).collect(),
            best_u2: w[flat1..].iter().map(|v| (*v).to_f64()).collect(),
        });
    }

    let u1 = AdaptedProcess::from_flat(first, last, m1, 1, &w[..flat1])?;
    let u2 = AdaptedProcess::from_flat(first, last, m2, 1, &w[flat1..])?;
    let (g1, g2) = nash_stationarity(game, &u1, &u2)?;
    let residuals = [process_norm(&g1, &game.tree), process_norm(&g2, &game.tree)];
    let rtol = nash_residual_tolerance::<T>();
    let certified = convex[0] && convex[1] && residuals[0] <= rtol && residuals[1] <= rtol;
    Ok(NashCandidate {
        u1,
        u2,
        residuals,
        convex,
        min_eigs,
        certified,
        iterations: report.iterations,
        rel_residual: report.rel_residual,
        symmetric_system: symmetric,
        least_squares: report.least_squares_fallback || game.options.least_squares,
    })
}

/// Outcome of [`verify_nash`]: report-only.
#[derive(Debug, Clone)]
pub struct NashVerification<T> {
    /// Norm of (re-solved best response − candidate control), per player.
    pub best_response_distance: [T; 2],
    /// Distance within [`best_response_tolerance`], per player.
    pub best_response_ok: [bool; 2],
    /// Largest cost decrease observed under any unilateral deviation,
    /// floored at zero, per player.
    pub worst_deviation_decrease: [T; 2],
    /// Unilateral deviations drawn per player.
    pub deviations: usize,
    /// Both best-response checks and all deviation checks passed.
    pub passed: bool,
}

/// Checks the Nash property of a candidate directly against its definition:
/// re-solves each player's embedded problem with the other's control frozen
/// and compares to the candidate, then draws seeded random unilateral
/// deviations (amplitudes cycling over four decades) and confirms no
/// deviation lowers the deviating player's cost beyond
/// [`deviation_tolerance`].
pub fn verify_nash<T: Scalar>(
    game: &GameSpec<T>,
    candidate: &NashCandidate<T>,
    deviations: usize,
    seed: u64,
) -> Result<NashVerification<T>> {
    let mut distance = [T::zero(); 2];
    let mut ok = [false; 2];
    for i in 0..2 {
        let own = if i == 0 { &candidate.u1 } else { &candidate.u2 };
        let other = if i == 0 { &candidate.u2 } else { &candidate.u1 };
        let embedded = embed_player_problem(game, i, other)?;
        let (mut best, _) = lq::solve_open_loop(&embedded)?;
        best.add_scaled(own, -T::one());
        distance[i] = process_norm(&best, &game.tree);
        ok[i] = distance[i] <= best_response_tolerance::<T>();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amplitudes = [1.0, 0.1, 0.01, 0.001];
    let mut worst = [T::zero(); 2];
    for (i, worst_i) in worst.iter_mut().enumerate() {
        let base = game_cost(game, i, &candidate.u1, &candidate.u2)?;
        let m = game.control_dim(i);
        for d in 0..deviations {
            let amp = amplitudes[d % amplitudes.len()];
            let bump = AdaptedProcess::from_fn(
                game.init_level,
                game.last_running_level(),
                m,
                1,
                |_, _, out: &mut [T]| {
                    for e in out.iter_mut() {
                        *e = T::from_f64(amp * rng.random_range(-1.0..1.0));
                    }
                },
            );
            let cost = if i == 0 {
                let mut u1 = candidate.u1.clone();
                u1.add_scaled(&bump, T::one());
                game_cost(game, 0, &u1, &candidate.u2)?
            } else {
                let mut u2 = candidate.u2.clone();
                u2.add_scaled(&bump, T::one());
                game_cost(game, 1, &candidate.u1, &u2)?
            };
            let decrease = base - cost;
            if decrease > *worst_i {
                *worst_i = decrease;
            }
        }
    }
    let dtol = deviation_tolerance::<T>();
    let passed = ok[0] && ok[1] && worst[0] <= dtol && worst[1] <= dtol;
    Ok(NashVerification {
        best_response_distance: distance,
        best_response_ok: ok,
        worst_deviation_decrease: worst,
        deviations,
        passed,
    })
}

/// Outcome of [`validate_game_conditions`]: report-only, nothing repaired.
#[derive(Debug, Clone, PartialEq)]
pub struct GameValidationReport<T> {
    /// Asymmetric blocks among either player's `Q`, `R` diagonal blocks, or
    /// `G`, with fields like `"player2.r11"`.
    pub symmetry_violations: Vec<SymmetryViolation<T>>,
    /// Smallest eigenvalue over running blocks of each player's `Q`.
    pub q_min_eigs: [T; 2],
    /// Smallest eigenvalue over running blocks of each player's own-control
    /// energy (`R^1_{11}`, `R^2_{22}`): the coercivity margins.
    pub r_own_min_eigs: [T; 2],
    /// Smallest eigenvalue over leaf blocks of each player's `G`.
    pub g_min_eigs: [T; 2],
    /// Largest absolute entry over both players' cross-control weights.
    pub cross_max_abs: T,
    /// Largest absolute entry over both players' state-control weights.
    pub s_max_abs: T,
    /// Standard game: `Q^i >= 0`, own `R` blocks uniformly positive,
    /// `G^i >= 0`, and every `S` and cross-control weight zero.
    pub standard: bool,
}

/// Inspects the game weights: symmetry of every `Q^i`/`R^i_jj`/`G^i` block
/// (tolerance as in the single-player report) plus the standard-game
/// classification. Report-only.
pub fn validate_game_conditions<T: Scalar>(game: &GameSpec<T>) -> GameValidationReport<T> {
    let first = game.init_level;
    let last = game.last_running_level();
    let leaf = game.tree.depth();
    let mut violations = Vec::new();
    let mut q_min = [T::zero(); 2];
    let mut r_own_min = [T::zero(); 2];
    let mut g_min = [T::zero(); 2];
    let mut cross_max = T::zero();
    let mut s_max = T::zero();

    for (i, p) in game.players.iter().enumerate() {
        let (q_name, r11_name, r22_name, g_name) = if i == 0 {
            ("player1.q", "player1.r11", "player1.r22", "player1.g")
        } else {
            ("player2.q", "player2.r11", "player2.r22", "player2.g")
        };
        scan_sym_blocks(
            q_name,
            &mut coeff_blocks(&p.q, first, last),
            &mut violations,
            &mut q_min[i],
        );
        let (own, own_name, other, other_name) = if i == 0 {
            (&p.r11, r11_name, &p.r22, r22_name)
        } else {
            (&p.r22, r22_name, &p.r11, r11_name)
        };
        scan_sym_blocks(
            own_name,
            &mut coeff_blocks(own, first, last),
            &mut violations,
            &mut r_own_min[i],
        );
        let mut other_min = T::zero();
        scan_sym_blocks(
            other_name,
            &mut coeff_blocks(other, first, last),
            &mut violations,
            &mut other_min,
        );
        scan_sym_blocks(
            g_name,
            &mut terminal_blocks(&p.g, leaf),
            &mut violations,
            &mut g_min[i],
        );
        cross_max = cross_max.max(p.r12.max_abs()).max(p.r21.max_abs());
        s_max = s_max.max(p.s1.max_abs()).max(p.s2.max_abs());
    }

    let eig_tol = T::from_f64(1e-12);
    let standard = violations.is_empty()
        && q_min.iter().all(|&e| e >= -eig_tol)
        && g_min.iter().all(|&e| e >= -eig_tol)
        && r_own_min.iter().all(|&e| e > T::zero())
        && cross_max == T::zero()
        && s_max == T::zero();

    GameValidationReport {
        symmetry_violations: violations,
        q_min_eigs: q_min,
        r_own_min_eigs: r_own_min,
        g_min_eigs: g_min,
        cross_max_abs: cross_max,
        s_max_abs: s_max,
        standard,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use crate::lq::{cost as lq_cost, frechet_gradient, solve_open_loop};
    use crate::tree::TreeSpace;

    fn tree(steps: usize) -> TreeSpace<f64> {
        TreeSpace::<f64>::build(0.0, 1.0, steps).unwrap()
    }

    fn cmat(rows: &[&[f64]]) -> CoeffTable<f64> {
        let owned: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        CoeffTable::Constant(Mat::from_rows(&owned).unwrap())
    }

    fn tmat(rows: &[&[f64]]) -> TerminalTable<f64> {
        let owned: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        TerminalTable::Constant(Mat::from_rows(&owned).unwrap())
    }

    fn wiggle(first: usize, last: usize, rows: usize, seed: f64) -> AdaptedProcess<f64> {
        AdaptedProcess::from_fn(first, last, rows, 1, |k, n, out| {
            for (j, v) in out.iter_mut().enumerate() {
                *v = (seed + 1.3 * k as f64 + 0.7 * n as f64 + 0.41 * j as f64).sin() * 0.5;
            }
        })
    }

    /// Convex, fully coupled game with mixed control dimensions
    /// (`m1 = 1`, `m2 = 2`): every table nonzero.
    fn coupled_game(steps: usize) -> GameSpec<f64> {
        let generator = SpectralOperator::new(vec![-1.0, -2.2]).unwrap();
        let dynamics = GameDynamics {
            a1: cmat(&[&[0.05, -0.02], &[0.03, 0.04]]),
            c: cmat(&[&[0.3, 0.1], &[0.0, 0.25]]),
            drift: cmat(&[&[0.02], &[-0.03]]),
            diffusion: cmat(&[&[0.01], &[0.02]]),
            b1: cmat(&[&[0.9], &[0.2]]),
            d1: cmat(&[&[0.1], &[-0.05]]),
            b2: cmat(&[&[0.3, -0.1], &[0.8, 0.4]]),
            d2: cmat(&[&[0.05, 0.02], &[0.0, 0.06]]),
        };
        let player1 = PlayerWeights {
            q: cmat(&[&[0.8, 0.1], &[0.1, 0.5]]),
            s1: cmat(&[&[0.05, -0.03]]),
            s2: cmat(&[&[0.02, 0.01], &[-0.01, 0.03]]),
            r11: cmat(&[&[1.4]]),
            r12: cmat(&[&[0.05, -0.02]]),
            r21: cmat(&[&[0.04], &[0.01]]),
            r22: cmat(&[&[1.1, 0.1], &[0.1, 0.9]]),
            g: tmat(&[&[0.6, 0.05], &[0.05, 0.4]]),
            q_lin: cmat(&[&[0.03], &[-0.02]]),
            r1_lin: cmat(&[&[0.01]]),
            r2_lin: cmat(&[&[-0.02], &[0.01]]),
            g_lin: tmat(&[&[0.02], &[0.01]]),
        };
        let player2 = PlayerWeights {
            q: cmat(&[&[0.6, -0.05], &[-0.05, 0.7]]),
            s1: cmat(&[&[-0.02, 0.04]]),
            s2: cmat(&[&[0.03, -0.01], &[0.02, 0.02]]),
            r11: cmat(&[&[1.3]]),
            r12: cmat(&[&[-0.03, 0.02]]),
            r21: cmat(&[&[0.02], &[-0.04]]),
            r22: cmat(&[&[1.2, -0.05], &[-0.05, 1.0]]),
            g: tmat(&[&[0.45, -0.04], &[-0.04, 0.55]]),
            q_lin: cmat(&[&[-0.01], &[0.02]]),
            r1_lin: cmat(&[&[-0.015]]),
            r2_lin: cmat(&[&[0.02], &[-0.01]]),
            g_lin: tmat(&[&[-0.01], &[0.02]]),
        };
        GameSpec::new(
            generator,
            dynamics,
            [player1, player2],
            tree(steps),
            0,
            vec![0.5, -0.3],
            LqOptions::default(),
        )
        .unwrap()
    }

    /// Game whose players are indistinguishable under relabeling:
    /// `swapped()` returns the identical data.
    fn symmetric_game(steps: usize) -> GameSpec<f64> {
        let generator = SpectralOperator::new(vec![-1.0, -1.8]).unwrap();
        let mut dynamics = GameDynamics::zero(2, 1, 1);
        dynamics.a1 = cmat(&[&[0.02, 0.01], &[0.01, 0.03]]);
        dynamics.c = cmat(&[&[0.2, 0.05], &[0.05, 0.15]]);
        dynamics.drift = cmat(&[&[0.03], &[-0.02]]);
        dynamics.diffusion = cmat(&[&[0.015], &[0.01]]);
        dynamics.b1 = cmat(&[&[0.7], &[0.3]]);
        dynamics.d1 = cmat(&[&[0.1], &[0.05]]);
        dynamics.b2 = dynamics.b1.clone();
        dynamics.d2 = dynamics.d1.clone();
        let player = PlayerWeights {
            q: cmat(&[&[0.7, 0.08], &[0.08, 0.6]]),
            s1: cmat(&[&[0.04, -0.02]]),
            s2: cmat(&[&[0.04, -0.02]]),
            r11: cmat(&[&[1.5]]),
            r12: cmat(&[&[0.1]]),
            r21: cmat(&[&[0.1]]),
            r22: cmat(&[&[1.5]]),
            g: tmat(&[&[0.5, 0.03], &[0.03, 0.45]]),
            q_lin: cmat(&[&[0.02], &[-0.01]]),
            r1_lin: cmat(&[&[0.02]]),
            r2_lin: cmat(&[&[0.02]]),
            g_lin: tmat(&[&[0.01], &[0.015]]),
        };
        GameSpec::new(
            generator,
            dynamics,
            [player.clone(), player],
            tree(steps),
            0,
            vec![0.4, -0.25],
            LqOptions::default(),
        )
        .unwrap()
    }

    /// Mode-diagonal game where player 1 only sees mode 1 and player 2 only
    /// sees mode 2: the joint system is exactly block-diagonal.
    fn decoupled_game(steps: usize) -> GameSpec<f64> {
        let generator = SpectralOperator::new(vec![-1.0, -2.0]).unwrap();
        let mut dynamics = GameDynamics::zero(2, 1, 1);
        dynamics.c = cmat(&[&[0.3, 0.0], &[0.0, 0.2]]);
        dynamics.drift = cmat(&[&[0.02], &[-0.01]]);
        dynamics.diffusion = cmat(&[&[0.01], &[0.03]]);
        dynamics.b1 = cmat(&[&[1.0], &[0.0]]);
        dynamics.d1 = cmat(&[&[0.2], &[0.0]]);
        dynamics.b2 = cmat(&[&[0.0], &[1.0]]);
        dynamics.d2 = cmat(&[&[0.0], &[0.3]]);
        let mut player1 = PlayerWeights::zero(2, 1, 1);
        player1.q = cmat(&[&[0.7, 0.0], &[0.0, 0.0]]);
        player1.g = tmat(&[&[0.5, 0.0], &[0.0, 0.0]]);
        player1.s1 = cmat(&[&[0.03, 0.0]]);
        player1.r11 = cmat(&[&[1.2]]);
        player1.r22 = cmat(&[&[1.0]]);
        player1.q_lin = cmat(&[&[0.02], &[0.0]]);
        player1.r1_lin = cmat(&[&[0.01]]);
        player1.g_lin = tmat(&[&[0.015], &[0.0]]);
        let mut player2 = PlayerWeights::zero(2, 1, 1);
        player2.q = cmat(&[&[0.0, 0.0], &[0.0, 0.6]]);
        player2.g = tmat(&[&[0.0, 0.0], &[0.0, 0.45]]);
        player2.s2 = cmat(&[&[0.0, 0.04]]);
        player2.r11 = cmat(&[&[1.0]]);
        player2.r22 = cmat(&[&[1.1]]);
        player2.q_lin = cmat(&[&[0.0], &[-0.03]]);
        player2.r2_lin = cmat(&[&[-0.02]]);
        player2.g_lin = tmat(&[&[0.0], &[0.02]]);
        let options = LqOptions {
            cg_tol: 1e-12,
            ..LqOptions::default()
        };
        GameSpec::new(
            generator,
            dynamics,
            [player1, player2],
            tree(steps),
            0,
            vec![0.4, -0.2],
            options,
        )
        .unwrap()
    }

    #[test]
    fn zero_data_game_has_the_zero_equilibrium() {
        let generator = SpectralOperator::new(vec![-1.0, -2.0]).unwrap();
        let mut dynamics = GameDynamics::zero(2, 1, 1);
        dynamics.b1 = cmat(&[&[1.0], &[0.0]]);
        dynamics.b2 = cmat(&[&[0.0], &[1.0]]);
        let players = [
            PlayerWeights::default_for(2, 1, 1),
            PlayerWeights::default_for(2, 1, 1),
        ];
        let game = GameSpec::new(
            generator,
            dynamics,
            players,
            tree(3),
            0,
            vec![0.0, 0.0],
            LqOptions::default(),
        )
        .unwrap();
        let candidate = solve_nash(&game).unwrap();
        assert_eq!(candidate.u1.max_abs(), 0.0);
        assert_eq!(candidate.u2.max_abs(), 0.0);
        assert!(candidate.certified);
        assert_eq!(candidate.iterations, 0);
    }

    #[test]
    fn coupled_game_certifies_and_survives_verification() {
        let game = coupled_game(4);
        let candidate = solve_nash(&game).unwrap();
        assert!(candidate.convex[0] && candidate.convex[1]);
        assert!(
            candidate.residuals[0] <= 1e-8,
            "residual 1 {:e}",
            candidate.residuals[0]
        );
        assert!(
            candidate.residuals[1] <= 1e-8,
            "residual 2 {:e}",
            candidate.residuals[1]
        );
        assert!(candidate.certified);
        assert!(
            !candidate.symmetric_system,
            "distinct players should probe nonsymmetric"
        );
        let report = verify_nash(&game, &candidate, 24, 7).unwrap();
        assert!(
            report.best_response_ok[0] && report.best_response_ok[1],
            "best-response distances {:e}, {:e}",
            report.best_response_distance[0],
            report.best_response_distance[1]
        );
        assert!(report.worst_deviation_decrease[0] <= 1e-9);
        assert!(report.worst_deviation_decrease[1] <= 1e-9);
        assert!(report.passed);
    }

    #[test]
    fn decoupled_game_matches_independent_single_player_solves() {
        let game = decoupled_game(4);
        let candidate = solve_nash(&game).unwrap();
        assert!(candidate.certified);
        assert!(
            candidate.symmetric_system,
            "block-diagonal system should probe symmetric"
        );
        for i in 0..2 {
            let standalone = embed_player_problem(&game, i, &game.zero_control(1 - i)).unwrap();
            let (alone, _) = solve_open_loop(&standalone).unwrap();
            let mut diff = alone;
            diff.add_scaled(if i == 0 { &candidate.u1 } else { &candidate.u2 }, -1.0);
            let gap = process_norm(&diff, &game.tree);
            assert!(gap <= 1e-10, "player {} gap {:e}", i + 1, gap);
        }
    }

    #[test]
    fn identical_players_receive_bitwise_identical_controls() {
        let game = symmetric_game(4);
        assert_eq!(game.swapped(), game);
        let candidate = solve_nash(&game).unwrap();
        assert!(candidate.certified);
        let a = candidate.u1.to_flat();
        let b = candidate.u2.to_flat();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn relabeling_the_players_swaps_the_equilibrium_bitwise() {
        let game = coupled_game(4);
        let swapped = game.swapped();
        assert_eq!(swapped.swapped(), game);
        let original = solve_nash(&game).unwrap();
        let mirrored = solve_nash(&swapped).unwrap();
        assert_eq!(original.symmetric_system, mirrored.symmetric_system);
        let (a1, a2) = (original.u1.to_flat(), original.u2.to_flat());
        let (b1, b2) = (mirrored.u1.to_flat(), mirrored.u2.to_flat());
        assert_eq!(a1.len(), b2.len());
        assert_eq!(a2.len(), b1.len());
        for (x, y) in a1.iter().zip(b2.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in a2.iter().zip(b1.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(
            original.residuals[0].to_bits(),
            mirrored.residuals[1].to_bits()
        );
        assert_eq!(
            original.residuals[1].to_bits(),
            mirrored.residuals[0].to_bits()
        );
    }

    #[test]
    fn embedded_problem_reproduces_game_cost_differences() {
        let game = coupled_game(3);
        for i in 0..2 {
            let m_own = game.control_dim(i);
            let m_other = game.control_dim(1 - i);
            let u_other = wiggle(0, game.last_running_level(), m_other, 0.9);
            let u_a = wiggle(0, game.last_running_level(), m_own, 0.3);
            let u_b = wiggle(0, game.last_running_level(), m_own, 1.7);
            let embedded = embed_player_problem(&game, i, &u_other).unwrap();
            let lhs = lq_cost(&embedded, &u_a).unwrap() - lq_cost(&embedded, &u_b).unwrap();
            let (cost_a, cost_b) = if i == 0 {
                (
                    game_cost(&game, 0, &u_a, &u_other).unwrap(),
                    game_cost(&game, 0, &u_b, &u_other).unwrap(),
                )
            } else {
                (
                    game_cost(&game, 1, &u_other, &u_a).unwrap(),
                    game_cost(&game, 1, &u_other, &u_b).unwrap(),
                )
            };
            let rhs = cost_a - cost_b;
            assert!(
                (lhs - rhs).abs() <= 1e-13 * rhs.abs().max(1.0),
                "player {}: embedded diff {lhs:e} vs game diff {rhs:e}",
                i + 1
            );
        }
    }

    #[test]
    fn stationarity_agrees_with_the_embedded_gradient() {
        let game = coupled_game(3);
        let u1 = wiggle(0, game.last_running_level(), 1, 0.2);
        let u2 = wiggle(0, game.last_running_level(), 2, 1.1);
        let (g1, g2) = nash_stationarity(&game, &u1, &u2).unwrap();
        for (i, own, other, g) in [(0, &u1, &u2, &g1), (1, &u2, &u1, &g2)] {
            let embedded = embed_player_problem(&game, i, other).unwrap();
            let mut grad = frechet_gradient(&embedded, own).unwrap();
            grad.add_scaled(g, -1.0);
            let gap = process_norm(&grad, &game.tree);
            assert!(gap <= 1e-12, "player {}: gap {:e}", i + 1, gap);
        }
    }

    #[test]
    fn convexity_check_classifies_the_canonical_examples() {
        let game = coupled_game(3);
        for i in 0..2 {
            let report = check_convexity_homogeneous(&game, i).unwrap();
            assert!(report.nonneg, "player {} should be convex", i + 1);
            assert!(
                report.min_eig > 0.5,
                "coercive margin, got {:e}",
                report.min_eig
            );
        }

        let mut concave = coupled_game(3);
        concave.players[0].r11 = cmat(&[&[-1.0]]);
        let report = check_convexity_homogeneous(&concave, 0).unwrap();
        assert!(!report.nonneg);
        assert!(report.min_eig < -0.5);

        let generator = SpectralOperator::new(vec![-1.0]).unwrap();
        let mut dynamics = GameDynamics::zero(1, 1, 1);
        dynamics.b1 = cmat(&[&[1.0]]);
        dynamics.b2 = cmat(&[&[1.0]]);
        let zero_weights = GameSpec::new(
            generator,
            dynamics,
            [PlayerWeights::zero(1, 1, 1), PlayerWeights::zero(1, 1, 1)],
            tree(2),
            0,
            vec![0.0],
            LqOptions::default(),
        )
        .unwrap();
        let report = check_convexity_homogeneous(&zero_weights, 0).unwrap();
        assert!(report.nonneg);
        assert!(report.min_eig.abs() <= 1e-12);
    }

    #[test]
    fn nonconvex_game_still_solves_but_is_not_certified() {
        let mut game = coupled_game(3);
        game.players[0].r11 = cmat(&[&[-1.5]]);
        let candidate = solve_nash(&game).unwrap();
        assert!(!candidate.convex[0]);
        assert!(candidate.convex[1]);
        assert!(!candidate.certified);
        assert!(
            candidate.residuals[0] <= 1e-8,
            "stationary point still found"
        );
        assert!(candidate.residuals[1] <= 1e-8);
    }

    #[test]
    fn unsolvable_degenerate_game_reports_no_equilibrium_with_best_iterate() {
        // Player 1 has no influence on anything (zero maps, zero weights) but
        // carries a constant nonzero stationarity offset: g_1 = r1_lin != 0
        // for every control, so no equilibrium exists.
        let generator = SpectralOperator::new(vec![-1.0]).unwrap();
        let mut dynamics = GameDynamics::zero(1, 1, 1);
        dynamics.b2 = cmat(&[&[1.0]]);
        let mut player1 = PlayerWeights::zero(1, 1, 1);
        player1.r1_lin = cmat(&[&[0.4]]);
        let mut player2 = PlayerWeights::zero(1, 1, 1);
        player2.r22 = cmat(&[&[1.0]]);
        let game = GameSpec::new(
            generator,
            dynamics,
            [player1, player2],
            tree(2),
            0,
            vec![0.3],
            LqOptions::default(),
        )
        .unwrap();
        let err = solve_nash(&game).unwrap_err();
        match err {
            Error::NoEquilibrium {
                best_u1, best_u2, ..
            } => {
                assert_eq!(best_u1.len(), game.control_flat_dim(0));
                assert_eq!(best_u2.len(), game.control_flat_dim(1));
            }
            other => panic!("expected a no-equilibrium error, got {other}"),
        }
    }

    #[test]
    fn validation_flags_asymmetry_and_recognises_standard_games() {
        let mut game = coupled_game(3);
        game.players[1].r22 = cmat(&[&[1.0, 0.3], &[0.1, 1.0]]);
        let report = validate_game_conditions(&game);
        assert!(report
            .symmetry_violations
            .iter()
            .any(|v| v.field == "player2.r22"));
        assert!(!report.standard, "cross and S weights are nonzero");

        let generator = SpectralOperator::new(vec![-1.0, -2.0]).unwrap();
        let mut dynamics = GameDynamics::zero(2, 1, 1);
        dynamics.b1 = cmat(&[&[1.0], &[0.0]]);
        dynamics.b2 = cmat(&[&[0.0], &[1.0]]);
        let mut player = PlayerWeights::default_for(2, 1, 1);
        player.q = cmat(&[&[0.5, 0.0], &[0.0, 0.4]]);
        player.g = tmat(&[&[0.3, 0.0], &[0.0, 0.2]]);
        let standard_game = GameSpec::new(
            generator,
            dynamics,
            [player.clone(), player],
            tree(2),
            0,
            vec![0.1, -0.1],
            LqOptions::default(),
        )
        .unwrap();
        let report = validate_game_conditions(&standard_game);
        assert!(report.symmetry_violations.is_empty());
        assert!(report.standard);
        assert!(report.r_own_min_eigs.iter().all(|&e| e >= 1.0 - 1e-12));
    }
}
