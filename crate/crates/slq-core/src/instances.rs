//! Seeded random problem and game instances for tests and cross-checks.
//!
//! Every generator here is a pure function of its seed (one ChaCha stream,
//! fixed sampling order), so a failing case is reproducible from the seed
//! alone. Magnitudes stay moderate — dissipative generators, coefficients
//! well below one, coercive control energies — so the instances sit inside
//! the regime where the solvers are expected to certify, and identity-style
//! tests are not drowned in conditioning noise.

use crate::error::Result;
use crate::game::{GameDynamics, GameSpec, PlayerWeights};
use crate::linalg::Mat;
use crate::model::{
    CoeffTable, CoefficientSet, LqOptions, LqProblemSpec, SpectralOperator, TerminalTable,
    WeightSet,
};
use crate::scalar::Scalar;
use crate::tree::{AdaptedProcess, NodeArray, TreeSpace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Shape and regime of a random single-player instance.
#[derive(Debug, Clone)]
pub struct InstanceParams {
    pub modes: usize,
    pub controls: usize,
    pub steps: usize,
    pub init_level: usize,
    /// Standard form: positive semidefinite `Q`, `G`, zero `S`, and
    /// `R >= coercivity * I`; otherwise indefinite symmetric state weights
    /// and a nonzero cross weight.
    pub standard: bool,
    /// Lower bound added to the control energy's spectrum.
    pub coercivity: f64,
    /// Store `a1` and `q_lin` per level instead of as constants.
    pub level_tables: bool,
}

impl InstanceParams {
    /// Standard-form instance (the convex regime every solver certifies).
    pub fn standard(modes: usize, controls: usize, steps: usize) -> Self {
        InstanceParams {
            modes,
            controls,
            steps,
            init_level: 0,
            standard: true,
            coercivity: 1.0,
            level_tables: false,
        }
    }

    /// General instance: indefinite `Q`, `G`, nonzero `S`, coercive `R`.
    pub fn general(modes: usize, controls: usize, steps: usize) -> Self {
        InstanceParams {
            standard: false,
            ..InstanceParams::standard(modes, controls, steps)
        }
    }
}

fn sample<T: Scalar>(rng: &mut ChaCha8Rng, scale: f64) -> T {
    T::from_f64(scale * rng.random_range(-1.0..1.0))
}

fn sample_in<T: Scalar>(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> T {
    T::from_f64(rng.random_range(lo..hi))
}

fn rand_mat<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat<T> {
    let mut m = Mat::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m.set(i, j, sample(rng, scale));
        }
    }
    m
}

fn rand_sym<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Mat<T> {
    rand_mat(rng, n, n, scale).symmetrized()
}

/// `scale/n * A^T A` for a random square `A`: positive semidefinite, and
/// entrywise symmetric by construction (identical products in identical
/// order on both sides of the diagonal).
fn rand_psd<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Mat<T> {
    let mut a = vec![0.0f64; n * n];
    for v in a.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let factor = scale / n as f64;
    let mut p = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0f64;
            for k in 0..n {
                acc += a[k * n + i] * a[k * n + j];
            }
            p.set(i, j, T::from_f64(factor * acc));
        }
    }
    p
}

fn add_diag<T: Scalar>(mut m: Mat<T>, shift: f64) -> Mat<T> {
    let s = T::from_f64(shift);
    for i in 0..m.rows().min(m.cols()) {
        let v = m.at(i, i) + s;
        m.set(i, i, v);
    }
    m
}

/// Constant table, or a per-level stack `base + wiggle_k` when requested.
fn leveled<T: Scalar>(
    rng: &mut ChaCha8Rng,
    base: Mat<T>,
    levels: usize,
    wiggle: f64,
    per_level: bool,
) -> CoeffTable<T> {
    if !per_level {
        return CoeffTable::Constant(base);
    }
    let (rows, cols) = base.shape();
    let stack = (0..levels)
        .map(|_| base.add(&rand_mat(rng, rows, cols, wiggle)))
        .collect();
    CoeffTable::PerLevel(stack)
}

/// Random single-player problem, deterministic in the seed.
pub fn random_problem<T: Scalar>(seed: u64, params: &InstanceParams) -> Result<LqProblemSpec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.modes;
    let m = params.controls;
    let steps = params.steps;

    let eigenvalues = (0..n)
        .map(|_| T::from_f64(-rng.random_range(0.2..3.0)))
        .collect();
    let generator = SpectralOperator::new(eigenvalues)?;
    let horizon = rng.random_range(0.6..1.4);
    let tree = TreeSpace::build(T::zero(), T::from_f64(horizon), steps)?;

    let a1_base = rand_mat(&mut rng, n, n, 0.15);
    let a1 = leveled(&mut rng, a1_base, steps, 0.03, params.level_tables);
    let coeffs = CoefficientSet {
        a1,
        b_ctrl: CoeffTable::Constant(rand_mat(&mut rng, n, m, 0.8)),
        c: CoeffTable::Constant(rand_mat(&mut rng, n, n, 0.3)),
        d_ctrl: CoeffTable::Constant(rand_mat(&mut rng, n, m, 0.15)),
        drift: CoeffTable::Constant(rand_mat(&mut rng, n, 1, 0.2)),
        diffusion: CoeffTable::Constant(rand_mat(&mut rng, n, 1, 0.2)),
    };

    let (q, g, s) = if params.standard {
        (
            rand_psd(&mut rng, n, 0.8),
            rand_psd(&mut rng, n, 0.6),
            Mat::zeros(m, n),
        )
    } else {
        (
            rand_sym(&mut rng, n, 0.5),
            rand_sym(&mut rng, n, 0.4),
            rand_mat(&mut rng, m, n, 0.1),
        )
    };
    let r = add_diag(rand_psd(&mut rng, m, 0.5), params.coercivity);
    let q_lin_base = rand_mat(&mut rng, n, 1, 0.1);
    let q_lin = leveled(&mut rng, q_lin_base, steps, 0.02, params.level_tables);
    let weights = WeightSet {
        q: CoeffTable::Constant(q),
        r: CoeffTable::Constant(r),
        s: CoeffTable::Constant(s),
        g: TerminalTable::Constant(g),
        q_lin,
        r_lin: CoeffTable::Constant(rand_mat(&mut rng, m, 1, 0.1)),
        g_lin: TerminalTable::Constant(rand_mat(&mut rng, n, 1, 0.1)),
    };

    let eta = (0..n).map(|_| sample(&mut rng, 1.0)).collect();
    LqProblemSpec::new(
        generator,
        coeffs,
        weights,
        tree,
        params.init_level,
        eta,
        LqOptions::default(),
    )
}

/// Random control process shaped for the problem.
pub fn random_control<T: Scalar>(seed: u64, spec: &LqProblemSpec<T>) -> AdaptedProcess<T> {
    random_process(
        seed,
        spec.init_level,
        spec.last_running_level(),
        spec.control_dim(),
    )
}

/// Random `rows x 1` adapted process on the given levels.
pub fn random_process<T: Scalar>(
    seed: u64,
    first: usize,
    last: usize,
    rows: usize,
) -> AdaptedProcess<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AdaptedProcess::from_fn(first, last, rows, 1, |_, _, out| {
        for v in out.iter_mut() {
            *v = sample(&mut rng, 1.0);
        }
    })
}

/// Random `rows x 1` node array at one level.
pub fn random_terminal<T: Scalar>(seed: u64, level: usize, rows: usize) -> NodeArray<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    NodeArray::from_fn(level, rows, 1, |_, out| {
        for v in out.iter_mut() {
            *v = sample(&mut rng, 1.0);
        }
    })
}

/// Shape and coupling strength of a random two-player game.
#[derive(Debug, Clone)]
pub struct GameParams {
    pub modes: usize,
    pub controls: (usize, usize),
    pub steps: usize,
    /// Scale of the state-control and cross-control couplings: small against
    /// the unit own-control coercivity, so both players stay convex.
    pub coupling: f64,
}

impl GameParams {
    pub fn convex(modes: usize, m1: usize, m2: usize, steps: usize) -> Self {
        GameParams {
            modes,
            controls: (m1, m2),
            steps,
            coupling: 0.08,
        }
    }
}

fn random_player<T: Scalar>(
    rng: &mut ChaCha8Rng,
    n: usize,
    m1: usize,
    m2: usize,
    own: usize,
    coupling: f64,
) -> PlayerWeights<T> {
    let (r11_shift, r22_shift) = if own == 0 { (1.0, 0.25) } else { (0.25, 1.0) };
    PlayerWeights {
        q: CoeffTable::Constant(rand_psd(rng, n, 0.7)),
        s1: CoeffTable::Constant(rand_mat(rng, m1, n, coupling)),
        s2: CoeffTable::Constant(rand_mat(rng, m2, n, coupling)),
        r11: CoeffTable::Constant(add_diag(rand_psd(rng, m1, 0.3), r11_shift)),
        r12: CoeffTable::Constant(rand_mat(rng, m1, m2, coupling)),
        r21: CoeffTable::Constant(rand_mat(rng, m2, m1, coupling)),
        r22: CoeffTable::Constant(add_diag(rand_psd(rng, m2, 0.3), r22_shift)),
        g: TerminalTable::Constant(rand_psd(rng, n, 0.5)),
        q_lin: CoeffTable::Constant(rand_mat(rng, n, 1, 0.1)),
        r1_lin: CoeffTable::Constant(rand_mat(rng, m1, 1, 0.1)),
        r2_lin: CoeffTable::Constant(rand_mat(rng, m2, 1, 0.1)),
        g_lin: TerminalTable::Constant(rand_mat(rng, n, 1, 0.1)),
    }
}

/// Random fully coupled game in the convex regime: both players' own-control
/// energies dominate every coupling, so the homogeneous convexity checks
/// certify and the joint stationarity system is well posed.
pub fn random_convex_game<T: Scalar>(seed: u64, params: &GameParams) -> Result<GameSpec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.modes;
    let (m1, m2) = params.controls;

    let eigenvalues = (0..n)
        .map(|_| T::from_f64(-rng.random_range(0.2..3.0)))
        .collect();
    let generator = SpectralOperator::new(eigenvalues)?;
    let horizon = rng.random_range(0.6..1.4);
    let tree = TreeSpace::build(T::zero(), T::from_f64(horizon), params.steps)?;

    let dynamics = GameDynamics {
        a1: CoeffTable::Constant(rand_mat(&mut rng, n, n, 0.1)),
        c: CoeffTable::Constant(rand_mat(&mut rng, n, n, 0.25)),
        drift: CoeffTable::Constant(rand_mat(&mut rng, n, 1, 0.15)),
        diffusion: CoeffTable::Constant(rand_mat(&mut rng, n, 1, 0.15)),
        b1: CoeffTable::Constant(rand_mat(&mut rng, n, m1, 0.7)),
        d1: CoeffTable::Constant(rand_mat(&mut rng, n, m1, 0.1)),
        b2: CoeffTable::Constant(rand_mat(&mut rng, n, m2, 0.7)),
        d2: CoeffTable::Constant(rand_mat(&mut rng, n, m2, 0.1)),
    };
    let players = [
        random_player(&mut rng, n, m1, m2, 0, params.coupling),
        random_player(&mut rng, n, m1, m2, 1, params.coupling),
    ];
    let eta = (0..n).map(|_| sample(&mut rng, 1.0)).collect();
    GameSpec::new(
        generator,
        dynamics,
        players,
        tree,
        0,
        eta,
        LqOptions::default(),
    )
}

/// Random game whose two players are indistinguishable: relabeling returns
/// the identical specification, so the equilibrium controls coincide.
pub fn random_symmetric_game<T: Scalar>(
    seed: u64,
    modes: usize,
    controls: usize,
    steps: usize,
) -> Result<GameSpec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = modes;
    let m = controls;

    let eigenvalues = (0..n)
        .map(|_| T::from_f64(-rng.random_range(0.2..3.0)))
        .collect();
    let generator = SpectralOperator::new(eigenvalues)?;
    let horizon = rng.random_range(0.6..1.4);
    let tree = TreeSpace::build(T::zero(), T::from_f64(horizon), steps)?;

    let b = CoeffTable::Constant(rand_mat(&mut rng, n, m, 0.7));
    let d = CoeffTable::Constant(rand_mat(&mut rng, n, m, 0.1));
    let dynamics = GameDynamics {
        a1: CoeffTable::Constant(rand_mat(&mut rng, n, n, 0.1)),
        c: CoeffTable::Constant(rand_mat(&mut rng, n, n, 0.25)),
        drift: CoeffTable::Constant(rand_mat(&mut rng, n, 1, 0.15)),
        diffusion: CoeffTable::Constant(rand_mat(&mut rng, n, 1, 0.15)),
        b1: b.clone(),
        d1: d.clone(),
        b2: b,
        d2: d,
    };

    let s = CoeffTable::Constant(rand_mat::<T>(&mut rng, m, n, 0.08));
    let r_own = CoeffTable::Constant(add_diag(rand_psd::<T>(&mut rng, m, 0.3), 1.0));
    let cross = CoeffTable::Constant(rand_mat::<T>(&mut rng, m, m, 0.08));
    let r_lin = CoeffTable::Constant(rand_mat::<T>(&mut rng, m, 1, 0.1));
    let player = PlayerWeights {
        q: CoeffTable::Constant(rand_psd(&mut rng, n, 0.7)),
        s1: s.clone(),
        s2: s,
        r11: r_own.clone(),
        r12: cross.clone(),
        r21: cross,
        r22: r_own,
        g: TerminalTable::Constant(rand_psd(&mut rng, n, 0.5)),
        q_lin: CoeffTable::Constant(rand_mat(&mut rng, n, 1, 0.1)),
        r1_lin: r_lin.clone(),
        r2_lin: r_lin,
        g_lin: TerminalTable::Constant(rand_mat(&mut rng, n, 1, 0.1)),
    };
    let eta = (0..n).map(|_| sample(&mut rng, 1.0)).collect();
    GameSpec::new(
        generator,
        dynamics,
        [player.clone(), player],
        tree,
        0,
        eta,
        LqOptions::default(),
    )
}

/// Random two-mode game in which player 1 only sees mode 1 and player 2 only
/// sees mode 2 — dynamics, weights, and inhomogeneities all mode-diagonal —
/// so the joint equilibrium system splits into two independent single-player
/// problems exactly. Solved at a tight tolerance for such comparisons.
pub fn random_decoupled_game<T: Scalar>(seed: u64, steps: usize) -> Result<GameSpec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let generator = SpectralOperator::new(vec![
        -sample_in::<T>(&mut rng, 0.4, 2.0),
        -sample_in::<T>(&mut rng, 0.4, 2.0),
    ])?;
    let tree = TreeSpace::build(T::zero(), T::one(), steps)?;
    let zero = T::zero();

    let diag2 = |a: T, b: T| Mat::from_rows(&[vec![a, zero], vec![zero, b]]).unwrap();
    let col = |a: T, b: T| Mat::from_vec(2, 1, vec![a, b]).unwrap();

    let mut dynamics = GameDynamics::zero(2, 1, 1);
    dynamics.c = CoeffTable::Constant(diag2(
        sample_in(&mut rng, 0.1, 0.4),
        sample_in(&mut rng, 0.1, 0.4),
    ));
    dynamics.drift = CoeffTable::Constant(col(sample(&mut rng, 0.1), sample(&mut rng, 0.1)));
    dynamics.diffusion = CoeffTable::Constant(col(sample(&mut rng, 0.1), sample(&mut rng, 0.1)));
    dynamics.b1 = CoeffTable::Constant(col(sample_in(&mut rng, 0.6, 1.2), zero));
    dynamics.d1 = CoeffTable::Constant(col(sample(&mut rng, 0.2), zero));
    dynamics.b2 = CoeffTable::Constant(col(zero, sample_in(&mut rng, 0.6, 1.2)));
    dynamics.d2 = CoeffTable::Constant(col(zero, sample(&mut rng, 0.2)));

    let mut player1 = PlayerWeights::zero(2, 1, 1);
    player1.q = CoeffTable::Constant(diag2(sample_in(&mut rng, 0.3, 0.9), zero));
    player1.g = TerminalTable::Constant(diag2(sample_in(&mut rng, 0.2, 0.7), zero));
    player1.s1 =
        CoeffTable::Constant(Mat::from_vec(1, 2, vec![sample(&mut rng, 0.05), zero]).unwrap());
    player1.r11 =
        CoeffTable::Constant(Mat::from_vec(1, 1, vec![sample_in(&mut rng, 0.8, 1.5)]).unwrap());
    player1.r22 = CoeffTable::identity(1);
    player1.q_lin = CoeffTable::Constant(col(sample(&mut rng, 0.05), zero));
    player1.r1_lin =
        CoeffTable::Constant(Mat::from_vec(1, 1, vec![sample(&mut rng, 0.05)]).unwrap());
    player1.g_lin = TerminalTable::Constant(col(sample(&mut rng, 0.05), zero));

    let mut player2 = PlayerWeights::zero(2, 1, 1);
    player2.q = CoeffTable::Constant(diag2(zero, sample_in(&mut rng, 0.3, 0.9)));
    player2.g = TerminalTable::Constant(diag2(zero, sample_in(&mut rng, 0.2, 0.7)));
    player2.s2 =
        CoeffTable::Constant(Mat::from_vec(1, 2, vec![zero, sample(&mut rng, 0.05)]).unwrap());
    player2.r22 =
        CoeffTable::Constant(Mat::from_vec(1, 1, vec![sample_in(&mut rng, 0.8, 1.5)]).unwrap());
    player2.r11 = CoeffTable::identity(1);
    player2.q_lin = CoeffTable::Constant(col(zero, sample(&mut rng, 0.05)));
    player2.r2_lin =
        CoeffTable::Constant(Mat::from_vec(1, 1, vec![sample(&mut rng, 0.05)]).unwrap());
    player2.g_lin = TerminalTable::Constant(col(zero, sample(&mut rng, 0.05)));

    let eta = vec![sample(&mut rng, 0.8), sample(&mut rng, 0.8)];
    let options = LqOptions {
        cg_tol: T::from_f64(1e-12),
        ..LqOptions::default()
    };
    GameSpec::new(
        generator,
        dynamics,
        [player1, player2],
        tree,
        0,
        eta,
        options,
    )
}
