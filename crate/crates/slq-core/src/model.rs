//! Galerkin truncation of the controlled evolution equation: the diagonal
//! generator, the coefficient/weight tables, and the assembled problem.
//!
//! The state equation being discretised is
//!
//! ```text
//! dx = [(A + A1) x + B u + b] ds + [C x + D u + sigma] dW,   x(t) = eta,
//! ```
//!
//! on an `n`-mode eigenbasis of the self-adjoint generator `A` (so `A` acts
//! diagonally and its semigroup is a componentwise exponential), with the
//! quadratic cost
//!
//! ```text
//! J(u) = 1/2 E [ int_t^T ( <Q x, x> + <R u, u> + s_factor <S x, u>
//!                          + 2 <q_lin, x> + 2 <r_lin, u> ) ds
//!                + <G x(T), x(T)> + 2 <g_lin, x(T)> ].
//! ```
//!
//! Coefficients and weights may vary per time level and per tree node
//! (arbitrary adapted tables), which is what the three-variant
//! [`CoeffTable`] encodes.

use crate::error::{Error, Result};
use crate::linalg::{sym_min_eig, Mat};
use crate::scalar::Scalar;
use crate::tree::{AdaptedProcess, NodeArray, TreeSpace};

/// Diagonal (spectral) generator: the action of `A` and of its semigroup
/// `exp(A dt)` on mode coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOperator<T> {
    eigenvalues: Vec<T>,
}

impl<T: Scalar> SpectralOperator<T> {
    pub fn new(eigenvalues: Vec<T>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::InvalidSpec(
                "the generator needs at least one mode".into(),
            ));
        }
        if eigenvalues.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidSpec(
                "generator eigenvalues must be finite".into(),
            ));
        }
        Ok(SpectralOperator { eigenvalues })
    }

    /// Dirichlet Laplacian modes on the unit interval: `lambda_n = -n^2 pi^2`.
    pub fn dirichlet_heat(modes: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::InvalidSpec("need at least one heat mode".into()));
        }
        let pi2 = T::PI() * T::PI();
        SpectralOperator::new((1..=modes).map(|n| -T::from_usize(n * n) * pi2).collect())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    #[inline]
    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    /// Componentwise semigroup factors `exp(lambda_i * dt)`; `dt` must be
    /// nonnegative (the semigroup is not invertible in general).
    pub fn semigroup_factors(&self, dt: T) -> Result<Vec<T>> {
        if dt < T::zero() {
            return Err(Error::NegativeStep { dt: dt.to_f64() });
        }
        Ok(self.eigenvalues.iter().map(|l| (*l * dt).exp()).collect())
    }

    /// Applies `exp(A dt)` to a mode-coefficient vector in place.
    pub fn semigroup_apply(&self, dt: T, v: &mut [T]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::ShapeMismatch {
                context: "semigroup_apply".into(),
                expected: format!("{} modes", self.dim()),
                got: format!("{}", v.len()),
            });
        }
        let factors = self.semigroup_factors(dt)?;
        for (x, f) in v.iter_mut().zip(factors.iter()) {
            *x *= *f;
        }
        Ok(())
    }
}

/// A coefficient/weight table over the running levels. Three granularities:
/// one constant block, one block per time level, or one block per tree node
/// (arbitrary adapted data).
#[derive(Debug, Clone, PartialEq)]
pub enum CoeffTable<T> {
    Constant(Mat<T>),
    /// Indexed by absolute level; entry `k` is used on `[t_k, t_{k+1})`.
    PerLevel(Vec<Mat<T>>),
    /// Arbitrary adapted table; must cover the levels the sweeps read.
    PerNode(AdaptedProcess<T>),
}

impl<T: Scalar> CoeffTable<T> {
    pub fn zero(rows: usize, cols: usize) -> Self {
        CoeffTable::Constant(Mat::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        CoeffTable::Constant(Mat::identity(n))
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            CoeffTable::Constant(m) => m.shape(),
            CoeffTable::PerLevel(v) => v.first().map_or((0, 0), |m| m.shape()),
            CoeffTable::PerNode(p) => (p.rows(), p.cols()),
        }
    }

    pub fn is_node_indexed(&self) -> bool {
        matches!(self, CoeffTable::PerNode(_))
    }

    /// Whether the same block applies to every node of every level.
    pub fn is_constant(&self) -> bool {
        matches!(self, CoeffTable::Constant(_))
    }

    /// Block at `(level, node)`. Callers must stay inside the validated
    /// coverage range; violations are programming errors and panic.
    #[inline]
    pub fn block(&self, level: usize, node: usize) -> BlockRef<'_, T> {
        match self {
            CoeffTable::Constant(m) => BlockRef {
                shape: m.shape(),
                data: m.data(),
            },
            CoeffTable::PerLevel(v) => {
                let m = &v[level];
                BlockRef {
                    shape: m.shape(),
                    data: m.data(),
                }
            }
            CoeffTable::PerNode(p) => {
                let arr = p.level(level);
                BlockRef {
                    shape: (arr.rows(), arr.cols()),
                    data: arr.node(node),
                }
            }
        }
    }

    /// Largest absolute entry over the table's stored blocks.
    pub fn max_abs(&self) -> T {
        match self {
            CoeffTable::Constant(m) => m.max_abs(),
            CoeffTable::PerLevel(v) => {
                v.iter().fold(
                    T::zero(),
                    |acc, m| if m.max_abs() > acc { m.max_abs() } else { acc },
                )
            }
            CoeffTable::PerNode(p) => p.max_abs(),
        }
    }

    /// Checks shape and that levels `first..=last` are readable.
    pub(crate) fn validate(
        &self,
        name: &str,
        rows: usize,
        cols: usize,
        first: usize,
        last: usize,
    ) -> Result<()> {
        let (r, c) = self.shape();
        if (r, c) != (rows, cols) {
            return Err(Error::ShapeMismatch {
                context: format!("coefficient table '{name}'"),
                expected: format!("{rows}x{cols}"),
                got: format!("{r}x{c}"),
            });
        }
        match self {
            CoeffTable::Constant(m) => {
                if !m.is_finite() {
                    return Err(Error::NonFinite {
                        what: name.into(),
                        level: 0,
                    });
                }
            }
            CoeffTable::PerLevel(v) => {
                if v.len() <= last {
                    return Err(Error::TableCoverage(format!(
                        "'{name}' has {} level entries but level {last} is read",
                        v.len()
                    )));
                }
                for (k, m) in v.iter().enumerate() {
                    if m.shape() != (rows, cols) {
                        return Err(Error::ShapeMismatch {
                            context: format!("coefficient table '{name}' level {k}"),
                            expected: format!("{rows}x{cols}"),
                            got: format!("{}x{}", m.rows(), m.cols()),
                        });
                    }
                    if !m.is_finite() {
                        return Err(Error::NonFinite {
                            what: name.into(),
                            level: k,
                        });
                    }
                }
            }
            CoeffTable::PerNode(p) => {
                if p.first_level() > first || p.last_level() < last {
                    return Err(Error::TableCoverage(format!(
                        "'{name}' covers levels {}..={} but {first}..={last} are read",
                        p.first_level(),
                        p.last_level()
                    )));
                }
                if !p.is_finite() {
                    return Err(Error::NonFinite {
                        what: name.into(),
                        level: p.first_level(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Materialises a vector-valued (`rows x 1`) table as an adapted process
    /// over levels `first..=last`.
    pub fn to_process(&self, first: usize, last: usize) -> Result<AdaptedProcess<T>> {
        let (rows, cols) = self.shape();
        if cols != 1 {
            return Err(Error::ShapeMismatch {
                context: "table-to-process".into(),
                expected: format!("{rows}x1"),
                got: format!("{rows}x{cols}"),
            });
        }
        self.validate("table-to-process", rows, 1, first, last)?;
        Ok(AdaptedProcess::from_fn(
            first,
            last,
            rows,
            1,
            |k, n, out| {
                out.copy_from_slice(self.block(k, n).data);
            },
        ))
    }

    /// Applies an entrywise map to every stored block (used for symmetrisation).
    pub(crate) fn map_blocks(&mut self, f: impl Fn(&Mat<T>) -> Mat<T>) {
        match self {
            CoeffTable::Constant(m) => *m = f(m),
            CoeffTable::PerLevel(v) => {
                for m in v.iter_mut() {
                    *m = f(m);
                }
            }
            CoeffTable::PerNode(p) => {
                let (rows, cols) = (p.rows(), p.cols());
                for k in p.first_level()..=p.last_level() {
                    let arr = p.level_mut(k);
                    for n in 0..arr.nodes() {
                        let m =
                            Mat::from_vec(rows, cols, arr.node(n).to_vec()).expect("block shape");
                        arr.node_mut(n).copy_from_slice(f(&m).data());
                    }
                }
            }
        }
    }
}

/// Borrowed view of one table block.
#[derive(Debug, Clone, Copy)]
pub struct BlockRef<'a, T> {
    pub shape: (usize, usize),
    pub data: &'a [T],
}

impl<'a, T: Scalar> BlockRef<'a, T> {
    /// `out += M x`.
    #[inline]
    pub fn matvec_add(&self, x: &[T], out: &mut [T]) {
        let (rows, cols) = self.shape;
        debug_assert_eq!(x.len(), cols);
        debug_assert_eq!(out.len(), rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(cols.max(1))) {
            let mut acc = T::zero();
            for (a, b) in row.iter().zip(x.iter()) {
                acc += *a * *b;
            }
            *o += acc;
        }
    }

    /// `out += M^T x`.
    #[inline]
    pub fn tr_matvec_add(&self, x: &[T], out: &mut [T]) {
        let (rows, cols) = self.shape;
        debug_assert_eq!(x.len(), rows);
        debug_assert_eq!(out.len(), cols);
        for (xi, row) in x.iter().zip(self.data.chunks_exact(cols.max(1))) {
            for (o, a) in out.iter_mut().zip(row.iter()) {
                *o += *a * *xi;
            }
        }
    }

    /// `out += M` interpreted as a vector (for `cols == 1` tables).
    #[inline]
    pub fn add_to(&self, out: &mut [T]) {
        debug_assert_eq!(out.len(), self.data.len());
        for (o, a) in out.iter_mut().zip(self.data.iter()) {
            *o += *a;
        }
    }

    pub fn to_mat(&self) -> Mat<T> {
        Mat::from_vec(self.shape.0, self.shape.1, self.data.to_vec()).expect("block shape")
    }
}

/// Terminal-only table (weights read at leaf atoms).
#[derive(Debug, Clone, PartialEq)]
pub enum TerminalTable<T> {
    Constant(Mat<T>),
    PerLeaf(NodeArray<T>),
}

impl<T: Scalar> TerminalTable<T> {
    pub fn zero(rows: usize, cols: usize) -> Self {
        TerminalTable::Constant(Mat::zeros(rows, cols))
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            TerminalTable::Constant(m) => m.shape(),
            TerminalTable::PerLeaf(a) => (a.rows(), a.cols()),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, TerminalTable::Constant(_))
    }

    #[inline]
    pub fn block(&self, leaf: usize) -> BlockRef<'_, T> {
        match self {
            TerminalTable::Constant(m) => BlockRef {
                shape: m.shape(),
                data: m.data(),
            },
            TerminalTable::PerLeaf(a) => BlockRef {
                shape: (a.rows(), a.cols()),
                data: a.node(leaf),
            },
        }
    }

    pub(crate) fn validate(
        &self,
        name: &str,
        rows: usize,
        cols: usize,
        leaf_level: usize,
    ) -> Result<()> {
        let (r, c) = self.shape();
        if (r, c) != (rows, cols) {
            return Err(Error::ShapeMismatch {
                context: format!("terminal table '{name}'"),
                expected: format!("{rows}x{cols}"),
                got: format!("{r}x{c}"),
            });
        }
        match self {
            TerminalTable::Constant(m) => {
                if !m.is_finite() {
                    return Err(Error::NonFinite {
                        what: name.into(),
                        level: leaf_level,
                    });
                }
            }
            TerminalTable::PerLeaf(a) => {
                if a.level() != leaf_level {
                    return Err(Error::TableCoverage(format!(
                        "'{name}' sits at level {} but leaves are level {leaf_level}",
                        a.level()
                    )));
                }
                if !a.is_finite() {
                    return Err(Error::NonFinite {
                        what: name.into(),
                        level: leaf_level,
                    });
                }
            }
        }
        Ok(())
    }

    pub(crate) fn map_blocks(&mut self, f: impl Fn(&Mat<T>) -> Mat<T>) {
        match self {
            TerminalTable::Constant(m) => *m = f(m),
            TerminalTable::PerLeaf(a) => {
                let (rows, cols) = (a.rows(), a.cols());
                for n in 0..a.nodes() {
                    let m = Mat::from_vec(rows, cols, a.node(n).to_vec()).expect("block shape");
                    a.node_mut(n).copy_from_slice(f(&m).data());
                }
            }
        }
    }
}

/// State-equation coefficients. Shapes for state dim `n`, control dim `m`:
/// `a1, c: n x n`, `b_ctrl, d_ctrl: n x m`, `drift, diffusion: n x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet<T> {
    /// Bounded drift perturbation of the generator.
    pub a1: CoeffTable<T>,
    /// Control-to-drift map.
    pub b_ctrl: CoeffTable<T>,
    /// State-to-diffusion map.
    pub c: CoeffTable<T>,
    /// Control-to-diffusion map.
    pub d_ctrl: CoeffTable<T>,
    /// Drift inhomogeneity.
    pub drift: CoeffTable<T>,
    /// Diffusion inhomogeneity.
    pub diffusion: CoeffTable<T>,
}

impl<T: Scalar> CoefficientSet<T> {
    /// All-zero coefficients for the given dimensions.
    pub fn zero(n: usize, m: usize) -> Self {
        CoefficientSet {
            a1: CoeffTable::zero(n, n),
            b_ctrl: CoeffTable::zero(n, m),
            c: CoeffTable::zero(n, n),
            d_ctrl: CoeffTable::zero(n, m),
            drift: CoeffTable::zero(n, 1),
            diffusion: CoeffTable::zero(n, 1),
        }
    }
}

/// Cost weights. Shapes: `q: n x n`, `r: m x m`, `s: m x n`, `g: n x n`
/// (terminal), `q_lin: n x 1`, `r_lin: m x 1`, `g_lin: n x 1` (terminal).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet<T> {
    pub q: CoeffTable<T>,
    pub r: CoeffTable<T>,
    pub s: CoeffTable<T>,
    pub g: TerminalTable<T>,
    pub q_lin: CoeffTable<T>,
    pub r_lin: CoeffTable<T>,
    pub g_lin: TerminalTable<T>,
}

impl<T: Scalar> WeightSet<T> {
    /// Zero weights except `r = identity` (the benign default that keeps the
    /// control energy coercive).
    pub fn default_for(n: usize, m: usize) -> Self {
        WeightSet {
            q: CoeffTable::zero(n, n),
            r: CoeffTable::identity(m),
            s: CoeffTable::zero(m, n),
            g: TerminalTable::zero(n, n),
            q_lin: CoeffTable::zero(n, 1),
            r_lin: CoeffTable::zero(m, 1),
            g_lin: TerminalTable::zero(n, 1),
        }
    }
}

/// Solver and convention options.
#[derive(Debug, Clone, PartialEq)]
pub struct LqOptions<T> {
    /// Factor on the `<S x, u>` cross term in the running cost: 1 or 2
    /// (default 2). Internally the solvers use the effective weight
    /// `S_eff = (s_factor / 2) * S` so that cost, gradient, and quadratic
    /// expansion stay mutually consistent for either convention.
    pub s_factor: u8,
    /// Relative residual target for the conjugate-gradient solves.
    pub cg_tol: T,
    /// Iteration cap as a multiple of the stacked control dimension.
    pub cg_max_iter_factor: usize,
    /// Largest stacked dimension the dense eigenvalue check will assemble.
    pub dense_threshold: usize,
    /// Estimate extremal eigenvalues iteratively when above the threshold.
    pub iterative_eig_fallback: bool,
    /// Force the minimal-norm least-squares path in `solve_open_loop`.
    pub least_squares: bool,
    /// Replace `Q, R, G` (and game weights) by their symmetric parts at
    /// construction. Off by default: asymmetry is reported, not repaired.
    pub symmetrize: bool,
}

impl<T: Scalar> Default for LqOptions<T> {
    fn default() -> Self {
        LqOptions {
            s_factor: 2,
            cg_tol: T::from_f64(1e-10),
            cg_max_iter_factor: 10,
            dense_threshold: 4096,
            iterative_eig_fallback: false,
            least_squares: false,
            symmetrize: false,
        }
    }
}

/// Fully assembled control problem on a tree.
#[derive(Debug, Clone, PartialEq)]
pub struct LqProblemSpec<T> {
    pub generator: SpectralOperator<T>,
    pub coeffs: CoefficientSet<T>,
    pub weights: WeightSet<T>,
    pub tree: TreeSpace<T>,
    /// Level at which the state starts; controls live on
    /// `init_level..=depth-1`.
    pub init_level: usize,
    /// Deterministic initial state, broadcast to every level-`init_level` atom.
    pub eta: Vec<T>,
    pub options: LqOptions<T>,
}

impl<T: Scalar> LqProblemSpec<T> {
    pub fn new(
        generator: SpectralOperator<T>,
        coeffs: CoefficientSet<T>,
        weights: WeightSet<T>,
        tree: TreeSpace<T>,
        init_level: usize,
        eta: Vec<T>,
        options: LqOptions<T>,
    ) -> Result<Self> {
        let mut spec = LqProblemSpec {
            generator,
            coeffs,
            weights,
            tree,
            init_level,
            eta,
            options,
        };
        if spec.options.symmetrize {
            spec.weights.q.map_blocks(|m| m.symmetrized());
            spec.weights.r.map_blocks(|m| m.symmetrized());
            spec.weights.g.map_blocks(|m| m.symmetrized());
        }
        spec.validate_shapes()?;
        Ok(spec)
    }

    #[inline]
    pub fn state_dim(&self) -> usize {
        self.generator.dim()
    }

    #[inline]
    pub fn control_dim(&self) -> usize {
        self.coeffs.b_ctrl.shape().1
    }

    /// Last running level (controls and running weights live on
    /// `init_level..=last_running_level()`).
    #[inline]
    pub fn last_running_level(&self) -> usize {
        self.tree.depth() - 1
    }

    /// Stacked dimension of the control space
    /// (`control_dim * sum_{k=init}^{K-1} 2^k`).
    pub fn control_flat_dim(&self) -> usize {
        let m = self.control_dim();
        (self.init_level..=self.last_running_level())
            .map(|k| (1usize << k) * m)
            .sum()
    }

    /// Effective `S` multiplier `(s_factor / 2)`; see [`LqOptions::s_factor`].
    #[inline]
    pub fn s_eff(&self) -> T {
        T::from_usize(self.options.s_factor as usize) * T::half()
    }

    /// Zero-shaped control process matching this problem.
    pub fn zero_control(&self) -> AdaptedProcess<T> {
        AdaptedProcess::zeros(
            self.init_level,
            self.last_running_level(),
            self.control_dim(),
            1,
        )
    }

    fn validate_shapes(&self) -> Result<()> {
        let n = self.state_dim();
        let m = self.control_dim();
        if m == 0 {
            return Err(Error::InvalidSpec(
                "control dimension must be positive".into(),
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
        self.coeffs.a1.validate("a1", n, n, first, last)?;
        self.coeffs.b_ctrl.validate("b", n, m, first, last)?;
        self.coeffs.c.validate("c", n, n, first, last)?;
        self.coeffs.d_ctrl.validate("d", n, m, first, last)?;
        self.coeffs.drift.validate("drift", n, 1, first, last)?;
        self.coeffs
            .diffusion
            .validate("diffusion", n, 1, first, last)?;
        self.weights.q.validate("q", n, n, first, last)?;
        self.weights.r.validate("r", m, m, first, last)?;
        self.weights.s.validate("s", m, n, first, last)?;
        self.weights.q_lin.validate("q_lin", n, 1, first, last)?;
        self.weights.r_lin.validate("r_lin", m, 1, first, last)?;
        self.weights.g.validate("g", n, n, k)?;
        self.weights.g_lin.validate("g_lin", n, 1, k)?;
        Ok(())
    }

    /// Copy with zeroed initial state, inhomogeneities, and linear weights.
    /// Its cost functional is the pure quadratic part of this problem's: the
    /// exact second-order coefficient in the control expansion of the cost.
    pub fn homogenized(&self) -> Self {
        let n = self.state_dim();
        let m = self.control_dim();
        let mut spec = self.clone();
        spec.eta = vec![T::zero(); n];
        spec.coeffs.drift = CoeffTable::zero(n, 1);
        spec.coeffs.diffusion = CoeffTable::zero(n, 1);
        spec.weights.q_lin = CoeffTable::zero(n, 1);
        spec.weights.r_lin = CoeffTable::zero(m, 1);
        spec.weights.g_lin = TerminalTable::zero(n, 1);
        spec
    }
}

/// One asymmetric weight block found by [`validate_conditions`].
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryViolation<T> {
    /// Which weight (`"q"`, `"r"`, or `"g"`).
    pub field: &'static str,
    /// Level of the offending block (`None` for constant tables).
    pub level: Option<usize>,
    /// Node of the offending block (0 for non-node tables).
    pub node: usize,
    /// `max_ij |w_ij - w_ji|`.
    pub skew: T,
}

/// Outcome of [`validate_conditions`]: report-only, nothing is repaired.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport<T> {
    pub symmetry_violations: Vec<SymmetryViolation<T>>,
    /// Smallest eigenvalue of `R` over all running blocks (the coercivity
    /// margin when positive).
    pub r_min_eig: T,
    /// Smallest eigenvalue of `Q` over all running blocks.
    pub q_min_eig: T,
    /// Smallest eigenvalue of `G` over the leaf blocks.
    pub g_min_eig: T,
    /// Largest `|S|` entry; the standard classification requires `S = 0`.
    pub s_max_abs: T,
    /// Standard problem: `Q >= 0`, `R` uniformly positive, `G >= 0`, `S = 0`.
    pub standard: bool,
}

/// Threshold on `max |w_ij - w_ji|` above which a block is reported.
pub fn symmetry_tolerance<T: Scalar>() -> T {
    T::from_f64(1e-12)
}

pub(crate) fn scan_sym_blocks<T: Scalar>(
    field: &'static str,
    table_blocks: &mut dyn Iterator<Item = (Option<usize>, usize, Mat<T>)>,
    violations: &mut Vec<SymmetryViolation<T>>,
    min_eig: &mut T,
) {
    let tol = symmetry_tolerance::<T>();
    let mut first = true;
    for (level, node, m) in table_blocks {
        let skew = m.max_skew();
        if skew > tol {
            violations.push(SymmetryViolation {
                field,
                level,
                node,
                skew,
            });
        }
        let e = sym_min_eig(&m.symmetrized());
        if first || e < *min_eig {
            *min_eig = e;
            first = false;
        }
    }
}

pub(crate) fn coeff_blocks<'a, T: Scalar>(
    table: &'a CoeffTable<T>,
    first: usize,
    last: usize,
) -> Box<dyn Iterator<Item = (Option<usize>, usize, Mat<T>)> + 'a> {
    match table {
        CoeffTable::Constant(m) => Box::new(std::iter::once((None, 0, m.clone()))),
        CoeffTable::PerLevel(v) => {
            Box::new((first..=last).map(move |k| (Some(k), 0, v[k].clone())))
        }
        CoeffTable::PerNode(p) => Box::new((first..=last).flat_map(move |k| {
            let arr = p.level(k);
            (0..arr.nodes()).map(move |n| {
                (
                    Some(k),
                    n,
                    Mat::from_vec(arr.rows(), arr.cols(), arr.node(n).to_vec()).expect("block"),
                )
            })
        })),
    }
}

pub(crate) fn terminal_blocks<'a, T: Scalar>(
    table: &'a TerminalTable<T>,
    leaf_level: usize,
) -> Box<dyn Iterator<Item = (Option<usize>, usize, Mat<T>)> + 'a> {
    match table {
        TerminalTable::Constant(m) => Box::new(std::iter::once((None, 0, m.clone()))),
        TerminalTable::PerLeaf(a) => Box::new((0..a.nodes()).map(move |n| {
            (
                Some(leaf_level),
                n,
                Mat::from_vec(a.rows(), a.cols(), a.node(n).to_vec()).expect("block"),
            )
        })),
    }
}

/// Inspects the weights: symmetry of every `Q`/`R`/`G` block (tolerance
/// `1e-12` on the maximum skew) and the standard classification
/// (`Q >= 0`, `R` uniformly positive definite with the margin reported,
/// `G >= 0`, and `S` identically zero). Report-only.
pub fn validate_conditions<T: Scalar>(spec: &LqProblemSpec<T>) -> ValidationReport<T> {
    let first = spec.init_level;
    let last = spec.last_running_level();
    let mut violations = Vec::new();
    let (mut q_min, mut r_min, mut g_min) = (T::zero(), T::zero(), T::zero());

    scan_sym_blocks(
        "q",
        &mut coeff_blocks(&spec.weights.q, first, last),
        &mut violations,
        &mut q_min,
    );
    scan_sym_blocks(
        "r",
        &mut coeff_blocks(&spec.weights.r, first, last),
        &mut violations,
        &mut r_min,
    );
    scan_sym_blocks(
        "g",
        &mut terminal_blocks(&spec.weights.g, spec.tree.depth()),
        &mut violations,
        &mut g_min,
    );

    let s_max_abs = spec.weights.s.max_abs();
    let eig_tol = T::from_f64(1e-12);
    let standard = violations.is_empty()
        && q_min >= -eig_tol
        && g_min >= -eig_tol
        && r_min > T::zero()
        && s_max_abs == T::zero();

    ValidationReport {
        symmetry_violations: violations,
        r_min_eig: r_min,
        q_min_eig: q_min,
        g_min_eig: g_min,
        s_max_abs,
        standard,
    }
}

/// Heat-equation starter problem: `modes` Dirichlet Laplacian eigenvalues,
/// identity `Q` and `R`, everything else zero. Callers fill in the
/// coefficient maps they need (`b_ctrl` in particular starts at zero).
pub fn heat_preset<T: Scalar>(
    modes: usize,
    control_dim: usize,
    tree: TreeSpace<T>,
) -> Result<LqProblemSpec<T>> {
    if modes == 0 || control_dim == 0 {
        return Err(Error::InvalidSpec(
            "heat preset needs positive state and control dimensions".into(),
        ));
    }
    let generator = SpectralOperator::dirichlet_heat(modes)?;
    let coeffs = CoefficientSet::zero(modes, control_dim);
    let mut weights = WeightSet::default_for(modes, control_dim);
    weights.q = CoeffTable::identity(modes);
    LqProblemSpec::new(
        generator,
        coeffs,
        weights,
        tree,
        0,
        vec![T::zero(); modes],
        LqOptions::default(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::TreeSpace;

    fn tree(steps: usize) -> TreeSpace<f64> {
        TreeSpace::build(0.0, 1.0, steps).unwrap()
    }

    #[test]
    fn semigroup_is_componentwise_exponential() {
        let a = SpectralOperator::new(vec![-1.0, -4.0]).unwrap();
        let mut v = vec![1.0, 2.0];
        a.semigroup_apply(0.5, &mut v).unwrap();
        assert!((v[0] - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v[1] - 2.0 * (-2.0f64).exp()).abs() < 1e-15);
        // Zero step is the identity.
        let mut w = vec![3.0, -1.0];
        a.semigroup_apply(0.0, &mut w).unwrap();
        assert_eq!(w, vec![3.0, -1.0]);
        // Negative steps are rejected.
        assert!(a.semigroup_apply(-0.1, &mut w).is_err());
    }

    #[test]
    fn dirichlet_heat_eigenvalues() {
        let a = SpectralOperator::<f64>::dirichlet_heat(3).unwrap();
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((a.eigenvalues()[0] + pi2).abs() < 1e-12);
        assert!((a.eigenvalues()[2] + 9.0 * pi2).abs() < 1e-11);
    }

    #[test]
    fn spec_validation_catches_bad_shapes() {
        let t = tree(3);
        let gen = SpectralOperator::new(vec![-1.0, -2.0]).unwrap();
        let coeffs = CoefficientSet::zero(2, 1);
        let weights = WeightSet::default_for(2, 1);
        // Wrong eta length.
        assert!(LqProblemSpec::new(
            gen.clone(),
            coeffs.clone(),
            weights.clone(),
            t.clone(),
            0,
            vec![0.0; 3],
            LqOptions::default(),
        )
        .is_err());
        // init_level at the leaves.
        assert!(LqProblemSpec::new(
            gen.clone(),
            coeffs.clone(),
            weights.clone(),
            t.clone(),
            3,
            vec![0.0; 2],
            LqOptions::default(),
        )
        .is_err());
        // Under-covered per-level table.
        let mut bad = coeffs.clone();
        bad.a1 = CoeffTable::PerLevel(vec![Mat::zeros(2, 2); 2]);
        assert!(
            LqProblemSpec::new(gen, bad, weights, t, 0, vec![0.0; 2], LqOptions::default())
                .is_err()
        );
    }

    #[test]
    fn validation_reports_skew_and_standard_status() {
        let t = tree(2);
        let gen = SpectralOperator::new(vec![-1.0, -2.0]).unwrap();
        let coeffs = CoefficientSet::zero(2, 1);
        let mut weights = WeightSet::default_for(2, 1);
        // Q with a 1e-6 skew entry.
        weights.q =
            CoeffTable::Constant(Mat::from_rows(&[vec![1.0, 1e-6], vec![0.0, 1.0]]).unwrap());
        let spec = LqProblemSpec::new(
            gen,
            coeffs,
            weights,
            t,
            0,
            vec![0.0; 2],
            LqOptions::default(),
        )
        .unwrap();
        let report = validate_conditions(&spec);
        assert_eq!(report.symmetry_violations.len(), 1);
        assert_eq!(report.symmetry_violations[0].field, "q");
        assert!((report.symmetry_violations[0].skew - 1e-6).abs() < 1e-18);
        assert!(!report.standard);
        assert!((report.r_min_eig - 1.0).abs() < 1e-14);
    }

    #[test]
    fn validation_flags_indefinite_r_at_one_node() {
        let t = tree(2);
        let gen = SpectralOperator::new(vec![-1.0]).unwrap();
        let coeffs = CoefficientSet::zero(1, 1);
        let mut weights = WeightSet::default_for(1, 1);
        // R = +1 everywhere except -1 at one node of level 1.
        let mut r = AdaptedProcess::from_fn(0, 1, 1, 1, |_, _, b| b[0] = 1.0);
        r.level_mut(1).node_mut(1)[0] = -1.0;
        weights.r = CoeffTable::PerNode(r);
        let spec = LqProblemSpec::new(gen, coeffs, weights, t, 0, vec![0.0], LqOptions::default())
            .unwrap();
        let report = validate_conditions(&spec);
        assert!(!report.standard);
        assert!((report.r_min_eig + 1.0).abs() < 1e-14);
    }

    #[test]
    fn standard_default_weights_pass() {
        let t = tree(2);
        let spec = heat_preset::<f64>(2, 1, t).unwrap();
        let report = validate_conditions(&spec);
        assert!(report.standard);
        assert!(report.symmetry_violations.is_empty());
        assert_eq!(report.s_max_abs, 0.0);
    }

    #[test]
    fn symmetrize_option_repairs_weights() {
        let t = tree(2);
        let gen = SpectralOperator::new(vec![-1.0, -2.0]).unwrap();
        let coeffs = CoefficientSet::zero(2, 1);
        let mut weights = WeightSet::default_for(2, 1);
        weights.q =
            CoeffTable::Constant(Mat::from_rows(&[vec![1.0, 0.5], vec![0.1, 1.0]]).unwrap());
        let opts = LqOptions {
            symmetrize: true,
            ..LqOptions::default()
        };
        let spec = LqProblemSpec::new(gen, coeffs, weights, t, 0, vec![0.0; 2], opts).unwrap();
        let report = validate_conditions(&spec);
        assert!(report.symmetry_violations.is_empty());
        if let CoeffTable::Constant(q) = &spec.weights.q {
            assert!((q.at(0, 1) - 0.3).abs() < 1e-15);
            assert!((q.at(1, 0) - 0.3).abs() < 1e-15);
        } else {
            panic!("expected constant table");
        }
    }

    #[test]
    fn homogenized_zeroes_linear_data_only() {
        let t = tree(2);
        let gen = SpectralOperator::new(vec![-1.0]).unwrap();
        let mut coeffs = CoefficientSet::zero(1, 1);
        coeffs.drift = CoeffTable::Constant(Mat::from_rows(&[vec![0.7]]).unwrap());
        let mut weights = WeightSet::default_for(1, 1);
        weights.q = CoeffTable::identity(1);
        weights.r_lin = CoeffTable::Constant(Mat::from_rows(&[vec![0.3]]).unwrap());
        let spec = LqProblemSpec::new(gen, coeffs, weights, t, 0, vec![0.9], LqOptions::default())
            .unwrap();
        let hom = spec.homogenized();
        assert_eq!(hom.eta, vec![0.0]);
        assert_eq!(hom.coeffs.drift.max_abs(), 0.0);
        assert_eq!(hom.weights.r_lin.max_abs(), 0.0);
        // Quadratic weights survive.
        assert_eq!(hom.weights.q.max_abs(), 1.0);
    }

    #[test]
    fn heat_preset_is_standard() {
        let spec = heat_preset::<f64>(3, 2, tree(3)).unwrap();
        assert_eq!(spec.state_dim(), 3);
        assert_eq!(spec.control_dim(), 2);
        assert!(validate_conditions(&spec).standard);
        assert_eq!(spec.coeffs.b_ctrl.max_abs(), 0.0);
    }
}
