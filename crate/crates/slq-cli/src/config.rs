//! Strict, versioned JSON problem configuration.
//!
//! A config file fully determines a problem: grid, backend, dimensions,
//! generator spectrum, coefficient and weight tables, initial pair, and
//! solver options. Parsing is strict — unknown fields are rejected — and
//! every validation error names the offending field path. Unreferenced
//! tables default to zero, except the control energy `r` (identity) and the
//! players' own energies `r11`/`r22` (identity).
//!
//! Tables come in three shapes:
//!
//! * `{"constant": M}` — one matrix for all levels;
//! * `{"time_table": [M_0, ..., M_{K-1}]}` — one matrix per level;
//! * `{"node_table": {"entries": {"ud...": M, ...}, "default": M}}` — one
//!   matrix per tree node, keyed by the node's up/down path string (the root
//!   is `""`); unnamed nodes take the `default`.
//!
//! Column vectors may be written flat (`[1.0, 2.0]`) or as one-column
//! matrices. Node tables address tree atoms, so they require the tree
//! backend; terminal tables (`g`, `g_lin`) allow `constant` and `node_table`
//! (at leaf depth) but not `time_table`.

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use slq_core::model::{
    CoeffTable, CoefficientSet, LqOptions, SpectralOperator, TerminalTable, WeightSet,
};
use slq_core::tree::{NodeArray, TimeGrid, TreeSpace};
use slq_core::{GameDynamics64, GameSpec64, LqProblemSpec64, Mat64, McProblem64, PlayerWeights64};
use std::collections::BTreeMap;
use std::path::Path;

/// Schema revision this binary understands.
pub const SCHEMA_VERSION: u64 = 1;

/// A parsed config plus the exact bytes it came from (for hashing).
pub struct LoadedConfig {
    pub config: ProblemConfig,
    /// Hex SHA-256 of the raw file bytes; stamped into every report.
    pub sha256: String,
}

/// Reads, parses, and structurally validates a config file.
pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let raw = std::fs::read(path)
        .with_context(|| format!("cannot read config file '{}'", path.display()))?;
    let config: ProblemConfig = serde_json::from_slice(&raw)
        .with_context(|| format!("cannot parse config file '{}'", path.display()))?;
    if config.schema_version != SCHEMA_VERSION {
        bail!(
            "schema_version: expected {SCHEMA_VERSION}, got {}",
            config.schema_version
        );
    }
    let sha256 = hex(&Sha256::digest(&raw));
    Ok(LoadedConfig { config, sha256 })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub schema_version: u64,
    pub mode: Mode,
    pub grid: GridConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    pub dims: DimsConfig,
    pub operator: OperatorConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub coefficients: CoefficientsConfig,
    #[serde(default)]
    pub weights: Option<WeightsConfig>,
    #[serde(default)]
    pub players: Option<Vec<PlayerConfig>>,
    #[serde(default)]
    pub options: OptionsConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Slq,
    Game,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub t0: f64,
    pub t_end: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    #[default]
    Tree,
    Mc {
        paths: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        basis: BasisConfig,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisConfig {
    Mean,
    #[default]
    Linear,
    Quadratic,
}

impl BasisConfig {
    pub fn to_core(self) -> slq_core::mc::McBasis {
        match self {
            BasisConfig::Mean => slq_core::mc::McBasis::Mean,
            BasisConfig::Linear => slq_core::mc::McBasis::Linear,
            BasisConfig::Quadratic => slq_core::mc::McBasis::Quadratic,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsConfig {
    pub state: usize,
    #[serde(default)]
    pub control: Option<usize>,
    #[serde(default)]
    pub control1: Option<usize>,
    #[serde(default)]
    pub control2: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    #[serde(default)]
    pub eigenvalues: Option<Vec<f64>>,
    #[serde(default)]
    pub preset: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// Tree level the problem starts at (tree backend only; 0 = root).
    #[serde(default)]
    pub level: usize,
    /// Initial state; defaults to zero.
    #[serde(default)]
    pub state: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsConfig {
    #[serde(default)]
    pub a1: Option<TableConfig>,
    #[serde(default)]
    pub b: Option<TableConfig>,
    #[serde(default)]
    pub c: Option<TableConfig>,
    #[serde(default)]
    pub d: Option<TableConfig>,
    #[serde(default)]
    pub drift: Option<TableConfig>,
    #[serde(default)]
    pub diffusion: Option<TableConfig>,
    #[serde(default)]
    pub b1: Option<TableConfig>,
    #[serde(default)]
    pub d1: Option<TableConfig>,
    #[serde(default)]
    pub b2: Option<TableConfig>,
    #[serde(default)]
    pub d2: Option<TableConfig>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    #[serde(default)]
    pub q: Option<TableConfig>,
    #[serde(default)]
    pub r: Option<TableConfig>,
    #[serde(default)]
    pub s: Option<TableConfig>,
    #[serde(default)]
    pub g: Option<TableConfig>,
    #[serde(default)]
    pub q_lin: Option<TableConfig>,
    #[serde(default)]
    pub r_lin: Option<TableConfig>,
    #[serde(default)]
    pub g_lin: Option<TableConfig>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerConfig {
    #[serde(default)]
    pub q: Option<TableConfig>,
    #[serde(default)]
    pub s1: Option<TableConfig>,
    #[serde(default)]
    pub s2: Option<TableConfig>,
    #[serde(default)]
    pub r11: Option<TableConfig>,
    #[serde(default)]
    pub r12: Option<TableConfig>,
    #[serde(default)]
    pub r21: Option<TableConfig>,
    #[serde(default)]
    pub r22: Option<TableConfig>,
    #[serde(default)]
    pub g: Option<TableConfig>,
    #[serde(default)]
    pub q_lin: Option<TableConfig>,
    #[serde(default)]
    pub r1_lin: Option<TableConfig>,
    #[serde(default)]
    pub r2_lin: Option<TableConfig>,
    #[serde(default)]
    pub g_lin: Option<TableConfig>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsConfig {
    #[serde(default)]
    pub s_factor: Option<u8>,
    #[serde(default)]
    pub cg_tol: Option<f64>,
    #[serde(default)]
    pub cg_max_iter_factor: Option<usize>,
    #[serde(default)]
    pub dense_threshold: Option<usize>,
    #[serde(default)]
    pub iterative_eig_fallback: Option<bool>,
    #[serde(default)]
    pub least_squares: Option<bool>,
    #[serde(default)]
    pub symmetrize: Option<bool>,
}

/// One table in any of its three shapes; exactly one field may be set.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    #[serde(default)]
    pub constant: Option<MatrixConfig>,
    #[serde(default)]
    pub time_table: Option<Vec<MatrixConfig>>,
    #[serde(default)]
    pub node_table: Option<NodeTableConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeTableConfig {
    /// Per-node matrices keyed by up/down path strings (`""` = root).
    pub entries: BTreeMap<String, MatrixConfig>,
    /// Matrix for nodes not named in `entries`.
    #[serde(default)]
    pub default: Option<MatrixConfig>,
}

/// A matrix as nested rows, or a flat list for a one-column matrix.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MatrixConfig {
    Rows(Vec<Vec<f64>>),
    Column(Vec<f64>),
}

impl MatrixConfig {
    fn to_mat(&self, field: &str, rows: usize, cols: usize) -> Result<Mat64> {
        let mat = match self {
            MatrixConfig::Rows(r) => Mat64::from_rows(r).map_err(|e| anyhow!("{field}: {e}"))?,
            MatrixConfig::Column(v) => {
                Mat64::from_rows(&v.iter().map(|x| vec![*x]).collect::<Vec<_>>())
                    .map_err(|e| anyhow!("{field}: {e}"))?
            }
        };
        if mat.shape() != (rows, cols) {
            bail!(
                "{field}: expected a {rows}x{cols} matrix, got {}x{}",
                mat.shape().0,
                mat.shape().1
            );
        }
        Ok(mat)
    }
}

/// A problem fully instantiated on its backend.
pub enum BuiltProblem {
    /// Single-controller problem on the exact tree backend.
    Tree(Box<LqProblemSpec64>),
    /// Single-controller problem on the path-ensemble backend.
    Ensemble(Box<McProblem64>, EnsembleSettings),
    /// Two-player game (tree backend).
    Game(Box<GameSpec64>),
}

/// Path-count, seed, and regression basis for the ensemble backend.
#[derive(Debug, Clone, Copy)]
pub struct EnsembleSettings {
    pub paths: usize,
    pub seed: u64,
    pub basis: BasisConfig,
}

impl ProblemConfig {
    /// Instantiates the configured problem, naming the failing field on
    /// every validation error.
    pub fn build(&self) -> Result<BuiltProblem> {
        let generator = self.build_operator()?;
        let n = self.dims.state;
        if generator.dim() != n {
            bail!(
                "operator: spectrum has {} eigenvalues but dims.state is {n}",
                generator.dim()
            );
        }
        let eta = match &self.initial.state {
            Some(v) => {
                if v.len() != n {
                    bail!("initial.state: expected {n} entries, got {}", v.len());
                }
                v.clone()
            }
            None => vec![0.0; n],
        };
        let options = self.build_options();
        match self.mode {
            Mode::Slq => self.build_slq(generator, eta, options),
            Mode::Game => self.build_game(generator, eta, options),
        }
    }

    fn build_operator(&self) -> Result<SpectralOperator<f64>> {
        match (&self.operator.eigenvalues, &self.operator.preset) {
            (Some(eigs), None) => SpectralOperator::new(eigs.clone())
                .map_err(|e| anyhow!("operator.eigenvalues: {e}")),
            (None, Some(name)) => match name.as_str() {
                "dirichlet_heat" => SpectralOperator::dirichlet_heat(self.dims.state)
                    .map_err(|e| anyhow!("operator.preset: {e}")),
                other => bail!("operator.preset: unknown preset '{other}'"),
            },
            _ => bail!("operator: set exactly one of 'eigenvalues' or 'preset'"),
        }
    }

    fn build_options(&self) -> LqOptions<f64> {
        let defaults = LqOptions::default();
        let o = &self.options;
        LqOptions {
            s_factor: o.s_factor.unwrap_or(defaults.s_factor),
            cg_tol: o.cg_tol.unwrap_or(defaults.cg_tol),
            cg_max_iter_factor: o.cg_max_iter_factor.unwrap_or(defaults.cg_max_iter_factor),
            dense_threshold: o.dense_threshold.unwrap_or(defaults.dense_threshold),
            iterative_eig_fallback: o
                .iterative_eig_fallback
                .unwrap_or(defaults.iterative_eig_fallback),
            least_squares: o.least_squares.unwrap_or(defaults.least_squares),
            symmetrize: o.symmetrize.unwrap_or(defaults.symmetrize),
        }
    }

    fn grid(&self) -> Result<TimeGrid<f64>> {
        TimeGrid::new(self.grid.t0, self.grid.t_end, self.grid.steps)
            .map_err(|e| anyhow!("grid: {e}"))
    }

    fn control_dim(&self) -> Result<usize> {
        for (name, value) in [
            ("control1", self.dims.control1),
            ("control2", self.dims.control2),
        ] {
            if value.is_some() {
                bail!("dims.{name}: a game-mode field; slq mode uses dims.control");
            }
        }
        self.dims
            .control
            .ok_or_else(|| anyhow!("dims.control: required in slq mode"))
    }

    fn build_slq(
        &self,
        generator: SpectralOperator<f64>,
        eta: Vec<f64>,
        options: LqOptions<f64>,
    ) -> Result<BuiltProblem> {
        if self.players.is_some() {
            bail!("players: a game-mode field; slq mode uses 'weights'");
        }
        let n = self.dims.state;
        let m = self.control_dim()?;
        let grid = self.grid()?;
        let (tree, ensemble) = match self.backend {
            BackendConfig::Tree => {
                let tree = TreeSpace::new(grid).map_err(|e| anyhow!("grid: {e}"))?;
                (Some(tree), None)
            }
            BackendConfig::Mc { paths, seed, basis } => {
                if self.initial.level != 0 {
                    bail!("initial.level: the mc backend starts at the root (level 0)");
                }
                (None, Some(EnsembleSettings { paths, seed, basis }))
            }
        };
        let ctx = TableContext {
            tree: tree.as_ref(),
            steps: self.grid.steps,
            init_level: self.initial.level,
        };

        let co = &self.coefficients;
        for (name, tab) in [
            ("b1", &co.b1),
            ("d1", &co.d1),
            ("b2", &co.b2),
            ("d2", &co.d2),
        ] {
            if tab.is_some() {
                bail!("coefficients.{name}: a game-mode field; slq mode uses 'b' and 'd'");
            }
        }
        let coeffs = CoefficientSet {
            a1: ctx.coeff("coefficients.a1", &co.a1, n, n)?,
            b_ctrl: ctx.coeff("coefficients.b", &co.b, n, m)?,
            c: ctx.coeff("coefficients.c", &co.c, n, n)?,
            d_ctrl: ctx.coeff("coefficients.d", &co.d, n, m)?,
            drift: ctx.coeff("coefficients.drift", &co.drift, n, 1)?,
            diffusion: ctx.coeff("coefficients.diffusion", &co.diffusion, n, 1)?,
        };
        let default_weights = WeightsConfig::default();
        let w = self.weights.as_ref().unwrap_or(&default_weights);
        let weights = WeightSet {
            q: ctx.coeff("weights.q", &w.q, n, n)?,
            r: ctx.coeff_or("weights.r", &w.r, m, m, CoeffTable::identity(m))?,
            s: ctx.coeff("weights.s", &w.s, m, n)?,
            g: ctx.terminal("weights.g", &w.g, n, n)?,
            q_lin: ctx.coeff("weights.q_lin", &w.q_lin, n, 1)?,
            r_lin: ctx.coeff("weights.r_lin", &w.r_lin, m, 1)?,
            g_lin: ctx.terminal("weights.g_lin", &w.g_lin, n, 1)?,
        };

        match (tree, ensemble) {
            (Some(tree), None) => {
                let spec = LqProblemSpec64::new(
                    generator,
                    coeffs,
                    weights,
                    tree,
                    self.initial.level,
                    eta,
                    options,
                )
                .map_err(|e| anyhow!("config: {e}"))?;
                Ok(BuiltProblem::Tree(Box::new(spec)))
            }
            (None, Some(settings)) => {
                let problem =
                    McProblem64::new(generator, coeffs, weights, self.grid()?, eta, options)
                        .map_err(|e| anyhow!("config: {e}"))?;
                Ok(BuiltProblem::Ensemble(Box::new(problem), settings))
            }
            _ => unreachable!("backend is either tree or mc"),
        }
    }

    fn build_game(
        &self,
        generator: SpectralOperator<f64>,
        eta: Vec<f64>,
        options: LqOptions<f64>,
    ) -> Result<BuiltProblem> {
        if !matches!(self.backend, BackendConfig::Tree) {
            bail!("backend: game mode runs on the tree backend");
        }
        if self.weights.is_some() {
            bail!("weights: an slq-mode field; game mode uses 'players'");
        }
        if self.dims.control.is_some() {
            bail!("dims.control: an slq-mode field; game mode uses dims.control1/control2");
        }
        let n = self.dims.state;
        let m1 = self
            .dims
            .control1
            .ok_or_else(|| anyhow!("dims.control1: required in game mode"))?;
        let m2 = self
            .dims
            .control2
            .ok_or_else(|| anyhow!("dims.control2: required in game mode"))?;
        let tree = TreeSpace::new(self.grid()?).map_err(|e| anyhow!("grid: {e}"))?;
        let ctx = TableContext {
            tree: Some(&tree),
            steps: self.grid.steps,
            init_level: self.initial.level,
        };

        let co = &self.coefficients;
        for (name, tab) in [("b", &co.b), ("d", &co.d)] {
            if tab.is_some() {
                bail!("coefficients.{name}: an slq-mode field; game mode uses b1/d1/b2/d2");
            }
        }
        let dynamics = GameDynamics64 {
            a1: ctx.coeff("coefficients.a1", &co.a1, n, n)?,
            c: ctx.coeff("coefficients.c", &co.c, n, n)?,
            drift: ctx.coeff("coefficients.drift", &co.drift, n, 1)?,
            diffusion: ctx.coeff("coefficients.diffusion", &co.diffusion, n, 1)?,
            b1: ctx.coeff("coefficients.b1", &co.b1, n, m1)?,
            d1: ctx.coeff("coefficients.d1", &co.d1, n, m1)?,
            b2: ctx.coeff("coefficients.b2", &co.b2, n, m2)?,
            d2: ctx.coeff("coefficients.d2", &co.d2, n, m2)?,
        };

        let players = self
            .players
            .as_ref()
            .ok_or_else(|| anyhow!("players: required in game mode"))?;
        if players.len() != 2 {
            bail!("players: expected exactly 2 entries, got {}", players.len());
        }
        let mut built = Vec::with_capacity(2);
        for (i, p) in players.iter().enumerate() {
            let f = |name: &str| format!("players[{i}].{name}");
            built.push(PlayerWeights64 {
                q: ctx.coeff(&f("q"), &p.q, n, n)?,
                s1: ctx.coeff(&f("s1"), &p.s1, m1, n)?,
                s2: ctx.coeff(&f("s2"), &p.s2, m2, n)?,
                r11: ctx.coeff_or(&f("r11"), &p.r11, m1, m1, CoeffTable::identity(m1))?,
                r12: ctx.coeff(&f("r12"), &p.r12, m1, m2)?,
                r21: ctx.coeff(&f("r21"), &p.r21, m2, m1)?,
                r22: ctx.coeff_or(&f("r22"), &p.r22, m2, m2, CoeffTable::identity(m2))?,
                g: ctx.terminal(&f("g"), &p.g, n, n)?,
                q_lin: ctx.coeff(&f("q_lin"), &p.q_lin, n, 1)?,
                r1_lin: ctx.coeff(&f("r1_lin"), &p.r1_lin, m1, 1)?,
                r2_lin: ctx.coeff(&f("r2_lin"), &p.r2_lin, m2, 1)?,
                g_lin: ctx.terminal(&f("g_lin"), &p.g_lin, n, 1)?,
            });
        }
        let players: [PlayerWeights64; 2] = match built.try_into() {
            Ok(arr) => arr,
            Err(_) => unreachable!("length checked above"),
        };
        let game = GameSpec64::new(
            generator,
            dynamics,
            players,
            tree,
            self.initial.level,
            eta,
            options,
        )
        .map_err(|e| anyhow!("config: {e}"))?;
        Ok(BuiltProblem::Game(Box::new(game)))
    }
}

/// Shared context for turning table configs into core tables.
struct TableContext<'a> {
    tree: Option<&'a TreeSpace<f64>>,
    steps: usize,
    init_level: usize,
}

impl TableContext<'_> {
    /// Builds a running-level table; missing tables default to zero.
    fn coeff(
        &self,
        field: &str,
        table: &Option<TableConfig>,
        rows: usize,
        cols: usize,
    ) -> Result<CoeffTable<f64>> {
        self.coeff_or(field, table, rows, cols, CoeffTable::zero(rows, cols))
    }

    fn coeff_or(
        &self,
        field: &str,
        table: &Option<TableConfig>,
        rows: usize,
        cols: usize,
        default: CoeffTable<f64>,
    ) -> Result<CoeffTable<f64>> {
        let Some(table) = table else {
            return Ok(default);
        };
        match table.single_variant(field)? {
            Variant::Constant(m) => Ok(CoeffTable::Constant(m.to_mat(field, rows, cols)?)),
            Variant::TimeTable(mats) => {
                if mats.len() != self.steps {
                    bail!(
                        "{field}.time_table: expected one matrix per level (0..{}), got {}",
                        self.steps - 1,
                        mats.len()
                    );
                }
                let mut levels = Vec::with_capacity(mats.len());
                for (k, m) in mats.iter().enumerate() {
                    levels.push(m.to_mat(&format!("{field}.time_table[{k}]"), rows, cols)?);
                }
                Ok(CoeffTable::PerLevel(levels))
            }
            Variant::NodeTable(node) => {
                let tree = self.tree.ok_or_else(|| {
                    anyhow!("{field}.node_table: node tables require the tree backend")
                })?;
                let first = self.init_level;
                let last = self.steps - 1;
                let blocks = resolve_node_entries(field, node, tree, first, last, rows, cols)?;
                let mut process = slq_core::tree::AdaptedProcess::zeros(first, last, rows, cols);
                for (level, arrays) in blocks.into_iter().enumerate() {
                    let level = first + level;
                    for (node_idx, mat) in arrays.into_iter().enumerate() {
                        process
                            .level_mut(level)
                            .node_mut(node_idx)
                            .copy_from_slice(mat.data());
                    }
                }
                Ok(CoeffTable::PerNode(process))
            }
        }
    }

    /// Builds a terminal (leaf-level) table.
    fn terminal(
        &self,
        field: &str,
        table: &Option<TableConfig>,
        rows: usize,
        cols: usize,
    ) -> Result<TerminalTable<f64>> {
        let Some(table) = table else {
            return Ok(TerminalTable::zero(rows, cols));
        };
        match table.single_variant(field)? {
            Variant::Constant(m) => Ok(TerminalTable::Constant(m.to_mat(field, rows, cols)?)),
            Variant::TimeTable(_) => {
                bail!("{field}.time_table: terminal tables are constant or node-indexed")
            }
            Variant::NodeTable(node) => {
                let tree = self.tree.ok_or_else(|| {
                    anyhow!("{field}.node_table: node tables require the tree backend")
                })?;
                let depth = tree.depth();
                let blocks = resolve_node_entries(field, node, tree, depth, depth, rows, cols)?;
                let mut array = NodeArray::zeros(depth, rows, cols);
                for (node_idx, mat) in blocks.into_iter().next().unwrap().into_iter().enumerate() {
                    array.node_mut(node_idx).copy_from_slice(mat.data());
                }
                Ok(TerminalTable::PerLeaf(array))
            }
        }
    }
}

enum Variant<'a> {
    Constant(&'a MatrixConfig),
    TimeTable(&'a [MatrixConfig]),
    NodeTable(&'a NodeTableConfig),
}

impl TableConfig {
    fn single_variant(&self, field: &str) -> Result<Variant<'_>> {
        let mut found = Vec::new();
        if self.constant.is_some() {
            found.push("constant");
        }
        if self.time_table.is_some() {
            found.push("time_table");
        }
        if self.node_table.is_some() {
            found.push("node_table");
        }
        match found.as_slice() {
            ["constant"] => Ok(Variant::Constant(self.constant.as_ref().unwrap())),
            ["time_table"] => Ok(Variant::TimeTable(self.time_table.as_deref().unwrap())),
            ["node_table"] => Ok(Variant::NodeTable(self.node_table.as_ref().unwrap())),
            [] => bail!("{field}: set one of 'constant', 'time_table', 'node_table'"),
            many => bail!(
                "{field}: set exactly one table shape, found {}",
                many.join(" and ")
            ),
        }
    }
}

/// Expands a node table into per-level, per-node matrices over
/// `first..=last`, validating every path string against the tree.
fn resolve_node_entries(
    field: &str,
    node: &NodeTableConfig,
    tree: &TreeSpace<f64>,
    first: usize,
    last: usize,
    rows: usize,
    cols: usize,
) -> Result<Vec<Vec<Mat64>>> {
    let default = node
        .default
        .as_ref()
        .map(|m| m.to_mat(&format!("{field}.node_table.default"), rows, cols))
        .transpose()?;
    let mut blocks: Vec<Vec<Option<Mat64>>> = (first..=last)
        .map(|level| vec![None; tree.nodes_at(level)])
        .collect();
    for (path, mat) in node.entries.iter() {
        let entry_field = format!("{field}.node_table.entries[\"{path}\"]");
        let (level, node_idx) = tree
            .node_of_path(path)
            .map_err(|e| anyhow!("{entry_field}: {e}"))?;
        if level < first || level > last {
            bail!(
                "{entry_field}: path addresses level {level}, but this table covers \
                 levels {first}..={last}"
            );
        }
        blocks[level - first][node_idx] = Some(mat.to_mat(&entry_field, rows, cols)?);
    }
    let mut out = Vec::with_capacity(blocks.len());
    for (offset, level_blocks) in blocks.into_iter().enumerate() {
        let mut level_out = Vec::with_capacity(level_blocks.len());
        for (node_idx, block) in level_blocks.into_iter().enumerate() {
            match block.or_else(|| default.clone()) {
                Some(m) => level_out.push(m),
                None => bail!(
                    "{field}.node_table: node '{}' (level {}) has no entry and no default",
                    tree.path_of_node(first + offset, node_idx),
                    first + offset
                ),
            }
        }
        out.push(level_out);
    }
    Ok(out)
}
