//! Finite probability backend: a uniform time grid carrying a recombining-free
//! binary increment tree.
//!
//! Level `k` of the tree holds `2^k` nodes, one per sign pattern of the first
//! `k` driving increments. Each step the driving noise moves by `±sqrt(dt)`
//! (child `2n` is the "up" move, `2n+1` the "down" move), and every atom at
//! level `k` has probability `2^-k`. On this space conditional expectations
//! are plain two-child averages and the martingale representation is a finite
//! difference of the children, so adjoint/duality identities for the sweeps
//! built on top hold to machine precision instead of up to a discretisation
//! error.
//!
//! All reductions run in a fixed order (levels ascending, nodes ascending,
//! entries ascending) so repeated runs produce bit-identical results.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Hard cap on tree depth; level arrays grow as `2^k`.
pub const MAX_TREE_DEPTH: usize = 24;

/// Uniform grid on `[t0, t_end]` with `steps` intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid<T> {
    t0: T,
    t_end: T,
    steps: usize,
    dt: T,
}

impl<T: Scalar> TimeGrid<T> {
    pub fn new(t0: T, t_end: T, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidGrid("steps must be at least 1".into()));
        }
        if t_end <= t0 || !t0.is_finite() || !t_end.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "need finite t0 < t_end, got t0={t0}, t_end={t_end}"
            )));
        }
        let dt = (t_end - t0) / T::from_usize(steps);
        Ok(TimeGrid {
            t0,
            t_end,
            steps,
            dt,
        })
    }

    #[inline]
    pub fn t0(&self) -> T {
        self.t0
    }

    #[inline]
    pub fn t_end(&self) -> T {
        self.t_end
    }

    /// Number of intervals (levels run `0..=steps`).
    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn dt(&self) -> T {
        self.dt
    }

    /// Grid time of level `k`.
    pub fn time(&self, k: usize) -> T {
        debug_assert!(k <= self.steps);
        self.t0 + self.dt * T::from_usize(k)
    }
}

/// Binary increment tree over a [`TimeGrid`].
///
/// The structure is fully implicit — node counts, increments, and atom
/// probabilities are all functions of the level — so the type only stores the
/// grid and the cached square root of the step.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeSpace<T> {
    grid: TimeGrid<T>,
    sqrt_dt: T,
}

impl<T: Scalar> TreeSpace<T> {
    pub fn new(grid: TimeGrid<T>) -> Result<Self> {
        if grid.steps() > MAX_TREE_DEPTH {
            return Err(Error::Capacity {
                what: "tree depth".into(),
                size: grid.steps(),
                limit: MAX_TREE_DEPTH,
            });
        }
        let sqrt_dt = grid.dt().sqrt();
        Ok(TreeSpace { grid, sqrt_dt })
    }

    /// Convenience constructor: grid on `[t0, t_end]` with `steps` intervals.
    pub fn build(t0: T, t_end: T, steps: usize) -> Result<Self> {
        TreeSpace::new(TimeGrid::new(t0, t_end, steps)?)
    }

    #[inline]
    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    /// Number of time steps; leaves live at level `depth()`.
    #[inline]
    pub fn depth(&self) -> usize {
        self.grid.steps()
    }

    #[inline]
    pub fn dt(&self) -> T {
        self.grid.dt()
    }

    #[inline]
    pub fn sqrt_dt(&self) -> T {
        self.sqrt_dt
    }

    #[inline]
    pub fn nodes_at(&self, level: usize) -> usize {
        debug_assert!(level <= self.depth());
        1usize << level
    }

    /// Probability of each atom at `level`.
    #[inline]
    pub fn atom_prob(&self, level: usize) -> T {
        T::one() / T::from_usize(self.nodes_at(level))
    }

    /// Increment carried by the edge into a level-`k+1` child node:
    /// `+sqrt(dt)` for even (up) children, `-sqrt(dt)` for odd (down) ones.
    #[inline]
    pub fn increment_to(&self, child: usize) -> T {
        if child & 1 == 0 {
            self.sqrt_dt
        } else {
            -self.sqrt_dt
        }
    }

    /// Increments `dW_{k}` entering level `k+1`, as a level-`k+1` array.
    pub fn increments_into(&self, next_level: usize) -> NodeArray<T> {
        debug_assert!(next_level >= 1 && next_level <= self.depth());
        NodeArray::from_fn(next_level, 1, 1, |n, entry| {
            debug_assert_eq!(entry.len(), 1);
            entry[0] = self.increment_to(n);
        })
    }

    /// Driving-noise value `W(t_k)` at every node of level `k`
    /// (sum of the signed increments along the node's path).
    pub fn noise_level(&self, level: usize) -> NodeArray<T> {
        let mut w = NodeArray::zeros(0, 1, 1);
        for k in 1..=level {
            let prev = w;
            w = NodeArray::from_fn(k, 1, 1, |n, entry| {
                entry[0] = prev.node(n >> 1)[0] + self.increment_to(n);
            });
        }
        w
    }

    /// Parses an up/down path string (`""` is the root, `"ud"` a level-2
    /// node) into `(level, node_index)`.
    pub fn node_of_path(&self, path: &str) -> Result<(usize, usize)> {
        let level = path.len();
        if level > self.depth() {
            return Err(Error::InvalidGrid(format!(
                "path '{path}' is deeper than the tree ({} steps)",
                self.depth()
            )));
        }
        let mut idx = 0usize;
        for ch in path.chars() {
            idx = match ch {
                'u' => idx << 1,
                'd' => (idx << 1) | 1,
                other => {
                    return Err(Error::InvalidGrid(format!(
                        "path '{path}' contains '{other}'; only 'u' and 'd' are allowed"
                    )))
                }
            };
        }
        Ok((level, idx))
    }

    /// Inverse of [`TreeSpace::node_of_path`].
    pub fn path_of_node(&self, level: usize, node: usize) -> String {
        debug_assert!(node < self.nodes_at(level));
        let mut s = String::with_capacity(level);
        for bit in (0..level).rev() {
            s.push(if (node >> bit) & 1 == 0 { 'u' } else { 'd' });
        }
        s
    }
}

/// Values attached to every node of one tree level: a `rows x cols` block per
/// node, stored flat in node order.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeArray<T> {
    level: usize,
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> NodeArray<T> {
    pub fn zeros(level: usize, rows: usize, cols: usize) -> Self {
        NodeArray {
            level,
            rows,
            cols,
            data: vec![T::zero(); (1usize << level) * rows * cols],
        }
    }

    /// Same block broadcast to every node of the level.
    pub fn constant(level: usize, rows: usize, cols: usize, block: &[T]) -> Self {
        debug_assert_eq!(block.len(), rows * cols);
        let nodes = 1usize << level;
        let mut data = Vec::with_capacity(nodes * block.len());
        for _ in 0..nodes {
            data.extend_from_slice(block);
        }
        NodeArray {
            level,
            rows,
            cols,
            data,
        }
    }

    /// Fills node by node through a callback.
    pub fn from_fn(
        level: usize,
        rows: usize,
        cols: usize,
        mut fill: impl FnMut(usize, &mut [T]),
    ) -> Self {
        let mut arr = NodeArray::zeros(level, rows, cols);
        let stride = rows * cols;
        for n in 0..arr.nodes() {
            fill(n, &mut arr.data[n * stride..(n + 1) * stride]);
        }
        arr
    }

    #[inline]
    pub fn level(&self) -> usize {
        self.level
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
    pub fn entries_per_node(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        1usize << self.level
    }

    #[inline]
    pub fn node(&self, n: usize) -> &[T] {
        let stride = self.entries_per_node();
        &self.data[n * stride..(n + 1) * stride]
    }

    #[inline]
    pub fn node_mut(&mut self, n: usize) -> &mut [T] {
        let stride = self.entries_per_node();
        &mut self.data[n * stride..(n + 1) * stride]
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// `self += alpha * other` (same level and shape).
    pub fn add_scaled(&mut self, other: &NodeArray<T>, alpha: T) {
        debug_assert_eq!(self.level, other.level);
        debug_assert_eq!(self.entries_per_node(), other.entries_per_node());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += alpha * *b;
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for a in self.data.iter_mut() {
            *a *= alpha;
        }
    }

    /// Uniform average over the level's nodes, entry by entry.
    pub fn mean(&self) -> Vec<T> {
        let stride = self.entries_per_node();
        let mut acc = vec![T::zero(); stride];
        for n in 0..self.nodes() {
            let block = self.node(n);
            for (a, b) in acc.iter_mut().zip(block.iter()) {
                *a += *b;
            }
        }
        let inv = T::one() / T::from_usize(self.nodes());
        for a in acc.iter_mut() {
            *a *= inv;
        }
        acc
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(
            T::zero(),
            |acc, v| if v.abs() > acc { v.abs() } else { acc },
        )
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Adapted process: one [`NodeArray`] per level over a contiguous level range.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess<T> {
    first: usize,
    arrays: Vec<NodeArray<T>>,
}

impl<T: Scalar> AdaptedProcess<T> {
    /// Wraps per-level arrays; they must cover contiguous levels with one
    /// common block shape.
    pub fn new(arrays: Vec<NodeArray<T>>) -> Result<Self> {
        if arrays.is_empty() {
            return Err(Error::InvalidGrid(
                "a process needs at least one level".into(),
            ));
        }
        let first = arrays[0].level();
        let (r, c) = (arrays[0].rows(), arrays[0].cols());
        for (i, a) in arrays.iter().enumerate() {
            if a.level() != first + i || a.rows() != r || a.cols() != c {
                return Err(Error::ShapeMismatch {
                    context: "AdaptedProcess::new".into(),
                    expected: format!("level {} with {}x{} blocks", first + i, r, c),
                    got: format!("level {} with {}x{} blocks", a.level(), a.rows(), a.cols()),
                });
            }
        }
        Ok(AdaptedProcess { first, arrays })
    }

    pub fn zeros(first: usize, last: usize, rows: usize, cols: usize) -> Self {
        debug_assert!(last >= first);
        let arrays = (first..=last)
            .map(|k| NodeArray::zeros(k, rows, cols))
            .collect();
        AdaptedProcess { first, arrays }
    }

    /// Fills every node of every level through a callback `(level, node, block)`.
    pub fn from_fn(
        first: usize,
        last: usize,
        rows: usize,
        cols: usize,
        mut fill: impl FnMut(usize, usize, &mut [T]),
    ) -> Self {
        let arrays = (first..=last)
            .map(|k| NodeArray::from_fn(k, rows, cols, |n, block| fill(k, n, block)))
            .collect();
        AdaptedProcess { first, arrays }
    }

    #[inline]
    pub fn first_level(&self) -> usize {
        self.first
    }

    #[inline]
    pub fn last_level(&self) -> usize {
        self.first + self.arrays.len() - 1
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.arrays[0].rows()
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.arrays[0].cols()
    }

    /// Per-level array by absolute level index.
    #[inline]
    pub fn level(&self, k: usize) -> &NodeArray<T> {
        &self.arrays[k - self.first]
    }

    #[inline]
    pub fn level_mut(&mut self, k: usize) -> &mut NodeArray<T> {
        &mut self.arrays[k - self.first]
    }

    pub fn levels(&self) -> impl Iterator<Item = &NodeArray<T>> {
        self.arrays.iter()
    }

    pub fn same_layout(&self, other: &AdaptedProcess<T>) -> bool {
        self.first == other.first
            && self.arrays.len() == other.arrays.len()
            && self.rows() == other.rows()
            && self.cols() == other.cols()
    }

    /// Clone of the sub-range `first..=last` of this process.
    pub fn restricted(&self, first: usize, last: usize) -> Result<AdaptedProcess<T>> {
        if first < self.first_level() || last > self.last_level() || first > last {
            return Err(Error::ShapeMismatch {
                context: "restricted".into(),
                expected: format!(
                    "sub-range of {}..={}",
                    self.first_level(),
                    self.last_level()
                ),
                got: format!("{first}..={last}"),
            });
        }
        let offset = first - self.first_level();
        let count = last - first + 1;
        AdaptedProcess::new(self.arrays[offset..offset + count].to_vec())
    }

    /// `self += alpha * other` (same layout).
    pub fn add_scaled(&mut self, other: &AdaptedProcess<T>, alpha: T) {
        debug_assert!(self.same_layout(other));
        for (a, b) in self.arrays.iter_mut().zip(other.arrays.iter()) {
            a.add_scaled(b, alpha);
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for a in self.arrays.iter_mut() {
            a.scale(alpha);
        }
    }

    pub fn max_abs(&self) -> T {
        self.arrays.iter().fold(
            T::zero(),
            |acc, a| if a.max_abs() > acc { a.max_abs() } else { acc },
        )
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().all(|a| a.is_finite())
    }

    /// Flattens levels ascending, nodes ascending, entries ascending.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for a in self.arrays.iter() {
            out.extend_from_slice(a.data());
        }
        out
    }

    /// Inverse of [`AdaptedProcess::to_flat`] for a given layout.
    pub fn from_flat(
        first: usize,
        last: usize,
        rows: usize,
        cols: usize,
        flat: &[T],
    ) -> Result<Self> {
        let mut arrays = Vec::with_capacity(last - first + 1);
        let stride = rows * cols;
        let mut offset = 0usize;
        for k in first..=last {
            let len = (1usize << k) * stride;
            if offset + len > flat.len() {
                return Err(Error::ShapeMismatch {
                    context: "AdaptedProcess::from_flat".into(),
                    expected: format!("at least {} entries", offset + len),
                    got: format!("{}", flat.len()),
                });
            }
            let mut arr = NodeArray::zeros(k, rows, cols);
            arr.data_mut().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
            arrays.push(arr);
        }
        if offset != flat.len() {
            return Err(Error::ShapeMismatch {
                context: "AdaptedProcess::from_flat".into(),
                expected: format!("{offset} entries"),
                got: format!("{}", flat.len()),
            });
        }
        AdaptedProcess::new(arrays)
    }

    /// Total number of flat entries.
    pub fn flat_len(&self) -> usize {
        self.arrays.iter().map(|a| a.data().len()).sum()
    }
}

/// One-step conditional expectation: maps a level-`k` array (`k >= 1`) to the
/// level-`k-1` array of its two-child averages.
pub fn conditional_expectation<T: Scalar>(x: &NodeArray<T>) -> Result<NodeArray<T>> {
    if x.level() == 0 {
        return Err(Error::InvalidGrid(
            "conditional expectation below the root level does not exist".into(),
        ));
    }
    let stride = x.entries_per_node();
    let mut out = NodeArray::zeros(x.level() - 1, x.rows(), x.cols());
    for n in 0..out.nodes() {
        let up = x.node(2 * n);
        let down = x.node(2 * n + 1);
        let block = out.node_mut(n);
        for e in 0..stride {
            block[e] = (up[e] + down[e]) * T::half();
        }
    }
    Ok(out)
}

/// Exact one-step martingale representation `X = E + Z * dW` on the tree:
/// returns `(E, Z)` at level `k-1` with `E` the two-child average and
/// `Z = (X_up - X_down) / (2 sqrt(dt))`.
pub fn martingale_representation<T: Scalar>(
    x: &NodeArray<T>,
    tree: &TreeSpace<T>,
) -> Result<(NodeArray<T>, NodeArray<T>)> {
    if x.level() == 0 {
        return Err(Error::InvalidGrid(
            "martingale representation needs a level above the root".into(),
        ));
    }
    let stride = x.entries_per_node();
    let half_inv_sdt = T::half() / tree.sqrt_dt();
    let mut e = NodeArray::zeros(x.level() - 1, x.rows(), x.cols());
    let mut z = NodeArray::zeros(x.level() - 1, x.rows(), x.cols());
    for n in 0..e.nodes() {
        let up = x.node(2 * n);
        let down = x.node(2 * n + 1);
        let eb = e.node_mut(n);
        for i in 0..stride {
            eb[i] = (up[i] + down[i]) * T::half();
        }
        let zb = z.node_mut(n);
        for i in 0..stride {
            zb[i] = (up[i] - down[i]) * half_inv_sdt;
        }
    }
    Ok((e, z))
}

/// Expectation (probability-weighted average) of a level array.
pub fn expectation<T: Scalar>(x: &NodeArray<T>) -> Vec<T> {
    x.mean()
}

/// Time-weighted expected inner product of two processes with identical
/// layout: `sum_k dt * sum_n 2^-k <a_k(n), b_k(n)>`. This is the discrete
/// `E integral <a, b> ds` with left-endpoint weights, and the inner product
/// every control-space solver works in.
pub fn pair_processes<T: Scalar>(
    a: &AdaptedProcess<T>,
    b: &AdaptedProcess<T>,
    tree: &TreeSpace<T>,
) -> Result<T> {
    if !a.same_layout(b) {
        return Err(Error::ShapeMismatch {
            context: "pair_processes".into(),
            expected: format!(
                "levels {}..={} with {}x{} blocks",
                a.first_level(),
                a.last_level(),
                a.rows(),
                a.cols()
            ),
            got: format!(
                "levels {}..={} with {}x{} blocks",
                b.first_level(),
                b.last_level(),
                b.rows(),
                b.cols()
            ),
        });
    }
    let dt = tree.dt();
    let mut total = T::zero();
    for (xa, xb) in a.levels().zip(b.levels()) {
        let prob = tree.atom_prob(xa.level());
        let mut level_sum = T::zero();
        for (u, v) in xa.data().iter().zip(xb.data().iter()) {
            level_sum += *u * *v;
        }
        total += dt * prob * level_sum;
    }
    Ok(total)
}

/// Norm induced by [`pair_processes`].
pub fn process_norm<T: Scalar>(a: &AdaptedProcess<T>, tree: &TreeSpace<T>) -> T {
    pair_processes(a, a, tree)
        .expect("a process always pairs with itself")
        .max(T::zero())
        .sqrt()
}

/// Expected inner product of two leaf-level arrays:
/// `sum_n 2^-K <a(n), b(n)>`, the discrete `E <a, b>` at the horizon.
pub fn pair_terminal<T: Scalar>(
    a: &NodeArray<T>,
    b: &NodeArray<T>,
    tree: &TreeSpace<T>,
) -> Result<T> {
    if a.level() != tree.depth() || b.level() != tree.depth() {
        return Err(Error::ShapeMismatch {
            context: "pair_terminal".into(),
            expected: format!("two arrays at leaf level {}", tree.depth()),
            got: format!("levels {} and {}", a.level(), b.level()),
        });
    }
    if a.entries_per_node() != b.entries_per_node() {
        return Err(Error::ShapeMismatch {
            context: "pair_terminal".into(),
            expected: format!("{} entries per node", a.entries_per_node()),
            got: format!("{}", b.entries_per_node()),
        });
    }
    let prob = tree.atom_prob(tree.depth());
    let mut sum = T::zero();
    for (u, v) in a.data().iter().zip(b.data().iter()) {
        sum += *u * *v;
    }
    Ok(prob * sum)
}

/// Weight of each flat entry of a control-shaped process under
/// [`pair_processes`]: `dt * 2^-k` repeated for every entry of every node.
pub fn pair_weight_vector<T: Scalar>(
    tree: &TreeSpace<T>,
    first: usize,
    last: usize,
    entries_per_node: usize,
) -> Vec<T> {
    let dt = tree.dt();
    let mut w = Vec::new();
    for k in first..=last {
        let wk = dt * tree.atom_prob(k);
        w.extend(std::iter::repeat_n(wk, (1usize << k) * entries_per_node));
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(steps: usize) -> TreeSpace<f64> {
        TreeSpace::build(0.0, 1.0, steps).unwrap()
    }

    #[test]
    fn grid_rejects_degenerate_input() {
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
        assert!(TimeGrid::new(1.0, 1.0, 4).is_err());
        assert!(TimeGrid::new(2.0, 1.0, 4).is_err());
    }

    #[test]
    fn tree_depth_capacity_is_enforced() {
        assert!(TreeSpace::build(0.0, 1.0, MAX_TREE_DEPTH + 1).is_err());
    }

    #[test]
    fn increment_moments_are_exact() {
        let t = tree(4);
        for k in 1..=4 {
            let inc = t.increments_into(k);
            let mean = expectation(&inc)[0];
            assert_eq!(mean, 0.0);
            let mut second = 0.0;
            for n in 0..inc.nodes() {
                second += inc.node(n)[0].powi(2);
            }
            second /= inc.nodes() as f64;
            assert!((second - t.dt()).abs() < 1e-16);
        }
    }

    #[test]
    fn noise_level_sums_path_increments() {
        let t = tree(3);
        let w = t.noise_level(3);
        // Node "uuu" (index 0) has W = 3 sqrt(dt); "ddd" (index 7) the negative.
        assert!((w.node(0)[0] - 3.0 * t.sqrt_dt()).abs() < 1e-15);
        assert!((w.node(7)[0] + 3.0 * t.sqrt_dt()).abs() < 1e-15);
        // W is centered at every level.
        assert!(expectation(&w)[0].abs() < 1e-15);
    }

    #[test]
    fn path_strings_round_trip() {
        let t = tree(3);
        assert_eq!(t.node_of_path("").unwrap(), (0, 0));
        assert_eq!(t.node_of_path("u").unwrap(), (1, 0));
        assert_eq!(t.node_of_path("d").unwrap(), (1, 1));
        assert_eq!(t.node_of_path("ud").unwrap(), (2, 1));
        assert_eq!(t.node_of_path("du").unwrap(), (2, 2));
        for level in 0..=3 {
            for n in 0..t.nodes_at(level) {
                let p = t.path_of_node(level, n);
                assert_eq!(t.node_of_path(&p).unwrap(), (level, n));
            }
        }
        assert!(t.node_of_path("ux").is_err());
        assert!(t.node_of_path("uuuu").is_err());
    }

    #[test]
    fn conditional_expectation_of_constant_is_constant() {
        let arr = NodeArray::constant(3, 2, 1, &[1.5, -2.0]);
        let ce = conditional_expectation(&arr).unwrap();
        assert_eq!(ce.level(), 2);
        for n in 0..ce.nodes() {
            assert_eq!(ce.node(n), &[1.5, -2.0]);
        }
        let root = NodeArray::<f64>::zeros(0, 1, 1);
        assert!(conditional_expectation(&root).is_err());
    }

    #[test]
    fn conditional_expectation_kills_increments_and_squares_give_dt() {
        let t = tree(4);
        let inc = t.increments_into(3);
        let ce = conditional_expectation(&inc).unwrap();
        assert_eq!(ce.max_abs(), 0.0);
        let mut sq = inc.clone();
        for v in sq.data_mut().iter_mut() {
            *v = *v * *v;
        }
        let ce2 = conditional_expectation(&sq).unwrap();
        for n in 0..ce2.nodes() {
            assert!((ce2.node(n)[0] - t.dt()).abs() < 1e-16);
        }
    }

    #[test]
    fn martingale_representation_reconstructs_exactly() {
        let t = tree(5);
        // Arbitrary deterministic-but-messy level data.
        let x = NodeArray::from_fn(4, 3, 1, |n, block| {
            for (i, b) in block.iter_mut().enumerate() {
                *b = ((n * 7 + i * 3) as f64).sin() + 0.1 * n as f64;
            }
        });
        let (e, z) = martingale_representation(&x, &t).unwrap();
        // Dividing by 2*sqrt(dt) and multiplying back by sqrt(dt) costs a
        // couple of ulps, so the reconstruction check allows that much.
        for n in 0..e.nodes() {
            for i in 0..3 {
                let up = e.node(n)[i] + z.node(n)[i] * t.sqrt_dt();
                let down = e.node(n)[i] - z.node(n)[i] * t.sqrt_dt();
                assert!((up - x.node(2 * n)[i]).abs() <= 4.0 * f64::EPSILON);
                assert!((down - x.node(2 * n + 1)[i]).abs() <= 4.0 * f64::EPSILON);
            }
        }
    }

    #[test]
    fn pair_of_unit_processes_integrates_time() {
        // u = v = 1 over two levels of a unit horizon: the pairing is T - t0 = 1.
        let t = tree(2);
        let u = AdaptedProcess::from_fn(0, 1, 1, 1, |_, _, b| b[0] = 1.0);
        let got = pair_processes(&u, &u, &t).unwrap();
        assert!((got - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pair_terminal_of_noise_gives_horizon() {
        let t = tree(6);
        let w = t.noise_level(6);
        let got = pair_terminal(&w, &w, &t).unwrap();
        assert!((got - 1.0).abs() < 1e-13);
    }

    #[test]
    fn pairings_reject_mismatched_layouts() {
        let t = tree(3);
        let a = AdaptedProcess::<f64>::zeros(0, 2, 1, 1);
        let b = AdaptedProcess::<f64>::zeros(1, 2, 1, 1);
        assert!(pair_processes(&a, &b, &t).is_err());
        let leaf = NodeArray::<f64>::zeros(3, 1, 1);
        let not_leaf = NodeArray::<f64>::zeros(2, 1, 1);
        assert!(pair_terminal(&leaf, &not_leaf, &t).is_err());
    }

    #[test]
    fn flat_round_trip_preserves_order_and_weights_match() {
        let t = tree(3);
        let p = AdaptedProcess::from_fn(1, 2, 2, 1, |k, n, b| {
            b[0] = k as f64 + 0.1 * n as f64;
            b[1] = -(k as f64) - 0.01 * n as f64;
        });
        let flat = p.to_flat();
        let back = AdaptedProcess::from_flat(1, 2, 2, 1, &flat).unwrap();
        assert_eq!(p, back);
        let w = pair_weight_vector(&t, 1, 2, 2);
        assert_eq!(w.len(), flat.len());
        // Weighted flat dot equals pair_processes.
        let mut dot = 0.0;
        for i in 0..flat.len() {
            dot += w[i] * flat[i] * flat[i];
        }
        let pp = pair_processes(&p, &p, &t).unwrap();
        assert!((dot - pp).abs() < 1e-15);
    }
}
