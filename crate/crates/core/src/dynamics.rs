//! Heat-bath Glauber dynamics and its block variants.
//!
//! All chains here share the same stationary measure: the Ising–Gibbs
//! distribution on the free vertices given the frozen boundary. The moves
//! differ in granularity:
//!
//! * **single site** — pick a uniform vertex; a frozen vertex is a rejected
//!   (identity) step, a free vertex is resampled from its conditional law
//!   `P(+1) = (1 + tanh(beta S))/2`, `S` the sum of neighbour spins;
//! * **block** — resample an induced sub-forest exactly, conditioned on the
//!   spins outside it, via an upward message pass and a downward sampling
//!   pass ([`BlockUpdatePlan`]);
//! * **speedup** — single-site moves everywhere except at a small set `W`
//!   of designated vertices, each of which triggers the exact resampling
//!   of a larger block hanging at its ancestor ([`SpeedupSpec`]).
//!
//! The module also provides the exact distribution-level view of these
//! kernels on small state spaces ([`MaskContext`]), used for censoring
//! experiments and as the ground truth for spectral computations, and a
//! coupled two-chain experiment measuring how long the speedup chain run
//! on the tree can be kept identical, on the designated subtrees, to the
//! same chain run on a pruned forest.

use crate::error::{Error, Result};
use crate::gibbs::{log_odds_transfer, LogOdds};
use crate::tree::{IsingParams, ResolvedBoundary, SpinConfig, TreeShape};
use crate::util::{plus_prob_from_log_odds, replica_rng};
use rand::Rng;
use rayon::prelude::*;

/// Largest number of free vertices for exact distribution-level work.
pub const MAX_MASK_STATES: usize = 24;

/// Undirected graph on BFS-numbered vertices in which every vertex has at
/// most one neighbour with a smaller index (a rooted forest). Both the
/// tree itself and the pruned forests of the speedup construction satisfy
/// this, which is what lets block updates run as two sweeps.
#[derive(Debug, Clone)]
pub struct SpinGraph {
    adj: Vec<Vec<usize>>,
}

impl SpinGraph {
    /// The adjacency of a whole tree.
    pub fn tree(shape: &TreeShape) -> Self {
        let adj = (0..shape.n()).map(|v| shape.neighbors(v).collect()).collect();
        Self { adj }
    }

    /// A forest on `n` vertices from an explicit edge list. Each edge must
    /// connect two distinct in-range vertices, and every vertex must keep
    /// at most one smaller-indexed neighbour.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a == b || a >= n || b >= n {
                return Err(Error::invalid(format!("bad edge ({a}, {b})")));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        for (v, nb) in adj.iter_mut().enumerate() {
            nb.sort_unstable();
            nb.dedup();
            if nb.iter().filter(|&&u| u < v).count() > 1 {
                return Err(Error::invalid(format!(
                    "vertex {v} has more than one smaller-indexed neighbour; not a rooted forest"
                )));
            }
        }
        Ok(Self { adj })
    }

    /// Number of vertices.
    #[inline]
    pub fn n(&self) -> usize {
        self.adj.len()
    }

    /// Sorted neighbour list of `v`.
    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }
}

/// Conditional probability that a heat-bath update at `v` produces `+1`,
/// given the neighbour spins reported by `spin`.
pub fn heat_bath_plus_prob(
    graph: &SpinGraph,
    params: &IsingParams,
    spin: impl Fn(usize) -> i8,
    v: usize,
) -> f64 {
    let s: i32 = graph.neighbors(v).iter().map(|&u| i32::from(spin(u))).sum();
    plus_prob_from_log_odds(params.two_beta() * f64::from(s))
}

/// A `(site, uniform)` pair: the shared randomness of one grand-coupling
/// move. Applying the same move to every copy of the chain preserves the
/// coordinatewise order between copies.
#[derive(Debug, Clone, Copy)]
pub struct SiteUniform {
    pub site: usize,
    pub u: f64,
}

impl SiteUniform {
    /// Draws a uniform site in `0..n` and an independent uniform in `[0,1)`.
    pub fn draw<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        Self {
            site: rng.random_range(0..n),
            u: rng.random(),
        }
    }
}

/// Single-site heat-bath dynamics on a tree with a frozen boundary.
///
/// One step picks a vertex uniformly among *all* `n` vertices; picking a
/// frozen vertex rejects the move. This laziness convention matches the
/// speedup chain, which shares the same clock.
#[derive(Debug)]
pub struct GlauberDynamics<'a> {
    graph: SpinGraph,
    params: IsingParams,
    boundary: &'a ResolvedBoundary,
    n: usize,
}

impl<'a> GlauberDynamics<'a> {
    pub fn new(shape: &TreeShape, params: &IsingParams, boundary: &'a ResolvedBoundary) -> Self {
        Self {
            graph: SpinGraph::tree(shape),
            params: *params,
            boundary,
            n: shape.n(),
        }
    }

    /// Conditional `+1` probability of a heat-bath update at free `v`.
    pub fn plus_prob(&self, config: &SpinConfig, v: usize) -> f64 {
        debug_assert!(self.boundary.is_free(v));
        heat_bath_plus_prob(&self.graph, &self.params, |u| config.spin(u), v)
    }

    /// Applies one grand-coupling move. Returns `false` when the move was
    /// rejected because the site is frozen.
    pub fn apply(&self, config: &mut SpinConfig, mv: SiteUniform) -> bool {
        if !self.boundary.is_free(mv.site) {
            return false;
        }
        let p = self.plus_prob(config, mv.site);
        config.set_spin(mv.site, if mv.u < p { 1 } else { -1 });
        true
    }

    /// One step with fresh randomness.
    pub fn step<R: Rng + ?Sized>(&self, config: &mut SpinConfig, rng: &mut R) {
        let mv = SiteUniform::draw(self.n, rng);
        self.apply(config, mv);
    }

    /// Runs `steps` successive steps.
    pub fn run<R: Rng + ?Sized>(&self, config: &mut SpinConfig, steps: u64, rng: &mut R) {
        for _ in 0..steps {
            self.step(config, rng);
        }
    }
}

/// Exact conditional resampling of a block.
///
/// The block must induce a sub-forest of `graph` (automatic here, since
/// every graph in this module is a forest). Construction runs the upward
/// pass: with `x_w` the conditional log-odds of block vertex `w` in the
/// sub-forest hanging below it,
///
/// ```text
/// x_v = 2 beta Σ_{u ~ v, u outside} sigma_u  +  Σ_{w in-block child} f(x_w),
/// ```
///
/// after which the downward pass samples the block root from `x_root` and
/// every in-block child from `x_w + 2 beta sigma_parent`. The plan also
/// exposes the exact probability of each joint outcome — the quantity the
/// transition kernels and the enumeration oracles are built from — and
/// full conditional marginals via a second, downward message pass.
#[derive(Debug, Clone)]
pub struct BlockUpdatePlan {
    vertices: Vec<usize>,
    parent_pos: Vec<Option<usize>>,
    children_pos: Vec<Vec<usize>>,
    up: Vec<f64>,
    theta: f64,
    two_beta: f64,
}

impl BlockUpdatePlan {
    /// Builds the plan for `block` (sorted, distinct vertices) given the
    /// outside spins reported by `spin`.
    pub fn new(
        graph: &SpinGraph,
        params: &IsingParams,
        block: &[usize],
        spin: impl Fn(usize) -> i8,
    ) -> Result<Self> {
        if block.is_empty() {
            return Err(Error::invalid("block must be non-empty"));
        }
        if block.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("block vertices must be sorted and distinct"));
        }
        if *block.last().unwrap() >= graph.n() {
            return Err(Error::invalid("block vertex out of range"));
        }
        let k = block.len();
        let pos_of = |v: usize| block.binary_search(&v).ok();
        let mut parent_pos = vec![None; k];
        let mut children_pos = vec![Vec::new(); k];
        let mut external = vec![0.0f64; k];
        for (i, &v) in block.iter().enumerate() {
            for &u in graph.neighbors(v) {
                match pos_of(u) {
                    Some(j) => {
                        if u < v {
                            debug_assert!(parent_pos[i].is_none());
                            parent_pos[i] = Some(j);
                            children_pos[j].push(i);
                        }
                    }
                    None => external[i] += params.two_beta() * f64::from(spin(u)),
                }
            }
        }
        // Upward pass: children have larger indices, so iterate downwards.
        let mut up = external;
        for i in (0..k).rev() {
            // Children were discovered before their messages existed; fold
            // them in now that all larger positions are final.
            let msg: f64 = children_pos[i]
                .iter()
                .map(|&c| log_odds_transfer(params.theta(), LogOdds::new(up[c])).value())
                .sum();
            up[i] += msg;
        }
        Ok(Self {
            vertices: block.to_vec(),
            parent_pos,
            children_pos,
            up,
            theta: params.theta(),
            two_beta: params.two_beta(),
        })
    }

    /// The block vertices, in sampling order.
    #[inline]
    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    /// Conditional log-odds of block position `i` given its in-block
    /// parent spin (`None` for block roots).
    #[inline]
    fn conditional_log_odds(&self, i: usize, parent_spin: Option<i8>) -> f64 {
        self.up[i]
            + match parent_spin {
                Some(s) => self.two_beta * f64::from(s),
                None => 0.0,
            }
    }

    /// Samples the block using one uniform per position, in positional
    /// order. This is the coupling interface: sharing `us` across chains
    /// shares the randomness vertex by vertex.
    pub fn sample_with_uniforms(&self, us: &[f64]) -> Vec<i8> {
        assert_eq!(us.len(), self.vertices.len());
        let mut spins = vec![0i8; self.vertices.len()];
        for i in 0..self.vertices.len() {
            let parent = self.parent_pos[i].map(|p| spins[p]);
            let l = self.conditional_log_odds(i, parent);
            spins[i] = if us[i] < plus_prob_from_log_odds(l) {
                1
            } else {
                -1
            };
        }
        spins
    }

    /// Samples the block with fresh randomness.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<i8> {
        let us: Vec<f64> = (0..self.vertices.len()).map(|_| rng.random()).collect();
        self.sample_with_uniforms(&us)
    }

    /// Samples the block and writes the result into `config`.
    pub fn sample_into<R: Rng + ?Sized>(&self, config: &mut SpinConfig, rng: &mut R) {
        let spins = self.sample(rng);
        for (&v, &s) in self.vertices.iter().zip(&spins) {
            config.set_spin(v, s);
        }
    }

    /// Exact probability of the joint outcome `spins` (aligned with
    /// [`BlockUpdatePlan::vertices`]).
    pub fn outcome_prob(&self, spins: &[i8]) -> f64 {
        assert_eq!(spins.len(), self.vertices.len());
        let mut p = 1.0;
        for i in 0..self.vertices.len() {
            let parent = self.parent_pos[i].map(|q| spins[q]);
            let l = self.conditional_log_odds(i, parent);
            let plus = plus_prob_from_log_odds(l);
            p *= if spins[i] == 1 { plus } else { 1.0 - plus };
        }
        p
    }

    /// Exact probability of the outcome encoded as a bitmask (bit `i` set
    /// means position `i` gets `+1`).
    pub fn outcome_prob_mask(&self, mask: u64) -> f64 {
        let spins: Vec<i8> = (0..self.vertices.len())
            .map(|i| if mask >> i & 1 == 1 { 1 } else { -1 })
            .collect();
        self.outcome_prob(&spins)
    }

    /// Full conditional marginal log-odds of one block vertex, obtained by
    /// the downward pass with exclusion messages:
    ///
    /// ```text
    /// above[root] = 0,
    /// above[c]    = f(up[p] + above[p] - f(up[c])),
    /// marginal[v] = up[v] + above[v].
    /// ```
    pub fn marginal_log_odds(&self, v: usize) -> f64 {
        let i = self
            .vertices
            .binary_search(&v)
            .expect("vertex must belong to the block");
        let k = self.vertices.len();
        let mut above = vec![0.0f64; k];
        for p in 0..k {
            for &c in &self.children_pos[p] {
                let excluded =
                    self.up[p] + above[p] - log_odds_transfer(self.theta, LogOdds::new(self.up[c])).value();
                above[c] = log_odds_transfer(self.theta, LogOdds::new(excluded)).value();
            }
        }
        self.up[i] + above[i]
    }
}

/// A family of blocks covering the free region.
#[derive(Debug, Clone)]
pub struct BlockCover {
    blocks: Vec<Vec<usize>>,
    multiplicity: Vec<usize>,
}

impl BlockCover {
    /// Validates that every block is a sorted set of free vertices and
    /// that their union is the whole free region.
    pub fn new(boundary: &ResolvedBoundary, blocks: Vec<Vec<usize>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::invalid("cover must contain at least one block"));
        }
        let max_id = blocks
            .iter()
            .flat_map(|b| b.iter().copied())
            .chain(boundary.free().iter().copied())
            .max()
            .unwrap_or(0);
        let mut multiplicity = vec![0usize; max_id + 1];
        for (bi, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(Error::invalid(format!("block {bi} is empty")));
            }
            if block.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!(
                    "block {bi} is not sorted with distinct vertices"
                )));
            }
            for &v in block {
                if !boundary.is_free(v) {
                    return Err(Error::invalid(format!(
                        "block {bi} contains frozen vertex {v}"
                    )));
                }
                multiplicity[v] += 1;
            }
        }
        for &v in boundary.free() {
            if multiplicity[v] == 0 {
                return Err(Error::invalid(format!(
                    "free vertex {v} is not covered by any block"
                )));
            }
        }
        Ok(Self {
            blocks,
            multiplicity,
        })
    }

    /// The blocks.
    #[inline]
    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Number of blocks containing vertex `v`.
    #[inline]
    pub fn multiplicity(&self, v: usize) -> usize {
        self.multiplicity.get(v).copied().unwrap_or(0)
    }

    /// Largest multiplicity over all vertices.
    pub fn max_multiplicity(&self) -> usize {
        self.multiplicity.iter().copied().max().unwrap_or(0)
    }
}

/// The first `depth` levels of the subtree of `v` (at least 1), flattened
/// to a sorted vertex list.
pub fn truncated_subtree_block(shape: &TreeShape, v: usize, depth: u32) -> Vec<usize> {
    debug_assert!(depth >= 1);
    (0..depth)
        .flat_map(|j| shape.descendants_at(v, j))
        .collect()
}

/// The two-scale cover: one block of the top `r` levels plus one block of
/// `r` levels below each vertex of level `ell`, with `ell = floor(alpha h)`
/// and `r = h - ell`.
///
/// Requires a boundary freezing exactly the leaf level, `ell >= 1` (reject
/// `alpha` too small for the height) and `ell <= r`. Levels `ell` through
/// `r - 1` are covered twice, every other free level once, so the maximum
/// multiplicity is 2.
#[derive(Debug, Clone)]
pub struct TwoScaleCover {
    ell: u32,
    r: u32,
    cover: BlockCover,
}

impl TwoScaleCover {
    pub fn new(shape: &TreeShape, boundary: &ResolvedBoundary, alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        for v in 0..shape.n() {
            let should_be_free = !shape.is_leaf(v);
            if boundary.is_free(v) != should_be_free {
                return Err(Error::invalid(
                    "two-scale cover requires a boundary freezing exactly the leaf level",
                ));
            }
        }
        let ell = (alpha * f64::from(shape.h())).floor() as u32;
        if ell == 0 {
            return Err(Error::invalid(format!(
                "alpha = {alpha} gives a zero bottom scale at height {}",
                shape.h()
            )));
        }
        let r = shape.h() - ell;
        if ell > r {
            return Err(Error::invalid(format!(
                "alpha = {alpha} gives scales ell = {ell} > r = {r}; the cover would leave a gap"
            )));
        }
        let mut blocks = vec![truncated_subtree_block(shape, shape.root(), r)];
        for v in shape.level(ell) {
            blocks.push(truncated_subtree_block(shape, v, r));
        }
        let cover = BlockCover::new(boundary, blocks)?;
        Ok(Self { ell, r, cover })
    }

    /// Bottom scale `ell = floor(alpha h)`.
    #[inline]
    pub fn ell(&self) -> u32 {
        self.ell
    }

    /// Top scale `r = h - ell`.
    #[inline]
    pub fn r(&self) -> u32 {
        self.r
    }

    /// The underlying validated cover.
    #[inline]
    pub fn cover(&self) -> &BlockCover {
        &self.cover
    }
}

/// Block dynamics: one step resamples a uniformly chosen block of a cover.
#[derive(Debug)]
pub struct BlockDynamics<'a> {
    graph: SpinGraph,
    params: IsingParams,
    cover: &'a BlockCover,
}

impl<'a> BlockDynamics<'a> {
    pub fn new(shape: &TreeShape, params: &IsingParams, cover: &'a BlockCover) -> Self {
        Self {
            graph: SpinGraph::tree(shape),
            params: *params,
            cover,
        }
    }

    /// Resamples block `index` exactly, conditioned on everything else.
    pub fn update_block<R: Rng + ?Sized>(
        &self,
        config: &mut SpinConfig,
        index: usize,
        rng: &mut R,
    ) -> Result<()> {
        let block = &self.cover.blocks()[index];
        let plan = BlockUpdatePlan::new(&self.graph, &self.params, block, |u| config.spin(u))?;
        plan.sample_into(config, rng);
        Ok(())
    }

    /// One step: uniform block choice, then an exact block resample.
    pub fn step<R: Rng + ?Sized>(&self, config: &mut SpinConfig, rng: &mut R) -> Result<()> {
        let index = rng.random_range(0..self.cover.blocks().len());
        self.update_block(config, index, rng)
    }
}

/// The speedup construction: designated vertices and their blocks.
///
/// For scales `1 <= ell < r <= h`, each vertex `v` on level `ell` gets a
/// designated descendant `w_v` on level `r` (always along first children),
/// the path `L_v` from `v` down to `w_v`, and the block
/// `B_v = (T_v \ T_{w_v}) ∪ {w_v}` — the whole subtree of `v` with the
/// part strictly below `w_v` cut away. The blocks are pairwise disjoint.
/// The pruned forest `F` keeps only the paths and the subtrees `T_{w_v}`;
/// the union `G` of those subtrees is where the tree chain and the forest
/// chain are compared.
#[derive(Debug, Clone)]
pub struct SpeedupSpec {
    ell: u32,
    r: u32,
    anchors: Vec<usize>,
    designated: Vec<usize>,
}

impl SpeedupSpec {
    pub fn new(shape: &TreeShape, ell: u32, r: u32) -> Result<Self> {
        if ell == 0 || ell >= r || r > shape.h() {
            return Err(Error::invalid(format!(
                "speedup scales must satisfy 1 <= ell < r <= h, got ell = {ell}, r = {r}, h = {}",
                shape.h()
            )));
        }
        let anchors: Vec<usize> = shape.level(ell).collect();
        let designated: Vec<usize> = anchors
            .iter()
            .map(|&v| shape.descendants_at(v, r - ell).start)
            .collect();
        Ok(Self {
            ell,
            r,
            anchors,
            designated,
        })
    }

    #[inline]
    pub fn ell(&self) -> u32 {
        self.ell
    }

    #[inline]
    pub fn r(&self) -> u32 {
        self.r
    }

    /// The level-`ell` anchors `v`, in BFS order.
    #[inline]
    pub fn anchors(&self) -> &[usize] {
        &self.anchors
    }

    /// The designated vertices `W = {w_v}`, aligned with
    /// [`SpeedupSpec::anchors`].
    #[inline]
    pub fn designated(&self) -> &[usize] {
        &self.designated
    }

    /// Index of `u` within `W`, if `u` is designated.
    pub fn designated_index(&self, u: usize) -> Option<usize> {
        // `designated` is increasing because anchors are.
        self.designated.binary_search(&u).ok()
    }

    /// The block `B_v` for anchor index `i`, sorted.
    pub fn block(&self, shape: &TreeShape, i: usize) -> Vec<usize> {
        let v = self.anchors[i];
        let w = self.designated[i];
        let mut block: Vec<usize> = Vec::new();
        for range in shape.subtree_ranges(v) {
            for u in range {
                let ku = shape.level_of(u);
                let below_w = ku >= self.r && shape.descendants_at(w, ku - self.r).contains(&u);
                if !below_w || u == w {
                    block.push(u);
                }
            }
        }
        block
    }

    /// The path `L_v` from anchor `i` down to its designated vertex,
    /// inclusive.
    pub fn path(&self, shape: &TreeShape, i: usize) -> Vec<usize> {
        let mut path = vec![self.anchors[i]];
        for _ in self.ell..self.r {
            path.push(shape.child(*path.last().unwrap(), 0));
        }
        debug_assert_eq!(*path.last().unwrap(), self.designated[i]);
        path
    }

    /// The designated subtree `T_{w_v}` for anchor index `i`, sorted.
    pub fn designated_subtree(&self, shape: &TreeShape, i: usize) -> Vec<usize> {
        shape.subtree_ranges(self.designated[i]).flatten().collect()
    }

    /// All vertices of `G = ∪ T_{w_v}`, sorted.
    pub fn designated_region(&self, shape: &TreeShape) -> Vec<usize> {
        let mut g: Vec<usize> = (0..self.designated.len())
            .flat_map(|i| self.designated_subtree(shape, i))
            .collect();
        g.sort_unstable();
        g
    }

    /// The pruned forest `F = ∪ (L_v ∪ T_{w_v})` as a graph on all `n`
    /// vertex ids (vertices outside `F` are isolated).
    pub fn forest_graph(&self, shape: &TreeShape) -> SpinGraph {
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for i in 0..self.anchors.len() {
            let path = self.path(shape, i);
            for pair in path.windows(2) {
                edges.push((pair[0], pair[1]));
            }
            for u in self.designated_subtree(shape, i) {
                if u != self.designated[i] {
                    edges.push((shape.parent(u).unwrap(), u));
                }
            }
        }
        SpinGraph::from_edges(shape.n(), &edges).expect("speedup forest is a valid rooted forest")
    }

    /// Membership mask for `F`.
    pub fn forest_membership(&self, shape: &TreeShape) -> Vec<bool> {
        let mut inside = vec![false; shape.n()];
        for i in 0..self.anchors.len() {
            for u in self.path(shape, i) {
                inside[u] = true;
            }
            for u in self.designated_subtree(shape, i) {
                inside[u] = true;
            }
        }
        inside
    }
}

/// The speedup chain on a fully free tree: uniform site `u`; designated
/// sites trigger their block update, every other site a heat-bath move.
#[derive(Debug)]
pub struct SpeedupDynamics<'a> {
    graph: SpinGraph,
    params: IsingParams,
    spec: &'a SpeedupSpec,
    blocks: Vec<Vec<usize>>,
    n: usize,
}

impl<'a> SpeedupDynamics<'a> {
    pub fn new(shape: &TreeShape, params: &IsingParams, spec: &'a SpeedupSpec) -> Self {
        let blocks = (0..spec.anchors().len())
            .map(|i| spec.block(shape, i))
            .collect();
        Self {
            graph: SpinGraph::tree(shape),
            params: *params,
            spec,
            blocks,
            n: shape.n(),
        }
    }

    /// The precomputed blocks `B_v`, aligned with the anchors.
    #[inline]
    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// One step of the chain.
    pub fn step<R: Rng + ?Sized>(&self, config: &mut SpinConfig, rng: &mut R) {
        let u = rng.random_range(0..self.n);
        match self.spec.designated_index(u) {
            Some(i) => {
                let plan =
                    BlockUpdatePlan::new(&self.graph, &self.params, &self.blocks[i], |x| {
                        config.spin(x)
                    })
                    .expect("speedup blocks are valid");
                plan.sample_into(config, rng);
            }
            None => {
                let p = heat_bath_plus_prob(&self.graph, &self.params, |x| config.spin(x), u);
                let s = if rng.random::<f64>() < p { 1 } else { -1 };
                config.set_spin(u, s);
            }
        }
    }
}

/// Exact distribution-level view of the dynamics on the free-vertex masks.
///
/// States are bitmasks over the free vertices in BFS order (bit `i` set
/// means free vertex `i` carries `+1`), the same convention as the
/// enumeration tables in [`crate::gibbs`].
#[derive(Debug)]
pub struct MaskContext<'a> {
    graph: SpinGraph,
    params: IsingParams,
    boundary: &'a ResolvedBoundary,
}

impl<'a> MaskContext<'a> {
    pub fn new(
        shape: &TreeShape,
        params: &IsingParams,
        boundary: &'a ResolvedBoundary,
    ) -> Result<Self> {
        if boundary.n_free() > MAX_MASK_STATES {
            return Err(Error::SizeGuard {
                what: "free vertices in distribution-level dynamics",
                size: boundary.n_free(),
                limit: MAX_MASK_STATES,
            });
        }
        Ok(Self {
            graph: SpinGraph::tree(shape),
            params: *params,
            boundary,
        })
    }

    /// Number of states (`2^n_free`).
    #[inline]
    pub fn n_states(&self) -> usize {
        1usize << self.boundary.n_free()
    }

    /// Spin of vertex `v` in the state `mask`.
    #[inline]
    pub fn spin_in_mask(&self, mask: u64, v: usize) -> i8 {
        match self.boundary.frozen_spin(v) {
            Some(s) => s,
            None => {
                if mask >> self.boundary.free_index(v).unwrap() & 1 == 1 {
                    1
                } else {
                    -1
                }
            }
        }
    }

    /// Heat-bath `+1` probability at free vertex `v` in state `mask`.
    pub fn site_plus_prob(&self, mask: u64, v: usize) -> f64 {
        debug_assert!(self.boundary.is_free(v));
        heat_bath_plus_prob(&self.graph, &self.params, |u| self.spin_in_mask(mask, u), v)
    }

    /// Pushes a distribution over states through the heat-bath kernel at
    /// free vertex `v`, in place and exactly: for every pair of states
    /// differing only at `v`, the combined mass is redistributed according
    /// to the conditional law.
    pub fn apply_site_kernel(&self, dist: &mut [f64], v: usize) -> Result<()> {
        let bit_index = self
            .boundary
            .free_index(v)
            .ok_or_else(|| Error::invalid(format!("vertex {v} is frozen; cannot update it")))?;
        if dist.len() != self.n_states() {
            return Err(Error::invalid(format!(
                "distribution has {} entries, expected {}",
                dist.len(),
                self.n_states()
            )));
        }
        let bit = 1u64 << bit_index;
        for mask in 0..dist.len() as u64 {
            if mask & bit != 0 {
                continue;
            }
            let m0 = mask as usize;
            let m1 = (mask | bit) as usize;
            let total = dist[m0] + dist[m1];
            if total == 0.0 {
                continue;
            }
            // Neighbour spins agree between the two states.
            let p = self.site_plus_prob(mask, v);
            dist[m1] = total * p;
            dist[m0] = total * (1.0 - p);
        }
        Ok(())
    }

    /// Exact law of the chain started from the all-plus configuration and
    /// driven through the deterministic update `schedule` (a sequence of
    /// free vertices, applied left to right).
    ///
    /// The all-plus start is the maximal state, which is what makes
    /// censored (sub-)schedules comparable to the full schedule.
    pub fn censored_run(&self, schedule: &[usize]) -> Result<Vec<f64>> {
        let mut dist = vec![0.0; self.n_states()];
        dist[self.n_states() - 1] = 1.0;
        for &v in schedule {
            self.apply_site_kernel(&mut dist, v)?;
        }
        Ok(dist)
    }
}

/// One point of the coupled-chain survival curve.
#[derive(Debug, Clone, Copy)]
pub struct SurvivalPoint {
    /// Continuous time.
    pub t: f64,
    /// Fraction of replicas whose chains still agreed on `G` at time `t`.
    pub survival: f64,
    /// Binomial standard error of that fraction.
    pub std_error: f64,
}

/// Runs the coupled pair of speedup chains — `X` on the whole (free) tree,
/// `Y` on the pruned forest `F` — and records when they first disagree on
/// the designated region `G`.
///
/// Both chains start all-plus and share a single clock: events arrive at
/// rate `n`, each picking a uniform site.
///
/// * Site outside `F`, not designated: `X` makes a heat-bath move; `Y` has
///   no such vertex and idles.
/// * Site in `F`, not designated: both make a heat-bath move with the same
///   uniform, each reading its own neighbourhood (tree vs forest).
/// * Designated site `w_v`: `X` resamples `B_v` and `Y` resamples the path
///   `L_v`. The coupling first fixes `sigma_{w_v}` in both chains with one
///   shared uniform against each chain's exact conditional marginal (a
///   two-pass message computation over the respective block), then fills
///   in the rest of both blocks with shared per-vertex uniforms.
///
/// Before the first disagreement the chains are provably identical on `G`,
/// so a disagreement can only be created at a designated vertex, at rate
/// at most `b^ell · theta^(r-ell)`; the survival curve should therefore
/// dominate `exp(-b^ell theta^(r-ell) t)` up to statistical error.
pub fn coupling_survival_experiment(
    shape: &TreeShape,
    params: &IsingParams,
    spec: &SpeedupSpec,
    t_grid: &[f64],
    replicas: u64,
    seed: u64,
) -> Result<Vec<SurvivalPoint>> {
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[0] >= w[1]) || t_grid[0] <= 0.0 {
        return Err(Error::invalid(
            "time grid must be non-empty, positive and strictly increasing",
        ));
    }
    if replicas < 2 {
        return Err(Error::invalid("need at least two replicas"));
    }
    let t_max = *t_grid.last().unwrap();
    let tree = SpinGraph::tree(shape);
    let forest = spec.forest_graph(shape);
    let in_forest = spec.forest_membership(shape);
    let blocks: Vec<Vec<usize>> = (0..spec.anchors().len())
        .map(|i| spec.block(shape, i))
        .collect();
    let paths: Vec<Vec<usize>> = (0..spec.anchors().len())
        .map(|i| spec.path(shape, i))
        .collect();
    let n = shape.n();

    let taus: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replica_rng(seed, rep);
            let mut x = SpinConfig::all_plus(n);
            let mut y = vec![1i8; n];
            let mut uniforms = vec![0.0f64; n];
            let mut t = 0.0f64;
            loop {
                // Exponential inter-arrival at total rate n.
                let e: f64 = -(1.0 - rng.random::<f64>()).ln();
                t += e / n as f64;
                if t > t_max {
                    return f64::INFINITY;
                }
                let site = rng.random_range(0..n);
                match spec.designated_index(site) {
                    None => {
                        let u: f64 = rng.random();
                        let px = heat_bath_plus_prob(&tree, params, |v| x.spin(v), site);
                        x.set_spin(site, if u < px { 1 } else { -1 });
                        if in_forest[site] {
                            let py = heat_bath_plus_prob(&forest, params, |v| y[v], site);
                            y[site] = if u < py { 1 } else { -1 };
                        }
                    }
                    Some(i) => {
                        let w = spec.designated()[i];
                        let plan_x =
                            BlockUpdatePlan::new(&tree, params, &blocks[i], |v| x.spin(v))
                                .expect("speedup block is valid");
                        let plan_y =
                            BlockUpdatePlan::new(&forest, params, &paths[i], |v| y[v])
                                .expect("speedup path is valid");
                        let px = plus_prob_from_log_odds(plan_x.marginal_log_odds(w));
                        let py = plus_prob_from_log_odds(plan_y.marginal_log_odds(w));
                        let shared: f64 = rng.random();
                        let sx = if shared < px { 1i8 } else { -1 };
                        let sy = if shared < py { 1i8 } else { -1 };
                        x.set_spin(w, sx);
                        y[w] = sy;
                        // Conditional rest: shared per-vertex uniforms over
                        // the reduced blocks (w now acts as boundary).
                        let rest_x: Vec<usize> =
                            blocks[i].iter().copied().filter(|&v| v != w).collect();
                        for &v in &rest_x {
                            uniforms[v] = rng.random();
                        }
                        let reduced_x =
                            BlockUpdatePlan::new(&tree, params, &rest_x, |v| x.spin(v))
                                .expect("reduced block is valid");
                        let us: Vec<f64> =
                            reduced_x.vertices().iter().map(|&v| uniforms[v]).collect();
                        for (&v, &s) in reduced_x.vertices().iter().zip(
                            reduced_x.sample_with_uniforms(&us).iter(),
                        ) {
                            x.set_spin(v, s);
                        }
                        let rest_y: Vec<usize> =
                            paths[i].iter().copied().filter(|&v| v != w).collect();
                        if !rest_y.is_empty() {
                            let reduced_y =
                                BlockUpdatePlan::new(&forest, params, &rest_y, |v| y[v])
                                    .expect("reduced path is valid");
                            let us: Vec<f64> =
                                reduced_y.vertices().iter().map(|&v| uniforms[v]).collect();
                            for (&v, &s) in reduced_y.vertices().iter().zip(
                                reduced_y.sample_with_uniforms(&us).iter(),
                            ) {
                                y[v] = s;
                            }
                        }
                        if sx != sy {
                            return t;
                        }
                    }
                }
            }
        })
        .collect();

    let r = replicas as f64;
    Ok(t_grid
        .iter()
        .map(|&t| {
            let alive = taus.iter().filter(|&&tau| tau > t).count() as f64;
            let p = alive / r;
            SurvivalPoint {
                t,
                survival: p,
                std_error: (p * (1.0 - p) / r).sqrt(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::GibbsTable;
    use crate::tree::BoundaryCondition;
    use crate::util::neumaier_sum;

    const ENUM_TOL: f64 = 1e-10;

    fn free_tree(b: u32, h: u32) -> (TreeShape, ResolvedBoundary) {
        let shape = TreeShape::new(b, h).unwrap();
        let boundary = BoundaryCondition::Free.resolve(&shape).unwrap();
        (shape, boundary)
    }

    #[test]
    fn tree_graph_matches_shape_neighbors() {
        let shape = TreeShape::new(3, 2).unwrap();
        let g = SpinGraph::tree(&shape);
        for v in 0..shape.n() {
            let want: Vec<usize> = shape.neighbors(v).collect();
            assert_eq!(g.neighbors(v), want.as_slice());
        }
    }

    #[test]
    fn from_edges_rejects_non_forest() {
        // Vertex 2 with two smaller neighbours.
        assert!(SpinGraph::from_edges(3, &[(0, 2), (1, 2)]).is_err());
        assert!(SpinGraph::from_edges(3, &[(0, 1), (1, 2)]).is_ok());
    }

    #[test]
    fn heat_bath_probability_matches_formula() {
        let (shape, _) = free_tree(2, 1);
        let g = SpinGraph::tree(&shape);
        let params = IsingParams::from_beta(0.6).unwrap();
        // Root with both children +1: S = 2.
        let p = heat_bath_plus_prob(&g, &params, |_| 1, 0);
        assert!((p - plus_prob_from_log_odds(4.0 * 0.6)).abs() < 1e-15);
        // Leaf sees only its parent.
        let p = heat_bath_plus_prob(&g, &params, |v| if v == 0 { -1 } else { 1 }, 1);
        assert!((p - plus_prob_from_log_odds(-2.0 * 0.6)).abs() < 1e-15);
    }

    #[test]
    fn single_site_kernel_is_stationary_for_gibbs() {
        let (shape, boundary) = free_tree(2, 2);
        let params = IsingParams::critical(2).unwrap();
        let table = GibbsTable::new(&shape, &params, &boundary).unwrap();
        let ctx = MaskContext::new(&shape, &params, &boundary).unwrap();
        for v in 0..shape.n() {
            let mut dist = table.distribution().to_vec();
            ctx.apply_site_kernel(&mut dist, v).unwrap();
            for (m, &p) in dist.iter().enumerate() {
                assert!(
                    (p - table.prob(m as u64)).abs() < 1e-14,
                    "site {v} moved stationary mass at state {m}"
                );
            }
        }
    }

    #[test]
    fn block_plan_matches_conditional_enumeration() {
        // Resampling {1, 3, 4} given the rest must reproduce the exact
        // conditional law of the Gibbs measure.
        let (shape, boundary) = free_tree(2, 2);
        let params = IsingParams::from_beta(0.9).unwrap();
        let table = GibbsTable::new(&shape, &params, &boundary).unwrap();
        let g = SpinGraph::tree(&shape);
        let block = vec![1usize, 3, 4];
        // Fix an arbitrary environment: spins of 0, 2, 5, 6.
        let env = [(0usize, 1i8), (2, -1), (5, -1), (6, 1)];
        let spin_of = |v: usize| env.iter().find(|&&(u, _)| u == v).map(|&(_, s)| s).unwrap_or(0);
        let plan = BlockUpdatePlan::new(&g, &params, &block, spin_of).unwrap();
        for mask in 0..8u64 {
            let spins: Vec<i8> = (0..3).map(|i| if mask >> i & 1 == 1 { 1 } else { -1 }).collect();
            let mut cond: Vec<(usize, i8)> = env.to_vec();
            let joint: Vec<(usize, i8)> = block.iter().copied().zip(spins.iter().copied()).collect();
            cond.extend(&joint);
            // P(block = spins | env) from the table.
            let p_joint = table.mean_of(|t, m| {
                if cond.iter().all(|&(v, s)| t.spin_at(m, v) == s) {
                    1.0
                } else {
                    0.0
                }
            });
            let p_env = table.mean_of(|t, m| {
                if env.iter().all(|&(v, s)| t.spin_at(m, v) == s) {
                    1.0
                } else {
                    0.0
                }
            });
            let expected = p_joint / p_env;
            let got = plan.outcome_prob(&spins);
            assert!(
                (got - expected).abs() < ENUM_TOL,
                "outcome {spins:?}: plan {got} vs enumeration {expected}"
            );
            assert!((got - plan.outcome_prob_mask(mask)).abs() < 1e-15);
        }
        // Outcome probabilities must sum to one.
        let total: f64 = (0..8u64).map(|m| plan.outcome_prob_mask(m)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn block_marginal_matches_conditional_enumeration() {
        let (shape, boundary) = free_tree(2, 2);
        let params = IsingParams::critical(2).unwrap();
        let table = GibbsTable::new(&shape, &params, &boundary).unwrap();
        let g = SpinGraph::tree(&shape);
        // Block containing the root and one child-chain; marginal of the
        // middle vertex given the environment.
        let block = vec![0usize, 1, 3];
        let env = [(2usize, 1i8), (4, -1), (5, 1), (6, 1)];
        let spin_of = |v: usize| env.iter().find(|&&(u, _)| u == v).map(|&(_, s)| s).unwrap_or(0);
        let plan = BlockUpdatePlan::new(&g, &params, &block, spin_of).unwrap();
        for &target in &block {
            let want = table.conditional_marginal_plus(&env, target);
            let got = plus_prob_from_log_odds(plan.marginal_log_odds(target));
            assert!(
                (got - want).abs() < ENUM_TOL,
                "marginal at {target}: message passing {got} vs enumeration {want}"
            );
        }
    }

    #[test]
    fn shared_uniform_block_sampling_is_monotone() {
        let (shape, _) = free_tree(2, 3);
        let params = IsingParams::critical(2).unwrap();
        let g = SpinGraph::tree(&shape);
        let block: Vec<usize> = vec![1, 3, 4, 7, 8, 9, 10];
        let mut rng = replica_rng(3, 0);
        for _ in 0..50 {
            let hi_env: Vec<i8> = (0..shape.n()).map(|_| 1).collect();
            let lo_env: Vec<i8> = (0..shape.n())
                .map(|_| if rng.random::<bool>() { 1 } else { -1 })
                .collect();
            let plan_hi = BlockUpdatePlan::new(&g, &params, &block, |v| hi_env[v]).unwrap();
            let plan_lo = BlockUpdatePlan::new(&g, &params, &block, |v| lo_env[v]).unwrap();
            let us: Vec<f64> = (0..block.len()).map(|_| rng.random()).collect();
            let s_hi = plan_hi.sample_with_uniforms(&us);
            let s_lo = plan_lo.sample_with_uniforms(&us);
            for i in 0..block.len() {
                assert!(
                    s_hi[i] >= s_lo[i],
                    "shared uniforms must preserve the environment order"
                );
            }
        }
    }

    #[test]
    fn grand_coupling_preserves_order() {
        let (shape, boundary) = free_tree(2, 2);
        let params = IsingParams::critical(2).unwrap();
        let dyn_ = GlauberDynamics::new(&shape, &params, &boundary);
        let mut hi = SpinConfig::all_plus(shape.n());
        let mut lo = SpinConfig::all_minus(shape.n());
        let mut rng = replica_rng(8, 0);
        for step in 0..2000 {
            let mv = SiteUniform::draw(shape.n(), &mut rng);
            dyn_.apply(&mut hi, mv);
            dyn_.apply(&mut lo, mv);
            assert!(hi.dominates(&lo), "order lost at step {step}");
        }
    }

    #[test]
    fn frozen_sites_reject_moves() {
        let shape = TreeShape::new(2, 1).unwrap();
        let params = IsingParams::critical(2).unwrap();
        let boundary = BoundaryCondition::AllPlus.resolve(&shape).unwrap();
        let dyn_ = GlauberDynamics::new(&shape, &params, &boundary);
        let mut cfg = SpinConfig::all_plus(shape.n());
        // Forcing u = 0.999 would flip a free site to -1 with overwhelming
        // probability, but a frozen site must stay put.
        assert!(!dyn_.apply(&mut cfg, SiteUniform { site: 1, u: 0.999 }));
        assert_eq!(cfg.spin(1), 1);
    }

    #[test]
    fn two_scale_cover_has_expected_blocks_and_multiplicities() {
        let shape = TreeShape::new(2, 4).unwrap();
        let boundary = BoundaryCondition::AllPlus.resolve(&shape).unwrap();
        let ts = TwoScaleCover::new(&shape, &boundary, 0.25).unwrap();
        assert_eq!(ts.ell(), 1);
        assert_eq!(ts.r(), 3);
        assert_eq!(ts.cover().blocks().len(), 3, "root block plus one per level-1 vertex");
        // Level multiplicities: 1, 2, 2, 1 for levels 0..=3.
        for (k, want) in [(0u32, 1usize), (1, 2), (2, 2), (3, 1)] {
            for v in shape.level(k) {
                assert_eq!(
                    ts.cover().multiplicity(v),
                    want,
                    "level {k} vertex {v} multiplicity"
                );
            }
        }
        assert_eq!(ts.cover().max_multiplicity(), 2);
    }

    #[test]
    fn two_scale_cover_rejects_bad_inputs() {
        let shape = TreeShape::new(2, 4).unwrap();
        let plus = BoundaryCondition::AllPlus.resolve(&shape).unwrap();
        // alpha so small that ell = 0.
        assert!(TwoScaleCover::new(&shape, &plus, 0.1).is_err());
        // alpha so large the two scales leave a gap.
        assert!(TwoScaleCover::new(&shape, &plus, 0.8).is_err());
        // Free boundary: leaves are not frozen.
        let free = BoundaryCondition::Free.resolve(&shape).unwrap();
        assert!(TwoScaleCover::new(&shape, &free, 0.25).is_err());
    }

    #[test]
    fn block_cover_validation_errors() {
        let shape = TreeShape::new(2, 1).unwrap();
        let plus = BoundaryCondition::AllPlus.resolve(&shape).unwrap();
        // Contains a frozen leaf.
        assert!(BlockCover::new(&plus, vec![vec![0, 1]]).is_err());
        // Leaves the root uncovered: root is free here.
        let free = BoundaryCondition::Free.resolve(&shape).unwrap();
        assert!(BlockCover::new(&free, vec![vec![1, 2]]).is_err());
        assert!(BlockCover::new(&free, vec![vec![0], vec![1, 2]]).is_ok());
    }

    #[test]
    fn speedup_spec_geometry() {
        //            0
        //          /   \
        //         1     2            <- anchors (level 1)
        //        / \   / \
        //       3   4 5   6          <- designated w in {3, 5} (level 2)
        //      /\  /\ /\  /\
        //     7 8 9 10 11 12 13 14
        let shape = TreeShape::new(2, 3).unwrap();
        let spec = SpeedupSpec::new(&shape, 1, 2).unwrap();
        assert_eq!(spec.anchors(), &[1, 2]);
        assert_eq!(spec.designated(), &[3, 5]);
        assert_eq!(spec.block(&shape, 0), vec![1, 3, 4, 9, 10]);
        assert_eq!(spec.block(&shape, 1), vec![2, 5, 6, 13, 14]);
        assert_eq!(spec.path(&shape, 0), vec![1, 3]);
        assert_eq!(spec.designated_subtree(&shape, 0), vec![3, 7, 8]);
        assert_eq!(spec.designated_region(&shape), vec![3, 5, 7, 8, 11, 12]);
        // Blocks are pairwise disjoint.
        let b0 = spec.block(&shape, 0);
        assert!(spec.block(&shape, 1).iter().all(|v| !b0.contains(v)));
        // Forest adjacency: path edge (1,3) present, tree edge (1,4) cut.
        let f = spec.forest_graph(&shape);
        assert_eq!(f.neighbors(1), &[3]);
        assert_eq!(f.neighbors(3), &[1, 7, 8]);
        assert!(f.neighbors(4).is_empty());
        assert!(!spec.forest_membership(&shape)[0]);
        assert!(spec.forest_membership(&shape)[11]);

        assert!(SpeedupSpec::new(&shape, 0, 2).is_err());
        assert!(SpeedupSpec::new(&shape, 2, 2).is_err());
    }

    #[test]
    fn censored_run_is_exact_and_converges() {
        let (shape, boundary) = free_tree(2, 1);
        let params = IsingParams::critical(2).unwrap();
        let ctx = MaskContext::new(&shape, &params, &boundary).unwrap();
        let table = GibbsTable::new(&shape, &params, &boundary).unwrap();

        // A long scan schedule drives the law close to stationarity.
        let schedule: Vec<usize> = (0..200).map(|i| i % 3).collect();
        let dist = ctx.censored_run(&schedule).unwrap();
        let tv = 0.5
            * dist
                .iter()
                .zip(table.distribution())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
        assert!(tv < 1e-6, "after 200 sweeps TV is still {tv}");
        assert!((neumaier_sum(dist.iter().copied()) - 1.0).abs() < 1e-12);

        // Updating a frozen vertex is an error.
        let plus = BoundaryCondition::AllPlus.resolve(&shape).unwrap();
        let ctx2 = MaskContext::new(&shape, &params, &plus).unwrap();
        assert!(ctx2.censored_run(&[1]).is_err());
    }

    #[test]
    fn speedup_chain_empirically_preserves_root_marginal() {
        // Long-run frequency of sigma_root = +1 under the speedup chain
        // must match the Gibbs marginal (1/2 by symmetry on a free tree).
        let shape = TreeShape::new(2, 3).unwrap();
        let params = IsingParams::critical(2).unwrap();
        let spec = SpeedupSpec::new(&shape, 1, 2).unwrap();
        let dyn_ = SpeedupDynamics::new(&shape, &params, &spec);
        let mut cfg = SpinConfig::all_plus(shape.n());
        let mut rng = replica_rng(17, 0);
        let burn_in = 20_000;
        let samples = 200_000;
        for _ in 0..burn_in {
            dyn_.step(&mut cfg, &mut rng);
        }
        let mut plus = 0u64;
        for _ in 0..samples {
            dyn_.step(&mut cfg, &mut rng);
            if cfg.spin(0) == 1 {
                plus += 1;
            }
        }
        let freq = plus as f64 / samples as f64;
        // Autocorrelated samples: allow a generous band around 1/2.
        assert!(
            (freq - 0.5).abs() < 0.05,
            "root +1 frequency {freq} is far from the Gibbs marginal 0.5"
        );
    }

    #[test]
    fn survival_experiment_smoke() {
        let shape = TreeShape::new(2, 3).unwrap();
        let params = IsingParams::critical(2).unwrap();
        let spec = SpeedupSpec::new(&shape, 1, 2).unwrap();
        let grid = [0.25, 0.5, 1.0];
        let points =
            coupling_survival_experiment(&shape, &params, &spec, &grid, 400, 7).unwrap();
        assert_eq!(points.len(), 3);
        let mut prev = 1.0;
        for pt in &points {
            assert!((0.0..=1.0).contains(&pt.survival));
            assert!(pt.survival <= prev + 1e-12, "survival must be non-increasing");
            prev = pt.survival;
        }
        // Rough sanity: at t = 0.25 the bound exp(-sqrt(2)/4) ≈ 0.70 must
        // not be wildly exceeded downwards even in a small sample.
        assert!(points[0].survival > 0.5);
    }
}
