//! Rooted b-ary trees in breadth-first layout, Ising model parameters, and
//! boundary conditions.
//!
//! A tree of branching factor `b >= 2` and height `h` has levels `0..=h`;
//! level `k` holds `b^k` vertices and the whole tree has
//! `n = (b^(h+1) - 1) / (b - 1)` vertices. Vertices are numbered in BFS
//! order, so level `k` occupies the contiguous index range starting at
//! `(b^k - 1) / (b - 1)` and all structural queries (parent, children,
//! descendants) reduce to integer arithmetic on that layout.
//!
//! The ferromagnetic Ising measure on a tree with inverse temperature
//! `beta` is
//!
//! ```text
//! mu(sigma) ∝ exp(beta · Σ_{u~w} sigma_u sigma_w),   sigma_v ∈ {-1, +1}.
//! ```
//!
//! Most formulas are stated in terms of `theta = tanh(beta)`; the critical
//! point is `theta · sqrt(b) = 1`, i.e. `beta_c = atanh(1/sqrt(b))`.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::ops::Range;

/// Largest vertex count a [`TreeShape`] will agree to describe.
const MAX_VERTICES: u128 = 1 << 32;

/// Tolerance on `theta = tanh(beta)` consistency inside [`IsingParams`]:
/// the two fields are produced by a single `tanh`/`atanh` round trip, so
/// they agree to a few ulps.
const PARAM_CONSISTENCY_TOL: f64 = 1e-15;

/// Shape of a rooted `b`-ary tree of height `h` in BFS vertex order.
///
/// Purely combinatorial: no spins, no parameters. All vertex queries are
/// O(1) except [`TreeShape::meet`] / [`TreeShape::dist`], which walk at
/// most `h` levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeShape {
    b: u32,
    h: u32,
    /// `level_start[k]` is the BFS index of the first vertex on level `k`;
    /// the extra final entry equals `n`.
    level_start: Vec<usize>,
}

impl TreeShape {
    /// Builds the shape of the `b`-ary tree of height `h`.
    ///
    /// Fails for `b < 2` and for trees whose vertex count would exceed
    /// an internal cap (2^32 vertices).
    pub fn new(b: u32, h: u32) -> Result<Self> {
        if b < 2 {
            return Err(Error::invalid(format!(
                "branching factor must be at least 2, got {b}"
            )));
        }
        let mut level_start = Vec::with_capacity(h as usize + 2);
        let mut start: u128 = 0;
        let mut width: u128 = 1;
        for _ in 0..=h {
            level_start.push(start as usize);
            start += width;
            if start > MAX_VERTICES {
                return Err(Error::SizeGuard {
                    what: "tree vertex count",
                    size: usize::MAX,
                    limit: MAX_VERTICES as usize,
                });
            }
            width *= u128::from(b);
        }
        level_start.push(start as usize);
        Ok(Self { b, h, level_start })
    }

    /// Branching factor.
    #[inline]
    pub fn b(&self) -> u32 {
        self.b
    }

    /// Height (depth of the leaf level).
    #[inline]
    pub fn h(&self) -> u32 {
        self.h
    }

    /// Total number of vertices.
    #[inline]
    pub fn n(&self) -> usize {
        *self.level_start.last().unwrap()
    }

    /// Index of the root.
    #[inline]
    pub fn root(&self) -> usize {
        0
    }

    /// BFS index range of level `k`.
    #[inline]
    pub fn level(&self, k: u32) -> Range<usize> {
        debug_assert!(k <= self.h);
        self.level_start[k as usize]..self.level_start[k as usize + 1]
    }

    /// Number of vertices on level `k` (`b^k`).
    #[inline]
    pub fn level_len(&self, k: u32) -> usize {
        let r = self.level(k);
        r.end - r.start
    }

    /// Level of vertex `v` (its distance from the root).
    pub fn level_of(&self, v: usize) -> u32 {
        debug_assert!(v < self.n());
        // level_start is strictly increasing; find the last entry <= v.
        match self.level_start.binary_search(&v) {
            Ok(k) => k as u32,
            Err(k) => (k - 1) as u32,
        }
    }

    /// Parent of `v`, or `None` for the root.
    pub fn parent(&self, v: usize) -> Option<usize> {
        if v == 0 {
            return None;
        }
        let k = self.level_of(v) as usize;
        let offset = v - self.level_start[k];
        Some(self.level_start[k - 1] + offset / self.b as usize)
    }

    /// `j`-th child of `v` (`j < b`). Panics in debug builds if `v` is a
    /// leaf or `j` is out of range.
    #[inline]
    pub fn child(&self, v: usize, j: u32) -> usize {
        debug_assert!(j < self.b);
        let k = self.level_of(v) as usize;
        debug_assert!(k < self.h as usize, "leaves have no children");
        let offset = v - self.level_start[k];
        self.level_start[k + 1] + offset * self.b as usize + j as usize
    }

    /// BFS index range of the children of `v` (empty for leaves).
    pub fn children(&self, v: usize) -> Range<usize> {
        let k = self.level_of(v) as usize;
        if k == self.h as usize {
            return 0..0;
        }
        let offset = v - self.level_start[k];
        let first = self.level_start[k + 1] + offset * self.b as usize;
        first..first + self.b as usize
    }

    /// All graph neighbours of `v`: parent (if any) followed by children.
    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.parent(v).into_iter().chain(self.children(v))
    }

    /// Whether `v` lies on the leaf level.
    #[inline]
    pub fn is_leaf(&self, v: usize) -> bool {
        v >= self.level_start[self.h as usize]
    }

    /// BFS index range of the leaves (level `h`).
    #[inline]
    pub fn leaves(&self) -> Range<usize> {
        self.level(self.h)
    }

    /// Descendants of `v` exactly `j` levels below it, as a contiguous BFS
    /// range (`b^j` vertices). `j = 0` yields `v..v+1`.
    pub fn descendants_at(&self, v: usize, j: u32) -> Range<usize> {
        let k = self.level_of(v);
        debug_assert!(k + j <= self.h, "descendant level exceeds tree height");
        let offset = v - self.level_start[k as usize];
        let span = (self.b as usize).pow(j);
        let first = self.level_start[(k + j) as usize] + offset * span;
        first..first + span
    }

    /// The subtree rooted at `v`, one contiguous BFS range per level,
    /// starting with `v` itself.
    pub fn subtree_ranges(&self, v: usize) -> impl Iterator<Item = Range<usize>> + '_ {
        let k = self.level_of(v);
        (0..=self.h - k).map(move |j| self.descendants_at(v, j))
    }

    /// Lowest common ancestor of `u` and `w`.
    pub fn meet(&self, u: usize, w: usize) -> usize {
        let (mut u, mut w) = (u, w);
        let (mut ku, mut kw) = (self.level_of(u), self.level_of(w));
        while ku > kw {
            u = self.parent(u).unwrap();
            ku -= 1;
        }
        while kw > ku {
            w = self.parent(w).unwrap();
            kw -= 1;
        }
        while u != w {
            u = self.parent(u).unwrap();
            w = self.parent(w).unwrap();
        }
        u
    }

    /// Graph distance between `u` and `w`.
    pub fn dist(&self, u: usize, w: usize) -> u32 {
        let m = self.meet(u, w);
        self.level_of(u) + self.level_of(w) - 2 * self.level_of(m)
    }
}

/// Critical inverse temperature `beta_c = atanh(1/sqrt(b))` of the Ising
/// model on the `b`-ary tree. Fails for `b < 2`.
pub fn critical_beta(b: u32) -> Result<f64> {
    if b < 2 {
        return Err(Error::invalid(format!(
            "critical point requires branching factor >= 2, got {b}"
        )));
    }
    Ok((1.0 / (f64::from(b)).sqrt()).atanh())
}

/// Inverse temperature together with the derived edge correlation
/// `theta = tanh(beta)`, the quantity most formulas are written in.
///
/// Constructed either from `beta` directly, at the critical point of a
/// given tree (`theta = 1/sqrt(b)`), or at a near-critical point
/// parameterised by `epsilon` via `theta = sqrt((1 + epsilon)/b)`. In the
/// latter case `epsilon` is remembered so closed forms stated in terms of
/// it can use the exact input value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsingParams {
    beta: f64,
    theta: f64,
    epsilon: Option<f64>,
}

impl IsingParams {
    /// Parameters at inverse temperature `beta >= 0`.
    pub fn from_beta(beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::invalid(format!(
                "inverse temperature must be finite and non-negative, got {beta}"
            )));
        }
        Ok(Self {
            beta,
            theta: beta.tanh(),
            epsilon: None,
        })
    }

    /// Critical parameters for the `b`-ary tree: `theta = 1/sqrt(b)`.
    pub fn critical(b: u32) -> Result<Self> {
        let beta = critical_beta(b)?;
        let theta = 1.0 / f64::from(b).sqrt();
        let p = Self {
            beta,
            theta,
            epsilon: None,
        };
        debug_assert!((p.theta - p.beta.tanh()).abs() <= PARAM_CONSISTENCY_TOL);
        debug_assert!((theta * f64::from(b).sqrt() - 1.0).abs() <= 1e-12);
        Ok(p)
    }

    /// Near-critical parameters `theta = sqrt((1 + epsilon)/b)`.
    ///
    /// `epsilon > 0` is supercritical, `epsilon < 0` subcritical; the value
    /// must keep `theta` inside `[0, 1)`, i.e. `-1 < epsilon < b - 1`.
    pub fn near_critical(b: u32, epsilon: f64) -> Result<Self> {
        if b < 2 {
            return Err(Error::invalid(format!(
                "near-critical parameters require branching factor >= 2, got {b}"
            )));
        }
        if !epsilon.is_finite() || epsilon <= -1.0 || epsilon >= f64::from(b) - 1.0 {
            return Err(Error::invalid(format!(
                "epsilon must lie in (-1, b-1) to keep theta in [0, 1), got {epsilon}"
            )));
        }
        let theta = ((1.0 + epsilon) / f64::from(b)).sqrt();
        let p = Self {
            beta: theta.atanh(),
            theta,
            epsilon: Some(epsilon),
        };
        debug_assert!((p.theta - p.beta.tanh()).abs() <= PARAM_CONSISTENCY_TOL);
        Ok(p)
    }

    /// Inverse temperature.
    #[inline]
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Edge correlation `tanh(beta)`.
    #[inline]
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `2 beta`, the saturation value of the log-odds transfer function.
    #[inline]
    pub fn two_beta(&self) -> f64 {
        2.0 * self.beta
    }

    /// The `epsilon` this instance was constructed with, if any.
    #[inline]
    pub fn epsilon(&self) -> Option<f64> {
        self.epsilon
    }
}

/// Boundary condition: which vertices are frozen, and to which spins.
///
/// Frozen vertices keep their spin forever: single-site dynamics reject
/// moves there and block updates resample conditionally on them. The
/// leaf-oriented variants freeze exactly the leaf level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoundaryCondition {
    /// Nothing frozen.
    Free,
    /// Every leaf frozen to `+1`.
    AllPlus,
    /// Every leaf frozen to `-1`.
    AllMinus,
    /// Per-leaf spins in BFS order of the leaf level; length must be `b^h`,
    /// entries `+1` or `-1`.
    Leaves(Vec<i8>),
    /// Arbitrary frozen vertices `(vertex, spin)`; duplicates rejected.
    Frozen(Vec<(usize, i8)>),
}

impl BoundaryCondition {
    /// Validates the condition against `shape` and expands it into per-vertex
    /// form.
    pub fn resolve(&self, shape: &TreeShape) -> Result<ResolvedBoundary> {
        let n = shape.n();
        let mut spins: Vec<Option<i8>> = vec![None; n];
        match self {
            BoundaryCondition::Free => {}
            BoundaryCondition::AllPlus => {
                for v in shape.leaves() {
                    spins[v] = Some(1);
                }
            }
            BoundaryCondition::AllMinus => {
                for v in shape.leaves() {
                    spins[v] = Some(-1);
                }
            }
            BoundaryCondition::Leaves(taus) => {
                let leaves = shape.leaves();
                if taus.len() != leaves.len() {
                    return Err(Error::invalid(format!(
                        "leaf boundary has {} entries but the tree has {} leaves",
                        taus.len(),
                        leaves.len()
                    )));
                }
                for (v, &s) in leaves.zip(taus) {
                    check_spin(s)?;
                    spins[v] = Some(s);
                }
            }
            BoundaryCondition::Frozen(pairs) => {
                for &(v, s) in pairs {
                    if v >= n {
                        return Err(Error::invalid(format!(
                            "frozen vertex {v} out of range (tree has {n} vertices)"
                        )));
                    }
                    check_spin(s)?;
                    if spins[v].is_some() {
                        return Err(Error::invalid(format!("vertex {v} frozen twice")));
                    }
                    spins[v] = Some(s);
                }
            }
        }
        let free: Vec<usize> = (0..n).filter(|&v| spins[v].is_none()).collect();
        let mut free_index = vec![usize::MAX; n];
        for (i, &v) in free.iter().enumerate() {
            free_index[v] = i;
        }
        Ok(ResolvedBoundary {
            spins,
            free,
            free_index,
        })
    }

    /// Convenience constructor from a vertex -> spin map.
    pub fn frozen_from_map(map: &BTreeMap<usize, i8>) -> Self {
        BoundaryCondition::Frozen(map.iter().map(|(&v, &s)| (v, s)).collect())
    }
}

fn check_spin(s: i8) -> Result<()> {
    if s == 1 || s == -1 {
        Ok(())
    } else {
        Err(Error::invalid(format!("spins must be +1 or -1, got {s}")))
    }
}

/// A [`BoundaryCondition`] expanded against a concrete tree: per-vertex
/// frozen spins plus the BFS-ordered list of free vertices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedBoundary {
    spins: Vec<Option<i8>>,
    free: Vec<usize>,
    free_index: Vec<usize>,
}

impl ResolvedBoundary {
    /// Frozen spin at `v`, or `None` if `v` is free.
    #[inline]
    pub fn frozen_spin(&self, v: usize) -> Option<i8> {
        self.spins[v]
    }

    /// Whether `v` participates in the dynamics.
    #[inline]
    pub fn is_free(&self, v: usize) -> bool {
        self.spins[v].is_none()
    }

    /// Free vertices in BFS order.
    #[inline]
    pub fn free(&self) -> &[usize] {
        &self.free
    }

    /// Number of free vertices.
    #[inline]
    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    /// Position of `v` in [`ResolvedBoundary::free`], or `None` if frozen.
    /// This is the bit index used by enumeration code.
    #[inline]
    pub fn free_index(&self, v: usize) -> Option<usize> {
        let i = self.free_index[v];
        (i != usize::MAX).then_some(i)
    }
}

/// A spin configuration on `n` vertices, one bit per vertex
/// (bit set ⇔ spin `+1`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfig {
    words: Vec<u64>,
    n: usize,
}

impl SpinConfig {
    /// All spins `+1`.
    pub fn all_plus(n: usize) -> Self {
        let mut words = vec![!0u64; n.div_ceil(64)];
        if n % 64 != 0 {
            *words.last_mut().unwrap() = (1u64 << (n % 64)) - 1;
        }
        Self { words, n }
    }

    /// All spins `-1`.
    pub fn all_minus(n: usize) -> Self {
        Self {
            words: vec![0u64; n.div_ceil(64)],
            n,
        }
    }

    /// Number of vertices.
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Spin at `v` as `+1` / `-1`.
    #[inline]
    pub fn spin(&self, v: usize) -> i8 {
        debug_assert!(v < self.n);
        if self.words[v / 64] >> (v % 64) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    /// Sets the spin at `v`.
    #[inline]
    pub fn set_spin(&mut self, v: usize, s: i8) {
        debug_assert!(v < self.n);
        debug_assert!(s == 1 || s == -1);
        let (w, bit) = (v / 64, 1u64 << (v % 64));
        if s == 1 {
            self.words[w] |= bit;
        } else {
            self.words[w] &= !bit;
        }
    }

    /// Writes every frozen spin of `boundary` into the configuration.
    pub fn apply_boundary(&mut self, boundary: &ResolvedBoundary) {
        for v in 0..self.n {
            if let Some(s) = boundary.frozen_spin(v) {
                self.set_spin(v, s);
            }
        }
    }

    /// Number of `+1` spins.
    pub fn count_plus(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Sum of all spins.
    pub fn magnetization(&self) -> i64 {
        2 * self.count_plus() as i64 - self.n as i64
    }

    /// Coordinatewise comparison: `true` iff `self >= other` at every vertex.
    pub fn dominates(&self, other: &Self) -> bool {
        debug_assert_eq!(self.n, other.n);
        self.words
            .iter()
            .zip(&other.words)
            .all(|(a, b)| b & !a == 0)
    }
}
