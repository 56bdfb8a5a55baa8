//! Exact computations under the Ising–Gibbs measure on a tree: brute-force
//! enumeration tables, the log-odds transfer recursion, broadcast sampling,
//! and root-reconstruction functionals.
//!
//! The central analytic object is the conditional log-odds of a single spin,
//! `x = log(P(sigma = +1)/P(sigma = -1))`. Conditioning a vertex on one of
//! its children pushes log-odds through the transfer function
//!
//! ```text
//! f(x) = 2 atanh(theta tanh(x/2)),        theta = tanh(beta),
//! ```
//!
//! which saturates at `f(±inf) = ±2 beta` and has derivative
//! `f'(x) = theta / (1 + (1 - theta^2) sinh^2(x/2))`, so `f'(0) = theta`.
//! Summing transferred child messages bottom-up yields the marginal
//! log-odds of every vertex inside its own subtree; the enumeration table
//! ([`GibbsTable`]) provides an independent oracle for all of it on trees
//! with at most [`MAX_FREE_ENUMERATION`] free vertices.
//!
//! The reconstruction half of the module quantifies how much a designated
//! interior boundary (the vertices exactly `depth` levels below a vertex
//! `v`) remembers about the spin at `v`: the split measures
//! `Q_v^{±}(xi) = P(boundary = xi | sigma_v = ±1)`, the influence
//! `Delta = Σ_xi (Q^+ - Q^-)(xi) · P_hat^xi(sigma_v = +1)`, and the
//! magnetization `m_v = Σ_xi (Q^+ - Q^-)(xi) · x_v^xi`, where `x_v^xi` is
//! the log-odds of `sigma_v` in the truncated tree frozen to `xi`.

use crate::error::{Error, Result};
use crate::tree::{IsingParams, ResolvedBoundary, SpinConfig, TreeShape};
use crate::util::{neumaier_sum, plus_prob_from_log_odds, replica_rng, NeumaierSum};
use rand::Rng;
use rayon::prelude::*;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Range};

/// Largest number of free vertices [`GibbsTable`] will enumerate (2^24
/// configurations).
pub const MAX_FREE_ENUMERATION: usize = 24;

/// Largest interior boundary [`Reconstruction`] will enumerate (2^16 spin
/// patterns).
pub const MAX_HAT_BOUNDARY: usize = 16;

/// Default constant in the magnetization recursion denominator.
pub const DEFAULT_KAPPA: f64 = 1.0 / 96.0;

/// Conditional log-odds `log(P(+1)/P(-1))` of a single spin.
///
/// Finite values describe genuine uncertainty; `±inf` are the atoms of
/// frozen spins. Values are totally ordered and never NaN.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogOdds(f64);

impl LogOdds {
    /// The symmetric value: both spins equally likely.
    pub const ZERO: LogOdds = LogOdds(0.0);

    /// Wraps a raw log-odds value. Panics on NaN.
    #[inline]
    pub fn new(x: f64) -> Self {
        assert!(!x.is_nan(), "log-odds must not be NaN");
        LogOdds(x)
    }

    /// The degenerate log-odds of a frozen spin: `±inf`.
    #[inline]
    pub fn from_spin(s: i8) -> Self {
        debug_assert!(s == 1 || s == -1);
        LogOdds(if s == 1 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        })
    }

    /// Raw value.
    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// `P(spin = +1)` implied by this log-odds.
    #[inline]
    pub fn plus_prob(self) -> f64 {
        plus_prob_from_log_odds(self.0)
    }

    /// Whether the value is finite (not a frozen atom).
    #[inline]
    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }
}

impl Add for LogOdds {
    type Output = LogOdds;
    #[inline]
    fn add(self, rhs: LogOdds) -> LogOdds {
        // inf + (-inf) would manufacture a NaN; callers only ever sum
        // transferred (hence finite) messages.
        LogOdds::new(self.0 + rhs.0)
    }
}

impl AddAssign for LogOdds {
    #[inline]
    fn add_assign(&mut self, rhs: LogOdds) {
        *self = *self + rhs;
    }
}

impl Neg for LogOdds {
    type Output = LogOdds;
    #[inline]
    fn neg(self) -> LogOdds {
        LogOdds(-self.0)
    }
}

impl Sum for LogOdds {
    fn sum<I: Iterator<Item = LogOdds>>(iter: I) -> LogOdds {
        iter.fold(LogOdds::ZERO, |acc, x| acc + x)
    }
}

/// The log-odds transfer function `f(x) = 2 atanh(theta tanh(x/2))`.
///
/// `f` is odd, strictly increasing, concave on `[0, inf)`, bounded by
/// `|f| <= 2 atanh(theta) = 2 beta`, and maps the frozen atoms to the
/// saturation values `±2 beta`.
#[inline]
pub fn log_odds_transfer(theta: f64, x: LogOdds) -> LogOdds {
    debug_assert!((0.0..1.0).contains(&theta));
    LogOdds::new(2.0 * (theta * (x.value() / 2.0).tanh()).atanh())
}

/// Derivative `f'(x) = theta / (1 + (1 - theta^2) sinh^2(x/2))`.
#[inline]
pub fn log_odds_transfer_derivative(theta: f64, x: f64) -> f64 {
    let s = (x / 2.0).sinh();
    theta / (1.0 + (1.0 - theta * theta) * s * s)
}

/// Marginal log-odds of every vertex within its own subtree, given the
/// frozen spins of `boundary`.
///
/// Bottom-up recursion in one BFS sweep: frozen vertices carry `±inf`,
/// free leaves carry `0`, and every other free vertex sums the transferred
/// messages of its children,
///
/// ```text
/// x_v = Σ_{w child of v} f(x_w).
/// ```
///
/// The root entry is the marginal log-odds of the root spin under the full
/// Gibbs measure.
pub fn subtree_log_odds(
    shape: &TreeShape,
    params: &IsingParams,
    boundary: &ResolvedBoundary,
) -> Vec<LogOdds> {
    let n = shape.n();
    let mut x = vec![LogOdds::ZERO; n];
    for v in (0..n).rev() {
        x[v] = match boundary.frozen_spin(v) {
            Some(s) => LogOdds::from_spin(s),
            None => shape
                .children(v)
                .map(|w| log_odds_transfer(params.theta(), x[w]))
                .sum(),
        };
    }
    x
}

/// How strongly a conditioned child spin is felt one level up.
///
/// For a child whose subtree log-odds is `x`, the difference of conditional
/// `+1`-probabilities of the child given the two parent spins equals
/// `D(x) · theta` with
///
/// ```text
/// D(x) = cosh^2(beta) / (cosh^2(beta) + cosh^2(x/2) - 1)  ∈  (0, 1],
/// ```
///
/// equivalently `1/D = 1 + (C/2 - 1)(1 - theta^2)` where
/// `C = 2 cosh^2(x/2)`. `D(0) = 1`; frozen atoms give `D = 0`.
pub fn propagation_coeff(params: &IsingParams, x: LogOdds) -> f64 {
    let cb = params.beta().cosh();
    let cb2 = cb * cb;
    let ch = (x.value() / 2.0).cosh();
    let ch2 = ch * ch;
    if ch2.is_infinite() {
        return 0.0;
    }
    cb2 / (cb2 + ch2 - 1.0)
}

/// Samples a free-boundary Gibbs configuration by broadcasting from the
/// root: each child independently copies its parent's spin with
/// probability `(1 + theta)/2`.
pub fn broadcast_sample<R: Rng + ?Sized>(
    shape: &TreeShape,
    params: &IsingParams,
    root_spin: i8,
    rng: &mut R,
) -> SpinConfig {
    debug_assert!(root_spin == 1 || root_spin == -1);
    let copy_prob = (1.0 + params.theta()) / 2.0;
    let mut cfg = SpinConfig::all_minus(shape.n());
    cfg.set_spin(0, root_spin);
    for v in 1..shape.n() {
        let parent_spin = cfg.spin(shape.parent(v).unwrap());
        let s = if rng.random::<f64>() < copy_prob {
            parent_spin
        } else {
            -parent_spin
        };
        cfg.set_spin(v, s);
    }
    cfg
}

/// Pair correlation `E[sigma_u sigma_w] = theta^dist(u, w)` under the
/// free-boundary measure (equivalently the broadcast process).
pub fn pairwise_covariance(shape: &TreeShape, params: &IsingParams, u: usize, w: usize) -> f64 {
    params.theta().powi(shape.dist(u, w) as i32)
}

/// Statistic `Σ_v weight^level(v) · sigma_v`; with `weight = theta` this is
/// the depth-weighted magnetization whose variance the spectral bounds are
/// stated in.
pub fn depth_weighted_sum(shape: &TreeShape, weight: f64, spin_at: impl Fn(usize) -> i8) -> f64 {
    let mut acc = NeumaierSum::new();
    for k in 0..=shape.h() {
        let wk = weight.powi(k as i32);
        for v in shape.level(k) {
            acc.add(wk * f64::from(spin_at(v)));
        }
    }
    acc.value()
}

/// Exhaustive Gibbs distribution over the free spins of a tree.
///
/// Configurations are indexed by bitmask: bit `i` set means free vertex
/// `boundary.free()[i]` carries spin `+1`. Energies are accumulated as
/// exact integers (each edge contributes `sigma_u sigma_w ∈ {-1, +1}`) and
/// exponentiated after subtracting the maximum, so the table is accurate
/// to a few ulps and sums to 1 within 1e-12.
#[derive(Debug, Clone)]
pub struct GibbsTable {
    shape: TreeShape,
    boundary: ResolvedBoundary,
    probs: Vec<f64>,
}

impl GibbsTable {
    /// Enumerates the Gibbs distribution. Fails if more than
    /// [`MAX_FREE_ENUMERATION`] vertices are free.
    pub fn new(
        shape: &TreeShape,
        params: &IsingParams,
        boundary: &ResolvedBoundary,
    ) -> Result<Self> {
        let nf = boundary.n_free();
        if nf > MAX_FREE_ENUMERATION {
            return Err(Error::SizeGuard {
                what: "free vertices in Gibbs enumeration",
                size: nf,
                limit: MAX_FREE_ENUMERATION,
            });
        }
        let n = shape.n();
        // Every non-root vertex contributes its parent edge.
        let edges: Vec<(usize, usize)> = (1..n).map(|w| (shape.parent(w).unwrap(), w)).collect();
        let size = 1usize << nf;
        let mut energies = vec![0i64; size];
        for (mask, e) in energies.iter_mut().enumerate() {
            let spin = |v: usize| -> i64 {
                match boundary.frozen_spin(v) {
                    Some(s) => i64::from(s),
                    None => {
                        if mask >> boundary.free_index(v).unwrap() & 1 == 1 {
                            1
                        } else {
                            -1
                        }
                    }
                }
            };
            *e = edges.iter().map(|&(u, w)| spin(u) * spin(w)).sum();
        }
        let emax = energies.iter().copied().max().unwrap();
        let mut probs: Vec<f64> = energies
            .iter()
            .map(|&e| (params.beta() * (e - emax) as f64).exp())
            .collect();
        let total = neumaier_sum(probs.iter().copied());
        debug_assert!(total > 0.0);
        for p in &mut probs {
            *p /= total;
        }
        Ok(Self {
            shape: shape.clone(),
            boundary: boundary.clone(),
            probs,
        })
    }

    /// The tree this table was built on.
    #[inline]
    pub fn shape(&self) -> &TreeShape {
        &self.shape
    }

    /// The resolved boundary this table was built with.
    #[inline]
    pub fn boundary(&self) -> &ResolvedBoundary {
        &self.boundary
    }

    /// Number of free vertices.
    #[inline]
    pub fn n_free(&self) -> usize {
        self.boundary.n_free()
    }

    /// Probability of the configuration encoded by `mask`.
    #[inline]
    pub fn prob(&self, mask: u64) -> f64 {
        self.probs[mask as usize]
    }

    /// The full distribution, indexed by mask.
    #[inline]
    pub fn distribution(&self) -> &[f64] {
        &self.probs
    }

    /// Iterates over `(mask, probability)` pairs.
    pub fn masks(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.probs.iter().enumerate().map(|(m, &p)| (m as u64, p))
    }

    /// Spin of vertex `v` in the configuration `mask` (frozen spins
    /// included).
    #[inline]
    pub fn spin_at(&self, mask: u64, v: usize) -> i8 {
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

    /// Expands `mask` into a full spin configuration.
    pub fn config_from_mask(&self, mask: u64) -> SpinConfig {
        let mut cfg = SpinConfig::all_minus(self.shape.n());
        for v in 0..self.shape.n() {
            cfg.set_spin(v, self.spin_at(mask, v));
        }
        cfg
    }

    /// `E[f]` under the table.
    pub fn mean_of(&self, f: impl Fn(&Self, u64) -> f64) -> f64 {
        let mut acc = NeumaierSum::new();
        for (m, p) in self.masks() {
            acc.add(p * f(self, m));
        }
        acc.value()
    }

    /// `Var[f]` under the table.
    pub fn variance_of(&self, f: impl Fn(&Self, u64) -> f64) -> f64 {
        let mean = self.mean_of(&f);
        let mut acc = NeumaierSum::new();
        for (m, p) in self.masks() {
            let d = f(self, m) - mean;
            acc.add(p * d * d);
        }
        acc.value()
    }

    /// `P(sigma_v = +1)`.
    pub fn marginal_plus(&self, v: usize) -> f64 {
        self.mean_of(|t, m| if t.spin_at(m, v) == 1 { 1.0 } else { 0.0 })
    }

    /// Marginal log-odds `log P(sigma_v = +1) - log P(sigma_v = -1)`,
    /// computed from the two mass sums directly.
    pub fn log_odds_of(&self, v: usize) -> LogOdds {
        let mut plus = NeumaierSum::new();
        let mut minus = NeumaierSum::new();
        for (m, p) in self.masks() {
            if self.spin_at(m, v) == 1 {
                plus.add(p);
            } else {
                minus.add(p);
            }
        }
        LogOdds::new(plus.value().ln() - minus.value().ln())
    }

    /// Pair correlation `E[sigma_u sigma_w]`.
    pub fn correlation(&self, u: usize, w: usize) -> f64 {
        self.mean_of(|t, m| f64::from(t.spin_at(m, u)) * f64::from(t.spin_at(m, w)))
    }

    /// Covariance `E[sigma_u sigma_w] - E[sigma_u] E[sigma_w]`.
    pub fn covariance(&self, u: usize, w: usize) -> f64 {
        let mu = self.mean_of(|t, m| f64::from(t.spin_at(m, u)));
        let mw = self.mean_of(|t, m| f64::from(t.spin_at(m, w)));
        self.correlation(u, w) - mu * mw
    }

    /// `E[f | sigma agrees with every (vertex, spin) pair in cond]`.
    pub fn conditional_mean_of(
        &self,
        cond: &[(usize, i8)],
        f: impl Fn(&Self, u64) -> f64,
    ) -> f64 {
        let mut num = NeumaierSum::new();
        let mut den = NeumaierSum::new();
        for (m, p) in self.masks() {
            if cond.iter().all(|&(v, s)| self.spin_at(m, v) == s) {
                num.add(p * f(self, m));
                den.add(p);
            }
        }
        let den = den.value();
        debug_assert!(den > 0.0, "conditioning event has zero probability");
        num.value() / den
    }

    /// `Var[f | cond]`.
    pub fn conditional_variance_of(
        &self,
        cond: &[(usize, i8)],
        f: impl Fn(&Self, u64) -> f64,
    ) -> f64 {
        let mean = self.conditional_mean_of(cond, &f);
        self.conditional_mean_of(cond, |t, m| {
            let d = f(t, m) - mean;
            d * d
        })
    }

    /// `P(sigma_v = +1 | cond)`.
    pub fn conditional_marginal_plus(&self, cond: &[(usize, i8)], v: usize) -> f64 {
        self.conditional_mean_of(cond, |t, m| if t.spin_at(m, v) == 1 { 1.0 } else { 0.0 })
    }
}

/// Influence of a vertex on the interior boundary `depth` levels below it.
///
/// Fix a vertex `v` and let `W` be its descendants exactly `depth` levels
/// down (`depth >= 1`; all vertices of the truncated subtree must be free,
/// the true boundary enters through the subtree log-odds below `W`).
/// Conditioned on `sigma_v`, the spins on the path down form a Markov
/// chain with per-edge transitions
///
/// ```text
/// P(sigma_w = +1 | sigma_u = s) = (1 + tanh(beta s + x_w/2)) / 2,
/// ```
///
/// where `x_w` is the subtree log-odds of `w`. This struct enumerates the
/// resulting split measures `Q^{±}` on spin patterns of `W` and the
/// functionals built from them.
#[derive(Debug)]
pub struct Reconstruction<'a> {
    shape: &'a TreeShape,
    params: IsingParams,
    vertex: usize,
    depth: u32,
    boundary_range: Range<usize>,
    sub: Vec<LogOdds>,
}

impl<'a> Reconstruction<'a> {
    /// Prepares reconstruction for `vertex` with the given truncation
    /// `depth`.
    pub fn new(
        shape: &'a TreeShape,
        params: &IsingParams,
        boundary: &ResolvedBoundary,
        vertex: usize,
        depth: u32,
    ) -> Result<Self> {
        if vertex >= shape.n() {
            return Err(Error::invalid(format!(
                "vertex {vertex} out of range (tree has {} vertices)",
                shape.n()
            )));
        }
        if depth == 0 {
            return Err(Error::invalid("reconstruction depth must be at least 1"));
        }
        let level = shape.level_of(vertex);
        if level + depth > shape.h() {
            return Err(Error::invalid(format!(
                "depth {depth} from level {level} exceeds tree height {}",
                shape.h()
            )));
        }
        let boundary_range = shape.descendants_at(vertex, depth);
        if boundary_range.len() > MAX_HAT_BOUNDARY {
            return Err(Error::SizeGuard {
                what: "interior reconstruction boundary",
                size: boundary_range.len(),
                limit: MAX_HAT_BOUNDARY,
            });
        }
        for j in 0..=depth {
            for u in shape.descendants_at(vertex, j) {
                if !boundary.is_free(u) {
                    return Err(Error::invalid(format!(
                        "truncated subtree must be free of frozen spins, but vertex {u} is frozen"
                    )));
                }
            }
        }
        Ok(Self {
            shape,
            params: *params,
            vertex,
            depth,
            boundary_range,
            sub: subtree_log_odds(shape, params, boundary),
        })
    }

    /// Number of vertices in the interior boundary `W`.
    #[inline]
    pub fn boundary_size(&self) -> usize {
        self.boundary_range.len()
    }

    /// Transition `P(sigma_w = +1 | sigma_parent = s)` for the downward
    /// chain into `w`.
    #[inline]
    fn down_plus_prob(&self, w: usize, parent_spin: i8) -> f64 {
        let l = f64::from(parent_spin) * self.params.two_beta() + self.sub[w].value();
        plus_prob_from_log_odds(l)
    }

    /// `(Q^+(xi), Q^-(xi))`: the probability of the boundary pattern `xi`
    /// given each root spin. Bit `i` of `xi` is the spin of boundary
    /// vertex `boundary_range.start + i`.
    pub fn split(&self, xi: u64) -> (f64, f64) {
        self.split_rec(self.vertex, xi)
    }

    fn split_rec(&self, u: usize, xi: u64) -> (f64, f64) {
        if self.boundary_range.contains(&u) {
            let bit = xi >> (u - self.boundary_range.start) & 1;
            return if bit == 1 { (1.0, 0.0) } else { (0.0, 1.0) };
        }
        let mut g_plus = 1.0;
        let mut g_minus = 1.0;
        for w in self.shape.children(u) {
            let (gw_plus, gw_minus) = self.split_rec(w, xi);
            let p_plus = self.down_plus_prob(w, 1);
            let p_minus = self.down_plus_prob(w, -1);
            g_plus *= p_plus * gw_plus + (1.0 - p_plus) * gw_minus;
            g_minus *= p_minus * gw_plus + (1.0 - p_minus) * gw_minus;
        }
        (g_plus, g_minus)
    }

    /// Log-odds of `sigma_vertex` in the truncated subtree with `W` frozen
    /// to `xi` and everything below `W` removed.
    pub fn truncated_log_odds(&self, xi: u64) -> LogOdds {
        self.truncated_rec(self.vertex, xi)
    }

    fn truncated_rec(&self, u: usize, xi: u64) -> LogOdds {
        if self.boundary_range.contains(&u) {
            let bit = xi >> (u - self.boundary_range.start) & 1;
            return LogOdds::from_spin(if bit == 1 { 1 } else { -1 });
        }
        self.shape
            .children(u)
            .map(|w| log_odds_transfer(self.params.theta(), self.truncated_rec(w, xi)))
            .sum()
    }

    /// Influence functional
    /// `Delta(field) = Σ_xi (Q^+ - Q^-)(xi) · P^xi(sigma_v = +1)`, where
    /// `P^xi` is the truncated-subtree measure tilted by an external field
    /// acting on `sigma_v` alone (log-odds shift `2 · field`).
    pub fn delta(&self, field: f64) -> f64 {
        let mut acc = NeumaierSum::new();
        for xi in 0..1u64 << self.boundary_size() {
            let (qp, qm) = self.split(xi);
            let x = self.truncated_log_odds(xi).value();
            acc.add((qp - qm) * plus_prob_from_log_odds(x + 2.0 * field));
        }
        acc.value()
    }

    /// Magnetization functional
    /// `m_v = Σ_xi (Q^+ - Q^-)(xi) · x_v^xi`.
    pub fn magnetization(&self) -> f64 {
        let mut acc = NeumaierSum::new();
        for xi in 0..1u64 << self.boundary_size() {
            let (qp, qm) = self.split(xi);
            acc.add((qp - qm) * self.truncated_log_odds(xi).value());
        }
        acc.value()
    }

    /// Monte Carlo estimate of [`Reconstruction::delta`] with a monotone
    /// common-random-number coupling of the two boundary samples.
    ///
    /// Each replica draws one uniform per truncated-subtree vertex and uses
    /// it for both downward chains; since the `+1`-probability is
    /// increasing in the parent spin, the `+`-chain dominates the
    /// `-`-chain pointwise and every replica contributes a non-negative
    /// difference. Returns `(estimate, standard_error)`.
    pub fn delta_mc(&self, field: f64, replicas: u64, seed: u64) -> (f64, f64) {
        assert!(replicas >= 2, "need at least two replicas for an error bar");
        let diffs: Vec<f64> = (0..replicas)
            .into_par_iter()
            .map(|r| {
                let mut rng = replica_rng(seed, r);
                let (xi_plus, xi_minus) = self.sample_coupled_boundaries(&mut rng);
                let x_plus = self.truncated_log_odds(xi_plus).value();
                let x_minus = self.truncated_log_odds(xi_minus).value();
                plus_prob_from_log_odds(x_plus + 2.0 * field)
                    - plus_prob_from_log_odds(x_minus + 2.0 * field)
            })
            .collect();
        let n = diffs.len() as f64;
        let mean = neumaier_sum(diffs.iter().copied()) / n;
        let var = neumaier_sum(diffs.iter().map(|d| (d - mean) * (d - mean))) / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    /// Draws the pair `(xi | sigma_v = +1, xi | sigma_v = -1)` with shared
    /// per-vertex uniforms.
    fn sample_coupled_boundaries<R: Rng + ?Sized>(&self, rng: &mut R) -> (u64, u64) {
        let n = self.shape.n();
        let mut spin_plus = vec![0i8; n];
        let mut spin_minus = vec![0i8; n];
        spin_plus[self.vertex] = 1;
        spin_minus[self.vertex] = -1;
        for j in 1..=self.depth {
            for w in self.shape.descendants_at(self.vertex, j) {
                let u = rng.random::<f64>();
                let parent = self.shape.parent(w).unwrap();
                spin_plus[w] = if u < self.down_plus_prob(w, spin_plus[parent]) {
                    1
                } else {
                    -1
                };
                spin_minus[w] = if u < self.down_plus_prob(w, spin_minus[parent]) {
                    1
                } else {
                    -1
                };
            }
        }
        let mut xi_plus = 0u64;
        let mut xi_minus = 0u64;
        for (i, w) in self.boundary_range.clone().enumerate() {
            if spin_plus[w] == 1 {
                xi_plus |= 1 << i;
            }
            if spin_minus[w] == 1 {
                xi_minus |= 1 << i;
            }
        }
        (xi_plus, xi_minus)
    }
}

/// Right-hand side of the magnetization recursion: given the children's
/// magnetizations `m_w`, returns
///
/// ```text
/// Σ_w theta^2 m_w / (1 + (kappa/4)(1 - theta) m_w).
/// ```
///
/// The recursion claims `m_v` never exceeds this value.
pub fn magnetization_recursion_rhs(child_values: &[f64], theta: f64, kappa: f64) -> f64 {
    neumaier_sum(
        child_values
            .iter()
            .map(|&m| theta * theta * m / (1.0 + 0.25 * kappa * (1.0 - theta) * m)),
    )
}

/// Outcome of [`transfer_bound_scan`]: how many grid points were checked
/// and the smallest slack `rhs - lhs` seen (non-negative when the scan
/// passes).
#[derive(Debug, Clone, Copy)]
pub struct TransferScanReport {
    pub points: usize,
    pub min_slack: f64,
}

/// Grid verification of two transfer-function inequalities.
///
/// For every `theta` in `thetas`, `delta` in `deltas` and `c1` in `c1s`:
///
/// ```text
/// f(delta) · (1 + 4 kappa (1 - theta) c1 delta tanh(delta/2))
///     <=  c2 theta delta,
/// c2 = max(1 + (c1/2 - 1)(1 - theta^2), 1),
/// ```
///
/// and for every pair `x, y` drawn from `±deltas` the symmetrized
/// Lipschitz bound `|f(x) - f(y)| <= 2 f(|x - y| / 2)`. Returns an error
/// naming the first violated inequality.
pub fn transfer_bound_scan(
    thetas: &[f64],
    deltas: &[f64],
    c1s: &[f64],
    kappa: f64,
) -> Result<TransferScanReport> {
    // Absolute cushion for exact-equality grid points (e.g. y = -x in the
    // Lipschitz check); the analytic margins elsewhere are far larger.
    const EVAL_SLACK: f64 = 1e-12;
    let mut points = 0usize;
    let mut min_slack = f64::INFINITY;
    for &theta in thetas {
        let f = |x: f64| 2.0 * (theta * (x / 2.0).tanh()).atanh();
        for &delta in deltas {
            for &c1 in c1s {
                let lhs =
                    f(delta) * (1.0 + 4.0 * kappa * (1.0 - theta) * c1 * delta * (delta / 2.0).tanh());
                let c2 = (1.0 + (0.5 * c1 - 1.0) * (1.0 - theta * theta)).max(1.0);
                let rhs = c2 * theta * delta;
                let slack = rhs - lhs;
                if slack < -EVAL_SLACK {
                    return Err(Error::BoundViolation {
                        what: "transfer-function contraction bound",
                        lhs,
                        rhs,
                    });
                }
                min_slack = min_slack.min(slack);
                points += 1;
            }
            for &other in deltas {
                for y in [other, -other] {
                    let lhs = (f(delta) - f(y)).abs();
                    let rhs = 2.0 * f((delta - y).abs() / 2.0);
                    let slack = rhs - lhs;
                    if slack < -EVAL_SLACK {
                        return Err(Error::BoundViolation {
                            what: "transfer-function symmetrized Lipschitz bound",
                            lhs,
                            rhs,
                        });
                    }
                    min_slack = min_slack.min(slack);
                    points += 1;
                }
            }
        }
    }
    Ok(TransferScanReport { points, min_slack })
}
