//! Distances between distributions and mixing-time estimation: total
//! variation, Hellinger affinity, discrete and continuous-time mixing
//! profiles, Monte-Carlo TV lower bounds, and an exact max-flow
//! certificate for stochastic domination between spin distributions.
//!
//! The continuous-time chain attaches a rate-1 clock to every site, so
//! it applies the discrete kernel a Poisson number of times; the
//! uniformization here therefore takes time in units of *expected kernel
//! applications* (`n · t` for physical time `t` on `n` sites) and
//! reports the Poisson truncation mass alongside the TV value so the
//! caller has a rigorous error band.
//!
//! Stochastic domination between distributions on spin masks (bit `i`
//! set = coordinate `i` is plus) is decided exactly: by Strassen's
//! theorem a monotone coupling exists iff a bipartite flow problem with
//! source capacities `p`, sink capacities `q` and edges only from `x` to
//! `y >= x` carries one unit of flow, and a Dinic max-flow solve settles
//! that definitively at the sizes this crate enumerates.

use crate::dynamics::SpeedupSpec;
use crate::error::{Error, Result};
use crate::gibbs::GibbsTable;
use crate::spectral::MarkovKernel;
use crate::tree::{BoundaryCondition, IsingParams, TreeShape};
use crate::util::{neumaier_sum, replica_rng, NeumaierSum};
use rand::Rng;
use std::collections::HashMap;

/// Largest state count for exact mixing-time iteration.
pub const MAX_TMIX_STATES: usize = 1 << 14;

/// Largest spin-mask bit count for the domination max-flow.
pub const MAX_DOMINATION_BITS: u32 = 10;

/// Poisson tail mass at which uniformization truncates.
pub const POISSON_TAIL: f64 = 1e-12;

/// Slack accepted on the unit flow value when certifying domination.
pub const DOMINATION_TOL: f64 = 1e-9;

fn check_same_len(p: &[f64], q: &[f64]) -> (usize, usize) {
    assert_eq!(p.len(), q.len(), "distributions must share a state space");
    (p.len(), q.len())
}

/// Total variation distance `(1/2) Σ_x |p(x) - q(x)|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    check_same_len(p, q);
    0.5 * neumaier_sum(p.iter().zip(q).map(|(&a, &b)| (a - b).abs()))
}

/// Hellinger affinity `Σ_x sqrt(p(x) q(x))`, in `[0, 1]`.
pub fn hellinger_affinity(p: &[f64], q: &[f64]) -> f64 {
    check_same_len(p, q);
    neumaier_sum(p.iter().zip(q).map(|(&a, &b)| (a * b).sqrt()))
}

/// Hellinger distance `sqrt(2 - 2 affinity)`. Satisfies the sandwich
/// `d_H^2 / 2 <= TV <= d_H`.
pub fn hellinger_distance(p: &[f64], q: &[f64]) -> f64 {
    (2.0 - 2.0 * hellinger_affinity(p, q)).max(0.0).sqrt()
}

fn guard_tmix(states: usize) -> Result<()> {
    if states > MAX_TMIX_STATES {
        return Err(Error::SizeGuard {
            what: "mixing-time iteration states",
            size: states,
            limit: MAX_TMIX_STATES,
        });
    }
    Ok(())
}

/// Smallest number of discrete steps after which the chain started from
/// `start` is within `eps` of `pi` in total variation.
pub fn exact_tmix_discrete(
    kernel: &MarkovKernel,
    pi: &[f64],
    start: &[f64],
    eps: f64,
    max_steps: u64,
) -> Result<u64> {
    guard_tmix(kernel.n())?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(format!("eps must lie in (0, 1), got {eps}")));
    }
    let mut dist = start.to_vec();
    for t in 0..=max_steps {
        if tv_distance(&dist, pi) <= eps {
            return Ok(t);
        }
        dist = kernel.apply_to_dist(&dist);
    }
    Err(Error::Numerical(format!(
        "chain not within {eps} of stationarity after {max_steps} steps"
    )))
}

/// Continuous-time TV value plus the Poisson truncation mass left out.
#[derive(Debug, Clone, Copy)]
pub struct ContinuousTv {
    pub tv: f64,
    /// Unaccounted Poisson mass; the exact TV lies within this of `tv`.
    pub truncation: f64,
}

/// TV distance of the uniformized continuous-time chain from `pi` after
/// `expected_updates` expected kernel applications:
/// `H_t = Σ_k Pois(expected_updates; k) P^k`.
pub fn continuous_tv(
    kernel: &MarkovKernel,
    pi: &[f64],
    start: &[f64],
    expected_updates: f64,
) -> Result<ContinuousTv> {
    guard_tmix(kernel.n())?;
    if !(expected_updates >= 0.0 && expected_updates.is_finite()) {
        return Err(Error::invalid(format!(
            "expected update count must be finite and non-negative, got {expected_updates}"
        )));
    }
    let lambda = expected_updates;
    let mut mix = vec![0.0f64; kernel.n()];
    let mut dist = start.to_vec();
    let mut covered = NeumaierSum::new();
    let mut log_fact = 0.0f64; // ln k!
    let cap = (lambda + 50.0 * lambda.sqrt().max(1.0) + 100.0) as u64;
    let mut k = 0u64;
    loop {
        if k > 0 {
            log_fact += (k as f64).ln();
            dist = kernel.apply_to_dist(&dist);
        }
        let log_w = if lambda == 0.0 {
            if k == 0 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        } else {
            -lambda + k as f64 * lambda.ln() - log_fact
        };
        let w = log_w.exp();
        if w > 0.0 {
            for (m, d) in mix.iter_mut().zip(&dist) {
                *m += w * d;
            }
            covered.add(w);
        }
        let remaining = 1.0 - covered.value();
        if remaining <= POISSON_TAIL && k as f64 >= lambda {
            // The discarded kernel powers are distributions, so the TV
            // error from truncation is at most the missing mass.
            return Ok(ContinuousTv {
                tv: tv_distance(&mix, pi),
                truncation: remaining.max(0.0),
            });
        }
        k += 1;
        if k > cap {
            return Err(Error::Numerical(format!(
                "uniformization failed to cover the Poisson mass by k = {cap}"
            )));
        }
    }
}

/// Continuous-time mixing time in expected-update units: the smallest
/// horizon at which the TV from `pi` drops to `eps`, located by doubling
/// and bisection (TV from stationarity is non-increasing in time).
pub fn exact_tmix_continuous(
    kernel: &MarkovKernel,
    pi: &[f64],
    start: &[f64],
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(format!("eps must lie in (0, 1), got {eps}")));
    }
    let tv_at = |t: f64| -> Result<f64> { Ok(continuous_tv(kernel, pi, start, t)?.tv) };
    if tv_at(0.0)? <= eps {
        return Ok(0.0);
    }
    let mut hi = 1.0f64;
    let mut doublings = 0;
    while tv_at(hi)? > eps {
        hi *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Err(Error::Numerical(
                "mixing horizon exceeds 2^60 expected updates".into(),
            ));
        }
    }
    let mut lo = hi / 2.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if tv_at(mid)? <= eps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// A Monte-Carlo lower-bound estimate on a TV distance, with a bootstrap
/// percentile interval.
#[derive(Debug, Clone, Copy)]
pub struct TvLowerBound {
    pub estimate: f64,
    pub lower_ci: f64,
    pub upper_ci: f64,
}

/// Estimates `TV(law of samples_p, law of samples_q)` for a statistic
/// taking finitely many exactly representable values (counts per value
/// are compared directly). Because projecting through a statistic can
/// only shrink TV, the result estimates a lower bound on the TV between
/// the underlying chains. The interval is a percentile bootstrap with
/// `resamples` rounds at 95% coverage.
pub fn mc_tv_lower_bound(
    samples_p: &[f64],
    samples_q: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<TvLowerBound> {
    if samples_p.is_empty() || samples_q.is_empty() {
        return Err(Error::invalid("need samples on both sides"));
    }
    if samples_p.iter().chain(samples_q).any(|v| v.is_nan()) {
        return Err(Error::invalid("samples must not contain NaN"));
    }
    let empirical_tv = |p: &[f64], q: &[f64]| -> f64 {
        let mut counts: HashMap<u64, (f64, f64)> = HashMap::new();
        for &v in p {
            counts.entry(v.to_bits()).or_default().0 += 1.0;
        }
        for &v in q {
            counts.entry(v.to_bits()).or_default().1 += 1.0;
        }
        let (np, nq) = (p.len() as f64, q.len() as f64);
        0.5 * counts
            .values()
            .map(|&(cp, cq)| (cp / np - cq / nq).abs())
            .sum::<f64>()
    };
    let estimate = empirical_tv(samples_p, samples_q);
    let mut rng = replica_rng(seed, 0);
    let mut boot: Vec<f64> = (0..resamples)
        .map(|_| {
            let rp: Vec<f64> = (0..samples_p.len())
                .map(|_| samples_p[rng.random_range(0..samples_p.len())])
                .collect();
            let rq: Vec<f64> = (0..samples_q.len())
                .map(|_| samples_q[rng.random_range(0..samples_q.len())])
                .collect();
            empirical_tv(&rp, &rq)
        })
        .collect();
    boot.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let pick = |q: f64| -> f64 {
        if boot.is_empty() {
            estimate
        } else {
            boot[((boot.len() - 1) as f64 * q).round() as usize]
        }
    };
    Ok(TvLowerBound {
        estimate,
        lower_ci: pick(0.025),
        upper_ci: pick(0.975),
    })
}

/// Dinic max-flow on a small dense network with float capacities.
struct Dinic {
    to: Vec<usize>,
    cap: Vec<f64>,
    head: Vec<Vec<usize>>,
}

impl Dinic {
    const EPS: f64 = 1e-13;

    fn new(nodes: usize) -> Self {
        Self {
            to: Vec::new(),
            cap: Vec::new(),
            head: vec![Vec::new(); nodes],
        }
    }

    fn add_edge(&mut self, u: usize, v: usize, cap: f64) {
        self.head[u].push(self.to.len());
        self.to.push(v);
        self.cap.push(cap);
        self.head[v].push(self.to.len());
        self.to.push(u);
        self.cap.push(0.0);
    }

    fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let n = self.head.len();
        let mut total = 0.0;
        loop {
            // Level graph by BFS over residual edges.
            let mut level = vec![usize::MAX; n];
            level[s] = 0;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &e in &self.head[u] {
                    let v = self.to[e];
                    if self.cap[e] > Self::EPS && level[v] == usize::MAX {
                        level[v] = level[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            if level[t] == usize::MAX {
                return total;
            }
            // Blocking flow by iterative DFS with edge pointers.
            let mut it = vec![0usize; n];
            loop {
                let pushed = self.dfs(s, t, f64::INFINITY, &level, &mut it);
                if pushed <= Self::EPS {
                    break;
                }
                total += pushed;
            }
        }
    }

    fn dfs(&mut self, u: usize, t: usize, limit: f64, level: &[usize], it: &mut [usize]) -> f64 {
        if u == t {
            return limit;
        }
        while it[u] < self.head[u].len() {
            let e = self.head[u][it[u]];
            let v = self.to[e];
            if self.cap[e] > Self::EPS && level[v] == level[u] + 1 {
                let pushed = self.dfs(v, t, limit.min(self.cap[e]), level, it);
                if pushed > Self::EPS {
                    self.cap[e] -= pushed;
                    self.cap[e ^ 1] += pushed;
                    return pushed;
                }
            }
            it[u] += 1;
        }
        0.0
    }
}

/// Decides whether `q` stochastically dominates `p` on spin masks of
/// `n_bits` coordinates (partial order: `x <= y` iff every plus of `x`
/// is a plus of `y`).
///
/// By Strassen's theorem this holds iff a monotone coupling exists, i.e.
/// iff the bipartite network source -> x (capacity `p(x)`) -> y for
/// every `y >= x` -> sink (capacity `q(y)`) carries one unit of flow.
/// A cheap necessary check on principal up-sets runs first; the max-flow
/// then settles the answer exactly.
pub fn is_stochastically_dominated(p: &[f64], q: &[f64], n_bits: u32) -> Result<bool> {
    if n_bits > MAX_DOMINATION_BITS {
        return Err(Error::SizeGuard {
            what: "domination mask bits",
            size: n_bits as usize,
            limit: MAX_DOMINATION_BITS as usize,
        });
    }
    let n = 1usize << n_bits;
    if p.len() != n || q.len() != n {
        return Err(Error::invalid(format!(
            "distributions must have 2^{n_bits} = {n} entries"
        )));
    }
    for dist in [p, q] {
        if dist.iter().any(|&v| v.is_nan() || v < 0.0) {
            return Err(Error::invalid("probabilities must be non-negative"));
        }
        let total = neumaier_sum(dist.iter().copied());
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("distribution sums to {total}, not 1")));
        }
    }
    // Principal up-sets {y : y >= x} give a fast necessary condition.
    for x in 0..n {
        let mut p_up = 0.0;
        let mut q_up = 0.0;
        for y in 0..n {
            if x & !y == 0 {
                p_up += p[y];
                q_up += q[y];
            }
        }
        if p_up > q_up + DOMINATION_TOL {
            return Ok(false);
        }
    }
    let source = 0;
    let sink = 1;
    let x_node = |x: usize| 2 + x;
    let y_node = |y: usize| 2 + n + y;
    let mut net = Dinic::new(2 + 2 * n);
    for x in 0..n {
        if p[x] > 0.0 {
            net.add_edge(source, x_node(x), p[x]);
        }
        if q[x] > 0.0 {
            net.add_edge(y_node(x), sink, q[x]);
        }
    }
    for x in 0..n {
        if p[x] == 0.0 {
            continue;
        }
        for y in 0..n {
            if x & !y == 0 && q[y] > 0.0 {
                net.add_edge(x_node(x), y_node(y), 2.0);
            }
        }
    }
    Ok(net.max_flow(source, sink) >= 1.0 - DOMINATION_TOL)
}

/// Exact TV distance between the joint law of the designated subtrees
/// under the free-boundary measure on the whole tree and the product of
/// independent free-boundary measures on each designated subtree.
pub fn designated_subtree_product_tv(
    shape: &TreeShape,
    params: &IsingParams,
    spec: &SpeedupSpec,
) -> Result<f64> {
    let boundary = BoundaryCondition::Free.resolve(shape)?;
    let table = GibbsTable::new(shape, params, &boundary)?;
    let region = spec.designated_region(shape);
    if region.len() > 20 {
        return Err(Error::SizeGuard {
            what: "designated region vertices",
            size: region.len(),
            limit: 20,
        });
    }
    // Marginal of the full measure on the region.
    let bit_of: HashMap<usize, usize> = region.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut marginal = vec![0.0f64; 1 << region.len()];
    for (mask, prob) in table.masks() {
        let mut key = 0usize;
        for (i, &v) in region.iter().enumerate() {
            if table.spin_at(mask, v) == 1 {
                key |= 1 << i;
            }
        }
        marginal[key] += prob;
    }
    // Product of per-subtree free measures. Each designated subtree is a
    // complete tree of its own; its sorted global vertex list is in the
    // same breadth-first order as the standalone shape.
    let depth = shape.h() - spec.r();
    let mut factors: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
    for i in 0..spec.anchors().len() {
        let vertices = spec.designated_subtree(shape, i);
        let probs = if depth == 0 {
            vec![0.5, 0.5]
        } else {
            let sub_shape = TreeShape::new(shape.b(), depth)?;
            let sub_boundary = BoundaryCondition::Free.resolve(&sub_shape)?;
            let sub_table = GibbsTable::new(&sub_shape, params, &sub_boundary)?;
            sub_table.distribution().to_vec()
        };
        factors.push((vertices, probs));
    }
    let mut product = vec![0.0f64; 1 << region.len()];
    for (key, slot) in product.iter_mut().enumerate() {
        let mut prob = 1.0;
        for (vertices, probs) in &factors {
            let mut local = 0usize;
            for (j, v) in vertices.iter().enumerate() {
                if key >> bit_of[v] & 1 == 1 {
                    local |= 1 << j;
                }
            }
            prob *= probs[local];
        }
        *slot = prob;
    }
    Ok(tv_distance(&marginal, &product))
}

/// Upper bound certified for [`designated_subtree_product_tv`]:
/// `b^(2 ell) theta^(2 (r - ell))`.
pub fn designated_subtree_tv_bound(b: u32, ell: u32, r: u32, theta: f64) -> Result<f64> {
    if ell == 0 || r < ell {
        return Err(Error::invalid("scales must satisfy 1 <= ell <= r"));
    }
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::invalid(format!("theta must lie in [0, 1), got {theta}")));
    }
    Ok(f64::from(b).powi(2 * ell as i32) * theta.powi(2 * (r - ell) as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::MaskContext;
    use crate::spectral::{product_distribution, single_site_kernel};
    use crate::tree::ResolvedBoundary;

    fn random_dist<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
        let mut d: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.01).collect();
        let total: f64 = d.iter().sum();
        for v in &mut d {
            *v /= total;
        }
        d
    }

    #[test]
    fn tv_distance_basics() {
        let p = [0.5, 0.5, 0.0];
        let q = [0.25, 0.25, 0.5];
        assert_eq!(tv_distance(&p, &p), 0.0);
        assert!((tv_distance(&p, &q) - 0.5).abs() < 1e-15);
        assert!((tv_distance(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hellinger_sandwich_holds_on_random_pairs() {
        let mut rng = replica_rng(3, 0);
        for _ in 0..50 {
            let p = random_dist(8, &mut rng);
            let q = random_dist(8, &mut rng);
            let tv = tv_distance(&p, &q);
            let h = hellinger_distance(&p, &q);
            assert!(
                0.5 * h * h <= tv + 1e-12 && tv <= h + 1e-12,
                "sandwich broken: tv = {tv}, d_H = {h}"
            );
        }
    }

    #[test]
    fn hellinger_affinity_is_multiplicative_over_products() {
        let mut rng = replica_rng(5, 0);
        let p1 = random_dist(3, &mut rng);
        let q1 = random_dist(3, &mut rng);
        let p2 = random_dist(4, &mut rng);
        let q2 = random_dist(4, &mut rng);
        let joint = hellinger_affinity(
            &product_distribution(&[p1.clone(), p2.clone()]),
            &product_distribution(&[q1.clone(), q2.clone()]),
        );
        let split = hellinger_affinity(&p1, &q1) * hellinger_affinity(&p2, &q2);
        assert!((joint - split).abs() < 1e-12, "joint {joint} vs split {split}");
    }

    #[test]
    fn two_state_mixing_times_match_the_eigenvalue() {
        // P = [[0.7, 0.3], [0.1, 0.9]]: pi = (0.25, 0.75), and from
        // state 0 the TV gap decays as 0.75 * 0.6^t.
        let kernel =
            MarkovKernel::from_dense(&[vec![0.7, 0.3], vec![0.1, 0.9]]).unwrap();
        let pi = [0.25, 0.75];
        let start = [1.0, 0.0];
        let t = exact_tmix_discrete(&kernel, &pi, &start, 0.25, 1000).unwrap();
        assert_eq!(t, 3, "0.75 * 0.6^t first dips below 1/4 at t = 3");

        // Continuous time: H_t = exp(t (P - I)) gives 0.75 e^{-0.4 t}.
        for t in [0.5, 5.0, 20.0] {
            let got = continuous_tv(&kernel, &pi, &start, t).unwrap();
            let want = 0.75 * (-0.4 * t).exp();
            assert!(
                (got.tv - want).abs() < 1e-9,
                "t = {t}: uniformization {} vs exact {want}",
                got.tv
            );
            assert!(got.truncation <= POISSON_TAIL);
        }
        let tmix = exact_tmix_continuous(&kernel, &pi, &start, 0.25).unwrap();
        // 0.75 e^{-0.4 t} = 0.25 at t = ln(3)/0.4.
        let want = 3f64.ln() / 0.4;
        assert!((tmix - want).abs() < 1e-6, "tmix {tmix} vs {want}");
    }

    #[test]
    fn gibbs_started_single_site_chain_reaches_stationarity() {
        let shape = TreeShape::new(2, 1).unwrap();
        let params = IsingParams::critical(2).unwrap();
        let boundary = BoundaryCondition::Free.resolve(&shape).unwrap();
        let table = GibbsTable::new(&shape, &params, &boundary).unwrap();
        let kernel = single_site_kernel(&shape, &params, &boundary).unwrap();
        let mut start = vec![0.0; table.distribution().len()];
        start[0] = 1.0;
        let t = exact_tmix_discrete(&kernel, table.distribution(), &start, 0.25, 100_000).unwrap();
        assert!(t > 0, "a point mass is not stationary");
        let later = exact_tmix_discrete(&kernel, table.distribution(), &start, 0.01, 100_000).unwrap();
        assert!(later >= t, "smaller eps cannot be reached sooner");
    }

    #[test]
    fn mc_tv_bound_recovers_a_known_coin_gap() {
        let mut rng = replica_rng(9, 0);
        let n = 20_000;
        let p: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 })
            .collect();
        let q: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < 0.8 { 1.0 } else { -1.0 })
            .collect();
        let bound = mc_tv_lower_bound(&p, &q, 200, 17).unwrap();
        assert!(
            (bound.estimate - 0.3).abs() < 0.05,
            "estimate {} should be near the true coin TV 0.3",
            bound.estimate
        );
        assert!(bound.lower_ci <= bound.estimate && bound.estimate <= bound.upper_ci);
        assert!(bound.upper_ci - bound.lower_ci < 0.1, "interval implausibly wide");
    }

    /// Exhaustive up-set oracle for Strassen domination on tiny lattices.
    fn dominated_by_upsets(p: &[f64], q: &[f64], n_bits: u32) -> bool {
        let n = 1usize << n_bits;
        'sets: for s in 0..1u32 << n {
            // Check s encodes an up-set: closed under going up.
            for x in 0..n {
                if s >> x & 1 == 1 {
                    for y in 0..n {
                        if x & !y == 0 && s >> y & 1 == 0 {
                            continue 'sets;
                        }
                    }
                }
            }
            let pu: f64 = (0..n).filter(|&x| s >> x & 1 == 1).map(|x| p[x]).sum();
            let qu: f64 = (0..n).filter(|&x| s >> x & 1 == 1).map(|x| q[x]).sum();
            if pu > qu + DOMINATION_TOL {
                return false;
            }
        }
        true
    }

    #[test]
    fn domination_flow_matches_exhaustive_upset_oracle() {
        let mut rng = replica_rng(13, 0);
        let mut seen_true = 0;
        let mut seen_false = 0;
        for trial in 0..40 {
            let (p, q) = if trial % 2 == 0 {
                // Independent product Bernoulli pairs; dominated iff the
                // success probabilities are ordered, so both answers occur.
                let a: f64 = rng.random();
                let b: f64 = rng.random();
                let bern = |t: f64| {
                    (0..8u32)
                        .map(|x| {
                            (0..3).map(|i| if x >> i & 1 == 1 { t } else { 1.0 - t }).product()
                        })
                        .collect::<Vec<f64>>()
                };
                (bern(a), bern(b))
            } else {
                (random_dist(8, &mut rng), random_dist(8, &mut rng))
            };
            let flow = is_stochastically_dominated(&p, &q, 3).unwrap();
            let oracle = dominated_by_upsets(&p, &q, 3);
            assert_eq!(flow, oracle, "trial {trial}: flow and up-set oracle disagree");
            if flow {
                seen_true += 1;
            } else {
                seen_false += 1;
            }
        }
        assert!(seen_true > 0 && seen_false > 0, "test should hit both answers");
    }

    #[test]
    fn domination_handles_point_masses_and_rejects_reversal() {
        let n = 8;
        let point = |x: usize| {
            let mut d = vec![0.0; n];
            d[x] = 1.0;
            d
        };
        // 0b001 <= 0b011 but not <= 0b100.
        assert!(is_stochastically_dominated(&point(0b001), &point(0b011), 3).unwrap());
        assert!(!is_stochastically_dominated(&point(0b001), &point(0b100), 3).unwrap());
        assert!(!is_stochastically_dominated(&point(0b011), &point(0b001), 3).unwrap());
        assert!(is_stochastically_dominated(&point(0b101), &point(0b101), 3).unwrap());
    }

    #[test]
    fn censoring_keeps_the_chain_higher_and_farther_from_stationarity() {
        let shape = TreeShape::new(2, 1).unwrap();
        let params = IsingParams::critical(2).unwrap();
        let boundary: ResolvedBoundary = BoundaryCondition::Free.resolve(&shape).unwrap();
        let table = GibbsTable::new(&shape, &params, &boundary).unwrap();
        let ctx = MaskContext::new(&shape, &params, &boundary).unwrap();
        let mut rng = replica_rng(23, 0);
        let full: Vec<usize> = (0..12).map(|_| rng.random_range(0..3)).collect();
        // Censor by dropping one third of the updates.
        let censored: Vec<usize> = full
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 3 != 0)
            .map(|(_, &v)| v)
            .collect();
        let full_dist = ctx.censored_run(&full).unwrap();
        let censored_dist = ctx.censored_run(&censored).unwrap();
        let tv_full = tv_distance(&full_dist, table.distribution());
        let tv_censored = tv_distance(&censored_dist, table.distribution());
        assert!(
            tv_full <= tv_censored + 1e-12,
            "dropping updates must not bring the chain closer: {tv_full} vs {tv_censored}"
        );
        assert!(
            is_stochastically_dominated(&full_dist, &censored_dist, 3).unwrap(),
            "the censored chain should sit above the full one"
        );
    }

    #[test]
    fn designated_subtree_marginal_is_close_to_product() {
        let shape = TreeShape::new(2, 3).unwrap();
        let params = IsingParams::critical(2).unwrap();
        let spec = SpeedupSpec::new(&shape, 1, 2).unwrap();
        let tv = designated_subtree_product_tv(&shape, &params, &spec).unwrap();
        assert!((0.0..=1.0).contains(&tv), "TV out of range: {tv}");
        let bound = designated_subtree_tv_bound(2, 1, 2, params.theta()).unwrap();
        assert!(tv <= bound, "tv {tv} exceeds bound {bound}");
        // At this scale the bound is loose (it exceeds 1); the real
        // dependence through the rest of the tree is far smaller.
        assert!(tv < 0.5, "designated subtrees should be nearly independent, tv = {tv}");
    }
}
