//! Transition kernels of the dynamics on small state spaces, their
//! spectral gaps, and the comparison machinery relating them.
//!
//! States are bitmasks over the free vertices (the convention of
//! [`crate::gibbs::GibbsTable`] and [`crate::dynamics::MaskContext`]).
//! Kernels are stored in compressed sparse row form and validated to be
//! stochastic on construction; reversibility with respect to a supplied
//! distribution is checked wherever the spectral theory needs it.
//!
//! For a reversible kernel `P` with stationary distribution `pi`, the gap
//! is `1 - lambda_2` where `lambda_2` is the second-largest eigenvalue of
//! the symmetrization `D^{1/2} P D^{-1/2}`, `D = diag(pi)`. Small systems
//! are solved densely; larger ones fall back to power iteration with
//! deflation against the known top eigenvector `sqrt(pi)`. The Rayleigh
//! quotient of any deflated vector is a *lower* bound on `lambda_2`, so
//! the returned gap can only err upwards — the safe direction for every
//! upper-bound acceptance check in this crate — and the iteration runs
//! until the eigenvector residual is at most [`RESIDUAL_TOL`] anyway.
//!
//! The closed-form section at the bottom evaluates the exact variance and
//! gap formulas for the depth-weighted magnetization; these are plain
//! scalar functions of `(b, h, ...)` so they stay usable for heights far
//! beyond anything enumerable.

use crate::dynamics::{BlockCover, BlockUpdatePlan, MaskContext, SpeedupSpec, SpinGraph};
use crate::error::{Error, Result};
use crate::tree::{IsingParams, ResolvedBoundary, TreeShape};
use crate::util::{neumaier_sum, replica_rng, NeumaierSum};
use nalgebra::DMatrix;
use rand::Rng;

/// Largest state count for explicitly assembled kernels (2^15).
pub const MAX_KERNEL_STATES: usize = 1 << 15;

/// Largest block size enumerated during block-kernel assembly.
pub const MAX_BLOCK_ENUMERATION: usize = 12;

/// Largest state count handed to the dense symmetric eigensolver.
pub const DENSE_EIGEN_LIMIT: usize = 4096;

/// Row-stochasticity tolerance for kernel construction.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Detailed-balance tolerance: largest allowed `|pi P - (pi P)^T|` entry.
pub const REVERSIBILITY_TOL: f64 = 1e-10;

/// Eigenvector residual at which power iteration stops.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Hard cap on power-iteration steps.
pub const POWER_ITER_CAP: u64 = 1_000_000;

/// A probability distribution over states: non-negative entries summing
/// to 1 within [`ROW_SUM_TOL`].
#[derive(Debug, Clone)]
pub struct DistVector {
    probs: Vec<f64>,
}

impl DistVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|&p| p.is_nan() || p < 0.0) {
            return Err(Error::invalid("distribution entries must be non-negative"));
        }
        let total = neumaier_sum(probs.iter().copied());
        if (total - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::invalid(format!(
                "distribution sums to {total}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Uniform distribution on `n` states.
    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// Point mass at state `i`.
    pub fn point_mass(n: usize, i: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[i] = 1.0;
        Self { probs }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.probs
    }
}

/// A row-stochastic matrix in compressed sparse row form.
#[derive(Debug, Clone)]
pub struct MarkovKernel {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl MarkovKernel {
    /// Builds a kernel from per-row `(column, probability)` entries.
    /// Entries in a row may repeat (they are summed); each row must be
    /// non-negative and sum to 1 within [`ROW_SUM_TOL`].
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_unstable_by_key(|&(c, _)| c);
            let mut sum = NeumaierSum::new();
            let mut last_col = usize::MAX;
            for (c, v) in row {
                if c >= n {
                    return Err(Error::invalid(format!(
                        "row {i}: column {c} out of range for {n} states"
                    )));
                }
                if v < 0.0 {
                    return Err(Error::invalid(format!(
                        "row {i}: negative transition probability {v}"
                    )));
                }
                sum.add(v);
                if c == last_col {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last_col = c;
                }
            }
            if (sum.value() - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(format!(
                    "row {i} sums to {}, not 1",
                    sum.value()
                )));
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            n,
            row_ptr,
            cols,
            vals,
        })
    }

    /// A dense row-major matrix as a kernel.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let entries = rows
            .iter()
            .map(|r| r.iter().copied().enumerate().filter(|&(_, v)| v != 0.0).collect())
            .collect();
        Self::from_rows(entries)
    }

    /// The identity kernel on `n` states.
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    /// Number of states.
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Sparse row `i` as parallel column/value slices.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    /// `P(i, j)`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Row-vector action: the distribution after one step, `phi P`.
    pub fn apply_to_dist(&self, dist: &[f64]) -> Vec<f64> {
        assert_eq!(dist.len(), self.n);
        let mut out = vec![0.0; self.n];
        for (i, &d) in dist.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c] += d * v;
            }
        }
        out
    }

    /// Column-vector action: `(P f)(i) = Σ_j P(i, j) f(j)`.
    pub fn apply_to_fn(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.n);
        (0..self.n)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&c, &v)| v * f[c]).sum()
            })
            .collect()
    }

    /// Transposed entries, row by row (not a stochastic matrix in general).
    fn transpose_rows(&self) -> Vec<Vec<(usize, f64)>> {
        let mut t: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                t[c].push((i, v));
            }
        }
        for row in &mut t {
            row.sort_unstable_by_key(|&(c, _)| c);
        }
        t
    }

    /// Verifies detailed balance `pi(x) P(x, y) = pi(y) P(y, x)` to within
    /// `tol` on every entry.
    pub fn check_reversible(&self, pi: &[f64], tol: f64) -> Result<()> {
        assert_eq!(pi.len(), self.n);
        let transpose = self.transpose_rows();
        let mut worst = 0.0f64;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let back = transpose[i]
                    .binary_search_by_key(&j, |&(c, _)| c)
                    .map(|k| transpose[i][k].1)
                    .unwrap_or(0.0);
                worst = worst.max((pi[i] * v - pi[j] * back).abs());
            }
        }
        if worst > tol {
            return Err(Error::NotReversible { imbalance: worst });
        }
        Ok(())
    }
}

fn guard_states(what: &'static str, states: usize) -> Result<()> {
    if states > MAX_KERNEL_STATES {
        return Err(Error::SizeGuard {
            what,
            size: states,
            limit: MAX_KERNEL_STATES,
        });
    }
    Ok(())
}

/// Single-site heat-bath kernel: uniform vertex among all `n`, frozen
/// vertices rejected, free vertices resampled from their conditional law.
pub fn single_site_kernel(
    shape: &TreeShape,
    params: &IsingParams,
    boundary: &ResolvedBoundary,
) -> Result<MarkovKernel> {
    let ctx = MaskContext::new(shape, params, boundary)?;
    let states = ctx.n_states();
    guard_states("single-site kernel states", states)?;
    let n = shape.n() as f64;
    let frozen_mass = (shape.n() - boundary.n_free()) as f64 / n;
    let mut rows = Vec::with_capacity(states);
    for mask in 0..states as u64 {
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(boundary.n_free() + 1);
        if frozen_mass > 0.0 {
            row.push((mask as usize, frozen_mass));
        }
        for (i, &v) in boundary.free().iter().enumerate() {
            let p = ctx.site_plus_prob(mask, v);
            let set = (mask | 1 << i) as usize;
            let clear = (mask & !(1 << i)) as usize;
            row.push((set, p / n));
            row.push((clear, (1.0 - p) / n));
        }
        rows.push(row);
    }
    MarkovKernel::from_rows(rows)
}

/// Block-dynamics kernel: uniform block of `cover`, resampled exactly.
pub fn block_kernel(
    shape: &TreeShape,
    params: &IsingParams,
    boundary: &ResolvedBoundary,
    cover: &BlockCover,
) -> Result<MarkovKernel> {
    let ctx = MaskContext::new(shape, params, boundary)?;
    let states = ctx.n_states();
    guard_states("block kernel states", states)?;
    for (i, block) in cover.blocks().iter().enumerate() {
        if block.len() > MAX_BLOCK_ENUMERATION {
            return Err(Error::SizeGuard {
                what: "block size in kernel assembly",
                size: block.len(),
                limit: MAX_BLOCK_ENUMERATION,
            });
        }
        debug_assert!(i < cover.blocks().len());
    }
    let graph = SpinGraph::tree(shape);
    let k = cover.blocks().len() as f64;
    // Bit positions of each block's vertices within the free mask.
    let block_bits: Vec<Vec<usize>> = cover
        .blocks()
        .iter()
        .map(|b| {
            b.iter()
                .map(|&v| boundary.free_index(v).expect("cover blocks are free"))
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(states);
    for mask in 0..states as u64 {
        let mut row: Vec<(usize, f64)> = Vec::new();
        for (block, bits) in cover.blocks().iter().zip(&block_bits) {
            let plan = BlockUpdatePlan::new(&graph, params, block, |u| ctx.spin_in_mask(mask, u))?;
            let clear_mask = bits.iter().fold(mask, |m, &b| m & !(1u64 << b));
            for outcome in 0..1u64 << block.len() {
                let p = plan.outcome_prob_mask(outcome);
                if p == 0.0 {
                    continue;
                }
                let mut target = clear_mask;
                for (pos, &b) in bits.iter().enumerate() {
                    if outcome >> pos & 1 == 1 {
                        target |= 1 << b;
                    }
                }
                row.push((target as usize, p / k));
            }
        }
        rows.push(row);
    }
    MarkovKernel::from_rows(rows)
}

/// Speedup-chain kernel on a fully free tree: uniform site; designated
/// sites trigger their block update, all others a heat-bath move.
pub fn speedup_kernel(
    shape: &TreeShape,
    params: &IsingParams,
    boundary: &ResolvedBoundary,
    spec: &SpeedupSpec,
) -> Result<MarkovKernel> {
    if boundary.n_free() != shape.n() {
        return Err(Error::invalid(
            "the speedup chain is defined on a fully free tree",
        ));
    }
    let ctx = MaskContext::new(shape, params, boundary)?;
    let states = ctx.n_states();
    guard_states("speedup kernel states", states)?;
    let graph = SpinGraph::tree(shape);
    let n = shape.n() as f64;
    let blocks: Vec<Vec<usize>> = (0..spec.anchors().len())
        .map(|i| spec.block(shape, i))
        .collect();
    for b in &blocks {
        if b.len() > MAX_BLOCK_ENUMERATION {
            return Err(Error::SizeGuard {
                what: "speedup block size in kernel assembly",
                size: b.len(),
                limit: MAX_BLOCK_ENUMERATION,
            });
        }
    }
    let mut rows = Vec::with_capacity(states);
    for mask in 0..states as u64 {
        let mut row: Vec<(usize, f64)> = Vec::new();
        for v in 0..shape.n() {
            match spec.designated_index(v) {
                None => {
                    let p = ctx.site_plus_prob(mask, v);
                    let i = boundary.free_index(v).unwrap();
                    row.push(((mask | 1 << i) as usize, p / n));
                    row.push(((mask & !(1u64 << i)) as usize, (1.0 - p) / n));
                }
                Some(bi) => {
                    let block = &blocks[bi];
                    let plan =
                        BlockUpdatePlan::new(&graph, params, block, |u| ctx.spin_in_mask(mask, u))?;
                    let bits: Vec<usize> = block
                        .iter()
                        .map(|&u| boundary.free_index(u).unwrap())
                        .collect();
                    let clear_mask = bits.iter().fold(mask, |m, &b| m & !(1u64 << b));
                    for outcome in 0..1u64 << block.len() {
                        let p = plan.outcome_prob_mask(outcome);
                        if p == 0.0 {
                            continue;
                        }
                        let mut target = clear_mask;
                        for (pos, &b) in bits.iter().enumerate() {
                            if outcome >> pos & 1 == 1 {
                                target |= 1 << b;
                            }
                        }
                        row.push((target as usize, p / n));
                    }
                }
            }
        }
        rows.push(row);
    }
    MarkovKernel::from_rows(rows)
}

/// `Var_pi(f)`.
pub fn variance(pi: &[f64], f: &[f64]) -> f64 {
    assert_eq!(pi.len(), f.len());
    let mean = neumaier_sum(pi.iter().zip(f).map(|(&p, &x)| p * x));
    neumaier_sum(
        pi.iter()
            .zip(f)
            .map(|(&p, &x)| p * (x - mean) * (x - mean)),
    )
}

/// Entropy functional `Ent_pi(f) = E[f log f] - E[f] log E[f]` for
/// non-negative `f`, with `0 log 0 = 0`.
pub fn entropy(pi: &[f64], f: &[f64]) -> f64 {
    assert_eq!(pi.len(), f.len());
    let xlogx = |x: f64| if x == 0.0 { 0.0 } else { x * x.ln() };
    let mean = neumaier_sum(pi.iter().zip(f).map(|(&p, &x)| p * x));
    let mean_xlogx = neumaier_sum(pi.iter().zip(f).map(|(&p, &x)| {
        debug_assert!(x >= 0.0, "entropy requires a non-negative function");
        p * xlogx(x)
    }));
    mean_xlogx - xlogx(mean)
}

/// Dirichlet form via the operator route, `< (I - P) f, f >_pi`.
pub fn dirichlet_form_operator(kernel: &MarkovKernel, pi: &[f64], f: &[f64]) -> f64 {
    let pf = kernel.apply_to_fn(f);
    neumaier_sum(
        pi.iter()
            .zip(f)
            .zip(&pf)
            .map(|((&p, &x), &px)| p * x * (x - px)),
    )
}

/// Dirichlet form via the pairwise route,
/// `(1/2) Σ_{x,y} pi(x) P(x, y) (f(x) - f(y))^2`. Equals the operator
/// route exactly when `(P, pi)` is reversible.
pub fn dirichlet_form_pairwise(kernel: &MarkovKernel, pi: &[f64], f: &[f64]) -> f64 {
    let mut acc = NeumaierSum::new();
    for i in 0..kernel.n() {
        let (cols, vals) = kernel.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            let d = f[i] - f[j];
            acc.add(0.5 * pi[i] * v * d * d);
        }
    }
    acc.value()
}

/// Which eigensolver produced a [`GapEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapMethod {
    Dense,
    PowerIteration,
}

/// Spectral information about the second-largest eigenvalue.
#[derive(Debug, Clone, Copy)]
pub struct GapEstimate {
    pub lambda2: f64,
    pub gap: f64,
    pub method: GapMethod,
    /// Final eigenvector residual (`0` for the dense route).
    pub residual: f64,
    pub iterations: u64,
}

/// Whether the caller can guarantee the kernel is positive semi-definite
/// in `L^2(pi)`. All kernels built by this module's constructors are:
/// they are uniform mixtures of conditional-expectation projections.
/// The hint lets power iteration skip the `(P + I)/2` shift that
/// otherwise protects against a dominant negative eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumHint {
    Psd,
    Indefinite,
}

/// Computes the spectral gap `1 - lambda_2` of a reversible kernel.
pub fn spectral_gap(kernel: &MarkovKernel, pi: &[f64], hint: SpectrumHint) -> Result<GapEstimate> {
    let n = kernel.n();
    assert_eq!(pi.len(), n);
    if n == 1 {
        // A one-state chain mixes instantly; by convention its gap is 1.
        return Ok(GapEstimate {
            lambda2: 0.0,
            gap: 1.0,
            method: GapMethod::Dense,
            residual: 0.0,
            iterations: 0,
        });
    }
    kernel.check_reversible(pi, REVERSIBILITY_TOL)?;
    if n <= DENSE_EIGEN_LIMIT {
        let eigs = dense_spectrum_unchecked(kernel, pi);
        debug_assert!((eigs[0] - 1.0).abs() < 1e-8, "top eigenvalue should be 1");
        Ok(GapEstimate {
            lambda2: eigs[1],
            gap: 1.0 - eigs[1],
            method: GapMethod::Dense,
            residual: 0.0,
            iterations: 0,
        })
    } else {
        power_iteration_gap(kernel, pi, hint)
    }
}

/// All eigenvalues of the symmetrized kernel, sorted in decreasing order.
/// Dense computation; limited to [`DENSE_EIGEN_LIMIT`] states.
pub fn dense_spectrum(kernel: &MarkovKernel, pi: &[f64]) -> Result<Vec<f64>> {
    if kernel.n() > DENSE_EIGEN_LIMIT {
        return Err(Error::SizeGuard {
            what: "dense spectrum states",
            size: kernel.n(),
            limit: DENSE_EIGEN_LIMIT,
        });
    }
    kernel.check_reversible(pi, REVERSIBILITY_TOL)?;
    Ok(dense_spectrum_unchecked(kernel, pi))
}

fn dense_spectrum_unchecked(kernel: &MarkovKernel, pi: &[f64]) -> Vec<f64> {
    let n = kernel.n();
    let sqrt_pi: Vec<f64> = pi.iter().map(|&p| p.sqrt()).collect();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let (cols, vals) = kernel.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            // Accumulate (S + S^T)/2 so the matrix is symmetric to the ulp.
            let s = 0.5 * v * sqrt_pi[i] / sqrt_pi[j];
            m[(i, j)] += s;
            m[(j, i)] += s;
        }
    }
    let mut eigs: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
    eigs.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
    eigs
}

/// Symmetrized kernel in CSR form: `(S + S^T)/2` with
/// `S = D^{1/2} P D^{-1/2}`.
struct SymmetrizedKernel {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SymmetrizedKernel {
    fn build(kernel: &MarkovKernel, pi: &[f64]) -> Self {
        let n = kernel.n();
        let sqrt_pi: Vec<f64> = pi.iter().map(|&p| p.sqrt()).collect();
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        for i in 0..n {
            let (cols, vals) = kernel.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let s = 0.5 * v * sqrt_pi[i] / sqrt_pi[j];
                triplets.push((i, j, s));
                triplets.push((j, i, s));
            }
        }
        triplets.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] = cols.len();
                last = Some((i, j));
            }
        }
        // Fill gaps for empty rows.
        for i in 1..=n {
            if row_ptr[i] == 0 {
                row_ptr[i] = row_ptr[i - 1];
            }
        }
        Self {
            row_ptr,
            cols,
            vals,
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            let mut acc = 0.0;
            for (c, v) in self.cols[r.clone()].iter().zip(&self.vals[r]) {
                acc += v * x[*c];
            }
            *o = acc;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    neumaier_sum(a.iter().zip(b).map(|(&x, &y)| x * y))
}

fn power_iteration_gap(
    kernel: &MarkovKernel,
    pi: &[f64],
    hint: SpectrumHint,
) -> Result<GapEstimate> {
    let n = kernel.n();
    let s = SymmetrizedKernel::build(kernel, pi);
    // sqrt(pi) is the exact top eigenvector and already has unit norm.
    let v1: Vec<f64> = pi.iter().map(|&p| p.sqrt()).collect();
    let deflate = |x: &mut Vec<f64>| {
        let a = dot(x, &v1);
        for (xi, vi) in x.iter_mut().zip(&v1) {
            *xi -= a * vi;
        }
    };
    let normalize = |x: &mut Vec<f64>| -> f64 {
        let nrm = dot(x, x).sqrt();
        if nrm > 0.0 {
            for xi in x.iter_mut() {
                *xi /= nrm;
            }
        }
        nrm
    };
    let shifted = hint == SpectrumHint::Indefinite;
    let mut rng = replica_rng(0x5EED, 0);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    deflate(&mut x);
    if normalize(&mut x) == 0.0 {
        return Err(Error::Numerical(
            "power iteration start vector collapsed after deflation".into(),
        ));
    }
    let mut y = vec![0.0f64; n];
    for iter in 1..=POWER_ITER_CAP {
        s.apply(&x, &mut y);
        if shifted {
            // Work with (S + I)/2 so a dominant negative eigenvalue cannot
            // hijack the iteration; eigenvalues map as mu = (lambda+1)/2.
            for (yi, xi) in y.iter_mut().zip(&x) {
                *yi = 0.5 * (*yi + *xi);
            }
        }
        deflate(&mut y);
        let rho = dot(&x, &y);
        // Residual ||Ax - rho x|| in the iterated matrix's scale.
        let res = y
            .iter()
            .zip(&x)
            .map(|(&yi, &xi)| (yi - rho * xi) * (yi - rho * xi))
            .sum::<f64>()
            .sqrt();
        let lambda2 = if shifted { 2.0 * rho - 1.0 } else { rho };
        let lambda_res = if shifted { 2.0 * res } else { res };
        if lambda_res <= RESIDUAL_TOL {
            return Ok(GapEstimate {
                lambda2,
                gap: 1.0 - lambda2,
                method: GapMethod::PowerIteration,
                residual: lambda_res,
                iterations: iter,
            });
        }
        std::mem::swap(&mut x, &mut y);
        if normalize(&mut x) == 0.0 {
            return Err(Error::Numerical(
                "power iteration vector collapsed; eigenvalue may be exactly zero".into(),
            ));
        }
    }
    Err(Error::Numerical(format!(
        "power iteration failed to reach residual {RESIDUAL_TOL} within {POWER_ITER_CAP} steps"
    )))
}

/// Eigenvalues of a weighted product chain.
///
/// The chain picks coordinate `j` with probability `weights[j]` and moves
/// it by its factor kernel; its eigenvalues are exactly
/// `Σ_j weights[j] · lambda_j(i_j)` over all tuples of factor eigenvalue
/// indices. Returned sorted in decreasing order.
pub fn product_chain_eigenvalues(factor_eigs: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    if factor_eigs.len() != weights.len() || factor_eigs.is_empty() {
        return Err(Error::invalid(
            "need one weight per factor and at least one factor",
        ));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > ROW_SUM_TOL || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::invalid("weights must be a probability vector"));
    }
    let states: usize = factor_eigs.iter().map(|e| e.len()).product();
    guard_states("product chain eigenvalue tuples", states)?;
    let mut out = Vec::with_capacity(states);
    let mut idx = vec![0usize; factor_eigs.len()];
    loop {
        let val = idx
            .iter()
            .zip(factor_eigs)
            .zip(weights)
            .map(|((&i, eigs), &w)| w * eigs[i])
            .sum();
        out.push(val);
        // Mixed-radix increment, coordinate 0 fastest.
        let mut k = 0;
        loop {
            if k == idx.len() {
                out.sort_unstable_by(|a: &f64, b| b.partial_cmp(a).unwrap());
                return Ok(out);
            }
            idx[k] += 1;
            if idx[k] < factor_eigs[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Assembles the product chain explicitly. Composite states are mixed
/// radix with coordinate 0 fastest: `x = Σ_j x_j · stride_j`,
/// `stride_0 = 1`, `stride_{j+1} = stride_j · n_j`.
pub fn product_chain_kernel(factors: &[MarkovKernel], weights: &[f64]) -> Result<MarkovKernel> {
    if factors.len() != weights.len() || factors.is_empty() {
        return Err(Error::invalid(
            "need one weight per factor and at least one factor",
        ));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > ROW_SUM_TOL || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::invalid("weights must be a probability vector"));
    }
    let states: usize = factors.iter().map(|f| f.n()).product();
    guard_states("product chain states", states)?;
    let mut strides = Vec::with_capacity(factors.len());
    let mut acc = 1usize;
    for f in factors {
        strides.push(acc);
        acc *= f.n();
    }
    let mut rows = Vec::with_capacity(states);
    for x in 0..states {
        let mut row: Vec<(usize, f64)> = Vec::new();
        for (j, f) in factors.iter().enumerate() {
            if weights[j] == 0.0 {
                continue;
            }
            let xj = x / strides[j] % f.n();
            let base = x - xj * strides[j];
            let (cols, vals) = f.row(xj);
            for (&yj, &v) in cols.iter().zip(vals) {
                row.push((base + yj * strides[j], weights[j] * v));
            }
        }
        rows.push(row);
    }
    MarkovKernel::from_rows(rows)
}

/// Product of per-factor distributions in the mixed-radix state order of
/// [`product_chain_kernel`].
pub fn product_distribution(factor_pis: &[Vec<f64>]) -> Vec<f64> {
    let states: usize = factor_pis.iter().map(|p| p.len()).product();
    let mut out = Vec::with_capacity(states);
    for x in 0..states {
        let mut rem = x;
        let mut p = 1.0;
        for pi in factor_pis {
            p *= pi[rem % pi.len()];
            rem /= pi.len();
        }
        out.push(p);
    }
    out
}

/// Outcome of the decomposition bound.
#[derive(Debug, Clone, Copy)]
pub struct DecompositionBound {
    /// Gap of the projection chain on the cells.
    pub projection_gap: f64,
    /// Smallest restriction-chain gap over the cells.
    pub min_restriction_gap: f64,
    /// Largest one-step escape probability out of a cell.
    pub escape: f64,
    /// The certified lower bound on the gap of the full chain.
    pub bound: f64,
}

/// Decomposition lower bound on the spectral gap.
///
/// `partition[x]` assigns state `x` to a cell. The projection chain moves
/// between cells with the pi-averaged transition mass; each restriction
/// chain keeps the within-cell moves and folds the escaping mass into the
/// diagonal. With `g-bar` the projection gap, `g-min` the worst
/// restriction gap and `gamma` the largest escape probability,
///
/// ```text
/// gap >= min( g-bar / 3 ,  g-bar · g-min / (3 gamma + g-bar) ).
/// ```
pub fn decomposition_gap_bound(
    kernel: &MarkovKernel,
    pi: &[f64],
    partition: &[usize],
) -> Result<DecompositionBound> {
    let n = kernel.n();
    if partition.len() != n {
        return Err(Error::invalid("partition must label every state"));
    }
    let cells = partition.iter().copied().max().map_or(0, |c| c + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cells];
    for (x, &c) in partition.iter().enumerate() {
        members[c].push(x);
    }
    if members.iter().any(|m| m.is_empty()) {
        return Err(Error::invalid("every cell index up to the max must be used"));
    }
    kernel.check_reversible(pi, REVERSIBILITY_TOL)?;

    // Projection chain.
    let pi_bar: Vec<f64> = members
        .iter()
        .map(|m| neumaier_sum(m.iter().map(|&x| pi[x])))
        .collect();
    let mut proj_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); cells];
    for x in 0..n {
        let (cols, vals) = kernel.row(x);
        for (&y, &v) in cols.iter().zip(vals) {
            proj_rows[partition[x]].push((partition[y], pi[x] * v));
        }
    }
    for (i, row) in proj_rows.iter_mut().enumerate() {
        for e in row.iter_mut() {
            e.1 /= pi_bar[i];
        }
    }
    let projection = MarkovKernel::from_rows(proj_rows)?;
    let projection_gap = spectral_gap(&projection, &pi_bar, SpectrumHint::Indefinite)?.gap;

    // Restriction chains and the escape probability.
    let mut escape = 0.0f64;
    let mut min_restriction_gap = f64::INFINITY;
    for (c, m) in members.iter().enumerate() {
        let index_of = |x: usize| m.binary_search(&x).ok();
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(m.len());
        for (local_x, &x) in m.iter().enumerate() {
            let (cols, vals) = kernel.row(x);
            let mut row: Vec<(usize, f64)> = Vec::new();
            let mut escaped = 0.0;
            for (&y, &v) in cols.iter().zip(vals) {
                match index_of(y) {
                    Some(local_y) => row.push((local_y, v)),
                    None => escaped += v,
                }
            }
            if escaped > 0.0 {
                row.push((local_x, escaped));
            }
            escape = escape.max(escaped);
            rows.push(row);
        }
        let restriction = MarkovKernel::from_rows(rows)?;
        let cond_pi: Vec<f64> = m.iter().map(|&x| pi[x] / pi_bar[c]).collect();
        let g = spectral_gap(&restriction, &cond_pi, SpectrumHint::Indefinite)?.gap;
        min_restriction_gap = min_restriction_gap.min(g);
    }

    let bound = (projection_gap / 3.0)
        .min(projection_gap * min_restriction_gap / (3.0 * escape + projection_gap));
    Ok(DecompositionBound {
        projection_gap,
        min_restriction_gap,
        escape,
        bound,
    })
}

/// Contraction lower bound: if a coupling contracts the expected distance
/// by the factor `iota` in one step, the gap is at least `1 - iota`.
pub fn contraction_gap_bound(iota: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&iota) {
        return Err(Error::invalid(format!(
            "contraction coefficient must lie in [0, 1], got {iota}"
        )));
    }
    Ok(1.0 - iota)
}

/// Comparison bound from block dynamics down to single-site dynamics:
///
/// ```text
/// gap_single >= (k / |W|) · gap_block · min_i(|B_i| · gap_i) / mult,
/// ```
///
/// where `k` is the number of blocks, `|W|` the number of free vertices,
/// `gap_i` the worst single-site gap inside block `i` over all boundary
/// conditions, and `mult` the largest cover multiplicity.
pub fn block_to_single_site_bound(
    num_blocks: usize,
    region_size: usize,
    block_dynamics_gap: f64,
    min_weighted_block_gap: f64,
    max_multiplicity: usize,
) -> f64 {
    num_blocks as f64 * block_dynamics_gap * min_weighted_block_gap
        / (region_size as f64 * max_multiplicity as f64)
}

/// Worst single-site gap of the dynamics restricted to `block`, minimized
/// over all spin assignments of the block's outside neighbours.
pub fn min_block_restriction_gap(
    shape: &TreeShape,
    params: &IsingParams,
    block: &[usize],
) -> Result<f64> {
    use crate::tree::BoundaryCondition;
    let mut outside: Vec<usize> = Vec::new();
    for &v in block {
        for u in shape.neighbors(v) {
            if block.binary_search(&u).is_err() && !outside.contains(&u) {
                outside.push(u);
            }
        }
    }
    outside.sort_unstable();
    if outside.len() > 16 {
        return Err(Error::SizeGuard {
            what: "outside-neighbour assignments",
            size: outside.len(),
            limit: 16,
        });
    }
    let mut worst = f64::INFINITY;
    for assign in 0..1u64 << outside.len() {
        // Freeze everything except the block; only the outside neighbours
        // matter, but freezing all complement vertices is equivalent and
        // keeps the state space small.
        let frozen: Vec<(usize, i8)> = (0..shape.n())
            .filter(|v| block.binary_search(v).is_err())
            .map(|v| {
                let s = match outside.binary_search(&v) {
                    Ok(i) => {
                        if assign >> i & 1 == 1 {
                            1
                        } else {
                            -1
                        }
                    }
                    Err(_) => 1,
                };
                (v, s)
            })
            .collect();
        let boundary = BoundaryCondition::Frozen(frozen).resolve(shape)?;
        let kernel = single_site_kernel(shape, params, &boundary)?;
        let table = crate::gibbs::GibbsTable::new(shape, params, &boundary)?;
        let gap = spectral_gap(&kernel, table.distribution(), SpectrumHint::Psd)?.gap;
        worst = worst.min(gap);
    }
    Ok(worst)
}

/// A random reversible, ergodic chain for stress-testing the spectral
/// machinery: symmetric non-negative weights scaled into a stochastic
/// matrix whose detailed-balance measure is a random positive `pi`.
pub fn random_reversible_chain<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (MarkovKernel, Vec<f64>) {
    assert!(n >= 2);
    let mut pi: Vec<f64> = (0..n).map(|_| 0.2 + rng.random::<f64>()).collect();
    let total = neumaier_sum(pi.iter().copied());
    for p in &mut pi {
        *p /= total;
    }
    let mut a = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in i..n {
            let w = rng.random::<f64>();
            a[i][j] = w;
            a[j][i] = w;
        }
    }
    let scale = (0..n)
        .map(|i| pi[i] / a[i].iter().sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        * 0.9;
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(n);
        let mut off = 0.0;
        for j in 0..n {
            if j != i {
                let p = scale * a[i][j] / pi[i];
                off += p;
                row.push((j, p));
            }
        }
        row.push((i, 1.0 - off));
        rows.push(row);
    }
    (
        MarkovKernel::from_rows(rows).expect("construction yields a stochastic matrix"),
        pi,
    )
}

// ---------------------------------------------------------------------------
// Closed-form scalars for the depth-weighted magnetization
// g(sigma) = Σ_v theta^{level(v)} sigma_v on the free-boundary tree.
// ---------------------------------------------------------------------------

fn check_tree_params(b: u32, h: u32) -> Result<()> {
    if b < 2 {
        return Err(Error::invalid(format!("branching factor must be >= 2, got {b}")));
    }
    if h == 0 {
        return Err(Error::invalid("height must be at least 1"));
    }
    Ok(())
}

/// Number of vertices `(b^(h+1) - 1)/(b - 1)` as a float (valid far beyond
/// enumerable sizes).
pub fn vertex_count(b: u32, h: u32) -> f64 {
    let b = f64::from(b);
    (b.powi(h as i32 + 1) - 1.0) / (b - 1.0)
}

/// Root-conditioned variance of the depth-weighted magnetization at the
/// critical point:
///
/// ```text
/// Var(g | sigma_root) = (b - 1)/(6b) · h (h + 1)(2h + 1).
/// ```
pub fn critical_conditioned_variance(b: u32, h: u32) -> Result<f64> {
    check_tree_params(b, h)?;
    let hf = f64::from(h);
    Ok(f64::from(b - 1) / (6.0 * f64::from(b)) * hf * (hf + 1.0) * (2.0 * hf + 1.0))
}

/// Unconditioned variance of the depth-weighted magnetization at edge
/// correlation `theta`, exactly:
///
/// ```text
/// Var(g) = Σ_{k=0}^{h} (b theta^2)^k [ 1 + 2 A_k + (b-1)/b · A_k^2 ],
/// A_k = Σ_{i=1}^{h-k} (b theta^2)^i.
/// ```
pub fn weighted_sum_variance(b: u32, h: u32, theta: f64) -> Result<f64> {
    check_tree_params(b, h)?;
    let x = f64::from(b) * theta * theta;
    let ratio = f64::from(b - 1) / f64::from(b);
    let mut acc = NeumaierSum::new();
    for k in 0..=h {
        let xk = x.powi(k as i32);
        let a_k: f64 = (1..=h - k).map(|i| x.powi(i as i32)).sum();
        acc.add(xk * (1.0 + 2.0 * a_k + ratio * a_k * a_k));
    }
    Ok(acc.value())
}

/// Root-conditioned variance at edge correlation `theta`: the
/// unconditioned value minus the squared conditional mean
/// `E[g | sigma_root = +1] = Σ_k (b theta^2)^k`.
pub fn conditioned_weighted_sum_variance(b: u32, h: u32, theta: f64) -> Result<f64> {
    let unconditioned = weighted_sum_variance(b, h, theta)?;
    let x = f64::from(b) * theta * theta;
    let m: f64 = (0..=h).map(|k| x.powi(k as i32)).sum();
    Ok(unconditioned - m * m)
}

/// The near-critical variance benchmark in closed form
/// (`theta^2 = (1 + eps)/b`):
///
/// ```text
/// (b-1)/(b eps^3) · ( (1+eps)^(2h+3) - (2h+3) eps (1+eps)^(h+1) - 1 ).
/// ```
///
/// The formula cancels catastrophically as `eps -> 0`; use
/// [`near_critical_variance_sum`] for tiny `eps`.
pub fn near_critical_variance_formula(b: u32, h: u32, eps: f64) -> Result<f64> {
    check_tree_params(b, h)?;
    if eps <= 0.0 {
        return Err(Error::invalid(format!(
            "the closed form needs eps > 0, got {eps}"
        )));
    }
    let x = 1.0 + eps;
    let bf = f64::from(b);
    Ok(f64::from(b - 1) / (bf * eps.powi(3))
        * (x.powi(2 * h as i32 + 3) - f64::from(2 * h + 3) * eps * x.powi(h as i32 + 1) - 1.0))
}

/// The same quantity as [`near_critical_variance_formula`] written as the
/// cancellation-free sum
///
/// ```text
/// (b-1)/b · Σ_{k=0}^{h} (1+eps)^k S_{h-k}^2,    S_m = Σ_{i=0}^{m} (1+eps)^i,
/// ```
///
/// which is stable down to and including `eps = 0`, where it degenerates
/// to the critical formula one level taller:
/// `(b-1)/(6b) (h+1)(h+2)(2h+3)`.
pub fn near_critical_variance_sum(b: u32, h: u32, eps: f64) -> Result<f64> {
    check_tree_params(b, h)?;
    if eps <= -1.0 {
        return Err(Error::invalid(format!("eps must exceed -1, got {eps}")));
    }
    let x = 1.0 + eps;
    // S_m evaluated as an explicit geometric sum: no 0/0 at eps = 0.
    let s = |m: u32| -> f64 { (0..=m).map(|i| x.powi(i as i32)).sum() };
    let mut acc = NeumaierSum::new();
    for k in 0..=h {
        let sk = s(h - k);
        acc.add(x.powi(k as i32) * sk * sk);
    }
    Ok(f64::from(b - 1) / f64::from(b) * acc.value())
}

/// Upper bound on the single-site Dirichlet form of the depth-weighted
/// magnetization: `(2/n) Σ_k (b theta^2)^k`.
pub fn dirichlet_form_upper_bound(b: u32, h: u32, theta: f64) -> Result<f64> {
    check_tree_params(b, h)?;
    let x = f64::from(b) * theta * theta;
    let m: f64 = (0..=h).map(|k| x.powi(k as i32)).sum();
    Ok(2.0 * m / vertex_count(b, h))
}

/// Closed-form upper bound on the discrete-time single-site gap at the
/// critical point: `(6b/(b-1)) / (n h^2)`, obtained by pairing the
/// Dirichlet bound with the conditioned variance.
pub fn critical_gap_upper_bound_discrete(b: u32, h: u32) -> Result<f64> {
    check_tree_params(b, h)?;
    Ok(critical_gap_upper_bound_continuous(b, h)? / vertex_count(b, h))
}

/// The same bound for the continuous-time chain (each site at rate 1),
/// i.e. `n` times the discrete bound: `(6b/(b-1)) / h^2`.
pub fn critical_gap_upper_bound_continuous(b: u32, h: u32) -> Result<f64> {
    check_tree_params(b, h)?;
    let hf = f64::from(h);
    Ok(6.0 * f64::from(b) / (f64::from(b - 1) * hf * hf))
}

/// Near-critical inverse-gap benchmark
/// `c1 · min(1/eps, h)^2 · (1 + eps)^h`.
pub fn near_critical_inverse_gap_formula(b: u32, h: u32, eps: f64, c1: f64) -> Result<f64> {
    check_tree_params(b, h)?;
    if eps <= 0.0 || c1 <= 0.0 {
        return Err(Error::invalid("eps and c1 must be positive"));
    }
    let cutoff = (1.0 / eps).min(f64::from(h));
    Ok(c1 * cutoff * cutoff * (1.0 + eps).powi(h as i32))
}
