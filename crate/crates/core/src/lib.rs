//! Exact-analysis and simulation toolkit for heat-bath Glauber dynamics of the
//! ferromagnetic Ising model on rooted `b`-ary trees.
//!
//! The crate is organized around small, fully deterministic building blocks:
//!
//! - [`tree`]: tree geometry (BFS indexing with closed-form parent/child
//!   arithmetic), coupling-strength parameters, boundary conditions, and
//!   bit-packed spin configurations.
//! - [`gibbs`]: exact Gibbs distributions by enumeration, the broadcast
//!   (top-down Markov) representation, log-likelihood-ratio recursions, and
//!   root-reconstruction functionals computed exactly or by Monte Carlo.
//! - [`dynamics`]: heat-bath single-site updates, exact conditional block
//!   resampling on induced forests, block covers, the two-scale speed-up
//!   dynamics, update schedules and censoring, and a coupled tree/forest
//!   survival experiment.
//! - [`spectral`]: sparse row-stochastic kernels over enumerated state spaces,
//!   Dirichlet forms, variance/entropy functionals, spectral gaps (dense
//!   symmetric solve or deflated power iteration), product-chain spectra,
//!   decomposition bounds, and closed-form variance/gap expressions for the
//!   weighted-sum observable.
//! - [`capacity`]: series-parallel effective resistance on resistor trees,
//!   cutset lower bounds, and unit-flow certificates.
//! - [`mixing`]: total-variation and Hellinger metrics, exact mixing-time
//!   curves in discrete and continuous time, Monte Carlo lower bounds on
//!   total variation, and definitive stochastic-domination checks via
//!   max-flow couplings.
//!
//! Everything that claims to be exact is backed by an independent enumeration
//! oracle in the test suite; everything stochastic is reproducible from a
//! `(seed, stream)` pair.

// In this crate a loop index is usually a semantic id (a state mask, a
// vertex, a matrix column), not an iteration artifact; spelling the loops
// with indices keeps that meaning visible.
#![allow(clippy::needless_range_loop)]

pub mod capacity;
pub mod dynamics;
pub mod error;
pub mod gibbs;
pub mod mixing;
pub mod spectral;
pub mod tree;
pub mod util;

pub use error::{Error, Result};
