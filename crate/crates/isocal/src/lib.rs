//! Ranking-assisted calibration of noisy review scores.
//!
//! A set of items (papers, proposals, ...) receives noisy numeric scores.
//! Owners (authors) each know the true quality ordering of the items they
//! own. This crate turns those ordering reports into calibrated scores:
//!
//! - [`isotonic`]: projection of a score vector onto the descending cone
//!   induced by a ranking (pool-adjacent-violators), plus a brute-force
//!   oracle used to cross-check it.
//! - [`ownership`]: owner/item bipartite graphs, item partitions with their
//!   common-owner sets, strongness predicates, the L-to-1 strongness
//!   reduction, and instance generators (ternary trees, a worst-case family
//!   for the greedy bound, synthetic conference graphs).
//! - [`partition`]: block-size objectives, the greedy residual-owner
//!   partitioner with its approximation guarantee, exact brute force on
//!   small instances, and a random baseline.
//! - [`mechanism`]: the calibration mechanisms — complete-overlap weighted
//!   averaging, naive per-owner averaging (not truthful; kept as a foil),
//!   partition-based calibration, and the personalized variant with
//!   per-owner partitions and weights, plus the structure checks and the
//!   merge normalization that extracts a global partition.
//! - [`incentive`]: expected-utility evaluation under exchangeable noise
//!   (exact enumeration or Monte Carlo), best-response search, equilibrium
//!   audits, and majorization utilities.
//! - [`experiment`]: reproducible simulation studies (synthetic conference
//!   calibration, the block-size/noise trade-off on ternary trees, and
//!   partition-objective benchmarks).
//! - [`io`]: CSV/JSON/TOML artifact formats with atomic writes and a run
//!   manifest carrying input digests.
//!
//! Everything is deterministic given the seeds in the inputs; no global RNG
//! state is consulted.

pub mod experiment;
pub mod incentive;
pub mod io;
pub mod isotonic;
pub mod mechanism;
pub mod ownership;
pub mod partition;
pub mod seed;

pub use isotonic::{brute_force_projection, isotonic_fit, Ranking, ScoreVector};
pub use ownership::{common_owner_set, is_l_strong, OwnershipGraph, Partition};
