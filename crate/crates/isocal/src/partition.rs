//! Partition objectives and partitioning algorithms.
//!
//! A partition is scored by summing a convex nondecreasing function of each
//! block size. The greedy partitioner repeatedly takes the owner with the
//! largest residual item set; its objective is within a factor `c(w)` of the
//! best 1-strong partition for every admissible size objective
//! simultaneously. Exact brute force (small n) and a random baseline are
//! provided for comparison.

use crate::ownership::{
    all_set_partitions, common_owner_set, reduce_l_to_1, OwnershipError, OwnershipGraph,
    Partition,
};
#[cfg(test)]
use crate::ownership::is_l_strong;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error(transparent)]
    Ownership(#[from] OwnershipError),
    #[error("power objective needs a finite exponent >= 1, got {alpha}")]
    BadExponent { alpha: f64 },
    #[error("objective '{name}' is not convex nondecreasing with value 0 at size 0: {reason}")]
    NotAdmissible { name: String, reason: String },
    #[error("brute force supports at most {cap} items, got {n}")]
    TooLargeForBruteForce { n: usize, cap: usize },
    #[error("no 1-strong partition has positive objective slope; ratio bound undefined")]
    UndefinedRatioBound,
    #[error("ratio bound needs x_max >= 2, got {x_max}")]
    BadRatioDomain { x_max: usize },
}

/// Convex nondecreasing score of a block as a function of its size, with
/// value 0 for empty blocks. Determines the partition objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum SizeObjective {
    /// x^2: counts the comparison pairs a block contributes (plus diagonal).
    Comparison,
    /// max(x-1, 0): n - K, the number of within-block comparisons a chain
    /// elicits.
    SizeFocused,
    /// x^alpha for alpha >= 1.
    Power { alpha: f64 },
}

impl SizeObjective {
    pub fn power(alpha: f64) -> Result<Self, PartitionError> {
        if !alpha.is_finite() || alpha < 1.0 {
            return Err(PartitionError::BadExponent { alpha });
        }
        Ok(SizeObjective::Power { alpha })
    }

    pub fn evaluate(&self, size: usize) -> f64 {
        let x = size as f64;
        match self {
            SizeObjective::Comparison => x * x,
            SizeObjective::SizeFocused => (x - 1.0).max(0.0),
            SizeObjective::Power { alpha } => x.powf(*alpha),
        }
    }

    /// Left derivative at a positive real point.
    pub fn left_derivative(&self, x: f64) -> f64 {
        match self {
            SizeObjective::Comparison => 2.0 * x,
            SizeObjective::SizeFocused => {
                if x > 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            SizeObjective::Power { alpha } => alpha * x.powf(alpha - 1.0),
        }
    }

    pub fn name(&self) -> String {
        match self {
            SizeObjective::Comparison => "comparison".to_string(),
            SizeObjective::SizeFocused => "size_focused".to_string(),
            SizeObjective::Power { alpha } => format!("power_{alpha}"),
        }
    }

    /// Checks admissibility on integer sizes 0..=n: value 0 at 0,
    /// nondecreasing, and convex (second differences >= 0).
    pub fn validate_on(&self, n: usize) -> Result<(), PartitionError> {
        let values: Vec<f64> = (0..=n.max(2)).map(|x| self.evaluate(x)).collect();
        if values[0] != 0.0 {
            return Err(PartitionError::NotAdmissible {
                name: self.name(),
                reason: format!("value at 0 is {}", values[0]),
            });
        }
        for w in values.windows(2) {
            if w[1] < w[0] {
                return Err(PartitionError::NotAdmissible {
                    name: self.name(),
                    reason: "decreasing".to_string(),
                });
            }
        }
        for w in values.windows(3) {
            if w[2] - w[1] < w[1] - w[0] - 1e-12 {
                return Err(PartitionError::NotAdmissible {
                    name: self.name(),
                    reason: "not convex".to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Sum of the size objective over all blocks.
pub fn objective(p: &Partition, w: &SizeObjective) -> f64 {
    p.blocks().iter().map(|b| w.evaluate(b.len())).sum()
}

/// Summary of one partitioning method's output on a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionObjectiveReport {
    pub method: String,
    pub objective_name: String,
    pub objective_value: f64,
    pub block_sizes: Vec<usize>,
    /// Smallest common-owner count over multi-item blocks; `None` when the
    /// partition is all singletons (vacuously strong at every level).
    pub strongness: Option<usize>,
}

impl PartitionObjectiveReport {
    pub fn new(method: &str, p: &Partition, w: &SizeObjective) -> Self {
        let mut block_sizes = p.block_sizes();
        block_sizes.sort_unstable_by(|a, b| b.cmp(a));
        Self {
            method: method.to_string(),
            objective_name: w.name(),
            objective_value: objective(p, w),
            block_sizes,
            strongness: p.strongness(),
        }
    }
}

/// Greedy 1-strong partitioner: repeatedly emits the largest residual item
/// set over all owners (ties to the smallest owner id), then turns ownerless
/// items into singletons. Runs in near-linear time via a descending scan of
/// lazily maintained residual-size buckets.
pub fn greedy_partition(g: &OwnershipGraph) -> Partition {
    // Residual sizes only ever shrink, so a descending scan over size
    // buckets replaces a priority queue: owners sit in the bucket of their
    // size at push time, stale entries drop to their live bucket when
    // scanned. Entries are 4-byte ids and scans are sequential, which keeps
    // million-owner graphs from thrashing the cache the way a single large
    // heap does. Each bucket is sorted before scanning, so selection order
    // is still (largest residual, then smallest owner id).
    let mut covered = vec![false; g.num_items()];
    let mut residual: Vec<u32> = (0..g.num_owners())
        .map(|j| g.items_of(j).len() as u32)
        .collect();
    let top = residual.iter().copied().max().unwrap_or(0) as usize;
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); top + 1];
    for (j, &r) in residual.iter().enumerate() {
        if r > 0 {
            buckets[r as usize].push(j as u32);
        }
    }
    let mut blocks: Vec<Vec<usize>> = Vec::new();

    for count in (1..=top).rev() {
        // Nothing lands in this bucket once its scan starts: stale entries
        // found here have strictly smaller live sizes.
        let mut bucket = std::mem::take(&mut buckets[count]);
        bucket.sort_unstable();
        for &id in &bucket {
            let owner = id as usize;
            let live = residual[owner] as usize;
            if live != count {
                if live > 0 {
                    buckets[live].push(id);
                }
                continue;
            }
            let block: Vec<usize> = g
                .items_of(owner)
                .iter()
                .copied()
                .filter(|&i| !covered[i])
                .collect();
            debug_assert_eq!(block.len(), count);
            for &item in &block {
                covered[item] = true;
                for &other in g.owners_of(item) {
                    residual[other] -= 1;
                }
            }
            blocks.push(block);
        }
    }
    for item in 0..g.num_items() {
        if !covered[item] {
            blocks.push(vec![item]);
        }
    }
    Partition::new(g, blocks).expect("greedy emits a disjoint cover")
}

/// Greedy partitioner at strongness level `l`: runs the L-to-1 reduction and
/// the greedy partitioner on the derived graph. The blocks live on the same
/// item set, so the result is a valid (and L-strong) partition of `g`.
pub fn greedy_partition_l(
    g: &OwnershipGraph,
    l: usize,
    budget: u64,
) -> Result<Partition, PartitionError> {
    if l == 1 {
        return Ok(greedy_partition(g));
    }
    let reduced = reduce_l_to_1(g, l, budget)?;
    let derived = greedy_partition(&reduced.graph);
    Ok(Partition::new(g, derived.blocks().to_vec())?)
}

const BRUTE_FORCE_ITEM_CAP: usize = 12;

/// Exact maximizer of the objective over all L-strong partitions, by
/// enumerating every set partition (restricted growth order) and filtering.
/// Ties keep the first maximizer in enumeration order. Guarded at 12 items.
pub fn brute_force_optimal(
    g: &OwnershipGraph,
    w: &SizeObjective,
    l: usize,
) -> Result<Partition, PartitionError> {
    let n = g.num_items();
    if n > BRUTE_FORCE_ITEM_CAP {
        return Err(PartitionError::TooLargeForBruteForce {
            n,
            cap: BRUTE_FORCE_ITEM_CAP,
        });
    }
    w.validate_on(n)?;
    let mut best: Option<(f64, Vec<Vec<usize>>)> = None;
    for blocks in all_set_partitions(n) {
        let strong = blocks.iter().all(|b| {
            b.len() <= 1
                || common_owner_set(g, b)
                    .map(|t| t.len() >= l)
                    .unwrap_or(false)
        });
        if !strong {
            continue;
        }
        let value: f64 = blocks.iter().map(|b| w.evaluate(b.len())).sum();
        if best.as_ref().map_or(true, |(v, _)| value > *v) {
            best = Some((value, blocks));
        }
    }
    let (_, blocks) = best.expect("singleton partition is always L-strong");
    Ok(Partition::new(g, blocks)?)
}

/// Random 1-strong baseline: repeatedly picks a uniformly random owner with
/// a nonempty residual set and emits the residual as a block; ownerless
/// items become singletons. Deterministic given the seed.
pub fn random_partition(g: &OwnershipGraph, seed: u64) -> Partition {
    let mut rng = crate::seed::rng(seed, "random-partition", &[]);
    let mut covered = vec![false; g.num_items()];
    let mut residual: Vec<usize> = (0..g.num_owners()).map(|j| g.items_of(j).len()).collect();
    let mut alive: Vec<usize> = (0..g.num_owners()).filter(|&j| residual[j] > 0).collect();
    let mut blocks: Vec<Vec<usize>> = Vec::new();

    while !alive.is_empty() {
        let idx = rng.gen_range(0..alive.len());
        let owner = alive[idx];
        if residual[owner] == 0 {
            alive.swap_remove(idx);
            continue;
        }
        let block: Vec<usize> = g
            .items_of(owner)
            .iter()
            .copied()
            .filter(|&i| !covered[i])
            .collect();
        for &item in &block {
            covered[item] = true;
            for &other in g.owners_of(item) {
                residual[other] -= 1;
            }
        }
        blocks.push(block);
        alive.swap_remove(idx);
        // Owners whose residual hit zero are pruned lazily on selection.
    }
    for item in 0..g.num_items() {
        if !covered[item] {
            blocks.push(vec![item]);
        }
    }
    Partition::new(g, blocks).expect("random emission is a disjoint cover")
}

/// The guarantee factor `c(w)` of the greedy partitioner: the minimum of
/// `w(x) / (w'_-(x) * x)` over integer sizes `x` in `[2, x_max]` where the
/// left derivative is positive. Block sizes are integers, so the integer
/// domain is exact for guarantee checks at size <= x_max.
pub fn approximation_ratio_bound(
    w: &SizeObjective,
    x_max: usize,
) -> Result<f64, PartitionError> {
    if x_max < 2 {
        return Err(PartitionError::BadRatioDomain { x_max });
    }
    let mut best: Option<f64> = None;
    for x in 2..=x_max {
        let xf = x as f64;
        let slope = w.left_derivative(xf);
        if slope > 0.0 {
            let ratio = w.evaluate(x) / (slope * xf);
            best = Some(best.map_or(ratio, |b: f64| b.min(ratio)));
        }
    }
    best.ok_or(PartitionError::UndefinedRatioBound)
}
