//! Isotonic projection of score vectors onto the descending cone induced by
//! a ranking.
//!
//! A ranking lists item ids best-first. Fitting a score vector to a ranking
//! means finding the closest (least-squares) vector whose entries are weakly
//! descending when read in ranking order. The fit is computed by
//! pool-adjacent-violators on the permuted vector; a brute-force enumeration
//! over contiguous poolings serves as an independent oracle for small inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum IsotonicError {
    #[error("score vector must be nonempty")]
    EmptyScores,
    #[error("score at index {index} is not finite: {value}")]
    NonFiniteScore { index: usize, value: f64 },
    #[error("ranking must cover at least one item")]
    EmptyRanking,
    #[error("ranking repeats item {item}")]
    DuplicateItem { item: usize },
    #[error("ranking covers {ranked} items but the score vector has {scored}")]
    ScopeMismatch { ranked: usize, scored: usize },
    #[error("ranking references item {item}, outside 0..{len}")]
    ItemOutOfRange { item: usize, len: usize },
    #[error("brute-force projection supports at most {cap} items, got {len}")]
    TooLargeForBruteForce { len: usize, cap: usize },
}

/// A validated vector of finite review scores, indexed by item id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScoreVector {
    values: Vec<f64>,
}

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self, IsotonicError> {
        if values.is_empty() {
            return Err(IsotonicError::EmptyScores);
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(IsotonicError::NonFiniteScore { index, value });
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl TryFrom<Vec<f64>> for ScoreVector {
    type Error = IsotonicError;
    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<ScoreVector> for Vec<f64> {
    fn from(v: ScoreVector) -> Vec<f64> {
        v.values
    }
}

/// An owner's ranking of a set of items, best-first. The scope is implicit:
/// exactly the items appearing in `order`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Ranking {
    order: Vec<usize>,
}

impl Ranking {
    pub fn new(order: Vec<usize>) -> Result<Self, IsotonicError> {
        if order.is_empty() {
            return Err(IsotonicError::EmptyRanking);
        }
        let mut seen = std::collections::BTreeSet::new();
        for &item in &order {
            if !seen.insert(item) {
                return Err(IsotonicError::DuplicateItem { item });
            }
        }
        Ok(Self { order })
    }

    /// The identity ranking over `0..n`: item 0 best, item n-1 worst.
    pub fn identity(n: usize) -> Result<Self, IsotonicError> {
        Self::new((0..n).collect())
    }

    /// Ranks `scope` by descending score; ties broken by ascending item id
    /// so the result is deterministic.
    pub fn truthful(scores: &[f64], scope: &[usize]) -> Result<Self, IsotonicError> {
        for &item in scope {
            if item >= scores.len() {
                return Err(IsotonicError::ItemOutOfRange {
                    item,
                    len: scores.len(),
                });
            }
        }
        let mut order = scope.to_vec();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .expect("scores are finite")
                .then(a.cmp(&b))
        });
        Self::new(order)
    }

    /// All rankings of `scope` consistent with descending `scores` (ties may
    /// break either way). Used by audits to accept any truthful report.
    pub fn all_truthful(scores: &[f64], scope: &[usize]) -> Result<Vec<Self>, IsotonicError> {
        let canonical = Self::truthful(scores, scope)?;
        // Group tied runs, then expand each run's permutations.
        let order = canonical.order;
        let mut runs: Vec<Vec<usize>> = Vec::new();
        for &item in &order {
            match runs.last_mut() {
                Some(run) if scores[*run.last().unwrap()] == scores[item] => run.push(item),
                _ => runs.push(vec![item]),
            }
        }
        let mut results = vec![Vec::new()];
        for run in runs {
            let perms = permutations(&run);
            let mut next = Vec::with_capacity(results.len() * perms.len());
            for prefix in &results {
                for perm in &perms {
                    let mut r = prefix.clone();
                    r.extend_from_slice(perm);
                    next.push(r);
                }
            }
            results = next;
        }
        results.into_iter().map(Self::new).collect()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// True if the ranking's scope is exactly `0..n`.
    pub fn is_full_permutation(&self, n: usize) -> bool {
        if self.order.len() != n {
            return false;
        }
        self.order.iter().all(|&i| i < n)
    }

    /// Restricts the ranking to the items in `subset`, preserving order.
    /// Items of `subset` missing from the scope are ignored by the caller's
    /// contract; callers validate coverage where it matters.
    pub fn restrict(&self, subset: &std::collections::BTreeSet<usize>) -> Result<Self, IsotonicError> {
        let order: Vec<usize> = self
            .order
            .iter()
            .copied()
            .filter(|i| subset.contains(i))
            .collect();
        Self::new(order)
    }

    /// Sorted scope of the ranking.
    pub fn scope(&self) -> Vec<usize> {
        let mut s = self.order.clone();
        s.sort_unstable();
        s
    }
}

impl TryFrom<Vec<usize>> for Ranking {
    type Error = IsotonicError;
    fn try_from(order: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(order)
    }
}

impl From<Ranking> for Vec<usize> {
    fn from(r: Ranking) -> Vec<usize> {
        r.order
    }
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (k, &head) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(k);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Pool-adjacent-violators for a weakly descending chain. Maintains a stack
/// of (sum, count) blocks; a violation is a strict increase from one block
/// mean to the next. No epsilon: exact float comparison keeps the projection
/// idempotent.
fn pava_descending(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        let mut sum = v;
        let mut count = 1usize;
        while let Some(&(prev_sum, prev_count)) = blocks.last() {
            if prev_sum / (prev_count as f64) < sum / count as f64 {
                sum += prev_sum;
                count += prev_count;
                blocks.pop();
            } else {
                break;
            }
        }
        blocks.push((sum, count));
    }
    let mut out = Vec::with_capacity(values.len());
    for (sum, count) in blocks {
        let mean = sum / count as f64;
        out.extend(std::iter::repeat(mean).take(count));
    }
    out
}

/// Least-squares fit of `y` subject to descending order along `pi`.
///
/// `pi` must rank exactly the indices of `y`. The fit permutes `y` into
/// ranking order, pools adjacent violators, and un-permutes, so the output
/// is aligned with the input indexing. The entry sum is preserved.
pub fn isotonic_fit(y: &ScoreVector, pi: &Ranking) -> Result<ScoreVector, IsotonicError> {
    let n = y.len();
    if pi.len() != n {
        return Err(IsotonicError::ScopeMismatch {
            ranked: pi.len(),
            scored: n,
        });
    }
    for &item in pi.order() {
        if item >= n {
            return Err(IsotonicError::ItemOutOfRange { item, len: n });
        }
    }
    let permuted: Vec<f64> = pi.order().iter().map(|&i| y.values()[i]).collect();
    let fitted = pava_descending(&permuted);
    let mut out = vec![0.0; n];
    for (pos, &item) in pi.order().iter().enumerate() {
        out[item] = fitted[pos];
    }
    ScoreVector::new(out)
}

/// Fits the sub-vector of `y` named by `chain` (best-first) and returns the
/// fitted values parallel to `chain.order()`. Items outside the chain are
/// untouched — calibration of a block never constrains the rest.
pub fn isotonic_fit_block(y: &[f64], chain: &Ranking) -> Result<Vec<f64>, IsotonicError> {
    for &item in chain.order() {
        if item >= y.len() {
            return Err(IsotonicError::ItemOutOfRange {
                item,
                len: y.len(),
            });
        }
    }
    let permuted: Vec<f64> = chain.order().iter().map(|&i| y[i]).collect();
    for (pos, &v) in permuted.iter().enumerate() {
        if !v.is_finite() {
            return Err(IsotonicError::NonFiniteScore {
                index: chain.order()[pos],
                value: v,
            });
        }
    }
    Ok(pava_descending(&permuted))
}

/// Euclidean projection onto the standard descending cone
/// `a_1 >= a_2 >= ... >= a_n`; equals `isotonic_fit` with the identity
/// ranking.
pub fn project_descending_cone(a: &ScoreVector) -> ScoreVector {
    let fitted = pava_descending(a.values());
    ScoreVector::new(fitted).expect("projection of finite input is finite")
}

const BRUTE_FORCE_CAP: usize = 8;

/// Independent projection oracle: enumerates every contiguous pooling of the
/// chain (2^(n-1) compositions in ranking order), keeps those whose block
/// means are weakly descending (adjacent means may sag by at most
/// `resolution`), and returns the feasible candidate with the least squared
/// distance from `y`. Only for cross-checking the pool-adjacent-violators
/// fit; refuses more than 8 items.
pub fn brute_force_projection(
    y: &ScoreVector,
    pi: &Ranking,
    resolution: f64,
) -> Result<ScoreVector, IsotonicError> {
    let n = y.len();
    if n > BRUTE_FORCE_CAP {
        return Err(IsotonicError::TooLargeForBruteForce {
            len: n,
            cap: BRUTE_FORCE_CAP,
        });
    }
    if pi.len() != n {
        return Err(IsotonicError::ScopeMismatch {
            ranked: pi.len(),
            scored: n,
        });
    }
    for &item in pi.order() {
        if item >= n {
            return Err(IsotonicError::ItemOutOfRange { item, len: n });
        }
    }
    let permuted: Vec<f64> = pi.order().iter().map(|&i| y.values()[i]).collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    // Bit b of mask set = a block boundary after position b.
    for mask in 0u32..(1u32 << (n - 1)) {
        let mut means = Vec::with_capacity(n);
        let mut start = 0usize;
        for end in 0..n {
            let boundary = end + 1 == n || mask >> end & 1 == 1;
            if boundary {
                let block = &permuted[start..=end];
                let mean = block.iter().sum::<f64>() / block.len() as f64;
                means.push((mean, block.len()));
                start = end + 1;
            }
        }
        let feasible = means
            .windows(2)
            .all(|w| w[0].0 >= w[1].0 - resolution);
        if !feasible {
            continue;
        }
        let mut candidate = Vec::with_capacity(n);
        for &(mean, len) in &means {
            candidate.extend(std::iter::repeat(mean).take(len));
        }
        let cost: f64 = candidate
            .iter()
            .zip(&permuted)
            .map(|(c, p)| (c - p) * (c - p))
            .sum();
        if best.as_ref().map_or(true, |(b, _)| cost < *b) {
            best = Some((cost, candidate));
        }
    }
    let (_, fitted) = best.expect("the all-pooled composition is always feasible");
    let mut out = vec![0.0; n];
    for (pos, &item) in pi.order().iter().enumerate() {
        out[item] = fitted[pos];
    }
    ScoreVector::new(out)
}
