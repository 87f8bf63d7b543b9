//! Calibration mechanisms.
//!
//! Four rules turn raw scores plus owner rankings into adjusted scores:
//!
//! - [`calibrate_complete_overlap`]: every owner ranks every item; the
//!   output is the credential-weighted average of per-owner isotonic fits.
//! - [`naive_ownership_average`]: each owner's items are fitted separately
//!   and item outputs are unweighted means over owners. Simple but
//!   manipulable — an owner can inflate one item by sandbagging another.
//! - [`calibrate_with_partition`]: items are grouped into blocks with
//!   common owners; each block is calibrated by its common owners only,
//!   which restores truthfulness.
//! - [`calibrate_personalized`]: each owner gets their own block structure
//!   and per-item weights; outputs are weight-averaged per item. The
//!   structure check and merge normalization relate this back to a global
//!   partition.

use crate::isotonic::{isotonic_fit_block, IsotonicError, Ranking, ScoreVector};
use crate::ownership::{OwnershipError, OwnershipGraph, Partition};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MechanismError {
    #[error(transparent)]
    Isotonic(#[from] IsotonicError),
    #[error(transparent)]
    Ownership(#[from] OwnershipError),
    #[error("credential for owner {owner} must be finite and nonnegative, got {value}")]
    BadCredential { owner: usize, value: f64 },
    #[error("expected {expected} credentials, got {got}")]
    CredentialCount { expected: usize, got: usize },
    #[error("all credentials of the reporting owners are zero")]
    ZeroCredentialMass,
    #[error("owner {owner} has no report and the fill policy rejects missing reports")]
    MissingReport { owner: usize },
    #[error("owner {owner}'s report must rank exactly {expected:?}, got scope {got:?}")]
    ReportScopeMismatch {
        owner: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("score vector has {got} entries but the graph has {expected} items")]
    ScoreCount { expected: usize, got: usize },
    #[error("expected one plan per owner ({expected}), got {got}")]
    PlanCount { expected: usize, got: usize },
    #[error("owner {owner}'s plan block contains item {item} outside their item set")]
    PlanBlockOutsideOwnership { owner: usize, item: usize },
    #[error("owner {owner}'s plan repeats item {item}")]
    PlanOverlap { owner: usize, item: usize },
    #[error("owner {owner}'s plan misses owned item {item}")]
    PlanMissingItem { owner: usize, item: usize },
    #[error("owner {owner}'s plan has {got} weights for {expected} items")]
    WeightLength {
        owner: usize,
        expected: usize,
        got: usize,
    },
    #[error("owner {owner} weights item {item} they do not own")]
    WeightOffOwnership { owner: usize, item: usize },
    #[error("owner {owner}'s weight for item {item} must be finite and nonnegative, got {value}")]
    BadWeight {
        owner: usize,
        item: usize,
        value: f64,
    },
    #[error("personalized parameters are not a valid partition structure: {0}")]
    StructureInvalid(StructureViolation),
    #[error(
        "merge produced overlapping non-identical blocks {a:?} and {b:?}; \
         input structure was inconsistent"
    )]
    MergeConflict { a: Vec<usize>, b: Vec<usize> },
}

/// Per-owner nonnegative aggregation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct OwnerCredentials {
    alpha: Vec<f64>,
}

impl OwnerCredentials {
    pub fn new(alpha: Vec<f64>) -> Result<Self, MechanismError> {
        for (owner, &value) in alpha.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(MechanismError::BadCredential { owner, value });
            }
        }
        Ok(Self { alpha })
    }

    /// Unit credential for every owner.
    pub fn uniform(num_owners: usize) -> Self {
        Self {
            alpha: vec![1.0; num_owners],
        }
    }

    pub fn alpha(&self, owner: usize) -> f64 {
        self.alpha[owner]
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha
    }

    fn check_count(&self, expected: usize) -> Result<(), MechanismError> {
        if self.alpha.len() != expected {
            return Err(MechanismError::CredentialCount {
                expected,
                got: self.alpha.len(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for OwnerCredentials {
    type Error = MechanismError;
    fn try_from(alpha: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(alpha)
    }
}

impl From<OwnerCredentials> for Vec<f64> {
    fn from(c: OwnerCredentials) -> Vec<f64> {
        c.alpha
    }
}

/// What to do when a required report is missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FillPolicy {
    /// Error out.
    Reject,
    /// Substitute a uniformly random ranking of the required scope, derived
    /// deterministically from this seed and the owner id.
    Seeded(u64),
}

/// Owner rankings handed to a mechanism. Each ranking covers the owner's
/// full item set; mechanisms slice it per block as needed, so a single
/// report serves every block the owner calibrates.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportProfile {
    rankings: BTreeMap<usize, Ranking>,
    fill: FillPolicy,
}

impl ReportProfile {
    pub fn new(fill: FillPolicy) -> Self {
        Self {
            rankings: BTreeMap::new(),
            fill,
        }
    }

    /// Truthful canonical rankings (descending true score, ties by item id)
    /// for every owner with a nonempty item set.
    pub fn truthful(g: &OwnershipGraph, true_scores: &[f64]) -> Result<Self, IsotonicError> {
        let mut profile = Self::new(FillPolicy::Reject);
        for owner in 0..g.num_owners() {
            let scope = g.items_of(owner);
            if !scope.is_empty() {
                profile
                    .rankings
                    .insert(owner, Ranking::truthful(true_scores, scope)?);
            }
        }
        Ok(profile)
    }

    pub fn insert(&mut self, owner: usize, ranking: Ranking) {
        self.rankings.insert(owner, ranking);
    }

    pub fn get(&self, owner: usize) -> Option<&Ranking> {
        self.rankings.get(&owner)
    }

    pub fn fill_policy(&self) -> FillPolicy {
        self.fill
    }

    pub fn owners(&self) -> impl Iterator<Item = usize> + '_ {
        self.rankings.keys().copied()
    }

    /// The ranking owner must supply over `scope` (ascending item ids).
    /// Present reports are validated against the scope; absent ones are
    /// rejected or filled per policy, deterministically per (seed, owner).
    pub fn resolve(&self, owner: usize, scope: &[usize]) -> Result<Ranking, MechanismError> {
        if let Some(ranking) = self.rankings.get(&owner) {
            let got = ranking.scope();
            if got != scope {
                return Err(MechanismError::ReportScopeMismatch {
                    owner,
                    expected: scope.to_vec(),
                    got,
                });
            }
            return Ok(ranking.clone());
        }
        match self.fill {
            FillPolicy::Reject => Err(MechanismError::MissingReport { owner }),
            FillPolicy::Seeded(seed) => {
                let mut order = scope.to_vec();
                let mut rng = crate::seed::rng(seed, "fill-report", &[owner as u64]);
                order.shuffle(&mut rng);
                Ok(Ranking::new(order).expect("scope is distinct and nonempty"))
            }
        }
    }
}

fn check_scores(g: &OwnershipGraph, y: &ScoreVector) -> Result<(), MechanismError> {
    if y.len() != g.num_items() {
        return Err(MechanismError::ScoreCount {
            expected: g.num_items(),
            got: y.len(),
        });
    }
    Ok(())
}

/// Complete-overlap calibration: every owner ranks the full item set; the
/// output is the credential-weighted average of the per-owner isotonic
/// fits. The number of owners is the credential count.
pub fn calibrate_complete_overlap(
    y: &ScoreVector,
    reports: &ReportProfile,
    cred: &OwnerCredentials,
) -> Result<ScoreVector, MechanismError> {
    let n = y.len();
    let scope: Vec<usize> = (0..n).collect();
    let total: f64 = cred.values().iter().sum();
    if total <= 0.0 {
        return Err(MechanismError::ZeroCredentialMass);
    }
    let mut acc = vec![0.0; n];
    for owner in 0..cred.len() {
        let alpha = cred.alpha(owner);
        if alpha == 0.0 {
            // Zero-weight owners contribute nothing; skip resolving so a
            // missing report from a voiceless owner is not an error.
            continue;
        }
        let ranking = reports.resolve(owner, &scope)?;
        let fitted = isotonic_fit_block(y.values(), &ranking)?;
        for (pos, &item) in ranking.order().iter().enumerate() {
            acc[item] += alpha * fitted[pos];
        }
    }
    for v in &mut acc {
        *v /= total;
    }
    Ok(ScoreVector::new(acc)?)
}

/// Naive ownership averaging: each owner's item set is fitted in isolation
/// and an item's output is the plain mean of its owners' fitted values.
/// Items with no owner pass through raw. Kept as a foil: it is not
/// truthful (an owner can profit by flipping a pair).
pub fn naive_ownership_average(
    g: &OwnershipGraph,
    y: &ScoreVector,
    reports: &ReportProfile,
) -> Result<ScoreVector, MechanismError> {
    check_scores(g, y)?;
    let n = g.num_items();
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for owner in 0..g.num_owners() {
        let scope = g.items_of(owner);
        if scope.is_empty() {
            continue;
        }
        let ranking = reports.resolve(owner, scope)?;
        let fitted = isotonic_fit_block(y.values(), &ranking)?;
        for (pos, &item) in ranking.order().iter().enumerate() {
            sum[item] += fitted[pos];
            count[item] += 1;
        }
    }
    let out = (0..n)
        .map(|i| {
            if count[i] > 0 {
                sum[i] / count[i] as f64
            } else {
                y.values()[i]
            }
        })
        .collect();
    Ok(ScoreVector::new(out)?)
}

/// Why a block produced the output it did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum BlockStatus {
    /// Calibrated from these owners' sliced rankings.
    Calibrated { owners: Vec<usize> },
    /// Single item: raw score passes through, nothing elicited.
    SingletonPassThrough,
    /// No owner owns the whole block: raw scores pass through.
    NoCommonOwner,
    /// Common owners exist but all have zero credential: raw pass-through.
    ZeroCredentialMass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockOutcome {
    pub block: usize,
    pub items: Vec<usize>,
    #[serde(flatten)]
    pub status: BlockStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionCalibration {
    pub scores: ScoreVector,
    pub blocks: Vec<BlockOutcome>,
}

/// Partition calibration with per-block provenance. Each multi-item block
/// with common owners is calibrated by complete-overlap averaging of those
/// owners' rankings sliced to the block; other blocks pass raw scores
/// through. Owners report one full ranking of their item set; only the
/// within-block order is used (the mechanism commits to ignore the rest).
pub fn calibrate_with_partition_detailed(
    g: &OwnershipGraph,
    p: &Partition,
    y: &ScoreVector,
    reports: &ReportProfile,
    cred: &OwnerCredentials,
) -> Result<PartitionCalibration, MechanismError> {
    check_scores(g, y)?;
    cred.check_count(g.num_owners())?;
    let mut out = y.values().to_vec();
    let mut outcomes = Vec::with_capacity(p.num_blocks());
    for (k, block) in p.blocks().iter().enumerate() {
        let owners = p.common_owners(k);
        let status = if block.len() == 1 {
            BlockStatus::SingletonPassThrough
        } else if owners.is_empty() {
            BlockStatus::NoCommonOwner
        } else {
            let total: f64 = owners.iter().map(|&j| cred.alpha(j)).sum();
            if total <= 0.0 {
                BlockStatus::ZeroCredentialMass
            } else {
                let members: BTreeSet<usize> = block.iter().copied().collect();
                let mut acc: BTreeMap<usize, f64> =
                    block.iter().map(|&i| (i, 0.0)).collect();
                let mut used = Vec::new();
                for &owner in owners {
                    let alpha = cred.alpha(owner);
                    if alpha == 0.0 {
                        continue;
                    }
                    let full = reports.resolve(owner, g.items_of(owner))?;
                    let chain = full.restrict(&members)?;
                    let fitted = isotonic_fit_block(y.values(), &chain)?;
                    for (pos, &item) in chain.order().iter().enumerate() {
                        *acc.get_mut(&item).unwrap() += alpha * fitted[pos];
                    }
                    used.push(owner);
                }
                for (&item, &value) in &acc {
                    out[item] = value / total;
                }
                BlockStatus::Calibrated { owners: used }
            }
        };
        outcomes.push(BlockOutcome {
            block: k,
            items: block.clone(),
            status,
        });
    }
    Ok(PartitionCalibration {
        scores: ScoreVector::new(out)?,
        blocks: outcomes,
    })
}

/// Partition calibration returning just the adjusted scores.
pub fn calibrate_with_partition(
    g: &OwnershipGraph,
    p: &Partition,
    y: &ScoreVector,
    reports: &ReportProfile,
    cred: &OwnerCredentials,
) -> Result<ScoreVector, MechanismError> {
    Ok(calibrate_with_partition_detailed(g, p, y, reports, cred)?.scores)
}

/// One owner's personal block structure and per-item weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwnerPlan {
    /// Disjoint blocks covering exactly the owner's item set.
    pub blocks: Vec<Vec<usize>>,
    /// One weight per item in the graph; must be 0 for items the owner does
    /// not own.
    pub weights: Vec<f64>,
}

/// Personalized calibration parameters: a plan per owner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalizedParams {
    plans: Vec<OwnerPlan>,
}

impl PersonalizedParams {
    /// Validates each plan against the graph: blocks partition the owner's
    /// item set exactly; weights are finite, nonnegative, and zero outside
    /// the owner's items.
    pub fn new(g: &OwnershipGraph, plans: Vec<OwnerPlan>) -> Result<Self, MechanismError> {
        if plans.len() != g.num_owners() {
            return Err(MechanismError::PlanCount {
                expected: g.num_owners(),
                got: plans.len(),
            });
        }
        let n = g.num_items();
        let mut sorted = plans;
        for (owner, plan) in sorted.iter_mut().enumerate() {
            let owned: BTreeSet<usize> = g.items_of(owner).iter().copied().collect();
            let mut seen = BTreeSet::new();
            for block in &mut plan.blocks {
                block.sort_unstable();
                for &item in block.iter() {
                    if !owned.contains(&item) {
                        return Err(MechanismError::PlanBlockOutsideOwnership { owner, item });
                    }
                    if !seen.insert(item) {
                        return Err(MechanismError::PlanOverlap { owner, item });
                    }
                }
            }
            if let Some(&item) = owned.difference(&seen).next() {
                return Err(MechanismError::PlanMissingItem { owner, item });
            }
            if plan.weights.len() != n {
                return Err(MechanismError::WeightLength {
                    owner,
                    expected: n,
                    got: plan.weights.len(),
                });
            }
            for (item, &w) in plan.weights.iter().enumerate() {
                if !w.is_finite() || w < 0.0 {
                    return Err(MechanismError::BadWeight {
                        owner,
                        item,
                        value: w,
                    });
                }
                if w != 0.0 && !owned.contains(&item) {
                    return Err(MechanismError::WeightOffOwnership { owner, item });
                }
            }
        }
        Ok(Self { plans: sorted })
    }

    /// Encodes a global partition: owner j's blocks are the nonempty
    /// intersections of the global blocks with their item set, weighted 1
    /// on blocks they fully own and 0 elsewhere. Personalized calibration
    /// under this encoding reproduces the partition mechanism exactly.
    pub fn encode_partition(g: &OwnershipGraph, p: &Partition) -> Self {
        let n = g.num_items();
        let mut plans = Vec::with_capacity(g.num_owners());
        for owner in 0..g.num_owners() {
            let owned: BTreeSet<usize> = g.items_of(owner).iter().copied().collect();
            let mut blocks = Vec::new();
            let mut weights = vec![0.0; n];
            for (k, global_block) in p.blocks().iter().enumerate() {
                let piece: Vec<usize> = global_block
                    .iter()
                    .copied()
                    .filter(|i| owned.contains(i))
                    .collect();
                if piece.is_empty() {
                    continue;
                }
                if p.common_owners(k).binary_search(&owner).is_ok() {
                    for &i in &piece {
                        weights[i] = 1.0;
                    }
                }
                blocks.push(piece);
            }
            plans.push(OwnerPlan { blocks, weights });
        }
        Self::new(g, plans).expect("partition encoding is always valid")
    }

    pub fn plans(&self) -> &[OwnerPlan] {
        &self.plans
    }

    pub fn plan(&self, owner: usize) -> &OwnerPlan {
        &self.plans[owner]
    }

    /// Unordered item pairs whose relative ranking influences the output:
    /// pairs within blocks carrying positive weight. Zero-weight blocks are
    /// elicited but never used, so they are excluded.
    pub fn weighted_pairs(&self) -> BTreeSet<(usize, usize)> {
        let mut pairs = BTreeSet::new();
        for plan in &self.plans {
            for block in &plan.blocks {
                if block.iter().all(|&i| plan.weights[i] == 0.0) {
                    continue;
                }
                for (a, &i) in block.iter().enumerate() {
                    for &k in &block[a + 1..] {
                        pairs.insert((i.min(k), i.max(k)));
                    }
                }
            }
        }
        pairs
    }
}

/// Unordered item pairs a partition mechanism actually uses: pairs within
/// multi-item blocks that have at least one common owner.
pub fn partition_used_pairs(p: &Partition) -> BTreeSet<(usize, usize)> {
    let mut pairs = BTreeSet::new();
    for (k, block) in p.blocks().iter().enumerate() {
        if block.len() < 2 || p.common_owners(k).is_empty() {
            continue;
        }
        for (a, &i) in block.iter().enumerate() {
            for &j in &block[a + 1..] {
                pairs.insert((i.min(j), i.max(j)));
            }
        }
    }
    pairs
}

/// Personalized calibration: for each owner and each of their blocks, the
/// owner's full ranking is sliced to the block and the block's scores are
/// fitted; item outputs are the credential-and-weight-averaged fits. Items
/// whose total weight is zero pass through raw.
pub fn calibrate_personalized(
    g: &OwnershipGraph,
    params: &PersonalizedParams,
    y: &ScoreVector,
    reports: &ReportProfile,
    cred: &OwnerCredentials,
) -> Result<ScoreVector, MechanismError> {
    check_scores(g, y)?;
    cred.check_count(g.num_owners())?;
    if params.plans.len() != g.num_owners() {
        return Err(MechanismError::PlanCount {
            expected: g.num_owners(),
            got: params.plans.len(),
        });
    }
    let n = g.num_items();
    let mut numerator = vec![0.0; n];
    let mut denominator = vec![0.0; n];
    for owner in 0..g.num_owners() {
        let alpha = cred.alpha(owner);
        let plan = &params.plans[owner];
        if alpha == 0.0 || plan.blocks.is_empty() {
            continue;
        }
        let full = reports.resolve(owner, g.items_of(owner))?;
        for block in &plan.blocks {
            // Weight-zero blocks cannot influence any item; skip the fit.
            if block.iter().all(|&i| plan.weights[i] == 0.0) {
                continue;
            }
            let members: BTreeSet<usize> = block.iter().copied().collect();
            let chain = full.restrict(&members)?;
            let fitted = isotonic_fit_block(y.values(), &chain)?;
            for (pos, &item) in chain.order().iter().enumerate() {
                let w = alpha * plan.weights[item];
                numerator[item] += w * fitted[pos];
                denominator[item] += w;
            }
        }
    }
    let out = (0..n)
        .map(|i| {
            if denominator[i] > 0.0 {
                numerator[i] / denominator[i]
            } else {
                y.values()[i]
            }
        })
        .collect();
    Ok(ScoreVector::new(out)?)
}

/// An unequal-influence pair inside one owner's block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceViolation {
    pub owner: usize,
    pub block: usize,
    pub item_a: usize,
    pub item_b: usize,
    pub influence_a: f64,
    pub influence_b: f64,
}

/// Checks that, under the given credentials, each owner exerts the same
/// relative influence on every item within each of their blocks
/// (influence = own weighted share of the item's total weight; 0 when the
/// item's total weight is 0). Returns all violating pairs to 1e-12.
///
/// This check depends on the credentials. The credential-independent
/// condition is [`partition_structure_check`]; parameters can pass this
/// check for specific credentials while failing that one.
pub fn balanced_influence_check(
    g: &OwnershipGraph,
    params: &PersonalizedParams,
    cred: &OwnerCredentials,
) -> Vec<InfluenceViolation> {
    const TOL: f64 = 1e-12;
    let n = g.num_items();
    let mut total_weight = vec![0.0; n];
    for owner in 0..params.plans.len() {
        for item in 0..n {
            total_weight[item] += cred.alpha(owner) * params.plans[owner].weights[item];
        }
    }
    let influence = |owner: usize, item: usize| -> f64 {
        if total_weight[item] > 0.0 {
            cred.alpha(owner) * params.plans[owner].weights[item] / total_weight[item]
        } else {
            0.0
        }
    };
    let mut violations = Vec::new();
    for (owner, plan) in params.plans.iter().enumerate() {
        for (block_idx, block) in plan.blocks.iter().enumerate() {
            for (a, &item_a) in block.iter().enumerate() {
                for &item_b in &block[a + 1..] {
                    let ia = influence(owner, item_a);
                    let ib = influence(owner, item_b);
                    if (ia - ib).abs() > TOL {
                        violations.push(InfluenceViolation {
                            owner,
                            block: block_idx,
                            item_a,
                            item_b,
                            influence_a: ia,
                            influence_b: ib,
                        });
                    }
                }
            }
        }
    }
    violations
}

/// A weight imbalance across two overlapping personal blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureViolation {
    pub owner_a: usize,
    pub block_a: usize,
    pub owner_b: usize,
    pub block_b: usize,
    pub item_a: usize,
    pub item_b: usize,
    pub weight_a: f64,
    pub weight_b: f64,
}

impl std::fmt::Display for StructureViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "owner {}'s block {} overlaps owner {}'s block {}, but owner {}'s weights differ \
             across the union: item {} has {} while item {} has {}",
            self.owner_a,
            self.block_a,
            self.owner_b,
            self.block_b,
            self.owner_a,
            self.item_a,
            self.weight_a,
            self.item_b,
            self.weight_b,
        )
    }
}

/// Credential-independent structure check: whenever two personal blocks
/// overlap (including a block with itself), the first owner's weights must
/// be constant across the union (weights are 0 off-ownership by
/// construction). An empty result means the parameters are equivalent to a
/// global-partition mechanism; see [`merge_to_global_partition`].
pub fn partition_structure_check(params: &PersonalizedParams) -> Vec<StructureViolation> {
    let mut violations = Vec::new();
    let flattened: Vec<(usize, usize, &Vec<usize>)> = params
        .plans
        .iter()
        .enumerate()
        .flat_map(|(owner, plan)| {
            plan.blocks
                .iter()
                .enumerate()
                .map(move |(idx, block)| (owner, idx, block))
        })
        .collect();
    for &(owner_a, block_a, items_a) in &flattened {
        let set_a: BTreeSet<usize> = items_a.iter().copied().collect();
        for &(owner_b, block_b, items_b) in &flattened {
            let same = owner_a == owner_b && block_a == block_b;
            let overlaps = same || items_b.iter().any(|i| set_a.contains(i));
            if !overlaps {
                continue;
            }
            let union: BTreeSet<usize> = set_a.union(&items_b.iter().copied().collect()).copied().collect();
            let weights = &params.plans[owner_a].weights;
            let mut iter = union.iter();
            let &first = iter.next().expect("blocks are nonempty");
            for &item in iter {
                if weights[item] != weights[first] {
                    violations.push(StructureViolation {
                        owner_a,
                        block_a,
                        owner_b,
                        block_b,
                        item_a: first,
                        item_b: item,
                        weight_a: weights[first],
                        weight_b: weights[item],
                    });
                }
            }
        }
    }
    violations
}

/// Normalizes structure-valid personalized parameters into a global
/// partition. Repeatedly merges two blocks of the same owner when the
/// owner's weights agree across the union and every other owner's weights
/// are constant across the union (zero on items they do not own), nonzero
/// when they own the whole union; then drops zero-weight blocks, dedupes,
/// and completes uncovered items as singletons.
///
/// Consulting only owners of the whole union would be too permissive: an
/// owner holding nonzero weight on part of the union but owning none of the
/// rest would end up with a block overlapping the merged one, breaking the
/// disjointness that makes the result a partition. Requiring constancy from
/// every owner keeps each merge structure-valid.
///
/// The used comparison pairs of the result are a superset of the input's
/// weighted pairs, and re-encoding the result and merging again is a
/// fixpoint.
pub fn merge_to_global_partition(
    g: &OwnershipGraph,
    params: &PersonalizedParams,
) -> Result<Partition, MechanismError> {
    if let Some(v) = partition_structure_check(params).into_iter().next() {
        return Err(MechanismError::StructureInvalid(v));
    }
    let mut blocks: Vec<Vec<Vec<usize>>> = params
        .plans
        .iter()
        .map(|plan| plan.blocks.clone())
        .collect();
    let weights: Vec<&Vec<f64>> = params.plans.iter().map(|p| &p.weights).collect();

    let constant_weight = |owner: usize, items: &[usize]| -> Option<f64> {
        let w = weights[owner];
        let first = w[items[0]];
        items.iter().all(|&i| w[i] == first).then_some(first)
    };

    'fixpoint: loop {
        for owner in 0..blocks.len() {
            for a in 0..blocks[owner].len() {
                for b in a + 1..blocks[owner].len() {
                    let mut union = blocks[owner][a].clone();
                    union.extend_from_slice(&blocks[owner][b]);
                    union.sort_unstable();
                    if constant_weight(owner, &union).is_none() {
                        continue;
                    }
                    let others_ok = (0..blocks.len()).all(|other| {
                        if other == owner {
                            return true;
                        }
                        let owned = g.items_of(other);
                        let owns_union = union
                            .iter()
                            .all(|i| owned.binary_search(i).is_ok());
                        match constant_weight(other, &union) {
                            Some(w) => !owns_union || w != 0.0,
                            None => false,
                        }
                    });
                    if !others_ok {
                        continue;
                    }
                    blocks[owner][a] = union;
                    blocks[owner].remove(b);
                    continue 'fixpoint;
                }
            }
        }
        break;
    }

    // Keep weighted blocks, dedupe identical ones.
    let mut kept: BTreeSet<Vec<usize>> = BTreeSet::new();
    for (owner, owner_blocks) in blocks.iter().enumerate() {
        for block in owner_blocks {
            if block.iter().any(|&i| weights[owner][i] != 0.0) {
                kept.insert(block.clone());
            }
        }
    }
    // Structure validity guarantees distinct kept blocks are disjoint;
    // verify rather than assume.
    let kept: Vec<Vec<usize>> = kept.into_iter().collect();
    let mut covered = vec![false; g.num_items()];
    for block in &kept {
        for &item in block {
            if covered[item] {
                let other = kept
                    .iter()
                    .find(|b| *b != block && b.contains(&item))
                    .cloned()
                    .unwrap_or_default();
                return Err(MechanismError::MergeConflict {
                    a: block.clone(),
                    b: other,
                });
            }
            covered[item] = true;
        }
    }
    let mut final_blocks = kept;
    for item in 0..g.num_items() {
        if !covered[item] {
            final_blocks.push(vec![item]);
        }
    }
    Ok(Partition::new(g, final_blocks)?)
}
