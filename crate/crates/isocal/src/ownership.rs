//! Owner/item bipartite structures and instance generators.
//!
//! An [`OwnershipGraph`] records which owners own which items. A
//! [`Partition`] splits the item set into disjoint blocks and carries, for
//! each block, the set of owners owning the whole block (its common owners).
//! A partition is L-strong when every multi-item block has at least L common
//! owners. The L-to-1 reduction rewrites a graph so that L-strongness
//! becomes 1-strongness, at the cost of one derived owner per L-subset of
//! original owners.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OwnershipError {
    #[error("owner id {owner} out of range 0..{num_owners}")]
    OwnerOutOfRange { owner: usize, num_owners: usize },
    #[error("item id {item} out of range 0..{num_items}")]
    ItemOutOfRange { item: usize, num_items: usize },
    #[error("duplicate edge (owner {owner}, item {item})")]
    DuplicateEdge { owner: usize, item: usize },
    #[error("graph must have at least one owner and one item")]
    EmptyGraph,
    #[error("block must be nonempty")]
    EmptyBlock,
    #[error("item {item} appears in more than one block")]
    OverlappingBlocks { item: usize },
    #[error("item {item} is not covered by any block")]
    UncoveredItem { item: usize },
    #[error("strongness level must be at least 1")]
    ZeroStrongness,
    #[error(
        "reduction over {subsets} owner subsets of {num_items} items needs budget {required}, \
         above the configured {budget}"
    )]
    ReductionBudget {
        subsets: u128,
        num_items: usize,
        required: u128,
        budget: u64,
    },
    #[error("tree depth must be between 1 and {max}, got {depth}")]
    BadTreeDepth { depth: usize, max: usize },
    #[error("worst-case family needs at least 2 base owners, got {m}")]
    TooFewBaseOwners { m: usize },
    #[error("worst-case family needs L >= 1 and N >= 1")]
    EmptyFamily,
    #[error(
        "worst-case family is not integral: level {level} draws N*(M-1)^{exp} = {numerator} \
         items which must be divisible by M^{level} = {denominator}"
    )]
    NotIntegral {
        level: usize,
        exp: usize,
        numerator: u128,
        denominator: u128,
    },
    #[error(
        "worst-case family infeasible: N*(1-1/M)^L = {available} residual items per base owner \
         cannot supply {needed} extra singletons"
    )]
    FamilyInfeasible { available: f64, needed: usize },
    #[error("conference generator needs n >= 1 and m >= 1")]
    EmptyConference,
    #[error("degree law must have positive support: {reason}")]
    BadDegreeLaw { reason: String },
}

/// Bipartite owner/item relation with adjacency in both directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OwnershipGraph {
    num_owners: usize,
    num_items: usize,
    items_of: Vec<Vec<usize>>,
    owners_of: Vec<Vec<usize>>,
    num_edges: usize,
}

impl OwnershipGraph {
    pub fn new(
        num_owners: usize,
        num_items: usize,
        edges: &[(usize, usize)],
    ) -> Result<Self, OwnershipError> {
        if num_owners == 0 || num_items == 0 {
            return Err(OwnershipError::EmptyGraph);
        }
        let mut items_of = vec![Vec::new(); num_owners];
        let mut owners_of = vec![Vec::new(); num_items];
        for &(owner, item) in edges {
            if owner >= num_owners {
                return Err(OwnershipError::OwnerOutOfRange { owner, num_owners });
            }
            if item >= num_items {
                return Err(OwnershipError::ItemOutOfRange { item, num_items });
            }
            items_of[owner].push(item);
            owners_of[item].push(owner);
        }
        for (owner, items) in items_of.iter_mut().enumerate() {
            items.sort_unstable();
            if let Some(w) = items.windows(2).find(|w| w[0] == w[1]) {
                return Err(OwnershipError::DuplicateEdge { owner, item: w[0] });
            }
        }
        for owners in owners_of.iter_mut() {
            owners.sort_unstable();
        }
        Ok(Self {
            num_owners,
            num_items,
            items_of,
            owners_of,
            num_edges: edges.len(),
        })
    }

    /// Builds a graph from per-owner item sets.
    pub fn from_owner_sets(
        sets: &[Vec<usize>],
        num_items: usize,
    ) -> Result<Self, OwnershipError> {
        let mut edges = Vec::new();
        for (owner, items) in sets.iter().enumerate() {
            for &item in items {
                edges.push((owner, item));
            }
        }
        Self::new(sets.len(), num_items, &edges)
    }

    pub fn num_owners(&self) -> usize {
        self.num_owners
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    /// Items of owner `j`, sorted ascending.
    pub fn items_of(&self, owner: usize) -> &[usize] {
        &self.items_of[owner]
    }

    /// Owners of item `i`, sorted ascending.
    pub fn owners_of(&self, item: usize) -> &[usize] {
        &self.owners_of[item]
    }

    /// All edges, sorted by (owner, item).
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges);
        for (owner, items) in self.items_of.iter().enumerate() {
            for &item in items {
                out.push((owner, item));
            }
        }
        out
    }

    /// True if every owner owns every item.
    pub fn is_complete_overlap(&self) -> bool {
        self.items_of.iter().all(|s| s.len() == self.num_items)
    }
}

/// Shrinks ascending `a` to its intersection with ascending `b` without
/// allocating; called once per block item, so it is on the hot path of
/// partition construction.
fn intersect_sorted_in_place(a: &mut Vec<usize>, b: &[usize]) {
    let mut write = 0;
    let mut k = 0;
    for read in 0..a.len() {
        let v = a[read];
        while k < b.len() && b[k] < v {
            k += 1;
        }
        if k == b.len() {
            break;
        }
        if b[k] == v {
            a[write] = v;
            write += 1;
            k += 1;
        }
    }
    a.truncate(write);
}

/// Owners owning every item of `block`.
pub fn common_owner_set(
    g: &OwnershipGraph,
    block: &[usize],
) -> Result<Vec<usize>, OwnershipError> {
    if block.is_empty() {
        return Err(OwnershipError::EmptyBlock);
    }
    for &item in block {
        if item >= g.num_items() {
            return Err(OwnershipError::ItemOutOfRange {
                item,
                num_items: g.num_items(),
            });
        }
    }
    let mut owners = g.owners_of(block[0]).to_vec();
    for &item in &block[1..] {
        if owners.is_empty() {
            break;
        }
        intersect_sorted_in_place(&mut owners, g.owners_of(item));
    }
    Ok(owners)
}

/// Disjoint item blocks covering the whole item set, each with its
/// common-owner set (recomputed from the graph at construction).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
    common_owners: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(g: &OwnershipGraph, blocks: Vec<Vec<usize>>) -> Result<Self, OwnershipError> {
        let n = g.num_items();
        let mut seen = vec![false; n];
        for block in &blocks {
            if block.is_empty() {
                return Err(OwnershipError::EmptyBlock);
            }
            for &item in block {
                if item >= n {
                    return Err(OwnershipError::ItemOutOfRange {
                        item,
                        num_items: n,
                    });
                }
                if seen[item] {
                    return Err(OwnershipError::OverlappingBlocks { item });
                }
                seen[item] = true;
            }
        }
        if let Some(item) = seen.iter().position(|&s| !s) {
            return Err(OwnershipError::UncoveredItem { item });
        }
        let mut sorted_blocks = blocks;
        for block in &mut sorted_blocks {
            block.sort_unstable();
        }
        let common_owners = sorted_blocks
            .iter()
            .map(|b| common_owner_set(g, b))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            blocks: sorted_blocks,
            common_owners,
        })
    }

    /// One singleton block per item.
    pub fn singletons(g: &OwnershipGraph) -> Self {
        let blocks = (0..g.num_items()).map(|i| vec![i]).collect();
        Self::new(g, blocks).expect("singleton cover is always valid")
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn common_owners(&self, k: usize) -> &[usize] {
        &self.common_owners[k]
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len()).collect()
    }

    /// Largest L such that the partition is L-strong, or `None` when every
    /// block is a singleton (vacuously L-strong for all L).
    pub fn strongness(&self) -> Option<usize> {
        self.blocks
            .iter()
            .zip(&self.common_owners)
            .filter(|(b, _)| b.len() > 1)
            .map(|(_, t)| t.len())
            .min()
    }

    /// Checks the stored blocks against `g` and rebuilds common owners;
    /// used after deserializing a partition from disk.
    pub fn revalidate(&self, g: &OwnershipGraph) -> Result<Self, OwnershipError> {
        Self::new(g, self.blocks.clone())
    }
}

/// True iff every block with more than one item has at least `l` common
/// owners. `l = 0` is vacuously true.
pub fn is_l_strong(g: &OwnershipGraph, p: &Partition, l: usize) -> bool {
    let _ = g;
    p.blocks
        .iter()
        .zip(&p.common_owners)
        .all(|(block, owners)| block.len() <= 1 || owners.len() >= l)
}

/// Output of the L-to-1 reduction: the derived graph plus, per derived
/// owner, the original L-subsets whose intersection it represents (derived
/// owners with identical item sets are merged, keeping all subsets).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReducedGraph {
    pub graph: OwnershipGraph,
    pub provenance: Vec<Vec<Vec<usize>>>,
}

pub const DEFAULT_REDUCTION_BUDGET: u64 = 50_000_000;

fn binomial(n: u128, k: u128) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)?;
        acc /= i + 1;
    }
    Some(acc)
}

/// Rewrites `g` so that L-strong partitions of `g` are exactly the 1-strong
/// partitions of the result: one derived owner per L-subset of original
/// owners, owning the intersection of their item sets. Empty intersections
/// are dropped; identical intersections are merged (see provenance).
/// Refuses when C(m, L) * n exceeds `budget`.
pub fn reduce_l_to_1(
    g: &OwnershipGraph,
    l: usize,
    budget: u64,
) -> Result<ReducedGraph, OwnershipError> {
    if l == 0 {
        return Err(OwnershipError::ZeroStrongness);
    }
    if l == 1 {
        // Identity: singleton subsets, no dedup, graph unchanged.
        let provenance = (0..g.num_owners()).map(|j| vec![vec![j]]).collect();
        return Ok(ReducedGraph {
            graph: g.clone(),
            provenance,
        });
    }
    let m = g.num_owners();
    let subsets = binomial(m as u128, l as u128).unwrap_or(u128::MAX);
    let required = subsets.saturating_mul(g.num_items() as u128);
    if required > budget as u128 {
        return Err(OwnershipError::ReductionBudget {
            subsets,
            num_items: g.num_items(),
            required,
            budget,
        });
    }
    if l > m {
        // No L-subsets exist; the derived graph has no owners of any item,
        // but the type needs >= 1 owner. Model it as one derived owner with
        // nothing: not representable; instead reject via budget-free path.
        // Every partition with a multi-item block fails L-strongness, which
        // matches a derived graph with no multi-owned items. Use a single
        // empty derived owner.
        let graph = OwnershipGraph::new(1, g.num_items(), &[])?;
        return Ok(ReducedGraph {
            graph,
            provenance: vec![Vec::new()],
        });
    }

    let mut by_items: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut item_sets: Vec<Vec<usize>> = Vec::new();
    let mut provenance: Vec<Vec<Vec<usize>>> = Vec::new();

    // Lexicographic L-subsets of 0..m.
    let mut subset: Vec<usize> = (0..l).collect();
    loop {
        let mut items = g.items_of(subset[0]).to_vec();
        for &j in &subset[1..] {
            if items.is_empty() {
                break;
            }
            intersect_sorted_in_place(&mut items, g.items_of(j));
        }
        if !items.is_empty() {
            match by_items.get(&items) {
                Some(&id) => provenance[id].push(subset.clone()),
                None => {
                    let id = item_sets.len();
                    by_items.insert(items.clone(), id);
                    item_sets.push(items);
                    provenance.push(vec![subset.clone()]);
                }
            }
        }
        // Advance to the next combination.
        let mut pos = l;
        while pos > 0 {
            pos -= 1;
            if subset[pos] != pos + m - l {
                subset[pos] += 1;
                for q in pos + 1..l {
                    subset[q] = subset[q - 1] + 1;
                }
                break;
            }
            if pos == 0 {
                pos = usize::MAX;
                break;
            }
        }
        if pos == usize::MAX {
            break;
        }
    }

    if item_sets.is_empty() {
        let graph = OwnershipGraph::new(1, g.num_items(), &[])?;
        return Ok(ReducedGraph {
            graph,
            provenance: vec![Vec::new()],
        });
    }
    let graph = OwnershipGraph::from_owner_sets(&item_sets, g.num_items())?;
    Ok(ReducedGraph { graph, provenance })
}

const MAX_TREE_DEPTH: usize = 10;

/// Complete ternary tree: items are the 3^depth leaves, owners are the
/// (3^depth - 1)/2 internal nodes (level order, root first), and a node owns
/// every leaf of its subtree. Each leaf thus has exactly `depth` owners.
pub fn gen_ternary_tree(depth: usize) -> Result<OwnershipGraph, OwnershipError> {
    if depth == 0 || depth > MAX_TREE_DEPTH {
        return Err(OwnershipError::BadTreeDepth {
            depth,
            max: MAX_TREE_DEPTH,
        });
    }
    let num_items = 3usize.pow(depth as u32);
    let num_owners = (num_items - 1) / 2;
    let mut sets = Vec::with_capacity(num_owners);
    for level in 0..depth {
        let width = 3usize.pow(level as u32);
        let leaves_per_node = num_items / width;
        for pos in 0..width {
            let start = pos * leaves_per_node;
            sets.push((start..start + leaves_per_node).collect());
        }
    }
    OwnershipGraph::from_owner_sets(&sets, num_items)
}

/// Worst-case family for the greedy partitioner. Base owners `0..M` own
/// disjoint N-item sets. Extra owner `M + l - 1` (for `l = 1..=L`) owns
/// `N*(1-1/M)^(l-1)` items drawn evenly from the base owners' untouched
/// pools plus one extra item from base owner `(l-1) mod M`, so greedy picks
/// the extras first and fragments the base blocks. All sizes must be exactly
/// integral, which requires `M^l | N*(M-1)^(l-1)` at every level.
pub fn gen_tightness_family(
    m_base: usize,
    l_extra: usize,
    n_per_owner: usize,
) -> Result<OwnershipGraph, OwnershipError> {
    let (m, l, n) = (m_base, l_extra, n_per_owner);
    if m < 2 {
        return Err(OwnershipError::TooFewBaseOwners { m });
    }
    if l == 0 || n == 0 {
        return Err(OwnershipError::EmptyFamily);
    }
    // Per-level draw from each base pool: N*(M-1)^(l-1) / M^l.
    let mut draws = Vec::with_capacity(l);
    for level in 1..=l {
        let numerator = (n as u128)
            .checked_mul((m as u128 - 1).pow(level as u32 - 1))
            .ok_or(OwnershipError::NotIntegral {
                level,
                exp: level - 1,
                numerator: u128::MAX,
                denominator: 0,
            })?;
        let denominator = (m as u128).pow(level as u32);
        if numerator % denominator != 0 {
            return Err(OwnershipError::NotIntegral {
                level,
                exp: level - 1,
                numerator,
                denominator,
            });
        }
        draws.push((numerator / denominator) as usize);
    }
    let available = n as f64 * (1.0 - 1.0 / m as f64).powi(l as i32);
    if available < l as f64 {
        return Err(OwnershipError::FamilyInfeasible {
            available,
            needed: l,
        });
    }

    let num_items = m * n;
    let mut sets: Vec<Vec<usize>> = (0..m).map(|j| (j * n..(j + 1) * n).collect()).collect();
    // Untouched suffix of each base owner's range, consumed front-first.
    let mut cursor = vec![0usize; m];
    for level in 1..=l {
        let take = draws[level - 1];
        let mut extra = Vec::with_capacity(m * take + 1);
        for j in 0..m {
            let start = j * n + cursor[j];
            debug_assert!(cursor[j] + take <= n, "pool underflow");
            extra.extend(start..start + take);
            cursor[j] += take;
        }
        let hit = (level - 1) % m;
        debug_assert!(cursor[hit] < n, "pool underflow on extra singleton");
        extra.push(hit * n + cursor[hit]);
        cursor[hit] += 1;
        extra.sort_unstable();
        sets.push(extra);
    }
    OwnershipGraph::from_owner_sets(&sets, num_items)
}

/// Attachment-propensity law for the synthetic conference generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DegreeLaw {
    /// P(k) proportional to k^(-exponent) on 1..=cap (cap = item count).
    PowerLaw { exponent: f64 },
    /// Uniform on lo..=hi.
    Uniform { lo: usize, hi: usize },
}

impl Default for DegreeLaw {
    fn default() -> Self {
        DegreeLaw::PowerLaw { exponent: 2.5 }
    }
}

/// Synthetic conference-scale ownership graph. Every item gets a first
/// owner; further edges attach items preferentially by current item degree
/// (with a uniform smoothing component) and owners proportionally to a
/// per-owner propensity drawn from `law`. The target edge count is
/// min(3n, n*m), giving roughly 3 owners per item. Deterministic in `seed`.
pub fn gen_random_conference(
    n: usize,
    m: usize,
    law: DegreeLaw,
    seed: u64,
) -> Result<OwnershipGraph, OwnershipError> {
    if n == 0 || m == 0 {
        return Err(OwnershipError::EmptyConference);
    }
    let mut rng = crate::seed::rng(seed, "conference", &[n as u64, m as u64]);

    // Per-owner attachment propensity.
    let cap = n;
    let mut propensity = Vec::with_capacity(m);
    match law {
        DegreeLaw::PowerLaw { exponent } => {
            if !exponent.is_finite() || exponent <= 0.0 {
                return Err(OwnershipError::BadDegreeLaw {
                    reason: format!("power-law exponent must be positive, got {exponent}"),
                });
            }
            let weights: Vec<f64> = (1..=cap).map(|k| (k as f64).powf(-exponent)).collect();
            let mut cum = Vec::with_capacity(cap);
            let mut acc = 0.0;
            for w in &weights {
                acc += w;
                cum.push(acc);
            }
            for _ in 0..m {
                let u: f64 = rng.gen::<f64>() * acc;
                let idx = cum.partition_point(|&c| c < u).min(cap - 1);
                propensity.push((idx + 1) as f64);
            }
        }
        DegreeLaw::Uniform { lo, hi } => {
            if lo == 0 || hi < lo {
                return Err(OwnershipError::BadDegreeLaw {
                    reason: format!("uniform bounds must satisfy 1 <= lo <= hi, got {lo}..={hi}"),
                });
            }
            for _ in 0..m {
                propensity.push(rng.gen_range(lo..=hi.min(cap).max(lo)) as f64);
            }
        }
    }
    let mut owner_cum = Vec::with_capacity(m);
    let mut acc = 0.0;
    for p in &propensity {
        acc += p;
        owner_cum.push(acc);
    }
    let total_propensity = acc;
    let draw_owner = |rng: &mut rand_chacha::ChaCha12Rng, owner_cum: &[f64]| -> usize {
        let u: f64 = rng.gen::<f64>() * total_propensity;
        owner_cum.partition_point(|&c| c < u).min(m - 1)
    };

    let target = (3 * n).min(n * m);
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(target);
    let mut used: HashSet<(u32, u32)> = HashSet::with_capacity(target * 2);
    // Endpoint bag for preferential item selection: one entry per edge.
    let mut bag: Vec<u32> = Vec::with_capacity(target);

    for item in 0..n {
        let owner = draw_owner(&mut rng, &owner_cum);
        edges.push((owner, item));
        used.insert((owner as u32, item as u32));
        bag.push(item as u32);
    }
    let mut remaining = target.saturating_sub(n);
    let mut attempts_left = 60usize.saturating_mul(remaining.max(1));
    while remaining > 0 && attempts_left > 0 {
        attempts_left -= 1;
        let item = if rng.gen::<f64>() < 0.2 {
            rng.gen_range(0..n)
        } else {
            bag[rng.gen_range(0..bag.len())] as usize
        };
        let owner = draw_owner(&mut rng, &owner_cum);
        if used.insert((owner as u32, item as u32)) {
            edges.push((owner, item));
            bag.push(item as u32);
            remaining -= 1;
        }
    }
    OwnershipGraph::new(m, n, &edges)
}

/// All set partitions of `0..n` as block lists, via restricted growth
/// strings. Blocks are ordered by first element; sizes explode as Bell(n),
/// so callers guard `n`.
pub fn all_set_partitions(n: usize) -> Vec<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let mut assign = vec![0usize; n];
    loop {
        let num_blocks = assign.iter().copied().max().unwrap() + 1;
        let mut blocks = vec![Vec::new(); num_blocks];
        for (item, &b) in assign.iter().enumerate() {
            blocks[b].push(item);
        }
        out.push(blocks);
        // Next restricted growth string.
        let mut pos = n;
        let mut advanced = false;
        while pos > 1 {
            pos -= 1;
            let max_prefix = assign[..pos].iter().copied().max().unwrap();
            if assign[pos] <= max_prefix {
                assign[pos] += 1;
                for q in pos + 1..n {
                    assign[q] = 0;
                }
                advanced = true;
                break;
            }
        }
        if !advanced {
            break;
        }
    }
    out
}

/// Lightweight exact cover check used by tests.
pub fn is_partition_of(blocks: &[Vec<usize>], n: usize) -> bool {
    let mut seen = vec![false; n];
    for b in blocks {
        for &i in b {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
    }
    seen.into_iter().all(|s| s)
}
