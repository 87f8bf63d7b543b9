//! Incentive analysis: expected utilities, best responses, and equilibrium
//! audits for the calibration mechanisms.
//!
//! Owners are modeled as choosing a ranking before the noisy scores
//! realize; the auditor enumerates an owner's report space exhaustively and
//! compares expected utilities, either exactly (averaging over all distinct
//! permutations of an exchangeable noise base) or by seeded Monte Carlo.

use crate::isotonic::{IsotonicError, Ranking, ScoreVector};
use crate::mechanism::{
    calibrate_complete_overlap, calibrate_personalized, calibrate_with_partition,
    naive_ownership_average, MechanismError, OwnerCredentials, PersonalizedParams, ReportProfile,
};
use crate::ownership::{OwnershipGraph, Partition};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

/// Exact expectation enumerates at most this many items' noise permutations.
pub const EXACT_ENUMERATION_CAP: usize = 8;
/// Best-response search enumerates at most this many items' rankings.
pub const FACTORIAL_BUDGET_CAP: usize = 7;
/// Default Monte Carlo draw count.
pub const DEFAULT_MONTE_CARLO_DRAWS: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum IncentiveError {
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Isotonic(#[from] IsotonicError),
    #[error("hinge threshold must be finite, got {value}")]
    BadThreshold { value: f64 },
    #[error("power utility exponent must be finite and at least 1, got {value}")]
    BadUtilityExponent { value: f64 },
    #[error("piecewise-linear utility needs at least one breakpoint")]
    EmptyBreakpoints,
    #[error("piecewise-linear breakpoints must be finite and strictly ascending (index {index})")]
    BreakpointsNotAscending { index: usize },
    #[error("piecewise-linear utility needs one slope per breakpoint: {expected} vs {got}")]
    SlopeCount { expected: usize, got: usize },
    #[error("piecewise-linear slopes must be finite, nonnegative, and nondecreasing (index {index})")]
    SlopesNotConvex { index: usize },
    #[error("noise sigma must be finite and nonnegative, got {value}")]
    BadSigma { value: f64 },
    #[error("noise base has {got} entries for {expected} items")]
    NoiseLength { expected: usize, got: usize },
    #[error("empirical noise model has no sample rows")]
    EmptyEmpirical,
    #[error("noise values must be finite (entry {index})")]
    NonFiniteNoise { index: usize },
    #[error("exact expectation requires an exchangeable noise base")]
    ExactNeedsExchangeable,
    #[error("exact expectation enumerates up to {cap} items, got {n}")]
    ExactTooLarge { n: usize, cap: usize },
    #[error("Monte Carlo expectation needs at least one draw")]
    ZeroDraws,
    #[error("best-response search enumerates up to {cap} owned items, got {scope}")]
    FactorialBudget { scope: usize, cap: usize },
    #[error("majorization check needs equal lengths, got {a} and {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("expected one utility model per owner ({expected}), got {got}")]
    UtilityCount { expected: usize, got: usize },
    #[error("perception noise deviation must be finite and nonnegative, got {value}")]
    BadPerceptionNoise { value: f64 },
    #[error("perceived ranking needs a nonempty scope of distinct items")]
    EmptyPerceptionScope,
}

/// Convex, nondecreasing utility of an adjusted score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilityModel {
    /// max(x − threshold, 0): value only above an acceptance bar.
    Hinge { threshold: f64 },
    /// max(x, 0)^exponent with exponent ≥ 1.
    Power { exponent: f64 },
    /// 0 left of the first breakpoint, then linear pieces with
    /// nondecreasing nonnegative slopes (last slope extends unbounded).
    PiecewiseLinearConvex {
        breakpoints: Vec<f64>,
        slopes: Vec<f64>,
    },
}

impl UtilityModel {
    pub fn validate(&self) -> Result<(), IncentiveError> {
        match self {
            UtilityModel::Hinge { threshold } => {
                if !threshold.is_finite() {
                    return Err(IncentiveError::BadThreshold { value: *threshold });
                }
            }
            UtilityModel::Power { exponent } => {
                if !exponent.is_finite() || *exponent < 1.0 {
                    return Err(IncentiveError::BadUtilityExponent { value: *exponent });
                }
            }
            UtilityModel::PiecewiseLinearConvex { breakpoints, slopes } => {
                if breakpoints.is_empty() {
                    return Err(IncentiveError::EmptyBreakpoints);
                }
                for (index, b) in breakpoints.iter().enumerate() {
                    let ascending = index == 0 || breakpoints[index - 1] < *b;
                    if !b.is_finite() || !ascending {
                        return Err(IncentiveError::BreakpointsNotAscending { index });
                    }
                }
                if slopes.len() != breakpoints.len() {
                    return Err(IncentiveError::SlopeCount {
                        expected: breakpoints.len(),
                        got: slopes.len(),
                    });
                }
                for (index, s) in slopes.iter().enumerate() {
                    let nondecreasing = index == 0 || slopes[index - 1] <= *s;
                    if !s.is_finite() || *s < 0.0 || !nondecreasing {
                        return Err(IncentiveError::SlopesNotConvex { index });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        match self {
            UtilityModel::Hinge { threshold } => (x - threshold).max(0.0),
            UtilityModel::Power { exponent } => x.max(0.0).powf(*exponent),
            UtilityModel::PiecewiseLinearConvex { breakpoints, slopes } => {
                let mut value = 0.0;
                for (k, &b) in breakpoints.iter().enumerate() {
                    if x <= b {
                        break;
                    }
                    let segment_end = breakpoints.get(k + 1).copied().unwrap_or(f64::INFINITY);
                    value += slopes[k] * (x.min(segment_end) - b);
                }
                value
            }
        }
    }
}

/// Score-noise model: noisy observed score = true score + noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// Independent N(0, sigma²) per item.
    IidGaussian { sigma: f64 },
    /// A fixed base vector applied under a uniformly random permutation.
    ExchangeableBase { base: Vec<f64> },
    /// A uniformly random row from recorded noise vectors.
    Empirical { samples: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    #[serde(flatten)]
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseModel {
    pub fn validate(&self, num_items: usize) -> Result<(), IncentiveError> {
        match &self.kind {
            NoiseKind::IidGaussian { sigma } => {
                if !sigma.is_finite() || *sigma < 0.0 {
                    return Err(IncentiveError::BadSigma { value: *sigma });
                }
            }
            NoiseKind::ExchangeableBase { base } => {
                if base.len() != num_items {
                    return Err(IncentiveError::NoiseLength {
                        expected: num_items,
                        got: base.len(),
                    });
                }
                if let Some(index) = base.iter().position(|v| !v.is_finite()) {
                    return Err(IncentiveError::NonFiniteNoise { index });
                }
            }
            NoiseKind::Empirical { samples } => {
                if samples.is_empty() {
                    return Err(IncentiveError::EmptyEmpirical);
                }
                for row in samples {
                    if row.len() != num_items {
                        return Err(IncentiveError::NoiseLength {
                            expected: num_items,
                            got: row.len(),
                        });
                    }
                    if let Some(index) = row.iter().position(|v| !v.is_finite()) {
                        return Err(IncentiveError::NonFiniteNoise { index });
                    }
                }
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha12Rng, num_items: usize) -> Vec<f64> {
        match &self.kind {
            NoiseKind::IidGaussian { sigma } => {
                let normal = Normal::new(0.0, *sigma).expect("validated sigma");
                (0..num_items).map(|_| normal.sample(rng)).collect()
            }
            NoiseKind::ExchangeableBase { base } => {
                let mut z = base.clone();
                z.shuffle(rng);
                z
            }
            NoiseKind::Empirical { samples } => {
                samples[rng.gen_range(0..samples.len())].clone()
            }
        }
    }
}

/// Which calibration rule an audit or expectation runs.
#[derive(Debug, Clone, PartialEq)]
pub enum CalibratorSpec {
    CompleteOverlap { cred: OwnerCredentials },
    NaiveAverage,
    Partition {
        partition: Partition,
        cred: OwnerCredentials,
    },
    Personalized {
        params: PersonalizedParams,
        cred: OwnerCredentials,
    },
}

impl CalibratorSpec {
    pub fn apply(
        &self,
        g: &OwnershipGraph,
        y: &ScoreVector,
        reports: &ReportProfile,
    ) -> Result<ScoreVector, MechanismError> {
        match self {
            CalibratorSpec::CompleteOverlap { cred } => {
                calibrate_complete_overlap(y, reports, cred)
            }
            CalibratorSpec::NaiveAverage => naive_ownership_average(g, y, reports),
            CalibratorSpec::Partition { partition, cred } => {
                calibrate_with_partition(g, partition, y, reports, cred)
            }
            CalibratorSpec::Personalized { params, cred } => {
                calibrate_personalized(g, params, y, reports, cred)
            }
        }
    }

    /// The item set an owner's report must rank under this rule.
    pub fn report_scope(&self, g: &OwnershipGraph, owner: usize) -> Vec<usize> {
        match self {
            CalibratorSpec::CompleteOverlap { .. } => (0..g.num_items()).collect(),
            _ => g.items_of(owner).to_vec(),
        }
    }
}

/// How to take the expectation over noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ExpectationMode {
    /// Enumerate all distinct permutations of the exchangeable noise base
    /// (requires that noise kind and at most 8 items).
    Exact,
    /// Seeded Monte Carlo with this many draws.
    MonteCarlo { draws: usize },
}

impl Default for ExpectationMode {
    fn default() -> Self {
        ExpectationMode::MonteCarlo {
            draws: DEFAULT_MONTE_CARLO_DRAWS,
        }
    }
}

/// An expectation estimate; `std_error` is present for Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub value: f64,
    pub std_error: Option<f64>,
}

/// Advances to the next lexicographic arrangement; returns false after the
/// last one. Enumerates each distinct arrangement of a multiset once.
fn next_permutation(values: &mut [f64]) -> bool {
    let n = values.len();
    if n < 2 {
        return false;
    }
    let Some(k) = (0..n - 1)
        .rev()
        .find(|&k| values[k].total_cmp(&values[k + 1]) == Ordering::Less)
    else {
        return false;
    };
    let l = (k + 1..n)
        .rev()
        .find(|&l| values[k].total_cmp(&values[l]) == Ordering::Less)
        .expect("suffix contains a larger element");
    values.swap(k, l);
    values[k + 1..].reverse();
    true
}

fn owner_utility(
    g: &OwnershipGraph,
    owner: usize,
    u: &UtilityModel,
    adjusted: &ScoreVector,
) -> f64 {
    g.items_of(owner)
        .iter()
        .map(|&i| u.evaluate(adjusted.values()[i]))
        .sum()
}

/// Expected utility of `owner` when everyone reports per `profile` and the
/// observed scores are the true scores plus noise. Exact mode averages over
/// every distinct arrangement of the noise base; Monte Carlo uses draws
/// seeded by the noise model only, so successive calls (for example across
/// an auditor's candidate reports) share draws.
pub fn expected_utility(
    mech: &CalibratorSpec,
    g: &OwnershipGraph,
    r_true: &ScoreVector,
    noise: &NoiseModel,
    profile: &ReportProfile,
    owner: usize,
    u: &UtilityModel,
    mode: ExpectationMode,
) -> Result<Expectation, IncentiveError> {
    let n = g.num_items();
    u.validate()?;
    noise.validate(n)?;
    if r_true.len() != n {
        return Err(MechanismError::ScoreCount {
            expected: n,
            got: r_true.len(),
        }
        .into());
    }
    match mode {
        ExpectationMode::Exact => {
            let NoiseKind::ExchangeableBase { base } = &noise.kind else {
                return Err(IncentiveError::ExactNeedsExchangeable);
            };
            if n > EXACT_ENUMERATION_CAP {
                return Err(IncentiveError::ExactTooLarge {
                    n,
                    cap: EXACT_ENUMERATION_CAP,
                });
            }
            let mut z = base.clone();
            z.sort_by(f64::total_cmp);
            let mut total = 0.0;
            let mut count = 0usize;
            loop {
                let y = ScoreVector::new(
                    r_true.values().iter().zip(&z).map(|(r, zi)| r + zi).collect(),
                )?;
                let adjusted = mech.apply(g, &y, profile)?;
                total += owner_utility(g, owner, u, &adjusted);
                count += 1;
                if !next_permutation(&mut z) {
                    break;
                }
            }
            Ok(Expectation {
                value: total / count as f64,
                std_error: None,
            })
        }
        ExpectationMode::MonteCarlo { draws } => {
            if draws == 0 {
                return Err(IncentiveError::ZeroDraws);
            }
            let mut rng = crate::seed::rng(noise.seed, "expectation-draws", &[]);
            let mut total = 0.0;
            let mut total_sq = 0.0;
            for _ in 0..draws {
                let z = noise.sample(&mut rng, n);
                let y = ScoreVector::new(
                    r_true.values().iter().zip(&z).map(|(r, zi)| r + zi).collect(),
                )?;
                let adjusted = mech.apply(g, &y, profile)?;
                let util = owner_utility(g, owner, u, &adjusted);
                total += util;
                total_sq += util * util;
            }
            let mean = total / draws as f64;
            let std_error = (draws > 1).then(|| {
                let variance =
                    ((total_sq - total * total / draws as f64) / (draws as f64 - 1.0)).max(0.0);
                (variance / draws as f64).sqrt()
            });
            Ok(Expectation {
                value: mean,
                std_error,
            })
        }
    }
}

/// One row of an auditor's utility table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityEntry {
    pub ranking: Ranking,
    pub utility: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
}

/// Outcome of an exhaustive best-response search for one owner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub owner: usize,
    pub truthful_is_best: bool,
    /// Best achievable expected utility minus the best truthful-consistent
    /// one; at least 0 up to floating-point slack.
    pub gap: f64,
    /// All rankings within 1e-12 of the maximum expected utility.
    pub best_reports: Vec<Ranking>,
    /// Expected utility of every candidate ranking, in enumeration order.
    pub utility_table: Vec<UtilityEntry>,
}

const ARGMAX_SLACK: f64 = 1e-12;

fn permutations_of(items: &[usize]) -> Vec<Vec<usize>> {
    let mut result = Vec::new();
    let mut current = items.to_vec();
    let mut stack_size = items.len();
    fn recurse(current: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(current.clone());
            return;
        }
        for i in 0..k {
            current.swap(i, k - 1);
            recurse(current, k - 1, out);
            current.swap(i, k - 1);
        }
    }
    if items.is_empty() {
        return result;
    }
    recurse(&mut current, stack_size, &mut result);
    stack_size = result.len();
    debug_assert_eq!(stack_size, (1..=items.len()).product::<usize>());
    result.sort_unstable();
    result
}

/// Enumerates every ranking of the owner's report scope against fixed
/// reports from the others, and compares expected utilities. Truth-telling
/// wins if some ranking consistent with descending true scores comes
/// within `tolerance` of the maximum.
pub fn best_response(
    mech: &CalibratorSpec,
    g: &OwnershipGraph,
    r_true: &ScoreVector,
    noise: &NoiseModel,
    others: &ReportProfile,
    owner: usize,
    u: &UtilityModel,
    tolerance: f64,
    mode: ExpectationMode,
) -> Result<AuditResult, IncentiveError> {
    let scope = mech.report_scope(g, owner);
    if scope.len() > FACTORIAL_BUDGET_CAP {
        return Err(IncentiveError::FactorialBudget {
            scope: scope.len(),
            cap: FACTORIAL_BUDGET_CAP,
        });
    }
    if scope.is_empty() {
        return Ok(AuditResult {
            owner,
            truthful_is_best: true,
            gap: 0.0,
            best_reports: Vec::new(),
            utility_table: Vec::new(),
        });
    }
    let mut table = Vec::new();
    for order in permutations_of(&scope) {
        let ranking = Ranking::new(order)?;
        let mut profile = others.clone();
        profile.insert(owner, ranking.clone());
        let estimate = expected_utility(mech, g, r_true, noise, &profile, owner, u, mode)?;
        table.push(UtilityEntry {
            ranking,
            utility: estimate.value,
            std_error: estimate.std_error,
        });
    }
    let best = table
        .iter()
        .map(|e| e.utility)
        .fold(f64::NEG_INFINITY, f64::max);
    let best_reports: Vec<Ranking> = table
        .iter()
        .filter(|e| e.utility >= best - ARGMAX_SLACK)
        .map(|e| e.ranking.clone())
        .collect();
    let truthful = Ranking::all_truthful(r_true.values(), &scope)?;
    let truthful_best = table
        .iter()
        .filter(|e| truthful.contains(&e.ranking))
        .map(|e| e.utility)
        .fold(f64::NEG_INFINITY, f64::max);
    let gap = best - truthful_best;
    Ok(AuditResult {
        owner,
        truthful_is_best: gap <= tolerance,
        gap,
        best_reports,
        utility_table: table,
    })
}

/// Runs [`best_response`] for every owner against truthful others. An
/// all-true result certifies truth-telling as a mutual best response on
/// this instance.
pub fn equilibrium_audit(
    mech: &CalibratorSpec,
    g: &OwnershipGraph,
    r_true: &ScoreVector,
    noise: &NoiseModel,
    utilities: &[UtilityModel],
    tolerance: f64,
    mode: ExpectationMode,
) -> Result<Vec<AuditResult>, IncentiveError> {
    if utilities.len() != g.num_owners() {
        return Err(IncentiveError::UtilityCount {
            expected: g.num_owners(),
            got: utilities.len(),
        });
    }
    let truthful = ReportProfile::truthful(g, r_true.values())?;
    let mut results = Vec::with_capacity(g.num_owners());
    for owner in 0..g.num_owners() {
        results.push(best_response(
            mech,
            g,
            r_true,
            noise,
            &truthful,
            owner,
            &utilities[owner],
            tolerance,
            mode,
        )?);
    }
    Ok(results)
}

/// True iff `a` majorizes `b`: equal totals (to 1e-9) and every descending
/// prefix sum of `a` at least that of `b` (to 1e-9).
pub fn check_majorization(a: &ScoreVector, b: &ScoreVector) -> Result<bool, IncentiveError> {
    if a.len() != b.len() {
        return Err(IncentiveError::LengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    const TOL: f64 = 1e-9;
    let mut sa = a.values().to_vec();
    let mut sb = b.values().to_vec();
    sa.sort_by(|x, y| y.total_cmp(x));
    sb.sort_by(|x, y| y.total_cmp(x));
    let mut prefix_a = 0.0;
    let mut prefix_b = 0.0;
    for (x, y) in sa.iter().zip(&sb) {
        prefix_a += x;
        prefix_b += y;
        if prefix_a < prefix_b - TOL {
            return Ok(false);
        }
    }
    Ok((prefix_a - prefix_b).abs() <= TOL)
}

/// Ranks `scope` by true score plus seeded Gaussian perception noise with
/// the given standard deviation; exact ties break by a seeded random key,
/// so reruns with the same seed are identical.
pub fn perceived_ranking(
    r_true: &ScoreVector,
    scope: &[usize],
    noise_sd: f64,
    seed: u64,
) -> Result<Ranking, IncentiveError> {
    if !noise_sd.is_finite() || noise_sd < 0.0 {
        return Err(IncentiveError::BadPerceptionNoise { value: noise_sd });
    }
    if scope.is_empty() {
        return Err(IncentiveError::EmptyPerceptionScope);
    }
    let mut items = scope.to_vec();
    items.sort_unstable();
    items.dedup();
    if items.len() != scope.len() {
        return Err(IncentiveError::EmptyPerceptionScope);
    }
    let mut rng = crate::seed::rng(seed, "perceived-ranking", &[]);
    let normal = Normal::new(0.0, noise_sd).expect("validated sd");
    let mut keyed: Vec<(f64, u64, usize)> = items
        .iter()
        .map(|&item| {
            let perceived = r_true.values()[item] + normal.sample(&mut rng);
            (perceived, rng.gen::<u64>(), item)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(Ranking::new(keyed.into_iter().map(|(_, _, item)| item).collect())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::FillPolicy;

    fn sv(v: &[f64]) -> ScoreVector {
        ScoreVector::new(v.to_vec()).unwrap()
    }

    fn complete_overlap_graph(m: usize, n: usize) -> OwnershipGraph {
        let sets: Vec<Vec<usize>> = (0..m).map(|_| (0..n).collect()).collect();
        OwnershipGraph::from_owner_sets(&sets, n).unwrap()
    }

    #[test]
    fn utility_model_values() {
        let hinge = UtilityModel::Hinge { threshold: 5.0 };
        assert_eq!(hinge.evaluate(7.0), 2.0);
        assert_eq!(hinge.evaluate(4.0), 0.0);
        let power = UtilityModel::Power { exponent: 2.0 };
        assert_eq!(power.evaluate(3.0), 9.0);
        assert_eq!(power.evaluate(-1.0), 0.0);
        let plc = UtilityModel::PiecewiseLinearConvex {
            breakpoints: vec![0.0, 1.0],
            slopes: vec![1.0, 2.0],
        };
        assert_eq!(plc.evaluate(-1.0), 0.0);
        assert_eq!(plc.evaluate(0.5), 0.5);
        assert_eq!(plc.evaluate(2.0), 3.0);
    }

    #[test]
    fn utility_model_validation() {
        assert!(UtilityModel::Hinge { threshold: 5.0 }.validate().is_ok());
        assert!(matches!(
            UtilityModel::Power { exponent: 0.5 }.validate(),
            Err(IncentiveError::BadUtilityExponent { .. })
        ));
        assert!(matches!(
            UtilityModel::PiecewiseLinearConvex {
                breakpoints: vec![1.0, 0.0],
                slopes: vec![1.0, 2.0],
            }
            .validate(),
            Err(IncentiveError::BreakpointsNotAscending { index: 1 })
        ));
        assert!(matches!(
            UtilityModel::PiecewiseLinearConvex {
                breakpoints: vec![0.0, 1.0],
                slopes: vec![2.0, 1.0],
            }
            .validate(),
            Err(IncentiveError::SlopesNotConvex { index: 1 })
        ));
    }

    #[test]
    fn next_permutation_enumerates_distinct_multiset_arrangements() {
        let mut z = vec![2.0, 2.0, 4.0];
        let mut seen = vec![z.clone()];
        while next_permutation(&mut z) {
            seen.push(z.clone());
        }
        assert_eq!(
            seen,
            vec![
                vec![2.0, 2.0, 4.0],
                vec![2.0, 4.0, 2.0],
                vec![4.0, 2.0, 2.0],
            ]
        );
    }

    /// Two owners share three items; owner 0 is locked to the ranking
    /// (2,0,1) and owner 1 is audited under hinge(6.25) with noise base
    /// (2,2,4) and half credentials each.
    fn forced_misreport_instance() -> (
        CalibratorSpec,
        OwnershipGraph,
        ScoreVector,
        NoiseModel,
        ReportProfile,
        UtilityModel,
    ) {
        let g = complete_overlap_graph(2, 3);
        let r = sv(&[7.0, 4.0, 3.0]);
        let noise = NoiseModel {
            kind: NoiseKind::ExchangeableBase {
                base: vec![2.0, 2.0, 4.0],
            },
            seed: 7,
        };
        let mut others = ReportProfile::new(FillPolicy::Reject);
        others.insert(0, Ranking::new(vec![2, 0, 1]).unwrap());
        let mech = CalibratorSpec::CompleteOverlap {
            cred: OwnerCredentials::new(vec![0.5, 0.5]).unwrap(),
        };
        let u = UtilityModel::Hinge { threshold: 6.25 };
        (mech, g, r, noise, others, u)
    }

    #[test]
    fn exact_expected_utility_on_forced_misreport_instance() {
        let (mech, g, r, noise, others, u) = forced_misreport_instance();
        let mut truthful_profile = others.clone();
        truthful_profile.insert(1, Ranking::new(vec![0, 1, 2]).unwrap());
        let truthful = expected_utility(
            &mech,
            &g,
            &r,
            &noise,
            &truthful_profile,
            1,
            &u,
            ExpectationMode::Exact,
        )
        .unwrap();
        assert!((truthful.value - 121.0 / 36.0).abs() < 1e-12);

        let mut deviating_profile = others;
        deviating_profile.insert(1, Ranking::new(vec![0, 2, 1]).unwrap());
        let deviating = expected_utility(
            &mech,
            &g,
            &r,
            &noise,
            &deviating_profile,
            1,
            &u,
            ExpectationMode::Exact,
        )
        .unwrap();
        assert!((deviating.value - 3.5).abs() < 1e-12);
    }

    #[test]
    fn best_response_finds_the_profitable_swap() {
        let (mech, g, r, noise, others, u) = forced_misreport_instance();
        let audit = best_response(
            &mech,
            &g,
            &r,
            &noise,
            &others,
            1,
            &u,
            1e-6,
            ExpectationMode::Exact,
        )
        .unwrap();
        assert!(!audit.truthful_is_best);
        assert!((audit.gap - 5.0 / 36.0).abs() < 1e-9);
        assert!(audit
            .best_reports
            .iter()
            .any(|rk| rk.order() == [0, 2, 1]));
        assert_eq!(audit.utility_table.len(), 6);
    }

    fn chain_graph() -> OwnershipGraph {
        OwnershipGraph::from_owner_sets(&[vec![0, 1], vec![0, 1], vec![1, 2]], 3).unwrap()
    }

    fn noiseless(n: usize) -> NoiseModel {
        NoiseModel {
            kind: NoiseKind::ExchangeableBase { base: vec![0.0; n] },
            seed: 0,
        }
    }

    #[test]
    fn naive_average_audit_reports_the_gap() {
        let g = chain_graph();
        let r = sv(&[9.0, 8.0, 4.0]);
        let u = UtilityModel::Hinge { threshold: 5.0 };
        let others = ReportProfile::truthful(&g, r.values()).unwrap();
        let audit = best_response(
            &CalibratorSpec::NaiveAverage,
            &g,
            &r,
            &noiseless(3),
            &others,
            2,
            &u,
            1e-9,
            ExpectationMode::Exact,
        )
        .unwrap();
        assert!(!audit.truthful_is_best);
        assert!((audit.gap - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(audit.best_reports.len(), 1);
        assert_eq!(audit.best_reports[0].order(), [2, 1]);
    }

    #[test]
    fn partition_mechanism_audit_is_clean() {
        let g = chain_graph();
        let r = sv(&[9.0, 8.0, 4.0]);
        let partition = Partition::new(&g, vec![vec![0, 1], vec![2]]).unwrap();
        let mech = CalibratorSpec::Partition {
            partition,
            cred: OwnerCredentials::uniform(3),
        };
        let utilities = vec![UtilityModel::Hinge { threshold: 5.0 }; 3];
        let audits = equilibrium_audit(
            &mech,
            &g,
            &r,
            &noiseless(3),
            &utilities,
            1e-9,
            ExpectationMode::Exact,
        )
        .unwrap();
        assert!(audits.iter().all(|a| a.truthful_is_best));
        assert!(audits.iter().all(|a| a.gap.abs() <= 1e-12));
    }

    #[test]
    fn complete_overlap_exact_audit_is_truthful() {
        let g = complete_overlap_graph(2, 3);
        let r = sv(&[6.0, 4.0, 1.0]);
        let noise = NoiseModel {
            kind: NoiseKind::ExchangeableBase {
                base: vec![-1.0, 0.5, 2.0],
            },
            seed: 0,
        };
        let mech = CalibratorSpec::CompleteOverlap {
            cred: OwnerCredentials::uniform(2),
        };
        let utilities = vec![
            UtilityModel::Hinge { threshold: 3.0 },
            UtilityModel::Hinge { threshold: 4.5 },
        ];
        let audits =
            equilibrium_audit(&mech, &g, &r, &noise, &utilities, 1e-9, ExpectationMode::Exact)
                .unwrap();
        assert!(audits.iter().all(|a| a.truthful_is_best));
        assert!(audits.iter().all(|a| a.gap >= -1e-9));
    }

    #[test]
    fn noiseless_truthful_complete_overlap_returns_true_scores() {
        let g = complete_overlap_graph(2, 3);
        let r = sv(&[6.0, 4.0, 1.0]);
        let mech = CalibratorSpec::CompleteOverlap {
            cred: OwnerCredentials::uniform(2),
        };
        let profile = ReportProfile::truthful(&g, r.values()).unwrap();
        let u = UtilityModel::Hinge { threshold: 0.0 };
        let exp = expected_utility(
            &mech,
            &g,
            &r,
            &noiseless(3),
            &profile,
            0,
            &u,
            ExpectationMode::Exact,
        )
        .unwrap();
        assert!((exp.value - 11.0).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_matches_exact_within_three_stderr() {
        let g = complete_overlap_graph(2, 3);
        let r = sv(&[5.0, 3.0, 2.0]);
        let noise = NoiseModel {
            kind: NoiseKind::ExchangeableBase {
                base: vec![1.0, -0.5, 0.25],
            },
            seed: 42,
        };
        let mech = CalibratorSpec::CompleteOverlap {
            cred: OwnerCredentials::uniform(2),
        };
        let profile = ReportProfile::truthful(&g, r.values()).unwrap();
        let u = UtilityModel::Hinge { threshold: 2.5 };
        let exact = expected_utility(
            &mech, &g, &r, &noise, &profile, 0, &u, ExpectationMode::Exact,
        )
        .unwrap();
        let mc = expected_utility(
            &mech,
            &g,
            &r,
            &noise,
            &profile,
            0,
            &u,
            ExpectationMode::MonteCarlo { draws: 20_000 },
        )
        .unwrap();
        let stderr = mc.std_error.unwrap();
        assert!((mc.value - exact.value).abs() <= 3.0 * stderr.max(1e-9));
    }

    #[test]
    fn exact_mode_refusals() {
        let g = complete_overlap_graph(1, 9);
        let r = sv(&[0.0; 9]);
        let noise = NoiseModel {
            kind: NoiseKind::ExchangeableBase { base: vec![0.0; 9] },
            seed: 0,
        };
        let mech = CalibratorSpec::CompleteOverlap {
            cred: OwnerCredentials::uniform(1),
        };
        let profile = ReportProfile::truthful(&g, r.values()).unwrap();
        let u = UtilityModel::Hinge { threshold: 0.0 };
        assert!(matches!(
            expected_utility(&mech, &g, &r, &noise, &profile, 0, &u, ExpectationMode::Exact),
            Err(IncentiveError::ExactTooLarge { n: 9, cap: 8 })
        ));
        let g3 = complete_overlap_graph(1, 3);
        let r3 = sv(&[1.0, 2.0, 3.0]);
        let gaussian = NoiseModel {
            kind: NoiseKind::IidGaussian { sigma: 1.0 },
            seed: 0,
        };
        let profile3 = ReportProfile::truthful(&g3, r3.values()).unwrap();
        assert!(matches!(
            expected_utility(
                &mech, &g3, &r3, &gaussian, &profile3, 0, &u, ExpectationMode::Exact
            ),
            Err(IncentiveError::ExactNeedsExchangeable)
        ));
    }

    #[test]
    fn payoff_dominance_on_a_small_complete_overlap_instance() {
        // Every pure profile gives every owner at most the truthful
        // profile's expected utility.
        let g = complete_overlap_graph(2, 3);
        let r = sv(&[4.0, 2.5, 1.0]);
        let noise = NoiseModel {
            kind: NoiseKind::ExchangeableBase {
                base: vec![0.5, -0.5, 1.5],
            },
            seed: 0,
        };
        let mech = CalibratorSpec::CompleteOverlap {
            cred: OwnerCredentials::uniform(2),
        };
        let utilities = [
            UtilityModel::Hinge { threshold: 1.0 },
            UtilityModel::Hinge { threshold: 2.0 },
        ];
        let truthful = ReportProfile::truthful(&g, r.values()).unwrap();
        let mut truthful_value = [0.0; 2];
        for owner in 0..2 {
            truthful_value[owner] = expected_utility(
                &mech,
                &g,
                &r,
                &noise,
                &truthful,
                owner,
                &utilities[owner],
                ExpectationMode::Exact,
            )
            .unwrap()
            .value;
        }
        let orders = permutations_of(&[0, 1, 2]);
        for a in &orders {
            for b in &orders {
                let mut profile = ReportProfile::new(FillPolicy::Reject);
                profile.insert(0, Ranking::new(a.clone()).unwrap());
                profile.insert(1, Ranking::new(b.clone()).unwrap());
                for owner in 0..2 {
                    let v = expected_utility(
                        &mech,
                        &g,
                        &r,
                        &noise,
                        &profile,
                        owner,
                        &utilities[owner],
                        ExpectationMode::Exact,
                    )
                    .unwrap()
                    .value;
                    assert!(v <= truthful_value[owner] + 1e-9);
                }
            }
        }
    }

    #[test]
    fn majorization_examples() {
        let a = sv(&[3.0, 1.0, 0.0]);
        let b = sv(&[2.0, 1.0, 1.0]);
        assert!(check_majorization(&a, &a).unwrap());
        assert!(check_majorization(&a, &b).unwrap());
        assert!(!check_majorization(&b, &a).unwrap());
        let c = sv(&[2.0, 2.0]);
        let d = sv(&[3.0, 1.0]);
        assert!(!check_majorization(&c, &d).unwrap());
        assert!(check_majorization(&d, &c).unwrap());
        assert!(matches!(
            check_majorization(&a, &c),
            Err(IncentiveError::LengthMismatch { a: 3, b: 2 })
        ));
    }

    #[test]
    fn shuffled_sum_is_majorized_by_aligned_sum() {
        // Sorted a plus sorted b majorizes sorted a plus any permutation
        // of sorted b.
        let mut rng = crate::seed::rng(5, "majorization-desk", &[]);
        for _ in 0..200 {
            let n = rng.gen_range(2..=6);
            let mut a: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let mut b: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            a.sort_by(|x, y| y.total_cmp(x));
            b.sort_by(|x, y| y.total_cmp(x));
            let aligned: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let mut shuffled = b.clone();
            shuffled.shuffle(&mut rng);
            let crossed: Vec<f64> = a.iter().zip(&shuffled).map(|(x, y)| x + y).collect();
            assert!(check_majorization(&sv(&aligned), &sv(&crossed)).unwrap());
        }
    }

    #[test]
    fn perceived_ranking_behaviour() {
        let r = sv(&[9.0, 8.0, 4.0]);
        let exact = perceived_ranking(&r, &[0, 1, 2], 0.0, 17).unwrap();
        assert_eq!(exact.order(), [0, 1, 2]);
        let tied = sv(&[5.0, 5.0, 5.0]);
        let once = perceived_ranking(&tied, &[0, 1, 2], 0.0, 3).unwrap();
        let twice = perceived_ranking(&tied, &[0, 1, 2], 0.0, 3).unwrap();
        assert_eq!(once, twice);
        let distinct: std::collections::BTreeSet<Vec<usize>> = (0..50)
            .map(|s| {
                perceived_ranking(&tied, &[0, 1, 2], 0.0, s)
                    .unwrap()
                    .order()
                    .to_vec()
            })
            .collect();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn perceived_flip_rate_is_small_at_wide_gap() {
        let r = sv(&[10.0, 0.0]);
        let flips = (0..10_000u64)
            .filter(|&s| {
                perceived_ranking(&r, &[0, 1], 2.0, s).unwrap().order() != [0, 1]
            })
            .count();
        assert!((flips as f64) / 10_000.0 < 0.01, "flip rate {flips}/10000");
    }

    #[test]
    fn single_item_owner_is_trivially_truthful() {
        let g = OwnershipGraph::from_owner_sets(&[vec![0], vec![0, 1]], 2).unwrap();
        let r = sv(&[2.0, 1.0]);
        let others = ReportProfile::truthful(&g, r.values()).unwrap();
        let audit = best_response(
            &CalibratorSpec::NaiveAverage,
            &g,
            &r,
            &noiseless(2),
            &others,
            0,
            &UtilityModel::Hinge { threshold: 0.0 },
            1e-9,
            ExpectationMode::Exact,
        )
        .unwrap();
        assert!(audit.truthful_is_best);
        assert_eq!(audit.utility_table.len(), 1);
    }

    #[test]
    fn factorial_budget_refusal() {
        let g = complete_overlap_graph(1, 8);
        let r = sv(&[0.0; 8]);
        let others = ReportProfile::new(FillPolicy::Reject);
        assert!(matches!(
            best_response(
                &CalibratorSpec::CompleteOverlap {
                    cred: OwnerCredentials::uniform(1)
                },
                &g,
                &r,
                &noiseless(8),
                &others,
                0,
                &UtilityModel::Hinge { threshold: 0.0 },
                1e-9,
                ExpectationMode::Exact,
            ),
            Err(IncentiveError::FactorialBudget { scope: 8, cap: 7 })
        ));
    }

    #[test]
    fn monte_carlo_is_deterministic_across_calls() {
        let g = chain_graph();
        let r = sv(&[3.0, 2.0, 1.0]);
        let noise = NoiseModel {
            kind: NoiseKind::IidGaussian { sigma: 1.0 },
            seed: 99,
        };
        let profile = ReportProfile::truthful(&g, r.values()).unwrap();
        let u = UtilityModel::Hinge { threshold: 1.0 };
        let run = || {
            expected_utility(
                &CalibratorSpec::NaiveAverage,
                &g,
                &r,
                &noise,
                &profile,
                0,
                &u,
                ExpectationMode::MonteCarlo { draws: 500 },
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }
}
