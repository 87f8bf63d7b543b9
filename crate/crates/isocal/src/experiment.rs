//! End-to-end simulation pipelines: conference-style calibration runs,
//! the block-size/perception-noise tradeoff sweep on the ternary tree, and
//! partition-objective benchmarks.
//!
//! Everything is seeded and single-threaded; identical configs produce
//! byte-identical reports.

use crate::incentive::{perceived_ranking, IncentiveError};
use crate::isotonic::{IsotonicError, ScoreVector};
use crate::mechanism::{
    calibrate_with_partition, MechanismError, OwnerCredentials, ReportProfile,
};
use crate::ownership::{
    gen_random_conference, gen_ternary_tree, gen_tightness_family, DegreeLaw, OwnershipError,
    OwnershipGraph, Partition, DEFAULT_REDUCTION_BUDGET,
};
use crate::partition::{
    brute_force_optimal, greedy_partition_l, random_partition, PartitionError,
    PartitionObjectiveReport, SizeObjective,
};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Deepest ternary tree the tradeoff sweep will build.
pub const MAX_TRADEOFF_DEPTH: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Ownership(#[from] OwnershipError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Incentive(#[from] IncentiveError),
    #[error(transparent)]
    Isotonic(#[from] IsotonicError),
    #[error("experiments need at least one trial")]
    NoTrials,
    #[error("noise sigma must be finite and nonnegative, got {value}")]
    BadSigma { value: f64 },
    #[error("score model needs finite mean and nonnegative finite deviation, got {mean}/{sd}")]
    BadScoreModel { mean: f64, sd: f64 },
    #[error("top percent must lie in (0, 100], got {value}")]
    BadTopPercent { value: f64 },
    #[error("top {percent}% of {n} items rounds to an empty acceptance window")]
    AcceptWindowEmpty { percent: f64, n: usize },
    #[error("score vectors differ in length: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("a fixed partition method was requested but none was supplied")]
    MissingFixedPartition,
    #[error("no partition method configured")]
    NoMethods,
    #[error("ingested scores have {got} entries but the graph has {expected} items")]
    ScoreCount { expected: usize, got: usize },
    #[error("tree tradeoff supports depth 1..={max}, got {depth}")]
    BadTradeoffDepth { depth: usize, max: usize },
    #[error("tree tradeoff needs nonempty sigma and perception lists")]
    EmptySweep,
}

/// How the ownership graph is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum GraphSpec {
    /// Random conference-style graph with a heavy-tailed owner propensity.
    Conference {
        num_items: usize,
        num_owners: usize,
        #[serde(default)]
        law: DegreeLaw,
    },
    /// Full ternary tree: internal nodes own the leaves below them.
    Tree { depth: usize },
    /// Worst-case family for the greedy guarantee.
    Tightness {
        base_owners: usize,
        extra_levels: usize,
        items_per_owner: usize,
    },
}

impl GraphSpec {
    pub fn build(&self, seed: u64) -> Result<OwnershipGraph, OwnershipError> {
        match *self {
            GraphSpec::Conference {
                num_items,
                num_owners,
                ref law,
            } => gen_random_conference(
                num_items,
                num_owners,
                law.clone(),
                crate::seed::derive(seed, "experiment-graph", &[]),
            ),
            GraphSpec::Tree { depth } => gen_ternary_tree(depth),
            GraphSpec::Tightness {
                base_owners,
                extra_levels,
                items_per_owner,
            } => gen_tightness_family(base_owners, extra_levels, items_per_owner),
        }
    }
}

/// Which partition each calibrated method uses. The raw-score baseline is
/// always reported alongside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMethodSpec {
    Greedy,
    Random,
    BruteForce,
    /// A caller-supplied partition (see `run_conference_study_on`).
    Fixed,
}

impl PartitionMethodSpec {
    pub fn name(self) -> &'static str {
        match self {
            PartitionMethodSpec::Greedy => "greedy",
            PartitionMethodSpec::Random => "random",
            PartitionMethodSpec::BruteForce => "bruteforce",
            PartitionMethodSpec::Fixed => "fixed",
        }
    }
}

fn default_methods() -> Vec<PartitionMethodSpec> {
    vec![PartitionMethodSpec::Greedy, PartitionMethodSpec::Random]
}

fn default_graph() -> GraphSpec {
    GraphSpec::Conference {
        num_items: 3000,
        num_owners: 9000,
        law: DegreeLaw::default(),
    }
}

fn default_sigma() -> f64 {
    2.0
}

fn default_trials() -> usize {
    30
}

fn default_top_percents() -> Vec<f64> {
    vec![30.0]
}

fn default_score_mean() -> f64 {
    5.0
}

fn default_score_sd() -> f64 {
    1.5
}

fn default_strong() -> usize {
    1
}

/// Full description of a conference-style calibration study.
///
/// Per trial, true scores are drawn (or recovered from ingested observed
/// scores), observed scores are true plus N(0, sigma²) noise, owners report
/// rankings of their own items — truthful, or perturbed by Gaussian
/// perception noise with deviation `perception_sd` — and each configured
/// partition method is calibrated and scored against the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSpec,
    pub noise_sigma: f64,
    /// Standard deviation of per-(owner, item) ranking perception noise;
    /// absent means owners rank truthfully.
    pub perception_sd: Option<f64>,
    pub partition_methods: Vec<PartitionMethodSpec>,
    /// Required common-owner count per multi-item block for greedy and
    /// brute-force partitions.
    pub strong_l: usize,
    pub trials: usize,
    pub seed: u64,
    /// Acceptance windows (percent of items) for overlap accuracy.
    pub top_percents: Vec<f64>,
    /// Synthetic true scores are N(score_mean, score_sd²).
    pub score_mean: f64,
    pub score_sd: f64,
    /// Objective used by the brute-force partition method.
    pub objective: SizeObjective,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            graph: default_graph(),
            noise_sigma: default_sigma(),
            perception_sd: None,
            partition_methods: default_methods(),
            strong_l: default_strong(),
            trials: default_trials(),
            seed: 0,
            top_percents: default_top_percents(),
            score_mean: default_score_mean(),
            score_sd: default_score_sd(),
            objective: SizeObjective::Comparison,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.trials == 0 {
            return Err(ExperimentError::NoTrials);
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(ExperimentError::BadSigma {
                value: self.noise_sigma,
            });
        }
        if let Some(sd) = self.perception_sd {
            if !sd.is_finite() || sd < 0.0 {
                return Err(ExperimentError::BadSigma { value: sd });
            }
        }
        if !self.score_mean.is_finite() || !self.score_sd.is_finite() || self.score_sd < 0.0 {
            return Err(ExperimentError::BadScoreModel {
                mean: self.score_mean,
                sd: self.score_sd,
            });
        }
        if self.partition_methods.is_empty() {
            return Err(ExperimentError::NoMethods);
        }
        for &p in &self.top_percents {
            if !p.is_finite() || p <= 0.0 || p > 100.0 {
                return Err(ExperimentError::BadTopPercent { value: p });
            }
        }
        Ok(())
    }
}

/// Mean and standard error over trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std_error: f64,
}

impl Stat {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std_error }
    }
}

/// One trial × method outcome; `pct_change` is relative to the same
/// trial's raw-score baseline and is absent on the baseline row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub method: String,
    pub mse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pct_change: Option<f64>,
    pub accept_accuracy: BTreeMap<String, f64>,
}

/// Aggregated study results plus the flat per-trial table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: ExperimentConfig,
    pub num_items: usize,
    pub num_owners: usize,
    pub num_edges: usize,
    /// Mean squared error versus the true scores, per method
    /// ("baseline" = raw observed scores).
    pub mse_per_method: BTreeMap<String, Stat>,
    /// Per-trial (method − baseline)/baseline, aggregated; one entry per
    /// calibrated method.
    pub pct_change_vs_baseline: BTreeMap<String, Stat>,
    /// method → top-percent label → overlap accuracy with the true top set.
    pub accept_accuracy: BTreeMap<String, BTreeMap<String, Stat>>,
    pub trial_rows: Vec<TrialRow>,
}

fn percent_label(p: f64) -> String {
    format!("{p}")
}

/// Fraction of the truly-top `top_percent` items recovered by the
/// estimate's top set of the same size. Ties order by (score, item id)
/// descending, so results are deterministic.
pub fn accept_accuracy(
    r_true: &ScoreVector,
    r_hat: &ScoreVector,
    top_percent: f64,
) -> Result<f64, ExperimentError> {
    if !top_percent.is_finite() || top_percent <= 0.0 || top_percent > 100.0 {
        return Err(ExperimentError::BadTopPercent { value: top_percent });
    }
    let n = r_true.len();
    if r_hat.len() != n {
        return Err(ExperimentError::LengthMismatch {
            a: n,
            b: r_hat.len(),
        });
    }
    let k = (n as f64 * top_percent / 100.0).round() as usize;
    if k == 0 {
        return Err(ExperimentError::AcceptWindowEmpty {
            percent: top_percent,
            n,
        });
    }
    let top_set = |scores: &[f64]| -> std::collections::BTreeSet<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(b.cmp(&a)));
        idx.into_iter().take(k).collect()
    };
    let truth = top_set(r_true.values());
    let guess = top_set(r_hat.values());
    Ok(truth.intersection(&guess).count() as f64 / k as f64)
}

fn mse(r_true: &[f64], r_hat: &[f64]) -> f64 {
    r_true
        .iter()
        .zip(r_hat)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / r_true.len() as f64
}

fn build_partition(
    method: PartitionMethodSpec,
    g: &OwnershipGraph,
    cfg: &ExperimentConfig,
    fixed: Option<&Partition>,
) -> Result<Partition, ExperimentError> {
    match method {
        PartitionMethodSpec::Greedy => Ok(greedy_partition_l(
            g,
            cfg.strong_l,
            DEFAULT_REDUCTION_BUDGET,
        )?),
        PartitionMethodSpec::Random => Ok(random_partition(
            g,
            crate::seed::derive(cfg.seed, "random-partition", &[]),
        )),
        PartitionMethodSpec::BruteForce => {
            Ok(brute_force_optimal(g, &cfg.objective, cfg.strong_l)?)
        }
        PartitionMethodSpec::Fixed => fixed
            .cloned()
            .ok_or(ExperimentError::MissingFixedPartition),
    }
}

/// Runs the study on a graph built from the config.
pub fn run_conference_study(cfg: &ExperimentConfig) -> Result<MetricsReport, ExperimentError> {
    cfg.validate()?;
    let g = cfg.graph.build(cfg.seed)?;
    run_conference_study_on(cfg, &g, None, None)
}

/// Runs the study on a prebuilt graph. With `observed` the recorded scores
/// are treated as the noisy observation and per-trial true scores are
/// recovered as observed − noise; otherwise true scores are synthesized
/// from the config's score model. `fixed` supplies the partition for the
/// `fixed` method.
pub fn run_conference_study_on(
    cfg: &ExperimentConfig,
    g: &OwnershipGraph,
    observed: Option<&ScoreVector>,
    fixed: Option<&Partition>,
) -> Result<MetricsReport, ExperimentError> {
    cfg.validate()?;
    let n = g.num_items();
    if let Some(y) = observed {
        if y.len() != n {
            return Err(ExperimentError::ScoreCount {
                expected: n,
                got: y.len(),
            });
        }
    }
    let mut partitions: Vec<(String, Partition)> = Vec::new();
    for &method in &cfg.partition_methods {
        partitions.push((
            method.name().to_string(),
            build_partition(method, g, cfg, fixed)?,
        ));
    }
    let cred = OwnerCredentials::uniform(g.num_owners());
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
    let score_model = Normal::new(cfg.score_mean, cfg.score_sd).expect("validated score model");

    let mut rows = Vec::new();
    let mut per_method_mse: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut per_method_pct: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut per_method_acc: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();

    for trial in 0..cfg.trials {
        let mut noise_rng = crate::seed::rng(cfg.seed, "trial-noise", &[trial as u64]);
        let z: Vec<f64> = (0..n).map(|_| noise.sample(&mut noise_rng)).collect();
        let (r_true, y) = match observed {
            Some(y) => {
                let r: Vec<f64> = y.values().iter().zip(&z).map(|(yi, zi)| yi - zi).collect();
                (ScoreVector::new(r)?, y.clone())
            }
            None => {
                let mut score_rng =
                    crate::seed::rng(cfg.seed, "trial-scores", &[trial as u64]);
                let r: Vec<f64> = (0..n).map(|_| score_model.sample(&mut score_rng)).collect();
                let y: Vec<f64> = r.iter().zip(&z).map(|(ri, zi)| ri + zi).collect();
                (ScoreVector::new(r)?, ScoreVector::new(y)?)
            }
        };

        let reports = match cfg.perception_sd {
            None => ReportProfile::truthful(g, r_true.values())?,
            Some(sd) => {
                let mut profile = ReportProfile::truthful(g, r_true.values())?;
                for owner in 0..g.num_owners() {
                    let scope = g.items_of(owner);
                    if scope.is_empty() {
                        continue;
                    }
                    profile.insert(
                        owner,
                        perceived_ranking(
                            &r_true,
                            scope,
                            sd,
                            crate::seed::derive(
                                cfg.seed,
                                "trial-perception",
                                &[trial as u64, owner as u64],
                            ),
                        )?,
                    );
                }
                profile
            }
        };

        let baseline_mse = mse(r_true.values(), y.values());
        let mut record = |method: &str,
                          estimate: &ScoreVector,
                          pct: Option<f64>|
         -> Result<(), ExperimentError> {
            let m = mse(r_true.values(), estimate.values());
            let mut acc = BTreeMap::new();
            for &p in &cfg.top_percents {
                acc.insert(percent_label(p), accept_accuracy(&r_true, estimate, p)?);
            }
            per_method_mse.entry(method.to_string()).or_default().push(m);
            if let Some(pc) = pct {
                per_method_pct
                    .entry(method.to_string())
                    .or_default()
                    .push(pc);
            }
            for (label, v) in &acc {
                per_method_acc
                    .entry(method.to_string())
                    .or_default()
                    .entry(label.clone())
                    .or_default()
                    .push(*v);
            }
            rows.push(TrialRow {
                trial,
                method: method.to_string(),
                mse: m,
                pct_change: pct,
                accept_accuracy: acc,
            });
            Ok(())
        };

        record("baseline", &y, None)?;
        for (name, partition) in &partitions {
            let estimate = calibrate_with_partition(g, partition, &y, &reports, &cred)?;
            let m = mse(r_true.values(), estimate.values());
            let pct = if baseline_mse > 0.0 {
                (m - baseline_mse) / baseline_mse
            } else {
                0.0
            };
            record(name, &estimate, Some(pct))?;
        }
    }

    let collapse = |data: BTreeMap<String, Vec<f64>>| -> BTreeMap<String, Stat> {
        data.into_iter()
            .map(|(k, v)| (k, Stat::from_samples(&v)))
            .collect()
    };
    Ok(MetricsReport {
        config: cfg.clone(),
        num_items: n,
        num_owners: g.num_owners(),
        num_edges: g.num_edges(),
        mse_per_method: collapse(per_method_mse),
        pct_change_vs_baseline: collapse(per_method_pct),
        accept_accuracy: per_method_acc
            .into_iter()
            .map(|(k, inner)| (k, collapse(inner)))
            .collect(),
        trial_rows: rows,
    })
}

/// One sweep point of the tree tradeoff: a (noise, perception, block-level)
/// cell with its per-trial errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCell {
    pub sigma: f64,
    pub perception_sd: f64,
    /// Partition level: blocks are the leaf sets under each depth
    /// (level − 1) node, so level 1 is the single root block.
    pub level: usize,
    pub mse: Stat,
    pub per_trial: Vec<f64>,
}

/// Results of the block-size/perception-noise sweep on the ternary tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffReport {
    pub depth: usize,
    pub trials: usize,
    pub seed: u64,
    pub score_mean: f64,
    pub score_sd: f64,
    pub cells: Vec<TradeoffCell>,
}

impl TradeoffReport {
    /// The level with the lowest mean error at a sweep point.
    pub fn argmin_level(&self, sigma: f64, perception_sd: f64) -> Option<usize> {
        self.cells
            .iter()
            .filter(|c| c.sigma == sigma && c.perception_sd == perception_sd)
            .min_by(|a, b| a.mse.mean.total_cmp(&b.mse.mean))
            .map(|c| c.level)
    }
}

/// Leaf blocks under each node at tree depth `level − 1`.
pub fn tree_level_partition(
    g: &OwnershipGraph,
    level: usize,
) -> Result<Partition, ExperimentError> {
    // Internal nodes are numbered level by level: depth d occupies
    // [(3^d − 1)/2, (3^(d+1) − 1)/2).
    let depth_start = (3usize.pow(level as u32 - 1) - 1) / 2;
    let count = 3usize.pow(level as u32 - 1);
    let blocks: Vec<Vec<usize>> = (depth_start..depth_start + count)
        .map(|owner| g.items_of(owner).to_vec())
        .collect();
    Ok(Partition::new(g, blocks)?)
}

/// Sweeps observation noise, perception noise, and partition level on a
/// ternary tree of the given depth. Per (sigma, perception, trial) a
/// single report profile is drawn and shared across all levels, so levels
/// are compared on identical inputs.
pub fn run_tree_tradeoff(
    depth: usize,
    sigma_list: &[f64],
    perception_list: &[f64],
    trials: usize,
    seed: u64,
) -> Result<TradeoffReport, ExperimentError> {
    if depth == 0 || depth > MAX_TRADEOFF_DEPTH {
        return Err(ExperimentError::BadTradeoffDepth {
            depth,
            max: MAX_TRADEOFF_DEPTH,
        });
    }
    if trials == 0 {
        return Err(ExperimentError::NoTrials);
    }
    if sigma_list.is_empty() || perception_list.is_empty() {
        return Err(ExperimentError::EmptySweep);
    }
    for &s in sigma_list {
        if !s.is_finite() || s < 0.0 {
            return Err(ExperimentError::BadSigma { value: s });
        }
    }
    for &p in perception_list {
        if !p.is_finite() || p < 0.0 {
            return Err(ExperimentError::BadSigma { value: p });
        }
    }
    let score_mean = default_score_mean();
    let score_sd = default_score_sd();
    let g = gen_ternary_tree(depth)?;
    let n = g.num_items();
    let partitions: Vec<Partition> = (1..=depth)
        .map(|level| tree_level_partition(&g, level))
        .collect::<Result<_, _>>()?;
    let cred = OwnerCredentials::uniform(g.num_owners());
    let score_model = Normal::new(score_mean, score_sd).expect("constants");

    let mut samples: BTreeMap<(usize, usize, usize), Vec<f64>> = BTreeMap::new();
    for (si, &sigma) in sigma_list.iter().enumerate() {
        let noise = Normal::new(0.0, sigma).expect("validated sigma");
        for trial in 0..trials {
            let mut score_rng =
                crate::seed::rng(seed, "tree-scores", &[si as u64, trial as u64]);
            let r: Vec<f64> = (0..n).map(|_| score_model.sample(&mut score_rng)).collect();
            let r_true = ScoreVector::new(r)?;
            let mut noise_rng =
                crate::seed::rng(seed, "tree-noise", &[si as u64, trial as u64]);
            let y = ScoreVector::new(
                r_true
                    .values()
                    .iter()
                    .map(|ri| ri + noise.sample(&mut noise_rng))
                    .collect(),
            )?;
            for (pi, &perception) in perception_list.iter().enumerate() {
                let mut profile = ReportProfile::truthful(&g, r_true.values())?;
                for owner in 0..g.num_owners() {
                    profile.insert(
                        owner,
                        perceived_ranking(
                            &r_true,
                            g.items_of(owner),
                            perception,
                            crate::seed::derive(
                                seed,
                                "tree-perception",
                                &[si as u64, pi as u64, trial as u64, owner as u64],
                            ),
                        )?,
                    );
                }
                for (level_idx, partition) in partitions.iter().enumerate() {
                    let estimate =
                        calibrate_with_partition(&g, partition, &y, &profile, &cred)?;
                    samples
                        .entry((si, pi, level_idx + 1))
                        .or_default()
                        .push(mse(r_true.values(), estimate.values()));
                }
            }
        }
    }

    let cells = samples
        .into_iter()
        .map(|((si, pi, level), per_trial)| TradeoffCell {
            sigma: sigma_list[si],
            perception_sd: perception_list[pi],
            level,
            mse: Stat::from_samples(&per_trial),
            per_trial,
        })
        .collect();
    Ok(TradeoffReport {
        depth,
        trials,
        seed,
        score_mean,
        score_sd,
        cells,
    })
}

/// Greedy versus seeded-random partition quality under each objective.
pub fn run_partition_benchmark(
    g: &OwnershipGraph,
    objectives: &[SizeObjective],
    seed: u64,
) -> Result<Vec<PartitionObjectiveReport>, ExperimentError> {
    let greedy = greedy_partition_l(g, 1, DEFAULT_REDUCTION_BUDGET)?;
    let random = random_partition(g, crate::seed::derive(seed, "benchmark-random", &[]));
    let mut reports = Vec::new();
    for w in objectives {
        reports.push(PartitionObjectiveReport::new("greedy", &greedy, w));
        reports.push(PartitionObjectiveReport::new("random", &random, w));
    }
    Ok(reports)
}
