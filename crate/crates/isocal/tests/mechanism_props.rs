//! Property tests of the calibration mechanisms: the personalized encoding
//! reproduces the partition mechanism, calibrated blocks conserve mass,
//! observed scores majorize calibrated ones, reports only matter through
//! their within-block restrictions, and the merge normalization only grows
//! the elicited pair set.

use isocal::incentive::check_majorization;
use isocal::mechanism::{
    calibrate_complete_overlap, calibrate_personalized, calibrate_with_partition,
    calibrate_with_partition_detailed, merge_to_global_partition, partition_used_pairs,
    BlockStatus, FillPolicy, OwnerCredentials, PersonalizedParams, ReportProfile,
};
use isocal::ownership::is_partition_of;
use isocal::partition::{greedy_partition, random_partition};
use isocal::{OwnershipGraph, Partition, Ranking, ScoreVector};
use proptest::prelude::*;

type Instance = (OwnershipGraph, Vec<f64>, Vec<f64>, u64);

fn instance(max_items: usize, max_owners: usize) -> impl Strategy<Value = Instance> {
    (2..=max_items, 1..=max_owners).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(prop::collection::btree_set(0..n, 1..=n), m),
            prop::collection::vec(-10.0..10.0f64, n),
            prop::collection::vec(0.05..2.0f64, m),
            any::<u64>(),
        )
            .prop_map(move |(sets, scores, alpha, seed)| {
                let sets: Vec<Vec<usize>> =
                    sets.into_iter().map(|s| s.into_iter().collect()).collect();
                (
                    OwnershipGraph::from_owner_sets(&sets, n).unwrap(),
                    scores,
                    alpha,
                    seed,
                )
            })
    })
}

fn some_partition(g: &OwnershipGraph, seed: u64) -> Partition {
    if seed % 2 == 0 {
        greedy_partition(g)
    } else {
        random_partition(g, seed)
    }
}

proptest! {
    /// Calibrating with a partition encoded as personalized parameters gives
    /// the same scores as the partition mechanism itself.
    #[test]
    fn personalized_encoding_matches_the_partition_mechanism(
        (g, y, alpha, seed) in instance(8, 5)
    ) {
        let p = some_partition(&g, seed);
        let y = ScoreVector::new(y).unwrap();
        let cred = OwnerCredentials::new(alpha).unwrap();
        let reports = ReportProfile::new(FillPolicy::Seeded(seed));
        let direct = calibrate_with_partition(&g, &p, &y, &reports, &cred).unwrap();
        let params = PersonalizedParams::encode_partition(&g, &p);
        let via_params = calibrate_personalized(&g, &params, &y, &reports, &cred).unwrap();
        for (a, b) in direct.values().iter().zip(via_params.values()) {
            prop_assert!((a - b).abs() <= 1e-12, "partition {a} vs personalized {b}");
        }
    }

    /// Calibrated blocks keep their score sum; every other block passes raw
    /// scores through untouched.
    #[test]
    fn calibrated_blocks_conserve_sums_and_others_pass_through(
        (g, y, alpha, seed) in instance(8, 5)
    ) {
        let p = some_partition(&g, seed);
        let y = ScoreVector::new(y).unwrap();
        let cred = OwnerCredentials::new(alpha).unwrap();
        let reports = ReportProfile::new(FillPolicy::Seeded(seed));
        let result =
            calibrate_with_partition_detailed(&g, &p, &y, &reports, &cred).unwrap();
        for outcome in &result.blocks {
            match outcome.status {
                BlockStatus::Calibrated { .. } => {
                    let before: f64 = outcome.items.iter().map(|&i| y.values()[i]).sum();
                    let after: f64 = outcome
                        .items
                        .iter()
                        .map(|&i| result.scores.values()[i])
                        .sum();
                    prop_assert!((before - after).abs() <= 1e-9 * before.abs().max(1.0));
                }
                _ => {
                    for &i in &outcome.items {
                        prop_assert_eq!(result.scores.values()[i], y.values()[i]);
                    }
                }
            }
        }
    }

    /// Calibration averages within blocks, so the observed scores majorize
    /// the calibrated ones.
    #[test]
    fn observed_scores_majorize_the_calibrated_output(
        (g, y, alpha, seed) in instance(8, 5)
    ) {
        let p = some_partition(&g, seed);
        let y = ScoreVector::new(y).unwrap();
        let cred = OwnerCredentials::new(alpha).unwrap();
        let reports = ReportProfile::new(FillPolicy::Seeded(seed));
        let adjusted = calibrate_with_partition(&g, &p, &y, &reports, &cred).unwrap();
        prop_assert!(check_majorization(&y, &adjusted).unwrap());
    }

    /// Complete-overlap calibration conserves the total sum and is majorized
    /// by the observed scores.
    #[test]
    fn complete_overlap_conserves_total_and_is_majorized(
        (n, m, seed) in (2..=7usize, 1..=4usize, any::<u64>())
    ) {
        let mut rng = isocal::seed::rng(seed, "complete-instance", &[]);
        use rand::Rng;
        let y = ScoreVector::new((0..n).map(|_| rng.gen_range(-10.0..10.0)).collect())
            .unwrap();
        let alpha: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..2.0)).collect();
        let cred = OwnerCredentials::new(alpha).unwrap();
        let reports = ReportProfile::new(FillPolicy::Seeded(seed));
        let adjusted = calibrate_complete_overlap(&y, &reports, &cred).unwrap();
        let before: f64 = y.values().iter().sum();
        let after: f64 = adjusted.values().iter().sum();
        prop_assert!((before - after).abs() <= 1e-9 * before.abs().max(1.0));
        prop_assert!(check_majorization(&y, &adjusted).unwrap());
    }

    /// Only the within-block restriction of a report can influence the
    /// output: re-interleaving an owner's ranking across blocks while
    /// keeping each block's internal order changes nothing.
    #[test]
    fn only_within_block_order_matters((g, y, alpha, seed) in instance(8, 5)) {
        let p = some_partition(&g, seed);
        let y = ScoreVector::new(y).unwrap();
        let cred = OwnerCredentials::new(alpha).unwrap();
        let truthful = ReportProfile::truthful(&g, y.values()).unwrap();
        let baseline =
            calibrate_with_partition(&g, &p, &y, &truthful, &cred).unwrap();

        let mut rewoven = truthful.clone();
        for owner in 0..g.num_owners() {
            let Some(ranking) = truthful.get(owner) else { continue };
            // Per-block subsequences of the owner's order, concatenated in
            // reversed block order.
            let mut segments: Vec<Vec<usize>> = Vec::new();
            for block in p.blocks() {
                let segment: Vec<usize> = ranking
                    .order()
                    .iter()
                    .copied()
                    .filter(|i| block.contains(i))
                    .collect();
                if !segment.is_empty() {
                    segments.push(segment);
                }
            }
            segments.reverse();
            let rewound: Vec<usize> = segments.into_iter().flatten().collect();
            rewoven.insert(owner, Ranking::new(rewound).unwrap());
        }
        let perturbed = calibrate_with_partition(&g, &p, &y, &rewoven, &cred).unwrap();
        prop_assert_eq!(baseline.values(), perturbed.values());
    }

    /// An owner with zero credential has no influence on the partition
    /// mechanism, whatever they report.
    #[test]
    fn zero_credential_owners_cannot_influence_output(
        (g, y, mut alpha, seed) in instance(8, 5)
    ) {
        let muted = (seed as usize) % g.num_owners();
        alpha[muted] = 0.0;
        let p = some_partition(&g, seed);
        let y = ScoreVector::new(y).unwrap();
        let cred = OwnerCredentials::new(alpha).unwrap();

        let truthful = ReportProfile::truthful(&g, y.values()).unwrap();
        let a = calibrate_with_partition(&g, &p, &y, &truthful, &cred).unwrap();

        let mut flipped = truthful.clone();
        if let Some(ranking) = truthful.get(muted) {
            let mut order = ranking.order().to_vec();
            order.reverse();
            flipped.insert(muted, Ranking::new(order).unwrap());
        }
        let b = calibrate_with_partition(&g, &p, &y, &flipped, &cred).unwrap();
        prop_assert_eq!(a.values(), b.values());
    }

    /// Merging an encoded partition yields a valid partition whose used
    /// comparison pairs contain the encoding's weighted pairs, and merging
    /// again is a fixpoint.
    #[test]
    fn merge_grows_pairs_and_is_idempotent((g, _y, _alpha, seed) in instance(8, 5)) {
        let p = some_partition(&g, seed);
        let params = PersonalizedParams::encode_partition(&g, &p);
        let merged = merge_to_global_partition(&g, &params).unwrap();
        prop_assert!(is_partition_of(merged.blocks(), g.num_items()));
        let before = params.weighted_pairs();
        let after = partition_used_pairs(&merged);
        prop_assert!(before.is_subset(&after), "{before:?} not within {after:?}");

        let again =
            merge_to_global_partition(&g, &PersonalizedParams::encode_partition(&g, &merged))
                .unwrap();
        let mut a: Vec<Vec<usize>> = merged.blocks().to_vec();
        let mut b: Vec<Vec<usize>> = again.blocks().to_vec();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }
}
