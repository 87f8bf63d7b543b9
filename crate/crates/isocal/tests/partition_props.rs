//! Property tests of the partitioners: validity and strongness of greedy and
//! random outputs, the greedy guarantee against brute-force optima, and the
//! equivalence carried by the L-to-1 reduction.

use isocal::ownership::{all_set_partitions, is_partition_of, reduce_l_to_1};
use isocal::partition::{
    brute_force_optimal, greedy_partition, greedy_partition_l, objective, random_partition,
    SizeObjective,
};
use isocal::{is_l_strong, OwnershipGraph, Partition};
use proptest::prelude::*;

fn graph(max_items: usize, max_owners: usize) -> impl Strategy<Value = OwnershipGraph> {
    (2..=max_items, 1..=max_owners).prop_flat_map(|(n, m)| {
        prop::collection::vec(prop::collection::btree_set(0..n, 1..=n), m).prop_map(
            move |sets| {
                let sets: Vec<Vec<usize>> = sets
                    .into_iter()
                    .map(|s| s.into_iter().collect())
                    .collect();
                OwnershipGraph::from_owner_sets(&sets, n).unwrap()
            },
        )
    })
}

proptest! {
    /// Greedy always emits a disjoint cover whose multi-item blocks have a
    /// common owner.
    #[test]
    fn greedy_output_is_a_one_strong_partition(g in graph(9, 5)) {
        let p = greedy_partition(&g);
        prop_assert!(is_partition_of(p.blocks(), g.num_items()));
        prop_assert!(is_l_strong(&g, &p, 1));
    }

    /// The greedy objective is at least half the brute-force optimum for the
    /// quadratic size objective.
    #[test]
    fn greedy_meets_half_of_the_comparison_optimum(g in graph(7, 4)) {
        let w = SizeObjective::Comparison;
        let greedy = objective(&greedy_partition(&g), &w);
        let opt = objective(&brute_force_optimal(&g, &w, 1).unwrap(), &w);
        prop_assert!(greedy >= 0.5 * opt - 1e-9, "greedy {greedy} vs opt {opt}");
    }

    /// Over every set partition of the items, L-strongness in the original
    /// graph coincides with 1-strongness in the reduced graph.
    #[test]
    fn reduction_preserves_strongness_exhaustively(
        g in graph(5, 4),
        l in 2..=3usize,
    ) {
        let reduced = reduce_l_to_1(&g, l, 1_000_000).unwrap();
        for blocks in all_set_partitions(g.num_items()) {
            let in_g = Partition::new(&g, blocks.clone()).unwrap();
            let in_reduced = Partition::new(&reduced.graph, blocks).unwrap();
            prop_assert_eq!(
                is_l_strong(&g, &in_g, l),
                is_l_strong(&reduced.graph, &in_reduced, 1)
            );
        }
    }

    /// The random baseline is a valid 1-strong partition and is a pure
    /// function of its seed.
    #[test]
    fn random_partition_is_valid_and_seeded(g in graph(9, 5), seed in any::<u64>()) {
        let a = random_partition(&g, seed);
        prop_assert!(is_partition_of(a.blocks(), g.num_items()));
        prop_assert!(is_l_strong(&g, &a, 1));
        let b = random_partition(&g, seed);
        prop_assert_eq!(a.blocks(), b.blocks());
    }

    /// Partitions produced at strongness level L actually are L-strong.
    #[test]
    fn greedy_l_outputs_are_l_strong(g in graph(8, 5), l in 1..=3usize) {
        let p = greedy_partition_l(&g, l, 1_000_000).unwrap();
        prop_assert!(is_partition_of(p.blocks(), g.num_items()));
        prop_assert!(is_l_strong(&g, &p, l));
    }

    /// Derived-graph ownership is exactly the L-wise intersections: every
    /// derived owner's item set has at least L common owners in the original
    /// graph.
    #[test]
    fn reduced_owners_carry_l_common_owners(g in graph(6, 5), l in 2..=3usize) {
        let reduced = reduce_l_to_1(&g, l, 1_000_000).unwrap();
        for owner in 0..reduced.graph.num_owners() {
            let items = reduced.graph.items_of(owner);
            if items.is_empty() {
                continue;
            }
            let common = isocal::common_owner_set(&g, items).unwrap();
            prop_assert!(common.len() >= l);
        }
    }
}
