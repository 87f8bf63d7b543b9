//! Property tests of the isotonic projection: equivalence with the
//! composition-enumeration oracle, projection laws (idempotence, sum
//! preservation, nonexpansiveness), order feasibility, and majorization.

use isocal::incentive::check_majorization;
use isocal::isotonic::isotonic_fit_block;
use isocal::{brute_force_projection, isotonic_fit, Ranking, ScoreVector};
use proptest::prelude::*;

fn scores(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, n)
}

fn perm(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<usize>>()).prop_shuffle()
}

fn instance(max_n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    (1..=max_n).prop_flat_map(|n| (scores(n), perm(n)))
}

fn sv(v: Vec<f64>) -> ScoreVector {
    ScoreVector::new(v).unwrap()
}

proptest! {
    /// The pool-adjacent-violators fit equals the minimum-cost feasible
    /// contiguous pooling found by exhaustive enumeration.
    #[test]
    fn fit_matches_the_composition_oracle((y, p) in instance(6)) {
        let y = sv(y);
        let pi = Ranking::new(p).unwrap();
        let fast = isotonic_fit(&y, &pi).unwrap();
        let slow = brute_force_projection(&y, &pi, 0.0).unwrap();
        for (a, b) in fast.values().iter().zip(slow.values()) {
            prop_assert!((a - b).abs() <= 1e-8, "fast {a} vs oracle {b}");
        }
    }

    /// Projecting a projection changes nothing.
    #[test]
    fn fit_is_idempotent((y, p) in instance(60)) {
        let pi = Ranking::new(p).unwrap();
        let once = isotonic_fit(&sv(y), &pi).unwrap();
        let twice = isotonic_fit(&once, &pi).unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    /// Pooling replaces runs by their means, so the entry sum is invariant.
    #[test]
    fn fit_preserves_the_entry_sum((y, p) in instance(100)) {
        let pi = Ranking::new(p).unwrap();
        let before: f64 = y.iter().sum();
        let fitted = isotonic_fit(&sv(y), &pi).unwrap();
        let after: f64 = fitted.values().iter().sum();
        prop_assert!((before - after).abs() <= 1e-9 * before.abs().max(1.0));
    }

    /// Projection onto a convex cone is 1-Lipschitz in Euclidean norm.
    #[test]
    fn fit_is_nonexpansive(
        (a, b, p) in (1..=100usize).prop_flat_map(|n| (scores(n), scores(n), perm(n)))
    ) {
        let pi = Ranking::new(p).unwrap();
        let input_dist: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let fa = isotonic_fit(&sv(a), &pi).unwrap();
        let fb = isotonic_fit(&sv(b), &pi).unwrap();
        let output_dist: f64 = fa
            .values()
            .iter()
            .zip(fb.values())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        prop_assert!(output_dist <= input_dist + 1e-9);
    }

    /// The fit is weakly descending when read in ranking order.
    #[test]
    fn fit_is_feasible_along_the_ranking((y, p) in instance(100)) {
        let pi = Ranking::new(p).unwrap();
        let fitted = isotonic_fit(&sv(y), &pi).unwrap();
        for w in pi.order().windows(2) {
            prop_assert!(fitted.values()[w[0]] >= fitted.values()[w[1]] - 1e-12);
        }
    }

    /// Averaging within pools means the input majorizes the output.
    #[test]
    fn input_majorizes_the_fit((y, p) in instance(100)) {
        let y = sv(y);
        let pi = Ranking::new(p).unwrap();
        let fitted = isotonic_fit(&y, &pi).unwrap();
        prop_assert!(check_majorization(&y, &fitted).unwrap());
    }

    /// Fitting a sub-chain of a larger vector equals fitting the extracted
    /// sub-vector on its own.
    #[test]
    fn block_fit_equals_standalone_fit_of_the_subvector(
        (y, chain) in (2..=12usize).prop_flat_map(|n| {
            (scores(n), proptest::sample::subsequence((0..n).collect::<Vec<usize>>(), 1..=n)
                .prop_shuffle())
        })
    ) {
        let chain_ranking = Ranking::new(chain.clone()).unwrap();
        let from_block = isotonic_fit_block(&y, &chain_ranking).unwrap();

        let sub: Vec<f64> = chain.iter().map(|&i| y[i]).collect();
        let identity = Ranking::identity(sub.len()).unwrap();
        let standalone = isotonic_fit(&sv(sub), &identity).unwrap();
        for (a, b) in from_block.iter().zip(standalone.values()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
