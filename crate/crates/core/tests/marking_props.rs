use afem::marking::{mark, MarkingRule};
use proptest::prelude::*;

fn estimates() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..10.0, 1e-8f64..1e-6], 1..80)
}

fn argmax(eta: &[f64]) -> usize {
    let max = eta.iter().copied().fold(0.0, f64::max);
    eta.iter().position(|&e| e == max).unwrap()
}

fn squares(eta: &[f64], set: &[usize]) -> f64 {
    set.iter().map(|&t| eta[t] * eta[t]).sum()
}

proptest! {
    #[test]
    fn marked_sets_are_sorted_and_hold_a_maximum(eta in estimates(), theta in 0.01f64..=1.0) {
        for rule in [MarkingRule::Global, MarkingRule::Maximum(theta), MarkingRule::Doerfler(theta)] {
            let m = mark(&eta, rule).unwrap();
            prop_assert!(!m.is_empty());
            prop_assert!(m.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(m.iter().all(|&t| t < eta.len()));
            prop_assert!(m.contains(&argmax(&eta)));
        }
    }

    #[test]
    fn doerfler_reaches_the_bulk_with_a_greedy_minimal_set(eta in estimates(), theta in 0.01f64..=1.0) {
        let m = mark(&eta, MarkingRule::Doerfler(theta)).unwrap();
        let total = squares(&eta, &(0..eta.len()).collect::<Vec<_>>());
        if total > 0.0 {
            prop_assert!(squares(&eta, &m) >= theta * theta * total * (1.0 - 1e-12));
            // Dropping the smallest marked estimate falls short of the bulk.
            let smallest = m.iter().copied().min_by(|&a, &b| eta[a].total_cmp(&eta[b])).unwrap();
            let rest: Vec<usize> = m.iter().copied().filter(|&t| t != smallest).collect();
            prop_assert!(squares(&eta, &rest) < theta * theta * total * (1.0 + 1e-12));
            // Every unmarked estimate is at most every marked one.
            let low = m.iter().map(|&t| eta[t]).fold(f64::INFINITY, f64::min);
            prop_assert!((0..eta.len()).filter(|t| !m.contains(t)).all(|t| eta[t] <= low));
        }
    }

    #[test]
    fn maximum_rule_is_a_threshold(eta in estimates(), theta in 0.01f64..=1.0) {
        let m = mark(&eta, MarkingRule::Maximum(theta)).unwrap();
        let max = eta.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            for (t, e) in eta.iter().enumerate() {
                prop_assert_eq!(m.contains(&t), *e >= theta * max);
            }
        }
    }

    #[test]
    fn marking_commutes_with_permutations(
        eta in prop::collection::vec(0.0f64..10.0, 1..60).prop_map(|v| {
            // Distinct values keep the tie-break out of the comparison.
            let mut v = v;
            for (i, e) in v.iter_mut().enumerate() { *e += 1e-9 * i as f64; }
            v
        }),
        seed in any::<u64>(),
        theta in 0.01f64..=1.0,
    ) {
        let n = eta.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permuted: Vec<f64> = perm.iter().map(|&i| eta[i]).collect();
        for rule in [MarkingRule::Maximum(theta), MarkingRule::Doerfler(theta)] {
            let direct = mark(&eta, rule).unwrap();
            let mut mapped: Vec<usize> = mark(&permuted, rule).unwrap().iter().map(|&j| perm[j]).collect();
            mapped.sort_unstable();
            prop_assert_eq!(direct, mapped);
        }
    }

    #[test]
    fn doerfler_grows_with_theta(eta in estimates(), a in 0.01f64..=1.0, b in 0.01f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = mark(&eta, MarkingRule::Doerfler(lo)).unwrap();
        let large = mark(&eta, MarkingRule::Doerfler(hi)).unwrap();
        prop_assert!(small.iter().all(|t| large.contains(t)));
    }

    #[test]
    fn rules_survive_display_and_parse(theta in 0.001f64..=1.0) {
        for rule in [MarkingRule::Global, MarkingRule::Maximum(theta), MarkingRule::Doerfler(theta)] {
            prop_assert_eq!(rule.to_string().parse::<MarkingRule>().unwrap(), rule);
        }
    }
}
