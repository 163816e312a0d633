//! Property tests for the fusion rule, the dual-view transform, and the
//! generic-slot probabilities.

use std::collections::BTreeSet;

use proptest::prelude::*;

use cogmac_core::contention::slot_probabilities;
use cogmac_core::sensing::{fuse_a_out_of_b, per_su_target};
use cogmac_core::SensingAssignment;

fn fuse_oracle(probs: &[f64], a: usize) -> f64 {
    let b = probs.len();
    let mut total = 0.0;
    for pattern in 0u32..(1 << b) {
        let mut prob = 1.0;
        let mut votes = 0;
        for (k, &p) in probs.iter().enumerate() {
            if pattern >> k & 1 == 1 {
                prob *= p;
                votes += 1;
            } else {
                prob *= 1.0 - p;
            }
        }
        if votes >= a {
            total += prob;
        }
    }
    total
}

proptest! {
    #[test]
    fn fusion_dp_equals_subset_enumeration(
        probs in prop::collection::vec(0.0f64..=1.0, 1..=6),
        a_seed in 0usize..6,
    ) {
        let a = 1 + a_seed % probs.len();
        let dp = fuse_a_out_of_b(&probs, a).unwrap();
        let oracle = fuse_oracle(&probs, a);
        prop_assert!((dp - oracle).abs() <= 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&dp));
    }

    #[test]
    fn fusion_monotone_in_threshold(
        probs in prop::collection::vec(0.0f64..=1.0, 1..=6),
    ) {
        let mut prev = f64::INFINITY;
        for a in 1..=probs.len() {
            let v = fuse_a_out_of_b(&probs, a).unwrap();
            prop_assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn per_su_target_round_trips(
        pd_hat in 0.01f64..0.99,
        b in 1usize..=6,
        a_seed in 0usize..6,
    ) {
        let a = 1 + a_seed % b;
        let x = per_su_target(pd_hat, a, b).unwrap();
        let fused = fuse_a_out_of_b(&vec![x; b], a).unwrap();
        prop_assert!((fused - pd_hat).abs() < 1e-10);
    }

    #[test]
    fn dual_view_round_trips(
        rows in prop::collection::vec(prop::collection::btree_set(0usize..5, 0..=5), 1..=6),
    ) {
        let per_su: Vec<BTreeSet<usize>> = rows;
        let forward = SensingAssignment::from_per_su(per_su.clone(), 5).unwrap();
        let back =
            SensingAssignment::from_per_channel(forward.per_channel().to_vec(), per_su.len())
                .unwrap();
        prop_assert_eq!(back.per_su(), per_su.as_slice());
        for (j, sensors) in forward.per_channel().iter().enumerate() {
            for &i in sensors {
                prop_assert!(forward.per_su()[i].contains(&j));
            }
        }
    }

    #[test]
    fn slot_probability_triple_sums_to_one(
        n in 1usize..=50,
        p in 0.0f64..=1.0,
    ) {
        let (s, i, c) = slot_probabilities(n, p).unwrap();
        prop_assert!((s + i + c - 1.0).abs() < 1e-12);
        prop_assert!(s >= 0.0 && i >= 0.0 && c >= 0.0);
    }
}
