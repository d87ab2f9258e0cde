use std::collections::BTreeMap;

use carla::paradigm::{
    run_course, BalancedParams, ConstraintSet, CourseConfig, Directive, ForcedPair, Transcript,
};
use carla::resource::{Course, ResourceId};
use proptest::prelude::*;

fn q(i: u32) -> ResourceId {
    ResourceId::new("q", i)
}

fn first_asks(t: &Transcript) -> Vec<ResourceId> {
    let mut seen = Vec::new();
    for e in &t.entries {
        if !seen.contains(&e.question) {
            seen.push(e.question.clone());
        }
    }
    seen
}

fn answers(bits: u64) -> impl FnMut(&ResourceId) -> f64 {
    let mut i = 0;
    move |_| {
        let b = (bits >> (i % 64)) & 1;
        i += 1;
        b as f64
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn free_selection_never_skips(bank_len in 1u32..10, members in prop::collection::vec(any::<bool>(), 10), gated in any::<bool>(), bits in any::<u64>()) {
        let bank: Vec<ResourceId> = (0..bank_len).map(q).collect();
        let course_members: Vec<ResourceId> = bank.iter().zip(&members).filter(|(_, m)| **m).map(|(id, _)| id.clone()).collect();
        let mut program = vec![Directive::Free];
        if gated {
            program.insert(0, Directive::BalancedConstraint(BalancedParams::new(2, 0.5).unwrap()));
        }
        let course = Course { id: ResourceId::new("c", 0), program, members: course_members.clone() };
        let t = run_course(&course, &bank, answers(bits), CourseConfig::default());
        let firsts = first_asks(&t);
        let expected: Vec<ResourceId> = bank.iter().filter(|b| course_members.contains(b)).cloned().collect();
        if t.truncated {
            prop_assert!(expected.starts_with(&firsts));
        } else {
            prop_assert_eq!(firsts, expected);
        }
    }

    #[test]
    fn forced_sub_never_precedes_reference(
        n in 2u32..8,
        chains in prop::collection::vec(prop::collection::vec(0u32..8, 1..6), 1..3),
        pairs in prop::collection::vec((0u32..8, 0u32..8), 0..4),
        dynamic in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let bank: Vec<ResourceId> = (0..n).map(q).collect();
        let constraints = ConstraintSet {
            chains: chains.iter().map(|c| c.iter().map(|i| q(*i)).collect()).collect(),
            forced: pairs.iter().filter(|(a, b)| a != b).map(|(a, b)| ForcedPair { sub: q(*a), reference: q(*b) }).collect(),
        };
        let directive = if dynamic {
            Directive::DynamicOrderingConstraint(constraints.clone())
        } else {
            Directive::OrderingConstraint(constraints.clone())
        };
        let course = Course { id: ResourceId::new("c", 0), program: vec![directive], members: bank.clone() };
        let t = run_course(&course, &bank, |_| 1.0, CourseConfig { rng_seed: seed, ..Default::default() });
        let first: BTreeMap<&ResourceId, usize> = t.entries.iter().rev().map(|e| (&e.question, e.time)).collect();
        for p in constraints.forced.iter().filter(|p| bank.contains(&p.sub) && bank.contains(&p.reference)) {
            if let Some(sub_at) = first.get(&p.sub) {
                let reference_at = first.get(&p.reference);
                prop_assert!(reference_at.is_some_and(|r| r < sub_at), "{} asked before {}", p.sub, p.reference);
            }
        }
        for e in &t.entries {
            prop_assert!(bank.contains(&e.question));
        }
    }
}
