mod common;

use std::collections::BTreeSet;

use carla::node::{NodeState, Role, TtlPolicy};
use carla::resource::{
    aggregate_score, evict_expired, Evaluation, NodeId, Rating, Resource, ResourceId, Store,
    TtlParams, TtlRecord, TtlTable,
};
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn seeded_store(seed: u64) -> (Store, Vec<Resource>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let authors: Vec<NodeId> = ["s1", "s2", "s3"].iter().map(|s| NodeId::from(*s)).collect();
    let items = universe(&mut rng, &authors);
    (items.iter().cloned().collect(), items)
}

fn eval(n: u32, target: &ResourceId, score: f64) -> Evaluation {
    Evaluation {
        id: ResourceId::new(format!("e{n}"), 0),
        target: target.clone(),
        score,
        evaluator: NodeId::from(format!("e{n}").as_str()),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn add_and_evict_keep_stores_valid(seed in any::<u64>(), ops in prop::collection::vec((any::<bool>(), 0usize..24, 1u64..40), 1..40)) {
        let (_, items) = seeded_store(seed);
        let staff = std::sync::Arc::new(BTreeSet::from([NodeId::from("prof")]));
        let params = TtlParams { ttl_base: 5, keep_threshold: 0.5 };
        let mut node = NodeState::new(NodeId::from("n"), Role::Student, Default::default())
            .with_ttl(TtlPolicy::new(params, staff));
        let index = items.iter().map(|r| (r.id().clone(), r.clone())).collect();
        let mut now = 0;
        for (add, pick, dt) in ops {
            now += dt;
            if add {
                give(&mut node, items[pick % items.len()].id(), &index);
            } else {
                node.evict(now);
            }
            prop_assert!(node.store.validate().is_empty());
            prop_assert!(dangling(&node.store).is_empty());
        }
    }

    #[test]
    fn aggregate_stays_in_unit_range(scores in prop::collection::vec(0.0f64..=1.0, 0..12)) {
        let target = ResourceId::new("q", 0);
        let evals: Vec<Evaluation> = scores.iter().enumerate().map(|(i, s)| eval(i as u32, &target, *s)).collect();
        match aggregate_score(&target, &evals) {
            Rating::Unrated => prop_assert!(scores.is_empty()),
            Rating::Rated(v) => prop_assert!((0.0..=1.0).contains(&v)),
        }
    }

    #[test]
    fn adding_the_mean_keeps_the_mean(quarters in prop::collection::vec(0u32..=4, 1..12)) {
        // quarter scores keep every mean exactly representable
        let target = ResourceId::new("q", 0);
        let mut evals: Vec<Evaluation> = quarters.iter().enumerate().map(|(i, k)| eval(i as u32, &target, *k as f64 / 4.0)).collect();
        let Rating::Rated(mean) = aggregate_score(&target, &evals) else { unreachable!() };
        evals.push(eval(99, &target, mean));
        let Rating::Rated(after) = aggregate_score(&target, &evals) else { unreachable!() };
        prop_assert!((after - mean).abs() < 1e-12);
    }

    #[test]
    fn eviction_is_monotone_in_time(seed in any::<u64>(), expiries in prop::collection::vec(0u64..30, 24), t in 0u64..40, dt in 1u64..20) {
        let (store, items) = seeded_store(seed);
        let ttl: TtlTable = items
            .iter()
            .zip(&expiries)
            .filter(|(r, _)| matches!(r, Resource::Question(_) | Resource::Link(_) | Resource::Annotation(_)))
            .map(|(r, e)| (r.id().clone(), TtlRecord { resource: r.id().clone(), expiry: *e, ttl_base: 5 }))
            .collect();
        let (mut early, mut early_ttl) = (store.clone(), ttl.clone());
        let (mut late, mut late_ttl) = (store, ttl);
        let a: BTreeSet<ResourceId> = evict_expired(&mut early, &mut early_ttl, t).removed().cloned().collect();
        let b: BTreeSet<ResourceId> = evict_expired(&mut late, &mut late_ttl, t + dt).removed().cloned().collect();
        prop_assert!(a.is_subset(&b));
    }
}
