//! The question-selection paradigms side by side over one bank of six
//! questions, answered by a fixed pattern.
//!
//! ```bash
//! cargo run --example selection_paradigms
//! ```

use carla::paradigm::{
    run_course, BalancedParams, CausalEdges, ConstraintSet, CourseConfig, Directive, ForcedPair,
};
use carla::resource::{Course, ResourceId};

fn q(i: u32) -> ResourceId {
    ResourceId::new("prof", i)
}

fn main() {
    let bank: Vec<ResourceId> = (1..=6).map(q).collect();
    let constraints = ConstraintSet {
        chains: vec![vec![q(3), q(1), q(5)], vec![q(2), q(6)]],
        forced: vec![ForcedPair { sub: q(4), reference: q(6) }],
    };
    let programs = [
        ("free", vec![Directive::Free]),
        (
            "causal links",
            vec![Directive::CausalLinks {
                edges: [
                    (q(1), CausalEdges { correct: Some(q(4)), wrong: Some(q(2)) }),
                    (q(2), CausalEdges { correct: Some(q(6)), wrong: None }),
                ]
                .into(),
            }],
        ),
        ("ordering", vec![Directive::OrderingConstraint(constraints.clone())]),
        ("dynamic ordering", vec![Directive::DynamicOrderingConstraint(constraints)]),
        (
            "balanced n=2 p=0.5 over free",
            vec![Directive::BalancedConstraint(BalancedParams::new(2, 0.5).unwrap()), Directive::Free],
        ),
    ];
    // right, wrong, wrong, right, ...
    let pattern = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0];
    for (name, program) in programs {
        let course = Course { id: q(100), program, members: bank.clone() };
        let mut i = 0;
        let transcript = run_course(
            &course,
            &bank,
            |_| {
                i += 1;
                pattern[(i - 1) % pattern.len()]
            },
            CourseConfig { rng_seed: 7, ..Default::default() },
        );
        println!("== {name}: {} asked, {} right", transcript.entries.len(), transcript.right_answers());
        print!("{}", transcript.dump());
    }
}
