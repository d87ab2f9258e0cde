//! A resource's life on one device: dependency closure, peer ratings and
//! TTL eviction with cascade.
//!
//! ```bash
//! cargo run --example resource_lifecycle
//! ```

use std::collections::BTreeSet;
use std::sync::Arc;

use carla::node::{NodeState, TtlPolicy};
use carla::resource::{
    closure, ComponentDescriptor, Evaluation, Link, MaterialUnit, NodeId, Question, QuestionType,
    Resource, ResourceId, TtlParams,
};

fn main() {
    let prof = NodeId::from("prof");
    let params = TtlParams { ttl_base: 20, keep_threshold: 0.5 };
    let staff = Arc::new(BTreeSet::from([prof.clone()]));
    let mut device = NodeState::student("s01", &["routing"]).with_ttl(TtlPolicy::new(params, staff));

    let slides = ResourceId::new("prof", 0);
    let widget = ResourceId::new("prof", 1);
    let question = ResourceId::new("s02", 0);
    let link = ResourceId::new("s03", 0);
    let items = [
        Resource::Material(MaterialUnit {
            id: slides.clone(),
            topics: ["routing".to_owned()].into(),
            size: 4,
            staff_origin: true,
        }),
        Resource::Component(ComponentDescriptor {
            id: widget.clone(),
            renders: QuestionType::new("multiple-choice"),
            size: 1,
        }),
        Resource::Question(Question {
            id: question.clone(),
            qtype: QuestionType::new("multiple-choice"),
            anchors: [slides.clone()].into(),
            component: widget.clone(),
            author: NodeId::from("s02"),
        }),
        Resource::Link(Link {
            id: link.clone(),
            source: question.clone(),
            dest: slides.clone(),
            author: NodeId::from("s03"),
        }),
    ];
    for r in items {
        device.receive(r, 0);
    }
    let deps = closure(&device.store, [&link]).expect("all dependencies held");
    println!("closure of {link}: {}", deps.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", "));

    // a poor rating stops the question's TTL from being refreshed
    device.receive(
        Resource::Evaluation(Evaluation {
            id: ResourceId::new("s04", 0),
            target: question.clone(),
            score: 0.2,
            evaluator: NodeId::from("s04"),
        }),
        5,
    );
    for tick in 1..=30 {
        let gone = device.evict(tick);
        for id in &gone.expired {
            println!("tick {tick}: {id} expired");
        }
        for id in &gone.cascaded {
            println!("tick {tick}: {id} removed with its dependency");
        }
    }
    println!("left on device: {}", device.store.ids().map(|i| i.to_string()).collect::<Vec<_>>().join(", "));
    println!("dangling references: {}", device.store.validate().len());
}
