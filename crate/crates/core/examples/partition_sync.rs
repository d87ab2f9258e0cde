//! Interest-filtered exchange between two devices under a contact budget,
//! then anti-entropy rounds along a chain until every device agrees.
//!
//! ```bash
//! cargo run --example partition_sync
//! ```

use carla::node::NodeState;
use carla::resource::{ComponentDescriptor, MaterialUnit, NodeId, Question, QuestionType, Resource, ResourceId};
use carla::sync::{anti_entropy_round, execute_exchange, make_digest, match_information, ContactWindow};

fn material(seq: u32, topic: &str, size: u32) -> Resource {
    Resource::Material(MaterialUnit {
        id: ResourceId::new("prof", seq),
        topics: [topic.to_owned()].into(),
        size,
        staff_origin: true,
    })
}

fn main() {
    let mut a = NodeState::student("a", &["routing", "mobility"]);
    let mut b = NodeState::student("b", &["routing"]);
    for r in [
        material(0, "routing", 3),
        material(1, "mobility", 2),
        Resource::Component(ComponentDescriptor {
            id: ResourceId::new("prof", 2),
            renders: QuestionType::new("multiple-choice"),
            size: 1,
        }),
        Resource::Question(Question {
            id: ResourceId::new("a", 0),
            qtype: QuestionType::new("multiple-choice"),
            anchors: [ResourceId::new("prof", 0)].into(),
            component: ResourceId::new("prof", 2),
            author: NodeId::from("a"),
        }),
    ] {
        a.receive(r, 0);
    }
    b.receive(material(3, "routing", 1), 0);

    let plan = match_information(&make_digest(&a), &make_digest(&b), &a.interests, &b.interests);
    println!("a -> b: {:?}", plan.to_b.iter().map(|i| i.to_string()).collect::<Vec<_>>());
    println!("b -> a: {:?}", plan.to_a.iter().map(|i| i.to_string()).collect::<Vec<_>>());
    let report = execute_exchange(&mut a, &mut b, &plan, ContactWindow::budget(4), 1).unwrap();
    println!("budget 4 moved {} units, complete: {}", report.units, report.complete);
    let report = execute_exchange(&mut a, &mut b, &plan, ContactWindow::budget(8), 2).unwrap();
    println!("next contact moved {} units, complete: {}", report.units, report.complete);

    // a five-device chain: the far end learns in diameter-many rounds
    let mut chain: Vec<NodeState> = (0..5).map(|i| NodeState::student(&format!("c{i}"), &["routing"])).collect();
    chain[0].receive(material(10, "routing", 1), 0);
    let edges: Vec<(usize, usize)> = (0..4).rev().map(|i| (i, i + 1)).collect();
    for round in 1..=4 {
        anti_entropy_round(&mut chain, &edges, 8, round);
        let holders = chain.iter().filter(|n| n.holds(&ResourceId::new("prof", 10))).count();
        println!("round {round}: {holders}/5 devices hold prof:10");
    }
}
