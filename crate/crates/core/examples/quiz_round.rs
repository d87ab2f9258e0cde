//! One quiz: answers, joker halving, status collection and the ranking.
//!
//! ```bash
//! cargo run --example quiz_round
//! ```

use carla::injection::{inject_collect_status, CostLedger, CostModel};
use carla::node::NodeState;
use carla::quiz::{CooperationWeights, JokerKind, QuizState};
use carla::resource::{
    ComponentDescriptor, Evaluation, Link, MaterialUnit, NodeId, Question, QuestionType, Resource,
    ResourceId, Store,
};

fn main() {
    let slides = ResourceId::new("prof", 0);
    let widget = ResourceId::new("prof", 1);
    let question = ResourceId::new("prof", 2);
    let hint = ResourceId::new("ana", 0);
    let content = [
        Resource::Material(MaterialUnit {
            id: slides.clone(),
            topics: ["security".to_owned()].into(),
            size: 2,
            staff_origin: true,
        }),
        Resource::Component(ComponentDescriptor {
            id: widget.clone(),
            renders: QuestionType::new("fill-in"),
            size: 1,
        }),
        Resource::Question(Question {
            id: question.clone(),
            qtype: QuestionType::new("fill-in"),
            anchors: [slides.clone()].into(),
            component: widget,
            author: NodeId::from("prof"),
        }),
        Resource::Link(Link {
            id: hint.clone(),
            source: question.clone(),
            dest: slides,
            author: NodeId::from("ana"),
        }),
        Resource::Evaluation(Evaluation {
            id: ResourceId::new("ben", 0),
            target: hint,
            score: 0.8,
            evaluator: NodeId::from("ben"),
        }),
    ];
    let store: Store = content.iter().cloned().collect();

    let (ana, ben) = (NodeId::from("ana"), NodeId::from("ben"));
    let mut quiz = QuizState::new([ana.clone(), ben.clone()], 10);
    let shown = quiz
        .use_joker(&ana, &question, JokerKind::Link, &store, &Default::default())
        .expect("a link touches the question");
    println!("ana plays a link joker and sees {} link(s)", shown.item_count());
    println!("ana scores {}", quiz.answer_question(&ana, &question, 1.0, &store).unwrap());
    println!("ben scores {}", quiz.answer_question(&ben, &question, 1.0, &store).unwrap());

    // at the deadline every device reports over the backbone
    let devices: Vec<NodeState> = [&ana, &ben]
        .iter()
        .map(|id| {
            let mut n = NodeState::student(id.as_str(), &["security"]);
            n.store = store.clone();
            n
        })
        .collect();
    let mut ledger = CostLedger::default();
    let reports = inject_collect_status(
        quiz.players.values().zip(devices.iter()),
        &CooperationWeights::default(),
        &CostModel::default(),
        &mut ledger,
    );
    let ranking = quiz.finalize(10, &reports).unwrap();
    for e in &ranking.entries {
        println!(
            "#{} {}: knowledge {} + cooperation {:.1} = {}",
            e.rank, e.node, e.knowledge_points, e.cooperation_points, e.total
        );
    }
    println!("status collection cost {:.1}", ledger.total);
}
