//! Backbone cost accounting: a clique splits one fetch with LPT shares,
//! compared with every member fetching alone.
//!
//! ```bash
//! cargo run --example injection_costs
//! ```

use std::collections::BTreeSet;

use carla::injection::{inject_fetch, plan_clique_share, CostLedger, CostModel, InjectionCause};
use carla::node::NodeState;
use carla::resource::{MaterialUnit, NodeId, Resource, ResourceId, Store};

fn main() {
    let sizes = [8u32, 7, 6, 5, 4, 4, 3, 2];
    let repository: Store = sizes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            Resource::Material(MaterialUnit {
                id: ResourceId::new("prof", i as u32),
                topics: ["security".to_owned()].into(),
                size: *s,
                staff_origin: true,
            })
        })
        .collect();
    let wanted: Vec<(ResourceId, u32)> = repository.iter().map(|r| (r.id().clone(), r.size())).collect();
    let model = CostModel::default();

    for k in [2usize, 3, 5] {
        let clique: BTreeSet<NodeId> = (0..k).map(|i| NodeId::from(format!("s{i}").as_str())).collect();
        let plan = plan_clique_share(&clique, &wanted).unwrap();
        let mut shared = CostLedger::default();
        let mut alone = CostLedger::default();
        for member in &clique {
            let share: BTreeSet<ResourceId> = plan.shares[member].iter().cloned().collect();
            let mut node = NodeState::student(member.as_str(), &["security"]);
            inject_fetch(&mut node, &share, &repository, &model, &mut shared, f64::MAX, InjectionCause::CliqueShare, 0).unwrap();
            let everything: BTreeSet<ResourceId> = repository.ids().cloned().collect();
            let mut solo = NodeState::student(member.as_str(), &["security"]);
            inject_fetch(&mut solo, &everything, &repository, &model, &mut alone, f64::MAX, InjectionCause::Deadlock, 0).unwrap();
        }
        println!(
            "k={k}: shares {:?}, clique pays {:.0}, members alone pay {:.0}",
            plan.loads.values().collect::<Vec<_>>(),
            shared.total,
            alone.total
        );
    }
}
