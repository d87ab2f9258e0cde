//! Pairwise information matching and dependency-ordered exchange between
//! devices in contact, plus deadlock detection within a partition.
//!
//! Two devices swap [`Digest`]s, [`match_information`] decides what each
//! side should receive (interest-filtered, closed under dependencies) and
//! [`execute_exchange`] applies the plan under a per-contact transfer budget.
//! Because every plan list is topologically ordered, any prefix of it leaves
//! the receiving store valid.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::node::{InterestProfile, NodeState, WantRecord};
use crate::resource::{
    InsertOutcome, NodeId, Resource, ResourceId, ResourceKind, Store, Tick, Topic,
};

pub const DEFAULT_CONTACT_BUDGET: u64 = 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigestEntry {
    pub kind: ResourceKind,
    pub topics: BTreeSet<Topic>,
    pub deps: BTreeSet<ResourceId>,
    pub size: u32,
}

/// Summary of a device's holdings, exchanged before any transfer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Digest {
    pub holder: NodeId,
    pub entries: BTreeMap<ResourceId, DigestEntry>,
    /// Ids the holder refuses to take back for now.
    pub tombstones: BTreeSet<ResourceId>,
    /// Ids the holder asked for, on-topic or not.
    pub wants: BTreeSet<ResourceId>,
}

impl Digest {
    pub fn holds(&self, id: &ResourceId) -> bool {
        self.entries.contains_key(id)
    }
}

/// Topic tags for every resource in `store`. Materials carry their own;
/// everything else inherits the union of its dependencies' tags, so a
/// question is about whatever its anchors are about.
pub fn resource_topics(store: &Store) -> BTreeMap<ResourceId, BTreeSet<Topic>> {
    fn visit(
        id: &ResourceId,
        store: &Store,
        memo: &mut BTreeMap<ResourceId, BTreeSet<Topic>>,
        on_path: &mut BTreeSet<ResourceId>,
    ) -> BTreeSet<Topic> {
        if let Some(t) = memo.get(id) {
            return t.clone();
        }
        let Some(r) = store.get(id) else {
            return BTreeSet::new();
        };
        if !on_path.insert(id.clone()) {
            return BTreeSet::new();
        }
        let topics = match r {
            Resource::Material(m) => m.topics.clone(),
            other => other
                .dependencies()
                .iter()
                .flat_map(|d| visit(d, store, memo, on_path))
                .collect(),
        };
        on_path.remove(id);
        memo.insert(id.clone(), topics.clone());
        topics
    }

    let mut memo = BTreeMap::new();
    let mut on_path = BTreeSet::new();
    for id in store.ids() {
        visit(id, store, &mut memo, &mut on_path);
    }
    memo
}

pub fn make_digest(node: &NodeState) -> Digest {
    let topics = resource_topics(&node.store);
    Digest {
        holder: node.id.clone(),
        entries: node
            .store
            .iter()
            .map(|r| {
                (
                    r.id().clone(),
                    DigestEntry {
                        kind: r.kind(),
                        topics: topics.get(r.id()).cloned().unwrap_or_default(),
                        deps: r.dependencies(),
                        size: r.size(),
                    },
                )
            })
            .collect(),
        tombstones: node.tombstones.keys().cloned().collect(),
        wants: node.wants.keys().cloned().collect(),
    }
}

/// Transfers for one contact, each list in dependency order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangePlan {
    pub to_a: Vec<ResourceId>,
    pub to_b: Vec<ResourceId>,
    pub total_units: u64,
    /// Ids left out because of a dependency cycle.
    pub dropped: BTreeSet<ResourceId>,
}

impl ExchangePlan {
    pub fn is_empty(&self) -> bool {
        self.to_a.is_empty() && self.to_b.is_empty()
    }
}

/// Resources `sender` should push to `receiver`: everything on-topic the
/// receiver lacks or wants, plus dependency closure regardless of topic. Anything
/// whose closure touches a receiver tombstone stays home.
fn select_for(sender: &Digest, receiver: &Digest, profile: &InterestProfile) -> BTreeSet<ResourceId> {
    let mut selected = BTreeSet::new();
    for (id, entry) in &sender.entries {
        if receiver.holds(id) || !(profile.intersects(&entry.topics) || receiver.wants.contains(id)) {
            continue;
        }
        let mut group = BTreeSet::new();
        let mut stack = vec![id.clone()];
        let mut blocked = false;
        while let Some(cur) = stack.pop() {
            if receiver.holds(&cur) || !group.insert(cur.clone()) {
                continue;
            }
            if receiver.tombstones.contains(&cur) {
                blocked = true;
                break;
            }
            if let Some(e) = sender.entries.get(&cur) {
                stack.extend(e.deps.iter().cloned());
            }
        }
        if !blocked {
            selected.extend(group);
        }
    }
    selected
}

/// Information matching for a contact between A and B.
pub fn match_information(
    dig_a: &Digest,
    dig_b: &Digest,
    prof_a: &InterestProfile,
    prof_b: &InterestProfile,
) -> ExchangePlan {
    let for_b = select_for(dig_a, dig_b, prof_b);
    let for_a = select_for(dig_b, dig_a, prof_a);
    let ordered_b = order_plan(&for_b, &dig_a.entries, |id| dig_b.holds(id));
    let ordered_a = order_plan(&for_a, &dig_b.entries, |id| dig_a.holds(id));
    let units = |ids: &[ResourceId], d: &Digest| -> u64 {
        ids.iter().map(|id| d.entries[id].size as u64).sum()
    };
    let total_units = units(&ordered_b.order, dig_a) + units(&ordered_a.order, dig_b);
    let mut dropped = ordered_a.dropped;
    dropped.extend(ordered_b.dropped);
    ExchangePlan {
        to_a: ordered_a.order,
        to_b: ordered_b.order,
        total_units,
        dropped,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OrderedPlan {
    pub order: Vec<ResourceId>,
    /// Members of a dependency cycle and anything depending on them.
    pub dropped: BTreeSet<ResourceId>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SyncError {
    #[error("dependency cycle among {} resources", .0.len())]
    CyclicDependency(BTreeSet<ResourceId>),
    #[error("contact lost after {} transfers", .0.applied.len())]
    ContactLost(ExchangeReport),
}

impl OrderedPlan {
    pub fn check(&self) -> Result<(), SyncError> {
        if self.dropped.is_empty() {
            Ok(())
        } else {
            Err(SyncError::CyclicDependency(self.dropped.clone()))
        }
    }
}

/// Topological order of `transfers`, where a dependency outside the set must
/// already be at the receiver. Ties go by kind priority, then id.
pub fn order_plan(
    transfers: &BTreeSet<ResourceId>,
    graph: &BTreeMap<ResourceId, DigestEntry>,
    receiver_has: impl Fn(&ResourceId) -> bool,
) -> OrderedPlan {
    let mut indegree: BTreeMap<&ResourceId, usize> = BTreeMap::new();
    let mut dependents: BTreeMap<&ResourceId, Vec<&ResourceId>> = BTreeMap::new();
    for id in transfers {
        let deps: Vec<&ResourceId> = graph
            .get(id)
            .map(|e| e.deps.iter().filter(|d| transfers.contains(*d) && !receiver_has(d)).collect())
            .unwrap_or_default();
        indegree.insert(id, deps.len());
        for d in deps {
            dependents.entry(d).or_default().push(id);
        }
    }
    let key = |id: &ResourceId| {
        let kind = graph.get(id).map(|e| e.kind).unwrap_or(ResourceKind::Course);
        (kind, id.clone())
    };
    let mut ready: BTreeSet<(ResourceKind, ResourceId)> = indegree
        .iter()
        .filter(|(_, n)| **n == 0)
        .map(|(id, _)| key(id))
        .collect();
    let mut order = Vec::with_capacity(transfers.len());
    while let Some(next) = ready.pop_first() {
        let id = next.1;
        if let Some(ds) = dependents.get(&id) {
            for d in ds {
                let n = indegree.get_mut(d).expect("dependent tracked");
                *n -= 1;
                if *n == 0 {
                    ready.insert(key(d));
                }
            }
        }
        order.push(id);
    }
    let placed: BTreeSet<&ResourceId> = order.iter().collect();
    let dropped = transfers
        .iter()
        .filter(|id| !placed.contains(id))
        .cloned()
        .collect();
    OrderedPlan { order, dropped }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContactWindow {
    pub budget: u64,
    /// Contact breaks after this many transfers.
    pub lost_after: Option<usize>,
}

impl ContactWindow {
    pub fn budget(units: u64) -> Self {
        ContactWindow {
            budget: units,
            lost_after: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedTransfer {
    pub from: NodeId,
    pub to: NodeId,
    pub resource: ResourceId,
    pub size: u32,
    /// Older evaluation replaced at the receiver, if any.
    pub superseded: Option<ResourceId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeReport {
    pub applied: Vec<AppliedTransfer>,
    pub units: u64,
    pub complete: bool,
}

fn transfer(from: &NodeState, to: &mut NodeState, id: &ResourceId, now: Tick) -> Option<AppliedTransfer> {
    let r = from.store.get(id)?.clone();
    let size = r.size();
    let receipt = to.receive(r, now);
    let superseded = match receipt.outcome {
        InsertOutcome::Added => None,
        InsertOutcome::Superseded(old) => Some(old),
        InsertOutcome::Duplicate | InsertOutcome::Stale => return None,
    };
    Some(AppliedTransfer {
        from: from.id.clone(),
        to: to.id.clone(),
        resource: id.clone(),
        size,
        superseded,
    })
}

/// Applies the plan alternating directions (B first) until both lists are
/// done or the next item in each direction no longer fits the budget.
pub fn execute_exchange(
    a: &mut NodeState,
    b: &mut NodeState,
    plan: &ExchangePlan,
    window: ContactWindow,
    now: Tick,
) -> Result<ExchangeReport, SyncError> {
    let mut report = ExchangeReport::default();
    let mut remaining = window.budget;
    let (mut ia, mut ib) = (0usize, 0usize);
    let (mut a_open, mut b_open) = (true, true);
    let mut to_b_turn = true;
    let size_of = |n: &NodeState, id: &ResourceId| n.store.get(id).map(|r| r.size() as u64);

    loop {
        a_open &= ia < plan.to_a.len();
        b_open &= ib < plan.to_b.len();
        if !a_open && !b_open {
            break;
        }
        let use_b = if to_b_turn { b_open } else { !a_open };
        to_b_turn = !to_b_turn;
        let (sender, receiver, id, cursor, open) = if use_b {
            (&*a, &mut *b, &plan.to_b[ib], &mut ib, &mut b_open)
        } else {
            (&*b, &mut *a, &plan.to_a[ia], &mut ia, &mut a_open)
        };
        let Some(size) = size_of(sender, id) else {
            *cursor += 1;
            continue;
        };
        if size > remaining {
            // keep the prefix property: nothing later in this list goes
            *open = false;
            continue;
        }
        if window.lost_after == Some(report.applied.len()) {
            return Err(SyncError::ContactLost(report));
        }
        *cursor += 1;
        if let Some(t) = transfer(sender, receiver, id, now) {
            remaining -= size;
            report.units += size;
            report.applied.push(t);
        }
    }
    report.complete = ia >= plan.to_a.len() && ib >= plan.to_b.len();
    Ok(report)
}

/// Wanted ids that no device in the partition can supply.
pub fn detect_deadlock(partition: &[&NodeState], wants: &[WantRecord]) -> BTreeSet<ResourceId> {
    let members: BTreeSet<&NodeId> = partition.iter().map(|n| &n.id).collect();
    let holder = |id: &ResourceId| partition.iter().find(|n| n.holds(id));
    let mut blocked = BTreeSet::new();
    let mut seen = BTreeSet::new();
    let mut stack: Vec<ResourceId> = wants
        .iter()
        .filter(|w| members.contains(&w.node))
        .map(|w| w.resource.clone())
        .collect();
    while let Some(id) = stack.pop() {
        if !seen.insert(id.clone()) {
            continue;
        }
        match holder(&id) {
            Some(n) => {
                if let Some(r) = n.store.get(&id) {
                    stack.extend(r.dependencies());
                }
            }
            None => {
                blocked.insert(id);
            }
        }
    }
    blocked
}

/// One anti-entropy round: every contact edge exchanges once, in order, with
/// the given budget per contact.
pub fn anti_entropy_round(
    nodes: &mut [NodeState],
    edges: &[(usize, usize)],
    budget: u64,
    now: Tick,
) -> Vec<ExchangeReport> {
    let mut reports = Vec::new();
    for &(u, v) in edges {
        if u == v {
            continue;
        }
        let (lo, hi) = (u.min(v), u.max(v));
        let (left, right) = nodes.split_at_mut(hi);
        let (a, b) = (&mut left[lo], &mut right[0]);
        let plan = match_information(&make_digest(a), &make_digest(b), &a.interests, &b.interests);
        if plan.is_empty() {
            continue;
        }
        if let Ok(r) = execute_exchange(a, b, &plan, ContactWindow::budget(budget), now) {
            reports.push(r);
        }
    }
    reports
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resource::fixtures::*;

    fn node_with(id: &str, topics: &[&str], items: Vec<Resource>) -> NodeState {
        let mut n = NodeState::student(id, topics);
        for r in items {
            n.receive(r, 0);
        }
        n
    }

    fn entry(kind: ResourceKind, deps: &[&str], size: u32) -> DigestEntry {
        DigestEntry {
            kind,
            topics: BTreeSet::new(),
            deps: deps.iter().map(|d| rid(d)).collect(),
            size,
        }
    }

    #[test]
    fn digest_mirrors_store() {
        let empty = NodeState::student("a", &["t"]);
        assert!(make_digest(&empty).entries.is_empty());
        let n = node_with("a", &["t"], vec![material("m1", "t", 1), component("c", "mc"), question("q1", &["m1"], "c")]);
        let d = make_digest(&n);
        assert_eq!(d.entries.len(), 3);
        assert_eq!(d.entries[&rid("q1")].deps, [rid("m1"), rid("c")].into());
        assert_eq!(d.entries[&rid("q1")].topics, ["t".to_owned()].into());
        assert!(d.entries[&rid("c")].topics.is_empty());
        assert_eq!(d, make_digest(&n));
    }

    #[test]
    fn identical_stores_need_nothing() {
        let items = vec![material("m1", "t", 1), component("c", "mc"), question("q1", &["m1"], "c")];
        let a = node_with("a", &["t"], items.clone());
        let b = node_with("b", &["t"], items);
        let plan = match_information(&make_digest(&a), &make_digest(&b), &a.interests, &b.interests);
        assert!(plan.is_empty());
    }

    #[test]
    fn closure_rides_along_in_order() {
        let a = node_with("a", &["t"], vec![material("m1", "t", 1), component("c", "mc"), question("q1", &["m1"], "c")]);
        let b = NodeState::student("b", &["t"]);
        let plan = match_information(&make_digest(&a), &make_digest(&b), &a.interests, &b.interests);
        assert_eq!(plan.to_b, vec![rid("c"), rid("m1"), rid("q1")]);
        assert!(plan.to_a.is_empty());
        assert_eq!(plan.total_units, 3);
    }

    #[test]
    fn off_topic_receiver_gets_nothing() {
        let a = node_with("a", &["t"], vec![material("m1", "t", 1)]);
        let b = NodeState::student("b", &["other"]);
        let plan = match_information(&make_digest(&a), &make_digest(&b), &a.interests, &b.interests);
        assert!(plan.to_b.is_empty());
    }

    #[test]
    fn link_pulls_off_topic_endpoint() {
        let mut a = node_with("a", &["t", "u"], vec![material("m1", "t", 1), material("m2", "u", 1)]);
        a.receive(link("l", "m1", "m2"), 0);
        let b = NodeState::student("b", &["t"]);
        let plan = match_information(&make_digest(&a), &make_digest(&b), &a.interests, &b.interests);
        assert_eq!(plan.to_b, vec![rid("m1"), rid("m2"), rid("l")]);
    }

    #[test]
    fn tombstoned_ids_are_not_resent() {
        let a = node_with("a", &["t"], vec![material("m1", "t", 1), component("c", "mc"), question("q1", &["m1"], "c")]);
        let mut b = NodeState::student("b", &["t"]);
        b.tombstones.insert(rid("q1"), 100);
        let plan = match_information(&make_digest(&a), &make_digest(&b), &a.interests, &b.interests);
        assert!(!plan.to_b.contains(&rid("q1")));
        assert!(plan.to_b.contains(&rid("m1")));
    }

    #[test]
    fn order_respects_remote_holdings() {
        let graph: BTreeMap<_, _> = [
            (rid("q1"), entry(ResourceKind::Question, &["m1", "c"], 1)),
        ]
        .into();
        let held: BTreeSet<_> = [rid("m1"), rid("c")].into();
        let p = order_plan(&[rid("q1")].into(), &graph, |id| held.contains(id));
        assert_eq!(p.order, vec![rid("q1")]);
    }

    #[test]
    fn cycle_is_reported_and_dropped() {
        let graph: BTreeMap<_, _> = [
            (rid("x"), entry(ResourceKind::Link, &["y"], 1)),
            (rid("y"), entry(ResourceKind::Link, &["x"], 1)),
            (rid("m"), entry(ResourceKind::Material, &[], 1)),
        ]
        .into();
        let p = order_plan(&[rid("x"), rid("y"), rid("m")].into(), &graph, |_| false);
        assert_eq!(p.order, vec![rid("m")]);
        assert_eq!(p.dropped, [rid("x"), rid("y")].into());
        assert!(matches!(p.check(), Err(SyncError::CyclicDependency(_))));
    }

    fn plan_for(a: &NodeState, b: &NodeState) -> ExchangePlan {
        match_information(&make_digest(a), &make_digest(b), &a.interests, &b.interests)
    }

    #[test]
    fn budget_limits_and_prefix_validity() {
        let src = vec![material("m1", "t", 5), component("c", "mc"), question("q1", &["m1"], "c")];
        // roomy budget
        let mut a = node_with("a", &["t"], src.clone());
        let mut b = NodeState::student("b", &["t"]);
        let plan = plan_for(&a, &b);
        let r = execute_exchange(&mut a, &mut b, &plan, ContactWindow::budget(10), 1).unwrap();
        assert!(r.complete);
        assert_eq!(r.units, 7);

        // plan [m1(5), q1(1)] once c is already held: budget 5 takes only m1
        let mut a = node_with("a", &["t"], src.clone());
        let mut b = node_with("b", &["t"], vec![component("c", "mc")]);
        let plan = plan_for(&a, &b);
        assert_eq!(plan.to_b, vec![rid("m1"), rid("q1")]);
        let r = execute_exchange(&mut a, &mut b, &plan, ContactWindow::budget(5), 1).unwrap();
        assert_eq!(r.applied.len(), 1);
        assert!(b.holds(&rid("m1")) && !b.holds(&rid("q1")));
        assert!(b.store.validate().is_empty());
        assert!(!r.complete);

        let mut a = node_with("a", &["t"], src);
        let mut b = NodeState::student("b", &["t"]);
        let plan = plan_for(&a, &b);
        let r = execute_exchange(&mut a, &mut b, &plan, ContactWindow::budget(0), 1).unwrap();
        assert!(r.applied.is_empty());
        assert!(b.store.is_empty());
    }

    #[test]
    fn exchange_alternates_directions() {
        let mut a = node_with("a", &["t"], vec![material("m1", "t", 1), material("m3", "t", 1)]);
        let mut b = node_with("b", &["t"], vec![material("m2", "t", 1), material("m4", "t", 1)]);
        let plan = plan_for(&a, &b);
        let r = execute_exchange(&mut a, &mut b, &plan, ContactWindow::budget(10), 0).unwrap();
        let dirs: Vec<_> = r.applied.iter().map(|t| t.to.as_str()).collect();
        assert_eq!(dirs, ["b", "a", "b", "a"]);
    }

    #[test]
    fn contact_loss_keeps_prefix() {
        let mut a = node_with("a", &["t"], vec![material("m1", "t", 1), component("c", "mc"), question("q1", &["m1"], "c")]);
        let mut b = NodeState::student("b", &["t"]);
        let plan = plan_for(&a, &b);
        let window = ContactWindow { budget: 10, lost_after: Some(2) };
        let Err(SyncError::ContactLost(report)) = execute_exchange(&mut a, &mut b, &plan, window, 0) else {
            panic!()
        };
        assert_eq!(report.applied.len(), 2);
        assert_eq!(b.store.len(), 2);
        assert!(b.store.validate().is_empty());
    }

    fn want(node: &str, id: &str) -> WantRecord {
        WantRecord { node: NodeId::from(node), resource: rid(id), blocked_since: 0 }
    }

    #[test]
    fn deadlock_cases() {
        let a = NodeState::student("a", &["t"]);
        let b = node_with("b", &["t"], vec![material("r", "t", 1)]);
        assert!(detect_deadlock(&[&a, &b], &[want("a", "r")]).is_empty());
        assert_eq!(detect_deadlock(&[&a], &[want("a", "r")]), [rid("r")].into());
        // wants registered outside the partition are ignored
        assert!(detect_deadlock(&[&b], &[want("a", "zzz")]).is_empty());
    }

    #[test]
    fn wanted_items_cross_interest_lines() {
        let a = node_with("a", &["t"], vec![material("m1", "t", 1), material("m2", "u", 1)]);
        let mut b = NodeState::student("b", &["t"]);
        let plan = match_information(&make_digest(&a), &make_digest(&b), &a.interests, &b.interests);
        assert_eq!(plan.to_b, vec![rid("m1")]);
        b.want(rid("m2"), 0);
        let plan = match_information(&make_digest(&a), &make_digest(&b), &a.interests, &b.interests);
        assert_eq!(plan.to_b, vec![rid("m1"), rid("m2")]);
    }
}
