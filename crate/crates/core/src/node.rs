//! Per-device state: store, interest profile, TTL bookkeeping, tombstones
//! and outstanding wants.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::quiz::AnswerStats;
use crate::resource::{
    aggregate_score, evict_expired, refresh_ttl, Eviction, InsertOutcome, NodeId, Resource,
    ResourceId, ResourceKind, Store, Tick, Topic, TtlParams, TtlRecord, TtlTable,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Staff,
    Student,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InterestProfile {
    pub topics: BTreeSet<Topic>,
}

impl InterestProfile {
    pub fn new<I, S>(topics: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<Topic>,
    {
        InterestProfile {
            topics: topics.into_iter().map(Into::into).collect(),
        }
    }

    pub fn intersects(&self, topics: &BTreeSet<Topic>) -> bool {
        !self.topics.is_disjoint(topics)
    }
}

/// How a node ages contributed content.
#[derive(Clone, Debug, PartialEq)]
pub struct TtlPolicy {
    pub params: TtlParams,
    pub tombstone_window: Tick,
    /// Nodes whose resources never expire.
    pub staff: Arc<BTreeSet<NodeId>>,
}

impl TtlPolicy {
    pub fn new(params: TtlParams, staff: Arc<BTreeSet<NodeId>>) -> Self {
        TtlPolicy {
            params,
            tombstone_window: 2 * params.ttl_base,
            staff,
        }
    }

    /// Staff-origin content, components, courses and evaluations carry no
    /// record; evaluations still disappear with their target.
    pub fn is_exempt(&self, r: &Resource) -> bool {
        if let Resource::Material(m) = r {
            if m.staff_origin {
                return true;
            }
        }
        self.staff.contains(&r.id().origin)
            || matches!(
                r.kind(),
                ResourceKind::Component | ResourceKind::Course | ResourceKind::Evaluation
            )
    }
}

/// An id a node needs but does not hold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WantRecord {
    pub node: NodeId,
    pub resource: ResourceId,
    pub blocked_since: Tick,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeState {
    pub id: NodeId,
    pub role: Role,
    pub interests: InterestProfile,
    pub store: Store,
    pub ttl: TtlTable,
    pub ttl_policy: Option<TtlPolicy>,
    /// Recently removed ids and the tick their tombstone lapses.
    pub tombstones: BTreeMap<ResourceId, Tick>,
    /// Wanted ids and the tick the want was registered.
    pub wants: BTreeMap<ResourceId, Tick>,
    pub answers: AnswerStats,
}

/// Result of [`NodeState::receive`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Receipt {
    pub outcome: InsertOutcome,
    pub satisfied_want: bool,
}

impl NodeState {
    pub fn new(id: impl Into<NodeId>, role: Role, interests: InterestProfile) -> Self {
        NodeState {
            id: id.into(),
            role,
            interests,
            store: Store::new(),
            ttl: TtlTable::new(),
            ttl_policy: None,
            tombstones: BTreeMap::new(),
            wants: BTreeMap::new(),
            answers: AnswerStats::default(),
        }
    }

    pub fn student(id: &str, topics: &[&str]) -> Self {
        NodeState::new(NodeId::from(id), Role::Student, InterestProfile::new(topics.iter().copied()))
    }

    pub fn with_ttl(mut self, policy: TtlPolicy) -> Self {
        self.ttl_policy = Some(policy);
        self
    }

    pub fn holds(&self, id: &ResourceId) -> bool {
        self.store.contains(id)
    }

    pub fn is_tombstoned(&self, id: &ResourceId) -> bool {
        self.tombstones.contains_key(id)
    }

    /// Adds a resource, starting its TTL and refreshing the target of an
    /// incoming evaluation. Dependencies must already be present.
    pub fn receive(&mut self, r: Resource, now: Tick) -> Receipt {
        let id = r.id().clone();
        let eval_target = match &r {
            Resource::Evaluation(e) => Some(e.target.clone()),
            _ => None,
        };
        let exempt = self.ttl_policy.as_ref().map(|p| p.is_exempt(&r));
        let outcome = self.store.insert(r);
        match &outcome {
            InsertOutcome::Added | InsertOutcome::Superseded(_) => {}
            InsertOutcome::Duplicate => {
                return Receipt {
                    outcome,
                    satisfied_want: false,
                }
            }
            InsertOutcome::Stale => {
                self.tombstone(id, now);
                return Receipt {
                    outcome,
                    satisfied_want: false,
                };
            }
        }
        if let InsertOutcome::Superseded(old) = &outcome {
            self.tombstone(old.clone(), now);
        }
        if let (Some(policy), Some(false)) = (&self.ttl_policy, exempt) {
            self.ttl
                .insert(id.clone(), TtlRecord::new(id.clone(), now, policy.params.ttl_base));
        }
        if let Some(target) = eval_target {
            self.refresh(&target, now);
        }
        let satisfied_want = self.wants.remove(&id).is_some();
        Receipt {
            outcome,
            satisfied_want,
        }
    }

    fn refresh(&mut self, target: &ResourceId, now: Tick) {
        let Some(policy) = &self.ttl_policy else {
            return;
        };
        if let Some(rec) = self.ttl.get(target) {
            let rating = aggregate_score(target, self.store.evaluations_of(target));
            let updated = refresh_ttl(rec, now, rating, &policy.params);
            self.ttl.insert(target.clone(), updated);
        }
    }

    fn tombstone(&mut self, id: ResourceId, now: Tick) {
        if let Some(policy) = &self.ttl_policy {
            self.tombstones.insert(id, now + policy.tombstone_window);
        }
    }

    /// End-of-tick housekeeping at instant `now`: drop lapsed tombstones,
    /// evict expired content and tombstone whatever was removed.
    pub fn evict(&mut self, now: Tick) -> Eviction {
        self.tombstones.retain(|_, until| *until >= now);
        let eviction = evict_expired(&mut self.store, &mut self.ttl, now);
        let removed: Vec<ResourceId> = eviction.removed().cloned().collect();
        for id in removed {
            self.tombstone(id, now);
        }
        eviction
    }

    pub fn want(&mut self, id: ResourceId, now: Tick) -> bool {
        if self.store.contains(&id) || self.wants.contains_key(&id) {
            return false;
        }
        self.wants.insert(id, now);
        true
    }

    pub fn want_records(&self) -> Vec<WantRecord> {
        self.wants
            .iter()
            .map(|(id, since)| WantRecord {
                node: self.id.clone(),
                resource: id.clone(),
                blocked_since: *since,
            })
            .collect()
    }

    /// Resources this node created that earn cooperation points.
    pub fn contributions(&self) -> impl Iterator<Item = &Resource> {
        self.store.iter().filter(move |r| {
            r.author() == &self.id
                && matches!(
                    r.kind(),
                    ResourceKind::Question | ResourceKind::Link | ResourceKind::Annotation
                )
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resource::fixtures::*;
    use crate::resource::Evaluation;

    fn policy(ttl_base: Tick) -> TtlPolicy {
        TtlPolicy::new(
            TtlParams {
                ttl_base,
                keep_threshold: 0.5,
            },
            Arc::new([NodeId::from("prof")].into()),
        )
    }

    fn eval_res(evaluator: &str, seq: u32, target: &str, score: f64) -> Resource {
        Resource::Evaluation(Evaluation {
            id: ResourceId::new(evaluator, seq),
            target: rid(target),
            score,
            evaluator: NodeId::from(evaluator),
        })
    }

    #[test]
    fn student_question_expires_without_good_ratings() {
        let mut n = NodeState::student("a", &["t"]).with_ttl(policy(10));
        n.receive(material("m1", "t", 1), 0);
        n.receive(component("c", "multiple-choice"), 0);
        n.receive(question("q", &["m1"], "c"), 0);
        assert!(n.ttl.contains_key(&rid("q")));
        assert!(!n.ttl.contains_key(&rid("m1")));
        n.receive(eval_res("b", 1, "q", 0.2), 5);
        assert_eq!(n.ttl[&rid("q")].expiry, 10);
        assert!(n.evict(10).is_empty());
        let ev = n.evict(11);
        assert!(ev.expired.contains(&rid("q")));
        assert!(ev.cascaded.contains(&ResourceId::new("b", 1)));
        assert!(n.is_tombstoned(&rid("q")));
    }

    #[test]
    fn good_rating_refreshes() {
        let mut n = NodeState::student("a", &["t"]).with_ttl(policy(10));
        n.receive(material("m1", "t", 1), 0);
        n.receive(component("c", "multiple-choice"), 0);
        n.receive(question("q", &["m1"], "c"), 0);
        n.receive(eval_res("b", 1, "q", 0.9), 8);
        assert_eq!(n.ttl[&rid("q")].expiry, 18);
    }

    #[test]
    fn wants_clear_on_receipt() {
        let mut n = NodeState::student("a", &["t"]);
        assert!(n.want(rid("m1"), 3));
        assert!(!n.want(rid("m1"), 4));
        assert_eq!(n.want_records()[0].blocked_since, 3);
        assert!(n.receive(material("m1", "t", 1), 5).satisfied_want);
        assert!(n.wants.is_empty());
        assert!(!n.want(rid("m1"), 6));
    }

    #[test]
    fn tombstones_lapse() {
        let mut n = NodeState::student("a", &["t"]).with_ttl(policy(2));
        n.receive(material("m1", "t", 1), 0);
        n.receive(component("c", "multiple-choice"), 0);
        n.receive(question("q", &["m1"], "c"), 0);
        n.evict(3);
        assert_eq!(n.tombstones[&rid("q")], 3 + 4);
        n.evict(7);
        assert!(n.is_tombstoned(&rid("q")));
        n.evict(8);
        assert!(!n.is_tombstoned(&rid("q")));
    }
}
