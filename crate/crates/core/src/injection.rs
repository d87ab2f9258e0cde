//! Cost-accounted use of the backbone link: resolving partition deadlocks,
//! splitting a clique's fetch so each member pays for a share, and gathering
//! quiz status at the deadline.
//!
//! Ad-hoc transfers are free. Every backbone session costs a fixed message
//! charge plus a per-unit charge for what it carries, recorded in a
//! [`CostLedger`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::node::{NodeState, WantRecord};
use crate::quiz::{cooperation_points, CooperationWeights, Player, StatusReport};
use crate::resource::{closure, Evaluation, NodeId, Resource, ResourceId, Store, Tick};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub backbone_unit_cost: f64,
    pub backbone_message_cost: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            backbone_unit_cost: 1.0,
            backbone_message_cost: 2.0,
        }
    }
}

impl CostModel {
    pub fn adhoc_cost(&self) -> f64 {
        0.0
    }

    pub fn session_cost(&self, units: u64) -> f64 {
        self.backbone_message_cost + units as f64 * self.backbone_unit_cost
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionPolicy {
    /// Default per-node budget for nodes that declare none.
    pub budget: f64,
    pub demand_threshold: usize,
    pub deadlock_grace: Tick,
}

impl Default for InjectionPolicy {
    fn default() -> Self {
        InjectionPolicy {
            budget: 100.0,
            demand_threshold: 1,
            deadlock_grace: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionCause {
    Deadlock,
    CliqueShare,
    QuizStatus,
}

impl fmt::Display for InjectionCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            InjectionCause::Deadlock => "deadlock",
            InjectionCause::CliqueShare => "clique_share",
            InjectionCause::QuizStatus => "quiz_status",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CauseTotals {
    pub sessions: u64,
    pub units: u64,
    pub cost: f64,
}

/// Cumulative backbone spend.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub per_node: BTreeMap<NodeId, f64>,
    pub total: f64,
    pub by_cause: BTreeMap<InjectionCause, CauseTotals>,
}

impl CostLedger {
    pub fn spent(&self, node: &NodeId) -> f64 {
        self.per_node.get(node).copied().unwrap_or(0.0)
    }

    pub fn charge(&mut self, node: &NodeId, cause: InjectionCause, units: u64, amount: f64) {
        *self.per_node.entry(node.clone()).or_default() += amount;
        self.total += amount;
        let c = self.by_cause.entry(cause).or_default();
        c.sessions += 1;
        c.units += units;
        c.cost += amount;
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InjectionError {
    #[error("clique has no members")]
    EmptyClique,
    #[error("{node} needs {cost} but has {remaining} left")]
    BudgetExceeded {
        node: NodeId,
        cost: f64,
        remaining: f64,
    },
    #[error("backbone repository lacks {0}")]
    NotInRepository(ResourceId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeferReason {
    Grace,
    Demand,
    NotInRepository,
    NoBackbone,
    Budget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Decision {
    Inject {
        resource: ResourceId,
        fetcher: NodeId,
        cost: f64,
    },
    Defer {
        resource: ResourceId,
        reason: DeferReason,
    },
}

/// Everything a decision needs besides the partition itself.
pub struct InjectionContext<'a> {
    /// What the fixed network can serve.
    pub repository: &'a Store,
    pub model: &'a CostModel,
    pub policy: &'a InjectionPolicy,
    pub ledger: &'a CostLedger,
    /// Budget of every node with a backbone link.
    pub budgets: &'a BTreeMap<NodeId, f64>,
    pub now: Tick,
}

impl InjectionContext<'_> {
    pub fn remaining(&self, node: &NodeId) -> Option<f64> {
        self.budgets.get(node).map(|b| b - self.ledger.spent(node))
    }

    /// Units a fetch of `roots` would carry to `node`.
    pub fn fetch_units(&self, node: &NodeState, roots: &BTreeSet<ResourceId>) -> Result<u64, InjectionError> {
        missing_closure(node, roots, self.repository).map(|ids| units(&ids, self.repository))
    }
}

fn missing_closure(
    node: &NodeState,
    roots: &BTreeSet<ResourceId>,
    repository: &Store,
) -> Result<Vec<ResourceId>, InjectionError> {
    // repository closure, minus what the node already holds
    let full = closure(repository, roots).map_err(|e| match e {
        crate::resource::ClosureError::DanglingReference(ids) => {
            InjectionError::NotInRepository(ids.into_iter().next().expect("non-empty"))
        }
    })?;
    Ok(full.into_iter().filter(|id| !node.holds(id)).collect())
}

fn units(ids: &[ResourceId], repository: &Store) -> u64 {
    ids.iter()
        .filter_map(|id| repository.get(id))
        .map(|r| r.size() as u64)
        .sum()
}

/// Decides, per blocked resource, whether some node in the partition should
/// fetch it over the backbone now.
pub fn decide_injection(
    blocked: &BTreeSet<ResourceId>,
    wants: &[WantRecord],
    partition: &[&NodeState],
    ctx: &InjectionContext<'_>,
) -> Vec<Decision> {
    let members: BTreeMap<&NodeId, &NodeState> = partition.iter().map(|n| (&n.id, *n)).collect();
    let mut decisions = Vec::new();
    for r in blocked {
        let wanting: Vec<&WantRecord> = wants
            .iter()
            .filter(|w| &w.resource == r && members.contains_key(&w.node))
            .collect();
        if wanting.is_empty() {
            continue;
        }
        let defer = |reason| Decision::Defer {
            resource: r.clone(),
            reason,
        };
        let since = wanting.iter().map(|w| w.blocked_since).min().expect("non-empty");
        if ctx.now.saturating_sub(since) <= ctx.policy.deadlock_grace {
            decisions.push(defer(DeferReason::Grace));
            continue;
        }
        let demand: BTreeSet<&NodeId> = wanting.iter().map(|w| &w.node).collect();
        if demand.len() < ctx.policy.demand_threshold {
            decisions.push(defer(DeferReason::Demand));
            continue;
        }
        if !ctx.repository.contains(r) {
            decisions.push(defer(DeferReason::NotInRepository));
            continue;
        }
        // blocked node with the most budget left; lowest id on ties
        let fetcher = demand
            .iter()
            .filter_map(|n| ctx.remaining(n).map(|left| (*n, left)))
            .max_by(|(na, a), (nb, b)| a.total_cmp(b).then_with(|| nb.cmp(na)));
        let Some((fetcher, left)) = fetcher else {
            decisions.push(defer(DeferReason::NoBackbone));
            continue;
        };
        let node = members[fetcher];
        let cost = match ctx.fetch_units(node, &[r.clone()].into()) {
            Ok(u) => ctx.model.session_cost(u),
            Err(_) => {
                decisions.push(defer(DeferReason::NotInRepository));
                continue;
            }
        };
        if cost > left {
            decisions.push(defer(DeferReason::Budget));
            continue;
        }
        decisions.push(Decision::Inject {
            resource: r.clone(),
            fetcher: fetcher.clone(),
            cost,
        });
    }
    decisions
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SharePlan {
    pub shares: BTreeMap<NodeId, Vec<ResourceId>>,
    pub loads: BTreeMap<NodeId, u64>,
}

impl SharePlan {
    pub fn max_load(&self) -> u64 {
        self.loads.values().copied().max().unwrap_or(0)
    }

    pub fn total_units(&self) -> u64 {
        self.loads.values().sum()
    }

    /// Backbone cost each member pays for its share.
    pub fn costs(&self, model: &CostModel) -> BTreeMap<NodeId, f64> {
        self.loads
            .iter()
            .map(|(n, u)| (n.clone(), model.session_cost(*u)))
            .collect()
    }
}

/// Splits `wanted` (id, size) across the clique with longest-processing-time
/// first: largest item to the currently lightest member.
pub fn plan_clique_share(
    clique: &BTreeSet<NodeId>,
    wanted: &[(ResourceId, u32)],
) -> Result<SharePlan, InjectionError> {
    if clique.is_empty() {
        return Err(InjectionError::EmptyClique);
    }
    let mut items: Vec<&(ResourceId, u32)> = wanted.iter().collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut plan = SharePlan {
        shares: clique.iter().map(|n| (n.clone(), Vec::new())).collect(),
        loads: clique.iter().map(|n| (n.clone(), 0)).collect(),
    };
    for (id, size) in items {
        let lightest = plan
            .loads
            .iter()
            .min_by(|(na, a), (nb, b)| a.cmp(b).then_with(|| na.cmp(nb)))
            .map(|(n, _)| n.clone())
            .expect("non-empty clique");
        *plan.loads.get_mut(&lightest).expect("member") += *size as u64;
        plan.shares.get_mut(&lightest).expect("member").push(id.clone());
    }
    Ok(plan)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FetchReport {
    pub added: Vec<ResourceId>,
    pub units: u64,
    pub charged: f64,
}

/// Backbone fetch of `resources` and whatever they depend on. Only items the
/// node lacks are carried and charged; the session charge always applies.
#[allow(clippy::too_many_arguments)]
pub fn inject_fetch(
    node: &mut NodeState,
    resources: &BTreeSet<ResourceId>,
    repository: &Store,
    model: &CostModel,
    ledger: &mut CostLedger,
    budget: f64,
    cause: InjectionCause,
    now: Tick,
) -> Result<FetchReport, InjectionError> {
    let missing = missing_closure(node, resources, repository)?;
    let carried = units(&missing, repository);
    let cost = model.session_cost(carried);
    let remaining = budget - ledger.spent(&node.id);
    if cost > remaining {
        return Err(InjectionError::BudgetExceeded {
            node: node.id.clone(),
            cost,
            remaining,
        });
    }
    // dependencies first so the store never holds a dangling reference
    let mut added = Vec::new();
    let mut pending: Vec<Resource> = missing
        .iter()
        .filter_map(|id| repository.get(id).cloned())
        .collect();
    while !pending.is_empty() {
        let before = pending.len();
        pending.retain(|r| {
            if r.dependencies().iter().all(|d| node.holds(d)) {
                node.receive(r.clone(), now);
                added.push(r.id().clone());
                false
            } else {
                true
            }
        });
        if pending.len() == before {
            break;
        }
    }
    ledger.charge(&node.id, cause, carried, cost);
    Ok(FetchReport {
        added,
        units: carried,
        charged: cost,
    })
}

/// Collects every player's totals over the backbone at the deadline; each
/// device contacted costs one message.
pub fn inject_collect_status<'a>(
    devices: impl IntoIterator<Item = (&'a Player, &'a NodeState)>,
    weights: &CooperationWeights,
    model: &CostModel,
    ledger: &mut CostLedger,
) -> Vec<StatusReport> {
    devices
        .into_iter()
        .map(|(player, node)| {
            ledger.charge(
                &node.id,
                InjectionCause::QuizStatus,
                0,
                model.backbone_message_cost,
            );
            StatusReport {
                node: player.node.clone(),
                knowledge_points: player.knowledge_points,
                cooperation_points: device_cooperation(node, weights),
            }
        })
        .collect()
}

/// Cooperation points as seen by the device: its own contributions still in
/// its store, rated by the evaluations the store holds.
pub fn device_cooperation(node: &NodeState, weights: &CooperationWeights) -> f64 {
    let evals: Vec<&Evaluation> = node
        .store
        .iter()
        .filter_map(|r| match r {
            Resource::Evaluation(e) => Some(e),
            _ => None,
        })
        .collect();
    cooperation_points(node.contributions(), &evals, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resource::fixtures::*;

    fn nid(s: &str) -> NodeId {
        NodeId::from(s)
    }

    fn repo() -> Store {
        [
            material("m1", "t", 5),
            material("big", "t", 200),
            component("c", "multiple-choice"),
            question("q", &["m1"], "c"),
        ]
        .into_iter()
        .collect()
    }

    fn want(node: &str, id: &str, since: Tick) -> WantRecord {
        WantRecord {
            node: nid(node),
            resource: rid(id),
            blocked_since: since,
        }
    }

    #[test]
    fn injection_gates() {
        let repo = repo();
        let model = CostModel { backbone_unit_cost: 1.0, backbone_message_cost: 5.0 };
        let policy = InjectionPolicy { budget: 100.0, demand_threshold: 1, deadlock_grace: 3 };
        let ledger = CostLedger::default();
        let budgets: BTreeMap<_, _> = [(nid("a"), 100.0), (nid("b"), 100.0)].into();
        let a = NodeState::student("a", &["t"]);
        let b = NodeState::student("b", &["t"]);
        let ctx = InjectionContext { repository: &repo, model: &model, policy: &policy, ledger: &ledger, budgets: &budgets, now: 5 };
        let wants = [want("a", "m1", 0), want("b", "m1", 0)];
        let d = decide_injection(&[rid("m1")].into(), &wants, &[&a, &b], &ctx);
        assert_eq!(d, vec![Decision::Inject { resource: rid("m1"), fetcher: nid("a"), cost: 10.0 }]);

        let early = InjectionContext { now: 3, ..ctx };
        let d = decide_injection(&[rid("m1")].into(), &wants, &[&a, &b], &early);
        assert!(matches!(d[0], Decision::Defer { reason: DeferReason::Grace, .. }));

        let ctx = InjectionContext { repository: &repo, model: &model, policy: &policy, ledger: &ledger, budgets: &budgets, now: 5 };
        let d = decide_injection(&[rid("big")].into(), &[want("a", "big", 0)], &[&a], &ctx);
        assert!(matches!(d[0], Decision::Defer { reason: DeferReason::Budget, .. }));

        let none: BTreeMap<NodeId, f64> = BTreeMap::new();
        let ctx = InjectionContext { budgets: &none, ..ctx };
        let d = decide_injection(&[rid("m1")].into(), &[want("a", "m1", 0)], &[&a], &ctx);
        assert!(matches!(d[0], Decision::Defer { reason: DeferReason::NoBackbone, .. }));
    }

    #[test]
    fn fetcher_has_most_budget_left() {
        let repo = repo();
        let model = CostModel::default();
        let policy = InjectionPolicy::default();
        let mut ledger = CostLedger::default();
        ledger.charge(&nid("a"), InjectionCause::Deadlock, 0, 50.0);
        let budgets: BTreeMap<_, _> = [(nid("a"), 100.0), (nid("b"), 80.0)].into();
        let a = NodeState::student("a", &["t"]);
        let b = NodeState::student("b", &["t"]);
        let ctx = InjectionContext { repository: &repo, model: &model, policy: &policy, ledger: &ledger, budgets: &budgets, now: 10 };
        let d = decide_injection(&[rid("m1")].into(), &[want("a", "m1", 0), want("b", "m1", 0)], &[&a, &b], &ctx);
        assert!(matches!(&d[0], Decision::Inject { fetcher, .. } if fetcher == &nid("b")));
    }

    #[test]
    fn lpt_examples() {
        let members = |k: usize| -> BTreeSet<NodeId> { (0..k).map(|i| nid(&format!("n{i}"))).collect() };
        let slides: Vec<_> = (0..30).map(|i| (ResourceId::new("slides", i), 1)).collect();
        let p = plan_clique_share(&members(3), &slides).unwrap();
        assert!(p.loads.values().all(|l| *l == 10));
        assert_eq!(p.total_units(), 30);
        let p = plan_clique_share(&members(1), &slides).unwrap();
        assert_eq!(p.max_load(), 30);
        let sized: Vec<_> = [5, 4, 3, 3, 1].iter().enumerate().map(|(i, s)| (ResourceId::new("x", i as u32), *s)).collect();
        assert_eq!(plan_clique_share(&members(2), &sized).unwrap().max_load(), 8);
        assert_eq!(plan_clique_share(&BTreeSet::new(), &sized), Err(InjectionError::EmptyClique));
    }

    #[test]
    fn fetch_charges_closure_and_session() {
        let repo = repo();
        let model = CostModel { backbone_unit_cost: 1.0, backbone_message_cost: 2.0 };
        let mut ledger = CostLedger::default();
        let mut n = NodeState::student("a", &["t"]);
        let r = inject_fetch(&mut n, &[rid("m1")].into(), &repo, &model, &mut ledger, 100.0, InjectionCause::Deadlock, 0).unwrap();
        assert_eq!(r.charged, 7.0);

        // question pulls its component; m1 already held
        let r = inject_fetch(&mut n, &[rid("q")].into(), &repo, &model, &mut ledger, 100.0, InjectionCause::Deadlock, 0).unwrap();
        assert_eq!(r.added, vec![rid("c"), rid("q")]);
        assert_eq!(r.charged, 2.0 + 2.0);
        assert!(n.store.validate().is_empty());

        let before = n.store.clone();
        let r = inject_fetch(&mut n, &[rid("q")].into(), &repo, &model, &mut ledger, 100.0, InjectionCause::Deadlock, 0).unwrap();
        assert!(r.added.is_empty());
        assert_eq!(r.charged, 2.0);
        assert_eq!(n.store, before);
        assert_eq!(ledger.total, 7.0 + 4.0 + 2.0);
        assert_eq!(ledger.total, ledger.per_node.values().sum::<f64>());

        let err = inject_fetch(&mut n, &[rid("big")].into(), &repo, &model, &mut ledger, 100.0, InjectionCause::Deadlock, 0);
        assert!(matches!(err, Err(InjectionError::BudgetExceeded { .. })));
        assert!(!n.holds(&rid("big")));
    }

    #[test]
    fn status_collection_charges_each_device() {
        let model = CostModel::default();
        let mut ledger = CostLedger::default();
        let nodes: Vec<_> = (0..6).map(|i| NodeState::student(&format!("s{i}"), &["t"])).collect();
        let players: Vec<_> = nodes.iter().map(|n| Player::new(n.id.clone())).collect();
        let reports = inject_collect_status(players.iter().zip(&nodes), &CooperationWeights::default(), &model, &mut ledger);
        assert_eq!(reports.len(), 6);
        assert_eq!(ledger.by_cause[&InjectionCause::QuizStatus].sessions, 6);
        let empty = inject_collect_status(std::iter::empty(), &CooperationWeights::default(), &model, &mut ledger);
        assert!(empty.is_empty());
    }
}
