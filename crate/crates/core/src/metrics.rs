//! Run metrics, computed by folding the event stream. The live run and
//! `report` over a trace go through the same accumulator, so both produce
//! the same report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::injection::CauseTotals;
use crate::netsim::contact::ContactGraph;
use crate::quiz::RankEntry;
use crate::resource::{NodeId, Resource, ResourceId, Store, Tick, Topic};
use crate::trace::{DeadlockState, EventData, SimEvent};

/// Share of interested nodes that must hold a resource before it counts as
/// disseminated.
pub const COVERAGE_TARGET: f64 = 0.9;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BackboneCosts {
    pub total: f64,
    pub by_cause: BTreeMap<String, CauseTotals>,
    pub by_node: BTreeMap<NodeId, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub last_tick: Tick,
    pub nodes: usize,
    /// Ticks from first appearance to 90% interested coverage; `None` if
    /// never reached.
    pub latency: BTreeMap<ResourceId, Option<Tick>>,
    pub coverage: Vec<(Tick, f64)>,
    pub partitions: Vec<(Tick, usize)>,
    pub partitions_mean: f64,
    pub partitions_max: usize,
    pub backbone: BackboneCosts,
    pub deadlocks_detected: u64,
    pub deadlocks_resolved: u64,
    pub evictions: BTreeMap<String, u64>,
    pub exchanges: u64,
    pub exchange_units: u64,
    pub authored: u64,
    pub lectures: u64,
    pub trainings: u64,
    pub quiz_answers: u64,
    pub joker_uses: u64,
    pub ranking: Vec<RankEntry>,
}

impl MetricsReport {
    /// Long-format CSV: `metric,tick_or_scope,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,tick_or_scope,value\n");
        let mut row = |m: &str, scope: &dyn std::fmt::Display, v: &dyn std::fmt::Display| {
            writeln!(out, "{m},{scope},{v}").expect("write to string");
        };
        row("seed", &"run", &self.seed);
        row("last_tick", &"run", &self.last_tick);
        row("nodes", &"run", &self.nodes);
        for (id, lat) in &self.latency {
            match lat {
                Some(t) => row("latency", id, t),
                None => row("latency", id, &"unreached"),
            }
        }
        for (t, c) in &self.coverage {
            row("coverage", t, c);
        }
        for (t, p) in &self.partitions {
            row("partitions", t, p);
        }
        row("partitions_mean", &"run", &self.partitions_mean);
        row("partitions_max", &"run", &self.partitions_max);
        row("backbone_cost", &"total", &self.backbone.total);
        for (cause, t) in &self.backbone.by_cause {
            row("backbone_sessions", &format!("cause:{cause}"), &t.sessions);
            row("backbone_units", &format!("cause:{cause}"), &t.units);
            row("backbone_cost", &format!("cause:{cause}"), &t.cost);
        }
        for (node, c) in &self.backbone.by_node {
            row("backbone_cost", &format!("node:{node}"), c);
        }
        row("deadlocks_detected", &"run", &self.deadlocks_detected);
        row("deadlocks_resolved", &"run", &self.deadlocks_resolved);
        for (cause, n) in &self.evictions {
            row("evictions", cause, n);
        }
        row("exchanges", &"run", &self.exchanges);
        row("exchange_units", &"run", &self.exchange_units);
        row("authored", &"run", &self.authored);
        row("lectures", &"run", &self.lectures);
        row("trainings", &"run", &self.trainings);
        row("quiz_answers", &"run", &self.quiz_answers);
        row("joker_uses", &"run", &self.joker_uses);
        for e in &self.ranking {
            row("rank", &e.node, &e.rank);
            row("points_total", &e.node, &e.total);
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// `rank,node,knowledge_points,cooperation_points,total`.
    pub fn ranking_csv(&self) -> String {
        let mut out = String::from("rank,node,knowledge_points,cooperation_points,total\n");
        for e in &self.ranking {
            writeln!(
                out,
                "{},{},{},{},{}",
                e.rank, e.node, e.knowledge_points, e.cooperation_points, e.total
            )
            .expect("write to string");
        }
        out
    }
}

#[derive(Clone, Debug)]
struct Tracked {
    resource: Option<Resource>,
    interested: BTreeSet<NodeId>,
    holders_interested: usize,
    released: Option<Tick>,
    reached: Option<Tick>,
}

/// Folds events into a [`MetricsReport`] and a replica of every store.
#[derive(Clone, Debug, Default)]
pub struct MetricsAccumulator {
    report: MetricsReport,
    sample_every: Tick,
    current: Option<Tick>,
    node_order: Vec<NodeId>,
    interests: BTreeMap<NodeId, BTreeSet<Topic>>,
    holdings: BTreeMap<NodeId, BTreeSet<ResourceId>>,
    resources: BTreeMap<ResourceId, Tracked>,
    partitions_now: usize,
    partition_sum: u64,
    partition_ticks: u64,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        MetricsAccumulator {
            sample_every: 1,
            ..Default::default()
        }
    }

    pub fn replay<'a>(events: impl IntoIterator<Item = &'a SimEvent>) -> Self {
        let mut acc = MetricsAccumulator::new();
        for e in events {
            acc.observe(e);
        }
        acc
    }

    fn register(&mut self, resource: &Resource, topics: &BTreeSet<Topic>) {
        let interested: BTreeSet<NodeId> = self
            .interests
            .iter()
            .filter(|(_, t)| !t.is_disjoint(topics))
            .map(|(n, _)| n.clone())
            .collect();
        self.resources.insert(
            resource.id().clone(),
            Tracked {
                resource: Some(resource.clone()),
                interested,
                holders_interested: 0,
                released: None,
                reached: None,
            },
        );
    }

    fn add(&mut self, node: &NodeId, id: &ResourceId, now: Tick) {
        if !self.holdings.entry(node.clone()).or_default().insert(id.clone()) {
            return;
        }
        let t = self.resources.entry(id.clone()).or_insert_with(|| Tracked {
            resource: None,
            interested: BTreeSet::new(),
            holders_interested: 0,
            released: None,
            reached: None,
        });
        t.released.get_or_insert(now);
        if t.interested.contains(node) {
            t.holders_interested += 1;
        }
    }

    fn remove(&mut self, node: &NodeId, id: &ResourceId) {
        let removed = self
            .holdings
            .get_mut(node)
            .is_some_and(|h| h.remove(id));
        if let (true, Some(t)) = (removed, self.resources.get_mut(id)) {
            if t.interested.contains(node) {
                t.holders_interested -= 1;
            }
        }
    }

    fn close_tick(&mut self, tick: Tick) {
        let mut covered = 0usize;
        let mut wanted = 0usize;
        for t in self.resources.values_mut() {
            let Some(released) = t.released else { continue };
            let k = t.interested.len();
            if k == 0 {
                continue;
            }
            covered += t.holders_interested;
            wanted += k;
            let need = (COVERAGE_TARGET * k as f64).ceil() as usize;
            if t.reached.is_none() && t.holders_interested >= need {
                t.reached = Some(tick - released);
            }
        }
        if tick > 0 {
            self.partition_sum += self.partitions_now as u64;
            self.partition_ticks += 1;
            self.report.partitions_max = self.report.partitions_max.max(self.partitions_now);
        }
        if tick.is_multiple_of(self.sample_every.max(1)) {
            let c = if wanted == 0 { 0.0 } else { covered as f64 / wanted as f64 };
            self.report.coverage.push((tick, c));
            if tick > 0 {
                self.report.partitions.push((tick, self.partitions_now));
            }
        }
        self.report.last_tick = tick;
    }

    pub fn observe(&mut self, ev: &SimEvent) {
        match self.current {
            Some(c) if ev.time > c => self.close_tick(c),
            _ => {}
        }
        self.current = Some(ev.time);
        let now = ev.time;
        let subject = ev.subjects.first();
        match &ev.data {
            EventData::Setup { seed, sample_every, .. } => {
                self.report.seed = *seed;
                self.sample_every = (*sample_every).max(1);
            }
            EventData::NodeJoin { interests, .. } => {
                if let Some(n) = subject {
                    self.node_order.push(n.clone());
                    self.interests.insert(n.clone(), interests.clone());
                    self.holdings.entry(n.clone()).or_default();
                    self.report.nodes += 1;
                    self.partitions_now = self.report.nodes;
                }
            }
            EventData::Catalog { resource, topics } => self.register(resource, topics),
            EventData::Move { .. } => {}
            EventData::Contact { edges } => {
                let index: BTreeMap<&NodeId, usize> =
                    self.node_order.iter().enumerate().map(|(i, n)| (n, i)).collect();
                let graph = ContactGraph::new(
                    self.node_order.len(),
                    edges
                        .iter()
                        .filter_map(|(u, v)| Some((*index.get(u)?, *index.get(v)?))),
                );
                self.partitions_now = graph.partitions().len();
            }
            EventData::LectureRelease { resources } => {
                self.report.lectures += 1;
                for n in &ev.subjects {
                    for id in resources {
                        self.add(n, id, now);
                    }
                }
            }
            EventData::Author { resource, topics } => {
                self.report.authored += 1;
                if !self.resources.contains_key(resource.id()) {
                    self.register(resource, topics);
                }
                if let Some(n) = subject {
                    self.add(n, resource.id(), now);
                }
            }
            EventData::Digest { .. } => {}
            EventData::Exchange { resource, size } => {
                if let Some(to) = ev.subjects.get(1) {
                    self.add(to, resource, now);
                }
                self.report.exchanges += 1;
                self.report.exchange_units += *size as u64;
            }
            EventData::Deadlock { state, .. } => match state {
                DeadlockState::Detected => self.report.deadlocks_detected += 1,
                DeadlockState::Resolved => self.report.deadlocks_resolved += 1,
            },
            EventData::Injection { cause, units, cost, resources } => {
                let b = &mut self.report.backbone;
                b.total += cost;
                let t = b.by_cause.entry(cause.to_string()).or_default();
                t.sessions += 1;
                t.units += units;
                t.cost += cost;
                if let Some(n) = subject {
                    *b.by_node.entry(n.clone()).or_default() += cost;
                    for id in resources {
                        self.add(n, id, now);
                    }
                }
            }
            EventData::Evict { resource, cause } => {
                *self.report.evictions.entry(cause.to_string()).or_default() += 1;
                if let Some(n) = subject {
                    self.remove(n, resource);
                }
            }
            EventData::Training { .. } => self.report.trainings += 1,
            EventData::QuizAnswer { .. } => self.report.quiz_answers += 1,
            EventData::JokerUse { .. } => self.report.joker_uses += 1,
            EventData::QuizDeadline { .. } | EventData::StatusReport { .. } => {}
            EventData::Ranking { rank, knowledge_points, cooperation_points, total } => {
                if let Some(n) = subject {
                    self.report.ranking.push(RankEntry {
                        rank: *rank,
                        node: n.clone(),
                        knowledge_points: *knowledge_points,
                        cooperation_points: *cooperation_points,
                        total: *total,
                    });
                }
            }
        }
    }

    /// Ids held by `node` according to the events seen so far.
    pub fn holdings(&self, node: &NodeId) -> BTreeSet<ResourceId> {
        self.holdings.get(node).cloned().unwrap_or_default()
    }

    /// Rebuilds `node`'s store from the resources announced in the trace.
    pub fn store_of(&self, node: &NodeId) -> Store {
        self.holdings(node)
            .iter()
            .filter_map(|id| self.resources.get(id)?.resource.clone())
            .collect()
    }

    pub fn finish(mut self) -> MetricsReport {
        if let Some(c) = self.current {
            self.close_tick(c);
        }
        for (id, t) in &self.resources {
            if t.released.is_some() && !t.interested.is_empty() {
                self.report.latency.insert(id.clone(), t.reached);
            }
        }
        self.report.partitions_mean = if self.partition_ticks == 0 {
            0.0
        } else {
            self.partition_sum as f64 / self.partition_ticks as f64
        };
        self.report
    }
}
