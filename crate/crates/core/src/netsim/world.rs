//! The simulated world and its tick loop.
//!
//! Each tick runs these phases in order: movement, contact graph, scheduled
//! events (lectures, scripted actions, clique fetches, quiz start), random
//! authoring, pairwise exchanges, pending-intent resolution, deadlock
//! injection, training, quiz answers, quiz deadline, eviction.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::contact::ContactGraph;
use super::mobility::{Area, Position, Waypoint};
use crate::injection::{
    decide_injection, inject_collect_status, inject_fetch, plan_clique_share, CostLedger,
    CostModel, Decision, InjectionCause, InjectionContext, InjectionPolicy,
};
use crate::metrics::{MetricsAccumulator, MetricsReport};
use crate::node::{InterestProfile, NodeState, Role, TtlPolicy, WantRecord};
use crate::paradigm::{run_course, CourseConfig, DEFAULT_REPEAT_CAP};
use crate::quiz::{CooperationWeights, JokerKind, QuizError, QuizState, Ranking};
use crate::resource::{
    is_displayable, Annotation, AnnotationSymbol, Evaluation, InsertOutcome, Link, NodeId,
    Question, Resource, ResourceId, ResourceKind, Store, Tick, Topic, TtlParams,
};
use crate::sync::{
    detect_deadlock, execute_exchange, make_digest, match_information, resource_topics,
    ContactWindow, Digest, ExchangePlan, DEFAULT_CONTACT_BUDGET,
};
use crate::trace::{write_trace, DeadlockState, EventData, EvictCause, SimEvent};

#[derive(Clone, Debug, PartialEq)]
pub struct NodeConfig {
    pub id: NodeId,
    pub role: Role,
    pub position: Position,
    /// Meters per tick, `(min, max)`.
    pub speed: (f64, f64),
    pub pause: Tick,
    pub radio_range: f64,
    pub interests: InterestProfile,
    pub backbone: bool,
    pub budget: f64,
    /// Probability of answering a question right.
    pub skill: f64,
}

impl NodeConfig {
    /// A motionless node with default budget and skill.
    pub fn fixed(id: &str, role: Role, x: f64, y: f64, range: f64, topics: &[&str]) -> Self {
        NodeConfig {
            id: NodeId::from(id),
            role,
            position: Position::new(x, y),
            speed: (0.0, 0.0),
            pause: 0,
            radio_range: range,
            interests: InterestProfile::new(topics.iter().copied()),
            backbone: role == Role::Staff,
            budget: InjectionPolicy::default().budget,
            skill: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lecture {
    pub tick: Tick,
    pub staff: NodeId,
    pub resources: Vec<ResourceId>,
    pub attendees: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuizSpec {
    pub start: Tick,
    pub deadline: Tick,
    pub questions: Vec<ResourceId>,
    pub base_points: u64,
    pub joker_limit: u32,
    /// Per-tick probability that a player answers a question.
    pub answer_rate: f64,
    /// Probability of playing a joker before an answer.
    pub joker_rate: f64,
}

/// Per-tick probabilities that a student authors each kind of content.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuthoringRates {
    pub question_rate: f64,
    pub annotation_rate: f64,
    pub link_rate: f64,
    pub evaluation_rate: f64,
}

/// Something a node sets out to do. Content-creating actions wait until
/// every referenced resource is present, registering wants for the rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    AuthorQuestion {
        anchors: Vec<ResourceId>,
        component: ResourceId,
    },
    Annotate {
        target: ResourceId,
        symbol: AnnotationSymbol,
    },
    Link {
        source: ResourceId,
        dest: ResourceId,
    },
    Evaluate {
        target: ResourceId,
        score: f64,
    },
    Want {
        resources: Vec<ResourceId>,
    },
}

impl Action {
    pub fn references(&self) -> Vec<&ResourceId> {
        match self {
            Action::AuthorQuestion { anchors, component } => {
                anchors.iter().chain(std::iter::once(component)).collect()
            }
            Action::Annotate { target, .. } | Action::Evaluate { target, .. } => vec![target],
            Action::Link { source, dest } => vec![source, dest],
            Action::Want { resources } => resources.iter().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedAction {
    pub tick: Tick,
    pub node: NodeId,
    pub action: Action,
}

/// A clique fetching `resources` over the backbone with shared cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FetchRequest {
    pub tick: Tick,
    pub nodes: Vec<NodeId>,
    pub resources: Vec<ResourceId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimPolicy {
    /// Size units per pairwise contact.
    pub contact_budget: u64,
    pub ttl: TtlParams,
    pub tombstone_window: Tick,
    pub injection: InjectionPolicy,
    pub repeat_cap: u32,
}

impl Default for SimPolicy {
    fn default() -> Self {
        let ttl = TtlParams::default();
        SimPolicy {
            contact_budget: DEFAULT_CONTACT_BUDGET,
            ttl,
            tombstone_window: 2 * ttl.ttl_base,
            injection: InjectionPolicy::default(),
            repeat_cap: DEFAULT_REPEAT_CAP,
        }
    }
}

/// A fully resolved scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub area: Area,
    pub ticks: Tick,
    pub sample_every: Tick,
    pub nodes: Vec<NodeConfig>,
    /// Contents of the backbone repository. Resources whose origin is a node
    /// start out in that node's store.
    pub catalog: Vec<Resource>,
    pub lectures: Vec<Lecture>,
    pub quiz: Option<QuizSpec>,
    pub cost: CostModel,
    pub policy: SimPolicy,
    pub authoring: AuthoringRates,
    pub weights: CooperationWeights,
    pub script: Vec<ScriptedAction>,
    pub fetch_requests: Vec<FetchRequest>,
}

impl SimConfig {
    pub fn new(area: Area, ticks: Tick, nodes: Vec<NodeConfig>) -> Self {
        SimConfig {
            area,
            ticks,
            sample_every: 10,
            nodes,
            catalog: Vec::new(),
            lectures: Vec::new(),
            quiz: None,
            cost: CostModel::default(),
            policy: SimPolicy::default(),
            authoring: AuthoringRates::default(),
            weights: CooperationWeights::default(),
            script: Vec::new(),
            fetch_requests: Vec::new(),
        }
    }
}

/// Everything a finished run produces.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub events: Vec<SimEvent>,
    pub report: MetricsReport,
    pub ranking: Option<Ranking>,
    pub ledger: CostLedger,
}

impl RunOutput {
    pub fn trace(&self) -> String {
        write_trace(&self.events)
    }
}

#[derive(Clone, Debug)]
struct Intent {
    node: usize,
    action: Action,
}

pub struct World {
    pub config: Arc<SimConfig>,
    pub seed: u64,
    /// Last completed tick; 0 after setup.
    pub now: Tick,
    /// Sorted by id; indices match the contact graph.
    pub nodes: Vec<NodeState>,
    pub graph: ContactGraph,
    pub repository: Store,
    pub ledger: CostLedger,
    pub quiz: Option<QuizState>,
    pub ranking: Option<Ranking>,
    index: BTreeMap<NodeId, usize>,
    settings: Vec<NodeConfig>,
    walkers: Vec<Waypoint>,
    move_rngs: Vec<ChaCha8Rng>,
    rng: ChaCha8Rng,
    topics: BTreeMap<ResourceId, BTreeSet<Topic>>,
    budgets: BTreeMap<NodeId, f64>,
    next_seq: BTreeMap<NodeId, u32>,
    intents: Vec<Intent>,
    open_deadlocks: BTreeSet<ResourceId>,
    trained: BTreeSet<(usize, ResourceId)>,
    events: Vec<SimEvent>,
    metrics: MetricsAccumulator,
    busy: bool,
    done: bool,
}

impl World {
    pub fn new(config: SimConfig, seed: u64) -> Self {
        let config = Arc::new(config);
        let mut settings = config.nodes.clone();
        settings.sort_by(|a, b| a.id.cmp(&b.id));
        let staff: Arc<BTreeSet<NodeId>> = Arc::new(
            settings
                .iter()
                .filter(|n| n.role == Role::Staff)
                .map(|n| n.id.clone())
                .collect(),
        );
        let ttl_policy = TtlPolicy {
            params: config.policy.ttl,
            tombstone_window: config.policy.tombstone_window,
            staff,
        };
        let nodes: Vec<NodeState> = settings
            .iter()
            .map(|c| NodeState::new(c.id.clone(), c.role, c.interests.clone()).with_ttl(ttl_policy.clone()))
            .collect();
        let index = settings.iter().enumerate().map(|(i, c)| (c.id.clone(), i)).collect();
        let walkers = settings
            .iter()
            .map(|c| Waypoint::new(c.position, c.speed, c.pause))
            .collect();
        let move_rngs = (0..settings.len())
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(i as u64 + 1);
                r
            })
            .collect();
        let repository: Store = config.catalog.iter().cloned().collect();
        let topics = resource_topics(&repository);
        let budgets = settings
            .iter()
            .filter(|c| c.backbone)
            .map(|c| (c.id.clone(), c.budget))
            .collect();
        let mut next_seq: BTreeMap<NodeId, u32> = BTreeMap::new();
        for r in &config.catalog {
            let id = r.id();
            let s = next_seq.entry(id.origin.clone()).or_default();
            *s = (*s).max(id.seq + 1);
        }

        let mut world = World {
            seed,
            now: 0,
            graph: ContactGraph::new(nodes.len(), []),
            nodes,
            repository,
            ledger: CostLedger::default(),
            quiz: None,
            ranking: None,
            index,
            settings,
            walkers,
            move_rngs,
            rng: ChaCha8Rng::seed_from_u64(seed),
            topics,
            budgets,
            next_seq,
            intents: Vec::new(),
            open_deadlocks: BTreeSet::new(),
            trained: BTreeSet::new(),
            events: Vec::new(),
            metrics: MetricsAccumulator::new(),
            busy: false,
            done: false,
            config,
        };
        world.setup();
        world
    }

    fn emit(&mut self, subjects: Vec<NodeId>, data: EventData) {
        if !matches!(data, EventData::Move { .. } | EventData::Contact { .. }) {
            self.busy = true;
        }
        let ev = SimEvent::new(self.now, subjects, data);
        self.metrics.observe(&ev);
        self.events.push(ev);
    }

    fn setup(&mut self) {
        let config = Arc::clone(&self.config);
        self.emit(
            vec![],
            EventData::Setup {
                seed: self.seed,
                ticks: config.ticks,
                sample_every: config.sample_every,
            },
        );
        for c in self.settings.clone() {
            self.emit(
                vec![c.id.clone()],
                EventData::NodeJoin {
                    role: c.role,
                    interests: c.interests.topics.clone(),
                    backbone: c.backbone,
                    budget: c.budget,
                },
            );
            self.emit(
                vec![c.id.clone()],
                EventData::Move {
                    x: c.position.x,
                    y: c.position.y,
                },
            );
        }
        for r in &config.catalog {
            let topics = self.topics_of(r.id());
            self.emit(
                vec![],
                EventData::Catalog {
                    resource: r.clone(),
                    topics,
                },
            );
        }
        for r in dependency_order(config.catalog.to_vec(), &Store::new()) {
            if let Some(&i) = self.index.get(&r.id().origin) {
                self.deliver_authored(i, r);
            }
        }
        self.graph = self.contact_graph();
    }

    fn topics_of(&self, id: &ResourceId) -> BTreeSet<Topic> {
        self.topics.get(id).cloned().unwrap_or_default()
    }

    pub fn node(&self, id: &NodeId) -> Option<&NodeState> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn index_of(&self, id: &NodeId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn positions(&self) -> Vec<Position> {
        self.walkers.iter().map(|w| w.position).collect()
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    pub fn is_done(&self) -> bool {
        self.done || self.now >= self.config.ticks
    }

    fn contact_graph(&self) -> ContactGraph {
        let ranges: Vec<f64> = self.settings.iter().map(|c| c.radio_range).collect();
        ContactGraph::unit_disk(&self.positions(), &ranges)
    }

    /// Current partitions as node-id sets.
    pub fn partitions(&self) -> Vec<BTreeSet<NodeId>> {
        self.graph
            .partitions()
            .into_iter()
            .map(|c| c.into_iter().map(|i| self.nodes[i].id.clone()).collect())
            .collect()
    }

    /// Advances one tick.
    pub fn step(&mut self) {
        self.now += 1;
        self.busy = false;
        let now = self.now;
        let config = Arc::clone(&self.config);

        self.move_nodes();
        self.graph = self.contact_graph();
        let edges = self
            .graph
            .edges()
            .iter()
            .map(|&(u, v)| (self.nodes[u].id.clone(), self.nodes[v].id.clone()))
            .collect();
        self.emit(vec![], EventData::Contact { edges });

        for l in config.lectures.iter().filter(|l| l.tick == now) {
            self.lecture_release(&l.staff, &l.resources, &l.attendees);
        }
        for s in config.script.iter().filter(|s| s.tick == now) {
            if let Some(&i) = self.index.get(&s.node) {
                self.intents.push(Intent {
                    node: i,
                    action: s.action.clone(),
                });
            }
        }
        self.resolve_intents();
        for f in config.fetch_requests.iter().filter(|f| f.tick == now) {
            self.clique_fetch(f);
        }
        if let Some(q) = &config.quiz {
            if q.start == now {
                let players = self
                    .nodes
                    .iter()
                    .filter(|n| n.role == Role::Student)
                    .map(|n| n.id.clone());
                let mut state = QuizState::new(players, q.deadline);
                state.base_points = q.base_points;
                state.joker_limit = q.joker_limit;
                self.quiz = Some(state);
            }
        }

        self.random_authoring();
        self.exchanges();
        self.resolve_intents();
        self.deadlocks();
        self.resolve_intents();
        self.training();
        self.quiz_answers();
        self.quiz_deadline();
        self.evict();

        let future_work = config.lectures.iter().any(|l| l.tick > now)
            || config.script.iter().any(|s| s.tick > now)
            || config.fetch_requests.iter().any(|f| f.tick > now);
        let settled = self.intents.is_empty() && self.nodes.iter().all(|n| n.wants.is_empty());
        if self.ranking.is_some() && !self.busy && !future_work && settled {
            self.done = true;
        }
    }

    /// Runs until the tick limit, or until the quiz is over and nothing is
    /// left to do.
    pub fn run_to_end(&mut self) {
        while !self.is_done() {
            self.step();
        }
    }

    pub fn finish(self) -> RunOutput {
        RunOutput {
            report: self.metrics.finish(),
            events: self.events,
            ranking: self.ranking,
            ledger: self.ledger,
        }
    }

    fn move_nodes(&mut self) {
        let area = self.config.area;
        for i in 0..self.walkers.len() {
            let before = self.walkers[i].position;
            self.walkers[i].step(&area, &mut self.move_rngs[i]);
            let after = self.walkers[i].position;
            if after != before {
                let id = self.nodes[i].id.clone();
                self.emit(vec![id], EventData::Move { x: after.x, y: after.y });
            }
        }
    }

    /// Hands `staff` and every attendee the dependency closure of
    /// `resources` from the repository. Absentees get nothing.
    pub fn lecture_release(
        &mut self,
        staff: &NodeId,
        resources: &[ResourceId],
        attendees: &[NodeId],
    ) -> Vec<ResourceId> {
        let roots: BTreeSet<ResourceId> = resources.iter().cloned().collect();
        let Ok(ids) = crate::resource::closure(&self.repository, &roots) else {
            return Vec::new();
        };
        let items = dependency_order(
            ids.iter().filter_map(|id| self.repository.get(id).cloned()).collect(),
            &Store::new(),
        );
        let released: Vec<ResourceId> = items.iter().map(|r| r.id().clone()).collect();
        let mut subjects = vec![staff.clone()];
        subjects.extend(attendees.iter().filter(|a| *a != staff).cloned());
        subjects.retain(|s| self.index.contains_key(s));
        let now = self.now;
        for s in &subjects {
            let i = self.index[s];
            for r in &items {
                self.nodes[i].receive(r.clone(), now);
            }
        }
        self.emit(
            subjects,
            EventData::LectureRelease {
                resources: released.clone(),
            },
        );
        released
    }

    fn fresh_id(&mut self, node: usize) -> ResourceId {
        let origin = self.nodes[node].id.clone();
        let seq = self.next_seq.entry(origin.clone()).or_default();
        let id = ResourceId {
            origin,
            seq: *seq,
        };
        *seq += 1;
        id
    }

    /// Puts a node's own new resource into its store and announces it.
    fn deliver_authored(&mut self, node: usize, r: Resource) {
        let id = r.id().clone();
        let topics = match &r {
            Resource::Material(m) => m.topics.clone(),
            other => other
                .dependencies()
                .iter()
                .flat_map(|d| self.topics_of(d))
                .collect(),
        };
        self.topics.insert(id, topics.clone());
        let now = self.now;
        let receipt = self.nodes[node].receive(r.clone(), now);
        let who = self.nodes[node].id.clone();
        match receipt.outcome {
            InsertOutcome::Added => self.emit(vec![who], EventData::Author { resource: r, topics }),
            InsertOutcome::Superseded(old) => {
                self.emit(vec![who.clone()], EventData::Author { resource: r, topics });
                self.emit(
                    vec![who],
                    EventData::Evict {
                        resource: old,
                        cause: EvictCause::Superseded,
                    },
                );
            }
            InsertOutcome::Duplicate | InsertOutcome::Stale => {}
        }
    }

    /// Creates the action's resource if everything it references is held.
    /// Returns the ids still missing otherwise.
    fn try_action(&mut self, node: usize, action: &Action) -> Result<(), Vec<ResourceId>> {
        let missing: Vec<ResourceId> = action
            .references()
            .into_iter()
            .filter(|id| !self.nodes[node].holds(id))
            .cloned()
            .collect();
        if let Action::Want { .. } = action {
            let now = self.now;
            for id in missing {
                self.nodes[node].want(id, now);
            }
            return Ok(());
        }
        if !missing.is_empty() {
            return Err(missing);
        }
        let author = self.nodes[node].id.clone();
        let store = &self.nodes[node].store;
        let resource = match action {
            Action::AuthorQuestion { anchors, component } => {
                let Some(Resource::Component(c)) = store.get(component) else {
                    return Ok(());
                };
                let qtype = c.renders.clone();
                Resource::Question(Question {
                    id: self.fresh_id(node),
                    qtype,
                    anchors: anchors.iter().cloned().collect(),
                    component: component.clone(),
                    author,
                })
            }
            Action::Annotate { target, symbol } => Resource::Annotation(Annotation {
                id: self.fresh_id(node),
                target: target.clone(),
                symbol: *symbol,
                size: 1,
                author,
            }),
            Action::Link { source, dest } => Resource::Link(Link {
                id: self.fresh_id(node),
                source: source.clone(),
                dest: dest.clone(),
                author,
            }),
            Action::Evaluate { target, score } => {
                if !store.can_evaluate(target) {
                    return Ok(());
                }
                Resource::Evaluation(Evaluation {
                    id: self.fresh_id(node),
                    target: target.clone(),
                    score: *score,
                    evaluator: author,
                })
            }
            Action::Want { .. } => unreachable!("handled above"),
        };
        if resource.check().is_ok() {
            self.deliver_authored(node, resource);
        }
        Ok(())
    }

    fn resolve_intents(&mut self) {
        let pending = std::mem::take(&mut self.intents);
        let now = self.now;
        for intent in pending {
            if let Err(missing) = self.try_action(intent.node, &intent.action) {
                for id in missing {
                    self.nodes[intent.node].want(id, now);
                }
                self.intents.push(intent);
            }
        }
    }

    fn clique_fetch(&mut self, req: &FetchRequest) {
        let members: BTreeSet<NodeId> = req
            .nodes
            .iter()
            .filter(|n| self.budgets.contains_key(*n))
            .cloned()
            .collect();
        // anything one member already holds reaches the rest ad hoc
        let held_in_clique = |id: &ResourceId| {
            req.nodes
                .iter()
                .filter_map(|n| self.index.get(n))
                .any(|&i| self.nodes[i].holds(id))
        };
        let wanted: Vec<(ResourceId, u32)> = req
            .resources
            .iter()
            .filter(|id| !held_in_clique(id))
            .filter_map(|id| self.repository.get(id).map(|r| (id.clone(), r.size())))
            .collect();
        let Ok(plan) = plan_clique_share(&members, &wanted) else {
            return;
        };
        let now = self.now;
        for (member, share) in &plan.shares {
            if share.is_empty() {
                continue;
            }
            let i = self.index[member];
            let budget = self.budgets[member];
            let ids: BTreeSet<ResourceId> = share.iter().cloned().collect();
            if let Ok(report) = inject_fetch(
                &mut self.nodes[i],
                &ids,
                &self.repository,
                &self.config.cost,
                &mut self.ledger,
                budget,
                InjectionCause::CliqueShare,
                now,
            ) {
                self.emit(
                    vec![member.clone()],
                    EventData::Injection {
                        cause: InjectionCause::CliqueShare,
                        units: report.units,
                        cost: report.charged,
                        resources: report.added,
                    },
                );
            }
        }
        // the rest of each member's set arrives ad hoc from the others
        for member in req.nodes.iter().filter_map(|n| self.index.get(n).copied()) {
            for id in &req.resources {
                self.nodes[member].want(id.clone(), now);
            }
        }
    }

    fn random_authoring(&mut self) {
        let rates = self.config.authoring;
        if rates == AuthoringRates::default() {
            return;
        }
        for i in 0..self.nodes.len() {
            if self.nodes[i].role != Role::Student {
                continue;
            }
            let me = self.nodes[i].id.clone();
            let held = |kinds: &[ResourceKind], store: &Store| -> Vec<ResourceId> {
                store
                    .iter()
                    .filter(|r| kinds.contains(&r.kind()))
                    .map(|r| r.id().clone())
                    .collect()
            };
            if self.rng.gen_bool(rates.question_rate) {
                let store = &self.nodes[i].store;
                let materials = held(&[ResourceKind::Material], store);
                let components = held(&[ResourceKind::Component], store);
                if let (Some(m), Some(c)) = (materials.choose(&mut self.rng), components.choose(&mut self.rng)) {
                    let action = Action::AuthorQuestion {
                        anchors: vec![m.clone()],
                        component: c.clone(),
                    };
                    let _ = self.try_action(i, &action);
                }
            }
            if self.rng.gen_bool(rates.annotation_rate) {
                let targets = held(&[ResourceKind::Material, ResourceKind::Question], &self.nodes[i].store);
                if let Some(t) = targets.choose(&mut self.rng).cloned() {
                    let symbol = *[
                        AnnotationSymbol::Agreement,
                        AnnotationSymbol::Disagreement,
                        AnnotationSymbol::NewFact,
                        AnnotationSymbol::Issue,
                    ]
                    .choose(&mut self.rng)
                    .expect("non-empty");
                    let _ = self.try_action(i, &Action::Annotate { target: t, symbol });
                }
            }
            if self.rng.gen_bool(rates.link_rate) {
                let ends = held(&[ResourceKind::Material, ResourceKind::Question], &self.nodes[i].store);
                if ends.len() >= 2 {
                    let pair: Vec<ResourceId> = ends.choose_multiple(&mut self.rng, 2).cloned().collect();
                    let action = Action::Link {
                        source: pair[0].clone(),
                        dest: pair[1].clone(),
                    };
                    let _ = self.try_action(i, &action);
                }
            }
            if self.rng.gen_bool(rates.evaluation_rate) {
                let store = &self.nodes[i].store;
                let targets: Vec<ResourceId> = store
                    .iter()
                    .filter(|r| {
                        matches!(
                            r.kind(),
                            ResourceKind::Question | ResourceKind::Annotation | ResourceKind::Link
                        ) && r.author() != &me
                    })
                    .map(|r| r.id().clone())
                    .collect();
                if let Some(t) = targets.choose(&mut self.rng).cloned() {
                    let score: f64 = self.rng.gen();
                    let _ = self.try_action(i, &Action::Evaluate { target: t, score });
                }
            }
        }
    }

    fn plan_fits(plan: &ExchangePlan, a: &Digest, b: &Digest, budget: u64) -> bool {
        let first_fits = |list: &[ResourceId], sender: &Digest| {
            list.first()
                .and_then(|id| sender.entries.get(id))
                .is_some_and(|e| e.size as u64 <= budget)
        };
        first_fits(&plan.to_b, a) || first_fits(&plan.to_a, b)
    }

    /// One exchange per node: nearest unmatched neighbor with something to
    /// trade, ties to the lower id.
    fn exchanges(&mut self) {
        let n = self.nodes.len();
        if n < 2 || self.graph.edges().is_empty() {
            return;
        }
        let budget = self.config.policy.contact_budget;
        let digests: Vec<Digest> = self.nodes.iter().map(make_digest).collect();
        let positions = self.positions();
        let mut matched = vec![false; n];
        let now = self.now;
        for i in 0..n {
            if matched[i] {
                continue;
            }
            let mut cands: Vec<usize> = self
                .graph
                .neighbors(i)
                .iter()
                .copied()
                .filter(|&j| !matched[j])
                .collect();
            cands.sort_by(|&x, &y| {
                positions[i]
                    .distance(&positions[x])
                    .total_cmp(&positions[i].distance(&positions[y]))
                    .then(x.cmp(&y))
            });
            for j in cands {
                let plan = match_information(
                    &digests[i],
                    &digests[j],
                    &self.nodes[i].interests,
                    &self.nodes[j].interests,
                );
                if plan.is_empty() || !Self::plan_fits(&plan, &digests[i], &digests[j], budget) {
                    continue;
                }
                matched[i] = true;
                matched[j] = true;
                let (lo, hi) = (i.min(j), i.max(j));
                let (left, right) = self.nodes.split_at_mut(hi);
                let (x, y) = (&mut left[lo], &mut right[0]);
                let (a, b) = if i < j { (x, y) } else { (y, x) };
                let result = execute_exchange(a, b, &plan, ContactWindow::budget(budget), now);
                let (ida, idb) = (self.nodes[i].id.clone(), self.nodes[j].id.clone());
                self.emit(
                    vec![ida, idb],
                    EventData::Digest {
                        to_a: plan.to_a.len(),
                        to_b: plan.to_b.len(),
                        units: plan.total_units,
                    },
                );
                if let Ok(report) = result {
                    for t in report.applied {
                        self.emit(
                            vec![t.from, t.to.clone()],
                            EventData::Exchange {
                                resource: t.resource,
                                size: t.size,
                            },
                        );
                        if let Some(old) = t.superseded {
                            self.emit(
                                vec![t.to],
                                EventData::Evict {
                                    resource: old,
                                    cause: EvictCause::Superseded,
                                },
                            );
                        }
                    }
                }
                break;
            }
        }
    }

    fn deadlocks(&mut self) {
        let now = self.now;
        let mut blocked_now = BTreeSet::new();
        let mut injections: Vec<(NodeId, ResourceId)> = Vec::new();
        for part in self.graph.partitions() {
            let members: Vec<&NodeState> = part.iter().map(|&i| &self.nodes[i]).collect();
            let wants: Vec<WantRecord> = members.iter().flat_map(|n| n.want_records()).collect();
            if wants.is_empty() {
                continue;
            }
            let blocked = detect_deadlock(&members, &wants);
            let ctx = InjectionContext {
                repository: &self.repository,
                model: &self.config.cost,
                policy: &self.config.policy.injection,
                ledger: &self.ledger,
                budgets: &self.budgets,
                now,
            };
            for d in decide_injection(&blocked, &wants, &members, &ctx) {
                if let Decision::Inject { resource, fetcher, .. } = d {
                    injections.push((fetcher, resource));
                }
            }
            for id in blocked {
                let wanting: Vec<NodeId> = wants
                    .iter()
                    .filter(|w| w.resource == id)
                    .map(|w| w.node.clone())
                    .collect();
                blocked_now.insert(id.clone());
                if !wanting.is_empty() && self.open_deadlocks.insert(id.clone()) {
                    self.emit(
                        wanting,
                        EventData::Deadlock {
                            resource: id,
                            state: DeadlockState::Detected,
                        },
                    );
                }
            }
        }
        for (fetcher, resource) in injections {
            let i = self.index[&fetcher];
            let budget = self.budgets[&fetcher];
            let roots: BTreeSet<ResourceId> = [resource.clone()].into();
            let Ok(report) = inject_fetch(
                &mut self.nodes[i],
                &roots,
                &self.repository,
                &self.config.cost,
                &mut self.ledger,
                budget,
                InjectionCause::Deadlock,
                now,
            ) else {
                continue;
            };
            self.emit(
                vec![fetcher.clone()],
                EventData::Injection {
                    cause: InjectionCause::Deadlock,
                    units: report.units,
                    cost: report.charged,
                    resources: report.added,
                },
            );
            blocked_now.remove(&resource);
        }
        let resolved: Vec<ResourceId> = self
            .open_deadlocks
            .iter()
            .filter(|id| !blocked_now.contains(*id))
            .cloned()
            .collect();
        for id in resolved {
            self.open_deadlocks.remove(&id);
            self.emit(
                vec![],
                EventData::Deadlock {
                    resource: id,
                    state: DeadlockState::Resolved,
                },
            );
        }
    }

    fn training(&mut self) {
        let repeat_cap = self.config.policy.repeat_cap;
        for i in 0..self.nodes.len() {
            if self.nodes[i].role != Role::Student {
                continue;
            }
            let courses: Vec<_> = self.nodes[i]
                .store
                .iter()
                .filter_map(|r| match r {
                    Resource::Course(c) if !self.trained.contains(&(i, c.id.clone())) => Some(c.clone()),
                    _ => None,
                })
                .collect();
            for course in courses {
                let store = &self.nodes[i].store;
                let bank: Vec<ResourceId> = course
                    .members
                    .iter()
                    .filter(|q| matches!(store.get(q), Some(Resource::Question(x)) if is_displayable(x, store)))
                    .cloned()
                    .collect();
                self.trained.insert((i, course.id.clone()));
                let skill = self.settings[i].skill;
                let config = CourseConfig {
                    rng_seed: self.rng.gen(),
                    repeat_cap,
                };
                let rng = &mut self.rng;
                let transcript = run_course(
                    &course,
                    &bank,
                    |_| if rng.gen_bool(skill) { 1.0 } else { 0.0 },
                    config,
                );
                for e in &transcript.entries {
                    self.nodes[i].answers.record(&e.question, e.outcome);
                }
                let who = self.nodes[i].id.clone();
                self.emit(
                    vec![who],
                    EventData::Training {
                        course: course.id.clone(),
                        asked: transcript.entries.len(),
                        right: transcript.right_answers(),
                        truncated: transcript.truncated,
                    },
                );
            }
        }
    }

    fn quiz_answers(&mut self) {
        let Some(spec) = self.config.quiz.clone() else { return };
        if self.now < spec.start || self.now >= spec.deadline {
            return;
        }
        let Some(mut quiz) = self.quiz.take() else { return };
        let jokers = [JokerKind::Link, JokerKind::Annotation, JokerKind::Statistics];
        let players: Vec<NodeId> = quiz.players.keys().cloned().collect();
        for p in players {
            let i = self.index[&p];
            if !self.rng.gen_bool(spec.answer_rate) {
                continue;
            }
            let store = &self.nodes[i].store;
            let answered = &quiz.players[&p].answered;
            let open: Vec<&ResourceId> = spec
                .questions
                .iter()
                .filter(|q| !answered.contains(*q))
                .filter(|q| matches!(store.get(q), Some(Resource::Question(x)) if is_displayable(x, store)))
                .collect();
            let Some(q) = open.choose(&mut self.rng).map(|q| (*q).clone()) else {
                continue;
            };
            if self.rng.gen_bool(spec.joker_rate) && quiz.players[&p].jokers_on(&q) < quiz.joker_limit {
                let kind = *jokers.choose(&mut self.rng).expect("non-empty");
                let node = &self.nodes[i];
                let hint_items = match quiz.use_joker(&p, &q, kind, &node.store, &node.answers) {
                    Ok(h) => Some(h.item_count()),
                    Err(QuizError::NothingAvailable { .. }) => Some(0),
                    Err(_) => None,
                };
                if let Some(hint_items) = hint_items {
                    self.emit(
                        vec![p.clone()],
                        EventData::JokerUse {
                            question: q.clone(),
                            joker: kind,
                            hint_items,
                        },
                    );
                }
            }
            let outcome = if self.rng.gen_bool(self.settings[i].skill) { 1.0 } else { 0.0 };
            if let Ok(points) = quiz.answer_question(&p, &q, outcome, &self.nodes[i].store) {
                self.nodes[i].answers.record(&q, outcome);
                self.emit(
                    vec![p.clone()],
                    EventData::QuizAnswer {
                        question: q,
                        outcome,
                        points,
                    },
                );
            }
        }
        self.quiz = Some(quiz);
    }

    fn quiz_deadline(&mut self) {
        let Some(mut quiz) = self.quiz.take() else { return };
        if quiz.finished || self.now < quiz.deadline {
            self.quiz = Some(quiz);
            return;
        }
        self.emit(
            vec![],
            EventData::QuizDeadline {
                players: quiz.players.len(),
            },
        );
        let devices: Vec<_> = quiz
            .players
            .values()
            .filter_map(|p| self.index.get(&p.node).map(|&i| (p, &self.nodes[i])))
            .collect();
        let reports = inject_collect_status(devices, &self.config.weights, &self.config.cost, &mut self.ledger);
        let message = self.config.cost.session_cost(0);
        for r in &reports {
            self.emit(
                vec![r.node.clone()],
                EventData::Injection {
                    cause: InjectionCause::QuizStatus,
                    units: 0,
                    cost: message,
                    resources: vec![],
                },
            );
            self.emit(
                vec![r.node.clone()],
                EventData::StatusReport {
                    knowledge_points: r.knowledge_points,
                    cooperation_points: r.cooperation_points,
                },
            );
        }
        if let Ok(ranking) = quiz.finalize(self.now, &reports) {
            for e in &ranking.entries {
                self.emit(
                    vec![e.node.clone()],
                    EventData::Ranking {
                        rank: e.rank,
                        knowledge_points: e.knowledge_points,
                        cooperation_points: e.cooperation_points,
                        total: e.total,
                    },
                );
            }
            self.ranking = Some(ranking);
        }
        self.quiz = Some(quiz);
    }

    fn evict(&mut self) {
        let at = self.now + 1;
        for i in 0..self.nodes.len() {
            let ev = self.nodes[i].evict(at);
            if ev.is_empty() {
                continue;
            }
            let who = self.nodes[i].id.clone();
            for (ids, cause) in [(ev.expired, EvictCause::Ttl), (ev.cascaded, EvictCause::Cascade)] {
                for id in ids {
                    self.emit(vec![who.clone()], EventData::Evict { resource: id, cause });
                }
            }
        }
    }
}

/// Orders resources so each comes after everything it depends on that is
/// in the list or already in `have`. Items that can never be placed are
/// dropped.
pub fn dependency_order(mut pending: Vec<Resource>, have: &Store) -> Vec<Resource> {
    pending.sort_by(|a, b| (a.kind(), a.id()).cmp(&(b.kind(), b.id())));
    let mut placed: BTreeSet<ResourceId> = BTreeSet::new();
    let mut out = Vec::new();
    loop {
        let before = pending.len();
        pending.retain(|r| {
            let ready = r
                .dependencies()
                .iter()
                .all(|d| placed.contains(d) || have.contains(d));
            if ready {
                placed.insert(r.id().clone());
                out.push(r.clone());
            }
            !ready
        });
        if pending.is_empty() || pending.len() == before {
            break;
        }
    }
    out
}

/// Builds, runs and finishes a world.
pub fn run(config: SimConfig, seed: u64) -> RunOutput {
    let mut world = World::new(config, seed);
    world.run_to_end();
    world.finish()
}
