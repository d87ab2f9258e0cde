//! Learning resources, the dependency rules between them, evaluation
//! aggregation and TTL-based eviction.
//!
//! Every resource kind declares what it requires to be valid on a device.
//! Materials and components are roots; everything else hangs off them. A
//! [`Store`] is valid when no resource references an id the store lacks,
//! and [`evict_expired`] keeps it that way by cascading removals.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::paradigm::Directive;

/// Simulation time in whole ticks.
pub type Tick = u64;

/// Topic tag used for interest filtering.
pub type Topic = String;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Globally unique resource identifier: the creating node plus a counter
/// that node never reuses. Rendered as `origin:seq`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ResourceId {
    pub origin: NodeId,
    pub seq: u32,
}

impl ResourceId {
    pub fn new(origin: impl Into<String>, seq: u32) -> Self {
        ResourceId {
            origin: NodeId(origin.into()),
            seq,
        }
    }
}

impl fmt::Display for ResourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.origin, self.seq)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed resource id `{0}` (expected origin:seq)")]
pub struct ParseResourceIdError(pub String);

impl FromStr for ResourceId {
    type Err = ParseResourceIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (origin, seq) = s
            .rsplit_once(':')
            .ok_or_else(|| ParseResourceIdError(s.to_owned()))?;
        if origin.is_empty() {
            return Err(ParseResourceIdError(s.to_owned()));
        }
        let seq = seq.parse().map_err(|_| ParseResourceIdError(s.to_owned()))?;
        Ok(ResourceId::new(origin, seq))
    }
}

impl Serialize for ResourceId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ResourceId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Question-type tag, e.g. `multiple-choice` or `fill-in`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuestionType(pub String);

impl QuestionType {
    pub fn new(tag: impl Into<String>) -> Self {
        QuestionType(tag.into())
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialUnit {
    pub id: ResourceId,
    pub topics: BTreeSet<Topic>,
    pub size: u32,
    pub staff_origin: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: ResourceId,
    pub qtype: QuestionType,
    pub anchors: BTreeSet<ResourceId>,
    pub component: ResourceId,
    pub author: NodeId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnotationSymbol {
    Agreement,
    Disagreement,
    NewFact,
    Issue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: ResourceId,
    pub target: ResourceId,
    pub symbol: AnnotationSymbol,
    pub size: u32,
    pub author: NodeId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: ResourceId,
    pub source: ResourceId,
    pub dest: ResourceId,
    pub author: NodeId,
}

/// A course: an ordered program of selection directives over its members.
/// `members` is kept in declaration order, which is the input-file order the
/// selection paradigms rely on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Course {
    pub id: ResourceId,
    pub program: Vec<Directive>,
    pub members: Vec<ResourceId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentDescriptor {
    pub id: ResourceId,
    pub renders: QuestionType,
    pub size: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub id: ResourceId,
    pub target: ResourceId,
    pub score: f64,
    pub evaluator: NodeId,
}

/// Resource kinds. The declaration order is the tie-break priority used when
/// ordering transfers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    Component,
    Material,
    Question,
    Annotation,
    Link,
    Evaluation,
    Course,
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ResourceKind::Component => "component",
            ResourceKind::Material => "material",
            ResourceKind::Question => "question",
            ResourceKind::Annotation => "annotation",
            ResourceKind::Link => "link",
            ResourceKind::Evaluation => "evaluation",
            ResourceKind::Course => "course",
        };
        f.write_str(s)
    }
}

/// The unit of dissemination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Resource {
    Material(MaterialUnit),
    Question(Question),
    Annotation(Annotation),
    Link(Link),
    Course(Course),
    Component(ComponentDescriptor),
    Evaluation(Evaluation),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResourceError {
    #[error("{0}: size must be at least 1")]
    ZeroSize(ResourceId),
    #[error("{0}: material needs at least one topic")]
    NoTopics(ResourceId),
    #[error("{0}: question needs at least one anchor")]
    NoAnchors(ResourceId),
    #[error("{0}: resource references itself")]
    SelfReference(ResourceId),
    #[error("{id}: score {score} outside [0, 1]")]
    ScoreOutOfRange { id: ResourceId, score: f64 },
    #[error("{id}: course program references non-member {question}")]
    NonMember { id: ResourceId, question: ResourceId },
}

impl Resource {
    pub fn id(&self) -> &ResourceId {
        match self {
            Resource::Material(r) => &r.id,
            Resource::Question(r) => &r.id,
            Resource::Annotation(r) => &r.id,
            Resource::Link(r) => &r.id,
            Resource::Course(r) => &r.id,
            Resource::Component(r) => &r.id,
            Resource::Evaluation(r) => &r.id,
        }
    }

    pub fn kind(&self) -> ResourceKind {
        match self {
            Resource::Material(_) => ResourceKind::Material,
            Resource::Question(_) => ResourceKind::Question,
            Resource::Annotation(_) => ResourceKind::Annotation,
            Resource::Link(_) => ResourceKind::Link,
            Resource::Course(_) => ResourceKind::Course,
            Resource::Component(_) => ResourceKind::Component,
            Resource::Evaluation(_) => ResourceKind::Evaluation,
        }
    }

    /// Transfer units. Kinds without an explicit payload size weigh one unit.
    pub fn size(&self) -> u32 {
        match self {
            Resource::Material(r) => r.size,
            Resource::Annotation(r) => r.size,
            Resource::Component(r) => r.size,
            _ => 1,
        }
    }

    /// Node credited with creating the resource.
    pub fn author(&self) -> &NodeId {
        match self {
            Resource::Question(q) => &q.author,
            Resource::Annotation(a) => &a.author,
            Resource::Link(l) => &l.author,
            Resource::Evaluation(e) => &e.evaluator,
            other => &other.id().origin,
        }
    }

    pub fn dependencies(&self) -> BTreeSet<ResourceId> {
        dependencies_of(self)
    }

    /// Structural well-formedness of a single resource.
    pub fn check(&self) -> Result<(), ResourceError> {
        match self {
            Resource::Material(m) => {
                if m.size == 0 {
                    return Err(ResourceError::ZeroSize(m.id.clone()));
                }
                if m.topics.is_empty() {
                    return Err(ResourceError::NoTopics(m.id.clone()));
                }
            }
            Resource::Question(q) => {
                if q.anchors.is_empty() {
                    return Err(ResourceError::NoAnchors(q.id.clone()));
                }
                if q.anchors.contains(&q.id) || q.component == q.id {
                    return Err(ResourceError::SelfReference(q.id.clone()));
                }
            }
            Resource::Annotation(a) => {
                if a.target == a.id {
                    return Err(ResourceError::SelfReference(a.id.clone()));
                }
                if a.size == 0 {
                    return Err(ResourceError::ZeroSize(a.id.clone()));
                }
            }
            Resource::Link(l) => {
                if l.source == l.dest || l.source == l.id || l.dest == l.id {
                    return Err(ResourceError::SelfReference(l.id.clone()));
                }
            }
            Resource::Course(c) => {
                let members: BTreeSet<_> = c.members.iter().collect();
                for directive in &c.program {
                    for q in directive.question_refs() {
                        if !members.contains(&q) {
                            return Err(ResourceError::NonMember {
                                id: c.id.clone(),
                                question: q,
                            });
                        }
                    }
                }
            }
            Resource::Component(c) => {
                if c.size == 0 {
                    return Err(ResourceError::ZeroSize(c.id.clone()));
                }
            }
            Resource::Evaluation(e) => {
                if !(0.0..=1.0).contains(&e.score) {
                    return Err(ResourceError::ScoreOutOfRange {
                        id: e.id.clone(),
                        score: e.score,
                    });
                }
                if e.target == e.id {
                    return Err(ResourceError::SelfReference(e.id.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Ids a resource requires to be valid on a device.
pub fn dependencies_of(r: &Resource) -> BTreeSet<ResourceId> {
    match r {
        Resource::Material(_) | Resource::Component(_) => BTreeSet::new(),
        Resource::Link(l) => [l.source.clone(), l.dest.clone()].into(),
        Resource::Annotation(a) => [a.target.clone()].into(),
        Resource::Question(q) => {
            let mut deps = q.anchors.clone();
            deps.insert(q.component.clone());
            deps
        }
        Resource::Evaluation(e) => [e.target.clone()].into(),
        Resource::Course(c) => c.members.iter().cloned().collect(),
    }
}

/// What happened when a resource was offered to a store.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InsertOutcome {
    Added,
    /// Already held; store unchanged.
    Duplicate,
    /// Added, replacing an older evaluation by the same evaluator of the same
    /// target.
    Superseded(ResourceId),
    /// Not added: the store holds a newer evaluation by the same evaluator of
    /// the same target.
    Stale,
}

/// A device's resource collection, keyed by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Store {
    items: BTreeMap<ResourceId, Resource>,
    // (evaluator, target) -> evaluation id
    eval_index: BTreeMap<(NodeId, ResourceId), ResourceId>,
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, id: &ResourceId) -> bool {
        self.items.contains_key(id)
    }

    pub fn get(&self, id: &ResourceId) -> Option<&Resource> {
        self.items.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Resource> {
        self.items.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ResourceId> {
        self.items.keys()
    }

    /// Inserts without checking dependencies; callers order insertions so the
    /// store stays valid. Evaluations follow last-write-wins per
    /// (evaluator, target), where a larger id from the same evaluator is newer.
    pub fn insert(&mut self, r: Resource) -> InsertOutcome {
        if self.items.contains_key(r.id()) {
            return InsertOutcome::Duplicate;
        }
        let mut outcome = InsertOutcome::Added;
        if let Resource::Evaluation(e) = &r {
            let key = (e.evaluator.clone(), e.target.clone());
            if let Some(existing) = self.eval_index.get(&key).cloned() {
                if existing > e.id {
                    return InsertOutcome::Stale;
                }
                self.items.remove(&existing);
                outcome = InsertOutcome::Superseded(existing);
            }
            self.eval_index.insert(key, e.id.clone());
        }
        self.items.insert(r.id().clone(), r);
        outcome
    }

    pub fn remove(&mut self, id: &ResourceId) -> Option<Resource> {
        let removed = self.items.remove(id)?;
        if let Resource::Evaluation(e) = &removed {
            let key = (e.evaluator.clone(), e.target.clone());
            if self.eval_index.get(&key) == Some(id) {
                self.eval_index.remove(&key);
            }
        }
        Some(removed)
    }

    /// Referenced ids that are missing from the store. Empty means valid.
    pub fn validate(&self) -> BTreeSet<ResourceId> {
        self.items
            .values()
            .flat_map(dependencies_of)
            .filter(|d| !self.items.contains_key(d))
            .collect()
    }

    pub fn evaluations_of<'a>(
        &'a self,
        target: &'a ResourceId,
    ) -> impl Iterator<Item = &'a Evaluation> + 'a {
        self.items.values().filter_map(move |r| match r {
            Resource::Evaluation(e) if &e.target == target => Some(e),
            _ => None,
        })
    }

    /// Evaluations may target anything held except other evaluations.
    pub fn can_evaluate(&self, target: &ResourceId) -> bool {
        matches!(self.items.get(target), Some(r) if r.kind() != ResourceKind::Evaluation)
    }
}

impl FromIterator<Resource> for Store {
    fn from_iter<I: IntoIterator<Item = Resource>>(iter: I) -> Self {
        let mut store = Store::new();
        for r in iter {
            store.insert(r);
        }
        store
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClosureError {
    #[error("dangling references: {}", display_ids(.0))]
    DanglingReference(BTreeSet<ResourceId>),
}

pub(crate) fn display_ids(ids: &BTreeSet<ResourceId>) -> String {
    ids.iter().map(|id| id.to_string()).collect::<Vec<_>>().join(", ")
}

/// Smallest superset of `roots` closed under [`dependencies_of`] within
/// `store`. Roots or dependencies the store lacks are reported together.
pub fn closure<'a>(
    store: &Store,
    roots: impl IntoIterator<Item = &'a ResourceId>,
) -> Result<BTreeSet<ResourceId>, ClosureError> {
    let mut seen = BTreeSet::new();
    let mut dangling = BTreeSet::new();
    let mut queue: VecDeque<ResourceId> = roots.into_iter().cloned().collect();
    while let Some(id) = queue.pop_front() {
        if seen.contains(&id) || dangling.contains(&id) {
            continue;
        }
        match store.get(&id) {
            Some(r) => {
                queue.extend(dependencies_of(r));
                seen.insert(id);
            }
            None => {
                dangling.insert(id);
            }
        }
    }
    if dangling.is_empty() {
        Ok(seen)
    } else {
        Err(ClosureError::DanglingReference(dangling))
    }
}

/// A question can be shown once its rendering component and all anchors are
/// present.
pub fn is_displayable(q: &Question, store: &Store) -> bool {
    store.contains(&q.component) && q.anchors.iter().all(|a| store.contains(a))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Rating {
    Unrated,
    Rated(f64),
}

impl Rating {
    pub fn value_or(self, unrated: f64) -> f64 {
        match self {
            Rating::Unrated => unrated,
            Rating::Rated(v) => v,
        }
    }
}

/// Mean score of the evaluations that reference `target`.
pub fn aggregate_score<'a>(
    target: &ResourceId,
    evals: impl IntoIterator<Item = &'a Evaluation>,
) -> Rating {
    let mut scores: Vec<f64> = evals
        .into_iter()
        .filter(|e| &e.target == target)
        .map(|e| e.score)
        .collect();
    if scores.is_empty() {
        return Rating::Unrated;
    }
    // sorted summation keeps the mean independent of arrival order
    scores.sort_by(f64::total_cmp);
    let n = scores.len() as f64;
    Rating::Rated((scores.iter().sum::<f64>() / n).clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtlParams {
    pub ttl_base: Tick,
    pub keep_threshold: f64,
}

impl Default for TtlParams {
    fn default() -> Self {
        TtlParams {
            ttl_base: 50,
            keep_threshold: 0.5,
        }
    }
}

/// A resource is alive while `now <= expiry`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtlRecord {
    pub resource: ResourceId,
    pub expiry: Tick,
    pub ttl_base: Tick,
}

impl TtlRecord {
    pub fn new(resource: ResourceId, created: Tick, ttl_base: Tick) -> Self {
        TtlRecord {
            resource,
            expiry: created + ttl_base,
            ttl_base,
        }
    }
}

pub type TtlTable = BTreeMap<ResourceId, TtlRecord>;

/// Well-rated or not-yet-rated content gets a fresh lifetime; badly rated
/// content keeps its old expiry and dies.
pub fn refresh_ttl(rec: &TtlRecord, now: Tick, rating: Rating, params: &TtlParams) -> TtlRecord {
    let keep = match rating {
        Rating::Unrated => true,
        Rating::Rated(v) => v >= params.keep_threshold,
    };
    if keep {
        TtlRecord {
            expiry: now + rec.ttl_base,
            ..rec.clone()
        }
    } else {
        rec.clone()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Eviction {
    pub expired: BTreeSet<ResourceId>,
    pub cascaded: BTreeSet<ResourceId>,
}

impl Eviction {
    pub fn is_empty(&self) -> bool {
        self.expired.is_empty() && self.cascaded.is_empty()
    }

    pub fn removed(&self) -> impl Iterator<Item = &ResourceId> {
        self.expired.iter().chain(self.cascaded.iter())
    }
}

/// Removes every resource whose record expired before `now`, then anything
/// left with a dangling dependency. Resources without a record are exempt
/// from expiry but still subject to the cascade.
pub fn evict_expired(store: &mut Store, ttl: &mut TtlTable, now: Tick) -> Eviction {
    let mut out = Eviction::default();
    let expired: Vec<ResourceId> = ttl
        .values()
        .filter(|rec| rec.expiry < now)
        .map(|rec| rec.resource.clone())
        .collect();
    for id in expired {
        ttl.remove(&id);
        if store.remove(&id).is_some() {
            out.expired.insert(id);
        }
    }
    if out.expired.is_empty() {
        return out;
    }
    loop {
        let broken: Vec<ResourceId> = store
            .iter()
            .filter(|r| dependencies_of(r).iter().any(|d| !store.contains(d)))
            .map(|r| r.id().clone())
            .collect();
        if broken.is_empty() {
            break;
        }
        for id in broken {
            store.remove(&id);
            ttl.remove(&id);
            out.cascaded.insert(id);
        }
    }
    out
}
