//! Scenario documents: JSON schema, validation with per-field diagnostics,
//! and conversion into a [`SimConfig`].
//!
//! Catalog entries carry explicit `origin:seq` ids; every other section
//! refers to resources by those ids and to nodes by name.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::injection::{CostModel, InjectionPolicy};
use crate::netsim::{
    Action, Area, AuthoringRates, FetchRequest, Lecture, NodeConfig, Position, QuizSpec,
    ScriptedAction, SimConfig, SimPolicy,
};
use crate::node::{InterestProfile, Role};
use crate::paradigm::{Directive, DEFAULT_REPEAT_CAP};
use crate::quiz::{CooperationWeights, DEFAULT_BASE_POINTS, DEFAULT_JOKER_LIMIT};
use crate::resource::{
    ComponentDescriptor, Course, MaterialUnit, NodeId, QuestionType, Resource, ResourceId,
    ResourceKind, Tick, Topic, TtlParams,
};
use crate::sync::DEFAULT_CONTACT_BUDGET;

fn default_sample_every() -> Tick {
    10
}

fn default_one() -> u32 {
    1
}

fn default_skill() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub area: Area,
    pub ticks: Tick,
    #[serde(default = "default_sample_every")]
    pub sample_every: Tick,
    #[serde(default)]
    pub nodes: Vec<NodeDoc>,
    #[serde(default)]
    pub catalog: CatalogDoc,
    #[serde(default)]
    pub lectures: Vec<Lecture>,
    #[serde(default)]
    pub quiz: Option<QuizDoc>,
    #[serde(default)]
    pub cost: CostModel,
    #[serde(default)]
    pub policy: PolicyDoc,
    #[serde(default)]
    pub authoring: AuthoringRates,
    #[serde(default)]
    pub weights: CooperationWeights,
    #[serde(default)]
    pub script: Vec<ScriptedAction>,
    #[serde(default)]
    pub fetch_requests: Vec<FetchRequest>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: String,
    pub role: Role,
    pub position: [f64; 2],
    /// `[min, max]` meters per tick.
    #[serde(default)]
    pub speed: [f64; 2],
    #[serde(default)]
    pub pause: Tick,
    pub radio_range: f64,
    #[serde(default)]
    pub interests: Vec<Topic>,
    /// Defaults to true for staff, false for students.
    #[serde(default)]
    pub backbone: Option<bool>,
    /// Defaults to `policy.budget`.
    #[serde(default)]
    pub budget: Option<f64>,
    #[serde(default = "default_skill")]
    pub skill: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogDoc {
    #[serde(default)]
    pub materials: Vec<MaterialDoc>,
    #[serde(default)]
    pub components: Vec<ComponentDoc>,
    #[serde(default)]
    pub questions: Vec<QuestionDoc>,
    #[serde(default)]
    pub courses: Vec<CourseDoc>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialDoc {
    pub id: ResourceId,
    pub topics: Vec<Topic>,
    #[serde(default = "default_one")]
    pub size: u32,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentDoc {
    pub id: ResourceId,
    pub renders: String,
    #[serde(default = "default_one")]
    pub size: u32,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionDoc {
    pub id: ResourceId,
    pub qtype: String,
    pub anchors: Vec<ResourceId>,
    pub component: ResourceId,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CourseDoc {
    pub id: ResourceId,
    pub members: Vec<ResourceId>,
    pub program: Vec<Directive>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuizDoc {
    pub start: Tick,
    pub deadline: Tick,
    pub questions: Vec<ResourceId>,
    #[serde(default = "QuizDoc::default_base")]
    pub base_points: u64,
    #[serde(default = "QuizDoc::default_jokers")]
    pub joker_limit: u32,
    #[serde(default = "QuizDoc::default_answer_rate")]
    pub answer_rate: f64,
    #[serde(default = "QuizDoc::default_joker_rate")]
    pub joker_rate: f64,
}

impl QuizDoc {
    fn default_base() -> u64 {
        DEFAULT_BASE_POINTS
    }
    fn default_jokers() -> u32 {
        DEFAULT_JOKER_LIMIT
    }
    fn default_answer_rate() -> f64 {
        0.2
    }
    fn default_joker_rate() -> f64 {
        0.1
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyDoc {
    pub contact_budget: u64,
    pub ttl_base: Tick,
    pub keep_threshold: f64,
    /// Defaults to twice `ttl_base`.
    pub tombstone_window: Option<Tick>,
    pub deadlock_grace: Tick,
    pub demand_threshold: usize,
    pub repeat_cap: u32,
    /// Backbone budget for nodes that declare none.
    pub budget: f64,
}

impl Default for PolicyDoc {
    fn default() -> Self {
        let ttl = TtlParams::default();
        let inj = InjectionPolicy::default();
        PolicyDoc {
            contact_budget: DEFAULT_CONTACT_BUDGET,
            ttl_base: ttl.ttl_base,
            keep_threshold: ttl.keep_threshold,
            tombstone_window: None,
            deadlock_grace: inj.deadlock_grace,
            demand_threshold: inj.demand_threshold,
            repeat_cap: DEFAULT_REPEAT_CAP,
            budget: inj.budget,
        }
    }
}

/// One validation finding, located by document path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("invalid scenario:\n{}", display_diagnostics(.0))]
    InvalidScenario(Vec<Diagnostic>),
}

fn display_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(|x| format!("  {x}")).collect::<Vec<_>>().join("\n")
}

impl ScenarioError {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            ScenarioError::InvalidScenario(d) => d,
            _ => &[],
        }
    }
}

pub fn parse(text: &str) -> Result<ScenarioDocument, ScenarioError> {
    serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
}

pub fn load(path: &Path) -> Result<ScenarioDocument, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse(&text)
}

/// Reads, parses, validates and converts a scenario file.
pub fn load_config(path: &Path) -> Result<SimConfig, ScenarioError> {
    load(path)?.into_config()
}

struct Checker {
    out: Vec<Diagnostic>,
}

impl Checker {
    fn err(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.out.push(Diagnostic {
            path: path.into(),
            message: message.into(),
        });
    }

    fn unit(&mut self, path: impl Into<String>, v: f64) {
        if !(0.0..=1.0).contains(&v) {
            self.err(path, format!("must be within [0, 1], got {v}"));
        }
    }

    fn non_negative(&mut self, path: impl Into<String>, v: f64) {
        if !(v.is_finite() && v >= 0.0) {
            self.err(path, format!("must be a non-negative number, got {v}"));
        }
    }
}

impl ScenarioDocument {
    fn roles(&self) -> BTreeMap<&str, Role> {
        self.nodes.iter().map(|n| (n.id.as_str(), n.role)).collect()
    }

    /// Catalog ids and their kinds.
    fn catalog_kinds(&self) -> BTreeMap<&ResourceId, ResourceKind> {
        let c = &self.catalog;
        c.materials
            .iter()
            .map(|m| (&m.id, ResourceKind::Material))
            .chain(c.components.iter().map(|x| (&x.id, ResourceKind::Component)))
            .chain(c.questions.iter().map(|x| (&x.id, ResourceKind::Question)))
            .chain(c.courses.iter().map(|x| (&x.id, ResourceKind::Course)))
            .collect()
    }

    /// Structural and referential checks. Empty when the document is usable.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut c = Checker { out: Vec::new() };
        let area_ok = self.area.width.is_finite()
            && self.area.height.is_finite()
            && self.area.width > 0.0
            && self.area.height > 0.0;
        if !area_ok {
            c.err("area", "width and height must be positive");
        }
        if self.ticks == 0 {
            c.err("ticks", "must be at least 1");
        }
        if self.sample_every == 0 {
            c.err("sample_every", "must be at least 1");
        }
        self.check_nodes(&mut c, area_ok);
        self.check_catalog(&mut c);
        self.check_schedule(&mut c);
        self.check_parameters(&mut c);
        c.out
    }

    fn check_nodes(&self, c: &mut Checker, area_ok: bool) {
        let mut seen = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let p = format!("nodes[{i}]");
            if n.id.is_empty() || n.id.contains([',', ':', '\t', '\n', ' ']) || n.id == "-" {
                c.err(format!("{p}.id"), format!("`{}` is not a usable node name", n.id));
            }
            if !seen.insert(n.id.as_str()) {
                c.err(format!("{p}.id"), format!("duplicate node `{}`", n.id));
            }
            if !(n.radio_range.is_finite() && n.radio_range > 0.0) {
                c.err(format!("{p}.radio_range"), format!("must be positive, got {}", n.radio_range));
            }
            let [x, y] = n.position;
            if area_ok && !((0.0..=self.area.width).contains(&x) && (0.0..=self.area.height).contains(&y)) {
                c.err(format!("{p}.position"), format!("({x}, {y}) lies outside the area"));
            }
            let [lo, hi] = n.speed;
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                c.err(format!("{p}.speed"), "need 0 <= min <= max");
            }
            c.unit(format!("{p}.skill"), n.skill);
            if let Some(b) = n.budget {
                c.non_negative(format!("{p}.budget"), b);
            }
            if n.role == Role::Staff && n.backbone == Some(false) {
                c.err(format!("{p}.backbone"), "staff nodes must have a backbone link");
            }
        }
    }

    fn check_catalog(&self, c: &mut Checker) {
        let kinds = self.catalog_kinds();
        let mut seen = BTreeSet::new();
        let cat = &self.catalog;
        let sections: [(&str, Vec<&ResourceId>); 4] = [
            ("materials", cat.materials.iter().map(|x| &x.id).collect()),
            ("components", cat.components.iter().map(|x| &x.id).collect()),
            ("questions", cat.questions.iter().map(|x| &x.id).collect()),
            ("courses", cat.courses.iter().map(|x| &x.id).collect()),
        ];
        for (section, ids) in &sections {
            for (i, id) in ids.iter().enumerate() {
                if !seen.insert(*id) {
                    c.err(format!("catalog.{section}[{i}].id"), format!("duplicate resource id {id}"));
                }
            }
        }
        for (i, m) in cat.materials.iter().enumerate() {
            if m.size == 0 {
                c.err(format!("catalog.materials[{i}].size"), "must be at least 1");
            }
            if m.topics.is_empty() {
                c.err(format!("catalog.materials[{i}].topics"), "needs at least one topic");
            }
        }
        let renders: BTreeMap<&ResourceId, &str> =
            cat.components.iter().map(|x| (&x.id, x.renders.as_str())).collect();
        for (i, x) in cat.components.iter().enumerate() {
            if x.size == 0 {
                c.err(format!("catalog.components[{i}].size"), "must be at least 1");
            }
        }
        for (i, q) in cat.questions.iter().enumerate() {
            let p = format!("catalog.questions[{i}]");
            if q.anchors.is_empty() {
                c.err(format!("{p}.anchors"), "needs at least one anchor");
            }
            for (j, a) in q.anchors.iter().enumerate() {
                match kinds.get(a) {
                    None => c.err(format!("{p}.anchors[{j}]"), format!("unknown resource {a}")),
                    Some(ResourceKind::Material) => {}
                    Some(k) => c.err(format!("{p}.anchors[{j}]"), format!("{a} is a {k}, not a material")),
                }
            }
            match renders.get(&q.component) {
                None => c.err(format!("{p}.component"), format!("unknown component {}", q.component)),
                Some(r) if *r != q.qtype => c.err(
                    format!("{p}.qtype"),
                    format!("component {} renders `{r}`, not `{}`", q.component, q.qtype),
                ),
                Some(_) => {}
            }
        }
        for (i, course) in cat.courses.iter().enumerate() {
            let p = format!("catalog.courses[{i}]");
            for (j, m) in course.members.iter().enumerate() {
                if kinds.get(m) != Some(&ResourceKind::Question) {
                    c.err(format!("{p}.members[{j}]"), format!("unknown question {m}"));
                }
            }
            for (j, d) in course.program.iter().enumerate() {
                for q in d.question_refs() {
                    if kinds.get(&q) != Some(&ResourceKind::Question) {
                        c.err(format!("{p}.program[{j}]"), format!("unknown question {q}"));
                    } else if !course.members.contains(&q) {
                        c.err(format!("{p}.program[{j}]"), format!("{q} is not a member of the course"));
                    }
                }
                if let Directive::BalancedConstraint(b) = d {
                    if b.n == 0 {
                        c.err(format!("{p}.program[{j}].n"), "window must hold at least one question");
                    }
                    c.unit(format!("{p}.program[{j}].p"), b.p);
                }
            }
        }
    }

    fn check_schedule(&self, c: &mut Checker) {
        let roles = self.roles();
        let kinds = self.catalog_kinds();
        let in_run = |t: Tick| (1..=self.ticks).contains(&t);
        for (i, l) in self.lectures.iter().enumerate() {
            let p = format!("lectures[{i}]");
            if !in_run(l.tick) {
                c.err(format!("{p}.tick"), format!("{} is outside 1..={}", l.tick, self.ticks));
            }
            if roles.get(l.staff.as_str()) != Some(&Role::Staff) {
                c.err(format!("{p}.staff"), format!("`{}` is not a staff node", l.staff));
            }
            for (j, r) in l.resources.iter().enumerate() {
                if !kinds.contains_key(r) {
                    c.err(format!("{p}.resources[{j}]"), format!("unknown resource {r}"));
                }
            }
            for (j, a) in l.attendees.iter().enumerate() {
                if roles.get(a.as_str()) != Some(&Role::Student) {
                    c.err(format!("{p}.attendees[{j}]"), format!("`{a}` is not a student node"));
                }
            }
        }
        if let Some(q) = &self.quiz {
            if !(1 <= q.start && q.start <= q.deadline && q.deadline <= self.ticks) {
                c.err("quiz.deadline", format!("need 1 <= start <= deadline <= {}", self.ticks));
            }
            for (j, id) in q.questions.iter().enumerate() {
                if kinds.get(id) != Some(&ResourceKind::Question) {
                    c.err(format!("quiz.questions[{j}]"), format!("unknown question {id}"));
                }
            }
            if q.base_points == 0 {
                c.err("quiz.base_points", "must be at least 1");
            }
            c.unit("quiz.answer_rate", q.answer_rate);
            c.unit("quiz.joker_rate", q.joker_rate);
        }
        for (i, s) in self.script.iter().enumerate() {
            let p = format!("script[{i}]");
            if !in_run(s.tick) {
                c.err(format!("{p}.tick"), format!("{} is outside 1..={}", s.tick, self.ticks));
            }
            if !roles.contains_key(s.node.as_str()) {
                c.err(format!("{p}.node"), format!("unknown node `{}`", s.node));
            }
            if let Action::Evaluate { score, .. } = &s.action {
                c.unit(format!("{p}.action.score"), *score);
            }
            for r in s.action.references() {
                let known_origin = kinds.contains_key(r) || roles.contains_key(r.origin.as_str());
                if !known_origin {
                    c.err(format!("{p}.action"), format!("{r} is neither in the catalog nor authored by a node"));
                }
            }
        }
        let backbone: BTreeSet<&str> = self
            .nodes
            .iter()
            .filter(|n| n.backbone.unwrap_or(n.role == Role::Staff))
            .map(|n| n.id.as_str())
            .collect();
        for (i, f) in self.fetch_requests.iter().enumerate() {
            let p = format!("fetch_requests[{i}]");
            if !in_run(f.tick) {
                c.err(format!("{p}.tick"), format!("{} is outside 1..={}", f.tick, self.ticks));
            }
            if f.nodes.is_empty() {
                c.err(format!("{p}.nodes"), "clique has no members");
            }
            for (j, n) in f.nodes.iter().enumerate() {
                if !roles.contains_key(n.as_str()) {
                    c.err(format!("{p}.nodes[{j}]"), format!("unknown node `{n}`"));
                } else if !backbone.contains(n.as_str()) {
                    c.err(format!("{p}.nodes[{j}]"), format!("`{n}` has no backbone link"));
                }
            }
            for (j, r) in f.resources.iter().enumerate() {
                if !kinds.contains_key(r) {
                    c.err(format!("{p}.resources[{j}]"), format!("unknown resource {r}"));
                }
            }
        }
    }

    fn check_parameters(&self, c: &mut Checker) {
        c.non_negative("cost.backbone_unit_cost", self.cost.backbone_unit_cost);
        c.non_negative("cost.backbone_message_cost", self.cost.backbone_message_cost);
        let pol = &self.policy;
        if pol.contact_budget == 0 {
            c.err("policy.contact_budget", "must be at least 1");
        }
        if pol.ttl_base == 0 {
            c.err("policy.ttl_base", "must be at least 1");
        }
        c.unit("policy.keep_threshold", pol.keep_threshold);
        if pol.demand_threshold == 0 {
            c.err("policy.demand_threshold", "must be at least 1");
        }
        c.non_negative("policy.budget", pol.budget);
        let a = &self.authoring;
        c.unit("authoring.question_rate", a.question_rate);
        c.unit("authoring.annotation_rate", a.annotation_rate);
        c.unit("authoring.link_rate", a.link_rate);
        c.unit("authoring.evaluation_rate", a.evaluation_rate);
        for (name, w) in [
            ("question", self.weights.question),
            ("link", self.weights.link),
            ("annotation", self.weights.annotation),
        ] {
            c.non_negative(format!("weights.{name}"), w);
        }
        c.unit("weights.unrated", self.weights.unrated);
    }

    /// Validates and builds the simulator configuration.
    pub fn into_config(self) -> Result<SimConfig, ScenarioError> {
        let diags = self.validate();
        if !diags.is_empty() {
            return Err(ScenarioError::InvalidScenario(diags));
        }
        let roles: BTreeMap<String, Role> =
            self.nodes.iter().map(|n| (n.id.clone(), n.role)).collect();
        let staff_origin = |id: &ResourceId| roles.get(id.origin.as_str()) != Some(&Role::Student);
        let pol = &self.policy;
        let nodes = self
            .nodes
            .iter()
            .map(|n| NodeConfig {
                id: NodeId::new(n.id.clone()),
                role: n.role,
                position: Position::new(n.position[0], n.position[1]),
                speed: (n.speed[0], n.speed[1]),
                pause: n.pause,
                radio_range: n.radio_range,
                interests: InterestProfile::new(n.interests.iter().cloned()),
                backbone: n.backbone.unwrap_or(n.role == Role::Staff),
                budget: n.budget.unwrap_or(pol.budget),
                skill: n.skill,
            })
            .collect();
        let cat = &self.catalog;
        let mut catalog: Vec<Resource> = Vec::new();
        catalog.extend(cat.materials.iter().map(|m| {
            Resource::Material(MaterialUnit {
                id: m.id.clone(),
                topics: m.topics.iter().cloned().collect(),
                size: m.size,
                staff_origin: staff_origin(&m.id),
            })
        }));
        catalog.extend(cat.components.iter().map(|x| {
            Resource::Component(ComponentDescriptor {
                id: x.id.clone(),
                renders: QuestionType::new(x.renders.clone()),
                size: x.size,
            })
        }));
        catalog.extend(cat.questions.iter().map(|q| {
            Resource::Question(crate::resource::Question {
                id: q.id.clone(),
                qtype: QuestionType::new(q.qtype.clone()),
                anchors: q.anchors.iter().cloned().collect(),
                component: q.component.clone(),
                author: q.id.origin.clone(),
            })
        }));
        catalog.extend(cat.courses.iter().map(|x| {
            Resource::Course(Course {
                id: x.id.clone(),
                program: x.program.clone(),
                members: x.members.clone(),
            })
        }));
        let ttl = TtlParams {
            ttl_base: pol.ttl_base,
            keep_threshold: pol.keep_threshold,
        };
        let policy = SimPolicy {
            contact_budget: pol.contact_budget,
            ttl,
            tombstone_window: pol.tombstone_window.unwrap_or(2 * pol.ttl_base),
            injection: InjectionPolicy {
                budget: pol.budget,
                demand_threshold: pol.demand_threshold,
                deadlock_grace: pol.deadlock_grace,
            },
            repeat_cap: pol.repeat_cap,
        };
        Ok(SimConfig {
            area: self.area,
            ticks: self.ticks,
            sample_every: self.sample_every,
            nodes,
            catalog,
            lectures: self.lectures,
            quiz: self.quiz.map(|q| QuizSpec {
                start: q.start,
                deadline: q.deadline,
                questions: q.questions,
                base_points: q.base_points,
                joker_limit: q.joker_limit,
                answer_rate: q.answer_rate,
                joker_rate: q.joker_rate,
            }),
            cost: self.cost,
            policy,
            authoring: self.authoring,
            weights: self.weights,
            script: self.script,
            fetch_requests: self.fetch_requests,
        })
    }
}
