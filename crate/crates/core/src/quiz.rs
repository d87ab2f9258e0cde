//! Quiz layer: per-question scoring with joker halving, cooperation points
//! weighted by peer ratings, and the final ranking.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::paradigm::{is_right, Outcome};
use crate::resource::{
    aggregate_score, is_displayable, Annotation, Evaluation, Link, NodeId, Resource, ResourceId,
    ResourceKind, Store, Tick,
};

pub const DEFAULT_BASE_POINTS: u64 = 100;
pub const DEFAULT_JOKER_LIMIT: u32 = 3;

/// Attainable points after `jokers_used` halvings, rounded down.
pub fn question_value(base: u64, jokers_used: u32) -> u64 {
    base.checked_shr(jokers_used).unwrap_or(0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JokerKind {
    Link,
    Annotation,
    Statistics,
}

impl fmt::Display for JokerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            JokerKind::Link => "link",
            JokerKind::Annotation => "annotation",
            JokerKind::Statistics => "statistics",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub right: u32,
    pub wrong: u32,
}

/// Answers a device has seen locally, per question.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerStats(pub BTreeMap<ResourceId, Tally>);

impl AnswerStats {
    pub fn record(&mut self, q: &ResourceId, outcome: Outcome) {
        let t = self.0.entry(q.clone()).or_default();
        if is_right(outcome) {
            t.right += 1;
        } else {
            t.wrong += 1;
        }
    }

    pub fn get(&self, q: &ResourceId) -> Tally {
        self.0.get(q).copied().unwrap_or_default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub right: f64,
    pub wrong: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Hint {
    Links(Vec<Link>),
    Annotations(Vec<Annotation>),
    Statistics(Histogram),
}

impl Hint {
    pub fn item_count(&self) -> usize {
        match self {
            Hint::Links(l) => l.len(),
            Hint::Annotations(a) => a.len(),
            Hint::Statistics(_) => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Player {
    pub node: NodeId,
    pub knowledge_points: u64,
    pub cooperation_points: f64,
    pub joker_uses: BTreeMap<ResourceId, u32>,
    pub answered: BTreeSet<ResourceId>,
}

impl Player {
    pub fn new(node: NodeId) -> Self {
        Player {
            node,
            knowledge_points: 0,
            cooperation_points: 0.0,
            joker_uses: BTreeMap::new(),
            answered: BTreeSet::new(),
        }
    }

    pub fn jokers_on(&self, q: &ResourceId) -> u32 {
        self.joker_uses.get(q).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.knowledge_points + self.cooperation_points.max(0.0).round() as u64
    }
}

/// Points per contribution kind at full rating. Unrated content counts as
/// `unrated` rating.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CooperationWeights {
    pub question: f64,
    pub link: f64,
    pub annotation: f64,
    pub unrated: f64,
}

impl Default for CooperationWeights {
    fn default() -> Self {
        CooperationWeights {
            question: 10.0,
            link: 5.0,
            annotation: 3.0,
            unrated: 0.5,
        }
    }
}

impl CooperationWeights {
    pub fn weight(&self, kind: ResourceKind) -> f64 {
        match kind {
            ResourceKind::Question => self.question,
            ResourceKind::Link => self.link,
            ResourceKind::Annotation => self.annotation,
            _ => 0.0,
        }
    }
}

/// Sum over contributions of weight(kind) times mean peer rating.
pub fn cooperation_points<'a>(
    contributions: impl IntoIterator<Item = &'a Resource>,
    evals: &[&Evaluation],
    weights: &CooperationWeights,
) -> f64 {
    contributions
        .into_iter()
        .map(|r| {
            let rating = aggregate_score(r.id(), evals.iter().copied()).value_or(weights.unrated);
            weights.weight(r.kind()) * rating
        })
        .sum::<f64>()
        // an empty f64 sum is -0.0
        + 0.0
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuizError {
    #[error("quiz already finished")]
    Finished,
    #[error("{0} is not a registered player")]
    UnknownPlayer(NodeId),
    #[error("{0} is not a question held on the device")]
    UnknownQuestion(ResourceId),
    #[error("{0} cannot be displayed: component or anchors missing")]
    NotDisplayable(ResourceId),
    #[error("{0} already answered")]
    AlreadyAnswered(ResourceId),
    #[error("joker limit {limit} reached on {question}")]
    JokerLimit { question: ResourceId, limit: u32 },
    #[error("no {kind} hint available for {question}")]
    NothingAvailable { question: ResourceId, kind: JokerKind },
    #[error("deadline {deadline} not reached at {now}")]
    DeadlineNotReached { now: Tick, deadline: Tick },
}

/// Player totals collected from a device at the deadline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub node: NodeId,
    pub knowledge_points: u64,
    pub cooperation_points: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub rank: usize,
    pub node: NodeId,
    pub knowledge_points: u64,
    pub cooperation_points: f64,
    pub total: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub entries: Vec<RankEntry>,
    /// Players without a report; ranked with their last known totals.
    pub missing: Vec<NodeId>,
}

impl Ranking {
    pub fn winner(&self) -> Option<&NodeId> {
        self.entries.first().map(|e| &e.node)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuizState {
    pub players: BTreeMap<NodeId, Player>,
    pub base_points: u64,
    pub joker_limit: u32,
    pub deadline: Tick,
    pub finished: bool,
}

impl QuizState {
    pub fn new(players: impl IntoIterator<Item = NodeId>, deadline: Tick) -> Self {
        QuizState {
            players: players
                .into_iter()
                .map(|n| (n.clone(), Player::new(n)))
                .collect(),
            base_points: DEFAULT_BASE_POINTS,
            joker_limit: DEFAULT_JOKER_LIMIT,
            deadline,
            finished: false,
        }
    }

    pub fn question_value_for(&self, player: &Player, q: &ResourceId) -> u64 {
        question_value(self.base_points, player.jokers_on(q))
    }

    fn player_mut(&mut self, node: &NodeId) -> Result<&mut Player, QuizError> {
        if self.finished {
            return Err(QuizError::Finished);
        }
        self.players
            .get_mut(node)
            .ok_or_else(|| QuizError::UnknownPlayer(node.clone()))
    }

    /// Consumes a joker on `q` and returns the hint. The joker is charged
    /// even when the device holds nothing to show.
    pub fn use_joker(
        &mut self,
        node: &NodeId,
        q: &ResourceId,
        kind: JokerKind,
        store: &Store,
        stats: &AnswerStats,
    ) -> Result<Hint, QuizError> {
        let limit = self.joker_limit;
        let player = self.player_mut(node)?;
        let used = player.jokers_on(q);
        if used >= limit {
            return Err(QuizError::JokerLimit {
                question: q.clone(),
                limit,
            });
        }
        player.joker_uses.insert(q.clone(), used + 1);

        let hint = match kind {
            JokerKind::Link => {
                let mut touching: BTreeSet<&ResourceId> = [q].into();
                if let Some(Resource::Question(question)) = store.get(q) {
                    touching.extend(question.anchors.iter());
                }
                let links: Vec<Link> = store
                    .iter()
                    .filter_map(|r| match r {
                        Resource::Link(l)
                            if touching.contains(&l.source) || touching.contains(&l.dest) =>
                        {
                            Some(l.clone())
                        }
                        _ => None,
                    })
                    .collect();
                (!links.is_empty()).then_some(Hint::Links(links))
            }
            JokerKind::Annotation => {
                let notes: Vec<Annotation> = store
                    .iter()
                    .filter_map(|r| match r {
                        Resource::Annotation(a) if &a.target == q => Some(a.clone()),
                        _ => None,
                    })
                    .collect();
                (!notes.is_empty()).then_some(Hint::Annotations(notes))
            }
            JokerKind::Statistics => {
                let t = stats.get(q);
                let n = t.right + t.wrong;
                (n > 0).then(|| {
                    Hint::Statistics(Histogram {
                        right: t.right as f64 / n as f64,
                        wrong: t.wrong as f64 / n as f64,
                    })
                })
            }
        };
        hint.ok_or(QuizError::NothingAvailable {
            question: q.clone(),
            kind,
        })
    }

    /// Scores one answer and returns the points awarded.
    pub fn answer_question(
        &mut self,
        node: &NodeId,
        q: &ResourceId,
        outcome: Outcome,
        store: &Store,
    ) -> Result<u64, QuizError> {
        let base = self.base_points;
        let player = self.player_mut(node)?;
        let question = match store.get(q) {
            Some(Resource::Question(question)) => question,
            _ => return Err(QuizError::UnknownQuestion(q.clone())),
        };
        if !is_displayable(question, store) {
            return Err(QuizError::NotDisplayable(q.clone()));
        }
        if !player.answered.insert(q.clone()) {
            return Err(QuizError::AlreadyAnswered(q.clone()));
        }
        let awarded = if is_right(outcome) {
            question_value(base, player.jokers_on(q))
        } else {
            0
        };
        player.knowledge_points += awarded;
        Ok(awarded)
    }

    /// Closes the quiz and ranks everyone by total points, highest first,
    /// ties broken by node id.
    pub fn finalize(&mut self, now: Tick, reports: &[StatusReport]) -> Result<Ranking, QuizError> {
        if self.finished {
            return Err(QuizError::Finished);
        }
        if now < self.deadline {
            return Err(QuizError::DeadlineNotReached {
                now,
                deadline: self.deadline,
            });
        }
        let by_node: BTreeMap<&NodeId, &StatusReport> =
            reports.iter().map(|r| (&r.node, r)).collect();
        let mut missing = Vec::new();
        for (node, player) in self.players.iter_mut() {
            match by_node.get(node) {
                Some(report) => {
                    player.knowledge_points = report.knowledge_points;
                    player.cooperation_points = report.cooperation_points;
                }
                None => missing.push(node.clone()),
            }
        }
        self.finished = true;
        Ok(Ranking {
            entries: rank_players(self.players.values()),
            missing,
        })
    }
}

pub fn rank_players<'a>(players: impl IntoIterator<Item = &'a Player>) -> Vec<RankEntry> {
    let mut rows: Vec<&Player> = players.into_iter().collect();
    rows.sort_by(|a, b| b.total().cmp(&a.total()).then_with(|| a.node.cmp(&b.node)));
    rows.into_iter()
        .enumerate()
        .map(|(i, p)| RankEntry {
            rank: i + 1,
            node: p.node.clone(),
            knowledge_points: p.knowledge_points,
            cooperation_points: p.cooperation_points,
            total: p.total(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resource::fixtures::*;
    use crate::resource::{AnnotationSymbol, Evaluation};
    use proptest::prelude::*;

    fn nid(s: &str) -> NodeId {
        NodeId::from(s)
    }

    fn quiz_store() -> Store {
        [
            material("m1", "t", 1),
            material("m2", "t", 1),
            component("c", "multiple-choice"),
            question("q", &["m1"], "c"),
            link("l", "q", "m2"),
        ]
        .into_iter()
        .collect()
    }

    #[test]
    fn halving_values() {
        assert_eq!(question_value(100, 0), 100);
        assert_eq!(question_value(100, 1), 50);
        assert_eq!(question_value(100, 2), 25);
        assert_eq!(question_value(25, 3), 3);
        assert_eq!(question_value(100, 200), 0);
    }

    #[test]
    fn link_joker_exposes_links() {
        let mut quiz = QuizState::new([nid("a")], 10);
        let hint = quiz
            .use_joker(&nid("a"), &rid("q"), JokerKind::Link, &quiz_store(), &AnswerStats::default())
            .unwrap();
        let Hint::Links(links) = hint else { panic!() };
        assert_eq!(links.len(), 1);
        assert_eq!(links[0].id, rid("l"));
    }

    #[test]
    fn statistics_joker_normalizes() {
        let mut stats = AnswerStats::default();
        for o in [1.0, 1.0, 1.0, 0.0] {
            stats.record(&rid("q"), o);
        }
        let mut quiz = QuizState::new([nid("a")], 10);
        let hint = quiz
            .use_joker(&nid("a"), &rid("q"), JokerKind::Statistics, &quiz_store(), &stats)
            .unwrap();
        assert_eq!(
            hint,
            Hint::Statistics(Histogram {
                right: 0.75,
                wrong: 0.25
            })
        );
    }

    #[test]
    fn empty_joker_still_costs() {
        let mut quiz = QuizState::new([nid("a")], 10);
        let err = quiz
            .use_joker(&nid("a"), &rid("q"), JokerKind::Annotation, &Store::new(), &AnswerStats::default())
            .unwrap_err();
        assert!(matches!(err, QuizError::NothingAvailable { .. }));
        assert_eq!(quiz.players[&nid("a")].jokers_on(&rid("q")), 1);
    }

    #[test]
    fn joker_limit_enforced() {
        let mut quiz = QuizState::new([nid("a")], 10);
        quiz.joker_limit = 1;
        let store = quiz_store();
        let stats = AnswerStats::default();
        let _ = quiz.use_joker(&nid("a"), &rid("q"), JokerKind::Link, &store, &stats);
        assert!(matches!(
            quiz.use_joker(&nid("a"), &rid("q"), JokerKind::Link, &store, &stats),
            Err(QuizError::JokerLimit { .. })
        ));
    }

    #[test]
    fn answers_score_with_halving() {
        let store = quiz_store();
        let mut quiz = QuizState::new([nid("a"), nid("b"), nid("c")], 10);
        assert_eq!(quiz.answer_question(&nid("a"), &rid("q"), 1.0, &store), Ok(100));
        let _ = quiz.use_joker(&nid("b"), &rid("q"), JokerKind::Link, &store, &AnswerStats::default());
        assert_eq!(quiz.answer_question(&nid("b"), &rid("q"), 1.0, &store), Ok(50));
        assert_eq!(quiz.answer_question(&nid("c"), &rid("q"), 0.0, &store), Ok(0));
        assert_eq!(
            quiz.answer_question(&nid("a"), &rid("q"), 1.0, &store),
            Err(QuizError::AlreadyAnswered(rid("q")))
        );
    }

    #[test]
    fn answer_requires_displayable_question() {
        let store: Store = [material("m1", "t", 1), question("q", &["m1"], "c")]
            .into_iter()
            .collect();
        let mut quiz = QuizState::new([nid("a")], 10);
        assert_eq!(
            quiz.answer_question(&nid("a"), &rid("q"), 1.0, &store),
            Err(QuizError::NotDisplayable(rid("q")))
        );
    }

    fn annotation(id: &str) -> Resource {
        Resource::Annotation(Annotation {
            id: rid(id),
            target: rid("m1"),
            symbol: AnnotationSymbol::NewFact,
            size: 1,
            author: nid("a"),
        })
    }

    #[test]
    fn cooperation_examples() {
        let w = CooperationWeights::default();
        let note = annotation("n");
        let e = Evaluation {
            id: ResourceId::new("b", 1),
            target: rid("n"),
            score: 0.8,
            evaluator: nid("b"),
        };
        let pts = cooperation_points([&note], &[&e], &w);
        assert!((pts - 2.4).abs() < 1e-12);
        assert_eq!(cooperation_points([], &[], &w), 0.0);

        let spam = question("spam", &["m1"], "c");
        let zero = Evaluation {
            id: ResourceId::new("b", 2),
            target: rid("spam"),
            score: 0.0,
            evaluator: nid("b"),
        };
        assert_eq!(cooperation_points([&spam], &[&zero], &w), 0.0);
        // unrated counts half
        assert_eq!(cooperation_points([&spam], &[], &w), 5.0);
    }

    fn report(node: &str, k: u64) -> StatusReport {
        StatusReport {
            node: nid(node),
            knowledge_points: k,
            cooperation_points: 0.0,
        }
    }

    #[test]
    fn finalize_sorts_and_breaks_ties() {
        let mut quiz = QuizState::new([nid("A"), nid("B"), nid("C")], 10);
        assert!(matches!(quiz.finalize(9, &[]), Err(QuizError::DeadlineNotReached { .. })));
        let r = quiz
            .finalize(10, &[report("A", 30), report("B", 50), report("C", 20)])
            .unwrap();
        let order: Vec<_> = r.entries.iter().map(|e| e.node.as_str()).collect();
        assert_eq!(order, ["B", "A", "C"]);
        assert_eq!(r.winner(), Some(&nid("B")));
        assert!(quiz.finished);
        assert_eq!(quiz.finalize(11, &[]), Err(QuizError::Finished));

        let mut quiz = QuizState::new([nid("C"), nid("B")], 0);
        let r = quiz.finalize(0, &[report("B", 50), report("C", 50)]).unwrap();
        let order: Vec<_> = r.entries.iter().map(|e| e.node.as_str()).collect();
        assert_eq!(order, ["B", "C"]);
    }

    #[test]
    fn missing_reports_rank_with_stale_totals() {
        let store = quiz_store();
        let mut quiz = QuizState::new([nid("A"), nid("B")], 5);
        quiz.answer_question(&nid("B"), &rid("q"), 1.0, &store).unwrap();
        let r = quiz.finalize(5, &[report("A", 30)]).unwrap();
        assert_eq!(r.missing, vec![nid("B")]);
        assert_eq!(r.entries[0].node, nid("B"));
        assert_eq!(r.entries[0].total, 100);
    }

    proptest! {
        #[test]
        fn value_non_increasing(base in 0u64..100_000, k in 0u32..40) {
            prop_assert!(question_value(base, k + 1) <= question_value(base, k));
            let zero_after = if base == 0 { 0 } else { 64 - base.leading_zeros() };
            prop_assert_eq!(question_value(base, zero_after), 0);
        }

        #[test]
        fn contributing_beats_idle(kinds in prop::collection::vec(0usize..3, 1..6), scores in prop::collection::vec(0.5f64..=1.0, 6)) {
            let w = CooperationWeights::default();
            let items: Vec<Resource> = kinds.iter().enumerate().map(|(i, k)| match k {
                0 => question(&format!("x{i}"), &["m1"], "c"),
                1 => link(&format!("x{i}"), "m1", "m2"),
                _ => annotation(&format!("x{i}")),
            }).collect();
            let evals: Vec<Evaluation> = items.iter().zip(&scores).enumerate().map(|(i, (r, s))| Evaluation {
                id: ResourceId::new("rater", i as u32), target: r.id().clone(), score: *s, evaluator: nid("rater"),
            }).collect();
            let refs: Vec<&Evaluation> = evals.iter().collect();
            let mut busy = Player::new(nid("busy"));
            busy.knowledge_points = 200;
            busy.cooperation_points = cooperation_points(&items, &refs, &w);
            let mut idle = Player::new(nid("idle"));
            idle.knowledge_points = 200;
            prop_assert!(busy.total() > idle.total());
        }

        #[test]
        fn histogram_sums_to_one(right in 0u32..50, wrong in 0u32..50) {
            prop_assume!(right + wrong > 0);
            let mut stats = AnswerStats::default();
            for _ in 0..right { stats.record(&rid("q"), 1.0); }
            for _ in 0..wrong { stats.record(&rid("q"), 0.0); }
            let mut quiz = QuizState::new([nid("a")], 0);
            let Ok(Hint::Statistics(h)) = quiz.use_joker(&nid("a"), &rid("q"), JokerKind::Statistics, &Store::new(), &stats) else { panic!() };
            prop_assert!((h.right + h.wrong - 1.0).abs() < 1e-12);
        }
    }
}
