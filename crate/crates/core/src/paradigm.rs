//! Question-selection paradigms and course execution.
//!
//! Four selection semantics are supported: free selection in input order,
//! causal links that branch on right/wrong answers, (dynamic) ordering
//! constraints with forced sub-questions, and a balanced gate that repeats
//! the last `n` questions while their mean outcome stays at or below `p`.
//! A [`Course`] program chains them; [`run_course`] interprets it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::resource::{Course, ResourceId};

/// Answer outcome in `[0, 1]`; anything at or above [`RIGHT_THRESHOLD`]
/// counts as a right answer.
pub type Outcome = f64;

pub const RIGHT_THRESHOLD: Outcome = 0.5;

pub const DEFAULT_REPEAT_CAP: u32 = 3;

pub fn is_right(outcome: Outcome) -> bool {
    outcome >= RIGHT_THRESHOLD
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalEdges {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<ResourceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wrong: Option<ResourceId>,
}

/// `sub` may only be asked once `reference` has been asked.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ForcedPair {
    pub sub: ResourceId,
    pub reference: ResourceId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub chains: Vec<Vec<ResourceId>>,
    #[serde(default)]
    pub forced: Vec<ForcedPair>,
}

/// A constraint dropped because it names a question outside the bank.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnavailableConstraint {
    pub directive: usize,
    pub members: Vec<ResourceId>,
    pub missing: Vec<ResourceId>,
}

impl ConstraintSet {
    /// Splits off every chain or forced pair that references a question not
    /// in `bank`; those are skipped whole.
    pub fn restrict(&self, bank: &[ResourceId]) -> (ConstraintSet, Vec<Vec<ResourceId>>) {
        let available: BTreeSet<&ResourceId> = bank.iter().collect();
        let mut kept = ConstraintSet::default();
        let mut skipped = Vec::new();
        for chain in &self.chains {
            if chain.iter().all(|q| available.contains(q)) {
                kept.chains.push(chain.clone());
            } else {
                skipped.push(chain.clone());
            }
        }
        for pair in &self.forced {
            if available.contains(&pair.sub) && available.contains(&pair.reference) {
                kept.forced.push(pair.clone());
            } else {
                skipped.push(vec![pair.reference.clone(), pair.sub.clone()]);
            }
        }
        (kept, skipped)
    }

    fn candidates(&self) -> BTreeSet<&ResourceId> {
        self.chains
            .iter()
            .flatten()
            .chain(self.forced.iter().flat_map(|p| [&p.sub, &p.reference]))
            .collect()
    }

    fn forced_ok(&self, q: &ResourceId, state: &SelectorState) -> bool {
        self.forced
            .iter()
            .filter(|p| &p.sub == q)
            .all(|p| state.has_asked(&p.reference))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalancedParams {
    pub n: usize,
    pub p: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParadigmError {
    #[error("balanced window must be at least 1")]
    EmptyWindow,
    #[error("balanced threshold {0} outside [0, 1]")]
    ThresholdOutOfRange(f64),
    #[error("history holds {have} answers, window needs {need}")]
    InsufficientHistory { have: usize, need: usize },
    #[error("constraints admit no question")]
    NoEligible,
}

impl BalancedParams {
    pub fn new(n: usize, p: f64) -> Result<Self, ParadigmError> {
        if n == 0 {
            return Err(ParadigmError::EmptyWindow);
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(ParadigmError::ThresholdOutOfRange(p));
        }
        Ok(BalancedParams { n, p })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Directive {
    Free,
    CausalLinks {
        edges: BTreeMap<ResourceId, CausalEdges>,
    },
    OrderingConstraint(ConstraintSet),
    DynamicOrderingConstraint(ConstraintSet),
    BalancedConstraint(BalancedParams),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectiveKind {
    Free,
    CausalLinks,
    OrderingConstraint,
    DynamicOrderingConstraint,
    BalancedConstraint,
}

impl fmt::Display for DirectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DirectiveKind::Free => "free",
            DirectiveKind::CausalLinks => "causal_links",
            DirectiveKind::OrderingConstraint => "ordering_constraint",
            DirectiveKind::DynamicOrderingConstraint => "dynamic_ordering_constraint",
            DirectiveKind::BalancedConstraint => "balanced_constraint",
        };
        f.write_str(s)
    }
}

impl Directive {
    pub fn kind(&self) -> DirectiveKind {
        match self {
            Directive::Free => DirectiveKind::Free,
            Directive::CausalLinks { .. } => DirectiveKind::CausalLinks,
            Directive::OrderingConstraint(_) => DirectiveKind::OrderingConstraint,
            Directive::DynamicOrderingConstraint(_) => DirectiveKind::DynamicOrderingConstraint,
            Directive::BalancedConstraint(_) => DirectiveKind::BalancedConstraint,
        }
    }

    /// Every question id the directive mentions.
    pub fn question_refs(&self) -> BTreeSet<ResourceId> {
        match self {
            Directive::Free | Directive::BalancedConstraint(_) => BTreeSet::new(),
            Directive::CausalLinks { edges } => edges
                .iter()
                .flat_map(|(from, e)| {
                    std::iter::once(from.clone())
                        .chain(e.correct.clone())
                        .chain(e.wrong.clone())
                })
                .collect(),
            Directive::OrderingConstraint(c) | Directive::DynamicOrderingConstraint(c) => {
                c.candidates().into_iter().cloned().collect()
            }
        }
    }
}

/// Selection history for one course run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectorState {
    pub asked: Vec<(ResourceId, Outcome)>,
    /// Index into the bank of the first question not yet asked.
    pub cursor: usize,
    pub rng_seed: u64,
}

impl SelectorState {
    pub fn new(rng_seed: u64) -> Self {
        SelectorState {
            asked: Vec::new(),
            cursor: 0,
            rng_seed,
        }
    }

    pub fn has_asked(&self, q: &ResourceId) -> bool {
        self.asked.iter().any(|(id, _)| id == q)
    }

    pub fn record(&mut self, q: ResourceId, outcome: Outcome) {
        self.asked.push((q, outcome));
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Pick {
    Question(ResourceId),
    Exhausted,
}

/// First question in input order that has not been asked.
pub fn next_free(state: &mut SelectorState, bank: &[ResourceId]) -> Pick {
    while state.cursor < bank.len() && state.has_asked(&bank[state.cursor]) {
        state.cursor += 1;
    }
    // questions before the cursor are all asked; later ones may have been
    // asked out of order by another paradigm
    match bank[state.cursor.min(bank.len())..]
        .iter()
        .find(|q| !state.has_asked(q))
    {
        Some(q) => Pick::Question(q.clone()),
        None => Pick::Exhausted,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CausalStep {
    Follow(ResourceId),
    Fallback,
}

/// Follows the right- or wrong-answer edge out of the last question.
pub fn next_causal(
    state: &SelectorState,
    edges: &BTreeMap<ResourceId, CausalEdges>,
    last: (&ResourceId, Outcome),
    bank: &[ResourceId],
) -> CausalStep {
    let (q, outcome) = last;
    let target = edges.get(q).and_then(|e| {
        if is_right(outcome) {
            e.correct.as_ref()
        } else {
            e.wrong.as_ref()
        }
    });
    match target {
        Some(t) if bank.contains(t) && !state.has_asked(t) => CausalStep::Follow(t.clone()),
        _ => CausalStep::Fallback,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Eligibility {
    /// Eligible questions in input order; selection takes the first.
    Eligible(Vec<ResourceId>),
    /// Every constrained question has been asked.
    Exhausted,
}

/// Questions the ordering constraints admit right now.
pub fn next_ordering(
    state: &SelectorState,
    constraints: &ConstraintSet,
    bank: &[ResourceId],
) -> Result<Eligibility, ParadigmError> {
    let candidates = constraints.candidates();
    let pending: Vec<&ResourceId> = bank
        .iter()
        .filter(|q| candidates.contains(q) && !state.has_asked(q))
        .collect();
    if pending.is_empty() {
        return Ok(Eligibility::Exhausted);
    }
    let eligible: Vec<ResourceId> = pending
        .into_iter()
        .filter(|q| {
            let chain_ok = constraints.chains.iter().all(|chain| {
                match chain.iter().position(|c| c == *q) {
                    Some(pos) => chain[..pos].iter().all(|p| state.has_asked(p)),
                    None => true,
                }
            });
            chain_ok && constraints.forced_ok(q, state)
        })
        .cloned()
        .collect();
    if eligible.is_empty() {
        Err(ParadigmError::NoEligible)
    } else {
        Ok(Eligibility::Eligible(eligible))
    }
}

/// Draws one chain uniformly among those whose next question is eligible and
/// returns that question. Consumes exactly one draw from `rng` on success.
pub fn next_dynamic<R: Rng>(
    state: &SelectorState,
    constraints: &ConstraintSet,
    rng: &mut R,
) -> Result<Pick, ParadigmError> {
    let mut any_pending = false;
    let heads: Vec<&ResourceId> = constraints
        .chains
        .iter()
        .filter_map(|chain| chain.iter().find(|q| !state.has_asked(q)))
        .inspect(|_| any_pending = true)
        .filter(|q| constraints.forced_ok(q, state))
        .collect();
    if heads.is_empty() {
        return if any_pending {
            Err(ParadigmError::NoEligible)
        } else {
            Ok(Pick::Exhausted)
        };
    }
    let pick = rng.gen_range(0..heads.len());
    Ok(Pick::Question(heads[pick].clone()))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GateVerdict {
    Continue,
    /// Re-ask these ids, oldest first.
    Repeat(Vec<ResourceId>),
}

/// Mean of the last `n` outcomes must strictly exceed `p` to continue.
pub fn balanced_gate(
    history: &[(ResourceId, Outcome)],
    params: &BalancedParams,
) -> Result<GateVerdict, ParadigmError> {
    if history.len() < params.n {
        return Err(ParadigmError::InsufficientHistory {
            have: history.len(),
            need: params.n,
        });
    }
    let window = &history[history.len() - params.n..];
    let mut outcomes: Vec<f64> = window.iter().map(|(_, o)| *o).collect();
    outcomes.sort_by(f64::total_cmp);
    let mean = outcomes.iter().sum::<f64>() / params.n as f64;
    if mean > params.p {
        Ok(GateVerdict::Continue)
    } else {
        Ok(GateVerdict::Repeat(
            window.iter().map(|(q, _)| q.clone()).collect(),
        ))
    }
}

/// Gate outcome recorded against an answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMark {
    /// No balanced gate active, or inside a repeat block.
    None,
    Bypass,
    Continue,
    Repeat,
}

impl fmt::Display for GateMark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GateMark::None => "-",
            GateMark::Bypass => "bypass",
            GateMark::Continue => "continue",
            GateMark::Repeat => "repeat",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub time: usize,
    pub question: ResourceId,
    pub outcome: Outcome,
    pub directive: DirectiveKind,
    pub gate: GateMark,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
    /// The repeat cap cut an endless repeat loop.
    pub truncated: bool,
    pub unavailable: Vec<UnavailableConstraint>,
    /// Indices of directives that ended because nothing was eligible.
    pub stalled: Vec<usize>,
}

impl Transcript {
    /// One tab-separated line per selection: time, question, directive,
    /// outcome, gate verdict.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.time, e.question, e.directive, e.outcome, e.gate
            ));
        }
        out
    }

    pub fn right_answers(&self) -> usize {
        self.entries.iter().filter(|e| is_right(e.outcome)).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CourseConfig {
    pub rng_seed: u64,
    pub repeat_cap: u32,
}

impl Default for CourseConfig {
    fn default() -> Self {
        CourseConfig {
            rng_seed: 0,
            repeat_cap: DEFAULT_REPEAT_CAP,
        }
    }
}

enum Prepared<'a> {
    Free,
    Causal(&'a BTreeMap<ResourceId, CausalEdges>),
    Ordering(ConstraintSet),
    Dynamic(ConstraintSet),
}

/// Executes the course program over the questions of `bank` that belong to
/// the course. `oracle` answers each selection.
pub fn run_course(
    course: &Course,
    bank: &[ResourceId],
    mut oracle: impl FnMut(&ResourceId) -> Outcome,
    config: CourseConfig,
) -> Transcript {
    let members: BTreeSet<&ResourceId> = course.members.iter().collect();
    let bank: Vec<ResourceId> = bank
        .iter()
        .filter(|q| members.contains(q))
        .cloned()
        .collect();

    let mut state = SelectorState::new(config.rng_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut transcript = Transcript::default();
    let mut gate: Option<BalancedParams> = None;
    let mut repeat_queue: VecDeque<ResourceId> = VecDeque::new();
    let mut consecutive_repeats = 0u32;

    for (index, directive) in course.program.iter().enumerate() {
        let prepared = match directive {
            Directive::BalancedConstraint(params) => {
                gate = Some(*params);
                continue;
            }
            Directive::Free => Prepared::Free,
            Directive::CausalLinks { edges } => Prepared::Causal(edges),
            Directive::OrderingConstraint(c) | Directive::DynamicOrderingConstraint(c) => {
                let (kept, skipped) = c.restrict(&bank);
                for members in skipped {
                    let missing = members
                        .iter()
                        .filter(|q| !bank.contains(q))
                        .cloned()
                        .collect();
                    transcript.unavailable.push(UnavailableConstraint {
                        directive: index,
                        members,
                        missing,
                    });
                }
                if matches!(directive, Directive::OrderingConstraint(_)) {
                    Prepared::Ordering(kept)
                } else {
                    Prepared::Dynamic(kept)
                }
            }
        };
        let kind = directive.kind();
        let mut last: Option<(ResourceId, Outcome)> = None;

        loop {
            let question = match repeat_queue.pop_front() {
                Some(q) => q,
                None => {
                    let pick = match &prepared {
                        Prepared::Free => Ok(next_free(&mut state, &bank)),
                        Prepared::Causal(edges) => {
                            let step = last
                                .as_ref()
                                .map(|(q, o)| next_causal(&state, edges, (q, *o), &bank));
                            match step {
                                Some(CausalStep::Follow(q)) => Ok(Pick::Question(q)),
                                _ => Ok(next_free(&mut state, &bank)),
                            }
                        }
                        Prepared::Ordering(c) => {
                            next_ordering(&state, c, &bank).map(|e| match e {
                                Eligibility::Eligible(qs) => Pick::Question(qs[0].clone()),
                                Eligibility::Exhausted => Pick::Exhausted,
                            })
                        }
                        Prepared::Dynamic(c) => next_dynamic(&state, c, &mut rng),
                    };
                    match pick {
                        Ok(Pick::Question(q)) => q,
                        Ok(Pick::Exhausted) => break,
                        Err(_) => {
                            transcript.stalled.push(index);
                            break;
                        }
                    }
                }
            };

            let outcome = oracle(&question).clamp(0.0, 1.0);
            state.record(question.clone(), outcome);
            last = Some((question.clone(), outcome));

            let mut mark = GateMark::None;
            let mut stop = false;
            if let (Some(params), true) = (gate, repeat_queue.is_empty()) {
                mark = match balanced_gate(&state.asked, &params) {
                    Err(_) => GateMark::Bypass,
                    Ok(GateVerdict::Continue) => {
                        consecutive_repeats = 0;
                        GateMark::Continue
                    }
                    Ok(GateVerdict::Repeat(ids)) => {
                        consecutive_repeats += 1;
                        if consecutive_repeats > config.repeat_cap {
                            stop = true;
                        } else {
                            repeat_queue.extend(ids);
                        }
                        GateMark::Repeat
                    }
                };
            }
            transcript.entries.push(TranscriptEntry {
                time: transcript.entries.len(),
                question,
                outcome,
                directive: kind,
                gate: mark,
            });
            if stop {
                transcript.truncated = true;
                return transcript;
            }
        }
    }
    transcript
}
