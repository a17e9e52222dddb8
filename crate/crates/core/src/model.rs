//! Process model skeleton: states, final states and allowed successions.
//!
//! The model acts as a feasibility oracle for traversal. It can be mined from
//! a log as a directly-follows relation or loaded from an edge-list file.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{EventKind, EventTrace, Outcome};

/// Identifier of the failure state in files and reports.
pub const FAIL_STATE_NAME: &str = "q_fail";

/// A state of the automaton: a process step or the failure state.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum State {
    Step(String),
    Fail,
}

impl State {
    pub fn step(name: impl Into<String>) -> Self {
        State::Step(name.into())
    }

    pub fn name(&self) -> &str {
        match self {
            State::Step(s) => s,
            State::Fail => FAIL_STATE_NAME,
        }
    }

    pub fn is_fail(&self) -> bool {
        matches!(self, State::Fail)
    }

    /// Parses a state name; `q_fail` denotes the failure state.
    pub fn parse(name: &str) -> Self {
        if name == FAIL_STATE_NAME {
            State::Fail
        } else {
            State::step(name)
        }
    }
}

// Lexicographic by name; used for deterministic tie-breaking.
impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        self.name().cmp(other.name()).then_with(|| self.is_fail().cmp(&other.is_fail()))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("log contains no intrinsic step")]
    EmptyLog,
    #[error("unknown state {0:?}")]
    UnknownState(String),
    #[error("model file line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("model file has no initial state")]
    MissingInitial,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessModel {
    states: BTreeSet<State>,
    alphabet: BTreeSet<String>,
    initial: State,
    finals: BTreeSet<State>,
    /// Explicit successions. Failure edges are implicit.
    edges: BTreeSet<(State, State)>,
}

impl ProcessModel {
    /// Builds a model from an initial state, final states and explicit edges.
    ///
    /// States are collected from all arguments; `q_fail` is always added and
    /// is always final. Edges into or out of `q_fail` are ignored.
    pub fn new(
        initial: State,
        finals: impl IntoIterator<Item = State>,
        edges: impl IntoIterator<Item = (State, State)>,
    ) -> Self {
        let edges: BTreeSet<_> = edges.into_iter().filter(|(a, b)| !a.is_fail() && !b.is_fail()).collect();
        let mut finals: BTreeSet<_> = finals.into_iter().collect();
        finals.insert(State::Fail);
        let mut states: BTreeSet<State> = edges.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
        states.extend(finals.iter().cloned());
        states.insert(initial.clone());
        let alphabet = states.iter().filter(|s| !s.is_fail()).map(|s| s.name().to_owned()).collect();
        ProcessModel { states, alphabet, initial, finals, edges }
    }

    pub fn with_alphabet(mut self, alphabet: impl IntoIterator<Item = String>) -> Self {
        self.alphabet.extend(alphabet);
        self
    }

    pub fn states(&self) -> &BTreeSet<State> {
        &self.states
    }

    pub fn alphabet(&self) -> &BTreeSet<String> {
        &self.alphabet
    }

    pub fn initial(&self) -> &State {
        &self.initial
    }

    pub fn finals(&self) -> &BTreeSet<State> {
        &self.finals
    }

    /// Explicit edges, without the implicit failure edges.
    pub fn edges(&self) -> &BTreeSet<(State, State)> {
        &self.edges
    }

    /// The full allowed relation, including `(q, q_fail)` for every non-final `q`.
    pub fn allowed(&self) -> BTreeSet<(State, State)> {
        let mut all = self.edges.clone();
        for q in self.states.iter().filter(|q| !self.finals.contains(*q)) {
            all.insert((q.clone(), State::Fail));
        }
        all
    }

    pub fn contains(&self, state: &State) -> bool {
        self.states.contains(state)
    }

    pub fn is_final(&self, state: &State) -> bool {
        self.finals.contains(state)
    }

    fn check(&self, state: &State) -> Result<(), ModelError> {
        if self.contains(state) {
            Ok(())
        } else {
            Err(ModelError::UnknownState(state.name().to_owned()))
        }
    }

    /// Whether `to` may directly follow `from`.
    ///
    /// Failure is reachable from every non-final state; final states only have
    /// their explicitly recorded edges.
    pub fn is_feasible_successor(&self, from: &State, to: &State) -> Result<bool, ModelError> {
        self.check(from)?;
        self.check(to)?;
        if to.is_fail() {
            return Ok(!self.is_final(from));
        }
        Ok(self.edges.contains(&(from.clone(), to.clone())))
    }

    /// Feasible successors of `from`; empty for final states.
    pub fn successors(&self, from: &State) -> Result<BTreeSet<State>, ModelError> {
        self.check(from)?;
        if self.is_final(from) {
            return Ok(BTreeSet::new());
        }
        let mut out: BTreeSet<State> = self
            .edges
            .range((from.clone(), State::step(""))..)
            .take_while(|(a, _)| a == from)
            .map(|(_, b)| b.clone())
            .collect();
        out.insert(State::Fail);
        Ok(out)
    }

    /// Current state of a trace, checked against the model.
    pub fn current_state(&self, trace: &EventTrace) -> Result<State, crate::Error> {
        let state = trace.current_step()?;
        self.check(&state)?;
        Ok(state)
    }

    /// Parses the line-oriented model file.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut initial = None;
        let mut finals = Vec::new();
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |message: &str| ModelError::Syntax { line: i + 1, message: message.to_owned() };
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match tokens.as_slice() {
                ["initial", s] => {
                    if initial.replace(State::parse(s)).is_some() {
                        return Err(syntax("duplicate initial state"));
                    }
                }
                ["final", s] => finals.push(State::parse(s)),
                [from, to] => edges.push((State::parse(from), State::parse(to))),
                _ => return Err(syntax("expected `initial <s>`, `final <s>` or `<from> <to>`")),
            }
        }
        let initial = initial.ok_or(ModelError::MissingInitial)?;
        if initial.is_fail() {
            return Err(ModelError::Syntax { line: 0, message: "initial state cannot be q_fail".into() });
        }
        Ok(ProcessModel::new(initial, finals, edges))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "initial {}", self.initial);
        for f in self.finals.iter().filter(|f| !f.is_fail()) {
            let _ = writeln!(out, "final {f}");
        }
        for (a, b) in &self.edges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }
}

/// Mines a directly-follows model from a log.
///
/// Failure-terminated traces contribute edges but not final states, since
/// their last step is where the run was cut off.
pub fn mine_model(traces: &[EventTrace]) -> Result<ProcessModel, ModelError> {
    let mut first_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut finals = BTreeSet::new();
    let mut edges = BTreeSet::new();
    let mut steps_seen = BTreeSet::new();
    let mut alphabet = BTreeSet::new();

    for trace in traces {
        alphabet.extend(trace.events.iter().map(|e| e.name.clone()));
        let mut prev: Option<&str> = None;
        let mut first: Option<&str> = None;
        for event in trace.events.iter().filter(|e| e.is_intrinsic()) {
            if event.kind == EventKind::IntrinsicFailure {
                prev = None;
                continue;
            }
            let name = event.name.as_str();
            steps_seen.insert(name);
            first.get_or_insert(name);
            if let Some(p) = prev {
                edges.insert((State::step(p), State::step(name)));
            }
            prev = Some(name);
        }
        if let Some(f) = first {
            *first_counts.entry(f.to_owned()).or_default() += 1;
        }
        let last_step = trace.events.iter().rev().find(|e| e.kind == EventKind::IntrinsicStep);
        if trace.effective_outcome() != Some(Outcome::Fail) {
            if let Some(last) = last_step {
                finals.insert(State::step(&last.name));
            }
        }
    }

    // Modal first step; BTreeMap iteration makes ties resolve lexicographically.
    let initial = first_counts
        .iter()
        .fold(None::<(&String, usize)>, |best, (name, &count)| match best {
            Some((_, c)) if c >= count => best,
            _ => Some((name, count)),
        })
        .map(|(name, _)| State::step(name))
        .ok_or(ModelError::EmptyLog)?;

    let mut model = ProcessModel::new(initial, finals, edges);
    model.states.extend(steps_seen.into_iter().map(State::step));
    Ok(model.with_alphabet(alphabet))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Event;

    fn trace(id: &str, steps: &[&str]) -> EventTrace {
        EventTrace::new(id, steps.iter().enumerate().map(|(i, s)| Event::step(*s, i as i64, id)).collect())
    }

    fn s(name: &str) -> State {
        State::parse(name)
    }

    fn branching_model() -> ProcessModel {
        mine_model(&[trace("1", &["A", "B", "C", "E"]), trace("2", &["A", "B", "C", "D", "G"])]).unwrap()
    }

    #[test]
    fn mines_branching_log() {
        let m = branching_model();
        for q in ["A", "B", "C", "D", "E", "G", "q_fail"] {
            assert!(m.contains(&s(q)), "{q}");
        }
        for (a, b) in [("C", "D"), ("C", "E"), ("D", "G")] {
            assert!(m.allowed().contains(&(s(a), s(b))));
        }
        let finals: Vec<_> = m.finals().iter().map(State::name).collect();
        assert_eq!(finals, ["E", "G", "q_fail"]);
        assert_eq!(m.initial(), &s("A"));
    }

    #[test]
    fn single_step_log() {
        let m = mine_model(&[trace("1", &["A"])]).unwrap();
        assert_eq!(m.states().len(), 2);
        assert_eq!(m.initial(), &s("A"));
        assert!(m.is_final(&s("A")));
        assert!(m.allowed().is_empty());
    }

    #[test]
    fn empty_log_is_rejected() {
        assert_eq!(mine_model(&[]), Err(ModelError::EmptyLog));
        let ctx = EventTrace::new("1", vec![Event::context("t", 0, "1")]);
        assert_eq!(mine_model(&[ctx]), Err(ModelError::EmptyLog));
    }

    #[test]
    fn modal_first_step_with_lexicographic_ties() {
        let m = mine_model(&[trace("1", &["B", "X"]), trace("2", &["A", "X"])]).unwrap();
        assert_eq!(m.initial(), &s("A"));
        let m = mine_model(&[trace("1", &["B"]), trace("2", &["B"]), trace("3", &["A"])]).unwrap();
        assert_eq!(m.initial(), &s("B"));
    }

    #[test]
    fn fail_traces_do_not_define_finals() {
        let mut t = trace("1", &["A", "B"]);
        t.events.push(Event::failure("failure", 9, "1"));
        let m = mine_model(&[t, trace("2", &["A", "B", "C"])]).unwrap();
        let finals: Vec<_> = m.finals().iter().map(State::name).collect();
        assert_eq!(finals, ["C", "q_fail"]);
    }

    #[test]
    fn feasibility_oracle() {
        let m = branching_model();
        assert!(m.is_feasible_successor(&s("C"), &s("D")).unwrap());
        assert!(m.is_feasible_successor(&s("C"), &State::Fail).unwrap());
        assert!(!m.is_feasible_successor(&s("C"), &s("G")).unwrap());
        assert_eq!(m.is_feasible_successor(&s("C"), &s("Z")), Err(ModelError::UnknownState("Z".into())));
    }

    #[test]
    fn successors_of_branching_and_final_states() {
        let m = branching_model();
        let succ: Vec<_> = m.successors(&s("C")).unwrap().into_iter().collect();
        assert_eq!(succ, [s("D"), s("E"), State::Fail]);
        assert!(m.successors(&s("E")).unwrap().is_empty());
        assert!(m.successors(&State::Fail).unwrap().is_empty());
        assert!(m.successors(&s("nope")).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let m = branching_model();
        let text = m.to_text();
        assert!(!text.contains("q_fail"));
        let back = ProcessModel::parse(&text).unwrap();
        assert_eq!(back.states(), m.states());
        assert_eq!(back.allowed(), m.allowed());
        assert_eq!(back.finals(), m.finals());
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn model_file_errors() {
        assert_eq!(ProcessModel::parse("A B\n"), Err(ModelError::MissingInitial));
        assert!(matches!(ProcessModel::parse("initial A\nA B C\n"), Err(ModelError::Syntax { line: 2, .. })));
    }

    #[test]
    fn state_order_is_lexicographic() {
        let mut v = [s("b"), State::Fail, s("a"), s("z")];
        v.sort();
        let names: Vec<_> = v.iter().map(State::name).collect();
        assert_eq!(names, ["a", "b", "q_fail", "z"]);
    }
}
