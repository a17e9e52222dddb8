//! Events, traces and visibility scenarios.
//!
//! Every other module consumes [`EventTrace`]s. Intrinsic events are produced by
//! the process itself (step executions and the failure marker), context events
//! come from sources outside the process and are correlated with an instance by
//! the global instance identifier.

pub(crate) mod catalog;
pub mod xes;

pub use catalog::{categorical_code, EventCatalog, EventType, FieldKind, DEFAULT_FAILURE_NAME};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::State;

#[derive(Debug, Error, PartialEq)]
pub enum EventError {
    #[error("trace {0:?} contains no intrinsic event")]
    NoIntrinsicEvent(String),
    #[error("partner {0:?} does not appear in any event")]
    UnknownPartner(String),
    #[error("invalid {what}: {value:?}")]
    InvalidValue { what: &'static str, value: String },
    #[error("catalog line {line}: {message}")]
    CatalogSyntax { line: usize, message: String },
    #[error("catalog must contain exactly one failure event type, found {0}")]
    FailureTypeCount(usize),
    #[error("duplicate event type {0:?} in catalog")]
    DuplicateEventType(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    IntrinsicStep,
    IntrinsicFailure,
    Context,
}

impl EventKind {
    pub fn is_intrinsic(self) -> bool {
        !matches!(self, EventKind::Context)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::IntrinsicStep => "step",
            EventKind::IntrinsicFailure => "failure",
            EventKind::Context => "context",
        }
    }
}

impl FromStr for EventKind {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "step" => Ok(EventKind::IntrinsicStep),
            "failure" => Ok(EventKind::IntrinsicFailure),
            "context" => Ok(EventKind::Context),
            other => Err(EventError::InvalidValue { what: "event kind", value: other.to_owned() }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Visibility {
    Private,
    Public,
    Interaction,
}

impl Visibility {
    pub fn as_str(self) -> &'static str {
        match self {
            Visibility::Private => "private",
            Visibility::Public => "public",
            Visibility::Interaction => "interaction",
        }
    }
}

impl FromStr for Visibility {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "private" => Ok(Visibility::Private),
            "public" => Ok(Visibility::Public),
            "interaction" => Ok(Visibility::Interaction),
            other => Err(EventError::InvalidValue { what: "visibility", value: other.to_owned() }),
        }
    }
}

/// A single payload value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Numeric(f64),
    Categorical(String),
}

impl Value {
    pub fn kind(&self) -> FieldKind {
        match self {
            Value::Numeric(_) => FieldKind::Numeric,
            Value::Categorical(_) => FieldKind::Categorical,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Numeric(v) => Some(*v),
            Value::Categorical(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub key: String,
    pub value: Value,
}

impl Field {
    pub fn numeric(key: impl Into<String>, value: f64) -> Self {
        Field { key: key.into(), value: Value::Numeric(value) }
    }

    pub fn categorical(key: impl Into<String>, value: impl Into<String>) -> Self {
        Field { key: key.into(), value: Value::Categorical(value.into()) }
    }
}

/// One recorded occurrence, either intrinsic or context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub name: String,
    pub kind: EventKind,
    /// Milliseconds since the Unix epoch, UTC.
    pub timestamp: i64,
    /// Choreography-wide correlation key.
    pub instance: String,
    /// Emitting organization.
    pub partner: String,
    pub visibility: Visibility,
    pub lifecycle: Option<String>,
    pub payload: Vec<Field>,
}

impl Event {
    pub fn new(name: impl Into<String>, kind: EventKind, timestamp: i64, instance: impl Into<String>) -> Self {
        Event {
            name: name.into(),
            kind,
            timestamp,
            instance: instance.into(),
            partner: String::new(),
            visibility: Visibility::Private,
            lifecycle: None,
            payload: Vec::new(),
        }
    }

    pub fn step(name: impl Into<String>, timestamp: i64, instance: impl Into<String>) -> Self {
        Event::new(name, EventKind::IntrinsicStep, timestamp, instance)
    }

    pub fn context(name: impl Into<String>, timestamp: i64, instance: impl Into<String>) -> Self {
        Event::new(name, EventKind::Context, timestamp, instance)
    }

    pub fn failure(name: impl Into<String>, timestamp: i64, instance: impl Into<String>) -> Self {
        Event::new(name, EventKind::IntrinsicFailure, timestamp, instance)
    }

    pub fn with_partner(mut self, partner: impl Into<String>, visibility: Visibility) -> Self {
        self.partner = partner.into();
        self.visibility = visibility;
        self
    }

    pub fn with_payload(mut self, payload: Vec<Field>) -> Self {
        self.payload = payload;
        self
    }

    pub fn is_intrinsic(&self) -> bool {
        self.kind.is_intrinsic()
    }

    /// The automaton state this event moves the instance into, if intrinsic.
    pub fn state(&self) -> Option<State> {
        match self.kind {
            EventKind::IntrinsicStep => Some(State::step(&self.name)),
            EventKind::IntrinsicFailure => Some(State::Fail),
            EventKind::Context => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    End,
    Fail,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::End => "end",
            Outcome::Fail => "fail",
        }
    }
}

impl FromStr for Outcome {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "end" => Ok(Outcome::End),
            "fail" => Ok(Outcome::Fail),
            other => Err(EventError::InvalidValue { what: "outcome", value: other.to_owned() }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaultType {
    StepIndicated,
    EventIndicated,
    DataIndicated,
}

impl FaultType {
    pub const ALL: [FaultType; 3] = [FaultType::StepIndicated, FaultType::EventIndicated, FaultType::DataIndicated];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultType::StepIndicated => "step",
            FaultType::EventIndicated => "event",
            FaultType::DataIndicated => "data",
        }
    }
}

impl FromStr for FaultType {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "step" => Ok(FaultType::StepIndicated),
            "event" => Ok(FaultType::EventIndicated),
            "data" => Ok(FaultType::DataIndicated),
            other => Err(EventError::InvalidValue { what: "fault type", value: other.to_owned() }),
        }
    }
}

/// Ground truth about an injected fault, kept alongside the label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub fault_type: FaultType,
    /// Timestamp of the event where the error became observable.
    pub error_time: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventTrace {
    pub instance_id: String,
    pub events: Vec<Event>,
    pub outcome: Option<Outcome>,
    pub fault: Option<FaultRecord>,
}

impl EventTrace {
    /// Builds a trace, ordering events by timestamp. Ties keep ingestion order.
    pub fn new(instance_id: impl Into<String>, mut events: Vec<Event>) -> Self {
        events.sort_by_key(|e| e.timestamp);
        EventTrace { instance_id: instance_id.into(), events, outcome: None, fault: None }
    }

    pub fn with_outcome(mut self, outcome: Outcome) -> Self {
        self.outcome = Some(outcome);
        self
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn intrinsic(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| e.is_intrinsic())
    }

    /// State of the last recorded intrinsic event.
    pub fn current_step(&self) -> Result<State, EventError> {
        current_step(&self.events).ok_or_else(|| EventError::NoIntrinsicEvent(self.instance_id.clone()))
    }

    pub fn contains_failure(&self) -> bool {
        self.events.iter().any(|e| e.kind == EventKind::IntrinsicFailure)
    }

    /// The ground-truth outcome: the label if present, otherwise `Fail` when
    /// a failure event was recorded.
    pub fn effective_outcome(&self) -> Option<Outcome> {
        self.outcome.or_else(|| self.contains_failure().then_some(Outcome::Fail))
    }
}

/// State of the last intrinsic event in `events`.
pub fn current_step(events: &[Event]) -> Option<State> {
    events.iter().rev().find_map(Event::state)
}

/// Which events a partner is allowed to observe.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Scenario {
    Global,
    Local(String),
    NoContextGlobal,
    NoContextLocal(String),
}

impl Scenario {
    pub fn partner(&self) -> Option<&str> {
        match self {
            Scenario::Local(p) | Scenario::NoContextLocal(p) => Some(p),
            _ => None,
        }
    }

    pub fn drops_context(&self) -> bool {
        matches!(self, Scenario::NoContextGlobal | Scenario::NoContextLocal(_))
    }

    pub fn keeps(&self, event: &Event) -> bool {
        if self.drops_context() && event.kind == EventKind::Context {
            return false;
        }
        match self.partner() {
            None => true,
            Some(p) => event.partner == p || matches!(event.visibility, Visibility::Public | Visibility::Interaction),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Global => f.write_str("global"),
            Scenario::Local(p) => write!(f, "local:{p}"),
            Scenario::NoContextGlobal => f.write_str("nocontext"),
            Scenario::NoContextLocal(p) => write!(f, "nocontext-local:{p}"),
        }
    }
}

impl FromStr for Scenario {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EventError::InvalidValue { what: "scenario", value: s.to_owned() };
        match s.split_once(':') {
            None => match s {
                "global" => Ok(Scenario::Global),
                "nocontext" => Ok(Scenario::NoContextGlobal),
                _ => Err(bad()),
            },
            Some((_, "")) => Err(bad()),
            Some(("local", p)) => Ok(Scenario::Local(p.to_owned())),
            Some(("nocontext-local", p)) => Ok(Scenario::NoContextLocal(p.to_owned())),
            Some(_) => Err(bad()),
        }
    }
}

/// Restricts each trace to what the scenario's observer may see.
///
/// Event order and outcome labels are preserved.
pub fn filter_visibility(traces: &[EventTrace], scenario: &Scenario) -> Result<Vec<EventTrace>, EventError> {
    if let Some(p) = scenario.partner() {
        let known = traces.iter().flat_map(|t| &t.events).any(|e| e.partner == p);
        if !known {
            return Err(EventError::UnknownPartner(p.to_owned()));
        }
    }
    if *scenario == Scenario::Global {
        return Ok(traces.to_vec());
    }
    Ok(traces
        .iter()
        .map(|t| EventTrace {
            instance_id: t.instance_id.clone(),
            events: t.events.iter().filter(|e| scenario.keeps(e)).cloned().collect(),
            outcome: t.outcome,
            fault: t.fault.clone(),
        })
        .collect())
}

/// All partner identifiers appearing in the traces, sorted.
pub fn partners(traces: &[EventTrace]) -> BTreeSet<String> {
    traces.iter().flat_map(|t| &t.events).filter(|e| !e.partner.is_empty()).map(|e| e.partner.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(name: &str, kind: EventKind, ts: i64) -> Event {
        Event::new(name, kind, ts, "i1")
    }

    fn branching_trace() -> EventTrace {
        EventTrace::new(
            "i1",
            vec![
                ev("A", EventKind::IntrinsicStep, 1),
                ev("C_temp", EventKind::Context, 2),
                ev("B", EventKind::IntrinsicStep, 3),
                ev("C_temp", EventKind::Context, 4),
                ev("C", EventKind::IntrinsicStep, 5),
            ],
        )
    }

    #[test]
    fn current_step_is_last_intrinsic() {
        assert_eq!(branching_trace().current_step().unwrap(), State::step("C"));
        let single = EventTrace::new("i1", vec![ev("A", EventKind::IntrinsicStep, 1)]);
        assert_eq!(single.current_step().unwrap(), State::step("A"));
    }

    #[test]
    fn current_step_without_intrinsic_fails() {
        let t = EventTrace::new("i1", vec![ev("C_temp", EventKind::Context, 1)]);
        assert_eq!(t.current_step(), Err(EventError::NoIntrinsicEvent("i1".into())));
    }

    #[test]
    fn failure_event_maps_to_fail_state() {
        let t = EventTrace::new(
            "i1",
            vec![ev("A", EventKind::IntrinsicStep, 1), ev("boom", EventKind::IntrinsicFailure, 2)],
        );
        assert_eq!(t.current_step().unwrap(), State::Fail);
        assert_eq!(t.effective_outcome(), Some(Outcome::Fail));
    }

    #[test]
    fn stable_sort_on_timestamp_ties() {
        let t = EventTrace::new(
            "i1",
            vec![
                ev("B", EventKind::IntrinsicStep, 5),
                ev("X", EventKind::Context, 5),
                ev("A", EventKind::IntrinsicStep, 1),
            ],
        );
        let names: Vec<_> = t.events.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["A", "B", "X"]);
    }

    fn partner_trace() -> EventTrace {
        let mk = |name: &str, kind, ts, partner: &str, vis| ev(name, kind, ts).with_partner(partner, vis);
        EventTrace::new(
            "i1",
            vec![
                mk("a1", EventKind::IntrinsicStep, 1, "p", Visibility::Private),
                mk("b1", EventKind::IntrinsicStep, 2, "q", Visibility::Private),
                mk("t", EventKind::Context, 3, "q", Visibility::Private),
                mk("msg", EventKind::IntrinsicStep, 4, "q", Visibility::Interaction),
                mk("b2", EventKind::IntrinsicStep, 5, "q", Visibility::Public),
                mk("s", EventKind::Context, 6, "p", Visibility::Private),
                mk("a2", EventKind::IntrinsicStep, 7, "p", Visibility::Private),
            ],
        )
        .with_outcome(Outcome::Fail)
    }

    fn names(t: &EventTrace) -> Vec<&str> {
        t.events.iter().map(|e| e.name.as_str()).collect()
    }

    #[test]
    fn scenarios_filter_as_documented() {
        let traces = vec![partner_trace()];
        let global = filter_visibility(&traces, &Scenario::Global).unwrap();
        assert_eq!(global, traces);

        let local = filter_visibility(&traces, &Scenario::Local("p".into())).unwrap();
        assert_eq!(names(&local[0]), ["a1", "msg", "b2", "s", "a2"]);
        assert_eq!(local[0].outcome, Some(Outcome::Fail));

        let nc = filter_visibility(&traces, &Scenario::NoContextGlobal).unwrap();
        assert_eq!(names(&nc[0]), ["a1", "b1", "msg", "b2", "a2"]);

        let ncl = filter_visibility(&traces, &Scenario::NoContextLocal("p".into())).unwrap();
        assert_eq!(names(&ncl[0]), ["a1", "msg", "b2", "a2"]);
    }

    #[test]
    fn local_view_of_own_private_trace_is_identity() {
        let t = EventTrace::new(
            "i1",
            vec![
                ev("a", EventKind::IntrinsicStep, 1).with_partner("p", Visibility::Private),
                ev("b", EventKind::IntrinsicStep, 2).with_partner("p", Visibility::Private),
            ],
        );
        let out = filter_visibility(std::slice::from_ref(&t), &Scenario::Local("p".into())).unwrap();
        assert_eq!(out, vec![t]);
    }

    #[test]
    fn unknown_partner_is_rejected() {
        let err = filter_visibility(&[partner_trace()], &Scenario::Local("zz".into())).unwrap_err();
        assert_eq!(err, EventError::UnknownPartner("zz".into()));
    }

    #[test]
    fn scenario_parsing_round_trips() {
        for s in ["global", "nocontext", "local:carrier", "nocontext-local:bulk_buyer"] {
            assert_eq!(s.parse::<Scenario>().unwrap().to_string(), s);
        }
        assert!("local:".parse::<Scenario>().is_err());
        assert!("remote:x".parse::<Scenario>().is_err());
    }
}
