use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EventError, EventKind, EventTrace, Value};

/// Name used for the failure event type when a log never records one.
pub const DEFAULT_FAILURE_NAME: &str = "failure";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FieldKind {
    Numeric,
    Categorical,
}

impl FieldKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldKind::Numeric => "numeric",
            FieldKind::Categorical => "categorical",
        }
    }
}

impl FromStr for FieldKind {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "numeric" => Ok(FieldKind::Numeric),
            "categorical" => Ok(FieldKind::Categorical),
            other => Err(EventError::InvalidValue { what: "field kind", value: other.to_owned() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventType {
    pub name: String,
    pub kind: EventKind,
    pub schema: Vec<(String, FieldKind)>,
}

impl EventType {
    pub fn new(name: impl Into<String>, kind: EventKind) -> Self {
        EventType { name: name.into(), kind, schema: Vec::new() }
    }

    pub fn with_field(mut self, key: impl Into<String>, kind: FieldKind) -> Self {
        self.schema.push((key.into(), kind));
        self
    }
}

/// The known event types, in one-hot order.
///
/// `intrinsic[0]` is always the failure type; steps follow. Context types are
/// kept in a separate list and are placed after all intrinsic types when
/// encoding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCatalog {
    intrinsic: Vec<EventType>,
    context: Vec<EventType>,
    max_data_arity: usize,
}

impl EventCatalog {
    /// Builds a catalog from the failure type, steps and context types in the
    /// given order.
    pub fn new(failure: EventType, steps: Vec<EventType>, context: Vec<EventType>) -> Result<Self, EventError> {
        let mut intrinsic = Vec::with_capacity(steps.len() + 1);
        intrinsic.push(EventType { kind: EventKind::IntrinsicFailure, ..failure });
        intrinsic.extend(steps.into_iter().map(|t| EventType { kind: EventKind::IntrinsicStep, ..t }));
        let context: Vec<_> = context.into_iter().map(|t| EventType { kind: EventKind::Context, ..t }).collect();

        let mut seen = HashSet::new();
        for t in intrinsic.iter().chain(&context) {
            if !seen.insert(t.name.as_str()) {
                return Err(EventError::DuplicateEventType(t.name.clone()));
            }
        }
        let max_data_arity = intrinsic.iter().chain(&context).map(|t| t.schema.len()).max().unwrap_or(0);
        Ok(EventCatalog { intrinsic, context, max_data_arity })
    }

    /// Derives a catalog from the event types observed in `traces`.
    ///
    /// Steps and context types are sorted by name; schemas are the union of
    /// payload keys in first-seen order.
    pub fn infer(traces: &[EventTrace]) -> Result<Self, EventError> {
        let mut failure: Option<EventType> = None;
        let mut steps: BTreeMap<String, EventType> = BTreeMap::new();
        let mut context: BTreeMap<String, EventType> = BTreeMap::new();
        for event in traces.iter().flat_map(|t| &t.events) {
            let slot = match event.kind {
                EventKind::IntrinsicFailure => {
                    match &failure {
                        Some(f) if f.name != event.name => return Err(EventError::FailureTypeCount(2)),
                        _ => {}
                    }
                    failure.get_or_insert_with(|| EventType::new(&event.name, event.kind))
                }
                EventKind::IntrinsicStep => {
                    steps.entry(event.name.clone()).or_insert_with(|| EventType::new(&event.name, event.kind))
                }
                EventKind::Context => {
                    context.entry(event.name.clone()).or_insert_with(|| EventType::new(&event.name, event.kind))
                }
            };
            for field in &event.payload {
                if !slot.schema.iter().any(|(k, _)| *k == field.key) {
                    slot.schema.push((field.key.clone(), field.value.kind()));
                }
            }
        }
        let failure = failure.unwrap_or_else(|| EventType::new(DEFAULT_FAILURE_NAME, EventKind::IntrinsicFailure));
        Self::new(failure, steps.into_values().collect(), context.into_values().collect())
    }

    pub fn failure(&self) -> &EventType {
        &self.intrinsic[0]
    }

    /// Step types, excluding the failure type.
    pub fn steps(&self) -> &[EventType] {
        &self.intrinsic[1..]
    }

    /// Failure type followed by the step types.
    pub fn intrinsic(&self) -> &[EventType] {
        &self.intrinsic
    }

    pub fn context(&self) -> &[EventType] {
        &self.context
    }

    pub fn max_data_arity(&self) -> usize {
        self.max_data_arity
    }

    /// Length of the one-hot event vector.
    pub fn onehot_len(&self) -> usize {
        self.intrinsic.len() + self.context.len()
    }

    /// Position of an event type in the one-hot vector.
    pub fn onehot_index(&self, name: &str) -> Option<usize> {
        self.intrinsic.iter().chain(&self.context).position(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&EventType> {
        self.intrinsic.iter().chain(&self.context).find(|t| t.name == name)
    }

    /// Checks that every event of `trace` is known and carries a payload
    /// matching its type's schema.
    pub fn check_trace(&self, trace: &EventTrace) -> Result<(), String> {
        for event in &trace.events {
            let ty = self.get(&event.name).ok_or_else(|| format!("unknown event type {:?}", event.name))?;
            if ty.kind != event.kind {
                return Err(format!(
                    "event {:?} has kind {} but the catalog says {}",
                    event.name,
                    event.kind.as_str(),
                    ty.kind.as_str()
                ));
            }
            let matches = ty.schema.len() == event.payload.len()
                && ty.schema.iter().zip(&event.payload).all(|((k, kind), f)| *k == f.key && *kind == f.value.kind());
            if !matches {
                return Err(format!("payload of event {:?} does not match its schema", event.name));
            }
        }
        Ok(())
    }

    /// Parses the line-oriented catalog format: `kind name field:kind,...`.
    pub fn parse(text: &str) -> Result<Self, EventError> {
        let mut failures = Vec::new();
        let mut steps = Vec::new();
        let mut context = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |message: String| EventError::CatalogSyntax { line: i + 1, message };
            let mut parts = line.split_whitespace();
            let kind: EventKind =
                parts.next().unwrap_or_default().parse().map_err(|e: EventError| syntax(e.to_string()))?;
            let name = parts.next().ok_or_else(|| syntax("missing event name".into()))?;
            let mut ty = EventType::new(name, kind);
            if let Some(fields) = parts.next() {
                for spec in fields.split(',').filter(|s| !s.is_empty()) {
                    let (key, fk) =
                        spec.split_once(':').ok_or_else(|| syntax(format!("field {spec:?} lacks a kind")))?;
                    let fk: FieldKind = fk.parse().map_err(|e: EventError| syntax(e.to_string()))?;
                    ty.schema.push((key.to_owned(), fk));
                }
            }
            if parts.next().is_some() {
                return Err(syntax("trailing tokens".into()));
            }
            match kind {
                EventKind::IntrinsicFailure => failures.push(ty),
                EventKind::IntrinsicStep => steps.push(ty),
                EventKind::Context => context.push(ty),
            }
        }
        if failures.len() != 1 {
            return Err(EventError::FailureTypeCount(failures.len()));
        }
        Self::new(failures.remove(0), steps, context)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in self.intrinsic.iter().chain(&self.context) {
            let _ = write!(out, "{} {}", t.kind.as_str(), t.name);
            if !t.schema.is_empty() {
                let fields: Vec<String> = t.schema.iter().map(|(k, fk)| format!("{k}:{}", fk.as_str())).collect();
                let _ = write!(out, " {}", fields.join(","));
            }
            out.push('\n');
        }
        out
    }

    /// Hex SHA-256 of the canonical text form; identifies a catalog in checkpoints.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Stable numeric code for a categorical payload value, in `[0, 1)`.
///
/// FNV-1a over the UTF-8 bytes; distinct values may collide.
pub fn categorical_code(value: &str) -> f64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in value.as_bytes() {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    (hash >> 11) as f64 / (1u64 << 53) as f64
}

pub(crate) fn value_code(value: &Value) -> f64 {
    match value {
        Value::Numeric(v) => *v,
        Value::Categorical(s) => categorical_code(s),
    }
}
