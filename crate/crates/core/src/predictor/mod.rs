//! Next-step classifiers.
//!
//! A classifier maps an event history to a probability row over the failure
//! state and every process step. Two implementations share the
//! [`Classifier`] contract: a smoothed n-gram counter and a small recurrent
//! network.

mod checkpoint;
mod encode;
mod frequency;
mod recurrent;

pub use checkpoint::{AnyClassifier, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use encode::{encode_events, encode_trace, InputRow};
pub use frequency::{FrequencyConfig, FrequencyModel};
pub use recurrent::{Gradients, RecurrentConfig, RecurrentModel};

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{EventCatalog, EventKind, EventTrace, Outcome};
use crate::model::State;

#[derive(Debug, Error, PartialEq)]
pub enum PredictError {
    #[error("classifier has not been trained")]
    UntrainedModel,
    #[error("unknown event type {0:?}")]
    UnknownEventType(String),
    #[error("catalog does not match the classifier's dimensions")]
    DimensionMismatch,
    #[error("trace {0:?} has no outcome label")]
    MissingLabel(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("classifier failure: {0}")]
    Failure(String),
}

/// Tolerance for the sum-to-one invariant.
pub const PREDICTION_TOLERANCE: f64 = 1e-9;

/// A probability row over `[q_fail, step_0, …, step_n]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    entries: Vec<(State, f64)>,
}

impl Prediction {
    /// Wraps raw entries. Entries must be non-negative and sum to one.
    pub fn new(entries: Vec<(State, f64)>) -> Result<Self, PredictError> {
        let p = Prediction { entries };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(PredictError::Failure(format!("invalid probability row: {:?}", p.entries)))
        }
    }

    /// Normalizes non-negative weights into a prediction.
    pub fn from_weights(entries: Vec<(State, f64)>) -> Result<Self, PredictError> {
        let total: f64 = entries.iter().map(|(_, w)| *w).sum();
        if total.is_nan() || total <= 0.0 || entries.iter().any(|(_, w)| *w < 0.0 || !w.is_finite()) {
            return Err(PredictError::Failure("weights must be non-negative with a positive sum".into()));
        }
        Ok(Prediction { entries: entries.into_iter().map(|(s, w)| (s, w / total)).collect() })
    }

    pub fn entries(&self) -> &[(State, f64)] {
        &self.entries
    }

    pub fn get(&self, state: &State) -> f64 {
        self.entries.iter().find(|(s, _)| s == state).map_or(0.0, |(_, p)| *p)
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }

    pub fn is_valid(&self) -> bool {
        self.entries.iter().all(|(_, p)| *p >= 0.0 && p.is_finite()) && (self.sum() - 1.0).abs() <= PREDICTION_TOLERANCE
    }

    /// The most probable state; ties resolve to the lexicographically smaller one.
    pub fn argmax(&self) -> Option<&State> {
        self.entries.iter().max_by(|(sa, pa), (sb, pb)| pa.total_cmp(pb).then_with(|| sb.cmp(sa))).map(|(s, _)| s)
    }
}

/// The next-step classifier capability.
///
/// `predict` must be a pure function of the classifier state and the history.
pub trait Classifier: Send + Sync {
    fn predict(&self, history: &[crate::event::Event]) -> Result<Prediction, PredictError>;

    /// Updates the classifier with one completed, labeled trace.
    fn train_online(&mut self, trace: &EventTrace) -> Result<(), PredictError>;
}

impl<C: Classifier + ?Sized> Classifier for Box<C> {
    fn predict(&self, history: &[crate::event::Event]) -> Result<Prediction, PredictError> {
        (**self).predict(history)
    }

    fn train_online(&mut self, trace: &EventTrace) -> Result<(), PredictError> {
        (**self).train_online(trace)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassifierKind {
    Frequency,
    Recurrent,
}

impl FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "frequency" => Ok(ClassifierKind::Frequency),
            "recurrent" => Ok(ClassifierKind::Recurrent),
            other => Err(format!("unknown classifier {other:?} (expected frequency or recurrent)")),
        }
    }
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClassifierKind::Frequency => "frequency",
            ClassifierKind::Recurrent => "recurrent",
        })
    }
}

/// Output states in row order: the failure state, then the catalog's steps.
pub fn output_states(catalog: &EventCatalog) -> Vec<State> {
    std::iter::once(State::Fail).chain(catalog.steps().iter().map(|t| State::step(&t.name))).collect()
}

/// A supervised example: the first `prefix_len` events predict `target`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingPair {
    pub prefix_len: usize,
    pub target: State,
}

/// Derives `(prefix → next step)` examples from a labeled trace.
///
/// Every prefix that contains an intrinsic event and has not yet failed is
/// paired with the next intrinsic event. A `Fail` label without a recorded
/// failure event adds a final `(trace → q_fail)` pair.
pub fn training_pairs(trace: &EventTrace) -> Result<Vec<TrainingPair>, PredictError> {
    let outcome = trace.outcome.ok_or_else(|| PredictError::MissingLabel(trace.instance_id.clone()))?;
    let events = &trace.events;
    let mut pairs = Vec::new();
    let mut seen_intrinsic = false;
    let mut next_intrinsic: Vec<Option<State>> = vec![None; events.len()];
    let mut upcoming = None;
    for i in (0..events.len()).rev() {
        next_intrinsic[i] = upcoming.clone();
        if let Some(s) = events[i].state() {
            upcoming = Some(s);
        }
    }
    for (i, event) in events.iter().enumerate() {
        if event.kind == EventKind::IntrinsicFailure {
            break;
        }
        seen_intrinsic |= event.is_intrinsic();
        if !seen_intrinsic {
            continue;
        }
        let target = match &next_intrinsic[i] {
            Some(s) => Some(s.clone()),
            None if outcome == Outcome::Fail => Some(State::Fail),
            None => None,
        };
        if let Some(target) = target {
            pairs.push(TrainingPair { prefix_len: i + 1, target });
        }
    }
    Ok(pairs)
}
