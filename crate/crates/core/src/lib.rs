//! Event-based failure prediction for distributed business processes.
//!
//! A running process instance is observed as a stream of intrinsic and context
//! events. A next-step classifier turns the trace so far into a probability
//! row over process steps and the failure state, and a bounded traversal of
//! the resulting probabilistic automaton aggregates the mass of all futures
//! that end in failure.

pub mod cli;
pub mod evaluation;
pub mod event;
pub mod model;
pub mod predictor;
pub mod runtime;
pub mod synthesis;
pub mod traversal;

use thiserror::Error;

pub use event::{Event, EventTrace, Outcome};
pub use model::{ProcessModel, State};

/// Any error surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Eval(#[from] evaluation::EvalError),
    #[error(transparent)]
    Event(#[from] event::EventError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Predict(#[from] predictor::PredictError),
    #[error(transparent)]
    Synthesis(#[from] synthesis::SynthesisError),
    #[error(transparent)]
    Traversal(#[from] traversal::TraversalError),
    #[error(transparent)]
    Xes(#[from] event::xes::XesError),
}
