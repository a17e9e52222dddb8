//! Bounded traversal of the probabilistic automaton induced by a classifier.
//!
//! Starting from the current state of a trace, the classifier is asked for
//! the next-step distribution, infeasible successors are dropped and the rest
//! renormalized, and each candidate is expanded depth-first until a final
//! state or the failure state is reached. The probability of a predicted
//! suffix is the product of its step probabilities. Mass that is cut by the
//! depth, breadth or probability limits is accounted for separately so that
//! the failure estimate can be reported as an interval.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{Event, EventTrace};
use crate::model::{ProcessModel, State};
use crate::predictor::{Classifier, Prediction};

#[derive(Debug, Error, PartialEq)]
pub enum TraversalError {
    #[error("invalid traversal limits: {0}")]
    InvalidLimits(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraversalLimits {
    /// Longest predicted suffix.
    pub max_depth: usize,
    /// Most children expanded per node.
    pub max_breadth: usize,
    /// Branches whose probability falls below this are cut.
    pub min_probability: f64,
}

impl Default for TraversalLimits {
    fn default() -> Self {
        TraversalLimits { max_depth: 20, max_breadth: 5, min_probability: 1e-4 }
    }
}

impl TraversalLimits {
    /// Limits that never cut a branch before `max_depth`.
    pub fn unbounded(max_depth: usize) -> Self {
        TraversalLimits { max_depth, max_breadth: usize::MAX, min_probability: 0.0 }
    }

    pub fn validate(&self) -> Result<(), TraversalError> {
        if self.max_depth == 0 {
            return Err(TraversalError::InvalidLimits("max_depth must be at least 1".into()));
        }
        if self.max_breadth == 0 {
            return Err(TraversalError::InvalidLimits("max_breadth must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_probability) {
            return Err(TraversalError::InvalidLimits("min_probability must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// How a predicted suffix ends.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathOutcome {
    /// A final step was reached.
    End(State),
    /// Failure was predicted while in the given state.
    Fail(State),
}

impl PathOutcome {
    pub fn is_fail(&self) -> bool {
        matches!(self, PathOutcome::Fail(_))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomePath {
    pub suffix: Vec<State>,
    pub probability: f64,
    /// Renormalized probability of each step of `suffix`.
    pub step_probabilities: Vec<f64>,
    pub outcome: PathOutcome,
}

impl fmt::Display for OutcomePath {
    /// `D->q_fail 0.799 fail`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.suffix.iter().map(State::name).collect();
        let label = if self.outcome.is_fail() { "fail" } else { "end" };
        write!(f, "{} {:.3} {}", names.join("->"), self.probability, label)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraversalResult {
    /// Sorted by probability, descending.
    pub paths: Vec<OutcomePath>,
    pub explored_mass: f64,
    pub pruned_mass: f64,
    /// Set when the trace already sits in a final state; nothing is predicted.
    pub already_final: Option<State>,
    /// Number of classifier queries issued.
    pub queries: usize,
}

impl TraversalResult {
    /// One line per path, most probable first.
    pub fn report(&self) -> String {
        self.paths.iter().map(|p| format!("{p}\n")).collect()
    }
}

/// Point estimate of failure with bounds that absorb the pruned mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureEstimate {
    pub p_fail: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    PredictFail,
    PredictEnd,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

struct Walk<'a, C: ?Sized> {
    classifier: &'a C,
    model: &'a ProcessModel,
    limits: TraversalLimits,
    history: Vec<Event>,
    suffix: Vec<State>,
    step_probs: Vec<f64>,
    memo: HashMap<Vec<State>, Prediction>,
    paths: Vec<OutcomePath>,
    pruned: f64,
    queries: usize,
    instance: String,
    last_timestamp: i64,
}

impl<C: Classifier + ?Sized> Walk<'_, C> {
    fn prediction(&mut self) -> Result<Prediction, crate::Error> {
        if let Some(p) = self.memo.get(&self.suffix) {
            return Ok(p.clone());
        }
        self.queries += 1;
        let p = self.classifier.predict(&self.history)?;
        self.memo.insert(self.suffix.clone(), p.clone());
        Ok(p)
    }

    fn feasible(&self, from: &State, prediction: &Prediction) -> Result<Vec<(State, f64)>, crate::Error> {
        let mut out = Vec::new();
        for (state, p) in prediction.entries() {
            if *p > 0.0 && self.model.contains(state) && self.model.is_feasible_successor(from, state)? {
                out.push((state.clone(), *p));
            }
        }
        let total: f64 = out.iter().map(|(_, p)| p).sum();
        out.iter_mut().for_each(|(_, p)| *p /= total);
        out.sort_by(|(sa, pa), (sb, pb)| pb.total_cmp(pa).then_with(|| sa.cmp(sb)));
        Ok(out)
    }

    fn visit(&mut self, current: &State, mass: f64) -> Result<(), crate::Error> {
        if self.suffix.len() >= self.limits.max_depth {
            self.pruned += mass;
            return Ok(());
        }
        let prediction = self.prediction()?;
        let candidates = self.feasible(current, &prediction)?;
        if candidates.is_empty() {
            self.pruned += mass;
            return Ok(());
        }
        for (rank, (state, q)) in candidates.into_iter().enumerate() {
            let p = mass * q;
            if rank >= self.limits.max_breadth || p < self.limits.min_probability {
                self.pruned += p;
                continue;
            }
            self.suffix.push(state.clone());
            self.step_probs.push(q);
            if state.is_fail() || self.model.is_final(&state) {
                let outcome =
                    if state.is_fail() { PathOutcome::Fail(current.clone()) } else { PathOutcome::End(state.clone()) };
                self.paths.push(OutcomePath {
                    suffix: self.suffix.clone(),
                    probability: p,
                    step_probabilities: self.step_probs.clone(),
                    outcome,
                });
            } else {
                self.last_timestamp += 1;
                self.history.push(Event::step(state.name(), self.last_timestamp, self.instance.as_str()));
                let result = self.visit(&state, p);
                self.history.pop();
                self.last_timestamp -= 1;
                result?;
            }
            self.suffix.pop();
            self.step_probs.pop();
        }
        Ok(())
    }
}

/// Enumerates the predicted futures of `trace`.
pub fn traverse<C: Classifier + ?Sized>(
    trace: &EventTrace,
    classifier: &C,
    model: &ProcessModel,
    limits: &TraversalLimits,
) -> Result<TraversalResult, crate::Error> {
    limits.validate()?;
    let current = model.current_state(trace)?;
    if current.is_fail() || model.is_final(&current) {
        return Ok(TraversalResult {
            paths: Vec::new(),
            explored_mass: 0.0,
            pruned_mass: 0.0,
            already_final: Some(current),
            queries: 0,
        });
    }
    let mut walk = Walk {
        classifier,
        model,
        limits: *limits,
        history: trace.events.clone(),
        suffix: Vec::new(),
        step_probs: Vec::new(),
        memo: HashMap::new(),
        paths: Vec::new(),
        pruned: 0.0,
        queries: 0,
        instance: trace.instance_id.clone(),
        last_timestamp: trace.events.last().map_or(0, |e| e.timestamp),
    };
    walk.visit(&current, 1.0)?;
    let mut paths = walk.paths;
    paths.sort_by(|a, b| b.probability.total_cmp(&a.probability).then_with(|| a.suffix.cmp(&b.suffix)));
    let explored_mass = paths.iter().map(|p| p.probability).sum();
    Ok(TraversalResult { paths, explored_mass, pruned_mass: walk.pruned, already_final: None, queries: walk.queries })
}

/// Aggregates the failure mass of a traversal.
pub fn failure_probability(result: &TraversalResult) -> FailureEstimate {
    if let Some(state) = &result.already_final {
        let p = if state.is_fail() { 1.0 } else { 0.0 };
        return FailureEstimate { p_fail: p, lower: p, upper: p };
    }
    let p_fail: f64 = result.paths.iter().filter(|p| p.outcome.is_fail()).map(|p| p.probability).sum();
    let p_fail = p_fail.clamp(0.0, 1.0);
    FailureEstimate { p_fail, lower: p_fail, upper: (p_fail + result.pruned_mass.max(0.0)).min(1.0) }
}

/// Binarizes a failure estimate; the threshold itself counts as failure.
pub fn verdict(estimate: &FailureEstimate, threshold: f64) -> Verdict {
    if estimate.p_fail >= threshold {
        Verdict::PredictFail
    } else {
        Verdict::PredictEnd
    }
}

pub fn classify_instance<C: Classifier + ?Sized>(
    trace: &EventTrace,
    classifier: &C,
    model: &ProcessModel,
    limits: &TraversalLimits,
    threshold: f64,
) -> Result<Verdict, crate::Error> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(TraversalError::InvalidLimits(format!("threshold {threshold} outside (0, 1)")).into());
    }
    let result = traverse(trace, classifier, model, limits)?;
    Ok(verdict(&failure_probability(&result), threshold))
}
