use rand::distributions::WeightedIndex;
use rand::Rng;

use super::{instance_rng, step_gap, CollaborationSpec, Distribution, Manifestation, SynthesisError};
use crate::event::{
    Event, EventKind, EventTrace, FaultRecord, FaultType, Outcome, Value, Visibility, DEFAULT_FAILURE_NAME,
};

/// How often and which faults to inject.
#[derive(Clone, Debug, PartialEq)]
pub struct FaultPlan {
    /// Per-trace injection probability.
    pub rate: f64,
    /// Selection weights in [`FaultType::ALL`] order, normalized.
    pub weights: [f64; 3],
    pub seed: u64,
    spec: CollaborationSpec,
}

impl FaultPlan {
    /// Uses every manifestation of `spec`, with equal weight per fault type.
    pub fn new(spec: &CollaborationSpec, rate: f64, seed: u64) -> Result<Self, SynthesisError> {
        let weights = FaultType::ALL.map(|t| if spec.faults.iter().any(|m| m.fault_type() == t) { 1.0 } else { 0.0 });
        Self::with_weights(spec, rate, weights, seed)
    }

    /// Injects only faults of one type.
    pub fn only(spec: &CollaborationSpec, fault_type: FaultType, rate: f64, seed: u64) -> Result<Self, SynthesisError> {
        let weights = FaultType::ALL.map(|t| if t == fault_type { 1.0 } else { 0.0 });
        Self::with_weights(spec, rate, weights, seed)
    }

    pub fn with_weights(
        spec: &CollaborationSpec,
        rate: f64,
        weights: [f64; 3],
        seed: u64,
    ) -> Result<Self, SynthesisError> {
        spec.validate()?;
        if !(0.0..=1.0).contains(&rate) {
            return Err(SynthesisError::InvalidPlan(format!("rate {rate} outside [0, 1]")));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(SynthesisError::InvalidPlan("weights must be non-negative".into()));
        }
        for (t, w) in FaultType::ALL.iter().zip(weights) {
            if w > 0.0 && !spec.faults.iter().any(|m| m.fault_type() == *t) {
                return Err(SynthesisError::InvalidPlan(format!("no {} fault manifestations in the spec", t.as_str())));
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 && rate > 0.0 {
            return Err(SynthesisError::InvalidPlan("no fault type has positive weight".into()));
        }
        let weights = if total > 0.0 { weights.map(|w| w / total) } else { weights };
        Ok(FaultPlan { rate, weights, seed, spec: spec.clone() })
    }

    pub fn spec(&self) -> &CollaborationSpec {
        &self.spec
    }

    fn manifestations(&self, t: FaultType) -> Vec<&Manifestation> {
        self.spec.faults.iter().filter(|m| m.fault_type() == t).collect()
    }
}

/// Injects at most one fault per trace. Selected traces are truncated after
/// their failure event and labeled `Fail`; the others are returned unchanged.
pub fn inject_faults(traces: &[EventTrace], plan: &FaultPlan) -> Result<Vec<EventTrace>, SynthesisError> {
    traces
        .iter()
        .enumerate()
        .map(|(index, trace)| {
            let mut rng = instance_rng(plan.seed, index);
            let u: f64 = rng.gen();
            if u >= plan.rate || trace.contains_failure() {
                return Ok(trace.clone());
            }
            let weights = WeightedIndex::new(plan.weights).expect("validated weights");
            let fault_type = FaultType::ALL[rng.sample(weights)];
            let options = plan.manifestations(fault_type);
            let chosen = options[rng.gen_range(0..options.len())];
            apply(trace, chosen, &plan.spec, &mut rng)
        })
        .collect()
}

fn mismatch(trace: &EventTrace, reason: String) -> SynthesisError {
    SynthesisError::PlanMismatch { instance: trace.instance_id.clone(), reason }
}

/// Index of the last event belonging to the first execution of `step`: its
/// (possibly paired) intrinsic events followed by trailing context events.
fn step_block(events: &[Event], step: &str) -> Option<(usize, usize)> {
    let mut at = events.iter().position(|e| e.kind == EventKind::IntrinsicStep && e.name == step)?;
    while events.get(at + 1).is_some_and(|e| e.kind == EventKind::IntrinsicStep && e.name == step) {
        at += 1;
    }
    let mut end = at;
    while events.get(end + 1).is_some_and(|e| e.kind == EventKind::Context) {
        end += 1;
    }
    Some((at, end))
}

/// Keeps `events[..=from]` plus the next `count` intrinsic events and the
/// context events between them.
fn keep_through(trace: &EventTrace, events: &mut Vec<Event>, from: usize, count: usize) -> Result<(), SynthesisError> {
    let mut seen = 0;
    let mut cut = None;
    for (i, e) in events.iter().enumerate().skip(from + 1) {
        if e.is_intrinsic() {
            seen += 1;
            if seen == count {
                cut = Some(i);
                break;
            }
        }
    }
    let cut = cut.ok_or_else(|| mismatch(trace, format!("fewer than {count} steps follow the error")))?;
    events.truncate(cut + 1);
    Ok(())
}

fn apply(
    trace: &EventTrace,
    manifestation: &Manifestation,
    spec: &CollaborationSpec,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<EventTrace, SynthesisError> {
    let at = manifestation.at();
    let (step_at, block_end) =
        step_block(&trace.events, at).ok_or_else(|| mismatch(trace, format!("step {at:?} does not occur")))?;
    let partner = trace.events[step_at].partner.clone();
    let mut events = trace.events.clone();
    let error_time;
    match manifestation {
        Manifestation::Step { detour, public, .. } => {
            events.truncate(block_end + 1);
            let visibility = if *public { Visibility::Public } else { Visibility::Private };
            let mut t = events[block_end].timestamp;
            for name in detour {
                t += step_gap(spec, rng);
                events.push(Event::step(name, t, trace.instance_id.as_str()).with_partner(&partner, visibility));
            }
            error_time = events[block_end + 1].timestamp;
        }
        Manifestation::Event { alarm, failure_after, .. } => {
            let source = spec.context_source(alarm).expect("validated alarm");
            let t = events[block_end].timestamp + 1000;
            let alarm_event = Event::new(alarm, EventKind::Context, t, trace.instance_id.as_str())
                .with_partner(&source.partner, source.visibility());
            events.insert(block_end + 1, alarm_event);
            error_time = t;
            keep_through(trace, &mut events, block_end + 1, *failure_after)?;
        }
        Manifestation::Data { context, field, failure_after, .. } => {
            let source = spec.context_source(context).expect("validated context");
            let Some(Distribution::Normal { mean, sd }) =
                source.fields.iter().find(|f| f.key == *field).map(|f| &f.dist)
            else {
                unreachable!("validated data fault field")
            };
            let shifted = mean + 6.0 * sd;
            let reading = (step_at + 1..=block_end)
                .find(|&i| events[i].name == *context)
                .ok_or_else(|| mismatch(trace, format!("no {context:?} reading after {at:?}")))?;
            let slot = events[reading]
                .payload
                .iter_mut()
                .find(|f| f.key == *field)
                .ok_or_else(|| mismatch(trace, format!("{context:?} reading lacks field {field:?}")))?;
            slot.value = Value::Numeric(shifted);
            error_time = events[reading].timestamp;
            keep_through(trace, &mut events, reading, *failure_after)?;
        }
    }
    let t = events.last().expect("non-empty").timestamp + step_gap(spec, rng);
    events.push(
        Event::new(DEFAULT_FAILURE_NAME, EventKind::IntrinsicFailure, t, trace.instance_id.as_str())
            .with_partner(&partner, Visibility::Public),
    );
    Ok(EventTrace {
        instance_id: trace.instance_id.clone(),
        events,
        outcome: Some(Outcome::Fail),
        fault: Some(FaultRecord { fault_type: manifestation.fault_type(), error_time }),
    })
}

#[cfg(test)]
mod tests {
    use super::super::generate;
    use super::*;

    fn corpus(spec: &CollaborationSpec, n: usize) -> Vec<EventTrace> {
        generate(spec, n).unwrap()
    }

    #[test]
    fn rate_zero_and_one() {
        let spec = CollaborationSpec::bundled("minimal").unwrap();
        let traces = corpus(&spec, 50);
        let none = inject_faults(&traces, &FaultPlan::new(&spec, 0.0, 1).unwrap()).unwrap();
        assert_eq!(none, traces);
        let all = inject_faults(&traces, &FaultPlan::new(&spec, 1.0, 1).unwrap()).unwrap();
        for t in &all {
            assert_eq!(t.outcome, Some(Outcome::Fail));
            assert_eq!(t.events.iter().filter(|e| e.kind == EventKind::IntrinsicFailure).count(), 1);
            assert_eq!(t.intrinsic().last().unwrap().kind, EventKind::IntrinsicFailure);
            assert_eq!(t.events.last().unwrap().kind, EventKind::IntrinsicFailure);
        }
    }

    #[test]
    fn each_fault_type_manifests_as_declared() {
        let spec = CollaborationSpec::bundled("default").unwrap();
        let traces = corpus(&spec, 30);
        for t in FaultType::ALL {
            let injected = inject_faults(&traces, &FaultPlan::only(&spec, t, 1.0, 9).unwrap()).unwrap();
            for (before, after) in traces.iter().zip(&injected) {
                let fault = after.fault.as_ref().unwrap();
                assert_eq!(fault.fault_type, t);
                let body = &after.events[..after.events.len() - 1];
                let err = body.iter().position(|e| e.timestamp == fault.error_time).unwrap();
                // Everything before the error is untouched.
                assert_eq!(&body[..err], &before.events[..err]);
                let steps = |events: &[Event]| {
                    events.iter().filter(|e| e.is_intrinsic()).map(|e| e.name.clone()).collect::<Vec<_>>()
                };
                match t {
                    FaultType::StepIndicated => {
                        assert!(body[err].is_intrinsic());
                        assert_ne!(steps(body), steps(&before.events[..body.len().min(before.len())]));
                    }
                    FaultType::EventIndicated => {
                        assert_eq!(body[err].kind, EventKind::Context);
                        let mut without = body.to_vec();
                        without.remove(err);
                        assert_eq!(without, before.events[..without.len()]);
                    }
                    FaultType::DataIndicated => {
                        assert_eq!(body[err].kind, EventKind::Context);
                        assert_ne!(body[err].payload, before.events[err].payload);
                        assert_eq!(body[err].name, before.events[err].name);
                        assert_eq!(&body[err + 1..], &before.events[err + 1..body.len()]);
                    }
                }
            }
        }
    }

    #[test]
    fn injection_is_deterministic() {
        let spec = CollaborationSpec::bundled("default").unwrap();
        let traces = corpus(&spec, 100);
        let plan = FaultPlan::new(&spec, 0.5, 4).unwrap();
        assert_eq!(inject_faults(&traces, &plan).unwrap(), inject_faults(&traces, &plan).unwrap());
    }

    #[test]
    fn absent_step_is_a_mismatch() {
        let spec = CollaborationSpec::bundled("minimal").unwrap();
        let mut traces = corpus(&spec, 1);
        traces[0].events.retain(|e| e.name != "a1" && e.name != "a2" && e.name != "a3");
        let plan = FaultPlan::new(&spec, 1.0, 1).unwrap();
        assert!(matches!(inject_faults(&traces, &plan), Err(SynthesisError::PlanMismatch { .. })));
    }

    #[test]
    fn plan_validation() {
        let spec = CollaborationSpec::bundled("early-warning").unwrap();
        assert!(FaultPlan::new(&spec, 1.5, 0).is_err());
        assert!(FaultPlan::only(&spec, FaultType::DataIndicated, 0.5, 0).is_err());
        let plan = FaultPlan::new(&spec, 0.5, 0).unwrap();
        assert_eq!(plan.weights, [1.0, 0.0, 0.0]);
    }
}
