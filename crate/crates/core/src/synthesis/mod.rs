//! Synthetic collaboration logs with injected faults.
//!
//! [`generate`] simulates fault-free runs of a [`CollaborationSpec`]:
//! partner steps in flow order, interaction pairs carrying the same message
//! on both sides, optional loop-backs, and context readings after the steps
//! their sources are attached to. [`inject_faults`] then turns a fraction of
//! the runs into failing ones according to a [`FaultPlan`].

mod inject;
mod spec;

pub use inject::{inject_faults, FaultPlan};
pub use spec::{
    CollaborationSpec, ContextSpec, Distribution, FieldSpec, InteractionSpec, LoopSpec, Manifestation, PartnerSpec,
    TaskRole, BUNDLED_SPECS,
};

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use thiserror::Error;

use crate::event::{Event, EventKind, EventTrace, Field, Outcome, Value, Visibility};

#[derive(Debug, Error, PartialEq)]
pub enum SynthesisError {
    #[error("invalid collaboration spec: {0}")]
    InvalidSpec(String),
    #[error("collaboration spec is disconnected: {0}")]
    DisconnectedSpec(String),
    #[error("invalid fault plan: {0}")]
    InvalidPlan(String),
    #[error("fault plan does not apply to trace {instance:?}: {reason}")]
    PlanMismatch { instance: String, reason: String },
    #[error("number of instances must be at least 1")]
    NoInstances,
}

/// 2024-01-01T00:00:00Z; instance `i` starts `i` days later.
pub const BASE_TIME_MS: i64 = 1_704_067_200_000;
const DAY_MS: i64 = 86_400_000;
const MINUTE_MS: i64 = 60_000;

pub fn instance_id(index: usize) -> String {
    format!("case-{index:06}")
}

/// Per-instance random stream: one seed, one stream per index.
pub(crate) fn instance_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub(crate) fn step_gap(spec: &CollaborationSpec, rng: &mut ChaCha8Rng) -> i64 {
    i64::from(rng.gen_range(spec.step_minutes[0]..=spec.step_minutes[1])) * MINUTE_MS
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

fn sample(dist: &Distribution, rng: &mut ChaCha8Rng, data: &HashMap<String, Value>) -> Value {
    match dist {
        Distribution::Normal { mean, sd } => {
            Value::Numeric(round3(rng.sample(Normal::new(*mean, *sd).expect("validated normal"))))
        }
        Distribution::Uniform { low, high, high_from } => {
            let cap = high_from.as_ref().and_then(|k| data.get(k)).and_then(Value::as_f64);
            let high = cap.map_or(*high, |c| c.min(*high)).max(*low);
            Value::Numeric(round3(if high > *low { rng.gen_range(*low..=high) } else { *low }))
        }
        Distribution::Choice { values } => Value::Categorical(values[rng.gen_range(0..values.len())].clone()),
        Distribution::Copy { from } => data.get(from).cloned().unwrap_or(Value::Numeric(0.0)),
    }
}

fn sample_fields(fields: &[FieldSpec], rng: &mut ChaCha8Rng, data: &mut HashMap<String, Value>) -> Vec<Field> {
    fields
        .iter()
        .map(|f| {
            let value = sample(&f.dist, rng, data);
            data.insert(f.key.clone(), value.clone());
            Field { key: f.key.clone(), value }
        })
        .collect()
}

/// Simulates `n` fault-free runs, all labeled `End`.
pub fn generate(spec: &CollaborationSpec, n: usize) -> Result<Vec<EventTrace>, SynthesisError> {
    spec.validate()?;
    if n == 0 {
        return Err(SynthesisError::NoInstances);
    }
    let roles = spec.roles();
    Ok((0..n).map(|i| generate_instance(spec, &roles, i)).collect())
}

fn generate_instance(
    spec: &CollaborationSpec,
    roles: &std::collections::BTreeMap<String, TaskRole>,
    index: usize,
) -> EventTrace {
    let mut rng = instance_rng(spec.seed, index);
    let id = instance_id(index);
    let mut t = BASE_TIME_MS + index as i64 * DAY_MS;
    let mut data: HashMap<String, Value> = HashMap::new();
    let mut events = Vec::new();
    let mut loop_counts = vec![0u32; spec.loops.len()];
    let mut pos = 0;
    while pos < spec.flow.len() {
        let task = &spec.flow[pos];
        match &roles[task] {
            TaskRole::Step { partner, visibility } => {
                events.push(Event::step(task, t, id.as_str()).with_partner(partner, *visibility));
            }
            TaskRole::Interaction { from, to } => {
                let interaction = spec.interactions.iter().find(|i| i.name == *task).expect("validated interaction");
                let payload = sample_fields(&interaction.payload, &mut rng, &mut data);
                let mut send = Event::step(task, t, id.as_str())
                    .with_partner(from, Visibility::Interaction)
                    .with_payload(payload.clone());
                send.lifecycle = Some("send".into());
                t += i64::from(rng.gen_range(1..=5u32)) * MINUTE_MS;
                let mut receive =
                    Event::step(task, t, id.as_str()).with_partner(to, Visibility::Interaction).with_payload(payload);
                receive.lifecycle = Some("receive".into());
                events.push(send);
                events.push(receive);
            }
        }
        for source in spec.context.iter().filter(|c| c.attach.contains(task)) {
            // Always draw, so that one source's probability does not shift
            // the random stream of the others.
            let fires = rng.gen::<f64>() < source.probability;
            let mut scratch = HashMap::new();
            let payload = sample_fields(&source.fields, &mut rng, &mut scratch);
            if fires {
                t += i64::from(rng.gen_range(1..=3u32)) * MINUTE_MS;
                events.push(
                    Event::new(&source.name, EventKind::Context, t, id.as_str())
                        .with_partner(&source.partner, source.visibility())
                        .with_payload(payload),
                );
            }
        }
        t += step_gap(spec, &mut rng);
        let mut next = pos + 1;
        for (k, l) in spec.loops.iter().enumerate().filter(|(_, l)| l.from == *task) {
            let u: f64 = rng.gen();
            if loop_counts[k] < l.max && u < l.probability {
                loop_counts[k] += 1;
                next = spec.flow.iter().position(|f| *f == l.to).expect("validated loop");
                break;
            }
        }
        pos = next;
    }
    EventTrace::new(id, events).with_outcome(Outcome::End)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::event::xes::to_xes_bytes;
    use crate::model::mine_model;

    #[test]
    fn bundled_specs_parse() {
        for name in BUNDLED_SPECS {
            assert!(CollaborationSpec::bundled(name).is_some(), "{name}");
        }
        assert!(CollaborationSpec::bundled("nope").is_none());
    }

    #[test]
    fn default_spec_counts() {
        let spec = CollaborationSpec::bundled("default").unwrap();
        assert_eq!(spec.partners.len(), 6);
        assert_eq!(spec.task_count(), 48);
        assert_eq!(spec.interaction_count(), 15);
        let t = &generate(&spec, 1).unwrap()[0];
        let names: BTreeSet<&str> = t.intrinsic().map(|e| e.name.as_str()).collect();
        assert_eq!(names.len(), 48);
        let partners: BTreeSet<&str> = t.events.iter().map(|e| e.partner.as_str()).collect();
        assert_eq!(partners.len(), 6);
    }

    #[test]
    fn minimal_spec_structure() {
        let spec = CollaborationSpec::bundled("minimal").unwrap();
        let traces = generate(&spec, 10).unwrap();
        assert_eq!(traces.len(), 10);
        for t in &traces {
            assert_eq!(t.outcome, Some(Outcome::End));
            let handoff: Vec<&Event> = t.events.iter().filter(|e| e.name == "handoff").collect();
            assert_eq!(handoff.len(), 2);
            assert_eq!((handoff[0].partner.as_str(), handoff[1].partner.as_str()), ("alice", "bob"));
            assert_eq!(handoff[0].payload, handoff[1].payload);
            assert!(t.events.iter().any(|e| e.partner == "alice") && t.events.iter().any(|e| e.partner == "bob"));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = CollaborationSpec::bundled("default").unwrap();
        let a = to_xes_bytes(&generate(&spec, 20).unwrap());
        let b = to_xes_bytes(&generate(&spec, 20).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn zero_instances_is_an_error() {
        let spec = CollaborationSpec::bundled("minimal").unwrap();
        assert_eq!(generate(&spec, 0), Err(SynthesisError::NoInstances));
    }

    #[test]
    fn delivery_respects_deadline() {
        let spec = CollaborationSpec::bundled("default").unwrap();
        for t in generate(&spec, 200).unwrap() {
            let field = |event: &str, key: &str| {
                t.events
                    .iter()
                    .find(|e| e.name == event)
                    .and_then(|e| e.payload.iter().find(|f| f.key == key))
                    .and_then(|f| f.value.as_f64())
                    .unwrap()
            };
            assert!(field("deliver_goods", "delivery_days") <= field("send_purchase_order", "deadline_days"));
            assert_eq!(field("forward_order", "quantity"), field("send_purchase_order", "quantity"));
        }
    }

    #[test]
    fn mined_edges_match_ground_truth() {
        let spec = CollaborationSpec::bundled("default").unwrap();
        let traces = generate(&spec, 400).unwrap();
        let model = mine_model(&traces).unwrap();
        assert_eq!(*model.edges(), spec.ground_truth_edges());
        assert_eq!(model.initial().name(), "identify_demand");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let base = include_str!("../../specs/minimal.toml");
        let orphan = base.replace(
            r#"flow = ["a1", "a2", "a3", "handoff", "b1", "b2", "b3"]"#,
            r#"flow = ["a1", "a2", "a3", "handoff", "b1", "b2"]"#,
        );
        assert!(matches!(CollaborationSpec::parse(&orphan), Err(SynthesisError::DisconnectedSpec(_))));
        let self_talk = base.replace("to = \"bob\"", "to = \"alice\"");
        assert!(matches!(CollaborationSpec::parse(&self_talk), Err(SynthesisError::InvalidSpec(_))));
        assert!(matches!(CollaborationSpec::parse("name = 1"), Err(SynthesisError::InvalidSpec(_))));
    }
}
