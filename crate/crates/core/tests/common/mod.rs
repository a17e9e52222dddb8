#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use efp_core::event::{Event, EventCatalog, EventKind, EventTrace, Field, Outcome, Visibility};
use efp_core::model::{ProcessModel, State};
use efp_core::predictor::{FrequencyConfig, FrequencyModel};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn s(name: &str) -> State {
    State::parse(name)
}

/// A random model over states `s0..s{n-1}`. Edges go forward only unless
/// `cyclic`; states without successors are final.
pub fn random_model(rng: &mut ChaCha8Rng, cyclic: bool) -> (ProcessModel, BTreeMap<String, Vec<String>>) {
    let n = rng.gen_range(3..=8);
    let name = |i: usize| format!("s{i}");
    let mut succ: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for i in 0..n - 1 {
        let mut out: BTreeSet<usize> = BTreeSet::new();
        out.insert(rng.gen_range(i + 1..n));
        for j in i + 1..n {
            if rng.gen_bool(0.3) {
                out.insert(j);
            }
        }
        if cyclic && i > 0 && rng.gen_bool(0.5) {
            out.insert(rng.gen_range(0..i));
        }
        succ.insert(name(i), out.into_iter().map(name).collect());
    }
    succ.insert(name(n - 1), Vec::new());
    let edges: Vec<(State, State)> = succ.iter().flat_map(|(a, bs)| bs.iter().map(move |b| (s(a), s(b)))).collect();
    let finals: Vec<State> = succ.iter().filter(|(_, bs)| bs.is_empty()).map(|(a, _)| s(a)).collect();
    (ProcessModel::new(s("s0"), finals, edges), succ)
}

/// Random walks over `succ`; about a fifth of them fail midway.
pub fn random_walks(rng: &mut ChaCha8Rng, succ: &BTreeMap<String, Vec<String>>, count: usize) -> Vec<EventTrace> {
    (0..count)
        .map(|i| {
            let id = format!("w{i}");
            let mut at = "s0".to_owned();
            let mut events = vec![Event::step(&at, 0, id.as_str())];
            let fails = rng.gen_bool(0.2);
            while !succ[&at].is_empty() && events.len() < 30 {
                if fails && rng.gen_bool(0.3) {
                    break;
                }
                at = succ[&at].choose(rng).unwrap().clone();
                events.push(Event::step(&at, events.len() as i64, id.as_str()));
            }
            let outcome = if succ[&at].is_empty() {
                Outcome::End
            } else {
                events.push(Event::failure("failure", events.len() as i64, id.as_str()));
                Outcome::Fail
            };
            EventTrace::new(id, events).with_outcome(outcome)
        })
        .collect()
}

pub fn frozen_classifier(traces: &[EventTrace]) -> FrequencyModel {
    let mut m = FrequencyModel::new(EventCatalog::infer(traces).unwrap(), FrequencyConfig::default());
    m.train_batch(traces).unwrap();
    m
}

pub fn random_log(rng: &mut ChaCha8Rng) -> Vec<EventTrace> {
    let names = ["receive order", "ship & bill", "check <stock>", "\"quote\"", "pay"];
    (0..rng.gen_range(1..6))
        .map(|i| {
            let id = format!("case {i}");
            let mut events: Vec<Event> = (0..rng.gen_range(1..8))
                .map(|j| {
                    let kind = if rng.gen_bool(0.3) { EventKind::Context } else { EventKind::IntrinsicStep };
                    let mut e =
                        Event::new(*names.choose(rng).unwrap(), kind, 1_700_000_000_000 + j * 61_001, id.as_str())
                            .with_partner(["p1", "p2"][rng.gen_range(0..2)], Visibility::Private);
                    if kind == EventKind::Context {
                        e.payload = vec![
                            Field::numeric("v", rng.gen_range(-1e6..1e6)),
                            Field::categorical("tag", ["a", "b & c"][rng.gen_range(0..2)]),
                        ];
                    }
                    e
                })
                .collect();
            let fail = rng.gen_bool(0.5);
            if fail {
                events.push(
                    Event::failure("failure", 1_800_000_000_000, id.as_str()).with_partner("p1", Visibility::Public),
                );
            }
            EventTrace::new(id, events).with_outcome(if fail { Outcome::Fail } else { Outcome::End })
        })
        .collect()
}
