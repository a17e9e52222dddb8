//! In-process event bus and per-instance prediction components.
//!
//! Data sources publish events to the [`Bus`], which keeps one queue per
//! process instance. An [`Efp`] handle subscribes to exactly one instance,
//! folds every delivered event into the running trace, reruns the traversal
//! and publishes a [`PredictionEvent`] on the bus's outgoing queue. When the
//! instance reaches a final step or fails, the completed trace is fed back
//! into the shared classifier.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use crossbeam_channel::{bounded, unbounded, Receiver, Sender, TryRecvError};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{Event, EventKind, EventTrace, Outcome};
use crate::model::ProcessModel;
use crate::predictor::Classifier;
use crate::traversal::{failure_probability, traverse, OutcomePath, TraversalLimits};

pub const DEFAULT_QUEUE_CAPACITY: usize = 65536;

#[derive(Debug, Error, PartialEq)]
pub enum RuntimeError {
    #[error("instance {0:?} already has a live prediction component")]
    DuplicateInstance(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionEvent {
    pub instance_id: String,
    /// Index of the triggering event within the instance's trace.
    pub at_event_index: usize,
    pub p_fail: f64,
    pub lower: f64,
    pub upper: f64,
    pub top_paths: Vec<OutcomePath>,
    /// Timestamp of the triggering event.
    pub timestamp: i64,
}

impl fmt::Display for PredictionEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}",
            self.instance_id, self.at_event_index, self.p_fail, self.lower, self.upper
        )
    }
}

/// An item on the outgoing queue.
#[derive(Clone, Debug, PartialEq)]
pub enum PredictionMessage {
    Prediction(PredictionEvent),
    Error { instance_id: String, at_event_index: usize, message: String },
}

impl PredictionMessage {
    pub fn as_prediction(&self) -> Option<&PredictionEvent> {
        match self {
            PredictionMessage::Prediction(p) => Some(p),
            PredictionMessage::Error { .. } => None,
        }
    }
}

#[derive(Default)]
struct InstanceQueue {
    subscribers: Vec<Sender<Event>>,
    /// Events published before anyone subscribed.
    backlog: VecDeque<Event>,
}

/// Publish/subscribe bus with one queue per process instance.
pub struct Bus {
    capacity: usize,
    queues: Mutex<HashMap<String, Arc<Mutex<InstanceQueue>>>>,
    live: Mutex<HashSet<String>>,
    predictions_tx: Sender<PredictionMessage>,
    predictions_rx: Receiver<PredictionMessage>,
}

impl Default for Bus {
    fn default() -> Self {
        Bus::new(DEFAULT_QUEUE_CAPACITY)
    }
}

impl Bus {
    /// A bus whose per-subscriber queues hold at most `capacity` events;
    /// publishers block when a queue is full.
    pub fn new(capacity: usize) -> Self {
        let (predictions_tx, predictions_rx) = unbounded();
        Bus {
            capacity: capacity.max(1),
            queues: Mutex::new(HashMap::new()),
            live: Mutex::new(HashSet::new()),
            predictions_tx,
            predictions_rx,
        }
    }

    fn queue(&self, instance: &str) -> Arc<Mutex<InstanceQueue>> {
        self.queues.lock().entry(instance.to_owned()).or_default().clone()
    }

    /// Number of allocated instance queues.
    pub fn queue_count(&self) -> usize {
        self.queues.lock().len()
    }

    /// Appends `event` to its instance's queue, allocating the queue if needed.
    pub fn publish(&self, event: Event) {
        let queue = self.queue(&event.instance);
        let mut q = queue.lock();
        q.subscribers.retain(|tx| tx.send(event.clone()).is_ok());
        if q.subscribers.is_empty() {
            q.backlog.push_back(event);
        }
    }

    /// Subscribes to an instance's queue. The first subscriber receives any
    /// backlog accumulated before it.
    pub fn subscribe(&self, instance: &str) -> Receiver<Event> {
        let queue = self.queue(instance);
        let mut q = queue.lock();
        let backlog = q.backlog.len();
        let (tx, rx) = bounded(self.capacity.max(backlog));
        for event in q.backlog.drain(..) {
            tx.send(event).expect("receiver is alive");
        }
        q.subscribers.push(tx);
        rx
    }

    /// The outgoing prediction queue.
    pub fn predictions(&self) -> &Receiver<PredictionMessage> {
        &self.predictions_rx
    }

    pub fn drain_predictions(&self) -> Vec<PredictionMessage> {
        self.predictions_rx.try_iter().collect()
    }

    fn emit(&self, message: PredictionMessage) {
        let _ = self.predictions_tx.send(message);
    }

    fn release(&self, instance: &str) {
        self.live.lock().remove(instance);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RuntimeOptions {
    pub limits: TraversalLimits,
    /// Feed completed traces back into the classifier.
    pub learn: bool,
    /// Number of outcome paths attached to each prediction.
    pub top_paths: usize,
}

impl Default for RuntimeOptions {
    fn default() -> Self {
        RuntimeOptions { limits: TraversalLimits::default(), learn: true, top_paths: 3 }
    }
}

/// The prediction component of one process instance.
pub struct Efp<C: Classifier> {
    bus: Arc<Bus>,
    classifier: Arc<RwLock<C>>,
    model: Arc<ProcessModel>,
    options: RuntimeOptions,
    inbox: Receiver<Event>,
    trace: EventTrace,
    closed: Option<Outcome>,
    trainings: usize,
}

/// Creates the prediction component for a new instance.
pub fn start_instance<C: Classifier>(
    bus: &Arc<Bus>,
    instance_id: &str,
    classifier: Arc<RwLock<C>>,
    model: Arc<ProcessModel>,
    options: RuntimeOptions,
) -> Result<Efp<C>, RuntimeError> {
    if !bus.live.lock().insert(instance_id.to_owned()) {
        return Err(RuntimeError::DuplicateInstance(instance_id.to_owned()));
    }
    let inbox = bus.subscribe(instance_id);
    Ok(Efp {
        bus: Arc::clone(bus),
        classifier,
        model,
        options,
        inbox,
        trace: EventTrace::new(instance_id, Vec::new()),
        closed: None,
        trainings: 0,
    })
}

impl<C: Classifier> Efp<C> {
    pub fn instance_id(&self) -> &str {
        &self.trace.instance_id
    }

    pub fn trace(&self) -> &EventTrace {
        &self.trace
    }

    pub fn closed(&self) -> Option<Outcome> {
        self.closed
    }

    /// How many times the completed trace was handed to the classifier.
    pub fn trainings(&self) -> usize {
        self.trainings
    }

    /// Processes one event; returns the message published for it, if any.
    pub fn on_event(&mut self, event: Event) -> Option<PredictionMessage> {
        let index = self.trace.events.len();
        let timestamp = event.timestamp;
        let closes = match event.kind {
            EventKind::IntrinsicFailure => Some(Outcome::Fail),
            EventKind::IntrinsicStep if event.state().is_some_and(|s| self.model.is_final(&s)) => Some(Outcome::End),
            _ => None,
        };
        // Pushed directly: events arrive in publish order, which the trace keeps.
        self.trace.events.push(event);

        let message = if self.trace.intrinsic().next().is_none() {
            None
        } else {
            let result = {
                let classifier = self.classifier.read();
                traverse(&self.trace, &*classifier, &self.model, &self.options.limits)
            };
            Some(match result {
                Ok(result) => {
                    let est = failure_probability(&result);
                    PredictionMessage::Prediction(PredictionEvent {
                        instance_id: self.trace.instance_id.clone(),
                        at_event_index: index,
                        p_fail: est.p_fail,
                        lower: est.lower,
                        upper: est.upper,
                        top_paths: result.paths.into_iter().take(self.options.top_paths).collect(),
                        timestamp,
                    })
                }
                Err(e) => PredictionMessage::Error {
                    instance_id: self.trace.instance_id.clone(),
                    at_event_index: index,
                    message: e.to_string(),
                },
            })
        };
        if let Some(m) = &message {
            self.bus.emit(m.clone());
        }
        if let (Some(outcome), None) = (closes, self.closed) {
            self.close(outcome);
        }
        message
    }

    fn close(&mut self, outcome: Outcome) {
        self.closed = Some(outcome);
        self.trace.outcome = Some(outcome);
        if self.options.learn {
            self.trainings += 1;
            if let Err(e) = self.classifier.write().train_online(&self.trace) {
                self.bus.emit(PredictionMessage::Error {
                    instance_id: self.trace.instance_id.clone(),
                    at_event_index: self.trace.events.len().saturating_sub(1),
                    message: format!("training failed: {e}"),
                });
            }
        }
        self.bus.release(&self.trace.instance_id);
    }

    /// Processes every event currently queued for this instance.
    pub fn poll(&mut self) -> Vec<PredictionMessage> {
        let mut out = Vec::new();
        while self.closed.is_none() {
            match self.inbox.try_recv() {
                Ok(event) => out.extend(self.on_event(event)),
                Err(TryRecvError::Empty | TryRecvError::Disconnected) => break,
            }
        }
        out
    }

    /// Blocks until the instance closes or the bus goes away.
    pub fn run_until_closed(&mut self) -> Vec<PredictionMessage> {
        let mut out = Vec::new();
        while self.closed.is_none() {
            match self.inbox.recv() {
                Ok(event) => out.extend(self.on_event(event)),
                Err(_) => break,
            }
        }
        out
    }
}

/// Replays traces one after another through a fresh bus and returns every
/// message in emission order.
pub fn replay<C: Classifier>(
    traces: &[EventTrace],
    classifier: Arc<RwLock<C>>,
    model: Arc<ProcessModel>,
    options: RuntimeOptions,
) -> Vec<PredictionMessage> {
    let bus = Arc::new(Bus::default());
    let mut out = Vec::new();
    for trace in traces {
        // Live ids are released on close; a trace that never closes keeps its
        // id, so replays use their own bus per call.
        let Ok(mut efp) =
            start_instance(&bus, &trace.instance_id, Arc::clone(&classifier), Arc::clone(&model), options)
        else {
            out.push(PredictionMessage::Error {
                instance_id: trace.instance_id.clone(),
                at_event_index: 0,
                message: "duplicate instance id".into(),
            });
            continue;
        };
        for event in &trace.events {
            let mut e = event.clone();
            e.instance = trace.instance_id.clone();
            bus.publish(e);
            out.extend(efp.poll());
        }
    }
    bus.drain_predictions();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::State;
    use crate::predictor::{PredictError, Prediction};
    use std::thread;

    struct Fixed {
        trained: Vec<EventTrace>,
    }

    impl Classifier for Fixed {
        fn predict(&self, _: &[Event]) -> Result<Prediction, PredictError> {
            Prediction::new(vec![(State::Fail, 0.2), (State::step("B"), 0.8)])
        }

        fn train_online(&mut self, trace: &EventTrace) -> Result<(), PredictError> {
            self.trained.push(trace.clone());
            Ok(())
        }
    }

    fn model() -> Arc<ProcessModel> {
        Arc::new(ProcessModel::new(State::step("A"), [State::step("B")], [(State::step("A"), State::step("B"))]))
    }

    fn setup() -> (Arc<Bus>, Arc<RwLock<Fixed>>) {
        (Arc::new(Bus::default()), Arc::new(RwLock::new(Fixed { trained: Vec::new() })))
    }

    #[test]
    fn duplicate_instances_are_rejected() {
        let (bus, c) = setup();
        let _a = start_instance(&bus, "a", c.clone(), model(), RuntimeOptions::default()).unwrap();
        assert_eq!(bus.queue_count(), 1);
        let err = start_instance(&bus, "a", c.clone(), model(), RuntimeOptions::default()).err();
        assert_eq!(err, Some(RuntimeError::DuplicateInstance("a".into())));
        let _b = start_instance(&bus, "b", c, model(), RuntimeOptions::default()).unwrap();
        assert_eq!(bus.queue_count(), 2);
    }

    #[test]
    fn context_before_first_step_is_silent() {
        let (bus, c) = setup();
        let mut efp = start_instance(&bus, "a", c, model(), RuntimeOptions::default()).unwrap();
        bus.publish(Event::context("temp", 0, "a"));
        assert!(efp.poll().is_empty());
        bus.publish(Event::step("A", 1, "a"));
        let out = efp.poll();
        assert_eq!(out.len(), 1);
        let p = out[0].as_prediction().unwrap();
        assert_eq!(p.at_event_index, 1);
        assert!((p.p_fail - 0.2).abs() < 1e-12);
        assert_eq!(p.to_string(), "a\t1\t0.2000\t0.2000\t0.2000");
        assert_eq!(bus.drain_predictions().len(), 1);
    }

    #[test]
    fn closing_trains_exactly_once_with_the_full_trace() {
        let (bus, c) = setup();
        let mut efp = start_instance(&bus, "a", c.clone(), model(), RuntimeOptions::default()).unwrap();
        let events = [Event::step("A", 0, "a"), Event::context("t", 1, "a"), Event::step("B", 2, "a")];
        for e in &events {
            bus.publish(e.clone());
        }
        assert_eq!(efp.poll().len(), 3);
        assert_eq!(efp.closed(), Some(Outcome::End));
        let trained = &c.read().trained;
        assert_eq!(trained.len(), 1);
        assert_eq!(trained[0].events, events);
        assert_eq!(trained[0].outcome, Some(Outcome::End));
        // The id is free again once the instance closed.
        assert!(start_instance(&bus, "a", c.clone(), model(), RuntimeOptions::default()).is_ok());
    }

    #[test]
    fn failure_event_closes_with_fail() {
        let (bus, c) = setup();
        let mut efp = start_instance(&bus, "a", c.clone(), model(), RuntimeOptions::default()).unwrap();
        bus.publish(Event::step("A", 0, "a"));
        bus.publish(Event::failure("failure", 1, "a"));
        let out = efp.poll();
        assert_eq!(out[1].as_prediction().unwrap().p_fail, 1.0);
        assert_eq!(efp.closed(), Some(Outcome::Fail));
        assert_eq!(c.read().trained[0].outcome, Some(Outcome::Fail));
    }

    #[test]
    fn unknown_state_is_reported_and_instance_survives() {
        let (bus, c) = setup();
        let mut efp = start_instance(&bus, "a", c, model(), RuntimeOptions::default()).unwrap();
        bus.publish(Event::step("Z", 0, "a"));
        bus.publish(Event::step("A", 1, "a"));
        let out = efp.poll();
        assert!(matches!(out[0], PredictionMessage::Error { .. }));
        assert!(out[1].as_prediction().is_some());
    }

    #[test]
    fn queues_are_isolated() {
        let (bus, c) = setup();
        let mut a = start_instance(&bus, "a", c.clone(), model(), RuntimeOptions::default()).unwrap();
        let mut b = start_instance(&bus, "b", c, model(), RuntimeOptions::default()).unwrap();
        for i in 0..5 {
            bus.publish(Event::context("x", i, "a"));
            bus.publish(Event::context("y", i, "b"));
        }
        a.poll();
        b.poll();
        assert!(a.trace().events.iter().all(|e| e.instance == "a" && e.name == "x"));
        assert!(b.trace().events.iter().all(|e| e.instance == "b" && e.name == "y"));
        assert_eq!(a.trace().len(), 5);
    }

    #[test]
    fn backlog_reaches_late_subscriber() {
        let (bus, c) = setup();
        bus.publish(Event::step("A", 0, "late"));
        let mut efp = start_instance(&bus, "late", c, model(), RuntimeOptions::default()).unwrap();
        assert_eq!(efp.poll().len(), 1);
    }

    #[test]
    fn concurrent_producers_keep_their_order() {
        let bus = Arc::new(Bus::new(64));
        let rx = bus.subscribe("i");
        let producers: Vec<_> = (0..4)
            .map(|p| {
                let bus = Arc::clone(&bus);
                thread::spawn(move || {
                    for k in 0..250 {
                        bus.publish(Event::context(format!("p{p}"), k, "i"));
                    }
                })
            })
            .collect();
        let mut got = Vec::new();
        while got.len() < 1000 {
            got.push(rx.recv().unwrap());
        }
        producers.into_iter().for_each(|h| h.join().unwrap());
        for p in 0..4 {
            let seq: Vec<i64> = got.iter().filter(|e| e.name == format!("p{p}")).map(|e| e.timestamp).collect();
            assert_eq!(seq, (0..250).collect::<Vec<_>>());
        }
        assert!(rx.try_recv().is_err());
    }
}
