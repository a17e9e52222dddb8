//! C ABI for the failure predictor.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free` function. Every fallible call returns an
//! [`EfpStatus`]; on failure [`efp_last_error`] describes what went wrong on
//! the calling thread. Strings are NUL-terminated UTF-8. Panics never unwind
//! into the caller; they surface as [`EfpStatus::Panic`].

use std::cell::RefCell;
use std::collections::{HashMap, VecDeque};
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use efp_core::evaluation::{metrics, train_classifier, ConfusionMatrix, EvalConfig};
use efp_core::event::xes::read_xes_file;
use efp_core::event::{Event, EventCatalog, EventKind, EventTrace, Field};
use efp_core::model::mine_model;
use efp_core::predictor::{AnyClassifier, Checkpoint, ClassifierKind};
use efp_core::runtime::{start_instance, Bus, Efp, PredictionMessage, RuntimeOptions};
use efp_core::traversal::{failure_probability, traverse, TraversalLimits};
use efp_core::ProcessModel;
use parking_lot::RwLock;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EfpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Model = 5,
    Predict = 6,
    /// Nothing to return; not an error.
    Empty = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EfpClassifierKind {
    Frequency = 0,
    Recurrent = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EfpEventKind {
    Step = 0,
    Context = 1,
    Failure = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EfpLimits {
    pub max_depth: usize,
    pub max_breadth: usize,
    pub min_probability: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EfpEstimate {
    pub p_fail: f64,
    pub lower: f64,
    pub upper: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EfpMetrics {
    pub precision: f64,
    pub recall: f64,
    pub mcc: f64,
}

/// One prediction taken from an engine. `instance_id` is owned by the
/// engine and stays valid until the next poll on it.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct EfpPrediction {
    pub instance_id: *const c_char,
    pub at_event_index: usize,
    pub p_fail: f64,
    pub lower: f64,
    pub upper: f64,
    pub timestamp_ms: i64,
}

/// A mined or parsed process model.
pub struct EfpModel {
    inner: Arc<ProcessModel>,
}

/// A trained next-step classifier.
pub struct EfpClassifier {
    inner: AnyClassifier,
}

/// A trace under construction.
pub struct EfpTrace {
    inner: EventTrace,
}

/// An event bus with one prediction component per running instance.
pub struct EfpEngine {
    bus: Arc<Bus>,
    classifier: Arc<RwLock<AnyClassifier>>,
    model: Arc<ProcessModel>,
    options: RuntimeOptions,
    instances: HashMap<String, Efp<AnyClassifier>>,
    pending: VecDeque<PredictionMessage>,
    last_instance: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

type FfiResult = Result<(), (EfpStatus, String)>;

fn guard(body: impl FnOnce() -> FfiResult) -> EfpStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            EfpStatus::Ok
        }
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EfpStatus::Panic
        }
    }
}

fn fail<T>(status: EfpStatus, message: impl ToString) -> Result<T, (EfpStatus, String)> {
    Err((status, message.to_string()))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, (EfpStatus, String)> {
    if p.is_null() {
        return fail(EfpStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p).to_str().or_else(|_| fail(EfpStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (EfpStatus, String)> {
    p.as_ref().map_or_else(|| fail(EfpStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (EfpStatus, String)> {
    p.as_mut().map_or_else(|| fail(EfpStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FfiResult {
    if out.is_null() {
        return fail(EfpStatus::NullPointer, "out is null");
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn limits_from(p: *const EfpLimits) -> Result<TraversalLimits, (EfpStatus, String)> {
    // SAFETY: callers pass null or a valid pointer.
    let limits = match unsafe { p.as_ref() } {
        None => TraversalLimits::default(),
        Some(l) => {
            TraversalLimits { max_depth: l.max_depth, max_breadth: l.max_breadth, min_probability: l.min_probability }
        }
    };
    limits.validate().or_else(|e| fail(EfpStatus::InvalidArgument, e))?;
    Ok(limits)
}

fn read_log(path: &str) -> Result<Vec<EventTrace>, (EfpStatus, String)> {
    read_xes_file(Path::new(path)).map(|l| l.traces).or_else(|e| match e {
        efp_core::event::xes::XesError::Io(io) => fail(EfpStatus::Io, format!("{path}: {io}")),
        other => fail(EfpStatus::Parse, format!("{path}: {other}")),
    })
}

/// Message describing the last failed call on this thread; empty after a
/// successful one. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn efp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn efp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Traversal defaults: depth 20, breadth 5, minimum probability 1e-4.
#[no_mangle]
pub extern "C" fn efp_limits_default() -> EfpLimits {
    let d = TraversalLimits::default();
    EfpLimits { max_depth: d.max_depth, max_breadth: d.max_breadth, min_probability: d.min_probability }
}

/// Parses a model from its text form.
///
/// # Safety
/// `text_ptr` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn efp_model_parse(text_ptr: *const c_char, out: *mut *mut EfpModel) -> EfpStatus {
    guard(|| {
        let model = ProcessModel::parse(text(text_ptr, "text")?).or_else(|e| fail(EfpStatus::Parse, e))?;
        put(out, EfpModel { inner: Arc::new(model) })
    })
}

/// Mines a model from an XES log.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn efp_model_mine_xes(path: *const c_char, out: *mut *mut EfpModel) -> EfpStatus {
    guard(|| {
        let traces = read_log(text(path, "path")?)?;
        let model = mine_model(&traces).or_else(|e| fail(EfpStatus::Model, e))?;
        put(out, EfpModel { inner: Arc::new(model) })
    })
}

/// Number of states of a model, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn efp_model_state_count(model: *const EfpModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.states().len())
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn efp_model_free(model: *mut EfpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Trains a classifier on a labeled XES log.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn efp_classifier_train_xes(
    path: *const c_char,
    kind: EfpClassifierKind,
    seed: u64,
    out: *mut *mut EfpClassifier,
) -> EfpStatus {
    guard(|| {
        let traces = read_log(text(path, "path")?)?;
        let catalog = EventCatalog::infer(&traces).or_else(|e| fail(EfpStatus::Parse, e))?;
        let classifier = match kind {
            EfpClassifierKind::Frequency => ClassifierKind::Frequency,
            EfpClassifierKind::Recurrent => ClassifierKind::Recurrent,
        };
        let config = EvalConfig { seed, classifier, ..Default::default() };
        let trained = train_classifier(&catalog, &traces, &config).or_else(|e| fail(EfpStatus::Predict, e))?;
        put(out, EfpClassifier { inner: trained })
    })
}

/// Loads a checkpoint written by `efp train` or [`efp_classifier_save`].
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn efp_classifier_load(path: *const c_char, out: *mut *mut EfpClassifier) -> EfpStatus {
    guard(|| {
        let checkpoint =
            Checkpoint::load(Path::new(text(path, "path")?), None).or_else(|e| fail(EfpStatus::Parse, e))?;
        put(out, EfpClassifier { inner: checkpoint.classifier })
    })
}

/// # Safety
/// `classifier` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn efp_classifier_save(classifier: *const EfpClassifier, path: *const c_char) -> EfpStatus {
    guard(|| {
        let c = handle(classifier, "classifier")?;
        Checkpoint::new(c.inner.clone()).save(Path::new(text(path, "path")?)).or_else(|e| fail(EfpStatus::Io, e))
    })
}

/// # Safety
/// `classifier` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn efp_classifier_free(classifier: *mut EfpClassifier) {
    if !classifier.is_null() {
        drop(Box::from_raw(classifier));
    }
}

/// Starts an empty trace.
///
/// # Safety
/// `instance_id` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn efp_trace_new(instance_id: *const c_char, out: *mut *mut EfpTrace) -> EfpStatus {
    guard(|| {
        let id = text(instance_id, "instance_id")?;
        put(out, EfpTrace { inner: EventTrace::new(id, Vec::new()) })
    })
}

fn event_of(kind: EfpEventKind, name: &str, timestamp_ms: i64, instance: &str) -> Event {
    let kind = match kind {
        EfpEventKind::Step => EventKind::IntrinsicStep,
        EfpEventKind::Context => EventKind::Context,
        EfpEventKind::Failure => EventKind::IntrinsicFailure,
    };
    Event::new(name, kind, timestamp_ms, instance)
}

unsafe fn fields(
    keys: *const *const c_char,
    values: *const f64,
    len: usize,
) -> Result<Vec<Field>, (EfpStatus, String)> {
    if len == 0 {
        return Ok(Vec::new());
    }
    if keys.is_null() || values.is_null() {
        return fail(EfpStatus::NullPointer, "keys or values is null");
    }
    let keys = std::slice::from_raw_parts(keys, len);
    let values = std::slice::from_raw_parts(values, len);
    keys.iter().zip(values).map(|(k, v)| Ok(Field::numeric(text(*k, "key")?, *v))).collect()
}

/// Appends an event with `len` numeric payload fields; `keys` and `values`
/// may be null when `len` is 0. Events are kept in timestamp order.
///
/// # Safety
/// `trace` must be a live handle, `name` a valid C string, and `keys` and
/// `values` must point to `len` elements.
#[no_mangle]
pub unsafe extern "C" fn efp_trace_push(
    trace: *mut EfpTrace,
    kind: EfpEventKind,
    name: *const c_char,
    timestamp_ms: i64,
    keys: *const *const c_char,
    values: *const f64,
    len: usize,
) -> EfpStatus {
    guard(|| {
        let t = handle_mut(trace, "trace")?;
        let event = event_of(kind, text(name, "name")?, timestamp_ms, &t.inner.instance_id)
            .with_payload(fields(keys, values, len)?);
        let mut events = std::mem::take(&mut t.inner.events);
        events.push(event);
        t.inner = EventTrace::new(t.inner.instance_id.clone(), events);
        Ok(())
    })
}

/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn efp_trace_len(trace: *const EfpTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.inner.events.len())
}

/// # Safety
/// `trace` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn efp_trace_free(trace: *mut EfpTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Probability that `trace` ends in failure. `limits` may be null for the
/// defaults.
///
/// # Safety
/// Handles must be live; `limits` null or valid; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn efp_failure_probability(
    trace: *const EfpTrace,
    classifier: *const EfpClassifier,
    model: *const EfpModel,
    limits: *const EfpLimits,
    out: *mut EfpEstimate,
) -> EfpStatus {
    guard(|| {
        let (t, c, m) = (handle(trace, "trace")?, handle(classifier, "classifier")?, handle(model, "model")?);
        let limits = limits_from(limits)?;
        let out = handle_mut(out, "out")?;
        let result = traverse(&t.inner, &c.inner, &m.inner, &limits).or_else(|e| fail(EfpStatus::Predict, e))?;
        let e = failure_probability(&result);
        *out = EfpEstimate { p_fail: e.p_fail, lower: e.lower, upper: e.upper };
        Ok(())
    })
}

/// Precision, recall and Matthews correlation of a confusion matrix.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn efp_metrics(tp: f64, fn_: f64, fp: f64, tn: f64, out: *mut EfpMetrics) -> EfpStatus {
    guard(|| {
        let out = handle_mut(out, "out")?;
        if [tp, fn_, fp, tn].iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return fail(EfpStatus::InvalidArgument, "counts must be finite and non-negative");
        }
        let m = metrics(&ConfusionMatrix::new(tp, fn_, fp, tn)).or_else(|e| fail(EfpStatus::InvalidArgument, e))?;
        *out = EfpMetrics { precision: m.precision, recall: m.recall, mcc: m.mcc };
        Ok(())
    })
}

/// Creates an engine around copies of `classifier` and `model`. When
/// `learn` is non-zero, completed instances train the engine's classifier.
///
/// # Safety
/// Handles must be live; `limits` null or valid; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn efp_engine_new(
    classifier: *const EfpClassifier,
    model: *const EfpModel,
    limits: *const EfpLimits,
    learn: i32,
    out: *mut *mut EfpEngine,
) -> EfpStatus {
    guard(|| {
        let (c, m) = (handle(classifier, "classifier")?, handle(model, "model")?);
        let options = RuntimeOptions { limits: limits_from(limits)?, learn: learn != 0, ..Default::default() };
        put(
            out,
            EfpEngine {
                bus: Arc::new(Bus::default()),
                classifier: Arc::new(RwLock::new(c.inner.clone())),
                model: Arc::clone(&m.inner),
                options,
                instances: HashMap::new(),
                pending: VecDeque::new(),
                last_instance: CString::default(),
            },
        )
    })
}

/// Publishes one event of `instance_id`, starting a prediction component
/// for the instance on first sight. Predictions become available through
/// [`efp_engine_poll`].
///
/// # Safety
/// `engine` must be a live handle, the strings valid, and `keys` and
/// `values` must point to `len` elements.
#[no_mangle]
pub unsafe extern "C" fn efp_engine_publish(
    engine: *mut EfpEngine,
    instance_id: *const c_char,
    kind: EfpEventKind,
    name: *const c_char,
    timestamp_ms: i64,
    keys: *const *const c_char,
    values: *const f64,
    len: usize,
) -> EfpStatus {
    guard(|| {
        let e = handle_mut(engine, "engine")?;
        let id = text(instance_id, "instance_id")?;
        let event = event_of(kind, text(name, "name")?, timestamp_ms, id).with_payload(fields(keys, values, len)?);
        if !e.instances.contains_key(id) {
            let efp = start_instance(&e.bus, id, Arc::clone(&e.classifier), Arc::clone(&e.model), e.options)
                .or_else(|err| fail(EfpStatus::InvalidArgument, err))?;
            e.instances.insert(id.to_owned(), efp);
        }
        e.bus.publish(event);
        let efp = e.instances.get_mut(id).expect("started above");
        e.pending.extend(efp.poll());
        if efp.closed().is_some() {
            e.instances.remove(id);
        }
        Ok(())
    })
}

/// Takes the oldest pending prediction. Returns `EFP_STATUS_EMPTY` when none
/// is pending, and `EFP_STATUS_PREDICT` for a failed prediction, whose
/// message is then available from [`efp_last_error`].
///
/// # Safety
/// `engine` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn efp_engine_poll(engine: *mut EfpEngine, out: *mut EfpPrediction) -> EfpStatus {
    guard(|| {
        let e = handle_mut(engine, "engine")?;
        let out = handle_mut(out, "out")?;
        let Some(message) = e.pending.pop_front() else {
            return fail(EfpStatus::Empty, "no pending prediction");
        };
        match message {
            PredictionMessage::Prediction(p) => {
                e.last_instance = CString::new(p.instance_id.replace('\0', " ")).unwrap_or_default();
                *out = EfpPrediction {
                    instance_id: e.last_instance.as_ptr(),
                    at_event_index: p.at_event_index,
                    p_fail: p.p_fail,
                    lower: p.lower,
                    upper: p.upper,
                    timestamp_ms: p.timestamp,
                };
                Ok(())
            }
            PredictionMessage::Error { instance_id, at_event_index, message } => {
                e.last_instance = CString::new(instance_id.replace('\0', " ")).unwrap_or_default();
                *out = EfpPrediction {
                    instance_id: e.last_instance.as_ptr(),
                    at_event_index,
                    p_fail: f64::NAN,
                    lower: f64::NAN,
                    upper: f64::NAN,
                    timestamp_ms: 0,
                };
                fail(EfpStatus::Predict, message)
            }
        }
    })
}

/// Number of instances that have not completed yet.
///
/// # Safety
/// `engine` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn efp_engine_running(engine: *const EfpEngine) -> usize {
    engine.as_ref().map_or(0, |e| e.instances.len())
}

/// # Safety
/// `engine` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn efp_engine_free(engine: *mut EfpEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}
