use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use efp_core::event::xes::write_xes;
use efp_core::event::{EventCatalog, EventKind, EventTrace};
use efp_core::model::mine_model;
use efp_core::predictor::{FrequencyConfig, FrequencyModel};
use efp_core::synthesis::{generate, inject_faults, CollaborationSpec, FaultPlan};
use efp_core::traversal::{failure_probability, traverse, TraversalLimits};
use efp_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(efp_last_error()) }.to_string_lossy().into_owned()
}

fn corpus() -> Vec<EventTrace> {
    let spec = CollaborationSpec::bundled("minimal").unwrap();
    inject_faults(&generate(&spec, 200).unwrap(), &FaultPlan::new(&spec, 0.5, 2).unwrap()).unwrap()
}

fn write_corpus(dir: &std::path::Path, traces: &[EventTrace]) -> CString {
    let path = dir.join("log.xes");
    write_xes(traces, std::fs::File::create(&path).unwrap()).unwrap();
    c(path.to_str().unwrap())
}

struct Handles {
    model: *mut EfpModel,
    classifier: *mut EfpClassifier,
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            efp_model_free(self.model);
            efp_classifier_free(self.classifier);
        }
    }
}

fn load(path: &CString) -> Handles {
    let mut h = Handles { model: ptr::null_mut(), classifier: ptr::null_mut() };
    unsafe {
        assert_eq!(efp_model_mine_xes(path.as_ptr(), &mut h.model), EfpStatus::Ok);
        assert_eq!(
            efp_classifier_train_xes(path.as_ptr(), EfpClassifierKind::Frequency, 0, &mut h.classifier),
            EfpStatus::Ok
        );
    }
    h
}

unsafe fn push_all(trace: *mut EfpTrace, events: &[efp_core::Event]) {
    for e in events {
        let kind = match e.kind {
            EventKind::IntrinsicStep => EfpEventKind::Step,
            EventKind::Context => EfpEventKind::Context,
            EventKind::IntrinsicFailure => EfpEventKind::Failure,
        };
        let keys: Vec<CString> = e.payload.iter().map(|f| c(&f.key)).collect();
        let key_ptrs: Vec<*const std::ffi::c_char> = keys.iter().map(|k| k.as_ptr()).collect();
        let values: Vec<f64> = e.payload.iter().map(|f| f.value.as_f64().unwrap_or(0.0)).collect();
        let name = c(&e.name);
        let status =
            efp_trace_push(trace, kind, name.as_ptr(), e.timestamp, key_ptrs.as_ptr(), values.as_ptr(), values.len());
        assert_eq!(status, EfpStatus::Ok);
    }
}

#[test]
fn metrics_of_a_matrix() {
    let mut m = EfpMetrics::default();
    unsafe {
        assert_eq!(efp_metrics(1051.14, 28.04, 153.76, 1917.95, &mut m), EfpStatus::Ok);
        assert!((m.mcc - 0.879).abs() < 1e-3);
        assert!((m.precision - 0.8724).abs() < 1e-4 && (m.recall - 0.9740).abs() < 1e-4);
        assert_eq!(efp_metrics(-1.0, 0.0, 0.0, 1.0, &mut m), EfpStatus::InvalidArgument);
        assert_eq!(efp_metrics(0.0, 0.0, 0.0, 0.0, &mut m), EfpStatus::InvalidArgument);
        assert_eq!(efp_metrics(1.0, 0.0, 0.0, 1.0, ptr::null_mut()), EfpStatus::NullPointer);
    }
    assert!(last_error().contains("null"));
}

#[test]
fn error_codes() {
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(efp_model_mine_xes(ptr::null(), &mut model), EfpStatus::NullPointer);
        assert_eq!(efp_model_mine_xes(c("/nonexistent/log.xes").as_ptr(), &mut model), EfpStatus::Io);
        assert!(last_error().contains("/nonexistent/log.xes"));
        assert_eq!(efp_model_parse(c("nonsense here").as_ptr(), &mut model), EfpStatus::Parse);
        assert!(model.is_null());
        let mut limits = efp_limits_default();
        assert_eq!((limits.max_depth, limits.max_breadth, limits.min_probability), (20, 5, 1e-4));
        limits.max_breadth = 0;
        let mut out = EfpEstimate::default();
        let status = efp_failure_probability(ptr::null(), ptr::null(), ptr::null(), &limits, &mut out);
        assert_eq!(status, EfpStatus::NullPointer);
        efp_model_free(ptr::null_mut());
        efp_trace_free(ptr::null_mut());
        efp_engine_free(ptr::null_mut());
        assert_eq!(efp_engine_running(ptr::null()), 0);
    }
    assert!(!unsafe { CStr::from_ptr(efp_version()) }.to_bytes().is_empty());
}

#[test]
fn estimate_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let traces = corpus();
    let path = write_corpus(dir.path(), &traces);
    let h = load(&path);

    let mut direct = FrequencyModel::new(EventCatalog::infer(&traces).unwrap(), FrequencyConfig::default());
    direct.train_batch(&traces).unwrap();
    let model = mine_model(&traces).unwrap();

    for t in traces.iter().take(20) {
        let prefix = EventTrace::new(t.instance_id.clone(), t.events[..t.events.len() / 2 + 1].to_vec());
        let want = failure_probability(&traverse(&prefix, &direct, &model, &TraversalLimits::default()).unwrap());
        let mut trace = ptr::null_mut();
        let mut got = EfpEstimate::default();
        unsafe {
            assert_eq!(efp_trace_new(c(&t.instance_id).as_ptr(), &mut trace), EfpStatus::Ok);
            push_all(trace, &prefix.events);
            assert_eq!(efp_trace_len(trace), prefix.events.len());
            assert_eq!(efp_failure_probability(trace, h.classifier, h.model, ptr::null(), &mut got), EfpStatus::Ok);
            efp_trace_free(trace);
        }
        assert_eq!((got.p_fail, got.lower, got.upper), (want.p_fail, want.lower, want.upper));
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let traces = corpus();
    let path = write_corpus(dir.path(), &traces);
    let h = load(&path);
    let ckpt = c(dir.path().join("clf.json").to_str().unwrap());
    let mut loaded = ptr::null_mut();
    unsafe {
        assert_eq!(efp_classifier_save(h.classifier, ckpt.as_ptr()), EfpStatus::Ok);
        assert_eq!(efp_classifier_load(ckpt.as_ptr(), &mut loaded), EfpStatus::Ok);
        let mut trace = ptr::null_mut();
        efp_trace_new(c("x").as_ptr(), &mut trace);
        push_all(trace, &traces[1].events[..2]);
        let (mut a, mut b) = (EfpEstimate::default(), EfpEstimate::default());
        assert_eq!(efp_failure_probability(trace, h.classifier, h.model, ptr::null(), &mut a), EfpStatus::Ok);
        assert_eq!(efp_failure_probability(trace, loaded, h.model, ptr::null(), &mut b), EfpStatus::Ok);
        assert_eq!(a, b);
        efp_trace_free(trace);
        efp_classifier_free(loaded);
    }
}

#[test]
fn engine_streams_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let traces = corpus();
    let path = write_corpus(dir.path(), &traces);
    let h = load(&path);
    let failing = traces.iter().find(|t| t.fault.is_some()).unwrap();
    let mut engine = ptr::null_mut();
    let mut seen = Vec::new();
    unsafe {
        assert_eq!(efp_engine_new(h.classifier, h.model, ptr::null(), 0, &mut engine), EfpStatus::Ok);
        let id = c(&failing.instance_id);
        for e in &failing.events {
            let kind = if e.kind == EventKind::IntrinsicFailure {
                EfpEventKind::Failure
            } else if e.kind == EventKind::Context {
                EfpEventKind::Context
            } else {
                EfpEventKind::Step
            };
            let status = efp_engine_publish(
                engine,
                id.as_ptr(),
                kind,
                c(&e.name).as_ptr(),
                e.timestamp,
                ptr::null(),
                ptr::null(),
                0,
            );
            assert_eq!(status, EfpStatus::Ok);
            if kind == EfpEventKind::Step {
                assert_eq!(efp_engine_running(engine), 1);
            }
        }
        assert_eq!(efp_engine_running(engine), 0);
        let mut p = EfpPrediction {
            instance_id: ptr::null(),
            at_event_index: 0,
            p_fail: 0.0,
            lower: 0.0,
            upper: 0.0,
            timestamp_ms: 0,
        };
        loop {
            match efp_engine_poll(engine, &mut p) {
                EfpStatus::Ok => {
                    assert_eq!(CStr::from_ptr(p.instance_id).to_str().unwrap(), failing.instance_id);
                    assert!((0.0..=1.0).contains(&p.p_fail) && p.lower <= p.upper);
                    seen.push(p.p_fail);
                }
                EfpStatus::Empty => break,
                other => panic!("{other:?}: {}", last_error()),
            }
        }
        efp_engine_free(engine);
    }
    assert!(!seen.is_empty());
    assert!(*seen.last().unwrap() >= 0.5, "{seen:?}");
}

#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"efp.h\"\n\
         int main(void) {\n\
           EfpMetrics m;\n\
           EfpLimits l = efp_limits_default();\n\
           EfpStatus s = efp_metrics(1.0, 0.0, 0.0, 1.0, &m);\n\
           return (int)s + (int)l.max_depth;\n\
         }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include])
        .arg(&src)
        .output()
        .expect("a C compiler is required");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
