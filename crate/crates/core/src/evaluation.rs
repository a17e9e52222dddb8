//! Cross-validated evaluation of the prediction pipeline.
//!
//! Each held-out trace is cut at its evaluation point and classified by
//! thresholding the traversal's failure probability. Results are reported
//! both as per-fold metric means and as metrics of the pooled matrix, since
//! the two generally differ.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{filter_visibility, EventCatalog, EventKind, EventTrace, Outcome, Scenario};
use crate::model::mine_model;
use crate::predictor::{
    AnyClassifier, ClassifierKind, FrequencyConfig, FrequencyModel, RecurrentConfig, RecurrentModel,
};
use crate::synthesis::{inject_faults, CollaborationSpec, FaultPlan};
use crate::traversal::{failure_probability, traverse, verdict, TraversalLimits, Verdict, DEFAULT_THRESHOLD};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

/// Cells are reals so that matrices can be averaged across folds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: f64,
    pub tn: f64,
    pub fp: f64,
    pub fn_: f64,
}

impl ConfusionMatrix {
    pub fn new(tp: f64, fn_: f64, fp: f64, tn: f64) -> Self {
        ConfusionMatrix { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> f64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Records one decision; failure is the positive class.
    pub fn record(&mut self, actual_fail: bool, predicted_fail: bool) {
        match (actual_fail, predicted_fail) {
            (true, true) => self.tp += 1.0,
            (true, false) => self.fn_ += 1.0,
            (false, true) => self.fp += 1.0,
            (false, false) => self.tn += 1.0,
        }
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub mcc: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Precision, recall and Matthews correlation. A zero denominator makes the
/// affected metric 0.
pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics, EvalError> {
    let total = cm.total();
    if total.is_nan() || total <= 0.0 {
        return Err(EvalError::EmptyMatrix);
    }
    let ConfusionMatrix { tp, tn, fp, fn_ } = *cm;
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    let mcc = if den > 0.0 { ((tp * tn - fp * fn_) / den.sqrt()).clamp(-1.0, 1.0) } else { 0.0 };
    Ok(Metrics { precision: ratio(tp, tp + fp), recall: ratio(tp, tp + fn_), mcc })
}

/// Number of leading events of `trace` seen by the classifier when it is
/// evaluated.
///
/// With a recorded fault this is everything up to and including the error's
/// manifestation; otherwise the trace is cut after its median step. The cut
/// is extended to the first step if needed and never reaches the failure
/// event. `None` when no step precedes the failure.
pub fn evaluation_point(trace: &EventTrace) -> Option<usize> {
    let failure = trace.events.iter().position(|e| e.kind == EventKind::IntrinsicFailure);
    let end = failure.unwrap_or(trace.events.len());
    let steps: Vec<usize> = (0..end).filter(|&i| trace.events[i].kind == EventKind::IntrinsicStep).collect();
    let first = *steps.first()?;
    let len = match &trace.fault {
        Some(fault) => trace.events.iter().take_while(|e| e.timestamp <= fault.error_time).count(),
        None => steps[(steps.len() - 1) / 2] + 1,
    };
    Some(len.max(first + 1).min(end))
}

/// Intrinsic steps between the evaluation point and the failure event.
fn lead_time(trace: &EventTrace, point: usize) -> Option<f64> {
    let failure = trace.events.iter().position(|e| e.kind == EventKind::IntrinsicFailure)?;
    let steps = trace.events[point..=failure].iter().filter(|e| e.is_intrinsic()).count();
    Some(steps as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k: usize,
    pub seed: u64,
    pub threshold: f64,
    pub limits: TraversalLimits,
    pub classifier: ClassifierKind,
    pub frequency: FrequencyConfig,
    pub recurrent: RecurrentConfig,
    pub recurrent_epochs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 10,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            limits: TraversalLimits::default(),
            classifier: ClassifierKind::Frequency,
            frequency: FrequencyConfig::default(),
            recurrent: RecurrentConfig::default(),
            recurrent_epochs: 3,
        }
    }
}

/// Trains a classifier of the configured kind.
pub fn train_classifier(
    catalog: &EventCatalog,
    train: &[EventTrace],
    config: &EvalConfig,
) -> Result<AnyClassifier, crate::Error> {
    Ok(match config.classifier {
        ClassifierKind::Frequency => {
            let mut m = FrequencyModel::new(catalog.clone(), config.frequency);
            m.train_batch(train)?;
            AnyClassifier::Frequency(m)
        }
        ClassifierKind::Recurrent => {
            let mut m = RecurrentModel::new(catalog.clone(), RecurrentConfig { seed: config.seed, ..config.recurrent });
            m.train_batch(train, config.recurrent_epochs)?;
            AnyClassifier::Recurrent(m)
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub matrix: ConfusionMatrix,
    pub metrics: Metrics,
    /// Test traces that could not be classified, such as traces in a state the
    /// mined model has never seen.
    pub errors: usize,
    pub lead_time_sum: f64,
    pub lead_time_count: usize,
}

/// Trains on `train` and classifies every trace of `test`. The catalog is
/// taken from both sets so that the encoding covers every event type.
pub fn evaluate_split(
    train: &[EventTrace],
    test: &[EventTrace],
    config: &EvalConfig,
) -> Result<FoldResult, crate::Error> {
    let all: Vec<EventTrace> = train.iter().chain(test).cloned().collect();
    let catalog = EventCatalog::infer(&all)?;
    let model = mine_model(train)?;
    let classifier = train_classifier(&catalog, train, config)?;
    let mut matrix = ConfusionMatrix::default();
    let mut errors = 0;
    let (mut lead_time_sum, mut lead_time_count) = (0.0, 0);
    for trace in test {
        let actual_fail = trace.effective_outcome() == Some(Outcome::Fail);
        let Some(point) = evaluation_point(trace) else {
            // Nothing observable happens before the failure: a miss.
            if actual_fail {
                matrix.record(true, false);
            } else {
                errors += 1;
            }
            continue;
        };
        let prefix = EventTrace { events: trace.events[..point].to_vec(), ..trace.clone() };
        let result = match traverse(&prefix, &classifier, &model, &config.limits) {
            Ok(r) => r,
            Err(_) => {
                errors += 1;
                continue;
            }
        };
        let predicted_fail = verdict(&failure_probability(&result), config.threshold) == Verdict::PredictFail;
        matrix.record(actual_fail, predicted_fail);
        if actual_fail && predicted_fail {
            if let Some(lead) = lead_time(trace, point) {
                lead_time_sum += lead;
                lead_time_count += 1;
            }
        }
    }
    let metrics =
        metrics(&matrix).map_err(|_| EvalError::InsufficientData("no test trace could be classified".into()))?;
    Ok(FoldResult { matrix, metrics, errors, lead_time_sum, lead_time_count })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub folds: Vec<FoldResult>,
    /// Folds whose test part held a single class, with the reason.
    pub skipped_folds: Vec<(usize, String)>,
    pub mean: Metrics,
    /// Sample standard deviation over folds.
    pub sd: Metrics,
    pub pooled: ConfusionMatrix,
    pub pooled_metrics: Metrics,
    pub mean_lead_time: Option<f64>,
}

impl MetricReport {
    fn from_folds(folds: Vec<FoldResult>, skipped_folds: Vec<(usize, String)>) -> Result<Self, EvalError> {
        if folds.is_empty() {
            return Err(EvalError::InsufficientData("every fold was skipped".into()));
        }
        let n = folds.len() as f64;
        let pick = |f: fn(&Metrics) -> f64| folds.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>();
        let stats = |xs: Vec<f64>| {
            let mean = xs.iter().sum::<f64>() / n;
            let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            (mean, var.sqrt())
        };
        let (p, psd) = stats(pick(|m| m.precision));
        let (r, rsd) = stats(pick(|m| m.recall));
        let (c, csd) = stats(pick(|m| m.mcc));
        let mut pooled = ConfusionMatrix::default();
        folds.iter().for_each(|f| pooled.add(&f.matrix));
        let lead_count: usize = folds.iter().map(|f| f.lead_time_count).sum();
        let lead_sum: f64 = folds.iter().map(|f| f.lead_time_sum).sum();
        Ok(MetricReport {
            pooled_metrics: metrics(&pooled)?,
            pooled,
            mean: Metrics { precision: p, recall: r, mcc: c },
            sd: Metrics { precision: psd, recall: rsd, mcc: csd },
            mean_lead_time: (lead_count > 0).then(|| lead_sum / lead_count as f64),
            folds,
            skipped_folds,
        })
    }
}

/// Fold index ranges of a seeded shuffle of `n` items.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (0..k).map(|f| order[f * n / k..(f + 1) * n / k].to_vec()).collect()
}

/// k-fold cross validation; folds run in parallel.
pub fn cross_validate(traces: &[EventTrace], config: &EvalConfig) -> Result<MetricReport, crate::Error> {
    let k = config.k;
    if k < 2 || traces.len() < k {
        return Err(
            EvalError::InsufficientData(format!("{} traces cannot be split into {k} folds", traces.len())).into()
        );
    }
    let is_fail = |t: &EventTrace| t.effective_outcome() == Some(Outcome::Fail);
    if traces.iter().all(is_fail) || !traces.iter().any(is_fail) {
        return Err(EvalError::InsufficientData("both outcomes must be present".into()).into());
    }
    let folds = fold_assignment(traces.len(), k, config.seed);
    let results: Vec<Result<Option<FoldResult>, crate::Error>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..k)
            .map(|f| {
                let folds = &folds;
                scope.spawn(move || {
                    let test: Vec<EventTrace> = folds[f].iter().map(|&i| traces[i].clone()).collect();
                    if test.iter().all(is_fail) || !test.iter().any(is_fail) {
                        return Ok(None);
                    }
                    let train: Vec<EventTrace> =
                        (0..k).filter(|&g| g != f).flat_map(|g| folds[g].iter().map(|&i| traces[i].clone())).collect();
                    evaluate_split(&train, &test, config).map(Some)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("fold worker panicked")).collect()
    });
    let mut done = Vec::new();
    let mut skipped = Vec::new();
    for (f, r) in results.into_iter().enumerate() {
        match r? {
            Some(fold) => done.push(fold),
            None => skipped.push((f, "test fold holds a single class".to_owned())),
        }
    }
    Ok(MetricReport::from_folds(done, skipped)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rate: f64,
    pub scenario: String,
    pub report: MetricReport,
}

/// Cross-validates every (fault rate, scenario) pair. Faults are injected
/// into `clean` once per rate, then the result is filtered per scenario.
pub fn sweep(
    spec: &CollaborationSpec,
    clean: &[EventTrace],
    rates: &[f64],
    scenarios: &[Scenario],
    config: &EvalConfig,
) -> Result<Vec<SweepRow>, crate::Error> {
    let mut rows = Vec::new();
    for (r, &rate) in rates.iter().enumerate() {
        let plan = FaultPlan::new(spec, rate, config.seed.wrapping_add(1 + r as u64))?;
        rows.extend(evaluate_scenarios(&inject_faults(clean, &plan)?, rate, scenarios, config)?);
    }
    Ok(rows)
}

/// Cross-validates an already labeled corpus under each scenario; `rate` is
/// only recorded in the rows.
pub fn evaluate_scenarios(
    traces: &[EventTrace],
    rate: f64,
    scenarios: &[Scenario],
    config: &EvalConfig,
) -> Result<Vec<SweepRow>, crate::Error> {
    scenarios
        .iter()
        .map(|scenario| {
            let view = filter_visibility(traces, scenario)?;
            Ok(SweepRow { rate, scenario: scenario.to_string(), report: cross_validate(&view, config)? })
        })
        .collect()
}

/// Fraction of traces labeled `Fail`.
pub fn failure_fraction(traces: &[EventTrace]) -> f64 {
    let fails = traces.iter().filter(|t| t.effective_outcome() == Some(Outcome::Fail)).count();
    ratio(fails as f64, traces.len() as f64)
}

fn metric_columns(m: &Metrics) -> [(&'static str, f64); 3] {
    [("precision", m.precision), ("recall", m.recall), ("mcc", m.mcc)]
}

/// `rate scenario metric mean sd pooled`, tab-separated.
pub fn results_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("rate\tscenario\tmetric\tmean\tsd\tpooled\n");
    for row in rows {
        let means = metric_columns(&row.report.mean);
        let sds = metric_columns(&row.report.sd);
        let pooled = metric_columns(&row.report.pooled_metrics);
        for i in 0..3 {
            let _ = writeln!(
                out,
                "{:.2}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}",
                row.rate, row.scenario, means[i].0, means[i].1, sds[i].1, pooled[i].1
            );
        }
    }
    out
}

/// One file per metric: fault rate, then a mean and error-bar column per
/// scenario.
pub fn plot_files(rows: &[SweepRow]) -> Vec<(String, String)> {
    let mut scenarios: Vec<&str> = Vec::new();
    let mut rates: Vec<f64> = Vec::new();
    for row in rows {
        if !scenarios.contains(&row.scenario.as_str()) {
            scenarios.push(&row.scenario);
        }
        if !rates.contains(&row.rate) {
            rates.push(row.rate);
        }
    }
    (0..3)
        .map(|i| {
            let name = metric_columns(&Metrics::default())[i].0;
            let mut out = String::from("rate");
            for s in &scenarios {
                let _ = write!(out, "\t{s}\t{s}_sd");
            }
            out.push('\n');
            for rate in &rates {
                let _ = write!(out, "{rate:.2}");
                for s in &scenarios {
                    match rows.iter().find(|r| r.rate == *rate && r.scenario == *s) {
                        Some(r) => {
                            let _ = write!(
                                out,
                                "\t{:.4}\t{:.4}",
                                metric_columns(&r.report.mean)[i].1,
                                metric_columns(&r.report.sd)[i].1
                            );
                        }
                        None => out.push_str("\tNA\tNA"),
                    }
                }
                out.push('\n');
            }
            (format!("{name}.tsv"), out)
        })
        .collect()
}

/// Classifies with an oracle that always knows the outcome; used to check
/// the harness itself.
#[doc(hidden)]
pub fn oracle_report(traces: &[EventTrace], k: usize, seed: u64) -> Result<MetricReport, EvalError> {
    let folds = fold_assignment(traces.len(), k, seed);
    let results = folds
        .iter()
        .map(|idx| {
            let mut matrix = ConfusionMatrix::default();
            for &i in idx {
                let fail = traces[i].effective_outcome() == Some(Outcome::Fail);
                matrix.record(fail, fail);
            }
            Ok(FoldResult { metrics: metrics(&matrix)?, matrix, errors: 0, lead_time_sum: 0.0, lead_time_count: 0 })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    MetricReport::from_folds(results, Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Event, FaultRecord, FaultType};
    use crate::synthesis::generate;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn published_matrix() {
        let m = metrics(&ConfusionMatrix::new(1051.14, 28.04, 153.76, 1917.95)).unwrap();
        // Hand computation: 1051.14 / 1204.90 and 1051.14 / 1079.18.
        assert!(close(m.precision, 0.872388, 1e-6));
        assert!(close(m.recall, 0.974017, 1e-6));
        assert!(close(m.mcc, 0.879, 1e-3));
    }

    #[test]
    fn degenerate_matrices() {
        let perfect = metrics(&ConfusionMatrix::new(1.0, 0.0, 0.0, 1.0)).unwrap();
        assert_eq!(perfect, Metrics { precision: 1.0, recall: 1.0, mcc: 1.0 });
        let blind = metrics(&ConfusionMatrix::new(0.0, 5.0, 0.0, 5.0)).unwrap();
        assert_eq!(blind, Metrics { precision: 0.0, recall: 0.0, mcc: 0.0 });
        assert_eq!(metrics(&ConfusionMatrix::default()), Err(EvalError::EmptyMatrix));
    }

    #[test]
    fn folds_partition_evenly() {
        let folds = fold_assignment(3150, 10, 7);
        assert!(folds.iter().all(|f| f.len() == 315));
        let folds = fold_assignment(3151, 10, 7);
        assert!(folds.iter().all(|f| (315..=316).contains(&f.len())));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..3151).collect::<Vec<_>>());
        assert_eq!(fold_assignment(100, 5, 1), fold_assignment(100, 5, 1));
    }

    #[test]
    fn evaluation_point_rules() {
        let ev = |names: &[&str]| -> Vec<Event> {
            names
                .iter()
                .enumerate()
                .map(|(i, n)| {
                    if n.starts_with('c') {
                        Event::context(*n, i as i64, "x")
                    } else {
                        Event::step(*n, i as i64, "x")
                    }
                })
                .collect()
        };
        let end = EventTrace::new("x", ev(&["A", "c1", "B", "C", "D"])).with_outcome(Outcome::End);
        // Intrinsic at 0, 2, 3, 4: median is the second one.
        assert_eq!(evaluation_point(&end), Some(3));
        let mut fail = EventTrace::new("x", ev(&["A", "B", "c1", "C"])).with_outcome(Outcome::Fail);
        fail.fault = Some(FaultRecord { fault_type: FaultType::EventIndicated, error_time: 2 });
        assert_eq!(evaluation_point(&fail), Some(3));
        let mut early = EventTrace::new("x", ev(&["c0", "A", "B"])).with_outcome(Outcome::Fail);
        early.fault = Some(FaultRecord { fault_type: FaultType::EventIndicated, error_time: 0 });
        assert_eq!(evaluation_point(&early), Some(2));
        assert_eq!(evaluation_point(&EventTrace::new("x", ev(&["c0"]))), None);
        let mut unseen = EventTrace::new("x", ev(&["c0", "c1"])).with_outcome(Outcome::Fail);
        unseen.events.push(Event::failure("failure", 5, "x"));
        unseen.fault = Some(FaultRecord { fault_type: FaultType::StepIndicated, error_time: 1 });
        assert_eq!(evaluation_point(&unseen), None);
        let mut late = EventTrace::new("x", ev(&["A", "c1"])).with_outcome(Outcome::Fail);
        late.events.push(Event::failure("failure", 5, "x"));
        late.fault = Some(FaultRecord { fault_type: FaultType::StepIndicated, error_time: 9 });
        assert_eq!(evaluation_point(&late), Some(2));
    }

    #[test]
    fn oracle_classifier_is_perfect() {
        let spec = CollaborationSpec::bundled("minimal").unwrap();
        let traces = inject_faults(&generate(&spec, 200).unwrap(), &FaultPlan::new(&spec, 0.5, 3).unwrap()).unwrap();
        let report = oracle_report(&traces, 10, 1).unwrap();
        assert_eq!(report.mean, Metrics { precision: 1.0, recall: 1.0, mcc: 1.0 });
    }

    #[test]
    fn cross_validation_is_deterministic_and_consistent() {
        let spec = CollaborationSpec::bundled("minimal").unwrap();
        let traces = inject_faults(&generate(&spec, 300).unwrap(), &FaultPlan::new(&spec, 0.5, 3).unwrap()).unwrap();
        let config = EvalConfig { k: 5, ..Default::default() };
        let a = cross_validate(&traces, &config).unwrap();
        let b = cross_validate(&traces, &config).unwrap();
        assert_eq!(a, b);
        for (fold, idx) in a.folds.iter().zip(fold_assignment(300, 5, 0)) {
            assert_eq!(fold.matrix.total() as usize + fold.errors, idx.len());
        }
        assert!(a.mean.mcc > 0.8, "{:?}", a.mean);
    }

    #[test]
    fn insufficient_data() {
        let spec = CollaborationSpec::bundled("minimal").unwrap();
        let clean = generate(&spec, 20).unwrap();
        assert!(cross_validate(&clean, &EvalConfig { k: 5, ..Default::default() }).is_err());
        assert!(cross_validate(&clean[..3], &EvalConfig { k: 5, ..Default::default() }).is_err());
    }

    #[test]
    fn table_and_plot_layout() {
        let spec = CollaborationSpec::bundled("minimal").unwrap();
        let config = EvalConfig { k: 3, ..Default::default() };
        let clean = generate(&spec, 90).unwrap();
        let rows = sweep(&spec, &clean, &[0.5], &[Scenario::Global, Scenario::NoContextGlobal], &config).unwrap();
        assert_eq!(rows.len(), 2);
        let table = results_table(&rows);
        assert_eq!(table.lines().count(), 1 + 2 * 3);
        let plots = plot_files(&rows);
        assert_eq!(plots.len(), 3);
        assert_eq!(plots[2].0, "mcc.tsv");
        assert!(plots[2].1.starts_with("rate\tglobal\tglobal_sd\tnocontext\tnocontext_sd\n0.50\t"));
    }
}
