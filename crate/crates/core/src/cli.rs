//! The `efp` command line.
//!
//! Subcommands communicate through files: XES logs, model text files, JSON
//! checkpoints and tab-separated tables. Each one is deterministic given its
//! arguments, and randomized subcommands echo their effective seed on the
//! first line of standard output.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use parking_lot::RwLock;

use crate::evaluation::{
    evaluate_scenarios, failure_fraction, metrics, plot_files, results_table, sweep, ConfusionMatrix, EvalConfig,
    EvalError, SweepRow,
};
use crate::event::xes::{read_xes_file, write_xes};
use crate::event::{filter_visibility, EventCatalog, EventError, EventKind, EventTrace, FaultType, Scenario};
use crate::model::{mine_model, ModelError, ProcessModel};
use crate::predictor::{Checkpoint, ClassifierKind, FrequencyConfig, RecurrentConfig};
use crate::runtime::{replay, PredictionMessage, RuntimeOptions};
use crate::synthesis::{generate, inject_faults, CollaborationSpec, FaultPlan, SynthesisError};
use crate::traversal::{TraversalLimits, DEFAULT_THRESHOLD};
use crate::Error;

#[derive(Debug, Parser)]
#[command(name = "efp", version, about = "Event-based failure prediction for collaborative processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate fault-free runs of a collaboration spec and write them as XES.
    Simulate(SimulateArgs),
    /// Inject faults into a log.
    Inject(InjectArgs),
    /// Mine a process model from a log.
    Mine(MineArgs),
    /// Train a next-step classifier and save it as a checkpoint.
    Train(TrainArgs),
    /// Replay a log event by event and write the prediction stream.
    Run(RunArgs),
    /// Cross-validate the prediction pipeline, or score a confusion matrix.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Random seed; falls back to EFP_SEED, then to the command's default.
    #[arg(long, env = "EFP_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct LimitArgs {
    /// Longest predicted suffix.
    #[arg(long, default_value_t = 20)]
    pub max_depth: usize,
    /// Most successors expanded per traversal node.
    #[arg(long, default_value_t = 5)]
    pub max_breadth: usize,
    /// Branches below this probability are pruned.
    #[arg(long, default_value = "1e-4")]
    pub min_probability: f64,
    /// Failure is predicted when p_fail reaches this value.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

impl LimitArgs {
    fn limits(&self) -> Result<TraversalLimits, CliError> {
        let limits = TraversalLimits {
            max_depth: self.max_depth,
            max_breadth: self.max_breadth,
            min_probability: self.min_probability,
        };
        limits.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(CliError::Usage(format!("--threshold {} must lie in (0, 1)", self.threshold)));
        }
        Ok(limits)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Bundled spec name (default, minimal, early-warning) or TOML path.
    #[arg(long, default_value = "default")]
    pub spec: String,
    /// Number of process instances.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Defaults to the spec's own seed.
    #[command(flatten)]
    pub seed: SeedArg,
    /// Output XES file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    /// Input XES log, as written by `simulate`.
    pub input: PathBuf,
    /// Spec that produced the log; it declares the possible faults.
    #[arg(long, default_value = "default")]
    pub spec: String,
    /// Per-trace injection probability.
    #[arg(long)]
    pub rate: f64,
    /// Restrict injection to one fault type (step, event, data).
    #[arg(long)]
    pub fault_type: Option<FaultType>,
    /// Defaults to 0.
    #[command(flatten)]
    pub seed: SeedArg,
    /// Output XES file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    /// Input XES log.
    pub input: PathBuf,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labeled input XES log.
    pub input: PathBuf,
    /// frequency or recurrent.
    #[arg(long, default_value = "frequency")]
    pub classifier: ClassifierKind,
    /// Visibility scenario applied to the log before training.
    #[arg(long, default_value = "global")]
    pub scenario: Scenario,
    /// Passes over the log (recurrent classifier).
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    /// Hidden units (recurrent classifier).
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    /// Context window in events (frequency classifier).
    #[arg(long, default_value_t = 3)]
    pub window: usize,
    /// Defaults to 0.
    #[command(flatten)]
    pub seed: SeedArg,
    /// Output checkpoint file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// XES log to replay.
    pub input: PathBuf,
    /// Model file written by `mine`.
    #[arg(long)]
    pub model: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Visibility scenario applied to the log before replay.
    #[arg(long, default_value = "global")]
    pub scenario: Scenario,
    #[command(flatten)]
    pub limits: LimitArgs,
    /// Outcome paths kept per prediction.
    #[arg(long, default_value_t = 3)]
    pub top_paths: usize,
    /// Do not train the classifier on instances as they complete.
    #[arg(long)]
    pub no_learn: bool,
    /// Output prediction stream, one tab-separated line per prediction.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Input XES log; when absent, `--n` instances of `--spec` are simulated.
    pub input: Option<PathBuf>,
    /// Score a confusion matrix given as TP,FN,FP,TN and exit.
    #[arg(long, value_name = "TP,FN,FP,TN", conflicts_with = "input")]
    pub from_matrix: Option<String>,
    /// Spec used for simulation and fault injection.
    #[arg(long, default_value = "default")]
    pub spec: String,
    /// Instances to simulate when no log is given.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Fault rates to sweep. Without it the log is evaluated as labeled.
    #[arg(long, value_delimiter = ',')]
    pub rates: Vec<f64>,
    /// Scenarios: global, local:<partner>, nocontext, nocontext-local:<partner>.
    #[arg(long, value_delimiter = ',', default_value = "global")]
    pub scenario: Vec<Scenario>,
    /// Number of folds.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// frequency or recurrent.
    #[arg(long, default_value = "frequency")]
    pub classifier: ClassifierKind,
    #[command(flatten)]
    pub limits: LimitArgs,
    /// Defaults to the spec's seed when simulating, otherwise 0.
    #[command(flatten)]
    pub seed: SeedArg,
    /// Directory for results.tsv and one plot table per metric.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments or configuration; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Anything that went wrong while running; exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let usage = matches!(
            e,
            Error::Synthesis(
                SynthesisError::InvalidSpec(_)
                    | SynthesisError::DisconnectedSpec(_)
                    | SynthesisError::InvalidPlan(_)
                    | SynthesisError::NoInstances
            ) | Error::Model(ModelError::EmptyLog | ModelError::Syntax { .. } | ModelError::MissingInitial)
                | Error::Traversal(_)
                | Error::Event(EventError::UnknownPartner(_) | EventError::InvalidValue { .. })
                | Error::Eval(EvalError::InsufficientData(_))
        );
        if usage {
            CliError::Usage(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

fn runtime(context: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", context.display()))
}

fn read_log(path: &Path) -> Result<Vec<EventTrace>, CliError> {
    Ok(read_xes_file(path).map_err(|e| runtime(path, e))?.traces)
}

fn write_log(path: &Path, traces: &[EventTrace]) -> Result<(), CliError> {
    let file = std::fs::File::create(path).map_err(|e| runtime(path, e))?;
    write_xes(traces, std::io::BufWriter::new(file)).map_err(|e| runtime(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| runtime(path, e))
}

fn load_spec(name: &str) -> Result<CollaborationSpec, CliError> {
    CollaborationSpec::load(name).map_err(|e| CliError::Usage(e.to_string()))
}

/// Runs `cli` and returns what it prints on standard output.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Inject(a) => inject(a),
        Command::Mine(a) => mine(a),
        Command::Train(a) => train(a),
        Command::Run(a) => run(a),
        Command::Evaluate(a) => evaluate(a),
    }
}

fn simulate(a: &SimulateArgs) -> Result<String, CliError> {
    let mut spec = load_spec(&a.spec)?;
    spec.seed = a.seed.seed.unwrap_or(spec.seed);
    let traces = generate(&spec, a.n as usize).map_err(Error::from)?;
    write_log(&a.out, &traces)?;
    Ok(format!("seed {}\ntraces {}\n", spec.seed, traces.len()))
}

fn inject(a: &InjectArgs) -> Result<String, CliError> {
    let spec = load_spec(&a.spec)?;
    let seed = a.seed.seed.unwrap_or(0);
    let plan = match a.fault_type {
        Some(t) => FaultPlan::only(&spec, t, a.rate, seed),
        None => FaultPlan::new(&spec, a.rate, seed),
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let traces = read_log(&a.input)?;
    let injected = inject_faults(&traces, &plan).map_err(Error::from)?;
    write_log(&a.out, &injected)?;
    let mut out = format!("seed {seed}\ntraces {}\n", injected.len());
    for t in FaultType::ALL {
        let count = injected.iter().filter(|tr| tr.fault.as_ref().is_some_and(|f| f.fault_type == t)).count();
        let _ = writeln!(out, "{} faults {count}", t.as_str());
    }
    let _ = writeln!(out, "failure fraction {:.4}", failure_fraction(&injected));
    Ok(out)
}

fn mine(a: &MineArgs) -> Result<String, CliError> {
    let model = mine_model(&read_log(&a.input)?).map_err(Error::from)?;
    write_file(&a.out, &model.to_text())?;
    Ok(format!("states {}\nedges {}\nfinals {}\n", model.states().len(), model.edges().len(), model.finals().len()))
}

fn train(a: &TrainArgs) -> Result<String, CliError> {
    let seed = a.seed.seed.unwrap_or(0);
    let traces = filter_visibility(&read_log(&a.input)?, &a.scenario).map_err(Error::from)?;
    let catalog = EventCatalog::infer(&traces).map_err(Error::from)?;
    let config = EvalConfig {
        seed,
        classifier: a.classifier,
        frequency: FrequencyConfig { window: a.window, ..Default::default() },
        recurrent: RecurrentConfig { hidden: a.hidden, ..Default::default() },
        recurrent_epochs: a.epochs,
        ..Default::default()
    };
    let classifier = crate::evaluation::train_classifier(&catalog, &traces, &config)?;
    Checkpoint::new(classifier).save(&a.out).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(format!("seed {seed}\nclassifier {}\ntraces {}\n", a.classifier, traces.len()))
}

fn run(a: &RunArgs) -> Result<String, CliError> {
    let limits = a.limits.limits()?;
    let model_text = std::fs::read_to_string(&a.model).map_err(|e| runtime(&a.model, e))?;
    let model = ProcessModel::parse(&model_text).map_err(|e| CliError::Usage(format!("{}: {e}", a.model.display())))?;
    let checkpoint = Checkpoint::load(&a.checkpoint, None)
        .map_err(|e| CliError::Usage(format!("{}: {e}", a.checkpoint.display())))?;
    let traces = filter_visibility(&read_log(&a.input)?, &a.scenario).map_err(Error::from)?;
    let options = RuntimeOptions { limits, learn: !a.no_learn, top_paths: a.top_paths };
    let stream = replay(&traces, Arc::new(RwLock::new(checkpoint.classifier)), Arc::new(model), options);

    let mut lines = String::from("instance\tindex\tp_fail\tlower\tupper\n");
    for message in &stream {
        match message {
            PredictionMessage::Prediction(p) => {
                let _ = writeln!(lines, "{p}");
            }
            PredictionMessage::Error { instance_id, at_event_index, message } => {
                let _ = writeln!(lines, "{instance_id}\t{at_event_index}\terror\t{message}");
            }
        }
    }
    write_file(&a.out, &lines)?;
    Ok(run_summary(&traces, &stream, a.limits.threshold))
}

/// Alarm counts and lead times, in events, of the first alarm before each
/// failure.
fn run_summary(traces: &[EventTrace], stream: &[PredictionMessage], threshold: f64) -> String {
    let (mut failing, mut detected, mut false_alarms, mut errors) = (0, 0, 0, 0);
    let mut leads = Vec::new();
    for trace in traces {
        let messages = stream.iter().filter(|m| match m {
            PredictionMessage::Prediction(p) => p.instance_id == trace.instance_id,
            PredictionMessage::Error { instance_id, .. } => *instance_id == trace.instance_id,
        });
        let mut first_alarm = None;
        for m in messages {
            match m {
                PredictionMessage::Prediction(p) if p.p_fail >= threshold && first_alarm.is_none() => {
                    first_alarm = Some(p.at_event_index);
                }
                PredictionMessage::Error { .. } => errors += 1,
                _ => {}
            }
        }
        let failure = trace.events.iter().position(|e| e.kind == EventKind::IntrinsicFailure);
        match (failure, first_alarm) {
            (Some(f), Some(alarm)) if alarm < f => {
                failing += 1;
                detected += 1;
                leads.push((f - alarm) as f64);
            }
            (Some(_), _) => failing += 1,
            (None, Some(_)) => false_alarms += 1,
            (None, None) => {}
        }
    }
    let predictions = stream.iter().filter(|m| m.as_prediction().is_some()).count();
    let mut out = format!(
        "instances {}\npredictions {predictions}\nerrors {errors}\nfailing instances {failing}\ndetected {detected}\nfalse alarms {false_alarms}\n",
        traces.len()
    );
    if leads.is_empty() {
        out.push_str("lead time n/a\n");
    } else {
        let mean = leads.iter().sum::<f64>() / leads.len() as f64;
        let min = leads.iter().copied().fold(f64::INFINITY, f64::min);
        let max = leads.iter().copied().fold(0.0, f64::max);
        let _ = writeln!(out, "lead time mean {mean:.2} min {min} max {max} events");
    }
    out
}

fn parse_matrix(text: &str) -> Result<ConfusionMatrix, CliError> {
    let cells: Vec<f64> = text
        .split(',')
        .map(|c| c.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("--from-matrix: {e}")))?;
    match cells[..] {
        [tp, fn_, fp, tn] if cells.iter().all(|c| c.is_finite() && *c >= 0.0) => {
            Ok(ConfusionMatrix::new(tp, fn_, fp, tn))
        }
        _ => Err(CliError::Usage("--from-matrix expects four non-negative counts TP,FN,FP,TN".into())),
    }
}

fn evaluate(a: &EvaluateArgs) -> Result<String, CliError> {
    if let Some(text) = &a.from_matrix {
        let m = metrics(&parse_matrix(text)?).map_err(|e| CliError::Usage(e.to_string()))?;
        return Ok(format!(
            "precision {:.4}\nrecall {:.4}\nmcc {:.4}\n\
             note: these are metrics of the given matrix; when it is a mean over folds they can differ from the \
             per-fold metric means that cross validation reports\n",
            m.precision, m.recall, m.mcc
        ));
    }
    let limits = a.limits.limits()?;
    if a.rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(CliError::Usage("--rates must lie in [0, 1]".into()));
    }
    let spec = load_spec(&a.spec)?;
    let (seed, corpus) = match &a.input {
        Some(path) => (a.seed.seed.unwrap_or(0), read_log(path)?),
        None => {
            let seed = a.seed.seed.unwrap_or(spec.seed);
            (seed, generate(&CollaborationSpec { seed, ..spec.clone() }, a.n as usize).map_err(Error::from)?)
        }
    };
    let config = EvalConfig {
        k: a.k,
        seed,
        threshold: a.limits.threshold,
        limits,
        classifier: a.classifier,
        ..Default::default()
    };
    let rows = if a.rates.is_empty() {
        evaluate_scenarios(&corpus, failure_fraction(&corpus), &a.scenario, &config)?
    } else {
        sweep(&spec, &corpus, &a.rates, &a.scenario, &config)?
    };
    let table = results_table(&rows);
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| runtime(dir, e))?;
        write_file(&dir.join("results.tsv"), &table)?;
        for (name, contents) in plot_files(&rows) {
            write_file(&dir.join(name), &contents)?;
        }
    }
    let mut out = format!("seed {seed}\n{table}");
    out.push_str(&row_notes(&rows));
    Ok(out)
}

fn row_notes(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    for row in rows {
        let r = &row.report;
        let errors: usize = r.folds.iter().map(|f| f.errors).sum();
        let lead = r.mean_lead_time.map_or("n/a".to_owned(), |l| format!("{l:.2}"));
        let _ = writeln!(
            out,
            "# {:.2} {}: folds {} skipped {} unclassified {errors} mean lead time {lead}",
            row.rate,
            row.scenario,
            r.folds.len(),
            r.skipped_folds.len()
        );
    }
    out
}

/// Parses `args` (program name first), runs the command and prints its
/// output. Usage errors exit with 2, runtime failures with 1.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match execute(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_lists_traversal_defaults() {
        let help = |cmd: &str| Cli::try_parse_from(["efp", cmd, "--help"]).unwrap_err().to_string();
        for cmd in ["run", "evaluate"] {
            let text = help(cmd);
            for needle in ["--max-depth", "[default: 20]", "[default: 5]", "[default: 1e-4]", "[default: 0.5]"] {
                assert!(text.contains(needle), "{cmd}: {needle}");
            }
        }
        assert!(help("simulate").contains("EFP_SEED"));
    }

    #[test]
    fn zero_instances_is_a_usage_error() {
        let e = Cli::try_parse_from(["efp", "simulate", "--n", "0", "--out", "x.xes"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn matrix_mode() {
        let cli = Cli::try_parse_from(["efp", "evaluate", "--from-matrix", "1051.14,28.04,153.76,1917.95"]).unwrap();
        let out = execute(&cli).unwrap();
        assert!(out.starts_with("precision 0.8724\nrecall 0.9740\nmcc 0.8786\n"), "{out}");
        let bad = Cli::try_parse_from(["efp", "evaluate", "--from-matrix", "1,2,3"]).unwrap();
        assert_eq!(execute(&bad).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn scenario_flag_parses() {
        let cli = Cli::try_parse_from(["efp", "evaluate", "--scenario", "global,local:carrier,nocontext"]).unwrap();
        let Command::Evaluate(a) = cli.command else { panic!() };
        assert_eq!(a.scenario, vec![Scenario::Global, Scenario::Local("carrier".into()), Scenario::NoContextGlobal]);
    }
}
