//! Command-line surface. Every run flag can also come from a TOML config
//! file (`--config`); flags win over the file.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 run aborted
//! (the last checkpoint is kept in the output directory).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, BackendKind, Checkpoint, RunConfig, RunOutcome, RunSummary, SearchKind};
use crate::backend::{HttpBackend, HttpConfig, MapperBackend, RetryPolicy, ScriptedBackend};
use crate::confidence::{evaluate_accuracy, evaluate_decisions, AccuracyReport};
use crate::error::{Error, Result};
use crate::evidence::{load_ledger, Ledger};
use crate::providers::{CorpusProvider, EvidenceProvider, NullProvider, WebSearchConfig, WebSearchProvider};
use crate::report::build_report;
use crate::schema::{load_ground_truth, load_schema, save_schema, GroundTruth, Schema, SchemaSide};
use crate::sim::{
    build_from_spec, run_calibration_experiment, write_calibration_csv, ClassCounts, Scenario, ScenarioSpec,
};

pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const HYPOTHESIS_FILE: &str = "hypothesis.json";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const CALIBRATION_FILE: &str = "calibration.csv";

const DEFAULT_OUT_DIR: &str = "schemalign-out";

/// Test-time schema mapping with consistency-scored evidence retention.
#[derive(Debug, Parser)]
#[command(name = "schemalign", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML file supplying defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the mapping agent.
    Run(RunArgs),
    /// Score a finished run against ground truth.
    Evaluate(EvaluateArgs),
    /// Write the expert-review report for a finished run.
    Report(ReportArgs),
    /// Build a synthetic scenario and run the agent on it.
    Simulate(SimulateArgs),
    /// Compare calibration across variant counts on synthetic scenarios.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendArg {
    Http,
    Mock,
    OracleSim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchArg {
    Web,
    Corpus,
    Null,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Http => BackendKind::Http,
            BackendArg::Mock => BackendKind::Mock,
            BackendArg::OracleSim => BackendKind::OracleSim,
        }
    }
}

impl From<SearchArg> for SearchKind {
    fn from(s: SearchArg) -> Self {
        match s {
            SearchArg::Web => SearchKind::Web,
            SearchArg::Corpus => SearchKind::Corpus,
            SearchArg::Null => SearchKind::Null,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunArgs {
    /// Source schema JSON.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Target schema JSON.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Ground-truth CSV; only used to report accuracy.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Iteration limit.
    #[arg(long)]
    pub iterations: Option<u32>,
    /// Prompt variants per mapping.
    #[arg(long)]
    pub variants: Option<usize>,
    /// Review threshold for flagging fields.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    #[arg(long, value_enum)]
    pub search: Option<SearchArg>,
    /// Directory of text documents for `--search corpus`.
    #[arg(long)]
    pub corpus_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    #[serde(skip)]
    pub resume: bool,
    /// Fixed timestamps so repeated runs are byte-identical.
    #[arg(long)]
    pub deterministic: Option<Option<bool>>,
    /// Scenario spec JSON for `--backend oracle-sim`.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Script JSON for `--backend mock`.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    /// Retained-evidence cap (0 = unbounded).
    #[arg(long)]
    pub context_cap: Option<usize>,
    /// Issue variant requests concurrently.
    #[arg(long)]
    pub parallel: Option<Option<bool>>,
    /// Accepted evidence is visible to later fields of the same iteration.
    #[arg(long)]
    pub immediate_context: Option<Option<bool>>,
    /// Keep iterating after conflicts reach zero.
    #[arg(long)]
    pub no_early_stop: Option<Option<bool>>,
    /// HTTP timeout in seconds.
    #[arg(long)]
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Defaults to the copy saved with the run.
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Defaults to the run's threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Field counts as easy,ambiguous,unmapped.
    #[arg(long)]
    pub counts: Option<String>,
    #[arg(long)]
    pub decoys: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CalibrateArgs {
    /// Comma-separated variant counts.
    #[arg(long, default_value = "3,10")]
    pub n: String,
    /// Number of seeds (1..=K).
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 50)]
    pub iterations: u32,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Aborted(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Aborted { .. } => CliError::Aborted(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Aborted(_) => 2,
        }
    }
}

/// Parses `args` and runs the command; what `main` calls.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_tracing(cli.verbose);
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = match &e {
                CliError::Usage(m) | CliError::Aborted(m) => m,
            };
            eprintln!("error: {message}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn init_tracing(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

pub fn execute(cli: Cli) -> std::result::Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunArgs::default(),
    };
    match cli.command {
        Command::Run(args) => cmd_run(args.merged(file)),
        Command::Evaluate(args) => cmd_evaluate(args, &file),
        Command::Report(args) => cmd_report(args, &file),
        Command::Simulate(args) => cmd_simulate(SimulateArgs {
            run: args.run.merged(file),
            ..args
        }),
        Command::Calibrate(args) => cmd_calibrate(args, &file),
    }
}

/// Reads a TOML config whose keys are the long flag names in snake_case.
pub fn load_config(path: &Path) -> Result<RunArgs> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn flag(v: Option<Option<bool>>) -> Option<bool> {
    v.map(|inner| inner.unwrap_or(true))
}

impl RunArgs {
    /// Flag values win; the file fills the gaps.
    pub fn merged(self, file: RunArgs) -> RunArgs {
        RunArgs {
            source: self.source.or(file.source),
            target: self.target.or(file.target),
            truth: self.truth.or(file.truth),
            iterations: self.iterations.or(file.iterations),
            variants: self.variants.or(file.variants),
            threshold: self.threshold.or(file.threshold),
            backend: self.backend.or(file.backend),
            search: self.search.or(file.search),
            corpus_dir: self.corpus_dir.or(file.corpus_dir),
            seed: self.seed.or(file.seed),
            out_dir: self.out_dir.or(file.out_dir),
            resume: self.resume,
            deterministic: self.deterministic.or(file.deterministic),
            scenario: self.scenario.or(file.scenario),
            mock_script: self.mock_script.or(file.mock_script),
            context_cap: self.context_cap.or(file.context_cap),
            parallel: self.parallel.or(file.parallel),
            immediate_context: self.immediate_context.or(file.immediate_context),
            no_early_stop: self.no_early_stop.or(file.no_early_stop),
            timeout_secs: self.timeout_secs.or(file.timeout_secs),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let defaults = RunConfig::default();
        let config = RunConfig {
            alpha: self.iterations.unwrap_or(defaults.alpha),
            n: self.variants.unwrap_or(defaults.n),
            review_threshold: self.threshold.unwrap_or(defaults.review_threshold),
            context_cap: match self.context_cap {
                Some(0) => None,
                Some(c) => Some(c),
                None => defaults.context_cap,
            },
            seed: self.seed.unwrap_or(0),
            backend: self.backend.map_or(defaults.backend, Into::into),
            search: self.search.map_or(defaults.search, Into::into),
            stop_on_no_conflicts: !flag(self.no_early_stop).unwrap_or(false),
            immediate_context_updates: flag(self.immediate_context).unwrap_or(false),
            full_remap_evaluation: false,
            parallel: flag(self.parallel).unwrap_or(false),
            deterministic: flag(self.deterministic).unwrap_or(false),
            retry: RetryPolicy::default(),
        };
        config.validate()?;
        Ok(config)
    }
}

fn load_scenario_spec(path: Option<&Path>, seed: u64) -> Result<ScenarioSpec> {
    match path {
        Some(p) => ScenarioSpec::load(p),
        None => Ok(ScenarioSpec::standard(seed)),
    }
}

/// Backend, provider, schemas and truth assembled from flags.
struct Assembly {
    source: Schema,
    target: Schema,
    truth: Option<GroundTruth>,
    backend: Box<dyn MapperBackend>,
    provider: Box<dyn EvidenceProvider>,
}

fn assemble(args: &RunArgs, config: &RunConfig, scenario: Option<Scenario>) -> Result<Assembly> {
    let timeout = Duration::from_secs(args.timeout_secs.unwrap_or(60));
    let scenario = match (config.backend, scenario) {
        (BackendKind::OracleSim, Some(s)) => Some(s),
        (BackendKind::OracleSim, None) => Some(build_from_spec(&load_scenario_spec(
            args.scenario.as_deref(),
            config.seed,
        )?)?),
        _ => None,
    };

    let (source, target) = match (&args.source, &args.target, &scenario) {
        (Some(s), Some(t), _) => (load_schema(s, SchemaSide::Source)?, load_schema(t, SchemaSide::Target)?),
        (None, None, Some(sc)) => (sc.source.clone(), sc.target.clone()),
        _ => return Err(Error::Config("--source and --target are both required".into())),
    };
    if let Some(sc) = &scenario {
        if sc.source.fingerprint() != source.fingerprint() || sc.target.fingerprint() != target.fingerprint() {
            return Err(Error::Config("schemas do not belong to the simulated scenario".into()));
        }
    }
    let truth = match &args.truth {
        Some(p) => Some(load_ground_truth(p, &source, &target)?),
        None => None,
    };

    let backend: Box<dyn MapperBackend> = match config.backend {
        BackendKind::OracleSim => Box::new(
            scenario
                .clone()
                .expect("oracle scenario built above")
                .oracle()
                .with_seed(config.seed),
        ),
        BackendKind::Mock => {
            let path = args
                .mock_script
                .as_deref()
                .ok_or_else(|| Error::Config("--backend mock needs --mock-script".into()))?;
            Box::new(ScriptedBackend::load(path)?)
        }
        BackendKind::Http => Box::new(HttpBackend::new(HttpConfig::from_env(timeout)?)?),
    };
    let provider: Box<dyn EvidenceProvider> = match config.search {
        SearchKind::Null => Box::new(NullProvider),
        SearchKind::Web => Box::new(WebSearchProvider::new(WebSearchConfig::from_env(timeout)?)?),
        SearchKind::Corpus => match (&args.corpus_dir, &scenario) {
            (Some(dir), _) => Box::new(CorpusProvider::open(dir)?),
            (None, Some(sc)) => Box::new(sc.corpus_provider()),
            (None, None) => return Err(Error::Config("--search corpus needs --corpus-dir".into())),
        },
    };
    Ok(Assembly {
        source,
        target,
        truth,
        backend,
        provider,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn cmd_run(args: RunArgs) -> std::result::Result<(), CliError> {
    run_with(args, None)
}

fn run_with(args: RunArgs, scenario: Option<Scenario>) -> std::result::Result<(), CliError> {
    let out_dir = args.out_dir();
    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);
    let ledger_path = out_dir.join(LEDGER_FILE);

    let checkpoint = if args.resume {
        Some(Checkpoint::load(&checkpoint_path)?)
    } else {
        if checkpoint_path.exists() || ledger_path.exists() {
            return Err(CliError::Usage(format!(
                "{} already holds a run; pass --resume or choose another --out-dir",
                out_dir.display()
            )));
        }
        None
    };
    let mut config = args.run_config()?;
    if let Some(cp) = &checkpoint {
        // The run continues under its original settings; only the limit moves.
        let alpha = args.iterations.unwrap_or(cp.config.alpha);
        config = RunConfig { alpha, ..cp.config.clone() };
    }
    let assembly = assemble(&args, &config, scenario)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    save_schema(&assembly.source, &out_dir.join("source.json"))?;
    save_schema(&assembly.target, &out_dir.join("target.json"))?;

    let ledger = Ledger::new(&ledger_path, config.deterministic);
    let mut agent = Agent::new(
        config.clone(),
        &assembly.source,
        &assembly.target,
        assembly.backend.as_ref(),
        assembly.provider.as_ref(),
    )?
    .with_ledger(ledger)
    .with_checkpoint_path(&checkpoint_path);
    if let Some(t) = &assembly.truth {
        agent = agent.with_truth(t);
    }
    let outcome = match checkpoint {
        Some(cp) => agent.resume(cp)?,
        None => agent.run()?,
    };
    write_run_artifacts(&out_dir, &outcome, config.review_threshold)?;
    let summary = outcome.summary();
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    if let Some(reason) = outcome.aborted {
        return Err(CliError::Aborted(format!(
            "run aborted ({reason}); resume from {}",
            checkpoint_path.display()
        )));
    }
    Ok(())
}

fn write_run_artifacts(out_dir: &Path, outcome: &RunOutcome, threshold: f64) -> Result<()> {
    write_json(&out_dir.join(SUMMARY_FILE), &outcome.summary())?;
    if outcome.records.is_empty() {
        return Ok(());
    }
    write_json(&out_dir.join(HYPOTHESIS_FILE), outcome.hypothesis())?;
    let ledger = load_ledger(&out_dir.join(LEDGER_FILE)).or_else(|e| match e {
        Error::Io { .. } => Ok(Vec::new()),
        other => Err(other),
    })?;
    let report = build_report(outcome.hypothesis(), &outcome.records, &ledger, threshold)?;
    std::fs::write(out_dir.join(REPORT_TEXT_FILE), report.render_text())
        .map_err(|e| Error::io(&out_dir.join(REPORT_TEXT_FILE), e))?;
    write_json(&out_dir.join(REPORT_JSON_FILE), &report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPoint {
    pub iteration: u32,
    pub accuracy: f64,
    pub mean_confidence: f64,
    pub conflicts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub series: Vec<AccuracyPoint>,
    #[serde(rename = "final")]
    pub final_report: AccuracyReport,
    pub final_percent: f64,
}

/// Accuracy of every recorded iteration plus the final hypothesis.
pub fn evaluate_run(checkpoint: &Checkpoint, truth: &GroundTruth) -> Evaluation {
    let series = checkpoint
        .records
        .iter()
        .map(|r| {
            let decisions = r
                .per_field
                .iter()
                .map(|(f, s)| (f.clone(), s.modal_prediction.clone()))
                .collect();
            AccuracyPoint {
                iteration: r.iteration,
                accuracy: evaluate_decisions(&decisions, truth).accuracy,
                mean_confidence: r.mean_confidence,
                conflicts: r.conflict_fields.len(),
            }
        })
        .collect();
    let final_report = evaluate_accuracy(&checkpoint.state.hypothesis, truth);
    Evaluation {
        series,
        final_percent: final_report.percent(),
        final_report,
    }
}

fn saved_or(flag: &Option<PathBuf>, out_dir: &Path, name: &str) -> PathBuf {
    flag.clone().unwrap_or_else(|| out_dir.join(name))
}

fn cmd_evaluate(args: EvaluateArgs, file: &RunArgs) -> std::result::Result<(), CliError> {
    let out_dir = args.out_dir.or(file.out_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let truth_path = args
        .truth
        .or(file.truth.clone())
        .ok_or_else(|| CliError::Usage("evaluate needs --truth".into()))?;
    let checkpoint = Checkpoint::load(&out_dir.join(CHECKPOINT_FILE))?;
    let source = load_schema(&saved_or(&args.source, &out_dir, "source.json"), SchemaSide::Source)?;
    let target = load_schema(&saved_or(&args.target, &out_dir, "target.json"), SchemaSide::Target)?;
    checkpoint.validate_against(&source, &target)?;
    let truth = load_ground_truth(&truth_path, &source, &target)?;
    let evaluation = evaluate_run(&checkpoint, &truth);
    write_json(&out_dir.join(EVALUATION_FILE), &evaluation)?;
    for p in &evaluation.series {
        println!(
            "iteration {:>3}  accuracy {:>6.2}%  confidence {:.4}  conflicts {}",
            p.iteration,
            p.accuracy * 100.0,
            p.mean_confidence,
            p.conflicts
        );
    }
    println!(
        "final accuracy: {:.2}% ({}/{})",
        evaluation.final_percent, evaluation.final_report.correct, evaluation.final_report.total
    );
    Ok(())
}

fn cmd_report(args: ReportArgs, file: &RunArgs) -> std::result::Result<(), CliError> {
    let out_dir = args.out_dir.or(file.out_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let checkpoint = Checkpoint::load(&out_dir.join(CHECKPOINT_FILE))?;
    let ledger_path = out_dir.join(LEDGER_FILE);
    let ledger = if ledger_path.exists() { load_ledger(&ledger_path)? } else { Vec::new() };
    let threshold = args
        .threshold
        .or(file.threshold)
        .unwrap_or(checkpoint.config.review_threshold);
    let report = build_report(&checkpoint.state.hypothesis, &checkpoint.records, &ledger, threshold)?;
    let text = report.render_text();
    std::fs::write(out_dir.join(REPORT_TEXT_FILE), &text).map_err(|e| Error::io(&out_dir, e))?;
    write_json(&out_dir.join(REPORT_JSON_FILE), &report)?;
    print!("{text}");
    Ok(())
}

fn parse_counts(text: &str) -> Result<ClassCounts> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("--counts: {e}")))?;
    match parts.as_slice() {
        [easy, ambiguous, unmapped] => Ok(ClassCounts {
            easy: *easy,
            ambiguous: *ambiguous,
            unmapped: *unmapped,
        }),
        _ => Err(Error::Config("--counts takes easy,ambiguous,unmapped".into())),
    }
}

fn cmd_simulate(args: SimulateArgs) -> std::result::Result<(), CliError> {
    let mut run = args.run;
    let seed = run.seed.unwrap_or(0);
    let mut spec = load_scenario_spec(run.scenario.as_deref(), seed)?;
    if run.seed.is_some() {
        spec.seed = seed;
    }
    if let Some(c) = &args.counts {
        spec.counts = parse_counts(c)?;
    }
    if let Some(d) = args.decoys {
        spec.decoy_docs = d;
    }
    let scenario = build_from_spec(&spec)?;
    let out_dir = run.out_dir();
    let scenario_dir = out_dir.join("scenario");
    if !run.resume {
        if out_dir.join(CHECKPOINT_FILE).exists() || out_dir.join(LEDGER_FILE).exists() {
            return Err(CliError::Usage(format!(
                "{} already holds a run; pass --resume or choose another --out-dir",
                out_dir.display()
            )));
        }
        scenario.write_to(&scenario_dir)?;
    }
    run.backend = Some(BackendArg::OracleSim);
    if run.search.is_none() {
        run.search = Some(SearchArg::Corpus);
    }
    run.seed = Some(spec.seed);
    run.source = None;
    run.target = None;
    if run.truth.is_none() {
        run.truth = Some(scenario_dir.join("truth.csv"));
    }
    if run.resume && !scenario_dir.join("truth.csv").exists() && run.truth.as_deref() == Some(&scenario_dir.join("truth.csv")) {
        run.truth = None;
    }
    run_with(run, Some(scenario))
}

fn parse_n_list(text: &str) -> Result<Vec<usize>> {
    let values: Vec<usize> = text
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("--n: {e}")))?;
    if values.is_empty() || values.iter().any(|&n| n < 2) {
        return Err(Error::Config("--n needs variant counts of at least 2".into()));
    }
    Ok(values)
}

fn cmd_calibrate(args: CalibrateArgs, file: &RunArgs) -> std::result::Result<(), CliError> {
    let n_values = parse_n_list(&args.n)?;
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (1..=args.seeds).collect();
    let spec = load_scenario_spec(args.scenario.as_deref().or(file.scenario.as_deref()), 1)?;
    let (rows, runs) = run_calibration_experiment(&spec, &n_values, args.iterations, &seeds)?;
    let out_dir = args.out_dir.or(file.out_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    write_calibration_csv(&rows, &out_dir.join(CALIBRATION_FILE))?;
    write_json(&out_dir.join("calibration_runs.json"), &runs)?;
    println!("n    accuracy  confidence  gap      |gap|   flagged");
    for r in &rows {
        println!(
            "{:<4} {:>7.2}%  {:>8.2}%  {:>+6.2}  {:>6.2}  {:.1} -> {:.1} ({:+.0}%)",
            r.n,
            r.final_accuracy * 100.0,
            r.mean_confidence * 100.0,
            r.calibration_gap * 100.0,
            r.mean_abs_gap * 100.0,
            r.initial_flagged,
            r.final_flagged,
            -r.flagged_reduction * 100.0
        );
    }
    Ok(())
}

/// Reads the run summary written by `run`.
pub fn load_summary(out_dir: &Path) -> Result<RunSummary> {
    read_json(&out_dir.join(SUMMARY_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_verify() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_run_flags() {
        let cli = Cli::parse_from([
            "schemalign", "run", "--backend", "oracle-sim", "--search", "corpus", "--seed", "7", "--iterations", "5",
            "--deterministic",
        ]);
        let Command::Run(args) = cli.command else { panic!("expected run") };
        let config = args.run_config().unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.alpha, 5);
        assert_eq!(config.backend, BackendKind::OracleSim);
        assert!(config.deterministic);
    }

    #[test]
    fn flags_win_over_file() {
        let file: RunArgs = toml::from_str("iterations = 9\nvariants = 4\nbackend = \"mock\"\ndeterministic = true").unwrap();
        let flags = RunArgs {
            iterations: Some(2),
            ..Default::default()
        };
        let merged = flags.merged(file);
        assert_eq!(merged.iterations, Some(2));
        assert_eq!(merged.variants, Some(4));
        assert_eq!(merged.backend, Some(BackendArg::Mock));
        assert!(merged.run_config().unwrap().deterministic);
    }

    #[test]
    fn unknown_config_key_rejected() {
        assert!(toml::from_str::<RunArgs>("iteratons = 3").is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let args = RunArgs {
            variants: Some(1),
            ..Default::default()
        };
        assert!(args.run_config().is_err());
        assert!(parse_n_list("3,x").is_err());
        assert!(parse_n_list("1,3").is_err());
        assert_eq!(parse_n_list("3,10").unwrap(), vec![3, 10]);
        assert!(parse_counts("1,2").is_err());
    }

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(CliError::from(Error::Config("x".into())).exit_code(), 1);
        let aborted = Error::Aborted {
            iteration: 3,
            reason: "down".into(),
        };
        assert_eq!(CliError::from(aborted).exit_code(), 2);
    }
}
