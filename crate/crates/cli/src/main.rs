//! `survdisc` command line: simulate cohorts, evaluate discrimination
//! studies, sweep split fractions and re-render reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use survdisc::cohort::{DropReport, ValidationOptions};
use survdisc::csvio::{read_cohort_path, write_cohort_csv, CategoricalEncoding};
use survdisc::hazard::HazardAssignment;
use survdisc::report::{summary_csv, sweep_csv, sweep_markdown, tables_markdown};
use survdisc::study::StudySummary;
use survdisc::{generate_cohort, run_study, split_sweep, SimulationConfig, StudyConfig, StudyResult};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "survdisc", version, about = "Concordance and expected C-index bounds for survival models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for replicate loops.
    #[arg(long, env = "SURVDISC_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic cohort: cohort.csv, truth.json.
    Simulate(Common),
    /// Run the repeated-split study: report.json, summary.csv, tables.md.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Cohort CSV; repeat for several scenarios. Overrides `cohort` in the config.
        #[arg(long)]
        cohort: Vec<PathBuf>,
    },
    /// Expected C-index spread across split fractions: sweep.csv, sweep.md.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cohort: Option<PathBuf>,
        /// Comma-separated split fractions. Overrides `fractions` in the config.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
    /// Re-render summary.csv and tables.md from a report.json.
    Report {
        /// report.json written by `evaluate`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Configuration for `evaluate` and `sweep`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateConfig {
    /// Relative paths resolve against the config file's directory.
    #[serde(default)]
    cohort: Option<PathBuf>,
    #[serde(default)]
    validation: ValidationOptions,
    #[serde(default)]
    study: StudyConfig,
    #[serde(default)]
    fractions: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum CommandName {
    Simulate,
    Evaluate,
    Sweep,
    Report,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    command: CommandName,
    config_path: PathBuf,
    seed: u64,
    output_dir: PathBuf,
    tool_version: String,
}

#[derive(Serialize)]
struct TruthFile<'a> {
    config: &'a SimulationConfig,
    true_hazards: &'a HazardAssignment,
    true_event_times: &'a BTreeMap<String, Option<f64>>,
    censor_times: &'a BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioReport {
    scenario: String,
    cohort_path: PathBuf,
    drops: DropReport,
    encodings: Vec<CategoricalEncoding>,
    result: StudyResult,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportFile {
    tool_version: String,
    scenarios: Vec<ScenarioReport>,
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Runtime(String),
}

impl From<survdisc::Error> for Failure {
    fn from(e: survdisc::Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome<T> = Result<T, Failure>;

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Outcome<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> Outcome<String> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))
}

/// Result files written so far; removed again when the run fails.
struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn create(dir: &Path, manifest: &RunManifest) -> Outcome<Self> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("manifest.json"), to_json(manifest)?)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Outcome<()> {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        fs::write(&path, contents)?;
        Ok(())
    }

    fn discard(self) {
        for p in self.written {
            let _ = fs::remove_file(p);
        }
    }
}

fn with_outputs(dir: &Path, manifest: RunManifest, body: impl FnOnce(&mut Outputs) -> Outcome<()>) -> Outcome<()> {
    let mut outputs = Outputs::create(dir, &manifest)?;
    match body(&mut outputs) {
        Ok(()) => Ok(()),
        Err(e) => {
            outputs.discard();
            Err(e)
        }
    }
}

fn manifest(command: CommandName, config_path: &Path, seed: u64, out: &Path) -> RunManifest {
    RunManifest {
        command,
        config_path: config_path.to_path_buf(),
        seed,
        output_dir: out.to_path_buf(),
        tool_version: VERSION.to_string(),
    }
}

fn set_threads(threads: Option<usize>) -> Outcome<()> {
    match threads {
        Some(0) => Err(Failure::Input("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string())),
        None => Ok(()),
    }
}

fn simulate(c: &Common) -> Outcome<()> {
    let mut config: SimulationConfig = read_json(&c.config)?;
    if let Some(seed) = c.seed {
        config.seed = seed;
    }
    config.validate()?;
    with_outputs(&c.out, manifest(CommandName::Simulate, &c.config, config.seed, &c.out), |o| {
        let truth = generate_cohort(&config)?;
        let mut csv = Vec::new();
        write_cohort_csv(&truth.cohort, &mut csv)?;
        o.write("cohort.csv", csv)?;
        o.write(
            "truth.json",
            to_json(&TruthFile {
                config: &config,
                true_hazards: &truth.true_hazards,
                true_event_times: &truth.true_event_times,
                censor_times: &truth.censor_times,
            })?,
        )
    })
}

fn load_evaluate_config(c: &Common) -> Outcome<EvaluateConfig> {
    let mut config: EvaluateConfig = read_json(&c.config)?;
    if let Some(seed) = c.seed {
        config.study.seed = seed;
    }
    config.study.validate()?;
    if let Some(p) = &config.cohort {
        if p.is_relative() {
            let base = c.config.parent().unwrap_or(Path::new(""));
            config.cohort = Some(base.join(p));
        }
    }
    Ok(config)
}

fn scenario_name(path: &Path, configured: &str, several: bool) -> String {
    if several {
        path.file_stem().map_or_else(|| configured.to_string(), |s| s.to_string_lossy().into_owned())
    } else {
        configured.to_string()
    }
}

fn render(report: &ReportFile, o: &mut Outputs) -> Outcome<()> {
    let summaries: Vec<StudySummary> = report.scenarios.iter().map(|s| s.result.summary.clone()).collect();
    o.write("summary.csv", summary_csv(&summaries)?)?;
    o.write("tables.md", tables_markdown(&summaries))
}

fn evaluate(c: &Common, cohorts: &[PathBuf]) -> Outcome<()> {
    let config = load_evaluate_config(c)?;
    let paths: Vec<PathBuf> = if cohorts.is_empty() {
        config.cohort.clone().into_iter().collect()
    } else {
        cohorts.to_vec()
    };
    if paths.is_empty() {
        return Err(Failure::Input("no cohort given: pass --cohort or set `cohort` in the config".into()));
    }
    let loaded = paths
        .iter()
        .map(|p| {
            read_cohort_path(p, &config.validation)
                .map_err(|e| Failure::from(e).prefixed(&p.display().to_string()))
        })
        .collect::<Outcome<Vec<_>>>()?;
    let seed = config.study.seed;
    with_outputs(&c.out, manifest(CommandName::Evaluate, &c.config, seed, &c.out), |o| {
        let mut scenarios = Vec::new();
        for (path, csv) in paths.iter().zip(loaded) {
            let study = StudyConfig {
                scenario: scenario_name(path, &config.study.scenario, paths.len() > 1),
                ..config.study.clone()
            };
            let result = run_study(&csv.validated.cohort, &study)?;
            scenarios.push(ScenarioReport {
                scenario: study.scenario.clone(),
                cohort_path: path.clone(),
                drops: csv.validated.drops,
                encodings: csv.encodings,
                result,
            });
        }
        let report = ReportFile {
            tool_version: VERSION.to_string(),
            scenarios,
        };
        o.write("report.json", to_json(&report)?)?;
        render(&report, o)
    })
}

fn sweep(c: &Common, cohort: Option<&Path>, fractions: Option<&[f64]>) -> Outcome<()> {
    let config = load_evaluate_config(c)?;
    let path = cohort
        .map(Path::to_path_buf)
        .or(config.cohort.clone())
        .ok_or_else(|| Failure::Input("no cohort given: pass --cohort or set `cohort` in the config".into()))?;
    let fractions = fractions
        .map(<[f64]>::to_vec)
        .or(config.fractions.clone())
        .ok_or_else(|| Failure::Input("no fractions given: pass --fractions or set `fractions` in the config".into()))?;
    let csv = read_cohort_path(&path, &config.validation).map_err(|e| Failure::from(e).prefixed(&path.display().to_string()))?;
    let seed = config.study.seed;
    with_outputs(&c.out, manifest(CommandName::Sweep, &c.config, seed, &c.out), |o| {
        let result = split_sweep(&csv.validated.cohort, &fractions, &config.study)?;
        o.write("sweep.csv", sweep_csv(&result)?)?;
        o.write("sweep.md", sweep_markdown(&result))
    })
}

fn report(input: &Path, out: &Path) -> Outcome<()> {
    let report: ReportFile = read_json(input)?;
    let seed = report.scenarios.first().map_or(0, |s| s.result.config.seed);
    with_outputs(out, manifest(CommandName::Report, input, seed, out), |o| render(&report, o))
}

impl Failure {
    fn prefixed(self, context: &str) -> Self {
        match self {
            Failure::Input(m) => Failure::Input(format!("{context}: {m}")),
            Failure::Runtime(m) => Failure::Runtime(format!("{context}: {m}")),
        }
    }
}

fn run(cli: Cli) -> Outcome<()> {
    match &cli.command {
        Command::Simulate(c) => {
            set_threads(c.threads)?;
            simulate(c)
        }
        Command::Evaluate { common, cohort } => {
            set_threads(common.threads)?;
            evaluate(common, cohort)
        }
        Command::Sweep {
            common,
            cohort,
            fractions,
        } => {
            set_threads(common.threads)?;
            sweep(common, cohort.as_deref(), fractions.as_deref())
        }
        Command::Report { input, out } => report(input, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
