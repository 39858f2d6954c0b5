//! Argument parsing and command dispatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use dfsnet_core::logical::Encoding;
use serde::Serialize;

use crate::error::{exit, CliError};
use crate::results::ResultDoc;
use crate::run::{self, RunOptions, DEFAULT_TRIALS};
use crate::scenario::{ModeSpec, Scenario};

/// Photon-routed conditional phase gates on a ring of two-atom cavity nodes.
///
/// Exit codes: 0 success, 1 I/O error, 2 invalid scenario or arguments,
/// 3 simulation failure (including repeat-until-success exhaustion),
/// 4 a validate or oracle-check case failed.
#[derive(Debug, Parser)]
#[command(name = "dfsnet", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the scenario trial count.
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    /// Forces exact-amplitude mode.
    #[arg(long, global = true)]
    pub exact: bool,
    /// Writes the result here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Runs the scenario's protocol once.
    Simulate,
    /// Conditioned output for every logical basis input.
    TruthTable,
    /// Monte Carlo over the values of one noise or timing parameter.
    Sweep {
        #[arg(long)]
        parameter: Option<String>,
        /// Comma-separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Vec<f64>,
    },
    /// Gate durations and regime warnings.
    Timing,
    /// Equal-arrival check of compiled schedules.
    Validate {
        /// Checks every schedule on rings of 1..=NODES nodes (default 5).
        #[arg(long)]
        nodes: Option<usize>,
    },
    /// Engine maps against the independent path-sum oracle.
    OracleCheck {
        #[arg(long)]
        nodes: Option<usize>,
    },
}

/// Parses `args`, runs, and returns the process exit code. Data goes to
/// stdout (or `--out`), diagnostics to stderr.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.exit_code() {
                0 => exit::OK,
                _ => exit::CONFIG,
            };
        }
    };
    match execute(&cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("dfsnet: {e}");
            e.exit_code()
        }
    }
}

fn load(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Scenario::from_json(&text, &path.display().to_string())
}

fn scenario(cli: &Cli, command: &str) -> Result<Scenario, CliError> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::config(format!("{command} needs --config")))?;
    let mut sc = load(path)?;
    if cli.seed.is_some() {
        sc.seed = cli.seed;
    }
    if cli.trials.is_some() {
        sc.trials = cli.trials;
    }
    if cli.exact {
        sc.mode = Some(ModeSpec::Exact);
    }
    Ok(sc)
}

fn optional_scenario(cli: &Cli) -> Result<Option<Scenario>, CliError> {
    match cli.config {
        Some(_) => scenario(cli, "").map(Some),
        None => Ok(None),
    }
}

/// Flat CSV view of a validate or oracle-check case.
#[derive(Serialize)]
struct CaseRow {
    nodes: usize,
    participants: String,
    entry: usize,
    encoding: Option<String>,
    ok: bool,
    arrival_tick: Option<u32>,
    dh_deviation: Option<f64>,
    dv_deviation: Option<f64>,
    target_deviation: Option<f64>,
    error: Option<String>,
}

fn joined(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn csv_of<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Physics(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Physics(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn render(doc: &ResultDoc, format: Format) -> Result<String, CliError> {
    if format == Format::Json {
        let mut s = serde_json::to_string_pretty(doc).map_err(|e| CliError::Physics(format!("json: {e}")))?;
        s.push('\n');
        return Ok(s);
    }
    match doc {
        ResultDoc::Simulate(_) => Err(CliError::config("simulate writes JSON only")),
        ResultDoc::TruthTable(t) => csv_of(&t.rows),
        ResultDoc::Sweep(s) => csv_of(&s.rows),
        ResultDoc::Timing(t) => csv_of(&t.rows),
        ResultDoc::Validate(v) => csv_of(v.cases.iter().map(|c| CaseRow {
            nodes: c.nodes,
            participants: joined(&c.participants),
            entry: c.entry,
            encoding: None,
            ok: c.ok,
            arrival_tick: c.arrival_tick,
            dh_deviation: None,
            dv_deviation: None,
            target_deviation: None,
            error: c.error.clone(),
        })),
        ResultDoc::OracleCheck(o) => csv_of(o.cases.iter().map(|c| CaseRow {
            nodes: c.nodes,
            participants: joined(&c.participants),
            entry: c.entry,
            encoding: Some(c.encoding.clone()),
            ok: c.ok,
            arrival_tick: None,
            dh_deviation: c.dh_deviation,
            dv_deviation: c.dv_deviation,
            target_deviation: c.target_deviation,
            error: c.error.clone(),
        })),
    }
}

fn emit(cli: &Cli, doc: &ResultDoc, default: Format) -> Result<(), CliError> {
    let text = render(doc, cli.format.unwrap_or(default))?;
    match &cli.out {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|source| CliError::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate => {
            let sc = scenario(cli, "simulate")?;
            let r = sc.resolve()?;
            let res = run::simulate(&r, &RunOptions::from_scenario(&sc))?;
            let exhausted = res.exhausted;
            let attempts = res.attempts;
            emit(cli, &ResultDoc::Simulate(res), Format::Json)?;
            if exhausted {
                return Err(CliError::Physics(format!(
                    "no Dv herald after {} attempts",
                    attempts.unwrap_or(0)
                )));
            }
            Ok(())
        }
        Command::TruthTable => {
            let r = scenario(cli, "truth-table")?.resolve()?;
            emit(cli, &ResultDoc::TruthTable(run::truth_table(&r)?), Format::Csv)
        }
        Command::Sweep { parameter, values } => {
            let sc = scenario(cli, "sweep")?;
            let parameter = parameter
                .clone()
                .or_else(|| sc.sweep.as_ref().map(|s| s.parameter.clone()))
                .ok_or_else(|| CliError::config("sweep needs --parameter or a scenario \"sweep\" block"))?;
            let values = if values.is_empty() {
                sc.sweep.as_ref().map(|s| s.values.clone()).unwrap_or_default()
            } else {
                values.clone()
            };
            let seed = sc
                .seed
                .ok_or_else(|| CliError::config("sweep needs a seed (scenario \"seed\" or --seed)"))?;
            let trials = sc.trials.unwrap_or(DEFAULT_TRIALS);
            let report = run::sweep(&sc, &parameter, &values, trials, seed)?;
            emit(cli, &ResultDoc::Sweep(report), Format::Csv)
        }
        Command::Timing => {
            let sc = optional_scenario(cli)?.unwrap_or_else(|| Scenario::minimal(1));
            emit(cli, &ResultDoc::Timing(run::timing(&sc)?), Format::Json)
        }
        Command::Validate { nodes } => {
            let report = match (nodes, optional_scenario(cli)?) {
                (None, Some(sc)) => run::validate_resolved(&sc.resolve()?),
                (n, _) => run::validate_all(n.unwrap_or(5))?,
            };
            let failed = report.failed;
            emit(cli, &ResultDoc::Validate(report), Format::Json)?;
            if failed > 0 {
                return Err(CliError::CheckFailed(format!("{failed} schedule(s) with unequal arrival")));
            }
            Ok(())
        }
        Command::OracleCheck { nodes } => {
            let report = match (nodes, optional_scenario(cli)?) {
                (None, Some(sc)) => run::oracle_check_resolved(&sc.resolve()?),
                (n, _) => run::oracle_check_all(n.unwrap_or(5), &[Encoding::Dfs, Encoding::Bare])?,
            };
            let failed = report.failed;
            emit(cli, &ResultDoc::OracleCheck(report), Format::Json)?;
            if failed > 0 {
                return Err(CliError::CheckFailed(format!("{failed} case(s) differ from the oracle")));
            }
            Ok(())
        }
    }
}
