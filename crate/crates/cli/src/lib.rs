//! `run` and `sweep` commands behind the `consentry` binary.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use consentry::netsim::{run_trials, SimReport, SCHEMA_VERSION};
use consentry::scenario::{ConfigError, ScenarioConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ACCEPTANCE: i32 = 3;

/// Columns of `summary.csv`, in order.
pub const SUMMARY_COLUMNS: [&str; 14] = [
    "trial",
    "seed",
    "protocol",
    "n",
    "diameter",
    "termination",
    "decided",
    "decided_value",
    "rounds_max",
    "messages_total",
    "messages_max",
    "bytes_total",
    "k_observed",
    "privacy_violations",
];

/// Columns of `sweep.csv` that follow the varied keys.
pub const SWEEP_COLUMNS: [&str; 13] = [
    "protocol",
    "n",
    "diameter_max",
    "trials",
    "passed",
    "non_viable",
    "messages_mean",
    "messages_max",
    "rounds_mean",
    "rounds_max",
    "rounds_minus_diameter_max",
    "k_observed",
    "privacy_violations",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Io { .. } | CliError::Output(_) => EXIT_IO,
        }
    }
}

/// Output directory: the flag, else `CONSENTRY_OUT`, else `./out`.
pub fn output_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("CONSENTRY_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn summary_row(r: &SimReport) -> Vec<String> {
    vec![
        r.trial.to_string(),
        r.seed.to_string(),
        r.protocol.name().to_string(),
        r.n.to_string(),
        opt(r.diameter),
        r.termination.name().to_string(),
        r.decided_count().to_string(),
        r.decided_text(),
        opt(r.rounds_max()),
        r.messages_total().to_string(),
        r.messages_max().to_string(),
        r.bytes_total().to_string(),
        opt(r.k_observed),
        r.privacy_violations.len().to_string(),
    ]
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Output(e.to_string());
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(row).map_err(fail)?;
    }
    w.into_inner().map_err(|e| CliError::Output(e.to_string()))
}

fn json_bytes(value: &impl Serialize) -> Result<Vec<u8>, CliError> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| CliError::Output(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Serialize)]
struct RunFile<'a> {
    schema_version: u32,
    config: &'a ScenarioConfig,
    trials: &'a [SimReport],
}

/// Result of a finished command.
#[derive(Debug)]
pub struct Outcome {
    pub reports: Vec<SimReport>,
    pub written: Vec<PathBuf>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(SimReport::passed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            EXIT_OK
        } else {
            EXIT_ACCEPTANCE
        }
    }
}

pub fn cmd_run(config: &Path, seed: Option<u64>, out: &Path) -> Result<Outcome, CliError> {
    let mut scenario = ScenarioConfig::load(config)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
        scenario.validate()?;
    }
    let reports = run_trials(&scenario)?;
    create_dir(out)?;
    let report_path = out.join("report.json");
    write(
        &report_path,
        json_bytes(&RunFile {
            schema_version: SCHEMA_VERSION,
            config: &scenario,
            trials: &reports,
        })?,
    )?;
    let rows: Vec<_> = reports.iter().map(summary_row).collect();
    let summary_path = out.join("summary.csv");
    write(&summary_path, csv_bytes(&SUMMARY_COLUMNS, &rows)?)?;
    Ok(Outcome {
        reports,
        written: vec![report_path, summary_path],
    })
}

/// One `--vary` flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Vary {
    pub key: String,
    pub values: Vec<Value>,
}

impl std::str::FromStr for Vary {
    type Err = String;

    /// `KEY=v1,v2,...`; values are read as JSON, falling back to strings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (key, list) = s
            .split_once('=')
            .ok_or_else(|| format!("`{s}` is not KEY=v1,v2,..."))?;
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(format!("bad key `{key}`"));
        }
        let values = list
            .split(',')
            .filter(|v| !v.is_empty())
            .map(|v| serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string())))
            .collect();
        Ok(Vary {
            key: key.to_string(),
            values,
        })
    }
}

/// Sets a dotted path inside a JSON object, creating objects on the way.
pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = cur else {
            return Err(CliError::Usage(format!(
                "`{key}` does not name an object field"
            )));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        cur = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

/// Cartesian product of the varied values, first key slowest.
pub fn grid(vary: &[Vary]) -> Result<Vec<Vec<Value>>, CliError> {
    if vary.is_empty() || vary.iter().any(|v| v.values.is_empty()) {
        return Err(CliError::Usage("sweep grid is empty".into()));
    }
    let mut cells = vec![Vec::new()];
    for v in vary {
        cells = cells
            .into_iter()
            .flat_map(|prefix| {
                v.values.iter().map(move |x| {
                    let mut cell = prefix.clone();
                    cell.push(x.clone());
                    cell
                })
            })
            .collect();
    }
    Ok(cells)
}

#[derive(Clone, Debug, Serialize)]
pub struct CellSummary {
    pub protocol: String,
    pub n: usize,
    pub diameter_max: Option<usize>,
    pub trials: usize,
    pub passed: usize,
    pub non_viable: usize,
    pub messages_mean: f64,
    pub messages_max: u64,
    pub rounds_mean: Option<f64>,
    pub rounds_max: Option<u64>,
    /// Largest `rounds - diameter` seen for one process.
    pub rounds_minus_diameter_max: Option<i64>,
    pub k_observed: Option<f64>,
    pub privacy_violations: usize,
}

impl CellSummary {
    pub fn from_reports(reports: &[SimReport]) -> Self {
        let sent: Vec<u64> = reports
            .iter()
            .flat_map(|r| r.messages_sent.clone())
            .collect();
        let rounds: Vec<u64> = reports
            .iter()
            .flat_map(|r| r.rounds_to_decide.iter().flatten().copied())
            .collect();
        let mean =
            |xs: &[u64]| (!xs.is_empty()).then(|| xs.iter().sum::<u64>() as f64 / xs.len() as f64);
        let over_diameter = reports
            .iter()
            .filter_map(|r| {
                let d = r.diameter? as i64;
                r.rounds_max().map(|m| m as i64 - d)
            })
            .max();
        CellSummary {
            protocol: reports
                .first()
                .map(|r| r.protocol.name().to_string())
                .unwrap_or_default(),
            n: reports.iter().map(|r| r.n).max().unwrap_or(0),
            diameter_max: reports.iter().filter_map(|r| r.diameter).max(),
            trials: reports.len(),
            passed: reports.iter().filter(|r| r.passed()).count(),
            non_viable: reports
                .iter()
                .filter(|r| r.termination == consentry::netsim::Termination::NonViable)
                .count(),
            messages_mean: mean(&sent).unwrap_or(0.0),
            messages_max: sent.iter().copied().max().unwrap_or(0),
            rounds_mean: mean(&rounds),
            rounds_max: rounds.iter().copied().max(),
            rounds_minus_diameter_max: over_diameter,
            k_observed: reports.iter().filter_map(|r| r.k_observed).reduce(f64::max),
            privacy_violations: reports.iter().map(|r| r.privacy_violations.len()).sum(),
        }
    }

    fn row(&self) -> Vec<String> {
        vec![
            self.protocol.clone(),
            self.n.to_string(),
            opt(self.diameter_max),
            self.trials.to_string(),
            self.passed.to_string(),
            self.non_viable.to_string(),
            self.messages_mean.to_string(),
            self.messages_max.to_string(),
            opt(self.rounds_mean),
            opt(self.rounds_max),
            opt(self.rounds_minus_diameter_max),
            opt(self.k_observed),
            self.privacy_violations.to_string(),
        ]
    }
}

#[derive(Serialize)]
struct SweepCell {
    overrides: serde_json::Map<String, Value>,
    summary: CellSummary,
    trials: Vec<SimReport>,
}

#[derive(Serialize)]
struct SweepFile<'a> {
    schema_version: u32,
    base: &'a Value,
    /// Largest per-process `messages / (diameter * degree)` in the sweep.
    k_max: Option<f64>,
    cells: &'a [SweepCell],
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub struct SweepOutcome {
    pub cells: Vec<(Vec<Value>, CellSummary)>,
    pub k_max: Option<f64>,
    pub passed: bool,
    pub written: Vec<PathBuf>,
}

impl SweepOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            EXIT_OK
        } else {
            EXIT_ACCEPTANCE
        }
    }
}

pub fn cmd_sweep(config: &Path, vary: &[Vary], out: &Path) -> Result<SweepOutcome, CliError> {
    let text = fs::read_to_string(config).map_err(|source| {
        CliError::Config(ConfigError::Io {
            path: config.to_path_buf(),
            source,
        })
    })?;
    let base: Value = serde_json::from_str(&text).map_err(ConfigError::from)?;
    let cells = grid(vary)?;
    let mut scenarios = Vec::with_capacity(cells.len());
    for cell in &cells {
        let mut value = base.clone();
        for (v, x) in vary.iter().zip(cell) {
            set_path(&mut value, &v.key, x.clone())?;
        }
        let mut scenario = ScenarioConfig::from_value(value)?;
        scenario.base_dir = config.parent().map(Path::to_path_buf);
        scenario.validate()?;
        scenarios.push(scenario);
    }
    let results: Vec<Vec<SimReport>> = scenarios
        .par_iter()
        .map(run_trials)
        .collect::<Result<_, _>>()?;

    let sweep_cells: Vec<SweepCell> = cells
        .iter()
        .zip(results)
        .map(|(cell, trials)| SweepCell {
            overrides: vary
                .iter()
                .zip(cell)
                .map(|(v, x)| (v.key.clone(), x.clone()))
                .collect(),
            summary: CellSummary::from_reports(&trials),
            trials,
        })
        .collect();
    let k_max = sweep_cells
        .iter()
        .filter_map(|c| c.summary.k_observed)
        .reduce(f64::max);
    let passed = sweep_cells
        .iter()
        .all(|c| c.trials.iter().all(SimReport::passed));

    create_dir(out)?;
    let report_path = out.join("report.json");
    write(
        &report_path,
        json_bytes(&SweepFile {
            schema_version: SCHEMA_VERSION,
            base: &base,
            k_max,
            cells: &sweep_cells,
        })?,
    )?;
    let mut header: Vec<&str> = vec!["cell"];
    header.extend(vary.iter().map(|v| v.key.as_str()));
    header.extend(SWEEP_COLUMNS);
    let rows: Vec<Vec<String>> = sweep_cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut row = vec![i.to_string()];
            row.extend(c.overrides.values().map(render));
            row.extend(c.summary.row());
            row
        })
        .collect();
    let sweep_path = out.join("sweep.csv");
    write(&sweep_path, csv_bytes(&header, &rows)?)?;
    Ok(SweepOutcome {
        cells: cells
            .into_iter()
            .zip(sweep_cells)
            .map(|(k, c)| (k, c.summary))
            .collect(),
        k_max,
        passed,
        written: vec![report_path, sweep_path],
    })
}
