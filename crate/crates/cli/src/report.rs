//! Run reports, scenario digests and the CSV/JSON writers shared by every
//! command.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use shortfall_core::model::{read_scenario_file, MarketScenario};

use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A scenario file together with the digest of its canonical form.
pub struct LoadedScenario {
    pub scenario: MarketScenario,
    pub digest: String,
}

pub fn load(path: &Path) -> Result<LoadedScenario, CliError> {
    let file = read_scenario_file(path)?;
    let digest = hex::encode(Sha256::digest(file.canonical_json().as_bytes()));
    let scenario = file.into_scenario_allow_degenerate()?;
    Ok(LoadedScenario { scenario, digest })
}

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub wall_time_seconds: f64,
    pub threads: usize,
}

/// Everything needed to trace a result back to its inputs. `metadata` holds
/// the only fields that change between identical invocations.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub scenario_digest: String,
    pub parameters: Value,
    pub outputs: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metadata: Option<Metadata>,
}

impl RunReport {
    pub fn new(command: &str, digest: &str, parameters: Value, outputs: Value) -> Self {
        RunReport {
            tool: "shortfall-ld",
            version: VERSION,
            command: command.to_string(),
            scenario_digest: digest.to_string(),
            parameters,
            outputs,
            metadata: None,
        }
    }

    /// Compact single-line JSON without the metadata block.
    pub fn primary_line(&self) -> String {
        let mut bare = self.clone();
        bare.metadata = None;
        serde_json::to_string(&bare).expect("report serializes")
    }

    pub fn primary_pretty(&self) -> String {
        let mut bare = self.clone();
        bare.metadata = None;
        serde_json::to_string_pretty(&bare).expect("report serializes")
    }
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

pub fn write_report(path: &Path, report: &RunReport) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    write_file(path, &text)
}

/// Round-trip float formatting: 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// A CSV table with a header row, written with LF line ends.
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| num(*v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Whitespace-separated columns with a commented header, for gnuplot.
    pub fn plot_data(&self) -> String {
        let mut out = format!("# {}\n", self.columns.join(" "));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| num(*v)).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        out
    }
}

pub fn print_stdout(text: &str) -> Result<(), CliError> {
    let mut lock = std::io::stdout().lock();
    lock.write_all(text.as_bytes()).and_then(|_| lock.flush()).or_else(|e| {
        // a closed pipe is not an error for a command-line filter
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            Ok(())
        } else {
            Err(CliError::Input(format!("cannot write to stdout: {e}")))
        }
    })
}
