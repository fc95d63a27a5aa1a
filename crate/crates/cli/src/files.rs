//! Error reporting, input loading and the run manifest.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use flexcraft_core::internal_model::InternalModelDesign;
use flexcraft_core::scenario::load_scenario;
use flexcraft_core::sim::{read_csv, Layout, Scenario, Trajectory};
use flexcraft_core::Error;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Exit code for runtime failures (synthesis, divergence, failed gates).
pub const EXIT_RUNTIME: u8 = 1;
/// Exit code for usage and schema errors, and for unsatisfied checks.
pub const EXIT_USAGE: u8 = 2;

/// A failure printed as one line `error[kind]: message`.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            kind: "usage",
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn runtime(kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            kind,
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }

    /// Prefixes the message with the name of the stage that failed.
    pub fn in_stage(mut self, stage: &str) -> Self {
        self.message = format!("stage {stage}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line: String = self
            .message
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect::<Vec<_>>()
            .join("; ");
        write!(f, "error[{}]: {}", self.kind, one_line)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (kind, code) = match &e {
            Error::Schema(_) | Error::Json(_) | Error::Csv(_) => ("schema", EXIT_USAGE),
            Error::InvalidInput(_) => ("invalid-input", EXIT_RUNTIME),
            Error::Configuration(_) => ("configuration", EXIT_RUNTIME),
            Error::Dimension(_) => ("dimension", EXIT_RUNTIME),
            Error::Synthesis { .. } => ("synthesis", EXIT_RUNTIME),
            Error::BasisInadequate { .. } => ("basis", EXIT_RUNTIME),
            Error::Certificate(_) => ("certificate", EXIT_RUNTIME),
            Error::Diverged { .. } => ("diverged", EXIT_RUNTIME),
            Error::Io(_) => ("io", EXIT_RUNTIME),
        };
        CliError {
            kind,
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Reads an input file; a missing or unreadable input is a usage error.
pub fn read_input(path: &Path, what: &str) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::usage(format!("cannot read {what} '{}': {e}", path.display())))
}

fn utf8(bytes: Vec<u8>, path: &Path, what: &str) -> CliResult<String> {
    String::from_utf8(bytes).map_err(|_| CliError {
        kind: "schema",
        code: EXIT_USAGE,
        message: format!("{what} '{}' is not UTF-8", path.display()),
    })
}

pub fn load_scenario_path(path: &Path) -> CliResult<(Scenario, Vec<u8>)> {
    let bytes = read_input(path, "scenario")?;
    let text = utf8(bytes.clone(), path, "scenario")?;
    Ok((load_scenario(&text)?, bytes))
}

pub fn load_design_path(path: &Path) -> CliResult<(InternalModelDesign, Vec<u8>)> {
    let bytes = read_input(path, "design")?;
    let text = utf8(bytes.clone(), path, "design")?;
    Ok((InternalModelDesign::from_json(&text)?, bytes))
}

/// Reads a trajectory and checks that its columns fit the scenario and design.
pub fn load_trajectory_path(path: &Path, scenario: &Scenario, design: &InternalModelDesign) -> CliResult<Trajectory> {
    let bytes = read_input(path, "trajectory")?;
    let traj = read_csv(bytes.as_slice())?;
    let expected = Layout::new(design, scenario.spacecraft.modes(), scenario.n_mu());
    if traj.layout != expected {
        return Err(CliError {
            kind: "schema",
            code: EXIT_USAGE,
            message: format!(
                "trajectory '{}' columns do not match the scenario and design (found {:?}, expected {:?})",
                path.display(),
                traj.layout,
                expected
            ),
        });
    }
    Ok(traj)
}

pub fn write_output(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::runtime("io", format!("cannot create '{}': {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::runtime("io", format!("cannot write '{}': {e}", path.display())))
}

/// Creates `dir`, refusing a non-empty existing directory unless `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(CliError::usage(format!("'{}' exists and is not a directory", dir.display())));
        }
        let non_empty = fs::read_dir(dir)
            .map_err(|e| CliError::runtime("io", format!("cannot list '{}': {e}", dir.display())))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(CliError::usage(format!(
                "output directory '{}' is not empty (pass --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::runtime("io", format!("cannot create '{}': {e}", dir.display())))
}

pub fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// Everything needed to repeat a simulation. Contains no timestamps, so
/// identical inputs give an identical manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub scenario: PathBuf,
    pub design: PathBuf,
    pub out_dir: PathBuf,
    pub dt: f64,
    pub decimate: usize,
    pub t_final: f64,
    /// SHA-256 over the scenario bytes, the design bytes and the overrides.
    pub input_sha256: String,
    pub trajectory: String,
    pub trajectory_sha256: String,
    pub records: usize,
    pub steps: usize,
    pub deterministic: bool,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}
