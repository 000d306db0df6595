//! Report envelope, file persistence, and the stage profiler.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Everything a command hands back: the report payload, CSV exports as
/// (basename, contents), and the process exit code.
pub struct CommandOutcome {
    pub report: serde_json::Value,
    pub csv: Vec<(String, String)>,
    pub exit: u8,
}

impl CommandOutcome {
    pub fn ok(report: serde_json::Value) -> Self {
        CommandOutcome {
            report,
            csv: Vec::new(),
            exit: 0,
        }
    }
}

/// Versioned wrapper around every report. The timestamp is the only field
/// excluded from the reproducibility contract.
#[derive(Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Envelope<'a> {
    pub schema_version: u32,
    pub command: &'a str,
    pub timestamp: String,
    pub config: &'a ExperimentConfig,
    pub report: serde_json::Value,
}

impl<'a> Envelope<'a> {
    pub fn new(command: &'a str, config: &'a ExperimentConfig, report: serde_json::Value) -> Self {
        Envelope {
            schema_version: SCHEMA_VERSION,
            command,
            timestamp: humantime::format_rfc3339_seconds(std::time::SystemTime::now())
                .to_string(),
            config,
            report,
        }
    }
}

pub fn write_outputs(
    dir: &Path,
    command: &str,
    rendered_report: &str,
    csv: &[(String, String)],
) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("writing under {}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let report_path = dir.join(format!("{command}-report.json"));
    let mut f = std::fs::File::create(&report_path).map_err(io)?;
    writeln!(f, "{rendered_report}").map_err(io)?;
    for (name, contents) in csv {
        std::fs::write(dir.join(name), contents).map_err(io)?;
    }
    eprintln!("wrote {}", report_path.display());
    Ok(())
}

/// Wall-clock per named stage, printed to stderr on demand. Timing always
/// runs; only the printing is gated, so `--profile` cannot change results.
pub struct Profiler {
    enabled: bool,
    stages: Vec<(&'static str, f64)>,
}

impl Profiler {
    pub fn new(enabled: bool) -> Self {
        Profiler {
            enabled,
            stages: Vec::new(),
        }
    }

    pub fn time<T>(&mut self, stage: &'static str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages.push((stage, start.elapsed().as_secs_f64()));
        out
    }

    pub fn report(&self) {
        if !self.enabled {
            return;
        }
        for (stage, secs) in &self.stages {
            eprintln!("profile: {stage:<16} {secs:>10.4}s");
        }
    }
}
