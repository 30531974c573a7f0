//! Experiment runner on top of `bmcompact-core`: TOML configuration, seeded
//! commands, body/map/net files and jsonl/csv/svg reports.

pub mod commands;
pub mod config;
pub mod emit;
pub mod formats;
pub mod pool;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use config::{ExperimentConfig, Format, LoadedConfig};
use emit::Report;
use pool::Pool;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("numeric tolerance failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<bmcompact_core::Error> for CliError {
    fn from(e: bmcompact_core::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Validation(vec![e.to_string()])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Sample,
    Gauge,
    Conc,
    Dist,
    Separate,
    Net,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Sample => "sample",
            Command::Gauge => "gauge",
            Command::Conc => "conc",
            Command::Dist => "dist",
            Command::Separate => "separate",
            Command::Net => "net",
        }
    }

    fn plots(self) -> bool {
        matches!(self, Command::Conc | Command::Separate)
    }
}

/// Command-line values that take precedence over the configuration file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub formats: Vec<Format>,
    pub workers: Option<usize>,
    pub cap_enumeration: Option<u128>,
}

/// Configuration after overrides, ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub command: Command,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub formats: Vec<Format>,
    pub cap: Option<u128>,
    pub base_dir: PathBuf,
}

impl Plan {
    /// Applies overrides and validates everything at once.
    pub fn new(command: Command, loaded: LoadedConfig, overrides: Overrides, base_dir: &Path) -> Result<Self, CliError> {
        let mut cfg = loaded.config;
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(w) = overrides.workers {
            cfg.workers = w;
        }
        if let Some(o) = overrides.out {
            cfg.output.dir = o;
        }
        if !overrides.formats.is_empty() {
            cfg.output.formats = overrides.formats;
        }
        let mut errors = cfg.validate();
        let present = match command {
            Command::Sample => cfg.sample.is_some(),
            Command::Gauge => cfg.gauge.is_some(),
            Command::Conc => cfg.conc.is_some(),
            Command::Dist => cfg.dist.is_some(),
            Command::Separate => cfg.separate.is_some(),
            Command::Net => cfg.net.is_some(),
        };
        if !present {
            errors.push(format!("configuration has no [{}] section", command.name()));
        }
        if cfg.output.formats.contains(&Format::Svg) && !command.plots() {
            errors.push(format!("svg output is available for conc and separate, not {}", command.name()));
        }
        if overrides.cap_enumeration == Some(0) {
            errors.push("--cap-enumeration must be at least 1".into());
        }
        if !errors.is_empty() {
            return Err(CliError::Validation(errors));
        }
        let mut formats = cfg.output.formats.clone();
        formats.dedup();
        Ok(Self {
            command,
            seed: cfg.seed,
            workers: cfg.workers,
            out: cfg.output.dir.clone(),
            formats,
            cap: overrides.cap_enumeration,
            config: cfg,
            config_hash: loaded.hash,
            base_dir: base_dir.to_path_buf(),
        })
    }

    /// Runs the command without touching the file system (except to read
    /// input bodies and maps).
    pub fn compute(&self, timestamp: u64) -> Result<commands::Computed, CliError> {
        let pool = Pool::new(self.workers).map_err(|e| CliError::Io(format!("worker pool: {e}")))?;
        let ctx = commands::Context {
            config: &self.config,
            config_hash: &self.config_hash,
            seed: self.seed,
            timestamp,
            pool: &pool,
            cap: self.cap,
            base_dir: &self.base_dir,
        };
        match self.command {
            Command::Sample => commands::sample(&ctx),
            Command::Gauge => commands::gauge(&ctx),
            Command::Conc => commands::conc(&ctx),
            Command::Dist => commands::dist(&ctx),
            Command::Separate => commands::separate(&ctx),
            Command::Net => commands::net(&ctx),
        }
    }
}

/// What a finished run wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: Report,
    pub files: Vec<PathBuf>,
    pub failures: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            3
        }
    }
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Computes, then writes artifacts and every requested report format.
pub fn run(plan: &Plan) -> Result<Outcome, CliError> {
    let computed = plan.compute(now())?;
    let mut files = Vec::new();
    for (name, text) in &computed.artifacts {
        let path = plan.out.join(name);
        emit::write_file(&path, text)?;
        files.push(path);
    }
    for f in &plan.formats {
        files.extend(emit::emit_report(&computed.report, *f, &plan.out)?);
    }
    Ok(Outcome { report: computed.report, files, failures: computed.failures })
}

/// Reads and parses a configuration file.
pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::Validation(vec![format!("{}: not utf-8", path.display())]))?;
    config::parse(&text).map_err(|e| CliError::Validation(vec![format!("{}: {e}", path.display())]))
}
