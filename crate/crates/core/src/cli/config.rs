use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::iterate::SolveOptions;
use crate::model::PollingModel;
use crate::sim::SimOptions;
use crate::verify::VerifyOptions;

use super::CliError;

/// Upper bound on the size of a configuration file.
pub const MAX_CONFIG_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    /// Relative paths are taken from the directory holding the config file.
    pub directory: PathBuf,
    #[serde(default = "all_formats")]
    pub formats: Vec<Format>,
}

fn all_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimBlock {
    pub n_cycles: u64,
    pub seed: u64,
    pub warmup_cycles: u64,
    pub batches: usize,
    pub joint_cap: u32,
    /// Model to simulate in `compare`; must match the analysed model's disciplines.
    pub model: Option<PollingModel>,
}

impl Default for SimBlock {
    fn default() -> Self {
        let d = SimOptions::default();
        Self {
            n_cycles: d.n_cycles,
            seed: d.seed,
            warmup_cycles: d.warmup_cycles,
            batches: d.batches,
            joint_cap: d.joint_cap,
            model: None,
        }
    }
}

impl SimBlock {
    pub fn options(&self) -> SimOptions {
        SimOptions {
            n_cycles: self.n_cycles,
            seed: self.seed,
            warmup_cycles: self.warmup_cycles,
            batches: self.batches,
            joint_cap: self.joint_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareBlock {
    pub z_max: f64,
    pub tv_max: f64,
}

impl Default for CompareBlock {
    fn default() -> Self {
        Self {
            z_max: 3.0,
            tv_max: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: PollingModel,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub sim: SimBlock,
    #[serde(default)]
    pub verify: VerifyOptions,
    #[serde(default)]
    pub compare: CompareBlock,
    pub output: OutputBlock,
}

impl RunConfig {
    /// Parses and checks a configuration; does not touch the file system.
    pub fn from_json_str(text: &str) -> Result<Self, CliError> {
        if text.len() > MAX_CONFIG_BYTES {
            return Err(CliError::Config(format!(
                "config is {} bytes, limit is {MAX_CONFIG_BYTES}",
                text.len()
            )));
        }
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads `path` and resolves the output directory against its parent.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json_str(&text)?;
        if cfg.output.directory.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.output.directory = base.join(&cfg.output.directory);
        }
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        let report = self.model.validate();
        if !report.passed() {
            return Err(CliError::Config(format!("model: {report}")));
        }
        if let Some(m) = &self.sim.model {
            let report = m.validate();
            if !report.passed() {
                return Err(CliError::Config(format!("sim.model: {report}")));
            }
        }
        if !(self.solver.tol > 0.0) {
            return Err(CliError::Config("solver.tol must be positive".into()));
        }
        if let (Some(n), Some(g)) = (self.solver.n_max, self.solver.grid) {
            if g < n + 1 {
                return Err(CliError::Config(format!("solver.grid {g} is below n_max + 1 = {}", n + 1)));
            }
        }
        if self.sim.n_cycles == 0 {
            return Err(CliError::Config("sim.n_cycles must be at least 1".into()));
        }
        if self.output.formats.is_empty() {
            return Err(CliError::Config("output.formats is empty".into()));
        }
        Ok(())
    }

    pub fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }

    /// The model simulated by `compare`, after checking it against the analysed one.
    pub fn sim_model(&self) -> Result<&PollingModel, CliError> {
        let Some(m) = &self.sim.model else {
            return Ok(&self.model);
        };
        let same = m.routing == self.model.routing
            && m.queues.len() == self.model.queues.len()
            && m
                .queues
                .iter()
                .zip(&self.model.queues)
                .all(|(a, b)| a.discipline == b.discipline);
        if same {
            Ok(m)
        } else {
            Err(CliError::Config(
                "sim.model disciplines or routing differ from model".into(),
            ))
        }
    }
}
