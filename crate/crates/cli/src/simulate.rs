use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stratkit_sim::harness::describe_truths;
use stratkit_sim::{run_grid, DesignChoice, EstimatorChoice, MCConfig, MCResult, Param};

use crate::{io_err, CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

fn default_eta() -> f64 {
    0.5
}

fn default_level() -> f64 {
    0.95
}

fn default_max_fail_rate() -> f64 {
    0.05
}

/// The `simulate` config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub reps: usize,
    pub n_grid: Vec<usize>,
    pub params: Vec<Param>,
    pub models: Vec<u8>,
    pub designs: Vec<DesignChoice>,
    pub estimators: Vec<EstimatorChoice>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub sigma_override: Option<f64>,
    pub master_seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Highest per-cell failure rate that still counts as a clean run.
    #[serde(default = "default_max_fail_rate")]
    pub max_fail_rate: f64,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        if !(0.0..=1.0).contains(&cfg.max_fail_rate) {
            return Err(CliError::Config(format!("max_fail_rate {} outside [0, 1]", cfg.max_fail_rate)));
        }
        cfg.mc_config().validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn mc_config(&self) -> MCConfig {
        MCConfig {
            reps: self.reps,
            n_grid: self.n_grid.clone(),
            params: self.params.clone(),
            models: self.models.clone(),
            designs: self.designs.clone(),
            estimators: self.estimators.clone(),
            eta: self.eta,
            sigma_override: self.sigma_override,
            master_seed: self.master_seed,
            level: self.level,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub result: MCResult,
    pub csv_path: PathBuf,
    pub markdown_path: PathBuf,
    /// Cells whose failure rate exceeded `max_fail_rate`.
    pub failing_cells: usize,
}

/// Runs the grid and writes `grid.csv` and `grid.md` into `out_dir`.
pub fn cmd_simulate(config: &Path, out_dir: &Path) -> Result<SimulateOutcome> {
    let text = std::fs::read_to_string(config).map_err(io_err(config))?;
    let cfg = RunConfig::parse(&text)?;
    let result = run_grid(&cfg.mc_config())?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let csv_path = out_dir.join("grid.csv");
    std::fs::write(&csv_path, result.to_csv()).map_err(io_err(&csv_path))?;
    let markdown_path = out_dir.join("grid.md");
    let md = format!("{}\n{}", result.to_markdown(), describe_truths(&result));
    std::fs::write(&markdown_path, md).map_err(io_err(&markdown_path))?;
    let failing_cells = result.cells.iter().filter(|c| c.fail_rate > cfg.max_fail_rate).count();
    Ok(SimulateOutcome {
        result,
        csv_path,
        markdown_path,
        failing_cells,
    })
}
