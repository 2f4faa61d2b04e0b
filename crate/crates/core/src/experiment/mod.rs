//! Experiment configuration, the reproduction protocols, and their
//! persisted results.

mod export;
mod protocols;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::batch::MpcConfig;
use crate::models::mars::MarsParams;
use crate::models::quadrotor::QuadrotorTask;
use crate::models::SuccessThresholds;
use crate::scp::ScpConfig;

pub use export::{export_trajectory, import_trajectory_json, labels_for, ExportFormat, TrajectoryLabels};
pub use protocols::{ablation_runs, bench_entries, mars_bound_violation, mars_entries, AblationRun};

/// Output directory override, ahead of the config file but behind `--output`.
pub const OUTPUT_ENV: &str = "CSCP_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error(transparent)]
    Solver(#[from] crate::scp::ScpError),
    #[error(transparent)]
    Problem(#[from] crate::ocp::OcpError),
}

impl ExperimentError {
    fn config(path: &str, message: impl Into<String>) -> Self {
        Self::Config { path: path.to_string(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Ablation,
    QuadBench,
    RobustMpc,
    MarsBatch,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    pub task: QuadrotorTask,
    pub rho_finals: Vec<f64>,
    pub inner_iterations: Vec<usize>,
    /// Inner iteration count used along the `ρ_f` axis.
    pub baseline_inner: usize,
    /// `ρ_f` used along the inner-iteration axis.
    pub baseline_rho_final: f64,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            task: QuadrotorTask::ablation(),
            rho_finals: vec![1e3, 1e4, 1e5, 1e6],
            inner_iterations: vec![100, 150, 200, 250],
            baseline_inner: 100,
            baseline_rho_final: 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub start: [f64; 3],
    pub goal: [f64; 3],
    pub horizon: usize,
    pub duration: f64,
    pub obstacles: usize,
    pub radius_range: (f64, f64),
    /// Minimum gap between an obstacle and either endpoint.
    pub clearance: f64,
    /// Std of the Gaussian jitter added to the straight-line nominal positions.
    pub nominal_noise: f64,
    pub min_success_rate: f64,
    pub max_mean_defect: f64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            start: [-5.0, -5.0, 2.0],
            goal: [5.0, 5.0, 2.0],
            horizon: 40,
            duration: 6.0,
            obstacles: 3,
            radius_range: (1.0, 2.0),
            clearance: 0.5,
            nominal_noise: 0.05,
            min_success_rate: 0.85,
            max_mean_defect: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarsSettings {
    pub params: MarsParams,
    pub dispersion: f64,
    pub min_success_rate: f64,
    /// Allowed excursion of mass and thrust magnitude past their bounds.
    pub bound_tolerance: f64,
}

impl Default for MarsSettings {
    fn default() -> Self {
        Self { params: MarsParams::default(), dispersion: 0.05, min_success_rate: 0.95, bound_tolerance: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcCriteria {
    pub capture_within: usize,
    pub max_u0_dispersion: f64,
}

impl Default for MpcCriteria {
    fn default() -> Self {
        Self { capture_within: 60, max_u0_dispersion: 1e-6 }
    }
}

/// Problem solved by the `custom` experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum CustomProblem {
    Quadrotor { task: QuadrotorTask },
    Mars {
        #[serde(default)]
        params: MarsParams,
    },
}

impl Default for CustomProblem {
    fn default() -> Self {
        CustomProblem::Quadrotor { task: QuadrotorTask::ablation() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub batch: usize,
    pub output_dir: Option<PathBuf>,
    pub scp: ScpConfig,
    pub thresholds: SuccessThresholds,
    pub ablation: AblationSettings,
    pub bench: BenchSettings,
    pub mpc: MpcConfig,
    pub mpc_criteria: MpcCriteria,
    pub mars: MarsSettings,
    pub custom: CustomProblem,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::Custom,
            seed: 0,
            batch: 1,
            output_dir: None,
            scp: ScpConfig::default(),
            thresholds: SuccessThresholds::default(),
            ablation: AblationSettings::default(),
            bench: BenchSettings::default(),
            mpc: MpcConfig::default(),
            mpc_criteria: MpcCriteria::default(),
            mars: MarsSettings::default(),
            custom: CustomProblem::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.scp.validate().map_err(|e| ExperimentError::config("scp", e.to_string()))?;
        if self.batch == 0 {
            return Err(ExperimentError::config("batch", "must be at least 1"));
        }
        if self.mpc.scenarios == 0 {
            return Err(ExperimentError::config("mpc.scenarios", "must be at least 1"));
        }
        if !(self.mars.dispersion >= 0.0) {
            return Err(ExperimentError::config("mars.dispersion", "must be nonnegative"));
        }
        let a = &self.ablation;
        if a.rho_finals.is_empty() || a.inner_iterations.is_empty() {
            return Err(ExperimentError::config("ablation", "sweep axes must be non-empty"));
        }
        Ok(())
    }
}

/// A parsed config together with the exact text it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub source: String,
}

impl LoadedConfig {
    pub fn parse(source: &str) -> Result<Self, ExperimentError> {
        let de = toml::Deserializer::parse(source).map_err(|e| ExperimentError::config("", e.to_string()))?;
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ExperimentError::config(&path, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(Self { config, source: source.to_string() })
    }

    pub fn read(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    /// SHA-256 of the source text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.source.as_bytes()))
    }
}

/// One CSV table: a header row and string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Pass/fail of one check with the measured value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }
}

#[derive(Debug, Clone)]
pub struct ResultBundle {
    pub experiment: ExperimentKind,
    /// Protocol-specific numbers.
    pub metrics: serde_json::Value,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
    pub config_source: String,
    pub config_hash: String,
    pub seed: u64,
    /// Flag overrides applied on top of the config file.
    pub overrides: Vec<String>,
}

impl ResultBundle {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "experiment": self.experiment,
            "passed": self.passed(),
            "checks": self.checks,
            "metrics": self.metrics,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "overrides": self.overrides,
            "tables": self.tables.iter().map(|t| format!("{}.csv", t.name)).collect::<Vec<_>>(),
            "config": self.config_source,
        })
    }

    /// Writes `summary.json` and one CSV per table. Each CSV starts with a
    /// `#` line carrying the config hash and seed, then the header row.
    pub fn write(&self, dir: &Path) -> Result<(), ExperimentError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ExperimentError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let summary = dir.join("summary.json");
        fs::write(&summary, serde_json::to_string_pretty(&self.summary())?).map_err(io(&summary))?;
        for t in &self.tables {
            let path = dir.join(format!("{}.csv", t.name));
            let mut buf = format!("# config_hash={} seed={}\n", self.config_hash, self.seed).into_bytes();
            {
                let mut w = csv::Writer::from_writer(&mut buf);
                w.write_record(&t.header)?;
                for r in &t.rows {
                    w.write_record(r)?;
                }
                w.flush().map_err(io(&path))?;
            }
            fs::write(&path, buf).map_err(io(&path))?;
        }
        Ok(())
    }
}

/// Precedence: explicit flag, then [`OUTPUT_ENV`], then the config, then `results/`.
pub fn resolve_output_dir(flag: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    config.output_dir.clone().unwrap_or_else(|| PathBuf::from("results"))
}

/// Runs the protocol named by `config.experiment`.
pub fn run_experiment(loaded: &LoadedConfig, config: &ExperimentConfig, overrides: Vec<String>) -> Result<ResultBundle, ExperimentError> {
    config.validate()?;
    let (metrics, checks, tables) = match config.experiment {
        ExperimentKind::Ablation => protocols::ablation(config)?,
        ExperimentKind::QuadBench => protocols::quad_bench(config)?,
        ExperimentKind::RobustMpc => protocols::robust_mpc(config)?,
        ExperimentKind::MarsBatch => protocols::mars_batch(config)?,
        ExperimentKind::Custom => protocols::custom(config)?,
    };
    Ok(ResultBundle {
        experiment: config.experiment,
        metrics,
        checks,
        tables,
        config_source: loaded.source.clone(),
        config_hash: loaded.hash(),
        seed: config.seed,
        overrides,
    })
}
