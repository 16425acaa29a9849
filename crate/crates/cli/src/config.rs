//! JSON run configuration. Unknown keys are rejected everywhere.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mpm_core::filter::SortPayload;
use mpm_core::model::ModelSpec;
use mpm_core::sampler::SamplerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub theta: Vec<f64>,
    #[serde(rename = "T")]
    pub t: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Simulate(SimulateSpec),
    File(PathBuf),
}

fn default_dims() -> Vec<usize> {
    vec![10, 30]
}
fn default_ns() -> Vec<usize> {
    vec![500, 1000, 2000]
}
fn default_reps() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentSpec {
    Variance {
        theta: Vec<f64>,
        /// `[N, S]` pairs.
        grid: Vec<(usize, usize)>,
        trims: Vec<f64>,
        replications: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        sort_payload: SortPayload,
    },
    Correlation {
        theta: Vec<f64>,
        theta_prime: Vec<f64>,
        #[serde(rename = "S")]
        s: usize,
        #[serde(rename = "N")]
        n: usize,
        #[serde(default)]
        trim: f64,
        rho_u: f64,
        replications: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        sort_payload: SortPayload,
    },
    Sortbench {
        #[serde(default = "default_dims")]
        dims: Vec<usize>,
        #[serde(default = "default_ns")]
        ns: Vec<usize>,
        #[serde(default = "default_reps")]
        reps: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl ExperimentSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentSpec::Variance { .. } => "variance",
            ExperimentSpec::Correlation { .. } => "correlation",
            ExperimentSpec::Sortbench { .. } => "sortbench",
        }
    }

    pub fn set_seed(&mut self, value: u64) {
        match self {
            ExperimentSpec::Variance { seed, .. }
            | ExperimentSpec::Correlation { seed, .. }
            | ExperimentSpec::Sortbench { seed, .. } => *seed = value,
        }
    }
}

/// Everything a command needs; each command checks for the sections it uses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub data: Option<DataSource>,
    #[serde(default)]
    pub sampler: Option<SamplerConfig>,
    #[serde(default)]
    pub experiment: Option<ExperimentSpec>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Filter worker threads; defaults to the core count capped at `S`.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Reads the `config` section of a run manifest.
    pub fn from_manifest(path: &Path) -> Result<(Self, Option<String>)> {
        #[derive(Deserialize)]
        struct Partial {
            config: RunConfig,
            dataset: Option<DatasetInfo>,
        }
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let m: Partial = serde_json::from_str(&text)
            .with_context(|| format!("parsing manifest {}", path.display()))?;
        Ok((m.config, m.dataset.map(|d| d.sha256)))
    }

    pub fn model(&self) -> Result<ModelSpec> {
        match self.model {
            Some(m) => Ok(m),
            None => bail!("config is missing `model`"),
        }
    }

    pub fn data(&self) -> Result<&DataSource> {
        self.data.as_ref().context("config is missing `data`")
    }

    pub fn sampler(&self) -> Result<&SamplerConfig> {
        self.sampler.as_ref().context("config is missing `sampler`")
    }

    pub fn output(&self) -> Result<&Path> {
        self.output
            .as_deref()
            .context("no output directory: set `output` or pass --out")
    }
}

/// Dataset identity recorded in manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub sha256: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub d: usize,
    pub source: DataSource,
}
