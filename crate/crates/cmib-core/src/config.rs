//! Experiment configuration: a single TOML file with one section per
//! concern (environment, bottleneck knobs, latent training, the frozen
//! readout pre-fit, evaluation, output placement). The canonical
//! serialization of the parsed config is hashed with SHA-256 and that
//! digest stamps every artifact a run produces, so artifacts from
//! different configurations can never be mixed silently.

use std::env;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::EnvParams;
use crate::error::{CmibError, Result};
use crate::eval::Method;
use crate::model::{PrefitConfig, TrainConfig};

/// Environment variable overriding `[output] dir`.
pub const OUT_DIR_VAR: &str = "CMIB_OUT";
/// Environment variable overriding the worker-thread count.
pub const PARALLELISM_VAR: &str = "CMIB_PARALLEL";

/// Knobs of the two bottleneck stages: the text card's token budget and
/// utility weight, and the latent's dimensions and likelihood weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BottleneckSection {
    /// Token budget for the text card.
    pub card_budget: usize,
    /// Utility weight in card selection (`length - beta_c * utility`).
    pub beta_c: f64,
    /// Number of graduated-verbosity card candidates.
    pub n_candidates: usize,
    /// Latent dimension.
    pub latent_dim: usize,
    /// Projected prefix width; must match the frozen model's prefix slot.
    pub prefix_dim: usize,
    /// Likelihood weight in the latent surrogate objective.
    pub beta_z: f64,
}

impl Default for BottleneckSection {
    fn default() -> Self {
        BottleneckSection {
            card_budget: 64,
            beta_c: 50.0,
            n_candidates: 8,
            latent_dim: 8,
            prefix_dim: 16,
            beta_z: 4.0,
        }
    }
}

/// Latent-stage optimization settings (per-arm seeds come from the
/// evaluation section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { steps: 6000, batch: 32, lr: 1e-3 }
    }
}

/// Evaluation grid: independent repeats per arm (for the consistency
/// metric), the seeds averaged over, the arms to run, and how many tasks
/// each seed evaluates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n_repeats: usize,
    pub seeds: Vec<u64>,
    pub arms: Vec<String>,
    pub tasks_per_seed: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            n_repeats: 3,
            seeds: vec![1, 2, 3, 4, 5],
            arms: vec![
                "vanilla".into(),
                "text_only".into(),
                "independent_cz".into(),
                "cmib".into(),
                "sc_k1".into(),
                "sc_k5".into(),
            ],
            tasks_per_seed: 24,
        }
    }
}

/// Where artifacts land. Relative paths are taken as given (relative to
/// the working directory of the invoking process).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

/// The complete experiment specification. Every field has a default, so
/// an empty TOML file is a valid (default) configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub env: EnvParams,
    pub bottleneck: BottleneckSection,
    pub train: TrainSection,
    pub frozen: PrefitConfig,
    pub eval: EvalSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    /// Parses a TOML document and validates every range.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CmibError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Canonical serialization: field order fixed by the struct layout,
    /// floats rendered by TOML's shortest round-trip form.
    pub fn canonical_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_toml().as_bytes());
        format!("{:x}", hasher.finalize())
    }

    /// Leading 12 hex digits of [`Self::hash`], used in file names.
    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }

    /// Output directory after applying the environment override.
    pub fn output_dir(&self) -> PathBuf {
        match env::var(OUT_DIR_VAR) {
            Ok(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output.dir.clone(),
        }
    }

    /// Worker-thread count: the environment override, else 1 (sequential).
    pub fn parallelism(&self) -> usize {
        env::var(PARALLELISM_VAR)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or(1)
    }

    /// Parsed evaluation arms, in config order.
    pub fn arms(&self) -> Result<Vec<Method>> {
        self.eval.arms.iter().map(|tag| Method::parse(tag)).collect()
    }

    /// Latent training settings for one seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.train.steps,
            batch: self.train.batch,
            lr: self.train.lr,
            beta_z: self.bottleneck.beta_z,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        let b = &self.bottleneck;
        if b.card_budget == 0 {
            return Err(CmibError::invalid_parameter("card_budget", "must be positive"));
        }
        if !b.beta_c.is_finite() || b.beta_c < 0.0 {
            return Err(CmibError::invalid_parameter(
                "beta_c",
                "must be finite and non-negative",
            ));
        }
        if b.n_candidates == 0 {
            return Err(CmibError::invalid_parameter("n_candidates", "must be positive"));
        }
        if b.latent_dim == 0 {
            return Err(CmibError::invalid_parameter("latent_dim", "must be positive"));
        }
        if b.prefix_dim < 2 * self.env.horizon {
            return Err(CmibError::invalid_parameter(
                "prefix_dim",
                format!("must be at least 2 * horizon = {}", 2 * self.env.horizon),
            ));
        }
        if !b.beta_z.is_finite() || b.beta_z < 0.0 {
            return Err(CmibError::invalid_parameter(
                "beta_z",
                "must be finite and non-negative",
            ));
        }
        let t = &self.train;
        if t.steps == 0 || t.batch == 0 {
            return Err(CmibError::invalid_parameter(
                "train",
                "steps and batch must be positive",
            ));
        }
        if !t.lr.is_finite() || t.lr <= 0.0 {
            return Err(CmibError::invalid_parameter("lr", "must be finite and positive"));
        }
        if self.frozen.tasks == 0 || self.frozen.batch == 0 || self.frozen.hidden == 0 {
            return Err(CmibError::invalid_parameter(
                "frozen",
                "tasks, batch, and hidden must be positive",
            ));
        }
        let e = &self.eval;
        if e.n_repeats < 2 {
            return Err(CmibError::invalid_parameter(
                "n_repeats",
                "consistency needs at least 2 repeats",
            ));
        }
        if e.seeds.is_empty() {
            return Err(CmibError::invalid_parameter("seeds", "must be nonempty"));
        }
        let mut sorted = e.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != e.seeds.len() {
            return Err(CmibError::invalid_parameter("seeds", "must be distinct"));
        }
        if e.arms.is_empty() {
            return Err(CmibError::invalid_parameter("arms", "must be nonempty"));
        }
        let mut arms = Vec::new();
        for tag in &e.arms {
            let m = Method::parse(tag)?;
            if arms.contains(&m) {
                return Err(CmibError::invalid_parameter(
                    "arms",
                    format!("duplicate arm {tag}"),
                ));
            }
            arms.push(m);
        }
        if e.tasks_per_seed == 0 {
            return Err(CmibError::invalid_parameter("tasks_per_seed", "must be positive"));
        }
        if self.output.dir.as_os_str().is_empty() {
            return Err(CmibError::invalid_parameter("output.dir", "must be nonempty"));
        }
        Ok(())
    }
}
