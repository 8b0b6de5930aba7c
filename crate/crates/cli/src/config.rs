use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hum_core::corpus::GenConfig;
use hum_core::encoder::{Dtype, EncoderConfig};
use hum_core::eval::Averaging;
use hum_core::trainloop::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::UsageError;

/// Where interactions come from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Generated from `RunConfig::gen`.
    #[default]
    Synthetic,
    /// A JSONL file of interaction records.
    Jsonl { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Timestamp quantile where validation starts.
    pub valid_quantile: f64,
    /// Timestamp quantile where test starts.
    pub test_quantile: f64,
    pub k_core: Option<usize>,
    pub min_token_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            valid_quantile: 0.7,
            test_quantile: 0.85,
            k_core: None,
            min_token_count: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Averaging used for summary tables and curves.
    pub averaging: Averaging,
    /// Noise fractions evaluated by `eval`; empty skips the noise curve.
    pub noise_fractions: Vec<f64>,
    pub noise_items_per_user: usize,
    pub noise_seed: u64,
    pub checkpoint_dtype: Dtype,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            averaging: Averaging::Macro,
            noise_fractions: Vec::new(),
            noise_items_per_user: 3,
            noise_seed: 11,
            checkpoint_dtype: Dtype::F64,
        }
    }
}

/// Everything one run needs. Each command writes the resolved form of this
/// next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Model seed; copied into the encoder and training configs on resolve.
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub gen: GenConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            out: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            gen: GenConfig::default(),
            encoder: EncoderConfig {
                d_model: 32,
                n_heads: 2,
                n_layers: 1,
                ffn_dim: 64,
                max_len: 128,
                ..Default::default()
            },
            train: TrainConfig {
                max_epochs: 20,
                ..Default::default()
            },
            eval: EvalOptions::default(),
        }
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Reads a JSON config. A missing or malformed file is a usage error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())).into())
    }

    /// Loads `path` when given, otherwise starts from the defaults.
    pub fn from_args(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let base = match path {
            Some(p) => Self::load(p)?,
            None => RunConfig::default(),
        };
        base.resolve(overrides)
    }

    /// Applies overrides and propagates the run seed.
    pub fn resolve(mut self, overrides: &Overrides) -> Result<Self> {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(out) = &overrides.out {
            self.out = out.clone();
        }
        self.encoder.seed = self.seed;
        self.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let q = (self.data.valid_quantile, self.data.test_quantile);
        if !(0.0 < q.0 && q.0 <= q.1 && q.1 < 1.0) {
            return Err(UsageError("split quantiles must satisfy 0 < valid <= test < 1".into()).into());
        }
        if self.eval.noise_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(UsageError("noise fractions must lie in [0, 1]".into()).into());
        }
        if self.data.source == DataSource::Synthetic {
            self.gen.validate().map_err(|e| UsageError(e.to_string()))?;
        }
        self.train.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::artifacts::write_atomic(path, self.to_json().as_bytes())
            .with_context(|| format!("writing {}", path.display()))
    }
}
