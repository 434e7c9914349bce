use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{PackingMode, DEFAULT_MAX_SEQS};
use crate::error::{Error, Result};
use crate::model::checkpoint::Dtype;
use crate::model::ModelConfig;
use crate::optim::OptimConfig;

/// Where training sequences come from. Exactly one source must be set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_fasta: Option<PathBuf>,
    /// Generate this many tokens from the built-in protein-like HMM instead.
    pub synthetic_tokens: Option<usize>,
    pub holdout_fraction: f64,
    /// Longer sequences are randomly cropped to this many tokens each epoch.
    pub crop_len: usize,
    pub token_budget: usize,
    pub max_seqs: usize,
    pub packing: PackingMode,
    /// Shuffle sequence order every epoch before packing.
    pub shuffle: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_fasta: None,
            synthetic_tokens: None,
            holdout_fraction: 0.0004,
            crop_len: 16384,
            token_budget: 131_072,
            max_seqs: DEFAULT_MAX_SEQS,
            packing: PackingMode::StrictReset,
            shuffle: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Optimizer steps; 0 means one pass over the first epoch's batches.
    pub steps: usize,
    pub init_seed: u64,
    /// Seeds the holdout split, the per-epoch crops and the shuffles.
    pub data_seed: u64,
    /// Holdout evaluation period in steps; 0 evaluates only at the end.
    pub eval_every: usize,
    /// Checkpoint period in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub checkpoint_dtype: Dtype,
    /// Progress line on stderr every this many steps; 0 is silent.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 0,
            init_seed: 0,
            data_seed: 0,
            eval_every: 0,
            checkpoint_every: 0,
            checkpoint_dtype: Dtype::F64,
            log_every: 10,
        }
    }
}

/// Everything a training run depends on. The resolved config is written to
/// `out_dir/run.toml`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Relative data paths resolve against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(p) = &cfg.data.train_fasta {
            if p.is_relative() {
                cfg.data.train_fasta = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("config serialisation: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let d = &self.data;
        match (&d.train_fasta, d.synthetic_tokens) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(Error::Config(
                    "set exactly one of data.train_fasta and data.synthetic_tokens".into(),
                ))
            }
        }
        if !(d.holdout_fraction > 0.0 && d.holdout_fraction < 1.0) {
            return Err(Error::Config(format!(
                "data.holdout_fraction {} not in (0, 1)",
                d.holdout_fraction
            )));
        }
        if d.crop_len < 10 || d.crop_len > self.model.max_seq_len {
            return Err(Error::Config(format!(
                "data.crop_len {} must lie in [10, model.max_seq_len = {}]",
                d.crop_len, self.model.max_seq_len
            )));
        }
        if d.token_budget < d.crop_len {
            return Err(Error::Config(format!(
                "data.token_budget {} is below data.crop_len {}",
                d.token_budget, d.crop_len
            )));
        }
        if d.max_seqs == 0 {
            return Err(Error::Config("data.max_seqs must be at least 1".into()));
        }
        if d.packing == PackingMode::EosSeparator && d.token_budget > self.model.max_seq_len {
            return Err(Error::Config(
                "eos-separator packing needs data.token_budget <= model.max_seq_len".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let mut cfg = RunConfig {
            out_dir: "runs/x".into(),
            ..Default::default()
        };
        cfg.data.synthetic_tokens = Some(1000);
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn minimal_file_takes_defaults() {
        let cfg =
            RunConfig::from_toml("out_dir = \"r\"\n[data]\ntrain_fasta = \"a.fa\"\n").unwrap();
        assert_eq!(cfg.optim, OptimConfig::default());
        assert_eq!(cfg.model, ModelConfig::full());
        assert_eq!(cfg.data.token_budget, 131_072);
    }

    #[test]
    fn bad_configs() {
        assert!(RunConfig::from_toml("out_dir = \"r\"\n").is_err());
        assert!(
            RunConfig::from_toml("out_dir = \"r\"\nbogus = 1\n[data]\nsynthetic_tokens = 5\n")
                .is_err()
        );
        let t = "out_dir = \"r\"\n[data]\nsynthetic_tokens = 5\ncrop_len = 4\n";
        assert!(RunConfig::from_toml(t).is_err());
    }
}
