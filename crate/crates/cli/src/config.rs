//! Experiment configuration file: TOML with fixed sections, every key
//! optional, unknown keys rejected before anything runs.

use cepam_core::fl::{Scheme, TrainingConfig};
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentFile {
    pub experiment: ExperimentSection,
    pub model: ModelSection,
    pub data: DataSection,
    pub optimizer: OptimizerSection,
    pub quantizer: QuantizerSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub schemes: Vec<String>,
    pub seeds: Vec<u64>,
    pub rounds: u32,
    pub local_iters: u32,
    pub clients: u32,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            schemes: vec!["fl".to_string()],
            seeds: vec![1, 2, 3, 4, 5],
            rounds: 60,
            local_iters: 15,
            clients: 10,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub layers: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            layers: vec![784, 32, 10],
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// "mnist" or "synthetic". MNIST that cannot be found degrades to
    /// synthetic with a warning.
    pub source: String,
    /// Directory holding the IDX files; the CEPAM_DATA_DIR environment
    /// variable fills this in when absent.
    pub dir: Option<PathBuf>,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub iid: bool,
    pub synthetic_dim: usize,
    pub synthetic_classes: usize,
    pub synthetic_spread: f64,
    /// Dataset generation is seeded separately so varying the experiment
    /// seed never changes the data.
    pub synthetic_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: "mnist".to_string(),
            dir: None,
            train: 6000,
            val: 1000,
            test: 1000,
            iid: true,
            synthetic_dim: 784,
            synthetic_classes: 10,
            synthetic_spread: 0.3,
            synthetic_seed: 7077,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub lr: f64,
    pub momentum: f64,
    pub clip: f64,
    pub plateau_patience: u32,
    pub plateau_epsilon: f64,
    pub lr_decay: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            lr: 0.01,
            momentum: 0.9,
            clip: 0.5,
            plateau_patience: 10,
            plateau_epsilon: 1e-3,
            lr_decay: 0.5,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantizerSection {
    pub block_dim: usize,
    pub lattice_scale: f64,
    pub noise_scale: f64,
}

impl Default for QuantizerSection {
    fn default() -> Self {
        QuantizerSection {
            block_dim: 1,
            lattice_scale: 1e-5,
            noise_scale: 0.05,
        }
    }
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// One run's training configuration.
    pub fn training_config(&self, scheme: Scheme, seed: u64, parallel: bool) -> TrainingConfig {
        TrainingConfig {
            scheme,
            total_iters: self.experiment.rounds * self.experiment.local_iters,
            local_iters: self.experiment.local_iters,
            clients: self.experiment.clients,
            lr: self.optimizer.lr,
            momentum: self.optimizer.momentum,
            clip: self.optimizer.clip,
            block_dim: self.quantizer.block_dim,
            lattice_scale: self.quantizer.lattice_scale,
            noise_scale: self.quantizer.noise_scale,
            master_seed: seed,
            iid: self.data.iid,
            parallel,
            plateau_patience: self.optimizer.plateau_patience,
            plateau_epsilon: self.optimizer.plateau_epsilon,
            lr_decay: self.optimizer.lr_decay,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let cfg = ExperimentFile::parse("").unwrap();
        assert_eq!(cfg.experiment.rounds, 60);
        assert_eq!(cfg.model.layers, vec![784, 32, 10]);
        assert_eq!(cfg.data.source, "mnist");
        assert_eq!(cfg.quantizer.lattice_scale, 1e-5);
    }

    #[test]
    fn sections_override_independently() {
        let cfg = ExperimentFile::parse(
            "[experiment]\nrounds = 3\nseeds = [9]\n\n[quantizer]\nnoise_scale = 0.25\n",
        )
        .unwrap();
        assert_eq!(cfg.experiment.rounds, 3);
        assert_eq!(cfg.experiment.seeds, vec![9]);
        assert_eq!(
            cfg.experiment.local_iters, 15,
            "untouched key keeps default"
        );
        assert_eq!(cfg.quantizer.noise_scale, 0.25);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentFile::parse("[experiment]\nruonds = 3\n").is_err());
        assert!(ExperimentFile::parse("[nonsense]\nx = 1\n").is_err());
    }

    #[test]
    fn training_config_carries_the_seed_and_scheme() {
        let cfg = ExperimentFile::parse("[experiment]\nrounds = 2\nlocal_iters = 5\n").unwrap();
        let tc = cfg.training_config(Scheme::Fl, 42, true);
        assert_eq!(tc.total_iters, 10);
        assert_eq!(tc.master_seed, 42);
        assert!(tc.parallel);
        assert!(tc.validate().is_ok());
    }
}
