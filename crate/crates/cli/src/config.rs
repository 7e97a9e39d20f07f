use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use titlegen::corpus::SplitRatios;
use titlegen::generation::DEFAULT_MAX_LENGTH;
use titlegen::models::{Architecture, ModelConfig};
use titlegen::training::TrainConfig;

use crate::Failure;

/// Every setting any subcommand reads, flattened into one JSON object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // files
    pub raw_path: Option<PathBuf>,
    pub adapter_path: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,

    // corpus
    pub split_seed: u64,
    pub split_ratios: SplitRatios,
    pub min_count_track: usize,
    pub min_count_word: usize,

    // model
    pub architecture: Architecture,
    pub num_layers: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub encoder_positional_encoding: bool,
    pub dropout_rate: f64,
    /// Also the number of source tracks kept per playlist.
    pub max_positions: usize,

    // training
    pub base_lr: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub init_seed: u64,
    pub epoch_seed_base: u64,
    pub shuffle_augment: bool,
    pub grad_clip: Option<f64>,
    pub weight_decay: f64,

    // generation
    pub max_length: usize,
    pub suppress_unk: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::new(Architecture::Transformer, 0, 0);
        let t = TrainConfig::default();
        Self {
            raw_path: None,
            adapter_path: None,
            data_dir: None,
            out_dir: None,
            split_seed: 0,
            split_ratios: SplitRatios::default(),
            min_count_track: 1,
            min_count_word: 1,
            architecture: m.architecture,
            num_layers: m.num_layers,
            embed_dim: m.embed_dim,
            hidden_dim: m.hidden_dim,
            num_heads: m.num_heads,
            encoder_positional_encoding: m.encoder_positional_encoding,
            dropout_rate: m.dropout_rate,
            max_positions: m.max_positions,
            base_lr: t.base_lr,
            lr_decay: t.lr_decay,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            init_seed: t.init_seed,
            epoch_seed_base: t.epoch_seed_base,
            shuffle_augment: t.shuffle_augment,
            grad_clip: t.grad_clip,
            weight_decay: t.weight_decay,
            max_length: DEFAULT_MAX_LENGTH,
            suppress_unk: false,
        }
    }
}

/// Command-line values that override the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub arch: Option<Architecture>,
    pub no_encoder_pos: bool,
    pub shuffle_augment: bool,
    pub seed: Option<u64>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::input(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::input(format!("invalid config {}: {e}", path.display())))
    }

    /// Flags win over the file. `--seed` sets all three seeds.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(a) = o.arch {
            self.architecture = a;
        }
        if o.no_encoder_pos {
            self.encoder_positional_encoding = false;
        }
        if o.shuffle_augment {
            self.shuffle_augment = true;
        }
        if let Some(s) = o.seed {
            self.split_seed = s;
            self.init_seed = s;
            self.epoch_seed_base = s;
        }
        if let Some(n) = o.max_epochs {
            self.max_epochs = n;
        }
        if let Some(n) = o.patience {
            self.patience = n;
        }
        if let Some(p) = &o.out {
            self.out_dir = Some(p.clone());
        }
    }

    pub fn model(&self, source_vocab_size: usize, target_vocab_size: usize) -> ModelConfig {
        ModelConfig {
            architecture: self.architecture,
            num_layers: self.num_layers,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            num_heads: self.num_heads,
            encoder_positional_encoding: self.encoder_positional_encoding,
            dropout_rate: self.dropout_rate,
            source_vocab_size,
            target_vocab_size,
            max_positions: self.max_positions,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            base_lr: self.base_lr,
            lr_decay: self.lr_decay,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            init_seed: self.init_seed,
            epoch_seed_base: self.epoch_seed_base,
            shuffle_augment: self.shuffle_augment,
            grad_clip: self.grad_clip,
            weight_decay: self.weight_decay,
        }
    }

    /// Prints the resolved configuration as one JSON line on stderr.
    pub fn echo(&self) {
        eprintln!(
            "config {}",
            serde_json::to_string(self).expect("config serializes")
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"embed_dims": 64}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"embed_dim": 64}"#).unwrap();
        assert_eq!(c.embed_dim, 64);
        assert_eq!(c.hidden_dim, 256);
    }

    #[test]
    fn flags_win_and_seed_sets_all_three() {
        let mut c: RunConfig =
            serde_json::from_str(r#"{"max_epochs": 3, "init_seed": 9, "architecture": "rnn"}"#).unwrap();
        c.apply(&Overrides {
            arch: Some(Architecture::Transformer),
            seed: Some(4),
            max_epochs: Some(7),
            no_encoder_pos: true,
            ..Default::default()
        });
        assert_eq!(c.architecture, Architecture::Transformer);
        assert_eq!((c.split_seed, c.init_seed, c.epoch_seed_base), (4, 4, 4));
        assert_eq!(c.max_epochs, 7);
        assert!(!c.encoder_positional_encoding);
    }

    #[test]
    fn cnn_is_not_an_architecture() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"architecture": "cnn"}"#).is_err());
    }
}
