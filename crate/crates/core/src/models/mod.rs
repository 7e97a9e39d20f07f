//! Encoder-decoder architectures mapping a padded batch of track sequences to
//! per-position logits over the title vocabulary.
//!
//! Both architectures share one parameter store ([`ModelParams`]) and one
//! forward interface ([`Seq2Seq`]). The transformer's encoder positional
//! encoding can be switched off, which makes its decoder output invariant to
//! the order of source tracks.

mod attention;
mod gru;
mod params;
mod positional;
mod rnn;
mod transformer;

pub use attention::{
    multi_head_attention, scaled_dot_product_attention, Attention, AttentionMask, MhaVars,
    MASKED_SCORE,
};
pub use gru::{gru_cell, GruVars};
pub use params::{Init, ModelParams, ParamSpec, ParamVars};
pub use positional::sinusoidal_positional_encoding;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::PaddedSeqs;
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("parameter {0:?} is missing or has the wrong shape")]
    Param(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Rnn,
    Transformer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub num_layers: usize,
    pub embed_dim: usize,
    /// GRU state size for the RNN, feed-forward inner size for the transformer.
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub encoder_positional_encoding: bool,
    pub dropout_rate: f64,
    pub source_vocab_size: usize,
    pub target_vocab_size: usize,
    pub max_positions: usize,
}

impl ModelConfig {
    /// Two layers, 128-wide embeddings, 256 hidden units, four heads.
    pub fn new(architecture: Architecture, source_vocab_size: usize, target_vocab_size: usize) -> Self {
        Self {
            architecture,
            num_layers: 2,
            embed_dim: 128,
            hidden_dim: 256,
            num_heads: 4,
            encoder_positional_encoding: true,
            dropout_rate: 0.0,
            source_vocab_size,
            target_vocab_size,
            max_positions: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.num_layers == 0 {
            return fail("num_layers must be at least 1");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return fail("embed_dim and hidden_dim must be positive");
        }
        if self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return fail("embed_dim must be divisible by num_heads");
        }
        if self.architecture == Architecture::Transformer && !self.embed_dim.is_multiple_of(2) {
            return fail("sinusoidal positional encoding needs an even embed_dim");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail("dropout_rate must lie in [0, 1)");
        }
        if self.source_vocab_size <= crate::corpus::UNK || self.target_vocab_size <= crate::corpus::UNK {
            return fail("vocabularies must include the four reserved tokens");
        }
        if self.max_positions == 0 {
            return fail("max_positions must be positive");
        }
        Ok(())
    }
}

/// Inverted dropout driven by an explicit RNG; a no-op without one.
pub struct Dropout<'a> {
    rate: f64,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Dropout<'a> {
    pub fn new(rate: f64, rng: Option<&'a mut ChaCha8Rng>) -> Self {
        Self { rate, rng }
    }

    pub fn disabled() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        if self.rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let shape = tape.shape(x).to_vec();
        let n = shape.iter().product();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = tape.constant(Tensor::new(shape, mask)?);
        Ok(tape.mul(x, m)?)
    }
}

/// Output of a teacher-forced forward pass.
pub struct ForwardOutput {
    /// `[batch, target_len, target_vocab]`.
    pub logits: Var,
    /// Attention weight tensors recorded along the way, for inspection.
    pub attention: Vec<Var>,
}

/// Encoder state reused across decoding steps.
pub enum Encoded {
    Rnn(rnn::RnnMemory),
    Transformer(transformer::TransformerMemory),
}

/// Dispatches to the configured architecture.
#[derive(Clone, Debug)]
pub struct Seq2Seq {
    config: ModelConfig,
}

impl Seq2Seq {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        match self.config.architecture {
            Architecture::Rnn => rnn::param_specs(&self.config),
            Architecture::Transformer => transformer::param_specs(&self.config),
        }
    }

    /// Seeded initial parameters; the `PAD` row of each embedding is zero.
    pub fn init_params(&self, seed: u64) -> ModelParams {
        ModelParams::init(&self.param_specs(), seed)
    }

    /// Checks names and shapes against this architecture.
    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        params.check(&self.param_specs())
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        p: &ParamVars,
        source: &PaddedSeqs,
        dropout: &mut Dropout,
    ) -> Result<Encoded> {
        check_rows(source, "source")?;
        if source.len > self.config.max_positions {
            return Err(ModelError::Config(format!(
                "source length {} exceeds max_positions {}",
                source.len, self.config.max_positions
            )));
        }
        Ok(match self.config.architecture {
            Architecture::Rnn => Encoded::Rnn(rnn::encode(&self.config, tape, p, source)?),
            Architecture::Transformer => {
                Encoded::Transformer(transformer::encode(&self.config, tape, p, source, dropout)?)
            }
        })
    }

    pub fn decode(
        &self,
        tape: &mut Tape,
        p: &ParamVars,
        memory: &Encoded,
        decoder_input: &PaddedSeqs,
        dropout: &mut Dropout,
    ) -> Result<ForwardOutput> {
        if decoder_input.len > self.config.max_positions {
            return Err(ModelError::Config(format!(
                "target length {} exceeds max_positions {}",
                decoder_input.len, self.config.max_positions
            )));
        }
        if decoder_input.len == 0 {
            return Err(ModelError::Degenerate("empty decoder input".into()));
        }
        match memory {
            Encoded::Rnn(m) => rnn::decode(&self.config, tape, p, m, decoder_input),
            Encoded::Transformer(m) => {
                transformer::decode(&self.config, tape, p, m, decoder_input, dropout)
            }
        }
    }

    /// Teacher-forced logits for every decoder input position.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &ParamVars,
        source: &PaddedSeqs,
        decoder_input: &PaddedSeqs,
        dropout: &mut Dropout,
    ) -> Result<ForwardOutput> {
        if source.rows != decoder_input.rows {
            return Err(ModelError::Config(format!(
                "batch mismatch: {} sources, {} targets",
                source.rows, decoder_input.rows
            )));
        }
        let memory = self.encode(tape, p, source, dropout)?;
        self.decode(tape, p, &memory, decoder_input, dropout)
    }
}

fn check_rows(seqs: &PaddedSeqs, what: &str) -> Result<()> {
    if seqs.rows == 0 || seqs.len == 0 {
        return Err(ModelError::Degenerate(format!("empty {what} batch")));
    }
    for r in 0..seqs.rows {
        if !seqs.row_mask(r).iter().any(|&m| m) {
            return Err(ModelError::Degenerate(format!("{what} row {r} is all padding")));
        }
    }
    Ok(())
}

/// `x W + b` over the last dimension of a 2-D input.
pub(crate) fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    Ok(tape.add(y, b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_configs() {
        let base = ModelConfig::new(Architecture::Transformer, 10, 10);
        assert!(base.validate().is_ok());
        let bad_heads = ModelConfig { num_heads: 3, ..base.clone() };
        assert!(bad_heads.validate().is_err());
        let odd = ModelConfig {
            embed_dim: 9,
            num_heads: 1,
            ..base.clone()
        };
        assert!(odd.validate().is_err());
        let no_layers = ModelConfig { num_layers: 0, ..base.clone() };
        assert!(no_layers.validate().is_err());
        let dropout = ModelConfig { dropout_rate: 1.0, ..base };
        assert!(dropout.validate().is_err());
    }

    #[test]
    fn architecture_names() {
        assert_eq!(serde_json::to_string(&Architecture::Rnn).unwrap(), "\"rnn\"");
        assert!(serde_json::from_str::<Architecture>("\"cnn\"").is_err());
    }
}
