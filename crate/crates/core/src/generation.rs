//! Greedy title generation from a checkpoint.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PaddedSeqs, BOS, EOS, PAD, UNK};
use crate::models::{Dropout, ModelError, ModelParams, ParamVars, Seq2Seq};
use crate::tensor::Tape;
use crate::training::Checkpoint;

pub const DEFAULT_MAX_LENGTH: usize = 16;

fn default_max_length() -> usize {
    DEFAULT_MAX_LENGTH
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("request has no tracks")]
    EmptyTracks,
    #[error("max_length must be between 1 and {limit}, got {got}")]
    MaxLength { got: usize, limit: usize },
    #[error("no requests given")]
    NoRequests,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationRequest {
    pub tracks: Vec<String>,
    #[serde(default = "default_max_length")]
    pub max_length: usize,
}

impl GenerationRequest {
    pub fn new(tracks: Vec<String>) -> Self {
        Self {
            tracks,
            max_length: DEFAULT_MAX_LENGTH,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GenerationOptions {
    /// Never emit `UNK`.
    pub suppress_unk: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedTitle {
    pub tokens: Vec<String>,
    pub token_ids: Vec<usize>,
    pub token_logprobs: Vec<f64>,
    /// `None` when generation hit `max_length` before `EOS`.
    pub eos_logprob: Option<f64>,
    /// Sum of the token log-probabilities plus the `EOS` one, if any.
    pub logprob: f64,
}

/// Checkpoint bundled with its model, ready to decode.
pub struct Generator<'a> {
    ckpt: &'a Checkpoint,
    model: Seq2Seq,
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

impl<'a> Generator<'a> {
    pub fn new(ckpt: &'a Checkpoint) -> Result<Self, GenerationError> {
        let model = Seq2Seq::new(ckpt.model.clone())?;
        model.check_params(&ckpt.params)?;
        Ok(Self { ckpt, model })
    }

    pub fn params(&self) -> &ModelParams {
        &self.ckpt.params
    }

    /// Encodes and decodes one request.
    pub fn generate(
        &self,
        req: &GenerationRequest,
        opts: GenerationOptions,
    ) -> Result<GeneratedTitle, GenerationError> {
        if req.tracks.is_empty() {
            return Err(GenerationError::EmptyTracks);
        }
        let limit = self.model.config().max_positions;
        let source: Vec<usize> = req
            .tracks
            .iter()
            .take(limit)
            .map(|t| self.ckpt.track_vocab.lookup(t))
            .collect();
        self.generate_ids(&source, req.max_length, opts)
    }

    /// Greedy decoding from already encoded track ids.
    ///
    /// `PAD` and `BOS` are never emitted; ties go to the lowest index.
    pub fn generate_ids(
        &self,
        source: &[usize],
        max_length: usize,
        opts: GenerationOptions,
    ) -> Result<GeneratedTitle, GenerationError> {
        let limit = self.model.config().max_positions;
        if max_length == 0 || max_length > limit {
            return Err(GenerationError::MaxLength {
                got: max_length,
                limit,
            });
        }
        if source.is_empty() {
            return Err(GenerationError::EmptyTracks);
        }
        let mut tape = Tape::new();
        let p: ParamVars = self.ckpt.params.register(&mut tape, false);
        let src = PaddedSeqs::from_rows(&[source]);
        let memory = self.model.encode(&mut tape, &p, &src, &mut Dropout::disabled())?;
        let mut prefix = vec![BOS];
        let mut title = GeneratedTitle {
            tokens: Vec::new(),
            token_ids: Vec::new(),
            token_logprobs: Vec::new(),
            eos_logprob: None,
            logprob: 0.0,
        };
        while title.token_ids.len() < max_length {
            let input = PaddedSeqs::from_rows(&[&prefix]);
            let out = self
                .model
                .decode(&mut tape, &p, &memory, &input, &mut Dropout::disabled())?;
            let v = self.model.config().target_vocab_size;
            let logits = tape.value(out.logits).data();
            let logp = log_softmax(&logits[logits.len() - v..]);
            let mut best: Option<usize> = None;
            for (i, &lp) in logp.iter().enumerate() {
                if i == PAD || i == BOS || (opts.suppress_unk && i == UNK) {
                    continue;
                }
                if best.is_none_or(|b| lp > logp[b]) {
                    best = Some(i);
                }
            }
            let next = best.expect("vocabulary has a non-reserved or EOS entry");
            title.logprob += logp[next];
            if next == EOS {
                title.eos_logprob = Some(logp[next]);
                break;
            }
            title.token_ids.push(next);
            title.token_logprobs.push(logp[next]);
            title.tokens.push(
                self.ckpt
                    .word_vocab
                    .token(next)
                    .expect("index within vocabulary")
                    .to_string(),
            );
            prefix.push(next);
        }
        Ok(title)
    }
}

pub fn greedy_decode(
    ckpt: &Checkpoint,
    req: &GenerationRequest,
    opts: GenerationOptions,
) -> Result<GeneratedTitle, GenerationError> {
    Generator::new(ckpt)?.generate(req, opts)
}

/// Decodes every request in order; a failing request does not stop the rest.
pub fn batch_generate(
    ckpt: &Checkpoint,
    reqs: &[GenerationRequest],
    opts: GenerationOptions,
) -> Result<Vec<Result<GeneratedTitle, GenerationError>>, GenerationError> {
    if reqs.is_empty() {
        return Err(GenerationError::NoRequests);
    }
    let g = Generator::new(ckpt)?;
    Ok(reqs.iter().map(|r| g.generate(r, opts)).collect())
}
