//! Teacher-forced training with Adam, early stopping on validation NLL and
//! checkpointing.

mod checkpoint;
mod stopping;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, TrainingMeta, FORMAT_VERSION,
    MAGIC,
};
pub use stopping::{early_stopping, StopOutcome};

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    encode_pair, make_batches, ordered_batches, shuffle_tracks, Batch, CorpusError,
    EncodedExample, SplitCorpus, TokenizedPlaylist, Vocab, PAD,
};
use crate::models::{Dropout, ModelError, ModelParams, ParamVars, Seq2Seq};
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("non-finite {what} in epoch {epoch}, batch {batch}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        what: &'static str,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub init_seed: u64,
    /// Epoch `e` shuffles, augments and drops out with seed `epoch_seed_base + e`.
    pub epoch_seed_base: u64,
    /// Re-permute every training source each epoch.
    pub shuffle_augment: bool,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.005,
            lr_decay: 0.0001,
            batch_size: 64,
            max_epochs: 100,
            patience: 5,
            init_seed: 0,
            epoch_seed_base: 0,
            shuffle_augment: false,
            grad_clip: Some(5.0),
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return fail("base_lr must be positive");
        }
        if !(self.lr_decay >= 0.0 && self.lr_decay.is_finite()) {
            return fail("lr_decay must be non-negative");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return fail("batch_size, max_epochs and patience must be at least 1");
        }
        if self.patience > self.max_epochs {
            return fail("patience cannot exceed max_epochs");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return fail("grad_clip must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay must be non-negative");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            base_lr: self.base_lr,
            decay: self.lr_decay,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Encoded splits plus the vocabularies that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainData {
    pub train: Vec<EncodedExample>,
    pub validation: Vec<EncodedExample>,
    pub test: Vec<EncodedExample>,
    pub track_vocab: Vocab,
    pub word_vocab: Vocab,
    /// Seed the split was drawn with, carried into the checkpoint.
    pub split_seed: u64,
}

impl TrainData {
    pub fn from_split(
        split: &SplitCorpus,
        track_vocab: Vocab,
        word_vocab: Vocab,
        max_source_len: usize,
    ) -> Result<Self> {
        let enc = |ps: &[TokenizedPlaylist]| {
            ps.iter()
                .map(|p| encode_pair(p, &track_vocab, &word_vocab, max_source_len))
                .collect::<Result<Vec<_>, _>>()
        };
        Ok(Self {
            train: enc(&split.train)?,
            validation: enc(&split.validation)?,
            test: enc(&split.test)?,
            track_vocab: track_vocab.clone(),
            word_vocab: word_vocab.clone(),
            split_seed: split.split_seed,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub validation_nll: f64,
    /// Step size of the last update in the epoch.
    pub learning_rate: f64,
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_json_lines(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }
}

/// Token-level NLL over an example set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NllSummary {
    /// Mean over predicted tokens (title words and `EOS`).
    pub nll: f64,
    pub tokens: usize,
    pub examples: usize,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn epoch_seed(base: u64, epoch: usize) -> u64 {
    base.wrapping_add(epoch as u64)
}

/// Mean cross-entropy of one teacher-forced batch, with `PAD` targets ignored.
fn batch_loss(
    model: &Seq2Seq,
    tape: &mut Tape,
    p: &ParamVars,
    batch: &Batch,
    dropout: &mut Dropout,
) -> Result<(Var, usize)> {
    let out = model.forward(tape, p, &batch.source, &batch.decoder_input(), dropout)?;
    let shape = tape.shape(out.logits).to_vec();
    let flat = tape.reshape(out.logits, &[shape[0] * shape[1], shape[2]])?;
    let targets = batch.decoder_output();
    let loss = tape.cross_entropy(flat, &targets, Some(PAD))?;
    Ok((loss, batch.target_tokens()))
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// One pass over `train` in a seeded order, one Adam step per batch.
///
/// Returns the token-weighted mean of the pre-step batch losses.
pub fn train_epoch(
    model: &Seq2Seq,
    params: &mut ModelParams,
    opt: &mut AdamState,
    train: &[EncodedExample],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    if train.is_empty() {
        return Err(TrainError::Degenerate("empty training set".into()));
    }
    let seed = epoch_seed(cfg.epoch_seed_base, epoch);
    let augmented;
    let examples = if cfg.shuffle_augment {
        augmented = train
            .iter()
            .enumerate()
            .map(|(i, e)| shuffle_tracks(e, seed ^ (i as u64 + 1).wrapping_mul(GOLDEN.rotate_left(17))))
            .collect::<Vec<_>>();
        &augmented[..]
    } else {
        train
    };
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed.rotate_left(32));
    let rate = model.config().dropout_rate;
    let (mut total, mut tokens) = (0.0, 0usize);
    for (b, batch) in make_batches(examples, cfg.batch_size, seed)?.iter().enumerate() {
        let mut tape = Tape::new();
        let p = params.register(&mut tape, true);
        let mut dropout = Dropout::new(rate, Some(&mut dropout_rng));
        let (loss, n) = batch_loss(model, &mut tape, &p, batch, &mut dropout)?;
        let value = tape.value(loss).item()?;
        let non_finite = |what| TrainError::NonFinite {
            epoch,
            batch: b,
            what,
        };
        if !value.is_finite() {
            return Err(non_finite("loss"));
        }
        tape.backward(loss)?;
        let mut grads = p.grads(&tape);
        if !grads.iter().all(Tensor::is_finite) {
            return Err(non_finite("gradient"));
        }
        if let Some(c) = cfg.grad_clip {
            clip_global_norm(&mut grads, c);
        }
        opt.step(params.tensors_mut(), &grads)?;
        if !params.is_finite() {
            return Err(non_finite("parameter"));
        }
        total += value * n as f64;
        tokens += n;
    }
    Ok(total / tokens as f64)
}

/// Teacher-forced NLL per predicted token; does not depend on how the
/// examples are batched.
pub fn evaluate_nll(
    model: &Seq2Seq,
    params: &ModelParams,
    examples: &[EncodedExample],
    batch_size: usize,
) -> Result<NllSummary> {
    if examples.is_empty() {
        return Err(TrainError::Degenerate("no examples to evaluate".into()));
    }
    let (mut total, mut tokens) = (0.0, 0usize);
    for batch in ordered_batches(examples, batch_size)? {
        let mut tape = Tape::new();
        let p = params.register(&mut tape, false);
        let (loss, n) = batch_loss(model, &mut tape, &p, &batch, &mut Dropout::disabled())?;
        total += tape.value(loss).item()? * n as f64;
        tokens += n;
    }
    Ok(NllSummary {
        nll: total / tokens as f64,
        tokens,
        examples: examples.len(),
    })
}

/// [`fit_with_progress`] without a progress callback.
pub fn fit(model: &Seq2Seq, data: &TrainData, cfg: &TrainConfig) -> Result<(Checkpoint, TrainLog)> {
    fit_with_progress(model, data, cfg, |_| {})
}

/// Trains from a seeded init until early stopping and returns the parameters
/// of the best validation epoch.
pub fn fit_with_progress(
    model: &Seq2Seq,
    data: &TrainData,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Checkpoint, TrainLog)> {
    cfg.validate()?;
    for (name, split) in [
        ("train", &data.train),
        ("validation", &data.validation),
        ("test", &data.test),
    ] {
        if split.is_empty() {
            return Err(TrainError::Degenerate(format!("{name} split is empty")));
        }
    }
    let mc = model.config();
    if mc.source_vocab_size != data.track_vocab.len() || mc.target_vocab_size != data.word_vocab.len() {
        return Err(TrainError::Config(format!(
            "model vocab sizes {}/{} do not match data vocabs {}/{}",
            mc.source_vocab_size,
            mc.target_vocab_size,
            data.track_vocab.len(),
            data.word_vocab.len()
        )));
    }

    let mut params = model.init_params(cfg.init_seed);
    let mut opt = AdamState::new(cfg.adam(), params.tensors());
    let mut log = TrainLog::default();
    let outcome = early_stopping(cfg.max_epochs, cfg.patience, |epoch| {
        let start = Instant::now();
        let train_nll = train_epoch(model, &mut params, &mut opt, &data.train, cfg, epoch)?;
        let learning_rate = cfg.base_lr / (1.0 + cfg.lr_decay * (opt.steps() - 1) as f64);
        let val = evaluate_nll(model, &params, &data.validation, cfg.batch_size)?;
        if !val.nll.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                batch: 0,
                what: "validation loss",
            });
        }
        let record = EpochRecord {
            epoch,
            train_nll,
            validation_nll: val.nll,
            learning_rate,
            wall_time_secs: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.records.push(record);
        Ok((val.nll, params.clone()))
    })?
    .expect("max_epochs >= 1");

    let test = evaluate_nll(model, &outcome.best_state, &data.test, cfg.batch_size)?;
    let ckpt = Checkpoint {
        model: mc.clone(),
        params: outcome.best_state,
        track_vocab: data.track_vocab.clone(),
        word_vocab: data.word_vocab.clone(),
        meta: TrainingMeta {
            epoch: outcome.best_epoch,
            best_validation_nll: outcome.best_value,
            test_nll: Some(test.nll),
            epochs_run: outcome.epochs_run,
            split_seed: data.split_seed,
            train: cfg.clone(),
        },
    };
    Ok((ckpt, log))
}
