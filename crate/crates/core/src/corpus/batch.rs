use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, EncodedExample, PAD};

/// Row-major `[rows, len]` token ids padded with `PAD`, plus a mask that is
/// true on real positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedSeqs {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub rows: usize,
    pub len: usize,
}

impl PaddedSeqs {
    pub fn from_rows<S: AsRef<[usize]>>(rows: &[S]) -> Self {
        let len = rows.iter().map(|r| r.as_ref().len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(rows.len() * len);
        let mut mask = Vec::with_capacity(rows.len() * len);
        for r in rows {
            let r = r.as_ref();
            ids.extend_from_slice(r);
            ids.extend(std::iter::repeat_n(PAD, len - r.len()));
            mask.extend(r.iter().map(|&id| id != PAD));
            mask.extend(std::iter::repeat_n(false, len - r.len()));
        }
        Self {
            ids,
            mask,
            rows: rows.len(),
            len,
        }
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.ids[r * self.len..(r + 1) * self.len]
    }

    pub fn row_mask(&self, r: usize) -> &[bool] {
        &self.mask[r * self.len..(r + 1) * self.len]
    }

    /// Number of real (unpadded) entries in row `r`.
    pub fn row_len(&self, r: usize) -> usize {
        self.row_mask(r).iter().filter(|&&m| m).count()
    }

    /// Drops the last column.
    pub fn without_last(&self) -> Self {
        self.columns(0, self.len - 1)
    }

    /// Drops the first column.
    pub fn without_first(&self) -> Self {
        self.columns(1, self.len - 1)
    }

    fn columns(&self, start: usize, width: usize) -> Self {
        let mut ids = Vec::with_capacity(self.rows * width);
        let mut mask = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            let from = r * self.len + start;
            ids.extend_from_slice(&self.ids[from..from + width]);
            mask.extend_from_slice(&self.mask[from..from + width]);
        }
        Self {
            ids,
            mask,
            rows: self.rows,
            len: width,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub source: PaddedSeqs,
    pub target: PaddedSeqs,
}

impl Batch {
    pub fn from_examples(examples: &[&EncodedExample]) -> Self {
        let sources: Vec<&[usize]> = examples.iter().map(|e| e.source.as_slice()).collect();
        let targets: Vec<&[usize]> = examples.iter().map(|e| e.target.as_slice()).collect();
        Self {
            source: PaddedSeqs::from_rows(&sources),
            target: PaddedSeqs::from_rows(&targets),
        }
    }

    pub fn size(&self) -> usize {
        self.source.rows
    }

    /// Teacher-forced decoder input: every target token except the last.
    pub fn decoder_input(&self) -> PaddedSeqs {
        self.target.without_last()
    }

    /// Prediction targets aligned with [`Batch::decoder_input`], `PAD` where
    /// nothing is predicted.
    pub fn decoder_output(&self) -> Vec<usize> {
        self.target.without_first().ids
    }

    /// Number of predicted (non-`PAD`) target tokens.
    pub fn target_tokens(&self) -> usize {
        self.decoder_output().iter().filter(|&&t| t != PAD).count()
    }
}

/// Shuffles with `epoch_seed` and cuts into padded batches of at most
/// `batch_size` examples.
pub fn make_batches(
    examples: &[EncodedExample],
    batch_size: usize,
    epoch_seed: u64,
) -> Result<Vec<Batch>, CorpusError> {
    let mut order: Vec<&EncodedExample> = examples.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    chunk(order, batch_size)
}

/// Batches in the given order, for evaluation.
pub fn ordered_batches(
    examples: &[EncodedExample],
    batch_size: usize,
) -> Result<Vec<Batch>, CorpusError> {
    chunk(examples.iter().collect(), batch_size)
}

fn chunk(order: Vec<&EncodedExample>, batch_size: usize) -> Result<Vec<Batch>, CorpusError> {
    if order.is_empty() {
        return Err(CorpusError::Degenerate("no examples to batch".into()));
    }
    if batch_size == 0 {
        return Err(CorpusError::Degenerate("batch size must be at least 1".into()));
    }
    Ok(order.chunks(batch_size).map(Batch::from_examples).collect())
}
