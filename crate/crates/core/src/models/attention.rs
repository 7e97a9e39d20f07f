use super::{linear, ModelError, ParamSpec, ParamVars, Result};
use crate::corpus::PaddedSeqs;
use crate::tensor::{Tape, Tensor, Var};

/// Score given to disallowed positions before the softmax.
pub const MASKED_SCORE: f64 = -1e9;

/// Which keys each query may attend to, per batch row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    /// Row-major `[batch, q_len, k_len]`.
    pub allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(batch: usize, q_len: usize, k_len: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != batch * q_len * k_len {
            return Err(ModelError::Config(format!(
                "mask of {} entries for [{batch}, {q_len}, {k_len}]",
                allowed.len()
            )));
        }
        Ok(Self {
            batch,
            q_len,
            k_len,
            allowed,
        })
    }

    /// Every query sees exactly the unpadded keys.
    pub fn key_padding(keys: &PaddedSeqs, q_len: usize) -> Self {
        let mut allowed = Vec::with_capacity(keys.rows * q_len * keys.len);
        for r in 0..keys.rows {
            for _ in 0..q_len {
                allowed.extend_from_slice(keys.row_mask(r));
            }
        }
        Self {
            batch: keys.rows,
            q_len,
            k_len: keys.len,
            allowed,
        }
    }

    /// Query `i` sees unpadded keys `j <= i`.
    pub fn causal(keys: &PaddedSeqs) -> Self {
        let n = keys.len;
        let mut allowed = Vec::with_capacity(keys.rows * n * n);
        for r in 0..keys.rows {
            let m = keys.row_mask(r);
            for i in 0..n {
                allowed.extend((0..n).map(|j| j <= i && m[j]));
            }
        }
        Self {
            batch: keys.rows,
            q_len: n,
            k_len: n,
            allowed,
        }
    }

    /// Additive `[batch, 1, q_len, k_len]` tensor of `0` and [`MASKED_SCORE`].
    pub fn additive(&self) -> Result<Tensor> {
        for (row, chunk) in self.allowed.chunks(self.k_len).enumerate() {
            if !chunk.iter().any(|&a| a) {
                return Err(ModelError::Degenerate(format!(
                    "attention row {} of batch {} has every key masked",
                    row % self.q_len,
                    row / self.q_len
                )));
            }
        }
        let data = self
            .allowed
            .iter()
            .map(|&a| if a { 0.0 } else { MASKED_SCORE })
            .collect();
        Ok(Tensor::new(vec![self.batch, 1, self.q_len, self.k_len], data)?)
    }

    pub fn to_var(&self, tape: &mut Tape) -> Result<Var> {
        let t = self.additive()?;
        Ok(tape.constant(t))
    }
}

pub struct Attention {
    pub output: Var,
    /// `[batch, heads, q_len, k_len]`.
    pub weights: Var,
}

/// Core of every attention call: `softmax(Q K^T / sqrt(dk) + mask) V` on
/// `[batch * heads, len, dim]` inputs.
fn attend(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    batch: usize,
    heads: usize,
    mask: Option<Var>,
) -> Result<(Var, Var)> {
    let (q_len, dk) = (tape.shape(q)[1], tape.shape(q)[2]);
    let k_len = tape.shape(k)[1];
    let scores = tape.bmm(q, k, true)?;
    let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt());
    let mut scores = tape.reshape(scores, &[batch, heads, q_len, k_len])?;
    if let Some(m) = mask {
        scores = tape.add(scores, m)?;
    }
    let weights = tape.softmax(scores, 3)?;
    let flat = tape.reshape(weights, &[batch * heads, q_len, k_len])?;
    let out = tape.bmm(flat, v, false)?;
    Ok((out, weights))
}

/// Single-head attention on 2-D inputs: `q [a, dk]`, `k [b, dk]`, `v [b, dv]`.
pub fn scaled_dot_product_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&AttentionMask>,
) -> Result<Attention> {
    let (sq, sk, sv) = (tape.shape(q).to_vec(), tape.shape(k).to_vec(), tape.shape(v).to_vec());
    if sq.len() != 2 || sk.len() != 2 || sv.len() != 2 || sq[1] != sk[1] || sk[0] != sv[0] {
        return Err(ModelError::Config(format!(
            "attention shapes q {sq:?}, k {sk:?}, v {sv:?} do not agree"
        )));
    }
    let mask = match mask {
        Some(m) if m.batch != 1 || m.q_len != sq[0] || m.k_len != sk[0] => {
            return Err(ModelError::Config("mask does not match attention shape".into()))
        }
        Some(m) => Some(m.to_var(tape)?),
        None => None,
    };
    let q3 = tape.reshape(q, &[1, sq[0], sq[1]])?;
    let k3 = tape.reshape(k, &[1, sk[0], sk[1]])?;
    let v3 = tape.reshape(v, &[1, sv[0], sv[1]])?;
    let (out, weights) = attend(tape, q3, k3, v3, 1, 1, mask)?;
    let output = tape.reshape(out, &[sq[0], sv[1]])?;
    Ok(Attention { output, weights })
}

/// Projection weights of one multi-head attention block.
#[derive(Clone, Copy, Debug)]
pub struct MhaVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

impl MhaVars {
    pub fn specs(prefix: &str, d: usize) -> Vec<ParamSpec> {
        ["q", "k", "v", "o"]
            .iter()
            .flat_map(|n| {
                [
                    ParamSpec::weight(format!("{prefix}.w{n}"), d, d),
                    ParamSpec::bias(format!("{prefix}.b{n}"), d, d),
                ]
            })
            .collect()
    }

    pub fn lookup(p: &ParamVars, prefix: &str) -> Result<Self> {
        let g = |n: &str| p.get(&format!("{prefix}.{n}"));
        Ok(Self {
            wq: g("wq")?,
            bq: g("bq")?,
            wk: g("wk")?,
            bk: g("bk")?,
            wv: g("wv")?,
            bv: g("bv")?,
            wo: g("wo")?,
            bo: g("bo")?,
        })
    }
}

fn split_heads(tape: &mut Tape, x: Var, batch: usize, len: usize, heads: usize) -> Result<Var> {
    let d = tape.shape(x)[1];
    let x = tape.reshape(x, &[batch, len, heads, d / heads])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    Ok(tape.reshape(x, &[batch * heads, len, d / heads])?)
}

/// Multi-head attention on flattened `[batch * len, d]` activations.
///
/// `mask` is an additive `[batch, 1, q_len, k_len]` tensor from
/// [`AttentionMask::to_var`].
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    tape: &mut Tape,
    p: &MhaVars,
    x_q: Var,
    x_kv: Var,
    batch: usize,
    heads: usize,
    mask: Option<Var>,
) -> Result<Attention> {
    let (rows_q, d) = (tape.shape(x_q)[0], tape.shape(x_q)[1]);
    let rows_k = tape.shape(x_kv)[0];
    if d % heads != 0 || rows_q % batch != 0 || !rows_k.is_multiple_of(batch) {
        return Err(ModelError::Config(format!(
            "cannot split {rows_q}x{d} into {batch} rows of {heads} heads"
        )));
    }
    let (q_len, k_len) = (rows_q / batch, rows_k / batch);
    let q = linear(tape, x_q, p.wq, p.bq)?;
    let k = linear(tape, x_kv, p.wk, p.bk)?;
    let v = linear(tape, x_kv, p.wv, p.bv)?;
    let q = split_heads(tape, q, batch, q_len, heads)?;
    let k = split_heads(tape, k, batch, k_len, heads)?;
    let v = split_heads(tape, v, batch, k_len, heads)?;
    let (ctx, weights) = attend(tape, q, k, v, batch, heads, mask)?;
    let ctx = tape.reshape(ctx, &[batch, heads, q_len, d / heads])?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[batch * q_len, d])?;
    let output = linear(tape, ctx, p.wo, p.bo)?;
    Ok(Attention { output, weights })
}
