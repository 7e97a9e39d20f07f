//! Bidirectional GRU encoder with an additive-attention GRU decoder.

use super::{linear, ForwardOutput, GruVars, Init, ModelConfig, ParamSpec, ParamVars, Result};
use super::MASKED_SCORE;
use crate::corpus::PaddedSeqs;
use crate::tensor::{Tape, Tensor, Var};

pub(crate) fn param_specs(c: &ModelConfig) -> Vec<ParamSpec> {
    let (d, h) = (c.embed_dim, c.hidden_dim);
    let mut specs = vec![
        ParamSpec::new("src_embed", &[c.source_vocab_size, d], Init::Embedding(1.0 / (d as f64).sqrt())),
        ParamSpec::new("tgt_embed", &[c.target_vocab_size, d], Init::Embedding(1.0 / (d as f64).sqrt())),
    ];
    for l in 0..c.num_layers {
        let input = if l == 0 { d } else { 2 * h };
        for dir in ["fwd", "bwd"] {
            specs.extend(GruVars::specs(&format!("enc.{l}.{dir}"), input, h));
        }
    }
    specs.push(ParamSpec::weight("enc.proj.w", 2 * h, h));
    specs.push(ParamSpec::bias("enc.proj.b", 2 * h, h));
    for l in 0..c.num_layers {
        specs.push(ParamSpec::weight(format!("bridge.{l}.w"), 2 * h, h));
        specs.push(ParamSpec::bias(format!("bridge.{l}.b"), 2 * h, h));
    }
    specs.push(ParamSpec::weight("attn.w_query", h, h));
    specs.push(ParamSpec::weight("attn.w_key", h, h));
    specs.push(ParamSpec::bias("attn.b", h, h));
    specs.push(ParamSpec::weight("attn.v", h, 1));
    for l in 0..c.num_layers {
        let input = if l == 0 { d + h } else { h };
        specs.extend(GruVars::specs(&format!("dec.{l}"), input, h));
    }
    specs.push(ParamSpec::weight("out.w", 2 * h, c.target_vocab_size));
    specs.push(ParamSpec::bias("out.b", 2 * h, c.target_vocab_size));
    specs
}

pub struct RnnMemory {
    /// Projected encoder states `[B, L, H]`.
    states: Var,
    /// Attention keys `[B, L, H]`.
    keys: Var,
    /// Initial decoder state per layer, `[B, H]`.
    init: Vec<Var>,
    /// Additive source padding mask `[B, L]`.
    mask: Var,
    batch: usize,
    src_len: usize,
}

/// Runs one GRU direction over `x [B * L, in]`; padded positions carry the
/// previous state through unchanged.
fn run_direction(
    tape: &mut Tape,
    cell: &GruVars,
    x: Var,
    source: &PaddedSeqs,
    hidden: usize,
    reverse: bool,
) -> Result<(Var, Var)> {
    let (b, l) = (source.rows, source.len);
    let gi_all = cell.project_input(tape, x)?;
    let gi_all = tape.reshape(gi_all, &[b, l, 3 * hidden])?;
    let mut h = tape.constant(Tensor::zeros(&[b, hidden]));
    let mut states = vec![None; l];
    let steps: Vec<usize> = if reverse { (0..l).rev().collect() } else { (0..l).collect() };
    for t in steps {
        let gi = tape.slice(gi_all, 1, t, 1)?;
        let gi = tape.reshape(gi, &[b, 3 * hidden])?;
        let h_new = cell.step(tape, gi, h)?;
        let column: Vec<f64> = (0..b)
            .map(|r| if source.mask[r * l + t] { 1.0 } else { 0.0 })
            .collect();
        h = if column.iter().all(|&m| m == 1.0) {
            h_new
        } else {
            let m = tape.constant(Tensor::new(vec![b, 1], column)?);
            let delta = tape.sub(h_new, h)?;
            let delta = tape.mul(delta, m)?;
            tape.add(h, delta)?
        };
        states[t] = Some(tape.reshape(h, &[b, 1, hidden])?);
    }
    let states: Vec<Var> = states.into_iter().map(|s| s.expect("every step ran")).collect();
    let all = tape.concat(&states, 1)?;
    Ok((all, h))
}

pub(crate) fn encode(
    c: &ModelConfig,
    tape: &mut Tape,
    p: &ParamVars,
    source: &PaddedSeqs,
) -> Result<RnnMemory> {
    let (b, l, h) = (source.rows, source.len, c.hidden_dim);
    let mut x = tape.embedding(p.get("src_embed")?, &source.ids)?;
    let mut finals = None;
    for layer in 0..c.num_layers {
        let fwd = GruVars::lookup(p, &format!("enc.{layer}.fwd"))?;
        let bwd = GruVars::lookup(p, &format!("enc.{layer}.bwd"))?;
        let (fs, f_last) = run_direction(tape, &fwd, x, source, h, false)?;
        let (bs, b_first) = run_direction(tape, &bwd, x, source, h, true)?;
        let both = tape.concat(&[fs, bs], 2)?;
        x = tape.reshape(both, &[b * l, 2 * h])?;
        finals = Some((f_last, b_first));
    }
    let (f_last, b_first) = finals.expect("at least one layer");
    let z = linear(tape, x, p.get("enc.proj.w")?, p.get("enc.proj.b")?)?;
    let keys = linear(tape, z, p.get("attn.w_key")?, p.get("attn.b")?)?;
    let keys = tape.reshape(keys, &[b, l, h])?;
    let states = tape.reshape(z, &[b, l, h])?;
    let summary = tape.concat(&[f_last, b_first], 1)?;
    let init = (0..c.num_layers)
        .map(|layer| {
            let s = linear(
                tape,
                summary,
                p.get(&format!("bridge.{layer}.w"))?,
                p.get(&format!("bridge.{layer}.b"))?,
            )?;
            Ok(tape.tanh(s))
        })
        .collect::<Result<Vec<_>>>()?;
    let mask = source
        .mask
        .iter()
        .map(|&m| if m { 0.0 } else { MASKED_SCORE })
        .collect();
    let mask = tape.constant(Tensor::new(vec![b, l], mask)?);
    Ok(RnnMemory {
        states,
        keys,
        init,
        mask,
        batch: b,
        src_len: l,
    })
}

/// Additive attention of decoder state `s [B, H]` over the encoder states.
fn attend(tape: &mut Tape, p: &ParamVars, m: &RnnMemory, s: Var) -> Result<(Var, Var)> {
    let (b, l) = (m.batch, m.src_len);
    let h = tape.shape(s)[1];
    let q = tape.matmul(s, p.get("attn.w_query")?)?;
    let q = tape.reshape(q, &[b, 1, h])?;
    let e = tape.add(m.keys, q)?;
    let e = tape.tanh(e);
    let e = tape.reshape(e, &[b * l, h])?;
    let scores = tape.matmul(e, p.get("attn.v")?)?;
    let scores = tape.reshape(scores, &[b, l])?;
    let scores = tape.add(scores, m.mask)?;
    let weights = tape.softmax(scores, 1)?;
    let w3 = tape.reshape(weights, &[b, 1, l])?;
    let ctx = tape.bmm(w3, m.states, false)?;
    Ok((tape.reshape(ctx, &[b, h])?, weights))
}

pub(crate) fn decode(
    c: &ModelConfig,
    tape: &mut Tape,
    p: &ParamVars,
    m: &RnnMemory,
    input: &PaddedSeqs,
) -> Result<ForwardOutput> {
    let (b, len, d, h) = (input.rows, input.len, c.embed_dim, c.hidden_dim);
    if b != m.batch {
        return Err(super::ModelError::Config(format!(
            "decoder batch {b} does not match encoder batch {}",
            m.batch
        )));
    }
    let cells = (0..c.num_layers)
        .map(|l| GruVars::lookup(p, &format!("dec.{l}")))
        .collect::<Result<Vec<_>>>()?;
    let emb = tape.embedding(p.get("tgt_embed")?, &input.ids)?;
    let emb = tape.reshape(emb, &[b, len, d])?;
    let mut states = m.init.clone();
    let top = c.num_layers - 1;
    let mut outs = Vec::with_capacity(len);
    let mut attention = Vec::with_capacity(len);
    for t in 0..len {
        let e = tape.slice(emb, 1, t, 1)?;
        let e = tape.reshape(e, &[b, d])?;
        let (ctx, weights) = attend(tape, p, m, states[top])?;
        attention.push(weights);
        let mut x = tape.concat(&[e, ctx], 1)?;
        for (l, cell) in cells.iter().enumerate() {
            let gi = cell.project_input(tape, x)?;
            states[l] = cell.step(tape, gi, states[l])?;
            x = states[l];
        }
        let out = tape.concat(&[states[top], ctx], 1)?;
        outs.push(tape.reshape(out, &[b, 1, 2 * h])?);
    }
    let outs = tape.concat(&outs, 1)?;
    let outs = tape.reshape(outs, &[b * len, 2 * h])?;
    let logits = linear(tape, outs, p.get("out.w")?, p.get("out.b")?)?;
    let logits = tape.reshape(logits, &[b, len, c.target_vocab_size])?;
    Ok(ForwardOutput { logits, attention })
}
