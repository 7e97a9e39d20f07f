//! Post-norm transformer encoder-decoder.

use super::{
    linear, sinusoidal_positional_encoding, AttentionMask, Dropout, ForwardOutput, Init,
    ModelConfig, ModelError, MhaVars, ParamSpec, ParamVars, Result, MASKED_SCORE,
};
use crate::corpus::PaddedSeqs;
use crate::tensor::{Tape, Tensor, Var};

fn norm_specs(prefix: &str, d: usize) -> [ParamSpec; 2] {
    [
        ParamSpec::new(format!("{prefix}.gamma"), &[d], Init::Ones),
        ParamSpec::new(format!("{prefix}.beta"), &[d], Init::Zeros),
    ]
}

fn ff_specs(prefix: &str, d: usize, f: usize) -> [ParamSpec; 4] {
    [
        ParamSpec::weight(format!("{prefix}.w1"), d, f),
        ParamSpec::bias(format!("{prefix}.b1"), d, f),
        ParamSpec::weight(format!("{prefix}.w2"), f, d),
        ParamSpec::bias(format!("{prefix}.b2"), f, d),
    ]
}

pub(crate) fn param_specs(c: &ModelConfig) -> Vec<ParamSpec> {
    let (d, f) = (c.embed_dim, c.hidden_dim);
    let k = 1.0 / (d as f64).sqrt();
    let mut specs = vec![
        ParamSpec::new("src_embed", &[c.source_vocab_size, d], Init::Embedding(k)),
        ParamSpec::new("tgt_embed", &[c.target_vocab_size, d], Init::Embedding(k)),
    ];
    for l in 0..c.num_layers {
        specs.extend(MhaVars::specs(&format!("enc.{l}.attn"), d));
        specs.extend(norm_specs(&format!("enc.{l}.ln1"), d));
        specs.extend(ff_specs(&format!("enc.{l}.ff"), d, f));
        specs.extend(norm_specs(&format!("enc.{l}.ln2"), d));
    }
    for l in 0..c.num_layers {
        specs.extend(MhaVars::specs(&format!("dec.{l}.self"), d));
        specs.extend(norm_specs(&format!("dec.{l}.ln1"), d));
        specs.extend(MhaVars::specs(&format!("dec.{l}.cross"), d));
        specs.extend(norm_specs(&format!("dec.{l}.ln2"), d));
        specs.extend(ff_specs(&format!("dec.{l}.ff"), d, f));
        specs.extend(norm_specs(&format!("dec.{l}.ln3"), d));
    }
    specs.push(ParamSpec::weight("out.w", d, c.target_vocab_size));
    specs.push(ParamSpec::bias("out.b", d, c.target_vocab_size));
    specs
}

pub struct TransformerMemory {
    /// Encoder output `[B * L, d]`.
    states: Var,
    /// Additive key padding mask `[B, 1, 1, L]`.
    mask: Var,
    batch: usize,
}

/// `sqrt(d) * E[ids]`, plus the positional table when requested, flattened to
/// `[B * len, d]`.
fn embed(
    c: &ModelConfig,
    tape: &mut Tape,
    table: Var,
    seqs: &PaddedSeqs,
    positional: bool,
    dropout: &mut Dropout,
) -> Result<Var> {
    let d = c.embed_dim;
    let x = tape.embedding(table, &seqs.ids)?;
    let mut x = tape.scale(x, (d as f64).sqrt());
    if positional {
        let pe = sinusoidal_positional_encoding(seqs.len, d)?;
        let pe = tape.constant(pe);
        let x3 = tape.reshape(x, &[seqs.rows, seqs.len, d])?;
        let x3 = tape.add(x3, pe)?;
        x = tape.reshape(x3, &[seqs.rows * seqs.len, d])?;
    }
    dropout.apply(tape, x)
}

fn layer_norm(tape: &mut Tape, p: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let g = p.get(&format!("{prefix}.gamma"))?;
    let b = p.get(&format!("{prefix}.beta"))?;
    Ok(tape.layer_norm(x, g, b)?)
}

fn feed_forward(tape: &mut Tape, p: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let g = |n: &str| p.get(&format!("{prefix}.{n}"));
    let h = linear(tape, x, g("w1")?, g("b1")?)?;
    let h = tape.relu(h);
    linear(tape, h, g("w2")?, g("b2")?)
}

/// `LayerNorm(x + Dropout(sub))`.
fn add_norm(
    tape: &mut Tape,
    p: &ParamVars,
    prefix: &str,
    x: Var,
    sub: Var,
    dropout: &mut Dropout,
) -> Result<Var> {
    let sub = dropout.apply(tape, sub)?;
    let y = tape.add(x, sub)?;
    layer_norm(tape, p, prefix, y)
}

pub(crate) fn encode(
    c: &ModelConfig,
    tape: &mut Tape,
    p: &ParamVars,
    source: &PaddedSeqs,
    dropout: &mut Dropout,
) -> Result<TransformerMemory> {
    let (b, l) = (source.rows, source.len);
    let mut x = embed(c, tape, p.get("src_embed")?, source, c.encoder_positional_encoding, dropout)?;
    let self_mask = AttentionMask::key_padding(source, l).to_var(tape)?;
    for layer in 0..c.num_layers {
        let pre = format!("enc.{layer}");
        let attn = MhaVars::lookup(p, &format!("{pre}.attn"))?;
        let a = super::multi_head_attention(tape, &attn, x, x, b, c.num_heads, Some(self_mask))?;
        x = add_norm(tape, p, &format!("{pre}.ln1"), x, a.output, dropout)?;
        let f = feed_forward(tape, p, &format!("{pre}.ff"), x)?;
        x = add_norm(tape, p, &format!("{pre}.ln2"), x, f, dropout)?;
    }
    let mask = source
        .mask
        .iter()
        .map(|&m| if m { 0.0 } else { MASKED_SCORE })
        .collect();
    let mask = tape.constant(Tensor::new(vec![b, 1, 1, l], mask)?);
    Ok(TransformerMemory {
        states: x,
        mask,
        batch: b,
    })
}

pub(crate) fn decode(
    c: &ModelConfig,
    tape: &mut Tape,
    p: &ParamVars,
    m: &TransformerMemory,
    input: &PaddedSeqs,
    dropout: &mut Dropout,
) -> Result<ForwardOutput> {
    let (b, len) = (input.rows, input.len);
    if b != m.batch {
        return Err(ModelError::Config(format!(
            "decoder batch {b} does not match encoder batch {}",
            m.batch
        )));
    }
    let mut x = embed(c, tape, p.get("tgt_embed")?, input, true, dropout)?;
    let causal = AttentionMask::causal(input).to_var(tape)?;
    let mut attention = Vec::with_capacity(2 * c.num_layers);
    for layer in 0..c.num_layers {
        let pre = format!("dec.{layer}");
        let self_attn = MhaVars::lookup(p, &format!("{pre}.self"))?;
        let a = super::multi_head_attention(tape, &self_attn, x, x, b, c.num_heads, Some(causal))?;
        attention.push(a.weights);
        x = add_norm(tape, p, &format!("{pre}.ln1"), x, a.output, dropout)?;
        let cross = MhaVars::lookup(p, &format!("{pre}.cross"))?;
        let a = super::multi_head_attention(tape, &cross, x, m.states, b, c.num_heads, Some(m.mask))?;
        attention.push(a.weights);
        x = add_norm(tape, p, &format!("{pre}.ln2"), x, a.output, dropout)?;
        let f = feed_forward(tape, p, &format!("{pre}.ff"), x)?;
        x = add_norm(tape, p, &format!("{pre}.ln3"), x, f, dropout)?;
    }
    let logits = linear(tape, x, p.get("out.w")?, p.get("out.b")?)?;
    let logits = tape.reshape(logits, &[b, len, c.target_vocab_size])?;
    Ok(ForwardOutput { logits, attention })
}
