//! Finite-difference cases shared by the gradient tests and the acceptance
//! run.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use titlegen::corpus::PaddedSeqs;
use titlegen::gradcheck::{check_gradients, GradCheckReport};
use titlegen::models::{
    multi_head_attention, Architecture, AttentionMask, Dropout, GruVars, MhaVars, ModelConfig,
    Seq2Seq,
};
use titlegen::tensor::{Result, Tape, Tensor, Var};

pub const EPS: f64 = 1e-4;
pub const OP_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;
pub const TRIALS: u64 = 20;

type Loss = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

pub struct Case {
    pub inputs: Vec<Tensor>,
    pub loss: Loss,
}

fn rt(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// Keeps values away from relu's kink.
fn off_zero(mut t: Tensor) -> Tensor {
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
    t
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(1..5)
}

/// `sum(y * r)` for a fixed random `r`, so every output entry matters.
fn weighted(t: &mut Tape, y: Var, r: &Tensor) -> Result<Var> {
    let c = t.constant(r.clone());
    let p = t.mul(y, c)?;
    Ok(t.sum(p))
}

/// Case whose loss is a weighted sum of a single op's output.
fn unary_case(
    inputs: Vec<Tensor>,
    out_shape: &[usize],
    rng: &mut ChaCha8Rng,
    op: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
) -> Case {
    let r = rt(rng, out_shape);
    Case {
        inputs,
        loss: Box::new(move |t, v| {
            let y = op(t, v)?;
            weighted(t, y, &r)
        }),
    }
}

pub fn op_cases() -> Vec<(&'static str, fn(&mut ChaCha8Rng) -> Case)> {
    vec![
        ("matmul", |rng| {
            let (m, k, n) = (dim(rng), dim(rng), dim(rng));
            let ins = vec![rt(rng, &[m, k]), rt(rng, &[k, n])];
            unary_case(ins, &[m, n], rng, |t, v| t.matmul(v[0], v[1]))
        }),
        ("bmm", |rng| {
            let (b, m, k, n) = (dim(rng), dim(rng), dim(rng), dim(rng));
            let ins = vec![rt(rng, &[b, m, k]), rt(rng, &[b, k, n])];
            unary_case(ins, &[b, m, n], rng, |t, v| t.bmm(v[0], v[1], false))
        }),
        ("bmm_transposed", |rng| {
            let (b, m, k, n) = (dim(rng), dim(rng), dim(rng), dim(rng));
            let ins = vec![rt(rng, &[b, m, k]), rt(rng, &[b, n, k])];
            unary_case(ins, &[b, m, n], rng, |t, v| t.bmm(v[0], v[1], true))
        }),
        ("add", |rng| {
            let (m, n) = (dim(rng), dim(rng));
            let ins = vec![rt(rng, &[m, n]), rt(rng, &[m, n])];
            unary_case(ins, &[m, n], rng, |t, v| t.add(v[0], v[1]))
        }),
        ("add_broadcast", |rng| {
            let (b, m, n) = (dim(rng), dim(rng), dim(rng));
            let ins = vec![rt(rng, &[b, m, n]), rt(rng, &[b, 1, n]), rt(rng, &[n])];
            unary_case(ins, &[b, m, n], rng, |t, v| {
                let y = t.add(v[0], v[1])?;
                t.add(y, v[2])
            })
        }),
        ("sub", |rng| {
            let (m, n) = (dim(rng), dim(rng));
            let ins = vec![rt(rng, &[m, n]), rt(rng, &[n])];
            unary_case(ins, &[m, n], rng, |t, v| t.sub(v[0], v[1]))
        }),
        ("mul", |rng| {
            let (m, n) = (dim(rng), dim(rng));
            let ins = vec![rt(rng, &[m, n]), rt(rng, &[m, n]), rt(rng, &[m, 1])];
            unary_case(ins, &[m, n], rng, |t, v| {
                let y = t.mul(v[0], v[1])?;
                t.mul(y, v[2])
            })
        }),
        ("affine", |rng| {
            let (m, n) = (dim(rng), dim(rng));
            let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let ins = vec![rt(rng, &[m, n])];
            unary_case(ins, &[m, n], rng, move |t, v| Ok(t.affine(v[0], a, b)))
        }),
        ("scale", |rng| {
            let n = dim(rng);
            let a = rng.gen_range(-3.0..3.0);
            let ins = vec![rt(rng, &[n])];
            unary_case(ins, &[n], rng, move |t, v| Ok(t.scale(v[0], a)))
        }),
        ("sigmoid", |rng| {
            let (m, n) = (dim(rng), dim(rng));
            let ins = vec![rt(rng, &[m, n]).map_scaled(4.0)];
            unary_case(ins, &[m, n], rng, |t, v| Ok(t.sigmoid(v[0])))
        }),
        ("tanh", |rng| {
            let (m, n) = (dim(rng), dim(rng));
            let ins = vec![rt(rng, &[m, n]).map_scaled(2.0)];
            unary_case(ins, &[m, n], rng, |t, v| Ok(t.tanh(v[0])))
        }),
        ("relu", |rng| {
            let (m, n) = (dim(rng), dim(rng));
            let ins = vec![off_zero(rt(rng, &[m, n]))];
            unary_case(ins, &[m, n], rng, |t, v| Ok(t.relu(v[0])))
        }),
        ("softmax", |rng| {
            let shape = [dim(rng), dim(rng) + 1, dim(rng)];
            let axis = rng.gen_range(0..3);
            let ins = vec![rt(rng, &shape).map_scaled(3.0)];
            unary_case(ins, &shape, rng, move |t, v| t.softmax(v[0], axis))
        }),
        ("layer_norm", |rng| {
            let (m, d) = (dim(rng), dim(rng) + 1);
            let ins = vec![rt(rng, &[m, d]).map_scaled(2.0), rt(rng, &[d]), rt(rng, &[d])];
            unary_case(ins, &[m, d], rng, |t, v| t.layer_norm(v[0], v[1], v[2]))
        }),
        ("embedding", |rng| {
            let (vocab, d, n) = (dim(rng) + 1, dim(rng), dim(rng) + 2);
            let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..vocab)).collect();
            let ins = vec![rt(rng, &[vocab, d])];
            unary_case(ins, &[n, d], rng, move |t, v| t.embedding(v[0], &ids))
        }),
        ("cross_entropy", |rng| {
            let (m, vocab) = (dim(rng) + 1, dim(rng) + 1);
            let mut targets: Vec<usize> = (0..m).map(|_| rng.gen_range(0..vocab)).collect();
            // Position 0 never uses the ignored class, so something is scored.
            let ignore = (targets[0] + 1) % vocab;
            if vocab == 1 {
                targets.iter_mut().for_each(|x| *x = 0);
            }
            let ignore = (vocab > 1).then_some(ignore);
            Case {
                inputs: vec![rt(rng, &[m, vocab]).map_scaled(3.0)],
                loss: Box::new(move |t, v| t.cross_entropy(v[0], &targets, ignore)),
            }
        }),
        ("sum", |rng| Case {
            inputs: vec![{
                let shape = [dim(rng), dim(rng)];
                rt(rng, &shape)
            }],
            loss: Box::new(|t, v| {
                let s = t.tanh(v[0]);
                Ok(t.sum(s))
            }),
        }),
        ("mean", |rng| Case {
            inputs: vec![{
                let shape = [dim(rng), dim(rng)];
                rt(rng, &shape)
            }],
            loss: Box::new(|t, v| {
                let s = t.sigmoid(v[0]);
                Ok(t.mean(s))
            }),
        }),
        ("reshape", |rng| {
            let (a, b, c) = (dim(rng), dim(rng), dim(rng));
            let ins = vec![rt(rng, &[a, b, c])];
            unary_case(ins, &[a * b, c], rng, move |t, v| t.reshape(v[0], &[a * b, c]))
        }),
        ("permute", |rng| {
            let shape = [dim(rng), dim(rng), dim(rng)];
            let mut perm = vec![0, 1, 2];
            perm.shuffle(rng);
            let out: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
            let ins = vec![rt(rng, &shape)];
            unary_case(ins, &out, rng, move |t, v| t.permute(v[0], &perm))
        }),
        ("concat", |rng| {
            let axis = rng.gen_range(0..2);
            let widths: Vec<usize> = (0..rng.gen_range(2..4)).map(|_| dim(rng)).collect();
            let other = dim(rng);
            let shape_of = |w: usize| if axis == 0 { [w, other] } else { [other, w] };
            let ins: Vec<Tensor> = widths.iter().map(|&w| rt(rng, &shape_of(w))).collect();
            let out = shape_of(widths.iter().sum());
            unary_case(ins, &out, rng, move |t, v| t.concat(v, axis))
        }),
        ("slice", |rng| {
            let (m, n) = (dim(rng), dim(rng) + 2);
            let start = rng.gen_range(0..n - 1);
            let len = rng.gen_range(1..=n - start);
            let ins = vec![rt(rng, &[m, n])];
            unary_case(ins, &[m, len], rng, move |t, v| t.slice(v[0], 1, start, len))
        }),
        ("multi_head_attention", |rng| {
            let (batch, heads) = (dim(rng).min(2), [1, 2][rng.gen_range(0..2)]);
            let d = 2 * heads;
            let (lq, lk) = (dim(rng), dim(rng) + 1);
            let mut ins: Vec<Tensor> = (0..4)
                .flat_map(|_| [rt(rng, &[d, d]), rt(rng, &[d])])
                .collect();
            ins.push(rt(rng, &[batch * lq, d]));
            ins.push(rt(rng, &[batch * lk, d]));
            let rows: Vec<Vec<usize>> = (0..batch)
                .map(|_| vec![5; rng.gen_range(1..=lk)])
                .collect();
            let keys = PaddedSeqs::from_rows(&rows);
            let mask = AttentionMask::key_padding(&keys, lq).additive().unwrap();
            let mask = pad_mask(mask, batch, lq, keys.len, lk);
            unary_case(ins, &[batch * lq, d], rng, move |t, v| {
                let p = MhaVars {
                    wq: v[0],
                    bq: v[1],
                    wk: v[2],
                    bk: v[3],
                    wv: v[4],
                    bv: v[5],
                    wo: v[6],
                    bo: v[7],
                };
                let m = t.constant(mask.clone());
                let a = multi_head_attention(t, &p, v[8], v[9], batch, heads, Some(m))
                    .map_err(model_err)?;
                Ok(a.output)
            })
        }),
        ("gru_three_steps", |rng| {
            let (b, i, h) = (dim(rng), dim(rng), dim(rng));
            let ins = vec![
                rt(rng, &[i, 3 * h]),
                rt(rng, &[h, 3 * h]),
                rt(rng, &[3 * h]),
                rt(rng, &[3 * h]),
                rt(rng, &[b, h]),
                rt(rng, &[b, i]),
                rt(rng, &[b, i]),
                rt(rng, &[b, i]),
            ];
            unary_case(ins, &[b, h], rng, |t, v| {
                let g = GruVars {
                    w_ih: v[0],
                    w_hh: v[1],
                    b_ih: v[2],
                    b_hh: v[3],
                };
                let mut s = v[4];
                for &x in &v[5..8] {
                    s = titlegen::models::gru_cell(t, &g, x, s).map_err(model_err)?;
                }
                Ok(s)
            })
        }),
    ]
}

/// Widens a key-padding mask built on the longest real row to `lk` keys.
fn pad_mask(mask: Tensor, batch: usize, lq: usize, have: usize, lk: usize) -> Tensor {
    let mut data = Vec::with_capacity(batch * lq * lk);
    for row in mask.data().chunks(have) {
        data.extend_from_slice(row);
        data.extend(std::iter::repeat_n(titlegen::models::MASKED_SCORE, lk - have));
    }
    Tensor::new(vec![batch, 1, lq, lk], data).unwrap()
}

fn model_err(e: titlegen::models::ModelError) -> titlegen::tensor::TensorError {
    match e {
        titlegen::models::ModelError::Tensor(t) => t,
        other => titlegen::tensor::TensorError::Contract(other.to_string()),
    }
}

trait Scaled {
    fn map_scaled(self, k: f64) -> Self;
}

impl Scaled for Tensor {
    fn map_scaled(mut self, k: f64) -> Self {
        self.data_mut().iter_mut().for_each(|v| *v *= k);
        self
    }
}

/// Worst relative error of `TRIALS` seeded trials of one op.
pub fn run_op(make: fn(&mut ChaCha8Rng) -> Case, name: &str) -> f64 {
    (0..TRIALS)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + name.len() as u64);
            let case = make(&mut rng);
            check_gradients(&case.inputs, &case.loss, EPS, None, &mut rng)
                .unwrap_or_else(|e| panic!("{name} trial {seed}: {e}"))
                .relative_error
        })
        .fold(0.0, f64::max)
}

/// Full teacher-forced loss of a small model on a two-example batch, checked
/// on a sample of every parameter tensor.
pub fn check_model(arch: Architecture, seed: u64) -> GradCheckReport {
    let model = Seq2Seq::new(ModelConfig {
        num_layers: 2,
        embed_dim: 4,
        hidden_dim: 6,
        num_heads: 2,
        encoder_positional_encoding: true,
        ..ModelConfig::new(arch, 12, 9)
    })
    .unwrap();
    let params = model.init_params(seed);
    let source = PaddedSeqs::from_rows(&[vec![4, 5, 6, 7], vec![8, 9, 10]]);
    let decoder_in = PaddedSeqs::from_rows(&[vec![1, 4, 5], vec![1, 6]]);
    let targets = vec![4, 5, 2, 6, 2, 0];
    let loss = |t: &mut Tape, v: &[Var]| -> Result<Var> {
        let p = params.attach(v).map_err(model_err)?;
        let out = model
            .forward(t, &p, &source, &decoder_in, &mut Dropout::disabled())
            .map_err(model_err)?;
        let logits = t.reshape(out.logits, &[6, 9])?;
        t.cross_entropy(logits, &targets, Some(0))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    check_gradients(params.tensors(), loss, EPS, Some(6), &mut rng).unwrap()
}

/// Topic corpus run through the whole preparation pipeline.
pub fn topic_data(config: &titlegen::corpus::synthetic::TopicCorpusConfig) -> titlegen::training::TrainData {
    use titlegen::corpus::{build_vocabs, filter_corpus, stratified_split, tokenize_all, SplitRatios};
    let playlists = titlegen::corpus::synthetic::topic_corpus(config);
    let (kept, _) = filter_corpus(&tokenize_all(&playlists));
    let split = stratified_split(&kept, SplitRatios::default(), config.seed).unwrap();
    let (tracks, words) = build_vocabs(&split.train, 1, 1).unwrap();
    titlegen::training::TrainData::from_split(&split, tracks, words, 256).unwrap()
}

/// Every example of `data` as one training set, for overfitting runs.
pub fn all_examples(data: &titlegen::training::TrainData) -> Vec<titlegen::corpus::EncodedExample> {
    let mut v = data.train.clone();
    v.extend(data.validation.iter().cloned());
    v.extend(data.test.iter().cloned());
    v
}
