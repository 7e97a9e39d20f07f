//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs every criterion by default; pass criterion numbers to run a subset,
//! e.g. `cargo test --test acceptance -- 2 5`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use titlegen::corpus::io::parse_jsonl;
use titlegen::corpus::synthetic::TopicCorpusConfig;
use titlegen::corpus::{filter_corpus, tokenize_all, EncodedExample, PaddedSeqs, Vocab, BOS, EOS};
use titlegen::models::{Architecture, Dropout, ModelConfig, Seq2Seq};
use titlegen::tensor::{AdamState, Tape};
use titlegen::training::*;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradients() -> Outcome {
    let mut worst_op = ("", 0.0f64);
    for (name, make) in common::op_cases() {
        let err = common::run_op(make, name);
        check(err < common::OP_TOL, || format!("op {name}: relative error {err:e}"))?;
        if err > worst_op.1 {
            worst_op = (name, err);
        }
    }
    let mut worst_model = 0.0f64;
    for arch in [Architecture::Rnn, Architecture::Transformer] {
        for seed in 0..common::TRIALS {
            let r = common::check_model(arch, seed);
            check(r.relative_error < common::MODEL_TOL, || {
                format!("{arch:?} seed {seed}: relative error {:e}", r.relative_error)
            })?;
            worst_model = worst_model.max(r.relative_error);
        }
    }
    Ok(format!(
        "{} ops x {} trials, worst op {} {:.1e} < 1e-4; both models x {} seeds, worst {:.1e} < 1e-3",
        common::op_cases().len(),
        common::TRIALS,
        worst_op.0,
        worst_op.1,
        common::TRIALS,
        worst_model
    ))
}

/// Max |logit difference| between each source row and a permuted copy, per
/// row, for rows of lengths 1..=64.
fn permutation_gaps(model: &Seq2Seq, seed: u64) -> Vec<f64> {
    let params = model.init_params(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let vs = model.config().source_vocab_size;
    let mut pool: Vec<usize> = (4..vs).collect();
    let (mut src, mut perm, mut dec) = (Vec::new(), Vec::new(), Vec::new());
    for len in 1..=64 {
        pool.shuffle(&mut rng);
        let row = pool[..len].to_vec();
        let mut shuffled = row.clone();
        while len > 1 && shuffled == row {
            shuffled.shuffle(&mut rng);
        }
        src.push(row);
        perm.push(shuffled);
        let mut d = vec![BOS];
        d.extend((0..5).map(|_| rng.gen_range(4..model.config().target_vocab_size)));
        dec.push(d);
    }
    let logits = |rows: &[Vec<usize>]| {
        let mut tape = Tape::new();
        let p = params.register(&mut tape, false);
        let out = model
            .forward(
                &mut tape,
                &p,
                &PaddedSeqs::from_rows(rows),
                &PaddedSeqs::from_rows(&dec),
                &mut Dropout::disabled(),
            )
            .unwrap();
        tape.value(out.logits).data().to_vec()
    };
    let (a, b) = (logits(&src), logits(&perm));
    a.chunks(a.len() / 64)
        .zip(b.chunks(b.len() / 64))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
        .collect()
}

fn permutation_invariance() -> Outcome {
    let model = |pos: bool| {
        Seq2Seq::new(ModelConfig {
            encoder_positional_encoding: pos,
            ..ModelConfig::new(Architecture::Transformer, 200, 60)
        })
        .unwrap()
    };
    let (delete_pos, standard) = (model(false), model(true));
    let mut worst = 0.0f64;
    let mut violating_seeds = 0;
    for seed in 0..10 {
        let gaps = permutation_gaps(&delete_pos, seed);
        worst = gaps.iter().copied().fold(worst, f64::max);
        if permutation_gaps(&standard, seed)[1..].iter().any(|&g| g > 1e-6) {
            violating_seeds += 1;
        }
    }
    check(worst <= 1e-9, || format!("delete-pos gap {worst:e} > 1e-9"))?;
    check(violating_seeds == 10, || {
        format!("standard transformer order-sensitive on only {violating_seeds}/10 seeds")
    })?;
    Ok(format!(
        "delete-pos max gap {worst:.1e} <= 1e-9 over lengths 1..64 x 10 seeds; standard violates on 10/10"
    ))
}

fn uniform_bound() -> Outcome {
    let words = Vocab::from_tokens((0..1882).map(|i| format!("w{i}"))).unwrap();
    let v = words.len();
    let expect = (v as f64).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let examples: Vec<EncodedExample> = (0..40)
        .map(|_| {
            let mut target = vec![BOS];
            target.extend((0..rng.gen_range(1..8)).map(|_| rng.gen_range(4..v)));
            target.push(EOS);
            EncodedExample {
                source: (0..rng.gen_range(1..20)).map(|_| rng.gen_range(4..100)).collect(),
                target,
            }
        })
        .collect();
    let mut report = Vec::new();
    for arch in [Architecture::Rnn, Architecture::Transformer] {
        let model = Seq2Seq::new(ModelConfig {
            embed_dim: 16,
            hidden_dim: 16,
            ..ModelConfig::new(arch, 100, v)
        })
        .unwrap();
        let mut params = model.init_params(0);
        for name in ["out.w", "out.b"] {
            params.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let nll = evaluate_nll(&model, &params, &examples, 16).map_err(|e| e.to_string())?.nll;
        check((nll - expect).abs() < 1e-9, || format!("{arch:?}: {nll} vs ln {v} = {expect}"))?;
        report.push(format!("{arch:?} {nll:.10}"));
    }
    Ok(format!("|V|={v}, ln|V|={expect:.10}; {}", report.join(", ")))
}

fn overfit() -> Outcome {
    let data = common::topic_data(&TopicCorpusConfig {
        playlists: 32,
        seed: 11,
        ..Default::default()
    });
    let examples = common::all_examples(&data);
    check(examples.len() == 32, || format!("{} playlists survived preparation", examples.len()))?;
    let model = Seq2Seq::new(ModelConfig::new(
        Architecture::Transformer,
        data.track_vocab.len(),
        data.word_vocab.len(),
    ))
    .unwrap();
    let cfg = TrainConfig::default();
    check(cfg.base_lr == 0.005, || "default learning rate changed".into())?;
    let mut params = model.init_params(0);
    let mut opt = AdamState::new(cfg.adam(), params.tensors());
    let start = Instant::now();
    let mut last = f64::INFINITY;
    for epoch in 1..=200 {
        train_epoch(&model, &mut params, &mut opt, &examples, &cfg, epoch).map_err(|e| e.to_string())?;
        last = evaluate_nll(&model, &params, &examples, 64).map_err(|e| e.to_string())?.nll;
        if last < 0.5 {
            let t = start.elapsed();
            check(t < Duration::from_secs(300), || format!("took {t:?}"))?;
            return Ok(format!("train NLL {last:.4} < 0.5 after epoch {epoch} in {t:.1?}"));
        }
    }
    Err(format!("train NLL still {last:.4} after 200 epochs"))
}

/// Corpus and model size for the trend comparison; see README.
const TREND_CORPUS: TopicCorpusConfig = TopicCorpusConfig {
    playlists: 2000,
    topics: 20,
    tracks_per_topic: 400,
    shared_tracks: 100,
    min_tracks: 11,
    max_tracks: 20,
    shared_fraction: 0.85,
    seed: 0,
};
const TREND_DIMS: (usize, usize) = (32, 64);
const TREND_LR: f64 = 0.001;
const TREND_EPOCHS: usize = 40;
const TREND_PATIENCE: usize = 5;

fn trend() -> Outcome {
    let start = Instant::now();
    let data = common::topic_data(&TREND_CORPUS);
    let variants = [
        ("vanilla", Architecture::Transformer, true, false),
        ("shuffle", Architecture::Transformer, true, true),
        ("delete-pos", Architecture::Transformer, false, false),
        ("rnn", Architecture::Rnn, true, false),
    ];
    let mut means = Vec::new();
    for (_, arch, pos, aug) in variants {
        let model = Seq2Seq::new(ModelConfig {
            embed_dim: TREND_DIMS.0,
            hidden_dim: TREND_DIMS.1,
            encoder_positional_encoding: pos,
            ..ModelConfig::new(arch, data.track_vocab.len(), data.word_vocab.len())
        })
        .unwrap();
        let mut total = 0.0;
        for seed in 0..3 {
            let cfg = TrainConfig {
                base_lr: TREND_LR,
                max_epochs: TREND_EPOCHS,
                patience: TREND_PATIENCE,
                init_seed: seed,
                epoch_seed_base: seed,
                shuffle_augment: aug,
                ..Default::default()
            };
            let (ckpt, _) = fit(&model, &data, &cfg).map_err(|e| e.to_string())?;
            total += ckpt.meta.best_validation_nll;
        }
        means.push(total / 3.0);
    }
    let [vanilla, shuffle, delete_pos, rnn] = means[..] else { unreachable!() };
    let summary = format!(
        "mean val NLL over 3 seeds: vanilla {vanilla:.4}, shuffle {shuffle:.4}, delete-pos {delete_pos:.4}, rnn {rnn:.4} ({:.0?})",
        start.elapsed()
    );
    check(shuffle <= vanilla, || format!("shuffle worse than vanilla; {summary}"))?;
    check(delete_pos <= vanilla, || format!("delete-pos worse than vanilla; {summary}"))?;
    check(vanilla - shuffle.min(delete_pos) >= 0.05, || {
        format!("no variant better by 0.05; {summary}")
    })?;
    check(vanilla < rnn, || format!("vanilla not better than rnn; {summary}"))?;
    check(start.elapsed() < Duration::from_secs(1800), || format!("too slow; {summary}"))?;
    Ok(summary)
}

fn filter_fixture() -> Outcome {
    let text = include_str!("fixtures/playlists_200.jsonl");
    let playlists = parse_jsonl(text).map_err(|e| e.to_string())?;
    let (kept, report) = filter_corpus(&tokenize_all(&playlists));
    let r = &report.rejected;
    let got = (report.input_count, kept.len(), r.title_tokens, r.track_count, r.char_length);
    check(got == (200, 117, 40, 25, 18), || format!("counts {got:?}"))?;
    let (before, after) = (report.before.average_title_length, report.after.average_title_length);
    check(after > before, || format!("average title length {before} -> {after}"))?;
    Ok(format!(
        "200 in, 117 kept; rejected 40 title / 25 tracks / 18 chars; average title length {before:.2} -> {after:.2}"
    ))
}

fn checkpoint_round_trip() -> Outcome {
    let data = common::topic_data(&TopicCorpusConfig {
        playlists: 80,
        ..Default::default()
    });
    let mut nlls = Vec::new();
    for arch in [Architecture::Rnn, Architecture::Transformer] {
        let model = Seq2Seq::new(ModelConfig {
            embed_dim: 16,
            hidden_dim: 32,
            ..ModelConfig::new(arch, data.track_vocab.len(), data.word_vocab.len())
        })
        .unwrap();
        let cfg = TrainConfig {
            max_epochs: 2,
            patience: 2,
            ..Default::default()
        };
        let (ckpt, _) = fit(&model, &data, &cfg).map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&ckpt, &path).map_err(|e| e.to_string())?;
        let loaded = load_checkpoint(&path).map_err(|e| e.to_string())?;
        let a = evaluate_nll(&model, &ckpt.params, &data.validation, 64).map_err(|e| e.to_string())?.nll;
        let b = evaluate_nll(&model, &loaded.params, &data.validation, 64).map_err(|e| e.to_string())?.nll;
        check((a - b).abs() <= 1e-12, || format!("{arch:?}: {a} vs {b}"))?;
        nlls.push(b);

        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        std::fs::write(&path, &bytes[..bytes.len() - 100]).map_err(|e| e.to_string())?;
        check(matches!(load_checkpoint(&path), Err(CheckpointError::Truncated(_))), || {
            "truncated file accepted".into()
        })?;
        let mut corrupt = bytes.clone();
        let i = corrupt.len() - 17;
        corrupt[i] ^= 1;
        check(matches!(Checkpoint::from_bytes(&corrupt), Err(CheckpointError::Corrupt(_))), || {
            "corrupted blob accepted".into()
        })?;
    }
    Ok(format!(
        "reloaded NLL identical within 1e-12 (rnn {:.6}, transformer {:.6}); truncated and bit-flipped files rejected",
        nlls[0], nlls[1]
    ))
}

fn early_stopping_rule() -> Outcome {
    let run = |seq: &[f64], max_epochs: usize, patience: usize| {
        let mut calls = 0;
        let out = early_stopping(max_epochs, patience, |e| {
            calls += 1;
            Ok::<_, ()>((seq[e - 1], e))
        })
        .unwrap()
        .unwrap();
        (out, calls)
    };
    let (out, calls) = run(&[3.0, 2.5, 2.6, 2.7, 2.8, 2.9, 3.0], 100, 5);
    check((calls, out.best_epoch, out.best_state) == (7, 2, 2) && out.best_value == 2.5, || {
        format!("patience 5: stopped after {calls}, best epoch {}", out.best_epoch)
    })?;
    let falling: Vec<f64> = (0..8).map(|i| 4.0 - 0.25 * i as f64).collect();
    let (out, calls) = run(&falling, 8, 8);
    check((calls, out.best_epoch) == (8, 8), || {
        format!("monotone: ran {calls}, best epoch {}", out.best_epoch)
    })?;
    Ok("[3.0,2.5,2.6,2.7,2.8,2.9,3.0] patience 5 stops after epoch 7 keeping epoch 2; monotone run keeps the last of 8".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient correctness", gradients),
        ("permutation invariance", permutation_invariance),
        ("uniform bound", uniform_bound),
        ("overfit sanity", overfit),
        ("trend reproduction", trend),
        ("filter fixture", filter_fixture),
        ("checkpoint round-trip", checkpoint_round_trip),
        ("early stopping", early_stopping_rule),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n}. {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n}. {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
