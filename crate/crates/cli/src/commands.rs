use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use titlegen::corpus::io::{parse_jsonl, read_jsonl, write_jsonl, AdapterConfig};
use titlegen::corpus::{
    build_vocabs, filter_corpus, stratified_split, tokenize_all, SplitCorpus, TokenizedPlaylist,
    Vocab,
};
use titlegen::generation::{GenerationOptions, GenerationRequest, Generator};
use titlegen::models::Seq2Seq;
use titlegen::training::{
    evaluate_nll, fit_with_progress, load_checkpoint, save_checkpoint, TrainData, TrainError,
};

use crate::config::RunConfig;
use crate::Failure;

pub const SPLIT_FILES: [&str; 3] = ["train.jsonl", "val.jsonl", "test.jsonl"];
pub const TRACK_VOCAB_FILE: &str = "vocab_tracks.json";
pub const WORD_VOCAB_FILE: &str = "vocab_words.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.jsonl";

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = cfg
        .out_dir
        .clone()
        .ok_or_else(|| Failure::input("no output directory (use --out or out_dir)"))?;
    fs::create_dir_all(&dir)
        .map_err(|e| Failure::input(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

pub fn prepare(mut cfg: RunConfig, input: Option<PathBuf>, adapter: Option<PathBuf>) -> Result<(), Failure> {
    if input.is_some() {
        cfg.raw_path = input;
    }
    if adapter.is_some() {
        cfg.adapter_path = adapter;
    }
    cfg.echo();
    let raw = cfg
        .raw_path
        .clone()
        .ok_or_else(|| Failure::input("no input file (use --input or raw_path)"))?;
    let text = read_text(&raw)?;
    let playlists = match &cfg.adapter_path {
        Some(path) => {
            let adapter: AdapterConfig = serde_json::from_str(&read_text(path)?)
                .map_err(|e| Failure::input(format!("invalid adapter {}: {e}", path.display())))?;
            adapter.convert_text(&text)
        }
        None => parse_jsonl(&text),
    }
    .map_err(|e| Failure::input(format!("{}: {e}", raw.display())))?;

    let (kept, report) = filter_corpus(&tokenize_all(&playlists));
    if kept.is_empty() {
        return Err(Failure::empty(format!(
            "none of the {} playlists passed the filter",
            report.input_count
        )));
    }
    let split = stratified_split(&kept, cfg.split_ratios, cfg.split_seed)
        .map_err(|e| Failure::input(format!("split: {e}")))?;
    let (tracks, words) = build_vocabs(&split.train, cfg.min_count_track, cfg.min_count_word)
        .map_err(|e| Failure::input(format!("vocabulary: {e}")))?;

    let dir = out_dir(&cfg)?;
    for (name, part) in SPLIT_FILES.iter().zip([&split.train, &split.validation, &split.test]) {
        let records: Vec<_> = part.iter().map(TokenizedPlaylist::to_playlist).collect();
        write_jsonl(&dir.join(name), &records).map_err(|e| Failure::input(format!("{name}: {e}")))?;
    }
    write_file(&dir.join("report.json"), &pretty(&report))?;
    write_file(&dir.join(TRACK_VOCAB_FILE), &pretty(&tracks))?;
    write_file(&dir.join(WORD_VOCAB_FILE), &pretty(&words))?;
    println!(
        "{}",
        json!({
            "input": report.input_count,
            "kept": report.kept_count,
            "train": split.train.len(),
            "validation": split.validation.len(),
            "test": split.test.len(),
            "track_vocab": tracks.len(),
            "word_vocab": words.len(),
        })
    );
    Ok(())
}

fn read_vocab(path: &Path) -> Result<Vocab, Failure> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| Failure::input(format!("invalid vocabulary {}: {e}", path.display())))
}

fn read_split(path: &Path) -> Result<Vec<TokenizedPlaylist>, Failure> {
    let ps = read_jsonl(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    Ok(tokenize_all(&ps))
}

fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::NonFinite { .. } => Failure::numeric(e.to_string()),
        TrainError::Tensor(_) => Failure {
            code: 1,
            message: e.to_string(),
        },
        _ => Failure::input(e.to_string()),
    }
}

pub fn train(mut cfg: RunConfig, data: Option<PathBuf>) -> Result<(), Failure> {
    if data.is_some() {
        cfg.data_dir = data;
    }
    cfg.echo();
    let data_dir = cfg
        .data_dir
        .clone()
        .ok_or_else(|| Failure::input("no data directory (use --data or data_dir)"))?;
    let mut parts = Vec::new();
    for name in SPLIT_FILES {
        parts.push(read_split(&data_dir.join(name))?);
    }
    let test = parts.pop().unwrap();
    let validation = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    let split = SplitCorpus {
        train,
        validation,
        test,
        split_seed: cfg.split_seed,
    };
    let tracks = read_vocab(&data_dir.join(TRACK_VOCAB_FILE))?;
    let words = read_vocab(&data_dir.join(WORD_VOCAB_FILE))?;
    let model = Seq2Seq::new(cfg.model(tracks.len(), words.len()))
        .map_err(|e| Failure::input(e.to_string()))?;
    let train_cfg = cfg.train();
    train_cfg.validate().map_err(train_failure)?;
    let data = TrainData::from_split(&split, tracks, words, cfg.max_positions).map_err(train_failure)?;

    let dir = out_dir(&cfg)?;
    write_file(&dir.join("config.json"), &pretty(&cfg))?;
    let (ckpt, log) = fit_with_progress(&model, &data, &train_cfg, |r| {
        eprintln!("epoch {}", serde_json::to_string(r).expect("record serializes"));
    })
    .map_err(train_failure)?;
    let path = dir.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    write_file(&dir.join(LOG_FILE), &log.to_json_lines())?;
    println!(
        "{}",
        json!({
            "best_epoch": ckpt.meta.epoch,
            "epochs_run": ckpt.meta.epochs_run,
            "validation_nll": ckpt.meta.best_validation_nll,
            "test_nll": ckpt.meta.test_nll,
            "checkpoint": path,
        })
    );
    Ok(())
}

pub fn eval(cfg: RunConfig, checkpoint: &Path, split: &Path, batch_size: Option<usize>) -> Result<(), Failure> {
    cfg.echo();
    let ckpt = load_checkpoint(checkpoint)
        .map_err(|e| Failure::input(format!("{}: {e}", checkpoint.display())))?;
    let model = Seq2Seq::new(ckpt.model.clone()).map_err(|e| Failure::input(e.to_string()))?;
    let examples = read_split(split)?
        .iter()
        .map(|p| {
            titlegen::corpus::encode_pair(p, &ckpt.track_vocab, &ckpt.word_vocab, ckpt.model.max_positions)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::input(format!("{}: {e}", split.display())))?;
    let summary = evaluate_nll(&model, &ckpt.params, &examples, batch_size.unwrap_or(cfg.batch_size))
        .map_err(train_failure)?;
    println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    Ok(())
}

fn parse_request(line: &str, default_max: usize) -> Result<GenerationRequest, String> {
    let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    match v {
        Value::Array(_) => {
            let tracks: Vec<String> = serde_json::from_value(v).map_err(|e| e.to_string())?;
            Ok(GenerationRequest {
                tracks,
                max_length: default_max,
            })
        }
        Value::Object(ref o) => {
            let has_max = o.contains_key("max_length");
            let mut r: GenerationRequest = serde_json::from_value(v).map_err(|e| e.to_string())?;
            if !has_max {
                r.max_length = default_max;
            }
            Ok(r)
        }
        _ => Err("expected a JSON array of track IDs or an object with \"tracks\"".into()),
    }
}

pub fn generate(
    cfg: RunConfig,
    checkpoint: &Path,
    input: &Path,
    max_length: Option<usize>,
    suppress_unk: bool,
    shuffle_check: bool,
) -> Result<(), Failure> {
    cfg.echo();
    let ckpt = load_checkpoint(checkpoint)
        .map_err(|e| Failure::input(format!("{}: {e}", checkpoint.display())))?;
    let text = read_text(input)?;
    let default_max = cfg.max_length;
    let mut requests = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut r = parse_request(line, default_max)
            .map_err(|e| Failure::input(format!("{} line {}: {e}", input.display(), i + 1)))?;
        if let Some(m) = max_length {
            r.max_length = m;
        }
        requests.push(r);
    }
    let generator = Generator::new(&ckpt).map_err(|e| Failure::input(e.to_string()))?;
    let opts = GenerationOptions {
        suppress_unk: suppress_unk || cfg.suppress_unk,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for r in &requests {
        let line = match generator.generate(r, opts) {
            Ok(title) => {
                let mut v = json!({"tokens": title.tokens, "logprob": title.logprob});
                if shuffle_check {
                    let mut shuffled = r.clone();
                    shuffled.tracks.shuffle(&mut rng);
                    let matched = generator
                        .generate(&shuffled, opts)
                        .map(|t| t.tokens == title.tokens)
                        .unwrap_or(false);
                    v["shuffle_match"] = json!(matched);
                }
                v
            }
            Err(e) => json!({"error": e.to_string()}),
        };
        writeln!(out, "{line}").map_err(|e| Failure::input(format!("stdout: {e}")))?;
    }
    Ok(())
}
