use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::config::RunConfig;
use super::provenance::{self, Provenance};
use super::{
    Cli, CliError, Command, CorpusArgs, EvaluateArgs, FinetuneArgs, IngestArgs, PretrainArgs, Split, SweepArgs, TaskArgs,
    TokenizerArgs, TrainArgs, VerifyArgs, EXIT_COMPUTE, EXIT_OK,
};
use crate::corpus::io::{read_corpus, write_corpus};
use crate::corpus::{build_corpus, CorpusConfig, TaskCounts};
use crate::finetune::{self, read_dataset, split_train_test, write_report_csvs, LabeledExample, TaskKind, TaskSpec};
use crate::ingest::archive::{read_archive, write_archive};
use crate::ingest::{anonymize, ingest_file, to_hex_unit, Granularity, HexUnit, IngestReport, SessionFlow};
use crate::model::{
    load_checkpoint, msp_token_accuracy, save_checkpoint, BatchItem, LossRecord, ModelConfig, ModelParams, Scalar,
    TrainConfig, Trainer,
};
use crate::tokenizer::{build_vanilla_vocab, encode, train_wordpiece, Scheme, Vocabulary};

struct Ctx {
    config: RunConfig,
    seed: u64,
}

pub(super) fn dispatch(cli: Cli) -> Result<i32, CliError> {
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    let ctx = Ctx { config, seed };
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::TrainTokenizer(a) => train_tokenizer(&ctx, a),
        Command::BuildCorpus(a) => build(&ctx, a),
        Command::Pretrain(a) => pretrain(&ctx, a),
        Command::Finetune(a) => tune(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::Verify(a) => verify(a),
    }
}

fn resolve(flag: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| CliError::Usage(format!("missing --{what} (and no paths.{what} in the config)")))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    Ok(BufReader::new(File::open(path).map_err(|e| CliError::io(path, e))?))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes") + "\n";
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("value serializes"));
}

fn pcap_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for input in inputs {
        let meta = std::fs::metadata(input).map_err(|e| CliError::io(input, e))?;
        if meta.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .map_err(|e| CliError::io(input, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && matches!(p.extension().and_then(|x| x.to_str()), Some("pcap" | "cap")))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    Ok(files)
}

fn ingest(ctx: &Ctx, a: IngestArgs) -> Result<i32, CliError> {
    let files = pcap_files(&a.inputs)?;
    let mut report = IngestReport::default();
    let mut flows = Vec::new();
    for f in &files {
        let (fs, r) = ingest_file(f)?;
        report.merge(&r);
        if a.keep_raw {
            flows.extend(fs);
        } else {
            for flow in &fs {
                flows.push(anonymize(flow)?);
            }
        }
    }
    let inputs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    let prov = Provenance::new("ingest", ctx.seed, &inputs)?;
    let mut meta = serde_json::Map::new();
    meta.insert("provenance".into(), prov.to_value());
    meta.insert("report".into(), serde_json::to_value(&report).expect("report serializes"));
    meta.insert("anonymized".into(), (!a.keep_raw).into());
    let mut w = create(&a.out)?;
    write_archive(&mut w, meta, &flows)?;
    finish(w, &a.out)?;
    print_json(&report);
    Ok(EXIT_OK)
}

fn load_flows(path: &Path) -> Result<Vec<SessionFlow>, CliError> {
    Ok(read_archive(open(path)?)?.1)
}

/// Flow-granularity unit with each payload cut to `max_payload_bytes`.
fn trim_unit(mut unit: HexUnit, max_payload_bytes: usize) -> HexUnit {
    for p in &mut unit.packets {
        p.payload.truncate(max_payload_bytes * 2);
    }
    unit
}

fn flow_units(flows: &[SessionFlow], max_payload_bytes: usize) -> Result<Vec<HexUnit>, CliError> {
    let mut units = Vec::with_capacity(flows.len());
    for f in flows {
        for u in to_hex_unit(f, Granularity::Flow, None)? {
            units.push(trim_unit(u, max_payload_bytes));
        }
    }
    Ok(units)
}

fn train_tokenizer(ctx: &Ctx, a: TokenizerArgs) -> Result<i32, CliError> {
    let cfg = &ctx.config.tokenizer;
    let scheme: Scheme = a.scheme.as_deref().unwrap_or(&cfg.scheme).parse()?;
    let size = a.size.unwrap_or(cfg.size);
    let (vocab, archive) = match scheme {
        Scheme::Vanilla => (build_vanilla_vocab(), None),
        Scheme::WordpieceWord | Scheme::WordpiecePd => {
            let archive = resolve(a.archive, &ctx.config.paths.archive, "archive")?;
            let units = flow_units(&load_flows(&archive)?, ctx.config.corpus.max_payload_bytes)?;
            let predefined = (scheme == Scheme::WordpiecePd).then(build_vanilla_vocab);
            (train_wordpiece(&units, size, predefined.as_ref(), ctx.seed)?, Some(archive))
        }
    };
    let inputs: Vec<&Path> = archive.iter().map(PathBuf::as_path).collect();
    let prov = Provenance::new("train-tokenizer", ctx.seed, &inputs)?;
    let text = vocab.to_file_string();
    let (first, rest) = text.split_once('\n').expect("vocabulary files have a header line");
    let body = format!("{first} {}\n{rest}", provenance::vocab_header_field(&prov));
    std::fs::write(&a.out, body).map_err(|e| CliError::io(&a.out, e))?;
    print_json(&json!({"scheme": scheme.to_string(), "size": vocab.len(), "checksum": vocab.checksum_hex()}));
    Ok(EXIT_OK)
}

fn load_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    Vocabulary::load(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn build(ctx: &Ctx, a: CorpusArgs) -> Result<i32, CliError> {
    let archive = resolve(a.archive, &ctx.config.paths.archive, "archive")?;
    let vocab_path = resolve(a.vocab, &ctx.config.paths.vocab, "vocab")?;
    let vocab = load_vocab(&vocab_path)?;
    let units = flow_units(&load_flows(&archive)?, ctx.config.corpus.max_payload_bytes)?;
    let seqs = units
        .iter()
        .map(|u| encode(&vocab, u, true))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = CorpusConfig {
        seed: ctx.seed,
        pop_rate: ctx.config.corpus.pop_rate,
        htp_rate: ctx.config.corpus.htp_rate,
    };
    let examples = build_corpus(&seqs, &cfg)?;
    let prov = Provenance::new("build-corpus", ctx.seed, &[&archive, &vocab_path])?;
    let meta = json!({"provenance": prov}).to_string();
    let mut w = create(&a.out)?;
    write_corpus(&mut w, vocab.checksum(), ctx.seed, &meta, &examples)?;
    finish(w, &a.out)?;

    let counts = TaskCounts::of(&examples);
    let n = counts.examples.max(1) as f64;
    let complement = (counts.examples - counts.pop_applied).max(1) as f64;
    let manifest = json!({
        "provenance": prov,
        "corpus": a.out,
        "vocab_checksum": vocab.checksum_hex(),
        "config": cfg,
        "pop_rate": counts.pop_applied as f64 / n,
        "htp_rate_of_complement": counts.htp_applied as f64 / complement,
        "masked_fraction": counts.masked_tokens as f64 / counts.maskable_tokens.max(1) as f64,
        "counts": counts,
    });
    let manifest_path = a.manifest.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".manifest.json");
        p.into()
    });
    write_json(&manifest_path, &manifest)?;
    print_json(&manifest);
    Ok(EXIT_OK)
}

struct TrainingSet {
    corpus: PathBuf,
    vocab_path: PathBuf,
    vocab: Vocabulary,
    items: Vec<BatchItem>,
}

fn load_training(ctx: &Ctx, a: &TrainArgs) -> Result<TrainingSet, CliError> {
    let corpus = resolve(a.corpus.clone(), &ctx.config.paths.corpus, "corpus")?;
    let vocab_path = resolve(a.vocab.clone(), &ctx.config.paths.vocab, "vocab")?;
    let vocab = load_vocab(&vocab_path)?;
    let (header, examples) = read_corpus(open(&corpus)?)?;
    if header.vocab_checksum != vocab.checksum() {
        return Err(CliError::Usage(format!(
            "vocabulary checksum mismatch: {} was built with {}, {} is {}",
            corpus.display(),
            hex::encode(header.vocab_checksum),
            vocab_path.display(),
            vocab.checksum_hex()
        )));
    }
    Ok(TrainingSet {
        corpus,
        vocab_path,
        vocab,
        items: examples.iter().map(BatchItem::from).collect(),
    })
}

fn model_config(ctx: &Ctx, vocab: &Vocabulary) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        seed: ctx.seed,
        ..ctx.config.model.clone()
    }
}

fn train_config(ctx: &Ctx, steps: Option<u64>) -> TrainConfig {
    let mut t = ctx.config.train.clone();
    t.total_steps = steps.unwrap_or(t.total_steps);
    t.warmup_steps = t.warmup_steps.min(t.total_steps);
    t
}

fn train_from_scratch<F: Scalar>(
    model: &ModelConfig,
    train: TrainConfig,
    items: &[BatchItem],
    on_record: impl FnMut(&LossRecord),
) -> Result<(ModelParams<F>, Option<LossRecord>), CliError> {
    let steps = train.total_steps;
    let mut trainer = Trainer::new(ModelParams::<F>::init(model)?, train)?;
    let last = trainer.fit(items, steps, on_record)?;
    Ok((trainer.params, last))
}

/// Runs `body` with a JSON-lines writer when `path` is set.
fn with_log<T>(
    path: Option<&Path>,
    body: impl FnOnce(&mut dyn FnMut(&LossRecord)) -> Result<T, CliError>,
) -> Result<T, CliError> {
    let Some(path) = path else {
        return body(&mut |_| {});
    };
    let mut w = create(path)?;
    let mut failed = None;
    let out = body(&mut |r| {
        if failed.is_none() {
            if let Err(e) = writeln!(w, "{}", serde_json::to_string(r).expect("record serializes")) {
                failed = Some(e);
            }
        }
    })?;
    if let Some(e) = failed {
        return Err(CliError::io(path, e));
    }
    finish(w, path)?;
    Ok(out)
}

fn pretrain(ctx: &Ctx, a: PretrainArgs) -> Result<i32, CliError> {
    let set = load_training(ctx, &a.train)?;
    let model = model_config(ctx, &set.vocab);
    let train = train_config(ctx, a.train.steps);
    let steps = train.total_steps;
    let prov = Provenance::new("pretrain", ctx.seed, &[&set.corpus, &set.vocab_path])?;
    let last = with_log(a.log.as_deref(), |log| {
        let extra = |last: &Option<LossRecord>| {
            json!({"provenance": prov, "vocab_checksum": set.vocab.checksum_hex(), "final": last})
        };
        if a.train.f64 {
            let (params, last) = train_from_scratch::<f64>(&model, train, &set.items, log)?;
            save_checkpoint(&a.out, &params, steps, extra(&last))?;
            Ok(last)
        } else {
            let (params, last) = train_from_scratch::<f32>(&model, train, &set.items, log)?;
            save_checkpoint(&a.out, &params, steps, extra(&last))?;
            Ok(last)
        }
    })?;
    print_json(&json!({"steps": steps, "final": last, "checkpoint": a.out}));
    Ok(EXIT_OK)
}

struct TaskData {
    task: TaskSpec,
    checkpoint: PathBuf,
    vocab_path: PathBuf,
    dataset: PathBuf,
    vocab: Vocabulary,
    params: ModelParams<f32>,
    examples: Vec<LabeledExample>,
}

fn select<T: Clone>(items: Vec<T>, split: Split, seed: u64) -> Vec<T> {
    match split {
        Split::All => items,
        Split::Train => split_train_test(&items, seed).0,
        Split::Test => split_train_test(&items, seed).1,
    }
}

fn load_task(ctx: &Ctx, a: TaskArgs, split: Split) -> Result<TaskData, CliError> {
    let task = ctx.config.task(&a.task)?.clone();
    task.validate()?;
    let paths = &ctx.config.paths;
    let checkpoint = resolve(a.checkpoint, &paths.checkpoint, "checkpoint")?;
    let vocab_path = resolve(a.vocab, &paths.vocab, "vocab")?;
    let dataset = resolve(a.dataset, &paths.dataset, "dataset")?;
    let vocab = load_vocab(&vocab_path)?;
    if !checkpoint.is_file() {
        return Err(CliError::Usage(format!("{}: checkpoint not found", checkpoint.display())));
    }
    let ckpt = load_checkpoint::<f32>(&checkpoint)?;
    let recorded = ckpt.meta.extra.get("vocab_checksum").and_then(|v| v.as_str());
    if ckpt.params.config.vocab_size != vocab.len() || recorded.is_some_and(|c| c != vocab.checksum_hex()) {
        return Err(CliError::Usage(format!(
            "vocabulary checksum mismatch: {} does not belong to {}",
            vocab_path.display(),
            checkpoint.display()
        )));
    }
    let max_payload = ctx.config.corpus.max_payload_bytes;
    let examples = read_dataset(open(&dataset)?, task.granularity)?
        .into_iter()
        .map(|ex| LabeledExample {
            input_unit: trim_unit(ex.input_unit, max_payload),
            label: ex.label,
        })
        .collect();
    Ok(TaskData {
        task,
        checkpoint,
        vocab_path,
        dataset,
        vocab,
        params: ckpt.params,
        examples: select(examples, split, ctx.seed),
    })
}

fn tune(ctx: &Ctx, a: FinetuneArgs) -> Result<i32, CliError> {
    let mut d = load_task(ctx, a.task, a.split)?;
    let epochs = a.epochs.unwrap_or(ctx.config.finetune.epochs);
    let train = ctx.config.finetune.train_config(epochs, d.examples.len());
    d.params.config.seed = ctx.seed;
    let prov = Provenance::new("finetune", ctx.seed, &[&d.checkpoint, &d.vocab_path, &d.dataset])?;
    let (params, log) = finetune::finetune(d.params, &d.examples, &d.task, &d.vocab, &train, epochs)?;
    with_log(a.log.as_deref(), |sink| {
        log.iter().for_each(sink);
        Ok(())
    })?;
    let last = log.last().copied();
    let extra = json!({
        "provenance": prov,
        "vocab_checksum": d.vocab.checksum_hex(),
        "task": d.task.name,
        "final": last,
    });
    save_checkpoint(&a.out, &params, log.len() as u64, extra)?;
    print_json(&json!({"task": d.task.name, "examples": d.examples.len(), "steps": log.len(), "final": last}));
    Ok(EXIT_OK)
}

fn evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<i32, CliError> {
    let split = a.split;
    let d = load_task(ctx, a.task, split)?;
    let batch = ctx.config.finetune.eval_batch_size;
    let (report, predictions) = finetune::evaluate(&d.params, &d.vocab, &d.task, &d.examples, batch)?;
    let prov = Provenance::new("evaluate", ctx.seed, &[&d.checkpoint, &d.vocab_path, &d.dataset])?;
    let split_name = match split {
        Split::Train => "train",
        Split::Test => "test",
        Split::All => "all",
    };
    let doc = json!({"provenance": prov, "split": split_name, "report": report, "predictions": predictions});
    if let Some(dir) = a.out.or_else(|| ctx.config.paths.report_dir.clone()) {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        write_json(&dir.join("report.json"), &doc)?;
        if report.kind == TaskKind::Generation {
            write_report_csvs(&dir, &report)?;
        }
    }
    print_json(&json!({"split": split_name, "report": report}));
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct SweepCell {
    alpha: f64,
    beta: f64,
    msp_accuracy: f64,
    final_loss: Option<f64>,
}

fn sweep_cell<F: Scalar>(model: &ModelConfig, train: TrainConfig, items: &[BatchItem]) -> Result<(f64, Option<f64>), CliError> {
    let batch = train.batch_size;
    let (params, last) = train_from_scratch::<F>(model, train, items, |_| {})?;
    let acc = msp_token_accuracy(&params, items, batch)?.accuracy()?;
    Ok((acc, last.map(|r| r.total)))
}

/// Rows are beta, columns alpha, cells MSP accuracy.
pub fn sweep_table(alpha: &[f64], beta: &[f64], grid: &[Vec<f64>]) -> String {
    let mut out = format!("{:<10}", "beta\\alpha");
    for a in alpha {
        out += &format!("{a:>10}");
    }
    out.push('\n');
    for (b, row) in beta.iter().zip(grid) {
        out += &format!("{b:<10}");
        for acc in row {
            out += &format!("{acc:>10.4}");
        }
        out.push('\n');
    }
    out
}

fn sweep(ctx: &Ctx, a: SweepArgs) -> Result<i32, CliError> {
    let grid_cfg = ctx.config.sweep.as_ref();
    let pick = |flag: &Vec<f64>, cfg: Option<&Vec<f64>>, name: &str| {
        let v = if flag.is_empty() { cfg.cloned().unwrap_or_default() } else { flag.clone() };
        if v.is_empty() {
            Err(CliError::Usage(format!("sweep needs --{name} values")))
        } else {
            Ok(v)
        }
    };
    let alpha = pick(&a.alpha, grid_cfg.map(|g| &g.alpha), "alpha")?;
    let beta = pick(&a.beta, grid_cfg.map(|g| &g.beta), "beta")?;
    let set = load_training(ctx, &a.train)?;
    let base = model_config(ctx, &set.vocab);
    let train = train_config(ctx, a.train.steps);
    let mut cells = Vec::new();
    let mut grid = Vec::new();
    for &b in &beta {
        let mut row = Vec::new();
        for &al in &alpha {
            let model = ModelConfig {
                alpha: al,
                beta: b,
                ..base.clone()
            };
            let (acc, final_loss) = if a.train.f64 {
                sweep_cell::<f64>(&model, train.clone(), &set.items)?
            } else {
                sweep_cell::<f32>(&model, train.clone(), &set.items)?
            };
            row.push(acc);
            cells.push(SweepCell {
                alpha: al,
                beta: b,
                msp_accuracy: acc,
                final_loss,
            });
        }
        grid.push(row);
    }
    let table = sweep_table(&alpha, &beta, &grid);
    print!("{table}");
    if let Some(out) = &a.out {
        let prov = Provenance::new("sweep", ctx.seed, &[&set.corpus, &set.vocab_path])?;
        let doc = json!({
            "provenance": prov,
            "steps": train.total_steps,
            "alpha": alpha,
            "beta": beta,
            "grid": grid,
            "cells": cells,
            "table": table,
        });
        write_json(out, &doc)?;
    }
    Ok(EXIT_OK)
}

fn verify(a: VerifyArgs) -> Result<i32, CliError> {
    let mut code = EXIT_OK;
    for artifact in &a.artifacts {
        let lines = provenance::verify(artifact)?;
        if lines.is_empty() {
            println!("ok       {} (no recorded inputs)", artifact.display());
        }
        for l in lines {
            let status = match &l.actual {
                None => "missing",
                Some(_) if l.ok() => "ok",
                Some(_) => "mismatch",
            };
            if !l.ok() {
                code = EXIT_COMPUTE;
            }
            println!("{status:<8} {} <- {}", artifact.display(), l.input.display());
        }
    }
    Ok(code)
}
