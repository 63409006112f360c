//! Pre-trains briefly on synthetic flows, then fine-tunes a 2-class
//! understanding task whose label is fixed by the first payload word.
//!
//! ```text
//! cargo run --release --example finetune_classify -- [examples] [pretrain_steps] [lr] [d_model]
//! ```

use std::time::Instant;

use lens::corpus::{build_corpus, CorpusConfig};
use lens::finetune::{evaluate, finetune, split_train_test, LabeledExample, TaskKind, TaskSpec};
use lens::ingest::{anonymize, extract_flows, parse_pcap_bytes, to_hex_unit, Granularity, SessionFlow};
use lens::model::{BatchItem, ModelConfig, ModelParams, TrainConfig, Trainer};
use lens::synth::{capture_frames, synth_flows, write_capture, SynthConfig};
use lens::tokenizer::{build_vanilla_vocab, encode, train_wordpiece};

const LABELS: [&str; 2] = ["benign", "malware"];

fn flows(seed: u64, n: usize) -> anyhow::Result<Vec<SessionFlow>> {
    let cfg = SynthConfig {
        flows: n,
        packets: 3..=3,
        payload_bytes: 4..=8,
        udp_fraction: 0.5,
        classes: 2,
    };
    let synth = synth_flows(seed, &cfg);
    let mut pcap = Vec::new();
    write_capture(&mut pcap, &capture_frames(&synth))?;
    let (flows, _) = extract_flows(&parse_pcap_bytes(&pcap)?);
    Ok(flows.iter().map(anonymize).collect::<Result<_, _>>()?)
}

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map_or(Ok(400), |s| s.parse())?;
    let pre_steps: u64 = args.get(2).map_or(Ok(200), |s| s.parse())?;
    let lr: f64 = args.get(3).map_or(Ok(3e-5), |s| s.parse())?;
    let d_model: usize = args.get(4).map_or(Ok(64), |s| s.parse())?;

    let pre_flows = flows(1, 256)?;
    let task_flows = flows(2, n)?;
    let mut units = Vec::new();
    for f in pre_flows.iter().chain(&task_flows) {
        units.extend(to_hex_unit(f, Granularity::Flow, None)?);
    }
    let vocab = train_wordpiece(&units, 4096, Some(&build_vanilla_vocab()), 1)?;

    let model = ModelConfig {
        vocab_size: vocab.len(),
        d_model,
        d_ffn: 4 * d_model,
        max_positions: 256,
        seed: 1,
        ..ModelConfig::default()
    };
    let start = Instant::now();
    let seqs = pre_flows
        .iter()
        .map(|f| Ok(encode(&vocab, &to_hex_unit(f, Granularity::Flow, None)?[0], true)?))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let corpus = build_corpus(&seqs, &CorpusConfig::new(1))?;
    let items: Vec<BatchItem> = corpus.iter().map(BatchItem::from).collect();
    let pre = TrainConfig {
        batch_size: 32,
        lr: 1e-3,
        total_steps: pre_steps,
        warmup_steps: pre_steps / 10,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(ModelParams::<f32>::init(&model)?, pre)?;
    let last = trainer.fit(&items, pre_steps, |_| {})?;
    println!("pre-trained {pre_steps} steps, last loss {:?} ({:.1}s)", last.map(|r| r.total), start.elapsed().as_secs_f64());

    let task = TaskSpec {
        name: "toy-2class".into(),
        kind: TaskKind::Understanding,
        description_text: "classify".into(),
        label_space: LABELS.iter().map(|s| s.to_string()).collect(),
        field: None,
        granularity: Granularity::Flow,
    };
    let data: Vec<LabeledExample> = task_flows
        .iter()
        .map(|f| {
            let unit = to_hex_unit(f, Granularity::Flow, None)?.remove(0);
            let class = (f.packets[0].payload_bytes[0] & 0x0f) as usize;
            Ok(LabeledExample {
                input_unit: unit,
                label: LABELS[class].to_string(),
            })
        })
        .collect::<anyhow::Result<_>>()?;
    let (train, test) = split_train_test(&data, 1);
    let ft = TrainConfig {
        batch_size: 32,
        lr,
        total_steps: 10_000,
        warmup_steps: 0,
        ..TrainConfig::default()
    };
    let (params, log) = finetune(trainer.params, &train, &task, &vocab, &ft, 10)?;
    for r in log.iter().filter(|r| r.step % 100 == 0) {
        println!("step {:>5} loss {:.4}", r.step, r.total);
    }
    let (report, _) = evaluate(&params, &vocab, &task, &test, 64)?;
    println!(
        "{} train / {} test after 10 epochs: accuracy {:.3} macro-F1 {:.3} ({:.1}s)",
        train.len(),
        test.len(),
        report.accuracy.unwrap_or(0.0),
        report.macro_f1.unwrap_or(0.0),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
