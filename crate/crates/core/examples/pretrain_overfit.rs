//! Overfits a tiny encoder-decoder on 32 synthetic flows and reports MSP and
//! POP accuracy before and after.
//!
//! ```text
//! cargo run --release --example pretrain_overfit
//! ```

use std::time::Instant;

use lens::corpus::{build_corpus, CorpusConfig};
use lens::ingest::{anonymize, extract_flows, parse_pcap_bytes, to_hex_unit, Granularity};
use lens::model::{msp_token_accuracy, pop_accuracy, BatchItem, ModelConfig, ModelParams, TrainConfig, Trainer};
use lens::synth::{capture_frames, synth_flows, write_capture, SynthConfig};
use lens::tokenizer::{build_vanilla_vocab, encode, train_wordpiece};

fn main() -> anyhow::Result<()> {
    let synth = SynthConfig {
        flows: 32,
        packets: 3..=3,
        payload_bytes: 4..=8,
        udp_fraction: 1.0,
        classes: 2,
    };
    let mut pcap = Vec::new();
    write_capture(&mut pcap, &capture_frames(&synth_flows(7, &synth)))?;
    let (flows, _) = extract_flows(&parse_pcap_bytes(&pcap)?);
    let mut units = Vec::new();
    for f in &flows {
        units.extend(to_hex_unit(&anonymize(f)?, Granularity::Flow, None)?);
    }
    let vocab = train_wordpiece(&units, 1024, Some(&build_vanilla_vocab()), 7)?;
    let seqs = units.iter().map(|u| encode(&vocab, u, true)).collect::<Result<Vec<_>, _>>()?;
    let corpus = build_corpus(&seqs, &CorpusConfig::new(7))?;
    let items: Vec<BatchItem> = corpus.iter().map(BatchItem::from).collect();
    let longest = items.iter().map(|i| i.encoder.len()).max().unwrap_or(0);
    println!("vocab {} | examples {} | longest encoder input {longest}", vocab.len(), items.len());

    let model = ModelConfig {
        d_model: 64,
        n_heads: 4,
        d_ffn: 256,
        vocab_size: vocab.len(),
        max_positions: 128,
        dropout: 0.0,
        seed: 7,
        ..ModelConfig::default()
    };
    let params = ModelParams::<f32>::init(&model)?;
    let before = msp_token_accuracy(&params, &items, 32)?.accuracy()?;
    println!("untrained MSP accuracy {before:.4} (chance {:.4})", 1.0 / vocab.len() as f64);

    let train = TrainConfig {
        batch_size: 32,
        grad_accum: 1,
        lr: 3e-3,
        total_steps: 2000,
        warmup_steps: 50,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(params, train)?;
    let start = Instant::now();
    for round in 1..=40 {
        let rec = trainer.fit(&items, 50, |_| {})?.expect("steps > 0");
        let msp = msp_token_accuracy(&trainer.params, &items, 32)?.accuracy()?;
        let pop = pop_accuracy(&trainer.params, &items, 32)?.accuracy()?;
        println!(
            "step {:>4} loss {:.4} msp_acc {msp:.3} pop_acc {pop:.3} ({:.1}s)",
            round * 50,
            rec.total,
            start.elapsed().as_secs_f64()
        );
        if msp >= 0.95 && pop >= 0.90 {
            break;
        }
    }
    Ok(())
}
