//! Pre-trains one model per (alpha, beta) pair on the same corpus and prints
//! the MSP accuracy grid.
//!
//! ```text
//! cargo run --release --example sweep_grid -- [steps=100]
//! ```

use lens::cli::sweep_table;
use lens::corpus::{build_corpus, CorpusConfig};
use lens::ingest::{anonymize, extract_flows, parse_pcap_bytes, to_hex_unit, Granularity};
use lens::model::{msp_token_accuracy, BatchItem, ModelConfig, ModelParams, TrainConfig, Trainer};
use lens::synth::{capture_frames, synth_flows, write_capture, SynthConfig};
use lens::tokenizer::{build_vanilla_vocab, encode, train_wordpiece};

fn main() -> anyhow::Result<()> {
    let steps: u64 = std::env::args().nth(1).map_or(Ok(100), |s| s.parse())?;
    let cfg = SynthConfig {
        flows: 64,
        packets: 3..=3,
        payload_bytes: 4..=8,
        ..SynthConfig::default()
    };
    let mut pcap = Vec::new();
    write_capture(&mut pcap, &capture_frames(&synth_flows(1, &cfg)))?;
    let (flows, _) = extract_flows(&parse_pcap_bytes(&pcap)?);
    let mut units = Vec::new();
    for f in &flows {
        units.extend(to_hex_unit(&anonymize(f)?, Granularity::Flow, None)?);
    }
    let vocab = train_wordpiece(&units, 1024, Some(&build_vanilla_vocab()), 1)?;
    let seqs = units.iter().map(|u| encode(&vocab, u, true)).collect::<Result<Vec<_>, _>>()?;
    let items: Vec<BatchItem> = build_corpus(&seqs, &CorpusConfig::new(1))?.iter().map(BatchItem::from).collect();

    let alpha = [0.1, 0.2];
    let beta = [0.1, 0.2];
    let mut grid = Vec::new();
    for &b in &beta {
        let mut row = Vec::new();
        for &a in &alpha {
            let model = ModelConfig {
                d_model: 32,
                n_heads: 2,
                d_ffn: 64,
                n_layers_enc: 1,
                n_layers_dec: 1,
                vocab_size: vocab.len(),
                max_positions: 128,
                dropout: 0.0,
                alpha: a,
                beta: b,
                seed: 1,
                ..ModelConfig::default()
            };
            let train = TrainConfig {
                batch_size: 16,
                lr: 3e-3,
                total_steps: steps,
                warmup_steps: steps / 10,
                ..TrainConfig::default()
            };
            let mut trainer = Trainer::new(ModelParams::<f32>::init(&model)?, train)?;
            trainer.fit(&items, steps, |_| {})?;
            row.push(msp_token_accuracy(&trainer.params, &items, 32)?.accuracy()?);
        }
        grid.push(row);
    }
    print!("{}", sweep_table(&alpha, &beta, &grid));
    Ok(())
}
