//! Compares analytic gradients of the combined loss with central finite
//! differences on a toy double-precision model.
//!
//! ```text
//! cargo run --release --example grad_check -- [coordinates_per_tensor=8] [epsilon=1e-5]
//! ```

use lens::corpus::{build_corpus, CorpusConfig};
use lens::ingest::{anonymize, extract_flows, parse_pcap_bytes, to_hex_unit, Granularity};
use lens::model::{grad_check, Batch, BatchItem, ModelConfig, ModelParams};
use lens::synth::{capture_frames, synth_flows, write_capture, SynthConfig};
use lens::tokenizer::{build_vanilla_vocab, encode, train_wordpiece};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let per_tensor: usize = args.get(1).map_or(Ok(8), |s| s.parse())?;
    let epsilon: f64 = args.get(2).map_or(Ok(1e-5), |s| s.parse())?;

    let cfg = SynthConfig {
        flows: 48,
        packets: 3..=3,
        payload_bytes: 4..=8,
        ..SynthConfig::default()
    };
    let mut pcap = Vec::new();
    write_capture(&mut pcap, &capture_frames(&synth_flows(5, &cfg)))?;
    let (flows, _) = extract_flows(&parse_pcap_bytes(&pcap)?);
    let mut units = Vec::new();
    for f in &flows {
        units.extend(to_hex_unit(&anonymize(f)?, Granularity::Flow, None)?);
    }
    let vocab = train_wordpiece(&units, 512, Some(&build_vanilla_vocab()), 5)?;
    let seqs = units.iter().map(|u| encode(&vocab, u, true)).collect::<Result<Vec<_>, _>>()?;
    let corpus = build_corpus(&seqs, &CorpusConfig::new(5))?;
    let mut items: Vec<BatchItem> = corpus.iter().filter(|e| e.pop.applied).take(2).map(BatchItem::from).collect();
    items.extend(corpus.iter().filter(|e| e.htp.applied).take(2).map(BatchItem::from));
    items.extend(corpus.iter().filter(|e| !e.pop.applied && !e.htp.applied).take(2).map(BatchItem::from));

    let model = ModelConfig {
        d_model: 16,
        n_heads: 2,
        d_ffn: 32,
        n_layers_enc: 1,
        n_layers_dec: 1,
        vocab_size: vocab.len(),
        max_positions: 128,
        dropout: 0.0,
        seed: 3,
        ..ModelConfig::default()
    };
    let params = ModelParams::<f64>::init(&model)?;
    let r = grad_check(&params, &Batch::new(&items), epsilon, per_tensor, 3)?;
    println!("{} coordinates over {} tensors", r.coordinates, r.tensors_covered.len());
    println!("max relative error {:.3e}", r.max_rel_error);
    if let Some((name, index, analytic, numeric)) = r.worst {
        println!("worst {name}[{index}]: analytic {analytic:.6e} numeric {numeric:.6e}");
    }
    Ok(())
}
