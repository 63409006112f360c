//! Builds the three pre-training tasks over synthetic flows and prints the
//! task ratios plus one annotated example of each kind.
//!
//! ```text
//! cargo run --release --example build_corpus -- [flows=2000] [seed=1]
//! ```

use lens::corpus::{build_corpus, CorpusConfig, PretrainExample, TaskCounts};
use lens::ingest::{anonymize, extract_flows, parse_pcap_bytes, to_hex_unit, Granularity};
use lens::synth::{capture_frames, synth_flows, write_capture, SynthConfig};
use lens::tokenizer::{build_vanilla_vocab, decode, encode, train_wordpiece, Vocabulary};

fn show(vocab: &Vocabulary, kind: &str, ex: &PretrainExample) -> anyhow::Result<()> {
    println!("{kind}: z={} pop={:?} htp={:?}", ex.z, ex.pop.permutation, ex.htp.label);
    println!("  encoder {}", decode(vocab, &ex.encoder_input.ids)?);
    println!("  target  {}", decode(vocab, &ex.msp.decoder_target)?);
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map_or(Ok(2000), |s| s.parse())?;
    let seed: u64 = args.get(2).map_or(Ok(1), |s| s.parse())?;

    let cfg = SynthConfig {
        flows: n,
        packets: 2..=5,
        ..SynthConfig::default()
    };
    let mut pcap = Vec::new();
    write_capture(&mut pcap, &capture_frames(&synth_flows(seed, &cfg)))?;
    let (flows, _) = extract_flows(&parse_pcap_bytes(&pcap)?);
    let mut units = Vec::new();
    for f in &flows {
        units.extend(to_hex_unit(&anonymize(f)?, Granularity::Flow, None)?);
    }
    let vocab = train_wordpiece(&units, 2048, Some(&build_vanilla_vocab()), seed)?;
    let seqs = units.iter().map(|u| encode(&vocab, u, true)).collect::<Result<Vec<_>, _>>()?;
    let corpus = build_corpus(&seqs, &CorpusConfig::new(seed))?;

    let c = TaskCounts::of(&corpus);
    let rest = c.examples - c.pop_applied;
    println!(
        "{} examples | pop {:.3} | htp of rest {:.3} | homologous {:.3} | masked tokens {:.3}",
        c.examples,
        c.pop_applied as f64 / c.examples as f64,
        c.htp_applied as f64 / rest as f64,
        c.htp_homologous as f64 / c.htp_applied.max(1) as f64,
        c.masked_tokens as f64 / c.maskable_tokens.max(1) as f64
    );
    if let Some(ex) = corpus.iter().find(|e| e.pop.applied) {
        show(&vocab, "pop", ex)?;
    }
    if let Some(ex) = corpus.iter().find(|e| e.htp.applied) {
        show(&vocab, "htp", ex)?;
    }
    Ok(())
}
