//! Trains the three tokenizer schemes on synthetic flows and shows how each
//! splits the same packet.
//!
//! ```text
//! cargo run --release --example train_tokenizer -- [flows=200] [size=2048]
//! ```

use lens::ingest::{anonymize, extract_flows, parse_pcap_bytes, to_hex_unit, Granularity};
use lens::synth::{capture_frames, synth_flows, write_capture, SynthConfig};
use lens::tokenizer::{build_vanilla_vocab, encode, train_wordpiece, Vocabulary};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map_or(Ok(200), |s| s.parse())?;
    let size: usize = args.get(2).map_or(Ok(2048), |s| s.parse())?;

    let cfg = SynthConfig {
        flows: n,
        ..SynthConfig::default()
    };
    let mut pcap = Vec::new();
    write_capture(&mut pcap, &capture_frames(&synth_flows(1, &cfg)))?;
    let (flows, _) = extract_flows(&parse_pcap_bytes(&pcap)?);
    let mut units = Vec::new();
    for f in &flows {
        units.extend(to_hex_unit(&anonymize(f)?, Granularity::Flow, None)?);
    }

    let vanilla = build_vanilla_vocab();
    let word = train_wordpiece(&units, size, None, 1)?;
    let pd = train_wordpiece(&units, size, Some(&vanilla), 1)?;
    let sample = &units[0];
    let show = |name: &str, v: &Vocabulary| -> anyhow::Result<()> {
        let seq = encode(v, sample, true)?;
        let pieces: Vec<&str> = seq.ids.iter().take(24).map(|&id| v.token(id)).collect::<Result<_, _>>()?;
        println!("{name:<15} {:>6} tokens | {:>3} ids | {}", v.len(), seq.len(), pieces.join(" "));
        Ok(())
    };
    println!("{} flows, first packet header {}", units.len(), sample.packets[0].header);
    show("vanilla", &vanilla)?;
    show("wordpiece_word", &word)?;
    show("wordpiece_pd", &pd)?;
    println!("pd checksum {}", pd.checksum_hex());
    Ok(())
}
