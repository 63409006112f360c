//! Groups the packets of one or more captures into session flows, anonymizes
//! them and prints the first flow as hex.
//!
//! ```text
//! cargo run --example ingest_pcap -- capture.pcap [more.pcap ...]
//! ```
//!
//! Without arguments a synthetic capture is generated first.

use lens::ingest::{anonymize, ingest_file, to_hex_unit, Granularity, IngestReport};
use lens::synth::{capture_frames, synth_flows, write_capture, SynthConfig};

fn main() -> anyhow::Result<()> {
    let mut paths: Vec<String> = std::env::args().skip(1).collect();
    let scratch = tempfile::tempdir()?;
    if paths.is_empty() {
        let path = scratch.path().join("synthetic.pcap");
        let frames = capture_frames(&synth_flows(1, &SynthConfig::default()));
        write_capture(std::fs::File::create(&path)?, &frames)?;
        paths.push(path.display().to_string());
    }
    let mut total = IngestReport::default();
    let mut flows = Vec::new();
    for p in &paths {
        let (f, report) = ingest_file(p)?;
        println!("{p}: {} flows, {} packets, {} skipped", f.len(), report.packets, report.skipped);
        total.merge(&report);
        flows.extend(f);
    }
    println!("skip reasons {:?}", total.reasons);
    if let Some(first) = flows.first() {
        let anon = anonymize(first)?;
        println!("first flow {:?}", first.key);
        for (i, p) in to_hex_unit(&anon, Granularity::Flow, None)?[0].packets.iter().enumerate() {
            println!("  packet {}: header {} payload {}", i + 1, p.header, p.payload);
        }
    }
    Ok(())
}
