//! A small end-to-end workspace for the `lens` executable: synthetic
//! captures (one with ARP noise), an understanding dataset, a source-port
//! generation dataset and a run config.

use std::fs;
use std::path::Path;

use crate::finetune::{generation_examples, write_dataset, FinetuneError, HeaderField, LabeledExample};
use crate::ingest::{anonymize, extract_flows, parse_pcap_bytes, to_hex_unit, Granularity, IngestError, Timestamp};
use crate::synth::{capture_frames, ethernet_frame, synth_flows, write_capture, SynthConfig};

#[derive(Debug, thiserror::Error)]
pub enum WorkspaceError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Finetune(#[from] FinetuneError),
}

/// What [`write_workspace`] produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkspaceSummary {
    pub captures: usize,
    pub understanding: usize,
    pub generation: usize,
}

pub const CAPTURES: usize = 4;

pub const LABELS: [&str; 2] = ["benign", "malware"];

/// Contents of `lens.toml`; paths are relative to the workspace.
pub const CONFIG: &str = r#"seed = 1

[paths]
archive = "flows.jsonl"
vocab = "vocab.txt"
corpus = "corpus.bin"

[tokenizer]
scheme = "wordpiece_pd"
size = 1024

[corpus]
max_payload_bytes = 16

[model]
d_model = 32
n_heads = 2
d_ffn = 64
n_layers_enc = 1
n_layers_dec = 1
max_positions = 128
dropout = 0.0

[train]
batch_size = 16
lr = 3e-3
total_steps = 100
warmup_steps = 10

[finetune]
epochs = 10
batch_size = 32
lr = 3e-3

[sweep]
alpha = [0.1, 0.2]
beta = [0.1, 0.2]

[[tasks]]
name = "toy"
kind = "understanding"
description_text = "classify"
label_space = ["benign", "malware"]
granularity = "flow"

[[tasks]]
name = "src-port"
kind = "generation"
description_text = "src port"
field = "src_port"
granularity = "packet"
"#;

/// Writes `pcaps/`, `toy.jsonl`, `src-port.jsonl` and `lens.toml` under `dir`.
pub fn write_workspace(dir: &Path) -> Result<WorkspaceSummary, WorkspaceError> {
    fs::create_dir_all(dir.join("pcaps"))?;
    let cfg = SynthConfig {
        flows: 12,
        packets: 3..=3,
        payload_bytes: 4..=8,
        ..SynthConfig::default()
    };
    let mut understanding = Vec::new();
    let mut generation = Vec::new();
    for i in 0..CAPTURES as u64 {
        let synth = synth_flows(100 + i, &cfg);
        let mut frames = capture_frames(&synth);
        if i == 3 {
            let arp = ethernet_frame(0x0806, &[0u8; 28]);
            frames.push((Timestamp { secs: 9, micros: 0 }, arp));
        }
        let mut pcap = Vec::new();
        write_capture(&mut pcap, &frames)?;
        fs::write(dir.join(format!("pcaps/capture_{i}.pcap")), &pcap)?;

        let (flows, _) = extract_flows(&parse_pcap_bytes(&pcap)?);
        for f in &flows {
            let class = (f.packets[0].payload_bytes[0] & 0x0f) as usize;
            understanding.push(LabeledExample {
                input_unit: to_hex_unit(&anonymize(f)?, Granularity::Flow, None)?.remove(0),
                label: LABELS[class].into(),
            });
            generation.extend(generation_examples(f, HeaderField::SrcPort, Granularity::Packet, Some(1))?);
        }
    }
    write_dataset(fs::File::create(dir.join("toy.jsonl"))?, &understanding)?;
    write_dataset(fs::File::create(dir.join("src-port.jsonl"))?, &generation)?;
    fs::write(dir.join("lens.toml"), CONFIG)?;
    Ok(WorkspaceSummary {
        captures: CAPTURES,
        understanding: understanding.len(),
        generation: generation.len(),
    })
}
