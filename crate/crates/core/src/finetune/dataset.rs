use std::io::{BufRead, Write};
use std::net::Ipv4Addr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::ValueKind;
use super::{FinetuneError, LabeledExample};
use crate::ingest::{anonymize, to_hex_unit, Granularity, HexUnit, PacketHex, ParsedPacket, SessionFlow};
use crate::seeding::{Purpose, SeedStreams};

/// Header fields a generation task can target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeaderField {
    SrcIp,
    DstIp,
    SrcPort,
    DstPort,
    PktLen,
}

impl HeaderField {
    pub fn value_kind(self) -> ValueKind {
        match self {
            HeaderField::SrcIp | HeaderField::DstIp => ValueKind::Ip,
            HeaderField::SrcPort | HeaderField::DstPort => ValueKind::Port,
            HeaderField::PktLen => ValueKind::Len,
        }
    }

    /// Byte range of the field within `header_bytes`.
    fn span(self, p: &ParsedPacket) -> std::ops::Range<usize> {
        let l4 = p.ip_header_len;
        match self {
            HeaderField::SrcIp => 12..16,
            HeaderField::DstIp => 16..20,
            HeaderField::SrcPort => l4..l4 + 2,
            HeaderField::DstPort => l4 + 2..l4 + 4,
            HeaderField::PktLen => 2..4,
        }
    }

    /// Decimal or dotted-quad text of the field in `p`.
    pub fn text(self, p: &ParsedPacket) -> String {
        let b = &p.header_bytes[self.span(p)];
        match self {
            HeaderField::SrcIp | HeaderField::DstIp => Ipv4Addr::new(b[0], b[1], b[2], b[3]).to_string(),
            _ => u16::from_be_bytes([b[0], b[1]]).to_string(),
        }
    }
}

/// Generation examples from a raw flow: labels come from the original
/// headers, inputs are anonymized and have the target field zeroed.
pub fn generation_examples(
    raw: &SessionFlow,
    field: HeaderField,
    granularity: Granularity,
    max_packets: Option<usize>,
) -> Result<Vec<LabeledExample>, FinetuneError> {
    let mut masked = anonymize(raw)?;
    for p in &mut masked.packets {
        let span = field.span(p);
        p.header_bytes[span].fill(0);
    }
    let units = to_hex_unit(&masked, granularity, max_packets)?;
    let labels: Vec<String> = match granularity {
        Granularity::Flow => vec![field.text(&raw.packets[0])],
        Granularity::Packet => raw.packets.iter().take(units.len()).map(|p| field.text(p)).collect(),
    };
    Ok(units
        .into_iter()
        .zip(labels)
        .map(|(input_unit, label)| LabeledExample { input_unit, label })
        .collect())
}

/// One JSON line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    /// Header and payload hex of each packet.
    pub hex: Vec<String>,
    pub header_len_per_packet: Vec<usize>,
    pub label: String,
}

impl From<&LabeledExample> for DatasetRecord {
    fn from(ex: &LabeledExample) -> Self {
        DatasetRecord {
            hex: ex.input_unit.packets.iter().map(|p| format!("{}{}", p.header, p.payload)).collect(),
            header_len_per_packet: ex.input_unit.packets.iter().map(|p| p.header.len() / 2).collect(),
            label: ex.label.clone(),
        }
    }
}

impl DatasetRecord {
    pub fn into_example(self, granularity: Granularity) -> Result<LabeledExample, String> {
        if self.hex.len() != self.header_len_per_packet.len() {
            return Err(format!(
                "{} packets but {} header lengths",
                self.hex.len(),
                self.header_len_per_packet.len()
            ));
        }
        if self.hex.is_empty() {
            return Err("no packets".into());
        }
        if granularity == Granularity::Packet && self.hex.len() != 1 {
            return Err(format!("packet granularity needs 1 packet, got {}", self.hex.len()));
        }
        let mut packets = Vec::with_capacity(self.hex.len());
        for (h, &hl) in self.hex.iter().zip(&self.header_len_per_packet) {
            if h.len() % 2 == 1 || !h.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
                return Err("hex must be even-length lowercase [0-9a-f]".into());
            }
            if hl * 2 > h.len() {
                return Err(format!("header length {hl} exceeds packet length {}", h.len() / 2));
            }
            packets.push(PacketHex {
                header: h[..hl * 2].to_string(),
                payload: h[hl * 2..].to_string(),
            });
        }
        Ok(LabeledExample {
            input_unit: HexUnit { packets, granularity },
            label: self.label,
        })
    }
}

pub fn write_dataset<W: Write>(mut out: W, examples: &[LabeledExample]) -> Result<(), FinetuneError> {
    for ex in examples {
        let line = serde_json::to_string(&DatasetRecord::from(ex)).expect("record serializes");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R, granularity: Granularity) -> Result<Vec<LabeledExample>, FinetuneError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| FinetuneError::Format { line: i + 1, message };
        let rec: DatasetRecord = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
        out.push(rec.into_example(granularity).map_err(fail)?);
    }
    Ok(out)
}

/// Seeded 4:1 train/test split.
pub fn split_train_test<T: Clone>(items: &[T], seed: u64) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut SeedStreams::new(seed).stream(0, Purpose::Split));
    let n_train = items.len() * 4 / 5;
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect();
    (pick(&order[..n_train]), pick(&order[n_train..]))
}
