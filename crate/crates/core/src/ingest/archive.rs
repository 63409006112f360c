//! JSON-lines flow archives.
//!
//! The first line is a header object `{"format": "lens-flows", "version": 1, ...}`
//! carrying caller metadata. Every following line is one flow:
//!
//! ```text
//! {"key": {...}, "anonymized": bool,
//!  "packets": [{"index": n, "ip_header_len": n, "header": "<hex>", "payload": "<hex>"}, ...]}
//! ```

use std::io::{BufRead, Write};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::{FlowKey, ParsedPacket, SessionFlow};

pub const ARCHIVE_FORMAT: &str = "lens-flows";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("archive line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub format: String,
    pub version: u32,
    #[serde(flatten)]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct PacketRecord {
    index: usize,
    ip_header_len: usize,
    header: String,
    payload: String,
}

#[derive(Serialize, Deserialize)]
struct FlowRecord {
    key: FlowKey,
    anonymized: bool,
    packets: Vec<PacketRecord>,
}

pub fn write_archive<W: Write>(
    mut out: W,
    meta: serde_json::Map<String, serde_json::Value>,
    flows: &[SessionFlow],
) -> Result<(), ArchiveError> {
    let header = ArchiveHeader {
        format: ARCHIVE_FORMAT.into(),
        version: ARCHIVE_VERSION,
        meta,
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for f in flows {
        let rec = FlowRecord {
            key: f.key,
            anonymized: f.anonymized,
            packets: f
                .packets
                .iter()
                .map(|p| PacketRecord {
                    index: p.arrival_index,
                    ip_header_len: p.ip_header_len,
                    header: hex::encode(&p.header_bytes),
                    payload: hex::encode(&p.payload_bytes),
                })
                .collect(),
        };
        writeln!(out, "{}", serde_json::to_string(&rec).expect("flow serializes"))?;
    }
    Ok(())
}

fn endpoint(h: &[u8], addr: usize, port: usize) -> (Ipv4Addr, u16) {
    (
        Ipv4Addr::new(h[addr], h[addr + 1], h[addr + 2], h[addr + 3]),
        u16::from_be_bytes([h[port], h[port + 1]]),
    )
}

pub fn read_archive<R: BufRead>(input: R) -> Result<(ArchiveHeader, Vec<SessionFlow>), ArchiveError> {
    let mut lines = input.lines();
    let fail = |line: usize, message: String| ArchiveError::Format { line, message };
    let first = lines.next().ok_or_else(|| fail(1, "empty archive".into()))??;
    let header: ArchiveHeader = serde_json::from_str(&first).map_err(|e| fail(1, e.to_string()))?;
    if header.format != ARCHIVE_FORMAT || header.version != ARCHIVE_VERSION {
        return Err(fail(1, format!("unsupported archive {} v{}", header.format, header.version)));
    }
    let mut flows = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line?;
        let rec: FlowRecord = serde_json::from_str(&line).map_err(|e| fail(n, e.to_string()))?;
        let mut packets = Vec::with_capacity(rec.packets.len());
        for p in rec.packets {
            let header_bytes = hex::decode(&p.header).map_err(|e| fail(n, e.to_string()))?;
            let payload_bytes = hex::decode(&p.payload).map_err(|e| fail(n, e.to_string()))?;
            if header_bytes.len() < p.ip_header_len + 4 || p.ip_header_len < 20 {
                return Err(fail(n, "packet header shorter than its IPv4 + port fields".into()));
            }
            let l4 = p.ip_header_len;
            packets.push(ParsedPacket {
                src: endpoint(&header_bytes, 12, l4),
                dst: endpoint(&header_bytes, 16, l4 + 2),
                header_bytes,
                payload_bytes,
                arrival_index: p.index,
                transport: rec.key.transport,
                ip_header_len: l4,
            });
        }
        if packets.is_empty() {
            return Err(fail(n, "flow has no packets".into()));
        }
        flows.push(SessionFlow {
            key: rec.key,
            packets,
            anonymized: rec.anonymized,
        });
    }
    Ok((header, flows))
}
