//! Packet capture ingest: pcap parsing, session-flow grouping, endpoint
//! anonymization and hexadecimal serialization.
//!
//! A session flow is every TCP or UDP packet in one capture that shares a
//! bidirectional IPv4 5-tuple. There is no FIN/timeout splitting. Frames that
//! are not Ethernet/raw IPv4 carrying TCP or UDP are skipped and counted.

pub mod archive;
mod packet;
pub mod pcap;

use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use packet::{ParsedPacket, SkipReason, Transport};
pub use pcap::{parse_pcap, parse_pcap_bytes, RawPacket, Timestamp};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("bad pcap magic 0x{found:08x} at byte offset {offset}")]
    BadMagic { offset: usize, found: u32 },
    #[error("truncated pcap record at byte offset {offset}: header claims {claimed} bytes, {available} remain")]
    TruncatedRecord {
        offset: usize,
        claimed: usize,
        available: usize,
    },
    #[error("flow is already anonymized")]
    AlreadyAnonymized,
    #[error("flow has no packets")]
    EmptyFlow,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Endpoint = (Ipv4Addr, u16);

/// Bidirectional 5-tuple with `endpoint_a <= endpoint_b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub endpoint_a: Endpoint,
    pub endpoint_b: Endpoint,
    pub transport: Transport,
}

impl FlowKey {
    pub fn new(x: Endpoint, y: Endpoint, transport: Transport) -> Self {
        let (endpoint_a, endpoint_b) = if x <= y { (x, y) } else { (y, x) };
        FlowKey {
            endpoint_a,
            endpoint_b,
            transport,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionFlow {
    pub key: FlowKey,
    pub packets: Vec<ParsedPacket>,
    pub anonymized: bool,
}

/// Counters accumulated while grouping packets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub files: usize,
    pub packets: usize,
    pub flows: usize,
    pub skipped: usize,
    pub reasons: BTreeMap<String, usize>,
}

impl IngestReport {
    pub fn merge(&mut self, other: &IngestReport) {
        self.files += other.files;
        self.packets += other.packets;
        self.flows += other.flows;
        self.skipped += other.skipped;
        for (k, v) in &other.reasons {
            *self.reasons.entry(k.clone()).or_default() += v;
        }
    }
}

/// Groups packets by canonical flow key, preserving capture order inside each
/// flow and returning flows in order of first appearance.
pub fn extract_flows(packets: &[RawPacket]) -> (Vec<SessionFlow>, IngestReport) {
    let mut report = IngestReport {
        packets: packets.len(),
        ..Default::default()
    };
    let mut index: HashMap<FlowKey, usize> = HashMap::new();
    let mut flows: Vec<SessionFlow> = Vec::new();
    for (i, raw) in packets.iter().enumerate() {
        match packet::decode(raw, i) {
            Ok(p) => {
                let key = FlowKey::new(p.src, p.dst, p.transport);
                let slot = *index.entry(key).or_insert_with(|| {
                    flows.push(SessionFlow {
                        key,
                        packets: Vec::new(),
                        anonymized: false,
                    });
                    flows.len() - 1
                });
                flows[slot].packets.push(p);
            }
            Err(reason) => {
                report.skipped += 1;
                *report.reasons.entry(reason.to_string()).or_default() += 1;
            }
        }
    }
    report.flows = flows.len();
    (flows, report)
}

/// Parses one file and groups its packets. Flows never span files.
pub fn ingest_file(path: impl AsRef<Path>) -> Result<(Vec<SessionFlow>, IngestReport), IngestError> {
    let packets = parse_pcap(path)?;
    let (flows, mut report) = extract_flows(&packets);
    report.files = 1;
    Ok((flows, report))
}

/// Zeroes IPv4 addresses, ports and both checksums in every packet header.
pub fn anonymize(flow: &SessionFlow) -> Result<SessionFlow, IngestError> {
    if flow.anonymized {
        return Err(IngestError::AlreadyAnonymized);
    }
    let mut out = flow.clone();
    for p in &mut out.packets {
        let h = &mut p.header_bytes;
        // IPv4 header checksum, then source and destination address.
        h[10..12].fill(0);
        h[12..20].fill(0);
        let l4 = p.ip_header_len;
        h[l4..l4 + 4].fill(0);
        let ck = l4 + p.transport.header_checksum_offset();
        h[ck..ck + 2].fill(0);
        p.src = (Ipv4Addr::UNSPECIFIED, 0);
        p.dst = (Ipv4Addr::UNSPECIFIED, 0);
    }
    out.anonymized = true;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Flow,
    Packet,
}

impl Granularity {
    pub fn default_max_packets(self) -> usize {
        match self {
            Granularity::Flow => 3,
            Granularity::Packet => 5,
        }
    }
}

/// Lowercase hex of one packet, split at the transport-payload offset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PacketHex {
    pub header: String,
    pub payload: String,
}

impl PacketHex {
    pub fn from_bytes(header: &[u8], payload: &[u8]) -> Self {
        PacketHex {
            header: hex::encode(header),
            payload: hex::encode(payload),
        }
    }
}

/// The hex serialization of either a whole (truncated) flow or one packet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HexUnit {
    pub packets: Vec<PacketHex>,
    pub granularity: Granularity,
}

impl HexUnit {
    pub fn packet_count(&self) -> usize {
        self.packets.len()
    }

    pub fn header_hex(&self) -> String {
        self.packets.iter().map(|p| p.header.as_str()).collect()
    }

    pub fn payload_hex(&self) -> String {
        self.packets.iter().map(|p| p.payload.as_str()).collect()
    }
}

/// Serializes a flow. `max_packets` of `None` uses 3 for flows, 5 for packets.
pub fn to_hex_unit(
    flow: &SessionFlow,
    granularity: Granularity,
    max_packets: Option<usize>,
) -> Result<Vec<HexUnit>, IngestError> {
    if flow.packets.is_empty() {
        return Err(IngestError::EmptyFlow);
    }
    let cap = max_packets.unwrap_or_else(|| granularity.default_max_packets());
    let hexes = flow
        .packets
        .iter()
        .take(cap)
        .map(|p| PacketHex::from_bytes(&p.header_bytes, &p.payload_bytes));
    Ok(match granularity {
        Granularity::Flow => vec![HexUnit {
            packets: hexes.collect(),
            granularity,
        }],
        Granularity::Packet => hexes
            .map(|p| HexUnit {
                packets: vec![p],
                granularity,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tcp_raw(src: Endpoint, dst: Endpoint, payload: &[u8]) -> RawPacket {
        let mut f = vec![0u8; 12];
        f.extend_from_slice(&[0x08, 0x00]);
        let total = 40 + payload.len();
        f.extend_from_slice(&[0x45, 0, (total >> 8) as u8, total as u8, 0, 1, 0, 0, 64, 6, 0xab, 0xcd]);
        f.extend_from_slice(&src.0.octets());
        f.extend_from_slice(&dst.0.octets());
        f.extend_from_slice(&src.1.to_be_bytes());
        f.extend_from_slice(&dst.1.to_be_bytes());
        f.extend_from_slice(&[0, 0, 0, 1, 0, 0, 0, 0, 0x50, 0x18, 0x01, 0x00, 0x12, 0x34, 0, 0]);
        f.extend_from_slice(payload);
        RawPacket {
            timestamp: Timestamp { secs: 0, micros: 0 },
            link_type: pcap::LINKTYPE_ETHERNET,
            orig_len: f.len() as u32,
            bytes: f,
        }
    }

    fn ep(a: [u8; 4], port: u16) -> Endpoint {
        (Ipv4Addr::from(a), port)
    }

    #[test]
    fn anonymize_zeroes_endpoints_and_checksums() {
        let a = ep([192, 168, 1, 10], 443);
        let b = ep([10, 0, 0, 2], 51234);
        let (flows, _) = extract_flows(&[tcp_raw(a, b, b"hi")]);
        let anon = anonymize(&flows[0]).unwrap();
        let h = &anon.packets[0].header_bytes;
        assert!(h[10..20].iter().all(|&b| b == 0));
        assert!(h[20..24].iter().all(|&b| b == 0));
        assert_eq!(&h[36..38], &[0, 0]);
        // urgent pointer and flags untouched
        assert_eq!(&h[32..34], &[0x50, 0x18]);
        assert_eq!(anon.packets[0].payload_bytes, b"hi");
        assert!(anon.anonymized);
        assert!(matches!(anonymize(&anon), Err(IngestError::AlreadyAnonymized)));
    }

    #[test]
    fn zero_endpoints_are_a_fixed_point() {
        let z = ep([0, 0, 0, 0], 0);
        let (mut flows, _) = extract_flows(&[tcp_raw(z, z, b"")]);
        // checksums are the only non-zero fields that change
        for p in &mut flows[0].packets {
            p.header_bytes[10..12].fill(0);
            p.header_bytes[36..38].fill(0);
        }
        let anon = anonymize(&flows[0]).unwrap();
        assert_eq!(anon.packets[0].header_bytes, flows[0].packets[0].header_bytes);
        assert!(anon.anonymized);
    }

    #[test]
    fn flow_granularity_keeps_first_three() {
        let a = ep([1, 1, 1, 1], 1000);
        let b = ep([2, 2, 2, 2], 80);
        let raws: Vec<_> = (0..5u8).map(|i| tcp_raw(a, b, &[i])).collect();
        let (flows, _) = extract_flows(&raws);
        let flow = anonymize(&flows[0]).unwrap();
        let units = to_hex_unit(&flow, Granularity::Flow, None).unwrap();
        assert_eq!(units.len(), 1);
        assert_eq!(units[0].packet_count(), 3);
        assert_eq!(units[0].payload_hex(), "000102");
        let pk = to_hex_unit(&flow, Granularity::Packet, None).unwrap();
        assert_eq!(pk.len(), 5);
    }

    #[test]
    fn payload_hex_is_lowercase() {
        let a = ep([1, 1, 1, 1], 1000);
        let b = ep([2, 2, 2, 2], 80);
        let (flows, _) = extract_flows(&[tcp_raw(a, b, &[0xDE, 0xAD, 0xBE, 0xEF])]);
        let units = to_hex_unit(&flows[0], Granularity::Packet, None).unwrap();
        assert_eq!(units[0].packets[0].payload, "deadbeef");
    }

    #[test]
    fn empty_flow_is_an_error() {
        let flow = SessionFlow {
            key: FlowKey::new(ep([0; 4], 0), ep([0; 4], 0), Transport::Udp),
            packets: vec![],
            anonymized: true,
        };
        assert!(matches!(
            to_hex_unit(&flow, Granularity::Flow, None),
            Err(IngestError::EmptyFlow)
        ));
    }
}
