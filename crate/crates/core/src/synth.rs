//! Seeded synthetic captures for examples, tests and quick experiments.
//!
//! Flows alternate direction between a client and a server. The first two
//! payload bytes of every packet carry the flow's class marker, the rest is
//! random, so classifiers have something real to find.

use std::io::Write;
use std::net::Ipv4Addr;
use std::ops::RangeInclusive;

use rand::Rng;

use crate::ingest::pcap::{write_pcap, Timestamp, LINKTYPE_ETHERNET};
use crate::ingest::{Endpoint, Transport};
use crate::seeding::{Purpose, SeedStreams};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub flows: usize,
    pub packets: RangeInclusive<usize>,
    pub payload_bytes: RangeInclusive<usize>,
    pub udp_fraction: f64,
    pub classes: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            flows: 16,
            packets: 2..=4,
            payload_bytes: 4..=12,
            udp_fraction: 0.5,
            classes: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFlow {
    pub class: usize,
    pub transport: Transport,
    pub client: Endpoint,
    pub server: Endpoint,
    /// IPv4 packets, header included.
    pub packets: Vec<Vec<u8>>,
}

/// First two payload bytes of class `c`.
pub fn class_marker(c: usize) -> [u8; 2] {
    [0xc0 | (c as u8 & 0x0f), 0x5a]
}

fn ones_complement(sum: &[u8]) -> u16 {
    let mut acc: u32 = 0;
    for pair in sum.chunks(2) {
        let word = u16::from_be_bytes([pair[0], *pair.get(1).unwrap_or(&0)]);
        acc += word as u32;
    }
    while acc > 0xffff {
        acc = (acc & 0xffff) + (acc >> 16);
    }
    !(acc as u16)
}

/// A well-formed IPv4 packet (20-byte header, valid IP checksum).
pub fn ipv4_packet(src: Endpoint, dst: Endpoint, transport: Transport, payload: &[u8], ident: u16, seq: u32) -> Vec<u8> {
    let l4_len = match transport {
        Transport::Tcp => 20,
        Transport::Udp => 8,
    };
    let total = 20 + l4_len + payload.len();
    let proto = match transport {
        Transport::Tcp => 6,
        Transport::Udp => 17,
    };
    let mut p = Vec::with_capacity(total);
    p.extend_from_slice(&[0x45, 0, (total >> 8) as u8, total as u8]);
    p.extend_from_slice(&ident.to_be_bytes());
    p.extend_from_slice(&[0x40, 0, 64, proto, 0, 0]);
    p.extend_from_slice(&src.0.octets());
    p.extend_from_slice(&dst.0.octets());
    let csum = ones_complement(&p[..20]);
    p[10..12].copy_from_slice(&csum.to_be_bytes());
    p.extend_from_slice(&src.1.to_be_bytes());
    p.extend_from_slice(&dst.1.to_be_bytes());
    match transport {
        Transport::Tcp => {
            p.extend_from_slice(&seq.to_be_bytes());
            p.extend_from_slice(&0u32.to_be_bytes());
            p.extend_from_slice(&[0x50, 0x18, 0xff, 0xff, 0, 0, 0, 0]);
        }
        Transport::Udp => {
            let len = (8 + payload.len()) as u16;
            p.extend_from_slice(&len.to_be_bytes());
            p.extend_from_slice(&[0, 0]);
        }
    }
    p.extend_from_slice(payload);
    p
}

/// Prepends a 14-byte Ethernet II header carrying `ethertype`.
pub fn ethernet_frame(ethertype: u16, body: &[u8]) -> Vec<u8> {
    let mut f = vec![0x02, 0, 0, 0, 0, 1, 0x02, 0, 0, 0, 0, 2];
    f.extend_from_slice(&ethertype.to_be_bytes());
    f.extend_from_slice(body);
    f
}

pub fn synth_flows(seed: u64, config: &SynthConfig) -> Vec<SynthFlow> {
    let streams = SeedStreams::new(seed);
    (0..config.flows)
        .map(|i| {
            let mut rng = streams.stream(i as u64, Purpose::Synth);
            let class = rng.random_range(0..config.classes.max(1));
            let transport = if rng.random::<f64>() < config.udp_fraction {
                Transport::Udp
            } else {
                Transport::Tcp
            };
            let client = (Ipv4Addr::new(10, rng.random(), rng.random(), rng.random_range(1..255)), rng.random_range(1024..65535));
            let server = (
                Ipv4Addr::new(192, 168, rng.random(), rng.random_range(1..255)),
                [53, 80, 443, 8080][rng.random_range(0..4)],
            );
            let n = rng.random_range(config.packets.clone());
            let mut seq: u32 = rng.random();
            let packets = (0..n)
                .map(|k| {
                    let len = rng.random_range(config.payload_bytes.clone()).max(2);
                    let mut payload: Vec<u8> = (0..len).map(|_| rng.random()).collect();
                    payload[..2].copy_from_slice(&class_marker(class));
                    let (src, dst) = if k % 2 == 0 { (client, server) } else { (server, client) };
                    seq = seq.wrapping_add(len as u32);
                    ipv4_packet(src, dst, transport, &payload, (i * 16 + k) as u16, seq)
                })
                .collect();
            SynthFlow {
                class,
                transport,
                client,
                server,
                packets,
            }
        })
        .collect()
}

/// Ethernet frames of all flows, interleaved round-robin, one millisecond apart.
pub fn capture_frames(flows: &[SynthFlow]) -> Vec<(Timestamp, Vec<u8>)> {
    let longest = flows.iter().map(|f| f.packets.len()).max().unwrap_or(0);
    let mut out = Vec::new();
    for k in 0..longest {
        for f in flows {
            if let Some(p) = f.packets.get(k) {
                let n = out.len() as u32;
                let ts = Timestamp {
                    secs: 1_700_000_000 + n / 1000,
                    micros: (n % 1000) * 1000,
                };
                out.push((ts, ethernet_frame(0x0800, p)));
            }
        }
    }
    out
}

/// Writes frames as an Ethernet pcap stream.
pub fn write_capture<W: Write>(out: W, frames: &[(Timestamp, Vec<u8>)]) -> std::io::Result<()> {
    let refs: Vec<(Timestamp, &[u8])> = frames.iter().map(|(t, b)| (*t, b.as_slice())).collect();
    write_pcap(out, LINKTYPE_ETHERNET, &refs)
}
