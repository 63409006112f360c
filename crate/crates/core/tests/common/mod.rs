//! Test-only packet and capture builders written from the wire formats,
//! independent of the crate's own writers.
#![allow(dead_code)]

use std::path::Path;

use lens::corpus::{build_corpus, CorpusConfig, PretrainExample};
use lens::ingest::{anonymize, extract_flows, parse_pcap_bytes, to_hex_unit, Granularity, SessionFlow};
use lens::synth::{capture_frames, synth_flows, write_capture, SynthConfig};
use lens::tokenizer::{build_vanilla_vocab, encode, train_wordpiece, TokenSeq, Vocabulary};

pub const TCP: u8 = 6;
pub const UDP: u8 = 17;
pub const ICMP: u8 = 1;

pub fn checksum(bytes: &[u8]) -> u16 {
    let mut sum: u32 = bytes
        .chunks(2)
        .map(|c| u32::from(c[0]) << 8 | u32::from(*c.get(1).unwrap_or(&0)))
        .sum();
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

pub fn tcp(sport: u16, dport: u16, seq: u32, flags: u8, payload: &[u8]) -> Vec<u8> {
    let mut s = Vec::new();
    s.extend(sport.to_be_bytes());
    s.extend(dport.to_be_bytes());
    s.extend(seq.to_be_bytes());
    s.extend(0u32.to_be_bytes());
    s.extend([0x50, flags]);
    s.extend(8192u16.to_be_bytes());
    s.extend([0xab, 0xcd, 0, 0]);
    s.extend(payload);
    s
}

pub fn udp(sport: u16, dport: u16, payload: &[u8]) -> Vec<u8> {
    let mut s = Vec::new();
    s.extend(sport.to_be_bytes());
    s.extend(dport.to_be_bytes());
    s.extend(((8 + payload.len()) as u16).to_be_bytes());
    s.extend([0x12, 0x34]);
    s.extend(payload);
    s
}

/// IPv4 datagram; `options` must be a multiple of 4 bytes.
pub fn ipv4(src: [u8; 4], dst: [u8; 4], proto: u8, options: &[u8], frag: u16, l4: &[u8]) -> Vec<u8> {
    let ihl = 20 + options.len();
    let total = ihl + l4.len();
    let mut h = vec![0x40 | (ihl / 4) as u8, 0];
    h.extend((total as u16).to_be_bytes());
    h.extend([0x1c, 0x46]);
    h.extend(frag.to_be_bytes());
    h.extend([64, proto, 0, 0]);
    h.extend(src);
    h.extend(dst);
    h.extend(options);
    let c = checksum(&h);
    h[10..12].copy_from_slice(&c.to_be_bytes());
    h.extend(l4);
    h
}

pub fn ethernet(ethertype: u16, body: &[u8]) -> Vec<u8> {
    let mut f = vec![0x02, 0, 0, 0, 0, 0x01, 0x02, 0, 0, 0, 0, 0x02];
    f.extend(ethertype.to_be_bytes());
    f.extend(body);
    f
}

pub fn arp() -> Vec<u8> {
    ethernet(0x0806, &[0, 1, 8, 0, 6, 4, 0, 1, 2, 0, 0, 0, 0, 1, 10, 0, 0, 1, 0, 0, 0, 0, 0, 0, 10, 0, 0, 2])
}

/// Classic pcap, microsecond timestamps, in either byte order.
pub fn pcap(link_type: u32, big_endian: bool, frames: &[Vec<u8>]) -> Vec<u8> {
    let w32 = |v: u32| if big_endian { v.to_be_bytes() } else { v.to_le_bytes() };
    let w16 = |v: u16| if big_endian { v.to_be_bytes() } else { v.to_le_bytes() };
    let mut out = Vec::new();
    out.extend(w32(0xa1b2c3d4));
    out.extend(w16(2));
    out.extend(w16(4));
    out.extend(w32(0));
    out.extend(w32(0));
    out.extend(w32(65535));
    out.extend(w32(link_type));
    for (i, f) in frames.iter().enumerate() {
        out.extend(w32(1_700_000_000 + i as u32));
        out.extend(w32(0));
        out.extend(w32(f.len() as u32));
        out.extend(w32(f.len() as u32));
        out.extend(f);
    }
    out
}

pub struct Fixture {
    pub name: &'static str,
    pub bytes: Vec<u8>,
    /// Packet count of every expected flow, in order of first appearance.
    pub flows: Vec<usize>,
    pub skipped: Vec<(&'static str, usize)>,
    pub packets: usize,
}

const A: [u8; 4] = [192, 168, 1, 10];
const B: [u8; 4] = [10, 0, 0, 2];
const C: [u8; 4] = [172, 16, 5, 9];

/// Five hand-built captures covering TCP, UDP, both directions, options,
/// fragments, both byte orders, raw IPv4 and non-IP noise.
pub fn ingest_fixtures() -> Vec<Fixture> {
    let eth = |ip: Vec<u8>| ethernet(0x0800, &ip);
    vec![
        Fixture {
            name: "bidirectional_tcp.pcap",
            bytes: pcap(
                1,
                false,
                &[
                    eth(ipv4(A, B, TCP, &[], 0, &tcp(1234, 80, 1, 0x02, &[]))),
                    eth(ipv4(A, B, TCP, &[], 0, &tcp(1234, 80, 2, 0x18, b"GET /"))),
                    eth(ipv4(B, A, TCP, &[], 0, &tcp(80, 1234, 9, 0x18, b"200 OK"))),
                ],
            ),
            flows: vec![3],
            skipped: vec![],
            packets: 3,
        },
        Fixture {
            name: "mixed_with_arp.pcap",
            bytes: pcap(
                1,
                false,
                &[
                    eth(ipv4(A, B, TCP, &[], 0, &tcp(40000, 443, 1, 0x02, &[]))),
                    arp(),
                    eth(ipv4(C, B, TCP, &[], 0, &tcp(40001, 443, 1, 0x02, &[]))),
                    eth(ipv4(B, A, TCP, &[], 0, &tcp(443, 40000, 7, 0x12, &[]))),
                ],
            ),
            flows: vec![2, 1],
            skipped: vec![("non_ipv4", 1)],
            packets: 4,
        },
        Fixture {
            name: "udp_big_endian.pcap",
            bytes: pcap(
                1,
                true,
                &[
                    eth(ipv4(C, B, UDP, &[], 0, &udp(5353, 53, &[0xde, 0xad, 0xbe, 0xef]))),
                    eth(ipv4(B, C, UDP, &[], 0, &udp(53, 5353, &[1, 2, 3]))),
                    eth(ipv4(C, B, UDP, &[], 0, &udp(5354, 53, &[9]))),
                    eth(ipv4(C, B, ICMP, &[], 0, &[8, 0, 0, 0])),
                ],
            ),
            flows: vec![2, 1],
            skipped: vec![("non_tcp_udp", 1)],
            packets: 4,
        },
        Fixture {
            name: "same_ports_tcp_and_udp.pcap",
            bytes: pcap(
                1,
                false,
                &[
                    eth(ipv4(A, B, TCP, &[], 0, &tcp(5000, 5000, 1, 0x02, b"x"))),
                    eth(ipv4(A, B, UDP, &[], 0, &udp(5000, 5000, b"y"))),
                    eth(ipv4(B, A, UDP, &[], 0, &udp(5000, 5000, b"z"))),
                    ethernet(0x86dd, &[0x60; 40]),
                    eth(ipv4(A, B, UDP, &[], 0x0005, &[0u8; 16])),
                ],
            ),
            flows: vec![1, 2],
            skipped: vec![("ip_fragment", 1), ("non_ipv4", 1)],
            packets: 5,
        },
        Fixture {
            name: "raw_ipv4_options.pcap",
            bytes: pcap(
                101,
                false,
                &[
                    ipv4(A, C, UDP, &[1, 1, 1, 0], 0, &udp(7000, 9000, b"abc")),
                    ipv4(C, A, UDP, &[1, 1, 1, 0], 0, &udp(9000, 7000, b"")),
                    ipv4(A, C, TCP, &[], 0, &[0u8; 10]),
                ],
            ),
            flows: vec![2],
            skipped: vec![("truncated_header", 1)],
            packets: 3,
        },
    ]
}

pub fn write_fixtures(dir: &Path) -> Vec<Fixture> {
    let fx = ingest_fixtures();
    for f in &fx {
        std::fs::write(dir.join(f.name), &f.bytes).unwrap();
    }
    fx
}

/// Anonymized synthetic flows with `packets` packets each.
pub fn synth_anonymized(seed: u64, flows: usize, packets: usize) -> Vec<SessionFlow> {
    let cfg = SynthConfig {
        flows,
        packets: packets..=packets,
        payload_bytes: 4..=8,
        ..SynthConfig::default()
    };
    let mut buf = Vec::new();
    write_capture(&mut buf, &capture_frames(&synth_flows(seed, &cfg))).unwrap();
    let (raw, _) = extract_flows(&parse_pcap_bytes(&buf).unwrap());
    raw.iter().map(|f| anonymize(f).unwrap()).collect()
}

/// A WordPiece-Pd vocabulary plus the flow-level sequences it encodes.
pub fn tokenized(flows: &[SessionFlow], vocab_size: usize) -> (Vocabulary, Vec<TokenSeq>) {
    let units: Vec<_> = flows
        .iter()
        .flat_map(|f| to_hex_unit(f, Granularity::Flow, None).unwrap())
        .collect();
    let vocab = train_wordpiece(&units, vocab_size, Some(&build_vanilla_vocab()), 7).unwrap();
    let seqs = units.iter().map(|u| encode(&vocab, u, true).unwrap()).collect();
    (vocab, seqs)
}

/// The small corpus the model tests and the overfit run share.
pub fn fixture_corpus(flows: usize, seed: u64) -> (Vocabulary, Vec<PretrainExample>) {
    let (vocab, seqs) = tokenized(&synth_anonymized(seed, flows, 3), 1024);
    let corpus = build_corpus(&seqs, &CorpusConfig::new(seed)).unwrap();
    (vocab, corpus)
}

/// A flow-shaped sequence: per packet `[header] <head> [payload] <pkt>`, then `</s>`.
pub fn toy_seq(tag: u32, packets: usize, words: usize) -> TokenSeq {
    use lens::tokenizer::{END, HEAD, NUM_RESERVED, PKT};
    let base = NUM_RESERVED as u32;
    let mut s = TokenSeq::default();
    for p in 1..=packets as u8 {
        for k in 0..2 {
            s.push(base + (tag * 31 + k) % 500, true, p);
        }
        s.push(HEAD, false, p);
        for k in 0..words as u32 {
            s.push(base + 500 + (tag * 7 + u32::from(p) * 13 + k) % 400, false, p);
        }
        s.push(PKT, false, p);
    }
    s.push(END, false, 0);
    s
}

/// The double-precision toy configuration used by model tests.
pub fn toy_model_config(vocab_size: usize) -> lens::model::ModelConfig {
    lens::model::ModelConfig {
        d_model: 16,
        n_heads: 2,
        d_ffn: 32,
        n_layers_enc: 1,
        n_layers_dec: 1,
        vocab_size,
        max_positions: 256,
        dropout: 0.0,
        seed: 3,
        ..lens::model::ModelConfig::default()
    }
}
