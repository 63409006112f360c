// Link/network/transport header decoding for plain Ethernet or raw IPv4 frames.

use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::pcap::{RawPacket, LINKTYPE_ETHERNET, LINKTYPE_IPV4, LINKTYPE_RAW};

const ETHERNET_HEADER_LEN: usize = 14;
const ETHERTYPE_IPV4: u16 = 0x0800;
const IPPROTO_TCP: u8 = 6;
const IPPROTO_UDP: u8 = 17;
const UDP_HEADER_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Tcp,
    Udp,
}

impl Transport {
    pub fn header_checksum_offset(self) -> usize {
        match self {
            Transport::Tcp => 16,
            Transport::Udp => 6,
        }
    }
}

/// Why a frame did not make it into any flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SkipReason {
    UnsupportedLinkType,
    NonIpv4,
    NonTcpUdp,
    Fragment,
    TruncatedHeader,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipReason::UnsupportedLinkType => "unsupported_link_type",
            SkipReason::NonIpv4 => "non_ipv4",
            SkipReason::NonTcpUdp => "non_tcp_udp",
            SkipReason::Fragment => "ip_fragment",
            SkipReason::TruncatedHeader => "truncated_header",
        })
    }
}

/// A frame reduced to its IPv4 + transport header and transport payload.
///
/// `header_bytes` starts at the IPv4 header; the link layer is dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPacket {
    pub header_bytes: Vec<u8>,
    pub payload_bytes: Vec<u8>,
    pub arrival_index: usize,
    pub src: (Ipv4Addr, u16),
    pub dst: (Ipv4Addr, u16),
    pub transport: Transport,
    /// IPv4 header length in bytes; the transport header follows it.
    pub ip_header_len: usize,
}

impl ParsedPacket {
    pub fn bytes(&self) -> Vec<u8> {
        let mut out = self.header_bytes.clone();
        out.extend_from_slice(&self.payload_bytes);
        out
    }
}

pub(crate) fn decode(raw: &RawPacket, arrival_index: usize) -> Result<ParsedPacket, SkipReason> {
    let ip = match raw.link_type {
        LINKTYPE_ETHERNET => {
            if raw.bytes.len() < ETHERNET_HEADER_LEN {
                return Err(SkipReason::TruncatedHeader);
            }
            let ethertype = u16::from_be_bytes([raw.bytes[12], raw.bytes[13]]);
            if ethertype != ETHERTYPE_IPV4 {
                return Err(SkipReason::NonIpv4);
            }
            &raw.bytes[ETHERNET_HEADER_LEN..]
        }
        LINKTYPE_RAW | LINKTYPE_IPV4 => &raw.bytes[..],
        _ => return Err(SkipReason::UnsupportedLinkType),
    };
    decode_ipv4(ip, arrival_index)
}

fn decode_ipv4(ip: &[u8], arrival_index: usize) -> Result<ParsedPacket, SkipReason> {
    if ip.is_empty() || ip[0] >> 4 != 4 {
        return Err(SkipReason::NonIpv4);
    }
    let ihl = usize::from(ip[0] & 0x0f) * 4;
    if ihl < 20 || ip.len() < ihl {
        return Err(SkipReason::TruncatedHeader);
    }
    let total_len = usize::from(u16::from_be_bytes([ip[2], ip[3]]));
    let frag = u16::from_be_bytes([ip[6], ip[7]]);
    let transport = match ip[9] {
        IPPROTO_TCP => Transport::Tcp,
        IPPROTO_UDP => Transport::Udp,
        _ => return Err(SkipReason::NonTcpUdp),
    };
    // Non-first fragments carry no transport header.
    if frag & 0x1fff != 0 {
        return Err(SkipReason::Fragment);
    }
    // Ethernet trailer padding lies beyond the IP total length.
    let end = if total_len >= ihl { total_len.min(ip.len()) } else { ip.len() };
    let l4 = &ip[ihl..end];
    let l4_header_len = match transport {
        Transport::Tcp => {
            if l4.len() < 20 {
                return Err(SkipReason::TruncatedHeader);
            }
            let off = usize::from(l4[12] >> 4) * 4;
            if off < 20 || l4.len() < off {
                return Err(SkipReason::TruncatedHeader);
            }
            off
        }
        Transport::Udp => {
            if l4.len() < UDP_HEADER_LEN {
                return Err(SkipReason::TruncatedHeader);
            }
            UDP_HEADER_LEN
        }
    };
    let src_ip = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst_ip = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
    let src_port = u16::from_be_bytes([l4[0], l4[1]]);
    let dst_port = u16::from_be_bytes([l4[2], l4[3]]);
    let header_end = ihl + l4_header_len;
    Ok(ParsedPacket {
        header_bytes: ip[..header_end].to_vec(),
        payload_bytes: ip[header_end..end].to_vec(),
        arrival_index,
        src: (src_ip, src_port),
        dst: (dst_ip, dst_port),
        transport,
        ip_header_len: ihl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::pcap::Timestamp;

    fn udp_frame(payload: &[u8], pad_to: usize) -> Vec<u8> {
        let mut f = vec![0u8; 12];
        f.extend_from_slice(&[0x08, 0x00]);
        let total = 20 + 8 + payload.len();
        f.extend_from_slice(&[0x45, 0, (total >> 8) as u8, total as u8, 0, 0, 0x40, 0, 64, 17, 0, 0]);
        f.extend_from_slice(&[10, 0, 0, 1, 10, 0, 0, 2]);
        f.extend_from_slice(&[0x04, 0xd2, 0x00, 0x35, 0, (8 + payload.len()) as u8, 0, 0]);
        f.extend_from_slice(payload);
        f.resize(f.len().max(pad_to), 0);
        f
    }

    #[test]
    fn ethernet_padding_is_not_payload() {
        let raw = RawPacket {
            timestamp: Timestamp { secs: 0, micros: 0 },
            link_type: LINKTYPE_ETHERNET,
            bytes: udp_frame(&[0xde, 0xad], 60),
            orig_len: 60,
        };
        let p = decode(&raw, 0).unwrap();
        assert_eq!(p.header_bytes.len(), 28);
        assert_eq!(p.payload_bytes, vec![0xde, 0xad]);
        assert_eq!(p.src, (Ipv4Addr::new(10, 0, 0, 1), 1234));
        assert_eq!(p.dst, (Ipv4Addr::new(10, 0, 0, 2), 53));
    }

    #[test]
    fn arp_is_non_ipv4() {
        let mut bytes = vec![0u8; 42];
        bytes[12] = 0x08;
        bytes[13] = 0x06;
        let raw = RawPacket {
            timestamp: Timestamp { secs: 0, micros: 0 },
            link_type: LINKTYPE_ETHERNET,
            bytes,
            orig_len: 42,
        };
        assert_eq!(decode(&raw, 0), Err(SkipReason::NonIpv4));
    }

    #[test]
    fn short_tcp_header_is_skipped() {
        let mut ip = vec![0x45, 0, 0, 30, 0, 0, 0, 0, 64, 6, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2];
        ip.extend_from_slice(&[0; 10]);
        assert_eq!(decode_ipv4(&ip, 0), Err(SkipReason::TruncatedHeader));
    }
}
