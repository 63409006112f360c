//! Classic libpcap file reading and writing.
//!
//! Only the original format is handled: a 24-byte global header followed by
//! 16-byte record headers, in either byte order. pcapng is not supported.

use std::io::Write;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};

use super::IngestError;

/// Magic number as written by a host in its native order.
pub const PCAP_MAGIC: u32 = 0xa1b2_c3d4;
/// The same magic read back on a host with the opposite byte order.
pub const PCAP_MAGIC_SWAPPED: u32 = 0xd4c3_b2a1;

pub const LINKTYPE_ETHERNET: u32 = 1;
pub const LINKTYPE_RAW: u32 = 101;
pub const LINKTYPE_IPV4: u32 = 228;

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp {
    pub secs: u32,
    pub micros: u32,
}

/// One captured frame exactly as stored in the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPacket {
    pub timestamp: Timestamp,
    pub link_type: u32,
    pub bytes: Vec<u8>,
    /// Length of the frame on the wire (may exceed `bytes.len()` if snapped).
    pub orig_len: u32,
}

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

impl Endian {
    fn u32(self, buf: &[u8]) -> u32 {
        match self {
            Endian::Little => LittleEndian::read_u32(buf),
            Endian::Big => BigEndian::read_u32(buf),
        }
    }
}

/// Reads every record of a classic pcap file in file order.
pub fn parse_pcap(path: impl AsRef<Path>) -> Result<Vec<RawPacket>, IngestError> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_pcap_bytes(&data)
}

/// Same as [`parse_pcap`] over an in-memory capture.
pub fn parse_pcap_bytes(data: &[u8]) -> Result<Vec<RawPacket>, IngestError> {
    if data.len() < GLOBAL_HEADER_LEN {
        let mut magic = [0u8; 4];
        let n = data.len().min(4);
        magic[..n].copy_from_slice(&data[..n]);
        return Err(IngestError::BadMagic {
            offset: 0,
            found: LittleEndian::read_u32(&magic),
        });
    }
    let endian = match LittleEndian::read_u32(&data[0..4]) {
        PCAP_MAGIC => Endian::Little,
        PCAP_MAGIC_SWAPPED => Endian::Big,
        found => return Err(IngestError::BadMagic { offset: 0, found }),
    };
    let link_type = endian.u32(&data[20..24]);

    let mut packets = Vec::new();
    let mut offset = GLOBAL_HEADER_LEN;
    while offset < data.len() {
        let remaining = data.len() - offset;
        if remaining < RECORD_HEADER_LEN {
            return Err(IngestError::TruncatedRecord {
                offset,
                claimed: RECORD_HEADER_LEN,
                available: remaining,
            });
        }
        let rec = &data[offset..offset + RECORD_HEADER_LEN];
        let secs = endian.u32(&rec[0..4]);
        let micros = endian.u32(&rec[4..8]);
        let incl_len = endian.u32(&rec[8..12]) as usize;
        let orig_len = endian.u32(&rec[12..16]);
        let body_start = offset + RECORD_HEADER_LEN;
        let available = data.len() - body_start;
        if incl_len > available {
            return Err(IngestError::TruncatedRecord {
                offset,
                claimed: incl_len,
                available,
            });
        }
        packets.push(RawPacket {
            timestamp: Timestamp { secs, micros },
            link_type,
            bytes: data[body_start..body_start + incl_len].to_vec(),
            orig_len,
        });
        offset = body_start + incl_len;
    }
    Ok(packets)
}

/// Serializes frames as a little-endian classic pcap stream.
///
/// All frames must share `link_type`; it goes into the global header.
pub fn write_pcap<W: Write>(
    mut out: W,
    link_type: u32,
    frames: &[(Timestamp, &[u8])],
) -> std::io::Result<()> {
    out.write_u32::<LittleEndian>(PCAP_MAGIC)?;
    out.write_u16::<LittleEndian>(2)?;
    out.write_u16::<LittleEndian>(4)?;
    out.write_i32::<LittleEndian>(0)?;
    out.write_u32::<LittleEndian>(0)?;
    out.write_u32::<LittleEndian>(65_535)?;
    out.write_u32::<LittleEndian>(link_type)?;
    for (ts, bytes) in frames {
        out.write_u32::<LittleEndian>(ts.secs)?;
        out.write_u32::<LittleEndian>(ts.micros)?;
        out.write_u32::<LittleEndian>(bytes.len() as u32)?;
        out.write_u32::<LittleEndian>(bytes.len() as u32)?;
        out.write_all(bytes)?;
    }
    Ok(())
}
