//! Binary corpus files.
//!
//! ```text
//! "LENSCORP" | u32 version | [u8; 32] vocab sha256 | u64 seed | u64 record count
//! | u32 meta length | meta (UTF-8 JSON, may be empty)
//! then per record: u32 body length | body
//! ```
//!
//! A body holds, in order: encoder ids (u32 count + u32 each), header-mask
//! bits (LSB-first, one bit per encoder position), packet ids (u8 each),
//! decoder target (u32 count + u32 each), MSP spans (u32 count + (u32 start,
//! u32 len) each), POP (u8 applied, u8 t, t permutation bytes), HTP (u8
//! applied, u8 label, u8 has-partner, u64 partner) and z (u8). Integers are
//! little-endian.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{CorpusError, HtpAnnotation, HtpLabel, MaskedSpan, MspAnnotation, PopAnnotation, PretrainExample};
use crate::tokenizer::TokenSeq;

pub const MAGIC: &[u8; 8] = b"LENSCORP";
pub const VERSION: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusHeader {
    pub version: u32,
    pub vocab_checksum: [u8; 32],
    pub seed: u64,
    pub records: u64,
    /// Caller metadata, conventionally JSON.
    pub meta: String,
}

pub fn write_corpus<W: Write>(
    mut out: W,
    vocab_checksum: [u8; 32],
    seed: u64,
    meta: &str,
    examples: &[PretrainExample],
) -> Result<(), CorpusError> {
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(VERSION)?;
    out.write_all(&vocab_checksum)?;
    out.write_u64::<LittleEndian>(seed)?;
    out.write_u64::<LittleEndian>(examples.len() as u64)?;
    out.write_u32::<LittleEndian>(meta.len() as u32)?;
    out.write_all(meta.as_bytes())?;
    let mut body = Vec::new();
    for ex in examples {
        body.clear();
        encode_record(&mut body, ex)?;
        out.write_u32::<LittleEndian>(body.len() as u32)?;
        out.write_all(&body)?;
    }
    Ok(())
}

fn encode_record(b: &mut Vec<u8>, ex: &PretrainExample) -> std::io::Result<()> {
    let seq = &ex.encoder_input;
    b.write_u32::<LittleEndian>(seq.ids.len() as u32)?;
    for &id in &seq.ids {
        b.write_u32::<LittleEndian>(id)?;
    }
    let mut bits = vec![0u8; seq.header_mask.len().div_ceil(8)];
    for (i, &m) in seq.header_mask.iter().enumerate() {
        if m {
            bits[i / 8] |= 1 << (i % 8);
        }
    }
    b.write_all(&bits)?;
    b.write_all(&seq.packet_ids)?;
    b.write_u32::<LittleEndian>(ex.msp.decoder_target.len() as u32)?;
    for &id in &ex.msp.decoder_target {
        b.write_u32::<LittleEndian>(id)?;
    }
    b.write_u32::<LittleEndian>(ex.msp.spans.len() as u32)?;
    for s in &ex.msp.spans {
        b.write_u32::<LittleEndian>(s.start as u32)?;
        b.write_u32::<LittleEndian>(s.len as u32)?;
    }
    b.write_u8(u8::from(ex.pop.applied))?;
    b.write_u8(ex.pop.permutation.len() as u8)?;
    b.write_all(&ex.pop.permutation)?;
    b.write_u8(u8::from(ex.htp.applied))?;
    b.write_u8(ex.htp.label as u8)?;
    b.write_u8(u8::from(ex.htp.partner_index.is_some()))?;
    b.write_u64::<LittleEndian>(ex.htp.partner_index.unwrap_or(0) as u64)?;
    b.write_u8(u8::from(ex.z))?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> CorpusError {
    CorpusError::Format(msg.into())
}

pub fn read_header<R: Read>(input: &mut R) -> Result<CorpusHeader, CorpusError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("missing LENSCORP magic"));
    }
    let version = input.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut vocab_checksum = [0u8; 32];
    input.read_exact(&mut vocab_checksum)?;
    let seed = input.read_u64::<LittleEndian>()?;
    let records = input.read_u64::<LittleEndian>()?;
    let mut meta = vec![0u8; input.read_u32::<LittleEndian>()? as usize];
    input.read_exact(&mut meta)?;
    let meta = String::from_utf8(meta).map_err(|e| bad(format!("meta: {e}")))?;
    Ok(CorpusHeader {
        version,
        vocab_checksum,
        seed,
        records,
        meta,
    })
}

pub fn read_corpus<R: Read>(mut input: R) -> Result<(CorpusHeader, Vec<PretrainExample>), CorpusError> {
    let header = read_header(&mut input)?;
    let mut examples = Vec::with_capacity(header.records as usize);
    let mut body = Vec::new();
    for r in 0..header.records {
        let len = input.read_u32::<LittleEndian>()? as usize;
        body.resize(len, 0);
        input.read_exact(&mut body)?;
        let ex = decode_record(&body).map_err(|e| bad(format!("record {r}: {e}")))?;
        examples.push(ex);
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(bad("trailing bytes after last record"));
    }
    Ok((header, examples))
}

fn decode_record(mut b: &[u8]) -> Result<PretrainExample, CorpusError> {
    let r = &mut b;
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        ids.push(r.read_u32::<LittleEndian>()?);
    }
    let mut bits = vec![0u8; n.div_ceil(8)];
    r.read_exact(&mut bits)?;
    let header_mask = (0..n).map(|i| bits[i / 8] & (1 << (i % 8)) != 0).collect();
    let mut packet_ids = vec![0u8; n];
    r.read_exact(&mut packet_ids)?;
    let nd = r.read_u32::<LittleEndian>()? as usize;
    let mut decoder_target = Vec::with_capacity(nd);
    for _ in 0..nd {
        decoder_target.push(r.read_u32::<LittleEndian>()?);
    }
    let ns = r.read_u32::<LittleEndian>()? as usize;
    let mut spans = Vec::with_capacity(ns);
    for k in 0..ns {
        let start = r.read_u32::<LittleEndian>()? as usize;
        let len = r.read_u32::<LittleEndian>()? as usize;
        spans.push(MaskedSpan {
            start,
            len,
            sentinel_index: k,
        });
    }
    let pop_applied = r.read_u8()? != 0;
    let t = r.read_u8()? as usize;
    let mut perm = vec![0u8; t];
    r.read_exact(&mut perm)?;
    if let Some(&p) = perm.iter().find(|&&p| p == 0 || p as usize > t) {
        return Err(bad(format!("permutation entry {p} out of range")));
    }
    let mut pop = PopAnnotation::from_permutation(perm);
    pop.applied = pop_applied;
    let htp_applied = r.read_u8()? != 0;
    let label = match r.read_u8()? {
        0 => HtpLabel::Heterologous,
        1 => HtpLabel::Homologous,
        other => return Err(bad(format!("bad HTP label {other}"))),
    };
    let has_partner = r.read_u8()? != 0;
    let partner = r.read_u64::<LittleEndian>()? as usize;
    let z = r.read_u8()? != 0;
    if !r.is_empty() {
        return Err(bad("record body longer than its fields"));
    }
    Ok(PretrainExample {
        encoder_input: TokenSeq {
            ids,
            header_mask,
            packet_ids,
        },
        msp: MspAnnotation {
            spans,
            decoder_target,
        },
        pop,
        htp: HtpAnnotation {
            applied: htp_applied,
            label,
            partner_index: has_partner.then_some(partner),
        },
        z,
    })
}
