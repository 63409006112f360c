//! Vocabularies over hexadecimal traffic and the token layout fed to the model.
//!
//! Every vocabulary starts with the same reserved block: six special tokens
//! (`<pad>` is always id 0) followed by the 100 sentinels `<extra_id_0>` ..
//! `<extra_id_99>`. Regular tokens come after.

mod wordpiece;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::HexUnit;

pub use wordpiece::train_wordpiece;

pub const PAD: u32 = 0;
pub const END: u32 = 1;
pub const UNK: u32 = 2;
pub const TSK: u32 = 3;
pub const HEAD: u32 = 4;
pub const PKT: u32 = 5;
pub const NUM_SENTINELS: usize = 100;
pub const FIRST_SENTINEL: u32 = 6;
/// Size of the reserved block (specials + sentinels).
pub const NUM_RESERVED: usize = 6 + NUM_SENTINELS;

pub const SPECIAL_TOKENS: [&str; 6] = ["<pad>", "</s>", "<unk>", "<tsk>", "<head>", "<pkt>"];

/// Continuation prefix used by WordPiece pieces that do not start a word.
pub const CONTINUATION: &str = "##";
/// Longest piece (in hex digits, excluding the continuation prefix) the
/// WordPiece encoder will try.
pub const MAX_PIECE_CHARS: usize = 8;

pub fn sentinel(i: usize) -> u32 {
    assert!(i < NUM_SENTINELS, "sentinel index {i} out of range");
    FIRST_SENTINEL + i as u32
}

pub fn is_sentinel(id: u32) -> bool {
    (FIRST_SENTINEL..FIRST_SENTINEL + NUM_SENTINELS as u32).contains(&id)
}

/// True for specials and sentinels.
pub fn is_reserved(id: u32) -> bool {
    (id as usize) < NUM_RESERVED
}

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("invalid hex character {ch:?} at position {position}")]
    InvalidHexChar { position: usize, ch: char },
    #[error("corpus too small: {available} distinct symbols available, target {target}")]
    CorpusTooSmall { target: usize, available: usize },
    #[error("token id {id} out of range for vocabulary of {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("malformed vocabulary file: {0}")]
    Malformed(String),
    #[error("unknown tokenizer scheme {0:?}")]
    UnknownScheme(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[non_exhaustive]
pub enum Scheme {
    /// Every 4-digit hex word is a token.
    Vanilla,
    /// WordPiece trained from single hex characters.
    WordpieceWord,
    /// WordPiece seeded with the Vanilla word inventory.
    WordpiecePd,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Vanilla => "vanilla",
            Scheme::WordpieceWord => "wordpiece_word",
            Scheme::WordpiecePd => "wordpiece_pd",
        })
    }
}

impl FromStr for Scheme {
    type Err = TokenizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vanilla" => Ok(Scheme::Vanilla),
            "wordpiece_word" => Ok(Scheme::WordpieceWord),
            "wordpiece_pd" => Ok(Scheme::WordpiecePd),
            other => Err(TokenizerError::UnknownScheme(other.to_string())),
        }
    }
}

/// Token/id bijection plus the scheme that produced it.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    scheme: Scheme,
    seed: u64,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.scheme == other.scheme
    }
}

fn reserved_tokens() -> impl Iterator<Item = String> {
    SPECIAL_TOKENS
        .iter()
        .map(|s| s.to_string())
        .chain((0..NUM_SENTINELS).map(|i| format!("<extra_id_{i}>")))
}

impl Vocabulary {
    /// Builds a vocabulary from its regular tokens; the reserved block is
    /// prepended. Duplicates are rejected.
    pub fn from_regular_tokens(
        regular: impl IntoIterator<Item = String>,
        scheme: Scheme,
        seed: u64,
    ) -> Result<Self, TokenizerError> {
        let tokens: Vec<String> = reserved_tokens().chain(regular).collect();
        Self::from_all_tokens(tokens, scheme, seed)
    }

    fn from_all_tokens(tokens: Vec<String>, scheme: Scheme, seed: u64) -> Result<Self, TokenizerError> {
        for (i, expected) in reserved_tokens().enumerate() {
            if tokens.get(i) != Some(&expected) {
                return Err(TokenizerError::Malformed(format!(
                    "expected reserved token {expected} at id {i}"
                )));
            }
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains('\n') {
                return Err(TokenizerError::Malformed(format!("invalid token at id {i}")));
            }
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(TokenizerError::Malformed(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary {
            tokens,
            ids,
            scheme,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn regular_tokens(&self) -> &[String] {
        &self.tokens[NUM_RESERVED..]
    }

    pub fn lookup(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Result<&str, TokenizerError> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(TokenizerError::IdOutOfRange {
                id,
                size: self.tokens.len(),
            })
    }

    /// SHA-256 over the token list; identifies a vocabulary in other artifacts.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.scheme.to_string().as_bytes());
        for t in &self.tokens {
            h.update(b"\n");
            h.update(t.as_bytes());
        }
        h.finalize().into()
    }

    pub fn checksum_hex(&self) -> String {
        hex::encode(self.checksum())
    }

    /// Appends the ids for one 4-digit word. Words the vocabulary cannot cover
    /// become a single `<unk>`.
    pub fn tokenize_word(&self, word: &str, out: &mut Vec<u32>) {
        match self.scheme {
            Scheme::Vanilla => out.push(self.lookup(word).unwrap_or(UNK)),
            Scheme::WordpieceWord | Scheme::WordpiecePd => {
                let start = out.len();
                if !self.greedy_pieces(word, out) {
                    out.truncate(start);
                    out.push(UNK);
                }
            }
        }
    }

    /// Longest-match-first segmentation. Returns false if some suffix has no
    /// matching piece.
    fn greedy_pieces(&self, word: &str, out: &mut Vec<u32>) -> bool {
        let mut start = 0;
        let mut buf = String::with_capacity(CONTINUATION.len() + MAX_PIECE_CHARS);
        while start < word.len() {
            let mut found = None;
            let max_end = word.len().min(start + MAX_PIECE_CHARS);
            for end in (start + 1..=max_end).rev() {
                buf.clear();
                if start > 0 {
                    buf.push_str(CONTINUATION);
                }
                buf.push_str(&word[start..end]);
                if let Some(id) = self.lookup(&buf) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    out.push(id);
                    start = end;
                }
                None => return false,
            }
        }
        true
    }

    /// Ids for arbitrary hex text (split into 4-digit words first).
    pub fn tokenize_hex(&self, hex: &str) -> Result<Vec<u32>, TokenizerError> {
        let mut out = Vec::new();
        for w in split_words(hex)? {
            self.tokenize_word(&w, &mut out);
        }
        Ok(out)
    }

    pub fn write_to(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "#scheme={} #seed={}", self.scheme, self.seed)?;
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn to_file_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("tokens are UTF-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, TokenizerError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| TokenizerError::Malformed("empty file".into()))?;
        let mut scheme = None;
        let mut seed = None;
        for field in header.split_whitespace() {
            let field = field
                .strip_prefix('#')
                .ok_or_else(|| TokenizerError::Malformed(format!("bad header field {field:?}")))?;
            match field.split_once('=') {
                Some(("scheme", v)) => scheme = Some(v.parse::<Scheme>()?),
                Some(("seed", v)) => {
                    seed = Some(v.parse::<u64>().map_err(|e| TokenizerError::Malformed(e.to_string()))?)
                }
                // Unknown header keys are tolerated for forward compatibility.
                _ => {}
            }
        }
        let scheme = scheme.ok_or_else(|| TokenizerError::Malformed("missing #scheme".into()))?;
        let tokens = lines.map(str::to_string).collect();
        Self::from_all_tokens(tokens, scheme, seed.unwrap_or(0))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// The 65,536 four-digit words `0000`..`ffff` after the reserved block.
pub fn build_vanilla_vocab() -> Vocabulary {
    Vocabulary::from_regular_tokens((0..=0xffffu32).map(|w| format!("{w:04x}")), Scheme::Vanilla, 0)
        .expect("vanilla vocabulary is well formed")
}

/// Splits hex into 4-character words, right-padding the last with `'0'`.
pub fn split_words(hex: &str) -> Result<Vec<String>, TokenizerError> {
    if let Some((position, ch)) = hex
        .char_indices()
        .find(|(_, c)| !matches!(c, '0'..='9' | 'a'..='f'))
    {
        return Err(TokenizerError::InvalidHexChar { position, ch });
    }
    Ok(hex
        .as_bytes()
        .chunks(4)
        .map(|c| {
            let mut w = String::from_utf8(c.to_vec()).expect("ascii");
            while w.len() < 4 {
                w.push('0');
            }
            w
        })
        .collect())
}

/// Token ids with the three auxiliary per-position streams summed into the
/// input embedding.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    /// True over header-field tokens.
    pub header_mask: Vec<bool>,
    /// 0 outside packets, k for tokens of the k-th packet (its `<pkt>` included).
    pub packet_ids: Vec<u8>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn positions(&self) -> std::ops::Range<usize> {
        0..self.ids.len()
    }

    pub fn push(&mut self, id: u32, header: bool, packet: u8) {
        self.ids.push(id);
        self.header_mask.push(header);
        self.packet_ids.push(packet);
    }

    pub fn extend_from(&mut self, other: &TokenSeq, range: std::ops::Range<usize>) {
        self.ids.extend_from_slice(&other.ids[range.clone()]);
        self.header_mask.extend_from_slice(&other.header_mask[range.clone()]);
        self.packet_ids.extend_from_slice(&other.packet_ids[range]);
    }

    /// Positions of every `<pkt>` token in order.
    pub fn pkt_positions(&self) -> Vec<usize> {
        self.ids
            .iter()
            .enumerate()
            .filter(|(_, &id)| id == PKT)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Packet layout: `[header] <head> [payload] <pkt>` per packet, then `</s>`.
///
/// With `with_headers == false` both the header tokens and `<head>` are left
/// out. Packet ids saturate at 255.
pub fn encode(vocab: &Vocabulary, unit: &HexUnit, with_headers: bool) -> Result<TokenSeq, TokenizerError> {
    let mut seq = TokenSeq::default();
    let mut scratch = Vec::new();
    for (k, pkt) in unit.packets.iter().enumerate() {
        let pid = (k + 1).min(u8::MAX as usize) as u8;
        if with_headers {
            scratch.clear();
            for w in split_words(&pkt.header)? {
                vocab.tokenize_word(&w, &mut scratch);
            }
            for &id in &scratch {
                seq.push(id, true, pid);
            }
            seq.push(HEAD, false, pid);
        }
        scratch.clear();
        for w in split_words(&pkt.payload)? {
            vocab.tokenize_word(&w, &mut scratch);
        }
        for &id in &scratch {
            seq.push(id, false, pid);
        }
        seq.push(PKT, false, pid);
    }
    seq.push(END, false, 0);
    Ok(seq)
}

/// Concatenates token strings, stripping WordPiece continuation markers.
pub fn decode(vocab: &Vocabulary, ids: &[u32]) -> Result<String, TokenizerError> {
    let mut out = String::new();
    for &id in ids {
        let t = vocab.token(id)?;
        if is_reserved(id) {
            out.push_str(t);
        } else {
            out.push_str(t.strip_prefix(CONTINUATION).unwrap_or(t));
        }
    }
    Ok(out)
}

/// Hex digits only: specials are dropped.
pub fn decode_hex(vocab: &Vocabulary, ids: &[u32]) -> Result<String, TokenizerError> {
    let regular: Vec<u32> = ids.iter().copied().filter(|&id| !is_reserved(id)).collect();
    decode(vocab, &regular)
}
