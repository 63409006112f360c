use crate::corpus::{HtpLabel, PretrainExample};
use crate::tokenizer::{TokenSeq, END, PAD, PKT};

/// One sequence pair before padding.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchItem {
    pub encoder: TokenSeq,
    pub target: Vec<u32>,
    /// 0-based original position of the packet at each `<pkt>` slot.
    pub pop_labels: Vec<u8>,
    pub htp_label: Option<u8>,
    pub z: bool,
}

impl From<&PretrainExample> for BatchItem {
    fn from(ex: &PretrainExample) -> Self {
        BatchItem {
            encoder: ex.encoder_input.clone(),
            target: ex.msp.decoder_target.clone(),
            pop_labels: ex.pop.original_position.iter().map(|&p| p - 1).collect(),
            htp_label: ex.htp.applied.then_some(match ex.htp.label {
                HtpLabel::Heterologous => 0,
                HtpLabel::Homologous => 1,
            }),
            z: ex.z,
        }
    }
}

/// A padded batch laid out as `size * len` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub enc_len: usize,
    pub enc_ids: Vec<u32>,
    pub enc_valid: Vec<bool>,
    pub header_mask: Vec<bool>,
    pub packet_ids: Vec<u8>,
    pub dec_len: usize,
    /// `<pad>` then the target shifted right by one.
    pub dec_input: Vec<u32>,
    /// `<pad>` marks positions that carry no target.
    pub dec_target: Vec<u32>,
    pub dec_valid: Vec<bool>,
    /// `(example, encoder position, label)` for the first three `<pkt>` tokens.
    pub pop_slots: Vec<(usize, usize, u8)>,
    /// Row of each example's `</s>` token, if any.
    pub end_positions: Vec<Option<usize>>,
    pub htp_labels: Vec<Option<u8>>,
    pub z: Vec<bool>,
}

impl Batch {
    pub fn from_examples(examples: &[PretrainExample]) -> Batch {
        let items: Vec<BatchItem> = examples.iter().map(BatchItem::from).collect();
        Batch::new(&items)
    }

    pub fn new(items: &[BatchItem]) -> Batch {
        Batch::padded(items, 0, 0)
    }

    /// Pads to at least `min_enc` / `min_dec` positions.
    pub fn padded(items: &[BatchItem], min_enc: usize, min_dec: usize) -> Batch {
        let size = items.len();
        let enc_len = items.iter().map(|i| i.encoder.len()).max().unwrap_or(0).max(min_enc);
        let dec_len = items.iter().map(|i| i.target.len()).max().unwrap_or(0).max(min_dec);
        let mut b = Batch {
            size,
            enc_len,
            enc_ids: vec![PAD; size * enc_len],
            enc_valid: vec![false; size * enc_len],
            header_mask: vec![false; size * enc_len],
            packet_ids: vec![0; size * enc_len],
            dec_len,
            dec_input: vec![PAD; size * dec_len],
            dec_target: vec![PAD; size * dec_len],
            dec_valid: vec![false; size * dec_len],
            pop_slots: Vec::new(),
            end_positions: Vec::with_capacity(size),
            htp_labels: Vec::with_capacity(size),
            z: Vec::with_capacity(size),
        };
        for (m, item) in items.iter().enumerate() {
            let e = &item.encoder;
            let base = m * enc_len;
            b.enc_ids[base..base + e.len()].copy_from_slice(&e.ids);
            b.header_mask[base..base + e.len()].copy_from_slice(&e.header_mask);
            b.packet_ids[base..base + e.len()].copy_from_slice(&e.packet_ids);
            b.enc_valid[base..base + e.len()].fill(true);
            let pkts = e.ids.iter().enumerate().filter(|(_, &id)| id == PKT).map(|(i, _)| i);
            for (slot, pos) in pkts.take(item.pop_labels.len()).enumerate() {
                b.pop_slots.push((m, pos, item.pop_labels[slot]));
            }
            b.end_positions.push(e.ids.iter().rposition(|&id| id == END));
            b.htp_labels.push(item.htp_label);
            b.z.push(item.z);

            let base = m * dec_len;
            let t = &item.target;
            b.dec_target[base..base + t.len()].copy_from_slice(t);
            b.dec_valid[base..base + t.len()].fill(true);
            if !t.is_empty() {
                b.dec_input[base + 1..base + t.len()].copy_from_slice(&t[..t.len() - 1]);
            }
        }
        b
    }

    /// Number of non-`<pad>` decoder targets.
    pub fn target_count(&self) -> usize {
        self.dec_target.iter().filter(|&&t| t != PAD).count()
    }
}
