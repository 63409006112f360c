//! Pre-training example synthesis.
//!
//! Three corruptions are layered on tokenized flows:
//!
//! * packet order (POP): a fraction of flows have their first (up to three)
//!   packets shuffled, and every packet is labelled with its original slot;
//! * homologous traffic (HTP): a fraction of the remaining flows are split in
//!   two subflows and, half of the time, the second half is swapped for the
//!   second half of another flow;
//! * masked spans (MSP): applied last, to every example.
//!
//! Draws for flow `i` come from substreams keyed by `i`, so the corpus does not
//! depend on evaluation order.

pub mod io;

use std::ops::Range;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::{Purpose, SeedStreams};
use crate::tokenizer::{is_reserved, sentinel, TokenSeq, END, NUM_SENTINELS, PKT};

pub const DEFAULT_POP_RATE: f64 = 0.15;
pub const DEFAULT_HTP_RATE: f64 = 0.30;
pub const MSP_MASK_PROB: f64 = 0.15;
pub const MAX_SPAN_LEN: usize = 5;
/// Only the first three packets take part in order prediction.
pub const POP_MAX_PACKETS: usize = 3;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("need at least 2 flows outside the excluded set, found {available}")]
    NotEnoughFlows { available: usize },
    #[error("rate {0} outside (0, 1)")]
    BadRate(f64),
    #[error("corpus file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskedSpan {
    /// Start in the unmasked sequence.
    pub start: usize,
    pub len: usize,
    pub sentinel_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MspAnnotation {
    pub spans: Vec<MaskedSpan>,
    /// `<extra_id_0> span_0 .. <extra_id_k-1> span_k-1 </s>`
    pub decoder_target: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PopAnnotation {
    pub applied: bool,
    /// `permutation[j]` is the 1-based slot that original packet `j + 1` moved to.
    pub permutation: Vec<u8>,
    /// `original_position[s]` is the 1-based original index of the packet now in slot `s`.
    pub original_position: Vec<u8>,
    pub same_position: Vec<bool>,
}

impl PopAnnotation {
    pub fn identity(t: usize) -> Self {
        let ids: Vec<u8> = (1..=t as u8).collect();
        PopAnnotation {
            applied: false,
            permutation: ids.clone(),
            original_position: ids,
            same_position: vec![true; t],
        }
    }

    pub fn from_permutation(permutation: Vec<u8>) -> Self {
        let t = permutation.len();
        let mut original_position = vec![0u8; t];
        for (j, &slot) in permutation.iter().enumerate() {
            original_position[slot as usize - 1] = j as u8 + 1;
        }
        let same_position = permutation
            .iter()
            .enumerate()
            .map(|(j, &p)| p as usize == j + 1)
            .collect();
        PopAnnotation {
            applied: same_position_any_false(&permutation),
            permutation,
            original_position,
            same_position,
        }
    }
}

fn same_position_any_false(perm: &[u8]) -> bool {
    perm.iter().enumerate().any(|(j, &p)| p as usize != j + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum HtpLabel {
    Heterologous = 0,
    Homologous = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HtpAnnotation {
    pub applied: bool,
    pub label: HtpLabel,
    pub partner_index: Option<usize>,
}

impl Default for HtpAnnotation {
    fn default() -> Self {
        HtpAnnotation {
            applied: false,
            label: HtpLabel::Homologous,
            partner_index: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PretrainExample {
    pub encoder_input: TokenSeq,
    pub msp: MspAnnotation,
    pub pop: PopAnnotation,
    pub htp: HtpAnnotation,
    /// All packets come from one flow.
    pub z: bool,
}

/// Splits a flow sequence into `<pkt>`-terminated packet ranges plus whatever
/// follows the last `<pkt>` (normally just `</s>`).
pub fn packet_segments(seq: &TokenSeq) -> (Vec<Range<usize>>, Range<usize>) {
    let mut segs = Vec::new();
    let mut start = 0;
    for (i, &id) in seq.ids.iter().enumerate() {
        if id == PKT {
            segs.push(start..i + 1);
            start = i + 1;
        }
    }
    (segs, start..seq.ids.len())
}

/// Concatenates packet ranges taken from several sequences, renumbering packet
/// ids by their new slot, and terminates with `</s>`.
fn assemble(parts: &[(&TokenSeq, Range<usize>)]) -> TokenSeq {
    let mut out = TokenSeq::default();
    for (slot, (src, range)) in parts.iter().enumerate() {
        let pid = (slot + 1).min(u8::MAX as usize) as u8;
        for i in range.clone() {
            out.push(src.ids[i], src.header_mask[i], pid);
        }
    }
    out.push(END, false, 0);
    out
}

fn eligible_for_span(id: u32) -> bool {
    !is_reserved(id)
}

/// Span-masks one sequence.
///
/// Each maximal run of ordinary tokens is tiled left to right by candidate
/// spans whose length is drawn uniformly from 1..=5 (clipped at the run end);
/// each candidate is masked with probability 0.15, up to 100 spans. If nothing
/// was masked, one eligible token chosen uniformly is masked instead.
pub fn sample_msp<R: Rng + ?Sized>(seq: &TokenSeq, rng: &mut R) -> (TokenSeq, MspAnnotation) {
    let n = seq.ids.len();
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < n {
        if !eligible_for_span(seq.ids[i]) {
            i += 1;
            continue;
        }
        let run_end = (i..n).find(|&k| !eligible_for_span(seq.ids[k])).unwrap_or(n);
        let drawn = rng.random_range(1..=MAX_SPAN_LEN);
        let len = drawn.min(run_end - i);
        let hit = rng.random_bool(MSP_MASK_PROB);
        if hit && spans.len() < NUM_SENTINELS {
            spans.push((i, len));
        }
        i += len;
    }
    if spans.is_empty() {
        let eligible: Vec<usize> = (0..n).filter(|&k| eligible_for_span(seq.ids[k])).collect();
        if let Some(&pos) = eligible.choose(rng) {
            spans.push((pos, 1));
        }
    }
    apply_spans(seq, &spans)
}

/// Replaces each `(start, len)` span with the next sentinel.
pub fn apply_spans(seq: &TokenSeq, spans: &[(usize, usize)]) -> (TokenSeq, MspAnnotation) {
    let mut out = TokenSeq::default();
    let mut ann = MspAnnotation::default();
    let mut next = spans.iter().peekable();
    let mut i = 0;
    while i < seq.ids.len() {
        if let Some(&&(start, len)) = next.peek() {
            if start == i {
                let k = ann.spans.len();
                out.push(sentinel(k), seq.header_mask[i], seq.packet_ids[i]);
                ann.decoder_target.push(sentinel(k));
                ann.decoder_target.extend_from_slice(&seq.ids[i..i + len]);
                ann.spans.push(MaskedSpan {
                    start,
                    len,
                    sentinel_index: k,
                });
                next.next();
                i += len;
                continue;
            }
        }
        out.push(seq.ids[i], seq.header_mask[i], seq.packet_ids[i]);
        i += 1;
    }
    ann.decoder_target.push(END);
    (out, ann)
}

/// Inverse of masking: substitutes the decoder-target spans back in.
pub fn unmask(masked: &[u32], ann: &MspAnnotation) -> Vec<u32> {
    let mut spans: Vec<&[u32]> = Vec::new();
    let target = &ann.decoder_target;
    let mut i = 0;
    while i < target.len() && target[i] != END {
        let start = i + 1;
        let mut end = start;
        while end < target.len() && !crate::tokenizer::is_sentinel(target[end]) && target[end] != END {
            end += 1;
        }
        spans.push(&target[start..end]);
        i = end;
    }
    let mut out = Vec::new();
    for &id in masked {
        if crate::tokenizer::is_sentinel(id) {
            let k = (id - crate::tokenizer::FIRST_SENTINEL) as usize;
            out.extend_from_slice(spans[k]);
        } else {
            out.push(id);
        }
    }
    out
}

fn non_identity_permutations(t: usize) -> Vec<Vec<u8>> {
    fn rec(prefix: &mut Vec<u8>, left: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if left.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for k in 0..left.len() {
            let v = left.remove(k);
            prefix.push(v);
            rec(prefix, left, out);
            prefix.pop();
            left.insert(k, v);
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut (1..=t as u8).collect(), &mut out);
    out.retain(|p| same_position_any_false(p));
    out
}

/// Reorders the first `t = min(packets, 3)` packets so that original packet
/// `j + 1` lands in slot `permutation[j]`.
pub fn apply_permutation(seq: &TokenSeq, permutation: &[u8]) -> TokenSeq {
    let (segs, _) = packet_segments(seq);
    let t = permutation.len();
    let mut order: Vec<usize> = vec![0; t];
    for (j, &slot) in permutation.iter().enumerate() {
        order[slot as usize - 1] = j;
    }
    let parts: Vec<(&TokenSeq, Range<usize>)> = order
        .iter()
        .map(|&j| (seq, segs[j].clone()))
        .chain(segs[t..].iter().map(|r| (seq, r.clone())))
        .collect();
    assemble(&parts)
}

fn pop_for_flow(seq: &TokenSeq, rate: f64, streams: &SeedStreams, index: usize) -> (TokenSeq, PopAnnotation) {
    let packets = packet_segments(seq).0.len();
    let t = packets.min(POP_MAX_PACKETS);
    let mut rng = streams.stream(index as u64, Purpose::Pop);
    if packets >= 2 && rng.random_bool(rate) {
        let perm = non_identity_permutations(t)
            .choose(&mut rng)
            .expect("t >= 2 has a non-identity permutation")
            .clone();
        (apply_permutation(seq, &perm), PopAnnotation::from_permutation(perm))
    } else {
        (seq.clone(), PopAnnotation::identity(t))
    }
}

fn check_rate(rate: f64) -> Result<(), CorpusError> {
    if rate > 0.0 && rate < 1.0 {
        Ok(())
    } else {
        Err(CorpusError::BadRate(rate))
    }
}

/// Selects each flow with ≥ 2 packets independently with probability `rate`
/// and shuffles it with a uniformly drawn non-identity permutation.
pub fn sample_pop(
    flows: &[TokenSeq],
    rate: f64,
    streams: &SeedStreams,
) -> Result<Vec<(TokenSeq, PopAnnotation)>, CorpusError> {
    check_rate(rate)?;
    Ok(flows
        .par_iter()
        .enumerate()
        .map(|(i, f)| pop_for_flow(f, rate, streams, i))
        .collect())
}

/// Packets in the first subflow: `ceil(t / 2)`.
pub fn subflow_split(packets: usize) -> usize {
    packets.div_ceil(2)
}

/// `(sf_i^1, sf_j^2)`: the first subflow of `own` followed by the second
/// subflow of `partner`.
pub fn recombine(own: &TokenSeq, partner: &TokenSeq) -> TokenSeq {
    let (own_segs, _) = packet_segments(own);
    let (partner_segs, _) = packet_segments(partner);
    let a = subflow_split(own_segs.len());
    let b = subflow_split(partner_segs.len());
    let parts: Vec<(&TokenSeq, Range<usize>)> = own_segs[..a]
        .iter()
        .map(|r| (own, r.clone()))
        .chain(partner_segs[b..].iter().map(|r| (partner, r.clone())))
        .collect();
    assemble(&parts)
}

fn htp_for_flow(
    flows: &[TokenSeq],
    partners: &[usize],
    index: usize,
    rate: f64,
    streams: &SeedStreams,
) -> (TokenSeq, HtpAnnotation) {
    let seq = &flows[index];
    let mut rng = streams.stream(index as u64, Purpose::Htp);
    let eligible = packet_segments(seq).0.len() >= 2;
    if !eligible || !rng.random_bool(rate) {
        return (seq.clone(), HtpAnnotation::default());
    }
    let homologous = rng.random_bool(0.5);
    if homologous {
        return (
            seq.clone(),
            HtpAnnotation {
                applied: true,
                label: HtpLabel::Homologous,
                partner_index: None,
            },
        );
    }
    // Uniform over the other partner-capable flows.
    let self_pos = partners.binary_search(&index).ok();
    let n_other = partners.len() - usize::from(self_pos.is_some());
    if n_other == 0 {
        return (seq.clone(), HtpAnnotation::default());
    }
    let mut k = rng.random_range(0..n_other);
    if let Some(p) = self_pos {
        if k >= p {
            k += 1;
        }
    }
    let j = partners[k];
    (
        recombine(seq, &flows[j]),
        HtpAnnotation {
            applied: true,
            label: HtpLabel::Heterologous,
            partner_index: Some(j),
        },
    )
}

/// Of the flows not in `excluded`, selects those with ≥ 2 packets with
/// probability `rate`; each selected flow is kept intact (homologous) or
/// recombined with another flow's second subflow (heterologous) with equal
/// probability.
pub fn sample_htp(
    flows: &[TokenSeq],
    rate: f64,
    streams: &SeedStreams,
    excluded: &[bool],
) -> Result<Vec<(TokenSeq, HtpAnnotation)>, CorpusError> {
    check_rate(rate)?;
    let available = (0..flows.len())
        .filter(|&i| !excluded.get(i).copied().unwrap_or(false))
        .count();
    if available < 2 {
        return Err(CorpusError::NotEnoughFlows { available });
    }
    let partners: Vec<usize> = (0..flows.len())
        .filter(|&i| packet_segments(&flows[i]).0.len() >= 2)
        .collect();
    Ok(flows
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            if excluded.get(i).copied().unwrap_or(false) {
                (f.clone(), HtpAnnotation::default())
            } else {
                htp_for_flow(flows, &partners, i, rate, streams)
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub seed: u64,
    pub pop_rate: f64,
    pub htp_rate: f64,
}

impl CorpusConfig {
    pub fn new(seed: u64) -> Self {
        CorpusConfig {
            seed,
            pop_rate: DEFAULT_POP_RATE,
            htp_rate: DEFAULT_HTP_RATE,
        }
    }
}

/// POP, then HTP on the POP complement, then MSP on the result.
pub fn build_corpus(flows: &[TokenSeq], config: &CorpusConfig) -> Result<Vec<PretrainExample>, CorpusError> {
    if flows.len() < 2 {
        return Err(CorpusError::NotEnoughFlows { available: flows.len() });
    }
    let streams = SeedStreams::new(config.seed);
    let popped = sample_pop(flows, config.pop_rate, &streams)?;
    let excluded: Vec<bool> = popped.iter().map(|(_, a)| a.applied).collect();
    let htp = if excluded.iter().filter(|&&e| !e).count() < 2 {
        // Too few flows left for a heterologous partner: no HTP this time.
        flows.iter().map(|f| (f.clone(), HtpAnnotation::default())).collect()
    } else {
        sample_htp(flows, config.htp_rate, &streams, &excluded)?
    };
    Ok(popped
        .into_par_iter()
        .zip(htp.into_par_iter())
        .enumerate()
        .map(|(i, ((pop_seq, pop), (htp_seq, htp)))| {
            let seq = if pop.applied { pop_seq } else { htp_seq };
            // Heterologous flows mix packets from two sources: no order labels.
            let pop = if htp.label == HtpLabel::Heterologous {
                let t = packet_segments(&seq).0.len().min(POP_MAX_PACKETS);
                PopAnnotation::identity(t)
            } else {
                pop
            };
            let mut rng = streams.stream(i as u64, Purpose::Msp);
            let (encoder_input, msp) = sample_msp(&seq, &mut rng);
            PretrainExample {
                encoder_input,
                msp,
                z: htp.label != HtpLabel::Heterologous,
                pop,
                htp,
            }
        })
        .collect())
}

/// Per-task counts over a corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskCounts {
    pub examples: usize,
    pub pop_applied: usize,
    pub htp_applied: usize,
    pub htp_homologous: usize,
    pub htp_heterologous: usize,
    pub msp_spans: usize,
    pub masked_tokens: usize,
    pub maskable_tokens: usize,
}

impl TaskCounts {
    pub fn of(examples: &[PretrainExample]) -> Self {
        let mut c = TaskCounts {
            examples: examples.len(),
            ..Default::default()
        };
        for ex in examples {
            c.pop_applied += usize::from(ex.pop.applied);
            if ex.htp.applied {
                c.htp_applied += 1;
                match ex.htp.label {
                    HtpLabel::Homologous => c.htp_homologous += 1,
                    HtpLabel::Heterologous => c.htp_heterologous += 1,
                }
            }
            c.msp_spans += ex.msp.spans.len();
            let masked: usize = ex.msp.spans.iter().map(|s| s.len).sum();
            c.masked_tokens += masked;
            c.maskable_tokens += masked
                + ex
                    .encoder_input
                    .ids
                    .iter()
                    .filter(|&&id| eligible_for_span(id))
                    .count();
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::StreamRng;
    use rand::SeedableRng;

    /// `packets` packets of `per` ordinary tokens each; token values encode
    /// (packet, offset) so provenance is visible.
    fn flow(tag: u32, packets: usize, per: usize) -> TokenSeq {
        let mut s = TokenSeq::default();
        for p in 0..packets {
            for k in 0..per {
                s.push(1000 + tag * 100 + p as u32 * 10 + k as u32, k == 0, p as u8 + 1);
            }
            s.push(PKT, false, p as u8 + 1);
        }
        s.push(END, false, 0);
        s
    }

    #[test]
    fn msp_round_trips_and_numbers_sentinels() {
        let seq = flow(1, 3, 12);
        let mut rng = StreamRng::seed_from_u64(7);
        let (masked, ann) = sample_msp(&seq, &mut rng);
        assert_eq!(unmask(&masked.ids, &ann), seq.ids);
        let sentinels: Vec<u32> = masked.ids.iter().copied().filter(|&i| crate::tokenizer::is_sentinel(i)).collect();
        let expect: Vec<u32> = (0..ann.spans.len()).map(sentinel).collect();
        assert_eq!(sentinels, expect);
        assert_eq!(*ann.decoder_target.last().unwrap(), END);
        assert!(ann.spans.iter().all(|s| (1..=5).contains(&s.len)));
        for s in &ann.spans {
            assert!(seq.ids[s.start..s.start + s.len].iter().all(|&id| !is_reserved(id)));
        }
    }

    #[test]
    fn msp_forces_a_span_on_a_single_token() {
        let mut seq = TokenSeq::default();
        seq.push(2000, false, 1);
        seq.push(PKT, false, 1);
        seq.push(END, false, 0);
        for seed in 0..20 {
            let mut rng = StreamRng::seed_from_u64(seed);
            let (masked, ann) = sample_msp(&seq, &mut rng);
            assert_eq!(ann.spans.len(), 1);
            assert_eq!(masked.ids, vec![sentinel(0), PKT, END]);
            assert_eq!(ann.decoder_target, vec![sentinel(0), 2000, END]);
        }
    }

    #[test]
    fn forty_token_sequence_masks_a_plausible_fraction() {
        let seq = flow(2, 1, 40);
        let mut rng = StreamRng::seed_from_u64(0);
        let (_, ann) = sample_msp(&seq, &mut rng);
        let masked: usize = ann.spans.iter().map(|s| s.len).sum();
        let frac = masked as f64 / 40.0;
        assert!((0.05..=0.30).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn permutation_bookkeeping() {
        let ann = PopAnnotation::from_permutation(vec![2, 3, 1]);
        assert_eq!(ann.same_position, vec![false, false, false]);
        assert_eq!(ann.original_position, vec![3, 1, 2]);
        assert!(ann.applied);
        let id = PopAnnotation::identity(3);
        assert_eq!(id.same_position, vec![true; 3]);
        assert_eq!(id.original_position, vec![1, 2, 3]);

        let seq = flow(0, 3, 2);
        let shuffled = apply_permutation(&seq, &[2, 3, 1]);
        // slot 1 now holds original packet 3
        assert_eq!(shuffled.ids[0], 1000 + 20);
        assert_eq!(shuffled.ids[3], 1000);
        assert_eq!(shuffled.packet_ids[0], 1);
        assert_eq!(shuffled.len(), seq.len());
    }

    #[test]
    fn non_identity_permutation_counts() {
        assert_eq!(non_identity_permutations(2), vec![vec![2, 1]]);
        assert_eq!(non_identity_permutations(3).len(), 5);
    }

    #[test]
    fn recombination_takes_partner_second_half() {
        let a = flow(1, 2, 2);
        let b = flow(2, 2, 2);
        let r = recombine(&a, &b);
        let (segs, _) = packet_segments(&r);
        assert_eq!(segs.len(), 2);
        assert_eq!(r.ids[0], 1100);
        assert_eq!(r.ids[3], 1210);
        assert_eq!(r.packet_ids[3], 2);
    }

    #[test]
    fn htp_guard() {
        let flows = vec![flow(0, 2, 2), flow(1, 2, 2)];
        let s = SeedStreams::new(0);
        assert!(matches!(
            sample_htp(&flows, 0.3, &s, &[true, true]),
            Err(CorpusError::NotEnoughFlows { available: 0 })
        ));
    }

    #[test]
    fn corpus_exclusivity_and_determinism() {
        let flows: Vec<TokenSeq> = (0..100).map(|i| flow(i % 50, 3, 4)).collect();
        let cfg = CorpusConfig::new(0);
        let a = build_corpus(&flows, &cfg).unwrap();
        let b = build_corpus(&flows, &cfg).unwrap();
        assert_eq!(a, b);
        for ex in &a {
            assert!(!(ex.pop.applied && ex.htp.applied));
            if ex.pop.applied {
                assert!(ex.z);
            }
            assert_eq!(ex.z, ex.htp.label == HtpLabel::Homologous);
        }
    }

    #[test]
    fn unshuffled_flow_is_identity() {
        let flows: Vec<TokenSeq> = (0..50).map(|i| flow(i, 3, 2)).collect();
        let out = sample_pop(&flows, 0.15, &SeedStreams::new(3)).unwrap();
        for ((seq, ann), orig) in out.iter().zip(&flows) {
            if !ann.applied {
                assert_eq!(seq, orig);
                assert_eq!(ann.original_position, vec![1, 2, 3]);
            }
        }
    }
}
