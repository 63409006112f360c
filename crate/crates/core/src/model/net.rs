use super::batch::Batch;
use super::params::{dropout_mask, AttnIdx, FfnIdx, ModelParams};
use super::tape::{AttnLayout, Tape, Var};
use super::tensor::{Mat, Scalar};
use super::ModelError;
use crate::seeding::{Purpose, SeedStreams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout masks come from substream `index` of the model seed.
    Train { dropout_stream: u64 },
    Eval,
}

/// Tape plus the handles of every output.
pub struct Forward<'p, F> {
    pub tape: Tape<'p, F>,
    pub enc_hidden: Var,
    pub dec_hidden: Var,
    /// `(size * dec_len) × vocab_size`.
    pub lm_logits: Var,
    /// One row per entry of `batch.pop_slots`.
    pub pop_logits: Var,
    /// One row per example in `htp_examples`.
    pub htp_logits: Var,
    pub htp_examples: Vec<usize>,
}

struct Ctx<'a, 'p, F> {
    tape: &'a mut Tape<'p, F>,
    dropout: Option<(f64, crate::seeding::StreamRng)>,
    heads: usize,
}

impl<F: Scalar> Ctx<'_, '_, F> {
    fn drop(&mut self, x: Var) -> Var {
        match &mut self.dropout {
            Some((p, rng)) if *p > 0.0 => {
                let len = self.tape.value(x).data.len();
                let mask = dropout_mask(len, *p, rng);
                self.tape.dropout(x, mask)
            }
            _ => x,
        }
    }

    fn linear(&mut self, x: Var, w: usize) -> Var {
        let w = self.tape.param(w);
        self.tape.matmul(x, w, false)
    }

    /// `x + Wo · attn(norm(x) Wq, kv Wk, kv Wv)`; `kv` defaults to the normed input.
    fn attn_block(&mut self, x: Var, p: AttnIdx, kv: Option<Var>, layout: AttnLayout) -> Var {
        let gain = self.tape.param(p.norm);
        let h = self.tape.rms_norm(x, gain);
        let src = kv.unwrap_or(h);
        let q = self.linear(h, p.wq);
        let k = self.linear(src, p.wk);
        let v = self.linear(src, p.wv);
        let a = self.tape.attention(q, k, v, layout);
        let o = self.linear(a, p.wo);
        let o = self.drop(o);
        self.tape.add(x, o)
    }

    fn ffn_block(&mut self, x: Var, p: FfnIdx) -> Var {
        let gain = self.tape.param(p.norm);
        let h = self.tape.rms_norm(x, gain);
        let u = self.linear(h, p.w1);
        let u = self.tape.gelu(u);
        let o = self.linear(u, p.w2);
        let o = self.drop(o);
        self.tape.add(x, o)
    }

    fn layout(&self, batch: &Batch, q_len: usize, k_len: usize, key_valid: &[bool], causal: bool) -> AttnLayout {
        AttnLayout {
            batch: batch.size,
            q_len,
            k_len,
            heads: self.heads,
            key_valid: key_valid.to_vec(),
            causal,
        }
    }
}

fn check_batch<F: Scalar>(params: &ModelParams<F>, batch: &Batch) -> Result<(), ModelError> {
    let c = &params.config;
    let len_ok = |name: &str, got: usize, want: usize| {
        if got == want {
            Ok(())
        } else {
            Err(ModelError::ShapeMismatch(format!("{name}: {got} entries, expected {want}")))
        }
    };
    let (enc, dec) = (batch.size * batch.enc_len, batch.size * batch.dec_len);
    len_ok("enc_ids", batch.enc_ids.len(), enc)?;
    len_ok("enc_valid", batch.enc_valid.len(), enc)?;
    len_ok("header_mask", batch.header_mask.len(), enc)?;
    len_ok("packet_ids", batch.packet_ids.len(), enc)?;
    len_ok("dec_input", batch.dec_input.len(), dec)?;
    len_ok("dec_target", batch.dec_target.len(), dec)?;
    len_ok("dec_valid", batch.dec_valid.len(), dec)?;
    len_ok("z", batch.z.len(), batch.size)?;
    len_ok("htp_labels", batch.htp_labels.len(), batch.size)?;
    len_ok("end_positions", batch.end_positions.len(), batch.size)?;
    let longest = batch.enc_len.max(batch.dec_len);
    if longest > c.max_positions {
        return Err(ModelError::PositionOverflow {
            len: longest,
            max: c.max_positions,
        });
    }
    for &id in batch.enc_ids.iter().chain(&batch.dec_input).chain(&batch.dec_target) {
        if id as usize >= c.vocab_size {
            return Err(ModelError::IdOutOfRange {
                id,
                size: c.vocab_size,
            });
        }
    }
    if let Some(&id) = batch.packet_ids.iter().find(|&&p| p as usize > c.max_packets) {
        return Err(ModelError::PacketIdOutOfRange {
            id,
            max: c.max_packets,
        });
    }
    Ok(())
}

fn encoder_embedding<F: Scalar>(tape: &mut Tape<'_, F>, params: &ModelParams<F>, batch: &Batch) -> Var {
    let l = &params.layout;
    let n = batch.size * batch.enc_len;
    let tok = tape.param(l.token);
    let pos = tape.param(l.position);
    let hdr = tape.param(l.header);
    let pkt = tape.param(l.packet);
    let tok = tape.gather(tok, batch.enc_ids.iter().map(|&i| i as usize).collect());
    let pos = tape.gather(pos, (0..n).map(|r| r % batch.enc_len).collect());
    let hdr = tape.gather(hdr, batch.header_mask.iter().map(|&h| usize::from(h)).collect());
    let pkt = tape.gather(pkt, batch.packet_ids.iter().map(|&p| p as usize).collect());
    let x = tape.add(tok, pos);
    let x = tape.add(x, hdr);
    tape.add(x, pkt)
}

/// Summed token, position, header and packet embeddings (no dropout).
pub fn embed<F: Scalar>(params: &ModelParams<F>, batch: &Batch) -> Result<Mat<F>, ModelError> {
    check_batch(params, batch)?;
    let mut tape = Tape::new(&params.tensors);
    let x = encoder_embedding(&mut tape, params, batch);
    Ok(tape.value(x).clone())
}

/// Runs encoder and decoder with teacher forcing on `batch.dec_input`.
pub fn forward<'p, F: Scalar>(params: &'p ModelParams<F>, batch: &Batch, mode: Mode) -> Result<Forward<'p, F>, ModelError> {
    check_batch(params, batch)?;
    let c = &params.config;
    let l = &params.layout;
    let mut tape = Tape::new(&params.tensors);
    let dropout = match mode {
        Mode::Train { dropout_stream } => Some((c.dropout, SeedStreams::new(c.seed).stream(dropout_stream, Purpose::Dropout))),
        Mode::Eval => None,
    };
    let mut cx = Ctx {
        tape: &mut tape,
        dropout,
        heads: c.n_heads,
    };

    let x = encoder_embedding(cx.tape, params, batch);
    let mut x = cx.drop(x);
    let (le, ld) = (batch.enc_len, batch.dec_len);
    for layer in &l.enc {
        let lay = cx.layout(batch, le, le, &batch.enc_valid, false);
        x = cx.attn_block(x, layer.attn, None, lay);
        x = cx.ffn_block(x, layer.ffn);
    }
    let g = cx.tape.param(l.enc_norm);
    let enc_hidden = cx.tape.rms_norm(x, g);

    let tok = cx.tape.param(l.token);
    let pos = cx.tape.param(l.position);
    let y_tok = cx.tape.gather(tok, batch.dec_input.iter().map(|&i| i as usize).collect());
    let y_pos = cx.tape.gather(pos, (0..batch.size * ld).map(|r| r % ld).collect());
    let y = cx.tape.add(y_tok, y_pos);
    let mut y = cx.drop(y);
    for layer in &l.dec {
        let lay = cx.layout(batch, ld, ld, &batch.dec_valid, true);
        y = cx.attn_block(y, layer.self_attn, None, lay);
        let lay = cx.layout(batch, ld, le, &batch.enc_valid, false);
        y = cx.attn_block(y, layer.cross_attn, Some(enc_hidden), lay);
        y = cx.ffn_block(y, layer.ffn);
    }
    let g = cx.tape.param(l.dec_norm);
    let dec_hidden = cx.tape.rms_norm(y, g);
    let lm_logits = match l.lm_head {
        Some(w) => cx.linear(dec_hidden, w),
        None => {
            let t = cx.tape.param(l.token);
            cx.tape.matmul(dec_hidden, t, true)
        }
    };

    let pop_rows = batch.pop_slots.iter().map(|&(m, p, _)| m * le + p).collect();
    let pop_h = cx.tape.select_rows(enc_hidden, pop_rows);
    let pop_logits = cx.linear(pop_h, l.pop_head);

    let htp_examples: Vec<usize> = (0..batch.size).filter(|&m| batch.end_positions[m].is_some()).collect();
    let htp_rows = htp_examples
        .iter()
        .map(|&m| m * le + batch.end_positions[m].unwrap())
        .collect();
    let htp_h = cx.tape.select_rows(enc_hidden, htp_rows);
    let htp_logits = cx.linear(htp_h, l.htp_head);

    Ok(Forward {
        tape,
        enc_hidden,
        dec_hidden,
        lm_logits,
        pop_logits,
        htp_logits,
        htp_examples,
    })
}
