use super::batch::{Batch, BatchItem};
use super::net::{forward, Mode};
use super::params::ModelParams;
use super::tensor::Scalar;
use super::ModelError;
use crate::tokenizer::is_reserved;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCounts {
    pub correct: usize,
    pub total: usize,
}

impl EvalCounts {
    pub fn accuracy(&self) -> Result<f64, ModelError> {
        if self.total == 0 {
            return Err(ModelError::EmptyEvalSet);
        }
        Ok(self.correct as f64 / self.total as f64)
    }
}

fn for_each_batch<F: Scalar>(
    params: &ModelParams<F>,
    items: &[BatchItem],
    batch_size: usize,
    mut visit: impl FnMut(&Batch, &super::net::Forward<'_, F>),
) -> Result<(), ModelError> {
    for chunk in items.chunks(batch_size.max(1)) {
        let batch = Batch::new(chunk);
        let f = forward(params, &batch, Mode::Eval)?;
        visit(&batch, &f);
    }
    Ok(())
}

/// Teacher-forced argmax accuracy over masked-span target tokens.
///
/// Reserved targets (sentinels, `</s>`) are not scored, so the figure only
/// reflects recovered hex content.
pub fn msp_token_accuracy<F: Scalar>(
    params: &ModelParams<F>,
    items: &[BatchItem],
    batch_size: usize,
) -> Result<EvalCounts, ModelError> {
    let mut counts = EvalCounts::default();
    for_each_batch(params, items, batch_size, |batch, f| {
        let logits = f.tape.value(f.lm_logits);
        for (r, &t) in batch.dec_target.iter().enumerate() {
            if !is_reserved(t) {
                counts.total += 1;
                counts.correct += usize::from(logits.argmax_row(r) == t as usize);
            }
        }
    })?;
    if counts.total == 0 {
        return Err(ModelError::EmptyEvalSet);
    }
    Ok(counts)
}

/// Argmax accuracy of the 3-way position head over `<pkt>` slots of examples with `z`.
pub fn pop_accuracy<F: Scalar>(
    params: &ModelParams<F>,
    items: &[BatchItem],
    batch_size: usize,
) -> Result<EvalCounts, ModelError> {
    let mut counts = EvalCounts::default();
    for_each_batch(params, items, batch_size, |batch, f| {
        let logits = f.tape.value(f.pop_logits);
        for (r, &(m, _, label)) in batch.pop_slots.iter().enumerate() {
            if batch.z[m] {
                counts.total += 1;
                counts.correct += usize::from(logits.argmax_row(r) == label as usize);
            }
        }
    })?;
    if counts.total == 0 {
        return Err(ModelError::EmptyEvalSet);
    }
    Ok(counts)
}
