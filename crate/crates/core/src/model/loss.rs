use serde::{Deserialize, Serialize};

use super::batch::Batch;
use super::net::Forward;
use super::tape::{CeTarget, Tape, Var};
use super::tensor::Scalar;
use super::ModelError;
use crate::tokenizer::PAD;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub msp: f64,
    pub pop: f64,
    pub htp: f64,
    pub total: f64,
}

/// Mean of `weight`-free cross-entropy terms; an empty set is exactly 0.
fn mean_ce<F: Scalar>(tape: &mut Tape<'_, F>, logits: Var, targets: Vec<(usize, usize)>) -> Var {
    if targets.is_empty() {
        return tape.weighted_sum(Vec::new());
    }
    let w = F::from_f64(1.0 / targets.len() as f64);
    let targets = targets
        .into_iter()
        .map(|(row, class)| CeTarget { row, class, weight: w })
        .collect();
    tape.cross_entropy(logits, targets)
}

/// Mean negative log-likelihood over non-`<pad>` decoder targets.
pub fn loss_msp<F: Scalar>(tape: &mut Tape<'_, F>, lm_logits: Var, batch: &Batch) -> Var {
    let targets = batch
        .dec_target
        .iter()
        .enumerate()
        .filter(|(_, &t)| t != PAD)
        .map(|(r, &t)| (r, t as usize))
        .collect();
    mean_ce(tape, lm_logits, targets)
}

/// Mean 3-way cross-entropy over the `<pkt>` slots of examples with `z`.
pub fn loss_pop<F: Scalar>(tape: &mut Tape<'_, F>, pop_logits: Var, batch: &Batch) -> Var {
    let targets = batch
        .pop_slots
        .iter()
        .enumerate()
        .filter(|(_, &(m, _, _))| batch.z[m])
        .map(|(r, &(_, _, label))| (r, label as usize))
        .collect();
    mean_ce(tape, pop_logits, targets)
}

/// Mean 2-way cross-entropy over examples that carry an HTP label.
pub fn loss_htp<F: Scalar>(tape: &mut Tape<'_, F>, htp_logits: Var, htp_examples: &[usize], batch: &Batch) -> Var {
    let targets = htp_examples
        .iter()
        .enumerate()
        .filter_map(|(r, &m)| batch.htp_labels[m].map(|y| (r, y as usize)))
        .collect();
    mean_ce(tape, htp_logits, targets)
}

/// `msp + alpha * pop + beta * htp`.
pub fn total_loss(msp: f64, pop: f64, htp: f64, alpha: f64, beta: f64) -> Result<f64, ModelError> {
    let total = msp + alpha * pop + beta * htp;
    if !total.is_finite() {
        return Err(ModelError::NonFiniteLoss {
            msp,
            pop,
            htp,
            grad_norms: String::new(),
        });
    }
    Ok(total)
}

/// Adds the three losses and their weighted sum to the tape.
pub(crate) fn objective<F: Scalar>(f: &mut Forward<'_, F>, batch: &Batch, alpha: f64, beta: f64) -> (Var, LossParts) {
    let msp = loss_msp(&mut f.tape, f.lm_logits, batch);
    let pop = loss_pop(&mut f.tape, f.pop_logits, batch);
    let htp = loss_htp(&mut f.tape, f.htp_logits, &f.htp_examples, batch);
    let total = f.tape.weighted_sum(vec![
        (msp, F::one()),
        (pop, F::from_f64(alpha)),
        (htp, F::from_f64(beta)),
    ]);
    let v = |x: Var| f.tape.value(x).data[0].as_f64();
    let parts = LossParts {
        msp: v(msp),
        pop: v(pop),
        htp: v(htp),
        total: v(total),
    };
    (total, parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tensor::Mat;
    use crate::tokenizer::TokenSeq;

    fn batch_with(z: Vec<bool>, slots: Vec<(usize, usize, u8)>, htp: Vec<Option<u8>>) -> Batch {
        let n = z.len();
        let mut b = Batch::new(&vec![crate::model::BatchItem::default(); n]);
        b.z = z;
        b.pop_slots = slots;
        b.htp_labels = htp;
        b
    }

    #[test]
    fn uniform_logits_give_log_class_count() {
        let params: Vec<Mat<f64>> = vec![];
        let mut t = Tape::new(&params);
        let b = batch_with(vec![true, true], vec![(0, 1, 0), (0, 3, 2), (1, 1, 1)], vec![Some(0), Some(1)]);
        let pop = t.constant(Mat::zeros(3, 3));
        let htp = t.constant(Mat::zeros(2, 2));
        let lp = loss_pop(&mut t, pop, &b);
        let lh = loss_htp(&mut t, htp, &[0, 1], &b);
        assert!((t.value(lp).data[0] - 3f64.ln()).abs() < 1e-15);
        assert!((t.value(lh).data[0] - 2f64.ln()).abs() < 1e-15);

        let mut b = Batch::new(&[crate::model::BatchItem {
            encoder: TokenSeq::default(),
            target: vec![3, 4, 5],
            ..Default::default()
        }]);
        b.dec_target[1] = PAD;
        let lm = t.constant(Mat::zeros(3, 50));
        let lm = loss_msp(&mut t, lm, &b);
        assert!((t.value(lm).data[0] - 50f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn gates_and_empty_sets_are_zero() {
        let params: Vec<Mat<f64>> = vec![];
        let mut t = Tape::new(&params);
        let b = batch_with(vec![false, false], vec![(0, 1, 0), (1, 1, 1)], vec![None, None]);
        let pop = t.constant(Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let htp = t.constant(Mat::from_vec(2, 2, vec![1.0, -1.0, 0.5, 2.0]));
        let lp = loss_pop(&mut t, pop, &b);
        let lh = loss_htp(&mut t, htp, &[0, 1], &b);
        assert_eq!(t.value(lp).data[0], 0.0);
        assert_eq!(t.value(lh).data[0], 0.0);
    }

    #[test]
    fn mixed_pop_batch_matches_elementwise_sum() {
        let params: Vec<Mat<f64>> = vec![];
        let mut t = Tape::new(&params);
        let logits = [[0.3, -1.2, 2.0], [1.0, 1.0, 0.0], [-0.5, 0.25, 0.75]];
        let slots = vec![(0, 1, 2), (1, 1, 0), (1, 4, 1)];
        let b = batch_with(vec![false, true], slots, vec![None, None]);
        let pop = t.constant(Mat::from_vec(3, 3, logits.concat()));
        let lp = loss_pop(&mut t, pop, &b);
        let nll = |row: [f64; 3], y: usize| -(row[y].exp() / row.iter().map(|v| v.exp()).sum::<f64>()).ln();
        let expect = (nll(logits[1], 0) + nll(logits[2], 1)) / 2.0;
        assert!((t.value(lp).data[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn total_is_exact_and_guarded() {
        assert_eq!(total_loss(1.0, 2.0, 3.0, 0.2, 0.2).unwrap(), 2.0);
        assert_eq!(total_loss(1.5, 2.0, 3.0, 0.0, 0.0).unwrap(), 1.5);
        assert!(matches!(total_loss(f64::NAN, 0.0, 0.0, 0.2, 0.2), Err(ModelError::NonFiniteLoss { .. })));
    }
}
