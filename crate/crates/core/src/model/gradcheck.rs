use rand::Rng;

use super::batch::Batch;
use super::loss::objective;
use super::net::{forward, Mode};
use super::params::ModelParams;
use super::ModelError;
use crate::seeding::{Purpose, SeedStreams};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// `(tensor name, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    /// Every tensor that contributed at least one checked coordinate.
    pub tensors_covered: Vec<String>,
}

fn total<'p>(params: &'p ModelParams<f64>, batch: &Batch) -> Result<f64, ModelError> {
    let c = &params.config;
    let mut f = forward(params, batch, Mode::Eval)?;
    Ok(objective(&mut f, batch, c.alpha, c.beta).1.total)
}

/// Compares analytic gradients with central differences of step `epsilon`.
///
/// At least `per_tensor` coordinates are drawn from every tensor. Rows of the
/// embedding tables are taken from ids the batch actually uses, so the checked
/// gradients are not trivially zero. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-6)`; dropout is off.
pub fn grad_check(
    params: &ModelParams<f64>,
    batch: &Batch,
    epsilon: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport, ModelError> {
    let c = &params.config;
    let mut f = forward(params, batch, Mode::Eval)?;
    let (root, _) = objective(&mut f, batch, c.alpha, c.beta);
    let grads = f.tape.backward(root);
    drop(f);

    let l = &params.layout;
    let used_rows = |t: usize| -> Option<Vec<usize>> {
        let mut rows: Vec<usize> = if t == l.token {
            batch.enc_ids.iter().chain(&batch.dec_input).map(|&i| i as usize).collect()
        } else if t == l.header {
            batch.header_mask.iter().map(|&h| usize::from(h)).collect()
        } else if t == l.packet {
            batch.packet_ids.iter().map(|&p| p as usize).collect()
        } else if t == l.position {
            (0..batch.enc_len.max(batch.dec_len)).collect()
        } else {
            return None;
        };
        rows.sort_unstable();
        rows.dedup();
        Some(rows)
    };

    let mut rng = SeedStreams::new(seed).stream(0, Purpose::Synth);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates: 0,
        worst: None,
        tensors_covered: Vec::new(),
    };
    for t in 0..params.tensors.len() {
        let (rows, cols) = (params.tensors[t].rows, params.tensors[t].cols);
        let candidate_rows = used_rows(t).unwrap_or_else(|| (0..rows).collect());
        if candidate_rows.is_empty() {
            continue;
        }
        for _ in 0..per_tensor {
            let r = candidate_rows[rng.random_range(0..candidate_rows.len())];
            let idx = r * cols + rng.random_range(0..cols);
            let orig = work.tensors[t].data[idx];
            work.tensors[t].data[idx] = orig + epsilon;
            let up = total(&work, batch)?;
            work.tensors[t].data[idx] = orig - epsilon;
            let down = total(&work, batch)?;
            work.tensors[t].data[idx] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let analytic = grads[t].as_ref().map_or(0.0, |g| g.data[idx]);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            report.coordinates += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((params.names[t].clone(), idx, analytic, numeric));
                }
            }
        }
        report.tensors_covered.push(params.names[t].clone());
    }
    Ok(report)
}
