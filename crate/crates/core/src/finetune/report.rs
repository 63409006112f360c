use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, distribution_report, dr, empirical, jsd, macro_f1, tvd, CdfRow, TopkRow, Value};
use super::{build_prompt, predict_batch, FinetuneError, LabeledExample, TaskKind, TaskSpec};
use crate::model::{ModelParams, Scalar};
use crate::tokenizer::Vocabulary;

/// Rows shown in the top-k table.
pub const TOP_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub kind: TaskKind,
    pub examples: usize,
    /// Predictions that hit the decode length cap.
    pub truncated: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jsd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tvd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dr: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub topk_table: Vec<TopkRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cdf_table: Vec<CdfRow>,
}

impl EvalReport {
    /// Scores `preds` against `golds` according to the task kind.
    pub fn from_predictions(
        task: &TaskSpec,
        golds: &[String],
        preds: &[String],
        truncated: usize,
    ) -> Result<EvalReport, FinetuneError> {
        let mut r = EvalReport {
            task: task.name.clone(),
            kind: task.kind,
            examples: golds.len(),
            truncated,
            accuracy: None,
            macro_f1: None,
            jsd: None,
            tvd: None,
            dr: None,
            topk_table: Vec::new(),
            cdf_table: Vec::new(),
        };
        match task.kind {
            TaskKind::Understanding => {
                r.accuracy = Some(accuracy(preds, golds)?);
                r.macro_f1 = Some(macro_f1(preds, golds, &task.label_space)?);
            }
            TaskKind::Generation => {
                let field = task
                    .field
                    .ok_or_else(|| FinetuneError::InvalidTask(format!("{}: generation task needs a field", task.name)))?;
                let real: Vec<Value> = golds.iter().map(|s| Value::parse(s)).collect();
                let generated: Vec<Value> = preds.iter().map(|s| Value::parse(s)).collect();
                let (p, q) = (empirical(&real)?, empirical(&generated)?);
                r.jsd = Some(jsd(&p, &q)?);
                r.tvd = Some(tvd(&p, &q)?);
                r.dr = Some(dr(preds, field.value_kind())?);
                let (topk, cdf) = distribution_report(golds, preds, TOP_K)?;
                r.topk_table = topk;
                r.cdf_table = cdf;
            }
        }
        Ok(r)
    }
}

/// Predicts every example greedily and scores the results.
pub fn evaluate<F: Scalar>(
    params: &ModelParams<F>,
    vocab: &Vocabulary,
    task: &TaskSpec,
    examples: &[LabeledExample],
    batch_size: usize,
) -> Result<(EvalReport, Vec<String>), FinetuneError> {
    task.validate()?;
    if examples.is_empty() {
        return Err(FinetuneError::EmptyDataset);
    }
    let prompts = examples
        .iter()
        .map(|ex| build_prompt(task, &ex.input_unit, vocab))
        .collect::<Result<Vec<_>, _>>()?;
    let preds = predict_batch(params, vocab, &prompts, batch_size)?;
    let truncated = preds.iter().filter(|p| p.truncated).count();
    let texts: Vec<String> = preds.into_iter().map(|p| p.text).collect();
    let golds: Vec<String> = examples.iter().map(|e| e.label.clone()).collect();
    Ok((EvalReport::from_predictions(task, &golds, &texts, truncated)?, texts))
}

/// Writes `topk.csv` and `cdf.csv` into `dir` (generation reports only).
pub fn write_report_csvs(dir: &Path, report: &EvalReport) -> Result<(), FinetuneError> {
    let csv_err = |e: csv::Error| FinetuneError::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_path(dir.join("topk.csv")).map_err(csv_err)?;
    for row in &report.topk_table {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("cdf.csv")).map_err(csv_err)?;
    for row in &report.cdf_table {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
