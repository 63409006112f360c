//! Prompted fine-tuning, greedy prediction and evaluation.
//!
//! A prompt is `[task description] <tsk> [traffic] </s>`; the description is
//! the hex of its UTF-8 text. Labels are emitted the same way: the decoder
//! learns to write the hex of the label text followed by `</s>`, so no token
//! is reserved for any class.

mod dataset;
pub mod metrics;
mod report;

use serde::{Deserialize, Serialize};

pub use dataset::{
    generation_examples, read_dataset, split_train_test, write_dataset, DatasetRecord, HeaderField,
};
pub use metrics::{accuracy, distribution_report, dr, jsd, macro_f1, tvd, CdfRow, TopkRow, Value, ValueKind};
pub use report::{evaluate, write_report_csvs, EvalReport};

use crate::ingest::{Granularity, HexUnit, IngestError};
use crate::model::{BatchItem, LossRecord, ModelError, ModelParams, Scalar, TrainConfig, Trainer};
use crate::model::{forward, Batch, Mode};
use crate::tokenizer::{decode_hex, encode, TokenSeq, TokenizerError, Vocabulary, END, TSK};

/// Greedy decoding stops here if no `</s>` appears.
pub const MAX_DECODE_LEN: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum FinetuneError {
    #[error("task granularity {task:?} does not match unit granularity {unit:?}")]
    GranularityMismatch { task: Granularity, unit: Granularity },
    #[error("task description is empty")]
    EmptyDescription,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{preds} predictions for {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("distribution sums to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("empty input list")]
    EmptyList,
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("dataset line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Understanding,
    Generation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    pub description_text: String,
    /// Class names; understanding tasks only.
    #[serde(default)]
    pub label_space: Vec<String>,
    /// Generated header field; generation tasks only.
    #[serde(default)]
    pub field: Option<HeaderField>,
    pub granularity: Granularity,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), FinetuneError> {
        if self.description_text.is_empty() {
            return Err(FinetuneError::EmptyDescription);
        }
        match self.kind {
            TaskKind::Understanding if self.label_space.is_empty() => {
                Err(FinetuneError::InvalidTask(format!("{}: understanding task needs a label space", self.name)))
            }
            TaskKind::Generation if self.field.is_none() => {
                Err(FinetuneError::InvalidTask(format!("{}: generation task needs a field", self.name)))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub input_unit: HexUnit,
    pub label: String,
}

/// `[description] <tsk> [traffic] </s>`; headers are kept only for understanding tasks.
pub fn build_prompt(task: &TaskSpec, unit: &HexUnit, vocab: &Vocabulary) -> Result<TokenSeq, FinetuneError> {
    if task.description_text.is_empty() {
        return Err(FinetuneError::EmptyDescription);
    }
    if task.granularity != unit.granularity {
        return Err(FinetuneError::GranularityMismatch {
            task: task.granularity,
            unit: unit.granularity,
        });
    }
    let mut seq = TokenSeq::default();
    for id in vocab.tokenize_hex(&hex::encode(task.description_text.as_bytes()))? {
        seq.push(id, false, 0);
    }
    seq.push(TSK, false, 0);
    let traffic = encode(vocab, unit, task.kind == TaskKind::Understanding)?;
    seq.extend_from(&traffic, traffic.positions());
    Ok(seq)
}

/// Decoder target for `label`: hex of its text, then `</s>`.
pub fn label_target(vocab: &Vocabulary, label: &str) -> Result<Vec<u32>, FinetuneError> {
    let mut ids = vocab.tokenize_hex(&hex::encode(label.as_bytes()))?;
    ids.push(END);
    Ok(ids)
}

/// Inverse of [`label_target`] up to word padding: trailing NULs are dropped.
pub fn decode_label(vocab: &Vocabulary, ids: &[u32]) -> Result<String, FinetuneError> {
    let end = ids.iter().position(|&id| id == END).unwrap_or(ids.len());
    let mut digits = decode_hex(vocab, &ids[..end])?;
    if digits.len() % 2 == 1 {
        digits.push('0');
    }
    let mut bytes = hex::decode(&digits).unwrap_or_default();
    while bytes.last() == Some(&0) {
        bytes.pop();
    }
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

pub fn training_items(
    task: &TaskSpec,
    dataset: &[LabeledExample],
    vocab: &Vocabulary,
) -> Result<Vec<BatchItem>, FinetuneError> {
    dataset
        .iter()
        .map(|ex| {
            Ok(BatchItem {
                encoder: build_prompt(task, &ex.input_unit, vocab)?,
                target: label_target(vocab, &ex.label)?,
                ..BatchItem::default()
            })
        })
        .collect()
}

/// Trains for `epochs` passes; returns the tuned parameters and one loss record per update.
pub fn finetune<F: Scalar>(
    params: ModelParams<F>,
    dataset: &[LabeledExample],
    task: &TaskSpec,
    vocab: &Vocabulary,
    config: &TrainConfig,
    epochs: usize,
) -> Result<(ModelParams<F>, Vec<LossRecord>), FinetuneError> {
    task.validate()?;
    if dataset.is_empty() {
        return Err(FinetuneError::EmptyDataset);
    }
    let items = training_items(task, dataset, vocab)?;
    let per_update = config.batch_size * config.grad_accum;
    let steps = (epochs * items.len().div_ceil(per_update)) as u64;
    let mut trainer = Trainer::new(params, config.clone())?;
    let mut log = Vec::new();
    trainer.fit(&items, steps, |r| log.push(*r))?;
    Ok((trainer.params, log))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub text: String,
    pub ids: Vec<u32>,
    /// The length cap was hit before `</s>`.
    pub truncated: bool,
}

/// Greedy decoding of every prompt, `batch_size` prompts at a time.
pub fn predict_batch<F: Scalar>(
    params: &ModelParams<F>,
    vocab: &Vocabulary,
    prompts: &[TokenSeq],
    batch_size: usize,
) -> Result<Vec<Prediction>, FinetuneError> {
    let mut out = Vec::with_capacity(prompts.len());
    for chunk in prompts.chunks(batch_size.max(1)) {
        let mut generated: Vec<Vec<u32>> = vec![Vec::new(); chunk.len()];
        let mut done = vec![false; chunk.len()];
        for _ in 0..MAX_DECODE_LEN {
            if done.iter().all(|&d| d) {
                break;
            }
            // The trailing placeholder only fills the slot whose logits are read.
            let items: Vec<BatchItem> = chunk
                .iter()
                .zip(&generated)
                .map(|(p, g)| BatchItem {
                    encoder: p.clone(),
                    target: g.iter().copied().chain([END]).collect(),
                    ..BatchItem::default()
                })
                .collect();
            let batch = Batch::new(&items);
            let f = forward(params, &batch, Mode::Eval)?;
            let logits = f.tape.value(f.lm_logits);
            for (m, g) in generated.iter_mut().enumerate() {
                if done[m] {
                    continue;
                }
                let next = logits.argmax_row(m * batch.dec_len + g.len()) as u32;
                g.push(next);
                done[m] = next == END;
            }
        }
        for (g, d) in generated.into_iter().zip(done) {
            out.push(Prediction {
                text: decode_label(vocab, &g)?,
                ids: g,
                truncated: !d,
            });
        }
    }
    Ok(out)
}

pub fn predict<F: Scalar>(params: &ModelParams<F>, vocab: &Vocabulary, prompt: &TokenSeq) -> Result<Prediction, FinetuneError> {
    Ok(predict_batch(params, vocab, std::slice::from_ref(prompt), 1)?.remove(0))
}
