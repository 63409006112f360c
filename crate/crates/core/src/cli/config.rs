//! TOML run configuration. Every section is optional; command-line flags win.
//!
//! ```toml
//! seed = 7
//!
//! [paths]            # defaults for --archive, --vocab, --corpus, --checkpoint, --dataset
//! vocab = "work/vocab.txt"
//!
//! [tokenizer]
//! scheme = "wordpiece_pd"
//! size = 4096
//!
//! [corpus]
//! pop_rate = 0.15
//! htp_rate = 0.30
//! max_payload_bytes = 64
//!
//! [model]            # ModelConfig fields; vocab_size comes from the vocabulary
//! d_model = 64
//!
//! [train]            # pre-training TrainConfig
//! total_steps = 500
//!
//! [finetune]         # TrainConfig fields plus epochs
//! epochs = 10
//! lr = 3e-5
//!
//! [sweep]
//! alpha = [0.1, 0.2]
//! beta = [0.1, 0.2]
//!
//! [[tasks]]
//! name = "toy"
//! kind = "understanding"
//! description_text = "classify"
//! label_space = ["benign", "malware"]
//! granularity = "flow"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::corpus::{DEFAULT_HTP_RATE, DEFAULT_POP_RATE};
use crate::finetune::TaskSpec;
use crate::model::{ModelConfig, TrainConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: PathsConfig,
    pub tokenizer: TokenizerConfig,
    pub corpus: CorpusSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub finetune: FinetuneSection,
    pub sweep: Option<SweepGrid>,
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub archive: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub scheme: String,
    pub size: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            scheme: "wordpiece_pd".into(),
            size: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub pop_rate: f64,
    pub htp_rate: f64,
    /// Payload bytes kept per packet before tokenization.
    pub max_payload_bytes: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            pop_rate: DEFAULT_POP_RATE,
            htp_rate: DEFAULT_HTP_RATE,
            max_payload_bytes: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub eval_batch_size: usize,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection {
            epochs: 10,
            batch_size: 32,
            grad_accum: 1,
            lr: 3e-5,
            warmup_steps: 0,
            eval_batch_size: 32,
        }
    }
}

impl FinetuneSection {
    pub fn train_config(&self, epochs: usize, examples: usize) -> TrainConfig {
        let steps = (epochs * examples.div_ceil(self.batch_size.max(1) * self.grad_accum.max(1))) as u64;
        TrainConfig {
            batch_size: self.batch_size,
            grad_accum: self.grad_accum,
            lr: self.lr,
            total_steps: steps.max(self.warmup_steps),
            warmup_steps: self.warmup_steps,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn task(&self, name: &str) -> Result<&TaskSpec, CliError> {
        self.tasks.iter().find(|t| t.name == name).ok_or_else(|| {
            let known: Vec<&str> = self.tasks.iter().map(|t| t.name.as_str()).collect();
            CliError::Usage(format!("unknown task {name:?}; configured tasks: {known:?}"))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example() {
        let doc: String = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start().to_string() + "\n")
            .collect();
        let c: RunConfig = toml::from_str(&doc).unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.model.d_model, 64);
        assert_eq!(c.model.n_heads, ModelConfig::default().n_heads);
        assert_eq!(c.finetune.lr, 3e-5);
        assert_eq!(c.sweep.as_ref().unwrap().beta, vec![0.1, 0.2]);
        assert_eq!(c.task("toy").unwrap().label_space.len(), 2);
        assert!(c.task("nope").is_err());
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
    }
}
