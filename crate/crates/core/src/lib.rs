//! Traffic foundation-model pipeline at desk scale.
//!
//! Raw pcap captures become anonymized hex session flows ([`ingest`]), hex is
//! tokenized ([`tokenizer`]), pre-training examples are synthesized for span
//! masking, packet-order and homologous-flow prediction ([`corpus`]), a small
//! encoder-decoder transformer is trained on the combined loss ([`model`]),
//! and prompted fine-tuning plus the evaluation metrics live in [`finetune`].
//! [`cli`] wires everything into the `lens` executable.

pub mod ingest;
pub mod tokenizer;
pub mod corpus;
pub mod finetune;
pub mod model;
pub mod seeding;
pub mod synth;
pub mod cli;
pub mod workspace;
