use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::{Mat, Scalar};
use super::ModelError;
use crate::seeding::{Purpose, SeedStreams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub max_packets: usize,
    pub dropout: f64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    /// Reuse `token_table` as the output projection.
    pub tie_lm_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 128,
            n_layers_enc: 2,
            n_layers_dec: 2,
            n_heads: 4,
            d_ffn: 512,
            vocab_size: 0,
            max_positions: 512,
            max_packets: 3,
            dropout: 0.1,
            alpha: 0.2,
            beta: 0.2,
            seed: 0,
            tie_lm_head: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.vocab_size == 0 || self.max_positions == 0 || self.d_ffn == 0 {
            return bad("vocab_size, max_positions and d_ffn must be positive".into());
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad(format!("alpha {} and beta {} must be non-negative", self.alpha, self.beta));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnIdx {
    pub norm: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FfnIdx {
    pub norm: usize,
    pub w1: usize,
    pub w2: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncIdx {
    pub attn: AttnIdx,
    pub ffn: FfnIdx,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecIdx {
    pub self_attn: AttnIdx,
    pub cross_attn: AttnIdx,
    pub ffn: FfnIdx,
}

/// Positions of every tensor inside [`ModelParams::tensors`].
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub token: usize,
    pub position: usize,
    pub header: usize,
    pub packet: usize,
    pub enc: Vec<EncIdx>,
    pub enc_norm: usize,
    pub dec: Vec<DecIdx>,
    pub dec_norm: usize,
    pub lm_head: Option<usize>,
    pub pop_head: usize,
    pub htp_head: usize,
}

enum Init {
    Normal(f64),
    Ones,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<(usize, usize, Init)>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.names.push(name);
        self.shapes.push((rows, cols, init));
        self.names.len() - 1
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIdx {
        let s = 1.0 / (d as f64).sqrt();
        AttnIdx {
            norm: self.add(format!("{prefix}.norm"), 1, d, Init::Ones),
            wq: self.add(format!("{prefix}.wq"), d, d, Init::Normal(s)),
            wk: self.add(format!("{prefix}.wk"), d, d, Init::Normal(s)),
            wv: self.add(format!("{prefix}.wv"), d, d, Init::Normal(s)),
            wo: self.add(format!("{prefix}.wo"), d, d, Init::Normal(s)),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> FfnIdx {
        FfnIdx {
            norm: self.add(format!("{prefix}.norm"), 1, d, Init::Ones),
            w1: self.add(format!("{prefix}.w1"), d, f, Init::Normal(1.0 / (d as f64).sqrt())),
            w2: self.add(format!("{prefix}.w2"), f, d, Init::Normal(1.0 / (f as f64).sqrt())),
        }
    }
}

fn build_layout(c: &ModelConfig) -> (Layout, Builder) {
    let d = c.d_model;
    let emb = Init::Normal(1.0);
    let mut b = Builder {
        names: Vec::new(),
        shapes: Vec::new(),
    };
    let token = b.add("token_table".into(), c.vocab_size, d, emb);
    let position = b.add("position_table".into(), c.max_positions, d, Init::Normal(1.0));
    let header = b.add("header_table".into(), 2, d, Init::Normal(1.0));
    let packet = b.add("packet_table".into(), c.max_packets + 1, d, Init::Normal(1.0));
    let enc = (0..c.n_layers_enc)
        .map(|i| EncIdx {
            attn: b.attn(&format!("enc.{i}.attn"), d),
            ffn: b.ffn(&format!("enc.{i}.ffn"), d, c.d_ffn),
        })
        .collect();
    let enc_norm = b.add("enc.final_norm".into(), 1, d, Init::Ones);
    let dec = (0..c.n_layers_dec)
        .map(|i| DecIdx {
            self_attn: b.attn(&format!("dec.{i}.self_attn"), d),
            cross_attn: b.attn(&format!("dec.{i}.cross_attn"), d),
            ffn: b.ffn(&format!("dec.{i}.ffn"), d, c.d_ffn),
        })
        .collect();
    let dec_norm = b.add("dec.final_norm".into(), 1, d, Init::Ones);
    let head_std = 1.0 / (d as f64).sqrt();
    let lm_head = (!c.tie_lm_head).then(|| b.add("lm_head".into(), d, c.vocab_size, Init::Normal(head_std)));
    let pop_head = b.add("pop_head".into(), d, 3, Init::Normal(head_std));
    let htp_head = b.add("htp_head".into(), d, 2, Init::Normal(head_std));
    (
        Layout {
            token,
            position,
            header,
            packet,
            enc,
            enc_norm,
            dec,
            dec_norm,
            lm_head,
            pop_head,
            htp_head,
        },
        b,
    )
}

/// All trainable tensors, named and stored in checkpoint order.
#[derive(Debug, Clone)]
pub struct ModelParams<F> {
    pub config: ModelConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Mat<F>>,
    pub(crate) layout: Layout,
}

impl<F: Scalar> ModelParams<F> {
    /// Fresh parameters drawn from the `Init` substream of `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, b) = build_layout(config);
        let streams = SeedStreams::new(config.seed);
        let tensors = b
            .shapes
            .iter()
            .enumerate()
            .map(|(i, (rows, cols, init))| {
                let data = match init {
                    Init::Ones => vec![F::one(); rows * cols],
                    Init::Normal(std) => {
                        let mut rng = streams.stream(i as u64, Purpose::Init);
                        let dist = Normal::new(0.0, *std).expect("finite std");
                        (0..rows * cols).map(|_| F::from_f64(dist.sample(&mut rng))).collect()
                    }
                };
                Mat::from_vec(*rows, *cols, data)
            })
            .collect();
        Ok(ModelParams {
            config: config.clone(),
            names: b.names,
            tensors,
            layout,
        })
    }

    /// Wraps existing tensors; shapes must match the layout `config` implies.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Mat<F>>) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, b) = build_layout(config);
        if tensors.len() != b.shapes.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                b.shapes.len(),
                tensors.len()
            )));
        }
        for ((name, (r, c, _)), t) in b.names.iter().zip(&b.shapes).zip(&tensors) {
            if (t.rows, t.cols) != (*r, *c) {
                return Err(ModelError::ShapeMismatch(format!(
                    "{name}: expected {r}x{c}, got {}x{}",
                    t.rows, t.cols
                )));
            }
        }
        Ok(ModelParams {
            config: config.clone(),
            names: b.names,
            tensors,
            layout,
        })
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Mat<F>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat<F>> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Mat::is_finite)
    }

    /// Same values in another precision.
    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        ModelParams {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Mat::from_vec(t.rows, t.cols, t.data.iter().map(|x| G::from_f64(x.as_f64())).collect()))
                .collect(),
            layout: self.layout.clone(),
        }
    }

    /// Norm gains are exempt from weight decay.
    pub fn is_norm(&self, index: usize) -> bool {
        self.names[index].ends_with("norm")
    }
}

/// Bernoulli keep-mask scaled by `1 / (1 - p)`.
pub(crate) fn dropout_mask<F: Scalar, R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Vec<F> {
    let keep = F::from_f64(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.random::<f64>() < p { F::zero() } else { keep })
        .collect()
}
