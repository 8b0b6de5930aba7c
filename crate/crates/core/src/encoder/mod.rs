//! Sequence encoder mapping a [`ModelInput`] to the hidden vector at its
//! readout position, with exact reverse-mode gradients.
//!
//! Two variants share one parameter layout:
//! - `Transformer`: token + learned position embeddings followed by
//!   post-norm blocks (attention, add, norm, feed-forward, add, norm).
//!   Attention is causal or bidirectional.
//! - `BagOfEmbeddings`: the mean of title-token embeddings through one
//!   affine projection; prompt and special tokens are ignored.

mod checkpoint;
mod gradcheck;
mod transformer;

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::textio::ModelInput;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, Dtype};
pub use gradcheck::gradient_check;
pub use transformer::{backward_into, encode, encode_backward, forward, ForwardCache};

pub type Representation = Array1<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    Causal,
    Bidirectional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    Transformer,
    BagOfEmbeddings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub attention_mode: AttentionMode,
    pub variant: EncoderVariant,
    pub init_scale: f64,
    pub seed: u64,
    /// Scale representations to unit length before scoring.
    pub normalize_output: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 0,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            ffn_dim: 128,
            max_len: 256,
            attention_mode: AttentionMode::Causal,
            variant: EncoderVariant::Transformer,
            init_scale: 1.0,
            seed: 7,
            normalize_output: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_model == 0 || self.max_len == 0 {
            return Err(Error::InvalidConfig("vocab_size, d_model and max_len must be positive".into()));
        }
        if self.variant == EncoderVariant::Transformer {
            if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
                return Err(Error::InvalidConfig(format!(
                    "d_model {} is not divisible by n_heads {}",
                    self.d_model, self.n_heads
                )));
            }
            if self.ffn_dim == 0 {
                return Err(Error::InvalidConfig("ffn_dim must be positive".into()));
            }
        }
        if !self.init_scale.is_finite() || self.init_scale < 0.0 {
            return Err(Error::InvalidConfig("init_scale must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    /// Keys carry no bias: it would shift every score in a row equally.
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
}

impl LayerWeights {
    fn tensors(&self, l: usize) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let n = |s: &str| format!("layers.{l}.{s}");
        vec![
            (n("wq"), self.wq.view().into_dyn()),
            (n("bq"), self.bq.view().into_dyn()),
            (n("wk"), self.wk.view().into_dyn()),
            (n("wv"), self.wv.view().into_dyn()),
            (n("bv"), self.bv.view().into_dyn()),
            (n("wo"), self.wo.view().into_dyn()),
            (n("bo"), self.bo.view().into_dyn()),
            (n("ln1_gain"), self.ln1_gain.view().into_dyn()),
            (n("ln1_bias"), self.ln1_bias.view().into_dyn()),
            (n("w1"), self.w1.view().into_dyn()),
            (n("b1"), self.b1.view().into_dyn()),
            (n("w2"), self.w2.view().into_dyn()),
            (n("b2"), self.b2.view().into_dyn()),
            (n("ln2_gain"), self.ln2_gain.view().into_dyn()),
            (n("ln2_bias"), self.ln2_bias.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self, l: usize) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let n = |s: &str| format!("layers.{l}.{s}");
        vec![
            (n("wq"), self.wq.view_mut().into_dyn()),
            (n("bq"), self.bq.view_mut().into_dyn()),
            (n("wk"), self.wk.view_mut().into_dyn()),
            (n("wv"), self.wv.view_mut().into_dyn()),
            (n("bv"), self.bv.view_mut().into_dyn()),
            (n("wo"), self.wo.view_mut().into_dyn()),
            (n("bo"), self.bo.view_mut().into_dyn()),
            (n("ln1_gain"), self.ln1_gain.view_mut().into_dyn()),
            (n("ln1_bias"), self.ln1_bias.view_mut().into_dyn()),
            (n("w1"), self.w1.view_mut().into_dyn()),
            (n("b1"), self.b1.view_mut().into_dyn()),
            (n("w2"), self.w2.view_mut().into_dyn()),
            (n("b2"), self.b2.view_mut().into_dyn()),
            (n("ln2_gain"), self.ln2_gain.view_mut().into_dyn()),
            (n("ln2_bias"), self.ln2_bias.view_mut().into_dyn()),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Every trainable tensor. Used both for parameters and for their gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub token_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerWeights>,
    /// Present only for the bag-of-embeddings variant.
    pub proj: Option<Projection>,
}

impl Weights {
    /// Named views in the fixed checkpoint order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![
            ("token_emb".to_string(), self.token_emb.view().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view().into_dyn()),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            out.extend(layer.tensors(l));
        }
        if let Some(p) = &self.proj {
            out.push(("proj.weight".into(), p.weight.view().into_dyn()));
            out.push(("proj.bias".into(), p.bias.view().into_dyn()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![
            ("token_emb".to_string(), self.token_emb.view_mut().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view_mut().into_dyn()),
        ];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.extend(layer.tensors_mut(l));
        }
        if let Some(p) = &mut self.proj {
            out.push(("proj.weight".into(), p.weight.view_mut().into_dyn()));
            out.push(("proj.bias".into(), p.bias.view_mut().into_dyn()));
        }
        out
    }

    pub fn zeros_like(&self) -> Weights {
        let mut z = self.clone();
        for (_, mut t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Weights, scale: f64) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(scale, &b);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter().map(|x| x.abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub weights: Weights,
}

/// Gradients, shaped like [`EncoderParams::weights`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads(pub Weights);

fn normal(rng: &mut rng::Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

/// Embeddings are drawn from N(0, init_scale^2), matrices from
/// N(0, init_scale^2 / fan_in); biases start at 0 and norm gains at 1.
pub fn init_params(config: &EncoderConfig) -> Result<EncoderParams> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, "encoder-init", &[]);
    let (d, f, s) = (config.d_model, config.ffn_dim, config.init_scale);
    let fan = |n: usize| s / (n as f64).sqrt();
    let token_emb = normal(&mut rng, config.vocab_size, d, s);
    let pos_emb = normal(&mut rng, config.max_len, d, s);
    let (layers, proj) = match config.variant {
        EncoderVariant::Transformer => {
            let layers = (0..config.n_layers)
                .map(|_| LayerWeights {
                    wq: normal(&mut rng, d, d, fan(d)),
                    bq: Array1::zeros(d),
                    wk: normal(&mut rng, d, d, fan(d)),
                    wv: normal(&mut rng, d, d, fan(d)),
                    bv: Array1::zeros(d),
                    wo: normal(&mut rng, d, d, fan(d)),
                    bo: Array1::zeros(d),
                    ln1_gain: Array1::ones(d),
                    ln1_bias: Array1::zeros(d),
                    w1: normal(&mut rng, d, f, fan(d)),
                    b1: Array1::zeros(f),
                    w2: normal(&mut rng, f, d, fan(f)),
                    b2: Array1::zeros(d),
                    ln2_gain: Array1::ones(d),
                    ln2_bias: Array1::zeros(d),
                })
                .collect();
            (layers, None)
        }
        EncoderVariant::BagOfEmbeddings => (
            Vec::new(),
            Some(Projection {
                weight: normal(&mut rng, d, d, fan(d)),
                bias: Array1::zeros(d),
            }),
        ),
    };
    Ok(EncoderParams {
        config: config.clone(),
        weights: Weights {
            token_emb,
            pos_emb,
            layers,
            proj,
        },
    })
}

pub(crate) fn check_input(config: &EncoderConfig, input: &ModelInput) -> Result<()> {
    if input.token_ids.len() > config.max_len {
        return Err(Error::InputTooLong {
            len: input.token_ids.len(),
            max_len: config.max_len,
        });
    }
    if input.token_ids.is_empty() || input.user_token_pos >= input.token_ids.len() {
        return Err(Error::InvalidConfig("model input has no readout position".into()));
    }
    if let Some(&bad) = input.token_ids.iter().find(|&&t| t as usize >= config.vocab_size) {
        return Err(Error::InvalidConfig(format!("token id {bad} outside the vocabulary")));
    }
    Ok(())
}
