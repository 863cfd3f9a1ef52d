//! A small BERT-style encoder with a masked-LM head and hand-written reverse
//! mode gradients.
//!
//! All trainable weights live in one flat `Vec<f64>`; [`Layout`] names the
//! slices. In SOC mode the frozen context vector is appended after the
//! embedding block as one more sequence element. It has no positional
//! embedding, owns no parameters, and never receives a prediction.

mod checkpoint;
mod gradcheck;
mod model;
mod train;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::Mode;
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use model::{forward_mlm, loss_and_grad, mask_logits, predict_ranked, rank_by_logits, MlmOutput, SeqInput, Target};
pub use train::{
    apply_mlm_masking, learning_rate_at, mlm_step, AdamW, MaskedBatch, StepOutcome, TrainConfig, Trainer,
};

pub const INIT_STD: f64 = 0.02;
pub const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    /// Longest input the position table covers, counting the context slot.
    pub max_len: usize,
    pub vocab_size: usize,
    pub mode: Mode,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            layers: 2,
            heads: 2,
            ff: 256,
            max_len: 32,
            vocab_size: 0,
            mode: Mode::None,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.hidden, self.layers, self.heads, self.ff, self.max_len, self.vocab_size];
        if dims.contains(&0) {
            return Err(Error::Config(format!("all model dimensions must be >= 1: {self:?}")));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Longest token sequence the model accepts in its mode.
    pub fn max_tokens(&self) -> usize {
        match self.mode {
            Mode::Soc => self.max_len - 1,
            _ => self.max_len,
        }
    }
}

/// A named slice of the flat parameter vector, stored row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorRef {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TensorRef {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerRefs {
    pub q_w: TensorRef,
    pub q_b: TensorRef,
    pub k_w: TensorRef,
    pub k_b: TensorRef,
    pub v_w: TensorRef,
    pub v_b: TensorRef,
    pub o_w: TensorRef,
    pub o_b: TensorRef,
    pub ln1_g: TensorRef,
    pub ln1_b: TensorRef,
    pub ff1_w: TensorRef,
    pub ff1_b: TensorRef,
    pub ff2_w: TensorRef,
    pub ff2_b: TensorRef,
    pub ln2_g: TensorRef,
    pub ln2_b: TensorRef,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    Normal,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub tensor: TensorRef,
    pub init: InitKind,
    /// Whether AdamW applies weight decay (biases and layer norms are exempt).
    pub decay: bool,
}

/// Offsets of every tensor in the flat parameter vector. The order of
/// `specs` is the checkpoint order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub tok_emb: TensorRef,
    pub pos_emb: TensorRef,
    pub emb_ln_g: TensorRef,
    pub emb_ln_b: TensorRef,
    pub layers: Vec<LayerRefs>,
    pub head_w: TensorRef,
    pub head_b: TensorRef,
    pub head_ln_g: TensorRef,
    pub head_ln_b: TensorRef,
    pub out_bias: TensorRef,
    pub specs: Vec<TensorSpec>,
    pub total: usize,
}

struct LayoutBuilder {
    specs: Vec<TensorSpec>,
    total: usize,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: InitKind, decay: bool) -> TensorRef {
        let tensor = TensorRef { offset: self.total, rows, cols };
        self.total += rows * cols;
        self.specs.push(TensorSpec { name, tensor, init, decay });
        tensor
    }

    fn matrix(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> TensorRef {
        self.add(name.into(), rows, cols, InitKind::Normal, true)
    }

    fn bias(&mut self, name: impl Into<String>, n: usize) -> TensorRef {
        self.add(name.into(), 1, n, InitKind::Zeros, false)
    }

    fn gain(&mut self, name: impl Into<String>, n: usize) -> TensorRef {
        self.add(name.into(), 1, n, InitKind::Ones, false)
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (d, ff) = (cfg.hidden, cfg.ff);
        let mut b = LayoutBuilder { specs: Vec::new(), total: 0 };
        let tok_emb = b.matrix("embeddings.token", cfg.vocab_size, d);
        let pos_emb = b.matrix("embeddings.position", cfg.max_len, d);
        let emb_ln_g = b.gain("embeddings.norm.gain", d);
        let emb_ln_b = b.bias("embeddings.norm.bias", d);
        let layers = (0..cfg.layers)
            .map(|l| {
                let p = |s: &str| format!("layer{l}.{s}");
                LayerRefs {
                    q_w: b.matrix(p("attn.query.weight"), d, d),
                    q_b: b.bias(p("attn.query.bias"), d),
                    k_w: b.matrix(p("attn.key.weight"), d, d),
                    k_b: b.bias(p("attn.key.bias"), d),
                    v_w: b.matrix(p("attn.value.weight"), d, d),
                    v_b: b.bias(p("attn.value.bias"), d),
                    o_w: b.matrix(p("attn.output.weight"), d, d),
                    o_b: b.bias(p("attn.output.bias"), d),
                    ln1_g: b.gain(p("attn.norm.gain"), d),
                    ln1_b: b.bias(p("attn.norm.bias"), d),
                    ff1_w: b.matrix(p("ffn.inner.weight"), d, ff),
                    ff1_b: b.bias(p("ffn.inner.bias"), ff),
                    ff2_w: b.matrix(p("ffn.outer.weight"), ff, d),
                    ff2_b: b.bias(p("ffn.outer.bias"), d),
                    ln2_g: b.gain(p("ffn.norm.gain"), d),
                    ln2_b: b.bias(p("ffn.norm.bias"), d),
                }
            })
            .collect();
        let head_w = b.matrix("mlm.transform.weight", d, d);
        let head_b = b.bias("mlm.transform.bias", d);
        let head_ln_g = b.gain("mlm.norm.gain", d);
        let head_ln_b = b.bias("mlm.norm.bias", d);
        // the decoder matrix is tied to embeddings.token
        let out_bias = b.bias("mlm.output.bias", cfg.vocab_size);
        Layout {
            tok_emb,
            pos_emb,
            emb_ln_g,
            emb_ln_b,
            layers,
            head_w,
            head_b,
            head_ln_g,
            head_ln_b,
            out_bias,
            specs: b.specs,
            total: b.total,
        }
    }
}

/// Trainable weights of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl ModelParams {
    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    pub(crate) fn mat(&self, t: TensorRef) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((t.rows, t.cols), &self.data[t.range()]).expect("layout shape")
    }

    pub(crate) fn vec(&self, t: TensorRef) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.data[t.range()])
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.specs.iter().find(|s| s.name == name).map(|s| &self.data[s.tensor.range()])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

pub(crate) fn mat_mut(data: &mut [f64], t: TensorRef) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((t.rows, t.cols), &mut data[t.range()]).expect("layout shape")
}

pub(crate) fn vec_mut(data: &mut [f64], t: TensorRef) -> ArrayViewMut1<'_, f64> {
    ArrayViewMut1::from(&mut data[t.range()])
}

/// Number of trainable parameters a config implies.
pub fn param_count(cfg: &ModelConfig) -> usize {
    Layout::new(cfg).total
}

/// Normal(0, 0.02) weight matrices, zero biases, unit layer-norm gains.
pub fn init_model(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let layout = Layout::new(config);
    let mut data = vec![0.0; layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    for spec in &layout.specs {
        let slice = &mut data[spec.tensor.range()];
        match spec.init {
            InitKind::Normal => slice.iter_mut().for_each(|x| *x = normal.sample(&mut rng)),
            InitKind::Zeros => {}
            InitKind::Ones => slice.fill(1.0),
        }
    }
    Ok(ModelParams { config: config.clone(), layout, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mode: Mode) -> ModelConfig {
        ModelConfig { vocab_size: 30, mode, ..ModelConfig::default() }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_model(&cfg(Mode::None)).unwrap();
        let b = init_model(&cfg(Mode::None)).unwrap();
        assert_eq!(a, b);
        let c = init_model(&ModelConfig { seed: 1, ..cfg(Mode::None) }).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn soc_adds_no_parameters_and_ctrl_adds_embedding_rows() {
        let none = init_model(&cfg(Mode::None)).unwrap();
        let soc = init_model(&cfg(Mode::Soc)).unwrap();
        assert_eq!(none.num_params(), soc.num_params());
        let extra_codes = 21 + 1;
        let ctrl = init_model(&ModelConfig { vocab_size: 30 + extra_codes, ..cfg(Mode::Ctrl) }).unwrap();
        // token embedding rows plus the matching output-bias entries
        assert_eq!(ctrl.num_params() - none.num_params(), extra_codes * (64 + 1));
    }

    #[test]
    fn layout_is_contiguous_and_initialised() {
        let p = init_model(&cfg(Mode::None)).unwrap();
        let mut next = 0;
        for s in &p.layout.specs {
            assert_eq!(s.tensor.offset, next);
            next += s.tensor.len();
        }
        assert_eq!(next, p.layout.total);
        assert!(p.tensor("embeddings.norm.gain").unwrap().iter().all(|&x| x == 1.0));
        assert!(p.tensor("layer0.attn.query.bias").unwrap().iter().all(|&x| x == 0.0));
        let w = p.tensor("layer1.ffn.inner.weight").unwrap();
        let std = (w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64).sqrt();
        assert!((std - INIT_STD).abs() < 0.002, "std {std}");
    }

    #[test]
    fn config_errors() {
        assert!(matches!(init_model(&ModelConfig { heads: 3, ..cfg(Mode::None) }), Err(Error::Config(_))));
        assert!(init_model(&ModelConfig { dropout: 1.0, ..cfg(Mode::None) }).is_err());
        assert!(init_model(&ModelConfig { vocab_size: 0, ..cfg(Mode::None) }).is_err());
    }
}
