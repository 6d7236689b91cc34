//! Transformer classifier supporting both architectures: a bidirectional
//! encoder pooling the first ([CLS]) position and a causal decoder pooling
//! the last real token.
//!
//! Blocks are pre-norm residual (LN -> attention -> residual, then
//! LN -> FFN(GELU) -> residual) with learned position embeddings and a final
//! layer norm before the linear classification head. The backward pass is
//! hand-written in [`net`] and verified against finite differences.

mod checkpoint;
mod net;
#[cfg(test)]
mod tests;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use net::{Batch, ForwardPass};

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize, CaseMode, LabelVocab};
use crate::numerics::{kernels, NumericsError, Rng, Tensor};
use crate::tokenizer::{self, TokenizerError, TokenizerVocab};

/// Additive score for masked attention positions; exp() of it underflows to
/// exactly 0, which is what makes pad invariance bitwise.
pub(crate) const MASKED_SCORE: f64 = -1e9;
pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("sequence length {got} exceeds model max_seq_len {max}")]
    SequenceTooLong { got: usize, max: usize },
    #[error("token id {id} out of range for vocab_size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("input is empty after normalization")]
    EmptyInput,
    #[error("label vocabulary has {labels} labels but the model expects {classes} classes")]
    LabelCountMismatch { labels: usize, classes: usize },
    #[error("not a checkpoint file (bad magic bytes)")]
    NotACheckpoint,
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u32),
    #[error("checkpoint truncated: expected {expected} more bytes")]
    Truncated { expected: usize },
    #[error("checkpoint has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("vocabulary hash mismatch: checkpoint has {expected:#018x}, provided vocabulary hashes to {found:#018x}")]
    VocabHashMismatch { expected: u64, found: u64 },
    #[error("corrupt checkpoint config: {0}")]
    BadCheckpointConfig(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Which self-attention regime and pooling rule the model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    /// Bidirectional attention; classify from position 0.
    Encoder,
    /// Causal attention; classify from the last real token.
    Decoder,
}

impl std::fmt::Display for ArchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ArchKind::Encoder => write!(f, "encoder"),
            ArchKind::Decoder => write!(f, "decoder"),
        }
    }
}

impl std::str::FromStr for ArchKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "encoder" => Ok(ArchKind::Encoder),
            "decoder" => Ok(ArchKind::Decoder),
            other => Err(format!("unknown arch '{other}' (expected encoder|decoder)")),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: ArchKind,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_size: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub num_classes: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// Laptop-sized default: trains on CPU in seconds.
    pub fn desk(arch: ArchKind) -> Self {
        ModelConfig {
            arch,
            hidden_size: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_size: 256,
            max_seq_len: 32,
            vocab_size: 2000,
            num_classes: 46,
            dropout: 0.1,
        }
    }

    /// Encoder preset shaped like the 110M-parameter base encoder family.
    pub fn bert_base_like() -> Self {
        ModelConfig {
            arch: ArchKind::Encoder,
            hidden_size: 768,
            num_layers: 12,
            num_heads: 12,
            ffn_size: 3072,
            max_seq_len: 512,
            vocab_size: 32000,
            num_classes: 46,
            dropout: 0.1,
        }
    }

    /// Decoder preset shaped like the small GPT-2 family row.
    pub fn gpt2_like() -> Self {
        ModelConfig {
            arch: ArchKind::Decoder,
            hidden_size: 768,
            num_layers: 12,
            num_heads: 12,
            ffn_size: 3072,
            max_seq_len: 1024,
            vocab_size: 50000,
            num_classes: 46,
            dropout: 0.1,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("hidden_size", self.hidden_size),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("ffn_size", self.ffn_size),
            ("vocab_size", self.vocab_size),
            ("num_classes", self.num_classes),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        if self.hidden_size % self.num_heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "hidden_size {} must be divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if self.max_seq_len < 3 {
            return Err(ModelError::InvalidConfig(format!(
                "max_seq_len must be >= 3, got {}",
                self.max_seq_len
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Exact parameter count implied by a config.
pub fn count_parameters(cfg: &ModelConfig) -> u64 {
    let c = cfg.hidden_size as u64;
    let f = cfg.ffn_size as u64;
    let per_layer =
        // two layer norms
        4 * c
        // q, k, v, o projections with biases
        + 4 * (c * c + c)
        // ffn in/out with biases
        + c * f + f + f * c + c;
    (cfg.vocab_size as u64) * c
        + (cfg.max_seq_len as u64) * c
        + (cfg.num_layers as u64) * per_layer
        + 2 * c
        + c * (cfg.num_classes as u64)
        + cfg.num_classes as u64
}

/// Parameters of one transformer block.
#[derive(Debug, Clone)]
pub(crate) struct BlockParams {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// The classifier: embeddings, transformer blocks, final norm, linear head.
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub(crate) config: ModelConfig,
    pub(crate) tok_emb: Tensor,
    pub(crate) pos_emb: Tensor,
    pub(crate) blocks: Vec<BlockParams>,
    pub(crate) lnf_gain: Tensor,
    pub(crate) lnf_bias: Tensor,
    pub(crate) head_w: Tensor,
    pub(crate) head_b: Tensor,
    vocab_hash: u64,
}

fn xavier(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.uniform_in(-bound, bound))
        .collect();
    Tensor::from_vec(&[fan_in, fan_out], data).expect("sized by construction")
}

fn embedding(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.normal(0.0, 0.02)).collect();
    Tensor::from_vec(&[rows, cols], data).expect("sized by construction")
}

fn ones(n: usize) -> Tensor {
    Tensor::from_vec(&[n], vec![1.0; n]).expect("sized by construction")
}

impl ClassifierModel {
    /// Random initialization: N(0, 0.02) embeddings, Xavier-uniform weight
    /// matrices, unit layer-norm gains, zero biases.
    pub fn init(config: ModelConfig, vocab_hash: u64, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = Rng::seed_from_u64(seed);
        let c = config.hidden_size;
        let tok_emb = embedding(&mut rng, config.vocab_size, c);
        let pos_emb = embedding(&mut rng, config.max_seq_len, c);
        let blocks = (0..config.num_layers)
            .map(|_| BlockParams {
                ln1_gain: ones(c),
                ln1_bias: Tensor::zeros(&[c]),
                wq: xavier(&mut rng, c, c),
                bq: Tensor::zeros(&[c]),
                wk: xavier(&mut rng, c, c),
                bk: Tensor::zeros(&[c]),
                wv: xavier(&mut rng, c, c),
                bv: Tensor::zeros(&[c]),
                wo: xavier(&mut rng, c, c),
                bo: Tensor::zeros(&[c]),
                ln2_gain: ones(c),
                ln2_bias: Tensor::zeros(&[c]),
                w1: xavier(&mut rng, c, config.ffn_size),
                b1: Tensor::zeros(&[config.ffn_size]),
                w2: xavier(&mut rng, config.ffn_size, c),
                b2: Tensor::zeros(&[c]),
            })
            .collect();
        Ok(ClassifierModel {
            head_w: xavier(&mut rng, c, config.num_classes),
            head_b: Tensor::zeros(&[config.num_classes]),
            lnf_gain: ones(c),
            lnf_bias: Tensor::zeros(&[c]),
            config,
            tok_emb,
            pos_emb,
            blocks,
            vocab_hash,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab_hash(&self) -> u64 {
        self.vocab_hash
    }

    /// Rebuild a model from config plus a flat parameter array laid out in
    /// `params()` order.
    pub(crate) fn from_flat(
        config: ModelConfig,
        vocab_hash: u64,
        flat: &[f64],
    ) -> Result<Self, ModelError> {
        let expected = count_parameters(&config) as usize;
        if flat.len() != expected {
            return Err(ModelError::Shape {
                op: "from_flat",
                detail: format!("expected {expected} parameters, got {}", flat.len()),
            });
        }
        let mut model = ClassifierModel::init(config, vocab_hash, 0)?;
        let mut offset = 0usize;
        for tensor in model.params_mut() {
            let n = tensor.numel();
            tensor.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(model)
    }

    /// True when the given vocabulary hashes to the value this model was
    /// trained against.
    pub fn verify_vocab(&self, vocab: &TokenizerVocab) -> Result<(), ModelError> {
        let found = vocab.content_hash();
        if found != self.vocab_hash {
            return Err(ModelError::VocabHashMismatch {
                expected: self.vocab_hash,
                found,
            });
        }
        Ok(())
    }

    /// Parameter tensors in the documented fixed order (also the checkpoint
    /// serialization order).
    pub fn params(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = vec![&self.tok_emb, &self.pos_emb];
        for b in &self.blocks {
            v.extend([
                &b.ln1_gain,
                &b.ln1_bias,
                &b.wq,
                &b.bq,
                &b.wk,
                &b.bk,
                &b.wv,
                &b.bv,
                &b.wo,
                &b.bo,
                &b.ln2_gain,
                &b.ln2_bias,
                &b.w1,
                &b.b1,
                &b.w2,
                &b.b2,
            ]);
        }
        v.extend([&self.lnf_gain, &self.lnf_bias, &self.head_w, &self.head_b]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = vec![&mut self.tok_emb, &mut self.pos_emb];
        for b in &mut self.blocks {
            v.extend([
                &mut b.ln1_gain,
                &mut b.ln1_bias,
                &mut b.wq,
                &mut b.bq,
                &mut b.wk,
                &mut b.bk,
                &mut b.wv,
                &mut b.bv,
                &mut b.wo,
                &mut b.bo,
                &mut b.ln2_gain,
                &mut b.ln2_bias,
                &mut b.w1,
                &mut b.b1,
                &mut b.w2,
                &mut b.b2,
            ]);
        }
        v.extend([
            &mut self.lnf_gain,
            &mut self.lnf_bias,
            &mut self.head_w,
            &mut self.head_b,
        ]);
        v
    }

    /// Names aligned with `params()`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["tok_emb".to_string(), "pos_emb".to_string()];
        for l in 0..self.blocks.len() {
            for field in [
                "ln1_gain", "ln1_bias", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                "ln2_gain", "ln2_bias", "w1", "b1", "w2", "b2",
            ] {
                names.push(format!("layer{l}.{field}"));
            }
        }
        names.extend(
            ["lnf_gain", "lnf_bias", "head_w", "head_b"]
                .into_iter()
                .map(String::from),
        );
        names
    }

    /// Counted by enumerating the allocated arrays.
    pub fn num_parameters(&self) -> u64 {
        self.params().iter().map(|t| t.numel() as u64).sum()
    }

    /// Allocate (if needed) and zero every parameter gradient.
    pub fn zero_grads(&mut self) {
        for t in self.params_mut() {
            t.enable_grad();
            t.zero_grad();
        }
    }

    /// Clones of all parameter tensors with grad buffers enabled; used by the
    /// gradient-check harness.
    pub fn export_params(&self) -> Vec<Tensor> {
        self.params()
            .into_iter()
            .map(|t| {
                let mut c = t.clone();
                c.enable_grad();
                c
            })
            .collect()
    }

    /// Overwrite parameters from tensors produced by `export_params`.
    pub fn import_params(&mut self, params: &[Tensor]) -> Result<(), ModelError> {
        let own = self.params_mut();
        if own.len() != params.len() {
            return Err(ModelError::Shape {
                op: "import_params",
                detail: format!("expected {} tensors, got {}", own.len(), params.len()),
            });
        }
        for (dst, src) in own.into_iter().zip(params) {
            if dst.shape() != src.shape() {
                return Err(ModelError::Shape {
                    op: "import_params",
                    detail: format!("expected shape {:?}, got {:?}", dst.shape(), src.shape()),
                });
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Copy this model's parameter gradients into `out[i].grad`.
    pub fn export_grads_into(&self, out: &mut [Tensor]) -> Result<(), ModelError> {
        let own = self.params();
        if own.len() != out.len() {
            return Err(ModelError::Shape {
                op: "export_grads_into",
                detail: format!("expected {} tensors, got {}", own.len(), out.len()),
            });
        }
        for (src, dst) in own.into_iter().zip(out.iter_mut()) {
            let grad = src.grad().ok_or(ModelError::Shape {
                op: "export_grads_into",
                detail: "missing grad buffer; call zero_grads before backward".to_string(),
            })?;
            dst.set_grad(grad.to_vec())?;
        }
        Ok(())
    }
}

/// Scaled dot-product attention over `[batch, heads, time, head_dim]`
/// tensors: `softmax(q k^T / sqrt(d) + mask) v`.
///
/// `attn_mask` is an additive `[time, time]` mask (entries 0 or a large
/// negative surrogate). `key_padding` is `[batch, time]` with 1 for real
/// tokens; padded keys are masked out entirely.
pub fn attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    attn_mask: Option<&Tensor>,
    key_padding: Option<&Tensor>,
) -> Result<Tensor, ModelError> {
    let shape = q.shape().to_vec();
    if shape.len() != 4 {
        return Err(ModelError::Shape {
            op: "attention",
            detail: format!("expected [batch, heads, time, head_dim], got {shape:?}"),
        });
    }
    if k.shape() != shape || v.shape() != shape {
        return Err(ModelError::Shape {
            op: "attention",
            detail: format!(
                "q {:?}, k {:?}, v {:?} must agree",
                q.shape(),
                k.shape(),
                v.shape()
            ),
        });
    }
    let (b, h, t, d) = (shape[0], shape[1], shape[2], shape[3]);
    if let Some(m) = attn_mask {
        if m.shape() != [t, t] {
            return Err(ModelError::Shape {
                op: "attention",
                detail: format!("attn_mask must be [{t}, {t}], got {:?}", m.shape()),
            });
        }
    }
    if let Some(p) = key_padding {
        if p.shape() != [b, t] {
            return Err(ModelError::Shape {
                op: "attention",
                detail: format!("key_padding must be [{b}, {t}], got {:?}", p.shape()),
            });
        }
    }

    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Tensor::zeros(&shape);
    let mut scores = vec![0.0; t];
    for bi in 0..b {
        for hi in 0..h {
            let base = (bi * h + hi) * t * d;
            for t1 in 0..t {
                let q_vec = &q.data()[base + t1 * d..base + (t1 + 1) * d];
                for t2 in 0..t {
                    let padded = key_padding
                        .map(|p| p.data()[bi * t + t2] == 0.0)
                        .unwrap_or(false);
                    if padded {
                        scores[t2] = MASKED_SCORE;
                        continue;
                    }
                    let k_vec = &k.data()[base + t2 * d..base + (t2 + 1) * d];
                    let dot: f64 = q_vec.iter().zip(k_vec).map(|(a, b)| a * b).sum();
                    let mask_term = attn_mask.map(|m| m.data()[t1 * t + t2]).unwrap_or(0.0);
                    scores[t2] = scale * dot + mask_term;
                }
                kernels::softmax_row(&mut scores);
                let out_row = &mut out.data_mut()[base + t1 * d..base + (t1 + 1) * d];
                for t2 in 0..t {
                    let w = scores[t2];
                    if w == 0.0 {
                        continue;
                    }
                    let v_vec = &v.data()[base + t2 * d..base + (t2 + 1) * d];
                    for dd in 0..d {
                        out_row[dd] += w * v_vec[dd];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Strictly causal additive mask: position t sees keys 0..=t.
pub fn causal_mask(t: usize) -> Tensor {
    let mut m = Tensor::zeros(&[t, t]);
    for t1 in 0..t {
        for t2 in (t1 + 1)..t {
            m.data_mut()[t1 * t + t2] = MASKED_SCORE;
        }
    }
    m
}

/// Predicted label with the full probability vector (class-id order).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Prediction {
    pub label: String,
    pub label_id: usize,
    pub probs: Vec<f64>,
}

/// Normalize, encode, and classify one sentence. Ties break toward the
/// lowest class id; probabilities sum to 1.
pub fn predict(
    model: &ClassifierModel,
    sentence: &str,
    mode: CaseMode,
    vocab: &TokenizerVocab,
    labels: &LabelVocab,
) -> Result<Prediction, ModelError> {
    if labels.len() != model.config.num_classes {
        return Err(ModelError::LabelCountMismatch {
            labels: labels.len(),
            classes: model.config.num_classes,
        });
    }
    let normalized = normalize(sentence, mode);
    if normalized.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let encoded = tokenizer::encode(&normalized, vocab, model.config.max_seq_len, model.config.arch)?;
    let batch = Batch::from_examples(&[&encoded])?;
    let fwd = model.forward(&batch, None)?;
    let mut probs = fwd.logits.clone();
    kernels::softmax_row(&mut probs);
    let mut best = 0usize;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Ok(Prediction {
        label: labels.name(best).expect("argmax within label set").to_string(),
        label_id: best,
        probs,
    })
}
