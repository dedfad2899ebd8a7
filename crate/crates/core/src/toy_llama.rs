//! Reference forward pass for Llama-style decoders.
//!
//! Teacher-forced, full sequence, no KV cache. All arithmetic is `f64`.

use std::path::Path;

use thiserror::Error;

use crate::checkpoint::{ArchiveError, LayerWeights, ModelConfig, TensorArchive};
use crate::tensor::{Matrix2D, SeededRng, TensorError, Vector1D};

#[derive(Debug, Error)]
pub enum ForwardError {
    #[error("token sequence is empty")]
    Empty,
    #[error("perplexity needs at least 2 tokens, got {0}")]
    TooShort(usize),
    #[error("token {token} at position {position} is outside vocab of size {vocab}")]
    TokenOutOfRange {
        position: usize,
        token: usize,
        vocab: usize,
    },
    #[error("token file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Non-empty list of token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Result<Self, ForwardError> {
        if ids.is_empty() {
            return Err(ForwardError::Empty);
        }
        Ok(Self { ids })
    }

    /// Parses newline-separated unsigned integers; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, ForwardError> {
        let mut ids = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let id = line.parse::<usize>().map_err(|e| ForwardError::Parse {
                line: i + 1,
                reason: format!("`{line}`: {e}"),
            })?;
            ids.push(id);
        }
        Self::new(ids)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ForwardError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.ids.len() * 4);
        for id in &self.ids {
            s.push_str(&id.to_string());
            s.push('\n');
        }
        s
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn check_vocab(&self, vocab: usize) -> Result<(), ForwardError> {
        match self.ids.iter().position(|&t| t >= vocab) {
            Some(position) => Err(ForwardError::TokenOutOfRange {
                position,
                token: self.ids[position],
                vocab,
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `seq_len x vocab`.
    pub logits: Matrix2D,
    /// Residual stream after each layer (`seq_len x hidden`), when requested.
    pub hidden_states: Option<Vec<Matrix2D>>,
}

/// A decoder held fully in memory.
#[derive(Debug, Clone)]
pub struct ToyLlama {
    pub config: ModelConfig,
    pub embed: Matrix2D,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Vector1D,
    pub lm_head: Matrix2D,
}

impl ToyLlama {
    pub fn from_archive(archive: &TensorArchive) -> Result<Self, ForwardError> {
        Ok(Self {
            config: archive.config().clone(),
            embed: archive.embed()?,
            layers: archive.layers()?,
            final_norm: archive.final_norm()?,
            lm_head: archive.lm_head()?,
        })
    }

    pub fn forward(&self, tokens: &TokenSequence, trace: bool) -> Result<ForwardTrace, ForwardError> {
        tokens.check_vocab(self.config.vocab)?;
        let h = self.config.hidden;
        let mut x = Matrix2D::from_vec(
            tokens.len(),
            h,
            tokens.ids().iter().flat_map(|&t| self.embed.row(t).to_vec()).collect(),
        )?;
        let mut states = trace.then(Vec::new);
        for layer in &self.layers {
            x = self.layer_forward(layer, &x)?;
            if let Some(s) = states.as_mut() {
                s.push(x.clone());
            }
        }
        let normed = rms_norm(&x, &self.final_norm, self.config.rms_eps)?;
        let logits = normed.matmul_t(&self.lm_head)?;
        Ok(ForwardTrace {
            logits,
            hidden_states: states,
        })
    }

    fn layer_forward(&self, layer: &LayerWeights, x: &Matrix2D) -> Result<Matrix2D, ForwardError> {
        let eps = self.config.rms_eps;
        let attn_in = rms_norm(x, &layer.norm_attn, eps)?;
        let attn = self.attention(layer, &attn_in)?;
        let x = x.add(&attn.matmul_t(&layer.w_o)?)?;

        let mlp_in = rms_norm(&x, &layer.norm_mlp, eps)?;
        let gate = mlp_in.matmul_t(&layer.w_gate)?;
        let up = mlp_in.matmul_t(&layer.w_up)?;
        let act = Matrix2D::from_vec(
            gate.rows(),
            gate.cols(),
            gate.data().iter().zip(up.data()).map(|(&g, &u)| silu(g) * u).collect(),
        )?;
        Ok(x.add(&act.matmul_t(&layer.w_down)?)?)
    }

    /// Grouped-query causal self-attention; returns the concatenated head
    /// outputs before the output projection.
    fn attention(&self, layer: &LayerWeights, xn: &Matrix2D) -> Result<Matrix2D, ForwardError> {
        let cfg = &self.config;
        let hd = cfg.head_dim;
        let group = cfg.n_heads / cfg.n_kv_heads;
        let seq = xn.rows();
        let q = apply_rope(&xn.matmul_t(&layer.w_q)?, hd, cfg.rope_theta);
        let k = apply_rope(&xn.matmul_t(&layer.w_k)?, hd, cfg.rope_theta);
        let v = xn.matmul_t(&layer.w_v)?;
        let scale = 1.0 / (hd as f64).sqrt();

        let mut out = vec![0.0; seq * cfg.n_heads * hd];
        let mut scores = Vec::with_capacity(seq);
        for head in 0..cfg.n_heads {
            let kv = head / group;
            for t in 0..seq {
                let qt = &q.row(t)[head * hd..(head + 1) * hd];
                scores.clear();
                for u in 0..=t {
                    let ku = &k.row(u)[kv * hd..(kv + 1) * hd];
                    scores.push(qt.iter().zip(ku).map(|(a, b)| a * b).sum::<f64>() * scale);
                }
                softmax_in_place(&mut scores);
                let dst = &mut out[t * cfg.n_heads * hd + head * hd..][..hd];
                for (u, p) in scores.iter().enumerate() {
                    let vu = &v.row(u)[kv * hd..(kv + 1) * hd];
                    for (d, val) in dst.iter_mut().zip(vu) {
                        *d += p * val;
                    }
                }
            }
        }
        Ok(Matrix2D::from_vec(seq, cfg.n_heads * hd, out)?)
    }
}

pub fn rms_norm(x: &Matrix2D, gain: &Vector1D, eps: f64) -> Result<Matrix2D, TensorError> {
    if gain.len() != x.cols() {
        return Err(TensorError::Shape {
            op: "rms_norm",
            lhs: x.shape(),
            rhs: (gain.len(), 1),
        });
    }
    let mut out = Vec::with_capacity(x.data().len());
    for i in 0..x.rows() {
        let row = x.row(i);
        let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
        let inv = 1.0 / (ms + eps).sqrt();
        out.extend(row.iter().zip(gain.data()).map(|(v, g)| v * inv * g));
    }
    Matrix2D::from_vec(x.rows(), x.cols(), out)
}

/// Rotate-half RoPE applied independently to each `head_dim` chunk of every
/// row; row index is the position. An odd trailing dimension is left as is.
pub fn apply_rope(x: &Matrix2D, head_dim: usize, theta: f64) -> Matrix2D {
    let half = head_dim / 2;
    let inv_freq: Vec<f64> = (0..half)
        .map(|i| theta.powf(-2.0 * i as f64 / head_dim as f64))
        .collect();
    let mut data = x.data().to_vec();
    let cols = x.cols();
    for pos in 0..x.rows() {
        let row = &mut data[pos * cols..(pos + 1) * cols];
        for head in row.chunks_exact_mut(head_dim) {
            for (i, f) in inv_freq.iter().enumerate() {
                let (sin, cos) = (pos as f64 * f).sin_cos();
                let (a, b) = (head[i], head[i + half]);
                head[i] = a * cos - b * sin;
                head[i + half] = a * sin + b * cos;
            }
        }
    }
    Matrix2D::from_vec(x.rows(), cols, data).expect("rope produced a non-finite entry")
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// `log Σ exp(row)` with max subtraction.
fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn forward(
    archive: &TensorArchive,
    tokens: &TokenSequence,
    trace: bool,
) -> Result<ForwardTrace, ForwardError> {
    ToyLlama::from_archive(archive)?.forward(tokens, trace)
}

/// Perplexity from already computed logits.
pub fn perplexity_from_logits(logits: &Matrix2D, tokens: &TokenSequence) -> Result<f64, ForwardError> {
    if tokens.len() < 2 {
        return Err(ForwardError::TooShort(tokens.len()));
    }
    let ids = tokens.ids();
    let targets = ids.len() - 1;
    let nll: f64 = (0..targets)
        .map(|t| {
            let row = logits.row(t);
            log_sum_exp(row) - row[ids[t + 1]]
        })
        .sum();
    Ok((nll / targets as f64).exp())
}

/// `exp` of the mean next-token cross-entropy (natural log).
pub fn perplexity(archive: &TensorArchive, tokens: &TokenSequence) -> Result<f64, ForwardError> {
    if tokens.len() < 2 {
        return Err(ForwardError::TooShort(tokens.len()));
    }
    let trace = forward(archive, tokens, false)?;
    perplexity_from_logits(&trace.logits, tokens)
}

/// Standard deviation used by [`random_model`] for every weight matrix.
pub fn init_std(n_layers: usize) -> f64 {
    0.02 / (n_layers as f64).sqrt()
}

/// Seeded toy model: every matrix drawn from `N(0, init_std(n_layers)²)`,
/// norm gains set to one, values rounded to `f32`.
pub fn random_model(config: &ModelConfig, seed: u64) -> Result<TensorArchive, ArchiveError> {
    config.validate()?;
    let mut rng = SeededRng::new(seed);
    let std = init_std(config.n_layers);
    let mut draw = |rows: usize, cols: usize| {
        Matrix2D::from_fn(rows, cols, |_, _| (std * rng.normal()) as f32 as f64)
    };
    let (h, kv, ff, v) = (config.hidden, config.kv_dim(), config.d_ff, config.vocab);
    let embed = draw(v, h);
    let layers: Vec<LayerWeights> = (0..config.n_layers)
        .map(|_| LayerWeights {
            norm_attn: Vector1D::filled(h, 1.0),
            w_q: draw(config.n_heads * config.head_dim, h),
            w_k: draw(kv, h),
            w_v: draw(kv, h),
            w_o: draw(h, config.n_heads * config.head_dim),
            norm_mlp: Vector1D::filled(h, 1.0),
            w_gate: draw(ff, h),
            w_up: draw(ff, h),
            w_down: draw(h, ff),
        })
        .collect();
    let lm_head = draw(v, h);
    TensorArchive::from_parts(config.clone(), &embed, &layers, &Vector1D::filled(h, 1.0), &lm_head)
}

/// Uniformly random token ids.
pub fn random_tokens(seed: u64, len: usize, vocab: usize) -> Result<TokenSequence, ForwardError> {
    let mut rng = SeededRng::new(seed);
    TokenSequence::new((0..len).map(|_| rng.below(vocab)).collect())
}
