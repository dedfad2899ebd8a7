//! The DEUS1 container: model config plus named `f32` tensors.
//!
//! Layout:
//!
//! ```text
//! "DEUS1" | u64 LE header length | JSON header | zero pad to 64 | payloads
//! ```
//!
//! Each tensor's `offset` is relative to the start of the payload section,
//! which itself begins on a 64-byte boundary, and every offset is a multiple
//! of 64. Payloads are little-endian `f32`. The final tensor ends at EOF.
//!
//! Layer tensors are named `layers.{i}.{block}` with 1-based `i`; the
//! model-level tensors are `embed`, `final_norm` and `lm_head`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tensor::{Matrix2D, TensorError, Vector1D};

pub const MAGIC: &[u8; 5] = b"DEUS1";
pub const ALIGN: usize = 64;

pub const EMBED: &str = "embed";
pub const FINAL_NORM: &str = "final_norm";
pub const LM_HEAD: &str = "lm_head";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field} must be at least 1")]
    ZeroCount { field: &'static str },
    #[error("n_heads ({n_heads}) x head_dim ({head_dim}) != hidden ({hidden})")]
    HeadGeometry {
        n_heads: usize,
        head_dim: usize,
        hidden: usize,
    },
    #[error("n_kv_heads ({n_kv_heads}) does not divide n_heads ({n_heads})")]
    KvHeads { n_heads: usize, n_kv_heads: usize },
    #[error("{field} must be positive and finite, got {value}")]
    BadReal { field: &'static str, value: f64 },
}

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected \"DEUS1\"")]
    BadMagic,
    #[error("truncated: {0}")]
    Truncated(String),
    #[error("non-finite value in tensor `{name}` at index {index}")]
    NonFinite { name: String, index: usize },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),
    #[error("archive has no tensors")]
    Empty,
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("tensor `{name}`: shape {shape:?} holds {expected} values but payload has {actual}")]
    PayloadSize {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("tensor `{name}` has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("unexpected tensor `{0}` outside the naming convention")]
    UnknownTensor(String),
    #[error("layer index {index} out of range 1..={n_layers}")]
    LayerIndex { index: usize, n_layers: usize },
}

/// Architecture hyper-parameters of a Llama-style decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub hidden: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
    pub d_ff: usize,
    pub vocab: usize,
    #[serde(default = "default_rope_theta")]
    pub rope_theta: f64,
    #[serde(default = "default_rms_eps")]
    pub rms_eps: f64,
}

fn default_rope_theta() -> f64 {
    10000.0
}

fn default_rms_eps() -> f64 {
    1e-5
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, v) in [
            ("n_layers", self.n_layers),
            ("hidden", self.hidden),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("head_dim", self.head_dim),
            ("d_ff", self.d_ff),
            ("vocab", self.vocab),
        ] {
            if v == 0 {
                return Err(ConfigError::ZeroCount { field });
            }
        }
        if self.n_heads * self.head_dim != self.hidden {
            return Err(ConfigError::HeadGeometry {
                n_heads: self.n_heads,
                head_dim: self.head_dim,
                hidden: self.hidden,
            });
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(ConfigError::KvHeads {
                n_heads: self.n_heads,
                n_kv_heads: self.n_kv_heads,
            });
        }
        for (field, value) in [("rope_theta", self.rope_theta), ("rms_eps", self.rms_eps)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConfigError::BadReal { field, value });
            }
        }
        Ok(())
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim
    }

    /// Expected `[rows, cols]` (or `[len]`) of a layer block.
    pub fn block_shape(&self, block: BlockId) -> Vec<usize> {
        let (h, kv, ff) = (self.hidden, self.kv_dim(), self.d_ff);
        match block {
            BlockId::PreNorm | BlockId::PostNorm => vec![h],
            BlockId::Q => vec![self.n_heads * self.head_dim, h],
            BlockId::K | BlockId::V => vec![kv, h],
            BlockId::O => vec![h, self.n_heads * self.head_dim],
            BlockId::Gate | BlockId::Up => vec![ff, h],
            BlockId::Down => vec![h, ff],
        }
    }

    fn model_shape(&self, name: &str) -> Option<Vec<usize>> {
        match name {
            EMBED | LM_HEAD => Some(vec![self.vocab, self.hidden]),
            FINAL_NORM => Some(vec![self.hidden]),
            _ => None,
        }
    }
}

/// The nine per-layer blocks, in transport-flow processing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockId {
    PreNorm,
    Q,
    K,
    V,
    O,
    PostNorm,
    Gate,
    Up,
    Down,
}

impl BlockId {
    pub const ALL: [BlockId; 9] = [
        BlockId::PreNorm,
        BlockId::Q,
        BlockId::K,
        BlockId::V,
        BlockId::O,
        BlockId::PostNorm,
        BlockId::Gate,
        BlockId::Up,
        BlockId::Down,
    ];

    /// Name suffix after `layers.{i}.`.
    pub fn suffix(self) -> &'static str {
        match self {
            BlockId::PreNorm => "norm.attn",
            BlockId::Q => "attn.q",
            BlockId::K => "attn.k",
            BlockId::V => "attn.v",
            BlockId::O => "attn.o",
            BlockId::PostNorm => "norm.mlp",
            BlockId::Gate => "mlp.gate",
            BlockId::Up => "mlp.up",
            BlockId::Down => "mlp.down",
        }
    }

    pub fn from_suffix(s: &str) -> Option<BlockId> {
        BlockId::ALL.into_iter().find(|b| b.suffix() == s)
    }

    pub fn is_norm(self) -> bool {
        matches!(self, BlockId::PreNorm | BlockId::PostNorm)
    }

    pub fn tensor_name(self, layer: usize) -> String {
        format!("layers.{layer}.{}", self.suffix())
    }
}

/// Parses `layers.{i}.{suffix}` into `(i, block)`.
pub fn parse_layer_name(name: &str) -> Option<(usize, BlockId)> {
    let rest = name.strip_prefix("layers.")?;
    let (idx, suffix) = rest.split_once('.')?;
    if idx.starts_with('0') || idx.starts_with('+') {
        return None;
    }
    Some((idx.parse().ok()?, BlockId::from_suffix(suffix)?))
}

/// One decoder layer's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub w_q: Matrix2D,
    pub w_k: Matrix2D,
    pub w_v: Matrix2D,
    pub w_o: Matrix2D,
    pub w_gate: Matrix2D,
    pub w_up: Matrix2D,
    pub w_down: Matrix2D,
    pub norm_attn: Vector1D,
    pub norm_mlp: Vector1D,
}

impl LayerWeights {
    /// The matrix for `block`, or `None` for the two norm blocks.
    pub fn matrix(&self, block: BlockId) -> Option<&Matrix2D> {
        match block {
            BlockId::Q => Some(&self.w_q),
            BlockId::K => Some(&self.w_k),
            BlockId::V => Some(&self.w_v),
            BlockId::O => Some(&self.w_o),
            BlockId::Gate => Some(&self.w_gate),
            BlockId::Up => Some(&self.w_up),
            BlockId::Down => Some(&self.w_down),
            BlockId::PreNorm | BlockId::PostNorm => None,
        }
    }

    pub fn matrix_mut(&mut self, block: BlockId) -> Option<&mut Matrix2D> {
        match block {
            BlockId::Q => Some(&mut self.w_q),
            BlockId::K => Some(&mut self.w_k),
            BlockId::V => Some(&mut self.w_v),
            BlockId::O => Some(&mut self.w_o),
            BlockId::Gate => Some(&mut self.w_gate),
            BlockId::Up => Some(&mut self.w_up),
            BlockId::Down => Some(&mut self.w_down),
            BlockId::PreNorm | BlockId::PostNorm => None,
        }
    }

    pub fn norm(&self, block: BlockId) -> Option<&Vector1D> {
        match block {
            BlockId::PreNorm => Some(&self.norm_attn),
            BlockId::PostNorm => Some(&self.norm_mlp),
            _ => None,
        }
    }

    pub fn norm_mut(&mut self, block: BlockId) -> Option<&mut Vector1D> {
        match block {
            BlockId::PreNorm => Some(&mut self.norm_attn),
            BlockId::PostNorm => Some(&mut self.norm_mlp),
            _ => None,
        }
    }

    pub fn block_shape(&self, block: BlockId) -> Vec<usize> {
        match (self.matrix(block), self.norm(block)) {
            (Some(m), _) => vec![m.rows(), m.cols()],
            (_, Some(v)) => vec![v.len()],
            _ => unreachable!(),
        }
    }

    pub fn check_shapes(&self, cfg: &ModelConfig, layer: usize) -> Result<(), ArchiveError> {
        for b in BlockId::ALL {
            let expected = cfg.block_shape(b);
            let actual = self.block_shape(b);
            if expected != actual {
                return Err(ArchiveError::ShapeMismatch {
                    name: b.tensor_name(layer),
                    expected,
                    actual,
                });
            }
        }
        Ok(())
    }

    /// Copy of this layer with the attention output and MLP down projections zeroed.
    pub fn zero_initialized(&self) -> LayerWeights {
        let mut out = self.clone();
        out.w_o = Matrix2D::zeros(self.w_o.rows(), self.w_o.cols());
        out.w_down = Matrix2D::zeros(self.w_down.rows(), self.w_down.cols());
        out
    }

    fn block_values(&self, block: BlockId) -> &[f64] {
        match (self.matrix(block), self.norm(block)) {
            (Some(m), _) => m.data(),
            (_, Some(v)) => v.data(),
            _ => unreachable!(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorEntry {
    pub fn matrix(name: impl Into<String>, m: &Matrix2D) -> Self {
        Self {
            name: name.into(),
            shape: vec![m.rows(), m.cols()],
            data: m.data().to_vec(),
        }
    }

    pub fn vector(name: impl Into<String>, v: &Vector1D) -> Self {
        Self {
            name: name.into(),
            shape: vec![v.len()],
            data: v.data().to_vec(),
        }
    }

    fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// SHA-256 over the little-endian `f32` payload, first 16 hex digits.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.data {
            h.update((*v as f32).to_le_bytes());
        }
        h.finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// A checkpoint: config plus an ordered list of named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorArchive {
    config: ModelConfig,
    entries: Vec<TensorEntry>,
    index: BTreeMap<String, usize>,
}

impl TensorArchive {
    /// Checks entry-level invariants only (unique names, payload sizes, finiteness).
    /// Naming-convention completeness is checked by [`TensorArchive::validate`].
    pub fn new(config: ModelConfig, entries: Vec<TensorEntry>) -> Result<Self, ArchiveError> {
        config.validate()?;
        if entries.is_empty() {
            return Err(ArchiveError::Empty);
        }
        let mut index = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.name.clone(), i).is_some() {
                return Err(ArchiveError::DuplicateName(e.name.clone()));
            }
            if e.numel() != e.data.len() {
                return Err(ArchiveError::PayloadSize {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    expected: e.numel(),
                    actual: e.data.len(),
                });
            }
            if let Some(index) = e.data.iter().position(|v| !v.is_finite()) {
                return Err(ArchiveError::NonFinite {
                    name: e.name.clone(),
                    index,
                });
            }
        }
        Ok(Self {
            config,
            entries,
            index,
        })
    }

    /// Canonical archive: embed, layers 1..=n in block order, final norm, head.
    pub fn from_parts(
        mut config: ModelConfig,
        embed: &Matrix2D,
        layers: &[LayerWeights],
        final_norm: &Vector1D,
        lm_head: &Matrix2D,
    ) -> Result<Self, ArchiveError> {
        config.n_layers = layers.len();
        let mut entries = Vec::with_capacity(layers.len() * 9 + 3);
        entries.push(TensorEntry::matrix(EMBED, embed));
        for (i, layer) in layers.iter().enumerate() {
            for b in BlockId::ALL {
                entries.push(TensorEntry {
                    name: b.tensor_name(i + 1),
                    shape: layer.block_shape(b),
                    data: layer.block_values(b).to_vec(),
                });
            }
        }
        entries.push(TensorEntry::vector(FINAL_NORM, final_norm));
        entries.push(TensorEntry::matrix(LM_HEAD, lm_head));
        let archive = Self::new(config, entries)?;
        archive.validate()?;
        Ok(archive)
    }

    /// Full structural check: every expected tensor present with the
    /// configured shape, and nothing outside the naming convention.
    pub fn validate(&self) -> Result<(), ArchiveError> {
        let cfg = &self.config;
        let mut expected: Vec<(String, Vec<usize>)> = Vec::new();
        expected.push((EMBED.into(), cfg.model_shape(EMBED).unwrap()));
        for i in 1..=cfg.n_layers {
            for b in BlockId::ALL {
                expected.push((b.tensor_name(i), cfg.block_shape(b)));
            }
        }
        expected.push((FINAL_NORM.into(), cfg.model_shape(FINAL_NORM).unwrap()));
        expected.push((LM_HEAD.into(), cfg.model_shape(LM_HEAD).unwrap()));

        let known: HashSet<&str> = expected.iter().map(|(n, _)| n.as_str()).collect();
        for e in &self.entries {
            if !known.contains(e.name.as_str()) {
                return Err(ArchiveError::UnknownTensor(e.name.clone()));
            }
        }
        for (name, shape) in expected {
            let e = self.entry(&name).ok_or(ArchiveError::MissingTensor(name.clone()))?;
            if e.shape != shape {
                return Err(ArchiveError::ShapeMismatch {
                    name,
                    expected: shape,
                    actual: e.shape.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn entries(&self) -> &[TensorEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Option<&TensorEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    /// Removes a tensor by name; returns it if present.
    pub fn remove(&mut self, name: &str) -> Option<TensorEntry> {
        let i = self.index.remove(name)?;
        let e = self.entries.remove(i);
        for v in self.index.values_mut() {
            if *v > i {
                *v -= 1;
            }
        }
        Some(e)
    }

    fn matrix_entry(&self, name: &str) -> Result<Matrix2D, ArchiveError> {
        let e = self
            .entry(name)
            .ok_or_else(|| ArchiveError::MissingTensor(name.to_string()))?;
        match e.shape.as_slice() {
            &[r, c] => Ok(Matrix2D::from_vec(r, c, e.data.clone()).map_err(|err| tensor_err(name, err))?),
            other => Err(ArchiveError::ShapeMismatch {
                name: name.to_string(),
                expected: vec![0, 0],
                actual: other.to_vec(),
            }),
        }
    }

    fn vector_entry(&self, name: &str) -> Result<Vector1D, ArchiveError> {
        let e = self
            .entry(name)
            .ok_or_else(|| ArchiveError::MissingTensor(name.to_string()))?;
        if e.shape.len() != 1 {
            return Err(ArchiveError::ShapeMismatch {
                name: name.to_string(),
                expected: vec![self.config.hidden],
                actual: e.shape.clone(),
            });
        }
        Vector1D::from_vec(e.data.clone()).map_err(|err| tensor_err(name, err))
    }

    pub fn embed(&self) -> Result<Matrix2D, ArchiveError> {
        self.matrix_entry(EMBED)
    }

    pub fn final_norm(&self) -> Result<Vector1D, ArchiveError> {
        self.vector_entry(FINAL_NORM)
    }

    pub fn lm_head(&self) -> Result<Matrix2D, ArchiveError> {
        self.matrix_entry(LM_HEAD)
    }

    /// Assembles layer `i` (1-based).
    pub fn layer_view(&self, i: usize) -> Result<LayerWeights, ArchiveError> {
        if i == 0 || i > self.config.n_layers {
            return Err(ArchiveError::LayerIndex {
                index: i,
                n_layers: self.config.n_layers,
            });
        }
        let m = |b: BlockId| self.matrix_entry(&b.tensor_name(i));
        let v = |b: BlockId| self.vector_entry(&b.tensor_name(i));
        let layer = LayerWeights {
            norm_attn: v(BlockId::PreNorm)?,
            w_q: m(BlockId::Q)?,
            w_k: m(BlockId::K)?,
            w_v: m(BlockId::V)?,
            w_o: m(BlockId::O)?,
            norm_mlp: v(BlockId::PostNorm)?,
            w_gate: m(BlockId::Gate)?,
            w_up: m(BlockId::Up)?,
            w_down: m(BlockId::Down)?,
        };
        layer.check_shapes(&self.config, i)?;
        Ok(layer)
    }

    pub fn layers(&self) -> Result<Vec<LayerWeights>, ArchiveError> {
        (1..=self.config.n_layers).map(|i| self.layer_view(i)).collect()
    }

    /// Same archive with every value rounded to `f32`, as it would be after a
    /// write/read cycle.
    pub fn rounded_to_f32(&self) -> TensorArchive {
        let mut out = self.clone();
        for e in &mut out.entries {
            for v in &mut e.data {
                *v = *v as f32 as f64;
            }
        }
        out
    }
}

fn tensor_err(name: &str, err: TensorError) -> ArchiveError {
    match err {
        TensorError::NonFinite { index, .. } => ArchiveError::NonFinite {
            name: name.to_string(),
            index,
        },
        other => ArchiveError::Header(format!("tensor `{name}`: {other}")),
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<HeaderTensor>,
}

#[derive(Serialize, Deserialize)]
struct HeaderTensor {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

fn align_up(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

/// Serializes an archive to the DEUS1 byte layout.
pub fn encode_archive(archive: &TensorArchive) -> Result<Vec<u8>, ArchiveError> {
    archive.validate()?;
    let mut tensors = Vec::with_capacity(archive.entries.len());
    let mut cursor = 0usize;
    for e in &archive.entries {
        cursor = align_up(cursor);
        tensors.push(HeaderTensor {
            name: e.name.clone(),
            shape: e.shape.clone(),
            dtype: "f32".into(),
            offset: cursor as u64,
        });
        cursor += e.data.len() * 4;
    }
    let header = serde_json::to_vec(&Header {
        config: archive.config.clone(),
        tensors,
    })
    .map_err(|e| ArchiveError::Header(e.to_string()))?;

    let data_start = align_up(MAGIC.len() + 8 + header.len());
    let mut out = Vec::with_capacity(data_start + cursor);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for e in &archive.entries {
        let used = out.len().saturating_sub(data_start);
        out.resize(data_start + align_up(used), 0);
        for v in &e.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses the DEUS1 byte layout.
pub fn decode_archive(bytes: &[u8]) -> Result<TensorArchive, ArchiveError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ArchiveError::BadMagic);
    }
    let len_end = MAGIC.len() + 8;
    let len_bytes = bytes
        .get(MAGIC.len()..len_end)
        .ok_or_else(|| ArchiveError::Truncated("header length".into()))?;
    let header_len = u64::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
    let header_end = len_end
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| ArchiveError::Truncated("header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[len_end..header_end])
        .map_err(|e| ArchiveError::Header(e.to_string()))?;
    let data_start = align_up(header_end);

    let mut entries = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        if t.dtype != "f32" {
            return Err(ArchiveError::Header(format!(
                "tensor `{}` has unsupported dtype `{}`",
                t.name, t.dtype
            )));
        }
        if !(t.offset as usize).is_multiple_of(ALIGN) {
            return Err(ArchiveError::Header(format!(
                "tensor `{}` offset {} is not {ALIGN}-byte aligned",
                t.name, t.offset
            )));
        }
        let numel: usize = t.shape.iter().product();
        let start = data_start + t.offset as usize;
        let end = start + numel * 4;
        let raw = bytes.get(start..end).ok_or_else(|| {
            ArchiveError::Truncated(format!(
                "tensor `{}` needs bytes {start}..{end}, file has {}",
                t.name,
                bytes.len()
            ))
        })?;
        let mut data = Vec::with_capacity(numel);
        for (index, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(ArchiveError::NonFinite { name: t.name, index });
            }
            data.push(v as f64);
        }
        entries.push(TensorEntry {
            name: t.name,
            shape: t.shape,
            data,
        });
    }
    let archive = TensorArchive::new(header.config, entries)?;
    archive.validate()?;
    Ok(archive)
}

/// Writes atomically: temp file in the target directory, then rename.
pub fn write_archive(path: impl AsRef<Path>, archive: &TensorArchive) -> Result<(), ArchiveError> {
    let bytes = encode_archive(archive)?;
    write_atomic(path.as_ref(), &bytes)?;
    Ok(())
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<TensorArchive, ArchiveError> {
    decode_archive(&fs::read(path)?)
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
