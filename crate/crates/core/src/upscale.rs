//! Expansion planning and execution.
//!
//! A plan lists, in expanded order, where every output layer comes from.
//! Interpolation methods (OpT-DeUS, Avg-DeUS) place a new layer `f'_i`
//! directly after base layer `f_i`; LLaMA-PRO appends zeroed copies after
//! each group; SOLAR concatenates the bottom and top `m` base layers.
//!
//! All layer indices are 1-based. Index cut points `n/4`, `n/2` and `3n/4`
//! use floor division.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{ArchiveError, LayerWeights, TensorArchive};
use crate::tmf::{fuse_avg, fuse_layers, FuseError, FuseOptions, FusedLayer, FusionReport};

#[derive(Debug, Error)]
pub enum UpscaleError {
    #[error("ratio must be in (0, 0.5], got {0}")]
    InvalidRatio(f64),
    #[error("plan inserts no layers (n = {n}, ratio = {ratio})")]
    NoNewLayers { n: usize, ratio: f64 },
    #[error("strategy {strategy} offers {available} positions for n = {n}, need {needed}")]
    StrategyTooSmall {
        strategy: PositionStrategy,
        n: usize,
        needed: usize,
        available: usize,
    },
    #[error("g ({g}) x m ({m}) != n ({n})")]
    GroupMismatch { g: usize, m: usize, n: usize },
    #[error("p ({p}) must be in 1..={m}")]
    CopyCount { p: usize, m: usize },
    #[error("SOLAR needs n/2 <= m <= n, got m = {m}, n = {n}")]
    SolarRange { m: usize, n: usize },
    #[error("not implemented: {0}")]
    NotImplemented(&'static str),
    #[error("{0} is not an interpolation method")]
    NotInterpolation(Method),
    #[error("plan was built for {plan} base layers, archive has {archive}")]
    PlanMismatch { plan: usize, archive: usize },
    #[error("unknown {kind} `{value}`")]
    Parse { kind: &'static str, value: String },
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("fusing base layers {layer} and {}: {source}", layer + 1)]
    Fuse {
        layer: usize,
        #[source]
        source: FuseError,
    },
}

/// Where interpolation methods may insert new layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionStrategy {
    Btm,
    Mid,
    Top,
    #[serde(rename = "tb")]
    TB,
}

impl PositionStrategy {
    pub const ALL: [PositionStrategy; 4] = [
        PositionStrategy::Btm,
        PositionStrategy::Mid,
        PositionStrategy::Top,
        PositionStrategy::TB,
    ];

    /// Base indices `i` (1-based, `i < n`) eligible for `f'_i`.
    pub fn index_set(self, n: usize) -> Vec<usize> {
        let (quarter, half, three_q) = (n / 4, n / 2, 3 * n / 4);
        (1..n)
            .filter(|&i| match self {
                PositionStrategy::Btm => i <= half,
                PositionStrategy::Mid => quarter < i && i <= three_q,
                PositionStrategy::Top => half <= i,
                PositionStrategy::TB => i <= quarter || three_q <= i,
            })
            .collect()
    }
}

impl fmt::Display for PositionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PositionStrategy::Btm => "btm",
            PositionStrategy::Mid => "mid",
            PositionStrategy::Top => "top",
            PositionStrategy::TB => "tb",
        })
    }
}

impl FromStr for PositionStrategy {
    type Err = UpscaleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "btm" | "bottom" => Ok(PositionStrategy::Btm),
            "mid" | "middle" => Ok(PositionStrategy::Mid),
            "top" => Ok(PositionStrategy::Top),
            "tb" | "t&b" | "top-bottom" => Ok(PositionStrategy::TB),
            _ => Err(UpscaleError::Parse {
                kind: "strategy",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    OptDeus,
    AvgDeus,
    LlamaPro,
    Solar,
    /// Needs a trained auxiliary network; always errors.
    Lesa,
}

impl Method {
    pub fn is_interpolation(self) -> bool {
        matches!(self, Method::OptDeus | Method::AvgDeus)
    }

    /// Only the inserted layers are trained; everything else stays frozen.
    pub fn is_progressive(self) -> bool {
        !matches!(self, Method::Solar)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::OptDeus => "opt-deus",
            Method::AvgDeus => "avg-deus",
            Method::LlamaPro => "llama-pro",
            Method::Solar => "solar",
            Method::Lesa => "lesa",
        })
    }
}

impl FromStr for Method {
    type Err = UpscaleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "opt-deus" | "optdeus" => Ok(Method::OptDeus),
            "avg-deus" | "avgdeus" => Ok(Method::AvgDeus),
            "llama-pro" | "llamapro" => Ok(Method::LlamaPro),
            "solar" => Ok(Method::Solar),
            "lesa" => Ok(Method::Lesa),
            _ => Err(UpscaleError::Parse {
                kind: "method",
                value: s.to_string(),
            }),
        }
    }
}

/// Provenance of one layer of the expanded model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSource {
    /// Base layer `index`, unchanged.
    Base { index: usize },
    /// OT fusion of base layers `index` and `index + 1`.
    Fused { index: usize },
    /// Plain average of base layers `index` and `index + 1`.
    Averaged { index: usize },
    /// Copy of base layer `index` with O and Down zeroed.
    ZeroedCopy { index: usize },
}

impl LayerSource {
    pub fn is_new(self) -> bool {
        !matches!(self, LayerSource::Base { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionPlan {
    pub method: Method,
    pub strategy: Option<PositionStrategy>,
    pub n_base: usize,
    /// Base indices each new layer follows (interpolation and LLaMA-PRO).
    pub insert_after: Vec<usize>,
    pub k: usize,
    pub m_total: usize,
    /// 1-based expanded indices of layers updated during training.
    pub trainable: Vec<usize>,
    pub layout: Vec<LayerSource>,
}

impl ExpansionPlan {
    fn from_layout(
        method: Method,
        strategy: Option<PositionStrategy>,
        n_base: usize,
        insert_after: Vec<usize>,
        layout: Vec<LayerSource>,
    ) -> Self {
        let m_total = layout.len();
        let trainable = if method.is_progressive() {
            layout
                .iter()
                .enumerate()
                .filter(|(_, s)| s.is_new())
                .map(|(i, _)| i + 1)
                .collect()
        } else {
            (1..=m_total).collect()
        };
        Self {
            method,
            strategy,
            n_base,
            insert_after,
            k: m_total - n_base,
            m_total,
            trainable,
            layout,
        }
    }

    /// Switches an interpolation plan between OpT-DeUS and Avg-DeUS.
    pub fn with_method(self, method: Method) -> Result<Self, UpscaleError> {
        if !method.is_interpolation() {
            return Err(UpscaleError::NotInterpolation(method));
        }
        if !self.method.is_interpolation() {
            return Err(UpscaleError::NotInterpolation(self.method));
        }
        let layout = interpolation_layout(method, self.n_base, &self.insert_after);
        Ok(Self::from_layout(method, self.strategy, self.n_base, self.insert_after, layout))
    }
}

fn interpolation_layout(method: Method, n: usize, insert_after: &[usize]) -> Vec<LayerSource> {
    let mut layout = Vec::with_capacity(n + insert_after.len());
    for i in 1..=n {
        layout.push(LayerSource::Base { index: i });
        for _ in insert_after.iter().filter(|&&a| a == i) {
            layout.push(match method {
                Method::AvgDeus => LayerSource::Averaged { index: i },
                _ => LayerSource::Fused { index: i },
            });
        }
    }
    layout
}

/// Plans an OpT-DeUS interpolation of `round(ratio · n)` new layers.
///
/// When `k` equals the size of the strategy's index set the whole set is
/// used; otherwise `k` positions are taken at stride `|set| / k` starting
/// from the first element.
pub fn plan_interpolation(
    n: usize,
    ratio: f64,
    strategy: PositionStrategy,
) -> Result<ExpansionPlan, UpscaleError> {
    if !(ratio > 0.0 && ratio <= 0.5) {
        return Err(UpscaleError::InvalidRatio(ratio));
    }
    let k = (ratio * n as f64).round() as usize;
    if k == 0 {
        return Err(UpscaleError::NoNewLayers { n, ratio });
    }
    let set = strategy.index_set(n);
    if set.len() < k {
        return Err(UpscaleError::StrategyTooSmall {
            strategy,
            n,
            needed: k,
            available: set.len(),
        });
    }
    let insert_after: Vec<usize> = (0..k).map(|j| set[j * set.len() / k]).collect();
    let layout = interpolation_layout(Method::OptDeus, n, &insert_after);
    Ok(ExpansionPlan::from_layout(
        Method::OptDeus,
        Some(strategy),
        n,
        insert_after,
        layout,
    ))
}

/// `g` groups of `m` layers; after each group, zeroed copies of its top `p` layers.
pub fn plan_llama_pro(n: usize, g: usize, m: usize, p: usize) -> Result<ExpansionPlan, UpscaleError> {
    if g == 0 || m == 0 || g * m != n {
        return Err(UpscaleError::GroupMismatch { g, m, n });
    }
    if p == 0 || p > m {
        return Err(UpscaleError::CopyCount { p, m });
    }
    let mut layout = Vec::with_capacity(n + g * p);
    let mut insert_after = Vec::with_capacity(g * p);
    for group in 0..g {
        let top = (group + 1) * m;
        layout.extend((group * m + 1..=top).map(|index| LayerSource::Base { index }));
        layout.extend((top - p + 1..=top).map(|index| LayerSource::ZeroedCopy { index }));
        insert_after.extend(std::iter::repeat_n(top, p));
    }
    Ok(ExpansionPlan::from_layout(Method::LlamaPro, None, n, insert_after, layout))
}

/// Layers `1..=m` followed by `n-m+1..=n`; `2m` layers in total.
pub fn plan_solar(n: usize, m: usize) -> Result<ExpansionPlan, UpscaleError> {
    if m == 0 || m > n || 2 * m < n {
        return Err(UpscaleError::SolarRange { m, n });
    }
    let layout = (1..=m)
        .chain(n - m + 1..=n)
        .map(|index| LayerSource::Base { index })
        .collect();
    Ok(ExpansionPlan::from_layout(Method::Solar, None, n, Vec::new(), layout))
}

pub fn plan_lesa() -> Result<ExpansionPlan, UpscaleError> {
    Err(UpscaleError::NotImplemented(
        "LESA requires auxiliary-network training",
    ))
}

/// Result of [`expand_with_report`].
#[derive(Debug, Clone)]
pub struct Expansion {
    pub archive: TensorArchive,
    pub fusion_reports: Vec<FusionReport>,
}

/// Builds the expanded archive described by `plan`.
pub fn expand(
    archive: &TensorArchive,
    plan: &ExpansionPlan,
    opts: &FuseOptions,
) -> Result<TensorArchive, UpscaleError> {
    Ok(expand_with_report(archive, plan, opts)?.archive)
}

/// Like [`expand`], also returning per-fusion plan diagnostics.
pub fn expand_with_report(
    archive: &TensorArchive,
    plan: &ExpansionPlan,
    opts: &FuseOptions,
) -> Result<Expansion, UpscaleError> {
    if plan.method == Method::Lesa {
        plan_lesa()?;
    }
    let n = archive.n_layers();
    if plan.n_base != n {
        return Err(UpscaleError::PlanMismatch {
            plan: plan.n_base,
            archive: n,
        });
    }
    let base = archive.layers()?;
    let cfg = archive.config();

    let fusion_indices: Vec<usize> = plan
        .layout
        .iter()
        .filter_map(|s| match s {
            LayerSource::Fused { index } => Some(*index),
            _ => None,
        })
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let fused: BTreeMap<usize, FusedLayer> = fusion_indices
        .par_iter()
        .map(|&i| {
            let pair = base.get(i - 1).zip(base.get(i));
            let (a, b) = pair.ok_or(UpscaleError::PlanMismatch {
                plan: i + 1,
                archive: n,
            })?;
            fuse_layers(a, b, cfg, opts)
                .map(|f| (i, f))
                .map_err(|source| UpscaleError::Fuse { layer: i, source })
        })
        .collect::<Result<_, _>>()?;

    let layer = |i: usize| -> Result<&LayerWeights, UpscaleError> {
        base.get(i.wrapping_sub(1)).ok_or(UpscaleError::PlanMismatch {
            plan: i,
            archive: n,
        })
    };
    let mut layers = Vec::with_capacity(plan.layout.len());
    for source in &plan.layout {
        layers.push(match *source {
            LayerSource::Base { index } => layer(index)?.clone(),
            LayerSource::Fused { index } => fused[&index].weights.clone(),
            LayerSource::Averaged { index } => fuse_avg(layer(index)?, layer(index + 1)?)
                .map_err(|source| UpscaleError::Fuse { layer: index, source })?,
            LayerSource::ZeroedCopy { index } => layer(index)?.zero_initialized(),
        });
    }

    let expanded = TensorArchive::from_parts(
        cfg.clone(),
        &archive.embed()?,
        &layers,
        &archive.final_norm()?,
        &archive.lm_head()?,
    )?;
    Ok(Expansion {
        archive: expanded,
        fusion_reports: fused.iter().map(|(i, f)| f.report(*i)).collect(),
    })
}

pub fn expand_llama_pro(
    archive: &TensorArchive,
    g: usize,
    m: usize,
    p: usize,
) -> Result<TensorArchive, UpscaleError> {
    let plan = plan_llama_pro(archive.n_layers(), g, m, p)?;
    expand(archive, &plan, &FuseOptions::default())
}

pub fn expand_solar(archive: &TensorArchive, m: usize) -> Result<TensorArchive, UpscaleError> {
    let plan = plan_solar(archive.n_layers(), m)?;
    expand(archive, &plan, &FuseOptions::default())
}

/// Which expanded layers are updated during progressive training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeMask {
    pub trainable: Vec<usize>,
    pub frozen: Vec<usize>,
    pub convention: String,
}

pub fn freeze_mask(plan: &ExpansionPlan) -> FreezeMask {
    let frozen = (1..=plan.m_total)
        .filter(|i| plan.trainable.binary_search(i).is_err())
        .collect();
    FreezeMask {
        trainable: plan.trainable.clone(),
        frozen,
        convention: "1-based-expanded".into(),
    }
}
