//! Layer fusion: build a new layer from two adjacent base layers.
//!
//! [`fuse_layers`] walks the nine blocks in [`BlockId`] order. Each block
//! first has its input space aligned by a plan `t_in` chosen from the flow
//! rules below, then its output neurons are matched to the next layer's by
//! optimal transport (`t_out`), and the aligned block is averaged with its
//! counterpart. The attention output and MLP down projections are zeroed at
//! the end, which turns the new layer into an exact identity map on the
//! residual stream.
//!
//! Flow rules for `t_in`:
//!
//! | block     | `t_in`                                  |
//! |-----------|-----------------------------------------|
//! | PreNorm   | `I` (layer entrance)                    |
//! | Q, K, V   | `t_out(PreNorm)` = `I`                  |
//! | O         | `I`                                     |
//! | PostNorm  | `½ (t_entrance + t_out(O))`             |
//! | Gate, Up  | `t_out(O)`                              |
//! | Down      | `I`                                     |
//!
//! Norm blocks are not solved; they pass `t_in` through as their `t_out`.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::checkpoint::{ArchiveError, BlockId, LayerWeights, ModelConfig};
use crate::sinkhorn::{build_cost, harden_matrix, scale_plan, sinkhorn, OtError, OtParams, ScaledPlan, TransportPlan};
use crate::tensor::{Matrix2D, TensorError};

#[derive(Debug, Error)]
pub enum FuseError {
    #[error("layer shape error: {0}")]
    Shape(#[from] ArchiveError),
    #[error("block {block:?}: {source}")]
    Tensor {
        block: BlockId,
        #[source]
        source: TensorError,
    },
    #[error("block {block:?}: transport solve failed: {source}")]
    Ot {
        block: BlockId,
        #[source]
        source: OtError,
    },
}

/// Options for [`fuse_layers`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FuseOptions {
    pub ot: OtParams,
    /// Restrict Q/K/V transport to within-head blocks.
    pub head_blocked: bool,
    /// When false every plan is the identity (pure averaging).
    pub align: bool,
}

impl Default for FuseOptions {
    fn default() -> Self {
        Self {
            ot: OtParams::default(),
            head_blocked: false,
            align: true,
        }
    }
}

/// Per-block solver summary for the diagnostics dump.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanDiagnostics {
    pub entropy: f64,
    /// Fraction of rows whose argmax column picks that row back as its own argmax.
    pub mutual_argmax_fraction: f64,
    pub converged: bool,
    pub iterations: usize,
    pub effective_epsilon: f64,
}

impl PlanDiagnostics {
    fn from_plan(plan: &TransportPlan) -> Self {
        let t = &plan.t_raw;
        let row_arg: Vec<usize> = (0..t.rows()).map(|k| argmax(t.row(k))).collect();
        let col_arg: Vec<usize> = (0..t.cols())
            .map(|j| argmax(&(0..t.rows()).map(|k| t.get(k, j)).collect::<Vec<_>>()))
            .collect();
        let mutual = row_arg
            .iter()
            .enumerate()
            .filter(|&(k, &j)| col_arg[j] == k)
            .count();
        Self {
            entropy: plan.entropy(),
            mutual_argmax_fraction: mutual as f64 / t.rows() as f64,
            converged: plan.converged,
            iterations: plan.iterations_used,
            effective_epsilon: plan.effective_epsilon,
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockPlans {
    pub t_in: ScaledPlan,
    pub t_out: ScaledPlan,
    /// Present for blocks that ran an OT solve.
    pub diagnostics: Option<PlanDiagnostics>,
}

/// All plans used while fusing one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t_entrance: ScaledPlan,
    pub t_by_block: BTreeMap<BlockId, BlockPlans>,
}

impl FlowState {
    pub fn t_in(&self, block: BlockId) -> Option<&ScaledPlan> {
        self.t_by_block.get(&block).map(|p| &p.t_in)
    }

    pub fn t_out(&self, block: BlockId) -> Option<&ScaledPlan> {
        self.t_by_block.get(&block).map(|p| &p.t_out)
    }

    fn require_out(&self, block: BlockId) -> &ScaledPlan {
        self.t_out(block)
            .expect("flow order guarantees upstream block was processed")
    }

    /// Picks `t_in` for `block` from already processed blocks.
    fn resolve_t_in(&self, block: BlockId, cfg: &ModelConfig) -> Result<ScaledPlan, TensorError> {
        Ok(match block {
            BlockId::PreNorm => self.t_entrance.clone(),
            BlockId::Q | BlockId::K | BlockId::V => self.require_out(BlockId::PreNorm).clone(),
            BlockId::O => ScaledPlan::identity(cfg.n_heads * cfg.head_dim),
            BlockId::PostNorm => self.t_entrance.average(self.require_out(BlockId::O))?,
            BlockId::Gate | BlockId::Up => self.require_out(BlockId::O).clone(),
            BlockId::Down => ScaledPlan::identity(cfg.d_ff),
        })
    }
}

/// A new layer together with the plans that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedLayer {
    pub weights: LayerWeights,
    pub plans: FlowState,
    pub zeroed: [BlockId; 2],
}

fn check_pair(f_i: &LayerWeights, f_next: &LayerWeights, cfg: &ModelConfig) -> Result<(), FuseError> {
    f_i.check_shapes(cfg, 1)?;
    f_next.check_shapes(cfg, 2)?;
    Ok(())
}

/// Fuses `f_i` and `f_next` into a zero-initialized new layer.
pub fn fuse_layers(
    f_i: &LayerWeights,
    f_next: &LayerWeights,
    cfg: &ModelConfig,
    opts: &FuseOptions,
) -> Result<FusedLayer, FuseError> {
    check_pair(f_i, f_next, cfg)?;
    let mut state = FlowState {
        t_entrance: ScaledPlan::identity(cfg.hidden),
        t_by_block: BTreeMap::new(),
    };
    let mut fused = f_i.clone();

    for block in BlockId::ALL {
        let tensor_err = |source| FuseError::Tensor { block, source };
        let t_in = state.resolve_t_in(block, cfg).map_err(tensor_err)?;

        if let Some(gain) = f_i.norm(block) {
            let aligned = if t_in.is_identity() {
                gain.clone()
            } else {
                gain.transform_by_transpose(&t_in.t_scaled).map_err(tensor_err)?
            };
            let next = f_next.norm(block).expect("norm block");
            *fused.norm_mut(block).expect("norm block") = aligned.average(next).map_err(tensor_err)?;
            state.t_by_block.insert(
                block,
                BlockPlans {
                    t_out: t_in.clone(),
                    t_in,
                    diagnostics: None,
                },
            );
            continue;
        }

        let w = f_i.matrix(block).expect("matrix block");
        let w_next = f_next.matrix(block).expect("matrix block");
        let within = if t_in.is_identity() {
            w.clone()
        } else {
            w.matmul(&t_in.t_scaled).map_err(tensor_err)?
        };

        let (t_out, diagnostics) = if opts.align {
            let plan = solve_block(block, &within, w_next, cfg, opts)?;
            let scaled = scale_plan(&plan).map_err(|source| FuseError::Ot { block, source })?;
            (scaled, Some(PlanDiagnostics::from_plan(&plan)))
        } else {
            (ScaledPlan::identity(w.rows()), None)
        };
        let across = if t_out.is_identity() {
            within
        } else {
            t_out.t_scaled.t_matmul(&within).map_err(tensor_err)?
        };
        *fused.matrix_mut(block).expect("matrix block") = across.average(w_next).map_err(tensor_err)?;
        state.t_by_block.insert(
            block,
            BlockPlans {
                t_in,
                t_out,
                diagnostics,
            },
        );
    }

    Ok(FusedLayer {
        weights: fused.zero_initialized(),
        plans: state,
        zeroed: [BlockId::O, BlockId::Down],
    })
}

fn solve_block(
    block: BlockId,
    within: &Matrix2D,
    w_next: &Matrix2D,
    cfg: &ModelConfig,
    opts: &FuseOptions,
) -> Result<TransportPlan, FuseError> {
    let ot_err = |source| FuseError::Ot { block, source };
    let mut cost = build_cost(within, w_next)
        .map_err(ot_err)?
        .with_provenance(format!("f_i.{}", block.suffix()), format!("f_next.{}", block.suffix()));
    if opts.head_blocked && matches!(block, BlockId::Q | BlockId::K | BlockId::V) {
        cost = cost.head_blocked(cfg.head_dim).map_err(ot_err)?;
    }
    sinkhorn(&cost, &opts.ot).map_err(ot_err)
}

/// Entrywise mean of two layers, with no alignment and no zeroing.
pub fn fuse_avg(f_i: &LayerWeights, f_next: &LayerWeights) -> Result<LayerWeights, FuseError> {
    let mut out = f_i.clone();
    for block in BlockId::ALL {
        let tensor_err = |source| FuseError::Tensor { block, source };
        if let (Some(a), Some(b)) = (f_i.matrix(block), f_next.matrix(block)) {
            *out.matrix_mut(block).unwrap() = a.average(b).map_err(tensor_err)?;
        } else if let (Some(a), Some(b)) = (f_i.norm(block), f_next.norm(block)) {
            *out.norm_mut(block).unwrap() = a.average(b).map_err(tensor_err)?;
        }
    }
    Ok(out)
}

/// JSON-friendly diagnostics for one fused layer.
#[derive(Debug, Clone, Serialize)]
pub struct FusionReport {
    pub base_layer: usize,
    pub blocks: BTreeMap<String, BlockReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockReport {
    pub t_in_identity: bool,
    pub t_out_identity: bool,
    /// Agreement of the hardened `t_out` with the identity permutation, if it hardens.
    pub hardened_identity_fraction: Option<f64>,
    #[serde(flatten)]
    pub solve: Option<PlanDiagnostics>,
}

impl FusedLayer {
    pub fn report(&self, base_layer: usize) -> FusionReport {
        let blocks = self
            .plans
            .t_by_block
            .iter()
            .map(|(b, p)| {
                let hardened = harden_matrix(&p.t_out.t_scaled).ok().map(|perm| {
                    perm.iter().enumerate().filter(|&(k, &j)| k == j).count() as f64 / perm.len() as f64
                });
                (
                    b.suffix().to_string(),
                    BlockReport {
                        t_in_identity: p.t_in.is_identity(),
                        t_out_identity: p.t_out.is_identity(),
                        hardened_identity_fraction: hardened,
                        solve: p.diagnostics.clone(),
                    },
                )
            })
            .collect();
        FusionReport { base_layer, blocks }
    }
}

/// Whether a layer has both residual-branch output projections at zero.
pub fn is_zero_initialized(layer: &LayerWeights) -> bool {
    layer.w_o.is_zero() && layer.w_down.is_zero()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{SeededRng, Vector1D};

    fn negate_layer(layer: &LayerWeights) -> LayerWeights {
        let mut out = layer.clone();
        for b in BlockId::ALL {
            if let Some(m) = out.matrix_mut(b) {
                *m = m.scale(-1.0);
            }
            if let Some(v) = out.norm_mut(b) {
                *v = Vector1D::from_vec(v.data().iter().map(|x| -x).collect()).unwrap();
            }
        }
        out
    }

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            hidden: 8,
            n_heads: 2,
            n_kv_heads: 1,
            head_dim: 4,
            d_ff: 12,
            vocab: 11,
            rope_theta: 10000.0,
            rms_eps: 1e-5,
        }
    }

    fn layer(rng: &mut SeededRng) -> LayerWeights {
        LayerWeights {
            w_q: rng.normal_matrix(8, 8, 1.0),
            w_k: rng.normal_matrix(4, 8, 1.0),
            w_v: rng.normal_matrix(4, 8, 1.0),
            w_o: rng.normal_matrix(8, 8, 1.0),
            w_gate: rng.normal_matrix(12, 8, 1.0),
            w_up: rng.normal_matrix(12, 8, 1.0),
            w_down: rng.normal_matrix(8, 12, 1.0),
            norm_attn: Vector1D::from_vec(rng.normal_matrix(1, 8, 1.0).into_data()).unwrap(),
            norm_mlp: Vector1D::from_vec(rng.normal_matrix(1, 8, 1.0).into_data()).unwrap(),
        }
    }

    #[test]
    fn duplicated_layer_fuses_to_itself() {
        let mut rng = SeededRng::new(1);
        let f = layer(&mut rng);
        let opts = FuseOptions {
            ot: OtParams::with_epsilon(1e-3),
            ..FuseOptions::default()
        };
        let fused = fuse_layers(&f, &f, &cfg(), &opts).unwrap();
        for b in [BlockId::Q, BlockId::K, BlockId::V, BlockId::Gate, BlockId::Up] {
            let d = fused.weights.matrix(b).unwrap().max_abs_diff(f.matrix(b).unwrap()).unwrap();
            assert!(d < 1e-3, "{b:?}: {d}");
        }
        assert!(is_zero_initialized(&fused.weights));
    }

    #[test]
    fn avg_cases() {
        let mut rng = SeededRng::new(2);
        let f = layer(&mut rng);
        assert_eq!(fuse_avg(&f, &f).unwrap(), f);
        let z = fuse_avg(&f, &negate_layer(&f)).unwrap();
        for b in BlockId::ALL {
            assert!(z.matrix(b).is_none_or(Matrix2D::is_zero));
            assert!(z.norm(b).is_none_or(|v| v.data().iter().all(|&x| x == 0.0)));
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut rng = SeededRng::new(3);
        let f = layer(&mut rng);
        let mut g = f.clone();
        g.w_up = rng.normal_matrix(11, 8, 1.0);
        assert!(matches!(
            fuse_layers(&f, &g, &cfg(), &FuseOptions::default()),
            Err(FuseError::Shape(ArchiveError::ShapeMismatch { .. }))
        ));
    }

    #[test]
    fn norm_blocks_pass_t_in_through() {
        let mut rng = SeededRng::new(4);
        let (a, b) = (layer(&mut rng), layer(&mut rng));
        let fused = fuse_layers(&a, &b, &cfg(), &FuseOptions::default()).unwrap();
        for blk in [BlockId::PreNorm, BlockId::PostNorm] {
            assert_eq!(fused.plans.t_in(blk), fused.plans.t_out(blk));
            assert!(fused.plans.t_by_block[&blk].diagnostics.is_none());
        }
        let report = fused.report(1);
        assert_eq!(report.blocks.len(), 9);
        assert!(report.blocks["attn.q"].solve.is_some());
    }
}
