#![allow(dead_code)]

use deus_core::checkpoint::{BlockId, LayerWeights, ModelConfig};
use deus_core::tmf::FusedLayer;
use deus_core::{Matrix2D, SeededRng, Vector1D};

/// n=8, h=64, 4 heads of 16, d_ff=172, vocab=256.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        n_layers: 8,
        hidden: 64,
        n_heads: 4,
        n_kv_heads: 4,
        head_dim: 16,
        d_ff: 172,
        vocab: 256,
        rope_theta: 10000.0,
        rms_eps: 1e-5,
    }
}

/// Independent permutation inside each consecutive `group`-sized block.
pub fn within_group_permutation(rng: &mut SeededRng, n: usize, group: usize) -> Vec<usize> {
    (0..n / group)
        .flat_map(|b| rng.permutation(group).into_iter().map(move |i| b * group + i))
        .collect()
}

/// A layer with unit-normal weights and its neuron-permuted twin.
///
/// Q/K/V rows are shuffled within heads, O rows by `p_h` (the hidden
/// permutation), Gate/Up rows by `p_ff` with columns following `p_h`, and
/// Down follows both.
pub struct Twin {
    pub base: LayerWeights,
    pub twin: LayerWeights,
    pub p_h: Vec<usize>,
    pub p_ff: Vec<usize>,
}

pub fn permuted_twin(cfg: &ModelConfig, seed: u64) -> Twin {
    let mut rng = SeededRng::new(seed);
    let (h, q, kv, ff) = (cfg.hidden, cfg.n_heads * cfg.head_dim, cfg.kv_dim(), cfg.d_ff);
    let base = LayerWeights {
        norm_attn: Vector1D::filled(h, 1.0),
        w_q: rng.normal_matrix(q, h, 1.0),
        w_k: rng.normal_matrix(kv, h, 1.0),
        w_v: rng.normal_matrix(kv, h, 1.0),
        w_o: rng.normal_matrix(h, q, 1.0),
        norm_mlp: Vector1D::filled(h, 1.0),
        w_gate: rng.normal_matrix(ff, h, 1.0),
        w_up: rng.normal_matrix(ff, h, 1.0),
        w_down: rng.normal_matrix(h, ff, 1.0),
    };
    let p_q = within_group_permutation(&mut rng, q, cfg.head_dim);
    let p_k = within_group_permutation(&mut rng, kv, cfg.head_dim);
    let p_v = within_group_permutation(&mut rng, kv, cfg.head_dim);
    let p_h = rng.permutation(h);
    let p_ff = rng.permutation(ff);
    let twin = LayerWeights {
        norm_attn: base.norm_attn.clone(),
        w_q: base.w_q.select_rows(&p_q),
        w_k: base.w_k.select_rows(&p_k),
        w_v: base.w_v.select_rows(&p_v),
        w_o: base.w_o.select_rows(&p_h),
        norm_mlp: base.norm_mlp.clone(),
        w_gate: base.w_gate.select_cols(&p_h).select_rows(&p_ff),
        w_up: base.w_up.select_cols(&p_h).select_rows(&p_ff),
        w_down: base.w_down.select_rows(&p_h).select_cols(&p_ff),
    };
    Twin {
        base,
        twin,
        p_h,
        p_ff,
    }
}

pub fn rms(a: &Matrix2D, b: &Matrix2D) -> f64 {
    let diff = a.sub(b).unwrap();
    (diff.data().iter().map(|v| v * v).sum::<f64>() / diff.data().len() as f64).sqrt()
}

/// Checks the flow wiring of one fusion entrywise; returns a description of
/// the first violation.
pub fn wiring_violation(fused: &FusedLayer) -> Option<String> {
    let plans = &fused.plans;
    let t_in = |b: BlockId| plans.t_in(b).ok_or(format!("no plan for {b:?}"));
    let check = || -> Result<(), String> {
        let t_o = plans.t_out(BlockId::O).ok_or("no plan for O")?;
        for block in [BlockId::Gate, BlockId::Up] {
            if t_in(block)? != t_o {
                return Err(format!("t_in({block:?}) != t_out(O)"));
            }
        }
        let half = Matrix2D::identity(t_o.size()).add(&t_o.t_scaled).unwrap().scale(0.5);
        if t_in(BlockId::PostNorm)?.t_scaled != half {
            return Err("t_in(PostNorm) != (I + t_out(O)) / 2".into());
        }
        for block in [BlockId::Q, BlockId::K, BlockId::V] {
            let t = &t_in(block)?.t_scaled;
            if *t != Matrix2D::identity(t.rows()) {
                return Err(format!("t_in({block:?}) != I"));
            }
        }
        Ok(())
    };
    check().err()
}
