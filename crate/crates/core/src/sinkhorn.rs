//! Entropic optimal transport between the rows of two weight matrices.
//!
//! Each row is a neuron described by its weight vector; the cost between two
//! neurons is the Euclidean distance of those vectors and both marginals are
//! uniform. The solver works on log-domain scalings so that very small
//! regularization (1e-3 of the mean cost) does not underflow.

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{sq_dist, Matrix2D, TensorError, Vector1D};

pub const DEFAULT_EPSILON: f64 = 0.06;
pub const DEFAULT_MAX_ITER: usize = 2000;
pub const DEFAULT_TOL: f64 = 1e-9;
/// Largest size accepted by [`exact_ot_small`] (8! = 40320 assignments).
pub const EXACT_OT_MAX: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OtError {
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("epsilon too small: scalings became non-finite (effective epsilon {0:e})")]
    EpsilonTooSmall(f64),
    #[error("column mismatch: source rows have {src} columns, destination rows have {dst}")]
    ColumnMismatch { src: usize, dst: usize },
    #[error("empty cost matrix")]
    Empty,
    #[error("plan is {rows}x{cols}, expected square")]
    NonSquare { rows: usize, cols: usize },
    #[error("non-permutation plan: rows {first} and {second} both pick column {col}")]
    NonPermutation {
        first: usize,
        second: usize,
        col: usize,
    },
    #[error("exact OT refuses n = {n} (limit {EXACT_OT_MAX})")]
    TooLarge { n: usize },
    #[error("block size {group} does not divide cost shape {rows}x{cols}")]
    BlockSize {
        group: usize,
        rows: usize,
        cols: usize,
    },
    #[error("no feasible assignment under the block restriction")]
    Infeasible,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// How the user-facing epsilon maps onto the kernel `exp(-C / eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EpsilonMode {
    /// `eps_eff = epsilon * mean(C)` over unrestricted entries.
    #[default]
    RelativeToMeanCost,
    /// `eps_eff = epsilon`.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtParams {
    pub epsilon: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub mode: EpsilonMode,
}

impl Default for OtParams {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            mode: EpsilonMode::RelativeToMeanCost,
        }
    }
}

impl OtParams {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }
}

/// Pairwise neuron distances, optionally restricted to diagonal blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    c: Matrix2D,
    /// When set, entry `(k, j)` is admissible only if `k / group == j / group`.
    block_group: Option<usize>,
    pub provenance: (String, String),
}

impl CostMatrix {
    pub fn from_matrix(c: Matrix2D) -> Result<Self, OtError> {
        if c.rows() == 0 || c.cols() == 0 {
            return Err(OtError::Empty);
        }
        if let Some(i) = c.data().iter().position(|&v| v < 0.0) {
            return Err(OtError::Tensor(TensorError::NonFinite {
                index: i,
                value: c.data()[i],
            }));
        }
        Ok(Self {
            c,
            block_group: None,
            provenance: (String::new(), String::new()),
        })
    }

    /// Restricts transport to matching `group`-sized row/column blocks
    /// (e.g. the rows of one attention head).
    pub fn head_blocked(mut self, group: usize) -> Result<Self, OtError> {
        let (rows, cols) = self.c.shape();
        if group == 0 || rows % group != 0 || cols % group != 0 || rows / group != cols / group {
            return Err(OtError::BlockSize { group, rows, cols });
        }
        self.block_group = Some(group);
        Ok(self)
    }

    pub fn with_provenance(mut self, src: impl Into<String>, dst: impl Into<String>) -> Self {
        self.provenance = (src.into(), dst.into());
        self
    }

    pub fn matrix(&self) -> &Matrix2D {
        &self.c
    }

    pub fn block_group(&self) -> Option<usize> {
        self.block_group
    }

    pub fn shape(&self) -> (usize, usize) {
        self.c.shape()
    }

    #[inline]
    pub fn admissible(&self, k: usize, j: usize) -> bool {
        self.block_group.is_none_or(|g| k / g == j / g)
    }

    /// Uniform source marginal `1/n`.
    pub fn alpha(&self) -> Vector1D {
        Vector1D::filled(self.c.rows(), 1.0 / self.c.rows() as f64)
    }

    /// Uniform destination marginal `1/m`.
    pub fn beta(&self) -> Vector1D {
        Vector1D::filled(self.c.cols(), 1.0 / self.c.cols() as f64)
    }

    /// Mean over admissible entries.
    pub fn mean_cost(&self) -> f64 {
        let (rows, cols) = self.shape();
        let mut sum = 0.0;
        let mut count = 0usize;
        for k in 0..rows {
            for j in 0..cols {
                if self.admissible(k, j) {
                    sum += self.c.get(k, j);
                    count += 1;
                }
            }
        }
        sum / count as f64
    }
}

/// `c[k][j] = ‖w_src[k] − w_dst[j]‖₂`.
pub fn build_cost(w_src: &Matrix2D, w_dst: &Matrix2D) -> Result<CostMatrix, OtError> {
    if w_src.cols() != w_dst.cols() {
        return Err(OtError::ColumnMismatch {
            src: w_src.cols(),
            dst: w_dst.cols(),
        });
    }
    let c = Matrix2D::from_fn(w_src.rows(), w_dst.rows(), |k, j| {
        sq_dist(w_src.row(k), w_dst.row(j)).sqrt()
    });
    CostMatrix::from_matrix(c)
}

/// A coupling with uniform marginals, as produced by [`sinkhorn`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub t_raw: Matrix2D,
    pub alpha: Vector1D,
    pub beta: Vector1D,
    /// User-facing epsilon.
    pub epsilon: f64,
    /// Epsilon actually used in the kernel.
    pub effective_epsilon: f64,
    pub iterations_used: usize,
    pub converged: bool,
    /// L1 marginal residuals at exit.
    pub row_residual: f64,
    pub col_residual: f64,
}

impl TransportPlan {
    /// `⟨T, C⟩`.
    pub fn objective(&self, cost: &CostMatrix) -> f64 {
        self.t_raw.frobenius_dot(cost.matrix())
    }

    /// Shannon entropy `−Σ T log T` of the raw coupling.
    pub fn entropy(&self) -> f64 {
        self.t_raw
            .data()
            .iter()
            .filter(|&&t| t > 0.0)
            .map(|&t| -t * t.ln())
            .sum()
    }
}

/// Plan scaled by `n` so that rows and columns each sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledPlan {
    pub t_scaled: Matrix2D,
}

impl ScaledPlan {
    pub fn identity(n: usize) -> Self {
        Self {
            t_scaled: Matrix2D::identity(n),
        }
    }

    pub fn size(&self) -> usize {
        self.t_scaled.rows()
    }

    /// Entrywise mean of two plans.
    pub fn average(&self, other: &ScaledPlan) -> Result<ScaledPlan, TensorError> {
        Ok(ScaledPlan {
            t_scaled: self.t_scaled.average(&other.t_scaled)?,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.t_scaled == Matrix2D::identity(self.size())
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

struct LogKernel {
    rows: usize,
    cols: usize,
    /// `−C/eps`, `−∞` where inadmissible.
    log_k: Vec<f64>,
}

impl LogKernel {
    fn new(cost: &CostMatrix, eps: f64) -> Self {
        let (rows, cols) = cost.shape();
        let mut log_k = Vec::with_capacity(rows * cols);
        for k in 0..rows {
            for j in 0..cols {
                log_k.push(if cost.admissible(k, j) {
                    -cost.c.get(k, j) / eps
                } else {
                    f64::NEG_INFINITY
                });
            }
        }
        Self { rows, cols, log_k }
    }

    fn row(&self, k: usize) -> &[f64] {
        &self.log_k[k * self.cols..(k + 1) * self.cols]
    }

    fn plan(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.rows * self.cols);
        for (k, ak) in a.iter().enumerate() {
            t.extend(self.row(k).iter().zip(b).map(|(lk, bj)| (ak + lk + bj).exp()));
        }
        t
    }
}

/// Runs log-domain Sinkhorn–Knopp with uniform marginals.
///
/// Stops once both L1 marginal residuals fall below `tol`, or after
/// `max_iter` sweeps with `converged = false`.
pub fn sinkhorn(cost: &CostMatrix, params: &OtParams) -> Result<TransportPlan, OtError> {
    solve(cost, params, None)
}

/// Objective values recorded after one full (row, then column) sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRecord {
    /// Transport cost `⟨T, C⟩`.
    pub primal: f64,
    /// Entropic dual `eps · (⟨α, a⟩ + ⟨β, b⟩ − Σ T)` in log-scalings `a`, `b`.
    /// Each half-sweep maximizes it exactly over one block, so it never decreases.
    pub dual: f64,
}

/// Same as [`sinkhorn`], also returning objective values after every sweep.
pub fn sinkhorn_with_history(
    cost: &CostMatrix,
    params: &OtParams,
) -> Result<(TransportPlan, Vec<SweepRecord>), OtError> {
    let mut history = Vec::new();
    let plan = solve(cost, params, Some(&mut history))?;
    Ok((plan, history))
}

fn effective_epsilon(cost: &CostMatrix, params: &OtParams) -> f64 {
    match params.mode {
        EpsilonMode::Raw => params.epsilon,
        EpsilonMode::RelativeToMeanCost => {
            let mean = cost.mean_cost();
            // All-zero cost: every coupling is optimal, so fall back to the raw value.
            if mean > 0.0 {
                params.epsilon * mean
            } else {
                params.epsilon
            }
        }
    }
}

fn solve(
    cost: &CostMatrix,
    params: &OtParams,
    mut history: Option<&mut Vec<SweepRecord>>,
) -> Result<TransportPlan, OtError> {
    if !(params.epsilon.is_finite() && params.epsilon > 0.0) {
        return Err(OtError::InvalidEpsilon(params.epsilon));
    }
    let eps = effective_epsilon(cost, params);
    let (n, m) = cost.shape();
    let kernel = LogKernel::new(cost, eps);
    let log_alpha = -(n as f64).ln();
    let log_beta = -(m as f64).ln();
    let (alpha, beta) = (1.0 / n as f64, 1.0 / m as f64);

    let mut a = vec![0.0; n];
    let mut b = vec![0.0; m];
    let mut col_buf = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    let (mut row_res, mut col_res) = (f64::INFINITY, f64::INFINITY);

    while iterations < params.max_iter {
        iterations += 1;
        for (k, ak) in a.iter_mut().enumerate() {
            let row = kernel.row(k);
            *ak = log_alpha - log_sum_exp(row.iter().zip(&b).map(|(lk, bj)| lk + bj));
        }
        for (j, bj) in b.iter_mut().enumerate() {
            for (k, slot) in col_buf.iter_mut().enumerate() {
                *slot = kernel.log_k[k * m + j] + a[k];
            }
            *bj = log_beta - log_sum_exp(col_buf.iter().copied());
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(OtError::EpsilonTooSmall(eps));
        }

        let t = kernel.plan(&a, &b);
        row_res = t.chunks_exact(m).map(|r| (r.iter().sum::<f64>() - alpha).abs()).sum();
        let mut col_sums = vec![0.0; m];
        for r in t.chunks_exact(m) {
            for (s, v) in col_sums.iter_mut().zip(r) {
                *s += v;
            }
        }
        col_res = col_sums.iter().map(|s| (s - beta).abs()).sum();
        if let Some(h) = history.as_deref_mut() {
            let primal = t.iter().zip(cost.c.data()).map(|(p, c)| p * c).sum();
            let mass: f64 = t.iter().sum();
            let dual = eps
                * (alpha * a.iter().sum::<f64>() + beta * b.iter().sum::<f64>() - mass);
            h.push(SweepRecord { primal, dual });
        }
        if row_res < params.tol && col_res < params.tol {
            converged = true;
            break;
        }
    }

    let t = kernel.plan(&a, &b);
    if t.chunks_exact(m).any(|r| r.iter().all(|&v| v == 0.0)) {
        return Err(OtError::EpsilonTooSmall(eps));
    }
    Ok(TransportPlan {
        t_raw: Matrix2D::from_vec(n, m, t)?,
        alpha: Vector1D::filled(n, alpha),
        beta: Vector1D::filled(m, beta),
        epsilon: params.epsilon,
        effective_epsilon: eps,
        iterations_used: iterations,
        converged,
        row_residual: row_res,
        col_residual: col_res,
    })
}

/// `n · T` for a square uniform-marginal plan.
pub fn scale_plan(plan: &TransportPlan) -> Result<ScaledPlan, OtError> {
    let (rows, cols) = plan.t_raw.shape();
    if rows != cols {
        return Err(OtError::NonSquare { rows, cols });
    }
    Ok(ScaledPlan {
        t_scaled: plan.t_raw.scale(rows as f64),
    })
}

/// Per-row argmax of a square matrix; ties go to the lowest column.
/// Fails unless the result is a bijection.
pub fn harden_matrix(t: &Matrix2D) -> Result<Vec<usize>, OtError> {
    let (rows, cols) = t.shape();
    if rows != cols {
        return Err(OtError::NonSquare { rows, cols });
    }
    let mut owner = vec![usize::MAX; cols];
    let mut perm = Vec::with_capacity(rows);
    for k in 0..rows {
        let row = t.row(k);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = j;
            }
        }
        if owner[best] != usize::MAX {
            return Err(OtError::NonPermutation {
                first: owner[best],
                second: k,
                col: best,
            });
        }
        owner[best] = k;
        perm.push(best);
    }
    Ok(perm)
}

pub fn harden(plan: &TransportPlan) -> Result<Vec<usize>, OtError> {
    harden_matrix(&plan.t_raw)
}

/// `(1/n) Σ_k c[k][perm[k]]`, the uniform-marginal objective of a permutation.
pub fn assignment_cost(cost: &CostMatrix, perm: &[usize]) -> f64 {
    let n = perm.len() as f64;
    perm.iter()
        .enumerate()
        .map(|(k, &j)| cost.c.get(k, j))
        .sum::<f64>()
        / n
}

/// Brute-force optimal assignment for `n ≤ 8`. Among equal-cost optima the
/// lexicographically first permutation wins.
pub fn exact_ot_small(cost: &CostMatrix) -> Result<(Vec<usize>, f64), OtError> {
    let (rows, cols) = cost.shape();
    if rows != cols {
        return Err(OtError::NonSquare { rows, cols });
    }
    if rows > EXACT_OT_MAX {
        return Err(OtError::TooLarge { n: rows });
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for perm in (0..rows).permutations(rows) {
        if !perm.iter().enumerate().all(|(k, &j)| cost.admissible(k, j)) {
            continue;
        }
        let total = assignment_cost(cost, &perm);
        if best.as_ref().is_none_or(|(_, b)| total < *b) {
            best = Some((perm, total));
        }
    }
    best.ok_or(OtError::Infeasible)
}
