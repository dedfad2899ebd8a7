//! Python bindings: archives, expansion, forward passes and the transport
//! solver. Matrices cross the boundary as lists of row lists.

use deus_core::sinkhorn::{self as ot, CostMatrix, EpsilonMode, OtParams};
use deus_core::toy_llama::{self, random_model};
use deus_core::upscale::{self, expand_with_report, plan_llama_pro, plan_solar};
use deus_core::{
    BlockId, ExpansionPlan, FuseOptions, Matrix2D, Method, ModelConfig, PositionStrategy, TensorArchive,
    TokenSequence,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(deus, DeusError, PyException, "Raised for archive, plan and solver failures.");

fn err(e: impl std::fmt::Display) -> PyErr {
    DeusError::new_err(e.to_string())
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix2D> {
    Matrix2D::from_rows(&rows).map_err(value_err)
}

fn rows(m: &Matrix2D) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn tokens(ids: Vec<usize>) -> PyResult<TokenSequence> {
    TokenSequence::new(ids).map_err(value_err)
}

/// Serializes through JSON so Python receives plain dicts and lists.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = value.py().import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

fn ot_params(eps: f64, max_iter: usize, tol: f64, raw_eps: bool) -> OtParams {
    OtParams {
        epsilon: eps,
        max_iter,
        tol,
        mode: if raw_eps {
            EpsilonMode::Raw
        } else {
            EpsilonMode::RelativeToMeanCost
        },
    }
}

/// A DEUS1 checkpoint held in memory.
#[pyclass(module = "deus", frozen)]
pub struct Archive {
    inner: TensorArchive,
}

#[pymethods]
impl Archive {
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: deus_core::read_archive(&path).map_err(err)?,
        })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        deus_core::write_archive(&path, &self.inner).map_err(err)
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.inner.config())
    }

    #[getter]
    fn n_layers(&self) -> usize {
        self.inner.n_layers()
    }

    fn tensor_names(&self) -> Vec<String> {
        self.inner.entries().iter().map(|e| e.name.clone()).collect()
    }

    /// `(shape, flat row-major values)` of one tensor.
    fn tensor(&self, name: &str) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let e = self
            .inner
            .entry(name)
            .ok_or_else(|| err(format!("no tensor named {name}")))?;
        Ok((e.shape.clone(), e.data.clone()))
    }

    /// SHA-256 prefix of each tensor's on-disk payload.
    fn checksums(&self) -> Vec<(String, String)> {
        self.inner
            .entries()
            .iter()
            .map(|e| (e.name.clone(), e.checksum()))
            .collect()
    }

    /// Per layer: whether the attention output and MLP down projections are all zero.
    fn zero_flags(&self) -> PyResult<Vec<(bool, bool)>> {
        let layers = self.inner.layers().map_err(err)?;
        Ok(layers
            .iter()
            .map(|l| {
                let zero = |b| l.matrix(b).is_some_and(Matrix2D::is_zero);
                (zero(BlockId::O), zero(BlockId::Down))
            })
            .collect())
    }

    /// Logits, one row per token.
    fn forward(&self, py: Python<'_>, ids: Vec<usize>) -> PyResult<Vec<Vec<f64>>> {
        let seq = tokens(ids)?;
        let trace = py.detach(|| toy_llama::forward(&self.inner, &seq, false)).map_err(err)?;
        Ok(rows(&trace.logits))
    }

    fn perplexity(&self, py: Python<'_>, ids: Vec<usize>) -> PyResult<f64> {
        let seq = tokens(ids)?;
        py.detach(|| toy_llama::perplexity(&self.inner, &seq)).map_err(err)
    }

    fn __repr__(&self) -> String {
        let c = self.inner.config();
        format!(
            "Archive(n_layers={}, hidden={}, n_heads={}, d_ff={}, vocab={})",
            c.n_layers, c.hidden, c.n_heads, c.d_ff, c.vocab
        )
    }
}

#[pymodule]
mod deus {
    use super::*;

    #[pymodule_export]
    use super::Archive;

    #[pymodule_export]
    use super::DeusError;

    /// Seeded random toy model.
    #[pyfunction]
    #[pyo3(signature = (seed=0, n_layers=8, hidden=64, n_heads=4, n_kv_heads=None, head_dim=None, d_ff=172, vocab=256))]
    #[allow(clippy::too_many_arguments)]
    fn gen(
        seed: u64,
        n_layers: usize,
        hidden: usize,
        n_heads: usize,
        n_kv_heads: Option<usize>,
        head_dim: Option<usize>,
        d_ff: usize,
        vocab: usize,
    ) -> PyResult<Archive> {
        let config = ModelConfig {
            n_layers,
            hidden,
            n_heads,
            n_kv_heads: n_kv_heads.unwrap_or(n_heads),
            head_dim: head_dim.unwrap_or(hidden.checked_div(n_heads).unwrap_or(0)),
            d_ff,
            vocab,
            rope_theta: 10000.0,
            rms_eps: 1e-5,
        };
        config.validate().map_err(value_err)?;
        Ok(Archive {
            inner: random_model(&config, seed).map_err(err)?,
        })
    }

    /// Seeded uniformly random token ids.
    #[pyfunction]
    fn random_tokens(seed: u64, len: usize, vocab: usize) -> PyResult<Vec<usize>> {
        Ok(toy_llama::random_tokens(seed, len, vocab).map_err(value_err)?.ids().to_vec())
    }

    /// Interpolation plan as a dict.
    #[pyfunction]
    #[pyo3(signature = (n, ratio=0.5, strategy="top", method="opt-deus"))]
    fn plan_interpolation<'py>(
        py: Python<'py>,
        n: usize,
        ratio: f64,
        strategy: &str,
        method: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let strategy: PositionStrategy = strategy.parse().map_err(value_err)?;
        let method: Method = method.parse().map_err(value_err)?;
        let plan = upscale::plan_interpolation(n, ratio, strategy)
            .and_then(|p| p.with_method(method))
            .map_err(err)?;
        to_py(py, &plan)
    }

    /// Freeze mask for a plan dict.
    #[pyfunction]
    fn freeze_mask<'py>(py: Python<'py>, plan: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let plan: ExpansionPlan = from_py(plan)?;
        to_py(py, &upscale::freeze_mask(&plan))
    }

    /// Expands `archive`; returns the new archive and its plan dict.
    #[pyfunction]
    #[pyo3(signature = (
        archive, method="opt-deus", strategy="top", ratio=0.5, eps=0.06, max_iter=2000, tol=1e-9,
        raw_eps=false, head_blocked=false, g=None, m=None, p=1
    ))]
    #[allow(clippy::too_many_arguments)]
    fn expand<'py>(
        py: Python<'py>,
        archive: PyRef<'py, Archive>,
        method: &str,
        strategy: &str,
        ratio: f64,
        eps: f64,
        max_iter: usize,
        tol: f64,
        raw_eps: bool,
        head_blocked: bool,
        g: Option<usize>,
        m: Option<usize>,
        p: usize,
    ) -> PyResult<(Archive, Bound<'py, PyAny>)> {
        let method: Method = method.parse().map_err(value_err)?;
        let n = archive.inner.n_layers();
        let plan = match method {
            Method::OptDeus | Method::AvgDeus => {
                let strategy: PositionStrategy = strategy.parse().map_err(value_err)?;
                upscale::plan_interpolation(n, ratio, strategy).and_then(|p| p.with_method(method))
            }
            Method::LlamaPro => {
                let (g, m) = g.zip(m).ok_or_else(|| value_err("llama-pro needs g and m"))?;
                plan_llama_pro(n, g, m, p)
            }
            Method::Solar => plan_solar(n, m.ok_or_else(|| value_err("solar needs m"))?),
            Method::Lesa => upscale::plan_lesa(),
        }
        .map_err(err)?;
        let opts = FuseOptions {
            ot: ot_params(eps, max_iter, tol, raw_eps),
            head_blocked,
            ..FuseOptions::default()
        };
        let base = &archive.inner;
        let expansion = py.detach(|| expand_with_report(base, &plan, &opts)).map_err(err)?;
        Ok((
            Archive {
                inner: expansion.archive,
            },
            to_py(py, &plan)?,
        ))
    }

    /// Max absolute logit difference between two archives on `ids`.
    #[pyfunction]
    fn max_logit_diff(py: Python<'_>, a: PyRef<'_, Archive>, b: PyRef<'_, Archive>, ids: Vec<usize>) -> PyResult<f64> {
        let seq = tokens(ids)?;
        let (a, b) = (&a.inner, &b.inner);
        let (la, lb) = py
            .detach(|| Ok::<_, deus_core::Error>((toy_llama::forward(a, &seq, false)?, toy_llama::forward(b, &seq, false)?)))
            .map_err(err)?;
        la.logits
            .max_abs_diff(&lb.logits)
            .ok_or_else(|| err("logit shapes differ"))
    }

    /// Euclidean distances between the rows of two matrices.
    #[pyfunction]
    fn build_cost(w_src: Vec<Vec<f64>>, w_dst: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let cost = ot::build_cost(&matrix(w_src)?, &matrix(w_dst)?).map_err(err)?;
        Ok(rows(cost.matrix()))
    }

    /// Entropic transport with uniform marginals; returns a dict with the
    /// raw plan and solver diagnostics.
    #[pyfunction]
    #[pyo3(signature = (cost, eps=0.06, max_iter=2000, tol=1e-9, raw_eps=false))]
    fn sinkhorn<'py>(
        py: Python<'py>,
        cost: Vec<Vec<f64>>,
        eps: f64,
        max_iter: usize,
        tol: f64,
        raw_eps: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cost = CostMatrix::from_matrix(matrix(cost)?).map_err(value_err)?;
        let plan = ot::sinkhorn(&cost, &ot_params(eps, max_iter, tol, raw_eps)).map_err(err)?;
        let out = pyo3::types::PyDict::new(py);
        out.set_item("plan", rows(&plan.t_raw))?;
        out.set_item("converged", plan.converged)?;
        out.set_item("iterations", plan.iterations_used)?;
        out.set_item("effective_epsilon", plan.effective_epsilon)?;
        out.set_item("row_residual", plan.row_residual)?;
        out.set_item("col_residual", plan.col_residual)?;
        out.set_item("objective", plan.objective(&cost))?;
        Ok(out.into_any())
    }

    /// Per-row argmax of a square plan; raises unless it is a permutation.
    #[pyfunction]
    fn harden(plan: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        ot::harden_matrix(&matrix(plan)?).map_err(err)
    }

    /// Brute-force optimal assignment for n <= 8: `(permutation, cost)`.
    #[pyfunction]
    fn exact_ot_small(cost: Vec<Vec<f64>>) -> PyResult<(Vec<usize>, f64)> {
        let cost = CostMatrix::from_matrix(matrix(cost)?).map_err(value_err)?;
        ot::exact_ot_small(&cost).map_err(err)
    }
}
