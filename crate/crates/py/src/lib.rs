//! Python bindings. Matrices cross the boundary as lists of rows.

use std::collections::BTreeMap;

use nalgebra::DVector;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stcos::basis::{areal_spacetime_bisquare, BasisConfig, Period, SpaceTimeKnots};
use stcos::cov::{self, FineLevelStructure, KMatrix};
use stcos::geom::{self, AdjacencyRule, Point2};
use stcos::inference::{self, GibbsConfig, Hyperparams, ModelData};
use stcos::linalg::{DenseMatrix, SparseMatrix};
use stcos::pipeline::{self, run, PipelineConfig, PipelineError};

fn py_err(e: impl Into<PipelineError>) -> PyErr {
    let e = e.into();
    match e.exit_code() {
        4 => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_rows(m: &DenseMatrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> PyResult<DenseMatrix> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err(format!("{what}: rows have different lengths")));
    }
    Ok(DenseMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn parse_rule(rule: &str) -> PyResult<AdjacencyRule> {
    match rule {
        "queen" => Ok(AdjacencyRule::Queen),
        "rook" => Ok(AdjacencyRule::Rook),
        other => Err(PyValueError::new_err(format!("unknown adjacency rule '{other}'"))),
    }
}

/// A set of areal units with unique ids.
#[pyclass(name = "Domain", frozen)]
struct PyDomain {
    inner: geom::Domain,
}

#[pymethods]
impl PyDomain {
    #[staticmethod]
    #[pyo3(signature = (path, id_key = "geoid"))]
    fn from_geojson(path: &str, id_key: &str) -> PyResult<Self> {
        let inner = geom::read_geojson_with_key(path, id_key).map_err(py_err)?;
        Ok(PyDomain { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (origin, cell_w, cell_h, cols, rows, prefix = "g"))]
    fn grid(origin: (f64, f64), cell_w: f64, cell_h: f64, cols: usize, rows: usize, prefix: &str) -> PyResult<Self> {
        let inner = geom::Domain::grid("grid", prefix, Point2::new(origin.0, origin.1), cell_w, cell_h, cols, rows)
            .map_err(py_err)?;
        Ok(PyDomain { inner })
    }

    fn ids(&self) -> Vec<String> {
        self.inner.ids().iter().map(|s| s.to_string()).collect()
    }

    fn areas(&self) -> Vec<f64> {
        self.inner.units().iter().map(geom::area).collect()
    }

    fn total_area(&self) -> f64 {
        self.inner.total_area()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Domain({} units)", self.inner.len())
    }
}

#[pyfunction]
#[pyo3(signature = (dom1, dom2, proportion = true))]
fn overlap_matrix(dom1: &PyDomain, dom2: &PyDomain, proportion: bool) -> PyResult<Vec<Vec<f64>>> {
    let m = geom::overlap_matrix(&dom1.inner, &dom2.inner, proportion).map_err(py_err)?;
    Ok(to_rows(&m.to_dense()))
}

#[pyfunction]
#[pyo3(signature = (dom, rule = "queen"))]
fn adjacency_matrix(dom: &PyDomain, rule: &str) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(&geom::adjacency_matrix(&dom.inner, parse_rule(rule)?).to_dense()))
}

#[pyfunction]
#[pyo3(signature = (moe, alpha = 0.10))]
fn moe_to_var(moe: f64, alpha: f64) -> PyResult<f64> {
    pipeline::moe_to_var(moe, alpha).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (w, tau = 0.9, scale = true))]
fn car_precision(w: Vec<Vec<f64>>, tau: f64, scale: bool) -> PyResult<Vec<Vec<f64>>> {
    let w = SparseMatrix::from_dense(&from_rows(&w, "w")?);
    let q = cov::car_precision(&w, tau, scale).map_err(py_err)?;
    Ok(to_rows(&q.q))
}

#[pyfunction]
fn best_positive_approximant(s: Vec<Vec<f64>>, sigma: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let x = cov::best_positive_approximant(&from_rows(&s, "s")?, &from_rows(&sigma, "sigma")?).map_err(py_err)?;
    Ok(to_rows(&x))
}

/// Areal space-time bisquare basis of `dom` over the period ending in `year`.
#[pyfunction]
#[pyo3(signature = (dom, year, lookback, knots, ws, wt = 1.0, mc_reps = 500, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn areal_basis(
    dom: &PyDomain,
    year: i32,
    lookback: u32,
    knots: Vec<(f64, f64, f64)>,
    ws: f64,
    wt: f64,
    mc_reps: usize,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let knots = SpaceTimeKnots::new(knots.iter().map(|&(x, y, t)| (Point2::new(x, y), t)).collect(), ws, wt)
        .map_err(py_err)?;
    let period = Period::ending(year, lookback).map_err(py_err)?;
    let s = areal_spacetime_bisquare(&dom.inner, &period, &knots, &BasisConfig { mc_reps }, &mut ChaCha8Rng::seed_from_u64(seed))
        .map_err(py_err)?;
    Ok(to_rows(&s))
}

fn model_data(z: Vec<f64>, v: Vec<f64>, h: &[Vec<f64>], s: &[Vec<f64>], k: &[Vec<f64>]) -> PyResult<ModelData> {
    ModelData::new(
        DVector::from_vec(z),
        DVector::from_vec(v),
        SparseMatrix::from_dense(&from_rows(h, "h")?),
        from_rows(s, "s")?,
        KMatrix { k: from_rows(k, "k")?, structure: FineLevelStructure::Identity },
    )
    .map_err(py_err)
}

/// Marginal log-likelihood at `(σ²_K, σ²_ξ)` with `μ_B` at its GLS value.
#[pyfunction]
fn profile_loglik(
    z: Vec<f64>,
    v: Vec<f64>,
    h: Vec<Vec<f64>>,
    s: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    sig2k: f64,
    sig2xi: f64,
) -> PyResult<(f64, Vec<f64>)> {
    let data = model_data(z, v, &h, &s, &k)?;
    let (ll, mu) = inference::profile_loglik(&data, sig2k, sig2xi).map_err(py_err)?;
    Ok((ll, mu.iter().cloned().collect()))
}

/// Maximum-likelihood fit; returns a dict with `sig2k`, `sig2xi`, `mu`,
/// `loglik` and `converged`.
#[pyfunction]
fn mle(py: Python<'_>, z: Vec<f64>, v: Vec<f64>, h: Vec<Vec<f64>>, s: Vec<Vec<f64>>, k: Vec<Vec<f64>>) -> PyResult<Py<PyAny>> {
    let data = model_data(z, v, &h, &s, &k)?;
    let fit = inference::mle_stcos(&data, None).map_err(py_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("sig2k", fit.sig2k_hat)?;
    d.set_item("sig2xi", fit.sig2xi_hat)?;
    d.set_item("mu", fit.mu_hat.iter().cloned().collect::<Vec<_>>())?;
    d.set_item("loglik", fit.loglik)?;
    d.set_item("converged", fit.converged)?;
    Ok(d.into_any().unbind())
}

/// Runs the Gibbs sampler and returns saved draws keyed by parameter.
#[pyfunction]
#[pyo3(signature = (z, v, h, s, k, iterations = 10_000, burn = 2_000, thin = 10, seed = 0, hyper = None))]
#[allow(clippy::too_many_arguments)]
fn gibbs(
    py: Python<'_>,
    z: Vec<f64>,
    v: Vec<f64>,
    h: Vec<Vec<f64>>,
    s: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    iterations: usize,
    burn: usize,
    thin: usize,
    seed: u64,
    hyper: Option<BTreeMap<String, f64>>,
) -> PyResult<Py<PyAny>> {
    let data = model_data(z, v, &h, &s, &k)?;
    let mut hp = Hyperparams::default();
    for (key, val) in hyper.unwrap_or_default() {
        let slot = match key.as_str() {
            "a_mu" => &mut hp.a_mu,
            "b_mu" => &mut hp.b_mu,
            "a_k" => &mut hp.a_k,
            "b_k" => &mut hp.b_k,
            "a_xi" => &mut hp.a_xi,
            "b_xi" => &mut hp.b_xi,
            other => return Err(PyValueError::new_err(format!("unknown hyperparameter '{other}'"))),
        };
        *slot = val;
    }
    let cfg = GibbsConfig { iterations, burn, thin, seed, report_period: 0, store_xi: false, ..GibbsConfig::default() };
    let out = py.detach(|| inference::gibbs_stcos(&data, &hp, &cfg)).map_err(py_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("mu_b", to_rows(&out.mu_b))?;
    d.set_item("eta", to_rows(&out.eta))?;
    d.set_item("sig2_mu", out.sig2_mu)?;
    d.set_item("sig2_k", out.sig2_k)?;
    d.set_item("sig2_xi", out.sig2_xi)?;
    d.set_item("loglik", out.loglik)?;
    Ok(d.into_any().unbind())
}

fn load_config(path: &str, seed: Option<u64>) -> PyResult<PipelineConfig> {
    let mut cfg = PipelineConfig::load(path).map_err(py_err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Runs prepare, fit and report from a TOML config; returns one dict per target.
#[pyfunction]
#[pyo3(signature = (config, seed = None))]
fn run_pipeline(py: Python<'_>, config: &str, seed: Option<u64>) -> PyResult<Vec<Py<PyAny>>> {
    let cfg = load_config(config, seed)?;
    let rows = py.detach(|| run::run_all(&cfg)).map_err(py_err)?;
    rows.iter()
        .map(|r| {
            let d = pyo3::types::PyDict::new(py);
            d.set_item("geoid", &r.geoid)?;
            d.set_item("E_mean", r.e_mean)?;
            d.set_item("E_sd", r.e_sd)?;
            d.set_item("E_lo", r.e_lo)?;
            d.set_item("E_hi", r.e_hi)?;
            d.set_item("E_median", r.e_median)?;
            d.set_item("E_moe", r.e_moe)?;
            Ok(d.into_any().unbind())
        })
        .collect()
}

/// Writes synthetic source estimates for a config; returns the true `μ_B`.
#[pyfunction]
#[pyo3(signature = (config, seed = None))]
fn simulate(config: &str, seed: Option<u64>) -> PyResult<Vec<f64>> {
    let cfg = load_config(config, seed)?;
    Ok(run::run_simulate(&cfg).map_err(py_err)?.truth.mu_b)
}

#[pymodule]
#[pyo3(name = "stcos")]
pub fn stcos_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDomain>()?;
    m.add_function(wrap_pyfunction!(overlap_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(adjacency_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(moe_to_var, m)?)?;
    m.add_function(wrap_pyfunction!(car_precision, m)?)?;
    m.add_function(wrap_pyfunction!(best_positive_approximant, m)?)?;
    m.add_function(wrap_pyfunction!(areal_basis, m)?)?;
    m.add_function(wrap_pyfunction!(profile_loglik, m)?)?;
    m.add_function(wrap_pyfunction!(mle, m)?)?;
    m.add_function(wrap_pyfunction!(gibbs, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
