//! Python bindings: simulation, fitting, prediction, selection and metrics.
//!
//! Curves cross the boundary as nested lists (one inner list per curve); numpy
//! arrays are accepted anywhere a nested list is.

use fofpls::basis::{BasisSpec, BasisSystem, Grid};
use fofpls::cli::parse_terms;
use fofpls::design::FunctionalSample;
use fofpls::metrics::{self, CurveNorm};
use fofpls::pls::{FittedModel, PlsOptions};
use fofpls::selection::{
    effective_components, select_basis_counts, select_components, select_model as select,
    SelectionCriterion, DEFAULT_H_FIXED,
};
use fofpls::sim::{run_benchmark, simulate as sim, BenchmarkConfig, ModelKind, Setting, SimConfig};
use fofpls::FofError;
use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: FofError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let l = rows.first().map_or(0, Vec::len);
    if n == 0 || l == 0 {
        return Err(PyValueError::new_err("expected a non-empty 2-D array"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != l) {
        return Err(PyValueError::new_err(format!(
            "row {i} has {} values, expected {l}",
            rows[i].len()
        )));
    }
    Ok(DMatrix::from_fn(n, l, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn make_grid(points: Option<Vec<f64>>, len: usize) -> PyResult<Grid> {
    match points {
        Some(p) => Grid::standardize(&p).map_err(err),
        None => Grid::uniform(len).map_err(err),
    }
}

fn sample(values: &[Vec<f64>], grid: Option<Vec<f64>>, label: &str) -> PyResult<FunctionalSample> {
    let m = to_matrix(values)?;
    let g = make_grid(grid, m.ncols())?;
    FunctionalSample::new(g, m, label).map_err(err)
}

fn samples(
    y: &[Vec<f64>],
    xs: &[Vec<Vec<f64>>],
    grid: Option<Vec<f64>>,
) -> PyResult<(FunctionalSample, Vec<FunctionalSample>)> {
    if xs.is_empty() {
        return Err(PyValueError::new_err("at least one predictor is required"));
    }
    let y = sample(y, grid.clone(), "y")?;
    let xs = xs
        .iter()
        .enumerate()
        .map(|(m, x)| sample(x, grid.clone(), &format!("x{}", m + 1)))
        .collect::<PyResult<Vec<_>>>()?;
    Ok((y, xs))
}

fn norm_for(y: &DMatrix<f64>, grid: Option<Vec<f64>>) -> PyResult<CurveNorm> {
    Ok(CurveNorm::trapezoid(&make_grid(grid, y.ncols())?))
}

/// Cubic (by default) B-spline basis on a grid.
#[pyclass(name = "Basis", module = "fofpls_py")]
struct PyBasis {
    inner: BasisSystem,
}

#[pymethods]
impl PyBasis {
    #[new]
    #[pyo3(signature = (k, grid_len = 100, points = None, order = 4))]
    fn new(k: usize, grid_len: usize, points: Option<Vec<f64>>, order: usize) -> PyResult<Self> {
        let g = make_grid(points, grid_len)?;
        Ok(Self {
            inner: BasisSystem::new(BasisSpec { k, order }, &g).map_err(err)?,
        })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    /// Exact Gram matrix of L2 inner products.
    fn gram(&self) -> Vec<Vec<f64>> {
        to_rows(self.inner.gram())
    }

    /// Basis values at `points` in [0, 1], one row per point.
    fn evaluate(&self, points: Vec<f64>) -> Vec<Vec<f64>> {
        to_rows(&self.inner.evaluate(&points))
    }

    /// Least-squares coefficients of curves sampled on the basis grid.
    fn project(&self, values: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let m = to_matrix(&values)?;
        Ok(to_rows(&self.inner.project_rows(&m).map_err(err)?))
    }
}

/// Fitted PLS function-on-function model.
#[pyclass(name = "Model", module = "fofpls_py")]
struct PyModel {
    inner: FittedModel,
}

#[pymethods]
impl PyModel {
    /// Fits a model. Basis sizes are searched over the candidate lists unless
    /// `kx`/`ky` are given; `h` is chosen on a seeded half split when omitted.
    #[staticmethod]
    #[pyo3(signature = (
        y, xs, terms = "main", grid = None, kx = None, ky = None, h = None, h_max = 10, seed = 0,
        kx_candidates = vec![4, 6, 8, 10, 15], ky_candidates = vec![4, 6, 8, 10], order = 4,
        h_fixed = DEFAULT_H_FIXED
    ))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        y: Vec<Vec<f64>>,
        xs: Vec<Vec<Vec<f64>>>,
        terms: &str,
        grid: Option<Vec<f64>>,
        kx: Option<usize>,
        ky: Option<usize>,
        h: Option<usize>,
        h_max: usize,
        seed: u64,
        kx_candidates: Vec<usize>,
        ky_candidates: Vec<usize>,
        order: usize,
        h_fixed: usize,
    ) -> PyResult<Self> {
        let (y, xs) = samples(&y, &xs, grid)?;
        let terms = parse_terms(terms, xs.len()).map_err(err)?;
        let kx = kx.map_or(kx_candidates, |k| vec![k]);
        let ky = ky.map_or(ky_candidates, |k| vec![k]);
        let (k_y, k_x) = if kx.len() == 1 && ky.len() == 1 {
            (ky[0], kx[0])
        } else {
            let c = select_basis_counts(&y, &xs, &terms, &ky, &kx, order, h_fixed).map_err(err)?;
            (c.k_y, c.k_x)
        };
        let bx = BasisSystem::new(BasisSpec { k: k_x, order }, xs[0].grid()).map_err(err)?;
        let by = BasisSystem::new(BasisSpec { k: k_y, order }, y.grid()).map_err(err)?;
        let h = match h {
            Some(h) => h,
            None => {
                let c = select_components(&y, &xs, &terms, &bx, &by, h_max, seed).map_err(err)?;
                effective_components(c.h_opt, y.n_curves(), usize::MAX)
            }
        };
        let opts = PlsOptions {
            stop_at_exhaustion: true,
            ..PlsOptions::default()
        };
        let inner = FittedModel::fit(&y, &xs, &terms, &bx, &by, h, &opts).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: fofpls::load_model(std::path::Path::new(path)).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        fofpls::save_model(std::path::Path::new(path), &self.inner).map_err(err)
    }

    #[getter]
    fn terms(&self) -> String {
        self.inner.terms().to_string()
    }

    #[getter]
    fn n_components(&self) -> usize {
        self.inner.n_components()
    }

    #[getter]
    fn k_x(&self) -> usize {
        self.inner.basis_x().k()
    }

    #[getter]
    fn k_y(&self) -> usize {
        self.inner.basis_y().k()
    }

    /// NaN for models that were truncated after fitting.
    #[getter]
    fn train_mse(&self) -> f64 {
        self.inner.train_mse()
    }

    fn fitted(&self) -> Vec<Vec<f64>> {
        to_rows(self.inner.fitted())
    }

    /// Predicted response curves for new predictor curves on the training grid.
    fn predict(&self, xs: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<f64>>> {
        let grid = self.inner.basis_x().grid().clone();
        let xs = xs
            .iter()
            .enumerate()
            .map(|(m, x)| {
                FunctionalSample::new(grid.clone(), to_matrix(x)?, format!("x{}", m + 1))
                    .map_err(err)
            })
            .collect::<PyResult<Vec<_>>>()?;
        Ok(to_rows(&self.inner.predict(&xs).map_err(err)?))
    }

    /// Copy of the model keeping only the first `h` components.
    fn truncate(&self, h: usize) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.with_components(h).map_err(err)?,
        })
    }

    fn coefficient_tensor(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.coefficient_tensor())
    }

    /// Coefficient surfaces on an `n`-point grid: `main` maps predictor index to
    /// an n×n matrix; `inter` maps "m:n" to an n×n×n nested list.
    #[pyo3(signature = (n = 25))]
    fn surfaces<'py>(&self, py: Python<'py>, n: usize) -> PyResult<Bound<'py, PyDict>> {
        let g = Grid::uniform(n).map_err(err)?;
        let s = self.inner.reconstruct_surfaces(&g, &g, &g);
        let dims = s.dims();
        let main = PyDict::new(py);
        for m in &s.main {
            main.set_item(m.predictor, to_rows(&m.values))?;
        }
        let inter = PyDict::new(py);
        for t in &s.inter {
            let cube: Vec<Vec<Vec<f64>>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| (0..n).map(|k| t.at(dims, i, j, k)).collect())
                        .collect()
                })
                .collect();
            inter.set_item(format!("{}:{}", t.pair.0, t.pair.1), cube)?;
        }
        let out = PyDict::new(py);
        out.set_item("grid", g.points().to_vec())?;
        out.set_item("main", main)?;
        out.set_item("inter", inter)?;
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(terms='{}', k_x={}, k_y={}, h={})",
            self.inner.terms(),
            self.inner.basis_x().k(),
            self.inner.basis_y().k(),
            self.inner.n_components()
        )
    }
}

/// Simulated dataset as a dict with keys grid, y, y_true, x, x_true.
#[pyfunction]
#[pyo3(signature = (setting = 1, lag = 2, n = 300, grid = 100, seed = 0, noise_eps = 2.0, noise_u = 2.0))]
fn simulate<'py>(
    py: Python<'py>,
    setting: u8,
    lag: usize,
    n: usize,
    grid: usize,
    seed: u64,
    noise_eps: f64,
    noise_u: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = SimConfig {
        setting: Setting::try_from(setting).map_err(err)?,
        lag,
        n_curves: n,
        grid_len: grid,
        noise_sd_eps: noise_eps,
        noise_sd_u: noise_u,
        seed,
    };
    let data = sim(&cfg).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("grid", data.y_observed.grid().points().to_vec())?;
    out.set_item("y", to_rows(data.y_observed.values()))?;
    out.set_item("y_true", to_rows(data.y_signal.values()))?;
    out.set_item(
        "x",
        data.x_noisy
            .iter()
            .map(|x| to_rows(x.values()))
            .collect::<Vec<_>>(),
    )?;
    out.set_item(
        "x_true",
        data.x_true
            .iter()
            .map(|x| to_rows(x.values()))
            .collect::<Vec<_>>(),
    )?;
    Ok(out)
}

/// Two-step forward selection; returns the chosen terms, basis sizes and MSE paths.
#[pyfunction]
#[pyo3(signature = (
    y, xs, grid = None, criterion = "training", seed = 0, kx_candidates = vec![4, 6, 8, 10, 15],
    ky_candidates = vec![4, 6, 8, 10], order = 4, h_fixed = DEFAULT_H_FIXED
))]
#[allow(clippy::too_many_arguments)]
fn select_model<'py>(
    py: Python<'py>,
    y: Vec<Vec<f64>>,
    xs: Vec<Vec<Vec<f64>>>,
    grid: Option<Vec<f64>>,
    criterion: &str,
    seed: u64,
    kx_candidates: Vec<usize>,
    ky_candidates: Vec<usize>,
    order: usize,
    h_fixed: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let (y, xs) = samples(&y, &xs, grid)?;
    let criterion = match criterion {
        "training" => SelectionCriterion::TrainingMse,
        "holdout" => SelectionCriterion::HoldoutMspe { seed },
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown criterion '{other}'"
            )))
        }
    };
    let s = select(
        &y,
        &xs,
        &ky_candidates,
        &kx_candidates,
        order,
        h_fixed,
        criterion,
    )
    .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("terms", s.terms.to_string())?;
    out.set_item("k_x", s.basis.k_x)?;
    out.set_item("k_y", s.basis.k_y)?;
    out.set_item("main_mse_path", s.main.mse_path.clone())?;
    out.set_item(
        "interaction_mse_path",
        s.interactions.as_ref().map(|t| t.mse_path.clone()),
    )?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (y_true, y_pred, grid = None))]
fn mse(y_true: Vec<Vec<f64>>, y_pred: Vec<Vec<f64>>, grid: Option<Vec<f64>>) -> PyResult<f64> {
    let (a, b) = (to_matrix(&y_true)?, to_matrix(&y_pred)?);
    metrics::mse(&a, &b, &norm_for(&a, grid)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (y_true, y_pred, grid = None))]
fn mspe(y_true: Vec<Vec<f64>>, y_pred: Vec<Vec<f64>>, grid: Option<Vec<f64>>) -> PyResult<f64> {
    let (a, b) = (to_matrix(&y_true)?, to_matrix(&y_pred)?);
    metrics::mspe(&a, &b, &norm_for(&a, grid)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (y_true, y_pred, grid = None))]
fn rmspe(y_true: Vec<Vec<f64>>, y_pred: Vec<Vec<f64>>, grid: Option<Vec<f64>>) -> PyResult<f64> {
    let (a, b) = (to_matrix(&y_true)?, to_matrix(&y_pred)?);
    metrics::rmspe(&a, &b, &norm_for(&a, grid)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (y_true, y_pred, grid = None))]
fn mape(y_true: Vec<Vec<f64>>, y_pred: Vec<Vec<f64>>, grid: Option<Vec<f64>>) -> PyResult<f64> {
    let (a, b) = (to_matrix(&y_true)?, to_matrix(&y_pred)?);
    metrics::mape(&a, &b, &norm_for(&a, grid)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (y_obs, y_hat, grid = None))]
fn r2(y_obs: Vec<Vec<f64>>, y_hat: Vec<Vec<f64>>, grid: Option<Vec<f64>>) -> PyResult<f64> {
    let (a, b) = (to_matrix(&y_obs)?, to_matrix(&y_hat)?);
    metrics::r2(&a, &b, &norm_for(&a, grid)?).map_err(err)
}

/// Monte-Carlo comparison; one dict per model with means and standard deviations.
#[pyfunction]
#[pyo3(signature = (
    setting = 1, lag = 2, reps = 50, models = vec!["main".to_string(), "full".to_string(), "true".to_string(), "selected".to_string()],
    seed = 0, n = 300, n_train = 100, h_max = 10, h_fixed = DEFAULT_H_FIXED
))]
#[allow(clippy::too_many_arguments)]
fn benchmark<'py>(
    py: Python<'py>,
    setting: u8,
    lag: usize,
    reps: usize,
    models: Vec<String>,
    seed: u64,
    n: usize,
    n_train: usize,
    h_max: usize,
    h_fixed: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let models = models
        .iter()
        .map(|m| m.parse::<ModelKind>().map_err(err))
        .collect::<PyResult<Vec<_>>>()?;
    let cfg = BenchmarkConfig {
        sim: SimConfig {
            setting: Setting::try_from(setting).map_err(err)?,
            lag,
            n_curves: n,
            seed,
            ..SimConfig::default()
        },
        models,
        reps,
        n_train,
        h_max,
        h_fixed,
        ..BenchmarkConfig::default()
    };
    let report = py.detach(|| run_benchmark(&cfg)).map_err(err)?;
    report
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("model", r.model.name())?;
            d.set_item("reps", r.reps)?;
            d.set_item("mspe", r.mspe)?;
            d.set_item("mspe_se", r.mspe_se)?;
            d.set_item("rmspe", r.rmspe)?;
            d.set_item("rmspe_se", r.rmspe_se)?;
            d.set_item("mape", r.mape)?;
            d.set_item("mape_se", r.mape_se)?;
            d.set_item("mean_h", r.mean_h)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn fofpls_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBasis>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(select_model, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(mspe, m)?)?;
    m.add_function(wrap_pyfunction!(rmspe, m)?)?;
    m.add_function(wrap_pyfunction!(mape, m)?)?;
    m.add_function(wrap_pyfunction!(r2, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark, m)?)?;
    Ok(())
}
