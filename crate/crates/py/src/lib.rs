//! Python bindings: functionals, path prefixes and the three conditional-expectation methods.

use pyo3::exceptions::{PyArithmeticError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use malliavin_core::bte::{self, BteConfig};
use malliavin_core::builtin::parse_builtin;
use malliavin_core::dyson;
use malliavin_core::exact::{self, parse_rational};
use malliavin_core::harness;
use malliavin_core::oracle::{self, McConfig};
use malliavin_core::{Error, PathPrefix, Rational, WienerFunctional};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::Domain(_) | Error::Usage(_) | Error::Parse(_) | Error::Unsupported(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::NumericOverflow(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rational(text: &str) -> PyResult<Rational> {
    parse_rational(text).map_err(to_py)
}

/// A smooth Wiener functional on `[0, T]`.
#[pyclass(name = "Functional", frozen)]
struct PyFunctional {
    inner: WienerFunctional,
}

#[pymethods]
impl PyFunctional {
    /// `example1`, `example2`, `monomial(n)` or `expW`; `tau` only for `example1`.
    #[staticmethod]
    #[pyo3(signature = (name, horizon = "1", tau = None))]
    fn builtin(name: &str, horizon: &str, tau: Option<&str>) -> PyResult<Self> {
        let b = parse_builtin(name).map_err(to_py)?;
        let tau = tau.map(rational).transpose()?;
        let inner = b.build(&rational(horizon)?, tau.as_ref()).map_err(to_py)?;
        Ok(PyFunctional { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(PyFunctional {
            inner: WienerFunctional::from_text(text).map_err(to_py)?,
        })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn horizon(&self) -> String {
        exact::format_rational(self.inner.horizon())
    }

    fn term_count(&self) -> usize {
        self.inner.term_count()
    }

    fn __add__(&self, other: &PyFunctional) -> PyResult<Self> {
        Ok(PyFunctional {
            inner: self.inner.sum(&other.inner).map_err(to_py)?,
        })
    }

    fn __mul__(&self, other: &PyFunctional) -> PyResult<Self> {
        Ok(PyFunctional {
            inner: self.inner.product(&other.inner).map_err(to_py)?,
        })
    }

    fn scale(&self, c: f64) -> PyResult<Self> {
        Ok(PyFunctional {
            inner: self.inner.scale_f64(c).map_err(to_py)?,
        })
    }

    fn power(&self, n: u32) -> PyResult<Self> {
        Ok(PyFunctional {
            inner: self.inner.power(n).map_err(to_py)?,
        })
    }

    /// `D^order_time F`, all derivatives taken at the same time.
    fn malliavin_at_time(&self, order: usize, time: &str) -> PyResult<Self> {
        Ok(PyFunctional {
            inner: self.inner.malliavin_at_time(order, &rational(time)?).map_err(to_py)?,
        })
    }

    /// `F(ω^t)` on the path frozen at the prefix end.
    fn freeze_evaluate(&self, path: &PyPath) -> PyResult<f64> {
        self.inner
            .freeze_evaluate(&path.inner, &Default::default())
            .map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Functional(T={}, terms={})", self.horizon(), self.inner.term_count())
    }
}

/// A sampled path prefix on `[0, t]`, piecewise linear between grid points.
#[pyclass(name = "Path", frozen)]
struct PyPath {
    inner: PathPrefix,
}

#[pymethods]
impl PyPath {
    #[new]
    fn new(times: Vec<String>, values: Vec<f64>, horizon: &str) -> PyResult<Self> {
        let times = times.iter().map(|s| rational(s)).collect::<PyResult<Vec<_>>>()?;
        Ok(PyPath {
            inner: PathPrefix::new(times, values, rational(horizon)?).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (t, horizon = "1", steps = 16))]
    fn zero(t: &str, horizon: &str, steps: usize) -> PyResult<Self> {
        Ok(PyPath {
            inner: PathPrefix::sampled(&rational(t)?, steps, rational(horizon)?, |_| 0.0).map_err(to_py)?,
        })
    }

    /// `W(u) = slope · u` on `[0, t]`.
    #[staticmethod]
    #[pyo3(signature = (t, slope, horizon = "1", steps = 16))]
    fn linear(t: &str, slope: f64, horizon: &str, steps: usize) -> PyResult<Self> {
        Ok(PyPath {
            inner: PathPrefix::sampled(&rational(t)?, steps, rational(horizon)?, |u| slope * u).map_err(to_py)?,
        })
    }

    #[getter]
    fn end_time(&self) -> String {
        exact::format_rational(self.inner.end_time())
    }

    #[getter]
    fn end_value(&self) -> f64 {
        self.inner.end_value()
    }

    fn __repr__(&self) -> String {
        format!("Path(t={}, W(t)={})", self.end_time(), self.end_value())
    }
}

/// The γ polynomial of the given order as text.
#[pyfunction]
fn gamma(order: usize) -> String {
    bte::gamma_coefficient(order).to_string()
}

#[pyfunction]
fn gamma_evaluate(order: usize, delta: f64, increment: f64) -> f64 {
    bte::gamma_evaluate(order, delta, increment)
}

/// `M` backward steps of order `L` from the horizon down to the end of `path`.
#[pyfunction]
#[pyo3(signature = (f, path, steps, order, increments = None))]
fn bte_sweep(
    f: &PyFunctional,
    path: &PyPath,
    steps: usize,
    order: usize,
    increments: Option<Vec<f64>>,
) -> PyResult<f64> {
    if steps == 0 {
        return Err(PyValueError::new_err("steps must be positive"));
    }
    let span = f.inner.horizon() - path.inner.end_time();
    let mut cfg = BteConfig::frozen(steps, span / exact::int(steps as i64), order);
    if let Some(inc) = increments {
        cfg = cfg.with_increments(inc);
    }
    bte::backward_sweep(&f.inner, &cfg, &path.inner).map_err(to_py)
}

/// Dyson partial sum to order `K`: `(value, term values)`.
#[pyfunction]
#[pyo3(signature = (f, path, max_order, tol = None))]
fn dyson_evaluate(f: &PyFunctional, path: &PyPath, max_order: usize, tol: Option<f64>) -> PyResult<(f64, Vec<f64>)> {
    let t = path.inner.end_time().clone();
    let rep = dyson::dyson_evaluate(&f.inner, &t, &path.inner, max_order, tol).map_err(to_py)?;
    Ok((rep.value(), rep.term_values))
}

/// Monte Carlo `(mean, standard error)`.
#[pyfunction]
#[pyo3(signature = (f, path, samples, seed, grid_steps = 16, antithetic = false))]
fn mc_conditional_expectation(
    f: &PyFunctional,
    path: &PyPath,
    samples: usize,
    seed: u64,
    grid_steps: usize,
    antithetic: bool,
) -> PyResult<(f64, f64)> {
    let cfg = McConfig {
        samples,
        seed,
        grid_steps,
        antithetic,
    };
    let est = oracle::mc_conditional_expectation(&f.inner, &path.inner, &cfg).map_err(to_py)?;
    Ok((est.mean, est.std_error))
}

#[pyfunction]
fn moment_oracle(f: &PyFunctional, t: &str, w: f64) -> PyResult<f64> {
    oracle::gaussian_moment_expectation(&f.inner, &rational(t)?, w).map_err(to_py)
}

#[pyfunction]
fn truncation_bound(bound: f64, delta: f64, order: usize) -> PyResult<f64> {
    bte::truncation_bound(bound, delta, order).map_err(to_py)
}

/// Runs an experiment config (JSON text) and returns the JSON report.
#[pyfunction]
#[pyo3(signature = (config, timing = false))]
fn run_experiment(config: &str, timing: bool) -> PyResult<String> {
    let cfg = harness::ExperimentConfig::from_json(config).map_err(to_py)?;
    Ok(harness::to_json(&harness::run_experiment(&cfg, timing).map_err(to_py)?))
}

#[pymodule]
fn malliavin(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFunctional>()?;
    m.add_class::<PyPath>()?;
    m.add_function(wrap_pyfunction!(gamma, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(bte_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(dyson_evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(mc_conditional_expectation, m)?)?;
    m.add_function(wrap_pyfunction!(moment_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(truncation_bound, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
