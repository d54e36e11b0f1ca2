//! Python bindings for the opinion dynamics engine.

use opiniondrift_core::analysis::{self, AttractionOptions};
use opiniondrift_core::input::{MeanRule, Phase};
use opiniondrift_core::{oracle, ClusterSet, InputSchedule, SimulationConfig};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Piecewise-uniform measure: cell `i` spreads `masses[i]` over `[edges[i], edges[i+1]]`.
#[pyclass(module = "opiniondrift", frozen)]
#[derive(Clone)]
struct OpinionPartition {
    inner: opiniondrift_core::OpinionPartition,
}

#[pymethods]
impl OpinionPartition {
    #[new]
    fn new(edges: Vec<f64>, masses: Vec<f64>) -> PyResult<Self> {
        let inner = opiniondrift_core::OpinionPartition::new(edges, masses).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (lo, hi, n_cells, mass = 1.0))]
    fn uniform(lo: f64, hi: f64, n_cells: usize, mass: f64) -> PyResult<Self> {
        let inner = opiniondrift_core::OpinionPartition::from_uniform(lo, hi, mass, n_cells).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_atoms(atoms: Vec<(f64, f64)>) -> PyResult<Self> {
        let inner = opiniondrift_core::OpinionPartition::from_atoms(&atoms).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn edges(&self) -> Vec<f64> {
        self.inner.edges().to_vec()
    }

    #[getter]
    fn masses(&self) -> Vec<f64> {
        self.inner.masses().to_vec()
    }

    #[getter]
    fn total_mass(&self) -> f64 {
        self.inner.total_mass()
    }

    #[getter]
    fn support(&self) -> (f64, f64) {
        self.inner.support()
    }

    /// `(mass, first moment)` on the closed window `[a, b]`.
    fn window_moments(&self, a: f64, b: f64) -> PyResult<(f64, f64)> {
        let w = self.inner.window_moments(a, b).map_err(value_err)?;
        Ok((w.mass, w.moment))
    }

    fn quantile(&self, p: f64) -> f64 {
        self.inner.quantile(p)
    }

    fn __len__(&self) -> usize {
        self.inner.n_cells()
    }

    fn __repr__(&self) -> String {
        let (lo, hi) = self.inner.support();
        format!("OpinionPartition(cells={}, support=({lo}, {hi}), mass={})", self.inner.n_cells(), self.inner.total_mass())
    }
}

/// Gaussian restricted to `mean ± 3 sigma`, scaled to total mass `weight`.
#[pyclass(module = "opiniondrift", frozen)]
#[derive(Clone)]
struct TruncatedGaussianInput {
    inner: opiniondrift_core::TruncatedGaussianInput,
}

#[pymethods]
impl TruncatedGaussianInput {
    #[new]
    #[pyo3(signature = (mean, sigma, weight = 1.0))]
    fn new(mean: f64, sigma: f64, weight: f64) -> PyResult<Self> {
        let inner = opiniondrift_core::TruncatedGaussianInput::new(mean, sigma, weight).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma()
    }

    #[getter]
    fn weight(&self) -> f64 {
        self.inner.weight()
    }

    #[getter]
    fn support(&self) -> (f64, f64) {
        self.inner.support()
    }

    fn density(&self, z: f64) -> f64 {
        self.inner.density(z)
    }

    fn window_moments(&self, a: f64, b: f64) -> PyResult<(f64, f64)> {
        let w = self.inner.window_moments(a, b).map_err(value_err)?;
        Ok((w.mass, w.moment))
    }

    fn __repr__(&self) -> String {
        format!(
            "TruncatedGaussianInput(mean={}, sigma={}, weight={})",
            self.inner.mean(),
            self.inner.sigma(),
            self.inner.weight()
        )
    }
}

/// `input` is `None`, a constant input, or a list of
/// `(until_step, mean, sigma, weight)` phases.
fn schedule(input: Option<&Bound<'_, PyAny>>) -> PyResult<InputSchedule> {
    let Some(obj) = input.filter(|o| !o.is_none()) else {
        return Ok(InputSchedule::None);
    };
    if let Ok(u) = obj.extract::<TruncatedGaussianInput>() {
        return Ok(InputSchedule::Constant(u.inner));
    }
    let phases: Vec<(usize, f64, f64, f64)> = obj.extract()?;
    let phases = phases
        .into_iter()
        .map(|(until_step, mean, sigma, weight)| Phase { until_step, mean: MeanRule::Fixed(mean), sigma, weight })
        .collect();
    InputSchedule::phased(phases).map_err(value_err)
}

fn config(mu0: &opiniondrift_core::OpinionPartition, r: f64, max_steps: usize) -> PyResult<SimulationConfig> {
    let mut cfg = SimulationConfig::new(r, mu0);
    cfg.max_steps = max_steps;
    cfg.validate().map_err(value_err)?;
    Ok(cfg)
}

fn clusters(set: &ClusterSet) -> Vec<(f64, f64)> {
    set.clusters.iter().map(|c| (c.position, c.mass)).collect()
}

/// Run the measure dynamics. Returns a dict with `termination`, `steps`,
/// `clusters` as `(position, mass)` pairs and the `final` partition.
#[pyfunction]
#[pyo3(signature = (mu0, r, input = None, max_steps = 2000))]
fn simulate<'py>(
    py: Python<'py>,
    mu0: &OpinionPartition,
    r: f64,
    input: Option<&Bound<'py, PyAny>>,
    max_steps: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let sched = schedule(input)?;
    let cfg = config(&mu0.inner, r, max_steps)?;
    let traj = opiniondrift_core::run(&mu0.inner, &cfg, &sched).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("termination", format!("{:?}", traj.termination))?;
    out.set_item("steps", traj.steps)?;
    out.set_item("clusters", clusters(&traj.clusters))?;
    out.set_item("final", OpinionPartition { inner: traj.last().clone() })?;
    Ok(out)
}

/// Initial opinions drawn to the input's converged cluster.
#[pyfunction]
#[pyo3(signature = (mu0, input, r, max_steps = 20000))]
fn attraction_range<'py>(
    py: Python<'py>,
    mu0: &OpinionPartition,
    input: &TruncatedGaussianInput,
    r: f64,
    max_steps: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(&mu0.inner, r, max_steps)?;
    let opts = AttractionOptions::for_config(&cfg);
    let res = analysis::attraction_range(&mu0.inner, &input.inner, &cfg, &opts).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("lo", res.lo)?;
    out.set_item("hi", res.hi)?;
    out.set_item("length", res.length)?;
    out.set_item("attracted_mass", res.attracted_mass)?;
    out.set_item("center", res.converged_center)?;
    out.set_item("steps", res.steps)?;
    Ok(out)
}

/// Attraction-range lengths over `(sigma, r)` pairs plus the linear fit
/// `length = a sigma + b r + c`.
#[pyfunction]
#[pyo3(signature = (mu0, grid, mean = 0.0, weight = 1.0, jobs = 1, max_steps = 20000))]
fn sweep<'py>(
    py: Python<'py>,
    mu0: &OpinionPartition,
    grid: Vec<(f64, f64)>,
    mean: f64,
    weight: f64,
    jobs: usize,
    max_steps: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let configure = |r: f64| {
        let mut cfg = SimulationConfig::new(r, &mu0.inner);
        cfg.max_steps = max_steps;
        cfg.record_every = usize::MAX;
        let opts = AttractionOptions::for_config(&cfg);
        (cfg, opts)
    };
    let points = analysis::run_sweep(&mu0.inner, mean, weight, &grid, &configure, jobs).map_err(value_err)?;
    let out = PyDict::new(py);
    let rows: Vec<(f64, f64, f64, bool)> = points.iter().map(|p| (p.sigma, p.r, p.range_length, p.converged)).collect();
    out.set_item("points", rows)?;
    match analysis::sweep_fit(&points, mu0.inner.support_width()) {
        Ok(fit) => {
            out.set_item("a", fit.a)?;
            out.set_item("b", fit.b)?;
            out.set_item("c", fit.c)?;
            out.set_item("r_squared", fit.r_squared)?;
        }
        Err(e) => out.set_item("fit_error", e.to_string())?,
    }
    Ok(out)
}

/// Run both input strategies to their common horizon and report the mass
/// within `attract_radius` of each final input mean.
#[pyfunction]
fn compare<'py>(
    py: Python<'py>,
    mu0: &OpinionPartition,
    r: f64,
    direct: &Bound<'py, PyAny>,
    distracting: &Bound<'py, PyAny>,
    attract_radius: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(&mu0.inner, r, usize::MAX)?;
    let (d, s) = (schedule(Some(direct))?, schedule(Some(distracting))?);
    let rep = analysis::compare_strategies(&mu0.inner, &cfg, &d, &s, attract_radius).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("direct", rep.direct.attracted)?;
    out.set_item("distracting", rep.distracting.attracted)?;
    out.set_item("winner", rep.winner())?;
    Ok(out)
}

/// Finite-agent run from `n_agents` quantile samples of `mu0`.
#[pyfunction]
#[pyo3(signature = (mu0, n_agents, r, input = None, max_steps = 100000))]
fn agent_run<'py>(
    py: Python<'py>,
    mu0: &OpinionPartition,
    n_agents: usize,
    r: f64,
    input: Option<&Bound<'py, PyAny>>,
    max_steps: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let sched = schedule(input)?;
    let pop = oracle::sample_agents(&mu0.inner, n_agents).map_err(value_err)?;
    let res = oracle::agent_run(&pop, &sched, r, max_steps).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("steps", res.steps)?;
    out.set_item("clusters", clusters(&res.clusters))?;
    out.set_item("opinions", res.population.opinions().to_vec())?;
    Ok(out)
}

#[pyfunction]
fn lemma1_bounds(a: f64, b: f64, rho_min: f64, rho_max: f64) -> PyResult<(f64, f64)> {
    opiniondrift_core::lemma1_bounds(a, b, rho_min, rho_max).map_err(value_err)
}

#[pyfunction]
fn positive_mass(part: &OpinionPartition) -> f64 {
    analysis::positive_mass(&part.inner)
}

#[pyfunction]
fn attracted_mass(part: &OpinionPartition, center: f64, radius: f64) -> f64 {
    analysis::attracted_mass(&part.inner, center, radius)
}

#[pymodule]
fn opiniondrift(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<OpinionPartition>()?;
    m.add_class::<TruncatedGaussianInput>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(attraction_range, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(agent_run, m)?)?;
    m.add_function(wrap_pyfunction!(lemma1_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(positive_mass, m)?)?;
    m.add_function(wrap_pyfunction!(attracted_mass, m)?)?;
    Ok(())
}
