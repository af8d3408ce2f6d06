//! Python bindings: scenarios, simulation, Monte Carlo, patience fits,
//! lane partitioning and camera georeferencing.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sim::control::PolicySpec;
use sim::estimation::{self, FitOptions, ForcedStopObservation};
use sim::georef::{self, CameraExtrinsics, CameraIntrinsics, Correspondence};
use sim::metrics::{run_outflow, MetricsOptions};
use sim::montecarlo::default_edges;

fn err(e: sim::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A scenario configuration.
#[pyclass(name = "Scenario", skip_from_py_object)]
#[derive(Clone)]
struct Scenario {
    inner: sim::ScenarioConfig,
}

#[pymethods]
impl Scenario {
    /// Shipped parameter set: "april25" or "july13".
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        sim::ScenarioConfig::preset(name).map(|inner| Self { inner }).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, overlays = Vec::new()))]
    fn load(path: std::path::PathBuf, overlays: Vec<std::path::PathBuf>) -> PyResult<Self> {
        let o: Vec<&std::path::Path> = overlays.iter().map(|p| p.as_path()).collect();
        sim::ScenarioConfig::load(&path, &o).map(|inner| Self { inner }).map_err(err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        sim::ScenarioConfig::from_toml_str(text).map(|inner| Self { inner }).map_err(err)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn demand_rate(&self) -> f64 {
        self.inner.demand_rate
    }

    #[setter]
    fn set_demand_rate(&mut self, v: f64) -> PyResult<()> {
        let mut c = self.inner.clone();
        c.demand_rate = v;
        c.validate().map_err(err)?;
        self.inner = c;
        Ok(())
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon
    }

    #[setter]
    fn set_horizon(&mut self, v: f64) -> PyResult<()> {
        let mut c = self.inner.clone();
        c.horizon = v;
        c.validate().map_err(err)?;
        self.inner = c;
        Ok(())
    }

    #[getter]
    fn policy(&self) -> &'static str {
        self.inner.policy.name()
    }

    /// Switch control policy. `kind` is one of no_control, no_wait
    /// (needs `l0`) or downstream (needs `l0` and `l_h`). Batching
    /// parameters come from presets only.
    #[pyo3(signature = (kind, l0 = None, l_h = None))]
    fn set_policy(&mut self, kind: &str, l0: Option<f64>, l_h: Option<f64>) -> PyResult<()> {
        let need = |v: Option<f64>, what: &str| v.ok_or_else(|| PyValueError::new_err(format!("{kind} needs {what}")));
        let policy = match kind {
            "no_control" => PolicySpec::NoControl,
            "no_wait" => PolicySpec::NoWait { l0: need(l0, "l0")? },
            "downstream" => PolicySpec::Downstream {
                l0: need(l0, "l0")?,
                l_h: need(l_h, "l_h")?,
            },
            other => return Err(PyValueError::new_err(format!("unknown policy {other:?}"))),
        };
        policy.validate(self.inner.lane.length).map_err(err)?;
        self.inner.policy = policy;
        Ok(())
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, demand_rate={}, policy={:?})",
            self.inner.name,
            self.inner.demand_rate,
            self.inner.policy.name()
        )
    }
}

/// One seeded run. Returns outflow, counted travel times and the event log
/// as JSON lines.
#[pyfunction]
fn simulate<'py>(py: Python<'py>, scenario: PyRef<'py, Scenario>, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let cfg = scenario.inner.clone();
    let run = py.detach(|| sim::run_simulation(&cfg, seed)).map_err(err)?;
    let travel: Vec<f64> = run
        .taxis
        .iter()
        .filter(|t| t.entry_time.is_some_and(|e| e >= run.warmup))
        .filter_map(|t| t.travel_time())
        .collect();
    let d = PyDict::new(py);
    d.set_item("seed", run.seed)?;
    d.set_item("outflow", run_outflow(&run))?;
    d.set_item("travel_times", travel)?;
    d.set_item("exits", run.exit_times().len())?;
    d.set_item("max_queue", run.max_queue)?;
    d.set_item("events_jsonl", run.events_jsonl().map_err(err)?)?;
    Ok(d)
}

/// Seeded replications; returns means, standard errors and the running
/// convergence table.
#[pyfunction]
fn monte_carlo<'py>(
    py: Python<'py>,
    scenario: PyRef<'py, Scenario>,
    runs: u64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = scenario.inner.clone();
    let mc = py
        .detach(|| {
            sim::montecarlo::run_monte_carlo_with(
                &cfg,
                runs,
                seed,
                sim::montecarlo::Execution::Parallel,
                MetricsOptions::default(),
            )
        })
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("runs", runs)?;
    d.set_item("outflow_mean", mc.outflow.mean)?;
    d.set_item("outflow_se", mc.outflow.se())?;
    d.set_item("travel_time_mean", mc.travel_time.mean)?;
    d.set_item("travel_time_se", mc.travel_time.se())?;
    d.set_item("per_run_outflow", mc.runs.iter().map(|r| r.outflow).collect::<Vec<_>>())?;
    let conv: Vec<(u64, f64, f64, f64)> = mc
        .convergence
        .iter()
        .map(|c| (c.runs, c.travel_time_mean, c.travel_time_sd, c.travel_time_se))
        .collect();
    d.set_item("convergence", conv)?;
    d.set_item("forced_stops_tsv", mc.report.forced_stops_tsv())?;
    d.set_item("segment_edges", default_edges(&cfg))?;
    Ok(d)
}

/// Two-component gamma mixture of patience times.
#[pyclass(name = "MixtureGamma", skip_from_py_object)]
#[derive(Clone)]
struct PyMixture {
    inner: sim::MixtureGamma,
}

#[pymethods]
impl PyMixture {
    #[new]
    fn new(gamma: f64, k1: f64, theta1: f64, k2: f64, theta2: f64) -> PyResult<Self> {
        sim::MixtureGamma::new(gamma, k1, theta1, k2, theta2)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    fn pdf(&self, p: f64) -> PyResult<f64> {
        self.inner.pdf(p).map_err(err)
    }

    fn cdf(&self, p: f64) -> PyResult<f64> {
        self.inner.cdf(p).map_err(err)
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.inner.sample(&mut rng)).collect()
    }

    /// `(gamma, k1, theta1, k2, theta2)`.
    fn params(&self) -> (f64, f64, f64, f64, f64) {
        let m = self.inner;
        (m.gamma, m.k1, m.theta1, m.k2, m.theta2)
    }

    fn __repr__(&self) -> String {
        let m = self.inner;
        format!(
            "MixtureGamma(gamma={}, k1={}, theta1={}, k2={}, theta2={})",
            m.gamma, m.k1, m.theta1, m.k2, m.theta2
        )
    }
}

type ObsTuple = (f64, f64, bool, u32);

fn to_observations(rows: Vec<ObsTuple>) -> Vec<ForcedStopObservation> {
    rows.into_iter()
        .map(|(location, wait, discharged, instance)| ForcedStopObservation {
            location,
            wait,
            discharged,
            instance,
        })
        .collect()
}

/// Censored maximum-likelihood fit. Observations are
/// `(location, wait, discharged, instance)` tuples.
#[pyfunction]
fn fit_mixture_gamma(py: Python<'_>, observations: Vec<ObsTuple>) -> PyResult<(PyMixture, f64)> {
    let obs = to_observations(observations);
    let fit = py
        .detach(|| estimation::fit_mixture_gamma(&obs, FitOptions::default()))
        .map_err(err)?;
    Ok((PyMixture { inner: fit.params }, fit.log_likelihood))
}

/// Optimal contiguous lane partition of first-instance forced waits.
#[pyfunction]
fn partition_lane<'py>(
    py: Python<'py>,
    observations: Vec<ObsTuple>,
    k: usize,
    lane_length: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let p = estimation::partition_lane(&to_observations(observations), k, lane_length).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("edges", p.edges.clone())?;
    d.set_item("means", p.means.clone())?;
    d.set_item("counts", p.counts.clone())?;
    d.set_item("objective", p.objective)?;
    Ok(d)
}

type Pose = (f64, f64, f64, [f64; 3]);

fn to_intrinsics(a: (f64, f64, f64, f64)) -> PyResult<CameraIntrinsics> {
    CameraIntrinsics::new(a.0, a.1, a.2, a.3).map_err(err)
}

fn pose(e: Pose) -> CameraExtrinsics {
    CameraExtrinsics {
        theta: e.0,
        psi: e.1,
        omega: e.2,
        translation: e.3,
    }
}

/// Camera pose `(theta, psi, omega, [tx, ty, tz])` and RMS pixel error
/// from `(x, y, X, Y, Z)` correspondences.
#[pyfunction]
fn estimate_extrinsics(
    intrinsics: (f64, f64, f64, f64),
    correspondences: Vec<(f64, f64, f64, f64, f64)>,
) -> PyResult<(Pose, f64)> {
    let a = to_intrinsics(intrinsics)?;
    let c: Vec<Correspondence> = correspondences
        .into_iter()
        .map(|(x, y, wx, wy, wz)| Correspondence {
            pixel: [x, y],
            world: [wx, wy, wz],
        })
        .collect();
    let fit = georef::estimate_extrinsics(&a, &c).map_err(err)?;
    let e = fit.extrinsics;
    Ok(((e.theta, e.psi, e.omega, e.translation), fit.rms_px))
}

#[pyfunction]
fn project(intrinsics: (f64, f64, f64, f64), extrinsics: Pose, world: [f64; 3]) -> PyResult<[f64; 2]> {
    georef::project(&to_intrinsics(intrinsics)?, &pose(extrinsics), world).map_err(err)
}

/// Ground-plane `(X, Z)` seen at `pixel`.
#[pyfunction]
fn pixel_to_world_ground(intrinsics: (f64, f64, f64, f64), extrinsics: Pose, pixel: [f64; 2]) -> PyResult<[f64; 2]> {
    georef::pixel_to_world_ground(&to_intrinsics(intrinsics)?, &pose(extrinsics), pixel).map_err(err)
}

#[pymodule]
#[pyo3(name = "curbside")]
fn curbside_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_class::<PyMixture>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(fit_mixture_gamma, m)?)?;
    m.add_function(wrap_pyfunction!(partition_lane, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_extrinsics, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(pixel_to_world_ground, m)?)?;
    Ok(())
}
