//! Python bindings: configuration, the command pipeline, and the small pure
//! building blocks (scoring, matching, control, simulation, rendering).

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use drive_core::agent::PerceptionKind;
use drive_core::bench::{score_route as score, RouteResult};
use drive_core::config::{RunConfig, DESK_PRESET, FULL_PRESET};
use drive_core::control::VehicleController;
use drive_core::geometry::Vec2;
use drive_core::learning::waypoint_loss as l1;
use drive_core::perception::hungarian as solve;
use drive_core::pipeline::{self, AgentChoice, Workspace};
use drive_core::planner::WaypointPlan;
use drive_core::simworld::{
    make_scenario, render_front_view, run_episode, EpisodeConfig, ExpertAgent, InfractionEvent, InfractionKind, ScenarioKind,
    ScenarioSpec,
};
use drive_core::Error;

fn py_err(e: Error) -> PyErr {
    if e.is_user_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Serializes through JSON into plain Python dicts and lists.
fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn perception(name: &str) -> PyResult<PerceptionKind> {
    match name {
        "detection" => Ok(PerceptionKind::Detection),
        "classification" => Ok(PerceptionKind::Classification),
        other => Err(PyValueError::new_err(format!("unknown perception `{other}`"))),
    }
}

fn plan(points: Vec<(f64, f64)>) -> PyResult<WaypointPlan> {
    WaypointPlan::new(points.into_iter().map(|(x, y)| Vec2::new(x, y)).collect()).map_err(py_err)
}

/// Validated run configuration.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn desk() -> PyResult<Self> {
        Ok(PyConfig {
            inner: RunConfig::parse(DESK_PRESET).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn full() -> PyResult<Self> {
        Ok(PyConfig {
            inner: RunConfig::parse(FULL_PRESET).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: RunConfig::parse(text).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyConfig {
            inner: RunConfig::load(path).map_err(py_err)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(py_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn out(&self) -> PathBuf {
        self.inner.out.clone()
    }

    #[setter]
    fn set_out(&mut self, out: PathBuf) {
        self.inner.out = out;
    }

    fn __repr__(&self) -> String {
        format!("Config(seed={}, out={:?})", self.inner.seed, self.inner.out)
    }
}

fn workspace(config: &PyConfig) -> Workspace {
    Workspace::new(config.inner.clone(), config.inner.out.clone())
}

fn quiet(_: &str) {}

/// Pretrains the detector and classifier; returns the summary.
#[pyfunction]
fn pretrain<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyAny>> {
    let ws = workspace(config);
    let s = py.detach(|| pipeline::pretrain(&ws, &mut quiet)).map_err(py_err)?;
    to_py(py, &s)
}

#[pyfunction]
fn collect<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyAny>> {
    let ws = workspace(config);
    let s = py.detach(|| pipeline::collect(&ws, &mut quiet)).map_err(py_err)?;
    to_py(py, &s)
}

#[pyfunction]
#[pyo3(signature = (config, perception_kind = "detection"))]
fn train<'py>(py: Python<'py>, config: &PyConfig, perception_kind: &str) -> PyResult<Bound<'py, PyAny>> {
    let ws = workspace(config);
    let kind = perception(perception_kind)?;
    let s = py.detach(|| pipeline::train(&ws, kind, &mut quiet)).map_err(py_err)?;
    to_py(py, &s)
}

#[pyfunction]
#[pyo3(signature = (config, perception_kind = "detection", rounds = None))]
fn dagger<'py>(py: Python<'py>, config: &PyConfig, perception_kind: &str, rounds: Option<u32>) -> PyResult<Bound<'py, PyAny>> {
    let ws = workspace(config);
    let kind = perception(perception_kind)?;
    let rounds = rounds.unwrap_or(ws.config.dagger.rounds);
    let s = py.detach(|| pipeline::dagger(&ws, kind, rounds, &mut quiet)).map_err(py_err)?;
    to_py(py, &s)
}

/// Benchmarks an agent; returns the table rows (per route, then aggregate).
#[pyfunction(name = "bench")]
#[pyo3(signature = (config, agent = "expert", suite = None))]
fn run_bench<'py>(py: Python<'py>, config: &PyConfig, agent: &str, suite: Option<Vec<String>>) -> PyResult<Bound<'py, PyAny>> {
    let ws = workspace(config);
    let choice = AgentChoice::parse(agent).map_err(py_err)?;
    let suite = suite
        .map(|s| s.iter().map(|x| ScenarioSpec::parse(x)).collect::<Result<Vec<_>, _>>())
        .transpose()
        .map_err(py_err)?;
    let rows = py
        .detach(|| pipeline::bench(&ws, choice, suite.as_deref(), &mut quiet).and_then(|r| r.table()))
        .map_err(py_err)?;
    to_py(py, &rows)
}

#[pyfunction]
fn ablate<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyAny>> {
    let ws = workspace(config);
    let s = py.detach(|| pipeline::ablate(&ws, None, &mut quiet)).map_err(py_err)?;
    to_py(py, &s)
}

/// Minimum-cost assignment of rows to columns (rows ≤ columns).
#[pyfunction]
fn hungarian(cost: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
    solve(&cost).map_err(py_err)
}

/// Driving score of one route: completion × Π penalty(kind).
#[pyfunction]
#[pyo3(signature = (completion, events, config = None))]
fn score_route(completion: f64, events: Vec<String>, config: Option<&PyConfig>) -> PyResult<f64> {
    let penalties = config.map(|c| c.inner.penalties).unwrap_or_default();
    let events = events
        .iter()
        .enumerate()
        .map(|(i, name)| {
            Ok(InfractionEvent {
                kind: InfractionKind::parse(name)?,
                time: i as f64,
                position: Vec2::default(),
                actor: None,
            })
        })
        .collect::<Result<Vec<_>, Error>>()
        .map_err(py_err)?;
    let r = RouteResult {
        scenario: ScenarioSpec::new(ScenarioKind::Follow, 0),
        completion,
        events,
        duration: 0.0,
        km: 0.0,
        route: Vec::new(),
        ego_path: Vec::new(),
    };
    score(&r, &penalties).map_err(py_err)
}

#[pyfunction]
fn waypoint_loss(pred: Vec<(f64, f64)>, truth: Vec<(f64, f64)>) -> PyResult<f64> {
    l1(&plan(pred)?, &plan(truth)?).map_err(py_err)
}

/// Lateral and longitudinal PID pair; `act` returns `(steer, throttle)`.
#[pyclass(name = "Controller")]
struct PyController {
    inner: VehicleController,
}

#[pymethods]
impl PyController {
    #[new]
    #[pyo3(signature = (config = None))]
    fn new(config: Option<&PyConfig>) -> Self {
        let cfg = config.map(|c| c.inner.controller).unwrap_or_default();
        PyController {
            inner: VehicleController::new(cfg),
        }
    }

    fn act(&mut self, waypoints: Vec<(f64, f64)>, speed: f64) -> PyResult<(f64, f64)> {
        let out = self.inner.act(&plan(waypoints)?, speed).map_err(py_err)?;
        Ok((out.action.steer, out.action.throttle))
    }

    fn reset(&mut self) {
        self.inner.reset();
    }
}

#[derive(Serialize)]
struct EpisodeSummary {
    completion: f64,
    duration: f64,
    distance: f64,
    collisions: usize,
    end: String,
    events: Vec<(String, f64)>,
}

/// Drives the privileged expert through one seeded scenario.
#[pyfunction]
fn run_expert<'py>(py: Python<'py>, kind: &str, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let spec = ScenarioSpec::new(kind.parse().map_err(py_err)?, seed);
    let outcome = py
        .detach(|| make_scenario(&spec).map(|w| run_episode(w, &mut ExpertAgent::default(), &EpisodeConfig::default())))
        .map_err(py_err)?;
    let s = EpisodeSummary {
        completion: outcome.completion,
        duration: outcome.duration,
        distance: outcome.distance,
        collisions: outcome.collisions(),
        end: format!("{:?}", outcome.end),
        events: outcome.events.iter().map(|e| (e.kind.name().to_string(), e.time)).collect(),
    };
    to_py(py, &s)
}

/// First camera frame of a scenario: `(width, height, rgb bytes, boxes)` with
/// boxes as `(class, cx, cy, w, h)` in normalized image units.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn render(kind: &str, seed: u64) -> PyResult<(usize, usize, Vec<u8>, Vec<(String, f64, f64, f64, f64)>)> {
    let spec = ScenarioSpec::new(kind.parse().map_err(py_err)?, seed);
    let world = make_scenario(&spec).map_err(py_err)?;
    let (image, truth) = render_front_view(&world, &Default::default());
    let boxes = truth
        .iter()
        .map(|d| (format!("{:?}", d.class).to_lowercase(), d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h))
        .collect();
    Ok((image.width, image.height, image.data, boxes))
}

#[pymodule]
fn drive_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyController>()?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(collect, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(dagger, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    m.add_function(wrap_pyfunction!(ablate, m)?)?;
    m.add_function(wrap_pyfunction!(hungarian, m)?)?;
    m.add_function(wrap_pyfunction!(score_route, m)?)?;
    m.add_function(wrap_pyfunction!(waypoint_loss, m)?)?;
    m.add_function(wrap_pyfunction!(run_expert, m)?)?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    Ok(())
}
