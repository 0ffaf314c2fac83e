//! Python bindings for the engine.
//!
//! Inputs (tasks, configs, checkpoints, dumps) are accepted either as JSON
//! text or as the equivalent Python objects. Each operation has a variant
//! returning Python objects and a `*_json` variant returning the exact text
//! the command-line tool writes for the same inputs.

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyList, PyString};
use pythonize::{depythonize, pythonize};
use serde::Serialize;
use serde_json::Value;
use spatialrl_core::config::EngineConfig;
use spatialrl_core::layout::SceneTask;
use spatialrl_core::ops::{self, OpError};
use spatialrl_core::parse::parse_rollout as parse_text;
use spatialrl_core::toy::GridPolicyParams;
use spatialrl_core::trajectory::{discounted_reward as discount, read_dump, write_dump, TrajectoryGroup};

create_exception!(
    spatialrl,
    InputError,
    PyValueError,
    "Invalid input; the command-line tool exits with status 2 on these."
);
create_exception!(
    spatialrl,
    EngineError,
    PyRuntimeError,
    "Engine failure; the command-line tool exits with status 1 on these."
);

fn op_err(e: impl Into<OpError>) -> PyErr {
    let e = e.into();
    if e.is_input() {
        InputError::new_err(e.to_string())
    } else {
        EngineError::new_err(e.to_string())
    }
}

fn engine_err(e: impl std::fmt::Display) -> PyErr {
    EngineError::new_err(e.to_string())
}

/// JSON text of `obj`, which is either a string holding JSON or a
/// JSON-compatible Python value.
fn json_text(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(s) = obj.cast::<PyString>() {
        return Ok(s.to_str()?.to_owned());
    }
    let value: Value = depythonize(obj).map_err(|e| InputError::new_err(e.to_string()))?;
    Ok(value.to_string())
}

/// Python value mirroring the JSON form of `value` (lists, never tuples).
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let value = serde_json::to_value(value).map_err(engine_err)?;
    pythonize(py, &value).map_err(engine_err)
}

fn jsonl<T: Serialize>(values: &[T]) -> PyResult<String> {
    let mut out = String::new();
    for v in values {
        out.push_str(&serde_json::to_string(v).map_err(engine_err)?);
        out.push('\n');
    }
    Ok(out)
}

fn load_task(obj: &Bound<'_, PyAny>) -> PyResult<SceneTask> {
    SceneTask::from_json(&json_text(obj)?).map_err(op_err)
}

fn load_params(obj: Option<&Bound<'_, PyAny>>) -> PyResult<Option<GridPolicyParams>> {
    obj.map(|o| {
        let text = json_text(o)?;
        serde_json::from_str(&text).map_err(|e| InputError::new_err(format!("checkpoint: {e}")))
    })
    .transpose()
}

/// Trajectory groups from JSONL text, a list of group objects, or one group object.
fn load_groups(obj: &Bound<'_, PyAny>) -> PyResult<Vec<TrajectoryGroup>> {
    let text = if let Ok(list) = obj.cast::<PyList>() {
        let lines = list.iter().map(|item| json_text(&item)).collect::<PyResult<Vec<_>>>()?;
        lines.join("\n")
    } else {
        json_text(obj)?
    };
    read_dump(text.as_bytes()).map_err(op_err)
}

/// Engine settings plus the operations that use them.
#[pyclass(module = "spatialrl", frozen)]
struct Engine {
    config: EngineConfig,
}

#[pymethods]
impl Engine {
    /// `config` is a JSON string or dict in the engine config format; defaults when omitted.
    #[new]
    #[pyo3(signature = (config = None))]
    fn new(config: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let config = match config {
            Some(c) => EngineConfig::from_json(&json_text(c)?).map_err(op_err)?,
            None => EngineConfig::default(),
        };
        Ok(Self { config })
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.config)
    }

    /// Reward breakdown of one roll-out.
    fn score<'py>(&self, py: Python<'py>, task: &Bound<'py, PyAny>, raw_text: &str) -> PyResult<Bound<'py, PyAny>> {
        let task = load_task(task)?;
        let out = py
            .detach(|| ops::score(&self.config, &task, raw_text))
            .map_err(op_err)?;
        to_py(py, &out)
    }

    /// Same as `score`, as the pretty-printed JSON the CLI writes (without the final newline).
    fn score_json(&self, py: Python<'_>, task: &Bound<'_, PyAny>, raw_text: &str) -> PyResult<String> {
        let task = load_task(task)?;
        let out = py
            .detach(|| ops::score(&self.config, &task, raw_text))
            .map_err(op_err)?;
        serde_json::to_string_pretty(&out).map_err(engine_err)
    }

    fn compose<'py>(
        &self,
        py: Python<'py>,
        render: f64,
        format: f64,
        collision_ratio: f64,
        constraint_ratio: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let out = ops::compose(&self.config, render, format, collision_ratio, constraint_ratio).map_err(op_err)?;
        to_py(py, &out)
    }

    /// Samples a trajectory group from the toy policy (uniform unless `params` is a checkpoint).
    #[pyo3(signature = (task, params = None))]
    fn rollout<'py>(
        &self,
        py: Python<'py>,
        task: &Bound<'py, PyAny>,
        params: Option<&Bound<'py, PyAny>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let group = self.sample(py, task, params)?;
        to_py(py, &group)
    }

    /// Same as `rollout`, as the dump file the CLI writes.
    #[pyo3(signature = (task, params = None))]
    fn rollout_jsonl(
        &self,
        py: Python<'_>,
        task: &Bound<'_, PyAny>,
        params: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<String> {
        let group = self.sample(py, task, params)?;
        let mut buf = Vec::new();
        write_dump(&mut buf, &[group]).map_err(engine_err)?;
        String::from_utf8(buf).map_err(engine_err)
    }

    /// Advantage reports for a dump given as JSONL text, a list of groups or one group.
    fn advantage<'py>(&self, py: Python<'py>, dump: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let groups = load_groups(dump)?;
        let reports = py.detach(|| ops::advantages(&self.config, &groups)).map_err(op_err)?;
        to_py(py, &reports)
    }

    /// Same as `advantage`, as the JSONL the CLI writes.
    fn advantage_jsonl(&self, py: Python<'_>, dump: &Bound<'_, PyAny>) -> PyResult<String> {
        let groups = load_groups(dump)?;
        let reports = py.detach(|| ops::advantages(&self.config, &groups)).map_err(op_err)?;
        jsonl(&reports)
    }

    /// Trains the toy policy. Returns `{"baseline", "log", "params"}`; `params`
    /// is a checkpoint accepted by `rollout`.
    #[pyo3(signature = (tasks, steps = 300, lr = None))]
    fn train_toy<'py>(
        &self,
        py: Python<'py>,
        tasks: Vec<Bound<'py, PyAny>>,
        steps: usize,
        lr: Option<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let tasks = tasks.iter().map(load_task).collect::<PyResult<Vec<_>>>()?;
        let outcome = py
            .detach(|| ops::train_toy(&self.config, &tasks, steps, lr))
            .map_err(op_err)?;
        let value = serde_json::json!({
            "baseline": outcome.baseline,
            "log": outcome.log,
            "params": outcome.params,
        });
        to_py(py, &value)
    }

    fn __repr__(&self) -> String {
        format!(
            "Engine(group={}, turns={}, gamma={}, seed={})",
            self.config.group, self.config.turns, self.config.gamma, self.config.seed
        )
    }
}

impl Engine {
    fn sample(
        &self,
        py: Python<'_>,
        task: &Bound<'_, PyAny>,
        params: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<TrajectoryGroup> {
        let task = load_task(task)?;
        let params = load_params(params)?;
        py.detach(|| ops::sample_group(&self.config, &task, params))
            .map_err(op_err)
    }
}

/// Splits a roll-out into its parts and reports the furthest parse stage reached.
#[pyfunction]
fn parse_rollout<'py>(py: Python<'py>, raw_text: &str) -> PyResult<Bound<'py, PyAny>> {
    let parsed = parse_text(raw_text);
    let value = serde_json::json!({ "stage": parsed.stage(), "parsed": parsed });
    to_py(py, &value)
}

/// Discounted sum of per-turn rewards, with turn t weighted by gamma^t.
#[pyfunction]
fn discounted_reward(totals: Vec<f64>, gamma: f64) -> f64 {
    discount(&totals, gamma)
}

#[pymodule]
fn spatialrl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("InputError", m.py().get_type::<InputError>())?;
    m.add("EngineError", m.py().get_type::<EngineError>())?;
    m.add_class::<Engine>()?;
    m.add_function(wrap_pyfunction!(parse_rollout, m)?)?;
    m.add_function(wrap_pyfunction!(discounted_reward, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use pyo3::types::PyDict;

    const FOUR_CUBES: &str = include_str!("../../cli/tests/fixtures/four_cubes.json");
    const DUMP: &str = include_str!("../../cli/tests/fixtures/four_cubes_dump.jsonl");
    const GOLDEN: &str = include_str!("../../cli/tests/fixtures/four_cubes_advantage.golden.jsonl");
    const BEDROOM: &str = include_str!("../../cli/tests/fixtures/bedroom.json");
    const OVERLAP: &str = include_str!("../../cli/tests/fixtures/bedroom_overlap.txt");

    fn with_py<F: FnOnce(Python<'_>)>(f: F) {
        Python::initialize();
        Python::attach(f);
    }

    fn engine(config: Option<&str>, py: Python<'_>) -> Engine {
        let config = config.map(|c| PyString::new(py, c).into_any());
        Engine::new(config.as_ref()).unwrap()
    }

    #[test]
    fn advantage_jsonl_matches_golden_file() {
        with_py(|py| {
            let e = engine(None, py);
            let dump = PyString::new(py, DUMP).into_any();
            assert_eq!(e.advantage_jsonl(py, &dump).unwrap(), GOLDEN);
        });
    }

    #[test]
    fn rollout_jsonl_matches_cli_dump() {
        with_py(|py| {
            let e = engine(Some(r#"{"seed": 1}"#), py);
            let task = PyString::new(py, FOUR_CUBES).into_any();
            assert_eq!(e.rollout_jsonl(py, &task, None).unwrap(), DUMP);
        });
    }

    #[test]
    fn groups_accepted_as_python_objects() {
        with_py(|py| {
            let e = engine(None, py);
            let json = py.import("json").unwrap();
            let group = json.call_method1("loads", (DUMP.trim(),)).unwrap();
            let list = PyList::new(py, [group.clone()]).unwrap().into_any();
            assert_eq!(e.advantage_jsonl(py, &group).unwrap(), GOLDEN);
            assert_eq!(e.advantage_jsonl(py, &list).unwrap(), GOLDEN);
        });
    }

    #[test]
    fn score_json_matches_core_output() {
        with_py(|py| {
            let e = engine(None, py);
            let task = PyString::new(py, BEDROOM).into_any();
            let text = e.score_json(py, &task, OVERLAP).unwrap();
            let expected = ops::score(
                &EngineConfig::default(),
                &SceneTask::from_json(BEDROOM).unwrap(),
                OVERLAP,
            )
            .unwrap();
            assert_eq!(text, serde_json::to_string_pretty(&expected).unwrap());
            let obj = e.score(py, &task, OVERLAP).unwrap();
            let total: f64 = obj.get_item("total").unwrap().extract().unwrap();
            assert!((total - 0.86).abs() < 1e-12);
        });
    }

    #[test]
    fn config_dict_and_errors() {
        with_py(|py| {
            let cfg = PyDict::new(py);
            cfg.set_item("group", 6).unwrap();
            let e = Engine::new(Some(&cfg.into_any())).unwrap();
            assert_eq!(e.config.group, 6);

            let bad = PyString::new(py, r#"{"advantage": {"w_phys": -1}}"#).into_any();
            let err = Engine::new(Some(&bad)).err().unwrap();
            assert!(err.is_instance_of::<InputError>(py));
            assert!(err.to_string().contains("w_phys"), "{err}");

            let e = engine(None, py);
            let err = e.compose(py, 2.0, 1.0, 0.0, 0.0).err().unwrap();
            assert!(err.is_instance_of::<InputError>(py));
            let task = PyString::new(py, r#"{"room": {"x": 1, "y": 1, "z": 1}, "objects": "nope"}"#).into_any();
            assert!(e.score(py, &task, "").err().unwrap().is_instance_of::<InputError>(py));
        });
    }

    #[test]
    fn train_toy_returns_checkpoint_usable_for_rollout() {
        with_py(|py| {
            let e = engine(None, py);
            let task = PyString::new(py, FOUR_CUBES).into_any();
            let out = e.train_toy(py, vec![task.clone()], 2, None).unwrap();
            assert_eq!(out.get_item("log").unwrap().len().unwrap(), 2);
            let params = out.get_item("params").unwrap();
            let group = e.rollout(py, &task, Some(&params)).unwrap();
            assert_eq!(group.get_item("trajectories").unwrap().len().unwrap(), 4);
            let size = group
                .get_item("task")
                .unwrap()
                .get_item("objects")
                .unwrap()
                .get_item(0)
                .unwrap();
            assert!(size.get_item("size_m").unwrap().is_instance_of::<PyList>());
        });
    }

    #[test]
    fn module_functions() {
        with_py(|py| {
            let parsed = parse_rollout(py, "no tags here").unwrap();
            let stage: String = parsed.get_item("stage").unwrap().extract().unwrap();
            assert_eq!(stage, "no_tags");
            assert!((discounted_reward(vec![1.0, 1.0], 0.5) - 0.75).abs() < 1e-12);
        });
    }
}
