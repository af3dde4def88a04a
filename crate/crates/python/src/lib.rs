//! Python bindings: drive simulated apps, record and encode demonstrations,
//! generate learned functions, route tasks and evaluate suites in-process.
//!
//! ```python
//! import ebc
//! s = ebc.Session("coffeeshop")
//! s.click(2); s.type(0, "1"); s.enter(); ...
//! demo = s.finish("Order an Americano")
//! f = ebc.generate(demo.encode())
//! f.replay({"drink": "Latte", "quantity": 2})["success"]
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use ebc_core::bundled;
use ebc_core::codegen::{generate as generate_script, ApiSpec, BackendKind, LlmConfig};
use ebc_core::dsl::{check, check_args, interpret, parse_script as parse, pretty_print, CheckLimits, InterpretConfig};
use ebc_core::encoder::{derive_demo_id, encode, record_event, record_script, ActionEvent, EncodedDemo as CoreEncoded, VisualDescriberConfig};
use ebc_core::eval::{evaluate_suite, load_suite, EvalConfig, LibrarySource};
use ebc_core::fusion::{execute_plan, route as route_task, FunctionLibrary, LearnedFunction, RouterConfig};
use ebc_core::mapping::{map_step, MappingConfig, Selector};
use ebc_core::sim::{apply_action, check_goal, current_tree, reset, Action, AppSpec, ScrollDirection, SimState};
use ebc_core::ui::{enumerate_interactive, parse_ui_xml};

create_exception!(ebc, EbcError, PyException, "Raised for any pipeline failure.");

fn err(e: impl std::fmt::Display) -> PyErr {
    EbcError::new_err(e.to_string())
}

/// Converts any serializable value into plain Python objects.
fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn app(app_id: &str) -> PyResult<Arc<AppSpec>> {
    bundled::app(app_id).ok_or_else(|| err(format!("unknown app id {app_id:?}")))
}

fn backend_kind(name: &str) -> PyResult<BackendKind> {
    match name {
        "stub" | "deterministic_stub" => Ok(BackendKind::DeterministicStub),
        "remote" => Ok(BackendKind::Remote),
        other => Err(err(format!("unknown backend {other:?}; use \"stub\" or \"remote\""))),
    }
}

/// Values from Python become strings the way a user would type them.
fn arg_strings(args: Option<&Bound<'_, PyDict>>) -> PyResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    if let Some(args) = args {
        for (k, v) in args.iter() {
            out.insert(k.extract::<String>()?, v.str()?.to_string());
        }
    }
    Ok(out)
}

/// Names of the bundled apps.
#[pyfunction]
fn apps() -> Vec<String> {
    bundled::app_ids().into_iter().map(str::to_string).collect()
}

/// Ids of the bundled demonstrations.
#[pyfunction]
fn demo_ids() -> Vec<String> {
    bundled::demo_scripts().iter().map(|d| d.resolved_id()).collect()
}

/// A live session on a simulated app that records what it is told to do.
#[pyclass(name = "Session")]
struct PySession {
    state: SimState,
    actions: Vec<Action>,
    events: Vec<ActionEvent>,
}

impl PySession {
    fn act<'py>(&mut self, py: Python<'py>, action: Action) -> PyResult<Bound<'py, PyAny>> {
        let event = record_event(&self.state, &action).map_err(err)?;
        let (next, outcome) = apply_action(&self.state, &action).map_err(err)?;
        self.state = next;
        self.actions.push(action);
        self.events.push(event);
        to_py(py, &outcome)
    }
}

#[pymethods]
impl PySession {
    #[new]
    fn new(app_id: &str) -> PyResult<Self> {
        Ok(PySession {
            state: reset(&app(app_id)?),
            actions: Vec::new(),
            events: Vec::new(),
        })
    }

    #[getter]
    fn app_id(&self) -> String {
        self.state.app_id.clone()
    }

    #[getter]
    fn screen_id(&self) -> String {
        self.state.screen.clone()
    }

    #[getter]
    fn step_counter(&self) -> u64 {
        self.state.step_counter
    }

    /// The current screen as UI hierarchy XML.
    fn screen_xml(&self) -> String {
        current_tree(&self.state).to_xml()
    }

    /// Interactive elements of the current screen, in index order.
    fn interactive<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let tree = current_tree(&self.state);
        let nodes: Vec<serde_json::Value> = enumerate_interactive(&tree)
            .into_iter()
            .map(|(index, n)| {
                serde_json::json!({
                    "index": index,
                    "class": n.node_class,
                    "text": n.text,
                    "resource_id": n.resource_id,
                    "annotation": n.annotation,
                    "editable": n.editable,
                })
            })
            .collect();
        to_py(py, &nodes)
    }

    /// Current value of an app variable.
    fn variable<'py>(&self, py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
        match self.state.vars.get(name) {
            Some(v) => to_py(py, v),
            None => Err(err(format!("no variable {name:?}"))),
        }
    }

    /// Evaluates a goal such as `cart_contains(item=Latte, qty=2)`.
    fn check_goal(&self, goal: &str) -> PyResult<bool> {
        check_goal(&self.state, goal).map_err(err)
    }

    fn click<'py>(&mut self, py: Python<'py>, target: usize) -> PyResult<Bound<'py, PyAny>> {
        self.act(py, Action::Click { target })
    }

    #[pyo3(name = "type")]
    fn type_text<'py>(&mut self, py: Python<'py>, target: usize, text: String) -> PyResult<Bound<'py, PyAny>> {
        self.act(py, Action::Type { target, text })
    }

    fn scroll<'py>(&mut self, py: Python<'py>, direction: &str) -> PyResult<Bound<'py, PyAny>> {
        let direction: ScrollDirection = direction.parse().map_err(err)?;
        self.act(py, Action::Scroll { direction })
    }

    fn enter<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        self.act(py, Action::Enter)
    }

    fn back<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        self.act(py, Action::Back)
    }

    /// Ends the recording. The demo id is derived from the content, so the
    /// same actions and instruction always give the same id.
    fn finish(&self, instruction: &str) -> PyResult<PyDemonstration> {
        if self.events.is_empty() {
            return Err(err("nothing was recorded"));
        }
        Ok(PyDemonstration {
            inner: ebc_core::encoder::Demonstration {
                demo_id: derive_demo_id(&self.state.app_id, instruction, &self.actions),
                app_id: self.state.app_id.clone(),
                instruction: instruction.to_string(),
                events: self.events.clone(),
            },
        })
    }
}

#[pyclass(name = "Demonstration")]
struct PyDemonstration {
    inner: ebc_core::encoder::Demonstration,
}

#[pymethods]
impl PyDemonstration {
    /// Records one of the bundled demonstrations.
    #[staticmethod]
    fn bundled(demo_id: &str) -> PyResult<Self> {
        let script = bundled::demo_script(demo_id).ok_or_else(|| err(format!("unknown demo id {demo_id:?}")))?;
        let (inner, _) = record_script(&app(&script.app_id)?, &script).map_err(err)?;
        Ok(PyDemonstration { inner })
    }

    #[getter]
    fn demo_id(&self) -> String {
        self.inner.demo_id.clone()
    }

    #[getter]
    fn app_id(&self) -> String {
        self.inner.app_id.clone()
    }

    #[getter]
    fn instruction(&self) -> String {
        self.inner.instruction.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.events.len()
    }

    /// The recorded actions, e.g. `{"kind": "click", "target": 2}`.
    fn actions<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let actions: Vec<&Action> = self.inner.events.iter().map(|e| &e.action).collect();
        to_py(py, &actions)
    }

    fn encode(&self) -> PyResult<PyEncodedDemo> {
        Ok(PyEncodedDemo {
            inner: encode(&self.inner, &VisualDescriberConfig::default()).map_err(err)?,
        })
    }
}

#[pyclass(name = "EncodedDemo")]
struct PyEncodedDemo {
    inner: CoreEncoded,
}

#[pymethods]
impl PyEncodedDemo {
    #[getter]
    fn demo_id(&self) -> String {
        self.inner.demo_id.clone()
    }

    #[getter]
    fn instruction(&self) -> String {
        self.inner.instruction.clone()
    }

    /// The encoded steps as dictionaries.
    fn steps<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.steps)
    }

    fn __len__(&self) -> usize {
        self.inner.steps.len()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(err)
    }
}

/// Generates a commented, parameterized function from an encoded
/// demonstration.
#[pyfunction]
#[pyo3(signature = (encoded, backend = "stub"))]
fn generate(encoded: PyRef<'_, PyEncodedDemo>, backend: &str) -> PyResult<PyFunction> {
    let llm = LlmConfig {
        backend: backend_kind(backend)?,
        ..LlmConfig::default()
    };
    let app = app(&encoded.inner.app_id)?;
    let generated = generate_script(&encoded.inner, &ApiSpec::default(), &app, &llm).map_err(err)?;
    let backend_name = llm.build_backend().name().to_string();
    Ok(PyFunction {
        inner: LearnedFunction::from_generated(&generated, &backend_name),
    })
}

#[pyclass(name = "Function")]
struct PyFunction {
    inner: LearnedFunction,
}

#[pymethods]
impl PyFunction {
    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn app_id(&self) -> String {
        self.inner.app_id.clone()
    }

    #[getter]
    fn description(&self) -> String {
        self.inner.description.clone()
    }

    #[getter]
    fn signature(&self) -> String {
        self.inner.signature()
    }

    /// Script text with its header.
    #[getter]
    fn source(&self) -> String {
        self.inner.history.last().map(|r| r.source.clone()).unwrap_or_default()
    }

    fn params<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.params)
    }

    /// Runs the function on a fresh session. Omitted arguments take their
    /// demonstrated values.
    #[pyo3(signature = (args = None))]
    fn replay<'py>(&self, py: Python<'py>, args: Option<&Bound<'py, PyDict>>) -> PyResult<Bound<'py, PyAny>> {
        let args = check_args(&self.inner.params, &arg_strings(args)?).map_err(err)?;
        let start = reset(&app(&self.inner.app_id)?);
        let result = interpret(&self.inner.script, &self.inner.name, &args, start, &InterpretConfig::default());
        let (trace, error) = match result {
            Ok(trace) => (trace, None),
            Err(failure) => (failure.trace, Some(failure.error.to_string())),
        };
        to_py(
            py,
            &serde_json::json!({
                "success": error.is_none(),
                "error": error,
                "args": args,
                "steps": trace.entries.len(),
                "explanations": trace.entries.iter().map(|e| &e.explanation).collect::<Vec<_>>(),
                "screen": trace.final_state.screen,
                "variables": trace.final_state.vars,
            }),
        )
    }

    fn __repr__(&self) -> String {
        format!("<Function {}>", self.inner.signature())
    }
}

#[pyclass(name = "Library")]
#[derive(Default)]
struct PyLibrary {
    inner: FunctionLibrary,
}

#[pymethods]
impl PyLibrary {
    #[new]
    fn new() -> Self {
        PyLibrary::default()
    }

    /// Registers a function, replacing any earlier one of the same name.
    fn add(&mut self, function: PyRef<'_, PyFunction>) {
        self.inner.register(function.inner.clone());
    }

    fn names(&self) -> Vec<String> {
        self.inner.iter().map(|f| f.name.clone()).collect()
    }

    fn get(&self, name: &str) -> PyResult<PyFunction> {
        self.inner
            .get(name)
            .map(|f| PyFunction { inner: f.clone() })
            .ok_or_else(|| err(format!("no function named {name:?}")))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Plans which functions to call, with which arguments, for a task.
    fn route<'py>(&self, py: Python<'py>, task: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &route_task(task, &self.inner, &RouterConfig::default()).map_err(err)?)
    }

    /// Routes the task and executes the plan on a fresh session.
    fn run<'py>(&self, py: Python<'py>, task: &str) -> PyResult<Bound<'py, PyAny>> {
        let plan = route_task(task, &self.inner, &RouterConfig::default()).map_err(err)?;
        let app = app(&plan.app_id)?;
        let (outcome, entries) = execute_plan(&plan, &self.inner, &app, &InterpretConfig::default()).map_err(err)?;
        to_py(
            py,
            &serde_json::json!({
                "plan": plan,
                "success": outcome.succeeded(),
                "error": outcome.failure.map(|f| f.to_string()),
                "calls": outcome.calls,
                "steps": entries.len(),
                "screen": outcome.final_state.screen,
                "variables": outcome.final_state.vars,
            }),
        )
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(&dir).map_err(err)
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(PyLibrary {
            inner: FunctionLibrary::load(&dir).map_err(err)?,
        })
    }
}

/// Parses a script and returns it in canonical form.
#[pyfunction]
fn format_script(text: &str) -> PyResult<String> {
    Ok(pretty_print(&parse(text).map_err(err)?))
}

/// Static-check diagnostics for a script; empty when it is acceptable.
#[pyfunction]
fn check_script(text: &str) -> PyResult<Vec<String>> {
    let script = parse(text).map_err(err)?;
    Ok(check(&script, &ApiSpec::default(), CheckLimits::default())
        .iter()
        .map(ToString::to_string)
        .collect())
}

/// Resolves a selector against a UI hierarchy XML document.
#[pyfunction]
#[pyo3(signature = (xml, text = "", id = "", visual = "", surrounding = Vec::new()))]
fn map_selector<'py>(
    py: Python<'py>,
    xml: &str,
    text: &str,
    id: &str,
    visual: &str,
    surrounding: Vec<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let tree = parse_ui_xml(xml).map_err(err)?;
    let selector = Selector {
        text: text.into(),
        id: id.into(),
        visual: visual.into(),
        surrounding,
    };
    let result = map_step(&selector, &tree, &MappingConfig::default()).map_err(err)?;
    to_py(
        py,
        &serde_json::json!({
            "index": result.index,
            "path": result.path,
            "score": result.score,
            "stage": result.stage,
            "explanation": result.explanation,
        }),
    )
}

/// Evaluates a bundled suite (by id) or a suite JSON document, generating
/// its library from the bundled demonstrations it lists.
#[pyfunction]
#[pyo3(signature = (suite, trials = None))]
fn evaluate<'py>(py: Python<'py>, suite: &str, trials: Option<usize>) -> PyResult<Bound<'py, PyAny>> {
    let text = bundled::suite_source(suite).unwrap_or(suite);
    let suite = load_suite(text).map_err(err)?;
    let demos = suite
        .library_demos
        .iter()
        .map(|id| {
            let script = bundled::demo_script(id).ok_or_else(|| err(format!("unknown demo id {id:?}")))?;
            Ok(record_script(&app(&script.app_id)?, &script).map_err(err)?.0)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let config = EvalConfig {
        trials,
        ..EvalConfig::default()
    };
    let report = py
        .detach(|| evaluate_suite(&suite, LibrarySource::Demos(&demos), &bundled::app, &config))
        .map_err(err)?;
    py.import("json")?.call_method1("loads", (report.to_json(),))
}

#[pymodule]
pub fn ebc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EbcError", m.py().get_type::<EbcError>())?;
    m.add_class::<PySession>()?;
    m.add_class::<PyDemonstration>()?;
    m.add_class::<PyEncodedDemo>()?;
    m.add_class::<PyFunction>()?;
    m.add_class::<PyLibrary>()?;
    m.add_function(wrap_pyfunction!(apps, m)?)?;
    m.add_function(wrap_pyfunction!(demo_ids, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(format_script, m)?)?;
    m.add_function(wrap_pyfunction!(check_script, m)?)?;
    m.add_function(wrap_pyfunction!(map_selector, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
