//! Python bindings for the pipeline engine.
//!
//! Exposes config parsing/validation, pipeline execution, OASST tree
//! construction and SFT/DPO extraction, quality heuristics, media encoding,
//! and the throughput benchmark. Built as the `grasp_rs` extension module;
//! see python/smoke_test.py for usage.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyList, PyString};
use serde_json::Value;

use grasp_core::config::{parse_pipeline_config, HeuristicRules};
use grasp_core::engine::{self, RunOptions};
use grasp_core::graph::load_subgraph_library;
use grasp_core::oasst::{self, ConvTurn};
use grasp_core::quality::{heuristic_stage, Turn};
use grasp_core::registry::Registry;

fn value_to_py(py: Python<'_>, v: &Value) -> PyResult<Py<PyAny>> {
    Ok(match v {
        Value::Null => py.None(),
        Value::Bool(b) => PyBool::new(py, *b).to_owned().into_any().unbind(),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any().unbind()
            } else if let Some(u) = n.as_u64() {
                u.into_pyobject(py)?.into_any().unbind()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any().unbind()
            }
        }
        Value::String(s) => PyString::new(py, s).into_any().unbind(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(value_to_py(py, item)?)?;
            }
            list.into_any().unbind()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, val) in map {
                dict.set_item(k, value_to_py(py, val)?)?;
            }
            dict.into_any().unbind()
        }
    })
}

fn py_to_value(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    if obj.is_none() {
        return Ok(Value::Null);
    }
    if let Ok(b) = obj.cast::<PyBool>() {
        return Ok(Value::Bool(b.is_true()));
    }
    if let Ok(i) = obj.cast::<PyInt>() {
        if let Ok(v) = i.extract::<i64>() {
            return Ok(Value::from(v));
        }
        return Ok(Value::from(i.extract::<u64>()?));
    }
    if let Ok(f) = obj.cast::<PyFloat>() {
        return Ok(serde_json::Number::from_f64(f.value())
            .map(Value::Number)
            .unwrap_or(Value::Null));
    }
    if let Ok(s) = obj.cast::<PyString>() {
        return Ok(Value::String(s.to_string_lossy().into_owned()));
    }
    if let Ok(list) = obj.cast::<PyList>() {
        let mut out = Vec::with_capacity(list.len());
        for item in list.iter() {
            out.push(py_to_value(&item)?);
        }
        return Ok(Value::Array(out));
    }
    if let Ok(dict) = obj.cast::<PyDict>() {
        let mut out = serde_json::Map::new();
        for (k, v) in dict.iter() {
            out.insert(k.str()?.to_string_lossy().into_owned(), py_to_value(&v)?);
        }
        return Ok(Value::Object(out));
    }
    Err(PyValueError::new_err(format!(
        "cannot convert {} to a JSON value",
        obj.get_type().name()?
    )))
}

fn diags_to_py(py: Python<'_>, diags: &[grasp_core::Diagnostic]) -> PyResult<Py<PyAny>> {
    let list = PyList::empty(py);
    for d in diags {
        list.append(d.to_string())?;
    }
    Ok(list.into_any().unbind())
}

/// Parse a pipeline YAML document.
///
/// Returns {"ok": bool, "config": dict | None, "diagnostics": [str]}.
#[pyfunction]
fn parse_config(py: Python<'_>, yaml_text: &str) -> PyResult<Py<PyAny>> {
    let out = PyDict::new(py);
    match parse_pipeline_config(yaml_text) {
        Ok(parsed) => {
            out.set_item("ok", true)?;
            out.set_item("config", value_to_py(py, &parsed.config.to_value())?)?;
            out.set_item("config_hash", parsed.config.config_hash())?;
            out.set_item("diagnostics", diags_to_py(py, &parsed.diagnostics)?)?;
        }
        Err(diags) => {
            out.set_item("ok", false)?;
            out.set_item("config", py.None())?;
            out.set_item("diagnostics", diags_to_py(py, &diags)?)?;
        }
    }
    Ok(out.into_any().unbind())
}

/// Parse + compile (dry run). Returns rendered diagnostics; empty means the
/// pipeline is valid.
#[pyfunction]
#[pyo3(signature = (yaml_text, base_dir=None))]
fn validate_config(py: Python<'_>, yaml_text: &str, base_dir: Option<&str>) -> PyResult<Py<PyAny>> {
    let base = PathBuf::from(base_dir.unwrap_or("."));
    let parsed = match parse_pipeline_config(yaml_text) {
        Ok(p) => p,
        Err(diags) => return diags_to_py(py, &diags),
    };
    let registry = Registry::builtin();
    let library = match load_subgraph_library(&base) {
        Ok(l) => l,
        Err(diags) => return diags_to_py(py, &diags),
    };
    match engine::compile_pipeline(&parsed.config, &registry, &library, &base) {
        Ok(compiled) => {
            let mut all = parsed.diagnostics.clone();
            all.extend(compiled.diagnostics);
            diags_to_py(py, &all)
        }
        Err(diags) => diags_to_py(py, &diags),
    }
}

/// Resolve a `$`-path (e.g. `$data_config.source.repo_id`) against a config.
#[pyfunction]
fn resolve_config_path(py: Python<'_>, yaml_text: &str, path: &str) -> PyResult<Py<PyAny>> {
    let parsed = parse_pipeline_config(yaml_text)
        .map_err(|d| PyValueError::new_err(format!("invalid config: {d:?}")))?;
    let value = grasp_core::config::resolve_config_path(&parsed.config, path)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    value_to_py(py, &value)
}

fn options_from_kwargs(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<RunOptions> {
    let mut options = RunOptions::default();
    let Some(kwargs) = kwargs else {
        return Ok(options);
    };
    for (key, value) in kwargs.iter() {
        let key = key.str()?.to_string_lossy().into_owned();
        match key.as_str() {
            "concurrency" => options.concurrency = value.extract()?,
            "checkpoint_every" => options.checkpoint_every = value.extract()?,
            "limit" => options.limit = Some(value.extract()?),
            "sequential" => options.sequential = value.extract()?,
            "seed" => options.run_seed = value.extract()?,
            "oasst" => options.oasst = value.extract()?,
            "quality" => options.quality = value.extract()?,
            "retry_failed" => options.retry_failed = value.extract()?,
            "force_resume" => options.force_resume = value.extract()?,
            other => {
                return Err(PyValueError::new_err(format!("unknown option {other:?}")));
            }
        }
    }
    Ok(options)
}

fn run_impl(py: Python<'_>, config_path: &str, resume: bool, options: RunOptions) -> PyResult<Py<PyAny>> {
    let path = Path::new(config_path);
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let text = std::fs::read_to_string(path)
        .map_err(|e| PyValueError::new_err(format!("cannot read {config_path}: {e}")))?;
    let parsed = parse_pipeline_config(&text).map_err(|diags| {
        PyValueError::new_err(
            diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"),
        )
    })?;
    let registry = Registry::builtin();
    let library = load_subgraph_library(&base).map_err(|diags| {
        PyValueError::new_err(
            diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"),
        )
    })?;
    let report = py
        .detach(|| {
            if resume {
                engine::resume_pipeline(&parsed.config, &registry, &library, &base, options)
            } else {
                engine::run_pipeline(&parsed.config, &registry, &library, &base, options)
            }
        })
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let value = serde_json::to_value(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    value_to_py(py, &value)
}

/// Execute a pipeline config file. Relative paths resolve against the
/// file's directory. Options: concurrency, checkpoint_every, limit,
/// sequential, seed, oasst, quality, retry_failed, force_resume.
#[pyfunction]
#[pyo3(signature = (config_path, **kwargs))]
fn run_pipeline(py: Python<'_>, config_path: &str, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Py<PyAny>> {
    run_impl(py, config_path, false, options_from_kwargs(kwargs)?)
}

/// Resume an interrupted run from its checkpoint.
#[pyfunction]
#[pyo3(signature = (config_path, **kwargs))]
fn resume_pipeline(py: Python<'_>, config_path: &str, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Py<PyAny>> {
    run_impl(py, config_path, true, options_from_kwargs(kwargs)?)
}

/// Sequential-vs-concurrent throughput benchmark on the mock backend.
#[pyfunction]
#[pyo3(name = "bench", signature = (records=200, latency_ms=50, calls_per_record=2, concurrency=8))]
fn bench_throughput(
    py: Python<'_>,
    records: u64,
    latency_ms: u64,
    calls_per_record: u32,
    concurrency: usize,
) -> PyResult<Py<PyAny>> {
    let report = py
        .detach(|| engine::bench(records, latency_ms, calls_per_record, concurrency))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let value = serde_json::to_value(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    value_to_py(py, &value)
}

/// Encode a media reference (path, URL, or data URL) as a base64 data URL.
#[pyfunction]
fn encode_media(reference: &Bound<'_, PyAny>) -> PyResult<String> {
    let value = py_to_value(reference)?;
    grasp_core::backend::encode_media(&value).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Heuristic quality flags for a conversation: list of {role, content}.
#[pyfunction]
#[pyo3(signature = (conversation, min_chars=8, max_chars=16384, repetition_ratio=0.3))]
fn heuristic_flags(
    py: Python<'_>,
    conversation: &Bound<'_, PyList>,
    min_chars: usize,
    max_chars: usize,
    repetition_ratio: f64,
) -> PyResult<Py<PyAny>> {
    let mut turns = Vec::new();
    for item in conversation.iter() {
        let v = py_to_value(&item)?;
        let role = v.get("role").and_then(|r| r.as_str()).unwrap_or("").to_string();
        let text = match v.get("content") {
            Some(Value::String(s)) => s.clone(),
            Some(other) => other.to_string(),
            None => String::new(),
        };
        turns.push(Turn { role, text });
    }
    let rules = HeuristicRules {
        min_chars,
        max_chars,
        repetition_ratio,
        ..HeuristicRules::default()
    };
    let flags = heuristic_stage(&turns, &rules);
    let list = PyList::empty(py);
    for f in flags {
        list.append(serde_json::to_value(f).ok().and_then(|v| v.as_str().map(String::from)))?;
    }
    Ok(list.into_any().unbind())
}

/// An OASST conversation tree built from linear conversations.
#[pyclass]
struct ConversationTree {
    inner: oasst::OasstTree,
}

#[pymethods]
impl ConversationTree {
    /// Build a tree from conversations (lists of {role, content, score?})
    /// sharing the same opening turn; common prefixes merge.
    #[staticmethod]
    fn from_conversations(conversations: &Bound<'_, PyList>) -> PyResult<ConversationTree> {
        let mut trees = Vec::new();
        for conv in conversations.iter() {
            let conv = conv.cast::<PyList>()?;
            let mut turns = Vec::new();
            for item in conv.iter() {
                let v = py_to_value(&item)?;
                let role = v.get("role").and_then(|r| r.as_str()).unwrap_or("").to_string();
                let content = match v.get("content") {
                    Some(Value::String(s)) => s.clone(),
                    Some(other) => other.to_string(),
                    None => String::new(),
                };
                let mut turn = ConvTurn::new(role, content);
                if let Some(score) = v.get("score").and_then(|s| s.as_f64()) {
                    turn.metadata.insert("llm_score".to_string(), Value::from(score));
                }
                turns.push(turn);
            }
            trees.push(oasst::to_tree(&turns).map_err(|e| PyValueError::new_err(e.to_string()))?);
        }
        let merged = if trees.len() == 1 {
            trees.into_iter().next().unwrap()
        } else {
            oasst::merge_trees(&trees).map_err(|e| PyValueError::new_err(e.to_string()))?
        };
        Ok(ConversationTree { inner: merged })
    }

    /// {"depth": int, "message_count": int, "branching": int}
    fn stats(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let stats = oasst::tree_stats(&self.inner);
        let value = serde_json::to_value(stats).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        value_to_py(py, &value)
    }

    /// All messages as dicts with message_id/parent_id/role/text/metadata.
    fn messages(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let list = PyList::empty(py);
        for m in self.inner.messages() {
            let value = serde_json::to_value(m).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
            list.append(value_to_py(py, &value)?)?;
        }
        Ok(list.into_any().unbind())
    }

    /// SFT examples: [{"context": [{role, text}...], "target": str}]
    fn sft(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let list = PyList::empty(py);
        for example in oasst::extract_sft(&self.inner) {
            let line: Value = serde_json::from_str(&oasst::sft_to_jsonl_line(&example))
                .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
            list.append(value_to_py(py, &line)?)?;
        }
        Ok(list.into_any().unbind())
    }

    /// DPO preference pairs under the best-vs-each rule, ties skipped.
    #[pyo3(signature = (quality_key="llm_score"))]
    fn dpo(&self, py: Python<'_>, quality_key: &str) -> PyResult<Py<PyAny>> {
        let list = PyList::empty(py);
        for pair in oasst::extract_dpo(&self.inner, quality_key) {
            let line: Value = serde_json::from_str(&oasst::dpo_to_jsonl_line(&pair))
                .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
            list.append(value_to_py(py, &line)?)?;
        }
        Ok(list.into_any().unbind())
    }

    /// One JSONL line per message, OASST field layout.
    fn jsonl_lines(&self) -> Vec<String> {
        oasst::tree_to_jsonl_lines(&self.inner)
    }

    #[getter]
    fn tree_id(&self) -> String {
        self.inner.tree_id.clone()
    }
}

#[pymodule]
fn grasp_rs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(parse_config, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_config_path, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(resume_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(bench_throughput, m)?)?;
    m.add_function(wrap_pyfunction!(encode_media, m)?)?;
    m.add_function(wrap_pyfunction!(heuristic_flags, m)?)?;
    m.add_class::<ConversationTree>()?;
    Ok(())
}
