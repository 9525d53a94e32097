//! Pipeline execution: a bounded worker pool drives records through the
//! compiled graph, a single sink thread serializes writes and checkpoints,
//! and interrupted runs resume from the last checkpoint exactly once.

mod checkpoint;

pub use checkpoint::{Checkpoint, Counters, FailEntry, ManifestFlags, RunManifest};

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use crossbeam_channel as channel;
use serde_json::{Map, Value};

use crate::backend::BackendSet;
use crate::config::{FileFormat, PipelineConfig, SourceKind, END_NODE};
use crate::dataio::{self, Record, SinkWriter, INDEX_KEY};
use crate::diag::Diagnostic;
use crate::error::{GraspError, Result};
use crate::graph::{self, ColumnInfo, CompiledGraph, Next, SubgraphLibrary};
use crate::output;
use crate::quality;
use crate::registry::Registry;
use crate::runtime::{self, ExecContext, RecordState};

static SHUTDOWN: AtomicBool = AtomicBool::new(false);

/// Ask running engines to drain in-flight records and flush a final
/// checkpoint. Wired to SIGINT/SIGTERM by the CLI.
pub fn request_shutdown() {
    SHUTDOWN.store(true, Ordering::SeqCst);
}

pub fn shutdown_requested() -> bool {
    SHUTDOWN.load(Ordering::SeqCst)
}

/// Reset between in-process runs (tests).
pub fn clear_shutdown() {
    SHUTDOWN.store(false, Ordering::SeqCst);
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub concurrency: usize,
    pub checkpoint_every: u64,
    pub limit: Option<u64>,
    pub sequential: bool,
    pub run_seed: u64,
    pub oasst: bool,
    pub quality: bool,
    pub retry_failed: bool,
    pub force_resume: bool,
    /// Per-run cancellation token; the process-wide signal flag always
    /// applies in addition.
    pub cancel: Option<Arc<AtomicBool>>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            concurrency: 8,
            checkpoint_every: 50,
            limit: None,
            sequential: false,
            run_seed: 0,
            oasst: false,
            quality: false,
            retry_failed: false,
            force_resume: false,
            cancel: None,
        }
    }
}

impl RunOptions {
    fn cancelled(&self) -> bool {
        shutdown_requested()
            || self
                .cancel
                .as_ref()
                .map(|c| c.load(Ordering::SeqCst))
                .unwrap_or(false)
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RunReport {
    pub run_id: String,
    /// Records processed in this session.
    pub processed: u64,
    pub succeeded: u64,
    pub failed: u64,
    pub skipped: u64,
    /// Total unique completed record ids, previous sessions included.
    pub total_completed: u64,
    pub wall_ms: u64,
    pub run_dir: PathBuf,
    pub output_path: PathBuf,
    pub interrupted: bool,
}

/// Directory holding the run artifacts: the sink file's parent for disk
/// sinks, `<base>/output` otherwise.
pub fn run_dir_for(pipeline: &PipelineConfig, base: &Path) -> PathBuf {
    if let Some(sink) = pipeline.data.as_ref().and_then(|d| d.sink.as_ref()) {
        if sink.kind == SourceKind::Disk {
            if let Ok(path) = dataio::sink_path(sink, Some(base)) {
                if let Some(parent) = path.parent() {
                    return parent.to_path_buf();
                }
            }
        }
    }
    base.join("output")
}

/// The canonical incremental output file. Disk JSONL/JSON sinks are written
/// directly; other sink kinds are materialized from this file at the end of
/// a successful run.
fn canonical_output(pipeline: &PipelineConfig, base: &Path, run_dir: &Path) -> PathBuf {
    if let Some(sink) = pipeline.data.as_ref().and_then(|d| d.sink.as_ref()) {
        if sink.kind == SourceKind::Disk
            && matches!(sink.file_format, Some(FileFormat::Jsonl) | Some(FileFormat::Json) | None)
        {
            if let Ok(path) = dataio::sink_path(sink, Some(base)) {
                return path;
            }
        }
    }
    run_dir.join("output.jsonl")
}

/// Compile the pipeline's graph, resolving source columns when the source is
/// readable so placeholder checks can run at full strength.
pub fn compile_pipeline(
    pipeline: &PipelineConfig,
    registry: &Registry,
    library: &SubgraphLibrary,
    base: &Path,
) -> std::result::Result<graph::Compiled, Vec<Diagnostic>> {
    let columns = source_columns(pipeline, base);
    let mut compiled = graph::compile(&pipeline.graph, registry, library, &columns)?;
    compiled.diagnostics.extend(check_output_references(pipeline, registry));
    Ok(compiled)
}

/// Peek the configured source for its column set.
fn source_columns(pipeline: &PipelineConfig, base: &Path) -> ColumnInfo {
    let Some(source) = pipeline.data.as_ref().and_then(|d| d.source.as_ref()) else {
        return ColumnInfo::DataLess;
    };
    if source.kind == SourceKind::None {
        return ColumnInfo::DataLess;
    }
    match dataio::open_source(source, Some(base)) {
        Ok(stream) => {
            for item in stream.take(5) {
                if let Ok(record) = item {
                    return ColumnInfo::Known(record.keys().cloned().collect());
                }
            }
            ColumnInfo::Unknown
        }
        Err(_) => ColumnInfo::Unknown,
    }
}

/// Compile-time existence checks for output-config callables.
fn check_output_references(pipeline: &PipelineConfig, registry: &Registry) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for (field, source) in &pipeline.output.output_map {
        if let crate::config::OutputFieldSource::Transform(name) = source {
            if registry.transform(name).is_none() {
                diags.push(Diagnostic::error(
                    format!("output_config.output_map.{field}.transform"),
                    format!("unresolved transform {name:?}"),
                ));
            }
        }
    }
    if let Some(name) = &pipeline.output.generator {
        if registry.generator(name).is_none() {
            diags.push(Diagnostic::error(
                "output_config.generator",
                format!("unresolved generator {name:?}"),
            ));
        }
    }
    if let Some(schema) = &pipeline.schema {
        if let Some(name) = &schema.schema {
            if registry.validator(name).is_none() {
                diags.push(Diagnostic::error(
                    "schema_config.schema",
                    format!("unresolved validator {name:?}"),
                ));
            }
        }
    }
    diags
}

enum Event {
    Done {
        record_id: u64,
        record: Record,
    },
    SchemaSkip {
        record_id: u64,
        reasons: Vec<String>,
    },
    Failed {
        record_id: u64,
        node: String,
        error_kind: &'static str,
        message: String,
        attempts: u32,
        /// Names of nodes executed before the failure, in order.
        trace_nodes: Vec<String>,
    },
    RowSkipped {
        ordinal: u64,
        message: String,
    },
    /// Source-level failure that aborts the run.
    SourceError(String),
}

/// Start a fresh run, clobbering any previous artifacts in the run dir.
pub fn run_pipeline(
    pipeline: &PipelineConfig,
    registry: &Registry,
    library: &SubgraphLibrary,
    base: &Path,
    options: RunOptions,
) -> Result<RunReport> {
    let compiled = compile_pipeline(pipeline, registry, library, base)
        .map_err(|diags| GraspError::InvalidPipeline(render_diags(&diags)))?;
    let run_dir = run_dir_for(pipeline, base);
    std::fs::create_dir_all(&run_dir)?;

    let manifest = RunManifest {
        run_id: format!("run-{:08x}", options.run_seed ^ 0x6772_6173),
        config_hash: pipeline.config_hash(),
        run_seed: options.run_seed,
        started_at: now_iso(),
        flags: ManifestFlags {
            oasst: options.oasst,
            quality: options.quality,
            sequential: options.sequential,
        },
        counters: Counters::default(),
    };

    // Fresh run: truncate previous artifacts.
    let output_path = canonical_output(pipeline, base, &run_dir);
    if let Some(parent) = output_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let _ = std::fs::write(&output_path, b"");
    let _ = std::fs::write(run_dir.join("failures.jsonl"), b"");

    let checkpoint = Checkpoint::new(manifest);
    execute(
        pipeline, &compiled.graph, registry, base, &run_dir, output_path, checkpoint, options,
        BTreeSet::new(),
    )
}

/// Resume from the checkpoint in the pipeline's run dir.
pub fn resume_pipeline(
    pipeline: &PipelineConfig,
    registry: &Registry,
    library: &SubgraphLibrary,
    base: &Path,
    options: RunOptions,
) -> Result<RunReport> {
    let run_dir = run_dir_for(pipeline, base);
    let mut checkpoint = Checkpoint::load(&run_dir.join("checkpoint.json"))?;

    let current_hash = pipeline.config_hash();
    if checkpoint.manifest.config_hash != current_hash {
        let msg = format!(
            "config hash mismatch: checkpoint {} vs current {}",
            checkpoint.manifest.config_hash, current_hash
        );
        if options.force_resume {
            log::warn!("{msg} (continuing due to --force-resume)");
        } else {
            return Err(GraspError::Resume(msg));
        }
    }

    let compiled = compile_pipeline(pipeline, registry, library, base)
        .map_err(|diags| GraspError::InvalidPipeline(render_diags(&diags)))?;

    // Seed comes from the manifest so resumed output matches an
    // uninterrupted run byte for byte.
    let mut options = options;
    options.run_seed = checkpoint.manifest.run_seed;

    // Truncate sinks to the checkpointed offsets: rows written after the
    // last flush are reprocessed, completed ones are not.
    let output_path = canonical_output(pipeline, base, &run_dir);
    truncate_to(&output_path, checkpoint.sink_positions.get("output").copied().unwrap_or(0))?;
    truncate_to(
        &run_dir.join("failures.jsonl"),
        checkpoint.sink_positions.get("failures").copied().unwrap_or(0),
    )?;

    let mut skip: BTreeSet<u64> = checkpoint.completed.clone();
    if options.retry_failed {
        checkpoint.failed.clear();
    } else {
        skip.extend(checkpoint.failed.keys().copied());
    }

    execute(
        pipeline, &compiled.graph, registry, base, &run_dir, output_path, checkpoint, options,
        skip,
    )
}

fn truncate_to(path: &Path, len: u64) -> Result<()> {
    if path.exists() {
        let file = std::fs::OpenOptions::new().write(true).open(path)?;
        file.set_len(len)?;
    }
    Ok(())
}

fn render_diags(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n")
}

fn now_iso() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix:{secs}")
}

#[allow(clippy::too_many_arguments)]
fn execute(
    pipeline: &PipelineConfig,
    compiled: &CompiledGraph,
    registry: &Registry,
    base: &Path,
    run_dir: &Path,
    output_path: PathBuf,
    mut checkpoint: Checkpoint,
    options: RunOptions,
    skip: BTreeSet<u64>,
) -> Result<RunReport> {
    let started = Instant::now();
    let concurrency = if options.sequential { 1 } else { options.concurrency.max(1) };

    let mut log_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(run_dir.join("run.log"))?;
    writeln!(
        log_file,
        "[{}] start run_id={} seed={} concurrency={concurrency} skip={}",
        now_iso(),
        checkpoint.manifest.run_id,
        options.run_seed,
        skip.len()
    )?;

    checkpoint::write_manifest(&run_dir.join("manifest.json"), &checkpoint.manifest)?;

    let backends = Arc::new(BackendSet::from_models(&pipeline.models, options.run_seed));
    let source_spec = pipeline.data.as_ref().and_then(|d| d.source.clone());
    let transforms = pipeline
        .data
        .as_ref()
        .map(|d| d.transforms.clone())
        .unwrap_or_default();
    let media_base = source_spec
        .as_ref()
        .and_then(|s| dataio::media_base(s, Some(base)));

    let mut output_writer = SinkWriter::open_path(&output_path, FileFormat::Jsonl)?;
    let failures_path = run_dir.join("failures.jsonl");
    let mut failures_writer = SinkWriter::open_path(&failures_path, FileFormat::Jsonl)?;
    let checkpoint_path = run_dir.join("checkpoint.json");

    let mut session = Counters::default();
    let mut source_error: Option<String> = None;
    // Run-local abort for source failures; never touches the global flag.
    let abort = AtomicBool::new(false);

    // Initial flush so resume always finds a checkpoint.
    flush_checkpoint(
        &mut checkpoint,
        &mut output_writer,
        &mut failures_writer,
        &checkpoint_path,
        &session,
    )?;

    std::thread::scope(|scope| -> Result<()> {
        let (record_tx, record_rx) = channel::bounded::<Record>(concurrency * 2);
        let (event_tx, event_rx) = channel::bounded::<Event>(concurrency * 2);

        // Producer: source -> transforms -> limit -> queue.
        let producer_events = event_tx.clone();
        let producer_limit = options.limit;
        let producer_opts = &options;
        let producer_abort = &abort;
        let producer_skip = &skip;
        let source_spec = &source_spec;
        let transforms = &transforms;
        scope.spawn(move || {
            let stream = match source_spec {
                Some(spec) if spec.kind != SourceKind::None => {
                    match dataio::open_source(spec, Some(base)) {
                        Ok(s) => dataio::apply_transforms(s, transforms),
                        Err(e) => {
                            let _ = producer_events.send(Event::SourceError(e.to_string()));
                            return;
                        }
                    }
                }
                // Data-less mode: synthesize `limit` empty records (default 1).
                _ => {
                    let n = producer_limit.unwrap_or(1);
                    let records: Vec<_> = (0..n)
                        .map(|i| {
                            let mut r = Map::new();
                            r.insert(INDEX_KEY.to_string(), Value::from(i));
                            Ok(r)
                        })
                        .collect();
                    dataio::RecordStream::new(records.into_iter())
                }
            };
            let mut sent = 0u64;
            for item in stream {
                if producer_opts.cancelled() || producer_abort.load(Ordering::SeqCst) {
                    break;
                }
                if let Some(limit) = producer_limit {
                    if sent >= limit {
                        break;
                    }
                }
                match item {
                    Ok(record) => {
                        sent += 1;
                        let id = dataio::record_index(&record).unwrap_or(0);
                        if producer_skip.contains(&id) {
                            continue;
                        }
                        if record_tx.send(record).is_err() {
                            break;
                        }
                    }
                    Err(GraspError::RowDecode { ordinal, message }) => {
                        sent += 1;
                        let _ = producer_events.send(Event::RowSkipped { ordinal, message });
                    }
                    Err(e) => {
                        let _ = producer_events.send(Event::SourceError(e.to_string()));
                        break;
                    }
                }
            }
        });

        // Workers: graph walk per record.
        for _ in 0..concurrency {
            let rx = record_rx.clone();
            let tx = event_tx.clone();
            let backends = Arc::clone(&backends);
            let media_base = &media_base;
            let opts = &options;
            scope.spawn(move || {
                while let Ok(record) = rx.recv() {
                    let event = process_record(
                        record, compiled, pipeline, registry, &backends, media_base, opts,
                    );
                    if tx.send(event).is_err() {
                        break;
                    }
                }
            });
        }
        drop(event_tx);
        drop(record_rx);

        // Single serialized consumer of completion events.
        let mut since_flush = 0u64;
        for event in event_rx.iter() {
            match event {
                Event::Done { record_id, record } => {
                    output_writer.append(&record)?;
                    checkpoint.completed.insert(record_id);
                    session.processed += 1;
                    session.succeeded += 1;
                    since_flush += 1;
                }
                Event::SchemaSkip { record_id, reasons } => {
                    let line = failure_line(record_id, "output", "schema", &reasons.join("; "), 1);
                    failures_writer.append(&line)?;
                    checkpoint.completed.insert(record_id);
                    session.processed += 1;
                    session.skipped += 1;
                    since_flush += 1;
                    writeln!(log_file, "[{}] record {record_id} schema-skipped", now_iso())?;
                }
                Event::Failed {
                    record_id,
                    node,
                    error_kind,
                    message,
                    attempts,
                    trace_nodes,
                } => {
                    let mut line = failure_line(record_id, &node, error_kind, &message, attempts);
                    line.insert(
                        "trace".to_string(),
                        Value::Array(trace_nodes.into_iter().map(Value::String).collect()),
                    );
                    failures_writer.append(&line)?;
                    checkpoint.failed.insert(
                        record_id,
                        FailEntry {
                            node: node.clone(),
                            error: message.clone(),
                        },
                    );
                    session.processed += 1;
                    session.failed += 1;
                    since_flush += 1;
                    writeln!(
                        log_file,
                        "[{}] record {record_id} failed at {node}: {message}",
                        now_iso()
                    )?;
                }
                Event::RowSkipped { ordinal, message } => {
                    let line = failure_line(ordinal, "source", "row_decode", &message, 1);
                    failures_writer.append(&line)?;
                    session.skipped += 1;
                    since_flush += 1;
                }
                Event::SourceError(message) => {
                    source_error = Some(message);
                    abort.store(true, Ordering::SeqCst);
                }
            }
            if since_flush >= options.checkpoint_every {
                flush_checkpoint(
                    &mut checkpoint,
                    &mut output_writer,
                    &mut failures_writer,
                    &checkpoint_path,
                    &session,
                )?;
                since_flush = 0;
            }
        }
        Ok(())
    })?;

    let interrupted = options.cancelled();

    // Final flush.
    flush_checkpoint(
        &mut checkpoint,
        &mut output_writer,
        &mut failures_writer,
        &checkpoint_path,
        &session,
    )?;
    checkpoint::write_manifest(&run_dir.join("manifest.json"), &checkpoint.manifest)?;
    output_writer.finish()?;
    failures_writer.finish()?;

    // Post-processing on the complete output: OASST export, sink conversion.
    if !interrupted {
        if options.oasst {
            export_oasst(pipeline, &output_path, run_dir)?;
        }
        materialize_sink(pipeline, base, &output_path)?;
    }

    writeln!(
        log_file,
        "[{}] finish processed={} succeeded={} failed={} skipped={} interrupted={}",
        now_iso(),
        session.processed,
        session.succeeded,
        session.failed,
        session.skipped,
        interrupted
    )?;

    if let Some(msg) = source_error {
        return Err(GraspError::InvalidSource(msg));
    }

    Ok(RunReport {
        run_id: checkpoint.manifest.run_id.clone(),
        processed: session.processed,
        succeeded: session.succeeded,
        failed: session.failed,
        skipped: session.skipped,
        total_completed: checkpoint.completed.len() as u64,
        wall_ms: started.elapsed().as_millis() as u64,
        run_dir: run_dir.to_path_buf(),
        output_path,
        interrupted,
    })
}

fn flush_checkpoint(
    checkpoint: &mut Checkpoint,
    output_writer: &mut SinkWriter,
    failures_writer: &mut SinkWriter,
    path: &Path,
    session: &Counters,
) -> Result<()> {
    checkpoint
        .sink_positions
        .insert("output".to_string(), output_writer.position()?);
    checkpoint
        .sink_positions
        .insert("failures".to_string(), failures_writer.position()?);
    checkpoint.manifest.counters = Counters {
        processed: checkpoint.completed.len() as u64 + checkpoint.failed.len() as u64,
        succeeded: checkpoint.completed.len() as u64,
        failed: checkpoint.failed.len() as u64,
        skipped: session.skipped,
    };
    checkpoint.write(path)
}

fn failure_line(
    record_id: u64,
    node: &str,
    error_kind: &str,
    message: &str,
    attempts: u32,
) -> Record {
    let mut line = Map::new();
    line.insert("record_id".to_string(), Value::from(record_id));
    line.insert("node".to_string(), Value::String(node.to_string()));
    line.insert("error_kind".to_string(), Value::String(error_kind.to_string()));
    line.insert("message".to_string(), Value::String(message.to_string()));
    line.insert("attempts".to_string(), Value::from(attempts));
    line
}

/// Walk one record through the graph and map it to an output event.
fn process_record(
    record: Record,
    compiled: &CompiledGraph,
    pipeline: &PipelineConfig,
    registry: &Registry,
    backends: &BackendSet,
    media_base: &Option<PathBuf>,
    options: &RunOptions,
) -> Event {
    let record_id = dataio::record_index(&record).unwrap_or(0);
    let mut state = RecordState::new(record_id, record);
    let ctx = ExecContext::new(backends, &compiled.settings, options.run_seed)
        .with_media_base(media_base.clone());

    let fail = |state: &RecordState, node: &str, e: GraspError| Event::Failed {
        record_id,
        node: node.to_string(),
        error_kind: e.kind(),
        message: e.to_string(),
        attempts: state.trace.last().map(|t| t.attempts).unwrap_or(1),
        trace_nodes: state.trace.iter().map(|t| t.node.clone()).collect(),
    };

    // Resolve the entry point.
    let mut current = match compiled.entry() {
        Some(Next::Simple(to)) => to.clone(),
        Some(Next::Router(r)) => match route_label(r, &state) {
            Ok(target) => target,
            Err(e) => return fail(&state, "START", e),
        },
        None => {
            return fail(
                &state,
                "START",
                GraspError::InvalidPipeline("no entry edge".to_string()),
            )
        }
    };

    while current != END_NODE {
        if state.executions() >= compiled.loop_budget {
            return fail(
                &state,
                &current,
                GraspError::LoopBudgetExceeded {
                    node: current.clone(),
                    budget: compiled.loop_budget,
                },
            );
        }
        let Some(node) = compiled.nodes.get(&current) else {
            return fail(
                &state,
                &current,
                GraspError::InvalidPipeline(format!("unknown node {current:?}")),
            );
        };
        if let Err(e) = runtime::execute_node(node, &mut state, &ctx) {
            return fail(&state, &current, e);
        }
        match compiled.next_after(&current) {
            Some(Next::Simple(to)) => current = to.clone(),
            Some(Next::Router(r)) => match route_label(r, &state) {
                Ok(target) => current = target,
                Err(e) => return fail(&state, &current, e),
            },
            None => {
                return fail(
                    &state,
                    &current,
                    GraspError::InvalidPipeline(format!("node {current:?} has no outgoing edge")),
                )
            }
        }
    }

    // END reached: expose the conversation and trace, then build and
    // validate the record.
    if !state.values.contains_key("messages") {
        let messages: Vec<Value> = state
            .history
            .iter()
            .map(|m| {
                serde_json::json!({
                    "role": m.role,
                    "content": m.text_content(),
                })
            })
            .collect();
        state.values.insert("messages".to_string(), Value::Array(messages));
    }
    let trace: Vec<Value> = state
        .trace
        .iter()
        .map(|t| serde_json::to_value(t).unwrap_or(Value::Null))
        .collect();
    state.values.insert("__trace".to_string(), Value::Array(trace));

    let mut record = match output::build_record(&state, &pipeline.output, pipeline, registry) {
        Ok(r) => r,
        Err(e) => {
            return Event::SchemaSkip {
                record_id,
                reasons: vec![e.to_string()],
            }
        }
    };
    match output::validate_record(&record, pipeline.schema.as_ref(), registry) {
        output::Validation::Valid => {}
        output::Validation::Invalid { reasons } => {
            return Event::SchemaSkip { record_id, reasons }
        }
    }
    if options.quality {
        let qcfg = pipeline.quality.clone().unwrap_or_default();
        let report = quality::tag_record(&record, &state.history, &qcfg, backends);
        record.insert("quality".to_string(), report.to_value());
    }
    Event::Done { record_id, record }
}

/// Ask the router for a label and follow the path map.
pub fn route_label(router: &crate::graph::RouterEdge, state: &RecordState) -> Result<String> {
    let label = (router.router)(&state.values)?;
    router
        .path_map
        .get(&label)
        .cloned()
        .ok_or_else(|| GraspError::Routing {
            node: router.condition.clone(),
            label,
        })
}

/// Rebuild conversation trees from the finished output and write the OASST,
/// SFT and DPO export files.
fn export_oasst(pipeline: &PipelineConfig, output_path: &Path, run_dir: &Path) -> Result<()> {
    let text = std::fs::read_to_string(output_path).unwrap_or_default();
    let mut records: Vec<Record> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(line) {
            records.push(map);
        }
    }
    let conversation_key = pipeline
        .quality
        .as_ref()
        .map(|q| q.conversation_key.clone())
        .unwrap_or_else(|| "conversation".to_string());
    let (trees, warnings) = crate::oasst::build_trees(&records, &conversation_key);
    for w in warnings {
        log::warn!("oasst: {w}");
    }

    let mut oasst_file = std::fs::File::create(run_dir.join("oasst.jsonl"))?;
    let mut sft_file = std::fs::File::create(run_dir.join("sft.jsonl"))?;
    let mut dpo_file = std::fs::File::create(run_dir.join("dpo.jsonl"))?;
    for tree in &trees {
        for line in crate::oasst::tree_to_jsonl_lines(tree) {
            writeln!(oasst_file, "{line}")?;
        }
        for example in crate::oasst::extract_sft(tree) {
            writeln!(sft_file, "{}", crate::oasst::sft_to_jsonl_line(&example))?;
        }
        for pair in crate::oasst::extract_dpo(tree, "llm_score") {
            writeln!(dpo_file, "{}", crate::oasst::dpo_to_jsonl_line(&pair))?;
        }
    }
    Ok(())
}

/// Copy the canonical JSONL output into the configured sink when they
/// differ (CSV/Parquet conversion, hf mirror write).
fn materialize_sink(pipeline: &PipelineConfig, base: &Path, output_path: &Path) -> Result<()> {
    let Some(sink) = pipeline.data.as_ref().and_then(|d| d.sink.as_ref()) else {
        return Ok(());
    };
    let target = dataio::sink_path(sink, Some(base))?;
    if target == output_path {
        return Ok(());
    }
    let source = crate::config::SourceSpec {
        kind: SourceKind::Disk,
        file_path: Some(output_path.display().to_string()),
        file_format: Some(FileFormat::Jsonl),
        repo_id: None,
        config_name: None,
        splits: Vec::new(),
        streaming: true,
    };
    // Strip the injected index back off before writing the sink copy.
    let stream = dataio::open_source(&source, None)?;
    let stripped = dataio::RecordStream::new(stream.map(|item| {
        item.map(|mut r| {
            r.shift_remove(INDEX_KEY);
            r
        })
    }));
    // Replace, not append: the canonical file already holds the full run.
    if target.exists() {
        std::fs::remove_file(&target)?;
    }
    dataio::write_sink(sink, stripped, Some(base))?;
    Ok(())
}

/// Per-record failure log (already on disk during the run); returns the path.
pub fn failure_log_path(run_dir: &Path) -> PathBuf {
    run_dir.join("failures.jsonl")
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct BenchReport {
    pub records: u64,
    pub latency_ms: u64,
    pub calls_per_record: u32,
    pub concurrency: usize,
    pub sequential_wall_ms: u64,
    pub concurrent_wall_ms: u64,
    pub speedup: f64,
    /// Queueing-model oracle: max(R·C·L/k, C·L).
    pub oracle_sequential_ms: u64,
    pub oracle_concurrent_ms: u64,
}

/// Synthetic throughput benchmark: the same mock pipeline run sequentially
/// and with a worker pool.
pub fn bench(
    records: u64,
    latency_ms: u64,
    calls_per_record: u32,
    concurrency: usize,
) -> Result<BenchReport> {
    let dir = tempfile_dir()?;
    let pipeline = bench_pipeline(latency_ms, calls_per_record, &dir);
    let registry = Registry::builtin();
    let library = SubgraphLibrary::new();

    let mut opts = RunOptions {
        limit: Some(records),
        sequential: true,
        checkpoint_every: u64::MAX,
        ..RunOptions::default()
    };
    let seq = run_pipeline(&pipeline, &registry, &library, &dir, opts.clone())?;

    opts.sequential = false;
    opts.concurrency = concurrency;
    let conc = run_pipeline(&pipeline, &registry, &library, &dir, opts)?;

    let per_record = latency_ms * calls_per_record as u64;
    let oracle_seq = records * per_record;
    let oracle_conc = ((records * per_record) as f64 / concurrency as f64).max(per_record as f64) as u64;
    let _ = std::fs::remove_dir_all(&dir);
    Ok(BenchReport {
        records,
        latency_ms,
        calls_per_record,
        concurrency,
        sequential_wall_ms: seq.wall_ms,
        concurrent_wall_ms: conc.wall_ms,
        speedup: seq.wall_ms as f64 / conc.wall_ms.max(1) as f64,
        oracle_sequential_ms: oracle_seq,
        oracle_concurrent_ms: oracle_conc,
    })
}

fn tempfile_dir() -> Result<PathBuf> {
    let dir = std::env::temp_dir().join(format!(
        "grasp-bench-{}-{:x}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0)
    ));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Data-less pipeline with `calls` chained mock llm nodes.
fn bench_pipeline(latency_ms: u64, calls: u32, dir: &Path) -> PipelineConfig {
    use crate::backend::BackendConfig;
    use crate::config::*;
    use indexmap::IndexMap;

    let mut nodes = IndexMap::new();
    let mut edges = Vec::new();
    let mut prev = START_NODE.to_string();
    for i in 0..calls.max(1) {
        let name = format!("step{i}");
        nodes.insert(
            name.clone(),
            NodeSpec {
                node_type: NodeType::Llm,
                prompt: vec![MessageTemplate {
                    role: Role::User,
                    parts: vec![PartTemplate::Text(format!("bench step {i} for {{__index}}"))],
                }],
                model: Some(ModelSpec {
                    name: "bench_model".to_string(),
                    parameters: IndexMap::new(),
                }),
                output_keys: vec![format!("out{i}")],
                ..NodeSpec::default()
            },
        );
        edges.push(EdgeSpec::simple(&prev, &name));
        prev = name;
    }
    edges.push(EdgeSpec::simple(&prev, END_NODE));

    let mut output_map = IndexMap::new();
    output_map.insert(
        "id".to_string(),
        OutputFieldSource::From(INDEX_KEY.to_string()),
    );
    output_map.insert(
        "result".to_string(),
        OutputFieldSource::From(format!("out{}", calls.max(1) - 1)),
    );

    let mut models = IndexMap::new();
    models.insert(
        "bench_model".to_string(),
        BackendConfig::mock("bench_model").with_latency_ms(latency_ms),
    );

    PipelineConfig {
        data: Some(DataConfig {
            source: None,
            sink: Some(SinkSpec {
                kind: SourceKind::Disk,
                file_path: Some(dir.join("bench_output.jsonl").display().to_string()),
                file_format: Some(FileFormat::Jsonl),
                repo_id: None,
                config_name: None,
                splits: Vec::new(),
                push_to_hub: false,
            }),
            transforms: Vec::new(),
        }),
        graph: GraphConfig {
            settings: GraphSettings::default(),
            nodes,
            edges,
        },
        output: OutputConfig {
            output_map,
            generator: None,
        },
        schema: None,
        quality: None,
        models,
    }
}
