//! Record sinks. JSONL and CSV append incrementally so a resumed run can
//! continue the same file; Parquet buffers and writes on finish.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::config::{FileFormat, SinkSpec, SourceKind};
use crate::error::{GraspError, Result};

use super::{formats, hf_mirror_root, Record, RecordStream};

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SinkReport {
    pub written: u64,
    pub skipped: u64,
}

enum SinkBackend {
    Jsonl(BufWriter<File>),
    Csv {
        writer: BufWriter<File>,
        header: Option<Vec<String>>,
    },
    Parquet(Vec<Record>),
}

/// Serialized writer for one sink destination.
pub struct SinkWriter {
    path: PathBuf,
    backend: SinkBackend,
    report: SinkReport,
}

/// The file a sink spec writes to; hf sinks land in the local mirror.
pub fn sink_path(spec: &SinkSpec, base: Option<&Path>) -> Result<PathBuf> {
    match spec.kind {
        SourceKind::Disk => {
            let p = spec
                .file_path
                .as_ref()
                .ok_or_else(|| GraspError::Sink("disk sink has no file_path".into()))?;
            let path = Path::new(p);
            if path.is_relative() {
                if let Some(b) = base {
                    return Ok(b.join(path));
                }
            }
            Ok(path.to_path_buf())
        }
        SourceKind::Hf => {
            let repo = spec
                .repo_id
                .as_ref()
                .ok_or_else(|| GraspError::Sink("hf sink has no repo_id".into()))?;
            let split = spec.splits.first().map(String::as_str).unwrap_or("train");
            let mut dir = hf_mirror_root(base).join(repo);
            if let Some(cn) = &spec.config_name {
                dir = dir.join(cn);
            }
            Ok(dir.join(format!("{split}.jsonl")))
        }
        SourceKind::None => Err(GraspError::Sink("sink type cannot be none".into())),
    }
}

fn sink_format(spec: &SinkSpec, path: &Path) -> FileFormat {
    if spec.kind == SourceKind::Hf {
        return FileFormat::Jsonl;
    }
    spec.file_format
        .or_else(|| path.to_str().and_then(FileFormat::from_path))
        .unwrap_or(FileFormat::Jsonl)
}

impl SinkWriter {
    /// Open (appending) the sink a spec describes.
    pub fn open(spec: &SinkSpec, base: Option<&Path>) -> Result<SinkWriter> {
        if spec.push_to_hub {
            log::warn!("hub push disabled; writing locally instead");
        }
        let path = sink_path(spec, base)?;
        let format = sink_format(spec, &path);
        Self::open_path(&path, format)
    }

    /// Open a concrete file in a concrete format. JSON sinks are written as
    /// JSONL so appends stay valid.
    pub fn open_path(path: &Path, format: FileFormat) -> Result<SinkWriter> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let backend = match format {
            FileFormat::Jsonl | FileFormat::Json => {
                let file = OpenOptions::new().create(true).append(true).open(path)?;
                SinkBackend::Jsonl(BufWriter::new(file))
            }
            FileFormat::Csv => {
                let existing = std::fs::metadata(path).map(|m| m.len()).unwrap_or(0);
                let file = OpenOptions::new().create(true).append(true).open(path)?;
                SinkBackend::Csv {
                    writer: BufWriter::new(file),
                    header: if existing > 0 {
                        // Re-opened file: header already present.
                        Some(read_csv_header(path)?)
                    } else {
                        None
                    },
                }
            }
            FileFormat::Parquet => SinkBackend::Parquet(Vec::new()),
        };
        Ok(SinkWriter {
            path: path.to_path_buf(),
            backend,
            report: SinkReport::default(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Append one record and flush it to the OS, so a hard kill loses at
    /// most the in-flight line.
    pub fn append(&mut self, record: &Record) -> Result<()> {
        match &mut self.backend {
            SinkBackend::Jsonl(w) => {
                serde_json::to_writer(&mut *w, &Value::Object(record.clone()))
                    .map_err(|e| GraspError::Sink(e.to_string()))?;
                w.write_all(b"\n")?;
                w.flush()?;
            }
            SinkBackend::Csv { writer, header } => {
                if header.is_none() {
                    let cols: Vec<String> = record.keys().cloned().collect();
                    write_csv_row(writer, &cols)?;
                    *header = Some(cols);
                }
                let cols = header.as_ref().unwrap();
                let row: Vec<String> = cols
                    .iter()
                    .map(|c| match record.get(c) {
                        Some(Value::String(s)) => s.clone(),
                        Some(other) => other.to_string(),
                        None => String::new(),
                    })
                    .collect();
                write_csv_row(writer, &row)?;
                writer.flush()?;
            }
            SinkBackend::Parquet(buf) => buf.push(record.clone()),
        }
        self.report.written += 1;
        Ok(())
    }

    pub fn note_skipped(&mut self) {
        self.report.skipped += 1;
    }

    /// Current byte offset of the sink file (buffered bytes included are
    /// flushed first). Parquet sinks report buffered record count instead.
    pub fn position(&mut self) -> Result<u64> {
        match &mut self.backend {
            SinkBackend::Jsonl(w) => {
                w.flush()?;
                Ok(w.get_mut().seek(SeekFrom::End(0))?)
            }
            SinkBackend::Csv { writer, .. } => {
                writer.flush()?;
                Ok(writer.get_mut().seek(SeekFrom::End(0))?)
            }
            SinkBackend::Parquet(buf) => Ok(buf.len() as u64),
        }
    }

    /// Finish writing (materializes parquet) and return the report.
    pub fn finish(mut self) -> Result<SinkReport> {
        match &mut self.backend {
            SinkBackend::Jsonl(w) => w.flush()?,
            SinkBackend::Csv { writer, .. } => writer.flush()?,
            SinkBackend::Parquet(buf) => {
                formats::write_parquet_records(&self.path, buf)?;
            }
        }
        Ok(self.report)
    }
}

fn read_csv_header(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    Ok(reader
        .headers()
        .map_err(|e| GraspError::Sink(e.to_string()))?
        .iter()
        .map(String::from)
        .collect())
}

fn write_csv_row(w: &mut impl Write, row: &[String]) -> Result<()> {
    let mut builder = csv::WriterBuilder::new().from_writer(Vec::new());
    builder
        .write_record(row)
        .map_err(|e| GraspError::Sink(e.to_string()))?;
    let bytes = builder
        .into_inner()
        .map_err(|e| GraspError::Sink(e.to_string()))?;
    w.write_all(&bytes)?;
    Ok(())
}

/// Drain a stream into the sink described by `spec`.
pub fn write_sink(spec: &SinkSpec, stream: RecordStream, base: Option<&Path>) -> Result<SinkReport> {
    let mut writer = SinkWriter::open(spec, base)?;
    for item in stream {
        match item {
            Ok(r) => writer.append(&r)?,
            Err(_) => writer.note_skipped(),
        }
    }
    writer.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SourceSpec;
    use crate::dataio::open_source;
    use serde_json::json;

    fn rec(v: Value) -> Record {
        v.as_object().unwrap().clone()
    }

    fn disk_sink(path: &Path, format: FileFormat) -> SinkSpec {
        SinkSpec {
            kind: SourceKind::Disk,
            file_path: Some(path.to_str().unwrap().to_string()),
            file_format: Some(format),
            repo_id: None,
            config_name: None,
            splits: Vec::new(),
            push_to_hub: false,
        }
    }

    #[test]
    fn jsonl_three_records_three_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.jsonl");
        let records = vec![
            rec(json!({"b": 1, "a": 2})),
            rec(json!({"b": 3, "a": 4})),
            rec(json!({"b": 5, "a": 6})),
        ];
        let report = write_sink(
            &disk_sink(&path, FileFormat::Jsonl),
            RecordStream::from_records(records),
            None,
        )
        .unwrap();
        assert_eq!(report.written, 3);
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        // Declaration order of keys is preserved on every line.
        assert_eq!(lines[0], "{\"b\":1,\"a\":2}");
    }

    #[test]
    fn jsonl_round_trip_up_to_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.jsonl");
        let records = vec![rec(json!({"x": "1", "y": [1, 2]})), rec(json!({"x": "2", "y": []}))];
        write_sink(
            &disk_sink(&path, FileFormat::Jsonl),
            RecordStream::from_records(records.clone()),
            None,
        )
        .unwrap();
        let spec = SourceSpec {
            kind: SourceKind::Disk,
            file_path: Some(path.to_str().unwrap().to_string()),
            file_format: Some(FileFormat::Jsonl),
            repo_id: None,
            config_name: None,
            splits: Vec::new(),
            streaming: true,
        };
        let (back, _) = open_source(&spec, None).unwrap().collect_ok();
        for (orig, got) in records.iter().zip(&back) {
            let mut got = got.clone();
            got.shift_remove(super::super::INDEX_KEY);
            assert_eq!(&got, orig);
        }
    }

    #[test]
    fn parquet_sink_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.parquet");
        let records = vec![rec(json!({"id": 1, "t": "a"})), rec(json!({"id": 2, "t": "b"}))];
        let report = write_sink(
            &disk_sink(&path, FileFormat::Parquet),
            RecordStream::from_records(records.clone()),
            None,
        )
        .unwrap();
        assert_eq!(report.written, 2);
        let back = formats::read_parquet_records(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0]["id"], json!(1));
        assert_eq!(back[1]["t"], json!("b"));
    }

    #[test]
    fn hf_sink_writes_to_mirror() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SinkSpec {
            kind: SourceKind::Hf,
            file_path: None,
            file_format: None,
            repo_id: Some("acme/out".to_string()),
            config_name: None,
            splits: vec!["train".to_string()],
            push_to_hub: true,
        };
        let report = write_sink(
            &spec,
            RecordStream::from_records(vec![rec(json!({"k": 1}))]),
            Some(dir.path()),
        )
        .unwrap();
        assert_eq!(report.written, 1);
        let out = dir.path().join("hf_mirror/acme/out/train.jsonl");
        assert!(out.is_file());
    }

    #[test]
    fn csv_sink_appends_with_single_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        {
            let mut w = SinkWriter::open_path(&path, FileFormat::Csv).unwrap();
            w.append(&rec(json!({"a": "1", "b": "x"}))).unwrap();
            w.finish().unwrap();
        }
        {
            let mut w = SinkWriter::open_path(&path, FileFormat::Csv).unwrap();
            w.append(&rec(json!({"a": "2", "b": "y"}))).unwrap();
            w.finish().unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("a,b\n"));
    }
}
