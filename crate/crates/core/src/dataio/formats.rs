//! Per-format readers. All yield raw records (no `__index` yet) with
//! row-decode failures as `Err` items carrying the physical row ordinal.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde_json::{Map, Value};

use crate::config::FileFormat;
use crate::error::{GraspError, Result};

use super::Record;

pub(super) fn read_file_raw(
    path: &Path,
    format: FileFormat,
) -> Result<Box<dyn Iterator<Item = Result<Record>> + Send>> {
    if !path.is_file() {
        return Err(GraspError::SourceNotFound(path.display().to_string()));
    }
    match format {
        FileFormat::Jsonl => read_jsonl(path),
        FileFormat::Json => read_json_array(path),
        FileFormat::Csv => read_csv(path),
        FileFormat::Parquet => read_parquet(path),
    }
}

fn read_jsonl(path: &Path) -> Result<Box<dyn Iterator<Item = Result<Record>> + Send>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let iter = reader
        .lines()
        .filter(|l| match l {
            Ok(line) => !line.trim().is_empty(),
            Err(_) => true,
        })
        .enumerate()
        .map(|(ordinal, line)| {
            let line = line.map_err(GraspError::Io)?;
            match serde_json::from_str::<Value>(&line) {
                Ok(Value::Object(map)) => Ok(map),
                Ok(other) => Err(GraspError::RowDecode {
                    ordinal: ordinal as u64,
                    message: format!("expected a JSON object, got {other}"),
                }),
                Err(e) => Err(GraspError::RowDecode {
                    ordinal: ordinal as u64,
                    message: e.to_string(),
                }),
            }
        });
    Ok(Box::new(iter))
}

fn read_json_array(path: &Path) -> Result<Box<dyn Iterator<Item = Result<Record>> + Send>> {
    let text = std::fs::read_to_string(path)?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| GraspError::InvalidSource(format!("{}: {e}", path.display())))?;
    let items = match value {
        Value::Array(items) => items,
        // A single object is treated as a one-record file.
        Value::Object(map) => vec![Value::Object(map)],
        other => {
            return Err(GraspError::InvalidSource(format!(
                "{}: expected a JSON array, got {}",
                path.display(),
                type_of(&other)
            )))
        }
    };
    let iter = items.into_iter().enumerate().map(|(ordinal, v)| match v {
        Value::Object(map) => Ok(map),
        other => Err(GraspError::RowDecode {
            ordinal: ordinal as u64,
            message: format!("expected a JSON object, got {}", type_of(&other)),
        }),
    });
    Ok(Box::new(iter))
}

fn type_of(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn read_csv(path: &Path) -> Result<Box<dyn Iterator<Item = Result<Record>> + Send>> {
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| GraspError::InvalidSource(format!("{}: {e}", path.display())))?
        .iter()
        .map(String::from)
        .collect();
    if headers.is_empty() {
        return Err(GraspError::InvalidSource(format!(
            "{}: CSV header row required",
            path.display()
        )));
    }
    let iter = reader.into_records().enumerate().map(move |(ordinal, row)| {
        let row = row.map_err(|e| GraspError::RowDecode {
            ordinal: ordinal as u64,
            message: e.to_string(),
        })?;
        let mut map = Map::new();
        for (i, h) in headers.iter().enumerate() {
            // CSV values stay strings; schema validation coerces later if at all.
            let v = row.get(i).unwrap_or("");
            map.insert(h.clone(), Value::String(v.to_string()));
        }
        Ok(map)
    });
    Ok(Box::new(iter))
}

fn read_parquet(path: &Path) -> Result<Box<dyn Iterator<Item = Result<Record>> + Send>> {
    let records = read_parquet_records(path)?;
    Ok(Box::new(records.into_iter().map(Ok)))
}

/// Read a whole parquet file into records via arrow's JSON writer.
pub fn read_parquet_records(path: &Path) -> Result<Vec<Record>> {
    use parquet::arrow::arrow_reader::ParquetRecordBatchReaderBuilder;

    let file = File::open(path)?;
    let builder = ParquetRecordBatchReaderBuilder::try_new(file)
        .map_err(|e| GraspError::InvalidSource(format!("{}: {e}", path.display())))?;
    let reader = builder
        .build()
        .map_err(|e| GraspError::InvalidSource(format!("{}: {e}", path.display())))?;

    let mut buf = Vec::new();
    {
        let mut writer = arrow_json::ArrayWriter::new(&mut buf);
        for batch in reader {
            let batch = batch.map_err(|e| GraspError::InvalidSource(e.to_string()))?;
            writer
                .write(&batch)
                .map_err(|e| GraspError::InvalidSource(e.to_string()))?;
        }
        writer
            .finish()
            .map_err(|e| GraspError::InvalidSource(e.to_string()))?;
    }
    if buf.is_empty() {
        return Ok(Vec::new());
    }
    let rows: Vec<Record> = serde_json::from_slice(&buf)
        .map_err(|e| GraspError::InvalidSource(format!("parquet rows: {e}")))?;
    Ok(rows)
}

/// Write records to a parquet file, inferring the arrow schema from the data.
pub fn write_parquet_records(path: &Path, records: &[Record]) -> Result<()> {
    use arrow_json::reader::infer_json_schema_from_iterator;
    use parquet::arrow::ArrowWriter;
    use std::sync::Arc;

    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let values: Vec<Value> = records.iter().map(|r| Value::Object(r.clone())).collect();
    let schema = infer_json_schema_from_iterator(values.iter().map(|v| Ok(v.clone())))
        .map_err(|e| GraspError::Sink(format!("schema inference: {e}")))?;
    let schema = Arc::new(schema);
    let mut decoder = arrow_json::ReaderBuilder::new(schema.clone())
        .build_decoder()
        .map_err(|e| GraspError::Sink(e.to_string()))?;
    decoder
        .serialize(&values)
        .map_err(|e| GraspError::Sink(e.to_string()))?;
    let batch = decoder
        .flush()
        .map_err(|e| GraspError::Sink(e.to_string()))?;
    let file = File::create(path)?;
    let mut writer =
        ArrowWriter::try_new(file, schema, None).map_err(|e| GraspError::Sink(e.to_string()))?;
    if let Some(batch) = batch {
        writer.write(&batch).map_err(|e| GraspError::Sink(e.to_string()))?;
    }
    writer.close().map_err(|e| GraspError::Sink(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn parquet_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.parquet");
        let records: Vec<Record> = vec![
            json!({"id": 1, "text": "alpha", "score": 0.5}),
            json!({"id": 2, "text": "beta", "score": 1.5}),
            json!({"id": 3, "text": "gamma", "score": 2.0}),
        ]
        .into_iter()
        .map(|v| v.as_object().unwrap().clone())
        .collect();
        write_parquet_records(&path, &records).unwrap();
        let back = read_parquet_records(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (orig, got) in records.iter().zip(&back) {
            assert_eq!(got["id"], orig["id"]);
            assert_eq!(got["text"], orig["text"]);
            assert_eq!(got["score"].as_f64(), orig["score"].as_f64());
        }
    }
}
