//! Declarative record transforms: rename, combine, skip.
//!
//! Transforms apply in declaration order and are pure: replaying the same
//! stream yields identical output.

use std::collections::VecDeque;

use indexmap::IndexMap;
use serde_json::{Map, Value};

use crate::config::{FieldStrategy, TransformSpec};
use crate::template::value_to_text;

use super::{Record, RecordStream, INDEX_KEY};

/// Rename fields per `mapping`, resolving all lookups against the original
/// record (simultaneous rename). Entries whose old name is missing, or whose
/// new name already exists with `overwrite=false`, are skipped with a
/// warning.
pub fn apply_rename(
    record: &Record,
    mapping: &IndexMap<String, String>,
    overwrite: bool,
) -> (Record, Vec<String>) {
    let mut warnings = Vec::new();
    // old -> new renames that will fire.
    let mut effective: IndexMap<&str, &str> = IndexMap::new();
    // target keys whose existing entry is being replaced (overwrite).
    let mut replaced: IndexMap<&str, &str> = IndexMap::new();
    for (old, new) in mapping {
        if !record.contains_key(old) {
            warnings.push(format!("rename: field {old:?} not present, entry skipped"));
            continue;
        }
        if old == new {
            continue;
        }
        if record.contains_key(new) {
            if overwrite {
                effective.insert(old, new);
                replaced.insert(new.as_str(), old.as_str());
            } else {
                warnings.push(format!(
                    "rename: target {new:?} already exists and overwrite=false, entry skipped"
                ));
            }
        } else {
            effective.insert(old, new);
        }
    }
    let mut out = Map::new();
    for (key, value) in record {
        if let Some(source_old) = replaced.get(key.as_str()) {
            // Replaced in place: target keeps its position, takes old's value.
            out.insert(key.clone(), record[*source_old].clone());
        } else if let Some(new) = effective.get(key.as_str()) {
            if record.contains_key(*new) {
                // Value moved into the target's position; drop the old slot.
                continue;
            }
            out.insert((*new).to_string(), value.clone());
        } else {
            out.insert(key.clone(), value.clone());
        }
    }
    (out, warnings)
}

/// Sliding-window combine: one output per `num_records` consecutive inputs,
/// advancing by `shift`; the trailing partial window is dropped. Unlisted
/// fields default to the first record's value.
pub fn apply_combine(
    stream: RecordStream,
    num_records: usize,
    shift: usize,
    strategies: IndexMap<String, FieldStrategy>,
) -> RecordStream {
    struct Combine {
        inner: RecordStream,
        window: VecDeque<Record>,
        num_records: usize,
        shift: usize,
        strategies: IndexMap<String, FieldStrategy>,
        done: bool,
    }

    impl Iterator for Combine {
        type Item = crate::error::Result<Record>;

        fn next(&mut self) -> Option<Self::Item> {
            loop {
                if self.done {
                    return None;
                }
                while self.window.len() < self.num_records {
                    match self.inner.next() {
                        Some(Ok(r)) => self.window.push_back(r),
                        Some(Err(e)) => return Some(Err(e)),
                        None => {
                            self.done = true;
                            return None;
                        }
                    }
                }
                let merged = merge_window(
                    self.window.make_contiguous(),
                    &self.strategies,
                );
                for _ in 0..self.shift.min(self.window.len()) {
                    self.window.pop_front();
                }
                return Some(Ok(merged));
            }
        }
    }

    RecordStream::new(Combine {
        inner: stream,
        window: VecDeque::new(),
        num_records: num_records.max(2),
        shift: shift.max(1),
        strategies,
        done: false,
    })
}

fn merge_window(window: &[Record], strategies: &IndexMap<String, FieldStrategy>) -> Record {
    let mut out = Map::new();
    // Field order: first record's order, then later-only fields as seen.
    let mut fields: Vec<String> = Vec::new();
    for r in window {
        for key in r.keys() {
            if !fields.iter().any(|f| f == key) {
                fields.push(key.clone());
            }
        }
    }
    for field in fields {
        if field == INDEX_KEY {
            // The window inherits the first record's identity.
            if let Some(v) = window[0].get(INDEX_KEY) {
                out.insert(INDEX_KEY.to_string(), v.clone());
            }
            continue;
        }
        let strategy = strategies.get(&field).unwrap_or(&FieldStrategy::First);
        let present: Vec<&Value> = window.iter().filter_map(|r| r.get(&field)).collect();
        if present.is_empty() {
            continue;
        }
        let value = match strategy {
            FieldStrategy::First => (*present.first().unwrap()).clone(),
            FieldStrategy::Last => (*present.last().unwrap()).clone(),
            FieldStrategy::Join(delim) => Value::String(
                present
                    .iter()
                    .map(|v| value_to_text(v))
                    .collect::<Vec<_>>()
                    .join(delim),
            ),
        };
        out.insert(field, value);
    }
    out
}

/// Drop `from_start` leading and `from_end` trailing records. The trailing
/// skip buffers only `from_end` records, so streaming stays O(from_end).
pub fn apply_skip(stream: RecordStream, from_start: usize, from_end: usize) -> RecordStream {
    struct Skip {
        inner: RecordStream,
        to_skip: usize,
        tail: VecDeque<Record>,
        from_end: usize,
    }

    impl Iterator for Skip {
        type Item = crate::error::Result<Record>;

        fn next(&mut self) -> Option<Self::Item> {
            loop {
                match self.inner.next() {
                    Some(Ok(r)) => {
                        if self.to_skip > 0 {
                            self.to_skip -= 1;
                            continue;
                        }
                        self.tail.push_back(r);
                        if self.tail.len() > self.from_end {
                            return self.tail.pop_front().map(Ok);
                        }
                    }
                    Some(Err(e)) => return Some(Err(e)),
                    None => return None,
                }
            }
        }
    }

    RecordStream::new(Skip {
        inner: stream,
        to_skip: from_start,
        tail: VecDeque::new(),
        from_end,
    })
}

/// Apply a transform pipeline in declaration order.
pub fn apply_transforms(stream: RecordStream, transforms: &[TransformSpec]) -> RecordStream {
    let mut current = stream;
    for t in transforms {
        current = match t {
            TransformSpec::RenameFields { mapping, overwrite } => {
                let mapping = mapping.clone();
                let overwrite = *overwrite;
                RecordStream::new(current.map(move |item| {
                    item.map(|r| {
                        let (out, warnings) = apply_rename(&r, &mapping, overwrite);
                        for w in warnings {
                            log::warn!("{w}");
                        }
                        out
                    })
                }))
            }
            TransformSpec::CombineRecords {
                num_records,
                shift,
                field_strategies,
            } => apply_combine(current, *num_records, *shift, field_strategies.clone()),
            TransformSpec::SkipRecords { from_start, from_end } => {
                apply_skip(current, *from_start, *from_end)
            }
        };
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn rec(v: Value) -> Record {
        v.as_object().unwrap().clone()
    }

    fn stream_of(values: Vec<Value>) -> RecordStream {
        RecordStream::from_records(values.into_iter().map(rec).collect())
    }

    fn mapping(pairs: &[(&str, &str)]) -> IndexMap<String, String> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn rename_page_extract_type() {
        let r = rec(json!({"page": 1, "llm_extract": "t", "type": "md"}));
        let m = mapping(&[("page", "id"), ("llm_extract", "text"), ("type", "text_format")]);
        let (out, warnings) = apply_rename(&r, &m, false);
        assert!(warnings.is_empty());
        assert_eq!(Value::Object(out), json!({"id": 1, "text": "t", "text_format": "md"}));
    }

    #[test]
    fn rename_empty_mapping_is_identity() {
        let r = rec(json!({"a": 1}));
        let (out, warnings) = apply_rename(&r, &IndexMap::new(), false);
        assert_eq!(out, r);
        assert!(warnings.is_empty());
    }

    #[test]
    fn rename_exists_overwrite_matrix() {
        // The four (target exists × overwrite) cases, worked by hand.
        let m = mapping(&[("a", "b")]);

        // target absent, overwrite=false: plain rename.
        let (out, w) = apply_rename(&rec(json!({"a": 1, "c": 2})), &m, false);
        assert_eq!(Value::Object(out), json!({"b": 1, "c": 2}));
        assert!(w.is_empty());

        // target absent, overwrite=true: same.
        let (out, _) = apply_rename(&rec(json!({"a": 1, "c": 2})), &m, true);
        assert_eq!(Value::Object(out), json!({"b": 1, "c": 2}));

        // target present, overwrite=false: untouched + warning.
        let (out, w) = apply_rename(&rec(json!({"a": 1, "b": 9})), &m, false);
        assert_eq!(Value::Object(out), json!({"a": 1, "b": 9}));
        assert_eq!(w.len(), 1);

        // target present, overwrite=true: b takes a's value, a removed.
        let (out, w) = apply_rename(&rec(json!({"a": 1, "b": 9})), &m, true);
        assert_eq!(Value::Object(out), json!({"b": 1}));
        assert!(w.is_empty());
    }

    #[test]
    fn rename_missing_old_warns() {
        let (out, w) = apply_rename(&rec(json!({"x": 1})), &mapping(&[("gone", "y")]), false);
        assert_eq!(Value::Object(out), json!({"x": 1}));
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn combine_sliding_window_join() {
        // Hand-computed: windows (A,B) and (B,C) joined with newline.
        let s = stream_of(vec![json!({"t": "A"}), json!({"t": "B"}), json!({"t": "C"})]);
        let mut strategies = IndexMap::new();
        strategies.insert("t".to_string(), FieldStrategy::Join("\n".to_string()));
        let (out, _) = apply_combine(s, 2, 1, strategies).collect_ok();
        let texts: Vec<&str> = out.iter().map(|r| r["t"].as_str().unwrap()).collect();
        assert_eq!(texts, vec!["A\nB", "B\nC"]);
    }

    #[test]
    fn combine_non_overlapping_partitions() {
        // Hand-computed: shift 2 over 4 records gives 2 disjoint windows.
        let s = stream_of(vec![
            json!({"t": "A"}),
            json!({"t": "B"}),
            json!({"t": "C"}),
            json!({"t": "D"}),
        ]);
        let mut strategies = IndexMap::new();
        strategies.insert("t".to_string(), FieldStrategy::Join("|".to_string()));
        let (out, _) = apply_combine(s, 2, 2, strategies).collect_ok();
        let texts: Vec<&str> = out.iter().map(|r| r["t"].as_str().unwrap()).collect();
        assert_eq!(texts, vec!["A|B", "C|D"]);
    }

    #[test]
    fn combine_insufficient_window_is_empty() {
        let s = stream_of(vec![json!({"t": "A"})]);
        let (out, _) = apply_combine(s, 2, 1, IndexMap::new()).collect_ok();
        assert!(out.is_empty());
    }

    #[test]
    fn combine_unlisted_fields_take_first() {
        let s = stream_of(vec![json!({"t": "A", "k": 1}), json!({"t": "B", "k": 2})]);
        let mut strategies = IndexMap::new();
        strategies.insert("t".to_string(), FieldStrategy::Join(" ".to_string()));
        let (out, _) = apply_combine(s, 2, 1, strategies).collect_ok();
        assert_eq!(out[0]["k"], json!(1));
        assert_eq!(out[0]["t"], json!("A B"));
    }

    #[test]
    fn combine_last_strategy() {
        let s = stream_of(vec![json!({"k": 1}), json!({"k": 2})]);
        let mut strategies = IndexMap::new();
        strategies.insert("k".to_string(), FieldStrategy::Last);
        let (out, _) = apply_combine(s, 2, 1, strategies).collect_ok();
        assert_eq!(out[0]["k"], json!(2));
    }

    #[test]
    fn skip_first_and_last() {
        let records: Vec<Value> = (0..30).map(|i| json!({"__index": i, "v": i})).collect();
        let s = stream_of(records);
        let (out, _) = apply_skip(s, 10, 10).collect_ok();
        let indices: Vec<u64> = out.iter().map(|r| r["__index"].as_u64().unwrap()).collect();
        assert_eq!(indices, (10..20).collect::<Vec<u64>>());
    }

    #[test]
    fn skip_zero_is_identity() {
        let s = stream_of(vec![json!({"a": 1}), json!({"a": 2})]);
        let (out, _) = apply_skip(s, 0, 0).collect_ok();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn skip_exhausts_short_streams() {
        let s = stream_of((0..5).map(|i| json!({"i": i})).collect());
        let (out, _) = apply_skip(s, 3, 3).collect_ok();
        assert!(out.is_empty());
    }
}
