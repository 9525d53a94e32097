//! Output mapping and schema validation of final records.
//!
//! `output_map` fields resolve from exactly one of a state key, a constant
//! (with `$`-path substitution into the config), or a registered transform;
//! an optional custom generator can rewrite the assembled record. Validation
//! then type- and rule-checks each declared field, collecting every failed
//! check.

use regex::Regex;
use serde_json::{Map, Value};

use crate::config::{
    resolve_config_path, FieldRule, OutputConfig, OutputFieldSource, PipelineConfig, SchemaConfig,
};
use crate::dataio::Record;
use crate::error::{GraspError, Result};
use crate::registry::Registry;
use crate::runtime::RecordState;

/// Build the output record for a state that reached END.
pub fn build_record(
    state: &RecordState,
    output: &OutputConfig,
    pipeline: &PipelineConfig,
    registry: &Registry,
) -> Result<Record> {
    let mut record = Map::new();
    for (field, source) in &output.output_map {
        let value = match source {
            OutputFieldSource::From(key) => {
                state
                    .values
                    .get(key)
                    .cloned()
                    .ok_or_else(|| GraspError::OutputMap {
                        field: field.clone(),
                        message: format!("state key {key:?} missing"),
                    })?
            }
            OutputFieldSource::Value(v) => substitute_config_paths(v, pipeline)?,
            OutputFieldSource::Transform(name) => {
                let transform = registry.transform(name).ok_or_else(|| GraspError::OutputMap {
                    field: field.clone(),
                    message: format!("unknown transform {name:?}"),
                })?;
                transform(&state.values).map_err(|e| GraspError::OutputMap {
                    field: field.clone(),
                    message: e.to_string(),
                })?
            }
        };
        record.insert(field.clone(), value);
    }
    if let Some(name) = &output.generator {
        let generator = registry.generator(name).ok_or_else(|| GraspError::OutputMap {
            field: "<generator>".to_string(),
            message: format!("unknown generator {name:?}"),
        })?;
        record = generator(&state.values, record).map_err(|e| GraspError::OutputMap {
            field: "<generator>".to_string(),
            message: e.to_string(),
        })?;
    }
    Ok(record)
}

/// Replace `$a.b.c` tokens in constant strings with config scalars. A value
/// that is exactly one token keeps the scalar's type.
fn substitute_config_paths(v: &Value, pipeline: &PipelineConfig) -> Result<Value> {
    let Value::String(s) = v else {
        return Ok(v.clone());
    };
    if !s.contains('$') {
        return Ok(v.clone());
    }
    let tokens = find_path_tokens(s);
    if tokens.is_empty() {
        return Ok(v.clone());
    }
    // Whole-string single token: keep the resolved scalar type.
    if tokens.len() == 1 && tokens[0].0 == 0 && tokens[0].1 == s.len() {
        return resolve_config_path(pipeline, &s[tokens[0].0..tokens[0].1]);
    }
    let mut out = String::new();
    let mut cursor = 0;
    for (start, end) in tokens {
        out.push_str(&s[cursor..start]);
        let resolved = resolve_config_path(pipeline, &s[start..end])?;
        out.push_str(&crate::template::value_to_text(&resolved));
        cursor = end;
    }
    out.push_str(&s[cursor..]);
    Ok(Value::String(out))
}

/// Byte ranges of `$seg.seg...` tokens.
fn find_path_tokens(s: &str) -> Vec<(usize, usize)> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'$' {
            let start = i;
            let mut j = i + 1;
            while j < bytes.len()
                && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_' || bytes[j] == b'.')
            {
                j += 1;
            }
            // Trim a trailing dot (sentence punctuation, not a segment).
            let mut end = j;
            while end > start + 1 && bytes[end - 1] == b'.' {
                end -= 1;
            }
            if end > start + 1 {
                out.push((start, end));
            }
            i = j;
        } else {
            i += 1;
        }
    }
    out
}

/// Outcome of record validation.
#[derive(Debug, Clone, PartialEq)]
pub enum Validation {
    Valid,
    Invalid { reasons: Vec<String> },
}

impl Validation {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validation::Valid)
    }
}

/// Validate a record against `schema_config`: declared types first, then
/// rules (`is_greater_than`/`is_less_than` strict, `regex` full-match,
/// `non_empty`). Absent schema always validates. Reasons list every failed
/// check, in field order.
pub fn validate_record(
    record: &Record,
    schema: Option<&SchemaConfig>,
    registry: &Registry,
) -> Validation {
    let Some(schema) = schema else {
        return Validation::Valid;
    };
    let mut reasons = Vec::new();

    if let Some(name) = &schema.schema {
        match registry.validator(name) {
            Some(v) => {
                if let Err(mut r) = v(record) {
                    reasons.append(&mut r);
                }
            }
            None => reasons.push(format!("unknown schema validator {name:?}")),
        }
    }

    for field in &schema.fields {
        let Some(value) = record.get(&field.name) else {
            reasons.push(format!("{}: missing", field.name));
            continue;
        };
        if !field.field_type.matches(value) {
            reasons.push(format!("{}: expected {}", field.name, field.field_type));
            continue;
        }
        for rule in &field.rules {
            match rule {
                FieldRule::IsGreaterThan(limit) => {
                    let n = value.as_f64().unwrap_or(f64::NAN);
                    if !(n > *limit) {
                        reasons.push(format!("{}: {} not > {}", field.name, fmt_num(n), fmt_num(*limit)));
                    }
                }
                FieldRule::IsLessThan(limit) => {
                    let n = value.as_f64().unwrap_or(f64::NAN);
                    if !(n < *limit) {
                        reasons.push(format!("{}: {} not < {}", field.name, fmt_num(n), fmt_num(*limit)));
                    }
                }
                FieldRule::Regex(pattern) => {
                    let text = value.as_str().unwrap_or("");
                    match full_match(pattern, text) {
                        Ok(true) => {}
                        Ok(false) => reasons.push(format!(
                            "{}: {:?} does not match /{}/",
                            field.name, text, pattern
                        )),
                        Err(e) => reasons.push(format!("{}: invalid regex: {e}", field.name)),
                    }
                }
                FieldRule::NonEmpty(required) => {
                    if *required {
                        let empty = match value {
                            Value::String(s) => s.is_empty(),
                            Value::Array(a) => a.is_empty(),
                            Value::Object(o) => o.is_empty(),
                            _ => false,
                        };
                        if empty {
                            reasons.push(format!("{}: empty", field.name));
                        }
                    }
                }
            }
        }
    }

    if reasons.is_empty() {
        Validation::Valid
    } else {
        Validation::Invalid { reasons }
    }
}

fn fmt_num(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

fn full_match(pattern: &str, text: &str) -> std::result::Result<bool, regex::Error> {
    let anchored = format!("^(?:{pattern})$");
    Ok(Regex::new(&anchored)?.is_match(text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{FieldSchema, GraphConfig, OutputConfig};
    use crate::typeexpr::TypeExpr;
    use indexmap::IndexMap;
    use serde_json::json;

    fn pipeline_with_repo(repo: &str) -> PipelineConfig {
        PipelineConfig {
            data: Some(crate::config::DataConfig {
                source: Some(crate::config::SourceSpec {
                    kind: crate::config::SourceKind::Hf,
                    file_path: None,
                    file_format: None,
                    repo_id: Some(repo.to_string()),
                    config_name: None,
                    splits: vec!["train".to_string()],
                    streaming: true,
                }),
                sink: None,
                transforms: Vec::new(),
            }),
            graph: GraphConfig {
                settings: Default::default(),
                nodes: IndexMap::new(),
                edges: Vec::new(),
            },
            output: OutputConfig {
                output_map: IndexMap::new(),
                generator: None,
            },
            schema: None,
            quality: None,
            models: IndexMap::new(),
        }
    }

    fn state_with(values: Value) -> RecordState {
        RecordState::new(0, values.as_object().unwrap().clone())
    }

    fn out_map(entries: Vec<(&str, OutputFieldSource)>) -> OutputConfig {
        OutputConfig {
            output_map: entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            generator: None,
        }
    }

    #[test]
    fn from_key_resolves() {
        let state = state_with(json!({"response": "X"}));
        let output = out_map(vec![("fact", OutputFieldSource::From("response".into()))]);
        let pipeline = pipeline_with_repo("r");
        let rec = build_record(&state, &output, &pipeline, &Registry::new()).unwrap();
        assert_eq!(Value::Object(rec), json!({"fact": "X"}));
    }

    #[test]
    fn from_missing_key_is_invalid() {
        let state = state_with(json!({}));
        let output = out_map(vec![("fact", OutputFieldSource::From("gone".into()))]);
        let pipeline = pipeline_with_repo("r");
        let err = build_record(&state, &output, &pipeline, &Registry::new()).unwrap_err();
        assert!(matches!(err, GraspError::OutputMap { .. }));
    }

    #[test]
    fn value_with_config_path() {
        let state = state_with(json!({}));
        let output = out_map(vec![(
            "source",
            OutputFieldSource::Value(json!("$data_config.source.repo_id")),
        )]);
        let pipeline = pipeline_with_repo("datasets-examples/doc-audio-1");
        let rec = build_record(&state, &output, &pipeline, &Registry::new()).unwrap();
        assert_eq!(rec["source"], json!("datasets-examples/doc-audio-1"));
    }

    #[test]
    fn value_with_embedded_path() {
        let state = state_with(json!({}));
        let output = out_map(vec![(
            "label",
            OutputFieldSource::Value(json!("from $data_config.source.repo_id split")),
        )]);
        let pipeline = pipeline_with_repo("acme/demo");
        let rec = build_record(&state, &output, &pipeline, &Registry::new()).unwrap();
        assert_eq!(rec["label"], json!("from acme/demo split"));
    }

    #[test]
    fn transform_applies() {
        let mut registry = Registry::new();
        registry.register_transform("t.upper", |values| {
            Ok(json!(values
                .get("word")
                .and_then(|v| v.as_str())
                .unwrap_or("")
                .to_uppercase()))
        });
        let state = state_with(json!({"word": "shout"}));
        let output = out_map(vec![("loud", OutputFieldSource::Transform("t.upper".into()))]);
        let pipeline = pipeline_with_repo("r");
        let rec = build_record(&state, &output, &pipeline, &registry).unwrap();
        assert_eq!(rec["loud"], json!("SHOUT"));
    }

    #[test]
    fn generator_overrides_record() {
        let mut registry = Registry::new();
        registry.register_generator("g.wrap", |_state, mut record| {
            record.insert("wrapped".to_string(), json!(true));
            Ok(record)
        });
        let state = state_with(json!({"a": 1}));
        let mut output = out_map(vec![("a", OutputFieldSource::From("a".into()))]);
        output.generator = Some("g.wrap".to_string());
        let pipeline = pipeline_with_repo("r");
        let rec = build_record(&state, &output, &pipeline, &registry).unwrap();
        assert_eq!(rec["wrapped"], json!(true));
        assert_eq!(rec["a"], json!(1));
    }

    fn schema_with(fields: Vec<FieldSchema>) -> SchemaConfig {
        SchemaConfig {
            schema: None,
            fields,
        }
    }

    fn int_field(name: &str, rules: Vec<FieldRule>) -> FieldSchema {
        FieldSchema {
            name: name.to_string(),
            field_type: TypeExpr::Int,
            description: None,
            rules,
        }
    }

    #[test]
    fn greater_than_is_strict() {
        let schema = schema_with(vec![int_field("id", vec![FieldRule::IsGreaterThan(99999.0)])]);
        let registry = Registry::new();

        let ok = json!({"id": 100000}).as_object().unwrap().clone();
        assert!(validate_record(&ok, Some(&schema), &registry).is_valid());

        // Boundary: 99999 is not > 99999.
        let bad = json!({"id": 99999}).as_object().unwrap().clone();
        match validate_record(&bad, Some(&schema), &registry) {
            Validation::Invalid { reasons } => {
                assert_eq!(reasons, vec!["id: 99999 not > 99999"]);
            }
            Validation::Valid => panic!("boundary must fail"),
        }
    }

    #[test]
    fn type_check_matrix() {
        let registry = Registry::new();
        // (declared type, value, ok) — worked from the type definitions.
        let cases: Vec<(&str, Value, bool)> = vec![
            ("str", json!("text"), true),
            ("str", json!(42), false),
            ("int", json!(7), true),
            ("int", json!(7.5), false),
            ("int", json!("7"), false),
            ("float", json!(7.5), true),
            ("float", json!(7), true),
            ("bool", json!(true), true),
            ("bool", json!("true"), false),
            ("list[str]", json!(["a"]), true),
            ("list[str]", json!([1]), false),
            ("list[dict[str, any]]", json!([{"role": "user"}]), true),
            ("list[dict[str, any]]", json!(["x"]), false),
            ("any", json!({"free": [1]}), true),
        ];
        for (ty, value, ok) in cases {
            let schema = schema_with(vec![FieldSchema {
                name: "f".to_string(),
                field_type: TypeExpr::parse(ty).unwrap(),
                description: None,
                rules: Vec::new(),
            }]);
            let mut rec = Map::new();
            rec.insert("f".to_string(), value.clone());
            let v = validate_record(&rec, Some(&schema), &registry);
            assert_eq!(v.is_valid(), ok, "type {ty} value {value}");
            if !ok {
                match v {
                    Validation::Invalid { reasons } => {
                        assert!(reasons[0].contains("expected"), "reasons: {reasons:?}")
                    }
                    Validation::Valid => unreachable!(),
                }
            }
        }
    }

    #[test]
    fn regex_full_match_and_non_empty() {
        let schema = schema_with(vec![
            FieldSchema {
                name: "code".to_string(),
                field_type: TypeExpr::Str,
                description: None,
                rules: vec![FieldRule::Regex("[A-Z]{3}".into())],
            },
            FieldSchema {
                name: "tags".to_string(),
                field_type: TypeExpr::parse("list[str]").unwrap(),
                description: None,
                rules: vec![FieldRule::NonEmpty(true)],
            },
        ]);
        let registry = Registry::new();
        let good = json!({"code": "ABC", "tags": ["x"]}).as_object().unwrap().clone();
        assert!(validate_record(&good, Some(&schema), &registry).is_valid());

        // Partial matches fail: the pattern must cover the whole value.
        let bad = json!({"code": "ABCD", "tags": []}).as_object().unwrap().clone();
        match validate_record(&bad, Some(&schema), &registry) {
            Validation::Invalid { reasons } => {
                assert_eq!(reasons.len(), 2);
                assert!(reasons[0].starts_with("code:"));
                assert!(reasons[1].starts_with("tags:"));
            }
            Validation::Valid => panic!(),
        }
    }

    #[test]
    fn all_failures_collected_in_field_order() {
        let schema = schema_with(vec![
            int_field("a", vec![FieldRule::IsGreaterThan(10.0)]),
            int_field("b", vec![FieldRule::IsLessThan(5.0)]),
        ]);
        let registry = Registry::new();
        let rec = json!({"a": 3, "b": 9}).as_object().unwrap().clone();
        match validate_record(&rec, Some(&schema), &registry) {
            Validation::Invalid { reasons } => {
                assert_eq!(reasons, vec!["a: 3 not > 10", "b: 9 not < 5"]);
            }
            Validation::Valid => panic!(),
        }
    }

    #[test]
    fn absent_schema_is_always_valid() {
        let rec = json!({"anything": 1}).as_object().unwrap().clone();
        assert!(validate_record(&rec, None, &Registry::new()).is_valid());
    }

    #[test]
    fn registered_validator_rejects() {
        let mut registry = Registry::new();
        registry.register_validator("v.custom", |record| {
            if record.contains_key("ok") {
                Ok(())
            } else {
                Err(vec!["missing ok marker".to_string()])
            }
        });
        let schema = SchemaConfig {
            schema: Some("v.custom".to_string()),
            fields: Vec::new(),
        };
        let good = json!({"ok": 1}).as_object().unwrap().clone();
        assert!(validate_record(&good, Some(&schema), &registry).is_valid());
        let bad = json!({}).as_object().unwrap().clone();
        assert!(!validate_record(&bad, Some(&schema), &registry).is_valid());
    }
}
