//! Minimal JSON-schema construction and validation for structured output.
//!
//! Covers the subset structured-output specs can express: object properties
//! with scalar / array / object types, `required`, `items`, and
//! `additionalProperties`. Validation returns the first mismatch as a message
//! suitable for feeding back to the model.

use serde_json::{Map, Value};

use crate::config::FieldSchema;

/// Build a JSON-schema document from inline structured-output fields.
pub fn schema_from_fields(fields: &[FieldSchema]) -> Value {
    let mut props = Map::new();
    let mut required = Vec::new();
    for f in fields {
        let mut prop = match f.field_type.to_json_schema() {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        if let Some(d) = &f.description {
            prop.insert("description".to_string(), Value::String(d.clone()));
        }
        props.insert(f.name.clone(), Value::Object(prop));
        required.push(Value::String(f.name.clone()));
    }
    let mut out = Map::new();
    out.insert("type".to_string(), Value::String("object".to_string()));
    out.insert("properties".to_string(), Value::Object(props));
    out.insert("required".to_string(), Value::Array(required));
    Value::Object(out)
}

/// Validate `value` against the schema subset. `Err` carries a path-qualified
/// description of the first violation.
pub fn validate_against_schema(value: &Value, schema: &Value) -> Result<(), String> {
    validate_at(value, schema, "$")
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_i64() || n.is_u64() => "integer",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn validate_at(value: &Value, schema: &Value, path: &str) -> Result<(), String> {
    let Some(schema_obj) = schema.as_object() else {
        return Ok(());
    };
    if let Some(ty) = schema_obj.get("type").and_then(|t| t.as_str()) {
        let ok = match ty {
            "string" => value.is_string(),
            "integer" => value.as_i64().is_some() || value.as_u64().is_some(),
            "number" => value.is_number(),
            "boolean" => value.is_boolean(),
            "array" => value.is_array(),
            "object" => value.is_object(),
            "null" => value.is_null(),
            _ => true,
        };
        if !ok {
            return Err(format!("{path}: expected {ty}, got {}", type_name(value)));
        }
    }
    if let Some(props) = schema_obj.get("properties").and_then(|p| p.as_object()) {
        let obj = value.as_object();
        if let Some(required) = schema_obj.get("required").and_then(|r| r.as_array()) {
            for name in required.iter().filter_map(|n| n.as_str()) {
                if obj.map_or(true, |o| !o.contains_key(name)) {
                    return Err(format!("{path}: missing required property {name:?}"));
                }
            }
        }
        if let Some(obj) = obj {
            for (name, sub) in props {
                if let Some(v) = obj.get(name) {
                    validate_at(v, sub, &format!("{path}.{name}"))?;
                }
            }
            match schema_obj.get("additionalProperties") {
                Some(Value::Bool(false)) => {
                    for key in obj.keys() {
                        if !props.contains_key(key) {
                            return Err(format!("{path}: unexpected property {key:?}"));
                        }
                    }
                }
                Some(extra_schema @ Value::Object(_)) => {
                    for (key, v) in obj {
                        if !props.contains_key(key) {
                            validate_at(v, extra_schema, &format!("{path}.{key}"))?;
                        }
                    }
                }
                _ => {}
            }
        }
    } else if let Some(extra_schema) = schema_obj.get("additionalProperties") {
        if let (Some(obj), true) = (value.as_object(), extra_schema.is_object()) {
            for (key, v) in obj {
                validate_at(v, extra_schema, &format!("{path}.{key}"))?;
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema_obj.get("items"), value.as_array()) {
        for (i, v) in arr.iter().enumerate() {
            validate_at(v, items, &format!("{path}[{i}]"))?;
        }
    }
    Ok(())
}
