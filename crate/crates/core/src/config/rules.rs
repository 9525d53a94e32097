//! Rule/type compatibility checks for schema fields.
//!
//! Numeric comparisons apply to `int`/`float` fields only, `regex` and
//! `non_empty` to `str` (non_empty also to lists). Violations are
//! diagnostics, not errors.

use crate::diag::Diagnostic;
use crate::typeexpr::TypeExpr;

use super::{FieldRule, FieldSchema, SchemaConfig};

/// Empty iff every rule is type-compatible with its field's declared type.
pub fn validate_schema_rules(schema: &SchemaConfig) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for (i, field) in schema.fields.iter().enumerate() {
        let base = format!("schema_config.fields[{i}]");
        diags.extend(check_field_rules(field, &base));
    }
    diags
}

pub(crate) fn check_field_rules(field: &FieldSchema, base: &str) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for rule in &field.rules {
        let compatible = match rule {
            FieldRule::IsGreaterThan(_) | FieldRule::IsLessThan(_) => field.field_type.is_numeric(),
            FieldRule::Regex(_) => field.field_type == TypeExpr::Str,
            FieldRule::NonEmpty(_) => matches!(
                field.field_type,
                TypeExpr::Str | TypeExpr::List(_) | TypeExpr::Dict(_, _) | TypeExpr::Any
            ),
        };
        if !compatible {
            let kind = match rule {
                FieldRule::IsGreaterThan(_) | FieldRule::IsLessThan(_) => "numeric rule",
                FieldRule::Regex(_) => "regex rule",
                FieldRule::NonEmpty(_) => "non_empty rule",
            };
            diags.push(Diagnostic::error(
                format!("{base}.{}", rule.name()),
                format!(
                    "{kind} on {} field {:?}",
                    field.field_type, field.name
                ),
            ));
        }
        if let FieldRule::Regex(pattern) = rule {
            if let Err(e) = regex_lite_check(pattern) {
                diags.push(Diagnostic::error(
                    format!("{base}.regex"),
                    format!("invalid regex: {e}"),
                ));
            }
        }
    }
    diags
}

// Defer full regex compilation to the validation stage; here just reject the
// one structural error that is cheap to spot (unbalanced groups).
fn regex_lite_check(pattern: &str) -> Result<(), String> {
    let mut depth: i32 = 0;
    let mut escaped = false;
    for c in pattern.chars() {
        if escaped {
            escaped = false;
            continue;
        }
        match c {
            '\\' => escaped = true,
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return Err("unbalanced parenthesis".to_string());
                }
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err("unbalanced parenthesis".to_string());
    }
    Ok(())
}
