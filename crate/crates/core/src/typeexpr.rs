//! Field type expressions used by schema validation and structured output.
//!
//! The grammar covers `str`, `int`, `float`, `bool`, `any`, `list[T]` and
//! `dict[K, V]`, nested arbitrarily (e.g. `list[dict[str, any]]`).

use std::fmt;

use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TypeExpr {
    Str,
    Int,
    Float,
    Bool,
    Any,
    List(Box<TypeExpr>),
    Dict(Box<TypeExpr>, Box<TypeExpr>),
}

impl TypeExpr {
    /// Parse a type expression like `list[dict[str, any]]`.
    pub fn parse(input: &str) -> Result<TypeExpr, String> {
        let mut p = Parser {
            src: input,
            pos: 0,
        };
        let t = p.parse_type()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(format!("trailing input after type expression: {:?}", &p.src[p.pos..]));
        }
        Ok(t)
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, TypeExpr::Int | TypeExpr::Float)
    }

    /// Whether a JSON value inhabits this type. `int` accepts only integral
    /// numbers, `float` accepts any number, `any` accepts everything.
    pub fn matches(&self, v: &Value) -> bool {
        match self {
            TypeExpr::Any => true,
            TypeExpr::Str => v.is_string(),
            TypeExpr::Bool => v.is_boolean(),
            TypeExpr::Int => v.as_i64().is_some() || v.as_u64().is_some(),
            TypeExpr::Float => v.is_number(),
            TypeExpr::List(inner) => match v {
                Value::Array(items) => items.iter().all(|it| inner.matches(it)),
                _ => false,
            },
            TypeExpr::Dict(k, val) => match v {
                Value::Object(map) => {
                    // JSON keys are always strings; a non-str key type only
                    // admits objects via `any`.
                    let keys_ok = matches!(**k, TypeExpr::Str | TypeExpr::Any);
                    keys_ok && map.values().all(|it| val.matches(it))
                }
                _ => false,
            },
        }
    }

    /// JSON-schema `type` fragment for this expression.
    pub fn to_json_schema(&self) -> Value {
        match self {
            TypeExpr::Str => serde_json::json!({"type": "string"}),
            TypeExpr::Int => serde_json::json!({"type": "integer"}),
            TypeExpr::Float => serde_json::json!({"type": "number"}),
            TypeExpr::Bool => serde_json::json!({"type": "boolean"}),
            TypeExpr::Any => serde_json::json!({}),
            TypeExpr::List(inner) => serde_json::json!({"type": "array", "items": inner.to_json_schema()}),
            TypeExpr::Dict(_, val) => serde_json::json!({
                "type": "object",
                "additionalProperties": val.to_json_schema(),
            }),
        }
    }
}

impl fmt::Display for TypeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeExpr::Str => write!(f, "str"),
            TypeExpr::Int => write!(f, "int"),
            TypeExpr::Float => write!(f, "float"),
            TypeExpr::Bool => write!(f, "bool"),
            TypeExpr::Any => write!(f, "any"),
            TypeExpr::List(t) => write!(f, "list[{t}]"),
            TypeExpr::Dict(k, v) => write!(f, "dict[{k}, {v}]"),
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(' ') {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: char) -> Result<(), String> {
        self.skip_ws();
        if self.src[self.pos..].starts_with(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            Err(format!("expected {c:?} at offset {} in type expression", self.pos))
        }
    }

    fn parse_type(&mut self) -> Result<TypeExpr, String> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let word_len = rest.chars().take_while(|c| c.is_ascii_alphanumeric()).count();
        let word = &rest[..word_len];
        self.pos += word_len;
        match word {
            "str" | "string" => Ok(TypeExpr::Str),
            "int" => Ok(TypeExpr::Int),
            "float" => Ok(TypeExpr::Float),
            "bool" => Ok(TypeExpr::Bool),
            "any" => Ok(TypeExpr::Any),
            "list" => {
                self.eat('[')?;
                let inner = self.parse_type()?;
                self.eat(']')?;
                Ok(TypeExpr::List(Box::new(inner)))
            }
            "dict" => {
                self.eat('[')?;
                let k = self.parse_type()?;
                self.eat(',')?;
                let v = self.parse_type()?;
                self.eat(']')?;
                Ok(TypeExpr::Dict(Box::new(k), Box::new(v)))
            }
            "" => Err("empty type expression".to_string()),
            other => Err(format!("unknown type {other:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn parses_nested_types() {
        let t = TypeExpr::parse("list[dict[str, any]]").unwrap();
        assert_eq!(
            t,
            TypeExpr::List(Box::new(TypeExpr::Dict(
                Box::new(TypeExpr::Str),
                Box::new(TypeExpr::Any)
            )))
        );
        assert_eq!(t.to_string(), "list[dict[str, any]]");
    }

    #[test]
    fn rejects_garbage() {
        assert!(TypeExpr::parse("lst").is_err());
        assert!(TypeExpr::parse("list[str").is_err());
        assert!(TypeExpr::parse("int]").is_err());
    }

    #[test]
    fn matching_scalars() {
        assert!(TypeExpr::Int.matches(&json!(3)));
        assert!(!TypeExpr::Int.matches(&json!(3.5)));
        assert!(TypeExpr::Float.matches(&json!(3)));
        assert!(TypeExpr::Float.matches(&json!(3.5)));
        assert!(TypeExpr::Str.matches(&json!("x")));
        assert!(!TypeExpr::Str.matches(&json!(42)));
        assert!(TypeExpr::Bool.matches(&json!(true)));
    }

    #[test]
    fn matching_containers() {
        let conv = TypeExpr::parse("list[dict[str, any]]").unwrap();
        assert!(conv.matches(&json!([{"role": "user", "content": "hi"}])));
        assert!(conv.matches(&json!([])));
        assert!(!conv.matches(&json!(["plain string"])));
        let tags = TypeExpr::parse("list[str]").unwrap();
        assert!(tags.matches(&json!(["a", "b"])));
        assert!(!tags.matches(&json!(["a", 1])));
    }

    #[test]
    fn any_matches_everything() {
        for v in [json!(null), json!(1), json!("s"), json!([1, "x"]), json!({"k": []})] {
            assert!(TypeExpr::Any.matches(&v));
        }
    }
}
