//! Prompt-template placeholder syntax.
//!
//! Placeholders are `{name}` where `name` matches `[A-Za-z_][A-Za-z0-9_]*`.
//! Literal braces are written `{{` and `}}`. A brace pair that does not wrap a
//! valid placeholder name (e.g. `{1x}` or `{a b}`) is passed through verbatim.

use std::collections::BTreeSet;

use serde_json::Value;

use crate::error::{GraspError, Result};

fn is_name_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Names of all placeholders appearing in the template.
pub fn placeholders(template: &str) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    each_token(template, |tok| {
        if let Token::Placeholder(name) = tok {
            names.insert(name.to_string());
        }
    });
    names
}

/// Substitute placeholders from `lookup`. Returns `MissingKey` on the first
/// placeholder the lookup cannot supply.
pub fn substitute(
    template: &str,
    node: &str,
    mut lookup: impl FnMut(&str) -> Option<String>,
) -> Result<String> {
    let mut out = String::with_capacity(template.len());
    let mut missing: Option<String> = None;
    each_token(template, |tok| match tok {
        Token::Literal(s) => out.push_str(s),
        Token::Placeholder(name) => match lookup(name) {
            Some(v) => out.push_str(&v),
            None => {
                if missing.is_none() {
                    missing = Some(name.to_string());
                }
            }
        },
    });
    match missing {
        Some(key) => Err(GraspError::MissingKey {
            node: node.to_string(),
            key,
        }),
        None => Ok(out),
    }
}

/// Render a state value for interpolation: strings verbatim, everything else
/// as compact JSON.
pub fn value_to_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

enum Token<'a> {
    Literal(&'a str),
    Placeholder(&'a str),
}

fn each_token<'a>(template: &'a str, mut f: impl FnMut(Token<'a>)) {
    let bytes = template.as_bytes();
    let mut i = 0;
    let mut lit_start = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' => {
                if bytes.get(i + 1) == Some(&b'{') {
                    f(Token::Literal(&template[lit_start..i]));
                    f(Token::Literal("{"));
                    i += 2;
                    lit_start = i;
                    continue;
                }
                // Try to scan a placeholder name followed by '}'.
                let rest = &template[i + 1..];
                let mut chars = rest.char_indices();
                if let Some((_, c0)) = chars.next() {
                    if is_name_start(c0) {
                        let mut end = c0.len_utf8();
                        for (off, c) in chars {
                            if is_name_char(c) {
                                end = off + c.len_utf8();
                            } else {
                                break;
                            }
                        }
                        if rest[end..].starts_with('}') {
                            f(Token::Literal(&template[lit_start..i]));
                            f(Token::Placeholder(&rest[..end]));
                            i += 1 + end + 1;
                            lit_start = i;
                            continue;
                        }
                    }
                }
                i += 1;
            }
            b'}' => {
                if bytes.get(i + 1) == Some(&b'}') {
                    f(Token::Literal(&template[lit_start..i]));
                    f(Token::Literal("}"));
                    i += 2;
                    lit_start = i;
                    continue;
                }
                i += 1;
            }
            _ => i += 1,
        }
    }
    if lit_start < template.len() {
        f(Token::Literal(&template[lit_start..]));
    }
}
