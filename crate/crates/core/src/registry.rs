//! Registry of named callables referenced by dotted names in task YAML.
//!
//! Lambdas, routers, tools, hooks, output transforms, generators, and schema
//! validators are all looked up here at compile time, so a typo fails before
//! any record is processed. The built-in set covers the callables the example
//! tasks reference; embedders can register more at startup.

use std::collections::HashMap;
use std::sync::Arc;

use serde_json::{Map, Value};

use crate::backend::ToolSpec;
use crate::error::Result;

pub type ValuesMap = Map<String, Value>;

/// Lambda: read view of state values in, map of outputs out.
pub type LambdaFn = Arc<dyn Fn(&ValuesMap) -> Result<ValuesMap> + Send + Sync>;
/// Router: state values in, path_map label out.
pub type RouterFn = Arc<dyn Fn(&ValuesMap) -> Result<String> + Send + Sync>;
/// Tool body: JSON arguments in, JSON result out.
pub type ToolFn = Arc<dyn Fn(&Value) -> Result<Value> + Send + Sync>;
/// Pre/post hook: transforms the whole values map.
pub type HookFn = Arc<dyn Fn(ValuesMap) -> Result<ValuesMap> + Send + Sync>;
/// Output transform: whole state values in, one field value out.
pub type TransformFn = Arc<dyn Fn(&ValuesMap) -> Result<Value> + Send + Sync>;
/// Custom generator: (state values, assembled record) -> final record.
pub type GeneratorFn = Arc<dyn Fn(&ValuesMap, ValuesMap) -> Result<ValuesMap> + Send + Sync>;
/// Registered record validator: Ok(()) or a list of rejection reasons.
pub type ValidatorFn = Arc<dyn Fn(&ValuesMap) -> std::result::Result<(), Vec<String>> + Send + Sync>;

#[derive(Clone)]
pub struct RegisteredTool {
    pub spec: ToolSpec,
    pub call: ToolFn,
}

#[derive(Default, Clone)]
pub struct Registry {
    lambdas: HashMap<String, LambdaFn>,
    routers: HashMap<String, RouterFn>,
    tools: HashMap<String, RegisteredTool>,
    hooks: HashMap<String, HookFn>,
    transforms: HashMap<String, TransformFn>,
    generators: HashMap<String, GeneratorFn>,
    validators: HashMap<String, ValidatorFn>,
    schemas: HashMap<String, Value>,
}

impl Registry {
    pub fn new() -> Registry {
        Registry::default()
    }

    /// Registry preloaded with the callables the shipped example tasks use.
    pub fn builtin() -> Registry {
        let mut r = Registry::new();

        // Code-validation pair used by the conditional-loop example: the
        // lambda marks a solution valid iff its is_valid input or a naive
        // check passes, the router turns that flag into an edge label.
        r.register_lambda("validators.code.check_validity", |values| {
            let solution = values.get("solution").and_then(|v| v.as_str()).unwrap_or("");
            let mut out = Map::new();
            out.insert(
                "is_valid".to_string(),
                Value::Bool(looks_like_valid_solution(solution)),
            );
            Ok(out)
        });
        r.register_router("validators.code.RouteBasedOnValidity", |values| {
            let valid = values.get("is_valid").and_then(|v| v.as_bool()).unwrap_or(false);
            Ok(if valid { "END".to_string() } else { "generate".to_string() })
        });

        r.register_tool(
            "tasks.sim.tools.search_tool.search",
            "Search a small offline corpus and return matching snippets.",
            serde_json::json!({
                "type": "object",
                "properties": {"query": {"type": "string"}},
                "required": ["query"],
            }),
            |args| {
                let query = args.get("query").and_then(|q| q.as_str()).unwrap_or("");
                Ok(serde_json::json!({
                    "results": [format!("offline result for {query:?}")],
                }))
            },
        );
        r.register_tool(
            "tasks.sim.tools.calculator_tool.calculate",
            "Evaluate a basic arithmetic expression.",
            serde_json::json!({
                "type": "object",
                "properties": {"expression": {"type": "string"}},
                "required": ["expression"],
            }),
            |args| {
                let expr = args.get("expression").and_then(|e| e.as_str()).unwrap_or("");
                match eval_arithmetic(expr) {
                    Some(v) => Ok(serde_json::json!({"value": v})),
                    None => Ok(serde_json::json!({"error": "could not evaluate expression"})),
                }
            },
        );

        // Instruction-evolution recipe support: strategy label routing and
        // branch-output coalescing.
        r.register_router("evolve.RouteStrategy", |values| {
            match values.get("strategy").and_then(|v| v.as_str()) {
                Some(label) => Ok(label.to_string()),
                None => Err(crate::error::GraspError::Other(
                    "no strategy value to route on".to_string(),
                )),
            }
        });
        r.register_lambda("evolve.pick_evolved", |values| {
            let evolved = values
                .get("evolved_depth")
                .or_else(|| values.get("evolved_breadth"))
                .cloned()
                .unwrap_or(Value::Null);
            let mut out = Map::new();
            out.insert("evolved".to_string(), evolved);
            Ok(out)
        });

        r.register_hook("hooks.identity", Ok);
        r.register_transform("transforms.upper", |values| {
            let joined = values
                .values()
                .filter_map(|v| v.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            Ok(Value::String(joined.to_uppercase()))
        });
        r
    }

    pub fn register_lambda(
        &mut self,
        name: &str,
        f: impl Fn(&ValuesMap) -> Result<ValuesMap> + Send + Sync + 'static,
    ) {
        self.lambdas.insert(name.to_string(), Arc::new(f));
    }

    pub fn register_router(
        &mut self,
        name: &str,
        f: impl Fn(&ValuesMap) -> Result<String> + Send + Sync + 'static,
    ) {
        self.routers.insert(name.to_string(), Arc::new(f));
    }

    pub fn register_tool(
        &mut self,
        name: &str,
        description: &str,
        parameters: Value,
        f: impl Fn(&Value) -> Result<Value> + Send + Sync + 'static,
    ) {
        // Wire name is the last dotted segment; unique within a node's list.
        let short = name.rsplit('.').next().unwrap_or(name).to_string();
        self.tools.insert(
            name.to_string(),
            RegisteredTool {
                spec: ToolSpec {
                    name: short,
                    description: description.to_string(),
                    parameters,
                },
                call: Arc::new(f),
            },
        );
    }

    pub fn register_hook(
        &mut self,
        name: &str,
        f: impl Fn(ValuesMap) -> Result<ValuesMap> + Send + Sync + 'static,
    ) {
        self.hooks.insert(name.to_string(), Arc::new(f));
    }

    pub fn register_transform(
        &mut self,
        name: &str,
        f: impl Fn(&ValuesMap) -> Result<Value> + Send + Sync + 'static,
    ) {
        self.transforms.insert(name.to_string(), Arc::new(f));
    }

    pub fn register_generator(
        &mut self,
        name: &str,
        f: impl Fn(&ValuesMap, ValuesMap) -> Result<ValuesMap> + Send + Sync + 'static,
    ) {
        self.generators.insert(name.to_string(), Arc::new(f));
    }

    pub fn register_validator(
        &mut self,
        name: &str,
        f: impl Fn(&ValuesMap) -> std::result::Result<(), Vec<String>> + Send + Sync + 'static,
    ) {
        self.validators.insert(name.to_string(), Arc::new(f));
    }

    /// Register a named JSON schema for structured output.
    pub fn register_schema(&mut self, name: &str, schema: Value) {
        self.schemas.insert(name.to_string(), schema);
    }

    pub fn lambda(&self, name: &str) -> Option<LambdaFn> {
        self.lambdas.get(name).cloned()
    }
    pub fn router(&self, name: &str) -> Option<RouterFn> {
        self.routers.get(name).cloned()
    }
    pub fn tool(&self, name: &str) -> Option<RegisteredTool> {
        self.tools.get(name).cloned()
    }
    pub fn hook(&self, name: &str) -> Option<HookFn> {
        self.hooks.get(name).cloned()
    }
    pub fn transform(&self, name: &str) -> Option<TransformFn> {
        self.transforms.get(name).cloned()
    }
    pub fn generator(&self, name: &str) -> Option<GeneratorFn> {
        self.generators.get(name).cloned()
    }
    pub fn validator(&self, name: &str) -> Option<ValidatorFn> {
        self.validators.get(name).cloned()
    }
    pub fn schema(&self, name: &str) -> Option<Value> {
        self.schemas.get(name).cloned()
    }
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry")
            .field("lambdas", &self.lambdas.keys())
            .field("routers", &self.routers.keys())
            .field("tools", &self.tools.keys())
            .field("hooks", &self.hooks.keys())
            .field("transforms", &self.transforms.keys())
            .field("generators", &self.generators.keys())
            .field("validators", &self.validators.keys())
            .field("schemas", &self.schemas.keys())
            .finish()
    }
}

fn looks_like_valid_solution(solution: &str) -> bool {
    !solution.trim().is_empty() && !solution.to_lowercase().contains("invalid")
}

/// Left-to-right evaluation of `a op b op c ...` with +-*/ only.
fn eval_arithmetic(expr: &str) -> Option<f64> {
    let tokens: Vec<&str> = expr.split_whitespace().collect();
    if tokens.is_empty() {
        return None;
    }
    let mut acc: f64 = tokens[0].parse().ok()?;
    let mut i = 1;
    while i + 1 < tokens.len() {
        let rhs: f64 = tokens[i + 1].parse().ok()?;
        match tokens[i] {
            "+" => acc += rhs,
            "-" => acc -= rhs,
            "*" => acc *= rhs,
            "/" => acc /= rhs,
            _ => return None,
        }
        i += 2;
    }
    Some(acc)
}
