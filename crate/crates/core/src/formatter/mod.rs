//! Merges fragments into one namespace and reshapes them into a validated
//! metadata document following a [`StructuringSchema`].
//!
//! Directive semantics per leaf:
//! - `source`: copy the value found at a `rule/pointer` path;
//! - `compute`: evaluate an arithmetic expression, always yielding a Float;
//! - `unit`: wrap the leaf as `{"value": v, "unit": u}`;
//! - `optional`: omit the leaf instead of failing when a reference is missing.
//!
//! Anything not referenced by a directive is dropped.

pub mod expr;
pub mod schema;

use indexmap::IndexMap;
use thiserror::Error;

use crate::model::{Fragment, Map, StructuredMetadata, Value};
pub use expr::{BinOp, ComputeExpr, EvalError, Expr, ExprSyntaxError, PathExpr, PathSyntaxError};
pub use schema::{
    Directive, JsonType, NodeKind, SchemaDiagnostic, SchemaError, SchemaNode, Selection,
    StructuringSchema, DIRECTIVE_KEY,
};
use schema::escape;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("field {field}: source {expr} is missing")]
    MissingSource { field: String, expr: String },
    #[error("schema validation failed at {path}: {message}")]
    SchemaValidation { path: String, message: String },
    #[error("field {field}: {message}")]
    Compute { field: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    value: Value,
    multi: bool,
}

/// Fragment bodies keyed by rule name. A rule that matched several files
/// holds a List of bodies in work-list order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FragmentNamespace {
    slots: IndexMap<String, Slot>,
}

impl FragmentNamespace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_fragments(fragments: impl IntoIterator<Item = Fragment>) -> Self {
        let mut grouped: IndexMap<String, Vec<Value>> = IndexMap::new();
        for f in fragments {
            grouped.entry(f.rule).or_default().push(f.body);
        }
        let mut ns = Self::new();
        for (rule, mut bodies) in grouped {
            if bodies.len() == 1 {
                ns.insert_single(&rule, bodies.pop().unwrap());
            } else {
                ns.insert_multi(&rule, bodies);
            }
        }
        ns
    }

    pub fn insert_single(&mut self, rule: &str, body: Value) {
        self.slots.insert(rule.to_string(), Slot { value: body, multi: false });
    }

    pub fn insert_multi(&mut self, rule: &str, bodies: Vec<Value>) {
        self.slots.insert(
            rule.to_string(),
            Slot {
                value: Value::List(bodies),
                multi: true,
            },
        );
    }

    pub fn get_rule(&self, rule: &str) -> Option<&Value> {
        self.slots.get(rule).map(|s| &s.value)
    }

    /// Resolves a path expression. Multi-file rules must be addressed with
    /// a leading index (`rule/<i>/...`).
    pub fn resolve(&self, path: &PathExpr) -> Option<&Value> {
        let slot = self.slots.get(&path.rule)?;
        if slot.multi {
            let first = path.pointer.first()?;
            crate::model::parse_index(first)?;
        }
        slot.value.get_segments(&path.pointer)
    }

    /// The namespace itself as a document (passthrough output).
    pub fn to_value(&self) -> Value {
        Value::Map(
            self.slots
                .iter()
                .map(|(k, s)| (k.clone(), s.value.clone()))
                .collect(),
        )
    }
}

/// Evaluates a compute expression over the namespace.
pub fn eval_compute(expr: &ComputeExpr, ns: &FragmentNamespace) -> Result<f64, EvalError> {
    expr.eval(|path| match ns.resolve(path) {
        None => Err(EvalError::Missing(path.to_string())),
        Some(v) => v.as_f64().ok_or_else(|| {
            EvalError::Compute(format!(
                "reference ${{{path}}} is {}, not a number",
                v.kind_name()
            ))
        }),
    })
}

/// Builds and validates the structured document for `ns`.
pub fn assemble(ns: &FragmentNamespace, schema: &StructuringSchema) -> Result<StructuredMetadata, FormatError> {
    let body = build_node(ns, schema.root(), "")?.unwrap_or_else(|| Value::Map(Map::new()));
    validate(&body, schema)?;
    Ok(StructuredMetadata::new(body, schema.id()))
}

fn build_node(ns: &FragmentNamespace, node: &SchemaNode, field: &str) -> Result<Option<Value>, FormatError> {
    match &node.kind {
        NodeKind::Object { properties, .. } => {
            let mut out = Map::new();
            for (name, child) in properties {
                let child_field = format!("{field}/{}", escape(name));
                if let Some(v) = build_node(ns, child, &child_field)? {
                    out.insert(name.clone(), v);
                }
            }
            Ok(Some(Value::Map(out)))
        }
        NodeKind::Leaf(d) => {
            let missing = |expr: String| {
                if d.optional {
                    Ok(None)
                } else {
                    Err(FormatError::MissingSource {
                        field: field.to_string(),
                        expr,
                    })
                }
            };
            let value = match &d.selection {
                Selection::Source(path) => match ns.resolve(path) {
                    Some(v) => v.clone(),
                    None => return missing(path.to_string()),
                },
                Selection::Compute(expr) => match eval_compute(expr, ns) {
                    Ok(f) => Value::Float(f),
                    Err(EvalError::Missing(p)) => return missing(p),
                    Err(EvalError::Compute(message)) => {
                        return Err(FormatError::Compute {
                            field: field.to_string(),
                            message,
                        })
                    }
                },
            };
            Ok(Some(match &d.unit {
                Some(unit) => wrap_unit(value, unit),
                None => value,
            }))
        }
    }
}

fn wrap_unit(value: Value, unit: &str) -> Value {
    let mut m = Map::new();
    m.insert("value".into(), value);
    m.insert("unit".into(), Value::Text(unit.to_string()));
    Value::Map(m)
}

/// Checks `body` against the schema's shape. Reports the first failure in
/// schema property order.
pub fn validate(body: &Value, schema: &StructuringSchema) -> Result<(), FormatError> {
    validate_node(body, schema.root(), "")
}

fn fail(path: &str, message: impl Into<String>) -> FormatError {
    FormatError::SchemaValidation {
        path: if path.is_empty() { "/".into() } else { path.to_string() },
        message: message.into(),
    }
}

fn check_type(v: &Value, ty: Option<JsonType>, path: &str) -> Result<(), FormatError> {
    if let Some(ty) = ty {
        if !ty.accepts(v) {
            return Err(fail(path, format!("expected {}, got {}", ty.as_str(), v.kind_name())));
        }
    }
    if !v.all_floats_finite() {
        return Err(fail(path, "non-finite number"));
    }
    Ok(())
}

fn validate_node(body: &Value, node: &SchemaNode, path: &str) -> Result<(), FormatError> {
    match &node.kind {
        NodeKind::Object { properties, required } => {
            let Some(m) = body.as_map() else {
                return Err(fail(path, format!("expected object, got {}", body.kind_name())));
            };
            for (name, child) in properties {
                let child_path = format!("{path}/{}", escape(name));
                match m.get(name) {
                    Some(v) => validate_node(v, child, &child_path)?,
                    None if required.contains(name) => {
                        return Err(fail(&child_path, "required property is missing"))
                    }
                    None => {}
                }
            }
            if !body.all_floats_finite() {
                return Err(fail(path, "non-finite number"));
            }
            Ok(())
        }
        NodeKind::Leaf(d) => match &d.unit {
            None => check_type(body, node.ty, path),
            Some(unit) => {
                let wrapped = body.as_map().and_then(|m| {
                    let value = m.get("value")?;
                    (m.len() == 2 && m.get("unit")?.as_str() == Some(unit)).then_some(value)
                });
                match wrapped {
                    Some(v) => check_type(v, node.ty, &format!("{path}/value")),
                    None => Err(fail(path, format!("expected {{\"value\", \"unit\": {unit:?}}} wrapper"))),
                }
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parsers::parse_json;
    use proptest::prelude::*;

    fn json(text: &str) -> Value {
        parse_json(text.as_bytes()).unwrap()
    }

    fn schema(text: &str) -> StructuringSchema {
        StructuringSchema::from_value(&json(text)).unwrap()
    }

    fn fixture_ns() -> FragmentNamespace {
        let mut ns = FragmentNamespace::new();
        ns.insert_single("config", json(r#"{"procs":4,"threads":4,"sim_time":10.0}"#));
        ns.insert_single("time", json(r#"{"real":120.0}"#));
        ns
    }

    fn leaf(directive: &str) -> StructuringSchema {
        schema(&format!(r#"{{"type":"object","properties":{{"f":{{"x-archivist":{directive}}}}}}}"#))
    }

    fn field(meta: &StructuredMetadata) -> &Value {
        meta.body.get("f").unwrap().unwrap()
    }

    #[test]
    fn virtual_processes_product() {
        let m = assemble(&fixture_ns(), &leaf(r#"{"compute":"${config/procs} * ${config/threads}"}"#)).unwrap();
        assert_eq!(field(&m), &Value::Float(4.0 * 4.0));
        assert_eq!(field(&m), &Value::Float(16.0));
    }

    #[test]
    fn real_time_factor_ratio() {
        let m = assemble(&fixture_ns(), &leaf(r#"{"compute":"${time/real} / ${config/sim_time}"}"#)).unwrap();
        assert_eq!(field(&m), &Value::Float(120.0 / 10.0));
        assert_eq!(field(&m), &Value::Float(12.0));
    }

    #[test]
    fn unit_wrapping() {
        let m = assemble(&fixture_ns(), &leaf(r#"{"source":"time/real","unit":"s"}"#)).unwrap();
        let mut want = Map::new();
        want.insert("value".into(), Value::Float(120.0));
        want.insert("unit".into(), Value::Text("s".into()));
        assert_eq!(field(&m), &Value::Map(want));
    }

    #[test]
    fn optional_missing_is_omitted() {
        let s = schema(
            r#"{"type":"object","properties":{
                "step":{"type":"number","x-archivist":{"source":"config/step_size","optional":true}},
                "procs":{"type":"integer","x-archivist":{"source":"config/procs"}}}}"#,
        );
        let m = assemble(&fixture_ns(), &s).unwrap();
        assert_eq!(m.body, json(r#"{"procs":4}"#));
        validate(&m.body, &s).unwrap();
    }

    #[test]
    fn missing_source_names_path() {
        let err = assemble(&fixture_ns(), &leaf(r#"{"source":"config/step_size"}"#)).unwrap_err();
        assert_eq!(
            err,
            FormatError::MissingSource {
                field: "/f".into(),
                expr: "config/step_size".into()
            }
        );
        let err = assemble(&fixture_ns(), &leaf(r#"{"compute":"${nope/x} + 1"}"#)).unwrap_err();
        assert!(matches!(err, FormatError::MissingSource { expr, .. } if expr == "nope/x"));
    }

    #[test]
    fn compute_errors() {
        let mut ns = FragmentNamespace::new();
        ns.insert_single("config", json(r#"{"n":0,"name":"x","flag":true}"#));
        for expr in ["1 / ${config/n}", "${config/name} * 2", "${config/flag} + 1"] {
            let err = assemble(&ns, &leaf(&format!(r#"{{"compute":"{expr}"}}"#))).unwrap_err();
            assert!(matches!(err, FormatError::Compute { .. }), "{expr}: {err:?}");
        }
    }

    #[test]
    fn eval_compute_examples() {
        let e = ComputeExpr::parse("2 + 3 * 4").unwrap();
        assert_eq!(eval_compute(&e, &FragmentNamespace::new()), Ok(14.0));
        let mut ns = FragmentNamespace::new();
        ns.insert_single("time", json(r#"{"real":83.45}"#));
        ns.insert_single("config", json(r#"{"sim_time":10.0}"#));
        let e = ComputeExpr::parse("${time/real} / ${config/sim_time}").unwrap();
        assert_eq!(eval_compute(&e, &ns), Ok(83.45 / 10.0));
    }

    #[test]
    fn type_mismatch_fails_validation() {
        let s = schema(r#"{"type":"object","properties":{"p":{"type":"string","x-archivist":{"source":"config/procs"}}}}"#);
        let err = assemble(&fixture_ns(), &s).unwrap_err();
        assert!(matches!(err, FormatError::SchemaValidation { path, .. } if path == "/p"));
    }

    #[test]
    fn multi_file_rules_need_an_index() {
        let mut ns = FragmentNamespace::new();
        ns.insert_multi("logs", vec![json(r#"{"wall":1.5}"#), json(r#"{"wall":2.5}"#)]);
        let m = assemble(&ns, &leaf(r#"{"source":"logs/1/wall"}"#)).unwrap();
        assert_eq!(field(&m), &Value::Float(2.5));
        let err = assemble(&ns, &leaf(r#"{"source":"logs/wall"}"#)).unwrap_err();
        assert!(matches!(err, FormatError::MissingSource { .. }));
        let from = FragmentNamespace::from_fragments(vec![
            Fragment { rule: "a".into(), path: "x".into(), body: Value::Integer(1) },
            Fragment { rule: "b".into(), path: "y".into(), body: Value::Integer(2) },
            Fragment { rule: "a".into(), path: "z".into(), body: Value::Integer(3) },
        ]);
        assert_eq!(from.to_value(), json(r#"{"a":[1,3],"b":2}"#));
    }

    #[test]
    fn nested_objects_and_discard() {
        let s = schema(
            r#"{"type":"object","properties":{"run":{"type":"object","properties":{
                "procs":{"x-archivist":{"source":"config/procs"}}}}}}"#,
        );
        let m = assemble(&fixture_ns(), &s).unwrap();
        assert_eq!(m.body, json(r#"{"run":{"procs":4}}"#));
        assert_eq!(m.schema_id, s.id());
    }

    #[test]
    fn validate_examples() {
        let s = schema(r#"{"type":"object","properties":{"a":{"type":"integer","x-archivist":{"source":"c/a"}}},"required":["a"]}"#);
        validate(&json(r#"{"a":1}"#), &s).unwrap();
        assert_eq!(
            validate(&json("{}"), &s),
            Err(fail("/a", "required property is missing"))
        );
        let s = schema(r#"{"type":"object","properties":{"a":{"type":"number","x-archivist":{"source":"c/a"}}}}"#);
        assert!(matches!(validate(&json(r#"{"a":"x"}"#), &s), Err(FormatError::SchemaValidation { path, .. }) if path == "/a"));
        assert!(validate(&Value::Integer(1), &s).is_err());
        let mut bad = Map::new();
        bad.insert("a".into(), Value::Float(f64::NAN));
        assert!(validate(&Value::Map(bad), &s).is_err());
    }

    #[test]
    fn validate_reports_first_failure_in_schema_order() {
        let s = schema(
            r#"{"type":"object","properties":{
                "x":{"type":"string","x-archivist":{"source":"c/x"}},
                "y":{"type":"string","x-archivist":{"source":"c/y"}}},"required":["x","y"]}"#,
        );
        let err = validate(&json(r#"{"y":1}"#), &s).unwrap_err();
        assert!(matches!(err, FormatError::SchemaValidation { path, .. } if path == "/x"));
    }

    /// Shunting-yard to postfix, then a stack machine. Shares no code with
    /// the recursive-descent evaluator under test.
    fn postfix_oracle(text: &str, vars: &std::collections::HashMap<String, f64>) -> Option<f64> {
        #[derive(Debug, Clone)]
        enum Tok {
            Num(f64),
            Op(char),
            Open,
            Close,
        }
        let chars: Vec<char> = text.chars().collect();
        let mut toks = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            match c {
                ' ' => i += 1,
                '(' => { toks.push(Tok::Open); i += 1 }
                ')' => { toks.push(Tok::Close); i += 1 }
                '+' | '-' | '*' | '/' => { toks.push(Tok::Op(c)); i += 1 }
                '$' => {
                    let end = i + chars[i..].iter().position(|&c| c == '}').unwrap();
                    let name: String = chars[i + 2..end].iter().collect();
                    toks.push(Tok::Num(*vars.get(&name)?));
                    i = end + 1;
                }
                _ => {
                    let start = i;
                    while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                        i += 1;
                    }
                    toks.push(Tok::Num(chars[start..i].iter().collect::<String>().parse().unwrap()));
                }
            }
        }
        let prec = |op: char| if op == '+' || op == '-' { 1 } else { 2 };
        let mut output = Vec::new();
        let mut stack: Vec<Tok> = Vec::new();
        for tok in toks {
            match tok {
                Tok::Num(_) => output.push(tok),
                Tok::Op(op) => {
                    while let Some(Tok::Op(top)) = stack.last() {
                        if prec(*top) >= prec(op) {
                            output.push(stack.pop().unwrap());
                        } else {
                            break;
                        }
                    }
                    stack.push(tok);
                }
                Tok::Open => stack.push(tok),
                Tok::Close => {
                    while let Some(top) = stack.pop() {
                        if matches!(top, Tok::Open) {
                            break;
                        }
                        output.push(top);
                    }
                }
            }
        }
        while let Some(top) = stack.pop() {
            output.push(top);
        }
        let mut values: Vec<f64> = Vec::new();
        for tok in output {
            match tok {
                Tok::Num(n) => values.push(n),
                Tok::Op(op) => {
                    let b = values.pop()?;
                    let a = values.pop()?;
                    let r = match op {
                        '+' => a + b,
                        '-' => a - b,
                        '*' => a * b,
                        _ => {
                            if b == 0.0 {
                                return None;
                            }
                            a / b
                        }
                    };
                    if !r.is_finite() {
                        return None;
                    }
                    values.push(r);
                }
                _ => unreachable!(),
            }
        }
        values.pop()
    }

    fn arb_expr() -> impl Strategy<Value = String> {
        let leaf = prop_oneof![
            (0u32..100).prop_map(|n| n.to_string()),
            (0u32..1000, 1u32..100).prop_map(|(a, b)| format!("{a}.{b}")),
            (0usize..5).prop_map(|k| format!("${{ns/k{k}}}")),
        ];
        leaf.prop_recursive(5, 40, 2, |inner| {
            (inner.clone(), prop::sample::select(vec!['+', '-', '*', '/']), inner, any::<bool>())
                .prop_map(|(a, op, b, paren)| {
                    let s = format!("{a} {op} {b}");
                    if paren { format!("({s})") } else { s }
                })
        })
    }

    proptest::proptest! {
        #[test]
        fn eval_matches_postfix_oracle(
            text in arb_expr(),
            vals in proptest::collection::vec(
                proptest::prop_oneof![
                    (-50i64..50).prop_map(Value::Integer),
                    (-1e3f64..1e3).prop_map(Value::Float),
                ],
                5,
            ),
        ) {
            let mut ns_map = Map::new();
            let mut vars = std::collections::HashMap::new();
            for (k, v) in vals.iter().enumerate() {
                ns_map.insert(format!("k{k}"), v.clone());
                vars.insert(format!("ns/k{k}"), v.as_f64().unwrap());
            }
            let mut ns = FragmentNamespace::new();
            ns.insert_single("ns", Value::Map(ns_map));
            let expr = ComputeExpr::parse(&text).unwrap();
            let got = eval_compute(&expr, &ns).ok();
            let want = postfix_oracle(&text, &vars);
            prop_assert_eq!(got.map(f64::to_bits), want.map(f64::to_bits), "{}", text);
        }

        #[test]
        fn assemble_is_deterministic_and_self_validating(
            procs in 1i64..1000,
            threads in 1i64..64,
            real in 0.0f64..1e5,
            sim in 0.1f64..1e3,
        ) {
            let mut ns = FragmentNamespace::new();
            ns.insert_single("config", json(&format!(r#"{{"procs":{procs},"threads":{threads},"sim_time":{sim:?},"noise":"n"}}"#)));
            ns.insert_single("time", json(&format!(r#"{{"real":{real:?},"user":1.0}}"#)));
            let s = schema(
                r#"{"type":"object","properties":{
                    "vp":{"type":"number","x-archivist":{"compute":"${config/procs} * ${config/threads}"}},
                    "rtf":{"type":"number","x-archivist":{"compute":"${time/real} / ${config/sim_time}"}},
                    "real":{"type":"number","x-archivist":{"source":"time/real","unit":"s"}},
                    "procs":{"type":"integer","x-archivist":{"source":"config/procs"}}}}"#,
            );
            let a = assemble(&ns, &s).unwrap();
            let b = assemble(&ns, &s).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(validate(&a.body, &s).is_ok());
            // selected scalars come verbatim from the namespace; unreferenced ones never appear
            prop_assert_eq!(a.body.get("procs").unwrap(), ns.get_rule("config").unwrap().get("procs").unwrap());
            prop_assert_eq!(a.body.get("real/value").unwrap(), ns.get_rule("time").unwrap().get("real").unwrap());
            let text = crate::exporter::to_compact_string(&a.body);
            prop_assert!(!text.contains("noise") && !text.contains("user"));
        }
    }
}
