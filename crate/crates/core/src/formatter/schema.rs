//! Structuring schemas: a JSON-Schema subset (`type`, `properties`,
//! `required`) whose leaves carry `x-archivist` directives.
//!
//! ```json
//! { "type": "object",
//!   "properties": {
//!     "virtual_processes": {
//!       "type": "number",
//!       "x-archivist": { "compute": "${config/procs} * ${config/threads}" } } } }
//! ```
//!
//! Other JSON Schema keywords (`title`, `description`, `$schema`, ...) are
//! accepted and ignored.

use std::fmt;

use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use super::expr::{ComputeExpr, PathExpr};
use crate::exporter::to_compact_string;
use crate::model::Value;

pub const DIRECTIVE_KEY: &str = "x-archivist";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JsonType {
    Object,
    Array,
    String,
    Number,
    Integer,
    Boolean,
}

impl JsonType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "object" => JsonType::Object,
            "array" => JsonType::Array,
            "string" => JsonType::String,
            "number" => JsonType::Number,
            "integer" => JsonType::Integer,
            "boolean" => JsonType::Boolean,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JsonType::Object => "object",
            JsonType::Array => "array",
            JsonType::String => "string",
            JsonType::Number => "number",
            JsonType::Integer => "integer",
            JsonType::Boolean => "boolean",
        }
    }

    /// JSON Schema semantics: an integral float satisfies `integer`.
    pub fn accepts(self, v: &Value) -> bool {
        match (self, v) {
            (JsonType::Object, Value::Map(_))
            | (JsonType::Array, Value::List(_))
            | (JsonType::String, Value::Text(_))
            | (JsonType::Boolean, Value::Boolean(_))
            | (JsonType::Number, Value::Integer(_) | Value::Float(_))
            | (JsonType::Integer, Value::Integer(_)) => true,
            (JsonType::Integer, Value::Float(f)) => f.fract() == 0.0,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Source(PathExpr),
    Compute(ComputeExpr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Directive {
    pub selection: Selection,
    pub unit: Option<String>,
    pub optional: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Object {
        properties: IndexMap<String, SchemaNode>,
        required: Vec<String>,
    },
    Leaf(Directive),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaNode {
    pub ty: Option<JsonType>,
    pub kind: NodeKind,
}

/// One schema violation, located by a JSON pointer into the schema document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaDiagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for SchemaDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = if self.path.is_empty() { "/" } else { &self.path };
        write!(f, "{path}: {}", self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid structuring schema: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct SchemaError(pub Vec<SchemaDiagnostic>);

#[derive(Debug, Clone, PartialEq)]
pub struct StructuringSchema {
    root: SchemaNode,
    id: String,
}

impl StructuringSchema {
    /// Parses a schema document, collecting every violation.
    pub fn from_value(doc: &Value) -> Result<Self, SchemaError> {
        let mut diags = Vec::new();
        let root = check_node(doc, "", &mut diags);
        if let Some(root) = &root {
            if !matches!(root.kind, NodeKind::Object { .. }) {
                diags.push(SchemaDiagnostic {
                    path: String::new(),
                    message: "root must be an object node with `properties`".into(),
                });
            }
        }
        match root {
            Some(root) if diags.is_empty() => Ok(Self {
                root,
                id: schema_hash(doc),
            }),
            _ => Err(SchemaError(diags)),
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, SchemaError> {
        let doc = crate::parsers::parse_json(bytes).map_err(|e| {
            SchemaError(vec![SchemaDiagnostic {
                path: String::new(),
                message: e.to_string(),
            }])
        })?;
        Self::from_value(&doc)
    }

    pub fn root(&self) -> &SchemaNode {
        &self.root
    }

    /// Lowercase hex SHA-256 of the schema's compact canonical JSON.
    pub fn id(&self) -> &str {
        &self.id
    }

    /// Every path expression the directives reference, with the schema
    /// location that references it.
    pub fn references(&self) -> Vec<(String, &PathExpr)> {
        fn walk<'a>(node: &'a SchemaNode, path: &str, out: &mut Vec<(String, &'a PathExpr)>) {
            match &node.kind {
                NodeKind::Object { properties, .. } => {
                    for (name, child) in properties {
                        walk(child, &format!("{path}/properties/{}", escape(name)), out);
                    }
                }
                NodeKind::Leaf(d) => {
                    let at = format!("{path}/{DIRECTIVE_KEY}");
                    match &d.selection {
                        Selection::Source(p) => out.push((at, p)),
                        Selection::Compute(c) => {
                            out.extend(c.references().into_iter().map(|p| (at.clone(), p)))
                        }
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, "", &mut out);
        out
    }
}

fn schema_hash(doc: &Value) -> String {
    hex::encode(Sha256::digest(to_compact_string(doc).as_bytes()))
}

/// JSON pointer token escaping.
pub(crate) fn escape(token: &str) -> String {
    token.replace('~', "~0").replace('/', "~1")
}

fn diag(diags: &mut Vec<SchemaDiagnostic>, path: &str, message: impl Into<String>) {
    diags.push(SchemaDiagnostic {
        path: path.to_string(),
        message: message.into(),
    });
}

fn check_node(doc: &Value, path: &str, diags: &mut Vec<SchemaDiagnostic>) -> Option<SchemaNode> {
    let Some(m) = doc.as_map() else {
        diag(diags, path, format!("schema node must be an object, got {}", doc.kind_name()));
        return None;
    };
    let ty = match m.get("type") {
        None => None,
        Some(Value::Text(t)) => match JsonType::parse(t) {
            Some(ty) => Some(ty),
            None => {
                diag(diags, &format!("{path}/type"), format!("unsupported type {t:?}"));
                None
            }
        },
        Some(other) => {
            diag(diags, &format!("{path}/type"), format!("`type` must be a string, got {}", other.kind_name()));
            None
        }
    };
    let properties = m.get("properties");
    let directive = m.get(DIRECTIVE_KEY);

    match (properties, directive) {
        (Some(_), Some(_)) => {
            diag(diags, path, format!("node has both `properties` and `{DIRECTIVE_KEY}`"));
            None
        }
        (None, None) => {
            diag(diags, path, format!("leaf node needs an `{DIRECTIVE_KEY}` directive"));
            None
        }
        (Some(props), None) => {
            if ty.is_some_and(|t| t != JsonType::Object) {
                diag(diags, &format!("{path}/type"), "a node with `properties` must have type object");
            }
            let props_path = format!("{path}/properties");
            let Some(props) = props.as_map() else {
                diag(diags, &props_path, "`properties` must be an object");
                return None;
            };
            let mut children = IndexMap::new();
            let mut ok = true;
            for (name, child) in props {
                match check_node(child, &format!("{props_path}/{}", escape(name)), diags) {
                    Some(node) => {
                        children.insert(name.clone(), node);
                    }
                    None => ok = false,
                }
            }
            let required = check_required(m.get("required"), props, path, diags)?;
            ok.then_some(SchemaNode {
                ty,
                kind: NodeKind::Object {
                    properties: children,
                    required,
                },
            })
        }
        (None, Some(d)) => {
            if m.contains_key("required") {
                diag(diags, &format!("{path}/required"), "`required` is only valid on object nodes");
            }
            let directive = check_directive(d, &format!("{path}/{DIRECTIVE_KEY}"), ty, diags)?;
            Some(SchemaNode {
                ty,
                kind: NodeKind::Leaf(directive),
            })
        }
    }
}

fn check_required(
    required: Option<&Value>,
    props: &crate::model::Map,
    path: &str,
    diags: &mut Vec<SchemaDiagnostic>,
) -> Option<Vec<String>> {
    let path = format!("{path}/required");
    let Some(required) = required else {
        return Some(Vec::new());
    };
    let Value::List(items) = required else {
        diag(diags, &path, "`required` must be an array of strings");
        return None;
    };
    let mut out = Vec::new();
    let before = diags.len();
    for (i, item) in items.iter().enumerate() {
        match item {
            Value::Text(name) if props.contains_key(name) => out.push(name.clone()),
            Value::Text(name) => diag(diags, &format!("{path}/{i}"), format!("required property {name:?} is not declared")),
            other => diag(diags, &format!("{path}/{i}"), format!("expected a string, got {}", other.kind_name())),
        }
    }
    (diags.len() == before).then_some(out)
}

fn check_directive(
    d: &Value,
    path: &str,
    ty: Option<JsonType>,
    diags: &mut Vec<SchemaDiagnostic>,
) -> Option<Directive> {
    let Some(m) = d.as_map() else {
        diag(diags, path, "directive must be an object");
        return None;
    };
    let before = diags.len();
    for key in m.keys() {
        if !matches!(key.as_str(), "source" | "compute" | "unit" | "optional") {
            diag(diags, &format!("{path}/{}", escape(key)), format!("unknown directive {key:?}"));
        }
    }
    let text = |key: &str, diags: &mut Vec<SchemaDiagnostic>| match m.get(key) {
        None => None,
        Some(Value::Text(s)) => Some(s.clone()),
        Some(other) => {
            diag(diags, &format!("{path}/{key}"), format!("`{key}` must be a string, got {}", other.kind_name()));
            None
        }
    };
    let source = text("source", diags);
    let compute = text("compute", diags);
    let unit = text("unit", diags);
    let optional = match m.get("optional") {
        None => false,
        Some(Value::Boolean(b)) => *b,
        Some(other) => {
            diag(diags, &format!("{path}/optional"), format!("`optional` must be a boolean, got {}", other.kind_name()));
            false
        }
    };

    let selection = match (source, compute) {
        (Some(_), Some(_)) => {
            diag(diags, path, "directive has both `source` and `compute`");
            None
        }
        (None, None) => {
            if !m.contains_key("source") && !m.contains_key("compute") {
                diag(diags, path, "directive needs one of `source` or `compute`");
            }
            None
        }
        (Some(src), None) => match PathExpr::parse(&src) {
            Ok(p) => Some(Selection::Source(p)),
            Err(e) => {
                diag(diags, &format!("{path}/source"), e.to_string());
                None
            }
        },
        (None, Some(expr)) => {
            if let Some(t) = ty.filter(|t| !matches!(t, JsonType::Number | JsonType::Integer)) {
                diag(diags, &format!("{path}/compute"), format!("compute yields a number but the field is declared {}", t.as_str()));
            }
            match ComputeExpr::parse(&expr) {
                Ok(c) => Some(Selection::Compute(c)),
                Err(e) => {
                    diag(diags, &format!("{path}/compute"), e.to_string());
                    None
                }
            }
        }
    };
    if diags.len() != before {
        return None;
    }
    Some(Directive {
        selection: selection?,
        unit,
        optional,
    })
}
